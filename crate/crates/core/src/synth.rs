//! Reproducible synthetic data.
//!
//! Every draw is keyed by `(seed, row, column)` through ChaCha8 streams: row
//! `r` reads stream `r`, and column `c` starts at word `4c`. Any submatrix can
//! be regenerated on its own and a wider design shares its leading columns
//! with a narrower one.

use alloc::vec::Vec;

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::design::Design;
use crate::error::{Error, Result};
use crate::glm::GlmFamily;
use crate::linalg::DenseMatrix;
use crate::math;

const DESIGN_SALT: u64 = 0x9e37_79b9_7f4a_7c15;
const THETA_SALT: u64 = 0xd1b5_4a32_d192_ed03;
const RESPONSE_SALT: u64 = 0x8cb9_2ba7_2f3d_8dd7;

/// Default noise level for linear responses.
pub const DEFAULT_NOISE_SIGMA: f64 = 1.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ThetaMode {
    /// Nonzero entries all equal to one.
    Unit,
    /// Nonzero entries drawn from N(0, 1).
    Gaussian,
}

/// Uniform on (0, 1] from 53 random bits.
#[inline]
fn open_unit(rng: &mut ChaCha8Rng) -> f64 {
    ((rng.next_u64() >> 11) + 1) as f64 * (1.0 / (1u64 << 53) as f64)
}

/// One standard normal from exactly two 64-bit draws (Box–Muller, cosine
/// branch).
#[inline]
fn normal(rng: &mut ChaCha8Rng) -> f64 {
    let u1 = open_unit(rng);
    let u2 = open_unit(rng);
    math::sqrt(-2.0 * math::ln(u1)) * math::cos(core::f64::consts::TAU * u2)
}

fn row_stream(seed: u64, salt: u64, row: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ salt);
    rng.set_stream(row as u64);
    rng
}

/// Standard-normal entry `(row, col)` of the design keyed by `seed`.
pub fn design_entry(seed: u64, row: usize, col: usize) -> f64 {
    let mut rng = row_stream(seed, DESIGN_SALT, row);
    rng.set_word_pos(4 * col as u128);
    normal(&mut rng)
}

/// `n × d` matrix of i.i.d. N(0, 1) entries.
pub fn gen_design(n: usize, d: usize, seed: u64) -> Design {
    let mut m = DenseMatrix::zeros(n, d);
    for r in 0..n {
        let mut rng = row_stream(seed, DESIGN_SALT, r);
        for c in 0..d {
            m.set(r, c, normal(&mut rng));
        }
    }
    Design::Dense(m)
}

/// The first `deff` entries are nonzero, the rest zero.
pub fn gen_theta_star(d: usize, deff: usize, mode: ThetaMode, seed: u64) -> Vec<f64> {
    let deff = deff.min(d);
    let mut theta = alloc::vec![0.0; d];
    match mode {
        ThetaMode::Unit => theta[..deff].iter_mut().for_each(|t| *t = 1.0),
        ThetaMode::Gaussian => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed ^ THETA_SALT);
            for t in theta[..deff].iter_mut() {
                let mut v = normal(&mut rng);
                while v == 0.0 {
                    v = normal(&mut rng);
                }
                *t = v;
            }
        }
    }
    theta
}

/// Linear: `y = Xθ* + σε`. Logistic: `y = +1` with probability `σ(x_nᵀθ*)`.
pub fn gen_responses(x: &Design, theta_star: &[f64], family: GlmFamily, noise_sigma: f64, seed: u64) -> Result<Vec<f64>> {
    if theta_star.len() != x.ncols() {
        return Err(Error::DimensionMismatch { expected: x.ncols(), got: theta_star.len() });
    }
    if !(noise_sigma >= 0.0) {
        return Err(Error::invalid("noise_sigma must be nonnegative"));
    }
    let z = x.mul_vec(theta_star);
    let y = z
        .iter()
        .enumerate()
        .map(|(r, &zr)| {
            let mut rng = row_stream(seed, RESPONSE_SALT, r);
            match family {
                GlmFamily::Linear => {
                    if noise_sigma == 0.0 {
                        zr
                    } else {
                        zr + noise_sigma * normal(&mut rng)
                    }
                }
                GlmFamily::Logistic => {
                    let u: f64 = rng.random();
                    if u < math::sigmoid(zr) {
                        1.0
                    } else {
                        -1.0
                    }
                }
            }
        })
        .collect();
    Ok(y)
}
