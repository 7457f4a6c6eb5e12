//! Deterministic sampling: shifted Halton points for the checkers and
//! counter-based ChaCha streams for Wiener increments.

use rand_chacha::ChaCha8Rng;
use rand_core::{RngCore, SeedableRng};

use crate::error::{Error, Result};

const PRIMES: [u32; 48] = [
    2, 3, 5, 7, 11, 13, 17, 19, 23, 29, 31, 37, 41, 43, 47, 53, 59, 61, 67, 71, 73, 79, 83, 89, 97, 101, 103, 107, 109,
    113, 127, 131, 137, 139, 149, 151, 157, 163, 167, 173, 179, 181, 191, 193, 197, 199, 211, 223,
];

/// Largest point dimension [`Halton`] supports.
pub const MAX_HALTON_DIM: usize = PRIMES.len();

/// SplitMix64 finalizer, used to derive independent sub-seeds.
pub fn mix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

pub fn derive_seed(seed: u64, tag: u64) -> u64 {
    mix64(seed ^ mix64(tag))
}

/// Maps 64 random bits to the open interval (0, 1), in steps of 2^-52.
#[inline]
pub fn open_unit(bits: u64) -> f64 {
    ((bits >> 12) as f64 + 0.5) * (1.0 / (1u64 << 52) as f64)
}

/// Standard normal quantile `Φ⁻¹(u) = -√2 · erfc⁻¹(2u)`.
#[inline]
pub fn normal_quantile(u: f64) -> f64 {
    -std::f64::consts::SQRT_2 * statrs::function::erf::erfc_inv(2.0 * u)
}

fn radical_inverse(mut n: u64, base: u32) -> f64 {
    let b = base as u64;
    let inv = 1.0 / base as f64;
    let mut f = inv;
    let mut acc = 0.0;
    while n > 0 {
        acc += (n % b) as f64 * f;
        n /= b;
        f *= inv;
    }
    acc
}

/// Halton sequence with a seeded Cranley-Patterson rotation.
///
/// Point `k` does not depend on how many points are drawn, so a larger
/// budget always contains the smaller one as a prefix.
#[derive(Debug, Clone)]
pub struct Halton {
    shifts: Vec<f64>,
}

impl Halton {
    pub fn new(dim: usize, seed: u64) -> Result<Self> {
        if dim > MAX_HALTON_DIM {
            return Err(Error::usage(format!(
                "low-discrepancy sampler supports at most {MAX_HALTON_DIM} dimensions, {dim} requested"
            )));
        }
        let shifts = (0..dim as u64).map(|d| open_unit(derive_seed(seed, d))).collect();
        Ok(Halton { shifts })
    }

    pub fn dim(&self) -> usize {
        self.shifts.len()
    }

    /// Writes point `k` (in `[0, 1)^dim`) into `out`.
    pub fn point(&self, k: u64, out: &mut [f64]) {
        for (d, (o, s)) in out.iter_mut().zip(&self.shifts).enumerate() {
            let v = radical_inverse(k + 1, PRIMES[d]) + s;
            *o = if v >= 1.0 { v - 1.0 } else { v };
        }
    }
}

/// Counter-based stream: the `n`-th draw is a pure function of
/// `(seed, stream, n)`.
pub fn stream(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Standard normal draw from the next 64 bits of `rng`.
#[inline]
pub fn next_normal(rng: &mut ChaCha8Rng) -> f64 {
    normal_quantile(open_unit(rng.next_u64()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn halton_is_prefix_stable_and_in_unit_cube() {
        let h = Halton::new(5, 11).unwrap();
        let mut a = [0.0; 5];
        let mut b = [0.0; 5];
        for k in 0..2000 {
            h.point(k, &mut a);
            Halton::new(5, 11).unwrap().point(k, &mut b);
            assert_eq!(a, b);
            assert!(a.iter().all(|&v| (0.0..1.0).contains(&v)));
        }
    }

    #[test]
    fn halton_covers_the_interval() {
        let h = Halton::new(1, 3).unwrap();
        let mut bins = [0usize; 16];
        let mut p = [0.0];
        for k in 0..4096 {
            h.point(k, &mut p);
            bins[(p[0] * 16.0) as usize] += 1;
        }
        // base-2 radical inverse fills dyadic bins exactly
        assert!(bins.iter().all(|&c| c == 256), "{bins:?}");
    }

    #[test]
    fn too_many_dimensions() {
        assert!(Halton::new(MAX_HALTON_DIM + 1, 0).is_err());
    }

    #[test]
    fn quantile_known_values() {
        assert_eq!(normal_quantile(0.5), 0.0);
        assert!((normal_quantile(0.975) - 1.959_963_984_540_054).abs() < 1e-12);
        assert!((normal_quantile(0.001) + 3.090_232_306_167_813_5).abs() < 1e-11);
        let lo = normal_quantile(open_unit(0));
        let hi = normal_quantile(open_unit(u64::MAX));
        assert!(lo.is_finite() && hi.is_finite() && lo < -8.0 && hi > 8.0);
    }

    #[test]
    fn streams_are_reproducible_and_distinct() {
        let a: Vec<u64> = (0..8)
            .map({
                let mut r = stream(42, 3);
                move |_| r.next_u64()
            })
            .collect();
        let b: Vec<u64> = (0..8)
            .map({
                let mut r = stream(42, 3);
                move |_| r.next_u64()
            })
            .collect();
        let c: Vec<u64> = (0..8)
            .map({
                let mut r = stream(42, 4);
                move |_| r.next_u64()
            })
            .collect();
        assert_eq!(a, b);
        assert_ne!(a, c);
    }

    #[test]
    fn normal_draws_have_unit_variance() {
        let mut rng = stream(7, 0);
        let n = 200_000;
        let (mut s, mut s2) = (0.0, 0.0);
        for _ in 0..n {
            let z = next_normal(&mut rng);
            s += z;
            s2 += z * z;
        }
        let mean = s / n as f64;
        let var = s2 / n as f64 - mean * mean;
        assert!(mean.abs() < 0.01, "mean {mean}");
        assert!((var - 1.0).abs() < 0.01, "var {var}");
    }
}
