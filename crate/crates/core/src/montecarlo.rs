//! Seeded Monte Carlo counting with reproducible chunked streams.
//!
//! Samples are split into fixed-size chunks and every chunk draws from its
//! own ChaCha stream, so the hit count depends only on `(n, seed)` and not on
//! how chunks are scheduled across threads.

use std::f64::consts::PI;

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::exec;
use crate::hamiltonian::{ActionRect, FourierPolySymbol};

const CHUNK: usize = 1 << 15;

/// Proportion estimate with its binomial standard error.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Estimate {
    pub value: f64,
    pub std_error: f64,
    pub samples: usize,
}

pub fn stream(seed: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng
}

/// Counts hits of `trial` over `n` draws.
pub fn count_hits<F>(n: usize, seed: u64, trial: F) -> u64
where
    F: Fn(&mut ChaCha8Rng) -> bool + Sync + Send,
{
    let chunks = n.div_ceil(CHUNK);
    exec::map_range(chunks, |c| {
        let mut rng = stream(seed, c as u64);
        let len = CHUNK.min(n - c * CHUNK);
        (0..len).filter(|_| trial(&mut rng)).count() as u64
    })
    .into_iter()
    .sum()
}

/// Fraction estimate scaled by `volume`.
pub fn scaled_fraction(hits: u64, n: usize, volume: f64) -> Estimate {
    let p = hits as f64 / n.max(1) as f64;
    Estimate {
        value: volume * p,
        std_error: volume * (p * (1.0 - p) / n.max(1) as f64).sqrt(),
        samples: n,
    }
}

/// Area of `{I ∈ rect : pred(I)}` by uniform sampling.
pub fn area<F>(rect: &ActionRect, n: usize, seed: u64, pred: F) -> Estimate
where
    F: Fn([f64; 2]) -> bool + Sync + Send,
{
    let hits = count_hits(n, seed, |rng| {
        let p = [rng.gen_range(rect.lo[0]..rect.hi[0]), rng.gen_range(rect.lo[1]..rect.hi[1])];
        pred(p)
    });
    scaled_fraction(hits, n, rect.area())
}

/// Liouville volume of `{(θ, I) ∈ T² × box : a ≤ p(θ, I; t) ≤ b}`.
///
/// The box must contain the whole energy band for the estimate to be the
/// full phase-space measure of `p⁻¹([a, b])`.
pub fn phase_space_volume(symbol: &FourierPolySymbol, t: f64, band: [f64; 2], bbox: &ActionRect, n: usize, seed: u64) -> Estimate {
    if band[1] <= band[0] {
        return Estimate {
            value: 0.0,
            std_error: 0.0,
            samples: n,
        };
    }
    let hits = count_hits(n, seed, |rng| {
        let theta = [rng.gen_range(0.0..2.0 * PI), rng.gen_range(0.0..2.0 * PI)];
        let action = [rng.gen_range(bbox.lo[0]..bbox.hi[0]), rng.gen_range(bbox.lo[1]..bbox.hi[1])];
        let e = symbol.eval_complex(theta, action, t).re;
        e >= band[0] && e <= band[1]
    });
    scaled_fraction(hits, n, 4.0 * PI * PI * bbox.area())
}
