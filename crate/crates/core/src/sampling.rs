//! Deterministic low-discrepancy sampling of axis-aligned boxes.

use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};
use serde::{Deserialize, Serialize};

/// Axis-aligned box in state space.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StateBox {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

impl StateBox {
    pub fn new(lower: Vec<f64>, upper: Vec<f64>) -> Self {
        assert_eq!(lower.len(), upper.len(), "box bounds differ in dimension");
        StateBox { lower, upper }
    }

    pub fn cube(dim: usize, lo: f64, hi: f64) -> Self {
        StateBox::new(vec![lo; dim], vec![hi; dim])
    }

    pub fn dim(&self) -> usize {
        self.lower.len()
    }

    pub fn center(&self) -> Vec<f64> {
        self.lower
            .iter()
            .zip(&self.upper)
            .map(|(a, b)| 0.5 * (a + b))
            .collect()
    }

    pub fn contains(&self, x: &[f64]) -> bool {
        x.iter()
            .zip(self.lower.iter().zip(&self.upper))
            .all(|(v, (a, b))| *v >= *a && *v <= *b)
    }

    pub fn is_bounded(&self) -> bool {
        self.lower
            .iter()
            .zip(&self.upper)
            .all(|(a, b)| a.is_finite() && b.is_finite() && a <= b)
    }
}

fn first_primes(count: usize) -> Vec<u64> {
    let mut primes = Vec::with_capacity(count);
    let mut candidate = 2u64;
    while primes.len() < count {
        if primes.iter().take_while(|p| *p * *p <= candidate).all(|p| candidate % p != 0) {
            primes.push(candidate);
        }
        candidate += 1;
    }
    primes
}

fn radical_inverse(mut index: u64, base: u64) -> f64 {
    let inv = 1.0 / base as f64;
    let mut scale = inv;
    let mut out = 0.0;
    while index > 0 {
        out += (index % base) as f64 * scale;
        index /= base;
        scale *= inv;
    }
    out
}

/// Halton points in a box. The first point is the box center; the rest
/// follow the Halton sequence, rotated modulo one by a seed-derived shift
/// when `seed` is nonzero.
pub fn halton_points(region: &StateBox, count: usize, seed: u64) -> Vec<Vec<f64>> {
    let dim = region.dim();
    let primes = first_primes(dim);
    let shift: Vec<f64> = if seed == 0 {
        vec![0.0; dim]
    } else {
        let mut rng = StdRng::seed_from_u64(seed);
        (0..dim).map(|_| rng.random::<f64>()).collect()
    };
    let mut out = Vec::with_capacity(count);
    if count > 0 {
        out.push(region.center());
    }
    for k in 1..count as u64 {
        let point = (0..dim)
            .map(|j| {
                let u = (radical_inverse(k, primes[j]) + shift[j]).fract();
                region.lower[j] + u * (region.upper[j] - region.lower[j])
            })
            .collect();
        out.push(point);
    }
    out
}
