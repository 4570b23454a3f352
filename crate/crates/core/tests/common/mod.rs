//! Helpers shared by the integration test targets.

#![allow(dead_code)]

pub mod experiment;
pub mod gradcheck;
pub mod oracles;
pub mod pipeline;

use aesthyper::rng::{self, Rng};
use rand::Rng as _;

pub fn rng(tag: &str) -> Rng {
    rng::stream(2024, tag)
}

pub fn uniform(r: &mut Rng, n: usize, lo: f64, hi: f64) -> Vec<f64> {
    (0..n).map(|_| r.random_range(lo..hi)).collect()
}

/// Random point on the probability simplex with strictly positive mass.
pub fn random_distribution(r: &mut Rng, b: usize) -> Vec<f64> {
    let w: Vec<f64> = (0..b).map(|_| r.random_range(0.05..1.0)).collect();
    let s: f64 = w.iter().sum();
    w.into_iter().map(|v| v / s).collect()
}

pub fn median(xs: &[f64]) -> f64 {
    let mut v = xs.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}
