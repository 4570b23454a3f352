//! Planted-attribute synthetic datasets.
//!
//! Each image draws a latent style and a non-empty set of composition
//! bits. Its embedding is the style centroid plus one direction per active
//! composition bit plus isotropic noise. Its score distribution is a
//! discretized Gaussian whose mean is a fixed function of the latent
//! attributes, so aesthetics can only be predicted by recovering them.
//!
//! The planted mean enumerates attribute combinations in style-major
//! order, `low + gap * (rank(style) * 2^K_c + code(bits))`, which makes
//! every combination's mean distinct and at least `gap` apart. With
//! `interaction` set, each style permutes the codes within its block.

use rand::seq::SliceRandom;
use rand::Rng as _;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::distribution::{mean_matched_gaussian, BucketScale};
use super::{AttributeLabels, EmbeddingVector, ScoreDistribution};
use crate::error::{Error, Result};
use crate::rng::{self, Rng};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SyntheticConfig {
    pub n: usize,
    pub dim: usize,
    pub styles: usize,
    pub comps: usize,
    pub buckets: usize,
    pub seed: u64,
    /// Per-dimension std of the style centroids.
    pub style_spread: f64,
    /// Per-dimension std of the composition directions.
    pub comp_spread: f64,
    /// Per-dimension std of the embedding noise.
    pub noise: f64,
    /// Half-width of the uniform jitter on each image's mean, in units of
    /// the planted gap.
    pub mean_jitter: f64,
    /// Score-distribution std as a fraction of the score range.
    pub score_spread: f64,
    /// Sample stream. Streams share the planted model but draw disjoint
    /// images; stream `k > 0` prefixes ids with `syn{k}-`.
    pub stream: u64,
    /// Give every style its own ordering of composition codes, so the
    /// effect of a composition on the score depends on the style.
    #[serde(default)]
    pub interaction: bool,
}

impl SyntheticConfig {
    pub fn new(n: usize, dim: usize, styles: usize, comps: usize, buckets: usize, seed: u64) -> Self {
        SyntheticConfig {
            n,
            dim,
            styles,
            comps,
            buckets,
            seed,
            style_spread: 1.0,
            comp_spread: 0.6,
            noise: 1.0,
            mean_jitter: 0.2,
            score_spread: 0.12,
            stream: 0,
            interaction: false,
        }
    }
}

/// Ground truth behind a generated dataset.
#[derive(Clone, Debug, PartialEq)]
pub struct PlantedModel {
    pub scale: BucketScale,
    pub style_centers: Vec<Vec<f64>>,
    pub comp_dirs: Vec<Vec<f64>>,
    /// Position of each style in the score ordering.
    pub style_rank: Vec<usize>,
    /// Per style, the slot of each composition code within the style's block.
    pub comp_order: Vec<Vec<usize>>,
    pub low: f64,
    pub gap: f64,
    /// Absolute half-width of the per-image mean jitter.
    pub jitter: f64,
    comps: usize,
}

impl PlantedModel {
    /// Noise-free mean score for a latent attribute combination.
    pub fn planted_mean(&self, style: usize, comp: &[bool]) -> f64 {
        let code = comp
            .iter()
            .enumerate()
            .filter(|(_, &b)| b)
            .map(|(j, _)| 1usize << j)
            .sum::<usize>();
        let slot = self.style_rank[style] * (1usize << self.comps) + self.comp_order[style][code];
        self.low + self.gap * slot as f64
    }
}

#[derive(Clone, Debug)]
pub struct SyntheticData {
    pub embeddings: Vec<EmbeddingVector>,
    pub attributes: Vec<AttributeLabels>,
    pub distributions: Vec<ScoreDistribution>,
    pub planted: PlantedModel,
}

/// [`generate`] with default planting strengths.
pub fn gen_synthetic(
    n: usize,
    dim: usize,
    styles: usize,
    comps: usize,
    buckets: usize,
    seed: u64,
) -> Result<SyntheticData> {
    generate(&SyntheticConfig::new(n, dim, styles, comps, buckets, seed))
}

fn normal(rng: &mut Rng) -> f64 {
    StandardNormal.sample(rng)
}

fn gaussian_vec(rng: &mut Rng, dim: usize, std: f64) -> Vec<f64> {
    (0..dim).map(|_| std * normal(rng)).collect()
}

pub fn generate(cfg: &SyntheticConfig) -> Result<SyntheticData> {
    if cfg.dim < 2 || cfg.styles < 2 || cfg.comps < 2 || cfg.buckets < 2 {
        return Err(Error::Config(format!(
            "synthetic dims must all be >= 2 (dim={}, styles={}, comps={}, buckets={})",
            cfg.dim, cfg.styles, cfg.comps, cfg.buckets
        )));
    }
    if cfg.comps > 20 {
        return Err(Error::Config("at most 20 composition classes are supported".into()));
    }
    let scale = BucketScale::unit(cfg.buckets)?;
    let span = scale.max() - scale.min();

    let mut model_rng = rng::stream(cfg.seed, "synthetic-model");
    let style_centers = (0..cfg.styles)
        .map(|_| gaussian_vec(&mut model_rng, cfg.dim, cfg.style_spread))
        .collect();
    let comp_dirs = (0..cfg.comps)
        .map(|_| gaussian_vec(&mut model_rng, cfg.dim, cfg.comp_spread))
        .collect();
    let mut style_rank: Vec<usize> = (0..cfg.styles).collect();
    style_rank.shuffle(&mut model_rng);
    let comp_order = (0..cfg.styles)
        .map(|_| {
            let mut order: Vec<usize> = (0..1usize << cfg.comps).collect();
            if cfg.interaction {
                order.shuffle(&mut model_rng);
            }
            order
        })
        .collect();

    let slots = cfg.styles * (1usize << cfg.comps);
    let low = scale.min() + 0.15 * span;
    let gap = 0.7 * span / (slots - 1) as f64;
    let planted = PlantedModel {
        scale,
        style_centers,
        comp_dirs,
        style_rank,
        comp_order,
        low,
        gap,
        jitter: cfg.mean_jitter * gap,
        comps: cfg.comps,
    };

    let mut rng = rng::indexed_stream(cfg.seed, "synthetic-samples", cfg.stream);
    let prefix = if cfg.stream == 0 {
        "syn".to_string()
    } else {
        format!("syn{}-", cfg.stream)
    };
    let mut data = SyntheticData {
        embeddings: Vec::with_capacity(cfg.n),
        attributes: Vec::with_capacity(cfg.n),
        distributions: Vec::with_capacity(cfg.n),
        planted,
    };
    let p = &data.planted;
    for i in 0..cfg.n {
        let id = format!("{prefix}{i:06}");
        let style = rng.random_range(0..cfg.styles);
        let comp = loop {
            let bits: Vec<bool> = (0..cfg.comps).map(|_| rng.random_bool(0.5)).collect();
            if bits.iter().any(|&b| b) {
                break bits;
            }
        };

        let mut values = p.style_centers[style].clone();
        for (j, _) in comp.iter().enumerate().filter(|(_, &b)| b) {
            for (v, d) in values.iter_mut().zip(&p.comp_dirs[j]) {
                *v += d;
            }
        }
        for v in values.iter_mut() {
            let noisy = *v + cfg.noise * normal(&mut rng);
            // stored embeddings are f32
            *v = f64::from(noisy as f32);
        }

        let mean = p.planted_mean(style, &comp) + rng.random_range(-1.0..=1.0) * p.jitter;
        let sigma = cfg.score_spread * span * rng.random_range(0.75..1.25);
        let probs = mean_matched_gaussian(mean, sigma, &p.scale);

        data.embeddings.push(EmbeddingVector { id: id.clone(), values });
        data.attributes.push(AttributeLabels {
            id: id.clone(),
            style: Some(style),
            composition: Some(comp),
        });
        data.distributions.push(ScoreDistribution { id, probs });
    }
    Ok(data)
}
