//! End-to-end synthetic runs: stage-1 attribute training followed by
//! stage-2 training of each aesthetic variant on the same data.

use std::collections::BTreeMap;

use aesthyper::attribute::{train_attribute_net, AttrTrainConfig, AttrTrainData, CompositionSet, StyleSet};
use aesthyper::data::synthetic::{generate, SyntheticConfig, SyntheticData};
use aesthyper::data::{BucketScale, EmbeddingVector};
use aesthyper::hyper::{
    build_variant, export_generated_weights, train_hyper, AestheticNetSpec, AestheticSet, HyperTrainConfig, VariantKind,
};
use aesthyper::metrics;
use aesthyper::nn::{AdamConfig, StepDecay, Tensor};

use super::oracles::group_distance_ratio;

#[derive(Clone, Debug)]
pub struct Setup {
    pub dim: usize,
    pub styles: usize,
    pub comps: usize,
    pub buckets: usize,
    /// Images with scores and attributes: train, val, test.
    pub split: [usize; 3],
    /// Extra attribute-labelled images without scores, drawn from a
    /// second stream of the same planted model.
    pub attribute_only: usize,
    pub style_spread: f64,
    pub comp_spread: f64,
    pub noise: f64,
    pub mean_jitter: f64,
    pub interaction: bool,
    pub attr_width: usize,
    pub attr_epochs: usize,
    pub hidden: Vec<usize>,
    pub reduced_dim: usize,
    pub epochs: usize,
    pub lr: f64,
}

impl Default for Setup {
    fn default() -> Self {
        let dim = 128;
        // Spreads are per dimension; this keeps centroid distances at D=32 scale.
        let k = (32.0 / dim as f64).sqrt();
        Setup {
            dim,
            styles: 5,
            comps: 3,
            buckets: 5,
            split: [1200, 400, 400],
            attribute_only: 12000,
            style_spread: 2.0 * k,
            comp_spread: 0.5 * k,
            noise: 2.5,
            mean_jitter: 2.0,
            interaction: true,
            attr_width: 64,
            attr_epochs: 30,
            hidden: vec![16, 8],
            reduced_dim: 8,
            epochs: 200,
            lr: 1e-3,
        }
    }
}

#[derive(Clone, Debug)]
pub struct VariantResult {
    pub test_srocc: f64,
    pub best_epoch: usize,
}

#[derive(Clone, Debug)]
pub struct RunResult {
    pub seed: u64,
    pub variants: BTreeMap<&'static str, VariantResult>,
    /// Between/within style distance ratio of the exported last-layer
    /// generated weights of the full model on the test images.
    pub weight_ratio: f64,
}

fn synthetic(setup: &Setup, n: usize, stream: u64, seed: u64) -> SyntheticData {
    let mut cfg = SyntheticConfig::new(n, setup.dim, setup.styles, setup.comps, setup.buckets, seed);
    cfg.style_spread = setup.style_spread;
    cfg.comp_spread = setup.comp_spread;
    cfg.noise = setup.noise;
    cfg.mean_jitter = setup.mean_jitter;
    cfg.interaction = setup.interaction;
    cfg.stream = stream;
    generate(&cfg).unwrap()
}

fn attribute_sets(d: &SyntheticData, range: std::ops::Range<usize>) -> (StyleSet, CompositionSet) {
    let mut s = StyleSet::default();
    let mut c = CompositionSet::default();
    for i in range {
        let e = d.embeddings[i].values.clone();
        s.push(e.clone(), d.attributes[i].style.unwrap());
        c.push(e, d.attributes[i].composition.clone().unwrap());
    }
    (s, c)
}

fn aesthetic_set(d: &SyntheticData, range: std::ops::Range<usize>) -> AestheticSet {
    let mut a = AestheticSet::default();
    for i in range {
        a.push(
            d.embeddings[i].id.clone(),
            d.embeddings[i].values.clone(),
            d.distributions[i].probs.clone(),
        );
    }
    a
}

pub fn run(setup: &Setup, seed: u64, kinds: &[VariantKind], scratch: &std::path::Path) -> RunResult {
    let [n_tr, n_va, n_te] = setup.split;
    let data = synthetic(setup, n_tr + n_va + n_te, 0, seed);
    let extra = synthetic(setup, setup.attribute_only, 1, seed);

    let (mut style_train, mut comp_train) = attribute_sets(&data, 0..n_tr);
    let (es, ec) = attribute_sets(&extra, 0..setup.attribute_only);
    style_train.features.extend(es.features);
    style_train.labels.extend(es.labels);
    comp_train.features.extend(ec.features);
    comp_train.labels.extend(ec.labels);
    let (style_val, comp_val) = attribute_sets(&data, n_tr..n_tr + n_va);
    let attr_data = AttrTrainData {
        styles: setup.styles,
        comps: setup.comps,
        style_train,
        comp_train,
        style_val,
        comp_val,
    };
    let attr_cfg = AttrTrainConfig {
        width: setup.attr_width,
        epochs: setup.attr_epochs,
        adam: AdamConfig {
            lr: 1e-3,
            ..AdamConfig::default()
        },
        decay: StepDecay::none(),
        dropout: 0.0,
        seed,
        ..AttrTrainConfig::default()
    };
    let attr = train_attribute_net(&attr_data, &attr_cfg).unwrap().params;

    let train = aesthetic_set(&data, 0..n_tr);
    let val = aesthetic_set(&data, n_tr..n_tr + n_va);
    let test = aesthetic_set(&data, n_tr + n_va..n_tr + n_va + n_te);
    let test_styles: Vec<usize> = (n_tr + n_va..n_tr + n_va + n_te)
        .map(|i| data.attributes[i].style.unwrap())
        .collect();

    let mut dims = vec![setup.dim];
    dims.extend(&setup.hidden);
    dims.push(setup.buckets);
    let spec = AestheticNetSpec::new(dims).unwrap();
    let scale = BucketScale::unit(setup.buckets).unwrap();
    let hyper_cfg = HyperTrainConfig {
        epochs: setup.epochs,
        adam: AdamConfig {
            lr: setup.lr,
            ..AdamConfig::default()
        },
        decay: StepDecay::none(),
        seed,
        ..HyperTrainConfig::default()
    };

    let mut variants = BTreeMap::new();
    let mut weight_ratio = f64::NAN;
    for &kind in kinds {
        let model = build_variant(kind, &spec, Some(attr.clone()), setup.reduced_dim, seed).unwrap();
        let out = train_hyper(model, &train, &val, &scale, &hyper_cfg).unwrap();
        let pred = out
            .model
            .predict(&Tensor::from_rows(&test.embeddings).unwrap())
            .unwrap();
        let rows: Vec<Vec<f64>> = (0..pred.rows()).map(|i| pred.row(i).to_vec()).collect();
        let report = metrics::evaluate(&rows, &test.targets, &scale, scale.default_threshold()).unwrap();
        if kind == VariantKind::Full {
            let embeddings: Vec<EmbeddingVector> = test
                .ids
                .iter()
                .zip(&test.embeddings)
                .map(|(id, v)| EmbeddingVector {
                    id: id.clone(),
                    values: v.clone(),
                })
                .collect();
            let path = scratch.join(format!("weights_{seed}.csv"));
            export_generated_weights(&out.model, &embeddings, spec.layers(), &path).unwrap();
            let exported = read_weights(&path);
            weight_ratio = group_distance_ratio(&exported, &test_styles);
        }
        variants.insert(
            kind.name(),
            VariantResult {
                test_srocc: report.srocc,
                best_epoch: out.best_epoch,
            },
        );
    }
    RunResult {
        seed,
        variants,
        weight_ratio,
    }
}

/// Rows of an exported `id,w0,..` weight file.
pub fn read_weights(path: &std::path::Path) -> Vec<Vec<f64>> {
    let mut r = csv::Reader::from_path(path).unwrap();
    let header = r.headers().unwrap().clone();
    assert_eq!(&header[0], "id");
    r.records()
        .map(|rec| rec.unwrap().iter().skip(1).map(|v| v.parse().unwrap()).collect())
        .collect()
}
