//! The multi-task attribute network: a shared ReLU trunk producing the
//! attribute embedding `e_s`, a style head (mutually exclusive classes,
//! cross-entropy) and a composition head (multi-label, binary
//! cross-entropy), plus its training loop and checkpoint format.

use std::io::Write;
use std::path::Path;

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::data::formats::ByteReader;
use crate::data::sampler::{shuffled_batches, BalancedBatches, Task};
use crate::error::{Error, Result};
use crate::nn::{
    self, kernels, push_linear, Adam, AdamConfig, Graph, Linear, LinearVars, ParamSet, StepDecay, Tensor, Var,
};
use crate::rng;

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"ATTR";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq)]
pub struct AttributeNetParams {
    pub trunk: Linear,
    pub style_head: Linear,
    pub comp_head: Linear,
}

impl AttributeNetParams {
    pub fn init(dim: usize, width: usize, styles: usize, comps: usize, seed: u64) -> Self {
        let mut r = rng::stream(seed, "attribute-init");
        AttributeNetParams {
            trunk: Linear::init(dim, width, &mut r),
            style_head: Linear::init(width, styles, &mut r),
            comp_head: Linear::init(width, comps, &mut r),
        }
    }

    pub fn zeros(dim: usize, width: usize, styles: usize, comps: usize) -> Self {
        AttributeNetParams {
            trunk: Linear::zeros(dim, width),
            style_head: Linear::zeros(width, styles),
            comp_head: Linear::zeros(width, comps),
        }
    }

    pub fn input_dim(&self) -> usize {
        self.trunk.n_in()
    }

    /// Width `E` of the shared embedding.
    pub fn width(&self) -> usize {
        self.trunk.n_out()
    }

    pub fn styles(&self) -> usize {
        self.style_head.n_out()
    }

    pub fn comps(&self) -> usize {
        self.comp_head.n_out()
    }

    pub fn bind<'a>(&'a self, g: &mut Graph<'a>, trainable: bool) -> AttrVars {
        AttrVars {
            trunk: self.trunk.bind(g, trainable),
            style: self.style_head.bind(g, trainable),
            comp: self.comp_head.bind(g, trainable),
        }
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut buf = Vec::new();
        buf.extend_from_slice(CHECKPOINT_MAGIC);
        buf.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
        self.encode(&mut buf);
        std::fs::File::create(path)
            .and_then(|mut f| f.write_all(&buf))
            .map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        let mut r = ByteReader::new(&bytes, path);
        if r.take(4)? != CHECKPOINT_MAGIC {
            return Err(r.error("bad magic, expected ATTR"));
        }
        let v = r.u32()?;
        if v != CHECKPOINT_VERSION {
            return Err(r.error(&format!("unsupported checkpoint version {v}")));
        }
        let p = Self::decode(&mut r)?;
        if !r.is_done() {
            return Err(r.error("trailing bytes"));
        }
        Ok(p)
    }

    /// Dims as u32 (`D, E, K_v, K_c`) followed by the f32 parameter blobs.
    pub(crate) fn encode(&self, buf: &mut Vec<u8>) {
        for d in [self.input_dim(), self.width(), self.styles(), self.comps()] {
            buf.extend_from_slice(&(d as u32).to_le_bytes());
        }
        for (_, t) in self.named_params() {
            write_f32s(buf, t);
        }
    }

    pub(crate) fn decode(r: &mut ByteReader<'_>) -> Result<Self> {
        let dims: Vec<usize> = (0..4).map(|_| r.u32().map(|d| d as usize)).collect::<Result<_>>()?;
        if dims.contains(&0) {
            return Err(r.error("zero dimension in header"));
        }
        let mut p = AttributeNetParams::zeros(dims[0], dims[1], dims[2], dims[3]);
        read_params(r, &mut p)?;
        Ok(p)
    }
}

pub(crate) fn read_params<P: ParamSet>(r: &mut ByteReader<'_>, p: &mut P) -> Result<()> {
    for t in p.params_mut() {
        let vals = r.f32s(t.numel())?;
        t.data_mut().copy_from_slice(&vals);
    }
    Ok(())
}

pub(crate) fn write_f32s(buf: &mut Vec<u8>, t: &Tensor) {
    for v in t.data() {
        buf.extend_from_slice(&(*v as f32).to_le_bytes());
    }
}

impl ParamSet for AttributeNetParams {
    fn named_params(&self) -> Vec<(String, &Tensor)> {
        let mut out = Vec::with_capacity(6);
        push_linear(&mut out, "trunk", &self.trunk);
        push_linear(&mut out, "style_head", &self.style_head);
        push_linear(&mut out, "comp_head", &self.comp_head);
        out
    }

    fn params_mut(&mut self) -> Vec<&mut Tensor> {
        vec![
            &mut self.trunk.weight,
            &mut self.trunk.bias,
            &mut self.style_head.weight,
            &mut self.style_head.bias,
            &mut self.comp_head.weight,
            &mut self.comp_head.bias,
        ]
    }
}

#[derive(Clone, Copy, Debug)]
pub struct AttrVars {
    pub trunk: LinearVars,
    pub style: LinearVars,
    pub comp: LinearVars,
}

impl AttrVars {
    /// `trunk -> ReLU -> e_s`, with an optional dropout mask on `e_s` before
    /// the heads.
    pub fn embed(&self, g: &mut Graph<'_>, x: Var) -> Result<Var> {
        let h = self.trunk.forward(g, x)?;
        Ok(g.relu(h))
    }

    pub fn all(&self) -> Vec<Var> {
        [self.trunk.vars(), self.style.vars(), self.comp.vars()].concat()
    }
}

/// Detached forward results for a batch `[N, ..]` (or a single vector).
#[derive(Clone, Debug, PartialEq)]
pub struct AttrOutput {
    pub embedding: Tensor,
    pub style_logits: Tensor,
    pub comp_logits: Tensor,
}

/// Runs the attribute network on `e_b` (`[D]` or `[N, D]`).
pub fn attr_forward(e_b: &Tensor, p: &AttributeNetParams) -> Result<AttrOutput> {
    let mut g = Graph::new();
    let vars = p.bind(&mut g, false);
    let x = g.constant(e_b);
    let es = vars.embed(&mut g, x)?;
    let style = vars.style.forward(&mut g, es)?;
    let comp = vars.comp.forward(&mut g, es)?;
    Ok(AttrOutput {
        embedding: g.value(es).clone(),
        style_logits: g.value(style).clone(),
        comp_logits: g.value(comp).clone(),
    })
}

/// Task weights of the combined objective `a_v L_v + a_c L_c`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MtlWeights {
    pub style: f64,
    pub composition: f64,
}

impl Default for MtlWeights {
    fn default() -> Self {
        MtlWeights {
            style: 1.0,
            composition: 10.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum AttrTarget {
    Style(usize),
    Composition(Vec<bool>),
}

/// Inputs `[N, D]` with one task-tagged target per row.
#[derive(Clone, Debug)]
pub struct AttrBatch {
    pub inputs: Tensor,
    pub targets: Vec<AttrTarget>,
}

fn mtl_graph<'a>(
    g: &mut Graph<'a>,
    vars: &AttrVars,
    batch: &'a AttrBatch,
    w: MtlWeights,
    dropout_mask: Option<Vec<f64>>,
) -> Result<Var> {
    let mut style_rows = Vec::new();
    let mut style_targets = Vec::new();
    let mut comp_rows = Vec::new();
    let mut comp_targets = Vec::new();
    for (i, t) in batch.targets.iter().enumerate() {
        match t {
            AttrTarget::Style(c) => {
                style_rows.push(i);
                style_targets.push(*c);
            }
            AttrTarget::Composition(bits) => {
                comp_rows.push(i);
                comp_targets.extend(bits.iter().map(|&b| if b { 1.0 } else { 0.0 }));
            }
        }
    }
    if style_rows.is_empty() && comp_rows.is_empty() {
        return Err(Error::Invalid("batch has no style or composition samples".into()));
    }
    if batch.targets.len() != batch.inputs.rows() {
        return Err(Error::Shape {
            op: "mtl_loss",
            left: batch.inputs.shape().to_vec(),
            right: vec![batch.targets.len()],
        });
    }

    let x = g.constant(&batch.inputs);
    let mut es = vars.embed(g, x)?;
    if let Some(mask) = dropout_mask {
        es = g.mul_const(es, mask)?;
    }
    let mut terms = Vec::new();
    if !style_rows.is_empty() {
        let rows = g.gather_rows(es, &style_rows)?;
        let logits = vars.style.forward(g, rows)?;
        let ce = g.cross_entropy(logits, &style_targets)?;
        terms.push(g.scale(ce, w.style));
    }
    if !comp_rows.is_empty() {
        let rows = g.gather_rows(es, &comp_rows)?;
        let logits = vars.comp.forward(g, rows)?;
        let bce = g.binary_cross_entropy(logits, &comp_targets)?;
        terms.push(g.scale(bce, w.composition));
    }
    match terms[..] {
        [t] => Ok(t),
        [a, b] => g.add(a, b),
        _ => unreachable!(),
    }
}

/// `a_v * mean CE(style rows) + a_c * mean BCE(composition rows)`; a task
/// absent from the batch contributes 0.
pub fn mtl_loss(batch: &AttrBatch, p: &AttributeNetParams, w: MtlWeights) -> Result<f64> {
    mtl_loss_and_grads(batch, p, w).map(|(l, _)| l)
}

/// Loss together with its gradient for every parameter, in
/// [`ParamSet::named_params`] order.
pub fn mtl_loss_and_grads(batch: &AttrBatch, p: &AttributeNetParams, w: MtlWeights) -> Result<(f64, Vec<Tensor>)> {
    nn::loss_and_grads(|g| {
        let vars = p.bind(g, true);
        let loss = mtl_graph(g, &vars, batch, w, None)?;
        Ok((loss, vars.all()))
    })
}

/// A labeled feature set for one task.
#[derive(Clone, Debug, Default)]
pub struct LabeledSet<L> {
    pub features: Vec<Vec<f64>>,
    pub labels: Vec<L>,
}

pub type StyleSet = LabeledSet<usize>;
pub type CompositionSet = LabeledSet<Vec<bool>>;

impl<L> LabeledSet<L> {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn push(&mut self, features: Vec<f64>, label: L) {
        self.features.push(features);
        self.labels.push(label);
    }
}

#[derive(Clone, Debug)]
pub struct AttrTrainData {
    /// Number of style classes `K_v`.
    pub styles: usize,
    /// Number of composition classes `K_c`.
    pub comps: usize,
    pub style_train: StyleSet,
    pub comp_train: CompositionSet,
    pub style_val: StyleSet,
    pub comp_val: CompositionSet,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AttrTrainConfig {
    pub width: usize,
    pub epochs: usize,
    pub batch_size: usize,
    pub adam: AdamConfig,
    pub decay: StepDecay,
    pub weights: MtlWeights,
    /// Dropout rate on `e_s` during training; 0 disables it.
    pub dropout: f64,
    pub comp_threshold: f64,
    pub seed: u64,
}

impl Default for AttrTrainConfig {
    fn default() -> Self {
        AttrTrainConfig {
            width: 512,
            epochs: 60,
            batch_size: 32,
            adam: AdamConfig {
                lr: 1e-4,
                ..AdamConfig::default()
            },
            decay: StepDecay { every: 20, factor: 0.1 },
            weights: MtlWeights::default(),
            dropout: 0.25,
            comp_threshold: 0.5,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct AttrEpochRecord {
    pub epoch: usize,
    pub loss: f64,
    pub style_acc: Option<f64>,
    pub comp_acc: Option<f64>,
    pub val_metric: f64,
}

#[derive(Clone, Debug)]
pub struct AttrTrainOutcome {
    pub params: AttributeNetParams,
    pub history: Vec<AttrEpochRecord>,
    /// 1-based epoch of the returned checkpoint; 0 when no training ran.
    pub best_epoch: usize,
}

/// Stage-1 training. The returned parameters are those of the epoch with
/// the highest validation selection metric (mean of the available style
/// top-1 and composition at-least-one accuracies; earlier epoch on ties).
/// With no validation samples at all, selection uses the training sets.
pub fn train_attribute_net(data: &AttrTrainData, cfg: &AttrTrainConfig) -> Result<AttrTrainOutcome> {
    let dim = data
        .style_train
        .features
        .first()
        .or(data.comp_train.features.first())
        .map(Vec::len)
        .ok_or_else(|| Error::Invalid("attribute training needs at least one labeled sample".into()))?;
    let (styles, comps) = (data.styles, data.comps);
    if styles < 2 || comps == 0 {
        return Err(Error::Config(format!(
            "need at least 2 style classes and 1 composition class, got {styles} and {comps}"
        )));
    }
    validate_sets(data, dim, styles, comps)?;
    if !(0.0..1.0).contains(&cfg.dropout) {
        return Err(Error::Config(format!("dropout must be in [0, 1), got {}", cfg.dropout)));
    }

    let mut params = AttributeNetParams::init(dim, cfg.width, styles, comps, cfg.seed);
    if cfg.epochs == 0 {
        return Ok(AttrTrainOutcome {
            params,
            history: Vec::new(),
            best_epoch: 0,
        });
    }

    let tensors: Vec<&Tensor> = params.named_params().into_iter().map(|(_, t)| t).collect();
    let mut opt = Adam::new(cfg.adam, cfg.decay, &tensors)?;
    let both = !data.style_train.is_empty() && !data.comp_train.is_empty();
    let mut balanced = if both {
        Some(BalancedBatches::new(
            data.style_train.len(),
            data.comp_train.len(),
            cfg.batch_size,
            cfg.seed,
        )?)
    } else {
        None
    };
    let mut batch_rng = rng::stream(cfg.seed, "attribute-batches");
    let mut drop_rng = rng::stream(cfg.seed, "attribute-dropout");

    let (sel_style, sel_comp) = if data.style_val.is_empty() && data.comp_val.is_empty() {
        (&data.style_train, &data.comp_train)
    } else {
        (&data.style_val, &data.comp_val)
    };

    let mut history = Vec::with_capacity(cfg.epochs);
    let mut best: Option<(f64, usize, AttributeNetParams)> = None;
    for epoch in 0..cfg.epochs {
        opt.apply_decay(epoch);
        let batches: Vec<Vec<(Task, usize)>> = match balanced.as_mut() {
            Some(b) => b
                .next_epoch()
                .into_iter()
                .map(|batch| batch.into_iter().map(|s| (s.task, s.index)).collect())
                .collect(),
            None => {
                let (task, n) = if data.style_train.is_empty() {
                    (Task::Composition, data.comp_train.len())
                } else {
                    (Task::Style, data.style_train.len())
                };
                shuffled_batches(n, cfg.batch_size, &mut batch_rng)
                    .into_iter()
                    .map(|b| b.into_iter().map(|i| (task, i)).collect())
                    .collect()
            }
        };

        let mut loss_sum = 0.0;
        for (step, samples) in batches.iter().enumerate() {
            let batch = assemble_batch(data, samples)?;
            let mask = (cfg.dropout > 0.0).then(|| {
                let keep = 1.0 - cfg.dropout;
                (0..batch.inputs.rows() * cfg.width)
                    .map(|_| if drop_rng.random_bool(keep) { 1.0 / keep } else { 0.0 })
                    .collect::<Vec<f64>>()
            });
            let (loss, grads) = nn::loss_and_grads(|g| {
                let vars = params.bind(g, true);
                let loss = mtl_graph(g, &vars, &batch, cfg.weights, mask)?;
                Ok((loss, vars.all()))
            })?;
            if !loss.is_finite() {
                return Err(Error::NonFiniteLoss {
                    epoch: epoch + 1,
                    step: step + 1,
                });
            }
            nn::apply_grads(&mut params, &mut opt, &grads)?;
            loss_sum += loss;
        }

        let style_acc = (!sel_style.is_empty()).then(|| style_accuracy_on(&params, sel_style));
        let comp_acc = (!sel_comp.is_empty()).then(|| composition_accuracy_on(&params, sel_comp, cfg.comp_threshold));
        let accs: Vec<f64> = style_acc.iter().chain(comp_acc.iter()).copied().collect();
        let val_metric = accs.iter().sum::<f64>() / accs.len().max(1) as f64;
        let record = AttrEpochRecord {
            epoch: epoch + 1,
            loss: loss_sum / batches.len().max(1) as f64,
            style_acc,
            comp_acc,
            val_metric,
        };
        log::info!(
            "attributes epoch {}: loss {:.4} style {:?} comp {:?} val {:.4}",
            record.epoch,
            record.loss,
            record.style_acc,
            record.comp_acc,
            record.val_metric
        );
        if best.as_ref().is_none_or(|(m, _, _)| val_metric > *m) {
            best = Some((val_metric, epoch + 1, params.clone()));
        }
        history.push(record);
    }
    let (_, best_epoch, params) = best.expect("at least one epoch");
    Ok(AttrTrainOutcome {
        params,
        history,
        best_epoch,
    })
}

fn validate_sets(data: &AttrTrainData, dim: usize, styles: usize, comps: usize) -> Result<()> {
    for &l in data.style_train.labels.iter().chain(&data.style_val.labels) {
        if l >= styles {
            return Err(Error::Index { index: l, len: styles });
        }
    }
    let feats = data
        .style_train
        .features
        .iter()
        .chain(&data.style_val.features)
        .chain(&data.comp_train.features)
        .chain(&data.comp_val.features);
    for f in feats {
        if f.len() != dim {
            return Err(Error::Shape {
                op: "train_attribute_net",
                left: vec![dim],
                right: vec![f.len()],
            });
        }
    }
    for l in data.comp_train.labels.iter().chain(&data.comp_val.labels) {
        if l.len() != comps {
            return Err(Error::Shape {
                op: "train_attribute_net",
                left: vec![comps],
                right: vec![l.len()],
            });
        }
    }
    Ok(())
}

fn assemble_batch(data: &AttrTrainData, samples: &[(Task, usize)]) -> Result<AttrBatch> {
    let mut rows: Vec<&[f64]> = Vec::with_capacity(samples.len());
    let mut targets = Vec::with_capacity(samples.len());
    for &(task, i) in samples {
        match task {
            Task::Style => {
                rows.push(&data.style_train.features[i]);
                targets.push(AttrTarget::Style(data.style_train.labels[i]));
            }
            Task::Composition => {
                rows.push(&data.comp_train.features[i]);
                targets.push(AttrTarget::Composition(data.comp_train.labels[i].clone()));
            }
        }
    }
    Ok(AttrBatch {
        inputs: Tensor::from_rows(&rows)?,
        targets,
    })
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct AttributePrediction {
    pub style: usize,
    pub composition: Vec<bool>,
}

/// Style is the argmax of the style logits (first index on ties);
/// composition bit `j` is set iff `sigmoid(logit_j) > comp_threshold`.
pub fn decode_attributes(style_logits: &[f64], comp_logits: &[f64], comp_threshold: f64) -> AttributePrediction {
    let style = style_logits
        .iter()
        .enumerate()
        .fold(
            (0, f64::NEG_INFINITY),
            |(bi, bv), (i, &v)| if v > bv { (i, v) } else { (bi, bv) },
        )
        .0;
    let composition = comp_logits
        .iter()
        .map(|&z| kernels::sigmoid(z) > comp_threshold)
        .collect();
    AttributePrediction { style, composition }
}

/// Predicted attributes for every row of `e_b` (`[D]` or `[N, D]`).
pub fn predict_attributes(
    e_b: &Tensor,
    p: &AttributeNetParams,
    comp_threshold: f64,
) -> Result<Vec<AttributePrediction>> {
    let out = attr_forward(e_b, p)?;
    Ok((0..out.style_logits.rows())
        .map(|r| decode_attributes(out.style_logits.row(r), out.comp_logits.row(r), comp_threshold))
        .collect())
}

/// Fraction of images whose predicted composition set shares at least one
/// class with the ground truth. An empty prediction never matches.
pub fn composition_accuracy(preds: &[Vec<bool>], labels: &[Vec<bool>]) -> Result<f64> {
    if preds.len() != labels.len() {
        return Err(Error::Shape {
            op: "composition_accuracy",
            left: vec![preds.len()],
            right: vec![labels.len()],
        });
    }
    if preds.is_empty() {
        return Err(Error::Invalid("composition_accuracy on empty input".into()));
    }
    let hits = preds
        .iter()
        .zip(labels)
        .filter(|(p, t)| p.iter().zip(t.iter()).any(|(&a, &b)| a && b))
        .count();
    Ok(hits as f64 / preds.len() as f64)
}

pub fn style_accuracy(preds: &[usize], labels: &[usize]) -> Result<f64> {
    if preds.len() != labels.len() || preds.is_empty() {
        return Err(Error::Shape {
            op: "style_accuracy",
            left: vec![preds.len()],
            right: vec![labels.len()],
        });
    }
    let hits = preds.iter().zip(labels).filter(|(a, b)| a == b).count();
    Ok(hits as f64 / preds.len() as f64)
}

fn predict_set(p: &AttributeNetParams, features: &[Vec<f64>], thr: f64) -> Vec<AttributePrediction> {
    let x = Tensor::from_rows(features).expect("validated features");
    predict_attributes(&x, p, thr).expect("validated dims")
}

fn style_accuracy_on(p: &AttributeNetParams, set: &StyleSet) -> f64 {
    let preds: Vec<usize> = predict_set(p, &set.features, 0.5)
        .into_iter()
        .map(|a| a.style)
        .collect();
    style_accuracy(&preds, &set.labels).expect("non-empty")
}

fn composition_accuracy_on(p: &AttributeNetParams, set: &CompositionSet, thr: f64) -> f64 {
    let preds: Vec<Vec<bool>> = predict_set(p, &set.features, thr)
        .into_iter()
        .map(|a| a.composition)
        .collect();
    composition_accuracy(&preds, &set.labels).expect("non-empty")
}

/// `matrix[truth][pred]` counts.
pub fn style_confusion(preds: &[usize], labels: &[usize], classes: usize) -> Vec<Vec<usize>> {
    let mut m = vec![vec![0; classes]; classes];
    for (&p, &t) in preds.iter().zip(labels) {
        if p < classes && t < classes {
            m[t][p] += 1;
        }
    }
    m
}

/// Per-class `[tp, fp, fn, tn]` counts for the multi-label head.
pub fn composition_confusion(preds: &[Vec<bool>], labels: &[Vec<bool>]) -> Vec<[usize; 4]> {
    let k = labels.first().map(Vec::len).unwrap_or(0);
    let mut out = vec![[0; 4]; k];
    for (p, t) in preds.iter().zip(labels) {
        for j in 0..k {
            let idx = match (p[j], t[j]) {
                (true, true) => 0,
                (true, false) => 1,
                (false, true) => 2,
                (false, false) => 3,
            };
            out[j][idx] += 1;
        }
    }
    out
}

pub fn store_history(history: &[AttrEpochRecord], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
    let mut s = String::from("epoch,loss,style_acc,comp_acc,val_metric\n");
    for r in history {
        s.push_str(&format!(
            "{},{},{},{},{}\n",
            r.epoch,
            r.loss,
            opt(r.style_acc),
            opt(r.comp_acc),
            r.val_metric
        ));
    }
    std::fs::write(path, s).map_err(|e| Error::io(path, e))
}
