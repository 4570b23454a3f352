//! The hypernetwork and the per-image aesthetic MLP it parameterizes, the
//! stage-2 training loop, ablation variants, weight export and the model
//! checkpoint.
//!
//! Each hypernetwork block `i` maps the l2-normalized attribute embedding
//! to one layer of the aesthetic MLP:
//!
//! ```text
//! e_r = ReLU(W_r^T e_s/|e_s| + b_r)
//! W_i = reshape(W_w^T e_r + b_w)      [N_in, N_out], row-major
//! b_i = W_b^T e_r + b_b
//! ```
//!
//! The aesthetic MLP applies ReLU after every layer but the last, whose
//! logits go through a softmax over the score buckets.

use std::fmt;
use std::io::Write as _;
use std::path::Path;
use std::str::FromStr;

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::attribute::{attr_forward, read_params, write_f32s, AttributeNetParams};
use crate::data::formats::ByteReader;
use crate::data::sampler::shuffled_batches;
use crate::data::{BucketScale, EmbeddingVector};
use crate::error::{Error, Result};
use crate::metrics;
use crate::nn::{self, ops, push_linear, Adam, AdamConfig, EmdForm, Graph, Linear, ParamSet, StepDecay, Tensor, Var};
use crate::rng::{self, Rng};

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"HYPR";
pub const CHECKPOINT_VERSION: u32 = 1;

/// Hidden widths of the aesthetic MLP between the input embedding and the
/// score buckets.
pub const DEFAULT_HIDDEN: [usize; 4] = [512, 256, 256, 64];

/// Layer widths `[D, h_1, .., B]` of the aesthetic MLP.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct AestheticNetSpec {
    pub layer_dims: Vec<usize>,
}

impl AestheticNetSpec {
    pub fn new(layer_dims: Vec<usize>) -> Result<Self> {
        if layer_dims.len() < 2 || layer_dims.contains(&0) {
            return Err(Error::Config(format!(
                "layer_dims needs at least two positive widths, got {layer_dims:?}"
            )));
        }
        if *layer_dims.last().unwrap() < 2 {
            return Err(Error::Config("the output layer needs at least 2 buckets".into()));
        }
        Ok(AestheticNetSpec { layer_dims })
    }

    /// `[input_dim, 512, 256, 256, 64, buckets]`.
    pub fn with_default_hidden(input_dim: usize, buckets: usize) -> Result<Self> {
        let mut dims = vec![input_dim];
        dims.extend(DEFAULT_HIDDEN);
        dims.push(buckets);
        AestheticNetSpec::new(dims)
    }

    pub fn input_dim(&self) -> usize {
        self.layer_dims[0]
    }

    pub fn buckets(&self) -> usize {
        *self.layer_dims.last().unwrap()
    }

    /// Number of linear layers `M`.
    pub fn layers(&self) -> usize {
        self.layer_dims.len() - 1
    }

    /// `(N_in, N_out)` of layer `i` (0-based).
    pub fn layer(&self, i: usize) -> (usize, usize) {
        (self.layer_dims[i], self.layer_dims[i + 1])
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct HyperBlock {
    /// `E -> d`
    pub reducer: Linear,
    /// `d -> N_in * N_out`
    pub weight_head: Linear,
    /// `d -> N_out`
    pub bias_head: Linear,
}

#[derive(Clone, Debug, PartialEq)]
pub struct HyperNet {
    pub spec: AestheticNetSpec,
    pub blocks: Vec<HyperBlock>,
}

impl HyperNet {
    pub fn zeros(spec: &AestheticNetSpec, embed_dim: usize, reduced_dim: usize) -> Self {
        let blocks = (0..spec.layers())
            .map(|i| {
                let (n_in, n_out) = spec.layer(i);
                HyperBlock {
                    reducer: Linear::zeros(embed_dim, reduced_dim),
                    weight_head: Linear::zeros(reduced_dim, n_in * n_out),
                    bias_head: Linear::zeros(reduced_dim, n_out),
                }
            })
            .collect();
        HyperNet {
            spec: spec.clone(),
            blocks,
        }
    }

    /// Reducers use the standard uniform init. The weight and bias heads
    /// draw from `U(+-1/sqrt(d * N_in))`, so the input-dependent part of a
    /// generated weight starts small, and the weight-head bias is drawn
    /// like an ordinary layer's weights, `U(+-1/sqrt(N_in))`, so the
    /// generated MLP starts as a usable random network.
    pub fn init(spec: &AestheticNetSpec, embed_dim: usize, reduced_dim: usize, rng: &mut Rng) -> Self {
        let blocks = (0..spec.layers())
            .map(|i| {
                let (n_in, n_out) = spec.layer(i);
                let head_bound = 1.0 / ((reduced_dim * n_in) as f64).sqrt();
                let mut weight_head = Linear::init_scaled(reduced_dim, n_in * n_out, head_bound, rng);
                let base = 1.0 / (n_in as f64).sqrt();
                for b in weight_head.bias.data_mut() {
                    *b = rng.random_range(-base..=base);
                }
                HyperBlock {
                    reducer: Linear::init(embed_dim, reduced_dim, rng),
                    weight_head,
                    bias_head: Linear::init_scaled(reduced_dim, n_out, head_bound, rng),
                }
            })
            .collect();
        HyperNet {
            spec: spec.clone(),
            blocks,
        }
    }

    pub fn embed_dim(&self) -> usize {
        self.blocks[0].reducer.n_in()
    }

    pub fn reduced_dim(&self) -> usize {
        self.blocks[0].reducer.n_out()
    }

    /// Records the generation and the generated MLP on `g`. Returns the
    /// output distribution and the block parameter vars in
    /// [`ParamSet::named_params`] order.
    fn forward<'a>(&'a self, g: &mut Graph<'a>, x: Var, e_s: Var, trainable: bool) -> Result<(Var, Vec<Var>)> {
        let e_hat = g.l2_normalize_or_zero(e_s)?;
        let mut vars = Vec::with_capacity(6 * self.blocks.len());
        let mut cur = x;
        let last = self.blocks.len() - 1;
        for (i, block) in self.blocks.iter().enumerate() {
            let (n_in, n_out) = self.spec.layer(i);
            let r = block.reducer.bind(g, trainable);
            let w = block.weight_head.bind(g, trainable);
            let b = block.bias_head.bind(g, trainable);
            let pre = r.forward(g, e_hat)?;
            let e_r = g.relu(pre);
            let w_gen = w.forward(g, e_r)?;
            let b_gen = b.forward(g, e_r)?;
            let h = g.batch_matvec(cur, w_gen, n_in, n_out)?;
            let h = g.add(h, b_gen)?;
            cur = if i == last { h } else { g.relu(h) };
            vars.extend(r.vars());
            vars.extend(w.vars());
            vars.extend(b.vars());
        }
        Ok((g.softmax(cur), vars))
    }
}

impl ParamSet for HyperNet {
    fn named_params(&self) -> Vec<(String, &Tensor)> {
        let mut out = Vec::with_capacity(6 * self.blocks.len());
        for (i, b) in self.blocks.iter().enumerate() {
            push_linear(&mut out, &format!("block{}.reducer", i + 1), &b.reducer);
            push_linear(&mut out, &format!("block{}.weight_head", i + 1), &b.weight_head);
            push_linear(&mut out, &format!("block{}.bias_head", i + 1), &b.bias_head);
        }
        out
    }

    fn params_mut(&mut self) -> Vec<&mut Tensor> {
        self.blocks
            .iter_mut()
            .flat_map(|b| {
                [
                    &mut b.reducer.weight,
                    &mut b.reducer.bias,
                    &mut b.weight_head.weight,
                    &mut b.weight_head.bias,
                    &mut b.bias_head.weight,
                    &mut b.bias_head.bias,
                ]
            })
            .collect()
    }
}

/// The generated `(W_i, b_i)` for one image, as plain layers.
#[derive(Clone, Debug, PartialEq)]
pub struct GeneratedParams {
    pub layers: Vec<Linear>,
}

impl GeneratedParams {
    pub fn max_abs_diff(&self, other: &GeneratedParams) -> f64 {
        self.layers
            .iter()
            .zip(&other.layers)
            .map(|(a, b)| a.weight.max_abs_diff(&b.weight).max(a.bias.max_abs_diff(&b.bias)))
            .fold(0.0, f64::max)
    }
}

/// Generates the aesthetic MLP parameters for one attribute embedding.
/// An all-zero `e_s` normalizes to zero, leaving only the head biases.
pub fn hyper_generate(e_s: &[f64], h: &HyperNet) -> Result<GeneratedParams> {
    if e_s.len() != h.embed_dim() {
        return Err(Error::Shape {
            op: "hyper_generate",
            left: vec![h.embed_dim()],
            right: vec![e_s.len()],
        });
    }
    let e_hat = ops::l2_normalize_or_zero(&Tensor::vector(e_s.to_vec()));
    let layers = h
        .blocks
        .iter()
        .enumerate()
        .map(|(i, b)| {
            let (n_in, n_out) = h.spec.layer(i);
            let e_r = ops::relu(&ops::linear_forward(&e_hat, &b.reducer.weight, &b.reducer.bias)?);
            let w = ops::linear_forward(&e_r, &b.weight_head.weight, &b.weight_head.bias)?;
            let bias = ops::linear_forward(&e_r, &b.bias_head.weight, &b.bias_head.bias)?;
            Ok(Linear {
                weight: w.reshape(&[n_in, n_out])?,
                bias,
            })
        })
        .collect::<Result<_>>()?;
    Ok(GeneratedParams { layers })
}

/// Runs the aesthetic MLP with explicit parameters on one embedding.
pub fn aesthetic_forward(e_b: &[f64], gp: &GeneratedParams) -> Result<Vec<f64>> {
    mlp_forward(&Tensor::vector(e_b.to_vec()), &gp.layers).map(Tensor::into_data)
}

fn mlp_forward(x: &Tensor, layers: &[Linear]) -> Result<Tensor> {
    let mut cur = x.clone();
    for (i, l) in layers.iter().enumerate() {
        cur = ops::linear_forward(&cur, &l.weight, &l.bias)?;
        if i + 1 < layers.len() {
            cur = ops::relu(&cur);
        }
    }
    Ok(ops::softmax(&cur))
}

/// `sum_i s_i q_i`.
pub fn mean_score(q: &[f64], scale: &BucketScale) -> f64 {
    scale.mean(q)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum AestheticClass {
    High,
    Low,
}

impl fmt::Display for AestheticClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            AestheticClass::High => "high",
            AestheticClass::Low => "low",
        })
    }
}

/// High iff the mean score is strictly above `threshold`.
pub fn classify(q: &[f64], scale: &BucketScale, threshold: f64) -> AestheticClass {
    if mean_score(q, scale) > threshold {
        AestheticClass::High
    } else {
        AestheticClass::Low
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VariantKind {
    /// Attribute network, hypernetwork and generated MLP.
    Full,
    /// Attribute network followed by one affine layer to the buckets.
    AttrLinear,
    /// The aesthetic MLP with ordinary learned weights on `e_b`.
    MlpOnly,
    /// Full model whose attribute network saw style labels only.
    StyleOnly,
    /// Full model whose attribute network saw composition labels only.
    CompOnly,
}

impl VariantKind {
    pub const ALL: [VariantKind; 5] = [
        VariantKind::Full,
        VariantKind::AttrLinear,
        VariantKind::MlpOnly,
        VariantKind::StyleOnly,
        VariantKind::CompOnly,
    ];

    pub fn name(self) -> &'static str {
        match self {
            VariantKind::Full => "full",
            VariantKind::AttrLinear => "attr_linear",
            VariantKind::MlpOnly => "mlp_only",
            VariantKind::StyleOnly => "style_only",
            VariantKind::CompOnly => "comp_only",
        }
    }

    pub fn uses_attributes(self) -> bool {
        self != VariantKind::MlpOnly
    }

    fn code(self) -> u8 {
        VariantKind::ALL.iter().position(|&k| k == self).unwrap() as u8
    }
}

impl fmt::Display for VariantKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for VariantKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        VariantKind::ALL.into_iter().find(|k| k.name() == s).ok_or_else(|| {
            Error::Config(format!(
                "unknown variant {s:?}; expected one of full, attr_linear, mlp_only, style_only, comp_only"
            ))
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum AestheticHead {
    Hyper(HyperNet),
    Linear(Linear),
    Mlp(Vec<Linear>),
}

/// A complete stage-2 model. The attribute network, when present, is
/// frozen; [`ParamSet`] exposes only the head.
#[derive(Clone, Debug, PartialEq)]
pub struct AestheticModel {
    pub kind: VariantKind,
    pub spec: AestheticNetSpec,
    pub attr: Option<AttributeNetParams>,
    pub head: AestheticHead,
}

fn check_attr(
    kind: VariantKind,
    spec: &AestheticNetSpec,
    attr: Option<AttributeNetParams>,
) -> Result<Option<AttributeNetParams>> {
    if !kind.uses_attributes() {
        return Ok(None);
    }
    let attr = attr.ok_or_else(|| Error::Config(format!("variant {kind} needs a trained attribute network")))?;
    if attr.input_dim() != spec.input_dim() {
        return Err(Error::Config(format!(
            "attribute network input dim {} does not match embedding dim {}",
            attr.input_dim(),
            spec.input_dim()
        )));
    }
    Ok(Some(attr))
}

/// Assembles a freshly initialized model of the given kind.
pub fn build_variant(
    kind: VariantKind,
    spec: &AestheticNetSpec,
    attr: Option<AttributeNetParams>,
    reduced_dim: usize,
    seed: u64,
) -> Result<AestheticModel> {
    let attr = check_attr(kind, spec, attr)?;
    if reduced_dim == 0 {
        return Err(Error::Config("reduced dim d must be positive".into()));
    }
    let mut r = rng::stream(seed, "aesthetic-init");
    let head = match kind {
        VariantKind::Full | VariantKind::StyleOnly | VariantKind::CompOnly => {
            let e = attr.as_ref().unwrap().width();
            AestheticHead::Hyper(HyperNet::init(spec, e, reduced_dim, &mut r))
        }
        VariantKind::AttrLinear => {
            AestheticHead::Linear(Linear::init(attr.as_ref().unwrap().width(), spec.buckets(), &mut r))
        }
        VariantKind::MlpOnly => AestheticHead::Mlp(
            (0..spec.layers())
                .map(|i| {
                    let (n_in, n_out) = spec.layer(i);
                    Linear::init(n_in, n_out, &mut r)
                })
                .collect(),
        ),
    };
    Ok(AestheticModel {
        kind,
        spec: spec.clone(),
        attr,
        head,
    })
}

impl ParamSet for AestheticModel {
    fn named_params(&self) -> Vec<(String, &Tensor)> {
        match &self.head {
            AestheticHead::Hyper(h) => h.named_params(),
            AestheticHead::Linear(l) => {
                let mut out = Vec::new();
                push_linear(&mut out, "head", l);
                out
            }
            AestheticHead::Mlp(layers) => {
                let mut out = Vec::new();
                for (i, l) in layers.iter().enumerate() {
                    push_linear(&mut out, &format!("layer{}", i + 1), l);
                }
                out
            }
        }
    }

    fn params_mut(&mut self) -> Vec<&mut Tensor> {
        match &mut self.head {
            AestheticHead::Hyper(h) => h.params_mut(),
            AestheticHead::Linear(l) => vec![&mut l.weight, &mut l.bias],
            AestheticHead::Mlp(layers) => layers.iter_mut().flat_map(|l| [&mut l.weight, &mut l.bias]).collect(),
        }
    }
}

impl AestheticModel {
    /// Frozen attribute embeddings `e_s` for a batch, when the variant
    /// uses them.
    pub fn attribute_embeddings(&self, e_b: &Tensor) -> Result<Option<Tensor>> {
        self.attr
            .as_ref()
            .map(|a| attr_forward(e_b, a).map(|o| o.embedding))
            .transpose()
    }

    /// Records the head on `g`; returns the `[N, B]` distributions and the
    /// head parameter vars.
    pub fn forward<'a>(
        &'a self,
        g: &mut Graph<'a>,
        x: Var,
        e_s: Option<Var>,
        trainable: bool,
    ) -> Result<(Var, Vec<Var>)> {
        let need = || Error::Invalid(format!("variant {} needs attribute embeddings", self.kind));
        match &self.head {
            AestheticHead::Hyper(h) => h.forward(g, x, e_s.ok_or_else(need)?, trainable),
            AestheticHead::Linear(l) => {
                let v = l.bind(g, trainable);
                let z = v.forward(g, e_s.ok_or_else(need)?)?;
                Ok((g.softmax(z), v.vars().to_vec()))
            }
            AestheticHead::Mlp(layers) => {
                let mut vars = Vec::with_capacity(2 * layers.len());
                let mut cur = x;
                for (i, l) in layers.iter().enumerate() {
                    let v = l.bind(g, trainable);
                    cur = v.forward(g, cur)?;
                    if i + 1 < layers.len() {
                        cur = g.relu(cur);
                    }
                    vars.extend(v.vars());
                }
                Ok((g.softmax(cur), vars))
            }
        }
    }

    fn predict_with(&self, e_b: &Tensor, e_s: Option<&Tensor>) -> Result<Tensor> {
        let mut g = Graph::new();
        let x = g.constant(e_b);
        let es = e_s.map(|t| g.constant(t));
        let (probs, _) = self.forward(&mut g, x, es, false)?;
        Ok(g.value(probs).clone())
    }

    /// Predicted distributions `[N, B]` for embeddings `[N, D]`.
    pub fn predict(&self, e_b: &Tensor) -> Result<Tensor> {
        let e_b = if e_b.shape().len() == 1 {
            e_b.clone().reshape(&[1, e_b.numel()])?
        } else {
            e_b.clone()
        };
        if e_b.cols() != self.spec.input_dim() {
            return Err(Error::Shape {
                op: "predict",
                left: vec![self.spec.input_dim()],
                right: e_b.shape().to_vec(),
            });
        }
        let es = self.attribute_embeddings(&e_b)?;
        self.predict_with(&e_b, es.as_ref())
    }

    /// Generated parameters for one image (hypernetwork variants only).
    pub fn generated_params(&self, e_b: &[f64]) -> Result<GeneratedParams> {
        let AestheticHead::Hyper(h) = &self.head else {
            return Err(Error::Invalid(format!(
                "variant {} has no generated weights",
                self.kind
            )));
        };
        let attr = self.attr.as_ref().expect("hyper variants carry an attribute net");
        let out = attr_forward(&Tensor::vector(e_b.to_vec()), attr)?;
        hyper_generate(out.embedding.data(), h)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut buf = Vec::new();
        buf.extend_from_slice(CHECKPOINT_MAGIC);
        buf.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
        buf.push(self.kind.code());
        buf.extend_from_slice(&(self.spec.layers() as u32).to_le_bytes());
        for &d in &self.spec.layer_dims {
            buf.extend_from_slice(&(d as u32).to_le_bytes());
        }
        let (e, d) = match &self.head {
            AestheticHead::Hyper(h) => (h.embed_dim(), h.reduced_dim()),
            AestheticHead::Linear(l) => (l.n_in(), 0),
            AestheticHead::Mlp(_) => (0, 0),
        };
        buf.extend_from_slice(&(e as u32).to_le_bytes());
        buf.extend_from_slice(&(d as u32).to_le_bytes());
        match &self.attr {
            Some(a) => {
                buf.push(1);
                a.encode(&mut buf);
            }
            None => buf.push(0),
        }
        for (_, t) in self.named_params() {
            write_f32s(&mut buf, t);
        }
        std::fs::File::create(path)
            .and_then(|mut f| f.write_all(&buf))
            .map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        let mut r = ByteReader::new(&bytes, path);
        if r.take(4)? != CHECKPOINT_MAGIC {
            return Err(r.error("bad magic, expected HYPR"));
        }
        let v = r.u32()?;
        if v != CHECKPOINT_VERSION {
            return Err(r.error(&format!("unsupported checkpoint version {v}")));
        }
        let code = r.u8()? as usize;
        let kind = *VariantKind::ALL
            .get(code)
            .ok_or_else(|| r.error(&format!("unknown variant code {code}")))?;
        let m = r.u32()? as usize;
        let dims: Vec<usize> = (0..=m).map(|_| r.u32().map(|d| d as usize)).collect::<Result<_>>()?;
        let spec = AestheticNetSpec::new(dims).map_err(|e| r.error(&e.to_string()))?;
        let e = r.u32()? as usize;
        let d = r.u32()? as usize;
        let attr = match r.u8()? {
            0 => None,
            1 => Some(AttributeNetParams::decode(&mut r)?),
            f => return Err(r.error(&format!("bad attribute flag {f}"))),
        };
        if kind.uses_attributes() != attr.is_some() {
            return Err(r.error("attribute network presence does not match variant"));
        }
        if attr.as_ref().is_some_and(|a| a.width() != e) {
            return Err(r.error("attribute width does not match head input"));
        }
        let head = match kind {
            VariantKind::Full | VariantKind::StyleOnly | VariantKind::CompOnly => {
                if d == 0 {
                    return Err(r.error("zero reduced dim"));
                }
                AestheticHead::Hyper(HyperNet::zeros(&spec, e, d))
            }
            VariantKind::AttrLinear => AestheticHead::Linear(Linear::zeros(e, spec.buckets())),
            VariantKind::MlpOnly => AestheticHead::Mlp(
                (0..spec.layers())
                    .map(|i| {
                        let (a, b) = spec.layer(i);
                        Linear::zeros(a, b)
                    })
                    .collect(),
            ),
        };
        let mut model = AestheticModel { kind, spec, attr, head };
        read_params(&mut r, &mut model)?;
        if !r.is_done() {
            return Err(r.error("trailing bytes"));
        }
        Ok(model)
    }
}

/// Embeddings aligned with target score distributions.
#[derive(Clone, Debug, Default)]
pub struct AestheticSet {
    pub ids: Vec<String>,
    pub embeddings: Vec<Vec<f64>>,
    pub targets: Vec<Vec<f64>>,
}

impl AestheticSet {
    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn push(&mut self, id: String, embedding: Vec<f64>, target: Vec<f64>) {
        self.ids.push(id);
        self.embeddings.push(embedding);
        self.targets.push(target);
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HyperTrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub adam: AdamConfig,
    pub decay: StepDecay,
    pub emd_r: f64,
    pub emd_form: EmdForm,
    pub seed: u64,
}

impl Default for HyperTrainConfig {
    fn default() -> Self {
        HyperTrainConfig {
            epochs: 40,
            batch_size: 32,
            adam: AdamConfig {
                lr: 1e-5,
                ..AdamConfig::default()
            },
            decay: StepDecay { every: 20, factor: 0.1 },
            emd_r: 2.0,
            emd_form: EmdForm::Root,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct HyperEpochRecord {
    pub epoch: usize,
    pub loss: f64,
    pub val_srocc: f64,
    pub val_emd_r1: f64,
}

#[derive(Clone, Debug)]
pub struct HyperTrainOutcome {
    pub model: AestheticModel,
    pub history: Vec<HyperEpochRecord>,
    /// 1-based epoch of the returned model; 0 when no training ran.
    pub best_epoch: usize,
}

struct Prepared {
    x: Tensor,
    e_s: Option<Tensor>,
    targets: Vec<Vec<f64>>,
}

fn prepare(model: &AestheticModel, set: &AestheticSet) -> Result<Prepared> {
    for e in &set.embeddings {
        if e.len() != model.spec.input_dim() {
            return Err(Error::Shape {
                op: "train_hyper",
                left: vec![model.spec.input_dim()],
                right: vec![e.len()],
            });
        }
    }
    for (i, t) in set.targets.iter().enumerate() {
        if t.len() != model.spec.buckets() {
            return Err(Error::Shape {
                op: "train_hyper",
                left: vec![model.spec.buckets()],
                right: vec![t.len()],
            });
        }
        nn::loss::check_distribution(t, "target distribution", i)?;
    }
    let x = Tensor::from_rows(&set.embeddings)?;
    let e_s = model.attribute_embeddings(&x)?;
    Ok(Prepared {
        x,
        e_s,
        targets: set.targets.clone(),
    })
}

fn gather(t: &Tensor, rows: &[usize]) -> Result<Tensor> {
    Tensor::from_rows(&rows.iter().map(|&r| t.row(r)).collect::<Vec<_>>())
}

/// Validation SROCC and mean EMD(r=1) of `model` on prepared data.
fn validate(model: &AestheticModel, p: &Prepared, scale: &BucketScale) -> Result<(f64, f64)> {
    let probs = model.predict_with(&p.x, p.e_s.as_ref())?;
    let mut pred_mu = Vec::with_capacity(p.targets.len());
    let mut true_mu = Vec::with_capacity(p.targets.len());
    let mut emd = 0.0;
    for (i, t) in p.targets.iter().enumerate() {
        let q = probs.row(i);
        pred_mu.push(scale.mean(q));
        true_mu.push(scale.mean(t));
        emd += nn::emd_loss(q, t, 1.0)?;
    }
    let srocc = metrics::srocc(&pred_mu, &true_mu).unwrap_or(f64::NAN);
    Ok((srocc, emd / p.targets.len() as f64))
}

/// Stage-2 training of the model head with the attribute network frozen.
/// Returns the epoch with the best validation SROCC (earliest on ties; an
/// undefined SROCC ranks below every defined one). With an empty
/// validation set, selection runs on the training set.
pub fn train_hyper(
    model: AestheticModel,
    train: &AestheticSet,
    val: &AestheticSet,
    scale: &BucketScale,
    cfg: &HyperTrainConfig,
) -> Result<HyperTrainOutcome> {
    if train.is_empty() {
        return Err(Error::Invalid("stage-2 training needs a non-empty training set".into()));
    }
    if scale.len() != model.spec.buckets() {
        return Err(Error::Config(format!(
            "bucket scale has {} values, model outputs {}",
            scale.len(),
            model.spec.buckets()
        )));
    }
    if cfg.batch_size == 0 {
        return Err(Error::Config("batch size must be positive".into()));
    }
    let train_p = prepare(&model, train)?;
    let val_p = if val.is_empty() {
        None
    } else {
        Some(prepare(&model, val)?)
    };
    if cfg.epochs == 0 {
        return Ok(HyperTrainOutcome {
            model,
            history: Vec::new(),
            best_epoch: 0,
        });
    }

    let mut model = model;
    let tensors: Vec<&Tensor> = model.named_params().into_iter().map(|(_, t)| t).collect();
    let mut opt = Adam::new(cfg.adam, cfg.decay, &tensors)?;
    let mut batch_rng = rng::stream(cfg.seed, "hyper-batches");
    let sel = val_p.as_ref().unwrap_or(&train_p);

    let mut history = Vec::with_capacity(cfg.epochs);
    let mut best: Option<(f64, usize, AestheticModel)> = None;
    for epoch in 0..cfg.epochs {
        opt.apply_decay(epoch);
        let batches = shuffled_batches(train.len(), cfg.batch_size, &mut batch_rng);
        let mut loss_sum = 0.0;
        for (step, rows) in batches.iter().enumerate() {
            let x = gather(&train_p.x, rows)?;
            let e_s = train_p.e_s.as_ref().map(|t| gather(t, rows)).transpose()?;
            let target: Vec<f64> = rows.iter().flat_map(|&r| train_p.targets[r].iter().copied()).collect();
            let m = &model;
            let (loss, grads) = nn::loss_and_grads(|g| {
                let xv = g.input(x);
                let ev = e_s.map(|t| g.input(t));
                let (probs, vars) = m.forward(g, xv, ev, true)?;
                let loss = g.emd(probs, &target, cfg.emd_r, cfg.emd_form)?;
                Ok((loss, vars))
            })?;
            if !loss.is_finite() {
                return Err(Error::NonFiniteLoss {
                    epoch: epoch + 1,
                    step: step + 1,
                });
            }
            nn::apply_grads(&mut model, &mut opt, &grads)?;
            loss_sum += loss;
        }
        let (val_srocc, val_emd_r1) = validate(&model, sel, scale)?;
        let record = HyperEpochRecord {
            epoch: epoch + 1,
            loss: loss_sum / batches.len() as f64,
            val_srocc,
            val_emd_r1,
        };
        log::info!(
            "aesthetic[{}] epoch {}: loss {:.5} val srocc {:.4} val emd {:.4}",
            model.kind,
            record.epoch,
            record.loss,
            record.val_srocc,
            record.val_emd_r1
        );
        let score = if val_srocc.is_nan() {
            f64::NEG_INFINITY
        } else {
            val_srocc
        };
        if best.as_ref().is_none_or(|(b, _, _)| score > *b) {
            best = Some((score, epoch + 1, model.clone()));
        }
        history.push(record);
    }
    let (_, best_epoch, model) = best.expect("at least one epoch");
    Ok(HyperTrainOutcome {
        model,
        history,
        best_epoch,
    })
}

pub fn store_history(history: &[HyperEpochRecord], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut s = String::from("epoch,loss,val_srocc,val_emd_r1\n");
    for r in history {
        s.push_str(&format!("{},{},{},{}\n", r.epoch, r.loss, r.val_srocc, r.val_emd_r1));
    }
    std::fs::write(path, s).map_err(|e| Error::io(path, e))
}

/// Writes the flattened generated weight matrix of layer `layer_index`
/// (1-based) for each embedding as CSV `id,w0,..`. Returns the row length
/// excluding the id.
pub fn export_generated_weights(
    model: &AestheticModel,
    embeddings: &[EmbeddingVector],
    layer_index: usize,
    path: impl AsRef<Path>,
) -> Result<usize> {
    let path = path.as_ref();
    let m = model.spec.layers();
    if layer_index == 0 || layer_index > m {
        return Err(Error::Index {
            index: layer_index,
            len: m,
        });
    }
    if !matches!(model.head, AestheticHead::Hyper(_)) {
        return Err(Error::Invalid(format!(
            "variant {} has no generated weights",
            model.kind
        )));
    }
    let (n_in, n_out) = model.spec.layer(layer_index - 1);
    let width = n_in * n_out;
    let mut w = csv::Writer::from_path(path).map_err(|e| Error::format(path.display(), 0, e.to_string()))?;
    let mut header = vec!["id".to_string()];
    header.extend((0..width).map(|i| format!("w{i}")));
    let io = |e: csv::Error| Error::format(path.display(), 0, e.to_string());
    w.write_record(&header).map_err(io)?;
    for e in embeddings {
        let gp = model.generated_params(&e.values)?;
        let mut row = vec![e.id.clone()];
        row.extend(gp.layers[layer_index - 1].weight.data().iter().map(|v| v.to_string()));
        w.write_record(&row).map_err(io)?;
    }
    w.flush().map_err(|e| Error::io(path, e))?;
    Ok(width)
}
