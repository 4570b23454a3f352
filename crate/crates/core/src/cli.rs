//! Command-line driver.
//!
//! Every command resolves its configuration (defaults, then `--config`,
//! then flags), validates it and loads all inputs before creating the
//! output directory. Exit codes: 0 success, 1 runtime failure, 2 invalid
//! configuration or input.

use std::collections::{HashMap, HashSet};
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use crate::attribute::{
    composition_confusion, predict_attributes, store_history as store_attr_history, style_confusion,
    train_attribute_net, AttrTrainData, AttributeNetParams, CompositionSet, StyleSet,
};
use crate::config::RunConfig;
use crate::data::synthetic::{self, SyntheticConfig};
use crate::data::{
    load_attributes, load_embeddings, load_scores, load_split, make_splits, store_attributes, store_embeddings,
    store_scores, store_split, EmbeddingVector, ScoreDistribution, SplitSizes, SplitSpec,
};
use crate::error::{Error, Result};
use crate::hyper::{
    build_variant, classify, export_generated_weights, mean_score, store_history as store_hyper_history, train_hyper,
    AestheticModel, AestheticSet, VariantKind,
};
use crate::metrics::{self, baseline_predict, evaluate, evaluate_by_attribute};
use crate::nn::Tensor;

#[derive(Debug, Parser)]
#[command(name = "aesthyper", version, about = "Attribute-conditioned aesthetic assessment")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train the multi-task attribute network.
    TrainAttributes {
        #[command(flatten)]
        opts: Overrides,
        /// Shorthand for --attr-epochs.
        #[arg(long)]
        epochs: Option<usize>,
    },
    /// Train the aesthetic head (hypernetwork or an ablation variant).
    TrainAesthetic {
        #[command(flatten)]
        opts: Overrides,
        /// Shorthand for --hyper-epochs.
        #[arg(long)]
        epochs: Option<usize>,
    },
    /// Score a model (or the mean-score baseline) on a split part.
    Evaluate {
        #[command(flatten)]
        opts: Overrides,
        /// Also report metrics grouped by predicted attribute.
        #[arg(long)]
        by_attribute: bool,
        /// Evaluate the mean-score baseline instead of a model.
        #[arg(long)]
        baseline: bool,
        /// Split part to evaluate: train, val, test or all.
        #[arg(long, default_value = "test")]
        part: String,
    },
    /// Write per-image predictions.
    Predict {
        #[command(flatten)]
        opts: Overrides,
    },
    /// Generate a planted-attribute synthetic dataset.
    GenSynth {
        #[command(flatten)]
        opts: Overrides,
        #[arg(long)]
        n: usize,
        /// Extra images carrying attribute labels only.
        #[arg(long, default_value_t = 0)]
        attr_extra: usize,
        #[arg(long, default_value_t = 0.2)]
        val_frac: f64,
        #[arg(long, default_value_t = 0.2)]
        test_frac: f64,
        /// Embedding noise std.
        #[arg(long)]
        noise: Option<f64>,
        /// Per-image mean jitter, in units of the planted gap.
        #[arg(long)]
        mean_jitter: Option<f64>,
        /// Make composition effects style-dependent.
        #[arg(long)]
        interaction: bool,
    },
    /// Export generated weights of one aesthetic layer per image.
    ExportWeights {
        #[command(flatten)]
        opts: Overrides,
        /// 1-based layer index; the last layer by default.
        #[arg(long)]
        layer: Option<usize>,
    },
}

/// Flag overrides, one per config field. Unset flags are skipped when
/// merging.
#[derive(Debug, Default, Args, Serialize)]
pub struct Overrides {
    /// JSON config file.
    #[arg(long)]
    #[serde(skip)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub embedding_dim: Option<usize>,
    #[arg(long)]
    pub attribute_dim: Option<usize>,
    #[arg(long)]
    pub reduced_dim: Option<usize>,
    #[arg(long, value_delimiter = ',')]
    pub hidden_dims: Option<Vec<usize>>,
    #[arg(long)]
    pub buckets: Option<usize>,
    #[arg(long, value_delimiter = ',')]
    pub bucket_values: Option<Vec<f64>>,
    #[arg(long)]
    pub styles: Option<usize>,
    #[arg(long)]
    pub comps: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub attr_lr: Option<f64>,
    #[arg(long)]
    pub attr_epochs: Option<usize>,
    #[arg(long)]
    pub attr_decay_every: Option<usize>,
    #[arg(long)]
    pub attr_decay_factor: Option<f64>,
    #[arg(long)]
    pub style_weight: Option<f64>,
    #[arg(long)]
    pub comp_weight: Option<f64>,
    #[arg(long)]
    pub dropout: Option<f64>,
    #[arg(long)]
    pub comp_threshold: Option<f64>,
    #[arg(long)]
    pub hyper_lr: Option<f64>,
    #[arg(long)]
    pub hyper_epochs: Option<usize>,
    #[arg(long)]
    pub hyper_decay_every: Option<usize>,
    #[arg(long)]
    pub hyper_decay_factor: Option<f64>,
    #[arg(long)]
    pub emd_r: Option<f64>,
    /// root or power.
    #[arg(long)]
    pub emd_form: Option<String>,
    #[arg(long)]
    pub threshold: Option<f64>,
    /// full, attr_linear, mlp_only, style_only or comp_only.
    #[arg(long)]
    pub variant: Option<String>,
    #[arg(long)]
    pub embeddings: Option<PathBuf>,
    #[arg(long)]
    pub attributes: Option<PathBuf>,
    #[arg(long)]
    pub scores: Option<PathBuf>,
    #[arg(long)]
    pub split: Option<PathBuf>,
    #[arg(long)]
    pub attr_checkpoint: Option<PathBuf>,
    #[arg(long)]
    pub model: Option<PathBuf>,
}

impl Overrides {
    pub fn resolve(&self) -> Result<RunConfig> {
        if let Some(v) = &self.variant {
            v.parse::<VariantKind>()?;
        }
        let base = match &self.config {
            Some(p) => RunConfig::from_file(p)?,
            None => RunConfig::default(),
        };
        let cfg = base.merge(serde_json::to_value(self).expect("overrides serialize"))?;
        cfg.validate()?;
        Ok(cfg)
    }
}

/// Process exit code for a command result.
pub fn exit_code(result: &Result<()>) -> i32 {
    match result {
        Ok(()) => 0,
        Err(e) if e.is_validation() => 2,
        Err(_) => 1,
    }
}

pub fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::TrainAttributes { opts, epochs } => {
            let mut cfg = opts.resolve()?;
            if let Some(e) = epochs {
                cfg.attr_epochs = e;
            }
            cmd_train_attributes(&cfg)
        }
        Command::TrainAesthetic { opts, epochs } => {
            let mut cfg = opts.resolve()?;
            if let Some(e) = epochs {
                cfg.hyper_epochs = e;
            }
            cmd_train_aesthetic(&cfg)
        }
        Command::Evaluate {
            opts,
            by_attribute,
            baseline,
            part,
        } => cmd_evaluate(&opts.resolve()?, by_attribute, baseline, &part),
        Command::Predict { opts } => cmd_predict(&opts.resolve()?),
        Command::GenSynth {
            opts,
            n,
            attr_extra,
            val_frac,
            test_frac,
            noise,
            mean_jitter,
            interaction,
        } => {
            let cfg = opts.resolve()?;
            let mut syn = SyntheticConfig::new(n, cfg.embedding_dim, cfg.styles, cfg.comps, cfg.buckets, cfg.seed);
            if let Some(v) = noise {
                syn.noise = v;
            }
            if let Some(v) = mean_jitter {
                syn.mean_jitter = v;
            }
            syn.interaction = interaction;
            cmd_gen_synth(&cfg, &syn, attr_extra, val_frac, test_frac)
        }
        Command::ExportWeights { opts, layer } => cmd_export_weights(&opts.resolve()?, layer),
    }
}

fn require<'a>(p: &'a Option<PathBuf>, flag: &str) -> Result<&'a Path> {
    p.as_deref()
        .ok_or_else(|| Error::Config(format!("--{flag} is required")))
}

fn prepare_out(cfg: &RunConfig) -> Result<()> {
    std::fs::create_dir_all(&cfg.out).map_err(|e| Error::io(&cfg.out, e))?;
    cfg.write_resolved(&cfg.out)
}

/// Vectors keyed by image id.
type VectorMap = HashMap<String, Vec<f64>>;

fn embedding_map(cfg: &RunConfig, path: &Path) -> Result<VectorMap> {
    let list = load_embeddings(path)?;
    let mut map = HashMap::with_capacity(list.len());
    for e in list {
        if e.values.len() != cfg.embedding_dim {
            return Err(Error::Config(format!(
                "{}: embedding dim {} does not match configured embedding_dim {}",
                path.display(),
                e.values.len(),
                cfg.embedding_dim
            )));
        }
        map.insert(e.id, e.values);
    }
    Ok(map)
}

fn lookup<'a>(map: &'a VectorMap, id: &str) -> Result<&'a Vec<f64>> {
    map.get(id)
        .ok_or_else(|| Error::Invalid(format!("no embedding for image {id:?}")))
}

fn load_or_make_split(cfg: &RunConfig, ids: &[String]) -> Result<SplitSpec> {
    match &cfg.split {
        Some(p) => load_split(p),
        None => Ok(make_splits(ids, SplitSizes::Fractions { val: 0.05, test: 0.0 }, cfg.seed, 1)?.remove(0)),
    }
}

fn cmd_train_attributes(cfg: &RunConfig) -> Result<()> {
    let emb = embedding_map(cfg, require(&cfg.embeddings, "embeddings")?)?;
    let labels = load_attributes(require(&cfg.attributes, "attributes")?)?;
    let ids: Vec<String> = labels.iter().map(|l| l.id.clone()).collect();
    let split = load_or_make_split(cfg, &ids)?;
    let val: HashSet<&str> = split.val.iter().map(String::as_str).collect();
    let test: HashSet<&str> = split.test.iter().map(String::as_str).collect();
    let use_style = cfg.variant != VariantKind::CompOnly;
    let use_comp = cfg.variant != VariantKind::StyleOnly;

    let mut data = AttrTrainData {
        styles: cfg.styles,
        comps: cfg.comps,
        style_train: StyleSet::default(),
        comp_train: CompositionSet::default(),
        style_val: StyleSet::default(),
        comp_val: CompositionSet::default(),
    };
    for l in &labels {
        if test.contains(l.id.as_str()) {
            continue;
        }
        let is_val = val.contains(l.id.as_str());
        let e = lookup(&emb, &l.id)?;
        if let (Some(s), true) = (l.style, use_style) {
            if s >= cfg.styles {
                return Err(Error::Config(format!(
                    "image {} has style {s} but styles = {}",
                    l.id, cfg.styles
                )));
            }
            let set = if is_val {
                &mut data.style_val
            } else {
                &mut data.style_train
            };
            set.push(e.clone(), s);
        }
        if let (Some(c), true) = (&l.composition, use_comp) {
            if c.len() != cfg.comps {
                return Err(Error::Config(format!(
                    "image {} has {} composition bits but comps = {}",
                    l.id,
                    c.len(),
                    cfg.comps
                )));
            }
            let set = if is_val {
                &mut data.comp_val
            } else {
                &mut data.comp_train
            };
            set.push(e.clone(), c.clone());
        }
    }
    if data.style_train.is_empty() && data.comp_train.is_empty() {
        return Err(Error::Invalid("no labeled training images".into()));
    }
    prepare_out(cfg)?;

    let outcome = train_attribute_net(&data, &cfg.attr_train())?;
    log::info!("attribute network: best epoch {}", outcome.best_epoch);
    outcome.params.save(cfg.out.join("attr.ckpt"))?;
    store_attr_history(&outcome.history, cfg.out.join("attr_history.csv"))?;

    let (style_set, comp_set) = if data.style_val.is_empty() && data.comp_val.is_empty() {
        (&data.style_train, &data.comp_train)
    } else {
        (&data.style_val, &data.comp_val)
    };
    let mut csv = String::from("head,class,tp,fp,fn,tn\n");
    if !style_set.is_empty() {
        let x = Tensor::from_rows(&style_set.features)?;
        let preds: Vec<usize> = predict_attributes(&x, &outcome.params, cfg.comp_threshold)?
            .into_iter()
            .map(|p| p.style)
            .collect();
        let m = style_confusion(&preds, &style_set.labels, cfg.styles);
        let mut s = String::from("truth");
        for j in 0..cfg.styles {
            let _ = write!(s, ",pred{j}");
        }
        s.push('\n');
        for (i, row) in m.iter().enumerate() {
            let _ = write!(s, "{i}");
            for c in row {
                let _ = write!(s, ",{c}");
            }
            s.push('\n');
        }
        write_text(&cfg.out.join("style_confusion.csv"), &s)?;
    }
    if !comp_set.is_empty() {
        let x = Tensor::from_rows(&comp_set.features)?;
        let preds: Vec<Vec<bool>> = predict_attributes(&x, &outcome.params, cfg.comp_threshold)?
            .into_iter()
            .map(|p| p.composition)
            .collect();
        for (j, [tp, fp, fneg, tn]) in composition_confusion(&preds, &comp_set.labels).iter().enumerate() {
            let _ = writeln!(csv, "composition,{j},{tp},{fp},{fneg},{tn}");
        }
        write_text(&cfg.out.join("comp_confusion.csv"), &csv)?;
    }
    Ok(())
}

fn write_text(path: &Path, s: &str) -> Result<()> {
    std::fs::write(path, s).map_err(|e| Error::io(path, e))
}

fn aesthetic_set(ids: &[String], emb: &VectorMap, scores: &VectorMap) -> Result<AestheticSet> {
    let mut set = AestheticSet::default();
    for id in ids {
        let Some(q) = scores.get(id) else { continue };
        set.push(id.clone(), lookup(emb, id)?.clone(), q.clone());
    }
    Ok(set)
}

fn score_map(cfg: &RunConfig, path: &Path) -> Result<(Vec<ScoreDistribution>, VectorMap)> {
    let list = load_scores(path)?;
    for d in &list {
        if d.buckets() != cfg.buckets {
            return Err(Error::Config(format!(
                "{}: {} has {} buckets but buckets = {}",
                path.display(),
                d.id,
                d.buckets(),
                cfg.buckets
            )));
        }
    }
    let map = list.iter().map(|d| (d.id.clone(), d.probs.clone())).collect();
    Ok((list, map))
}

fn load_attr_checkpoint(cfg: &RunConfig) -> Result<AttributeNetParams> {
    let attr = AttributeNetParams::load(require(&cfg.attr_checkpoint, "attr-checkpoint")?)?;
    if attr.width() != cfg.attribute_dim {
        return Err(Error::Config(format!(
            "attribute checkpoint has E = {} but attribute_dim = {}",
            attr.width(),
            cfg.attribute_dim
        )));
    }
    if attr.input_dim() != cfg.embedding_dim {
        return Err(Error::Config(format!(
            "attribute checkpoint has D = {} but embedding_dim = {}",
            attr.input_dim(),
            cfg.embedding_dim
        )));
    }
    Ok(attr)
}

fn cmd_train_aesthetic(cfg: &RunConfig) -> Result<()> {
    let attr = if cfg.variant.uses_attributes() {
        Some(load_attr_checkpoint(cfg)?)
    } else {
        None
    };
    let emb = embedding_map(cfg, require(&cfg.embeddings, "embeddings")?)?;
    let (list, scores) = score_map(cfg, require(&cfg.scores, "scores")?)?;
    let ids: Vec<String> = list.iter().map(|d| d.id.clone()).collect();
    let split = load_or_make_split(cfg, &ids)?;
    let train = aesthetic_set(&split.train, &emb, &scores)?;
    let val = aesthetic_set(&split.val, &emb, &scores)?;
    if train.is_empty() {
        return Err(Error::Invalid("no scored training images".into()));
    }
    let model = build_variant(cfg.variant, &cfg.spec()?, attr, cfg.reduced_dim, cfg.seed)?;
    prepare_out(cfg)?;

    let outcome = train_hyper(model, &train, &val, &cfg.scale()?, &cfg.hyper_train())?;
    log::info!("aesthetic model: best epoch {}", outcome.best_epoch);
    outcome.model.save(cfg.out.join("model.ckpt"))?;
    store_hyper_history(&outcome.history, cfg.out.join("aesthetic_history.csv"))
}

fn load_model(cfg: &RunConfig) -> Result<AestheticModel> {
    let model = AestheticModel::load(require(&cfg.model, "model")?)?;
    if model.spec.input_dim() != cfg.embedding_dim || model.spec.buckets() != cfg.buckets {
        return Err(Error::Config(format!(
            "model expects D = {}, B = {} but config has embedding_dim = {}, buckets = {}",
            model.spec.input_dim(),
            model.spec.buckets(),
            cfg.embedding_dim,
            cfg.buckets
        )));
    }
    Ok(model)
}

fn cmd_evaluate(cfg: &RunConfig, by_attribute: bool, baseline: bool, part: &str) -> Result<()> {
    let model = if baseline { None } else { Some(load_model(cfg)?) };
    if by_attribute && model.as_ref().is_none_or(|m| m.attr.is_none()) {
        return Err(Error::Config(
            "--by-attribute needs a model with an attribute network".into(),
        ));
    }
    let emb = embedding_map(cfg, require(&cfg.embeddings, "embeddings")?)?;
    let (list, scores) = score_map(cfg, require(&cfg.scores, "scores")?)?;
    let all: Vec<String> = list.iter().map(|d| d.id.clone()).collect();
    let split = match &cfg.split {
        Some(p) => Some(load_split(p)?),
        None => None,
    };
    let ids: Vec<String> = match (part, &split) {
        ("all", _) | (_, None) => all.clone(),
        ("train", Some(s)) => s.train.clone(),
        ("val", Some(s)) => s.val.clone(),
        ("test", Some(s)) => s.test.clone(),
        (other, _) => return Err(Error::Config(format!("unknown part {other:?}"))),
    };
    let set = aesthetic_set(&ids, &emb, &scores)?;
    if set.is_empty() {
        return Err(Error::Invalid(format!("no scored images in part {part:?}")));
    }
    let scale = cfg.scale()?;
    let threshold = cfg.threshold()?;

    let preds: Vec<Vec<f64>> = match &model {
        Some(m) => {
            let p = m.predict(&Tensor::from_rows(&set.embeddings)?)?;
            (0..p.rows()).map(|i| p.row(i).to_vec()).collect()
        }
        None => {
            let eval_ids: HashSet<&str> = set.ids.iter().map(String::as_str).collect();
            let train: Vec<ScoreDistribution> = match &split {
                Some(s) => s
                    .train
                    .iter()
                    .filter_map(|id| {
                        scores.get(id).map(|q| ScoreDistribution {
                            id: id.clone(),
                            probs: q.clone(),
                        })
                    })
                    .collect(),
                None => list
                    .iter()
                    .filter(|d| !eval_ids.contains(d.id.as_str()))
                    .cloned()
                    .collect(),
            };
            baseline_predict(&train, &scale, &set.ids, cfg.seed)?
                .into_iter()
                .map(|d| d.probs)
                .collect()
        }
    };
    prepare_out(cfg)?;
    let report = evaluate(&preds, &set.targets, &scale, threshold)?;
    write_text(&cfg.out.join("report.txt"), &report.to_text())?;
    write_text(&cfg.out.join("report.csv"), &report.to_csv())?;
    log::info!("srocc {:.4} plcc {:.4} n {}", report.srocc, report.plcc, report.n);
    if by_attribute {
        let m = model.as_ref().unwrap();
        let attrs = predict_attributes(
            &Tensor::from_rows(&set.embeddings)?,
            m.attr.as_ref().unwrap(),
            cfg.comp_threshold,
        )?;
        let groups = evaluate_by_attribute(&preds, &set.targets, &attrs, &scale, threshold)?;
        write_text(&cfg.out.join("by_attribute.csv"), &metrics::by_attribute_csv(&groups))?;
        write_text(&cfg.out.join("by_attribute.txt"), &metrics::by_attribute_text(&groups))?;
    }
    Ok(())
}

fn cmd_predict(cfg: &RunConfig) -> Result<()> {
    let model = load_model(cfg)?;
    let list = load_embeddings(require(&cfg.embeddings, "embeddings")?)?;
    for e in &list {
        if e.values.len() != cfg.embedding_dim {
            return Err(Error::Config(format!(
                "embedding dim {} does not match embedding_dim {}",
                e.values.len(),
                cfg.embedding_dim
            )));
        }
    }
    let scale = cfg.scale()?;
    let threshold = cfg.threshold()?;
    prepare_out(cfg)?;

    let mut s = String::from("id");
    for i in 1..=cfg.buckets {
        let _ = write!(s, ",q{i}");
    }
    s.push_str(",mean,class,style,comp_bits\n");
    if !list.is_empty() {
        let rows: Vec<&[f64]> = list.iter().map(|e| e.values.as_slice()).collect();
        let x = Tensor::from_rows(&rows)?;
        let probs = model.predict(&x)?;
        let attrs = match &model.attr {
            Some(a) => Some(predict_attributes(&x, a, cfg.comp_threshold)?),
            None => None,
        };
        for (i, e) in list.iter().enumerate() {
            let q = probs.row(i);
            let _ = write!(s, "{}", e.id);
            for p in q {
                let _ = write!(s, ",{p}");
            }
            let _ = write!(s, ",{},{}", mean_score(q, &scale), classify(q, &scale, threshold));
            match &attrs {
                Some(a) => {
                    let bits: String = a[i].composition.iter().map(|&b| if b { '1' } else { '0' }).collect();
                    let _ = writeln!(s, ",{},{bits}", a[i].style);
                }
                None => s.push_str(",,\n"),
            }
        }
    }
    write_text(&cfg.out.join("predictions.csv"), &s)
}

fn cmd_gen_synth(
    cfg: &RunConfig,
    syn: &SyntheticConfig,
    attr_extra: usize,
    val_frac: f64,
    test_frac: f64,
) -> Result<()> {
    let data = synthetic::generate(syn)?;
    let extra = if attr_extra > 0 {
        Some(synthetic::generate(&SyntheticConfig {
            n: attr_extra,
            stream: 1,
            ..syn.clone()
        })?)
    } else {
        None
    };
    let ids: Vec<String> = data.embeddings.iter().map(|e| e.id.clone()).collect();
    let split = make_splits(
        &ids,
        SplitSizes::Fractions {
            val: val_frac,
            test: test_frac,
        },
        cfg.seed,
        1,
    )?
    .remove(0);
    prepare_out(cfg)?;

    let mut embeddings: Vec<EmbeddingVector> = data.embeddings;
    let mut attributes = data.attributes;
    if let Some(x) = extra {
        embeddings.extend(x.embeddings);
        attributes.extend(x.attributes);
    }
    store_embeddings(&embeddings, cfg.out.join("embeddings.csv"))?;
    store_attributes(&attributes, cfg.out.join("attributes.csv"))?;
    store_scores(&data.distributions, cfg.out.join("scores.csv"))?;
    store_split(&split, cfg.out.join("split.csv"))
}

fn cmd_export_weights(cfg: &RunConfig, layer: Option<usize>) -> Result<()> {
    let model = load_model(cfg)?;
    let list = load_embeddings(require(&cfg.embeddings, "embeddings")?)?;
    let layer = layer.unwrap_or(model.spec.layers());
    if layer == 0 || layer > model.spec.layers() {
        return Err(Error::Config(format!(
            "layer {layer} out of range 1..={}",
            model.spec.layers()
        )));
    }
    prepare_out(cfg)?;
    export_generated_weights(&model, &list, layer, cfg.out.join("weights.csv"))?;
    Ok(())
}
