//! End-to-end acceptance run. Prints one PASS/FAIL line per criterion and
//! exits non-zero if any criterion fails.
//!
//! Run with `cargo test -p aesthyper --test acceptance`.

mod common;

use std::time::Instant;

use aesthyper::attribute::AttributeNetParams;
use aesthyper::data::mlsp::{ActivationMap, ActivationSet, DEFAULT_CHANNELS, DEFAULT_EMBEDDING_DIM};
use aesthyper::data::{gen_synthetic, mlsp_pool};
use aesthyper::hyper::{
    build_variant, hyper_generate, train_hyper, AestheticNetSpec, AestheticSet, HyperNet, HyperTrainConfig, VariantKind,
};
use aesthyper::metrics;
use aesthyper::nn::{emd_loss, AdamConfig, StepDecay};
use common::experiment::{self, RunResult, Setup};
use common::{gradcheck, median, oracles, pipeline, random_distribution, uniform};
use rand::Rng as _;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome {
        pass,
        detail: detail.into(),
    }
}

fn gradients() -> Outcome {
    let t = Instant::now();
    let results = gradcheck::suite();
    let secs = t.elapsed().as_secs_f64();
    let (worst_name, worst) = results
        .iter()
        .copied()
        .fold(("", 0.0), |a, b| if b.1 > a.1 { b } else { a });
    outcome(
        worst < gradcheck::TOLERANCE && secs < 30.0,
        format!(
            "{} checks x {} trials, worst rel err {worst:.2e} ({worst_name}), {secs:.1}s",
            results.len(),
            gradcheck::TRIALS
        ),
    )
}

fn emd_oracle() -> Outcome {
    let mut r = common::rng("acceptance-emd");
    let mut worst: f64 = 0.0;
    for _ in 0..1000 {
        let b = r.random_range(2..=12);
        let p = random_distribution(&mut r, b);
        let q = random_distribution(&mut r, b);
        for exp in [1.0, 2.0] {
            worst = worst.max((emd_loss(&p, &q, exp).unwrap() - oracles::emd_naive(&p, &q, exp)).abs());
        }
    }
    let mut a = vec![0.0; 10];
    let mut b = vec![0.0; 10];
    a[0] = 1.0;
    b[1] = 1.0;
    let e1 = emd_loss(&a, &b, 1.0).unwrap();
    let e2 = emd_loss(&a, &b, 2.0).unwrap();
    let worked = (e1 - 0.1).abs() <= 1e-12 && (e2 - 0.1f64.sqrt()).abs() <= 1e-12;
    outcome(
        worst <= 1e-12 && worked,
        format!("1000 pairs, max diff {worst:.1e}; one-bucket shift gives {e1} / {e2:.15}"),
    )
}

fn metric_oracles() -> Outcome {
    let mut r = common::rng("acceptance-metrics");
    let mut worst_srocc: f64 = 0.0;
    let mut worst_plcc: f64 = 0.0;
    let mut rmse_ok = true;
    let mut trials = 0;
    while trials < 100 {
        // small integer grid plants ties
        let a: Vec<f64> = (0..50).map(|_| f64::from(r.random_range(0..10))).collect();
        let b: Vec<f64> = (0..50).map(|_| f64::from(r.random_range(0..10))).collect();
        if a.iter().all(|&v| v == a[0]) || b.iter().all(|&v| v == b[0]) {
            continue;
        }
        trials += 1;
        let s = metrics::srocc(&a, &b).unwrap();
        worst_srocc = worst_srocc.max((s - oracles::spearman_naive(&a, &b)).abs());

        let x = uniform(&mut r, 50, -5.0, 5.0);
        let slope = r.random_range(0.1..10.0);
        let shift = r.random_range(-5.0..5.0);
        let y: Vec<f64> = x.iter().map(|v| slope * v + shift).collect();
        worst_plcc = worst_plcc.max((metrics::plcc(&x, &y).unwrap() - 1.0).abs());

        let y = uniform(&mut r, 50, -5.0, 5.0);
        rmse_ok &= metrics::rmse(&x, &y).unwrap() >= metrics::mae(&x, &y).unwrap();
    }
    outcome(
        worst_srocc <= 1e-9 && worst_plcc <= 1e-12 && rmse_ok,
        format!("srocc max diff {worst_srocc:.1e}, |plcc - 1| max {worst_plcc:.1e}, rmse >= mae: {rmse_ok}"),
    )
}

fn overfit() -> Outcome {
    let t = Instant::now();
    let seed = 7;
    let data = gen_synthetic(32, 32, 4, 3, 5, seed).unwrap();
    let mut set = AestheticSet::default();
    for (e, q) in data.embeddings.iter().zip(&data.distributions) {
        set.push(e.id.clone(), e.values.clone(), q.probs.clone());
    }
    let attr = AttributeNetParams::init(32, 16, 4, 3, seed);
    let spec = AestheticNetSpec::new(vec![32, 16, 8, 5]).unwrap();
    let model = build_variant(VariantKind::Full, &spec, Some(attr), 8, seed).unwrap();
    let cfg = HyperTrainConfig {
        epochs: 500,
        batch_size: 8,
        adam: AdamConfig {
            lr: 1e-3,
            ..AdamConfig::default()
        },
        decay: StepDecay::none(),
        seed,
        ..HyperTrainConfig::default()
    };
    let scale = data.planted.scale.clone();
    let out = train_hyper(model, &set, &AestheticSet::default(), &scale, &cfg).unwrap();
    let secs = t.elapsed().as_secs_f64();
    let last = out.history.last().unwrap().val_emd_r1;
    outcome(
        last < 0.02 && secs < 60.0,
        format!("train EMD(r=1) after 500 epochs {last:.4}, {secs:.1}s"),
    )
}

fn run_seeds(setup: &Setup) -> Vec<RunResult> {
    let dir = tempfile::tempdir().unwrap();
    let kinds = [VariantKind::Full, VariantKind::AttrLinear, VariantKind::MlpOnly];
    (1..=5)
        .map(|seed| {
            let r = experiment::run(setup, seed, &kinds, dir.path());
            println!(
                "    seed {seed}: full {:.4} attr_linear {:.4} mlp_only {:.4}, weight ratio {:.3}",
                r.variants["full"].test_srocc,
                r.variants["attr_linear"].test_srocc,
                r.variants["mlp_only"].test_srocc,
                r.weight_ratio
            );
            r
        })
        .collect()
}

fn median_of(runs: &[RunResult], kind: &str) -> f64 {
    median(&runs.iter().map(|r| r.variants[kind].test_srocc).collect::<Vec<_>>())
}

fn conditioning(runs: &[RunResult], setup: &Setup) -> Outcome {
    let srocc = median_of(runs, "full");
    let ratio = median(&runs.iter().map(|r| r.weight_ratio).collect::<Vec<_>>());
    outcome(
        srocc >= 0.85 && ratio > 1.5,
        format!(
            "median over 5 seeds: full test srocc {srocc:.4} ({} epochs), last-layer weight ratio {ratio:.3}",
            setup.epochs
        ),
    )
}

fn ablation(runs: &[RunResult]) -> Outcome {
    let full = median_of(runs, "full");
    let linear = median_of(runs, "attr_linear");
    let mlp = median_of(runs, "mlp_only");
    outcome(
        full >= linear && linear >= mlp,
        format!("median srocc full {full:.4}, attr_linear {linear:.4}, mlp_only {mlp:.4}"),
    )
}

fn invariances() -> Outcome {
    let spec = AestheticNetSpec::new(vec![32, 16, 8, 5]).unwrap();
    let mut r = common::rng("acceptance-invariance");
    let h = HyperNet::init(&spec, 16, 8, &mut r);
    let mut worst_scale: f64 = 0.0;
    let mut generated = Vec::with_capacity(100);
    for _ in 0..100 {
        let e = uniform(&mut r, 16, 0.0, 3.0);
        let base = hyper_generate(&e, &h).unwrap();
        for c in [1e-3, 0.5, 7.0, 1e3] {
            let scaled: Vec<f64> = e.iter().map(|v| v * c).collect();
            worst_scale = worst_scale.max(base.max_abs_diff(&hyper_generate(&scaled, &h).unwrap()));
        }
        generated.push(base);
    }
    let mut closest = f64::INFINITY;
    for i in 0..generated.len() {
        for j in i + 1..generated.len() {
            closest = closest.min(generated[i].max_abs_diff(&generated[j]));
        }
    }
    outcome(
        worst_scale <= 1e-9 && closest > 1e-6,
        format!("scale drift {worst_scale:.1e}, closest pair of 100 differs by {closest:.3e}"),
    )
}

fn baseline() -> Outcome {
    let data = gen_synthetic(1000, 16, 4, 3, 10, 8).unwrap();
    let scale = &data.planted.scale;
    let (train, test) = data.distributions.split_at(500);
    let ids: Vec<String> = test.iter().map(|q| q.id.clone()).collect();
    let preds = metrics::baseline_predict(train, scale, &ids, 8).unwrap();
    let train_mean = train.iter().map(|q| scale.mean(&q.probs)).sum::<f64>() / train.len() as f64;
    let pred_means: Vec<f64> = preds.iter().map(|q| scale.mean(&q.probs)).collect();
    let true_means: Vec<f64> = test.iter().map(|q| scale.mean(&q.probs)).collect();
    let drift = pred_means.iter().map(|m| (m - train_mean).abs()).fold(0.0, f64::max);
    let srocc = metrics::srocc(&pred_means, &true_means).unwrap();
    outcome(
        srocc.abs() < 0.1 && drift <= 0.05,
        format!("500 train / 500 test: srocc {srocc:.4}, max |mu - train mean| {drift:.1e}"),
    )
}

fn determinism() -> Outcome {
    let tmp = tempfile::tempdir().unwrap();
    pipeline::full_pipeline(tmp.path());
    let first = pipeline::snapshot(tmp.path());
    pipeline::full_pipeline(tmp.path());
    let second = pipeline::snapshot(tmp.path());
    let differing: Vec<String> = first
        .iter()
        .filter(|(k, v)| second.get(*k) != Some(v))
        .map(|(k, _)| k.display().to_string())
        .collect();
    let same_files = first.len() == second.len();
    outcome(
        same_files && differing.is_empty(),
        format!(
            "{} artifacts over 7 commands compared, {} differ{}",
            first.len(),
            differing.len(),
            if differing.is_empty() {
                String::new()
            } else {
                format!(": {}", differing.join(", "))
            }
        ),
    )
}

fn mlsp() -> Outcome {
    // block resolutions for a 256x320 input
    let sizes = [(64, 80), (32, 40), (16, 20), (16, 20), (8, 10)];
    let maps = DEFAULT_CHANNELS
        .iter()
        .zip(sizes)
        .enumerate()
        .map(|(i, (&c, (h, w)))| ActivationMap::constant(h, w, c, 0.1 * (i + 1) as f64 + 1.0 / 3.0).unwrap())
        .collect::<Vec<_>>();
    let e = mlsp_pool(&ActivationSet {
        image_id: "img".into(),
        maps: maps.clone(),
    })
    .unwrap();
    let mut exact = true;
    let mut offset = 0;
    for m in &maps {
        exact &= e.values[offset..offset + m.channels].iter().all(|&v| v == m.data[0]);
        offset += m.channels;
    }
    outcome(
        e.values.len() == DEFAULT_EMBEDDING_DIM && exact,
        format!("pooled dim {}, constant maps pool exactly: {exact}", e.values.len()),
    )
}

fn main() {
    let setup = Setup::default();
    let mut results: Vec<(&str, Outcome)> = vec![
        ("gradient suite", gradients()),
        ("EMD oracle", emd_oracle()),
        ("metric oracles", metric_oracles()),
        ("overfit", overfit()),
    ];
    println!("  synthetic runs (5 seeds):");
    let runs = run_seeds(&setup);
    results.push(("conditioning", conditioning(&runs, &setup)));
    results.push(("ablation direction", ablation(&runs)));
    results.push(("hypernetwork invariances", invariances()));
    results.push(("baseline sanity", baseline()));
    results.push(("determinism", determinism()));
    results.push(("MLSP pooling", mlsp()));

    let mut failed = 0;
    for (i, (name, o)) in results.iter().enumerate() {
        println!(
            "{} [{}] {name}: {}",
            if o.pass { "PASS" } else { "FAIL" },
            i + 1,
            o.detail
        );
        failed += usize::from(!o.pass);
    }
    println!("{} of {} criteria passed", results.len() - failed, results.len());
    if failed > 0 {
        std::process::exit(1);
    }
}
