//! Central finite-difference checks of the tape gradients.
//!
//! Each check draws random inputs, records a scalar loss on a fresh graph,
//! and compares the backward-pass gradient of every tracked input with
//! `(f(x + h) - f(x - h)) / 2h`. The error of one trial is
//! `|g_analytic - g_numeric| / max(|g_analytic|, |g_numeric|)` over the
//! concatenated gradient vector.

use aesthyper::attribute::AttributeNetParams;
use aesthyper::hyper::{
    aesthetic_forward, hyper_generate, AestheticHead, AestheticModel, AestheticNetSpec, HyperNet, VariantKind,
};
use aesthyper::nn::{emd_loss, EmdForm, Graph, ParamSet, Tensor, Var};
use aesthyper::rng::Rng;
use aesthyper::Result;
use rand::Rng as _;

use super::{random_distribution, rng, uniform};

pub const STEP: f64 = 1e-5;
pub const TOLERANCE: f64 = 1e-4;
pub const TRIALS: usize = 50;

pub fn relative_error(a: &[f64], n: &[f64]) -> f64 {
    assert_eq!(a.len(), n.len());
    let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
    let diff: Vec<f64> = a.iter().zip(n).map(|(x, y)| x - y).collect();
    let scale = norm(a).max(norm(n));
    if scale < 1e-12 {
        return norm(&diff);
    }
    norm(&diff) / scale
}

fn eval<F>(inputs: &[Tensor], build: &F) -> f64
where
    F: Fn(&mut Graph<'_>, &[Var]) -> Result<Var>,
{
    let mut g = Graph::new();
    let vars: Vec<Var> = inputs.iter().map(|t| g.variable(t.clone())).collect();
    let loss = build(&mut g, &vars).unwrap();
    g.value(loss).data()[0]
}

/// Gradient error of one trial over all of `inputs`.
pub fn check<F>(inputs: &[Tensor], build: F) -> f64
where
    F: Fn(&mut Graph<'_>, &[Var]) -> Result<Var>,
{
    let mut g = Graph::new();
    let vars: Vec<Var> = inputs.iter().map(|t| g.variable(t.clone())).collect();
    let loss = build(&mut g, &vars).unwrap();
    let grads = g.backward(loss).unwrap();
    let mut analytic = Vec::new();
    for (v, t) in vars.iter().zip(inputs) {
        match grads.get(*v) {
            Some(d) => analytic.extend_from_slice(d.data()),
            None => analytic.extend(std::iter::repeat_n(0.0, t.numel())),
        }
    }

    let mut xs = inputs.to_vec();
    let mut numeric = Vec::with_capacity(analytic.len());
    for i in 0..xs.len() {
        for j in 0..xs[i].numel() {
            let orig = xs[i].data()[j];
            xs[i].data_mut()[j] = orig + STEP;
            let up = eval(&xs, &build);
            xs[i].data_mut()[j] = orig - STEP;
            let down = eval(&xs, &build);
            xs[i].data_mut()[j] = orig;
            numeric.push((up - down) / (2.0 * STEP));
        }
    }
    relative_error(&analytic, &numeric)
}

fn tensor(r: &mut Rng, shape: &[usize]) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), uniform(r, n, -1.5, 1.5)).unwrap()
}

/// Values bounded away from zero so no ReLU kink is within `STEP`.
fn off_zero(r: &mut Rng, shape: &[usize]) -> Tensor {
    let n = shape.iter().product();
    let data = (0..n)
        .map(|_| {
            let m = r.random_range(0.05..1.5);
            if r.random_bool(0.5) {
                m
            } else {
                -m
            }
        })
        .collect();
    Tensor::new(shape.to_vec(), data).unwrap()
}

/// Weighted sum so every output element gets a distinct upstream gradient.
fn weighted_sum(g: &mut Graph<'_>, y: Var, weights: &[f64]) -> Result<Var> {
    let m = g.mul_const(y, weights.to_vec())?;
    Ok(g.sum(m))
}

fn worst(trials: impl Iterator<Item = f64>) -> f64 {
    trials.fold(0.0, f64::max)
}

pub fn linear(trials: usize) -> f64 {
    let mut r = rng("grad-linear");
    worst((0..trials).map(|_| {
        let inputs = [tensor(&mut r, &[3, 4]), tensor(&mut r, &[4, 5]), tensor(&mut r, &[5])];
        let c = uniform(&mut r, 15, -1.0, 1.0);
        check(&inputs, |g, v| {
            let y = g.linear(v[0], v[1], v[2])?;
            weighted_sum(g, y, &c)
        })
    }))
}

pub fn relu(trials: usize) -> f64 {
    let mut r = rng("grad-relu");
    worst((0..trials).map(|_| {
        let inputs = [off_zero(&mut r, &[4, 6])];
        let c = uniform(&mut r, 24, -1.0, 1.0);
        check(&inputs, |g, v| {
            let y = g.relu(v[0]);
            weighted_sum(g, y, &c)
        })
    }))
}

pub fn softmax_chain(trials: usize) -> f64 {
    let mut r = rng("grad-softmax");
    worst((0..trials).map(|_| {
        let (w, b) = (tensor(&mut r, &[5, 6]), tensor(&mut r, &[6]));
        let inputs = [tensor(&mut r, &[3, 5]), w, b];
        let c = uniform(&mut r, 18, -1.0, 1.0);
        check(&inputs, |g, v| {
            let z = g.linear(v[0], v[1], v[2])?;
            let p = g.softmax(z);
            weighted_sum(g, p, &c)
        })
    }))
}

pub fn l2_normalize(trials: usize) -> f64 {
    let mut r = rng("grad-l2");
    worst((0..trials).map(|_| {
        let inputs = [tensor(&mut r, &[3, 5])];
        let c = uniform(&mut r, 15, -1.0, 1.0);
        check(&inputs, |g, v| {
            let y = g.l2_normalize(v[0])?;
            weighted_sum(g, y, &c)
        })
    }))
}

pub fn cross_entropy(trials: usize) -> f64 {
    let mut r = rng("grad-ce");
    worst((0..trials).map(|_| {
        let inputs = [tensor(&mut r, &[4, 6])];
        let targets: Vec<usize> = (0..4).map(|_| r.random_range(0..6)).collect();
        check(&inputs, |g, v| g.cross_entropy(v[0], &targets))
    }))
}

pub fn binary_cross_entropy(trials: usize) -> f64 {
    let mut r = rng("grad-bce");
    worst((0..trials).map(|_| {
        let inputs = [tensor(&mut r, &[4, 5])];
        let targets: Vec<f64> = (0..20).map(|_| f64::from(u8::from(r.random_bool(0.4)))).collect();
        check(&inputs, |g, v| g.binary_cross_entropy(v[0], &targets))
    }))
}

/// Softmax then EMD against random targets. For `r = 1` the loss has a
/// kink wherever two CDFs cross, so trials with a crossing closer than
/// `1e-3` are redrawn.
pub fn emd(trials: usize, exponent: f64, form: EmdForm) -> f64 {
    let mut r = rng(&format!("grad-emd-{exponent}-{form:?}"));
    let (n, b) = (3, 6);
    let mut errs = Vec::with_capacity(trials);
    while errs.len() < trials {
        let logits = tensor(&mut r, &[n, b]);
        let target: Vec<f64> = (0..n).flat_map(|_| random_distribution(&mut r, b)).collect();
        if exponent == 1.0 && min_cdf_gap(&logits, &target, b) < 1e-3 {
            continue;
        }
        errs.push(check(&[logits], |g, v| {
            let p = g.softmax(v[0]);
            g.emd(p, &target, exponent, form)
        }));
    }
    worst(errs.into_iter())
}

fn min_cdf_gap(logits: &Tensor, target: &[f64], b: usize) -> f64 {
    let p = aesthyper::nn::softmax(logits);
    let mut gap = f64::INFINITY;
    for (pr, qr) in p.data().chunks(b).zip(target.chunks(b)) {
        let (mut cp, mut cq) = (0.0, 0.0);
        for k in 0..b - 1 {
            cp += pr[k];
            cq += qr[k];
            gap = gap.min((cp - cq).abs());
        }
    }
    gap
}

/// Per-row matvec, row gather, and elementwise add/scale in one chain.
pub fn plumbing(trials: usize) -> f64 {
    let mut r = rng("grad-plumbing");
    worst((0..trials).map(|_| {
        let inputs = [
            tensor(&mut r, &[3, 4]),
            tensor(&mut r, &[3, 12]),
            tensor(&mut r, &[3, 3]),
        ];
        let rows: Vec<usize> = (0..5).map(|_| r.random_range(0..3)).collect();
        let c = uniform(&mut r, 15, -1.0, 1.0);
        check(&inputs, |g, v| {
            let h = g.batch_matvec(v[0], v[1], 4, 3)?;
            let h = g.add(h, v[2])?;
            let h = g.scale(h, -0.7);
            let h = g.gather_rows(h, &rows)?;
            weighted_sum(g, h, &c)
        })
    }))
}

/// Hypernetwork generation, the generated aesthetic MLP and the EMD loss,
/// differentiated through the graph and checked against finite
/// differences of the direct (graph-free) implementation.
pub fn composite(trials: usize) -> f64 {
    let mut r = rng("grad-composite");
    let spec = AestheticNetSpec::new(vec![6, 4, 3]).unwrap();
    let (e, d, n) = (5, 2, 2);
    worst((0..trials).map(|t| {
        let head = HyperNet::init(&spec, e, d, &mut r);
        let model = AestheticModel {
            kind: VariantKind::Full,
            spec: spec.clone(),
            attr: Some(AttributeNetParams::init(6, e, 3, 2, t as u64)),
            head: AestheticHead::Hyper(head),
        };
        let e_b = tensor(&mut r, &[n, 6]);
        let e_s = tensor(&mut r, &[n, e]);
        let target: Vec<f64> = (0..n).flat_map(|_| random_distribution(&mut r, 3)).collect();
        composite_trial(model, &e_b, &e_s, &target)
    }))
}

fn direct_loss(model: &AestheticModel, e_b: &Tensor, e_s: &Tensor, target: &[f64]) -> f64 {
    let AestheticHead::Hyper(h) = &model.head else {
        unreachable!()
    };
    let b = model.spec.buckets();
    let total: f64 = (0..e_b.rows())
        .map(|i| {
            let gp = hyper_generate(e_s.row(i), h).unwrap();
            let q = aesthetic_forward(e_b.row(i), &gp).unwrap();
            emd_loss(&q, &target[i * b..(i + 1) * b], 2.0).unwrap()
        })
        .sum();
    total / e_b.rows() as f64
}

fn composite_trial(mut model: AestheticModel, e_b: &Tensor, e_s: &Tensor, target: &[f64]) -> f64 {
    let analytic = {
        let mut g = Graph::new();
        let x = g.input(e_b.clone());
        let es = g.variable(e_s.clone());
        let (probs, vars) = model.forward(&mut g, x, Some(es), true).unwrap();
        let loss = g.emd(probs, target, 2.0, EmdForm::Root).unwrap();
        let grads = g.backward(loss).unwrap();
        let mut out = Vec::new();
        for v in vars.iter().chain([&es]) {
            out.extend_from_slice(grads.get(*v).unwrap().data());
        }
        out
    };

    let mut numeric = Vec::with_capacity(analytic.len());
    let count = model.params_mut().len();
    for k in 0..count {
        let len = model.params_mut()[k].numel();
        for j in 0..len {
            let orig = model.params_mut()[k].data()[j];
            model.params_mut()[k].data_mut()[j] = orig + STEP;
            let up = direct_loss(&model, e_b, e_s, target);
            model.params_mut()[k].data_mut()[j] = orig - STEP;
            let down = direct_loss(&model, e_b, e_s, target);
            model.params_mut()[k].data_mut()[j] = orig;
            numeric.push((up - down) / (2.0 * STEP));
        }
    }
    let mut es = e_s.clone();
    for j in 0..es.numel() {
        let orig = es.data()[j];
        es.data_mut()[j] = orig + STEP;
        let up = direct_loss(&model, e_b, &es, target);
        es.data_mut()[j] = orig - STEP;
        let down = direct_loss(&model, e_b, &es, target);
        es.data_mut()[j] = orig;
        numeric.push((up - down) / (2.0 * STEP));
    }
    relative_error(&analytic, &numeric)
}

/// Every check at `TRIALS` trials: `(name, worst error)`.
pub fn suite() -> Vec<(&'static str, f64)> {
    vec![
        ("linear", linear(TRIALS)),
        ("relu", relu(TRIALS)),
        ("softmax chain", softmax_chain(TRIALS)),
        ("l2-normalize", l2_normalize(TRIALS)),
        ("cross-entropy", cross_entropy(TRIALS)),
        ("bce", binary_cross_entropy(TRIALS)),
        ("emd r=1", emd(TRIALS, 1.0, EmdForm::Root)),
        ("emd r=2", emd(TRIALS, 2.0, EmdForm::Root)),
        ("emd r=2 power", emd(TRIALS, 2.0, EmdForm::Power)),
        ("matvec/gather/add/scale", plumbing(TRIALS)),
        ("hyper composite", composite(TRIALS)),
    ]
}
