//! Evaluation metrics, the mean-score baseline, and report formatting.
//!
//! Distribution-level predictions are reduced to mean scores over the
//! bucket scale; correlations are computed on those means. Binary accuracy
//! thresholds both predicted and ground-truth means at the same `T`.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::attribute::AttributePrediction;
use crate::data::distribution::mean_matched_gaussian;
use crate::data::{BucketScale, ScoreDistribution};
use crate::error::{Error, Result};
use crate::nn::emd_loss;
use crate::rng;

fn check_pair(op: &'static str, a: &[f64], b: &[f64], min: usize) -> Result<()> {
    if a.len() != b.len() {
        return Err(Error::Shape {
            op,
            left: vec![a.len()],
            right: vec![b.len()],
        });
    }
    if a.len() < min {
        return Err(Error::Invalid(format!(
            "{op} needs at least {min} values, got {}",
            a.len()
        )));
    }
    Ok(())
}

fn pearson(op: &'static str, a: &[f64], b: &[f64]) -> Result<f64> {
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        let (dx, dy) = (x - ma, y - mb);
        sab += dx * dy;
        saa += dx * dx;
        sbb += dy * dy;
    }
    if saa == 0.0 || sbb == 0.0 {
        return Err(Error::Degenerate(format!("{op} is undefined for a constant vector")));
    }
    Ok((sab / (saa * sbb).sqrt()).clamp(-1.0, 1.0))
}

/// 1-based ranks with tied values sharing the average of their positions.
pub fn average_ranks(x: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..x.len()).collect();
    order.sort_by(|&i, &j| x[i].total_cmp(&x[j]));
    let mut ranks = vec![0.0; x.len()];
    let mut start = 0;
    while start < order.len() {
        let mut end = start + 1;
        while end < order.len() && x[order[end]] == x[order[start]] {
            end += 1;
        }
        let avg = (start + end + 1) as f64 / 2.0;
        for &k in &order[start..end] {
            ranks[k] = avg;
        }
        start = end;
    }
    ranks
}

/// Spearman rank correlation.
pub fn srocc(pred: &[f64], truth: &[f64]) -> Result<f64> {
    check_pair("srocc", pred, truth, 2)?;
    pearson("srocc", &average_ranks(pred), &average_ranks(truth))
}

/// Pearson linear correlation.
pub fn plcc(pred: &[f64], truth: &[f64]) -> Result<f64> {
    check_pair("plcc", pred, truth, 2)?;
    pearson("plcc", pred, truth)
}

pub fn mae(pred: &[f64], truth: &[f64]) -> Result<f64> {
    check_pair("mae", pred, truth, 1)?;
    Ok(pred.iter().zip(truth).map(|(p, t)| (p - t).abs()).sum::<f64>() / pred.len() as f64)
}

pub fn rmse(pred: &[f64], truth: &[f64]) -> Result<f64> {
    check_pair("rmse", pred, truth, 1)?;
    let mse = pred.iter().zip(truth).map(|(p, t)| (p - t).powi(2)).sum::<f64>() / pred.len() as f64;
    Ok(mse.sqrt())
}

/// Fraction of matching binary labels.
pub fn accuracy(pred: &[bool], truth: &[bool]) -> Result<f64> {
    if pred.len() != truth.len() {
        return Err(Error::Shape {
            op: "accuracy",
            left: vec![pred.len()],
            right: vec![truth.len()],
        });
    }
    if pred.is_empty() {
        return Err(Error::Invalid("accuracy on empty input".into()));
    }
    Ok(pred.iter().zip(truth).filter(|(a, b)| a == b).count() as f64 / pred.len() as f64)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub accuracy: f64,
    /// NaN when undefined (constant predicted or true means).
    pub srocc: f64,
    /// NaN when undefined.
    pub plcc: f64,
    pub mae: f64,
    pub rmse: f64,
    pub emd_r1: f64,
    pub n: usize,
}

impl MetricsReport {
    pub fn rows(&self) -> [(&'static str, f64); 6] {
        [
            ("accuracy", self.accuracy),
            ("srocc", self.srocc),
            ("plcc", self.plcc),
            ("mae", self.mae),
            ("rmse", self.rmse),
            ("emd_r1", self.emd_r1),
        ]
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        for (name, v) in self.rows() {
            let _ = writeln!(s, "{name:<10}{v:>12.6}");
        }
        let _ = writeln!(s, "{:<10}{:>12}", "n", self.n);
        s
    }

    /// `metric,value` rows.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("metric,value\n");
        for (name, v) in self.rows() {
            let _ = writeln!(s, "{name},{v}");
        }
        let _ = writeln!(s, "n,{}", self.n);
        s
    }
}

fn correlation_or_nan(name: &str, r: Result<f64>) -> f64 {
    r.unwrap_or_else(|e| {
        log::warn!("{name}: {e}; reported as NaN");
        f64::NAN
    })
}

/// All six metrics for aligned predicted and ground-truth distributions.
pub fn evaluate(preds: &[Vec<f64>], truths: &[Vec<f64>], scale: &BucketScale, threshold: f64) -> Result<MetricsReport> {
    if preds.len() != truths.len() {
        return Err(Error::Shape {
            op: "evaluate",
            left: vec![preds.len()],
            right: vec![truths.len()],
        });
    }
    if preds.is_empty() {
        return Err(Error::Invalid("evaluate on empty input".into()));
    }
    for q in preds.iter().chain(truths) {
        if q.len() != scale.len() {
            return Err(Error::Shape {
                op: "evaluate",
                left: vec![scale.len()],
                right: vec![q.len()],
            });
        }
    }
    let mu_pred: Vec<f64> = preds.iter().map(|q| scale.mean(q)).collect();
    let mu_true: Vec<f64> = truths.iter().map(|q| scale.mean(q)).collect();
    let cls_pred: Vec<bool> = mu_pred.iter().map(|&m| m > threshold).collect();
    let cls_true: Vec<bool> = mu_true.iter().map(|&m| m > threshold).collect();
    let mut emd = 0.0;
    for (p, t) in preds.iter().zip(truths) {
        emd += emd_loss(p, t, 1.0)?;
    }
    let (srocc, plcc) = if preds.len() >= 2 {
        (
            correlation_or_nan("srocc", srocc(&mu_pred, &mu_true)),
            correlation_or_nan("plcc", plcc(&mu_pred, &mu_true)),
        )
    } else {
        (f64::NAN, f64::NAN)
    };
    Ok(MetricsReport {
        accuracy: accuracy(&cls_pred, &cls_true)?,
        srocc,
        plcc,
        mae: mae(&mu_pred, &mu_true)?,
        rmse: rmse(&mu_pred, &mu_true)?,
        emd_r1: emd / preds.len() as f64,
        n: preds.len(),
    })
}

/// Groups items by predicted style (`style:k`) and by each predicted
/// composition class (`comp:j`; an item joins every group whose bit is
/// set) and evaluates each group. Groups with fewer than two items are
/// skipped.
pub fn evaluate_by_attribute(
    preds: &[Vec<f64>],
    truths: &[Vec<f64>],
    attrs: &[AttributePrediction],
    scale: &BucketScale,
    threshold: f64,
) -> Result<BTreeMap<String, MetricsReport>> {
    if attrs.len() != preds.len() {
        return Err(Error::Shape {
            op: "evaluate_by_attribute",
            left: vec![preds.len()],
            right: vec![attrs.len()],
        });
    }
    let mut groups: BTreeMap<String, Vec<usize>> = BTreeMap::new();
    for (i, a) in attrs.iter().enumerate() {
        groups.entry(format!("style:{}", a.style)).or_default().push(i);
        for (j, _) in a.composition.iter().enumerate().filter(|(_, &b)| b) {
            groups.entry(format!("comp:{j}")).or_default().push(i);
        }
    }
    let mut out = BTreeMap::new();
    for (key, idx) in groups {
        if idx.len() < 2 {
            log::warn!("attribute group {key} has {} item(s); skipped", idx.len());
            continue;
        }
        let p: Vec<Vec<f64>> = idx.iter().map(|&i| preds[i].clone()).collect();
        let t: Vec<Vec<f64>> = idx.iter().map(|&i| truths[i].clone()).collect();
        out.insert(key, evaluate(&p, &t, scale, threshold)?);
    }
    Ok(out)
}

/// `attribute,metric,value` rows.
pub fn by_attribute_csv(reports: &BTreeMap<String, MetricsReport>) -> String {
    let mut s = String::from("attribute,metric,value\n");
    for (key, r) in reports {
        for (name, v) in r.rows() {
            let _ = writeln!(s, "{key},{name},{v}");
        }
        let _ = writeln!(s, "{key},n,{}", r.n);
    }
    s
}

pub fn by_attribute_text(reports: &BTreeMap<String, MetricsReport>) -> String {
    let mut s = format!("{:<12}", "attribute");
    for name in ["accuracy", "srocc", "plcc", "mae", "rmse", "emd_r1"] {
        let _ = write!(s, "{name:>10}");
    }
    let _ = writeln!(s, "{:>8}", "n");
    for (key, r) in reports {
        let _ = write!(s, "{key:<12}");
        for (_, v) in r.rows() {
            let _ = write!(s, "{v:>10.4}");
        }
        let _ = writeln!(s, "{:>8}", r.n);
    }
    s
}

/// Dummy predictor: for every test id, a Gaussian centred on the mean
/// training score with `sigma ~ U(0, 0.5]`, discretized onto the buckets.
/// The discretization is mean-corrected so each prediction's mean equals
/// the training mean.
pub fn baseline_predict(
    train: &[ScoreDistribution],
    scale: &BucketScale,
    test_ids: &[String],
    seed: u64,
) -> Result<Vec<ScoreDistribution>> {
    if train.is_empty() {
        return Err(Error::Invalid("baseline needs a non-empty training set".into()));
    }
    let mut total = 0.0;
    for q in train {
        if q.probs.len() != scale.len() {
            return Err(Error::Shape {
                op: "baseline_predict",
                left: vec![scale.len()],
                right: vec![q.probs.len()],
            });
        }
        total += scale.mean(&q.probs);
    }
    let mean = total / train.len() as f64;
    let mut r = rng::stream(seed, "baseline");
    Ok(test_ids
        .iter()
        .map(|id| {
            let sigma = 0.5 * (1.0 - r.random::<f64>());
            ScoreDistribution {
                id: id.clone(),
                probs: mean_matched_gaussian(mean, sigma, scale),
            }
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn correlation_extremes() {
        let a = [1.0, 2.0, 3.0, 4.0];
        assert_eq!(srocc(&a, &a).unwrap(), 1.0);
        assert_eq!(srocc(&a, &[4.0, 3.0, 2.0, 1.0]).unwrap(), -1.0);
        let b: Vec<f64> = a.iter().map(|x| 2.0 * x + 1.0).collect();
        assert!((plcc(&a, &b).unwrap() - 1.0).abs() < 1e-12);
        assert!(srocc(&[1.0, 1.0, 1.0], &a[..3]).is_err());
        assert!(plcc(&a, &[2.0; 4]).is_err());
        assert!(srocc(&[1.0], &[1.0]).is_err());
    }

    #[test]
    fn tied_ranks() {
        assert_eq!(average_ranks(&[3.0, 1.0, 3.0, 2.0]), vec![3.5, 1.0, 3.5, 2.0]);
    }

    #[test]
    fn error_metrics() {
        assert_eq!(mae(&[1.0, -1.0], &[0.0, 0.0]).unwrap(), 1.0);
        assert_eq!(rmse(&[1.0, -1.0], &[0.0, 0.0]).unwrap(), 1.0);
        assert_eq!(mae(&[0.0, 2.0], &[0.0, 0.0]).unwrap(), 1.0);
        assert!((rmse(&[0.0, 2.0], &[0.0, 0.0]).unwrap() - 2f64.sqrt()).abs() < 1e-15);
        assert!(mae(&[], &[]).is_err());
    }

    #[test]
    fn accuracy_counts() {
        // TP=3, TN=2 out of P=4, N=2
        let truth = [true, true, true, true, false, false];
        let pred = [true, true, true, false, false, false];
        assert!((accuracy(&pred, &truth).unwrap() - 5.0 / 6.0).abs() < 1e-12);
        assert_eq!(accuracy(&[true; 4], &[true, false, true, false]).unwrap(), 0.5);
        assert!(accuracy(&[], &[]).is_err());
    }

    #[test]
    fn perfect_predictions() {
        let scale = BucketScale::unit(5).unwrap();
        let qs = vec![
            vec![0.1, 0.2, 0.4, 0.2, 0.1],
            vec![0.5, 0.2, 0.1, 0.1, 0.1],
            vec![0.0, 0.0, 0.1, 0.3, 0.6],
        ];
        let r = evaluate(&qs, &qs, &scale, 3.0).unwrap();
        assert_eq!(
            (r.srocc, r.plcc, r.mae, r.rmse, r.emd_r1, r.accuracy),
            (1.0, 1.0, 0.0, 0.0, 0.0, 1.0)
        );
    }

    #[test]
    fn baseline_mean_is_train_mean() {
        let scale = BucketScale::unit(10).unwrap();
        let train: Vec<ScoreDistribution> = (0..20)
            .map(|i| ScoreDistribution {
                id: format!("t{i}"),
                probs: mean_matched_gaussian(5.0, 1.0, &scale),
            })
            .collect();
        let ids: Vec<String> = (0..50).map(|i| format!("x{i}")).collect();
        let preds = baseline_predict(&train, &scale, &ids, 3).unwrap();
        for q in &preds {
            assert!((scale.mean(&q.probs) - 5.0).abs() < 0.05);
        }
        assert!(baseline_predict(&[], &scale, &ids, 3).is_err());
    }

    #[test]
    fn report_formats() {
        let r = MetricsReport {
            accuracy: 0.5,
            srocc: 0.25,
            plcc: f64::NAN,
            mae: 1.0,
            rmse: 1.5,
            emd_r1: 0.125,
            n: 4,
        };
        let csv = r.to_csv();
        assert!(csv.starts_with("metric,value\naccuracy,0.5\nsrocc,0.25\nplcc,NaN\n"));
        assert!(r.to_text().lines().all(|l| l.len() == 22));
    }
}
