//! Slow reference implementations written directly from the definitions.

/// EMD with each CDF entry built by its own inner loop.
pub fn emd_naive(p: &[f64], q: &[f64], r: f64) -> f64 {
    let b = p.len();
    let mut acc = 0.0;
    for k in 0..b {
        let mut cp = 0.0;
        let mut cq = 0.0;
        for i in 0..=k {
            cp += p[i];
            cq += q[i];
        }
        acc += (cp - cq).abs().powf(r);
    }
    (acc / b as f64).powf(1.0 / r)
}

/// Mid-rank of every element by pairwise comparison (1-based).
pub fn ranks_naive(x: &[f64]) -> Vec<f64> {
    x.iter()
        .map(|&xi| {
            let below = x.iter().filter(|&&xj| xj < xi).count() as f64;
            let equal = x.iter().filter(|&&xj| xj == xi).count() as f64;
            below + (equal + 1.0) / 2.0
        })
        .collect()
}

pub fn pearson_naive(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let mut cov = 0.0;
    let mut va = 0.0;
    let mut vb = 0.0;
    for i in 0..a.len() {
        cov += (a[i] - ma) * (b[i] - mb);
        va += (a[i] - ma) * (a[i] - ma);
        vb += (b[i] - mb) * (b[i] - mb);
    }
    cov / (va.sqrt() * vb.sqrt())
}

pub fn spearman_naive(a: &[f64], b: &[f64]) -> f64 {
    pearson_naive(&ranks_naive(a), &ranks_naive(b))
}

/// Mean pairwise Euclidean distance between rows in different groups over
/// the mean distance between rows in the same group.
pub fn group_distance_ratio(rows: &[Vec<f64>], groups: &[usize]) -> f64 {
    let (mut between, mut nb, mut within, mut nw) = (0.0, 0usize, 0.0, 0usize);
    for i in 0..rows.len() {
        for j in i + 1..rows.len() {
            let d = rows[i]
                .iter()
                .zip(&rows[j])
                .map(|(x, y)| (x - y) * (x - y))
                .sum::<f64>()
                .sqrt();
            if groups[i] == groups[j] {
                within += d;
                nw += 1;
            } else {
                between += d;
                nb += 1;
            }
        }
    }
    (between / nb as f64) / (within / nw as f64)
}
