//! Forward kernels on raw row-major slices. The autodiff graph and the
//! detached (no-grad) APIs both call into these.

/// `y[r, o] = sum_i x[r, i] * w[i, o]`
pub(crate) fn matmul(x: &[f64], rows: usize, n_in: usize, w: &[f64], n_out: usize) -> Vec<f64> {
    let mut y = vec![0.0; rows * n_out];
    for r in 0..rows {
        let xr = &x[r * n_in..(r + 1) * n_in];
        let yr = &mut y[r * n_out..(r + 1) * n_out];
        for (i, &xi) in xr.iter().enumerate() {
            if xi == 0.0 {
                continue;
            }
            let wi = &w[i * n_out..(i + 1) * n_out];
            for (yo, &wo) in yr.iter_mut().zip(wi) {
                *yo += xi * wo;
            }
        }
    }
    y
}

pub(crate) fn softmax_row(z: &[f64], out: &mut [f64]) {
    let max = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut total = 0.0;
    for (o, &v) in out.iter_mut().zip(z) {
        *o = (v - max).exp();
        total += *o;
    }
    for o in out.iter_mut() {
        *o /= total;
    }
}

pub(crate) fn log_sum_exp(z: &[f64]) -> f64 {
    let max = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    max + z.iter().map(|v| (v - max).exp()).sum::<f64>().ln()
}

pub(crate) fn l2_norm(x: &[f64]) -> f64 {
    x.iter().map(|v| v * v).sum::<f64>().sqrt()
}

/// `-log softmax(z)[target]`
pub(crate) fn cross_entropy_row(z: &[f64], target: usize) -> f64 {
    log_sum_exp(z) - z[target]
}

/// `log(1 + e^z)` without overflow.
pub(crate) fn softplus(z: f64) -> f64 {
    z.max(0.0) + (-z.abs()).exp().ln_1p()
}

pub(crate) fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// Per-element binary cross-entropy in logit space:
/// `-[t log s(z) + (1-t) log(1 - s(z))] = softplus(z) - t z`.
pub(crate) fn bce_element(z: f64, t: f64) -> f64 {
    softplus(z) - t * z
}

/// Signed CDF differences `CDF_p(k) - CDF_q(k)` by running sums.
pub(crate) fn cdf_diff(p: &[f64], q: &[f64]) -> Vec<f64> {
    let mut acc = 0.0;
    p.iter()
        .zip(q)
        .map(|(a, b)| {
            acc += a - b;
            acc
        })
        .collect()
}

/// `(1/B sum_k |CDF_p(k) - CDF_q(k)|^r)^(1/r)`, or the bare mean of powers
/// when `root` is false.
pub(crate) fn emd_row(p: &[f64], q: &[f64], r: f64, root: bool) -> f64 {
    let diffs = cdf_diff(p, q);
    let mean = diffs.iter().map(|d| d.abs().powf(r)).sum::<f64>() / p.len() as f64;
    if root {
        mean.powf(1.0 / r)
    } else {
        mean
    }
}
