//! Detached forward ops on tensors.

use super::kernels;
use super::tensor::Tensor;
use crate::error::{Error, Result};

/// `x w + b` for `x` of shape `[in]` or `[N, in]`, `w` `[in, out]`, `b` `[out]`.
pub fn linear_forward(x: &Tensor, w: &Tensor, b: &Tensor) -> Result<Tensor> {
    if w.shape().len() != 2 || x.cols() != w.shape()[0] {
        return Err(Error::Shape {
            op: "linear_forward",
            left: x.shape().to_vec(),
            right: w.shape().to_vec(),
        });
    }
    let n_out = w.shape()[1];
    if b.shape() != [n_out] {
        return Err(Error::Shape {
            op: "linear_forward",
            left: w.shape().to_vec(),
            right: b.shape().to_vec(),
        });
    }
    let mut y = kernels::matmul(x.data(), x.rows(), x.cols(), w.data(), n_out);
    for (i, v) in y.iter_mut().enumerate() {
        *v += b.data()[i % n_out];
    }
    let mut shape = x.shape().to_vec();
    *shape.last_mut().unwrap() = n_out;
    Tensor::new(shape, y)
}

pub fn relu(x: &Tensor) -> Tensor {
    let mut y = x.clone();
    for v in y.data_mut() {
        *v = v.max(0.0);
    }
    y
}

/// Row-wise softmax over the last axis.
pub fn softmax(x: &Tensor) -> Tensor {
    let mut y = x.clone();
    let c = x.cols();
    for (z, o) in x.data().chunks(c).zip(y.data_mut().chunks_mut(c)) {
        kernels::softmax_row(z, o);
    }
    y
}

/// Row-wise unit-norm scaling. Zero rows are a degenerate-input error.
pub fn l2_normalize(x: &Tensor) -> Result<Tensor> {
    let mut y = x.clone();
    let c = x.cols();
    for (r, row) in y.data_mut().chunks_mut(c).enumerate() {
        let n = kernels::l2_norm(row);
        if n == 0.0 {
            return Err(Error::Degenerate(format!("l2_normalize: row {r} is all zeros")));
        }
        row.iter_mut().for_each(|v| *v /= n);
    }
    Ok(y)
}

/// [`l2_normalize`], except all-zero rows stay zero.
pub fn l2_normalize_or_zero(x: &Tensor) -> Tensor {
    let mut y = x.clone();
    let c = x.cols();
    for row in y.data_mut().chunks_mut(c) {
        let n = kernels::l2_norm(row);
        if n > 0.0 {
            row.iter_mut().for_each(|v| *v /= n);
        }
    }
    y
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(shape: &[usize], d: &[f64]) -> Tensor {
        Tensor::new(shape.to_vec(), d.to_vec()).unwrap()
    }

    #[test]
    fn linear_identity_and_hand_product() {
        let x = Tensor::vector(vec![1.0, 2.0]);
        let eye = t(&[2, 2], &[1.0, 0.0, 0.0, 1.0]);
        let zero = Tensor::vector(vec![0.0, 0.0]);
        assert_eq!(linear_forward(&x, &eye, &zero).unwrap().data(), &[1.0, 2.0]);

        let x = Tensor::vector(vec![1.0, 1.0]);
        let w = t(&[2, 2], &[2.0, 3.0, 4.0, 5.0]);
        let b = Tensor::vector(vec![1.0, 1.0]);
        assert_eq!(linear_forward(&x, &w, &b).unwrap().data(), &[7.0, 9.0]);
    }

    #[test]
    fn linear_shape_error_names_both_shapes() {
        let x = Tensor::vector(vec![1.0, 2.0, 3.0]);
        let w = Tensor::zeros(&[2, 2]);
        let b = Tensor::zeros(&[2]);
        let msg = linear_forward(&x, &w, &b).unwrap_err().to_string();
        assert!(msg.contains("[3]") && msg.contains("[2, 2]"), "{msg}");
    }

    #[test]
    fn activations() {
        assert_eq!(relu(&Tensor::vector(vec![-1.0, 0.0, 2.0])).data(), &[0.0, 0.0, 2.0]);
        let s = softmax(&Tensor::vector(vec![0.0; 5]));
        assert!(s.data().iter().all(|&v| (v - 0.2).abs() < 1e-15));
        let n = l2_normalize(&Tensor::vector(vec![3.0, 4.0])).unwrap();
        assert!((n.data()[0] - 0.6).abs() < 1e-15 && (n.data()[1] - 0.8).abs() < 1e-15);
        assert!(matches!(
            l2_normalize(&Tensor::vector(vec![0.0, 0.0])),
            Err(Error::Degenerate(_))
        ));
        let z = l2_normalize_or_zero(&Tensor::new(vec![2, 2], vec![0.0, 0.0, 3.0, 4.0]).unwrap());
        assert_eq!(z.data(), &[0.0, 0.0, 0.6, 0.8]);
    }
}
