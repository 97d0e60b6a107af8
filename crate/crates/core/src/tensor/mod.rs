//! Dense tensors, numeric kernels and reverse-mode differentiation.

pub mod kernels;
mod real;
mod tape;
#[allow(clippy::module_inception)]
mod tensor;

pub use kernels::AttentionShape;
pub use real::{Precision, Real};
pub use tape::{bce_term, sigmoid, Gradients, Tape, Var};
pub use tensor::Tensor;

use crate::error::{QeError, Result};

/// Matrix product of `[m×k]` and `[k×n]` tensors.
pub fn matmul<T: Real>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    let (sa, sb) = (a.shape(), b.shape());
    if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
        return Err(QeError::shape("matmul", sa, sb));
    }
    let (m, k, n) = (sa[0], sa[1], sb[1]);
    let mut out = vec![T::zero(); m * n];
    kernels::matmul(a.data(), b.data(), m, k, n, &mut out);
    Tensor::new(vec![m, n], out)
}

/// Softmax along `axis`, stabilised by subtracting the lane maximum.
pub fn softmax<T: Real>(x: &Tensor<T>, axis: usize) -> Result<Tensor<T>> {
    let shape = x.shape();
    if axis >= shape.len() {
        return Err(QeError::Usage(format!(
            "softmax axis {axis} out of range for shape {shape:?}"
        )));
    }
    if x.data().iter().any(|v| v.is_nan()) {
        return Err(QeError::Numeric("softmax input contains NaN".into()));
    }
    let extent = shape[axis];
    let inner: usize = shape[axis + 1..].iter().product();
    let outer: usize = shape[..axis].iter().product();
    let mut out = vec![T::zero(); x.numel()];
    let mut lane = vec![T::zero(); extent];
    let mut lane_out = vec![T::zero(); extent];
    for o in 0..outer {
        for i in 0..inner {
            for (j, l) in lane.iter_mut().enumerate() {
                *l = x.data()[(o * extent + j) * inner + i];
            }
            kernels::softmax_rows(&lane, extent, &mut lane_out);
            for (j, &l) in lane_out.iter().enumerate() {
                out[(o * extent + j) * inner + i] = l;
            }
        }
    }
    Tensor::new(shape.to_vec(), out)
}

/// Layer normalisation over the last axis followed by the affine map.
pub fn layer_norm<T: Real>(
    x: &Tensor<T>,
    gamma: &Tensor<T>,
    beta: &Tensor<T>,
    eps: T,
) -> Result<Tensor<T>> {
    let (_, cols) = x.matrix_dims();
    if cols < 2 || gamma.shape() != [cols] || beta.shape() != [cols] {
        return Err(QeError::shape("layer_norm", x.shape(), gamma.shape()));
    }
    let mut out = vec![T::zero(); x.numel()];
    kernels::layer_norm(x.data(), gamma.data(), beta.data(), eps, &mut out);
    Tensor::new(x.shape().to_vec(), out)
}

/// Exact Gaussian-CDF GELU applied elementwise.
pub fn gelu<T: Real>(x: &Tensor<T>) -> Tensor<T> {
    let data = x.data().iter().map(|&v| kernels::gelu(v)).collect();
    Tensor::new(x.shape().to_vec(), data).expect("same shape")
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn t(rows: &[&[f64]]) -> Tensor<f64> {
        Tensor::from_rows(rows).unwrap()
    }

    #[test]
    fn matmul_examples() {
        let eye = t(&[&[1.0, 0.0], &[0.0, 1.0]]);
        let b = t(&[&[3.0, 4.0], &[5.0, 6.0]]);
        assert_eq!(matmul(&eye, &b).unwrap(), b);
        let c = matmul(&t(&[&[1.0, 2.0]]), &t(&[&[3.0], &[4.0]])).unwrap();
        assert_eq!(c.data(), &[11.0]);
        let z = matmul(&Tensor::zeros(&[2, 2]), &b).unwrap();
        assert!(z.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn matmul_shape_error_names_both_shapes() {
        let err = matmul(&Tensor::<f64>::zeros(&[2, 3]), &Tensor::zeros(&[2, 3])).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("[2, 3] vs [2, 3]"), "{msg}");
    }

    #[test]
    fn softmax_examples() {
        let s = softmax(&Tensor::<f64>::from_slice(&[0.0, 0.0, 0.0]).unwrap(), 0).unwrap();
        for &v in s.data() {
            assert!((v - 1.0 / 3.0).abs() < 1e-15);
        }
        let s = softmax(&Tensor::<f64>::from_slice(&[1000.0, 1000.0]).unwrap(), 0).unwrap();
        assert_eq!(s.data(), &[0.5, 0.5]);
        let s = softmax(&Tensor::<f64>::from_slice(&[0.0, 3f64.ln()]).unwrap(), 0).unwrap();
        assert!((s.data()[0] - 0.25).abs() < 1e-15);
        assert!((s.data()[1] - 0.75).abs() < 1e-15);
    }

    #[test]
    fn softmax_along_first_axis() {
        let x = t(&[&[0.0, 1.0], &[0.0, 1.0]]);
        let s = softmax(&x, 0).unwrap();
        assert!(s.data().iter().all(|&v| (v - 0.5).abs() < 1e-15));
    }

    #[test]
    fn softmax_rejects_nan() {
        let x = Tensor::<f64>::from_slice(&[0.0, f64::NAN]).unwrap();
        assert!(matches!(softmax(&x, 0), Err(QeError::Numeric(_))));
    }

    #[test]
    fn layer_norm_examples() {
        let ones = Tensor::<f64>::ones(&[4]);
        let zeros = Tensor::<f64>::zeros(&[4]);
        let c = Tensor::full(&[1, 4], 3.0);
        let y = layer_norm(&c, &ones, &zeros, 1e-5).unwrap();
        assert!(y.data().iter().all(|&v| v == 0.0));
        let y = layer_norm(&c, &ones, &Tensor::full(&[4], 5.0), 1e-5).unwrap();
        assert!(y.data().iter().all(|&v| v == 5.0));
        let ones2 = Tensor::<f64>::ones(&[2]);
        let y = layer_norm(&t(&[&[1.0, 3.0]]), &ones2, &Tensor::zeros(&[2]), 0.0).unwrap();
        assert_eq!(y.data(), &[-1.0, 1.0]);
    }

    #[test]
    fn gelu_examples() {
        let g = gelu(&Tensor::<f64>::from_slice(&[0.0, 1.0, -10.0]).unwrap());
        assert_eq!(g.data()[0], 0.0);
        // Φ(1) = 0.841344746068543
        assert!((g.data()[1] - 0.841_344_746_068_543).abs() < 1e-12);
        assert!(g.data()[2].abs() < 1e-6);
    }

    #[test]
    fn backward_power_rule() {
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::<f64>::from_slice(&[3.0]).unwrap(), true);
        let sq = tape.mul(x, x).unwrap();
        let loss = tape.sum(sq);
        let grads = tape.backward(loss).unwrap();
        assert_eq!(grads.get(x).unwrap(), &[6.0]);
        assert_eq!(grads.get(loss).unwrap(), &[1.0]);
    }

    #[test]
    fn backward_through_softmax_sum_is_zero() {
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::<f64>::from_slice(&[0.3, -1.2, 2.5, 0.0]).unwrap(), true);
        let s = tape.softmax(x).unwrap();
        let loss = tape.sum(s);
        let grads = tape.backward(loss).unwrap();
        assert!(grads.get(x).unwrap().iter().all(|g| g.abs() < 1e-15));
    }

    #[test]
    fn backward_rejects_non_scalar_and_zero_fills_unused_leaves() {
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::<f64>::from_slice(&[1.0, 2.0]).unwrap(), true);
        let unused = tape.leaf(Tensor::<f64>::from_slice(&[5.0]).unwrap(), true);
        let y = tape.scale(x, 2.0);
        assert!(matches!(tape.backward(y), Err(QeError::Usage(_))));
        let loss = tape.sum(y);
        let grads = tape.backward(loss).unwrap();
        assert_eq!(grads.get(x).unwrap(), &[2.0, 2.0]);
        assert_eq!(grads.get(unused).unwrap(), &[0.0]);
    }

    #[test]
    fn bce_matches_closed_forms() {
        let mut tape = Tape::new();
        let z = tape.leaf(Tensor::<f64>::from_slice(&[0.0, 50.0, -1000.0]).unwrap(), true);
        let _ = tape.bce_with_logits(z, &[1.0, 1.0, 1.0]).unwrap();
        assert!((bce_term(0.0f64, 0.0) - std::f64::consts::LN_2).abs() < 1e-15);
        assert!(bce_term(50.0f64, 1.0) < 1e-20);
        let far = bce_term(-1000.0f64, 1.0);
        assert!((far - 1000.0).abs() < 1e-9 && far.is_finite());
        assert!(bce_term(1e4f64, 0.0).is_finite());
    }

    /// Central differences of a scalar function of one leaf.
    fn numeric_grad(x: &[f64], f: impl Fn(&[f64]) -> f64) -> Vec<f64> {
        let h = 1e-5;
        let mut xs = x.to_vec();
        (0..x.len())
            .map(|i| {
                let orig = xs[i];
                xs[i] = orig + h;
                let up = f(&xs);
                xs[i] = orig - h;
                let down = f(&xs);
                xs[i] = orig;
                (up - down) / (2.0 * h)
            })
            .collect()
    }

    fn assert_close(a: &[f64], b: &[f64], tol: f64) {
        for (x, y) in a.iter().zip(b) {
            let scale = x.abs().max(y.abs()).max(1.0);
            assert!((x - y).abs() / scale < tol, "{x} vs {y}");
        }
    }

    #[test]
    fn layer_norm_gradient_matches_finite_differences() {
        let x0 = [0.3, -1.1, 2.0, 0.7, 0.1, 0.9];
        let gamma = [1.5, -0.5, 0.25];
        let w = [0.2, -0.7, 1.3, 0.4, 0.9, -0.1];
        let f = |xs: &[f64]| {
            let mut tape = Tape::new();
            let x = tape.leaf(Tensor::new(vec![2, 3], xs.to_vec()).unwrap(), true);
            let g = tape.leaf(Tensor::new(vec![3], gamma.to_vec()).unwrap(), false);
            let b = tape.leaf(Tensor::new(vec![3], vec![0.1; 3]).unwrap(), false);
            let wv = tape.leaf(Tensor::new(vec![2, 3], w.to_vec()).unwrap(), false);
            let y = tape.layer_norm(x, g, b, 1e-5).unwrap();
            let yw = tape.mul(y, wv).unwrap();
            let loss = tape.sum(yw);
            (tape, x, loss)
        };
        let (tape, x, loss) = f(&x0);
        let analytic = tape.backward(loss).unwrap().get(x).unwrap().to_vec();
        let numeric = numeric_grad(&x0, |xs| {
            let (tape, _, loss) = f(xs);
            tape.value(loss)[0]
        });
        assert_close(&analytic, &numeric, 1e-8);
    }

    #[test]
    fn attention_gradient_matches_finite_differences() {
        let shape = AttentionShape {
            batch: 2,
            seq: 3,
            heads: 2,
            width: 4,
        };
        let mask = [true, true, false, true, true, true];
        let base: Vec<f64> = (0..24).map(|i| ((i * 37 % 11) as f64 - 5.0) / 7.0).collect();
        let w: Vec<f64> = (0..24).map(|i| ((i * 13 % 7) as f64 - 3.0) / 5.0).collect();
        let run = |qkv: &[f64]| {
            let mut tape = Tape::new();
            let q = tape.leaf(Tensor::new(vec![6, 4], qkv[..24].to_vec()).unwrap(), true);
            let k = tape.leaf(Tensor::new(vec![6, 4], qkv[24..48].to_vec()).unwrap(), true);
            let v = tape.leaf(Tensor::new(vec![6, 4], qkv[48..].to_vec()).unwrap(), true);
            let wv = tape.leaf(Tensor::new(vec![6, 4], w.clone()).unwrap(), false);
            let o = tape.attention(q, k, v, &mask, shape.clone()).unwrap();
            let ow = tape.mul(o, wv).unwrap();
            let loss = tape.sum(ow);
            (tape, [q, k, v], loss)
        };
        let x0: Vec<f64> = base
            .iter()
            .copied()
            .chain(base.iter().rev().copied())
            .chain(base.iter().map(|v| v * 0.5))
            .collect();
        let (tape, vars, loss) = run(&x0);
        let grads = tape.backward(loss).unwrap();
        let analytic: Vec<f64> = vars
            .iter()
            .flat_map(|&v| grads.get(v).unwrap().to_vec())
            .collect();
        let numeric = numeric_grad(&x0, |xs| {
            let (tape, _, loss) = run(xs);
            tape.value(loss)[0]
        });
        assert_close(&analytic, &numeric, 1e-8);
    }

    proptest! {
        #[test]
        fn softmax_rows_sum_to_one(values in proptest::collection::vec(-50.0f64..50.0, 2..32)) {
            let x = Tensor::<f64>::from_slice(&values).unwrap();
            let s = softmax(&x, 0).unwrap();
            let total: f64 = s.data().iter().sum();
            prop_assert!((total - 1.0).abs() < 1e-12);
            prop_assert!(s.data().iter().all(|&v| v >= 0.0));
        }

        #[test]
        fn layer_norm_standardises_rows(values in proptest::collection::vec(-20.0f64..20.0, 2..32)) {
            let n = values.len();
            let spread = values.iter().cloned().fold(f64::MIN, f64::max)
                - values.iter().cloned().fold(f64::MAX, f64::min);
            prop_assume!(spread > 1e-3);
            let x = Tensor::new(vec![1, n], values).unwrap();
            let y = layer_norm(&x, &Tensor::ones(&[n]), &Tensor::zeros(&[n]), 0.0).unwrap();
            let mean = y.data().iter().sum::<f64>() / n as f64;
            let var = y.data().iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n as f64;
            prop_assert!(mean.abs() <= 1e-10);
            prop_assert!((var - 1.0).abs() <= 1e-6);
        }
    }
}
