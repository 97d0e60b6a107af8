//! Slice-level numeric kernels. Shapes are checked by the callers.
//!
//! Every reduction accumulates in a fixed order per output element, so a row
//! of a result never depends on how many other rows share the call.

use super::Real;

/// `out[m×n] = a[m×k] · b[k×n]`; `out` is overwritten.
pub fn matmul<T: Real>(a: &[T], b: &[T], m: usize, k: usize, n: usize, out: &mut [T]) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(out.len(), m * n);
    out.fill(T::zero());
    for (a_row, out_row) in a.chunks_exact(k).zip(out.chunks_exact_mut(n)) {
        for (&a_ik, b_row) in a_row.iter().zip(b.chunks_exact(n)) {
            axpy(out_row, a_ik, b_row);
        }
    }
}

/// `grad_a[m×k] += grad_c[m×n] · bᵀ` where `b` is `k×n`.
pub fn matmul_grad_lhs<T: Real>(
    grad_c: &[T],
    b: &[T],
    m: usize,
    k: usize,
    n: usize,
    grad_a: &mut [T],
) {
    debug_assert_eq!(grad_c.len(), m * n);
    let bt = transpose(b, k, n);
    for (gc_row, ga_row) in grad_c.chunks_exact(n).zip(grad_a.chunks_exact_mut(k)) {
        for (&g, bt_row) in gc_row.iter().zip(bt.chunks_exact(k)) {
            axpy(ga_row, g, bt_row);
        }
    }
}

/// `grad_b[k×n] += aᵀ · grad_c` where `a` is `m×k`.
pub fn matmul_grad_rhs<T: Real>(
    a: &[T],
    grad_c: &[T],
    m: usize,
    k: usize,
    n: usize,
    grad_b: &mut [T],
) {
    debug_assert_eq!(grad_b.len(), k * n);
    for (a_row, gc_row) in a.chunks_exact(k).zip(grad_c.chunks_exact(n)).take(m) {
        for (&a_ik, gb_row) in a_row.iter().zip(grad_b.chunks_exact_mut(n)) {
            axpy(gb_row, a_ik, gc_row);
        }
    }
}

pub fn transpose<T: Real>(x: &[T], rows: usize, cols: usize) -> Vec<T> {
    let mut out = vec![T::zero(); rows * cols];
    for r in 0..rows {
        for c in 0..cols {
            out[c * rows + r] = x[r * cols + c];
        }
    }
    out
}

#[inline]
pub fn axpy<T: Real>(y: &mut [T], alpha: T, x: &[T]) {
    for (yi, &xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

#[inline]
pub fn dot<T: Real>(a: &[T], b: &[T]) -> T {
    let mut acc = T::zero();
    for (&x, &y) in a.iter().zip(b) {
        acc += x * y;
    }
    acc
}

/// Row-wise softmax with max subtraction.
pub fn softmax_rows<T: Real>(x: &[T], cols: usize, out: &mut [T]) {
    for (row, out_row) in x.chunks_exact(cols).zip(out.chunks_exact_mut(cols)) {
        softmax_into(row, out_row);
    }
}

fn softmax_into<T: Real>(row: &[T], out: &mut [T]) {
    let max = row.iter().copied().fold(T::neg_infinity(), T::max);
    let mut sum = T::zero();
    for (o, &v) in out.iter_mut().zip(row) {
        *o = (v - max).exp();
        sum += *o;
    }
    for o in out.iter_mut() {
        *o /= sum;
    }
}

/// Backward of a row softmax given its output `y`.
pub fn softmax_rows_grad<T: Real>(y: &[T], grad_y: &[T], cols: usize, grad_x: &mut [T]) {
    for ((y_row, gy_row), gx_row) in y
        .chunks_exact(cols)
        .zip(grad_y.chunks_exact(cols))
        .zip(grad_x.chunks_exact_mut(cols))
    {
        let inner = dot(y_row, gy_row);
        for ((gx, &yi), &gyi) in gx_row.iter_mut().zip(y_row).zip(gy_row) {
            *gx += yi * (gyi - inner);
        }
    }
}

/// Per-row normalisation statistics saved for the backward pass.
pub struct LayerNormSaved<T> {
    pub normalized: Vec<T>,
    pub inv_std: Vec<T>,
}

/// A row with zero variance (and `eps == 0`) normalises to zeros, so its
/// output collapses to `beta`.
pub fn layer_norm<T: Real>(
    x: &[T],
    gamma: &[T],
    beta: &[T],
    eps: T,
    out: &mut [T],
) -> LayerNormSaved<T> {
    let cols = gamma.len();
    let rows = x.len() / cols;
    let n = T::from_usize(cols).unwrap();
    let mut normalized = vec![T::zero(); x.len()];
    let mut inv_std = vec![T::zero(); rows];
    for (r, row) in x.chunks_exact(cols).enumerate() {
        let mean = row.iter().copied().sum::<T>() / n;
        let var = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() / n;
        let denom = var + eps;
        let rstd = if denom > T::zero() {
            T::one() / denom.sqrt()
        } else {
            T::zero()
        };
        inv_std[r] = rstd;
        let xhat = &mut normalized[r * cols..(r + 1) * cols];
        let out_row = &mut out[r * cols..(r + 1) * cols];
        for j in 0..cols {
            xhat[j] = (row[j] - mean) * rstd;
            out_row[j] = gamma[j] * xhat[j] + beta[j];
        }
    }
    LayerNormSaved {
        normalized,
        inv_std,
    }
}

pub fn layer_norm_grad<T: Real>(
    saved: &LayerNormSaved<T>,
    gamma: &[T],
    grad_y: &[T],
    grad_x: Option<&mut [T]>,
    grad_gamma: Option<&mut [T]>,
    grad_beta: Option<&mut [T]>,
) {
    let cols = gamma.len();
    let n = T::from_usize(cols).unwrap();
    if let Some(gg) = grad_gamma {
        for (xhat, gy) in saved
            .normalized
            .chunks_exact(cols)
            .zip(grad_y.chunks_exact(cols))
        {
            for j in 0..cols {
                gg[j] += gy[j] * xhat[j];
            }
        }
    }
    if let Some(gb) = grad_beta {
        for gy in grad_y.chunks_exact(cols) {
            for j in 0..cols {
                gb[j] += gy[j];
            }
        }
    }
    if let Some(gx) = grad_x {
        let mut dxhat = vec![T::zero(); cols];
        for (r, (xhat, gy)) in saved
            .normalized
            .chunks_exact(cols)
            .zip(grad_y.chunks_exact(cols))
            .enumerate()
        {
            for j in 0..cols {
                dxhat[j] = gy[j] * gamma[j];
            }
            let mean_d = dxhat.iter().copied().sum::<T>() / n;
            let mean_dx = dot(&dxhat, xhat) / n;
            let rstd = saved.inv_std[r];
            let gx_row = &mut gx[r * cols..(r + 1) * cols];
            for j in 0..cols {
                gx_row[j] += rstd * (dxhat[j] - mean_d - xhat[j] * mean_dx);
            }
        }
    }
}

const FRAC_1_SQRT_2PI: f64 = 0.398_942_280_401_432_7;

/// Standard normal CDF.
#[inline]
pub fn normal_cdf<T: Real>(x: T) -> T {
    T::c(0.5) * (T::one() + (x * T::c(std::f64::consts::FRAC_1_SQRT_2)).erf())
}

/// Exact GELU, `x·Φ(x)`.
#[inline]
pub fn gelu<T: Real>(x: T) -> T {
    x * normal_cdf(x)
}

#[inline]
pub fn gelu_grad<T: Real>(x: T) -> T {
    let pdf = T::c(FRAC_1_SQRT_2PI) * (-(x * x) * T::c(0.5)).exp();
    normal_cdf(x) + x * pdf
}

/// Geometry of a batched, padded self-attention call.
#[derive(Clone, Debug)]
pub struct AttentionShape {
    pub batch: usize,
    pub seq: usize,
    pub heads: usize,
    pub width: usize,
}

impl AttentionShape {
    pub fn head_dim(&self) -> usize {
        self.width / self.heads
    }

    pub fn probs_len(&self) -> usize {
        self.batch * self.heads * self.seq * self.seq
    }

    #[inline]
    pub fn probs_offset(&self, b: usize, h: usize) -> usize {
        (b * self.heads + h) * self.seq * self.seq
    }
}

/// Multi-head scaled dot-product attention over `[batch·seq, width]` rows.
/// Keys whose `key_mask` entry is false receive zero probability.
/// Returns the context rows and the `[batch, heads, seq, seq]` probabilities.
pub fn attention<T: Real>(
    q: &[T],
    k: &[T],
    v: &[T],
    key_mask: &[bool],
    shape: &AttentionShape,
) -> (Vec<T>, Vec<T>) {
    let AttentionShape {
        batch,
        seq,
        heads,
        width,
    } = *shape;
    let dh = shape.head_dim();
    let scale = T::one() / T::from_usize(dh).unwrap().sqrt();
    let mut out = vec![T::zero(); batch * seq * width];
    let mut probs = vec![T::zero(); shape.probs_len()];
    let mut scores = vec![T::zero(); seq];
    for b in 0..batch {
        let row0 = b * seq;
        for h in 0..heads {
            let col = h * dh;
            let p_base = shape.probs_offset(b, h);
            for i in 0..seq {
                let qi = &q[(row0 + i) * width + col..][..dh];
                for j in 0..seq {
                    scores[j] = if key_mask[row0 + j] {
                        let kj = &k[(row0 + j) * width + col..][..dh];
                        dot(qi, kj) * scale
                    } else {
                        T::neg_infinity()
                    };
                }
                let p_row = &mut probs[p_base + i * seq..][..seq];
                softmax_into(&scores, p_row);
                let out_row = &mut out[(row0 + i) * width + col..][..dh];
                for j in 0..seq {
                    let p = p_row[j];
                    if p != T::zero() {
                        axpy(out_row, p, &v[(row0 + j) * width + col..][..dh]);
                    }
                }
            }
        }
    }
    (out, probs)
}

/// Backward of [`attention`], accumulating into the provided gradients.
#[allow(clippy::too_many_arguments)]
pub fn attention_grad<T: Real>(
    q: &[T],
    k: &[T],
    v: &[T],
    probs: &[T],
    grad_out: &[T],
    shape: &AttentionShape,
    grad_q: &mut [T],
    grad_k: &mut [T],
    grad_v: &mut [T],
) {
    let AttentionShape {
        batch,
        seq,
        heads,
        width,
    } = *shape;
    let dh = shape.head_dim();
    let scale = T::one() / T::from_usize(dh).unwrap().sqrt();
    let mut dp = vec![T::zero(); seq];
    for b in 0..batch {
        let row0 = b * seq;
        for h in 0..heads {
            let col = h * dh;
            let p_base = shape.probs_offset(b, h);
            for i in 0..seq {
                let p_row = &probs[p_base + i * seq..][..seq];
                let go = &grad_out[(row0 + i) * width + col..][..dh];
                for j in 0..seq {
                    let p = p_row[j];
                    if p == T::zero() {
                        dp[j] = T::zero();
                        continue;
                    }
                    let vj = (row0 + j) * width + col;
                    dp[j] = dot(go, &v[vj..vj + dh]);
                    axpy(&mut grad_v[vj..vj + dh], p, go);
                }
                let inner = dot(p_row, &dp);
                let qi = (row0 + i) * width + col;
                for j in 0..seq {
                    let p = p_row[j];
                    if p == T::zero() {
                        continue;
                    }
                    let ds = p * (dp[j] - inner) * scale;
                    let kj = (row0 + j) * width + col;
                    axpy(&mut grad_q[qi..qi + dh], ds, &k[kj..kj + dh]);
                    axpy(&mut grad_k[kj..kj + dh], ds, &q[qi..qi + dh]);
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn matmul_grads_match_manual_products() {
        // a: 2x3, b: 3x2, gc = ones(2x2)
        let a = [1.0, 2.0, 3.0, 4.0, 5.0, 6.0];
        let b = [1.0, -1.0, 0.5, 2.0, -3.0, 1.0];
        let gc = [1.0; 4];
        let mut ga = [0.0; 6];
        matmul_grad_lhs(&gc, &b, 2, 3, 2, &mut ga);
        // row sums of b: [0, 2.5, -2]
        assert_eq!(ga, [0.0, 2.5, -2.0, 0.0, 2.5, -2.0]);
        let mut gb = [0.0; 6];
        matmul_grad_rhs(&a, &gc, 2, 3, 2, &mut gb);
        // column sums of a broadcast: [5,5,7,7,9,9]
        assert_eq!(gb, [5.0, 5.0, 7.0, 7.0, 9.0, 9.0]);
    }

    #[test]
    fn attention_ignores_masked_keys() {
        let shape = AttentionShape {
            batch: 1,
            seq: 3,
            heads: 1,
            width: 2,
        };
        let q = [1.0, 0.0, 0.0, 1.0, 1.0, 1.0];
        let k = q;
        let v = [1.0, 2.0, 3.0, 4.0, 100.0, 100.0];
        let (out, probs) = attention(&q, &k, &v, &[true, true, false], &shape);
        for i in 0..3 {
            assert_eq!(probs[i * 3 + 2], 0.0);
            let s: f64 = probs[i * 3..i * 3 + 3].iter().sum();
            assert!((s - 1.0).abs() < 1e-12);
        }
        assert!(out.iter().all(|&o| o < 5.0));
    }
}
