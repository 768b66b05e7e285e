//! Fully connected layer, softmax variants, cross-entropy and MSE.

use crate::error::{Result, TensorError};
use crate::layout::BlockLayout;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

fn dims2(op: &'static str, t: &Tensor<impl Scalar>) -> Result<(usize, usize)> {
    match t.shape() {
        &[r, c] => Ok((r, c)),
        s => Err(TensorError::Invalid {
            op,
            msg: format!("expected a 2-D tensor, got {s:?}"),
        }),
    }
}

pub(crate) fn linear_forward<T: Scalar>(x: &Tensor<T>, w: &Tensor<T>, b: Option<&Tensor<T>>) -> Result<Tensor<T>> {
    let (rows, inner) = dims2("linear", x)?;
    let (out, w_in) = dims2("linear", w)?;
    if inner != w_in {
        return Err(TensorError::ShapeMismatch {
            op: "linear",
            left: x.shape().to_vec(),
            right: w.shape().to_vec(),
        });
    }
    let mut y = vec![T::zero(); rows * out];
    if let Some(b) = b {
        if b.shape() != [out] {
            return Err(TensorError::ShapeMismatch {
                op: "linear bias",
                left: b.shape().to_vec(),
                right: vec![out],
            });
        }
        for row in y.chunks_mut(out) {
            row.copy_from_slice(b.data());
        }
    }
    let beta = if b.is_some() { T::one() } else { T::zero() };
    T::gemm(
        rows,
        inner,
        out,
        T::one(),
        x.data(),
        (inner, 1),
        w.data(),
        (1, inner),
        beta,
        &mut y,
        (out, 1),
    );
    Tensor::from_vec(vec![rows, out], y)
}

pub(crate) fn linear_backward_weight<T: Scalar>(g: &Tensor<T>, x: &Tensor<T>, dw: &mut Tensor<T>) {
    let (rows, out) = (g.shape()[0], g.shape()[1]);
    let inner = x.shape()[1];
    T::gemm(
        out,
        rows,
        inner,
        T::one(),
        g.data(),
        (1, out),
        x.data(),
        (inner, 1),
        T::one(),
        dw.data_mut(),
        (inner, 1),
    );
}

pub(crate) fn linear_backward_bias<T: Scalar>(g: &Tensor<T>, db: &mut Tensor<T>) {
    let out = g.shape()[1];
    for row in g.data().chunks(out) {
        for (d, &v) in db.data_mut().iter_mut().zip(row) {
            *d += v;
        }
    }
}

pub(crate) fn linear_backward_input<T: Scalar>(g: &Tensor<T>, w: &Tensor<T>, dx: &mut Tensor<T>) {
    let (rows, out) = (g.shape()[0], g.shape()[1]);
    let inner = w.shape()[1];
    T::gemm(
        rows,
        out,
        inner,
        T::one(),
        g.data(),
        (out, 1),
        w.data(),
        (inner, 1),
        T::one(),
        dx.data_mut(),
        (inner, 1),
    );
}

/// Max-subtracted softmax of `a[range]` written into `out[range]`; returns
/// the log-partition `ln Σ exp(a_j)`.
fn softmax_range<T: Scalar>(a: &[T], out: &mut [T]) -> T {
    let max = a.iter().copied().fold(T::neg_infinity(), T::max);
    let mut z = T::zero();
    for (o, &v) in out.iter_mut().zip(a) {
        *o = (v - max).exp();
        z += *o;
    }
    for o in out.iter_mut() {
        *o = *o / z;
    }
    max + z.ln()
}

fn active_ranges(
    op: &'static str,
    rows: usize,
    cols: usize,
    layout: Option<(&BlockLayout, &[usize])>,
) -> Result<Vec<(usize, usize)>> {
    match layout {
        None => Ok(vec![(0, cols); rows]),
        Some((layout, langs)) => {
            if layout.total() != cols {
                return Err(TensorError::Invalid {
                    op,
                    msg: format!("layout covers {} outputs, activations have {cols}", layout.total()),
                });
            }
            if langs.len() != rows {
                return Err(TensorError::Invalid {
                    op,
                    msg: format!("{} language ids for {rows} items", langs.len()),
                });
            }
            langs.iter().map(|&l| layout.block(l)).collect()
        }
    }
}

/// Row-wise softmax over `[B,N]` activations.
pub fn softmax<T: Scalar>(a: &Tensor<T>) -> Result<Tensor<T>> {
    let (_, n) = dims2("softmax", a)?;
    let mut out = Tensor::zeros(a.shape());
    for (src, dst) in a.data().chunks(n).zip(out.data_mut().chunks_mut(n)) {
        softmax_range(src, dst);
    }
    Ok(out)
}

/// Interval softmax: item `b` is normalized over the block of its language
/// `langs[b]`; every output outside that block is exactly zero.
pub fn block_softmax<T: Scalar>(a: &Tensor<T>, layout: &BlockLayout, langs: &[usize]) -> Result<Tensor<T>> {
    let (rows, n) = dims2("block_softmax", a)?;
    let ranges = active_ranges("block_softmax", rows, n, Some((layout, langs)))?;
    let mut out = Tensor::zeros(a.shape());
    for ((src, dst), (b, e)) in a.data().chunks(n).zip(out.data_mut().chunks_mut(n)).zip(ranges) {
        softmax_range(&src[b..e], &mut dst[b..e]);
    }
    Ok(out)
}

/// Mean over items of `−ln y_target` with `y` the (block) softmax. Returns
/// the loss and the probabilities for the backward pass.
pub(crate) fn cross_entropy_forward<T: Scalar>(
    logits: &Tensor<T>,
    targets: &[usize],
    layout: Option<(&BlockLayout, &[usize])>,
) -> Result<(T, Vec<T>)> {
    let (rows, n) = dims2("cross_entropy", logits)?;
    if targets.len() != rows || rows == 0 {
        return Err(TensorError::Invalid {
            op: "cross_entropy",
            msg: format!("{} targets for {rows} items", targets.len()),
        });
    }
    let ranges = active_ranges("cross_entropy", rows, n, layout)?;
    let mut probs = vec![T::zero(); rows * n];
    let mut total = T::zero();
    for (item, ((src, dst), &(b, e))) in logits
        .data()
        .chunks(n)
        .zip(probs.chunks_mut(n))
        .zip(&ranges)
        .enumerate()
    {
        let target = targets[item];
        if target < b || target >= e {
            return Err(TensorError::TargetOutsideBlock {
                item,
                target,
                begin: b,
                end: e,
            });
        }
        let log_z = softmax_range(&src[b..e], &mut dst[b..e]);
        total += log_z - src[target];
    }
    let loss = total / T::from_usize(rows).expect("small count");
    if !loss.is_finite() {
        return Err(TensorError::NonFinite { op: "cross_entropy" });
    }
    Ok((loss, probs))
}

pub(crate) fn cross_entropy_backward<T: Scalar>(g: T, targets: &[usize], probs: &[T], dl: &mut Tensor<T>) {
    let rows = targets.len();
    let n = probs.len() / rows;
    let scale = g / T::from_usize(rows).expect("small count");
    for (item, (p, d)) in probs.chunks(n).zip(dl.data_mut().chunks_mut(n)).enumerate() {
        // Outside the active block p == 0, so those logits get no gradient.
        for (dv, &pv) in d.iter_mut().zip(p) {
            *dv += scale * pv;
        }
        d[targets[item]] -= scale;
    }
}

pub(crate) fn mse_forward<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>) -> Result<T> {
    if a.shape() != b.shape() || a.is_empty() {
        return Err(TensorError::ShapeMismatch {
            op: "mse",
            left: a.shape().to_vec(),
            right: b.shape().to_vec(),
        });
    }
    let rows = if a.shape().len() >= 2 { a.shape()[0] } else { 1 };
    let d = a.len() / rows;
    let sq: T = a.data().iter().zip(b.data()).map(|(&x, &y)| (x - y) * (x - y)).sum();
    Ok(sq / T::from_usize(d * rows).expect("small count"))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn block_softmax_hand_cases() {
        let layout = BlockLayout::from_sizes(&[2, 2]).unwrap();
        let a = Tensor::from_vec(vec![1, 4], vec![1.0f64, 1.0, 2.0, 0.0]).unwrap();
        let y0 = block_softmax(&a, &layout, &[0]).unwrap();
        assert_eq!(y0.data(), &[0.5, 0.5, 0.0, 0.0]);
        let y1 = block_softmax(&a, &layout, &[1]).unwrap();
        let e2 = 2f64.exp();
        assert_eq!(&y1.data()[..2], &[0.0, 0.0]);
        assert!((y1.data()[2] - e2 / (e2 + 1.0)).abs() < 1e-15);
        assert!((y1.data()[2] - 0.88080).abs() < 1e-5);
        assert!((y1.data()[3] - 0.11920).abs() < 1e-5);
    }

    #[test]
    fn cross_entropy_equal_logits_is_ln2() {
        let a = Tensor::from_vec(vec![1, 2], vec![0.3f64, 0.3]).unwrap();
        let (l, _) = cross_entropy_forward(&a, &[0], None).unwrap();
        assert!((l - std::f64::consts::LN_2).abs() < 1e-15);
    }

    #[test]
    fn cross_entropy_vanishes_with_margin() {
        let a = Tensor::from_vec(vec![1, 3], vec![60.0f64, 0.0, -5.0]).unwrap();
        let (l, _) = cross_entropy_forward(&a, &[0], None).unwrap();
        assert!(l < 1e-25);
    }

    #[test]
    fn cross_entropy_rejects_target_in_other_block() {
        let layout = BlockLayout::from_sizes(&[2, 2]).unwrap();
        let a = Tensor::from_vec(vec![1, 4], vec![0.0f64; 4]).unwrap();
        let err = cross_entropy_forward(&a, &[3], Some((&layout, &[0]))).unwrap_err();
        assert!(matches!(err, TensorError::TargetOutsideBlock { target: 3, .. }));
    }

    #[test]
    fn mse_hand_cases() {
        let t = |v: Vec<f64>| Tensor::from_vec(vec![v.len()], v).unwrap();
        assert_eq!(mse_forward(&t(vec![1.0, 0.0]), &t(vec![0.0, 1.0])).unwrap(), 1.0);
        assert_eq!(mse_forward(&t(vec![2.0, 2.0]), &t(vec![0.0, 0.0])).unwrap(), 4.0);
        assert_eq!(mse_forward(&t(vec![0.5, -3.0]), &t(vec![0.5, -3.0])).unwrap(), 0.0);
        assert!(mse_forward(&t(vec![1.0]), &t(vec![1.0, 2.0])).is_err());
    }
}
