use crate::error::{Result, TensorError};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Output extent of a ceil-mode pooling window.
pub fn pooled_extent(n: usize, k: usize, s: usize) -> usize {
    if n <= k {
        1
    } else {
        (n - k).div_ceil(s) + 1
    }
}

fn dims4(op: &'static str, shape: &[usize]) -> Result<[usize; 4]> {
    match shape {
        &[b, c, f, t] => Ok([b, c, f, t]),
        _ => Err(TensorError::Invalid {
            op,
            msg: format!("expected a [B,C,F,T] tensor, got {shape:?}"),
        }),
    }
}

fn check_lens(op: &'static str, lens: &[usize], batch: usize, t: usize) -> Result<()> {
    if lens.len() != batch {
        return Err(TensorError::Invalid {
            op,
            msg: format!("{} lengths for batch of {batch}", lens.len()),
        });
    }
    if let Some((b, &l)) = lens.iter().enumerate().find(|(_, &l)| l == 0 || l > t) {
        return Err(TensorError::Invalid {
            op,
            msg: format!("valid length {l} of item {b} outside [1, {t}]"),
        });
    }
    Ok(())
}

pub(crate) fn max_pool2d<T: Scalar>(
    x: &Tensor<T>,
    (kf, kt): (usize, usize),
    (sf, st): (usize, usize),
) -> Result<(Tensor<T>, Vec<usize>)> {
    let [b, c, f, t] = dims4("max_pool2d", x.shape())?;
    if kf == 0 || kt == 0 || sf == 0 || st == 0 {
        return Err(TensorError::Invalid {
            op: "max_pool2d",
            msg: "kernel and stride must be positive".into(),
        });
    }
    let (of, ot) = (pooled_extent(f, kf, sf), pooled_extent(t, kt, st));
    let mut out = Vec::with_capacity(b * c * of * ot);
    let mut argmax = Vec::with_capacity(out.capacity());
    let data = x.data();
    for plane in 0..b * c {
        let base = plane * f * t;
        for i in 0..of {
            for j in 0..ot {
                let mut best = base + i * sf * t + j * st;
                for fi in i * sf..(i * sf + kf).min(f) {
                    for ti in j * st..(j * st + kt).min(t) {
                        let idx = base + fi * t + ti;
                        if data[idx] > data[best] {
                            best = idx;
                        }
                    }
                }
                out.push(data[best]);
                argmax.push(best);
            }
        }
    }
    Ok((Tensor::from_vec(vec![b, c, of, ot], out)?, argmax))
}

pub(crate) fn mask_time<T: Scalar>(x: &Tensor<T>, lens: &[usize]) -> Result<Tensor<T>> {
    let [b, _, _, t] = dims4("mask_time", x.shape())?;
    check_lens("mask_time", lens, b, t)?;
    let mut out = x.clone();
    let per_item = out.len() / b.max(1);
    for (item, chunk) in out.data_mut().chunks_mut(per_item.max(1)).enumerate() {
        let l = lens[item];
        if l == t {
            continue;
        }
        for row in chunk.chunks_mut(t) {
            row[l..].fill(T::zero());
        }
    }
    Ok(out)
}

pub(crate) fn gap_masked<T: Scalar>(x: &Tensor<T>, lens: &[usize]) -> Result<Tensor<T>> {
    let [b, c, f, t] = dims4("gap_masked", x.shape())?;
    check_lens("gap_masked", lens, b, t)?;
    let mut out = Vec::with_capacity(b * c);
    for (plane, chunk) in x.data().chunks(f * t).enumerate() {
        let l = lens[plane / c];
        let mut acc = T::zero();
        for row in chunk.chunks(t) {
            acc += row[..l].iter().copied().sum::<T>();
        }
        out.push(acc / T::from_usize(f * l).expect("small count"));
    }
    Tensor::from_vec(vec![b, c], out)
}

pub(crate) fn gap_masked_backward<T: Scalar>(g: &Tensor<T>, lens: &[usize], dx: &mut Tensor<T>) {
    let [_, c, f, t] = dims4("gap_masked", dx.shape()).expect("validated in forward");
    for (plane, chunk) in dx.data_mut().chunks_mut(f * t).enumerate() {
        let l = lens[plane / c];
        let share = g.data()[plane] / T::from_usize(f * l).expect("small count");
        for row in chunk.chunks_mut(t) {
            for v in &mut row[..l] {
                *v += share;
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ceil_mode_extent() {
        assert_eq!(pooled_extent(4, 2, 2), 2);
        assert_eq!(pooled_extent(5, 2, 2), 3);
        assert_eq!(pooled_extent(1, 2, 2), 1);
        assert_eq!(pooled_extent(2, 2, 2), 1);
    }

    #[test]
    fn gap_hand_mean() {
        let x = Tensor::from_vec(vec![1, 1, 1, 4], vec![1.0f64, 2.0, 3.0, 4.0]).unwrap();
        assert_eq!(gap_masked(&x, &[2]).unwrap().data(), &[1.5]);
        assert_eq!(gap_masked(&x, &[4]).unwrap().data(), &[2.5]);
        assert!(gap_masked(&x, &[0]).is_err());
        assert!(gap_masked(&x, &[5]).is_err());
    }

    #[test]
    fn gap_constant_input() {
        let x = Tensor::full(&[2, 3, 4, 5], 0.75f64);
        let y = gap_masked(&x, &[5, 2]).unwrap();
        assert!(y.data().iter().all(|&v| (v - 0.75).abs() < 1e-15));
    }

    #[test]
    fn max_pool_picks_window_maximum() {
        let x = Tensor::from_vec(vec![1, 1, 2, 3], vec![1.0f64, 5.0, 2.0, 4.0, 3.0, 6.0]).unwrap();
        let (y, arg) = max_pool2d(&x, (2, 2), (2, 2)).unwrap();
        assert_eq!(y.shape(), &[1, 1, 1, 2]);
        assert_eq!(y.data(), &[5.0, 6.0]);
        assert_eq!(arg, vec![1, 5]);
    }
}
