//! Direct 2-D cross-correlation lowered to GEMM through an im2col buffer.

use crate::error::{Result, TensorError};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy)]
pub(crate) struct ConvGeom {
    pub batch: usize,
    pub in_ch: usize,
    pub in_f: usize,
    pub in_t: usize,
    pub out_ch: usize,
    pub kf: usize,
    pub kt: usize,
    pub sf: usize,
    pub st: usize,
    pub pf: usize,
    pub pt: usize,
    pub out_f: usize,
    pub out_t: usize,
}

impl ConvGeom {
    pub fn new(
        x: &[usize],
        w: &[usize],
        bias: Option<&[usize]>,
        (sf, st): (usize, usize),
        (pf, pt): (usize, usize),
    ) -> Result<Self> {
        let mismatch = || TensorError::ShapeMismatch {
            op: "conv2d",
            left: x.to_vec(),
            right: w.to_vec(),
        };
        if x.len() != 4 || w.len() != 4 || x[1] != w[1] {
            return Err(mismatch());
        }
        if sf == 0 || st == 0 {
            return Err(TensorError::Invalid {
                op: "conv2d",
                msg: "stride must be positive".into(),
            });
        }
        if x[2] + 2 * pf < w[2] || x[3] + 2 * pt < w[3] || w[2] == 0 || w[3] == 0 {
            return Err(mismatch());
        }
        if let Some(b) = bias {
            if b != [w[0]] {
                return Err(TensorError::ShapeMismatch {
                    op: "conv2d bias",
                    left: b.to_vec(),
                    right: vec![w[0]],
                });
            }
        }
        Ok(Self {
            batch: x[0],
            in_ch: x[1],
            in_f: x[2],
            in_t: x[3],
            out_ch: w[0],
            kf: w[2],
            kt: w[3],
            sf,
            st,
            pf,
            pt,
            out_f: (x[2] + 2 * pf - w[2]) / sf + 1,
            out_t: (x[3] + 2 * pt - w[3]) / st + 1,
        })
    }

    /// Rows of the im2col matrix.
    pub fn k(&self) -> usize {
        self.in_ch * self.kf * self.kt
    }

    /// Output positions per channel.
    pub fn p(&self) -> usize {
        self.out_f * self.out_t
    }

    fn in_item(&self) -> usize {
        self.in_ch * self.in_f * self.in_t
    }

    fn out_item(&self) -> usize {
        self.out_ch * self.p()
    }
}

fn im2col<T: Scalar>(g: &ConvGeom, x: &[T], col: &mut [T]) {
    let p = g.p();
    let mut row = 0;
    for c in 0..g.in_ch {
        let plane = &x[c * g.in_f * g.in_t..(c + 1) * g.in_f * g.in_t];
        for kf in 0..g.kf {
            for kt in 0..g.kt {
                let dst = &mut col[row * p..(row + 1) * p];
                for of in 0..g.out_f {
                    let out_row = &mut dst[of * g.out_t..(of + 1) * g.out_t];
                    let fi = (of * g.sf + kf) as isize - g.pf as isize;
                    if fi < 0 || fi as usize >= g.in_f {
                        out_row.fill(T::zero());
                        continue;
                    }
                    let src = &plane[fi as usize * g.in_t..(fi as usize + 1) * g.in_t];
                    for (ot, o) in out_row.iter_mut().enumerate() {
                        let ti = (ot * g.st + kt) as isize - g.pt as isize;
                        *o = if ti >= 0 && (ti as usize) < g.in_t {
                            src[ti as usize]
                        } else {
                            T::zero()
                        };
                    }
                }
                row += 1;
            }
        }
    }
}

fn col2im_add<T: Scalar>(g: &ConvGeom, col: &[T], dx: &mut [T]) {
    let p = g.p();
    let mut row = 0;
    for c in 0..g.in_ch {
        let plane = &mut dx[c * g.in_f * g.in_t..(c + 1) * g.in_f * g.in_t];
        for kf in 0..g.kf {
            for kt in 0..g.kt {
                let src = &col[row * p..(row + 1) * p];
                for of in 0..g.out_f {
                    let fi = (of * g.sf + kf) as isize - g.pf as isize;
                    if fi < 0 || fi as usize >= g.in_f {
                        continue;
                    }
                    let dst = &mut plane[fi as usize * g.in_t..(fi as usize + 1) * g.in_t];
                    for ot in 0..g.out_t {
                        let ti = (ot * g.st + kt) as isize - g.pt as isize;
                        if ti >= 0 && (ti as usize) < g.in_t {
                            dst[ti as usize] += src[of * g.out_t + ot];
                        }
                    }
                }
                row += 1;
            }
        }
    }
}

/// Returns the `[B,O,F',T']` output and the per-item im2col buffers.
pub(crate) fn forward<T: Scalar>(g: &ConvGeom, x: &[T], w: &[T], bias: Option<&[T]>) -> (Tensor<T>, Vec<T>) {
    let (k, p) = (g.k(), g.p());
    let mut cols = vec![T::zero(); g.batch * k * p];
    let mut out = vec![T::zero(); g.batch * g.out_item()];
    for b in 0..g.batch {
        let col = &mut cols[b * k * p..(b + 1) * k * p];
        im2col(g, &x[b * g.in_item()..(b + 1) * g.in_item()], col);
        let y = &mut out[b * g.out_item()..(b + 1) * g.out_item()];
        if let Some(bias) = bias {
            for (o, &bv) in bias.iter().enumerate() {
                y[o * p..(o + 1) * p].fill(bv);
            }
        }
        let beta = if bias.is_some() { T::one() } else { T::zero() };
        T::gemm(g.out_ch, k, p, T::one(), w, (k, 1), col, (p, 1), beta, y, (p, 1));
    }
    let t = Tensor::from_vec(vec![g.batch, g.out_ch, g.out_f, g.out_t], out).expect("consistent geometry");
    (t, cols)
}

pub(crate) fn backward_weight<T: Scalar>(g: &ConvGeom, dout: &[T], cols: &[T], dw: &mut [T]) {
    let (k, p) = (g.k(), g.p());
    for b in 0..g.batch {
        let dy = &dout[b * g.out_item()..(b + 1) * g.out_item()];
        let col = &cols[b * k * p..(b + 1) * k * p];
        // dW[O×K] += dY[O×P] · colᵀ[P×K]
        T::gemm(g.out_ch, p, k, T::one(), dy, (p, 1), col, (1, p), T::one(), dw, (k, 1));
    }
}

pub(crate) fn backward_bias<T: Scalar>(g: &ConvGeom, dout: &[T], db: &mut [T]) {
    let p = g.p();
    for b in 0..g.batch {
        for (o, d) in db.iter_mut().enumerate() {
            let start = b * g.out_item() + o * p;
            *d += dout[start..start + p].iter().copied().sum::<T>();
        }
    }
}

pub(crate) fn backward_input<T: Scalar>(g: &ConvGeom, dout: &[T], w: &[T], dx: &mut [T]) {
    let (k, p) = (g.k(), g.p());
    let mut dcol = vec![T::zero(); k * p];
    for b in 0..g.batch {
        let dy = &dout[b * g.out_item()..(b + 1) * g.out_item()];
        // dcol[K×P] = Wᵀ[K×O] · dY[O×P]
        T::gemm(
            k,
            g.out_ch,
            p,
            T::one(),
            w,
            (1, k),
            dy,
            (p, 1),
            T::zero(),
            &mut dcol,
            (p, 1),
        );
        col2im_add(g, &dcol, &mut dx[b * g.in_item()..(b + 1) * g.in_item()]);
    }
}
