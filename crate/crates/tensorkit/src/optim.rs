use crate::error::{Result, TensorError};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// One SGD step with Nesterov momentum, in the look-ahead form
///
/// ```text
/// v ← μ·v − lr·g
/// θ ← θ + μ·v − lr·g
/// ```
///
/// which is the usual Nesterov update rewritten in terms of the current
/// (rather than look-ahead) parameters. With `μ = 0` it is plain SGD.
pub fn sgd_nesterov_step<T: Scalar>(
    params: &mut [Tensor<T>],
    grads: &[Tensor<T>],
    velocity: &mut [Tensor<T>],
    lr: T,
    momentum: T,
) -> Result<()> {
    if params.len() != grads.len() || params.len() != velocity.len() {
        return Err(TensorError::Invalid {
            op: "sgd_nesterov_step",
            msg: format!(
                "{} params, {} grads, {} velocity buffers",
                params.len(),
                grads.len(),
                velocity.len()
            ),
        });
    }
    for ((p, g), v) in params.iter_mut().zip(grads).zip(velocity.iter_mut()) {
        if p.shape() != g.shape() || p.shape() != v.shape() {
            return Err(TensorError::ShapeMismatch {
                op: "sgd_nesterov_step",
                left: p.shape().to_vec(),
                right: g.shape().to_vec(),
            });
        }
        for ((pv, &gv), vv) in p.data_mut().iter_mut().zip(g.data()).zip(v.data_mut().iter_mut()) {
            *vv = momentum * *vv - lr * gv;
            *pv += momentum * *vv - lr * gv;
        }
    }
    Ok(())
}
