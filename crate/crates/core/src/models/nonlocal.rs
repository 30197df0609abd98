//! Non-local (spatial self-attention) block.

use sigan_tensor::{ops::attention_weights, Conv2dGeometry, Float, Tape, Tensor, Var};

use super::arch::NonLocalConfig;
use super::params::ForwardCtx;
use crate::error::{Result, SiganError};

fn check_budget(h: usize, w: usize, max_positions: usize) -> Result<()> {
    if h * w > max_positions {
        return Err(SiganError::Config(format!(
            "non-local block over {h}x{w} = {} positions exceeds the budget of {max_positions}; apply it at a coarser resolution",
            h * w
        )));
    }
    Ok(())
}

/// Row-stochastic attention `softmax(f f^T)` per batch element, `B x N x N`.
pub fn attention_matrix<T: Float>(f: &Tensor<T>) -> Tensor<T> {
    attention_weights(f, f)
}

/// `o = softmax(f f^T) f + f` with no projections or pooling.
pub fn nonlocal_forward<T: Float>(f: &Tensor<T>, max_positions: usize) -> Result<Tensor<T>> {
    if f.ndim() != 4 {
        return Err(SiganError::shape("non-local input", "B x C x H x W", f.shape()));
    }
    let (_, _, h, w) = f.dims4();
    check_budget(h, w, max_positions)?;
    let tape = Tape::new();
    let x = tape.constant(f.clone());
    let out = x.spatial_attention(x, x).add(x);
    Ok((*out.value()).clone())
}

/// The block as used inside the generator: optional average pooling down to
/// the attention budget, optional 1x1 projections, residual connection at
/// full resolution.
pub(crate) fn nonlocal_block<'t, T: Float>(
    ctx: &ForwardCtx<'t, '_, T>,
    cfg: &NonLocalConfig,
    h: Var<'t, T>,
) -> Result<Var<'t, T>> {
    let shape = h.shape();
    let side = shape[2].max(shape[3]);
    let mut factor = 1;
    while (shape[2] / factor) * (shape[3] / factor) > cfg.max_positions && factor < side {
        factor *= 2;
    }
    if !shape[2].is_multiple_of(factor) || !shape[3].is_multiple_of(factor) {
        return Err(SiganError::Config(format!(
            "non-local block: {}x{} feature cannot be pooled by {factor}; apply it at a coarser resolution",
            shape[2], shape[3]
        )));
    }
    check_budget(shape[2] / factor, shape[3] / factor, cfg.max_positions)?;

    let one = Conv2dGeometry::square(1, 1, 0);
    let mut f = h.avg_pool(factor);
    if cfg.projection_channels.is_some() {
        f = ctx.conv("nonlocal.proj_in", f, one);
    }
    let attended = if cfg.learned_qkv {
        let q = ctx.conv("nonlocal.query", f, one);
        let k = ctx.conv("nonlocal.key", f, one);
        let v = ctx.conv("nonlocal.value", f, one);
        q.spatial_attention(k, v)
    } else {
        f.spatial_attention(f, f)
    };
    let y = if cfg.projection_channels.is_some() { ctx.conv("nonlocal.proj_out", attended, one) } else { attended };
    Ok(h.add(y.upsample_nearest(factor)))
}
