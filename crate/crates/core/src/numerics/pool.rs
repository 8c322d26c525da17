use super::tensor::{Scalar, Tensor};
use crate::error::{GaitError, Result};

/// Output of a pooling forward pass together with the winning input index of
/// every output cell, which routes the gradient on the way back.
#[derive(Debug, Clone)]
pub struct Pooled<T> {
    pub output: Tensor<T>,
    pub argmax: Vec<u32>,
}

/// 2x2 max pooling with stride 2 over `[c, h, w]`.
///
/// Ties go to the first cell in row-major window order.
pub fn maxpool2d<T: Scalar>(input: &Tensor<T>) -> Result<Pooled<T>> {
    let (c, h, w) = input.dims3()?;
    if h % 2 != 0 || w % 2 != 0 {
        return Err(GaitError::Shape(format!(
            "maxpool2d needs even spatial dims, got {h}x{w}"
        )));
    }
    let (ho, wo) = (h / 2, w / 2);
    let x = input.data();
    let mut out = Vec::with_capacity(c * ho * wo);
    let mut argmax = Vec::with_capacity(c * ho * wo);
    for ch in 0..c {
        let base = ch * h * w;
        for oy in 0..ho {
            for ox in 0..wo {
                let top = base + 2 * oy * w + 2 * ox;
                let window = [top, top + 1, top + w, top + w + 1];
                let mut best = window[0];
                for &idx in &window[1..] {
                    if x[idx] > x[best] {
                        best = idx;
                    }
                }
                out.push(x[best]);
                argmax.push(best as u32);
            }
        }
    }
    Ok(Pooled {
        output: Tensor::new(&[c, ho, wo], out)?,
        argmax,
    })
}

/// Scatter the pooled gradient back to the winning input cells.
pub fn maxpool2d_backward<T: Scalar>(
    input_shape: &[usize],
    argmax: &[u32],
    grad_out: &Tensor<T>,
) -> Result<Tensor<T>> {
    if argmax.len() != grad_out.len() {
        return Err(GaitError::Shape(
            "pool gradient does not match recorded argmax".into(),
        ));
    }
    let mut grad = Tensor::zeros(input_shape);
    let g = grad.data_mut();
    for (&idx, &d) in argmax.iter().zip(grad_out.data()) {
        g[idx as usize] += d;
    }
    Ok(grad)
}

/// Width pooling `[c, h, w] -> [c, h]`: mean over `w` plus max over `w`.
pub fn global_pool<T: Scalar>(input: &Tensor<T>) -> Result<Pooled<T>> {
    let (c, h, w) = input.dims3()?;
    let inv_w = T::one() / T::of(w as f64);
    let mut out = Vec::with_capacity(c * h);
    let mut argmax = Vec::with_capacity(c * h);
    for (r, row) in input.data().chunks_exact(w).enumerate() {
        let mut best = 0;
        let mut sum = T::zero();
        for (i, &v) in row.iter().enumerate() {
            sum += v;
            if v > row[best] {
                best = i;
            }
        }
        out.push(sum * inv_w + row[best]);
        argmax.push((r * w + best) as u32);
    }
    Ok(Pooled {
        output: Tensor::new(&[c, h], out)?,
        argmax,
    })
}

pub fn global_pool_backward<T: Scalar>(
    input_shape: &[usize],
    argmax: &[u32],
    grad_out: &Tensor<T>,
) -> Result<Tensor<T>> {
    let [c, h, w] = *input_shape else {
        return Err(GaitError::Shape(format!(
            "global_pool input must be rank 3, got {input_shape:?}"
        )));
    };
    if grad_out.shape() != [c, h] || argmax.len() != c * h {
        return Err(GaitError::Shape(
            "global_pool gradient has wrong shape".into(),
        ));
    }
    let inv_w = T::one() / T::of(w as f64);
    let mut grad = Tensor::zeros(input_shape);
    let g = grad.data_mut();
    for (r, &d) in grad_out.data().iter().enumerate() {
        let share = d * inv_w;
        g[r * w..(r + 1) * w].iter_mut().for_each(|v| *v = share);
        g[argmax[r] as usize] += d;
    }
    Ok(grad)
}
