use super::tensor::{Scalar, Tensor};
use crate::error::{GaitError, Result};

/// `y = W x + b` with `W: [out, in]`.
pub fn affine<T: Scalar>(x: &[T], weight: &Tensor<T>, bias: &Tensor<T>) -> Result<Vec<T>> {
    let [out, inp] = *weight.shape() else {
        return Err(GaitError::Shape(format!(
            "affine weight must be rank 2, got {:?}",
            weight.shape()
        )));
    };
    if x.len() != inp || bias.shape() != [out] {
        return Err(GaitError::Shape(format!(
            "affine {:?} cannot map input of length {} with bias {:?}",
            weight.shape(),
            x.len(),
            bias.shape()
        )));
    }
    let mut y = bias.data().to_vec();
    T::gemm(
        out,
        inp,
        1,
        T::one(),
        weight.data(),
        false,
        x,
        false,
        T::one(),
        &mut y,
    );
    Ok(y)
}

/// Accumulates `dW += dy x^T`, `db += dy`; returns `dx = W^T dy`.
pub fn affine_backward<T: Scalar>(
    x: &[T],
    weight: &Tensor<T>,
    grad_y: &[T],
    grad_weight: &mut Tensor<T>,
    grad_bias: &mut Tensor<T>,
) -> Vec<T> {
    let (out, inp) = (weight.shape()[0], weight.shape()[1]);
    assert_eq!(grad_y.len(), out);
    assert_eq!(x.len(), inp);
    T::gemm(
        out,
        1,
        inp,
        T::one(),
        grad_y,
        false,
        x,
        false,
        T::one(),
        grad_weight.data_mut(),
    );
    for (b, &g) in grad_bias.data_mut().iter_mut().zip(grad_y) {
        *b += g;
    }
    let mut dx = vec![T::zero(); inp];
    T::gemm(
        inp,
        out,
        1,
        T::one(),
        weight.data(),
        true,
        grad_y,
        false,
        T::zero(),
        &mut dx,
    );
    dx
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn small_affine() {
        let w = Tensor::<f64>::new(&[2, 3], vec![1.0, 2.0, 3.0, -1.0, 0.0, 1.0]).unwrap();
        let b = Tensor::new(&[2], vec![0.5, -0.5]).unwrap();
        let y = affine(&[1.0, 1.0, 2.0], &w, &b).unwrap();
        assert_eq!(y, [9.5, 0.5]);
        let mut gw = Tensor::zeros_like(&w);
        let mut gb = Tensor::zeros(&[2]);
        let dx = affine_backward(&[1.0, 1.0, 2.0], &w, &[1.0, 2.0], &mut gw, &mut gb);
        assert_eq!(dx, [-1.0, 2.0, 5.0]);
        assert_eq!(gw.data(), [1.0, 1.0, 2.0, 2.0, 2.0, 4.0]);
        assert_eq!(gb.data(), [1.0, 2.0]);
    }
}
