use super::tensor::{Scalar, Tensor};

/// Elementwise `x` for `x >= 0`, `slope * x` otherwise.
pub fn leaky_rectify<T: Scalar>(input: &Tensor<T>, slope: T) -> Tensor<T> {
    let data = input
        .data()
        .iter()
        .map(|&x| if x >= T::zero() { x } else { slope * x })
        .collect();
    Tensor::new(input.shape(), data).expect("shape preserved")
}

/// Gradient through [`leaky_rectify`], evaluated at the forward input.
pub fn leaky_rectify_backward<T: Scalar>(
    input: &Tensor<T>,
    grad_out: &Tensor<T>,
    slope: T,
) -> Tensor<T> {
    assert_eq!(input.shape(), grad_out.shape());
    let data = input
        .data()
        .iter()
        .zip(grad_out.data())
        .map(|(&x, &g)| if x >= T::zero() { g } else { slope * g })
        .collect();
    Tensor::new(input.shape(), data).expect("shape preserved")
}

/// In-place variant used on the hot path; returns nothing, keeps the buffer.
pub fn leaky_rectify_inplace<T: Scalar>(t: &mut Tensor<T>, slope: T) {
    for x in t.data_mut() {
        if *x < T::zero() {
            *x = slope * *x;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn definition_points() {
        let x = Tensor::<f64>::new(&[3], vec![0.0, -2.0, 5.0]).unwrap();
        let y = leaky_rectify(&x, 0.01);
        assert_eq!(y.data()[0], 0.0);
        assert!((y.data()[1] + 0.02).abs() < 1e-15);
        assert_eq!(y.data()[2], 5.0);
        assert_eq!(leaky_rectify(&x, 0.3).data()[2], 5.0);
        let g = leaky_rectify_backward(&x, &Tensor::full(&[3], 1.0), 0.01);
        assert_eq!(g.data(), [1.0, 0.01, 1.0]);
    }
}
