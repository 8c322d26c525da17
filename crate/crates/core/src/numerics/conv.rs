//! 2-D cross-correlation with zero padding, via im2col + GEMM.

use serde::{Deserialize, Serialize};

use super::tensor::{Scalar, Tensor};
use crate::error::{GaitError, Result};

/// Geometry of one square-kernel convolution layer.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConvSpec {
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: usize,
    pub pad: usize,
    pub stride: usize,
}

impl ConvSpec {
    pub const fn new(in_channels: usize, out_channels: usize, kernel: usize, pad: usize) -> Self {
        ConvSpec {
            in_channels,
            out_channels,
            kernel,
            pad,
            stride: 1,
        }
    }

    pub fn weight_shape(&self) -> [usize; 4] {
        [
            self.out_channels,
            self.in_channels,
            self.kernel,
            self.kernel,
        ]
    }

    pub fn output_hw(&self, h: usize, w: usize) -> Result<(usize, usize)> {
        if self.stride == 0 || self.kernel == 0 {
            return Err(GaitError::Shape(format!("degenerate conv spec {self:?}")));
        }
        let ph = h + 2 * self.pad;
        let pw = w + 2 * self.pad;
        if ph < self.kernel || pw < self.kernel {
            return Err(GaitError::Shape(format!(
                "input {h}x{w} with pad {} is smaller than kernel {}",
                self.pad, self.kernel
            )));
        }
        Ok((
            (ph - self.kernel) / self.stride + 1,
            (pw - self.kernel) / self.stride + 1,
        ))
    }

    fn check<T: Scalar>(
        &self,
        input: &Tensor<T>,
        weight: &Tensor<T>,
        bias: &Tensor<T>,
    ) -> Result<(usize, usize, usize, usize)> {
        let (c, h, w) = input.dims3()?;
        if c != self.in_channels {
            return Err(GaitError::Shape(format!(
                "conv expects {} input channels, got input {:?}",
                self.in_channels,
                input.shape()
            )));
        }
        if weight.shape() != self.weight_shape() {
            return Err(GaitError::Shape(format!(
                "conv weight {:?} does not match spec {:?}",
                weight.shape(),
                self.weight_shape()
            )));
        }
        if bias.shape() != [self.out_channels] {
            return Err(GaitError::Shape(format!(
                "conv bias {:?} does not match {} output channels",
                bias.shape(),
                self.out_channels
            )));
        }
        let (ho, wo) = self.output_hw(h, w)?;
        Ok((h, w, ho, wo))
    }
}

/// Unfold `[c, h, w]` into a `(c*k*k) x (ho*wo)` column matrix.
fn im2col<T: Scalar>(
    input: &[T],
    c: usize,
    h: usize,
    w: usize,
    spec: &ConvSpec,
    ho: usize,
    wo: usize,
) -> Vec<T> {
    let k = spec.kernel;
    let p = ho * wo;
    let mut cols = vec![T::zero(); c * k * k * p];
    for ch in 0..c {
        let plane = &input[ch * h * w..(ch + 1) * h * w];
        for ky in 0..k {
            for kx in 0..k {
                let row = (ch * k + ky) * k + kx;
                let dst = &mut cols[row * p..(row + 1) * p];
                for oy in 0..ho {
                    let iy = (oy * spec.stride + ky) as isize - spec.pad as isize;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    let src = &plane[iy as usize * w..(iy as usize + 1) * w];
                    let out_row = &mut dst[oy * wo..(oy + 1) * wo];
                    for (ox, o) in out_row.iter_mut().enumerate() {
                        let ix = (ox * spec.stride + kx) as isize - spec.pad as isize;
                        if ix >= 0 && ix < w as isize {
                            *o = src[ix as usize];
                        }
                    }
                }
            }
        }
    }
    cols
}

/// Fold a column matrix back onto `[c, h, w]`, summing overlaps.
fn col2im<T: Scalar>(
    cols: &[T],
    c: usize,
    h: usize,
    w: usize,
    spec: &ConvSpec,
    ho: usize,
    wo: usize,
) -> Vec<T> {
    let k = spec.kernel;
    let p = ho * wo;
    let mut out = vec![T::zero(); c * h * w];
    for ch in 0..c {
        let plane = &mut out[ch * h * w..(ch + 1) * h * w];
        for ky in 0..k {
            for kx in 0..k {
                let row = (ch * k + ky) * k + kx;
                let src = &cols[row * p..(row + 1) * p];
                for oy in 0..ho {
                    let iy = (oy * spec.stride + ky) as isize - spec.pad as isize;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    let dst = &mut plane[iy as usize * w..(iy as usize + 1) * w];
                    for ox in 0..wo {
                        let ix = (ox * spec.stride + kx) as isize - spec.pad as isize;
                        if ix >= 0 && ix < w as isize {
                            dst[ix as usize] += src[oy * wo + ox];
                        }
                    }
                }
            }
        }
    }
    out
}

/// `input [c_in, h, w]` * `weight [c_out, c_in, k, k]` + `bias [c_out]`.
pub fn conv2d<T: Scalar>(
    input: &Tensor<T>,
    weight: &Tensor<T>,
    bias: &Tensor<T>,
    spec: &ConvSpec,
) -> Result<Tensor<T>> {
    let (h, w, ho, wo) = spec.check(input, weight, bias)?;
    let c = spec.in_channels;
    let p = ho * wo;
    let kk = c * spec.kernel * spec.kernel;
    let cols = im2col(input.data(), c, h, w, spec, ho, wo);
    let mut out = Vec::with_capacity(spec.out_channels * p);
    for &b in bias.data() {
        out.extend(std::iter::repeat_n(b, p));
    }
    T::gemm(
        spec.out_channels,
        kk,
        p,
        T::one(),
        weight.data(),
        false,
        &cols,
        false,
        T::one(),
        &mut out,
    );
    Tensor::new(&[spec.out_channels, ho, wo], out)
}

/// Backward pass of [`conv2d`]. Weight and bias gradients are accumulated into
/// the given buffers; the input gradient is returned when requested.
pub fn conv2d_backward<T: Scalar>(
    input: &Tensor<T>,
    weight: &Tensor<T>,
    spec: &ConvSpec,
    grad_out: &Tensor<T>,
    grad_weight: &mut Tensor<T>,
    grad_bias: &mut Tensor<T>,
    need_input_grad: bool,
) -> Result<Option<Tensor<T>>> {
    let (h, w, ho, wo) = spec.check(input, weight, grad_bias)?;
    if grad_out.shape() != [spec.out_channels, ho, wo] {
        return Err(GaitError::Shape(format!(
            "conv output gradient {:?} does not match [{}, {ho}, {wo}]",
            grad_out.shape(),
            spec.out_channels
        )));
    }
    if grad_weight.shape() != weight.shape() {
        return Err(GaitError::Shape(
            "conv weight gradient buffer has wrong shape".into(),
        ));
    }
    let c = spec.in_channels;
    let p = ho * wo;
    let kk = c * spec.kernel * spec.kernel;
    let cols = im2col(input.data(), c, h, w, spec, ho, wo);
    let dy = grad_out.data();

    // dW += dY . cols^T
    T::gemm(
        spec.out_channels,
        p,
        kk,
        T::one(),
        dy,
        false,
        &cols,
        true,
        T::one(),
        grad_weight.data_mut(),
    );
    for (gb, row) in grad_bias.data_mut().iter_mut().zip(dy.chunks_exact(p)) {
        *gb += row.iter().copied().sum::<T>();
    }
    if !need_input_grad {
        return Ok(None);
    }
    // dcols = W^T . dY
    let mut dcols = vec![T::zero(); kk * p];
    T::gemm(
        kk,
        spec.out_channels,
        p,
        T::one(),
        weight.data(),
        true,
        dy,
        false,
        T::zero(),
        &mut dcols,
    );
    let dx = col2im(&dcols, c, h, w, spec, ho, wo);
    Ok(Some(Tensor::new(&[c, h, w], dx)?))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::gradcheck::finite_diff_check;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// Direct nested-loop cross-correlation.
    fn naive(
        input: &Tensor<f64>,
        weight: &Tensor<f64>,
        bias: &Tensor<f64>,
        spec: &ConvSpec,
    ) -> Tensor<f64> {
        let (c, h, w) = input.dims3().unwrap();
        let (ho, wo) = spec.output_hw(h, w).unwrap();
        let k = spec.kernel;
        let mut out = Tensor::zeros(&[spec.out_channels, ho, wo]);
        for o in 0..spec.out_channels {
            for y in 0..ho {
                for x in 0..wo {
                    let mut acc = bias.data()[o];
                    for ch in 0..c {
                        for ky in 0..k {
                            for kx in 0..k {
                                let iy = (y * spec.stride + ky) as isize - spec.pad as isize;
                                let ix = (x * spec.stride + kx) as isize - spec.pad as isize;
                                if iy >= 0 && ix >= 0 && (iy as usize) < h && (ix as usize) < w {
                                    acc += input.data()[(ch * h + iy as usize) * w + ix as usize]
                                        * weight.data()[((o * c + ch) * k + ky) * k + kx];
                                }
                            }
                        }
                    }
                    out.data_mut()[(o * ho + y) * wo + x] = acc;
                }
            }
        }
        out
    }

    fn random(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor<f64> {
        let n = shape.iter().product();
        Tensor::new(shape, (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap()
    }

    #[test]
    fn first_fem_layer_shape() {
        let spec = ConvSpec::new(1, 32, 5, 2);
        let out = conv2d(
            &Tensor::<f32>::zeros(&[1, 64, 44]),
            &Tensor::zeros(&spec.weight_shape()),
            &Tensor::zeros(&[32]),
            &spec,
        )
        .unwrap();
        assert_eq!(out.shape(), [32, 64, 44]);
    }

    #[test]
    fn identity_kernel_is_identity() {
        let spec = ConvSpec::new(1, 1, 1, 0);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let x = random(&[1, 5, 7], &mut rng);
        let y = conv2d(
            &x,
            &Tensor::full(&[1, 1, 1, 1], 1.0),
            &Tensor::zeros(&[1]),
            &spec,
        )
        .unwrap();
        assert_eq!(x, y);
    }

    #[test]
    fn all_ones_three_by_three() {
        let spec = ConvSpec::new(1, 1, 3, 1);
        let y = conv2d(
            &Tensor::<f32>::full(&[1, 3, 3], 1.0),
            &Tensor::full(&[1, 1, 3, 3], 1.0),
            &Tensor::zeros(&[1]),
            &spec,
        )
        .unwrap();
        assert_eq!(y.data()[4], 9.0);
        assert_eq!(y.data()[0], 4.0);
        assert_eq!(y.data()[8], 4.0);
        assert_eq!(y.data()[1], 6.0);
    }

    #[test]
    fn matches_naive_loops() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for (spec, h, w) in [
            (ConvSpec::new(2, 3, 3, 1), 5, 4),
            (ConvSpec::new(1, 2, 5, 2), 6, 6),
            (
                ConvSpec {
                    stride: 2,
                    ..ConvSpec::new(2, 2, 3, 0)
                },
                7,
                5,
            ),
        ] {
            let x = random(&[spec.in_channels, h, w], &mut rng);
            let wt = random(&spec.weight_shape(), &mut rng);
            let b = random(&[spec.out_channels], &mut rng);
            let fast = conv2d(&x, &wt, &b, &spec).unwrap();
            let slow = naive(&x, &wt, &b, &spec);
            for (a, e) in fast.data().iter().zip(slow.data()) {
                assert!((a - e).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn shape_mismatch_is_rejected() {
        let spec = ConvSpec::new(2, 3, 3, 1);
        let err = conv2d(
            &Tensor::<f32>::zeros(&[1, 4, 4]),
            &Tensor::zeros(&spec.weight_shape()),
            &Tensor::zeros(&[3]),
            &spec,
        )
        .unwrap_err();
        assert!(err.to_string().contains("input channels"));
        assert!(conv2d(
            &Tensor::<f32>::zeros(&[2, 4, 4]),
            &Tensor::zeros(&[3, 2, 5, 5]),
            &Tensor::zeros(&[3]),
            &spec
        )
        .is_err());
    }

    #[test]
    fn linear_in_input_without_bias() {
        let spec = ConvSpec::new(2, 2, 3, 1);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let wt = random(&spec.weight_shape(), &mut rng);
        let zero = Tensor::zeros(&[2]);
        let x = random(&[2, 4, 5], &mut rng);
        let y = random(&[2, 4, 5], &mut rng);
        let (a, b) = (0.7, -1.3);
        let mut combo = x.scale(a);
        combo.add_assign(&y.scale(b));
        let lhs = conv2d(&combo, &wt, &zero, &spec).unwrap();
        let mut rhs = conv2d(&x, &wt, &zero, &spec).unwrap().scale(a);
        rhs.add_assign(&conv2d(&y, &wt, &zero, &spec).unwrap().scale(b));
        for (l, r) in lhs.data().iter().zip(rhs.data()) {
            assert!((l - r).abs() < 1e-12);
        }
    }

    #[test]
    fn gradient_on_six_by_six() {
        let spec = ConvSpec::new(1, 2, 3, 1);
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let x = random(&[1, 6, 6], &mut rng);
        let wt = random(&spec.weight_shape(), &mut rng);
        let b = random(&[2], &mut rng);
        let proj = random(&[2, 6, 6], &mut rng);
        let nx = x.len();
        let nw = wt.len();
        let mut packed = x.data().to_vec();
        packed.extend_from_slice(wt.data());
        packed.extend_from_slice(b.data());
        let report = finite_diff_check(
            |v: &[f64]| {
                let x = Tensor::new(&[1, 6, 6], v[..nx].to_vec()).unwrap();
                let wt = Tensor::new(&spec.weight_shape(), v[nx..nx + nw].to_vec()).unwrap();
                let b = Tensor::new(&[2], v[nx + nw..].to_vec()).unwrap();
                let y = conv2d(&x, &wt, &b, &spec).unwrap();
                let loss = y.data().iter().zip(proj.data()).map(|(a, p)| a * p).sum();
                let mut gw = Tensor::zeros_like(&wt);
                let mut gb = Tensor::zeros(&[2]);
                let gx = conv2d_backward(&x, &wt, &spec, &proj, &mut gw, &mut gb, true)
                    .unwrap()
                    .unwrap();
                let mut grad = gx.into_data();
                grad.extend(gw.into_data());
                grad.extend(gb.into_data());
                (loss, grad)
            },
            &packed,
            1e-6,
        );
        assert!(report.pass, "{report:?}");
    }
}
