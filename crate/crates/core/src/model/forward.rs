//! Forward and backward passes of the SFE network.
//!
//! Per-frame activations are not kept between forward and backward: the
//! backward pass recomputes the FEM of each frame that won at least one
//! element of the temporal max, so memory stays bounded by one frame.

use super::params::{SfeParams, FEATURE_WIDTH, FRAME_HEIGHT, FRAME_WIDTH, N_STRIPS};
use crate::error::{GaitError, Result};
use crate::numerics::activation::leaky_rectify_inplace;
use crate::numerics::{
    affine, affine_backward, conv2d, conv2d_backward, global_pool, global_pool_backward,
    leaky_rectify_backward, maxpool2d, maxpool2d_backward, Scalar, Tensor,
};

/// The spatio-temporal feature `f_st`: one vector per horizontal strip.
#[derive(Debug, Clone, PartialEq)]
pub struct StripEmbedding<T> {
    n_strips: usize,
    strip_dim: usize,
    flat: Vec<T>,
}

impl<T: Scalar> StripEmbedding<T> {
    pub fn from_flat(n_strips: usize, strip_dim: usize, flat: Vec<T>) -> Result<Self> {
        if n_strips * strip_dim != flat.len() || n_strips == 0 || strip_dim == 0 {
            return Err(GaitError::Shape(format!(
                "{} values cannot form {n_strips} strips of {strip_dim}",
                flat.len()
            )));
        }
        Ok(StripEmbedding {
            n_strips,
            strip_dim,
            flat,
        })
    }

    pub fn n_strips(&self) -> usize {
        self.n_strips
    }

    pub fn strip_dim(&self) -> usize {
        self.strip_dim
    }

    pub fn strip(&self, i: usize) -> &[T] {
        &self.flat[i * self.strip_dim..(i + 1) * self.strip_dim]
    }

    pub fn strips(&self) -> impl Iterator<Item = &[T]> {
        self.flat.chunks_exact(self.strip_dim)
    }

    pub fn flat(&self) -> &[T] {
        &self.flat
    }

    pub fn into_flat(self) -> Vec<T> {
        self.flat
    }
}

fn slope<T: Scalar>(params: &SfeParams<T>) -> T {
    T::of(params.config.leaky_slope)
}

fn check_frame<T: Scalar>(frame: &Tensor<T>) -> Result<()> {
    if frame.shape() != [1, FRAME_HEIGHT, FRAME_WIDTH] {
        return Err(GaitError::Shape(format!(
            "FEM expects a [1, {FRAME_HEIGHT}, {FRAME_WIDTH}] frame, got {:?}",
            frame.shape()
        )));
    }
    Ok(())
}

/// Intermediate values of one FEM pass needed for its backward.
pub struct FemCache<T> {
    pre: [Tensor<T>; 4],
    act: [Tensor<T>; 4],
    pool1: Vec<u32>,
    pooled1: Tensor<T>,
    pool2: Vec<u32>,
}

/// Per-frame FEM: C1, C2, pool, C3, C4, pool with leaky rectification after
/// every convolution. `[1, 64, 44] -> [C4, 16, 11]`.
pub fn fem_forward<T: Scalar>(frame: &Tensor<T>, params: &SfeParams<T>) -> Result<Tensor<T>> {
    check_frame(frame)?;
    let s = slope(params);
    let conv = |x: &Tensor<T>, i: usize| -> Result<Tensor<T>> {
        let l = &params.fem[i];
        let mut y = conv2d(x, &l.weight, &l.bias, &l.spec)?;
        leaky_rectify_inplace(&mut y, s);
        Ok(y)
    };
    let a1 = conv(frame, 0)?;
    let a2 = conv(&a1, 1)?;
    let p1 = maxpool2d(&a2)?.output;
    let a3 = conv(&p1, 2)?;
    let a4 = conv(&a3, 3)?;
    Ok(maxpool2d(&a4)?.output)
}

pub fn fem_forward_cached<T: Scalar>(
    frame: &Tensor<T>,
    params: &SfeParams<T>,
) -> Result<(Tensor<T>, FemCache<T>)> {
    check_frame(frame)?;
    let s = slope(params);
    let conv = |x: &Tensor<T>, i: usize| -> Result<(Tensor<T>, Tensor<T>)> {
        let l = &params.fem[i];
        let pre = conv2d(x, &l.weight, &l.bias, &l.spec)?;
        let mut act = pre.clone();
        leaky_rectify_inplace(&mut act, s);
        Ok((pre, act))
    };
    let (pre1, a1) = conv(frame, 0)?;
    let (pre2, a2) = conv(&a1, 1)?;
    let pool1 = maxpool2d(&a2)?;
    let (pre3, a3) = conv(&pool1.output, 2)?;
    let (pre4, a4) = conv(&a3, 3)?;
    let pool2 = maxpool2d(&a4)?;
    let cache = FemCache {
        pre: [pre1, pre2, pre3, pre4],
        act: [a1, a2, a3, a4],
        pool1: pool1.argmax,
        pooled1: pool1.output,
        pool2: pool2.argmax,
    };
    Ok((pool2.output, cache))
}

/// Accumulates FEM parameter gradients for one frame.
pub fn fem_backward<T: Scalar>(
    frame: &Tensor<T>,
    params: &SfeParams<T>,
    cache: &FemCache<T>,
    grad_out: &Tensor<T>,
    grads: &mut SfeParams<T>,
) -> Result<()> {
    let s = slope(params);
    let inputs = [frame, &cache.act[0], &cache.pooled1, &cache.act[2]];
    let mut g = maxpool2d_backward(cache.act[3].shape(), &cache.pool2, grad_out)?;
    for i in (0..4).rev() {
        let g_pre = leaky_rectify_backward(&cache.pre[i], &g, s);
        let l = &params.fem[i];
        let gl = &mut grads.fem[i];
        let gx = conv2d_backward(
            inputs[i],
            &l.weight,
            &l.spec,
            &g_pre,
            &mut gl.weight,
            &mut gl.bias,
            i > 0,
        )?;
        match i {
            3 => g = gx.expect("input gradient requested"),
            2 => {
                g = maxpool2d_backward(
                    cache.act[1].shape(),
                    &cache.pool1,
                    &gx.expect("input gradient requested"),
                )?
            }
            1 => g = gx.expect("input gradient requested"),
            _ => {}
        }
    }
    Ok(())
}

/// Temporal fusion result: the elementwise max and, for each element, the
/// first frame attaining it.
#[derive(Debug, Clone)]
pub struct Fused<T> {
    pub value: Tensor<T>,
    pub source_frame: Vec<u32>,
}

fn per_frame_features<T: Scalar>(
    frames: &[Tensor<T>],
    params: &SfeParams<T>,
) -> Result<Vec<Tensor<T>>> {
    #[cfg(feature = "parallel")]
    {
        use rayon::prelude::*;
        frames.par_iter().map(|f| fem_forward(f, params)).collect()
    }
    #[cfg(not(feature = "parallel"))]
    {
        frames.iter().map(|f| fem_forward(f, params)).collect()
    }
}

/// TFF with provenance of every fused element.
pub fn tff_fuse_traced<T: Scalar>(frames: &[Tensor<T>], params: &SfeParams<T>) -> Result<Fused<T>> {
    if frames.is_empty() {
        return Err(GaitError::Input(
            "temporal fusion needs at least one frame".into(),
        ));
    }
    let features = per_frame_features(frames, params)?;
    let mut value = features[0].clone();
    let mut source_frame = vec![0u32; value.len()];
    for (f, feat) in features.iter().enumerate().skip(1) {
        for ((v, src), &x) in value
            .data_mut()
            .iter_mut()
            .zip(source_frame.iter_mut())
            .zip(feat.data())
        {
            // +0 beats -0 so the fused bits do not depend on frame order.
            if x > *v || (x == *v && x.is_sign_positive() && v.is_sign_negative()) {
                *v = x;
                *src = f as u32;
            }
        }
    }
    Ok(Fused {
        value,
        source_frame,
    })
}

/// TFF: elementwise max over the per-frame FEM outputs.
pub fn tff_fuse<T: Scalar>(frames: &[Tensor<T>], params: &SfeParams<T>) -> Result<Tensor<T>> {
    Ok(tff_fuse_traced(frames, params)?.value)
}

/// Per-layer intermediate values of FFE.
pub struct FfeCache<T> {
    inputs: Vec<Tensor<T>>,
    pre: Vec<Tensor<T>>,
}

fn ffe_layer<T: Scalar>(x: &Tensor<T>, params: &SfeParams<T>, layer: usize) -> Result<Tensor<T>> {
    let blocks = params.config.ffe_layers[layer];
    let (_, h, _) = x.dims3()?;
    if h % blocks != 0 {
        return Err(GaitError::Shape(format!(
            "height {h} not divisible into {blocks} blocks"
        )));
    }
    let rows = h / blocks;
    let parts = (0..blocks)
        .map(|b| {
            let l = params.block_conv(layer, b);
            conv2d(
                &x.slice_rows(b * rows, (b + 1) * rows)?,
                &l.weight,
                &l.bias,
                &l.spec,
            )
        })
        .collect::<Result<Vec<_>>>()?;
    Tensor::concat_rows(&parts)
}

fn check_feature<T: Scalar>(f_t: &Tensor<T>, params: &SfeParams<T>) -> Result<()> {
    let expected = [params.config.feature_channels(), N_STRIPS, FEATURE_WIDTH];
    if f_t.shape() != expected {
        return Err(GaitError::Shape(format!(
            "FFE expects {expected:?}, got {:?}",
            f_t.shape()
        )));
    }
    Ok(())
}

pub fn ffe_forward_cached<T: Scalar>(
    f_t: &Tensor<T>,
    params: &SfeParams<T>,
) -> Result<(Tensor<T>, FfeCache<T>)> {
    check_feature(f_t, params)?;
    let s = slope(params);
    let n = params.config.ffe_layers.len();
    let mut cache = FfeCache {
        inputs: Vec::with_capacity(n),
        pre: Vec::with_capacity(n),
    };
    let mut x = f_t.clone();
    for layer in 0..n {
        let pre = ffe_layer(&x, params, layer)?;
        cache.inputs.push(x);
        // Stacked layers are rectified in between; the last one feeds pooling raw.
        x = pre.clone();
        if layer + 1 < n {
            leaky_rectify_inplace(&mut x, s);
        }
        cache.pre.push(pre);
    }
    Ok((x, cache))
}

/// FFE: split `f_t` along height into blocks, convolve each block with its
/// own 3x3 kernel, and reassemble in order.
pub fn ffe_forward<T: Scalar>(f_t: &Tensor<T>, params: &SfeParams<T>) -> Result<Tensor<T>> {
    Ok(ffe_forward_cached(f_t, params)?.0)
}

/// Returns the gradient with respect to `f_t`.
pub fn ffe_backward<T: Scalar>(
    params: &SfeParams<T>,
    cache: &FfeCache<T>,
    grad_out: &Tensor<T>,
    grads: &mut SfeParams<T>,
) -> Result<Tensor<T>> {
    let s = slope(params);
    let n = params.config.ffe_layers.len();
    let mut g = grad_out.clone();
    for layer in (0..n).rev() {
        if layer + 1 < n {
            g = leaky_rectify_backward(&cache.pre[layer], &g, s);
        }
        let blocks = params.config.ffe_layers[layer];
        let x = &cache.inputs[layer];
        let rows = N_STRIPS / blocks;
        let mut parts = Vec::with_capacity(blocks);
        for b in 0..blocks {
            let xb = x.slice_rows(b * rows, (b + 1) * rows)?;
            let gb = g.slice_rows(b * rows, (b + 1) * rows)?;
            let l = params.block_conv(layer, b);
            let gl = grads.block_conv_mut(layer, b);
            let gx = conv2d_backward(
                &xb,
                &l.weight,
                &l.spec,
                &gb,
                &mut gl.weight,
                &mut gl.bias,
                true,
            )?;
            parts.push(gx.expect("input gradient requested"));
        }
        g = Tensor::concat_rows(&parts)?;
    }
    Ok(g)
}

/// Per-strip heads over the width-pooled `[C4, 16]` feature.
pub fn separate_fc<T: Scalar>(
    pooled: &Tensor<T>,
    params: &SfeParams<T>,
) -> Result<StripEmbedding<T>> {
    let c = params.config.feature_channels();
    if pooled.shape() != [c, N_STRIPS] {
        return Err(GaitError::Shape(format!(
            "heads expect [{c}, {N_STRIPS}], got {:?}",
            pooled.shape()
        )));
    }
    let mut flat = Vec::with_capacity(params.config.embedding_dim());
    for (i, head) in params.heads.iter().enumerate() {
        let x = strip_column(pooled, i);
        flat.extend(affine(&x, &head.weight, &head.bias)?);
    }
    StripEmbedding::from_flat(N_STRIPS, params.config.strip_dim, flat)
}

fn strip_column<T: Scalar>(pooled: &Tensor<T>, i: usize) -> Vec<T> {
    pooled
        .data()
        .iter()
        .skip(i)
        .step_by(N_STRIPS)
        .copied()
        .collect()
}

/// Returns the gradient with respect to the pooled feature.
pub fn separate_fc_backward<T: Scalar>(
    pooled: &Tensor<T>,
    params: &SfeParams<T>,
    grad_embedding: &[T],
    grads: &mut SfeParams<T>,
) -> Result<Tensor<T>> {
    let d = params.config.strip_dim;
    if grad_embedding.len() != N_STRIPS * d {
        return Err(GaitError::Shape(
            "embedding gradient has wrong length".into(),
        ));
    }
    let mut g = Tensor::zeros(pooled.shape());
    for (i, head) in params.heads.iter().enumerate() {
        let x = strip_column(pooled, i);
        let gh = &mut grads.heads[i];
        let dx = affine_backward(
            &x,
            &head.weight,
            &grad_embedding[i * d..(i + 1) * d],
            &mut gh.weight,
            &mut gh.bias,
        );
        for (c, v) in dx.into_iter().enumerate() {
            g.data_mut()[c * N_STRIPS + i] = v;
        }
    }
    Ok(g)
}

/// Everything from a forward pass that the backward pass reuses.
pub struct SequenceTrace<T> {
    source_frame: Vec<u32>,
    ffe: FfeCache<T>,
    f_s_shape: Vec<usize>,
    pool_argmax: Vec<u32>,
    pooled: Tensor<T>,
}

/// Full SFE forward for a frame list, keeping what backward needs.
pub fn sfe_forward_traced<T: Scalar>(
    frames: &[Tensor<T>],
    params: &SfeParams<T>,
) -> Result<(StripEmbedding<T>, SequenceTrace<T>)> {
    let fused = tff_fuse_traced(frames, params)?;
    let (f_s, ffe) = ffe_forward_cached(&fused.value, params)?;
    let pooled = global_pool(&f_s)?;
    let emb = separate_fc(&pooled.output, params)?;
    let trace = SequenceTrace {
        source_frame: fused.source_frame,
        ffe,
        f_s_shape: f_s.shape().to_vec(),
        pool_argmax: pooled.argmax,
        pooled: pooled.output,
    };
    Ok((emb, trace))
}

/// `separate_fc(global_pool(ffe_forward(tff_fuse(frames))))`.
pub fn sfe_embed<T: Scalar>(
    frames: &[Tensor<T>],
    params: &SfeParams<T>,
) -> Result<StripEmbedding<T>> {
    let f_t = tff_fuse(frames, params)?;
    let f_s = ffe_forward(&f_t, params)?;
    let pooled = global_pool(&f_s)?;
    separate_fc(&pooled.output, params)
}

/// Back-propagates `grad_embedding` through the whole network for one
/// sequence, accumulating into `grads`.
pub fn sfe_backward<T: Scalar>(
    frames: &[Tensor<T>],
    params: &SfeParams<T>,
    trace: &SequenceTrace<T>,
    grad_embedding: &[T],
    grads: &mut SfeParams<T>,
) -> Result<()> {
    let g_pooled = separate_fc_backward(&trace.pooled, params, grad_embedding, grads)?;
    let g_fs = global_pool_backward(&trace.f_s_shape, &trace.pool_argmax, &g_pooled)?;
    let g_ft = ffe_backward(params, &trace.ffe, &g_fs, grads)?;

    for (f, frame) in frames.iter().enumerate() {
        let mut routed = Tensor::zeros(g_ft.shape());
        let mut any = false;
        for ((r, &src), &g) in routed
            .data_mut()
            .iter_mut()
            .zip(&trace.source_frame)
            .zip(g_ft.data())
        {
            if src as usize == f && g != T::zero() {
                *r = g;
                any = true;
            }
        }
        if !any {
            continue;
        }
        let (_, cache) = fem_forward_cached(frame, params)?;
        fem_backward(frame, params, &cache, &routed, grads)?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::params::ModelConfig;
    use crate::numerics::finite_diff_check;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_frame<T: Scalar>(rng: &mut ChaCha8Rng) -> Tensor<T> {
        let data = (0..FRAME_HEIGHT * FRAME_WIDTH)
            .map(|_| T::of(if rng.gen_bool(0.4) { 1.0 } else { 0.0 }))
            .collect();
        Tensor::new(&[1, FRAME_HEIGHT, FRAME_WIDTH], data).unwrap()
    }

    fn tiny() -> ModelConfig {
        ModelConfig {
            channels: [2, 2, 3, 4],
            strip_dim: 3,
            ..ModelConfig::default()
        }
    }

    #[test]
    fn fem_shape_chain() {
        let p = SfeParams::<f32>::init(&ModelConfig::default(), 1).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let (out, cache) = fem_forward_cached(&random_frame::<f32>(&mut rng), &p).unwrap();
        assert_eq!(cache.pre[0].shape(), [32, 64, 44]);
        assert_eq!(cache.pre[1].shape(), [32, 64, 44]);
        assert_eq!(cache.pooled1.shape(), [32, 32, 22]);
        assert_eq!(cache.pre[2].shape(), [64, 32, 22]);
        assert_eq!(cache.pre[3].shape(), [128, 32, 22]);
        assert_eq!(out.shape(), [128, 16, 11]);
    }

    #[test]
    fn zero_frame_zero_bias_gives_zero() {
        let mut p = SfeParams::<f32>::init(&ModelConfig::desk(), 1).unwrap();
        p.fem.iter_mut().for_each(|l| l.bias.fill_zero());
        let out = fem_forward(&Tensor::zeros(&[1, 64, 44]), &p).unwrap();
        assert!(out.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn wrong_frame_dims_rejected() {
        let p = SfeParams::<f32>::init(&tiny(), 1).unwrap();
        assert!(matches!(
            fem_forward(&Tensor::zeros(&[1, 64, 40]), &p),
            Err(GaitError::Shape(_))
        ));
        assert!(tff_fuse::<f32>(&[], &p).is_err());
    }

    #[test]
    fn single_frame_fusion_is_fem() {
        let p = SfeParams::<f32>::init(&tiny(), 2).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let f = random_frame(&mut rng);
        assert_eq!(
            tff_fuse(std::slice::from_ref(&f), &p).unwrap(),
            fem_forward(&f, &p).unwrap()
        );
    }

    #[test]
    fn one_block_identity_conv_is_identity() {
        let cfg = ModelConfig {
            ffe_layers: vec![1],
            ..tiny()
        };
        let mut p = SfeParams::<f64>::init(&cfg, 0).unwrap();
        let conv = &mut p.ffe[0][0];
        conv.weight.fill_zero();
        conv.bias.fill_zero();
        let c = cfg.feature_channels();
        for ch in 0..c {
            // centre tap of the 3x3 kernel mapping channel ch to itself
            conv.weight.data_mut()[((ch * c + ch) * 3 + 1) * 3 + 1] = 1.0;
        }
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let x = Tensor::new(
            &[c, 16, 11],
            (0..c * 176).map(|_| rng.gen_range(-1.0..1.0)).collect(),
        )
        .unwrap();
        assert_eq!(ffe_forward(&x, &p).unwrap(), x);
    }

    #[test]
    fn swapping_block_weights_is_local() {
        let p = SfeParams::<f32>::init(&tiny(), 4).unwrap();
        let mut q = p.clone();
        q.ffe[0].swap(0, 1);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let x = Tensor::new(
            &[4, 16, 11],
            (0..4 * 176).map(|_| rng.gen_range(-1.0..1.0)).collect(),
        )
        .unwrap();
        let a = ffe_forward(&x, &p).unwrap();
        let b = ffe_forward(&x, &q).unwrap();
        for ch in 0..4 {
            for row in 0..16 {
                let ra = &a.data()[(ch * 16 + row) * 11..(ch * 16 + row + 1) * 11];
                let rb = &b.data()[(ch * 16 + row) * 11..(ch * 16 + row + 1) * 11];
                if row < 8 {
                    assert_ne!(ra, rb);
                } else {
                    assert_eq!(ra, rb);
                }
            }
        }
    }

    #[test]
    fn head_locality_and_zero_input() {
        let mut p = SfeParams::<f32>::init(&tiny(), 4).unwrap();
        p.heads.iter_mut().for_each(|h| h.bias.fill_zero());
        let zero = separate_fc(&Tensor::zeros(&[4, 16]), &p).unwrap();
        assert!(zero.flat().iter().all(|&v| v == 0.0));
        assert_eq!(zero.flat().len(), 16 * 3);

        let x = Tensor::new(&[4, 16], (0..64).map(|v| v as f32 * 0.1).collect()).unwrap();
        let before = separate_fc(&x, &p).unwrap();
        p.heads[3].weight.data_mut()[0] += 1.0;
        let after = separate_fc(&x, &p).unwrap();
        for i in 0..16 {
            assert_eq!(before.strip(i) == after.strip(i), i != 3);
        }
    }

    #[test]
    fn full_network_gradient() {
        let cfg = ModelConfig {
            channels: [2, 2, 2, 3],
            strip_dim: 2,
            ffe_layers: vec![2, 4],
            ..ModelConfig::default()
        };
        let params = SfeParams::<f64>::init(&cfg, 21).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let frames: Vec<Tensor<f64>> = (0..3)
            .map(|_| {
                let data = (0..64 * 44).map(|_| rng.gen_range(0.0..1.0)).collect();
                Tensor::new(&[1, 64, 44], data).unwrap()
            })
            .collect();
        let proj: Vec<f64> = (0..cfg.embedding_dim())
            .map(|_| rng.gen_range(-1.0..1.0))
            .collect();
        let names = params.names();
        // Check one small tensor from each stage to keep the test quick.
        for target in [
            "fem.c1.bias",
            "fem.c3.bias",
            "ffe.0.block1.bias",
            "ffe.1.block3.bias",
            "head.5.weight",
        ] {
            let idx = names.iter().position(|n| n == target).unwrap();
            let base = params.tensors()[idx].data().to_vec();
            let report = finite_diff_check(
                |v: &[f64]| {
                    let mut p = params.clone();
                    p.tensors_mut()[idx].data_mut().copy_from_slice(v);
                    let (emb, trace) = sfe_forward_traced(&frames, &p).unwrap();
                    let loss = emb.flat().iter().zip(&proj).map(|(a, b)| a * b).sum();
                    let mut grads = p.zeros_like();
                    sfe_backward(&frames, &p, &trace, &proj, &mut grads).unwrap();
                    (loss, grads.tensors()[idx].data().to_vec())
                },
                &base,
                1e-6,
            );
            assert!(report.pass, "{target}: {report:?}");
        }
    }
}
