use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{GaitError, Result};
use crate::numerics::{ConvSpec, Scalar, Tensor};

/// Preprocessed silhouette height.
pub const FRAME_HEIGHT: usize = 64;
/// Preprocessed silhouette width.
pub const FRAME_WIDTH: usize = 44;
/// Height of the FEM output (two 2x2 pools), i.e. the number of strips.
pub const N_STRIPS: usize = FRAME_HEIGHT / 4;
/// Width of the FEM output.
pub const FEATURE_WIDTH: usize = FRAME_WIDTH / 4;

/// Architecture hyper-parameters of the SFE network.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    /// Output channels of C1..C4.
    pub channels: [usize; 4],
    /// Block count of each stacked FFE convolution, applied in order.
    pub ffe_layers: Vec<usize>,
    /// Share one convolution across all blocks of a layer.
    pub shared_block_weights: bool,
    /// Output dimension of each per-strip head.
    pub strip_dim: usize,
    pub leaky_slope: f64,
    #[serde(default)]
    pub init: InitScheme,
}

/// Weight initialization; both draw uniformly and are seeded.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum InitScheme {
    /// Weights and biases in `±sqrt(1/fan_in)`.
    #[default]
    FanIn,
    /// Weights in `±sqrt(6/fan_in)`, zero biases; keeps activation scale
    /// roughly constant through rectified layers.
    He,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            channels: [32, 32, 64, 128],
            ffe_layers: vec![4],
            shared_block_weights: false,
            strip_dim: 256,
            leaky_slope: 0.01,
            init: InitScheme::default(),
        }
    }
}

impl ModelConfig {
    /// Narrow network for single-core desk-scale experiments.
    pub fn desk() -> Self {
        ModelConfig {
            channels: [8, 8, 16, 32],
            strip_dim: 32,
            ..Self::default()
        }
    }

    pub fn with_blocks(mut self, blocks: &[usize]) -> Self {
        self.ffe_layers = blocks.to_vec();
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.channels.contains(&0) {
            return Err(GaitError::Config(format!(
                "channel counts must be positive: {:?}",
                self.channels
            )));
        }
        if self.ffe_layers.is_empty() {
            return Err(GaitError::Config(
                "at least one FFE layer is required".into(),
            ));
        }
        for &b in &self.ffe_layers {
            if b == 0 || !N_STRIPS.is_multiple_of(b) {
                return Err(GaitError::Config(format!(
                    "FFE block count {b} does not divide the feature height {N_STRIPS}"
                )));
            }
        }
        if self.strip_dim == 0 {
            return Err(GaitError::Config("strip_dim must be positive".into()));
        }
        if !self.leaky_slope.is_finite() || self.leaky_slope < 0.0 {
            return Err(GaitError::Config(format!(
                "invalid leaky slope {}",
                self.leaky_slope
            )));
        }
        Ok(())
    }

    /// C1..C4 per the FEM table: 5x5 pad 2, then three 3x3 pad 1.
    pub fn fem_specs(&self) -> [ConvSpec; 4] {
        let [c1, c2, c3, c4] = self.channels;
        [
            ConvSpec::new(1, c1, 5, 2),
            ConvSpec::new(c1, c2, 3, 1),
            ConvSpec::new(c2, c3, 3, 1),
            ConvSpec::new(c3, c4, 3, 1),
        ]
    }

    pub fn feature_channels(&self) -> usize {
        self.channels[3]
    }

    pub fn block_spec(&self) -> ConvSpec {
        let c = self.feature_channels();
        ConvSpec::new(c, c, 3, 1)
    }

    pub fn embedding_dim(&self) -> usize {
        N_STRIPS * self.strip_dim
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConvLayer<T> {
    pub spec: ConvSpec,
    pub weight: Tensor<T>,
    pub bias: Tensor<T>,
}

impl<T: Scalar> ConvLayer<T> {
    fn init(spec: ConvSpec, scheme: InitScheme, rng: &mut ChaCha8Rng) -> Self {
        let fan_in = spec.in_channels * spec.kernel * spec.kernel;
        let (weight, bias) = init_pair(&spec.weight_shape(), fan_in, scheme, rng);
        ConvLayer { spec, weight, bias }
    }

    fn zeros(spec: ConvSpec) -> Self {
        ConvLayer {
            spec,
            weight: Tensor::zeros(&spec.weight_shape()),
            bias: Tensor::zeros(&[spec.out_channels]),
        }
    }
}

/// Affine map of one strip.
#[derive(Debug, Clone, PartialEq)]
pub struct Head<T> {
    pub weight: Tensor<T>,
    pub bias: Tensor<T>,
}

fn uniform<T: Scalar>(shape: &[usize], bound: f64, rng: &mut ChaCha8Rng) -> Tensor<T> {
    let n = shape.iter().product();
    let data = (0..n)
        .map(|_| T::of(rng.gen_range(-bound..bound)))
        .collect();
    Tensor::new(shape, data).expect("shape is consistent")
}

/// Weight of `shape` (output units first) and its bias.
fn init_pair<T: Scalar>(
    shape: &[usize],
    fan_in: usize,
    scheme: InitScheme,
    rng: &mut ChaCha8Rng,
) -> (Tensor<T>, Tensor<T>) {
    let fan_in = fan_in as f64;
    match scheme {
        InitScheme::FanIn => {
            let bound = (1.0 / fan_in).sqrt();
            let w = uniform(shape, bound, rng);
            (w, uniform(&[shape[0]], bound, rng))
        }
        InitScheme::He => (
            uniform(shape, (6.0 / fan_in).sqrt(), rng),
            Tensor::zeros(&[shape[0]]),
        ),
    }
}

/// All learnable weights of the SFE network.
///
/// The same type doubles as the gradient accumulator.
#[derive(Debug, Clone, PartialEq)]
pub struct SfeParams<T> {
    pub config: ModelConfig,
    pub fem: Vec<ConvLayer<T>>,
    /// `ffe[layer][block]`; one entry per layer when weights are shared.
    pub ffe: Vec<Vec<ConvLayer<T>>>,
    pub heads: Vec<Head<T>>,
}

impl<T: Scalar> SfeParams<T> {
    /// Seeded initialization per `config.init`.
    pub fn init(config: &ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let fem = config
            .fem_specs()
            .iter()
            .map(|&s| ConvLayer::init(s, config.init, &mut rng))
            .collect();
        let block = config.block_spec();
        let ffe = config
            .ffe_layers
            .iter()
            .map(|&b| {
                let n = if config.shared_block_weights { 1 } else { b };
                (0..n)
                    .map(|_| ConvLayer::init(block, config.init, &mut rng))
                    .collect()
            })
            .collect();
        let c = config.feature_channels();
        let heads = (0..N_STRIPS)
            .map(|_| {
                let (weight, bias) = init_pair(&[config.strip_dim, c], c, config.init, &mut rng);
                Head { weight, bias }
            })
            .collect();
        Ok(SfeParams {
            config: config.clone(),
            fem,
            ffe,
            heads,
        })
    }

    pub fn zeros(config: &ModelConfig) -> Result<Self> {
        config.validate()?;
        let fem = config
            .fem_specs()
            .iter()
            .map(|&s| ConvLayer::zeros(s))
            .collect();
        let block = config.block_spec();
        let ffe = config
            .ffe_layers
            .iter()
            .map(|&b| {
                let n = if config.shared_block_weights { 1 } else { b };
                (0..n).map(|_| ConvLayer::zeros(block)).collect()
            })
            .collect();
        let c = config.feature_channels();
        let heads = (0..N_STRIPS)
            .map(|_| Head {
                weight: Tensor::zeros(&[config.strip_dim, c]),
                bias: Tensor::zeros(&[config.strip_dim]),
            })
            .collect();
        Ok(SfeParams {
            config: config.clone(),
            fem,
            ffe,
            heads,
        })
    }

    pub fn zeros_like(&self) -> Self {
        Self::zeros(&self.config).expect("config already validated")
    }

    /// Parameter names in canonical order.
    pub fn names(&self) -> Vec<String> {
        let mut names = Vec::new();
        for i in 0..self.fem.len() {
            names.push(format!("fem.c{}.weight", i + 1));
            names.push(format!("fem.c{}.bias", i + 1));
        }
        for (l, layer) in self.ffe.iter().enumerate() {
            for b in 0..layer.len() {
                names.push(format!("ffe.{l}.block{b}.weight"));
                names.push(format!("ffe.{l}.block{b}.bias"));
            }
        }
        for i in 0..self.heads.len() {
            names.push(format!("head.{i}.weight"));
            names.push(format!("head.{i}.bias"));
        }
        names
    }

    /// Tensors in the order of [`SfeParams::names`].
    pub fn tensors(&self) -> Vec<&Tensor<T>> {
        let mut out = Vec::new();
        for l in self.fem.iter().chain(self.ffe.iter().flatten()) {
            out.push(&l.weight);
            out.push(&l.bias);
        }
        for h in &self.heads {
            out.push(&h.weight);
            out.push(&h.bias);
        }
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut Tensor<T>> {
        let mut out = Vec::new();
        for l in self.fem.iter_mut().chain(self.ffe.iter_mut().flatten()) {
            out.push(&mut l.weight);
            out.push(&mut l.bias);
        }
        for h in &mut self.heads {
            out.push(&mut h.weight);
            out.push(&mut h.bias);
        }
        out
    }

    pub fn parameter_count(&self) -> usize {
        self.tensors().iter().map(|t| t.len()).sum()
    }

    /// Elementwise `self += other`; both must share a config.
    pub fn accumulate(&mut self, other: &SfeParams<T>) {
        for (a, b) in self.tensors_mut().into_iter().zip(other.tensors()) {
            a.add_assign(b);
        }
    }

    pub fn cast<U: Scalar>(&self) -> SfeParams<U> {
        let conv = |l: &ConvLayer<T>| ConvLayer {
            spec: l.spec,
            weight: l.weight.cast(),
            bias: l.bias.cast(),
        };
        SfeParams {
            config: self.config.clone(),
            fem: self.fem.iter().map(conv).collect(),
            ffe: self
                .ffe
                .iter()
                .map(|layer| layer.iter().map(conv).collect())
                .collect(),
            heads: self
                .heads
                .iter()
                .map(|h| Head {
                    weight: h.weight.cast(),
                    bias: h.bias.cast(),
                })
                .collect(),
        }
    }

    /// Convolution used by block `block` of FFE layer `layer`.
    pub fn block_conv(&self, layer: usize, block: usize) -> &ConvLayer<T> {
        let convs = &self.ffe[layer];
        if convs.len() == 1 {
            &convs[0]
        } else {
            &convs[block]
        }
    }

    pub fn block_conv_mut(&mut self, layer: usize, block: usize) -> &mut ConvLayer<T> {
        let convs = &mut self.ffe[layer];
        if convs.len() == 1 {
            &mut convs[0]
        } else {
            &mut convs[block]
        }
    }
}
