use std::io::Write;
use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::batch::{sample_batch, BatchItem, BatchSpec, TrainingSet};
use super::loss::{hard_triplet_loss, TripletLossConfig};
use crate::error::{GaitError, Result};
use crate::model::{
    sfe_backward, sfe_forward_traced, Checkpoint, ModelConfig, SfeParams, N_STRIPS,
};
use crate::numerics::{adam_step, AdamConfig, AdamState, Tensor};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub iterations: usize,
    pub batch: BatchSpec,
    pub loss: TripletLossConfig,
    pub adam: AdamConfig,
    pub seed: u64,
    /// Log the running loss every this many iterations (0 disables).
    pub log_every: usize,
    /// Write a checkpoint every this many iterations (0: only at the end).
    pub checkpoint_every: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            iterations: 78_000,
            batch: BatchSpec::default(),
            loss: TripletLossConfig::default(),
            adam: AdamConfig::default(),
            seed: 0,
            log_every: 100,
            checkpoint_every: 10_000,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        self.batch.validate()?;
        self.loss.validate()?;
        let a = &self.adam;
        if !(a.learning_rate > 0.0 && a.learning_rate.is_finite()) {
            return Err(GaitError::Config(format!(
                "learning rate must be positive, got {}",
                a.learning_rate
            )));
        }
        if !(0.0..1.0).contains(&a.beta1) || !(0.0..1.0).contains(&a.beta2) || a.epsilon <= 0.0 {
            return Err(GaitError::Config(
                "Adam betas must lie in [0, 1) and epsilon be positive".into(),
            ));
        }
        Ok(())
    }
}

/// Result of a training run.
#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub checkpoint: Checkpoint,
    /// `(iteration, loss)` for every iteration, 1-based.
    pub trace: Vec<(usize, f32)>,
}

fn checkpoint_path(dir: &Path, iteration: usize) -> PathBuf {
    dir.join(format!("ckpt_{iteration:06}.sfe"))
}

fn forward_backward(
    set: &TrainingSet,
    params: &SfeParams<f32>,
    batch: &[BatchItem],
    loss_cfg: &TripletLossConfig,
) -> Result<(f32, SfeParams<f32>)> {
    let frames: Vec<Vec<Tensor<f32>>> = batch
        .iter()
        .map(|item| {
            let seq = &set.sequences()[item.sequence];
            item.frames
                .iter()
                .map(|&f| seq.frames()[f].clone())
                .collect()
        })
        .collect();

    #[cfg(feature = "parallel")]
    let forwards: Vec<_> = {
        use rayon::prelude::*;
        frames
            .par_iter()
            .map(|f| sfe_forward_traced(f, params))
            .collect::<Result<_>>()?
    };
    #[cfg(not(feature = "parallel"))]
    let forwards: Vec<_> = frames
        .iter()
        .map(|f| sfe_forward_traced(f, params))
        .collect::<Result<_>>()?;

    let embeddings: Vec<&[f32]> = forwards.iter().map(|(e, _)| e.flat()).collect();
    let labels: Vec<usize> = batch.iter().map(|b| b.label).collect();
    let out = hard_triplet_loss(
        &embeddings,
        &labels,
        N_STRIPS,
        params.config.strip_dim,
        loss_cfg,
    )?;

    let backward_one = |i: usize| -> Result<SfeParams<f32>> {
        let mut g = params.zeros_like();
        sfe_backward(&frames[i], params, &forwards[i].1, &out.grads[i], &mut g)?;
        Ok(g)
    };

    // Per-sequence gradients are summed in batch order whatever the thread
    // count, so results do not depend on scheduling.
    let mut total = params.zeros_like();
    #[cfg(feature = "parallel")]
    {
        use rayon::prelude::*;
        let width = rayon::current_num_threads().max(1);
        let active: Vec<usize> = (0..batch.len())
            .filter(|&i| out.grads[i].iter().any(|&g| g != 0.0))
            .collect();
        for chunk in active.chunks(width) {
            let parts: Vec<SfeParams<f32>> = chunk
                .par_iter()
                .map(|&i| backward_one(i))
                .collect::<Result<_>>()?;
            for p in &parts {
                total.accumulate(p);
            }
        }
    }
    #[cfg(not(feature = "parallel"))]
    for i in (0..batch.len()).filter(|&i| out.grads[i].iter().any(|&g| g != 0.0)) {
        total.accumulate(&backward_one(i)?);
    }
    Ok((out.loss, total))
}

/// Trains from `init` (or a fresh seeded initialization of `model`).
///
/// Checkpoints go to `checkpoint_dir` when given; a non-finite loss stops the
/// run and leaves `diagnostic.sfe` there with the offending parameters.
pub fn train(
    set: &TrainingSet,
    model: &ModelConfig,
    init: Option<Checkpoint>,
    cfg: &TrainConfig,
    checkpoint_dir: Option<&Path>,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    let (mut params, mut optimizer, start) = match init {
        Some(c) => {
            let opt = c.optimizer.unwrap_or_else(|| AdamState::new(cfg.adam));
            (c.params, opt, c.iteration as usize)
        }
        None => (
            SfeParams::<f32>::init(model, cfg.seed)?,
            AdamState::new(cfg.adam),
            0,
        ),
    };
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(1);
    // Replay the sampler so a resumed run sees the batches an uninterrupted
    // one would have.
    for _ in 0..start {
        sample_batch(set, &cfg.batch, &mut rng)?;
    }
    let names = params.names();
    let mut trace = Vec::with_capacity(cfg.iterations);

    for it in start + 1..=start + cfg.iterations {
        let batch = sample_batch(set, &cfg.batch, &mut rng)?;
        let (loss, grads) = forward_backward(set, &params, &batch, &cfg.loss)?;
        if !loss.is_finite() {
            if let Some(dir) = checkpoint_dir {
                let diag = Checkpoint {
                    params: params.clone(),
                    optimizer: Some(optimizer.clone()),
                    iteration: it as u64,
                };
                diag.save(&dir.join("diagnostic.sfe"))?;
            }
            return Err(GaitError::NonFiniteLoss { iteration: it });
        }
        {
            let mut named: Vec<(&str, &mut Tensor<f32>)> = names
                .iter()
                .map(String::as_str)
                .zip(params.tensors_mut())
                .collect();
            adam_step(&mut named, &grads.tensors(), &mut optimizer)?;
        }
        trace.push((it, loss));
        if cfg.log_every > 0 && it % cfg.log_every == 0 {
            let window = &trace[trace.len().saturating_sub(cfg.log_every)..];
            let mean = window.iter().map(|(_, l)| *l as f64).sum::<f64>() / window.len() as f64;
            log::info!(
                "iteration {it}: loss {loss:.5} (mean of last {} = {mean:.5})",
                window.len()
            );
        }
        if let Some(dir) = checkpoint_dir {
            if cfg.checkpoint_every > 0
                && it % cfg.checkpoint_every == 0
                && it != start + cfg.iterations
            {
                Checkpoint {
                    params: params.clone(),
                    optimizer: Some(optimizer.clone()),
                    iteration: it as u64,
                }
                .save(&checkpoint_path(dir, it))?;
            }
        }
    }
    let iteration = (start + cfg.iterations) as u64;
    let checkpoint = Checkpoint {
        params,
        optimizer: Some(optimizer),
        iteration,
    };
    if let Some(dir) = checkpoint_dir {
        checkpoint.save(&checkpoint_path(dir, iteration as usize))?;
        checkpoint.save(&dir.join("final.sfe"))?;
    }
    Ok(TrainOutcome { checkpoint, trace })
}

/// Writes the loss trace as `iteration,loss` CSV.
pub fn write_loss_csv(path: &Path, trace: &[(usize, f32)]) -> Result<()> {
    let mut out = String::from("iteration,loss\n");
    for (it, loss) in trace {
        out.push_str(&format!("{it},{loss}\n"));
    }
    std::fs::File::create(path)
        .and_then(|mut f| f.write_all(out.as_bytes()))
        .map_err(|e| GaitError::io(path, e))
}

/// Mean loss over the first and last `window` entries of a trace.
pub fn loss_descent(trace: &[(usize, f32)], window: usize) -> Option<(f64, f64)> {
    if trace.len() < window || window == 0 {
        return None;
    }
    let mean = |s: &[(usize, f32)]| s.iter().map(|(_, l)| *l as f64).sum::<f64>() / s.len() as f64;
    Some((mean(&trace[..window]), mean(&trace[trace.len() - window..])))
}
