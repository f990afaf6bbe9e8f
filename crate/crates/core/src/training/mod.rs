//! Teacher-forced training with Adam, global-norm clipping and resumable
//! checkpoints.

mod checkpoint;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use checkpoint::{
    load_checkpoint, read_checkpoint, save_checkpoint, write_checkpoint, Checkpoint,
    CheckpointError, RngState, FORMAT_VERSION, MAGIC,
};

use crate::decoder::{DecoderConfig, DecoderError, FusionMode, ModelDims, ModelParams, Session};
use crate::graph::Graph;
use crate::scene::Dataset;
use crate::tensor::Tensor;

pub const BETA1: f64 = 0.9;
pub const BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub seed: u64,
    pub fusion: FusionMode,
    pub variant: u8,
    pub feature_dim: usize,
    pub hidden_dim: usize,
    pub embed_dim: usize,
    pub attention_dim: usize,
    pub grad_clip: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 20,
            learning_rate: 1e-3,
            batch_size: 8,
            seed: 0,
            fusion: FusionMode::Late,
            variant: 3,
            feature_dim: 64,
            hidden_dim: 64,
            embed_dim: 32,
            attention_dim: 32,
            grad_clip: 5.0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        let bad = |m: &str| Err(TrainError::Config(m.to_string()));
        if self.epochs == 0 || self.batch_size == 0 {
            return bad("epochs and batch_size must be positive");
        }
        if self.feature_dim == 0
            || self.hidden_dim == 0
            || self.embed_dim == 0
            || self.attention_dim == 0
        {
            return bad("all dimensions must be positive");
        }
        if !self.learning_rate.is_finite() || self.learning_rate < 0.0 {
            return bad("learning_rate must be finite and non-negative");
        }
        if self.grad_clip.is_nan() || self.grad_clip <= 0.0 {
            return bad("grad_clip must be positive");
        }
        self.decoder_config()?;
        Ok(())
    }

    pub fn decoder_config(&self) -> Result<DecoderConfig, TrainError> {
        Ok(DecoderConfig::new(self.fusion, self.variant)?)
    }

    pub fn dims(&self, vocab: usize) -> ModelDims {
        ModelDims {
            feature: self.feature_dim,
            hidden: self.hidden_dim,
            embed: self.embed_dim,
            attention: self.attention_dim,
            vocab,
        }
    }
}

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("invalid training config: {0}")]
    Config(String),
    #[error("dataset is empty")]
    EmptyDataset,
    #[error("incompatible data: {0}")]
    Incompatible(String),
    #[error(transparent)]
    Decoder(#[from] DecoderError),
    #[error("training diverged in epoch {epoch}: {reason}")]
    Diverged {
        epoch: usize,
        reason: String,
        /// State at the end of the last finite epoch.
        last_good: Box<Checkpoint>,
    },
    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),
}

/// Scales `grads` in place so their joint L2 norm is at most `max_norm`.
/// Returns the norm before clipping.
pub fn clip_global_norm(grads: &mut [Tensor], max_norm: f64) -> f64 {
    let norm = grads
        .iter()
        .flat_map(|g| g.data())
        .map(|v| v * v)
        .sum::<f64>()
        .sqrt();
    if norm > max_norm {
        let k = max_norm / norm;
        for g in grads.iter_mut() {
            g.data_mut().iter_mut().for_each(|v| *v *= k);
        }
    }
    norm
}

/// First and second moment estimates for every parameter tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct Adam {
    pub lr: f64,
    pub step: u64,
    pub m: Vec<Tensor>,
    pub v: Vec<Tensor>,
}

impl Adam {
    pub fn new(lr: f64, params: &ModelParams) -> Self {
        let zeros: Vec<Tensor> = params
            .tensors()
            .iter()
            .map(|t| Tensor::zeros(t.shape()))
            .collect();
        Self {
            lr,
            step: 0,
            m: zeros.clone(),
            v: zeros,
        }
    }

    pub fn update(&mut self, params: &mut ModelParams, grads: &[Tensor]) {
        self.step += 1;
        let bc1 = 1.0 - BETA1.powi(self.step as i32);
        let bc2 = 1.0 - BETA2.powi(self.step as i32);
        for (((p, g), m), v) in params
            .tensors_mut()
            .iter_mut()
            .zip(grads)
            .zip(&mut self.m)
            .zip(&mut self.v)
        {
            for (((pi, &gi), mi), vi) in p
                .data_mut()
                .iter_mut()
                .zip(g.data())
                .zip(m.data_mut())
                .zip(v.data_mut())
            {
                *mi = BETA1 * *mi + (1.0 - BETA1) * gi;
                *vi = BETA2 * *vi + (1.0 - BETA2) * gi * gi;
                let m_hat = *mi / bc1;
                let v_hat = *vi / bc2;
                *pi -= self.lr * m_hat / (v_hat.sqrt() + ADAM_EPS);
            }
        }
    }
}

/// Loss and parameter gradients for one teacher-forced target.
pub fn sample_gradients(
    params: &ModelParams,
    config: DecoderConfig,
    features: &crate::scene::RegionFeatureSet,
    target: &[crate::scene::TokenId],
) -> Result<(f64, Vec<Tensor>), DecoderError> {
    let mut graph = Graph::new();
    let mut session = Session::new(&mut graph, params, config);
    let ctx = session.image(features)?;
    let (loss, _) = session.teacher_forced(&ctx, target)?;
    let vars = session.param_vars().to_vec();
    let value = graph.value(loss).data()[0];
    let grads = graph.backward(loss)?;
    Ok((value, vars.into_iter().map(|v| grads.wrt(v)).collect()))
}

pub struct Trainer<'d> {
    dataset: &'d Dataset,
    config: TrainConfig,
    decoder: DecoderConfig,
    params: ModelParams,
    adam: Adam,
    rng: ChaCha8Rng,
    epoch: usize,
    trace: Vec<f64>,
}

impl<'d> Trainer<'d> {
    pub fn new(dataset: &'d Dataset, config: TrainConfig) -> Result<Self, TrainError> {
        config.validate()?;
        check_dataset(dataset, &config)?;
        let params = ModelParams::init(config.dims(dataset.vocab.len()), config.seed);
        let adam = Adam::new(config.learning_rate, &params);
        // Distinct stream so shuffling never shares words with initialization.
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        rng.set_stream(1);
        Ok(Self {
            dataset,
            decoder: config.decoder_config()?,
            config,
            params,
            adam,
            rng,
            epoch: 0,
            trace: Vec::new(),
        })
    }

    /// Continues from `ckpt`. The dataset vocabulary must match the one the
    /// checkpoint was trained with.
    pub fn resume(dataset: &'d Dataset, ckpt: Checkpoint) -> Result<Self, TrainError> {
        ckpt.config.validate()?;
        check_dataset(dataset, &ckpt.config)?;
        if dataset.vocab.content_tokens() != ckpt.vocab.as_slice() {
            return Err(TrainError::Incompatible(
                "dataset vocabulary differs from the checkpoint vocabulary".into(),
            ));
        }
        Ok(Self {
            dataset,
            decoder: ckpt.config.decoder_config()?,
            adam: Adam {
                lr: ckpt.config.learning_rate,
                step: ckpt.adam_step,
                m: ckpt.adam_m,
                v: ckpt.adam_v,
            },
            rng: ckpt.rng.restore(),
            config: ckpt.config,
            params: ckpt.params,
            epoch: ckpt.epoch,
            trace: ckpt.loss_trace,
        })
    }

    /// Overrides the total epoch budget, e.g. to extend a resumed run.
    pub fn set_epochs(&mut self, epochs: usize) {
        self.config.epochs = epochs;
    }

    pub fn config(&self) -> &TrainConfig {
        &self.config
    }

    pub fn params(&self) -> &ModelParams {
        &self.params
    }

    pub fn epoch(&self) -> usize {
        self.epoch
    }

    pub fn loss_trace(&self) -> &[f64] {
        &self.trace
    }

    pub fn checkpoint(&self) -> Checkpoint {
        Checkpoint {
            format_version: FORMAT_VERSION,
            config: self.config.clone(),
            epoch: self.epoch,
            adam_step: self.adam.step,
            vocab: self.dataset.vocab.content_tokens().to_vec(),
            loss_trace: self.trace.clone(),
            params: self.params.clone(),
            adam_m: self.adam.m.clone(),
            adam_v: self.adam.v.clone(),
            rng: RngState::capture(&self.rng),
        }
    }

    /// One pass over a fresh shuffle. Returns the mean pre-update sample loss.
    /// On a non-finite loss the trainer rolls back to the epoch start.
    pub fn run_epoch(&mut self) -> Result<f64, TrainError> {
        let snapshot = self.checkpoint();
        match self.epoch_inner() {
            Ok(loss) => {
                self.epoch += 1;
                self.trace.push(loss);
                Ok(loss)
            }
            Err(reason) => {
                let epoch = self.epoch + 1;
                let last_good = Box::new(snapshot.clone());
                *self = Trainer::resume(self.dataset, snapshot)?;
                Err(TrainError::Diverged {
                    epoch,
                    reason,
                    last_good,
                })
            }
        }
    }

    fn epoch_inner(&mut self) -> Result<f64, String> {
        let n = self.dataset.samples.len();
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(&mut self.rng);
        let mut losses = vec![0.0; n];
        for batch in order.chunks(self.config.batch_size) {
            let mut acc: Option<Vec<Tensor>> = None;
            for &i in batch {
                let sample = &self.dataset.samples[i];
                let (loss, grads) = sample_gradients(
                    &self.params,
                    self.decoder,
                    &sample.features,
                    sample.target().ids(),
                )
                .map_err(|e| e.to_string())?;
                if !loss.is_finite() {
                    return Err(format!("non-finite loss on {}", sample.name));
                }
                losses[i] = loss;
                match acc.as_mut() {
                    None => acc = Some(grads),
                    Some(a) => {
                        for (x, g) in a.iter_mut().zip(&grads) {
                            x.add_assign(g);
                        }
                    }
                }
            }
            let mut grads = acc.expect("batches are nonempty");
            let k = 1.0 / batch.len() as f64;
            for g in grads.iter_mut() {
                g.data_mut().iter_mut().for_each(|v| *v *= k);
            }
            let norm = clip_global_norm(&mut grads, self.config.grad_clip);
            if !norm.is_finite() {
                return Err("non-finite gradient norm".into());
            }
            self.adam.update(&mut self.params, &grads);
        }
        // Summed in dataset order so the value does not depend on the shuffle.
        Ok(losses.iter().sum::<f64>() / n as f64)
    }

    /// Runs the remaining epochs up to the configured budget.
    pub fn run(&mut self) -> Result<(), TrainError> {
        while self.epoch < self.config.epochs {
            self.run_epoch()?;
        }
        Ok(())
    }
}

fn check_dataset(dataset: &Dataset, config: &TrainConfig) -> Result<(), TrainError> {
    let first = dataset.samples.first().ok_or(TrainError::EmptyDataset)?;
    if first.features.dim() != config.feature_dim {
        return Err(TrainError::Incompatible(format!(
            "features have dim {} but the config expects {}",
            first.features.dim(),
            config.feature_dim
        )));
    }
    Ok(())
}

/// Trains from scratch and returns the final parameters with the per-epoch
/// loss trace.
pub fn train(
    dataset: &Dataset,
    config: TrainConfig,
) -> Result<(ModelParams, Vec<f64>), TrainError> {
    let mut trainer = Trainer::new(dataset, config)?;
    trainer.run()?;
    Ok((trainer.params, trainer.trace))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn clipping_bounds_the_norm() {
        let mut g = vec![Tensor::row(vec![3.0, 4.0]), Tensor::row(vec![12.0])];
        let before = clip_global_norm(&mut g, 5.0);
        assert_eq!(before, 13.0);
        let after: f64 = g
            .iter()
            .flat_map(|t| t.data())
            .map(|v| v * v)
            .sum::<f64>()
            .sqrt();
        assert!(after <= 5.0 + 1e-12);
        assert!((g[0].data()[0] - 15.0 / 13.0).abs() < 1e-15);

        let mut small = vec![Tensor::row(vec![0.1, 0.2])];
        clip_global_norm(&mut small, 5.0);
        assert_eq!(small[0].data(), &[0.1, 0.2]);
    }

    #[test]
    fn adam_first_step_moves_by_lr() {
        // Bias correction makes the first step ±lr for any nonzero gradient.
        let dims = ModelDims {
            feature: 2,
            hidden: 2,
            embed: 2,
            attention: 2,
            vocab: 5,
        };
        let mut p = ModelParams::init(dims, 3);
        let before = p.clone();
        let mut adam = Adam::new(0.01, &p);
        let grads: Vec<Tensor> = p.tensors().iter().map(|t| t.map(|_| -2.5)).collect();
        adam.update(&mut p, &grads);
        for (a, b) in p.tensors().iter().zip(before.tensors()) {
            for (x, y) in a.data().iter().zip(b.data()) {
                assert!((x - y - 0.01).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn config_validation() {
        assert!(TrainConfig::default().validate().is_ok());
        for bad in [
            TrainConfig {
                epochs: 0,
                ..Default::default()
            },
            TrainConfig {
                batch_size: 0,
                ..Default::default()
            },
            TrainConfig {
                variant: 4,
                ..Default::default()
            },
            TrainConfig {
                grad_clip: 0.0,
                ..Default::default()
            },
            TrainConfig {
                learning_rate: f64::NAN,
                ..Default::default()
            },
            TrainConfig {
                hidden_dim: 0,
                ..Default::default()
            },
        ] {
            assert!(bad.validate().is_err(), "{bad:?}");
        }
    }
}
