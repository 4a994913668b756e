use std::io::Write;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::optim::{clip_grad_norm, AdamState, AdamW};
use super::params::LmParams;
use super::scalar::Scalar;
use crate::error::{Error, Result};
use crate::walk::TokenCorpus;

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LrSchedule {
    #[default]
    Constant,
    /// Linear warmup followed by cosine decay to 10% of the peak.
    WarmupCosine { warmup: u64 },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    pub steps: u64,
    pub clip_norm: f64,
    pub seed: u64,
    pub schedule: LrSchedule,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            batch_size: 16,
            learning_rate: 5e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.01,
            steps: 3000,
            clip_norm: 1.0,
            seed: 0,
            schedule: LrSchedule::Constant,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = self.batch_size > 0
            && self.learning_rate > 0.0
            && (0.0..1.0).contains(&self.beta1)
            && (0.0..1.0).contains(&self.beta2)
            && self.eps > 0.0
            && self.weight_decay >= 0.0
            && self.clip_norm >= 0.0;
        if !ok {
            return Err(Error::Config(format!("invalid training config: {self:?}")));
        }
        Ok(())
    }

    pub fn optimizer(&self) -> AdamW {
        AdamW {
            learning_rate: self.learning_rate,
            beta1: self.beta1,
            beta2: self.beta2,
            eps: self.eps,
            weight_decay: self.weight_decay,
        }
    }

    /// Learning rate used at 1-based step `step`.
    pub fn lr_at(&self, step: u64) -> f64 {
        match self.schedule {
            LrSchedule::Constant => self.learning_rate,
            LrSchedule::WarmupCosine { warmup } => {
                if step <= warmup {
                    self.learning_rate * step as f64 / warmup.max(1) as f64
                } else {
                    let span = self.steps.saturating_sub(warmup).max(1) as f64;
                    let frac = ((step - warmup) as f64 / span).min(1.0);
                    let cos = 0.5 * (1.0 + (std::f64::consts::PI * frac).cos());
                    self.learning_rate * (0.1 + 0.9 * cos)
                }
            }
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepLog {
    pub step: u64,
    pub loss: f64,
    pub grad_norm: f64,
    pub learning_rate: f64,
}

/// Parameters plus optimizer state; enough to resume.
#[derive(Clone, Debug)]
pub struct Trainer<F> {
    pub params: LmParams<F>,
    pub adam: AdamState<F>,
    pub config: TrainConfig,
    batch_rng: ChaCha8Rng,
    dropout_rng: ChaCha8Rng,
    order: Vec<usize>,
    cursor: usize,
}

impl<F: Scalar> Trainer<F> {
    pub fn new(params: LmParams<F>, config: TrainConfig) -> Result<Self> {
        config.validate()?;
        let n = params.len();
        let mut batch_rng = ChaCha8Rng::seed_from_u64(config.seed);
        batch_rng.set_stream(0);
        let mut dropout_rng = ChaCha8Rng::seed_from_u64(config.seed);
        dropout_rng.set_stream(1);
        Ok(Self {
            params,
            adam: AdamState::new(n),
            config,
            batch_rng,
            dropout_rng,
            order: Vec::new(),
            cursor: 0,
        })
    }

    /// Chunk indices of the next batch; reshuffles at every epoch boundary.
    fn next_batch(&mut self, chunks: usize) -> Vec<usize> {
        let mut out = Vec::with_capacity(self.config.batch_size);
        while out.len() < self.config.batch_size {
            if self.cursor >= self.order.len() {
                self.order = (0..chunks).collect();
                self.order.shuffle(&mut self.batch_rng);
                self.cursor = 0;
            }
            out.push(self.order[self.cursor]);
            self.cursor += 1;
        }
        out
    }

    /// One optimizer step on a batch drawn from `corpus`.
    pub fn step(&mut self, corpus: &TokenCorpus) -> Result<StepLog> {
        let t = corpus.t_chunk();
        if corpus.is_empty() {
            return Err(Error::Data("training corpus is empty".into()));
        }
        if t > self.params.config.context_len {
            return Err(Error::Config(format!(
                "corpus chunk length {t} exceeds model context {}",
                self.params.config.context_len
            )));
        }
        let idx = self.next_batch(corpus.num_chunks());
        let mut tokens = Vec::with_capacity(idx.len() * t);
        for &i in &idx {
            tokens.extend_from_slice(corpus.chunk(i));
        }
        self.step_on(&tokens, idx.len(), t)
    }

    /// One optimizer step on an explicit `[batch, seq]` token block.
    pub fn step_on(&mut self, tokens: &[u32], batch: usize, seq: usize) -> Result<StepLog> {
        let step = self.adam.step + 1;
        let lr = self.config.lr_at(step);
        let dropout = (self.params.config.dropout > 0.0).then_some(&mut self.dropout_rng);
        let (loss, mut grad) = self.params.loss_and_grad(tokens, batch, seq, dropout)?;
        if !loss.is_finite() {
            return Err(Error::NonFiniteLoss {
                step,
                learning_rate: lr,
            });
        }
        let grad_norm = clip_grad_norm(&mut grad, self.config.clip_norm);
        let decay = self.params.decay_ranges();
        self.config
            .optimizer()
            .step(&mut self.params.data, &grad, &mut self.adam, &decay, lr);
        if !self.params.all_finite() {
            return Err(Error::NonFiniteLoss {
                step,
                learning_rate: lr,
            });
        }
        Ok(StepLog {
            step,
            loss,
            grad_norm,
            learning_rate: lr,
        })
    }
}

/// Runs `config.steps` optimizer steps; `on_step` sees every log entry.
pub fn train<F: Scalar>(
    params: LmParams<F>,
    corpus: &TokenCorpus,
    config: &TrainConfig,
    mut on_step: impl FnMut(&StepLog),
) -> Result<(LmParams<F>, AdamState<F>, Vec<StepLog>)> {
    if corpus.is_empty() {
        return Err(Error::Data("training corpus is empty".into()));
    }
    let mut trainer = Trainer::new(params, config.clone())?;
    let mut log = Vec::with_capacity(config.steps as usize);
    for _ in 0..config.steps {
        let entry = trainer.step(corpus)?;
        on_step(&entry);
        log.push(entry);
    }
    Ok((trainer.params, trainer.adam, log))
}

/// Writes `step,loss,grad_norm,learning_rate` rows.
pub fn write_train_log(log: &[StepLog], header: Option<&str>, path: &Path) -> Result<()> {
    let mut f =
        std::io::BufWriter::new(std::fs::File::create(path).map_err(|e| Error::io(path, e))?);
    let mut body = String::new();
    if let Some(h) = header {
        body.push_str(h);
        body.push('\n');
    }
    body.push_str("step,loss,grad_norm,learning_rate\n");
    for s in log {
        body.push_str(&format!(
            "{},{},{},{}\n",
            s.step, s.loss, s.grad_norm, s.learning_rate
        ));
    }
    f.write_all(body.as_bytes())
        .map_err(|e| Error::io(path, e))?;
    Ok(())
}

/// Trailing moving average with window `w` (shorter at the start).
pub fn moving_average(xs: &[f64], w: usize) -> Vec<f64> {
    let w = w.max(1);
    let mut out = Vec::with_capacity(xs.len());
    let mut sum = 0.0;
    for i in 0..xs.len() {
        sum += xs[i];
        if i >= w {
            sum -= xs[i - w];
        }
        out.push(sum / (i + 1).min(w) as f64);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn warmup_cosine_shape() {
        let cfg = TrainConfig {
            steps: 100,
            schedule: LrSchedule::WarmupCosine { warmup: 10 },
            ..TrainConfig::default()
        };
        assert!((cfg.lr_at(5) - 2.5e-4).abs() < 1e-12);
        assert!((cfg.lr_at(10) - 5e-4).abs() < 1e-12);
        assert!((cfg.lr_at(100) - 5e-5).abs() < 1e-12);
    }

    #[test]
    fn moving_average_window() {
        let m = moving_average(&[1.0, 2.0, 3.0, 4.0], 2);
        assert_eq!(m, vec![1.0, 1.5, 2.5, 3.5]);
    }

    #[test]
    fn rejects_zero_batch() {
        let cfg = TrainConfig {
            batch_size: 0,
            ..TrainConfig::default()
        };
        assert!(cfg.validate().is_err());
    }
}
