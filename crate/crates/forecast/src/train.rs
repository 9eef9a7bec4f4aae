//! Mini-batch training with early stopping on validation RMSE.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::model::{Model, ModelConfig, Phase, TokenWindow};
use crate::optim::{clip_global_norm, AdamW, LrSchedule};
use crate::tape::Tape;

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub max_epochs: usize,
    pub batch_size: usize,
    pub patience: usize,
    /// Epochs before the patience counter starts.
    pub grace: usize,
    pub clip_norm: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            max_epochs: 100,
            batch_size: 128,
            patience: 10,
            grace: 10,
            clip_norm: 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub lr: f64,
    pub train_loss: f64,
    pub val_rmse: f64,
    /// Rotary base in effect at each layer after the epoch.
    pub bases: Vec<f64>,
}

/// Everything needed to resume training.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainState {
    pub model: Model,
    pub optimizer: AdamW,
    pub rng: ChaCha8Rng,
    pub schedule: LrSchedule,
    /// Next epoch to run.
    pub epoch: usize,
    pub best_val_rmse: f64,
    pub patience_counter: usize,
}

impl TrainState {
    /// Initializes the model from `config.seed`; shuffling and dropout use a separate stream.
    pub fn new(config: ModelConfig) -> Result<Self> {
        let mut init = ChaCha8Rng::seed_from_u64(config.seed);
        let model = Model::new(config, &mut init)?;
        Ok(Self::from_model(model))
    }

    pub fn from_model(model: Model) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(model.config.seed);
        rng.set_stream(1);
        let sizes: Vec<usize> = model.params.iter().map(|p| p.value.len()).collect();
        let optimizer = AdamW::new(&sizes, model.config.weight_decay);
        let schedule = LrSchedule::new(model.config.learning_rate);
        Self {
            model,
            optimizer,
            rng,
            schedule,
            epoch: 0,
            best_val_rmse: f64::INFINITY,
            patience_counter: 0,
        }
    }

    /// One optimizer step on `batch`; returns the batch loss.
    pub fn step(&mut self, batch: &[&TokenWindow], lr: f64, clip_norm: f64) -> Result<f64> {
        let mut tape = Tape::new();
        let (loss, fwd) = self
            .model
            .loss(&mut tape, batch, Phase::Train, Some(&mut self.rng))?;
        let value = tape.value(loss).data[0];
        if !value.is_finite() {
            return Err(Error::Diverged { epoch: self.epoch, batch: 0 });
        }
        let grads = tape.backward(loss);
        let mut g: Vec<Vec<f64>> = fwd
            .param_vars
            .iter()
            .zip(&self.model.params)
            .map(|(v, p)| {
                grads
                    .get(*v)
                    .map(|m| m.data.clone())
                    .unwrap_or_else(|| vec![0.0; p.value.len()])
            })
            .collect();
        clip_global_norm(&mut g, clip_norm);
        let decay: Vec<bool> = self.model.params.iter().map(|p| p.decay).collect();
        let mut slices: Vec<&mut [f64]> = self
            .model
            .params
            .iter_mut()
            .map(|p| p.value.data.as_mut_slice())
            .collect();
        self.optimizer.update(&mut slices, &g, &decay, lr);
        self.model.update_running(&fwd.bn_stats, fwd.rows);
        Ok(value)
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    /// Parameters from the epoch with the lowest validation RMSE.
    pub best: Model,
    pub best_epoch: usize,
    pub state: TrainState,
    pub history: Vec<EpochRecord>,
    pub stopped_early: bool,
}

/// Root mean squared error of `model` over `windows`, in target units.
pub fn evaluate_rmse(model: &Model, windows: &[TokenWindow], batch_size: usize) -> Result<f64> {
    let (se, count) = predict_all(model, windows, batch_size)?
        .iter()
        .zip(windows)
        .flat_map(|(p, w)| p.iter().zip(&w.target))
        .fold((0.0, 0usize), |(s, c), (p, t)| (s + (p - t) * (p - t), c + 1));
    if count == 0 {
        return Err(Error::Shape("no evaluation windows".into()));
    }
    Ok((se / count as f64).sqrt())
}

pub fn predict_all(model: &Model, windows: &[TokenWindow], batch_size: usize) -> Result<Vec<Vec<f64>>> {
    let mut out = Vec::with_capacity(windows.len());
    for chunk in windows.chunks(batch_size.max(1)) {
        let refs: Vec<&TokenWindow> = chunk.iter().collect();
        out.extend(model.predict(&refs)?);
    }
    Ok(out)
}

/// Repeats the last lookback value over the horizon.
pub fn last_value_forecast(lookback: &[f64], horizon: usize) -> Vec<f64> {
    vec![lookback.last().copied().unwrap_or(0.0); horizon]
}

/// Runs epochs until `max_epochs` or until validation RMSE stops improving.
pub fn train(
    mut state: TrainState,
    train_set: &[TokenWindow],
    val_set: &[TokenWindow],
    config: &TrainConfig,
) -> Result<TrainOutcome> {
    if train_set.is_empty() || val_set.is_empty() {
        return Err(Error::Shape("training and validation sets must be non-empty".into()));
    }
    let mut order: Vec<usize> = (0..train_set.len()).collect();
    let mut history = Vec::new();
    let mut best = state.model.clone();
    let mut best_epoch = state.epoch;
    let mut stopped_early = false;

    while state.epoch < config.max_epochs {
        let epoch = state.epoch;
        let lr = state.schedule.at(epoch);
        order.shuffle(&mut state.rng);
        let mut total = 0.0;
        for (bi, chunk) in order.chunks(config.batch_size.max(1)).enumerate() {
            let batch: Vec<&TokenWindow> = chunk.iter().map(|&i| &train_set[i]).collect();
            let loss = state.step(&batch, lr, config.clip_norm).map_err(|e| match e {
                Error::Diverged { .. } => Error::Diverged { epoch, batch: bi },
                other => other,
            })?;
            total += loss * chunk.len() as f64;
        }
        let val_rmse = evaluate_rmse(&state.model, val_set, config.batch_size)?;
        if !val_rmse.is_finite() {
            return Err(Error::Diverged { epoch, batch: 0 });
        }
        history.push(EpochRecord {
            epoch,
            lr,
            train_loss: total / train_set.len() as f64,
            val_rmse,
            bases: state.model.layer_bases(),
        });
        state.epoch += 1;
        if val_rmse < state.best_val_rmse {
            state.best_val_rmse = val_rmse;
            state.patience_counter = 0;
            best = state.model.clone();
            best_epoch = epoch;
        } else if epoch >= config.grace {
            state.patience_counter += 1;
            if state.patience_counter >= config.patience {
                stopped_early = true;
                break;
            }
        }
    }
    Ok(TrainOutcome {
        best,
        best_epoch,
        state,
        history,
        stopped_early,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use bsat::posenc::PosEncMode;
    use rand::Rng;

    fn config() -> ModelConfig {
        ModelConfig {
            layers: 1,
            d_model: 8,
            heads: 2,
            ff_factor: 2,
            dropout: 0.1,
            fc_dropout: 0.1,
            attn_dropout: 0.1,
            horizon: 3,
            mode: PosEncMode::LRopeLpe,
            tokens: 6,
            lookback: 30,
            learning_rate: 1e-2,
            seed: 7,
            ..ModelConfig::default()
        }
    }

    fn data(seed: u64, count: usize) -> Vec<TokenWindow> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..count)
            .map(|_| {
                let phase: f64 = rng.random_range(0.0..6.0);
                let f = |t: f64| (0.4 * t + phase).sin();
                TokenWindow {
                    values: (0..6).map(|i| f(5.0 * i as f64)).collect(),
                    centers: (0..6).map(|i| 5.0 * i as f64).collect(),
                    target: (0..3).map(|h| f(30.0 + h as f64)).collect(),
                }
            })
            .collect()
    }

    #[test]
    fn deterministic_and_improving() {
        let (tr, va) = (data(1, 64), data(2, 16));
        let cfg = TrainConfig {
            max_epochs: 12,
            batch_size: 16,
            ..TrainConfig::default()
        };
        let a = train(TrainState::new(config()).unwrap(), &tr, &va, &cfg).unwrap();
        let b = train(TrainState::new(config()).unwrap(), &tr, &va, &cfg).unwrap();
        assert_eq!(a.history, b.history);
        assert_eq!(a.best, b.best);
        let first = a.history[0].val_rmse;
        assert!(a.state.best_val_rmse < first);
        assert!((a.history[0].lr - 0.05e-2).abs() < 1e-15);
    }

    #[test]
    fn early_stopping_respects_grace() {
        let (tr, va) = (data(3, 8), data(4, 4));
        let cfg = TrainConfig {
            max_epochs: 60,
            batch_size: 8,
            patience: 2,
            grace: 5,
            clip_norm: 1.0,
        };
        let out = train(TrainState::new(config()).unwrap(), &tr, &va, &cfg).unwrap();
        assert!(out.history.len() >= 6);
        if out.stopped_early {
            let last = out.history.len() - 1;
            assert!(last >= cfg.grace);
            assert!(out.best_epoch + cfg.patience <= last || out.best_epoch < cfg.grace);
        }
    }

    #[test]
    fn divergence_is_reported() {
        let mut tr = data(5, 4);
        tr[2].target[0] = f64::NAN;
        let cfg = TrainConfig {
            max_epochs: 1,
            batch_size: 1,
            ..TrainConfig::default()
        };
        let mut state = TrainState::new(config()).unwrap();
        state.rng = ChaCha8Rng::seed_from_u64(0);
        match train(state, &tr, &data(6, 2), &cfg) {
            Err(Error::Diverged { epoch: 0, .. }) => {}
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn naive_forecast() {
        assert_eq!(last_value_forecast(&[1.0, 2.0, 5.0], 3), vec![5.0; 3]);
    }
}
