//! Mini-batch PIT training with Adam and per-epoch learning-rate decay.

use std::io::Write;
use std::path::PathBuf;
use std::time::Instant;

use ipdnet_autodiff::{Adam, AutodiffError, Graph, ParamStore, Tensor};
use ipdnet_core::targets::{MultiTrackTarget, NonSourceMode};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::checkpoint::{save_training_state, save_weights_with, TrainState};
use crate::config::Variant;
use crate::error::{ModelError, Result};
use crate::net::IpdNet;
use crate::pit::pit_objective;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub lr: f64,
    /// Learning-rate factor applied after every epoch.
    pub decay: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
    pub non_source: NonSourceMode,
    /// Stop when no epoch has improved the validation loss for this many epochs.
    pub patience: Option<usize>,
    /// Skip an epoch that would likely end after this many seconds of training.
    pub time_budget: Option<f64>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lr: 5e-4,
            decay: 0.975,
            batch_size: 16,
            epochs: 10,
            seed: 0,
            non_source: NonSourceMode::Bessel,
            patience: None,
            time_budget: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr.is_finite() && self.lr >= 0.0) {
            return Err(ModelError::Config(format!("learning rate {} must be non-negative", self.lr)));
        }
        if !(self.decay > 0.0 && self.decay <= 1.0) {
            return Err(ModelError::Config(format!("decay {} must lie in (0, 1]", self.decay)));
        }
        if self.batch_size == 0 {
            return Err(ModelError::Config("batch size must be positive".into()));
        }
        Ok(())
    }
}

/// One utterance: network input and its targets.
#[derive(Debug, Clone)]
pub struct Example {
    /// `[B, N, F, raw]` as produced by [`IpdNet::features`].
    pub features: Tensor<f32>,
    pub target: MultiTrackTarget,
}

/// Where [`train`] writes checkpoints, with `meta/<key>` text stored in every weight file.
#[derive(Debug, Clone, Default)]
pub struct TrainOutput {
    pub dir: PathBuf,
    pub meta: Vec<(String, String)>,
}

impl TrainOutput {
    pub fn new(dir: impl Into<PathBuf>) -> Self {
        TrainOutput {
            dir: dir.into(),
            meta: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub train_loss: f64,
    pub valid_loss: f64,
    pub lr: f64,
    pub seconds: f64,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub history: Vec<EpochLog>,
    pub best_epoch: usize,
    pub best_valid: f64,
    pub seconds: f64,
}

/// Stacks equal-length fixed-variant inputs along the batch axis.
fn stack(examples: &[&Example]) -> Result<Tensor<f32>> {
    let shape = examples[0].features.shape().to_vec();
    let mut data = Vec::with_capacity(examples.len() * examples[0].features.numel());
    for e in examples {
        if e.features.shape() != shape.as_slice() {
            return Err(ModelError::Config(format!(
                "cannot batch inputs {:?} and {shape:?}",
                e.features.shape()
            )));
        }
        data.extend_from_slice(e.features.data());
    }
    let mut s = shape;
    s[0] = examples.len();
    Ok(Tensor::new(&s, data)?)
}

/// Batches of indices; fixed-variant batches only mix equal input lengths.
fn batches(net: &IpdNet<f32>, examples: &[Example], order: &[usize], size: usize) -> Vec<Vec<usize>> {
    let mut out: Vec<Vec<usize>> = Vec::new();
    match net.config.variant {
        Variant::Variable => order.chunks(size).map(<[usize]>::to_vec).collect(),
        Variant::Fixed => {
            let mut open: Vec<(Vec<usize>, Vec<usize>)> = Vec::new();
            for &i in order {
                let shape = examples[i].features.shape().to_vec();
                match open.iter_mut().position(|(s, _)| *s == shape) {
                    Some(j) => {
                        open[j].1.push(i);
                        if open[j].1.len() == size {
                            out.push(open.remove(j).1);
                        }
                    }
                    None if size == 1 => out.push(vec![i]),
                    None => open.push((shape, vec![i])),
                }
            }
            out.extend(open.into_iter().map(|(_, b)| b));
            out
        }
    }
}

/// Loss of one batch; gradients accumulate into `net.params` when `grad` is set.
/// Returns the utterance-weighted mean loss.
pub fn batch_loss(net: &mut IpdNet<f32>, examples: &[&Example], grad: bool) -> Result<f64> {
    match net.config.variant {
        Variant::Fixed => {
            let mut g = Graph::new();
            let x = g.constant(stack(examples)?);
            let out = net.forward(&mut g, x)?;
            let targets: Vec<&MultiTrackTarget> = examples.iter().map(|e| &e.target).collect();
            let loss = pit_objective(&mut g, out, &net.config, &targets)?;
            let value = g.value(loss).item() as f64;
            if grad && value.is_finite() {
                g.backward(loss, &mut net.params)?;
            }
            Ok(value)
        }
        Variant::Variable => {
            let mut total = 0.0;
            for e in examples {
                let mut g = Graph::new();
                let x = g.constant(e.features.clone());
                let out = net.forward(&mut g, x)?;
                let loss = pit_objective(&mut g, out, &net.config, &[&e.target])?;
                let value = g.value(loss).item() as f64;
                if grad && value.is_finite() {
                    let scaled = g.scale(loss, 1.0 / examples.len() as f64);
                    g.backward(scaled, &mut net.params)?;
                }
                total += value;
            }
            Ok(total / examples.len() as f64)
        }
    }
}

/// Mean PIT loss over utterances, no gradients.
pub fn evaluate(net: &mut IpdNet<f32>, examples: &[Example], batch_size: usize) -> Result<f64> {
    if examples.is_empty() {
        return Ok(f64::NAN);
    }
    let order: Vec<usize> = (0..examples.len()).collect();
    let mut sum = 0.0;
    for b in batches(net, examples, &order, batch_size) {
        let refs: Vec<&Example> = b.iter().map(|&i| &examples[i]).collect();
        sum += batch_loss(net, &refs, false)? * refs.len() as f64;
    }
    Ok(sum / examples.len() as f64)
}

/// Trains `net` in place and leaves it holding the best-validation weights
/// (the last epoch's if there is no validation set).
///
/// With `out` set, writes `last.ipdw`, `best.ipdw`, the optimizer sidecar
/// and `loss.csv` (epoch, train_loss, valid_loss) after every epoch.
pub fn train(
    net: &mut IpdNet<f32>,
    train_set: &[Example],
    valid_set: &[Example],
    cfg: &TrainConfig,
    out: Option<&TrainOutput>,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    if train_set.is_empty() {
        return Err(ModelError::Config("empty training set".into()));
    }
    let start = Instant::now();
    let mut adam = Adam::new(&net.params, cfg.lr);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut history = Vec::new();
    let mut best: Option<(usize, f64, ParamStore<f32>)> = None;
    let mut csv = match out {
        Some(o) => {
            std::fs::create_dir_all(&o.dir)?;
            let mut f = std::fs::File::create(o.dir.join("loss.csv"))?;
            writeln!(f, "epoch,train_loss,valid_loss")?;
            Some(f)
        }
        None => None,
    };
    let mut order: Vec<usize> = (0..train_set.len()).collect();
    for epoch in 0..cfg.epochs {
        if let (Some(budget), Some(last)) = (cfg.time_budget, history.last()) {
            let last: &EpochLog = last;
            if start.elapsed().as_secs_f64() + last.seconds > budget {
                break;
            }
        }
        let epoch_start = Instant::now();
        order.shuffle(&mut rng);
        let mut sum = 0.0;
        for (bi, b) in batches(net, train_set, &order, cfg.batch_size).into_iter().enumerate() {
            let refs: Vec<&Example> = b.iter().map(|&i| &train_set[i]).collect();
            net.params.zero_grad();
            let loss = batch_loss(net, &refs, true)?;
            if !loss.is_finite() {
                return Err(ModelError::NonFiniteLoss { epoch, batch: bi });
            }
            match adam.step(&mut net.params) {
                Err(AutodiffError::NonFiniteGradient(param)) => {
                    return Err(ModelError::NonFiniteGradient { epoch, batch: bi, param })
                }
                other => other?,
            }
            sum += loss * refs.len() as f64;
        }
        net.params.zero_grad();
        let train_loss = sum / train_set.len() as f64;
        let valid_loss = if valid_set.is_empty() {
            train_loss
        } else {
            evaluate(net, valid_set, cfg.batch_size)?
        };
        let log = EpochLog {
            epoch,
            train_loss,
            valid_loss,
            lr: adam.lr,
            seconds: epoch_start.elapsed().as_secs_f64(),
        };
        if best.as_ref().is_none_or(|b| valid_loss < b.1) {
            best = Some((epoch, valid_loss, net.params.clone()));
            if let Some(o) = out {
                save_weights_with(net, &o.dir.join("best.ipdw"), &o.meta)?;
            }
        }
        adam.decay_lr(cfg.decay);
        if let Some(o) = out {
            save_weights_with(net, &o.dir.join("last.ipdw"), &o.meta)?;
            let b = best.as_ref().expect("set above");
            let state = TrainState {
                epoch,
                lr: adam.lr,
                step: adam.step_count(),
                best_epoch: b.0,
                best_valid: b.1,
                seed: cfg.seed,
            };
            save_training_state(&o.dir, &net.params, &adam, &state)?;
        }
        if let Some(f) = csv.as_mut() {
            writeln!(f, "{epoch},{train_loss},{valid_loss}")?;
            f.flush()?;
        }
        log::info!(
            "epoch {epoch}: train {train_loss:.6} valid {valid_loss:.6} lr {:.3e} ({:.1} s)",
            log.lr,
            log.seconds
        );
        history.push(log);
        if let (Some(p), Some(b)) = (cfg.patience, best.as_ref()) {
            if epoch >= b.0 + p {
                break;
            }
        }
    }
    let (best_epoch, best_valid) = match best {
        Some((e, v, params)) => {
            if !valid_set.is_empty() {
                net.params = params;
            }
            (e, v)
        }
        None => (0, f64::NAN),
    };
    Ok(TrainOutcome {
        history,
        best_epoch,
        best_valid,
        seconds: start.elapsed().as_secs_f64(),
    })
}
