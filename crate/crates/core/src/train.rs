//! Training loop: adaptive-moment updates on the weighted loss, epoch
//! logging, early stopping on validation position error, and window/episode
//! evaluation helpers.

use ndarray::Array3;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::nn::Fwd;
use crate::autodiff::optim::Adam;
use crate::autodiff::{ParamStore, Scalar, Tape};
use crate::error::{Error, Result};
use crate::losses::{self, LossWeights};
use crate::metrics::{self, MetricsReport};
use crate::models::{ModelBundle, WindowBatch};
use crate::pipeline::{flip_augment, mask_ball, FlipMode};
use crate::types::Window;

/// Optimization settings.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    /// Early-stopping patience on validation position error.
    pub patience: usize,
    pub weights: LossWeights,
    pub seed: u64,
    /// Mask 80% of ball observations for half of the batches and all of
    /// them for the other half (imputation training regime).
    pub masked_regime: bool,
    /// Random pitch flips per batch.
    pub augment_flips: bool,
    /// Global gradient-norm clip; `None` disables clipping.
    pub clip_norm: Option<f64>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 0.0005,
            batch_size: 32,
            max_epochs: 100,
            patience: 10,
            weights: LossWeights::default(),
            seed: 0,
            masked_regime: false,
            augment_flips: true,
            clip_norm: Some(10.0),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.learning_rate <= 0.0 {
            return Err(Error::Config("learning rate must be positive".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch size must be >= 1".into()));
        }
        self.weights.validate()
    }
}

/// Per-epoch log record.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub train_total: f64,
    pub train_mse: f64,
    pub train_reality: f64,
    pub train_ce: f64,
    pub val: Option<MetricsReport>,
}

/// Final outcome: best validation metrics and the epoch logs. The bundle's
/// parameter store holds the best-validation parameters.
pub struct TrainOutcome {
    pub logs: Vec<EpochLog>,
    pub best_val: Option<MetricsReport>,
    pub best_epoch: usize,
}

fn snapshot<F: Scalar>(store: &ParamStore<F>) -> Vec<(String, ndarray::ArrayD<F>)> {
    store.iter().map(|(n, v)| (n.clone(), v.clone())).collect()
}

fn restore<F: Scalar>(store: &mut ParamStore<F>, snap: &[(String, ndarray::ArrayD<F>)]) {
    for (name, value) in snap {
        *store.value_mut(name) = value.clone();
    }
}

/// Group window indices into batches of equal temporal and roster shape.
fn shape_batches(windows: &[Window], order: &[usize], batch_size: usize) -> Vec<Vec<usize>> {
    let mut out: Vec<Vec<usize>> = Vec::new();
    let mut open: Vec<(usize, usize, Vec<usize>)> = Vec::new(); // (T, n, members)
    for &i in order {
        let key = (windows[i].len(), windows[i].agents.n());
        match open.iter_mut().find(|(t, n, _)| (*t, *n) == key) {
            Some((_, _, members)) => {
                members.push(i);
                if members.len() == batch_size {
                    out.push(std::mem::take(members));
                    open.retain(|(_, _, m)| !m.is_empty());
                }
            }
            None => open.push((key.0, key.1, vec![i])),
        }
    }
    for (_, _, members) in open {
        if !members.is_empty() {
            out.push(members);
        }
    }
    out
}

/// Loss parts of one batch (values only).
struct BatchLoss {
    total: f64,
    mse: f64,
    reality: f64,
    ce: f64,
}

/// Train a model in place. Returns the epoch logs; the bundle keeps the
/// parameters of the best validation epoch (or the final parameters when
/// no validation set is given).
pub fn train_model<F: Scalar>(
    bundle: &mut ModelBundle<F>,
    train_windows: &[Window],
    val_windows: &[Window],
    cfg: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochLog),
) -> Result<TrainOutcome> {
    cfg.validate()?;
    if train_windows.is_empty() {
        return Err(Error::Config("no training windows".into()));
    }
    let mut optimizer = Adam::<F>::new(cfg.learning_rate);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut logs = Vec::new();
    let mut best_val: Option<MetricsReport> = None;
    let mut best_epoch = 0usize;
    let mut best_params = snapshot(&bundle.store);
    let mut since_best = 0usize;

    for epoch in 0..cfg.max_epochs {
        let mut order: Vec<usize> = (0..train_windows.len()).collect();
        order.shuffle(&mut rng);
        let batches = shape_batches(train_windows, &order, cfg.batch_size);

        let mut sums = BatchLoss {
            total: 0.0,
            mse: 0.0,
            reality: 0.0,
            ce: 0.0,
        };
        for (bi, batch_idx) in batches.iter().enumerate() {
            let mut prepared: Vec<Window> = Vec::with_capacity(batch_idx.len());
            for &wi in batch_idx {
                let mut w = train_windows[wi].clone();
                if cfg.augment_flips {
                    w = match rng.random_range(0..4) {
                        0 => w,
                        1 => flip_augment(&w, FlipMode::Horizontal),
                        2 => flip_augment(&w, FlipMode::Vertical),
                        _ => flip_augment(&w, FlipMode::Both),
                    };
                }
                if cfg.masked_regime {
                    let keep = if bi % 2 == 0 { 0.2 } else { 0.0 };
                    w = mask_ball(&w, keep, rng.random::<u64>())?;
                } else if bundle.config.imputation {
                    w = mask_ball(&w, 0.0, 0)?;
                }
                prepared.push(w);
            }
            let refs: Vec<&Window> = prepared.iter().collect();
            let batch = WindowBatch::<F>::batch(&refs)?;

            let tape = Tape::<F>::new();
            let dropout_seed = cfg
                .seed
                .wrapping_mul(1_000_003)
                .wrapping_add((epoch * 10_007 + bi) as u64);
            let f = Fwd::train(&tape, &bundle.store, dropout_seed);
            let out = bundle.forward(&f, &batch, dropout_seed)?;

            let (loss_var, parts) = match out.aux_loss {
                Some(aux) => (
                    aux,
                    BatchLoss {
                        total: tape.scalar(aux).as_f64(),
                        mse: 0.0,
                        reality: 0.0,
                        ce: 0.0,
                    },
                ),
                None => {
                    let truth = tape.constant(batch.ball_truth.clone());
                    let mse = losses::mse_loss(&tape, out.pred, truth)?;
                    let reality =
                        losses::reality_loss(&tape, out.pred, &batch.player_positions)?;
                    let ce = match out.scores {
                        Some(scores) => losses::ce_from_scores(&tape, scores, &batch.labels)?,
                        None => tape.constant(ndarray::ArrayD::zeros(vec![1usize].as_slice())),
                    };
                    let total = losses::total_loss(&tape, mse, reality, ce, cfg.weights);
                    let parts = BatchLoss {
                        total: tape.scalar(total).as_f64(),
                        mse: tape.scalar(mse).as_f64(),
                        reality: tape.scalar(reality).as_f64(),
                        ce: tape.scalar(ce).as_f64(),
                    };
                    (total, parts)
                }
            };
            if !parts.total.is_finite() {
                return Err(Error::Numeric(format!(
                    "non-finite loss at epoch {epoch} batch {bi}: \
                     mse {:.4} reality {:.4} ce {:.4}",
                    parts.mse, parts.reality, parts.ce
                )));
            }
            let grads = tape.backward(loss_var);
            let mut named = tape.param_grads(&grads);
            for (name, g) in &named {
                if g.iter().any(|v| !v.as_f64().is_finite()) {
                    return Err(Error::Numeric(format!(
                        "non-finite gradient on {name} at epoch {epoch} batch {bi}                          (loss parts: mse {:.4} reality {:.4} ce {:.4})",
                        parts.mse, parts.reality, parts.ce
                    )));
                }
            }
            if let Some(clip) = cfg.clip_norm {
                clip_gradients(&mut named, clip);
            }
            optimizer.step(&mut bundle.store, &named);

            let w = batch_idx.len() as f64 / train_windows.len() as f64;
            sums.total += parts.total * w;
            sums.mse += parts.mse * w;
            sums.reality += parts.reality * w;
            sums.ce += parts.ce * w;
        }

        let val = if val_windows.is_empty() {
            None
        } else {
            Some(evaluate_windows(bundle, val_windows)?)
        };
        let log = EpochLog {
            epoch,
            train_total: sums.total,
            train_mse: sums.mse,
            train_reality: sums.reality,
            train_ce: sums.ce,
            val,
        };
        on_epoch(&log);
        logs.push(log);

        if let Some(val) = val {
            let improved = best_val.map(|b| val.pe < b.pe).unwrap_or(true);
            if improved {
                best_val = Some(val);
                best_epoch = epoch;
                best_params = snapshot(&bundle.store);
                since_best = 0;
            } else {
                since_best += 1;
                if since_best > cfg.patience {
                    break;
                }
            }
        }
    }
    if best_val.is_some() {
        restore(&mut bundle.store, &best_params);
    }
    Ok(TrainOutcome {
        logs,
        best_val,
        best_epoch,
    })
}

/// Scale gradients so their global norm does not exceed `clip`.
fn clip_gradients<F: Scalar>(grads: &mut [(String, ndarray::ArrayD<F>)], clip: f64) {
    let total: f64 = grads
        .iter()
        .map(|(_, g)| g.iter().map(|v| v.as_f64() * v.as_f64()).sum::<f64>())
        .sum();
    let norm = total.sqrt();
    if norm > clip && norm.is_finite() {
        let scale = F::cast(clip / norm);
        for (_, g) in grads.iter_mut() {
            g.mapv_inplace(|v| v * scale);
        }
    }
}

/// Frame-weighted metrics of a model over windows. For models with a
/// possession classifier, player- and team-level accuracy are included;
/// imputation-mode models are evaluated with no ball observations.
pub fn evaluate_windows<F: Scalar>(
    bundle: &ModelBundle<F>,
    windows: &[Window],
) -> Result<MetricsReport> {
    let mut pe_sum = 0.0;
    let mut rl_sum = 0.0;
    let mut rl_frames = 0usize;
    let mut ppa_sum = 0.0;
    let mut tpa_sum = 0.0;
    let mut frames = 0usize;
    for window in windows {
        let eval_window = if bundle.config.imputation {
            mask_ball(window, 0.0, 0)?
        } else {
            window.clone()
        };
        let (poss, pred) = bundle.infer(&eval_window)?;
        let t = window.len();
        let pe = metrics::position_error(&pred.positions, &window.ball_truth)?;
        pe_sum += pe * t as f64;
        if t >= 3 {
            let players = window_player_positions(window);
            rl_sum += metrics::reality_metric(&pred.positions, &players)? * t as f64;
            rl_frames += t;
        }
        if let Some(poss) = poss {
            let (ppa, tpa) = metrics::possession_accuracy(
                &poss.probs,
                &window.possession_labels,
                &window.agents,
            )?;
            ppa_sum += ppa * t as f64;
            tpa_sum += tpa * t as f64;
        }
        frames += t;
    }
    let frames_f = frames.max(1) as f64;
    Ok(MetricsReport {
        pe: pe_sum / frames_f,
        rl: rl_sum / rl_frames.max(1) as f64,
        ppa: ppa_sum / frames_f,
        tpa: tpa_sum / frames_f,
    })
}

/// Real-player positions of a window as `[T, 2n, 2]`.
pub fn window_player_positions(window: &Window) -> Array3<f64> {
    window.player_positions()
}
