use fbpick_autograd::{Optimizer, OptimizerKind, ParamStore};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::metrics::Tally;
use super::pipeline::Prepared;
use crate::error::{invalid, Result};
use crate::pick::{pick_from_map, snap_to_extremum};
use crate::unet::{train_epoch, BayesUNet, TrainSample};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FitConfig {
    pub max_epochs: usize,
    /// Stop after this many epochs without a better validation ACC; `None` trains all epochs.
    pub patience: Option<usize>,
    pub batch_size: usize,
    pub lr: f64,
    pub optimizer: OptimizerKind,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_acc: Option<f64>,
    pub val_mae: Option<f64>,
    pub val_apr: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitLog {
    pub epochs: Vec<EpochLog>,
    /// Epoch whose weights were kept (1-based).
    pub best_epoch: usize,
}

/// Validation tally of the deterministic network: plain argmax (`T_p = 0`),
/// snapped, no uncertainty filter.
pub fn quick_validation(model: &BayesUNet, val: &[Prepared], snap_radius: usize) -> Result<Tally> {
    let mut total = Tally::default();
    for p in val {
        let map = model.predict_map(&p.stack)?;
        let picks = pick_from_map(map.view(), 0.0);
        let snapped = snap_to_extremum(&picks, &p.gather, &p.stack.crop_top, p.gather.polarity(), snap_radius)?;
        total.add(&Tally::of(&snapped, &p.gather.label_series())?);
    }
    Ok(total)
}

/// Trains for up to `max_epochs`, keeping the weights of the epoch with the best
/// validation ACC (the last epoch when there is no validation set).
pub fn fit(
    model: &mut BayesUNet,
    train: &[TrainSample],
    val: &[Prepared],
    cfg: &FitConfig,
    snap_radius: usize,
    seed: u64,
    mut on_epoch: impl FnMut(&EpochLog),
) -> Result<FitLog> {
    if cfg.max_epochs == 0 {
        return invalid("max_epochs", "must be at least 1");
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut opt = Optimizer::new(cfg.optimizer, cfg.lr);
    let mut epochs = Vec::new();
    let mut best: Option<(f64, usize, ParamStore<f32>)> = None;
    let mut since_best = 0;
    for epoch in 1..=cfg.max_epochs {
        let train_loss = train_epoch(model, train, &mut opt, cfg.batch_size, &mut rng)?;
        let tally = if val.is_empty() { None } else { Some(quick_validation(model, val, snap_radius)?) };
        let log = EpochLog {
            epoch,
            train_loss,
            val_acc: tally.and_then(|t| t.acc()),
            val_mae: tally.and_then(|t| t.mae()),
            val_apr: tally.map(|t| t.apr()),
        };
        on_epoch(&log);
        epochs.push(log);
        if let Some(t) = tally {
            let acc = t.acc().unwrap_or(0.0);
            if best.as_ref().is_none_or(|(b, _, _)| acc >= *b) {
                best = Some((acc, epoch, model.store().clone()));
                since_best = 0;
            } else {
                since_best += 1;
                if cfg.patience.is_some_and(|p| since_best >= p) {
                    break;
                }
            }
        }
    }
    let best_epoch = match best {
        Some((_, epoch, store)) => {
            *model.store_mut() = store;
            epoch
        }
        None => epochs.len(),
    };
    Ok(FitLog { epochs, best_epoch })
}
