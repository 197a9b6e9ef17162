use std::rc::Rc;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::model::{forward_batch, loss_and_gradients, Mode, Relaxation};
use super::params::{init_params_with, JcpgnnParams, MessageConvention, PairAggregate};
use crate::autodiff::{adam_step, AdamConfig, AdamState, Tensor};
use crate::error::{Error, Result};
use crate::hetgraph::{fit_rms_transform, fit_transform, FeatureTransform, HeteroGraph};
use crate::metrics::objective;
use crate::netgen::{Dataset, NetworkInstance};
use crate::rng::{derive_labeled, derive_seed, rng_from_seed};

/// Graphs evaluated per inference pass.
const EVAL_CHUNK: usize = 128;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum TransformKind {
    Db,
    #[default]
    Rms,
    Identity,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub seed: u64,
    pub patience: Option<usize>,
    pub s_layers: usize,
    pub convention: MessageConvention,
    pub transform: TransformKind,
    pub relaxation: Relaxation,
    pub aggregate: PairAggregate,
    /// Cap on interfering pairs per pair, applied at training and inference.
    /// `None` uses the training in-degree `D - 1`, which keeps training
    /// graphs complete and larger networks at the same in-degree.
    pub neighbor_cap: Option<usize>,
    /// Independent initializations; the one with the best validation
    /// objective is kept.
    pub restarts: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 100,
            batch_size: 16,
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            seed: 1,
            patience: None,
            s_layers: 3,
            convention: MessageConvention::Hybrid,
            transform: TransformKind::Rms,
            relaxation: Relaxation::RateWeighted,
            aggregate: PairAggregate::Concat,
            neighbor_cap: None,
            restarts: 3,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = self.epochs > 0
            && self.batch_size > 0
            && self.s_layers > 0
            && self.restarts > 0
            && self.lr > 0.0
            && (0.0..1.0).contains(&self.beta1)
            && (0.0..1.0).contains(&self.beta2)
            && self.eps > 0.0
            && self.patience != Some(0)
            && self.neighbor_cap != Some(0);
        if ok {
            Ok(())
        } else {
            Err(Error::Config(format!("invalid training config: {self:?}")))
        }
    }

    fn adam(&self) -> AdamConfig {
        AdamConfig {
            lr: self.lr,
            beta1: self.beta1,
            beta2: self.beta2,
            eps: self.eps,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    /// Mean training loss over the epoch's batches (instance-weighted).
    pub train_loss: f64,
    /// Mean hard-mode objective on the validation set.
    pub val_objective: f64,
    /// Mean soft-mode objective on the validation set.
    pub val_soft_objective: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct History {
    /// Epochs of the kept restart.
    pub epochs: Vec<EpochStats>,
    pub best_epoch: usize,
    #[serde(default)]
    pub best_restart: usize,
    /// Best validation objective of each restart.
    #[serde(default)]
    pub restart_objectives: Vec<f64>,
}

pub fn build_graphs(instances: &[NetworkInstance], params: &JcpgnnParams) -> Vec<HeteroGraph> {
    instances.iter().map(|x| params.graph(x)).collect()
}

/// Mean objective of the model's allocations over `instances`.
pub fn mean_objective(
    params: &JcpgnnParams,
    graphs: &[HeteroGraph],
    instances: &[NetworkInstance],
    mode: Mode,
) -> Result<f64> {
    let mut total = 0.0;
    for (gs, xs) in graphs.chunks(EVAL_CHUNK).zip(instances.chunks(EVAL_CHUNK)) {
        let refs: Vec<&HeteroGraph> = gs.iter().collect();
        for (alloc, inst) in forward_batch(&refs, params, mode)?.iter().zip(xs) {
            total += objective(inst, alloc)?;
        }
    }
    Ok(total / instances.len() as f64)
}

/// Fit the feature transform, then minimize the negative sum rate with Adam.
///
/// Returns the parameters of the epoch with the best validation hard-mode
/// objective (earliest on ties).
pub fn train(train_ds: &Dataset, val_ds: &Dataset, cfg: &TrainConfig) -> Result<(JcpgnnParams, History)> {
    cfg.validate()?;
    if train_ds.is_empty() || val_ds.is_empty() {
        return Err(Error::Config("training and validation sets must be nonempty".into()));
    }
    let (m, d) = (train_ds.geometry.m_channels, train_ds.geometry.d_pairs);
    if val_ds.geometry.m_channels != m || val_ds.geometry.d_pairs != d {
        return Err(Error::Dimension(format!(
            "train is D={d} M={m}, validation is D={} M={}",
            val_ds.geometry.d_pairs, val_ds.geometry.m_channels
        )));
    }

    let transform = match cfg.transform {
        TransformKind::Db => fit_transform(train_ds)?,
        TransformKind::Rms => fit_rms_transform(train_ds)?,
        TransformKind::Identity => FeatureTransform::Identity,
    };
    let mut params = init_params_with(m, cfg.s_layers, derive_labeled(cfg.seed, "init"), cfg.aggregate)?;
    params.meta.p_max = train_ds.fading.p_max;
    params.meta.noise_power = train_ds.fading.noise_power;
    params.meta.transform = transform;
    params.meta.convention = cfg.convention;
    params.meta.seed = cfg.seed;
    params.meta.d_pairs = Some(d);
    params.meta.neighbor_cap = Some(cfg.neighbor_cap.unwrap_or(d.saturating_sub(1).max(1)));
    params.meta.train_config = Some(cfg.clone());

    let train_graphs = build_graphs(&train_ds.instances, &params);
    let val_graphs = build_graphs(&val_ds.instances, &params);
    let instances: Rc<[NetworkInstance]> = train_ds.instances.iter().cloned().collect();
    let data = RunData {
        train_graphs: &train_graphs,
        val_graphs: &val_graphs,
        instances,
        val: &val_ds.instances,
    };

    let mut kept: Option<(f64, JcpgnnParams, Vec<EpochStats>, usize)> = None;
    let mut history = History::default();
    for restart in 0..cfg.restarts {
        // Restart 0 keeps the single-run seeds.
        let seed = if restart == 0 { cfg.seed } else { derive_labeled(derive_seed(cfg.seed, restart as u64), "restart") };
        let init = init_params_with(m, cfg.s_layers, derive_labeled(seed, "init"), cfg.aggregate)?;
        for (dst, src) in params.tensors_mut().zip(init.tensors()) {
            *dst = src.clone();
        }
        let (value, best, epochs, best_epoch) = run(&params, &data, cfg, seed)?;
        history.restart_objectives.push(value);
        if kept.as_ref().is_none_or(|(v, ..)| value > *v) {
            history.best_restart = restart;
            kept = Some((value, best, epochs, best_epoch));
        }
    }
    let (_, best_params, epochs, best_epoch) = kept.expect("at least one restart");
    history.epochs = epochs;
    history.best_epoch = best_epoch;
    Ok((best_params, history))
}

struct RunData<'a> {
    train_graphs: &'a [HeteroGraph],
    val_graphs: &'a [HeteroGraph],
    instances: Rc<[NetworkInstance]>,
    val: &'a [NetworkInstance],
}

/// One training run from `params`: best validation objective, its
/// parameters, per-epoch stats and the best epoch.
fn run(
    init: &JcpgnnParams,
    data: &RunData,
    cfg: &TrainConfig,
    seed: u64,
) -> Result<(f64, JcpgnnParams, Vec<EpochStats>, usize)> {
    let mut params = init.clone();
    let adam = cfg.adam();
    let mut state = AdamState::default();
    let mut stats = Vec::new();
    let mut best: Option<(f64, JcpgnnParams, usize)> = None;
    let mut since_best = 0;
    let shuffle_seed = derive_labeled(seed, "shuffle");
    let n = data.train_graphs.len();

    for epoch in 1..=cfg.epochs {
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(&mut rng_from_seed(derive_seed(shuffle_seed, epoch as u64)));

        let mut loss_sum = 0.0;
        for (bi, members) in order.chunks(cfg.batch_size).enumerate() {
            let graphs: Vec<&HeteroGraph> = members.iter().map(|&k| &data.train_graphs[k]).collect();
            let (l, grads) = loss_and_gradients(data.instances.clone(), members, &graphs, &params, cfg.relaxation)?;
            if !l.is_finite() || grads.iter().any(|g| !g.is_finite()) {
                return Err(Error::Divergence { epoch, batch: bi, loss: l });
            }
            loss_sum += l * members.len() as f64;
            let grad_refs: Vec<&Tensor> = grads.iter().collect();
            let mut targets: Vec<&mut Tensor> = params.tensors_mut().collect();
            adam_step(&mut targets, &grad_refs, &mut state, &adam);
        }

        let val_objective = mean_objective(&params, data.val_graphs, data.val, Mode::Hard)?;
        let val_soft_objective = mean_objective(&params, data.val_graphs, data.val, Mode::Soft)?;
        stats.push(EpochStats {
            epoch,
            train_loss: loss_sum / n as f64,
            val_objective,
            val_soft_objective,
        });

        if best.as_ref().is_none_or(|(b, ..)| val_objective > *b) {
            best = Some((val_objective, params.clone(), epoch));
            since_best = 0;
        } else {
            since_best += 1;
            if cfg.patience.is_some_and(|p| since_best >= p) {
                break;
            }
        }
    }
    let (value, best_params, best_epoch) = best.expect("at least one epoch");
    Ok((value, best_params, stats, best_epoch))
}
