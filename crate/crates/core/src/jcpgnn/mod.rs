//! The joint channel and power allocation GNN: shared message computation
//! followed by a channel head and a power head in each of `S` layers,
//! trained without labels on the negative weighted sum rate.

mod checkpoint;
mod infer;
mod model;
mod params;
mod train;

pub use checkpoint::{from_json, load_checkpoint, save_checkpoint, to_json, CHECKPOINT_VERSION};
pub use model::{
    forward, forward_batch, forward_batch_with_route, forward_fixed_channel, loss, loss_and_gradients, loss_with,
    rate_weighted_sum_rate, Mode, Relaxation, Route,
};
pub use params::{
    alpha1_widths, alpha2_widths, init_params, init_params_with, phi1_widths, JcpgnnParams, LayerParams,
    MessageConvention, ModelMeta, PairAggregate, MESSAGE_WIDTH,
};
pub use train::{build_graphs, mean_objective, train, EpochStats, History, TrainConfig, TransformKind};
