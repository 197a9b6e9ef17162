use serde::{Deserialize, Serialize};

use super::train::TrainConfig;
use crate::autodiff::{Activation, MlpParams, Tensor};
use crate::error::{Error, Result};
use crate::hetgraph::{build_graph_capped, FeatureTransform, HeteroGraph};
use crate::netgen::NetworkInstance;
use crate::rng::rng_from_seed;

pub const PHI1_HIDDEN: [usize; 2] = [16, 32];
pub const ALPHA_HIDDEN: [usize; 2] = [16, 8];
/// Width of the aggregated message vector.
pub const MESSAGE_WIDTH: usize = PHI1_HIDDEN[1];

/// Which endpoint's state and node features enter a message.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum MessageConvention {
    /// `x_j` and `v_(j,n)` of the sending vertex.
    Sender,
    /// `x_i` and `v_(i,m)` of the receiving vertex.
    Receiver,
    /// `x_j` of the sending pair, `v_(i,m)` of the receiving vertex.
    #[default]
    Hybrid,
}

/// How the per-vertex message sums of a pair feed the pair-level heads.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum PairAggregate {
    /// `n_i = Σ_m n_(i,m)`; head input width `M + 33`.
    Sum,
    /// `n_i = [n_(i,1), ..., n_(i,M)]`; head input width `M + 1 + 32 M`.
    #[default]
    Concat,
}

impl PairAggregate {
    pub fn width(self, m: usize) -> usize {
        match self {
            PairAggregate::Sum => MESSAGE_WIDTH,
            PairAggregate::Concat => MESSAGE_WIDTH * m,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelMeta {
    pub m_channels: usize,
    pub s_layers: usize,
    pub p_max: f64,
    pub noise_power: f64,
    pub transform: FeatureTransform,
    pub seed: u64,
    #[serde(default)]
    pub convention: MessageConvention,
    #[serde(default)]
    pub aggregate: PairAggregate,
    /// Number of pairs in the training instances, if trained.
    #[serde(default)]
    pub d_pairs: Option<usize>,
    /// Interfering pairs each pair hears at most; `None` keeps all.
    #[serde(default)]
    pub neighbor_cap: Option<usize>,
    #[serde(default)]
    pub train_config: Option<TrainConfig>,
}

/// Shared message MLP and the two task heads of one layer.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerParams {
    pub phi1: MlpParams,
    pub alpha1: MlpParams,
    pub alpha2: MlpParams,
}

#[derive(Debug, Clone, PartialEq)]
pub struct JcpgnnParams {
    pub layers: Vec<LayerParams>,
    pub meta: ModelMeta,
}

fn widths(first: usize, hidden: [usize; 2], last: Option<usize>) -> Vec<usize> {
    let mut w = vec![first, hidden[0], hidden[1]];
    w.extend(last);
    w
}

pub fn phi1_widths(m: usize) -> Vec<usize> {
    widths(m + 5, PHI1_HIDDEN, None)
}

pub fn alpha1_widths(m: usize, aggregate: PairAggregate) -> Vec<usize> {
    widths(m + 1 + aggregate.width(m), ALPHA_HIDDEN, Some(m))
}

pub fn alpha2_widths(m: usize, aggregate: PairAggregate) -> Vec<usize> {
    widths(m + 1 + aggregate.width(m), ALPHA_HIDDEN, Some(1))
}

/// Glorot-uniform weights and zero biases for `s_layers` layers.
pub fn init_params(m_channels: usize, s_layers: usize, seed: u64) -> Result<JcpgnnParams> {
    init_params_with(m_channels, s_layers, seed, PairAggregate::default())
}

pub fn init_params_with(
    m_channels: usize,
    s_layers: usize,
    seed: u64,
    aggregate: PairAggregate,
) -> Result<JcpgnnParams> {
    if m_channels == 0 || s_layers == 0 {
        return Err(Error::Config(format!(
            "need M >= 1 and S >= 1, got M={m_channels} S={s_layers}"
        )));
    }
    let mut rng = rng_from_seed(seed);
    let layers = (0..s_layers)
        .map(|_| LayerParams {
            phi1: MlpParams::glorot(&phi1_widths(m_channels), Activation::Identity, &mut rng),
            alpha1: MlpParams::glorot(&alpha1_widths(m_channels, aggregate), Activation::Softmax, &mut rng),
            alpha2: MlpParams::glorot(&alpha2_widths(m_channels, aggregate), Activation::Sigmoid, &mut rng),
        })
        .collect();
    Ok(JcpgnnParams {
        layers,
        meta: ModelMeta {
            m_channels,
            s_layers,
            p_max: 1.0,
            noise_power: 1e-10,
            transform: FeatureTransform::Identity,
            seed,
            convention: MessageConvention::default(),
            aggregate,
            d_pairs: None,
            neighbor_cap: None,
            train_config: None,
        },
    })
}

impl JcpgnnParams {
    /// All parameter tensors in a fixed order: per layer phi1, alpha1, alpha2,
    /// each as (weight, bias) per affine layer.
    pub fn tensors(&self) -> impl Iterator<Item = &Tensor> {
        self.layers
            .iter()
            .flat_map(|l| l.phi1.tensors().chain(l.alpha1.tensors()).chain(l.alpha2.tensors()))
    }

    pub fn tensors_mut(&mut self) -> impl Iterator<Item = &mut Tensor> {
        self.layers.iter_mut().flat_map(|l| {
            l.phi1
                .tensors_mut()
                .chain(l.alpha1.tensors_mut())
                .chain(l.alpha2.tensors_mut())
        })
    }

    /// Model input graph of `inst` under this model's transform and neighbor cap.
    pub fn graph(&self, inst: &NetworkInstance) -> HeteroGraph {
        build_graph_capped(inst, &self.meta.transform, self.meta.neighbor_cap)
    }

    pub fn n_parameters(&self) -> usize {
        self.tensors().map(Tensor::len).sum()
    }

    pub fn validate(&self) -> Result<()> {
        let (m, agg) = (self.meta.m_channels, self.meta.aggregate);
        if self.layers.len() != self.meta.s_layers || self.layers.is_empty() {
            return Err(Error::Validation(format!(
                "checkpoint declares S={} but has {} layers",
                self.meta.s_layers,
                self.layers.len()
            )));
        }
        for (s, l) in self.layers.iter().enumerate() {
            for (name, mlp, want, act) in [
                ("phi1", &l.phi1, phi1_widths(m), Activation::Identity),
                ("alpha1", &l.alpha1, alpha1_widths(m, agg), Activation::Softmax),
                ("alpha2", &l.alpha2, alpha2_widths(m, agg), Activation::Sigmoid),
            ] {
                mlp.validate()?;
                if mlp.widths() != want || mlp.output != act {
                    return Err(Error::Validation(format!(
                        "layer {s} {name}: widths {:?}/{:?}, expected {:?}/{:?}",
                        mlp.widths(),
                        mlp.output,
                        want,
                        act
                    )));
                }
            }
        }
        Ok(())
    }
}
