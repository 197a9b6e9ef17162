//! Forward pass and training loss.
//!
//! Per layer `s`, every edge `(src -> dst)` carries the message
//! `phi1([x, v, e])`; messages are summed into the destination vertex and the
//! vertex sums of a pair are concatenated (or summed) into `n_i`. The heads then read
//! `[x_i, n_i]` and emit a softmax channel distribution and a sigmoid power
//! fraction, which together form the next pair state.
//!
//! The last affine map of `phi1` commutes with the sums, so the default route
//! aggregates the hidden activations and applies that map once per pair.
//! [`Route::PerEdge`] evaluates `phi1` on every edge and is kept as a
//! reference. Inference uses [`Route::Fused`], the factored route without a tape.

use std::rc::Rc;

use serde::{Deserialize, Serialize};

use super::infer::run_fused;
use super::params::{JcpgnnParams, MessageConvention, PairAggregate, MESSAGE_WIDTH};
use crate::autodiff::{mlp_forward, CustomOp, MlpVars, Tape, Tensor, Var};
use crate::error::{Error, Result};
use crate::hetgraph::{GraphBatch, HeteroGraph};
use crate::metrics::{argmax_lowest, one_hot_assignment, weighted_sum_rate, Allocation};
use crate::netgen::NetworkInstance;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Soft,
    Hard,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Route {
    #[default]
    Factored,
    PerEdge,
    Fused,
}

pub(crate) struct LayerVars {
    phi1: MlpVars,
    alpha1: MlpVars,
    alpha2: MlpVars,
}

/// Parameters bound to a tape, in [`JcpgnnParams::tensors`] order.
pub(crate) struct ModelVars {
    layers: Vec<LayerVars>,
}

impl ModelVars {
    pub(crate) fn bind(params: &JcpgnnParams, tape: &mut Tape, requires_grad: bool) -> Self {
        let layers = params
            .layers
            .iter()
            .map(|l| LayerVars {
                phi1: l.phi1.bind(tape, requires_grad),
                alpha1: l.alpha1.bind(tape, requires_grad),
                alpha2: l.alpha2.bind(tape, requires_grad),
            })
            .collect();
        Self { layers }
    }

    pub(crate) fn vars(&self) -> impl Iterator<Item = Var> + '_ {
        self.layers
            .iter()
            .flat_map(|l| l.phi1.vars().chain(l.alpha1.vars()).chain(l.alpha2.vars()))
    }
}

struct BatchIndex {
    msg_pair: Rc<[usize]>,
    msg_vertex: Rc<[usize]>,
    dst_pair: Rc<[usize]>,
    dst_vertex: Rc<[usize]>,
    vertex_pair: Rc<[usize]>,
}

impl BatchIndex {
    fn new(b: &GraphBatch, convention: MessageConvention) -> Self {
        let (mp, mv) = match convention {
            MessageConvention::Sender => (&b.src_pair, &b.src_vertex),
            MessageConvention::Receiver => (&b.dst_pair, &b.dst_vertex),
            MessageConvention::Hybrid => (&b.src_pair, &b.dst_vertex),
        };
        Self {
            msg_pair: Rc::from(mp.as_slice()),
            msg_vertex: Rc::from(mv.as_slice()),
            dst_pair: Rc::from(b.dst_pair.as_slice()),
            dst_vertex: Rc::from(b.dst_vertex.as_slice()),
            vertex_pair: (0..b.n_vertices).map(|v| v / b.m_channels).collect(),
        }
    }
}

/// Output handles of a forward pass: channel distribution (P×M) and power
/// fraction (P×1).
pub(crate) struct ForwardVars {
    pub channel: Var,
    pub rho: Var,
}

/// Record the full S-layer forward pass on `tape`.
pub(crate) fn forward_on_tape(
    tape: &mut Tape,
    params: &JcpgnnParams,
    vars: &ModelVars,
    batch: &GraphBatch,
    fixed_channel: Option<&Tensor>,
    route: Route,
) -> Result<ForwardVars> {
    let m = params.meta.m_channels;
    if batch.m_channels != m {
        return Err(Error::Dimension(format!(
            "graph has M={}, model expects M={m}",
            batch.m_channels
        )));
    }
    let p = batch.n_pairs;
    let idx = BatchIndex::new(batch, params.meta.convention);
    let node_feat = tape.constant(Tensor::from_vec(batch.n_vertices, 2, batch.node_feat.clone())?);
    let edge_feat = tape.constant(Tensor::from_vec(batch.n_edges(), 2, batch.edge_feat.clone())?);
    let aggregate = params.meta.aggregate;
    let in_degree = match aggregate {
        PairAggregate::Sum => Tensor::from_vec(p, 1, batch.in_degree.clone())?,
        PairAggregate::Concat => {
            let mut deg = Tensor::zeros(batch.n_vertices, 1);
            for &v in &batch.dst_vertex {
                deg.data_mut()[v] += 1.0;
            }
            deg
        }
    };
    let in_degree = tape.constant(in_degree);
    let fixed = fixed_channel.map(|c| tape.constant(c.clone()));

    // x^0 = [1, ..., 1, 1]: every channel marked, full (normalized) power.
    let mut x = tape.constant(Tensor::filled(p, m + 1, 1.0));
    let mut channel = x;
    let mut rho = x;
    for layer in &vars.layers {
        let n = match route {
            Route::Factored | Route::Fused => {
                aggregate_factored(tape, &layer.phi1, x, node_feat, edge_feat, in_degree, &idx, aggregate, batch)?
            }
            Route::PerEdge => aggregate_per_edge(tape, &layer.phi1, x, node_feat, edge_feat, &idx, aggregate, batch)?,
        };
        let head_in = tape.concat_cols(&[x, n])?;
        channel = mlp_forward(tape, &layer.alpha1, head_in)?;
        rho = mlp_forward(tape, &layer.alpha2, head_in)?;
        if let Some(fc) = fixed {
            channel = fc;
        }
        x = tape.concat_cols(&[channel, rho])?;
    }
    Ok(ForwardVars { channel, rho })
}

#[allow(clippy::too_many_arguments)]
fn aggregate_factored(
    tape: &mut Tape,
    phi1: &MlpVars,
    x: Var,
    node_feat: Var,
    edge_feat: Var,
    in_degree: Var,
    idx: &BatchIndex,
    aggregate: PairAggregate,
    batch: &GraphBatch,
) -> Result<Var> {
    let (m, p) = (batch.m_channels, batch.n_pairs);
    let (w1, b1) = phi1.layers[0];
    let w_state = tape.slice_rows(w1, 0, m + 1)?;
    let w_node = tape.slice_rows(w1, m + 1, 2)?;
    let w_edge = tape.slice_rows(w1, m + 3, 2)?;

    let xs = tape.matmul(x, w_state)?;
    let vs = tape.matmul(node_feat, w_node)?;
    let es = tape.matmul(edge_feat, w_edge)?;
    let from_x = tape.gather_rows(xs, idx.msg_pair.clone())?;
    let from_v = tape.gather_rows(vs, idx.msg_vertex.clone())?;
    let pre = tape.add(from_x, from_v)?;
    let pre = tape.add(pre, es)?;
    let pre = tape.add_row(pre, b1)?;
    let mut h = tape.relu(pre);

    let last = phi1.layers.len() - 1;
    for &(w, b) in &phi1.layers[1..last] {
        let z = tape.matmul(h, w)?;
        let z = tape.add_row(z, b)?;
        h = tape.relu(z);
    }
    // Σ_e (h_e W + b) = (Σ_e h_e) W + deg · b
    let (w_out, b_out) = phi1.layers[last];
    let agg = match aggregate {
        PairAggregate::Sum => tape.segment_sum(h, idx.dst_pair.clone(), p)?,
        PairAggregate::Concat => tape.segment_sum(h, idx.dst_vertex.clone(), batch.n_vertices)?,
    };
    let lin = tape.matmul(agg, w_out)?;
    let bias = tape.matmul(in_degree, b_out)?;
    let n = tape.add(lin, bias)?;
    match aggregate {
        PairAggregate::Sum => Ok(n),
        // vertex rows i*M + m, so a row-major view concatenates a pair's vertices
        PairAggregate::Concat => tape.reshape(n, p, m * MESSAGE_WIDTH),
    }
}

fn aggregate_per_edge(
    tape: &mut Tape,
    phi1: &MlpVars,
    x: Var,
    node_feat: Var,
    edge_feat: Var,
    idx: &BatchIndex,
    aggregate: PairAggregate,
    batch: &GraphBatch,
) -> Result<Var> {
    let xe = tape.gather_rows(x, idx.msg_pair.clone())?;
    let ve = tape.gather_rows(node_feat, idx.msg_vertex.clone())?;
    let input = tape.concat_cols(&[xe, ve, edge_feat])?;
    let msg = mlp_forward(tape, phi1, input)?;
    let per_vertex = tape.segment_sum(msg, idx.dst_vertex.clone(), batch.n_vertices)?;
    match aggregate {
        PairAggregate::Sum => tape.segment_sum(per_vertex, idx.vertex_pair.clone(), batch.n_pairs),
        PairAggregate::Concat => tape.reshape(per_vertex, batch.n_pairs, batch.m_channels * MESSAGE_WIDTH),
    }
}

fn run(
    params: &JcpgnnParams,
    batch: &GraphBatch,
    fixed_channel: Option<&Tensor>,
    route: Route,
) -> Result<(Tensor, Tensor)> {
    if route == Route::Fused {
        return run_fused(params, batch, fixed_channel);
    }
    let mut tape = Tape::new();
    let vars = ModelVars::bind(params, &mut tape, false);
    let out = forward_on_tape(&mut tape, params, &vars, batch, fixed_channel, route)?;
    Ok((tape.value(out.channel).clone(), tape.value(out.rho).clone()))
}

fn to_allocations(
    batch: &GraphBatch,
    channel: &Tensor,
    rho: &Tensor,
    p_max: f64,
    mode: Mode,
) -> Vec<Allocation> {
    let m = batch.m_channels;
    batch
        .pair_offsets
        .windows(2)
        .map(|w| {
            let (lo, hi) = (w[0], w[1]);
            let d = hi - lo;
            let mut ch = Vec::with_capacity(d * m);
            for r in lo..hi {
                let row = channel.row(r);
                match mode {
                    Mode::Soft => ch.extend_from_slice(row),
                    Mode::Hard => {
                        let k = argmax_lowest(row);
                        ch.extend((0..m).map(|c| if c == k { 1.0 } else { 0.0 }));
                    }
                }
            }
            Allocation {
                d_pairs: d,
                m_channels: m,
                channel: ch,
                power: (lo..hi).map(|r| rho.get(r, 0) * p_max).collect(),
                hard: mode == Mode::Hard,
            }
        })
        .collect()
}

/// Allocate channels and power for one graph.
pub fn forward(graph: &HeteroGraph, params: &JcpgnnParams, mode: Mode) -> Result<Allocation> {
    Ok(forward_batch(&[graph], params, mode)?.remove(0))
}

/// Allocate for several graphs in one pass; results equal per-graph [`forward`].
pub fn forward_batch(graphs: &[&HeteroGraph], params: &JcpgnnParams, mode: Mode) -> Result<Vec<Allocation>> {
    forward_batch_with_route(graphs, params, mode, Route::Fused)
}

pub fn forward_batch_with_route(
    graphs: &[&HeteroGraph],
    params: &JcpgnnParams,
    mode: Mode,
    route: Route,
) -> Result<Vec<Allocation>> {
    let batch = GraphBatch::new(graphs)?;
    let (c, rho) = run(params, &batch, None, route)?;
    Ok(to_allocations(&batch, &c, &rho, params.meta.p_max, mode))
}

/// Power-only inference under a given one-hot channel matrix (D×M, row-major).
///
/// The initial state is the usual all-ones vector; after every layer the
/// channel part of the state is replaced by `fixed_channel` and the channel
/// head output is discarded.
pub fn forward_fixed_channel(
    graph: &HeteroGraph,
    params: &JcpgnnParams,
    fixed_channel: &[f64],
) -> Result<Allocation> {
    let (d, m) = (graph.d_pairs, graph.m_channels);
    one_hot_assignment(fixed_channel, d, m)?;
    let batch = GraphBatch::new(&[graph])?;
    let fixed = Tensor::from_vec(d, m, fixed_channel.to_vec())?;
    let (c, rho) = run(params, &batch, Some(&fixed), Route::Fused)?;
    Ok(to_allocations(&batch, &c, &rho, params.meta.p_max, Mode::Hard).remove(0))
}

/// How soft channel rows enter the training objective.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Relaxation {
    /// `c_i^m` scales the transmitted power inside the SINR, exactly as in the
    /// objective; a pair may profit from spreading power over channels.
    Power,
    /// `c_i^m` weights the rate of channel `m`, and interference uses
    /// `c_j^m p_j`. Matches the objective on one-hot rows.
    #[default]
    RateWeighted,
}

/// Sum rate with channel rows as rate weights: `Σ_i w_i Σ_m c_i^m log2(1 + g_ii p_i / I_i^m)`.
pub fn rate_weighted_sum_rate(inst: &NetworkInstance, channel: &[f64], power: &[f64]) -> f64 {
    let (d, m) = (inst.d_pairs, inst.m_channels);
    let mut total = 0.0;
    for ch in 0..m {
        for i in 0..d {
            let ci = channel[i * m + ch];
            if ci == 0.0 {
                continue;
            }
            let mut interf = inst.noise_power;
            for j in 0..d {
                if j != i {
                    interf += inst.gain(i, j, ch) * channel[j * m + ch] * power[j];
                }
            }
            total += inst.weights[i] * ci * (1.0 + inst.gain(i, i, ch) * power[i] / interf).log2();
        }
    }
    total
}

/// `-(1/B) Σ_b (sum rate)` of the soft allocation under a [`Relaxation`].
#[derive(Clone)]
pub(crate) struct SumRateLoss {
    instances: Rc<[NetworkInstance]>,
    members: Vec<usize>,
    pair_offsets: Vec<usize>,
    p_max: f64,
    relaxation: Relaxation,
}

impl SumRateLoss {
    pub(crate) fn new(
        instances: Rc<[NetworkInstance]>,
        members: Vec<usize>,
        pair_offsets: Vec<usize>,
        p_max: f64,
        relaxation: Relaxation,
    ) -> Self {
        Self {
            instances,
            members,
            pair_offsets,
            p_max,
            relaxation,
        }
    }

    fn slices<'a>(&'a self, t: &'a Tensor, b: usize) -> &'a [f64] {
        let c = t.cols();
        &t.data()[self.pair_offsets[b] * c..self.pair_offsets[b + 1] * c]
    }

    pub(crate) fn value(&self, channel: &Tensor, rho: &Tensor) -> f64 {
        let total: f64 = self
            .members
            .iter()
            .enumerate()
            .map(|(b, &k)| {
                let power: Vec<f64> = self.slices(rho, b).iter().map(|r| r * self.p_max).collect();
                let (inst, c) = (&self.instances[k], self.slices(channel, b));
                match self.relaxation {
                    Relaxation::Power => weighted_sum_rate(inst, c, &power),
                    Relaxation::RateWeighted => rate_weighted_sum_rate(inst, c, &power),
                }
            })
            .sum();
        -total / self.members.len() as f64
    }

    pub(crate) fn record(&self, tape: &mut Tape, channel: Var, rho: Var) -> Var {
        let v = self.value(tape.value(channel), tape.value(rho));
        tape.custom(&[channel, rho], Tensor::scalar(v), Box::new(self.clone()))
    }

    /// Gradient of one instance's sum rate (in nats) on channel `ch` with
    /// respect to `q_k = c_k p_k`: `Σ_i w_i g_ik / T_i - Σ_{i≠k} w_i g_ik / I_i`.
    fn power_relaxation_grad(inst: &NetworkInstance, ch: usize, q: &[f64], out: &mut [f64]) {
        let d = inst.d_pairs;
        let mut inv_t = vec![0.0; d];
        let mut inv_i = vec![0.0; d];
        for i in 0..d {
            let mut interf = inst.noise_power;
            for (j, qj) in q.iter().enumerate() {
                if j != i {
                    interf += inst.gain(i, j, ch) * qj;
                }
            }
            let total = interf + inst.gain(i, i, ch) * q[i];
            inv_t[i] = inst.weights[i] / total;
            inv_i[i] = inst.weights[i] / interf;
        }
        for (k, o) in out.iter_mut().enumerate() {
            let mut dr = 0.0;
            for i in 0..d {
                let g = inst.gain(i, k, ch);
                dr += g * inv_t[i];
                if i != k {
                    dr -= g * inv_i[i];
                }
            }
            *o = dr;
        }
    }
}

impl CustomOp for SumRateLoss {
    fn name(&self) -> &'static str {
        "sum_rate_loss"
    }

    fn backward(&self, inputs: &[&Tensor], _output: &Tensor, grad_out: &Tensor) -> Vec<Tensor> {
        let (channel, rho) = (inputs[0], inputs[1]);
        let m = channel.cols();
        let mut g_c = Tensor::zeros(channel.rows(), m);
        let mut g_rho = Tensor::zeros(rho.rows(), 1);
        let scale = -grad_out.item() / (self.members.len() as f64 * std::f64::consts::LN_2);

        for (b, &k) in self.members.iter().enumerate() {
            let inst = &self.instances[k];
            let d = inst.d_pairs;
            let base = self.pair_offsets[b];
            let c = |i: usize, ch: usize| channel.get(base + i, ch);
            let p: Vec<f64> = (0..d).map(|i| rho.get(base + i, 0) * self.p_max).collect();
            let mut dq = vec![0.0; d];
            for ch in 0..m {
                let q: Vec<f64> = (0..d).map(|j| p[j] * c(j, ch)).collect();
                match self.relaxation {
                    Relaxation::Power => {
                        Self::power_relaxation_grad(inst, ch, &q, &mut dq);
                        for kk in 0..d {
                            let dr = dq[kk] * scale;
                            g_c.set(base + kk, ch, dr * p[kk]);
                            let cur = g_rho.get(base + kk, 0);
                            g_rho.set(base + kk, 0, cur + dr * c(kk, ch) * self.p_max);
                        }
                    }
                    Relaxation::RateWeighted => {
                        // r_i = ln(1 + S_i / I_i), S_i = g_ii p_i, I_i = σ² + Σ_{j≠i} g_ij q_j.
                        // dR/dc_k = w_k r_k + p_k Σ_{i≠k} g_ik a_i, dR/dp_k = c_k (w_k g_kk / T_k + Σ_{i≠k} g_ik a_i)
                        // with a_i = -w_i c_i S_i / (I_i T_i) and T_i = I_i + S_i.
                        let mut a = vec![0.0; d];
                        let mut own_rate = vec![0.0; d];
                        let mut own_slope = vec![0.0; d];
                        for i in 0..d {
                            let mut interf = inst.noise_power;
                            for (j, qj) in q.iter().enumerate() {
                                if j != i {
                                    interf += inst.gain(i, j, ch) * qj;
                                }
                            }
                            let signal = inst.gain(i, i, ch) * p[i];
                            let total = interf + signal;
                            own_rate[i] = inst.weights[i] * (signal / interf).ln_1p();
                            own_slope[i] = inst.weights[i] * inst.gain(i, i, ch) / total;
                            a[i] = -inst.weights[i] * c(i, ch) * signal / (interf * total);
                        }
                        for kk in 0..d {
                            let cross: f64 = (0..d).filter(|&i| i != kk).map(|i| inst.gain(i, kk, ch) * a[i]).sum();
                            g_c.set(base + kk, ch, scale * (own_rate[kk] + p[kk] * cross));
                            let cur = g_rho.get(base + kk, 0);
                            let dp = c(kk, ch) * (own_slope[kk] + cross);
                            g_rho.set(base + kk, 0, cur + scale * dp * self.p_max);
                        }
                    }
                }
            }
        }
        vec![g_c, g_rho]
    }
}

/// Training loss of a batch of `(graph, instance)` pairs.
pub fn loss(batch: &[(&HeteroGraph, &NetworkInstance)], params: &JcpgnnParams) -> Result<f64> {
    loss_with(batch, params, Relaxation::default())
}

pub fn loss_with(
    batch: &[(&HeteroGraph, &NetworkInstance)],
    params: &JcpgnnParams,
    relaxation: Relaxation,
) -> Result<f64> {
    if batch.is_empty() {
        return Err(Error::Config("loss of an empty batch".into()));
    }
    let graphs: Vec<&HeteroGraph> = batch.iter().map(|(g, _)| *g).collect();
    let gb = GraphBatch::new(&graphs)?;
    let insts: Rc<[NetworkInstance]> = batch.iter().map(|(_, x)| (*x).clone()).collect();
    for (g, x) in batch {
        if g.d_pairs != x.d_pairs || g.m_channels != x.m_channels {
            return Err(Error::Dimension("graph and instance disagree on D or M".into()));
        }
    }
    let (c, rho) = run(params, &gb, None, Route::Factored)?;
    let op = SumRateLoss::new(
        insts,
        (0..batch.len()).collect(),
        gb.pair_offsets.clone(),
        params.meta.p_max,
        relaxation,
    );
    Ok(op.value(&c, &rho))
}

/// Loss and its gradient for every parameter tensor, in
/// [`JcpgnnParams::tensors`] order.
pub fn loss_and_gradients(
    instances: Rc<[NetworkInstance]>,
    members: &[usize],
    graphs: &[&HeteroGraph],
    params: &JcpgnnParams,
    relaxation: Relaxation,
) -> Result<(f64, Vec<Tensor>)> {
    let batch = GraphBatch::new(graphs)?;
    let mut tape = Tape::new();
    let vars = ModelVars::bind(params, &mut tape, true);
    let out = forward_on_tape(&mut tape, params, &vars, &batch, None, Route::Factored)?;
    let op = SumRateLoss::new(
        instances,
        members.to_vec(),
        batch.pair_offsets.clone(),
        params.meta.p_max,
        relaxation,
    );
    let l = op.record(&mut tape, out.channel, out.rho);
    let grads = tape.backward(l)?;
    let gs = vars
        .vars()
        .map(|v| grads.get_or_zeros(v, tape.value(v).shape()))
        .collect();
    Ok((tape.value(l).item(), gs))
}
