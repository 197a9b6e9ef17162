//! Classical reference solvers: WMMSE power control for a fixed channel
//! assignment, exhaustive channel search, and simple channel heuristics.

use rand::Rng as _;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metrics::{channel_sum_rate, objective, one_hot_assignment, Allocation};
use crate::netgen::NetworkInstance;
use crate::rng::rng_from_seed;

pub const DEFAULT_GUARD: u64 = 1 << 20;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WmmseConfig {
    pub max_iters: usize,
    /// Stop once the relative change of the channel objective falls below this.
    pub tol: f64,
}

impl Default for WmmseConfig {
    fn default() -> Self {
        Self {
            max_iters: 1000,
            tol: 1e-7,
        }
    }
}

impl WmmseConfig {
    pub fn validate(&self) -> Result<()> {
        if self.max_iters == 0 || !(self.tol > 0.0) {
            return Err(Error::Config(format!("invalid WMMSE config: {self:?}")));
        }
        Ok(())
    }
}

/// Result of WMMSE on the pairs sharing one channel.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelSolution {
    /// Powers in the order of `members`.
    pub power: Vec<f64>,
    /// Channel objective at the start and after every iteration.
    pub trace: Vec<f64>,
}

/// Weighted-MMSE iterations over the pairs in `members`, all on channel `m`.
pub fn wmmse_channel(inst: &NetworkInstance, members: &[usize], m: usize, cfg: &WmmseConfig) -> ChannelSolution {
    let k = members.len();
    let v_max = inst.p_max.sqrt();
    // h[a][b]: amplitude at receiver members[a] from transmitter members[b]
    let h: Vec<Vec<f64>> = members
        .iter()
        .map(|&i| members.iter().map(|&j| inst.amp(i, j, m)).collect())
        .collect();
    let w: Vec<f64> = members.iter().map(|&i| inst.weights[i]).collect();
    let mut v = vec![v_max; k];
    let mut full_power = vec![0.0; inst.d_pairs];
    let mut eval = |v: &[f64]| {
        for (a, &i) in members.iter().enumerate() {
            full_power[i] = v[a] * v[a];
        }
        channel_sum_rate(inst, members, m, &full_power)
    };
    let mut trace = vec![eval(&v)];
    let mut u = vec![0.0; k];
    let mut t = vec![0.0; k];

    for _ in 0..cfg.max_iters {
        for a in 0..k {
            let received: f64 = (0..k).map(|b| h[a][b] * h[a][b] * v[b] * v[b]).sum();
            u[a] = h[a][a] * v[a] / (inst.noise_power + received);
            t[a] = 1.0 / (1.0 - u[a] * h[a][a] * v[a]);
        }
        for a in 0..k {
            let num = w[a] * t[a] * u[a] * h[a][a];
            let den: f64 = (0..k).map(|b| w[b] * t[b] * u[b] * u[b] * h[b][a] * h[b][a]).sum();
            v[a] = if den > 0.0 {
                (num / den).clamp(0.0, v_max)
            } else if num > 0.0 {
                v_max
            } else {
                0.0
            };
        }
        let prev = *trace.last().unwrap();
        let cur = eval(&v);
        trace.push(cur);
        if (cur - prev).abs() <= cfg.tol * prev.abs().max(f64::MIN_POSITIVE) {
            break;
        }
    }
    ChannelSolution {
        power: v.iter().map(|x| x * x).collect(),
        trace,
    }
}

/// Pair indices grouped by channel.
fn members_by_channel(assignment: &[usize], m_channels: usize) -> Vec<Vec<usize>> {
    let mut groups = vec![Vec::new(); m_channels];
    for (i, &c) in assignment.iter().enumerate() {
        groups[c].push(i);
    }
    groups
}

fn wmmse_assignment(inst: &NetworkInstance, assignment: &[usize], cfg: &WmmseConfig) -> Vec<f64> {
    let mut power = vec![0.0; inst.d_pairs];
    for (m, members) in members_by_channel(assignment, inst.m_channels).iter().enumerate() {
        let sol = wmmse_channel(inst, members, m, cfg);
        for (&i, p) in members.iter().zip(sol.power) {
            power[i] = p;
        }
    }
    power
}

/// WMMSE powers for a fixed one-hot channel matrix, each channel solved independently.
pub fn wmmse_power(inst: &NetworkInstance, channel: &[f64], cfg: &WmmseConfig) -> Result<Vec<f64>> {
    cfg.validate()?;
    let assignment = one_hot_assignment(channel, inst.d_pairs, inst.m_channels)?;
    Ok(wmmse_assignment(inst, &assignment, cfg))
}

/// Channel matrix plus WMMSE powers as a complete allocation.
pub fn wmmse_allocation(inst: &NetworkInstance, channel: &[f64], cfg: &WmmseConfig) -> Result<Allocation> {
    let power = wmmse_power(inst, channel, cfg)?;
    Ok(Allocation {
        d_pairs: inst.d_pairs,
        m_channels: inst.m_channels,
        channel: channel.to_vec(),
        power,
        hard: true,
    })
}

/// Assignment number `k` in enumeration order; pair 0 is the fastest-varying digit.
fn decode(mut k: u64, d: usize, m: usize) -> Vec<usize> {
    (0..d)
        .map(|_| {
            let c = (k % m as u64) as usize;
            k /= m as u64;
            c
        })
        .collect()
}

/// Best channel assignment over all M^D candidates, each with WMMSE powers.
///
/// Ties go to the earliest assignment in enumeration order.
pub fn exhaustive(inst: &NetworkInstance, cfg: &WmmseConfig, guard: u64) -> Result<Allocation> {
    cfg.validate()?;
    let (d, m) = (inst.d_pairs, inst.m_channels);
    let count = (m as f64).powi(d as i32);
    if count > guard as f64 {
        return Err(Error::Guard {
            assignments: count,
            guard,
        });
    }
    let count = count as u64;
    let score = |k: u64| {
        let assignment = decode(k, d, m);
        let power = wmmse_assignment(inst, &assignment, cfg);
        let alloc = Allocation::from_assignment(&assignment, m, power);
        let value = objective(inst, &alloc).expect("enumerated allocations are well formed");
        (value, k, alloc)
    };
    let better = |a: (f64, u64, Allocation), b: (f64, u64, Allocation)| {
        if b.0 > a.0 || (b.0 == a.0 && b.1 < a.1) {
            b
        } else {
            a
        }
    };
    let best = (0..count)
        .into_par_iter()
        .map(score)
        .reduce_with(better)
        .expect("at least one assignment");
    Ok(best.2)
}

/// Pair `i` on channel `i mod M`.
pub fn round_robin(d_pairs: usize, m_channels: usize) -> Vec<f64> {
    let assignment: Vec<usize> = (0..d_pairs).map(|i| i % m_channels).collect();
    Allocation::from_assignment(&assignment, m_channels, Vec::new()).channel
}

/// Order in which the distance-based heuristic places pairs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum ClosestOrder {
    /// Pairs with the nearest neighbor first.
    #[default]
    Proximity,
    /// Pair index order.
    Index,
}

/// Greedy spatial split: each pair joins the channel whose current members are
/// farthest from it (by minimum midpoint distance).
pub fn closest_split(inst: &NetworkInstance, order: ClosestOrder) -> Vec<f64> {
    let (d, m) = (inst.d_pairs, inst.m_channels);
    let pos: Vec<[f64; 2]> = (0..d).map(|i| inst.pair_midpoint(i)).collect();
    let dist = |a: usize, b: usize| (pos[a][0] - pos[b][0]).hypot(pos[a][1] - pos[b][1]);

    let mut sequence: Vec<usize> = (0..d).collect();
    if order == ClosestOrder::Proximity {
        let nearest: Vec<f64> = (0..d)
            .map(|i| {
                (0..d)
                    .filter(|&j| j != i)
                    .map(|j| dist(i, j))
                    .fold(f64::INFINITY, f64::min)
            })
            .collect();
        sequence.sort_by(|&a, &b| nearest[a].total_cmp(&nearest[b]).then(a.cmp(&b)));
    }

    let mut assignment = vec![0; d];
    let mut groups: Vec<Vec<usize>> = vec![Vec::new(); m];
    for i in sequence {
        let mut best = (0, f64::NEG_INFINITY);
        for (c, group) in groups.iter().enumerate() {
            let gap = group.iter().map(|&j| dist(i, j)).fold(f64::INFINITY, f64::min);
            if gap > best.1 {
                best = (c, gap);
            }
        }
        assignment[i] = best.0;
        groups[best.0].push(i);
    }
    Allocation::from_assignment(&assignment, m, Vec::new()).channel
}

/// Uniform channel per pair at full power.
pub fn random_alloc(d_pairs: usize, m_channels: usize, p_max: f64, seed: u64) -> Allocation {
    let mut rng = rng_from_seed(seed);
    let assignment: Vec<usize> = (0..d_pairs).map(|_| rng.gen_range(0..m_channels)).collect();
    Allocation::from_assignment(&assignment, m_channels, vec![p_max; d_pairs])
}
