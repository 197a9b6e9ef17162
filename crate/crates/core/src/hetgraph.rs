//! Heterogeneous pair-channel graph.
//!
//! Vertex `(i, m)` (index `i * M + m`) stands for pair `i` using channel `m`.
//! Interference edges connect vertices on the same channel, potential
//! interference edges connect vertices of different pairs on different
//! channels. All edges are directed towards the vertex that aggregates the
//! message, and are ordered lexicographically by `(dst, src)`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::netgen::{Dataset, NetworkInstance};

/// Gap between the smallest training feature (dB) and the floor used for
/// missing channel information.
pub const MISSING_FLOOR_GAP_DB: f64 = 40.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Moments {
    pub mean: f64,
    pub std: f64,
}

impl Moments {
    /// Population moments; a zero spread is clamped to 1.
    fn fit(values: &[f64]) -> Self {
        if values.is_empty() {
            return Self { mean: 0.0, std: 1.0 };
        }
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
        let std = var.sqrt();
        Self {
            mean,
            std: if std > 1e-12 { std } else { 1.0 },
        }
    }
}

/// Standardization statistics of amplitudes on a dB scale, one entry per
/// feature position.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DbStats {
    pub node_amp: Moments,
    pub intf: [Moments; 2],
    pub pot: [Moments; 2],
    /// Lower clamp in dB, applied before standardization; zero amplitudes map here.
    pub floor_db: f64,
}

/// Feature position an amplitude is transformed for.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FeatureSlot {
    Node,
    Intf(usize),
    Pot(usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum FeatureTransform {
    /// Raw amplitudes.
    #[default]
    Identity,
    /// `(max(20 log10 a, floor) - mean) / std` per position.
    Db(DbStats),
    /// `a / rms` per position; missing entries stay zero.
    Rms(RmsStats),
}

/// Root-mean-square amplitude per feature position.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RmsStats {
    pub node_amp: f64,
    pub intf: [f64; 2],
    pub pot: [f64; 2],
}

impl RmsStats {
    fn scale(&self, slot: FeatureSlot) -> f64 {
        match slot {
            FeatureSlot::Node => self.node_amp,
            FeatureSlot::Intf(k) => self.intf[k],
            FeatureSlot::Pot(k) => self.pot[k],
        }
    }
}

pub fn amp_to_db(a: f64) -> f64 {
    if a > 0.0 {
        20.0 * a.log10()
    } else {
        f64::NEG_INFINITY
    }
}

impl FeatureTransform {
    pub fn apply(&self, slot: FeatureSlot, amp: f64) -> f64 {
        match self {
            FeatureTransform::Identity => amp,
            FeatureTransform::Db(s) => {
                let mo = s.moments(slot);
                (amp_to_db(amp).max(s.floor_db) - mo.mean) / mo.std
            }
            FeatureTransform::Rms(s) => amp / s.scale(slot),
        }
    }

    pub fn invert(&self, slot: FeatureSlot, value: f64) -> f64 {
        match self {
            FeatureTransform::Identity => value,
            FeatureTransform::Db(s) => {
                let mo = s.moments(slot);
                10f64.powf((value * mo.std + mo.mean) / 20.0)
            }
            FeatureTransform::Rms(s) => value * s.scale(slot),
        }
    }
}

impl DbStats {
    fn moments(&self, slot: FeatureSlot) -> Moments {
        match slot {
            FeatureSlot::Node => self.node_amp,
            FeatureSlot::Intf(k) => self.intf[k],
            FeatureSlot::Pot(k) => self.pot[k],
        }
    }
}

/// Raw amplitudes for every feature position, in graph order.
struct RawFeatures<'a>(&'a NetworkInstance);

impl RawFeatures<'_> {
    fn node(&self) -> impl Iterator<Item = f64> + '_ {
        let inst = self.0;
        (0..inst.d_pairs)
            .flat_map(move |i| (0..inst.m_channels).map(move |m| inst.amp(i, i, m)))
    }

    /// `(i, j, m)` for every interference edge `(j,m) -> (i,m)`.
    fn intf(&self) -> impl Iterator<Item = [f64; 2]> + '_ {
        let inst = self.0;
        let d = inst.d_pairs;
        (0..d).flat_map(move |i| {
            (0..inst.m_channels).flat_map(move |m| {
                (0..d)
                    .filter(move |&j| j != i)
                    .map(move |j| [inst.amp(i, j, m), inst.amp(j, i, m)])
            })
        })
    }

    fn pot(&self) -> impl Iterator<Item = [f64; 2]> + '_ {
        let inst = self.0;
        let (d, mc) = (inst.d_pairs, inst.m_channels);
        (0..d).flat_map(move |i| {
            (0..mc).flat_map(move |m| {
                (0..d).filter(move |&j| j != i).flat_map(move |j| {
                    (0..mc)
                        .filter(move |&n| n != m)
                        .map(move |n| [inst.amp(i, j, m), inst.amp(i, j, n)])
                })
            })
        })
    }
}

/// Fit per-position dB standardization on a training set.
pub fn fit_transform(train: &Dataset) -> Result<FeatureTransform> {
    if train.is_empty() {
        return Err(Error::Config(
            "cannot fit a feature transform on an empty dataset".into(),
        ));
    }
    // node, intf[0], intf[1], pot[0], pot[1]
    let mut cols: [Vec<f64>; 5] = Default::default();
    for inst in &train.instances {
        let raw = RawFeatures(inst);
        cols[0].extend(raw.node().map(amp_to_db));
        for f in raw.intf() {
            cols[1].push(amp_to_db(f[0]));
            cols[2].push(amp_to_db(f[1]));
        }
        for f in raw.pot() {
            cols[3].push(amp_to_db(f[0]));
            cols[4].push(amp_to_db(f[1]));
        }
    }
    let min_db = cols
        .iter()
        .flatten()
        .copied()
        .filter(|v| v.is_finite())
        .fold(f64::INFINITY, f64::min);
    let floor_db = if min_db.is_finite() {
        min_db - MISSING_FLOOR_GAP_DB
    } else {
        -300.0
    };
    for c in &mut cols {
        c.iter_mut().for_each(|v| *v = v.max(floor_db));
    }
    let [node, i0, i1, p0, p1] = cols.map(|c| Moments::fit(&c));
    Ok(FeatureTransform::Db(DbStats {
        node_amp: node,
        intf: [i0, i1],
        pot: [p0, p1],
        floor_db,
    }))
}

/// Fit per-position RMS scaling on a training set.
pub fn fit_rms_transform(train: &Dataset) -> Result<FeatureTransform> {
    if train.is_empty() {
        return Err(Error::Config(
            "cannot fit a feature transform on an empty dataset".into(),
        ));
    }
    // node, intf[0], intf[1], pot[0], pot[1]
    let mut sq = [0.0f64; 5];
    let mut n = [0usize; 5];
    let mut add = |k: usize, a: f64| {
        sq[k] += a * a;
        n[k] += 1;
    };
    for inst in &train.instances {
        let raw = RawFeatures(inst);
        raw.node().for_each(|a| add(0, a));
        for f in raw.intf() {
            add(1, f[0]);
            add(2, f[1]);
        }
        for f in raw.pot() {
            add(3, f[0]);
            add(4, f[1]);
        }
    }
    let rms: Vec<f64> = sq
        .iter()
        .zip(&n)
        .map(|(&s, &k)| {
            let r = if k > 0 { (s / k as f64).sqrt() } else { 0.0 };
            if r > 0.0 {
                r
            } else {
                1.0
            }
        })
        .collect();
    Ok(FeatureTransform::Rms(RmsStats {
        node_amp: rms[0],
        intf: [rms[1], rms[2]],
        pot: [rms[3], rms[4]],
    }))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Edge {
    pub src: usize,
    pub dst: usize,
    pub feat: [f64; 2],
}

#[derive(Debug, Clone, PartialEq)]
pub struct HeteroGraph {
    pub d_pairs: usize,
    pub m_channels: usize,
    /// Per vertex: `[T(|h_ii^m|), w_i]`.
    pub node_feat: Vec<[f64; 2]>,
    pub intf_edges: Vec<Edge>,
    pub pot_edges: Vec<Edge>,
    pub transform: FeatureTransform,
}

impl HeteroGraph {
    #[inline]
    pub fn vertex(&self, i: usize, m: usize) -> usize {
        i * self.m_channels + m
    }

    pub fn n_vertices(&self) -> usize {
        self.d_pairs * self.m_channels
    }

    pub fn n_edges(&self) -> usize {
        self.intf_edges.len() + self.pot_edges.len()
    }
}

pub fn build_graph(inst: &NetworkInstance, transform: &FeatureTransform) -> HeteroGraph {
    build_graph_capped(inst, transform, None)
}

/// Interfering pairs kept for each destination pair: all others, or the
/// `cap` strongest by `Σ_m g_ij^m + g_ji^m` (ties to the lower index).
pub fn neighbor_sets(inst: &NetworkInstance, cap: Option<usize>) -> Vec<Vec<bool>> {
    let d = inst.d_pairs;
    let cap = cap.filter(|&k| k + 1 < d);
    let strength: Vec<f64> = match cap {
        Some(_) => (0..d * d)
            .map(|k| {
                let (i, j) = (k / d, k % d);
                (0..inst.m_channels).map(|m| inst.gain(i, j, m) + inst.gain(j, i, m)).sum()
            })
            .collect(),
        None => Vec::new(),
    };
    let mut others = Vec::with_capacity(d);
    (0..d)
        .map(|i| {
            let mut keep = vec![true; d];
            keep[i] = false;
            if let Some(k) = cap {
                let s = &strength[i * d..(i + 1) * d];
                others.clear();
                others.extend((0..d).filter(|&j| j != i));
                others.select_nth_unstable_by(k, |&a, &b| s[b].total_cmp(&s[a]).then(a.cmp(&b)));
                for &j in &others[k..] {
                    keep[j] = false;
                }
            }
            keep
        })
        .collect()
}

/// [`build_graph`] with each pair hearing at most `cap` interfering pairs.
pub fn build_graph_capped(inst: &NetworkInstance, transform: &FeatureTransform, cap: Option<usize>) -> HeteroGraph {
    let (d, mc) = (inst.d_pairs, inst.m_channels);
    let t = transform;
    let keep = neighbor_sets(inst, cap);
    let amp: Vec<f64> = inst.gains.iter().map(|g| g.sqrt()).collect();
    let a = |i: usize, j: usize, m: usize| amp[(i * d + j) * mc + m];

    let node_feat = (0..d * mc)
        .map(|v| [t.apply(FeatureSlot::Node, a(v / mc, v / mc, v % mc)), inst.weights[v / mc]])
        .collect();

    let degree: usize = keep.iter().map(|k| k.iter().filter(|&&b| b).count()).sum();
    let mut intf_edges = Vec::with_capacity(mc * degree);
    let mut pot_edges = Vec::with_capacity(mc * degree * mc.saturating_sub(1));
    for (i, kept) in keep.iter().enumerate() {
        for m in 0..mc {
            let dst = i * mc + m;
            for j in (0..d).filter(|&j| kept[j]) {
                intf_edges.push(Edge {
                    src: j * mc + m,
                    dst,
                    feat: [t.apply(FeatureSlot::Intf(0), a(i, j, m)), t.apply(FeatureSlot::Intf(1), a(j, i, m))],
                });
                for n in (0..mc).filter(|&n| n != m) {
                    pot_edges.push(Edge {
                        src: j * mc + n,
                        dst,
                        feat: [t.apply(FeatureSlot::Pot(0), a(i, j, m)), t.apply(FeatureSlot::Pot(1), a(i, j, n))],
                    });
                }
            }
        }
    }

    HeteroGraph {
        d_pairs: d,
        m_channels: mc,
        node_feat,
        intf_edges,
        pot_edges,
        transform: *transform,
    }
}

/// Disjoint union of graphs with flat index arrays, the model's input layout.
#[derive(Debug, Clone)]
pub struct GraphBatch {
    pub m_channels: usize,
    pub n_pairs: usize,
    pub n_vertices: usize,
    /// Start of each graph's pairs; has one extra trailing entry.
    pub pair_offsets: Vec<usize>,
    /// `V × 2`, row-major.
    pub node_feat: Vec<f64>,
    /// `E × 2`, row-major.
    pub edge_feat: Vec<f64>,
    pub src_vertex: Vec<usize>,
    pub src_pair: Vec<usize>,
    pub dst_vertex: Vec<usize>,
    pub dst_pair: Vec<usize>,
    /// Incoming edge count per pair (summed over the pair's vertices).
    pub in_degree: Vec<f64>,
}

impl GraphBatch {
    pub fn new(graphs: &[&HeteroGraph]) -> Result<Self> {
        let m = graphs
            .first()
            .ok_or_else(|| Error::Dimension("empty graph batch".into()))?
            .m_channels;
        if let Some(g) = graphs.iter().find(|g| g.m_channels != m) {
            return Err(Error::Dimension(format!(
                "graphs in a batch must share M: {} vs {}",
                m, g.m_channels
            )));
        }
        let n_pairs: usize = graphs.iter().map(|g| g.d_pairs).sum();
        let n_edges: usize = graphs.iter().map(|g| g.n_edges()).sum();
        let mut b = GraphBatch {
            m_channels: m,
            n_pairs,
            n_vertices: n_pairs * m,
            pair_offsets: Vec::with_capacity(graphs.len() + 1),
            node_feat: Vec::with_capacity(n_pairs * m * 2),
            edge_feat: Vec::with_capacity(n_edges * 2),
            src_vertex: Vec::with_capacity(n_edges),
            src_pair: Vec::with_capacity(n_edges),
            dst_vertex: Vec::with_capacity(n_edges),
            dst_pair: Vec::with_capacity(n_edges),
            in_degree: vec![0.0; n_pairs],
        };
        let mut pair_base = 0;
        for g in graphs {
            b.pair_offsets.push(pair_base);
            let vbase = pair_base * m;
            for f in &g.node_feat {
                b.node_feat.extend_from_slice(f);
            }
            for e in g.intf_edges.iter().chain(&g.pot_edges) {
                b.edge_feat.extend_from_slice(&e.feat);
                b.src_vertex.push(vbase + e.src);
                b.src_pair.push(pair_base + e.src / m);
                b.dst_vertex.push(vbase + e.dst);
                b.dst_pair.push(pair_base + e.dst / m);
                b.in_degree[pair_base + e.dst / m] += 1.0;
            }
            pair_base += g.d_pairs;
        }
        b.pair_offsets.push(pair_base);
        Ok(b)
    }

    pub fn n_edges(&self) -> usize {
        self.src_vertex.len()
    }

    pub fn n_graphs(&self) -> usize {
        self.pair_offsets.len() - 1
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::netgen::{generate_dataset, sample_instance, FadingConfig, GeometryConfig};

    fn inst(d: usize, m: usize, seed: u64) -> NetworkInstance {
        sample_instance(&GeometryConfig::new(d, m), &FadingConfig::default(), seed).unwrap()
    }

    fn expected_counts(d: usize, m: usize) -> (usize, usize, usize) {
        (d * m, m * d * (d - 1), d * m * (d - 1) * (m - 1))
    }

    #[test]
    fn edge_counts() {
        let g = build_graph(&inst(2, 2, 1), &FeatureTransform::Identity);
        assert_eq!((g.n_vertices(), g.intf_edges.len(), g.pot_edges.len()), (4, 4, 4));
        let g = build_graph(&inst(3, 2, 1), &FeatureTransform::Identity);
        assert_eq!((g.n_vertices(), g.intf_edges.len(), g.pot_edges.len()), (6, 12, 12));
        for (d, m) in [(1, 1), (1, 3), (4, 1), (5, 3), (7, 4)] {
            let g = build_graph(&inst(d, m, 2), &FeatureTransform::Identity);
            assert_eq!(
                (g.n_vertices(), g.intf_edges.len(), g.pot_edges.len()),
                expected_counts(d, m)
            );
        }
    }

    #[test]
    fn enumerated_neighborhoods_match_definition() {
        // Direct enumeration of N(i_m) and N^p(i_m) for D=3, M=2.
        let (d, m) = (3, 2);
        let g = build_graph(&inst(d, m, 4), &FeatureTransform::Identity);
        for i in 0..d {
            for ch in 0..m {
                let v = i * m + ch;
                let mut intf: Vec<usize> = g.intf_edges.iter().filter(|e| e.dst == v).map(|e| e.src).collect();
                let mut pot: Vec<usize> = g.pot_edges.iter().filter(|e| e.dst == v).map(|e| e.src).collect();
                intf.sort();
                pot.sort();
                let want_intf: Vec<usize> = (0..d).filter(|&j| j != i).map(|j| j * m + ch).collect();
                let want_pot: Vec<usize> = (0..d)
                    .filter(|&j| j != i)
                    .flat_map(|j| (0..m).filter(move |&n| n != ch).map(move |n| j * m + n))
                    .collect();
                assert_eq!(intf, want_intf);
                assert_eq!(pot, want_pot);
            }
        }
        // Ordering is lexicographic by (dst, src).
        for edges in [&g.intf_edges, &g.pot_edges] {
            assert!(edges.windows(2).all(|w| (w[0].dst, w[0].src) < (w[1].dst, w[1].src)));
        }
    }

    #[test]
    fn identity_features_are_raw_amplitudes() {
        let x = inst(3, 2, 6);
        let g = build_graph(&x, &FeatureTransform::Identity);
        for i in 0..3 {
            for m in 0..2 {
                assert_eq!(g.node_feat[i * 2 + m], [x.gain(i, i, m).sqrt(), x.weights[i]]);
            }
        }
        for e in &g.intf_edges {
            let (i, m, j) = (e.dst / 2, e.dst % 2, e.src / 2);
            assert_eq!(e.src % 2, m);
            assert_eq!(e.feat, [x.amp(i, j, m), x.amp(j, i, m)]);
        }
        for e in &g.pot_edges {
            let (i, m, j, n) = (e.dst / 2, e.dst % 2, e.src / 2, e.src % 2);
            assert_ne!(m, n);
            assert_eq!(e.feat, [x.amp(i, j, m), x.amp(i, j, n)]);
        }
    }

    #[test]
    fn constant_amplitudes_standardize_to_zero() {
        let mut ds = generate_dataset(&GeometryConfig::new(3, 2), &FadingConfig::default(), 4, 1).unwrap();
        for x in &mut ds.instances {
            x.gains.iter_mut().for_each(|g| *g = 1e-6); // amplitude 1e-3
        }
        let t = fit_transform(&ds).unwrap();
        let FeatureTransform::Db(s) = t else { panic!() };
        assert!((s.node_amp.mean + 60.0).abs() < 1e-9);
        assert_eq!(s.node_amp.std, 1.0);
        assert_eq!(s.pot[1].std, 1.0);
        assert!(t.apply(FeatureSlot::Node, 1e-3).abs() < 1e-9);
        assert!(t.apply(FeatureSlot::Intf(0), 1e-3).abs() < 1e-9);
    }

    #[test]
    fn transform_inverts() {
        let ds = generate_dataset(&GeometryConfig::new(4, 2), &FadingConfig::default(), 10, 2).unwrap();
        let t = fit_transform(&ds).unwrap();
        for x in &ds.instances {
            for &a in x.gains.iter().map(|g| g.sqrt()).collect::<Vec<_>>().iter() {
                for slot in [FeatureSlot::Node, FeatureSlot::Intf(1), FeatureSlot::Pot(0)] {
                    let back = t.invert(slot, t.apply(slot, a));
                    assert!(((back - a) / a).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn transformed_training_features_are_standardized() {
        let ds = generate_dataset(&GeometryConfig::new(5, 3), &FadingConfig::default(), 30, 3).unwrap();
        let t = fit_transform(&ds).unwrap();
        let mut cols: Vec<Vec<f64>> = vec![Vec::new(); 5];
        for x in &ds.instances {
            let g = build_graph(x, &t);
            cols[0].extend(g.node_feat.iter().map(|f| f[0]));
            for e in &g.intf_edges {
                cols[1].push(e.feat[0]);
                cols[2].push(e.feat[1]);
            }
            for e in &g.pot_edges {
                cols[3].push(e.feat[0]);
                cols[4].push(e.feat[1]);
            }
        }
        for c in cols {
            let n = c.len() as f64;
            let mean = c.iter().sum::<f64>() / n;
            let var = c.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
            assert!(mean.abs() < 1e-6, "mean {mean}");
            assert!((var.sqrt() - 1.0).abs() < 1e-6, "std {}", var.sqrt());
        }
    }

    #[test]
    fn rms_transform_scales_to_unit_rms() {
        let ds = generate_dataset(&GeometryConfig::new(5, 3), &FadingConfig::default(), 30, 3).unwrap();
        let t = fit_rms_transform(&ds).unwrap();
        assert!(matches!(t, FeatureTransform::Rms(_)));
        let mut cols: Vec<Vec<f64>> = vec![Vec::new(); 5];
        for x in &ds.instances {
            let g = build_graph(x, &t);
            cols[0].extend(g.node_feat.iter().map(|f| f[0]));
            for e in &g.intf_edges {
                cols[1].push(e.feat[0]);
                cols[2].push(e.feat[1]);
            }
            for e in &g.pot_edges {
                cols[3].push(e.feat[0]);
                cols[4].push(e.feat[1]);
            }
        }
        for c in cols {
            let rms = (c.iter().map(|v| v * v).sum::<f64>() / c.len() as f64).sqrt();
            assert!((rms - 1.0).abs() < 1e-9, "rms {rms}");
            assert!(c.iter().all(|&v| v > 0.0));
        }
        for slot in [FeatureSlot::Node, FeatureSlot::Intf(1), FeatureSlot::Pot(0)] {
            assert_eq!(t.apply(slot, 0.0), 0.0);
            let a = 3.7e-4;
            assert!(((t.invert(slot, t.apply(slot, a)) - a) / a).abs() < 1e-12);
        }
    }

    fn sources(g: &HeteroGraph, edges: &[Edge], dst: usize) -> Vec<usize> {
        let mut s: Vec<usize> = edges.iter().filter(|e| e.dst == dst).map(|e| e.src / g.m_channels).collect();
        s.dedup();
        s
    }

    #[test]
    fn neighbor_cap_keeps_strongest_interferers() {
        let (d, m, cap) = (8, 2, 3);
        let x = inst(d, m, 21);
        let full = build_graph(&x, &FeatureTransform::Identity);
        let g = build_graph_capped(&x, &FeatureTransform::Identity, Some(cap));
        assert_eq!(g.node_feat, full.node_feat);
        assert_eq!(g.intf_edges.len(), d * m * cap);
        assert_eq!(g.pot_edges.len(), d * m * cap * (m - 1));
        let keep = neighbor_sets(&x, Some(cap));
        for i in 0..d {
            let strength = |j: usize| (0..m).map(|c| x.gain(i, j, c) + x.gain(j, i, c)).sum::<f64>();
            let kept: Vec<usize> = (0..d).filter(|&j| keep[i][j]).collect();
            assert_eq!(kept.len(), cap);
            let weakest_kept = kept.iter().map(|&j| strength(j)).fold(f64::INFINITY, f64::min);
            for j in (0..d).filter(|&j| j != i && !keep[i][j]) {
                assert!(strength(j) <= weakest_kept);
            }
            for c in 0..m {
                let v = g.vertex(i, c);
                assert_eq!(sources(&g, &g.intf_edges, v), kept);
                assert_eq!(sources(&g, &g.pot_edges, v), kept);
            }
        }
        // Surviving edges carry the same features as in the full graph.
        for e in g.intf_edges.iter().chain(&g.pot_edges) {
            assert!(full.intf_edges.iter().chain(&full.pot_edges).any(|f| f == e));
        }
        for big in [d - 1, d, 100] {
            assert_eq!(build_graph_capped(&x, &FeatureTransform::Identity, Some(big)), full);
        }
    }

    #[test]
    fn neighbor_cap_ties_prefer_lower_index() {
        let x = NetworkInstance::from_gains(&vec![vec![vec![0.5]; 3]; 3], vec![1.0; 3], 1e-3, 1.0).unwrap();
        let keep = neighbor_sets(&x, Some(1));
        assert_eq!(keep[0], vec![false, true, false]);
        assert_eq!(keep[2], vec![true, false, false]);
    }

    #[test]
    fn missing_csi_maps_to_finite_floor() {
        let ds = generate_dataset(&GeometryConfig::new(4, 2), &FadingConfig::default(), 5, 9).unwrap();
        let t = fit_transform(&ds).unwrap();
        let v = t.apply(FeatureSlot::Intf(0), 0.0);
        assert!(v.is_finite());
        for x in &ds.instances {
            for g in &x.gains {
                assert!(v < t.apply(FeatureSlot::Intf(0), g.sqrt()));
            }
        }
    }

    #[test]
    fn permuted_instance_gives_isomorphic_graph() {
        let x = inst(4, 3, 12);
        let perm = [2, 0, 3, 1];
        let px = x.permuted(&perm);
        let g = build_graph(&x, &FeatureTransform::Identity);
        let pg = build_graph(&px, &FeatureTransform::Identity);
        let m = 3;
        // New pair a is old pair perm[a]: vertex (a, ch) maps to (perm[a], ch).
        let map = |v: usize| perm[v / m] * m + v % m;
        for v in 0..pg.n_vertices() {
            assert_eq!(pg.node_feat[v], g.node_feat[map(v)]);
        }
        let find = |edges: &[Edge], s: usize, d: usize| edges.iter().find(|e| e.src == s && e.dst == d).copied();
        for e in &pg.intf_edges {
            assert_eq!(find(&g.intf_edges, map(e.src), map(e.dst)).unwrap().feat, e.feat);
        }
        for e in &pg.pot_edges {
            assert_eq!(find(&g.pot_edges, map(e.src), map(e.dst)).unwrap().feat, e.feat);
        }
    }

    #[test]
    fn batch_offsets_and_degrees() {
        let a = build_graph(&inst(3, 2, 1), &FeatureTransform::Identity);
        let b = build_graph(&inst(5, 2, 2), &FeatureTransform::Identity);
        let batch = GraphBatch::new(&[&a, &b]).unwrap();
        assert_eq!(batch.pair_offsets, vec![0, 3, 8]);
        assert_eq!(batch.n_edges(), a.n_edges() + b.n_edges());
        // (D-1)·M² incoming edges per pair.
        assert!(batch.in_degree[..3].iter().all(|&k| k == 8.0));
        assert!(batch.in_degree[3..].iter().all(|&k| k == 16.0));
        let c = build_graph(&inst(3, 3, 1), &FeatureTransform::Identity);
        assert!(GraphBatch::new(&[&a, &c]).is_err());
    }
}
