//! Tape-free inference. Each edge's hidden activation is accumulated straight
//! into its destination row, so no per-edge tensor is ever stored.

use super::params::{JcpgnnParams, MessageConvention, PairAggregate};
use crate::autodiff::Tensor;
use crate::error::{Error, Result};
use crate::hetgraph::GraphBatch;

/// Channel distribution (P×M) and power fraction (P×1).
pub(crate) fn run_fused(
    params: &JcpgnnParams,
    batch: &GraphBatch,
    fixed_channel: Option<&Tensor>,
) -> Result<(Tensor, Tensor)> {
    let m = params.meta.m_channels;
    if batch.m_channels != m {
        return Err(Error::Dimension(format!(
            "graph has M={}, model expects M={m}",
            batch.m_channels
        )));
    }
    let (p, nv) = (batch.n_pairs, batch.n_vertices);
    let (state_src, node_src) = match params.meta.convention {
        MessageConvention::Sender => (&batch.src_pair, &batch.src_vertex),
        MessageConvention::Receiver => (&batch.dst_pair, &batch.dst_vertex),
        MessageConvention::Hybrid => (&batch.src_pair, &batch.dst_vertex),
    };
    let aggregate = params.meta.aggregate;
    let (dst, n_rows) = match aggregate {
        PairAggregate::Sum => (&batch.dst_pair, p),
        PairAggregate::Concat => (&batch.dst_vertex, nv),
    };
    let mut degree = vec![0.0; n_rows];
    for &r in dst {
        degree[r] += 1.0;
    }
    let node_feat = Tensor::from_vec(nv, 2, batch.node_feat.clone())?;

    let mut x = Tensor::filled(p, m + 1, 1.0);
    let mut channel = Tensor::zeros(p, m);
    let mut rho = Tensor::zeros(p, 1);
    for layer in &params.layers {
        let phi1 = &layer.phi1;
        let first = &phi1.layers[0];
        let width = first.weight.cols();
        let w = first.weight.data();
        let (w_state, rest) = w.split_at((m + 1) * width);
        let (w_node, w_edge) = rest.split_at(2 * width);
        let xs = project(x.data(), m + 1, w_state, width);
        let vs = project(node_feat.data(), 2, w_node, width);
        let b1 = first.bias.data();

        let last = phi1.layers.len() - 1;
        let hidden = phi1.layers[last].weight.rows();
        let mut agg = Tensor::zeros(n_rows, hidden);
        let mut h = vec![0.0; width];
        let mut next = Vec::new();
        for e in 0..dst.len() {
            let (a, b) = (state_src[e] * width, node_src[e] * width);
            let (f0, f1) = (batch.edge_feat[2 * e], batch.edge_feat[2 * e + 1]);
            for k in 0..width {
                let z = xs[a + k] + vs[b + k] + f0 * w_edge[k] + f1 * w_edge[width + k] + b1[k];
                h[k] = z.max(0.0);
            }
            let mut cur: &[f64] = &h;
            for lin in &phi1.layers[1..last] {
                next.clear();
                next.extend_from_slice(lin.bias.data());
                for (i, &hv) in cur.iter().enumerate() {
                    for (o, &wv) in next.iter_mut().zip(lin.weight.row(i)) {
                        *o += hv * wv;
                    }
                }
                next.iter_mut().for_each(|v| *v = v.max(0.0));
                std::mem::swap(&mut h, &mut next);
                cur = &h;
            }
            for (o, &v) in agg.row_mut(dst[e]).iter_mut().zip(cur) {
                *o += v;
            }
        }
        let out = &phi1.layers[last];
        let msg_width = out.weight.cols();
        let mut n = project(agg.data(), hidden, out.weight.data(), msg_width);
        for (r, &deg) in degree.iter().enumerate() {
            for (v, &b) in n[r * msg_width..(r + 1) * msg_width].iter_mut().zip(out.bias.data()) {
                *v += deg * b;
            }
        }
        // Concat: vertex rows i*M + m laid out row-major form the pair rows.
        let n_cols = n.len() / p.max(1);
        let mut head_in = Tensor::zeros(p, m + 1 + n_cols);
        for i in 0..p {
            let row = head_in.row_mut(i);
            row[..m + 1].copy_from_slice(x.row(i));
            row[m + 1..].copy_from_slice(&n[i * n_cols..(i + 1) * n_cols]);
        }
        channel = layer.alpha1.eval(&head_in)?;
        rho = layer.alpha2.eval(&head_in)?;
        if let Some(fc) = fixed_channel {
            channel = fc.clone();
        }
        for i in 0..p {
            let row = x.row_mut(i);
            row[..m].copy_from_slice(channel.row(i));
            row[m] = rho.get(i, 0);
        }
    }
    Ok((channel, rho))
}

/// Row-major `(rows × k) · (k × width)`.
fn project(a: &[f64], k: usize, w: &[f64], width: usize) -> Vec<f64> {
    let rows = a.len() / k;
    let mut out = vec![0.0; rows * width];
    for r in 0..rows {
        let o = &mut out[r * width..(r + 1) * width];
        for (i, &av) in a[r * k..(r + 1) * k].iter().enumerate() {
            for (ov, &wv) in o.iter_mut().zip(&w[i * width..(i + 1) * width]) {
                *ov += av * wv;
            }
        }
    }
    out
}
