//! Single-head graph attention over the sensor graph.
//!
//! For node features `h_i`, scores and outputs are
//!
//! ```text
//! g_i = W h_i
//! e_ij = leaky_relu(a_src . g_i + a_dst . g_j)     for j in N(i) + {i}
//! alpha_ij = exp(e_ij) / sum_k exp(e_ik)           (max-subtracted)
//! h'_i = elu(sum_j alpha_ij g_j)
//! ```
//!
//! Self-loops are added here, not stored in the graph. Softmax denominators
//! and aggregations use value-sorted sums, so a consistent relabelling of the
//! nodes permutes the output rows without changing a single bit.

use crate::neuralcore::math::{dot, elu, elu_deriv, leaky_relu, leaky_relu_deriv, stable_sum, Mat};
use crate::preprocess::SensorGraph;
use crate::{Error, Result};

// ── Parameters ──────────────────────────────────────────────────────────────

/// One attention layer. `attn` is the concatenated score vector
/// `[a_src, a_dst]`, length `2 * out_dim`.
#[derive(Debug, Clone, PartialEq)]
pub struct GatLayer {
    pub in_dim: usize,
    pub out_dim: usize,
    pub weight: Mat,
    pub attn: Vec<f64>,
    pub leaky_slope: f64,
}

impl GatLayer {
    pub fn zeros(in_dim: usize, out_dim: usize, leaky_slope: f64) -> Self {
        GatLayer {
            in_dim,
            out_dim,
            weight: Mat::zeros(out_dim, in_dim),
            attn: vec![0.0; 2 * out_dim],
            leaky_slope,
        }
    }
}

/// Attention coefficients from one layer: for node `i`, `domains[i]` lists
/// the attended nodes (neighbours plus self, ascending) and `alpha[i]` the
/// matching coefficients, each row summing to 1.
#[derive(Debug, Clone, PartialEq)]
pub struct Attention {
    pub domains: Vec<Vec<usize>>,
    pub alpha: Vec<Vec<f64>>,
}

impl Attention {
    /// Total attention mass flowing *into* each node (column sums).
    pub fn mass(&self) -> Vec<f64> {
        let n = self.domains.len();
        let mut per_node: Vec<Vec<f64>> = vec![Vec::new(); n];
        for (i, dom) in self.domains.iter().enumerate() {
            for (k, &j) in dom.iter().enumerate() {
                per_node[j].push(self.alpha[i][k]);
            }
        }
        per_node.iter_mut().map(|terms| stable_sum(terms)).collect()
    }
}

#[derive(Debug, Clone)]
pub(crate) struct GatCache {
    pub g: Mat,
    /// Activated scores e_ij, aligned with each node's domain.
    pub e: Vec<Vec<f64>>,
    pub alpha: Vec<Vec<f64>>,
    /// Aggregated features before the output nonlinearity.
    pub m: Mat,
}

// ── Forward ─────────────────────────────────────────────────────────────────

fn domain_of(graph: &SensorGraph, i: usize) -> Vec<usize> {
    let nbrs = graph.neighbors(i);
    let mut dom = Vec::with_capacity(nbrs.len() + 1);
    let pos = nbrs.partition_point(|&j| j < i);
    dom.extend_from_slice(&nbrs[..pos]);
    dom.push(i);
    dom.extend_from_slice(&nbrs[pos..]);
    dom
}

pub(crate) fn gat_forward_cached(
    h: &Mat,
    graph: &SensorGraph,
    layer: &GatLayer,
) -> Result<(Mat, Attention, GatCache)> {
    if h.rows != graph.n_nodes {
        return Err(Error::Shape(format!(
            "attention expects {} node rows, got {}",
            graph.n_nodes, h.rows
        )));
    }
    if h.cols != layer.in_dim {
        return Err(Error::Shape(format!(
            "attention expects {} features per node, got {}",
            layer.in_dim, h.cols
        )));
    }
    let n = graph.n_nodes;
    let f = layer.out_dim;
    let (a_src, a_dst) = layer.attn.split_at(f);

    let mut g = Mat::zeros(n, f);
    let mut s = vec![0.0; n];
    let mut d = vec![0.0; n];
    for i in 0..n {
        layer.weight.matvec(h.row(i), g.row_mut(i));
        s[i] = dot(a_src, g.row(i));
        d[i] = dot(a_dst, g.row(i));
    }

    let mut domains = Vec::with_capacity(n);
    let mut alpha = Vec::with_capacity(n);
    let mut scores = Vec::with_capacity(n);
    let mut m = Mat::zeros(n, f);
    let mut out = Mat::zeros(n, f);
    for i in 0..n {
        let dom = domain_of(graph, i);
        let e_row: Vec<f64> = dom
            .iter()
            .map(|&j| leaky_relu(s[i] + d[j], layer.leaky_slope))
            .collect();
        let top = e_row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut ex: Vec<f64> = e_row.iter().map(|e| (e - top).exp()).collect();
        let denom = stable_sum(&mut ex.clone());
        for a in &mut ex {
            *a /= denom;
        }
        let mut terms = Vec::with_capacity(dom.len());
        for c in 0..f {
            terms.clear();
            terms.extend(dom.iter().zip(&ex).map(|(&j, &a)| a * g.at(j, c)));
            let agg = stable_sum(&mut terms);
            *m.at_mut(i, c) = agg;
            *out.at_mut(i, c) = elu(agg);
        }
        domains.push(dom);
        alpha.push(ex);
        scores.push(e_row);
    }
    let attention = Attention { domains, alpha: alpha.clone() };
    Ok((out, attention, GatCache { g, e: scores, alpha, m }))
}

/// Applies one attention layer; returns transformed node features and the
/// attention coefficients.
pub fn gat_forward(h: &Mat, graph: &SensorGraph, layer: &GatLayer) -> Result<(Mat, Attention)> {
    let (out, attention, _) = gat_forward_cached(h, graph, layer)?;
    Ok((out, attention))
}

// ── Backward ────────────────────────────────────────────────────────────────

/// Given `dL/dout`, accumulates parameter gradients into `grad` and returns
/// `dL/dh`. `h` must be the forward input and `cache` its forward cache.
pub(crate) fn gat_backward(
    h: &Mat,
    graph: &SensorGraph,
    layer: &GatLayer,
    cache: &GatCache,
    dout: &Mat,
    grad: &mut GatLayer,
) -> Result<Mat> {
    let n = graph.n_nodes;
    let f = layer.out_dim;
    if dout.rows != n || dout.cols != f {
        return Err(Error::Shape(format!(
            "attention backward expects gradient {}x{}, got {}x{}",
            n, f, dout.rows, dout.cols
        )));
    }
    let (a_src, a_dst) = layer.attn.split_at(f);
    let mut dg = Mat::zeros(n, f);
    let mut ds = vec![0.0; n];
    let mut dd = vec![0.0; n];

    for i in 0..n {
        let dom = domain_of(graph, i);
        let alpha = &cache.alpha[i];
        let e = &cache.e[i];
        // through the ELU
        let mut dm = vec![0.0; f];
        for c in 0..f {
            dm[c] = dout.at(i, c) * elu_deriv(cache.m.at(i, c));
        }
        // through the aggregation: dalpha_ij = dm . g_j, dg_j += alpha_ij dm
        let mut dalpha = vec![0.0; dom.len()];
        for (k, &j) in dom.iter().enumerate() {
            dalpha[k] = dot(&dm, cache.g.row(j));
            let a = alpha[k];
            let row = dg.row_mut(j);
            for c in 0..f {
                row[c] += a * dm[c];
            }
        }
        // softmax: de_ij = alpha_ij (dalpha_ij - sum_k alpha_ik dalpha_ik)
        let mut inner = 0.0;
        for k in 0..dom.len() {
            inner += alpha[k] * dalpha[k];
        }
        for (k, &j) in dom.iter().enumerate() {
            let de = alpha[k] * (dalpha[k] - inner);
            // e is the leaky output; it is negative exactly when the
            // pre-activation was, so the derivative can be read off it.
            let dt = de * leaky_relu_deriv(e[k], layer.leaky_slope);
            ds[i] += dt;
            dd[j] += dt;
        }
    }

    // scores: s_i = a_src . g_i, d_i = a_dst . g_i
    for i in 0..n {
        let gi = cache.g.row(i);
        let row = dg.row_mut(i);
        for c in 0..f {
            grad.attn[c] += ds[i] * gi[c];
            grad.attn[f + c] += dd[i] * gi[c];
            row[c] += ds[i] * a_src[c] + dd[i] * a_dst[c];
        }
    }

    // linear map: g_i = W h_i
    let mut dh = Mat::zeros(n, layer.in_dim);
    for i in 0..n {
        grad.weight.outer_acc(dg.row(i), h.row(i));
        layer.weight.matvec_t_acc(dg.row(i), dh.row_mut(i));
    }
    Ok(dh)
}
