//! Central-difference validation of every analytic gradient in the crate.
//!
//! For each layer a small random scenario is built, the loss is reduced to a
//! scalar through a fixed random projection, and every parameter (and input,
//! where meaningful) is perturbed by `+-h` with `h = 1e-5`. The relative
//! error `|a - n| / max(|a|, |n|)` must stay within `1e-4`; elements where
//! both gradients are below `1e-7` count as matching, since the quotient is
//! meaningless at that scale.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::neuralcore::conv::{conv1d_backward, conv1d_forward, ConvLayer};
use crate::neuralcore::gat::{gat_backward, gat_forward_cached, GatLayer};
use crate::neuralcore::gru::{gru_sequence_backward, gru_sequence_cached, GruLayer};
use crate::neuralcore::layers::{dense_sigmoid, mean_pool, mean_pool_backward};
use crate::neuralcore::math::{dot, Mat};
use crate::neuralcore::model::{
    backward, forward, forward_explain, Mode, ModelConfig, ModelParams,
};
use crate::preprocess::{GaitCycleSample, SensorGraph};
use crate::training::{bce_grad, bce_loss};
use crate::{Error, Result};

pub const FD_STEP: f64 = 1e-5;
pub const REL_TOLERANCE: f64 = 1e-4;
/// Below this magnitude on both sides, relative error is noise.
pub const ZERO_FLOOR: f64 = 1e-7;

// ── Report ──────────────────────────────────────────────────────────────────

#[derive(Debug, Clone, Serialize)]
pub struct GradCheckEntry {
    pub layer: String,
    pub seed: u64,
    pub checked: usize,
    pub max_rel_err: f64,
    pub passed: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct GradCheckReport {
    pub step: f64,
    pub tolerance: f64,
    pub seeds_per_layer: u64,
    pub entries: Vec<GradCheckEntry>,
    pub passed: bool,
}

// ── Machinery ───────────────────────────────────────────────────────────────

fn rel_err(a: f64, n: f64) -> f64 {
    if a.abs() <= ZERO_FLOOR && n.abs() <= ZERO_FLOOR {
        return 0.0;
    }
    (a - n).abs() / a.abs().max(n.abs())
}

/// Central differences of `f` at `theta`, one coordinate at a time.
fn central_diff(theta: &mut [f64], mut f: impl FnMut(&[f64]) -> f64) -> Vec<f64> {
    let mut out = vec![0.0; theta.len()];
    for i in 0..theta.len() {
        let saved = theta[i];
        theta[i] = saved + FD_STEP;
        let hi = f(theta);
        theta[i] = saved - FD_STEP;
        let lo = f(theta);
        theta[i] = saved;
        out[i] = (hi - lo) / (2.0 * FD_STEP);
    }
    out
}

fn compare(analytic: &[f64], numeric: &[f64]) -> (usize, f64) {
    let mut worst = 0.0f64;
    for (&a, &n) in analytic.iter().zip(numeric) {
        worst = worst.max(rel_err(a, n));
    }
    (analytic.len(), worst)
}

fn rand_vec(rng: &mut ChaCha8Rng, len: usize) -> Vec<f64> {
    (0..len).map(|_| 2.0 * rng.random::<f64>() - 1.0).collect()
}

// ── Scenarios ───────────────────────────────────────────────────────────────
// Each builds a small random instance, computes the analytic gradient of a
// projected scalar loss, and differentiates the same loss numerically over
// parameters and inputs together.

fn scenario_conv(seed: u64) -> Result<(usize, f64)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (in_ch, out_ch, k, len) = (2, 3, 3, 8);
    let w = rand_vec(&mut rng, out_ch * in_ch * k);
    let b = rand_vec(&mut rng, out_ch);
    let x = rand_vec(&mut rng, in_ch * len);
    let u = rand_vec(&mut rng, out_ch * (len - k + 1));

    let loss = |theta: &[f64]| {
        let (w, rest) = theta.split_at(out_ch * in_ch * k);
        let (b, x) = rest.split_at(out_ch);
        let layer = ConvLayer { in_ch, out_ch, kernel: k, weight: w.to_vec(), bias: b.to_vec() };
        let xm = Mat::from_vec(in_ch, len, x.to_vec()).unwrap();
        dot(&conv1d_forward(&xm, &layer).unwrap().data, &u)
    };

    let layer = ConvLayer { in_ch, out_ch, kernel: k, weight: w.clone(), bias: b.clone() };
    let xm = Mat::from_vec(in_ch, len, x.clone())?;
    let dy = Mat::from_vec(out_ch, len - k + 1, u.clone())?;
    let mut grad = ConvLayer::zeros(in_ch, out_ch, k);
    let dx = conv1d_backward(&xm, &layer, &dy, &mut grad)?;

    let mut analytic = grad.weight;
    analytic.extend(grad.bias);
    analytic.extend(dx.data);
    let mut theta: Vec<f64> = w.into_iter().chain(b).chain(x).collect();
    let numeric = central_diff(&mut theta, loss);
    Ok(compare(&analytic, &numeric))
}

fn rand_gru(rng: &mut ChaCha8Rng, input: usize, hidden: usize) -> GruLayer {
    let mut layer = GruLayer::zeros(input, hidden);
    let cat = hidden + input;
    layer.w_update.data = rand_vec(rng, hidden * cat);
    layer.w_reset.data = rand_vec(rng, hidden * cat);
    layer.w_cand.data = rand_vec(rng, hidden * cat);
    layer.b_update = rand_vec(rng, hidden);
    layer.b_reset = rand_vec(rng, hidden);
    layer.b_cand = rand_vec(rng, hidden);
    layer
}

fn gru_theta(layers: &[GruLayer], xs: &[Vec<f64>]) -> Vec<f64> {
    let mut theta = Vec::new();
    for l in layers {
        theta.extend_from_slice(&l.w_update.data);
        theta.extend_from_slice(&l.w_reset.data);
        theta.extend_from_slice(&l.w_cand.data);
        theta.extend_from_slice(&l.b_update);
        theta.extend_from_slice(&l.b_reset);
        theta.extend_from_slice(&l.b_cand);
    }
    for x in xs {
        theta.extend_from_slice(x);
    }
    theta
}

fn gru_from_theta(theta: &[f64], dims: &[(usize, usize)], t_len: usize) -> (Vec<GruLayer>, Vec<Vec<f64>>) {
    let mut pos = 0;
    let mut take = |n: usize| {
        let s = &theta[pos..pos + n];
        pos += n;
        s.to_vec()
    };
    let mut layers = Vec::new();
    for &(input, hidden) in dims {
        let cat = hidden + input;
        let mut l = GruLayer::zeros(input, hidden);
        l.w_update.data = take(hidden * cat);
        l.w_reset.data = take(hidden * cat);
        l.w_cand.data = take(hidden * cat);
        l.b_update = take(hidden);
        l.b_reset = take(hidden);
        l.b_cand = take(hidden);
        layers.push(l);
    }
    let input0 = dims[0].0;
    let xs = (0..t_len).map(|_| take(input0)).collect();
    (layers, xs)
}

fn scenario_gru(seed: u64, dims: Vec<(usize, usize)>, t_len: usize) -> Result<(usize, f64)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let layers: Vec<GruLayer> = dims.iter().map(|&(i, h)| rand_gru(&mut rng, i, h)).collect();
    let xs: Vec<Vec<f64>> = (0..t_len).map(|_| rand_vec(&mut rng, dims[0].0)).collect();
    let u = rand_vec(&mut rng, dims.last().unwrap().1);

    let cache = gru_sequence_cached(&layers, &xs)?;
    let mut grads: Vec<GruLayer> = dims.iter().map(|&(i, h)| GruLayer::zeros(i, h)).collect();
    let dxs = gru_sequence_backward(&layers, &cache, &u, &mut grads)?;
    let analytic = gru_theta(&grads, &dxs);

    let mut theta = gru_theta(&layers, &xs);
    let numeric = central_diff(&mut theta, |t| {
        let (ls, xs) = gru_from_theta(t, &dims, t_len);
        let c = gru_sequence_cached(&ls, &xs).unwrap();
        dot(&c.steps.last().unwrap().last().unwrap().h, &u)
    });
    Ok(compare(&analytic, &numeric))
}

fn scenario_gat(seed: u64) -> Result<(usize, f64)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (n, in_dim, out_dim) = (4, 3, 3);
    let graph = SensorGraph::from_edges(n, vec![(0, 1), (1, 2), (2, 3), (0, 3), (1, 3)])?;
    let w = rand_vec(&mut rng, out_dim * in_dim);
    let a = rand_vec(&mut rng, 2 * out_dim);
    let h = rand_vec(&mut rng, n * in_dim);
    let u = rand_vec(&mut rng, n * out_dim);

    let build = |w: &[f64], a: &[f64]| GatLayer {
        in_dim,
        out_dim,
        weight: Mat::from_vec(out_dim, in_dim, w.to_vec()).unwrap(),
        attn: a.to_vec(),
        leaky_slope: 0.2,
    };
    let layer = build(&w, &a);
    let hm = Mat::from_vec(n, in_dim, h.clone())?;
    let (_, _, cache) = gat_forward_cached(&hm, &graph, &layer)?;
    let dout = Mat::from_vec(n, out_dim, u.clone())?;
    let mut grad = GatLayer::zeros(in_dim, out_dim, 0.2);
    let dh = gat_backward(&hm, &graph, &layer, &cache, &dout, &mut grad)?;

    let mut analytic = grad.weight.data;
    analytic.extend(grad.attn);
    analytic.extend(dh.data);
    let mut theta: Vec<f64> = w.into_iter().chain(a).chain(h).collect();
    let numeric = central_diff(&mut theta, |t| {
        let (w, rest) = t.split_at(out_dim * in_dim);
        let (a, h) = rest.split_at(2 * out_dim);
        let hm = Mat::from_vec(n, in_dim, h.to_vec()).unwrap();
        let (out, _, _) = gat_forward_cached(&hm, &graph, &build(w, a)).unwrap();
        dot(&out.data, &u)
    });
    Ok(compare(&analytic, &numeric))
}

fn scenario_mean_pool(seed: u64) -> Result<(usize, f64)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (rows, cols) = (5, 4);
    let h = rand_vec(&mut rng, rows * cols);
    let u = rand_vec(&mut rng, cols);
    let analytic = mean_pool_backward(&u, rows).data;
    let mut theta = h;
    let numeric = central_diff(&mut theta, |t| {
        let m = Mat::from_vec(rows, cols, t.to_vec()).unwrap();
        dot(&mean_pool(&m).unwrap(), &u)
    });
    Ok(compare(&analytic, &numeric))
}

fn scenario_head_bce(seed: u64) -> Result<(usize, f64)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let d = 6;
    let w = rand_vec(&mut rng, d);
    let x = rand_vec(&mut rng, d);
    let b = 2.0 * rng.random::<f64>() - 1.0;
    let y = f64::from(rng.random::<f64>() < 0.5);

    // analytic: dL/dz = (p - y) for one sample, then the linear layer
    let p = dense_sigmoid(&x, &w, b)?;
    let dp = bce_grad(&[p], &[y])?[0];
    let dz = dp * p * (1.0 - p);
    let mut analytic: Vec<f64> = x.iter().map(|&xi| dz * xi).collect();
    analytic.push(dz);
    analytic.extend(w.iter().map(|&wi| dz * wi));

    let mut theta: Vec<f64> = w.iter().chain(std::iter::once(&b)).chain(&x).copied().collect();
    let numeric = central_diff(&mut theta, |t| {
        let (w, rest) = t.split_at(d);
        let p = dense_sigmoid(&rest[1..], w, rest[0]).unwrap();
        bce_loss(&[p], &[y]).unwrap()
    });
    Ok(compare(&analytic, &numeric))
}

fn full_net_setup(seed: u64) -> (ModelConfig, SensorGraph, Vec<GaitCycleSample>, Vec<f64>) {
    let config = ModelConfig {
        n_nodes: 4,
        seq_len: 10,
        kernel: 3,
        conv_channels: vec![2, 2],
        gru_hidden: 3,
        gru_layers: 2,
        gat_hidden: 3,
        gat_layers: 2,
        dropout: 0.2,
        leaky_slope: 0.2,
    };
    let graph = SensorGraph::from_edges(4, vec![(0, 1), (1, 2), (2, 3), (0, 2)]).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
    let mut batch = Vec::new();
    let mut labels = Vec::new();
    for i in 0..2 {
        let features = (0..config.n_nodes)
            .map(|_| rand_vec(&mut rng, config.seq_len))
            .collect();
        batch.push(GaitCycleSample {
            subject_id: format!("g{i}"),
            cycle_index: i,
            label: (i % 2) as u8,
            features,
        });
        labels.push((i % 2) as f64);
    }
    (config, graph, batch, labels)
}

/// Full network with live dropout under a fixed mask seed: the same masks are
/// replayed for every finite-difference evaluation.
fn scenario_full_network(seed: u64) -> Result<(usize, f64)> {
    let (config, graph, batch, labels) = full_net_setup(seed);
    let params = ModelParams::init(&config, seed)?;
    let mode = Mode::Train { dropout_seed: seed.wrapping_add(99), stream_base: 0 };

    let pass = forward(&params, &batch, &graph, mode)?;
    let dprobs = bce_grad(&pass.probs, &labels)?;
    let grads = backward(&params, &pass, &dprobs, &graph)?;
    let mut analytic = Vec::new();
    grads.for_each_array(|_, a| analytic.extend_from_slice(a));

    let mut theta = Vec::new();
    params.for_each_array(|_, a| theta.extend_from_slice(a));
    let numeric = central_diff(&mut theta, |t| {
        let mut p = params.clone();
        let mut pos = 0;
        p.for_each_array_mut(|_, a| {
            a.copy_from_slice(&t[pos..pos + a.len()]);
            pos += a.len();
        });
        let pass = forward(&p, &batch, &graph, mode).unwrap();
        bce_loss(&pass.probs, &labels).unwrap()
    });
    Ok(compare(&analytic, &numeric))
}

/// Inference path sanity: dropout off, gradient through `forward_explain`'s
/// probability must match the training-mode gradient with p = 0.
fn scenario_full_network_no_dropout(seed: u64) -> Result<(usize, f64)> {
    let (mut config, graph, batch, labels) = full_net_setup(seed);
    config.dropout = 0.0;
    let params = ModelParams::init(&config, seed)?;
    let mode = Mode::Train { dropout_seed: 0, stream_base: 0 };

    let pass = forward(&params, &batch, &graph, mode)?;
    let dprobs = bce_grad(&pass.probs, &labels)?;
    let grads = backward(&params, &pass, &dprobs, &graph)?;
    let mut analytic = Vec::new();
    grads.for_each_array(|_, a| analytic.extend_from_slice(a));

    let mut theta = Vec::new();
    params.for_each_array(|_, a| theta.extend_from_slice(a));
    let numeric = central_diff(&mut theta, |t| {
        let mut p = params.clone();
        let mut pos = 0;
        p.for_each_array_mut(|_, a| {
            a.copy_from_slice(&t[pos..pos + a.len()]);
            pos += a.len();
        });
        let probs: Vec<f64> = batch
            .iter()
            .map(|s| forward_explain(&p, &s.features, &graph).unwrap().prob)
            .collect();
        bce_loss(&probs, &labels).unwrap()
    });
    Ok(compare(&analytic, &numeric))
}

// ── Driver ──────────────────────────────────────────────────────────────────

/// Runs every scenario under `seeds_per_layer` seeds and collects a report.
pub fn run_gradient_checks(seeds_per_layer: u64) -> Result<GradCheckReport> {
    if seeds_per_layer == 0 {
        return Err(Error::Config("gradient check needs at least one seed".into()));
    }
    type Scenario = (&'static str, fn(u64) -> Result<(usize, f64)>);
    let scenarios: Vec<Scenario> = vec![
        ("conv1d", scenario_conv),
        ("gru_step", |s| scenario_gru(s, vec![(3, 4)], 1)),
        ("gru_sequence", |s| scenario_gru(s, vec![(3, 4), (4, 4)], 4)),
        ("gat", scenario_gat),
        ("mean_pool", scenario_mean_pool),
        ("dense_sigmoid_bce", scenario_head_bce),
        ("full_network_dropout", scenario_full_network),
        ("full_network", scenario_full_network_no_dropout),
    ];
    let mut entries = Vec::new();
    let mut passed = true;
    for (name, run) in scenarios {
        for seed in 0..seeds_per_layer {
            let (checked, max_rel_err) = run(seed * 7919 + 1)?;
            let ok = max_rel_err <= REL_TOLERANCE;
            passed &= ok;
            entries.push(GradCheckEntry {
                layer: name.to_string(),
                seed: seed * 7919 + 1,
                checked,
                max_rel_err,
                passed: ok,
            });
        }
    }
    Ok(GradCheckReport {
        step: FD_STEP,
        tolerance: REL_TOLERANCE,
        seeds_per_layer,
        entries,
        passed,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn relative_error_ignores_double_zeros() {
        assert_eq!(rel_err(0.0, 0.0), 0.0);
        assert_eq!(rel_err(5e-8, -5e-8), 0.0);
        assert!(rel_err(1.0, 1.1) > 0.09);
    }

    #[test]
    fn central_diff_of_quadratic() {
        let mut theta = vec![3.0, -2.0];
        let d = central_diff(&mut theta, |t| t[0] * t[0] + 4.0 * t[1]);
        assert!((d[0] - 6.0).abs() < 1e-6);
        assert!((d[1] - 4.0).abs() < 1e-6);
    }

    #[test]
    fn rejects_zero_seeds() {
        assert!(run_gradient_checks(0).is_err());
    }
}
