//! The full classifier: per-sensor convolutions, a stacked GRU per sensor, a
//! stack of graph-attention layers over the sensor graph, mean pooling, and a
//! dense sigmoid head.
//!
//! Every parameter lives in a flat f64 array and every array has a stable
//! name, so the optimiser and the checkpoint format can walk the model
//! without knowing its structure.
//!
//! Training memory is bounded per sample, not per batch: the training loop
//! runs forward and backward one sample at a time and accumulates gradients,
//! so the activation cache never holds more than one sample. The batch-level
//! [`forward`]/[`backward`] pair keeps the caches of the whole batch alive
//! and is what the gradient checker and small-batch tests use.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::neuralcore::conv::{conv1d_backward, conv1d_forward, ConvLayer};
use crate::neuralcore::gat::{gat_backward, gat_forward_cached, Attention, GatCache, GatLayer};
use crate::neuralcore::gru::{gru_sequence_backward, gru_sequence_cached, GruLayer, GruSeqCache};
use crate::neuralcore::layers::{dense_sigmoid, dropout_mask, mean_pool, mean_pool_backward};
use crate::neuralcore::math::Mat;
use crate::preprocess::{GaitCycleSample, SensorGraph};
use crate::{Error, Result};

// ── Configuration ───────────────────────────────────────────────────────────

/// Architecture hyperparameters. The defaults are the reference dimensions:
/// 8 sensors, 160-step cycles, three kernel-3 convolutions (160 -> 158 ->
/// 156 -> 154), two GRU layers of 256, two attention layers of 256.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub n_nodes: usize,
    pub seq_len: usize,
    pub kernel: usize,
    pub conv_channels: Vec<usize>,
    pub gru_hidden: usize,
    pub gru_layers: usize,
    pub gat_hidden: usize,
    pub gat_layers: usize,
    pub dropout: f64,
    pub leaky_slope: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            n_nodes: 8,
            seq_len: 160,
            kernel: 3,
            conv_channels: vec![32, 32, 32],
            gru_hidden: 256,
            gru_layers: 2,
            gat_hidden: 256,
            gat_layers: 2,
            dropout: 0.2,
            leaky_slope: 0.2,
        }
    }
}

impl ModelConfig {
    /// Time-axis length after the convolution stack.
    pub fn conv_out_len(&self) -> usize {
        self.seq_len - self.conv_channels.len() * (self.kernel - 1)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        if self.n_nodes == 0 {
            return bad("model needs at least one node".into());
        }
        if self.kernel == 0 {
            return bad("kernel size must be positive".into());
        }
        if self.conv_channels.is_empty() || self.conv_channels.iter().any(|&c| c == 0) {
            return bad("conv_channels must be non-empty and positive".into());
        }
        let shrink = self.conv_channels.len() * (self.kernel - 1);
        if self.seq_len <= shrink {
            return bad(format!(
                "sequence length {} collapses under {} convolution layers of kernel {}",
                self.seq_len,
                self.conv_channels.len(),
                self.kernel
            ));
        }
        if self.gru_hidden == 0 || self.gru_layers == 0 {
            return bad("gru stack must have positive depth and width".into());
        }
        if self.gat_hidden == 0 || self.gat_layers == 0 {
            return bad("attention stack must have positive depth and width".into());
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return bad(format!("dropout {} outside [0, 1)", self.dropout));
        }
        if !self.leaky_slope.is_finite() || self.leaky_slope < 0.0 {
            return bad(format!("leaky slope {} must be finite and non-negative", self.leaky_slope));
        }
        Ok(())
    }
}

// ── Parameters ──────────────────────────────────────────────────────────────

#[derive(Debug, Clone, PartialEq)]
pub struct DenseLayer {
    pub weight: Vec<f64>,
    /// Single-element bias, kept as a slice so the optimiser can walk it.
    pub bias: Vec<f64>,
}

/// All trainable parameters plus the architecture they belong to.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub config: ModelConfig,
    pub conv: Vec<ConvLayer>,
    pub gru: Vec<GruLayer>,
    pub gat: Vec<GatLayer>,
    pub head: DenseLayer,
}

impl ModelParams {
    /// All-zero parameters; also the shape of a gradient accumulator.
    pub fn zeros(config: &ModelConfig) -> Result<Self> {
        config.validate()?;
        let mut conv = Vec::new();
        let mut in_ch = 1;
        for &out_ch in &config.conv_channels {
            conv.push(ConvLayer::zeros(in_ch, out_ch, config.kernel));
            in_ch = out_ch;
        }
        let mut gru = Vec::new();
        let mut input = *config.conv_channels.last().unwrap();
        for _ in 0..config.gru_layers {
            gru.push(GruLayer::zeros(input, config.gru_hidden));
            input = config.gru_hidden;
        }
        let mut gat = Vec::new();
        let mut dim = config.gru_hidden;
        for _ in 0..config.gat_layers {
            gat.push(GatLayer::zeros(dim, config.gat_hidden, config.leaky_slope));
            dim = config.gat_hidden;
        }
        let head = DenseLayer { weight: vec![0.0; config.gat_hidden], bias: vec![0.0] };
        Ok(ModelParams { config: config.clone(), conv, gru, gat, head })
    }

    /// Fan-based uniform init (`+-sqrt(6 / (fan_in + fan_out))`), biases zero.
    /// Arrays are filled in declaration order from one seeded stream, so a
    /// seed pins every parameter bit.
    pub fn init(config: &ModelConfig, seed: u64) -> Result<Self> {
        let mut params = ModelParams::zeros(config)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut fill = |buf: &mut [f64], fan_in: usize, fan_out: usize| {
            let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
            for v in buf {
                *v = bound * (2.0 * rng.random::<f64>() - 1.0);
            }
        };
        for layer in &mut params.conv {
            let (fi, fo) = (layer.in_ch * layer.kernel, layer.out_ch * layer.kernel);
            fill(&mut layer.weight, fi, fo);
        }
        for layer in &mut params.gru {
            let (fi, fo) = (layer.hidden + layer.input, layer.hidden);
            fill(&mut layer.w_update.data, fi, fo);
            fill(&mut layer.w_reset.data, fi, fo);
            fill(&mut layer.w_cand.data, fi, fo);
        }
        for layer in &mut params.gat {
            fill(&mut layer.weight.data, layer.in_dim, layer.out_dim);
            let n_attn = layer.attn.len();
            fill(&mut layer.attn, n_attn, 1);
        }
        let d = params.head.weight.len();
        fill(&mut params.head.weight, d, 1);
        Ok(params)
    }

    /// Visits every parameter array as `(name, values)` in a fixed order.
    pub fn for_each_array<'a>(&'a self, mut f: impl FnMut(&str, &'a [f64])) {
        for (i, layer) in self.conv.iter().enumerate() {
            f(&format!("conv{i}.weight"), &layer.weight);
            f(&format!("conv{i}.bias"), &layer.bias);
        }
        for (i, layer) in self.gru.iter().enumerate() {
            f(&format!("gru{i}.w_update"), &layer.w_update.data);
            f(&format!("gru{i}.w_reset"), &layer.w_reset.data);
            f(&format!("gru{i}.w_cand"), &layer.w_cand.data);
            f(&format!("gru{i}.b_update"), &layer.b_update);
            f(&format!("gru{i}.b_reset"), &layer.b_reset);
            f(&format!("gru{i}.b_cand"), &layer.b_cand);
        }
        for (i, layer) in self.gat.iter().enumerate() {
            f(&format!("gat{i}.weight"), &layer.weight.data);
            f(&format!("gat{i}.attn"), &layer.attn);
        }
        f("head.weight", &self.head.weight);
        f("head.bias", &self.head.bias);
    }

    /// Mutable variant of [`for_each_array`], same order.
    pub fn for_each_array_mut(&mut self, mut f: impl FnMut(&str, &mut [f64])) {
        for (i, layer) in self.conv.iter_mut().enumerate() {
            f(&format!("conv{i}.weight"), &mut layer.weight);
            f(&format!("conv{i}.bias"), &mut layer.bias);
        }
        for (i, layer) in self.gru.iter_mut().enumerate() {
            f(&format!("gru{i}.w_update"), &mut layer.w_update.data);
            f(&format!("gru{i}.w_reset"), &mut layer.w_reset.data);
            f(&format!("gru{i}.w_cand"), &mut layer.w_cand.data);
            f(&format!("gru{i}.b_update"), &mut layer.b_update);
            f(&format!("gru{i}.b_reset"), &mut layer.b_reset);
            f(&format!("gru{i}.b_cand"), &mut layer.b_cand);
        }
        for (i, layer) in self.gat.iter_mut().enumerate() {
            f(&format!("gat{i}.weight"), &mut layer.weight.data);
            f(&format!("gat{i}.attn"), &mut layer.attn);
        }
        f("head.weight", &mut self.head.weight);
        f("head.bias", &mut self.head.bias);
    }

    pub fn param_count(&self) -> usize {
        let mut n = 0;
        self.for_each_array(|_, a| n += a.len());
        n
    }
}

/// Expected `(name, shape)` list for a config, in [`ModelParams::for_each_array`]
/// order. The checkpoint format validates against this.
pub fn array_specs(config: &ModelConfig) -> Vec<(String, Vec<usize>)> {
    let mut specs = Vec::new();
    let mut in_ch = 1;
    for (i, &out_ch) in config.conv_channels.iter().enumerate() {
        specs.push((format!("conv{i}.weight"), vec![out_ch, in_ch, config.kernel]));
        specs.push((format!("conv{i}.bias"), vec![out_ch]));
        in_ch = out_ch;
    }
    let mut input = *config.conv_channels.last().unwrap();
    for i in 0..config.gru_layers {
        let h = config.gru_hidden;
        for gate in ["w_update", "w_reset", "w_cand"] {
            specs.push((format!("gru{i}.{gate}"), vec![h, h + input]));
        }
        for gate in ["b_update", "b_reset", "b_cand"] {
            specs.push((format!("gru{i}.{gate}"), vec![h]));
        }
        input = h;
    }
    let mut dim = config.gru_hidden;
    for i in 0..config.gat_layers {
        specs.push((format!("gat{i}.weight"), vec![config.gat_hidden, dim]));
        specs.push((format!("gat{i}.attn"), vec![2 * config.gat_hidden]));
        dim = config.gat_hidden;
    }
    specs.push(("head.weight".into(), vec![1, config.gat_hidden]));
    specs.push(("head.bias".into(), vec![1]));
    specs
}

// ── Dropout masks ───────────────────────────────────────────────────────────

/// Per-sample dropout masks, one per dropout site: after the convolution
/// stack (per node), after the GRU output, and after each attention layer.
#[derive(Debug, Clone)]
pub(crate) struct SampleMasks {
    pub conv: Vec<Vec<f64>>,
    pub gru: Vec<f64>,
    pub gat: Vec<Vec<f64>>,
}

pub(crate) fn sample_masks(config: &ModelConfig, seed: u64, stream: u64) -> Result<SampleMasks> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    let p = config.dropout;
    let conv_len = config.conv_channels.last().unwrap() * config.conv_out_len();
    let mut conv = Vec::with_capacity(config.n_nodes);
    for _ in 0..config.n_nodes {
        conv.push(dropout_mask(conv_len, p, &mut rng)?);
    }
    let gru = dropout_mask(config.n_nodes * config.gru_hidden, p, &mut rng)?;
    let mut gat = Vec::with_capacity(config.gat_layers);
    for _ in 0..config.gat_layers {
        gat.push(dropout_mask(config.n_nodes * config.gat_hidden, p, &mut rng)?);
    }
    Ok(SampleMasks { conv, gru, gat })
}

// ── Forward ─────────────────────────────────────────────────────────────────

/// Whether dropout is live. Training draws per-sample masks from
/// `seed` with stream `stream_base + index_in_batch`, so a (seed, stream)
/// pair pins the whole batch's masks.
#[derive(Debug, Clone, Copy)]
pub enum Mode {
    Infer,
    Train { dropout_seed: u64, stream_base: u64 },
}

/// Activations one backward pass needs, for a single sample.
pub(crate) struct SampleCache {
    conv_inputs: Vec<Vec<Mat>>,
    gru_caches: Vec<GruSeqCache>,
    gat_inputs: Vec<Mat>,
    gat_caches: Vec<GatCache>,
    pooled: Vec<f64>,
    prob: f64,
    masks: SampleMasks,
}

/// Output of a batched forward pass. `caches` is populated only in training
/// mode; [`backward`] refuses to run without it.
pub struct ForwardPass {
    pub probs: Vec<f64>,
    pub(crate) caches: Option<Vec<SampleCache>>,
}

struct RunOutput {
    prob: f64,
    attentions: Vec<Attention>,
    node_embeddings: Mat,
    cache: Option<SampleCache>,
}

fn check_features(config: &ModelConfig, feats: &[Vec<f64>]) -> Result<()> {
    if feats.len() != config.n_nodes {
        return Err(Error::Shape(format!(
            "sample has {} node series, model expects {}",
            feats.len(),
            config.n_nodes
        )));
    }
    for (i, row) in feats.iter().enumerate() {
        if row.len() != config.seq_len {
            return Err(Error::Shape(format!(
                "node {i} series has {} steps, model expects {}",
                row.len(),
                config.seq_len
            )));
        }
    }
    Ok(())
}

fn apply_mask(data: &mut [f64], mask: &[f64]) {
    for (v, m) in data.iter_mut().zip(mask) {
        *v *= m;
    }
}

fn run_sample(
    params: &ModelParams,
    feats: &[Vec<f64>],
    graph: &SensorGraph,
    masks: Option<SampleMasks>,
    keep_cache: bool,
) -> Result<RunOutput> {
    let config = &params.config;
    check_features(config, feats)?;
    if graph.n_nodes != config.n_nodes {
        return Err(Error::Shape(format!(
            "graph has {} nodes, model expects {}",
            graph.n_nodes, config.n_nodes
        )));
    }

    let n = config.n_nodes;
    let h = config.gru_hidden;
    let mut conv_inputs: Vec<Vec<Mat>> = Vec::with_capacity(if keep_cache { n } else { 0 });
    let mut gru_caches: Vec<GruSeqCache> = Vec::with_capacity(if keep_cache { n } else { 0 });
    let mut h_gru = Mat::zeros(n, h);

    for node in 0..n {
        // convolution stack over this node's series
        let mut x = Mat::from_vec(1, config.seq_len, feats[node].clone())?;
        let mut inputs = Vec::with_capacity(params.conv.len());
        for layer in &params.conv {
            let y = conv1d_forward(&x, layer)?;
            inputs.push(std::mem::replace(&mut x, y));
        }
        if let Some(m) = masks.as_ref() {
            apply_mask(&mut x.data, &m.conv[node]);
        }
        // transpose to a per-step feature sequence for the GRU
        let t_len = x.cols;
        let mut xs = vec![vec![0.0; x.rows]; t_len];
        for c in 0..x.rows {
            let row = x.row(c);
            for (t, xt) in xs.iter_mut().enumerate() {
                xt[c] = row[t];
            }
        }
        let cache = gru_sequence_cached(&params.gru, &xs)?;
        h_gru
            .row_mut(node)
            .copy_from_slice(&cache.steps.last().unwrap().last().unwrap().h);
        if keep_cache {
            conv_inputs.push(inputs);
            gru_caches.push(cache);
        }
    }

    if let Some(m) = masks.as_ref() {
        apply_mask(&mut h_gru.data, &m.gru);
    }

    // attention stack over the sensor graph
    let mut gat_inputs = Vec::with_capacity(if keep_cache { params.gat.len() } else { 0 });
    let mut gat_caches = Vec::with_capacity(if keep_cache { params.gat.len() } else { 0 });
    let mut attentions = Vec::with_capacity(params.gat.len());
    let mut hx = h_gru;
    for (li, layer) in params.gat.iter().enumerate() {
        let (mut out, att, cache) = gat_forward_cached(&hx, graph, layer)?;
        if let Some(m) = masks.as_ref() {
            apply_mask(&mut out.data, &m.gat[li]);
        }
        attentions.push(att);
        if keep_cache {
            gat_inputs.push(std::mem::replace(&mut hx, out));
            gat_caches.push(cache);
        } else {
            hx = out;
        }
    }

    let pooled = mean_pool(&hx)?;
    let prob = dense_sigmoid(&pooled, &params.head.weight, params.head.bias[0])?;

    let cache = if keep_cache {
        Some(SampleCache {
            conv_inputs,
            gru_caches,
            gat_inputs,
            gat_caches,
            pooled: pooled.clone(),
            prob,
            masks: masks.unwrap_or(SampleMasks { conv: Vec::new(), gru: Vec::new(), gat: Vec::new() }),
        })
    } else {
        None
    };
    Ok(RunOutput { prob, attentions, node_embeddings: hx, cache })
}

/// Runs the network over a batch. In training mode dropout is live and the
/// activation caches for the whole batch are retained for [`backward`].
pub fn forward(
    params: &ModelParams,
    batch: &[GaitCycleSample],
    graph: &SensorGraph,
    mode: Mode,
) -> Result<ForwardPass> {
    if batch.is_empty() {
        return Err(Error::Shape("forward over an empty batch".into()));
    }
    let mut probs = Vec::with_capacity(batch.len());
    match mode {
        Mode::Infer => {
            for sample in batch {
                let out = run_sample(params, &sample.features, graph, None, false)?;
                probs.push(out.prob);
            }
            Ok(ForwardPass { probs, caches: None })
        }
        Mode::Train { dropout_seed, stream_base } => {
            let mut caches = Vec::with_capacity(batch.len());
            for (i, sample) in batch.iter().enumerate() {
                let masks = sample_masks(&params.config, dropout_seed, stream_base + i as u64)?;
                let out = run_sample(params, &sample.features, graph, Some(masks), true)?;
                probs.push(out.prob);
                caches.push(out.cache.unwrap());
            }
            Ok(ForwardPass { probs, caches: Some(caches) })
        }
    }
}

/// Inference-only convenience: probabilities with dropout off.
pub fn predict(
    params: &ModelParams,
    batch: &[GaitCycleSample],
    graph: &SensorGraph,
) -> Result<Vec<f64>> {
    Ok(forward(params, batch, graph, Mode::Infer)?.probs)
}

/// Everything the attention-based explanation needs for one sample.
pub struct Explanation {
    pub prob: f64,
    /// Attention coefficients from every layer, in stack order.
    pub attentions: Vec<Attention>,
    /// Final-layer node embeddings, `[n_nodes x gat_hidden]`.
    pub node_embeddings: Mat,
}

pub fn forward_explain(
    params: &ModelParams,
    feats: &[Vec<f64>],
    graph: &SensorGraph,
) -> Result<Explanation> {
    let out = run_sample(params, feats, graph, None, false)?;
    Ok(Explanation { prob: out.prob, attentions: out.attentions, node_embeddings: out.node_embeddings })
}

// ── Backward ────────────────────────────────────────────────────────────────

fn backward_sample(
    params: &ModelParams,
    cache: &SampleCache,
    dprob: f64,
    graph: &SensorGraph,
    grads: &mut ModelParams,
) -> Result<()> {
    let config = &params.config;
    let n = config.n_nodes;
    let p = cache.prob;
    let dz = dprob * p * (1.0 - p);

    // head
    grads.head.bias[0] += dz;
    for (gw, &x) in grads.head.weight.iter_mut().zip(&cache.pooled) {
        *gw += dz * x;
    }
    let dpooled: Vec<f64> = params.head.weight.iter().map(|&w| dz * w).collect();

    // pooling, then the attention stack top-down
    let mut dh = mean_pool_backward(&dpooled, n);
    for li in (0..params.gat.len()).rev() {
        apply_mask(&mut dh.data, &cache.masks.gat[li]);
        dh = gat_backward(
            &cache.gat_inputs[li],
            graph,
            &params.gat[li],
            &cache.gat_caches[li],
            &dh,
            &mut grads.gat[li],
        )?;
    }
    apply_mask(&mut dh.data, &cache.masks.gru);

    // per-node GRU stacks and convolution stacks
    for node in 0..n {
        let dxs = gru_sequence_backward(
            &params.gru,
            &cache.gru_caches[node],
            dh.row(node),
            &mut grads.gru,
        )?;
        // back to [channels x steps], through the conv-output dropout
        let ch = *config.conv_channels.last().unwrap();
        let t_len = config.conv_out_len();
        let mut dy = Mat::zeros(ch, t_len);
        for (t, dx) in dxs.iter().enumerate() {
            for c in 0..ch {
                *dy.at_mut(c, t) = dx[c];
            }
        }
        apply_mask(&mut dy.data, &cache.masks.conv[node]);
        for li in (0..params.conv.len()).rev() {
            dy = conv1d_backward(
                &cache.conv_inputs[node][li],
                &params.conv[li],
                &dy,
                &mut grads.conv[li],
            )?;
        }
    }
    Ok(())
}

/// Accumulates parameter gradients for a batch given `dL/dprob` per sample.
/// Requires the caches from a training-mode [`forward`] on the same batch
/// and graph.
pub fn backward(
    params: &ModelParams,
    pass: &ForwardPass,
    dprobs: &[f64],
    graph: &SensorGraph,
) -> Result<ModelParams> {
    let caches = pass.caches.as_ref().ok_or_else(|| {
        Error::Train("backward needs the cached activations of a training-mode forward".into())
    })?;
    if dprobs.len() != caches.len() {
        return Err(Error::Shape(format!(
            "{} output gradients for a batch of {}",
            dprobs.len(),
            caches.len()
        )));
    }
    let mut grads = ModelParams::zeros(&params.config)?;
    for (cache, &dp) in caches.iter().zip(dprobs) {
        backward_sample(params, cache, dp, graph, &mut grads)?;
    }
    Ok(grads)
}

/// Fused per-sample forward/backward for one training batch: same math as
/// [`forward`] + [`backward`], but only one sample's activations are alive
/// at a time. Returns probabilities and accumulated gradients.
pub fn forward_backward_batch(
    params: &ModelParams,
    batch: &[GaitCycleSample],
    graph: &SensorGraph,
    dropout_seed: u64,
    stream_base: u64,
    dprob_of: impl Fn(usize, f64) -> f64,
) -> Result<(Vec<f64>, ModelParams)> {
    if batch.is_empty() {
        return Err(Error::Shape("forward over an empty batch".into()));
    }
    let mut probs = Vec::with_capacity(batch.len());
    let mut grads = ModelParams::zeros(&params.config)?;
    for (i, sample) in batch.iter().enumerate() {
        let masks = sample_masks(&params.config, dropout_seed, stream_base + i as u64)?;
        let out = run_sample(params, &sample.features, graph, Some(masks), true)?;
        let cache = out.cache.unwrap();
        let dp = dprob_of(i, out.prob);
        backward_sample(params, &cache, dp, graph, &mut grads)?;
        probs.push(out.prob);
    }
    Ok((probs, grads))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny_config() -> ModelConfig {
        ModelConfig {
            n_nodes: 4,
            seq_len: 12,
            kernel: 3,
            conv_channels: vec![3, 3],
            gru_hidden: 5,
            gru_layers: 2,
            gat_hidden: 6,
            gat_layers: 2,
            dropout: 0.2,
            leaky_slope: 0.2,
        }
    }

    fn tiny_graph() -> SensorGraph {
        SensorGraph::from_edges(4, vec![(0, 1), (1, 2), (2, 3), (0, 3)]).unwrap()
    }

    fn tiny_sample(seed: u64, cfg: &ModelConfig) -> GaitCycleSample {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let features = (0..cfg.n_nodes)
            .map(|_| (0..cfg.seq_len).map(|_| rng.random::<f64>()).collect())
            .collect();
        GaitCycleSample {
            subject_id: format!("s{seed}"),
            cycle_index: 0,
            label: (seed % 2) as u8,
            features,
        }
    }

    #[test]
    fn reference_parameter_count() {
        let params = ModelParams::zeros(&ModelConfig::default()).unwrap();
        assert_eq!(params.param_count(), 754_625);
    }

    #[test]
    fn component_parameter_counts() {
        let head = DenseLayer { weight: vec![0.0; 256], bias: vec![0.0] };
        assert_eq!(head.weight.len() + head.bias.len(), 257);
        let gru = crate::neuralcore::gru::GruLayer::zeros(256, 256);
        let n = gru.w_update.data.len()
            + gru.w_reset.data.len()
            + gru.w_cand.data.len()
            + gru.b_update.len()
            + gru.b_reset.len()
            + gru.b_cand.len();
        assert_eq!(n, 3 * (256 * 512 + 256));
        assert_eq!(n, 393_984);
    }

    #[test]
    fn init_is_seed_deterministic() {
        let cfg = tiny_config();
        let a = ModelParams::init(&cfg, 42).unwrap();
        let b = ModelParams::init(&cfg, 42).unwrap();
        assert_eq!(a, b);
        let c = ModelParams::init(&cfg, 43).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn init_biases_are_zero_and_weights_bounded() {
        let params = ModelParams::init(&tiny_config(), 7).unwrap();
        assert!(params.conv.iter().all(|l| l.bias.iter().all(|&b| b == 0.0)));
        assert!(params.gru.iter().all(|l| l.b_update.iter().all(|&b| b == 0.0)));
        assert_eq!(params.head.bias[0], 0.0);
        let bound = (6.0 / (params.head.weight.len() + 1) as f64).sqrt();
        assert!(params.head.weight.iter().all(|w| w.abs() <= bound));
    }

    #[test]
    fn array_specs_match_traversal() {
        let cfg = tiny_config();
        let params = ModelParams::zeros(&cfg).unwrap();
        let specs = array_specs(&cfg);
        let mut seen = Vec::new();
        params.for_each_array(|name, a| seen.push((name.to_string(), a.len())));
        assert_eq!(specs.len(), seen.len());
        for ((sn, shape), (n, len)) in specs.iter().zip(&seen) {
            assert_eq!(sn, n);
            assert_eq!(shape.iter().product::<usize>(), *len);
        }
    }

    #[test]
    fn forward_gives_probabilities() {
        let cfg = tiny_config();
        let params = ModelParams::init(&cfg, 1).unwrap();
        let graph = tiny_graph();
        let batch = vec![tiny_sample(1, &cfg), tiny_sample(2, &cfg)];
        let pass = forward(&params, &batch, &graph, Mode::Infer).unwrap();
        assert_eq!(pass.probs.len(), 2);
        assert!(pass.probs.iter().all(|p| (0.0..1.0).contains(p) && p.is_finite()));
    }

    #[test]
    fn forward_rejects_bad_shapes() {
        let cfg = tiny_config();
        let params = ModelParams::init(&cfg, 1).unwrap();
        let graph = tiny_graph();
        let mut sample = tiny_sample(1, &cfg);
        sample.features[2].pop();
        assert!(forward(&params, &[sample], &graph, Mode::Infer).is_err());
        let bigger = SensorGraph::from_edges(5, vec![(0, 1)]).unwrap();
        assert!(forward(&params, &[tiny_sample(1, &cfg)], &bigger, Mode::Infer).is_err());
    }

    #[test]
    fn backward_without_training_forward_errors() {
        let cfg = tiny_config();
        let params = ModelParams::init(&cfg, 1).unwrap();
        let graph = tiny_graph();
        let pass = forward(&params, &[tiny_sample(1, &cfg)], &graph, Mode::Infer).unwrap();
        let err = backward(&params, &pass, &[0.1], &graph);
        assert!(matches!(err, Err(Error::Train(_))));
    }

    #[test]
    fn train_mode_without_dropout_matches_inference() {
        let mut cfg = tiny_config();
        cfg.dropout = 0.0;
        let params = ModelParams::init(&cfg, 5).unwrap();
        let graph = tiny_graph();
        let batch = vec![tiny_sample(3, &cfg), tiny_sample(4, &cfg)];
        let infer = forward(&params, &batch, &graph, Mode::Infer).unwrap();
        let train = forward(
            &params,
            &batch,
            &graph,
            Mode::Train { dropout_seed: 9, stream_base: 0 },
        )
        .unwrap();
        assert_eq!(infer.probs, train.probs);
    }

    #[test]
    fn dropout_masks_are_reproducible_and_distinct_per_stream() {
        let cfg = tiny_config();
        let a = sample_masks(&cfg, 11, 0).unwrap();
        let b = sample_masks(&cfg, 11, 0).unwrap();
        assert_eq!(a.gru, b.gru);
        assert_eq!(a.conv, b.conv);
        let c = sample_masks(&cfg, 11, 1).unwrap();
        assert_ne!(a.gru, c.gru);
    }

    #[test]
    fn fused_batch_matches_forward_backward() {
        let cfg = tiny_config();
        let params = ModelParams::init(&cfg, 21).unwrap();
        let graph = tiny_graph();
        let batch = vec![tiny_sample(6, &cfg), tiny_sample(7, &cfg), tiny_sample(8, &cfg)];
        let labels = [1.0, 0.0, 1.0];

        let pass = forward(
            &params,
            &batch,
            &graph,
            Mode::Train { dropout_seed: 3, stream_base: 10 },
        )
        .unwrap();
        let n = batch.len() as f64;
        let dprobs: Vec<f64> = pass
            .probs
            .iter()
            .zip(&labels)
            .map(|(&p, &y)| (p - y) / (n * p * (1.0 - p)))
            .collect();
        let g1 = backward(&params, &pass, &dprobs, &graph).unwrap();

        let (probs2, g2) = forward_backward_batch(&params, &batch, &graph, 3, 10, |i, p| {
            (p - labels[i]) / (n * p * (1.0 - p))
        })
        .unwrap();
        assert_eq!(pass.probs, probs2);
        let mut arrays1 = Vec::new();
        g1.for_each_array(|_, a| arrays1.push(a.to_vec()));
        let mut idx = 0;
        g2.for_each_array(|name, a| {
            assert_eq!(a, arrays1[idx].as_slice(), "array {name} differs");
            idx += 1;
        });
    }

    #[test]
    fn batch_gradient_is_sum_of_single_sample_gradients() {
        let mut cfg = tiny_config();
        cfg.dropout = 0.0; // same masks either way, keeps the comparison exact
        let params = ModelParams::init(&cfg, 31).unwrap();
        let graph = tiny_graph();
        let s1 = tiny_sample(11, &cfg);
        let s2 = tiny_sample(12, &cfg);

        let run = |batch: &[GaitCycleSample], dps: &[f64]| {
            let pass = forward(
                &params,
                batch,
                &graph,
                Mode::Train { dropout_seed: 0, stream_base: 0 },
            )
            .unwrap();
            backward(&params, &pass, dps, &graph).unwrap()
        };
        let g_both = run(&[s1.clone(), s2.clone()], &[0.3, -0.7]);
        let g1 = run(std::slice::from_ref(&s1), &[0.3]);
        let g2 = run(std::slice::from_ref(&s2), &[-0.7]);

        let flat = |g: &ModelParams| {
            let mut v = Vec::new();
            g.for_each_array(|_, a| v.extend_from_slice(a));
            v
        };
        let both = flat(&g_both);
        let sum: Vec<f64> = flat(&g1).iter().zip(flat(&g2)).map(|(a, b)| a + b).collect();
        for (a, b) in both.iter().zip(&sum) {
            assert!((a - b).abs() <= 1e-12 * a.abs().max(b.abs()).max(1.0));
        }
    }

    #[test]
    fn consistent_node_relabeling_preserves_outputs_bitwise() {
        let mut cfg = tiny_config();
        cfg.dropout = 0.0;
        let params = ModelParams::init(&cfg, 13).unwrap();
        let pi = [2usize, 0, 3, 1];
        let edges = [(0usize, 1usize), (1, 2), (2, 3), (0, 3)];
        let g1 = SensorGraph::from_edges(4, edges.to_vec()).unwrap();
        let g2 = SensorGraph::from_edges(
            4,
            edges.iter().map(|&(a, b)| (pi[a], pi[b])).collect(),
        )
        .unwrap();

        let s = tiny_sample(17, &cfg);
        let mut permuted = s.clone();
        for i in 0..4 {
            permuted.features[pi[i]] = s.features[i].clone();
        }
        let p1 = predict(&params, &[s], &g1).unwrap();
        let p2 = predict(&params, &[permuted], &g2).unwrap();
        assert_eq!(p1[0].to_bits(), p2[0].to_bits());
    }
}
