//! Gated recurrent units, stacked, consuming a per-node feature sequence and
//! exposing the final hidden state. Gate algebra:
//!
//! ```text
//! z_t = sigmoid(Wz . [h_{t-1}, x_t] + bz)        update gate
//! r_t = sigmoid(Wr . [h_{t-1}, x_t] + br)        reset gate
//! c_t = tanh(Wc . [r_t * h_{t-1}, x_t] + bc)     candidate state
//! h_t = (1 - z_t) * h_{t-1} + z_t * c_t
//! ```
//!
//! Concatenation order is previous hidden state first, then input. The
//! backward pass is plain BPTT over cached gate activations.

use crate::neuralcore::math::{sigmoid, Mat};
use crate::{Error, Result};

// ── Parameters ──────────────────────────────────────────────────────────────

/// One GRU layer; each weight matrix is `[hidden x (hidden + input)]`.
#[derive(Debug, Clone, PartialEq)]
pub struct GruLayer {
    pub input: usize,
    pub hidden: usize,
    pub w_update: Mat,
    pub w_reset: Mat,
    pub w_cand: Mat,
    pub b_update: Vec<f64>,
    pub b_reset: Vec<f64>,
    pub b_cand: Vec<f64>,
}

impl GruLayer {
    pub fn zeros(input: usize, hidden: usize) -> Self {
        let cat = hidden + input;
        GruLayer {
            input,
            hidden,
            w_update: Mat::zeros(hidden, cat),
            w_reset: Mat::zeros(hidden, cat),
            w_cand: Mat::zeros(hidden, cat),
            b_update: vec![0.0; hidden],
            b_reset: vec![0.0; hidden],
            b_cand: vec![0.0; hidden],
        }
    }
}

/// Cached activations for one time step.
#[derive(Debug, Clone)]
pub(crate) struct StepCache {
    pub z: Vec<f64>,
    pub r: Vec<f64>,
    pub cand: Vec<f64>,
    pub h: Vec<f64>,
}

/// Caches for a whole stacked sequence: per layer, the step inputs and the
/// per-step gate values. `inputs[0]` is the raw input sequence.
#[derive(Debug, Clone)]
pub(crate) struct GruSeqCache {
    pub inputs: Vec<Vec<Vec<f64>>>,
    pub steps: Vec<Vec<StepCache>>,
}

// ── Forward ─────────────────────────────────────────────────────────────────

fn step_impl(layer: &GruLayer, x: &[f64], h_prev: &[f64]) -> StepCache {
    let h = layer.hidden;
    let mut cat = Vec::with_capacity(h + layer.input);
    cat.extend_from_slice(h_prev);
    cat.extend_from_slice(x);

    let mut z = vec![0.0; h];
    let mut r = vec![0.0; h];
    layer.w_update.matvec(&cat, &mut z);
    layer.w_reset.matvec(&cat, &mut r);
    for i in 0..h {
        z[i] = sigmoid(z[i] + layer.b_update[i]);
        r[i] = sigmoid(r[i] + layer.b_reset[i]);
    }

    let mut cat_c = cat;
    for i in 0..h {
        cat_c[i] = r[i] * h_prev[i];
    }
    let mut cand = vec![0.0; h];
    layer.w_cand.matvec(&cat_c, &mut cand);
    let mut h_out = vec![0.0; h];
    for i in 0..h {
        cand[i] = (cand[i] + layer.b_cand[i]).tanh();
        h_out[i] = (1.0 - z[i]) * h_prev[i] + z[i] * cand[i];
    }
    StepCache { z, r, cand, h: h_out }
}

fn check_step_dims(layer: &GruLayer, x: &[f64], h_prev: &[f64]) -> Result<()> {
    if x.len() != layer.input {
        return Err(Error::Shape(format!(
            "gru step expects input of {}, got {}",
            layer.input,
            x.len()
        )));
    }
    if h_prev.len() != layer.hidden {
        return Err(Error::Shape(format!(
            "gru step expects hidden of {}, got {}",
            layer.hidden,
            h_prev.len()
        )));
    }
    Ok(())
}

/// Single GRU step; returns the next hidden state.
pub fn gru_step(layer: &GruLayer, x: &[f64], h_prev: &[f64]) -> Result<Vec<f64>> {
    check_step_dims(layer, x, h_prev)?;
    Ok(step_impl(layer, x, h_prev).h)
}

fn check_stack(layers: &[GruLayer], xs: &[Vec<f64>]) -> Result<()> {
    if layers.is_empty() {
        return Err(Error::Shape("gru stack has no layers".into()));
    }
    if xs.is_empty() {
        return Err(Error::Shape("gru sequence is empty".into()));
    }
    for (t, x) in xs.iter().enumerate() {
        if x.len() != layers[0].input {
            return Err(Error::Shape(format!(
                "gru input at step {t} has {} features, layer expects {}",
                x.len(),
                layers[0].input
            )));
        }
    }
    for w in layers.windows(2) {
        if w[1].input != w[0].hidden {
            return Err(Error::Shape(format!(
                "gru stack mismatch: layer hidden {} feeds layer input {}",
                w[0].hidden, w[1].input
            )));
        }
    }
    Ok(())
}

pub(crate) fn gru_sequence_cached(layers: &[GruLayer], xs: &[Vec<f64>]) -> Result<GruSeqCache> {
    check_stack(layers, xs)?;
    let mut inputs: Vec<Vec<Vec<f64>>> = vec![xs.to_vec()];
    let mut steps: Vec<Vec<StepCache>> = Vec::with_capacity(layers.len());
    for (li, layer) in layers.iter().enumerate() {
        let seq = &inputs[li];
        let mut layer_steps = Vec::with_capacity(seq.len());
        let mut h = vec![0.0; layer.hidden];
        for x in seq {
            let cache = step_impl(layer, x, &h);
            h = cache.h.clone();
            layer_steps.push(cache);
        }
        if li + 1 < layers.len() {
            inputs.push(layer_steps.iter().map(|c| c.h.clone()).collect());
        }
        steps.push(layer_steps);
    }
    Ok(GruSeqCache { inputs, steps })
}

/// Runs the stack over the whole sequence from a zero initial state and
/// returns the last layer's final hidden state.
pub fn gru_sequence(layers: &[GruLayer], xs: &[Vec<f64>]) -> Result<Vec<f64>> {
    let cache = gru_sequence_cached(layers, xs)?;
    Ok(cache.steps.last().unwrap().last().unwrap().h.clone())
}

// ── Backward ────────────────────────────────────────────────────────────────

/// BPTT through one layer. `dh_seq[t]` is the loss gradient arriving at the
/// step-t output from outside the layer; returns per-step input gradients.
fn layer_backward(
    layer: &GruLayer,
    inputs: &[Vec<f64>],
    steps: &[StepCache],
    dh_seq: &[Vec<f64>],
    grad: &mut GruLayer,
) -> Vec<Vec<f64>> {
    let h = layer.hidden;
    let steps_n = steps.len();
    let zero_h = vec![0.0; h];
    let mut dxs = vec![vec![0.0; layer.input]; steps_n];
    let mut carry = vec![0.0; h];

    for t in (0..steps_n).rev() {
        let cache = &steps[t];
        let h_prev: &[f64] = if t > 0 { &steps[t - 1].h } else { &zero_h };
        let x = &inputs[t];

        let mut dh = dh_seq[t].clone();
        for i in 0..h {
            dh[i] += carry[i];
        }

        // h = (1-z)*h_prev + z*cand
        let mut da_z = vec![0.0; h];
        let mut da_c = vec![0.0; h];
        let mut dh_prev = vec![0.0; h];
        for i in 0..h {
            let z = cache.z[i];
            let cand = cache.cand[i];
            da_z[i] = dh[i] * (cand - h_prev[i]) * z * (1.0 - z);
            da_c[i] = dh[i] * z * (1.0 - cand * cand);
            dh_prev[i] = dh[i] * (1.0 - z);
        }

        // candidate branch
        let mut cat = Vec::with_capacity(h + layer.input);
        cat.extend_from_slice(h_prev);
        cat.extend_from_slice(x);
        let mut cat_c = cat.clone();
        for i in 0..h {
            cat_c[i] = cache.r[i] * h_prev[i];
        }
        grad.w_cand.outer_acc(&da_c, &cat_c);
        let mut dcat_c = vec![0.0; h + layer.input];
        layer.w_cand.matvec_t_acc(&da_c, &mut dcat_c);
        let mut da_r = vec![0.0; h];
        for i in 0..h {
            let r = cache.r[i];
            dh_prev[i] += dcat_c[i] * r;
            da_r[i] = dcat_c[i] * h_prev[i] * r * (1.0 - r);
        }

        // gate branches share the [h_prev, x] concatenation
        grad.w_update.outer_acc(&da_z, &cat);
        grad.w_reset.outer_acc(&da_r, &cat);
        let mut dcat = vec![0.0; h + layer.input];
        layer.w_update.matvec_t_acc(&da_z, &mut dcat);
        layer.w_reset.matvec_t_acc(&da_r, &mut dcat);

        for i in 0..h {
            grad.b_update[i] += da_z[i];
            grad.b_reset[i] += da_r[i];
            grad.b_cand[i] += da_c[i];
            dh_prev[i] += dcat[i];
        }
        for j in 0..layer.input {
            dxs[t][j] = dcat[h + j] + dcat_c[h + j];
        }
        carry = dh_prev;
    }
    dxs
}

/// Backward through the whole stack given the gradient on the final hidden
/// state only. Accumulates into `grads` (one zeroed layer per real layer) and
/// returns per-step gradients on the raw input sequence.
pub(crate) fn gru_sequence_backward(
    layers: &[GruLayer],
    cache: &GruSeqCache,
    d_final: &[f64],
    grads: &mut [GruLayer],
) -> Result<Vec<Vec<f64>>> {
    let steps_n = cache.inputs[0].len();
    let top = layers.len() - 1;
    if d_final.len() != layers[top].hidden {
        return Err(Error::Shape(format!(
            "gru backward expects gradient of {}, got {}",
            layers[top].hidden,
            d_final.len()
        )));
    }
    // Only the final step of the top layer feeds the rest of the network.
    let mut dh_seq: Vec<Vec<f64>> = vec![vec![0.0; layers[top].hidden]; steps_n];
    dh_seq[steps_n - 1] = d_final.to_vec();
    for li in (0..layers.len()).rev() {
        let dxs = layer_backward(
            &layers[li],
            &cache.inputs[li],
            &cache.steps[li],
            &dh_seq,
            &mut grads[li],
        );
        dh_seq = dxs;
    }
    Ok(dh_seq)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_parameters_keep_zero_state() {
        let layer = GruLayer::zeros(3, 4);
        let h = gru_step(&layer, &[0.0; 3], &[0.0; 4]).unwrap();
        assert_eq!(h, vec![0.0; 4]);
    }

    #[test]
    fn scalar_step_hand_computed() {
        // z = r = 0.5 (zero gate weights); candidate reads x only.
        let mut layer = GruLayer::zeros(1, 1);
        *layer.w_cand.at_mut(0, 1) = 1.0;
        let h = gru_step(&layer, &[0.4], &[0.6]).unwrap();
        let expect = 0.5 * 0.6 + 0.5 * (0.4f64).tanh();
        assert!((h[0] - expect).abs() < 1e-12, "{h:?} vs {expect}");
    }

    #[test]
    fn update_gate_interpolates_between_prev_and_candidate() {
        // huge update bias -> z ~ 1 -> h ~ candidate = tanh(0) = 0
        let mut layer = GruLayer::zeros(1, 1);
        layer.b_update[0] = 50.0;
        let h = gru_step(&layer, &[0.0], &[0.9]).unwrap();
        assert!(h[0].abs() < 1e-12);
        // huge negative update bias -> z ~ 0 -> h ~ h_prev
        layer.b_update[0] = -50.0;
        let h = gru_step(&layer, &[0.0], &[0.9]).unwrap();
        assert!((h[0] - 0.9).abs() < 1e-12);
    }

    #[test]
    fn step_rejects_bad_dims() {
        let layer = GruLayer::zeros(3, 4);
        assert!(gru_step(&layer, &[0.0; 2], &[0.0; 4]).is_err());
        assert!(gru_step(&layer, &[0.0; 3], &[0.0; 5]).is_err());
    }

    #[test]
    fn sequence_of_one_equals_single_step() {
        let mut layer = GruLayer::zeros(2, 3);
        layer.b_update[1] = 0.3;
        *layer.w_cand.at_mut(0, 3) = 0.7;
        *layer.w_reset.at_mut(2, 4) = -0.2;
        let x = vec![0.5, -0.25];
        let by_step = gru_step(&layer, &x, &[0.0; 3]).unwrap();
        let by_seq = gru_sequence(std::slice::from_ref(&layer), &[x]).unwrap();
        assert_eq!(by_step, by_seq);
    }

    #[test]
    fn sequence_rejects_mismatched_stack_and_empty_input() {
        let a = GruLayer::zeros(2, 3);
        let b = GruLayer::zeros(4, 3); // expects input 4, gets 3
        assert!(gru_sequence(&[a.clone(), b], &[vec![0.0, 0.0]]).is_err());
        assert!(gru_sequence(&[a], &[]).is_err());
    }

    #[test]
    fn final_state_depends_on_whole_sequence() {
        let mut layer = GruLayer::zeros(1, 2);
        *layer.w_cand.at_mut(0, 2) = 1.0;
        *layer.w_update.at_mut(1, 2) = 0.5;
        let xs_a = vec![vec![0.1], vec![0.9]];
        let xs_b = vec![vec![0.9], vec![0.1]];
        let ha = gru_sequence(std::slice::from_ref(&layer), &xs_a).unwrap();
        let hb = gru_sequence(std::slice::from_ref(&layer), &xs_b).unwrap();
        assert_ne!(ha, hb);
    }
}
