//! Classification metrics, ROC/AUC, and attention-based per-sensor
//! importance.

use serde::{Deserialize, Serialize};

use crate::neuralcore::model::{forward_explain, predict, ModelParams};
use crate::preprocess::{GaitCycleSample, SensorGraph};
use crate::{Error, Result};

// ── Confusion matrix ────────────────────────────────────────────────────────

/// Counts at a fixed threshold; positive means patient.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    #[serde(rename = "tp")]
    pub true_pos: usize,
    #[serde(rename = "fp")]
    pub false_pos: usize,
    #[serde(rename = "fn")]
    pub false_neg: usize,
    #[serde(rename = "tn")]
    pub true_neg: usize,
}

impl ConfusionMatrix {
    pub fn total(&self) -> usize {
        self.true_pos + self.false_pos + self.false_neg + self.true_neg
    }
}

/// Thresholds probabilities (`p >= threshold` predicts positive) against
/// binary labels.
pub fn confusion(probs: &[f64], labels: &[f64], threshold: f64) -> Result<ConfusionMatrix> {
    if probs.is_empty() || probs.len() != labels.len() {
        return Err(Error::Eval(format!(
            "confusion needs equal non-empty inputs, got {} and {}",
            probs.len(),
            labels.len()
        )));
    }
    if !(0.0..=1.0).contains(&threshold) {
        return Err(Error::Eval(format!("threshold {threshold} outside [0, 1]")));
    }
    let mut cm = ConfusionMatrix { true_pos: 0, false_pos: 0, false_neg: 0, true_neg: 0 };
    for (&p, &y) in probs.iter().zip(labels) {
        if !p.is_finite() || (y != 0.0 && y != 1.0) {
            return Err(Error::Eval("probabilities must be finite and labels binary".into()));
        }
        match (p >= threshold, y == 1.0) {
            (true, true) => cm.true_pos += 1,
            (true, false) => cm.false_pos += 1,
            (false, true) => cm.false_neg += 1,
            (false, false) => cm.true_neg += 1,
        }
    }
    Ok(cm)
}

// ── Scalar metrics ──────────────────────────────────────────────────────────

/// Accuracy, precision, recall and F1 as fractions in [0, 1]. Degenerate
/// denominators yield 0 and a flag naming the condition.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsValues {
    pub accuracy: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub flags: Vec<String>,
}

pub fn metrics(cm: &ConfusionMatrix) -> Result<MetricsValues> {
    let total = cm.total();
    if total == 0 {
        return Err(Error::Eval("metrics over an empty confusion matrix".into()));
    }
    let (tp, fp, fn_, _tn) =
        (cm.true_pos as f64, cm.false_pos as f64, cm.false_neg as f64, cm.true_neg as f64);
    let mut flags = Vec::new();
    let accuracy = (cm.true_pos + cm.true_neg) as f64 / total as f64;
    let precision = if cm.true_pos + cm.false_pos == 0 {
        flags.push("precision_undefined_no_positive_predictions".to_string());
        0.0
    } else {
        tp / (tp + fp)
    };
    let recall = if cm.true_pos + cm.false_neg == 0 {
        flags.push("recall_undefined_no_positive_labels".to_string());
        0.0
    } else {
        tp / (tp + fn_)
    };
    let f1 = if precision + recall == 0.0 {
        flags.push("f1_undefined_zero_precision_and_recall".to_string());
        0.0
    } else {
        2.0 * precision * recall / (precision + recall)
    };
    Ok(MetricsValues { accuracy, precision, recall, f1, flags })
}

// ── ROC and AUC ─────────────────────────────────────────────────────────────

/// ROC by sweeping the threshold across distinct scores (ties move
/// together), anchored at (0,0); AUC by trapezoidal integration, which under
/// this sweep equals the rank statistic with half credit for ties. Fails on
/// a single-class input.
pub fn roc_auc(probs: &[f64], labels: &[f64]) -> Result<(Vec<(f64, f64)>, f64)> {
    if probs.is_empty() || probs.len() != labels.len() {
        return Err(Error::Eval(format!(
            "roc needs equal non-empty inputs, got {} and {}",
            probs.len(),
            labels.len()
        )));
    }
    let pos = labels.iter().filter(|&&y| y == 1.0).count();
    let neg = labels.len() - pos;
    if pos == 0 || neg == 0 {
        return Err(Error::Eval("roc is undefined for a single-class dataset".into()));
    }
    if probs.iter().any(|p| !p.is_finite()) || labels.iter().any(|&y| y != 0.0 && y != 1.0) {
        return Err(Error::Eval("probabilities must be finite and labels binary".into()));
    }

    let mut order: Vec<usize> = (0..probs.len()).collect();
    order.sort_by(|&a, &b| probs[b].total_cmp(&probs[a]).then(a.cmp(&b)));

    let mut curve = vec![(0.0, 0.0)];
    let (mut tp, mut fp) = (0usize, 0usize);
    let mut i = 0;
    while i < order.len() {
        let score = probs[order[i]];
        // everything tied at this score flips together
        while i < order.len() && probs[order[i]] == score {
            if labels[order[i]] == 1.0 {
                tp += 1;
            } else {
                fp += 1;
            }
            i += 1;
        }
        curve.push((fp as f64 / neg as f64, tp as f64 / pos as f64));
    }

    let mut auc = 0.0;
    for pair in curve.windows(2) {
        let ((x0, y0), (x1, y1)) = (pair[0], pair[1]);
        auc += (x1 - x0) * (y0 + y1) / 2.0;
    }
    Ok((curve, auc))
}

// ── Full evaluation ─────────────────────────────────────────────────────────

/// Everything `evaluate` measures on one dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub n: usize,
    pub threshold: f64,
    pub confusion: ConfusionMatrix,
    pub accuracy: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    /// Absent when the dataset holds a single class.
    pub auc: Option<f64>,
    pub roc: Vec<(f64, f64)>,
    pub flags: Vec<String>,
}

/// Runs inference over `samples` and assembles the metric report.
pub fn evaluate(
    params: &ModelParams,
    samples: &[GaitCycleSample],
    graph: &SensorGraph,
    threshold: f64,
) -> Result<MetricsReport> {
    if samples.is_empty() {
        return Err(Error::Eval("evaluation set is empty".into()));
    }
    let labels: Vec<f64> = samples.iter().map(|s| f64::from(s.label)).collect();
    let probs = predict(params, samples, graph)?;
    let cm = confusion(&probs, &labels, threshold)?;
    let mut values = metrics(&cm)?;
    let (roc, auc) = match roc_auc(&probs, &labels) {
        Ok((roc, auc)) => (roc, Some(auc)),
        Err(_) => {
            values.flags.push("auc_undefined_single_class".to_string());
            (Vec::new(), None)
        }
    };
    Ok(MetricsReport {
        n: samples.len(),
        threshold,
        confusion: cm,
        accuracy: values.accuracy,
        precision: values.precision,
        recall: values.recall,
        f1: values.f1,
        auc,
        roc,
        flags: values.flags,
    })
}

// ── Node importance ─────────────────────────────────────────────────────────

/// Per-sensor explanation for one cycle: embedding-norm importance scaled to
/// [0, 1], incoming attention mass from the final attention layer, and a
/// colormap rendering of the importance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NodeImportance {
    pub subject_id: String,
    pub cycle_index: usize,
    pub importance: Vec<f64>,
    pub attention_mass: Vec<f64>,
    pub color: Vec<String>,
}

/// Importance = L2 norm of each node's final-layer embedding, min-max scaled
/// across the graph; a flat profile maps every node to 0.5.
pub fn node_importance(
    params: &ModelParams,
    sample: &GaitCycleSample,
    graph: &SensorGraph,
) -> Result<NodeImportance> {
    let out = forward_explain(params, &sample.features, graph)?;
    let h = &out.node_embeddings;
    let norms: Vec<f64> = (0..h.rows)
        .map(|i| h.row(i).iter().map(|v| v * v).sum::<f64>().sqrt())
        .collect();
    let lo = norms.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = norms.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let importance: Vec<f64> = if hi > lo {
        norms.iter().map(|&v| (v - lo) / (hi - lo)).collect()
    } else {
        vec![0.5; norms.len()]
    };
    let attention_mass = out
        .attentions
        .last()
        .ok_or_else(|| Error::Eval("model has no attention layers".into()))?
        .mass();
    let color = importance.iter().map(|&t| warm_color(t)).collect();
    Ok(NodeImportance {
        subject_id: sample.subject_id.clone(),
        cycle_index: sample.cycle_index,
        importance,
        attention_mass,
        color,
    })
}

// ── Colormap ────────────────────────────────────────────────────────────────

const WARM_ANCHORS: [(u8, u8, u8); 5] = [
    (49, 54, 149),
    (116, 173, 209),
    (255, 255, 191),
    (244, 109, 67),
    (165, 0, 38),
];

/// Cool-to-warm colormap over [0, 1] (out-of-range input clamps), rendered
/// as `#rrggbb`.
pub fn warm_color(t: f64) -> String {
    let t = if t.is_finite() { t.clamp(0.0, 1.0) } else { 0.0 };
    let scaled = t * (WARM_ANCHORS.len() - 1) as f64;
    let i = (scaled.floor() as usize).min(WARM_ANCHORS.len() - 2);
    let frac = scaled - i as f64;
    let (r0, g0, b0) = WARM_ANCHORS[i];
    let (r1, g1, b1) = WARM_ANCHORS[i + 1];
    let mix = |a: u8, b: u8| (a as f64 + (b as f64 - a as f64) * frac).round() as u8;
    format!("#{:02x}{:02x}{:02x}", mix(r0, r1), mix(g0, g1), mix(b0, b1))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn confusion_counts_each_quadrant() {
        let cm = confusion(&[0.9, 0.4, 0.6, 0.1], &[1.0, 1.0, 0.0, 0.0], 0.5).unwrap();
        assert_eq!(cm, ConfusionMatrix { true_pos: 1, false_pos: 1, false_neg: 1, true_neg: 1 });
    }

    #[test]
    fn threshold_is_inclusive_for_positives() {
        let cm = confusion(&[0.5], &[1.0], 0.5).unwrap();
        assert_eq!(cm.true_pos, 1);
    }

    #[test]
    fn confusion_rejects_bad_input() {
        assert!(confusion(&[], &[], 0.5).is_err());
        assert!(confusion(&[0.5], &[1.0, 0.0], 0.5).is_err());
        assert!(confusion(&[0.5], &[0.3], 0.5).is_err());
        assert!(confusion(&[0.5], &[1.0], 1.5).is_err());
    }

    #[test]
    fn metrics_reference_confusion_matrix() {
        let cm = ConfusionMatrix { true_pos: 2063, false_pos: 9, false_neg: 6, true_neg: 1005 };
        let m = metrics(&cm).unwrap();
        assert!((m.accuracy - 3068.0 / 3083.0).abs() < 1e-12);
        assert!((m.precision - 2063.0 / 2072.0).abs() < 1e-12);
        assert!((m.recall - 2063.0 / 2069.0).abs() < 1e-12);
        assert!((m.f1 - 4126.0 / 4141.0).abs() < 1e-12);
        assert!(m.flags.is_empty());
    }

    #[test]
    fn metrics_flags_degenerate_cases() {
        // no positive predictions
        let m = metrics(&ConfusionMatrix { true_pos: 0, false_pos: 0, false_neg: 3, true_neg: 5 })
            .unwrap();
        assert_eq!(m.precision, 0.0);
        assert!(m.flags.iter().any(|f| f.contains("precision")));
        // no positive labels
        let m = metrics(&ConfusionMatrix { true_pos: 0, false_pos: 2, false_neg: 0, true_neg: 5 })
            .unwrap();
        assert!(m.flags.iter().any(|f| f.contains("recall")));
        assert!(m.flags.iter().any(|f| f.contains("f1")));
        assert!(metrics(&ConfusionMatrix { true_pos: 0, false_pos: 0, false_neg: 0, true_neg: 0 })
            .is_err());
    }

    #[test]
    fn auc_known_values() {
        let (_, auc) = roc_auc(&[0.1, 0.4, 0.35, 0.8], &[0.0, 0.0, 1.0, 1.0]).unwrap();
        assert!((auc - 0.75).abs() < 1e-12);
        let (_, auc) = roc_auc(&[0.9, 0.8, 0.4, 0.2], &[1.0, 0.0, 1.0, 0.0]).unwrap();
        assert!((auc - 0.75).abs() < 1e-12);
        // perfect separation
        let (curve, auc) = roc_auc(&[0.9, 0.8, 0.2, 0.1], &[1.0, 1.0, 0.0, 0.0]).unwrap();
        assert_eq!(auc, 1.0);
        assert_eq!(curve.first(), Some(&(0.0, 0.0)));
        assert_eq!(curve.last(), Some(&(1.0, 1.0)));
        // all scores tied: chance
        let (curve, auc) = roc_auc(&[0.5, 0.5, 0.5, 0.5], &[1.0, 0.0, 1.0, 0.0]).unwrap();
        assert!((auc - 0.5).abs() < 1e-12);
        assert_eq!(curve.len(), 2);
    }

    /// Independent AUC: pairwise comparisons with half credit for ties.
    fn auc_by_pairs(probs: &[f64], labels: &[f64]) -> f64 {
        let mut wins = 0.0;
        let mut pairs = 0.0;
        for (i, (&pi, &yi)) in probs.iter().zip(labels).enumerate() {
            for (&pj, &yj) in probs.iter().zip(labels).skip(i + 1) {
                let (p_pos, p_neg) = match (yi == 1.0, yj == 1.0) {
                    (true, false) => (pi, pj),
                    (false, true) => (pj, pi),
                    _ => continue,
                };
                pairs += 1.0;
                if p_pos > p_neg {
                    wins += 1.0;
                } else if p_pos == p_neg {
                    wins += 0.5;
                }
            }
        }
        wins / pairs
    }

    #[test]
    fn auc_matches_pairwise_statistic_with_ties() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(12);
        for round in 0..25 {
            let n = 2 + (round % 10);
            // coarse grid of scores forces plenty of ties
            let probs: Vec<f64> = (0..n).map(|_| f64::from(rng.random_range(0..5u8)) / 4.0).collect();
            let mut labels: Vec<f64> = (0..n).map(|_| f64::from(rng.random::<f64>() < 0.5)).collect();
            labels[0] = 1.0;
            labels[1] = 0.0;
            let (_, auc) = roc_auc(&probs, &labels).unwrap();
            let expect = auc_by_pairs(&probs, &labels);
            assert!((auc - expect).abs() < 1e-12, "{auc} vs {expect}");
        }
    }

    #[test]
    fn roc_rejects_single_class() {
        assert!(roc_auc(&[0.2, 0.8], &[1.0, 1.0]).is_err());
        assert!(roc_auc(&[0.2, 0.8], &[0.0, 0.0]).is_err());
    }

    #[test]
    fn warm_color_anchors_and_interpolation() {
        assert_eq!(warm_color(0.0), "#313695");
        assert_eq!(warm_color(0.5), "#ffffbf");
        assert_eq!(warm_color(1.0), "#a50026");
        assert_eq!(warm_color(0.125), "#5372b3");
        // clamped
        assert_eq!(warm_color(-3.0), "#313695");
        assert_eq!(warm_color(7.0), "#a50026");
        assert_eq!(warm_color(f64::NAN), "#313695");
    }

    #[test]
    fn node_importance_shapes_and_ranges() {
        use crate::neuralcore::model::{ModelConfig, ModelParams};
        use crate::preprocess::default_sensor_graph;
        use rand::{Rng, SeedableRng};

        let config = ModelConfig {
            seq_len: 20,
            conv_channels: vec![3],
            gru_hidden: 4,
            gru_layers: 1,
            gat_hidden: 4,
            gat_layers: 2,
            ..Default::default()
        };
        let params = ModelParams::init(&config, 3).unwrap();
        let graph = default_sensor_graph();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(8);
        let sample = GaitCycleSample {
            subject_id: "s".into(),
            cycle_index: 2,
            label: 1,
            features: (0..8).map(|_| (0..20).map(|_| rng.random()).collect()).collect(),
        };
        let ni = node_importance(&params, &sample, &graph).unwrap();
        assert_eq!(ni.importance.len(), 8);
        assert!(ni.importance.iter().all(|&v| (0.0..=1.0).contains(&v)));
        assert!(ni.importance.iter().any(|&v| v == 0.0));
        assert!(ni.importance.iter().any(|&v| v == 1.0));
        // attention rows each sum to 1, so total incoming mass is n
        let total: f64 = ni.attention_mass.iter().sum();
        assert!((total - 8.0).abs() < 1e-9);
        assert!(ni.color.iter().all(|c| c.len() == 7 && c.starts_with('#')));
    }

    #[test]
    fn flat_embeddings_give_uniform_importance() {
        use crate::neuralcore::model::{ModelConfig, ModelParams};
        use crate::preprocess::default_sensor_graph;

        let config = ModelConfig {
            seq_len: 12,
            conv_channels: vec![2],
            gru_hidden: 3,
            gru_layers: 1,
            gat_hidden: 3,
            gat_layers: 1,
            ..Default::default()
        };
        // zero parameters: every embedding is identical
        let params = ModelParams::zeros(&config).unwrap();
        let graph = default_sensor_graph();
        let sample = GaitCycleSample {
            subject_id: "s".into(),
            cycle_index: 0,
            label: 0,
            features: vec![vec![0.3; 12]; 8],
        };
        let ni = node_importance(&params, &sample, &graph).unwrap();
        assert_eq!(ni.importance, vec![0.5; 8]);
    }
}
