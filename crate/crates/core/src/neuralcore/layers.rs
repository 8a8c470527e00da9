//! Pooling, the classifier head, and inverted dropout.

use rand::Rng;

use crate::neuralcore::math::{dot, sigmoid, stable_sum, Mat};
use crate::{Error, Result};

// ── Mean pooling ────────────────────────────────────────────────────────────

/// Column means over node rows, summed in value order so the result is
/// independent of row ordering.
pub fn mean_pool(h: &Mat) -> Result<Vec<f64>> {
    if h.rows == 0 {
        return Err(Error::Shape("mean pool over zero rows".into()));
    }
    let n = h.rows as f64;
    let mut out = vec![0.0; h.cols];
    let mut terms = vec![0.0; h.rows];
    for c in 0..h.cols {
        for r in 0..h.rows {
            terms[r] = h.at(r, c);
        }
        out[c] = stable_sum(&mut terms) / n;
    }
    Ok(out)
}

/// Backward of [`mean_pool`]: spreads the gradient evenly over rows.
pub(crate) fn mean_pool_backward(dpool: &[f64], rows: usize) -> Mat {
    let mut dh = Mat::zeros(rows, dpool.len());
    let inv = 1.0 / rows as f64;
    for r in 0..rows {
        let row = dh.row_mut(r);
        for c in 0..dpool.len() {
            row[c] = dpool[c] * inv;
        }
    }
    dh
}

// ── Dense + sigmoid head ────────────────────────────────────────────────────

/// `sigmoid(w . x + b)`: the scalar disease probability.
pub fn dense_sigmoid(x: &[f64], w: &[f64], b: f64) -> Result<f64> {
    if x.len() != w.len() {
        return Err(Error::Shape(format!(
            "dense layer expects {} inputs, got {}",
            w.len(),
            x.len()
        )));
    }
    Ok(sigmoid(dot(w, x) + b))
}

// ── Dropout ─────────────────────────────────────────────────────────────────

/// Inverted-dropout mask: each entry is 0 with probability `p`, otherwise
/// `1/(1-p)`, so the expected value of a masked activation is unchanged.
pub(crate) fn dropout_mask(len: usize, p: f64, rng: &mut impl Rng) -> Result<Vec<f64>> {
    if !(0.0..1.0).contains(&p) {
        return Err(Error::Config(format!("dropout probability {p} outside [0, 1)")));
    }
    let keep = 1.0 / (1.0 - p);
    Ok((0..len)
        .map(|_| if rng.random::<f64>() < p { 0.0 } else { keep })
        .collect())
}

/// Applies dropout in training mode; identity in evaluation mode.
pub fn dropout(x: &[f64], p: f64, training: bool, rng: &mut impl Rng) -> Result<Vec<f64>> {
    if !training || p == 0.0 {
        if !(0.0..1.0).contains(&p) {
            return Err(Error::Config(format!("dropout probability {p} outside [0, 1)")));
        }
        return Ok(x.to_vec());
    }
    let mask = dropout_mask(x.len(), p, rng)?;
    Ok(x.iter().zip(&mask).map(|(v, m)| v * m).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn mean_pool_averages_columns() {
        let h = Mat::from_vec(2, 3, vec![1.0, 2.0, 3.0, 3.0, 6.0, 9.0]).unwrap();
        assert_eq!(mean_pool(&h).unwrap(), vec![2.0, 4.0, 6.0]);
    }

    #[test]
    fn mean_pool_rejects_empty() {
        assert!(mean_pool(&Mat::zeros(0, 3)).is_err());
    }

    #[test]
    fn mean_pool_backward_spreads_evenly() {
        let dh = mean_pool_backward(&[4.0, 8.0], 4);
        assert_eq!(dh.row(0), &[1.0, 2.0]);
        assert_eq!(dh.row(3), &[1.0, 2.0]);
    }

    #[test]
    fn dense_sigmoid_zero_weights_give_half() {
        let p = dense_sigmoid(&[1.0, -5.0, 3.0], &[0.0; 3], 0.0).unwrap();
        assert_eq!(p, 0.5);
    }

    #[test]
    fn dense_sigmoid_known_logit() {
        // w.x + b = ln 3 -> p = 0.75
        let p = dense_sigmoid(&[3.0f64.ln()], &[1.0], 0.0).unwrap();
        assert!((p - 0.75).abs() < 1e-12);
    }

    #[test]
    fn dense_sigmoid_rejects_mismatch() {
        assert!(dense_sigmoid(&[1.0, 2.0], &[0.5], 0.0).is_err());
    }

    #[test]
    fn dropout_zero_probability_is_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let x = [0.25, -1.5, 3.0];
        assert_eq!(dropout(&x, 0.0, true, &mut rng).unwrap(), x.to_vec());
    }

    #[test]
    fn dropout_eval_mode_is_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let x = [0.25, -1.5, 3.0];
        assert_eq!(dropout(&x, 0.9, false, &mut rng).unwrap(), x.to_vec());
    }

    #[test]
    fn dropout_scales_survivors() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let x = vec![1.0; 1000];
        let y = dropout(&x, 0.2, true, &mut rng).unwrap();
        let keep = 1.0 / 0.8;
        let mut zeros = 0usize;
        for &v in &y {
            assert!(v == 0.0 || (v - keep).abs() < 1e-15);
            if v == 0.0 {
                zeros += 1;
            }
        }
        // seeded, so the drop count is fixed; it should be near p * n
        assert!((100..300).contains(&zeros), "dropped {zeros} of 1000");
    }

    #[test]
    fn dropout_preserves_expectation() {
        let mut rng = ChaCha8Rng::seed_from_u64(19);
        let x = vec![1.0; 20_000];
        let y = dropout(&x, 0.2, true, &mut rng).unwrap();
        let mean = y.iter().sum::<f64>() / y.len() as f64;
        assert!((mean - 1.0).abs() < 0.02, "sample mean {mean}");
    }

    #[test]
    fn dropout_rejects_bad_probability() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        assert!(dropout(&[1.0], 1.0, true, &mut rng).is_err());
        assert!(dropout(&[1.0], -0.1, true, &mut rng).is_err());
    }
}
