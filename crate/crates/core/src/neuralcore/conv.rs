//! Valid (no padding, stride 1) 1D convolution over per-sensor force series.
//! Each layer shortens the time axis by `kernel - 1`; with three kernel-3
//! layers a 160-step cycle contracts to 158, 156, then 154 steps.

use crate::neuralcore::math::Mat;
use crate::{Error, Result};

// ── Parameters ──────────────────────────────────────────────────────────────

/// One convolution layer. `weight` is flat `[out_ch][in_ch][kernel]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvLayer {
    pub in_ch: usize,
    pub out_ch: usize,
    pub kernel: usize,
    pub weight: Vec<f64>,
    pub bias: Vec<f64>,
}

impl ConvLayer {
    pub fn zeros(in_ch: usize, out_ch: usize, kernel: usize) -> Self {
        ConvLayer {
            in_ch,
            out_ch,
            kernel,
            weight: vec![0.0; out_ch * in_ch * kernel],
            bias: vec![0.0; out_ch],
        }
    }

    #[inline]
    fn w(&self, o: usize, c: usize, k: usize) -> f64 {
        self.weight[(o * self.in_ch + c) * self.kernel + k]
    }

    #[inline]
    fn w_mut(&mut self, o: usize, c: usize, k: usize) -> &mut f64 {
        &mut self.weight[(o * self.in_ch + c) * self.kernel + k]
    }
}

// ── Forward ─────────────────────────────────────────────────────────────────

/// `x` is `[in_ch x len]`; returns `[out_ch x (len - kernel + 1)]`.
///
/// `y[o][i] = bias[o] + sum_{c,k} x[c][i+k] * w[o][c][k]`
pub fn conv1d_forward(x: &Mat, layer: &ConvLayer) -> Result<Mat> {
    if x.rows != layer.in_ch {
        return Err(Error::Shape(format!(
            "conv expects {} input channels, got {}",
            layer.in_ch, x.rows
        )));
    }
    if x.cols < layer.kernel {
        return Err(Error::Shape(format!(
            "conv input length {} is shorter than kernel {}",
            x.cols, layer.kernel
        )));
    }
    let out_len = x.cols - layer.kernel + 1;
    let mut y = Mat::zeros(layer.out_ch, out_len);
    for o in 0..layer.out_ch {
        let yo = y.row_mut(o);
        yo.fill(layer.bias[o]);
        for c in 0..layer.in_ch {
            let xc = x.row(c);
            for k in 0..layer.kernel {
                let w = layer.w(o, c, k);
                if w == 0.0 {
                    continue;
                }
                for i in 0..out_len {
                    yo[i] += w * xc[i + k];
                }
            }
        }
    }
    Ok(y)
}

// ── Backward ────────────────────────────────────────────────────────────────

/// Given `dL/dy`, accumulates `dL/dw` and `dL/db` into `grad` and returns
/// `dL/dx`. `x` must be the forward input.
pub fn conv1d_backward(x: &Mat, layer: &ConvLayer, dy: &Mat, grad: &mut ConvLayer) -> Result<Mat> {
    let out_len = x.cols - layer.kernel + 1;
    if dy.rows != layer.out_ch || dy.cols != out_len {
        return Err(Error::Shape(format!(
            "conv backward expects gradient {}x{}, got {}x{}",
            layer.out_ch, out_len, dy.rows, dy.cols
        )));
    }
    let mut dx = Mat::zeros(x.rows, x.cols);
    for o in 0..layer.out_ch {
        let dyo = dy.row(o);
        let mut db = 0.0;
        for i in 0..out_len {
            db += dyo[i];
        }
        grad.bias[o] += db;
        for c in 0..layer.in_ch {
            let xc = x.row(c);
            for k in 0..layer.kernel {
                let mut dw = 0.0;
                for i in 0..out_len {
                    dw += dyo[i] * xc[i + k];
                }
                *grad.w_mut(o, c, k) += dw;
                let w = layer.w(o, c, k);
                if w != 0.0 {
                    let dxc = dx.row_mut(c);
                    for i in 0..out_len {
                        dxc[i + k] += dyo[i] * w;
                    }
                }
            }
        }
    }
    Ok(dx)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn single(kernel: Vec<f64>, bias: f64) -> ConvLayer {
        let k = kernel.len();
        ConvLayer { in_ch: 1, out_ch: 1, kernel: k, weight: kernel, bias: vec![bias] }
    }

    #[test]
    fn box_kernel_example() {
        let x = Mat::from_vec(1, 5, vec![1.0, 2.0, 3.0, 4.0, 5.0]).unwrap();
        let y = conv1d_forward(&x, &single(vec![1.0, 1.0, 1.0], 0.0)).unwrap();
        assert_eq!(y.data, vec![6.0, 9.0, 12.0]);
    }

    #[test]
    fn identity_kernel_crops_input() {
        let x = Mat::from_vec(1, 6, vec![5.0, -1.0, 2.5, 0.0, 7.0, 3.0]).unwrap();
        let y = conv1d_forward(&x, &single(vec![0.0, 1.0, 0.0], 0.0)).unwrap();
        assert_eq!(y.data, vec![-1.0, 2.5, 0.0, 7.0]);
    }

    #[test]
    fn bias_shifts_output() {
        let x = Mat::from_vec(1, 3, vec![1.0, 1.0, 1.0]).unwrap();
        let y = conv1d_forward(&x, &single(vec![1.0], 2.0)).unwrap();
        assert_eq!(y.data, vec![3.0, 3.0, 3.0]);
    }

    #[test]
    fn input_shorter_than_kernel_errors() {
        let x = Mat::from_vec(1, 2, vec![1.0, 2.0]).unwrap();
        assert!(conv1d_forward(&x, &single(vec![1.0, 1.0, 1.0], 0.0)).is_err());
    }

    #[test]
    fn wrong_channel_count_errors() {
        let x = Mat::from_vec(2, 5, vec![0.0; 10]).unwrap();
        assert!(conv1d_forward(&x, &single(vec![1.0], 0.0)).is_err());
    }

    #[test]
    fn multi_channel_sums_over_inputs() {
        // two input channels, one output; w = [[1,0],[0,1]] over kernel 2
        let layer = ConvLayer {
            in_ch: 2,
            out_ch: 1,
            kernel: 2,
            weight: vec![1.0, 0.0, 0.0, 1.0],
            bias: vec![0.0],
        };
        let x = Mat::from_vec(2, 3, vec![1.0, 2.0, 3.0, 10.0, 20.0, 30.0]).unwrap();
        // y[i] = x0[i]*1 + x1[i+1]*1
        let y = conv1d_forward(&x, &layer).unwrap();
        assert_eq!(y.data, vec![21.0, 32.0]);
    }

    #[test]
    fn backward_hand_case() {
        // y[i] = 2*x[i] + 3*x[i+1], x = [1,2,3], dy = [1,1]
        let layer = single(vec![2.0, 3.0], 0.0);
        let x = Mat::from_vec(1, 3, vec![1.0, 2.0, 3.0]).unwrap();
        let dy = Mat::from_vec(1, 2, vec![1.0, 1.0]).unwrap();
        let mut grad = ConvLayer::zeros(1, 1, 2);
        let dx = conv1d_backward(&x, &layer, &dy, &mut grad).unwrap();
        assert_eq!(grad.weight, vec![3.0, 5.0]);
        assert_eq!(grad.bias, vec![2.0]);
        assert_eq!(dx.data, vec![2.0, 5.0, 3.0]);
    }
}
