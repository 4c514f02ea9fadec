//! Single-layer tanh recurrent network with a linear read-out per step:
//!
//! `H_k = tanh(x_k w_i + b_i + H_{k−1} w_h + b_h)`, `G_k = H_k w_o + b_o`.

use ndarray::{Array2, ArrayView2, Axis};
use rand::Rng;

use super::params::{grad_view, NetParams};
use super::LearnError;

const W_I: usize = 0;
const B_I: usize = 1;
const W_H: usize = 2;
const B_H: usize = 3;
const W_O: usize = 4;
const B_O: usize = 5;

#[derive(Debug, Clone, PartialEq)]
pub struct Rnn {
    pub params: NetParams,
    pub input: usize,
    pub hidden: usize,
}

/// Hidden states of every step, kept for backpropagation through time.
#[derive(Debug, Clone)]
pub struct RnnTape {
    inputs: Vec<Array2<f64>>,
    states: Vec<Array2<f64>>,
}

impl Rnn {
    pub fn new(input: usize, hidden: usize) -> Self {
        let params = NetParams::zeros(&[
            ("w_i", input, hidden),
            ("b_i", 1, hidden),
            ("w_h", hidden, hidden),
            ("b_h", 1, hidden),
            ("w_o", hidden, 1),
            ("b_o", 1, 1),
        ]);
        Self { params, input, hidden }
    }

    pub fn init<R: Rng + ?Sized>(mut self, rng: &mut R) -> Self {
        self.params.glorot(rng);
        self
    }

    /// `inputs[k]` is the (batch × input) slice at step k. Returns
    /// (batch × steps) outputs.
    pub fn forward_tape(&self, inputs: &[Array2<f64>]) -> Result<(Array2<f64>, RnnTape), LearnError> {
        let batch = inputs.first().map_or(0, |x| x.nrows());
        let p = &self.params;
        let bias = &p.view(B_I).row(0) + &p.view(B_H).row(0);
        let mut h = Array2::<f64>::zeros((batch, self.hidden));
        let mut out = Array2::zeros((batch, inputs.len()));
        let mut states = Vec::with_capacity(inputs.len());
        for (k, x) in inputs.iter().enumerate() {
            if x.ncols() != self.input {
                return Err(LearnError::ShapeMismatch { expected: self.input, got: x.ncols() });
            }
            let mut pre = x.dot(&p.view(W_I)) + h.dot(&p.view(W_H));
            pre += &bias;
            pre.mapv_inplace(f64::tanh);
            h = pre;
            let y = h.dot(&p.view(W_O));
            let b_o = p.slice(B_O)[0];
            out.column_mut(k).assign(&y.column(0).mapv(|v| v + b_o));
            states.push(h.clone());
        }
        Ok((out, RnnTape { inputs: inputs.to_vec(), states }))
    }

    pub fn forward(&self, inputs: &[Array2<f64>]) -> Result<Array2<f64>, LearnError> {
        Ok(self.forward_tape(inputs)?.0)
    }

    /// Backpropagation through time; accumulates into `grad`.
    pub fn backward(&self, tape: &RnnTape, d_out: &ArrayView2<f64>, grad: &mut [f64]) {
        let p = &self.params;
        let steps = tape.states.len();
        let batch = d_out.nrows();
        let w_o = p.view(W_O);
        let mut carry = Array2::<f64>::zeros((batch, self.hidden));
        let mut g_wi = Array2::<f64>::zeros((self.input, self.hidden));
        let mut g_wh = Array2::<f64>::zeros((self.hidden, self.hidden));
        let mut g_b = ndarray::Array1::<f64>::zeros(self.hidden);
        let mut g_wo = Array2::<f64>::zeros((self.hidden, 1));
        let mut g_bo = 0.0;
        for k in (0..steps).rev() {
            let h = &tape.states[k];
            let dy = d_out.column(k).insert_axis(Axis(1));
            g_wo += &h.t().dot(&dy);
            g_bo += dy.sum();
            let mut dh = dy.dot(&w_o.t());
            dh += &carry;
            dh.zip_mut_with(h, |g, &a| *g *= 1.0 - a * a);
            g_wi += &tape.inputs[k].t().dot(&dh);
            g_b += &dh.sum_axis(Axis(0));
            if k > 0 {
                g_wh += &tape.states[k - 1].t().dot(&dh);
            }
            carry = dh.dot(&p.view(W_H).t());
        }
        grad_view(p, grad, W_I).scaled_add(1.0, &g_wi);
        grad_view(p, grad, B_I).row_mut(0).scaled_add(1.0, &g_b);
        grad_view(p, grad, W_H).scaled_add(1.0, &g_wh);
        grad_view(p, grad, B_H).row_mut(0).scaled_add(1.0, &g_b);
        grad_view(p, grad, W_O).scaled_add(1.0, &g_wo);
        grad[p.shape(B_O).offset] += g_bo;
    }
}
