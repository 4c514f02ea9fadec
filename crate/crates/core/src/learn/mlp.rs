//! Fully connected network `P_L ∘ φ ∘ … ∘ φ ∘ P_1` with ReLU hidden layers.

use ndarray::{Array1, Array2, ArrayView2, Axis};
use rand::Rng;

use super::params::{grad_view, NetParams};
use super::LearnError;

#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    pub params: NetParams,
    /// Layer widths `(input, hidden…, output)`.
    pub dims: Vec<usize>,
}

/// Intermediate values kept for the backward pass.
#[derive(Debug, Clone)]
pub struct MlpTape {
    input: Array2<f64>,
    /// Post-activation of each hidden layer.
    hidden: Vec<Array2<f64>>,
}

impl Mlp {
    /// `layers` affine maps with `width` hidden units.
    pub fn new(input: usize, width: usize, output: usize, layers: usize) -> Self {
        let mut dims = vec![input];
        dims.extend(std::iter::repeat(width).take(layers.saturating_sub(1)));
        dims.push(output);
        Self::with_dims(dims)
    }

    pub fn with_dims(dims: Vec<usize>) -> Self {
        let names: Vec<(String, String)> = (0..dims.len() - 1).map(|l| (format!("w{l}"), format!("b{l}"))).collect();
        let mut table = Vec::new();
        for (l, (w, b)) in names.iter().enumerate() {
            table.push((w.as_str(), dims[l], dims[l + 1]));
            table.push((b.as_str(), 1, dims[l + 1]));
        }
        Self { params: NetParams::zeros(&table), dims }
    }

    pub fn init<R: Rng + ?Sized>(mut self, rng: &mut R) -> Self {
        self.params.glorot(rng);
        self
    }

    pub fn input_dim(&self) -> usize {
        self.dims[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.dims.last().unwrap()
    }

    fn layers(&self) -> usize {
        self.dims.len() - 1
    }

    fn affine(&self, l: usize, x: &ArrayView2<f64>) -> Array2<f64> {
        let mut y = x.dot(&self.params.view(2 * l));
        y += &self.params.view(2 * l + 1).row(0);
        y
    }

    /// Batched forward pass; rows are samples.
    pub fn forward_tape(&self, x: &ArrayView2<f64>) -> Result<(Array2<f64>, MlpTape), LearnError> {
        if x.ncols() != self.input_dim() {
            return Err(LearnError::ShapeMismatch { expected: self.input_dim(), got: x.ncols() });
        }
        let mut hidden = Vec::with_capacity(self.layers() - 1);
        let mut cur = x.to_owned();
        for l in 0..self.layers() {
            let mut y = self.affine(l, &cur.view());
            if l + 1 < self.layers() {
                y.mapv_inplace(|v| v.max(0.0));
                hidden.push(y.clone());
            }
            cur = y;
        }
        Ok((cur, MlpTape { input: x.to_owned(), hidden }))
    }

    pub fn forward(&self, x: &ArrayView2<f64>) -> Result<Array2<f64>, LearnError> {
        Ok(self.forward_tape(x)?.0)
    }

    /// Single input vector.
    pub fn forward_one(&self, x: &[f64]) -> Result<Vec<f64>, LearnError> {
        let v = ArrayView2::from_shape((1, x.len()), x).unwrap();
        Ok(self.forward(&v)?.row(0).to_vec())
    }

    /// Accumulates `∂L/∂params` into `grad` given `∂L/∂output`.
    pub fn backward(&self, tape: &MlpTape, d_out: Array2<f64>, grad: &mut [f64]) {
        let mut d = d_out;
        for l in (0..self.layers()).rev() {
            let a_prev = if l == 0 { tape.input.view() } else { tape.hidden[l - 1].view() };
            grad_view(&self.params, grad, 2 * l).scaled_add(1.0, &a_prev.t().dot(&d));
            let db: Array1<f64> = d.sum_axis(Axis(0));
            grad_view(&self.params, grad, 2 * l + 1).row_mut(0).scaled_add(1.0, &db);
            if l > 0 {
                let mut dp = d.dot(&self.params.view(2 * l).t());
                dp.zip_mut_with(&tape.hidden[l - 1], |g, &a| {
                    if a <= 0.0 {
                        *g = 0.0
                    }
                });
                d = dp;
            }
        }
    }
}
