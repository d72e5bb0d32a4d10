use serde::{Deserialize, Serialize};

use super::matrix::{axpy, dot, Matrix};
use super::sigmoid;
use crate::error::{Error, Result};

/// Weights of one LSTM layer. Gate rows are stacked as `[input, forget, cell, output]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LstmParams {
    pub w_input: Matrix,
    pub w_hidden: Matrix,
    pub bias: Vec<f64>,
}

/// Gradient buffers share the parameter layout.
pub type LstmGrads = LstmParams;

impl LstmParams {
    pub fn zeros(input_dim: usize, width: usize) -> Self {
        LstmParams {
            w_input: Matrix::zeros(4 * width, input_dim),
            w_hidden: Matrix::zeros(4 * width, width),
            bias: vec![0.0; 4 * width],
        }
    }

    #[inline]
    pub fn width(&self) -> usize {
        self.w_hidden.cols()
    }

    #[inline]
    pub fn input_dim(&self) -> usize {
        self.w_input.cols()
    }

    fn check(&self) -> Result<()> {
        let h = self.width();
        if self.w_hidden.rows() != 4 * h || self.w_input.rows() != 4 * h || self.bias.len() != 4 * h {
            return Err(Error::shape(format!(
                "lstm params inconsistent with width {h}: w_input {}x{}, w_hidden {}x{}, bias {}",
                self.w_input.rows(),
                self.w_input.cols(),
                self.w_hidden.rows(),
                self.w_hidden.cols(),
                self.bias.len()
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RecurrentState {
    pub hidden: Vec<f64>,
    pub cell: Vec<f64>,
}

impl RecurrentState {
    pub fn zeros(width: usize) -> Self {
        RecurrentState {
            hidden: vec![0.0; width],
            cell: vec![0.0; width],
        }
    }
}

/// Core recurrence given the precomputed input projection `w_input · x`.
/// Writes activated gates into `gates`, and the new cell/hidden into `state`.
#[inline]
fn step_core(params: &LstmParams, x_proj: &[f64], state: &mut RecurrentState, gates: &mut [f64], tanh_c: &mut [f64]) {
    let h = params.width();
    for r in 0..4 * h {
        gates[r] = x_proj[r] + dot(params.w_hidden.row(r), &state.hidden) + params.bias[r];
    }
    for j in 0..h {
        let i = sigmoid(gates[j]);
        let f = sigmoid(gates[h + j]);
        let g = gates[2 * h + j].tanh();
        let o = sigmoid(gates[3 * h + j]);
        gates[j] = i;
        gates[h + j] = f;
        gates[2 * h + j] = g;
        gates[3 * h + j] = o;
        let c = f * state.cell[j] + i * g;
        let tc = c.tanh();
        state.cell[j] = c;
        tanh_c[j] = tc;
        state.hidden[j] = o * tc;
    }
}

/// One LSTM step. The returned output is the new hidden vector.
pub fn lstm_step(state: &RecurrentState, input: &[f64], params: &LstmParams) -> Result<(RecurrentState, Vec<f64>)> {
    params.check()?;
    let h = params.width();
    if input.len() != params.input_dim() || state.hidden.len() != h || state.cell.len() != h {
        return Err(Error::shape(format!(
            "lstm_step: input {} (want {}), state {}/{} (want {h})",
            input.len(),
            params.input_dim(),
            state.hidden.len(),
            state.cell.len()
        )));
    }
    let x_proj = params.w_input.matvec(input);
    let mut next = state.clone();
    let mut gates = vec![0.0; 4 * h];
    let mut tanh_c = vec![0.0; h];
    step_core(params, &x_proj, &mut next, &mut gates, &mut tanh_c);
    let out = next.hidden.clone();
    Ok((next, out))
}

/// Activations saved by a sequence forward pass for backpropagation through time.
#[derive(Debug, Clone)]
pub struct LstmCache {
    gates: Matrix,
    cells: Matrix,
    tanh_cells: Matrix,
    hiddens: Matrix,
}

impl LstmParams {
    /// Runs the layer over `inputs` (T×input_dim) from a zero state.
    /// Returns the hidden sequence (T×width).
    pub fn forward_seq(&self, inputs: &Matrix) -> (Matrix, LstmCache) {
        let t_len = inputs.rows();
        let h = self.width();
        let x_proj = inputs.mul_transposed(&self.w_input);
        let mut cache = LstmCache {
            gates: Matrix::zeros(t_len, 4 * h),
            cells: Matrix::zeros(t_len, h),
            tanh_cells: Matrix::zeros(t_len, h),
            hiddens: Matrix::zeros(t_len, h),
        };
        let mut state = RecurrentState::zeros(h);
        for t in 0..t_len {
            step_core(self, x_proj.row(t), &mut state, cache.gates.row_mut(t), cache.tanh_cells.row_mut(t));
            cache.cells.row_mut(t).copy_from_slice(&state.cell);
            cache.hiddens.row_mut(t).copy_from_slice(&state.hidden);
        }
        (cache.hiddens.clone(), cache)
    }

    /// Backpropagation through time. `d_out` is ∂L/∂hidden for every step.
    /// Accumulates into `grads` and returns ∂L/∂inputs.
    pub fn backward_seq(&self, inputs: &Matrix, cache: &LstmCache, d_out: &Matrix, grads: &mut LstmGrads) -> Matrix {
        let t_len = inputs.rows();
        let h = self.width();
        let mut d_gates = Matrix::zeros(t_len, 4 * h);
        let mut dh_next = vec![0.0; h];
        let mut dc_next = vec![0.0; h];
        let zeros = vec![0.0; h];
        for t in (0..t_len).rev() {
            let gates = cache.gates.row(t);
            let tc = cache.tanh_cells.row(t);
            let c_prev = if t > 0 { cache.cells.row(t - 1) } else { &zeros };
            let dh_out = d_out.row(t);
            let dg = d_gates.row_mut(t);
            for j in 0..h {
                let (i, f, g, o) = (gates[j], gates[h + j], gates[2 * h + j], gates[3 * h + j]);
                let dh = dh_out[j] + dh_next[j];
                let d_o = dh * tc[j];
                let dc = dh * o * (1.0 - tc[j] * tc[j]) + dc_next[j];
                dg[j] = dc * g * i * (1.0 - i);
                dg[h + j] = dc * c_prev[j] * f * (1.0 - f);
                dg[2 * h + j] = dc * i * (1.0 - g * g);
                dg[3 * h + j] = d_o * o * (1.0 - o);
                dc_next[j] = dc * f;
            }
            dh_next.iter_mut().for_each(|x| *x = 0.0);
            self.w_hidden.matvec_t_acc(d_gates.row(t), &mut dh_next);
        }
        grads.w_input.add_transposed_product(&d_gates, inputs);
        for t in 0..t_len {
            let dg = d_gates.row(t);
            axpy(1.0, dg, &mut grads.bias);
            if t > 0 {
                grads.w_hidden.add_outer(dg, cache.hiddens.row(t - 1));
            }
        }
        self.w_input.left_mul(&d_gates)
    }
}

/// Concatenates each non-overlapping group of `factor` rows, zero-padding the last group.
fn reduce_time(x: &Matrix, factor: usize) -> Matrix {
    let steps = x.rows().div_ceil(factor);
    let w = x.cols();
    let mut out = Matrix::zeros(steps, w * factor);
    for r in 0..x.rows() {
        let (s, k) = (r / factor, r % factor);
        out.row_mut(s)[k * w..(k + 1) * w].copy_from_slice(x.row(r));
    }
    out
}

fn expand_time(d: &Matrix, factor: usize, rows: usize) -> Matrix {
    let w = d.cols() / factor;
    let mut out = Matrix::zeros(rows, w);
    for r in 0..rows {
        let (s, k) = (r / factor, r % factor);
        out.row_mut(r).copy_from_slice(&d.row(s)[k * w..(k + 1) * w]);
    }
    out
}

/// A stack of unidirectional LSTM layers with an optional time-reduction stage
/// after one of the layers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LstmStack {
    pub layers: Vec<LstmParams>,
    /// `(after_layer, factor)`: frames are grouped after layer index `after_layer`.
    pub reduction: Option<(usize, usize)>,
    /// Constant factor applied to every input frame before the first layer.
    #[serde(default = "unit_scale")]
    pub input_scale: f64,
}

fn unit_scale() -> f64 {
    1.0
}

#[derive(Debug, Clone)]
pub struct LstmStackCache {
    inputs: Vec<Matrix>,
    caches: Vec<LstmCache>,
    pre_reduction_rows: usize,
}

impl LstmStack {
    /// Builds a zero-initialised stack. With a reduction, the layer after the
    /// reduction point consumes `factor × width` inputs.
    pub fn zeros(input_dim: usize, width: usize, layers: usize, reduction: Option<(usize, usize)>) -> Self {
        let layers = (0..layers)
            .map(|l| {
                let in_dim = match (l, reduction) {
                    (0, _) => input_dim,
                    (l, Some((after, factor))) if l == after + 1 => width * factor,
                    _ => width,
                };
                LstmParams::zeros(in_dim, width)
            })
            .collect();
        LstmStack {
            layers,
            reduction,
            input_scale: 1.0,
        }
    }

    pub fn with_input_scale(mut self, scale: f64) -> Self {
        self.input_scale = scale;
        self
    }

    pub fn width(&self) -> usize {
        self.layers.last().map_or(0, LstmParams::width)
    }

    pub fn input_dim(&self) -> usize {
        self.layers.first().map_or(0, LstmParams::input_dim)
    }

    /// Number of output rows produced for `frames` input rows.
    pub fn output_len(&self, frames: usize) -> usize {
        match self.reduction {
            Some((_, factor)) => frames.div_ceil(factor),
            None => frames,
        }
    }

    pub fn forward(&self, inputs: &Matrix) -> Result<(Matrix, LstmStackCache)> {
        if inputs.cols() != self.input_dim() {
            return Err(Error::shape(format!(
                "stack expects {} input features, got {}",
                self.input_dim(),
                inputs.cols()
            )));
        }
        let mut cache = LstmStackCache {
            inputs: Vec::with_capacity(self.layers.len()),
            caches: Vec::with_capacity(self.layers.len()),
            pre_reduction_rows: 0,
        };
        let mut x = inputs.clone();
        if self.input_scale != 1.0 {
            x.data_mut().iter_mut().for_each(|v| *v *= self.input_scale);
        }
        for (l, layer) in self.layers.iter().enumerate() {
            let (h, c) = layer.forward_seq(&x);
            cache.inputs.push(x);
            cache.caches.push(c);
            x = match self.reduction {
                Some((after, factor)) if after == l => {
                    cache.pre_reduction_rows = h.rows();
                    reduce_time(&h, factor)
                }
                _ => h,
            };
        }
        Ok((x, cache))
    }

    /// Output only, without the cache.
    pub fn run(&self, inputs: &Matrix) -> Result<Matrix> {
        Ok(self.forward(inputs)?.0)
    }

    /// Backward through all layers. Returns ∂L/∂inputs.
    pub fn backward(&self, cache: &LstmStackCache, d_out: &Matrix, grads: &mut LstmStack) -> Matrix {
        let mut d = d_out.clone();
        for l in (0..self.layers.len()).rev() {
            if let Some((after, factor)) = self.reduction {
                if after == l {
                    d = expand_time(&d, factor, cache.pre_reduction_rows);
                }
            }
            d = self.layers[l].backward_seq(&cache.inputs[l], &cache.caches[l], &d, &mut grads.layers[l]);
        }
        if self.input_scale != 1.0 {
            d.data_mut().iter_mut().for_each(|v| *v *= self.input_scale);
        }
        d
    }

    pub fn tensors(&self, prefix: &str) -> Vec<(String, &[f64])> {
        let mut out = Vec::new();
        for (l, p) in self.layers.iter().enumerate() {
            out.push((format!("{prefix}.{l}.w_input"), p.w_input.data()));
            out.push((format!("{prefix}.{l}.w_hidden"), p.w_hidden.data()));
            out.push((format!("{prefix}.{l}.bias"), &p.bias[..]));
        }
        out
    }

    pub fn tensors_mut(&mut self, prefix: &str) -> Vec<(String, &mut [f64])> {
        let mut out = Vec::new();
        for (l, p) in self.layers.iter_mut().enumerate() {
            out.push((format!("{prefix}.{l}.w_input"), p.w_input.data_mut()));
            out.push((format!("{prefix}.{l}.w_hidden"), p.w_hidden.data_mut()));
            out.push((format!("{prefix}.{l}.bias"), &mut p.bias[..]));
        }
        out
    }

    /// Starts an incremental (frame-by-frame) run of this stack.
    pub fn stream(&self) -> LstmStackStream<'_> {
        LstmStackStream {
            stack: self,
            states: self.layers.iter().map(|l| RecurrentState::zeros(l.width())).collect(),
            pending: Vec::new(),
            scratch_gates: Vec::new(),
            scratch_tanh: Vec::new(),
        }
    }
}

/// Incremental evaluation of an [`LstmStack`]. Produces exactly the rows of
/// [`LstmStack::forward`] for every complete reduction group seen so far.
pub struct LstmStackStream<'a> {
    stack: &'a LstmStack,
    states: Vec<RecurrentState>,
    pending: Vec<f64>,
    scratch_gates: Vec<f64>,
    scratch_tanh: Vec<f64>,
}

impl LstmStackStream<'_> {
    fn run_layer(&mut self, l: usize, x: &[f64]) -> Vec<f64> {
        let layer = &self.stack.layers[l];
        let h = layer.width();
        self.scratch_gates.resize(4 * h, 0.0);
        self.scratch_tanh.resize(h, 0.0);
        let x_proj = layer.w_input.matvec(x);
        step_core(layer, &x_proj, &mut self.states[l], &mut self.scratch_gates, &mut self.scratch_tanh);
        self.states[l].hidden.clone()
    }

    fn run_from(&mut self, start: usize, mut x: Vec<f64>) -> Vec<f64> {
        for l in start..self.stack.layers.len() {
            x = self.run_layer(l, &x);
        }
        x
    }

    /// Feeds one input frame; returns an output row when one becomes available.
    pub fn push(&mut self, frame: &[f64]) -> Option<Vec<f64>> {
        let scale = self.stack.input_scale;
        let frame: Vec<f64> = if scale != 1.0 {
            frame.iter().map(|v| v * scale).collect()
        } else {
            frame.to_vec()
        };
        match self.stack.reduction {
            None => Some(self.run_from(0, frame)),
            Some((after, factor)) => {
                let mut x = frame;
                for l in 0..=after {
                    x = self.run_layer(l, &x);
                }
                self.pending.extend_from_slice(&x);
                if self.pending.len() == factor * x.len() {
                    let grouped = std::mem::take(&mut self.pending);
                    Some(self.run_from(after + 1, grouped))
                } else {
                    None
                }
            }
        }
    }

    /// Flushes a partial reduction group (zero-padded), as at end of input.
    pub fn finish(&mut self) -> Option<Vec<f64>> {
        let (after, factor) = self.stack.reduction?;
        if self.pending.is_empty() {
            return None;
        }
        let mut grouped = std::mem::take(&mut self.pending);
        let width = self.stack.layers[after].width();
        grouped.resize(factor * width, 0.0);
        Some(self.run_from(after + 1, grouped))
    }

    /// Hidden state of the top layer.
    pub fn top_hidden(&self) -> &[f64] {
        &self.states.last().expect("non-empty stack").hidden
    }
}
