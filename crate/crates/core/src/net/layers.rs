//! Hand-written layers with explicit backward passes.
//!
//! Every layer doubles as its own gradient accumulator: `zeros_like` gives a
//! layer of the same shape whose parameters are filled by `backward`.

use nalgebra::DMatrix;
use rand::Rng;
use serde::{Deserialize, Serialize};

/// Callback receiving a tensor's name, shape and values.
pub type TensorVisitor<'a> = dyn FnMut(&str, &[usize], &[f64]) + 'a;

/// Visitor over named parameter tensors, in a fixed order.
pub trait Params {
    fn visit(&self, f: &mut TensorVisitor);
    fn visit_mut(&mut self, f: &mut dyn FnMut(&str, &mut [f64]));

    fn num_params(&self) -> usize {
        let mut n = 0;
        self.visit(&mut |_, _, d| n += d.len());
        n
    }

    fn flatten(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.num_params());
        self.visit(&mut |_, _, d| out.extend_from_slice(d));
        out
    }

    fn assign(&mut self, flat: &[f64]) {
        let mut offset = 0;
        self.visit_mut(&mut |_, d| {
            d.copy_from_slice(&flat[offset..offset + d.len()]);
            offset += d.len();
        });
        assert_eq!(offset, flat.len(), "flat parameter length mismatch");
    }

    fn fill(&mut self, value: f64) {
        self.visit_mut(&mut |_, d| d.fill(value));
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    #[default]
    Tanh,
    Identity,
}

impl Activation {
    pub fn apply(self, x: &mut [f64]) {
        if self == Activation::Tanh {
            x.iter_mut().for_each(|v| *v = v.tanh());
        }
    }

    /// Multiplies `grad` by the derivative, given the activation *output*.
    pub fn backprop(self, output: &[f64], grad: &mut [f64]) {
        if self == Activation::Tanh {
            for (g, y) in grad.iter_mut().zip(output) {
                *g *= 1.0 - y * y;
            }
        }
    }
}

fn uniform_init<R: Rng>(rng: &mut R, n: usize, limit: f64) -> Vec<f64> {
    (0..n).map(|_| rng.random_range(-limit..=limit)).collect()
}

/// Fully connected layer, `y = W x + b` with `W` stored row-major
/// (`outputs x inputs`).
#[derive(Debug, Clone, PartialEq)]
pub struct Dense {
    pub inputs: usize,
    pub outputs: usize,
    pub weight: Vec<f64>,
    pub bias: Vec<f64>,
}

impl Dense {
    pub fn zeros(inputs: usize, outputs: usize) -> Self {
        Self {
            inputs,
            outputs,
            weight: vec![0.0; inputs * outputs],
            bias: vec![0.0; outputs],
        }
    }

    /// Glorot-uniform weights, zero bias.
    pub fn glorot<R: Rng>(rng: &mut R, inputs: usize, outputs: usize) -> Self {
        let limit = (6.0 / (inputs + outputs) as f64).sqrt();
        Self {
            inputs,
            outputs,
            weight: uniform_init(rng, inputs * outputs, limit),
            bias: vec![0.0; outputs],
        }
    }

    pub fn zeros_like(&self) -> Self {
        Self::zeros(self.inputs, self.outputs)
    }

    pub fn forward(&self, x: &[f64]) -> Vec<f64> {
        debug_assert_eq!(x.len(), self.inputs);
        self.weight
            .chunks_exact(self.inputs)
            .zip(&self.bias)
            .map(|(row, b)| b + row.iter().zip(x).map(|(w, v)| w * v).sum::<f64>())
            .collect()
    }

    /// Accumulates parameter gradients into `grads` and returns `dL/dx`.
    pub fn backward(&self, x: &[f64], grad_out: &[f64], grads: &mut Dense) -> Vec<f64> {
        let mut grad_in = vec![0.0; self.inputs];
        for (o, &g) in grad_out.iter().enumerate() {
            if g == 0.0 {
                continue;
            }
            grads.bias[o] += g;
            let row = &self.weight[o * self.inputs..(o + 1) * self.inputs];
            let grow = &mut grads.weight[o * self.inputs..(o + 1) * self.inputs];
            for i in 0..self.inputs {
                grow[i] += g * x[i];
                grad_in[i] += g * row[i];
            }
        }
        grad_in
    }

    fn visit_named(&self, prefix: &str, f: &mut TensorVisitor) {
        f(&format!("{prefix}.weight"), &[self.outputs, self.inputs], &self.weight);
        f(&format!("{prefix}.bias"), &[self.outputs], &self.bias);
    }

    fn visit_named_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut [f64])) {
        f(&format!("{prefix}.weight"), &mut self.weight);
        f(&format!("{prefix}.bias"), &mut self.bias);
    }
}

impl Params for Dense {
    fn visit(&self, f: &mut TensorVisitor) {
        self.visit_named("dense", f)
    }

    fn visit_mut(&mut self, f: &mut dyn FnMut(&str, &mut [f64])) {
        self.visit_named_mut("dense", f)
    }
}

/// 3x3 convolution, stride 1, zero padding 1 (output keeps the input size).
/// Tensors are channel-major: `[channel][row][col]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Conv2d {
    pub in_channels: usize,
    pub out_channels: usize,
    /// `out x in x 3 x 3`
    pub weight: Vec<f64>,
    pub bias: Vec<f64>,
}

const K: usize = 3;

impl Conv2d {
    pub fn zeros(in_channels: usize, out_channels: usize) -> Self {
        Self {
            in_channels,
            out_channels,
            weight: vec![0.0; out_channels * in_channels * K * K],
            bias: vec![0.0; out_channels],
        }
    }

    pub fn glorot<R: Rng>(rng: &mut R, in_channels: usize, out_channels: usize) -> Self {
        let fan = (in_channels + out_channels) * K * K;
        let limit = (6.0 / fan as f64).sqrt();
        Self {
            in_channels,
            out_channels,
            weight: uniform_init(rng, out_channels * in_channels * K * K, limit),
            bias: vec![0.0; out_channels],
        }
    }

    pub fn zeros_like(&self) -> Self {
        Self::zeros(self.in_channels, self.out_channels)
    }

    pub fn forward(&self, x: &[f64], h: usize, w: usize) -> Vec<f64> {
        debug_assert_eq!(x.len(), self.in_channels * h * w);
        let mut out = vec![0.0; self.out_channels * h * w];
        for oc in 0..self.out_channels {
            let plane = &mut out[oc * h * w..(oc + 1) * h * w];
            plane.fill(self.bias[oc]);
            for ic in 0..self.in_channels {
                let input = &x[ic * h * w..(ic + 1) * h * w];
                let kern = &self.weight[(oc * self.in_channels + ic) * K * K..][..K * K];
                for (ky, krow) in kern.chunks_exact(K).enumerate() {
                    for (kx, &kv) in krow.iter().enumerate() {
                        // output (r, c) reads input (r + ky - 1, c + kx - 1)
                        let (r0, r1) = (ky.saturating_sub(1), (h + ky - 1).min(h));
                        for ir in r0..r1 {
                            let orow = ir + 1 - ky;
                            let (c0, c1) = (kx.saturating_sub(1), (w + kx - 1).min(w));
                            let src = &input[ir * w + c0..ir * w + c1];
                            let dst = &mut plane[orow * w + c0 + 1 - kx..orow * w + c1 + 1 - kx];
                            for (d, s) in dst.iter_mut().zip(src) {
                                *d += kv * s;
                            }
                        }
                    }
                }
            }
        }
        out
    }

    /// Accumulates parameter gradients; returns `dL/dx` when requested.
    pub fn backward(
        &self,
        x: &[f64],
        h: usize,
        w: usize,
        grad_out: &[f64],
        grads: &mut Conv2d,
        want_input_grad: bool,
    ) -> Option<Vec<f64>> {
        let mut grad_in = want_input_grad.then(|| vec![0.0; self.in_channels * h * w]);
        for oc in 0..self.out_channels {
            let gplane = &grad_out[oc * h * w..(oc + 1) * h * w];
            grads.bias[oc] += gplane.iter().sum::<f64>();
            for ic in 0..self.in_channels {
                let input = &x[ic * h * w..(ic + 1) * h * w];
                let base = (oc * self.in_channels + ic) * K * K;
                for ky in 0..K {
                    for kx in 0..K {
                        let kv = self.weight[base + ky * K + kx];
                        let (r0, r1) = (ky.saturating_sub(1), (h + ky - 1).min(h));
                        let (c0, c1) = (kx.saturating_sub(1), (w + kx - 1).min(w));
                        let mut acc = 0.0;
                        for ir in r0..r1 {
                            let orow = ir + 1 - ky;
                            let src = &input[ir * w + c0..ir * w + c1];
                            let g = &gplane[orow * w + c0 + 1 - kx..orow * w + c1 + 1 - kx];
                            acc += src.iter().zip(g).map(|(a, b)| a * b).sum::<f64>();
                            if let Some(gi) = grad_in.as_mut() {
                                let dst = &mut gi[ic * h * w + ir * w + c0..ic * h * w + ir * w + c1];
                                for (d, gv) in dst.iter_mut().zip(g) {
                                    *d += kv * gv;
                                }
                            }
                        }
                        grads.weight[base + ky * K + kx] += acc;
                    }
                }
            }
        }
        grad_in
    }

    fn visit_named(&self, prefix: &str, f: &mut TensorVisitor) {
        f(
            &format!("{prefix}.weight"),
            &[self.out_channels, self.in_channels, K, K],
            &self.weight,
        );
        f(&format!("{prefix}.bias"), &[self.out_channels], &self.bias);
    }

    fn visit_named_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut [f64])) {
        f(&format!("{prefix}.weight"), &mut self.weight);
        f(&format!("{prefix}.bias"), &mut self.bias);
    }
}

impl Params for Conv2d {
    fn visit(&self, f: &mut TensorVisitor) {
        self.visit_named("conv", f)
    }

    fn visit_mut(&mut self, f: &mut dyn FnMut(&str, &mut [f64])) {
        self.visit_named_mut("conv", f)
    }
}

/// 2x2 average pooling with stride 2. Odd trailing rows/columns are dropped.
pub fn avg_pool2(x: &[f64], channels: usize, h: usize, w: usize) -> Vec<f64> {
    let (oh, ow) = (h / 2, w / 2);
    let mut out = vec![0.0; channels * oh * ow];
    for c in 0..channels {
        for r in 0..oh {
            for col in 0..ow {
                let at = |dr: usize, dc: usize| x[c * h * w + (2 * r + dr) * w + 2 * col + dc];
                out[c * oh * ow + r * ow + col] = 0.25 * (at(0, 0) + at(0, 1) + at(1, 0) + at(1, 1));
            }
        }
    }
    out
}

pub fn avg_pool2_backward(grad_out: &[f64], channels: usize, h: usize, w: usize) -> Vec<f64> {
    let (oh, ow) = (h / 2, w / 2);
    let mut grad_in = vec![0.0; channels * h * w];
    for c in 0..channels {
        for r in 0..oh {
            for col in 0..ow {
                let g = 0.25 * grad_out[c * oh * ow + r * ow + col];
                for (dr, dc) in [(0, 0), (0, 1), (1, 0), (1, 1)] {
                    grad_in[c * h * w + (2 * r + dr) * w + 2 * col + dc] += g;
                }
            }
        }
    }
    grad_in
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// LSTM cell. Gate rows are stacked `[input, forget, cell, output]`, each
/// `hidden` rows of `inputs + hidden` columns (`[x, h_prev]`).
#[derive(Debug, Clone, PartialEq)]
pub struct LstmCell {
    pub inputs: usize,
    pub hidden: usize,
    pub weight: Vec<f64>,
    pub bias: Vec<f64>,
}

/// Batched per-step values; one column per sequence.
#[derive(Debug, Clone)]
pub struct LstmBatchStep {
    concat: DMatrix<f64>,
    i: DMatrix<f64>,
    f: DMatrix<f64>,
    g: DMatrix<f64>,
    o: DMatrix<f64>,
    c_prev: DMatrix<f64>,
    tanh_c: DMatrix<f64>,
    pub h: DMatrix<f64>,
    pub c: DMatrix<f64>,
}

/// Per-step values kept for backpropagation through time.
#[derive(Debug, Clone)]
pub struct LstmStep {
    concat: Vec<f64>,
    i: Vec<f64>,
    f: Vec<f64>,
    g: Vec<f64>,
    o: Vec<f64>,
    c_prev: Vec<f64>,
    tanh_c: Vec<f64>,
    pub h: Vec<f64>,
    pub c: Vec<f64>,
}

impl LstmCell {
    pub fn zeros(inputs: usize, hidden: usize) -> Self {
        Self {
            inputs,
            hidden,
            weight: vec![0.0; 4 * hidden * (inputs + hidden)],
            bias: vec![0.0; 4 * hidden],
        }
    }

    /// Glorot-uniform weights; forget-gate bias starts at 1.
    pub fn glorot<R: Rng>(rng: &mut R, inputs: usize, hidden: usize) -> Self {
        let limit = (6.0 / (inputs + 2 * hidden) as f64).sqrt();
        let mut bias = vec![0.0; 4 * hidden];
        bias[hidden..2 * hidden].fill(1.0);
        Self {
            inputs,
            hidden,
            weight: uniform_init(rng, 4 * hidden * (inputs + hidden), limit),
            bias,
        }
    }

    pub fn zeros_like(&self) -> Self {
        Self::zeros(self.inputs, self.hidden)
    }

    pub fn step(&self, x: &[f64], h_prev: &[f64], c_prev: &[f64]) -> LstmStep {
        let hd = self.hidden;
        let cols = self.inputs + hd;
        let mut concat = Vec::with_capacity(cols);
        concat.extend_from_slice(x);
        concat.extend_from_slice(h_prev);
        let pre: Vec<f64> = self
            .weight
            .chunks_exact(cols)
            .zip(&self.bias)
            .map(|(row, b)| b + row.iter().zip(&concat).map(|(w, v)| w * v).sum::<f64>())
            .collect();
        let i: Vec<f64> = pre[..hd].iter().map(|&v| sigmoid(v)).collect();
        let f: Vec<f64> = pre[hd..2 * hd].iter().map(|&v| sigmoid(v)).collect();
        let g: Vec<f64> = pre[2 * hd..3 * hd].iter().map(|v| v.tanh()).collect();
        let o: Vec<f64> = pre[3 * hd..].iter().map(|&v| sigmoid(v)).collect();
        let c: Vec<f64> = (0..hd).map(|k| f[k] * c_prev[k] + i[k] * g[k]).collect();
        let tanh_c: Vec<f64> = c.iter().map(|v| v.tanh()).collect();
        let h = (0..hd).map(|k| o[k] * tanh_c[k]).collect();
        LstmStep {
            concat,
            i,
            f,
            g,
            o,
            c_prev: c_prev.to_vec(),
            tanh_c,
            h,
            c,
        }
    }

    /// Runs a sequence from zero state, returning every step.
    pub fn run(&self, inputs: &[Vec<f64>]) -> Vec<LstmStep> {
        let mut h = vec![0.0; self.hidden];
        let mut c = vec![0.0; self.hidden];
        let mut steps = Vec::with_capacity(inputs.len());
        for x in inputs {
            let s = self.step(x, &h, &c);
            h.clone_from(&s.h);
            c.clone_from(&s.c);
            steps.push(s);
        }
        steps
    }

    /// Backpropagation through time from a gradient on the final hidden
    /// state only. Returns gradients with respect to each input.
    pub fn backward(&self, steps: &[LstmStep], grad_h_last: &[f64], grads: &mut LstmCell) -> Vec<Vec<f64>> {
        let hd = self.hidden;
        let cols = self.inputs + hd;
        let mut dh = grad_h_last.to_vec();
        let mut dc = vec![0.0; hd];
        let mut dpre = vec![0.0; 4 * hd];
        let mut grad_inputs = vec![Vec::new(); steps.len()];
        for (t, s) in steps.iter().enumerate().rev() {
            for k in 0..hd {
                let do_ = dh[k] * s.tanh_c[k];
                let dck = dc[k] + dh[k] * s.o[k] * (1.0 - s.tanh_c[k] * s.tanh_c[k]);
                let di = dck * s.g[k];
                let df = dck * s.c_prev[k];
                let dg = dck * s.i[k];
                dpre[k] = di * s.i[k] * (1.0 - s.i[k]);
                dpre[hd + k] = df * s.f[k] * (1.0 - s.f[k]);
                dpre[2 * hd + k] = dg * (1.0 - s.g[k] * s.g[k]);
                dpre[3 * hd + k] = do_ * s.o[k] * (1.0 - s.o[k]);
                dc[k] = dck * s.f[k];
            }
            let mut dconcat = vec![0.0; cols];
            for (r, &gp) in dpre.iter().enumerate() {
                if gp == 0.0 {
                    continue;
                }
                grads.bias[r] += gp;
                let row = &self.weight[r * cols..(r + 1) * cols];
                let grow = &mut grads.weight[r * cols..(r + 1) * cols];
                for j in 0..cols {
                    grow[j] += gp * s.concat[j];
                    dconcat[j] += gp * row[j];
                }
            }
            dh.copy_from_slice(&dconcat[self.inputs..]);
            dconcat.truncate(self.inputs);
            grad_inputs[t] = dconcat;
        }
        grad_inputs
    }

    fn weight_matrix(&self) -> DMatrix<f64> {
        DMatrix::from_row_slice(4 * self.hidden, self.inputs + self.hidden, &self.weight)
    }

    /// Runs a batch of equal-length sequences from zero state. `inputs[t]`
    /// holds step `t` with one column per sequence.
    pub fn run_batch(&self, inputs: &[DMatrix<f64>]) -> Vec<LstmBatchStep> {
        let hd = self.hidden;
        let w = self.weight_matrix();
        let Some(first) = inputs.first() else {
            return Vec::new();
        };
        let n = first.ncols();
        let mut h = DMatrix::zeros(hd, n);
        let mut c = DMatrix::zeros(hd, n);
        let mut steps = Vec::with_capacity(inputs.len());
        for (t, x) in inputs.iter().enumerate() {
            let mut concat = DMatrix::zeros(self.inputs + hd, n);
            concat.rows_mut(0, self.inputs).copy_from(x);
            concat.rows_mut(self.inputs, hd).copy_from(&h);
            // the state starts at zero, so the first step only sees the input
            let mut pre = if t == 0 {
                w.columns(0, self.inputs) * x
            } else {
                &w * &concat
            };
            for mut col in pre.column_iter_mut() {
                for (v, b) in col.iter_mut().zip(&self.bias) {
                    *v += b;
                }
            }
            let gate = |k: usize, f: fn(f64) -> f64| pre.rows(k * hd, hd).map(f);
            let i = gate(0, sigmoid);
            let f = gate(1, sigmoid);
            let g = gate(2, f64::tanh);
            let o = gate(3, sigmoid);
            let mut c_new = DMatrix::zeros(hd, n);
            for ((((cn, fv), cv), iv), gv) in c_new.iter_mut().zip(f.iter()).zip(c.iter()).zip(i.iter()).zip(g.iter()) {
                *cn = fv * cv + iv * gv;
            }
            let tanh_c = c_new.map(f64::tanh);
            h = o.component_mul(&tanh_c);
            let c_prev = std::mem::replace(&mut c, c_new.clone());
            steps.push(LstmBatchStep {
                concat,
                i,
                f,
                g,
                o,
                c_prev,
                tanh_c,
                h: h.clone(),
                c: c_new,
            });
        }
        steps
    }

    /// Batched counterpart of [`LstmCell::backward`]; gradients are summed
    /// over the batch. Input gradients are not returned.
    pub fn backward_batch(&self, steps: &[LstmBatchStep], grad_h_last: &DMatrix<f64>, grads: &mut LstmCell) {
        let hd = self.hidden;
        let cols = self.inputs + hd;
        let w = self.weight_matrix();
        let n = grad_h_last.ncols();
        let mut dh = grad_h_last.clone();
        let mut dc = DMatrix::<f64>::zeros(hd, n);
        let mut dpre = DMatrix::<f64>::zeros(4 * hd, n);
        let mut gw = DMatrix::<f64>::zeros(4 * hd, cols);
        for (t, s) in steps.iter().enumerate().rev() {
            for j in 0..n {
                fn col(m: &DMatrix<f64>, j: usize, hd: usize) -> &[f64] {
                    &m.as_slice()[j * hd..(j + 1) * hd]
                }
                let (si, sf, sg, so, tc, cp) = (
                    col(&s.i, j, hd),
                    col(&s.f, j, hd),
                    col(&s.g, j, hd),
                    col(&s.o, j, hd),
                    col(&s.tanh_c, j, hd),
                    col(&s.c_prev, j, hd),
                );
                let dhj = &dh.as_slice()[j * hd..(j + 1) * hd];
                let dcj = &mut dc.as_mut_slice()[j * hd..(j + 1) * hd];
                let dp = &mut dpre.as_mut_slice()[j * 4 * hd..(j + 1) * 4 * hd];
                for k in 0..hd {
                    let (i, f, g, o, tck) = (si[k], sf[k], sg[k], so[k], tc[k]);
                    let dck = dcj[k] + dhj[k] * o * (1.0 - tck * tck);
                    dp[k] = dck * g * i * (1.0 - i);
                    dp[hd + k] = dck * cp[k] * f * (1.0 - f);
                    dp[2 * hd + k] = dck * i * (1.0 - g * g);
                    dp[3 * hd + k] = dhj[k] * tck * o * (1.0 - o);
                    dcj[k] = dck * f;
                }
            }
            gw.gemm(1.0, &dpre, &s.concat.transpose(), 1.0);
            for (r, b) in grads.bias.iter_mut().enumerate() {
                *b += dpre.row(r).sum();
            }
            if t > 0 {
                let dconcat = w.columns(self.inputs, hd).transpose() * &dpre;
                dh.copy_from(&dconcat);
            }
        }
        for r in 0..4 * hd {
            for c in 0..cols {
                grads.weight[r * cols + c] += gw[(r, c)];
            }
        }
    }

    fn visit_named(&self, prefix: &str, f: &mut TensorVisitor) {
        f(
            &format!("{prefix}.weight"),
            &[4 * self.hidden, self.inputs + self.hidden],
            &self.weight,
        );
        f(&format!("{prefix}.bias"), &[4 * self.hidden], &self.bias);
    }

    fn visit_named_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut [f64])) {
        f(&format!("{prefix}.weight"), &mut self.weight);
        f(&format!("{prefix}.bias"), &mut self.bias);
    }
}

impl Params for LstmCell {
    fn visit(&self, f: &mut TensorVisitor) {
        self.visit_named("lstm", f)
    }

    fn visit_mut(&mut self, f: &mut dyn FnMut(&str, &mut [f64])) {
        self.visit_named_mut("lstm", f)
    }
}

pub(crate) trait NamedParams {
    fn visit_prefixed(&self, prefix: &str, f: &mut TensorVisitor);
    fn visit_prefixed_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut [f64]));
}

macro_rules! named_params {
    ($($t:ty),*) => {$(
        impl NamedParams for $t {
            fn visit_prefixed(&self, prefix: &str, f: &mut TensorVisitor) {
                self.visit_named(prefix, f)
            }
            fn visit_prefixed_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut [f64])) {
                self.visit_named_mut(prefix, f)
            }
        }
    )*};
}

named_params!(Dense, Conv2d, LstmCell);

#[cfg(test)]
mod tests {
    use super::*;
    use crate::net::gradcheck::{check_gradients, GradCheck};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn random_vec(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
        (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()
    }

    /// Scalar loss used for the checks: sum of output * fixed random weights.
    fn weighted_sum(y: &[f64], w: &[f64]) -> f64 {
        y.iter().zip(w).map(|(a, b)| a * b).sum()
    }

    #[test]
    fn dense_forward_by_hand() {
        let d = Dense {
            inputs: 2,
            outputs: 2,
            weight: vec![1.0, 2.0, 3.0, 4.0],
            bias: vec![0.5, -0.5],
        };
        assert_eq!(d.forward(&[1.0, -1.0]), vec![-0.5, -1.5]);
    }

    #[test]
    fn conv_matches_naive_padding() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let conv = Conv2d::glorot(&mut rng, 2, 3);
        let (h, w) = (5, 4);
        let x = random_vec(&mut rng, 2 * h * w);
        let y = conv.forward(&x, h, w);
        for oc in 0..3 {
            for r in 0..h as isize {
                for c in 0..w as isize {
                    let mut want = conv.bias[oc];
                    for ic in 0..2 {
                        for ky in 0..3isize {
                            for kx in 0..3isize {
                                let (ir, icol) = (r + ky - 1, c + kx - 1);
                                if ir < 0 || icol < 0 || ir >= h as isize || icol >= w as isize {
                                    continue;
                                }
                                want += conv.weight[((oc * 2 + ic) * 9) + (ky * 3 + kx) as usize]
                                    * x[ic * h * w + (ir as usize) * w + icol as usize];
                            }
                        }
                    }
                    let got = y[oc * h * w + r as usize * w + c as usize];
                    assert!((got - want).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn pooling_averages_blocks() {
        let x: Vec<f64> = (0..16).map(|v| v as f64).collect();
        assert_eq!(avg_pool2(&x, 1, 4, 4), vec![2.5, 4.5, 10.5, 12.5]);
    }

    #[test]
    fn dense_gradients() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..20 {
            let layer = Dense::glorot(&mut rng, 5, 4);
            let x = random_vec(&mut rng, 5);
            let wout = random_vec(&mut rng, 4);
            let report = check_gradients(
                &layer,
                |l: &Dense| {
                    let mut y = l.forward(&x);
                    Activation::Tanh.apply(&mut y);
                    weighted_sum(&y, &wout)
                },
                |l: &Dense| {
                    let mut y = l.forward(&x);
                    Activation::Tanh.apply(&mut y);
                    let mut g = wout.clone();
                    Activation::Tanh.backprop(&y, &mut g);
                    let mut grads = l.zeros_like();
                    l.backward(&x, &g, &mut grads);
                    grads
                },
            );
            report.assert_ok(GradCheck::default());
        }
    }

    #[test]
    fn conv_gradients() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..20 {
            let conv = Conv2d::glorot(&mut rng, 2, 3);
            let (h, w) = (6, 6);
            let x = random_vec(&mut rng, 2 * h * w);
            let wout = random_vec(&mut rng, 3 * 9);
            let loss = |c: &Conv2d| {
                let mut y = c.forward(&x, h, w);
                Activation::Tanh.apply(&mut y);
                weighted_sum(&avg_pool2(&y, 3, h, w), &wout)
            };
            let report = check_gradients(&conv, loss, |c: &Conv2d| {
                let mut y = c.forward(&x, h, w);
                Activation::Tanh.apply(&mut y);
                let mut g = avg_pool2_backward(&wout, 3, h, w);
                Activation::Tanh.backprop(&y, &mut g);
                let mut grads = c.zeros_like();
                c.backward(&x, h, w, &g, &mut grads, false);
                grads
            });
            report.assert_ok(GradCheck::default());
        }
    }

    #[test]
    fn conv_input_gradient() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let conv = Conv2d::glorot(&mut rng, 2, 2);
        let (h, w) = (4, 5);
        let x = random_vec(&mut rng, 2 * h * w);
        let wout = random_vec(&mut rng, 2 * h * w);
        let mut grads = conv.zeros_like();
        let gx = conv.backward(&x, h, w, &wout, &mut grads, true).unwrap();
        let eps = 1e-5;
        for i in 0..x.len() {
            let (mut xp, mut xm) = (x.clone(), x.clone());
            xp[i] += eps;
            xm[i] -= eps;
            let fd = (weighted_sum(&conv.forward(&xp, h, w), &wout) - weighted_sum(&conv.forward(&xm, h, w), &wout))
                / (2.0 * eps);
            assert!((fd - gx[i]).abs() <= 1e-6 * (1.0 + fd.abs()));
        }
    }

    #[test]
    fn lstm_gradients() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..20 {
            let cell = LstmCell::glorot(&mut rng, 1, 6);
            let seq: Vec<Vec<f64>> = (0..5).map(|_| random_vec(&mut rng, 1)).collect();
            let wout = random_vec(&mut rng, 6);
            let report = check_gradients(
                &cell,
                |c: &LstmCell| weighted_sum(&c.run(&seq).last().unwrap().h, &wout),
                |c: &LstmCell| {
                    let steps = c.run(&seq);
                    let mut grads = c.zeros_like();
                    c.backward(&steps, &wout, &mut grads);
                    grads
                },
            );
            report.assert_ok(GradCheck::default());
        }
    }

    #[test]
    fn batched_lstm_matches_sequential() {
        let mut rng = ChaCha8Rng::seed_from_u64(15);
        let cell = LstmCell::glorot(&mut rng, 1, 7);
        let seqs: Vec<Vec<Vec<f64>>> = (0..6)
            .map(|_| (0..5).map(|_| random_vec(&mut rng, 1)).collect())
            .collect();
        let wout = random_vec(&mut rng, 7);
        let mut seq_grads = cell.zeros_like();
        let mut seq_h = Vec::new();
        for seq in &seqs {
            let steps = cell.run(seq);
            seq_h.push(steps.last().unwrap().h.clone());
            cell.backward(&steps, &wout, &mut seq_grads);
        }
        let inputs: Vec<DMatrix<f64>> = (0..5)
            .map(|t| DMatrix::from_fn(1, seqs.len(), |_, j| seqs[j][t][0]))
            .collect();
        let steps = cell.run_batch(&inputs);
        let last = &steps.last().unwrap().h;
        for (j, h) in seq_h.iter().enumerate() {
            for k in 0..7 {
                assert!((last[(k, j)] - h[k]).abs() < 1e-14);
            }
        }
        let mut batch_grads = cell.zeros_like();
        let g = DMatrix::from_fn(7, seqs.len(), |k, _| wout[k]);
        cell.backward_batch(&steps, &g, &mut batch_grads);
        for (a, b) in seq_grads.flatten().iter().zip(batch_grads.flatten()) {
            assert!((a - b).abs() < 1e-12 * (1.0 + a.abs()), "{a} vs {b}");
        }
    }

    #[test]
    fn lstm_cell_state_growth_is_bounded() {
        let mut cell = LstmCell::zeros(1, 4);
        cell.weight.fill(5.0);
        cell.bias.fill(5.0);
        let mut h = vec![0.0; 4];
        let mut c = vec![0.0; 4];
        for step in 1..=200 {
            let s = cell.step(&[1.0], &h, &c);
            h = s.h;
            c = s.c;
            assert!(c.iter().all(|v| v.is_finite() && v.abs() <= step as f64 + 1e-9));
            assert!(h.iter().all(|v| v.abs() <= 1.0));
        }
    }

    #[test]
    fn flatten_assign_round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let a = LstmCell::glorot(&mut rng, 2, 3);
        let mut b = a.zeros_like();
        b.assign(&a.flatten());
        assert_eq!(a, b);
        assert_eq!(a.num_params(), 4 * 3 * 5 + 12);
    }
}
