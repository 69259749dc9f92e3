//! Autoregressive LSTM baseline: reads the previous five values and predicts
//! the next one, then rolls out by feeding predictions back.

use nalgebra::DMatrix;
use rand::Rng;

use super::layers::{Dense, LstmCell, NamedParams, Params, TensorVisitor};
use super::NetError;

pub const WINDOW: usize = 5;
pub const DEFAULT_HIDDEN: usize = 32;

/// LSTM cell plus scalar readout. Inputs are divided by `value_scale` and
/// the readout is multiplied by it.
#[derive(Debug, Clone, PartialEq)]
pub struct BaselineModel {
    pub lstm: LstmCell,
    pub readout: Dense,
    pub value_scale: f64,
}

pub(crate) struct WindowTrace {
    #[cfg_attr(not(test), allow(dead_code))]
    steps: Vec<super::layers::LstmStep>,
    pub(crate) output: f64,
}

impl BaselineModel {
    pub fn zeros(hidden: usize) -> Self {
        Self {
            lstm: LstmCell::zeros(1, hidden),
            readout: Dense::zeros(hidden, 1),
            value_scale: 1.0,
        }
    }

    /// Glorot LSTM weights, zero readout.
    pub fn init<R: Rng>(hidden: usize, rng: &mut R) -> Self {
        Self {
            lstm: LstmCell::glorot(rng, 1, hidden),
            readout: Dense::zeros(hidden, 1),
            value_scale: 1.0,
        }
    }

    pub fn hidden(&self) -> usize {
        self.lstm.hidden
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            value_scale: self.value_scale,
            ..Self::zeros(self.hidden())
        }
    }

    pub(crate) fn forward_window(&self, window: &[f64]) -> WindowTrace {
        let seq: Vec<Vec<f64>> = window.iter().map(|v| vec![v / self.value_scale]).collect();
        let steps = self.lstm.run(&seq);
        let out = self.readout.forward(&steps[steps.len() - 1].h)[0];
        WindowTrace {
            steps,
            output: out * self.value_scale,
        }
    }

    #[cfg_attr(not(test), allow(dead_code))]
    pub(crate) fn backward_window(&self, tr: &WindowTrace, grad_output: f64, grads: &mut BaselineModel) {
        let h_last = &tr.steps[tr.steps.len() - 1].h;
        let g_h = self
            .readout
            .backward(h_last, &[grad_output * self.value_scale], &mut grads.readout);
        self.lstm.backward(&tr.steps, &g_h, &mut grads.lstm);
    }

    /// Squared error summed over a batch of windows. With `grads`, adds the
    /// gradient of `weight * sse`.
    pub(crate) fn batch_sse(
        &self,
        windows: &[&[f64]],
        targets: &[f64],
        weight: f64,
        grads: Option<&mut BaselineModel>,
    ) -> f64 {
        let n = windows.len();
        let inputs: Vec<DMatrix<f64>> = (0..WINDOW)
            .map(|t| DMatrix::from_fn(1, n, |_, j| windows[j][t] / self.value_scale))
            .collect();
        let steps = self.lstm.run_batch(&inputs);
        let h = &steps[WINDOW - 1].h;
        let r = &self.readout.weight;
        let mut sse = 0.0;
        let mut g_out = vec![0.0; n];
        for j in 0..n {
            let out =
                self.value_scale * (self.readout.bias[0] + h.column(j).iter().zip(r).map(|(a, b)| a * b).sum::<f64>());
            let e = out - targets[j];
            sse += e * e;
            g_out[j] = 2.0 * weight * e * self.value_scale;
        }
        if let Some(grads) = grads {
            for j in 0..n {
                grads.readout.bias[0] += g_out[j];
                for (gw, hv) in grads.readout.weight.iter_mut().zip(h.column(j).iter()) {
                    *gw += g_out[j] * hv;
                }
            }
            let g_h = DMatrix::from_fn(self.hidden(), n, |k, j| g_out[j] * r[k]);
            self.lstm.backward_batch(&steps, &g_h, &mut grads.lstm);
        }
        sse
    }

    /// Next value after a five-value window.
    pub fn predict_next(&self, window: &[f64]) -> Result<f64, NetError> {
        if window.len() != WINDOW {
            return Err(NetError::BadWindow(window.len()));
        }
        Ok(self.forward_window(window).output)
    }

    /// Predicts `steps` values, sliding the window over its own outputs.
    pub fn rollout(&self, seed_window: &[f64], steps: usize) -> Result<Vec<f64>, NetError> {
        if seed_window.len() != WINDOW {
            return Err(NetError::BadWindow(seed_window.len()));
        }
        let mut window = seed_window.to_vec();
        let mut out = Vec::with_capacity(steps);
        for _ in 0..steps {
            let next = self.forward_window(&window).output;
            out.push(next);
            window.remove(0);
            window.push(next);
        }
        Ok(out)
    }
}

/// Free-function form of [`BaselineModel::rollout`].
pub fn baseline_rollout(model: &BaselineModel, seed_window: &[f64], steps: usize) -> Result<Vec<f64>, NetError> {
    model.rollout(seed_window, steps)
}

impl Params for BaselineModel {
    fn visit(&self, f: &mut TensorVisitor) {
        self.lstm.visit_prefixed("lstm", f);
        self.readout.visit_prefixed("readout", f);
    }

    fn visit_mut(&mut self, f: &mut dyn FnMut(&str, &mut [f64])) {
        self.lstm.visit_prefixed_mut("lstm", f);
        self.readout.visit_prefixed_mut("readout", f);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::net::gradcheck::{check_gradients, GradCheck};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn constant_readout() {
        let mut m = BaselineModel::zeros(DEFAULT_HIDDEN);
        m.readout.bias[0] = 3.25;
        let out = baseline_rollout(&m, &[0.0, 1.0, 2.0, 3.0, 4.0], 7).unwrap();
        assert_eq!(out, vec![3.25; 7]);
    }

    #[test]
    fn zero_steps_and_bad_windows() {
        let m = BaselineModel::zeros(4);
        assert!(m.rollout(&[0.0; 5], 0).unwrap().is_empty());
        assert!(matches!(m.rollout(&[0.0; 4], 3), Err(NetError::BadWindow(4))));
        assert!(matches!(m.predict_next(&[0.0; 6]), Err(NetError::BadWindow(6))));
    }

    #[test]
    fn rollout_is_bounded_for_bounded_weights() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let mut m = BaselineModel::init(DEFAULT_HIDDEN, &mut rng);
        m.readout = Dense::glorot(&mut rng, DEFAULT_HIDDEN, 1);
        m.value_scale = 40.0;
        let out = m.rollout(&[0.0, 0.5, 1.0, 2.0, 3.0], 500).unwrap();
        assert_eq!(out.len(), 500);
        // |h| <= 1, so the readout is bounded by the weight l1 norm
        let bound = 40.0 * (m.readout.weight.iter().map(|w| w.abs()).sum::<f64>() + m.readout.bias[0].abs());
        assert!(out.iter().all(|v| v.is_finite() && v.abs() <= bound));
    }

    #[test]
    fn batch_matches_single_windows() {
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let mut m = BaselineModel::init(5, &mut rng);
        m.readout = Dense::glorot(&mut rng, 5, 1);
        m.value_scale = 2.0;
        let data: Vec<Vec<f64>> = (0..7)
            .map(|_| (0..WINDOW).map(|_| rng.random_range(0.0..3.0)).collect())
            .collect();
        let targets: Vec<f64> = (0..7).map(|_| rng.random_range(0.0..3.0)).collect();
        let mut single = m.zeros_like();
        let mut sse = 0.0;
        for (w, t) in data.iter().zip(&targets) {
            let tr = m.forward_window(w);
            sse += (tr.output - t).powi(2);
            m.backward_window(&tr, 0.5 * 2.0 * (tr.output - t), &mut single);
        }
        let windows: Vec<&[f64]> = data.iter().map(Vec::as_slice).collect();
        let mut batched = m.zeros_like();
        let got = m.batch_sse(&windows, &targets, 0.5, Some(&mut batched));
        assert!((got - sse).abs() < 1e-12 * sse);
        for (a, b) in single.flatten().iter().zip(batched.flatten()) {
            assert!((a - b).abs() < 1e-12 * (1.0 + a.abs()));
        }
    }

    #[test]
    fn window_gradients() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..20 {
            let mut m = BaselineModel::init(6, &mut rng);
            m.readout = Dense::glorot(&mut rng, 6, 1);
            m.value_scale = 3.0;
            let window: Vec<f64> = (0..WINDOW).map(|_| rng.random_range(0.0..3.0)).collect();
            let target = rng.random_range(0.0..3.0);
            let report = check_gradients(
                &m,
                |m: &BaselineModel| (m.forward_window(&window).output - target).powi(2),
                |m: &BaselineModel| {
                    let tr = m.forward_window(&window);
                    let mut g = m.zeros_like();
                    m.backward_window(&tr, 2.0 * (tr.output - target), &mut g);
                    g
                },
            );
            report.assert_ok(GradCheck::default());
        }
    }
}
