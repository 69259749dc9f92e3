//! Full-batch momentum gradient descent with early stopping for both the
//! coefficient encoders and the LSTM baseline.
//!
//! Both models are optimized on targets divided by the training set's largest
//! absolute ΔE, which makes one learning rate serve every dataset. Reported
//! loss histories are in ΔE² units.

use std::collections::BTreeMap;

use rand::seq::IndexedRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::baseline::{BaselineModel, DEFAULT_HIDDEN, WINDOW};
use super::encoder::{image_input, CoefficientEncoder, ConditionScaler, Modality};
use super::layers::Params;
use super::NetError;
use crate::basis::{BasisConfig, BASIS_SIZE};
use crate::dataset::{ProcessCondition, SampleRecord};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub max_epochs: usize,
    pub learning_rate: f64,
    pub momentum: f64,
    /// Epochs without validation improvement before stopping.
    pub patience: usize,
    /// LSTM hidden width of the baseline.
    pub lstm_hidden: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            max_epochs: 200,
            learning_rate: 0.2,
            momentum: 0.9,
            patience: 20,
            lstm_hidden: DEFAULT_HIDDEN,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), NetError> {
        let bad = |m: String| Err(NetError::InvalidConfig(m));
        if self.max_epochs == 0 {
            return bad("max_epochs must be at least 1".into());
        }
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return bad(format!("learning_rate must be positive, got {}", self.learning_rate));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return bad(format!("momentum must lie in [0, 1), got {}", self.momentum));
        }
        if self.lstm_hidden == 0 {
            return bad("lstm_hidden must be positive".into());
        }
        Ok(())
    }
}

/// Per-epoch losses, evaluated before each parameter update.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct LossHistory {
    pub train: Vec<f64>,
    /// Empty when no validation samples could be held out.
    pub validation: Vec<f64>,
}

impl LossHistory {
    pub fn initial(&self) -> Option<f64> {
        self.train.first().copied()
    }

    pub fn last(&self) -> Option<f64> {
        self.train.last().copied()
    }
}

#[derive(Debug, Clone)]
pub struct TrainedEncoder {
    pub model: CoefficientEncoder,
    pub history: LossHistory,
    /// Epoch whose parameters were kept.
    pub best_epoch: usize,
}

#[derive(Debug, Clone)]
pub struct TrainedBaseline {
    pub model: BaselineModel,
    pub history: LossHistory,
    pub best_epoch: usize,
}

struct Momentum {
    velocity: Vec<f64>,
    lr: f64,
    mu: f64,
}

impl Momentum {
    fn new(n: usize, lr: f64, mu: f64) -> Self {
        Self {
            velocity: vec![0.0; n],
            lr,
            mu,
        }
    }

    fn step(&mut self, params: &mut [f64], grad: &[f64], grad_scale: f64) {
        for ((p, v), g) in params.iter_mut().zip(&mut self.velocity).zip(grad) {
            *v = self.mu * *v - self.lr * g * grad_scale;
            *p += *v;
        }
    }
}

/// Holds out one sample per condition (for conditions with at least two
/// samples). Returns `(train, validation)` index lists in input order.
pub fn holdout_split(samples: &[&SampleRecord], seed: u64) -> (Vec<usize>, Vec<usize>) {
    let mut by_condition: BTreeMap<ProcessCondition, Vec<usize>> = BTreeMap::new();
    for (i, s) in samples.iter().enumerate() {
        by_condition.entry(s.condition).or_default().push(i);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x005E_ED0F_7A11);
    let mut held = Vec::new();
    for idx in by_condition.values() {
        if idx.len() >= 2 {
            held.push(*idx.choose(&mut rng).expect("nonempty"));
        }
    }
    held.sort_unstable();
    let train = (0..samples.len()).filter(|i| !held.contains(i)).collect();
    (train, held)
}

fn smoothed_values(s: &SampleRecord) -> Result<&[f64], NetError> {
    s.smoothed_trajectory
        .as_ref()
        .map(|t| t.values())
        .ok_or_else(|| NetError::MissingSmoothed(s.id.clone()))
}

fn target_scale<'a>(values: impl Iterator<Item = &'a [f64]>) -> f64 {
    let m = values.flat_map(|v| v.iter()).fold(0.0_f64, |m, v| m.max(v.abs()));
    if m > 0.0 {
        m
    } else {
        1.0
    }
}

struct EncoderExample {
    x: [f64; 2],
    image: Option<Vec<f64>>,
    design: Vec<[f64; BASIS_SIZE]>,
    target: Vec<f64>,
}

fn prepare_encoder_examples(
    samples: &[&SampleRecord],
    idx: &[usize],
    modality: Modality,
    scaler: &ConditionScaler,
    basis: &BasisConfig,
) -> Result<Vec<EncoderExample>, NetError> {
    let b = basis.basis();
    idx.iter()
        .map(|&i| {
            let s = samples[i];
            let target = smoothed_values(s)?.to_vec();
            let image =
                match modality {
                    Modality::TabularOnly => None,
                    Modality::MultiModal => Some(image_input(s.initial_image.as_ref().ok_or_else(|| {
                        NetError::ModalityMismatch(format!("sample {} has no initial image", s.id))
                    })?)?),
                };
            Ok(EncoderExample {
                x: scaler.transform(&s.condition)?,
                image,
                design: b.design_matrix(s.target().times())?,
                target,
            })
        })
        .collect()
}

/// Mean over examples of the per-trajectory MSE (plus the optional L1 term),
/// with the gradient when `grads` is given.
fn encoder_objective(
    model: &CoefficientEncoder,
    examples: &[EncoderExample],
    l1_weight: f64,
    mut grads: Option<&mut CoefficientEncoder>,
) -> f64 {
    let n = examples.len() as f64;
    let mut total = 0.0;
    for ex in examples {
        let tr = model.forward_inputs(ex.x, ex.image.clone());
        let t_len = ex.design.len() as f64;
        let mut grad_beta = [0.0; BASIS_SIZE];
        let mut sse = 0.0;
        for (row, y) in ex.design.iter().zip(&ex.target) {
            let pred: f64 = row.iter().zip(&tr.beta).map(|(p, b)| p * b).sum();
            let r = pred - y;
            sse += r * r;
            for k in 0..BASIS_SIZE {
                grad_beta[k] += 2.0 * r * row[k] / (t_len * n);
            }
        }
        total += sse / t_len;
        if l1_weight > 0.0 {
            total += l1_weight * tr.beta.iter().map(|b| b.abs()).sum::<f64>();
            for k in 0..BASIS_SIZE {
                grad_beta[k] += l1_weight * tr.beta[k].signum() / n;
            }
        }
        if let Some(g) = grads.as_deref_mut() {
            model.backward(&tr, &grad_beta, g);
        }
    }
    total / n
}

/// Trains a coefficient encoder on the smoothed trajectories of `samples`.
///
/// One sample per condition is held out for early stopping; the parameters
/// with the lowest validation loss are returned. The head starts at the mean
/// least-squares coefficient vector of the training targets.
pub fn train_encoder(
    samples: &[&SampleRecord],
    modality: Modality,
    basis: &BasisConfig,
    tc: &TrainConfig,
) -> Result<TrainedEncoder, NetError> {
    tc.validate()?;
    if samples.is_empty() {
        return Err(NetError::EmptyTrainingSet);
    }
    let (train_idx, val_idx) = holdout_split(samples, tc.seed);
    let scaler = ConditionScaler::fit(samples.iter().map(|s| &s.condition));

    let mut train_values = Vec::with_capacity(train_idx.len());
    for &i in &train_idx {
        train_values.push(smoothed_values(samples[i])?);
    }
    let scale = target_scale(train_values.iter().copied());

    let mut rng = ChaCha8Rng::seed_from_u64(tc.seed);
    let mut model = CoefficientEncoder::init(modality, &mut rng);
    model.scaler = scaler;
    model.target_scale = scale;

    let mut beta0 = [0.0; BASIS_SIZE];
    let b = basis.basis();
    let mut fitted = 0usize;
    for &i in &train_idx {
        if let Ok(beta) = b.fit_least_squares(samples[i].target(), basis.ridge) {
            for k in 0..BASIS_SIZE {
                beta0[k] += beta.0[k];
            }
            fitted += 1;
        }
    }
    if fitted > 0 {
        model.head.bias = beta0.iter().map(|v| v / fitted as f64 / scale).collect();
    }

    let train = prepare_encoder_examples(samples, &train_idx, modality, &scaler, basis)?;
    let val = prepare_encoder_examples(samples, &val_idx, modality, &scaler, basis)?;

    let grad_scale = 1.0 / (scale * scale);
    let mut params = model.flatten();
    let mut opt = Momentum::new(params.len(), tc.learning_rate, tc.momentum);
    let mut history = LossHistory::default();
    let mut best = (f64::INFINITY, 0usize, params.clone());

    for epoch in 0..tc.max_epochs {
        let mut grads = model.zeros_like();
        let loss = encoder_objective(&model, &train, basis.l1_weight, Some(&mut grads));
        if !loss.is_finite() {
            return Err(NetError::Diverged { epoch, loss });
        }
        history.train.push(loss);
        let monitor = if val.is_empty() {
            loss
        } else {
            let v = encoder_objective(&model, &val, basis.l1_weight, None);
            history.validation.push(v);
            v
        };
        if monitor < best.0 {
            best = (monitor, epoch, params.clone());
        } else if epoch - best.1 >= tc.patience {
            break;
        }
        opt.step(&mut params, &grads.flatten(), grad_scale);
        model.assign(&params);
    }

    model.assign(&best.2);
    Ok(TrainedEncoder {
        model,
        history,
        best_epoch: best.1,
    })
}

/// Windows are scored in chunks so the batched LSTM stays cache-sized.
const WINDOW_CHUNK: usize = 256;

struct WindowSet {
    windows: Vec<Vec<f64>>,
    targets: Vec<f64>,
}

impl WindowSet {
    fn of(series: &[&[f64]]) -> Self {
        let mut windows = Vec::new();
        let mut targets = Vec::new();
        for s in series {
            for w in s.windows(WINDOW + 1) {
                windows.push(w[..WINDOW].to_vec());
                targets.push(w[WINDOW]);
            }
        }
        Self { windows, targets }
    }
}

/// Mean squared one-step error over all windows, with the gradient when
/// `grads` is given.
fn baseline_objective(model: &BaselineModel, set: &WindowSet, mut grads: Option<&mut BaselineModel>) -> f64 {
    let n = set.targets.len() as f64;
    let mut total = 0.0;
    for (ws, ts) in set.windows.chunks(WINDOW_CHUNK).zip(set.targets.chunks(WINDOW_CHUNK)) {
        let refs: Vec<&[f64]> = ws.iter().map(Vec::as_slice).collect();
        total += model.batch_sse(&refs, ts, 1.0 / n, grads.as_deref_mut());
    }
    total / n
}

/// Teacher-forced one-step-ahead training of the LSTM baseline over every
/// five-value window of the smoothed training trajectories.
pub fn train_baseline(samples: &[&SampleRecord], tc: &TrainConfig) -> Result<TrainedBaseline, NetError> {
    tc.validate()?;
    if samples.is_empty() {
        return Err(NetError::EmptyTrainingSet);
    }
    for s in samples {
        let len = smoothed_values(s)?.len();
        if len < WINDOW + 1 {
            return Err(NetError::TrajectoryTooShort { id: s.id.clone(), len });
        }
    }
    let (train_idx, val_idx) = holdout_split(samples, tc.seed);
    let train: Vec<&[f64]> = train_idx
        .iter()
        .map(|&i| smoothed_values(samples[i]))
        .collect::<Result<_, _>>()?;
    let val: Vec<&[f64]> = val_idx
        .iter()
        .map(|&i| smoothed_values(samples[i]))
        .collect::<Result<_, _>>()?;
    let scale = target_scale(train.iter().copied());
    let train = WindowSet::of(&train);
    let val = WindowSet::of(&val);

    let mut rng = ChaCha8Rng::seed_from_u64(tc.seed);
    let mut model = BaselineModel::init(tc.lstm_hidden, &mut rng);
    model.value_scale = scale;
    let mean_target = train.targets.iter().sum::<f64>() / train.targets.len() as f64;
    model.readout.bias[0] = mean_target / scale;

    let grad_scale = 1.0 / (scale * scale);
    let mut params = model.flatten();
    let mut opt = Momentum::new(params.len(), tc.learning_rate, tc.momentum);
    let mut history = LossHistory::default();
    let mut best = (f64::INFINITY, 0usize, params.clone());

    for epoch in 0..tc.max_epochs {
        let mut grads = model.zeros_like();
        let loss = baseline_objective(&model, &train, Some(&mut grads));
        if !loss.is_finite() {
            return Err(NetError::Diverged { epoch, loss });
        }
        history.train.push(loss);
        let monitor = if val.targets.is_empty() {
            loss
        } else {
            let v = baseline_objective(&model, &val, None);
            history.validation.push(v);
            v
        };
        if monitor < best.0 {
            best = (monitor, epoch, params.clone());
        } else if epoch - best.1 >= tc.patience {
            break;
        }
        opt.step(&mut params, &grads.flatten(), grad_scale);
        model.assign(&params);
    }

    model.assign(&best.2);
    Ok(TrainedBaseline {
        model,
        history,
        best_epoch: best.1,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::basis::{uniform_grid, CoefficientVector, ComponentBasis, Trajectory};
    use crate::dataset::preprocess;
    use crate::net::gradcheck::{check_gradients, GradCheck};
    use crate::synth::{generate_dataset, WorldConfig};
    use rand::Rng;

    fn record(id: &str, cond: ProcessCondition, values: Vec<f64>) -> SampleRecord {
        let tr = Trajectory::new(uniform_grid(values.len()), values).unwrap();
        SampleRecord {
            id: id.into(),
            condition: cond,
            initial_image: None,
            raw_trajectory: tr.clone(),
            smoothed_trajectory: Some(tr),
        }
    }

    #[test]
    fn holdout_takes_one_per_condition() {
        let recs = preprocess(&generate_dataset(&WorldConfig::cookie_default()).unwrap(), 15).unwrap();
        let refs: Vec<&SampleRecord> = recs.iter().collect();
        let (train, val) = holdout_split(&refs, 3);
        assert_eq!(val.len(), 8);
        assert_eq!(train.len(), 64);
        let conds: std::collections::BTreeSet<_> = val.iter().map(|&i| refs[i].condition).collect();
        assert_eq!(conds.len(), 8);
        assert_eq!(holdout_split(&refs, 3), (train, val));
    }

    #[test]
    fn objective_gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let basis = BasisConfig {
            l1_weight: 0.0,
            ..BasisConfig::default()
        };
        let recs: Vec<SampleRecord> = (0..3)
            .map(|i| {
                let vals: Vec<f64> = (0..12).map(|_| rng.random_range(0.0..5.0)).collect();
                record(
                    &format!("s{i}"),
                    ProcessCondition::fahrenheit_rpm(350.0 + 10.0 * i as f64, 1000.0),
                    vals,
                )
            })
            .collect();
        let refs: Vec<&SampleRecord> = recs.iter().collect();
        let scaler = ConditionScaler::fit(refs.iter().map(|s| &s.condition));
        let ex = prepare_encoder_examples(&refs, &[0, 1, 2], Modality::TabularOnly, &scaler, &basis).unwrap();
        let mut model = CoefficientEncoder::init(Modality::TabularOnly, &mut rng);
        model.head = crate::net::layers::Dense::glorot(&mut rng, 16, 9);
        model.scaler = scaler;
        model.target_scale = 2.0;
        let report = check_gradients(
            &model,
            |m: &CoefficientEncoder| encoder_objective(m, &ex, 0.0, None),
            |m: &CoefficientEncoder| {
                let mut g = m.zeros_like();
                encoder_objective(m, &ex, 0.0, Some(&mut g));
                g
            },
        );
        report.assert_ok(GradCheck::default());
    }

    #[test]
    fn single_sample_in_basis_span_is_learned() {
        let basis = ComponentBasis::default();
        let times = uniform_grid(73);
        // target generated from a planted coefficient vector
        let planted = CoefficientVector([2.0, 10.0, 5.0, -1.0, 0.5, -0.5, 1.0, 0.3, 0.2]);
        let vals = basis.reconstruct(&planted, &times).unwrap().values().to_vec();
        let tr = Trajectory::new(times, vals).unwrap();
        let refit = basis.fit_least_squares(&tr, 0.0).unwrap();
        for (a, b) in refit.0.iter().zip(planted.0) {
            assert!((a - b).abs() < 1e-6);
        }
        let rec = SampleRecord {
            id: "only".into(),
            condition: ProcessCondition::fahrenheit_rpm(350.0, 1000.0),
            initial_image: None,
            raw_trajectory: tr.clone(),
            smoothed_trajectory: Some(tr),
        };
        let out = train_encoder(
            &[&rec],
            Modality::TabularOnly,
            &BasisConfig::default(),
            &TrainConfig::default(),
        )
        .unwrap();
        let final_loss = out.history.last().unwrap();
        assert!(final_loss < 1e-3, "final loss {final_loss}");
        assert!(out.history.train.len() <= 200);
    }

    #[test]
    fn training_is_deterministic_and_decreasing() {
        let recs = preprocess(
            &generate_dataset(&WorldConfig::cookie_default().with_seed(4)).unwrap(),
            15,
        )
        .unwrap();
        let refs: Vec<&SampleRecord> = recs.iter().take(27).collect();
        let tc = TrainConfig {
            max_epochs: 40,
            ..TrainConfig::default()
        };
        let a = train_encoder(&refs, Modality::TabularOnly, &BasisConfig::default(), &tc).unwrap();
        let b = train_encoder(&refs, Modality::TabularOnly, &BasisConfig::default(), &tc).unwrap();
        assert_eq!(a.history, b.history);
        assert_eq!(a.model, b.model);
        assert!(a.history.train.iter().all(|v| v.is_finite()));
        assert!(a.history.last().unwrap() <= a.history.initial().unwrap());
    }

    #[test]
    fn empty_inputs_are_rejected() {
        assert!(matches!(
            train_encoder(
                &[],
                Modality::TabularOnly,
                &BasisConfig::default(),
                &TrainConfig::default()
            ),
            Err(NetError::EmptyTrainingSet)
        ));
        assert!(matches!(
            train_baseline(&[], &TrainConfig::default()),
            Err(NetError::EmptyTrainingSet)
        ));
        let short = record(
            "short",
            ProcessCondition::fahrenheit_rpm(350.0, 1000.0),
            vec![0.0, 1.0, 2.0, 3.0, 4.0],
        );
        assert!(matches!(
            train_baseline(&[&short], &TrainConfig::default()),
            Err(NetError::TrajectoryTooShort { len: 5, .. })
        ));
        let mut raw_only = short.clone();
        raw_only.smoothed_trajectory = None;
        assert!(matches!(
            train_encoder(
                &[&raw_only],
                Modality::TabularOnly,
                &BasisConfig::default(),
                &TrainConfig::default()
            ),
            Err(NetError::MissingSmoothed(_))
        ));
    }

    #[test]
    fn baseline_learns_a_constant() {
        let c = 7.5;
        let recs: Vec<SampleRecord> = (0..2)
            .map(|i| {
                record(
                    &format!("c{i}"),
                    ProcessCondition::fahrenheit_rpm(350.0, 1000.0),
                    vec![c; 30],
                )
            })
            .collect();
        let refs: Vec<&SampleRecord> = recs.iter().collect();
        let out = train_baseline(&refs, &TrainConfig::default()).unwrap();
        let roll = out.model.rollout(&[c; 5], 40).unwrap();
        assert!(roll.iter().all(|v| (v - c).abs() < 0.01), "{roll:?}");
    }

    #[test]
    fn multimodal_needs_images() {
        let rec = record("x", ProcessCondition::fahrenheit_rpm(350.0, 1000.0), vec![0.0; 12]);
        assert!(matches!(
            train_encoder(
                &[&rec],
                Modality::MultiModal,
                &BasisConfig::default(),
                &TrainConfig::default()
            ),
            Err(NetError::ModalityMismatch(_))
        ));
    }
}
