//! Scoring and the five-row ablation.
//!
//! Per-sample RMSEs are averaged within each condition, and the condition
//! means are averaged into the headline number of a row.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::basis::{BasisConfig, BasisError, Trajectory};
use crate::dataset::{samples_in, similarity_select, DatasetError, SampleRecord, SplitMode, SplitPlan};
use crate::net::{
    train_baseline, train_encoder, BaselineModel, Checkpoint, CoefficientEncoder, LossHistory, Modality, NetError,
    TrainConfig, WINDOW,
};

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("length mismatch: {predicted} predicted vs {truth} true values")]
    LengthMismatch { predicted: usize, truth: usize },
    #[error("rmse of empty sequences")]
    EmptyInput,
    #[error("evaluation set is empty")]
    EmptyEvalSet,
    #[error("modality mismatch: {0}")]
    ModalityMismatch(String),
    #[error("reference rmse must be positive, got {0}")]
    NonPositiveReference(f64),
    #[error("invalid split for ablation: {0}")]
    InvalidSplit(String),
    #[error(transparent)]
    Net(NetError),
    #[error(transparent)]
    Basis(#[from] BasisError),
    #[error(transparent)]
    Dataset(#[from] DatasetError),
}

impl From<NetError> for EvalError {
    fn from(e: NetError) -> Self {
        match e {
            NetError::ModalityMismatch(m) => EvalError::ModalityMismatch(m),
            other => EvalError::Net(other),
        }
    }
}

/// Root mean squared difference.
pub fn rmse(predicted: &[f64], truth: &[f64]) -> Result<f64, EvalError> {
    if predicted.len() != truth.len() {
        return Err(EvalError::LengthMismatch {
            predicted: predicted.len(),
            truth: truth.len(),
        });
    }
    if predicted.is_empty() {
        return Err(EvalError::EmptyInput);
    }
    let sse: f64 = predicted.iter().zip(truth).map(|(p, t)| (p - t) * (p - t)).sum();
    Ok((sse / predicted.len() as f64).sqrt())
}

/// `100 * (reference - rmse) / reference`.
pub fn improvement_percent(reference_rmse: f64, rmse: f64) -> Result<f64, EvalError> {
    if reference_rmse.is_nan() || reference_rmse <= 0.0 {
        return Err(EvalError::NonPositiveReference(reference_rmse));
    }
    Ok(100.0 * (reference_rmse - rmse) / reference_rmse)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Target {
    Raw,
    #[default]
    Smoothed,
}

impl Target {
    pub fn of<'a>(&self, sample: &'a SampleRecord) -> &'a Trajectory {
        match self {
            Target::Raw => &sample.raw_trajectory,
            Target::Smoothed => sample.target(),
        }
    }
}

/// Predictions for the scored tail of a trajectory, starting at index `start`.
#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    pub start: usize,
    pub values: Vec<f64>,
}

pub trait TrajectoryPredictor {
    fn predict(&self, sample: &SampleRecord, truth: &Trajectory) -> Result<Prediction, EvalError>;
}

/// Basis coefficients from the encoder, reconstructed on the sample's grid.
pub struct EncoderPredictor<'a> {
    pub model: &'a CoefficientEncoder,
    pub basis: BasisConfig,
}

impl TrajectoryPredictor for EncoderPredictor<'_> {
    fn predict(&self, sample: &SampleRecord, truth: &Trajectory) -> Result<Prediction, EvalError> {
        let image =
            match self.model.modality {
                Modality::TabularOnly => None,
                Modality::MultiModal => Some(sample.initial_image.as_ref().ok_or_else(|| {
                    EvalError::ModalityMismatch(format!("sample {} has no initial image", sample.id))
                })?),
            };
        let beta = self.model.predict_coefficients(&sample.condition, image)?;
        let recon = self.basis.basis().reconstruct(&beta, truth.times())?;
        Ok(Prediction {
            start: 0,
            values: recon.values().to_vec(),
        })
    }
}

/// The LSTM seeded with the first five true values; only the rollout is scored.
impl TrajectoryPredictor for BaselineModel {
    fn predict(&self, sample: &SampleRecord, truth: &Trajectory) -> Result<Prediction, EvalError> {
        let v = truth.values();
        if v.len() <= WINDOW {
            return Err(NetError::TrajectoryTooShort {
                id: sample.id.clone(),
                len: v.len(),
            }
            .into());
        }
        Ok(Prediction {
            start: WINDOW,
            values: self.rollout(&v[..WINDOW], v.len() - WINDOW)?,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SampleScore {
    pub id: String,
    pub condition_label: String,
    pub rmse: f64,
    /// Scored region only.
    pub times: Vec<f64>,
    pub truth: Vec<f64>,
    pub predicted: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Evaluation {
    pub samples: Vec<SampleScore>,
    /// Mean per-sample RMSE of each condition, keyed by condition label.
    pub per_condition: BTreeMap<String, f64>,
    /// Mean over conditions.
    pub overall: f64,
}

pub fn evaluate_model(
    model: &dyn TrajectoryPredictor,
    samples: &[&SampleRecord],
    target: Target,
) -> Result<Evaluation, EvalError> {
    if samples.is_empty() {
        return Err(EvalError::EmptyEvalSet);
    }
    let mut scores = Vec::with_capacity(samples.len());
    let mut grouped: BTreeMap<String, Vec<f64>> = BTreeMap::new();
    for s in samples {
        let truth = target.of(s);
        let pred = model.predict(s, truth)?;
        let tail = &truth.values()[pred.start.min(truth.len())..];
        let r = rmse(&pred.values, tail)?;
        let label = s.condition.label();
        grouped.entry(label.clone()).or_default().push(r);
        scores.push(SampleScore {
            id: s.id.clone(),
            condition_label: label,
            rmse: r,
            times: truth.times()[pred.start..].to_vec(),
            truth: tail.to_vec(),
            predicted: pred.values,
        });
    }
    let per_condition: BTreeMap<String, f64> = grouped
        .into_iter()
        .map(|(k, v)| (k, v.iter().sum::<f64>() / v.len() as f64))
        .collect();
    let overall = per_condition.values().sum::<f64>() / per_condition.len() as f64;
    Ok(Evaluation {
        samples: scores,
        per_condition,
        overall,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    Baseline,
    TabularOnly,
    MultiModal,
}

impl ModelKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            ModelKind::Baseline => "baseline",
            ModelKind::TabularOnly => "tabular_only",
            ModelKind::MultiModal => "multi_modal",
        }
    }

    pub fn modality(&self) -> Option<Modality> {
        match self {
            ModelKind::Baseline => None,
            ModelKind::TabularOnly => Some(Modality::TabularOnly),
            ModelKind::MultiModal => Some(Modality::MultiModal),
        }
    }
}

impl std::str::FromStr for ModelKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "baseline" => Ok(Self::Baseline),
            "tabular" | "tabular_only" => Ok(Self::TabularOnly),
            "multimodal" | "multi_modal" => Ok(Self::MultiModal),
            other => Err(format!(
                "unknown modality {other:?} (expected tabular, multimodal or baseline)"
            )),
        }
    }
}

/// The five ablation rows, in report order.
pub const ABLATION_CELLS: [(SplitMode, ModelKind); 5] = [
    (SplitMode::AllUnseen, ModelKind::Baseline),
    (SplitMode::AllUnseen, ModelKind::TabularOnly),
    (SplitMode::SimilarityInformed, ModelKind::TabularOnly),
    (SplitMode::AllUnseen, ModelKind::MultiModal),
    (SplitMode::SimilarityInformed, ModelKind::MultiModal),
];

/// Index of the reference row for improvement percentages.
pub const REFERENCE_ROW: usize = 1;

#[derive(Debug, Clone)]
pub enum TrainedModel {
    Encoder(CoefficientEncoder),
    Baseline(BaselineModel),
}

impl TrainedModel {
    pub fn checkpoint(&self, basis: &BasisConfig, tc: &TrainConfig) -> Checkpoint {
        match self {
            TrainedModel::Encoder(m) => Checkpoint::from_encoder(m, basis, tc),
            TrainedModel::Baseline(m) => Checkpoint::from_baseline(m, tc),
        }
    }

    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self, EvalError> {
        Ok(match ck {
            Checkpoint::Encoder { .. } => TrainedModel::Encoder(ck.encoder()?),
            Checkpoint::Baseline { .. } => TrainedModel::Baseline(ck.baseline()?),
        })
    }

    pub fn kind(&self) -> ModelKind {
        match self {
            TrainedModel::Encoder(m) => match m.modality {
                Modality::TabularOnly => ModelKind::TabularOnly,
                Modality::MultiModal => ModelKind::MultiModal,
            },
            TrainedModel::Baseline(_) => ModelKind::Baseline,
        }
    }

    pub fn evaluate(
        &self,
        samples: &[&SampleRecord],
        basis: &BasisConfig,
        target: Target,
    ) -> Result<Evaluation, EvalError> {
        match self {
            TrainedModel::Encoder(m) => evaluate_model(
                &EncoderPredictor {
                    model: m,
                    basis: *basis,
                },
                samples,
                target,
            ),
            TrainedModel::Baseline(m) => evaluate_model(m, samples, target),
        }
    }
}

/// Trains one model on the training conditions of `plan`.
pub fn train_model(
    records: &[SampleRecord],
    plan: &SplitPlan,
    kind: ModelKind,
    basis: &BasisConfig,
    tc: &TrainConfig,
) -> Result<(TrainedModel, LossHistory), EvalError> {
    assert!(plan.is_disjoint(), "split plan leaks evaluation conditions");
    let train = samples_in(records, plan.train_conditions());
    if train.is_empty() {
        return Err(NetError::EmptyTrainingSet.into());
    }
    Ok(match kind.modality() {
        Some(modality) => {
            let out = train_encoder(&train, modality, basis, tc)?;
            (TrainedModel::Encoder(out.model), out.history)
        }
        None => {
            let out = train_baseline(&train, tc)?;
            (TrainedModel::Baseline(out.model), out.history)
        }
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AblationConfig {
    pub basis: BasisConfig,
    pub train: TrainConfig,
    pub target: Target,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub training_mode: SplitMode,
    pub modality: ModelKind,
    pub rmse: f64,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub improvement_vs_reference: Option<f64>,
    pub per_condition: BTreeMap<String, f64>,
    pub train_conditions: Vec<String>,
    pub eval_conditions: Vec<String>,
    pub epochs_run: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportMetadata {
    pub seed: u64,
    pub config_hash: String,
    pub target: Target,
    pub aggregation: String,
    pub reference_row: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub rows: Vec<ReportRow>,
    pub metadata: ReportMetadata,
}

impl EvalReport {
    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("report serializes");
        s.push('\n');
        s
    }

    pub fn from_json(text: &str) -> Result<Self, serde_json::Error> {
        serde_json::from_str(text)
    }

    /// Aligned text table: one line per row plus a header.
    pub fn to_table(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(
            out,
            "{:<4} {:<20} {:<13} {:>10} {:>12}",
            "row", "training", "modality", "rmse", "improvement"
        );
        for (i, r) in self.rows.iter().enumerate() {
            let imp = r
                .improvement_vs_reference
                .map(|p| format!("{p:.2}%"))
                .unwrap_or_else(|| "-".into());
            let _ = writeln!(
                out,
                "{:<4} {:<20} {:<13} {:>10.4} {:>12}",
                i + 1,
                r.training_mode.as_str(),
                r.modality.as_str(),
                r.rmse,
                imp
            );
        }
        out
    }

    pub fn row(&self, mode: SplitMode, kind: ModelKind) -> Option<&ReportRow> {
        self.rows.iter().find(|r| r.training_mode == mode && r.modality == kind)
    }
}

/// Everything one ablation cell produced.
#[derive(Debug, Clone)]
pub struct CellOutcome {
    pub mode: SplitMode,
    pub kind: ModelKind,
    pub plan: SplitPlan,
    pub model: TrainedModel,
    pub history: LossHistory,
    pub evaluation: Evaluation,
}

#[derive(Debug, Clone)]
pub struct AblationRun {
    pub report: EvalReport,
    pub cells: Vec<CellOutcome>,
}

/// SHA-256 of the ablation settings, split plan and sample ids.
pub fn config_hash(records: &[SampleRecord], plan: &SplitPlan, cfg: &AblationConfig) -> String {
    let mut h = Sha256::new();
    h.update(serde_json::to_vec(cfg).expect("config serializes"));
    h.update(plan.to_json().as_bytes());
    for r in records {
        h.update(r.id.as_bytes());
        h.update([0u8]);
    }
    h.finalize().iter().map(|b| format!("{b:02x}")).collect()
}

/// Trains and scores all five configurations. `plan` must be an all-unseen
/// split; the similarity-informed rows use its similarity-selected variant.
/// Every cell uses `cfg.train.seed`.
pub fn run_ablation(
    records: &[SampleRecord],
    plan: &SplitPlan,
    cfg: &AblationConfig,
) -> Result<AblationRun, EvalError> {
    if plan.mode() != SplitMode::AllUnseen {
        return Err(EvalError::InvalidSplit(format!(
            "ablation needs an all_unseen base plan, got {}",
            plan.mode()
        )));
    }
    let similar = similarity_select(plan)?;
    let eval_samples = samples_in(records, plan.eval_conditions());
    if eval_samples.is_empty() {
        return Err(EvalError::EmptyEvalSet);
    }

    let mut cells = Vec::with_capacity(ABLATION_CELLS.len());
    for (mode, kind) in ABLATION_CELLS {
        let cell_plan = match mode {
            SplitMode::AllUnseen => plan,
            SplitMode::SimilarityInformed => &similar,
        };
        assert!(cell_plan.is_disjoint(), "split plan leaks evaluation conditions");
        log::info!("ablation cell {} / {}", mode, kind.as_str());
        let (model, history) = train_model(records, cell_plan, kind, &cfg.basis, &cfg.train)?;
        let evaluation = model.evaluate(&eval_samples, &cfg.basis, cfg.target)?;
        cells.push(CellOutcome {
            mode,
            kind,
            plan: cell_plan.clone(),
            model,
            history,
            evaluation,
        });
    }

    let reference = cells[REFERENCE_ROW].evaluation.overall;
    let rows = cells
        .iter()
        .enumerate()
        .map(|(i, c)| {
            let improvement_vs_reference = if i > REFERENCE_ROW {
                Some(improvement_percent(reference, c.evaluation.overall)?)
            } else {
                None
            };
            Ok(ReportRow {
                training_mode: c.mode,
                modality: c.kind,
                rmse: c.evaluation.overall,
                improvement_vs_reference,
                per_condition: c.evaluation.per_condition.clone(),
                train_conditions: c.plan.train_conditions().iter().map(|x| x.label()).collect(),
                eval_conditions: c.plan.eval_conditions().iter().map(|x| x.label()).collect(),
                epochs_run: c.history.train.len(),
            })
        })
        .collect::<Result<Vec<_>, EvalError>>()?;

    Ok(AblationRun {
        report: EvalReport {
            rows,
            metadata: ReportMetadata {
                seed: cfg.train.seed,
                config_hash: config_hash(records, plan, cfg),
                target: cfg.target,
                aggregation: "per-sample rmse, mean per condition, mean over conditions".into(),
                reference_row: REFERENCE_ROW + 1,
            },
        },
        cells,
    })
}
