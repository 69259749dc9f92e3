use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use colortraj::dataset::{
    conditions_of, load_dataset, make_zero_shot_split, preprocess, samples_in, save_dataset, similarity_select,
    DatasetError,
};
use colortraj::eval::{run_ablation, train_model, AblationConfig, EvalError, Evaluation, TrainedModel};
use colortraj::net::LossHistory;
use colortraj::synth::generate_dataset;
use colortraj::{Checkpoint, EvalReport, ModelKind, SampleRecord, SplitMode, SplitPlan};
use serde::Serialize;

use crate::{CliError, RunConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stage {
    Setup,
    Synthesize,
    Preprocess,
    Split,
    Train,
    Evaluate,
    Report,
}

impl Stage {
    pub fn as_str(&self) -> &'static str {
        match self {
            Stage::Setup => "setup",
            Stage::Synthesize => "synthesize",
            Stage::Preprocess => "preprocess",
            Stage::Split => "split",
            Stage::Train => "train",
            Stage::Evaluate => "evaluate",
            Stage::Report => "report",
        }
    }
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

pub const STAGE_LOG: &str = "stages.log";
pub const RESOLVED_CONFIG: &str = "resolved_config.json";
pub const REPORT_JSON: &str = "report.json";
pub const REPORT_TEXT: &str = "report.txt";

fn data_err(stage: Stage) -> impl Fn(&dyn fmt::Display) -> CliError {
    move |e| CliError::Data {
        stage,
        message: e.to_string(),
    }
}

fn eval_err(stage: Stage, e: EvalError) -> CliError {
    match e {
        EvalError::Dataset(d) => CliError::Data {
            stage,
            message: d.to_string(),
        },
        EvalError::EmptyEvalSet => CliError::Data {
            stage,
            message: e.to_string(),
        },
        other => CliError::Training {
            stage,
            message: other.to_string(),
        },
    }
}

#[derive(Serialize)]
struct SampleEntry<'a> {
    id: &'a str,
    condition: &'a str,
    rmse: f64,
}

#[derive(Serialize)]
struct EvaluationFile<'a> {
    training_mode: SplitMode,
    modality: ModelKind,
    rmse: f64,
    per_condition: &'a BTreeMap<String, f64>,
    samples: Vec<SampleEntry<'a>>,
}

/// One resolved run rooted at `cfg.output_dir`.
#[derive(Debug, Clone)]
pub struct Pipeline {
    pub cfg: RunConfig,
}

impl Pipeline {
    /// Creates the output directory and echoes the resolved config into it.
    pub fn create(cfg: RunConfig) -> Result<Self, CliError> {
        let out = &cfg.output_dir;
        fs::create_dir_all(out)
            .map_err(|e| CliError::Usage(format!("cannot create output directory {}: {e}", out.display())))?;
        fs::write(out.join(RESOLVED_CONFIG), cfg.to_json())
            .map_err(|e| CliError::Usage(format!("cannot write into {}: {e}", out.display())))?;
        Ok(Self { cfg })
    }

    pub fn out(&self) -> &Path {
        &self.cfg.output_dir
    }

    pub fn dataset_dir(&self) -> PathBuf {
        self.out().join("dataset")
    }

    pub fn preprocessed_dir(&self) -> PathBuf {
        self.out().join("preprocessed")
    }

    pub fn split_path(&self, mode: SplitMode) -> PathBuf {
        self.out().join("splits").join(format!("{}.json", mode.as_str()))
    }

    fn cell_name(mode: SplitMode, kind: ModelKind) -> String {
        format!("{}_{}", mode.as_str(), kind.as_str())
    }

    pub fn checkpoint_path(&self, mode: SplitMode, kind: ModelKind) -> PathBuf {
        self.out()
            .join("checkpoints")
            .join(format!("{}.json", Self::cell_name(mode, kind)))
    }

    pub fn history_path(&self, mode: SplitMode, kind: ModelKind) -> PathBuf {
        self.out()
            .join("histories")
            .join(format!("{}.json", Self::cell_name(mode, kind)))
    }

    pub fn evaluation_path(&self, mode: SplitMode, kind: ModelKind) -> PathBuf {
        self.out()
            .join("evaluations")
            .join(format!("{}.json", Self::cell_name(mode, kind)))
    }

    pub fn predictions_dir(&self, mode: SplitMode, kind: ModelKind) -> PathBuf {
        self.out().join("predictions").join(Self::cell_name(mode, kind))
    }

    fn write(&self, stage: Stage, path: &Path, contents: &str) -> Result<(), CliError> {
        if let Some(parent) = path.parent() {
            fs::create_dir_all(parent).map_err(|e| data_err(stage)(&format!("{}: {e}", parent.display())))?;
        }
        fs::write(path, contents).map_err(|e| data_err(stage)(&format!("{}: {e}", path.display())))
    }

    fn log_stage(&self, stage: Stage, detail: &str) -> Result<(), CliError> {
        log::info!("{stage}: {detail}");
        let path = self.out().join(STAGE_LOG);
        let mut f = fs::OpenOptions::new()
            .create(true)
            .append(true)
            .open(&path)
            .map_err(|e| data_err(stage)(&format!("{}: {e}", path.display())))?;
        writeln!(f, "{stage}: {detail}").map_err(|e| data_err(stage)(&e))
    }

    fn load_records(&self, stage: Stage, dir: &Path) -> Result<Vec<SampleRecord>, CliError> {
        load_dataset(dir).map_err(|e| data_err(stage)(&e))
    }

    fn load_split(&self, stage: Stage, mode: SplitMode) -> Result<SplitPlan, CliError> {
        let path = self.split_path(mode);
        let plan = SplitPlan::load(&path).map_err(|e| data_err(stage)(&e))?;
        if plan.mode() != mode {
            return Err(data_err(stage)(&format!(
                "{} holds a {} plan",
                path.display(),
                plan.mode()
            )));
        }
        Ok(plan)
    }

    pub fn synth(&self) -> Result<(), CliError> {
        let stage = Stage::Synthesize;
        let records = generate_dataset(&self.cfg.world).map_err(|e| data_err(stage)(&e))?;
        save_dataset(&records, &self.dataset_dir()).map_err(|e| data_err(stage)(&e))?;
        self.log_stage(stage, &format!("{} samples", records.len()))
    }

    pub fn preprocess(&self) -> Result<(), CliError> {
        let stage = Stage::Preprocess;
        let raw = self.load_records(stage, &self.dataset_dir())?;
        let smoothed = preprocess(&raw, self.cfg.cutoff).map_err(|e| data_err(stage)(&e))?;
        save_dataset(&smoothed, &self.preprocessed_dir()).map_err(|e| data_err(stage)(&e))?;
        self.log_stage(stage, &format!("cutoff {}", self.cfg.cutoff))
    }

    /// Writes the all-unseen plan and, when one exists, its
    /// similarity-informed restriction.
    pub fn split(&self) -> Result<(), CliError> {
        let stage = Stage::Split;
        let records = self.load_records(stage, &self.preprocessed_dir())?;
        let plan = make_zero_shot_split(&conditions_of(&records), &self.cfg.eval_selector(), self.cfg.world.seed)
            .map_err(|e| data_err(stage)(&e))?;
        let mut plans = vec![plan.clone()];
        match similarity_select(&plan) {
            Ok(similar) => plans.push(similar),
            Err(DatasetError::EmptySimilarSet) if self.cfg.split.mode == SplitMode::AllUnseen => {
                log::warn!("no similarity-informed plan: no condition shares a parameter with the evaluation set")
            }
            Err(e) => return Err(data_err(stage)(&e)),
        }
        let dir = self.out().join("splits");
        fs::create_dir_all(&dir).map_err(|e| data_err(stage)(&format!("{}: {e}", dir.display())))?;
        for p in &plans {
            assert!(p.is_disjoint(), "split plan leaks evaluation conditions");
            p.save(&self.split_path(p.mode())).map_err(|e| data_err(stage)(&e))?;
            let back = SplitPlan::load(&self.split_path(p.mode())).map_err(|e| data_err(stage)(&e))?;
            assert!(back.is_disjoint() && back == *p, "serialized split plan differs");
        }
        let detail: Vec<String> = plans
            .iter()
            .map(|p| {
                format!(
                    "{} train {} eval {}",
                    p.mode(),
                    p.train_conditions().len(),
                    p.eval_conditions().len()
                )
            })
            .collect();
        self.log_stage(stage, &detail.join("; "))
    }

    fn save_model(
        &self,
        stage: Stage,
        mode: SplitMode,
        model: &TrainedModel,
        history: &LossHistory,
    ) -> Result<(), CliError> {
        let kind = model.kind();
        let ck = model.checkpoint(&self.cfg.basis, &self.cfg.train);
        self.write(stage, &self.checkpoint_path(mode, kind), &ck.to_json())?;
        let hist = serde_json::to_string(history).expect("history serializes");
        self.write(stage, &self.history_path(mode, kind), &hist)
    }

    pub fn train(&self, kind: ModelKind) -> Result<(), CliError> {
        let stage = Stage::Train;
        let mode = self.cfg.split.mode;
        let records = self.load_records(stage, &self.preprocessed_dir())?;
        let plan = self.load_split(stage, mode)?;
        let (model, history) =
            train_model(&records, &plan, kind, &self.cfg.basis, &self.cfg.train).map_err(|e| eval_err(stage, e))?;
        self.save_model(stage, mode, &model, &history)?;
        self.log_stage(
            stage,
            &format!("{} {} epochs {}", mode, kind.as_str(), history.train.len()),
        )
    }

    fn save_evaluation(&self, stage: Stage, mode: SplitMode, kind: ModelKind, ev: &Evaluation) -> Result<(), CliError> {
        let file = EvaluationFile {
            training_mode: mode,
            modality: kind,
            rmse: ev.overall,
            per_condition: &ev.per_condition,
            samples: ev
                .samples
                .iter()
                .map(|s| SampleEntry {
                    id: &s.id,
                    condition: &s.condition_label,
                    rmse: s.rmse,
                })
                .collect(),
        };
        let mut json = serde_json::to_string_pretty(&file).expect("evaluation serializes");
        json.push('\n');
        self.write(stage, &self.evaluation_path(mode, kind), &json)?;
        let dir = self.predictions_dir(mode, kind);
        for s in &ev.samples {
            let mut csv = String::from("time_normalized,truth,prediction\n");
            for ((t, y), p) in s.times.iter().zip(&s.truth).zip(&s.predicted) {
                csv.push_str(&format!("{t:?},{y:?},{p:?}\n"));
            }
            self.write(stage, &dir.join(format!("{}.csv", s.id)), &csv)?;
        }
        Ok(())
    }

    pub fn evaluate(&self, kind: ModelKind) -> Result<Evaluation, CliError> {
        let stage = Stage::Evaluate;
        let mode = self.cfg.split.mode;
        let records = self.load_records(stage, &self.preprocessed_dir())?;
        let plan = self.load_split(stage, mode)?;
        let path = self.checkpoint_path(mode, kind);
        let ck = Checkpoint::load(&path).map_err(|e| data_err(stage)(&e))?;
        let model = TrainedModel::from_checkpoint(&ck).map_err(|e| eval_err(stage, e))?;
        if model.kind() != kind {
            return Err(CliError::Usage(format!(
                "{} holds a {} model, not {}",
                path.display(),
                model.kind().as_str(),
                kind.as_str()
            )));
        }
        let eval_samples = samples_in(&records, plan.eval_conditions());
        let ev = model
            .evaluate(&eval_samples, &self.cfg.basis, self.cfg.target)
            .map_err(|e| eval_err(stage, e))?;
        self.save_evaluation(stage, mode, kind, &ev)?;
        self.log_stage(stage, &format!("{} {} rmse {:.4}", mode, kind.as_str(), ev.overall))?;
        Ok(ev)
    }

    pub fn ablation_config(&self) -> AblationConfig {
        AblationConfig {
            basis: self.cfg.basis,
            train: self.cfg.train.clone(),
            target: self.cfg.target,
        }
    }

    /// Trains and scores all five configurations and writes the report.
    pub fn ablate(&self) -> Result<EvalReport, CliError> {
        let records = self.load_records(Stage::Train, &self.preprocessed_dir())?;
        let base = self.load_split(Stage::Train, SplitMode::AllUnseen)?;
        let run = run_ablation(&records, &base, &self.ablation_config()).map_err(|e| eval_err(Stage::Train, e))?;
        for cell in &run.cells {
            assert!(cell.plan.is_disjoint(), "split plan leaks evaluation conditions");
            let on_disk = self.load_split(Stage::Train, cell.mode)?;
            assert!(
                on_disk == cell.plan,
                "ablation used a plan that differs from {}",
                cell.mode
            );
            self.save_model(Stage::Train, cell.mode, &cell.model, &cell.history)?;
        }
        self.log_stage(Stage::Train, &format!("{} ablation models", run.cells.len()))?;
        for cell in &run.cells {
            self.save_evaluation(Stage::Evaluate, cell.mode, cell.kind, &cell.evaluation)?;
        }
        self.log_stage(Stage::Evaluate, &format!("{} ablation models", run.cells.len()))?;
        self.write(Stage::Report, &self.out().join(REPORT_JSON), &run.report.to_json())?;
        self.write(Stage::Report, &self.out().join(REPORT_TEXT), &run.report.to_table())?;
        self.log_stage(Stage::Report, REPORT_JSON)?;
        Ok(run.report)
    }

    /// Every stage in order. The stage log is restarted.
    pub fn run_all(&self) -> Result<EvalReport, CliError> {
        let log = self.out().join(STAGE_LOG);
        if log.exists() {
            fs::remove_file(&log).map_err(|e| data_err(Stage::Setup)(&format!("{}: {e}", log.display())))?;
        }
        self.synth()?;
        self.preprocess()?;
        self.split()?;
        self.ablate()
    }
}
