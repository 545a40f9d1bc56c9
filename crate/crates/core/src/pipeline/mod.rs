//! Run configuration, content-addressed resumable runs, and comparisons.
//!
//! A run directory holds one artifact set per stage:
//!
//! | stage     | artifacts                                                       |
//! |-----------|-----------------------------------------------------------------|
//! | calibrate | `calibration.json`                                              |
//! | query     | `votes.csv`, `votes.uncal.csv`, `dev/votes*.csv`, `errors.jsonl`|
//! | label     | `labels.csv`, `labels.meta.json`                                |
//! | train     | `model-seed{N}.bin`                                             |
//! | eval      | `metrics.json`                                                  |
//! | report    | `report/`                                                       |
//!
//! `run.json` records per-stage status. A stage marked done whose artifacts
//! are present is never recomputed.

use std::collections::BTreeMap;
use std::fs::{self, OpenOptions};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::analysis::{metrics, MetricsReport, Report};
use crate::calibration::{default_null_inputs, CalibrationSet, CalibrationStore};
use crate::data::{load_dataset, read_vote_matrix, write_vote_matrix, Dataset, ExtractionMode};
use crate::end_model::{
    check_seeds, evaluate_models, train_replicates, FeatureSpec, LinearModel, MeanSe,
    ReplicateReport, TrainConfig, DEFAULT_SEEDS,
};
use crate::gateway::{BackendConfig, BackendStats, Gateway, ResponseCache, RetryPolicy};
use crate::hashing::FieldHasher;
use crate::label_model::{
    fit_label_model, read_soft_labels, write_label_meta, write_soft_labels, LabelModelConfig,
    SoftLabels,
};
use crate::prompt::{apply_suite, ApplyOptions, LabelerSuite, QueryFailure};
use crate::{Error, Result};

pub const RUN_FILE: &str = "run.json";
pub const LOCK_FILE: &str = ".lock";
/// Hex digits of the config-and-inputs digest used as the run id.
pub const RUN_ID_LEN: usize = 16;

fn default_true() -> bool {
    true
}
fn default_label_split() -> String {
    "train".into()
}
fn default_report_split() -> String {
    "valid".into()
}
fn default_eval_split() -> String {
    "test".into()
}
fn default_seeds() -> Vec<u64> {
    DEFAULT_SEEDS.to_vec()
}
fn default_output() -> PathBuf {
    PathBuf::from("runs")
}

/// A run configuration as read from TOML. Relative paths resolve against
/// the directory of the config file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub dataset: PathBuf,
    pub labelers: PathBuf,
    #[serde(default)]
    pub backends: BTreeMap<String, BackendConfig>,
    #[serde(default = "default_true")]
    pub calibrate: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub null_inputs: Option<Vec<String>>,
    /// Split whose votes are denoised and trained on.
    #[serde(default = "default_label_split")]
    pub label_split: String,
    /// Gold-bearing split for labeling-function diagnostics.
    #[serde(default = "default_report_split")]
    pub report_split: String,
    /// Gold-bearing split for end-model metrics.
    #[serde(default = "default_eval_split")]
    pub eval_split: String,
    /// Leave examples on which every labeling function abstained out of
    /// end-model training.
    #[serde(default = "default_true")]
    pub drop_uncovered: bool,
    #[serde(default)]
    pub label: LabelModelConfig,
    #[serde(default)]
    pub train: TrainConfig,
    #[serde(default = "default_seeds")]
    pub seeds: Vec<u64>,
    #[serde(default = "default_output")]
    pub output: PathBuf,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cache_dir: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub concurrency: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub retry: Option<RetryPolicy>,
    #[serde(skip)]
    pub base_dir: PathBuf,
}

impl RunConfig {
    pub fn from_toml(text: &str, base_dir: impl Into<PathBuf>) -> Result<Self> {
        let mut cfg: RunConfig =
            toml::from_str(text).map_err(|e| Error::Config(format!("run config: {e}")))?;
        cfg.base_dir = base_dir.into();
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::load(path, e))?;
        let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Self::from_toml(&text, base)
    }

    pub fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base_dir.join(p)
        }
    }

    pub fn dataset_dir(&self) -> PathBuf {
        self.resolve(&self.dataset)
    }

    pub fn labelers_path(&self) -> PathBuf {
        self.resolve(&self.labelers)
    }

    pub fn output_dir(&self) -> PathBuf {
        self.resolve(&self.output)
    }

    pub fn null_inputs(&self) -> Vec<String> {
        self.null_inputs.clone().unwrap_or_else(default_null_inputs)
    }

    /// Checks referenced files and seeds without touching any backend.
    pub fn validate(&self) -> Result<()> {
        let check = |p: PathBuf, what: &str| {
            if p.exists() {
                Ok(())
            } else {
                Err(Error::Validation(format!(
                    "{what} {} does not exist",
                    p.display()
                )))
            }
        };
        check(self.dataset_dir(), "dataset")?;
        check(self.labelers_path(), "labeler suite")?;
        for (id, b) in &self.backends {
            if let BackendConfig::Mock { rulebook } = b {
                check(
                    self.resolve(Path::new(rulebook)),
                    &format!("rulebook of `{id}`"),
                )?;
            }
        }
        check_seeds(&self.seeds).map_err(|e| Error::Validation(e.to_string()))?;
        self.train
            .spec()
            .map_err(|e| Error::Validation(e.to_string()))?;
        Ok(())
    }

    /// Fields that determine results, serialized canonically. Output,
    /// cache and concurrency settings are excluded.
    fn result_fields(&self) -> serde_json::Value {
        serde_json::json!({
            "dataset": self.dataset,
            "labelers": self.labelers,
            "backends": self.backends,
            "calibrate": self.calibrate,
            "null_inputs": self.null_inputs(),
            "label_split": self.label_split,
            "report_split": self.report_split,
            "eval_split": self.eval_split,
            "drop_uncovered": self.drop_uncovered,
            "label": self.label,
            "train": self.train,
            "seeds": self.seeds,
        })
    }

    /// Digest of the config and the bytes of every input file.
    pub fn run_id(&self) -> Result<String> {
        let mut h = FieldHasher::new();
        h.field(serde_json::to_vec(&self.result_fields())?);
        let dataset = self.dataset_dir();
        h.field(read_input(&dataset.join("classes.json"))?);
        for split in crate::data::SPLITS {
            h.field(read_input(&dataset.join(format!("{split}.jsonl")))?);
        }
        h.field(read_input(&self.labelers_path())?);
        for b in self.backends.values() {
            if let BackendConfig::Mock { rulebook } = b {
                h.field(read_input(&self.resolve(Path::new(rulebook)))?);
            }
        }
        let mut id = h.hex();
        id.truncate(RUN_ID_LEN);
        Ok(id)
    }

    pub fn run_dir(&self) -> Result<PathBuf> {
        Ok(self.output_dir().join(self.run_id()?))
    }

    pub fn cache_path(&self) -> PathBuf {
        match &self.cache_dir {
            Some(d) => self.resolve(d),
            None => self.output_dir().join("cache"),
        }
    }
}

fn read_input(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| Error::load(path, e))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Stage {
    Calibrate,
    Query,
    Label,
    Train,
    Eval,
    Report,
}

impl Stage {
    pub const ALL: [Stage; 6] = [
        Stage::Calibrate,
        Stage::Query,
        Stage::Label,
        Stage::Train,
        Stage::Eval,
        Stage::Report,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Stage::Calibrate => "calibrate",
            Stage::Query => "query",
            Stage::Label => "label",
            Stage::Train => "train",
            Stage::Eval => "eval",
            Stage::Report => "report",
        }
    }
}

impl std::str::FromStr for Stage {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Stage::ALL
            .into_iter()
            .find(|st| st.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown stage `{s}`")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum StageStatus {
    #[default]
    Pending,
    Done,
    Skipped,
    Failed,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct StageRecord {
    pub status: StageStatus,
    /// Paths relative to the run directory.
    #[serde(default)]
    pub artifacts: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

/// Contents of `run.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub run_id: String,
    pub config: serde_json::Value,
    pub stages: BTreeMap<Stage, StageRecord>,
}

impl RunRecord {
    fn new(run_id: String, config: &RunConfig) -> Self {
        Self {
            run_id,
            config: config.result_fields(),
            stages: Stage::ALL
                .iter()
                .map(|s| (*s, StageRecord::default()))
                .collect(),
        }
    }

    pub fn load(run_dir: impl AsRef<Path>) -> Result<Self> {
        let path = run_dir.as_ref().join(RUN_FILE);
        Ok(serde_json::from_slice(
            &fs::read(&path).map_err(|e| Error::load(&path, e))?,
        )?)
    }

    fn save(&self, run_dir: &Path) -> Result<()> {
        fs::write(
            run_dir.join(RUN_FILE),
            serde_json::to_string_pretty(self)? + "\n",
        )?;
        Ok(())
    }

    pub fn status(&self, stage: Stage) -> StageStatus {
        self.stages
            .get(&stage)
            .map(|r| r.status)
            .unwrap_or_default()
    }

    /// Done or skipped, with every artifact present.
    fn is_complete(&self, stage: Stage, run_dir: &Path) -> bool {
        self.stages.get(&stage).is_some_and(|r| {
            matches!(r.status, StageStatus::Done | StageStatus::Skipped)
                && r.artifacts.iter().all(|a| run_dir.join(a).exists())
        })
    }

    pub fn is_finished(&self) -> bool {
        Stage::ALL
            .iter()
            .all(|s| matches!(self.status(*s), StageStatus::Done | StageStatus::Skipped))
    }
}

/// Overrides supplied outside the config file.
#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    pub cache_dir: Option<PathBuf>,
    pub seeds: Option<Vec<u64>>,
    /// Last stage to execute; all stages when `None`.
    pub until: Option<Stage>,
}

impl RunOptions {
    pub fn apply(&self, config: &RunConfig) -> RunConfig {
        let mut cfg = config.clone();
        if let Some(d) = &self.cache_dir {
            cfg.cache_dir = Some(d.clone());
        }
        if let Some(s) = &self.seeds {
            cfg.seeds = s.clone();
        }
        cfg
    }
}

#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub run_dir: PathBuf,
    pub record: RunRecord,
    /// Stages executed by this invocation.
    pub executed: Vec<Stage>,
    /// Gateway counters when any stage needed the gateway.
    pub gateway_stats: Option<BTreeMap<String, BackendStats>>,
}

impl RunOutcome {
    pub fn up_to_date(&self) -> bool {
        self.executed.is_empty()
    }
}

/// Held while a run directory is being written.
struct RunLock(PathBuf);

impl RunLock {
    fn acquire(run_dir: &Path) -> Result<Self> {
        let path = run_dir.join(LOCK_FILE);
        OpenOptions::new()
            .write(true)
            .create_new(true)
            .open(&path)
            .map_err(|e| match e.kind() {
                std::io::ErrorKind::AlreadyExists => Error::Validation(format!(
                    "run directory {} is locked by another run",
                    run_dir.display()
                )),
                _ => e.into(),
            })?;
        Ok(Self(path))
    }
}

impl Drop for RunLock {
    fn drop(&mut self) {
        let _ = fs::remove_file(&self.0);
    }
}

/// Builds a gateway with the configured backends and an on-disk cache.
pub fn build_gateway(config: &RunConfig) -> Result<Gateway> {
    let cache = ResponseCache::open(config.cache_path())?;
    let mut gw = Gateway::new(cache).with_retry(config.retry.unwrap_or_default());
    for (id, b) in &config.backends {
        gw.register(id.clone(), b.build(&config.base_dir)?);
    }
    Ok(gw)
}

/// Loaded inputs shared by the stages.
pub struct RunInputs {
    pub dataset: Dataset,
    pub suite: LabelerSuite,
}

impl RunInputs {
    pub fn load(config: &RunConfig) -> Result<Self> {
        let dataset = load_dataset(config.dataset_dir())?;
        let suite = LabelerSuite::load(config.labelers_path(), &dataset.class_space)?;
        for lf in &suite.lfs {
            if !config.backends.contains_key(&lf.backend) {
                return Err(Error::Validation(format!(
                    "`{}` uses backend `{}`, which the config does not define",
                    lf.name, lf.backend
                )));
            }
        }
        for split in [
            &config.label_split,
            &config.report_split,
            &config.eval_split,
        ] {
            suite.check_split(dataset.split(split)?)?;
        }
        dataset.split(&config.report_split)?.require_gold()?;
        dataset.split(&config.eval_split)?.require_gold()?;
        Ok(Self { dataset, suite })
    }
}

/// Loads inputs and checks the config without running anything.
pub fn validate(config: &RunConfig) -> Result<RunInputs> {
    config.validate()?;
    RunInputs::load(config)
}

pub fn model_file(seed: u64) -> String {
    format!("model-seed{seed}.bin")
}

/// What `metrics.json` holds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunMetrics {
    pub split: String,
    pub end_model: ReplicateReport,
    /// Hard label-model labels against gold on the label split, when it
    /// carries gold.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label_model: Option<MetricsReport>,
}

pub fn read_metrics(run_dir: impl AsRef<Path>) -> Result<RunMetrics> {
    let path = run_dir.as_ref().join("metrics.json");
    Ok(serde_json::from_slice(
        &fs::read(&path).map_err(|e| Error::load(&path, e))?,
    )?)
}

struct Runner<'a> {
    config: &'a RunConfig,
    dir: PathBuf,
    inputs: RunInputs,
    gateway: Option<Gateway>,
}

impl Runner<'_> {
    fn gateway(&mut self) -> Result<&Gateway> {
        if self.gateway.is_none() {
            self.gateway = Some(build_gateway(self.config)?);
        }
        Ok(self.gateway.as_ref().expect("just built"))
    }

    fn run_stage(&mut self, stage: Stage) -> Result<(StageStatus, Vec<String>)> {
        match stage {
            Stage::Calibrate => self.calibrate(),
            Stage::Query => self.query(),
            Stage::Label => self.label(),
            Stage::Train => self.train(),
            Stage::Eval => self.eval(),
            Stage::Report => self.report(),
        }
    }

    fn calibrate(&mut self) -> Result<(StageStatus, Vec<String>)> {
        if !self.config.calibrate {
            return Ok((StageStatus::Skipped, vec![]));
        }
        let nulls = self.config.null_inputs();
        let lfs = self.inputs.suite.lfs.clone();
        let gw = self.gateway()?;
        let store = CalibrationStore::for_gateway(gw)?;
        let mut set = CalibrationSet::default();
        for lf in lfs.iter().filter(|lf| lf.mode == ExtractionMode::Score) {
            set.insert(store.estimate(lf, gw, &nulls)?);
        }
        set.save(self.dir.join("calibration.json"))?;
        Ok((StageStatus::Done, vec!["calibration.json".into()]))
    }

    fn query(&mut self) -> Result<(StageStatus, Vec<String>)> {
        let calibration = if self.config.calibrate {
            Some(CalibrationSet::load(self.dir.join("calibration.json"))?)
        } else {
            None
        };
        let options = ApplyOptions {
            concurrency: self
                .config
                .concurrency
                .unwrap_or(ApplyOptions::default().concurrency),
        };
        let dev_dir = self.dir.join("dev");
        fs::create_dir_all(&dev_dir)?;
        let targets = [
            (self.config.label_split.clone(), ""),
            (self.config.report_split.clone(), "dev/"),
        ];
        let mut artifacts = Vec::new();
        let mut failures: Vec<QueryFailure> = Vec::new();
        let mut queries = 0usize;
        for (split_name, prefix) in targets {
            let split = self.inputs.dataset.split(&split_name)?.clone();
            let suite = self.inputs.suite.clone();
            let gw = self.gateway()?;
            let out = apply_suite(&suite, &split, gw, calibration.as_ref(), &options)?;
            queries += out.matrix.n() * out.matrix.m();
            let votes = format!("{prefix}votes.csv");
            write_vote_matrix(&out.matrix, self.dir.join(&votes))?;
            artifacts.push(votes);
            if let Some(u) = &out.uncalibrated {
                let uncal = format!("{prefix}votes.uncal.csv");
                write_vote_matrix(u, self.dir.join(&uncal))?;
                artifacts.push(uncal);
            }
            failures.extend(out.failures);
        }
        if queries > 0 && failures.len() == queries {
            return Err(Error::Backend {
                backend: self.inputs.suite.lfs[0].backend.clone(),
                reason: format!("all {queries} queries failed; first: {}", failures[0].error),
            });
        }
        let mut lines = String::new();
        for f in &failures {
            lines.push_str(&serde_json::to_string(f)?);
            lines.push('\n');
        }
        fs::write(self.dir.join("errors.jsonl"), lines)?;
        artifacts.push("errors.jsonl".into());
        Ok((StageStatus::Done, artifacts))
    }

    fn label(&mut self) -> Result<(StageStatus, Vec<String>)> {
        let matrix = read_vote_matrix(self.dir.join("votes.csv"))?;
        let out = fit_label_model(&matrix, &self.inputs.dataset.prior, &self.config.label)?;
        write_soft_labels(&out.soft, self.dir.join("labels.csv"))?;
        write_label_meta(&out.meta, self.dir.join("labels.meta.json"))?;
        Ok((
            StageStatus::Done,
            vec!["labels.csv".into(), "labels.meta.json".into()],
        ))
    }

    fn soft_labels(&self) -> Result<SoftLabels> {
        let meta = crate::label_model::read_label_meta(self.dir.join("labels.meta.json"))?;
        read_soft_labels(
            self.dir.join("labels.csv"),
            &self.inputs.dataset.prior,
            &meta.model,
        )
    }

    fn spec(&self) -> Result<FeatureSpec> {
        self.config.train.spec()
    }

    fn train(&mut self) -> Result<(StageStatus, Vec<String>)> {
        let soft = self.soft_labels()?;
        let split = self.inputs.dataset.split(&self.config.label_split)?;
        let keep: Vec<usize> = if self.config.drop_uncovered {
            let matrix = read_vote_matrix(self.dir.join("votes.csv"))?;
            (0..matrix.n())
                .filter(|&i| matrix.rows[i].iter().any(|v| !v.is_abstain()))
                .collect()
        } else {
            (0..soft.n()).collect()
        };
        if keep.is_empty() {
            return Err(Error::Validation(
                "every labeling function abstained on every training example".into(),
            ));
        }
        let spec = self.spec()?;
        let by_id: BTreeMap<&str, usize> = split
            .examples
            .iter()
            .enumerate()
            .map(|(i, e)| (e.id.as_str(), i))
            .collect();
        let mut xs = Vec::with_capacity(keep.len());
        let mut rows = Vec::with_capacity(keep.len());
        let mut ids = Vec::with_capacity(keep.len());
        for &i in &keep {
            let id = &soft.example_ids[i];
            let e = by_id.get(id.as_str()).ok_or_else(|| {
                Error::Validation(format!("labels.csv names unknown example `{id}`"))
            })?;
            xs.push(spec.featurize(&split.examples[*e]));
            rows.push(soft.rows[i].clone());
            ids.push(id.clone());
        }
        let kept = SoftLabels::new(ids, rows, soft.model.clone(), soft.prior.clone())?;
        let trained = train_replicates(&xs, &kept, &self.config.train, &self.config.seeds)?;
        let mut artifacts = Vec::new();
        for (model, _) in &trained {
            let name = model_file(model.seed);
            model.save(self.dir.join(&name))?;
            artifacts.push(name);
        }
        Ok((StageStatus::Done, artifacts))
    }

    fn eval(&mut self) -> Result<(StageStatus, Vec<String>)> {
        let split = self.inputs.dataset.split(&self.config.eval_split)?;
        let gold = split.require_gold()?;
        let spec = self.spec()?;
        let xs = spec.featurize_all(&split.examples);
        let models = self
            .config
            .seeds
            .iter()
            .map(|s| LinearModel::load(self.dir.join(model_file(*s))))
            .collect::<Result<Vec<_>>>()?;
        let positive = self.inputs.dataset.class_space.positive_index();
        let end_model = evaluate_models(&models, &xs, &gold, positive)?;

        let label_split = self.inputs.dataset.split(&self.config.label_split)?;
        let label_model = match label_split.gold() {
            Some(g) => Some(metrics(&self.soft_labels()?.hard_labels(), &g, positive)?),
            None => None,
        };
        let out = RunMetrics {
            split: split.name.clone(),
            end_model,
            label_model,
        };
        fs::write(
            self.dir.join("metrics.json"),
            serde_json::to_string_pretty(&out)? + "\n",
        )?;
        Ok((StageStatus::Done, vec!["metrics.json".into()]))
    }

    fn report(&mut self) -> Result<(StageStatus, Vec<String>)> {
        let split = self.inputs.dataset.split(&self.config.report_split)?;
        let matrix = read_vote_matrix(self.dir.join("dev/votes.csv"))?;
        let uncal_path = self.dir.join("dev/votes.uncal.csv");
        let uncal = if uncal_path.exists() {
            Some(read_vote_matrix(uncal_path)?)
        } else {
            None
        };
        let report = Report::build(
            &matrix,
            uncal.as_ref(),
            split,
            &self.inputs.dataset.class_space,
        )?;
        report.write(self.dir.join("report"))?;
        Ok((StageStatus::Done, vec!["report/report.json".into()]))
    }
}

/// Runs every incomplete stage up to `options.until`, resuming from the
/// record in the run directory.
///
/// A stage failure is recorded in `run.json` and returned. Backend
/// exhaustion surfaces as a backend error; any other failure as
/// [`Error::Stage`].
pub fn run_pipeline(config: &RunConfig, options: &RunOptions) -> Result<RunOutcome> {
    let config = options.apply(config);
    config.validate()?;
    let inputs = RunInputs::load(&config)?;
    let run_id = config.run_id()?;
    let dir = config.output_dir().join(&run_id);
    fs::create_dir_all(&dir)?;
    let _lock = RunLock::acquire(&dir)?;

    let mut record = match RunRecord::load(&dir) {
        Ok(r) if r.run_id == run_id => r,
        _ => RunRecord::new(run_id, &config),
    };
    let mut runner = Runner {
        config: &config,
        dir: dir.clone(),
        inputs,
        gateway: None,
    };
    let last = options.until.unwrap_or(Stage::Report);
    let mut executed = Vec::new();
    let mut invalidated = false;
    for stage in Stage::ALL.into_iter().filter(|s| *s <= last) {
        if !invalidated && record.is_complete(stage, &dir) {
            continue;
        }
        // Everything downstream of a recomputed stage is stale.
        invalidated = true;
        log::info!("stage {}", stage.name());
        executed.push(stage);
        match runner.run_stage(stage) {
            Ok((status, artifacts)) => {
                record.stages.insert(
                    stage,
                    StageRecord {
                        status,
                        artifacts,
                        error: None,
                    },
                );
                record.save(&dir)?;
            }
            Err(e) => {
                record.stages.insert(
                    stage,
                    StageRecord {
                        status: StageStatus::Failed,
                        artifacts: vec![],
                        error: Some(e.to_string()),
                    },
                );
                for later in Stage::ALL.into_iter().filter(|s| *s > stage) {
                    record.stages.insert(later, StageRecord::default());
                }
                record.save(&dir)?;
                return Err(if e.is_backend() {
                    e
                } else {
                    Error::Stage {
                        stage: stage.name().into(),
                        reason: e.to_string(),
                    }
                });
            }
        }
    }
    if invalidated {
        for later in Stage::ALL.into_iter().filter(|s| *s > last) {
            record.stages.insert(later, StageRecord::default());
        }
        record.save(&dir)?;
    }
    Ok(RunOutcome {
        run_dir: dir,
        record,
        executed,
        gateway_stats: runner.gateway.as_ref().map(Gateway::flush_stats),
    })
}

/// A console-triggered run: calibrate, query, label and report on one
/// gold-bearing split. End-model stages are recorded as skipped.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabelQualityRequest {
    pub split: String,
    pub calibrate: bool,
    #[serde(default)]
    pub label: LabelModelConfig,
}

impl LabelQualityRequest {
    /// Digest of the request, the suite and the dataset contents.
    pub fn run_id(
        &self,
        dataset: &Dataset,
        suite: &LabelerSuite,
        nulls: &[String],
    ) -> Result<String> {
        let mut h = FieldHasher::new();
        h.field("label-quality")
            .field(serde_json::to_vec(self)?)
            .field(suite.hash());
        for n in nulls {
            h.field(n);
        }
        h.field(serde_json::to_vec(&dataset.class_space.names())?)
            .field(serde_json::to_vec(&dataset.prior)?);
        for e in &dataset.split(&self.split)?.examples {
            h.field(&e.id).field(serde_json::to_vec(&e.fields)?);
            h.field(e.gold.map_or(-1, |g| g as i64).to_le_bytes());
        }
        let mut id = h.hex();
        id.truncate(RUN_ID_LEN);
        Ok(id)
    }
}

/// Runs (or finds) a label-quality run under `runs_root/{run_id}`.
pub fn run_label_quality(
    dataset: &Dataset,
    suite: &LabelerSuite,
    gateway: &Gateway,
    request: &LabelQualityRequest,
    nulls: &[String],
    runs_root: &Path,
) -> Result<RunRecord> {
    let run_id = request.run_id(dataset, suite, nulls)?;
    let dir = runs_root.join(&run_id);
    if let Ok(r) = RunRecord::load(&dir) {
        if r.is_finished() {
            return Ok(r);
        }
    }
    let split = dataset.split(&request.split)?;
    split.require_gold()?;
    fs::create_dir_all(&dir)?;
    let _lock = RunLock::acquire(&dir)?;
    let mut record = RunRecord {
        run_id,
        config: serde_json::to_value(request)?,
        stages: Stage::ALL
            .iter()
            .map(|s| (*s, StageRecord::default()))
            .collect(),
    };
    let done = |record: &mut RunRecord, stage: Stage, status, artifacts: Vec<&str>| {
        record.stages.insert(
            stage,
            StageRecord {
                status,
                artifacts: artifacts.into_iter().map(String::from).collect(),
                error: None,
            },
        );
        record.save(&dir)
    };
    let result = (|| -> Result<()> {
        let calibration = if request.calibrate {
            let store = CalibrationStore::for_gateway(gateway)?;
            let mut set = CalibrationSet::default();
            for lf in suite
                .lfs
                .iter()
                .filter(|lf| lf.mode == ExtractionMode::Score)
            {
                set.insert(store.estimate(lf, gateway, nulls)?);
            }
            set.save(dir.join("calibration.json"))?;
            done(
                &mut record,
                Stage::Calibrate,
                StageStatus::Done,
                vec!["calibration.json"],
            )?;
            Some(set)
        } else {
            done(&mut record, Stage::Calibrate, StageStatus::Skipped, vec![])?;
            None
        };
        let out = apply_suite(
            suite,
            split,
            gateway,
            calibration.as_ref(),
            &ApplyOptions::default(),
        )?;
        write_vote_matrix(&out.matrix, dir.join("votes.csv"))?;
        let mut artifacts = vec!["votes.csv"];
        if let Some(u) = &out.uncalibrated {
            write_vote_matrix(u, dir.join("votes.uncal.csv"))?;
            artifacts.push("votes.uncal.csv");
        }
        let mut lines = String::new();
        for f in &out.failures {
            lines.push_str(&serde_json::to_string(f)?);
            lines.push('\n');
        }
        fs::write(dir.join("errors.jsonl"), lines)?;
        artifacts.push("errors.jsonl");
        done(&mut record, Stage::Query, StageStatus::Done, artifacts)?;

        let labels = fit_label_model(&out.matrix, &dataset.prior, &request.label)?;
        write_soft_labels(&labels.soft, dir.join("labels.csv"))?;
        write_label_meta(&labels.meta, dir.join("labels.meta.json"))?;
        done(
            &mut record,
            Stage::Label,
            StageStatus::Done,
            vec!["labels.csv", "labels.meta.json"],
        )?;
        done(&mut record, Stage::Train, StageStatus::Skipped, vec![])?;
        done(&mut record, Stage::Eval, StageStatus::Skipped, vec![])?;

        let report = Report::build(
            &out.matrix,
            out.uncalibrated.as_ref(),
            split,
            &dataset.class_space,
        )?;
        report.write(dir.join("report"))?;
        done(
            &mut record,
            Stage::Report,
            StageStatus::Done,
            vec!["report/report.json"],
        )?;
        Ok(())
    })();
    if let Err(e) = result {
        let failed = Stage::ALL
            .into_iter()
            .find(|s| record.status(*s) == StageStatus::Pending)
            .unwrap_or(Stage::Report);
        record.stages.insert(
            failed,
            StageRecord {
                status: StageStatus::Failed,
                artifacts: vec![],
                error: Some(e.to_string()),
            },
        );
        record.save(&dir)?;
        return Err(e);
    }
    Ok(record)
}

/// Process exit code for an error: 2 validation, 3 stage failure
/// (resumable), 4 backend exhaustion.
pub fn exit_code(e: &Error) -> i32 {
    if e.is_backend() {
        return 4;
    }
    match e {
        Error::Validation(_)
        | Error::Config(_)
        | Error::Load { .. }
        | Error::Parse { .. }
        | Error::Render(_) => 2,
        _ => 3,
    }
}

/// One row of a comparison: a run's label and its metric summary.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonRow {
    pub name: String,
    pub run_id: String,
    pub accuracy: MeanSe,
    pub precision: MeanSe,
    pub recall: MeanSe,
    pub f1: MeanSe,
}

impl ComparisonRow {
    fn from_metrics(name: &str, run_id: &str, m: &RunMetrics) -> Self {
        let s = &m.end_model.summary;
        Self {
            name: name.into(),
            run_id: run_id.into(),
            accuracy: s.accuracy,
            precision: s.precision,
            recall: s.recall,
            f1: s.f1,
        }
    }

    pub fn metric(&self, name: &str) -> Option<MeanSe> {
        match name {
            "accuracy" => Some(self.accuracy),
            "precision" => Some(self.precision),
            "recall" => Some(self.recall),
            "f1" => Some(self.f1),
            _ => None,
        }
    }
}

pub const COMPARISON_METRICS: [&str; 4] = ["accuracy", "precision", "recall", "f1"];

/// Zero-shot against prompted weak supervision on one gold split.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    pub split: String,
    pub zero_shot: ComparisonRow,
    pub prompted_ws: ComparisonRow,
}

impl Comparison {
    /// Prompted minus zero-shot mean, as a fraction.
    pub fn delta(&self, metric: &str) -> Option<f64> {
        Some(self.prompted_ws.metric(metric)?.mean - self.zero_shot.metric(metric)?.mean)
    }

    /// Plain-text table: one row per run, cells `mean (SE)` in percent,
    /// and a delta row in percentage points.
    pub fn render(&self) -> String {
        let mut out = format!("{:<12}", "");
        for m in COMPARISON_METRICS {
            out.push_str(&format!("{m:>14}"));
        }
        out.push('\n');
        for row in [&self.zero_shot, &self.prompted_ws] {
            out.push_str(&format!("{:<12}", row.name));
            for m in COMPARISON_METRICS {
                out.push_str(&format!(
                    "{:>14}",
                    row.metric(m).expect("known").format_pct()
                ));
            }
            out.push('\n');
        }
        out.push_str(&format!("{:<12}", "delta"));
        for m in COMPARISON_METRICS {
            let d = self.delta(m).expect("known") * 100.0;
            out.push_str(&format!("{:>14}", format!("{d:+.1}")));
        }
        out.push('\n');
        out
    }
}

/// Runs (or resumes) both configs and tabulates their end-model metrics.
pub fn compare(
    zero_shot: &RunConfig,
    prompted_ws: &RunConfig,
    options: &RunOptions,
) -> Result<Comparison> {
    let zs = options.apply(zero_shot);
    let pws = options.apply(prompted_ws);
    if zs.dataset_dir().canonicalize()? != pws.dataset_dir().canonicalize()? {
        return Err(Error::Validation(
            "compared runs use different datasets".into(),
        ));
    }
    if zs.backends != pws.backends {
        return Err(Error::Validation(
            "compared runs use different backends".into(),
        ));
    }
    if zs.eval_split != pws.eval_split {
        return Err(Error::Validation(
            "compared runs evaluate different splits".into(),
        ));
    }
    let a = run_pipeline(&zs, options)?;
    let b = run_pipeline(&pws, options)?;
    let ma = read_metrics(&a.run_dir)?;
    let mb = read_metrics(&b.run_dir)?;
    Ok(Comparison {
        split: ma.split.clone(),
        zero_shot: ComparisonRow::from_metrics("zero_shot", &a.record.run_id, &ma),
        prompted_ws: ComparisonRow::from_metrics("prompted_ws", &b.record.run_id, &mb),
    })
}
