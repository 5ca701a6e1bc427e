//! Experiment grids: tasks × methods, scored on held-back target labels.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::OnceLock;
use std::time::Instant;

use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::classifier::{accuracy, Classifier, ClassifierSpec};
use crate::baselines::{otda_empirical, otda_linear, EmpiricalSolver};
use crate::data::{load_csv, standardize, BlobsSpec, Dataset};
use crate::error::{Error, Result, StageExt};
use crate::gmm::{em_fit, EmConfig, Gmm};
use crate::io::{read_json, write_atomic, write_json};
use crate::otda::{
    adapt_map, adapt_sample, adapt_transport, mixture_plan, transfer_component_labels,
    AdaptationDiagnostics, AdaptationResult, Method, MixturePlan,
};

pub const SCHEMA_VERSION: u32 = 1;
pub const DEFAULT_MAX_SAMPLES: usize = 2000;
pub const RESULTS_HEADER: &str = "task,method,accuracy,seed,wall_ms,K_src,K_tgt,classifier";

/// Where a task's two domains come from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TaskData {
    Synthetic(BlobsSpec),
    /// Two labeled CSV files; relative paths resolve against the config file.
    Csv {
        source: PathBuf,
        target: PathBuf,
        #[serde(default = "default_label_column")]
        label_column: String,
    },
}

fn default_label_column() -> String {
    "label".to_string()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskSpec {
    pub name: String,
    pub data: TaskData,
}

fn default_schema() -> u32 {
    SCHEMA_VERSION
}

fn default_true() -> bool {
    true
}

fn default_max_samples() -> usize {
    DEFAULT_MAX_SAMPLES
}

fn default_methods() -> Vec<Method> {
    Method::ALL.to_vec()
}

/// A grid of tasks and methods with shared settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default = "default_schema")]
    pub schema: u32,
    pub tasks: Vec<TaskSpec>,
    #[serde(default = "default_methods")]
    pub methods: Vec<Method>,
    /// Mixture sizes; `None` uses the number of classes.
    #[serde(default)]
    pub k_src: Option<usize>,
    #[serde(default)]
    pub k_tgt: Option<usize>,
    #[serde(default)]
    pub classifier: ClassifierSpec,
    #[serde(default)]
    pub seed: u64,
    /// Sinkhorn strength; `None` uses `0.01 · mean(C)`.
    #[serde(default)]
    pub epsilon: Option<f64>,
    /// Ridge for the linear baseline; `None` uses the default.
    #[serde(default)]
    pub linear_reg: Option<f64>,
    #[serde(default)]
    pub em_max_iter: Option<usize>,
    #[serde(default)]
    pub em_restarts: Option<usize>,
    /// Number of points drawn by the sampling strategy; `None` matches the
    /// target sample count.
    #[serde(default)]
    pub n_samples: Option<usize>,
    /// Standardize both domains with statistics of the source.
    #[serde(default = "default_true")]
    pub standardize: bool,
    /// Per-domain subsample cap applied before any method runs.
    #[serde(default = "default_max_samples")]
    pub max_samples: usize,
    #[serde(default)]
    pub allow_large: bool,
    /// Record wall-clock times. Off by default so outputs are reproducible.
    #[serde(default)]
    pub record_timing: bool,
}

impl ExperimentConfig {
    pub fn new(tasks: Vec<TaskSpec>) -> Self {
        ExperimentConfig {
            schema: SCHEMA_VERSION,
            tasks,
            methods: default_methods(),
            k_src: None,
            k_tgt: None,
            classifier: ClassifierSpec::default(),
            seed: 0,
            epsilon: None,
            linear_reg: None,
            em_max_iter: None,
            em_restarts: None,
            n_samples: None,
            standardize: true,
            max_samples: DEFAULT_MAX_SAMPLES,
            allow_large: false,
            record_timing: false,
        }
    }

    /// Reads a config and resolves relative CSV paths against its directory.
    pub fn load(path: &Path) -> Result<Self> {
        let mut cfg: ExperimentConfig = read_json(path)?;
        let base = path.parent().unwrap_or(Path::new(""));
        for task in &mut cfg.tasks {
            if let TaskData::Csv { source, target, .. } = &mut task.data {
                *source = base.join(&*source);
                *target = base.join(&*target);
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.schema != SCHEMA_VERSION {
            return Err(Error::validation(format!(
                "unsupported config schema {}; expected {SCHEMA_VERSION}",
                self.schema
            )));
        }
        if self.tasks.is_empty() {
            return Err(Error::validation("config lists no tasks"));
        }
        if self.methods.is_empty() {
            return Err(Error::validation("config lists no methods"));
        }
        let mut names: Vec<&str> = self.tasks.iter().map(|t| t.name.as_str()).collect();
        names.sort_unstable();
        if names.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::validation("task names must be unique"));
        }
        if self.tasks.iter().any(|t| t.name.contains([',', '"', '\n'])) {
            return Err(Error::validation("task names may not contain commas, quotes or newlines"));
        }
        if self.k_src == Some(0) || self.k_tgt == Some(0) {
            return Err(Error::validation("mixture sizes must be at least 1"));
        }
        if self.max_samples == 0 {
            return Err(Error::validation("max_samples must be at least 1"));
        }
        if let Some(e) = self.epsilon {
            if !(e > 0.0 && e.is_finite()) {
                return Err(Error::validation(format!("epsilon must be positive, got {e}")));
            }
        }
        Ok(())
    }

    fn em_config(&self) -> EmConfig {
        let mut em = EmConfig {
            seed: self.seed,
            ..EmConfig::default()
        };
        if let Some(m) = self.em_max_iter {
            em.max_iter = m;
        }
        if let Some(r) = self.em_restarts {
            em.n_restarts = r;
        }
        em
    }
}

/// One cell of the grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellResult {
    pub task: String,
    pub method: Method,
    pub accuracy: f64,
    pub seed: u64,
    pub wall_ms: u64,
    #[serde(rename = "K_src")]
    pub k_src: Option<usize>,
    #[serde(rename = "K_tgt")]
    pub k_tgt: Option<usize>,
    pub classifier: Option<String>,
    pub diagnostics: AdaptationDiagnostics,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodMean {
    pub method: Method,
    pub accuracy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub schema: u32,
    pub config: ExperimentConfig,
    pub results: Vec<CellResult>,
    /// Mean accuracy per method over tasks, in config order.
    pub means: Vec<MethodMean>,
    /// Stage-qualified warnings, such as `K` below the number of classes.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub warnings: Vec<String>,
}

impl ExperimentReport {
    pub fn get(&self, task: &str, method: Method) -> Option<&CellResult> {
        self.results.iter().find(|r| r.task == task && r.method == method)
    }

    /// Results table: one row per cell followed by one `mean` row per method.
    pub fn results_csv(&self) -> String {
        let mut out = String::from(RESULTS_HEADER);
        out.push('\n');
        let opt = |v: Option<usize>| v.map(|k| k.to_string()).unwrap_or_default();
        for r in &self.results {
            out.push_str(&format!(
                "{},{},{},{},{},{},{},{}\n",
                r.task,
                r.method,
                r.accuracy,
                r.seed,
                r.wall_ms,
                opt(r.k_src),
                opt(r.k_tgt),
                r.classifier.as_deref().unwrap_or("")
            ));
        }
        for m in &self.means {
            out.push_str(&format!(
                "mean,{},{},{},,,,\n",
                m.method, m.accuracy, self.config.seed
            ));
        }
        out
    }

    /// Writes `results.csv` and `report.json` into `dir`, each atomically.
    pub fn write(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        write_atomic(&dir.join("results.csv"), self.results_csv().as_bytes())?;
        write_json(&dir.join("report.json"), self)
    }
}

/// Task data after loading, subsampling and standardization.
pub struct PreparedTask {
    pub name: String,
    pub source: Dataset,
    /// Features only; methods never see target labels.
    pub target: Dataset,
    truth: Vec<usize>,
    mixtures: OnceLock<Result<Mixtures>>,
}

impl PreparedTask {
    /// Wraps two domains for [`adapt`] as they are, without subsampling or
    /// standardization. There is no ground truth, so the task cannot be
    /// scored.
    pub fn from_domains(name: &str, source: Dataset, target: Dataset) -> Result<PreparedTask> {
        source.require_labels("source domain")?;
        if target.labels().is_some() {
            return Err(Error::validation("target domain must be unlabeled"));
        }
        if source.dim() != target.dim() {
            return Err(Error::validation(format!(
                "source has d={} but target has d={}",
                source.dim(),
                target.dim()
            )));
        }
        Ok(PreparedTask {
            name: name.to_string(),
            source,
            target,
            truth: Vec::new(),
            mixtures: OnceLock::new(),
        })
    }

    pub fn truth(&self) -> &[usize] {
        &self.truth
    }
}

/// Source and target mixtures shared by the three mixture strategies.
struct Mixtures {
    src: Gmm,
    tgt: Gmm,
    plan: MixturePlan,
    fallback: Vec<usize>,
}

fn subsample(ds: Dataset, cap: usize, seed: u64) -> Dataset {
    if ds.n_samples() <= cap {
        return ds;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut rows = index::sample(&mut rng, ds.n_samples(), cap).into_vec();
    rows.sort_unstable();
    ds.select(&rows)
}

/// Loads or generates a task and applies the shared preprocessing.
pub fn prepare_task(task: &TaskSpec, config: &ExperimentConfig) -> Result<PreparedTask> {
    let (src, tgt) = match &task.data {
        TaskData::Synthetic(spec) => spec.generate()?,
        TaskData::Csv {
            source,
            target,
            label_column,
        } => (
            load_csv(source, Some(label_column))?,
            load_csv(target, Some(label_column))?,
        ),
    };
    if src.dim() != tgt.dim() {
        return Err(Error::validation(format!(
            "source has d={} but target has d={}",
            src.dim(),
            tgt.dim()
        )));
    }
    let n_classes = src.n_classes().max(tgt.n_classes());
    let src = relabel_classes(src, n_classes)?;
    let tgt = relabel_classes(tgt, n_classes)?;
    let src = subsample(src, config.max_samples, config.seed);
    let tgt = subsample(tgt, config.max_samples, config.seed.wrapping_add(1));
    let truth = tgt.require_labels("scoring")?.to_vec();
    let tgt = tgt.without_labels();
    let (src, tgt) = if config.standardize {
        let (_, s, mut others) = standardize(&src, &[&tgt])?;
        (s, others.remove(0))
    } else {
        (src, tgt)
    };
    Ok(PreparedTask {
        name: task.name.clone(),
        source: src,
        target: tgt,
        truth,
        mixtures: OnceLock::new(),
    })
}

fn relabel_classes(ds: Dataset, n_classes: usize) -> Result<Dataset> {
    if ds.n_classes() == n_classes {
        return Ok(ds);
    }
    let labels = ds.require_labels("class count alignment")?.to_vec();
    Dataset::labeled(ds.features().clone(), labels, n_classes)
}

fn mixture_sizes(task: &PreparedTask, config: &ExperimentConfig) -> (usize, usize) {
    let c = task.source.n_classes();
    (config.k_src.unwrap_or(c), config.k_tgt.unwrap_or(c))
}

fn fit_mixtures(task: &PreparedTask, config: &ExperimentConfig) -> Result<Mixtures> {
    let (k_src, k_tgt) = mixture_sizes(task, config);
    let em = config.em_config();
    let src = em_fit(&task.source, k_src, &em)
        .stage("fitting source mixture")?
        .gmm;
    let (src, _) = src
        .label_components(&task.source)
        .stage("labeling source components")?;
    let tgt = em_fit(&task.target, k_tgt, &em)
        .stage("fitting target mixture")?
        .gmm;
    let plan = mixture_plan(&src, &tgt).stage("solving mixture plan")?;
    let (tgt, fallback) =
        transfer_component_labels(&plan, &src, &tgt).stage("transferring labels")?;
    Ok(Mixtures {
        src,
        tgt,
        plan,
        fallback,
    })
}

/// Runs one method on a prepared task, returning the adaptation output.
pub fn adapt(task: &PreparedTask, method: Method, config: &ExperimentConfig) -> Result<AdaptationResult> {
    // fitted once per task and shared by the three mixture strategies
    let mixtures = || -> Result<&Mixtures> {
        match task.mixtures.get_or_init(|| fit_mixtures(task, config)) {
            Ok(m) => Ok(m),
            Err(e) => Err(Error::validation(e.to_string())),
        }
    };
    match method {
        Method::SourceOnly => Ok(AdaptationResult::points(Method::SourceOnly, task.source.clone())),
        Method::OtdaEmd => otda_empirical(
            &task.source,
            &task.target,
            EmpiricalSolver::Exact,
            config.allow_large,
        ),
        Method::OtdaSinkhorn => otda_empirical(
            &task.source,
            &task.target,
            EmpiricalSolver::sinkhorn(config.epsilon),
            config.allow_large,
        ),
        Method::OtdaLinear => otda_linear(&task.source, &task.target, config.linear_reg),
        Method::GmmOtdaM => {
            let m = mixtures()?;
            Ok(adapt_map(&m.tgt, task.target.features().view())?
                .with_plan(&m.plan)
                .with_fallback(m.fallback.clone()))
        }
        Method::GmmOtdaE => {
            let m = mixtures()?;
            let n = config.n_samples.unwrap_or(task.target.n_samples());
            Ok(adapt_sample(&m.tgt, n, config.seed)?
                .with_plan(&m.plan)
                .with_fallback(m.fallback.clone()))
        }
        Method::GmmOtdaT => {
            let m = mixtures()?;
            adapt_transport(&m.plan, &m.src, &task.source)
        }
    }
}

fn run_cell(task: &PreparedTask, method: Method, config: &ExperimentConfig) -> Result<CellResult> {
    let start = Instant::now();
    let result = adapt(task, method, config)?;
    let (pred, classifier) = match (&result.predicted_labels, &result.transported) {
        (Some(labels), _) => (labels.clone(), None),
        (None, Some(points)) => {
            let clf = Classifier::train(points, config.classifier).stage("training classifier")?;
            let pred = clf
                .predict(task.target.features().view())
                .stage("predicting target")?;
            (pred, Some(config.classifier.to_string()))
        }
        (None, None) => unreachable!("every strategy returns labels or points"),
    };
    let acc = accuracy(&pred, task.truth()).stage("scoring")?;
    let wall_ms = if config.record_timing {
        start.elapsed().as_millis() as u64
    } else {
        0
    };
    let (k_src, k_tgt) = if method.uses_mixtures() {
        let (a, b) = mixture_sizes(task, config);
        (Some(a), Some(b))
    } else {
        (None, None)
    };
    Ok(CellResult {
        task: task.name.clone(),
        method,
        accuracy: acc,
        seed: config.seed,
        wall_ms,
        k_src,
        k_tgt,
        classifier,
        diagnostics: result.diagnostics,
    })
}

/// Runs every task × method cell. Cells run in parallel on the current rayon
/// pool; results keep config order, so output does not depend on
/// scheduling.
pub fn run_experiment(config: &ExperimentConfig) -> Result<ExperimentReport> {
    config.validate()?;
    let tasks: Vec<PreparedTask> = config
        .tasks
        .par_iter()
        .map(|t| prepare_task(t, config).stage(&format!("task {}: loading", t.name)))
        .collect::<Result<_>>()?;
    let mut warnings = Vec::new();
    for task in &tasks {
        let (k_src, k_tgt) = mixture_sizes(task, config);
        let c = task.source.n_classes();
        if config.methods.iter().any(|m| m.uses_mixtures()) && (k_src < c || k_tgt < c) {
            warnings.push(format!(
                "task {}: mixture sizes ({k_src}, {k_tgt}) are below the {c} classes",
                task.name
            ));
        }
    }
    let cells: Vec<(&PreparedTask, Method)> = tasks
        .iter()
        .flat_map(|t| config.methods.iter().map(move |&m| (t, m)))
        .collect();
    let results = cells
        .par_iter()
        .map(|&(t, m)| run_cell(t, m, config).stage(&format!("task {} / {m}", t.name)))
        .collect::<Result<Vec<_>>>()?;

    let mut sums: BTreeMap<Method, (f64, usize)> = BTreeMap::new();
    for r in &results {
        let e = sums.entry(r.method).or_default();
        e.0 += r.accuracy;
        e.1 += 1;
    }
    let mut means = Vec::new();
    for &m in &config.methods {
        if let Some((s, n)) = sums.remove(&m) {
            means.push(MethodMean {
                method: m,
                accuracy: s / n as f64,
            });
        }
    }
    Ok(ExperimentReport {
        schema: SCHEMA_VERSION,
        config: config.clone(),
        results,
        means,
        warnings,
    })
}

/// The shifted-blobs task used by the quickstart and the acceptance suite.
pub fn desk_scale_task(shift: f64, rotation: f64) -> TaskSpec {
    TaskSpec {
        name: "blobs".to_string(),
        data: TaskData::Synthetic(BlobsSpec {
            n_per_class: 300,
            n_classes: 3,
            dim: 2,
            shift: vec![shift, 0.0],
            rotation,
            spread: 1.0,
            seed: 0,
        }),
    }
}
