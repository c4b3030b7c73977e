//! End-to-end experiment: simulate clicks, obtain propensities, train one
//! model per run, evaluate on the test set and compare against a baseline.

use std::collections::{BTreeMap, HashSet};
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use log::info;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{load_dataset, DatasetFormat, QueryCollection};
use crate::debias::PropensityTable;
use crate::error::{Error, Result};
use crate::estimate::{
    default_pair_targets, estimate_table, simulate_pair_swap, simulate_single_swap, EstimatorConfig,
    Extrapolation, InterventionLog,
};
use crate::exam::{ExaminationModel, ModelConfig};
use crate::metrics::{evaluate, paired_t_test, EvalReport, DEFAULT_CUTOFFS};
use crate::rng::{content_hash, SeedTree};
use crate::sim::{relevance_probability, simulate, ClickLog, SimulationConfig};
use crate::trainer::{train, TrainerConfig, TrainerScheme, TreeEnsemble};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulationSpec {
    pub truncation: usize,
    #[serde(default = "default_repetitions")]
    pub repetitions: usize,
    #[serde(default)]
    pub seed: u64,
    pub model: ModelConfig,
    #[serde(default = "yes")]
    pub drop_queries_without_relevant: bool,
}

fn default_repetitions() -> usize {
    16
}

fn yes() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EstimationSpec {
    /// Impressions per intervention target.
    pub impressions: usize,
    pub seed: u64,
    pub swap_probability: f64,
    /// `model-fit` or `nearest-pair`.
    pub strategy: String,
    pub min_impressions: usize,
}

impl Default for EstimationSpec {
    fn default() -> Self {
        EstimationSpec {
            impressions: 200_000,
            seed: 0,
            swap_probability: 0.5,
            strategy: "model-fit".into(),
            min_impressions: EstimatorConfig::default().min_impressions,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PropensitySource {
    /// Closed-form marginals of the simulation model.
    #[default]
    TrueModel,
    /// Swap-intervention estimates.
    Estimated,
    /// A table file given by `propensities_file`.
    File,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunSpec {
    pub name: String,
    pub scheme: TrainerScheme,
    #[serde(default)]
    pub propensities: PropensitySource,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub propensities_file: Option<PathBuf>,
    /// The run's `scheme` overrides any scheme given here.
    #[serde(default)]
    pub trainer: TrainerConfig,
}

impl RunSpec {
    fn trainer_config(&self) -> TrainerConfig {
        TrainerConfig {
            scheme: self.scheme,
            ..self.trainer.clone()
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentSpec {
    pub train: PathBuf,
    pub test: PathBuf,
    #[serde(default = "default_format")]
    pub format: String,
    pub output_dir: PathBuf,
    #[serde(default = "default_cutoffs")]
    pub cutoffs: Vec<usize>,
    /// Run the others are compared against; defaults to the first plain run.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub baseline: Option<String>,
    pub simulation: SimulationSpec,
    #[serde(default)]
    pub estimation: EstimationSpec,
    pub runs: Vec<RunSpec>,
}

fn default_format() -> String {
    "svmlight-ranked".into()
}

fn default_cutoffs() -> Vec<usize> {
    DEFAULT_CUTOFFS.to_vec()
}

impl ExperimentSpec {
    pub fn parse(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(format!("experiment spec: {e}")))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        Self::parse(&fs::read_to_string(path).map_err(|e| Error::io(path, e))?)
    }

    /// Makes every relative path relative to `dir` instead.
    pub fn resolve_paths(&mut self, dir: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = dir.join(&*p);
            }
        };
        fix(&mut self.train);
        fix(&mut self.test);
        fix(&mut self.output_dir);
        for r in &mut self.runs {
            if let Some(p) = r.propensities_file.as_mut() {
                fix(p);
            }
        }
        if let Some(path) = self.simulation.model.theta.trim().strip_prefix("table") {
            let mut p = PathBuf::from(path.trim());
            fix(&mut p);
            self.simulation.model.theta = format!("table {}", p.display());
        }
    }

    pub fn format(&self) -> Result<DatasetFormat> {
        self.format.parse()
    }

    pub fn baseline_name(&self) -> Option<&str> {
        match &self.baseline {
            Some(b) => Some(b.as_str()),
            None => self
                .runs
                .iter()
                .find(|r| r.scheme == TrainerScheme::Plain)
                .or(self.runs.first())
                .map(|r| r.name.as_str()),
        }
    }

    /// Structural checks; with `check_files` every referenced input must exist.
    pub fn validate(&self, check_files: bool) -> Result<()> {
        self.format()?;
        if self.runs.is_empty() {
            return Err(Error::Config("no runs".into()));
        }
        if self.cutoffs.is_empty() || self.cutoffs.contains(&0) {
            return Err(Error::Config("cutoffs must be positive".into()));
        }
        let mut names = HashSet::new();
        for r in &self.runs {
            if r.name.is_empty() || r.name.contains(['/', '\\']) || !names.insert(r.name.as_str()) {
                return Err(Error::Config(format!("run name {:?} is empty, invalid or repeated", r.name)));
            }
            r.trainer_config().validate()?;
            match (r.propensities, &r.propensities_file) {
                (PropensitySource::File, None) => {
                    return Err(Error::Config(format!("run {} needs propensities_file", r.name)))
                }
                (PropensitySource::File, Some(p)) if check_files && !p.exists() => {
                    return Err(Error::Config(format!("propensity file {} does not exist", p.display())))
                }
                _ => {}
            }
        }
        if let Some(b) = &self.baseline {
            if !names.contains(b.as_str()) {
                return Err(Error::Config(format!("baseline {b:?} is not a run")));
            }
        }
        let est = &self.estimation;
        est.strategy.parse::<Extrapolation>()?;
        if !(est.swap_probability > 0.0 && est.swap_probability < 1.0) {
            return Err(Error::Config("swap_probability must be in (0, 1)".into()));
        }
        self.simulation.model.build(self.simulation.truncation, None).map_err(|e| {
            if check_files {
                e
            } else {
                Error::Config(format!("simulation model: {e}"))
            }
        })?;
        if check_files {
            for p in [&self.train, &self.test] {
                if !p.exists() {
                    return Err(Error::Config(format!("input file {} does not exist", p.display())));
                }
            }
        }
        Ok(())
    }

    fn hash_of<T: Serialize>(value: &T) -> String {
        content_hash(&serde_json::to_string(value).expect("spec serializes"))
    }

    pub fn simulation_hash(&self) -> String {
        Self::hash_of(&(&self.train, &self.simulation))
    }

    pub fn run_hash(&self, run: &RunSpec) -> String {
        let est = (run.propensities == PropensitySource::Estimated).then_some(&self.estimation);
        Self::hash_of(&(self.simulation_hash(), run, est, &self.test, &self.cutoffs))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunOutcome {
    pub name: String,
    pub scheme: TrainerScheme,
    pub report: EvalReport,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ComparisonRow {
    pub name: String,
    pub scheme: TrainerScheme,
    pub ndcg: Vec<f64>,
    pub map: f64,
    /// Percent change against the baseline, per cutoff then MAP; empty for
    /// the baseline itself.
    pub relative: Vec<f64>,
    /// Bonferroni-corrected paired t-test p-values, same layout.
    pub p_values: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Comparison {
    pub baseline: String,
    pub cutoffs: Vec<usize>,
    pub alpha: f64,
    pub rows: Vec<ComparisonRow>,
}

impl Comparison {
    pub fn build(outcomes: &[RunOutcome], baseline: &str, alpha: f64) -> Result<Self> {
        let base = outcomes
            .iter()
            .find(|o| o.name == baseline)
            .ok_or_else(|| Error::Config(format!("baseline {baseline:?} missing")))?;
        let cutoffs = base.report.cutoffs.clone();
        let comparisons = outcomes.len().saturating_sub(1).max(1) as f64;
        let columns = |r: &EvalReport| -> Vec<(f64, Vec<f64>)> {
            let mut cols: Vec<(f64, Vec<f64>)> =
                r.ndcg.iter().zip(&r.per_query_ndcg).map(|(m, v)| (*m, v.clone())).collect();
            cols.push((r.map, r.per_query_ap.clone()));
            cols
        };
        let base_cols = columns(&base.report);
        let rows = outcomes
            .iter()
            .map(|o| {
                let (relative, p_values) = if o.name == baseline {
                    (Vec::new(), Vec::new())
                } else {
                    if o.report.query_ids != base.report.query_ids {
                        return Err(Error::Integrity("runs evaluated on different queries".into()));
                    }
                    columns(&o.report)
                        .iter()
                        .zip(&base_cols)
                        .map(|((m, v), (bm, bv))| {
                            let rel = 100.0 * (m - bm) / bm;
                            let p = match paired_t_test(v, bv) {
                                Ok(t) => (t.p * comparisons).min(1.0),
                                Err(Error::DegenerateTest(_)) => 1.0,
                                Err(e) => return Err(e),
                            };
                            Ok((rel, p))
                        })
                        .collect::<Result<Vec<_>>>()?
                        .into_iter()
                        .unzip()
                };
                Ok(ComparisonRow {
                    name: o.name.clone(),
                    scheme: o.scheme,
                    ndcg: o.report.ndcg.clone(),
                    map: o.report.map,
                    relative,
                    p_values,
                })
            })
            .collect::<Result<_>>()?;
        Ok(Comparison {
            baseline: baseline.to_string(),
            cutoffs,
            alpha,
            rows,
        })
    }

    /// Baseline row absolute, others as relative change; `*` marks
    /// significance after Bonferroni correction.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let mut head = vec![format!("{:<16}", "run"), format!("{:<13}", "scheme")];
        head.extend(self.cutoffs.iter().map(|c| format!("{:>10}", format!("ndcg@{c}"))));
        head.push(format!("{:>10}", "map"));
        writeln!(out, "{}", head.join(" ")).unwrap();
        for r in &self.rows {
            let mut cells = vec![format!("{:<16}", r.name), format!("{:<13}", r.scheme.name())];
            if r.relative.is_empty() {
                cells.extend(r.ndcg.iter().chain([&r.map]).map(|v| format!("{v:>10.4}")));
            } else {
                cells.extend(r.relative.iter().zip(&r.p_values).map(|(rel, p)| {
                    let mark = if *p < self.alpha { "*" } else { " " };
                    format!("{:>10}", format!("{rel:+.2}%{mark}"))
                }));
            }
            writeln!(out, "{}", cells.join(" ")).unwrap();
        }
        writeln!(
            out,
            "# baseline {} absolute; others relative to it; * p < {} (paired t, Bonferroni x{})",
            self.baseline,
            self.alpha,
            self.rows.len().saturating_sub(1).max(1)
        )
        .unwrap();
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExperimentReport {
    pub runs: Vec<RunOutcome>,
    pub comparison: Comparison,
    /// Click lists in the training log.
    pub click_lists: usize,
}

impl ExperimentReport {
    pub fn run(&self, name: &str) -> Option<&RunOutcome> {
        self.runs.iter().find(|r| r.name == name)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArtifactRecord {
    pub path: String,
    pub stage: String,
    pub config_hash: String,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub spec_hash: String,
    /// `running`, `complete` or `failed`.
    pub status: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub failed_stage: Option<String>,
    pub artifacts: Vec<ArtifactRecord>,
}

impl Manifest {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::parse(e.line(), e.to_string()))
    }
}

struct Output {
    dir: PathBuf,
    manifest: Manifest,
}

impl Output {
    fn create(dir: &Path, spec_hash: String) -> Result<Self> {
        for sub in ["", "models", "reports"] {
            let d = dir.join(sub);
            fs::create_dir_all(&d).map_err(|e| Error::io(&d, e))?;
        }
        let out = Output {
            dir: dir.to_path_buf(),
            manifest: Manifest {
                spec_hash,
                status: "running".into(),
                failed_stage: None,
                artifacts: Vec::new(),
            },
        };
        out.flush()?;
        Ok(out)
    }

    fn write(&mut self, rel: &str, stage: &str, config_hash: &str, contents: &str) -> Result<()> {
        let path = self.dir.join(rel);
        fs::write(&path, contents).map_err(|e| Error::io(&path, e))?;
        self.manifest.artifacts.push(ArtifactRecord {
            path: rel.to_string(),
            stage: stage.to_string(),
            config_hash: config_hash.to_string(),
            sha256: content_hash(contents),
        });
        self.flush()
    }

    fn flush(&self) -> Result<()> {
        let path = self.dir.join("manifest.json");
        let text = serde_json::to_string_pretty(&self.manifest).expect("manifest serializes");
        fs::write(&path, text + "\n").map_err(|e| Error::io(&path, e))
    }
}

/// Mean relevance probability of the item at each logging position.
fn relevance_by_position(train: &[QueryCollection], positions: usize) -> Result<Vec<f64>> {
    let mut sum = vec![0.0; positions];
    let mut count = vec![0usize; positions];
    for c in train {
        for it in &c.items {
            if it.initial_rank <= positions {
                sum[it.initial_rank - 1] += relevance_probability(it.golden_label)?;
                count[it.initial_rank - 1] += 1;
            }
        }
    }
    if count.iter().any(|&n| n == 0) {
        return Err(Error::InsufficientData(format!(
            "training data does not fill all {positions} positions"
        )));
    }
    Ok(sum.iter().zip(&count).map(|(s, &n)| s / n as f64).collect())
}

/// Simulated swap interventions for every rank `2..=max_rank` and the
/// default pair targets, followed by estimation.
pub fn estimate_propensities(
    model: &ExaminationModel,
    train: &[QueryCollection],
    max_rank: usize,
    spec: &EstimationSpec,
) -> Result<(PropensityTable, InterventionLog)> {
    let relevance = relevance_by_position(train, max_rank)?;
    let seeds = SeedTree::new(spec.seed);
    let singles = (2..=max_rank).map(|k| (k, None));
    let pairs = default_pair_targets(max_rank).into_iter().map(|(a, b)| (a, Some(b)));
    let targets: Vec<(usize, Option<usize>)> = singles.chain(pairs).collect();
    let logs = targets
        .par_iter()
        .map(|&(a, b)| {
            let label = format!("{a}-{}", b.unwrap_or(0));
            let mut rng = seeds.stream(&[b"interventions", label.as_bytes()]);
            match b {
                None => simulate_single_swap(model, &relevance, a, spec.impressions, spec.swap_probability, &mut rng),
                Some(b) => simulate_pair_swap(model, &relevance, (a, b), spec.impressions, spec.swap_probability, &mut rng),
            }
        })
        .collect::<Result<Vec<_>>>()?;
    let mut log = InterventionLog::default();
    for l in logs {
        log.extend(l);
    }
    let cfg = EstimatorConfig {
        min_impressions: spec.min_impressions,
    };
    let fitted = estimate_table(&log, max_rank, None, spec.strategy.parse()?, &cfg)?;
    Ok((fitted.table, log))
}

/// Runs the pipeline on loaded datasets. With `out` every artifact is
/// written as soon as it exists and recorded in `manifest.json`.
pub fn run_pipeline(
    spec: &ExperimentSpec,
    train_set: &[QueryCollection],
    test_set: &[QueryCollection],
    out: Option<&Path>,
) -> Result<ExperimentReport> {
    spec.validate(false)?;
    let mut output = match out {
        Some(dir) => Some(Output::create(dir, ExperimentSpec::hash_of(spec))?),
        None => None,
    };
    let result = pipeline_stages(spec, train_set, test_set, output.as_mut());
    if let Some(o) = output.as_mut() {
        match &result {
            Ok(_) => o.manifest.status = "complete".into(),
            Err(e) => {
                o.manifest.status = "failed".into();
                if let Error::Stage { stage, .. } = e {
                    o.manifest.failed_stage = Some(stage.clone());
                }
            }
        }
        o.flush()?;
    }
    result
}

fn pipeline_stages(
    spec: &ExperimentSpec,
    train_set: &[QueryCollection],
    test_set: &[QueryCollection],
    mut out: Option<&mut Output>,
) -> Result<ExperimentReport> {
    let sim = &spec.simulation;
    let k = sim.truncation;
    let sim_hash = spec.simulation_hash();
    let model = sim.model.build(k, None).map_err(|e| e.in_stage("simulate"))?;
    let mut sim_cfg = SimulationConfig::new(model.clone(), k, sim.repetitions, sim.seed);
    sim_cfg.drop_queries_without_relevant = sim.drop_queries_without_relevant;
    info!("simulating clicks: truncation {k}, {} repetitions", sim.repetitions);
    let log: ClickLog = simulate(train_set, &sim_cfg).map_err(|e| e.in_stage("simulate"))?;
    if let Some(o) = out.as_deref_mut() {
        let features = spec.train.display().to_string();
        o.write("clicks.txt", "simulate", &sim_hash, &log.to_text(&features, false))?;
    }
    let clicks = log.collections();

    let mut tables: BTreeMap<&'static str, PropensityTable> = BTreeMap::new();
    let needs = |src: PropensitySource| {
        spec.runs
            .iter()
            .any(|r| r.propensities == src && r.trainer_config().scheme.needs_propensities())
    };
    if needs(PropensitySource::TrueModel) {
        let t = PropensityTable::from_model(&model, k).map_err(|e| e.in_stage("propensities"))?;
        if let Some(o) = out.as_deref_mut() {
            o.write("propensities-true.txt", "propensities", &sim_hash, &t.to_text())?;
        }
        tables.insert("true", t);
    }
    if needs(PropensitySource::Estimated) {
        info!("estimating propensities from simulated interventions");
        let (t, ilog) =
            estimate_propensities(&model, train_set, k, &spec.estimation).map_err(|e| e.in_stage("estimate"))?;
        if let Some(o) = out.as_deref_mut() {
            let h = ExperimentSpec::hash_of(&(&sim_hash, &spec.estimation));
            o.write("interventions.txt", "estimate", &h, &ilog.to_text())?;
            o.write("propensities-estimated.txt", "estimate", &h, &t.to_text())?;
        }
        tables.insert("estimated", t);
    }

    let mut outcomes = Vec::new();
    for run in &spec.runs {
        let stage = format!("run {}", run.name);
        let cfg = run.trainer_config();
        let file_table;
        let props = if !cfg.scheme.needs_propensities() {
            None
        } else {
            match run.propensities {
                PropensitySource::TrueModel => tables.get("true"),
                PropensitySource::Estimated => tables.get("estimated"),
                PropensitySource::File => {
                    let path = run.propensities_file.as_ref().expect("validated");
                    file_table = PropensityTable::load(path).map_err(|e| e.in_stage(stage.clone()))?;
                    Some(&file_table)
                }
            }
        };
        info!("training run {} ({})", run.name, cfg.scheme);
        let model: TreeEnsemble = train(&clicks, &cfg, props).map_err(|e| e.in_stage(stage.clone()))?;
        let report = evaluate(&model, test_set, &spec.cutoffs).map_err(|e| e.in_stage(stage.clone()))?;
        if let Some(o) = out.as_deref_mut() {
            let h = spec.run_hash(run);
            let stage = format!("run {}", run.name);
            o.write(&format!("models/{}.model", run.name), &stage, &h, &model.to_text())?;
            o.write(&format!("reports/{}.txt", run.name), &stage, &h, &report.to_text())?;
            o.write(&format!("reports/{}.json", run.name), &stage, &h, &(report.to_json() + "\n"))?;
            o.write(&format!("reports/{}.per_query.txt", run.name), &stage, &h, &report.per_query_text())?;
        }
        outcomes.push(RunOutcome {
            name: run.name.clone(),
            scheme: cfg.scheme,
            report,
        });
    }
    let baseline = spec.baseline_name().expect("validated non-empty runs");
    let comparison = Comparison::build(&outcomes, baseline, 0.05).map_err(|e| e.in_stage("compare"))?;
    let report = ExperimentReport {
        runs: outcomes,
        comparison,
        click_lists: log.lists.len(),
    };
    if let Some(o) = out {
        let h = ExperimentSpec::hash_of(spec);
        o.write("comparison.txt", "compare", &h, &report.comparison.to_text())?;
        let json = serde_json::to_string_pretty(&report.comparison).expect("comparison serializes");
        o.write("comparison.json", "compare", &h, &(json + "\n"))?;
    }
    Ok(report)
}

/// Loads a spec file, resolves its paths against the file's directory,
/// validates it (including input files) and runs it.
pub fn run_experiment(spec_path: impl AsRef<Path>) -> Result<ExperimentReport> {
    let spec_path = spec_path.as_ref();
    let mut spec = ExperimentSpec::load(spec_path)?;
    spec.resolve_paths(spec_path.parent().unwrap_or(Path::new(".")));
    run_spec(&spec)
}

/// Validates `spec` (including input files), loads its datasets and runs it.
pub fn run_spec(spec: &ExperimentSpec) -> Result<ExperimentReport> {
    spec.validate(true)?;
    let format = spec.format()?;
    let train_set = load_dataset(&spec.train, format)?;
    let test_set = load_dataset(&spec.test, format)?;
    run_pipeline(spec, &train_set, &test_set, Some(&spec.output_dir))
}
