//! Configuration documents, seeded sweeps and result files.
//!
//! A sweep writes, under its output directory:
//!
//! * `runs/<label>_seed<N>.csv` for every full run,
//! * `aggregate.csv` with `H,k,mean_objective,std_objective,n`,
//! * `grid.csv` with the pilot score of every step-size pair,
//! * `sweep.json` with the selected step sizes, constants and final statistics,
//! * `timings.json` with wall times (the only file that is not reproducible).

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::error::{EntacError, Result};
use crate::exact::{constants_report, optimal_reg_values, ConstantsReport, DEFAULT_SOFT_VI_TOL};
use crate::mdp::{make_gridworld, make_synthetic, InitMode, TabularMdp};
use crate::numeric::compensated_sum;
use crate::par::Execution;
use crate::trainer::{fmt_num, run_ent_ac, CriticMode, QInit, RunTrace, TauMode, TrainConfig};

/// Prefix of environment variables that override top-level config keys.
pub const ENV_PREFIX: &str = "ENTAC_";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", deny_unknown_fields)]
pub enum EnvSpec {
    Gridworld {
        rows: usize,
        cols: usize,
        #[serde(default)]
        init_mode: InitMode,
    },
    Synthetic {
        n_states: usize,
        n_actions: usize,
        #[serde(default)]
        seed: u64,
    },
}

impl Default for EnvSpec {
    fn default() -> Self {
        EnvSpec::Gridworld { rows: 2, cols: 2, init_mode: InitMode::StartCell }
    }
}

impl EnvSpec {
    pub fn build(&self, gamma: f64) -> Result<TabularMdp> {
        match *self {
            EnvSpec::Gridworld { rows, cols, init_mode } => make_gridworld(rows, cols, gamma, init_mode),
            EnvSpec::Synthetic { n_states, n_actions, seed } => make_synthetic(n_states, n_actions, gamma, seed),
        }
    }
}

fn default_gamma() -> f64 {
    0.99
}

/// A single training run: environment plus algorithm settings.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TrainDoc {
    pub env: EnvSpec,
    pub gamma: f64,
    #[serde(flatten)]
    pub config: TrainConfig,
}

impl TrainDoc {
    pub fn build_mdp(&self) -> Result<TabularMdp> {
        self.env.build(self.gamma)
    }
}

fn default_eval_every() -> usize {
    10
}
fn default_true() -> bool {
    true
}
fn default_pilot_seeds() -> usize {
    5
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSpec {
    #[serde(default)]
    pub env: EnvSpec,
    #[serde(default = "default_gamma")]
    pub gamma: f64,
    pub lambda: f64,
    #[serde(rename = "H_list")]
    pub h_list: Vec<usize>,
    pub eta_a_grid: Vec<f64>,
    pub eta_c_grid: Vec<f64>,
    pub n_seeds: usize,
    #[serde(rename = "K")]
    pub k: usize,
    #[serde(default = "default_eval_every")]
    pub eval_every: usize,
    #[serde(default = "default_true")]
    pub include_exact_oracle: bool,
    #[serde(default)]
    pub out_dir: Option<PathBuf>,
    #[serde(default)]
    pub base_seed: u64,
    /// Seeds per grid point when selecting step sizes.
    #[serde(default = "default_pilot_seeds")]
    pub pilot_seeds: usize,
    #[serde(default)]
    pub tau_mode: TauMode,
}

impl SweepSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |path: &str, message: &str| Err(EntacError::Config { path: path.into(), message: message.into() });
        if self.h_list.is_empty() {
            return bad("H_list", "must not be empty");
        }
        if self.h_list.contains(&0) {
            return bad("H_list", "entries must be at least 1");
        }
        if self.eta_a_grid.is_empty() {
            return bad("eta_a_grid", "must not be empty");
        }
        if self.eta_c_grid.is_empty() {
            return bad("eta_c_grid", "must not be empty");
        }
        if self.n_seeds == 0 {
            return bad("n_seeds", "must be at least 1");
        }
        if self.pilot_seeds == 0 {
            return bad("pilot_seeds", "must be at least 1");
        }
        let template = self.config_for(self.h_list[0], self.eta_a_grid[0], self.eta_c_grid[0], 0, CriticMode::Learned);
        template.validate()?;
        for (key, grid) in [("eta_a_grid", &self.eta_a_grid), ("eta_c_grid", &self.eta_c_grid)] {
            if grid.iter().any(|&x| !(x > 0.0 && x.is_finite())) {
                return bad(key, "entries must be positive");
            }
        }
        Ok(())
    }

    fn config_for(&self, h: usize, eta_a: f64, eta_c: f64, seed: u64, mode: CriticMode) -> TrainConfig {
        TrainConfig {
            eta_a,
            eta_c,
            h,
            k: self.k,
            lambda: self.lambda,
            tau_mode: self.tau_mode,
            critic_mode: mode,
            seed,
            eval_every: self.eval_every,
            q_init: QInit::Zeros,
            sampler: Default::default(),
            full_gradient: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum ConfigDoc {
    Train(Box<TrainDoc>),
    Sweep(Box<SweepSpec>),
}

fn config_error<E: std::fmt::Display>(err: serde_path_to_error::Error<E>) -> EntacError {
    let path = err.path().to_string();
    EntacError::Config { path, message: err.into_inner().to_string() }
}

fn from_value<T: serde::de::DeserializeOwned>(value: Value) -> Result<T> {
    serde_path_to_error::deserialize(value).map_err(config_error)
}

/// Strict parse of a JSON document. Documents with `H_list` are sweeps,
/// everything else is a single run. Errors carry the offending key path.
pub fn parse_config(text: &str) -> Result<ConfigDoc> {
    let de = &mut serde_json::Deserializer::from_str(text);
    let value: Value = serde_path_to_error::deserialize(de).map_err(config_error)?;
    parse_config_value(value)
}

pub fn parse_config_value(value: Value) -> Result<ConfigDoc> {
    let Value::Object(mut map) = value else {
        return Err(EntacError::Config { path: ".".into(), message: "document must be a JSON object".into() });
    };
    if map.contains_key("H_list") {
        let spec: SweepSpec = from_value(Value::Object(map))?;
        spec.validate()?;
        return Ok(ConfigDoc::Sweep(Box::new(spec)));
    }
    let env = match map.remove("env") {
        Some(v) => from_value::<EnvSpec>(v).map_err(|e| prefix_path(e, "env"))?,
        None => EnvSpec::default(),
    };
    let gamma = match map.remove("gamma") {
        Some(v) => from_value::<f64>(v).map_err(|e| prefix_path(e, "gamma"))?,
        None => default_gamma(),
    };
    let config: TrainConfig = from_value(Value::Object(map))?;
    config.validate()?;
    Ok(ConfigDoc::Train(Box::new(TrainDoc { env, gamma, config })))
}

fn prefix_path(err: EntacError, prefix: &str) -> EntacError {
    match err {
        EntacError::Config { path, message } if path == "." || path.is_empty() => {
            EntacError::Config { path: prefix.into(), message }
        }
        EntacError::Config { path, message } => EntacError::Config { path: format!("{prefix}.{path}"), message },
        other => other,
    }
}

const KNOWN_KEYS: &[&str] = &[
    "env",
    "gamma",
    "lambda",
    "eta_a",
    "eta_c",
    "H",
    "K",
    "tau_mode",
    "critic_mode",
    "seed",
    "eval_every",
    "q_init",
    "sampler",
    "full_gradient",
    "H_list",
    "eta_a_grid",
    "eta_c_grid",
    "n_seeds",
    "include_exact_oracle",
    "out_dir",
    "base_seed",
    "pilot_seeds",
];

/// Applies `ENTAC_<KEY>=<value>` overrides to the top level of a document.
/// Keys match case-insensitively; values are read as JSON when they parse,
/// otherwise as strings.
pub fn apply_overrides<I>(doc: &mut Value, vars: I) -> Result<()>
where
    I: IntoIterator<Item = (String, String)>,
{
    let Value::Object(map) = doc else {
        return Err(EntacError::Config { path: ".".into(), message: "document must be a JSON object".into() });
    };
    for (name, raw) in vars {
        let Some(key) = name.strip_prefix(ENV_PREFIX) else { continue };
        let existing = map.keys().find(|k| k.eq_ignore_ascii_case(key)).cloned();
        let known = KNOWN_KEYS.iter().find(|k| k.eq_ignore_ascii_case(key)).map(|k| k.to_string());
        let target = existing.or(known).unwrap_or_else(|| key.to_ascii_lowercase());
        let value = serde_json::from_str(&raw).unwrap_or(Value::String(raw));
        map.insert(target, value);
    }
    Ok(())
}

/// Reads a config file, applies environment overrides and parses it.
pub fn load_config(path: &Path, vars: impl IntoIterator<Item = (String, String)>) -> Result<ConfigDoc> {
    let text = fs::read_to_string(path)
        .map_err(|e| EntacError::Data { path: path.display().to_string(), message: e.to_string() })?;
    let de = &mut serde_json::Deserializer::from_str(&text);
    let mut value: Value = serde_path_to_error::deserialize(de).map_err(config_error)?;
    apply_overrides(&mut value, vars)?;
    parse_config_value(value)
}

/// Selected step sizes and pilot score for one label.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GridChoice {
    pub label: String,
    pub eta_a: f64,
    pub eta_c: f64,
    pub pilot_mean: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LabelStats {
    pub label: String,
    pub final_mean: f64,
    pub final_std: f64,
    pub n: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Failure {
    pub label: String,
    pub eta_a: f64,
    pub eta_c: f64,
    pub seed: u64,
    pub error: String,
}

#[derive(Debug, Clone, Serialize)]
pub struct SweepSummary {
    pub spec: SweepSpec,
    #[serde(rename = "J_star")]
    pub j_star: f64,
    pub selected: Vec<GridChoice>,
    pub finals: Vec<LabelStats>,
    pub constants: BTreeMap<String, ConstantsReport>,
    pub failures: Vec<Failure>,
}

#[derive(Debug, Clone)]
struct Job {
    label: String,
    config: TrainConfig,
}

fn run_jobs(mdp: &TabularMdp, jobs: Vec<Job>, exec: Execution) -> Vec<(Job, Result<RunTrace>)> {
    exec.map(jobs, |job| {
        let trace = run_ent_ac(mdp, &job.config);
        (job, trace)
    })
}

fn label_for(h: Option<usize>) -> String {
    match h {
        Some(h) => format!("H{h}"),
        None => "exact".into(),
    }
}

/// Mean and sample standard deviation (0 for a single value).
pub fn mean_std(xs: &[f64]) -> (f64, f64) {
    let n = xs.len();
    if n == 0 {
        return (f64::NAN, f64::NAN);
    }
    let mean = compensated_sum(xs.iter().copied()) / n as f64;
    if n == 1 {
        return (mean, 0.0);
    }
    let var = compensated_sum(xs.iter().map(|x| (x - mean).powi(2))) / (n - 1) as f64;
    (mean, var.sqrt())
}

/// Grid search per label on pilot seeds, then `n_seeds` full runs at the
/// selected step sizes. Full run `i` uses seed `base_seed + i`; pilot run `j`
/// uses `base_seed + n_seeds + j`, so selection and reporting never share a
/// seed.
pub fn run_sweep(spec: &SweepSpec, out_dir: &Path, exec: Execution) -> Result<SweepSummary> {
    spec.validate()?;
    let mdp = spec.env.build(spec.gamma)?;
    mdp.ensure_valid()?;
    let started = std::time::Instant::now();
    let j_star = optimal_reg_values(&mdp, spec.lambda, DEFAULT_SOFT_VI_TOL)?.j_star;

    let mut labels: Vec<(String, Option<usize>)> = spec.h_list.iter().map(|&h| (label_for(Some(h)), Some(h))).collect();
    if spec.include_exact_oracle {
        labels.push((label_for(None), None));
    }
    let grid_for = |h: Option<usize>| -> Vec<(f64, f64)> {
        match h {
            Some(_) => spec
                .eta_a_grid
                .iter()
                .flat_map(|&a| spec.eta_c_grid.iter().map(move |&c| (a, c)))
                .collect(),
            // The exact oracle has no critic step; only the actor step is searched.
            None => spec.eta_a_grid.iter().map(|&a| (a, spec.eta_c_grid[0])).collect(),
        }
    };
    let config = |h: Option<usize>, eta_a: f64, eta_c: f64, seed: u64, eval_every: usize| {
        let mode = if h.is_some() { CriticMode::Learned } else { CriticMode::ExactOracle };
        let mut c = spec.config_for(h.unwrap_or(1), eta_a, eta_c, seed, mode);
        c.eval_every = eval_every;
        c
    };

    let mut failures = Vec::new();
    let pilot_base = spec.base_seed.wrapping_add(spec.n_seeds as u64);
    let mut pilot_jobs = Vec::new();
    for (label, h) in &labels {
        for (a, c) in grid_for(*h) {
            for j in 0..spec.pilot_seeds {
                let seed = pilot_base.wrapping_add(j as u64);
                pilot_jobs.push(Job { label: label.clone(), config: config(*h, a, c, seed, spec.k.max(1)) });
            }
        }
    }
    let mut pilot_scores: BTreeMap<(String, u64, u64), Vec<f64>> = BTreeMap::new();
    for (job, result) in run_jobs(&mdp, pilot_jobs, exec) {
        let key = (job.label.clone(), job.config.eta_a.to_bits(), job.config.eta_c.to_bits());
        match result {
            Ok(trace) => pilot_scores.entry(key).or_default().push(trace.final_record().objective),
            Err(e) => {
                pilot_scores.entry(key).or_default().push(f64::NAN);
                failures.push(Failure {
                    label: format!("{}(pilot)", job.label),
                    eta_a: job.config.eta_a,
                    eta_c: job.config.eta_c,
                    seed: job.config.seed,
                    error: e.to_string(),
                });
            }
        }
    }

    let mut grid_csv = String::from("label,eta_a,eta_c,pilot_mean,selected\n");
    let mut selected = Vec::new();
    for (label, h) in &labels {
        let mut best: Option<GridChoice> = None;
        let mut rows = Vec::new();
        for (a, c) in grid_for(*h) {
            let scores = &pilot_scores[&(label.clone(), a.to_bits(), c.to_bits())];
            // A grid point with any failed pilot scores -inf.
            let mean = if scores.iter().any(|x| x.is_nan()) { f64::NEG_INFINITY } else { mean_std(scores).0 };
            rows.push((a, c, mean));
            if best.as_ref().is_none_or(|b| mean > b.pilot_mean) {
                best = Some(GridChoice { label: label.clone(), eta_a: a, eta_c: c, pilot_mean: mean });
            }
        }
        let best = best.expect("grids are nonempty");
        for (a, c, mean) in rows {
            let chosen = a == best.eta_a && c == best.eta_c;
            let _ = writeln!(grid_csv, "{label},{},{},{},{}", fmt_num(a), fmt_num(c), fmt_num(mean), chosen);
        }
        selected.push(best);
    }

    let mut full_jobs = Vec::new();
    for ((label, h), choice) in labels.iter().zip(&selected) {
        for i in 0..spec.n_seeds {
            let seed = spec.base_seed.wrapping_add(i as u64);
            full_jobs.push(Job { label: label.clone(), config: config(*h, choice.eta_a, choice.eta_c, seed, spec.eval_every) });
        }
    }
    let results = run_jobs(&mdp, full_jobs, exec);

    let runs_dir = out_dir.join("runs");
    fs::create_dir_all(&runs_dir)?;
    let mut by_label: BTreeMap<String, Vec<RunTrace>> = BTreeMap::new();
    let mut wall: BTreeMap<String, f64> = BTreeMap::new();
    for (job, result) in results {
        match result {
            Ok(trace) => {
                let name = format!("{}_seed{}", job.label, job.config.seed);
                fs::write(runs_dir.join(format!("{name}.csv")), trace.to_csv())?;
                wall.insert(name, trace.runtime_seconds);
                by_label.entry(job.label).or_default().push(trace);
            }
            Err(e) => failures.push(Failure {
                label: job.label,
                eta_a: job.config.eta_a,
                eta_c: job.config.eta_c,
                seed: job.config.seed,
                error: e.to_string(),
            }),
        }
    }

    let mut aggregate = String::from("H,k,mean_objective,std_objective,n\n");
    let mut finals = Vec::new();
    let mut constants = BTreeMap::new();
    for ((label, h), choice) in labels.iter().zip(&selected) {
        let h_col = h.map_or_else(|| "exact".to_string(), |h| h.to_string());
        let tau = config(*h, choice.eta_a, choice.eta_c, 0, 1).tau(&mdp)?;
        let q0 = nalgebra::DMatrix::zeros(mdp.n_states(), mdp.n_actions());
        constants.insert(label.clone(), constants_report(&mdp, spec.lambda, &tau, choice.eta_a, choice.eta_c, &q0)?);
        let Some(traces) = by_label.get(label) else {
            finals.push(LabelStats { label: label.clone(), final_mean: f64::NAN, final_std: f64::NAN, n: 0 });
            continue;
        };
        let n_records = traces[0].records.len();
        for r in 0..n_records {
            let xs: Vec<f64> = traces.iter().map(|t| t.records[r].objective).collect();
            let (m, s) = mean_std(&xs);
            let _ = writeln!(aggregate, "{h_col},{},{},{},{}", traces[0].records[r].k, fmt_num(m), fmt_num(s), xs.len());
        }
        let xs: Vec<f64> = traces.iter().map(|t| t.final_record().objective).collect();
        let (m, s) = mean_std(&xs);
        finals.push(LabelStats { label: label.clone(), final_mean: m, final_std: s, n: xs.len() });
    }

    fs::write(out_dir.join("aggregate.csv"), aggregate)?;
    fs::write(out_dir.join("grid.csv"), grid_csv)?;
    let summary = SweepSummary { spec: spec.clone(), j_star, selected, finals, constants, failures };
    fs::write(out_dir.join("sweep.json"), serde_json::to_string_pretty(&summary)? + "\n")?;
    let timings = json!({ "total_seconds": started.elapsed().as_secs_f64(), "runs": wall });
    fs::write(out_dir.join("timings.json"), serde_json::to_string_pretty(&timings)? + "\n")?;
    Ok(summary)
}

/// One parsed per-run CSV.
#[derive(Debug, Clone, PartialEq)]
pub struct RunCsv {
    pub label: String,
    pub seed: u64,
    /// `(k, objective)` per record.
    pub objective: Vec<(usize, f64)>,
}

fn data_err(path: &Path, message: impl Into<String>) -> EntacError {
    EntacError::Data { path: path.display().to_string(), message: message.into() }
}

pub fn read_run_csv(path: &Path) -> Result<RunCsv> {
    let stem = path.file_stem().and_then(|s| s.to_str()).ok_or_else(|| data_err(path, "bad file name"))?;
    let (label, seed) = stem.rsplit_once("_seed").ok_or_else(|| data_err(path, "name must be <label>_seed<N>.csv"))?;
    let seed: u64 = seed.parse().map_err(|_| data_err(path, "seed in file name is not an integer"))?;
    let text = fs::read_to_string(path).map_err(|e| data_err(path, e.to_string()))?;
    let mut lines = text.lines();
    if lines.next() != Some(crate::trainer::CSV_HEADER) {
        return Err(data_err(path, "unexpected header"));
    }
    let mut objective = Vec::new();
    for (i, line) in lines.enumerate() {
        let mut fields = line.split(',');
        let parse = |f: Option<&str>| f.and_then(|x| x.parse::<f64>().ok());
        let k = fields.next().and_then(|x| x.parse::<usize>().ok());
        let obj = parse(fields.next());
        match (k, obj) {
            (Some(k), Some(o)) => objective.push((k, o)),
            _ => return Err(data_err(path, format!("malformed row {}", i + 2))),
        }
    }
    if objective.is_empty() {
        return Err(data_err(path, "no records"));
    }
    Ok(RunCsv { label: label.to_string(), seed, objective })
}

/// Reads every run under `out_dir/runs`, ordered by label then seed.
pub fn read_runs(out_dir: &Path) -> Result<Vec<RunCsv>> {
    let runs_dir = out_dir.join("runs");
    let mut paths: Vec<PathBuf> = match fs::read_dir(&runs_dir) {
        Ok(entries) => entries
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|x| x == "csv"))
            .collect(),
        Err(_) => Vec::new(),
    };
    if paths.is_empty() {
        return Err(data_err(out_dir, "no runs found"));
    }
    paths.sort();
    let mut runs = paths.iter().map(|p| read_run_csv(p)).collect::<Result<Vec<_>>>()?;
    runs.sort_by(|a, b| (&a.label, a.seed).cmp(&(&b.label, b.seed)));
    Ok(runs)
}

/// Recomputes per-label `(k, mean, std, n)` from raw run files.
pub fn recompute_aggregate(runs: &[RunCsv]) -> BTreeMap<String, Vec<(usize, f64, f64, usize)>> {
    let mut grouped: BTreeMap<String, Vec<&RunCsv>> = BTreeMap::new();
    for r in runs {
        grouped.entry(r.label.clone()).or_default().push(r);
    }
    grouped
        .into_iter()
        .map(|(label, rs)| {
            let n_records = rs.iter().map(|r| r.objective.len()).min().unwrap_or(0);
            let rows = (0..n_records)
                .map(|i| {
                    let xs: Vec<f64> = rs.iter().map(|r| r.objective[i].1).collect();
                    let (m, s) = mean_std(&xs);
                    (rs[0].objective[i].0, m, s, xs.len())
                })
                .collect();
            (label, rows)
        })
        .collect()
}

/// Summary document recomputed from the run files, enriched with
/// `sweep.json` and `timings.json` when present.
pub fn summarize(out_dir: &Path) -> Result<Value> {
    let runs = read_runs(out_dir)?;
    let agg = recompute_aggregate(&runs);
    let mut per_label = serde_json::Map::new();
    for (label, rows) in &agg {
        let Some(&(k, mean, std, n)) = rows.last() else { continue };
        per_label.insert(label.clone(), json!({ "k": k, "final_mean": mean, "final_std": std, "n": n }));
    }
    let mut doc = json!({ "runs": runs.len(), "labels": per_label });
    let sweep_path = out_dir.join("sweep.json");
    if sweep_path.exists() {
        let text = fs::read_to_string(&sweep_path).map_err(|e| data_err(&sweep_path, e.to_string()))?;
        let sweep: Value = serde_json::from_str(&text).map_err(|e| data_err(&sweep_path, e.to_string()))?;
        for key in ["J_star", "selected", "constants", "failures"] {
            if let Some(v) = sweep.get(key) {
                doc[key] = v.clone();
            }
        }
    }
    let timings_path = out_dir.join("timings.json");
    if timings_path.exists() {
        let text = fs::read_to_string(&timings_path).map_err(|e| data_err(&timings_path, e.to_string()))?;
        let timings: Value = serde_json::from_str(&text).map_err(|e| data_err(&timings_path, e.to_string()))?;
        doc["wall_times"] = timings;
    }
    Ok(doc)
}

/// Writes `trace.csv` and `summary.json` for a single run.
pub fn write_train_outputs(trace: &RunTrace, out_dir: &Path) -> Result<()> {
    fs::create_dir_all(out_dir)?;
    fs::write(out_dir.join("trace.csv"), trace.to_csv())?;
    fs::write(out_dir.join("summary.json"), serde_json::to_string_pretty(&trace.summary_json())? + "\n")?;
    Ok(())
}
