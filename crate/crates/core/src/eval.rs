//! 1-NN scoring and the multi-trial experiment protocol.
//!
//! Per trial: draw a fixed number of source samples per class, split the
//! target into an adaptation half and a held-out half, adapt, train 1-NN on
//! the adapted source and score both halves. The same draw also scores the
//! unadapted source (the NA baseline). Accuracy on the adaptation half is the
//! headline number.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use rand::seq::{index, SliceRandom};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{load_labeled, FeatureMatrix, LabeledDataset};
use crate::error::{Error, Result};
use crate::pipeline::{adapt_with, AdaptationConfig};

/// Label of the nearest training row for every test row; ties go to the lower training index.
pub fn knn_predict(train: &LabeledDataset, test: &FeatureMatrix) -> Result<Vec<usize>> {
    if train.is_empty() {
        return Err(Error::InvalidInput("empty training set".into()));
    }
    let x = train.features();
    if x.ncols() != test.ncols() {
        return Err(Error::Dimension(format!(
            "training features have {} columns, test {}",
            x.ncols(),
            test.ncols()
        )));
    }
    let labels = train.labels();
    Ok((0..test.nrows())
        .into_par_iter()
        .map(|t| {
            let q = test.row(t);
            let mut best = (f64::INFINITY, 0);
            for i in 0..x.nrows() {
                let d: f64 = x.row(i).iter().zip(q).map(|(a, b)| (a - b) * (a - b)).sum();
                if d < best.0 {
                    best = (d, i);
                }
            }
            labels[best.1]
        })
        .collect())
}

/// Fraction of positions where the two label vectors agree.
pub fn accuracy(predicted: &[usize], truth: &[usize]) -> Result<f64> {
    if predicted.len() != truth.len() {
        return Err(Error::Dimension(format!(
            "{} predictions for {} labels",
            predicted.len(),
            truth.len()
        )));
    }
    if truth.is_empty() {
        return Err(Error::InvalidInput("no labels to score".into()));
    }
    let hits = predicted.iter().zip(truth).filter(|(a, b)| a == b).count();
    Ok(hits as f64 / truth.len() as f64)
}

/// Values searched for `(lambda2, lambda3, nt_outer)`. Empty lists fall back
/// to the value in the adaptation config.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct Grid {
    pub lambda2: Vec<f64>,
    pub lambda3: Vec<f64>,
    pub nt_outer: Vec<usize>,
}

impl Grid {
    /// Four log-spaced weights in `[1e-3, 1]` and up to five outer rounds.
    pub fn log_spaced() -> Self {
        let w = vec![1e-3, 1e-2, 1e-1, 1.0];
        Self {
            lambda2: w.clone(),
            lambda3: w,
            nt_outer: (1..=5).collect(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct ExperimentSpec {
    pub name: String,
    pub source_features: PathBuf,
    pub source_labels: PathBuf,
    pub target_features: PathBuf,
    pub target_labels: PathBuf,
    pub source_quota: usize,
    pub target_fraction: f64,
    pub trials: usize,
    pub adaptation: AdaptationConfig,
    pub grid: Grid,
}

impl ExperimentSpec {
    pub fn validate(&self) -> Result<()> {
        if self.source_quota == 0 {
            return Err(Error::InvalidInput("source quota must be at least 1".into()));
        }
        if !(self.target_fraction > 0.0 && self.target_fraction < 1.0) {
            return Err(Error::InvalidInput(format!(
                "target fraction {} outside (0, 1)",
                self.target_fraction
            )));
        }
        if self.trials == 0 {
            return Err(Error::InvalidInput("need at least one trial".into()));
        }
        if self.grid.nt_outer.contains(&0) {
            return Err(Error::InvalidInput("outer rounds in the grid must be >= 1".into()));
        }
        self.adaptation.validate()
    }

    fn configs(&self) -> (Vec<(f64, f64)>, Vec<usize>) {
        let l2 = if self.grid.lambda2.is_empty() {
            vec![self.adaptation.lambda2]
        } else {
            self.grid.lambda2.clone()
        };
        let l3 = if self.grid.lambda3.is_empty() {
            vec![self.adaptation.lambda3]
        } else {
            self.grid.lambda3.clone()
        };
        let mut rounds = if self.grid.nt_outer.is_empty() {
            vec![self.adaptation.nt_outer]
        } else {
            self.grid.nt_outer.clone()
        };
        rounds.sort_unstable();
        rounds.dedup();
        let pairs = l2
            .iter()
            .flat_map(|&a| l3.iter().map(move |&b| (a, b)))
            .collect();
        (pairs, rounds)
    }
}

/// Both domains of a task with labels.
#[derive(Debug, Clone)]
pub struct TaskData {
    pub source: LabeledDataset,
    pub target: LabeledDataset,
}

impl TaskData {
    pub fn load(spec: &ExperimentSpec) -> Result<Self> {
        let source = load_labeled(&spec.source_features, &spec.source_labels)?;
        let target = load_labeled(&spec.target_features, &spec.target_labels)?;
        Self::new(source, target)
    }

    pub fn new(source: LabeledDataset, target: LabeledDataset) -> Result<Self> {
        if source.num_classes() != target.num_classes() {
            return Err(Error::InvalidInput(format!(
                "source has {} classes, target {}",
                source.num_classes(),
                target.num_classes()
            )));
        }
        if source.features().ncols() != target.features().ncols() {
            return Err(Error::Dimension(format!(
                "source has {} features, target {}",
                source.features().ncols(),
                target.features().ncols()
            )));
        }
        Ok(Self { source, target })
    }
}

/// One trial's random draw.
#[derive(Debug, Clone)]
pub struct TrialSplit {
    pub source: LabeledDataset,
    pub adapt_target: LabeledDataset,
    pub heldout_target: Option<LabeledDataset>,
}

/// Up to `quota` rows per class without replacement, and a shuffled target split.
pub fn draw_trial(data: &TaskData, quota: usize, target_fraction: f64, seed: u64) -> TrialSplit {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut picked = Vec::new();
    let labels = data.source.labels();
    for class in 1..=data.source.num_classes() {
        let rows: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == class).collect();
        if rows.len() < quota {
            log::warn!(
                "class {class} has {} source samples, fewer than the quota {quota}; using all",
                rows.len()
            );
            picked.extend(rows);
        } else {
            let mut chosen: Vec<usize> = index::sample(&mut rng, rows.len(), quota)
                .into_iter()
                .map(|k| rows[k])
                .collect();
            chosen.sort_unstable();
            picked.extend(chosen);
        }
    }

    let nt = data.target.len();
    let mut order: Vec<usize> = (0..nt).collect();
    order.shuffle(&mut rng);
    let split = ((target_fraction * nt as f64).round() as usize).clamp(1, nt);
    let (adapt_rows, rest) = order.split_at(split);
    TrialSplit {
        source: data.source.select_rows(&picked),
        adapt_target: data.target.select_rows(adapt_rows),
        heldout_target: (!rest.is_empty()).then(|| data.target.select_rows(rest)),
    }
}

fn score(train: &LabeledDataset, split: &TrialSplit) -> Result<(f64, Option<f64>)> {
    let a = accuracy(
        &knn_predict(train, split.adapt_target.features())?,
        split.adapt_target.labels(),
    )?;
    let h = match &split.heldout_target {
        Some(t) => Some(accuracy(&knn_predict(train, t.features())?, t.labels())?),
        None => None,
    };
    Ok((a, h))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Setting {
    pub lambda2: f64,
    pub lambda3: f64,
    pub nt_outer: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ResultRecord {
    pub task: String,
    /// Adapted accuracy per trial on the adaptation half, best setting.
    pub accuracies: Vec<f64>,
    pub mean_accuracy: f64,
    pub heldout_accuracies: Vec<f64>,
    pub mean_heldout_accuracy: Option<f64>,
    pub na_accuracies: Vec<f64>,
    pub mean_na_accuracy: f64,
    pub na_heldout_accuracies: Vec<f64>,
    pub mean_na_heldout_accuracy: Option<f64>,
    /// Setting with the best mean adapted accuracy.
    pub best: Setting,
    /// Mean adapted accuracy of every setting tried, in grid order.
    pub grid_means: Vec<(Setting, f64)>,
    pub eta: f64,
    pub lambda_g: f64,
    pub seed: u64,
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

fn mean_opt(v: &[f64]) -> Option<f64> {
    (!v.is_empty()).then(|| mean(v))
}

/// Per-trial scores of one `(lambda2, lambda3)` pair, one entry per round count.
type PairScores = Vec<(f64, Option<f64>)>;

/// Runs the protocol on in-memory data.
pub fn run_task_on(data: &TaskData, spec: &ExperimentSpec, seed: u64) -> Result<ResultRecord> {
    spec.validate()?;
    let (pairs, rounds) = spec.configs();
    let max_rounds = *rounds.last().expect("non-empty");
    let trial_seeds: Vec<u64> = (0..spec.trials as u64).map(|t| seed.wrapping_add(t)).collect();
    let splits: Vec<TrialSplit> = trial_seeds
        .iter()
        .map(|&s| draw_trial(data, spec.source_quota, spec.target_fraction, s))
        .collect();

    let na: Vec<(f64, Option<f64>)> = splits
        .iter()
        .map(|split| score(&split.source, split))
        .collect::<Result<_>>()?;

    let jobs: Vec<(usize, usize)> = (0..pairs.len())
        .flat_map(|p| (0..splits.len()).map(move |t| (p, t)))
        .collect();
    let results: Vec<PairScores> = jobs
        .par_iter()
        .map(|&(p, t)| {
            let (lambda2, lambda3) = pairs[p];
            let split = &splits[t];
            let cfg = AdaptationConfig {
                lambda2,
                lambda3,
                nt_outer: max_rounds,
                seed: trial_seeds[t],
                ..spec.adaptation.clone()
            };
            let mut snapshots: Vec<FeatureMatrix> = Vec::with_capacity(max_rounds);
            adapt_with(&split.source, split.adapt_target.features(), &cfg, |_, x| {
                snapshots.push(x.clone())
            })?;
            rounds
                .iter()
                .map(|&r| score(&split.source.with_features(snapshots[r - 1].clone())?, split))
                .collect::<Result<PairScores>>()
        })
        .collect::<Result<_>>()?;

    // results[p * trials + t][round index]
    let trials = splits.len();
    let mut grid_means = Vec::with_capacity(pairs.len() * rounds.len());
    let mut best: Option<(usize, usize, f64)> = None;
    for (p, &(lambda2, lambda3)) in pairs.iter().enumerate() {
        for (ri, &nt_outer) in rounds.iter().enumerate() {
            let m = mean(
                &(0..trials)
                    .map(|t| results[p * trials + t][ri].0)
                    .collect::<Vec<_>>(),
            );
            grid_means.push((
                Setting {
                    lambda2,
                    lambda3,
                    nt_outer,
                },
                m,
            ));
            if best.is_none_or(|(_, _, b)| m > b) {
                best = Some((p, ri, m));
            }
        }
    }
    let (bp, br, _) = best.expect("grid is non-empty");
    let chosen: Vec<(f64, Option<f64>)> = (0..trials).map(|t| results[bp * trials + t][br]).collect();

    let accuracies: Vec<f64> = chosen.iter().map(|c| c.0).collect();
    let heldout_accuracies: Vec<f64> = chosen.iter().filter_map(|c| c.1).collect();
    let na_accuracies: Vec<f64> = na.iter().map(|c| c.0).collect();
    let na_heldout_accuracies: Vec<f64> = na.iter().filter_map(|c| c.1).collect();
    Ok(ResultRecord {
        task: spec.name.clone(),
        mean_accuracy: mean(&accuracies),
        mean_heldout_accuracy: mean_opt(&heldout_accuracies),
        mean_na_accuracy: mean(&na_accuracies),
        mean_na_heldout_accuracy: mean_opt(&na_heldout_accuracies),
        accuracies,
        heldout_accuracies,
        na_accuracies,
        na_heldout_accuracies,
        best: Setting {
            lambda2: pairs[bp].0,
            lambda3: pairs[bp].1,
            nt_outer: rounds[br],
        },
        grid_means,
        eta: spec.adaptation.eta,
        lambda_g: spec.adaptation.lambda_g,
        seed,
    })
}

/// Loads the task's files and runs the protocol.
pub fn run_task(spec: &ExperimentSpec, seed: u64) -> Result<ResultRecord> {
    spec.validate()?;
    let data = TaskData::load(spec)?;
    run_task_on(&data, spec, seed)
}

#[derive(Debug)]
pub struct TaskOutcome {
    pub task: String,
    pub result: std::result::Result<ResultRecord, String>,
}

#[derive(Debug)]
pub struct BenchmarkTable {
    /// Sorted by task name.
    pub rows: Vec<TaskOutcome>,
}

impl BenchmarkTable {
    pub fn to_csv(&self) -> String {
        let mut out = String::from(
            "task,status,na_accuracy,adapted_accuracy,na_heldout_accuracy,adapted_heldout_accuracy,lambda2,lambda3,nt_outer,trials,error\n",
        );
        let opt = |v: Option<f64>| v.map_or(String::new(), |v| format!("{v:.6}"));
        for row in &self.rows {
            match &row.result {
                Ok(r) => {
                    let _ = writeln!(
                        out,
                        "{},ok,{:.6},{:.6},{},{},{},{},{},{},",
                        csv_field(&row.task),
                        r.mean_na_accuracy,
                        r.mean_accuracy,
                        opt(r.mean_na_heldout_accuracy),
                        opt(r.mean_heldout_accuracy),
                        r.best.lambda2,
                        r.best.lambda3,
                        r.best.nt_outer,
                        r.accuracies.len()
                    );
                }
                Err(e) => {
                    let _ = writeln!(out, "{},error,,,,,,,,,{}", csv_field(&row.task), csv_field(e));
                }
            }
        }
        out
    }

    /// Percentages, one line per task.
    pub fn to_text(&self) -> String {
        let width = self.rows.iter().map(|r| r.task.len()).max().unwrap_or(4).max(4);
        let mut out = format!("{:<width$}  {:>7}  {:>7}  best setting\n", "task", "NA", "Ours");
        for row in &self.rows {
            match &row.result {
                Ok(r) => {
                    let _ = writeln!(
                        out,
                        "{:<width$}  {:>7.2}  {:>7.2}  l2={} l3={} rounds={}",
                        row.task,
                        100.0 * r.mean_na_accuracy,
                        100.0 * r.mean_accuracy,
                        r.best.lambda2,
                        r.best.lambda3,
                        r.best.nt_outer
                    );
                }
                Err(e) => {
                    let _ = writeln!(out, "{:<width$}  {:>7}  {:>7}  {e}", row.task, "ERR", "ERR");
                }
            }
        }
        out
    }
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

/// Runs every task; a failing task is recorded and the rest continue.
pub fn run_benchmark(specs: &[ExperimentSpec], seed: u64) -> Result<BenchmarkTable> {
    if specs.is_empty() {
        return Err(Error::InvalidInput("benchmark has no tasks".into()));
    }
    let mut rows: Vec<TaskOutcome> = specs
        .iter()
        .map(|spec| {
            let result = run_task(spec, seed).map_err(|e| e.to_string());
            if let Err(e) = &result {
                log::error!("task {}: {e}", spec.name);
            }
            TaskOutcome {
                task: spec.name.clone(),
                result,
            }
        })
        .collect();
    rows.sort_by(|a, b| a.task.cmp(&b.task));
    Ok(BenchmarkTable { rows })
}

/// The benchmark document read by the CLI (TOML).
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BenchmarkFile {
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_trials")]
    pub trials: usize,
    #[serde(default = "default_fraction")]
    pub target_fraction: f64,
    #[serde(default = "default_quota")]
    pub source_quota: usize,
    /// Quota for tasks whose source is flagged as the DSLR domain.
    #[serde(default = "default_dslr_quota")]
    pub dslr_quota: usize,
    #[serde(default)]
    pub adaptation: AdaptationConfig,
    #[serde(default)]
    pub grid: Grid,
    #[serde(rename = "task")]
    pub tasks: Vec<TaskEntry>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TaskEntry {
    pub name: String,
    pub source_features: PathBuf,
    pub source_labels: PathBuf,
    pub target_features: PathBuf,
    pub target_labels: PathBuf,
    #[serde(default)]
    pub source_is_dslr: bool,
    pub source_quota: Option<usize>,
}

fn default_trials() -> usize {
    10
}
fn default_fraction() -> f64 {
    0.5
}
fn default_quota() -> usize {
    20
}
fn default_dslr_quota() -> usize {
    8
}

impl BenchmarkFile {
    pub fn parse(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::InvalidInput(format!("benchmark spec: {e}")))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<(Self, Vec<ExperimentSpec>)> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let file = Self::parse(&text)?;
        let base = path.parent().unwrap_or(Path::new("."));
        let specs = file.specs(base);
        Ok((file, specs))
    }

    /// Expands tasks, resolving relative paths against `base`.
    pub fn specs(&self, base: &Path) -> Vec<ExperimentSpec> {
        let resolve = |p: &PathBuf| if p.is_absolute() { p.clone() } else { base.join(p) };
        self.tasks
            .iter()
            .map(|t| ExperimentSpec {
                name: t.name.clone(),
                source_features: resolve(&t.source_features),
                source_labels: resolve(&t.source_labels),
                target_features: resolve(&t.target_features),
                target_labels: resolve(&t.target_labels),
                source_quota: t.source_quota.unwrap_or(if t.source_is_dslr {
                    self.dslr_quota
                } else {
                    self.source_quota
                }),
                target_fraction: self.target_fraction,
                trials: self.trials,
                adaptation: self.adaptation.clone(),
                grid: self.grid.clone(),
            })
            .collect()
    }
}
