//! Exemplar selection by affinity propagation.
//!
//! Affinity propagation picks actual data points as cluster representatives.
//! The shared preference `p` on the diagonal of the similarity matrix controls
//! how many emerge, so [`select_exemplars`] bisects on `p` until the count is
//! close to a requested fraction of the data.

use ndarray::Array2;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::FeatureMatrix;

/// Negated squared distances off the diagonal, a shared preference on it.
#[derive(Debug, Clone)]
pub struct SimilarityMatrix {
    values: Array2<f64>,
    preference: f64,
}

impl SimilarityMatrix {
    pub fn values(&self) -> &Array2<f64> {
        &self.values
    }

    pub fn preference(&self) -> f64 {
        self.preference
    }

    pub fn len(&self) -> usize {
        self.values.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Replaces the diagonal.
    pub fn set_preference(&mut self, p: f64) {
        for i in 0..self.values.nrows() {
            self.values[[i, i]] = p;
        }
        self.preference = p;
    }

    /// Smallest off-diagonal entry, or `None` for a single point.
    pub fn min_off_diagonal(&self) -> Option<f64> {
        let n = self.len();
        let mut min: Option<f64> = None;
        for i in 0..n {
            for j in 0..n {
                if i != j {
                    let v = self.values[[i, j]];
                    min = Some(min.map_or(v, |m: f64| m.min(v)));
                }
            }
        }
        min
    }
}

pub fn similarity_matrix(x: &FeatureMatrix, preference: f64) -> SimilarityMatrix {
    let n = x.nrows();
    let mut values = Array2::zeros((n, n));
    for i in 0..n {
        for j in (i + 1)..n {
            let d2: f64 = x
                .row(i)
                .iter()
                .zip(x.row(j))
                .map(|(a, b)| (a - b) * (a - b))
                .sum();
            values[[i, j]] = -d2;
            values[[j, i]] = -d2;
        }
        values[[i, i]] = preference;
    }
    SimilarityMatrix { values, preference }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct ApConfig {
    /// Weight kept from the previous message, in `[0, 1)`.
    pub damping: f64,
    pub max_iterations: usize,
    /// Iterations with an unchanged exemplar set before stopping.
    pub stability_window: usize,
    pub bisection_steps: usize,
    /// Accepted distance from the target count. `None` means `max(1, round(0.02 n))`.
    pub count_tolerance: Option<usize>,
}

impl Default for ApConfig {
    fn default() -> Self {
        Self {
            damping: 0.5,
            max_iterations: 500,
            stability_window: 50,
            bisection_steps: 20,
            count_tolerance: None,
        }
    }
}

impl ApConfig {
    pub fn validate(&self) -> crate::Result<()> {
        if !(0.0..1.0).contains(&self.damping) {
            return Err(crate::Error::InvalidInput(format!(
                "damping {} outside [0, 1)",
                self.damping
            )));
        }
        if self.max_iterations == 0 || self.stability_window == 0 || self.bisection_steps == 0 {
            return Err(crate::Error::InvalidInput(
                "affinity propagation counts must be at least 1".into(),
            ));
        }
        Ok(())
    }
}

/// Output of one affinity-propagation run.
#[derive(Debug, Clone, PartialEq)]
pub struct ApOutcome {
    /// Sorted exemplar row indices, never empty.
    pub exemplars: Vec<usize>,
    pub iterations: usize,
    pub converged: bool,
}

/// Responsibility/availability message passing with damped updates.
pub fn affinity_propagation(s: &SimilarityMatrix, cfg: &ApConfig) -> ApOutcome {
    let n = s.len();
    if n <= 1 {
        return ApOutcome {
            exemplars: (0..n).collect(),
            iterations: 0,
            converged: true,
        };
    }
    let sim = s.values.as_slice().expect("standard layout");
    let damping = cfg.damping;
    let mut resp = vec![0.0; n * n];
    let mut avail = vec![0.0; n * n];
    let mut col_pos = vec![0.0; n];

    let mut current: Vec<usize> = Vec::new();
    let mut stable = 0usize;
    let mut converged = false;
    let mut iterations = 0;

    for it in 0..cfg.max_iterations {
        iterations = it + 1;

        resp.par_chunks_mut(n).enumerate().for_each(|(i, r_row)| {
            let s_row = &sim[i * n..(i + 1) * n];
            let a_row = &avail[i * n..(i + 1) * n];
            // strict comparisons keep the lowest index on ties
            let mut best = f64::NEG_INFINITY;
            let mut best_k = 0;
            let mut second = f64::NEG_INFINITY;
            for k in 0..n {
                let v = a_row[k] + s_row[k];
                if v > best {
                    second = best;
                    best = v;
                    best_k = k;
                } else if v > second {
                    second = v;
                }
            }
            for k in 0..n {
                let competitor = if k == best_k { second } else { best };
                let fresh = s_row[k] - competitor;
                r_row[k] = damping * r_row[k] + (1.0 - damping) * fresh;
            }
        });

        col_pos.iter_mut().for_each(|c| *c = 0.0);
        for i in 0..n {
            let r_row = &resp[i * n..(i + 1) * n];
            for k in 0..n {
                if k != i {
                    col_pos[k] += r_row[k].max(0.0);
                }
            }
        }
        let self_resp: Vec<f64> = (0..n).map(|k| resp[k * n + k]).collect();
        avail.par_chunks_mut(n).enumerate().for_each(|(i, a_row)| {
            let r_row = &resp[i * n..(i + 1) * n];
            for k in 0..n {
                let fresh = if k == i {
                    col_pos[k]
                } else {
                    (self_resp[k] + col_pos[k] - r_row[k].max(0.0)).min(0.0)
                };
                a_row[k] = damping * a_row[k] + (1.0 - damping) * fresh;
            }
        });

        let exemplars: Vec<usize> = (0..n)
            .filter(|&k| resp[k * n + k] + avail[k * n + k] > 0.0)
            .collect();
        if exemplars == current {
            stable += 1;
        } else {
            stable = 1;
            current = exemplars;
        }
        if stable >= cfg.stability_window && !current.is_empty() {
            converged = true;
            break;
        }
    }

    if current.is_empty() {
        current = vec![fallback_exemplar(s)];
    }
    let exemplars = refine_exemplars(s, &current);
    ApOutcome {
        exemplars,
        iterations,
        converged,
    }
}

/// Assigns every point to its most similar exemplar, then replaces each
/// exemplar by the cluster member with the largest summed similarity to the
/// rest of its cluster.
fn refine_exemplars(s: &SimilarityMatrix, exemplars: &[usize]) -> Vec<usize> {
    let n = s.len();
    let v = &s.values;
    let mut clusters: Vec<Vec<usize>> = exemplars.iter().map(|&e| vec![e]).collect();
    for i in 0..n {
        if exemplars.contains(&i) {
            continue;
        }
        let mut best = 0;
        for (c, &e) in exemplars.iter().enumerate() {
            if v[[i, e]] > v[[i, exemplars[best]]] {
                best = c;
            }
        }
        clusters[best].push(i);
    }
    let mut refined: Vec<usize> = clusters
        .iter()
        .map(|members| {
            let mut best = (f64::NEG_INFINITY, usize::MAX);
            for &k in members {
                let total: f64 = members.iter().map(|&i| v[[i, k]]).sum();
                if total > best.0 || (total == best.0 && k < best.1) {
                    best = (total, k);
                }
            }
            best.1
        })
        .collect();
    refined.sort_unstable();
    refined
}

/// The point with the largest summed similarity to all points.
fn fallback_exemplar(s: &SimilarityMatrix) -> usize {
    let sums = s.values.sum_axis(ndarray::Axis(0));
    let mut best = 0;
    for (k, &v) in sums.iter().enumerate() {
        if v > sums[best] {
            best = k;
        }
    }
    best
}

/// Selected rows of a domain.
#[derive(Debug, Clone, PartialEq)]
pub struct ExemplarSet {
    /// Strictly increasing row indices into the original matrix.
    pub indices: Vec<usize>,
    pub features: FeatureMatrix,
    /// Preference that produced the set; `None` when clustering was bypassed.
    pub preference: Option<f64>,
    pub converged: bool,
}

impl ExemplarSet {
    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    pub fn labels_from(&self, labels: &[usize]) -> Vec<usize> {
        self.indices.iter().map(|&i| labels[i]).collect()
    }

    fn all(x: &FeatureMatrix) -> Self {
        Self {
            indices: (0..x.nrows()).collect(),
            features: x.clone(),
            preference: None,
            converged: true,
        }
    }
}

/// Number of exemplars requested for `n` points at fraction `eta`.
pub fn target_count(n: usize, eta: f64) -> usize {
    ((eta * n as f64).round() as usize).clamp(1, n.max(1))
}

/// Picks roughly `eta * n` exemplars. `eta == 1` returns every row without clustering.
pub fn select_exemplars(x: &FeatureMatrix, eta: f64, cfg: &ApConfig) -> crate::Result<ExemplarSet> {
    if !(eta > 0.0 && eta <= 1.0) {
        return Err(crate::Error::InvalidInput(format!(
            "exemplar fraction {eta} outside (0, 1]"
        )));
    }
    cfg.validate()?;
    let n = x.nrows();
    if eta == 1.0 || n == 1 {
        return Ok(ExemplarSet::all(x));
    }

    let target = target_count(n, eta);
    let tolerance = cfg
        .count_tolerance
        .unwrap_or_else(|| ((0.02 * n as f64).round() as usize).max(1));

    let mut s = similarity_matrix(x, 0.0);
    let min_off = s.min_off_diagonal().unwrap_or(0.0);
    let mut lo = if min_off < 0.0 { 2.0 * min_off } else { -1.0 };
    let mut hi = 0.0;

    let mut run = |p: f64| {
        s.set_preference(p);
        (p, affinity_propagation(&s, cfg))
    };
    let distance = |o: &ApOutcome| o.exemplars.len().abs_diff(target);

    let lo_run = run(lo);
    let hi_run = run(hi);
    let mut best = if distance(&hi_run.1) < distance(&lo_run.1) {
        hi_run
    } else {
        lo_run
    };

    for _ in 0..cfg.bisection_steps {
        let mid = 0.5 * (lo + hi);
        let (p, outcome) = run(mid);
        let count = outcome.exemplars.len();
        let done = count.abs_diff(target) <= tolerance;
        if outcome.exemplars.len().abs_diff(target) < distance(&best.1) {
            best = (p, outcome);
        }
        if done {
            break;
        }
        if count < target {
            lo = mid;
        } else {
            hi = mid;
        }
    }

    let (p, outcome) = best;
    log::debug!(
        "affinity propagation: {} exemplars of {n} (target {target}) at p = {p}",
        outcome.exemplars.len()
    );
    Ok(ExemplarSet {
        features: x.select_rows(&outcome.exemplars),
        indices: outcome.exemplars,
        preference: Some(p),
        converged: outcome.converged,
    })
}
