//! The outer adaptation loop: pick exemplars, match them, regress a linear map
//! from source exemplars onto their matched targets, move the whole source.

use nalgebra::DMatrix;
use ndarray::{Array1, Array2, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use crate::data::{class_index_sets, FeatureMatrix, LabeledDataset};
use crate::error::{Error, Result};
use crate::exemplar::{select_exemplars, ApConfig, ExemplarSet};
use crate::graph::{adjacency_matrix, build_sparse_tensor, sigma_heuristic, SparseTensor3, TensorConfig};
use crate::objective::{MatchingMatrix, ObjectiveContext, ObjectiveWeights};
use crate::solver::{cg_solve, CgConfig, CgDiagnostics};

/// Affine map `x -> x W + bias` on row vectors.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LinearMap {
    pub weights: Array2<f64>,
    pub bias: Array1<f64>,
}

impl LinearMap {
    pub fn apply(&self, x: ArrayView2<'_, f64>) -> Array2<f64> {
        x.dot(&self.weights) + &self.bias
    }
}

/// Ridge regression with an unpenalized bias, solved on centered data:
/// minimizes `|X W + 1 b^T - Y|^2 + mu |W|^2`.
pub fn fit_ridge_mapping(inputs: ArrayView2<'_, f64>, targets: ArrayView2<'_, f64>, mu: f64) -> Result<LinearMap> {
    let n = inputs.nrows();
    if n == 0 {
        return Err(Error::InvalidInput("regression needs at least one row".into()));
    }
    if targets.nrows() != n {
        return Err(Error::Dimension(format!(
            "{n} input rows but {} target rows",
            targets.nrows()
        )));
    }
    if !(mu > 0.0 && mu.is_finite()) {
        return Err(Error::InvalidInput(format!("ridge coefficient must be positive, got {mu}")));
    }
    let x_mean = inputs.mean_axis(Axis(0)).expect("non-empty");
    let y_mean = targets.mean_axis(Axis(0)).expect("non-empty");
    let xc = &inputs - &x_mean;
    let yc = &targets - &y_mean;

    let d_in = inputs.ncols();
    let d_out = targets.ncols();
    let mut gram = xc.t().dot(&xc);
    for i in 0..d_in {
        gram[[i, i]] += mu;
    }
    let rhs = xc.t().dot(&yc);

    let gram = DMatrix::from_fn(d_in, d_in, |i, j| gram[[i, j]]);
    let rhs = DMatrix::from_fn(d_in, d_out, |i, j| rhs[[i, j]]);
    let solution = gram
        .cholesky()
        .ok_or_else(|| Error::NonFinite("ridge normal equations are not positive definite".into()))?
        .solve(&rhs);
    let weights = Array2::from_shape_fn((d_in, d_out), |(i, j)| solution[(i, j)]);
    let bias = &y_mean - &x_mean.dot(&weights);
    if weights.iter().chain(bias.iter()).any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("ridge solution".into()));
    }
    Ok(LinearMap { weights, bias })
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct AdaptationConfig {
    /// Fraction of each domain kept as exemplars, in `(0, 1]`.
    pub eta: f64,
    pub lambda2: f64,
    pub lambda3: f64,
    pub lambda_g: f64,
    /// Outer rounds.
    pub nt_outer: usize,
    pub solver: CgConfig,
    pub tensor: TensorConfig,
    pub ap: ApConfig,
    /// Ridge coefficient of the linear map.
    pub ridge: f64,
    pub seed: u64,
    /// Reuse the first round's target exemplars.
    pub cache_target_exemplars: bool,
}

impl Default for AdaptationConfig {
    fn default() -> Self {
        Self {
            eta: 1.0,
            lambda2: 0.01,
            lambda3: 0.01,
            lambda_g: 0.01,
            nt_outer: 1,
            solver: CgConfig::default(),
            tensor: TensorConfig::default(),
            ap: ApConfig::default(),
            ridge: 1e-3,
            seed: 0,
            cache_target_exemplars: true,
        }
    }
}

impl AdaptationConfig {
    pub fn weights(&self) -> ObjectiveWeights {
        ObjectiveWeights {
            lambda2: self.lambda2,
            lambda3: self.lambda3,
            lambda_g: self.lambda_g,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.eta > 0.0 && self.eta <= 1.0) {
            return Err(Error::InvalidInput(format!("eta {} outside (0, 1]", self.eta)));
        }
        if self.nt_outer == 0 {
            return Err(Error::InvalidInput("need at least one outer round".into()));
        }
        if self.ridge.is_nan() || self.ridge <= 0.0 {
            return Err(Error::InvalidInput("ridge coefficient must be positive".into()));
        }
        if self.solver.cg_iters == 0 || self.solver.admm_iters == 0 {
            return Err(Error::InvalidInput("iteration counts must be at least 1".into()));
        }
        self.ap.validate()?;
        self.weights().validate()
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct RoundDiagnostics {
    pub round: usize,
    pub source_exemplars: usize,
    pub target_exemplars: usize,
    pub sigma_source: f64,
    pub sigma_target: f64,
    pub tensor_entries: usize,
    pub tensor_gamma: f64,
    pub solver: CgDiagnostics,
    /// Map fitted this round.
    pub map: LinearMap,
}

#[derive(Debug, Clone)]
pub struct AdaptationOutput {
    /// The full source after the last round.
    pub adapted: FeatureMatrix,
    /// Matching of the last round, between exemplar sets.
    pub matching: MatchingMatrix,
    pub source_exemplars: Vec<usize>,
    pub target_exemplars: Vec<usize>,
    pub rounds: Vec<RoundDiagnostics>,
}

fn require_triangles(set: &ExemplarSet, domain: &str) -> Result<()> {
    if set.len() < 3 {
        return Err(Error::InvalidInput(format!(
            "{domain} domain has {} exemplars; the third-order term needs at least 3 (raise eta)",
            set.len()
        )));
    }
    Ok(())
}

pub fn adapt(source: &LabeledDataset, target: &FeatureMatrix, cfg: &AdaptationConfig) -> Result<AdaptationOutput> {
    adapt_with(source, target, cfg, |_, _| {})
}

/// Like [`adapt`], calling `on_round(round, adapted_source)` after each round.
pub fn adapt_with(
    source: &LabeledDataset,
    target: &FeatureMatrix,
    cfg: &AdaptationConfig,
    mut on_round: impl FnMut(usize, &FeatureMatrix),
) -> Result<AdaptationOutput> {
    cfg.validate()?;
    if source.features().ncols() != target.ncols() {
        return Err(Error::Dimension(format!(
            "source has {} features, target {}",
            source.features().ncols(),
            target.ncols()
        )));
    }
    let weights = cfg.weights();
    let mut current = source.features().clone();
    let mut target_cache: Option<(ExemplarSet, f64, Array2<f64>)> = None;
    let mut rounds = Vec::with_capacity(cfg.nt_outer);
    let mut last = None;

    for round in 0..cfg.nt_outer {
        let src_ex = select_exemplars(&current, cfg.eta, &cfg.ap)?;
        require_triangles(&src_ex, "source")?;

        let (tgt_ex, sigma_t, dt) = match target_cache.take() {
            Some(cached) if cfg.cache_target_exemplars => cached,
            _ => {
                let ex = select_exemplars(target, cfg.eta, &cfg.ap)?;
                require_triangles(&ex, "target")?;
                let sigma = sigma_heuristic(&ex.features)?;
                let dt = adjacency_matrix(&ex.features, sigma)?.values().clone();
                (ex, sigma, dt)
            }
        };

        let sigma_s = sigma_heuristic(&src_ex.features)?;
        let ds = adjacency_matrix(&src_ex.features, sigma_s)?.values().clone();
        let labels = src_ex.labels_from(source.labels());
        let groups = class_index_sets(&labels, source.num_classes())?;
        let (ns, nt) = (src_ex.len(), tgt_ex.len());
        let tensor = if weights.lambda3 > 0.0 {
            build_sparse_tensor(
                &src_ex.features,
                &tgt_ex.features,
                &cfg.tensor,
                cfg.seed.wrapping_add(round as u64),
            )?
        } else {
            SparseTensor3::empty(ns, nt)
        };
        let (tensor_entries, tensor_gamma) = (tensor.len(), tensor.gamma());

        let ctx = ObjectiveContext::new(&src_ex.features, &tgt_ex.features, ds, dt.clone(), tensor, groups)?;
        let (matching, solver_diag) =
            cg_solve(&ctx, &weights, &MatchingMatrix::uniform(ns, nt), &cfg.solver)?;

        let matched = matching.values().dot(tgt_ex.features.as_array());
        let map = fit_ridge_mapping(src_ex.features.view(), matched.view(), cfg.ridge)?;
        current = FeatureMatrix::new(map.apply(current.view()))?;
        on_round(round + 1, &current);

        log::info!(
            "round {}: {ns} x {nt} exemplars, objective {:.6} -> {:.6}",
            round + 1,
            solver_diag.objective[0],
            solver_diag.final_objective()
        );
        rounds.push(RoundDiagnostics {
            round: round + 1,
            source_exemplars: ns,
            target_exemplars: nt,
            sigma_source: sigma_s,
            sigma_target: sigma_t,
            tensor_entries,
            tensor_gamma,
            solver: solver_diag,
            map,
        });
        last = Some((matching, src_ex.indices, tgt_ex.indices.clone()));
        target_cache = Some((tgt_ex, sigma_t, dt));
    }

    let (matching, source_exemplars, target_exemplars) = last.expect("at least one round");
    Ok(AdaptationOutput {
        adapted: current,
        matching,
        source_exemplars,
        target_exemplars,
        rounds,
    })
}
