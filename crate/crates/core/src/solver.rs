//! Conditional-gradient minimization over the transportation polytope.
//!
//! Each outer step linearizes the objective at the current `C`, solves
//! `min Tr(G^T C)` over the polytope with consensus ADMM, and moves towards
//! that solution with step `2 / (t + 2)`.
//!
//! The ADMM splits the polytope into three sets (row sums, column sums,
//! non-negativity), each handled by one block with a closed-form update,
//! coupled through a consensus variable `Z`. The penalty is fixed at 1;
//! scaling it is equivalent to scaling `G`.

use std::time::Instant;

use ndarray::{Array1, Array2, Zip};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::objective::{
    feasibility, total_objective, Feasibility, MatchingMatrix, ObjectiveContext, ObjectiveWeights,
};

/// Row marginal `1` and column marginal `n_s / n_t`.
pub fn marginals(n_source: usize, n_target: usize) -> (Array1<f64>, Array1<f64>) {
    (
        Array1::ones(n_source),
        Array1::from_elem(n_target, n_source as f64 / n_target as f64),
    )
}

/// Primal blocks, consensus and scaled duals of the LP splitting.
#[derive(Debug, Clone)]
pub struct AdmmState {
    pub c1: Array2<f64>,
    pub c2: Array2<f64>,
    pub c3: Array2<f64>,
    pub z: Array2<f64>,
    pub y1: Array2<f64>,
    pub y2: Array2<f64>,
    pub y3: Array2<f64>,
    pub rho: f64,
    pub iterations: usize,
    a: Array1<f64>,
    b: Array1<f64>,
}

impl AdmmState {
    /// Zero duals, consensus at the product of the marginals.
    pub fn new(a: Array1<f64>, b: Array1<f64>) -> Result<Self> {
        let (ns, nt) = (a.len(), b.len());
        if ns == 0 || nt == 0 {
            return Err(Error::Dimension("empty marginals".into()));
        }
        let total = a.sum();
        let z = Array2::from_shape_fn((ns, nt), |(i, j)| a[i] * b[j] / total);
        let zeros = Array2::zeros((ns, nt));
        Ok(Self {
            c1: z.clone(),
            c2: z.clone(),
            c3: z.clone(),
            z,
            y1: zeros.clone(),
            y2: zeros.clone(),
            y3: zeros,
            rho: 1.0,
            iterations: 0,
            a,
            b,
        })
    }

    pub fn shape(&self) -> (usize, usize) {
        self.z.dim()
    }

    /// Resets duals and consensus to the cold-start point.
    pub fn reset(&mut self) {
        *self = Self::new(self.a.clone(), self.b.clone()).expect("valid marginals");
    }

    /// One sweep of all block, consensus and dual updates.
    pub fn step(&mut self, g: &Array2<f64>) {
        let (ns, nt) = self.shape();

        // C1 = V - ((V 1 - a) / n_t) 1^T, V = Z - G/2 - Y1
        Zip::from(&mut self.c1)
            .and(&self.z)
            .and(g)
            .and(&self.y1)
            .for_each(|c, &z, &g, &y| *c = z - 0.5 * g - y);
        for (i, mut row) in self.c1.rows_mut().into_iter().enumerate() {
            let shift = (row.sum() - self.a[i]) / nt as f64;
            row -= shift;
        }

        // C2 = V - (1 / n_s) 1 (1^T V - b^T), V = Z - G/2 - Y2
        Zip::from(&mut self.c2)
            .and(&self.z)
            .and(g)
            .and(&self.y2)
            .for_each(|c, &z, &g, &y| *c = z - 0.5 * g - y);
        for (j, mut col) in self.c2.columns_mut().into_iter().enumerate() {
            let shift = (col.sum() - self.b[j]) / ns as f64;
            col -= shift;
        }

        // C3 = max(Z - Y3, 0)
        Zip::from(&mut self.c3)
            .and(&self.z)
            .and(&self.y3)
            .for_each(|c, &z, &y| *c = (z - y).max(0.0));

        Zip::from(&mut self.z)
            .and(&self.c1)
            .and(&self.c2)
            .and(&self.c3)
            .for_each(|z, &a, &b, &c| *z = (a + b + c) / 3.0);

        Zip::from(&mut self.y1)
            .and(&self.c1)
            .and(&self.z)
            .for_each(|y, &c, &z| *y += c - z);
        Zip::from(&mut self.y2)
            .and(&self.c2)
            .and(&self.z)
            .for_each(|y, &c, &z| *y += c - z);
        Zip::from(&mut self.y3)
            .and(&self.c3)
            .and(&self.z)
            .for_each(|y, &c, &z| *y += c - z);

        self.iterations += 1;
    }

    /// Runs `iters` sweeps and returns the consensus with negatives clamped to 0.
    pub fn solve(&mut self, g: &Array2<f64>, iters: usize) -> Result<MatchingMatrix> {
        if g.dim() != self.shape() {
            return Err(Error::Dimension(format!(
                "gradient is {:?}, LP is {:?}",
                g.dim(),
                self.shape()
            )));
        }
        if iters == 0 {
            return Err(Error::InvalidInput("ADMM needs at least one iteration".into()));
        }
        for _ in 0..iters {
            self.step(g);
        }
        if self.z.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("ADMM consensus diverged".into()));
        }
        Ok(MatchingMatrix::new(self.z.mapv(|v| v.max(0.0))))
    }
}

/// Approximately minimizes `Tr(G^T C)` over the polytope with marginals `a`, `b`.
pub fn admm_lp(g: &Array2<f64>, a: &Array1<f64>, b: &Array1<f64>, iters: usize) -> Result<MatchingMatrix> {
    if g.dim() != (a.len(), b.len()) {
        return Err(Error::Dimension(format!(
            "gradient is {:?}, marginals are {} and {}",
            g.dim(),
            a.len(),
            b.len()
        )));
    }
    AdmmState::new(a.clone(), b.clone())?.solve(g, iters)
}

/// Linear objective `Tr(G^T C)`.
pub fn linear_cost(g: &Array2<f64>, c: &Array2<f64>) -> f64 {
    Zip::from(g).and(c).fold(0.0, |acc, &g, &c| acc + g * c)
}

/// Frank-Wolfe gap `Tr(G^T (C - C_d))`.
pub fn fw_gap(g: &Array2<f64>, c: &Array2<f64>, c_d: &Array2<f64>) -> f64 {
    Zip::from(g)
        .and(c)
        .and(c_d)
        .fold(0.0, |acc, &g, &c, &d| acc + g * (c - d))
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct CgConfig {
    pub cg_iters: usize,
    pub admm_iters: usize,
    /// Carry ADMM consensus and duals from one LP solve to the next.
    pub warm_start: bool,
}

impl Default for CgConfig {
    fn default() -> Self {
        Self {
            cg_iters: 20,
            admm_iters: 300,
            warm_start: true,
        }
    }
}

/// What happened during one conditional-gradient run.
#[derive(Debug, Clone, Serialize)]
pub struct CgDiagnostics {
    /// Objective at the start point and after every step.
    pub objective: Vec<f64>,
    /// Frank-Wolfe gap measured at each step.
    pub gaps: Vec<f64>,
    pub final_gap: f64,
    /// Feasibility of every iterate, start point included.
    pub feasibility: Vec<Feasibility>,
    /// Feasibility of every LP solution.
    pub lp_feasibility: Vec<Feasibility>,
    pub wall_time_secs: f64,
}

impl CgDiagnostics {
    pub fn final_objective(&self) -> f64 {
        *self.objective.last().expect("start point is always recorded")
    }

    /// Worst violation across all iterates.
    pub fn worst_feasibility(&self) -> Feasibility {
        self.feasibility.iter().fold(
            Feasibility {
                max_row_error: 0.0,
                max_col_error: 0.0,
                min_entry: f64::INFINITY,
            },
            |acc, f| Feasibility {
                max_row_error: acc.max_row_error.max(f.max_row_error),
                max_col_error: acc.max_col_error.max(f.max_col_error),
                min_entry: acc.min_entry.min(f.min_entry),
            },
        )
    }
}

fn finite_or(v: f64, what: &str) -> Result<f64> {
    if v.is_finite() {
        Ok(v)
    } else {
        Err(Error::NonFinite(format!("{what} is {v}")))
    }
}

/// Conditional gradient from `c0` for a fixed number of steps.
pub fn cg_solve(
    ctx: &ObjectiveContext,
    w: &ObjectiveWeights,
    c0: &MatchingMatrix,
    cfg: &CgConfig,
) -> Result<(MatchingMatrix, CgDiagnostics)> {
    w.validate()?;
    if cfg.cg_iters == 0 || cfg.admm_iters == 0 {
        return Err(Error::InvalidInput("iteration counts must be at least 1".into()));
    }
    let (ns, nt) = (ctx.n_source(), ctx.n_target());
    if c0.values().dim() != (ns, nt) {
        return Err(Error::Dimension(format!(
            "start point is {:?}, expected ({ns}, {nt})",
            c0.values().dim()
        )));
    }
    let started = Instant::now();
    let (a, b) = marginals(ns, nt);
    let mut admm = AdmmState::new(a, b)?;
    let mut c = c0.values().clone();

    let mut diag = CgDiagnostics {
        objective: Vec::with_capacity(cfg.cg_iters + 1),
        gaps: Vec::with_capacity(cfg.cg_iters),
        final_gap: 0.0,
        feasibility: vec![feasibility(&c)],
        lp_feasibility: Vec::with_capacity(cfg.cg_iters),
        wall_time_secs: 0.0,
    };

    for t in 1..=cfg.cg_iters {
        let (terms, g) = total_objective(&c, ctx, w)?;
        diag.objective.push(finite_or(terms.total, "objective")?);
        if g.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("objective gradient".into()));
        }
        if !cfg.warm_start {
            admm.reset();
        }
        let direction = admm.solve(&g, cfg.admm_iters)?.into_array();
        diag.gaps.push(fw_gap(&g, &c, &direction));
        diag.lp_feasibility.push(feasibility(&direction));

        let alpha = 2.0 / (t as f64 + 2.0);
        Zip::from(&mut c)
            .and(&direction)
            .for_each(|c, &d| *c += alpha * (d - *c));
        diag.feasibility.push(feasibility(&c));
    }
    let (terms, _) = total_objective(&c, ctx, w)?;
    diag.objective.push(finite_or(terms.total, "objective")?);
    diag.final_gap = *diag.gaps.last().expect("at least one step");
    diag.wall_time_secs = started.elapsed().as_secs_f64();
    Ok((MatchingMatrix::new(c), diag))
}
