//! The matching objective and its gradient.
//!
//! ```text
//! f(C) = |C Xt - Xs|^2 / (n_s d)            first order
//!      + l2 |C Dt - r Ds C|^2                second order, r = n_t / n_s
//!      - l3 H x1 c x2 c x3 c                 third order, c = vec(C)
//!      + lg sum_j sum_c |C[I_c, j]|_2        group lasso over source classes
//! ```
//!
//! minimized over `C >= 0`, `C 1 = 1`, `C^T 1 = (n_s / n_t) 1`.

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::data::{ClassIndexSets, FeatureMatrix};
use crate::error::{Error, Result};
use crate::graph::SparseTensor3;

/// Tolerance used when checking that a matching matrix is feasible.
pub const FEASIBILITY_EPS: f64 = 1e-6;

/// An `n_s x n_t` correspondence matrix with row sums 1 and column sums `n_s / n_t`.
#[derive(Debug, Clone, PartialEq)]
pub struct MatchingMatrix {
    values: Array2<f64>,
}

/// Worst violations of the transportation constraints.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Feasibility {
    pub max_row_error: f64,
    pub max_col_error: f64,
    pub min_entry: f64,
}

impl Feasibility {
    pub fn within(&self, sum_tol: f64, neg_tol: f64) -> bool {
        self.max_row_error <= sum_tol && self.max_col_error <= sum_tol && self.min_entry >= -neg_tol
    }
}

impl MatchingMatrix {
    /// Wraps a matrix without checking the constraints.
    pub fn new(values: Array2<f64>) -> Self {
        Self { values }
    }

    /// Every entry `1 / n_t`; the maximum-entropy feasible point.
    pub fn uniform(n_source: usize, n_target: usize) -> Self {
        Self {
            values: Array2::from_elem((n_source, n_target), 1.0 / n_target as f64),
        }
    }

    pub fn values(&self) -> &Array2<f64> {
        &self.values
    }

    pub fn into_array(self) -> Array2<f64> {
        self.values
    }

    pub fn n_source(&self) -> usize {
        self.values.nrows()
    }

    pub fn n_target(&self) -> usize {
        self.values.ncols()
    }

    pub fn feasibility(&self) -> Feasibility {
        feasibility(&self.values)
    }

    pub fn is_feasible(&self) -> bool {
        self.feasibility().within(FEASIBILITY_EPS, FEASIBILITY_EPS)
    }
}

/// Constraint violations of any `n_s x n_t` matrix.
pub fn feasibility(c: &Array2<f64>) -> Feasibility {
    let (ns, nt) = c.dim();
    let col_target = ns as f64 / nt as f64;
    let max_row_error = c
        .rows()
        .into_iter()
        .map(|r| (r.sum() - 1.0).abs())
        .fold(0.0, f64::max);
    let max_col_error = c
        .columns()
        .into_iter()
        .map(|col| (col.sum() - col_target).abs())
        .fold(0.0, f64::max);
    let min_entry = c.iter().copied().fold(f64::INFINITY, f64::min);
    Feasibility {
        max_row_error,
        max_col_error,
        min_entry,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ObjectiveWeights {
    pub lambda2: f64,
    pub lambda3: f64,
    pub lambda_g: f64,
}

impl ObjectiveWeights {
    pub fn new(lambda2: f64, lambda3: f64, lambda_g: f64) -> Result<Self> {
        let w = Self {
            lambda2,
            lambda3,
            lambda_g,
        };
        w.validate()?;
        Ok(w)
    }

    pub fn zero() -> Self {
        Self {
            lambda2: 0.0,
            lambda3: 0.0,
            lambda_g: 0.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("lambda2", self.lambda2),
            ("lambda3", self.lambda3),
            ("lambda_g", self.lambda_g),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::InvalidInput(format!("{name} must be >= 0, got {v}")));
            }
        }
        Ok(())
    }
}

/// Everything the objective needs besides `C`.
#[derive(Debug, Clone)]
pub struct ObjectiveContext {
    xs: Array2<f64>,
    xt: Array2<f64>,
    ds: Array2<f64>,
    dt: Array2<f64>,
    tensor: SparseTensor3,
    groups: ClassIndexSets,
}

impl ObjectiveContext {
    pub fn new(
        xs: &FeatureMatrix,
        xt: &FeatureMatrix,
        ds: Array2<f64>,
        dt: Array2<f64>,
        tensor: SparseTensor3,
        groups: ClassIndexSets,
    ) -> Result<Self> {
        let (ns, nt) = (xs.nrows(), xt.nrows());
        if xs.ncols() != xt.ncols() {
            return Err(Error::Dimension(format!(
                "source dimension {} vs target dimension {}",
                xs.ncols(),
                xt.ncols()
            )));
        }
        if ds.dim() != (ns, ns) || dt.dim() != (nt, nt) {
            return Err(Error::Dimension(format!(
                "adjacency shapes {:?} and {:?} for {ns} source and {nt} target nodes",
                ds.dim(),
                dt.dim()
            )));
        }
        if tensor.n_source() != ns || tensor.n_target() != nt {
            return Err(Error::Dimension(format!(
                "tensor built for {}x{} candidates, context is {ns}x{nt}",
                tensor.n_source(),
                tensor.n_target()
            )));
        }
        let grouped: usize = groups.groups().iter().map(Vec::len).sum();
        if grouped != ns || groups.groups().iter().flatten().any(|&r| r >= ns) {
            return Err(Error::Dimension(format!(
                "class index sets cover {grouped} rows, expected {ns}"
            )));
        }
        Ok(Self {
            xs: xs.as_array().clone(),
            xt: xt.as_array().clone(),
            ds,
            dt,
            tensor,
            groups,
        })
    }

    pub fn n_source(&self) -> usize {
        self.xs.nrows()
    }

    pub fn n_target(&self) -> usize {
        self.xt.nrows()
    }

    pub fn dim(&self) -> usize {
        self.xs.ncols()
    }

    /// `n_t / n_s`.
    pub fn ratio(&self) -> f64 {
        self.n_target() as f64 / self.n_source() as f64
    }

    pub fn source(&self) -> &Array2<f64> {
        &self.xs
    }

    pub fn target(&self) -> &Array2<f64> {
        &self.xt
    }

    pub fn tensor(&self) -> &SparseTensor3 {
        &self.tensor
    }

    pub fn groups(&self) -> &ClassIndexSets {
        &self.groups
    }

    fn check(&self, c: &Array2<f64>) -> Result<()> {
        if c.dim() != (self.n_source(), self.n_target()) {
            return Err(Error::Dimension(format!(
                "matching matrix is {:?}, expected ({}, {})",
                c.dim(),
                self.n_source(),
                self.n_target()
            )));
        }
        Ok(())
    }
}

/// A term value with its gradient.
pub type ValueGrad = (f64, Array2<f64>);

/// `|C Xt - Xs|^2 / (n_s d)`.
pub fn f1_and_grad(c: &Array2<f64>, ctx: &ObjectiveContext) -> Result<ValueGrad> {
    ctx.check(c)?;
    let scale = (ctx.n_source() * ctx.dim()) as f64;
    let residual = c.dot(&ctx.xt) - &ctx.xs;
    let value = residual.iter().map(|v| v * v).sum::<f64>() / scale;
    let grad = residual.dot(&ctx.xt.t()) * (2.0 / scale);
    Ok((value, grad))
}

/// `|C Dt - r Ds C|^2`.
pub fn f2_and_grad(c: &Array2<f64>, ctx: &ObjectiveContext) -> Result<ValueGrad> {
    ctx.check(c)?;
    let r = ctx.ratio();
    let e = c.dot(&ctx.dt) - ctx.ds.dot(c) * r;
    let value = e.iter().map(|v| v * v).sum();
    // 2 (C Dt Dt^T - r Ds C Dt^T - r Ds^T C Dt + r^2 Ds^T Ds C) = 2 (E Dt^T - r Ds^T E)
    let grad = (e.dot(&ctx.dt.t()) - ctx.ds.t().dot(&e) * r) * 2.0;
    Ok((value, grad))
}

/// `H x1 c x2 c x3 c` over every stored entry, with its gradient.
pub fn f3_and_grad(c: &Array2<f64>, ctx: &ObjectiveContext) -> Result<ValueGrad> {
    ctx.check(c)?;
    Ok(tensor_contraction(&ctx.tensor, c))
}

/// Contracts a symmetric sparse tensor with `vec(C)` on all three modes.
///
/// Each orbit `{p, q, r}` with value `h` stands for six stored entries, so it
/// adds `6 h c_p c_q c_r` to the value and `6 h c_q c_r` to the gradient at `p`.
pub fn tensor_contraction(tensor: &SparseTensor3, c: &Array2<f64>) -> ValueGrad {
    let cv = c.as_slice().map(|s| s.to_vec()).unwrap_or_else(|| c.iter().copied().collect());
    let mut grad = vec![0.0; cv.len()];
    let mut value = 0.0;
    for &([p, q, r], h) in tensor.orbits() {
        let (p, q, r) = (p as usize, q as usize, r as usize);
        let w = 6.0 * h;
        let (cp, cq, cr) = (cv[p], cv[q], cv[r]);
        value += w * cp * cq * cr;
        grad[p] += w * cq * cr;
        grad[q] += w * cp * cr;
        grad[r] += w * cp * cq;
    }
    let grad = Array2::from_shape_vec(c.dim(), grad).expect("shape matches");
    (value, grad)
}

/// `sum_j sum_c |C[I_c, j]|_2`, with gradient `C_ij / |C[I_c(i), j]|` and 0 on empty norms.
pub fn fg_and_grad(c: &Array2<f64>, ctx: &ObjectiveContext) -> Result<ValueGrad> {
    ctx.check(c)?;
    let mut grad = Array2::zeros(c.dim());
    let mut value = 0.0;
    for j in 0..c.ncols() {
        for rows in ctx.groups.groups() {
            let norm = rows.iter().map(|&i| c[[i, j]] * c[[i, j]]).sum::<f64>().sqrt();
            value += norm;
            if norm > 0.0 {
                for &i in rows {
                    grad[[i, j]] = c[[i, j]] / norm;
                }
            }
        }
    }
    Ok((value, grad))
}

/// Term values of one objective evaluation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ObjectiveTerms {
    pub total: f64,
    pub f1: f64,
    pub f2: f64,
    pub f3: f64,
    pub fg: f64,
}

/// `f1 + l2 f2 - l3 f3 + lg fg` and the matching gradient. Terms with a zero
/// weight are skipped and reported as 0.
pub fn total_objective(
    c: &Array2<f64>,
    ctx: &ObjectiveContext,
    w: &ObjectiveWeights,
) -> Result<(ObjectiveTerms, Array2<f64>)> {
    let (f1, mut grad) = f1_and_grad(c, ctx)?;
    let mut terms = ObjectiveTerms {
        total: f1,
        f1,
        f2: 0.0,
        f3: 0.0,
        fg: 0.0,
    };
    if w.lambda2 != 0.0 {
        let (v, g) = f2_and_grad(c, ctx)?;
        terms.f2 = v;
        terms.total += w.lambda2 * v;
        grad.scaled_add(w.lambda2, &g);
    }
    if w.lambda3 != 0.0 {
        let (v, g) = f3_and_grad(c, ctx)?;
        terms.f3 = v;
        terms.total -= w.lambda3 * v;
        grad.scaled_add(-w.lambda3, &g);
    }
    if w.lambda_g != 0.0 {
        let (v, g) = fg_and_grad(c, ctx)?;
        terms.fg = v;
        terms.total += w.lambda_g * v;
        grad.scaled_add(w.lambda_g, &g);
    }
    Ok((terms, grad))
}
