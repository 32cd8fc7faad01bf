//! Instance generators and brute-force oracles shared by the integration tests.
//! Nothing here calls into the code paths it is used to check.

#![allow(dead_code)]

use hgda::data::{class_index_sets, FeatureMatrix};
use hgda::graph::SparseTensor3;
use hgda::objective::{ObjectiveContext, ObjectiveWeights, ObjectiveTerms};
use ndarray::{Array1, Array2, Array3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn uniform(rng: &mut ChaCha8Rng, rows: usize, cols: usize, lo: f64, hi: f64) -> Array2<f64> {
    Array2::from_shape_fn((rows, cols), |_| rng.random_range(lo..hi))
}

pub fn features(a: Array2<f64>) -> FeatureMatrix {
    FeatureMatrix::new(a).unwrap()
}

/// Symmetric with zero diagonal, entries in `[0, 1)`.
pub fn random_adjacency(rng: &mut ChaCha8Rng, n: usize) -> Array2<f64> {
    let mut d = Array2::zeros((n, n));
    for i in 0..n {
        for j in (i + 1)..n {
            let v = rng.random::<f64>();
            d[[i, j]] = v;
            d[[j, i]] = v;
        }
    }
    d
}

/// A few random orbits with distinct coordinates.
pub fn random_tensor(rng: &mut ChaCha8Rng, ns: usize, nt: usize, orbits: usize) -> SparseTensor3 {
    let dim = ns * nt;
    let mut triples = Vec::new();
    while triples.len() < orbits {
        let key = [
            rng.random_range(0..dim),
            rng.random_range(0..dim),
            rng.random_range(0..dim),
        ];
        if key[0] != key[1] && key[0] != key[2] && key[1] != key[2] {
            triples.push((key, rng.random_range(0.05..1.0)));
        }
    }
    SparseTensor3::from_triples(ns, nt, 1.0, triples).unwrap()
}

pub struct Instance {
    pub ctx: ObjectiveContext,
    pub c: Array2<f64>,
    pub labels: Vec<usize>,
}

/// Random objective instance with `n_s, n_t in [3, 6]`, `d in [2, 4]` and a
/// strictly positive `C`.
pub fn random_instance(seed: u64) -> Instance {
    let mut r = rng(seed);
    let ns = r.random_range(3..=6);
    let nt = r.random_range(3..=6);
    let d = r.random_range(2..=4);
    let xs = uniform(&mut r, ns, d, -1.0, 1.0);
    let xt = uniform(&mut r, nt, d, -1.0, 1.0);
    let ds = random_adjacency(&mut r, ns);
    let dt = random_adjacency(&mut r, nt);
    let tensor = random_tensor(&mut r, ns, nt, 3 * ns * nt);
    let classes = 2;
    let mut labels: Vec<usize> = (0..ns).map(|_| r.random_range(1..=classes)).collect();
    labels[0] = 1;
    labels[1] = 2;
    let ctx = ObjectiveContext::new(
        &features(xs),
        &features(xt),
        ds,
        dt,
        tensor,
        class_index_sets(&labels, classes).unwrap(),
    )
    .unwrap();
    let c = uniform(&mut r, ns, nt, 0.1, 1.0);
    Instance { ctx, c, labels }
}

/// Central differences of a scalar function of `C`.
pub fn finite_difference(c: &Array2<f64>, step: f64, f: impl Fn(&Array2<f64>) -> f64) -> Array2<f64> {
    let mut grad = Array2::zeros(c.dim());
    for idx in ndarray::indices(c.dim()) {
        let mut plus = c.clone();
        let mut minus = c.clone();
        plus[idx] += step;
        minus[idx] -= step;
        grad[idx] = (f(&plus) - f(&minus)) / (2.0 * step);
    }
    grad
}

pub fn relative_error(approx: &Array2<f64>, exact: &Array2<f64>) -> f64 {
    let diff: f64 = approx.iter().zip(exact).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
    let norm: f64 = exact.iter().map(|v| v * v).sum::<f64>().sqrt();
    diff / norm.max(1e-12)
}

/// Dense copy of every stored entry.
pub fn dense_tensor(h: &SparseTensor3) -> Array3<f64> {
    let n = h.dim();
    let mut dense = Array3::zeros((n, n, n));
    for ([p, q, r], v) in h.entries() {
        dense[[p, q, r]] = v;
    }
    dense
}

/// `H x1 c x2 c x3 c` and the sum of the three two-mode contractions, by triple loop.
pub fn dense_contraction(h: &Array3<f64>, c: &Array2<f64>) -> (f64, Array2<f64>) {
    let cv: Vec<f64> = c.iter().copied().collect();
    let n = cv.len();
    let mut value = 0.0;
    let mut grad = vec![0.0; n];
    for p in 0..n {
        for q in 0..n {
            for r in 0..n {
                let v = h[[p, q, r]];
                if v == 0.0 {
                    continue;
                }
                value += v * cv[p] * cv[q] * cv[r];
                // H x2 c x3 c, H x1 c x3 c, H x1 c x2 c
                grad[p] += v * cv[q] * cv[r];
                grad[q] += v * cv[p] * cv[r];
                grad[r] += v * cv[p] * cv[q];
            }
        }
    }
    (value, Array2::from_shape_vec(c.dim(), grad).unwrap())
}

/// Sines of the interior angles from side lengths via the law of cosines.
pub fn triangle_sines(a: &[f64], b: &[f64], c: &[f64]) -> [f64; 3] {
    let dist = |u: &[f64], v: &[f64]| u.iter().zip(v).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
    let (ab, bc, ca) = (dist(a, b), dist(b, c), dist(c, a));
    let sine = |adj1: f64, adj2: f64, opp: f64| {
        let cos = ((adj1 * adj1 + adj2 * adj2 - opp * opp) / (2.0 * adj1 * adj2)).clamp(-1.0, 1.0);
        (1.0 - cos * cos).max(0.0).sqrt()
    };
    [sine(ab, ca, bc), sine(ab, bc, ca), sine(ca, bc, ab)]
}

/// Dense third-order tensor over all candidate triples with distinct source
/// and distinct target vertices.
pub fn brute_force_tensor(xs: &Array2<f64>, xt: &Array2<f64>, gamma: f64) -> Array3<f64> {
    let (ns, nt) = (xs.nrows(), xt.nrows());
    let n = ns * nt;
    let row = |x: &Array2<f64>, i: usize| x.row(i).to_vec();
    let mut dense = Array3::zeros((n, n, n));
    for p in 0..n {
        for q in 0..n {
            for r in 0..n {
                let (i, j, k) = (p / nt, q / nt, r / nt);
                let (a, b, c) = (p % nt, q % nt, r % nt);
                if i == j || i == k || j == k || a == b || a == c || b == c {
                    continue;
                }
                let fs = triangle_sines(&row(xs, i), &row(xs, j), &row(xs, k));
                let ft = triangle_sines(&row(xt, a), &row(xt, b), &row(xt, c));
                let d2: f64 = (0..3).map(|m| (fs[m] - ft[m]).powi(2)).sum();
                dense[[p, q, r]] = (-gamma * d2).exp();
            }
        }
    }
    dense
}

fn permutations(n: usize) -> Vec<Vec<usize>> {
    if n == 0 {
        return vec![vec![]];
    }
    let mut out = Vec::new();
    for perm in permutations(n - 1) {
        for pos in 0..=perm.len() {
            let mut p = perm.clone();
            p.insert(pos, n - 1);
            out.push(p);
        }
    }
    out
}

/// Minimum of `Tr(G^T P)` over permutation matrices, the vertices of the
/// square polytope.
pub fn permutation_minimum(g: &Array2<f64>) -> f64 {
    let n = g.nrows();
    assert_eq!(n, g.ncols());
    permutations(n)
        .into_iter()
        .map(|p| (0..n).map(|i| g[[i, p[i]]]).sum::<f64>())
        .fold(f64::INFINITY, f64::min)
}

/// Euclidean projection onto `{C >= 0, C 1 = a, C^T 1 = b}` by Dykstra's
/// alternating projections.
pub fn project_polytope(y: &Array2<f64>, a: &Array1<f64>, b: &Array1<f64>, sweeps: usize) -> Array2<f64> {
    let (ns, nt) = y.dim();
    let mut x = y.clone();
    let mut p = [Array2::zeros((ns, nt)), Array2::zeros((ns, nt)), Array2::zeros((ns, nt))];
    for _ in 0..sweeps {
        for (set, corr) in p.iter_mut().enumerate() {
            let input = &x + &*corr;
            let mut out = input.clone();
            match set {
                0 => {
                    for i in 0..ns {
                        let shift = (out.row(i).sum() - a[i]) / nt as f64;
                        out.row_mut(i).mapv_inplace(|v| v - shift);
                    }
                }
                1 => {
                    for j in 0..nt {
                        let shift = (out.column(j).sum() - b[j]) / ns as f64;
                        out.column_mut(j).mapv_inplace(|v| v - shift);
                    }
                }
                _ => out.mapv_inplace(|v| v.max(0.0)),
            }
            *corr = &input - &out;
            x = out;
        }
    }
    x
}

/// Projected gradient descent on `f1` alone.
pub fn projected_gradient_f1(xs: &Array2<f64>, xt: &Array2<f64>, steps: usize) -> Array2<f64> {
    let (ns, nt) = (xs.nrows(), xt.nrows());
    let d = xs.ncols();
    let a = Array1::ones(ns);
    let b = Array1::from_elem(nt, ns as f64 / nt as f64);
    let mut c = Array2::from_elem((ns, nt), 1.0 / nt as f64);
    // Lipschitz constant of the gradient: 2 |Xt|_2^2 / (n_s d) <= 2 |Xt|_F^2 / (n_s d)
    let lip = 2.0 * xt.iter().map(|v| v * v).sum::<f64>() / (ns * d) as f64;
    let step = 1.0 / lip;
    for _ in 0..steps {
        let grad = (c.dot(xt) - xs).dot(&xt.t()) * (2.0 / (ns * d) as f64);
        c = project_polytope(&(&c - &(grad * step)), &a, &b, 50);
    }
    c
}

pub fn frobenius(a: &Array2<f64>, b: &Array2<f64>) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt()
}

pub fn objective_value(
    c: &Array2<f64>,
    ctx: &ObjectiveContext,
    w: &ObjectiveWeights,
) -> ObjectiveTerms {
    hgda::objective::total_objective(c, ctx, w).unwrap().0
}
