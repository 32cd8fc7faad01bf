//! Second- and third-order graph structure over exemplar sets.
//!
//! Nodes of the matching problem are candidate pairs `(source i, target a)`,
//! flattened row-major as `i * n_t + a`, the same order as the vectorized
//! matching matrix.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::path::Path;

use ndarray::{Array2, ArrayView1};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::FeatureMatrix;
use crate::error::{Error, Result};

fn sq_dist(a: ArrayView1<'_, f64>, b: ArrayView1<'_, f64>) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Mean Euclidean distance over all unordered pairs of rows.
pub fn sigma_heuristic(x: &FeatureMatrix) -> Result<f64> {
    let n = x.nrows();
    if n < 2 {
        return Err(Error::InvalidInput(
            "bandwidth heuristic needs at least two points".into(),
        ));
    }
    let mut total = 0.0;
    for i in 0..n {
        for j in (i + 1)..n {
            total += sq_dist(x.row(i), x.row(j)).sqrt();
        }
    }
    let sigma = total / (n * (n - 1) / 2) as f64;
    if !sigma.is_finite() {
        return Err(Error::NonFinite(format!("bandwidth overflowed to {sigma}")));
    }
    if sigma <= 0.0 {
        return Err(Error::Degenerate("zero bandwidth".into()));
    }
    Ok(sigma)
}

/// Gaussian-kernel adjacency with zero diagonal.
#[derive(Debug, Clone, PartialEq)]
pub struct AdjacencyMatrix {
    values: Array2<f64>,
    sigma: f64,
}

impl AdjacencyMatrix {
    pub fn values(&self) -> &Array2<f64> {
        &self.values
    }

    pub fn sigma(&self) -> f64 {
        self.sigma
    }

    pub fn len(&self) -> usize {
        self.values.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

/// `exp(-|x_i - x_j|^2 / sigma^2)` off the diagonal.
pub fn adjacency_matrix(x: &FeatureMatrix, sigma: f64) -> Result<AdjacencyMatrix> {
    if !(sigma > 0.0 && sigma.is_finite()) {
        return Err(Error::InvalidInput(format!(
            "bandwidth must be positive, got {sigma}"
        )));
    }
    let n = x.nrows();
    let s2 = sigma * sigma;
    let mut values = Array2::zeros((n, n));
    for i in 0..n {
        for j in (i + 1)..n {
            let v = (-sq_dist(x.row(i), x.row(j)) / s2).exp();
            values[[i, j]] = v;
            values[[j, i]] = v;
        }
    }
    Ok(AdjacencyMatrix { values, sigma })
}

/// Sines of the interior angles at the three vertices, in vertex order.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TriangleFeature(pub [f64; 3]);

impl TriangleFeature {
    pub fn sq_dist(&self, other: &TriangleFeature) -> f64 {
        (0..3).map(|i| (self.0[i] - other.0[i]).powi(2)).sum()
    }

    fn permuted(&self, perm: [usize; 3]) -> TriangleFeature {
        TriangleFeature([self.0[perm[0]], self.0[perm[1]], self.0[perm[2]]])
    }
}

/// Sine of the angle at `apex` between the rays towards `u` and `v`.
fn sine_at(apex: ArrayView1<'_, f64>, u: ArrayView1<'_, f64>, v: ArrayView1<'_, f64>) -> f64 {
    let mut uu = 0.0;
    let mut vv = 0.0;
    let mut uv = 0.0;
    for ((a, b), c) in apex.iter().zip(u).zip(v) {
        let du = b - a;
        let dv = c - a;
        uu += du * du;
        vv += dv * dv;
        uv += du * dv;
    }
    // |u x v|^2 = |u|^2 |v|^2 - (u.v)^2 in any dimension
    let cross2 = (uu * vv - uv * uv).max(0.0);
    (cross2.sqrt() / (uu.sqrt() * vv.sqrt())).clamp(0.0, 1.0)
}

/// Collinear points give `(0, 0, 0)`. Coincident points are rejected.
pub fn triangle_feature(
    a: ArrayView1<'_, f64>,
    b: ArrayView1<'_, f64>,
    c: ArrayView1<'_, f64>,
) -> Result<TriangleFeature> {
    if sq_dist(a, b) == 0.0 || sq_dist(a, c) == 0.0 || sq_dist(b, c) == 0.0 {
        return Err(Error::Degenerate("triangle has coincident vertices".into()));
    }
    Ok(TriangleFeature([
        sine_at(a, b, c),
        sine_at(b, a, c),
        sine_at(c, a, b),
    ]))
}

/// `1 / mean(sq_distances)`, or 1 when the mean is zero.
pub fn gamma_heuristic(sq_distances: &[f64]) -> Result<f64> {
    if sq_distances.is_empty() {
        return Err(Error::InvalidInput(
            "tensor scale needs at least one sampled pair".into(),
        ));
    }
    let mean = sq_distances.iter().sum::<f64>() / sq_distances.len() as f64;
    Ok(if mean > 0.0 { 1.0 / mean } else { 1.0 })
}

/// How triangles are sampled when building the third-order tensor.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct TensorConfig {
    /// Random source triangles drawn through each source node.
    pub triangles_per_node: usize,
    /// Target pool size is this factor times `n_t`.
    pub pool_per_target_node: usize,
    /// Nearest target triangles kept per source triangle.
    pub neighbors: usize,
    /// Use every source triangle and every ordered target triangle instead of sampling.
    pub exhaustive: bool,
}

impl Default for TensorConfig {
    fn default() -> Self {
        Self {
            triangles_per_node: 50,
            pool_per_target_node: 20,
            neighbors: 300,
            exhaustive: false,
        }
    }
}

/// Slot permutations. Permuting the three candidate pairs of an entry permutes
/// both triangles the same way, so the value is unchanged.
const PERMUTATIONS: [[usize; 3]; 6] = [
    [0, 1, 2],
    [0, 2, 1],
    [1, 0, 2],
    [1, 2, 0],
    [2, 0, 1],
    [2, 1, 0],
];

/// Symmetric sparse third-order tensor over candidate pairs.
///
/// One representative with sorted coordinates is kept per orbit. The logical
/// tensor holds all six slot permutations of it with the same value, which
/// [`SparseTensor3::entries`] expands.
#[derive(Debug, Clone)]
pub struct SparseTensor3 {
    orbits: Vec<([u32; 3], f64)>,
    gamma: f64,
    n_source: usize,
    n_target: usize,
}

impl SparseTensor3 {
    pub fn empty(n_source: usize, n_target: usize) -> Self {
        Self {
            orbits: Vec::new(),
            gamma: 1.0,
            n_source,
            n_target,
        }
    }

    /// Builds from arbitrary coordinate triples; each is symmetrized. Triples
    /// with a repeated coordinate are rejected.
    pub fn from_triples(
        n_source: usize,
        n_target: usize,
        gamma: f64,
        triples: impl IntoIterator<Item = ([usize; 3], f64)>,
    ) -> Result<Self> {
        let dim = n_source * n_target;
        let mut map = HashMap::new();
        for (key, v) in triples {
            if key.iter().any(|&k| k >= dim) {
                return Err(Error::Dimension(format!(
                    "tensor coordinate {key:?} exceeds {dim}"
                )));
            }
            if key[0] == key[1] || key[0] == key[2] || key[1] == key[2] {
                return Err(Error::InvalidInput(format!(
                    "tensor coordinate {key:?} repeats a candidate"
                )));
            }
            map.entry(canonical(key.map(|k| k as u32))).or_insert(v);
        }
        Ok(Self::from_map(map, gamma, n_source, n_target))
    }

    fn from_map(map: HashMap<[u32; 3], f64>, gamma: f64, n_source: usize, n_target: usize) -> Self {
        let mut orbits: Vec<_> = map.into_iter().collect();
        orbits.sort_unstable_by_key(|o| o.0);
        Self {
            orbits,
            gamma,
            n_source,
            n_target,
        }
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    /// Size of each mode, `n_s * n_t`.
    pub fn dim(&self) -> usize {
        self.n_source * self.n_target
    }

    pub fn n_source(&self) -> usize {
        self.n_source
    }

    pub fn n_target(&self) -> usize {
        self.n_target
    }

    /// Orbit representatives with sorted coordinates.
    pub fn orbits(&self) -> &[([u32; 3], f64)] {
        &self.orbits
    }

    /// Stored entry count `m`, counting every permutation.
    pub fn len(&self) -> usize {
        6 * self.orbits.len()
    }

    pub fn is_empty(&self) -> bool {
        self.orbits.is_empty()
    }

    /// Every stored entry, all six permutations per orbit.
    pub fn entries(&self) -> impl Iterator<Item = ([usize; 3], f64)> + '_ {
        self.orbits.iter().flat_map(|&(key, v)| {
            PERMUTATIONS
                .iter()
                .map(move |p| ([key[p[0]] as usize, key[p[1]] as usize, key[p[2]] as usize], v))
        })
    }

    /// Value at a coordinate, zero when not stored.
    pub fn get(&self, key: [usize; 3]) -> f64 {
        if key.iter().any(|&k| k >= self.dim()) {
            return 0.0;
        }
        let c = canonical(key.map(|k| k as u32));
        self.orbits
            .binary_search_by(|probe| probe.0.cmp(&c))
            .map_or(0.0, |i| self.orbits[i].1)
    }

    /// CSV with header `is,it,js,jt,ks,kt,value`; indices are 0-based rows.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("is,it,js,jt,ks,kt,value\n");
        let nt = self.n_target;
        for (key, v) in self.entries() {
            let [p, q, r] = key;
            let _ = writeln!(
                out,
                "{},{},{},{},{},{},{v:.16e}",
                p / nt,
                p % nt,
                q / nt,
                q % nt,
                r / nt,
                r % nt
            );
        }
        out
    }

    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_csv()).map_err(|e| Error::io(path, e))
    }
}

fn canonical(mut key: [u32; 3]) -> [u32; 3] {
    key.sort_unstable();
    key
}

struct Triangle {
    vertices: [usize; 3],
    feature: TriangleFeature,
}

/// Draws a triangle through `first` with two other distinct vertices, retrying
/// on coincident points.
fn sample_triangle(x: &FeatureMatrix, first: usize, rng: &mut ChaCha8Rng, attempts: usize) -> Option<Triangle> {
    let n = x.nrows();
    for _ in 0..attempts {
        let j = rng.random_range(0..n);
        let k = rng.random_range(0..n);
        if j == first || k == first || j == k {
            continue;
        }
        if let Ok(feature) = triangle_feature(x.row(first), x.row(j), x.row(k)) {
            return Some(Triangle {
                vertices: [first, j, k],
                feature,
            });
        }
    }
    None
}

fn source_triangles(xs: &FeatureMatrix, cfg: &TensorConfig, seed: u64) -> Vec<Triangle> {
    let n = xs.nrows();
    if cfg.exhaustive {
        let mut out = Vec::new();
        for i in 0..n {
            for j in (i + 1)..n {
                for k in (j + 1)..n {
                    if let Ok(feature) = triangle_feature(xs.row(i), xs.row(j), xs.row(k)) {
                        out.push(Triangle {
                            vertices: [i, j, k],
                            feature,
                        });
                    }
                }
            }
        }
        return out;
    }
    (0..n)
        .into_par_iter()
        .map(|i| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(i as u64 + 1);
            (0..cfg.triangles_per_node)
                .filter_map(|_| sample_triangle(xs, i, &mut rng, 20))
                .collect::<Vec<_>>()
        })
        .collect::<Vec<_>>()
        .into_iter()
        .flatten()
        .collect()
}

fn target_pool(xt: &FeatureMatrix, cfg: &TensorConfig, seed: u64) -> Vec<Triangle> {
    let n = xt.nrows();
    if cfg.exhaustive {
        let mut out = Vec::new();
        for i in 0..n {
            for j in (i + 1)..n {
                for k in (j + 1)..n {
                    if let Ok(feature) = triangle_feature(xt.row(i), xt.row(j), xt.row(k)) {
                        let base = [i, j, k];
                        for p in PERMUTATIONS {
                            out.push(Triangle {
                                vertices: [base[p[0]], base[p[1]], base[p[2]]],
                                feature: feature.permuted(p),
                            });
                        }
                    }
                }
            }
        }
        return out;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(0);
    let size = cfg.pool_per_target_node * n;
    let mut out = Vec::with_capacity(size);
    for _ in 0..size {
        let first = rng.random_range(0..n);
        if let Some(t) = sample_triangle(xt, first, &mut rng, 20) {
            out.push(t);
        }
    }
    out
}

/// Samples source triangles, pairs each with its nearest target triangles in
/// feature space, and stores `exp(-gamma |f_s - f_t|^2)` per pairing.
pub fn build_sparse_tensor(
    xs: &FeatureMatrix,
    xt: &FeatureMatrix,
    cfg: &TensorConfig,
    seed: u64,
) -> Result<SparseTensor3> {
    let (ns, nt) = (xs.nrows(), xt.nrows());
    if ns < 3 || nt < 3 {
        return Err(Error::InvalidInput(format!(
            "third-order term needs at least 3 points per domain, got {ns} source and {nt} target"
        )));
    }
    if xs.ncols() != xt.ncols() {
        return Err(Error::Dimension(format!(
            "source has {} features, target {}",
            xs.ncols(),
            xt.ncols()
        )));
    }
    if ((ns * nt) as u64) >= u32::MAX as u64 {
        return Err(Error::InvalidInput("too many candidate pairs".into()));
    }

    let sources = source_triangles(xs, cfg, seed);
    let pool = target_pool(xt, cfg, seed);
    if sources.is_empty() {
        return Err(Error::Degenerate("no non-degenerate source triangles".into()));
    }
    if pool.is_empty() {
        return Err(Error::Degenerate("no non-degenerate target triangles".into()));
    }

    let k = if cfg.exhaustive {
        pool.len()
    } else {
        cfg.neighbors.min(pool.len())
    };
    if k == 0 {
        return Err(Error::InvalidInput("neighbor count must be at least 1".into()));
    }

    // (pool index, squared feature distance) for the k nearest, ties by pool order
    let matches: Vec<Vec<(usize, f64)>> = sources
        .par_iter()
        .map(|s| {
            let mut d: Vec<(f64, usize)> = pool
                .iter()
                .enumerate()
                .map(|(idx, t)| (s.feature.sq_dist(&t.feature), idx))
                .collect();
            if k < d.len() {
                d.select_nth_unstable_by(k - 1, |a, b| a.partial_cmp(b).unwrap());
                d.truncate(k);
            }
            d.sort_unstable_by(|a, b| a.partial_cmp(b).unwrap());
            d.into_iter().map(|(dist, idx)| (idx, dist)).collect()
        })
        .collect();

    let sampled: Vec<f64> = matches.iter().flatten().map(|&(_, d)| d).collect();
    let gamma = gamma_heuristic(&sampled)?;

    let mut map: HashMap<[u32; 3], f64> = HashMap::with_capacity(sampled.len());
    for (s, near) in sources.iter().zip(&matches) {
        for &(idx, dist) in near {
            let t = &pool[idx].vertices;
            let key = [0, 1, 2].map(|slot| (s.vertices[slot] * nt + t[slot]) as u32);
            map.entry(canonical(key)).or_insert((-gamma * dist).exp());
        }
    }
    let tensor = SparseTensor3::from_map(map, gamma, ns, nt);
    log::debug!(
        "tensor: {} source triangles, pool {}, {} entries, gamma {gamma}",
        sources.len(),
        pool.len(),
        tensor.len()
    );
    Ok(tensor)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use ndarray::{array, Array1};

    fn fm(a: Array2<f64>) -> FeatureMatrix {
        FeatureMatrix::new(a).unwrap()
    }

    fn random(n: usize, d: usize, seed: u64) -> FeatureMatrix {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        fm(Array2::from_shape_fn((n, d), |_| rng.random::<f64>()))
    }

    #[test]
    fn sigma_examples() {
        assert_eq!(sigma_heuristic(&fm(array![[0.0], [2.0]])).unwrap(), 2.0);
        assert_abs_diff_eq!(
            sigma_heuristic(&fm(array![[0.0], [1.0], [2.0]])).unwrap(),
            4.0 / 3.0,
            epsilon = 1e-15
        );
        let err = sigma_heuristic(&fm(array![[0.0], [0.0]])).unwrap_err();
        assert!(err.to_string().contains("degenerate: zero bandwidth"));
        assert!(sigma_heuristic(&fm(array![[1.0]])).is_err());
    }

    #[test]
    fn adjacency_examples() {
        let d = adjacency_matrix(&fm(array![[0.0, 0.0], [3.0, 4.0]]), 5.0).unwrap();
        assert_abs_diff_eq!(d.values()[[0, 1]], (-1.0f64).exp(), epsilon = 1e-15);
        assert_abs_diff_eq!(d.values()[[0, 1]], 0.36788, epsilon = 1e-5);
        let d = adjacency_matrix(&fm(array![[1.0], [1.0]]), 1.0).unwrap();
        assert_eq!(d.values()[[1, 0]], 1.0);
        assert_eq!(d.values()[[0, 0]], 0.0);
        assert!(adjacency_matrix(&fm(array![[1.0]]), 0.0).is_err());
        assert!(adjacency_matrix(&fm(array![[1.0]]), -1.0).is_err());
    }

    #[test]
    fn adjacency_symmetric_in_range() {
        for seed in 0..100 {
            let x = random(2 + (seed as usize % 7), 3, seed);
            let sigma = sigma_heuristic(&x).unwrap();
            let d = adjacency_matrix(&x, sigma).unwrap();
            let v = d.values();
            assert_eq!(v, &v.t());
            for i in 0..v.nrows() {
                assert_eq!(v[[i, i]], 0.0);
            }
            assert!(v.iter().all(|&e| (0.0..=1.0).contains(&e)));
        }
    }

    fn tri(a: &[f64], b: &[f64], c: &[f64]) -> TriangleFeature {
        let (a, b, c) = (
            Array1::from(a.to_vec()),
            Array1::from(b.to_vec()),
            Array1::from(c.to_vec()),
        );
        triangle_feature(a.view(), b.view(), c.view()).unwrap()
    }

    #[test]
    fn triangle_examples() {
        let h = 3f64.sqrt() / 2.0;
        let f = tri(&[0.0, 0.0], &[1.0, 0.0], &[0.5, h]);
        for v in f.0 {
            assert_abs_diff_eq!(v, h, epsilon = 1e-12);
        }
        let f = tri(&[0.0, 0.0], &[1.0, 0.0], &[0.0, 1.0]);
        assert_abs_diff_eq!(f.0[0], 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(f.0[1], 0.5f64.sqrt(), epsilon = 1e-12);
        assert_abs_diff_eq!(f.0[2], 0.5f64.sqrt(), epsilon = 1e-12);
        let f = tri(&[0.0, 0.0], &[1.0, 0.0], &[2.0, 0.0]);
        assert_eq!(f.0, [0.0, 0.0, 0.0]);
        let p = Array1::from(vec![1.0, 1.0]);
        let q = Array1::from(vec![2.0, 0.0]);
        assert!(triangle_feature(p.view(), p.view(), q.view()).is_err());
    }

    #[test]
    fn gamma_examples() {
        assert_eq!(gamma_heuristic(&[0.0, 0.0]).unwrap(), 1.0);
        assert_eq!(gamma_heuristic(&[1.0, 3.0]).unwrap(), 0.5);
        assert_eq!(gamma_heuristic(&[4.0]).unwrap(), 0.25);
        assert!(gamma_heuristic(&[]).is_err());
    }

    #[test]
    fn identical_triangle_scores_one() {
        let x = fm(array![[0.0, 0.0], [3.0, 0.0], [0.5, 2.0]]);
        let cfg = TensorConfig {
            triangles_per_node: 1,
            neighbors: 1,
            ..TensorConfig::default()
        };
        let h = build_sparse_tensor(&x, &x, &cfg, 4).unwrap();
        // candidate (i, i) sits at i * 3 + i
        assert_eq!(h.get([0, 4, 8]), 1.0);
        assert_eq!(h.get([8, 0, 4]), 1.0);
    }

    #[test]
    fn stored_values_in_unit_interval_and_symmetric() {
        let xs = random(4, 2, 1);
        let xt = random(4, 2, 2);
        let h = build_sparse_tensor(&xs, &xt, &TensorConfig::default(), 9).unwrap();
        assert!(!h.is_empty());
        for (key, v) in h.entries() {
            assert!(v > 0.0 && v <= 1.0);
            assert_eq!(h.get([key[1], key[0], key[2]]), v);
        }
    }

    #[test]
    fn from_triples_symmetrizes_and_validates() {
        let h = SparseTensor3::from_triples(2, 2, 1.0, [([0, 1, 3], 0.5)]).unwrap();
        assert_eq!(h.len(), 6);
        assert_eq!(h.get([3, 0, 1]), 0.5);
        assert_eq!(h.get([0, 1, 2]), 0.0);
        assert!(SparseTensor3::from_triples(2, 2, 1.0, [([0, 0, 1], 0.5)]).is_err());
        assert!(SparseTensor3::from_triples(2, 2, 1.0, [([0, 1, 4], 0.5)]).is_err());
    }

    #[test]
    fn sampling_is_seed_deterministic() {
        let xs = random(8, 3, 5);
        let xt = random(9, 3, 6);
        let cfg = TensorConfig {
            triangles_per_node: 5,
            neighbors: 7,
            ..TensorConfig::default()
        };
        let a = build_sparse_tensor(&xs, &xt, &cfg, 13).unwrap();
        let b = build_sparse_tensor(&xs, &xt, &cfg, 13).unwrap();
        assert_eq!(a.orbits(), b.orbits());
        assert_eq!(a.gamma(), b.gamma());
    }

    #[test]
    fn rejects_small_or_degenerate_domains() {
        let xs = random(2, 2, 1);
        let xt = random(4, 2, 2);
        assert!(build_sparse_tensor(&xs, &xt, &TensorConfig::default(), 0).is_err());
        let flat = fm(Array2::zeros((5, 2)));
        assert!(matches!(
            build_sparse_tensor(&flat, &xt, &TensorConfig::default(), 0),
            Err(Error::Degenerate(_))
        ));
    }

    #[test]
    fn csv_dump_has_header_and_all_permutations() {
        let h = SparseTensor3::from_triples(2, 2, 1.0, [([0, 1, 3], 0.25)]).unwrap();
        let csv = h.to_csv();
        let mut lines = csv.lines();
        assert_eq!(lines.next(), Some("is,it,js,jt,ks,kt,value"));
        assert_eq!(lines.count(), 6);
    }
}
