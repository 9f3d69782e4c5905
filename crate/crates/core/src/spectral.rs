//! Eigendecomposition, level clustering, Bohr frequencies, `V_omega`
//! components, Gibbs states and proper arithmetic progressions in spectra.

use std::ops::Range;

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::linalg::{self, cr, CMat};
use crate::operators::HermitianOperator;

/// Eigenpairs of a Hermitian operator, eigenvalues ascending.
#[derive(Debug, Clone)]
pub struct SpectralData {
    pub values: Vec<f64>,
    pub vectors: CMat,
    /// `max |V diag(values) V^dag - H| / max(1, max |H|)`.
    pub residual: f64,
}

impl SpectralData {
    pub fn dim(&self) -> usize {
        self.values.len()
    }

    /// `max - min` of the spectrum; 1 when the spectrum is a single point.
    pub fn scale(&self) -> f64 {
        tolerance_scale(&self.values)
    }
}

pub fn eigendecompose(h: &HermitianOperator) -> Result<SpectralData> {
    let (values, vectors) = linalg::eigh(h.matrix())?;
    let rebuilt = linalg::from_eigen(&values, &vectors);
    let residual = linalg::max_diff(&rebuilt, h.matrix()) / linalg::max_abs(h.matrix()).max(1.0);
    Ok(SpectralData { values, vectors, residual })
}

/// Spectral range used to scale tolerances, falling back to 1 for a flat spectrum.
pub fn tolerance_scale(values: &[f64]) -> f64 {
    let lo = values.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let range = hi - lo;
    if range.is_finite() && range > 0.0 {
        range
    } else {
        1.0
    }
}

/// Default clustering tolerance `1e-9 * range`.
pub fn default_value_tol(values: &[f64]) -> f64 {
    1e-9 * tolerance_scale(values)
}

/// Default AP separation tolerance `1e-7 * range`.
pub fn default_sep_tol(values: &[f64]) -> f64 {
    1e-7 * tolerance_scale(values)
}

/// Chain clustering of sorted values: returns the index ranges of each cluster.
fn chain_clusters(sorted: &[f64], tol: f64) -> Vec<Range<usize>> {
    let mut out = Vec::new();
    let mut start = 0;
    for i in 1..=sorted.len() {
        if i == sorted.len() || sorted[i] - sorted[i - 1] > tol {
            if i > start {
                out.push(start..i);
            }
            start = i;
        }
    }
    out
}

/// Sorted distinct values, clustered at `tol` and represented by their mean.
pub fn distinct_values(values: &[f64], tol: f64) -> Vec<f64> {
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    chain_clusters(&sorted, tol)
        .into_iter()
        .map(|r| sorted[r.clone()].iter().sum::<f64>() / r.len() as f64)
        .collect()
}

/// Eigenvalue clusters of `H`. The eigenvectors of level `k` are the
/// columns `ranges[k]` of `vectors`.
#[derive(Debug, Clone)]
pub struct Levels {
    pub values: Vec<f64>,
    pub multiplicities: Vec<usize>,
    pub ranges: Vec<Range<usize>>,
    /// Level index of every eigenvector column.
    pub level_of: Vec<usize>,
    /// Eigenvalue of every eigenvector column as returned by the solver.
    pub energies: Vec<f64>,
    pub vectors: CMat,
    pub tol: f64,
}

impl Levels {
    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.vectors.nrows()
    }

    pub fn is_simple(&self) -> bool {
        self.multiplicities.iter().all(|&m| m == 1)
    }

    /// Spectral projector onto level `k`.
    pub fn projector(&self, k: usize) -> CMat {
        let r = self.ranges[k].clone();
        let block = self.vectors.columns(r.start, r.len());
        block * block.adjoint()
    }

    /// `V^dag f V`.
    pub fn to_eigenbasis(&self, f: &CMat) -> CMat {
        self.vectors.adjoint() * f * &self.vectors
    }

    /// `V f V^dag`.
    pub fn from_eigenbasis(&self, f: &CMat) -> CMat {
        &self.vectors * f * self.vectors.adjoint()
    }

    /// `sum_k lambda_k Pi_k`.
    pub fn reconstruct(&self) -> CMat {
        let diag: Vec<f64> = self.level_of.iter().map(|&k| self.values[k]).collect();
        linalg::from_eigen(&diag, &self.vectors)
    }

    /// Copy of these levels with a different refining eigenbasis.
    ///
    /// `basis` must have the same block structure: column `i` an eigenvector
    /// of level `level_of[i]`.
    pub fn with_basis(&self, basis: CMat) -> Self {
        Self { vectors: basis, ..self.clone() }
    }
}

pub fn cluster_levels(sd: &SpectralData, tol: f64) -> Levels {
    let ranges = chain_clusters(&sd.values, tol);
    let mut level_of = vec![0; sd.dim()];
    let mut values = Vec::with_capacity(ranges.len());
    let mut multiplicities = Vec::with_capacity(ranges.len());
    for (k, r) in ranges.iter().enumerate() {
        values.push(sd.values[r.clone()].iter().sum::<f64>() / r.len() as f64);
        multiplicities.push(r.len());
        for i in r.clone() {
            level_of[i] = k;
        }
    }
    Levels {
        values,
        multiplicities,
        ranges,
        level_of,
        energies: sd.values.clone(),
        vectors: sd.vectors.clone(),
        tol,
    }
}

/// Distinct Bohr frequencies with the level pairs that realise them.
#[derive(Debug, Clone)]
pub struct BohrData {
    /// Ascending; `omegas[zero]` is exactly 0 and the list is symmetric under negation.
    pub omegas: Vec<f64>,
    /// Level pairs `(a, b)` with `lambda_a - lambda_b = omegas[k]`.
    pub pairs: Vec<Vec<(usize, usize)>>,
    /// Frequency index of level pair `(a, b)` at `a * n_levels + b`.
    pub pair_index: Vec<usize>,
    pub n_levels: usize,
    pub zero: usize,
    pub tol: f64,
}

impl BohrData {
    pub fn len(&self) -> usize {
        self.omegas.len()
    }

    pub fn is_empty(&self) -> bool {
        self.omegas.is_empty()
    }

    pub fn index_of_pair(&self, a: usize, b: usize) -> usize {
        self.pair_index[a * self.n_levels + b]
    }

    /// Index of the representative nearest to `omega`, if within `tol`.
    pub fn index_of(&self, omega: f64) -> Option<usize> {
        let pos = self.omegas.partition_point(|&w| w < omega);
        let mut best: Option<(usize, f64)> = None;
        for k in [pos.wrapping_sub(1), pos] {
            if let Some(&w) = self.omegas.get(k) {
                let d = (w - omega).abs();
                if best.is_none_or(|(_, bd)| d < bd) {
                    best = Some((k, d));
                }
            }
        }
        best.filter(|&(_, d)| d <= self.tol).map(|(k, _)| k)
    }

    /// Index of `-omegas[k]`.
    pub fn negate(&self, k: usize) -> usize {
        self.omegas.len() - 1 - k
    }

    /// Frequencies with `omega > 0`, as indices.
    pub fn positive(&self) -> Range<usize> {
        self.zero + 1..self.omegas.len()
    }

    /// True when every nonzero frequency is realised by exactly one level pair.
    pub fn is_simple(&self) -> bool {
        self.pairs.iter().enumerate().all(|(k, p)| k == self.zero || p.len() == 1)
    }
}

pub fn bohr_frequencies(levels: &Levels, tol: f64) -> BohrData {
    let l = levels.len();
    // Positive differences a > b, clustered as a chain seeded at exactly 0.
    let mut diffs: Vec<(f64, usize, usize)> = Vec::with_capacity(l * (l.saturating_sub(1)) / 2);
    for a in 0..l {
        for b in 0..a {
            diffs.push((levels.values[a] - levels.values[b], a, b));
        }
    }
    diffs.sort_by(|x, y| x.0.total_cmp(&y.0).then((x.1, x.2).cmp(&(y.1, y.2))));

    // clusters[0] is the zero cluster; its representative stays 0.
    let mut clusters: Vec<Vec<(f64, usize, usize)>> = vec![Vec::new()];
    let mut last = 0.0;
    for d in diffs {
        if d.0 - last > tol {
            clusters.push(Vec::new());
        }
        last = d.0;
        clusters.last_mut().expect("nonempty").push(d);
    }
    if clusters.len() > 1 && clusters.last().is_some_and(Vec::is_empty) {
        clusters.pop();
    }
    let positive: Vec<(f64, Vec<(usize, usize)>)> = clusters
        .iter()
        .skip(1)
        .map(|c| {
            let mean = c.iter().map(|d| d.0).sum::<f64>() / c.len() as f64;
            (mean, c.iter().map(|d| (d.1, d.2)).collect())
        })
        .collect();

    let m = positive.len();
    let zero = m;
    let mut omegas = Vec::with_capacity(2 * m + 1);
    let mut pairs = Vec::with_capacity(2 * m + 1);
    for (w, p) in positive.iter().rev() {
        omegas.push(-w);
        pairs.push(p.iter().map(|&(a, b)| (b, a)).collect::<Vec<_>>());
    }
    let mut zero_pairs: Vec<(usize, usize)> = (0..l).map(|a| (a, a)).collect();
    for &(_, a, b) in &clusters[0] {
        zero_pairs.push((a, b));
        zero_pairs.push((b, a));
    }
    zero_pairs.sort_unstable();
    omegas.push(0.0);
    pairs.push(zero_pairs);
    for (w, p) in &positive {
        omegas.push(*w);
        pairs.push(p.clone());
    }

    let mut pair_index = vec![0; l * l];
    for (k, list) in pairs.iter().enumerate() {
        for &(a, b) in list {
            pair_index[a * l + b] = k;
        }
    }
    BohrData { omegas, pairs, pair_index, n_levels: l, zero, tol }
}

/// Keeps the eigenbasis entries of `f` whose level pair sits at frequency `k`.
pub fn component_by_index(f_eig: &CMat, k: usize, levels: &Levels, bohr: &BohrData) -> CMat {
    let lv = &levels.level_of;
    CMat::from_fn(f_eig.nrows(), f_eig.ncols(), |i, j| {
        if bohr.index_of_pair(lv[i], lv[j]) == k {
            f_eig[(i, j)]
        } else {
            cr(0.0)
        }
    })
}

/// `f(omega) = sum_{lambda_1 - lambda_2 = omega} Pi_1 f Pi_2`.
///
/// The frequency index is `None`, and the result zero, when `omega` is not a
/// Bohr frequency within `bohr.tol`.
pub fn project_component(f: &CMat, omega: f64, levels: &Levels, bohr: &BohrData) -> (CMat, Option<usize>) {
    match bohr.index_of(omega) {
        Some(k) => {
            let part = component_by_index(&levels.to_eigenbasis(f), k, levels, bohr);
            (levels.from_eigenbasis(&part), Some(k))
        }
        None => (CMat::zeros(f.nrows(), f.ncols()), None),
    }
}

/// Every component `f(omega_k)`, in the order of `bohr.omegas`.
pub fn decompose(f: &CMat, levels: &Levels, bohr: &BohrData) -> Vec<CMat> {
    let f_eig = levels.to_eigenbasis(f);
    (0..bohr.len())
        .map(|k| levels.from_eigenbasis(&component_by_index(&f_eig, k, levels, bohr)))
        .collect()
}

/// Distance of `f` from `V_omega_k`: `max |f - f(omega_k)|`.
pub fn distance_from_component(f: &CMat, k: usize, levels: &Levels, bohr: &BohrData) -> f64 {
    let f_eig = levels.to_eigenbasis(f);
    let part = component_by_index(&f_eig, k, levels, bohr);
    linalg::max_abs(&(f_eig - part))
}

/// `rho = exp(-beta H) / Z` with its fractional powers.
#[derive(Debug, Clone)]
pub struct GibbsState {
    pub beta: f64,
    /// Eigenvalue of `rho` on every eigenvector column.
    pub weights: Vec<f64>,
    /// Eigenvalue of `rho` on every level.
    pub level_weights: Vec<f64>,
    pub vectors: CMat,
    pub rho: CMat,
    pub rho_sqrt: CMat,
    pub rho_quarter: CMat,
}

impl GibbsState {
    pub fn dim(&self) -> usize {
        self.weights.len()
    }

    /// `rho^m` for real `m`.
    pub fn power(&self, m: f64) -> CMat {
        let w: Vec<f64> = self.weights.iter().map(|p| p.powf(m)).collect();
        linalg::from_eigen(&w, &self.vectors)
    }
}

pub fn gibbs_state(levels: &Levels, beta: f64) -> GibbsState {
    let exponents: Vec<f64> = levels.values.iter().map(|&v| -beta * v).collect();
    let shift = exponents.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let raw: Vec<f64> = exponents.iter().map(|&e| (e - shift).exp()).collect();
    let z: f64 = raw.iter().zip(&levels.multiplicities).map(|(w, &m)| w * m as f64).sum();
    let level_weights: Vec<f64> = raw.iter().map(|w| w / z).collect();
    let weights: Vec<f64> = levels.level_of.iter().map(|&k| level_weights[k]).collect();
    let vectors = levels.vectors.clone();
    let rho = linalg::from_eigen(&weights, &vectors);
    let sqrt: Vec<f64> = weights.iter().map(|p| p.sqrt()).collect();
    let quarter: Vec<f64> = weights.iter().map(|p| p.sqrt().sqrt()).collect();
    GibbsState {
        beta,
        rho_sqrt: linalg::from_eigen(&sqrt, &vectors),
        rho_quarter: linalg::from_eigen(&quarter, &vectors),
        rho,
        weights,
        level_weights,
        vectors,
    }
}

/// Longest proper arithmetic progression found in a spectrum.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct APReport {
    pub length: usize,
    pub a: Option<f64>,
    /// Common difference; absent when `length <= 1`.
    pub b: Option<f64>,
    pub value_tol: f64,
    pub sep_tol: f64,
}

impl APReport {
    /// Terms `a, a + b, ..., a + (length - 1) b` of the witness.
    pub fn terms(&self) -> Vec<f64> {
        match (self.a, self.b) {
            (Some(a), Some(b)) => (0..self.length).map(|k| a + k as f64 * b).collect(),
            (Some(a), None) => vec![a],
            _ => Vec::new(),
        }
    }
}

fn contains_within(sorted: &[f64], x: f64, tol: f64) -> bool {
    let pos = sorted.partition_point(|&v| v < x);
    [pos.wrapping_sub(1), pos]
        .iter()
        .any(|&k| sorted.get(k).is_some_and(|&v| (v - x).abs() <= tol))
}

/// Length of the progression `a, a + b, ...` inside `sorted`, capped at `max_len`.
fn extend_progression(sorted: &[f64], a: f64, b: f64, max_len: usize, tol: f64) -> usize {
    let mut len = 1;
    while len < max_len && contains_within(sorted, a + len as f64 * b, tol) {
        len += 1;
    }
    len
}

/// Longest proper AP over the distinct values of `spectrum`.
///
/// Every ordered pair of distinct values `(a, a + b)` with `b > sep_tol` seeds
/// a progression which is extended term by term; the first longest one wins.
pub fn find_proper_ap(spectrum: &[f64], max_len: usize, value_tol: f64, sep_tol: f64) -> APReport {
    let values = distinct_values(spectrum, value_tol);
    let mut report = APReport {
        length: values.len().min(1).min(max_len),
        a: values.first().copied().filter(|_| max_len >= 1),
        b: None,
        value_tol,
        sep_tol,
    };
    if max_len < 2 {
        return report;
    }
    for i in 0..values.len() {
        for j in i + 1..values.len() {
            let b = values[j] - values[i];
            if b <= sep_tol {
                continue;
            }
            let len = extend_progression(&values, values[i], b, max_len, value_tol);
            if len > report.length {
                report.length = len;
                report.a = Some(values[i]);
                report.b = Some(b);
                if len == max_len {
                    return report;
                }
            }
        }
    }
    report
}

/// Longest run `x, x + omega, x + 2 omega, ...` inside the distinct values.
pub fn longest_ap_with_difference(values: &[f64], omega: f64, tol: f64) -> usize {
    let distinct = distinct_values(values, tol);
    if distinct.is_empty() {
        return 0;
    }
    if omega.abs() <= tol {
        return 1;
    }
    let step = omega.abs();
    distinct
        .iter()
        .map(|&x| extend_progression(&distinct, x, step, usize::MAX, tol))
        .max()
        .unwrap_or(1)
}
