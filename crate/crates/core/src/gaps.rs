//! Spectral gaps of a Davies generator, obtained by diagonalising `-L` on
//! each invariant subspace `V_omega` in a KMS-orthonormal basis.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::davies::{DaviesGenerator, DirichletMethod};
use crate::error::{Error, Result};
use crate::linalg::{self, c, cr, CMat, CVec, RMat};

/// Tolerance of the Hermitian check on generator matrices.
pub const HERMITIAN_TOL: f64 = 1e-9;
/// Gaps below this are reported as 0 and flagged.
pub const ZERO_GAP_TOL: f64 = 1e-12;
/// Largest dimension for which the full superoperator cross-check runs.
pub const GLOBAL_CHECK_MAX_DIM: usize = 16;

/// A gap value; `Infinite` when the relevant space has no non-constant observable.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "value", rename_all = "lowercase")]
pub enum Gap {
    Finite(f64),
    Infinite,
}

impl Gap {
    pub fn value(self) -> f64 {
        match self {
            Gap::Finite(v) => v,
            Gap::Infinite => f64::INFINITY,
        }
    }

    pub fn is_finite(self) -> bool {
        matches!(self, Gap::Finite(_))
    }

    pub fn min(self, other: Gap) -> Gap {
        if other.value() < self.value() {
            other
        } else {
            self
        }
    }
}

impl std::fmt::Display for Gap {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Gap::Finite(v) => write!(f, "{v}"),
            Gap::Infinite => write!(f, "inf"),
        }
    }
}

/// KMS-orthonormal basis `e_ab = (p_a p_b)^{-1/4} |u_a><u_b|` of a sum of `V_omega`.
#[derive(Debug, Clone)]
pub struct SubspaceBasis {
    /// Frequency indices covered.
    pub omegas: Vec<usize>,
    /// Eigenvector index pairs `(a, b)`.
    pub pairs: Vec<(usize, usize)>,
}

impl SubspaceBasis {
    pub fn for_omega(gen: &DaviesGenerator, k: usize) -> Self {
        Self::for_omegas(gen, &[k])
    }

    pub fn for_omegas(gen: &DaviesGenerator, ks: &[usize]) -> Self {
        let n = gen.dim();
        let mut pairs = Vec::new();
        for &k in ks {
            for a in 0..n {
                for b in 0..n {
                    if gen.freq_index(a, b) == k {
                        pairs.push((a, b));
                    }
                }
            }
        }
        Self { omegas: ks.to_vec(), pairs }
    }

    /// Every eigenvector pair: the whole operator space.
    pub fn full(gen: &DaviesGenerator) -> Self {
        let n = gen.dim();
        let pairs = (0..n).flat_map(|a| (0..n).map(move |b| (a, b))).collect();
        Self { omegas: (0..gen.bohr.len()).collect(), pairs }
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    /// Basis element `i` in the original basis.
    pub fn element(&self, gen: &DaviesGenerator, i: usize) -> CMat {
        let (a, b) = self.pairs[i];
        let w = &gen.gibbs.weights;
        let v = &gen.levels.vectors;
        let scale = (w[a] * w[b]).powf(-0.25);
        v.column(a) * v.column(b).adjoint() * cr(scale)
    }

    /// `sum_i x_i e_i` in the original basis.
    pub fn to_operator(&self, gen: &DaviesGenerator, x: &CVec) -> CMat {
        let n = gen.dim();
        let w = &gen.gibbs.weights;
        let mut eig = CMat::zeros(n, n);
        for (i, &(a, b)) in self.pairs.iter().enumerate() {
            eig[(a, b)] += x[i] * (w[a] * w[b]).powf(-0.25);
        }
        gen.levels.from_eigenbasis(&eig)
    }

    /// Coordinates of the identity, when the basis contains the diagonal pairs.
    pub fn identity_vector(&self, gen: &DaviesGenerator) -> Option<CVec> {
        let w = &gen.gibbs.weights;
        let mut v = CVec::zeros(self.len());
        let mut found = 0;
        for (i, &(a, b)) in self.pairs.iter().enumerate() {
            if a == b {
                v[i] = cr(w[a].sqrt());
                found += 1;
            }
        }
        (found == gen.dim()).then_some(v)
    }

    /// `max |<e_i, e_j>_rho - delta_ij|`, evaluated densely.
    pub fn orthonormality_defect(&self, gen: &DaviesGenerator) -> f64 {
        let elems: Vec<CMat> = (0..self.len()).map(|i| self.element(gen, i)).collect();
        let mut worst = 0.0_f64;
        for i in 0..elems.len() {
            for j in 0..elems.len() {
                let target = if i == j { 1.0 } else { 0.0 };
                worst = worst.max((gen.kms_inner(&elems[i], &elems[j]) - cr(target)).norm());
            }
        }
        worst
    }
}

/// For each eigenvector `b`, the pairs `(freq(b, d), d)` sorted by frequency.
fn partner_table(gen: &DaviesGenerator) -> Vec<Vec<(usize, usize)>> {
    let n = gen.dim();
    (0..n)
        .map(|b| {
            let mut row: Vec<(usize, usize)> = (0..n).map(|d| (gen.freq_index(b, d), d)).collect();
            row.sort_unstable();
            row
        })
        .collect()
}

fn partners(row: &[(usize, usize)], k: usize) -> impl Iterator<Item = usize> + '_ {
    let start = row.partition_point(|&(f, _)| f < k);
    row[start..].iter().take_while(move |&&(f, _)| f == k).map(|&(_, d)| d)
}

/// `M_ij = -<L(e_j), e_i>_rho` on `basis`, checked Hermitian and then symmetrised.
pub fn generator_matrix(gen: &DaviesGenerator, basis: &SubspaceBasis) -> Result<CMat> {
    let n = gen.dim();
    let dim = basis.len();
    let mut pos = vec![usize::MAX; n * n];
    for (i, &(a, b)) in basis.pairs.iter().enumerate() {
        pos[a * n + b] = i;
    }
    let table = partner_table(gen);
    let k_eig = gen.k_eigenbasis();
    let w = &gen.gibbs.weights;
    let qr: Vec<f64> = w.iter().map(|p| p.powf(0.25)).collect();

    let columns: Vec<Vec<(usize, linalg::C64)>> = basis
        .pairs
        .par_iter()
        .map(|&(a, b)| {
            // L(|a><b|)_{cd}, accumulated at the rows of the basis.
            let mut col: Vec<(usize, linalg::C64)> = Vec::new();
            for s in 0..gen.jumps.len() {
                let eig = gen.jump_eigenbasis(s);
                for cc in 0..n {
                    let s_ac = eig[(a, cc)];
                    if s_ac == cr(0.0) {
                        continue;
                    }
                    let k = gen.freq_index(a, cc);
                    let gk = gen.g[k];
                    if gk == 0.0 {
                        continue;
                    }
                    for d in partners(&table[b], k) {
                        let row = pos[cc * n + d];
                        if row != usize::MAX {
                            col.push((row, s_ac.conj() * eig[(b, d)] * gk));
                        }
                    }
                }
            }
            for cc in 0..n {
                let row = pos[cc * n + b];
                if row != usize::MAX && k_eig[(cc, a)] != cr(0.0) {
                    col.push((row, k_eig[(cc, a)] * -0.5));
                }
                let row = pos[a * n + cc];
                if row != usize::MAX && k_eig[(b, cc)] != cr(0.0) {
                    col.push((row, k_eig[(b, cc)] * -0.5));
                }
            }
            col
        })
        .collect();

    let mut m = CMat::zeros(dim, dim);
    for (j, col) in columns.into_iter().enumerate() {
        let (a, b) = basis.pairs[j];
        for (row, v) in col {
            let (cc, d) = basis.pairs[row];
            m[(row, j)] -= v * (qr[cc] * qr[d] / (qr[a] * qr[b]));
        }
    }
    let deviation = linalg::hermitian_deviation(&m);
    if deviation > HERMITIAN_TOL * linalg::max_abs(&m).max(1.0) {
        return Err(Error::ReversibilityViolation { deviation });
    }
    Ok((&m + m.adjoint()) * cr(0.5))
}

/// Smallest eigenpair of `-L` on `V_omega_k`, identity deflated for `omega = 0`.
#[derive(Debug, Clone)]
pub struct OmegaSolution {
    pub k: usize,
    pub gap: Gap,
    /// Minimiser in basis coordinates.
    pub vector: Option<CVec>,
    pub basis: SubspaceBasis,
    /// Smallest eigenvalue of the undeflated matrix; PSD check.
    pub min_eigenvalue: f64,
}

pub fn solve_omega(gen: &DaviesGenerator, k: usize) -> Result<OmegaSolution> {
    if k >= gen.bohr.len() {
        return Err(Error::Validation(format!("frequency index {k} out of range")));
    }
    let basis = SubspaceBasis::for_omega(gen, k);
    let m = generator_matrix(gen, &basis)?;
    let (values, vectors) = linalg::eigh(&m)?;
    let min_eigenvalue = values.first().copied().unwrap_or(f64::INFINITY);
    let (gap, vector) = if k == gen.bohr.zero {
        let id = basis.identity_vector(gen).expect("V_0 contains the identity");
        match linalg::deflated_min_eig(&m, &id)? {
            Some((v, x)) => (Gap::Finite(v), Some(x)),
            None => (Gap::Infinite, None),
        }
    } else {
        (Gap::Finite(values[0]), Some(vectors.column(0).into_owned()))
    };
    Ok(OmegaSolution { k, gap, vector, basis, min_eigenvalue })
}

/// `lambda_{L, omega}`.
pub fn spectral_gap_omega(gen: &DaviesGenerator, omega: f64) -> Result<Gap> {
    let k = gen.bohr.index_of(omega).ok_or(Error::NotBohrFrequency(omega))?;
    Ok(solve_omega(gen, k)?.gap)
}

/// Smallest eigenvalue of `-L` on the complement of the identity, over the whole operator space.
pub fn global_gap(gen: &DaviesGenerator) -> Result<Gap> {
    let basis = SubspaceBasis::full(gen);
    let m = generator_matrix(gen, &basis)?;
    let id = basis.identity_vector(gen).expect("full basis contains the identity");
    Ok(match linalg::deflated_min_eig(&m, &id)? {
        Some((v, _)) => Gap::Finite(v),
        None => Gap::Infinite,
    })
}

/// `E(f) / Var(f)`, infinite when `Var(f) <= 1e-12 * scale`.
pub fn rayleigh_quotient(gen: &DaviesGenerator, f: &CMat) -> Result<Gap> {
    let var = gen.variance(f);
    if var <= 1e-12 * gen.scale(f) {
        return Ok(Gap::Infinite);
    }
    Ok(Gap::Finite(gen.dirichlet_form(f, DirichletMethod::Definitional)? / var))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum HermitianSubspace {
    All,
    V0,
}

/// Real symmetric form of `-L` on the Hermitian operators of `V_omega + V_{-omega}`.
///
/// Coordinates are `e_aa`, `(e_ab + e_ba)/sqrt 2` and `i(e_ab - e_ba)/sqrt 2` for `a < b`.
fn hermitian_block(gen: &DaviesGenerator, k: usize) -> Result<(RMat, Option<nalgebra::DVector<f64>>)> {
    let neg = gen.bohr.negate(k);
    let ks: Vec<usize> = if neg == k { vec![k] } else { vec![k, neg] };
    let basis = SubspaceBasis::for_omegas(gen, &ks);
    let m = generator_matrix(gen, &basis)?;
    let dim = basis.len();
    let index = |a: usize, b: usize| basis.pairs.iter().position(|&p| p == (a, b)).expect("closed under swap");
    let mut t = CMat::zeros(dim, dim);
    let mut col = 0;
    let mut identity = nalgebra::DVector::zeros(dim);
    let r = std::f64::consts::FRAC_1_SQRT_2;
    for (i, &(a, b)) in basis.pairs.iter().enumerate() {
        if a == b {
            t[(i, col)] = cr(1.0);
            identity[col] = gen.gibbs.weights[a].sqrt();
            col += 1;
        } else if a < b {
            let j = index(b, a);
            t[(i, col)] = cr(r);
            t[(j, col)] = cr(r);
            t[(i, col + 1)] = c(0.0, r);
            t[(j, col + 1)] = c(0.0, -r);
            col += 2;
        }
    }
    debug_assert_eq!(col, dim);
    let rm = (t.adjoint() * m * &t).map(|z| z.re);
    let rm = (&rm + rm.transpose()) * 0.5;
    let id = (k == gen.bohr.zero).then_some(identity);
    Ok((rm, id))
}

fn hermitian_block_gap(gen: &DaviesGenerator, k: usize) -> Result<Gap> {
    let (rm, id) = hermitian_block(gen, k)?;
    match id {
        Some(v) => Ok(match linalg::deflated_min_eig_real(&rm, &v)? {
            Some((val, _)) => Gap::Finite(val),
            None => Gap::Infinite,
        }),
        None => {
            let (values, _) = linalg::eigh_real(&rm)?;
            Ok(Gap::Finite(values[0]))
        }
    }
}

/// Minimum Rayleigh quotient over Hermitian observables.
pub fn hermitian_gap(gen: &DaviesGenerator, subspace: HermitianSubspace) -> Result<Gap> {
    let ks: Vec<usize> = match subspace {
        HermitianSubspace::V0 => vec![gen.bohr.zero],
        HermitianSubspace::All => (gen.bohr.zero..gen.bohr.len()).collect(),
    };
    let gaps = ks.par_iter().map(|&k| hermitian_block_gap(gen, k)).collect::<Result<Vec<_>>>()?;
    Ok(gaps.into_iter().fold(Gap::Infinite, Gap::min))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OmegaGap {
    pub omega: f64,
    pub dim: usize,
    pub gap: Gap,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GapTolerances {
    pub level_tol: f64,
    pub hermitian_tol: f64,
    pub zero_gap_tol: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GapResiduals {
    /// `|lambda_L - min_omega lambda_{L,omega}|`; zero by construction.
    pub min_over_omega: f64,
    /// `|lambda_L - lambda_L^H|`.
    pub hermitian_full: f64,
    /// `|lambda_{L,0} - lambda_{L,0}^H|`.
    pub hermitian_v0: f64,
    /// `|lambda_L - global deflated superoperator gap|` when `N <= 16`.
    pub global: Option<f64>,
    /// Most negative eigenvalue over all blocks, clipped at 0.
    pub psd_violation: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GapReport {
    pub lambda: Gap,
    pub lambda_0: Gap,
    pub lambda_h: Gap,
    pub lambda_0_h: Gap,
    pub per_omega: Vec<OmegaGap>,
    /// Frequency attaining `lambda`.
    pub min_omega: Option<f64>,
    pub ergodicity_suspect: bool,
    pub residuals: GapResiduals,
    pub tolerances: GapTolerances,
}

impl GapReport {
    pub const CSV_HEADER: &'static str = "lambda,lambda_0,lambda_h,lambda_0_h,min_omega,ergodicity_suspect,n_omegas";

    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{},{},{}",
            self.lambda,
            self.lambda_0,
            self.lambda_h,
            self.lambda_0_h,
            self.min_omega.map_or(String::new(), |w| w.to_string()),
            self.ergodicity_suspect,
            self.per_omega.len()
        )
    }
}

fn clamp_zero(g: Gap, suspect: &mut bool) -> Gap {
    match g {
        Gap::Finite(v) if v < ZERO_GAP_TOL => {
            *suspect = true;
            Gap::Finite(0.0)
        }
        other => other,
    }
}

fn gap_diff(a: Gap, b: Gap) -> f64 {
    match (a, b) {
        (Gap::Finite(x), Gap::Finite(y)) => (x - y).abs(),
        (Gap::Infinite, Gap::Infinite) => 0.0,
        _ => f64::INFINITY,
    }
}

pub fn spectral_gap_full(gen: &DaviesGenerator) -> Result<GapReport> {
    let solutions = (0..gen.bohr.len())
        .into_par_iter()
        .map(|k| solve_omega(gen, k))
        .collect::<Result<Vec<_>>>()?;
    let raw_min = solutions.iter().map(|s| s.gap).fold(Gap::Infinite, Gap::min);
    let min_k = solutions
        .iter()
        .filter(|s| s.gap.is_finite())
        .min_by(|a, b| a.gap.value().total_cmp(&b.gap.value()))
        .map(|s| s.k);
    let psd_violation = solutions.iter().map(|s| (-s.min_eigenvalue).max(0.0)).fold(0.0, f64::max);

    let lambda_h_raw = hermitian_gap(gen, HermitianSubspace::All)?;
    let lambda_0_h_raw = hermitian_gap(gen, HermitianSubspace::V0)?;
    let lambda_0_raw = solutions[gen.bohr.zero].gap;
    let global = if gen.dim() <= GLOBAL_CHECK_MAX_DIM {
        Some(gap_diff(global_gap(gen)?, raw_min))
    } else {
        None
    };

    let mut suspect = false;
    let per_omega = solutions
        .iter()
        .map(|s| OmegaGap {
            omega: gen.bohr.omegas[s.k],
            dim: s.basis.len(),
            gap: clamp_zero(s.gap, &mut false),
        })
        .collect();
    let lambda = clamp_zero(raw_min, &mut suspect);
    let lambda_0 = clamp_zero(lambda_0_raw, &mut suspect);
    Ok(GapReport {
        lambda,
        lambda_0,
        lambda_h: clamp_zero(lambda_h_raw, &mut false),
        lambda_0_h: clamp_zero(lambda_0_h_raw, &mut false),
        per_omega,
        min_omega: min_k.map(|k| gen.bohr.omegas[k]),
        ergodicity_suspect: suspect,
        residuals: GapResiduals {
            min_over_omega: 0.0,
            hermitian_full: gap_diff(raw_min, lambda_h_raw),
            hermitian_v0: gap_diff(lambda_0_raw, lambda_0_h_raw),
            global,
            psd_violation,
        },
        tolerances: GapTolerances {
            level_tol: gen.levels.tol,
            hermitian_tol: HERMITIAN_TOL,
            zero_gap_tol: ZERO_GAP_TOL,
        },
    })
}
