//! The Davies generator in the Heisenberg picture, the KMS geometry it is
//! self-adjoint in, and the hermitianization pair used by the gap comparison.
//!
//! All heavy lifting happens in the eigenbasis of `H`, where `rho` is
//! diagonal and `S(omega)` is `V^dag S V` masked to the level pairs at
//! `omega`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{self, cr, CMat, C64};
use crate::operators::{parse_dense, DenseMatrixSpec, HermitianOperator, PauliString};
use crate::spectral::{self, BohrData, GibbsState, Levels, SpectralData};

/// Nearest-entry tolerance for tabulated rates.
pub const TABLE_TOL: f64 = 1e-9;
/// Relative tolerance of the detailed-balance check.
pub const DETAILED_BALANCE_TOL: f64 = 1e-10;
/// Absolute tolerance when matching `S^dag` against the jump set.
pub const ADJOINT_MATCH_TOL: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum RateKind {
    /// `1 / (1 + e^{beta omega})`.
    Glauber,
    /// `min(1, e^{-beta omega})`.
    Metropolis,
    /// Tabulated `(omega, G(omega))` pairs.
    Table { table: Vec<(f64, f64)> },
}

#[derive(Debug, Clone, PartialEq)]
pub struct RateFunction {
    pub kind: RateKind,
    pub beta: f64,
}

impl RateFunction {
    pub fn glauber(beta: f64) -> Self {
        Self { kind: RateKind::Glauber, beta }
    }

    pub fn metropolis(beta: f64) -> Self {
        Self { kind: RateKind::Metropolis, beta }
    }

    pub fn table(beta: f64, table: Vec<(f64, f64)>) -> Self {
        Self { kind: RateKind::Table { table }, beta }
    }

    /// Closed-form `sup |G|` when one exists.
    pub fn closed_form_sup(&self) -> Option<f64> {
        match self.kind {
            RateKind::Glauber | RateKind::Metropolis => Some(1.0),
            RateKind::Table { .. } => None,
        }
    }
}

pub fn transition_rate(rf: &RateFunction, omega: f64) -> Result<f64> {
    if !omega.is_finite() {
        return Err(Error::Validation(format!("non-finite frequency {omega}")));
    }
    let x = rf.beta * omega;
    match &rf.kind {
        RateKind::Glauber => Ok(if x > 0.0 {
            let e = (-x).exp();
            e / (1.0 + e)
        } else {
            1.0 / (1.0 + x.exp())
        }),
        RateKind::Metropolis => Ok((-x).exp().min(1.0)),
        RateKind::Table { table } => table
            .iter()
            .map(|&(w, g)| ((w - omega).abs(), g))
            .min_by(|a, b| a.0.total_cmp(&b.0))
            .filter(|&(d, _)| d <= TABLE_TOL)
            .map(|(_, g)| g)
            .ok_or(Error::UnknownFrequency { omega, tolerance: TABLE_TOL }),
    }
}

/// A jump operator given either as a site label (`"X1"`, `"X1Z2"`) or a dense matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum JumpSpec {
    Label(String),
    Dense(DenseMatrixSpec),
}

impl JumpSpec {
    pub fn realize(&self, n: usize, dim: usize) -> Result<CMat> {
        let m = match self {
            JumpSpec::Label(label) => PauliString::from_site_label(label, n)?.matrix(),
            JumpSpec::Dense(spec) => parse_dense(spec)?,
        };
        if m.nrows() != dim {
            return Err(Error::Dimension { expected: dim, actual: m.nrows() });
        }
        if !linalg::is_finite(&m) {
            return Err(Error::Validation("jump operator has non-finite entries".into()));
        }
        Ok(m)
    }
}

/// `{X_i, Y_i, Z_i : i in 1..=n}`.
pub fn default_jump_labels(n: usize) -> Vec<JumpSpec> {
    (1..=n)
        .flat_map(|i| ["X", "Y", "Z"].map(|p| JumpSpec::Label(format!("{p}{i}"))))
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GeneratorSpec {
    pub beta: f64,
    #[serde(default = "default_rate")]
    pub rate: RateKind,
    /// Defaults to every single-site Pauli.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub jumps: Option<Vec<JumpSpec>>,
}

fn default_rate() -> RateKind {
    RateKind::Glauber
}

impl GeneratorSpec {
    pub fn jump_matrices(&self, h: &HermitianOperator) -> Result<Vec<CMat>> {
        let dim = h.dim();
        let n = h.n_qubits().unwrap_or(0);
        let specs = match &self.jumps {
            Some(j) => j.clone(),
            None if n > 0 => default_jump_labels(n),
            None => {
                return Err(Error::Validation(
                    "default jumps need a qubit Hamiltonian; give \"jumps\" explicitly".into(),
                ))
            }
        };
        specs.iter().map(|s| s.realize(n, dim)).collect()
    }

    pub fn build(&self, h: &HermitianOperator) -> Result<DaviesGenerator> {
        let rate = RateFunction { kind: self.rate.clone(), beta: self.beta };
        DaviesGenerator::new(h, rate, self.jump_matrices(h)?)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GeneratorOptions {
    /// Level clustering and Bohr dedup tolerance; `1e-9 * range` when `None`.
    pub level_tol: Option<f64>,
    /// Reject rate functions that break detailed balance on the Bohr spectrum.
    pub check_detailed_balance: bool,
}

impl Default for GeneratorOptions {
    fn default() -> Self {
        Self { level_tol: None, check_detailed_balance: true }
    }
}

/// Nonzero entry `(row, col, value)` of `V^dag S V`.
type Entry = (usize, usize, C64);

#[derive(Debug, Clone)]
struct JumpCache {
    /// `V^dag S V`.
    eig: CMat,
    /// Entries grouped by frequency index; group `k` is `entries[offsets[k]..offsets[k + 1]]`.
    entries: Vec<Entry>,
    offsets: Vec<usize>,
}

impl JumpCache {
    fn group(&self, k: usize) -> &[Entry] {
        &self.entries[self.offsets[k]..self.offsets[k + 1]]
    }
}

/// Which formula [`DaviesGenerator::dirichlet_form`] evaluates.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DirichletMethod {
    /// `-<L(f), f>_rho`.
    Definitional,
    /// `1/2 sum G~(omega) ||[S(omega), f]||_rho^2` with dense projector components.
    Divergence,
}

#[derive(Debug, Clone)]
pub struct DaviesGenerator {
    pub hamiltonian: HermitianOperator,
    pub spectral: SpectralData,
    pub levels: Levels,
    pub bohr: BohrData,
    pub gibbs: GibbsState,
    pub rate: RateFunction,
    /// Jump set closed under the adjoint.
    pub jumps: Vec<CMat>,
    /// `G(omega_k)` for every Bohr frequency.
    pub g: Vec<f64>,
    /// `G(omega_k) e^{beta omega_k / 2}`.
    pub g_tilde: Vec<f64>,
    /// Frequency index of every eigenvector pair `(i, j)` at `i * N + j`.
    freq: Vec<usize>,
    caches: Vec<JumpCache>,
    /// `sum_{S, omega} G(omega) S(omega)^dag S(omega)` in the eigenbasis.
    k_eig: CMat,
}

/// Appends `S^dag` for every `S` whose adjoint is not already present.
pub fn symmetrize_jumps(jumps: Vec<CMat>) -> Vec<CMat> {
    let mut out = jumps;
    let original = out.len();
    for i in 0..original {
        let adj = out[i].adjoint();
        if !out.iter().any(|s| linalg::max_diff(s, &adj) <= ADJOINT_MATCH_TOL) {
            out.push(adj);
        }
    }
    out
}

impl DaviesGenerator {
    pub fn new(h: &HermitianOperator, rate: RateFunction, jumps: Vec<CMat>) -> Result<Self> {
        Self::with_options(h, rate, jumps, GeneratorOptions::default())
    }

    pub fn with_options(
        h: &HermitianOperator,
        rate: RateFunction,
        jumps: Vec<CMat>,
        options: GeneratorOptions,
    ) -> Result<Self> {
        if !rate.beta.is_finite() {
            return Err(Error::Validation(format!("non-finite beta {}", rate.beta)));
        }
        let dim = h.dim();
        for s in &jumps {
            if s.nrows() != dim || s.ncols() != dim {
                return Err(Error::Dimension { expected: dim, actual: s.nrows() });
            }
        }
        let spectral = spectral::eigendecompose(h)?;
        let tol = options.level_tol.unwrap_or_else(|| spectral::default_value_tol(&spectral.values));
        let levels = spectral::cluster_levels(&spectral, tol);
        Self::from_levels(h.clone(), spectral, levels, rate, jumps, options)
    }

    /// Builds on a caller-chosen eigenbasis refinement of `levels`.
    pub fn from_levels(
        hamiltonian: HermitianOperator,
        spectral: SpectralData,
        levels: Levels,
        rate: RateFunction,
        jumps: Vec<CMat>,
        options: GeneratorOptions,
    ) -> Result<Self> {
        let bohr = spectral::bohr_frequencies(&levels, levels.tol);
        let gibbs = spectral::gibbs_state(&levels, rate.beta);
        let beta = rate.beta;

        let mut g = Vec::with_capacity(bohr.len());
        for &w in &bohr.omegas {
            let value = transition_rate(&rate, w)?;
            if !(value >= 0.0) || !value.is_finite() {
                return Err(Error::Validation(format!("rate G({w}) = {value} is not a finite nonnegative number")));
            }
            g.push(value);
        }
        if options.check_detailed_balance {
            for k in 0..bohr.len() {
                let w = bohr.omegas[k];
                let lhs = g[k];
                let rhs = g[bohr.negate(k)] * (-beta * w).exp();
                let scale = lhs.abs().max(rhs.abs());
                let deviation = (lhs - rhs).abs();
                if deviation > DETAILED_BALANCE_TOL * scale {
                    return Err(Error::DetailedBalance { omega: w, deviation });
                }
            }
        }
        let g_tilde = bohr
            .omegas
            .iter()
            .zip(&g)
            .map(|(&w, &gv)| gv * (beta * w / 2.0).exp())
            .collect();

        let n = levels.dim();
        let lv = &levels.level_of;
        let freq: Vec<usize> = (0..n * n).map(|ij| bohr.index_of_pair(lv[ij / n], lv[ij % n])).collect();

        let jumps = symmetrize_jumps(jumps);
        let mut caches = Vec::with_capacity(jumps.len());
        let mut k_eig = CMat::zeros(n, n);
        for s in &jumps {
            let eig = levels.to_eigenbasis(s);
            let mut entries: Vec<Entry> = Vec::with_capacity(n * n);
            for a in 0..n {
                for c in 0..n {
                    let v = eig[(a, c)];
                    if v != cr(0.0) {
                        entries.push((a, c, v));
                    }
                }
            }
            entries.sort_by_key(|&(a, c, _)| (freq[a * n + c], a, c));
            let mut offsets = vec![0; bohr.len() + 1];
            for &(a, c, _) in &entries {
                offsets[freq[a * n + c] + 1] += 1;
            }
            for k in 0..bohr.len() {
                offsets[k + 1] += offsets[k];
            }
            // K~_{cd} = sum_a G(nu) conj(s_ac) s_ad over a with freq(a,c) = freq(a,d).
            for c in 0..n {
                for d in 0..n {
                    let mut acc = cr(0.0);
                    for a in 0..n {
                        let k = freq[a * n + c];
                        if k == freq[a * n + d] {
                            acc += eig[(a, c)].conj() * eig[(a, d)] * g[k];
                        }
                    }
                    k_eig[(c, d)] += acc;
                }
            }
            caches.push(JumpCache { eig, entries, offsets });
        }

        Ok(Self {
            hamiltonian,
            spectral,
            levels,
            bohr,
            gibbs,
            rate,
            jumps,
            g,
            g_tilde,
            freq,
            caches,
            k_eig,
        })
    }

    pub fn dim(&self) -> usize {
        self.levels.dim()
    }

    pub fn beta(&self) -> f64 {
        self.rate.beta
    }

    /// Frequency index of the eigenvector pair `(i, j)`.
    pub fn freq_index(&self, i: usize, j: usize) -> usize {
        self.freq[i * self.dim() + j]
    }

    /// `V^dag S V` for jump `s`.
    pub fn jump_eigenbasis(&self, s: usize) -> &CMat {
        &self.caches[s].eig
    }

    /// `sum G(omega) S(omega)^dag S(omega)` in the eigenbasis.
    pub fn k_eigenbasis(&self) -> &CMat {
        &self.k_eig
    }

    /// `max(1, ||f||_F^2, sum_S ||S||_F^2)`.
    pub fn scale(&self, f: &CMat) -> f64 {
        let jumps: f64 = self.jumps.iter().map(linalg::frobenius_sq).sum();
        1f64.max(linalg::frobenius_sq(f)).max(jumps)
    }

    /// `max_omega |G(omega)|` over the Bohr frequencies.
    pub fn g_sup(&self) -> f64 {
        self.g.iter().fold(0.0_f64, |acc, g| acc.max(g.abs()))
    }

    /// `|| sum_S S S^dag ||`.
    pub fn jump_norm(&self) -> Result<f64> {
        let mut sum = linalg::zeros(self.dim());
        for s in &self.jumps {
            sum += s * s.adjoint();
        }
        linalg::hermitian_norm(&sum)
    }

    /// `L(f)` with `f` and the result in the eigenbasis of `H`.
    pub fn apply_eigenbasis(&self, f: &CMat) -> CMat {
        let mut out = (&self.k_eig * f + f * &self.k_eig) * cr(-0.5);
        for cache in &self.caches {
            for k in 0..self.bohr.len() {
                let group = cache.group(k);
                if group.is_empty() || self.g[k] == 0.0 {
                    continue;
                }
                let gk = self.g[k];
                for &(a, c, s_ac) in group {
                    let w = s_ac.conj() * gk;
                    for &(b, d, s_bd) in group {
                        out[(c, d)] += w * f[(a, b)] * s_bd;
                    }
                }
            }
        }
        out
    }

    pub fn apply(&self, f: &CMat) -> Result<CMat> {
        self.check_dim(f)?;
        let out = self.apply_eigenbasis(&self.levels.to_eigenbasis(f));
        Ok(self.levels.from_eigenbasis(&out))
    }

    fn check_dim(&self, f: &CMat) -> Result<()> {
        if f.nrows() != self.dim() || f.ncols() != self.dim() {
            return Err(Error::Dimension { expected: self.dim(), actual: f.nrows() });
        }
        Ok(())
    }

    pub fn kms_inner(&self, a: &CMat, b: &CMat) -> C64 {
        kms_inner(&self.gibbs, a, b)
    }

    pub fn variance(&self, f: &CMat) -> f64 {
        variance(&self.gibbs, f)
    }

    pub fn dirichlet_form(&self, f: &CMat, method: DirichletMethod) -> Result<f64> {
        self.check_dim(f)?;
        match method {
            DirichletMethod::Definitional => Ok(-self.kms_inner(&self.apply(f)?, f).re),
            DirichletMethod::Divergence => {
                let mut total = 0.0;
                for s in &self.jumps {
                    for k in 0..self.bohr.len() {
                        if self.g_tilde[k] == 0.0 {
                            continue;
                        }
                        let sw = jump_component(s, k, &self.levels, &self.bohr);
                        let comm = linalg::commutator(&sw, f);
                        total += self.g_tilde[k] * kms_norm_sq(&self.gibbs, &comm);
                    }
                }
                Ok(0.5 * total)
            }
        }
    }

    /// `-<L(f), f>_rho` as a complex number; the imaginary part is rounding residue.
    pub fn dirichlet_complex(&self, f: &CMat) -> Result<C64> {
        Ok(-self.kms_inner(&self.apply(f)?, f))
    }

    /// `(g, h) = (e^{beta omega/4} (f f^dag)^{1/2}, e^{-beta omega/4} (f^dag f)^{1/2})`.
    pub fn hermitianize_pair(&self, f: &CMat, omega: f64) -> Result<(CMat, CMat)> {
        self.check_dim(f)?;
        let k = self.bohr.index_of(omega).ok_or(Error::NotBohrFrequency(omega))?;
        let distance = spectral::distance_from_component(f, k, &self.levels, &self.bohr);
        if distance > 1e-9 * linalg::max_abs(f).max(1.0) {
            return Err(Error::NotInSubspace { omega, distance });
        }
        let w = self.bohr.omegas[k];
        let beta = self.beta();
        let g = linalg::psd_sqrt(&(f * f.adjoint()))? * cr((beta * w / 4.0).exp());
        let h = linalg::psd_sqrt(&(f.adjoint() * f))? * cr((-beta * w / 4.0).exp());
        Ok((g, h))
    }

    /// `<i[H, f], f>_rho`, purely imaginary for every `f`.
    pub fn coherent_term(&self, f: &CMat) -> C64 {
        let comm = linalg::commutator(self.hamiltonian.matrix(), f);
        self.kms_inner(&comm, f) * linalg::c(0.0, 1.0)
    }

    /// `|<[H, f], f>_rho|`, which vanishes for Hermitian `f`.
    pub fn coherent_term_check(&self, f: &CMat) -> f64 {
        self.coherent_term(f).norm()
    }
}

/// `S(omega_k) = sum Pi_{lambda_1} S Pi_{lambda_2}` built from dense projectors.
pub fn jump_component(s: &CMat, k: usize, levels: &Levels, bohr: &BohrData) -> CMat {
    let mut out = CMat::zeros(s.nrows(), s.ncols());
    for &(a, b) in &bohr.pairs[k] {
        out += levels.projector(a) * s * levels.projector(b);
    }
    out
}

/// `S(omega)` for a frequency value; zero when `omega` is not a Bohr frequency.
pub fn jump_component_at(s: &CMat, omega: f64, levels: &Levels, bohr: &BohrData) -> CMat {
    match bohr.index_of(omega) {
        Some(k) => jump_component(s, k, levels, bohr),
        None => CMat::zeros(s.nrows(), s.ncols()),
    }
}

/// `tr(rho^{1/2} A rho^{1/2} B^dag)`.
pub fn kms_inner(rho: &GibbsState, a: &CMat, b: &CMat) -> C64 {
    let x = &rho.rho_sqrt * a * &rho.rho_sqrt;
    x.iter().zip(b.iter()).map(|(x, y)| x * y.conj()).sum()
}

/// `||rho^{1/4} A rho^{1/4}||_F^2`.
pub fn kms_norm_sq(rho: &GibbsState, a: &CMat) -> f64 {
    linalg::frobenius_sq(&(&rho.rho_quarter * a * &rho.rho_quarter))
}

/// `<f, f>_rho - |tr(rho f)|^2`.
pub fn variance(rho: &GibbsState, f: &CMat) -> f64 {
    let mean = linalg::trace(&(&rho.rho * f));
    kms_inner(rho, f, f).re - mean.norm_sqr()
}

/// `tr(A g A^dag g) + tr(B h B^dag h) - tr(A f B^dag f^dag) - tr(B f^dag A^dag f)`
/// with `g = (f f^dag)^{1/2}`, `h = (f^dag f)^{1/2}`.
pub fn trace_inequality_residual(a: &CMat, b: &CMat, f: &CMat) -> Result<f64> {
    let n = f.nrows();
    for m in [a, b] {
        if m.nrows() != n || m.ncols() != n {
            return Err(Error::Dimension { expected: n, actual: m.nrows() });
        }
    }
    let g = linalg::psd_sqrt(&(f * f.adjoint()))?;
    let h = linalg::psd_sqrt(&(f.adjoint() * f))?;
    let t1 = linalg::trace(&(a * &g * a.adjoint() * &g));
    let t2 = linalg::trace(&(b * &h * b.adjoint() * &h));
    let t3 = linalg::trace(&(a * f * b.adjoint() * f.adjoint()));
    let t4 = linalg::trace(&(b * f.adjoint() * a.adjoint() * f));
    Ok((t1 + t2 - t3 - t4).re)
}

/// `max(1, ||f||_F^2, ||A||_F^2 + ||B||_F^2)`.
pub fn trace_inequality_scale(a: &CMat, b: &CMat, f: &CMat) -> f64 {
    1f64.max(linalg::frobenius_sq(f)).max(linalg::frobenius_sq(a) + linalg::frobenius_sq(b))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::{c, max_diff};
    use crate::operators::{build_pauli_hamiltonian, Pauli};
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn pauli(p: Pauli) -> CMat {
        p.matrix()
    }

    fn diag_h(values: &[f64]) -> HermitianOperator {
        let n = values.len();
        HermitianOperator::new(CMat::from_fn(n, n, |r, k| if r == k { cr(values[r]) } else { cr(0.0) }))
            .unwrap()
    }

    fn random_instance(seed: u64, n: usize) -> DaviesGenerator {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let dim = 1 << n;
        let h = HermitianOperator::new(linalg::random_hermitian(dim, &mut rng)).unwrap();
        let beta = rng.gen::<f64>() * 2.0;
        let rate = if rng.gen::<bool>() { RateFunction::glauber(beta) } else { RateFunction::metropolis(beta) };
        let jumps = (0..2).map(|_| linalg::random_complex(dim, &mut rng)).collect();
        DaviesGenerator::new(&h, rate, jumps).unwrap()
    }

    #[test]
    fn rate_examples() {
        assert_eq!(transition_rate(&RateFunction::glauber(1.3), 0.0).unwrap(), 0.5);
        assert_eq!(transition_rate(&RateFunction::metropolis(1.0), -2.0).unwrap(), 1.0);
        let beta = 1.1;
        for rf in [RateFunction::glauber(beta), RateFunction::metropolis(beta)] {
            for w in [0.3, -0.3, 1.7, -1.7] {
                let lhs = transition_rate(&rf, w).unwrap();
                let rhs = transition_rate(&rf, -w).unwrap() * (-beta * w).exp();
                assert!((lhs - rhs).abs() < 1e-15);
            }
        }
        let t = RateFunction::table(1.0, vec![(0.0, 0.5), (2.0, 0.1)]);
        assert_eq!(transition_rate(&t, 2.0 + 1e-12).unwrap(), 0.1);
        assert!(matches!(transition_rate(&t, 1.0), Err(Error::UnknownFrequency { .. })));
    }

    #[test]
    fn glauber_does_not_overflow() {
        let rf = RateFunction::glauber(1e3);
        assert_eq!(transition_rate(&rf, 10.0).unwrap(), 0.0);
        assert_eq!(transition_rate(&rf, -10.0).unwrap(), 1.0);
    }

    #[test]
    fn z_with_x_components() {
        let h = diag_h(&[1.0, -1.0]);
        let gen = DaviesGenerator::new(&h, RateFunction::glauber(0.4), vec![pauli(Pauli::X)]).unwrap();
        let x = pauli(Pauli::X);
        let mut up = linalg::zeros(2);
        up[(0, 1)] = cr(1.0);
        assert!(max_diff(&jump_component_at(&x, 2.0, &gen.levels, &gen.bohr), &up) < 1e-15);
        assert!(max_diff(&jump_component_at(&x, -2.0, &gen.levels, &gen.bohr), &up.adjoint()) < 1e-15);
        assert!(linalg::max_abs(&jump_component_at(&x, 0.0, &gen.levels, &gen.bohr)) < 1e-15);
        let id = linalg::identity(2);
        assert!(max_diff(&jump_component_at(&id, 0.0, &gen.levels, &gen.bohr), &id) < 1e-15);
        assert!(linalg::max_abs(&jump_component_at(&id, 2.0, &gen.levels, &gen.bohr)) < 1e-15);
    }

    #[test]
    fn components_sum_and_adjoint() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let h = HermitianOperator::new(linalg::random_hermitian(8, &mut rng)).unwrap();
        let s = linalg::random_complex(8, &mut rng);
        let gen = DaviesGenerator::new(&h, RateFunction::glauber(1.0), vec![s.clone()]).unwrap();
        let mut sum = linalg::zeros(8);
        for k in 0..gen.bohr.len() {
            let sk = jump_component(&s, k, &gen.levels, &gen.bohr);
            let adj_neg = jump_component(&s.adjoint(), gen.bohr.negate(k), &gen.levels, &gen.bohr);
            assert!(max_diff(&sk.adjoint(), &adj_neg) <= 1e-11);
            sum += sk;
        }
        assert!(max_diff(&sum, &s) <= 1e-11);
    }

    #[test]
    fn jump_set_is_closed() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let a = linalg::random_complex(4, &mut rng);
        let out = symmetrize_jumps(vec![a.clone(), pauli(Pauli::X).kronecker(&pauli(Pauli::I))]);
        assert_eq!(out.len(), 3);
        for s in &out {
            assert!(out.iter().any(|t| max_diff(t, &s.adjoint()) <= ADJOINT_MATCH_TOL));
        }
    }

    #[test]
    fn identity_is_stationary() {
        for seed in 0..5 {
            let gen = random_instance(seed, 2);
            let out = gen.apply(&linalg::identity(4)).unwrap();
            assert!(linalg::max_abs(&out) <= 1e-10);
        }
    }

    #[test]
    fn single_level_pauli_algebra() {
        let h = HermitianOperator::zeros(2);
        for beta in [0.0, 0.7, 3.0] {
            let gen = DaviesGenerator::new(&h, RateFunction::glauber(beta), vec![pauli(Pauli::X)]).unwrap();
            let z = pauli(Pauli::Z);
            let out = gen.apply(&z).unwrap();
            assert!(max_diff(&out, &(&z * cr(-2.0 * 0.5))) < 1e-14);
        }
    }

    #[test]
    fn matches_dense_definition() {
        // Oracle: the defining sum with dense projector components.
        let gen = random_instance(17, 2);
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        let f = linalg::random_complex(4, &mut rng);
        let mut oracle = linalg::zeros(4);
        for s in &gen.jumps {
            for k in 0..gen.bohr.len() {
                let sw = jump_component(s, k, &gen.levels, &gen.bohr);
                let sds = sw.adjoint() * &sw;
                oracle += (sw.adjoint() * &f * &sw - (&sds * &f + &f * &sds) * cr(0.5)) * cr(gen.g[k]);
            }
        }
        assert!(max_diff(&gen.apply(&f).unwrap(), &oracle) <= 1e-12);
    }

    #[test]
    fn invariance_of_components() {
        let gen = random_instance(5, 2);
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let f = linalg::random_complex(4, &mut rng);
        for (k, part) in spectral::decompose(&f, &gen.levels, &gen.bohr).iter().enumerate() {
            let out = gen.apply(part).unwrap();
            assert!(spectral::distance_from_component(&out, k, &gen.levels, &gen.bohr) <= 1e-10);
        }
    }

    #[test]
    fn kms_examples() {
        let gen = random_instance(8, 2);
        let id = linalg::identity(4);
        assert!((gen.kms_inner(&id, &id) - cr(1.0)).norm() < 1e-13);
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let f = linalg::random_complex(4, &mut rng);
        let tr = linalg::trace(&(&gen.gibbs.rho * &f));
        assert!((gen.kms_inner(&f, &id) - tr).norm() < 1e-13);
        let alt = kms_norm_sq(&gen.gibbs, &f);
        assert!((gen.kms_inner(&f, &f).re - alt).abs() <= 1e-11);
    }

    #[test]
    fn variance_examples() {
        let gen = random_instance(2, 2);
        assert!(gen.variance(&(linalg::identity(4) * c(2.0, -1.0))).abs() < 1e-13);

        let h = HermitianOperator::zeros(4);
        let flat = DaviesGenerator::new(&h, RateFunction::glauber(0.0), vec![linalg::identity(4)]).unwrap();
        let f = build_pauli_hamiltonian(&[(0.6, "XZ".parse().unwrap()), (-1.2, "YI".parse().unwrap())], 2)
            .unwrap()
            .into_matrix();
        assert!((flat.variance(&f) - linalg::frobenius_sq(&f) / 4.0).abs() < 1e-13);

        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let g = linalg::random_complex(4, &mut rng);
        assert!((gen.variance(&g) - gen.variance(&g.adjoint())).abs() < 1e-12);
        let mean = linalg::trace(&(&gen.gibbs.rho * &g));
        let centred = &g - linalg::identity(4) * mean;
        assert!((gen.variance(&g) - gen.kms_inner(&centred, &centred).re).abs() < 1e-12);
    }

    #[test]
    fn dirichlet_examples() {
        let gen = random_instance(21, 3);
        let id = linalg::identity(8);
        for m in [DirichletMethod::Definitional, DirichletMethod::Divergence] {
            assert!(gen.dirichlet_form(&id, m).unwrap().abs() < 1e-10);
        }
        let mut rng = ChaCha8Rng::seed_from_u64(22);
        let herm = linalg::random_hermitian(8, &mut rng);
        assert!(gen.dirichlet_complex(&herm).unwrap().im.abs() <= 1e-12 * gen.scale(&herm));
        let f = linalg::random_complex(8, &mut rng);
        let e_def = gen.dirichlet_form(&f, DirichletMethod::Definitional).unwrap();
        let e_div = gen.dirichlet_form(&f, DirichletMethod::Divergence).unwrap();
        assert!((e_def - e_div).abs() <= 1e-9 * e_def.max(1.0));
        let e_adj = gen.dirichlet_form(&f.adjoint(), DirichletMethod::Definitional).unwrap();
        assert!((e_def - e_adj).abs() <= 1e-10 * gen.scale(&f));
    }

    #[test]
    fn decomposition_is_additive() {
        let gen = random_instance(31, 2);
        let mut rng = ChaCha8Rng::seed_from_u64(32);
        let f = linalg::random_complex(4, &mut rng);
        let parts = spectral::decompose(&f, &gen.levels, &gen.bohr);
        let e: f64 = parts.iter().map(|p| gen.dirichlet_form(p, DirichletMethod::Definitional).unwrap()).sum();
        let v: f64 = parts.iter().map(|p| gen.variance(p)).sum();
        assert!((e - gen.dirichlet_form(&f, DirichletMethod::Definitional).unwrap()).abs() <= 1e-9);
        assert!((v - gen.variance(&f)).abs() <= 1e-9);
    }

    #[test]
    fn commutator_four_trace_expansion() {
        // ||[S(w), phi]||^2_rho = e^{-bw/2} tr(S^dag S X) + e^{bw/2} tr(Y S S^dag) - 2 Re tr(r S phi r S^dag phi^dag)
        // with r = rho^{1/2}, X = r phi r phi^dag, Y = phi^dag r phi r.
        let gen = random_instance(41, 2);
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let phi = linalg::random_complex(4, &mut rng);
        let r = &gen.gibbs.rho_sqrt;
        let x = r * &phi * r * phi.adjoint();
        let y = phi.adjoint() * r * &phi * r;
        for s in &gen.jumps {
            for k in 0..gen.bohr.len() {
                let w = gen.beta() * gen.bohr.omegas[k];
                let sw = jump_component(s, k, &gen.levels, &gen.bohr);
                let lhs = kms_norm_sq(&gen.gibbs, &linalg::commutator(&sw, &phi));
                let t1 = linalg::trace(&(sw.adjoint() * &sw * &x)).re * (-w / 2.0).exp();
                let t2 = linalg::trace(&(&y * &sw * sw.adjoint())).re * (w / 2.0).exp();
                let cross = linalg::trace(&(r * &sw * &phi * r * sw.adjoint() * phi.adjoint())).re;
                assert!((lhs - (t1 + t2 - 2.0 * cross)).abs() <= 1e-9);
            }
        }
    }

    #[test]
    fn hermitianize_rank_one() {
        let beta = 0.9;
        let h = diag_h(&[1.0, -1.0]);
        let gen = DaviesGenerator::new(&h, RateFunction::glauber(beta), vec![pauli(Pauli::X)]).unwrap();
        let mut f = linalg::zeros(2);
        f[(0, 1)] = cr(1.0);
        let (g, hh) = gen.hermitianize_pair(&f, 2.0).unwrap();
        let mut eg = linalg::zeros(2);
        eg[(0, 0)] = cr((beta * 2.0 / 4.0).exp());
        let mut eh = linalg::zeros(2);
        eh[(1, 1)] = cr((-beta * 2.0 / 4.0).exp());
        assert!(max_diff(&g, &eg) < 1e-14);
        assert!(max_diff(&hh, &eh) < 1e-14);
        assert!(matches!(gen.hermitianize_pair(&f, -2.0), Err(Error::NotInSubspace { .. })));
    }

    #[test]
    fn hermitianize_psd_fixed_point() {
        let h = diag_h(&[1.0, -1.0, 0.3]);
        let gen = DaviesGenerator::new(&h, RateFunction::glauber(1.0), vec![linalg::identity(3)]).unwrap();
        let f = diag_h(&[0.5, 2.0, 0.0]).into_matrix();
        let (g, hh) = gen.hermitianize_pair(&f, 0.0).unwrap();
        assert!(max_diff(&g, &f) < 1e-14);
        assert!(max_diff(&hh, &f) < 1e-14);
    }

    #[test]
    fn trace_inequality_trivial() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let a = linalg::random_complex(4, &mut rng);
        let b = linalg::random_complex(4, &mut rng);
        assert_eq!(trace_inequality_residual(&a, &b, &linalg::zeros(4)).unwrap(), 0.0);
        let f = linalg::random_complex(4, &mut rng);
        let id = linalg::identity(4);
        assert!(trace_inequality_residual(&id, &id, &f).unwrap().abs() <= 1e-12);
    }

    /// `sum_ij s_i s_j |u_i^dag A u_j - v_i^dag B v_j|^2` from the SVD `f = sum s_i u_i v_i^dag`.
    fn svd_residual(a: &CMat, b: &CMat, f: &CMat) -> f64 {
        let svd = f.clone().svd(true, true);
        let u = svd.u.unwrap();
        let v = svd.v_t.unwrap().adjoint();
        let s = svd.singular_values;
        let mut total = 0.0;
        for i in 0..s.len() {
            for j in 0..s.len() {
                let x = (u.column(i).adjoint() * a * u.column(j))[(0, 0)];
                let y = (v.column(i).adjoint() * b * v.column(j))[(0, 0)];
                total += s[i] * s[j] * (x - y).norm_sqr();
            }
        }
        total
    }

    #[test]
    fn trace_inequality_matches_svd_form() {
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        for dim in [2, 4, 8] {
            for _ in 0..10 {
                let a = linalg::random_complex(dim, &mut rng);
                let b = linalg::random_complex(dim, &mut rng);
                let f = linalg::random_complex(dim, &mut rng);
                let direct = trace_inequality_residual(&a, &b, &f).unwrap();
                let oracle = svd_residual(&a, &b, &f);
                assert!((direct - oracle).abs() <= 1e-9 * trace_inequality_scale(&a, &b, &f));
                assert!(direct >= -1e-10 * trace_inequality_scale(&a, &b, &f));
            }
        }
    }

    #[test]
    fn coherent_examples() {
        let gen = random_instance(50, 3);
        assert!(gen.coherent_term_check(&linalg::identity(8)) < 1e-14);
        let commuting = gen.gibbs.rho.clone();
        assert!(gen.coherent_term_check(&commuting) <= 1e-10);
        let mut rng = ChaCha8Rng::seed_from_u64(51);
        let f = linalg::random_hermitian(8, &mut rng);
        assert!(gen.coherent_term_check(&f) <= 1e-10 * gen.scale(&f));
        let g = linalg::random_complex(8, &mut rng);
        assert!(gen.coherent_term(&g).re.abs() <= 1e-10 * gen.scale(&g));
    }

    #[test]
    fn broken_table_is_rejected() {
        let h = diag_h(&[1.0, -1.0]);
        let table = vec![(-2.0, 1.0), (0.0, 0.5), (2.0, 1.0)];
        let rate = RateFunction::table(1.0, table);
        let err = DaviesGenerator::new(&h, rate.clone(), vec![pauli(Pauli::X)]).unwrap_err();
        assert!(matches!(err, Error::DetailedBalance { .. }));
        let opts = GeneratorOptions { check_detailed_balance: false, ..Default::default() };
        assert!(DaviesGenerator::with_options(&h, rate, vec![pauli(Pauli::X)], opts).is_ok());
    }

    #[test]
    fn generator_spec_json() {
        let json = r#"{"beta":0.5,"rate":{"kind":"table","table":[[0.0,0.5]]},"jumps":["X1",[[[0,0],[1,0]],[[1,0],[0,0]]]]}"#;
        let spec: GeneratorSpec = serde_json::from_str(json).unwrap();
        let h = HermitianOperator::zeros(2);
        let gen = spec.build(&h).unwrap();
        assert_eq!(gen.jumps.len(), 2);
        let bad = r#"{"beta":0.5,"rate":{"kind":"glauber"},"extra":1}"#;
        assert!(serde_json::from_str::<GeneratorSpec>(bad).is_err());
        let spec: GeneratorSpec = serde_json::from_str(r#"{"beta":1.0}"#).unwrap();
        assert_eq!(spec.jump_matrices(&HermitianOperator::zeros(4)).unwrap().len(), 6);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]

        #[test]
        fn kms_self_adjoint(seed in 0u64..10_000) {
            let gen = random_instance(seed, 2);
            let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xabc);
            let f = linalg::random_complex(4, &mut rng);
            let g = linalg::random_complex(4, &mut rng);
            let lhs = gen.kms_inner(&gen.apply(&f).unwrap(), &g);
            let rhs = gen.kms_inner(&f, &gen.apply(&g).unwrap());
            prop_assert!((lhs - rhs).norm() <= 1e-9 * gen.scale(&f).max(gen.scale(&g)));
        }

        #[test]
        fn dirichlet_comparison_and_variance_bounds(seed in 0u64..10_000) {
            let gen = random_instance(seed, 2);
            let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
            let k = rng.gen_range(0..gen.bohr.len());
            let w = gen.bohr.omegas[k];
            let f = spectral::decompose(&linalg::random_complex(4, &mut rng), &gen.levels, &gen.bohr)[k].clone();
            let (g, h) = gen.hermitianize_pair(&f, w).unwrap();
            let e = |x: &CMat| gen.dirichlet_form(x, DirichletMethod::Definitional).unwrap();
            let scale = gen.scale(&f);
            prop_assert!(2.0 * e(&f) - e(&g) - e(&h) >= -1e-9 * scale);
            if k != gen.bohr.zero {
                let d = spectral::longest_ap_with_difference(&gen.levels.values, w, gen.levels.tol);
                let factor = (1.0 / d as f64).max(1.0 - (-(gen.beta() * w).abs()).exp());
                prop_assert!(gen.variance(&g) + gen.variance(&h) >= factor * gen.variance(&f) - 1e-9 * scale);
            }
        }
    }
}
