//! The classical Markov chain embedded in a Davies generator by a choice of
//! eigenbasis, its gap, and bottleneck (Cheeger) witnesses.

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::davies::DaviesGenerator;
use crate::error::{Error, Result};
use crate::gaps::{self, Gap};
use crate::linalg::{self, cr, CMat, RMat};

/// Largest chain handled by the exhaustive bottleneck search.
pub const EXHAUSTIVE_MAX_STATES: usize = 20;
/// Default number of random within-block rotations sampled for degenerate spectra.
pub const DEFAULT_ROTATIONS: usize = 8;

#[derive(Debug, Clone)]
pub struct ClassicalChain {
    pub energies: Vec<f64>,
    pub pi: Vec<f64>,
    /// `rates[(i, j)] = P[u_i -> u_j]` off the diagonal, `-sum_j P[u_i -> u_j]` on it.
    pub rates: RMat,
    pub basis: CMat,
    /// `max |<u_i| L(|u_j><u_j|) |u_i> - P[u_i -> u_j]|`.
    pub cross_check: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChainExport {
    pub pi: Vec<f64>,
    pub rates: Vec<Vec<f64>>,
    pub energies: Vec<f64>,
}

impl ClassicalChain {
    pub fn len(&self) -> usize {
        self.pi.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pi.is_empty()
    }

    pub fn export(&self) -> ChainExport {
        let n = self.len();
        ChainExport {
            pi: self.pi.clone(),
            rates: (0..n).map(|i| (0..n).map(|j| self.rates[(i, j)]).collect()).collect(),
            energies: self.energies.clone(),
        }
    }

    /// `max |pi_i P_ij - pi_j P_ji|`.
    pub fn reversibility_residual(&self) -> f64 {
        let n = self.len();
        let mut worst = 0.0_f64;
        for i in 0..n {
            for j in 0..i {
                let d = (self.pi[i] * self.rates[(i, j)] - self.pi[j] * self.rates[(j, i)]).abs();
                worst = worst.max(d);
            }
        }
        worst
    }

    /// `max_i sum_{j != i} P_ij`.
    pub fn max_exit_rate(&self) -> f64 {
        (0..self.len()).map(|i| -self.rates[(i, i)]).fold(0.0, f64::max)
    }

    /// `D^{1/2} (-Q) D^{-1/2}` with `D = diag(pi)`, symmetrised.
    pub fn symmetrized(&self) -> RMat {
        let n = self.len();
        let s: Vec<f64> = self.pi.iter().map(|p| p.sqrt()).collect();
        let m = RMat::from_fn(n, n, |i, j| -s[i] * self.rates[(i, j)] / s[j]);
        (&m + m.transpose()) * 0.5
    }

    fn sqrt_pi(&self) -> nalgebra::DVector<f64> {
        nalgebra::DVector::from_iterator(self.len(), self.pi.iter().map(|p| p.sqrt()))
    }
}

/// Extracts the chain for `basis`, whose columns must be an orthonormal eigenbasis of `H`.
pub fn extract_chain(gen: &DaviesGenerator, basis: &CMat) -> Result<ClassicalChain> {
    let n = gen.dim();
    if basis.nrows() != n || basis.ncols() != n {
        return Err(Error::Dimension { expected: n, actual: basis.ncols() });
    }
    let h = gen.hamiltonian.matrix();
    let hv = h * basis;
    let energies: Vec<f64> = (0..n).map(|i| (basis.column(i).adjoint() * hv.column(i))[(0, 0)].re).collect();
    let mut residual = linalg::max_diff(&(basis.adjoint() * basis), &linalg::identity(n));
    let norm = linalg::max_abs(h).max(1.0);
    for i in 0..n {
        let r = hv.column(i) - basis.column(i) * cr(energies[i]);
        residual = residual.max(r.norm() / norm);
    }
    if residual > 1e-9 {
        return Err(Error::NotEigenbasis { residual });
    }

    let rho_u = &gen.gibbs.rho * basis;
    let pi: Vec<f64> = (0..n).map(|i| (basis.column(i).adjoint() * rho_u.column(i))[(0, 0)].re).collect();
    let mut weight = RMat::zeros(n, n);
    for s in &gen.jumps {
        let m = basis.adjoint() * s * basis;
        weight += m.map(|z| z.norm_sqr());
    }
    let mut rates = RMat::zeros(n, n);
    for i in 0..n {
        for j in 0..n {
            if i == j || weight[(i, j)] == 0.0 {
                continue;
            }
            let w = energies[j] - energies[i];
            let k = gen.bohr.index_of(w).ok_or(Error::NotBohrFrequency(w))?;
            rates[(i, j)] = gen.g[k] * weight[(i, j)];
        }
        let out: f64 = (0..n).filter(|&j| j != i).map(|j| rates[(i, j)]).sum();
        rates[(i, i)] = -out;
    }

    let mut cross_check = 0.0_f64;
    for j in 0..n {
        let proj = basis.column(j) * basis.column(j).adjoint();
        let out = basis.adjoint() * gen.apply(&proj)? * basis;
        for i in 0..n {
            if i != j {
                cross_check = cross_check.max((out[(i, i)].re - rates[(i, j)]).abs());
            }
        }
    }
    Ok(ClassicalChain { energies, pi, rates, basis: basis.clone(), cross_check })
}

/// Smallest nonzero eigenvalue of the symmetrised `-Q`, constants deflated.
pub fn classical_gap(chain: &ClassicalChain) -> Result<Gap> {
    Ok(match linalg::deflated_min_eig_real(&chain.symmetrized(), &chain.sqrt_pi())? {
        Some((v, _)) => Gap::Finite(v),
        None => Gap::Infinite,
    })
}

/// `1/2 sum_ij (F_i - F_j)^2 pi_i P_ij`.
pub fn classical_dirichlet(chain: &ClassicalChain, f: &[f64]) -> f64 {
    let n = chain.len();
    let mut total = 0.0;
    for i in 0..n {
        for j in 0..n {
            if i != j {
                total += (f[i] - f[j]).powi(2) * chain.pi[i] * chain.rates[(i, j)];
            }
        }
    }
    0.5 * total
}

/// `sum pi F^2 - (sum pi F)^2`.
pub fn variance_pi(chain: &ClassicalChain, f: &[f64]) -> f64 {
    let mean: f64 = chain.pi.iter().zip(f).map(|(p, x)| p * x).sum();
    chain.pi.iter().zip(f).map(|(p, x)| p * (x - mean).powi(2)).sum()
}

/// `sum_i F_i |u_i><u_i|`.
pub fn diagonal_observable(chain: &ClassicalChain, f: &[f64]) -> CMat {
    let u = &chain.basis;
    let mut scaled = u.clone();
    for (k, &v) in f.iter().enumerate() {
        for z in scaled.column_mut(k).iter_mut() {
            *z *= v;
        }
    }
    &scaled * u.adjoint()
}

/// Eigenbasis with each degenerate block rotated by an independent random unitary.
pub fn random_block_rotation<R: Rng + ?Sized>(gen: &DaviesGenerator, rng: &mut R) -> CMat {
    let mut out = gen.levels.vectors.clone();
    for r in &gen.levels.ranges {
        if r.len() < 2 {
            continue;
        }
        let u = linalg::random_unitary(r.len(), rng);
        let block = gen.levels.vectors.columns(r.start, r.len()) * u;
        out.columns_mut(r.start, r.len()).copy_from(&block);
    }
    out
}

/// Eigenbasis that diagonalises a Hermitian minimiser of the `V_0` gap
/// within every degenerate block; its classical gap equals `lambda_{L,0}`.
pub fn minimizing_basis(gen: &DaviesGenerator) -> Result<CMat> {
    let sol = gaps::solve_omega(gen, gen.bohr.zero)?;
    let Some(x) = sol.vector else {
        return Ok(gen.levels.vectors.clone());
    };
    let f = sol.basis.to_operator(gen, &x);
    let herm = (&f + f.adjoint()) * cr(0.5);
    let anti = (&f - f.adjoint()) * linalg::c(0.0, -0.5);
    let target = if linalg::frobenius_sq(&herm) >= linalg::frobenius_sq(&anti) { herm } else { anti };
    let mut out = gen.levels.vectors.clone();
    for r in &gen.levels.ranges {
        if r.len() < 2 {
            continue;
        }
        let block = gen.levels.vectors.columns(r.start, r.len()).into_owned();
        let reduced = block.adjoint() * &target * &block;
        let (_, w) = linalg::eigh(&reduced)?;
        out.columns_mut(r.start, r.len()).copy_from(&(&block * w));
    }
    Ok(out)
}

/// Classical gaps in the eigensolver basis and in `k` random block rotations.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BasisScan {
    pub eigensolver_gap: Gap,
    pub rotated_gaps: Vec<Gap>,
    pub min_gap: Gap,
    /// Set when a degenerate level makes the eigenbasis non-unique.
    pub basis_non_unique: bool,
}

pub fn basis_scan<R: Rng + ?Sized>(gen: &DaviesGenerator, k: usize, rng: &mut R) -> Result<BasisScan> {
    let eigensolver_gap = classical_gap(&extract_chain(gen, &gen.levels.vectors)?)?;
    let degenerate = !gen.levels.is_simple();
    let mut rotated_gaps = Vec::new();
    if degenerate {
        for _ in 0..k {
            let basis = random_block_rotation(gen, rng);
            rotated_gaps.push(classical_gap(&extract_chain(gen, &basis)?)?);
        }
    }
    let min_gap = rotated_gaps.iter().copied().fold(eigensolver_gap, Gap::min);
    Ok(BasisScan { eigensolver_gap, rotated_gaps, min_gap, basis_non_unique: degenerate })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BottleneckMode {
    Exhaustive,
    Sweep,
}

/// A cut `S` of the chain with its bottleneck ratio.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheegerWitness {
    /// Character `i` is `1` when state `i` is in `S`.
    pub mask: String,
    pub states: Vec<usize>,
    pub pi_s: f64,
    /// `Q(S, S^c) / pi(S)`.
    pub phi: f64,
    /// Maximum total exit rate.
    pub max_exit_rate: f64,
    pub lambda_cl: Gap,
    pub mode: BottleneckMode,
    /// Sweep cuts only bound the true bottleneck ratio from above.
    pub upper_bound: bool,
    /// `2 Lambda lambda_cl - Phi^2`.
    pub chain_margin: f64,
}

fn cut_ratio(chain: &ClassicalChain, members: &[bool]) -> Option<(f64, f64)> {
    let n = chain.len();
    let pi_s: f64 = (0..n).filter(|&i| members[i]).map(|i| chain.pi[i]).sum();
    if pi_s <= 0.0 || pi_s > 0.5 + 1e-12 {
        return None;
    }
    let mut q = 0.0;
    for i in (0..n).filter(|&i| members[i]) {
        for j in (0..n).filter(|&j| !members[j]) {
            q += chain.pi[i] * chain.rates[(i, j)];
        }
    }
    Some((q / pi_s, pi_s))
}

pub fn bottleneck(chain: &ClassicalChain, mode: BottleneckMode) -> Result<CheegerWitness> {
    let n = chain.len();
    if n < 2 {
        return Err(Error::Validation("bottleneck needs at least two states".into()));
    }
    let lambda_cl = classical_gap(chain)?;
    let (members, phi, pi_s, upper_bound) = match mode {
        BottleneckMode::Exhaustive => {
            if n > EXHAUSTIVE_MAX_STATES {
                return Err(Error::ChainTooLarge(n));
            }
            let best = (1u32..(1u32 << n) - 1)
                .into_par_iter()
                .filter_map(|mask| {
                    let members: Vec<bool> = (0..n).map(|i| mask >> i & 1 == 1).collect();
                    cut_ratio(chain, &members).map(|(phi, pi_s)| (phi, mask, pi_s))
                })
                .min_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)))
                .expect("the lightest state alone has pi <= 1/2");
            let members: Vec<bool> = (0..n).map(|i| best.1 >> i & 1 == 1).collect();
            (members, best.0, best.2, false)
        }
        BottleneckMode::Sweep => {
            let sq = chain.sqrt_pi();
            // Second eigenvector of the symmetrised generator, orthogonal to sqrt(pi).
            let basis = linalg::complement_basis_real(&(&sq / sq.norm()));
            let reduced = basis.transpose() * chain.symmetrized() * &basis;
            let (_, red_vecs) = linalg::eigh_real(&reduced)?;
            let v = &basis * red_vecs.column(0);
            let score: Vec<f64> = (0..n).map(|i| v[i] / sq[i]).collect();
            let mut order: Vec<usize> = (0..n).collect();
            order.sort_by(|&a, &b| score[a].total_cmp(&score[b]).then(a.cmp(&b)));
            let mut best: Option<(f64, Vec<bool>, f64)> = None;
            for cut in 1..n {
                let mut prefix = vec![false; n];
                for &i in &order[..cut] {
                    prefix[i] = true;
                }
                let mass: f64 = (0..n).filter(|&i| prefix[i]).map(|i| chain.pi[i]).sum();
                let side = if mass <= 0.5 { prefix } else { prefix.iter().map(|b| !b).collect() };
                if let Some((phi, pi_s)) = cut_ratio(chain, &side) {
                    if best.as_ref().is_none_or(|b| phi < b.0) {
                        best = Some((phi, side, pi_s));
                    }
                }
            }
            let (phi, members, pi_s) = best.expect("some sweep side has pi <= 1/2");
            (members, phi, pi_s, true)
        }
    };
    let lambda = chain.max_exit_rate();
    let states: Vec<usize> = (0..n).filter(|&i| members[i]).collect();
    Ok(CheegerWitness {
        mask: members.iter().map(|&b| if b { '1' } else { '0' }).collect(),
        states,
        pi_s,
        phi,
        max_exit_rate: lambda,
        lambda_cl,
        mode,
        upper_bound,
        chain_margin: 2.0 * lambda * lambda_cl.value() - phi * phi,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MComponents {
    /// `max |G|` over Bohr frequencies.
    pub g_sup: f64,
    /// Closed-form `sup |G|` of the rate family, when known.
    pub g_sup_closed_form: Option<f64>,
    /// `|| sum_S S S^dag ||`.
    pub jump_norm: f64,
    pub m: f64,
}

/// Projection witness `P = sum_{u in S} |u><u|` and its quantum bound.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CheegerReport {
    pub witness: CheegerWitness,
    pub d: usize,
    pub lambda_l: Gap,
    pub m: MComponents,
    pub dirichlet: f64,
    pub variance: f64,
    pub ratio: f64,
    /// `4 sqrt(D M lambda_L) Var(P)`.
    pub bound: f64,
    /// `bound - E(P)`.
    pub margin: f64,
    pub idempotent_residual: f64,
    pub commutator_residual: f64,
    pub scale: f64,
    /// Basis used: the eigensolver's, or the `V_0` minimiser's for degenerate spectra.
    pub minimizing_basis: bool,
    #[serde(skip)]
    pub projection: CMat,
}

pub fn cheeger_witness(gen: &DaviesGenerator, d: usize, lambda_l: Gap) -> Result<CheegerReport> {
    if d == 0 {
        return Err(Error::Validation("AP length D must be at least 1".into()));
    }
    let degenerate = !gen.levels.is_simple();
    let basis = if degenerate { minimizing_basis(gen)? } else { gen.levels.vectors.clone() };
    let chain = extract_chain(gen, &basis)?;
    let mode = if chain.len() <= EXHAUSTIVE_MAX_STATES { BottleneckMode::Exhaustive } else { BottleneckMode::Sweep };
    let witness = bottleneck(&chain, mode)?;
    let mut f = vec![0.0; chain.len()];
    for &i in &witness.states {
        f[i] = 1.0;
    }
    let p = diagonal_observable(&chain, &f);
    let scale = gen.scale(&p);
    let variance = gen.variance(&p);
    if variance <= 1e-12 * scale {
        return Err(Error::WitnessDegenerate(variance));
    }
    let dirichlet = gen.dirichlet_form(&p, crate::davies::DirichletMethod::Definitional)?;
    let g_sup = gen.g_sup();
    let jump_norm = gen.jump_norm()?;
    let m = g_sup * jump_norm;
    let bound = 4.0 * (d as f64 * m * lambda_l.value()).sqrt() * variance;
    Ok(CheegerReport {
        d,
        lambda_l,
        m: MComponents { g_sup, g_sup_closed_form: gen.rate.closed_form_sup(), jump_norm, m },
        dirichlet,
        variance,
        ratio: dirichlet / variance,
        bound,
        margin: bound - dirichlet,
        idempotent_residual: linalg::max_diff(&(&p * &p), &p),
        commutator_residual: linalg::max_abs(&linalg::commutator(&p, gen.hamiltonian.matrix())),
        scale,
        minimizing_basis: degenerate,
        projection: p,
        witness,
    })
}
