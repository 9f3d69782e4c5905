//! Hamiltonians and jump operators.
//!
//! Tensor ordering: qubit 1 is the most significant bit of the
//! computational-basis index, so `"XI"` acts on the left factor of `X ⊗ I`.

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{self, c, cr, CMat, C64};

/// Largest qubit count any builder accepts.
pub const MAX_QUBITS: usize = 12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Pauli {
    I,
    X,
    Y,
    Z,
}

impl Pauli {
    pub fn matrix(self) -> CMat {
        let z = cr(0.0);
        let o = cr(1.0);
        let i = c(0.0, 1.0);
        match self {
            Pauli::I => CMat::from_row_slice(2, 2, &[o, z, z, o]),
            Pauli::X => CMat::from_row_slice(2, 2, &[z, o, o, z]),
            Pauli::Y => CMat::from_row_slice(2, 2, &[z, -i, i, z]),
            Pauli::Z => CMat::from_row_slice(2, 2, &[o, z, z, -o]),
        }
    }

    fn flips(self) -> bool {
        matches!(self, Pauli::X | Pauli::Y)
    }

    /// Amplitude of `P |bit>` on `|bit ^ flip>`.
    fn phase(self, bit: usize) -> C64 {
        match (self, bit) {
            (Pauli::I, _) | (Pauli::X, _) => cr(1.0),
            (Pauli::Y, 0) => c(0.0, 1.0),
            (Pauli::Y, _) => c(0.0, -1.0),
            (Pauli::Z, 0) => cr(1.0),
            (Pauli::Z, _) => cr(-1.0),
        }
    }
}

impl TryFrom<char> for Pauli {
    type Error = Error;

    fn try_from(ch: char) -> Result<Self> {
        match ch.to_ascii_uppercase() {
            'I' => Ok(Pauli::I),
            'X' => Ok(Pauli::X),
            'Y' => Ok(Pauli::Y),
            'Z' => Ok(Pauli::Z),
            other => Err(Error::Validation(format!("unknown Pauli letter '{other}'"))),
        }
    }
}

/// A tensor product of single-qubit Paulis, one letter per site.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct PauliString {
    letters: Vec<Pauli>,
}

impl PauliString {
    pub fn new(letters: Vec<Pauli>) -> Result<Self> {
        if letters.is_empty() {
            return Err(Error::Validation("Pauli string must act on at least one qubit".into()));
        }
        Ok(Self { letters })
    }

    pub fn identity(n: usize) -> Result<Self> {
        Self::new(vec![Pauli::I; n])
    }

    /// Identity everywhere except the given (1-based site, letter) pairs.
    pub fn from_sites(n: usize, sites: &[(usize, Pauli)]) -> Result<Self> {
        let mut letters = vec![Pauli::I; n];
        for &(site, p) in sites {
            if site == 0 || site > n {
                return Err(Error::Validation(format!("site {site} outside 1..={n}")));
            }
            letters[site - 1] = p;
        }
        Self::new(letters)
    }

    /// Parses a site-indexed label such as `"X1"` or `"X1Z3"`.
    pub fn from_site_label(label: &str, n: usize) -> Result<Self> {
        let chars: Vec<char> = label.chars().filter(|ch| !ch.is_whitespace()).collect();
        let mut sites = Vec::new();
        let mut i = 0;
        while i < chars.len() {
            let p = Pauli::try_from(chars[i])?;
            i += 1;
            let start = i;
            while i < chars.len() && chars[i].is_ascii_digit() {
                i += 1;
            }
            if start == i {
                return Err(Error::Validation(format!("missing site index in label '{label}'")));
            }
            let site: usize = chars[start..i].iter().collect::<String>().parse().map_err(|_| {
                Error::Validation(format!("bad site index in label '{label}'"))
            })?;
            sites.push((site, p));
        }
        if sites.is_empty() {
            return Err(Error::Validation(format!("empty jump label '{label}'")));
        }
        Self::from_sites(n, &sites)
    }

    pub fn n_qubits(&self) -> usize {
        self.letters.len()
    }

    pub fn letters(&self) -> &[Pauli] {
        &self.letters
    }

    /// Dense `2^n x 2^n` matrix. Each column has exactly one nonzero entry.
    pub fn matrix(&self) -> CMat {
        let n = self.letters.len();
        let dim = 1usize << n;
        let mut flip = 0usize;
        for (k, p) in self.letters.iter().enumerate() {
            if p.flips() {
                flip |= 1 << (n - 1 - k);
            }
        }
        let mut m = CMat::zeros(dim, dim);
        for col in 0..dim {
            let mut amp = cr(1.0);
            for (k, p) in self.letters.iter().enumerate() {
                let bit = (col >> (n - 1 - k)) & 1;
                amp *= p.phase(bit);
            }
            m[(col ^ flip, col)] = amp;
        }
        m
    }
}

impl FromStr for PauliString {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let letters = s.chars().map(Pauli::try_from).collect::<Result<Vec<_>>>()?;
        Self::new(letters)
    }
}

impl fmt::Display for PauliString {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for p in &self.letters {
            let ch = match p {
                Pauli::I => 'I',
                Pauli::X => 'X',
                Pauli::Y => 'Y',
                Pauli::Z => 'Z',
            };
            write!(f, "{ch}")?;
        }
        Ok(())
    }
}

/// Dense Hermitian matrix, checked on construction.
#[derive(Debug, Clone, PartialEq)]
pub struct HermitianOperator {
    matrix: CMat,
}

impl HermitianOperator {
    /// Accepts `m` if `max |m - m^dag| <= 1e-12 * max |m|` and every entry is finite.
    pub fn new(m: CMat) -> Result<Self> {
        if m.nrows() != m.ncols() {
            return Err(Error::Dimension { expected: m.nrows(), actual: m.ncols() });
        }
        if m.nrows() == 0 {
            return Err(Error::Validation("operator must have positive dimension".into()));
        }
        if !linalg::is_finite(&m) {
            return Err(Error::Validation("operator has non-finite entries".into()));
        }
        let tolerance = 1e-12 * linalg::max_abs(&m);
        let deviation = linalg::hermitian_deviation(&m);
        if deviation > tolerance {
            return Err(Error::NotHermitian { deviation, tolerance });
        }
        Ok(Self { matrix: m })
    }

    pub fn zeros(dim: usize) -> Self {
        Self { matrix: linalg::zeros(dim) }
    }

    pub fn dim(&self) -> usize {
        self.matrix.nrows()
    }

    /// `Some(n)` when the dimension is `2^n`.
    pub fn n_qubits(&self) -> Option<usize> {
        let d = self.dim();
        d.is_power_of_two().then(|| d.trailing_zeros() as usize)
    }

    pub fn matrix(&self) -> &CMat {
        &self.matrix
    }

    pub fn into_matrix(self) -> CMat {
        self.matrix
    }

    /// True when the operator equals `c I` within `1e-12 * max |entry|`.
    pub fn is_scalar_identity(&self) -> bool {
        let d = self.dim();
        let mean = linalg::trace(&self.matrix) / cr(d as f64);
        let diff = &self.matrix - linalg::identity(d) * mean;
        linalg::max_abs(&diff) <= 1e-12 * linalg::max_abs(&self.matrix).max(f64::MIN_POSITIVE)
    }
}

impl From<PauliString> for HermitianOperator {
    fn from(p: PauliString) -> Self {
        Self { matrix: p.matrix() }
    }
}

/// `sum_k c_k P_k` over Pauli strings on `n` qubits.
pub fn build_pauli_hamiltonian(terms: &[(f64, PauliString)], n: usize) -> Result<HermitianOperator> {
    if n == 0 || n > MAX_QUBITS {
        return Err(Error::Validation(format!("qubit count {n} outside 1..={MAX_QUBITS}")));
    }
    let dim = 1usize << n;
    let mut h = linalg::zeros(dim);
    for (coeff, string) in terms {
        if !coeff.is_finite() {
            return Err(Error::Validation(format!("non-finite coefficient {coeff} on {string}")));
        }
        if string.n_qubits() != n {
            return Err(Error::Dimension { expected: n, actual: string.n_qubits() });
        }
        h += string.matrix() * cr(*coeff);
    }
    HermitianOperator::new(h)
}

/// `I^{(i-1)} ⊗ p ⊗ I^{(n-i)}` for a 1-based site `i`.
pub fn embed_single_site(p: &CMat, site: usize, n: usize) -> CMat {
    let dim = 1usize << n;
    let shift = n - site;
    CMat::from_fn(dim, dim, |r, col| {
        let mask = !(1usize << shift);
        if r & mask != col & mask {
            return cr(0.0);
        }
        p[((r >> shift) & 1, (col >> shift) & 1)]
    })
}

/// Result of [`build_field_perturbation`].
#[derive(Debug, Clone)]
pub struct FieldPerturbation {
    pub hamiltonian: HermitianOperator,
    /// Set when `P` is a multiple of the identity, which makes the field
    /// a constant energy shift.
    pub p_is_scalar: bool,
}

/// `H0 + sum_i h_i P_i`.
pub fn build_field_perturbation(
    h0: &HermitianOperator,
    p: &HermitianOperator,
    h: &[f64],
) -> Result<FieldPerturbation> {
    if p.dim() != 2 {
        return Err(Error::Dimension { expected: 2, actual: p.dim() });
    }
    let n = h.len();
    if n == 0 || n > MAX_QUBITS || h0.dim() != 1usize << n {
        return Err(Error::Dimension { expected: h0.dim(), actual: 1usize << n.min(MAX_QUBITS + 1) });
    }
    if h.iter().any(|x| !x.is_finite()) {
        return Err(Error::Validation("non-finite field strength".into()));
    }
    let mut m = h0.matrix().clone();
    m += field_sum(p.matrix(), h);
    Ok(FieldPerturbation {
        hamiltonian: HermitianOperator::new(m)?,
        p_is_scalar: p.is_scalar_identity(),
    })
}

/// `sum_i h_i P_i` alone.
pub fn field_sum(p: &CMat, h: &[f64]) -> CMat {
    let n = h.len();
    let mut m = linalg::zeros(1usize << n);
    for (i, &hi) in h.iter().enumerate() {
        if hi != 0.0 {
            m += embed_single_site(p, i + 1, n) * cr(hi);
        }
    }
    m
}

/// `J sum_i X_i Y_{i+1} + h sum_i Z_i` on a ring, `Y_{n+1} = Y_1`.
pub fn build_xyz_ring(j: f64, h: f64, n: usize) -> Result<HermitianOperator> {
    if n < 2 {
        return Err(Error::Validation(format!("XY+Z ring needs n >= 2, got {n}")));
    }
    if !j.is_finite() || !h.is_finite() {
        return Err(Error::Validation("non-finite XY+Z coupling".into()));
    }
    let mut terms = Vec::with_capacity(2 * n);
    for i in 1..=n {
        let next = i % n + 1;
        terms.push((j, PauliString::from_sites(n, &[(i, Pauli::X), (next, Pauli::Y)])?));
        terms.push((h, PauliString::from_sites(n, &[(i, Pauli::Z)])?));
    }
    build_pauli_hamiltonian(&terms, n)
}

/// Closed-form XY+Z ring spectrum `{h sum_k z_k m_k(J/h)}`, ascending.
///
/// `m_k = J' mu_k - sqrt(J'^2 mu_k^2 + 1)` with `mu_k = sin(2 pi k / n)`.
/// The free-fermion formula only covers odd `n`; even rings pick up a
/// parity-dependent boundary term and are rejected.
pub fn xyz_ring_spectrum(j: f64, h: f64, n: usize) -> Result<Vec<f64>> {
    if h == 0.0 {
        return Err(Error::UnsupportedNormalization);
    }
    if !(2..=MAX_QUBITS).contains(&n) {
        return Err(Error::Validation(format!("XY+Z ring length {n} outside 2..={MAX_QUBITS}")));
    }
    if n.is_multiple_of(2) {
        return Err(Error::UnsupportedParity(n));
    }
    let jp = j / h;
    let modes: Vec<f64> = (1..=n)
        .map(|k| {
            let mu = if k % n == 0 {
                0.0
            } else {
                (2.0 * std::f64::consts::PI * k as f64 / n as f64).sin()
            };
            jp * mu - (jp * jp * mu * mu + 1.0).sqrt()
        })
        .collect();
    let mut out: Vec<f64> = (0..1usize << n)
        .map(|bits| {
            let s: f64 = modes
                .iter()
                .enumerate()
                .map(|(k, m)| if (bits >> k) & 1 == 0 { *m } else { -*m })
                .sum();
            h * s
        })
        .collect();
    out.sort_by(f64::total_cmp);
    Ok(out)
}

// ---------------------------------------------------------------------------
// JSON model specs
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ModelKind {
    PauliSum,
    Dense,
    FieldPerturbed,
    XyzRing,
}

/// Random 2-local ZZ background drawn uniformly from `[-1, 1]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Background {
    /// `sum_{i<j} J_ij Z_i Z_j` over all pairs.
    RandomZz,
    /// `sum_i J_i Z_i Z_{i+1}` on an open chain.
    RandomZzChain,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FieldSpec {
    #[serde(rename = "P", default = "default_field_pauli")]
    pub p: Pauli,
    /// Drawn uniformly from `[-1, 1]^n` when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub h: Option<Vec<f64>>,
}

fn default_field_pauli() -> Pauli {
    Pauli::X
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct XyzSpec {
    /// Drawn uniformly from `[-2, 2]` when absent.
    #[serde(rename = "J", default, skip_serializing_if = "Option::is_none")]
    pub j: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub h: Option<f64>,
}

/// Random-coefficient perturbations with uniform `[-1, 1]` couplings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum PerturbationSpec {
    /// `sum_{|S| = degree} A_S prod_{i in S} X_i`.
    XString { degree: usize },
    /// `sum_{(i,j) in edges} A_ij X_i X_j`, 1-based sites.
    EdgeXx { edges: Vec<(usize, usize)> },
}

pub type DenseMatrixSpec = Vec<Vec<[f64; 2]>>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSpec {
    pub kind: ModelKind,
    pub n: usize,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub terms: Vec<(f64, String)>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub matrix: Option<DenseMatrixSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub background: Option<Background>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub field: Option<FieldSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub xyz: Option<XyzSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub perturbation: Option<PerturbationSpec>,
}

/// A concrete Hamiltonian drawn from a [`ModelSpec`], with the random
/// parameters that produced it.
#[derive(Debug, Clone)]
pub struct ModelInstance {
    pub hamiltonian: HermitianOperator,
    pub params: Vec<(String, Vec<f64>)>,
    pub warnings: Vec<String>,
}

pub fn parse_dense(spec: &DenseMatrixSpec) -> Result<CMat> {
    let dim = spec.len();
    if dim == 0 || spec.iter().any(|row| row.len() != dim) {
        return Err(Error::Validation("dense matrix must be square and non-empty".into()));
    }
    Ok(CMat::from_fn(dim, dim, |r, k| c(spec[r][k][0], spec[r][k][1])))
}

fn uniform<R: Rng + ?Sized>(rng: &mut R, half_width: f64) -> f64 {
    (rng.gen::<f64>() * 2.0 - 1.0) * half_width
}

fn subsets(n: usize, k: usize) -> Vec<Vec<usize>> {
    fn rec(start: usize, n: usize, k: usize, cur: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        if cur.len() == k {
            out.push(cur.clone());
            return;
        }
        for i in start..n {
            cur.push(i);
            rec(i + 1, n, k, cur, out);
            cur.pop();
        }
    }
    let mut out = Vec::new();
    rec(0, n, k, &mut Vec::new(), &mut out);
    out
}

impl ModelSpec {
    pub fn validate(&self) -> Result<()> {
        if self.n == 0 || self.n > MAX_QUBITS {
            return Err(Error::Validation(format!("n = {} outside 1..={MAX_QUBITS}", self.n)));
        }
        if self.terms.iter().any(|(c, _)| !c.is_finite()) {
            return Err(Error::Validation("non-finite term coefficient".into()));
        }
        match self.kind {
            ModelKind::Dense if self.matrix.is_none() => {
                return Err(Error::Validation("dense model needs a \"matrix\" field".into()))
            }
            ModelKind::FieldPerturbed if self.field.is_none() => {
                return Err(Error::Validation("field-perturbed model needs a \"field\" field".into()))
            }
            ModelKind::XyzRing if self.n < 2 => {
                return Err(Error::Validation("xyz-ring needs n >= 2".into()))
            }
            _ => {}
        }
        if let Some(field) = &self.field {
            if let Some(h) = &field.h {
                if h.len() != self.n || h.iter().any(|x| !x.is_finite()) {
                    return Err(Error::Validation("field \"h\" must have n finite entries".into()));
                }
            }
        }
        if let Some(PerturbationSpec::XString { degree }) = &self.perturbation {
            if *degree == 0 || *degree > self.n {
                return Err(Error::Validation(format!("x-string degree {degree} outside 1..=n")));
            }
        }
        if let Some(PerturbationSpec::EdgeXx { edges }) = &self.perturbation {
            if edges.iter().any(|&(a, b)| a == 0 || b == 0 || a > self.n || b > self.n || a == b) {
                return Err(Error::Validation("edge endpoints must be distinct sites in 1..=n".into()));
            }
        }
        Ok(())
    }

    /// Whether instantiation consumes randomness.
    pub fn is_random(&self) -> bool {
        self.background.is_some()
            || self.perturbation.is_some()
            || self.field.as_ref().is_some_and(|f| f.h.is_none())
            || (self.kind == ModelKind::XyzRing
                && self.xyz.as_ref().is_none_or(|x| x.j.is_none() || x.h.is_none()))
    }

    /// Copy with a different qubit count; explicit per-site data must still fit.
    pub fn with_n(&self, n: usize) -> Self {
        let mut out = self.clone();
        out.n = n;
        out
    }

    pub fn instantiate<R: Rng + ?Sized>(&self, rng: &mut R) -> Result<ModelInstance> {
        self.validate()?;
        let n = self.n;
        let dim = 1usize << n;
        let mut params = Vec::new();
        let mut warnings = Vec::new();

        let terms = self
            .terms
            .iter()
            .map(|(c, s)| Ok((*c, s.parse::<PauliString>()?)))
            .collect::<Result<Vec<_>>>()?;
        let mut h = build_pauli_hamiltonian(&terms, n)?.into_matrix();

        match self.kind {
            ModelKind::Dense => {
                let m = parse_dense(self.matrix.as_ref().expect("validated"))?;
                if m.nrows() != dim {
                    return Err(Error::Dimension { expected: dim, actual: m.nrows() });
                }
                h += HermitianOperator::new(m)?.into_matrix();
            }
            ModelKind::XyzRing => {
                let spec = self.xyz.clone().unwrap_or(XyzSpec { j: None, h: None });
                let j = spec.j.unwrap_or_else(|| uniform(rng, 2.0));
                let hz = spec.h.unwrap_or_else(|| uniform(rng, 2.0));
                params.push(("xyz".to_string(), vec![j, hz]));
                h += build_xyz_ring(j, hz, n)?.into_matrix();
            }
            ModelKind::PauliSum | ModelKind::FieldPerturbed => {}
        }

        if let Some(bg) = self.background {
            let pairs: Vec<(usize, usize)> = match bg {
                Background::RandomZz => {
                    (1..=n).flat_map(|i| (i + 1..=n).map(move |j| (i, j))).collect()
                }
                Background::RandomZzChain => (1..n).map(|i| (i, i + 1)).collect(),
            };
            let mut couplings = Vec::with_capacity(pairs.len());
            for (i, j) in pairs {
                let coupling = uniform(rng, 1.0);
                couplings.push(coupling);
                let zz = PauliString::from_sites(n, &[(i, Pauli::Z), (j, Pauli::Z)])?;
                h += zz.matrix() * cr(coupling);
            }
            params.push(("background".to_string(), couplings));
        }

        if let Some(pert) = &self.perturbation {
            let (sets, name): (Vec<Vec<usize>>, &str) = match pert {
                PerturbationSpec::XString { degree } => (subsets(n, *degree), "x-string"),
                PerturbationSpec::EdgeXx { edges } => {
                    (edges.iter().map(|&(a, b)| vec![a - 1, b - 1]).collect(), "edge-xx")
                }
            };
            let mut amps = Vec::with_capacity(sets.len());
            for set in sets {
                let a = uniform(rng, 1.0);
                amps.push(a);
                let sites: Vec<(usize, Pauli)> = set.iter().map(|&i| (i + 1, Pauli::X)).collect();
                h += PauliString::from_sites(n, &sites)?.matrix() * cr(a);
            }
            params.push((name.to_string(), amps));
        }

        if let Some(field) = &self.field {
            let hv = match &field.h {
                Some(v) => v.clone(),
                None => (0..n).map(|_| uniform(rng, 1.0)).collect(),
            };
            let p = HermitianOperator::from(PauliString::new(vec![field.p])?);
            let base = HermitianOperator::new(h)?;
            let built = build_field_perturbation(&base, &p, &hv)?;
            if built.p_is_scalar {
                warnings.push("field operator is a multiple of the identity".to_string());
            }
            params.push(("field".to_string(), hv));
            h = built.hamiltonian.into_matrix();
        }

        Ok(ModelInstance { hamiltonian: HermitianOperator::new(h)?, params, warnings })
    }
}
