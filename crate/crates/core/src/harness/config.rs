use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::davies::{DaviesGenerator, GeneratorOptions, JumpSpec, RateFunction, RateKind};
use crate::error::{Error, Result};
use crate::operators::{ModelInstance, ModelSpec};
use crate::spectral;

/// Superoperator size guard.
pub const MAX_EXPERIMENT_QUBITS: usize = 8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    #[default]
    Json,
    Csv,
}

/// Check tolerances; every field except the clustering ones is multiplied by `scale`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Tolerances {
    /// Eigenvalue clustering and Bohr dedup; `1e-9 * range` when absent.
    pub level_tol: Option<f64>,
    /// Same-value tolerance of the AP detector; `1e-9 * range` when absent.
    pub ap_value_tol: Option<f64>,
    /// Minimum AP step; `1e-7 * range` when absent.
    pub ap_sep_tol: Option<f64>,
    /// Dirichlet and variance comparisons, divergence form, KMS symmetry, gap sandwich.
    pub inequality: f64,
    /// `L(V_omega)` leaving `V_omega`, trace inequality, coherent term, projection checks.
    pub exact: f64,
    pub scale: f64,
}

impl Default for Tolerances {
    fn default() -> Self {
        Self { level_tol: None, ap_value_tol: None, ap_sep_tol: None, inequality: 1e-9, exact: 1e-10, scale: 1.0 }
    }
}

impl Tolerances {
    pub fn inequality(&self) -> f64 {
        self.inequality * self.scale
    }

    pub fn exact(&self) -> f64 {
        self.exact * self.scale
    }

    pub fn ap_tols(&self, values: &[f64]) -> (f64, f64) {
        (
            self.ap_value_tol.unwrap_or_else(|| spectral::default_value_tol(values)),
            self.ap_sep_tol.unwrap_or_else(|| spectral::default_sep_tol(values)),
        )
    }
}

/// A named family of Hamiltonians for the AP scan.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ApFamily {
    pub name: String,
    pub model: ModelSpec,
    /// Use the closed-form spectrum for odd-n `xyz-ring` models.
    #[serde(default = "yes")]
    pub closed_form: bool,
}

fn yes() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ApScanConfig {
    pub families: Vec<ApFamily>,
    /// Longest progression searched for; 3 detects any proper 3-AP.
    #[serde(default = "default_ap_len")]
    pub max_len: usize,
}

fn default_ap_len() -> usize {
    3
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Suite {
    Divergence,
    KmsSymmetry,
    Invariance,
    TraceInequality,
    DirichletComparison,
    VarianceComparison,
    Coherent,
    Sandwich,
    ClassicalEquivalence,
    DiagonalCorrespondence,
    Cheeger,
    OrbitBound,
}

impl Suite {
    pub const ALL: [Suite; 12] = [
        Suite::Divergence,
        Suite::KmsSymmetry,
        Suite::Invariance,
        Suite::TraceInequality,
        Suite::DirichletComparison,
        Suite::VarianceComparison,
        Suite::Coherent,
        Suite::Sandwich,
        Suite::ClassicalEquivalence,
        Suite::DiagonalCorrespondence,
        Suite::Cheeger,
        Suite::OrbitBound,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Suite::Divergence => "divergence",
            Suite::KmsSymmetry => "kms-symmetry",
            Suite::Invariance => "invariance",
            Suite::TraceInequality => "trace-inequality",
            Suite::DirichletComparison => "dirichlet-comparison",
            Suite::VarianceComparison => "variance-comparison",
            Suite::Coherent => "coherent",
            Suite::Sandwich => "sandwich",
            Suite::ClassicalEquivalence => "classical-equivalence",
            Suite::DiagonalCorrespondence => "diagonal-correspondence",
            Suite::Cheeger => "cheeger",
            Suite::OrbitBound => "orbit-bound",
        }
    }

    /// Trial count used when the config does not override it.
    pub fn default_trials(self) -> usize {
        match self {
            Suite::TraceInequality => 500,
            Suite::Sandwich | Suite::ClassicalEquivalence | Suite::DiagonalCorrespondence | Suite::Cheeger => 100,
            Suite::OrbitBound => 20,
            _ => 200,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct VerifyConfig {
    /// All suites when absent.
    pub suites: Option<Vec<Suite>>,
    /// Per-suite trial count override.
    pub trials: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Required by every subcommand except `verify` and `ap-scan`.
    #[serde(default)]
    pub model: Option<ModelSpec>,
    #[serde(default = "default_rate")]
    pub rate: RateKind,
    /// Every single-site Pauli when absent.
    #[serde(default)]
    pub jumps: Option<Vec<JumpSpec>>,
    #[serde(default = "default_betas")]
    pub betas: Vec<f64>,
    #[serde(default)]
    pub seed: Option<u64>,
    /// Number of instances; instance `i` cycles through `qubits` then `betas`.
    #[serde(default = "default_trials")]
    pub trials: usize,
    /// Qubit counts substituted into the model; the model's own `n` when absent.
    #[serde(default)]
    pub qubits: Option<Vec<usize>>,
    #[serde(default)]
    pub tolerances: Tolerances,
    #[serde(default)]
    pub out: Option<PathBuf>,
    #[serde(default)]
    pub format: Format,
    /// Random within-block rotations tried on degenerate spectra.
    #[serde(default = "default_rotations")]
    pub rotations: usize,
    #[serde(default)]
    pub ap_scan: Option<ApScanConfig>,
    #[serde(default)]
    pub verify: Option<VerifyConfig>,
}

fn default_rate() -> RateKind {
    RateKind::Glauber
}

fn default_betas() -> Vec<f64> {
    vec![1.0]
}

fn default_trials() -> usize {
    1
}

fn default_rotations() -> usize {
    crate::classical::DEFAULT_ROTATIONS
}

/// One `(n, beta)` draw; instance `index` uses seed `base + index`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InstanceSpec {
    pub index: usize,
    pub seed: u64,
    pub n: usize,
    pub beta: f64,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        serde_json::from_str("{}").expect("all fields default")
    }
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.trials == 0 {
            return bad("trials must be at least 1".into());
        }
        if self.betas.is_empty() || self.betas.iter().any(|b| !b.is_finite() || *b < 0.0) {
            return bad("betas must be a non-empty list of finite values >= 0".into());
        }
        let t = &self.tolerances;
        if [t.inequality, t.exact, t.scale].iter().any(|x| !x.is_finite() || *x <= 0.0) {
            return bad("tolerances must be finite and positive".into());
        }
        for x in [t.level_tol, t.ap_value_tol, t.ap_sep_tol].into_iter().flatten() {
            if !x.is_finite() || x < 0.0 {
                return bad("tolerances must be finite and non-negative".into());
            }
        }
        for n in self.qubit_list() {
            if n == 0 || n > MAX_EXPERIMENT_QUBITS {
                return bad(format!("n = {n} outside 1..={MAX_EXPERIMENT_QUBITS}"));
            }
        }
        if let Some(model) = &self.model {
            for n in self.qubit_list() {
                model.with_n(n).validate().map_err(|e| Error::Config(e.to_string()))?;
            }
        }
        if let Some(scan) = &self.ap_scan {
            if scan.max_len < 2 {
                return bad("ap_scan.max_len must be at least 2".into());
            }
            for fam in &scan.families {
                if fam.model.n > MAX_EXPERIMENT_QUBITS {
                    return bad(format!("family {}: n = {} exceeds {MAX_EXPERIMENT_QUBITS}", fam.name, fam.model.n));
                }
                fam.model.validate().map_err(|e| Error::Config(format!("family {}: {e}", fam.name)))?;
            }
        }
        if let Some(v) = &self.verify {
            if v.trials == Some(0) {
                return bad("verify.trials must be at least 1".into());
            }
        }
        Ok(())
    }

    pub fn qubit_list(&self) -> Vec<usize> {
        match (&self.qubits, &self.model) {
            (Some(q), _) => q.clone(),
            (None, Some(m)) => vec![m.n],
            (None, None) => Vec::new(),
        }
    }

    pub fn model(&self) -> Result<&ModelSpec> {
        self.model.as_ref().ok_or_else(|| Error::Config("config needs a \"model\"".into()))
    }

    /// The seed, which is mandatory when `random` is set.
    pub fn seed_for(&self, random: bool) -> Result<u64> {
        match self.seed {
            Some(s) => Ok(s),
            None if random => Err(Error::Config("random models need a \"seed\"".into())),
            None => Ok(0),
        }
    }

    pub fn instances(&self) -> Result<Vec<InstanceSpec>> {
        let model = self.model()?;
        let base = self.seed_for(model.is_random())?;
        let qubits = self.qubit_list();
        if qubits.is_empty() {
            return Err(Error::Config("\"qubits\" must not be empty".into()));
        }
        Ok((0..self.trials)
            .map(|index| InstanceSpec {
                index,
                seed: base.wrapping_add(index as u64),
                n: qubits[index % qubits.len()],
                beta: self.betas[(index / qubits.len()) % self.betas.len()],
            })
            .collect())
    }

    pub fn generator_options(&self) -> GeneratorOptions {
        GeneratorOptions { level_tol: self.tolerances.level_tol, ..GeneratorOptions::default() }
    }

    /// Draws the model and builds its generator from the instance seed alone.
    pub fn build(&self, inst: &InstanceSpec) -> Result<(ModelInstance, DaviesGenerator)> {
        let mut rng = ChaCha8Rng::seed_from_u64(inst.seed);
        let model = self.model()?.with_n(inst.n).instantiate(&mut rng)?;
        let spec = crate::davies::GeneratorSpec { beta: inst.beta, rate: self.rate.clone(), jumps: self.jumps.clone() };
        let jumps = spec.jump_matrices(&model.hamiltonian)?;
        let rate = RateFunction { kind: self.rate.clone(), beta: inst.beta };
        let gen = DaviesGenerator::with_options(&model.hamiltonian, rate, jumps, self.generator_options())?;
        Ok((model, gen))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_parse() {
        let cfg = ExperimentConfig::default();
        assert_eq!(cfg.betas, vec![1.0]);
        assert_eq!(cfg.trials, 1);
        assert_eq!(cfg.format, Format::Json);
        assert_eq!(cfg.tolerances.inequality(), 1e-9);
    }

    #[test]
    fn size_guard_rejects_large_n() {
        let text = r#"{"model": {"kind": "pauli-sum", "n": 9, "terms": [[1.0, "ZIIIIIIII"]]}}"#;
        assert!(matches!(ExperimentConfig::from_json(text), Err(Error::Config(_))));
        let text = r#"{"model": {"kind": "pauli-sum", "n": 2}, "qubits": [2, 9]}"#;
        assert!(matches!(ExperimentConfig::from_json(text), Err(Error::Config(_))));
    }

    #[test]
    fn random_model_needs_seed() {
        let text = r#"{"model": {"kind": "field-perturbed", "n": 2, "background": "random-zz", "field": {}}}"#;
        let cfg = ExperimentConfig::from_json(text).unwrap();
        assert!(matches!(cfg.instances(), Err(Error::Config(_))));
        let fixed = r#"{"model": {"kind": "pauli-sum", "n": 1, "terms": [[1.0, "Z"]]}}"#;
        assert_eq!(ExperimentConfig::from_json(fixed).unwrap().instances().unwrap().len(), 1);
    }

    #[test]
    fn unknown_fields_rejected() {
        assert!(ExperimentConfig::from_json(r#"{"sead": 1}"#).is_err());
    }

    #[test]
    fn instance_schedule_cycles_qubits_then_betas() {
        let text = r#"{"model": {"kind": "field-perturbed", "n": 2, "field": {}},
                       "seed": 10, "trials": 7, "qubits": [2, 3], "betas": [0.0, 1.0, 2.0]}"#;
        let inst = ExperimentConfig::from_json(text).unwrap().instances().unwrap();
        let got: Vec<(u64, usize, f64)> = inst.iter().map(|i| (i.seed, i.n, i.beta)).collect();
        assert_eq!(
            got,
            vec![(10, 2, 0.0), (11, 3, 0.0), (12, 2, 1.0), (13, 3, 1.0), (14, 2, 2.0), (15, 3, 2.0), (16, 2, 0.0)]
        );
    }
}
