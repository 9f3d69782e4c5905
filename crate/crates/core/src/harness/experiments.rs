use std::collections::BTreeMap;
use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::config::{ApScanConfig, ExperimentConfig, InstanceSpec, Tolerances};
use crate::classical::{self, BasisScan, CheegerReport};
use crate::davies::DaviesGenerator;
use crate::error::{Error, Result};
use crate::gaps::{self, Gap, GapReport};
use crate::operators::{self, ModelKind, ModelSpec};
use crate::spectral::{self, APReport};

/// Proper-AP report of the distinct spectrum, searched up to the dimension.
pub fn spectrum_ap(gen: &DaviesGenerator, tol: &Tolerances) -> APReport {
    let values = &gen.levels.values;
    let (value_tol, sep_tol) = tol.ap_tols(values);
    spectral::find_proper_ap(values, values.len().max(1), value_tol, sep_tol)
}

/// `lambda_0 >= lambda >= lambda_0 / (2 D) - tol`; infinite gaps pass.
pub fn sandwich_holds(lambda: Gap, lambda_0: Gap, d: usize, tol: f64) -> bool {
    match (lambda, lambda_0) {
        (Gap::Finite(l), Gap::Finite(l0)) => l0 + tol >= l && l >= l0 / (2.0 * d.max(1) as f64) - tol,
        (Gap::Finite(_), Gap::Infinite) => true,
        (Gap::Infinite, Gap::Infinite) => true,
        (Gap::Infinite, Gap::Finite(_)) => false,
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GapRow {
    #[serde(flatten)]
    pub instance: InstanceSpec,
    pub params: Vec<(String, Vec<f64>)>,
    pub warnings: Vec<String>,
    pub ap: APReport,
    pub gap: GapReport,
}

pub fn run_gap(cfg: &ExperimentConfig) -> Result<Vec<GapRow>> {
    cfg.instances()?
        .par_iter()
        .map(|inst| {
            let (model, gen) = cfg.build(inst)?;
            Ok(GapRow {
                instance: *inst,
                params: model.params,
                warnings: model.warnings,
                ap: spectrum_ap(&gen, &cfg.tolerances),
                gap: gaps::spectral_gap_full(&gen)?,
            })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonResiduals {
    /// `|lambda_0 - lambda_cl|`, reported for simple spectra only.
    pub classical: Option<f64>,
    pub hermitian_full: f64,
    pub hermitian_v0: f64,
    pub global: Option<f64>,
    pub psd_violation: f64,
    pub chain_cross_check: f64,
    pub chain_reversibility: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ComparisonRow {
    #[serde(flatten)]
    pub instance: InstanceSpec,
    pub lambda: Gap,
    pub lambda_0: Gap,
    /// Classical gap in the eigensolver basis.
    pub lambda_cl: Gap,
    /// Proper-AP length of the spectrum.
    pub d: usize,
    pub min_omega: Option<f64>,
    /// `lambda / lambda_0`; absent for non-ergodic or infinite-gap rows.
    pub ratio: Option<f64>,
    pub verdict: bool,
    pub ergodic: bool,
    pub simple_spectrum: bool,
    /// Classical gaps over random eigenbasis rotations, for degenerate spectra.
    pub basis_scan: Option<BasisScan>,
    pub residuals: ComparisonResiduals,
    pub params: Vec<(String, Vec<f64>)>,
    pub wall_time: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonSummary {
    pub rows: usize,
    pub ergodic: usize,
    pub non_ergodic: usize,
    pub verdict_failures: usize,
    pub min_ratio: Option<f64>,
    pub max_ratio: Option<f64>,
    /// Number of rows per proper-AP length.
    pub d_counts: BTreeMap<usize, usize>,
    pub passed: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ComparisonReport {
    pub summary: ComparisonSummary,
    pub rows: Vec<ComparisonRow>,
}

pub fn compare_instance(cfg: &ExperimentConfig, inst: &InstanceSpec) -> Result<ComparisonRow> {
    let start = Instant::now();
    let (model, gen) = cfg.build(inst)?;
    let report = gaps::spectral_gap_full(&gen)?;
    let d = spectrum_ap(&gen, &cfg.tolerances).length;
    let chain = classical::extract_chain(&gen, &gen.levels.vectors)?;
    let lambda_cl = classical::classical_gap(&chain)?;
    let simple = gen.levels.is_simple();
    let basis_scan = if simple {
        None
    } else {
        let mut rng = ChaCha8Rng::seed_from_u64(inst.seed);
        rng.set_stream(1);
        Some(classical::basis_scan(&gen, cfg.rotations, &mut rng)?)
    };
    let ergodic = !report.ergodicity_suspect;
    let ratio = match (ergodic, report.lambda, report.lambda_0) {
        (true, Gap::Finite(l), Gap::Finite(l0)) if l0 > 0.0 => Some(l / l0),
        _ => None,
    };
    let classical_residual = match (simple, report.lambda_0, lambda_cl) {
        (true, Gap::Finite(a), Gap::Finite(b)) => Some((a - b).abs()),
        (true, Gap::Infinite, Gap::Infinite) => Some(0.0),
        _ => None,
    };
    Ok(ComparisonRow {
        instance: *inst,
        lambda: report.lambda,
        lambda_0: report.lambda_0,
        lambda_cl,
        d,
        min_omega: report.min_omega,
        ratio,
        verdict: sandwich_holds(report.lambda, report.lambda_0, d, cfg.tolerances.inequality()),
        ergodic,
        simple_spectrum: simple,
        basis_scan,
        residuals: ComparisonResiduals {
            classical: classical_residual,
            hermitian_full: report.residuals.hermitian_full,
            hermitian_v0: report.residuals.hermitian_v0,
            global: report.residuals.global,
            psd_violation: report.residuals.psd_violation,
            chain_cross_check: chain.cross_check,
            chain_reversibility: chain.reversibility_residual(),
        },
        params: model.params,
        wall_time: start.elapsed().as_secs_f64(),
    })
}

pub fn run_comparison(cfg: &ExperimentConfig) -> Result<ComparisonReport> {
    let rows = cfg
        .instances()?
        .par_iter()
        .map(|inst| compare_instance(cfg, inst))
        .collect::<Result<Vec<_>>>()?;
    let ratios: Vec<f64> = rows.iter().filter_map(|r| r.ratio).collect();
    let mut d_counts = BTreeMap::new();
    for r in &rows {
        *d_counts.entry(r.d).or_insert(0) += 1;
    }
    let verdict_failures = rows.iter().filter(|r| !r.verdict).count();
    let ergodic = rows.iter().filter(|r| r.ergodic).count();
    let summary = ComparisonSummary {
        rows: rows.len(),
        ergodic,
        non_ergodic: rows.len() - ergodic,
        verdict_failures,
        min_ratio: ratios.iter().copied().reduce(f64::min),
        max_ratio: ratios.iter().copied().reduce(f64::max),
        d_counts,
        passed: verdict_failures == 0,
    };
    Ok(ComparisonReport { summary, rows })
}

/// First AP or repeated eigenvalue seen in a family.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ApHit {
    pub seed: u64,
    pub ap: APReport,
    pub repeated: bool,
    pub params: Vec<(String, Vec<f64>)>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ApFamilyReport {
    pub name: String,
    pub n: usize,
    pub trials: usize,
    pub closed_form: bool,
    pub with_3ap: usize,
    pub with_repeat: usize,
    pub fraction_3ap: f64,
    pub fraction_repeat: f64,
    /// Longest proper AP seen, capped at the configured search length.
    pub max_length: usize,
    pub first_hit: Option<ApHit>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ApScanReport {
    pub max_len: usize,
    pub families: Vec<ApFamilyReport>,
}

/// Sorted spectrum of a family member, from the closed form when requested and available.
fn family_spectrum(model: &ModelSpec, closed_form: bool, seed: u64) -> Result<(Vec<f64>, bool, Vec<(String, Vec<f64>)>)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let inst = model.instantiate(&mut rng)?;
    let pure_xyz = model.kind == ModelKind::XyzRing
        && model.terms.is_empty()
        && model.background.is_none()
        && model.field.is_none()
        && model.perturbation.is_none();
    if closed_form && pure_xyz {
        let jh = &inst.params.iter().find(|(k, _)| k == "xyz").expect("xyz-ring records J and h").1;
        match operators::xyz_ring_spectrum(jh[0], jh[1], model.n) {
            Ok(values) => return Ok((values, true, inst.params)),
            Err(Error::UnsupportedNormalization | Error::UnsupportedParity(_)) => {}
            Err(e) => return Err(e),
        }
    }
    let values = spectral::eigendecompose(&inst.hamiltonian)?.values;
    Ok((values, false, inst.params))
}

/// `(AP report, has repeated eigenvalue)` of a sorted spectrum.
pub fn scan_spectrum(values: &[f64], max_len: usize, tol: &Tolerances) -> (APReport, bool) {
    let (value_tol, sep_tol) = tol.ap_tols(values);
    let repeated = values.windows(2).any(|w| (w[1] - w[0]).abs() <= value_tol);
    let distinct = spectral::distinct_values(values, value_tol);
    (spectral::find_proper_ap(&distinct, max_len, value_tol, sep_tol), repeated)
}

pub fn run_ap_scan(cfg: &ExperimentConfig) -> Result<ApScanReport> {
    let scan: &ApScanConfig =
        cfg.ap_scan.as_ref().ok_or_else(|| Error::Config("ap-scan needs an \"ap_scan\" section".into()))?;
    let random = scan.families.iter().any(|f| f.model.is_random());
    let base = cfg.seed_for(random)?;
    let families = scan
        .families
        .iter()
        .map(|fam| {
            let trials = if fam.model.is_random() { cfg.trials } else { 1 };
            let outcomes = (0..trials)
                .into_par_iter()
                .map(|t| {
                    let seed = base.wrapping_add(t as u64);
                    let (values, closed, params) = family_spectrum(&fam.model, fam.closed_form, seed)?;
                    let (ap, repeated) = scan_spectrum(&values, scan.max_len, &cfg.tolerances);
                    Ok((seed, ap, repeated, closed, params))
                })
                .collect::<Result<Vec<_>>>()?;
            let with_3ap = outcomes.iter().filter(|o| o.1.length >= 3).count();
            let with_repeat = outcomes.iter().filter(|o| o.2).count();
            let first_hit = outcomes.iter().find(|o| o.1.length >= 3 || o.2).map(|o| ApHit {
                seed: o.0,
                ap: o.1.clone(),
                repeated: o.2,
                params: o.4.clone(),
            });
            Ok(ApFamilyReport {
                name: fam.name.clone(),
                n: fam.model.n,
                trials,
                closed_form: outcomes.iter().all(|o| o.3),
                with_3ap,
                with_repeat,
                fraction_3ap: with_3ap as f64 / trials as f64,
                fraction_repeat: with_repeat as f64 / trials as f64,
                max_length: outcomes.iter().map(|o| o.1.length).max().unwrap_or(0),
                first_hit,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(ApScanReport { max_len: scan.max_len, families })
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CheegerRow {
    #[serde(flatten)]
    pub instance: InstanceSpec,
    pub d: usize,
    pub lambda: Gap,
    pub ergodic: bool,
    pub report: Option<CheegerReport>,
    pub error: Option<String>,
    /// Bound margin, projection residuals and chain inequality all within tolerance.
    pub passed: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CheegerSummary {
    pub rows: usize,
    pub failures: usize,
    pub min_margin: Option<f64>,
    pub passed: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CheegerRunReport {
    pub summary: CheegerSummary,
    pub rows: Vec<CheegerRow>,
}

/// Whether a witness meets its bound and its projection checks at the given tolerances.
pub fn cheeger_report_passes(report: &CheegerReport, tol: &Tolerances) -> bool {
    let chain_ok = report.witness.upper_bound || report.witness.chain_margin >= -tol.inequality();
    report.margin >= -tol.inequality() * report.scale
        && report.idempotent_residual <= tol.exact()
        && report.commutator_residual <= tol.exact()
        && chain_ok
}

pub fn cheeger_instance(cfg: &ExperimentConfig, inst: &InstanceSpec) -> Result<CheegerRow> {
    let (_, gen) = cfg.build(inst)?;
    let gap = gaps::spectral_gap_full(&gen)?;
    let d = spectrum_ap(&gen, &cfg.tolerances).length.max(1);
    let (report, error) = match classical::cheeger_witness(&gen, d, gap.lambda) {
        Ok(r) => (Some(r), None),
        Err(e @ (Error::WitnessDegenerate(_) | Error::Validation(_))) => (None, Some(e.to_string())),
        Err(e) => return Err(e),
    };
    let passed = report.as_ref().is_some_and(|r| cheeger_report_passes(r, &cfg.tolerances));
    Ok(CheegerRow { instance: *inst, d, lambda: gap.lambda, ergodic: !gap.ergodicity_suspect, report, error, passed })
}

pub fn run_cheeger(cfg: &ExperimentConfig) -> Result<CheegerRunReport> {
    let rows = cfg
        .instances()?
        .par_iter()
        .map(|inst| cheeger_instance(cfg, inst))
        .collect::<Result<Vec<_>>>()?;
    let failures = rows.iter().filter(|r| !r.passed).count();
    let min_margin = rows.iter().filter_map(|r| r.report.as_ref().map(|c| c.margin)).reduce(f64::min);
    Ok(CheegerRunReport {
        summary: CheegerSummary { rows: rows.len(), failures, min_margin, passed: failures == 0 },
        rows,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg(text: &str) -> ExperimentConfig {
        ExperimentConfig::from_json(text).unwrap()
    }

    #[test]
    fn one_qubit_comparison() {
        let c = cfg(r#"{"model": {"kind": "pauli-sum", "n": 1, "terms": [[1.0, "Z"]]}, "jumps": ["X1"]}"#);
        let report = run_comparison(&c).unwrap();
        let row = &report.rows[0];
        assert_eq!(row.d, 2);
        assert!(row.verdict && row.ergodic);
        // Two-level oracle: lambda_0 = G(2) + G(-2) = 1 and the coherences decay at rate 1/2.
        assert!((row.lambda_0.value() - 1.0).abs() < 1e-12);
        assert!((row.lambda.value() - 0.5).abs() < 1e-12);
        assert!((row.ratio.unwrap() - 0.5).abs() < 1e-12);
    }

    #[test]
    fn seed_seven_three_qubit_ratio() {
        let c = cfg(r#"{"model": {"kind": "field-perturbed", "n": 3, "background": "random-zz-chain", "field": {}},
                       "seed": 7}"#);
        let row = &run_comparison(&c).unwrap().rows[0];
        assert_eq!(row.d, 2);
        let r = row.ratio.unwrap();
        assert!((0.25 - 1e-9..=1.0 + 1e-9).contains(&r), "ratio {r}");
    }

    #[test]
    fn comparison_is_deterministic() {
        let text = r#"{"model": {"kind": "field-perturbed", "n": 2, "background": "random-zz", "field": {}},
                       "seed": 3, "trials": 4, "qubits": [1, 2], "betas": [0.0, 1.0]}"#;
        let strip = |r: ComparisonReport| {
            let mut v = serde_json::to_value(r).unwrap();
            for row in v["rows"].as_array_mut().unwrap() {
                row.as_object_mut().unwrap().remove("wall_time");
            }
            v.to_string()
        };
        assert_eq!(strip(run_comparison(&cfg(text)).unwrap()), strip(run_comparison(&cfg(text)).unwrap()));
    }

    #[test]
    fn zero_field_ap_scan() {
        let c = cfg(r#"{"ap_scan": {"families": [
            {"name": "zz", "model": {"kind": "pauli-sum", "n": 2, "terms": [[1.0, "ZI"], [1.0, "IZ"]]}},
            {"name": "irrational", "model": {"kind": "pauli-sum", "n": 3,
              "terms": [[1.4142135623730951, "ZII"], [1.7320508075688772, "IZI"], [2.23606797749979, "IIZ"]]}}
        ]}}"#);
        let rep = run_ap_scan(&c).unwrap();
        let zz = &rep.families[0];
        assert_eq!((zz.with_3ap, zz.with_repeat), (1, 1));
        let hit = zz.first_hit.as_ref().unwrap();
        let mut terms = hit.ap.terms();
        terms.iter_mut().for_each(|t| *t = t.abs());
        assert!(terms.iter().any(|t| *t < 1e-12) && terms.iter().all(|t| *t < 1e-12 || (*t - 2.0).abs() < 1e-12));
        let irr = &rep.families[1];
        assert_eq!((irr.with_3ap, irr.with_repeat), (0, 0));
    }

    #[test]
    fn cheeger_examples() {
        let one = cfg(r#"{"model": {"kind": "pauli-sum", "n": 1, "terms": [[1.0, "Z"]]}, "jumps": ["X1"]}"#);
        let rep = run_cheeger(&one).unwrap();
        assert!(rep.summary.passed && rep.rows[0].report.as_ref().unwrap().margin >= 0.0);

        let flat = cfg(r#"{"model": {"kind": "pauli-sum", "n": 2, "terms": [[1.0, "ZZ"]]}, "betas": [0.0]}"#);
        assert!(run_cheeger(&flat).unwrap().summary.passed);

        let stuck = cfg(r#"{"model": {"kind": "pauli-sum", "n": 1, "terms": [[1.0, "Z"]]}, "jumps": ["Z1"]}"#);
        let rep = run_cheeger(&stuck).unwrap();
        let row = &rep.rows[0];
        assert!(!row.ergodic);
        let w = row.report.as_ref().unwrap();
        assert!(w.dirichlet.abs() < 1e-12 && w.margin >= -1e-12);
    }
}
