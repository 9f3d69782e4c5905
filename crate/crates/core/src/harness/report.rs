//! JSON and CSV rendering of experiment reports.

use std::fmt::Display;
use std::path::Path;

use serde::Serialize;

use super::config::Format;
use super::experiments::{ApScanReport, CheegerRunReport, ComparisonReport, GapRow};
use super::verify::VerifyReport;
use crate::error::Result;
use crate::gaps::GapReport;

/// One CSV header plus one line per row.
pub trait Tabular {
    fn header(&self) -> String;
    fn rows(&self) -> Vec<String>;
}

fn opt<T: Display>(v: Option<T>) -> String {
    v.map_or(String::new(), |x| x.to_string())
}

/// Quotes a field when it contains a separator or quote.
fn field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

impl Tabular for Vec<GapRow> {
    fn header(&self) -> String {
        format!("index,seed,n,beta,d,{}", GapReport::CSV_HEADER)
    }

    fn rows(&self) -> Vec<String> {
        self.iter()
            .map(|r| {
                let i = &r.instance;
                format!("{},{},{},{},{},{}", i.index, i.seed, i.n, i.beta, r.ap.length, r.gap.csv_row())
            })
            .collect()
    }
}

impl Tabular for ComparisonReport {
    fn header(&self) -> String {
        "index,seed,n,beta,lambda,lambda_0,lambda_cl,d,min_omega,ratio,verdict,ergodic,simple_spectrum,\
         classical_residual,hermitian_residual,global_residual,wall_time"
            .to_string()
    }

    fn rows(&self) -> Vec<String> {
        self.rows
            .iter()
            .map(|r| {
                let i = &r.instance;
                format!(
                    "{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{}",
                    i.index,
                    i.seed,
                    i.n,
                    i.beta,
                    r.lambda,
                    r.lambda_0,
                    r.lambda_cl,
                    r.d,
                    opt(r.min_omega),
                    opt(r.ratio),
                    r.verdict,
                    r.ergodic,
                    r.simple_spectrum,
                    opt(r.residuals.classical),
                    r.residuals.hermitian_full,
                    opt(r.residuals.global),
                    r.wall_time
                )
            })
            .collect()
    }
}

impl Tabular for ApScanReport {
    fn header(&self) -> String {
        "family,n,trials,closed_form,with_3ap,with_repeat,fraction_3ap,fraction_repeat,max_length,first_hit_seed"
            .to_string()
    }

    fn rows(&self) -> Vec<String> {
        self.families
            .iter()
            .map(|f| {
                format!(
                    "{},{},{},{},{},{},{},{},{},{}",
                    field(&f.name),
                    f.n,
                    f.trials,
                    f.closed_form,
                    f.with_3ap,
                    f.with_repeat,
                    f.fraction_3ap,
                    f.fraction_repeat,
                    f.max_length,
                    opt(f.first_hit.as_ref().map(|h| h.seed))
                )
            })
            .collect()
    }
}

impl Tabular for CheegerRunReport {
    fn header(&self) -> String {
        "index,seed,n,beta,d,lambda,ergodic,mask,phi,dirichlet,variance,m,bound,margin,passed,error".to_string()
    }

    fn rows(&self) -> Vec<String> {
        self.rows
            .iter()
            .map(|r| {
                let i = &r.instance;
                let c = r.report.as_ref();
                format!(
                    "{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{}",
                    i.index,
                    i.seed,
                    i.n,
                    i.beta,
                    r.d,
                    r.lambda,
                    r.ergodic,
                    opt(c.map(|c| c.witness.mask.clone())),
                    opt(c.map(|c| c.witness.phi)),
                    opt(c.map(|c| c.dirichlet)),
                    opt(c.map(|c| c.variance)),
                    opt(c.map(|c| c.m.m)),
                    opt(c.map(|c| c.bound)),
                    opt(c.map(|c| c.margin)),
                    r.passed,
                    field(&opt(r.error.clone()))
                )
            })
            .collect()
    }
}

impl Tabular for VerifyReport {
    fn header(&self) -> String {
        "suite,trials,checked,skipped,max_residual,max_excess,passed,replay_seed,detail".to_string()
    }

    fn rows(&self) -> Vec<String> {
        self.suites
            .iter()
            .map(|s| {
                format!(
                    "{},{},{},{},{:e},{:e},{},{},{}",
                    s.suite.name(),
                    s.trials,
                    s.checked,
                    s.skipped,
                    s.max_residual,
                    s.max_excess,
                    s.passed,
                    opt(s.failure.as_ref().map(|f| f.seed)),
                    field(&opt(s.failure.as_ref().map(|f| f.detail.clone())))
                )
            })
            .collect()
    }
}

pub fn render<T: Serialize + Tabular>(report: &T, format: Format) -> Result<String> {
    Ok(match format {
        Format::Json => serde_json::to_string_pretty(report)? + "\n",
        Format::Csv => {
            let mut out = report.header();
            out.push('\n');
            for row in report.rows() {
                out.push_str(&row);
                out.push('\n');
            }
            out
        }
    })
}

/// Writes to `path`, or standard output when absent.
pub fn emit<T: Serialize + Tabular>(report: &T, format: Format, path: Option<&Path>) -> Result<()> {
    let text = render(report, format)?;
    match path {
        Some(p) => std::fs::write(p, text)?,
        None => print!("{text}"),
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::harness::config::ExperimentConfig;
    use crate::harness::experiments::run_comparison;

    #[test]
    fn csv_has_one_line_per_row() {
        let cfg = ExperimentConfig::from_json(
            r#"{"model": {"kind": "pauli-sum", "n": 1, "terms": [[1.0, "Z"]]}, "betas": [0.0, 1.0], "trials": 2}"#,
        )
        .unwrap();
        let rep = run_comparison(&cfg).unwrap();
        let csv = render(&rep, Format::Csv).unwrap();
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines.len(), 3);
        let cols = lines[0].split(',').count();
        assert!(lines.iter().all(|l| l.split(',').count() == cols));
        let json: serde_json::Value = serde_json::from_str(&render(&rep, Format::Json).unwrap()).unwrap();
        assert_eq!(json["rows"].as_array().unwrap().len(), 2);
    }

    #[test]
    fn csv_fields_are_quoted() {
        assert_eq!(field("a,b"), "\"a,b\"");
        assert_eq!(field("plain"), "plain");
    }
}
