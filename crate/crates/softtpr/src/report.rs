//! Text formats for metric reports, probe tables and quantization output.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use softtpr_core::metrics::MetricReport;
use softtpr_core::probe::{sample_efficiency, SweepRow};
use softtpr_core::soft::QuantizationResult;

/// A metric report plus reconstruction statistics when a dataset was given.
#[derive(Clone, Debug, PartialEq)]
pub struct MetricSummary {
    pub iteration: usize,
    pub metrics: MetricReport,
    pub reconstruction_mse: Option<f64>,
    pub observation_variance: Option<f64>,
}

fn join<T>(xs: &[T], f: impl Fn(&T) -> String) -> String {
    xs.iter().map(f).collect::<Vec<_>>().join(";")
}

impl MetricSummary {
    /// One `key=value` per line, in a fixed order.
    pub fn to_kv(&self) -> String {
        let m = &self.metrics;
        let mut out = String::new();
        let mut line = |k: &str, v: String| writeln!(out, "{k}={v}").expect("writing to a String");
        line("iteration", self.iteration.to_string());
        line("factorvae", m.factorvae.to_string());
        line("dci", m.dci.to_string());
        line("betavae", m.betavae.to_string());
        line("mig", m.mig.to_string());
        line("factorvae_degenerate_batches", m.factorvae_degenerate_batches.to_string());
        line("betavae_zero_norm", m.betavae_zero_norm.to_string());
        line("dci_per_column", join(&m.dci_per_column, |x| x.to_string()));
        line(
            "mig_per_factor",
            join(&m.mig_per_factor, |x| x.map_or("NA".into(), |v| v.to_string())),
        );
        if let (Some(mse), Some(var)) = (self.reconstruction_mse, self.observation_variance) {
            line("reconstruction_mse", mse.to_string());
            line("observation_variance", var.to_string());
        }
        out
    }

    /// Human-readable table for the terminal.
    pub fn to_table(&self) -> String {
        let m = &self.metrics;
        let mut out = format!("checkpoint iteration {}\n{:<20}{:>10}\n", self.iteration, "metric", "score");
        for (k, v) in [("factorvae", m.factorvae), ("dci", m.dci), ("betavae", m.betavae), ("mig", m.mig)] {
            writeln!(out, "{k:<20}{v:>10.4}").expect("writing to a String");
        }
        if let (Some(mse), Some(var)) = (self.reconstruction_mse, self.observation_variance) {
            writeln!(out, "{:<20}{:>10.6}", "reconstruction_mse", mse).expect("writing to a String");
            writeln!(out, "{:<20}{:>10.6}", "observation_var", var).expect("writing to a String");
        }
        out
    }
}

/// Parse `key=value` lines.
pub fn parse_kv(text: &str) -> Result<BTreeMap<String, String>, String> {
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| {
            l.split_once('=')
                .map(|(k, v)| (k.to_string(), v.to_string()))
                .ok_or_else(|| format!("not a key=value line: `{l}`"))
        })
        .collect()
}

/// One CSV row per sweep row. Restricted-size R² and efficiency columns are
/// named after the sizes; efficiency cells are empty when withheld.
pub fn probe_table(rows: &[SweepRow]) -> String {
    let sizes: Vec<usize> = rows
        .first()
        .map(|r| r.probe.r2_by_size.iter().map(|&(n, _)| n).collect())
        .unwrap_or_default();
    let mut header = vec![
        "iteration".to_string(),
        "input_kind".into(),
        "factorvae".into(),
        "dci".into(),
        "betavae".into(),
        "mig".into(),
        "r2_all".into(),
    ];
    header.extend(sizes.iter().map(|n| format!("r2_n{n}")));
    header.extend(sizes.iter().map(|n| format!("efficiency_n{n}")));
    header.push("efficiency_status".into());
    let mut out = header.join(",");
    out.push('\n');
    for row in rows {
        let m = &row.metrics;
        let mut cells = vec![
            row.iteration.to_string(),
            row.probe.input_kind.name().to_string(),
            m.factorvae.to_string(),
            m.dci.to_string(),
            m.betavae.to_string(),
            m.mig.to_string(),
            row.probe.r2_all.to_string(),
        ];
        cells.extend(row.probe.r2_by_size.iter().map(|(_, r)| r.to_string()));
        let status = match sample_efficiency(&row.probe) {
            Ok(eff) => {
                cells.extend(eff.iter().map(|e| e.ratio.to_string()));
                if eff.iter().any(|e| e.negative) {
                    "negative"
                } else {
                    "ok"
                }
            }
            Err(_) => {
                cells.extend(sizes.iter().map(|_| String::new()));
                "withheld"
            }
        };
        cells.push(status.into());
        out.push_str(&cells.join(","));
        out.push('\n');
    }
    out
}

/// Matching (1-based), per-role residual norms, total residual and the
/// quantized TPR.
pub fn quantization_text(q: &QuantizationResult) -> String {
    let matching = q.tpr.matching.as_slice().iter().map(|j| (j + 1).to_string());
    let role: Vec<String> = q.per_role_errors.iter().map(|e| e.to_string()).collect();
    let tpr: Vec<String> = q.tpr.vector.as_slice().iter().map(|v| v.to_string()).collect();
    format!(
        "matching={}\nrole_residuals={}\nresidual={}\ntpr={}\n",
        matching.collect::<Vec<_>>().join(","),
        role.join(","),
        q.residual,
        tpr.join(",")
    )
}
