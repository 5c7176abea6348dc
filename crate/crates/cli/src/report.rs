//! CSV and text renderings of results.
//!
//! Numbers in CSV output use the shortest decimal form that reads back to the same `f64`;
//! unavailable statistics are written as `NA`.

use cace_core::data::format_float;
use cace_core::estimation::PercentileInterval;
use cace_core::simulation::{Method, StudyReport};
use cace_core::OutcomeFamily;

pub const NA: &str = "NA";

fn opt(v: Option<f64>) -> String {
    v.map_or_else(|| NA.to_string(), format_float)
}

/// `0.95 -> "95"`, `0.975 -> "97.5"`.
pub fn level_label(level: f64) -> String {
    format_float((level * 100.0 * 1e6).round() / 1e6)
}

/// One row of an analysis report.
#[derive(Debug, Clone, PartialEq)]
pub struct FitRow {
    pub method: Method,
    /// Family of the two-step fit; the latent-ignorable fit is always homoskedastic normal.
    pub family: OutcomeFamily,
    pub estimate: f64,
    pub std_error: Option<f64>,
    pub intervals: Vec<PercentileInterval>,
}

impl FitRow {
    pub fn label(&self) -> String {
        match self.method {
            Method::Li => "LI".to_string(),
            Method::Odn => {
                let short = match self.family {
                    OutcomeFamily::HomoNormal => "homo",
                    OutcomeFamily::HeteroNormal => "hetero",
                    other => other.name(),
                };
                format!("ODN({short})")
            }
        }
    }
}

pub fn fit_csv(rows: &[FitRow], levels: &[f64]) -> String {
    let mut out = String::from("method,family,estimate,se");
    for l in levels {
        let p = level_label(*l);
        out.push_str(&format!(",ci{p}_lo,ci{p}_hi"));
    }
    out.push('\n');
    for r in rows {
        out.push_str(&format!(
            "{},{},{},{}",
            r.label(),
            r.family.name(),
            format_float(r.estimate),
            opt(r.std_error)
        ));
        for l in levels {
            let ci = r.intervals.iter().find(|i| (i.level - l).abs() < 1e-12);
            out.push_str(&format!(",{},{}", opt(ci.map(|c| c.lower)), opt(ci.map(|c| c.upper))));
        }
        out.push('\n');
    }
    out
}

/// Aligned table with four decimals.
pub fn fit_text(rows: &[FitRow], levels: &[f64]) -> String {
    let f4 = |v: Option<f64>| v.map_or_else(|| NA.to_string(), |x| format!("{x:.4}"));
    let mut header = vec!["Method".to_string(), "Estimate".to_string(), "SE".to_string()];
    header.extend(levels.iter().map(|l| format!("{}% CI", level_label(*l))));
    let mut table = vec![header];
    for r in rows {
        let mut line = vec![r.label(), f4(Some(r.estimate)), f4(r.std_error)];
        for l in levels {
            let ci = r.intervals.iter().find(|i| (i.level - l).abs() < 1e-12);
            line.push(match ci {
                Some(c) => format!("[{:.4}, {:.4}]", c.lower, c.upper),
                None => NA.to_string(),
            });
        }
        table.push(line);
    }
    let widths: Vec<usize> = (0..table[0].len())
        .map(|j| table.iter().map(|row| row[j].len()).max().unwrap_or(0))
        .collect();
    let mut out = String::new();
    for row in &table {
        let cells: Vec<String> = row
            .iter()
            .enumerate()
            .map(|(j, c)| if j == 0 { format!("{c:<w$}", w = widths[j]) } else { format!("{c:>w$}", w = widths[j]) })
            .collect();
        out.push_str(cells.join("  ").trim_end());
        out.push('\n');
    }
    out
}

pub const STUDY_HEADER: &str = "scenario,n,method,reps,true_cace,bias,std_dev,cp95,ci95_lo,ci95_hi,failures";

/// One row per report; `failures` is the fraction of replicates whose fit failed.
pub fn study_csv(reports: &[StudyReport]) -> String {
    let mut out = format!("{STUDY_HEADER}\n");
    for r in reports {
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{},{},{},{}\n",
            r.scenario,
            r.n,
            r.method,
            r.reps,
            format_float(r.true_cace),
            opt(r.bias),
            opt(r.std_dev),
            opt(r.cp95),
            opt(r.ci95_lo),
            opt(r.ci95_hi),
            format_float(r.failure_fraction()),
        ));
    }
    out
}

pub const SWEEP_HEADER: &str = "delta,method,bias,cp95";

/// Long format, one row per `(delta, method)`.
pub fn sweep_csv(rows: &[(f64, StudyReport)]) -> String {
    let mut out = format!("{SWEEP_HEADER}\n");
    for (delta, r) in rows {
        out.push_str(&format!("{},{},{},{}\n", format_float(*delta), r.method, opt(r.bias), opt(r.cp95)));
    }
    out
}
