//! Renders benchmark results as markdown or CSV tables.

use causal_bench_core::benchmark::{Approach, BenchmarkReport, BenchmarkRow};

use crate::error::CliError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum Format {
    Md,
    Csv,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum Layout {
    /// One line per method and outcome.
    Rows,
    /// MSE with methods down and outcomes across.
    Mse,
    /// Verdicts grouped by approach, outcomes across.
    Verdicts,
}

pub fn render(report: &BenchmarkReport, format: Format, layout: Layout) -> Result<String, CliError> {
    match format {
        Format::Md => Ok(markdown(report, layout)),
        Format::Csv => csv_table(report, layout),
    }
}

/// Method ids in report order, without duplicates.
fn methods(report: &BenchmarkReport) -> Vec<(&str, Approach)> {
    let mut out: Vec<(&str, Approach)> = Vec::new();
    for r in &report.rows {
        if !out.iter().any(|(id, _)| *id == r.method_id()) {
            out.push((r.method_id(), r.approach));
        }
    }
    out
}

fn verdict_cell(r: &BenchmarkRow) -> String {
    let mut s = r.verdict.symbol().to_string();
    if r.flagged {
        s.push('†');
    }
    s
}

fn md_row(cells: &[String]) -> String {
    format!("| {} |\n", cells.join(" | "))
}

fn markdown(report: &BenchmarkReport, layout: Layout) -> String {
    let mut out = String::new();
    let outcomes = &report.meta.outcomes;
    match layout {
        Layout::Rows => {
            let head = ["Approach", "Method", "Outcome", "Estimand", "Estimate", "Std. bias", "95% CI", "MSE", "Verdict"];
            out += &md_row(&head.map(String::from));
            out += &md_row(&head.map(|_| "---".to_string()));
            for r in &report.rows {
                out += &md_row(&[
                    r.approach.label().into(),
                    r.method_id().into(),
                    r.outcome.clone(),
                    r.estimate.estimand.to_string(),
                    format!("{:.3}", r.estimate.tau),
                    format!("{:.3}", r.std_bias),
                    format!("[{:.3}, {:.3}]", r.std_bias_ci.lo, r.std_bias_ci.hi),
                    format!("{:.3}", r.mse),
                    verdict_cell(r),
                ]);
            }
        }
        Layout::Mse => {
            let mut head = vec![String::new()];
            head.extend(outcomes.iter().cloned());
            out += &md_row(&head);
            out += &md_row(&vec!["---".to_string(); head.len()]);
            for (id, _) in methods(report) {
                let mut cells = vec![id.to_string()];
                cells.extend(outcomes.iter().map(|o| report.row(id, o).map_or("".into(), |r| format!("{:.2}", r.mse))));
                out += &md_row(&cells);
            }
        }
        Layout::Verdicts => {
            let mut head = vec![String::new(), String::new()];
            head.extend(outcomes.iter().cloned());
            out += &md_row(&head);
            out += &md_row(&vec!["---".to_string(); head.len()]);
            let ms = methods(report);
            for panel in [Approach::OutcomeModel, Approach::TreatmentModel, Approach::OutcomeAndTreatment] {
                let in_panel: Vec<&str> = ms.iter().filter(|(_, a)| *a == panel).map(|(id, _)| *id).collect();
                if in_panel.is_empty() {
                    continue;
                }
                let mut label = vec![format!("**{}**", panel.label()), String::new()];
                label.extend(outcomes.iter().map(|_| String::new()));
                out += &md_row(&label);
                for id in in_panel {
                    let mut cells = vec![String::new(), id.to_string()];
                    cells.extend(outcomes.iter().map(|o| report.row(id, o).map_or("".into(), verdict_cell)));
                    out += &md_row(&cells);
                }
            }
        }
    }
    if report.rows.iter().any(|r| r.flagged) {
        out += "\n† more than 5% of bootstrap replicates failed.\n";
    }
    if !report.failures.is_empty() {
        out += "\nFailed:\n\n";
        for f in &report.failures {
            out += &format!("- {} on {}: {}\n", f.method_id, f.outcome, f.error);
        }
    }
    out
}

fn csv_table(report: &BenchmarkReport, layout: Layout) -> Result<String, CliError> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let err = |e: csv::Error| CliError::Data(e.to_string());
    let outcomes = &report.meta.outcomes;
    match layout {
        Layout::Rows => {
            w.write_record([
                "method_id", "approach", "outcome", "estimand", "tau", "se", "ci_lo", "ci_hi", "n_used", "std_bias",
                "std_bias_lo", "std_bias_hi", "mse", "verdict", "flagged", "settings_hash", "seed",
            ])
            .map_err(err)?;
            for r in &report.rows {
                let e = &r.estimate;
                w.write_record([
                    r.method_id().to_string(),
                    serde_json::to_value(r.approach).expect("enum").as_str().unwrap_or_default().to_string(),
                    r.outcome.clone(),
                    e.estimand.to_string(),
                    e.tau.to_string(),
                    e.se.to_string(),
                    e.ci.lo.to_string(),
                    e.ci.hi.to_string(),
                    e.n_used.to_string(),
                    r.std_bias.to_string(),
                    r.std_bias_ci.lo.to_string(),
                    r.std_bias_ci.hi.to_string(),
                    r.mse.to_string(),
                    r.verdict.as_str().to_string(),
                    r.flagged.to_string(),
                    r.settings_hash.clone(),
                    r.seed.to_string(),
                ])
                .map_err(err)?;
            }
        }
        Layout::Mse | Layout::Verdicts => {
            let mut head = vec!["method_id".to_string()];
            head.extend(outcomes.iter().cloned());
            w.write_record(&head).map_err(err)?;
            for (id, _) in methods(report) {
                let mut rec = vec![id.to_string()];
                rec.extend(outcomes.iter().map(|o| match (report.row(id, o), layout) {
                    (Some(r), Layout::Mse) => r.mse.to_string(),
                    (Some(r), _) => r.verdict.as_str().to_string(),
                    (None, _) => String::new(),
                }));
                w.write_record(&rec).map_err(err)?;
            }
        }
    }
    let bytes = w.into_inner().map_err(|e| CliError::Data(e.to_string()))?;
    Ok(String::from_utf8(bytes).expect("utf-8 csv"))
}
