//! Comparison of model predictions against oracle labels.

use std::io::Write;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::models::Model;
use crate::oracle::{is_feasible, total_rate, Association, LabeledInstance};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub step: usize,
    pub per_rx_accuracy: f64,
    pub instance_exact: u8,
    pub achieved_rate: f64,
    pub optimal_rate: f64,
    /// `optimal - achieved`; positive means a shortfall.
    pub rate_error: f64,
    pub violated: u8,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub instances: usize,
    /// Correct receiver decisions over all receiver decisions (confusion
    /// diagonal over confusion total).
    pub mean_per_rx_accuracy: f64,
    pub mean_instance_accuracy: f64,
    pub mean_rate_error: f64,
    pub violation_rate: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub records: Vec<StepRecord>,
    /// `confusion[true_tx][predicted_tx]`
    pub confusion: Vec<Vec<u64>>,
    pub summary: Summary,
}

/// `counts[t][p]` = number of positions where `truth = t` and `pred = p`.
pub fn confusion_matrix(truth: &[usize], pred: &[usize], m: usize) -> Result<Vec<Vec<u64>>> {
    if truth.len() != pred.len() {
        return Err(Error::Shape(format!(
            "{} true labels vs {} predictions",
            truth.len(),
            pred.len()
        )));
    }
    let mut counts = vec![vec![0u64; m]; m];
    for (&t, &p) in truth.iter().zip(pred) {
        if t >= m || p >= m {
            return Err(Error::Shape(format!("label ({t}, {p}) out of range for {m} classes")));
        }
        counts[t][p] += 1;
    }
    Ok(counts)
}

fn step_record(inst: &LabeledInstance, pred: &Association) -> Result<StepRecord> {
    let n = inst.n_rx();
    let correct = pred
        .as_slice()
        .iter()
        .zip(inst.optimal.as_slice())
        .filter(|(p, t)| p == t)
        .count();
    let achieved = total_rate(&inst.rates, pred)?;
    Ok(StepRecord {
        step: inst.step,
        per_rx_accuracy: correct as f64 / n as f64,
        instance_exact: (correct == n) as u8,
        achieved_rate: achieved,
        optimal_rate: inst.optimal_total,
        rate_error: inst.optimal_total - achieved,
        violated: (!is_feasible(pred, inst.n_tx(), inst.limit)) as u8,
    })
}

/// Builds a report from precomputed predictions, one per labeled instance.
pub fn evaluate_predictions(
    labeled: &[LabeledInstance],
    predictions: &[Association],
    n_tx: usize,
) -> Result<EvalReport> {
    if labeled.len() != predictions.len() {
        return Err(Error::Shape(format!(
            "{} instances vs {} predictions",
            labeled.len(),
            predictions.len()
        )));
    }
    let mut records = Vec::with_capacity(labeled.len());
    let mut confusion = vec![vec![0u64; n_tx]; n_tx];
    for (inst, pred) in labeled.iter().zip(predictions) {
        if inst.n_tx() != n_tx {
            return Err(Error::Shape(format!(
                "step {}: {} transmitters, expected {n_tx}",
                inst.step,
                inst.n_tx()
            )));
        }
        records.push(step_record(inst, pred)?);
        let c = confusion_matrix(inst.optimal.as_slice(), pred.as_slice(), n_tx)?;
        for (row, add) in confusion.iter_mut().zip(c) {
            for (v, a) in row.iter_mut().zip(add) {
                *v += a;
            }
        }
    }
    let k = records.len();
    let decisions: u64 = confusion.iter().flatten().sum();
    let correct: u64 = (0..n_tx).map(|j| confusion[j][j]).sum();
    let mean = |f: &dyn Fn(&StepRecord) -> f64| {
        if k == 0 {
            0.0
        } else {
            records.iter().map(f).sum::<f64>() / k as f64
        }
    };
    let summary = Summary {
        instances: k,
        mean_per_rx_accuracy: if decisions == 0 {
            0.0
        } else {
            correct as f64 / decisions as f64
        },
        mean_instance_accuracy: mean(&|r| f64::from(r.instance_exact)),
        mean_rate_error: mean(&|r| r.rate_error),
        violation_rate: mean(&|r| f64::from(r.violated)),
    };
    Ok(EvalReport {
        records,
        confusion,
        summary,
    })
}

/// Predicts every instance (in parallel on the current rayon pool) and
/// compares against its label.
pub fn evaluate(model: &Model, labeled: &[LabeledInstance]) -> Result<EvalReport> {
    for inst in labeled {
        inst.validate()?;
    }
    let predictions = labeled
        .par_iter()
        .map(|inst| model.predict(&inst.rates))
        .collect::<Result<Vec<_>>>()?;
    evaluate_predictions(labeled, &predictions, model.n_tx())
}

/// `%g`-style formatting with 6 significant digits.
pub fn format_sig6(x: f64) -> String {
    if x == 0.0 {
        return "0".into();
    }
    if !x.is_finite() {
        return x.to_string();
    }
    // Take the exponent after rounding so 999999.7 becomes 1e+06.
    let sci = format!("{x:.5e}");
    let (mantissa, e) = sci.split_once('e').expect("exponent present");
    let e: i32 = e.parse().expect("integer exponent");
    if (-5..6).contains(&e) {
        let decimals = (5 - e).max(0) as usize;
        let fixed = format!("{x:.decimals$}");
        trim_zeros(&fixed)
    } else {
        format!("{}e{}{:02}", trim_zeros(mantissa), if e < 0 { '-' } else { '+' }, e.abs())
    }
}

fn trim_zeros(s: &str) -> String {
    if s.contains('.') {
        s.trim_end_matches('0').trim_end_matches('.').to_string()
    } else {
        s.to_string()
    }
}

pub const CSV_HEADER: &str =
    "step,per_rx_accuracy,instance_exact,achieved_rate,optimal_rate,rate_error,violated";

pub fn write_csv<W: Write>(report: &EvalReport, mut out: W) -> Result<()> {
    writeln!(out, "{CSV_HEADER}")?;
    for r in &report.records {
        writeln!(
            out,
            "{},{},{},{},{},{},{}",
            r.step,
            format_sig6(r.per_rx_accuracy),
            r.instance_exact,
            format_sig6(r.achieved_rate),
            format_sig6(r.optimal_rate),
            format_sig6(r.rate_error),
            r.violated
        )?;
    }
    Ok(())
}

pub fn write_report(report: &EvalReport, json_path: &Path, csv_path: &Path) -> Result<()> {
    std::fs::write(json_path, serde_json::to_string_pretty(report)?)?;
    let mut csv = Vec::new();
    write_csv(report, &mut csv)?;
    std::fs::write(csv_path, csv)?;
    Ok(())
}
