//! Exhaustive-search ground truth for capacity-constrained association.

use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scenario::{Dataset, Point3, RateMatrix};

/// Transmitter index chosen for each receiver.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Association(pub Vec<usize>);

impl Association {
    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[usize] {
        &self.0
    }

    /// Number of receivers served by each of `n_tx` transmitters.
    pub fn loads(&self, n_tx: usize) -> Vec<usize> {
        let mut loads = vec![0; n_tx];
        for &j in &self.0 {
            if j < n_tx {
                loads[j] += 1;
            }
        }
        loads
    }
}

impl From<Vec<usize>> for Association {
    fn from(v: Vec<usize>) -> Self {
        Self(v)
    }
}

/// Default capacity: `ceil(N/M) + 1`, loose enough that the constraint only
/// binds when receivers cluster around one transmitter.
pub fn default_limit(n_rx: usize, n_tx: usize) -> usize {
    n_rx.div_ceil(n_tx.max(1)) + 1
}

pub fn total_rate(rates: &RateMatrix, a: &Association) -> Result<f64> {
    if a.len() != rates.n_rx() {
        return Err(Error::Shape(format!(
            "association has {} entries for {} receivers",
            a.len(),
            rates.n_rx()
        )));
    }
    let mut total = 0.0;
    for (i, &j) in a.0.iter().enumerate() {
        if j >= rates.n_tx() {
            return Err(Error::Shape(format!(
                "receiver {i} assigned to transmitter {j} of {}",
                rates.n_tx()
            )));
        }
        total += rates.get(i, j);
    }
    Ok(total)
}

/// True iff no transmitter serves more than `limit` receivers.
pub fn is_feasible(a: &Association, n_tx: usize, limit: usize) -> bool {
    a.loads(n_tx).iter().all(|&l| l <= limit)
}

struct Search<'a> {
    rates: &'a RateMatrix,
    limit: usize,
    /// `suffix_max[i]` = Σ_{k ≥ i} max_j rates[k][j]
    suffix_max: Vec<f64>,
    slack: f64,
    loads: Vec<usize>,
    current: Vec<usize>,
    best: Option<(Vec<usize>, f64)>,
}

impl Search<'_> {
    fn visit(&mut self, i: usize, partial: f64) {
        let n = self.rates.n_rx();
        if i == n {
            // Lexicographic visiting order + strict improvement keeps the
            // smallest assignment among equal totals.
            if self.best.as_ref().is_none_or(|(_, b)| partial > *b) {
                self.best = Some((self.current.clone(), partial));
            }
            return;
        }
        if let Some((_, best)) = &self.best {
            if partial + self.suffix_max[i] < *best - self.slack {
                return;
            }
        }
        for j in 0..self.rates.n_tx() {
            if self.loads[j] == self.limit {
                continue;
            }
            self.loads[j] += 1;
            self.current[i] = j;
            self.visit(i + 1, partial + self.rates.get(i, j));
            self.loads[j] -= 1;
        }
    }
}

/// Maximizes total rate over all `M^N` assignments subject to the per-TX
/// capacity `limit`. Ties go to the lexicographically smallest assignment.
///
/// Infeasible branches and branches whose optimistic bound cannot beat the
/// incumbent are pruned; the bound carries a rounding slack so that pruning
/// never changes the result.
pub fn solve_optimal(rates: &RateMatrix, limit: usize) -> Result<(Association, f64)> {
    let (n, m) = (rates.n_rx(), rates.n_tx());
    if n > m.saturating_mul(limit) {
        return Err(Error::Infeasible {
            step: None,
            n_rx: n,
            n_tx: m,
            limit,
        });
    }
    let row_max: Vec<f64> = rates
        .rows()
        .map(|r| r.iter().copied().fold(f64::NEG_INFINITY, f64::max))
        .collect();
    let mut suffix_max = vec![0.0; n + 1];
    for i in (0..n).rev() {
        suffix_max[i] = suffix_max[i + 1] + row_max[i];
    }
    let magnitude: f64 = rates
        .rows()
        .map(|r| r.iter().fold(0.0f64, |a, v| a.max(v.abs())))
        .sum();
    let mut search = Search {
        rates,
        limit,
        suffix_max,
        slack: 8.0 * (n as f64 + 1.0) * f64::EPSILON * magnitude,
        loads: vec![0; m],
        current: vec![0; n],
        best: None,
    };
    search.visit(0, 0.0);
    let (assign, total) = search.best.expect("feasible instance has a solution");
    Ok((Association(assign), total))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabeledInstance {
    pub step: usize,
    pub rates: RateMatrix,
    #[serde(default)]
    pub positions: Vec<Point3>,
    pub optimal: Association,
    pub optimal_total: f64,
    pub limit: usize,
}

impl LabeledInstance {
    pub fn from_rates(step: usize, rates: RateMatrix, limit: usize) -> Result<Self> {
        let (optimal, optimal_total) = solve_optimal(&rates, limit)?;
        Ok(Self {
            step,
            rates,
            positions: Vec::new(),
            optimal,
            optimal_total,
            limit,
        })
    }

    pub fn n_rx(&self) -> usize {
        self.rates.n_rx()
    }

    pub fn n_tx(&self) -> usize {
        self.rates.n_tx()
    }

    /// Checks the record's internal consistency: label shape and range,
    /// feasibility, and that `optimal_total` is the label's exact total.
    pub fn validate(&self) -> Result<()> {
        let n = self.n_rx();
        if !self.positions.is_empty() && self.positions.len() != n {
            return Err(Error::Shape(format!(
                "step {}: {} positions for {n} receivers",
                self.step,
                self.positions.len()
            )));
        }
        if self.positions.iter().flatten().any(|c| !c.is_finite()) {
            return Err(Error::NonFinite(format!("step {}: position", self.step)));
        }
        let total = total_rate(&self.rates, &self.optimal)?;
        if !is_feasible(&self.optimal, self.n_tx(), self.limit) {
            return Err(Error::Format(format!(
                "step {}: label violates limit {}",
                self.step, self.limit
            )));
        }
        if total != self.optimal_total {
            return Err(Error::Format(format!(
                "step {}: optimal_total {} != label total {total}",
                self.step, self.optimal_total
            )));
        }
        Ok(())
    }
}

/// Labels every instance, in order. Instances are solved in parallel on the
/// current rayon pool.
pub fn label_dataset(ds: &Dataset, limit: usize) -> Result<Vec<LabeledInstance>> {
    ds.instances
        .par_iter()
        .map(|inst| {
            let (optimal, optimal_total) = solve_optimal(&inst.rates, limit).map_err(|e| match e {
                Error::Infeasible {
                    n_rx, n_tx, limit, ..
                } => Error::Infeasible {
                    step: Some(inst.step),
                    n_rx,
                    n_tx,
                    limit,
                },
                other => other,
            })?;
            Ok(LabeledInstance {
                step: inst.step,
                rates: inst.rates.clone(),
                positions: inst.positions.clone(),
                optimal,
                optimal_total,
                limit,
            })
        })
        .collect()
}

pub fn write_labeled_jsonl<W: Write>(records: &[LabeledInstance], mut out: W) -> Result<()> {
    for r in records {
        serde_json::to_writer(&mut out, r)?;
        out.write_all(b"\n")?;
    }
    Ok(())
}

/// Parses labeled JSON Lines. All records must share one matrix shape and
/// pass [`LabeledInstance::validate`].
pub fn parse_labeled_jsonl(text: &str) -> Result<Vec<LabeledInstance>> {
    let mut out: Vec<LabeledInstance> = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let rec: LabeledInstance = serde_json::from_str(line)
            .map_err(|e| Error::Format(format!("line {}: {e}", lineno + 1)))?;
        rec.rates.check_nonnegative()?;
        rec.validate()?;
        if let Some(first) = out.first() {
            if (first.n_rx(), first.n_tx()) != (rec.n_rx(), rec.n_tx()) {
                return Err(Error::Shape(format!(
                    "line {}: shape {}x{} differs from {}x{}",
                    lineno + 1,
                    rec.n_rx(),
                    rec.n_tx(),
                    first.n_rx(),
                    first.n_tx()
                )));
            }
        }
        out.push(rec);
    }
    Ok(out)
}
