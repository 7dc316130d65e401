use serde::{Deserialize, Serialize};

use crate::eval::evaluate::EvalMetrics;
use crate::model::MethodKind;

/// Mean and standard error of per-seed values. The standard error is the
/// sample standard deviation over `sqrt(n)` and is undefined for one seed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub mean: f64,
    pub stderr: Option<f64>,
    pub values: Vec<f64>,
}

pub fn summarize(values: &[f64]) -> Summary {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let stderr = (values.len() > 1).then(|| {
        let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
        var.sqrt() / n.sqrt()
    });
    Summary {
        mean,
        stderr,
        values: values.to_vec(),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecallSummary {
    pub r: usize,
    pub summary: Summary,
}

/// One method's metrics aggregated over seeds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub method: MethodKind,
    pub n_examples: usize,
    pub cross_entropy: Summary,
    pub recall: Vec<RecallSummary>,
    pub parameters: usize,
    pub seeds: Vec<u64>,
}

impl EvalReport {
    /// Aggregates per-seed metrics that share the same ranks.
    pub fn from_runs(
        method: MethodKind,
        parameters: usize,
        seeds: &[u64],
        runs: &[EvalMetrics],
    ) -> Self {
        let ce: Vec<f64> = runs.iter().map(|m| m.cross_entropy).collect();
        let recall = runs[0]
            .recall
            .iter()
            .map(|&(r, _)| RecallSummary {
                r,
                summary: summarize(
                    &runs
                        .iter()
                        .map(|m| m.recall_at(r).unwrap_or(f64::NAN))
                        .collect::<Vec<_>>(),
                ),
            })
            .collect();
        Self {
            method,
            n_examples: runs[0].n_examples,
            cross_entropy: summarize(&ce),
            recall,
            parameters,
            seeds: seeds.to_vec(),
        }
    }

    pub fn recall_mean(&self, r: usize) -> Option<f64> {
        self.recall
            .iter()
            .find(|s| s.r == r)
            .map(|s| s.summary.mean)
    }
}

/// `(value - base) / base`.
pub fn relative_improvement(value: f64, base: f64) -> f64 {
    (value - base) / base
}

/// Relative changes of one method against the unconditioned baseline.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Improvement {
    pub method: MethodKind,
    /// Relative reduction of cross-entropy (positive is better).
    pub cross_entropy: f64,
    pub recall: Vec<(usize, f64)>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    pub reports: Vec<EvalReport>,
    /// Empty when no unconditioned run is part of the comparison.
    pub improvements: Vec<Improvement>,
}

impl Comparison {
    pub fn new(reports: Vec<EvalReport>) -> Self {
        let base = reports
            .iter()
            .find(|r| r.method == MethodKind::None)
            .cloned();
        let improvements = match base {
            Some(base) => reports
                .iter()
                .filter(|r| r.method != MethodKind::None)
                .map(|r| Improvement {
                    method: r.method,
                    cross_entropy: -relative_improvement(
                        r.cross_entropy.mean,
                        base.cross_entropy.mean,
                    ),
                    recall: r
                        .recall
                        .iter()
                        .map(|s| {
                            (
                                s.r,
                                relative_improvement(
                                    s.summary.mean,
                                    base.recall_mean(s.r).unwrap_or(f64::NAN),
                                ),
                            )
                        })
                        .collect(),
                })
                .collect(),
            None => Vec::new(),
        };
        Self {
            reports,
            improvements,
        }
    }

    pub fn report(&self, method: MethodKind) -> Option<&EvalReport> {
        self.reports.iter().find(|r| r.method == method)
    }

    pub fn improvement(&self, method: MethodKind) -> Option<&Improvement> {
        self.improvements.iter().find(|i| i.method == method)
    }

    /// Aligned text table: method, cross-entropy, recall in percent,
    /// parameter count and the relative r@1 change against [None].
    pub fn to_table(&self) -> String {
        let ranks: Vec<usize> = self
            .reports
            .first()
            .map(|r| r.recall.iter().map(|s| s.r).collect())
            .unwrap_or_default();
        let mut header = vec!["Method".to_string(), "Cross-entropy".to_string()];
        header.extend(ranks.iter().map(|r| format!("Recall@{r}")));
        header.push("Parameters".into());
        header.push("vs [None] r@1".into());

        let mut rows = vec![header];
        for rep in &self.reports {
            let mut row = vec![
                rep.method.label().to_string(),
                fmt_summary(&rep.cross_entropy, 1.0, 3),
            ];
            row.extend(rep.recall.iter().map(|s| fmt_summary(&s.summary, 100.0, 2)));
            row.push(group_thousands(rep.parameters));
            row.push(
                match self.improvement(rep.method).and_then(|i| i.recall.first()) {
                    Some((_, v)) => format!("{:+.0}%", v * 100.0),
                    None => "-".into(),
                },
            );
            rows.push(row);
        }

        let widths: Vec<usize> = (0..rows[0].len())
            .map(|c| rows.iter().map(|r| r[c].chars().count()).max().unwrap_or(0))
            .collect();
        let mut out = String::new();
        for row in &rows {
            let cells: Vec<String> = row
                .iter()
                .zip(&widths)
                .enumerate()
                .map(|(c, (cell, w))| {
                    if c == 0 {
                        format!("{cell:<w$}")
                    } else {
                        format!("{cell:>w$}")
                    }
                })
                .collect();
            out.push_str(cells.join("  ").trim_end());
            out.push('\n');
        }
        out
    }
}

fn fmt_summary(s: &Summary, scale: f64, digits: usize) -> String {
    match s.stderr {
        Some(se) => format!("{:.digits$} ± {:.digits$}", s.mean * scale, se * scale),
        None => format!("{:.digits$} ± n/a", s.mean * scale),
    }
}

fn group_thousands(n: usize) -> String {
    let digits = n.to_string();
    let mut out = String::new();
    for (i, ch) in digits.chars().enumerate() {
        if i > 0 && (digits.len() - i).is_multiple_of(3) {
            out.push(',');
        }
        out.push(ch);
    }
    out
}
