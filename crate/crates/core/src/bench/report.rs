//! Evaluation reports: an aligned text table and a fixed-column CSV.
//!
//! CSV schema, one header line and one row per class, then an overall row:
//!
//! ```text
//! class,total,correct,rate
//! s01,3,3,100.000
//! __overall__,60,59,98.333
//! ```
//!
//! `rate` is a percentage printed with three decimals.

use std::fmt::Write as _;

use crate::error::{Error, Result};
use crate::recognizer::Algorithm;

pub const OVERALL_ROW: &str = "__overall__";

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ClassTally {
    pub class_id: String,
    pub total: usize,
    pub correct: usize,
}

impl ClassTally {
    pub fn rate(&self) -> f64 {
        percent(self.correct, self.total)
    }
}

fn percent(correct: usize, total: usize) -> f64 {
    if total == 0 {
        0.0
    } else {
        100.0 * correct as f64 / total as f64
    }
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord)]
pub struct Confusion {
    pub truth: String,
    pub predicted: String,
    pub count: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub algorithm: Algorithm,
    pub per_class: Vec<ClassTally>,
    /// Misclassifications, sorted by `(truth, predicted)`.
    pub confusions: Vec<Confusion>,
    pub mean_probe_seconds: f64,
    /// Files skipped while loading the dataset.
    pub skipped: usize,
    pub config: Vec<(String, String)>,
}

impl EvalReport {
    pub fn total(&self) -> usize {
        self.per_class.iter().map(|c| c.total).sum()
    }

    pub fn correct(&self) -> usize {
        self.per_class.iter().map(|c| c.correct).sum()
    }

    /// `100 * sum(correct) / sum(total)`; 0 for an empty probe set.
    pub fn rate(&self) -> f64 {
        percent(self.correct(), self.total())
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("class,total,correct,rate\n");
        for c in &self.per_class {
            let _ = writeln!(out, "{},{},{},{:.3}", c.class_id, c.total, c.correct, c.rate());
        }
        let _ = writeln!(out, "{OVERALL_ROW},{},{},{:.3}", self.total(), self.correct(), self.rate());
        out
    }

    pub fn to_table(&self) -> String {
        let width = self
            .per_class
            .iter()
            .map(|c| c.class_id.len())
            .chain([OVERALL_ROW.len(), 5])
            .max()
            .unwrap_or(5);
        let mut out = String::new();
        let _ = writeln!(out, "algorithm: {}", self.algorithm);
        for (k, v) in &self.config {
            let _ = writeln!(out, "{k}: {v}");
        }
        let _ = writeln!(out, "{:<width$}  {:>7}  {:>7}  {:>8}", "class", "total", "correct", "rate");
        for c in &self.per_class {
            let _ = writeln!(
                out,
                "{:<width$}  {:>7}  {:>7}  {:>8.3}",
                c.class_id,
                c.total,
                c.correct,
                c.rate()
            );
        }
        let _ = writeln!(
            out,
            "{:<width$}  {:>7}  {:>7}  {:>8.3}",
            "overall",
            self.total(),
            self.correct(),
            self.rate()
        );
        let _ = writeln!(out, "mean time per probe: {:.4} s", self.mean_probe_seconds);
        let _ = writeln!(out, "skipped files: {}", self.skipped);
        if self.confusions.is_empty() {
            let _ = writeln!(out, "confusions: none");
        } else {
            let _ = writeln!(out, "confusions (truth -> predicted: count):");
            for c in &self.confusions {
                let _ = writeln!(out, "  {} -> {}: {}", c.truth, c.predicted, c.count);
            }
        }
        out
    }
}

/// Reads the per-class rows of a report CSV, checking every printed rate
/// and the overall row against the counts.
pub fn parse_report_csv(text: &str) -> Result<Vec<ClassTally>> {
    let mut lines = text.lines().enumerate();
    let syntax = |line: usize, message: String| Error::Syntax { line: line + 1, message };
    match lines.next() {
        Some((_, "class,total,correct,rate")) => {}
        Some((i, other)) => return Err(syntax(i, format!("unexpected header {other:?}"))),
        None => return Err(syntax(0, "empty report".into())),
    }
    let mut rows = Vec::new();
    let mut overall = None;
    for (i, line) in lines {
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        let [class, total, correct, rate] = fields[..] else {
            return Err(syntax(i, format!("expected 4 fields, got {}", fields.len())));
        };
        let parse = |s: &str| s.parse::<usize>().map_err(|e| syntax(i, format!("{s:?}: {e}")));
        let tally = ClassTally {
            class_id: class.to_string(),
            total: parse(total)?,
            correct: parse(correct)?,
        };
        if tally.correct > tally.total {
            return Err(syntax(i, "correct exceeds total".into()));
        }
        if format!("{:.3}", tally.rate()) != rate {
            return Err(syntax(i, format!("rate {rate} does not match counts")));
        }
        if overall.is_some() {
            return Err(syntax(i, "rows after the overall row".into()));
        }
        if class == OVERALL_ROW {
            overall = Some((i, tally));
        } else {
            rows.push(tally);
        }
    }
    let (i, overall) = overall.ok_or_else(|| syntax(0, "missing overall row".into()))?;
    let total: usize = rows.iter().map(|r| r.total).sum();
    let correct: usize = rows.iter().map(|r| r.correct).sum();
    if (overall.total, overall.correct) != (total, correct) {
        return Err(syntax(i, "overall row disagrees with per-class rows".into()));
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn report() -> EvalReport {
        EvalReport {
            algorithm: Algorithm::Birfr,
            per_class: vec![
                ClassTally {
                    class_id: "a".into(),
                    total: 3,
                    correct: 2,
                },
                ClassTally {
                    class_id: "b".into(),
                    total: 4,
                    correct: 4,
                },
            ],
            confusions: vec![Confusion {
                truth: "a".into(),
                predicted: "b".into(),
                count: 1,
            }],
            mean_probe_seconds: 0.25,
            skipped: 0,
            config: vec![("radius".into(), "5".into())],
        }
    }

    #[test]
    fn rate_accounting() {
        let r = report();
        assert_eq!((r.total(), r.correct()), (7, 6));
        assert!((r.rate() - 600.0 / 7.0).abs() < 1e-12);
        assert_eq!(r.to_csv(), "class,total,correct,rate\na,3,2,66.667\nb,4,4,100.000\n__overall__,7,6,85.714\n");
        assert!(r.to_table().contains("a -> b: 1"));
    }

    #[test]
    fn csv_roundtrip() {
        let r = report();
        assert_eq!(parse_report_csv(&r.to_csv()).unwrap(), r.per_class);
        assert!(parse_report_csv("class,total,correct,rate\na,3,2,66.667\n").is_err());
        assert!(parse_report_csv("class,total,correct,rate\na,3,2,50.000\n__overall__,3,2,66.667\n").is_err());
        assert!(parse_report_csv("nope\n").is_err());
    }

    #[test]
    fn empty_report() {
        let mut r = report();
        r.per_class.clear();
        assert_eq!(r.rate(), 0.0);
        assert!(parse_report_csv(&r.to_csv()).unwrap().is_empty());
    }
}
