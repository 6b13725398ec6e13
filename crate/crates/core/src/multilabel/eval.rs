//! Per-label and micro-averaged precision, recall and F1.

use std::collections::BTreeSet;
use std::io::Write;

use serde::{Deserialize, Serialize};

use super::MultilabelError;
use crate::corpus::rounded_percent;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabelMetrics {
    pub label: String,
    /// Comments carrying the label in the ground truth.
    pub count: usize,
    /// `count` as a fraction of all evaluated comments.
    pub share: f64,
    pub tp: usize,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    /// Set when precision or recall had a zero denominator and was
    /// reported as 0.
    pub undefined: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MicroMetrics {
    pub tp: usize,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub n: usize,
    pub per_label: Vec<LabelMetrics>,
    pub micro: MicroMetrics,
    /// How the predictions were obtained, e.g. "5-fold cross-validation".
    pub protocol: String,
}

fn ratio(num: usize, den: usize) -> (f64, bool) {
    if den == 0 {
        (0.0, true)
    } else {
        (num as f64 / den as f64, false)
    }
}

fn f1(tp: usize, fp: usize, fn_: usize) -> f64 {
    let den = 2 * tp + fp + fn_;
    if den == 0 {
        0.0
    } else {
        2.0 * tp as f64 / den as f64
    }
}

/// Scores `predictions` against `truth` for the labels in `labels`.
pub fn evaluate(
    predictions: &[BTreeSet<String>],
    truth: &[BTreeSet<String>],
    labels: &[String],
) -> Result<EvalReport, MultilabelError> {
    if predictions.len() != truth.len() {
        return Err(MultilabelError::LengthMismatch {
            expected: truth.len(),
            got: predictions.len(),
        });
    }
    for l in predictions.iter().chain(truth).flatten() {
        if !labels.contains(l) {
            return Err(MultilabelError::UnknownLabel(l.clone()));
        }
    }
    let n = truth.len();
    let mut per_label = Vec::with_capacity(labels.len());
    let (mut stp, mut sfp, mut sfn) = (0, 0, 0);
    for label in labels {
        let (mut tp, mut fp, mut fn_) = (0, 0, 0);
        for (p, t) in predictions.iter().zip(truth) {
            match (p.contains(label), t.contains(label)) {
                (true, true) => tp += 1,
                (true, false) => fp += 1,
                (false, true) => fn_ += 1,
                (false, false) => {}
            }
        }
        let (precision, up) = ratio(tp, tp + fp);
        let (recall, ur) = ratio(tp, tp + fn_);
        per_label.push(LabelMetrics {
            label: label.clone(),
            count: tp + fn_,
            share: if n == 0 {
                0.0
            } else {
                (tp + fn_) as f64 / n as f64
            },
            tp,
            fp,
            fn_,
            precision,
            recall,
            f1: f1(tp, fp, fn_),
            undefined: up || ur,
        });
        stp += tp;
        sfp += fp;
        sfn += fn_;
    }
    Ok(EvalReport {
        n,
        per_label,
        micro: MicroMetrics {
            tp: stp,
            fp: sfp,
            fn_: sfn,
            precision: ratio(stp, stp + sfp).0,
            recall: ratio(stp, stp + sfn).0,
            f1: f1(stp, sfp, sfn),
        },
        protocol: String::new(),
    })
}

/// Micro-averaged F1 over the listed labels only.
pub fn micro_f1(
    predictions: &[BTreeSet<String>],
    truth: &[BTreeSet<String>],
    labels: &[String],
) -> f64 {
    let (mut tp, mut fp, mut fn_) = (0, 0, 0);
    for (p, t) in predictions.iter().zip(truth) {
        for l in labels {
            match (p.contains(l), t.contains(l)) {
                (true, true) => tp += 1,
                (true, false) => fp += 1,
                (false, true) => fn_ += 1,
                (false, false) => {}
            }
        }
    }
    f1(tp, fp, fn_)
}

impl EvalReport {
    pub fn with_protocol(mut self, protocol: impl Into<String>) -> Self {
        self.protocol = protocol.into();
        self
    }

    /// Table layout: `label,count,share,precision,recall,f1` with the share
    /// as a percentage and metrics to two decimals, then a micro row.
    pub fn write_csv<W: Write>(&self, w: W) -> csv::Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(["label", "count", "share", "precision", "recall", "f1"])?;
        for m in &self.per_label {
            out.write_record([
                m.label.clone(),
                m.count.to_string(),
                format!(
                    "{:.2}%",
                    if self.n == 0 {
                        0.0
                    } else {
                        rounded_percent(m.count, self.n)
                    }
                ),
                format!("{:.2}", m.precision),
                format!("{:.2}", m.recall),
                format!("{:.2}", m.f1),
            ])?;
        }
        out.write_record([
            "micro".to_string(),
            self.n.to_string(),
            String::new(),
            format!("{:.2}", self.micro.precision),
            format!("{:.2}", self.micro.recall),
            format!("{:.2}", self.micro.f1),
        ])?;
        out.flush()?;
        Ok(())
    }

    pub fn to_csv_string(&self) -> String {
        let mut buf = Vec::new();
        self.write_csv(&mut buf).expect("writing to memory");
        String::from_utf8(buf).expect("csv output is utf-8")
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn set(v: &[&str]) -> BTreeSet<String> {
        v.iter().map(|s| s.to_string()).collect()
    }

    fn labels(v: &[&str]) -> Vec<String> {
        v.iter().map(|s| s.to_string()).collect()
    }

    #[test]
    fn hand_counted_example() {
        // A: TP 2, FP 1, FN 1; B: TP 1, FP 0, FN 1
        let truth = vec![
            set(&["A", "B"]),
            set(&["A"]),
            set(&["A"]),
            set(&["B"]),
            set(&[]),
        ];
        let pred = vec![
            set(&["A", "B"]),
            set(&["A"]),
            set(&[]),
            set(&[]),
            set(&["A"]),
        ];
        let r = evaluate(&pred, &truth, &labels(&["A", "B"])).unwrap();
        let a = &r.per_label[0];
        assert_eq!((a.tp, a.fp, a.fn_), (2, 1, 1));
        assert_abs_diff_eq!(a.precision, 2.0 / 3.0, epsilon = 1e-12);
        assert_abs_diff_eq!(a.f1, 2.0 / 3.0, epsilon = 1e-12);
        let b = &r.per_label[1];
        assert_eq!((b.precision, b.recall), (1.0, 0.5));
        assert_abs_diff_eq!(b.f1, 2.0 / 3.0, epsilon = 1e-12);
        assert_abs_diff_eq!(r.micro.precision, 0.75, epsilon = 1e-12);
        assert_abs_diff_eq!(r.micro.recall, 0.6, epsilon = 1e-12);
        assert_abs_diff_eq!(r.micro.f1, 2.0 / 3.0, epsilon = 1e-12);
    }

    #[test]
    fn perfect_predictions() {
        let truth = vec![set(&["A"]), set(&["B"]), set(&["A", "B"])];
        let r = evaluate(&truth, &truth, &labels(&["A", "B"])).unwrap();
        assert!(r.per_label.iter().all(|m| m.f1 == 1.0 && !m.undefined));
        assert_eq!(r.micro.f1, 1.0);
    }

    #[test]
    fn zero_denominators_flagged() {
        let r = evaluate(&[set(&[])], &[set(&[])], &labels(&["A"])).unwrap();
        assert!(r.per_label[0].undefined);
        assert_eq!(r.per_label[0].f1, 0.0);
    }

    #[test]
    fn errors() {
        assert!(matches!(
            evaluate(&[set(&[])], &[], &labels(&["A"])),
            Err(MultilabelError::LengthMismatch { .. })
        ));
        assert_eq!(
            evaluate(&[set(&["Z"])], &[set(&[])], &labels(&["A"])),
            Err(MultilabelError::UnknownLabel("Z".into()))
        );
    }

    #[test]
    fn table_layout_row() {
        // 253 hits, 38 false alarms and 71 misses among 8,757 comments.
        let n = 8757;
        let mut truth = vec![set(&[]); n];
        let mut pred = vec![set(&[]); n];
        for i in 0..253 {
            truth[i] = set(&["Licensing"]);
            pred[i] = set(&["Licensing"]);
        }
        for i in 253..324 {
            truth[i] = set(&["Licensing"]);
        }
        for i in 324..362 {
            pred[i] = set(&["Licensing"]);
        }
        let r = evaluate(&pred, &truth, &labels(&["Licensing"])).unwrap();
        let csv = r.to_csv_string();
        assert!(
            csv.lines()
                .any(|l| l == "Licensing,324,3.70%,0.87,0.78,0.82"),
            "{csv}"
        );
    }
}
