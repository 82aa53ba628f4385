use std::fmt;
use std::fmt::Write as _;

use crate::datakit::{RightOfWayLabel, Status};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Direction {
    Straight,
    Left,
}

impl fmt::Display for Direction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Direction::Straight => "straight",
            Direction::Left => "left",
        })
    }
}

impl Direction {
    pub fn of(self, label: RightOfWayLabel) -> Status {
        match self {
            Direction::Straight => label.straight,
            Direction::Left => label.left,
        }
    }
}

/// The four binary statuses reported per evaluation.
pub const STATUSES: [(Direction, Status); 4] = [
    (Direction::Straight, Status::Pass),
    (Direction::Straight, Status::Stop),
    (Direction::Left, Status::Pass),
    (Direction::Left, Status::Stop),
];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct ConfusionCounts {
    pub true_pos: u64,
    pub false_pos: u64,
    pub false_neg: u64,
    pub true_neg: u64,
}

impl ConfusionCounts {
    pub fn add(&mut self, predicted: bool, actual: bool) {
        match (predicted, actual) {
            (true, true) => self.true_pos += 1,
            (true, false) => self.false_pos += 1,
            (false, true) => self.false_neg += 1,
            (false, false) => self.true_neg += 1,
        }
    }

    pub fn total(&self) -> u64 {
        self.true_pos + self.false_pos + self.false_neg + self.true_neg
    }

    pub fn metrics(&self) -> BinaryMetrics {
        let ratio = |num: u64, den: u64| if den == 0 { (0.0, true) } else { (num as f64 / den as f64, false) };
        let (accuracy, _) = ratio(self.true_pos + self.true_neg, self.total());
        let (precision, precision_undefined) = ratio(self.true_pos, self.true_pos + self.false_pos);
        let (recall, recall_undefined) = ratio(self.true_pos, self.true_pos + self.false_neg);
        let f1_undefined = precision_undefined || recall_undefined || precision + recall == 0.0;
        let f1 = if f1_undefined {
            0.0
        } else {
            2.0 * precision * recall / (precision + recall)
        };
        BinaryMetrics {
            accuracy,
            precision,
            recall,
            f1,
            precision_undefined,
            recall_undefined,
            f1_undefined,
        }
    }
}

/// Ratios of one binary status. An undefined ratio (zero denominator) is
/// reported as 0 with its flag set.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct BinaryMetrics {
    pub accuracy: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub precision_undefined: bool,
    pub recall_undefined: bool,
    pub f1_undefined: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StatusMetrics {
    pub direction: Direction,
    pub status: Status,
    pub counts: ConfusionCounts,
    pub metrics: BinaryMetrics,
}

impl StatusMetrics {
    pub fn name(&self) -> String {
        format!("{}_{}", self.direction, self.status)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MetricsReport {
    pub samples: u64,
    /// Fraction of samples with both directions right.
    pub joint_accuracy: f64,
    /// In [`STATUSES`] order.
    pub statuses: Vec<StatusMetrics>,
}

pub fn metrics_from_predictions(
    predictions: &[RightOfWayLabel],
    labels: &[RightOfWayLabel],
) -> Result<MetricsReport> {
    if predictions.len() != labels.len() {
        return Err(Error::shape(format!(
            "{} predictions for {} labels",
            predictions.len(),
            labels.len()
        )));
    }
    if labels.is_empty() {
        return Err(Error::contract("cannot evaluate an empty dataset"));
    }
    let statuses = STATUSES
        .iter()
        .map(|&(direction, status)| {
            let mut counts = ConfusionCounts::default();
            for (p, l) in predictions.iter().zip(labels) {
                counts.add(direction.of(*p) == status, direction.of(*l) == status);
            }
            StatusMetrics {
                direction,
                status,
                counts,
                metrics: counts.metrics(),
            }
        })
        .collect();
    let joint = predictions.iter().zip(labels).filter(|(p, l)| p == l).count();
    Ok(MetricsReport {
        samples: labels.len() as u64,
        joint_accuracy: joint as f64 / labels.len() as f64,
        statuses,
    })
}

impl MetricsReport {
    pub fn status(&self, direction: Direction, status: Status) -> &StatusMetrics {
        self.statuses
            .iter()
            .find(|s| s.direction == direction && s.status == status)
            .expect("every status is reported")
    }

    /// Every status at accuracy, precision, recall and F1 of exactly 1.
    pub fn is_perfect(&self) -> bool {
        self.statuses.iter().all(|s| {
            let m = s.metrics;
            m.accuracy == 1.0 && m.precision == 1.0 && m.recall == 1.0 && m.f1 == 1.0
        })
    }

    /// Machine-readable `key=value` lines.
    pub fn to_kv(&self) -> String {
        let mut out = format!("samples={}\njoint_accuracy={:.6}\n", self.samples, self.joint_accuracy);
        for s in &self.statuses {
            let (c, m, n) = (s.counts, s.metrics, s.name());
            let _ = writeln!(
                out,
                "{n}.tp={}\n{n}.fp={}\n{n}.fn={}\n{n}.tn={}",
                c.true_pos, c.false_pos, c.false_neg, c.true_neg
            );
            let _ = writeln!(
                out,
                "{n}.accuracy={:.6}\n{n}.precision={:.6}\n{n}.recall={:.6}\n{n}.f1={:.6}",
                m.accuracy, m.precision, m.recall, m.f1
            );
            let undefined: Vec<&str> = [
                (m.precision_undefined, "precision"),
                (m.recall_undefined, "recall"),
                (m.f1_undefined, "f1"),
            ]
            .iter()
            .filter(|(flag, _)| *flag)
            .map(|(_, name)| *name)
            .collect();
            let _ = writeln!(out, "{n}.undefined={}", undefined.join(","));
        }
        out
    }
}

impl fmt::Display for MetricsReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "{:<14} {:>9} {:>9} {:>9} {:>9}", "status", "accuracy", "precision", "recall", "f1")?;
        for s in &self.statuses {
            let m = s.metrics;
            let mark = |v: f64, undefined: bool| {
                if undefined {
                    format!("{:.4}*", v)
                } else {
                    format!("{:.4}", v)
                }
            };
            writeln!(
                f,
                "{:<14} {:>9} {:>9} {:>9} {:>9}",
                s.name(),
                format!("{:.4}", m.accuracy),
                mark(m.precision, m.precision_undefined),
                mark(m.recall, m.recall_undefined),
                mark(m.f1, m.f1_undefined),
            )?;
        }
        writeln!(f, "joint accuracy {:.4} over {} samples", self.joint_accuracy, self.samples)?;
        if self.statuses.iter().any(|s| s.metrics.f1_undefined) {
            writeln!(f, "* undefined (zero denominator), reported as 0")?;
        }
        Ok(())
    }
}
