//! Multi-label AUROC and F1 with micro, macro and weighted averaging.
//!
//! Classes without both a positive and a negative sample are left out of
//! macro and weighted averages and listed in the [`Report`]. Weighted
//! averages weight each class by its positive count.

use std::path::Path;

use serde::Serialize;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Averaging {
    Micro,
    Macro,
    Weighted,
}

pub const DEFAULT_THRESHOLD: f64 = 0.5;

/// Scores and binary labels, `samples x classes`.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreMatrix {
    pub scores: Vec<Vec<f64>>,
    pub labels: Vec<Vec<u8>>,
    pub class_names: Vec<String>,
}

impl ScoreMatrix {
    pub fn new(scores: Vec<Vec<f64>>, labels: Vec<Vec<u8>>, class_names: Vec<String>) -> Result<Self> {
        let k = class_names.len();
        if scores.len() != labels.len() {
            return Err(Error::Metric(format!(
                "{} score rows but {} label rows",
                scores.len(),
                labels.len()
            )));
        }
        for (i, (s, l)) in scores.iter().zip(&labels).enumerate() {
            if s.len() != k || l.len() != k {
                return Err(Error::Metric(format!("row {i} does not have {k} columns")));
            }
            if s.iter().any(|v| !v.is_finite()) {
                return Err(Error::Metric(format!("row {i} has a non-finite score")));
            }
            if l.iter().any(|&v| v > 1) {
                return Err(Error::Metric(format!("row {i} has a label other than 0 or 1")));
            }
        }
        Ok(Self {
            scores,
            labels,
            class_names,
        })
    }

    /// Unnamed classes `class0..classK`.
    pub fn unnamed(scores: Vec<Vec<f64>>, labels: Vec<Vec<u8>>) -> Result<Self> {
        let k = scores.first().map_or(0, |r| r.len());
        Self::new(scores, labels, (0..k).map(|c| format!("class{c}")).collect())
    }

    pub fn samples(&self) -> usize {
        self.scores.len()
    }

    pub fn classes(&self) -> usize {
        self.class_names.len()
    }

    pub fn column(&self, c: usize) -> (Vec<f64>, Vec<u8>) {
        (
            self.scores.iter().map(|r| r[c]).collect(),
            self.labels.iter().map(|r| r[c]).collect(),
        )
    }

    fn positives(&self, c: usize) -> usize {
        self.labels.iter().filter(|r| r[c] == 1).count()
    }

    /// Whether class `c` has at least one positive and one negative.
    pub fn is_valid_class(&self, c: usize) -> bool {
        let p = self.positives(c);
        p > 0 && p < self.samples()
    }

    /// Reads a score file and a label file, each a CSV with a header row of
    /// class names followed by one row per sample.
    pub fn read_csv(scores: &Path, labels: &Path) -> Result<Self> {
        let (names, s) = read_table(scores)?;
        let (label_names, l) = read_table(labels)?;
        if names != label_names {
            return Err(Error::Metric("score and label files name different classes".into()));
        }
        let l = l
            .into_iter()
            .map(|row| {
                row.into_iter()
                    .map(|v| {
                        if v == 0.0 || v == 1.0 {
                            Ok(v as u8)
                        } else {
                            Err(Error::Metric(format!("label {v} is not 0 or 1")))
                        }
                    })
                    .collect::<Result<Vec<u8>>>()
            })
            .collect::<Result<_>>()?;
        Self::new(s, l, names)
    }
}

fn read_table(path: &Path) -> Result<(Vec<String>, Vec<Vec<f64>>)> {
    let mut rdr = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| csv_error(path, e))?;
    let names = rdr
        .headers()
        .map_err(|e| csv_error(path, e))?
        .iter()
        .map(str::to_string)
        .collect();
    let rows = rdr
        .records()
        .map(|rec| {
            let rec = rec.map_err(|e| csv_error(path, e))?;
            rec.iter()
                .map(|f| {
                    f.parse::<f64>()
                        .map_err(|_| Error::Metric(format!("{}: {f:?} is not a number", path.display())))
                })
                .collect()
        })
        .collect::<Result<_>>()?;
    Ok((names, rows))
}

fn csv_error(path: &Path, e: csv::Error) -> Error {
    if e.is_io_error() {
        match e.into_kind() {
            csv::ErrorKind::Io(io) => Error::Io(io),
            _ => unreachable!("checked io kind"),
        }
    } else {
        Error::Metric(format!("{}: {e}", path.display()))
    }
}

/// Mann-Whitney AUROC with tied scores counting one half; `None` when the
/// labels are all one value.
pub fn auroc_binary(scores: &[f64], labels: &[u8]) -> Option<f64> {
    let pos = labels.iter().filter(|&&l| l == 1).count();
    let neg = labels.len() - pos;
    if pos == 0 || neg == 0 {
        return None;
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    // midranks, 1-based; every value is an integer or half-integer
    let mut rank_sum = 0.0f64;
    let mut i = 0;
    while i < order.len() {
        let mut j = i + 1;
        while j < order.len() && scores[order[j]] == scores[order[i]] {
            j += 1;
        }
        let mid = (i + 1 + j) as f64 / 2.0;
        rank_sum += mid * order[i..j].iter().filter(|&&k| labels[k] == 1).count() as f64;
        i = j;
    }
    let u = rank_sum - (pos * (pos + 1)) as f64 / 2.0;
    Some(u / (pos as f64 * neg as f64))
}

fn weighted_mean(values: &[(f64, f64)]) -> f64 {
    let total: f64 = values.iter().map(|(_, w)| w).sum();
    values.iter().map(|(v, w)| v * w).sum::<f64>() / total
}

fn aggregate(sm: &ScoreMatrix, avg: Averaging, per_class: impl Fn(usize) -> f64, what: &str) -> Result<f64> {
    let valid: Vec<usize> = (0..sm.classes()).filter(|&c| sm.is_valid_class(c)).collect();
    if valid.is_empty() {
        return Err(Error::Metric(format!(
            "{what} is undefined: no class has both positive and negative samples"
        )));
    }
    let weight = |c: usize| match avg {
        Averaging::Weighted => sm.positives(c) as f64,
        _ => 1.0,
    };
    let values: Vec<(f64, f64)> = valid.iter().map(|&c| (per_class(c), weight(c))).collect();
    Ok(weighted_mean(&values))
}

pub fn auroc(sm: &ScoreMatrix, avg: Averaging) -> Result<f64> {
    match avg {
        Averaging::Micro => {
            let scores: Vec<f64> = sm.scores.iter().flatten().copied().collect();
            let labels: Vec<u8> = sm.labels.iter().flatten().copied().collect();
            auroc_binary(&scores, &labels)
                .ok_or_else(|| Error::Metric("micro AUROC is undefined: labels are all one value".into()))
        }
        _ => aggregate(
            sm,
            avg,
            |c| {
                let (s, l) = sm.column(c);
                auroc_binary(&s, &l).expect("valid class")
            },
            "AUROC",
        ),
    }
}

/// True positive, false positive and false negative counts.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct Confusion {
    pub tp: usize,
    pub fp: usize,
    pub fn_: usize,
}

impl Confusion {
    /// `2TP / (2TP + FP + FN)`, zero when there are no positives at all.
    pub fn f1(&self) -> f64 {
        let denom = 2 * self.tp + self.fp + self.fn_;
        if denom == 0 {
            0.0
        } else {
            (2 * self.tp) as f64 / denom as f64
        }
    }
}

pub fn confusion(sm: &ScoreMatrix, c: usize, threshold: f64) -> Confusion {
    let mut out = Confusion::default();
    for (s, l) in sm.scores.iter().zip(&sm.labels) {
        match (s[c] >= threshold, l[c] == 1) {
            (true, true) => out.tp += 1,
            (true, false) => out.fp += 1,
            (false, true) => out.fn_ += 1,
            (false, false) => {}
        }
    }
    out
}

pub fn f1(sm: &ScoreMatrix, threshold: f64, avg: Averaging) -> Result<f64> {
    if !(threshold > 0.0 && threshold < 1.0) {
        return Err(Error::Metric(format!("threshold {threshold} is outside (0, 1)")));
    }
    match avg {
        Averaging::Micro => {
            let total = (0..sm.classes()).fold(Confusion::default(), |acc, c| {
                let k = confusion(sm, c, threshold);
                Confusion {
                    tp: acc.tp + k.tp,
                    fp: acc.fp + k.fp,
                    fn_: acc.fn_ + k.fn_,
                }
            });
            Ok(total.f1())
        }
        _ => aggregate(sm, avg, |c| confusion(sm, c, threshold).f1(), "F1"),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Report {
    pub samples: usize,
    pub classes: usize,
    pub auroc_micro: f64,
    pub auroc_macro: f64,
    pub auroc_weighted: f64,
    pub f1_micro: f64,
    pub f1_macro: f64,
    pub f1_weighted: f64,
    pub threshold: f64,
    /// Classes left out of macro and weighted averages.
    pub excluded_classes: Vec<String>,
}

pub fn report(sm: &ScoreMatrix, threshold: f64) -> Result<Report> {
    Ok(Report {
        samples: sm.samples(),
        classes: sm.classes(),
        auroc_micro: auroc(sm, Averaging::Micro)?,
        auroc_macro: auroc(sm, Averaging::Macro)?,
        auroc_weighted: auroc(sm, Averaging::Weighted)?,
        f1_micro: f1(sm, threshold, Averaging::Micro)?,
        f1_macro: f1(sm, threshold, Averaging::Macro)?,
        f1_weighted: f1(sm, threshold, Averaging::Weighted)?,
        threshold,
        excluded_classes: (0..sm.classes())
            .filter(|&c| !sm.is_valid_class(c))
            .map(|c| sm.class_names[c].clone())
            .collect(),
    })
}

impl std::fmt::Display for Report {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        writeln!(f, "samples {} classes {}", self.samples, self.classes)?;
        writeln!(f, "{:<10}{:>10}{:>10}{:>10}", "", "micro", "macro", "weighted")?;
        writeln!(
            f,
            "{:<10}{:>10.4}{:>10.4}{:>10.4}",
            "AUROC", self.auroc_micro, self.auroc_macro, self.auroc_weighted
        )?;
        write!(
            f,
            "{:<10}{:>10.4}{:>10.4}{:>10.4}",
            format!("F1@{}", self.threshold),
            self.f1_micro,
            self.f1_macro,
            self.f1_weighted
        )?;
        if !self.excluded_classes.is_empty() {
            write!(f, "\nexcluded: {}", self.excluded_classes.join(", "))?;
        }
        Ok(())
    }
}
