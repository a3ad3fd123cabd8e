//! Turning network outputs into label maps, and pixel-level scoring.
//!
//! All F1 values are percentages in `[0, 100]`.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::autodiff::{Real, Tensor4};
use crate::error::{Error, Result};
use crate::losses::HeadKind;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MergeConfig {
    /// A pixel is foreground only if its best class score exceeds this.
    pub t_fg: f64,
}

impl Default for MergeConfig {
    fn default() -> Self {
        Self { t_fg: 0.2 }
    }
}

impl MergeConfig {
    pub fn validate(&self) -> Result<()> {
        if self.t_fg > 0.0 && self.t_fg < 1.0 {
            Ok(())
        } else {
            Err(Error::Config(format!("t_fg must lie in (0, 1), got {}", self.t_fg)))
        }
    }
}

fn argmax<T: Real>(values: &[T]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = i;
        }
    }
    best
}

/// Per-pixel argmax over `C + 1` channels, ties going to the lower index.
pub fn merge_softmax<T: Real>(probabilities: &Tensor4<T>) -> Result<Vec<u8>> {
    let k = probabilities.shape().channels;
    if k < 2 {
        return Err(Error::invalid("merge_softmax", "need background plus at least one class"));
    }
    let mut out = Vec::with_capacity(probabilities.shape().pixels());
    for (i, px) in probabilities.data().chunks(k).enumerate() {
        let sum: f64 = px.iter().map(|v| v.to_f64().unwrap_or(f64::NAN)).sum();
        if !((sum - 1.0).abs() <= 1e-4) {
            return Err(Error::invalid(
                "merge_softmax",
                format!("pixel {i} probabilities sum to {sum}"),
            ));
        }
        out.push(argmax(px) as u8);
    }
    Ok(out)
}

/// Background unless the best of the `C` class scores is strictly above
/// `t_fg`, otherwise that class (ties to the lower index).
pub fn merge_sigmoid<T: Real>(scores: &Tensor4<T>, config: &MergeConfig) -> Result<Vec<u8>> {
    config.validate()?;
    let k = scores.shape().channels;
    if k == 0 {
        return Err(Error::invalid("merge_sigmoid", "scores have no channels"));
    }
    let mut out = Vec::with_capacity(scores.shape().pixels());
    for (i, px) in scores.data().chunks(k).enumerate() {
        if let Some(v) = px.iter().find(|v| !(**v >= T::zero() && **v <= T::one())) {
            return Err(Error::invalid(
                "merge_sigmoid",
                format!("pixel {i} has score {} outside [0, 1]", v.to_f64().unwrap_or(f64::NAN)),
            ));
        }
        let best = argmax(px);
        let label = if px[best].to_f64().unwrap_or(0.0) > config.t_fg {
            best + 1
        } else {
            0
        };
        out.push(label as u8);
    }
    Ok(out)
}

/// Applies the merge rule that matches `head`.
pub fn merge<T: Real>(output: &Tensor4<T>, head: HeadKind, config: &MergeConfig) -> Result<Vec<u8>> {
    match head {
        HeadKind::SoftmaxWithBackground => merge_softmax(output),
        HeadKind::SigmoidNoBackground => merge_sigmoid(output, config),
    }
}

/// Pixel counts indexed by (truth, prediction), background is class 0.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    classes: usize,
    counts: Vec<u64>,
}

impl ConfusionMatrix {
    pub fn new(classes: usize) -> Self {
        Self {
            classes,
            counts: vec![0; (classes + 1) * (classes + 1)],
        }
    }

    pub fn from_labels(pred: &[u8], truth: &[u8], classes: usize) -> Result<Self> {
        let mut m = Self::new(classes);
        m.add(pred, truth)?;
        Ok(m)
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn add(&mut self, pred: &[u8], truth: &[u8]) -> Result<()> {
        if pred.len() != truth.len() {
            return Err(Error::ShapeMismatch {
                op: "confusion_matrix",
                dim: "pixels",
                expected: truth.len(),
                actual: pred.len(),
            });
        }
        let k = self.classes + 1;
        if let Some(&v) = pred.iter().chain(truth).find(|&&v| v as usize >= k) {
            return Err(Error::invalid(
                "confusion_matrix",
                format!("label {v} exceeds class count {}", self.classes),
            ));
        }
        for (&p, &t) in pred.iter().zip(truth) {
            self.counts[t as usize * k + p as usize] += 1;
        }
        Ok(())
    }

    /// Adds another matrix's counts to this one.
    pub fn merge(&mut self, other: &ConfusionMatrix) -> Result<()> {
        if other.classes != self.classes {
            return Err(Error::ShapeMismatch {
                op: "confusion_matrix",
                dim: "classes",
                expected: self.classes,
                actual: other.classes,
            });
        }
        for (a, b) in self.counts.iter_mut().zip(&other.counts) {
            *a += b;
        }
        Ok(())
    }

    pub fn get(&self, truth: usize, pred: usize) -> u64 {
        self.counts[truth * (self.classes + 1) + pred]
    }

    pub fn row(&self, truth: usize) -> &[u64] {
        let k = self.classes + 1;
        &self.counts[truth * k..(truth + 1) * k]
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    pub fn transpose(&self) -> Self {
        let k = self.classes + 1;
        let mut t = Self::new(self.classes);
        for i in 0..k {
            for j in 0..k {
                t.counts[j * k + i] = self.counts[i * k + j];
            }
        }
        t
    }

    /// Each row as percentages of its total. Rows without pixels come back
    /// as zeros and are flagged in the second vector.
    pub fn row_percentages(&self) -> (Vec<Vec<f64>>, Vec<bool>) {
        let k = self.classes + 1;
        let mut rows = Vec::with_capacity(k);
        let mut empty = Vec::with_capacity(k);
        for i in 0..k {
            let row = self.row(i);
            let n: u64 = row.iter().sum();
            empty.push(n == 0);
            rows.push(
                row.iter()
                    .map(|&v| if n == 0 { 0.0 } else { 100.0 * v as f64 / n as f64 })
                    .collect(),
            );
        }
        (rows, empty)
    }

    fn tp_fp_fn(&self, class: usize) -> (u64, u64, u64) {
        let k = self.classes + 1;
        let tp = self.get(class, class);
        let col: u64 = (0..k).map(|i| self.get(i, class)).sum();
        let row: u64 = self.row(class).iter().sum();
        (tp, col - tp, row - tp)
    }
}

fn f1(tp: u64, fp: u64, fn_: u64) -> Option<f64> {
    let denom = 2 * tp + fp + fn_;
    (denom > 0).then(|| 100.0 * 2.0 * tp as f64 / denom as f64)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct F1Scores {
    /// Foreground classes `1..=C` at index `c - 1`.
    pub per_class: Vec<f64>,
    /// Classes with neither truth nor predicted pixels, scored 0.
    pub undefined: Vec<bool>,
    /// Pooled over foreground classes only.
    pub micro: f64,
    /// Pooled over every class including background.
    pub micro_with_background: f64,
    pub macro_: f64,
}

pub fn f1_scores(confusion: &ConfusionMatrix) -> F1Scores {
    let c = confusion.classes();
    let mut per_class = Vec::with_capacity(c);
    let mut undefined = Vec::with_capacity(c);
    let (mut tp, mut fp, mut fn_) = (0, 0, 0);
    for class in 1..=c {
        let (t, p, n) = confusion.tp_fp_fn(class);
        tp += t;
        fp += p;
        fn_ += n;
        let score = f1(t, p, n);
        undefined.push(score.is_none());
        per_class.push(score.unwrap_or(0.0));
    }
    let micro = f1(tp, fp, fn_).unwrap_or(0.0);
    let (t0, p0, n0) = confusion.tp_fp_fn(0);
    let micro_with_background = f1(tp + t0, fp + p0, fn_ + n0).unwrap_or(0.0);
    let macro_ = if c == 0 {
        0.0
    } else {
        per_class.iter().sum::<f64>() / c as f64
    };
    F1Scores {
        per_class,
        undefined,
        micro,
        micro_with_background,
        macro_,
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub confusion: ConfusionMatrix,
    pub f1: F1Scores,
}

impl EvalReport {
    pub fn from_confusion(confusion: ConfusionMatrix) -> Self {
        let f1 = f1_scores(&confusion);
        Self { confusion, f1 }
    }

    pub fn evaluate(pred: &[u8], truth: &[u8], classes: usize) -> Result<Self> {
        Ok(Self::from_confusion(ConfusionMatrix::from_labels(pred, truth, classes)?))
    }

    pub fn macro_f1(&self) -> f64 {
        self.f1.macro_
    }

    pub fn micro_f1(&self) -> f64 {
        self.f1.micro
    }

    /// `metric,value` rows; F1 values as percentages with four decimals.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("metric,value\n");
        for (i, v) in self.f1.per_class.iter().enumerate() {
            let _ = writeln!(out, "f1_class_{},{v:.4}", i + 1);
        }
        let _ = writeln!(out, "micro_f1,{:.4}", self.f1.micro);
        let _ = writeln!(out, "micro_f1_with_background,{:.4}", self.f1.micro_with_background);
        let _ = writeln!(out, "macro_f1,{:.4}", self.f1.macro_);
        for (i, u) in self.f1.undefined.iter().enumerate() {
            if *u {
                let _ = writeln!(out, "undefined_class_{},1", i + 1);
            }
        }
        out
    }

    /// Raw counts, one row per truth class.
    pub fn confusion_csv(&self) -> String {
        let k = self.confusion.classes() + 1;
        let header: Vec<String> = (0..k).map(|j| format!("pred_{j}")).collect();
        let mut out = format!("truth,{}\n", header.join(","));
        for i in 0..k {
            let row: Vec<String> = self.confusion.row(i).iter().map(|v| v.to_string()).collect();
            let _ = writeln!(out, "{i},{}", row.join(","));
        }
        out
    }

    /// Row-normalized confusion matrix as an aligned text table; each row
    /// sums to 100%. `names` labels classes `0..=C` (defaults are used for
    /// missing entries).
    pub fn confusion_table(&self, names: &[&str]) -> String {
        let k = self.confusion.classes() + 1;
        let name = |i: usize| {
            names.get(i).map(|s| s.to_string()).unwrap_or_else(|| {
                if i == 0 {
                    "background".to_string()
                } else {
                    format!("class {i}")
                }
            })
        };
        let (rows, empty) = self.confusion.row_percentages();
        let width = (0..k).map(|i| name(i).len()).max().unwrap_or(0).max(10);
        let mut out = format!("{:<width$}", "truth \\ pred");
        for j in 0..k {
            let _ = write!(out, " {:>width$}", name(j));
        }
        out.push('\n');
        for i in 0..k {
            let _ = write!(out, "{:<width$}", name(i));
            for v in &rows[i] {
                let _ = write!(out, " {:>width$}", format!("{v:.1}%"));
            }
            if empty[i] {
                out.push_str("  (no pixels)");
            }
            out.push('\n');
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::Shape4;

    fn px(values: &[f64]) -> Tensor4<f64> {
        Tensor4::from_vec(Shape4::new(1, 1, 1, values.len()), values.to_vec()).unwrap()
    }

    #[test]
    fn softmax_merge_rules() {
        assert_eq!(merge_softmax(&px(&[1.0, 0.0, 0.0])).unwrap(), vec![0]);
        assert_eq!(merge_softmax(&px(&[0.1, 0.4, 0.4, 0.05, 0.05])).unwrap(), vec![1]);
        assert!(merge_softmax(&px(&[0.5, 0.6])).is_err());
    }

    #[test]
    fn sigmoid_merge_rules() {
        let cfg = MergeConfig::default();
        assert_eq!(merge_sigmoid(&px(&[0.1, 0.15, 0.05, 0.19]), &cfg).unwrap(), vec![0]);
        assert_eq!(merge_sigmoid(&px(&[0.3, 0.5, 0.1, 0.2]), &cfg).unwrap(), vec![2]);
        assert_eq!(merge_sigmoid(&px(&[0.2, 0.2]), &cfg).unwrap(), vec![0]);
        assert_eq!(merge_sigmoid(&px(&[0.7, 0.7]), &cfg).unwrap(), vec![1]);
        assert!(merge_sigmoid(&px(&[1.2, 0.0]), &cfg).is_err());
        assert!(merge_sigmoid(&px(&[0.5]), &MergeConfig { t_fg: 1.0 }).is_err());
    }

    #[test]
    fn hand_counted_confusion() {
        let m = ConfusionMatrix::from_labels(&[0, 1, 2, 2], &[0, 1, 1, 2], 2).unwrap();
        assert_eq!(m.row(1), &[0, 1, 1]);
        let (rows, empty) = m.row_percentages();
        assert_eq!(rows[1], vec![0.0, 50.0, 50.0]);
        assert!(!empty.iter().any(|&e| e));
        assert_eq!(m.total(), 4);
    }

    #[test]
    fn empty_rows_flagged() {
        let m = ConfusionMatrix::from_labels(&[0, 0], &[0, 0], 2).unwrap();
        let (rows, empty) = m.row_percentages();
        assert_eq!(empty, vec![false, true, true]);
        assert_eq!(rows[2], vec![0.0; 3]);
        let f = f1_scores(&m);
        assert_eq!(f.undefined, vec![true, true]);
        assert_eq!(f.macro_, 0.0);
    }

    #[test]
    fn toy_counts_formula() {
        // Build TP1=3, FP1=1, FN1=1; TP2=1, FP2=3, FN2=3 with background
        // absorbing the errors.
        let mut m = ConfusionMatrix::new(2);
        let k = 3;
        m.counts[k + 1] = 3;
        m.counts[1] = 1; // truth 0, pred 1
        m.counts[k] = 1; // truth 1, pred 0
        m.counts[2 * k + 2] = 1;
        m.counts[2] = 3;
        m.counts[2 * k] = 3;
        let f = f1_scores(&m);
        assert!((f.per_class[0] - 75.0).abs() < 1e-12);
        assert!((f.per_class[1] - 25.0).abs() < 1e-12);
        assert!((f.macro_ - 50.0).abs() < 1e-12);
        assert!((f.micro - 50.0).abs() < 1e-12);
    }

    #[test]
    fn perfect_predictor() {
        let labels = [0, 1, 2, 3, 3, 0];
        let r = EvalReport::evaluate(&labels, &labels, 3).unwrap();
        assert_eq!(r.f1.per_class, vec![100.0; 3]);
        assert_eq!(r.micro_f1(), 100.0);
        assert_eq!(r.macro_f1(), 100.0);
        assert!(r.confusion_table(&[]).contains("100.0%"));
    }

    #[test]
    fn shape_mismatch_rejected() {
        assert!(ConfusionMatrix::from_labels(&[0, 1], &[0], 1).is_err());
    }
}
