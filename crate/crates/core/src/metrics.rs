//! Macro-averaged F1 and AUROC for multi-label predictions.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ndiff::Tensor;

pub const DEFAULT_THRESHOLD: f64 = 0.5;

#[derive(Debug, Error, PartialEq)]
pub enum MetricsError {
    #[error("no class has both the positives and negatives needed for scoring")]
    NoEvaluableClasses,
    #[error("shape mismatch: scores {0:?} vs labels {1:?}")]
    ShapeMismatch(Vec<usize>, Vec<usize>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassReport {
    pub label: String,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    /// Absent when the class lacks positives or negatives.
    pub auroc: Option<f64>,
    pub support: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub macro_f1: f64,
    pub auroc: f64,
    pub threshold: f64,
    pub per_class: Vec<ClassReport>,
}

fn check(scores: &Tensor, y: &Tensor) -> Result<(), MetricsError> {
    if scores.dims() != y.dims() {
        return Err(MetricsError::ShapeMismatch(scores.shape().to_vec(), y.shape().to_vec()));
    }
    Ok(())
}

fn column(t: &Tensor, j: usize) -> Vec<f64> {
    (0..t.rows()).map(|i| t.get(i, j)).collect()
}

/// Returns `(precision, recall, f1)`; `0/0` counts as 0.
pub fn prf(scores: &[f64], labels: &[f64], threshold: f64) -> (f64, f64, f64) {
    let (mut tp, mut fp, mut fnc) = (0usize, 0usize, 0usize);
    for (&s, &l) in scores.iter().zip(labels) {
        match (s >= threshold, l > 0.5) {
            (true, true) => tp += 1,
            (true, false) => fp += 1,
            (false, true) => fnc += 1,
            _ => {}
        }
    }
    let ratio = |a: usize, b: usize| if b == 0 { 0.0 } else { a as f64 / b as f64 };
    let p = ratio(tp, tp + fp);
    let r = ratio(tp, tp + fnc);
    let f = if p + r == 0.0 { 0.0 } else { 2.0 * p * r / (p + r) };
    (p, r, f)
}

/// Mann-Whitney AUROC with tied scores credited one half, computed from
/// midranks. `None` without both classes present.
pub fn binary_auroc(scores: &[f64], labels: &[f64]) -> Option<f64> {
    let pos = labels.iter().filter(|&&l| l > 0.5).count();
    let neg = labels.len() - pos;
    if pos == 0 || neg == 0 {
        return None;
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    let mut rank_sum = 0.0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        // ranks i+1..=j+1 share their mean
        let mid = (i + j + 2) as f64 / 2.0;
        for &k in &order[i..=j] {
            if labels[k] > 0.5 {
                rank_sum += mid;
            }
        }
        i = j + 1;
    }
    let u = rank_sum - (pos * (pos + 1)) as f64 / 2.0;
    Some(u / (pos as f64 * neg as f64))
}

pub fn macro_f1(scores: &Tensor, y: &Tensor, threshold: f64) -> Result<f64, MetricsError> {
    check(scores, y)?;
    let f1s: Vec<f64> = (0..y.cols())
        .filter_map(|j| {
            let l = column(y, j);
            l.iter()
                .any(|&v| v > 0.5)
                .then(|| prf(&column(scores, j), &l, threshold).2)
        })
        .collect();
    if f1s.is_empty() {
        return Err(MetricsError::NoEvaluableClasses);
    }
    Ok(f1s.iter().sum::<f64>() / f1s.len() as f64)
}

pub fn auroc(scores: &Tensor, y: &Tensor) -> Result<f64, MetricsError> {
    check(scores, y)?;
    let a: Vec<f64> = (0..y.cols())
        .filter_map(|j| binary_auroc(&column(scores, j), &column(y, j)))
        .collect();
    if a.is_empty() {
        return Err(MetricsError::NoEvaluableClasses);
    }
    Ok(a.iter().sum::<f64>() / a.len() as f64)
}

pub fn evaluate(
    scores: &Tensor,
    y: &Tensor,
    labels: &[String],
    threshold: f64,
) -> Result<EvalReport, MetricsError> {
    check(scores, y)?;
    let per_class = (0..y.cols())
        .map(|j| {
            let s = column(scores, j);
            let l = column(y, j);
            let (precision, recall, f1) = prf(&s, &l, threshold);
            ClassReport {
                label: labels.get(j).cloned().unwrap_or_else(|| format!("label_{j}")),
                precision,
                recall,
                f1,
                auroc: binary_auroc(&s, &l),
                support: l.iter().filter(|&&v| v > 0.5).count(),
            }
        })
        .collect();
    Ok(EvalReport {
        macro_f1: macro_f1(scores, y, threshold)?,
        auroc: auroc(scores, y)?,
        threshold,
        per_class,
    })
}

impl EvalReport {
    pub fn per_class_csv(&self) -> Result<String, csv::Error> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["label", "precision", "recall", "f1", "auroc", "support"])?;
        for c in &self.per_class {
            w.write_record([
                c.label.clone(),
                format!("{:.6}", c.precision),
                format!("{:.6}", c.recall),
                format!("{:.6}", c.f1),
                c.auroc.map(|a| format!("{a:.6}")).unwrap_or_default(),
                c.support.to_string(),
            ])?;
        }
        let bytes = w.into_inner().map_err(|e| e.into_error())?;
        Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn f1_examples() {
        let y = Tensor::from_rows(&[[1.0, 0.0], [0.0, 1.0]]);
        assert_eq!(macro_f1(&y, &y, 0.5).unwrap(), 1.0);
        assert_eq!(macro_f1(&Tensor::zeros(2, 2), &y, 0.5).unwrap(), 0.0);
        let s = Tensor::column_vector(vec![0.9, 0.8, 0.1]);
        let l = Tensor::column_vector(vec![1.0, 0.0, 1.0]);
        assert!((macro_f1(&s, &l, 0.5).unwrap() - 0.5).abs() < 1e-15);
    }

    #[test]
    fn auroc_examples() {
        assert_eq!(binary_auroc(&[0.9, 0.1], &[1.0, 0.0]), Some(1.0));
        assert_eq!(binary_auroc(&[0.1, 0.9], &[1.0, 0.0]), Some(0.0));
        assert_eq!(binary_auroc(&[0.5, 0.5], &[1.0, 0.0]), Some(0.5));
        assert_eq!(binary_auroc(&[0.5, 0.5], &[1.0, 1.0]), None);
    }

    #[test]
    fn no_evaluable_classes() {
        let z = Tensor::zeros(3, 2);
        assert_eq!(macro_f1(&z, &z, 0.5), Err(MetricsError::NoEvaluableClasses));
        assert_eq!(auroc(&z, &z), Err(MetricsError::NoEvaluableClasses));
    }

    #[test]
    fn report_csv_has_row_per_class() {
        let y = Tensor::from_rows(&[[1.0, 0.0], [0.0, 1.0], [1.0, 1.0]]);
        let s = Tensor::from_rows(&[[0.8, 0.3], [0.2, 0.6], [0.4, 0.9]]);
        let r = evaluate(&s, &y, &["a".into(), "b".into()], 0.5).unwrap();
        assert_eq!(r.per_class.iter().map(|c| c.support).sum::<usize>(), 4);
        assert_eq!(r.per_class_csv().unwrap().lines().count(), 3);
    }
}
