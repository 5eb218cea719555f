//! Chemically-informed multi-label loss: class-weighted BCE, class energy
//! hinge, per-sample energy floor and label-correlation matching.
//!
//! Each component exists twice: as a tape builder (`*_var`) used for
//! training and gradient checks, and as a plain function over tensors.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ndiff::{NdError, Tape, Tensor, Var};

pub const PROB_CLAMP: f64 = 1e-7;
pub const WEIGHT_MIN: f64 = 0.1;
pub const WEIGHT_MAX: f64 = 10.0;

#[derive(Debug, Error)]
pub enum CilError {
    #[error("shape mismatch: predictions {pred:?} vs labels {labels:?}")]
    ShapeMismatch { pred: Vec<usize>, labels: Vec<usize> },
    #[error("unknown energy mode {0:?} (expected literal or corrected)")]
    UnknownMode(String),
    #[error("invalid loss configuration: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Nd(#[from] NdError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EnergyMode {
    /// Batch-mean energy with count multipliers; the positive hinge can
    /// never fire because the mean is at most 1 and the target at least 1.
    Literal,
    /// Positive/negative subset means with the hinges facing the targets.
    #[default]
    Corrected,
}

impl FromStr for EnergyMode {
    type Err = CilError;
    fn from_str(s: &str) -> Result<Self, CilError> {
        match s {
            "literal" => Ok(EnergyMode::Literal),
            "corrected" => Ok(EnergyMode::Corrected),
            other => Err(CilError::UnknownMode(other.to_string())),
        }
    }
}

impl fmt::Display for EnergyMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            EnergyMode::Literal => "literal",
            EnergyMode::Corrected => "corrected",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LossWeights {
    pub basis: f64,
    pub class: f64,
    pub sample: f64,
    pub col: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            basis: 1.0,
            class: 0.2,
            sample: 0.1,
            col: 0.2,
        }
    }
}

impl LossWeights {
    pub const BCE_ONLY: LossWeights = LossWeights {
        basis: 1.0,
        class: 0.0,
        sample: 0.0,
        col: 0.0,
    };

    pub fn from_array(l: [f64; 4]) -> Self {
        Self {
            basis: l[0],
            class: l[1],
            sample: l[2],
            col: l[3],
        }
    }

    pub fn as_array(&self) -> [f64; 4] {
        [self.basis, self.class, self.sample, self.col]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SampleEnergyConfig {
    pub e1: f64,
    pub e2: f64,
}

impl Default for SampleEnergyConfig {
    fn default() -> Self {
        Self { e1: 0.5, e2: 0.5 }
    }
}

impl SampleEnergyConfig {
    pub fn new(e1: f64, e2: f64) -> Result<Self, CilError> {
        let c = Self { e1, e2 };
        c.validate()?;
        Ok(c)
    }

    pub fn validate(&self) -> Result<(), CilError> {
        if (self.e1 + self.e2 - 1.0).abs() > 1e-12 {
            return Err(CilError::InvalidConfig(format!(
                "e1 + e2 must equal 1, got {} + {}",
                self.e1, self.e2
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CilConfig {
    pub c: f64,
    pub lambda: LossWeights,
    pub sample: SampleEnergyConfig,
    pub mode: EnergyMode,
    /// Recompute class weights from each batch instead of the training split.
    pub per_batch_weights: bool,
}

impl Default for CilConfig {
    fn default() -> Self {
        Self {
            c: 0.2,
            lambda: LossWeights::default(),
            sample: SampleEnergyConfig::default(),
            mode: EnergyMode::Corrected,
            per_batch_weights: false,
        }
    }
}

impl CilConfig {
    pub fn validate(&self) -> Result<(), CilError> {
        self.sample.validate()?;
        if !(self.c >= 0.0) {
            return Err(CilError::InvalidConfig(format!("c must be >= 0, got {}", self.c)));
        }
        if self.lambda.as_array().iter().any(|&l| !(l >= 0.0)) {
            return Err(CilError::InvalidConfig("loss weights must be >= 0".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ClassWeights {
    pub w: Vec<f64>,
    pub pos: Vec<usize>,
    pub neg: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EnergyTargets {
    pub m_in: Vec<f64>,
    pub m_out: Vec<f64>,
    pub c: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LossBreakdown {
    pub basis: f64,
    pub class: f64,
    pub sample: f64,
    pub col: f64,
    pub total: f64,
}

#[derive(Debug, Clone, Copy)]
pub struct LossVars {
    pub basis: Var,
    pub class: Var,
    pub sample: Var,
    pub col: Var,
    pub total: Var,
}

impl LossVars {
    pub fn values(&self, tape: &Tape) -> LossBreakdown {
        let v = |x: Var| tape.value(x).data()[0];
        LossBreakdown {
            basis: v(self.basis),
            class: v(self.class),
            sample: v(self.sample),
            col: v(self.col),
            total: v(self.total),
        }
    }
}

fn check(pred: &Tensor, y: &Tensor) -> Result<(), CilError> {
    if pred.dims() != y.dims() || pred.rows() == 0 {
        return Err(CilError::ShapeMismatch {
            pred: pred.shape().to_vec(),
            labels: y.shape().to_vec(),
        });
    }
    Ok(())
}

fn column_counts(y: &Tensor) -> (Vec<usize>, Vec<usize>) {
    let (n, m) = y.dims();
    let pos: Vec<usize> = (0..m)
        .map(|j| (0..n).filter(|&i| y.get(i, j) > 0.5).count())
        .collect();
    let neg = pos.iter().map(|&p| n - p).collect();
    (pos, neg)
}

pub fn class_weights(y: &Tensor) -> ClassWeights {
    let (pos, neg) = column_counts(y);
    let w = pos
        .iter()
        .zip(&neg)
        .map(|(&p, &q)| {
            if p == 0 {
                WEIGHT_MAX
            } else {
                (q as f64 / p as f64).clamp(WEIGHT_MIN, WEIGHT_MAX)
            }
        })
        .collect();
    ClassWeights { w, pos, neg }
}

pub fn energy_targets(y: &Tensor, c: f64) -> EnergyTargets {
    let n = y.rows() as f64;
    let (pos, neg) = column_counts(y);
    EnergyTargets {
        m_in: pos.iter().map(|&p| 1.0 + c * p as f64 / n).collect(),
        m_out: neg.iter().map(|&q| c * q as f64 / n).collect(),
        c,
    }
}

/// Raw label co-occurrence counts `Y^T Y`.
pub fn co_occurrence_matrix(y: &Tensor) -> Vec<Vec<u64>> {
    let (n, m) = y.dims();
    let mut c = vec![vec![0u64; m]; m];
    for i in 0..n {
        let on: Vec<usize> = (0..m).filter(|&j| y.get(i, j) > 0.5).collect();
        for &a in &on {
            for &b in &on {
                c[a][b] += 1;
            }
        }
    }
    c
}

pub fn expected_sample_energy(y: &Tensor, cfg: &SampleEnergyConfig) -> Vec<f64> {
    (0..y.rows())
        .map(|i| cfg.e1 + cfg.e2 * y.row(i).iter().sum::<f64>())
        .collect()
}

fn clamped(tape: &mut Tape, p: Var) -> Var {
    tape.clamp(p, PROB_CLAMP, 1.0 - PROB_CLAMP)
}

pub fn weighted_bce_var(tape: &mut Tape, pred: Var, y: &Tensor, w: &[f64]) -> Result<Var, CilError> {
    check(tape.value(pred), y)?;
    let n = y.rows() as f64;
    let p = clamped(tape, pred);
    let logp = tape.log(p);
    let q = tape.scale(p, -1.0);
    let q = tape.offset(q, 1.0);
    let logq = tape.log(q);
    let yv = tape.constant(y.clone());
    let ny = tape.constant(y.map(|v| 1.0 - v));
    let a = tape.mul(yv, logp)?;
    let b = tape.mul(ny, logq)?;
    let ll = tape.add(a, b)?;
    let wv = tape.constant(Tensor::row_vector(w.to_vec()));
    let ll = tape.mul_row(ll, wv)?;
    let s = tape.sum(ll);
    Ok(tape.scale(s, -1.0 / n))
}

/// Per-class mean prediction, `1 x M`.
pub fn class_energy_var(tape: &mut Tape, pred: Var) -> Var {
    let n = tape.value(pred).rows() as f64;
    let s = tape.sum_rows(pred);
    tape.scale(s, 1.0 / n)
}

fn hinge_sq(tape: &mut Tape, x: Var) -> Var {
    let r = tape.relu(x);
    tape.square(r)
}

pub fn class_energy_loss_var(
    tape: &mut Tape,
    pred: Var,
    y: &Tensor,
    targets: &EnergyTargets,
    mode: EnergyMode,
) -> Result<Var, CilError> {
    check(tape.value(pred), y)?;
    let m = y.cols();
    if targets.m_in.len() != m {
        return Err(CilError::ShapeMismatch {
            pred: vec![m],
            labels: vec![targets.m_in.len()],
        });
    }
    let (pos, neg) = column_counts(y);
    let m_in = tape.constant(Tensor::row_vector(targets.m_in.clone()));
    let m_out = tape.constant(Tensor::row_vector(targets.m_out.clone()));
    let (pos_term, neg_term) = match mode {
        EnergyMode::Literal => {
            let e = class_energy_var(tape, pred);
            let over = tape.sub(e, m_in)?;
            let under = tape.sub(m_out, e)?;
            let over = hinge_sq(tape, over);
            let under = hinge_sq(tape, under);
            let np = tape.constant(Tensor::row_vector(pos.iter().map(|&c| c as f64).collect()));
            let nn = tape.constant(Tensor::row_vector(neg.iter().map(|&c| c as f64).collect()));
            (tape.mul(over, np)?, tape.mul(under, nn)?)
        }
        EnergyMode::Corrected => {
            let inv = |counts: &[usize]| {
                Tensor::row_vector(
                    counts
                        .iter()
                        .map(|&c| if c == 0 { 0.0 } else { 1.0 / c as f64 })
                        .collect(),
                )
            };
            let mask = |counts: &[usize]| {
                Tensor::row_vector(counts.iter().map(|&c| (c > 0) as u8 as f64).collect())
            };
            let yv = tape.constant(y.clone());
            let ny = tape.constant(y.map(|v| 1.0 - v));
            let yp = tape.mul(yv, pred)?;
            let np = tape.mul(ny, pred)?;
            let sp = tape.sum_rows(yp);
            let sn = tape.sum_rows(np);
            let ip = tape.constant(inv(&pos));
            let in_ = tape.constant(inv(&neg));
            let e_pos = tape.mul(sp, ip)?;
            let e_neg = tape.mul(sn, in_)?;
            let short = tape.sub(m_in, e_pos)?;
            let excess = tape.sub(e_neg, m_out)?;
            let short = hinge_sq(tape, short);
            let excess = hinge_sq(tape, excess);
            let mp = tape.constant(mask(&pos));
            let mn = tape.constant(mask(&neg));
            (tape.mul(short, mp)?, tape.mul(excess, mn)?)
        }
    };
    let both = tape.add(pos_term, neg_term)?;
    Ok(tape.sum(both))
}

pub fn sample_loss_var(
    tape: &mut Tape,
    pred: Var,
    y: &Tensor,
    cfg: &SampleEnergyConfig,
) -> Result<Var, CilError> {
    check(tape.value(pred), y)?;
    let n = y.rows() as f64;
    let expected = tape.constant(Tensor::column_vector(expected_sample_energy(y, cfg)));
    let energy = tape.sum_cols(pred);
    let gap = tape.sub(expected, energy)?;
    let h = hinge_sq(tape, gap);
    let s = tape.sum(h);
    Ok(tape.scale(s, 1.0 / n))
}

pub fn label_correlation_loss_var(tape: &mut Tape, pred: Var, y: &Tensor) -> Result<Var, CilError> {
    check(tape.value(pred), y)?;
    let inv_n = 1.0 / y.rows() as f64;
    let pt = tape.transpose(pred);
    let pp = tape.matmul(pt, pred)?;
    let pp = tape.scale(pp, inv_n);
    let mut yy = Tensor::zeros(y.cols(), y.cols());
    for (a, row) in co_occurrence_matrix(y).iter().enumerate() {
        for (b, &c) in row.iter().enumerate() {
            yy.set(a, b, c as f64 * inv_n);
        }
    }
    let yy = tape.constant(yy);
    let d = tape.sub(pp, yy)?;
    let d2 = tape.square(d);
    Ok(tape.sum(d2))
}

/// All four components and their weighted total. `weights` and `targets`
/// normally come from the training split.
pub fn total_loss_var(
    tape: &mut Tape,
    pred: Var,
    y: &Tensor,
    weights: &ClassWeights,
    targets: &EnergyTargets,
    cfg: &CilConfig,
) -> Result<LossVars, CilError> {
    let batch_weights;
    let w = if cfg.per_batch_weights {
        batch_weights = class_weights(y);
        &batch_weights.w
    } else {
        &weights.w
    };
    let basis = weighted_bce_var(tape, pred, y, w)?;
    let class = class_energy_loss_var(tape, pred, y, targets, cfg.mode)?;
    let sample = sample_loss_var(tape, pred, y, &cfg.sample)?;
    let col = label_correlation_loss_var(tape, pred, y)?;
    let l = cfg.lambda;
    let parts = [
        tape.scale(basis, l.basis),
        tape.scale(class, l.class),
        tape.scale(sample, l.sample),
        tape.scale(col, l.col),
    ];
    let a = tape.add(parts[0], parts[1])?;
    let b = tape.add(parts[2], parts[3])?;
    let total = tape.add(a, b)?;
    Ok(LossVars {
        basis,
        class,
        sample,
        col,
        total,
    })
}

fn eval(pred: &Tensor, f: impl FnOnce(&mut Tape, Var) -> Result<Var, CilError>) -> Result<f64, CilError> {
    let mut tape = Tape::new();
    let p = tape.constant(pred.clone());
    let v = f(&mut tape, p)?;
    Ok(tape.value(v).data()[0])
}

pub fn weighted_bce(pred: &Tensor, y: &Tensor, w: &[f64]) -> Result<f64, CilError> {
    eval(pred, |t, p| weighted_bce_var(t, p, y, w))
}

pub fn class_energy(pred: &Tensor) -> Vec<f64> {
    let n = pred.rows() as f64;
    (0..pred.cols())
        .map(|j| (0..pred.rows()).map(|i| pred.get(i, j)).sum::<f64>() / n)
        .collect()
}

pub fn class_energy_loss(
    pred: &Tensor,
    y: &Tensor,
    targets: &EnergyTargets,
    mode: EnergyMode,
) -> Result<f64, CilError> {
    eval(pred, |t, p| class_energy_loss_var(t, p, y, targets, mode))
}

pub fn sample_loss(pred: &Tensor, y: &Tensor, cfg: &SampleEnergyConfig) -> Result<f64, CilError> {
    eval(pred, |t, p| sample_loss_var(t, p, y, cfg))
}

pub fn label_correlation_loss(pred: &Tensor, y: &Tensor) -> Result<f64, CilError> {
    eval(pred, |t, p| label_correlation_loss_var(t, p, y))
}

pub fn total_loss(
    pred: &Tensor,
    y: &Tensor,
    weights: &ClassWeights,
    targets: &EnergyTargets,
    cfg: &CilConfig,
) -> Result<LossBreakdown, CilError> {
    let mut tape = Tape::new();
    let p = tape.constant(pred.clone());
    let vars = total_loss_var(&mut tape, p, y, weights, targets, cfg)?;
    Ok(vars.values(&tape))
}
