//! Training runs: configuration, Adam, the epoch loop, checkpoints with a
//! JSON sidecar, evaluation and prediction.

mod config;

use std::io::Write;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use config::{AdamConfig, DataConfig, RunConfig, SyntheticConfig, SEED_ENV};

use crate::cil::{
    class_weights, energy_targets, total_loss_var, CilConfig, CilError, ClassWeights, EnergyTargets,
    LossBreakdown, LossWeights,
};
use crate::data::{load_csv, split, synthetic_dataset, DataError, LabeledDataset, Split};
use crate::featurize::{FeatureError, MoleculeFeatures};
use crate::metrics::{evaluate, EvalReport, MetricsError};
use crate::model::{GraphBatch, HmfNet, ModelError};
use crate::molgraph::Vocab;
use crate::ndiff::{NdError, ParamStore, Rng, Session, Tensor};

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("config: {0}")]
    Config(String),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Feature(#[from] FeatureError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Loss(#[from] CilError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error(transparent)]
    Nd(#[from] NdError),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Adam with bias correction.
#[derive(Debug, Clone)]
pub struct Adam {
    pub config: AdamConfig,
    m: Vec<Tensor>,
    v: Vec<Tensor>,
    t: i32,
}

impl Adam {
    pub fn new(config: AdamConfig, params: &ParamStore) -> Self {
        let zeros: Vec<Tensor> = params.iter().map(|(_, t)| Tensor::new(t.shape().to_vec(), vec![0.0; t.numel()]).unwrap()).collect();
        Self {
            config,
            m: zeros.clone(),
            v: zeros,
            t: 0,
        }
    }

    pub fn step(&mut self, params: &mut ParamStore, grads: &[Tensor]) {
        self.t += 1;
        let c = self.config;
        let bc1 = 1.0 - c.beta1.powi(self.t);
        let bc2 = 1.0 - c.beta2.powi(self.t);
        let ids: Vec<_> = params.ids().collect();
        for (k, id) in ids.into_iter().enumerate() {
            let g = grads[k].data();
            let m = self.m[k].data_mut();
            let v = self.v[k].data_mut();
            let p = params.get_mut(id).data_mut();
            for i in 0..p.len() {
                m[i] = c.beta1 * m[i] + (1.0 - c.beta1) * g[i];
                v[i] = c.beta2 * v[i] + (1.0 - c.beta2) * g[i] * g[i];
                p[i] -= c.lr * (m[i] / bc1) / ((v[i] / bc2).sqrt() + c.eps);
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub loss: LossBreakdownLog,
    pub train_f1: Option<f64>,
    pub val_f1: Option<f64>,
    pub val_auroc: Option<f64>,
}

/// Serializable mirror of [`LossBreakdown`], averaged over the epoch.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdownLog {
    pub basis: f64,
    pub class: f64,
    pub sample: f64,
    pub col: f64,
    pub total: f64,
}

impl From<LossBreakdown> for LossBreakdownLog {
    fn from(b: LossBreakdown) -> Self {
        Self {
            basis: b.basis,
            class: b.class,
            sample: b.sample,
            col: b.col,
            total: b.total,
        }
    }
}

/// Stored next to a checkpoint as `<stem>.json`; everything needed to
/// rebuild the network and interpret its outputs.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Sidecar {
    pub run: RunConfig,
    pub model: crate::model::ModelConfig,
    pub labels: Vec<String>,
    pub token_vocab: Vocab,
    pub class_weights: Vec<f64>,
    pub m_in: Vec<f64>,
    pub m_out: Vec<f64>,
    pub best_epoch: usize,
}

pub fn sidecar_path(checkpoint: &Path) -> PathBuf {
    checkpoint.with_extension("json")
}

/// Dataset, split and cached features shared by every run over the same data.
#[derive(Debug, Clone)]
pub struct Prepared {
    pub dataset: LabeledDataset,
    pub split: Split,
    pub vocab: Vocab,
    pub features: Vec<MoleculeFeatures>,
}

impl Prepared {
    pub fn new(dataset: LabeledDataset, cfg: &RunConfig) -> Result<Self, TrainError> {
        let split = split(&dataset, cfg.split, cfg.seed)?;
        let vocab = Vocab::from_corpus(split.train.iter().map(|&i| dataset.smiles[i].as_str()), cfg.model.max_len);
        let features = featurize_all(&dataset.smiles, &vocab)?;
        Ok(Self {
            dataset,
            split,
            vocab,
            features,
        })
    }
}

pub fn featurize_all(smiles: &[String], vocab: &Vocab) -> Result<Vec<MoleculeFeatures>, TrainError> {
    Ok(smiles
        .par_iter()
        .map(|s| MoleculeFeatures::from_smiles(s, vocab))
        .collect::<Result<Vec<_>, _>>()?)
}

pub fn load_dataset(cfg: &RunConfig) -> Result<LabeledDataset, TrainError> {
    match (&cfg.data.csv, &cfg.data.synthetic) {
        (Some(p), None) => Ok(load_csv(p)?),
        (None, Some(s)) => Ok(synthetic_dataset(s.n_molecules, s.n_labels, s.seed)?),
        _ => Err(TrainError::Config("data needs exactly one of csv or synthetic".into())),
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub model: HmfNet,
    pub log: Vec<EpochLog>,
    pub best_epoch: usize,
    pub sidecar: Sidecar,
    pub test: Option<EvalReport>,
}

/// Loss configuration actually optimized: CIL when switched on, otherwise
/// BCE alone (class-weighted or plain).
pub fn effective_loss(cfg: &RunConfig, weights: &ClassWeights) -> (CilConfig, ClassWeights) {
    if cfg.model.switches.cil {
        return (cfg.cil.clone(), weights.clone());
    }
    let loss = CilConfig {
        lambda: LossWeights::BCE_ONLY,
        per_batch_weights: cfg.cil.per_batch_weights && cfg.bce_weighted,
        ..cfg.cil.clone()
    };
    let w = if cfg.bce_weighted {
        weights.clone()
    } else {
        ClassWeights {
            w: vec![1.0; weights.w.len()],
            ..weights.clone()
        }
    };
    (loss, w)
}

/// Probabilities for `rows` of `features`, batched.
pub fn predict_rows(
    model: &HmfNet,
    features: &[MoleculeFeatures],
    rows: &[usize],
    batch_size: usize,
) -> Result<Tensor, TrainError> {
    let m = model.config.num_labels;
    let mut out = Vec::with_capacity(rows.len() * m);
    for chunk in rows.chunks(batch_size.max(1)) {
        let refs: Vec<&MoleculeFeatures> = chunk.iter().map(|&i| &features[i]).collect();
        let p = model.predict(&GraphBatch::new(&refs, None)?)?;
        out.extend_from_slice(p.probabilities.data());
    }
    Ok(Tensor::matrix(rows.len(), m, out)?)
}

/// Evaluation report over `rows`; `None` when no label there is scorable.
pub fn score_rows(
    model: &HmfNet,
    prep: &Prepared,
    rows: &[usize],
    cfg: &RunConfig,
) -> Result<Option<EvalReport>, TrainError> {
    if rows.is_empty() {
        return Ok(None);
    }
    let p = predict_rows(model, &prep.features, rows, cfg.batch_size)?;
    let y = prep.dataset.y_for(rows);
    match evaluate(&p, &y, &prep.dataset.vocab, cfg.threshold) {
        Ok(r) => Ok(Some(r)),
        Err(MetricsError::NoEvaluableClasses) => Ok(None),
        Err(e) => Err(e.into()),
    }
}

/// Runs the epoch loop and keeps the parameters with the best validation
/// macro-F1 (training F1 when there is no usable validation split).
pub fn train_prepared(
    cfg: &RunConfig,
    prep: &Prepared,
    mut on_epoch: impl FnMut(&EpochLog),
) -> Result<TrainOutcome, TrainError> {
    cfg.validate()?;
    let ds = &prep.dataset;
    let mut model_cfg = cfg.model.clone();
    model_cfg.num_labels = ds.num_labels();
    model_cfg.vocab_size = prep.vocab.len();
    model_cfg.max_len = prep.vocab.max_len;
    let mut rng = Rng::seed(cfg.seed);
    let mut model = HmfNet::new(model_cfg.clone(), &mut rng)?;

    let y_train = ds.y_for(&prep.split.train);
    let weights = class_weights(&y_train);
    let targets: EnergyTargets = energy_targets(&y_train, cfg.cil.c);
    let (loss_cfg, loss_weights) = effective_loss(cfg, &weights);
    let mut adam = Adam::new(cfg.optimizer, &model.params);

    let mut best = model.params.clone();
    let mut best_epoch = 0;
    let mut best_score = f64::NEG_INFINITY;
    let mut log = Vec::new();
    let mut order = prep.split.train.clone();

    for epoch in 1..=cfg.epochs {
        rng.shuffle(&mut order);
        let mut sum = [0.0; 5];
        for chunk in order.chunks(cfg.batch_size) {
            let refs: Vec<&MoleculeFeatures> = chunk.iter().map(|&i| &prep.features[i]).collect();
            let y = ds.y_for(chunk);
            let batch = GraphBatch::new(&refs, None)?;
            let mut s = Session::new(&model.params);
            let out = model.forward_vars(&mut s, &batch)?;
            let loss = total_loss_var(&mut s.tape, out.probs, &y, &loss_weights, &targets, &loss_cfg)?;
            let b = loss.values(&s.tape);
            let grads = s.param_grads(loss.total)?;
            drop(s);
            adam.step(&mut model.params, &grads);
            let k = chunk.len() as f64;
            for (acc, v) in sum.iter_mut().zip([b.basis, b.class, b.sample, b.col, b.total]) {
                *acc += k * v;
            }
        }
        let n = order.len().max(1) as f64;
        let train_report = if cfg.eval_train || cfg.target_train_f1.is_some() {
            score_rows(&model, prep, &prep.split.train, cfg)?
        } else {
            None
        };
        let val_report = score_rows(&model, prep, &prep.split.val, cfg)?;
        let entry = EpochLog {
            epoch,
            loss: LossBreakdownLog {
                basis: sum[0] / n,
                class: sum[1] / n,
                sample: sum[2] / n,
                col: sum[3] / n,
                total: sum[4] / n,
            },
            train_f1: train_report.as_ref().map(|r| r.macro_f1),
            val_f1: val_report.as_ref().map(|r| r.macro_f1),
            val_auroc: val_report.as_ref().map(|r| r.auroc),
        };
        let selection = entry.val_f1.or(entry.train_f1).unwrap_or(-entry.loss.total);
        if selection > best_score {
            best_score = selection;
            best_epoch = epoch;
            best.assign_from(&model.params)?;
        }
        on_epoch(&entry);
        let reached = matches!((cfg.target_train_f1, entry.train_f1), (Some(t), Some(f)) if f >= t);
        log.push(entry);
        if reached {
            break;
        }
    }
    model.params = best;

    let test = score_rows(&model, prep, &prep.split.test, cfg)?;
    let sidecar = Sidecar {
        run: cfg.clone(),
        model: model_cfg,
        labels: ds.vocab.clone(),
        token_vocab: prep.vocab.clone(),
        class_weights: weights.w.clone(),
        m_in: targets.m_in.clone(),
        m_out: targets.m_out.clone(),
        best_epoch,
    };
    Ok(TrainOutcome {
        model,
        log,
        best_epoch,
        sidecar,
        test,
    })
}

pub fn train(cfg: &RunConfig, on_epoch: impl FnMut(&EpochLog)) -> Result<TrainOutcome, TrainError> {
    cfg.validate()?;
    let ds = load_dataset(cfg)?;
    let prep = Prepared::new(ds, cfg)?;
    train_prepared(cfg, &prep, on_epoch)
}

/// Writes `model.bin`, `model.json`, `metrics.jsonl` and, when a test split
/// exists, `eval.json` plus `eval_per_class.csv` into `dir`.
pub fn write_run(outcome: &TrainOutcome, dir: &Path) -> Result<PathBuf, TrainError> {
    std::fs::create_dir_all(dir)?;
    let ckpt = dir.join("model.bin");
    save_checkpoint(&outcome.model, &outcome.sidecar, &ckpt)?;
    let mut f = std::io::BufWriter::new(std::fs::File::create(dir.join("metrics.jsonl"))?);
    for e in &outcome.log {
        serde_json::to_writer(&mut f, e)?;
        f.write_all(b"\n")?;
    }
    f.flush()?;
    if let Some(r) = &outcome.test {
        std::fs::write(dir.join("eval.json"), serde_json::to_string_pretty(r)?)?;
        std::fs::write(
            dir.join("eval_per_class.csv"),
            r.per_class_csv().map_err(|e| TrainError::Io(std::io::Error::other(e.to_string())))?,
        )?;
    }
    Ok(ckpt)
}

pub fn save_checkpoint(model: &HmfNet, sidecar: &Sidecar, path: &Path) -> Result<(), TrainError> {
    model.params.save(path)?;
    std::fs::write(sidecar_path(path), serde_json::to_string_pretty(sidecar)?)?;
    Ok(())
}

/// A trained network with the metadata to featurize inputs for it.
#[derive(Debug, Clone)]
pub struct LoadedModel {
    pub model: HmfNet,
    pub sidecar: Sidecar,
}

impl LoadedModel {
    pub fn load(checkpoint: &Path) -> Result<Self, TrainError> {
        let side = sidecar_path(checkpoint);
        let text = std::fs::read_to_string(&side)
            .map_err(|e| TrainError::Checkpoint(format!("{}: {e}", side.display())))?;
        let mut sidecar: Sidecar = serde_json::from_str(&text)?;
        sidecar.token_vocab.reindex();
        let stored = ParamStore::load(checkpoint)?;
        let mut model = HmfNet::new(sidecar.model.clone(), &mut Rng::seed(0))?;
        if stored.len() != model.params.len() {
            return Err(TrainError::Checkpoint(format!(
                "checkpoint has {} tensors, model expects {}",
                stored.len(),
                model.params.len()
            )));
        }
        model.params.assign_from(&stored)?;
        Ok(Self { model, sidecar })
    }

    pub fn features(&self, smiles: &[String]) -> Result<Vec<MoleculeFeatures>, TrainError> {
        featurize_all(smiles, &self.sidecar.token_vocab)
    }

    /// Labels of `ds` re-indexed onto this model's label list; labels the
    /// model never saw are dropped and counted.
    pub fn align_labels(&self, ds: &LabeledDataset) -> (Tensor, usize) {
        let mut y = Tensor::zeros(ds.len(), self.sidecar.labels.len());
        let mut unknown = 0;
        for (i, ls) in ds.labels.iter().enumerate() {
            for &l in ls {
                match self.sidecar.labels.iter().position(|x| *x == ds.vocab[l]) {
                    Some(j) => y.set(i, j, 1.0),
                    None => unknown += 1,
                }
            }
        }
        (y, unknown)
    }

    pub fn predict(&self, smiles: &[String]) -> Result<Tensor, TrainError> {
        let feats = self.features(smiles)?;
        let rows: Vec<usize> = (0..feats.len()).collect();
        predict_rows(&self.model, &feats, &rows, self.sidecar.run.batch_size)
    }

    /// Labels sorted by probability, highest first.
    pub fn top_k(&self, smiles: &str, k: usize) -> Result<Vec<(String, f64)>, TrainError> {
        let p = self.predict(&[smiles.to_string()])?;
        let mut pairs: Vec<(String, f64)> = self.sidecar.labels.iter().cloned().zip(p.row(0).iter().copied()).collect();
        pairs.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
        pairs.truncate(k);
        Ok(pairs)
    }

    /// Loss components on `(pred, y)` with the training split's class
    /// weights and energy targets.
    pub fn loss_report(&self, pred: &Tensor, y: &Tensor) -> Result<LossBreakdown, TrainError> {
        let weights = ClassWeights {
            w: self.sidecar.class_weights.clone(),
            pos: Vec::new(),
            neg: Vec::new(),
        };
        let targets = EnergyTargets {
            m_in: self.sidecar.m_in.clone(),
            m_out: self.sidecar.m_out.clone(),
            c: self.sidecar.run.cil.c,
        };
        let (cfg, w) = effective_loss(&self.sidecar.run, &weights);
        Ok(crate::cil::total_loss(pred, y, &w, &targets, &cfg)?)
    }
}
