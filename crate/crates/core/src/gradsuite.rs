//! Finite-difference suite over every layer of the network and every loss
//! component, each checked at several random points.

use std::rc::Rc;

use serde::Serialize;

use crate::cil::{
    class_energy_loss_var, class_weights, energy_targets, label_correlation_loss_var, sample_loss_var,
    total_loss_var, weighted_bce_var, CilConfig, EnergyMode,
};
use crate::hmfm::{Hmfm, HmfmConfig};
use crate::ndiff::gradcheck::{check_params, CheckResult, Tolerance};
use crate::ndiff::{
    EdgeIndex, GatLayer, LayerNorm, Linear, NdError, ParamId, ParamStore, Rng, Session, Tensor, TokenBatch,
    TransformerConfig, TransformerEncoder, Var,
};

pub const DEFAULT_POINTS: usize = 5;
/// Components sampled per point for layers with many parameters.
const SAMPLE_LIMIT: usize = 300;

#[derive(Debug, Clone, Serialize)]
pub struct SuiteReport {
    pub points: usize,
    pub step: f64,
    pub checks: Vec<CheckResult>,
    pub passed: bool,
}

impl SuiteReport {
    /// One line per check: name, components, fraction within tolerance,
    /// max relative error, verdict.
    pub fn table(&self) -> String {
        let mut out = format!(
            "{:<24} {:>10} {:>10} {:>12}  {}\n",
            "check", "components", "within", "max_rel_err", "result"
        );
        for c in &self.checks {
            out.push_str(&format!(
                "{:<24} {:>10} {:>9.2}% {:>12.3e}  {}\n",
                c.name,
                c.components,
                100.0 * c.fraction(),
                c.max_rel_error,
                if c.passed { "pass" } else { "FAIL" }
            ));
            if !c.passed {
                for w in &c.worst {
                    out.push_str(&format!(
                        "    {}[{}]: analytic {:.6e} numeric {:.6e} rel {:.3e}\n",
                        w.param, w.index, w.analytic, w.numeric, w.rel_error
                    ));
                }
            }
        }
        out
    }
}

type Build = fn(&mut Rng) -> Case;

struct Case {
    store: ParamStore,
    objective: Box<dyn Fn(&mut Session) -> Result<Var, NdError>>,
}

fn random_matrix(rng: &mut Rng, rows: usize, cols: usize, scale: f64) -> Tensor {
    Tensor::matrix(rows, cols, (0..rows * cols).map(|_| rng.uniform(-scale, scale)).collect()).unwrap()
}

/// `sum(out * probe)` with a fixed random probe, so every output entry
/// contributes a distinct weight.
fn probe(s: &mut Session, out: Var, p: &Tensor) -> Result<Var, NdError> {
    let c = s.tape.constant(p.clone());
    let m = s.tape.mul(out, c)?;
    Ok(s.tape.sum(m))
}

fn input(store: &mut ParamStore, rng: &mut Rng, rows: usize, cols: usize) -> ParamId {
    store.add("x", random_matrix(rng, rows, cols, 1.0))
}

fn linear(rng: &mut Rng) -> Case {
    let mut store = ParamStore::new();
    let x = input(&mut store, rng, 4, 5);
    let lin = Linear::new(&mut store, "linear", 5, 3, rng);
    let p = random_matrix(rng, 4, 3, 1.0);
    Case {
        store,
        objective: Box::new(move |s| {
            let xv = s.param(x);
            let y = lin.forward(s, xv)?;
            probe(s, y, &p)
        }),
    }
}

fn layer_norm(rng: &mut Rng) -> Case {
    let mut store = ParamStore::new();
    let x = input(&mut store, rng, 3, 6);
    let ln = LayerNorm::new(&mut store, "ln", 6);
    for id in [ln.gamma, ln.beta] {
        let t = store.get_mut(id);
        for v in t.data_mut() {
            *v += rng.uniform(-0.5, 0.5);
        }
    }
    let p = random_matrix(rng, 3, 6, 1.0);
    Case {
        store,
        objective: Box::new(move |s| {
            let xv = s.param(x);
            let y = ln.forward(s, xv)?;
            probe(s, y, &p)
        }),
    }
}

fn gat(rng: &mut Rng) -> Case {
    let mut store = ParamStore::new();
    let bonds = [(0, 1), (1, 2), (2, 3), (3, 0), (2, 4)];
    let x = input(&mut store, rng, 5, 4);
    let e = store.add("edge", random_matrix(rng, bonds.len(), 3, 1.0));
    let layer = GatLayer::new(&mut store, "gat", 4, Some(3), 2, 3, rng);
    let index = EdgeIndex::new(5, &bonds).unwrap();
    let p = random_matrix(rng, 5, layer.out_dim(), 1.0);
    Case {
        store,
        objective: Box::new(move |s| {
            let xv = s.param(x);
            let ev = s.param(e);
            let y = layer.forward(s, xv, Some(ev), &index)?;
            probe(s, y, &p)
        }),
    }
}

fn pooling(rng: &mut Rng) -> Case {
    let mut store = ParamStore::new();
    let x = input(&mut store, rng, 7, 3);
    let offsets: Rc<[usize]> = Rc::from(vec![0, 2, 3, 7]);
    let p = random_matrix(rng, 3, 3, 1.0);
    Case {
        store,
        objective: Box::new(move |s| {
            let xv = s.param(x);
            let y = s.tape.segment_mean(xv, offsets.clone())?;
            probe(s, y, &p)
        }),
    }
}

fn transformer(rng: &mut Rng) -> Case {
    let mut store = ParamStore::new();
    let cfg = TransformerConfig {
        vocab_size: 9,
        max_len: 6,
        dim: 8,
        heads: 2,
        ffn_hidden: 12,
    };
    let enc = TransformerEncoder::new(&mut store, "tok", cfg, rng);
    let seqs: Vec<Vec<usize>> = [3, 5, 6]
        .iter()
        .map(|&n| (0..n).map(|_| rng.below(cfg.vocab_size)).collect())
        .collect();
    let batch = TokenBatch::from_sequences(&seqs);
    let p = random_matrix(rng, 3, cfg.dim, 1.0);
    Case {
        store,
        objective: Box::new(move |s| {
            let y = enc.forward(s, &batch)?.pooled;
            probe(s, y, &p)
        }),
    }
}

fn hmfm(rng: &mut Rng) -> Case {
    let mut store = ParamStore::new();
    let x = input(&mut store, rng, 3, 4);
    let h = Hmfm::new(&mut store, "hmfm", HmfmConfig::new(4), rng).unwrap();
    let p = random_matrix(rng, 3, h.output_dim(), 1.0);
    Case {
        store,
        objective: Box::new(move |s| {
            let xv = s.param(x);
            let y = h.forward(s, xv)?;
            probe(s, y, &p)
        }),
    }
}

const N: usize = 8;
const M: usize = 4;

/// Random multi-hot labels with every column holding both classes.
fn labels(rng: &mut Rng) -> Tensor {
    let mut y = Tensor::zeros(N, M);
    for c in 0..M {
        let pos = 1 + rng.below(N - 1);
        let mut rows: Vec<usize> = (0..N).collect();
        rng.shuffle(&mut rows);
        for &r in &rows[..pos] {
            y.set(r, c, 1.0);
        }
    }
    y
}

/// Logits as parameters; the loss sees `sigmoid(logits)`.
fn loss_case(rng: &mut Rng, f: impl Fn(&mut Session, Var, &Tensor) -> Result<Var, NdError> + 'static) -> Case {
    let mut store = ParamStore::new();
    let z = store.add("logits", random_matrix(rng, N, M, 2.5));
    let y = labels(rng);
    Case {
        store,
        objective: Box::new(move |s| {
            let zv = s.param(z);
            let p = s.tape.sigmoid(zv);
            f(s, p, &y)
        }),
    }
}

fn cil_err(e: crate::cil::CilError) -> NdError {
    match e {
        crate::cil::CilError::Nd(e) => e,
        other => NdError::Checkpoint(other.to_string()),
    }
}

fn cil_basis(rng: &mut Rng) -> Case {
    loss_case(rng, |s, p, y| {
        let w = class_weights(y).w;
        weighted_bce_var(&mut s.tape, p, y, &w).map_err(cil_err)
    })
}

fn cil_class(mode: EnergyMode) -> impl Fn(&mut Session, Var, &Tensor) -> Result<Var, NdError> {
    move |s, p, y| {
        // high c keeps the hinges active so the check sees nonzero gradients
        let t = energy_targets(y, 0.4);
        class_energy_loss_var(&mut s.tape, p, y, &t, mode).map_err(cil_err)
    }
}

fn cil_class_corrected(rng: &mut Rng) -> Case {
    loss_case(rng, cil_class(EnergyMode::Corrected))
}

fn cil_class_literal(rng: &mut Rng) -> Case {
    loss_case(rng, cil_class(EnergyMode::Literal))
}

fn cil_sample(rng: &mut Rng) -> Case {
    loss_case(rng, |s, p, y| {
        sample_loss_var(&mut s.tape, p, y, &CilConfig::default().sample).map_err(cil_err)
    })
}

fn cil_col(rng: &mut Rng) -> Case {
    loss_case(rng, |s, p, y| label_correlation_loss_var(&mut s.tape, p, y).map_err(cil_err))
}

fn cil_total(rng: &mut Rng) -> Case {
    loss_case(rng, |s, p, y| {
        let cfg = CilConfig::default();
        let w = class_weights(y);
        let t = energy_targets(y, cfg.c);
        Ok(total_loss_var(&mut s.tape, p, y, &w, &t, &cfg).map_err(cil_err)?.total)
    })
}

const CHECKS: [(&str, Build); 12] = [
    ("linear", linear),
    ("layer_norm", layer_norm),
    ("gat", gat),
    ("pooling", pooling),
    ("transformer", transformer),
    ("hmfm", hmfm),
    ("cil.basis", cil_basis),
    ("cil.class.corrected", cil_class_corrected),
    ("cil.class.literal", cil_class_literal),
    ("cil.sample", cil_sample),
    ("cil.col", cil_col),
    ("cil.total", cil_total),
];

/// Names of the checks in report order.
pub fn check_names() -> Vec<&'static str> {
    CHECKS.iter().map(|c| c.0).collect()
}

/// Runs every check at `points` random points. `fault` corrupts the
/// backward rule of the named tape op in every check.
pub fn run_suite(seed: u64, points: usize, fault: Option<&'static str>) -> Result<SuiteReport, NdError> {
    let tol = Tolerance::default();
    let mut checks = Vec::new();
    for (k, (name, build)) in CHECKS.iter().enumerate() {
        let mut parts = Vec::with_capacity(points);
        for point in 0..points {
            let mut rng = Rng::seed(seed ^ ((k as u64) << 32) ^ point as u64);
            let case = build(&mut rng);
            parts.push(check_params(
                name,
                &case.store,
                &*case.objective,
                &tol,
                Some((SAMPLE_LIMIT, &mut rng)),
                fault,
            )?);
        }
        checks.push(CheckResult::merge(name, parts, &tol));
    }
    let passed = checks.iter().all(|c| c.passed);
    Ok(SuiteReport {
        points,
        step: tol.step,
        checks,
        passed,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn corrupted_matmul_fails_linear() {
        let r = run_suite(1, 1, Some("matmul")).unwrap();
        let lin = r.checks.iter().find(|c| c.name == "linear").unwrap();
        assert!(!lin.passed);
        assert!(!r.passed);
    }

    #[test]
    fn clean_suite_passes() {
        let r = run_suite(0, DEFAULT_POINTS, None).unwrap();
        assert!(r.passed, "{}", r.table());
        assert_eq!(r.checks.len(), check_names().len());
    }
}
