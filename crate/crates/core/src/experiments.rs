//! Multi-run experiments sharing one dataset, split and feature cache:
//! branch ablations, structural ablations and hyperparameter sweeps.

use rayon::prelude::*;
use serde::Serialize;

use crate::cil::LossWeights;
use crate::metrics::EvalReport;
use crate::model::{apply_ablation, Switches, STRUCTURAL_ABLATIONS, ABLATION_ROWS};
use crate::train::{score_rows, train_prepared, Prepared, RunConfig, TrainError};

/// Values of `c` swept by default.
pub const DEFAULT_C_GRID: [f64; 6] = [0.1, 0.2, 0.3, 0.4, 1.0, 10.0];

/// `(basis, class, sample, col)` loss weights swept by default.
pub const DEFAULT_LAMBDA_GRID: [[f64; 4]; 6] = [
    [0.5, 0.2, 0.2, 0.2],
    [0.5, 0.2, 0.1, 0.2],
    [1.0, 0.2, 0.1, 0.2],
    [1.0, 0.2, 0.2, 0.2],
    [1.0, 0.3, 0.3, 0.3],
    [1.0, 0.4, 0.4, 0.4],
];

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Score {
    pub f1: f64,
    pub auroc: f64,
    /// `test`, or `train` when the test split has nothing to score.
    pub split: &'static str,
    pub best_epoch: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AblationRow {
    pub name: String,
    pub switches: Switches,
    pub score: Score,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepRow {
    pub c: f64,
    pub lambda: [f64; 4],
    pub score: Score,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SweepParam {
    C,
    Lambda,
}

impl std::str::FromStr for SweepParam {
    type Err = TrainError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "c" => Ok(Self::C),
            "lambda" | "λ" => Ok(Self::Lambda),
            other => Err(TrainError::Config(format!("unknown sweep parameter {other:?}; use c or lambda"))),
        }
    }
}

fn run_scored(cfg: &RunConfig, prep: &Prepared) -> Result<Score, TrainError> {
    let out = train_prepared(cfg, prep, |_| {})?;
    let (report, split): (Option<EvalReport>, _) = match out.test {
        Some(r) => (Some(r), "test"),
        None => (score_rows(&out.model, prep, &prep.split.train, cfg)?, "train"),
    };
    let report = report.ok_or_else(|| TrainError::Config("no split has a scorable label".into()))?;
    Ok(Score {
        f1: report.macro_f1,
        auroc: report.auroc,
        split,
        best_epoch: out.best_epoch,
    })
}

fn run_all(configs: Vec<RunConfig>, prep: &Prepared) -> Result<Vec<Score>, TrainError> {
    configs.par_iter().map(|c| run_scored(c, prep)).collect()
}

/// Trains the eight branch configurations of the ablation table, top to
/// bottom, with the base config's seed and split.
pub fn ablate(base: &RunConfig, prep: &Prepared) -> Result<Vec<AblationRow>, TrainError> {
    let configs: Vec<RunConfig> = ABLATION_ROWS
        .iter()
        .map(|sw| {
            let mut c = base.clone();
            c.model.switches = *sw;
            c
        })
        .collect();
    let scores = run_all(configs, prep)?;
    Ok(ABLATION_ROWS
        .iter()
        .zip(scores)
        .map(|(sw, score)| AblationRow {
            name: sw.tag(),
            switches: *sw,
            score,
        })
        .collect())
}

/// Full model against the model without HMFM, without the local branch and
/// without the global branch.
pub fn ablate_structure(base: &RunConfig, prep: &Prepared) -> Result<Vec<AblationRow>, TrainError> {
    let mut configs = Vec::new();
    for name in STRUCTURAL_ABLATIONS {
        let mut c = base.clone();
        c.model = apply_ablation(&base.model, &[name])?;
        configs.push(c);
    }
    let switches: Vec<Switches> = configs.iter().map(|c| c.model.switches).collect();
    let scores = run_all(configs, prep)?;
    Ok(STRUCTURAL_ABLATIONS
        .iter()
        .zip(switches)
        .zip(scores)
        .map(|((name, switches), score)| AblationRow {
            name: name.to_string(),
            switches,
            score,
        })
        .collect())
}

/// One run per grid point. `c_grid` / `lambda_grid` default to the
/// the built-in grids when empty.
pub fn sweep(
    base: &RunConfig,
    prep: &Prepared,
    param: SweepParam,
    c_grid: &[f64],
    lambda_grid: &[[f64; 4]],
) -> Result<Vec<SweepRow>, TrainError> {
    let mut configs = Vec::new();
    match param {
        SweepParam::C => {
            let grid = if c_grid.is_empty() { &DEFAULT_C_GRID[..] } else { c_grid };
            for &c in grid {
                let mut r = base.clone();
                r.cil.c = c;
                configs.push(r);
            }
        }
        SweepParam::Lambda => {
            let grid = if lambda_grid.is_empty() {
                &DEFAULT_LAMBDA_GRID[..]
            } else {
                lambda_grid
            };
            for &l in grid {
                let mut r = base.clone();
                r.cil.lambda = LossWeights::from_array(l);
                configs.push(r);
            }
        }
    }
    for c in &configs {
        c.validate()?;
    }
    let points: Vec<(f64, [f64; 4])> = configs.iter().map(|c| (c.cil.c, c.cil.lambda.as_array())).collect();
    let scores = run_all(configs, prep)?;
    Ok(points
        .into_iter()
        .zip(scores)
        .map(|((c, lambda), score)| SweepRow { c, lambda, score })
        .collect())
}

fn mark(on: bool) -> &'static str {
    if on {
        "1"
    } else {
        "0"
    }
}

fn csv_text(header: &[&str], rows: impl Iterator<Item = Vec<String>>) -> Result<String, TrainError> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let io = |e: csv::Error| TrainError::Io(std::io::Error::other(e.to_string()));
    w.write_record(header).map_err(io)?;
    for r in rows {
        w.write_record(&r).map_err(io)?;
    }
    let bytes = w.into_inner().map_err(|e| TrainError::Io(std::io::Error::other(e.to_string())))?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}

/// Columns: name, node, edge, fingerprint, token, hmfm, cil, lmfe, f1, auroc, split.
pub fn ablation_csv(rows: &[AblationRow]) -> Result<String, TrainError> {
    csv_text(
        &["name", "node", "edge", "fingerprint", "token", "hmfm", "cil", "lmfe", "f1", "auroc", "split"],
        rows.iter().map(|r| {
            let s = r.switches;
            let mut v: Vec<String> = vec![r.name.clone()];
            v.extend(
                [s.node, s.edge, s.fingerprint, s.token, s.hmfm, s.cil, s.lmfe]
                    .iter()
                    .map(|&b| mark(b).to_string()),
            );
            v.push(format!("{:.4}", r.score.f1));
            v.push(format!("{:.4}", r.score.auroc));
            v.push(r.score.split.to_string());
            v
        }),
    )
}

/// Columns: c, lambda_basis, lambda_class, lambda_sample, lambda_col, f1, auroc, split.
pub fn sweep_csv(rows: &[SweepRow]) -> Result<String, TrainError> {
    csv_text(
        &["c", "lambda_basis", "lambda_class", "lambda_sample", "lambda_col", "f1", "auroc", "split"],
        rows.iter().map(|r| {
            let mut v = vec![r.c.to_string()];
            v.extend(r.lambda.iter().map(|x| x.to_string()));
            v.push(format!("{:.4}", r.score.f1));
            v.push(format!("{:.4}", r.score.auroc));
            v.push(r.score.split.to_string());
            v
        }),
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::train::{load_dataset, SyntheticConfig};

    fn tiny() -> (RunConfig, Prepared) {
        let mut cfg = RunConfig::default();
        cfg.data.synthetic = Some(SyntheticConfig {
            n_molecules: 40,
            n_labels: 3,
            seed: 2,
        });
        cfg.epochs = 1;
        cfg.model.hidden = 8;
        cfg.model.mlp_hidden = 8;
        cfg.model.embed = 8;
        cfg.model.gat_heads = 2;
        cfg.model.token_heads = 2;
        let prep = Prepared::new(load_dataset(&cfg).unwrap(), &cfg).unwrap();
        (cfg, prep)
    }

    #[test]
    fn ablation_has_eight_rows() {
        let (cfg, prep) = tiny();
        let rows = ablate(&cfg, &prep).unwrap();
        assert_eq!(rows.len(), 8);
        assert_eq!(rows[0].name, "N");
        assert_eq!(rows[7].name, "N+E+F+T+H+C");
        let csv = ablation_csv(&rows).unwrap();
        assert_eq!(csv.lines().count(), 9);
    }

    #[test]
    fn single_point_sweep() {
        let (cfg, prep) = tiny();
        let rows = sweep(&cfg, &prep, SweepParam::C, &[0.3], &[]).unwrap();
        assert_eq!(rows.len(), 1);
        assert_eq!(rows[0].c, 0.3);
        assert!("lambda".parse::<SweepParam>().is_ok());
        assert!("mu".parse::<SweepParam>().is_err());
    }
}
