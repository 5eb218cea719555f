use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};
use serde_json::json;

use hmfnet::data::{label_stats, load_csv, read_smiles_column};
use hmfnet::experiments::{ablate, ablate_structure, ablation_csv, sweep, sweep_csv, SweepParam};
use hmfnet::featurize::FeatureRecord;
use hmfnet::gradsuite::{run_suite, DEFAULT_POINTS};
use hmfnet::metrics::evaluate;
use hmfnet::train::{load_dataset, train, write_run, LoadedModel, Prepared, RunConfig};

/// Multi-label odor prediction from SMILES.
#[derive(Parser)]
#[command(name = "hmfnet", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write per-molecule atom/bond features and fingerprints as JSON lines.
    Featurize {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train one model; writes model.bin, model.json and metrics.jsonl.
    Train {
        #[arg(long)]
        config: PathBuf,
        /// Overrides `output_dir` from the config.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Score a checkpoint on a labeled CSV.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: PathBuf,
        /// Also report the loss components on this data.
        #[arg(long)]
        loss_report: bool,
        /// Per-class CSV destination.
        #[arg(long)]
        per_class: Option<PathBuf>,
    },
    /// Most probable descriptors for one molecule.
    Predict {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        smiles: String,
        #[arg(long, default_value_t = 5)]
        top_k: usize,
    },
    /// Label frequencies and co-occurrence of a labeled CSV.
    Stats {
        #[arg(long)]
        data: PathBuf,
        /// Directory for stats.json, label_counts.csv and co_occurrence.csv.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Train the eight branch configurations and print a CSV table.
    Ablate {
        #[arg(long)]
        config: PathBuf,
        /// Run full / w/o HMFM / w/o LMFE / w/o GMFE instead.
        #[arg(long)]
        structural: bool,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// One run per grid value of `c` or `lambda`; prints a CSV table.
    Sweep {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        param: SweepParam,
        /// Comma-separated grid; lambda points are colon-separated quadruples
        /// such as `1:0.2:0.1:0.2`.
        #[arg(long)]
        values: Option<String>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Finite-difference check of every layer and loss component.
    Gradcheck {
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = DEFAULT_POINTS)]
        points: usize,
        #[arg(long)]
        json: bool,
        /// Corrupt the backward rule of a tape op (negative control).
        #[arg(long, hide = true)]
        corrupt: Option<String>,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}

fn load_config(path: &Path) -> Result<RunConfig> {
    RunConfig::load(path).with_context(|| format!("loading {}", path.display()))
}

fn emit(text: &str, out: Option<&Path>) -> Result<()> {
    match out {
        Some(p) => std::fs::write(p, text).with_context(|| format!("writing {}", p.display())),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn run(cmd: Command) -> Result<bool> {
    match cmd {
        Command::Featurize { input, out } => {
            let smiles = read_smiles_column(File::open(&input).with_context(|| format!("opening {}", input.display()))?)?;
            let mut w = BufWriter::new(File::create(&out).with_context(|| format!("creating {}", out.display()))?);
            let mut failed = 0;
            for s in &smiles {
                let line = match FeatureRecord::from_smiles(s) {
                    Ok(r) => serde_json::to_string(&r)?,
                    Err(e) => {
                        failed += 1;
                        serde_json::to_string(&json!({ "smiles": s, "error": e.to_string() }))?
                    }
                };
                writeln!(w, "{line}")?;
            }
            w.flush()?;
            eprintln!("featurized {} molecules, {failed} failed", smiles.len() - failed);
        }
        Command::Train { config, out } => {
            let cfg = load_config(&config)?;
            let dir = out
                .or_else(|| cfg.output_dir.clone())
                .unwrap_or_else(|| PathBuf::from("hmfnet-run"));
            let outcome = train(&cfg, |e| {
                eprintln!(
                    "epoch {:>4}  loss {:.5}  train_f1 {}  val_f1 {}",
                    e.epoch,
                    e.loss.total,
                    e.train_f1.map_or("-".into(), |v| format!("{v:.4}")),
                    e.val_f1.map_or("-".into(), |v| format!("{v:.4}")),
                )
            })?;
            let ckpt = write_run(&outcome, &dir)?;
            let summary = json!({
                "checkpoint": ckpt,
                "epochs_run": outcome.log.len(),
                "best_epoch": outcome.best_epoch,
                "test_macro_f1": outcome.test.as_ref().map(|r| r.macro_f1),
                "test_auroc": outcome.test.as_ref().map(|r| r.auroc),
            });
            println!("{}", serde_json::to_string_pretty(&summary)?);
        }
        Command::Eval {
            checkpoint,
            data,
            loss_report,
            per_class,
        } => {
            let m = LoadedModel::load(&checkpoint)?;
            let ds = load_csv(&data).with_context(|| format!("loading {}", data.display()))?;
            let (y, unknown) = m.align_labels(&ds);
            let p = m.predict(&ds.smiles)?;
            let report = evaluate(&p, &y, &m.sidecar.labels, m.sidecar.run.threshold)?;
            if let Some(path) = per_class {
                std::fs::write(&path, report.per_class_csv()?)?;
            }
            let mut out = json!({
                "molecules": ds.len(),
                "skipped_rows": ds.skipped,
                "unknown_label_assignments": unknown,
                "macro_f1": report.macro_f1,
                "auroc": report.auroc,
                "threshold": report.threshold,
                "per_class": report.per_class,
            });
            if loss_report {
                out["loss"] = serde_json::to_value(m.loss_report(&p, &y)?)?;
            }
            println!("{}", serde_json::to_string_pretty(&out)?);
        }
        Command::Predict {
            checkpoint,
            smiles,
            top_k,
        } => {
            let m = LoadedModel::load(&checkpoint)?;
            let top: Vec<_> = m
                .top_k(&smiles, top_k)?
                .into_iter()
                .map(|(label, p)| json!({ "label": label, "probability": p }))
                .collect();
            println!("{}", serde_json::to_string_pretty(&json!({ "smiles": smiles, "top": top }))?);
        }
        Command::Stats { data, out } => {
            let ds = load_csv(&data).with_context(|| format!("loading {}", data.display()))?;
            let st = label_stats(&ds)?;
            let summary = json!({
                "molecules": st.molecules,
                "skipped_rows": ds.skipped,
                "duplicate_rows": ds.duplicates,
                "labels": st.labels.len(),
                "total_assignments": st.total_assignments,
                "mean_labels_per_molecule": st.total_assignments as f64 / st.molecules as f64,
                "long_tail_ratio": st.long_tail_ratio,
                "floral_sweet_cooccurrence": st.pair("floral", "sweet"),
                "fruit_green_cooccurrence": st.pair("fruit", "green"),
                "top_labels": st.counts.iter().take(20).collect::<Vec<_>>(),
            });
            if let Some(dir) = out {
                std::fs::create_dir_all(&dir)?;
                std::fs::write(dir.join("stats.json"), serde_json::to_string_pretty(&st)?)?;
                std::fs::write(dir.join("label_counts.csv"), st.counts_csv()?)?;
                let mut w = csv::Writer::from_path(dir.join("co_occurrence.csv"))?;
                let mut header = vec![String::from("label")];
                header.extend(st.labels.iter().cloned());
                w.write_record(&header)?;
                for (l, row) in st.labels.iter().zip(&st.co_occurrence) {
                    let mut rec = vec![l.clone()];
                    rec.extend(row.iter().map(u64::to_string));
                    w.write_record(&rec)?;
                }
                w.flush()?;
            }
            println!("{}", serde_json::to_string_pretty(&summary)?);
        }
        Command::Ablate {
            config,
            structural,
            out,
        } => {
            let cfg = load_config(&config)?;
            let prep = Prepared::new(load_dataset(&cfg)?, &cfg)?;
            let rows = if structural {
                ablate_structure(&cfg, &prep)?
            } else {
                ablate(&cfg, &prep)?
            };
            emit(&ablation_csv(&rows)?, out.as_deref())?;
        }
        Command::Sweep {
            config,
            param,
            values,
            out,
        } => {
            let cfg = load_config(&config)?;
            let (c_grid, l_grid) = parse_grid(param, values.as_deref())?;
            let prep = Prepared::new(load_dataset(&cfg)?, &cfg)?;
            let rows = sweep(&cfg, &prep, param, &c_grid, &l_grid)?;
            emit(&sweep_csv(&rows)?, out.as_deref())?;
        }
        Command::Gradcheck {
            seed,
            points,
            json,
            corrupt,
        } => {
            let fault: Option<&'static str> = corrupt.map(|s| &*Box::leak(s.into_boxed_str()));
            let report = run_suite(seed, points.max(1), fault)?;
            if json {
                println!("{}", serde_json::to_string_pretty(&report)?);
            } else {
                print!("{}", report.table());
                println!("{}", if report.passed { "all checks passed" } else { "gradient check FAILED" });
            }
            return Ok(report.passed);
        }
    }
    Ok(true)
}

fn parse_grid(param: SweepParam, values: Option<&str>) -> Result<(Vec<f64>, Vec<[f64; 4]>)> {
    let Some(values) = values else {
        return Ok((Vec::new(), Vec::new()));
    };
    let items = values.split(',').map(str::trim).filter(|s| !s.is_empty());
    match param {
        SweepParam::C => Ok((
            items
                .map(|s| s.parse::<f64>().with_context(|| format!("bad c value {s:?}")))
                .collect::<Result<_>>()?,
            Vec::new(),
        )),
        SweepParam::Lambda => {
            let mut grid = Vec::new();
            for item in items {
                let parts: Vec<f64> = item
                    .split(':')
                    .map(|s| s.trim().parse::<f64>().with_context(|| format!("bad lambda point {item:?}")))
                    .collect::<Result<_>>()?;
                let Ok(point) = <[f64; 4]>::try_from(parts) else {
                    bail!("lambda point {item:?} needs four values");
                };
                grid.push(point);
            }
            Ok((Vec::new(), grid))
        }
    }
}
