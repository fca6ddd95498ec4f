use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

use ndfusion::baselines::{Bands, Baseline, BaselineMethod};
use ndfusion::checkpoint;
use ndfusion::config::RunConfig;
use ndfusion::csi::{calibrate, complex_to_real, pretrain_cae, Cae, CaeConfig};
use ndfusion::data::{read_split, Scaler, Splits};
use ndfusion::eval::{evaluate, export_latents, predict_all, EvalReport, LatentExport, Provenance};
use ndfusion::model::{Ndf, Regressor, WindowInput};
use ndfusion::plot;
use ndfusion::testbed::{build_dataset, Scenario};
use ndfusion::train::{prepare_windows, search_hyperparams, train, Prepared};
use ndfusion::{Error, Result};

#[derive(Parser)]
#[command(name = "ndfusion", version, about = "Multi-band neural dynamic fusion for trajectory estimation")]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// TOML run configuration.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the configured run seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[arg(long, global = true, default_value = "out")]
    out_dir: PathBuf,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate a dataset and write its splits.
    Simulate {
        /// Seconds of recording.
        #[arg(long)]
        duration: Option<f64>,
        /// Window step in seconds.
        #[arg(long)]
        step: Option<f64>,
    },
    /// Pretrain the CSI autoencoder on simulated raw CSI.
    PretrainCae {
        #[arg(long)]
        duration: Option<f64>,
    },
    /// Train the fusion model.
    Train {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        epochs: Option<usize>,
    },
    /// Evaluate a trained (or freshly initialised) fusion model.
    Eval {
        #[arg(long)]
        data: PathBuf,
        /// Directory written by `train`.
        #[arg(long)]
        model: Option<PathBuf>,
        #[arg(long, default_value = "test")]
        split: String,
    },
    /// Train and evaluate a baseline.
    Baseline {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        method: Option<String>,
        #[arg(long)]
        bands: Option<String>,
        #[arg(long)]
        epochs: Option<usize>,
    },
    /// Random search over the loss weights.
    Search {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        budget: Option<usize>,
        #[arg(long)]
        epochs: Option<usize>,
    },
    /// Write fused latent states of label points inside the track regions.
    ExportLatents {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        model: PathBuf,
        #[arg(long, default_value = "test")]
        split: String,
    },
    /// Render SVG figures from earlier outputs.
    Plot {
        #[arg(long, value_enum)]
        kind: PlotKind,
        /// Report, prediction or latent files, depending on the kind.
        #[arg(long, required = true, num_args = 1..)]
        input: Vec<PathBuf>,
        /// Windows drawn in a trajectory plot.
        #[arg(long, default_value_t = 12)]
        windows: usize,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum PlotKind {
    Trajectory,
    Cdf,
    Latents,
}

/// Everything `eval` and `export-latents` need besides the checkpoint.
#[derive(Serialize, Deserialize)]
struct ModelInfo {
    config: RunConfig,
    scaler: Scaler,
}

#[derive(Serialize, Deserialize)]
struct PredictionRecord {
    window_id: usize,
    t: Vec<f64>,
    truth: Vec<[f64; 2]>,
    pred: Vec<[f64; 2]>,
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    std::fs::write(path, serde_json::to_string_pretty(value)? + "\n").map_err(|e| Error::Io { path: path.to_path_buf(), source: e })
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let s = std::fs::read_to_string(path).map_err(|e| Error::Io { path: path.to_path_buf(), source: e })?;
    Ok(serde_json::from_str(&s)?)
}

fn create_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::Io { path: dir.to_path_buf(), source: e })
}

fn load_config(common: &Common) -> Result<RunConfig> {
    let cfg = match &common.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    let cfg = cfg.resolve(common.seed);
    cfg.validate()?;
    Ok(cfg)
}

fn load_splits(dir: &Path) -> Result<Splits> {
    let read = |name: &str| read_split(&dir.join(format!("{name}.jsonl"))).map(|f| f.windows());
    Ok(Splits { train: read("train")?, val: read("val")?, test: read("test")? })
}

fn load_prepared(dir: &Path) -> Result<Prepared> {
    ndfusion::train::prepare(&load_splits(dir)?)
}

fn pick<'a>(p: &'a Prepared, split: &str) -> Result<&'a [WindowInput]> {
    match split {
        "train" => Ok(&p.train),
        "val" => Ok(&p.val),
        "test" => Ok(&p.test),
        other => Err(Error::Config(format!("unknown split {other:?}"))),
    }
}

fn write_predictions<M: Regressor>(model: &M, windows: &[WindowInput], path: &Path) -> Result<()> {
    let preds = predict_all(model, windows)?;
    let mut out = String::new();
    for (w, p) in windows.iter().zip(&preds) {
        let rows = |t: &ndfusion::tensor::Tensor| (0..t.rows()).map(|r| [t.get(r, 0), t.get(r, 1)]).collect();
        let rec = PredictionRecord { window_id: w.id, t: w.label_t.clone(), truth: rows(&w.labels), pred: rows(p) };
        out.push_str(&serde_json::to_string(&rec)?);
        out.push('\n');
    }
    std::fs::write(path, out).map_err(|e| Error::Io { path: path.to_path_buf(), source: e })
}

/// Restore a fusion model saved by `train`, reporting whether trained
/// weights were found.
fn load_model(cfg: &RunConfig, model_dir: Option<&Path>) -> Result<(Ndf, Option<Scaler>, Provenance)> {
    let Some(dir) = model_dir else {
        return Ok((Ndf::new(cfg.model.clone(), cfg.seed)?, None, Provenance::RandomInit));
    };
    let info: ModelInfo = read_json(&dir.join("model.json"))?;
    let mut model = Ndf::new(info.config.model.clone(), info.config.seed)?;
    if checkpoint::paths(dir, "best").0.exists() {
        let hash = model.config_hash()?;
        checkpoint::load(dir, "best", &mut model.store, &hash)?;
        Ok((model, Some(info.scaler), Provenance::Trained))
    } else {
        Ok((model, Some(info.scaler), Provenance::RandomInit))
    }
}

fn windows_for(data: &Path, scaler: Option<&Scaler>, split: &str) -> Result<Vec<WindowInput>> {
    match scaler {
        Some(s) => {
            let splits = load_splits(data)?;
            let ws = match split {
                "train" => &splits.train,
                "val" => &splits.val,
                "test" => &splits.test,
                other => return Err(Error::Config(format!("unknown split {other:?}"))),
            };
            Ok(prepare_windows(s, ws)?.0)
        }
        None => Ok(pick(&load_prepared(data)?, split)?.to_vec()),
    }
}

fn run(cli: Cli) -> Result<()> {
    let mut cfg = load_config(&cli.common)?;
    let out = cli.common.out_dir.as_path();
    create_dir(out)?;
    match cli.command {
        Command::Simulate { duration, step } => {
            if let Some(d) = duration {
                cfg.simulate.duration = d;
            }
            if let Some(s) = step {
                cfg.simulate.step = s;
            }
            let cfg = cfg.resolve(None);
            cfg.validate()?;
            let scenario = Scenario::standard(cfg.dataset.clone(), cfg.simulate.feature_seed);
            let built = build_dataset(&scenario, cfg.simulate.duration, cfg.seed, &cfg.split, out)?;
            let s = &built.splits;
            println!("windows {} (train {}, val {}, test {}), dropped {}", s.train.len() + s.val.len() + s.test.len(), s.train.len(), s.val.len(), s.test.len(), built.dropped);
            println!("frames per window: beam {:.1}, csi {:.1}", built.stats.mean_beam, built.stats.mean_csi);
            write_json(&out.join("stats.json"), &built.stats)?;
        }
        Command::PretrainCae { duration } => {
            let scenario = Scenario::standard(cfg.dataset.clone(), cfg.simulate.feature_seed);
            let raw = scenario.simulate_raw_csi(duration.unwrap_or(cfg.cae.duration), cfg.seed)?;
            let frames = raw
                .iter()
                .map(|f| calibrate(f, cfg.dataset.f_delta).map(|(c, _)| complex_to_real(&c)))
                .collect::<Result<Vec<_>>>()?;
            let rows = frames.first().map(|f| f.rows()).ok_or_else(|| Error::Config("no raw CSI frames in that duration".into()))?;
            let mut cae = Cae::new(CaeConfig::new(rows, cfg.dataset.m_c), cfg.seed)?;
            let pre = ndfusion::csi::PretrainConfig { seed: cfg.seed, ..cfg.cae.pretrain.clone() };
            let report = pretrain_cae(&mut cae, &frames, &pre)?;
            cae.save(out, "cae", serde_json::json!({ "frames": frames.len() }))?;
            write_json(&out.join("cae_report.json"), &report)?;
            println!("holdout mse {:.5} -> {:.5}", report.initial_holdout_mse, report.final_holdout_mse);
        }
        Command::Train { data, epochs } => {
            if let Some(e) = epochs {
                cfg.train.epochs = e;
            }
            let p = load_prepared(&data)?;
            let mut model = Ndf::new(cfg.model.clone(), cfg.seed)?;
            write_json(&out.join("model.json"), &ModelInfo { config: cfg.clone(), scaler: p.scaler.clone() })?;
            let report = train(&mut model, &p.train, &p.val, &cfg.train, Some(out))?;
            write_json(&out.join("train_report.json"), &report)?;
            println!("best epoch {} val loss {:.5} val coordinate loss {:.5}", report.best_epoch, report.best_val_loss, report.best_val_trajectory);
        }
        Command::Eval { data, model, split } => {
            let (m, scaler, provenance) = load_model(&cfg, model.as_deref())?;
            let windows = windows_for(&data, scaler.as_ref(), &split)?;
            let report = evaluate(&m, &windows, &split, provenance)?;
            report.write(&out.join("report.json"))?;
            write_predictions(&m, &windows, &out.join("predictions.jsonl"))?;
            print_report(&report);
        }
        Command::Baseline { data, method, bands, epochs } => {
            if let Some(m) = method {
                cfg.baseline.method = m.parse::<BaselineMethod>()?;
            }
            if let Some(b) = bands {
                cfg.baseline.bands = b.parse::<Bands>()?;
            }
            if let Some(e) = epochs {
                cfg.train.epochs = e;
            }
            let p = load_prepared(&data)?;
            let mut model = Baseline::new(cfg.baseline.clone(), cfg.seed)?;
            let tr = train(&mut model, &p.train, &p.val, &cfg.train, Some(out))?;
            write_json(&out.join("train_report.json"), &tr)?;
            let report = evaluate(&model, &p.test, "test", Provenance::Trained)?;
            report.write(&out.join("report.json"))?;
            write_predictions(&model, &p.test, &out.join("predictions.jsonl"))?;
            print_report(&report);
        }
        Command::Search { data, budget, epochs } => {
            let p = load_prepared(&data)?;
            let budget = budget.unwrap_or(cfg.search.budget);
            let epochs = epochs.unwrap_or(cfg.search.epochs);
            let report = search_hyperparams(|| Ndf::new(cfg.model.clone(), cfg.seed), &p.train, &p.val, &cfg.train, budget, epochs, cfg.seed)?;
            for t in &report.trials {
                println!("trial {} val coordinate loss {:.5} best so far {:.5}", t.index, t.val_trajectory, t.best_so_far);
            }
            write_json(&out.join("search.json"), &report)?;
        }
        Command::ExportLatents { data, model, split } => {
            let (m, scaler, _) = load_model(&cfg, Some(&model))?;
            let windows = windows_for(&data, scaler.as_ref(), &split)?;
            let scenario: Scenario = read_json(&data.join("scenario.json"))?;
            let export = export_latents(&m, &windows, &scenario.track.regions(cfg.export.region_half))?;
            for w in &export.warnings {
                eprintln!("warning: {w}");
            }
            export.write_jsonl(&out.join("latents.jsonl"))?;
            let sizes: Vec<usize> = export.groups.iter().map(Vec::len).collect();
            println!("exported {} latent states, per region {sizes:?}", export.len());
        }
        Command::Plot { kind, input, windows } => {
            let (name, svg) = match kind {
                PlotKind::Cdf => {
                    let series = input.iter().map(|p| EvalReport::read(p).map(|r| (r.method, r.errors))).collect::<Result<Vec<_>>>()?;
                    ("cdf.svg", plot::cdf_svg(&series)?)
                }
                PlotKind::Trajectory => {
                    let mut truth = Vec::new();
                    let mut estimates = Vec::new();
                    for (k, path) in input.iter().enumerate() {
                        let text = std::fs::read_to_string(path).map_err(|e| Error::Io { path: path.clone(), source: e })?;
                        let mut recs = text.lines().filter(|l| !l.trim().is_empty()).map(serde_json::from_str).collect::<std::result::Result<Vec<PredictionRecord>, _>>()?;
                        recs.sort_by_key(|r| r.window_id);
                        recs.truncate(windows);
                        if k == 0 {
                            truth = recs.iter().map(|r| r.truth.clone()).collect();
                        }
                        let label = path.parent().and_then(|d| d.file_name()).map(|s| s.to_string_lossy().into_owned()).unwrap_or_else(|| format!("input {k}"));
                        estimates.push((label, recs.into_iter().map(|r| r.pred).collect()));
                    }
                    ("trajectory.svg", plot::trajectory_svg(&truth, &estimates)?)
                }
                PlotKind::Latents => {
                    let mut recs = Vec::new();
                    for p in &input {
                        recs.extend(LatentExport::read_jsonl(p)?);
                    }
                    ("latents.svg", plot::latents_svg(&recs)?)
                }
            };
            let path = out.join(name);
            std::fs::write(&path, svg).map_err(|e| Error::Io { path: path.clone(), source: e })?;
            println!("wrote {}", path.display());
        }
    }
    Ok(())
}

fn print_report(r: &EvalReport) {
    println!("{} on {} ({:?}): mean {:.4} m, median {:.4} m, cdf90 {:.4} m over {} points", r.method, r.split, r.provenance, r.mean, r.median, r.cdf90, r.points);
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
