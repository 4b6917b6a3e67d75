use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use drssl_core::checkpoint::{load_checkpoint, save_checkpoint, Checkpoint};
use drssl_core::config::RunConfig;
use drssl_core::evalkit::{
    config_split, evaluate, export_latents, run_ablation, standardize_split, sweep_multisubject,
    sweep_thresholds, MetricsReport,
};
use drssl_core::manifest::{FileDigest, RunManifest};
use drssl_core::shiftdata::{load_dataset, save_dataset, Dataset, SslSplit};
use drssl_core::trainer::{train, StepRecord};
use drssl_core::{Error, Result};

/// Distributionally robust semi-supervised training on shifted sensor data.
#[derive(Parser, Debug)]
#[command(name = "drssl", version = env!("DRSSL_VERSION"), about)]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug)]
struct Common {
    /// Config file of `key = value` lines.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Override one config key; repeatable, applied after the file.
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    overrides: Vec<String>,
    /// Training seed (the `seed` key).
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Run directory; all outputs are written here.
    #[arg(long, global = true, default_value = "run")]
    out: PathBuf,
    /// Worker threads for ablate and sweep.
    #[arg(long, global = true, default_value_t = 1)]
    jobs: usize,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate the synthetic L, U and T sets as dataset files.
    GenData,
    /// Train one model and write its history, metrics and checkpoint.
    Train {
        /// Directory with labeled.ssld, unlabeled.ssld and optionally test.ssld;
        /// synthetic data from the config when omitted.
        #[arg(long)]
        data: Option<PathBuf>,
    },
    /// Score a checkpoint on a labeled dataset file.
    Eval {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        data: PathBuf,
    },
    /// Train every variant on every protocol seed.
    Ablate,
    /// Threshold curves or the multi-subject grid.
    Sweep {
        #[arg(long, value_enum, default_value_t = SweepKind::Thresholds)]
        kind: SweepKind,
    },
    /// Write latent features and their 2-D PCA projection as CSV.
    ExportLatents {
        #[arg(long)]
        model: PathBuf,
        /// Directory of dataset files; synthetic data from the config when omitted.
        #[arg(long)]
        data: Option<PathBuf>,
    },
}

#[derive(ValueEnum, Clone, Copy, Debug)]
enum SweepKind {
    Thresholds,
    Subjects,
}

const SET_FILES: [&str; 3] = ["labeled", "unlabeled", "test"];

struct Run {
    cfg: RunConfig,
    out: PathBuf,
    jobs: usize,
    manifest: RunManifest,
    started: Instant,
}

impl Run {
    fn path(&self, name: &str) -> PathBuf {
        self.out.join(name)
    }

    fn input(&mut self, path: &Path) -> Result<()> {
        self.manifest.inputs.push(FileDigest::of(path)?);
        Ok(())
    }

    fn output(&mut self, name: &str) -> PathBuf {
        let p = self.path(name);
        self.manifest.outputs.push(p.clone());
        p
    }

    fn write_json<T: Serialize>(&mut self, name: &str, value: &T) -> Result<()> {
        let p = self.output(name);
        let text = serde_json::to_string_pretty(value).expect("output serializes");
        std::fs::write(&p, text + "\n").map_err(|e| Error::io(&p, e))
    }

    fn finish(mut self) -> Result<()> {
        let config = self.output("config.cfg");
        std::fs::write(&config, self.cfg.echo_text()).map_err(|e| Error::io(&config, e))?;
        self.manifest.wall_seconds = self.started.elapsed().as_secs_f64();
        let p = self.path("manifest.json");
        self.manifest.write(&p)?;
        println!("wrote {}", p.display());
        Ok(())
    }
}

fn load_config(common: &Common) -> Result<(RunConfig, Option<PathBuf>)> {
    let mut cfg = RunConfig::default();
    if let Some(p) = &common.config {
        let text = std::fs::read_to_string(p)
            .map_err(|e| Error::Config(format!("{}: {e}", p.display())))?;
        cfg.apply_text(&text)?;
    }
    for o in &common.overrides {
        cfg.apply_override(o)?;
    }
    if let Some(s) = common.seed {
        cfg.train.seed = s;
    }
    cfg.validate()?;
    Ok((cfg, common.config.clone()))
}

fn load_split(run: &mut Run, dir: &Path) -> Result<SslSplit> {
    let mut sets = Vec::new();
    for name in SET_FILES {
        let p = dir.join(format!("{name}.ssld"));
        if name == "test" && !p.exists() {
            sets.push(None);
            continue;
        }
        let d = load_dataset(&p)?;
        run.input(&p)?;
        sets.push(Some(d));
    }
    let mut it = sets.into_iter();
    let labeled = it.next().flatten().expect("labeled set is required");
    let unlabeled = it.next().flatten().expect("unlabeled set is required");
    let test = match it.next().flatten() {
        Some(t) => t,
        None => Dataset::new(
            labeled.channels(),
            labeled.window_len(),
            labeled.n_classes(),
            Vec::new(),
        )?,
    };
    Ok(SslSplit {
        labeled,
        unlabeled,
        test,
    })
}

#[derive(Serialize)]
struct TrainMetrics {
    steps: u64,
    gate_s_count: u64,
    gate_e_count: u64,
    final_step: Option<StepRecord>,
    labeled: MetricsReport,
    test: Option<MetricsReport>,
}

fn cmd_gen_data(run: &mut Run) -> Result<()> {
    let split = config_split(&run.cfg)?;
    std::fs::create_dir_all(&run.out).map_err(|e| Error::io(&run.out, e))?;
    for (name, d) in SET_FILES
        .iter()
        .zip([&split.labeled, &split.unlabeled, &split.test])
    {
        let p = run.output(&format!("{name}.ssld"));
        save_dataset(&p, d)?;
        println!("{name}: {} windows -> {}", d.len(), p.display());
    }
    Ok(())
}

fn cmd_train(run: &mut Run, data: Option<&Path>) -> Result<()> {
    let raw = match data {
        Some(dir) => load_split(run, dir)?,
        None => config_split(&run.cfg)?,
    };
    let prepared = standardize_split(&raw)?;
    for w in prepared.standardizer.warnings() {
        println!("warning: {w}");
    }
    println!(
        "training {} on {} labeled / {} unlabeled windows",
        run.cfg.train.variant,
        prepared.labeled.len(),
        prepared.unlabeled.len()
    );
    let heldout = (!prepared.test.is_empty()).then_some(&prepared.test);
    let (params, history) = train(
        &prepared.labeled,
        &prepared.unlabeled,
        &run.cfg.model,
        &run.cfg.train,
        heldout,
    )?;
    std::fs::create_dir_all(&run.out).map_err(|e| Error::io(&run.out, e))?;
    let hp = run.output("history.jsonl");
    let mut f = std::io::BufWriter::new(std::fs::File::create(&hp).map_err(|e| Error::io(&hp, e))?);
    history.write_jsonl(&mut f).map_err(|e| Error::io(&hp, e))?;
    drop(f);
    let metrics = TrainMetrics {
        steps: history.steps(),
        gate_s_count: history.gate_s_count,
        gate_e_count: history.gate_e_count,
        final_step: history.records.last().cloned(),
        labeled: evaluate(&params, &prepared.labeled)?,
        test: heldout.map(|t| evaluate(&params, t)).transpose()?,
    };
    match &metrics.test {
        Some(t) => println!("test accuracy {:.4}", t.accuracy),
        None => println!("labeled accuracy {:.4}", metrics.labeled.accuracy),
    }
    run.write_json("metrics.json", &metrics)?;
    let mp = run.output("model.sslc");
    save_checkpoint(
        &mp,
        &Checkpoint {
            params,
            standardizer: Some(prepared.standardizer),
        },
    )
}

fn load_model(run: &mut Run, path: &Path) -> Result<Checkpoint> {
    let ck = load_checkpoint(path)?;
    run.input(path)?;
    Ok(ck)
}

fn cmd_eval(run: &mut Run, model: &Path, data: &Path) -> Result<()> {
    let ck = load_model(run, model)?;
    let d = load_dataset(data)?;
    run.input(data)?;
    let m = evaluate(&ck.params, &ck.prepare(&d)?)?;
    println!("accuracy {:.4} over {} windows", m.accuracy, m.n_samples);
    std::fs::create_dir_all(&run.out).map_err(|e| Error::io(&run.out, e))?;
    run.write_json("metrics.json", &m)
}

fn cmd_ablate(run: &mut Run) -> Result<()> {
    let table = run_ablation(&run.cfg, run.jobs)?;
    for r in &table.rows {
        println!(
            "{:>10}  accuracy {:.4} ± {:.4}  precision {:.4} ± {:.4}  recall {:.4} ± {:.4}",
            r.variant.name(),
            r.accuracy_mean,
            r.accuracy_std,
            r.precision_mean,
            r.precision_std,
            r.recall_mean,
            r.recall_std
        );
    }
    std::fs::create_dir_all(&run.out).map_err(|e| Error::io(&run.out, e))?;
    let p = run.output("ablation.csv");
    table.write_csv(&p)?;
    run.write_json("runs.json", &table.runs)
}

fn cmd_sweep(run: &mut Run, kind: SweepKind) -> Result<()> {
    std::fs::create_dir_all(&run.out).map_err(|e| Error::io(&run.out, e))?;
    match kind {
        SweepKind::Thresholds => {
            let sweep = sweep_thresholds(&run.cfg, run.jobs)?;
            for (name, curve) in [("thre_a", &sweep.thre_a), ("thre_rec", &sweep.thre_rec)] {
                for p in curve {
                    println!(
                        "{name} {:>8}  accuracy {:.4} ± {:.4}",
                        p.threshold, p.mean, p.std
                    );
                }
            }
            sweep.write_csv(&run.out)?;
            run.output("thre_a.csv");
            run.output("thre_rec.csv");
            run.write_json("runs.json", &sweep.runs)
        }
        SweepKind::Subjects => {
            let grid = sweep_multisubject(&run.cfg, run.jobs)?;
            for c in grid.cells.iter().filter(|c| !c.skipped) {
                println!(
                    "labeled {} unlabeled {}  accuracy {:.4} ± {:.4}",
                    c.n_labeled,
                    c.n_unlabeled,
                    c.mean.unwrap_or(f64::NAN),
                    c.std.unwrap_or(f64::NAN)
                );
            }
            println!(
                "spearman labeled {:+.4} unlabeled {:+.4}",
                grid.spearman_labeled, grid.spearman_unlabeled
            );
            let p = run.output("multisubject.csv");
            grid.write_csv(&p)?;
            run.write_json("multisubject.json", &grid)
        }
    }
}

fn cmd_export_latents(run: &mut Run, model: &Path, data: Option<&Path>) -> Result<()> {
    let ck = load_model(run, model)?;
    let raw = match data {
        Some(dir) => load_split(run, dir)?,
        None => config_split(&run.cfg)?,
    };
    let sets = [
        ("labeled", ck.prepare(&raw.labeled)?),
        ("unlabeled", ck.prepare(&raw.unlabeled)?),
        ("test", ck.prepare(&raw.test)?),
    ];
    let named: Vec<(&str, &Dataset)> = sets
        .iter()
        .filter(|(_, d)| !d.is_empty())
        .map(|(n, d)| (*n, d))
        .collect();
    let export = export_latents(&ck.params, &named, &run.out)?;
    println!(
        "{} rows, 2-D PCA keeps {:.1}% of the variance",
        export.rows,
        100.0 * export.explained_variance_2d
    );
    run.manifest.outputs.push(export.features_path);
    run.manifest.outputs.push(export.pca_path);
    Ok(())
}

fn execute(cli: Cli, argv: Vec<String>) -> Result<()> {
    let (cfg, config_path) = load_config(&cli.common)?;
    let name = match &cli.command {
        Command::GenData => "gen-data",
        Command::Train { .. } => "train",
        Command::Eval { .. } => "eval",
        Command::Ablate => "ablate",
        Command::Sweep { .. } => "sweep",
        Command::ExportLatents { .. } => "export-latents",
    };
    let seeds = match cli.command {
        Command::Ablate | Command::Sweep { .. } => cfg.protocol.seeds.clone(),
        _ => vec![cfg.train.seed],
    };
    let mut run = Run {
        manifest: RunManifest::new(name, argv, &cfg, seeds),
        cfg,
        out: cli.common.out.clone(),
        jobs: cli.common.jobs,
        started: Instant::now(),
    };
    if let Some(p) = config_path {
        run.input(&p)?;
    }
    match &cli.command {
        Command::GenData => cmd_gen_data(&mut run)?,
        Command::Train { data } => cmd_train(&mut run, data.as_deref())?,
        Command::Eval { model, data } => cmd_eval(&mut run, model, data)?,
        Command::Ablate => cmd_ablate(&mut run)?,
        Command::Sweep { kind } => cmd_sweep(&mut run, *kind)?,
        Command::ExportLatents { model, data } => {
            cmd_export_latents(&mut run, model, data.as_deref())?
        }
    }
    run.finish()
}

fn main() -> ExitCode {
    let argv: Vec<String> = std::env::args().collect();
    let cli = match Cli::try_parse_from(&argv) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    match execute(cli, argv) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
