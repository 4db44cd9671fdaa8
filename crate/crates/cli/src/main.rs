use std::fs::{self, File};
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};

use mma_core::checkpoint::{load_checkpoint, save_checkpoint, TrainingMeta};
use mma_core::harness::experiments::{ablation_grid, jitter_sweep, write_ablation_csv, write_sweep_csv, TaskConfig};
use mma_core::harness::gradcheck::{gradient_suite, GRADCHECK_TOLERANCE};
use mma_core::harness::jitter::JitterDistribution;
use mma_core::harness::metrics::evaluate;
use mma_core::harness::scenes::{generate_dataset, load_dataset, save_dataset, SceneSpec};
use mma_core::harness::train::{train, TrainConfig};
use mma_core::network::parse_kv;
use mma_core::{Model, ModelConfig};

#[derive(Parser)]
#[command(name = "mma", version, about = "Multi-scale mixed attention for point clouds")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate synthetic scenes into a directory
    GenData {
        /// key=value scene spec
        #[arg(long)]
        spec: Option<PathBuf>,
        #[arg(long, default_value_t = 100)]
        scenes: usize,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Finite-difference check of every differentiable operation and a tiny network
    Gradcheck {
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Train a model on a scene directory and write a checkpoint
    Train {
        /// key=value model and training settings
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Also write the run report as JSON
        #[arg(long)]
        report: Option<PathBuf>,
    },
    /// Evaluate a checkpoint and write metrics as JSON
    Eval {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        json: PathBuf,
    },
    /// Train both backbones under increasing label jitter
    JitterSweep {
        #[arg(long, value_delimiter = ',', default_value = "0,0.1,0.2,0.3,0.5")]
        levels: Vec<f64>,
        /// Number of seeds, run as 0..n
        #[arg(long, default_value_t = 3)]
        seeds: u64,
        #[arg(long)]
        csv: PathBuf,
        /// key=value overrides of the weak-center task
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, default_value = "uniform-ball")]
        distribution: String,
    },
    /// Train every encoder/decoder stage-count pair
    Ablate {
        #[arg(long, value_delimiter = ',', default_value = "3,4,5")]
        aaa: Vec<usize>,
        #[arg(long, value_delimiter = ',', default_value = "2,3,4")]
        fdc: Vec<usize>,
        #[arg(long)]
        csv: PathBuf,
        #[arg(long, default_value_t = 1)]
        seeds: u64,
        /// key=value overrides of the ablation task
        #[arg(long)]
        config: Option<PathBuf>,
    },
}

fn read_kv(path: &Path) -> Result<std::collections::BTreeMap<String, String>> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    Ok(parse_kv(&text)?)
}

fn task(config: Option<&Path>, base: TaskConfig) -> Result<TaskConfig> {
    match config {
        Some(p) => Ok(TaskConfig::from_kv(&read_kv(p)?, &base)?),
        None => Ok(base),
    }
}

fn main() -> Result<()> {
    match Cli::parse().command {
        Command::GenData { spec, scenes, out, seed } => {
            let mut s = match spec {
                Some(p) => SceneSpec::from_kv(&read_kv(&p)?)?,
                None => SceneSpec::default(),
            };
            s.seed = seed;
            let data = generate_dataset(&s, scenes)?;
            save_dataset(&data, &out)?;
            println!("wrote {scenes} scenes to {}", out.display());
        }
        Command::Gradcheck { seed } => {
            let results = gradient_suite(seed)?;
            let mut failed = 0;
            for r in &results {
                let status = if r.passed() { "ok" } else { "FAIL" };
                println!("{status:4} {:<40} {:.3e}", r.name, r.max_rel_error);
                failed += usize::from(!r.passed());
            }
            if failed > 0 {
                bail!("{failed} of {} checks exceed {GRADCHECK_TOLERANCE:e}", results.len());
            }
            println!("all {} checks below {GRADCHECK_TOLERANCE:e}", results.len());
        }
        Command::Train {
            config,
            data,
            out,
            report,
        } => {
            let kv = match config {
                Some(p) => read_kv(&p)?,
                None => Default::default(),
            };
            let model_cfg = ModelConfig::from_kv(&kv)?;
            let train_cfg = TrainConfig::from_kv(&kv)?;
            let dataset = load_dataset(&data)?;
            let mut model = Model::build(&model_cfg)?;
            let run = train(&mut model, &dataset, &train_cfg)?;
            let meta = TrainingMeta {
                epoch: train_cfg.epochs,
                seed: model_cfg.seed,
                loss: run.epoch_losses.last().copied().unwrap_or(run.initial_loss),
            };
            save_checkpoint(&model, &meta, &out)?;
            if let Some(p) = report {
                serde_json::to_writer_pretty(BufWriter::new(File::create(&p)?), &run)?;
            }
            println!(
                "trained {} parameters for {} epochs, final loss {:.4}, wrote {}",
                model.param_count(),
                train_cfg.epochs,
                meta.loss,
                out.display()
            );
        }
        Command::Eval { ckpt, data, json } => {
            let (model, _) = load_checkpoint(&ckpt)?;
            let dataset = load_dataset(&data)?;
            let metrics = evaluate(&model, &dataset)?;
            serde_json::to_writer_pretty(BufWriter::new(File::create(&json)?), &metrics)?;
            println!("{}", serde_json::to_string(&metrics)?);
        }
        Command::JitterSweep {
            levels,
            seeds,
            csv,
            config,
            distribution,
        } => {
            let t = task(config.as_deref(), TaskConfig::weak_center())?;
            let dist: JitterDistribution = distribution.parse()?;
            let seeds: Vec<u64> = (0..seeds).collect();
            let rows = jitter_sweep(&t, &levels, &seeds, dist)?;
            write_sweep_csv(&rows, BufWriter::new(File::create(&csv)?))?;
            println!("wrote {} rows to {}", rows.len(), csv.display());
        }
        Command::Ablate {
            aaa,
            fdc,
            csv,
            seeds,
            config,
        } => {
            let t = task(config.as_deref(), TaskConfig::ablation())?;
            let seeds: Vec<u64> = (0..seeds).collect();
            let cells = ablation_grid(&t, &aaa, &fdc, &seeds)?;
            write_ablation_csv(&cells, &aaa, &fdc, BufWriter::new(File::create(&csv)?))?;
            println!("wrote {}x{} grid to {}", fdc.len(), aaa.len(), csv.display());
        }
    }
    Ok(())
}
