use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use mflag::diagnostics::{alignment_metric, latent_report};
use mflag::models::load_checkpoint;
use mflag::runner::io::{import_dataset, read_embedding};
use mflag::runner::{
    ablate, emit_plots, gradcheck, pretrain, probe, read_metrics_csv, variant_name, write_ablation_csv,
    write_pca3_csv, write_run_outputs, GradcheckConfig, RunConfig, CHECKPOINT_FILE, CONFIG_FILE, METRICS_FILE,
};
use mflag::synthdata::generate;

#[derive(Parser)]
#[command(name = "mflag", version, about = "Two-tower alignment + orthogonality pre-training on synthetic data")]
struct Cli {
    #[command(flatten)]
    global: Global,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Global {
    /// JSON run configuration; defaults apply when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides both the run seed and the data seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory; overrides `output_dir` from the config.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Train one model and write metrics, checkpoint and embeddings.
    Pretrain,
    /// Run the loss-mode × unfreeze grid and write ablation.csv.
    Ablate {
        /// Seeds to run; defaults to the configured seed.
        #[arg(long, value_delimiter = ',')]
        seeds: Vec<u64>,
    },
    /// Logistic-regression probe on frozen vision features.
    Probe {
        /// Checkpoint to probe; defaults to `<out>/checkpoint.mflg`.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// Dataset directory (x_v.mfem, x_t.mfem, h.mfem, labels.csv);
        /// the configured synthetic data is generated when omitted.
        #[arg(long)]
        data: Option<PathBuf>,
        /// Labelled fraction of the probe training pool.
        #[arg(long)]
        fraction: Option<f64>,
    },
    /// Compare analytic gradients with central finite differences.
    Gradcheck {
        /// Corrupt one analytic gradient entry (negative control).
        #[arg(long)]
        corrupt: bool,
    },
    /// Geometry report for an embedding file (MFEM or CSV).
    Diagnose {
        #[arg(long)]
        input: PathBuf,
        /// Projected vision embedding for the alignment metric.
        #[arg(long, requires = "pair_t")]
        pair_a: Option<PathBuf>,
        /// Text embedding for the alignment metric.
        #[arg(long, requires = "pair_a")]
        pair_t: Option<PathBuf>,
    },
    /// Rebuild pca3.csv, curves.csv and plots.svg from a run directory.
    Plots,
}

fn load_config(global: &Global) -> mflag::Result<RunConfig> {
    let mut cfg = match &global.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    if let Some(seed) = global.seed {
        cfg = cfg.with_seed(seed);
    }
    if let Some(out) = &global.out {
        cfg.output_dir = out.clone();
    }
    cfg.validate()?;
    Ok(cfg)
}

fn run(cli: Cli) -> mflag::Result<ExitCode> {
    let cfg = load_config(&cli.global)?;
    let out_dir = cfg.output_dir.clone();
    match cli.command {
        Command::Pretrain => {
            let out = pretrain(&cfg)?;
            let files = write_run_outputs(&out_dir, &cfg, &out)?;
            let last = out.final_record();
            println!(
                "epoch {}: total {:.6} align {:.6} orth {:.6} effective_rank {:.4} uniformity {:.4}",
                last.epoch,
                last.train_total,
                last.train_align,
                last.train().orth(),
                last.effective_rank,
                last.uniformity
            );
            println!(
                "trainable {} frozen {}; wrote {} files to {}",
                last.trainable_params,
                last.frozen_params,
                files.len(),
                out_dir.display()
            );
        }
        Command::Ablate { seeds } => {
            let seeds = if seeds.is_empty() { vec![cfg.seed] } else { seeds };
            let mut rows = Vec::new();
            let mut pca = Vec::new();
            for &seed in &seeds {
                let result = ablate(&cfg.clone().with_seed(seed))?;
                for (name, coords) in result.pca3 {
                    let tag = if seeds.len() > 1 { format!("s{seed}_{name}") } else { name };
                    pca.push((tag, coords));
                }
                rows.extend(result.rows);
            }
            std::fs::create_dir_all(&out_dir)?;
            write_ablation_csv(&out_dir.join("ablation.csv"), &rows)?;
            write_pca3_csv(&out_dir.join("pca3.csv"), &pca)?;
            println!(
                "{:<6} {:<16} {:>10} {:>9} {:>11} {:>10} {:>8}",
                "seed", "variant", "trainable", "erank", "uniformity", "align", "probe"
            );
            for r in &rows {
                println!(
                    "{:<6} {:<16} {:>10} {:>9.4} {:>11.4} {:>10.5} {:>8.4}",
                    r.seed,
                    variant_name(r.loss_mode, r.unfreeze_last_n),
                    r.trainable_params,
                    r.effective_rank,
                    r.uniformity,
                    r.final_align,
                    r.probe_accuracy
                );
            }
        }
        Command::Probe {
            checkpoint,
            data,
            fraction,
        } => {
            let path = checkpoint.unwrap_or_else(|| out_dir.join(CHECKPOINT_FILE));
            let params = load_checkpoint(&path)?;
            let dataset = match data {
                Some(dir) => import_dataset(&dir)?,
                None => generate(&cfg.synth)?,
            };
            let result = probe(&params, &dataset, fraction.unwrap_or(cfg.probe_fraction), cfg.seed)?;
            println!(
                "accuracy {:.4} (train {}, test {})",
                result.accuracy, result.n_train, result.n_test
            );
        }
        Command::Gradcheck { corrupt } => {
            let report = gradcheck(&GradcheckConfig {
                seed: cfg.seed,
                corrupt,
                ..GradcheckConfig::default()
            })?;
            print!("{report}");
            if !report.passed() {
                eprintln!("gradient check failed");
                return Ok(ExitCode::FAILURE);
            }
        }
        Command::Diagnose { input, pair_a, pair_t } => {
            let z = read_embedding(&input)?;
            let report = latent_report(&z)?;
            let sv: Vec<String> = report.singular_values.iter().map(|s| format!("{s:.6}")).collect();
            println!("samples {} dims {}", z.rows(), z.cols());
            println!("singular_values {}", sv.join(" "));
            println!("effective_rank {:.6}", report.effective_rank);
            println!("explained_variance_top3 {:.6}", report.explained_variance_top3);
            println!("uniformity {:.6}", report.uniformity);
            println!("effective_rank_normalized {:.6}", report.effective_rank_normalized);
            if let (Some(a), Some(t)) = (pair_a, pair_t) {
                let metric = alignment_metric(&read_embedding(&a)?, &read_embedding(&t)?)?;
                println!("alignment_metric {metric:.6}");
            }
            if cli.global.out.is_some() {
                std::fs::create_dir_all(&out_dir)?;
                write_pca3_csv(&out_dir.join("pca3.csv"), &[(stem(&input), report.pca3)])?;
            }
        }
        Command::Plots => {
            let records = read_metrics_csv(&out_dir.join(METRICS_FILE))?;
            let z_v = read_embedding(&out_dir.join("z_v.mfem"))?;
            let pca = latent_report(&z_v)?.pca3;
            let saved = out_dir.join(CONFIG_FILE);
            let run_cfg = if cli.global.config.is_none() && saved.exists() {
                RunConfig::load(&saved)?
            } else {
                cfg
            };
            let variant = variant_name(run_cfg.loss_mode, run_cfg.unfreeze_last_n);
            for f in emit_plots(&out_dir, &records, &[(variant, pca)])? {
                println!("{}", f.display());
            }
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn stem(path: &Path) -> String {
    path.file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "input".into())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match run(Cli::parse()) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
