use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use avseg_core::data::{generate_clip, make_split, write_clip, Partition, SynthConfig, Task};
use avseg_core::render::render_clip;
use avseg_core::trainer::{
    ablate, eval_csv, evaluate, load_model, train_with, TrainConfig, ABLATION_SEEDS,
};
use avseg_core::{Error, Result};

/// Audio-visual segmentation on synthetic sounding shapes.
#[derive(Parser)]
#[command(name = "avseg", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write synthetic clips and a split manifest.
    GenData {
        #[arg(long)]
        task: Task,
        #[arg(long)]
        n: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
        /// Take frame size, audio width and class count from this config.
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Train from a config file.
    Train {
        #[arg(long)]
        config: PathBuf,
        /// Overrides `checkpoint_path` from the config.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// Overrides `log_path` from the config.
        #[arg(long)]
        log: Option<PathBuf>,
        /// Print a progress line every this many steps (0 disables).
        #[arg(long, default_value_t = 100)]
        progress: usize,
    },
    /// Score a checkpoint on a synthetic split of its task.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long, default_value = "val")]
        split: Partition,
        /// Write the metrics row as CSV here.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run the four-axis ablation and write its CSV table.
    Ablate {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, default_value = "ablation.csv")]
        out: PathBuf,
    },
    /// Write input / ground truth / prediction triptychs, one PPM per frame.
    Render {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        clip_seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => e.exit(),
        Err(e) => {
            let msg = e.render().to_string();
            eprintln!("{}", msg.lines().next().unwrap_or("invalid arguments"));
            return ExitCode::from(2);
        }
    };
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", e.to_string().replace('\n', " "));
            ExitCode::FAILURE
        }
    }
}

fn read_config(path: &Path) -> Result<TrainConfig> {
    let text = fs::read_to_string(path)
        .map_err(|e| std::io::Error::new(e.kind(), format!("{}: {e}", path.display())))?;
    let mut config = TrainConfig::parse(&text).map_err(|e| {
        Error::Config(format!(
            "{}: {}",
            path.display(),
            e.to_string().trim_start_matches("config error: ")
        ))
    })?;
    if let Some(seed) = env_seed()? {
        config.seed = seed;
    }
    Ok(config)
}

fn env_seed() -> Result<Option<u64>> {
    match std::env::var("AVSEG_SEED") {
        Ok(s) => s.trim().parse().map(Some).map_err(|_| {
            Error::Config(format!("AVSEG_SEED must be an unsigned integer, got `{s}`"))
        }),
        Err(_) => Ok(None),
    }
}

fn metrics_line(task: Task, miou: f64, fscore: f64) {
    println!("task={task} miou={miou} fscore={fscore}");
}

fn run(command: Command) -> Result<()> {
    match command {
        Command::GenData {
            task,
            n,
            seed,
            out,
            config,
        } => {
            let synth = match config {
                Some(p) => read_config(&p)?.synth(),
                None => SynthConfig::default(),
            };
            fs::create_dir_all(&out)?;
            let mut manifest = String::from("file,task,seed,partition\n");
            for d in make_split(task, n, seed)? {
                let name = format!("clip_{}.avsd", d.seed);
                write_clip(&generate_clip(task, &synth, d.seed)?, &out.join(&name))?;
                manifest.push_str(&format!("{name},{task},{},{}\n", d.seed, d.partition));
            }
            fs::write(out.join("manifest.csv"), manifest)?;
            println!("wrote {n} clips to {}", out.display());
        }
        Command::Train {
            config,
            checkpoint,
            log,
            progress,
        } => {
            let mut config = read_config(&config)?;
            if checkpoint.is_some() {
                config.checkpoint_path = checkpoint;
            }
            if log.is_some() {
                config.log_path = log;
            }
            let out = train_with(&config, |r| {
                if progress > 0 && r.step % progress == 0 {
                    eprintln!(
                        "step {} l_iou={:.5} l_mix={:.5} total={:.5}",
                        r.step, r.l_iou, r.l_mix, r.total
                    );
                }
            })?;
            let e = out
                .log
                .final_eval()
                .expect("every run ends with an evaluation");
            metrics_line(config.task, e.miou, e.fscore);
        }
        Command::Eval {
            checkpoint,
            split,
            out,
        } => {
            let (config, report) = evaluate(&checkpoint, split)?;
            if let Some(out) = out {
                fs::write(out, eval_csv(config.task, &split.to_string(), &report))?;
            }
            metrics_line(config.task, report.miou, report.fscore);
        }
        Command::Ablate { config, out } => {
            let base = read_config(&config)?;
            let seeds = match env_seed()? {
                Some(s) => [s, s.wrapping_add(1), s.wrapping_add(2)],
                None => ABLATION_SEEDS,
            };
            let table = ablate(&base, &seeds, |cell, seed, miou, fscore| {
                eprintln!(
                    "{}={} seed={seed} miou={miou:.4} fscore={fscore:.4}",
                    cell.axis, cell.setting
                );
            })?;
            fs::write(&out, table.to_csv())?;
            for r in &table.rows {
                println!(
                    "{}={} miou={} fscore={}",
                    r.axis, r.setting, r.miou, r.fscore
                );
            }
            let base_row = table
                .row("mixer", &base.model.mixer.to_string())
                .expect("mixer axis covers every variant");
            metrics_line(base.task, base_row.miou, base_row.fscore);
        }
        Command::Render {
            checkpoint,
            clip_seed,
            out,
        } => {
            let (model, config) = load_model(&checkpoint)?;
            let clip = generate_clip(config.task, &config.synth(), clip_seed)?;
            fs::create_dir_all(&out)?;
            for (t, ppm) in render_clip(&model, &clip)?.iter().enumerate() {
                fs::write(out.join(format!("frame_{t:02}.ppm")), ppm)?;
            }
            println!("wrote {} frames to {}", clip.n_frames(), out.display());
        }
    }
    Ok(())
}
