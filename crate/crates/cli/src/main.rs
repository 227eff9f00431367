use std::net::SocketAddr;
use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Duration;

use clap::{Args, Parser, Subcommand};
use retract_cli::commands::{self, EvalSubject};
use retract_cli::config::{read_doc, RunConfig};
use retract_cli::teleop::{self, ServeOptions, DEFAULT_TICK_HZ};
use retract_cli::CliError;
use retract_core::demos::{DEFAULT_EPISODES, DEFAULT_JITTER, DEFAULT_REPOSITION_DELAY};
use retract_core::eval::{GridSpec, DEFAULT_THRESHOLD};
use retract_core::Vec3;

#[derive(Parser)]
#[command(name = "retract", version, about = "Train, evaluate and demonstrate soft-tissue retraction policies")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

/// Scene selection shared by every subcommand.
#[derive(Args)]
struct SceneArgs {
    /// Key-value configuration file.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Use the reduced desk-scale profile.
    #[arg(long)]
    desk_scale: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Train one policy per seed with PPO or GAIL.
    Train {
        #[command(flatten)]
        scene: SceneArgs,
        /// ppo or gail.
        #[arg(long)]
        algorithm: Option<String>,
        /// Demonstration file (required for gail).
        #[arg(long)]
        demos: Option<PathBuf>,
        /// Seed to train; repeat for several.
        #[arg(long = "seed")]
        seeds: Vec<u64>,
        #[arg(long)]
        out: Option<PathBuf>,
        /// Override a configuration key, e.g. `--set total_steps=65536`.
        #[arg(long = "set", value_name = "KEY=VALUE")]
        overrides: Vec<String>,
        /// Overwrite a non-empty output directory.
        #[arg(long)]
        force: bool,
    },
    /// Evaluate a policy over a grid of start positions, or compare training curves.
    Eval {
        #[command(flatten)]
        scene: SceneArgs,
        /// Policy checkpoint file or the seed directory holding it.
        #[arg(long, conflicts_with_all = ["scripted", "curves"])]
        checkpoint: Option<PathBuf>,
        /// Evaluate the scripted expert instead of a policy.
        #[arg(long, conflicts_with = "curves")]
        scripted: bool,
        /// Training run to compare, as NAME=RUN_DIR; repeat for several.
        #[arg(long = "curves", value_name = "NAME=DIR")]
        curves: Vec<String>,
        /// Grid of start positions, NxM.
        #[arg(long, default_value = "7x7", value_parser = commands::parse_grid)]
        grid: (usize, usize),
        /// Take the most likely action instead of sampling.
        #[arg(long)]
        deterministic: bool,
        /// Sampling seed for stochastic evaluation.
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
        /// Curve threshold for the crossing step.
        #[arg(long, default_value_t = DEFAULT_THRESHOLD, allow_negative_numbers = true)]
        threshold: f64,
    },
    /// Generate or check demonstration files.
    Demos {
        #[command(subcommand)]
        command: DemosCommand,
    },
    /// Replay a demonstration file and report any divergence.
    Replay {
        file: PathBuf,
        #[command(flatten)]
        scene: SceneArgs,
        /// Accept a scene fingerprint different from the recorded one.
        #[arg(long)]
        allow_mismatch: bool,
    },
    /// Serve the live teleoperation page and websocket.
    Serve {
        #[command(flatten)]
        scene: SceneArgs,
        #[arg(long, default_value = "127.0.0.1")]
        host: String,
        #[arg(long, default_value_t = 8080)]
        port: u16,
        /// Demonstration file written on every save.
        #[arg(long, default_value = "demos.jsonl")]
        out: PathBuf,
        #[arg(long, default_value_t = DEFAULT_TICK_HZ)]
        tick_hz: f64,
        /// Repositioning pause between episodes, in ticks.
        #[arg(long, default_value_t = DEFAULT_REPOSITION_DELAY)]
        delay: usize,
        /// Episode start position `x,y,z`; defaults to the centre of the start region.
        #[arg(long, value_parser = parse_vec3, allow_hyphen_values = true)]
        start: Option<Vec3>,
    },
}

#[derive(Subcommand)]
enum DemosCommand {
    /// Record demonstrations with the scripted expert.
    Scripted {
        #[command(flatten)]
        scene: SceneArgs,
        #[arg(long, default_value_t = DEFAULT_EPISODES)]
        count: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Probability of a random action at each step.
        #[arg(long, default_value_t = DEFAULT_JITTER)]
        jitter: f64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Replay a demonstration file (same as `retract replay`).
    Replay {
        file: PathBuf,
        #[command(flatten)]
        scene: SceneArgs,
        #[arg(long)]
        allow_mismatch: bool,
    },
}

fn parse_vec3(s: &str) -> Result<Vec3, String> {
    let parts = s
        .split(',')
        .map(|p| p.trim().parse::<f64>())
        .collect::<Result<Vec<_>, _>>()
        .map_err(|e| format!("bad coordinate in `{s}`: {e}"))?;
    match parts[..] {
        [x, y, z] => Ok(Vec3::new(x, y, z)),
        _ => Err(format!("expected x,y,z, got `{s}`")),
    }
}

fn split_pair(s: &str, what: &str) -> Result<(String, String), CliError> {
    s.split_once('=')
        .map(|(k, v)| (k.trim().to_string(), v.trim().to_string()))
        .ok_or_else(|| CliError::Config(format!("expected {what}, got `{s}`")))
}

fn run_config(
    scene: &SceneArgs,
    algorithm: Option<String>,
    demos: Option<PathBuf>,
    seeds: &[u64],
    out: Option<PathBuf>,
    overrides: &[String],
) -> Result<RunConfig, CliError> {
    let mut doc = read_doc(scene.config.as_deref())?;
    if scene.desk_scale {
        doc.set("desk_scale", "true");
    }
    for o in overrides {
        let (k, v) = split_pair(o, "KEY=VALUE")?;
        doc.set(&k, v);
    }
    if let Some(a) = algorithm {
        doc.set("algorithm", a);
    }
    if let Some(d) = demos {
        doc.set("demo_path", d.display().to_string());
    }
    if !seeds.is_empty() {
        doc.set("seeds", seeds.iter().map(u64::to_string).collect::<Vec<_>>().join(", "));
    }
    if let Some(o) = out {
        doc.set("out", o.display().to_string());
    }
    RunConfig::from_doc(&doc)
}

fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Train { scene, algorithm, demos, seeds, out, overrides, force } => {
            let cfg = run_config(&scene, algorithm, demos, &seeds, out, &overrides)?;
            let (dir, results) = commands::train(&cfg, force)?;
            for r in &results {
                match r.final_reward {
                    Some(v) => println!("seed {}: {} steps, final mean episode reward {v:.4}", r.seed, r.final_step),
                    None => println!("seed {}: {} steps, no completed episodes", r.seed, r.final_step),
                }
            }
            println!("wrote {}", dir.display());
        }
        Command::Eval { scene, checkpoint, scripted, curves, grid, deterministic, seed, out, threshold } => {
            if !curves.is_empty() {
                let runs =
                    curves.iter().map(|c| split_pair(c, "NAME=DIR").map(|(n, d)| (n, PathBuf::from(d)))).collect::<Result<Vec<_>, _>>()?;
                let cmp = commands::eval_curves(&runs, threshold, &out)?;
                for m in &cmp.methods {
                    match m.crossing {
                        Some(step) => println!("{}: crosses {threshold} at step {step} ({} seeds)", m.name, m.seeds),
                        None => println!("{}: never crosses {threshold} ({} seeds)", m.name, m.seeds),
                    }
                }
                return Ok(());
            }
            let (subject, frozen) = match (checkpoint, scripted) {
                (Some(path), _) => {
                    let (policy, frozen) = commands::resolve_checkpoint(&path)?;
                    (EvalSubject::Checkpoint { path: policy, deterministic, seed }, frozen)
                }
                (None, true) => (EvalSubject::Scripted, None),
                (None, false) => return Err(CliError::Config("eval needs --checkpoint, --scripted or --curves".into())),
            };
            // A checkpoint is evaluated on the scene it was trained on unless
            // a configuration is given explicitly.
            let config = scene.config.or(frozen);
            let scene_cfg = commands::load_scene(config.as_deref(), scene.desk_scale)?;
            let result = commands::eval_grid(&scene_cfg, &subject, grid, &out)?;
            let summary = result.summary();
            println!(
                "ATE {:.4} over {} trials (min TE {:.4}, success rate {:.3}, rest exposure {:.4})",
                summary.ate,
                summary.n_trials,
                summary.min_te,
                summary.success_rate,
                commands::rest_exposure(&scene_cfg)
            );
        }
        Command::Demos { command: DemosCommand::Scripted { scene, count, seed, jitter, out } } => {
            let scene_cfg = commands::load_scene(scene.config.as_deref(), scene.desk_scale)?;
            let set = commands::demos_scripted(&scene_cfg, count, seed, jitter, &out)?;
            println!("wrote {} episodes ({} steps) to {}", set.episode_count(), set.pairs().len(), out.display());
        }
        Command::Demos { command: DemosCommand::Replay { file, scene, allow_mismatch } }
        | Command::Replay { file, scene, allow_mismatch } => {
            let scene_cfg = match (&scene.config, scene.desk_scale) {
                (None, false) => None,
                (config, desk) => Some(commands::load_scene(config.as_deref(), desk)?),
            };
            let report = commands::replay_file(&file, scene_cfg.as_ref(), allow_mismatch)?;
            println!("{}: {report}", file.display());
        }
        Command::Serve { scene, host, port, out, tick_hz, delay, start } => {
            if !(tick_hz.is_finite() && tick_hz > 0.0) {
                return Err(CliError::Config(format!("invalid value for `tick_hz`: {tick_hz}")));
            }
            let scene_cfg = commands::load_scene(scene.config.as_deref(), scene.desk_scale)?;
            let start = start.unwrap_or_else(|| {
                let r = GridSpec::for_scene(&scene_cfg).region;
                Vec3::new(0.5 * (r.x_range.0 + r.x_range.1), r.y, 0.5 * (r.z_range.0 + r.z_range.1))
            });
            let addr: SocketAddr =
                format!("{host}:{port}").parse().map_err(|e| CliError::Config(format!("invalid address {host}:{port}: {e}")))?;
            let opts = ServeOptions { scene: scene_cfg, start, tick: Duration::from_secs_f64(1.0 / tick_hz), delay, out };
            let rt = tokio::runtime::Runtime::new()?;
            rt.block_on(async {
                let listener = tokio::net::TcpListener::bind(addr).await?;
                println!("serving on http://{}", listener.local_addr()?);
                teleop::serve(listener, opts).await
            })?;
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
