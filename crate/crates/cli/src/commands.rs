//! Subcommand bodies, independent of argument parsing.

use std::fs;
use std::path::{Path, PathBuf};

use retract_core::demos::{generate_scripted, replay, DemoSet, ReplayReport};
use retract_core::eval::{
    compare_curves, emit_heatmap, load_curve, run_grid, Controller, CurveComparison, GreedyPolicy, GridResult, GridSpec, SampledPolicy,
    ScriptedController,
};
use retract_core::gail::GailTrainer;
use retract_core::nn::Mlp;
use retract_core::ppo::MetricsWriter;
use retract_core::{SceneConfig, TissueEnv};
use serde_json::json;

use crate::config::{read_doc, Algorithm, RunConfig};
use crate::CliError;

pub const FROZEN_CONFIG: &str = "config.kv";
pub const SEED_MANIFEST: &str = "seeds.json";
pub const METRICS_FILE: &str = "metrics.csv";

fn seed_dir(seed: u64) -> String {
    format!("seed_{seed}")
}

/// Creates `dir`, refusing to reuse a non-empty directory unless `force`.
fn prepare_out_dir(dir: &Path, force: bool) -> Result<(), CliError> {
    if dir.exists() && fs::read_dir(dir)?.next().is_some() && !force {
        return Err(CliError::Config(format!("output directory {} is not empty; pass --force to overwrite", dir.display())));
    }
    fs::create_dir_all(dir)?;
    Ok(())
}

pub struct TrainedSeed {
    pub seed: u64,
    pub final_step: u64,
    pub final_reward: Option<f64>,
}

/// Trains every configured seed, writing per-seed metrics and checkpoints,
/// the frozen configuration and a seed manifest under the output directory.
pub fn train(cfg: &RunConfig, force: bool) -> Result<(PathBuf, Vec<TrainedSeed>), CliError> {
    let out = cfg.out.clone().ok_or_else(|| CliError::Config("invalid value for `out`: an output directory is required".into()))?;
    let demos = match (&cfg.algorithm, &cfg.demo_path) {
        (Algorithm::Gail, Some(p)) => DemoSet::load(p, Some(&cfg.scene), cfg.allow_fingerprint_mismatch)?,
        // Plain PPO never looks at demonstrations; a single scripted episode
        // satisfies the trainer's constructor.
        _ => generate_scripted(&cfg.scene, 1, 0, 0.0)?,
    };
    prepare_out_dir(&out, force)?;
    fs::write(out.join(FROZEN_CONFIG), cfg.frozen().to_text())?;

    let mut results = Vec::new();
    for &seed in &cfg.seeds {
        let dir = out.join(seed_dir(seed));
        fs::create_dir_all(&dir)?;
        let mut trainer = GailTrainer::new(&cfg.scene, cfg.ppo_for_seed(seed), cfg.effective_gail(), &demos)?;
        let mut writer = MetricsWriter::create(&dir.join(METRICS_FILE))?;
        let mut last = None;
        while !trainer.ppo.is_finished() {
            let row = trainer.iterate()?;
            writer.write(&row)?;
            if trainer.ppo.updates() % 10 == 0 {
                log::info!("{} seed {seed}: step {} mean episode reward {:?}", cfg.algorithm, row.global_step, row.mean_episode_reward);
            }
            last = Some(row);
        }
        trainer.ppo.save_checkpoint(&dir)?;
        if cfg.algorithm == Algorithm::Gail {
            trainer.disc.net.save(&dir.join("discriminator.json"))?;
        }
        results.push(TrainedSeed { seed, final_step: trainer.ppo.global_step(), final_reward: last.and_then(|r| r.mean_episode_reward) });
    }

    let manifest = json!({
        "algorithm": cfg.algorithm.to_string(),
        "scene_fingerprint": cfg.scene.fingerprint(),
        "seeds": cfg.seeds,
        "runs": results.iter().map(|r| json!({
            "seed": r.seed,
            "dir": seed_dir(r.seed),
            "metrics": format!("{}/{METRICS_FILE}", seed_dir(r.seed)),
            "final_step": r.final_step,
            "final_mean_episode_reward": r.final_reward,
        })).collect::<Vec<_>>(),
    });
    fs::write(out.join(SEED_MANIFEST), serde_json::to_string_pretty(&manifest).expect("manifest serialises") + "\n")?;
    Ok((out, results))
}

/// Parses `NxM` grid dimensions.
pub fn parse_grid(s: &str) -> Result<(usize, usize), String> {
    let (a, b) = s.split_once(['x', 'X']).ok_or_else(|| format!("expected NxM, got `{s}`"))?;
    let n = a.trim().parse::<usize>().map_err(|e| format!("bad grid width `{a}`: {e}"))?;
    let m = b.trim().parse::<usize>().map_err(|e| format!("bad grid depth `{b}`: {e}"))?;
    if n == 0 || m == 0 {
        return Err("grid dimensions must be positive".into());
    }
    Ok((n, m))
}

/// Where an evaluated policy comes from.
pub enum EvalSubject {
    Checkpoint { path: PathBuf, deterministic: bool, seed: u64 },
    Scripted,
}

/// Resolves a checkpoint argument (a `policy.json` or a directory holding
/// one) and the frozen run configuration next to it, if any.
pub fn resolve_checkpoint(path: &Path) -> Result<(PathBuf, Option<PathBuf>), CliError> {
    let policy = if path.is_dir() { path.join("policy.json") } else { path.to_path_buf() };
    if !policy.is_file() {
        return Err(CliError::Io(format!("checkpoint {} not found", policy.display())));
    }
    let frozen = policy.parent().and_then(Path::parent).map(|run| run.join(FROZEN_CONFIG)).filter(|p| p.is_file());
    Ok((policy, frozen))
}

pub fn eval_grid(scene: &SceneConfig, subject: &EvalSubject, grid: (usize, usize), out: &Path) -> Result<GridResult, CliError> {
    let spec = GridSpec { nx: grid.0, nz: grid.1, ..GridSpec::for_scene(scene) };
    let policy;
    let mut controller: Box<dyn Controller> = match subject {
        EvalSubject::Scripted => Box::new(ScriptedController::default()),
        EvalSubject::Checkpoint { path, deterministic, seed } => {
            policy = Mlp::load(path)?;
            if policy.input_dim() != retract_core::env::OBS_DIM {
                return Err(CliError::Contract(format!("{} is not a policy checkpoint", path.display())));
            }
            if *deterministic {
                Box::new(GreedyPolicy(&policy))
            } else {
                Box::new(SampledPolicy::new(&policy, *seed))
            }
        }
    };
    let result = run_grid(scene, &spec, controller.as_mut())?;
    fs::create_dir_all(out)?;
    emit_heatmap(&out.join("heatmap.csv"), &result)?;
    result.write_summary(&out.join("summary.json"))?;
    Ok(result)
}

/// Metrics files of a training run directory, in manifest order.
pub fn run_metrics(run_dir: &Path) -> Result<Vec<PathBuf>, CliError> {
    let manifest = run_dir.join(SEED_MANIFEST);
    let text = fs::read_to_string(&manifest).map_err(|e| CliError::Io(format!("{}: {e}", manifest.display())))?;
    let value: serde_json::Value = serde_json::from_str(&text).map_err(|e| CliError::Contract(format!("{}: {e}", manifest.display())))?;
    let runs = value["runs"].as_array().ok_or_else(|| CliError::Contract(format!("{} has no runs", manifest.display())))?;
    runs.iter()
        .map(|r| {
            r["metrics"]
                .as_str()
                .map(|m| run_dir.join(m))
                .ok_or_else(|| CliError::Contract(format!("{} lists a run without metrics", manifest.display())))
        })
        .collect()
}

/// Compares named training runs and writes `curves.csv` and `comparison.json`.
pub fn eval_curves(runs: &[(String, PathBuf)], threshold: f64, out: &Path) -> Result<CurveComparison, CliError> {
    let mut methods = Vec::new();
    for (name, dir) in runs {
        let curves = run_metrics(dir)?.iter().map(|p| load_curve(p)).collect::<Result<Vec<_>, _>>()?;
        methods.push((name.as_str(), curves));
    }
    let cmp = compare_curves(&methods, threshold);
    fs::create_dir_all(out)?;
    cmp.write_csv(&out.join("curves.csv"))?;
    let summary = json!({
        "threshold": threshold,
        "methods": cmp.methods.iter().map(|m| json!({
            "name": m.name,
            "seeds": m.seeds,
            "crossing_step": m.crossing,
            "final_mean": m.points.last().map(|p| p.mean),
        })).collect::<Vec<_>>(),
    });
    fs::write(out.join("comparison.json"), serde_json::to_string_pretty(&summary).expect("comparison serialises") + "\n")?;
    Ok(cmp)
}

pub fn demos_scripted(scene: &SceneConfig, count: usize, seed: u64, jitter: f64, out: &Path) -> Result<DemoSet, CliError> {
    if count == 0 {
        return Err(CliError::Config("invalid value for `count`: must be at least 1".into()));
    }
    let set = generate_scripted(scene, count, seed, jitter)?;
    if let Some(parent) = out.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent)?;
    }
    set.save(out)?;
    Ok(set)
}

/// Replays a demo file. The recorded scene is used unless `scene` is given,
/// in which case the fingerprints must agree (or `allow_mismatch` is set).
pub fn replay_file(path: &Path, scene: Option<&SceneConfig>, allow_mismatch: bool) -> Result<ReplayReport, CliError> {
    let set = DemoSet::load(path, scene, allow_mismatch)?;
    let report = replay(&set, scene.unwrap_or(&set.scene))?;
    if !report.is_faithful() {
        return Err(CliError::Contract(format!("replay of {} diverged: {report}", path.display())));
    }
    Ok(report)
}

/// Scene from an optional configuration file plus the profile flag.
pub fn load_scene(config: Option<&Path>, desk_scale: bool) -> Result<SceneConfig, CliError> {
    let mut doc = read_doc(config)?;
    if desk_scale {
        doc.set("desk_scale", "true");
    }
    crate::config::scene_from_doc(&doc)
}

/// Exposure of the untouched scene, the floor any useful policy should beat.
pub fn rest_exposure(scene: &SceneConfig) -> f64 {
    TissueEnv::new(scene.clone()).rest_exposure(retract_core::eval::TE_SAMPLES)
}
