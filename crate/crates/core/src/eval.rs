//! Evaluation: tumour exposure over a grid of start positions and
//! learning-curve comparison across seeds.

use std::collections::BTreeSet;
use std::fs;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::demos::ExpertController;
use crate::env::{Action, DoneReason, SceneConfig, StartRegion, TissueEnv};
use crate::geometry::Vec3;
use crate::nn::Mlp;
use crate::policy::{act_greedy, features, sample_action};

/// Ray samples per tumour-exposure estimate.
pub const TE_SAMPLES: usize = 1024;
/// Mean normalised episode reward taken as "task learned".
pub const DEFAULT_THRESHOLD: f64 = -0.2;

/// Regular grid of start positions over the sheet.
#[derive(Debug, Clone, PartialEq)]
pub struct GridSpec {
    pub nx: usize,
    pub nz: usize,
    pub region: StartRegion,
}

impl GridSpec {
    /// 7×7 grid over the scene's start region.
    pub fn for_scene(scene: &SceneConfig) -> Self {
        Self { nx: 7, nz: 7, region: StartRegion::for_scene(scene) }
    }

    /// `(i, j, start)` with `i` along x and `j` along z.
    pub fn starts(&self) -> Vec<(usize, usize, Vec3)> {
        self.region.lattice(self.nx, self.nz)
    }
}

/// Anything that can drive an episode one action at a time.
pub trait Controller {
    /// Called right after each reset.
    fn begin(&mut self, _env: &TissueEnv) {}
    fn act(&mut self, env: &TissueEnv) -> Result<Action, crate::Error>;
}

/// Deterministic policy: the most likely choice on every branch.
pub struct GreedyPolicy<'a>(pub &'a Mlp);

impl Controller for GreedyPolicy<'_> {
    fn act(&mut self, env: &TissueEnv) -> Result<Action, crate::Error> {
        Ok(act_greedy(self.0, &env.observation())?)
    }
}

/// Stochastic policy: one draw per branch from a seeded stream.
pub struct SampledPolicy<'a> {
    pub policy: &'a Mlp,
    pub rng: ChaCha8Rng,
}

impl<'a> SampledPolicy<'a> {
    pub fn new(policy: &'a Mlp, seed: u64) -> Self {
        Self { policy, rng: ChaCha8Rng::seed_from_u64(seed) }
    }
}

impl Controller for SampledPolicy<'_> {
    fn act(&mut self, env: &TissueEnv) -> Result<Action, crate::Error> {
        let probs = self.policy.forward(&features(&env.observation()))?;
        Ok(sample_action(&probs, &mut self.rng))
    }
}

/// The scripted oracle without jitter.
#[derive(Default)]
pub struct ScriptedController(Option<ExpertController>);

impl Controller for ScriptedController {
    fn begin(&mut self, env: &TissueEnv) {
        self.0 = Some(ExpertController::new(env, 0, 0.0));
    }

    fn act(&mut self, env: &TissueEnv) -> Result<Action, crate::Error> {
        Ok(self.0.as_mut().expect("begin is called before act").act(env))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TrialResult {
    pub grid_i: usize,
    pub grid_j: usize,
    pub start: Vec3,
    /// Exposure of the terminal sheet configuration.
    pub te: f64,
    pub done_reason: DoneReason,
    pub steps: usize,
    /// Rest position of the particle picked up, if any.
    pub grasp_position: Option<Vec3>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GridResult {
    pub spec: GridSpec,
    pub trials: Vec<TrialResult>,
    pub fingerprint: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridSummary {
    pub ate: f64,
    pub min_te: f64,
    pub n_trials: usize,
    pub success_rate: f64,
    pub fingerprint: String,
}

impl GridResult {
    /// Average tumour exposure over all trials.
    pub fn ate(&self) -> f64 {
        self.trials.iter().map(|t| t.te).sum::<f64>() / self.trials.len() as f64
    }

    /// Trials whose start lies in grid column `i` (the row of starts at one x).
    pub fn column(&self, i: usize) -> impl Iterator<Item = &TrialResult> {
        self.trials.iter().filter(move |t| t.grid_i == i)
    }

    pub fn summary(&self) -> GridSummary {
        let n = self.trials.len();
        GridSummary {
            ate: self.ate(),
            min_te: self.trials.iter().map(|t| t.te).fold(f64::INFINITY, f64::min),
            n_trials: n,
            success_rate: self.trials.iter().filter(|t| t.done_reason == DoneReason::TargetReached).count() as f64 / n as f64,
            fingerprint: self.fingerprint.clone(),
        }
    }

    pub fn write_summary(&self, path: &Path) -> std::io::Result<()> {
        let text = serde_json::to_string_pretty(&self.summary()).expect("summary serialises");
        fs::write(path, text + "\n")
    }
}

/// Runs one episode from every grid start and measures the terminal exposure.
/// Episodes end at the target or on timeout; a timed-out trial is scored on
/// whatever configuration the sheet is left in.
pub fn run_grid(scene: &SceneConfig, grid: &GridSpec, controller: &mut dyn Controller) -> Result<GridResult, crate::Error> {
    let mut env = TissueEnv::new(scene.clone());
    let mut trials = Vec::with_capacity(grid.nx * grid.nz);
    for (seed, (i, j, start)) in grid.starts().into_iter().enumerate() {
        env.reset(start, seed as u64)?;
        controller.begin(&env);
        while !env.state().done {
            let a = controller.act(&env)?;
            env.step(a)?;
        }
        let s = env.state();
        trials.push(TrialResult {
            grid_i: i,
            grid_j: j,
            start,
            te: env.tumour_exposure(TE_SAMPLES),
            done_reason: s.done_reason,
            steps: s.t,
            grasp_position: s.tissue.grasped_particle.map(|k| s.tissue.rest_positions[k]),
        });
    }
    Ok(GridResult { spec: grid.clone(), trials, fingerprint: scene.fingerprint() })
}

/// Writes one CSV row per trial, for heatmap plotting.
pub fn emit_heatmap(path: &Path, result: &GridResult) -> csv::Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["grid_i", "grid_j", "x_mm", "z_mm", "te", "done_reason", "steps"])?;
    for t in &result.trials {
        w.write_record([
            t.grid_i.to_string(),
            t.grid_j.to_string(),
            t.start.x.to_string(),
            t.start.z.to_string(),
            t.te.to_string(),
            t.done_reason.to_string(),
            t.steps.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// `(global_step, mean_episode_reward)` per update; the reward is `None`
/// when no episode finished in that rollout.
pub type Curve = Vec<(u64, Option<f64>)>;

/// Reads the reward curve from a training-metrics CSV.
pub fn load_curve(path: &Path) -> Result<Curve, csv::Error> {
    let mut r = csv::Reader::from_path(path)?;
    let headers = r.headers()?.clone();
    let col = |name: &str| {
        headers.iter().position(|h| h == name).ok_or_else(|| {
            csv::Error::from(std::io::Error::new(std::io::ErrorKind::InvalidData, format!("metrics file has no `{name}` column")))
        })
    };
    let (step_col, reward_col) = (col("global_step")?, col("mean_episode_reward")?);
    let mut curve = Vec::new();
    for rec in r.records() {
        let rec = rec?;
        let bad = |what: &str| {
            csv::Error::from(std::io::Error::new(std::io::ErrorKind::InvalidData, format!("bad {what} in metrics row {rec:?}")))
        };
        let step = rec[step_col].parse().map_err(|_| bad("global_step"))?;
        let reward = match &rec[reward_col] {
            "" => None,
            v => Some(v.parse().map_err(|_| bad("mean_episode_reward"))?),
        };
        curve.push((step, reward));
    }
    Ok(curve)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CurvePoint {
    pub step: u64,
    pub mean: f64,
    pub min: f64,
    pub max: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MethodCurve {
    pub name: String,
    pub seeds: usize,
    /// Defined from the first step at which every seed has reported a reward.
    pub points: Vec<CurvePoint>,
    /// First step at which the across-seed mean reaches the threshold.
    pub crossing: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CurveComparison {
    pub threshold: f64,
    pub methods: Vec<MethodCurve>,
}

impl CurveComparison {
    pub fn method(&self, name: &str) -> Option<&MethodCurve> {
        self.methods.iter().find(|m| m.name == name)
    }

    /// Whether `a` reaches the threshold strictly before `b`; a method that
    /// never crosses loses to one that does.
    pub fn crosses_first(&self, a: &str, b: &str) -> bool {
        match (self.method(a).and_then(|m| m.crossing), self.method(b).and_then(|m| m.crossing)) {
            (Some(x), Some(y)) => x < y,
            (Some(_), None) => true,
            _ => false,
        }
    }

    /// Plot-ready CSV: `global_step` then `<name>_mean,<name>_min,<name>_max`
    /// per method, on the union of all steps (blank before a method starts).
    pub fn write_csv(&self, path: &Path) -> csv::Result<()> {
        let steps: BTreeSet<u64> = self.methods.iter().flat_map(|m| m.points.iter().map(|p| p.step)).collect();
        let mut w = csv::Writer::from_path(path)?;
        let mut header = vec!["global_step".to_string()];
        for m in &self.methods {
            header.extend(["mean", "min", "max"].map(|s| format!("{}_{s}", m.name)));
        }
        w.write_record(&header)?;
        for step in steps {
            let mut row = vec![step.to_string()];
            for m in &self.methods {
                match m.points.iter().rev().find(|p| p.step <= step) {
                    Some(p) => row.extend([p.mean, p.min, p.max].map(|v| v.to_string())),
                    None => row.extend(std::iter::repeat_n(String::new(), 3)),
                }
            }
            w.write_record(&row)?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Aligns seed curves of one method on the union of their steps, carrying
/// each seed's last reported reward forward.
pub fn aggregate(name: &str, seeds: &[Curve], threshold: f64) -> MethodCurve {
    let steps: BTreeSet<u64> = seeds.iter().flat_map(|c| c.iter().map(|&(s, _)| s)).collect();
    let mut cursor = vec![0usize; seeds.len()];
    let mut last: Vec<Option<f64>> = vec![None; seeds.len()];
    let mut points = Vec::new();
    for step in steps {
        for (k, curve) in seeds.iter().enumerate() {
            while cursor[k] < curve.len() && curve[cursor[k]].0 <= step {
                if let Some(v) = curve[cursor[k]].1 {
                    last[k] = Some(v);
                }
                cursor[k] += 1;
            }
        }
        let values: Option<Vec<f64>> = last.iter().copied().collect();
        if let Some(v) = values.filter(|v| !v.is_empty()) {
            points.push(CurvePoint {
                step,
                mean: v.iter().sum::<f64>() / v.len() as f64,
                min: v.iter().copied().fold(f64::INFINITY, f64::min),
                max: v.iter().copied().fold(f64::NEG_INFINITY, f64::max),
            });
        }
    }
    let crossing = points.iter().find(|p| p.mean >= threshold).map(|p| p.step);
    MethodCurve { name: name.to_string(), seeds: seeds.len(), points, crossing }
}

/// Compares methods, each given as one curve per seed.
pub fn compare_curves(methods: &[(&str, Vec<Curve>)], threshold: f64) -> CurveComparison {
    CurveComparison { threshold, methods: methods.iter().map(|(name, seeds)| aggregate(name, seeds, threshold)).collect() }
}
