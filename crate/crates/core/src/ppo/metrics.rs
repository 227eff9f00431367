use std::fs::File;
use std::io::Write;
use std::path::Path;

/// Column order of the training-metrics CSV. The last three columns are left
/// empty unless the adversarial reward is active.
pub const METRICS_HEADER: [&str; 9] = [
    "global_step",
    "mean_episode_reward",
    "env_reward_mean",
    "value_loss",
    "entropy",
    "clip_fraction",
    "gail_reward_mean",
    "disc_acc_expert",
    "disc_acc_gen",
];

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GailColumns {
    pub gail_reward_mean: f64,
    pub disc_acc_expert: f64,
    pub disc_acc_gen: f64,
}

/// One row per update.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MetricsRow {
    pub global_step: u64,
    /// Mean normalised extrinsic return of episodes finished in the rollout;
    /// `None` when no episode finished.
    pub mean_episode_reward: Option<f64>,
    pub env_reward_mean: f64,
    pub value_loss: f64,
    pub entropy: f64,
    pub clip_fraction: f64,
    pub gail: Option<GailColumns>,
}

impl MetricsRow {
    pub fn record(&self) -> Vec<String> {
        let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
        vec![
            self.global_step.to_string(),
            opt(self.mean_episode_reward),
            self.env_reward_mean.to_string(),
            self.value_loss.to_string(),
            self.entropy.to_string(),
            self.clip_fraction.to_string(),
            opt(self.gail.map(|g| g.gail_reward_mean)),
            opt(self.gail.map(|g| g.disc_acc_expert)),
            opt(self.gail.map(|g| g.disc_acc_gen)),
        ]
    }
}

/// Appends metric rows to a CSV file, flushing after each row so partially
/// finished runs leave readable curves behind.
pub struct MetricsWriter<W: Write> {
    inner: csv::Writer<W>,
}

impl MetricsWriter<File> {
    pub fn create(path: &Path) -> csv::Result<Self> {
        Self::from_writer(File::create(path)?)
    }
}

impl<W: Write> MetricsWriter<W> {
    pub fn from_writer(w: W) -> csv::Result<Self> {
        let mut inner = csv::Writer::from_writer(w);
        inner.write_record(METRICS_HEADER)?;
        inner.flush()?;
        Ok(Self { inner })
    }

    pub fn write(&mut self, row: &MetricsRow) -> csv::Result<()> {
        self.inner.write_record(row.record())?;
        self.inner.flush()?;
        Ok(())
    }

    pub fn into_inner(self) -> W {
        self.inner.into_inner().map_err(|e| e.into_error()).expect("flushed writer")
    }
}
