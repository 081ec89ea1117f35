use std::path::Path;

use crosscam_core::gateway::MockLatencyModel;
use crosscam_core::prompt::{AccumulationPolicy, Mode};
use crosscam_core::rag::{DEFAULT_CHUNK_CHARS, DEFAULT_TOP_K};
use crosscam_core::types::{SimilarityConfig, TokenBudgetSchedule};
use crosscam_core::SegmenterConfig;
use serde::{Deserialize, Serialize};

use crate::CliError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum BackendKind {
    #[default]
    Mock,
    Http,
}

/// Top-level run configuration, read from a JSON file. Command-line flags
/// override individual fields.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub backend: BackendKind,
    pub endpoint: Option<String>,
    pub model: String,
    pub embedding_model: Option<String>,
    pub timeout_secs: u64,
    pub mode: Mode,
    pub base_camera: Option<String>,
    pub camera_order: Option<Vec<String>>,
    pub schedule: TokenBudgetSchedule,
    pub similarity: SimilarityConfig,
    pub segmenter: SegmenterConfig,
    pub accumulation: AccumulationPolicy,
    pub latency: MockLatencyModel,
    pub chunk_chars: usize,
    pub k: usize,
    pub workers: usize,
    pub seed: u64,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            backend: BackendKind::Mock,
            endpoint: None,
            model: "default".into(),
            embedding_model: None,
            timeout_secs: 120,
            mode: Mode::TrafficLens,
            base_camera: None,
            camera_order: None,
            schedule: TokenBudgetSchedule::default(),
            similarity: SimilarityConfig::default(),
            segmenter: SegmenterConfig::default(),
            accumulation: AccumulationPolicy::default(),
            latency: MockLatencyModel::default(),
            chunk_chars: DEFAULT_CHUNK_CHARS,
            k: DEFAULT_TOP_K,
            workers: 1,
            seed: 7,
        }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read config {}: {e}", path.display())))?;
        serde_json::from_str(&text)
            .map_err(|e| CliError::Config(format!("invalid config {}: {e}", path.display())))
    }

    pub fn apply(&mut self, o: &Overrides) -> Result<(), CliError> {
        if let Some(b) = o.backend {
            self.backend = b;
        }
        if let Some(e) = &o.endpoint {
            self.endpoint = Some(e.clone());
        }
        if let Some(m) = o.mode {
            self.mode = m;
        }
        if let Some(c) = &o.base_camera {
            self.base_camera = Some(c.clone());
        }
        if o.t_r.is_some() || o.t_l.is_some() || o.baseline_limit.is_some() {
            self.schedule = TokenBudgetSchedule::new(
                o.t_r.unwrap_or(self.schedule.base_limit()),
                o.t_l.unwrap_or(self.schedule.followup_limit()),
                o.baseline_limit.unwrap_or(self.schedule.baseline_limit()),
            )
            .map_err(|e| CliError::Config(e.to_string()))?;
        }
        if let Some(d) = o.delta {
            self.similarity =
                SimilarityConfig::new(d).map_err(|e| CliError::Config(e.to_string()))?;
        }
        if let Some(k) = o.k {
            self.k = k;
        }
        if let Some(w) = o.workers {
            self.workers = w;
        }
        if let Some(s) = o.seed {
            self.seed = s;
        }
        if self.k == 0 {
            return Err(CliError::Config("k must be at least 1".into()));
        }
        if self.workers == 0 {
            return Err(CliError::Config("workers must be at least 1".into()));
        }
        if self.chunk_chars == 0 {
            return Err(CliError::Config("chunk_chars must be at least 1".into()));
        }
        Ok(())
    }
}

/// Flag values that take precedence over the config file.
#[derive(Debug, Clone, Default, clap::Args)]
pub struct Overrides {
    /// JSON run configuration; flags override its values.
    #[arg(long, global = true)]
    pub config: Option<std::path::PathBuf>,
    #[arg(long, global = true, value_parser = parse_mode)]
    pub mode: Option<Mode>,
    #[arg(long, global = true)]
    pub base_camera: Option<String>,
    /// Output-token limit for the base camera.
    #[arg(long = "t-r", global = true)]
    pub t_r: Option<u32>,
    /// Output-token limit for follow-up cameras.
    #[arg(long = "t-l", global = true)]
    pub t_l: Option<u32>,
    #[arg(long, global = true)]
    pub baseline_limit: Option<u32>,
    /// Clip-similarity threshold at or above which follow-ups are skipped.
    #[arg(long, global = true)]
    pub delta: Option<f64>,
    #[arg(long, global = true)]
    pub k: Option<usize>,
    #[arg(long, global = true, value_enum)]
    pub backend: Option<BackendKind>,
    #[arg(long, global = true)]
    pub endpoint: Option<String>,
    #[arg(long, global = true)]
    pub workers: Option<usize>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
}

fn parse_mode(s: &str) -> Result<Mode, String> {
    match s {
        "baseline" => Ok(Mode::Baseline),
        "trafficlens" => Ok(Mode::TrafficLens),
        other => Err(format!(
            "unknown mode {other:?} (expected baseline or trafficlens)"
        )),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn partial_file_fills_defaults() {
        let cfg: RunConfig =
            serde_json::from_str(r#"{"schedule":{"base_limit":64,"followup_limit":16},"k":2}"#)
                .unwrap();
        assert_eq!(cfg.schedule.base_limit(), 64);
        assert_eq!(cfg.schedule.baseline_limit(), 256);
        assert_eq!(cfg.k, 2);
        assert_eq!(cfg.mode, Mode::TrafficLens);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(serde_json::from_str::<RunConfig>(r#"{"detla":0.3}"#).is_err());
    }

    #[test]
    fn flags_override_file() {
        let mut cfg = RunConfig::default();
        let o = Overrides {
            t_r: Some(100),
            delta: Some(0.5),
            ..Default::default()
        };
        cfg.apply(&o).unwrap();
        assert_eq!(cfg.schedule.base_limit(), 100);
        assert_eq!(cfg.schedule.followup_limit(), 32);
        assert_eq!(cfg.similarity.delta(), 0.5);
    }

    #[test]
    fn invalid_override_is_config_error() {
        let mut cfg = RunConfig::default();
        let o = Overrides {
            t_l: Some(500),
            ..Default::default()
        };
        assert!(matches!(cfg.apply(&o), Err(CliError::Config(_))));
    }
}
