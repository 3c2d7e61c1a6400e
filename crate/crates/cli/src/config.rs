//! Run configuration: flat key-value text with `[section]` headers.
//!
//! Every published hyperparameter ships as the default, so an empty config
//! file reproduces the reference setup. Unknown sections or keys are
//! rejected — a typo should fail the run, not silently fall back.

use std::fmt::Write as _;
use std::path::Path;

use promptlift_core::environment::EnvConfig;
use promptlift_core::ppo::{NetConfig, PpoConfig};
use promptlift_core::reward::RewardWeights;
use promptlift_core::simworld::SimConfig;
use promptlift_core::Error;

/// Which backend family every role binds to.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BackendMode {
    Sim,
    Live,
}

impl std::fmt::Display for BackendMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            BackendMode::Sim => "sim",
            BackendMode::Live => "live",
        })
    }
}

/// Everything a run needs, from one file plus command-line overrides.
#[derive(Debug, Clone)]
pub struct RunConfig {
    pub mode: BackendMode,
    pub seed: u64,
    pub out: String,
    pub dataset: String,

    // [gateway]
    pub base_url: String,
    pub chat_model: String,
    pub image_model: String,
    pub embed_model: String,
    pub embed_dim: usize,
    pub image_cost_dollars: f64,
    pub max_in_flight: usize,

    // [sim]
    pub sim: SimConfig,

    // [ppo]
    pub ppo: PpoConfig,

    // [policy]
    pub hidden: usize,

    // [reward]
    pub weights: RewardWeights,
    pub r2_enabled: bool,

    // [env]
    pub warm_start_n: usize, // 0 = all in-domain exemplars
    pub prompt_dir: String,  // empty = built-in assets

    // [split]
    pub train_easy: usize,
    pub train_hard: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            mode: BackendMode::Sim,
            seed: 42,
            out: "out".into(),
            dataset: String::new(),
            base_url: "https://api.openai.com/v1".into(),
            chat_model: "gpt-4o".into(),
            image_model: "dall-e-3".into(),
            embed_model: "text-embedding-3-small".into(),
            embed_dim: 768,
            image_cost_dollars: 0.04,
            max_in_flight: 4,
            sim: SimConfig::default(),
            ppo: PpoConfig::default(),
            hidden: NetConfig::default().hidden,
            weights: RewardWeights::default(),
            r2_enabled: true,
            warm_start_n: 0,
            prompt_dir: String::new(),
            train_easy: 8,
            train_hard: 12,
        }
    }
}

impl RunConfig {
    pub fn from_file(path: impl AsRef<Path>) -> Result<RunConfig, Error> {
        let text = std::fs::read_to_string(&path)
            .map_err(|e| Error::Config(format!("config {}: {e}", path.as_ref().display())))?;
        Self::from_str(&text)
    }

    #[allow(clippy::should_implement_trait)]
    pub fn from_str(text: &str) -> Result<RunConfig, Error> {
        let mut cfg = RunConfig::default();
        let mut section = String::from("run");
        for (lineno, raw) in text.lines().enumerate() {
            let line = strip_comment(raw).trim().to_string();
            if line.is_empty() {
                continue;
            }
            if let Some(name) = line.strip_prefix('[').and_then(|s| s.strip_suffix(']')) {
                section = name.trim().to_string();
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                Error::Config(format!("line {}: expected `key = value`", lineno + 1))
            })?;
            cfg.apply(&section, key.trim(), value.trim())
                .map_err(|e| Error::Config(format!("line {}: {e}", lineno + 1)))?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    fn apply(&mut self, section: &str, key: &str, value: &str) -> Result<(), String> {
        let unknown = || Err(format!("unknown key [{section}] {key}"));
        match section {
            "run" => match key {
                "mode" => {
                    self.mode = match value {
                        "sim" => BackendMode::Sim,
                        "live" => BackendMode::Live,
                        other => return Err(format!("mode must be sim|live, got {other:?}")),
                    }
                }
                "seed" => self.seed = parse(key, value)?,
                "out" => self.out = value.to_string(),
                "dataset" => self.dataset = value.to_string(),
                _ => return unknown(),
            },
            "gateway" => match key {
                "base_url" => self.base_url = value.to_string(),
                "chat_model" => self.chat_model = value.to_string(),
                "image_model" => self.image_model = value.to_string(),
                "embed_model" => self.embed_model = value.to_string(),
                "embed_dim" => self.embed_dim = parse(key, value)?,
                "image_cost_dollars" => self.image_cost_dollars = parse(key, value)?,
                "max_in_flight" => self.max_in_flight = parse(key, value)?,
                _ => return unknown(),
            },
            "sim" => match key {
                "embed_dim" => self.sim.embed_dim = parse(key, value)?,
                "sigma_easy" => self.sim.sigma_easy = parse(key, value)?,
                "sigma_hard" => self.sim.sigma_hard = parse(key, value)?,
                "sigma_gen" => self.sim.sigma_gen = parse(key, value)?,
                "describe_threshold" => self.sim.describe_threshold = parse(key, value)?,
                "dropout_easy" => self.sim.dropout_easy = parse(key, value)?,
                "dropout_hard" => self.sim.dropout_hard = parse(key, value)?,
                _ => return unknown(),
            },
            "ppo" => match key {
                "lr" => self.ppo.lr = parse(key, value)?,
                "gamma" => self.ppo.gamma = parse(key, value)?,
                "clip_epsilon" => self.ppo.clip_epsilon = parse(key, value)?,
                "batch_size" => self.ppo.batch_size = parse(key, value)?,
                "updates_per_batch" => self.ppo.updates_per_batch = parse(key, value)?,
                "horizon" => self.ppo.horizon = parse(key, value)?,
                "value_loss_weight" => self.ppo.value_loss_weight = parse(key, value)?,
                "entropy_coef" => self.ppo.entropy_coef = parse(key, value)?,
                "normalize_advantages" => self.ppo.normalize_advantages = parse_bool(key, value)?,
                "include_immediate_reward" => {
                    self.ppo.include_immediate_reward = parse_bool(key, value)?
                }
                "train_iterations" => self.ppo.train_iterations = parse(key, value)?,
                _ => return unknown(),
            },
            "policy" => match key {
                "hidden" => self.hidden = parse(key, value)?,
                _ => return unknown(),
            },
            "reward" => match key {
                "lambda1" => self.weights.lambda1 = parse(key, value)?,
                "lambda2" => self.weights.lambda2 = parse(key, value)?,
                "lambda3" => self.weights.lambda3 = parse(key, value)?,
                "r2_enabled" => self.r2_enabled = parse_bool(key, value)?,
                _ => return unknown(),
            },
            "env" => match key {
                "warm_start_n" => self.warm_start_n = parse(key, value)?,
                "prompt_dir" => self.prompt_dir = value.to_string(),
                _ => return unknown(),
            },
            "split" => match key {
                "train_easy" => self.train_easy = parse(key, value)?,
                "train_hard" => self.train_hard = parse(key, value)?,
                _ => return unknown(),
            },
            other => return Err(format!("unknown section [{other}]")),
        }
        Ok(())
    }

    fn validate(&self) -> Result<(), Error> {
        self.ppo.validate()?;
        if self.weights.lambda1 < 0.0 || self.weights.lambda2 < 0.0 || self.weights.lambda3 < 0.0 {
            return Err(Error::Config("reward weights must be non-negative".into()));
        }
        if self.weights.lambda1 + self.weights.lambda2 + self.weights.lambda3 <= 0.0 {
            return Err(Error::Config(
                "reward weights must have a positive sum".into(),
            ));
        }
        if self.embed_dim == 0 || self.hidden == 0 {
            return Err(Error::Config(
                "embed_dim and hidden must be positive".into(),
            ));
        }
        Ok(())
    }

    /// The environment settings implied by this config.
    pub fn env_config(&self) -> EnvConfig {
        EnvConfig {
            horizon: self.ppo.horizon,
            warm_start_n: if self.warm_start_n == 0 {
                None
            } else {
                Some(self.warm_start_n)
            },
            weights: self.weights,
            r2_enabled: self.r2_enabled,
        }
    }

    pub fn image_cost_micros(&self) -> u64 {
        (self.image_cost_dollars * 1e6).round() as u64
    }

    /// The effective configuration, printed at startup and parseable back.
    pub fn echo(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "[run]");
        let _ = writeln!(s, "mode = {}", self.mode);
        let _ = writeln!(s, "seed = {}", self.seed);
        let _ = writeln!(s, "out = {}", self.out);
        let _ = writeln!(s, "dataset = {}", self.dataset);
        let _ = writeln!(s, "[gateway]");
        let _ = writeln!(s, "base_url = {}", self.base_url);
        let _ = writeln!(s, "chat_model = {}", self.chat_model);
        let _ = writeln!(s, "image_model = {}", self.image_model);
        let _ = writeln!(s, "embed_model = {}", self.embed_model);
        let _ = writeln!(s, "embed_dim = {}", self.embed_dim);
        let _ = writeln!(s, "image_cost_dollars = {}", self.image_cost_dollars);
        let _ = writeln!(s, "max_in_flight = {}", self.max_in_flight);
        let _ = writeln!(s, "[sim]");
        let _ = writeln!(s, "embed_dim = {}", self.sim.embed_dim);
        let _ = writeln!(s, "sigma_easy = {}", self.sim.sigma_easy);
        let _ = writeln!(s, "sigma_hard = {}", self.sim.sigma_hard);
        let _ = writeln!(s, "sigma_gen = {}", self.sim.sigma_gen);
        let _ = writeln!(s, "describe_threshold = {}", self.sim.describe_threshold);
        let _ = writeln!(s, "dropout_easy = {}", self.sim.dropout_easy);
        let _ = writeln!(s, "dropout_hard = {}", self.sim.dropout_hard);
        let _ = writeln!(s, "[ppo]");
        let _ = writeln!(s, "lr = {}", self.ppo.lr);
        let _ = writeln!(s, "gamma = {}", self.ppo.gamma);
        let _ = writeln!(s, "clip_epsilon = {}", self.ppo.clip_epsilon);
        let _ = writeln!(s, "batch_size = {}", self.ppo.batch_size);
        let _ = writeln!(s, "updates_per_batch = {}", self.ppo.updates_per_batch);
        let _ = writeln!(s, "horizon = {}", self.ppo.horizon);
        let _ = writeln!(s, "value_loss_weight = {}", self.ppo.value_loss_weight);
        let _ = writeln!(s, "entropy_coef = {}", self.ppo.entropy_coef);
        let _ = writeln!(
            s,
            "normalize_advantages = {}",
            self.ppo.normalize_advantages
        );
        let _ = writeln!(
            s,
            "include_immediate_reward = {}",
            self.ppo.include_immediate_reward
        );
        let _ = writeln!(s, "train_iterations = {}", self.ppo.train_iterations);
        let _ = writeln!(s, "[policy]");
        let _ = writeln!(s, "hidden = {}", self.hidden);
        let _ = writeln!(s, "[reward]");
        let _ = writeln!(s, "lambda1 = {}", self.weights.lambda1);
        let _ = writeln!(s, "lambda2 = {}", self.weights.lambda2);
        let _ = writeln!(s, "lambda3 = {}", self.weights.lambda3);
        let _ = writeln!(s, "r2_enabled = {}", self.r2_enabled);
        let _ = writeln!(s, "[env]");
        let _ = writeln!(s, "warm_start_n = {}", self.warm_start_n);
        let _ = writeln!(s, "prompt_dir = {}", self.prompt_dir);
        let _ = writeln!(s, "[split]");
        let _ = writeln!(s, "train_easy = {}", self.train_easy);
        let _ = writeln!(s, "train_hard = {}", self.train_hard);
        s
    }
}

fn strip_comment(line: &str) -> &str {
    match line.find(['#', ';']) {
        Some(pos) => &line[..pos],
        None => line,
    }
}

fn parse<T: std::str::FromStr>(key: &str, value: &str) -> Result<T, String>
where
    T::Err: std::fmt::Display,
{
    value
        .parse()
        .map_err(|e| format!("bad value for {key}: {e}"))
}

fn parse_bool(key: &str, value: &str) -> Result<bool, String> {
    match value {
        "true" | "1" | "yes" | "on" => Ok(true),
        "false" | "0" | "no" | "off" => Ok(false),
        other => Err(format!("bad boolean for {key}: {other:?}")),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_config_reproduces_published_defaults() {
        let cfg = RunConfig::from_str("").unwrap();
        assert_eq!(cfg.ppo.lr, 0.03);
        assert_eq!(cfg.ppo.horizon, 8);
        assert_eq!(cfg.ppo.batch_size, 16);
        assert_eq!(cfg.ppo.updates_per_batch, 32);
        assert_eq!(cfg.weights.lambda1, 0.4);
        assert_eq!(cfg.weights.lambda2, 0.4);
        assert_eq!(cfg.weights.lambda3, 0.2);
        assert_eq!(cfg.hidden, 256);
        assert_eq!(cfg.embed_dim, 768);
        assert_eq!(cfg.image_cost_micros(), 40_000);
        assert_eq!(cfg.mode, BackendMode::Sim);
    }

    #[test]
    fn sections_and_comments_parse() {
        let cfg = RunConfig::from_str(
            "# comment\n[run]\nseed = 7\nmode = sim\n[ppo]\nlr = 0.01 ; inline\nbatch_size = 4\n",
        )
        .unwrap();
        assert_eq!(cfg.seed, 7);
        assert_eq!(cfg.ppo.lr, 0.01);
        assert_eq!(cfg.ppo.batch_size, 4);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(RunConfig::from_str("[ppo]\nlearning_rate = 1\n").is_err());
        assert!(RunConfig::from_str("[nope]\nx = 1\n").is_err());
        assert!(RunConfig::from_str("[run]\nmode = turbo\n").is_err());
    }

    #[test]
    fn echo_round_trips() {
        let cfg = RunConfig::from_str("[ppo]\nlr = 0.005\n[reward]\nlambda3 = 0.3\n").unwrap();
        let echo = cfg.echo();
        assert!(echo.contains("lr = 0.005"));
        assert!(echo.contains("lambda3 = 0.3"));
        let back = RunConfig::from_str(&echo).unwrap();
        assert_eq!(back.ppo.lr, cfg.ppo.lr);
        assert_eq!(back.weights.lambda3, cfg.weights.lambda3);
        assert_eq!(back.seed, cfg.seed);
    }

    #[test]
    fn invalid_weights_fail_validation() {
        assert!(RunConfig::from_str("[reward]\nlambda1 = -1\n").is_err());
        assert!(RunConfig::from_str("[reward]\nlambda1 = 0\nlambda2 = 0\nlambda3 = 0\n").is_err());
    }
}
