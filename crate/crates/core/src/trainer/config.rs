//! Flat `key = value` run configuration.

use std::fmt::Write as _;
use std::path::Path;

use crate::dynamics::{DynamicsConfig, ErrorNorm};
use crate::envs::PairId;
use crate::nn::LogStdBounds;
use crate::sac::{MultiTaskMode, SacConfig};
use crate::shaping::{LabelScheme, PotentialConfig, RevLabels};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Alternation {
    /// Tasks take turns every environment step.
    Step,
    /// Tasks take turns every episode.
    Episode,
}

impl Alternation {
    pub fn tag(self) -> &'static str {
        match self {
            Alternation::Step => "step",
            Alternation::Episode => "episode",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub env: PairId,
    pub mode: MultiTaskMode,
    pub seed: u64,
    /// Seeds used by multi-run commands.
    pub seeds: Vec<u64>,
    pub episodes: usize,
    pub horizon: usize,
    pub batch_size: usize,
    pub buffer_capacity: usize,
    pub gamma: f64,
    pub lr: f64,
    pub lr_alpha: f64,
    pub lr_dynamics: f64,
    pub lr_potential: f64,
    pub tau: f64,
    pub init_temperature: f64,
    pub actor_update_freq: u64,
    pub target_update_freq: u64,
    pub log_std_min: f64,
    pub log_std_max: f64,
    pub hidden_dim: usize,
    pub depth: usize,
    pub beta: f64,
    pub filter_norm: ErrorNorm,
    pub delta_scale: f64,
    pub scheme: String,
    pub rev_labels: RevLabels,
    pub success_cap: usize,
    pub warmup: usize,
    pub eval_interval: usize,
    pub eval_episodes: usize,
    pub augmentation: bool,
    pub filter: bool,
    pub shaping: bool,
    pub demos: usize,
    pub alternation: Alternation,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            env: PairId::Peg,
            mode: MultiTaskMode::Single,
            seed: 0,
            seeds: vec![0, 1, 2, 3, 4],
            episodes: 300,
            horizon: 100,
            batch_size: 128,
            buffer_capacity: 50_000,
            gamma: 0.99,
            lr: 1e-3,
            lr_alpha: 1e-3,
            lr_dynamics: 1e-3,
            lr_potential: 1e-3,
            tau: 0.01,
            init_temperature: 0.1,
            actor_update_freq: 2,
            target_update_freq: 2,
            log_std_min: -10.0,
            log_std_max: 2.0,
            hidden_dim: 64,
            depth: 2,
            beta: 0.01,
            filter_norm: ErrorNorm::Euclidean,
            delta_scale: 0.1,
            scheme: "linear".into(),
            rev_labels: RevLabels::Reversed,
            success_cap: 50,
            warmup: 1000,
            eval_interval: 20,
            eval_episodes: 20,
            augmentation: true,
            filter: true,
            shaping: true,
            demos: 10,
            alternation: Alternation::Step,
        }
    }
}

fn parse_bool(key: &str, v: &str) -> Result<bool> {
    match v {
        "true" | "on" | "1" | "yes" => Ok(true),
        "false" | "off" | "0" | "no" => Ok(false),
        _ => Err(Error::Parse(format!("`{key}` expects a boolean, got `{v}`"))),
    }
}

fn parse_num<T: std::str::FromStr>(key: &str, v: &str) -> Result<T>
where
    T::Err: std::fmt::Display,
{
    v.parse::<T>()
        .map_err(|e| Error::Parse(format!("`{key}` = `{v}`: {e}")))
}

impl RunConfig {
    pub const KEYS: [&'static str; 35] = [
        "env", "mode", "seed", "seeds", "episodes", "horizon", "batch_size", "buffer_capacity", "gamma", "lr",
        "lr_alpha", "lr_dynamics", "lr_potential", "tau", "init_temperature", "actor_update_freq",
        "target_update_freq", "log_std_min", "log_std_max", "hidden_dim", "depth", "beta", "filter_norm",
        "delta_scale", "scheme", "rev_labels", "success_cap", "warmup", "eval_interval", "eval_episodes",
        "augmentation", "filter", "shaping", "demos", "alternation",
    ];

    /// Overrides one field from its text form.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let v = value.trim();
        match key.trim() {
            "env" => self.env = v.parse()?,
            "mode" => self.mode = v.parse()?,
            "seed" => self.seed = parse_num(key, v)?,
            "seeds" => {
                self.seeds = v
                    .split(',')
                    .filter(|s| !s.trim().is_empty())
                    .map(|s| parse_num(key, s.trim()))
                    .collect::<Result<_>>()?
            }
            "episodes" => self.episodes = parse_num(key, v)?,
            "horizon" => self.horizon = parse_num(key, v)?,
            "batch_size" => self.batch_size = parse_num(key, v)?,
            "buffer_capacity" => self.buffer_capacity = parse_num(key, v)?,
            "gamma" => self.gamma = parse_num(key, v)?,
            "lr" => self.lr = parse_num(key, v)?,
            "lr_alpha" => self.lr_alpha = parse_num(key, v)?,
            "lr_dynamics" => self.lr_dynamics = parse_num(key, v)?,
            "lr_potential" => self.lr_potential = parse_num(key, v)?,
            "tau" => self.tau = parse_num(key, v)?,
            "init_temperature" => self.init_temperature = parse_num(key, v)?,
            "actor_update_freq" => self.actor_update_freq = parse_num(key, v)?,
            "target_update_freq" => self.target_update_freq = parse_num(key, v)?,
            "log_std_min" => self.log_std_min = parse_num(key, v)?,
            "log_std_max" => self.log_std_max = parse_num(key, v)?,
            "hidden_dim" => self.hidden_dim = parse_num(key, v)?,
            "depth" => self.depth = parse_num(key, v)?,
            "beta" => self.beta = parse_num(key, v)?,
            "filter_norm" => self.filter_norm = v.parse()?,
            "delta_scale" => self.delta_scale = parse_num(key, v)?,
            "scheme" => {
                LabelScheme::parse(v, self.gamma)?;
                self.scheme = v.to_owned();
            }
            "rev_labels" => self.rev_labels = v.parse()?,
            "success_cap" => self.success_cap = parse_num(key, v)?,
            "warmup" => self.warmup = parse_num(key, v)?,
            "eval_interval" => self.eval_interval = parse_num(key, v)?,
            "eval_episodes" => self.eval_episodes = parse_num(key, v)?,
            "augmentation" => self.augmentation = parse_bool(key, v)?,
            "filter" => self.filter = parse_bool(key, v)?,
            "shaping" => self.shaping = parse_bool(key, v)?,
            "demos" => self.demos = parse_num(key, v)?,
            "alternation" => {
                self.alternation = match v {
                    "step" => Alternation::Step,
                    "episode" => Alternation::Episode,
                    _ => return Err(Error::Parse(format!("`alternation` expects step or episode, got `{v}`"))),
                }
            }
            other => return Err(Error::Parse(format!("unknown config key `{other}`"))),
        }
        Ok(())
    }

    /// Applies `key = value` lines on top of `self`. Blank lines and `#`
    /// comments are ignored.
    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Parse(format!("line {}: expected `key = value`, got `{raw}`", i + 1)))?;
            self.set(k, v)?;
        }
        Ok(())
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        cfg.apply_text(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_text(&std::fs::read_to_string(path)?)
    }

    /// Every field, one per line, in a form [`RunConfig::from_text`] reads
    /// back to an identical config.
    pub fn to_text(&self) -> String {
        let mut o = String::new();
        let seeds: Vec<String> = self.seeds.iter().map(u64::to_string).collect();
        let mut kv = |k: &str, v: String| writeln!(o, "{k} = {v}").unwrap();
        kv("env", self.env.to_string());
        kv("mode", self.mode.to_string());
        kv("seed", self.seed.to_string());
        kv("seeds", seeds.join(","));
        kv("episodes", self.episodes.to_string());
        kv("horizon", self.horizon.to_string());
        kv("batch_size", self.batch_size.to_string());
        kv("buffer_capacity", self.buffer_capacity.to_string());
        kv("gamma", format!("{:?}", self.gamma));
        kv("lr", format!("{:?}", self.lr));
        kv("lr_alpha", format!("{:?}", self.lr_alpha));
        kv("lr_dynamics", format!("{:?}", self.lr_dynamics));
        kv("lr_potential", format!("{:?}", self.lr_potential));
        kv("tau", format!("{:?}", self.tau));
        kv("init_temperature", format!("{:?}", self.init_temperature));
        kv("actor_update_freq", self.actor_update_freq.to_string());
        kv("target_update_freq", self.target_update_freq.to_string());
        kv("log_std_min", format!("{:?}", self.log_std_min));
        kv("log_std_max", format!("{:?}", self.log_std_max));
        kv("hidden_dim", self.hidden_dim.to_string());
        kv("depth", self.depth.to_string());
        kv("beta", format!("{:?}", self.beta));
        kv("filter_norm", self.filter_norm.to_string());
        kv("delta_scale", format!("{:?}", self.delta_scale));
        kv("scheme", self.scheme.clone());
        kv("rev_labels", self.rev_labels.tag().into());
        kv("success_cap", self.success_cap.to_string());
        kv("warmup", self.warmup.to_string());
        kv("eval_interval", self.eval_interval.to_string());
        kv("eval_episodes", self.eval_episodes.to_string());
        kv("augmentation", self.augmentation.to_string());
        kv("filter", self.filter.to_string());
        kv("shaping", self.shaping.to_string());
        kv("demos", self.demos.to_string());
        kv("alternation", self.alternation.tag().into());
        o
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("episodes", self.episodes),
            ("horizon", self.horizon),
            ("batch_size", self.batch_size),
            ("buffer_capacity", self.buffer_capacity),
            ("hidden_dim", self.hidden_dim),
            ("eval_interval", self.eval_interval),
            ("eval_episodes", self.eval_episodes),
        ];
        for (k, v) in positive {
            if v == 0 {
                return Err(Error::InvalidConfig(format!("`{k}` must be positive")));
            }
        }
        if self.actor_update_freq == 0 || self.target_update_freq == 0 {
            return Err(Error::InvalidConfig("update frequencies must be positive".into()));
        }
        if !(0.0..=1.0).contains(&self.gamma) {
            return Err(Error::InvalidConfig(format!("gamma must lie in [0, 1], got {}", self.gamma)));
        }
        if !(self.tau > 0.0 && self.tau <= 1.0) {
            return Err(Error::InvalidConfig(format!("tau must lie in (0, 1], got {}", self.tau)));
        }
        for (k, v) in [
            ("lr", self.lr),
            ("lr_alpha", self.lr_alpha),
            ("lr_dynamics", self.lr_dynamics),
            ("lr_potential", self.lr_potential),
            ("beta", self.beta),
            ("init_temperature", self.init_temperature),
            ("delta_scale", self.delta_scale),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::InvalidConfig(format!("`{k}` must be positive, got {v}")));
            }
        }
        if self.log_std_min >= self.log_std_max {
            return Err(Error::InvalidConfig("log_std_min must be below log_std_max".into()));
        }
        LabelScheme::parse(&self.scheme, self.gamma)?;
        Ok(())
    }

    pub fn label_scheme(&self) -> LabelScheme {
        LabelScheme::parse(&self.scheme, self.gamma).expect("validated scheme")
    }

    pub fn sac_config(&self) -> SacConfig {
        SacConfig {
            hidden_dim: self.hidden_dim,
            depth: self.depth,
            lr: self.lr,
            lr_alpha: self.lr_alpha,
            gamma: self.gamma,
            tau: self.tau,
            init_temperature: self.init_temperature,
            target_entropy: None,
            actor_update_freq: self.actor_update_freq,
            target_update_freq: self.target_update_freq,
            log_std_bounds: LogStdBounds {
                min: self.log_std_min,
                max: self.log_std_max,
            },
        }
    }

    pub fn dynamics_config(&self) -> DynamicsConfig {
        DynamicsConfig {
            hidden_dim: self.hidden_dim,
            depth: self.depth,
            lr: self.lr_dynamics,
            delta_scale: self.delta_scale,
        }
    }

    pub fn potential_config(&self) -> PotentialConfig {
        PotentialConfig {
            hidden_dim: self.hidden_dim,
            depth: self.depth,
            lr: self.lr_potential,
            batch_size: self.batch_size,
            scheme: self.label_scheme(),
            rev_labels: self.rev_labels,
        }
    }

    /// Arm name derived from the toggles, prefixed by the multi-task mode
    /// unless it is `single`.
    pub fn method_tag(&self) -> String {
        let arm = match (self.augmentation, self.shaping) {
            (false, false) => "sac",
            (true, false) if self.filter => "+aug",
            (true, false) => "+aug-nofilter",
            (false, true) => "+shaping",
            (true, true) if self.filter => "tr-sac",
            (true, true) => "tr-sac-nofilter",
        };
        match self.mode {
            MultiTaskMode::Single => arm.to_owned(),
            mode => format!("{mode}:{arm}"),
        }
    }

    /// `None` keeps every successful trajectory.
    pub fn success_cap(&self) -> Option<usize> {
        (self.success_cap > 0).then_some(self.success_cap)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn resolved_text_round_trips() {
        let mut cfg = RunConfig::default();
        cfg.apply_text("env = door-inward\nmode = multi-head\nbeta = 0.001 # comment\nshaping = off\nseeds = 3,4\n")
            .unwrap();
        assert_eq!(cfg.env, PairId::DoorInward);
        assert!(!cfg.shaping);
        assert_eq!(cfg.seeds, vec![3, 4]);
        assert_eq!(RunConfig::from_text(&cfg.to_text()).unwrap(), cfg);
    }

    #[test]
    fn every_written_key_is_known() {
        let text = RunConfig::default().to_text();
        for line in text.lines() {
            let key = line.split('=').next().unwrap().trim();
            assert!(RunConfig::KEYS.contains(&key), "{key}");
        }
    }

    #[test]
    fn bad_input_is_rejected() {
        assert!(RunConfig::from_text("colour = red").is_err());
        assert!(RunConfig::from_text("episodes = many").is_err());
        assert!(RunConfig::from_text("episodes = 0").is_err());
        assert!(RunConfig::from_text("scheme = cubic").is_err());
        assert!(RunConfig::from_text("tau = 0").is_err());
        assert!(RunConfig::from_text("just words").is_err());
    }

    #[test]
    fn default_values() {
        let cfg = RunConfig::default();
        assert_eq!((cfg.eval_interval, cfg.eval_episodes, cfg.demos), (20, 20, 10));
        assert_eq!(cfg.init_temperature, 0.1);
        assert_eq!(cfg.beta, 0.01);
        assert_eq!(cfg.scheme, "linear");
    }
}
