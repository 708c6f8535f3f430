//! Flat `key = value` run configuration with `#` comments.
//!
//! Unknown keys, repeated keys and malformed values are errors carrying the line number.
//! [`RunConfig::to_text`] prints every key with its effective value, and parsing that
//! text yields the same configuration.

use std::collections::HashMap;
use std::fmt::Display;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::agent::NetConfig;
use crate::dataset::{DatasetSpec, GeneratorTag};
use crate::domain::{make_domain, DomainSpec, Geometry};
use crate::env::EnvConfig;
use crate::error::{Error, Result};
use crate::eval::StrategyKind;
use crate::forward::{DiagonalRule, ForwardOptions, MAX_KERNEL_CELLS};
use crate::nn::AdamConfig;
use crate::ppo::{TrainConfig, TrainMode};
use crate::recon::{LbfgsOptions, PsnrPeak};

/// Which heads are trained; the fixed frequency of `AngleOnly` is resolved at run time.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TrainModeKey {
    Both,
    AngleOnly,
    FrequencyOnly,
}

impl TrainModeKey {
    fn as_str(self) -> &'static str {
        match self {
            TrainModeKey::Both => "both",
            TrainModeKey::AngleOnly => "angle-only",
            TrainModeKey::FrequencyOnly => "frequency-only",
        }
    }
}

impl FromStr for TrainModeKey {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "both" => Ok(TrainModeKey::Both),
            "angle-only" => Ok(TrainModeKey::AngleOnly),
            "frequency-only" => Ok(TrainModeKey::FrequencyOnly),
            _ => Err(format!(
                "expected both, angle-only or frequency-only, got '{s}'"
            )),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub geometry: Geometry,
    pub grid: usize,
    pub sensors: usize,
    pub frequencies: Vec<f64>,
    pub order: usize,
    pub generator: GeneratorTag,
    pub n_train: usize,
    pub n_test: usize,
    pub target_ratio: f64,
    /// Frequency used for intensity calibration; `None` means the largest menu frequency.
    pub calib_omega: Option<f64>,
    pub diagonal: DiagonalRule,
    pub sensor_standoff: f64,
    pub lambda: f64,
    pub smoothing_eps: f64,
    pub inner_iters: usize,
    pub final_iters: usize,
    pub psnr_peak: PsnrPeak,
    pub lbfgs_memory: usize,
    pub net: NetConfig,
    pub iterations: usize,
    pub episodes_per_iter: usize,
    pub minibatch_episodes: usize,
    pub updates_per_iter: usize,
    pub clip: f64,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_eps: f64,
    pub gamma: f64,
    pub entropy_coef: f64,
    pub max_grad_norm: Option<f64>,
    pub checkpoint_every: usize,
    pub train_mode: TrainModeKey,
    /// Fixed frequency for the single-frequency strategies; `None` picks it on validation data.
    pub fixed_frequency: Option<f64>,
    pub validation_samples: usize,
    pub seed: u64,
    pub train_seed: u64,
    pub eval_seed: u64,
    pub run_id: String,
    pub dataset: PathBuf,
    pub kernel_cache: Option<PathBuf>,
    pub train_dir: Option<PathBuf>,
    pub reports_dir: PathBuf,
    pub resume: bool,
    pub checkpoint: Option<PathBuf>,
    pub angle_checkpoint: Option<PathBuf>,
    pub frequency_checkpoint: Option<PathBuf>,
    pub strategies: Vec<StrategyKind>,
    pub eval_samples: usize,
    pub sample_index: usize,
    pub strategy: StrategyKind,
    /// Worker threads; 0 uses all available cores.
    pub threads: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            geometry: Geometry::FarField,
            grid: 32,
            sensors: 10,
            frequencies: vec![8.0, 16.0, 24.0, 32.0],
            order: 2,
            generator: GeneratorTag::TriOval,
            n_train: 500,
            n_test: 100,
            target_ratio: 1.0 / 6.0,
            calib_omega: None,
            diagonal: DiagonalRule::DiscAverage,
            sensor_standoff: 0.1,
            lambda: 0.1,
            smoothing_eps: 1e-6,
            inner_iters: 3,
            final_iters: 20,
            psnr_peak: PsnrPeak::TrueMax,
            lbfgs_memory: 10,
            net: NetConfig::default(),
            iterations: 400,
            episodes_per_iter: 8,
            minibatch_episodes: 4,
            updates_per_iter: 10,
            clip: 0.2,
            lr: 4e-4,
            beta1: 0.9,
            beta2: 0.999,
            adam_eps: 1e-8,
            gamma: 1.0,
            entropy_coef: 0.0,
            max_grad_norm: None,
            checkpoint_every: 50,
            train_mode: TrainModeKey::Both,
            fixed_frequency: None,
            validation_samples: 10,
            seed: 0,
            train_seed: 0,
            eval_seed: 0,
            run_id: "default".into(),
            dataset: PathBuf::from("data/dataset.bin"),
            kernel_cache: None,
            train_dir: None,
            reports_dir: PathBuf::from("reports"),
            resume: false,
            checkpoint: None,
            angle_checkpoint: None,
            frequency_checkpoint: None,
            strategies: StrategyKind::ALL.to_vec(),
            eval_samples: 50,
            sample_index: 0,
            strategy: StrategyKind::UniformAngle,
            threads: 0,
        }
    }
}

fn parse_list<T: FromStr>(v: &str) -> std::result::Result<Vec<T>, String> {
    if v.trim().is_empty() {
        return Ok(Vec::new());
    }
    v.split(',')
        .map(|s| {
            s.trim()
                .parse::<T>()
                .map_err(|_| format!("bad list entry '{}'", s.trim()))
        })
        .collect()
}

fn join<T: Display>(v: &[T]) -> String {
    v.iter().map(T::to_string).collect::<Vec<_>>().join(",")
}

/// Real number, also accepting a `p/q` fraction.
fn parse_real(v: &str) -> std::result::Result<f64, String> {
    let out = match v.split_once('/') {
        Some((p, q)) => match (p.trim().parse::<f64>(), q.trim().parse::<f64>()) {
            (Ok(p), Ok(q)) if q != 0.0 => Ok(p / q),
            _ => Err(()),
        },
        None => v.parse::<f64>().map_err(|_| ()),
    };
    match out {
        Ok(x) if x.is_finite() => Ok(x),
        _ => Err(format!("expected a real number, got '{v}'")),
    }
}

fn parse_opt<T>(
    v: &str,
    f: impl Fn(&str) -> std::result::Result<T, String>,
) -> std::result::Result<Option<T>, String> {
    match v {
        "" | "none" | "auto" => Ok(None),
        _ => f(v).map(Some),
    }
}

fn parse_num<T: FromStr>(v: &str) -> std::result::Result<T, String> {
    v.parse()
        .map_err(|_| format!("expected a non-negative integer, got '{v}'"))
}

fn parse_with<T: FromStr>(v: &str) -> std::result::Result<T, String>
where
    T::Err: Display,
{
    v.parse().map_err(|e: T::Err| e.to_string())
}

fn parse_bool(v: &str) -> std::result::Result<bool, String> {
    match v {
        "true" | "yes" | "1" => Ok(true),
        "false" | "no" | "0" => Ok(false),
        _ => Err(format!("expected true or false, got '{v}'")),
    }
}

fn opt_path(v: &str) -> Option<PathBuf> {
    (!v.is_empty() && v != "none").then(|| PathBuf::from(v))
}

fn show_opt<T: Display>(v: &Option<T>, none: &str) -> String {
    v.as_ref().map_or_else(|| none.to_string(), T::to_string)
}

fn show_path(v: &Option<PathBuf>) -> String {
    v.as_ref()
        .map_or_else(|| "none".into(), |p| p.display().to_string())
}

impl RunConfig {
    fn set(&mut self, key: &str, v: &str) -> std::result::Result<(), String> {
        match key {
            "geometry" => self.geometry = parse_with(v)?,
            "grid" => self.grid = parse_num(v)?,
            "sensors" => self.sensors = parse_num(v)?,
            "frequencies" => {
                self.frequencies = parse_list::<String>(v)?
                    .iter()
                    .map(|s| parse_real(s))
                    .collect::<std::result::Result<_, _>>()?
            }
            "order" => self.order = parse_num(v)?,
            "generator" => self.generator = parse_with(v)?,
            "n_train" => self.n_train = parse_num(v)?,
            "n_test" => self.n_test = parse_num(v)?,
            "target_ratio" => self.target_ratio = parse_real(v)?,
            "calib_omega" => self.calib_omega = parse_opt(v, parse_real)?,
            "diagonal" => self.diagonal = parse_with(v)?,
            "sensor_standoff" => self.sensor_standoff = parse_real(v)?,
            "lambda" => self.lambda = parse_real(v)?,
            "smoothing_eps" => self.smoothing_eps = parse_real(v)?,
            "inner_iters" => self.inner_iters = parse_num(v)?,
            "final_iters" => self.final_iters = parse_num(v)?,
            "psnr_peak" => self.psnr_peak = parse_with(v)?,
            "lbfgs_memory" => self.lbfgs_memory = parse_num(v)?,
            "feature_hidden" => self.net.feature_hidden = parse_list(v)?,
            "feature_out" => self.net.feature_out = parse_num(v)?,
            "gru_hidden" => self.net.gru_hidden = parse_num(v)?,
            "gru_layers" => self.net.gru_layers = parse_num(v)?,
            "angle_hidden" => self.net.angle_hidden = parse_list(v)?,
            "freq_hidden" => self.net.freq_hidden = parse_list(v)?,
            "value_hidden" => self.net.value_hidden = parse_list(v)?,
            "iterations" => self.iterations = parse_num(v)?,
            "episodes_per_iter" => self.episodes_per_iter = parse_num(v)?,
            "minibatch_episodes" => self.minibatch_episodes = parse_num(v)?,
            "updates_per_iter" => self.updates_per_iter = parse_num(v)?,
            "clip" => self.clip = parse_real(v)?,
            "lr" => self.lr = parse_real(v)?,
            "beta1" => self.beta1 = parse_real(v)?,
            "beta2" => self.beta2 = parse_real(v)?,
            "adam_eps" => self.adam_eps = parse_real(v)?,
            "gamma" => self.gamma = parse_real(v)?,
            "entropy_coef" => self.entropy_coef = parse_real(v)?,
            "max_grad_norm" => self.max_grad_norm = parse_opt(v, parse_real)?,
            "checkpoint_every" => self.checkpoint_every = parse_num(v)?,
            "train_mode" => self.train_mode = v.parse()?,
            "fixed_frequency" => self.fixed_frequency = parse_opt(v, parse_real)?,
            "validation_samples" => self.validation_samples = parse_num(v)?,
            "seed" => self.seed = parse_num(v)?,
            "train_seed" => self.train_seed = parse_num(v)?,
            "eval_seed" => self.eval_seed = parse_num(v)?,
            "run_id" => {
                if v.is_empty() || v.contains(['/', '\\']) {
                    return Err(format!(
                        "run_id must be a non-empty name without path separators, got '{v}'"
                    ));
                }
                self.run_id = v.to_string()
            }
            "dataset" => self.dataset = PathBuf::from(v),
            "kernel_cache" => self.kernel_cache = opt_path(v),
            "train_dir" => self.train_dir = opt_path(v),
            "reports_dir" => self.reports_dir = PathBuf::from(v),
            "resume" => self.resume = parse_bool(v)?,
            "checkpoint" => self.checkpoint = opt_path(v),
            "angle_checkpoint" => self.angle_checkpoint = opt_path(v),
            "frequency_checkpoint" => self.frequency_checkpoint = opt_path(v),
            "strategies" => {
                self.strategies = parse_list::<String>(v)?
                    .iter()
                    .map(|s| parse_with(s))
                    .collect::<std::result::Result<_, _>>()?
            }
            "eval_samples" => self.eval_samples = parse_num(v)?,
            "sample_index" => self.sample_index = parse_num(v)?,
            "strategy" => self.strategy = parse_with(v)?,
            "threads" => self.threads = parse_num(v)?,
            _ => return Err(format!("unknown key '{key}'")),
        }
        Ok(())
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = RunConfig::default();
        let mut lines: HashMap<String, usize> = HashMap::new();
        for (i, raw) in text.lines().enumerate() {
            let line_no = i + 1;
            let line = raw.split('#').next().unwrap().trim();
            if line.is_empty() {
                continue;
            }
            let err = |message: String| Error::Config {
                line: line_no,
                message,
            };
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| err(format!("expected 'key = value', got '{line}'")))?;
            let (key, value) = (key.trim(), value.trim());
            if let Some(prev) = lines.insert(key.to_string(), line_no) {
                return Err(err(format!("key '{key}' already set on line {prev}")));
            }
            cfg.set(key, value).map_err(err)?;
        }
        cfg.validate(&lines)?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::parse(&std::fs::read_to_string(path)?)
    }

    fn validate(&self, lines: &HashMap<String, usize>) -> Result<()> {
        let fail = |key: &str, message: String| Error::Config {
            line: lines.get(key).copied().unwrap_or(0),
            message,
        };
        if self.grid < crate::domain::MIN_GRID {
            return Err(fail(
                "grid",
                format!("grid must be at least {}", crate::domain::MIN_GRID),
            ));
        }
        let cells = self.domain_cells();
        if cells > MAX_KERNEL_CELLS {
            return Err(fail(
                "grid",
                format!("{cells} cells exceed the kernel limit of {MAX_KERNEL_CELLS}"),
            ));
        }
        if self.sensors < 2 || self.sensors > 360 {
            return Err(fail("sensors", "sensors must lie in 2..=360".into()));
        }
        if self.frequencies.len() != 4 {
            return Err(fail(
                "frequencies",
                format!(
                    "the frequency menu needs exactly 4 entries, got {}",
                    self.frequencies.len()
                ),
            ));
        }
        if self.frequencies.iter().any(|&w| w <= 0.0)
            || self.frequencies.windows(2).any(|w| w[1] <= w[0])
        {
            return Err(fail(
                "frequencies",
                "frequencies must be positive and strictly increasing".into(),
            ));
        }
        if !(2..=3).contains(&self.order) {
            return Err(fail(
                "order",
                format!("order must be 2 or 3 for experiments, got {}", self.order),
            ));
        }
        if !(self.target_ratio > 0.0 && self.target_ratio < 1.0) {
            return Err(fail(
                "target_ratio",
                "target_ratio must lie in (0, 1)".into(),
            ));
        }
        if self.calib_omega.is_some_and(|w| w <= 0.0) {
            return Err(fail("calib_omega", "calib_omega must be positive".into()));
        }
        if self.n_train == 0 || self.n_test == 0 {
            return Err(fail(
                if self.n_train == 0 {
                    "n_train"
                } else {
                    "n_test"
                },
                "dataset splits must be non-empty".into(),
            ));
        }
        if self.sensor_standoff <= 0.0 {
            return Err(fail(
                "sensor_standoff",
                "sensor_standoff must be positive".into(),
            ));
        }
        if self.lambda < 0.0 || self.smoothing_eps <= 0.0 {
            return Err(fail(
                if self.lambda < 0.0 {
                    "lambda"
                } else {
                    "smoothing_eps"
                },
                "lambda must be >= 0 and smoothing_eps > 0".into(),
            ));
        }
        if self.inner_iters == 0 || self.final_iters == 0 || self.lbfgs_memory == 0 {
            return Err(fail(
                "inner_iters",
                "L-BFGS iteration counts and memory must be positive".into(),
            ));
        }
        if let Some(w) = self.fixed_frequency {
            if !self.frequencies.contains(&w) {
                return Err(fail(
                    "fixed_frequency",
                    format!("fixed_frequency {w} is not in the menu"),
                ));
            }
        }
        let n = &self.net;
        if n.feature_out == 0
            || n.gru_hidden == 0
            || n.gru_layers == 0
            || [
                &n.feature_hidden,
                &n.angle_hidden,
                &n.freq_hidden,
                &n.value_hidden,
            ]
            .iter()
            .any(|l| l.contains(&0))
        {
            return Err(fail("gru_hidden", "network widths must be positive".into()));
        }
        if let Err(e) = self.train_config(TrainMode::Both).validate() {
            return Err(fail("clip", e.to_string()));
        }
        if self.strategies.is_empty() {
            return Err(fail(
                "strategies",
                "at least one strategy is required".into(),
            ));
        }
        if self.eval_samples == 0 || self.eval_samples > self.n_test {
            return Err(fail(
                "eval_samples",
                format!("eval_samples must lie in 1..={}", self.n_test),
            ));
        }
        if self.validation_samples == 0 || self.validation_samples > self.n_train {
            return Err(fail(
                "validation_samples",
                format!("validation_samples must lie in 1..={}", self.n_train),
            ));
        }
        if self.sample_index >= self.n_test {
            return Err(fail(
                "sample_index",
                format!("sample_index must be below n_test = {}", self.n_test),
            ));
        }
        Ok(())
    }

    fn domain_cells(&self) -> usize {
        match self.geometry {
            Geometry::FarField => self.grid * self.grid,
            Geometry::Seismic => 3 * self.grid * self.grid,
        }
    }

    /// Effective configuration, one `key = value` line per key.
    pub fn to_text(&self) -> String {
        let n = &self.net;
        let peak = match self.psnr_peak {
            PsnrPeak::TrueMax => "true-max".to_string(),
            PsnrPeak::Fixed(v) => v.to_string(),
        };
        let strategies: Vec<&str> = self.strategies.iter().map(|s| s.as_str()).collect();
        let entries: Vec<(&str, String)> = vec![
            ("geometry", self.geometry.to_string()),
            ("grid", self.grid.to_string()),
            ("sensors", self.sensors.to_string()),
            ("frequencies", join(&self.frequencies)),
            ("order", self.order.to_string()),
            ("generator", self.generator.to_string()),
            ("n_train", self.n_train.to_string()),
            ("n_test", self.n_test.to_string()),
            ("target_ratio", self.target_ratio.to_string()),
            ("calib_omega", show_opt(&self.calib_omega, "auto")),
            ("diagonal", self.diagonal.as_str().to_string()),
            ("sensor_standoff", self.sensor_standoff.to_string()),
            ("lambda", self.lambda.to_string()),
            ("smoothing_eps", self.smoothing_eps.to_string()),
            ("inner_iters", self.inner_iters.to_string()),
            ("final_iters", self.final_iters.to_string()),
            ("psnr_peak", peak),
            ("lbfgs_memory", self.lbfgs_memory.to_string()),
            ("feature_hidden", join(&n.feature_hidden)),
            ("feature_out", n.feature_out.to_string()),
            ("gru_hidden", n.gru_hidden.to_string()),
            ("gru_layers", n.gru_layers.to_string()),
            ("angle_hidden", join(&n.angle_hidden)),
            ("freq_hidden", join(&n.freq_hidden)),
            ("value_hidden", join(&n.value_hidden)),
            ("iterations", self.iterations.to_string()),
            ("episodes_per_iter", self.episodes_per_iter.to_string()),
            ("minibatch_episodes", self.minibatch_episodes.to_string()),
            ("updates_per_iter", self.updates_per_iter.to_string()),
            ("clip", self.clip.to_string()),
            ("lr", self.lr.to_string()),
            ("beta1", self.beta1.to_string()),
            ("beta2", self.beta2.to_string()),
            ("adam_eps", self.adam_eps.to_string()),
            ("gamma", self.gamma.to_string()),
            ("entropy_coef", self.entropy_coef.to_string()),
            ("max_grad_norm", show_opt(&self.max_grad_norm, "none")),
            ("checkpoint_every", self.checkpoint_every.to_string()),
            ("train_mode", self.train_mode.as_str().to_string()),
            ("fixed_frequency", show_opt(&self.fixed_frequency, "auto")),
            ("validation_samples", self.validation_samples.to_string()),
            ("seed", self.seed.to_string()),
            ("train_seed", self.train_seed.to_string()),
            ("eval_seed", self.eval_seed.to_string()),
            ("run_id", self.run_id.clone()),
            ("dataset", self.dataset.display().to_string()),
            ("kernel_cache", show_path(&self.kernel_cache)),
            ("train_dir", show_path(&self.train_dir)),
            ("reports_dir", self.reports_dir.display().to_string()),
            ("resume", self.resume.to_string()),
            ("checkpoint", show_path(&self.checkpoint)),
            ("angle_checkpoint", show_path(&self.angle_checkpoint)),
            (
                "frequency_checkpoint",
                show_path(&self.frequency_checkpoint),
            ),
            ("strategies", strategies.join(",")),
            ("eval_samples", self.eval_samples.to_string()),
            ("sample_index", self.sample_index.to_string()),
            ("strategy", self.strategy.to_string()),
            ("threads", self.threads.to_string()),
        ];
        entries
            .into_iter()
            .map(|(k, v)| format!("{k} = {v}\n"))
            .collect()
    }

    pub fn domain(&self) -> Result<DomainSpec> {
        make_domain(self.geometry, self.grid)
    }

    pub fn forward_options(&self) -> ForwardOptions {
        ForwardOptions {
            diagonal: self.diagonal,
            sensor_standoff: self.sensor_standoff,
        }
    }

    pub fn calibration_omega(&self) -> f64 {
        self.calib_omega
            .unwrap_or_else(|| *self.frequencies.last().unwrap())
    }

    pub fn dataset_spec(&self) -> DatasetSpec {
        DatasetSpec {
            generator: self.generator,
            n_train: self.n_train,
            n_test: self.n_test,
            omega_ref: self.calibration_omega(),
            order: self.order,
            target_ratio: self.target_ratio,
            seed: self.seed,
        }
    }

    pub fn env_config(&self) -> Result<EnvConfig> {
        let mut env = EnvConfig::new(
            self.domain()?,
            self.sensors,
            self.frequencies.clone(),
            self.order,
        );
        env.lambda = self.lambda;
        env.eps = self.smoothing_eps;
        env.inner_iters = self.inner_iters;
        env.final_iters = self.final_iters;
        env.psnr_peak = self.psnr_peak;
        env.lbfgs = LbfgsOptions {
            memory: self.lbfgs_memory,
            ..LbfgsOptions::default()
        };
        Ok(env)
    }

    pub fn train_config(&self, mode: TrainMode) -> TrainConfig {
        TrainConfig {
            iterations: self.iterations,
            episodes_per_iter: self.episodes_per_iter,
            minibatch_episodes: self.minibatch_episodes,
            updates_per_iter: self.updates_per_iter,
            clip: self.clip,
            adam: AdamConfig {
                lr: self.lr,
                beta1: self.beta1,
                beta2: self.beta2,
                eps: self.adam_eps,
            },
            gamma: self.gamma,
            seed: self.train_seed,
            entropy_coef: self.entropy_coef,
            max_grad_norm: self.max_grad_norm,
            mode,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn line_of(e: Error) -> usize {
        match e {
            Error::Config { line, .. } => line,
            other => panic!("unexpected error {other}"),
        }
    }

    #[test]
    fn empty_text_gives_defaults() {
        assert_eq!(
            RunConfig::parse("# nothing\n\n").unwrap(),
            RunConfig::default()
        );
    }

    #[test]
    fn effective_config_round_trips() {
        let text = "grid = 16\nsensors = 6 # comment\nfrequencies = 4, 8, 12, 16\ntarget_ratio = 1/6\nmax_grad_norm = 0.5\nstrategies = learn-both,uniform-angle\ncheckpoint = a/b.bin\n";
        let cfg = RunConfig::parse(text).unwrap();
        assert_eq!(cfg.grid, 16);
        assert_eq!(cfg.frequencies, vec![4.0, 8.0, 12.0, 16.0]);
        assert_eq!(cfg.target_ratio, 1.0 / 6.0);
        assert_eq!(RunConfig::parse(&cfg.to_text()).unwrap(), cfg);
        assert_eq!(
            RunConfig::parse(&RunConfig::default().to_text()).unwrap(),
            RunConfig::default()
        );
    }

    #[test]
    fn errors_carry_line_numbers() {
        assert_eq!(
            line_of(RunConfig::parse("grid = 8\n\nbogus = 1\n").unwrap_err()),
            3
        );
        assert_eq!(line_of(RunConfig::parse("grid = eight\n").unwrap_err()), 1);
        assert_eq!(
            line_of(RunConfig::parse("seed = 1\norder = 1\n").unwrap_err()),
            2
        );
        assert_eq!(
            line_of(RunConfig::parse("grid = 8\ngrid = 9\n").unwrap_err()),
            2
        );
        assert_eq!(line_of(RunConfig::parse("just words\n").unwrap_err()), 1);
        assert_eq!(
            line_of(RunConfig::parse("\nfrequencies = 1,2,3\n").unwrap_err()),
            2
        );
        assert_eq!(
            line_of(RunConfig::parse("fixed_frequency = 5\n").unwrap_err()),
            1
        );
    }

    #[test]
    fn derived_settings() {
        let cfg = RunConfig::parse("grid = 8\nfrequencies = 2,4,6,8\n").unwrap();
        assert_eq!(cfg.calibration_omega(), 8.0);
        let env = cfg.env_config().unwrap();
        assert_eq!(env.observation_len(), 2 * 10 + 361);
        assert_eq!(cfg.train_config(TrainMode::Both).adam.lr, 4e-4);
    }
}
