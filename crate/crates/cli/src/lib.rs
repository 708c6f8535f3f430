//! Subcommands of the `scatter-rl` binary, callable from tests.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use anyhow::Context;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use scatter_rl_core::dataset::{
    build_dataset, load_dataset, save_dataset, CalibrationProbe, ScattererDataset,
};
use scatter_rl_core::env::SensingEnv;
use scatter_rl_core::eval::{
    eval_rng, evaluate, export_report, pick_fixed_frequency, run_strategy, write_greymap, Strategy,
    StrategyKind,
};
use scatter_rl_core::forward::FrequencyBank;
use scatter_rl_core::ppo::{load_policy, MetricsRow, TrainMode, Trainer, METRICS_HEADER};
use scatter_rl_core::{Error, PolicyNet, RunConfig, ValueNet};

/// Environment variable overriding the `threads` key.
pub const THREADS_ENV: &str = "SCATTER_RL_THREADS";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Command {
    GenData,
    Train,
    Eval,
    Reconstruct,
}

/// Failure of a command, split by exit code.
#[derive(Debug)]
pub enum CliError {
    /// Bad configuration or arguments (exit code 1).
    Validation(anyhow::Error),
    /// Anything that went wrong while running (exit code 2).
    Runtime(anyhow::Error),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Validation(_) => 1,
            CliError::Runtime(_) => 2,
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Validation(e) => write!(f, "invalid configuration: {e:#}"),
            CliError::Runtime(e) => write!(f, "{e:#}"),
        }
    }
}

impl From<anyhow::Error> for CliError {
    fn from(e: anyhow::Error) -> Self {
        match e.downcast_ref::<Error>() {
            Some(Error::Config { .. } | Error::InvalidArgument(_) | Error::Mismatch(_)) => {
                CliError::Validation(e)
            }
            _ => CliError::Runtime(e),
        }
    }
}

fn validation(msg: impl Into<String>) -> CliError {
    CliError::Validation(anyhow::anyhow!(msg.into()))
}

pub type CliResult<T> = Result<T, CliError>;

pub fn load_config(path: &Path) -> CliResult<RunConfig> {
    RunConfig::load(path).map_err(|e| match e {
        Error::Io(io) => CliError::Validation(
            anyhow::Error::new(io).context(format!("reading {}", path.display())),
        ),
        other => CliError::Validation(
            anyhow::Error::new(other).context(format!("in {}", path.display())),
        ),
    })
}

/// Thread count from the environment override, else the config (0 = all cores).
pub fn thread_count(cfg: &RunConfig) -> CliResult<usize> {
    match std::env::var(THREADS_ENV) {
        Ok(v) => v.trim().parse().map_err(|_| {
            validation(format!(
                "{THREADS_ENV} must be a non-negative integer, got '{v}'"
            ))
        }),
        Err(_) => Ok(cfg.threads),
    }
}

/// Runs `command` on a dedicated thread pool, writing progress to `log`.
pub fn run(
    command: Command,
    cfg: &RunConfig,
    out: Option<&Path>,
    log: &mut (dyn Write + Send),
) -> CliResult<PathBuf> {
    let threads = thread_count(cfg)?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| CliError::Runtime(e.into()))?;
    pool.install(|| match command {
        Command::GenData => cmd_gen_data(cfg, out, log),
        Command::Train => cmd_train(cfg, out, log),
        Command::Eval => cmd_eval(cfg, out, log),
        Command::Reconstruct => cmd_reconstruct(cfg, out, log),
    })
}

fn runtime<T>(r: anyhow::Result<T>) -> CliResult<T> {
    r.map_err(CliError::from)
}

fn echo_config(cfg: &RunConfig, dir: &Path) -> anyhow::Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    fs::write(dir.join("config.txt"), cfg.to_text())?;
    Ok(())
}

pub fn dataset_path(cfg: &RunConfig, out: Option<&Path>) -> PathBuf {
    match out {
        Some(dir) => dir.join("dataset.bin"),
        None => cfg.dataset.clone(),
    }
}

pub fn train_dir(cfg: &RunConfig, out: Option<&Path>) -> PathBuf {
    out.map(Path::to_path_buf)
        .or_else(|| cfg.train_dir.clone())
        .unwrap_or_else(|| PathBuf::from("runs").join(&cfg.run_id))
}

pub fn report_dir(cfg: &RunConfig, out: Option<&Path>) -> PathBuf {
    out.map(Path::to_path_buf)
        .unwrap_or_else(|| cfg.reports_dir.join(&cfg.run_id))
}

pub fn cmd_gen_data(
    cfg: &RunConfig,
    out: Option<&Path>,
    log: &mut dyn Write,
) -> CliResult<PathBuf> {
    let path = dataset_path(cfg, out);
    runtime((|| {
        let domain = cfg.domain()?;
        let opts = cfg.forward_options();
        let spec = cfg.dataset_spec();
        let dataset = build_dataset(&domain, &spec, &opts)?;
        let probe = CalibrationProbe::new(&domain, spec.omega_ref, &opts)?;
        let ratios = dataset
            .train
            .iter()
            .chain(&dataset.test)
            .map(|f| probe.term_ratio(&f.values))
            .collect::<scatter_rl_core::Result<Vec<f64>>>()?;
        let mean = ratios.iter().sum::<f64>() / ratios.len() as f64;
        let (lo, hi) = ratios
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &r| {
                (a.min(r), b.max(r))
            });
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            echo_config(cfg, dir)?;
        }
        save_dataset(&dataset, &path)?;
        writeln!(
            log,
            "wrote {} ({} train / {} test scatterers) to {}",
            dataset.generator_tag,
            dataset.train.len(),
            dataset.test.len(),
            path.display()
        )?;
        writeln!(
            log,
            "second/first Born-term ratio at omega {}: mean {mean:.6}, min {lo:.6}, max {hi:.6}",
            spec.omega_ref
        )?;
        Ok(path.clone())
    })())
}

fn load_matching_dataset(cfg: &RunConfig) -> CliResult<ScattererDataset> {
    let dataset = load_dataset(&cfg.dataset)
        .with_context(|| format!("loading dataset {}", cfg.dataset.display()))
        .map_err(CliError::Runtime)?;
    let domain = cfg.domain().map_err(|e| CliError::Validation(e.into()))?;
    if dataset.domain != domain {
        return Err(validation(format!(
            "dataset {} was generated for a {} {}x{} grid, config asks for {} {}x{}",
            cfg.dataset.display(),
            dataset.domain.geometry,
            dataset.domain.rows,
            dataset.domain.cols,
            domain.geometry,
            domain.rows,
            domain.cols
        )));
    }
    Ok(dataset)
}

fn build_env(cfg: &RunConfig) -> CliResult<SensingEnv> {
    runtime((|| {
        let env_cfg = cfg.env_config()?;
        let opts = cfg.forward_options();
        let bank = match &cfg.kernel_cache {
            Some(dir) => {
                fs::create_dir_all(dir)?;
                FrequencyBank::build_cached(&env_cfg.domain, &cfg.frequencies, &opts, dir)?
            }
            None => FrequencyBank::build(&env_cfg.domain, &cfg.frequencies, &opts)?,
        };
        Ok(SensingEnv::new(env_cfg, Arc::new(bank))?)
    })())
}

/// Menu index of the fixed frequency: configured, or the best uniform-angle frequency on validation data.
pub fn resolve_fixed_frequency(
    cfg: &RunConfig,
    env: &SensingEnv,
    dataset: &ScattererDataset,
    log: &mut dyn Write,
) -> CliResult<usize> {
    if let Some(w) = cfg.fixed_frequency {
        return env
            .bank
            .index_of(w)
            .map_err(|e| CliError::Validation(e.into()));
    }
    let candidates: Vec<usize> = (0..cfg.frequencies.len()).collect();
    let (best, means) = runtime(
        pick_fixed_frequency(env, &dataset.train[..cfg.validation_samples], &candidates)
            .map_err(Into::into),
    )?;
    runtime((|| {
        for (w, m) in cfg.frequencies.iter().zip(&means) {
            writeln!(log, "uniform-angle validation MSE at omega {w}: {m:e}")?;
        }
        writeln!(log, "fixed frequency: {}", cfg.frequencies[best])?;
        Ok(())
    })())?;
    Ok(best)
}

fn fresh_nets(cfg: &RunConfig, obs_len: usize) -> CliResult<(PolicyNet, ValueNet)> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.train_seed);
    let p = PolicyNet::new(&cfg.net, obs_len, cfg.frequencies.len(), &mut rng)
        .map_err(|e| CliError::Validation(e.into()))?;
    let v =
        ValueNet::new(&cfg.net, obs_len, &mut rng).map_err(|e| CliError::Validation(e.into()))?;
    Ok((p, v))
}

fn write_metrics(dir: &Path, rows: &[MetricsRow]) -> anyhow::Result<()> {
    let mut metrics = String::from(METRICS_HEADER);
    metrics.push('\n');
    let mut timing = String::from("iteration,wall_time\n");
    for r in rows {
        metrics.push_str(&r.csv());
        metrics.push('\n');
        timing.push_str(&format!("{},{}\n", r.iteration, r.wall_time));
    }
    fs::write(dir.join("metrics.csv"), metrics)?;
    fs::write(dir.join("timing.csv"), timing)?;
    Ok(())
}

fn read_metrics(dir: &Path, upto: usize) -> anyhow::Result<Vec<MetricsRow>> {
    let path = dir.join("metrics.csv");
    if !path.exists() {
        return Ok(Vec::new());
    }
    let text = fs::read_to_string(&path)?;
    let timing = fs::read_to_string(dir.join("timing.csv")).unwrap_or_default();
    let times: Vec<f64> = timing
        .lines()
        .skip(1)
        .filter_map(|l| l.split(',').nth(1)?.parse().ok())
        .collect();
    let mut rows = Vec::new();
    for (k, line) in text.lines().skip(1).enumerate() {
        let f: Vec<&str> = line.split(',').collect();
        anyhow::ensure!(f.len() == 4, "malformed metrics line '{line}'");
        let row = MetricsRow {
            iteration: f[0].parse()?,
            mean_return: f[1].parse()?,
            l_clip: f[2].parse()?,
            l_value: f[3].parse()?,
            wall_time: times.get(k).copied().unwrap_or(0.0),
        };
        if row.iteration <= upto {
            rows.push(row);
        }
    }
    Ok(rows)
}

pub fn cmd_train(cfg: &RunConfig, out: Option<&Path>, log: &mut dyn Write) -> CliResult<PathBuf> {
    let dir = train_dir(cfg, out);
    let dataset = load_matching_dataset(cfg)?;
    let env = build_env(cfg)?;
    let mode = match cfg.train_mode {
        scatter_rl_core::config::TrainModeKey::Both => TrainMode::Both,
        scatter_rl_core::config::TrainModeKey::FrequencyOnly => TrainMode::FrequencyOnly,
        scatter_rl_core::config::TrainModeKey::AngleOnly => TrainMode::AngleOnly {
            freq_index: resolve_fixed_frequency(cfg, &env, &dataset, log)?,
        },
    };
    let train_cfg = cfg.train_config(mode);
    let (policy, value) = fresh_nets(cfg, env.config.observation_len())?;
    let latest = dir.join("checkpoint.bin");
    let mut trainer = if cfg.resume && latest.exists() {
        let t = Trainer::load(&latest, policy, value, train_cfg)
            .map_err(|e| CliError::from(anyhow::Error::new(e)))?;
        runtime(
            writeln!(
                log,
                "resuming from {} at iteration {}",
                latest.display(),
                t.iteration
            )
            .map_err(Into::into),
        )?;
        t
    } else {
        Trainer::new(policy, value, train_cfg).map_err(|e| CliError::Validation(e.into()))?
    };
    runtime((|| {
        echo_config(cfg, &dir)?;
        let mut rows = if trainer.iteration > 0 {
            read_metrics(&dir, trainer.iteration)?
        } else {
            Vec::new()
        };
        write_metrics(&dir, &rows)?;
        trainer.save(&latest)?;
        let task = scatter_rl_core::env::SensingTask {
            env: &env,
            samples: &dataset.train,
        };
        trainer.train(&task, |t, row| {
            rows.push(*row);
            let wrote = (|| -> anyhow::Result<()> {
                write_metrics(&dir, &rows)?;
                writeln!(
                    log,
                    "iteration {:>5}  mean return {:>10.4}  L_clip {:>11.4e}  L_value {:>11.4e}  {:.1}s",
                    row.iteration, row.mean_return, row.l_clip, row.l_value, row.wall_time
                )?;
                if cfg.checkpoint_every > 0 && row.iteration % cfg.checkpoint_every == 0 {
                    t.save(&dir.join(format!("checkpoint-{:06}.bin", row.iteration)))?;
                    t.save(&latest)?;
                }
                Ok(())
            })();
            wrote.map_err(|e| Error::Io(std::io::Error::other(e.to_string())))
        })?;
        trainer.save(&latest)?;
        writeln!(log, "saved {}", latest.display())?;
        Ok(latest.clone())
    })())
}

fn load_policy_from(
    cfg: &RunConfig,
    path: Option<&PathBuf>,
    key: &str,
    kind: StrategyKind,
) -> CliResult<PolicyNet> {
    let path = path.ok_or_else(|| validation(format!("strategy {kind} needs the '{key}' key")))?;
    let (mut policy, _) = fresh_nets(
        cfg,
        cfg.env_config()
            .map_err(|e| CliError::Validation(e.into()))?
            .observation_len(),
    )?;
    load_policy(path, &mut policy).map_err(|e| match e {
        Error::Io(io) => {
            CliError::Runtime(anyhow::Error::new(io).context(format!("reading {}", path.display())))
        }
        other => CliError::Validation(
            anyhow::Error::new(other).context(format!("checkpoint {}", path.display())),
        ),
    })?;
    Ok(policy)
}

/// Policies referenced by the given strategies, keyed by strategy.
struct Policies {
    both: Option<PolicyNet>,
    angle: Option<PolicyNet>,
    frequency: Option<PolicyNet>,
}

impl Policies {
    fn load(cfg: &RunConfig, kinds: &[StrategyKind]) -> CliResult<Self> {
        let want = |k| kinds.contains(&k);
        Ok(Policies {
            both: want(StrategyKind::LearnBoth)
                .then(|| {
                    load_policy_from(
                        cfg,
                        cfg.checkpoint.as_ref(),
                        "checkpoint",
                        StrategyKind::LearnBoth,
                    )
                })
                .transpose()?,
            angle: want(StrategyKind::LearnAngle)
                .then(|| {
                    load_policy_from(
                        cfg,
                        cfg.angle_checkpoint.as_ref(),
                        "angle_checkpoint",
                        StrategyKind::LearnAngle,
                    )
                })
                .transpose()?,
            frequency: want(StrategyKind::LearnFrequency)
                .then(|| {
                    load_policy_from(
                        cfg,
                        cfg.frequency_checkpoint.as_ref(),
                        "frequency_checkpoint",
                        StrategyKind::LearnFrequency,
                    )
                })
                .transpose()?,
        })
    }

    fn strategy(&self, kind: StrategyKind, fixed: Option<usize>) -> Strategy<'_> {
        match kind {
            StrategyKind::LearnBoth => Strategy::LearnBoth(self.both.as_ref().unwrap()),
            StrategyKind::RandomAngle => Strategy::RandomAngle {
                freq_index: fixed.unwrap(),
            },
            StrategyKind::UniformAngle => Strategy::UniformAngle {
                freq_index: fixed.unwrap(),
            },
            StrategyKind::LearnAngle => {
                Strategy::LearnAngle(self.angle.as_ref().unwrap(), fixed.unwrap())
            }
            StrategyKind::LearnFrequency => {
                Strategy::LearnFrequency(self.frequency.as_ref().unwrap())
            }
        }
    }
}

pub fn cmd_eval(cfg: &RunConfig, out: Option<&Path>, log: &mut dyn Write) -> CliResult<PathBuf> {
    let dir = report_dir(cfg, out);
    let policies = Policies::load(cfg, &cfg.strategies)?;
    let dataset = load_matching_dataset(cfg)?;
    if cfg.eval_samples > dataset.test.len() {
        return Err(validation(format!(
            "eval_samples {} exceeds the {} test scatterers",
            cfg.eval_samples,
            dataset.test.len()
        )));
    }
    let env = build_env(cfg)?;
    let fixed = if cfg.strategies.iter().any(|k| k.needs_fixed_frequency()) {
        Some(resolve_fixed_frequency(cfg, &env, &dataset, log)?)
    } else {
        None
    };
    let strategies: Vec<Strategy<'_>> = cfg
        .strategies
        .iter()
        .map(|&k| policies.strategy(k, fixed))
        .collect();
    runtime((|| {
        let report = evaluate(
            &strategies,
            &env,
            &dataset.test,
            cfg.eval_samples,
            cfg.eval_seed,
        )?;
        echo_config(cfg, &dir)?;
        export_report(&report, &dir)?;
        writeln!(
            log,
            "{:<16} {:>12} {:>12} {:>10} {:>10}",
            "strategy", "mse_mean", "mse_std", "psnr_mean", "psnr_std"
        )?;
        for r in &report.rows {
            writeln!(
                log,
                "{:<16} {:>12.4e} {:>12.4e} {:>10.3} {:>10.3}",
                r.strategy.as_str(),
                r.mse.mean,
                r.mse.std,
                r.psnr.mean,
                r.psnr.std
            )?;
        }
        writeln!(log, "report written to {}", dir.display())?;
        Ok(dir.clone())
    })())
}

pub fn cmd_reconstruct(
    cfg: &RunConfig,
    out: Option<&Path>,
    log: &mut dyn Write,
) -> CliResult<PathBuf> {
    let kind = cfg.strategy;
    let dir = out.map(Path::to_path_buf).unwrap_or_else(|| {
        report_dir(cfg, None)
            .join("reconstruct")
            .join(format!("{kind}-{:04}", cfg.sample_index))
    });
    let policies = Policies::load(cfg, &[kind])?;
    let dataset = load_matching_dataset(cfg)?;
    let truth = dataset.test.get(cfg.sample_index).ok_or_else(|| {
        validation(format!(
            "sample_index {} is out of range for {} test scatterers",
            cfg.sample_index,
            dataset.test.len()
        ))
    })?;
    let env = build_env(cfg)?;
    let fixed = if kind.needs_fixed_frequency() {
        Some(resolve_fixed_frequency(cfg, &env, &dataset, log)?)
    } else {
        None
    };
    let strategy = policies.strategy(kind, fixed);
    runtime((|| {
        let run = run_strategy(
            &strategy,
            &env,
            truth,
            &mut eval_rng(cfg.eval_seed, cfg.sample_index),
        )?;
        echo_config(cfg, &dir)?;
        let peak = env.config.psnr_peak.value(&truth.values);
        write_greymap(&dir.join("truth.pgm"), truth, peak)?;
        write_greymap(&dir.join("reconstruction.pgm"), &run.result.field, peak)?;
        let angles: Vec<String> = run.actions.iter().map(|a| a.angle.to_string()).collect();
        let freqs: Vec<String> = run
            .actions
            .iter()
            .map(|a| cfg.frequencies[a.freq_index].to_string())
            .collect();
        writeln!(log, "strategy {kind}, test sample {}", cfg.sample_index)?;
        writeln!(log, "angles {}", angles.join(" "))?;
        writeln!(log, "frequencies {}", freqs.join(" "))?;
        writeln!(log, "mse {}", run.result.mse)?;
        writeln!(log, "psnr {}", run.result.psnr)?;
        Ok(dir.clone())
    })())
}
