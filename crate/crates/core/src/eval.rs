//! Comparison strategies, greedy test episodes and report export.

use std::fmt;
use std::fs;
use std::io::Write;
use std::path::Path;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::agent::{ActMode, Forced, PolicyNet};
use crate::domain::ScattererField;
use crate::env::{legal_mask, FinalReconstruction, SensingAction, SensingEnv};
use crate::error::{invalid, Error, Result};
use crate::forward::NUM_ANGLES;
use crate::recon::psnr_from_mse;

/// The five sensing strategies.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum StrategyKind {
    LearnBoth,
    RandomAngle,
    UniformAngle,
    LearnAngle,
    LearnFrequency,
}

impl StrategyKind {
    pub const ALL: [StrategyKind; 5] = [
        StrategyKind::LearnBoth,
        StrategyKind::RandomAngle,
        StrategyKind::UniformAngle,
        StrategyKind::LearnAngle,
        StrategyKind::LearnFrequency,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            StrategyKind::LearnBoth => "learn-both",
            StrategyKind::RandomAngle => "random-angle",
            StrategyKind::UniformAngle => "uniform-angle",
            StrategyKind::LearnAngle => "learn-angle",
            StrategyKind::LearnFrequency => "learn-frequency",
        }
    }

    pub fn needs_policy(self) -> bool {
        matches!(
            self,
            StrategyKind::LearnBoth | StrategyKind::LearnAngle | StrategyKind::LearnFrequency
        )
    }

    pub fn needs_fixed_frequency(self) -> bool {
        matches!(
            self,
            StrategyKind::RandomAngle | StrategyKind::UniformAngle | StrategyKind::LearnAngle
        )
    }
}

impl fmt::Display for StrategyKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for StrategyKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        StrategyKind::ALL
            .into_iter()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| invalid(format!("unknown strategy '{s}'")))
    }
}

/// A strategy with the policy and fixed frequency index it needs.
#[derive(Debug, Clone, Copy)]
pub enum Strategy<'a> {
    LearnBoth(&'a PolicyNet),
    RandomAngle { freq_index: usize },
    UniformAngle { freq_index: usize },
    LearnAngle(&'a PolicyNet, usize),
    LearnFrequency(&'a PolicyNet),
}

impl Strategy<'_> {
    pub fn kind(&self) -> StrategyKind {
        match self {
            Strategy::LearnBoth(_) => StrategyKind::LearnBoth,
            Strategy::RandomAngle { .. } => StrategyKind::RandomAngle,
            Strategy::UniformAngle { .. } => StrategyKind::UniformAngle,
            Strategy::LearnAngle(..) => StrategyKind::LearnAngle,
            Strategy::LearnFrequency(_) => StrategyKind::LearnFrequency,
        }
    }

    fn policy(&self) -> Option<&PolicyNet> {
        match *self {
            Strategy::LearnBoth(p) | Strategy::LearnAngle(p, _) | Strategy::LearnFrequency(p) => {
                Some(p)
            }
            _ => None,
        }
    }
}

/// Angles `round(360 k / T)` for `k = 0..T`.
pub fn uniform_angles(horizon: usize) -> Vec<usize> {
    (0..horizon)
        .map(|k| ((NUM_ANGLES * k) as f64 / horizon as f64).round() as usize % NUM_ANGLES)
        .collect()
}

/// RNG for evaluating test scatterer `test_index`.
pub fn eval_rng(seed: u64, test_index: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream((3u64 << 32) | test_index as u64);
    rng
}

#[derive(Debug, Clone, PartialEq)]
pub struct StrategyRun {
    pub actions: Vec<SensingAction>,
    pub rewards: Vec<f64>,
    /// Objective before and after each step's inner solve.
    pub step_objectives: Vec<(f64, f64)>,
    /// PSNR of the episode reconstruction before the final solve.
    pub episode_psnr: f64,
    pub initial_psnr: f64,
    pub result: FinalReconstruction,
}

pub fn run_strategy(
    strategy: &Strategy<'_>,
    env: &SensingEnv,
    truth: &ScattererField,
    rng: &mut ChaCha8Rng,
) -> Result<StrategyRun> {
    let horizon = env.config.horizon;
    let num_freqs = env.config.menu.len();
    if let Some(p) = strategy.policy() {
        if p.obs_len != env.config.observation_len() || p.num_freqs != num_freqs {
            return Err(Error::Mismatch(
                "checkpoint does not match the environment configuration".into(),
            ));
        }
    }
    if let Strategy::RandomAngle { freq_index }
    | Strategy::UniformAngle { freq_index }
    | Strategy::LearnAngle(_, freq_index) = *strategy
    {
        if freq_index >= num_freqs {
            return Err(invalid(format!(
                "fixed frequency index {freq_index} is not in the menu"
            )));
        }
    }
    let uniform = uniform_angles(horizon);
    let mut state = env.reset(truth)?;
    let initial_psnr = state.recon_psnr;
    let mut hidden = strategy.policy().map(PolicyNet::initial_hidden);
    let mut actions = Vec::with_capacity(horizon);
    let mut rewards = Vec::with_capacity(horizon);
    let mut step_objectives = Vec::with_capacity(horizon);
    for k in 0..horizon {
        let mask = legal_mask(&state);
        let random_angle = |rng: &mut ChaCha8Rng| {
            let legal: Vec<usize> = (0..NUM_ANGLES).filter(|&a| mask[a]).collect();
            *legal.choose(rng).expect("fewer sensors than angles")
        };
        let action = match *strategy {
            Strategy::RandomAngle { freq_index } => SensingAction {
                angle: random_angle(rng),
                freq_index,
            },
            Strategy::UniformAngle { freq_index } => SensingAction {
                angle: uniform[k],
                freq_index,
            },
            Strategy::LearnBoth(p) | Strategy::LearnAngle(p, _) | Strategy::LearnFrequency(p) => {
                let forced = match *strategy {
                    Strategy::LearnAngle(_, f) => Forced {
                        angle: None,
                        freq_index: Some(f),
                    },
                    Strategy::LearnFrequency(_) => Forced {
                        angle: Some(random_angle(rng)),
                        freq_index: None,
                    },
                    _ => Forced::default(),
                };
                let h = hidden.as_ref().unwrap();
                let out = p.act(h, &env.observe(&state), &mask, ActMode::Greedy, forced, rng)?;
                hidden = Some(out.hidden);
                out.action
            }
        };
        let out = env.step(&mut state, action)?;
        actions.push(action);
        rewards.push(out.reward);
        step_objectives.push((out.objective_before, out.objective_after));
    }
    let episode_psnr = state.recon_psnr;
    let result = env.final_reconstruct(&state)?;
    Ok(StrategyRun {
        actions,
        rewards,
        step_objectives,
        episode_psnr,
        initial_psnr,
        result,
    })
}

/// Frequency index (among `candidates`) with the lowest mean uniform-angle MSE over `samples`,
/// ties going to the lower frequency. Also returns the per-candidate means.
pub fn pick_fixed_frequency(
    env: &SensingEnv,
    samples: &[ScattererField],
    candidates: &[usize],
) -> Result<(usize, Vec<f64>)> {
    if candidates.is_empty() || samples.is_empty() {
        return Err(invalid(
            "need at least one candidate frequency and one validation sample",
        ));
    }
    let means = candidates
        .iter()
        .map(|&f| {
            let strategy = Strategy::UniformAngle { freq_index: f };
            let mses = samples
                .par_iter()
                .map(|s| {
                    Ok(run_strategy(&strategy, env, s, &mut eval_rng(0, 0))?
                        .result
                        .mse)
                })
                .collect::<Result<Vec<f64>>>()?;
            Ok(mses.iter().sum::<f64>() / mses.len() as f64)
        })
        .collect::<Result<Vec<f64>>>()?;
    let mut best = 0;
    for i in 1..candidates.len() {
        let (wi, wb) = (
            env.config.menu[candidates[i]],
            env.config.menu[candidates[best]],
        );
        if means[i] < means[best] || (means[i] == means[best] && wi < wb) {
            best = i;
        }
    }
    Ok((candidates[best], means))
}

/// Per-sample outcome of one strategy.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleRecord {
    pub strategy: StrategyKind,
    pub test_index: usize,
    pub mse: f64,
    pub psnr: f64,
    pub actions: Vec<SensingAction>,
    pub reconstruction: ScattererField,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Summary {
    pub mean: f64,
    /// Population variance and its square root.
    pub var: f64,
    pub std: f64,
}

impl Summary {
    pub fn of(values: &[f64]) -> Summary {
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
        Summary {
            mean,
            var,
            std: var.sqrt(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReportRow {
    pub strategy: StrategyKind,
    pub mse: Summary,
    pub psnr: Summary,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub rows: Vec<ReportRow>,
    pub samples: Vec<SampleRecord>,
    pub truths: Vec<(usize, ScattererField)>,
    /// Peak value used for PSNR and images, per evaluated test index.
    pub peaks: Vec<f64>,
    pub menu: Vec<f64>,
    pub seed: u64,
}

impl EvalReport {
    pub fn row(&self, kind: StrategyKind) -> Option<&ReportRow> {
        self.rows.iter().find(|r| r.strategy == kind)
    }
}

/// Test indices evaluated for `(n_samples, seed)`: a seeded draw without replacement.
pub fn eval_indices(test_len: usize, n_samples: usize, seed: u64) -> Result<Vec<usize>> {
    if n_samples == 0 || n_samples > test_len {
        return Err(invalid(format!(
            "cannot draw {n_samples} samples from a test set of {test_len}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(4u64 << 32);
    let mut idx = rand::seq::index::sample(&mut rng, test_len, n_samples).into_vec();
    idx.sort_unstable();
    Ok(idx)
}

/// Runs every strategy on the same `n_samples` test scatterers.
pub fn evaluate(
    strategies: &[Strategy<'_>],
    env: &SensingEnv,
    test: &[ScattererField],
    n_samples: usize,
    seed: u64,
) -> Result<EvalReport> {
    if strategies.is_empty() {
        return Err(invalid("no strategies to evaluate"));
    }
    let indices = eval_indices(test.len(), n_samples, seed)?;
    let mut rows = Vec::with_capacity(strategies.len());
    let mut samples = Vec::new();
    for strategy in strategies {
        let recs = indices
            .par_iter()
            .map(|&i| {
                let run = run_strategy(strategy, env, &test[i], &mut eval_rng(seed, i))?;
                Ok(SampleRecord {
                    strategy: strategy.kind(),
                    test_index: i,
                    mse: run.result.mse,
                    psnr: run.result.psnr,
                    actions: run.actions,
                    reconstruction: run.result.field,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let mses: Vec<f64> = recs.iter().map(|r| r.mse).collect();
        let psnrs: Vec<f64> = recs.iter().map(|r| r.psnr).collect();
        rows.push(ReportRow {
            strategy: strategy.kind(),
            mse: Summary::of(&mses),
            psnr: Summary::of(&psnrs),
        });
        samples.extend(recs);
    }
    let truths: Vec<(usize, ScattererField)> =
        indices.iter().map(|&i| (i, test[i].clone())).collect();
    let peaks = truths
        .iter()
        .map(|(_, t)| env.config.psnr_peak.value(&t.values))
        .collect();
    Ok(EvalReport {
        rows,
        samples,
        truths,
        peaks,
        menu: env.config.menu.clone(),
        seed,
    })
}

/// 8-bit binary greymap of `values` (row-major, row 0 at the top), mapping `[0, peak]` to `[0, 255]`.
pub fn greymap_bytes(rows: usize, cols: usize, values: &[f64], peak: f64) -> Vec<u8> {
    let mut out = format!("P5\n{cols} {rows}\n255\n").into_bytes();
    out.extend(values.iter().map(|&v| {
        if peak > 0.0 {
            (255.0 * (v / peak).clamp(0.0, 1.0)).round() as u8
        } else {
            0
        }
    }));
    out
}

pub fn write_greymap(path: &Path, field: &ScattererField, peak: f64) -> Result<()> {
    fs::write(
        path,
        greymap_bytes(field.domain.rows, field.domain.cols, &field.values, peak),
    )?;
    Ok(())
}

fn freq_list(actions: &[SensingAction], menu: &[f64]) -> String {
    actions
        .iter()
        .map(|a| menu[a.freq_index].to_string())
        .collect::<Vec<_>>()
        .join(" ")
}

/// Writes `table.csv`, `samples.csv`, `truth/` and one image directory per strategy into `dir`.
pub fn export_report(report: &EvalReport, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir)?;
    let mut table = fs::File::create(dir.join("table.csv"))?;
    writeln!(
        table,
        "strategy,mse_mean,mse_std,mse_var,psnr_mean,psnr_std,psnr_var"
    )?;
    for r in &report.rows {
        writeln!(
            table,
            "{},{},{},{},{},{},{}",
            r.strategy, r.mse.mean, r.mse.std, r.mse.var, r.psnr.mean, r.psnr.std, r.psnr.var
        )?;
    }
    let peak_of = |i: usize| {
        let pos = report
            .truths
            .iter()
            .position(|(t, _)| *t == i)
            .expect("sample of an evaluated index");
        report.peaks[pos]
    };
    let mut samples = fs::File::create(dir.join("samples.csv"))?;
    writeln!(samples, "strategy,test_index,mse,psnr,angles,frequencies")?;
    for s in &report.samples {
        let angles = s
            .actions
            .iter()
            .map(|a| a.angle.to_string())
            .collect::<Vec<_>>()
            .join(" ");
        writeln!(
            samples,
            "{},{},{},{},{},{}",
            s.strategy,
            s.test_index,
            s.mse,
            s.psnr,
            angles,
            freq_list(&s.actions, &report.menu)
        )?;
        let sdir = dir.join(s.strategy.as_str());
        fs::create_dir_all(&sdir)?;
        write_greymap(
            &sdir.join(format!("sample-{:04}.pgm", s.test_index)),
            &s.reconstruction,
            peak_of(s.test_index),
        )?;
    }
    let tdir = dir.join("truth");
    fs::create_dir_all(&tdir)?;
    for ((i, truth), &peak) in report.truths.iter().zip(&report.peaks) {
        write_greymap(&tdir.join(format!("sample-{i:04}.pgm")), truth, peak)?;
    }
    Ok(())
}

/// Consistency of a record's PSNR with its MSE for the given peak.
pub fn psnr_consistent(record: &SampleRecord, peak: f64) -> bool {
    (psnr_from_mse(peak, record.mse) - record.psnr).abs() <= 1e-9 * (1.0 + record.psnr.abs())
}

#[cfg(test)]
mod tests {
    use std::sync::Arc;

    use super::*;
    use crate::agent::NetConfig;
    use crate::domain::{make_domain, Geometry};
    use crate::env::EnvConfig;
    use crate::forward::{ForwardOptions, FrequencyBank};

    fn env() -> SensingEnv {
        let d = make_domain(Geometry::FarField, 6).unwrap();
        let menu = vec![2.0, 4.0, 6.0, 8.0];
        let bank = FrequencyBank::build(&d, &menu, &ForwardOptions::default()).unwrap();
        let mut cfg = EnvConfig::new(d, 3, menu, 2);
        cfg.final_iters = 5;
        SensingEnv::new(cfg, Arc::new(bank)).unwrap()
    }

    fn fields(e: &SensingEnv, n: usize) -> Vec<ScattererField> {
        (0..n)
            .map(|k| {
                let mut v = vec![0.0; 36];
                for idx in [14 + k % 3, 15, 20, 21 + k % 2] {
                    v[idx] = 0.04 + 0.01 * k as f64;
                }
                ScattererField::new(e.config.domain, v).unwrap()
            })
            .collect()
    }

    fn policy(e: &SensingEnv) -> PolicyNet {
        let cfg = NetConfig {
            feature_hidden: vec![8],
            feature_out: 6,
            gru_hidden: 5,
            gru_layers: 2,
            angle_hidden: vec![8],
            freq_hidden: vec![6],
            value_hidden: vec![4],
        };
        PolicyNet::new(
            &cfg,
            e.config.observation_len(),
            4,
            &mut ChaCha8Rng::seed_from_u64(1),
        )
        .unwrap()
    }

    #[test]
    fn uniform_angle_formula() {
        assert_eq!(
            uniform_angles(10),
            vec![0, 36, 72, 108, 144, 180, 216, 252, 288, 324]
        );
        assert_eq!(uniform_angles(7), vec![0, 51, 103, 154, 206, 257, 309]);
    }

    #[test]
    fn random_angles_are_distinct() {
        let e = env();
        let s = fields(&e, 1);
        let run = run_strategy(
            &Strategy::RandomAngle { freq_index: 1 },
            &e,
            &s[0],
            &mut eval_rng(3, 0),
        )
        .unwrap();
        let mut a: Vec<usize> = run.actions.iter().map(|a| a.angle).collect();
        a.sort_unstable();
        a.dedup();
        assert_eq!(a.len(), 3);
        assert!(run.actions.iter().all(|a| a.freq_index == 1));
    }

    #[test]
    fn learned_strategies_are_deterministic() {
        let e = env();
        let s = fields(&e, 1);
        let p = policy(&e);
        for strategy in [
            Strategy::LearnBoth(&p),
            Strategy::LearnAngle(&p, 2),
            Strategy::LearnFrequency(&p),
        ] {
            let a = run_strategy(&strategy, &e, &s[0], &mut eval_rng(0, 0)).unwrap();
            let b = run_strategy(&strategy, &e, &s[0], &mut eval_rng(0, 0)).unwrap();
            assert_eq!(a, b);
        }
        let la =
            run_strategy(&Strategy::LearnAngle(&p, 2), &e, &s[0], &mut eval_rng(0, 0)).unwrap();
        assert!(la.actions.iter().all(|a| a.freq_index == 2));
    }

    #[test]
    fn mismatched_policy_is_rejected() {
        let e = env();
        let s = fields(&e, 1);
        let p = PolicyNet::new(
            &NetConfig {
                feature_hidden: vec![4],
                feature_out: 3,
                gru_hidden: 3,
                gru_layers: 1,
                angle_hidden: vec![],
                freq_hidden: vec![],
                value_hidden: vec![],
            },
            10,
            4,
            &mut ChaCha8Rng::seed_from_u64(0),
        )
        .unwrap();
        assert!(matches!(
            run_strategy(&Strategy::LearnBoth(&p), &e, &s[0], &mut eval_rng(0, 0)),
            Err(Error::Mismatch(_))
        ));
    }

    #[test]
    fn fixed_frequency_choice() {
        let e = env();
        let s = fields(&e, 2);
        let (f, means) = pick_fixed_frequency(&e, &s, &[2]).unwrap();
        assert_eq!((f, means.len()), (2, 1));
        let (f, means) = pick_fixed_frequency(&e, &s, &[3, 0, 1]).unwrap();
        let min = means.iter().copied().fold(f64::INFINITY, f64::min);
        let pos = [3, 0, 1].iter().position(|&c| c == f).unwrap();
        assert_eq!(means[pos], min);
        // Duplicate candidates tie exactly; the lower frequency wins regardless of order.
        let (f, _) = pick_fixed_frequency(&e, &s, &[1, 1]).unwrap();
        assert_eq!(f, 1);
    }

    #[test]
    fn report_and_export() {
        let e = env();
        let s = fields(&e, 4);
        let strategies = [
            Strategy::UniformAngle { freq_index: 3 },
            Strategy::RandomAngle { freq_index: 3 },
        ];
        let one = evaluate(&strategies[..1], &e, &s, 1, 0).unwrap();
        assert_eq!(one.rows.len(), 1);
        assert_eq!(one.rows[0].mse.std, 0.0);

        let r = evaluate(&strategies, &e, &s, 3, 5).unwrap();
        assert_eq!(r.rows.len(), 2);
        let idx: Vec<Vec<usize>> = [StrategyKind::UniformAngle, StrategyKind::RandomAngle]
            .iter()
            .map(|k| {
                r.samples
                    .iter()
                    .filter(|x| x.strategy == *k)
                    .map(|x| x.test_index)
                    .collect()
            })
            .collect();
        assert_eq!(idx[0], idx[1]);
        for rec in &r.samples {
            let pos = r
                .truths
                .iter()
                .position(|(t, _)| *t == rec.test_index)
                .unwrap();
            assert!(psnr_consistent(rec, r.peaks[pos]));
        }

        let dir = tempfile::tempdir().unwrap();
        export_report(&r, dir.path()).unwrap();
        let table = fs::read_to_string(dir.path().join("table.csv")).unwrap();
        let line = table.lines().nth(1).unwrap();
        let mse_mean: f64 = line.split(',').nth(1).unwrap().parse().unwrap();
        assert_eq!(mse_mean, r.rows[0].mse.mean);
        let img = fs::read(
            dir.path()
                .join("uniform-angle")
                .join(format!("sample-{:04}.pgm", idx[0][0])),
        )
        .unwrap();
        assert!(img.starts_with(b"P5\n6 6\n255\n"));
        assert_eq!(img.len(), b"P5\n6 6\n255\n".len() + 36);
    }

    #[test]
    fn zero_field_greymap_is_black() {
        let bytes = greymap_bytes(2, 3, &[0.0; 6], 0.0);
        assert!(bytes.ends_with(&[0; 6]));
        let bytes = greymap_bytes(1, 3, &[0.0, 0.5, 2.0], 1.0);
        assert!(bytes.ends_with(&[0, 128, 255]));
    }
}
