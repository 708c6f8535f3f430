//! The sequential sensing task: one new sensor per step, all placed sensors
//! receive, and the reward is the PSNR gain of a warm-started reconstruction.

use std::sync::Arc;

use crate::domain::{DomainSpec, ScattererField};
use crate::error::{invalid, Error, Result};
use crate::forward::{FrequencyBank, MeasurementRecord, NUM_ANGLES};
use crate::recon::{
    lbfgs_run, mse, psnr, LbfgsOptions, Objective, PsnrPeak, ReconstructionProblem,
};

#[derive(Debug, Clone, PartialEq)]
pub struct EnvConfig {
    pub domain: DomainSpec,
    /// Number of sensors placed per episode.
    pub horizon: usize,
    pub menu: Vec<f64>,
    pub order: usize,
    pub lambda: f64,
    pub eps: f64,
    pub inner_iters: usize,
    pub final_iters: usize,
    pub psnr_peak: PsnrPeak,
    pub lbfgs: LbfgsOptions,
}

impl EnvConfig {
    pub fn new(domain: DomainSpec, horizon: usize, menu: Vec<f64>, order: usize) -> Self {
        EnvConfig {
            domain,
            horizon,
            menu,
            order,
            lambda: 0.1,
            eps: 1e-6,
            inner_iters: 3,
            final_iters: 20,
            psnr_peak: PsnrPeak::TrueMax,
            lbfgs: LbfgsOptions::default(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.horizon < 2 {
            return Err(invalid("horizon must be at least 2"));
        }
        if self.horizon > NUM_ANGLES {
            return Err(invalid(format!(
                "horizon {} exceeds the {NUM_ANGLES} available angles",
                self.horizon
            )));
        }
        if self.menu.is_empty() || self.menu.iter().any(|w| !(*w > 0.0) || !w.is_finite()) {
            return Err(invalid("frequency menu must be non-empty and positive"));
        }
        if self.menu.windows(2).any(|w| w[1] <= w[0]) {
            return Err(invalid("frequency menu must be strictly increasing"));
        }
        if self.order == 0 || self.order > crate::forward::MAX_ORDER {
            return Err(invalid(format!(
                "order must be in 1..={}",
                crate::forward::MAX_ORDER
            )));
        }
        if !(self.lambda >= 0.0) || !(self.eps > 0.0) {
            return Err(invalid("lambda must be >= 0 and eps > 0"));
        }
        if self.inner_iters == 0 || self.final_iters == 0 {
            return Err(invalid("inner and final iteration counts must be positive"));
        }
        Ok(())
    }

    /// Length of the encoded observation: `2T + 360 + 1`.
    pub fn observation_len(&self) -> usize {
        observation_len(self.horizon)
    }
}

pub fn observation_len(horizon: usize) -> usize {
    2 * horizon + NUM_ANGLES + 1
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct SensingAction {
    pub angle: usize,
    pub freq_index: usize,
}

/// Episode state; `t` is the 1-based index of the next step.
#[derive(Debug, Clone, PartialEq)]
pub struct EpisodeState {
    pub t: usize,
    pub records: Vec<MeasurementRecord>,
    /// Frequency used at each angle, zero where no sensor was placed.
    pub u: Vec<f64>,
    pub remaining: usize,
    pub recon: Vec<f64>,
    pub recon_psnr: f64,
    pub used_angles: Vec<bool>,
    /// Angles in the order they were chosen.
    pub angles: Vec<usize>,
    pub truth: ScattererField,
}

/// Result of one transition.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepOutcome {
    pub reward: f64,
    /// Objective of the updated problem at the warm start and after the inner solve.
    pub objective_before: f64,
    pub objective_after: f64,
    pub line_search_failed: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FinalReconstruction {
    pub field: ScattererField,
    pub mse: f64,
    pub psnr: f64,
    pub objective_before: f64,
    pub objective_after: f64,
}

/// Legal-angle mask: true exactly at unused angles.
pub fn legal_mask(state: &EpisodeState) -> Vec<bool> {
    state.used_angles.iter().map(|u| !u).collect()
}

/// `[Re/Im of the newest record, zero-padded to 2T] ⊕ u ⊕ [remaining]`.
pub fn encode_observation(
    horizon: usize,
    last: Option<&MeasurementRecord>,
    u: &[f64],
    remaining: usize,
) -> Vec<f64> {
    let mut obs = vec![0.0; observation_len(horizon)];
    if let Some(rec) = last {
        for (i, d) in rec.data.iter().enumerate().take(horizon) {
            obs[2 * i] = d.re;
            obs[2 * i + 1] = d.im;
        }
    }
    obs[2 * horizon..2 * horizon + NUM_ANGLES].copy_from_slice(u);
    obs[2 * horizon + NUM_ANGLES] = remaining as f64;
    obs
}

/// The sensing environment over a shared frequency bank.
#[derive(Debug, Clone)]
pub struct SensingEnv {
    pub config: EnvConfig,
    pub bank: Arc<FrequencyBank>,
}

impl SensingEnv {
    pub fn new(config: EnvConfig, bank: Arc<FrequencyBank>) -> Result<Self> {
        config.validate()?;
        if bank.domain != config.domain {
            return Err(invalid("frequency bank was built for a different domain"));
        }
        if bank.menu != config.menu {
            return Err(invalid(
                "frequency bank menu differs from the configured menu",
            ));
        }
        Ok(SensingEnv { config, bank })
    }

    fn psnr(&self, recon: &[f64], truth: &ScattererField) -> Result<f64> {
        psnr(recon, &truth.values, self.config.psnr_peak)
    }

    pub fn reset(&self, truth: &ScattererField) -> Result<EpisodeState> {
        if truth.domain != self.config.domain {
            return Err(invalid(
                "scatterer domain differs from the environment domain",
            ));
        }
        let recon = vec![0.0; truth.values.len()];
        let recon_psnr = self.psnr(&recon, truth)?;
        Ok(EpisodeState {
            t: 1,
            records: Vec::new(),
            u: vec![0.0; NUM_ANGLES],
            remaining: self.config.horizon,
            recon,
            recon_psnr,
            used_angles: vec![false; NUM_ANGLES],
            angles: Vec::new(),
            truth: truth.clone(),
        })
    }

    pub fn observe(&self, state: &EpisodeState) -> Vec<f64> {
        encode_observation(
            self.config.horizon,
            state.records.last(),
            &state.u,
            state.remaining,
        )
    }

    fn problem<'a>(
        &'a self,
        records: &'a [MeasurementRecord],
    ) -> Result<ReconstructionProblem<'a>> {
        ReconstructionProblem::new(
            &self.bank,
            records,
            self.config.order,
            self.config.lambda,
            self.config.eps,
        )
    }

    /// Places a sensor, measures, re-solves for `inner_iters` iterations and returns the PSNR gain.
    pub fn step(&self, state: &mut EpisodeState, action: SensingAction) -> Result<StepOutcome> {
        if state.t > self.config.horizon {
            return Err(Error::IllegalAction(format!(
                "episode already has {} sensors",
                self.config.horizon
            )));
        }
        if action.angle >= NUM_ANGLES || action.freq_index >= self.config.menu.len() {
            return Err(Error::IllegalAction(format!(
                "action {action:?} is out of range"
            )));
        }
        if state.used_angles[action.angle] {
            return Err(Error::IllegalAction(format!(
                "angle {} was already used",
                action.angle
            )));
        }
        let mut receivers = state.angles.clone();
        receivers.push(action.angle);
        let record = self.bank.forward(
            &state.truth.values,
            action.freq_index,
            action.angle,
            &receivers,
            self.config.order,
        )?;
        state.records.push(record);
        state.angles.push(action.angle);
        state.used_angles[action.angle] = true;
        state.u[action.angle] = self.config.menu[action.freq_index];

        let problem = self.problem(&state.records)?;
        let out = lbfgs_run(
            &problem,
            &state.recon,
            self.config.inner_iters,
            &self.config.lbfgs,
        )?;
        let new_psnr = self.psnr(&out.x, &state.truth)?;
        let reward = new_psnr - state.recon_psnr;
        state.recon = out.x;
        state.recon_psnr = new_psnr;
        state.t += 1;
        state.remaining -= 1;
        Ok(StepOutcome {
            reward,
            objective_before: out.initial_value,
            objective_after: out.value,
            line_search_failed: out.line_search_failed,
        })
    }

    /// Longer solve from the episode's last reconstruction over all records.
    pub fn final_reconstruct(&self, state: &EpisodeState) -> Result<FinalReconstruction> {
        let problem = self.problem(&state.records)?;
        let out = lbfgs_run(
            &problem,
            &state.recon,
            self.config.final_iters,
            &self.config.lbfgs,
        )?;
        let mse = mse(&out.x, &state.truth.values)?;
        let psnr = self.psnr(&out.x, &state.truth)?;
        Ok(FinalReconstruction {
            field: ScattererField::new(self.config.domain, out.x)?,
            mse,
            psnr,
            objective_before: out.initial_value,
            objective_after: out.value,
        })
    }

    /// Objective of the reconstruction problem built from `state`'s records.
    pub fn objective_at(&self, state: &EpisodeState, x: &[f64]) -> Result<f64> {
        Ok(self.problem(&state.records)?.value(x))
    }
}

/// Episode interface used by the trainer; `reset` takes an index into the environment's sample pool.
pub trait Environment: Sync {
    type State: Send;

    fn horizon(&self) -> usize;
    fn num_frequencies(&self) -> usize;
    fn num_samples(&self) -> usize;
    fn reset(&self, sample: usize) -> Result<Self::State>;
    fn observe(&self, state: &Self::State) -> Vec<f64>;
    fn legal_mask(&self, state: &Self::State) -> Vec<bool>;
    fn step(&self, state: &mut Self::State, action: SensingAction) -> Result<f64>;

    fn observation_len(&self) -> usize {
        observation_len(self.horizon())
    }
}

/// A [`SensingEnv`] paired with the scatterers episodes are drawn from.
pub struct SensingTask<'a> {
    pub env: &'a SensingEnv,
    pub samples: &'a [ScattererField],
}

impl Environment for SensingTask<'_> {
    type State = EpisodeState;

    fn horizon(&self) -> usize {
        self.env.config.horizon
    }
    fn num_frequencies(&self) -> usize {
        self.env.config.menu.len()
    }
    fn num_samples(&self) -> usize {
        self.samples.len()
    }
    fn reset(&self, sample: usize) -> Result<EpisodeState> {
        let truth = self
            .samples
            .get(sample)
            .ok_or_else(|| invalid(format!("sample {sample} out of range")))?;
        self.env.reset(truth)
    }
    fn observe(&self, state: &EpisodeState) -> Vec<f64> {
        self.env.observe(state)
    }
    fn legal_mask(&self, state: &EpisodeState) -> Vec<bool> {
        legal_mask(state)
    }
    fn step(&self, state: &mut EpisodeState, action: SensingAction) -> Result<f64> {
        Ok(self.env.step(state, action)?.reward)
    }
}

/// Single-step stub: reward 1 when the chosen angle equals `target`, else 0.
#[derive(Debug, Clone, Copy)]
pub struct BanditEnv {
    pub target: usize,
    pub frequencies: usize,
}

impl Default for BanditEnv {
    fn default() -> Self {
        BanditEnv {
            target: 42,
            frequencies: 4,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BanditState {
    pub done: bool,
}

impl Environment for BanditEnv {
    type State = BanditState;

    fn horizon(&self) -> usize {
        1
    }
    fn num_frequencies(&self) -> usize {
        self.frequencies
    }
    fn num_samples(&self) -> usize {
        1
    }
    fn reset(&self, _sample: usize) -> Result<BanditState> {
        Ok(BanditState { done: false })
    }
    fn observe(&self, state: &BanditState) -> Vec<f64> {
        encode_observation(1, None, &[0.0; NUM_ANGLES], usize::from(!state.done))
    }
    fn legal_mask(&self, _state: &BanditState) -> Vec<bool> {
        vec![true; NUM_ANGLES]
    }
    fn step(&self, state: &mut BanditState, action: SensingAction) -> Result<f64> {
        if state.done {
            return Err(Error::IllegalAction("bandit episode is over".into()));
        }
        state.done = true;
        Ok(if action.angle == self.target {
            1.0
        } else {
            0.0
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::{make_domain, Geometry};
    use crate::forward::ForwardOptions;

    fn env(t: usize) -> SensingEnv {
        let d = make_domain(Geometry::FarField, 6).unwrap();
        let menu = vec![2.0, 4.0, 6.0, 8.0];
        let bank = FrequencyBank::build(&d, &menu, &ForwardOptions::default()).unwrap();
        SensingEnv::new(EnvConfig::new(d, t, menu, 2), Arc::new(bank)).unwrap()
    }

    fn blob(d: DomainSpec) -> ScattererField {
        let mut v = vec![0.0; d.len()];
        for idx in [14, 15, 20, 21] {
            v[idx] = 0.05;
        }
        ScattererField::new(d, v).unwrap()
    }

    #[test]
    fn reset_state() {
        let e = env(4);
        let s = e.reset(&blob(e.config.domain)).unwrap();
        assert_eq!(s.remaining, 4);
        assert!(s.recon_psnr.is_finite());
        let obs = e.observe(&s);
        assert_eq!(obs.len(), 2 * 4 + 361);
        assert!(obs[..obs.len() - 1].iter().all(|&v| v == 0.0));
        assert_eq!(*obs.last().unwrap(), 4.0);
        assert!(legal_mask(&s).iter().all(|&m| m));
    }

    #[test]
    fn steps_grow_receiver_sets_and_masks() {
        let e = env(3);
        let mut s = e.reset(&blob(e.config.domain)).unwrap();
        let mut total = 0.0;
        for (k, angle) in [17, 100, 250].into_iter().enumerate() {
            let out = e
                .step(
                    &mut s,
                    SensingAction {
                        angle,
                        freq_index: k % 4,
                    },
                )
                .unwrap();
            assert!(out.objective_after <= out.objective_before);
            total += out.reward;
            assert_eq!(s.records[k].receiver_angles.len(), k + 1);
            let obs = e.observe(&s);
            assert_eq!(obs.len(), e.config.observation_len());
            assert!(obs[2 * (k + 1)..6].iter().all(|&v| v == 0.0));
            assert_eq!(legal_mask(&s).iter().filter(|&&m| m).count(), 360 - (k + 1));
        }
        assert!(!legal_mask(&s)[17]);
        assert_eq!(s.u.iter().filter(|&&w| w != 0.0).count(), 3);
        let p0 = psnr(&vec![0.0; 36], &s.truth.values, PsnrPeak::TrueMax).unwrap();
        assert!((total - (s.recon_psnr - p0)).abs() < 1e-9);
        assert!(e
            .step(
                &mut s,
                SensingAction {
                    angle: 5,
                    freq_index: 0
                }
            )
            .is_err());
    }

    #[test]
    fn repeated_angle_is_rejected() {
        let e = env(3);
        let mut s = e.reset(&blob(e.config.domain)).unwrap();
        e.step(
            &mut s,
            SensingAction {
                angle: 9,
                freq_index: 0,
            },
        )
        .unwrap();
        assert!(matches!(
            e.step(
                &mut s,
                SensingAction {
                    angle: 9,
                    freq_index: 1
                }
            ),
            Err(Error::IllegalAction(_))
        ));
    }

    #[test]
    fn zero_scatterer_gives_zero_rewards() {
        let mut e = env(3);
        e.config.psnr_peak = PsnrPeak::Fixed(1.0);
        let mut s = e.reset(&ScattererField::zeros(e.config.domain)).unwrap();
        for angle in [0, 90, 180] {
            let out = e
                .step(
                    &mut s,
                    SensingAction {
                        angle,
                        freq_index: 3,
                    },
                )
                .unwrap();
            assert!(out.reward.abs() < 1e-6);
        }
    }

    #[test]
    fn final_reconstruction_improves_and_is_deterministic() {
        let e = env(3);
        let mut s = e.reset(&blob(e.config.domain)).unwrap();
        for angle in [0, 120, 240] {
            e.step(
                &mut s,
                SensingAction {
                    angle,
                    freq_index: 3,
                },
            )
            .unwrap();
        }
        let a = e.final_reconstruct(&s).unwrap();
        let b = e.final_reconstruct(&s).unwrap();
        assert_eq!(a, b);
        assert!(a.objective_after <= e.objective_at(&s, &s.recon).unwrap());
        let empty = e.reset(&blob(e.config.domain)).unwrap();
        let z = e.final_reconstruct(&empty).unwrap();
        assert!(z.field.values.iter().all(|v| v.abs() < 1e-9));
    }

    #[test]
    fn bandit_rewards_target_only() {
        let b = BanditEnv::default();
        let mut s = b.reset(0).unwrap();
        assert_eq!(
            b.step(
                &mut s,
                SensingAction {
                    angle: 42,
                    freq_index: 0
                }
            )
            .unwrap(),
            1.0
        );
        assert!(b
            .step(
                &mut s,
                SensingAction {
                    angle: 42,
                    freq_index: 0
                }
            )
            .is_err());
        let mut s = b.reset(0).unwrap();
        assert_eq!(
            b.step(
                &mut s,
                SensingAction {
                    angle: 41,
                    freq_index: 0
                }
            )
            .unwrap(),
            0.0
        );
    }
}
