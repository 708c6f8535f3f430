//! Clipped-surrogate PPO over full-episode trajectories of the recurrent agent.

use std::fmt;
use std::path::Path;
use std::str::FromStr;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::agent::{ActMode, Forced, PolicyNet, ValueNet};
use crate::container::Container;
use crate::env::{Environment, SensingAction};
use crate::error::{invalid, Error, Result};
use crate::forward::NUM_ANGLES;
use crate::nn::{AdamConfig, Gradients, Tape, Var};

/// Which heads choose actions (and receive policy gradients) during training.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TrainMode {
    Both,
    /// Frequency is fixed to `freq_index`; only the angle log-probability enters the surrogate.
    AngleOnly {
        freq_index: usize,
    },
    /// Angles are drawn uniformly among legal ones; only the frequency log-probability is trained.
    FrequencyOnly,
}

impl fmt::Display for TrainMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            TrainMode::Both => f.write_str("both"),
            TrainMode::AngleOnly { freq_index } => write!(f, "angle-only:{freq_index}"),
            TrainMode::FrequencyOnly => f.write_str("frequency-only"),
        }
    }
}

impl FromStr for TrainMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "both" => Ok(TrainMode::Both),
            "frequency-only" => Ok(TrainMode::FrequencyOnly),
            _ => match s.strip_prefix("angle-only:").map(str::parse) {
                Some(Ok(freq_index)) => Ok(TrainMode::AngleOnly { freq_index }),
                _ => Err(invalid(format!("unknown training mode '{s}'"))),
            },
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainConfig {
    pub iterations: usize,
    pub episodes_per_iter: usize,
    pub minibatch_episodes: usize,
    pub updates_per_iter: usize,
    pub clip: f64,
    pub adam: AdamConfig,
    pub gamma: f64,
    pub seed: u64,
    pub entropy_coef: f64,
    pub max_grad_norm: Option<f64>,
    pub mode: TrainMode,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            iterations: 400,
            episodes_per_iter: 8,
            minibatch_episodes: 4,
            updates_per_iter: 10,
            clip: 0.2,
            adam: AdamConfig::default(),
            gamma: 1.0,
            seed: 0,
            entropy_coef: 0.0,
            max_grad_norm: None,
            mode: TrainMode::Both,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.episodes_per_iter == 0 || self.minibatch_episodes == 0 || self.updates_per_iter == 0
        {
            return Err(invalid(
                "episode, minibatch and update counts must be positive",
            ));
        }
        if self.minibatch_episodes > self.episodes_per_iter {
            return Err(invalid(
                "minibatch_episodes must not exceed episodes_per_iter",
            ));
        }
        if !(self.clip > 0.0 && self.clip < 1.0) {
            return Err(invalid("clip must lie in (0, 1)"));
        }
        if !(self.adam.lr > 0.0)
            || !(0.0..1.0).contains(&self.adam.beta1)
            || !(0.0..1.0).contains(&self.adam.beta2)
        {
            return Err(invalid("invalid Adam hyperparameters"));
        }
        if !(0.0..=1.0).contains(&self.gamma) {
            return Err(invalid("gamma must lie in [0, 1]"));
        }
        if self.max_grad_norm.is_some_and(|n| !(n > 0.0)) {
            return Err(invalid("max_grad_norm must be positive"));
        }
        Ok(())
    }

    fn manifest(&self, c: &mut Container) {
        c.set_meta("train.episodes_per_iter", self.episodes_per_iter);
        c.set_meta("train.minibatch_episodes", self.minibatch_episodes);
        c.set_meta("train.updates_per_iter", self.updates_per_iter);
        c.set_meta("train.clip", self.clip);
        c.set_meta("train.lr", self.adam.lr);
        c.set_meta("train.beta1", self.adam.beta1);
        c.set_meta("train.beta2", self.adam.beta2);
        c.set_meta("train.gamma", self.gamma);
        c.set_meta("train.seed", self.seed);
        c.set_meta("train.mode", self.mode);
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepRecord {
    pub observation: Vec<f64>,
    pub mask: Vec<bool>,
    pub action: SensingAction,
    pub reward: f64,
    pub angle_logprob: f64,
    pub freq_logprob: f64,
    pub value: f64,
    pub next_value: f64,
    pub advantage: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub sample: usize,
    pub steps: Vec<StepRecord>,
}

impl Trajectory {
    pub fn total_reward(&self) -> f64 {
        self.steps.iter().map(|s| s.reward).sum()
    }
}

/// One-step advantages `r_t + γ v(s_{t+1}) − v(s_t)` with a zero terminal value.
pub fn fill_advantages(steps: &mut [StepRecord], gamma: f64) {
    let n = steps.len();
    for t in 0..n {
        steps[t].next_value = if t + 1 < n { steps[t + 1].value } else { 0.0 };
        steps[t].advantage = steps[t].reward + gamma * steps[t].next_value - steps[t].value;
    }
}

fn run_episode<E: Environment>(
    env: &E,
    policy: &PolicyNet,
    value: &ValueNet,
    mode: TrainMode,
    gamma: f64,
    sample: usize,
    rng: &mut ChaCha8Rng,
) -> Result<Trajectory> {
    let mut state = env.reset(sample)?;
    let mut hp = policy.initial_hidden();
    let mut hv = value.initial_hidden();
    let mut steps = Vec::with_capacity(env.horizon());
    for _ in 0..env.horizon() {
        let observation = env.observe(&state);
        let mask = env.legal_mask(&state);
        let forced = match mode {
            TrainMode::Both => Forced::default(),
            TrainMode::AngleOnly { freq_index } => Forced {
                angle: None,
                freq_index: Some(freq_index),
            },
            TrainMode::FrequencyOnly => {
                let legal: Vec<usize> = (0..NUM_ANGLES).filter(|&a| mask[a]).collect();
                Forced {
                    angle: legal.choose(rng).copied(),
                    freq_index: None,
                }
            }
        };
        let out = policy.act(&hp, &observation, &mask, ActMode::Sample, forced, rng)?;
        let (v, hv_next) = value.value_estimate(&hv, &observation)?;
        let reward = env.step(&mut state, out.action)?;
        steps.push(StepRecord {
            observation,
            mask,
            action: out.action,
            reward,
            angle_logprob: out.angle_logprob,
            freq_logprob: out.freq_logprob,
            value: v,
            next_value: 0.0,
            advantage: 0.0,
        });
        hp = out.hidden;
        hv = hv_next;
    }
    fill_advantages(&mut steps, gamma);
    Ok(Trajectory { sample, steps })
}

/// Runs `episodes` sampled episodes on scatterers drawn uniformly from the environment's pool.
///
/// Episode seeds are drawn from `rng` up front, so the result does not depend on thread count.
pub fn collect<E: Environment>(
    env: &E,
    policy: &PolicyNet,
    value: &ValueNet,
    cfg: &TrainConfig,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<Trajectory>> {
    if env.num_samples() == 0 {
        return Err(invalid("cannot collect episodes from an empty dataset"));
    }
    let plan: Vec<(usize, u64)> = (0..cfg.episodes_per_iter)
        .map(|_| (rng.gen_range(0..env.num_samples()), rng.gen()))
        .collect();
    plan.into_par_iter()
        .map(|(sample, seed)| {
            let mut erng = ChaCha8Rng::seed_from_u64(seed);
            run_episode(env, policy, value, cfg.mode, cfg.gamma, sample, &mut erng)
        })
        .collect()
}

/// Surrogate and value losses with gradients of the quantities the optimizers minimise
/// (`−L_clip − c·entropy` and `L_value`).
#[derive(Debug, Clone)]
pub struct PpoLosses {
    pub l_clip: f64,
    pub l_value: f64,
    pub entropy: f64,
    pub policy_grads: Gradients,
    pub value_grads: Gradients,
}

/// Clipped surrogate term for one step.
pub fn clipped_term(ratio: f64, advantage: f64, clip: f64) -> f64 {
    (ratio * advantage).min(ratio.clamp(1.0 - clip, 1.0 + clip) * advantage)
}

/// Adds one trajectory's contribution to `out`.
fn trajectory_losses(
    policy: &PolicyNet,
    value: &ValueNet,
    traj: &Trajectory,
    cfg: &TrainConfig,
    weight: f64,
    out: &mut PpoLosses,
) -> Result<()> {
    let mut tape = Tape::new(&policy.store);
    let mut h: Vec<Var> = policy
        .initial_hidden()
        .into_iter()
        .map(|v| tape.input(v))
        .collect();
    let mut surr = Vec::with_capacity(traj.steps.len());
    let mut ents = Vec::with_capacity(traj.steps.len());
    for st in &traj.steps {
        let old = match cfg.mode {
            TrainMode::Both => st.angle_logprob + st.freq_logprob,
            TrainMode::AngleOnly { .. } => st.angle_logprob,
            TrainMode::FrequencyOnly => st.freq_logprob,
        };
        if !old.is_finite() {
            return Err(Error::Numerical(format!(
                "old log-probability {old} is not finite"
            )));
        }
        let o = tape.input(st.observation.clone());
        let s = policy.step(&mut tape, o, &h, &st.mask);
        let fl = policy.freq_logp(&mut tape, *s.hidden.last().unwrap(), st.action.angle);
        let la = tape.pick(s.angle_logp, st.action.angle);
        let lf = tape.pick(fl, st.action.freq_index);
        let (new, ent) = match cfg.mode {
            TrainMode::Both => {
                let ea = tape.entropy(s.angle_logp);
                let ef = tape.entropy(fl);
                (tape.add(la, lf), tape.add(ea, ef))
            }
            TrainMode::AngleOnly { .. } => (la, tape.entropy(s.angle_logp)),
            TrainMode::FrequencyOnly => (lf, tape.entropy(fl)),
        };
        let diff = tape.add_scalar(new, -old);
        let ratio = tape.exp(diff);
        let unclipped = tape.scale(ratio, st.advantage);
        let clipped = tape.clamp(ratio, 1.0 - cfg.clip, 1.0 + cfg.clip);
        let clipped = tape.scale(clipped, st.advantage);
        surr.push(tape.min(unclipped, clipped));
        ents.push(ent);
        h = s.hidden;
    }
    let surr = tape.concat(&surr);
    let surr = tape.sum(surr);
    let l_clip = tape.scale(surr, weight);
    let ents = tape.concat(&ents);
    let ents = tape.sum(ents);
    let entropy = tape.scale(ents, weight);
    let neg = tape.scale(l_clip, -1.0);
    let bonus = tape.scale(entropy, -cfg.entropy_coef);
    let objective = tape.add(neg, bonus);
    let (l_clip, entropy) = (tape.scalar(l_clip), tape.scalar(entropy));
    if !l_clip.is_finite() {
        return Err(Error::Numerical("surrogate loss is not finite".into()));
    }
    tape.backward_into(objective, &mut out.policy_grads);
    out.l_clip += l_clip;
    out.entropy += entropy;

    let mut tape = Tape::new(&value.store);
    let mut h: Vec<Var> = value
        .initial_hidden()
        .into_iter()
        .map(|v| tape.input(v))
        .collect();
    let mut errs = Vec::with_capacity(traj.steps.len());
    for st in &traj.steps {
        let o = tape.input(st.observation.clone());
        let (v, hn) = value.step(&mut tape, o, &h);
        // Target r_t + γ v_old(s_{t+1}) = α̂_t + v_old(s_t).
        let target = st.advantage + st.value;
        let d = tape.add_scalar(v, -target);
        errs.push(tape.square(d));
        h = hn;
    }
    let errs = tape.concat(&errs);
    let errs = tape.sum(errs);
    let lv = tape.scale(errs, weight);
    tape.backward_into(lv, &mut out.value_grads);
    out.l_value += tape.scalar(lv);
    Ok(())
}

/// Replays `minibatch` through the current networks from zero hidden states.
pub fn ppo_losses(
    policy: &PolicyNet,
    value: &ValueNet,
    minibatch: &[&Trajectory],
    cfg: &TrainConfig,
) -> Result<PpoLosses> {
    let mut out = PpoLosses {
        l_clip: 0.0,
        l_value: 0.0,
        entropy: 0.0,
        policy_grads: Gradients::zeros(&policy.store),
        value_grads: Gradients::zeros(&value.store),
    };
    ppo_losses_into(policy, value, minibatch, cfg, &mut out)?;
    Ok(out)
}

/// [`ppo_losses`] writing into existing buffers (avoids reallocating gradients every update).
pub fn ppo_losses_into(
    policy: &PolicyNet,
    value: &ValueNet,
    minibatch: &[&Trajectory],
    cfg: &TrainConfig,
    out: &mut PpoLosses,
) -> Result<()> {
    let total: usize = minibatch.iter().map(|t| t.steps.len()).sum();
    if total == 0 {
        return Err(invalid("minibatch has no steps"));
    }
    let weight = 1.0 / total as f64;
    out.l_clip = 0.0;
    out.l_value = 0.0;
    out.entropy = 0.0;
    out.policy_grads.fill_zero();
    out.value_grads.fill_zero();
    for t in minibatch {
        trajectory_losses(policy, value, t, cfg, weight, out)?;
    }
    Ok(())
}

/// One row of the training log.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MetricsRow {
    pub iteration: usize,
    pub mean_return: f64,
    /// Means over the iteration's updates, each evaluated before its Adam step.
    pub l_clip: f64,
    pub l_value: f64,
    pub wall_time: f64,
}

pub const METRICS_HEADER: &str = "iteration,mean_return,l_clip,l_value";

impl MetricsRow {
    /// Deterministic CSV line (wall time is logged separately).
    pub fn csv(&self) -> String {
        format!(
            "{},{:e},{:e},{:e}",
            self.iteration, self.mean_return, self.l_clip, self.l_value
        )
    }
}

const CHECKPOINT_KIND: &str = "checkpoint";

/// Networks, optimizer state and progress of a training run.
#[derive(Debug, Clone, PartialEq)]
pub struct Trainer {
    pub policy: PolicyNet,
    pub value: ValueNet,
    pub config: TrainConfig,
    /// Number of completed iterations.
    pub iteration: usize,
}

impl Trainer {
    pub fn new(policy: PolicyNet, value: ValueNet, config: TrainConfig) -> Result<Self> {
        config.validate()?;
        if policy.obs_len != value.obs_len {
            return Err(invalid(
                "policy and value networks disagree on the observation length",
            ));
        }
        if let TrainMode::AngleOnly { freq_index } = config.mode {
            if freq_index >= policy.num_freqs {
                return Err(invalid(format!(
                    "fixed frequency index {freq_index} out of range"
                )));
            }
        }
        Ok(Trainer {
            policy,
            value,
            config,
            iteration: 0,
        })
    }

    fn check_env<E: Environment>(&self, env: &E) -> Result<()> {
        if env.observation_len() != self.policy.obs_len {
            return Err(Error::Mismatch(format!(
                "environment observations have length {}, networks expect {}",
                env.observation_len(),
                self.policy.obs_len
            )));
        }
        if env.num_frequencies() != self.policy.num_freqs {
            return Err(Error::Mismatch(
                "environment and policy disagree on the frequency count".into(),
            ));
        }
        Ok(())
    }

    /// RNG for iteration `k` (0-based), independent of how the run was resumed.
    pub fn iteration_rng(&self, k: usize) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.config.seed);
        rng.set_stream(k as u64 + 1);
        rng
    }

    /// Collect, then `updates_per_iter` Adam steps on fresh random minibatches.
    pub fn run_iteration<E: Environment>(&mut self, env: &E) -> Result<MetricsRow> {
        self.check_env(env)?;
        let start = Instant::now();
        let mut rng = self.iteration_rng(self.iteration);
        let trajs = collect(env, &self.policy, &self.value, &self.config, &mut rng)?;
        let mean_return =
            trajs.iter().map(Trajectory::total_reward).sum::<f64>() / trajs.len() as f64;
        let mut order: Vec<usize> = (0..trajs.len()).collect();
        let (mut l_clip, mut l_value) = (0.0, 0.0);
        let mut losses = PpoLosses {
            l_clip: 0.0,
            l_value: 0.0,
            entropy: 0.0,
            policy_grads: Gradients::zeros(&self.policy.store),
            value_grads: Gradients::zeros(&self.value.store),
        };
        for _ in 0..self.config.updates_per_iter {
            order.shuffle(&mut rng);
            let batch: Vec<&Trajectory> = order[..self.config.minibatch_episodes]
                .iter()
                .map(|&i| &trajs[i])
                .collect();
            ppo_losses_into(&self.policy, &self.value, &batch, &self.config, &mut losses)?;
            if let Some(max) = self.config.max_grad_norm {
                losses.policy_grads.clip_norm(max);
                losses.value_grads.clip_norm(max);
            }
            if !losses.policy_grads.is_finite() || !losses.value_grads.is_finite() {
                return Err(Error::Numerical("non-finite gradient".into()));
            }
            self.policy
                .store
                .adam_update(&losses.policy_grads, &self.config.adam);
            self.value
                .store
                .adam_update(&losses.value_grads, &self.config.adam);
            l_clip += losses.l_clip;
            l_value += losses.l_value;
        }
        let n = self.config.updates_per_iter as f64;
        self.iteration += 1;
        Ok(MetricsRow {
            iteration: self.iteration,
            mean_return,
            l_clip: l_clip / n,
            l_value: l_value / n,
            wall_time: start.elapsed().as_secs_f64(),
        })
    }

    /// Runs until `config.iterations` iterations are complete, calling `after` once per iteration.
    pub fn train<E: Environment>(
        &mut self,
        env: &E,
        mut after: impl FnMut(&Trainer, &MetricsRow) -> Result<()>,
    ) -> Result<Vec<MetricsRow>> {
        let mut rows = Vec::new();
        while self.iteration < self.config.iterations {
            let row = self.run_iteration(env)?;
            after(self, &row)?;
            rows.push(row);
        }
        Ok(rows)
    }

    pub fn to_container(&self) -> Container {
        let mut c = Container::new(CHECKPOINT_KIND);
        c.set_meta("iteration", self.iteration);
        self.config.manifest(&mut c);
        self.policy.write_to(&mut c, "policy/");
        self.value.write_to(&mut c, "value/");
        c
    }

    /// Restores parameters, optimizer state and progress into networks of the expected architecture.
    pub fn from_container(
        c: &Container,
        policy: PolicyNet,
        value: ValueNet,
        config: TrainConfig,
    ) -> Result<Self> {
        c.expect_kind(CHECKPOINT_KIND)?;
        let mut t = Trainer::new(policy, value, config)?;
        let mut expected = Container::new("");
        config.manifest(&mut expected);
        for (k, v) in &expected.meta {
            if k == "train.mode" || k == "train.seed" {
                let found = c.meta(k)?;
                if found != v {
                    return Err(Error::Mismatch(format!(
                        "checkpoint {k} = {found}, configuration has {v}"
                    )));
                }
            }
        }
        t.policy.read_from(c, "policy/")?;
        t.value.read_from(c, "value/")?;
        t.iteration = c.meta_parse("iteration")?;
        Ok(t)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        self.to_container().save(path)
    }

    pub fn load(
        path: &Path,
        policy: PolicyNet,
        value: ValueNet,
        config: TrainConfig,
    ) -> Result<Self> {
        Trainer::from_container(&Container::load(path)?, policy, value, config)
    }
}

/// Loads only the policy parameters of a checkpoint into `policy`.
pub fn load_policy(path: &Path, policy: &mut PolicyNet) -> Result<()> {
    let c = Container::load(path)?;
    c.expect_kind(CHECKPOINT_KIND)?;
    policy.read_from(&c, "policy/")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::agent::{full_mask, NetConfig};
    use crate::env::{encode_observation, BanditEnv, BanditState};

    fn tiny() -> NetConfig {
        NetConfig {
            feature_hidden: vec![8],
            feature_out: 6,
            gru_hidden: 5,
            gru_layers: 2,
            angle_hidden: vec![8],
            freq_hidden: vec![6],
            value_hidden: vec![4],
        }
    }

    fn trainer(cfg: TrainConfig) -> Trainer {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let obs_len = BanditEnv::default().observation_len();
        let p = PolicyNet::new(&tiny(), obs_len, 4, &mut rng).unwrap();
        let v = ValueNet::new(&tiny(), obs_len, &mut rng).unwrap();
        Trainer::new(p, v, cfg).unwrap()
    }

    /// Two-step environment with zero reward everywhere.
    struct Silent;

    impl Environment for Silent {
        type State = usize;
        fn horizon(&self) -> usize {
            2
        }
        fn num_frequencies(&self) -> usize {
            4
        }
        fn num_samples(&self) -> usize {
            3
        }
        fn reset(&self, _: usize) -> Result<usize> {
            Ok(0)
        }
        fn observe(&self, s: &usize) -> Vec<f64> {
            encode_observation(2, None, &[0.1; 360], 2 - s)
        }
        fn legal_mask(&self, _: &usize) -> Vec<bool> {
            full_mask()
        }
        fn step(&self, s: &mut usize, _: SensingAction) -> Result<f64> {
            *s += 1;
            Ok(0.0)
        }
    }

    fn silent_trainer() -> Trainer {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let p = PolicyNet::new(&tiny(), Silent.observation_len(), 4, &mut rng).unwrap();
        let v = ValueNet::new(&tiny(), Silent.observation_len(), &mut rng).unwrap();
        Trainer::new(p, v, TrainConfig::default()).unwrap()
    }

    #[test]
    fn clip_formula() {
        assert!((clipped_term(2.0, 1.0, 0.2) - 1.2).abs() < 1e-15);
        assert!((clipped_term(0.5, -1.0, 0.2) + 0.8).abs() < 1e-15);
        assert_eq!(clipped_term(1.0, 0.3, 0.2), 0.3);
    }

    #[test]
    fn zero_reward_advantages_and_determinism() {
        let t = silent_trainer();
        let trajs = collect(
            &Silent,
            &t.policy,
            &t.value,
            &t.config,
            &mut t.iteration_rng(0),
        )
        .unwrap();
        assert_eq!(trajs.len(), 8);
        for tr in &trajs {
            assert_eq!(tr.steps.len(), 2);
            for s in &tr.steps {
                assert_eq!(s.advantage, s.next_value - s.value);
            }
            assert_eq!(tr.steps[1].next_value, 0.0);
            let sum: f64 = tr.steps.iter().map(|s| s.advantage).sum();
            assert!((sum - (tr.total_reward() - tr.steps[0].value)).abs() < 1e-12);
        }
        let again = collect(
            &Silent,
            &t.policy,
            &t.value,
            &t.config,
            &mut t.iteration_rng(0),
        )
        .unwrap();
        assert_eq!(trajs, again);
    }

    #[test]
    fn unchanged_parameters_give_unit_ratio() {
        let t = silent_trainer();
        let mut trajs = collect(
            &Silent,
            &t.policy,
            &t.value,
            &t.config,
            &mut t.iteration_rng(0),
        )
        .unwrap();
        for (i, tr) in trajs.iter_mut().enumerate() {
            for (k, s) in tr.steps.iter_mut().enumerate() {
                s.advantage = 0.1 * (i as f64) - 0.2 * k as f64;
            }
        }
        let batch: Vec<&Trajectory> = trajs.iter().take(4).collect();
        let l = ppo_losses(&t.policy, &t.value, &batch, &t.config).unwrap();
        let mean_adv = batch
            .iter()
            .flat_map(|t| &t.steps)
            .map(|s| s.advantage)
            .sum::<f64>()
            / 8.0;
        assert!((l.l_clip - mean_adv).abs() < 1e-12);

        // Permuting episodes leaves the mean unchanged.
        let rev: Vec<&Trajectory> = batch.iter().rev().copied().collect();
        let l2 = ppo_losses(&t.policy, &t.value, &rev, &t.config).unwrap();
        assert!((l.l_clip - l2.l_clip).abs() < 1e-12);
    }

    #[test]
    fn unit_ratio_gradient_is_vanilla_policy_gradient() {
        let t = silent_trainer();
        let mut trajs = collect(
            &Silent,
            &t.policy,
            &t.value,
            &t.config,
            &mut t.iteration_rng(0),
        )
        .unwrap();
        for (i, tr) in trajs.iter_mut().enumerate() {
            for s in tr.steps.iter_mut() {
                s.advantage = 0.3 - 0.15 * i as f64;
            }
        }
        let batch: Vec<&Trajectory> = trajs.iter().take(4).collect();
        let l = ppo_losses(&t.policy, &t.value, &batch, &t.config).unwrap();

        // −mean(α̂ · log π(a|s)) differentiated directly.
        let mut pg = Gradients::zeros(&t.policy.store);
        for tr in &batch {
            let mut tape = Tape::new(&t.policy.store);
            let mut h: Vec<Var> = t
                .policy
                .initial_hidden()
                .into_iter()
                .map(|v| tape.input(v))
                .collect();
            let mut terms = Vec::new();
            for s in &tr.steps {
                let o = tape.input(s.observation.clone());
                let st = t.policy.step(&mut tape, o, &h, &s.mask);
                let fl = t
                    .policy
                    .freq_logp(&mut tape, *st.hidden.last().unwrap(), s.action.angle);
                let la = tape.pick(st.angle_logp, s.action.angle);
                let lf = tape.pick(fl, s.action.freq_index);
                let lp = tape.add(la, lf);
                terms.push(tape.scale(lp, -s.advantage / 8.0));
                h = st.hidden;
            }
            let all = tape.concat(&terms);
            let loss = tape.sum(all);
            pg.add_assign(&tape.backward(loss));
        }
        for id in t.policy.store.ids() {
            for (a, b) in l.policy_grads.get(id).iter().zip(pg.get(id)) {
                assert!((a - b).abs() <= 1e-12 * (1.0 + b.abs()), "{a} vs {b}");
            }
        }
    }

    #[test]
    fn zero_iterations_leave_networks() {
        let mut t = trainer(TrainConfig {
            iterations: 0,
            ..Default::default()
        });
        let before = t.clone();
        let rows = t.train(&BanditEnv::default(), |_, _| Ok(())).unwrap();
        assert!(rows.is_empty());
        assert_eq!(t, before);
    }

    #[test]
    fn resume_matches_uninterrupted_run() {
        let cfg = TrainConfig {
            iterations: 3,
            seed: 11,
            ..Default::default()
        };
        let env = BanditEnv::default();
        let mut full = trainer(cfg);
        let rows = full.train(&env, |_, _| Ok(())).unwrap();

        let mut part = trainer(TrainConfig {
            iterations: 2,
            ..cfg
        });
        part.train(&env, |_, _| Ok(())).unwrap();
        let bytes = part.to_container().to_bytes();
        let fresh = trainer(cfg);
        let mut resumed = Trainer::from_container(
            &Container::from_bytes(&bytes).unwrap(),
            fresh.policy,
            fresh.value,
            cfg,
        )
        .unwrap();
        assert_eq!(resumed.iteration, 2);
        let last = resumed.train(&env, |_, _| Ok(())).unwrap();
        assert_eq!(last.len(), 1);
        assert_eq!(last[0].csv(), rows[2].csv());
        assert_eq!(resumed.policy.store, full.policy.store);
        assert_eq!(resumed.value.store, full.value.store);
    }

    #[test]
    fn rows_are_finite_and_numbered() {
        let mut t = trainer(TrainConfig {
            iterations: 2,
            ..Default::default()
        });
        let rows = t.train(&BanditEnv::default(), |_, _| Ok(())).unwrap();
        assert_eq!(
            rows.iter().map(|r| r.iteration).collect::<Vec<_>>(),
            vec![1, 2]
        );
        assert!(rows
            .iter()
            .all(|r| r.mean_return.is_finite() && r.l_clip.is_finite() && r.l_value.is_finite()));
    }

    #[test]
    fn mode_round_trip() {
        for m in [
            TrainMode::Both,
            TrainMode::FrequencyOnly,
            TrainMode::AngleOnly { freq_index: 2 },
        ] {
            assert_eq!(m.to_string().parse::<TrainMode>().unwrap(), m);
        }
        assert!("angle".parse::<TrainMode>().is_err());
    }

    #[test]
    fn frequency_only_mode_keeps_angle_head_fixed() {
        let cfg = TrainConfig {
            iterations: 1,
            mode: TrainMode::FrequencyOnly,
            ..Default::default()
        };
        let mut t = trainer(cfg);
        let angle_w = t.policy.store.find("angle_head.0.weight").unwrap();
        let before = t.policy.store.get(angle_w).to_vec();
        let env = BanditEnv::default();
        let _: BanditState = env.reset(0).unwrap();
        t.train(&env, |_, _| Ok(())).unwrap();
        assert_eq!(t.policy.store.get(angle_w), &before[..]);
    }
}
