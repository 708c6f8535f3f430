//! Recurrent policy (angle head, then angle-conditioned frequency head) and value networks.

use rand::Rng;

use crate::container::Container;
use crate::env::SensingAction;
use crate::error::{invalid, Error, Result};
use crate::forward::NUM_ANGLES;
use crate::nn::{
    argmax, categorical_sample, GruStack, GruStackSpec, Mlp, MlpSpec, ParameterStore, Tape, Var,
};

/// Layer widths of both networks.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NetConfig {
    pub feature_hidden: Vec<usize>,
    pub feature_out: usize,
    pub gru_hidden: usize,
    pub gru_layers: usize,
    pub angle_hidden: Vec<usize>,
    pub freq_hidden: Vec<usize>,
    pub value_hidden: Vec<usize>,
}

impl Default for NetConfig {
    fn default() -> Self {
        NetConfig {
            feature_hidden: vec![512, 512],
            feature_out: 256,
            gru_hidden: 256,
            gru_layers: 3,
            angle_hidden: vec![512],
            freq_hidden: vec![512, 512],
            value_hidden: vec![512],
        }
    }
}

fn widths(input: usize, hidden: &[usize], output: usize) -> Result<MlpSpec> {
    let mut w = vec![input];
    w.extend_from_slice(hidden);
    w.push(output);
    MlpSpec::new(w)
}

fn list(v: &[usize]) -> String {
    v.iter().map(usize::to_string).collect::<Vec<_>>().join(",")
}

impl NetConfig {
    fn manifest(&self, c: &mut Container, prefix: &str, obs_len: usize, num_freqs: usize) {
        c.set_meta(format!("{prefix}obs_len"), obs_len);
        c.set_meta(format!("{prefix}num_freqs"), num_freqs);
        c.set_meta(
            format!("{prefix}feature_hidden"),
            list(&self.feature_hidden),
        );
        c.set_meta(format!("{prefix}feature_out"), self.feature_out);
        c.set_meta(format!("{prefix}gru_hidden"), self.gru_hidden);
        c.set_meta(format!("{prefix}gru_layers"), self.gru_layers);
        c.set_meta(format!("{prefix}angle_hidden"), list(&self.angle_hidden));
        c.set_meta(format!("{prefix}freq_hidden"), list(&self.freq_hidden));
        c.set_meta(format!("{prefix}value_hidden"), list(&self.value_hidden));
    }

    fn check_manifest(
        &self,
        c: &Container,
        prefix: &str,
        obs_len: usize,
        num_freqs: usize,
    ) -> Result<()> {
        let mut expected = Container::new("");
        self.manifest(&mut expected, prefix, obs_len, num_freqs);
        for (k, v) in &expected.meta {
            let found = c.meta(k)?;
            if found != v {
                return Err(Error::Mismatch(format!(
                    "checkpoint {k} = {found}, network expects {v}"
                )));
            }
        }
        Ok(())
    }
}

/// Feature MLP followed by the GRU stack, shared layout of both networks.
#[derive(Debug, Clone, PartialEq)]
struct Torso {
    features: Mlp,
    gru: GruStack,
}

impl Torso {
    fn new<R: Rng + ?Sized>(
        store: &mut ParameterStore,
        cfg: &NetConfig,
        obs_len: usize,
        rng: &mut R,
    ) -> Result<Self> {
        let features = Mlp::new(
            store,
            "features",
            widths(obs_len, &cfg.feature_hidden, cfg.feature_out)?,
            rng,
        );
        let spec = GruStackSpec {
            input: cfg.feature_out,
            hidden: cfg.gru_hidden,
            layers: cfg.gru_layers,
        };
        spec.validate()?;
        let gru = GruStack::new(store, "gru", spec, rng);
        Ok(Torso { features, gru })
    }

    fn step(&self, tape: &mut Tape<'_>, obs: Var, hidden: &[Var]) -> Vec<Var> {
        let f = self.features.forward(tape, obs);
        let f = tape.relu(f);
        self.gru.step(tape, f, hidden)
    }
}

/// Per-layer recurrent state carried between steps.
pub type Hidden = Vec<Vec<f64>>;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ActMode {
    Sample,
    Greedy,
}

/// Actions imposed instead of being chosen by the corresponding head.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct Forced {
    pub angle: Option<usize>,
    pub freq_index: Option<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ActOutput {
    pub action: SensingAction,
    pub angle_logprob: f64,
    pub freq_logprob: f64,
    pub hidden: Hidden,
}

/// Tape nodes produced by one policy step.
pub struct PolicyStep {
    pub hidden: Vec<Var>,
    pub angle_logp: Var,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PolicyNet {
    pub store: ParameterStore,
    pub config: NetConfig,
    pub obs_len: usize,
    pub num_freqs: usize,
    torso: Torso,
    angle_head: Mlp,
    freq_head: Mlp,
}

impl PolicyNet {
    pub fn new<R: Rng + ?Sized>(
        config: &NetConfig,
        obs_len: usize,
        num_freqs: usize,
        rng: &mut R,
    ) -> Result<Self> {
        if obs_len == 0 || num_freqs == 0 {
            return Err(invalid(
                "observation length and frequency count must be positive",
            ));
        }
        let mut store = ParameterStore::new();
        let torso = Torso::new(&mut store, config, obs_len, rng)?;
        let angle_head = Mlp::new(
            &mut store,
            "angle_head",
            widths(config.gru_hidden, &config.angle_hidden, NUM_ANGLES)?,
            rng,
        );
        let freq_head = Mlp::new(
            &mut store,
            "freq_head",
            widths(
                config.gru_hidden + NUM_ANGLES,
                &config.freq_hidden,
                num_freqs,
            )?,
            rng,
        );
        Ok(PolicyNet {
            store,
            config: config.clone(),
            obs_len,
            num_freqs,
            torso,
            angle_head,
            freq_head,
        })
    }

    pub fn initial_hidden(&self) -> Hidden {
        self.torso.gru.initial_state()
    }

    /// Torso step and masked angle log-probabilities.
    pub fn step(&self, tape: &mut Tape<'_>, obs: Var, hidden: &[Var], mask: &[bool]) -> PolicyStep {
        let hidden = self.torso.step(tape, obs, hidden);
        let logits = self.angle_head.forward(tape, *hidden.last().unwrap());
        let angle_logp = tape.log_softmax(logits, Some(mask));
        PolicyStep { hidden, angle_logp }
    }

    /// Frequency log-probabilities conditioned on the top hidden state and the chosen angle.
    pub fn freq_logp(&self, tape: &mut Tape<'_>, top: Var, angle: usize) -> Var {
        let mut onehot = vec![0.0; NUM_ANGLES];
        onehot[angle] = 1.0;
        let oh = tape.input(onehot);
        let input = tape.concat(&[top, oh]);
        let logits = self.freq_head.forward(tape, input);
        tape.log_softmax(logits, None)
    }

    fn check_inputs(&self, hidden: &[Vec<f64>], obs: &[f64], mask: &[bool]) -> Result<()> {
        if obs.len() != self.obs_len {
            return Err(Error::DimensionMismatch {
                what: "observation",
                expected: self.obs_len,
                got: obs.len(),
            });
        }
        if mask.len() != NUM_ANGLES {
            return Err(Error::DimensionMismatch {
                what: "mask",
                expected: NUM_ANGLES,
                got: mask.len(),
            });
        }
        if hidden.len() != self.config.gru_layers {
            return Err(Error::DimensionMismatch {
                what: "hidden layers",
                expected: self.config.gru_layers,
                got: hidden.len(),
            });
        }
        if !mask.iter().any(|&m| m) {
            return Err(Error::IllegalAction("no legal angle left".into()));
        }
        Ok(())
    }

    /// Angle distribution and new hidden state.
    pub fn policy_angle(
        &self,
        hidden: &[Vec<f64>],
        obs: &[f64],
        mask: &[bool],
    ) -> Result<(Vec<f64>, Hidden)> {
        self.check_inputs(hidden, obs, mask)?;
        let mut tape = Tape::new(&self.store);
        let o = tape.input(obs.to_vec());
        let h: Vec<Var> = hidden.iter().map(|v| tape.input(v.clone())).collect();
        let s = self.step(&mut tape, o, &h, mask);
        let probs = tape.value(s.angle_logp).iter().map(|l| l.exp()).collect();
        Ok((
            probs,
            s.hidden.iter().map(|&v| tape.value(v).to_vec()).collect(),
        ))
    }

    /// Frequency distribution given the new hidden state and an angle.
    pub fn policy_frequency(&self, hidden: &[Vec<f64>], angle: usize) -> Result<Vec<f64>> {
        if angle >= NUM_ANGLES {
            return Err(invalid(format!("angle {angle} out of range")));
        }
        let mut tape = Tape::new(&self.store);
        let top = tape.input(
            hidden
                .last()
                .ok_or_else(|| invalid("empty hidden state"))?
                .clone(),
        );
        let lp = self.freq_logp(&mut tape, top, angle);
        Ok(tape.value(lp).iter().map(|l| l.exp()).collect())
    }

    pub fn act<R: Rng + ?Sized>(
        &self,
        hidden: &[Vec<f64>],
        obs: &[f64],
        mask: &[bool],
        mode: ActMode,
        forced: Forced,
        rng: &mut R,
    ) -> Result<ActOutput> {
        self.check_inputs(hidden, obs, mask)?;
        let mut tape = Tape::new(&self.store);
        let o = tape.input(obs.to_vec());
        let h: Vec<Var> = hidden.iter().map(|v| tape.input(v.clone())).collect();
        let s = self.step(&mut tape, o, &h, mask);
        let angle_lp = tape.value(s.angle_logp).to_vec();
        let angle = match forced.angle {
            Some(a) if a >= NUM_ANGLES || !mask[a] => {
                return Err(Error::IllegalAction(format!(
                    "forced angle {a} is not legal"
                )))
            }
            Some(a) => a,
            None => match mode {
                ActMode::Greedy => argmax(&angle_lp),
                ActMode::Sample => {
                    let probs: Vec<f64> = angle_lp.iter().map(|l| l.exp()).collect();
                    categorical_sample(&probs, rng)
                }
            },
        };
        let top = *s.hidden.last().unwrap();
        let freq_lp_var = self.freq_logp(&mut tape, top, angle);
        let freq_lp = tape.value(freq_lp_var).to_vec();
        let freq_index = match forced.freq_index {
            Some(f) if f >= self.num_freqs => {
                return Err(invalid(format!("forced frequency index {f} out of range")))
            }
            Some(f) => f,
            None => match mode {
                ActMode::Greedy => argmax(&freq_lp),
                ActMode::Sample => {
                    let probs: Vec<f64> = freq_lp.iter().map(|l| l.exp()).collect();
                    categorical_sample(&probs, rng)
                }
            },
        };
        Ok(ActOutput {
            action: SensingAction { angle, freq_index },
            angle_logprob: angle_lp[angle],
            freq_logprob: freq_lp[freq_index],
            hidden: s.hidden.iter().map(|&v| tape.value(v).to_vec()).collect(),
        })
    }

    pub fn write_to(&self, c: &mut Container, prefix: &str) {
        self.config
            .manifest(c, prefix, self.obs_len, self.num_freqs);
        self.store.write_to(c, prefix);
    }

    pub fn read_from(&mut self, c: &Container, prefix: &str) -> Result<()> {
        self.config
            .check_manifest(c, prefix, self.obs_len, self.num_freqs)?;
        self.store.read_from(c, prefix)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ValueNet {
    pub store: ParameterStore,
    pub config: NetConfig,
    pub obs_len: usize,
    torso: Torso,
    head: Mlp,
}

impl ValueNet {
    pub fn new<R: Rng + ?Sized>(config: &NetConfig, obs_len: usize, rng: &mut R) -> Result<Self> {
        if obs_len == 0 {
            return Err(invalid("observation length must be positive"));
        }
        let mut store = ParameterStore::new();
        let torso = Torso::new(&mut store, config, obs_len, rng)?;
        let head = Mlp::new(
            &mut store,
            "value_head",
            widths(config.gru_hidden, &config.value_hidden, 1)?,
            rng,
        );
        Ok(ValueNet {
            store,
            config: config.clone(),
            obs_len,
            torso,
            head,
        })
    }

    pub fn initial_hidden(&self) -> Hidden {
        self.torso.gru.initial_state()
    }

    /// Returns the scalar value node and the new hidden states.
    pub fn step(&self, tape: &mut Tape<'_>, obs: Var, hidden: &[Var]) -> (Var, Vec<Var>) {
        let hidden = self.torso.step(tape, obs, hidden);
        let v = self.head.forward(tape, *hidden.last().unwrap());
        (v, hidden)
    }

    pub fn value_estimate(&self, hidden: &[Vec<f64>], obs: &[f64]) -> Result<(f64, Hidden)> {
        if obs.len() != self.obs_len {
            return Err(Error::DimensionMismatch {
                what: "observation",
                expected: self.obs_len,
                got: obs.len(),
            });
        }
        if hidden.len() != self.config.gru_layers {
            return Err(Error::DimensionMismatch {
                what: "hidden layers",
                expected: self.config.gru_layers,
                got: hidden.len(),
            });
        }
        let mut tape = Tape::new(&self.store);
        let o = tape.input(obs.to_vec());
        let h: Vec<Var> = hidden.iter().map(|v| tape.input(v.clone())).collect();
        let (v, hs) = self.step(&mut tape, o, &h);
        Ok((
            tape.scalar(v),
            hs.iter().map(|&x| tape.value(x).to_vec()).collect(),
        ))
    }

    pub fn write_to(&self, c: &mut Container, prefix: &str) {
        self.config.manifest(c, prefix, self.obs_len, 1);
        self.store.write_to(c, prefix);
    }

    pub fn read_from(&mut self, c: &Container, prefix: &str) -> Result<()> {
        self.config.check_manifest(c, prefix, self.obs_len, 1)?;
        self.store.read_from(c, prefix)
    }
}

/// Uniform legal mask helper used by tests and stubs.
pub fn full_mask() -> Vec<bool> {
    vec![true; NUM_ANGLES]
}
