use rand::Rng;

use super::params::{ParamId, ParameterStore};
use super::tape::{Tape, Var};
use crate::error::{invalid, Result};

/// Widths of a dense stack, input first. ReLU between layers, none after the last.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MlpSpec {
    pub widths: Vec<usize>,
}

impl MlpSpec {
    pub fn new(widths: Vec<usize>) -> Result<Self> {
        if widths.len() < 2 || widths.contains(&0) {
            return Err(invalid(
                "an MLP needs at least one layer of positive widths",
            ));
        }
        Ok(MlpSpec { widths })
    }

    pub fn input(&self) -> usize {
        self.widths[0]
    }

    pub fn output(&self) -> usize {
        *self.widths.last().unwrap()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    pub spec: MlpSpec,
    layers: Vec<(ParamId, ParamId)>,
}

impl Mlp {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParameterStore,
        name: &str,
        spec: MlpSpec,
        rng: &mut R,
    ) -> Self {
        let layers = spec
            .widths
            .windows(2)
            .enumerate()
            .map(|(i, w)| {
                let weight = store.add_weight(&format!("{name}.{i}.weight"), w[1], w[0], rng);
                let bias = store.add_zeros(&format!("{name}.{i}.bias"), vec![w[1]]);
                (weight, bias)
            })
            .collect();
        Mlp { spec, layers }
    }

    pub fn layer_params(&self) -> &[(ParamId, ParamId)] {
        &self.layers
    }

    pub fn forward(&self, tape: &mut Tape<'_>, x: Var) -> Var {
        let mut h = x;
        for (i, &(w, b)) in self.layers.iter().enumerate() {
            h = tape.affine(w, Some(b), h);
            if i + 1 < self.layers.len() {
                h = tape.relu(h);
            }
        }
        h
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct GruStackSpec {
    pub input: usize,
    pub hidden: usize,
    pub layers: usize,
}

impl GruStackSpec {
    pub fn validate(&self) -> Result<()> {
        if self.input == 0 || self.hidden == 0 || self.layers == 0 {
            return Err(invalid("GRU widths and depth must be positive"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct GruLayer {
    /// Update and reset gates stacked: `[2H, in + H]`.
    w_gates: ParamId,
    b_gates: ParamId,
    w_cand: ParamId,
    u_cand: ParamId,
    b_cand: ParamId,
    hidden: usize,
}

impl GruLayer {
    fn step(&self, tape: &mut Tape<'_>, x: Var, h: Var) -> Var {
        let xh = tape.concat(&[x, h]);
        let gates = tape.affine(self.w_gates, Some(self.b_gates), xh);
        let gates = tape.sigmoid(gates);
        let z = tape.slice(gates, 0, self.hidden);
        let r = tape.slice(gates, self.hidden, self.hidden);
        let rh = tape.mul(r, h);
        let wx = tape.affine(self.w_cand, Some(self.b_cand), x);
        let uh = tape.affine(self.u_cand, None, rh);
        let pre = tape.add(wx, uh);
        let cand = tape.tanh(pre);
        let keep = tape.one_minus(z);
        let old = tape.mul(keep, h);
        let new = tape.mul(z, cand);
        tape.add(old, new)
    }
}

/// Stacked GRU; layer `l` consumes the new hidden state of layer `l − 1`.
#[derive(Debug, Clone, PartialEq)]
pub struct GruStack {
    pub spec: GruStackSpec,
    layers: Vec<GruLayer>,
}

impl GruStack {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParameterStore,
        name: &str,
        spec: GruStackSpec,
        rng: &mut R,
    ) -> Self {
        let h = spec.hidden;
        let layers = (0..spec.layers)
            .map(|l| {
                let input = if l == 0 { spec.input } else { h };
                GruLayer {
                    w_gates: store.add_weight(
                        &format!("{name}.{l}.w_gates"),
                        2 * h,
                        input + h,
                        rng,
                    ),
                    b_gates: store.add_zeros(&format!("{name}.{l}.b_gates"), vec![2 * h]),
                    w_cand: store.add_weight(&format!("{name}.{l}.w_cand"), h, input, rng),
                    u_cand: store.add_weight(&format!("{name}.{l}.u_cand"), h, h, rng),
                    b_cand: store.add_zeros(&format!("{name}.{l}.b_cand"), vec![h]),
                    hidden: h,
                }
            })
            .collect();
        GruStack { spec, layers }
    }

    /// Zero hidden states, one per layer.
    pub fn initial_state(&self) -> Vec<Vec<f64>> {
        vec![vec![0.0; self.spec.hidden]; self.spec.layers]
    }

    /// One time step; returns the new per-layer hidden states (the last is the output).
    pub fn step(&self, tape: &mut Tape<'_>, x: Var, hidden: &[Var]) -> Vec<Var> {
        assert_eq!(
            hidden.len(),
            self.layers.len(),
            "one hidden state per layer"
        );
        let mut input = x;
        let mut out = Vec::with_capacity(self.layers.len());
        for (layer, &h) in self.layers.iter().zip(hidden) {
            let h_new = layer.step(tape, input, h);
            out.push(h_new);
            input = h_new;
        }
        out
    }
}
