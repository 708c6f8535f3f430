use rand::Rng;

use crate::container::{Container, NamedTensor};
use crate::error::{invalid, Error, Result};

/// Handle to one tensor of a [`ParameterStore`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ParamId(pub(crate) usize);

/// Named parameter tensors plus their Adam moments.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ParameterStore {
    names: Vec<String>,
    shapes: Vec<Vec<usize>>,
    values: Vec<Vec<f64>>,
    first_moment: Vec<Vec<f64>>,
    second_moment: Vec<Vec<f64>>,
    step: u64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            lr: 4e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

impl ParameterStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, shape: Vec<usize>, values: Vec<f64>) -> ParamId {
        let name = name.into();
        assert_eq!(
            shape.iter().product::<usize>(),
            values.len(),
            "parameter {name} has the wrong size"
        );
        assert!(!self.names.contains(&name), "duplicate parameter {name}");
        let n = values.len();
        self.names.push(name);
        self.shapes.push(shape);
        self.values.push(values);
        self.first_moment.push(vec![0.0; n]);
        self.second_moment.push(vec![0.0; n]);
        ParamId(self.values.len() - 1)
    }

    /// Adds a `[rows, cols]` weight drawn from U(−1/√cols, 1/√cols).
    pub fn add_weight<R: Rng + ?Sized>(
        &mut self,
        name: &str,
        rows: usize,
        cols: usize,
        rng: &mut R,
    ) -> ParamId {
        let bound = 1.0 / (cols as f64).sqrt();
        let values = (0..rows * cols)
            .map(|_| rng.gen_range(-bound..bound))
            .collect();
        self.add(name, vec![rows, cols], values)
    }

    pub fn add_zeros(&mut self, name: &str, shape: Vec<usize>) -> ParamId {
        let n = shape.iter().product();
        self.add(name, shape, vec![0.0; n])
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.values.len()).map(ParamId)
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn shape(&self, id: ParamId) -> &[usize] {
        &self.shapes[id.0]
    }

    pub fn get(&self, id: ParamId) -> &[f64] {
        &self.values[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut [f64] {
        &mut self.values[id.0]
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.names.iter().position(|n| n == name).map(ParamId)
    }

    pub fn step(&self) -> u64 {
        self.step
    }

    pub fn num_scalars(&self) -> usize {
        self.values.iter().map(Vec::len).sum()
    }

    /// Sets every parameter to zero.
    pub fn zero_all(&mut self) {
        for v in &mut self.values {
            v.iter_mut().for_each(|x| *x = 0.0);
        }
    }

    /// One bias-corrected Adam step descending along `grads`.
    pub fn adam_update(&mut self, grads: &Gradients, cfg: &AdamConfig) {
        assert_eq!(
            grads.grads.len(),
            self.values.len(),
            "gradient set does not match the store"
        );
        self.step += 1;
        let t = self.step as i32;
        let c1 = 1.0 - cfg.beta1.powi(t);
        let c2 = 1.0 - cfg.beta2.powi(t);
        let (b1, b2) = (cfg.beta1, cfg.beta2);
        for i in 0..self.values.len() {
            let g = &grads.grads[i];
            let (p, m, v) = (
                &mut self.values[i],
                &mut self.first_moment[i],
                &mut self.second_moment[i],
            );
            for (((p, m), v), &g) in p.iter_mut().zip(m.iter_mut()).zip(v.iter_mut()).zip(g) {
                *m = b1 * *m + (1.0 - b1) * g;
                *v = b2 * *v + (1.0 - b2) * g * g;
                *p -= cfg.lr * (*m / c1) / ((*v / c2).sqrt() + cfg.eps);
            }
        }
    }

    /// Appends parameters, moments and the step counter to `c` under `prefix`.
    pub fn write_to(&self, c: &mut Container, prefix: &str) {
        c.set_meta(format!("{prefix}adam_step"), self.step.to_string());
        for i in 0..self.values.len() {
            let name = format!("{prefix}{}", self.names[i]);
            let shape = self.shapes[i].clone();
            c.push(NamedTensor {
                name: name.clone(),
                shape: shape.clone(),
                data: self.values[i].clone(),
            });
            c.push(NamedTensor {
                name: format!("{name}#m"),
                shape: shape.clone(),
                data: self.first_moment[i].clone(),
            });
            c.push(NamedTensor {
                name: format!("{name}#v"),
                shape,
                data: self.second_moment[i].clone(),
            });
        }
    }

    /// Restores values written by [`ParameterStore::write_to`]; names and shapes must match.
    pub fn read_from(&mut self, c: &Container, prefix: &str) -> Result<()> {
        let step: u64 = c.meta_parse(&format!("{prefix}adam_step"))?;
        let expected: usize = self.len() * 3;
        let present = c
            .tensors
            .iter()
            .filter(|t| t.name.starts_with(prefix))
            .count();
        if present != expected {
            return Err(Error::Mismatch(format!(
                "checkpoint has {present} tensors under '{prefix}', architecture expects {expected}"
            )));
        }
        let mut values = Vec::with_capacity(self.len());
        let mut m = Vec::with_capacity(self.len());
        let mut v = Vec::with_capacity(self.len());
        for i in 0..self.len() {
            let name = format!("{prefix}{}", self.names[i]);
            for (suffix, dest) in [("", &mut values), ("#m", &mut m), ("#v", &mut v)] {
                let t = c.tensor(&format!("{name}{suffix}"))?;
                if t.shape != self.shapes[i] {
                    return Err(Error::Mismatch(format!(
                        "parameter {name}{suffix} has shape {:?}, architecture expects {:?}",
                        t.shape, self.shapes[i]
                    )));
                }
                dest.push(t.data.clone());
            }
        }
        self.values = values;
        self.first_moment = m;
        self.second_moment = v;
        self.step = step;
        Ok(())
    }

    /// Copies parameter values (not optimizer state) from a store with the same layout.
    pub fn copy_values_from(&mut self, other: &ParameterStore) -> Result<()> {
        if self.names != other.names || self.shapes != other.shapes {
            return Err(invalid("parameter layouts differ"));
        }
        self.values = other.values.clone();
        Ok(())
    }
}

/// Gradients for every parameter of a store, same layout.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub(crate) grads: Vec<Vec<f64>>,
}

impl Gradients {
    pub fn zeros(store: &ParameterStore) -> Self {
        Gradients {
            grads: store.values.iter().map(|v| vec![0.0; v.len()]).collect(),
        }
    }

    pub fn get(&self, id: ParamId) -> &[f64] {
        &self.grads[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut [f64] {
        &mut self.grads[id.0]
    }

    /// Resets every entry to zero, keeping the allocation.
    pub fn fill_zero(&mut self) {
        self.grads.iter_mut().for_each(|g| g.fill(0.0));
    }

    pub fn add_assign(&mut self, other: &Gradients) {
        for (a, b) in self.grads.iter_mut().zip(&other.grads) {
            a.iter_mut().zip(b).for_each(|(x, y)| *x += y);
        }
    }

    pub fn scale(&mut self, c: f64) {
        self.grads.iter_mut().flatten().for_each(|x| *x *= c);
    }

    pub fn global_norm(&self) -> f64 {
        self.grads
            .iter()
            .flatten()
            .map(|x| x * x)
            .sum::<f64>()
            .sqrt()
    }

    /// Rescales so the global norm is at most `max_norm`.
    pub fn clip_norm(&mut self, max_norm: f64) {
        let n = self.global_norm();
        if n > max_norm {
            self.scale(max_norm / n);
        }
    }

    pub fn is_finite(&self) -> bool {
        self.grads.iter().flatten().all(|x| x.is_finite())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn store() -> (ParameterStore, ParamId) {
        let mut s = ParameterStore::new();
        let id = s.add("w", vec![3], vec![1.0, -2.0, 0.5]);
        (s, id)
    }

    #[test]
    fn zero_gradient_leaves_parameters() {
        let (mut s, id) = store();
        let g = Gradients::zeros(&s);
        s.adam_update(&g, &AdamConfig::default());
        assert_eq!(s.get(id), &[1.0, -2.0, 0.5]);
        assert_eq!(s.step(), 1);
    }

    #[test]
    fn first_step_closed_form() {
        let (mut s, id) = store();
        let mut g = Gradients::zeros(&s);
        g.get_mut(id).copy_from_slice(&[0.3, -4.0, 1e-3]);
        let cfg = AdamConfig {
            lr: 0.01,
            ..Default::default()
        };
        s.adam_update(&g, &cfg);
        // m̂ = g, v̂ = g², so the update is lr·g/(|g|+eps).
        for (p, (p0, gi)) in s
            .get(id)
            .iter()
            .zip([1.0, -2.0, 0.5].iter().zip([0.3f64, -4.0, 1e-3]))
        {
            let expected = p0 - 0.01 * gi / (gi.abs() + 1e-8);
            assert!((p - expected).abs() < 1e-15);
        }
    }

    #[test]
    fn two_steps_differ_from_one_doubled() {
        let (mut a, id) = store();
        let mut b = a.clone();
        let mut g = Gradients::zeros(&a);
        g.get_mut(id).copy_from_slice(&[0.3, -0.2, 0.1]);
        let cfg = AdamConfig {
            lr: 0.01,
            ..Default::default()
        };
        a.adam_update(&g, &cfg);
        g.get_mut(id).copy_from_slice(&[0.05, 0.4, -0.1]);
        a.adam_update(&g, &cfg);
        b.adam_update(&g, &AdamConfig { lr: 0.02, ..cfg });
        assert_ne!(a.get(id), b.get(id));
    }

    #[test]
    fn sign_flip_keeps_second_moment() {
        let (mut a, id) = store();
        let mut b = a.clone();
        let mut g = Gradients::zeros(&a);
        g.get_mut(id).copy_from_slice(&[0.3, -0.2, 0.1]);
        a.adam_update(&g, &AdamConfig::default());
        g.scale(-1.0);
        b.adam_update(&g, &AdamConfig::default());
        assert_eq!(a.second_moment, b.second_moment);
    }

    #[test]
    fn checkpoint_round_trip_and_mismatch() {
        let (mut s, id) = store();
        let mut g = Gradients::zeros(&s);
        g.get_mut(id).copy_from_slice(&[0.3, -0.2, 0.1]);
        s.adam_update(&g, &AdamConfig::default());
        let mut c = Container::new("test");
        s.write_to(&mut c, "p/");
        let c = Container::from_bytes(&c.to_bytes()).unwrap();
        let mut r = store().0;
        r.read_from(&c, "p/").unwrap();
        assert_eq!(r, s);

        let mut other = ParameterStore::new();
        other.add("w", vec![4], vec![0.0; 4]);
        assert!(matches!(other.read_from(&c, "p/"), Err(Error::Mismatch(_))));
    }

    #[test]
    fn clip_norm_bounds() {
        let (s, id) = store();
        let mut g = Gradients::zeros(&s);
        g.get_mut(id).copy_from_slice(&[3.0, 4.0, 0.0]);
        g.clip_norm(1.0);
        assert!((g.global_norm() - 1.0).abs() < 1e-12);
    }
}
