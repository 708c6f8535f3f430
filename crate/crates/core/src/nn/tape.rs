use super::params::{Gradients, ParamId, ParameterStore};

/// Handle to a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

#[derive(Debug, Clone)]
enum Op {
    Input,
    Affine {
        w: ParamId,
        b: Option<ParamId>,
        x: Var,
    },
    Relu(Var),
    Sigmoid(Var),
    Tanh(Var),
    Exp(Var),
    Square(Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Min(Var, Var),
    OneMinus(Var),
    Scale(Var, f64),
    AddScalar(Var),
    Clamp(Var, f64, f64),
    Concat(Vec<Var>),
    Slice(Var, usize),
    Sum(Var),
    Pick(Var, usize),
    LogSoftmax {
        x: Var,
        mask: Option<Vec<bool>>,
    },
    Entropy(Var),
}

struct Node {
    value: Vec<f64>,
    op: Op,
}

/// Records a computation over a frozen [`ParameterStore`] for reverse-mode differentiation.
pub struct Tape<'s> {
    store: &'s ParameterStore,
    nodes: Vec<Node>,
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Inner product with eight independent accumulators so the loop vectorises.
fn dot(a: &[f64], b: &[f64]) -> f64 {
    let mut acc = [0.0; 8];
    let (ca, cb) = (a.chunks_exact(8), b.chunks_exact(8));
    let (ra, rb) = (ca.remainder(), cb.remainder());
    for (x, y) in ca.zip(cb) {
        for k in 0..8 {
            acc[k] += x[k] * y[k];
        }
    }
    let mut tail = 0.0;
    for (x, y) in ra.iter().zip(rb) {
        tail += x * y;
    }
    ((acc[0] + acc[4]) + (acc[1] + acc[5])) + ((acc[2] + acc[6]) + (acc[3] + acc[7])) + tail
}

/// Log-softmax over the entries where `mask` is true; masked entries get `-inf`.
///
/// Panics if the mask has no true entry.
pub fn log_softmax(logits: &[f64], mask: Option<&[bool]>) -> Vec<f64> {
    let on = |i: usize| mask.is_none_or(|m| m[i]);
    let max = (0..logits.len())
        .filter(|&i| on(i))
        .map(|i| logits[i])
        .fold(f64::NEG_INFINITY, f64::max);
    assert!(
        max > f64::NEG_INFINITY,
        "log_softmax needs at least one unmasked entry"
    );
    let lse = max
        + (0..logits.len())
            .filter(|&i| on(i))
            .map(|i| (logits[i] - max).exp())
            .sum::<f64>()
            .ln();
    (0..logits.len())
        .map(|i| {
            if on(i) {
                logits[i] - lse
            } else {
                f64::NEG_INFINITY
            }
        })
        .collect()
}

impl<'s> Tape<'s> {
    pub fn new(store: &'s ParameterStore) -> Self {
        Tape {
            store,
            nodes: Vec::new(),
        }
    }

    pub fn store(&self) -> &ParameterStore {
        self.store
    }

    fn push(&mut self, value: Vec<f64>, op: Op) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &[f64] {
        &self.nodes[v.0].value
    }

    pub fn scalar(&self, v: Var) -> f64 {
        let val = self.value(v);
        assert_eq!(val.len(), 1, "not a scalar");
        val[0]
    }

    pub fn input(&mut self, value: Vec<f64>) -> Var {
        self.push(value, Op::Input)
    }

    fn map(&mut self, x: Var, f: impl Fn(f64) -> f64, op: Op) -> Var {
        let v = self.value(x).iter().map(|&a| f(a)).collect();
        self.push(v, op)
    }

    fn zip(&mut self, a: Var, b: Var, f: impl Fn(f64, f64) -> f64, op: Op) -> Var {
        let (va, vb) = (self.value(a), self.value(b));
        assert_eq!(va.len(), vb.len(), "operand lengths differ");
        let v = va.iter().zip(vb).map(|(&x, &y)| f(x, y)).collect();
        self.push(v, op)
    }

    /// `W x + b` with `W` stored row-major as `[out, in]`.
    pub fn affine(&mut self, w: ParamId, b: Option<ParamId>, x: Var) -> Var {
        let shape = self.store.shape(w);
        let (rows, cols) = (shape[0], shape[1]);
        let xv = self.value(x);
        assert_eq!(
            xv.len(),
            cols,
            "affine input width mismatch for {}",
            self.store.name(w)
        );
        let wv = self.store.get(w);
        let mut y = match b {
            Some(b) => self.store.get(b).to_vec(),
            None => vec![0.0; rows],
        };
        for (r, yr) in y.iter_mut().enumerate() {
            *yr += dot(&wv[r * cols..(r + 1) * cols], xv);
        }
        self.push(y, Op::Affine { w, b, x })
    }

    pub fn relu(&mut self, x: Var) -> Var {
        self.map(x, |a| a.max(0.0), Op::Relu(x))
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        self.map(x, sigmoid, Op::Sigmoid(x))
    }

    pub fn tanh(&mut self, x: Var) -> Var {
        self.map(x, f64::tanh, Op::Tanh(x))
    }

    pub fn exp(&mut self, x: Var) -> Var {
        self.map(x, f64::exp, Op::Exp(x))
    }

    pub fn square(&mut self, x: Var) -> Var {
        self.map(x, |a| a * a, Op::Square(x))
    }

    pub fn one_minus(&mut self, x: Var) -> Var {
        self.map(x, |a| 1.0 - a, Op::OneMinus(x))
    }

    pub fn scale(&mut self, x: Var, c: f64) -> Var {
        self.map(x, |a| c * a, Op::Scale(x, c))
    }

    pub fn add_scalar(&mut self, x: Var, c: f64) -> Var {
        self.map(x, |a| a + c, Op::AddScalar(x))
    }

    /// Elementwise clamp; the gradient is passed only inside `[lo, hi]`.
    pub fn clamp(&mut self, x: Var, lo: f64, hi: f64) -> Var {
        self.map(x, |a| a.clamp(lo, hi), Op::Clamp(x, lo, hi))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        self.zip(a, b, |x, y| x + y, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        self.zip(a, b, |x, y| x - y, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        self.zip(a, b, |x, y| x * y, Op::Mul(a, b))
    }

    /// Elementwise minimum; ties send the gradient to `a`.
    pub fn min(&mut self, a: Var, b: Var) -> Var {
        self.zip(a, b, f64::min, Op::Min(a, b))
    }

    pub fn concat(&mut self, parts: &[Var]) -> Var {
        let v = parts
            .iter()
            .flat_map(|&p| self.value(p).iter().copied())
            .collect();
        self.push(v, Op::Concat(parts.to_vec()))
    }

    pub fn slice(&mut self, x: Var, start: usize, len: usize) -> Var {
        let v = self.value(x)[start..start + len].to_vec();
        self.push(v, Op::Slice(x, start))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let s = self.value(x).iter().sum();
        self.push(vec![s], Op::Sum(x))
    }

    pub fn mean(&mut self, x: Var) -> Var {
        let n = self.value(x).len() as f64;
        let s = self.sum(x);
        self.scale(s, 1.0 / n)
    }

    pub fn pick(&mut self, x: Var, index: usize) -> Var {
        let v = self.value(x)[index];
        self.push(vec![v], Op::Pick(x, index))
    }

    /// Masked log-softmax; masked entries are `-inf` and receive no gradient.
    pub fn log_softmax(&mut self, x: Var, mask: Option<&[bool]>) -> Var {
        if let Some(m) = mask {
            assert_eq!(m.len(), self.value(x).len(), "mask length mismatch");
        }
        let v = log_softmax(self.value(x), mask);
        self.push(
            v,
            Op::LogSoftmax {
                x,
                mask: mask.map(<[bool]>::to_vec),
            },
        )
    }

    /// `−Σ p log p` of a log-probability vector, skipping `-inf` entries.
    pub fn entropy(&mut self, logp: Var) -> Var {
        let h = -self
            .value(logp)
            .iter()
            .filter(|l| l.is_finite())
            .map(|&l| l.exp() * l)
            .sum::<f64>();
        self.push(vec![h], Op::Entropy(logp))
    }

    /// Reverse pass from the scalar `loss`.
    pub fn backward(&self, loss: Var) -> Gradients {
        let mut g = Gradients::zeros(self.store);
        self.backward_into(loss, &mut g);
        g
    }

    /// Like [`Tape::backward`], but adds the parameter gradients into `pgrads`.
    pub fn backward_into(&self, loss: Var, pgrads: &mut Gradients) {
        assert_eq!(self.value(loss).len(), 1, "backward needs a scalar loss");
        let mut adj: Vec<Option<Vec<f64>>> = vec![None; loss.0 + 1];
        adj[loss.0] = Some(vec![1.0]);

        fn acc(adj: &mut [Option<Vec<f64>>], v: Var, n: usize) -> &mut Vec<f64> {
            adj[v.0].get_or_insert_with(|| vec![0.0; n])
        }

        for i in (0..=loss.0).rev() {
            let Some(g) = adj[i].take() else { continue };
            let node = &self.nodes[i];
            let out = &node.value;
            match &node.op {
                Op::Input => {}
                Op::Affine { w, b, x } => {
                    let xv = self.value(*x);
                    let cols = xv.len();
                    let wv = self.store.get(*w);
                    if let Some(b) = b {
                        pgrads
                            .get_mut(*b)
                            .iter_mut()
                            .zip(&g)
                            .for_each(|(d, gi)| *d += gi);
                    }
                    let gw = pgrads.get_mut(*w);
                    for (r, &gr) in g.iter().enumerate() {
                        if gr != 0.0 {
                            gw[r * cols..(r + 1) * cols]
                                .iter_mut()
                                .zip(xv)
                                .for_each(|(d, xj)| *d += gr * xj);
                        }
                    }
                    if matches!(self.nodes[x.0].op, Op::Input) {
                        continue;
                    }
                    let gx = acc(&mut adj, *x, cols);
                    for (r, &gr) in g.iter().enumerate() {
                        if gr != 0.0 {
                            gx.iter_mut()
                                .zip(&wv[r * cols..(r + 1) * cols])
                                .for_each(|(d, wij)| *d += gr * wij);
                        }
                    }
                }
                Op::Relu(x) => {
                    let gx = acc(&mut adj, *x, g.len());
                    for j in 0..g.len() {
                        if out[j] > 0.0 {
                            gx[j] += g[j];
                        }
                    }
                }
                Op::Sigmoid(x) => {
                    let gx = acc(&mut adj, *x, g.len());
                    for j in 0..g.len() {
                        gx[j] += g[j] * out[j] * (1.0 - out[j]);
                    }
                }
                Op::Tanh(x) => {
                    let gx = acc(&mut adj, *x, g.len());
                    for j in 0..g.len() {
                        gx[j] += g[j] * (1.0 - out[j] * out[j]);
                    }
                }
                Op::Exp(x) => {
                    let gx = acc(&mut adj, *x, g.len());
                    for j in 0..g.len() {
                        gx[j] += g[j] * out[j];
                    }
                }
                Op::Square(x) => {
                    let xv = self.value(*x);
                    let gx = acc(&mut adj, *x, g.len());
                    for j in 0..g.len() {
                        gx[j] += 2.0 * g[j] * xv[j];
                    }
                }
                Op::Add(a, b) => {
                    acc(&mut adj, *a, g.len())
                        .iter_mut()
                        .zip(&g)
                        .for_each(|(d, gi)| *d += gi);
                    acc(&mut adj, *b, g.len())
                        .iter_mut()
                        .zip(&g)
                        .for_each(|(d, gi)| *d += gi);
                }
                Op::Sub(a, b) => {
                    acc(&mut adj, *a, g.len())
                        .iter_mut()
                        .zip(&g)
                        .for_each(|(d, gi)| *d += gi);
                    acc(&mut adj, *b, g.len())
                        .iter_mut()
                        .zip(&g)
                        .for_each(|(d, gi)| *d -= gi);
                }
                Op::Mul(a, b) => {
                    let (va, vb) = (self.value(*a), self.value(*b));
                    acc(&mut adj, *a, g.len())
                        .iter_mut()
                        .enumerate()
                        .for_each(|(j, d)| *d += g[j] * vb[j]);
                    acc(&mut adj, *b, g.len())
                        .iter_mut()
                        .enumerate()
                        .for_each(|(j, d)| *d += g[j] * va[j]);
                }
                Op::Min(a, b) => {
                    let (va, vb) = (self.value(*a), self.value(*b));
                    let first: Vec<bool> = va.iter().zip(vb).map(|(x, y)| x <= y).collect();
                    acc(&mut adj, *a, g.len())
                        .iter_mut()
                        .enumerate()
                        .filter(|(j, _)| first[*j])
                        .for_each(|(j, d)| *d += g[j]);
                    acc(&mut adj, *b, g.len())
                        .iter_mut()
                        .enumerate()
                        .filter(|(j, _)| !first[*j])
                        .for_each(|(j, d)| *d += g[j]);
                }
                Op::OneMinus(x) => {
                    acc(&mut adj, *x, g.len())
                        .iter_mut()
                        .zip(&g)
                        .for_each(|(d, gi)| *d -= gi);
                }
                Op::Scale(x, c) => {
                    acc(&mut adj, *x, g.len())
                        .iter_mut()
                        .zip(&g)
                        .for_each(|(d, gi)| *d += c * gi);
                }
                Op::AddScalar(x) => {
                    acc(&mut adj, *x, g.len())
                        .iter_mut()
                        .zip(&g)
                        .for_each(|(d, gi)| *d += gi);
                }
                Op::Clamp(x, lo, hi) => {
                    let xv = self.value(*x);
                    let gx = acc(&mut adj, *x, g.len());
                    for j in 0..g.len() {
                        if xv[j] >= *lo && xv[j] <= *hi {
                            gx[j] += g[j];
                        }
                    }
                }
                Op::Concat(parts) => {
                    let mut off = 0;
                    for p in parts {
                        let n = self.value(*p).len();
                        acc(&mut adj, *p, n)
                            .iter_mut()
                            .zip(&g[off..off + n])
                            .for_each(|(d, gi)| *d += gi);
                        off += n;
                    }
                }
                Op::Slice(x, start) => {
                    let n = self.value(*x).len();
                    acc(&mut adj, *x, n)[*start..start + g.len()]
                        .iter_mut()
                        .zip(&g)
                        .for_each(|(d, gi)| *d += gi);
                }
                Op::Sum(x) => {
                    let n = self.value(*x).len();
                    acc(&mut adj, *x, n).iter_mut().for_each(|d| *d += g[0]);
                }
                Op::Pick(x, idx) => {
                    let n = self.value(*x).len();
                    acc(&mut adj, *x, n)[*idx] += g[0];
                }
                Op::LogSoftmax { x, mask } => {
                    let on = |j: usize| mask.as_ref().is_none_or(|m| m[j]);
                    let total: f64 = (0..g.len()).filter(|&j| on(j)).map(|j| g[j]).sum();
                    let gx = acc(&mut adj, *x, g.len());
                    for j in 0..g.len() {
                        if on(j) {
                            gx[j] += g[j] - out[j].exp() * total;
                        }
                    }
                }
                Op::Entropy(lp) => {
                    // H = −Σ p l with p = e^l over a normalised distribution; ∂H/∂l_j = −p_j (l_j + 1).
                    let lv = self.value(*lp);
                    let gx = acc(&mut adj, *lp, lv.len());
                    for j in 0..lv.len() {
                        if lv[j].is_finite() {
                            gx[j] -= g[0] * lv[j].exp() * (lv[j] + 1.0);
                        }
                    }
                }
            }
        }
    }
}
