//! ℓ1-regularised least-squares reconstruction and image-quality metrics.
//!
//! The objective over all collected records is
//!
//! ```text
//! Σ_i ‖d_i − F_i(η)‖² + λ Σ_m sqrt(η_m² + ε²)
//! ```
//!
//! where the smoothed absolute value keeps L-BFGS on a differentiable problem.

use std::collections::VecDeque;
use std::str::FromStr;

use num_complex::Complex64;

use crate::error::{invalid, Error, Result};
use crate::forward::{dot_u, receiver_adjoint, BornPass, FrequencyBank, MeasurementRecord};

/// A differentiable objective for [`lbfgs_run`].
pub trait Objective {
    fn dim(&self) -> usize;
    fn value(&self, x: &[f64]) -> f64;
    fn value_and_gradient(&self, x: &[f64]) -> (f64, Vec<f64>);
}

/// Reconstruction objective over a set of measurement records.
pub struct ReconstructionProblem<'a> {
    bank: &'a FrequencyBank,
    records: &'a [MeasurementRecord],
    freq_index: Vec<usize>,
    pub order: usize,
    pub lambda: f64,
    pub eps: f64,
}

impl<'a> ReconstructionProblem<'a> {
    pub fn new(
        bank: &'a FrequencyBank,
        records: &'a [MeasurementRecord],
        order: usize,
        lambda: f64,
        eps: f64,
    ) -> Result<Self> {
        if !(lambda >= 0.0) || !(eps > 0.0) {
            return Err(invalid("lambda must be >= 0 and eps > 0"));
        }
        let freq_index = records
            .iter()
            .map(|r| {
                if r.data.len() != r.receiver_angles.len() {
                    return Err(Error::DimensionMismatch {
                        what: "record data",
                        expected: r.receiver_angles.len(),
                        got: r.data.len(),
                    });
                }
                bank.index_of(r.omega)
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(ReconstructionProblem {
            bank,
            records,
            freq_index,
            order,
            lambda,
            eps,
        })
    }

    fn penalty(&self, x: &[f64]) -> f64 {
        let e2 = self.eps * self.eps;
        self.lambda * x.iter().map(|v| (v * v + e2).sqrt()).sum::<f64>()
    }

    /// Predicted data and residual `d − F(η)` for record `i`, with the Born pass.
    fn residual(&self, i: usize, x: &[f64]) -> (BornPass, Vec<Complex64>) {
        let rec = &self.records[i];
        let k = self.freq_index[i];
        let (kernel, probes) = (&self.bank.kernels[k], &self.bank.probes[k]);
        let source = probes
            .source(rec.source_angle)
            .expect("record angles are validated by the bank");
        let pass = BornPass::run(x, kernel, source, self.order);
        let s = pass.total(self.order);
        let res = rec
            .receiver_angles
            .iter()
            .zip(&rec.data)
            .map(|(&a, d)| d - dot_u(probes.receiver(a).expect("validated angle"), &s))
            .collect();
        (pass, res)
    }

    pub fn misfit(&self, x: &[f64]) -> f64 {
        (0..self.records.len())
            .map(|i| {
                self.residual(i, x)
                    .1
                    .iter()
                    .map(|r| r.norm_sqr())
                    .sum::<f64>()
            })
            .sum()
    }
}

impl Objective for ReconstructionProblem<'_> {
    fn dim(&self) -> usize {
        self.bank.domain.len()
    }

    fn value(&self, x: &[f64]) -> f64 {
        self.misfit(x) + self.penalty(x)
    }

    fn value_and_gradient(&self, x: &[f64]) -> (f64, Vec<f64>) {
        let e2 = self.eps * self.eps;
        let mut grad: Vec<f64> = x
            .iter()
            .map(|v| self.lambda * v / (v * v + e2).sqrt())
            .collect();
        let mut misfit = 0.0;
        for i in 0..self.records.len() {
            let (pass, res) = self.residual(i, x);
            misfit += res.iter().map(|r| r.norm_sqr()).sum::<f64>();
            let cotangent: Vec<Complex64> = res.iter().map(|r| -2.0 * r).collect();
            let k = self.freq_index[i];
            let r = receiver_adjoint(
                &self.bank.probes[k],
                &self.records[i].receiver_angles,
                &cotangent,
            )
            .expect("validated angles");
            pass.accumulate_vjp(x, &self.bank.kernels[k], &r, &mut grad);
        }
        (misfit + self.penalty(x), grad)
    }
}

/// Objective value of `problem` at `x`.
pub fn objective(problem: &ReconstructionProblem<'_>, x: &[f64]) -> Result<f64> {
    check_len(problem, x)?;
    Ok(problem.value(x))
}

/// Exact gradient of [`objective`].
pub fn gradient(problem: &ReconstructionProblem<'_>, x: &[f64]) -> Result<Vec<f64>> {
    check_len(problem, x)?;
    Ok(problem.value_and_gradient(x).1)
}

fn check_len(problem: &ReconstructionProblem<'_>, x: &[f64]) -> Result<()> {
    if x.len() != problem.dim() {
        return Err(Error::DimensionMismatch {
            what: "reconstruction",
            expected: problem.dim(),
            got: x.len(),
        });
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LbfgsOptions {
    pub memory: usize,
    pub armijo_c1: f64,
    pub backtrack: f64,
    pub max_backtracks: usize,
}

impl Default for LbfgsOptions {
    fn default() -> Self {
        LbfgsOptions {
            memory: 10,
            armijo_c1: 1e-4,
            backtrack: 0.5,
            max_backtracks: 20,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
struct CurvaturePair {
    s: Vec<f64>,
    y: Vec<f64>,
    rho: f64,
}

/// Iterate, curvature memory and last objective of an L-BFGS run.
#[derive(Debug, Clone, PartialEq)]
pub struct LbfgsState {
    pub iterate: Vec<f64>,
    pub value: f64,
    gradient: Vec<f64>,
    memory: VecDeque<CurvaturePair>,
}

impl LbfgsState {
    pub fn memory_len(&self) -> usize {
        self.memory.len()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LbfgsOutcome {
    pub x: Vec<f64>,
    pub value: f64,
    pub initial_value: f64,
    pub iterations: usize,
    /// Set when a line search found no Armijo step; `x` is then the last accepted iterate.
    pub line_search_failed: bool,
    /// Objective after each accepted step, starting with the initial value.
    pub trace: Vec<f64>,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Two-loop recursion: returns `-H g`.
fn search_direction(state: &LbfgsState) -> Vec<f64> {
    let g = &state.gradient;
    let mut q = g.clone();
    let Some(last) = state.memory.back() else {
        // No curvature yet: scale so the largest component moves by one unit.
        let gmax = g.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        return g.iter().map(|v| -v / gmax).collect();
    };
    let mut alphas = Vec::with_capacity(state.memory.len());
    for p in state.memory.iter().rev() {
        let a = p.rho * dot(&p.s, &q);
        for (qi, yi) in q.iter_mut().zip(&p.y) {
            *qi -= a * yi;
        }
        alphas.push(a);
    }
    // Barzilai–Borwein scaling of the initial inverse Hessian.
    let gamma = dot(&last.s, &last.y) / dot(&last.y, &last.y);
    for qi in q.iter_mut() {
        *qi *= gamma;
    }
    for (p, a) in state.memory.iter().zip(alphas.iter().rev()) {
        let b = p.rho * dot(&p.y, &q);
        for (qi, si) in q.iter_mut().zip(&p.s) {
            *qi += (a - b) * si;
        }
    }
    q.iter().map(|v| -v).collect()
}

/// Runs at most `max_iters` L-BFGS iterations from `init` with Armijo backtracking.
pub fn lbfgs_run<O: Objective + ?Sized>(
    obj: &O,
    init: &[f64],
    max_iters: usize,
    opts: &LbfgsOptions,
) -> Result<LbfgsOutcome> {
    if max_iters == 0 {
        return Err(invalid("max_iters must be at least 1"));
    }
    if init.len() != obj.dim() {
        return Err(Error::DimensionMismatch {
            what: "initial iterate",
            expected: obj.dim(),
            got: init.len(),
        });
    }
    let (value, gradient) = obj.value_and_gradient(init);
    if !value.is_finite() {
        return Err(Error::Numerical(
            "objective is not finite at the initial iterate".into(),
        ));
    }
    let mut state = LbfgsState {
        iterate: init.to_vec(),
        value,
        gradient,
        memory: VecDeque::new(),
    };
    let mut trace = vec![value];
    let mut iterations = 0;
    let mut failed = false;

    while iterations < max_iters {
        if state.gradient.iter().all(|&g| g == 0.0) {
            break;
        }
        let mut dir = search_direction(&state);
        let mut slope = dot(&dir, &state.gradient);
        if !(slope < 0.0) {
            // Not a descent direction: drop the memory and fall back to the gradient.
            state.memory.clear();
            dir = search_direction(&state);
            slope = dot(&dir, &state.gradient);
        }

        let mut step = 1.0;
        let mut accepted = None;
        for _ in 0..=opts.max_backtracks {
            let trial: Vec<f64> = state
                .iterate
                .iter()
                .zip(&dir)
                .map(|(x, d)| x + step * d)
                .collect();
            let f = obj.value(&trial);
            if f.is_finite() && f <= state.value + opts.armijo_c1 * step * slope {
                accepted = Some((trial, f));
                break;
            }
            step *= opts.backtrack;
        }
        let Some((next, _)) = accepted else {
            failed = true;
            break;
        };

        let (f_next, g_next) = obj.value_and_gradient(&next);
        let s: Vec<f64> = next
            .iter()
            .zip(&state.iterate)
            .map(|(a, b)| a - b)
            .collect();
        let y: Vec<f64> = g_next
            .iter()
            .zip(&state.gradient)
            .map(|(a, b)| a - b)
            .collect();
        let sy = dot(&s, &y);
        if sy > 0.0 {
            if state.memory.len() == opts.memory {
                state.memory.pop_front();
            }
            state.memory.push_back(CurvaturePair {
                s,
                y,
                rho: 1.0 / sy,
            });
        }
        state.iterate = next;
        state.value = f_next;
        state.gradient = g_next;
        trace.push(f_next);
        iterations += 1;
    }

    Ok(LbfgsOutcome {
        x: state.iterate,
        value: state.value,
        initial_value: trace[0],
        iterations,
        line_search_failed: failed,
        trace,
    })
}

/// Mean squared error over all cells.
pub fn mse(estimate: &[f64], truth: &[f64]) -> Result<f64> {
    if estimate.len() != truth.len() || truth.is_empty() {
        return Err(Error::DimensionMismatch {
            what: "mse operands",
            expected: truth.len(),
            got: estimate.len(),
        });
    }
    Ok(estimate
        .iter()
        .zip(truth)
        .map(|(a, b)| (a - b) * (a - b))
        .sum::<f64>()
        / truth.len() as f64)
}

/// Peak value used in the PSNR numerator.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum PsnrPeak {
    /// Maximum of the true field, per sample.
    TrueMax,
    Fixed(f64),
}

impl FromStr for PsnrPeak {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        if s == "true-max" {
            return Ok(PsnrPeak::TrueMax);
        }
        match s.parse::<f64>() {
            Ok(v) if v > 0.0 && v.is_finite() => Ok(PsnrPeak::Fixed(v)),
            _ => Err(invalid(format!(
                "psnr peak must be 'true-max' or a positive number, got '{s}'"
            ))),
        }
    }
}

impl PsnrPeak {
    pub fn value(self, truth: &[f64]) -> f64 {
        match self {
            PsnrPeak::TrueMax => truth.iter().copied().fold(f64::NEG_INFINITY, f64::max),
            PsnrPeak::Fixed(v) => v,
        }
    }
}

/// Largest finite value, returned when the reconstruction is exact.
pub const PSNR_EXACT: f64 = f64::MAX;

pub fn psnr_from_mse(peak: f64, mse: f64) -> f64 {
    if mse == 0.0 {
        PSNR_EXACT
    } else {
        20.0 * (peak / mse.sqrt()).log10()
    }
}

/// `20 log10(MAX / sqrt(MSE))`.
pub fn psnr(estimate: &[f64], truth: &[f64], peak: PsnrPeak) -> Result<f64> {
    let max = peak.value(truth);
    if !(max > 0.0) {
        return Err(invalid(
            "PSNR is undefined for an all-zero (non-positive peak) truth",
        ));
    }
    Ok(psnr_from_mse(max, mse(estimate, truth)?))
}

#[cfg(test)]
mod tests {
    use super::*;

    /// f(x) = ½ (x − c)ᵀ A (x − c) with A = diag(a) + u uᵀ.
    struct Quadratic {
        a: Vec<f64>,
        u: Vec<f64>,
        c: Vec<f64>,
    }

    impl Quadratic {
        fn hess_mul(&self, v: &[f64]) -> Vec<f64> {
            let uv = dot(&self.u, v);
            self.a
                .iter()
                .zip(v)
                .zip(&self.u)
                .map(|((a, x), u)| a * x + u * uv)
                .collect()
        }
    }

    impl Objective for Quadratic {
        fn dim(&self) -> usize {
            self.a.len()
        }
        fn value(&self, x: &[f64]) -> f64 {
            let d: Vec<f64> = x.iter().zip(&self.c).map(|(x, c)| x - c).collect();
            0.5 * dot(&d, &self.hess_mul(&d))
        }
        fn value_and_gradient(&self, x: &[f64]) -> (f64, Vec<f64>) {
            let d: Vec<f64> = x.iter().zip(&self.c).map(|(x, c)| x - c).collect();
            let g = self.hess_mul(&d);
            (0.5 * dot(&d, &g), g)
        }
    }

    fn quad(n: usize) -> Quadratic {
        Quadratic {
            a: (0..n).map(|i| 1.0 + 3.0 * i as f64 / n as f64).collect(),
            u: (0..n).map(|i| 0.3 * ((i as f64) * 0.7).sin()).collect(),
            c: (0..n).map(|i| (i as f64 * 1.3).cos()).collect(),
        }
    }

    #[test]
    fn converges_on_convex_quadratic() {
        let q = quad(20);
        let out = lbfgs_run(&q, &vec![0.0; 20], 30, &LbfgsOptions::default()).unwrap();
        let err = out
            .x
            .iter()
            .zip(&q.c)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        assert!(
            err < 1e-8,
            "max error {err} after {} iterations",
            out.iterations
        );
    }

    #[test]
    fn stationary_start_is_returned() {
        let q = quad(5);
        let out = lbfgs_run(&q, &q.c, 10, &LbfgsOptions::default()).unwrap();
        assert_eq!(out.x, q.c);
        assert_eq!(out.iterations, 0);
    }

    #[test]
    fn trace_never_increases() {
        let q = quad(12);
        let out = lbfgs_run(&q, &vec![5.0; 12], 15, &LbfgsOptions::default()).unwrap();
        assert!(out.trace.windows(2).all(|w| w[1] <= w[0]));
        assert!(out.value <= out.initial_value);
    }

    #[test]
    fn rejects_bad_arguments() {
        let q = quad(3);
        assert!(lbfgs_run(&q, &[0.0; 3], 0, &LbfgsOptions::default()).is_err());
        assert!(lbfgs_run(&q, &[0.0; 2], 3, &LbfgsOptions::default()).is_err());
    }

    #[test]
    fn memory_is_bounded_and_pairs_are_positive() {
        let q = quad(30);
        let opts = LbfgsOptions {
            memory: 3,
            ..Default::default()
        };
        let (value, gradient) = q.value_and_gradient(&[1.0; 30]);
        let mut state = LbfgsState {
            iterate: vec![1.0; 30],
            value,
            gradient,
            memory: VecDeque::new(),
        };
        for _ in 0..6 {
            let d = search_direction(&state);
            let next: Vec<f64> = state
                .iterate
                .iter()
                .zip(&d)
                .map(|(x, d)| x + 0.5 * d)
                .collect();
            let (f, g) = q.value_and_gradient(&next);
            let s: Vec<f64> = next
                .iter()
                .zip(&state.iterate)
                .map(|(a, b)| a - b)
                .collect();
            let y: Vec<f64> = g.iter().zip(&state.gradient).map(|(a, b)| a - b).collect();
            let sy = dot(&s, &y);
            assert!(sy > 0.0);
            if state.memory.len() == opts.memory {
                state.memory.pop_front();
            }
            state.memory.push_back(CurvaturePair {
                s,
                y,
                rho: 1.0 / sy,
            });
            state.iterate = next;
            state.value = f;
            state.gradient = g;
            assert!(state.memory_len() <= 3);
        }
    }

    #[test]
    fn mse_cases() {
        let a = [0.1, 0.5, -0.2, 0.0];
        assert_eq!(mse(&a, &a).unwrap(), 0.0);
        let shifted: Vec<f64> = a.iter().map(|v| v + 0.25).collect();
        assert!((mse(&shifted, &a).unwrap() - 0.0625).abs() < 1e-15);
        let b = [0.3, -0.1, 0.4, 1.0];
        let mut acc = 0.0;
        for i in 0..4 {
            acc += (a[i] - b[i]) * (a[i] - b[i]);
        }
        assert_eq!(mse(&a, &b).unwrap(), acc / 4.0);
        assert!(mse(&a, &b[..3]).is_err());
    }

    #[test]
    fn psnr_cases() {
        assert!((psnr_from_mse(1.0, 1e-4) - 40.0).abs() < 1e-12);
        assert_eq!(psnr_from_mse(1.0, 1.0), 0.0);
        let truth = [0.0, 1.0, 0.5, 0.25];
        let est = [0.1, 0.8, 0.5, 0.3];
        let p = psnr(&est, &truth, PsnrPeak::TrueMax).unwrap();
        let t2: Vec<f64> = truth.iter().map(|v| 2.0 * v).collect();
        let e2: Vec<f64> = est.iter().map(|v| 2.0 * v).collect();
        assert!((psnr(&e2, &t2, PsnrPeak::TrueMax).unwrap() - p).abs() < 1e-12);
        assert_eq!(psnr(&truth, &truth, PsnrPeak::TrueMax).unwrap(), PSNR_EXACT);
        assert!(psnr(&est, &[0.0; 4], PsnrPeak::TrueMax).is_err());
        assert!(psnr_from_mse(1.0, 0.02) < psnr_from_mse(1.0, 0.01));
    }
}
