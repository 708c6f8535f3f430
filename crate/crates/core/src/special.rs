//! Bessel functions of integer order 0 and 1 and the Hankel functions of the
//! first kind built from them.
//!
//! Power series are used below [`SERIES_LIMIT`]; above it the Hankel asymptotic
//! expansion is summed up to its smallest term. Absolute error is below 1e-8 on
//! (0, 500].

use std::f64::consts::{FRAC_PI_4, PI};

use num_complex::Complex64;

use crate::error::{invalid, Result};

const EULER_GAMMA: f64 = 0.577_215_664_901_532_9;

/// Crossover between the power series and the asymptotic expansion.
pub const SERIES_LIMIT: f64 = 8.0;

/// J0, Y0, J1, Y1 at one point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BesselValues {
    pub j0: f64,
    pub y0: f64,
    pub j1: f64,
    pub y1: f64,
}

/// Evaluates J0, Y0, J1 and Y1 at `z > 0`.
pub fn bessel_01(z: f64) -> Result<BesselValues> {
    if !(z > 0.0) || !z.is_finite() {
        return Err(invalid(format!(
            "Bessel argument must be positive and finite, got {z}"
        )));
    }
    Ok(if z < SERIES_LIMIT {
        series(z)
    } else {
        asymptotic(z)
    })
}

/// H0^(1)(z) = J0(z) + i Y0(z).
pub fn hankel0_first_kind(z: f64) -> Result<Complex64> {
    let b = bessel_01(z)?;
    Ok(Complex64::new(b.j0, b.y0))
}

/// H1^(1)(z) = J1(z) + i Y1(z).
pub fn hankel1_first_kind(z: f64) -> Result<Complex64> {
    let b = bessel_01(z)?;
    Ok(Complex64::new(b.j1, b.y1))
}

fn series(z: f64) -> BesselValues {
    let q = 0.25 * z * z;
    let log_half = (0.5 * z).ln();

    // J0 and the harmonic-number series of Y0.
    let mut term = 1.0; // (-q)^k / (k!)^2
    let mut j0 = 0.0;
    let mut y0_tail = 0.0;
    let mut harmonic = 0.0;
    // J1 / (z/2) and the digamma series of Y1.
    let mut term1 = 1.0; // (-q)^k / (k! (k+1)!)
    let mut j1_core = 0.0;
    let mut y1_tail = 0.0;
    let mut psi_k1 = -EULER_GAMMA; // psi(k+1)
    let mut psi_k2 = 1.0 - EULER_GAMMA; // psi(k+2)

    for k in 0..80 {
        let kf = k as f64;
        if k > 0 {
            term *= -q / (kf * kf);
            term1 *= -q / (kf * (kf + 1.0));
            harmonic += 1.0 / kf;
            psi_k1 += 1.0 / kf;
            psi_k2 += 1.0 / (kf + 1.0);
        }
        j0 += term;
        y0_tail += harmonic * term;
        j1_core += term1;
        y1_tail += (psi_k1 + psi_k2) * term1;
        if k > 4 && term.abs() < 1e-18 && term1.abs() < 1e-18 {
            break;
        }
    }

    let j1 = 0.5 * z * j1_core;
    let y0 = (2.0 / PI) * ((log_half + EULER_GAMMA) * j0 - y0_tail);
    let y1 = (2.0 / PI) * log_half * j1 - 2.0 / (PI * z) - (0.5 * z / PI) * y1_tail;
    BesselValues { j0, y0, j1, y1 }
}

/// Hankel asymptotic series sum_k i^k a_k(nu) / z^k, truncated at its smallest term.
fn hankel_asymptotic_sum(nu: f64, z: f64) -> Complex64 {
    let mu = 4.0 * nu * nu;
    let mut coeff = 1.0;
    let mut sum = Complex64::new(1.0, 0.0);
    let mut i_pow = Complex64::new(1.0, 0.0);
    let mut last = f64::INFINITY;
    for k in 1..60 {
        let odd = (2 * k - 1) as f64;
        coeff *= (mu - odd * odd) / (k as f64 * 8.0 * z);
        if coeff.abs() >= last || coeff.abs() < 1e-18 {
            break;
        }
        last = coeff.abs();
        i_pow *= Complex64::i();
        sum += i_pow * coeff;
    }
    sum
}

fn asymptotic(z: f64) -> BesselValues {
    let amp = (2.0 / (PI * z)).sqrt();
    let h0 = Complex64::from_polar(amp, z - FRAC_PI_4) * hankel_asymptotic_sum(0.0, z);
    let h1 = Complex64::from_polar(amp, z - 3.0 * FRAC_PI_4) * hankel_asymptotic_sum(1.0, z);
    BesselValues {
        j0: h0.re,
        y0: h0.im,
        j1: h1.re,
        y1: h1.im,
    }
}
