//! Free-space Green's kernels, probe vectors and the truncated Born-series
//! measurement map together with its vector–Jacobian product.
//!
//! With `E = diag(eta)` the order-`k` data for a source probe `b` and a
//! receiver probe `a` is `aᵀ (E + E G E + E G E G E + ...) b`, evaluated
//! matrix-free as
//!
//! ```text
//! w1 = eta ⊙ b,  w2 = eta ⊙ (G w1),  w3 = eta ⊙ (G w2),  d = aᵀ (w1 + w2 + w3)
//! ```

use std::f64::consts::PI;
use std::path::Path;
use std::str::FromStr;

use num_complex::Complex64;
use rayon::prelude::*;

use crate::container::{Container, NamedTensor};
use crate::domain::{DomainSpec, Geometry};
use crate::error::{invalid, Error, Result};
use crate::special::{hankel0_first_kind, hankel1_first_kind};

pub const NUM_ANGLES: usize = 360;
/// Largest number of cells for which a dense kernel is assembled.
pub const MAX_KERNEL_CELLS: usize = 16384;
pub const MAX_ORDER: usize = 3;

/// How the singular self-interaction `G(x, x)` is replaced.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DiagonalRule {
    /// Average of the Green's function over a disc with the area of one cell.
    DiscAverage,
    /// Drop the self-interaction.
    Zero,
}

impl FromStr for DiagonalRule {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "disc-average" => Ok(DiagonalRule::DiscAverage),
            "zero" => Ok(DiagonalRule::Zero),
            other => Err(invalid(format!("unknown diagonal rule '{other}'"))),
        }
    }
}

impl DiagonalRule {
    pub fn as_str(self) -> &'static str {
        match self {
            DiagonalRule::DiscAverage => "disc-average",
            DiagonalRule::Zero => "zero",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ForwardOptions {
    pub diagonal: DiagonalRule,
    /// Distance of the seismic sensor line above the top edge of the domain.
    pub sensor_standoff: f64,
}

impl Default for ForwardOptions {
    fn default() -> Self {
        ForwardOptions {
            diagonal: DiagonalRule::DiscAverage,
            sensor_standoff: 0.1,
        }
    }
}

fn check_omega(omega: f64) -> Result<()> {
    if !(omega > 0.0) || !omega.is_finite() {
        return Err(invalid(format!("frequency must be positive, got {omega}")));
    }
    Ok(())
}

/// `(i/4) H0(omega r)` for `r > 0`.
fn green_at_distance(r: f64, omega: f64) -> Complex64 {
    let h = hankel0_first_kind(omega * r).expect("positive Hankel argument");
    Complex64::new(0.0, 0.25) * h
}

/// Average of `(i/4) H0(omega r)` over a disc of radius `radius`:
/// `i H1(omega R) / (2 omega R) - 1 / (pi omega^2 R^2)`.
pub fn green_disc_average(omega: f64, radius: f64) -> Result<Complex64> {
    check_omega(omega)?;
    if !(radius > 0.0) {
        return Err(invalid("disc radius must be positive"));
    }
    let z = omega * radius;
    let h1 = hankel1_first_kind(z)?;
    Ok(Complex64::new(0.0, 1.0) * h1 / (2.0 * z) - Complex64::new(1.0 / (PI * z * z), 0.0))
}

/// 2-D free-space Helmholtz Green's function between two points.
///
/// Coincident points get the disc-averaged value over a disc with the area of
/// a `cell_size × cell_size` cell.
pub fn green_value(x: [f64; 2], y: [f64; 2], omega: f64, cell_size: f64) -> Result<Complex64> {
    check_omega(omega)?;
    let r = (x[0] - y[0]).hypot(x[1] - y[1]);
    if r > 0.0 {
        Ok(green_at_distance(r, omega))
    } else {
        green_disc_average(omega, cell_size / PI.sqrt())
    }
}

/// Dense background Green's matrix between all cell centres at one frequency.
#[derive(Debug, Clone, PartialEq)]
pub struct GreensKernel {
    pub domain: DomainSpec,
    pub omega: f64,
    /// Row-major `n × n`, symmetric.
    pub g0: Vec<Complex64>,
}

pub fn assemble_kernel(
    domain: &DomainSpec,
    omega: f64,
    opts: &ForwardOptions,
) -> Result<GreensKernel> {
    check_omega(omega)?;
    let n = domain.len();
    if n > MAX_KERNEL_CELLS {
        return Err(Error::DomainTooLarge {
            cells: n,
            limit: MAX_KERNEL_CELLS,
        });
    }
    let (rows, cols) = (domain.rows, domain.cols);
    let h = domain.cell_size();

    // On a uniform grid the kernel only depends on |row offset| and |col offset|.
    let diag = match opts.diagonal {
        DiagonalRule::DiscAverage => green_disc_average(omega, h / PI.sqrt())?,
        DiagonalRule::Zero => Complex64::new(0.0, 0.0),
    };
    let table: Vec<Complex64> = (0..rows * cols)
        .into_par_iter()
        .map(|k| {
            let (dr, dc) = (k / cols, k % cols);
            if dr == 0 && dc == 0 {
                diag
            } else {
                green_at_distance(h * ((dr * dr + dc * dc) as f64).sqrt(), omega)
            }
        })
        .collect();

    let mut g0 = vec![Complex64::new(0.0, 0.0); n * n];
    g0.par_chunks_mut(n).enumerate().for_each(|(p, row)| {
        let (rp, cp) = (p / cols, p % cols);
        for (q, slot) in row.iter_mut().enumerate() {
            let (rq, cq) = (q / cols, q % cols);
            *slot = table[rp.abs_diff(rq) * cols + cp.abs_diff(cq)];
        }
    });
    Ok(GreensKernel {
        domain: *domain,
        omega,
        g0,
    })
}

impl GreensKernel {
    pub fn n(&self) -> usize {
        self.domain.len()
    }

    /// `out = G x`.
    pub fn apply(&self, x: &[Complex64], out: &mut [Complex64]) {
        let n = self.n();
        debug_assert_eq!(x.len(), n);
        for (row, o) in self.g0.chunks_exact(n).zip(out.iter_mut()) {
            let (mut re, mut im) = (0.0, 0.0);
            for (g, v) in row.iter().zip(x) {
                re += g.re * v.re - g.im * v.im;
                im += g.re * v.im + g.im * v.re;
            }
            *o = Complex64::new(re, im);
        }
    }

    pub fn to_container(&self) -> Container {
        let mut c = Container::new("kernel");
        c.set_meta("geometry", self.domain.geometry);
        c.set_meta("rows", self.domain.rows);
        c.set_meta("omega", format!("{:?}", self.omega));
        let n = self.n();
        c.push(NamedTensor::new(
            "re",
            vec![n, n],
            self.g0.iter().map(|z| z.re).collect(),
        ));
        c.push(NamedTensor::new(
            "im",
            vec![n, n],
            self.g0.iter().map(|z| z.im).collect(),
        ));
        c
    }

    pub fn from_container(c: &Container) -> Result<Self> {
        c.expect_kind("kernel")?;
        let geometry: Geometry = c.meta("geometry")?.parse()?;
        let domain = crate::domain::make_domain(geometry, c.meta_parse("rows")?)?;
        let omega: f64 = c.meta_parse("omega")?;
        let (re, im) = (c.tensor("re")?, c.tensor("im")?);
        let n = domain.len();
        if re.data.len() != n * n || im.data.len() != n * n {
            return Err(Error::Format(
                "kernel size does not match its domain".into(),
            ));
        }
        let g0 = re
            .data
            .iter()
            .zip(&im.data)
            .map(|(&a, &b)| Complex64::new(a, b))
            .collect();
        Ok(GreensKernel { domain, omega, g0 })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        self.to_container().save(path)
    }

    /// Loads a cached kernel, checking it was built for `domain` and `omega`.
    pub fn load(path: &Path, domain: &DomainSpec, omega: f64) -> Result<Self> {
        let k = Self::from_container(&Container::load(path)?)?;
        if k.domain != *domain || k.omega != omega {
            return Err(Error::Mismatch(format!(
                "cached kernel is for {} N={} omega={}",
                k.domain.geometry, k.domain.rows, k.omega
            )));
        }
        Ok(k)
    }
}

/// Source and receiver vectors for a list of sensor angles at one frequency.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbeSet {
    pub domain: DomainSpec,
    pub omega: f64,
    pub angles: Vec<usize>,
    pub source_vectors: Vec<Vec<Complex64>>,
    pub receiver_vectors: Vec<Vec<Complex64>>,
    slot: Vec<Option<usize>>,
}

/// Position of seismic sensor `angle` on the line above the domain.
pub fn seismic_sensor_position(domain: &DomainSpec, angle: usize, standoff: f64) -> [f64; 2] {
    let x = domain.x_range.0 + domain.width() * angle as f64 / NUM_ANGLES as f64;
    [x, domain.y_range.1 + standoff]
}

pub fn unit_direction(angle: usize) -> [f64; 2] {
    let t = 2.0 * PI * angle as f64 / NUM_ANGLES as f64;
    [t.cos(), t.sin()]
}

pub fn probe_vectors(
    domain: &DomainSpec,
    omega: f64,
    angles: &[usize],
    opts: &ForwardOptions,
) -> Result<ProbeSet> {
    check_omega(omega)?;
    let mut slot = vec![None; NUM_ANGLES];
    for (i, &a) in angles.iter().enumerate() {
        if a >= NUM_ANGLES {
            return Err(invalid(format!(
                "angle index {a} out of range [0, {NUM_ANGLES})"
            )));
        }
        slot[a] = Some(i);
    }
    let centers = domain.cell_centers();
    let (sources, receivers): (Vec<_>, Vec<_>) = angles
        .par_iter()
        .map(|&a| match domain.geometry {
            Geometry::FarField => {
                let s = unit_direction(a);
                let b: Vec<Complex64> = centers
                    .iter()
                    .map(|x| Complex64::from_polar(1.0, omega * (s[0] * x[0] + s[1] * x[1])))
                    .collect();
                let r = b.iter().map(|z| z.conj()).collect();
                (b, r)
            }
            Geometry::Seismic => {
                let p = seismic_sensor_position(domain, a, opts.sensor_standoff);
                let g: Vec<Complex64> = centers
                    .iter()
                    .map(|x| green_at_distance((p[0] - x[0]).hypot(p[1] - x[1]), omega))
                    .collect();
                (g.clone(), g)
            }
        })
        .unzip();
    Ok(ProbeSet {
        domain: *domain,
        omega,
        angles: angles.to_vec(),
        source_vectors: sources,
        receiver_vectors: receivers,
        slot,
    })
}

impl ProbeSet {
    fn index_of(&self, angle: usize) -> Result<usize> {
        self.slot
            .get(angle)
            .copied()
            .flatten()
            .ok_or_else(|| invalid(format!("angle {angle} is not part of this probe set")))
    }

    pub fn source(&self, angle: usize) -> Result<&[Complex64]> {
        Ok(&self.source_vectors[self.index_of(angle)?])
    }

    pub fn receiver(&self, angle: usize) -> Result<&[Complex64]> {
        Ok(&self.receiver_vectors[self.index_of(angle)?])
    }
}

/// Data collected by every receiver from one source transmission.
#[derive(Debug, Clone, PartialEq)]
pub struct MeasurementRecord {
    pub omega: f64,
    pub source_angle: usize,
    pub receiver_angles: Vec<usize>,
    pub data: Vec<Complex64>,
}

/// Intermediate Born-series fields kept for the adjoint pass.
pub(crate) struct BornPass {
    /// `incoming[k]` is the field hit by the `k+1`-th scattering: `b`, `G w1`, `G w2`.
    incoming: Vec<Vec<Complex64>>,
    /// `terms[k] = w_{k+1}`.
    terms: Vec<Vec<Complex64>>,
}

impl BornPass {
    pub(crate) fn run(
        eta: &[f64],
        kernel: &GreensKernel,
        source: &[Complex64],
        order: usize,
    ) -> Self {
        let n = eta.len();
        let mut incoming = Vec::with_capacity(order);
        let mut terms: Vec<Vec<Complex64>> = Vec::with_capacity(order);
        incoming.push(source.to_vec());
        for k in 0..order {
            if k > 0 {
                let mut gw = vec![Complex64::new(0.0, 0.0); n];
                kernel.apply(&terms[k - 1], &mut gw);
                incoming.push(gw);
            }
            terms.push(incoming[k].iter().zip(eta).map(|(u, &e)| u * e).collect());
        }
        BornPass { incoming, terms }
    }

    /// Sum of the first `upto` Born terms.
    pub(crate) fn total(&self, upto: usize) -> Vec<Complex64> {
        let mut s = self.terms[0].clone();
        for t in &self.terms[1..upto] {
            for (a, b) in s.iter_mut().zip(t) {
                *a += b;
            }
        }
        s
    }

    pub(crate) fn term(&self, k: usize) -> &[Complex64] {
        &self.terms[k]
    }

    /// Adds `d/d eta Re(rᵀ Σ_k w_k)` into `grad`.
    pub(crate) fn accumulate_vjp(
        &self,
        eta: &[f64],
        kernel: &GreensKernel,
        r: &[Complex64],
        grad: &mut [f64],
    ) {
        let order = self.terms.len();
        let n = eta.len();
        let mut adj = r.to_vec();
        let mut scratch = vec![Complex64::new(0.0, 0.0); n];
        for k in (0..order).rev() {
            for ((g, a), u) in grad.iter_mut().zip(&adj).zip(&self.incoming[k]) {
                *g += a.re * u.re - a.im * u.im;
            }
            if k > 0 {
                // adj_{k-1} = r + Gᵀ (eta ⊙ adj_k); G is symmetric.
                for ((s, a), &e) in scratch.iter_mut().zip(&adj).zip(eta) {
                    *s = a * e;
                }
                kernel.apply(&scratch, &mut adj);
                for (a, rr) in adj.iter_mut().zip(r) {
                    *a += rr;
                }
            }
        }
    }
}

pub(crate) fn dot_u(a: &[Complex64], b: &[Complex64]) -> Complex64 {
    let (mut re, mut im) = (0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        re += x.re * y.re - x.im * y.im;
        im += x.re * y.im + x.im * y.re;
    }
    Complex64::new(re, im)
}

fn check_forward_args(
    eta: &[f64],
    kernel: &GreensKernel,
    probes: &ProbeSet,
    order: usize,
) -> Result<()> {
    if !(1..=MAX_ORDER).contains(&order) {
        return Err(invalid(format!(
            "Born order must be in 1..={MAX_ORDER}, got {order}"
        )));
    }
    if kernel.omega != probes.omega {
        return Err(invalid(format!(
            "kernel frequency {} differs from probe frequency {}",
            kernel.omega, probes.omega
        )));
    }
    if eta.len() != kernel.n() {
        return Err(Error::DimensionMismatch {
            what: "scatterer",
            expected: kernel.n(),
            got: eta.len(),
        });
    }
    if probes.domain != kernel.domain {
        return Err(invalid(
            "probe set and kernel were built for different domains",
        ));
    }
    Ok(())
}

/// Truncated Born-series data `d_j = a_jᵀ (E + E G E + ...) b_src`.
pub fn forward(
    eta: &[f64],
    kernel: &GreensKernel,
    probes: &ProbeSet,
    source_angle: usize,
    receiver_angles: &[usize],
    order: usize,
) -> Result<MeasurementRecord> {
    check_forward_args(eta, kernel, probes, order)?;
    let pass = BornPass::run(eta, kernel, probes.source(source_angle)?, order);
    let s = pass.total(order);
    let data = receiver_angles
        .iter()
        .map(|&a| Ok(dot_u(probes.receiver(a)?, &s)))
        .collect::<Result<Vec<_>>>()?;
    Ok(MeasurementRecord {
        omega: kernel.omega,
        source_angle,
        receiver_angles: receiver_angles.to_vec(),
        data,
    })
}

/// `r = Σ_j conj(c_j) a_j`.
pub(crate) fn receiver_adjoint(
    probes: &ProbeSet,
    receiver_angles: &[usize],
    cotangent: &[Complex64],
) -> Result<Vec<Complex64>> {
    let mut r = vec![Complex64::new(0.0, 0.0); probes.domain.len()];
    for (&angle, c) in receiver_angles.iter().zip(cotangent) {
        let cc = c.conj();
        for (ri, a) in r.iter_mut().zip(probes.receiver(angle)?) {
            *ri += cc * a;
        }
    }
    Ok(r)
}

/// Gradient of `Re Σ_j conj(cotangent_j) d_j(eta)` with respect to `eta`.
pub fn forward_vjp(
    eta: &[f64],
    kernel: &GreensKernel,
    probes: &ProbeSet,
    source_angle: usize,
    receiver_angles: &[usize],
    order: usize,
    cotangent: &[Complex64],
) -> Result<Vec<f64>> {
    check_forward_args(eta, kernel, probes, order)?;
    if cotangent.len() != receiver_angles.len() {
        return Err(Error::DimensionMismatch {
            what: "cotangent",
            expected: receiver_angles.len(),
            got: cotangent.len(),
        });
    }
    let pass = BornPass::run(eta, kernel, probes.source(source_angle)?, order);
    let r = receiver_adjoint(probes, receiver_angles, cotangent)?;
    let mut grad = vec![0.0; eta.len()];
    pass.accumulate_vjp(eta, kernel, &r, &mut grad);
    Ok(grad)
}

/// Kernels and full 360-angle probe sets for every frequency of a menu.
#[derive(Debug, Clone)]
pub struct FrequencyBank {
    pub domain: DomainSpec,
    pub menu: Vec<f64>,
    pub kernels: Vec<GreensKernel>,
    pub probes: Vec<ProbeSet>,
}

impl FrequencyBank {
    pub fn build(domain: &DomainSpec, menu: &[f64], opts: &ForwardOptions) -> Result<Self> {
        let angles: Vec<usize> = (0..NUM_ANGLES).collect();
        let mut kernels = Vec::with_capacity(menu.len());
        let mut probes = Vec::with_capacity(menu.len());
        for &omega in menu {
            kernels.push(assemble_kernel(domain, omega, opts)?);
            probes.push(probe_vectors(domain, omega, &angles, opts)?);
        }
        Ok(FrequencyBank {
            domain: *domain,
            menu: menu.to_vec(),
            kernels,
            probes,
        })
    }

    /// Like [`FrequencyBank::build`], but reuses or fills kernel cache files in `dir`.
    pub fn build_cached(
        domain: &DomainSpec,
        menu: &[f64],
        opts: &ForwardOptions,
        dir: &Path,
    ) -> Result<Self> {
        let angles: Vec<usize> = (0..NUM_ANGLES).collect();
        let mut kernels = Vec::with_capacity(menu.len());
        let mut probes = Vec::with_capacity(menu.len());
        for &omega in menu {
            let path = dir.join(format!(
                "kernel-{}-{}-{}-{}.bin",
                domain.geometry,
                domain.rows,
                omega,
                opts.diagonal.as_str()
            ));
            let kernel = match GreensKernel::load(&path, domain, omega) {
                Ok(k) => k,
                Err(_) => {
                    let k = assemble_kernel(domain, omega, opts)?;
                    k.save(&path)?;
                    k
                }
            };
            kernels.push(kernel);
            probes.push(probe_vectors(domain, omega, &angles, opts)?);
        }
        Ok(FrequencyBank {
            domain: *domain,
            menu: menu.to_vec(),
            kernels,
            probes,
        })
    }

    pub fn index_of(&self, omega: f64) -> Result<usize> {
        self.menu.iter().position(|&w| w == omega).ok_or_else(|| {
            invalid(format!(
                "frequency {omega} is not in the menu {:?}",
                self.menu
            ))
        })
    }

    pub fn forward(
        &self,
        eta: &[f64],
        freq_index: usize,
        source_angle: usize,
        receiver_angles: &[usize],
        order: usize,
    ) -> Result<MeasurementRecord> {
        let k = self
            .kernels
            .get(freq_index)
            .ok_or_else(|| invalid(format!("frequency index {freq_index} out of range")))?;
        forward(
            eta,
            k,
            &self.probes[freq_index],
            source_angle,
            receiver_angles,
            order,
        )
    }
}
