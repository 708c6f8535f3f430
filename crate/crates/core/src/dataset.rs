//! Intensity calibration against the Born-term ratio and scatterer datasets.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::container::{Container, NamedTensor};
use crate::domain::{
    gen_circles, gen_triangles_ovals, make_domain, DomainSpec, Geometry, ScattererField,
};
use crate::error::{invalid, Error, Result};
use crate::forward::{
    assemble_kernel, dot_u, probe_vectors, BornPass, ForwardOptions, GreensKernel, ProbeSet,
    NUM_ANGLES,
};

/// Which random shape family a dataset is drawn from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GeneratorTag {
    TriOval,
    Circles,
}

impl GeneratorTag {
    pub fn as_str(self) -> &'static str {
        match self {
            GeneratorTag::TriOval => "tri-oval",
            GeneratorTag::Circles => "circles",
        }
    }

    pub fn generate(self, domain: &DomainSpec, rng: &mut ChaCha8Rng) -> ScattererField {
        match self {
            GeneratorTag::TriOval => gen_triangles_ovals(domain, rng),
            GeneratorTag::Circles => gen_circles(domain, rng),
        }
    }
}

impl fmt::Display for GeneratorTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for GeneratorTag {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "tri-oval" => Ok(GeneratorTag::TriOval),
            "circles" => Ok(GeneratorTag::Circles),
            other => Err(invalid(format!(
                "unknown generator '{other}' (expected tri-oval or circles)"
            ))),
        }
    }
}

/// Kernel and probes used to measure the nonlinearity of a scatterer:
/// source at angle 0, all 360 receivers, frequency `omega_ref`.
pub struct CalibrationProbe {
    pub kernel: GreensKernel,
    pub probes: ProbeSet,
}

impl CalibrationProbe {
    pub fn new(domain: &DomainSpec, omega_ref: f64, opts: &ForwardOptions) -> Result<Self> {
        let kernel = assemble_kernel(domain, omega_ref, opts)?;
        let angles: Vec<usize> = (0..NUM_ANGLES).collect();
        let probes = probe_vectors(domain, omega_ref, &angles, opts)?;
        Ok(CalibrationProbe { kernel, probes })
    }

    /// ‖second-order term‖₂ / ‖first-order term‖₂ over all receivers.
    pub fn term_ratio(&self, eta: &[f64]) -> Result<f64> {
        let pass = BornPass::run(eta, &self.kernel, self.probes.source(0)?, 2);
        let (mut first, mut second) = (0.0, 0.0);
        for a in &self.probes.receiver_vectors {
            first += dot_u(a, pass.term(0)).norm_sqr();
            second += dot_u(a, pass.term(1)).norm_sqr();
        }
        if first == 0.0 {
            return Err(Error::Calibration("first-order data vanishes".into()));
        }
        Ok((second / first).sqrt())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Calibrated {
    pub field: ScattererField,
    pub scale: f64,
    pub ratio: f64,
}

const MAX_DOUBLINGS: usize = 100;
const BISECTION_STEPS: usize = 200;

/// Rescales `field` so that its second/first Born-term norm ratio hits `target_ratio`.
///
/// The ratio grows linearly with the scale, so after bracketing by doubling or
/// halving the bisection converges to the unique crossing.
pub fn calibrate_intensity(
    field: &ScattererField,
    probe: &CalibrationProbe,
    order: usize,
    target_ratio: f64,
) -> Result<Calibrated> {
    if order < 2 {
        return Err(invalid("calibration needs a nonlinear model (order >= 2)"));
    }
    if !(target_ratio > 0.0 && target_ratio < 1.0) {
        return Err(invalid(format!(
            "target ratio must lie in (0, 1), got {target_ratio}"
        )));
    }
    if field.is_zero() {
        return Err(Error::Calibration(
            "cannot calibrate an all-zero field".into(),
        ));
    }
    let ratio_at = |c: f64| probe.term_ratio(&field.scaled(c).values);

    let (mut lo, mut hi) = (1.0, 1.0);
    let mut found = false;
    if ratio_at(1.0)? < target_ratio {
        for _ in 0..MAX_DOUBLINGS {
            hi *= 2.0;
            if ratio_at(hi)? >= target_ratio {
                found = true;
                break;
            }
            lo = hi;
        }
    } else {
        for _ in 0..MAX_DOUBLINGS {
            lo *= 0.5;
            if ratio_at(lo)? <= target_ratio {
                found = true;
                break;
            }
            hi = lo;
        }
    }
    if !found {
        return Err(Error::Calibration(format!(
            "could not bracket target ratio {target_ratio} after {MAX_DOUBLINGS} doublings"
        )));
    }

    for _ in 0..BISECTION_STEPS {
        let mid = 0.5 * (lo + hi);
        if ratio_at(mid)? < target_ratio {
            lo = mid;
        } else {
            hi = mid;
        }
        if (hi - lo) <= 1e-14 * hi {
            break;
        }
    }
    let scale = 0.5 * (lo + hi);
    let calibrated = field.scaled(scale);
    let ratio = probe.term_ratio(&calibrated.values)?;
    if !(0.9 * target_ratio..=1.1 * target_ratio).contains(&ratio) {
        return Err(Error::Calibration(format!(
            "achieved ratio {ratio} misses target {target_ratio}"
        )));
    }
    Ok(Calibrated {
        field: calibrated,
        scale,
        ratio,
    })
}

/// Calibrated training and test scatterers.
#[derive(Debug, Clone, PartialEq)]
pub struct ScattererDataset {
    pub domain: DomainSpec,
    pub train: Vec<ScattererField>,
    pub test: Vec<ScattererField>,
    pub generator_tag: GeneratorTag,
    pub seed: u64,
}

/// Settings for [`build_dataset`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DatasetSpec {
    pub generator: GeneratorTag,
    pub n_train: usize,
    pub n_test: usize,
    pub omega_ref: f64,
    pub order: usize,
    pub target_ratio: f64,
    pub seed: u64,
}

/// Independent RNG stream for sample `index` of split `split` (0 = train, 1 = test).
pub fn sample_rng(seed: u64, split: u64, index: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream((split << 32) | index as u64);
    rng
}

pub fn build_dataset(
    domain: &DomainSpec,
    spec: &DatasetSpec,
    opts: &ForwardOptions,
) -> Result<ScattererDataset> {
    if spec.n_train == 0 || spec.n_test == 0 {
        return Err(invalid(
            "dataset needs at least one training and one test sample",
        ));
    }
    let probe = CalibrationProbe::new(domain, spec.omega_ref, opts)?;
    let make = |split: u64, i: usize| -> Result<ScattererField> {
        let mut rng = sample_rng(spec.seed, split, i);
        // Redraw the (rare) empty field, which cannot be calibrated.
        for _ in 0..64 {
            let raw = spec.generator.generate(domain, &mut rng);
            if !raw.is_zero() {
                return Ok(calibrate_intensity(&raw, &probe, spec.order, spec.target_ratio)?.field);
            }
        }
        Err(Error::Calibration(format!(
            "generator produced only empty fields for sample {i}"
        )))
    };
    let train = (0..spec.n_train)
        .into_par_iter()
        .map(|i| make(0, i))
        .collect::<Result<Vec<_>>>()?;
    let test = (0..spec.n_test)
        .into_par_iter()
        .map(|i| make(1, i))
        .collect::<Result<Vec<_>>>()?;
    Ok(ScattererDataset {
        domain: *domain,
        train,
        test,
        generator_tag: spec.generator,
        seed: spec.seed,
    })
}

impl ScattererDataset {
    pub fn to_container(&self) -> Container {
        let mut c = Container::new("dataset");
        c.set_meta("geometry", self.domain.geometry);
        c.set_meta("rows", self.domain.rows);
        c.set_meta("generator", self.generator_tag);
        c.set_meta("seed", self.seed);
        let n = self.domain.len();
        let flat = |fields: &[ScattererField]| {
            fields
                .iter()
                .flat_map(|f| f.values.iter().copied())
                .collect()
        };
        c.push(NamedTensor::new(
            "train",
            vec![self.train.len(), n],
            flat(&self.train),
        ));
        c.push(NamedTensor::new(
            "test",
            vec![self.test.len(), n],
            flat(&self.test),
        ));
        c
    }

    pub fn from_container(c: &Container) -> Result<Self> {
        c.expect_kind("dataset")?;
        let geometry: Geometry = c.meta("geometry")?.parse()?;
        let domain = make_domain(geometry, c.meta_parse("rows")?)?;
        let generator_tag: GeneratorTag = c.meta("generator")?.parse()?;
        let seed = c.meta_parse("seed")?;
        let unpack = |name: &str| -> Result<Vec<ScattererField>> {
            let t = c.tensor(name)?;
            if t.shape.len() != 2 || t.shape[1] != domain.len() {
                return Err(Error::Format(format!(
                    "tensor '{name}' has shape {:?}",
                    t.shape
                )));
            }
            t.data
                .chunks_exact(domain.len())
                .map(|v| ScattererField::new(domain, v.to_vec()))
                .collect::<Result<Vec<_>>>()
                .map_err(|e| Error::Format(e.to_string()))
        };
        Ok(ScattererDataset {
            domain,
            train: unpack("train")?,
            test: unpack("test")?,
            generator_tag,
            seed,
        })
    }
}

pub fn save_dataset(dataset: &ScattererDataset, path: &Path) -> Result<()> {
    dataset.to_container().save(path)
}

pub fn load_dataset(path: &Path) -> Result<ScattererDataset> {
    ScattererDataset::from_container(&Container::load(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::gen_triangles_ovals;

    fn probe(n: usize, omega: f64) -> (DomainSpec, CalibrationProbe) {
        let d = make_domain(Geometry::FarField, n).unwrap();
        let p = CalibrationProbe::new(&d, omega, &ForwardOptions::default()).unwrap();
        (d, p)
    }

    #[test]
    fn calibration_hits_target_ratios() {
        let (d, p) = probe(12, 8.0);
        let raw = gen_triangles_ovals(&d, &mut sample_rng(5, 0, 0));
        for target in [1.0 / 6.0, 0.5] {
            let cal = calibrate_intensity(&raw, &p, 2, target).unwrap();
            let measured = p.term_ratio(&cal.field.values).unwrap();
            assert!(
                (measured - target).abs() <= 1e-6 * target,
                "{measured} vs {target}"
            );
            assert!(cal.scale > 0.0);
        }
    }

    #[test]
    fn ratio_scales_linearly() {
        let (d, p) = probe(10, 8.0);
        let raw = gen_triangles_ovals(&d, &mut sample_rng(9, 0, 0));
        let cal = calibrate_intensity(&raw, &p, 2, 1.0 / 6.0).unwrap();
        let r1 = p.term_ratio(&cal.field.values).unwrap();
        let r2 = p.term_ratio(&cal.field.scaled(2.0).values).unwrap();
        assert!((r2 / r1 - 2.0).abs() < 1e-10);
    }

    #[test]
    fn calibration_rejects_bad_inputs() {
        let (d, p) = probe(8, 8.0);
        let zero = ScattererField::zeros(d);
        assert!(matches!(
            calibrate_intensity(&zero, &p, 2, 0.2),
            Err(Error::Calibration(_))
        ));
        let raw = gen_triangles_ovals(&d, &mut sample_rng(1, 0, 0));
        assert!(calibrate_intensity(&raw, &p, 1, 0.2).is_err());
        assert!(calibrate_intensity(&raw, &p, 2, 1.5).is_err());
        assert!(calibrate_intensity(&raw, &p, 2, 0.0).is_err());
    }

    fn tiny_spec(seed: u64) -> DatasetSpec {
        DatasetSpec {
            generator: GeneratorTag::TriOval,
            n_train: 2,
            n_test: 1,
            omega_ref: 8.0,
            order: 2,
            target_ratio: 1.0 / 6.0,
            seed,
        }
    }

    #[test]
    fn dataset_is_deterministic_with_disjoint_splits() {
        let d = make_domain(Geometry::FarField, 8).unwrap();
        let opts = ForwardOptions::default();
        let a = build_dataset(&d, &tiny_spec(4), &opts).unwrap();
        let b = build_dataset(&d, &tiny_spec(4), &opts).unwrap();
        assert_eq!(a, b);
        assert_eq!((a.train.len(), a.test.len()), (2, 1));
        assert_ne!(a.train[0], a.test[0]);
        assert!(a
            .train
            .iter()
            .chain(&a.test)
            .all(|f| f.values.iter().all(|&v| v >= 0.0)));
        let mut bad = tiny_spec(4);
        bad.n_test = 0;
        assert!(build_dataset(&d, &bad, &opts).is_err());
    }

    #[test]
    fn dataset_file_round_trip_and_errors() {
        let d = make_domain(Geometry::Seismic, 4).unwrap();
        let ds = build_dataset(&d, &tiny_spec(11), &ForwardOptions::default()).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ds.bin");
        save_dataset(&ds, &path).unwrap();
        assert_eq!(load_dataset(&path).unwrap(), ds);

        let bytes = std::fs::read(&path).unwrap();
        std::fs::write(&path, &bytes[..bytes.len() - 3]).unwrap();
        assert!(matches!(load_dataset(&path), Err(Error::Format(_))));

        let mut versioned = bytes.clone();
        versioned[8..12].copy_from_slice(&99u32.to_le_bytes());
        std::fs::write(&path, &versioned).unwrap();
        assert!(matches!(load_dataset(&path), Err(Error::Version { .. })));
    }

    #[test]
    fn generator_tags_parse() {
        assert_eq!(
            "tri-oval".parse::<GeneratorTag>().unwrap(),
            GeneratorTag::TriOval
        );
        assert_eq!(
            "circles".parse::<GeneratorTag>().unwrap(),
            GeneratorTag::Circles
        );
        assert!("mnist".parse::<GeneratorTag>().is_err());
    }
}
