use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use scatter_rl_core::dataset::{calibrate_intensity, sample_rng, CalibrationProbe, GeneratorTag};
use scatter_rl_core::domain::{make_domain, Geometry};
use scatter_rl_core::forward::{forward, forward_vjp, ForwardOptions, FrequencyBank};
use scatter_rl_core::recon::{gradient, objective, ReconstructionProblem};

fn random_vec(rng: &mut ChaCha8Rng, n: usize, lo: f64, hi: f64) -> Vec<f64> {
    (0..n).map(|_| rng.gen_range(lo..hi)).collect()
}

fn shifted(x: &[f64], h: f64, v: &[f64]) -> Vec<f64> {
    x.iter().zip(v).map(|(a, b)| a + h * b).collect()
}

fn rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-300)
}

#[test]
fn vjp_matches_finite_differences_for_every_order_and_geometry() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for geometry in [Geometry::FarField, Geometry::Seismic] {
        let d = make_domain(geometry, 8).unwrap();
        let bank = FrequencyBank::build(&d, &[6.0, 12.0], &ForwardOptions::default()).unwrap();
        let eta = random_vec(&mut rng, d.len(), -0.1, 0.1);
        let receivers = [10usize, 95, 200, 301];
        for order in 1..=3 {
            for f in 0..2 {
                let (k, p) = (&bank.kernels[f], &bank.probes[f]);
                let cot: Vec<Complex64> = (0..receivers.len())
                    .map(|_| Complex64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)))
                    .collect();
                let pairing = |e: &[f64]| -> f64 {
                    let r = forward(e, k, p, 95, &receivers, order).unwrap();
                    r.data
                        .iter()
                        .zip(&cot)
                        .map(|(d, c)| (c.conj() * d).re)
                        .sum()
                };
                let g = forward_vjp(&eta, k, p, 95, &receivers, order, &cot).unwrap();
                for _ in 0..5 {
                    let v = random_vec(&mut rng, d.len(), -1.0, 1.0);
                    let h = 1e-5;
                    let fd = (pairing(&shifted(&eta, h, &v)) - pairing(&shifted(&eta, -h, &v)))
                        / (2.0 * h);
                    let an: f64 = g.iter().zip(&v).map(|(a, b)| a * b).sum();
                    assert!(
                        rel(fd, an) <= 1e-5,
                        "{geometry:?} order {order}: fd {fd} vs {an}"
                    );
                }
            }
        }
    }
}

#[test]
fn order_one_vjp_closed_form() {
    let d = make_domain(Geometry::FarField, 6).unwrap();
    let bank = FrequencyBank::build(&d, &[8.0], &ForwardOptions::default()).unwrap();
    let (k, p) = (&bank.kernels[0], &bank.probes[0]);
    let eta = vec![0.05; d.len()];
    let rx = [0usize, 90];
    let cot = [Complex64::new(0.3, -0.2), Complex64::new(-1.0, 0.5)];
    let g = forward_vjp(&eta, k, p, 45, &rx, 1, &cot).unwrap();
    let b = p.source(45).unwrap();
    for m in 0..d.len() {
        let mut s = Complex64::new(0.0, 0.0);
        for (j, &a) in rx.iter().enumerate() {
            s += cot[j].conj() * p.receiver(a).unwrap()[m] * b[m];
        }
        assert!((g[m] - s.re).abs() < 1e-12);
    }
}

#[test]
fn objective_examples() {
    let d = make_domain(Geometry::FarField, 8).unwrap();
    let bank = FrequencyBank::build(&d, &[8.0, 16.0], &ForwardOptions::default()).unwrap();
    let probe = CalibrationProbe::new(&d, 16.0, &ForwardOptions::default()).unwrap();
    let raw = GeneratorTag::TriOval.generate(&d, &mut sample_rng(0, 0, 0));
    let eta = calibrate_intensity(&raw, &probe, 2, 1.0 / 6.0)
        .unwrap()
        .field;
    let records = vec![
        bank.forward(&eta.values, 0, 0, &[0], 2).unwrap(),
        bank.forward(&eta.values, 1, 90, &[0, 90], 2).unwrap(),
    ];
    let (lambda, eps) = (0.1, 1e-6);
    let problem = ReconstructionProblem::new(&bank, &records, 2, lambda, eps).unwrap();

    let zero = vec![0.0; d.len()];
    let data_norm: f64 = records
        .iter()
        .flat_map(|r| &r.data)
        .map(|z| z.norm_sqr())
        .sum();
    let expect = data_norm + lambda * d.len() as f64 * eps;
    assert!(rel(objective(&problem, &zero).unwrap(), expect) < 1e-12);

    let l1: f64 = eta.values.iter().map(|v| (v * v + eps * eps).sqrt()).sum();
    assert!(rel(objective(&problem, &eta.values).unwrap(), lambda * l1) < 1e-9);

    let empty = ReconstructionProblem::new(&bank, &[], 2, 0.0, eps).unwrap();
    assert_eq!(objective(&empty, &eta.values).unwrap(), 0.0);
    assert!(gradient(&empty, &eta.values)
        .unwrap()
        .iter()
        .all(|&g| g == 0.0));

    // Zero misfit at zero iterate: both terms are stationary.
    let blank = vec![bank.forward(&zero, 0, 0, &[0, 45], 2).unwrap()];
    let at_zero = ReconstructionProblem::new(&bank, &blank, 2, lambda, eps).unwrap();
    assert!(gradient(&at_zero, &zero).unwrap().iter().all(|&g| g == 0.0));

    assert!(objective(&problem, &zero[1..]).is_err());
}

#[test]
fn objective_gradient_matches_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let d = make_domain(Geometry::FarField, 8).unwrap();
    let bank = FrequencyBank::build(&d, &[4.0, 12.0], &ForwardOptions::default()).unwrap();
    let truth = random_vec(&mut rng, d.len(), 0.0, 0.1);
    let records = vec![
        bank.forward(&truth, 0, 0, &[0, 120, 240], 3).unwrap(),
        bank.forward(&truth, 1, 120, &[0, 120], 3).unwrap(),
    ];
    let problem = ReconstructionProblem::new(&bank, &records, 3, 0.1, 1e-6).unwrap();
    for _ in 0..10 {
        let x: Vec<f64> = (0..d.len())
            .map(|_| rng.gen_range(0.01..0.1) * if rng.gen_bool(0.5) { 1.0 } else { -1.0 })
            .collect();
        let g = gradient(&problem, &x).unwrap();
        let v = random_vec(&mut rng, d.len(), -1.0, 1.0);
        let h = 1e-6;
        let fd = (objective(&problem, &shifted(&x, h, &v)).unwrap()
            - objective(&problem, &shifted(&x, -h, &v)).unwrap())
            / (2.0 * h);
        let an: f64 = g.iter().zip(&v).map(|(a, b)| a * b).sum();
        assert!(rel(fd, an) <= 1e-5, "fd {fd} vs {an}");
    }
}
