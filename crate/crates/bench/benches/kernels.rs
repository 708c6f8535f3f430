use std::hint::black_box;
use std::sync::Arc;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use scatter_rl_bench::{far_field, weak_scatterer};
use scatter_rl_core::agent::full_mask;
use scatter_rl_core::env::{observation_len, EnvConfig};
use scatter_rl_core::forward::{
    assemble_kernel, forward, forward_vjp, ForwardOptions, FrequencyBank,
};
use scatter_rl_core::recon::{lbfgs_run, LbfgsOptions, ReconstructionProblem};
use scatter_rl_core::{NetConfig, PolicyNet, SensingEnv};

fn kernel_assembly(c: &mut Criterion) {
    let mut g = c.benchmark_group("assemble_kernel");
    for n in [8usize, 16, 24] {
        let d = far_field(n);
        g.bench_with_input(BenchmarkId::from_parameter(n), &d, |b, d| {
            b.iter(|| assemble_kernel(black_box(d), 16.0, &ForwardOptions::default()).unwrap())
        });
    }
    g.finish();
}

fn born_forward_and_adjoint(c: &mut Criterion) {
    let d = far_field(16);
    let bank = FrequencyBank::build(&d, &[16.0], &ForwardOptions::default()).unwrap();
    let eta = weak_scatterer(&d, 0);
    let receivers: Vec<usize> = (0..6).map(|k| 60 * k).collect();
    let cot = vec![Complex64::new(1.0, -0.5); receivers.len()];
    let mut g = c.benchmark_group("born_n16");
    for order in 1..=3 {
        g.bench_with_input(BenchmarkId::new("forward", order), &order, |b, &o| {
            b.iter(|| {
                forward(
                    black_box(&eta.values),
                    &bank.kernels[0],
                    &bank.probes[0],
                    0,
                    &receivers,
                    o,
                )
                .unwrap()
            })
        });
        g.bench_with_input(BenchmarkId::new("vjp", order), &order, |b, &o| {
            b.iter(|| {
                forward_vjp(
                    black_box(&eta.values),
                    &bank.kernels[0],
                    &bank.probes[0],
                    0,
                    &receivers,
                    o,
                    &cot,
                )
                .unwrap()
            })
        });
    }
    g.finish();
}

fn lbfgs_inner_solve(c: &mut Criterion) {
    let d = far_field(16);
    let menu = vec![4.0, 8.0, 12.0, 16.0];
    let bank = FrequencyBank::build(&d, &menu, &ForwardOptions::default()).unwrap();
    let eta = weak_scatterer(&d, 1);
    let mut records = Vec::new();
    let mut angles = Vec::new();
    for k in 0..6 {
        angles.push(60 * k);
        records.push(
            bank.forward(&eta.values, k % 4, 60 * k, &angles, 2)
                .unwrap(),
        );
    }
    let problem = ReconstructionProblem::new(&bank, &records, 2, 0.1, 1e-6).unwrap();
    let init = vec![0.0; d.len()];
    let opts = LbfgsOptions::default();
    let mut g = c.benchmark_group("lbfgs_n16_t6");
    g.sample_size(20);
    for iters in [3usize, 20] {
        g.bench_with_input(BenchmarkId::from_parameter(iters), &iters, |b, &it| {
            b.iter(|| lbfgs_run(&problem, black_box(&init), it, &opts).unwrap())
        });
    }
    g.finish();
}

fn policy_step(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let horizon = 6;
    let obs: Vec<f64> = (0..observation_len(horizon))
        .map(|_| rng.gen_range(-1.0..1.0))
        .collect();
    let mut g = c.benchmark_group("policy_act");
    g.sample_size(20);
    for (name, cfg) in [
        (
            "small",
            NetConfig {
                feature_hidden: vec![64],
                feature_out: 32,
                gru_hidden: 32,
                gru_layers: 1,
                angle_hidden: vec![64],
                freq_hidden: vec![64],
                value_hidden: vec![64],
            },
        ),
        ("default", NetConfig::default()),
    ] {
        let policy = PolicyNet::new(&cfg, obs.len(), 4, &mut rng).unwrap();
        let hidden = policy.initial_hidden();
        g.bench_function(name, |b| {
            b.iter(|| {
                policy
                    .policy_angle(&hidden, black_box(&obs), &full_mask())
                    .unwrap()
            })
        });
    }
    g.finish();
}

fn env_episode(c: &mut Criterion) {
    let d = far_field(16);
    let menu = vec![4.0, 8.0, 12.0, 16.0];
    let bank = Arc::new(FrequencyBank::build(&d, &menu, &ForwardOptions::default()).unwrap());
    let env = SensingEnv::new(EnvConfig::new(d, 6, menu, 2), bank).unwrap();
    let truth = weak_scatterer(&d, 3);
    let mut g = c.benchmark_group("episode_n16_t6");
    g.sample_size(10);
    g.bench_function("uniform", |b| {
        b.iter(|| {
            let mut s = env.reset(&truth).unwrap();
            for k in 0..6 {
                env.step(
                    &mut s,
                    scatter_rl_core::SensingAction {
                        angle: 60 * k,
                        freq_index: k % 4,
                    },
                )
                .unwrap();
            }
            env.final_reconstruct(&s).unwrap()
        })
    });
    g.finish();
}

criterion_group!(
    benches,
    kernel_assembly,
    born_forward_and_adjoint,
    lbfgs_inner_solve,
    policy_step,
    env_episode
);
criterion_main!(benches);
