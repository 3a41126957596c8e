use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use std::hint::black_box;

use predlab::agent_dqn::{DqnAgent, DqnConfig};
use predlab::agent_ppo::compute_gae;
use predlab::benchmark::ActionRange;
use predlab::env::{EnvConfig, Observe};
use predlab::nn::{Mlp, Mode, Tensor2};
use predlab::rng;
use predlab::sim::{simulate_factor_path, simulate_garch_path, FactorModelParams, GarchParams, NoiseKind};

fn batch(rows: usize) -> Tensor2 {
    let data = (0..rows).flat_map(|i| [0.01 * ((i % 7) as f64 - 3.0), 100.0 * (i % 11) as f64]).collect();
    Tensor2::from_vec(rows, 2, data).unwrap()
}

fn mlp(c: &mut Criterion) {
    let mut g = c.benchmark_group("mlp");
    for hidden in [[64, 32], [256, 128]] {
        let net = Mlp::new(&[2, hidden[0], hidden[1], 5], true, &mut rng::seeded(1)).unwrap();
        let x = batch(256);
        let label = format!("{}x{}", hidden[0], hidden[1]);
        g.bench_with_input(BenchmarkId::new("forward_256", &label), &x, |b, x| {
            b.iter(|| net.forward_pure(black_box(x), Mode::Train).unwrap())
        });
        let (out, cache) = net.forward_pure(&x, Mode::Train).unwrap();
        let up = Tensor2::from_vec(out.rows, out.cols, vec![1e-3; out.data.len()]).unwrap();
        g.bench_with_input(BenchmarkId::new("backward_256", &label), &up, |b, up| {
            b.iter(|| net.backward(&cache, black_box(up)).unwrap())
        });
        let one = batch(1);
        g.bench_with_input(BenchmarkId::new("predict_1", &label), &one, |b, x| b.iter(|| net.predict(black_box(x)).unwrap()));
    }
    g.finish();
}

fn simulation(c: &mut Criterion) {
    let factor = FactorModelParams::single(0.00535, 350.0, 0.2, 0.01);
    let garch = GarchParams { omega: 0.01, alpha: 0.05, beta: 0.94, ar_coeff: 0.9, noise: NoiseKind::Gaussian };
    c.bench_function("factor_path_10k", |b| b.iter(|| simulate_factor_path(&factor, 10_000, black_box(3)).unwrap()));
    c.bench_function("garch_path_10k", |b| b.iter(|| simulate_garch_path(&garch, 10_000, black_box(3)).unwrap()));
}

fn gae(c: &mut Criterion) {
    let rewards: Vec<f64> = (0..2000).map(|i| ((i * 37) % 101) as f64 / 50.0 - 1.0).collect();
    let values: Vec<f64> = (0..2001).map(|i| ((i * 13) % 29) as f64 / 14.0 - 1.0).collect();
    c.bench_function("gae_2000", |b| b.iter(|| compute_gae(black_box(&rewards), black_box(&values), 0.9, 0.95).unwrap()));
}

fn dqn_training(c: &mut Criterion) {
    let factor = FactorModelParams::single(0.00535, 350.0, 0.2, 0.01);
    let path = simulate_factor_path(&factor, 2001, 5).unwrap();
    let env = EnvConfig {
        gamma: 0.01,
        lambda: 1e-3,
        sigma_sq: 1e-4,
        rho: 0.9,
        r_f: 0.0,
        episode_len: 2000,
        action_range: Some(ActionRange::new(-3000.0, 3000.0).unwrap()),
        observe: Observe::Returns,
    };
    let cfg = DqnConfig { hidden: vec![64, 32], ..DqnConfig::default() };
    let mut g = c.benchmark_group("dqn");
    g.sample_size(10);
    g.bench_function("train_1000_steps", |b| {
        b.iter(|| {
            let mut agent = DqnAgent::new(cfg.clone(), env.action_range.unwrap(), 0.9, 1000, 7).unwrap();
            let mut h = 0.0;
            agent.train_on_path(&env, &path, 0, 1000, &mut h).unwrap()
        })
    });
    g.finish();
}

criterion_group!(benches, mlp, simulation, gae, dqn_training);
criterion_main!(benches);
