//! Acceptance suite: one pass/fail line per criterion, nonzero exit if any
//! fails. Pass criterion numbers as arguments to run a subset, e.g.
//! `cargo test --test acceptance -- 1 2 10`.

use std::path::{Path, PathBuf};
use std::time::Instant;

use predlab::agent_dqn::{DqnAgent, DqnConfig, Transition};
use predlab::agent_ppo::{compute_gae, Minibatch, PpoAgent, PpoConfig};
use predlab::agent_q::{LearningRate, QAgent, QConfig, QTable};
use predlab::benchmark::{aim_portfolio, aim_portfolio_general, solve_trading_rate, ActionRange, EstimatedModel};
use predlab::env::{State, Trader};
use predlab::experiment::{load_checkpoint, run_experiment, ExperimentConfig, RunArtifacts};
use predlab::nn::gradcheck::{max_relative_error, numeric_gradient};
use predlab::nn::{huber_loss, mse_loss, Adam, AdamConfig, Mlp, Mode, Tensor2};
use predlab::rng;
use predlab::sim::{
    draw_noise, garch_innovations, garch_kurtosis, half_life_to_phi, simulate_factor_path, simulate_garch_path,
    FactorModelParams, GarchParams, NoiseKind,
};
use predlab::stats;
use rand::Rng as _;
use rand_distr::{Distribution, StandardNormal};

type Outcome = Result<String, String>;

fn check(ok: bool, msg: impl Into<String>) -> Result<(), String> {
    if ok {
        Ok(())
    } else {
        Err(msg.into())
    }
}

fn workers() -> usize {
    std::env::var("PREDLAB_WORKERS")
        .ok()
        .and_then(|v| v.parse().ok())
        .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()))
}

fn recipe(name: &str) -> ExperimentConfig {
    let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs/desk").join(name);
    ExperimentConfig::load(&path).unwrap_or_else(|e| panic!("{}: {e}", path.display()))
}

fn logspace(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    (0..n).map(|i| lo * (hi / lo).powf(i as f64 / (n - 1) as f64)).collect()
}

fn closed_form() -> Outcome {
    let gammas = logspace(1e-4, 1.0, 20);
    let lambdas = logspace(1e-5, 1e-1, 20);
    let mut worst = 0.0f64;
    for &g in &gammas {
        let mut prev_rate = f64::INFINITY;
        for &l in &lambdas {
            let s = solve_trading_rate(g, l, 0.0).map_err(|e| e.to_string())?;
            check(s.trading_rate > 0.0 && s.trading_rate < 1.0, format!("a/λ = {} at γ={g}, λ={l}", s.trading_rate))?;
            worst = worst.max(s.root_residual().abs());
            check(s.trading_rate < prev_rate, format!("a/λ not decreasing in λ at γ={g}"))?;
            prev_rate = s.trading_rate;
        }
    }
    check(worst < 1e-10, format!("root residual {worst:e}"))?;
    for &l in &lambdas {
        let mut prev_a = 0.0;
        for &g in &gammas {
            let a = solve_trading_rate(g, l, 0.0).map_err(|e| e.to_string())?.a;
            check(a > prev_a, format!("a not increasing in γ at λ={l}"))?;
            prev_a = a;
        }
    }
    let mut r = rng::seeded(17);
    let mut diag_err = 0.0f64;
    for _ in 0..200 {
        let k = r.random_range(1..=3);
        let b: Vec<f64> = (0..k).map(|_| r.random_range(-0.01..0.01)).collect();
        let phi: Vec<f64> = (0..k).map(|_| r.random_range(0.001..0.5)).collect();
        let f: Vec<f64> = (0..k).map(|_| r.random_range(-2.0..2.0)).collect();
        let sigma: f64 = r.random_range(0.005..0.05);
        let sol = solve_trading_rate(r.random_range(1e-3..1.0), r.random_range(1e-4..1e-1), 0.0).unwrap();
        let model = EstimatedModel::exact(b.clone(), phi.clone(), sigma);
        let matrix: Vec<Vec<f64>> = (0..k).map(|i| (0..k).map(|j| if i == j { phi[i] } else { 0.0 }).collect()).collect();
        let x = aim_portfolio(&sol, &model, &f).map_err(|e| e.to_string())?;
        let y = aim_portfolio_general(&sol, &b, &matrix, sigma * sigma, &f).map_err(|e| e.to_string())?;
        diag_err = diag_err.max((x - y).abs() / x.abs().max(1.0));
    }
    check(diag_err < 1e-12, format!("diagonal vs general aim differ by {diag_err:e}"))?;
    Ok(format!("max residual {worst:.1e}, aim forms agree to {diag_err:.1e}"))
}

/// Advantage as an explicit double sum over future TD residuals.
fn gae_brute(r: &[f64], v: &[f64], g: f64, l: f64) -> Vec<f64> {
    let t_len = r.len();
    (0..t_len)
        .map(|t| {
            (t..t_len)
                .map(|k| {
                    let delta = r[k] + g * v[k + 1] - v[k];
                    (g * l).powi((k - t) as i32) * delta
                })
                .sum()
        })
        .collect()
}

fn constant_net(outputs: &[f64]) -> Mlp {
    let mut net = Mlp::new(&[2, outputs.len()], false, &mut rng::seeded(0)).unwrap();
    let (w, b) = net.layer_offsets(0);
    net.params[w..b].iter_mut().for_each(|p| *p = 0.0);
    net.params[b..b + outputs.len()].copy_from_slice(outputs);
    net
}

fn oracles() -> Outcome {
    let mut r = rng::seeded(5);
    let mut gae_err = 0.0f64;
    for _ in 0..50 {
        let n = r.random_range(1..=200);
        let rewards: Vec<f64> = (0..n).map(|_| StandardNormal.sample(&mut r)).collect();
        let values: Vec<f64> = (0..=n).map(|_| StandardNormal.sample(&mut r)).collect();
        let (g, l) = (r.random_range(0.5..1.0), r.random_range(0.0..1.0));
        let (adv, targets) = compute_gae(&rewards, &values, g, l).map_err(|e| e.to_string())?;
        for (t, want) in gae_brute(&rewards, &values, g, l).iter().enumerate() {
            gae_err = gae_err.max((adv[t] - want).abs()).max((targets[t] - want - values[t]).abs());
        }
    }
    check(gae_err < 1e-10, format!("GAE error {gae_err:e}"))?;

    let range = ActionRange::new(-1.0, 1.0).unwrap();
    let mut agent = DqnAgent::new(DqnConfig { hidden: vec![4], ..DqnConfig::default() }, range, 0.8, 10, 1).unwrap();
    agent.actions = vec![-1.0, 1.0];
    let s = State::default();
    for (online, target, rew, want) in [
        ([1.0, 2.0], [5.0, 0.0], 0.0, 0.0),
        ([3.0, -1.0], [0.5, 9.0], 1.0, 1.0 + 0.8 * 0.5),
        ([-2.0, -1.0], [4.0, -3.0], -0.5, -0.5 + 0.8 * -3.0),
    ] {
        agent.online = constant_net(&online);
        agent.target = constant_net(&target);
        let batch = [Transition { s, a: 0, r: rew, s_next: s }, Transition { s, a: 1, r: rew, s_next: s }];
        let got = agent.ddqn_target(&batch).map_err(|e| e.to_string())?;
        check(got.iter().all(|&g| (g - want).abs() < 1e-12), format!("DDQN target {got:?}, want {want}"))?;
    }

    let cfg = AdamConfig { lr: 0.1, beta1: 0.9, beta2: 0.999, eps: 1e-8, decay: None };
    let mut adam = Adam::new(cfg, 2).unwrap();
    let mut p = [1.0, -2.0];
    let (g1, g2) = ([0.5, -0.25], [0.1, 0.3]);
    adam.step(&mut p, &g1).unwrap();
    let mut want = [1.0, -2.0];
    for i in 0..2 {
        want[i] -= 0.1 * g1[i] / (g1[i].abs() + 1e-8);
    }
    let mut adam_err = (p[0] - want[0]).abs().max((p[1] - want[1]).abs());
    adam.step(&mut p, &g2).unwrap();
    for i in 0..2 {
        let m = (0.9 * 0.1 * g1[i] + 0.1 * g2[i]) / (1.0 - 0.81);
        let v = (0.999 * 0.001 * g1[i] * g1[i] + 0.001 * g2[i] * g2[i]) / (1.0 - 0.999 * 0.999);
        want[i] -= 0.1 * m / (v.sqrt() + 1e-8);
        adam_err = adam_err.max((p[i] - want[i]).abs());
    }
    check(adam_err < 1e-12, format!("Adam error {adam_err:e}"))?;

    let (small, gs) = huber_loss(&[0.5], &[0.0], 1.0).unwrap();
    let (large, gl) = huber_loss(&[-3.0], &[0.0], 1.0).unwrap();
    check((small - 0.125).abs() < 1e-15 && (gs[0] - 0.5).abs() < 1e-15, "Huber quadratic branch")?;
    check((large - 2.5).abs() < 1e-15 && (gl[0] + 1.0).abs() < 1e-15, "Huber linear branch")?;
    let eps = 1e-9;
    let (below, _) = huber_loss(&[2.0 - eps], &[0.0], 2.0).unwrap();
    let (above, _) = huber_loss(&[2.0 + eps], &[0.0], 2.0).unwrap();
    check((below - 2.0).abs() < 1e-8 && (above - 2.0).abs() < 1e-8, "Huber discontinuous at delta")?;

    let garch = |alpha, beta| GarchParams { omega: 0.01, alpha, beta, ar_coeff: 0.9, noise: NoiseKind::Gaussian };
    let k0 = garch_kurtosis(&garch(0.0, 0.5)).unwrap();
    let k1 = garch_kurtosis(&garch(0.05, 0.94)).unwrap();
    let want_k1 = 3.0 * (1.0 - 0.99f64 * 0.99) / (1.0 - 2.0 * 0.0025 - 0.99 * 0.99);
    check((k0 - 3.0).abs() < 1e-9, format!("kurtosis at alpha=0: {k0}"))?;
    check((k1 - 4.006711409395973).abs() < 1e-9 && (k1 - want_k1).abs() < 1e-12, format!("kurtosis {k1}"))?;
    Ok(format!("GAE {gae_err:.1e}, Adam {adam_err:.1e}, kurtosis {k1:.6}"))
}

fn random_tensor(rows: usize, cols: usize, r: &mut rng::Rng) -> Tensor2 {
    Tensor2::from_vec(rows, cols, (0..rows * cols).map(|_| StandardNormal.sample(r)).collect()).unwrap()
}

fn gradient_checks() -> Outcome {
    let mut worst = 0.0f64;
    for seed in 0..6u64 {
        for (bn, mode, huber) in [(false, Mode::Eval, false), (true, Mode::Train, false), (true, Mode::Train, true), (true, Mode::Eval, true)] {
            let mut r = rng::seeded(100 + seed);
            let mut net = Mlp::new(&[3, 8, 6, 2], bn, &mut r).map_err(|e| e.to_string())?;
            if bn {
                net.forward(&random_tensor(16, 3, &mut r), Mode::Train).unwrap();
            }
            check(net.num_params() <= 200, "network too large")?;
            let x = random_tensor(7, 3, &mut r);
            let target = random_tensor(7, 2, &mut r);
            let loss = |out: &Tensor2| {
                if huber {
                    huber_loss(&out.data, &target.data, 0.7).unwrap()
                } else {
                    mse_loss(&out.data, &target.data).unwrap()
                }
            };
            let (out, cache) = net.forward_pure(&x, mode).unwrap();
            let (_, up) = loss(&out);
            let (analytic, _) = net.backward(&cache, &Tensor2::from_vec(7, 2, up).unwrap()).unwrap();
            let numeric = numeric_gradient(
                |p| {
                    let mut probe = net.clone();
                    probe.params.copy_from_slice(p);
                    loss(&probe.forward_pure(&x, mode).unwrap().0).0
                },
                &net.params,
                1e-5,
            );
            worst = worst.max(max_relative_error(&analytic, &numeric));
        }
    }
    check(worst < 1e-4, format!("network gradient error {worst:e}"))?;

    let mut ppo_worst = 0.0f64;
    for (seed, bn, mode) in [(1u64, false, Mode::Eval), (2, true, Mode::Eval), (3, true, Mode::Train)] {
        let cfg = PpoConfig { actor_hidden: vec![8], critic_hidden: vec![8], batch_norm: bn, mean_penalty: 0.3, ..PpoConfig::default() };
        let agent = PpoAgent::new(cfg, ActionRange::new(-2.0, 3.0).unwrap(), 0.9, seed).unwrap();
        let mut r = rng::seeded(seed + 50);
        let n = 10;
        let mut g = || -> f64 { StandardNormal.sample(&mut r) };
        let states: Vec<f64> = (0..n).flat_map(|_| [0.02 * g(), 4.0 * g()]).collect();
        let mb = Minibatch {
            states: Tensor2::from_vec(n, 2, states).unwrap(),
            raw_actions: (0..n).map(|_| g()).collect(),
            log_probs_old: (0..n).map(|_| -1.2 + 0.2 * g()).collect(),
            advantages: (0..n).map(|_| g()).collect(),
            value_targets: (0..n).map(|_| g()).collect(),
        };
        let (_, grads) = agent.objective(&mb, mode).map_err(|e| e.to_string())?;
        let total = |a: &PpoAgent| a.objective(&mb, mode).unwrap().0.total;
        let num_actor = numeric_gradient(
            |p| {
                let mut a = agent.clone();
                a.actor.params.copy_from_slice(p);
                total(&a)
            },
            &agent.actor.params,
            1e-6,
        );
        let num_critic = numeric_gradient(
            |p| {
                let mut a = agent.clone();
                a.critic.params.copy_from_slice(p);
                total(&a)
            },
            &agent.critic.params,
            1e-6,
        );
        let num_std = numeric_gradient(
            |p| {
                let mut a = agent.clone();
                a.log_std = p[0];
                total(&a)
            },
            &[agent.log_std],
            1e-6,
        );
        ppo_worst = ppo_worst
            .max(max_relative_error(&grads.actor, &num_actor))
            .max(max_relative_error(&grads.critic, &num_critic))
            .max(max_relative_error(&[grads.log_std], &num_std));
    }
    check(ppo_worst < 1e-4, format!("PPO objective gradient error {ppo_worst:e}"))?;
    Ok(format!("networks {worst:.1e}, PPO objective {ppo_worst:.1e}"))
}

fn simulation_moments() -> Outcome {
    let n = 1_000_000;
    let p = FactorModelParams::single(0.00535, 20.0, 0.2, 0.01);
    let path = simulate_factor_path(&p, n, 3).map_err(|e| e.to_string())?;
    let phi = half_life_to_phi(20.0).unwrap();
    let f = &path.factors.as_ref().unwrap()[0];
    let want = 0.04 / (1.0 - (1.0 - phi) * (1.0 - phi));
    let factor_err = (stats::variance(f) / want - 1.0).abs();
    check(factor_err < 0.02, format!("factor variance off by {:.2}%", 100.0 * factor_err))?;

    let g = GarchParams { omega: 0.01, alpha: 0.05, beta: 0.94, ar_coeff: 0.9, noise: NoiseKind::Gaussian };
    let gpath = simulate_garch_path(&g, n, 4).map_err(|e| e.to_string())?;
    let u = garch_innovations(&gpath, g.ar_coeff);
    let garch_err = (stats::variance(&u) / g.unconditional_variance() - 1.0).abs();
    check(garch_err < 0.03, format!("GARCH variance off by {:.2}%", 100.0 * garch_err))?;

    let mut t_err = 0.0f64;
    for nu in [6, 8, 10] {
        let z = draw_noise(NoiseKind::StudentT { nu }, n, 10 + nu as u64).map_err(|e| e.to_string())?;
        t_err = t_err.max((stats::std_dev(&z) - 1.0).abs());
    }
    check(t_err < 0.02, format!("Student-T std off by {:.2}%", 100.0 * t_err))?;
    Ok(format!(
        "factor {:.2}%, GARCH {:.2}%, Student-T {:.2}%",
        100.0 * factor_err,
        100.0 * garch_err,
        100.0 * t_err
    ))
}

fn tabular_sanity() -> Outcome {
    // Deterministic chain: next state and reward per (state, action).
    let next = [[1, 0], [2, 0], [2, 1]];
    let reward = [[0.0, 0.2], [0.0, -0.1], [1.0, 0.3]];
    let rho = 0.9;
    let mut q_star = [[0.0f64; 2]; 3];
    for _ in 0..2000 {
        let v: Vec<f64> = q_star.iter().map(|q| q[0].max(q[1])).collect();
        for s in 0..3 {
            for a in 0..2 {
                q_star[s][a] = reward[s][a] + rho * v[next[s][a]];
            }
        }
    }
    let mut table = QTable::new(3, 2, LearningRate::Constant(0.1), rho);
    let mut r = rng::seeded(9);
    let mut s = 0;
    for _ in 0..100_000 {
        let a = table.epsilon_greedy(s, 0.3, &mut r);
        table.q_update(s, a, reward[s][a], next[s][a]);
        s = if r.random::<f64>() < 0.1 { r.random_range(0..3) } else { next[s][a] };
    }
    let mut err = 0.0f64;
    for s in 0..3 {
        for a in 0..2 {
            err = err.max((table.q(s, a) - q_star[s][a]).abs());
        }
        let best = if q_star[s][1] > q_star[s][0] { 1 } else { 0 };
        check(table.argmax(s) == best, format!("greedy action wrong in state {s}"))?;
    }
    check(err < 1e-2, format!("max |Q - Q*| = {err:e}"))?;
    Ok(format!("max |Q - Q*| = {err:.1e}"))
}

fn run_recipe(name: &str, root: &Path) -> Result<RunArtifacts, String> {
    let cfg = recipe(name);
    let art = run_experiment(&cfg, &root.join(name.trim_end_matches(".json")), workers()).map_err(|e| e.to_string())?;
    if let Some(bad) = art.agents.iter().find(|a| a.error.is_some()) {
        return Err(format!("agent {} failed: {}", bad.id, bad.error.as_ref().unwrap()));
    }
    Ok(art)
}

fn dqn_tracking(root: &Path) -> Outcome {
    let art = run_recipe("dqn_gaussian.json", root)?;
    let s = art.final_summary().map_err(|e| e.to_string())?;
    let pnl = s.agent_pnl / s.bench_pnl;
    let sr = s.agent_sharpe / s.bench_sharpe;
    let detail = format!("PnL {:.0}% and SR {:.0}% of benchmark (SR {:.2} vs {:.2})", 100.0 * pnl, 100.0 * sr, s.agent_sharpe, s.bench_sharpe);
    check(s.bench_pnl > 0.0 && pnl >= 0.6 && sr >= 0.8, detail.clone())?;
    Ok(detail)
}

fn ppo_tracking(root: &Path) -> Outcome {
    let art = run_recipe("ppo_gaussian.json", root)?;
    // Trailing 5-episode moving average, averaged over the first or last fifth.
    let fifth = |a: &[f64], last: bool| {
        let n = a.len();
        let k = (n / 5).max(1);
        let ma: Vec<(usize, f64)> = (4..n).map(|i| (i, stats::mean(&a[i - 4..=i]))).collect();
        let part: Vec<f64> = ma.iter().filter(|(i, _)| if last { *i >= n - k } else { *i < k }).map(|p| p.1).collect();
        stats::mean(&part)
    };
    let first: Vec<f64> = art.agents.iter().map(|a| fifth(&a.episode_rewards, false)).collect();
    let last: Vec<f64> = art.agents.iter().map(|a| fifth(&a.episode_rewards, true)).collect();
    let s = art.final_summary().map_err(|e| e.to_string())?;
    let sr = s.agent_sharpe / s.bench_sharpe;
    let detail = format!(
        "episode reward {:.1} -> {:.1}, SR {:.0}% of benchmark (SR {:.2} vs {:.2})",
        stats::mean(&first),
        stats::mean(&last),
        100.0 * sr,
        s.agent_sharpe,
        s.bench_sharpe
    );
    check(stats::mean(&last) > stats::mean(&first) && s.bench_sharpe > 0.0 && sr >= 0.7, detail.clone())?;
    Ok(detail)
}

fn misspecification(root: &Path) -> Outcome {
    let mut parts = Vec::new();
    let mut ok = true;
    for name in ["dqn_student_t6.json", "ppo_student_t6.json"] {
        let art = run_recipe(name, root)?;
        let s = art.final_summary().map_err(|e| e.to_string())?;
        ok &= s.agent_sharpe >= s.bench_sharpe - s.agent_sharpe_std;
        parts.push(format!(
            "{} SR {:.2} ± {:.2} vs {:.2}",
            &name[..3],
            s.agent_sharpe,
            s.agent_sharpe_std,
            s.bench_sharpe
        ));
    }
    let detail = parts.join(", ");
    check(ok, detail.clone())?;
    Ok(detail)
}

fn final_checkpoints(run: &Path) -> Vec<PathBuf> {
    let mut out = Vec::new();
    let mut agents: Vec<PathBuf> = std::fs::read_dir(run)
        .into_iter()
        .flatten()
        .flatten()
        .map(|e| e.path())
        .filter(|p| p.file_name().is_some_and(|n| n.to_string_lossy().starts_with("agent_")))
        .collect();
    agents.sort();
    for a in agents {
        let last = std::fs::read_dir(&a)
            .into_iter()
            .flatten()
            .flatten()
            .filter_map(|e| e.file_name().to_string_lossy().strip_prefix("ckpt_").and_then(|s| s.parse::<usize>().ok()))
            .max();
        if let Some(step) = last {
            out.push(a.join(format!("ckpt_{step}")));
        }
    }
    out
}

fn policy_shape(root: &Path) -> Outcome {
    let path = simulate_factor_path(&FactorModelParams::single(0.00535, 350.0, 0.2, 0.01), 100_001, 77).unwrap();
    let mut ys = path.returns.clone();
    ys.sort_by(f64::total_cmp);
    let (lo, hi) = (stats::quantile_sorted(&ys, 0.01), stats::quantile_sorted(&ys, 0.99));
    let grid: Vec<f64> = (0..41).map(|i| lo + (hi - lo) * i as f64 / 40.0).collect();
    let mut parts = Vec::new();
    let mut ok = true;
    for run in ["dqn_gaussian", "ppo_gaussian"] {
        if final_checkpoints(&root.join(run)).is_empty() {
            run_recipe(&format!("{run}.json"), root)?;
        }
        let ckpts = final_checkpoints(&root.join(run));
        check(!ckpts.is_empty(), format!("no final checkpoints under {run}"))?;
        let mut rhos = Vec::new();
        for c in ckpts {
            let (_, agent) = load_checkpoint(&c).map_err(|e| e.to_string())?;
            let actions: Vec<f64> = grid
                .iter()
                .map(|&y| agent.trader().greedy_action(State { y, h_prev: 0.0 }))
                .collect::<predlab::Result<_>>()
                .map_err(|e| e.to_string())?;
            let rho = stats::spearman(&grid, &actions);
            rhos.push(if rho.is_finite() { rho } else { 0.0 });
        }
        let mean = stats::mean(&rhos);
        ok &= mean >= 0.8;
        let min = rhos.iter().copied().fold(f64::INFINITY, f64::min);
        parts.push(format!("{} mean {mean:.2} (min {min:.2})", &run[..3]));
    }
    let detail = format!("Spearman at h=0: {}", parts.join(", "));
    check(ok, detail.clone())?;
    Ok(detail)
}

fn csv_files(dir: &Path, out: &mut Vec<PathBuf>) {
    for e in std::fs::read_dir(dir).into_iter().flatten().flatten() {
        let p = e.path();
        if p.is_dir() {
            csv_files(&p, out);
        } else if p.extension().is_some_and(|x| x == "csv") {
            out.push(p);
        }
    }
}

fn determinism(root: &Path) -> Outcome {
    let mut cfg = recipe("dqn_gaussian.json");
    cfg.agent = predlab::experiment::AgentSpec::Dqn(DqnConfig { hidden: vec![8], batch_size: 32, ..DqnConfig::default() });
    cfg.benchmark.fit_window = 2000;
    cfg.schedule.t_in = 600;
    cfg.schedule.eval_every = 300;
    cfg.schedule.t_out = 300;
    cfg.schedule.num_agents = 3;
    cfg.schedule.num_oos_tests = 2;
    let (a, b) = (root.join("det_a"), root.join("det_b"));
    run_experiment(&cfg, &a, 1).map_err(|e| e.to_string())?;
    run_experiment(&cfg, &b, workers().max(2)).map_err(|e| e.to_string())?;
    let mut files = Vec::new();
    csv_files(&a, &mut files);
    check(files.len() > 5, "too few CSV outputs")?;
    for f in &files {
        let twin = b.join(f.strip_prefix(&a).unwrap());
        check(std::fs::read(f).ok() == std::fs::read(&twin).ok(), format!("{} differs", twin.display()))?;
    }

    let range = ActionRange::new(-500.0, 800.0).unwrap();
    let dir = root.join("roundtrip");
    std::fs::create_dir_all(&dir).unwrap();
    let bits = |xs: &[f64]| xs.iter().map(|x| x.to_bits()).collect::<Vec<_>>();

    let mut dqn = DqnAgent::new(DqnConfig { hidden: vec![6, 4], ..DqnConfig::default() }, range, 0.9, 100, 3).unwrap();
    dqn.online.forward(&random_tensor(8, 2, &mut rng::seeded(1)), Mode::Train).unwrap();
    dqn.save(&dir.join("dqn.json")).map_err(|e| e.to_string())?;
    let back = DqnAgent::load(&dir.join("dqn.json")).map_err(|e| e.to_string())?;
    check(bits(&back.online.params) == bits(&dqn.online.params), "DQN online params")?;
    check(bits(&back.target.params) == bits(&dqn.target.params), "DQN target params")?;
    check(back.to_json().unwrap() == dqn.to_json().unwrap(), "DQN state")?;

    let ppo = PpoAgent::new(PpoConfig { actor_hidden: vec![5], critic_hidden: vec![5], ..PpoConfig::default() }, range, 0.9, 4).unwrap();
    ppo.save(&dir.join("ppo.json")).map_err(|e| e.to_string())?;
    let back = PpoAgent::load(&dir.join("ppo.json")).map_err(|e| e.to_string())?;
    check(bits(&back.actor.params) == bits(&ppo.actor.params) && back.log_std.to_bits() == ppo.log_std.to_bits(), "PPO params")?;
    check(back.to_json().unwrap() == ppo.to_json().unwrap(), "PPO state")?;

    let mut q = QAgent::new(&QConfig::default(), range, 0.9, 10, 5).unwrap();
    let mut r = rng::seeded(6);
    for v in q.table.values.iter_mut() {
        *v = StandardNormal.sample(&mut r);
    }
    q.save(&dir.join("q")).map_err(|e| e.to_string())?;
    let back = QAgent::load(&dir.join("q")).map_err(|e| e.to_string())?;
    check(bits(&back.table.values) == bits(&q.table.values), "Q table")?;
    check(back.greedy_action(State { y: 0.01, h_prev: 40.0 }).unwrap() == q.greedy_action(State { y: 0.01, h_prev: 40.0 }).unwrap(), "Q policy")?;
    Ok(format!("{} CSV files identical across worker counts; checkpoints bit-exact", files.len()))
}

fn main() {
    let selected: Vec<usize> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let want = |i: usize| selected.is_empty() || selected.contains(&i);
    let scratch = tempfile::tempdir().expect("temp dir");
    let root = scratch.path();

    let criteria: Vec<(usize, &str, Box<dyn Fn() -> Outcome + '_>)> = vec![
        (1, "closed-form solution", Box::new(closed_form)),
        (2, "oracle equivalences", Box::new(oracles)),
        (3, "gradient checks", Box::new(gradient_checks)),
        (4, "simulation moments", Box::new(simulation_moments)),
        (5, "tabular sanity", Box::new(tabular_sanity)),
        (6, "DQN tracking", Box::new(|| dqn_tracking(root))),
        (7, "PPO tracking", Box::new(|| ppo_tracking(root))),
        (8, "misspecification direction", Box::new(|| misspecification(root))),
        (9, "policy shape", Box::new(|| policy_shape(root))),
        (10, "determinism and round-trips", Box::new(|| determinism(root))),
    ];

    let mut failed = 0;
    for (id, name, run) in &criteria {
        if !want(*id) {
            continue;
        }
        let start = Instant::now();
        let result = std::panic::catch_unwind(std::panic::AssertUnwindSafe(run)).unwrap_or_else(|p| {
            Err(p.downcast_ref::<String>().cloned().unwrap_or_else(|| "panicked".into()))
        });
        let secs = start.elapsed().as_secs_f64();
        match result {
            Ok(detail) => println!("criterion {id:>2} PASS  {name}: {detail} [{secs:.1}s]"),
            Err(why) => {
                failed += 1;
                println!("criterion {id:>2} FAIL  {name}: {why} [{secs:.1}s]");
            }
        }
    }
    if failed > 0 {
        println!("{failed} criteria failed");
        std::process::exit(1);
    }
}
