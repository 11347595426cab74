//! Independent oracles shared by the integration tests and the acceptance run.
#![allow(dead_code)]

pub mod gradcheck;

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use tnd::autodiff::{log_sum_exp, Tape};
use tnd::eval::{fit_double_sigmoid, naoa_at, thresholds, LearningCurve, SigmoidFit};
use tnd::lm::{ModelConfig, TransformerLM};
use tnd::ppo::{compute_gae, ppo_loss, AdvantageSet, PPOConfig, Rollout, RolloutSource};
use tnd::reward::Reward;
use tnd::stats::ledger::{CumulativeTable, Source};
use tnd::stats::{paired_beta_analysis, standardized_ols, vif};

/// `A_i = Σ_k (γλ)^k δ_{i+k}` evaluated term by term.
pub fn gae_double_sum(rewards: &[f64], values: &[f64], gamma: f64, lambda: f64) -> Vec<f64> {
    let t = rewards.len();
    let v = |i: usize| if i < t { values[i] } else { 0.0 };
    let delta: Vec<f64> = (0..t).map(|i| rewards[i] + gamma * v(i + 1) - values[i]).collect();
    (0..t).map(|i| (i..t).map(|j| (gamma * lambda).powi((j - i) as i32) * delta[j]).sum()).collect()
}

/// Largest absolute difference between the recursive and double-sum GAE.
pub fn gae_max_error(instances: usize, seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst: f64 = 0.0;
    for _ in 0..instances {
        let t = rng.gen_range(1..=32);
        let r: Vec<f64> = (0..t).map(|_| rng.gen_range(-3.0..3.0)).collect();
        let v: Vec<f64> = (0..t).map(|_| rng.gen_range(-3.0..3.0)).collect();
        let (g, l) = (rng.gen_range(0.0..=1.0), rng.gen_range(0.0..=1.0));
        let got = compute_gae(&r, &v, g, l).unwrap();
        for (a, b) in got.advantages.iter().zip(gae_double_sum(&r, &v, g, l)) {
            worst = worst.max((a - b).abs());
        }
        for ((ret, a), val) in got.returns.iter().zip(&got.advantages).zip(&v) {
            worst = worst.max((ret - (a + val)).abs());
        }
    }
    worst
}

/// Surrogate contribution of a single token whose ratio is set to `ratio`.
pub fn single_token_surrogate(ratio: f64, advantage: f64, eps: f64) -> f64 {
    let cfg_m = ModelConfig { d_model: 8, n_heads: 2, n_layers: 1, context_len: 8, vocab_size: 9 };
    let m = TransformerLM::new(cfg_m, 3).unwrap();
    let prompt = vec![2, 5, 1];
    let token = 4;
    let seq = [0, 2, 5, 1];
    let (logits, _) = m.forward(&seq).unwrap();
    let v = logits.shape()[1];
    let row = &logits.values()[3 * v..4 * v];
    let new_lp = row[token] - log_sum_exp(row);
    let r = Rollout {
        prompt,
        generated: vec![token],
        behavior_logprobs: vec![new_lp - ratio.ln()],
        values: vec![0.0],
        terminal_reward: 0.0,
        reward: Reward::from_prediction(0.0, 1).unwrap(),
        source: RolloutSource::Trial,
        text: String::new(),
        continuation: String::new(),
    };
    let adv = AdvantageSet { advantages: vec![advantage], returns: vec![0.0] };
    let cfg = PPOConfig { clip_epsilon: eps, ..PPOConfig::default() };
    let mut tape = Tape::new();
    ppo_loss(&m, &mut tape, 0, &[r], &[adv], &cfg).unwrap().unwrap().pg_objective
}

/// `(ratio, advantage, got, expected)` for the three clip regimes and both signs.
pub fn clip_cases() -> Vec<(f64, f64, f64, f64)> {
    let mut out = Vec::new();
    for a in [1.7, -0.9] {
        for (ratio, expected) in [(1.0, a), (1.5, if a > 0.0 { 1.2 * a } else { 1.5 * a }), (0.5, f64::min(0.5 * a, 0.8 * a))] {
            out.push((ratio, a, single_token_surrogate(ratio, a, 0.2), expected));
        }
    }
    out
}

/// Largest deviation from the two reward identities over a range of steps.
pub fn reward_identity_errors() -> (f64, f64) {
    let (mut zero, mut shift): (f64, f64) = (0.0, 0.0);
    for n in [1u64, 2, 7, 10, 33, 100, 999, 12_345, 1_000_000] {
        zero = zero.max(Reward::from_prediction((n as f64).ln(), n).unwrap().value.abs());
        for p in [-1.5, 0.0, 4.2, 11.0] {
            let a = Reward::from_prediction(p, n).unwrap().value;
            let b = Reward::from_prediction(p, 10 * n).unwrap().value;
            shift = shift.max((b - (a - 10f64.ln())).abs());
        }
    }
    (zero, shift)
}

fn zscore_sample(x: &[f64]) -> Vec<f64> {
    let n = x.len() as f64;
    let m = x.iter().sum::<f64>() / n;
    let sd = (x.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (n - 1.0)).sqrt();
    x.iter().map(|v| (v - m) / sd).collect()
}

/// Solves `A x = b` by Gaussian elimination with partial pivoting.
pub fn gauss_solve(mut a: Vec<Vec<f64>>, mut b: Vec<f64>) -> Vec<f64> {
    let n = b.len();
    for c in 0..n {
        let p = (c..n).max_by(|&i, &j| a[i][c].abs().total_cmp(&a[j][c].abs())).unwrap();
        a.swap(c, p);
        b.swap(c, p);
        for r in c + 1..n {
            let f = a[r][c] / a[c][c];
            for k in c..n {
                a[r][k] -= f * a[c][k];
            }
            b[r] -= f * b[c];
        }
    }
    let mut x = vec![0.0; n];
    for r in (0..n).rev() {
        x[r] = (b[r] - (r + 1..n).map(|k| a[r][k] * x[k]).sum::<f64>()) / a[r][r];
    }
    x
}

/// Standardized betas from the normal equations on z-scored data.
pub fn normal_equation_betas(y: &[f64], xs: &[Vec<f64>]) -> Vec<f64> {
    let zy = zscore_sample(y);
    let zx: Vec<Vec<f64>> = xs.iter().map(|x| zscore_sample(x)).collect();
    let p = zx.len();
    let xtx: Vec<Vec<f64>> = (0..p).map(|i| (0..p).map(|j| zx[i].iter().zip(&zx[j]).map(|(a, b)| a * b).sum()).collect()).collect();
    let xty: Vec<f64> = (0..p).map(|i| zx[i].iter().zip(&zy).map(|(a, b)| a * b).sum()).collect();
    gauss_solve(xtx, xty)
}

/// Largest |β_lib − β_oracle| over random correlated designs.
pub fn ols_max_error(instances: usize, seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let normal = Normal::new(0.0, 1.0).unwrap();
    let mut worst: f64 = 0.0;
    for _ in 0..instances {
        let n = rng.gen_range(12..60);
        let p = rng.gen_range(1..=3);
        let mut xs: Vec<Vec<f64>> = Vec::new();
        for j in 0..p {
            let x: Vec<f64> = (0..n).map(|i| normal.sample(&mut rng) + if j > 0 { 0.6 * xs[0][i] } else { 0.0 }).collect();
            xs.push(x);
        }
        let w: Vec<f64> = (0..p).map(|_| rng.gen_range(-2.0..2.0)).collect();
        let y: Vec<f64> = (0..n).map(|i| (0..p).map(|j| w[j] * xs[j][i]).sum::<f64>() + 0.5 * normal.sample(&mut rng)).collect();
        let named: Vec<(String, Vec<f64>)> = xs.iter().enumerate().map(|(j, x)| (format!("x{j}"), x.clone())).collect();
        let got = standardized_ols(&y, &named).unwrap();
        for (a, b) in got.betas.iter().zip(normal_equation_betas(&y, &xs)) {
            worst = worst.max((a - b).abs());
        }
    }
    worst
}

/// VIFs on mutually orthogonal centered predictors (Walsh-style sign patterns).
pub fn orthogonal_vifs() -> Vec<f64> {
    let n = 16;
    let cols: Vec<Vec<f64>> = (0..3).map(|b| (0..n).map(|i| if (i >> b) & 1 == 0 { 1.0 } else { -1.0 }).collect()).collect();
    vif(&cols).unwrap().iter().map(|v| v.value).collect()
}

/// Counts constructions (out of `trials`) in which trial carries the largest |β|
/// when the group's surprisal is generated from trial counts alone.
pub fn trial_dominance(trials: usize, seed: u64) -> usize {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let normal = Normal::new(0.0, 1.0).unwrap();
    let grid: Vec<u64> = (1..=24).map(|i| i * 10).collect();
    let g = grid.len();
    let mut wins = 0;
    for _ in 0..trials {
        let words: Vec<String> = (0..8).map(|i| format!("w{i}")).collect();
        let mut counts = Vec::new();
        let mut curves = BTreeMap::new();
        for w in &words {
            let mut per: [Vec<u64>; 3] = Default::default();
            for s in Source::ALL {
                // Each source accrues in random bursts so the series are not collinear.
                let mut c = 0u64;
                per[s.index()] = (0..g)
                    .map(|_| {
                        if rng.gen_bool(0.6) {
                            c += rng.gen_range(1..40);
                        }
                        c
                    })
                    .collect();
            }
            let base = rng.gen_range(8.0..12.0);
            let y: Vec<f64> =
                per[Source::Trial.index()].iter().map(|&c| base - 0.8 * (c as f64).ln_1p() + 0.05 * normal.sample(&mut rng)).collect();
            curves.insert(w.clone(), y);
            counts.push(per);
        }
        let table = CumulativeTable { grid: grid.clone(), words: words.clone(), counts };
        let res = paired_beta_analysis(&table, &curves, "all", &words, 10.0).unwrap();
        let mag = |s: Source| res.row(s).beta.map_or(0.0, f64::abs);
        if Source::ALL.iter().all(|&s| s == Source::Trial || mag(Source::Trial) > mag(s)) {
            wins += 1;
        }
    }
    wins
}

/// A ground-truth double sigmoid with the generator's own parameters.
pub fn true_curve(rng: &mut ChaCha8Rng) -> SigmoidFit {
    let m1 = rng.gen_range(0.6..1.8);
    SigmoidFit {
        b: rng.gen_range(2.0..6.0),
        a1: rng.gen_range(2.0..6.0),
        a2: rng.gen_range(0.5..3.0),
        k1: rng.gen_range(2.0..8.0),
        k2: rng.gen_range(2.0..8.0),
        m1,
        m2: m1 + rng.gen_range(0.6..1.5),
        residual: 0.0,
        converged: true,
        fallback: false,
    }
}

pub struct RecoveryOutcome {
    /// RMSE between each fit and its noiseless generating curve.
    pub rmse: Vec<f64>,
    pub converged: usize,
    /// Largest |bisection − grid scan| in grid cells over converged fits.
    pub worst_cells: f64,
}

/// Fits `n` noisy synthetic curves and scans each converged fit on a 10,000-point grid.
pub fn sigmoid_recovery(n: usize, seed: u64) -> RecoveryOutcome {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let noise = Normal::new(0.0, 0.05).unwrap();
    let steps: Vec<u64> = tnd::lm::log_spaced_schedule(3000, 25);
    let mut out = RecoveryOutcome { rmse: Vec::new(), converged: 0, worst_cells: 0.0 };
    for i in 0..n {
        let truth = true_curve(&mut rng);
        let pts: Vec<(u64, f64)> = steps.iter().map(|&s| (s, truth.eval((s as f64).log10()) + noise.sample(&mut rng))).collect();
        let curve = LearningCurve::from_steps(&format!("w{i}"), &pts).unwrap();
        let fit = fit_double_sigmoid(&curve).unwrap();
        let xs: Vec<f64> = curve.points.iter().map(|p| p.0).collect();
        let rmse = (xs.iter().map(|&x| (fit.eval(x) - truth.eval(x)).powi(2)).sum::<f64>() / xs.len() as f64).sqrt();
        out.rmse.push(rmse);
        if !fit.converged {
            continue;
        }
        out.converged += 1;
        let range = curve.x_range().unwrap();
        let cells = 10_000;
        let h = (range.1 - range.0) / cells as f64;
        let (fmax, fmin) = (fit.eval(range.0), fit.eval(range.1));
        for t in thresholds() {
            let target = fmax - t * (fmax - fmin);
            let scan = (0..=cells).map(|c| range.0 + c as f64 * h).find(|&x| fit.eval(x) <= target);
            let bis = naoa_at(&fit, t, range).unwrap();
            let cells_off = match (scan, bis) {
                (Some(a), Some(b)) => (a - b).abs() / h,
                (None, None) => 0.0,
                _ => f64::INFINITY,
            };
            out.worst_cells = out.worst_cells.max(cells_off);
        }
    }
    out
}
