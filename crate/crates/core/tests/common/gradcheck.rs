//! Reverse-mode gradients against central finite differences.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use tnd::autodiff::{Tape, Tensor, Var};
use tnd::lm::{clm_loss, ModelConfig, TransformerLM};
use tnd::ppo::{ppo_loss, AdvantageSet, PPOConfig, Rollout, RolloutSource};
use tnd::reward::Reward;

/// Largest relative error seen so far and where it happened.
#[derive(Debug, Default)]
pub struct Worst {
    pub err: f64,
    pub at: String,
    pub checked: usize,
}

impl Worst {
    fn note(&mut self, err: f64, at: impl FnOnce() -> String) {
        self.checked += 1;
        if err > self.err || err.is_nan() {
            self.err = err;
            self.at = at();
        }
    }
}

pub const H: f64 = 1e-6;
pub const TOL: f64 = 1e-4;

/// The floor keeps exactly-zero gradients (key biases, for instance) from
/// dividing rounding noise by zero.
fn rel_err(a: f64, n: f64) -> f64 {
    (a - n).abs() / a.abs().max(n.abs()).max(1e-5)
}

/// Builds `f` on fresh leaves, reduces it with fixed random weights, and
/// compares every input coordinate's gradient with a central difference.
fn check<F>(worst: &mut Worst, name: &str, inputs: &[Tensor], seed: u64, f: F)
where
    F: Fn(&mut Tape, &[Var]) -> Var,
{
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x9e37);
    let eval = |xs: &[Tensor], w: Option<&Tensor>| -> (f64, Vec<Vec<f64>>) {
        let mut tape = Tape::new();
        let vars: Vec<Var> = xs.iter().map(|t| tape.leaf(t.clone().with_grad())).collect();
        let out = f(&mut tape, &vars);
        let w = w.cloned().unwrap_or_else(|| Tensor::filled(tape.shape(out), 1.0));
        let wv = tape.constant(w);
        let prod = tape.mul(out, wv).unwrap();
        let loss = tape.sum(prod);
        tape.backward(loss).unwrap();
        let grads = vars.iter().map(|&v| tape.grad(v).map(<[f64]>::to_vec).unwrap_or_else(|| vec![0.0; tape.value(v).len()])).collect();
        (tape.scalar(loss), grads)
    };
    let shape = {
        let mut tape = Tape::new();
        let vars: Vec<Var> = inputs.iter().map(|t| tape.leaf(t.clone())).collect();
        let out = f(&mut tape, &vars);
        tape.shape(out).to_vec()
    };
    let n: usize = shape.iter().product();
    let w = Tensor::new(shape, (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap();
    let (_, analytic) = eval(inputs, Some(&w));
    for (i, x) in inputs.iter().enumerate() {
        for j in 0..x.len() {
            let mut plus = inputs.to_vec();
            plus[i].values_mut()[j] += H;
            let mut minus = inputs.to_vec();
            minus[i].values_mut()[j] -= H;
            let numeric = (eval(&plus, Some(&w)).0 - eval(&minus, Some(&w)).0) / (2.0 * H);
            worst.note(rel_err(analytic[i][j], numeric), || format!("{name} seed {seed}: input {i}[{j}]"));
        }
    }
}

fn rand_tensor(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
    Tensor::randn(shape, 1.0, rng)
}

/// Values kept at least `gap` away from every point in `kinks`.
fn away_from(rng: &mut ChaCha8Rng, shape: &[usize], kinks: &[f64], gap: f64) -> Tensor {
    let n: usize = shape.iter().product();
    let v = (0..n)
        .map(|_| loop {
            let x: f64 = rng.gen_range(-2.0..2.0);
            if kinks.iter().all(|k| (x - k).abs() > gap) {
                break x;
            }
        })
        .collect();
    Tensor::new(shape.to_vec(), v).unwrap()
}

pub const INSTANCES: u64 = 20;

pub fn elementwise_primitives() -> Worst {
    let mut worst = Worst::default();
    for seed in 0..INSTANCES {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let a = rand_tensor(&mut rng, &[3, 4]);
        let b = rand_tensor(&mut rng, &[3, 4]);
        check(&mut worst, "add", &[a.clone(), b.clone()], seed, |t, v| t.add(v[0], v[1]).unwrap());
        check(&mut worst, "sub", &[a.clone(), b.clone()], seed, |t, v| t.sub(v[0], v[1]).unwrap());
        check(&mut worst, "mul", &[a.clone(), b.clone()], seed, |t, v| t.mul(v[0], v[1]).unwrap());
        check(&mut worst, "scale", &[a.clone()], seed, |t, v| t.scale(v[0], -1.7));
        check(&mut worst, "exp", &[a.clone()], seed, |t, v| t.exp(v[0]));
        check(&mut worst, "square", &[a.clone()], seed, |t, v| t.square(v[0]));
        check(&mut worst, "gelu", &[a.clone()], seed, |t, v| t.gelu(v[0]));
        check(&mut worst, "sum", &[a.clone()], seed, |t, v| t.sum(v[0]));
        check(&mut worst, "mean", &[a.clone()], seed, |t, v| t.mean(v[0]).unwrap());
        check(&mut worst, "reshape", &[a.clone()], seed, |t, v| t.reshape(v[0], &[2, 6]).unwrap());
        let c = away_from(&mut rng, &[3, 4], &[-0.5, 0.8], 1e-3);
        check(&mut worst, "clamp", &[c], seed, |t, v| t.clamp(v[0], -0.5, 0.8));
        // Separate the operands so min never sits on its kink.
        let shifted = Tensor::new(vec![3, 4], a.values().iter().zip(b.values()).map(|(x, y)| if (x - y).abs() < 1e-3 { y + 0.1 } else { *y }).collect()).unwrap();
        check(&mut worst, "minimum", &[a.clone(), shifted], seed, |t, v| t.minimum(v[0], v[1]).unwrap());
    }
    worst
}

pub fn matrix_primitives() -> Worst {
    let mut worst = Worst::default();
    for seed in 0..INSTANCES {
        let mut rng = ChaCha8Rng::seed_from_u64(100 + seed);
        let a = rand_tensor(&mut rng, &[3, 5]);
        let b = rand_tensor(&mut rng, &[5, 2]);
        check(&mut worst, "matmul", &[a.clone(), b], seed, |t, v| t.matmul(v[0], v[1]).unwrap());
        let bias = rand_tensor(&mut rng, &[5]);
        check(&mut worst, "add_row", &[a.clone(), bias.clone()], seed, |t, v| t.add_row(v[0], v[1]).unwrap());
        check(&mut worst, "select_rows", &[a.clone()], seed, |t, v| t.select_rows(v[0], &[2, 0, 2]).unwrap());
        let gain = rand_tensor(&mut rng, &[5]);
        check(&mut worst, "layer_norm", &[a.clone(), gain, bias], seed, |t, v| t.layer_norm(v[0], v[1], v[2]).unwrap());
        let table = rand_tensor(&mut rng, &[6, 4]);
        check(&mut worst, "embedding", &[table], seed, |t, v| t.embedding(v[0], &[1, 5, 1, 0]).unwrap());
    }
    worst
}

pub fn softmax_family() -> Worst {
    let mut worst = Worst::default();
    for seed in 0..INSTANCES {
        let mut rng = ChaCha8Rng::seed_from_u64(200 + seed);
        let logits = rand_tensor(&mut rng, &[4, 7]);
        let targets: Vec<usize> = (0..4).map(|_| rng.gen_range(0..7)).collect();
        let tg = targets.clone();
        check(&mut worst, "softmax_cross_entropy", &[logits.clone()], seed, move |t, v| t.softmax_cross_entropy(v[0], &tg).unwrap());
        check(&mut worst, "log_softmax_gather", &[logits], seed, move |t, v| t.log_softmax_gather(v[0], &targets).unwrap());
    }
    worst
}

pub fn causal_attention() -> Worst {
    let mut worst = Worst::default();
    for seed in 0..INSTANCES {
        let mut rng = ChaCha8Rng::seed_from_u64(300 + seed);
        let q = rand_tensor(&mut rng, &[5, 4]);
        let k = rand_tensor(&mut rng, &[5, 4]);
        let v = rand_tensor(&mut rng, &[5, 4]);
        check(&mut worst, "causal_attention", &[q, k, v], seed, |t, x| t.causal_attention(x[0], x[1], x[2], 2, &[0..3, 3..5]).unwrap());
    }
    worst
}

fn tiny_model(seed: u64) -> TransformerLM {
    let cfg = ModelConfig { d_model: 8, n_heads: 2, n_layers: 2, context_len: 8, vocab_size: 11 };
    let mut m = TransformerLM::new(cfg, seed).unwrap();
    // Fresh models start with zeroed biases and unit gains; perturb so every
    // parameter has a generic gradient.
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for t in m.params_mut().tensors_mut() {
        for x in t.values_mut() {
            *x += rng.gen_range(-0.1..0.1);
        }
    }
    m
}

/// Gradient of `loss_of` at every parameter of `model` against central differences
/// on a random sample of `per_instance` coordinates.
fn check_model<F>(worst: &mut Worst, name: &str, model: &mut TransformerLM, seed: u64, per_instance: usize, loss_of: F)
where
    F: Fn(&TransformerLM, &mut Tape) -> Var,
{
    let mut tape = Tape::new();
    let loss = loss_of(model, &mut tape);
    tape.backward(loss).unwrap();
    model.params_mut().zero_grad();
    tape.flush_into(model.params_mut()).unwrap();
    let analytic: Vec<Vec<f64>> =
        model.params().tensors().iter().map(|t| t.grad().map(<[f64]>::to_vec).unwrap_or_else(|| vec![0.0; t.len()])).collect();
    model.params_mut().zero_grad();
    let value = |m: &TransformerLM| {
        let mut tape = Tape::new();
        let l = loss_of(m, &mut tape);
        tape.scalar(l)
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed + 7);
    let n_tensors = analytic.len();
    for _ in 0..per_instance {
        let i = rng.gen_range(0..n_tensors);
        let j = rng.gen_range(0..analytic[i].len());
        let orig = model.params().tensors()[i].values()[j];
        model.params_mut().tensors_mut()[i].values_mut()[j] = orig + H;
        let up = value(model);
        model.params_mut().tensors_mut()[i].values_mut()[j] = orig - H;
        let down = value(model);
        model.params_mut().tensors_mut()[i].values_mut()[j] = orig;
        let numeric = (up - down) / (2.0 * H);
        worst.note(rel_err(analytic[i][j], numeric), || format!("{name} seed {seed}: {}[{j}]", model.params().names()[i]));
    }
}

pub fn two_layer_transformer_clm_loss() -> Worst {
    let mut worst = Worst::default();
    for seed in 0..INSTANCES {
        let mut m = tiny_model(seed);
        let mut rng = ChaCha8Rng::seed_from_u64(400 + seed);
        let tokens: Vec<usize> = (0..8).map(|_| rng.gen_range(0..11)).collect();
        check_model(&mut worst, "clm", &mut m, seed, 60, |m, t| clm_loss(m, t, &tokens).unwrap());
    }
    worst
}

pub fn every_parameter_tensor() -> Worst {
    let mut worst = Worst::default();
    let mut m = tiny_model(99);
    let tokens = [1, 4, 2, 9, 3, 3, 7, 0];
    let mut tape = Tape::new();
    let loss = clm_loss(&m, &mut tape, &tokens).unwrap();
    tape.backward(loss).unwrap();
    tape.flush_into(m.params_mut()).unwrap();
    let value = |m: &TransformerLM| {
        let mut tape = Tape::new();
        let l = clm_loss(m, &mut tape, &tokens).unwrap();
        tape.scalar(l)
    };
    let names: Vec<String> = m.params().names().to_vec();
    for (i, name) in names.iter().enumerate() {
        if name.starts_with("value") {
            continue;
        }
        let g = m.params().tensors()[i].grad().expect("lm parameter has a gradient").to_vec();
        let j = g.iter().enumerate().max_by(|a, b| a.1.abs().total_cmp(&b.1.abs())).unwrap().0;
        let orig = m.params().tensors()[i].values()[j];
        m.params_mut().tensors_mut()[i].values_mut()[j] = orig + H;
        let up = value(&m);
        m.params_mut().tensors_mut()[i].values_mut()[j] = orig - H;
        let down = value(&m);
        m.params_mut().tensors_mut()[i].values_mut()[j] = orig;
        let numeric = (up - down) / (2.0 * H);
        worst.note(rel_err(g[j], numeric), || format!("{name}[{j}]"));
    }
    worst
}

pub fn two_layer_transformer_ppo_loss() -> Worst {
    let mut worst = Worst::default();
    for seed in 0..INSTANCES {
        let mut m = tiny_model(seed);
        let mut rng = ChaCha8Rng::seed_from_u64(500 + seed);
        let batch: Vec<Rollout> = (0..2)
            .map(|s| {
                let generated: Vec<usize> = (0..3).map(|_| rng.gen_range(0..11)).collect();
                Rollout {
                    prompt: (0..3).map(|_| rng.gen_range(0..11)).collect(),
                    // Behavior log-probs offset from the current policy so ratios sit
                    // strictly inside the trust region but away from 1.
                    behavior_logprobs: vec![-2.4 + 0.05 * s as f64; 3],
                    values: vec![0.0; 3],
                    terminal_reward: 0.0,
                    reward: Reward::from_prediction(1.0, 1).unwrap(),
                    source: if s == 0 { RolloutSource::Trial } else { RolloutSource::Demonstration },
                    text: String::new(),
                    continuation: String::new(),
                    generated,
                }
            })
            .collect();
        let adv: Vec<AdvantageSet> = (0..2)
            .map(|_| AdvantageSet { advantages: (0..3).map(|_| rng.gen_range(-1.0..1.0)).collect(), returns: (0..3).map(|_| rng.gen_range(-1.0..1.0)).collect() })
            .collect();
        let cfg = PPOConfig { clip_epsilon: 10.0, ..PPOConfig::default() };
        check_model(&mut worst, "ppo", &mut m, seed, 40, |m, t| ppo_loss(m, t, 0, &batch, &adv, &cfg).unwrap().unwrap().loss);
    }
    worst
}
