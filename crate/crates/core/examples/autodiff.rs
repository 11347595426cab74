//! Builds a small two-layer network on the tape, backpropagates, and checks
//! one gradient against a central difference.
//!
//! cargo run --example autodiff

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use tnd::autodiff::{Tape, Tensor, Var};

fn forward(tape: &mut Tape, x: &Tensor, w1: &Tensor, w2: &Tensor) -> (Var, Var) {
    let x = tape.constant(x.clone());
    let w1 = tape.leaf(w1.clone().with_grad());
    let w2 = tape.leaf(w2.clone().with_grad());
    let h = tape.matmul(x, w1).unwrap();
    let h = tape.gelu(h);
    let y = tape.matmul(h, w2).unwrap();
    let y = tape.square(y);
    (tape.mean(y).unwrap(), w1)
}

fn main() -> tnd::Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let x = Tensor::randn(&[4, 3], 1.0, &mut rng);
    let w1 = Tensor::randn(&[3, 5], 0.5, &mut rng);
    let w2 = Tensor::randn(&[5, 2], 0.5, &mut rng);

    let mut tape = Tape::new();
    let (loss, w1_var) = forward(&mut tape, &x, &w1, &w2);
    tape.backward(loss)?;
    let g = tape.grad(w1_var).expect("w1 requires grad").to_vec();
    println!("loss {:.6}, {} tape nodes", tape.scalar(loss), tape.len());

    let h = 1e-6;
    let at = |delta: f64| {
        let mut w = w1.clone();
        w.values_mut()[7] += delta;
        let mut t = Tape::new();
        let (l, _) = forward(&mut t, &x, &w, &w2);
        t.scalar(l)
    };
    let numeric = (at(h) - at(-h)) / (2.0 * h);
    println!("d loss / d w1[7]: analytic {:.9}, central difference {:.9}", g[7], numeric);
    Ok(())
}
