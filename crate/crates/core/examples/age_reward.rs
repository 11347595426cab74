//! Samples text along a teacher's training trajectory, fits an age predictor
//! on it, and turns predictions into age-conditioned rewards.
//!
//! cargo run --release --example age_reward

mod common;

use tnd::reward::compute_reward;

fn main() -> anyhow::Result<()> {
    let dir = tempfile::tempdir()?;
    let setup = common::teacher(dir.path(), 600)?;
    let predictor = common::predictor(&setup, 150)?;
    let r = &predictor.report;
    println!(
        "predictor: {} train / {} held-out samples, held-out MSE {:.3}, Spearman {:.3}",
        r.n_train,
        r.n_heldout,
        r.heldout_mse.unwrap_or(f64::NAN),
        r.heldout_spearman.unwrap_or(f64::NAN)
    );
    let texts = ["the the a ball ball", "ball want the", "look at the big red ball on the table", "can you give the cup to the baby"];
    for t in texts {
        println!("{:>40}: predicted ln(step) {:.2}", t, predictor.predict(t));
    }
    // Same text, older learner: the reward drops by ln 10 for every factor of ten.
    let t = texts[2];
    for step in [10, 100, 1000] {
        let rw = compute_reward(&predictor, t, step)?;
        println!("reward at step {step:>4}: {:+.3}", rw.value);
    }
    Ok(())
}
