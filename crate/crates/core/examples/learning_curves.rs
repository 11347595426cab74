//! Double-sigmoid fits of noisy word learning curves, ages of acquisition at
//! each threshold, effective vocabulary growth, and an SVG of the fits.
//!
//! cargo run --example learning_curves -- [out.svg]

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use tnd::eval::{aoa_report, effective_vocab, fit_double_sigmoid, thresholds, LearningCurve, Plot, Series};

fn main() -> anyhow::Result<()> {
    let out = std::env::args().nth(1).unwrap_or_else(|| "learning_curves.svg".into());
    let steps: Vec<u64> = (0..25).map(|i| 10f64.powf(3.0 * i as f64 / 24.0).round() as u64).collect::<std::collections::BTreeSet<_>>().into_iter().collect();
    let noise = Normal::new(0.0, 0.15)?;
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    // (word, midpoint of the main drop in log10 steps)
    let words = [("ball", 1.3), ("dog", 1.7), ("jump", 2.1), ("purple", 2.6)];
    let mut reports = Vec::new();
    let mut series = Vec::new();
    for (w, mid) in words {
        let pts: Vec<(u64, f64)> = steps
            .iter()
            .map(|&s| {
                let x = (s as f64).log10();
                let y = 3.0 + 4.0 / (1.0 + (6.0 * (x - mid)).exp()) + 1.5 / (1.0 + (8.0 * (x - 0.3)).exp());
                (s, y + noise.sample(&mut rng))
            })
            .collect();
        let curve = LearningCurve::from_steps(w, &pts)?;
        let range = curve.x_range().expect("nonempty");
        let fit = fit_double_sigmoid(&curve)?;
        let rep = aoa_report(w, &fit, range)?;
        let ages: Vec<String> = thresholds().iter().map(|&t| rep.at(t).map_or("-".into(), |x| format!("{x:.2}"))).collect();
        println!("{w:>7}: residual {:.3}, plateau {:.2}, nAoA@0.50..0.95 [{}]", fit.residual, fit.b, ages.join(" "));
        series.push(Series {
            name: w.to_string(),
            points: (0..=60).map(|i| range.0 + (range.1 - range.0) * i as f64 / 60.0).map(|x| (x, fit.eval(x))).collect(),
            marker: rep.naoa50(),
        });
        reports.push(rep);
    }
    for (s, n) in effective_vocab(&reports, &steps).iter().step_by(4) {
        println!("step {s:>4}: {n} words acquired");
    }
    let plot = Plot { title: "fitted learning curves".into(), x_label: "log10 step".into(), y_label: "surprisal (bits)".into(), series, scatter: false };
    plot.save(out.as_ref())?;
    println!("wrote {out}");
    Ok(())
}
