//! Desk-scale comparison of the closed-loop method against plain CE.
//!
//! `cargo run --release -p nllab-core --example desk_run -- [key=value ...]`

use nllab_core::runner::{prepare_data, run_algorithm1, run_baseline_ce, RunConfig};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut config = RunConfig::default();
    for arg in std::env::args().skip(1) {
        let (k, v) = arg.split_once('=').ok_or("expected key=value")?;
        config.set(k, v)?;
    }
    let data = prepare_data(&config)?;
    println!(
        "noisy={} meta={} test={} observed noise rate={:.4}",
        data.noisy.len(),
        data.meta.len(),
        data.test.len(),
        data.noisy.noise_rate().unwrap_or(f64::NAN)
    );

    let ours = run_algorithm1(&config, &data, &mut ())?;
    for r in &ours.rounds {
        println!(
            "round {:2} epoch {:3} risk {:.4} warm {:.4} post_acc {:.3} corr_acc {:.3} corr_ep {:3} prov {} omega {:?}",
            r.iteration,
            r.epoch,
            r.achieved_risk,
            r.warm_start_risk.unwrap_or(f64::NAN),
            r.posterior_val_accuracy,
            r.correction_val_accuracy,
            r.corrector_best_epoch,
            r.provenance,
            r.omega.iter().map(|w| (w * 1000.0).round() / 1000.0).collect::<Vec<_>>()
        );
    }
    let t = ours.timing;
    println!(
        "ours: best {:.4} last {:.4} label acc {:.4} -> {:.4}; time total {:.2}s train {:.2}s eval {:.2}s corr {:.2}s ({:.1}%)",
        ours.best_test_accuracy(),
        ours.last_test_accuracy(),
        ours.initial_label_accuracy.unwrap_or(f64::NAN),
        ours.final_label_accuracy().unwrap_or(f64::NAN),
        t.total.as_secs_f64(),
        t.training.as_secs_f64(),
        t.evaluation.as_secs_f64(),
        t.correction.as_secs_f64(),
        100.0 * t.correction_share()
    );
    for m in ours.metrics.iter().filter(|m| m.epoch % 5 == 0 || m.epoch < 4) {
        print!("{}:{:.3}/{:.3} ", m.epoch, m.test_accuracy, m.corrected_label_accuracy.unwrap_or(f64::NAN));
    }
    println!();
    let ce = run_baseline_ce(&config, &data, &mut ())?;
    println!(
        "ce:   best {:.4} last {:.4} ({:.2}s)",
        ce.best_test_accuracy(),
        ce.last_test_accuracy(),
        ce.timing.total.as_secs_f64()
    );
    for m in ce.metrics.iter().filter(|m| m.epoch % 5 == 0 || m.epoch < 4) {
        print!("{}:{:.3} ", m.epoch, m.test_accuracy);
    }
    println!();
    Ok(())
}
