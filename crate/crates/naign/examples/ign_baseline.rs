//! Trains the adversarial baseline: reconstruction + idempotence + a
//! negated tightness term, all through one shared set of weights. The
//! tightness value is never positive; it fights the idempotence term
//! to keep the map from collapsing to a constant.

use std::path::Path;

use naign::datasets::DatasetSpec;
use naign::net::MlpArch;
use naign::trainer::{run_training, Method, TrainConfig};

fn main() -> naign::Result<()> {
    let mut cfg = TrainConfig::new(
        Method::Ign,
        DatasetSpec::EightGaussians { std: 0.1 },
        MlpArch::new(2, vec![32, 32]),
    );
    cfg.steps = 1200;
    cfg.batch_size = 256;
    cfg.log_every = 200;
    cfg.eval_every = 0;
    println!(
        "weights: rec={} idem={} tight={}",
        cfg.weights.w_rec, cfg.weights.w_idem, cfg.weights.w_tight
    );

    let out_dir = Path::new("target/examples/ign_baseline");
    let outcome = run_training(&cfg, Some(out_dir))?;
    let last = outcome.final_loss.as_ref().expect("steps > 0");
    println!(
        "final losses: rec={:.4} idem={:.4} tight={:.4} total={:.4}",
        last.rec, last.idem, last.tight, last.total
    );
    assert!(last.tight <= 0.0, "tightness is a penalty on expansion");
    println!(
        "training log with the full loss trajectory: {}",
        outcome.log_path.expect("out_dir given").display()
    );
    Ok(())
}
