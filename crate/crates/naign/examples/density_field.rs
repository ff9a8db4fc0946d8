//! The drift d(z, f(z)) of a trained map behaves like a distance to
//! the data manifold, so exp(-(e^{k*drift} - 1)) gives an unnormalized
//! density for free. This renders the learned fields next to the true
//! distance field of the noiseless two-moons manifold.

use std::path::Path;

use naign::datasets::DatasetSpec;
use naign::fields::{grid_eval, render_field_svg, FieldKind, FieldSource, ManifoldSpec};
use naign::net::MlpArch;
use naign::trainer::{run_training, Method, TrainConfig};
use naign::Metric;

const BBOX: (f64, f64, f64, f64) = (-1.5, 2.5, -1.5, 1.5);
const RES: (usize, usize) = (120, 90);

fn main() -> naign::Result<()> {
    let mut cfg = TrainConfig::new(
        Method::Naign,
        DatasetSpec::TwoMoons { noise: 0.0 },
        MlpArch::new(2, vec![32, 32]),
    );
    cfg.steps = 2000;
    cfg.batch_size = 256;
    cfg.imle_m = 1024;
    cfg.log_every = 0;
    cfg.eval_every = 0;
    println!("training on noiseless two moons ...");
    let outcome = run_training(&cfg, None)?;

    let out = Path::new("target/examples/density_field");
    std::fs::create_dir_all(out).expect("create output dir");

    let model = FieldSource::Model(&outcome.params);
    let arcs = ManifoldSpec::TwoMoonsArcs;
    let truth = FieldSource::Manifold(&arcs);
    for (name, source, kind) in [
        ("learned_drift", &model, FieldKind::Drift),
        ("learned_density", &model, FieldKind::Density),
        ("true_distance", &truth, FieldKind::Distance),
        ("true_density", &truth, FieldKind::Density),
    ] {
        let grid = grid_eval(
            source, BBOX.0, BBOX.1, BBOX.2, BBOX.3, RES.0, RES.1, kind, Metric::L2, 2.0,
        )?;
        let (lo, hi) = grid.min_max();
        let svg = out.join(format!("{name}.svg"));
        render_field_svg(&grid, &svg)?;
        let csv = out.join(format!("{name}.csv"));
        grid.save_csv(&csv)?;
        println!("{name:<16} range [{lo:.4}, {hi:.4}] -> {}", svg.display());
    }
    println!("compare learned_density.svg against true_density.svg");
    Ok(())
}
