//! Scores sample sets against real data with coverage, density, FLD
//! and per-mode statistics, no training involved. A fresh draw from
//! the true distribution ("perfect generator") is compared against a
//! collapsed generator that puts everything on one mode.

use std::path::Path;

use naign::metrics::{eval_generation, mode_coverage, MetricsTable};
use naign::datasets::gen_eight_gaussians;
use naign::Matrix;

fn main() -> naign::Result<()> {
    let real = gen_eight_gaussians(4096, 0.1, 0);
    let centers = real.mode_centers.as_ref().expect("mixture");

    // Perfect generator: an independent draw from the same distribution.
    let perfect = gen_eight_gaussians(4096, 0.1, 1).points;
    // Collapsed generator: every sample is the first mode center.
    let mut collapsed = Matrix::zeros(4096, 2);
    for i in 0..collapsed.rows() {
        collapsed.row_mut(i).copy_from_slice(centers.row(0));
    }

    let mut table = MetricsTable::new(
        "generator",
        &["fld", "coverage", "density", "covered_modes", "collapse_entropy"],
    );
    for (name, gen) in [("perfect", &perfect), ("collapsed", &collapsed)] {
        let r = eval_generation(&real.points, gen, 5)?;
        let m = mode_coverage(gen, centers, 3.0, real.noise_sigma);
        println!(
            "{name:<10} fld={:<8.4} coverage={:<6.4} density={:<6.4} modes={}/8 entropy={:.3}",
            r.fld, r.coverage, r.density, m.covered_modes, m.collapse_entropy
        );
        table.push_row(
            name,
            vec![r.fld, r.coverage, r.density, m.covered_modes as f64, m.collapse_entropy],
        );
    }

    let out = Path::new("target/examples/evaluate_generation");
    std::fs::create_dir_all(out).expect("create output dir");
    let csv = out.join("comparison.csv");
    table.save(&csv)?;
    println!("table -> {}", csv.display());
    Ok(())
}
