//! Where does the map send the plane? Samples a grid of source points,
//! applies the trained map once, and renders sources (dots) with their
//! displacements (arrows). Points near the data land almost in place;
//! far points get pulled toward the manifold.

use std::path::Path;

use naign::datasets::DatasetSpec;
use naign::fields::{grid_points, projection_map, render_projection_svg};
use naign::net::MlpArch;
use naign::trainer::{run_training, Method, TrainConfig};
use naign::Metric;

fn main() -> naign::Result<()> {
    let mut cfg = TrainConfig::new(
        Method::Naign,
        DatasetSpec::EightGaussians { std: 0.1 },
        MlpArch::new(2, vec![32, 32]),
    );
    cfg.steps = 6000;
    cfg.batch_size = 256;
    cfg.imle_m = 512;
    cfg.log_every = 0;
    cfg.eval_every = 0;
    println!("training on the eight-Gaussian ring ...");
    let outcome = run_training(&cfg, None)?;

    let sources = grid_points(-3.0, 3.0, -3.0, 3.0, 18, 18)?;
    let pm = projection_map(&outcome.params, &sources, Metric::L2)?;

    // The data sits in eight blobs on a radius-2 circle. Points on the
    // circle but between blobs are still off the data, so contrast is
    // measured against the blob centers, not the circle.
    let centers: Vec<[f64; 2]> = (0..8)
        .map(|k| {
            let a = k as f64 * std::f64::consts::FRAC_PI_4;
            [2.0 * a.cos(), 2.0 * a.sin()]
        })
        .collect();
    let (mut near, mut near_n, mut far, mut far_n) = (0.0, 0, 0.0, 0);
    for i in 0..sources.rows() {
        let d = centers
            .iter()
            .map(|c| ((sources.get(i, 0) - c[0]).powi(2) + (sources.get(i, 1) - c[1]).powi(2)).sqrt())
            .fold(f64::INFINITY, f64::min);
        if d < 0.3 {
            near += pm.norms[i];
            near_n += 1;
        } else if d > 0.8 {
            far += pm.norms[i];
            far_n += 1;
        }
    }
    let (near, far) = (near / near_n as f64, far / far_n as f64);
    println!("mean displacement near the data: {near:.3}, far from it: {far:.3}");
    assert!(
        far > 2.0 * near,
        "far points should move at least twice as much as near ones"
    );

    let out = Path::new("target/examples/projection_map");
    std::fs::create_dir_all(out).expect("create output dir");
    let svg = out.join("projection.svg");
    let csv = out.join("projection.csv");
    render_projection_svg(&pm, &svg)?;
    pm.save_csv(&csv)?;
    println!("{} sources -> {}", pm.sources.rows(), svg.display());
    Ok(())
}
