//! Verifies every loss gradient against central finite differences on
//! random networks. Stop-gradient passes are frozen at the unperturbed
//! parameters, which is exactly what the analytic gradients claim to
//! differentiate.

use naign::losses::{idem_loss, imle_loss, rec_loss, tight_loss};
use naign::net::{finite_diff_grads, forward, init_mlp, Activation, GradientSet, MlpArch};
use naign::numerics::{distance, Matrix, Metric};
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn randn(rng: &mut ChaCha8Rng, n: usize, d: usize) -> Matrix {
    let mut m = Matrix::zeros(n, d);
    for v in m.data_mut() {
        *v = rng.sample::<f64, _>(rand_distr::StandardNormal);
    }
    m
}

fn mean_dist(a: &Matrix, b: &Matrix, metric: Metric) -> f64 {
    (0..a.rows())
        .map(|i| distance(metric, a.row(i), b.row(i)))
        .sum::<f64>()
        / a.rows() as f64
}

/// Relative mismatch with an absolute guard at the oracle's noise
/// floor: coordinates below 1e-2 are scored against that scale, so
/// truncation noise on near-zero entries cannot dominate the report.
fn worst_rel(analytic: &GradientSet, fd: &GradientSet) -> f64 {
    analytic
        .iter()
        .zip(fd.iter())
        .map(|(a, b)| (a - b).abs() / a.abs().max(b.abs()).max(1e-2))
        .fold(0.0, f64::max)
}

fn main() {
    let metric = Metric::L2;
    // Central differences need a smooth map, so the check runs on tanh.
    let mut arch = MlpArch::new(2, vec![8, 8]);
    arch.activation = Activation::Tanh;
    // Small enough that cubic-term truncation stays well under the
    // tolerance even for the twice-applied compositions below.
    let h = 3e-5;
    let mut worst = [("rec", 0.0f64), ("idem", 0.0), ("idem_modified", 0.0), ("tight", 0.0), ("imle", 0.0)];

    for trial in 0..10u64 {
        let p = init_mlp(&arch, 100 + trial);
        let frozen = p.clone();
        let mut rng = ChaCha8Rng::seed_from_u64(trial);
        let x = randn(&mut rng, 4, 2);
        let z = randn(&mut rng, 4, 2);
        let zp = randn(&mut rng, 4, 2);
        let cand = randn(&mut rng, 12, 2);

        let errs = [
            worst_rel(
                &rec_loss(&p, &x, metric).1,
                &finite_diff_grads(&p, |q| rec_loss(q, &x, metric).0, h),
            ),
            worst_rel(
                &idem_loss(&p, &z, None, metric).1,
                &finite_diff_grads(
                    &p,
                    |q| {
                        let y = forward(q, &z);
                        mean_dist(&y, &forward(&frozen, &y), metric)
                    },
                    h,
                ),
            ),
            {
                let q_fixed = forward(&frozen, &zp);
                worst_rel(
                    &idem_loss(&p, &z, Some(&zp), metric).1,
                    &finite_diff_grads(
                        &p,
                        |q| {
                            let term = |batch: &Matrix| {
                                let y = forward(q, batch);
                                mean_dist(&y, &forward(&frozen, &y), metric)
                            };
                            0.5 * (term(&z) + term(&q_fixed))
                        },
                        h,
                    ),
                )
            },
            worst_rel(
                &tight_loss(&p, &z, metric).1,
                &finite_diff_grads(
                    &p,
                    |q| {
                        let a = forward(&frozen, &z);
                        -mean_dist(&a, &forward(q, &a), metric)
                    },
                    h,
                ),
            ),
            worst_rel(
                &imle_loss(&p, &x, &cand, metric).2,
                &finite_diff_grads(&p, |q| imle_loss(q, &x, &cand, metric).0, h),
            ),
        ];
        for (slot, e) in worst.iter_mut().zip(errs) {
            slot.1 = slot.1.max(e);
        }
    }

    let mut ok = true;
    for (name, err) in worst {
        let pass = err <= 1e-4;
        ok &= pass;
        println!(
            "{name:<14} worst relative error {err:.3e}  {}",
            if pass { "ok" } else { "MISMATCH" }
        );
    }
    assert!(ok, "analytic gradients disagree with finite differences");
    println!("all gradients match finite differences within 1e-4");
}
