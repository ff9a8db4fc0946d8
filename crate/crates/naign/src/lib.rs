//! Generative modelling by learning an idempotent map.
//!
//! A single MLP `f: R^D -> R^D` is trained so that data points are fixed
//! points of `f`, prior samples are mapped onto the data manifold, and
//! applying `f` twice is the same as applying it once. Two training
//! recipes are provided:
//!
//! * `naign` replaces the adversarial tightness term with a
//!   nearest-candidate matching loss (IMLE-style), so no discriminator
//!   dynamics are involved. A `naign_minus` ablation drops the
//!   idempotence term.
//! * `ign` is the adversarial baseline: reconstruction, idempotence and
//!   a negated tightness term under one shared set of weights.
//!
//! Because a trained `f` moves points toward the data manifold, the
//! displacement norm `d(z, f(z))` acts as a distance estimate and yields
//! an unnormalised density `exp(-(e^{k*d} - 1))` without any extra
//! training.
//!
//! Start with the runnable examples, one per capability:
//!
//! ```text
//! cargo run --release --example train_2d            # train on a point-cloud mixture
//! cargo run --release --example ign_baseline        # adversarial counterpart
//! cargo run --release --example generate_datasets   # synthetic dataset export
//! cargo run --release --example evaluate_generation # coverage / density / FLD
//! cargo run --release --example restoration         # degrade-then-restore
//! cargo run --release --example density_field       # drift, energy, density SVGs
//! cargo run --release --example projection_map      # where f sends a grid
//! cargo run --release --example gradient_check      # autodiff vs finite differences
//! ```
//!
//! The same capabilities are exposed as subcommands of the thin `naign`
//! binary (`gen-data`, `train`, `eval-gen`, `eval-restore`, `field`,
//! `project`, `density`, `grad-check`).
//!
//! Worker threads are capped by the `NAIGN_THREADS` environment
//! variable; all reductions run in a fixed order, so results are
//! identical for any thread count.

pub mod cli;
pub mod datasets;
pub mod fields;
pub mod losses;
pub mod metrics;
pub mod net;
pub mod numerics;
pub mod trainer;

mod error;
mod threads;

pub use error::{Error, Result};
pub use numerics::{Matrix, Metric};
