//! Compares analytic gradients with finite differences for every autograd
//! primitive and for the desk model under each conditioning method.
//!
//!     cargo run --release --example grad_check -- 6

use ctxbert::autograd::primitive_suite;
use ctxbert::model::desk_suite;

fn main() -> ctxbert::Result<()> {
    let per_tensor = std::env::args()
        .nth(1)
        .and_then(|s| s.parse().ok())
        .unwrap_or(6);
    for (name, err) in primitive_suite()? {
        println!("{name:<18} {err:.2e}");
    }
    for (method, report) in desk_suite(per_tensor, 1)? {
        println!(
            "{:<18} {:.2e}  worst at {} ({} coordinates, {} skipped at kinks)",
            method.to_string(),
            report.worst_relative_error,
            report.worst_tensor,
            report.coordinates,
            report.skipped_at_kinks
        );
    }
    Ok(())
}
