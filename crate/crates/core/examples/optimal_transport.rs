//! Entropic and exact transport between two small Gaussian clouds.
//!
//! cargo run --example optimal_transport

use lotcyto::ot::{cost_matrix, exact_ot, sinkhorn, transport_cost, ExactParams, SinkhornParams};
use lotcyto::simgen::{sample_cloud, MixtureSpec};

fn main() -> lotcyto::Result<()> {
    let x = sample_cloud(&MixtureSpec::isotropic(&[vec![0.0, 0.0]], 1.0), 40, 1)?;
    let y = sample_cloud(&MixtureSpec::isotropic(&[vec![2.0, 1.0]], 0.5), 30, 2)?;
    let cost = cost_matrix(&x.points, &y.points)?;

    let exact = exact_ot(&x.weights, &y.weights, &cost, &ExactParams::default())?;
    let w2_exact = transport_cost(&exact, &cost)?;
    println!("exact          W2^2 = {w2_exact:.6}  ({} pivots)", exact.iterations);

    for rel in [0.1, 0.02, 0.005] {
        let plan = sinkhorn(&x.weights, &y.weights, &cost, &SinkhornParams::relative(rel, &cost))?;
        let c = transport_cost(&plan, &cost)?;
        println!(
            "sinkhorn eps={rel:<5} W2^2 = {c:.6}  rel err {:.2e}  marginal {:.1e}  {} iterations",
            (c - w2_exact).abs() / w2_exact,
            plan.marginal_error,
            plan.iterations
        );
    }
    Ok(())
}
