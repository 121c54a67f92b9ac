//! Builds a reference from a pooled cohort and embeds each sample as a
//! displacement field; Euclidean distances between embeddings approximate W2.
//!
//! cargo run --release --example lot_embedding

use lotcyto::lot::{build_reference, embed, embed_cohort, ReferenceParams, SolverConfig};
use lotcyto::ot::{cost_matrix, exact_ot, transport_cost, ExactParams};
use lotcyto::simgen::{default_marker_names, make_two_class_cohort, perturb_cloud, CohortSpec, Perturbation};

fn main() -> lotcyto::Result<()> {
    let clouds = make_two_class_cohort(&CohortSpec::gaussian_shift(3, 4, 150, 1.0, 3.0, 7))?;
    let params = ReferenceParams { m: 64, ..ReferenceParams::default() };
    let reference = build_reference(&clouds, &default_marker_names(3), &params)?;
    println!("reference: m = {}, d = {}, hash {}", reference.m(), reference.d(), &reference.hash()[..12]);

    let solver = SolverConfig::default();
    let zs = embed_cohort(&reference, &clouds, &solver, 0)?;
    for (cloud, (z, info)) in clouds.iter().zip(&zs) {
        let norm = z.values.iter().map(|v| v * v).sum::<f64>().sqrt() / (z.m as f64).sqrt();
        println!("{:<12} class {:?}  |z| = {norm:.3}  marginal {:.1e}", cloud.key_string(), cloud.class, info.marginal_error);
    }

    // Translating a sample translates every row of its embedding, up to
    // the entropic blur of the solver.
    let shift = vec![1.5, -0.5, 0.0];
    let moved = perturb_cloud(&clouds[0], &Perturbation::Shift(shift.clone()))?;
    let fine = SolverConfig::sinkhorn(0.001);
    let (z0, z1) = (embed(&reference, &clouds[0], &fine)?, embed(&reference, &moved, &fine)?);
    let worst = (0..z0.m)
        .flat_map(|i| (0..3).map(move |k| (i, k)))
        .map(|(i, k)| (z1.values[i * 3 + k] - z0.values[i * 3 + k] - shift[k]).abs())
        .fold(0.0, f64::max);
    println!("shift equivariance at eps = 0.001 mean(C): max deviation {worst:.2e}");

    // Embedding distance against the exact Wasserstein distance.
    let (a, b) = (&clouds[0], &clouds[clouds.len() - 1]);
    let lot = zs[0].0.values.iter().zip(&zs[clouds.len() - 1].0.values).map(|(x, y)| (x - y).powi(2)).sum::<f64>() / reference.m() as f64;
    let cost = cost_matrix(&a.points, &b.points)?;
    let exact = transport_cost(&exact_ot(&a.weights, &b.weights, &cost, &ExactParams { max_size: 200 })?, &cost)?;
    println!("W2 {:.3} vs embedding distance {:.3}", exact.sqrt(), lot.sqrt());
    Ok(())
}
