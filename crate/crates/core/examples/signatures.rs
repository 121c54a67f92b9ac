//! Per-cluster marker signatures: Z-scored group means and KS tests with
//! Benjamini–Hochberg control across markers.
//!
//! cargo run --example signatures

use lotcyto::signatures::{cluster_ks_tests, cluster_signature, signature_report};
use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

fn main() -> lotcyto::Result<()> {
    let (m, d, per_group) = (30, 4, 12);
    let names: Vec<String> = ["CD3", "CD4", "CD8", "CD19"].map(String::from).to_vec();
    let mut rng = ChaCha8Rng::seed_from_u64(3);

    // Group 1 displaces rows 0..10 along CD4 and against CD19.
    let mut embeddings = Vec::new();
    let mut groups = Vec::new();
    for g in 0..2 {
        for _ in 0..per_group {
            embeddings.push(DMatrix::from_fn(m, d, |i, k| {
                let z: f64 = rng.sample(StandardNormal);
                let effect = if g == 1 && i < 10 { [0.0, 1.5, 0.0, -1.0][k] } else { 0.0 };
                0.5 * z + effect
            }));
            groups.push(g);
        }
    }

    let clusters: [Vec<usize>; 2] = [(0..10).collect(), (10..m).collect()];
    let mut sigs = Vec::new();
    let mut tests = Vec::new();
    for (c, rows) in clusters.iter().enumerate() {
        sigs.push(cluster_signature(c, &embeddings, rows, &groups, &names)?);
        tests.push(cluster_ks_tests(&embeddings, rows, &groups, 1, 0, &names)?);
    }
    for sig in &sigs {
        let (a, b) = (sig.group(1).unwrap(), sig.group(0).unwrap());
        let diff: Vec<String> = a.z.iter().zip(&b.z).map(|(x, y)| format!("{:+.2}", x - y)).collect();
        println!("cluster {}: Z(1) - Z(0) = [{}]", sig.cluster, diff.join(", "));
    }

    println!("{:<8} {:<6} {:>6} {:>10} {:>10}  sign  sig", "cluster", "marker", "D", "p", "q");
    for row in signature_report(&sigs, &tests, 1, 0, 0.05)? {
        println!(
            "{:<8} {:<6} {:>6.3} {:>10.2e} {:>10.2e}  {:<5} {}",
            row.cluster, row.feature, row.statistic, row.p_value, row.q_value, format!("{:?}", row.sign), row.significant
        );
    }
    Ok(())
}
