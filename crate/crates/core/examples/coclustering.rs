//! Spectral co-clustering of a weight map with a planted block structure,
//! block importances and a reordered heatmap.
//!
//! cargo run --example coclustering -- [heatmap.svg]

use lotcyto::cocluster::{bicluster_importance, reorder_heatmap, same_partition, spectral_bicluster, spectral_cocluster};
use lotcyto::plot::heatmap_svg;
use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

fn main() -> lotcyto::Result<()> {
    let (m, d, k) = (40, 12, 3);
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let row_truth: Vec<usize> = (0..m).map(|i| i % k).collect();
    let col_truth: Vec<usize> = (0..d).map(|j| j % k).collect();
    let w = DMatrix::from_fn(m, d, |i, j| {
        let level = if row_truth[i] == col_truth[j] { 8.0 } else { 2.0 };
        let noise: f64 = rng.sample(StandardNormal);
        let sign = if rng.random_bool(0.5) { 1.0 } else { -1.0 };
        sign * (level + noise)
    });

    let a = spectral_cocluster(&w, k, k, 0)?;
    println!("rows recovered: {}", same_partition(&a.row_labels, &row_truth));
    println!("cols recovered: {}", same_partition(&a.col_labels, &col_truth));
    let importance = bicluster_importance(&w, &a)?;
    for r in 0..k {
        let row: Vec<String> = (0..k).map(|c| format!("{:6.2}", importance[(r, c)])).collect();
        println!("  {}", row.join(" "));
    }

    let checker = spectral_bicluster(&w, k, k, 0)?;
    println!("checkerboard rows agree: {}", same_partition(&checker.row_labels, &row_truth));

    if let Some(path) = std::env::args().nth(1) {
        let heat = reorder_heatmap(&w.abs(), &a)?;
        let breaks = |labels: &[usize], order: &[usize]| -> Vec<usize> {
            (1..order.len()).filter(|&i| labels[order[i]] != labels[order[i - 1]]).collect()
        };
        let svg = heatmap_svg(&heat.matrix, &breaks(&a.row_labels, &heat.row_order), &breaks(&a.col_labels, &heat.col_order), "|W| by co-cluster");
        std::fs::write(&path, svg)?;
        println!("wrote {path}");
    }
    Ok(())
}
