//! Linear SVM objective against an independent projected-subgradient run.

use lotcyto::classify::{primal_objective, train_linear_svm, SvmParams};
use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

/// Subgradient descent on the primal in (w, b) with step c0/√t, keeping
/// the best iterate. Shares nothing with the dual solver.
fn subgradient_oracle(z: &DMatrix<f64>, y: &[f64], c: f64, iters: usize) -> f64 {
    let (n, p) = z.shape();
    let rows: Vec<Vec<f64>> = (0..n).map(|i| z.row(i).iter().copied().collect()).collect();
    let mut w = vec![0.0; p];
    let mut b = 0.0;
    let mut best = f64::INFINITY;
    let mut gw = vec![0.0; p];
    for t in 1..=iters {
        let mut obj = 0.5 * w.iter().map(|v| v * v).sum::<f64>();
        gw.copy_from_slice(&w);
        let mut gb = 0.0;
        for (x, &yi) in rows.iter().zip(y) {
            let s: f64 = x.iter().zip(&w).map(|(a, b)| a * b).sum::<f64>() + b;
            let margin = 1.0 - yi * s;
            if margin > 0.0 {
                obj += c * margin;
                for (g, xk) in gw.iter_mut().zip(x) {
                    *g -= c * yi * xk;
                }
                gb -= c * yi;
            }
        }
        best = best.min(obj);
        let step = 0.05 / (t as f64).sqrt();
        for (wk, g) in w.iter_mut().zip(&gw) {
            *wk -= step * g;
        }
        b -= step * gb;
    }
    best
}

#[test]
fn dual_solver_matches_subgradient_objective() {
    let mut rng = ChaCha8Rng::seed_from_u64(20);
    // Overlapping classes so that the hinge term is active.
    let z = DMatrix::from_fn(20, 2, |i, _| {
        let mu = if i < 10 { -0.7 } else { 0.7 };
        let e: f64 = StandardNormal.sample(&mut rng);
        mu + e
    });
    let y: Vec<f64> = (0..20).map(|i| if i < 10 { -1.0 } else { 1.0 }).collect();
    let c = 1.0;
    let model = train_linear_svm(&z, &y, &SvmParams { c, ..Default::default() }).unwrap();
    let ours = primal_objective(&model.w, model.b, &z, &y, c);
    let oracle = subgradient_oracle(&z, &y, c, 1_000_000);
    println!("dual {ours} subgradient {oracle}");
    assert!((ours - oracle).abs() <= 1e-4, "dual {ours} vs subgradient {oracle}");
}
