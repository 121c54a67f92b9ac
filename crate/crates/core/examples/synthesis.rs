//! Barycenters and geodesic interpolation in embedding space, mapped back
//! to point clouds through the pre-image.
//!
//! cargo run --release --example synthesis

use lotcyto::lot::{barycenter, build_reference, embed, interpolate, preimage, ReferenceParams, SolverConfig};
use lotcyto::simgen::{default_marker_names, sample_cloud, MixtureSpec};

fn mean(points: &nalgebra::DMatrix<f64>) -> Vec<f64> {
    points.row_mean().iter().copied().collect()
}

fn main() -> lotcyto::Result<()> {
    let left = sample_cloud(&MixtureSpec::isotropic(&[vec![-3.0, 0.0]], 0.5), 200, 1)?;
    let right = sample_cloud(&MixtureSpec::isotropic(&[vec![3.0, 1.0], vec![3.0, -1.0]], 0.3), 200, 2)?;
    let params = ReferenceParams { m: 50, ..ReferenceParams::default() };
    let reference = build_reference(&[left.clone(), right.clone()], &default_marker_names(2), &params)?;
    let solver = SolverConfig::default();
    let (za, zb) = (embed(&reference, &left, &solver)?, embed(&reference, &right, &solver)?);

    for t in [0.0, 0.25, 0.5, 0.75, 1.0] {
        let cloud = preimage(&reference, &interpolate(&za, &zb, t)?)?;
        let c = mean(&cloud.points);
        println!("t = {t:.2}  centroid ({:+.3}, {:+.3})", c[0], c[1]);
    }

    let mid = barycenter(&[za.clone(), zb.clone()], &[0.5, 0.5])?;
    let from_interp = interpolate(&za, &zb, 0.5)?;
    let gap = mid.values.iter().zip(&from_interp.values).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    println!("equal-weight barycenter vs midpoint: {gap:.1e}");
    Ok(())
}
