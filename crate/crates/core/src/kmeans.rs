//! Seeded k-means with k-means++ initialization (Lloyd iterations).

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KMeansParams {
    pub k: usize,
    pub max_iter: usize,
    /// Stop when the relative decrease in inertia falls below this.
    pub tol: f64,
    pub restarts: usize,
    pub seed: u64,
}

impl KMeansParams {
    pub fn new(k: usize, seed: u64) -> Self {
        KMeansParams {
            k,
            max_iter: 300,
            tol: 1e-4,
            restarts: 1,
            seed,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct KMeansFit {
    /// k × d.
    pub centers: DMatrix<f64>,
    pub labels: Vec<usize>,
    pub inertia: f64,
    pub iterations: usize,
}

/// Clusters the rows of `data`. Restarts draw from one seeded stream; the
/// lowest inertia wins, first found on ties.
pub fn kmeans(data: &DMatrix<f64>, params: &KMeansParams) -> Result<KMeansFit> {
    let (n, d) = data.shape();
    let k = params.k;
    if k == 0 {
        return Err(Error::InvalidInput("k-means needs k >= 1".into()));
    }
    if n < k {
        return Err(Error::Fit(format!("{n} points cannot form {k} clusters")));
    }
    let rows: Vec<f64> = (0..n).flat_map(|i| (0..d).map(move |j| (i, j))).map(|(i, j)| data[(i, j)]).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    let mut best: Option<KMeansFit> = None;
    for _ in 0..params.restarts.max(1) {
        let fit = lloyd(&rows, n, d, k, params, &mut rng)?;
        if best.as_ref().is_none_or(|b| fit.inertia < b.inertia) {
            best = Some(fit);
        }
    }
    Ok(best.expect("at least one restart"))
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn plus_plus(rows: &[f64], n: usize, d: usize, k: usize, rng: &mut ChaCha8Rng) -> Result<Vec<f64>> {
    let mut centers = Vec::with_capacity(k * d);
    let first = rng.random_range(0..n);
    centers.extend_from_slice(&rows[first * d..(first + 1) * d]);
    let mut dist: Vec<f64> = (0..n)
        .into_par_iter()
        .map(|i| sq_dist(&rows[i * d..(i + 1) * d], &centers[..d]))
        .collect();
    for c in 1..k {
        let total: f64 = dist.iter().sum();
        if !(total > 0.0) {
            return Err(Error::Fit(format!(
                "only {c} distinct points available for {k} clusters"
            )));
        }
        let mut target = rng.random::<f64>() * total;
        let mut chosen = n - 1;
        for (i, &w) in dist.iter().enumerate() {
            if w > 0.0 {
                chosen = i;
                if target < w {
                    break;
                }
                target -= w;
            }
        }
        let center = rows[chosen * d..(chosen + 1) * d].to_vec();
        dist.par_iter_mut().enumerate().for_each(|(i, di)| {
            let nd = sq_dist(&rows[i * d..(i + 1) * d], &center);
            if nd < *di {
                *di = nd;
            }
        });
        centers.extend_from_slice(&center);
    }
    Ok(centers)
}

fn assign(rows: &[f64], centers: &[f64], n: usize, d: usize, k: usize) -> Vec<(usize, f64)> {
    (0..n)
        .into_par_iter()
        .map(|i| {
            let x = &rows[i * d..(i + 1) * d];
            let mut best = (0, f64::INFINITY);
            for c in 0..k {
                let dist = sq_dist(x, &centers[c * d..(c + 1) * d]);
                if dist < best.1 {
                    best = (c, dist);
                }
            }
            best
        })
        .collect()
}

fn lloyd(
    rows: &[f64],
    n: usize,
    d: usize,
    k: usize,
    params: &KMeansParams,
    rng: &mut ChaCha8Rng,
) -> Result<KMeansFit> {
    let mut centers = plus_plus(rows, n, d, k, rng)?;
    let mut assignment = assign(rows, &centers, n, d, k);
    let mut inertia: f64 = assignment.iter().map(|a| a.1).sum();
    let mut iterations = 0;
    while iterations < params.max_iter {
        iterations += 1;
        let mut sums = vec![0.0; k * d];
        let mut counts = vec![0usize; k];
        for (i, &(c, _)) in assignment.iter().enumerate() {
            counts[c] += 1;
            for j in 0..d {
                sums[c * d + j] += rows[i * d + j];
            }
        }
        let mut taken = vec![false; n];
        for c in 0..k {
            if counts[c] > 0 {
                for j in 0..d {
                    centers[c * d + j] = sums[c * d + j] / counts[c] as f64;
                }
            } else {
                // Re-seed an empty cluster at the worst-served point.
                let far = (0..n)
                    .filter(|&i| !taken[i])
                    .max_by(|&a, &b| assignment[a].1.total_cmp(&assignment[b].1).then(b.cmp(&a)))
                    .expect("n >= k");
                taken[far] = true;
                centers[c * d..(c + 1) * d].copy_from_slice(&rows[far * d..(far + 1) * d]);
            }
        }
        assignment = assign(rows, &centers, n, d, k);
        let new_inertia: f64 = assignment.iter().map(|a| a.1).sum();
        let change = if inertia > 0.0 { (inertia - new_inertia) / inertia } else { 0.0 };
        inertia = new_inertia;
        if change.abs() < params.tol {
            break;
        }
    }
    let labels: Vec<usize> = assignment.iter().map(|a| a.0).collect();
    let mut counts = vec![0usize; k];
    labels.iter().for_each(|&l| counts[l] += 1);
    if let Some(empty) = counts.iter().position(|&c| c == 0) {
        return Err(Error::Fit(format!("k-means left cluster {empty} empty")));
    }
    Ok(KMeansFit {
        centers: DMatrix::from_row_slice(k, d, &centers),
        labels,
        inertia,
        iterations,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand_distr::{Distribution, StandardNormal};

    #[test]
    fn recovers_two_blobs() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let data = DMatrix::from_fn(2000, 2, |i, _| {
            let mu = if i < 1000 { -5.0 } else { 5.0 };
            let z: f64 = StandardNormal.sample(&mut rng);
            mu + z
        });
        let fit = kmeans(&data, &KMeansParams::new(2, 7)).unwrap();
        let mut means: Vec<f64> = (0..2).map(|c| fit.centers[(c, 0)]).collect();
        means.sort_by(f64::total_cmp);
        assert!((means[0] + 5.0).abs() < 0.1 && (means[1] - 5.0).abs() < 0.1, "{means:?}");
        assert!(fit.labels[..1000].iter().all(|&l| l == fit.labels[0]));
    }

    #[test]
    fn deterministic_under_seed() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let data = DMatrix::from_fn(300, 3, |_, _| rng.random::<f64>());
        let p = KMeansParams {
            restarts: 5,
            ..KMeansParams::new(6, 42)
        };
        assert_eq!(kmeans(&data, &p).unwrap(), kmeans(&data, &p).unwrap());
    }

    #[test]
    fn too_few_distinct_points() {
        let data = DMatrix::from_element(10, 2, 1.0);
        assert!(matches!(kmeans(&data, &KMeansParams::new(2, 0)), Err(Error::Fit(_))));
        assert!(kmeans(&data, &KMeansParams::new(1, 0)).is_ok());
    }
}
