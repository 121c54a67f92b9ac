//! Cluster activation signatures and their two-sample tests.
//!
//! For a row cluster of reference points, each group's LOT values on those
//! rows are pooled, averaged per marker, and standardized against the global
//! per-marker statistics of all LOT values:
//! `Z = (x_group − μ_global) / (σ_global / √n_cells)`.

use std::io::Write;

use nalgebra::DMatrix;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GroupSignature {
    pub group: usize,
    pub z: Vec<f64>,
    pub mean: Vec<f64>,
    pub n_cells: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ClusterSignature {
    pub cluster: usize,
    pub marker_names: Vec<String>,
    pub groups: Vec<GroupSignature>,
    /// Markers whose global standard deviation is zero; their Z is reported as 0.
    pub zero_sigma: Vec<bool>,
}

impl ClusterSignature {
    pub fn group(&self, group: usize) -> Option<&GroupSignature> {
        self.groups.iter().find(|g| g.group == group)
    }
}

fn check_embeddings(embeddings: &[DMatrix<f64>], groups: &[usize], marker_names: &[String]) -> Result<usize> {
    let first = embeddings
        .first()
        .ok_or_else(|| Error::InvalidInput("no embeddings given".into()))?;
    let (m, d) = first.shape();
    if embeddings.iter().any(|e| e.shape() != (m, d)) {
        return Err(Error::Dimension("embeddings differ in shape".into()));
    }
    if marker_names.len() != d {
        return Err(Error::Dimension(format!("{} marker names for {d} columns", marker_names.len())));
    }
    if groups.len() != embeddings.len() {
        return Err(Error::Dimension(format!(
            "{} group labels for {} samples",
            groups.len(),
            embeddings.len()
        )));
    }
    Ok(m)
}

/// Per-marker mean and population standard deviation over every row of every sample.
pub fn global_moments(embeddings: &[DMatrix<f64>]) -> (Vec<f64>, Vec<f64>) {
    let d = embeddings.first().map_or(0, |e| e.ncols());
    let mut mean = vec![0.0; d];
    let mut count = 0usize;
    for e in embeddings {
        for row in e.row_iter() {
            for (m, v) in mean.iter_mut().zip(row.iter()) {
                *m += v;
            }
            count += 1;
        }
    }
    let n = count.max(1) as f64;
    mean.iter_mut().for_each(|m| *m /= n);
    let mut var = vec![0.0; d];
    for e in embeddings {
        for row in e.row_iter() {
            for k in 0..d {
                var[k] += (row[k] - mean[k]).powi(2);
            }
        }
    }
    (mean, var.into_iter().map(|v| (v / n).sqrt()).collect())
}

/// Standardized mean activation of each group on the rows in `row_cluster`.
///
/// `embeddings` are per-sample m × d reshapes; `groups[i]` is sample i's group.
pub fn cluster_signature(
    cluster: usize,
    embeddings: &[DMatrix<f64>],
    row_cluster: &[usize],
    groups: &[usize],
    marker_names: &[String],
) -> Result<ClusterSignature> {
    let m = check_embeddings(embeddings, groups, marker_names)?;
    if row_cluster.is_empty() {
        return Err(Error::InvalidInput(format!("row cluster {cluster} is empty")));
    }
    if let Some(&j) = row_cluster.iter().find(|&&j| j >= m) {
        return Err(Error::Dimension(format!("row {j} outside 0..{m}")));
    }
    let d = marker_names.len();
    let (mu, sigma) = global_moments(embeddings);
    let zero_sigma: Vec<bool> = sigma.iter().map(|&s| s == 0.0).collect();

    let mut group_ids: Vec<usize> = groups.to_vec();
    group_ids.sort_unstable();
    group_ids.dedup();
    let mut out = Vec::with_capacity(group_ids.len());
    for g in group_ids {
        let mut sum = vec![0.0; d];
        let mut n_cells = 0usize;
        for (e, _) in embeddings.iter().zip(groups).filter(|(_, &gi)| gi == g) {
            for &j in row_cluster {
                for k in 0..d {
                    sum[k] += e[(j, k)];
                }
                n_cells += 1;
            }
        }
        let mean: Vec<f64> = sum.iter().map(|s| s / n_cells as f64).collect();
        let root_n = (n_cells as f64).sqrt();
        let z = (0..d)
            .map(|k| {
                if zero_sigma[k] {
                    0.0
                } else {
                    (mean[k] - mu[k]) / (sigma[k] / root_n)
                }
            })
            .collect();
        out.push(GroupSignature {
            group: g,
            z,
            mean,
            n_cells,
        });
    }
    Ok(ClusterSignature {
        cluster,
        marker_names: marker_names.to_vec(),
        groups: out,
        zero_sigma,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct KsResult {
    pub statistic: f64,
    pub p_value: f64,
}

/// Effective sizes below this use a seeded permutation p-value.
pub const PERMUTATION_THRESHOLD: f64 = 25.0;
pub const PERMUTATIONS: usize = 1000;
const PERMUTATION_SEED: u64 = 0x6b73;

fn sorted(v: &[f64]) -> Vec<f64> {
    let mut s = v.to_vec();
    s.sort_by(f64::total_cmp);
    s
}

/// sup |F_x − F_y| over all thresholds, by a merged scan of the sorted samples.
pub fn ks_statistic(x: &[f64], y: &[f64]) -> f64 {
    let xs = sorted(x);
    let ys = sorted(y);
    ks_sorted(&xs, &ys)
}

fn ks_sorted(xs: &[f64], ys: &[f64]) -> f64 {
    let (nx, ny) = (xs.len() as f64, ys.len() as f64);
    let (mut i, mut j) = (0, 0);
    let mut d: f64 = 0.0;
    while i < xs.len() && j < ys.len() {
        let t = xs[i].min(ys[j]);
        while i < xs.len() && xs[i] <= t {
            i += 1;
        }
        while j < ys.len() && ys[j] <= t {
            j += 1;
        }
        d = d.max((i as f64 / nx - j as f64 / ny).abs());
    }
    d
}

/// Survival function of the Kolmogorov distribution, P(K > λ).
pub fn kolmogorov_survival(lambda: f64) -> f64 {
    if lambda <= 0.0 {
        return 1.0;
    }
    if lambda < 1.18 {
        // Dual series, fast for small λ.
        let pi2 = std::f64::consts::PI.powi(2);
        let mut s = 0.0;
        for k in (1..40).step_by(2) {
            s += (-(k * k) as f64 * pi2 / (8.0 * lambda * lambda)).exp();
        }
        (1.0 - (2.0 * std::f64::consts::PI).sqrt() / lambda * s).clamp(0.0, 1.0)
    } else {
        let mut s = 0.0;
        for k in 1..101 {
            let term = (-2.0 * (k * k) as f64 * lambda * lambda).exp();
            s += if k % 2 == 1 { term } else { -term };
            if term < 1e-300 {
                break;
            }
        }
        (2.0 * s).clamp(0.0, 1.0)
    }
}

/// Two-sided two-sample Kolmogorov–Smirnov test.
///
/// The p-value is asymptotic in the effective size `n_x·n_y/(n_x+n_y)`; below
/// [`PERMUTATION_THRESHOLD`] it is a seeded permutation estimate instead.
pub fn ks_two_sample(x: &[f64], y: &[f64]) -> Result<KsResult> {
    if x.is_empty() || y.is_empty() {
        return Err(Error::InvalidInput("KS test needs two nonempty samples".into()));
    }
    if x.iter().chain(y).any(|v| !v.is_finite()) {
        return Err(Error::InvalidInput("KS test on non-finite values".into()));
    }
    let statistic = ks_statistic(x, y);
    let (nx, ny) = (x.len() as f64, y.len() as f64);
    let n_e = nx * ny / (nx + ny);
    let p_value = if n_e >= PERMUTATION_THRESHOLD {
        kolmogorov_survival(n_e.sqrt() * statistic)
    } else {
        permutation_p(x, y, statistic)
    };
    Ok(KsResult { statistic, p_value })
}

fn permutation_p(x: &[f64], y: &[f64], observed: f64) -> f64 {
    let mut pooled: Vec<f64> = x.iter().chain(y).copied().collect();
    let mut rng = ChaCha8Rng::seed_from_u64(PERMUTATION_SEED);
    let mut at_least = 0usize;
    for _ in 0..PERMUTATIONS {
        pooled.shuffle(&mut rng);
        let (a, b) = pooled.split_at(x.len());
        if ks_statistic(a, b) >= observed - 1e-12 {
            at_least += 1;
        }
    }
    (1 + at_least) as f64 / (1 + PERMUTATIONS) as f64
}

/// Benjamini–Hochberg adjusted q-values, in input order.
pub fn bh_fdr(pvals: &[f64]) -> Result<Vec<f64>> {
    if let Some(p) = pvals.iter().find(|p| !(0.0..=1.0).contains(*p)) {
        return Err(Error::InvalidInput(format!("p-value {p} outside [0, 1]")));
    }
    let n = pvals.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| pvals[a].total_cmp(&pvals[b]));
    let mut q = vec![0.0; n];
    let mut running = f64::INFINITY;
    for rank in (0..n).rev() {
        let i = order[rank];
        running = running.min(pvals[i] / ((rank + 1) as f64 / n as f64));
        q[i] = running.min(1.0);
    }
    Ok(q)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FeatureTest {
    pub feature: String,
    pub statistic: f64,
    pub p_value: f64,
}

/// Per-marker KS tests between the pooled raw LOT values of two groups on
/// the rows of one cluster.
pub fn cluster_ks_tests(
    embeddings: &[DMatrix<f64>],
    row_cluster: &[usize],
    groups: &[usize],
    group_a: usize,
    group_b: usize,
    marker_names: &[String],
) -> Result<Vec<FeatureTest>> {
    check_embeddings(embeddings, groups, marker_names)?;
    let pool = |g: usize, k: usize| -> Vec<f64> {
        embeddings
            .iter()
            .zip(groups)
            .filter(|(_, &gi)| gi == g)
            .flat_map(|(e, _)| row_cluster.iter().map(move |&j| e[(j, k)]))
            .collect()
    };
    marker_names
        .iter()
        .enumerate()
        .map(|(k, name)| {
            let r = ks_two_sample(&pool(group_a, k), &pool(group_b, k))
                .map_err(|e| e.context(format!("KS test for marker {name}")))?;
            Ok(FeatureTest {
                feature: name.clone(),
                statistic: r.statistic,
                p_value: r.p_value,
            })
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Sign {
    #[serde(rename = "+")]
    Plus,
    #[serde(rename = "-")]
    Minus,
    #[serde(rename = "0")]
    Zero,
}

impl Sign {
    pub fn of(v: f64) -> Self {
        if v > 0.0 {
            Sign::Plus
        } else if v < 0.0 {
            Sign::Minus
        } else {
            Sign::Zero
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Sign::Plus => "+",
            Sign::Minus => "-",
            Sign::Zero => "0",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ReportRow {
    pub cluster: usize,
    pub feature: String,
    pub statistic: f64,
    pub p_value: f64,
    pub q_value: f64,
    pub sign: Sign,
    pub significant: bool,
}

/// Joins signatures with their tests. Within each cluster, q-values are BH
/// over that cluster's markers; rows are sorted by q ascending; the sign is
/// that of `Z_a − Z_b`; `q ≤ fdr_threshold` flags significance (a zero
/// threshold flags nothing).
pub fn signature_report(
    signatures: &[ClusterSignature],
    tests: &[Vec<FeatureTest>],
    group_a: usize,
    group_b: usize,
    fdr_threshold: f64,
) -> Result<Vec<ReportRow>> {
    if signatures.len() != tests.len() {
        return Err(Error::Dimension("one test list per signature required".into()));
    }
    let mut rows = Vec::new();
    for (sig, tests) in signatures.iter().zip(tests) {
        let (Some(a), Some(b)) = (sig.group(group_a), sig.group(group_b)) else {
            return Err(Error::InvalidInput(format!(
                "cluster {} lacks group {group_a} or {group_b}",
                sig.cluster
            )));
        };
        let p: Vec<f64> = tests.iter().map(|t| t.p_value).collect();
        let q = bh_fdr(&p)?;
        let mut cluster_rows: Vec<ReportRow> = tests
            .iter()
            .zip(&q)
            .map(|(t, &q)| {
                let k = sig.marker_names.iter().position(|n| *n == t.feature);
                let diff = k.map_or(0.0, |k| a.z[k] - b.z[k]);
                ReportRow {
                    cluster: sig.cluster,
                    feature: t.feature.clone(),
                    statistic: t.statistic,
                    p_value: t.p_value,
                    q_value: q,
                    sign: Sign::of(diff),
                    significant: fdr_threshold > 0.0 && q <= fdr_threshold,
                }
            })
            .collect();
        cluster_rows.sort_by(|x, y| x.q_value.total_cmp(&y.q_value));
        rows.extend(cluster_rows);
    }
    Ok(rows)
}

/// Columns: cluster (1-based), feature, KS_p, KS_FDR, sign, significant.
pub fn write_report_csv<W: Write>(writer: W, rows: &[ReportRow]) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["cluster", "feature", "KS_p", "KS_FDR", "sign", "significant"])?;
    for r in rows {
        w.write_record([
            (r.cluster + 1).to_string(),
            r.feature.clone(),
            format!("{}", r.p_value),
            format!("{}", r.q_value),
            r.sign.as_str().to_string(),
            r.significant.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Columns: marker, Z_groupA, Z_groupB.
pub fn write_signature_csv<W: Write>(writer: W, sig: &ClusterSignature, group_a: usize, group_b: usize) -> Result<()> {
    let (Some(a), Some(b)) = (sig.group(group_a), sig.group(group_b)) else {
        return Err(Error::InvalidInput("signature lacks a requested group".into()));
    };
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["marker", "Z_groupA", "Z_groupB"])?;
    for (k, name) in sig.marker_names.iter().enumerate() {
        w.write_record([name.clone(), format!("{}", a.z[k]), format!("{}", b.z[k])])?;
    }
    w.flush()?;
    Ok(())
}
