//! Treatment contrasts: control normalization within blocks, the Δ matrix of
//! deviations from additivity, its SVD, and Marčenko–Pastur outlier detection.

use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::io::Write;

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::linalg::thin_svd;
use crate::error::{Error, Result};
use crate::lot::LOTEmbedding;

/// One embedded sample tagged with its block (e.g. patient, culture,
/// replicate) and treatment.
#[derive(Debug, Clone, PartialEq)]
pub struct ContrastItem {
    pub block: String,
    pub treatment: String,
    pub embedding: LOTEmbedding,
}

/// Tags embeddings by reading the block and treatment columns from their group keys.
pub fn tag_items(
    embeddings: &[LOTEmbedding],
    block_columns: &[&str],
    treatment_column: &str,
) -> Result<Vec<ContrastItem>> {
    embeddings
        .iter()
        .map(|z| {
            let lookup = |col: &str| -> Result<String> {
                z.group_key
                    .iter()
                    .find(|(k, _)| k == col)
                    .map(|(_, v)| v.clone())
                    .ok_or_else(|| Error::Usage(format!("sample {} has no key column {col}", z.key_string())))
            };
            let block = block_columns
                .iter()
                .map(|c| lookup(c).map(|v| format!("{c}={v}")))
                .collect::<Result<Vec<_>>>()?
                .join("|");
            Ok(ContrastItem {
                block,
                treatment: lookup(treatment_column)?,
                embedding: z.clone(),
            })
        })
        .collect()
}

fn by_block(items: &[ContrastItem]) -> BTreeMap<&str, Vec<&ContrastItem>> {
    let mut blocks: BTreeMap<&str, Vec<&ContrastItem>> = BTreeMap::new();
    for item in items {
        blocks.entry(item.block.as_str()).or_default().push(item);
    }
    blocks
}

fn check_block(block: &str, members: &[&ContrastItem]) -> Result<()> {
    let first = &members[0].embedding;
    for it in members {
        if it.embedding.reference_hash != first.reference_hash {
            return Err(Error::ReferenceMismatch(format!("block {block} mixes references")));
        }
        if it.embedding.len() != first.len() {
            return Err(Error::Dimension(format!("block {block} mixes embedding lengths")));
        }
    }
    Ok(())
}

fn mean_of(zs: &[&LOTEmbedding]) -> Vec<f64> {
    let mut mean = vec![0.0; zs[0].len()];
    for z in zs {
        for (m, v) in mean.iter_mut().zip(&z.values) {
            *m += v;
        }
    }
    let n = zs.len() as f64;
    mean.iter_mut().for_each(|m| *m /= n);
    mean
}

#[derive(Debug, Clone, PartialEq)]
pub struct Normalized {
    /// Non-control members, blocks in key order, input order within a block.
    pub items: Vec<ContrastItem>,
    /// Blocks without a control, passed through unchanged.
    pub passthrough_blocks: Vec<String>,
    pub controls_dropped: usize,
}

/// Subtracts each block's mean control embedding from its other members and
/// drops the controls.
pub fn block_normalize(items: &[ContrastItem], control_label: &str) -> Result<Normalized> {
    let mut out = Normalized {
        items: Vec::new(),
        passthrough_blocks: Vec::new(),
        controls_dropped: 0,
    };
    for (block, members) in by_block(items) {
        check_block(block, &members)?;
        let controls: Vec<&LOTEmbedding> = members
            .iter()
            .filter(|it| it.treatment == control_label)
            .map(|it| &it.embedding)
            .collect();
        if controls.is_empty() {
            out.passthrough_blocks.push(block.to_string());
            out.items.extend(members.into_iter().cloned());
            continue;
        }
        out.controls_dropped += controls.len();
        let mean = mean_of(&controls);
        for it in members.into_iter().filter(|it| it.treatment != control_label) {
            let mut it = it.clone();
            for (v, c) in it.embedding.values.iter_mut().zip(&mean) {
                *v -= c;
            }
            out.items.push(it);
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TripletSpec {
    pub t1: String,
    pub t2: String,
    pub combo: String,
}

impl TripletSpec {
    pub fn new(t1: &str, t2: &str, combo: &str) -> Self {
        TripletSpec {
            t1: t1.into(),
            t2: t2.into(),
            combo: combo.into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct TripletKey {
    pub block: String,
    pub triplet: TripletSpec,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SkippedBlock {
    pub block: String,
    pub triplet: TripletSpec,
    pub missing: Vec<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DeltaMatrix {
    /// B × p, one row per matched triplet.
    pub rows: DMatrix<f64>,
    pub keys: Vec<TripletKey>,
    pub skipped: Vec<SkippedBlock>,
    pub reference_hash: String,
    pub m: usize,
    pub d: usize,
}

impl DeltaMatrix {
    pub fn b(&self) -> usize {
        self.rows.nrows()
    }

    pub fn p(&self) -> usize {
        self.rows.ncols()
    }
}

/// Builds `z_combo − ½(z_t1 + z_t2)` for every block holding all three arms
/// of each triplet. Repeated members of one treatment are averaged.
pub fn build_delta(items: &[ContrastItem], triplets: &[TripletSpec]) -> Result<DeltaMatrix> {
    let blocks: Vec<(&str, Vec<&ContrastItem>)> = by_block(items).into_iter().collect();
    let first = items
        .first()
        .ok_or_else(|| Error::InvalidInput("no embeddings to contrast".into()))?;
    let reference_hash = first.embedding.reference_hash.clone();
    let (m, d) = (first.embedding.m, first.embedding.d);
    if items.iter().any(|it| it.embedding.reference_hash != reference_hash) {
        return Err(Error::ReferenceMismatch("contrast inputs use different references".into()));
    }
    type Row = std::result::Result<(TripletKey, Vec<f64>), SkippedBlock>;
    let per_block: Vec<Vec<Row>> = blocks
        .par_iter()
        .map(|(block, members)| {
            triplets
                .iter()
                .map(|t| {
                    let arm = |label: &str| -> Option<Vec<f64>> {
                        let zs: Vec<&LOTEmbedding> = members
                            .iter()
                            .filter(|it| it.treatment == label)
                            .map(|it| &it.embedding)
                            .collect();
                        (!zs.is_empty()).then(|| mean_of(&zs))
                    };
                    let (a, b, c) = (arm(&t.t1), arm(&t.t2), arm(&t.combo));
                    match (a, b, c) {
                        (Some(a), Some(b), Some(c)) => {
                            let row = c.iter().zip(a.iter().zip(&b)).map(|(c, (a, b))| c - 0.5 * (a + b)).collect();
                            Ok((
                                TripletKey {
                                    block: block.to_string(),
                                    triplet: t.clone(),
                                },
                                row,
                            ))
                        }
                        (a, b, c) => {
                            let missing = [(&t.t1, a.is_none()), (&t.t2, b.is_none()), (&t.combo, c.is_none())]
                                .into_iter()
                                .filter(|(_, gone)| *gone)
                                .map(|(l, _)| l.clone())
                                .collect();
                            Err(SkippedBlock {
                                block: block.to_string(),
                                triplet: t.clone(),
                                missing,
                            })
                        }
                    }
                })
                .collect()
        })
        .collect();
    let mut keys = Vec::new();
    let mut data = Vec::new();
    let mut skipped = Vec::new();
    for row in per_block.into_iter().flatten() {
        match row {
            Ok((key, values)) => {
                keys.push(key);
                data.extend(values);
            }
            Err(s) => skipped.push(s),
        }
    }
    if keys.is_empty() {
        return Err(Error::InvalidInput(format!(
            "no block holds all arms of any triplet ({} skipped)",
            skipped.len()
        )));
    }
    let p = m * d;
    let rows = DMatrix::from_row_slice(keys.len(), p, &data);
    if rows.iter().any(|v| !v.is_finite()) {
        return Err(Error::Solver("contrast matrix has non-finite entries".into()));
    }
    Ok(DeltaMatrix {
        rows,
        keys,
        skipped,
        reference_hash,
        m,
        d,
    })
}

/// Marčenko–Pastur support edges `σ²(1 ∓ √γ)²`.
pub fn mp_edges(sigma2: f64, gamma: f64) -> Result<(f64, f64)> {
    if !(sigma2 > 0.0 && sigma2.is_finite()) || !(gamma > 0.0 && gamma.is_finite()) {
        return Err(Error::InvalidInput(format!(
            "MP edges need positive variance and ratio, got {sigma2} and {gamma}"
        )));
    }
    let r = gamma.sqrt();
    Ok((sigma2 * (1.0 - r).powi(2), sigma2 * (1.0 + r).powi(2)))
}

/// Density of the continuous part of the MP law at unit variance, normalized
/// to integrate to one (for γ > 1 the point mass at zero is removed).
pub fn mp_density(x: f64, gamma: f64) -> f64 {
    let (a, b) = mp_edges(1.0, gamma).expect("positive ratio");
    if x <= a || x >= b || x <= 0.0 {
        return 0.0;
    }
    ((b - x) * (x - a)).sqrt() / (2.0 * PI * gamma.min(1.0) * x)
}

const MEDIAN_GRID: usize = 20_000;

/// Median of the continuous MP part at unit variance.
///
/// Integrates in `x = a + (b − a)(1 − cos θ)/2`, which removes the square-root
/// endpoint behaviour, then interpolates the cumulative distribution.
pub fn mp_median(gamma: f64) -> Result<f64> {
    let (a, b) = mp_edges(1.0, gamma)?;
    let h = (b - a) / 2.0;
    let x_of = |t: f64| a + h * (1.0 - t.cos());
    let g = |t: f64| {
        let x = x_of(t);
        if x <= 0.0 {
            // Only at θ = 0 when a = 0; the limit of sin²θ/x there is 2/h... times h².
            return h * h * 2.0 / h / (2.0 * PI * gamma.min(1.0));
        }
        (h * t.sin()).powi(2) / (2.0 * PI * gamma.min(1.0) * x)
    };
    let dt = PI / MEDIAN_GRID as f64;
    let mut cdf = Vec::with_capacity(MEDIAN_GRID + 1);
    cdf.push(0.0);
    let mut prev = g(0.0);
    for i in 1..=MEDIAN_GRID {
        let cur = g(i as f64 * dt);
        let last = *cdf.last().expect("nonempty");
        cdf.push(last + 0.5 * (prev + cur) * dt);
        prev = cur;
    }
    let total = cdf[MEDIAN_GRID];
    let half = 0.5 * total;
    let i = cdf.partition_point(|&c| c < half).clamp(1, MEDIAN_GRID);
    let frac = (half - cdf[i - 1]) / (cdf[i] - cdf[i - 1]);
    Ok(x_of((i as f64 - 1.0 + frac) * dt))
}

pub const DEFAULT_MARGIN: f64 = 0.02;
pub const SIGMA2_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SpectrumReport {
    pub b: usize,
    pub p: usize,
    /// Singular values of the un-centered Δ.
    pub singular_values: Vec<f64>,
    /// Singular values of the column-centered D.
    pub centered_singular_values: Vec<f64>,
    /// `s_i(D)² / (B − 1)`, descending.
    pub eigenvalues: Vec<f64>,
    pub gamma: f64,
    pub sigma2: f64,
    pub lambda_minus: f64,
    pub lambda_plus: f64,
    pub margin: f64,
    pub outliers: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DeltaSvd {
    /// B × r left singular vectors of Δ.
    pub u: DMatrix<f64>,
    pub s: Vec<f64>,
    /// p × r right singular vectors of Δ, each with its largest-magnitude entry positive.
    pub v: DMatrix<f64>,
    pub spectrum: SpectrumReport,
}

/// Column-centered copy of `delta`.
pub fn center_columns(delta: &DMatrix<f64>) -> DMatrix<f64> {
    let mut d = delta.clone();
    for mut col in d.column_iter_mut() {
        let mean = col.mean();
        col.add_scalar_mut(-mean);
    }
    d
}

/// Bulk variance estimate: median eigenvalue over the MP median, floored.
pub fn estimate_sigma2(eigenvalues: &[f64], b: usize, gamma: f64) -> Result<f64> {
    let r = eigenvalues.len().min(b.saturating_sub(1)).max(1);
    let mut bulk: Vec<f64> = eigenvalues.iter().take(r).copied().collect();
    if bulk.is_empty() {
        return Ok(SIGMA2_FLOOR);
    }
    bulk.sort_by(f64::total_cmp);
    let n = bulk.len();
    let med = if n % 2 == 1 {
        bulk[n / 2]
    } else {
        0.5 * (bulk[n / 2 - 1] + bulk[n / 2])
    };
    Ok((med / mp_median(gamma)?).max(SIGMA2_FLOOR))
}

/// Indices with `λ_i > λ₊ (1 + margin)`.
pub fn mp_outliers(report: &SpectrumReport) -> Vec<usize> {
    let cut = report.lambda_plus * (1.0 + report.margin);
    report
        .eigenvalues
        .iter()
        .enumerate()
        .filter(|(_, &l)| l > cut)
        .map(|(i, _)| i)
        .collect()
}

/// SVD of the un-centered Δ plus the MP analysis of its column-centered copy.
/// A zero Δ yields an all-zero spectrum and no outliers.
pub fn delta_svd(delta: &DMatrix<f64>, margin: f64) -> Result<DeltaSvd> {
    let (b, p) = delta.shape();
    if b < 2 {
        return Err(Error::InvalidInput(format!("contrast SVD needs at least 2 rows, got {b}")));
    }
    if p == 0 {
        return Err(Error::InvalidInput("contrast matrix has no columns".into()));
    }
    if !(margin >= 0.0 && margin.is_finite()) {
        return Err(Error::InvalidInput(format!("outlier margin {margin} must be nonnegative")));
    }
    if delta.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidInput("contrast matrix has non-finite entries".into()));
    }
    let (mut u, s, mut v) = thin_svd(delta)?;
    for c in 0..v.ncols() {
        let col = v.column(c);
        let (imax, _) = col
            .iter()
            .enumerate()
            .fold((0, -1.0), |acc, (i, x)| if x.abs() > acc.1 { (i, x.abs()) } else { acc });
        if v[(imax, c)] < 0.0 {
            v.column_mut(c).neg_mut();
            u.column_mut(c).neg_mut();
        }
    }
    let (_, centered, _) = thin_svd(&center_columns(delta))?;
    let eigenvalues: Vec<f64> = centered.iter().map(|s| s * s / (b - 1) as f64).collect();
    let gamma = p as f64 / b as f64;
    let sigma2 = estimate_sigma2(&eigenvalues, b, gamma)?;
    let (lambda_minus, lambda_plus) = mp_edges(sigma2, gamma)?;
    let mut spectrum = SpectrumReport {
        b,
        p,
        singular_values: s.clone(),
        centered_singular_values: centered,
        eigenvalues,
        gamma,
        sigma2,
        lambda_minus,
        lambda_plus,
        margin,
        outliers: Vec::new(),
    };
    spectrum.outliers = mp_outliers(&spectrum);
    Ok(DeltaSvd { u, s, v, spectrum })
}

/// Scores `Δ V[:, :k]`, one row per contrast.
pub fn project_scores(delta: &DMatrix<f64>, v: &DMatrix<f64>, k: usize) -> Result<DMatrix<f64>> {
    if k > v.ncols() {
        return Err(Error::InvalidInput(format!("{k} components requested, {} available", v.ncols())));
    }
    if v.nrows() != delta.ncols() {
        return Err(Error::Dimension(format!(
            "directions have {} rows, contrasts {} columns",
            v.nrows(),
            delta.ncols()
        )));
    }
    Ok(delta * v.columns(0, k))
}

/// Columns: block, t1, t2, combo, score_1..score_k.
pub fn write_scores_csv<W: Write>(writer: W, keys: &[TripletKey], scores: &DMatrix<f64>) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    let mut header = vec!["block".to_string(), "t1".into(), "t2".into(), "combo".into()];
    header.extend((1..=scores.ncols()).map(|i| format!("score_{i}")));
    w.write_record(&header)?;
    for (i, key) in keys.iter().enumerate() {
        let mut rec = vec![
            key.block.clone(),
            key.triplet.t1.clone(),
            key.triplet.t2.clone(),
            key.triplet.combo.clone(),
        ];
        rec.extend(scores.row(i).iter().map(|v| format!("{v}")));
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct HistogramBin {
    pub lo: f64,
    pub hi: f64,
    pub count: usize,
    /// Count divided by (n · width).
    pub density: f64,
}

/// Histogram of the nonzero-rank eigenvalues and the MP density at the bin centers.
pub fn spectrum_histogram(report: &SpectrumReport, bins: usize) -> Vec<(HistogramBin, f64)> {
    let hi = spectrum_values(report).iter().copied().fold(report.lambda_plus, f64::max) * 1.05;
    histogram_upto(report, bins, hi)
}

fn spectrum_values(report: &SpectrumReport) -> &[f64] {
    let r = report.eigenvalues.len().min(report.b - 1).max(1);
    &report.eigenvalues[..r.min(report.eigenvalues.len())]
}

/// Histogram over `[0, hi)`; eigenvalues at or above `hi` are left out of the counts
/// but still count towards the normalization.
pub fn histogram_upto(report: &SpectrumReport, bins: usize, hi: f64) -> Vec<(HistogramBin, f64)> {
    let vals = spectrum_values(report);
    let bins = bins.max(1);
    let lo = 0.0;
    let width = (hi - lo) / bins as f64;
    if !(width > 0.0) {
        return Vec::new();
    }
    let mut counts = vec![0usize; bins];
    for &v in vals {
        let i = ((v - lo) / width) as usize;
        if i < bins {
            counts[i] += 1;
        } else if v <= hi * (1.0 + 1e-12) {
            counts[bins - 1] += 1;
        }
    }
    counts
        .into_iter()
        .enumerate()
        .map(|(i, count)| {
            let (a, b) = (lo + i as f64 * width, lo + (i + 1) as f64 * width);
            let mid = 0.5 * (a + b);
            let curve = mp_density(mid / report.sigma2, report.gamma) / report.sigma2;
            (
                HistogramBin {
                    lo: a,
                    hi: b,
                    count,
                    density: count as f64 / (vals.len() as f64 * width),
                },
                curve,
            )
        })
        .collect()
}

/// The fitted MP density `f(λ/σ̂²)/σ̂²` on `points` evenly spaced abscissae across its support.
pub fn mp_curve(report: &SpectrumReport, points: usize) -> Vec<(f64, f64)> {
    let (lo, hi) = (report.lambda_minus, report.lambda_plus);
    let n = points.max(2);
    (0..n)
        .map(|i| {
            let x = lo + (hi - lo) * i as f64 / (n - 1) as f64;
            (x, mp_density(x / report.sigma2, report.gamma) / report.sigma2)
        })
        .collect()
}

/// Columns: lambda, mp_density.
pub fn write_curve_csv<W: Write>(writer: W, curve: &[(f64, f64)]) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["lambda", "mp_density"])?;
    for (x, y) in curve {
        w.write_record([format!("{x}"), format!("{y}")])?;
    }
    w.flush()?;
    Ok(())
}

/// Columns: bin_lo, bin_hi, count, density, mp_density.
pub fn write_spectrum_csv<W: Write>(writer: W, bins: &[(HistogramBin, f64)]) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["bin_lo", "bin_hi", "count", "density", "mp_density"])?;
    for (bin, curve) in bins {
        w.write_record([
            format!("{}", bin.lo),
            format!("{}", bin.hi),
            bin.count.to_string(),
            format!("{}", bin.density),
            format!("{curve}"),
        ])?;
    }
    w.flush()?;
    Ok(())
}
