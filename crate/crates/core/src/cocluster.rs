//! Spectral co-clustering and biclustering of weight matrices.
//!
//! Both fit the same pipeline: take the affinity `A = |W|`, scale it to
//! `D_r^{-1/2} A D_c^{-1/2}`, take the singular vectors after the leading
//! (trivial) pair, rescale them by the degree factors, and cluster rows and
//! columns separately with seeded k-means. They differ in the number of
//! singular vectors kept.

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::kmeans::{kmeans, KMeansParams};
use crate::linalg::thin_svd;

/// Zero-degree rows and columns are floored to this value.
pub const DEGREE_FLOOR: f64 = 1e-12;
pub const KMEANS_RESTARTS: usize = 20;

/// Row and column cluster labels (0-based).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BiclusterAssignment {
    pub row_labels: Vec<usize>,
    pub col_labels: Vec<usize>,
    pub k: usize,
    pub l: usize,
}

impl BiclusterAssignment {
    pub fn rows_in(&self, cluster: usize) -> Vec<usize> {
        (0..self.row_labels.len()).filter(|&j| self.row_labels[j] == cluster).collect()
    }

    pub fn cols_in(&self, cluster: usize) -> Vec<usize> {
        (0..self.col_labels.len()).filter(|&j| self.col_labels[j] == cluster).collect()
    }
}

fn check_shape(w: &DMatrix<f64>, k: usize, l: usize) -> Result<()> {
    let (m, d) = w.shape();
    if k == 0 || l == 0 {
        return Err(Error::InvalidInput("cluster counts must be at least 1".into()));
    }
    if k > m || l > d {
        return Err(Error::InvalidInput(format!(
            "cannot form {k} row x {l} column clusters from a {m} x {d} matrix"
        )));
    }
    if w.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidInput("matrix has non-finite entries".into()));
    }
    Ok(())
}

fn cluster_features(features: &DMatrix<f64>, k: usize, seed: u64, what: &str) -> Result<Vec<usize>> {
    if k == 1 {
        return Ok(vec![0; features.nrows()]);
    }
    let params = KMeansParams {
        restarts: KMEANS_RESTARTS,
        ..KMeansParams::new(k, seed)
    };
    kmeans(features, &params).map(|f| f.labels).map_err(|e| {
        Error::Fit(format!(
            "{what} clustering into {k} groups failed ({e}); try fewer clusters"
        ))
    })
}

fn spectral_partition(affinity: &DMatrix<f64>, k: usize, l: usize, n_vectors: usize, seed: u64) -> Result<BiclusterAssignment> {
    let (m, d) = affinity.shape();
    if k == 1 && l == 1 {
        return Ok(BiclusterAssignment {
            row_labels: vec![0; m],
            col_labels: vec![0; d],
            k,
            l,
        });
    }
    let row_deg: Vec<f64> = affinity.row_iter().map(|r| r.sum().max(DEGREE_FLOOR)).collect();
    let col_deg: Vec<f64> = affinity.column_iter().map(|c| c.sum().max(DEGREE_FLOOR)).collect();
    let scaled = DMatrix::from_fn(m, d, |i, j| affinity[(i, j)] / (row_deg[i] * col_deg[j]).sqrt());
    let (u, _, v) = thin_svd(&scaled)?;
    let available = u.ncols().saturating_sub(1);
    let q = n_vectors.min(available);
    if q == 0 {
        return Err(Error::Fit("matrix too small for a spectral embedding; use K = L = 1".into()));
    }
    let row_features = DMatrix::from_fn(m, q, |i, c| u[(i, c + 1)] / row_deg[i].sqrt());
    let col_features = DMatrix::from_fn(d, q, |j, c| v[(j, c + 1)] / col_deg[j].sqrt());
    let row_labels = cluster_features(&row_features, k, seed, "row")?;
    let col_labels = cluster_features(&col_features, l, seed.wrapping_add(1), "column")?;
    Ok(BiclusterAssignment {
        row_labels,
        col_labels,
        k,
        l,
    })
}

/// Bipartite spectral co-clustering of `|W|` (rows = reference points,
/// columns = markers), using `⌈log₂ max(K, L)⌉` singular vectors.
pub fn spectral_cocluster(w: &DMatrix<f64>, k: usize, l: usize, seed: u64) -> Result<BiclusterAssignment> {
    check_shape(w, k, l)?;
    if w.iter().all(|&v| v == 0.0) {
        return Err(Error::InvalidInput("cannot co-cluster an all-zero matrix".into()));
    }
    let affinity = w.abs();
    let n_vectors = (k.max(l) as f64).log2().ceil().max(1.0) as usize;
    spectral_partition(&affinity, k, l, n_vectors, seed)
}

/// Checkerboard biclustering of a signed matrix. Partitioning uses the
/// absolute-value affinity; `max(K, L) − 1` singular vectors are used.
pub fn spectral_bicluster(mat: &DMatrix<f64>, k: usize, l: usize, seed: u64) -> Result<BiclusterAssignment> {
    check_shape(mat, k, l)?;
    let affinity = mat.abs();
    let n_vectors = (k.max(l) - 1).max(1);
    spectral_partition(&affinity, k, l, n_vectors, seed)
}

/// K × L grid of mean `|W|` over each bicluster. Empty biclusters give 0.
pub fn bicluster_importance(w: &DMatrix<f64>, a: &BiclusterAssignment) -> Result<DMatrix<f64>> {
    if w.nrows() != a.row_labels.len() || w.ncols() != a.col_labels.len() {
        return Err(Error::Dimension(format!(
            "matrix is {:?}, assignment covers {} x {}",
            w.shape(),
            a.row_labels.len(),
            a.col_labels.len()
        )));
    }
    let mut sum = DMatrix::<f64>::zeros(a.k, a.l);
    let mut count = DMatrix::<f64>::zeros(a.k, a.l);
    for (j, &r) in a.row_labels.iter().enumerate() {
        for (c, &cl) in a.col_labels.iter().enumerate() {
            sum[(r, cl)] += w[(j, c)].abs();
            count[(r, cl)] += 1.0;
        }
    }
    Ok(sum.zip_map(&count, |s, n| if n > 0.0 { s / n } else { 0.0 }))
}

/// Rows ordered by (row cluster, index), columns by (column cluster, index).
#[derive(Debug, Clone, PartialEq)]
pub struct ReorderedHeatmap {
    pub matrix: DMatrix<f64>,
    pub row_order: Vec<usize>,
    pub col_order: Vec<usize>,
}

pub fn reorder_heatmap(w: &DMatrix<f64>, a: &BiclusterAssignment) -> Result<ReorderedHeatmap> {
    if w.nrows() != a.row_labels.len() || w.ncols() != a.col_labels.len() {
        return Err(Error::Dimension("assignment does not match matrix shape".into()));
    }
    let mut row_order: Vec<usize> = (0..w.nrows()).collect();
    row_order.sort_by_key(|&j| (a.row_labels[j], j));
    let mut col_order: Vec<usize> = (0..w.ncols()).collect();
    col_order.sort_by_key(|&c| (a.col_labels[c], c));
    let matrix = DMatrix::from_fn(w.nrows(), w.ncols(), |i, j| w[(row_order[i], col_order[j])]);
    Ok(ReorderedHeatmap {
        matrix,
        row_order,
        col_order,
    })
}

/// Whether two labelings induce the same partition.
pub fn same_partition(a: &[usize], b: &[usize]) -> bool {
    if a.len() != b.len() {
        return false;
    }
    use std::collections::HashMap;
    let mut fwd: HashMap<usize, usize> = HashMap::new();
    let mut back: HashMap<usize, usize> = HashMap::new();
    for (&x, &y) in a.iter().zip(b) {
        if *fwd.entry(x).or_insert(y) != y || *back.entry(y).or_insert(x) != x {
            return false;
        }
    }
    true
}
