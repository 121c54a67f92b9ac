//! Linear optimal transport embeddings against a shared reference.
//!
//! Each sample μ is represented by the displacement field `u(x_j) = T(x_j) − x_j`
//! of the barycentric transport map from the reference atoms `x_j` to μ,
//! flattened reference-point-major into a vector of length `m·d`. Vectors
//! built against the same [`Reference`] live in one Euclidean space, where
//! averaging and interpolation act as the linear surrogate of Wasserstein
//! barycenters and geodesics.

use std::io::{Read, Write};

use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::data::{check_probability, PointCloud};
use crate::error::{Error, Result};
use crate::kmeans::{kmeans, KMeansParams};
use crate::ot::{cost_matrix, exact_ot, sinkhorn, ExactParams, SinkhornParams, TransportPlan};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum ReferenceMethod {
    #[default]
    Kmeans,
    Subsample,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReferenceParams {
    pub m: usize,
    pub method: ReferenceMethod,
    pub seed: u64,
    /// Pooled cells are subsampled to at most this many before fitting.
    pub max_pool: Option<usize>,
}

impl Default for ReferenceParams {
    fn default() -> Self {
        ReferenceParams {
            m: 1000,
            method: ReferenceMethod::Kmeans,
            seed: 0,
            max_pool: Some(100_000),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub method: String,
    pub seed: Option<u64>,
    pub pooled_cells: usize,
    pub used_cells: usize,
}

/// The discretized reference distribution shared by every embedding.
#[derive(Debug, Clone, PartialEq)]
pub struct Reference {
    points: DMatrix<f64>,
    weights: Vec<f64>,
    marker_names: Vec<String>,
    provenance: Provenance,
    hash: String,
}

impl Reference {
    pub fn new(
        points: DMatrix<f64>,
        weights: Vec<f64>,
        marker_names: Vec<String>,
        provenance: Provenance,
    ) -> Result<Self> {
        let (m, d) = points.shape();
        if m < 2 {
            return Err(Error::InvalidInput(format!("reference needs at least 2 points, got {m}")));
        }
        if weights.len() != m {
            return Err(Error::Dimension(format!("{} weights for {m} reference points", weights.len())));
        }
        if marker_names.len() != d {
            return Err(Error::Dimension(format!("{} marker names for dimension {d}", marker_names.len())));
        }
        if points.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidInput("reference contains non-finite values".into()));
        }
        check_probability(&weights, "reference weights")?;
        let hash = content_hash(&points, &weights, &marker_names);
        Ok(Reference {
            points,
            weights,
            marker_names,
            provenance,
            hash,
        })
    }

    /// Uniformly weighted reference on the given points.
    pub fn uniform(points: DMatrix<f64>, marker_names: Vec<String>) -> Result<Self> {
        let m = points.nrows();
        let provenance = Provenance {
            method: "explicit".into(),
            seed: None,
            pooled_cells: m,
            used_cells: m,
        };
        Self::new(points, vec![1.0 / m.max(1) as f64; m], marker_names, provenance)
    }

    pub fn points(&self) -> &DMatrix<f64> {
        &self.points
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn marker_names(&self) -> &[String] {
        &self.marker_names
    }

    pub fn provenance(&self) -> &Provenance {
        &self.provenance
    }

    pub fn hash(&self) -> &str {
        &self.hash
    }

    pub fn m(&self) -> usize {
        self.points.nrows()
    }

    pub fn d(&self) -> usize {
        self.points.ncols()
    }

    /// The reference as a point cloud.
    pub fn as_cloud(&self) -> PointCloud {
        PointCloud {
            points: self.points.clone(),
            weights: self.weights.clone(),
            group_key: vec![("reference".into(), self.hash.clone())],
            label: None,
            class: None,
        }
    }

    pub fn to_json<W: Write>(&self, writer: W) -> Result<()> {
        let file = ReferenceFile {
            m: self.m(),
            d: self.d(),
            marker_names: self.marker_names.clone(),
            weights: self.weights.clone(),
            points: (0..self.m()).map(|j| self.points.row(j).iter().copied().collect()).collect(),
            provenance: self.provenance.clone(),
            hash: self.hash.clone(),
        };
        serde_json::to_writer_pretty(writer, &file)?;
        Ok(())
    }

    pub fn from_json<R: Read>(reader: R) -> Result<Self> {
        let file: ReferenceFile = serde_json::from_reader(reader)?;
        if file.points.len() != file.m || file.points.iter().any(|r| r.len() != file.d) {
            return Err(Error::Dimension("reference file points do not match m x d".into()));
        }
        let flat: Vec<f64> = file.points.into_iter().flatten().collect();
        let points = DMatrix::from_row_slice(file.m, file.d, &flat);
        let r = Reference::new(points, file.weights, file.marker_names, file.provenance)?;
        if r.hash != file.hash {
            return Err(Error::ReferenceMismatch(format!(
                "reference file hash {} does not match its contents ({})",
                file.hash, r.hash
            )));
        }
        Ok(r)
    }
}

#[derive(Serialize, Deserialize)]
struct ReferenceFile {
    m: usize,
    d: usize,
    marker_names: Vec<String>,
    weights: Vec<f64>,
    points: Vec<Vec<f64>>,
    provenance: Provenance,
    hash: String,
}

fn content_hash(points: &DMatrix<f64>, weights: &[f64], names: &[String]) -> String {
    let mut h = Sha256::new();
    h.update((points.nrows() as u64).to_le_bytes());
    h.update((points.ncols() as u64).to_le_bytes());
    for j in 0..points.nrows() {
        for k in 0..points.ncols() {
            h.update(points[(j, k)].to_le_bytes());
        }
    }
    for w in weights {
        h.update(w.to_le_bytes());
    }
    for name in names {
        h.update((name.len() as u64).to_le_bytes());
        h.update(name.as_bytes());
    }
    hex::encode(h.finalize())
}

/// Builds the reference from the pooled cells of `pool`.
pub fn build_reference(pool: &[PointCloud], marker_names: &[String], params: &ReferenceParams) -> Result<Reference> {
    let m = params.m;
    if m < 2 {
        return Err(Error::InvalidInput(format!("reference size must be at least 2, got {m}")));
    }
    let d = marker_names.len();
    if let Some(c) = pool.iter().find(|c| c.dim() != d) {
        return Err(Error::Dimension(format!(
            "cloud {} has dimension {}, expected {d}",
            c.key_string(),
            c.dim()
        )));
    }
    let pooled: usize = pool.iter().map(PointCloud::len).sum();
    if pooled < m {
        return Err(Error::InvalidInput(format!("pool has {pooled} cells, fewer than m = {m}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    let cell = |idx: usize| -> (usize, usize) {
        let mut rest = idx;
        for (c, cloud) in pool.iter().enumerate() {
            if rest < cloud.len() {
                return (c, rest);
            }
            rest -= cloud.len();
        }
        unreachable!("index within pooled count")
    };
    let mut chosen: Vec<usize> = match params.max_pool {
        Some(cap) if cap < pooled => rand::seq::index::sample(&mut rng, pooled, cap.max(m)).into_vec(),
        _ => (0..pooled).collect(),
    };
    chosen.sort_unstable();
    let used = chosen.len();
    let gather = |idx: &[usize]| -> DMatrix<f64> {
        let mut out = DMatrix::zeros(idx.len(), d);
        for (r, &i) in idx.iter().enumerate() {
            let (c, row) = cell(i);
            out.row_mut(r).copy_from(&pool[c].points.row(row));
        }
        out
    };
    let points = match params.method {
        ReferenceMethod::Subsample => {
            let mut pick: Vec<usize> = rand::seq::index::sample(&mut rng, used, m)
                .into_iter()
                .map(|k| chosen[k])
                .collect();
            pick.sort_unstable();
            gather(&pick)
        }
        ReferenceMethod::Kmeans => {
            let data = gather(&chosen);
            let seed = rand::Rng::random::<u64>(&mut rng);
            kmeans(&data, &KMeansParams::new(m, seed))?.centers
        }
    };
    let provenance = Provenance {
        method: match params.method {
            ReferenceMethod::Kmeans => "kmeans".into(),
            ReferenceMethod::Subsample => "subsample".into(),
        },
        seed: Some(params.seed),
        pooled_cells: pooled,
        used_cells: used,
    };
    Reference::new(points, vec![1.0 / m as f64; m], marker_names.to_vec(), provenance)
}

/// OT solver used for embedding.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum SolverConfig {
    Sinkhorn {
        /// ε relative to the mean cost of each instance.
        relative_epsilon: f64,
        max_iter: usize,
        tol_marginal: f64,
    },
    Exact {
        max_size: usize,
    },
}

impl Default for SolverConfig {
    fn default() -> Self {
        SolverConfig::Sinkhorn {
            relative_epsilon: SinkhornParams::DEFAULT_RELATIVE_EPSILON,
            max_iter: 10_000,
            tol_marginal: 1e-7,
        }
    }
}

impl SolverConfig {
    pub fn sinkhorn(relative_epsilon: f64) -> Self {
        match Self::default() {
            SolverConfig::Sinkhorn { max_iter, tol_marginal, .. } => SolverConfig::Sinkhorn {
                relative_epsilon,
                max_iter,
                tol_marginal,
            },
            other => other,
        }
    }

    pub fn exact() -> Self {
        SolverConfig::Exact {
            max_size: ExactParams::default().max_size,
        }
    }

    /// Solves OT from the reference to `target`.
    pub fn solve(&self, reference: &Reference, target: &PointCloud) -> Result<TransportPlan> {
        let cost = cost_matrix(&reference.points, &target.points)?;
        match *self {
            SolverConfig::Sinkhorn {
                relative_epsilon,
                max_iter,
                tol_marginal,
            } => {
                let mean = cost.mean();
                // All points coincide: any coupling is optimal.
                let epsilon = if mean > 0.0 { relative_epsilon * mean } else { 1.0 };
                let params = SinkhornParams {
                    epsilon,
                    max_iter,
                    tol_marginal,
                    epsilon_scaling: true,
                };
                sinkhorn(&reference.weights, &target.weights, &cost, &params)
            }
            SolverConfig::Exact { max_size } => {
                exact_ot(&reference.weights, &target.weights, &cost, &ExactParams { max_size })
            }
        }
    }
}

/// Per-atom displacement `u(x_j) = T(x_j) − x_j`, m × d.
#[derive(Debug, Clone, PartialEq)]
pub struct DisplacementField {
    pub u: DMatrix<f64>,
}

/// A sample's flattened displacement field, `z[j·d + k] = u(x_j)_k`.
#[derive(Debug, Clone, PartialEq)]
pub struct LOTEmbedding {
    pub values: Vec<f64>,
    pub m: usize,
    pub d: usize,
    pub reference_hash: String,
    pub group_key: Vec<(String, String)>,
    pub label: Option<String>,
    pub class: Option<u8>,
}

impl LOTEmbedding {
    pub fn from_field(field: &DisplacementField, reference_hash: &str) -> Result<Self> {
        let (m, d) = field.u.shape();
        if field.u.iter().any(|v| !v.is_finite()) {
            return Err(Error::Solver("displacement field has non-finite entries".into()));
        }
        Ok(LOTEmbedding {
            values: flatten(&field.u),
            m,
            d,
            reference_hash: reference_hash.to_string(),
            group_key: Vec::new(),
            label: None,
            class: None,
        })
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// m × d matrix: rows are reference points, columns markers.
    pub fn reshape(&self) -> DMatrix<f64> {
        DMatrix::from_row_slice(self.m, self.d, &self.values)
    }

    pub fn field(&self) -> DisplacementField {
        DisplacementField { u: self.reshape() }
    }

    pub fn key_string(&self) -> String {
        crate::data::key_string(&self.group_key)
    }
}

/// Row-major flattening of an m × d matrix.
pub fn flatten(matrix: &DMatrix<f64>) -> Vec<f64> {
    let (m, d) = matrix.shape();
    let mut out = Vec::with_capacity(m * d);
    for j in 0..m {
        for k in 0..d {
            out.push(matrix[(j, k)]);
        }
    }
    out
}

/// Conditional mean of the target points given each reference atom.
pub fn barycentric_map(reference: &Reference, target: &PointCloud, plan: &TransportPlan) -> Result<DMatrix<f64>> {
    let (m, n) = plan.coupling.shape();
    if m != reference.m() || n != target.len() {
        return Err(Error::Dimension(format!(
            "plan is {m}x{n}, reference has {} atoms and target {} points",
            reference.m(),
            target.len()
        )));
    }
    if target.dim() != reference.d() {
        return Err(Error::Dimension(format!(
            "target dimension {} differs from reference dimension {}",
            target.dim(),
            reference.d()
        )));
    }
    let mut map = &plan.coupling * &target.points;
    for j in 0..m {
        let mass = plan.coupling.row(j).sum();
        if !(mass > 0.0) {
            return Err(Error::DegenerateMap { atom: j });
        }
        map.row_mut(j).unscale_mut(mass);
    }
    Ok(map)
}

/// Diagnostics from the transport solve behind one embedding.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SolveInfo {
    pub converged: bool,
    pub iterations: usize,
    pub marginal_error: f64,
}

/// Embeds one sample.
pub fn embed(reference: &Reference, sample: &PointCloud, solver: &SolverConfig) -> Result<LOTEmbedding> {
    embed_detailed(reference, sample, solver).map(|(z, _)| z)
}

pub fn embed_detailed(
    reference: &Reference,
    sample: &PointCloud,
    solver: &SolverConfig,
) -> Result<(LOTEmbedding, SolveInfo)> {
    sample.validate()?;
    if sample.dim() != reference.d() {
        return Err(Error::Dimension(format!(
            "sample dimension {} differs from reference dimension {}",
            sample.dim(),
            reference.d()
        )));
    }
    let plan = solver.solve(reference, sample)?;
    let map = barycentric_map(reference, sample, &plan)?;
    let field = DisplacementField {
        u: map - &reference.points,
    };
    let mut z = LOTEmbedding::from_field(&field, &reference.hash)?;
    z.group_key = sample.group_key.clone();
    z.label = sample.label.clone();
    z.class = sample.class;
    let info = SolveInfo {
        converged: plan.converged,
        iterations: plan.iterations,
        marginal_error: plan.marginal_error,
    };
    Ok((z, info))
}

/// Embeds every sample in parallel on a pool of `workers` threads (0 = all
/// cores). Output order matches input order.
pub fn embed_cohort(
    reference: &Reference,
    samples: &[PointCloud],
    solver: &SolverConfig,
    workers: usize,
) -> Result<Vec<(LOTEmbedding, SolveInfo)>> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| Error::Config(format!("cannot build worker pool: {e}")))?;
    pool.install(|| {
        samples
            .par_iter()
            .map(|s| {
                embed_detailed(reference, s, solver)
                    .map_err(|e| e.context(format!("embedding sample {}", s.key_string())))
            })
            .collect()
    })
}

fn check_reference(z: &LOTEmbedding, reference: &Reference) -> Result<()> {
    if z.reference_hash != reference.hash {
        return Err(Error::ReferenceMismatch(format!(
            "embedding built on {}, reference is {}",
            z.reference_hash, reference.hash
        )));
    }
    if z.m != reference.m() || z.d != reference.d() || z.values.len() != z.m * z.d {
        return Err(Error::Dimension("embedding shape does not match reference".into()));
    }
    Ok(())
}

/// Pushes the reference forward through the embedded map: points `x_j + u_j`
/// carrying the reference weights.
pub fn preimage(reference: &Reference, z: &LOTEmbedding) -> Result<PointCloud> {
    check_reference(z, reference)?;
    let points = &reference.points + z.reshape();
    Ok(PointCloud {
        points,
        weights: reference.weights.clone(),
        group_key: z.group_key.clone(),
        label: z.label.clone(),
        class: z.class,
    })
}

/// Weighted mean of embeddings sharing one reference.
///
/// Evaluated as `z_a + Σ w_i (z_i − z_a)` around the heaviest input `z_a`,
/// so equal inputs and one-hot weights reproduce an input exactly.
pub fn barycenter(zs: &[LOTEmbedding], weights: &[f64]) -> Result<LOTEmbedding> {
    let first = zs
        .first()
        .ok_or_else(|| Error::InvalidInput("barycenter of an empty list".into()))?;
    if weights.len() != zs.len() {
        return Err(Error::Dimension(format!("{} weights for {} embeddings", weights.len(), zs.len())));
    }
    check_probability(weights, "barycenter weights")?;
    for z in zs {
        if z.reference_hash != first.reference_hash {
            return Err(Error::ReferenceMismatch(format!(
                "cannot combine embeddings on {} and {}",
                first.reference_hash, z.reference_hash
            )));
        }
        if z.values.len() != first.values.len() {
            return Err(Error::Dimension("embeddings differ in length".into()));
        }
    }
    let anchor = weights
        .iter()
        .enumerate()
        .fold(0, |best, (i, &w)| if w > weights[best] { i } else { best });
    let base = &zs[anchor];
    let mut values = base.values.clone();
    for (z, &w) in zs.iter().zip(weights) {
        if w == 0.0 {
            continue;
        }
        for (v, (zi, bi)) in values.iter_mut().zip(z.values.iter().zip(&base.values)) {
            *v += w * (zi - bi);
        }
    }
    Ok(LOTEmbedding {
        values,
        m: first.m,
        d: first.d,
        reference_hash: first.reference_hash.clone(),
        group_key: vec![("synthetic".into(), "barycenter".into())],
        label: None,
        class: None,
    })
}

/// `(1 − t)·z_a + t·z_b`; endpoints are reproduced exactly.
pub fn interpolate(za: &LOTEmbedding, zb: &LOTEmbedding, t: f64) -> Result<LOTEmbedding> {
    if !(0.0..=1.0).contains(&t) {
        return Err(Error::InvalidInput(format!("interpolation parameter {t} outside [0, 1]")));
    }
    let mut z = barycenter(&[za.clone(), zb.clone()], &[1.0 - t, t])?;
    z.group_key = vec![("synthetic".into(), format!("interpolate t={t}"))];
    Ok(z)
}

/// Column header for coordinate `(j, k)`.
fn coordinate_name(j: usize, k: usize) -> String {
    format!("z_{j}_{k}")
}

/// One row per embedding: group-key columns, then the `m·d` coordinates.
pub fn write_embeddings_csv<W: Write>(writer: W, zs: &[LOTEmbedding]) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    let Some(first) = zs.first() else {
        w.flush()?;
        return Ok(());
    };
    let mut header: Vec<String> = first.group_key.iter().map(|(k, _)| k.clone()).collect();
    for j in 0..first.m {
        for k in 0..first.d {
            header.push(coordinate_name(j, k));
        }
    }
    w.write_record(&header)?;
    for z in zs {
        if z.group_key.len() != first.group_key.len() || z.values.len() != first.values.len() {
            return Err(Error::Dimension("embeddings in one file must share key columns and length".into()));
        }
        let mut record: Vec<String> = z.group_key.iter().map(|(_, v)| v.clone()).collect();
        record.extend(z.values.iter().map(|v| format!("{v}")));
        w.write_record(&record)?;
    }
    w.flush()?;
    Ok(())
}

/// Reads embeddings written by [`write_embeddings_csv`]; `key_columns` is the
/// number of leading group-key columns.
pub fn read_embeddings_csv<R: Read>(reader: R, key_columns: usize, reference: &Reference) -> Result<Vec<LOTEmbedding>> {
    let mut rdr = csv::Reader::from_reader(reader);
    let headers = rdr.headers()?.clone();
    let p = reference.m() * reference.d();
    if headers.len() != key_columns + p {
        return Err(Error::Schema(format!(
            "embedding file has {} columns, expected {} key + {p} coordinates",
            headers.len(),
            key_columns
        )));
    }
    let names: Vec<String> = headers.iter().take(key_columns).map(String::from).collect();
    let mut out = Vec::new();
    for (row, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let group_key = names
            .iter()
            .zip(rec.iter())
            .map(|(k, v)| (k.clone(), v.to_string()))
            .collect();
        let values = rec
            .iter()
            .skip(key_columns)
            .enumerate()
            .map(|(i, s)| {
                s.parse::<f64>().map_err(|_| Error::Parse {
                    row,
                    column: headers[key_columns + i].to_string(),
                    message: format!("'{s}' is not a number"),
                })
            })
            .collect::<Result<Vec<f64>>>()?;
        out.push(LOTEmbedding {
            values,
            m: reference.m(),
            d: reference.d(),
            reference_hash: reference.hash.clone(),
            group_key,
            label: None,
            class: None,
        });
    }
    Ok(out)
}

pub const BINARY_MAGIC: &[u8; 4] = b"LOT1";

/// Compact layout: `"LOT1"`, u32 m, u32 d (little-endian), then each
/// embedding's `m·d` f64 values in order.
pub fn write_embeddings_binary<W: Write>(mut writer: W, m: usize, d: usize, zs: &[LOTEmbedding]) -> Result<()> {
    let (m32, d32) = (u32::try_from(m), u32::try_from(d));
    let (Ok(m32), Ok(d32)) = (m32, d32) else {
        return Err(Error::Dimension("m and d must fit in u32".into()));
    };
    writer.write_all(BINARY_MAGIC)?;
    writer.write_all(&m32.to_le_bytes())?;
    writer.write_all(&d32.to_le_bytes())?;
    for z in zs {
        if z.m != m || z.d != d || z.values.len() != m * d {
            return Err(Error::Dimension("embedding shape differs from header".into()));
        }
        for v in &z.values {
            writer.write_all(&v.to_le_bytes())?;
        }
    }
    writer.flush()?;
    Ok(())
}

/// Returns `(m, d, vectors)`.
pub fn read_embeddings_binary<R: Read>(mut reader: R) -> Result<(usize, usize, Vec<Vec<f64>>)> {
    let mut buf = Vec::new();
    reader.read_to_end(&mut buf)?;
    if buf.len() < 12 || &buf[..4] != BINARY_MAGIC {
        return Err(Error::InvalidInput("not a LOT1 embedding file".into()));
    }
    let m = u32::from_le_bytes(buf[4..8].try_into().expect("4 bytes")) as usize;
    let d = u32::from_le_bytes(buf[8..12].try_into().expect("4 bytes")) as usize;
    let body = &buf[12..];
    let stride = m * d * 8;
    if stride == 0 || body.len() % stride != 0 {
        return Err(Error::InvalidInput(format!(
            "LOT1 body of {} bytes is not a multiple of {stride}",
            body.len()
        )));
    }
    let vectors = body
        .chunks_exact(stride)
        .map(|chunk| {
            chunk
                .chunks_exact(8)
                .map(|b| f64::from_le_bytes(b.try_into().expect("8 bytes")))
                .collect()
        })
        .collect();
    Ok((m, d, vectors))
}
