//! Synthetic cohorts: Gaussian-mixture clouds and class-level perturbations.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{CellTable, PointCloud};
use crate::error::{Error, Result};

const ORTHOGONALITY_TOL: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Component {
    pub mean: Vec<f64>,
    /// d × d, row-major.
    pub covariance: Vec<f64>,
    pub proportion: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MixtureSpec {
    pub components: Vec<Component>,
}

impl MixtureSpec {
    /// Equal-proportion mixture of isotropic Gaussians with standard deviation `sigma`.
    pub fn isotropic(means: &[Vec<f64>], sigma: f64) -> Self {
        let k = means.len();
        let components = means
            .iter()
            .map(|mu| {
                let d = mu.len();
                let cov = DMatrix::<f64>::identity(d, d) * (sigma * sigma);
                Component {
                    mean: mu.clone(),
                    covariance: cov.transpose().as_slice().to_vec(),
                    proportion: 1.0 / k as f64,
                }
            })
            .collect();
        MixtureSpec { components }
    }

    pub fn dim(&self) -> usize {
        self.components.first().map_or(0, |c| c.mean.len())
    }

    /// Proportion-weighted mean of the component means.
    pub fn mean(&self) -> Vec<f64> {
        let mut mu = vec![0.0; self.dim()];
        for c in &self.components {
            for (m, v) in mu.iter_mut().zip(&c.mean) {
                *m += c.proportion * v;
            }
        }
        mu
    }

    fn factors(&self) -> Result<Vec<DMatrix<f64>>> {
        let d = self.dim();
        if self.components.is_empty() || d == 0 {
            return Err(Error::InvalidInput("mixture needs at least one component of dimension >= 1".into()));
        }
        let total: f64 = self.components.iter().map(|c| c.proportion).sum();
        if self.components.iter().any(|c| !(c.proportion >= 0.0)) || (total - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidInput(format!("mixture proportions sum to {total}, expected 1")));
        }
        self.components
            .iter()
            .enumerate()
            .map(|(i, c)| {
                if c.mean.len() != d || c.covariance.len() != d * d {
                    return Err(Error::Dimension(format!("component {i} does not match dimension {d}")));
                }
                let cov = DMatrix::from_row_slice(d, d, &c.covariance);
                let scale = cov.amax().max(1.0);
                if (&cov - cov.transpose()).amax() > 1e-12 * scale {
                    return Err(Error::InvalidInput(format!("covariance of component {i} is not symmetric")));
                }
                let eig = SymmetricEigen::new(cov);
                if eig.eigenvalues.iter().any(|&l| l < -1e-10 * scale) {
                    return Err(Error::InvalidInput(format!(
                        "covariance of component {i} is not positive semidefinite"
                    )));
                }
                let roots = eig.eigenvalues.map(|l| l.max(0.0).sqrt());
                Ok(&eig.eigenvectors * DMatrix::from_diagonal(&roots))
            })
            .collect()
    }
}

fn draw(spec: &MixtureSpec, factors: &[DMatrix<f64>], n: usize, rng: &mut ChaCha8Rng) -> DMatrix<f64> {
    let d = spec.dim();
    let mut points = DMatrix::zeros(n, d);
    let cumulative: Vec<f64> = spec
        .components
        .iter()
        .scan(0.0, |acc, c| {
            *acc += c.proportion;
            Some(*acc)
        })
        .collect();
    for i in 0..n {
        let u: f64 = rng.random::<f64>() * cumulative[cumulative.len() - 1];
        let k = cumulative.partition_point(|&c| c <= u).min(cumulative.len() - 1);
        let z = DVector::from_fn(d, |_, _| StandardNormal.sample(rng));
        let x = &factors[k] * z;
        for j in 0..d {
            points[(i, j)] = spec.components[k].mean[j] + x[j];
        }
    }
    points
}

/// `n` iid draws from the mixture; deterministic in `seed`.
pub fn sample_cloud(spec: &MixtureSpec, n: usize, seed: u64) -> Result<PointCloud> {
    if n == 0 {
        return Err(Error::InvalidInput("cannot sample an empty cloud".into()));
    }
    let factors = spec.factors()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    PointCloud::uniform(draw(spec, &factors, n, &mut rng))
}

#[derive(Debug, Clone, PartialEq)]
pub enum Perturbation {
    Shift(Vec<f64>),
    /// Orthogonal d × d matrix applied as x → R x.
    Rotation(DMatrix<f64>),
    Scale(f64),
    /// x → R x + c.
    Rigid { rotation: DMatrix<f64>, shift: Vec<f64> },
}

fn check_orthogonal(r: &DMatrix<f64>, d: usize) -> Result<()> {
    if r.shape() != (d, d) {
        return Err(Error::Dimension(format!("rotation is {:?}, cloud has dimension {d}", r.shape())));
    }
    let err = (r.transpose() * r - DMatrix::<f64>::identity(d, d)).norm();
    if err > ORTHOGONALITY_TOL {
        return Err(Error::InvalidInput(format!("rotation is not orthogonal (‖RᵀR − I‖ = {err:e})")));
    }
    Ok(())
}

/// Applies the perturbation pointwise; weights and keys are kept.
pub fn perturb_cloud(cloud: &PointCloud, kind: &Perturbation) -> Result<PointCloud> {
    let d = cloud.dim();
    let shift_rows = |points: &mut DMatrix<f64>, c: &[f64]| -> Result<()> {
        if c.len() != d {
            return Err(Error::Dimension(format!("shift of length {} for dimension {d}", c.len())));
        }
        for mut row in points.row_iter_mut() {
            for (x, s) in row.iter_mut().zip(c) {
                *x += s;
            }
        }
        Ok(())
    };
    let mut out = cloud.clone();
    match kind {
        Perturbation::Shift(c) => shift_rows(&mut out.points, c)?,
        Perturbation::Rotation(r) => {
            check_orthogonal(r, d)?;
            out.points = &cloud.points * r.transpose();
        }
        Perturbation::Scale(s) => {
            if !s.is_finite() {
                return Err(Error::InvalidInput("scale must be finite".into()));
            }
            out.points = &cloud.points * *s;
        }
        Perturbation::Rigid { rotation, shift } => {
            check_orthogonal(rotation, d)?;
            out.points = &cloud.points * rotation.transpose();
            shift_rows(&mut out.points, shift)?;
        }
    }
    Ok(out)
}

/// Rotation by `angle` in the plane of coordinates `i` and `j`.
pub fn plane_rotation(d: usize, i: usize, j: usize, angle: f64) -> Result<DMatrix<f64>> {
    if i >= d || j >= d || i == j {
        return Err(Error::InvalidInput(format!("rotation plane ({i}, {j}) invalid in dimension {d}")));
    }
    let mut r = DMatrix::identity(d, d);
    let (s, c) = angle.sin_cos();
    r[(i, i)] = c;
    r[(j, j)] = c;
    r[(i, j)] = -s;
    r[(j, i)] = s;
    Ok(r)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ClassPerturbation {
    Shift { vector: Vec<f64> },
    Rotation { plane: (usize, usize), angle: f64 },
    Scale { factor: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CohortSpec {
    pub n_per_class: usize,
    pub cells_per_sample: usize,
    pub mixture: MixtureSpec,
    pub perturbation: ClassPerturbation,
    /// Per-sample random shift, as a fraction of the class separation.
    #[serde(default = "default_jitter")]
    pub jitter: f64,
    pub seed: u64,
}

fn default_jitter() -> f64 {
    0.1
}

impl CohortSpec {
    /// Isotropic single-Gaussian cohort at the origin; class 1 is shifted by
    /// `shift_multiple · sigma` along the first axis.
    pub fn gaussian_shift(d: usize, n_per_class: usize, cells: usize, sigma: f64, shift_multiple: f64, seed: u64) -> Self {
        let mut vector = vec![0.0; d];
        vector[0] = shift_multiple * sigma;
        CohortSpec {
            n_per_class,
            cells_per_sample: cells,
            mixture: MixtureSpec::isotropic(&[vec![0.0; d]], sigma),
            perturbation: ClassPerturbation::Shift { vector },
            jitter: default_jitter(),
            seed,
        }
    }

    /// Distance between the class-0 and class-1 mixture means.
    pub fn separation(&self) -> Result<f64> {
        let mu = DVector::from_vec(self.mixture.mean());
        let moved = match &self.perturbation {
            ClassPerturbation::Shift { vector } => &mu + DVector::from_column_slice(vector),
            ClassPerturbation::Rotation { plane, angle } => plane_rotation(mu.len(), plane.0, plane.1, *angle)? * &mu,
            ClassPerturbation::Scale { factor } => &mu * *factor,
        };
        Ok((moved - mu).norm())
    }

    fn class_perturbation(&self) -> Result<Perturbation> {
        let d = self.mixture.dim();
        Ok(match &self.perturbation {
            ClassPerturbation::Shift { vector } => {
                if vector.len() != d {
                    return Err(Error::Dimension(format!("shift of length {} for dimension {d}", vector.len())));
                }
                Perturbation::Shift(vector.clone())
            }
            ClassPerturbation::Rotation { plane, angle } => Perturbation::Rotation(plane_rotation(d, plane.0, plane.1, *angle)?),
            ClassPerturbation::Scale { factor } => Perturbation::Scale(*factor),
        })
    }
}

pub const CLASS_NAMES: [&str; 2] = ["class0", "class1"];

/// `n_per_class` base draws (class 0) followed by `n_per_class` perturbed
/// draws (class 1). Sample `i` uses seed `seed + i`.
pub fn make_two_class_cohort(spec: &CohortSpec) -> Result<Vec<PointCloud>> {
    if spec.n_per_class == 0 || spec.cells_per_sample == 0 {
        return Err(Error::InvalidInput("cohort needs samples and cells".into()));
    }
    if !(spec.jitter >= 0.0 && spec.jitter.is_finite()) {
        return Err(Error::InvalidInput(format!("jitter {} must be nonnegative", spec.jitter)));
    }
    let factors = spec.mixture.factors()?;
    let perturbation = spec.class_perturbation()?;
    let jitter = spec.jitter * spec.separation()?;
    let d = spec.mixture.dim();
    (0..2 * spec.n_per_class)
        .into_par_iter()
        .map(|i| {
            let class = u8::from(i >= spec.n_per_class);
            let mut rng = ChaCha8Rng::seed_from_u64(spec.seed.wrapping_add(i as u64));
            let mut cloud = PointCloud::uniform(draw(&spec.mixture, &factors, spec.cells_per_sample, &mut rng))?;
            if class == 1 {
                cloud = perturb_cloud(&cloud, &perturbation)?;
            }
            if jitter > 0.0 {
                let dir = DVector::from_fn(d, |_, _| StandardNormal.sample(&mut rng)).normalize();
                cloud = perturb_cloud(&cloud, &Perturbation::Shift((dir * jitter).iter().copied().collect()))?;
            }
            cloud.group_key = vec![
                ("sample".into(), format!("S{i:04}")),
                ("class".into(), CLASS_NAMES[class as usize].into()),
            ];
            cloud.label = Some(CLASS_NAMES[class as usize].into());
            cloud.class = Some(class);
            Ok(cloud)
        })
        .collect()
}

/// Blocks of treated samples for contrast analysis. Each patient has a random
/// baseline offset; within a block every treatment is an isotropic Gaussian
/// around that baseline plus its effect. The combination receives the sum of
/// the single effects plus `interaction`, scaled per patient by
/// `1 + interaction_spread·g` with g standard normal.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TreatmentSpec {
    pub patients: usize,
    pub replicates: usize,
    pub cells_per_sample: usize,
    pub sigma: f64,
    pub patient_spread: f64,
    pub control: String,
    pub t1: (String, Vec<f64>),
    pub t2: (String, Vec<f64>),
    pub combo: String,
    pub interaction: Vec<f64>,
    pub interaction_spread: f64,
    pub seed: u64,
}

impl TreatmentSpec {
    /// DMSO control, single treatments C and F, combination CF.
    pub fn standard(d: usize, patients: usize, replicates: usize, cells: usize, seed: u64) -> Self {
        let axis = |k: usize, v: f64| {
            let mut e = vec![0.0; d];
            e[k % d] = v;
            e
        };
        TreatmentSpec {
            patients,
            replicates,
            cells_per_sample: cells,
            sigma: 1.0,
            patient_spread: 0.5,
            control: "DMSO".into(),
            t1: ("C".into(), axis(0, 1.0)),
            t2: ("F".into(), axis(1, 1.0)),
            combo: "CF".into(),
            interaction: vec![0.0; d],
            interaction_spread: 0.0,
            seed,
        }
    }
}

/// Samples keyed by Patient, Culture, Replicate and Treatment, in block order.
pub fn make_treatment_cohort(spec: &TreatmentSpec) -> Result<Vec<PointCloud>> {
    let d = spec.t1.1.len();
    if d == 0 || spec.t2.1.len() != d || spec.interaction.len() != d {
        return Err(Error::Dimension("treatment effects must share one nonzero dimension".into()));
    }
    if spec.patients == 0 || spec.replicates == 0 || spec.cells_per_sample == 0 {
        return Err(Error::InvalidInput("treatment cohort needs patients, replicates and cells".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut jobs = Vec::new();
    for p in 0..spec.patients {
        let base: Vec<f64> = (0..d)
            .map(|_| {
                let z: f64 = StandardNormal.sample(&mut rng);
                spec.patient_spread * z
            })
            .collect();
        let g: f64 = StandardNormal.sample(&mut rng);
        let gain = 1.0 + spec.interaction_spread * g;
        for r in 0..spec.replicates {
            let arms = [
                (spec.control.clone(), vec![0.0; d]),
                spec.t1.clone(),
                spec.t2.clone(),
                (
                    spec.combo.clone(),
                    (0..d)
                        .map(|k| spec.t1.1[k] + spec.t2.1[k] + gain * spec.interaction[k])
                        .collect(),
                ),
            ];
            for (label, effect) in arms {
                let mean: Vec<f64> = base.iter().zip(&effect).map(|(b, e)| b + e).collect();
                let key = vec![
                    ("Patient".to_string(), format!("P{p:02}")),
                    ("Culture".to_string(), "C1".to_string()),
                    ("Replicate".to_string(), format!("R{}", r + 1)),
                    ("Treatment".to_string(), label),
                ];
                jobs.push((mean, key));
            }
        }
    }
    jobs.into_par_iter()
        .enumerate()
        .map(|(i, (mean, key))| {
            let mixture = MixtureSpec::isotropic(&[mean], spec.sigma);
            let seed = spec.seed.wrapping_add(1).wrapping_add(i as u64);
            Ok(sample_cloud(&mixture, spec.cells_per_sample, seed)?.with_key(key))
        })
        .collect()
}

/// Marker names `m1..md`.
pub fn default_marker_names(d: usize) -> Vec<String> {
    (1..=d).map(|k| format!("m{k}")).collect()
}

/// One row per cell, metadata taken from each cloud's group key.
pub fn cohort_table(clouds: &[PointCloud], marker_names: &[String]) -> Result<CellTable> {
    let first = clouds.first().ok_or_else(|| Error::InvalidInput("empty cohort".into()))?;
    let meta: Vec<String> = first.group_key.iter().map(|(k, _)| k.clone()).collect();
    let mut table = CellTable::new(meta.clone(), marker_names.to_vec());
    for cloud in clouds {
        let names: Vec<&String> = cloud.group_key.iter().map(|(k, _)| k).collect();
        if names.len() != meta.len() || names.iter().zip(&meta).any(|(a, b)| *a != b) {
            return Err(Error::InvalidInput("clouds carry different key columns".into()));
        }
        let values: Vec<&str> = cloud.group_key.iter().map(|(_, v)| v.as_str()).collect();
        for row in cloud.points.row_iter() {
            let markers: Vec<f64> = row.iter().copied().collect();
            table.push_row(&values, &markers)?;
        }
    }
    Ok(table)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{group_point_clouds_labeled, read_cells_csv, Schema};

    fn pairwise(points: &DMatrix<f64>) -> Vec<f64> {
        let n = points.nrows();
        let mut out = Vec::new();
        for i in 0..n {
            for j in i + 1..n {
                out.push((points.row(i) - points.row(j)).norm());
            }
        }
        out
    }

    #[test]
    fn zero_covariance_is_the_mean() {
        let spec = MixtureSpec {
            components: vec![Component {
                mean: vec![1.0, -2.0],
                covariance: vec![0.0; 4],
                proportion: 1.0,
            }],
        };
        let cloud = sample_cloud(&spec, 5, 0).unwrap();
        for row in cloud.points.row_iter() {
            assert_eq!(row.iter().copied().collect::<Vec<_>>(), vec![1.0, -2.0]);
        }
    }

    #[test]
    fn sample_mean_within_clt_bound() {
        let spec = MixtureSpec::isotropic(&[vec![3.0, -1.0, 0.5]], 2.0);
        let n = 10_000;
        let cloud = sample_cloud(&spec, n, 9).unwrap();
        for (k, mu) in [3.0, -1.0, 0.5].iter().enumerate() {
            let mean = cloud.points.column(k).mean();
            assert!((mean - mu).abs() < 4.0 * 2.0 / (n as f64).sqrt(), "{mean} vs {mu}");
        }
    }

    #[test]
    fn deterministic_and_validated() {
        let spec = MixtureSpec::isotropic(&[vec![0.0; 2], vec![5.0; 2]], 1.0);
        assert_eq!(sample_cloud(&spec, 50, 4).unwrap(), sample_cloud(&spec, 50, 4).unwrap());
        let mut bad = spec.clone();
        bad.components[0].covariance = vec![1.0, 2.0, 2.0, 1.0];
        assert!(sample_cloud(&bad, 5, 0).is_err());
        let mut bad = spec.clone();
        bad.components[0].proportion = 0.7;
        assert!(sample_cloud(&bad, 5, 0).is_err());
        assert!(sample_cloud(&spec, 0, 0).is_err());
    }

    #[test]
    fn perturbations() {
        let spec = MixtureSpec::isotropic(&[vec![1.0, 2.0, 3.0]], 1.0);
        let cloud = sample_cloud(&spec, 30, 1).unwrap();
        assert_eq!(perturb_cloud(&cloud, &Perturbation::Shift(vec![0.0; 3])).unwrap(), cloud);

        let r = plane_rotation(3, 0, 2, std::f64::consts::PI).unwrap();
        let twice = perturb_cloud(&perturb_cloud(&cloud, &Perturbation::Rotation(r.clone())).unwrap(), &Perturbation::Rotation(r.clone())).unwrap();
        assert!((twice.points - &cloud.points).amax() < 1e-12);

        let doubled = perturb_cloud(&cloud, &Perturbation::Scale(2.0)).unwrap();
        for (a, b) in pairwise(&cloud.points).iter().zip(pairwise(&doubled.points)) {
            assert_eq!(2.0 * a, b);
        }

        let rigid = Perturbation::Rigid {
            rotation: plane_rotation(3, 0, 1, 0.7).unwrap(),
            shift: vec![4.0, -1.0, 2.0],
        };
        let moved = perturb_cloud(&cloud, &rigid).unwrap();
        for (a, b) in pairwise(&cloud.points).iter().zip(pairwise(&moved.points)) {
            assert!((a - b).abs() < 1e-10);
        }
        let skew = DMatrix::from_row_slice(3, 3, &[1.0, 0.1, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0]);
        assert!(perturb_cloud(&cloud, &Perturbation::Rotation(skew)).is_err());
    }

    #[test]
    fn cohort_shape_and_determinism() {
        let spec = CohortSpec::gaussian_shift(4, 20, 30, 1.0, 3.0, 5);
        let a = make_two_class_cohort(&spec).unwrap();
        assert_eq!(a.len(), 40);
        assert_eq!(a.iter().filter(|c| c.class == Some(1)).count(), 20);
        assert_eq!(a, make_two_class_cohort(&spec).unwrap());
        let gap = a[20..].iter().map(|c| c.points.column(0).mean()).sum::<f64>() / 20.0
            - a[..20].iter().map(|c| c.points.column(0).mean()).sum::<f64>() / 20.0;
        assert!((gap - 3.0).abs() < 0.5, "{gap}");
        assert!((spec.separation().unwrap() - 3.0).abs() < 1e-15);
    }

    #[test]
    fn treatment_blocks() {
        let spec = TreatmentSpec::standard(3, 4, 2, 20, 7);
        let clouds = make_treatment_cohort(&spec).unwrap();
        assert_eq!(clouds.len(), 4 * 2 * 4);
        assert_eq!(clouds[3].group_key[3].1, "CF");
        assert_eq!(clouds[4].group_key[2].1, "R2");
        assert_eq!(clouds, make_treatment_cohort(&spec).unwrap());
    }

    #[test]
    fn csv_round_trip() {
        let spec = CohortSpec::gaussian_shift(2, 2, 5, 1.0, 2.0, 1);
        let clouds = make_two_class_cohort(&spec).unwrap();
        let names = default_marker_names(2);
        let table = cohort_table(&clouds, &names).unwrap();
        let mut buf = Vec::new();
        table.write_csv(&mut buf).unwrap();
        let schema = Schema::new(&["sample", "class"], &["m1", "m2"]);
        let back = read_cells_csv(buf.as_slice(), &schema).unwrap();
        let grouped = group_point_clouds_labeled(&back, &["sample", "class"], "class").unwrap();
        assert_eq!(grouped.len(), 4);
        for (g, c) in grouped.iter().zip(&clouds) {
            assert_eq!(g.points, c.points);
            assert_eq!(g.group_key, c.group_key);
        }
    }
}
