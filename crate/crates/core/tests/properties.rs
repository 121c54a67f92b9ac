//! Property tests for the invariants each module promises.

use lotcyto::classify::{decision_function, evaluate, predict, roc_auc, train_linear_svm, SvmModel, SvmParams};
use lotcyto::cocluster::{bicluster_importance, same_partition, spectral_cocluster, BiclusterAssignment};
use lotcyto::contrast::{delta_svd, DEFAULT_MARGIN};
use lotcyto::data::{filter_replicates, group_point_clouds, CellTable, PointCloud};
use lotcyto::lot::{barycenter, embed, flatten, preimage, Reference, SolverConfig};
use lotcyto::ot::{cost_matrix, exact_ot, sinkhorn, transport_cost, ExactParams, SinkhornParams};
use lotcyto::signatures::{bh_fdr, cluster_signature, ks_statistic};
use lotcyto::simgen::{cohort_table, default_marker_names, make_two_class_cohort, perturb_cloud, CohortSpec, Perturbation};
use nalgebra::DMatrix;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

fn gaussian(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> DMatrix<f64> {
    DMatrix::from_fn(rows, cols, |_, _| {
        let z: f64 = StandardNormal.sample(&mut *rng);
        z
    })
}

fn simplex(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    let raw: Vec<f64> = (0..n).map(|_| rng.random_range(0.2..1.0)).collect();
    let s: f64 = raw.iter().sum();
    raw.into_iter().map(|v| v / s).collect()
}

fn names(d: usize) -> Vec<String> {
    (0..d).map(|k| format!("m{k}")).collect()
}

fn random_table(rng: &mut ChaCha8Rng, rows: usize) -> CellTable {
    let mut t = CellTable::new(vec!["sample".into(), "rep".into()], names(2));
    for _ in 0..rows {
        let sample = format!("S{}", rng.random_range(0..4));
        let rep = format!("R{}", rng.random_range(0..3));
        t.push_row(&[sample, rep], &[rng.random_range(-5.0..5.0), rng.random_range(-5.0..5.0)])
            .unwrap();
    }
    t
}

fn row_multiset(t: &CellTable) -> Vec<(String, String, u64, u64)> {
    let mut rows: Vec<_> = (0..t.n_rows())
        .map(|r| {
            let m = t.markers(r);
            (t.meta(r, 0).to_string(), t.meta(r, 1).to_string(), m[0].to_bits(), m[1].to_bits())
        })
        .collect();
    rows.sort();
    rows
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn grouping_concatenates_back_to_the_table(seed in any::<u64>(), rows in 1usize..60) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let table = random_table(&mut rng, rows);
        let clouds = group_point_clouds(&table, &["sample", "rep"]).unwrap();
        let mut rebuilt = CellTable::new(vec!["sample".into(), "rep".into()], names(2));
        for c in &clouds {
            let (s, r) = (&c.group_key[0].1, &c.group_key[1].1);
            for i in 0..c.len() {
                rebuilt.push_row(&[s, r], &[c.points[(i, 0)], c.points[(i, 1)]]).unwrap();
            }
        }
        prop_assert_eq!(row_multiset(&rebuilt), row_multiset(&table));
    }

    #[test]
    fn filtering_conserves_cells_and_is_idempotent(seed in any::<u64>(), rows in 1usize..60, drop in prop::collection::vec(0usize..3, 0..3)) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let table = random_table(&mut rng, rows);
        let exclude: Vec<String> = drop.iter().map(|r| format!("R{r}")).collect();
        let once = filter_replicates(&table, "rep", &exclude).unwrap();
        let twice = filter_replicates(&once, "rep", &exclude).unwrap();
        prop_assert_eq!(&once, &twice);
        let kept = (0..table.n_rows()).filter(|&r| !exclude.iter().any(|e| e == table.meta(r, 1))).count();
        prop_assert_eq!(once.n_rows(), kept);
        if kept > 0 {
            let clouds = group_point_clouds(&once, &["sample"]).unwrap();
            prop_assert_eq!(clouds.iter().map(|c| c.len()).sum::<usize>(), kept);
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn sinkhorn_plans_are_feasible_and_cost_shrinks_with_epsilon(seed in any::<u64>(), n in 2usize..=12, m in 2usize..=12, d in 1usize..=4) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (x, y) = (gaussian(&mut rng, n, d), gaussian(&mut rng, m, d));
        let (a, b) = (simplex(&mut rng, n), simplex(&mut rng, m));
        let cost = cost_matrix(&x, &y).unwrap();
        let mut previous = f64::INFINITY;
        for rel in [1.0, 0.1, 0.01] {
            let params = SinkhornParams::relative(rel, &cost);
            let plan = sinkhorn(&a, &b, &cost, &params).unwrap();
            prop_assert!(plan.marginal_error <= params.tol_marginal);
            prop_assert!(plan.coupling.iter().all(|&v| v >= 0.0 && v.is_finite()));
            let c = transport_cost(&plan, &cost).unwrap();
            prop_assert!(c <= previous + 1e-6, "cost {c} after {previous}");
            previous = c;
        }
    }

    #[test]
    fn exact_cost_is_symmetric(seed in any::<u64>(), n in 1usize..=12, m in 1usize..=12, d in 1usize..=4) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (x, y) = (gaussian(&mut rng, n, d), gaussian(&mut rng, m, d));
        let (a, b) = (simplex(&mut rng, n), simplex(&mut rng, m));
        let cost = cost_matrix(&x, &y).unwrap();
        let forward = transport_cost(&exact_ot(&a, &b, &cost, &ExactParams::default()).unwrap(), &cost).unwrap();
        let back_cost = cost.transpose();
        let backward = transport_cost(&exact_ot(&b, &a, &back_cost, &ExactParams::default()).unwrap(), &back_cost).unwrap();
        prop_assert!((forward - backward).abs() <= 1e-12 * forward.abs().max(1.0));
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn embedding_the_reference_is_near_zero(seed in any::<u64>(), m in 2usize..=16, d in 1usize..=4) {
        // Entropic blur is set by ε relative to the squared spacing of the
        // reference, so the reference sits on a jittered lattice.
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let m = m.min(6usize.pow(d as u32));
        let mut sites: Vec<Vec<i32>> = Vec::new();
        while sites.len() < m {
            let s: Vec<i32> = (0..d).map(|_| rng.random_range(0..6)).collect();
            if !sites.contains(&s) {
                sites.push(s);
            }
        }
        let pts = DMatrix::from_fn(m, d, |j, k| 2.0 * sites[j][k] as f64 + rng.random_range(-0.2..0.2));
        let scale = pts.amax();
        let reference = Reference::uniform(pts.clone(), names(d)).unwrap();
        let z = embed(&reference, &PointCloud::uniform(pts).unwrap(), &SolverConfig::sinkhorn(0.001)).unwrap();
        prop_assert!(z.values.iter().all(|v| v.abs() <= 1e-3 * scale));
    }

    #[test]
    fn layout_roundtrips(seed in any::<u64>(), m in 1usize..=10, d in 1usize..=6) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let reference = Reference::uniform(gaussian(&mut rng, m.max(2), d), names(d)).unwrap();
        let cloud = PointCloud::uniform(gaussian(&mut rng, 15, d)).unwrap();
        let z = embed(&reference, &cloud, &SolverConfig::default()).unwrap();
        let grid = z.reshape();
        prop_assert_eq!(grid.shape(), (reference.m(), d));
        prop_assert_eq!(flatten(&grid), z.values.clone());
        for j in 0..reference.m() {
            for k in 0..d {
                prop_assert_eq!(grid[(j, k)], z.values[j * d + k]);
            }
        }
    }

    #[test]
    fn preimage_is_linear_in_the_embedding(seed in any::<u64>(), count in 1usize..=5) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (m, d) = (10, 3);
        let reference = Reference::uniform(gaussian(&mut rng, m, d), names(d)).unwrap();
        let zs: Vec<_> = (0..count)
            .map(|_| embed(&reference, &PointCloud::uniform(gaussian(&mut rng, 25, d)).unwrap(), &SolverConfig::default()).unwrap())
            .collect();
        let w = simplex(&mut rng, count);
        let lhs = preimage(&reference, &barycenter(&zs, &w).unwrap()).unwrap().points;
        let mut rhs = DMatrix::zeros(m, d);
        for (z, &wi) in zs.iter().zip(&w) {
            rhs += preimage(&reference, z).unwrap().points * wi;
        }
        prop_assert!((lhs - rhs).amax() <= 1e-12);
    }

    #[test]
    fn embedding_distance_tracks_w2_near_the_reference(seed in any::<u64>(), n in 4usize..=10) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let d = 2;
        let base = gaussian(&mut rng, n, d) * 2.0;
        let reference = Reference::uniform(base.clone(), names(d)).unwrap();
        let near = |rng: &mut ChaCha8Rng| {
            let c = gaussian(rng, 1, d);
            let jitter = gaussian(rng, n, d) * 0.01;
            PointCloud::uniform(DMatrix::from_fn(n, d, |i, k| base[(i, k)] + c[(0, k)] + jitter[(i, k)])).unwrap()
        };
        let (pa, pb) = (near(&mut rng), near(&mut rng));
        let solver = SolverConfig::exact();
        let (za, zb) = (embed(&reference, &pa, &solver).unwrap(), embed(&reference, &pb, &solver).unwrap());
        let lot = za.values.iter().zip(&zb.values).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt() / (n as f64).sqrt();
        let (qa, qb) = (preimage(&reference, &za).unwrap(), preimage(&reference, &zb).unwrap());
        let cost = cost_matrix(&qa.points, &qb.points).unwrap();
        let w2 = transport_cost(&exact_ot(&qa.weights, &qb.weights, &cost, &ExactParams::default()).unwrap(), &cost).unwrap().sqrt();
        prop_assert!((lot - w2).abs() <= 0.1 * w2, "LOT {lot} vs W2 {w2}");
    }
}

fn random_model(rng: &mut ChaCha8Rng, p: usize) -> SvmModel {
    SvmModel {
        w: (0..p).map(|_| rng.random_range(-1.0..1.0)).collect(),
        b: rng.random_range(-0.5..0.5),
        c: 1.0,
        iterations: 0,
        converged: true,
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn predictions_survive_positive_rescaling(seed in any::<u64>(), scale in 1e-3f64..1e3) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let z = gaussian(&mut rng, 20, 4);
        let model = random_model(&mut rng, 4);
        let mut scaled = model.clone();
        scaled.w.iter_mut().for_each(|v| *v *= scale);
        scaled.b *= scale;
        let a = predict(&decision_function(&model, &z).unwrap());
        let b = predict(&decision_function(&scaled, &z).unwrap());
        prop_assert_eq!(a, b);
    }

    #[test]
    fn confusion_totals_and_accuracy(seed in any::<u64>(), n in 1usize..40) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let z = gaussian(&mut rng, n, 3);
        let labels: Vec<u8> = (0..n).map(|_| rng.random_range(0..2)).collect();
        let report = evaluate(&random_model(&mut rng, 3), &z, &labels).unwrap();
        let [[tn, fp], [fn_, tp]] = report.confusion;
        prop_assert_eq!(tn + fp + fn_ + tp, n);
        prop_assert_eq!(report.accuracy, (tp + tn) as f64 / n as f64);
    }

    #[test]
    fn auc_counts_ordered_pairs(seed in any::<u64>(), n in 2usize..=30) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let scores: Vec<f64> = (0..n).map(|_| rng.random_range(0..6) as f64).collect();
        let labels: Vec<u8> = (0..n).map(|_| rng.random_range(0..2)).collect();
        let (mut good, mut pairs) = (0.0, 0usize);
        for i in 0..n {
            for j in 0..n {
                if labels[i] == 1 && labels[j] == 0 {
                    pairs += 1;
                    good += if scores[i] > scores[j] { 1.0 } else if scores[i] == scores[j] { 0.5 } else { 0.0 };
                }
            }
        }
        let auc = roc_auc(&scores, &labels);
        if pairs == 0 {
            prop_assert!(auc.is_none());
        } else {
            let want = good / pairs as f64;
            prop_assert!((auc.unwrap() - want).abs() <= 1e-15);
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn retraining_is_deterministic(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let z = gaussian(&mut rng, 30, 5);
        let y: Vec<f64> = (0..30).map(|i| if z[(i, 0)] + 0.3 * z[(i, 1)] > 0.0 { 1.0 } else { -1.0 }).collect();
        let a = train_linear_svm(&z, &y, &SvmParams::default()).unwrap();
        let b = train_linear_svm(&z, &y, &SvmParams::default()).unwrap();
        prop_assert_eq!(a, b);
    }

    #[test]
    fn coclustering_is_deterministic_and_relabeling_invariant(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let w = gaussian(&mut rng, 20, 12);
        let a = spectral_cocluster(&w, 3, 2, seed).unwrap();
        prop_assert_eq!(&a, &spectral_cocluster(&w, 3, 2, seed).unwrap());
        let relabeled = BiclusterAssignment {
            row_labels: a.row_labels.iter().map(|r| (r + 1) % 3).collect(),
            col_labels: a.col_labels.iter().map(|c| 1 - c).collect(),
            ..a.clone()
        };
        prop_assert!(same_partition(&a.row_labels, &relabeled.row_labels));
        prop_assert!(same_partition(&a.col_labels, &relabeled.col_labels));
        let g = bicluster_importance(&w, &a).unwrap();
        prop_assert_eq!(&g, &bicluster_importance(&(-&w), &a).unwrap());
        // Permuting labels permutes the importance grid.
        let h = bicluster_importance(&w, &relabeled).unwrap();
        for r in 0..3 {
            for c in 0..2 {
                prop_assert_eq!(g[(r, c)], h[((r + 1) % 3, 1 - c)]);
            }
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn ks_is_bounded_and_rank_based(seed in any::<u64>(), nx in 1usize..20, ny in 1usize..20) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x: Vec<f64> = (0..nx).map(|_| rng.random_range(-3.0..3.0)).collect();
        let y: Vec<f64> = (0..ny).map(|_| rng.random_range(-3.0..3.0)).collect();
        let d = ks_statistic(&x, &y);
        prop_assert!((0.0..=1.0).contains(&d));
        let f = |v: &f64| v.exp() * 2.0 + v.powi(3);
        let (fx, fy): (Vec<f64>, Vec<f64>) = (x.iter().map(f).collect(), y.iter().map(f).collect());
        prop_assert_eq!(d, ks_statistic(&fx, &fy));
    }

    #[test]
    fn bh_q_values_dominate_p_values(p in prop::collection::vec(0.0f64..=1.0, 1..40)) {
        let q = bh_fdr(&p).unwrap();
        for (qi, pi) in q.iter().zip(&p) {
            prop_assert!(*qi >= *pi && *qi <= 1.0);
        }
    }

    #[test]
    fn mirrored_groups_have_opposite_z(seed in any::<u64>(), per_group in 1usize..5, delta in -2.0f64..2.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (m, d) = (6, 3);
        let mut embeddings = Vec::new();
        let mut groups = Vec::new();
        for _ in 0..per_group {
            let base = gaussian(&mut rng, m, d);
            embeddings.push(base.add_scalar(delta));
            groups.push(0);
            embeddings.push(base.add_scalar(-delta));
            groups.push(1);
        }
        let rows: Vec<usize> = (0..m).collect();
        let sig = cluster_signature(0, &embeddings, &rows, &groups, &names(d)).unwrap();
        let (a, b) = (sig.group(0).unwrap(), sig.group(1).unwrap());
        for k in 0..d {
            prop_assert!((a.z[k] + b.z[k]).abs() <= 1e-8 * (1.0 + a.z[k].abs()));
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn delta_svd_reconstructs_and_scales(seed in any::<u64>(), b in 2usize..12, p in 2usize..30, c in prop_oneof![-5.0f64..-0.1, 0.1f64..5.0]) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let delta = gaussian(&mut rng, b, p);
        let base = delta_svd(&delta, DEFAULT_MARGIN).unwrap();
        let sigma = DMatrix::from_diagonal(&nalgebra::DVector::from_vec(base.s.clone()));
        let rebuilt = &base.u * sigma * base.v.transpose();
        prop_assert!((&delta - rebuilt).norm() <= 1e-8 * delta.norm());
        let scaled = delta_svd(&(&delta * c), DEFAULT_MARGIN).unwrap();
        let top = base.s[0];
        for (s0, s1) in base.s.iter().zip(&scaled.s) {
            prop_assert!((s1 - c.abs() * s0).abs() <= 1e-9 * c.abs() * top);
        }
        for (l0, l1) in base.spectrum.eigenvalues.iter().zip(&scaled.spectrum.eigenvalues) {
            prop_assert!((l1 - c * c * l0).abs() <= 1e-9 * c * c * base.spectrum.eigenvalues[0]);
        }
        // Compare singular vectors only where the singular value is isolated.
        for i in 0..base.s.len() {
            let gap = base.s.iter().enumerate().filter(|&(j, _)| j != i).map(|(_, s)| (s - base.s[i]).abs()).fold(f64::INFINITY, f64::min);
            if gap > 1e-3 * top && base.s[i] > 1e-6 * top {
                let dot = base.v.column(i).dot(&scaled.v.column(i)).abs();
                prop_assert!((dot - 1.0).abs() <= 1e-6, "column {i}: |v·v'| = {dot}");
            }
        }
        let cut = base.spectrum.lambda_plus * (1.0 + base.spectrum.margin);
        let expected: Vec<usize> = (0..base.spectrum.eigenvalues.len()).filter(|&i| base.spectrum.eigenvalues[i] > cut).collect();
        prop_assert_eq!(&base.spectrum.outliers, &expected);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn rigid_motions_preserve_distances(seed in any::<u64>(), d in 1usize..6) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let cloud = PointCloud::uniform(gaussian(&mut rng, 15, d)).unwrap();
        let rotation = gaussian(&mut rng, d, d).qr().q();
        let shift: Vec<f64> = (0..d).map(|_| rng.random_range(-5.0..5.0)).collect();
        let moved = perturb_cloud(&cloud, &Perturbation::Rigid { rotation, shift }).unwrap();
        for i in 0..15 {
            for j in 0..i {
                let before = (cloud.points.row(i) - cloud.points.row(j)).norm();
                let after = (moved.points.row(i) - moved.points.row(j)).norm();
                prop_assert!((before - after).abs() <= 1e-10);
            }
        }
    }

    #[test]
    fn cohorts_are_seeded_and_balanced(seed in any::<u64>(), n in 1usize..6, cells in 1usize..30) {
        let spec = CohortSpec::gaussian_shift(3, n, cells, 1.0, 2.0, seed);
        let a = make_two_class_cohort(&spec).unwrap();
        prop_assert_eq!(&a, &make_two_class_cohort(&spec).unwrap());
        prop_assert_eq!(a.len(), 2 * n);
        prop_assert_eq!(a.iter().filter(|c| c.class == Some(1)).count(), n);
        prop_assert!(a.iter().all(|c| c.len() == cells));
    }

    #[test]
    fn cohort_tables_round_trip(seed in any::<u64>(), n in 1usize..4, cells in 1usize..20) {
        let clouds = make_two_class_cohort(&CohortSpec::gaussian_shift(2, n, cells, 1.0, 3.0, seed)).unwrap();
        let table = cohort_table(&clouds, &default_marker_names(2)).unwrap();
        let mut buf = Vec::new();
        table.write_csv(&mut buf).unwrap();
        let schema = lotcyto::data::Schema::new(&["sample", "class"], &["m1", "m2"]);
        let back = lotcyto::data::read_cells_csv(buf.as_slice(), &schema).unwrap();
        let regrouped = group_point_clouds(&back, &["sample"]).unwrap();
        prop_assert_eq!(regrouped.len(), clouds.len());
        for (orig, again) in clouds.iter().zip(&regrouped) {
            prop_assert_eq!(&orig.points, &again.points);
        }
    }
}
