//! End-to-end runs of the library commands on small synthetic cohorts.

use std::path::Path;

use lotcyto::classify::reshape_weights;
use lotcyto::config::{GenerateMode, RunConfig, SvmConfig};
use lotcyto::contrast::{build_delta, ContrastItem, TripletSpec};
use lotcyto::lot::{barycenter, interpolate, preimage, LOTEmbedding, Reference, SolverConfig};
use lotcyto::pipeline::{cmd_classify, cmd_contrast, cmd_embed, cmd_generate, cmd_simulate, separability_trial};
use lotcyto::simgen::{ClassPerturbation, CohortSpec, MixtureSpec, TreatmentSpec};

fn markers(d: usize) -> Vec<String> {
    (1..=d).map(|k| format!("m{k}")).collect()
}

fn generate_cohort(dir: &Path, n_per_class: usize, seed: u64) {
    let mut cfg = RunConfig::default();
    cfg.output_dir = dir.to_path_buf();
    cfg.generate.mode = GenerateMode::Cohort;
    cfg.generate.cohort = CohortSpec::gaussian_shift(5, n_per_class, 120, 1.0, 3.0, seed);
    cmd_generate(&cfg).unwrap();
}

fn classify_config(cells: &Path, out: &Path) -> RunConfig {
    let mut cfg = RunConfig::default();
    cfg.output_dir = out.to_path_buf();
    cfg.input.cells = Some(cells.to_path_buf());
    cfg.input.meta_columns = vec!["sample".into(), "class".into()];
    cfg.input.marker_columns = markers(5);
    cfg.input.group_by = vec!["sample".into()];
    cfg.input.label_column = Some("class".into());
    cfg.reference.m = 20;
    cfg
}

fn treatment_config(cells: &Path, out: &Path) -> RunConfig {
    let cols: Vec<String> = ["Patient", "Culture", "Replicate", "Treatment"].map(String::from).to_vec();
    let mut cfg = RunConfig::default();
    cfg.output_dir = out.to_path_buf();
    cfg.input.cells = Some(cells.to_path_buf());
    cfg.input.meta_columns = cols.clone();
    cfg.input.marker_columns = markers(5);
    cfg.input.group_by = cols;
    cfg.reference.m = 20;
    cfg.contrast.triplets = vec![TripletSpec::new("C", "F", "CF")];
    cfg
}

#[test]
fn embeddings_do_not_depend_on_worker_count() {
    let tmp = tempfile::tempdir().unwrap();
    generate_cohort(&tmp.path().join("gen"), 6, 3);
    let cells = tmp.path().join("gen/cohort.csv");
    let mut outputs = Vec::new();
    for workers in [1, 4] {
        let mut cfg = classify_config(&cells, &tmp.path().join(format!("w{workers}")));
        cfg.workers = workers;
        cmd_embed(&cfg).unwrap();
        outputs.push((
            std::fs::read(cfg.output_dir.join("embeddings.csv")).unwrap(),
            std::fs::read(cfg.output_dir.join("embeddings.bin")).unwrap(),
            std::fs::read(cfg.output_dir.join("reference.json")).unwrap(),
        ));
    }
    assert_eq!(outputs[0], outputs[1]);
}

#[test]
fn default_grid_is_seven_by_five() {
    let tmp = tempfile::tempdir().unwrap();
    generate_cohort(&tmp.path().join("gen"), 10, 4);
    let cfg = classify_config(&tmp.path().join("gen/cohort.csv"), &tmp.path().join("out"));
    let s = cmd_classify(&cfg).unwrap();
    assert_eq!(s.importance.shape(), (7, 5));
    assert_eq!(s.report.accuracy, 1.0);
    let w = reshape_weights(&s.model, 20, 5).unwrap();
    for r in 0..7 {
        let rows = s.assignment.rows_in(r);
        assert!(!rows.is_empty());
        for c in 0..5 {
            let cols = s.assignment.cols_in(c);
            let mean = rows.iter().flat_map(|&i| cols.iter().map(move |&j| (i, j))).map(|ij| w[ij].abs()).sum::<f64>()
                / (rows.len() * cols.len()).max(1) as f64;
            assert!((s.importance[(r, c)] - mean).abs() < 1e-12);
        }
    }
    let csv = std::fs::read_to_string(cfg.output_dir.join("importance.csv")).unwrap();
    assert_eq!(csv.lines().count(), 1 + 7);
}

#[test]
fn single_cluster_grid_is_one_block() {
    let tmp = tempfile::tempdir().unwrap();
    generate_cohort(&tmp.path().join("gen"), 6, 5);
    let mut cfg = classify_config(&tmp.path().join("gen/cohort.csv"), &tmp.path().join("out"));
    cfg.cocluster.k = 1;
    cfg.cocluster.l = 1;
    let s = cmd_classify(&cfg).unwrap();
    assert_eq!(s.importance.shape(), (1, 1));
    assert!(s.assignment.row_labels.iter().all(|&r| r == 0));
    let mean_abs = s.model.w.iter().map(|v| v.abs()).sum::<f64>() / s.model.w.len() as f64;
    assert!((s.importance[(0, 0)] - mean_abs).abs() < 1e-12);
}

#[test]
fn oversized_grid_is_a_config_error() {
    let tmp = tempfile::tempdir().unwrap();
    generate_cohort(&tmp.path().join("gen"), 4, 6);
    let mut cfg = classify_config(&tmp.path().join("gen/cohort.csv"), &tmp.path().join("out"));
    cfg.cocluster.k = 99;
    let err = cmd_classify(&cfg).unwrap_err();
    assert_eq!(err.exit_code(), 2, "{err}");
}

#[test]
fn contrast_run_reports_interaction_and_skips_incomplete_blocks() {
    let tmp = tempfile::tempdir().unwrap();
    let mut gen = RunConfig::default();
    gen.output_dir = tmp.path().join("gen");
    gen.generate.mode = GenerateMode::Treatments;
    gen.generate.treatments = TreatmentSpec::standard(5, 8, 2, 120, 9);
    cmd_generate(&gen).unwrap();

    // Drop every CF sample of one patient to leave incomplete blocks.
    let full = std::fs::read_to_string(tmp.path().join("gen/cohort.csv")).unwrap();
    let mut lines = full.lines();
    let header = lines.next().unwrap();
    let kept: Vec<&str> = lines.filter(|l| !(l.starts_with("P00,") && l.contains(",CF,"))).collect();
    let trimmed = tmp.path().join("trimmed.csv");
    std::fs::write(&trimmed, format!("{header}\n{}\n", kept.join("\n"))).unwrap();

    let s = cmd_contrast(&treatment_config(&trimmed, &tmp.path().join("out"))).unwrap();
    assert_eq!(s.skipped.len(), 2);
    assert!(s.skipped.iter().all(|k| k.block.contains("Patient=P00") && k.missing == vec!["CF".to_string()]));
    assert_eq!(s.spectrum.b, 8 * 2 - 2);
    assert_eq!(s.scores.nrows(), s.spectrum.b);
    let report: serde_json::Value =
        serde_json::from_slice(&std::fs::read(tmp.path().join("out/spectrum.json")).unwrap()).unwrap();
    assert_eq!(report["skipped"].as_array().unwrap().len(), 2);
    for file in ["spectrum.csv", "mp_curve.csv", "spectrum.svg", "scores.csv", "top_component.csv"] {
        assert!(tmp.path().join("out").join(file).exists(), "{file}");
    }
}

#[test]
fn missing_arms_are_counted() {
    let emb = |v: f64| LOTEmbedding {
        values: vec![v; 4],
        m: 2,
        d: 2,
        reference_hash: "h".into(),
        group_key: Vec::new(),
        label: None,
        class: None,
    };
    let item = |block: &str, t: &str, v: f64| ContrastItem {
        block: block.into(),
        treatment: t.into(),
        embedding: emb(v),
    };
    let items = vec![
        item("a", "C", 1.0),
        item("a", "F", 3.0),
        item("a", "CF", 2.5),
        item("b", "C", 1.0),
        item("c", "F", 1.0),
        item("c", "CF", 1.0),
    ];
    let delta = build_delta(&items, &[TripletSpec::new("C", "F", "CF")]).unwrap();
    assert_eq!(delta.b(), 1);
    assert!(delta.rows.iter().all(|&v| v == 0.5));
    let mut missing: Vec<(String, Vec<String>)> = delta.skipped.iter().map(|s| (s.block.clone(), s.missing.clone())).collect();
    missing.sort();
    assert_eq!(
        missing,
        vec![
            ("b".to_string(), vec!["F".to_string(), "CF".to_string()]),
            ("c".to_string(), vec!["C".to_string()])
        ]
    );
}

#[test]
fn synthesis_through_the_generate_command() {
    let tmp = tempfile::tempdir().unwrap();
    generate_cohort(&tmp.path().join("gen"), 4, 7);
    let embed_cfg = classify_config(&tmp.path().join("gen/cohort.csv"), &tmp.path().join("emb"));
    let embedded = cmd_embed(&embed_cfg).unwrap().embeddings;
    let reference = Reference::from_json(std::fs::File::open(tmp.path().join("emb/reference.json")).unwrap()).unwrap();

    let mut cfg = RunConfig::default();
    cfg.output_dir = tmp.path().join("syn");
    cfg.generate.mode = GenerateMode::Interpolate;
    cfg.generate.embeddings = Some(tmp.path().join("emb/embeddings.csv"));
    cfg.generate.reference = Some(tmp.path().join("emb/reference.json"));
    cfg.generate.samples = vec!["S0000".into(), "S0007".into()];
    cfg.generate.t = vec![0.0, 0.5, 1.0];
    let s = cmd_generate(&cfg).unwrap();
    assert_eq!(s.embeddings.len(), 3);
    let (a, b) = (&embedded[0], &embedded[7]);
    assert_eq!(s.embeddings[0].values, a.values);
    assert_eq!(s.embeddings[2].values, b.values);
    let mid = preimage(&reference, &s.embeddings[1]).unwrap().points;
    let (pa, pb) = (preimage(&reference, a).unwrap().points, preimage(&reference, b).unwrap().points);
    assert!((mid - (pa + pb) * 0.5).amax() < 1e-12);
    assert_eq!(s.clouds.len(), 3);

    cfg.output_dir = tmp.path().join("bary");
    cfg.generate.mode = GenerateMode::Barycenter;
    cfg.generate.samples = vec!["S0003".into()];
    cfg.generate.weights = vec![1.0];
    let one = cmd_generate(&cfg).unwrap();
    assert_eq!(one.embeddings[0].values, embedded[3].values);
    assert_eq!(barycenter(std::slice::from_ref(a), &[1.0]).unwrap().values, a.values);
    assert_eq!(interpolate(a, a, 0.3).unwrap().values, a.values);
}

#[test]
fn rotated_classes_are_separable() {
    // A symmetric two-component mixture turned by 90 degrees.
    let mixture = MixtureSpec::isotropic(&[vec![3.0, 0.0, 0.0], vec![-3.0, 0.0, 0.0]], 0.5);
    let mut accuracies = Vec::new();
    for seed in 0..3 {
        let spec = CohortSpec {
            n_per_class: 15,
            cells_per_sample: 150,
            mixture: mixture.clone(),
            perturbation: ClassPerturbation::Rotation {
                plane: (0, 1),
                angle: std::f64::consts::FRAC_PI_2,
            },
            jitter: 0.1,
            seed,
        };
        let svm = SvmConfig { seed, ..SvmConfig::default() };
        accuracies.push(separability_trial(&spec, 30, &SolverConfig::default(), &svm, 0).unwrap().accuracy);
    }
    assert_eq!(accuracies, vec![1.0; 3]);
}

#[test]
fn simulate_writes_trials_and_report() {
    let tmp = tempfile::tempdir().unwrap();
    let mut cfg = RunConfig::default();
    cfg.output_dir = tmp.path().to_path_buf();
    cfg.simulate.cohort = CohortSpec::gaussian_shift(4, 8, 80, 1.0, 3.0, 0);
    cfg.simulate.seeds = vec![0, 1];
    cfg.simulate.m = 16;
    let s = cmd_simulate(&cfg).unwrap();
    assert_eq!(s.trials.len(), 2);
    assert!(s.trials.iter().all(|t| t.accuracy == 1.0));
    let csv = std::fs::read_to_string(tmp.path().join("simulate_trials.csv")).unwrap();
    assert_eq!(csv.lines().count(), 3);
    assert!(tmp.path().join("manifest_simulate.json").exists());
}

#[test]
fn manifests_hash_every_output() {
    let tmp = tempfile::tempdir().unwrap();
    generate_cohort(&tmp.path().join("gen"), 4, 8);
    let cfg = classify_config(&tmp.path().join("gen/cohort.csv"), &tmp.path().join("out"));
    let s = cmd_classify(&cfg).unwrap();
    assert!(s.manifest.outputs.len() > 10);
    for (name, hash) in &s.manifest.outputs {
        let bytes = std::fs::read(cfg.output_dir.join(name)).unwrap();
        assert_eq!(&lotcyto::pipeline::sha256_hex(&bytes), hash, "{name}");
    }
    let on_disk: serde_json::Value =
        serde_json::from_slice(&std::fs::read(cfg.output_dir.join("manifest_classify.json")).unwrap()).unwrap();
    assert_eq!(on_disk["command"], "classify");
}
