//! End-to-end commands. Each writes its artifacts into the output directory
//! together with a manifest naming the parameters and the SHA-256 of every
//! input and output. Manifests carry no timestamps, so identical runs produce
//! identical bytes.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use nalgebra::DMatrix;
use serde::Serialize;
use serde_json::{json, Value};
use sha2::{Digest, Sha256};

use crate::classify::{
    evaluate, reshape_weights, select_c_by_cv, select_rows, signed_labels, stratified_split, train_linear_svm,
    EvalReport, Standardizer, SvmModel,
};
use crate::cocluster::{bicluster_importance, reorder_heatmap, spectral_bicluster, spectral_cocluster, BiclusterAssignment};
use crate::config::{GenerateMode, RunConfig};
use crate::contrast::{
    block_normalize, build_delta, delta_svd, histogram_upto, mp_curve, project_scores, spectrum_histogram, tag_items, write_curve_csv,
    write_scores_csv, write_spectrum_csv, SkippedBlock,
};
use crate::data::{
    binarize_labels, filter_replicates, group_point_clouds, group_point_clouds_labeled, load_cells_csv, LabelMap,
    PointCloud,
};
use crate::error::{Error, Result};
use crate::lot::{
    barycenter, build_reference, embed_cohort, interpolate, preimage, read_embeddings_csv, write_embeddings_binary,
    write_embeddings_csv, LOTEmbedding, Reference, ReferenceParams, SolverConfig,
};
use crate::plot;
use crate::signatures::{cluster_ks_tests, cluster_signature, signature_report, write_report_csv, write_signature_csv};
use crate::simgen::{cohort_table, default_marker_names, make_treatment_cohort, make_two_class_cohort, CohortSpec};

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Collects output files and their hashes.
#[derive(Debug)]
pub struct Outputs {
    dir: PathBuf,
    files: BTreeMap<String, String>,
}

impl Outputs {
    pub fn new(dir: &Path) -> Result<Self> {
        fs::create_dir_all(dir).map_err(|e| Error::from(e).context(format!("creating {}", dir.display())))?;
        Ok(Outputs {
            dir: dir.to_path_buf(),
            files: BTreeMap::new(),
        })
    }

    pub fn write(&mut self, name: &str, bytes: &[u8]) -> Result<()> {
        let path = self.dir.join(name);
        fs::write(&path, bytes).map_err(|e| Error::from(e).context(format!("writing {}", path.display())))?;
        self.files.insert(name.to_string(), sha256_hex(bytes));
        Ok(())
    }

    pub fn write_json<T: Serialize>(&mut self, name: &str, value: &T) -> Result<()> {
        let mut bytes = serde_json::to_vec_pretty(value)?;
        bytes.push(b'\n');
        self.write(name, &bytes)
    }

    pub fn write_with(&mut self, name: &str, f: impl FnOnce(&mut Vec<u8>) -> Result<()>) -> Result<()> {
        let mut buf = Vec::new();
        f(&mut buf)?;
        self.write(name, &buf)
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn files(&self) -> &BTreeMap<String, String> {
        &self.files
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Manifest {
    pub command: String,
    pub version: String,
    pub config: Value,
    pub inputs: BTreeMap<String, String>,
    pub outputs: BTreeMap<String, String>,
    pub counts: BTreeMap<String, Value>,
    pub notes: Vec<String>,
}

struct Run<'a> {
    cfg: &'a RunConfig,
    out: Outputs,
    inputs: BTreeMap<String, String>,
    counts: BTreeMap<String, Value>,
    notes: Vec<String>,
}

impl<'a> Run<'a> {
    fn new(cfg: &'a RunConfig) -> Result<Self> {
        Ok(Run {
            cfg,
            out: Outputs::new(&cfg.output_dir)?,
            inputs: BTreeMap::new(),
            counts: BTreeMap::new(),
            notes: Vec::new(),
        })
    }

    fn hash_input(&mut self, path: &Path) -> Result<()> {
        let bytes = fs::read(path).map_err(|e| Error::from(e).context(format!("reading {}", path.display())))?;
        self.inputs.insert(path.display().to_string(), sha256_hex(&bytes));
        Ok(())
    }

    fn count(&mut self, key: &str, value: impl Into<Value>) {
        self.counts.insert(key.to_string(), value.into());
    }

    fn finish(mut self, command: &str) -> Result<Manifest> {
        let manifest = Manifest {
            command: command.to_string(),
            version: env!("CARGO_PKG_VERSION").to_string(),
            config: serde_json::to_value(self.cfg)?,
            inputs: self.inputs,
            outputs: self.out.files.clone(),
            counts: self.counts,
            notes: self.notes,
        };
        self.out.write_json(&format!("manifest_{command}.json"), &manifest)?;
        Ok(manifest)
    }
}

fn load_clouds(run: &mut Run, labeled: bool) -> Result<(Vec<PointCloud>, Vec<String>)> {
    let input = &run.cfg.input;
    let path = input
        .cells
        .clone()
        .ok_or_else(|| Error::Config("input.cells is required".into()))?;
    if input.group_by.is_empty() {
        return Err(Error::Config("input.group_by must name at least one column".into()));
    }
    run.hash_input(&path)?;
    let mut table = load_cells_csv(&path, &input.schema())?;
    run.count("cells_loaded", table.n_rows());
    if let Some(ex) = &input.exclude {
        table = filter_replicates(&table, &ex.column, &ex.values)?;
        run.count("cells_after_exclusion", table.n_rows());
    }
    if input.standardize {
        table.standardize_markers();
    }
    let keys: Vec<&str> = input.group_by.iter().map(String::as_str).collect();
    let clouds = match (&input.label_column, labeled) {
        (Some(label), true) => group_point_clouds_labeled(&table, &keys, label)?,
        (None, true) => return Err(Error::Config("input.label_column is required for classification".into())),
        _ => group_point_clouds(&table, &keys)?,
    };
    run.count("samples", clouds.len());
    Ok((clouds, table.marker_names().to_vec()))
}

/// Reference from `reference.path` when set, else built from the pooled samples.
fn obtain_reference(run: &mut Run, clouds: &[PointCloud], marker_names: &[String]) -> Result<Reference> {
    match run.cfg.reference.path.clone() {
        Some(path) => {
            run.hash_input(&path)?;
            let file = fs::File::open(&path).map_err(|e| Error::from(e).context(format!("opening {}", path.display())))?;
            let reference = Reference::from_json(file)?;
            if reference.marker_names() != marker_names {
                return Err(Error::ReferenceMismatch(format!(
                    "reference markers {:?} differ from input markers {:?}",
                    reference.marker_names(),
                    marker_names
                )));
            }
            Ok(reference)
        }
        None => build_reference(clouds, marker_names, &run.cfg.reference.params()),
    }
}

fn embed_stage(run: &mut Run, clouds: &[PointCloud], marker_names: &[String]) -> Result<(Reference, Vec<LOTEmbedding>)> {
    let reference = obtain_reference(run, clouds, marker_names)?;
    let solver = run.cfg.solver.solver();
    let results = embed_cohort(&reference, clouds, &solver, run.cfg.workers)?;
    let unconverged: Vec<String> = results
        .iter()
        .filter(|(_, info)| !info.converged)
        .map(|(z, _)| z.key_string())
        .collect();
    if !unconverged.is_empty() {
        run.notes.push(format!("OT did not reach tolerance for: {}", unconverged.join(", ")));
    }
    run.count("unconverged", unconverged.len());
    let embeddings: Vec<LOTEmbedding> = results.into_iter().map(|(z, _)| z).collect();
    run.count("embeddings", embeddings.len());
    run.count("reference_m", reference.m());
    run.count("reference_d", reference.d());
    run.counts.insert("reference_hash".into(), json!(reference.hash()));

    run.out.write_with("reference.json", |b| reference.to_json(b))?;
    run.out.write_with("embeddings.csv", |b| write_embeddings_csv(b, &embeddings))?;
    run.out
        .write_with("embeddings.bin", |b| write_embeddings_binary(b, reference.m(), reference.d(), &embeddings))?;
    Ok((reference, embeddings))
}

#[derive(Debug, Clone)]
pub struct EmbedSummary {
    pub manifest: Manifest,
    pub embeddings: Vec<LOTEmbedding>,
}

/// Builds (or loads) the reference and embeds every sample.
pub fn cmd_embed(cfg: &RunConfig) -> Result<EmbedSummary> {
    let mut run = Run::new(cfg)?;
    let (clouds, names) = load_clouds(&mut run, false)?;
    let (_, embeddings) = embed_stage(&mut run, &clouds, &names)?;
    Ok(EmbedSummary {
        manifest: run.finish("embed")?,
        embeddings,
    })
}

fn resolve_labels(run: &mut Run, clouds: &[PointCloud]) -> Result<LabelMap> {
    if let Some(map) = &run.cfg.labels {
        return Ok(map.clone());
    }
    let mut distinct: Vec<&str> = clouds.iter().filter_map(|c| c.label.as_deref()).collect();
    distinct.sort_unstable();
    distinct.dedup();
    if distinct.len() != 2 {
        return Err(Error::Config(format!(
            "labels table required: found {} distinct labels {:?}",
            distinct.len(),
            distinct
        )));
    }
    run.notes.push(format!("labels mapped by sort order: {} -> 0, {} -> 1", distinct[0], distinct[1]));
    Ok(LabelMap::new(&[(distinct[0], 0), (distinct[1], 1)], distinct[0], distinct[1]))
}

pub fn embedding_matrix(zs: &[LOTEmbedding]) -> DMatrix<f64> {
    let p = zs.first().map_or(0, |z| z.len());
    DMatrix::from_fn(zs.len(), p, |i, k| zs[i].values[k])
}

/// Trained model plus the metadata needed to apply it.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ModelFile {
    pub model: SvmModel,
    pub m: usize,
    pub d: usize,
    pub reference_hash: String,
    pub negative: String,
    pub positive: String,
}

#[derive(Debug, Clone)]
pub struct ClassifySummary {
    pub manifest: Manifest,
    pub report: EvalReport,
    pub model: SvmModel,
    pub assignment: BiclusterAssignment,
    pub importance: DMatrix<f64>,
}

pub struct FitOutcome {
    pub model: SvmModel,
    pub c: f64,
    pub train: Vec<usize>,
    pub test: Vec<usize>,
    pub report: EvalReport,
}

/// Stratified split, optional C selection and standardization, training and
/// held-out evaluation.
pub fn fit_and_evaluate(z: &DMatrix<f64>, labels: &[u8], svm: &crate::config::SvmConfig) -> Result<FitOutcome> {
    let (train, test) = stratified_split(labels, svm.test_fraction, svm.seed)?;
    let ztr = select_rows(z, &train);
    let ytr: Vec<u8> = train.iter().map(|&i| labels[i]).collect();
    let scaler = svm.standardize.then(|| Standardizer::fit(&ztr));
    let ztr_fit = match &scaler {
        Some(s) => s.transform(&ztr),
        None => ztr,
    };
    let mut params = svm.params();
    if !svm.c_grid.is_empty() {
        params.c = select_c_by_cv(&ztr_fit, &ytr, &svm.c_grid, svm.cv_folds, &params, svm.seed)?;
    }
    let mut model = train_linear_svm(&ztr_fit, &signed_labels(&ytr), &params)?;
    if let Some(s) = &scaler {
        model = s.fold_into(&model);
    }
    let yte: Vec<u8> = test.iter().map(|&i| labels[i]).collect();
    let report = evaluate(&model, &select_rows(z, &test), &yte)?;
    Ok(FitOutcome {
        model,
        c: params.c,
        train,
        test,
        report,
    })
}

/// Embeds labeled samples, trains and evaluates the linear SVM, co-clusters
/// the reshaped weights and reports per-cluster signatures.
pub fn cmd_classify(cfg: &RunConfig) -> Result<ClassifySummary> {
    let mut run = Run::new(cfg)?;
    let (clouds, names) = load_clouds(&mut run, true)?;
    let map = resolve_labels(&mut run, &clouds)?;
    let (clouds, dropped) = binarize_labels(clouds, &map);
    run.count("unlabeled_dropped", dropped);
    let (reference, embeddings) = embed_stage(&mut run, &clouds, &names)?;
    let (m, d) = (reference.m(), reference.d());
    let labels: Vec<u8> = clouds.iter().map(|c| c.class.expect("binarized")).collect();
    let z = embedding_matrix(&embeddings);

    let fit = fit_and_evaluate(&z, &labels, &cfg.svm)?;
    run.count("train", fit.train.len());
    run.count("test", fit.test.len());
    run.counts.insert("c".into(), json!(fit.c));
    let model_file = ModelFile {
        model: fit.model.clone(),
        m,
        d,
        reference_hash: reference.hash().to_string(),
        negative: map.negative_name.clone(),
        positive: map.positive_name.clone(),
    };
    run.out.write_json("model.json", &model_file)?;
    run.out.write_json("eval_report.json", &fit.report)?;
    run.out.write_with("roc.csv", |b| {
        let mut w = csv::Writer::from_writer(b);
        w.write_record(["threshold", "fpr", "tpr"])?;
        for p in &fit.report.roc {
            w.write_record([format!("{}", p.threshold), format!("{}", p.fpr), format!("{}", p.tpr)])?;
        }
        w.flush()?;
        Ok(())
    })?;
    let roc_pts: Vec<(f64, f64)> = fit.report.roc.iter().map(|p| (p.fpr, p.tpr)).collect();
    run.out.write("roc.svg", plot::roc_svg(&roc_pts, fit.report.auc).as_bytes())?;

    let scores = crate::classify::decision_function(&fit.model, &z)?;
    let mut split = vec!["train"; labels.len()];
    fit.test.iter().for_each(|&i| split[i] = "test");
    run.out.write_with("predictions.csv", |b| {
        let mut w = csv::Writer::from_writer(b);
        w.write_record(["sample", "split", "class", "score", "predicted"])?;
        for (i, z) in embeddings.iter().enumerate() {
            w.write_record([
                z.key_string(),
                split[i].to_string(),
                map.class_name(labels[i]).to_string(),
                format!("{}", scores[i]),
                map.class_name(u8::from(scores[i] >= 0.0)).to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    })?;

    let w = reshape_weights(&fit.model, m, d)?;
    let cc = &cfg.cocluster;
    if cc.k == 0 || cc.l == 0 || cc.k > m || cc.l > d {
        return Err(Error::Config(format!(
            "cocluster grid {} x {} does not fit the {m} x {d} weight matrix",
            cc.k, cc.l
        )));
    }
    let assignment = spectral_cocluster(&w, cfg.cocluster.k, cfg.cocluster.l, cfg.cocluster.seed)
        .map_err(|e| e.context("co-clustering classifier weights"))?;
    let importance = bicluster_importance(&w, &assignment)?;
    write_matrix_csv(&mut run.out, "weights.csv", &w, &names)?;
    write_assignment(&mut run.out, &assignment, &names)?;
    let col_names: Vec<String> = (1..=assignment.l).map(|c| format!("col_cluster_{c}")).collect();
    write_matrix_csv(&mut run.out, "importance.csv", &importance, &col_names)?;
    run.out.write(
        "importance.svg",
        plot::heatmap_svg(&importance, &[], &[], "bicluster importance (mean |W|)").as_bytes(),
    )?;
    write_heatmap(&mut run.out, "weights_reordered", &w, &assignment, &names, "reordered classifier weights")?;

    if cfg.signatures.enabled {
        let mats: Vec<DMatrix<f64>> = embeddings.iter().map(|e| e.reshape()).collect();
        let groups: Vec<usize> = labels.iter().map(|&l| l as usize).collect();
        let mut sigs = Vec::new();
        let mut tests = Vec::new();
        for r in 0..assignment.k {
            let rows = assignment.rows_in(r);
            sigs.push(cluster_signature(r, &mats, &rows, &groups, &names)?);
            tests.push(cluster_ks_tests(&mats, &rows, &groups, 1, 0, &names)?);
        }
        let report = signature_report(&sigs, &tests, 1, 0, cfg.signatures.fdr)?;
        run.count("significant_features", report.iter().filter(|r| r.significant).count());
        run.out.write_with("signature_report.csv", |b| write_report_csv(b, &report))?;
        for sig in &sigs {
            let base = format!("signature_cluster_{}", sig.cluster + 1);
            run.out.write_with(&format!("{base}.csv"), |b| write_signature_csv(b, sig, 1, 0))?;
            let series = vec![
                (map.positive_name.clone(), sig.group(1).map(|g| g.z.clone()).unwrap_or_default()),
                (map.negative_name.clone(), sig.group(0).map(|g| g.z.clone()).unwrap_or_default()),
            ];
            let svg = plot::line_plot_svg(&names, &series, &format!("row cluster {}", sig.cluster + 1), "Z");
            run.out.write(&format!("{base}.svg"), svg.as_bytes())?;
        }
    }
    run.counts.insert("accuracy".into(), json!(fit.report.accuracy));
    run.counts.insert("auc".into(), json!(fit.report.auc));
    Ok(ClassifySummary {
        manifest: run.finish("classify")?,
        report: fit.report,
        model: fit.model,
        assignment,
        importance,
    })
}

fn write_matrix_csv(out: &mut Outputs, name: &str, mat: &DMatrix<f64>, col_names: &[String]) -> Result<()> {
    out.write_with(name, |b| {
        let mut w = csv::Writer::from_writer(b);
        let mut header = vec!["row".to_string()];
        header.extend(col_names.iter().cloned());
        w.write_record(&header)?;
        for (i, row) in mat.row_iter().enumerate() {
            let mut rec = vec![(i + 1).to_string()];
            rec.extend(row.iter().map(|v| format!("{v}")));
            w.write_record(&rec)?;
        }
        w.flush()?;
        Ok(())
    })
}

fn write_assignment(out: &mut Outputs, a: &BiclusterAssignment, names: &[String]) -> Result<()> {
    out.write_with("row_clusters.csv", |b| {
        let mut w = csv::Writer::from_writer(b);
        w.write_record(["reference_point", "row_cluster"])?;
        for (j, c) in a.row_labels.iter().enumerate() {
            w.write_record([j.to_string(), (c + 1).to_string()])?;
        }
        w.flush()?;
        Ok(())
    })?;
    out.write_with("col_clusters.csv", |b| {
        let mut w = csv::Writer::from_writer(b);
        w.write_record(["marker", "col_cluster"])?;
        for (k, c) in a.col_labels.iter().enumerate() {
            w.write_record([names[k].clone(), (c + 1).to_string()])?;
        }
        w.flush()?;
        Ok(())
    })
}

fn cluster_breaks(labels: &[usize], order: &[usize]) -> Vec<usize> {
    (1..order.len())
        .filter(|&i| labels[order[i]] != labels[order[i - 1]])
        .collect()
}

fn write_heatmap(
    out: &mut Outputs,
    base: &str,
    w: &DMatrix<f64>,
    a: &BiclusterAssignment,
    names: &[String],
    title: &str,
) -> Result<()> {
    let heat = reorder_heatmap(w, a)?;
    let ordered: Vec<String> = heat.col_order.iter().map(|&k| names[k].clone()).collect();
    write_matrix_csv(out, &format!("{base}.csv"), &heat.matrix, &ordered)?;
    let svg = plot::heatmap_svg(
        &heat.matrix,
        &cluster_breaks(&a.row_labels, &heat.row_order),
        &cluster_breaks(&a.col_labels, &heat.col_order),
        title,
    );
    out.write(&format!("{base}.svg"), svg.as_bytes())
}

#[derive(Debug, Clone)]
pub struct ContrastSummary {
    pub manifest: Manifest,
    pub spectrum: crate::contrast::SpectrumReport,
    pub scores: DMatrix<f64>,
    pub skipped: Vec<SkippedBlock>,
}

/// Embeds, normalizes to block controls, builds Δ and reports its spectrum.
pub fn cmd_contrast(cfg: &RunConfig) -> Result<ContrastSummary> {
    let c = &cfg.contrast;
    if c.triplets.is_empty() {
        return Err(Error::Config("contrast.triplets must list at least one triplet".into()));
    }
    let mut run = Run::new(cfg)?;
    let (clouds, names) = load_clouds(&mut run, false)?;
    let (_, embeddings) = embed_stage(&mut run, &clouds, &names)?;
    run.contrast_from_embeddings(&embeddings, &names)
}

impl Run<'_> {
    fn contrast_from_embeddings(mut self, embeddings: &[LOTEmbedding], names: &[String]) -> Result<ContrastSummary> {
        let c = &self.cfg.contrast;
        let blocks: Vec<&str> = c.block_columns.iter().map(String::as_str).collect();
        let items = tag_items(embeddings, &blocks, &c.treatment_column)?;
        let normalized = block_normalize(&items, &c.control_label)?;
        self.count("controls_dropped", normalized.controls_dropped);
        self.count("passthrough_blocks", normalized.passthrough_blocks.len());
        let delta = build_delta(&normalized.items, &c.triplets)?;
        self.count("triplets", delta.b());
        self.count("skipped_triplets", delta.skipped.len());
        let svd = delta_svd(&delta.rows, c.margin)?;
        self.count("outliers", svd.spectrum.outliers.len());
        let k = c.components.min(svd.v.ncols());
        let scores = project_scores(&delta.rows, &svd.v, k)?;

        self.out.write_json(
            "spectrum.json",
            &json!({
                "spectrum": &svd.spectrum,
                "skipped": &delta.skipped,
                "passthrough_blocks": &normalized.passthrough_blocks,
            }),
        )?;
        let bins = spectrum_histogram(&svd.spectrum, c.histogram_bins);
        self.out.write_with("spectrum.csv", |b| write_spectrum_csv(b, &bins))?;
        let curve = mp_curve(&svd.spectrum, 200);
        self.out.write_with("mp_curve.csv", |b| write_curve_csv(b, &curve))?;
        // Outliers far above the edge would flatten the bulk, so the plot stops at 2λ₊.
        let top = svd.spectrum.eigenvalues.first().copied().unwrap_or(0.0);
        let view = (2.0 * svd.spectrum.lambda_plus).min(top * 1.05).max(svd.spectrum.lambda_plus * 1.05);
        let shown = histogram_upto(&svd.spectrum, c.histogram_bins, view);
        let bars: Vec<(f64, f64, f64)> = shown.iter().map(|(b, _)| (b.lo, b.hi, b.density)).collect();
        let beyond = svd.spectrum.eigenvalues.iter().filter(|&&v| v > view).count();
        let title = if beyond > 0 {
            format!("contrast eigenvalues ({beyond} beyond axis, top {top:.3})")
        } else {
            "contrast eigenvalues".to_string()
        };
        let svg = plot::histogram_svg(&bars, &curve, Some(svd.spectrum.lambda_plus), &title, "λ");
        self.out.write("spectrum.svg", svg.as_bytes())?;
        self.out.write_with("scores.csv", |b| write_scores_csv(b, &delta.keys, &scores))?;
        if k >= 2 {
            let mut triplet_ids: Vec<String> = delta.keys.iter().map(|k| k.triplet.combo.clone()).collect();
            triplet_ids.sort();
            triplet_ids.dedup();
            let pts: Vec<(f64, f64, usize)> = delta
                .keys
                .iter()
                .enumerate()
                .map(|(i, key)| {
                    let g = triplet_ids.binary_search(&key.triplet.combo).unwrap_or(0);
                    (scores[(i, 0)], scores[(i, 1)], g)
                })
                .collect();
            self.out
                .write("scores.svg", plot::scatter_svg(&pts, "contrast scores", "score 1", "score 2").as_bytes())?;
        }

        // Signed biclustering of the top right singular vector on the reference grid.
        let top = DMatrix::from_row_slice(delta.m, delta.d, svd.v.column(0).as_slice());
        write_matrix_csv(&mut self.out, "top_component.csv", &top, names)?;
        let (bk, bl) = (c.bicluster_k.min(delta.m), c.bicluster_l.min(delta.d));
        if (bk, bl) != (c.bicluster_k, c.bicluster_l) {
            self.notes.push(format!("bicluster grid reduced to {bk} x {bl} to fit the {} x {} component", delta.m, delta.d));
        }
        if top.iter().any(|v| *v != 0.0) {
            let a = spectral_bicluster(&top, bk, bl, c.seed).map_err(|e| e.context("biclustering top component"))?;
            write_heatmap(&mut self.out, "top_component_biclusters", &top, &a, names, "top contrast component")?;
        } else {
            self.notes.push("top component is zero; biclustering skipped".into());
        }
        Ok(ContrastSummary {
            manifest: self.finish("contrast")?,
            spectrum: svd.spectrum,
            scores,
            skipped: delta.skipped,
        })
    }
}

/// Contrast analysis on precomputed embeddings (no CSV input).
pub fn contrast_embeddings(cfg: &RunConfig, embeddings: &[LOTEmbedding], marker_names: &[String]) -> Result<ContrastSummary> {
    if cfg.contrast.triplets.is_empty() {
        return Err(Error::Config("contrast.triplets must list at least one triplet".into()));
    }
    Run::new(cfg)?.contrast_from_embeddings(embeddings, marker_names)
}

#[derive(Debug, Clone)]
pub struct GenerateSummary {
    pub manifest: Manifest,
    pub embeddings: Vec<LOTEmbedding>,
    pub clouds: Vec<PointCloud>,
}

fn write_clouds_csv(out: &mut Outputs, name: &str, clouds: &[PointCloud], names: &[String]) -> Result<()> {
    out.write_with(name, |b| {
        let mut w = csv::Writer::from_writer(b);
        let mut header = vec!["sample".to_string(), "weight".to_string()];
        header.extend(names.iter().cloned());
        w.write_record(&header)?;
        for cloud in clouds {
            for (i, row) in cloud.points.row_iter().enumerate() {
                let mut rec = vec![cloud.key_string(), format!("{}", cloud.weights[i])];
                rec.extend(row.iter().map(|v| format!("{v}")));
                w.write_record(&rec)?;
            }
        }
        w.flush()?;
        Ok(())
    })
}

/// Synthetic cohorts, or barycenters / interpolations of existing embeddings
/// together with their pre-image clouds.
pub fn cmd_generate(cfg: &RunConfig) -> Result<GenerateSummary> {
    let g = &cfg.generate;
    let mut run = Run::new(cfg)?;
    if matches!(g.mode, GenerateMode::Cohort | GenerateMode::Treatments) {
        let (clouds, d) = if g.mode == GenerateMode::Cohort {
            (make_two_class_cohort(&g.cohort)?, g.cohort.mixture.dim())
        } else {
            (make_treatment_cohort(&g.treatments)?, g.treatments.t1.1.len())
        };
        let names = default_marker_names(d);
        let table = cohort_table(&clouds, &names)?;
        run.out.write_with("cohort.csv", |b| table.write_csv(b))?;
        run.count("samples", clouds.len());
        run.count("cells", table.n_rows());
        return Ok(GenerateSummary {
            manifest: run.finish("generate")?,
            embeddings: Vec::new(),
            clouds,
        });
    }
    let (Some(zpath), Some(rpath)) = (g.embeddings.clone(), g.reference.clone()) else {
        return Err(Error::Config("generate.embeddings and generate.reference are required".into()));
    };
    run.hash_input(&rpath)?;
    run.hash_input(&zpath)?;
    let reference = Reference::from_json(fs::File::open(&rpath)?)?;
    let all = read_embeddings_csv(fs::File::open(&zpath)?, g.key_columns, &reference)?;
    let selected: Vec<LOTEmbedding> = if g.samples.is_empty() {
        all
    } else {
        g.samples
            .iter()
            .map(|key| {
                all.iter()
                    .find(|z| z.key_string() == *key)
                    .cloned()
                    .ok_or_else(|| Error::Usage(format!("no embedding with key {key}")))
            })
            .collect::<Result<_>>()?
    };
    let tag = |z: LOTEmbedding, name: String| LOTEmbedding {
        group_key: vec![("generated".into(), name)],
        label: None,
        class: None,
        ..z
    };
    let generated: Vec<LOTEmbedding> = match g.mode {
        GenerateMode::Barycenter => {
            let weights = if g.weights.is_empty() {
                vec![1.0 / selected.len().max(1) as f64; selected.len()]
            } else {
                g.weights.clone()
            };
            vec![tag(barycenter(&selected, &weights)?, "barycenter".into())]
        }
        GenerateMode::Interpolate => {
            let [a, b] = selected.as_slice() else {
                return Err(Error::Usage(format!("interpolation needs exactly 2 samples, got {}", selected.len())));
            };
            g.t.iter()
                .map(|&t| Ok(tag(interpolate(a, b, t)?, format!("t={t}"))))
                .collect::<Result<_>>()?
        }
        GenerateMode::Cohort | GenerateMode::Treatments => unreachable!("handled above"),
    };
    let clouds: Vec<PointCloud> = generated
        .iter()
        .map(|z| Ok(preimage(&reference, z)?.with_key(z.group_key.clone())))
        .collect::<Result<_>>()?;
    run.out.write_with("generated_embeddings.csv", |b| write_embeddings_csv(b, &generated))?;
    write_clouds_csv(&mut run.out, "generated_clouds.csv", &clouds, reference.marker_names())?;
    run.count("inputs_combined", selected.len());
    run.count("generated", generated.len());
    Ok(GenerateSummary {
        manifest: run.finish("generate")?,
        embeddings: generated,
        clouds,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TrialResult {
    pub seed: u64,
    pub accuracy: f64,
    pub auc: Option<f64>,
    pub test_size: usize,
}

/// One synthetic separability run: cohort, reference, embedding, split, SVM.
pub fn separability_trial(
    spec: &CohortSpec,
    m: usize,
    solver: &SolverConfig,
    svm: &crate::config::SvmConfig,
    workers: usize,
) -> Result<TrialResult> {
    let clouds = make_two_class_cohort(spec)?;
    let names = default_marker_names(spec.mixture.dim());
    let params = ReferenceParams {
        m,
        seed: spec.seed,
        ..ReferenceParams::default()
    };
    let reference = build_reference(&clouds, &names, &params)?;
    let zs: Vec<LOTEmbedding> = embed_cohort(&reference, &clouds, solver, workers)?
        .into_iter()
        .map(|(z, _)| z)
        .collect();
    let labels: Vec<u8> = clouds.iter().map(|c| c.class.expect("cohort is labeled")).collect();
    let fit = fit_and_evaluate(&embedding_matrix(&zs), &labels, svm)?;
    Ok(TrialResult {
        seed: spec.seed,
        accuracy: fit.report.accuracy,
        auc: fit.report.auc,
        test_size: fit.test.len(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MpTrial {
    pub seed: u64,
    pub null_outliers: usize,
    pub spiked_outliers: Option<usize>,
    pub null_top: f64,
    pub lambda_plus: f64,
}

/// Outlier counts for iid-noise Δ and, if `spike > 0`, the same noise plus a
/// rank-one covariance spike of strength `spike·√(p/B)` along a random unit direction.
pub fn mp_trial(b: usize, p: usize, spike: f64, margin: f64, seed: u64) -> Result<MpTrial> {
    use nalgebra::DVector;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let noise = DMatrix::from_fn(b, p, |_, _| StandardNormal.sample(&mut rng));
    let null = delta_svd(&noise, margin)?;
    let spiked_outliers = if spike > 0.0 {
        let strength = spike * (p as f64 / b as f64).sqrt();
        let dir = DVector::from_fn(p, |_, _| StandardNormal.sample(&mut rng)).normalize();
        let mut spiked = noise;
        for i in 0..b {
            let g: f64 = StandardNormal.sample(&mut rng);
            let mut row = spiked.row_mut(i);
            row += dir.transpose() * (strength.sqrt() * g);
        }
        Some(delta_svd(&spiked, margin)?.spectrum.outliers.len())
    } else {
        None
    };
    Ok(MpTrial {
        seed,
        null_outliers: null.spectrum.outliers.len(),
        spiked_outliers,
        null_top: null.spectrum.eigenvalues[0],
        lambda_plus: null.spectrum.lambda_plus,
    })
}

#[derive(Debug, Clone)]
pub struct SimulateSummary {
    pub manifest: Manifest,
    pub trials: Vec<TrialResult>,
    pub mp: Vec<MpTrial>,
}

/// Synthetic validation: separability trials over seeds, and optional MP calibration trials.
pub fn cmd_simulate(cfg: &RunConfig) -> Result<SimulateSummary> {
    let s = &cfg.simulate;
    let mut run = Run::new(cfg)?;
    let solver = cfg.solver.solver();
    let trials: Vec<TrialResult> = s
        .seeds
        .iter()
        .map(|&seed| {
            let spec = CohortSpec { seed, ..s.cohort.clone() };
            let svm = crate::config::SvmConfig { seed, ..cfg.svm.clone() };
            separability_trial(&spec, s.m, &solver, &svm, cfg.workers)
                .map_err(|e| e.context(format!("simulation seed {seed}")))
        })
        .collect::<Result<_>>()?;
    let mp: Vec<MpTrial> = match &s.mp {
        Some(mp) => (0..mp.trials as u64)
            .map(|t| mp_trial(mp.b, mp.p, mp.spike, cfg.contrast.margin, mp.seed.wrapping_add(t)))
            .collect::<Result<_>>()?,
        None => Vec::new(),
    };
    run.out.write_with("simulate_trials.csv", |b| {
        let mut w = csv::Writer::from_writer(b);
        w.write_record(["seed", "accuracy", "auc", "test_size"])?;
        for t in &trials {
            w.write_record([
                t.seed.to_string(),
                format!("{}", t.accuracy),
                t.auc.map_or(String::new(), |a| format!("{a}")),
                t.test_size.to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    })?;
    let mean_accuracy = trials.iter().map(|t| t.accuracy).sum::<f64>() / trials.len().max(1) as f64;
    run.out.write_json(
        "simulate_report.json",
        &json!({ "trials": &trials, "mean_accuracy": mean_accuracy, "mp": &mp }),
    )?;
    run.counts.insert("mean_accuracy".into(), json!(mean_accuracy));
    if !mp.is_empty() {
        run.count("mp_null_trials_with_outliers", mp.iter().filter(|t| t.null_outliers > 0).count());
        run.count(
            "mp_spiked_trials_with_one_outlier",
            mp.iter().filter(|t| t.spiked_outliers == Some(1)).count(),
        );
    }
    Ok(SimulateSummary {
        manifest: run.finish("simulate")?,
        trials,
        mp,
    })
}
