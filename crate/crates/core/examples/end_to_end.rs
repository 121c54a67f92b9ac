//! The full file-based workflow: generate a cohort, classify it, then
//! generate a treatment design and run the interaction contrast.
//!
//! cargo run --release --example end_to_end -- [output_dir]

use std::path::PathBuf;

use lotcyto::config::{GenerateMode, RunConfig};
use lotcyto::contrast::TripletSpec;
use lotcyto::pipeline::{cmd_classify, cmd_contrast, cmd_generate, Manifest};
use lotcyto::simgen::{default_marker_names, CohortSpec, TreatmentSpec};

fn show(manifest: &Manifest) {
    println!("{}: {} files", manifest.command, manifest.outputs.len());
    for (k, v) in &manifest.counts {
        println!("  {k} = {v}");
    }
}

fn main() -> lotcyto::Result<()> {
    let root = std::env::args().nth(1).map(PathBuf::from).unwrap_or_else(|| std::env::temp_dir().join("lotcyto-demo"));

    let mut gen = RunConfig::default();
    gen.output_dir = root.join("cohort");
    gen.generate.cohort = CohortSpec::gaussian_shift(5, 15, 200, 1.0, 2.0, 0);
    show(&cmd_generate(&gen)?.manifest);

    let mut cls = RunConfig::default();
    cls.output_dir = root.join("classify");
    cls.input.cells = Some(root.join("cohort/cohort.csv"));
    cls.input.meta_columns = vec!["sample".into(), "class".into()];
    cls.input.marker_columns = default_marker_names(5);
    cls.input.group_by = vec!["sample".into()];
    cls.input.label_column = Some("class".into());
    cls.reference.m = 50;
    let summary = cmd_classify(&cls)?;
    show(&summary.manifest);
    println!("  accuracy {:.3}, importance grid {:?}", summary.report.accuracy, summary.importance.shape());

    gen.output_dir = root.join("treatments");
    gen.generate.mode = GenerateMode::Treatments;
    gen.generate.treatments = TreatmentSpec::standard(5, 10, 2, 150, 1);
    show(&cmd_generate(&gen)?.manifest);

    let keys: Vec<String> = ["Patient", "Culture", "Replicate", "Treatment"].map(String::from).to_vec();
    let mut con = RunConfig::default();
    con.output_dir = root.join("contrast");
    con.input.cells = Some(root.join("treatments/cohort.csv"));
    con.input.meta_columns = keys.clone();
    con.input.marker_columns = default_marker_names(5);
    con.input.group_by = keys;
    con.reference.m = 30;
    con.contrast.triplets = vec![TripletSpec::new("C", "F", "CF")];
    let summary = cmd_contrast(&con)?;
    show(&summary.manifest);
    println!("  outliers {:?}, lambda+ {:.4}", summary.spectrum.outliers, summary.spectrum.lambda_plus);
    println!("outputs under {}", root.display());
    Ok(())
}
