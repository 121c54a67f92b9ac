//! Linear SVM on LOT embeddings: stratified split, cross-validated C and a
//! held-out evaluation.
//!
//! cargo run --release --example classification

use lotcyto::classify::{
    evaluate, select_c_by_cv, select_rows, signed_labels, stratified_split, train_linear_svm, SvmParams,
};
use lotcyto::lot::{build_reference, embed_cohort, ReferenceParams, SolverConfig};
use lotcyto::simgen::{default_marker_names, make_two_class_cohort, CohortSpec};
use nalgebra::DMatrix;

fn main() -> lotcyto::Result<()> {
    // A one-sigma shift is hard to see marker by marker but easy in distribution.
    let clouds = make_two_class_cohort(&CohortSpec::gaussian_shift(5, 20, 200, 1.0, 1.0, 11))?;
    let reference = build_reference(&clouds, &default_marker_names(5), &ReferenceParams { m: 50, ..ReferenceParams::default() })?;
    let zs = embed_cohort(&reference, &clouds, &SolverConfig::default(), 0)?;
    let p = zs[0].0.len();
    let z = DMatrix::from_fn(zs.len(), p, |i, j| zs[i].0.values[j]);
    let labels: Vec<u8> = clouds.iter().map(|c| c.class.unwrap()).collect();

    let (train, test) = stratified_split(&labels, 0.3, 0)?;
    let (z_train, z_test) = (select_rows(&z, &train), select_rows(&z, &test));
    let y_train: Vec<u8> = train.iter().map(|&i| labels[i]).collect();
    let y_test: Vec<u8> = test.iter().map(|&i| labels[i]).collect();

    let base = SvmParams::default();
    let c = select_c_by_cv(&z_train, &y_train, &[0.01, 0.1, 1.0, 10.0], 3, &base, 0)?;
    let model = train_linear_svm(&z_train, &signed_labels(&y_train), &SvmParams { c, ..base })?;
    let report = evaluate(&model, &z_test, &y_test)?;

    println!("train {} / test {}, features {p}, C = {c}", train.len(), test.len());
    println!("confusion [[TN, FP], [FN, TP]] = {:?}", report.confusion);
    println!("accuracy {:.3}, AUC {:?}", report.accuracy, report.auc);
    println!("class 1 precision {:.3} recall {:.3}", report.positive.precision, report.positive.recall);
    Ok(())
}
