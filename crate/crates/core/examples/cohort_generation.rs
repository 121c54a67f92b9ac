//! Synthetic two-class cohorts and treatment designs written as cell tables.
//!
//! cargo run --example cohort_generation -- [output.csv]

use lotcyto::simgen::{
    cohort_table, default_marker_names, make_treatment_cohort, make_two_class_cohort, ClassPerturbation, CohortSpec,
    MixtureSpec, TreatmentSpec,
};

fn main() -> lotcyto::Result<()> {
    let out = std::env::args().nth(1);

    let shifted = make_two_class_cohort(&CohortSpec::gaussian_shift(5, 10, 200, 1.0, 3.0, 0))?;
    let rotated = make_two_class_cohort(&CohortSpec {
        n_per_class: 10,
        cells_per_sample: 200,
        mixture: MixtureSpec::isotropic(&[vec![2.0, 0.0, 0.0], vec![-2.0, 0.0, 0.0]], 0.5),
        perturbation: ClassPerturbation::Rotation { plane: (0, 1), angle: std::f64::consts::FRAC_PI_4 },
        jitter: 0.1,
        seed: 1,
    })?;
    let treated = make_treatment_cohort(&TreatmentSpec::standard(5, 4, 2, 100, 2))?;

    for (name, clouds) in [("shift", &shifted), ("rotation", &rotated), ("treatments", &treated)] {
        let cells: usize = clouds.iter().map(|c| c.points.nrows()).sum();
        println!("{name:<10} {} samples, {cells} cells, first key {}", clouds.len(), clouds[0].key_string());
    }

    let table = cohort_table(&shifted, &default_marker_names(5))?;
    match out {
        Some(path) => {
            table.write_csv(std::fs::File::create(&path)?)?;
            println!("wrote {path}");
        }
        None => println!("{} cells, metadata {:?}, markers {:?}", table.n_rows(), table.meta_schema(), table.marker_names()),
    }
    Ok(())
}
