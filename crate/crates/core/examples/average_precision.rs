// Per-class AP and mAP, including a class with no positives that is left
// out of the mean.

use std::error::Error;

use partial_mlr::data::LabelMatrix;
use partial_mlr::metrics::{average_precision, mean_average_precision, ranked_by_class};

pub fn run_example() -> Result<(), Box<dyn Error>> {
    // five images, three classes; class 2 never occurs
    let labels = LabelMatrix::from_rows(&[
        vec![1, -1, -1],
        vec![-1, 1, -1],
        vec![1, 1, -1],
        vec![-1, -1, -1],
        vec![1, -1, -1],
    ])?;
    let scores = vec![
        vec![0.9, 0.2, 0.1],
        vec![0.4, 0.8, 0.3],
        vec![0.7, 0.3, 0.2],
        vec![0.6, 0.1, 0.6],
        vec![0.3, 0.5, 0.4],
    ];
    let classes = ranked_by_class(&scores, &labels)?;
    println!("class 0 AP = {:.4}", average_precision(&classes[0], 0)?);
    let report = mean_average_precision(&classes)?;
    for (j, ap) in report.per_class.iter().enumerate() {
        match ap {
            Some(v) => println!("class {j}: AP {v:.4}"),
            None => println!("class {j}: no positives, excluded"),
        }
    }
    println!("mAP {:.4}", report.map);

    let dir = tempfile::tempdir()?;
    let path = dir.path().join("report.csv");
    report.write_csv(&path, &["cat".into(), "dog".into(), "zebra".into()])?;
    print!("{}", std::fs::read_to_string(path)?);
    Ok(())
}

#[allow(dead_code)]
fn main() -> Result<(), Box<dyn Error>> {
    run_example()
}
