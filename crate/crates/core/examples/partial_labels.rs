// Turning a fully annotated label matrix into a partially annotated one at
// several availability levels.

use std::error::Error;

use partial_mlr::data::{generate_synthetic, mask_labels, LabelMatrix, MaskSpec};

pub fn run_example() -> Result<(), Box<dyn Error>> {
    let bundle = generate_synthetic(200, 10, 2, 2, 8, 3)?;
    let full = bundle.labels();
    let cells = full.num_images() * full.num_classes();
    for p in [0.1, 0.2, 0.5, 0.9] {
        let masked = mask_labels(full, &MaskSpec::new(p, 42)?)?;
        println!(
            "p = {p:.1}: {} of {cells} labels kept ({:.1}%)",
            masked.known_count(),
            100.0 * masked.known_count() as f64 / cells as f64
        );
    }

    let dir = tempfile::tempdir()?;
    let path = dir.path().join("masked.csv");
    let masked = mask_labels(full, &MaskSpec::new(0.3, 7)?)?;
    masked.write_csv(&path, bundle.class_names())?;
    let (back, names) = LabelMatrix::read_csv(&path)?;
    assert_eq!(back, masked);
    println!("header: {}", names.join(","));
    for line in std::fs::read_to_string(&path)?.lines().skip(1).take(3) {
        println!("{line}");
    }
    // masking an already partial matrix is refused
    assert!(mask_labels(&masked, &MaskSpec::new(0.5, 1)?).is_err());
    Ok(())
}

#[allow(dead_code)]
fn main() -> Result<(), Box<dyn Error>> {
    run_example()
}
