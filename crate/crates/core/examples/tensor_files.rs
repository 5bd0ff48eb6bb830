// The `.mlt` tensor format, embedding banks with a class-name sidecar, and a
// per-image feature index as written by an encoder export script.

use std::error::Error;
use std::fs;

use partial_mlr::data::{
    bank_names_path, encode, load_features, read_bank, read_tensor_file, write_bank, write_tensor_file_as,
    Dtype, FeatureIndex, FeatureIndexEntry,
};
use partial_mlr::numerics::Tensor;

pub fn run_example() -> Result<(), Box<dyn Error>> {
    let t = Tensor::new(vec![2, 3], vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0])?;
    let bytes = encode(&t, Dtype::F32);
    println!("2x3 f32 tensor: {} bytes, header {:02x?}", bytes.len(), &bytes[..6]);

    let dir = tempfile::tempdir()?;
    // 32-bit files widen to f64 exactly
    let half = Tensor::new(vec![1], vec![0.5])?;
    write_tensor_file_as(&half, dir.path().join("half.mlt"), Dtype::F32)?;
    assert_eq!(read_tensor_file(dir.path().join("half.mlt"))?.values(), &[0.5]);

    let names: Vec<String> = ["person", "bicycle", "car"].map(String::from).to_vec();
    let bank = Tensor::new(vec![3, 4], (0..12).map(f64::from).collect())?;
    let bank_path = dir.path().join("p1.mlt");
    write_bank(&bank_path, &bank, &names)?;
    let (back, sidecar) = read_bank(&bank_path)?;
    assert_eq!(back, bank);
    println!(
        "bank {:?} with sidecar {} = {:?}",
        back.shape(),
        bank_names_path(&bank_path).file_name().unwrap_or_default().to_string_lossy(),
        sidecar
    );

    let mut files = Vec::new();
    for i in 0..2 {
        let path = format!("img{i}.mlt");
        let map = Tensor::new(vec![2, 2, 4], (0..16).map(|v| f64::from(v + i)).collect())?;
        write_tensor_file_as(&map, dir.path().join(&path), Dtype::F32)?;
        files.push(FeatureIndexEntry {
            path: path.into(),
            shape: vec![2, 2, 4],
        });
    }
    let index = FeatureIndex {
        weights: Some("RN101".into()),
        files,
    };
    let index_path = dir.path().join("features.json");
    fs::write(&index_path, serde_json::to_string_pretty(&index)?)?;
    let maps = load_features(&index_path)?;
    println!("loaded {} feature maps of {}x{}x{}", maps.len(), maps[0].height(), maps[0].width(), maps[0].dim());
    Ok(())
}

#[allow(dead_code)]
fn main() -> Result<(), Box<dyn Error>> {
    run_example()
}
