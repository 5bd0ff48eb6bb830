// Class-wise spatial softmax pooling on one image, and export of a class's
// similarity map as `.mlt` plus an ASCII graymap.

use std::error::Error;

use partial_mlr::aggregation::{export_similarity_map, pair_probability, pool};
use partial_mlr::data::{read_tensor_file, SynthConfig, Synthesizer};
use partial_mlr::heads::{make_positivecoop, Polarity};

pub fn run_example() -> Result<(), Box<dyn Error>> {
    let mut cfg = SynthConfig::new(3, 4, 4, 16, 11);
    cfg.presence = 0.7;
    let mut synth = Synthesizer::new(cfg)?;
    let bundle = synth.sample(1)?;
    let head = make_positivecoop(&synth.text_anchors(0.9, 11)?, 16, 0)?;
    let z = &bundle.features()[0];
    let logits = head.forward(z)?;
    let (maps, pair) = pool(&logits);
    let probs = pair_probability(&pair);
    for (j, prob) in probs.iter().enumerate() {
        let weights: Vec<f64> = (0..16).map(|c| maps.positive[c * 3 + j]).collect();
        let peak = weights
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.total_cmp(b.1))
            .map(|(c, _)| c)
            .unwrap_or(0);
        println!(
            "class {j}: label {:?}, y_hat {:.4}, attention peak at cell ({}, {}) with weight {:.3}",
            bundle.labels().get(0, j),
            prob,
            peak / 4,
            peak % 4,
            weights[peak]
        );
    }

    let dir = tempfile::tempdir()?;
    let (mlt, pgm) = export_similarity_map(&logits, 0, Polarity::Positive, dir.path().join("class0_pos"))?;
    let plane = read_tensor_file(&mlt)?;
    println!("wrote {:?} plane and graymap:", plane.shape());
    print!("{}", std::fs::read_to_string(pgm)?);
    Ok(())
}

#[allow(dead_code)]
fn main() -> Result<(), Box<dyn Error>> {
    run_example()
}
