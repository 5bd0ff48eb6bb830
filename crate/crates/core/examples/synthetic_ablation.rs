// Trains every head family on the same synthetic bundle with 20% of the
// training labels visible and prints test mAP before and after training.
//
// ```text
// cargo run --release --example synthetic_ablation
// ```

use std::error::Error;

use partial_mlr::data::{mask_labels, MaskSpec, SynthConfig, Synthesizer};
use partial_mlr::heads::{make_freedual, make_negativecoop, make_positivecoop, Head, ProjectorHead};
use partial_mlr::loss::LossConfig;
use partial_mlr::model::evaluate;
use partial_mlr::train::{train_run, TrainConfig};

pub fn run_example() -> Result<(), Box<dyn Error>> {
    let (classes, dim, seed) = (8, 32, 0);
    let mut synth = Synthesizer::new(SynthConfig::new(classes, 3, 3, dim, seed))?;
    let train = synth.sample(128)?;
    let test = synth.sample(128)?;
    let masked = mask_labels(train.labels(), &MaskSpec::new(0.2, seed)?)?;
    println!(
        "training on {} images, {} of {} labels visible",
        train.len(),
        masked.known_count(),
        train.len() * classes
    );
    let train = train.with_labels(masked)?;

    // stand-ins for text-encoder embeddings of "photo of a {class}"
    let positive_anchors = synth.text_anchors(0.3, seed)?;
    let negative_anchors = synth.text_anchors(0.3, seed + 1)?;

    let heads = [
        ("baseline", Head::Projector(ProjectorHead::init(classes, dim, true, seed)?)),
        ("positivecoop", Head::Embedding(make_positivecoop(&positive_anchors, dim, seed)?)),
        ("negativecoop", Head::Embedding(make_negativecoop(&negative_anchors, dim, seed)?)),
        ("freedual", Head::Embedding(make_freedual(classes, dim, seed)?)),
    ];
    let cfg = TrainConfig {
        epochs: 30,
        seed,
        ..TrainConfig::default()
    };
    println!("{:<14}{:>10}{:>10}", "head", "untrained", "trained");
    for (name, head) in heads {
        let before = evaluate(&head, &test)?.map;
        let outcome = train_run(&train, head, &cfg, &LossConfig::default(), None)?;
        let after = evaluate(&outcome.head, &test)?.map;
        println!("{name:<14}{before:>10.4}{after:>10.4}");
    }
    Ok(())
}

#[allow(dead_code)]
fn main() -> Result<(), Box<dyn Error>> {
    run_example()
}
