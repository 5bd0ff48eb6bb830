// Central finite differences against the analytic gradient of the whole
// chain: head, spatial softmax pooling, pair probability and loss.

use std::error::Error;

use partial_mlr::data::{generate_synthetic, DatasetBundle};
use partial_mlr::heads::{make_negativecoop, Head, ProjectorHead};
use partial_mlr::loss::LossConfig;
use partial_mlr::model::batch_loss_and_grad;
use partial_mlr::numerics::{Rng, Tensor};

fn max_relative_error(head: &Head, bundle: &DatasetBundle) -> Result<f64, Box<dyn Error>> {
    let cfg = LossConfig::default();
    let all: Vec<usize> = (0..bundle.len()).collect();
    let analytic = batch_loss_and_grad(head, bundle, &all, &cfg)?.1.concat();
    let theta = head.trainable_snapshot();
    let h = 1e-6;
    let mut worst: f64 = 0.0;
    for (k, &an) in analytic.iter().enumerate() {
        let mut up = head.clone();
        up.set_trainable(k, theta[k] + h);
        let mut down = head.clone();
        down.set_trainable(k, theta[k] - h);
        let fd = (batch_loss_and_grad(&up, bundle, &all, &cfg)?.0 - batch_loss_and_grad(&down, bundle, &all, &cfg)?.0)
            / (2.0 * h);
        worst = worst.max((fd - an).abs() / fd.abs().max(an.abs()).max(1e-6));
    }
    Ok(worst)
}

pub fn run_example() -> Result<(), Box<dyn Error>> {
    let bundle = generate_synthetic(4, 3, 2, 3, 6, 9)?;
    let projector = Head::Projector(ProjectorHead::init(3, 6, true, 1)?);
    println!("projector: {} parameters, max relative error {:.2e}", projector.trainable_snapshot().len(), max_relative_error(&projector, &bundle)?);

    let mut rng = Rng::new(2);
    let anchors = Tensor::new(vec![3, 6], (0..18).map(|_| rng.normal()).collect())?;
    let mut bank = make_negativecoop(&anchors, 6, 1)?;
    // a softer temperature keeps finite differences well conditioned
    bank.set_temperature(0.5)?;
    let bank = Head::Embedding(bank);
    println!("embedding bank: {} parameters, max relative error {:.2e}", bank.trainable_snapshot().len(), max_relative_error(&bank, &bundle)?);
    Ok(())
}

#[allow(dead_code)]
fn main() -> Result<(), Box<dyn Error>> {
    run_example()
}
