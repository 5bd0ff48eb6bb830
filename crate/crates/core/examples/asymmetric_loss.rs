// The asymmetric loss next to plain cross-entropy, and its gradient with
// respect to the prediction and to the logit margin.

use std::error::Error;

use partial_mlr::data::Label;
use partial_mlr::loss::{asl_from_logit, asl_grad, asl_term, LossConfig};

pub fn run_example() -> Result<(), Box<dyn Error>> {
    let asl = LossConfig::default();
    let bce = LossConfig::bce();
    println!("gamma+ = {}, gamma- = {}, delta = {}", asl.gamma_plus, asl.gamma_minus, asl.delta);
    println!("{:>6} {:>12} {:>12} {:>12} {:>12}", "y_hat", "asl(+)", "bce(+)", "asl(-)", "bce(-)");
    for y_hat in [0.01, 0.04, 0.1, 0.3, 0.5, 0.7, 0.9, 0.99] {
        println!(
            "{y_hat:>6} {:>12.6} {:>12.6} {:>12.6} {:>12.6}",
            asl_term(Label::Present, y_hat, &asl)?,
            asl_term(Label::Present, y_hat, &bce)?,
            asl_term(Label::Absent, y_hat, &asl)?,
            asl_term(Label::Absent, y_hat, &bce)?,
        );
    }
    // below the shift, easy negatives contribute nothing
    assert_eq!(asl_term(Label::Absent, 0.04, &asl)?, 0.0);
    assert_eq!(asl_grad(Label::Absent, 0.04, &asl)?, 0.0);
    // unknown labels never contribute
    assert_eq!(asl_term(Label::Unknown, 0.3, &asl)?, 0.0);

    // the logit form stays finite where y_hat itself rounds to 1
    for x in [2.0, 20.0, 60.0] {
        let (loss, grad) = asl_from_logit(Label::Absent, x, &asl);
        println!("absent label, margin {x:>4}: loss {loss:.4}, dloss/dmargin {grad:.3e}");
    }
    Ok(())
}

#[allow(dead_code)]
fn main() -> Result<(), Box<dyn Error>> {
    run_example()
}
