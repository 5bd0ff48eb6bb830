// Cosine statistics between two prompt-embedding banks, and over a sweep of
// templates, using banks with a known per-class similarity.

use std::error::Error;

use partial_mlr::numerics::{Rng, Tensor};
use partial_mlr::promptlab::{pairwise_stats, template_sweep_stats, SweepPooling};

/// A bank whose row `j` has cosine `target` with row `j` of `base`.
fn bank_near(base: &Tensor, target: f64, rng: &mut Rng) -> Result<Tensor, Box<dyn Error>> {
    let (n, d) = base.matrix_dims()?;
    let mut rows = Vec::with_capacity(n);
    for j in 0..n {
        let b = base.row(j);
        let bn: f64 = b.iter().map(|v| v * v).sum::<f64>().sqrt();
        let u = rng.unit_vector(d);
        let proj: f64 = u.iter().zip(b).map(|(x, y)| x * y / bn).sum();
        let orth: Vec<f64> = u.iter().zip(b).map(|(x, y)| x - proj * y / bn).collect();
        let on: f64 = orth.iter().map(|v| v * v).sum::<f64>().sqrt();
        let s = (1.0 - target * target).sqrt();
        rows.push(b.iter().zip(&orth).map(|(x, o)| target * x / bn + s * o / on).collect());
    }
    Ok(Tensor::from_rows(&rows)?)
}

pub fn run_example() -> Result<(), Box<dyn Error>> {
    let mut rng = Rng::new(5);
    let (n, d) = (80, 64);
    let p1 = Tensor::new(vec![n, d], (0..n * d).map(|_| rng.normal()).collect())?;
    let n1 = bank_near(&p1, 0.58, &mut rng)?;
    let p2 = bank_near(&p1, 0.53, &mut rng)?;
    println!("P1-N1  {}", pairwise_stats(&p1, &n1)?.table_row());
    println!("P1-P2  {}", pairwise_stats(&p1, &p2)?.table_row());

    let mut sweep = (Vec::new(), Vec::new(), Vec::new());
    for t in 0..5 {
        let p = bank_near(&p1, 0.9, &mut rng)?;
        sweep.1.push(bank_near(&p, 0.5 + 0.02 * t as f64, &mut rng)?);
        sweep.2.push(bank_near(&p, 0.6, &mut rng)?);
        sweep.0.push(p);
    }
    for pooling in [SweepPooling::Pooled, SweepPooling::TemplateMeans] {
        let s = template_sweep_stats(&sweep.0, &sweep.1, &sweep.2, pooling)?;
        println!("{pooling:?}: P1-N1 {} | P1-P2 {}", s.p1_n1.table_row(), s.p1_p2.table_row());
    }
    Ok(())
}

#[allow(dead_code)]
fn main() -> Result<(), Box<dyn Error>> {
    run_example()
}
