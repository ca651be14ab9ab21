//! One relation unit over eight random frames, conditioned on a question
//! vector. Prints the subsets drawn for each size and the output shape.

use crnkit::crn::{ConditioningContext, CrnConfig, CrnUnit, HForm, ObjectArray};
use crnkit::diffcore::{Graph, ParamStore, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn main() -> crnkit::Result<()> {
    let (n, f) = (8, 6);
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut store = ParamStore::new();
    let unit = CrnUnit::new(&mut store, "demo", n, f, CrnConfig::full(n, HForm::Multiplicative), &mut rng)?;

    let mut g = Graph::with_params(&store);
    let frames = (0..n)
        .map(|_| Tensor::matrix(1, f, (0..f).map(|_| rng.gen_range(-1.0..1.0)).collect()).map(|t| g.input(t)))
        .collect::<crnkit::Result<Vec<_>>>()?;
    let input = ObjectArray::new(&g, frames)?;
    let q = g.input(Tensor::matrix(1, f, vec![0.5; f])?);

    let out = unit.forward(&mut g, &input, &ConditioningContext::single(q), &mut rng)?;
    for (k, draws) in unit.subset_sizes().iter().zip(&out.subsets) {
        println!("k={k}: {draws:?}");
    }
    println!("{n} objects -> {} objects of {}x{}", out.results.len(), out.results.rows(), out.results.cols());
    println!("ops counted: {}", g.flops());
    Ok(())
}
