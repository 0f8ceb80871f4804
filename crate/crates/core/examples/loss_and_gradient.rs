//! Evaluate the MI-max objective by hand on a few bags and compare its subgradient with
//! central finite differences.
//!
//! cargo run --release --example loss_and_gradient

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use mimax::trainer::{loss_gradient, loss_phi, loss_phi_s, regularized_loss, ClassCounts};
use mimax::{BoundingBox, FeatureBag, Label, Region};

const DIM: usize = 5;

fn main() -> mimax::Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let bags = (0..8)
        .map(|i| {
            let regions = (0..4)
                .map(|k| {
                    let x = 10.0 * k as f32;
                    let feature = (0..DIM).map(|_| rng.gen_range(-1.0..1.0)).collect();
                    Region::new(BoundingBox::new(x, 0.0, x + 8.0, 8.0)?, rng.gen(), feature)
                })
                .collect::<mimax::Result<Vec<_>>>()?;
            let label = Label::from_bool(i % 2 == 0);
            Ok(FeatureBag::new(format!("img{i}"), regions, [("c".to_owned(), label)].into())?)
        })
        .collect::<mimax::Result<Vec<_>>>()?;
    let counts = ClassCounts::from_bags(&bags, "c")?;

    let w: Vec<f64> = (0..DIM).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let b = 0.1;
    let (eps, c) = (0.01, 0.5);
    println!("phi   = {:.6}", loss_phi(&w, b, &bags, "c", counts)?);
    println!("phi_s = {:.6}", loss_phi_s(&w, b, &bags, "c", counts, eps)?);
    let loss = |w: &[f64], b: f64| regularized_loss(w, b, &bags, "c", counts, eps, c, true);
    println!("L     = {:.6}", loss(&w, b)?);

    let g = loss_gradient(&w, b, &bags, "c", counts, eps, c, true)?;
    let h = 1e-6;
    println!("coord   analytic     numeric");
    for j in 0..DIM {
        let (mut up, mut down) = (w.clone(), w.clone());
        up[j] += h;
        down[j] -= h;
        let num = (loss(&up, b)? - loss(&down, b)?) / (2.0 * h);
        println!("w[{j}] {:>11.6} {:>11.6}", g.w[j], num);
    }
    let num = (loss(&w, b + h)? - loss(&w, b - h)?) / (2.0 * h);
    println!("b    {:>11.6} {:>11.6}", g.b, num);
    Ok(())
}
