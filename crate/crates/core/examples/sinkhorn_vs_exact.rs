//! Entropic OT against the exact transport cost on random small problems,
//! for a range of regularization strengths.

use goaltm::numeric::{exact_ot_small, sinkhorn_distance, SimplexVector, SinkhornConfig};
use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_simplex(k: usize, rng: &mut ChaCha8Rng) -> SimplexVector {
    let w: Vec<f64> = (0..k).map(|_| rng.random_range(0.05..1.0)).collect();
    let s: f64 = w.iter().sum();
    SimplexVector::from_vec(w.into_iter().map(|x| x / s).collect()).unwrap()
}

fn main() -> goaltm::Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let k = 4;
    let mu = random_simplex(k, &mut rng);
    let nu = random_simplex(k, &mut rng);
    let cost = Array2::from_shape_fn((k, k), |_| rng.random_range(0.0..2.0));
    let exact = exact_ot_small(&mu, &nu, cost.view())?;
    println!("exact transport cost: {exact:.6}");
    println!("{:>8} {:>10} {:>12} {:>8} {:>10}", "epsilon", "<P,C>", "regularized", "iters", "gap");
    for epsilon in [0.5, 0.1, 0.05, 0.01, 0.001] {
        let config = SinkhornConfig {
            epsilon,
            max_iter: 100_000,
            tol: 1e-9,
        };
        let r = sinkhorn_distance(&mu, &nu, cost.view(), &config)?;
        println!(
            "{epsilon:>8} {:>10.6} {:>12.6} {:>8} {:>10.2e}",
            r.distance,
            r.regularized,
            r.iterations,
            (r.distance - exact).abs()
        );
    }
    Ok(())
}
