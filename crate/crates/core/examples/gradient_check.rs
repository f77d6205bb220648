//! Loss breakdown of one random batch and a finite-difference check of the
//! analytic gradient of every term with respect to the topic matrix.

use goaltm::model::{draw_priors, evaluate_loss, BatchContext, GoalMatrix, Hyper, LossBreakdown, TopicMatrix};
use goaltm::numeric::{finite_diff_grad, max_relative_error, SinkhornConfig};
use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

fn main() -> goaltm::Result<()> {
    let (k, h, m) = (4, 8, 2);
    let mut rng = ChaCha8Rng::seed_from_u64(42);
    let mut normal = |r, c| Array2::from_shape_fn((r, c), |_| rng.sample::<f64, _>(StandardNormal));
    let goals = GoalMatrix::new(normal(k, h), (0..k).collect(), (0..k).map(|i| format!("goal {i}")).collect())?;
    let batch = BatchContext::new(normal(2 * m, h), normal(2 * m, h), &goals, 0.6)?;
    let topics = TopicMatrix::random(k, h, 7)?;
    let hyper = Hyper {
        sinkhorn: SinkhornConfig {
            epsilon: 0.05,
            max_iter: 100_000,
            tol: 1e-9,
        },
        ..Hyper::defaults_for(k)
    };
    let priors = draw_priors(2 * m, k, hyper.alpha, &mut ChaCha8Rng::seed_from_u64(1))?;
    let gamma = 0.3;

    let lb = evaluate_loss(&topics, &goals, &batch, &hyper, &priors, gamma)?;
    println!(
        "contrastive {:.6}  prior match {:.6}  ot {:.6}  total {:.6}",
        lb.contrastive, lb.prior_match, lb.ot, lb.total
    );

    let x0 = topics.values().as_slice().unwrap().to_vec();
    let at = |x: &[f64]| {
        let t = TopicMatrix::from_array(Array2::from_shape_vec((k, h), x.to_vec()).unwrap()).unwrap();
        evaluate_loss(&t, &goals, &batch, &hyper, &priors, gamma).unwrap()
    };
    let terms: [(&str, fn(&LossBreakdown) -> f64, &Array2<f64>); 4] = [
        ("contrastive", |l| l.contrastive, &lb.grad_contrastive),
        ("prior match", |l| l.prior_match, &lb.grad_prior_match),
        ("ot", |l| l.ot, &lb.grad_ot),
        ("total", |l| l.total, &lb.grad_et),
    ];
    for (name, term, analytic) in terms {
        let numeric = finite_diff_grad(|x| term(&at(x)), &x0, 1e-4);
        let err = max_relative_error(analytic.as_slice().unwrap(), &numeric, 1e-6);
        println!("{name:>12}: max relative error {err:.2e}");
    }
    Ok(())
}
