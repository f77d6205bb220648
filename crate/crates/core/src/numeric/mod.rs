//! Numerical kernels shared by the model, training loop, extraction and metrics.

mod adam;
mod exact_ot;
mod gradcheck;
mod kmeans;
mod sinkhorn;

use ndarray::{Array1, Array2, ArrayView1, ArrayView2};
use rand::Rng;
use rand_distr::{Distribution, Gamma};

use crate::error::{Error, Result};

pub use adam::{Adam, AdamConfig};
pub use exact_ot::{exact_ot_small, MAX_EXACT_OT_SIZE};
pub use gradcheck::{finite_diff_grad, max_relative_error};
pub use kmeans::{kmeans, KMeansResult, MAX_LLOYD_ITERS};
pub use sinkhorn::{sinkhorn_distance, SinkhornConfig, SinkhornResult, TransportPlan};

/// Tolerance on the unit-sum constraint of a [`SimplexVector`].
pub const SIMPLEX_TOL: f64 = 1e-6;

/// A probability vector: nonnegative components summing to one.
#[derive(Debug, Clone, PartialEq)]
pub struct SimplexVector(Array1<f64>);

impl SimplexVector {
    pub fn new(values: Array1<f64>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::domain("simplex vector must be non-empty"));
        }
        if values.iter().any(|&x| !x.is_finite() || x < 0.0) {
            return Err(Error::domain(format!(
                "simplex vector has negative or non-finite components: {values}"
            )));
        }
        let sum = values.sum();
        if (sum - 1.0).abs() > SIMPLEX_TOL {
            return Err(Error::domain(format!("simplex vector sums to {sum}, not 1")));
        }
        Ok(SimplexVector(values))
    }

    pub fn from_vec(values: Vec<f64>) -> Result<Self> {
        Self::new(Array1::from(values))
    }

    pub(crate) fn from_array_unchecked(values: Array1<f64>) -> Self {
        SimplexVector(values)
    }

    pub fn uniform(k: usize) -> Self {
        SimplexVector(Array1::from_elem(k, 1.0 / k as f64))
    }

    pub fn view(&self) -> ArrayView1<'_, f64> {
        self.0.view()
    }

    pub fn as_array(&self) -> &Array1<f64> {
        &self.0
    }

    pub fn into_inner(self) -> Array1<f64> {
        self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn argmax(&self) -> usize {
        argmax(self.0.view())
    }
}

/// Square transport cost matrix with entries in `[0, 2]`.
#[derive(Debug, Clone, PartialEq)]
pub struct CostMatrix(Array2<f64>);

impl CostMatrix {
    pub fn new(values: Array2<f64>) -> Result<Self> {
        if values.nrows() != values.ncols() || values.is_empty() {
            return Err(Error::domain(format!(
                "cost matrix must be square and non-empty, got {:?}",
                values.dim()
            )));
        }
        if let Some(bad) = values.iter().find(|&&c| !(0.0..=2.0).contains(&c)) {
            return Err(Error::domain(format!("cost entry {bad} outside [0, 2]")));
        }
        Ok(CostMatrix(values))
    }

    pub fn view(&self) -> ArrayView2<'_, f64> {
        self.0.view()
    }

    pub fn as_array(&self) -> &Array2<f64> {
        &self.0
    }

    pub fn size(&self) -> usize {
        self.0.nrows()
    }
}

/// First index of the largest component.
pub fn argmax(v: ArrayView1<'_, f64>) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate() {
        if x > v[best] {
            best = i;
        }
    }
    best
}

/// Max-subtracted softmax.
pub fn softmax(v: ArrayView1<'_, f64>) -> Result<SimplexVector> {
    if v.is_empty() {
        return Err(Error::domain("softmax of an empty vector"));
    }
    if v.iter().any(|x| !x.is_finite()) {
        return Err(Error::domain(format!("softmax input is not finite: {v}")));
    }
    Ok(SimplexVector(softmax_unchecked(v)))
}

pub(crate) fn softmax_unchecked(v: ArrayView1<'_, f64>) -> Array1<f64> {
    let max = v.fold(f64::NEG_INFINITY, |m, &x| m.max(x));
    let mut out = v.mapv(|x| (x - max).exp());
    let sum = out.sum();
    out /= sum;
    out
}

/// `log(sum(exp(x)))`, stable for large inputs; `-inf` entries are ignored.
pub fn log_sum_exp(xs: impl Iterator<Item = f64> + Clone) -> f64 {
    let max = xs.clone().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return f64::NEG_INFINITY;
    }
    max + xs.map(|x| (x - max).exp()).sum::<f64>().ln()
}

pub fn norm(v: ArrayView1<'_, f64>) -> f64 {
    v.dot(&v).sqrt()
}

/// Cosine similarity, clamped to `[-1, 1]`.
pub fn cosine(u: ArrayView1<'_, f64>, v: ArrayView1<'_, f64>) -> Result<f64> {
    if u.len() != v.len() {
        return Err(Error::domain(format!(
            "cosine of vectors with lengths {} and {}",
            u.len(),
            v.len()
        )));
    }
    let (nu, nv) = (norm(u), norm(v));
    if nu == 0.0 || nv == 0.0 {
        return Err(Error::domain("cosine similarity with a zero vector"));
    }
    Ok((u.dot(&v) / (nu * nv)).clamp(-1.0, 1.0))
}

pub fn l1_normalize(v: ArrayView1<'_, f64>) -> Result<SimplexVector> {
    if v.iter().any(|&x| x < 0.0 || !x.is_finite()) {
        return Err(Error::domain("l1_normalize needs finite nonnegative components"));
    }
    let sum = v.sum();
    if sum <= 0.0 {
        return Err(Error::domain("l1_normalize of a zero vector"));
    }
    Ok(SimplexVector(v.mapv(|x| x / sum)))
}

/// Draws from `Dir(alpha)` by normalizing independent `Gamma(alpha_k, 1)` draws.
pub fn sample_dirichlet<R: Rng + ?Sized>(alpha: &[f64], rng: &mut R) -> Result<SimplexVector> {
    if alpha.is_empty() {
        return Err(Error::domain("Dirichlet concentration is empty"));
    }
    let mut draws = Vec::with_capacity(alpha.len());
    for &a in alpha {
        if !(a > 0.0 && a.is_finite()) {
            return Err(Error::domain(format!("Dirichlet concentration {a} is not positive")));
        }
        let gamma = Gamma::new(a, 1.0).map_err(|e| Error::domain(e.to_string()))?;
        draws.push(gamma.sample(rng));
    }
    let sum: f64 = draws.iter().sum();
    if sum > 0.0 {
        Ok(SimplexVector(Array1::from_iter(draws.iter().map(|g| g / sum))))
    } else {
        // Every draw underflowed; only possible for tiny alpha. Put the mass on
        // the largest concentration.
        let mut one_hot = Array1::zeros(alpha.len());
        one_hot[argmax(ArrayView1::from(alpha))] = 1.0;
        Ok(SimplexVector(one_hot))
    }
}

/// Gaussian RBF kernel `exp(-|x - y|^2 / (2 gamma^2))`.
pub fn rbf_kernel(x: ArrayView1<'_, f64>, y: ArrayView1<'_, f64>, gamma: f64) -> f64 {
    debug_assert!(gamma > 0.0);
    (-squared_distance(x, y) / (2.0 * gamma * gamma)).exp()
}

pub fn squared_distance(x: ArrayView1<'_, f64>, y: ArrayView1<'_, f64>) -> f64 {
    x.iter().zip(y.iter()).map(|(a, b)| (a - b) * (a - b)).sum()
}

/// Median of the pairwise Euclidean distances, or 1 when that median is 0
/// (or there are fewer than two points).
pub fn median_bandwidth(points: &[ArrayView1<'_, f64>]) -> f64 {
    let mut dists = Vec::with_capacity(points.len() * points.len().saturating_sub(1) / 2);
    for i in 0..points.len() {
        for j in i + 1..points.len() {
            dists.push(squared_distance(points[i], points[j]).sqrt());
        }
    }
    if dists.is_empty() {
        return 1.0;
    }
    dists.sort_by(f64::total_cmp);
    let n = dists.len();
    let median = if n % 2 == 1 {
        dists[n / 2]
    } else {
        0.5 * (dists[n / 2 - 1] + dists[n / 2])
    };
    if median > 0.0 {
        median
    } else {
        1.0
    }
}

/// Rounds every component to the nearest `f32`, the storage precision of
/// embeddings and checkpoints.
pub fn round_to_f32(m: &mut Array2<f64>) {
    m.mapv_inplace(|x| x as f32 as f64);
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn softmax_examples() {
        let s = softmax(array![0.0, 0.0, 0.0].view()).unwrap();
        for &x in s.as_array() {
            assert!((x - 1.0 / 3.0).abs() < 1e-15);
        }
        let e = std::f64::consts::E;
        let s = softmax(array![1.0, 0.0].view()).unwrap();
        assert!((s.as_array()[0] - e / (e + 1.0)).abs() < 1e-15);
        assert!((s.as_array()[0] - 0.73106).abs() < 1e-5);
        assert!((s.as_array()[1] - 0.26894).abs() < 1e-5);
        let s = softmax(array![1000.0, 0.0].view()).unwrap();
        assert!((s.as_array()[0] - 1.0).abs() < 1e-12);
        assert!(s.as_array()[1] >= 0.0);
        assert!(softmax(array![f64::NAN].view()).is_err());
    }

    #[test]
    fn cosine_examples() {
        let u = array![1.0, 2.0, -0.5];
        assert!((cosine(u.view(), u.view()).unwrap() - 1.0).abs() < 1e-15);
        assert_eq!(cosine(array![1.0, 0.0].view(), array![0.0, 1.0].view()).unwrap(), 0.0);
        let neg = u.mapv(|x| -x);
        assert!((cosine(u.view(), neg.view()).unwrap() + 1.0).abs() < 1e-15);
        assert!(matches!(
            cosine(u.view(), array![0.0, 0.0, 0.0].view()),
            Err(Error::Domain(_))
        ));
    }

    #[test]
    fn l1_normalize_examples() {
        assert_eq!(l1_normalize(array![2.0, 2.0].view()).unwrap().into_inner(), array![0.5, 0.5]);
        assert_eq!(
            l1_normalize(array![1.0, 0.0, 3.0].view()).unwrap().into_inner(),
            array![0.25, 0.0, 0.75]
        );
        assert!(l1_normalize(array![0.0, 0.0].view()).is_err());
    }

    #[test]
    fn dirichlet_examples() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        assert!(sample_dirichlet(&[0.0, 1.0], &mut rng).is_err());
        assert!(sample_dirichlet(&[-1.0, 1.0], &mut rng).is_err());

        // Var = a0 a1 / (s^2 (s + 1)) with s = 2e6 gives a standard deviation of
        // ~3.5e-4, so a 0.01 band is ~28 standard deviations wide.
        let mut inside = 0;
        for _ in 0..200 {
            let s = sample_dirichlet(&[1e6, 1e6], &mut rng).unwrap();
            if (s.as_array()[0] - 0.5).abs() < 0.01 {
                inside += 1;
            }
        }
        assert!(inside >= 198);

        let a = sample_dirichlet(&[0.3, 0.3, 0.3], &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
        let b = sample_dirichlet(&[0.3, 0.3, 0.3], &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn rbf_examples() {
        let x = array![0.2, 0.8];
        assert_eq!(rbf_kernel(x.view(), x.view(), 0.5), 1.0);
        let gamma = 0.3;
        let y = array![0.2 + gamma * 2f64.sqrt(), 0.8];
        let k = rbf_kernel(x.view(), y.view(), gamma);
        assert!((k - (-1f64).exp()).abs() < 1e-12);
        assert!((k - 0.36788).abs() < 1e-5);
        assert!(rbf_kernel(x.view(), y.view(), 1e9) > 1.0 - 1e-12);
    }

    #[test]
    fn median_bandwidth_falls_back_to_one() {
        let p = array![0.5, 0.5];
        assert_eq!(median_bandwidth(&[p.view(), p.view()]), 1.0);
        let q = array![0.5, 1.5];
        assert_eq!(median_bandwidth(&[p.view(), q.view()]), 1.0);
        let r = array![0.5, 3.5];
        assert_eq!(median_bandwidth(&[p.view(), q.view(), r.view()]), 2.0);
    }

    proptest! {
        #[test]
        fn softmax_on_simplex_and_shift_invariant(
            v in proptest::collection::vec(-50.0f64..50.0, 1..8),
            c in -100.0f64..100.0,
        ) {
            let a = Array1::from(v);
            let s = softmax(a.view()).unwrap();
            prop_assert!(SimplexVector::new(s.as_array().clone()).is_ok());
            let shifted = softmax(a.mapv(|x| x + c).view()).unwrap();
            for (x, y) in s.as_array().iter().zip(shifted.as_array()) {
                prop_assert!((x - y).abs() < 1e-12);
            }
        }

        #[test]
        fn dirichlet_on_simplex(
            alpha in proptest::collection::vec(0.05f64..5.0, 2..8),
            seed in any::<u64>(),
        ) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let s = sample_dirichlet(&alpha, &mut rng).unwrap();
            prop_assert!(SimplexVector::new(s.into_inner()).is_ok());
        }
    }
}
