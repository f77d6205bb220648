//! Topic and goal matrices, distribution inference, the three training losses
//! and their gradient with respect to the topic matrix.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numeric::{
    log_sum_exp, median_bandwidth, norm, rbf_kernel, sample_dirichlet, sinkhorn_distance, softmax,
    softmax_unchecked, CostMatrix, SimplexVector, SinkhornConfig, SinkhornResult,
};

fn check_rows(m: ArrayView2<'_, f64>, what: &str) -> Result<()> {
    if m.nrows() == 0 || m.ncols() == 0 {
        return Err(Error::domain(format!("{what} is empty")));
    }
    if m.iter().any(|x| !x.is_finite()) {
        return Err(Error::NonFinite(format!("{what} has non-finite entries")));
    }
    if let Some(k) = m.rows().into_iter().position(|r| norm(r) == 0.0) {
        return Err(Error::domain(format!("{what} row {k} is the zero vector")));
    }
    Ok(())
}

/// The trainable `K x H` topic representation matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct TopicMatrix {
    values: Array2<f64>,
}

impl TopicMatrix {
    /// Rows drawn from a standard Gaussian and scaled to unit norm.
    pub fn random(k: usize, h: usize, seed: u64) -> Result<Self> {
        if k == 0 || h == 0 {
            return Err(Error::domain(format!("topic matrix needs K, H >= 1, got {k}x{h}")));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut values = Array2::<f64>::zeros((k, h));
        for mut row in values.rows_mut() {
            loop {
                row.mapv_inplace(|_| rng.sample(StandardNormal));
                let n = norm(row.view());
                if n > 1e-12 {
                    row.mapv_inplace(|x| x / n);
                    break;
                }
            }
        }
        Ok(TopicMatrix { values })
    }

    pub fn from_array(values: Array2<f64>) -> Result<Self> {
        check_rows(values.view(), "topic matrix")?;
        Ok(TopicMatrix { values })
    }

    pub fn values(&self) -> &Array2<f64> {
        &self.values
    }

    pub fn into_inner(self) -> Array2<f64> {
        self.values
    }

    pub fn k(&self) -> usize {
        self.values.nrows()
    }

    pub fn dim(&self) -> usize {
        self.values.ncols()
    }

    /// Flat row-major parameter view for the optimizer.
    pub(crate) fn params_mut(&mut self) -> &mut [f64] {
        self.values.as_slice_mut().expect("topic matrix is contiguous")
    }

    pub(crate) fn validate(&self) -> Result<()> {
        check_rows(self.values.view(), "topic matrix")
    }
}

/// Frozen goal matrix: one centroid row per goal cluster.
#[derive(Debug, Clone, PartialEq)]
pub struct GoalMatrix {
    centroids: Array2<f64>,
    assignments: Vec<usize>,
    candidates: Vec<String>,
}

impl GoalMatrix {
    pub fn new(centroids: Array2<f64>, assignments: Vec<usize>, candidates: Vec<String>) -> Result<Self> {
        check_rows(centroids.view(), "goal matrix")?;
        let k = centroids.nrows();
        if assignments.len() != candidates.len() {
            return Err(Error::validation(format!(
                "{} cluster assignments for {} candidates",
                assignments.len(),
                candidates.len()
            )));
        }
        let mut sizes = vec![0usize; k];
        for &a in &assignments {
            if a >= k {
                return Err(Error::validation(format!("assignment {a} out of range for K={k}")));
            }
            sizes[a] += 1;
        }
        if let Some(c) = sizes.iter().position(|&s| s == 0) {
            return Err(Error::validation(format!("goal cluster {c} has no members")));
        }
        Ok(GoalMatrix {
            centroids,
            assignments,
            candidates,
        })
    }

    /// Centroids of `candidate_embs` grouped by `assignments`, rounded to `f32`.
    pub fn from_clusters(
        candidate_embs: ArrayView2<'_, f64>,
        assignments: Vec<usize>,
        candidates: Vec<String>,
        k: usize,
    ) -> Result<Self> {
        if candidate_embs.nrows() != candidates.len() {
            return Err(Error::validation(format!(
                "{} embeddings for {} candidates",
                candidate_embs.nrows(),
                candidates.len()
            )));
        }
        let mut centroids = Array2::<f64>::zeros((k, candidate_embs.ncols()));
        for c in 0..k {
            let members: Vec<usize> = (0..assignments.len()).filter(|&i| assignments[i] == c).collect();
            if members.is_empty() {
                return Err(Error::validation(format!("goal cluster {c} has no members")));
            }
            let mean = candidate_embs.select(Axis(0), &members).mean_axis(Axis(0)).unwrap();
            centroids.row_mut(c).assign(&mean.mapv(|x| x as f32 as f64));
        }
        GoalMatrix::new(centroids, assignments, candidates)
    }

    pub fn centroids(&self) -> &Array2<f64> {
        &self.centroids
    }

    pub fn assignments(&self) -> &[usize] {
        &self.assignments
    }

    pub fn candidates(&self) -> &[String] {
        &self.candidates
    }

    pub fn k(&self) -> usize {
        self.centroids.nrows()
    }

    pub fn dim(&self) -> usize {
        self.centroids.ncols()
    }

    pub fn members(&self, cluster: usize) -> Vec<&str> {
        self.assignments
            .iter()
            .zip(&self.candidates)
            .filter(|(&a, _)| a == cluster)
            .map(|(_, c)| c.as_str())
            .collect()
    }
}

/// `cos(u, v)` without clamping, so that it stays differentiable everywhere.
fn raw_cos(u: ArrayView1<'_, f64>, v: ArrayView1<'_, f64>) -> f64 {
    u.dot(&v) / (norm(u) * norm(v))
}

/// Cosine of `h` with every row of `rows`.
fn cosines(h: ArrayView1<'_, f64>, rows: ArrayView2<'_, f64>) -> Result<Array1<f64>> {
    if h.len() != rows.ncols() {
        return Err(Error::domain(format!(
            "vector of length {} against rows of length {}",
            h.len(),
            rows.ncols()
        )));
    }
    let nh = norm(h);
    if nh == 0.0 {
        return Err(Error::domain("cannot infer a distribution from the zero vector"));
    }
    Ok(rows.rows().into_iter().map(|r| r.dot(&h) / (nh * norm(r))).collect())
}

/// Softmax over the cosines between `h` and each topic row.
pub fn infer_theta(h: ArrayView1<'_, f64>, topics: &TopicMatrix) -> Result<SimplexVector> {
    softmax(cosines(h, topics.values.view())?.view())
}

/// Softmax over the cosines between `h` and each goal centroid.
pub fn infer_lambda(h: ArrayView1<'_, f64>, goals: &GoalMatrix) -> Result<SimplexVector> {
    softmax(cosines(h, goals.centroids.view())?.view())
}

/// `m_ij = 1 - cos(e_t^i, e_g^j)`.
pub fn cost_matrix(topics: &TopicMatrix, goals: &GoalMatrix) -> Result<CostMatrix> {
    if topics.k() != goals.k() || topics.dim() != goals.dim() {
        return Err(Error::domain(format!(
            "topic matrix {:?} and goal matrix {:?} disagree",
            topics.values.dim(),
            goals.centroids.dim()
        )));
    }
    let k = topics.k();
    let mut m = Array2::<f64>::zeros((k, k));
    for i in 0..k {
        for j in 0..k {
            let c = raw_cos(topics.values.row(i), goals.centroids.row(j));
            m[[i, j]] = (1.0 - c).clamp(0.0, 2.0);
        }
    }
    CostMatrix::new(m)
}

/// Reorders the topic rows so that topic `k` pairs with goal cluster `k`
/// under the minimum total transport cost. The objective is invariant to
/// this relabeling; it only fixes which cluster summarizes which topic.
pub fn align_topics_to_goals(topics: &TopicMatrix, goals: &GoalMatrix) -> Result<TopicMatrix> {
    let cost = cost_matrix(topics, goals)?;
    let k = topics.k();
    // Integer weights; costs lie in [0, 2].
    let weights = pathfinding::matrix::Matrix::from_vec(
        k,
        k,
        cost.as_array().iter().map(|&c| (c * 1e9).round() as i64).collect(),
    )
    .expect("square cost matrix");
    let (_, assignment) = pathfinding::kuhn_munkres::kuhn_munkres_min(&weights);
    let mut values = Array2::<f64>::zeros(topics.values.dim());
    for (row, &cluster) in assignment.iter().enumerate() {
        values.row_mut(cluster).assign(&topics.values.row(row));
    }
    TopicMatrix::from_array(values)
}

/// Which `(p, q)` pairs act as negatives in the contrastive loss.
///
/// Rows are ordered `[a_1..a_M, b_1..b_M]`; `p` and `p + M` form a positive pair.
pub fn negative_mask(mean_pooled: &[ArrayView1<'_, f64>], delta: f64) -> Result<Array2<bool>> {
    let n = mean_pooled.len();
    if !n.is_multiple_of(2) {
        return Err(Error::domain(format!("negative mask needs an even count, got {n}")));
    }
    if !(-1.0..=1.0).contains(&delta) {
        return Err(Error::domain(format!("delta {delta} outside [-1, 1]")));
    }
    let m = n / 2;
    let mut mask = Array2::from_elem((n, n), false);
    for p in 0..n {
        for q in p + 1..n {
            if q == p + m {
                continue;
            }
            let (u, v) = (mean_pooled[p], mean_pooled[q]);
            let c = if norm(u) == 0.0 || norm(v) == 0.0 {
                0.0
            } else {
                raw_cos(u, v)
            };
            let neg = c < delta;
            mask[[p, q]] = neg;
            mask[[q, p]] = neg;
        }
    }
    Ok(mask)
}

fn stack(vs: &[SimplexVector]) -> Result<Array2<f64>> {
    let k = vs.first().map_or(0, |v| v.len());
    if vs.iter().any(|v| v.len() != k) {
        return Err(Error::domain("distributions of different lengths"));
    }
    let mut out = Array2::<f64>::zeros((vs.len(), k));
    for (i, v) in vs.iter().enumerate() {
        out.row_mut(i).assign(v.as_array());
    }
    Ok(out)
}

/// Cosine `c` of `x` and `y`, with `dc/dx` and `dc/dy`.
fn cos_with_grads(x: ArrayView1<'_, f64>, y: ArrayView1<'_, f64>) -> (f64, Array1<f64>, Array1<f64>) {
    let (nx, ny) = (norm(x), norm(y));
    let c = x.dot(&y) / (nx * ny);
    let dx = (&y / ny - &x * (c / nx)) / nx;
    let dy = (&x / nx - &y * (c / ny)) / ny;
    (c, dx, dy)
}

/// Value and gradient with respect to each row of `thetas`.
fn contrastive_value_grad(thetas: ArrayView2<'_, f64>, mask: &Array2<bool>, tau: f64) -> Result<(f64, Array2<f64>)> {
    let n = thetas.nrows();
    if n < 2 || !n.is_multiple_of(2) {
        return Err(Error::domain(format!("contrastive loss needs 2M >= 2 rows, got {n}")));
    }
    if mask.dim() != (n, n) {
        return Err(Error::domain(format!("mask shape {:?} does not match {n} rows", mask.dim())));
    }
    if tau.is_nan() || tau <= 0.0 {
        return Err(Error::domain(format!("temperature must be positive, got {tau}")));
    }
    let m = n / 2;
    let mut grad = Array2::<f64>::zeros(thetas.dim());
    let mut total = 0.0;
    for p in 0..n {
        let partner = (p + m) % n;
        // The positive term first, then every eligible negative.
        let others: Vec<usize> = std::iter::once(partner)
            .chain((0..n).filter(|&q| q != p && q != partner && mask[[p, q]]))
            .collect();
        let parts: Vec<_> = others
            .iter()
            .map(|&q| cos_with_grads(thetas.row(p), thetas.row(q)))
            .collect();
        let logits: Vec<f64> = parts.iter().map(|(c, _, _)| c / tau).collect();
        let lse = log_sum_exp(logits.iter().copied());
        total += lse - logits[0];
        for (idx, (&q, (_, dx, dy))) in others.iter().zip(&parts).enumerate() {
            let w = (logits[idx] - lse).exp();
            let ds = if idx == 0 { (w - 1.0) / tau } else { w / tau };
            grad.row_mut(p).scaled_add(ds, dx);
            grad.row_mut(q).scaled_add(ds, dy);
        }
    }
    let scale = 1.0 / n as f64;
    grad *= scale;
    Ok((total * scale, grad))
}

/// Contrastive loss over `[a_1..a_M, b_1..b_M]` with cosine similarity and
/// temperature `tau`. Mask entries on the diagonal and at the positive
/// partner are ignored.
pub fn contrastive_loss(thetas: &[SimplexVector], mask: &Array2<bool>, tau: f64) -> Result<f64> {
    Ok(contrastive_value_grad(stack(thetas)?.view(), mask, tau)?.0)
}

fn mmd_value_grad(thetas: ArrayView2<'_, f64>, priors: ArrayView2<'_, f64>, gamma: f64) -> Result<(f64, Array2<f64>)> {
    let n = thetas.nrows();
    if n < 2 {
        return Err(Error::domain(format!("MMD needs at least 2 samples per batch, got {n}")));
    }
    if priors.dim() != thetas.dim() {
        return Err(Error::domain(format!(
            "prior batch {:?} does not match {:?}",
            priors.dim(),
            thetas.dim()
        )));
    }
    if !(gamma > 0.0 && gamma.is_finite()) {
        return Err(Error::domain(format!("kernel bandwidth must be positive, got {gamma}")));
    }
    let a = (n * (n - 1)) as f64;
    // 2M = n, so 1 / (2 M^2) = 2 / n^2.
    let cross = 2.0 / (n * n) as f64;
    let g2 = gamma * gamma;
    let mut value = 0.0;
    let mut grad = Array2::<f64>::zeros(thetas.dim());
    for i in 0..n {
        for j in 0..n {
            if i != j {
                let k = rbf_kernel(thetas.row(i), thetas.row(j), gamma);
                value += (k + rbf_kernel(priors.row(i), priors.row(j), gamma)) / a;
                // d k(x_i, x_j) / d x_i; the (j, i) term supplies the mirror image.
                let d = (&thetas.row(i) - &thetas.row(j)) * (-k / g2);
                grad.row_mut(i).scaled_add(2.0 / a, &d);
            }
            let kc = rbf_kernel(thetas.row(i), priors.row(j), gamma);
            value -= cross * kc;
            let d = (&thetas.row(i) - &priors.row(j)) * (-kc / g2);
            grad.row_mut(i).scaled_add(-cross, &d);
        }
    }
    Ok((value, grad))
}

/// Kernel discrepancy between inferred distributions and prior samples with
/// an RBF kernel of bandwidth `gamma`:
/// `1/A sum_{i != j} [k(t_i, t_j) + k(t'_i, t'_j)] - 1/(2M^2) sum_{i,j} k(t_i, t'_j)`
/// with `A = 2M(2M - 1)`.
pub fn mmd_loss(thetas: &[SimplexVector], priors: &[SimplexVector], gamma: f64) -> Result<f64> {
    Ok(mmd_value_grad(stack(thetas)?.view(), stack(priors)?.view(), gamma)?.0)
}

#[derive(Debug, Clone, PartialEq)]
pub struct OtLoss {
    /// Mean transport cost `<P, C>` over the pairs.
    pub distance: f64,
    /// Mean entropic objective, the quantity whose gradient training follows.
    pub regularized: f64,
    pub results: Vec<SinkhornResult>,
}

pub fn ot_loss(
    thetas: &[SimplexVector],
    lambdas: &[SimplexVector],
    cost: &CostMatrix,
    config: &SinkhornConfig,
) -> Result<OtLoss> {
    if thetas.is_empty() || thetas.len() != lambdas.len() {
        return Err(Error::domain(format!(
            "OT loss needs matching non-empty batches, got {} and {}",
            thetas.len(),
            lambdas.len()
        )));
    }
    let results = thetas
        .iter()
        .zip(lambdas)
        .map(|(t, l)| sinkhorn_distance(t, l, cost.view(), config))
        .collect::<Result<Vec<_>>>()?;
    let n = results.len() as f64;
    Ok(OtLoss {
        distance: results.iter().map(|r| r.distance).sum::<f64>() / n,
        regularized: results.iter().map(|r| r.regularized).sum::<f64>() / n,
        results,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Bandwidth {
    /// Median pairwise distance over the pooled inferred and prior samples.
    Median,
    Fixed(f64),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Hyper {
    pub tau: f64,
    pub delta: f64,
    pub eta: f64,
    pub zeta: f64,
    /// Symmetric Dirichlet concentration.
    pub alpha: f64,
    pub bandwidth: Bandwidth,
    pub sinkhorn: SinkhornConfig,
}

impl Hyper {
    pub fn defaults_for(k: usize) -> Self {
        Hyper {
            tau: 0.05,
            delta: 0.6,
            eta: 1.0,
            zeta: 1.0,
            alpha: 1.0 / k as f64,
            bandwidth: Bandwidth::Median,
            sinkhorn: SinkhornConfig::default(),
        }
    }
}

/// Everything about a batch that does not depend on the topic matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchContext {
    /// `2M x H` goal-pooled representations, rows `[a_1..a_M, b_1..b_M]`.
    pub goal_pooled: Array2<f64>,
    /// `2M x H` mean-pooled representations in the same order.
    pub mean_pooled: Array2<f64>,
    pub lambdas: Vec<SimplexVector>,
    pub mask: Array2<bool>,
}

impl BatchContext {
    pub fn new(goal_pooled: Array2<f64>, mean_pooled: Array2<f64>, goals: &GoalMatrix, delta: f64) -> Result<Self> {
        let n = goal_pooled.nrows();
        if n < 2 || !n.is_multiple_of(2) || mean_pooled.nrows() != n {
            return Err(Error::domain(format!(
                "batch needs 2M >= 2 matching rows, got {} goal-pooled and {} mean-pooled",
                n,
                mean_pooled.nrows()
            )));
        }
        let lambdas = goal_pooled
            .rows()
            .into_iter()
            .map(|h| infer_lambda(h, goals))
            .collect::<Result<Vec<_>>>()?;
        let views: Vec<_> = mean_pooled.rows().into_iter().collect();
        let mask = negative_mask(&views, delta)?;
        Ok(BatchContext {
            goal_pooled,
            mean_pooled,
            lambdas,
            mask,
        })
    }

    /// Number of documents `M`.
    pub fn m(&self) -> usize {
        self.goal_pooled.nrows() / 2
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LossBreakdown {
    pub contrastive: f64,
    pub prior_match: f64,
    /// Mean entropic OT objective.
    pub ot: f64,
    /// Mean transport cost `<P, C>`, reported alongside `ot`.
    pub transport_cost: f64,
    pub total: f64,
    pub grad_et: Array2<f64>,
    pub grad_contrastive: Array2<f64>,
    pub grad_prior_match: Array2<f64>,
    pub grad_ot: Array2<f64>,
    pub bandwidth: f64,
}

/// `theta` for every row of `h`, plus the cosines they came from.
fn infer_all(h: ArrayView2<'_, f64>, topics: &TopicMatrix) -> Result<(Array2<f64>, Array2<f64>)> {
    let mut z = Array2::<f64>::zeros((h.nrows(), topics.k()));
    for (p, row) in h.rows().into_iter().enumerate() {
        z.row_mut(p).assign(&cosines(row, topics.values.view())?);
    }
    let mut theta = Array2::<f64>::zeros(z.dim());
    for p in 0..z.nrows() {
        theta.row_mut(p).assign(&softmax_unchecked(z.row(p)));
    }
    Ok((z, theta))
}

/// Pulls `dL/dtheta` back through the softmax and the cosines to `E_t`.
fn backprop_theta(
    dtheta: ArrayView2<'_, f64>,
    theta: ArrayView2<'_, f64>,
    z: ArrayView2<'_, f64>,
    h: ArrayView2<'_, f64>,
    topics: &TopicMatrix,
) -> Array2<f64> {
    let e = &topics.values;
    let norms: Vec<f64> = e.rows().into_iter().map(norm).collect();
    let mut grad = Array2::<f64>::zeros(e.dim());
    for p in 0..theta.nrows() {
        let inner = theta.row(p).dot(&dtheta.row(p));
        let h_hat = &h.row(p) / norm(h.row(p));
        for k in 0..e.nrows() {
            let dz = theta[[p, k]] * (dtheta[[p, k]] - inner);
            if dz == 0.0 {
                continue;
            }
            let e_hat = &e.row(k) / norms[k];
            let dcos = (&h_hat - &(e_hat * z[[p, k]])) / norms[k];
            grad.row_mut(k).scaled_add(dz, &dcos);
        }
    }
    grad
}

/// Pulls `dL/dC` back through `C_kj = 1 - cos(e_t^k, e_g^j)`.
fn backprop_cost(dcost: ArrayView2<'_, f64>, topics: &TopicMatrix, goals: &GoalMatrix) -> Array2<f64> {
    let e = &topics.values;
    let mut grad = Array2::<f64>::zeros(e.dim());
    for k in 0..e.nrows() {
        let ne = norm(e.row(k));
        let e_hat = &e.row(k) / ne;
        for j in 0..goals.k() {
            let g = goals.centroids.row(j);
            let g_hat = &g / norm(g);
            let c = e_hat.dot(&g_hat);
            let dcos = (&g_hat - &(&e_hat * c)) / ne;
            grad.row_mut(k).scaled_add(-dcost[[k, j]], &dcos);
        }
    }
    grad
}

/// Loss terms and gradients with the prior samples and kernel bandwidth fixed.
pub fn evaluate_loss(
    topics: &TopicMatrix,
    goals: &GoalMatrix,
    batch: &BatchContext,
    hyper: &Hyper,
    priors: &[SimplexVector],
    bandwidth: f64,
) -> Result<LossBreakdown> {
    let n = batch.goal_pooled.nrows();
    let (z, theta) = infer_all(batch.goal_pooled.view(), topics)?;
    let h = batch.goal_pooled.view();

    let (lc, dtheta_c) = contrastive_value_grad(theta.view(), &batch.mask, hyper.tau)?;
    let grad_contrastive = backprop_theta(dtheta_c.view(), theta.view(), z.view(), h, topics);

    let prior_rows = stack(priors)?;
    let (lpm, dtheta_pm) = mmd_value_grad(theta.view(), prior_rows.view(), bandwidth)?;
    let grad_prior_match = backprop_theta(dtheta_pm.view(), theta.view(), z.view(), h, topics);

    let cost = cost_matrix(topics, goals)?;
    let theta_vecs: Vec<SimplexVector> = theta
        .rows()
        .into_iter()
        .map(|r| SimplexVector::from_array_unchecked(r.to_owned()))
        .collect();
    let ot = ot_loss(&theta_vecs, &batch.lambdas, &cost, &hyper.sinkhorn)?;
    let mut dtheta_ot = Array2::<f64>::zeros(theta.dim());
    let mut dcost = Array2::<f64>::zeros(cost.as_array().dim());
    for (p, r) in ot.results.iter().enumerate() {
        dtheta_ot.row_mut(p).assign(&(&r.dual_row / n as f64));
        dcost.scaled_add(1.0 / n as f64, &r.plan.values);
    }
    let grad_ot = backprop_theta(dtheta_ot.view(), theta.view(), z.view(), h, topics)
        + backprop_cost(dcost.view(), topics, goals);

    let total = lc + hyper.eta * lpm + hyper.zeta * ot.regularized;
    if !total.is_finite() {
        return Err(Error::NonFinite(format!(
            "loss is not finite: contrastive={lc} prior_match={lpm} ot={}",
            ot.regularized
        )));
    }
    let mut grad_et = grad_contrastive.clone();
    grad_et.scaled_add(hyper.eta, &grad_prior_match);
    grad_et.scaled_add(hyper.zeta, &grad_ot);
    Ok(LossBreakdown {
        contrastive: lc,
        prior_match: lpm,
        ot: ot.regularized,
        transport_cost: ot.distance,
        total,
        grad_et,
        grad_contrastive,
        grad_prior_match,
        grad_ot,
        bandwidth,
    })
}

/// Draws `2M` samples from the symmetric Dirichlet prior.
pub fn draw_priors<R: Rng + ?Sized>(n: usize, k: usize, alpha: f64, rng: &mut R) -> Result<Vec<SimplexVector>> {
    let conc = vec![alpha; k];
    (0..n).map(|_| sample_dirichlet(&conc, rng)).collect()
}

/// Kernel bandwidth for a batch under `hyper.bandwidth`.
pub fn batch_bandwidth(thetas: ArrayView2<'_, f64>, priors: &[SimplexVector], bandwidth: Bandwidth) -> f64 {
    match bandwidth {
        Bandwidth::Fixed(g) => g,
        Bandwidth::Median => {
            let mut pts: Vec<ArrayView1<'_, f64>> = thetas.rows().into_iter().collect();
            pts.extend(priors.iter().map(|p| p.view()));
            median_bandwidth(&pts)
        }
    }
}

/// Total objective and its gradient, with fresh prior samples from `rng`.
pub fn total_loss_and_grad<R: Rng + ?Sized>(
    topics: &TopicMatrix,
    goals: &GoalMatrix,
    batch: &BatchContext,
    hyper: &Hyper,
    rng: &mut R,
) -> Result<LossBreakdown> {
    let n = batch.goal_pooled.nrows();
    let priors = draw_priors(n, topics.k(), hyper.alpha, rng)?;
    let (_, theta) = infer_all(batch.goal_pooled.view(), topics)?;
    let gamma = batch_bandwidth(theta.view(), &priors, hyper.bandwidth);
    evaluate_loss(topics, goals, batch, hyper, &priors, gamma)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numeric::{exact_ot_small, finite_diff_grad, max_relative_error};
    use ndarray::array;

    fn sv(v: &[f64]) -> SimplexVector {
        SimplexVector::from_vec(v.to_vec()).unwrap()
    }

    fn goals_from(c: Array2<f64>) -> GoalMatrix {
        let k = c.nrows();
        GoalMatrix::new(c, (0..k).collect(), (0..k).map(|i| format!("g{i}")).collect()).unwrap()
    }

    #[test]
    fn alignment_permutes_rows_onto_matching_clusters() {
        let goals = goals_from(array![[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]]);
        let topics = TopicMatrix::from_array(array![[0.1, 0.0, 2.0], [0.9, 0.2, 0.0], [0.0, 1.0, 0.1]]).unwrap();
        let aligned = align_topics_to_goals(&topics, &goals).unwrap();
        assert_eq!(
            aligned.values(),
            &array![[0.9, 0.2, 0.0], [0.0, 1.0, 0.1], [0.1, 0.0, 2.0]]
        );
        let again = align_topics_to_goals(&aligned, &goals).unwrap();
        assert_eq!(again.values(), aligned.values());
    }

    #[test]
    fn theta_examples() {
        let t = TopicMatrix::from_array(array![[1.0, 0.0], [0.0, 1.0]]).unwrap();
        let th = infer_theta(array![1.0, 0.0].view(), &t).unwrap();
        assert!((th.as_array()[0] - 0.7310585786300049).abs() < 1e-12);
        assert!((th.as_array()[1] - 0.2689414213699951).abs() < 1e-12);
        let same = TopicMatrix::from_array(array![[0.3, 0.4], [0.3, 0.4], [0.3, 0.4]]).unwrap();
        let u = infer_theta(array![-1.0, 2.0].view(), &same).unwrap();
        assert!(u.as_array().iter().all(|&x| (x - 1.0 / 3.0).abs() < 1e-15));
        assert!(infer_theta(array![0.0, 0.0].view(), &t).is_err());
        let g = goals_from(array![[1.0, 0.0], [0.0, 1.0]]);
        let l = infer_lambda(array![1.0, 0.0].view(), &g).unwrap();
        assert_eq!(l, th);
    }

    #[test]
    fn theta_scale_invariance_is_exact_for_powers_of_two() {
        let t = TopicMatrix::random(4, 6, 3).unwrap();
        let h = array![0.3, -0.2, 0.9, 0.1, 0.0, -0.5];
        let a = infer_theta(h.view(), &t).unwrap();
        let b = infer_theta((&h * 4.0).view(), &t).unwrap();
        assert_eq!(a, b);
        let scaled = TopicMatrix::from_array(t.values() * 0.5).unwrap();
        assert_eq!(infer_theta(h.view(), &scaled).unwrap(), a);
    }

    #[test]
    fn cost_examples() {
        let t = TopicMatrix::from_array(array![[1.0, 0.0], [0.0, 2.0]]).unwrap();
        let g = goals_from(array![[3.0, 0.0], [0.0, -1.0]]);
        let c = cost_matrix(&t, &g).unwrap();
        assert_eq!(c.as_array(), &array![[0.0, 1.0], [1.0, 2.0]]);
    }

    #[test]
    fn mask_examples() {
        let rows = [array![1.0, 0.0], array![0.0, 1.0], array![1.0, 0.1], array![0.1, 1.0]];
        let views: Vec<_> = rows.iter().map(|r| r.view()).collect();
        let m = negative_mask(&views, 0.6).unwrap();
        for p in 0..4 {
            assert!(!m[[p, p]]);
            assert!(!m[[p, (p + 2) % 4]]);
        }
        // rows 0 and 1 are orthogonal; rows 0 and 3 have cosine ~0.0995
        assert!(m[[0, 1]] && m[[1, 0]] && m[[0, 3]]);
        let one = negative_mask(&views[..2], 0.6).unwrap();
        assert!(one.iter().all(|&x| !x));

        let a = array![1.0, 0.0];
        let b = array![0.7, 0.51f64.sqrt()]; // cos = 0.7
        let c = array![0.5, 0.75f64.sqrt()]; // cos = 0.5
        let pair = |x: &Array1<f64>| {
            let v = [a.view(), x.view(), a.view(), x.view()];
            negative_mask(&v, 0.6).unwrap()[[0, 1]]
        };
        assert!(!pair(&b));
        assert!(pair(&c));
    }

    /// Direct transcription with separate a/b indices.
    fn contrastive_oracle(a: &[SimplexVector], b: &[SimplexVector], mask: &Array2<bool>, tau: f64) -> f64 {
        let m = a.len();
        let s = |x: &SimplexVector, y: &SimplexVector| {
            let (x, y) = (x.as_array(), y.as_array());
            x.dot(y) / (x.dot(x).sqrt() * y.dot(y).sqrt())
        };
        let mut sum = 0.0;
        for (side, (mine, other)) in [(a, b), (b, a)].into_iter().enumerate() {
            for i in 0..m {
                let p = side * m + i;
                let delta = (s(&mine[i], &other[i]) / tau).exp();
                let mut denom = delta;
                for j in 0..m {
                    let same_q = side * m + j;
                    let other_q = (1 - side) * m + j;
                    if mask[[p, same_q]] {
                        denom += (s(&mine[i], &mine[j]) / tau).exp();
                    }
                    if mask[[p, other_q]] {
                        denom += (s(&mine[i], &other[j]) / tau).exp();
                    }
                }
                sum += -(delta / denom).ln();
            }
        }
        sum / (2 * m) as f64
    }

    #[test]
    fn contrastive_single_pair_is_zero() {
        let th = vec![sv(&[0.2, 0.8]), sv(&[0.6, 0.4])];
        let mask = Array2::from_elem((2, 2), false);
        assert_eq!(contrastive_loss(&th, &mask, 0.05).unwrap(), 0.0);
    }

    #[test]
    fn contrastive_all_false_mask_is_zero() {
        let th: Vec<_> = [[0.1, 0.9], [0.5, 0.5], [0.3, 0.7], [0.8, 0.2], [0.6, 0.4], [0.25, 0.75]]
            .iter()
            .map(|v| sv(v))
            .collect();
        let mask = Array2::from_elem((6, 6), false);
        assert_eq!(contrastive_loss(&th, &mask, 0.05).unwrap(), 0.0);
    }

    #[test]
    fn contrastive_matches_double_loop() {
        let a = vec![sv(&[0.7, 0.2, 0.1]), sv(&[0.1, 0.3, 0.6])];
        let b = vec![sv(&[0.6, 0.3, 0.1]), sv(&[0.2, 0.2, 0.6])];
        let mut mask = Array2::from_elem((4, 4), true);
        for p in 0..4 {
            mask[[p, p]] = false;
            mask[[p, (p + 2) % 4]] = false;
        }
        let all: Vec<_> = a.iter().chain(&b).cloned().collect();
        let got = contrastive_loss(&all, &mask, 0.05).unwrap();
        let want = contrastive_oracle(&a, &b, &mask, 0.05);
        assert!((got - want).abs() < 1e-12, "{got} vs {want}");
        assert!(got > 0.0);
        let full = Array2::from_elem((4, 4), true);
        assert_eq!(contrastive_loss(&all, &full, 0.05).unwrap(), got);
    }

    #[test]
    fn mmd_single_pair_explicit() {
        let t = vec![sv(&[0.9, 0.1]), sv(&[0.2, 0.8])];
        let p = vec![sv(&[0.5, 0.5]), sv(&[0.0, 1.0])];
        let gamma = 0.7;
        let k = |x: &SimplexVector, y: &SimplexVector| {
            let d = x.as_array() - y.as_array();
            (-d.dot(&d) / (2.0 * gamma * gamma)).exp()
        };
        // A = 2, 1/(2M^2) = 1/2
        let want = (2.0 * k(&t[0], &t[1]) + 2.0 * k(&p[0], &p[1])) / 2.0
            - 0.5 * (k(&t[0], &p[0]) + k(&t[0], &p[1]) + k(&t[1], &p[0]) + k(&t[1], &p[1]));
        let got = mmd_loss(&t, &p, gamma).unwrap();
        assert!((got - want).abs() < 1e-15);
    }

    #[test]
    fn mmd_point_masses_versus_dirichlet_is_positive() {
        let t = vec![sv(&[1.0, 0.0, 0.0]), sv(&[1.0, 0.0, 0.0]), sv(&[0.0, 0.0, 1.0]), sv(&[0.0, 0.0, 1.0])];
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let p = draw_priors(4, 3, 1.0, &mut rng).unwrap();
        assert!(mmd_loss(&t, &p, 0.5).unwrap() > 0.0);
        assert!(mmd_loss(&t[..1], &p[..1], 0.5).is_err());
    }

    #[test]
    fn mmd_symmetric_under_joint_permutation() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let t = draw_priors(6, 4, 0.5, &mut rng).unwrap();
        let p = draw_priors(6, 4, 0.5, &mut rng).unwrap();
        let order = [3, 0, 5, 1, 4, 2];
        let tp: Vec<_> = order.iter().map(|&i| t[i].clone()).collect();
        let pp: Vec<_> = order.iter().map(|&i| p[i].clone()).collect();
        let a = mmd_loss(&t, &p, 0.4).unwrap();
        let b = mmd_loss(&tp, &pp, 0.4).unwrap();
        assert!((a - b).abs() < 1e-14);
    }

    #[test]
    fn ot_examples() {
        let cost = CostMatrix::new(array![[0.0, 1.0], [1.0, 0.0]]).unwrap();
        let th = vec![sv(&[0.7, 0.3]), sv(&[0.5, 0.5])];
        let fine = SinkhornConfig {
            epsilon: 1e-3,
            max_iter: 100_000,
            tol: 1e-9,
        };
        let same = ot_loss(&th, &th, &cost, &fine).unwrap();
        assert!(same.distance.abs() < 1e-3);

        let one = ot_loss(&th[..1], &[sv(&[0.4, 0.6])], &cost, &fine).unwrap();
        assert!((one.distance - 0.3).abs() < 5e-3);

        let doubled = CostMatrix::new(array![[0.0, 2.0], [2.0, 0.0]]).unwrap();
        let two = ot_loss(&th[..1], &[sv(&[0.4, 0.6])], &doubled, &fine).unwrap();
        let exact = exact_ot_small(&th[0], &sv(&[0.4, 0.6]), doubled.view()).unwrap();
        assert!((two.distance - exact).abs() < 5e-3);
        assert!((two.distance - 2.0 * one.distance).abs() < 1e-2);
    }

    fn random_instance(seed: u64, k: usize, h: usize, m: usize) -> (TopicMatrix, GoalMatrix, BatchContext, Vec<SimplexVector>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let topics = TopicMatrix::random(k, h, seed ^ 0xabc).unwrap();
        let gm: Array2<f64> = Array2::from_shape_fn((k, h), |_| rng.sample(StandardNormal));
        let goals = goals_from(gm);
        let gp: Array2<f64> = Array2::from_shape_fn((2 * m, h), |_| rng.sample(StandardNormal));
        let mp: Array2<f64> = Array2::from_shape_fn((2 * m, h), |_| rng.sample(StandardNormal));
        let batch = BatchContext::new(gp, mp, &goals, 0.6).unwrap();
        let priors = draw_priors(2 * m, k, 1.0 / k as f64, &mut rng).unwrap();
        (topics, goals, batch, priors)
    }

    fn gradcheck_hyper(k: usize) -> Hyper {
        Hyper {
            sinkhorn: SinkhornConfig {
                epsilon: 0.05,
                max_iter: 100_000,
                tol: 1e-9,
            },
            ..Hyper::defaults_for(k)
        }
    }

    #[test]
    fn analytic_gradient_matches_finite_differences() {
        for seed in 0..3 {
            let (topics, goals, batch, priors) = random_instance(seed, 4, 8, 2);
            let hyper = gradcheck_hyper(4);
            let gamma = 0.3;
            let lb = evaluate_loss(&topics, &goals, &batch, &hyper, &priors, gamma).unwrap();
            let shape = topics.values().dim();
            let at = |x: &[f64]| {
                let t = TopicMatrix::from_array(Array2::from_shape_vec(shape, x.to_vec()).unwrap()).unwrap();
                evaluate_loss(&t, &goals, &batch, &hyper, &priors, gamma).unwrap()
            };
            let x0 = topics.values().as_slice().unwrap().to_vec();
            let cases: [(fn(&LossBreakdown) -> f64, &Array2<f64>); 4] = [
                (|l| l.contrastive, &lb.grad_contrastive),
                (|l| l.prior_match, &lb.grad_prior_match),
                (|l| l.ot, &lb.grad_ot),
                (|l| l.total, &lb.grad_et),
            ];
            for (term, analytic) in cases {
                let numeric = finite_diff_grad(|x| term(&at(x)), &x0, 1e-4);
                let err = max_relative_error(analytic.as_slice().unwrap(), &numeric, 1e-6);
                assert!(err <= 1e-4, "seed {seed}: relative error {err}");
            }
        }
    }

    #[test]
    fn total_recomposes() {
        let (topics, goals, batch, _) = random_instance(11, 3, 5, 3);
        let mut hyper = Hyper::defaults_for(3);
        hyper.eta = 0.7;
        hyper.zeta = 1.3;
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let lb = total_loss_and_grad(&topics, &goals, &batch, &hyper, &mut rng).unwrap();
        let recomposed = lb.contrastive + 0.7 * lb.prior_match + 1.3 * lb.ot;
        assert!((lb.total - recomposed).abs() <= 1e-8);
    }

    #[test]
    fn contrastive_only_when_other_weights_vanish() {
        let (topics, goals, batch, priors) = random_instance(5, 4, 8, 2);
        let hyper = Hyper {
            eta: 0.0,
            zeta: 0.0,
            ..gradcheck_hyper(4)
        };
        let lb = evaluate_loss(&topics, &goals, &batch, &hyper, &priors, 0.3).unwrap();
        assert_eq!(lb.total, lb.contrastive);
        assert_eq!(lb.grad_et, lb.grad_contrastive);

        let (topics, goals, batch, priors) = random_instance(6, 4, 8, 1);
        let lb = evaluate_loss(&topics, &goals, &batch, &hyper, &priors, 0.3).unwrap();
        assert_eq!(lb.total, 0.0);
        assert!(lb.grad_et.iter().all(|&g| g == 0.0));
    }

    #[test]
    fn goal_matrix_rejects_empty_clusters() {
        let c = array![[1.0, 0.0], [0.0, 1.0]];
        assert!(GoalMatrix::new(c.clone(), vec![0, 0], vec!["a".into(), "b".into()]).is_err());
        assert!(GoalMatrix::new(c.clone(), vec![0, 2], vec!["a".into(), "b".into()]).is_err());
        assert!(GoalMatrix::new(c, vec![0], vec!["a".into(), "b".into()]).is_err());
        let embs = array![[1.0, 0.0], [3.0, 0.0], [0.0, 1.0]];
        let g = GoalMatrix::from_clusters(embs.view(), vec![0, 0, 1], vec!["a".into(), "b".into(), "c".into()], 2)
            .unwrap();
        assert_eq!(g.centroids(), &array![[2.0, 0.0], [0.0, 1.0]]);
        assert_eq!(g.members(0), vec!["a", "b"]);
    }
}
