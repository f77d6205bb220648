use ndarray::{Array2, ArrayView2, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::squared_distance;
use crate::error::{Error, Result};

pub const MAX_LLOYD_ITERS: usize = 100;

#[derive(Debug, Clone, PartialEq)]
pub struct KMeansResult {
    pub assignments: Vec<usize>,
    /// `k x H`, row `c` is the mean of the points assigned to cluster `c`.
    pub centroids: Array2<f64>,
    pub iterations: usize,
    /// Sum of squared distances to the assigned centroid, after each iteration.
    pub objective_history: Vec<f64>,
}

impl KMeansResult {
    pub fn objective(&self) -> f64 {
        self.objective_history.last().copied().unwrap_or(0.0)
    }

    pub fn members(&self, cluster: usize) -> impl Iterator<Item = usize> + '_ {
        self.assignments
            .iter()
            .enumerate()
            .filter(move |(_, &c)| c == cluster)
            .map(|(i, _)| i)
    }
}

/// Lloyd's algorithm from a seeded k-means++ initialization.
///
/// Stops at an assignment fixpoint or after [`MAX_LLOYD_ITERS`] iterations.
/// A cluster that ends up empty takes over the point lying farthest from its
/// current centroid.
pub fn kmeans(points: ArrayView2<'_, f64>, k: usize, seed: u64) -> Result<KMeansResult> {
    let n = points.nrows();
    if k == 0 {
        return Err(Error::domain("k-means needs k >= 1"));
    }
    if n < k {
        return Err(Error::domain(format!("k-means with k={k} needs at least {k} points, got {n}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut centroids = plus_plus_init(points, k, &mut rng);
    let mut assignments: Vec<usize> = Vec::new();
    let mut history = Vec::new();
    let mut iterations = 0;

    while iterations < MAX_LLOYD_ITERS {
        iterations += 1;
        let mut next: Vec<usize> = (0..n).map(|i| nearest(points.row(i), &centroids).0).collect();
        reseed_empty(points, &centroids, &mut next, k);
        centroids = means(points, &next, k);
        history.push(objective(points, &centroids, &next));
        if next == assignments {
            break;
        }
        assignments = next;
    }

    Ok(KMeansResult {
        assignments,
        centroids,
        iterations,
        objective_history: history,
    })
}

fn plus_plus_init(points: ArrayView2<'_, f64>, k: usize, rng: &mut ChaCha8Rng) -> Array2<f64> {
    let n = points.nrows();
    let mut chosen = vec![rng.random_range(0..n)];
    let mut d2: Vec<f64> = (0..n)
        .map(|i| squared_distance(points.row(i), points.row(chosen[0])))
        .collect();
    while chosen.len() < k {
        let total: f64 = d2.iter().sum();
        let next = if total > 0.0 {
            let mut target = rng.random::<f64>() * total;
            let mut pick = n - 1;
            for (i, &d) in d2.iter().enumerate() {
                if target < d {
                    pick = i;
                    break;
                }
                target -= d;
            }
            pick
        } else {
            rng.random_range(0..n)
        };
        chosen.push(next);
        for (i, d) in d2.iter_mut().enumerate() {
            *d = d.min(squared_distance(points.row(i), points.row(next)));
        }
    }
    let mut centroids = Array2::zeros((k, points.ncols()));
    for (c, &i) in chosen.iter().enumerate() {
        centroids.row_mut(c).assign(&points.row(i));
    }
    centroids
}

/// Index and squared distance of the closest centroid; ties go to the lower index.
fn nearest(p: ndarray::ArrayView1<'_, f64>, centroids: &Array2<f64>) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (c, row) in centroids.axis_iter(Axis(0)).enumerate() {
        let d = squared_distance(p, row);
        if d < best.1 {
            best = (c, d);
        }
    }
    best
}

fn reseed_empty(points: ArrayView2<'_, f64>, centroids: &Array2<f64>, assign: &mut [usize], k: usize) {
    loop {
        let mut sizes = vec![0usize; k];
        for &a in assign.iter() {
            sizes[a] += 1;
        }
        let Some(empty) = sizes.iter().position(|&s| s == 0) else {
            return;
        };
        // Only points whose cluster keeps at least one other member can move.
        let far = (0..points.nrows())
            .filter(|&i| sizes[assign[i]] > 1)
            .map(|i| (i, squared_distance(points.row(i), centroids.row(assign[i]))))
            .fold(None::<(usize, f64)>, |best, (i, d)| match best {
                Some((_, bd)) if bd >= d => best,
                _ => Some((i, d)),
            });
        match far {
            Some((i, _)) => assign[i] = empty,
            None => return,
        }
    }
}

fn means(points: ArrayView2<'_, f64>, assign: &[usize], k: usize) -> Array2<f64> {
    let mut sums = Array2::<f64>::zeros((k, points.ncols()));
    let mut counts = vec![0usize; k];
    for (i, &c) in assign.iter().enumerate() {
        let mut row = sums.row_mut(c);
        row += &points.row(i);
        counts[c] += 1;
    }
    for (c, &count) in counts.iter().enumerate() {
        if count > 0 {
            sums.row_mut(c).mapv_inplace(|x| x / count as f64);
        }
    }
    sums
}

fn objective(points: ArrayView2<'_, f64>, centroids: &Array2<f64>, assign: &[usize]) -> f64 {
    assign
        .iter()
        .enumerate()
        .map(|(i, &c)| squared_distance(points.row(i), centroids.row(c)))
        .sum()
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use proptest::prelude::*;

    #[test]
    fn k_equals_n_gives_singletons() {
        let pts = array![[0.0, 0.0], [1.0, 0.0], [0.0, 5.0]];
        let r = kmeans(pts.view(), 3, 1).unwrap();
        let mut rows: Vec<Vec<f64>> = r.centroids.rows().into_iter().map(|r| r.to_vec()).collect();
        rows.sort_by(|a, b| a.partial_cmp(b).unwrap());
        assert_eq!(rows, vec![vec![0.0, 0.0], vec![0.0, 5.0], vec![1.0, 0.0]]);
        assert_eq!(r.objective(), 0.0);
    }

    #[test]
    fn two_tight_groups() {
        let pts = array![
            [0.0, 0.0],
            [0.2, 0.0],
            [0.1, 0.3],
            [10.0, 10.0],
            [10.4, 10.0],
            [10.2, 10.6]
        ];
        let r = kmeans(pts.view(), 2, 42).unwrap();
        let left = r.assignments[0];
        assert_eq!(&r.assignments[..3], &[left; 3]);
        assert_eq!(&r.assignments[3..], &[1 - left; 3]);
        let expect_left = array![0.1, 0.1];
        let expect_right = array![10.2, 10.2];
        for (got, want) in [(left, &expect_left), (1 - left, &expect_right)] {
            for (a, b) in r.centroids.row(got).iter().zip(want.iter()) {
                assert!((a - b).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn identical_points_reseed() {
        let pts = array![[1.0, 2.0], [1.0, 2.0], [1.0, 2.0]];
        let r = kmeans(pts.view(), 2, 5).unwrap();
        for row in r.centroids.rows() {
            assert_eq!(row.to_vec(), vec![1.0, 2.0]);
        }
        assert!(r.members(0).count() >= 1 && r.members(1).count() >= 1);
    }

    #[test]
    fn too_few_points() {
        let pts = array![[1.0, 2.0]];
        assert!(matches!(kmeans(pts.view(), 2, 0), Err(Error::Domain(_))));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]
        #[test]
        fn objective_non_increasing(
            data in proptest::collection::vec(-5.0f64..5.0, 2 * 30),
            k in 1usize..6,
            seed in any::<u64>(),
        ) {
            let pts = Array2::from_shape_vec((30, 2), data).unwrap();
            let r = kmeans(pts.view(), k, seed).unwrap();
            for w in r.objective_history.windows(2) {
                prop_assert!(w[1] <= w[0] + 1e-9);
            }
            for c in 0..k {
                prop_assert!(r.members(c).count() > 0);
            }
        }
    }
}
