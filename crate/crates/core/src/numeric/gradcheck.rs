/// Central-difference gradient `(f(x + h e_i) - f(x - h e_i)) / 2h`.
pub fn finite_diff_grad(mut f: impl FnMut(&[f64]) -> f64, x: &[f64], h: f64) -> Vec<f64> {
    let mut probe = x.to_vec();
    (0..x.len())
        .map(|i| {
            probe[i] = x[i] + h;
            let up = f(&probe);
            probe[i] = x[i] - h;
            let down = f(&probe);
            probe[i] = x[i];
            (up - down) / (2.0 * h)
        })
        .collect()
}

/// Largest componentwise `|a - b| / max(|a|, |b|, floor)`.
pub fn max_relative_error(analytic: &[f64], numeric: &[f64], floor: f64) -> f64 {
    assert_eq!(analytic.len(), numeric.len());
    analytic
        .iter()
        .zip(numeric)
        .map(|(a, b)| (a - b).abs() / a.abs().max(b.abs()).max(floor))
        .fold(0.0, f64::max)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn squared_norm() {
        let g = finite_diff_grad(|x| x.iter().map(|v| v * v).sum(), &[1.0, 2.0], 1e-4);
        assert!((g[0] - 2.0).abs() < 1e-8);
        assert!((g[1] - 4.0).abs() < 1e-8);
    }

    #[test]
    fn constant_and_linear() {
        assert_eq!(finite_diff_grad(|_| 7.0, &[0.3, -1.0], 1e-3), vec![0.0, 0.0]);
        let g = finite_diff_grad(|x| 3.0 * x[0], &[0.5, 2.0], 1e-4);
        assert!((g[0] - 3.0).abs() < 1e-9);
        assert_eq!(g[1], 0.0);
    }

    #[test]
    fn relative_error_uses_floor() {
        assert_eq!(max_relative_error(&[1.0, 0.0], &[1.0, 1e-12], 1e-6), 1e-6);
        assert!((max_relative_error(&[2.0], &[1.0], 1e-6) - 0.5).abs() < 1e-15);
    }
}
