//! Quadrature on (possibly non-uniform) sample grids.

/// Composite trapezoid rule.
pub fn trapezoid(grid: &[f64], values: &[f64]) -> f64 {
    assert_eq!(grid.len(), values.len());
    grid.windows(2)
        .zip(values.windows(2))
        .map(|(t, f)| 0.5 * (t[1] - t[0]) * (f[0] + f[1]))
        .sum()
}

/// Composite Simpson rule over consecutive interval pairs. Exact for
/// quadratics on non-uniform grids. Needs an odd number of points.
pub fn simpson(grid: &[f64], values: &[f64]) -> f64 {
    assert_eq!(grid.len(), values.len());
    assert!(
        grid.len() >= 3 && grid.len() % 2 == 1,
        "simpson needs an odd point count"
    );
    let mut acc = 0.0;
    for k in (0..grid.len() - 2).step_by(2) {
        let h0 = grid[k + 1] - grid[k];
        let h1 = grid[k + 2] - grid[k + 1];
        let (f0, f1, f2) = (values[k], values[k + 1], values[k + 2]);
        acc += (h0 + h1) / 6.0
            * ((2.0 - h1 / h0) * f0 + (h0 + h1).powi(2) / (h0 * h1) * f1 + (2.0 - h0 / h1) * f2);
    }
    acc
}

/// Simpson on odd grids, trapezoid otherwise.
pub fn integrate(grid: &[f64], values: &[f64]) -> f64 {
    if grid.len() >= 3 && grid.len() % 2 == 1 {
        simpson(grid, values)
    } else {
        trapezoid(grid, values)
    }
}

pub fn uniform_grid(t0: f64, t1: f64, points: usize) -> Vec<f64> {
    assert!(points >= 2);
    let h = (t1 - t0) / (points - 1) as f64;
    (0..points)
        .map(|k| {
            if k == points - 1 {
                t1
            } else {
                t0 + k as f64 * h
            }
        })
        .collect()
}
