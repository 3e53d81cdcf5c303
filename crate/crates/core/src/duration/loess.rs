use crate::error::{Error, Result};

pub const DEFAULT_SPAN: f64 = 0.75;
pub const DEFAULT_DEGREE: usize = 1;

fn tricube(r: f64) -> f64 {
    if r >= 1.0 {
        0.0
    } else {
        let a = 1.0 - r * r * r;
        a * a * a
    }
}

/// Local polynomial fit of `degree` at `x0` using the `q` nearest points.
/// Returns `None` when the weighted design is singular.
fn local_fit(xs: &[f64], ys: &[f64], x0: f64, q: usize, span: f64, degree: usize) -> Option<f64> {
    let dist: Vec<f64> = xs.iter().map(|x| (x - x0).abs()).collect();
    let mut sorted = dist.clone();
    sorted.sort_by(f64::total_cmp);
    let mut h = sorted[q - 1];
    if span > 1.0 {
        h *= span;
    }
    if h <= 0.0 {
        return None;
    }
    // normal equations in the scaled offset z = (x - x0) / h
    let p = degree + 1;
    let mut a = [[0.0f64; 4]; 3];
    for ((&x, &y), &d) in xs.iter().zip(ys).zip(&dist) {
        let w = tricube(d / h);
        if w == 0.0 {
            continue;
        }
        let z = (x - x0) / h;
        let mut powers = [1.0; 5];
        for j in 1..5 {
            powers[j] = powers[j - 1] * z;
        }
        for r in 0..p {
            for c in 0..p {
                a[r][c] += w * powers[r + c];
            }
            a[r][p] += w * y * powers[r];
        }
    }
    solve_intercept(&mut a, p)
}

/// Gaussian elimination with partial pivoting on the `p x (p+1)` augmented
/// system; returns the first unknown.
fn solve_intercept(a: &mut [[f64; 4]; 3], p: usize) -> Option<f64> {
    let scale = (0..p).map(|i| a[i][i].abs()).fold(0.0, f64::max);
    if scale <= 0.0 {
        return None;
    }
    for col in 0..p {
        let pivot = (col..p).max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs()))?;
        if a[pivot][col].abs() <= 1e-10 * scale {
            return None;
        }
        a.swap(col, pivot);
        for row in col + 1..p {
            let f = a[row][col] / a[col][col];
            for c in col..=p {
                a[row][c] -= f * a[col][c];
            }
        }
    }
    let mut solution = [0.0; 3];
    for row in (0..p).rev() {
        let tail: f64 = (row + 1..p).map(|c| a[row][c] * solution[c]).sum();
        solution[row] = (a[row][p] - tail) / a[row][row];
    }
    Some(solution[0])
}

/// LOESS evaluated at arbitrary query points: local linear (`degree` 1) or
/// quadratic (`degree` 2) regression with tricube weights over the nearest `ceil(span * n)` observations, no
/// robustness iterations. A neighbourhood too small for a nonsingular local
/// design is widened one point at a time.
pub fn loess_at(
    xs: &[f64],
    ys: &[f64],
    queries: &[f64],
    span: f64,
    degree: usize,
) -> Result<Vec<f64>> {
    let n = xs.len();
    if n < 3 || ys.len() != n {
        return Err(Error::Invalid(format!(
            "loess needs at least 3 paired points, got {} x and {} y",
            n,
            ys.len()
        )));
    }
    if !(1..=2).contains(&degree) {
        return Err(Error::Invalid(format!("loess degree must be 1 or 2, got {degree}")));
    }
    if !(span > 0.0) {
        return Err(Error::Invalid(format!("loess span must be positive, got {span}")));
    }
    if xs.windows(2).any(|w| !(w[0] < w[1])) {
        return Err(Error::Invalid("loess x values must be strictly increasing".into()));
    }
    let q0 = ((span * n as f64).ceil() as usize).clamp(1, n);
    queries
        .iter()
        .map(|&x0| {
            for q in q0..=n {
                if let Some(v) = local_fit(xs, ys, x0, q, span, degree) {
                    return Ok(v);
                }
            }
            Err(Error::Invalid(format!("loess design singular at x = {x0}")))
        })
        .collect()
}

/// LOESS smoothing of `ys` at the observed `xs`.
pub fn loess_smooth(xs: &[f64], ys: &[f64], span: f64, degree: usize) -> Result<Vec<f64>> {
    loess_at(xs, ys, xs, span, degree)
}
