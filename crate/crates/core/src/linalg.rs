//! Dense helpers for the tiny systems that show up here (a handful of
//! decision variables and constraints). Matrices are row-major slices.

pub fn dot(x: &[f64], y: &[f64]) -> f64 {
    debug_assert_eq!(x.len(), y.len());
    x.iter().zip(y).map(|(a, b)| a * b).sum()
}

pub fn norm(x: &[f64]) -> f64 {
    dot(x, x).sqrt()
}

pub fn sub(x: &[f64], y: &[f64]) -> Vec<f64> {
    x.iter().zip(y).map(|(a, b)| a - b).collect()
}

/// y += a * x
pub fn axpy(a: f64, x: &[f64], y: &mut [f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += a * xi;
    }
}

pub fn distance(x: &[f64], y: &[f64]) -> f64 {
    x.iter()
        .zip(y)
        .map(|(a, b)| (a - b) * (a - b))
        .sum::<f64>()
        .sqrt()
}

/// Solve `a x = b` for square `a` (n x n, row-major) by Gaussian elimination
/// with partial pivoting. Returns `None` when a pivot falls below `1e-14`
/// times the largest entry.
pub fn solve(a: &[f64], b: &[f64]) -> Option<Vec<f64>> {
    let n = b.len();
    debug_assert_eq!(a.len(), n * n);
    let mut m = a.to_vec();
    let mut x = b.to_vec();
    let scale = m.iter().fold(0.0_f64, |acc, v| acc.max(v.abs())).max(1e-300);
    for col in 0..n {
        let (piv, pval) = (col..n)
            .map(|r| (r, m[r * n + col].abs()))
            .fold((col, -1.0), |best, cur| if cur.1 > best.1 { cur } else { best });
        if pval <= 1e-14 * scale {
            return None;
        }
        if piv != col {
            for j in 0..n {
                m.swap(col * n + j, piv * n + j);
            }
            x.swap(col, piv);
        }
        let d = m[col * n + col];
        for r in col + 1..n {
            let f = m[r * n + col] / d;
            if f == 0.0 {
                continue;
            }
            for j in col..n {
                m[r * n + j] -= f * m[col * n + j];
            }
            x[r] -= f * x[col];
        }
    }
    for col in (0..n).rev() {
        let mut acc = x[col];
        for j in col + 1..n {
            acc -= m[col * n + j] * x[j];
        }
        x[col] = acc / m[col * n + col];
    }
    Some(x)
}

/// Eigen-decomposition of a symmetric matrix by cyclic Jacobi rotations.
///
/// Returns `(values, vectors)` where `vectors[k]` is the unit eigenvector for
/// `values[k]`. Values are sorted ascending.
pub fn symmetric_eigen(a: &[f64], n: usize) -> (Vec<f64>, Vec<Vec<f64>>) {
    debug_assert_eq!(a.len(), n * n);
    let mut m = a.to_vec();
    // v holds eigenvectors as columns
    let mut v = vec![0.0; n * n];
    for i in 0..n {
        v[i * n + i] = 1.0;
    }
    let frob: f64 = m.iter().map(|x| x * x).sum::<f64>().sqrt();
    for _sweep in 0..100 {
        let off: f64 = (0..n)
            .flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j)))
            .map(|(i, j)| m[i * n + j] * m[i * n + j])
            .sum::<f64>()
            .sqrt();
        if off <= 1e-15 * frob || off == 0.0 {
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                let apq = m[p * n + q];
                if apq == 0.0 {
                    continue;
                }
                let app = m[p * n + p];
                let aqq = m[q * n + q];
                let theta = (aqq - app) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let mkp = m[k * n + p];
                    let mkq = m[k * n + q];
                    m[k * n + p] = c * mkp - s * mkq;
                    m[k * n + q] = s * mkp + c * mkq;
                }
                for k in 0..n {
                    let mpk = m[p * n + k];
                    let mqk = m[q * n + k];
                    m[p * n + k] = c * mpk - s * mqk;
                    m[q * n + k] = s * mpk + c * mqk;
                }
                for k in 0..n {
                    let vkp = v[k * n + p];
                    let vkq = v[k * n + q];
                    v[k * n + p] = c * vkp - s * vkq;
                    v[k * n + q] = s * vkp + c * vkq;
                }
            }
        }
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| m[i * n + i].total_cmp(&m[j * n + j]));
    let values = order.iter().map(|&i| m[i * n + i]).collect();
    let vectors = order
        .iter()
        .map(|&i| (0..n).map(|k| v[k * n + i]).collect())
        .collect();
    (values, vectors)
}

/// Least squares `min ||b x - y||` over the columns listed in `cols`, via the
/// normal equations. `b` is `rows x cols_total`, row-major.
fn restricted_least_squares(
    b: &[f64],
    rows: usize,
    ncols: usize,
    y: &[f64],
    cols: &[usize],
) -> Option<Vec<f64>> {
    let p = cols.len();
    let mut gram = vec![0.0; p * p];
    let mut rhs = vec![0.0; p];
    for (a, &ca) in cols.iter().enumerate() {
        for (c, &cc) in cols.iter().enumerate() {
            gram[a * p + c] = (0..rows).map(|r| b[r * ncols + ca] * b[r * ncols + cc]).sum();
        }
        rhs[a] = (0..rows).map(|r| b[r * ncols + ca] * y[r]).sum();
    }
    solve(&gram, &rhs)
}

/// Nonnegative least squares `min ||b x - y||^2, x >= 0` by the
/// Lawson-Hanson active-set method. `b` is `rows x ncols`, row-major.
pub fn nnls(b: &[f64], rows: usize, ncols: usize, y: &[f64]) -> Option<Vec<f64>> {
    debug_assert_eq!(b.len(), rows * ncols);
    let mut x = vec![0.0; ncols];
    let mut passive = vec![false; ncols];
    let gradient = |x: &[f64]| -> Vec<f64> {
        let resid: Vec<f64> = (0..rows)
            .map(|r| y[r] - (0..ncols).map(|c| b[r * ncols + c] * x[c]).sum::<f64>())
            .collect();
        (0..ncols)
            .map(|c| (0..rows).map(|r| b[r * ncols + c] * resid[r]).sum())
            .collect()
    };
    let scale = b.iter().fold(0.0_f64, |a, v| a.max(v.abs())).max(1.0)
        * y.iter().fold(0.0_f64, |a, v| a.max(v.abs())).max(1.0);
    let tol = 1e-13 * scale;
    for _outer in 0..(3 * ncols + 10) {
        let w = gradient(&x);
        let enter = (0..ncols)
            .filter(|&c| !passive[c] && w[c] > tol)
            .max_by(|&i, &j| w[i].total_cmp(&w[j]));
        let Some(t) = enter else {
            return Some(x);
        };
        passive[t] = true;
        for _inner in 0..(3 * ncols + 10) {
            let cols: Vec<usize> = (0..ncols).filter(|&c| passive[c]).collect();
            let s_p = restricted_least_squares(b, rows, ncols, y, &cols)?;
            if s_p.iter().all(|&v| v > 0.0) {
                x.iter_mut().for_each(|v| *v = 0.0);
                for (&c, &v) in cols.iter().zip(&s_p) {
                    x[c] = v;
                }
                break;
            }
            let mut alpha = f64::INFINITY;
            for (&c, &v) in cols.iter().zip(&s_p) {
                if v <= 0.0 {
                    let denom = x[c] - v;
                    if denom > 0.0 {
                        alpha = alpha.min(x[c] / denom);
                    } else {
                        alpha = 0.0;
                    }
                }
            }
            let alpha = alpha.clamp(0.0, 1.0);
            for (&c, &v) in cols.iter().zip(&s_p) {
                x[c] += alpha * (v - x[c]);
            }
            for &c in &cols {
                if x[c] <= 1e-15 {
                    x[c] = 0.0;
                    passive[c] = false;
                }
            }
            if !passive.iter().any(|&p| p) {
                break;
            }
        }
    }
    None
}
