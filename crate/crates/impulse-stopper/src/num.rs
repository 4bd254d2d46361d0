//! Scalar root finding, bracketed minimisation and small dense solves.
//!
//! Everything here is deterministic and allocation-free on the hot paths;
//! the solvers report the scanned interval on failure so callers can name
//! the boundary that could not be pinned down.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum NumError {
    #[error("no sign change while scanning {name} on [{lo:.6e}, {hi:.6e}] ({points} points)")]
    NoBracket { name: String, lo: f64, hi: f64, points: usize },
    #[error("root refinement for {name} did not converge (last interval [{lo:.6e}, {hi:.6e}])")]
    NoConvergence { name: String, lo: f64, hi: f64 },
    #[error("{name}: Jacobian singular at iteration {iter}")]
    SingularJacobian { name: String, iter: usize },
    #[error("{name}: no convergence in {iters} iterations, final residual {residual:.3e}")]
    NewtonStalled { name: String, iters: usize, residual: f64 },
    #[error("{0}")]
    Invalid(String),
}

/// Scans `[lo, hi]` with `points` samples (log-spaced when `log_scale`) and
/// returns the first sub-interval over which `f` changes sign.
pub fn scan_bracket(
    name: &str,
    f: impl Fn(f64) -> f64,
    lo: f64,
    hi: f64,
    points: usize,
    log_scale: bool,
) -> Result<(f64, f64), NumError> {
    assert!(points >= 2 && hi > lo);
    let sample = |i: usize| -> f64 {
        let t = i as f64 / (points - 1) as f64;
        if log_scale {
            lo * (hi / lo).powf(t)
        } else {
            lo + (hi - lo) * t
        }
    };
    let mut xp = sample(0);
    let mut fp = f(xp);
    for i in 1..points {
        let x = sample(i);
        let fx = f(x);
        if fp == 0.0 {
            return Ok((xp, xp));
        }
        if fp * fx < 0.0 {
            return Ok((xp, x));
        }
        xp = x;
        fp = fx;
    }
    Err(NumError::NoBracket { name: name.to_string(), lo, hi, points })
}

/// Brent's method on a sign-changing bracket.
pub fn brent(
    name: &str,
    f: impl Fn(f64) -> f64,
    mut a: f64,
    mut b: f64,
    tol: f64,
    max_iter: usize,
) -> Result<f64, NumError> {
    if a == b {
        return Ok(a);
    }
    let mut fa = f(a);
    let mut fb = f(b);
    if fa == 0.0 {
        return Ok(a);
    }
    if fb == 0.0 {
        return Ok(b);
    }
    if fa * fb > 0.0 {
        return Err(NumError::Invalid(format!(
            "{name}: bracket [{a:.6e}, {b:.6e}] does not change sign"
        )));
    }
    if fa.abs() < fb.abs() {
        std::mem::swap(&mut a, &mut b);
        std::mem::swap(&mut fa, &mut fb);
    }
    let mut c = a;
    let mut fc = fa;
    let mut d = b - a;
    let mut mflag = true;
    for _ in 0..max_iter {
        if fb == 0.0 || (b - a).abs() < tol {
            return Ok(b);
        }
        let mut s = if fa != fc && fb != fc {
            // inverse quadratic interpolation
            a * fb * fc / ((fa - fb) * (fa - fc))
                + b * fa * fc / ((fb - fa) * (fb - fc))
                + c * fa * fb / ((fc - fa) * (fc - fb))
        } else {
            b - fb * (b - a) / (fb - fa)
        };
        let lo = (3.0 * a + b) / 4.0;
        let cond = !((s > lo.min(b) && s < lo.max(b))
            || (s > b.min(lo) && s < b.max(lo)))
            || (mflag && (s - b).abs() >= (b - c).abs() / 2.0)
            || (!mflag && (s - b).abs() >= (c - d).abs() / 2.0)
            || (mflag && (b - c).abs() < tol)
            || (!mflag && (c - d).abs() < tol);
        if cond {
            s = (a + b) / 2.0;
            mflag = true;
        } else {
            mflag = false;
        }
        let fs = f(s);
        d = c;
        c = b;
        fc = fb;
        if fa * fs < 0.0 {
            b = s;
            fb = fs;
        } else {
            a = s;
            fa = fs;
        }
        if fa.abs() < fb.abs() {
            std::mem::swap(&mut a, &mut b);
            std::mem::swap(&mut fa, &mut fb);
        }
    }
    Err(NumError::NoConvergence { name: name.to_string(), lo: a.min(b), hi: a.max(b) })
}

/// Scan for a bracket, then polish with Brent.
pub fn find_root_scan(
    name: &str,
    f: impl Fn(f64) -> f64 + Copy,
    lo: f64,
    hi: f64,
    points: usize,
    log_scale: bool,
    tol: f64,
) -> Result<f64, NumError> {
    let (a, b) = scan_bracket(name, f, lo, hi, points, log_scale)?;
    if a == b {
        return Ok(a);
    }
    brent(name, f, a, b, tol, 200)
}

const INV_PHI: f64 = 0.618_033_988_749_894_9;

/// Golden-section search for the minimiser of `f` on `[a, b]`.
/// Maximisation is `golden_min(|x| -f(x), ..)` at the call site.
pub fn golden_min(f: impl Fn(f64) -> f64, mut a: f64, mut b: f64, tol: f64, max_iter: usize) -> f64 {
    let mut c = b - (b - a) * INV_PHI;
    let mut d = a + (b - a) * INV_PHI;
    let mut fc = f(c);
    let mut fd = f(d);
    for _ in 0..max_iter {
        if (b - a).abs() <= tol {
            break;
        }
        if fc < fd {
            b = d;
            d = c;
            fd = fc;
            c = b - (b - a) * INV_PHI;
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + (b - a) * INV_PHI;
            fd = f(d);
        }
    }
    0.5 * (a + b)
}

/// Damped Newton for a 3-equation system with analytic Jacobian.
/// `f` fills the residual, `jac` the row-major Jacobian.
pub fn newton3(
    name: &str,
    f: impl Fn(&[f64; 3]) -> [f64; 3],
    jac: impl Fn(&[f64; 3]) -> [[f64; 3]; 3],
    mut x: [f64; 3],
    tol: f64,
    max_iter: usize,
) -> Result<[f64; 3], NumError> {
    let norm = |r: &[f64; 3]| r.iter().map(|v| v.abs()).fold(0.0, f64::max);
    let mut res = f(&x);
    let mut rn = norm(&res);
    for iter in 0..max_iter {
        if rn < tol {
            return Ok(x);
        }
        let j = jac(&x);
        let step = solve3(&j, &res)
            .ok_or(NumError::SingularJacobian { name: name.to_string(), iter })?;
        // backtracking damping
        let mut lambda = 1.0;
        loop {
            let trial = [x[0] - lambda * step[0], x[1] - lambda * step[1], x[2] - lambda * step[2]];
            let tres = f(&trial);
            let tn = norm(&tres);
            if tn < rn || lambda < 1e-8 {
                x = trial;
                res = tres;
                rn = tn;
                break;
            }
            lambda *= 0.5;
        }
    }
    if rn < tol {
        Ok(x)
    } else {
        Err(NumError::NewtonStalled { name: name.to_string(), iters: max_iter, residual: rn })
    }
}

/// Direct 3x3 solve by Gaussian elimination with partial pivoting.
fn solve3(a: &[[f64; 3]; 3], b: &[f64; 3]) -> Option<[f64; 3]> {
    let mut m = [
        [a[0][0], a[0][1], a[0][2], b[0]],
        [a[1][0], a[1][1], a[1][2], b[1]],
        [a[2][0], a[2][1], a[2][2], b[2]],
    ];
    for col in 0..3 {
        let piv = (col..3).max_by(|&i, &j| m[i][col].abs().total_cmp(&m[j][col].abs()))?;
        if m[piv][col].abs() < 1e-300 {
            return None;
        }
        m.swap(col, piv);
        for row in (col + 1)..3 {
            let fac = m[row][col] / m[col][col];
            for k in col..4 {
                m[row][k] -= fac * m[col][k];
            }
        }
    }
    let mut x = [0.0; 3];
    for row in (0..3).rev() {
        let mut s = m[row][3];
        for k in (row + 1)..3 {
            s -= m[row][k] * x[k];
        }
        x[row] = s / m[row][row];
    }
    Some(x)
}

/// Pairwise (cascade) summation: deterministic and accurate independent of
/// how the inputs were produced.
pub fn pairwise_sum(xs: &[f64]) -> f64 {
    if xs.len() <= 8 {
        return xs.iter().sum();
    }
    let mid = xs.len() / 2;
    pairwise_sum(&xs[..mid]) + pairwise_sum(&xs[mid..])
}

/// Sample mean and standard error via pairwise summation.
pub fn mean_stderr(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = pairwise_sum(xs) / n;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    let devs: Vec<f64> = xs.iter().map(|x| (x - mean) * (x - mean)).collect();
    let var = pairwise_sum(&devs) / (n - 1.0);
    (mean, (var / n).sqrt())
}

/// SplitMix64 step, used to derive independent deterministic RNG streams
/// from (seed, path index, stream tag).
pub fn mix_seed(seed: u64, path: u64, tag: u64) -> u64 {
    let mut z = seed ^ path.wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ tag.rotate_left(32);
    for _ in 0..3 {
        z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
        let mut x = z;
        x = (x ^ (x >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        x = (x ^ (x >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        z = x ^ (x >> 31);
    }
    z
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn brent_finds_quadratic_root() {
        let f = |x: f64| x * x - 2.0;
        let r = find_root_scan("sqrt2", f, 0.1, 10.0, 50, false, 1e-14).unwrap();
        assert!((r - 2f64.sqrt()).abs() < 1e-12);
    }

    #[test]
    fn scan_reports_interval_on_failure() {
        let err = scan_bracket("always-positive", |x| x * x + 1.0, 1.0, 2.0, 16, false).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("always-positive") && msg.contains("1.0"));
    }

    #[test]
    fn golden_min_quartic() {
        let f = |x: f64| (x - 1.25).powi(4) + 3.0;
        let m = golden_min(f, -4.0, 6.0, 1e-12, 200);
        assert!((m - 1.25).abs() < 1e-3); // quartic is flat; value accuracy is what matters
        assert!((f(m) - 3.0).abs() < 1e-11);
    }

    #[test]
    fn newton3_solves_coupled_system() {
        // x^2+y^2=5, x*y=2, z=x+y -> (1, 2, 3) from a nearby start
        let f = |v: &[f64; 3]| {
            [v[0] * v[0] + v[1] * v[1] - 5.0, v[0] * v[1] - 2.0, v[2] - v[0] - v[1]]
        };
        let j = |v: &[f64; 3]| {
            [[2.0 * v[0], 2.0 * v[1], 0.0], [v[1], v[0], 0.0], [-1.0, -1.0, 1.0]]
        };
        let x = newton3("toy", f, j, [0.8, 2.3, 2.5], 1e-13, 100).unwrap();
        assert!((x[0] - 1.0).abs() < 1e-10 && (x[1] - 2.0).abs() < 1e-10 && (x[2] - 3.0).abs() < 1e-10);
    }

    #[test]
    fn pairwise_sum_matches_naive_on_benign_data() {
        let xs: Vec<f64> = (0..1000).map(|i| (i as f64).sin()).collect();
        let naive: f64 = xs.iter().sum();
        assert!((pairwise_sum(&xs) - naive).abs() < 1e-9);
    }

    #[test]
    fn mixed_seeds_differ_across_paths_and_tags() {
        let a = mix_seed(42, 0, 0);
        let b = mix_seed(42, 1, 0);
        let c = mix_seed(42, 0, 1);
        assert_ne!(a, b);
        assert_ne!(a, c);
        assert_eq!(a, mix_seed(42, 0, 0));
    }
}
