//! Minimizers used by the estimator: a Nelder–Mead simplex to localize the
//! optimum and BFGS with numeric gradients to polish it.
//!
//! Both work on plain `&[f64]` vectors and treat non-finite objective values
//! as `+∞`. Everything is sequential and deterministic.

/// Five-point central-difference gradient with per-coordinate steps.
pub fn numeric_gradient<F>(f: &F, x: &[f64], steps: &[f64]) -> Vec<f64>
where
    F: Fn(&[f64]) -> f64,
{
    let mut work = x.to_vec();
    let mut g = vec![0.0; x.len()];
    for j in 0..x.len() {
        let h = steps[j];
        let mut at = |d: f64| {
            work[j] = x[j] + d;
            let v = f(&work);
            work[j] = x[j];
            v
        };
        let f2p = at(2.0 * h);
        let f1p = at(h);
        let f1m = at(-h);
        let f2m = at(-2.0 * h);
        g[j] = (-f2p + 8.0 * f1p - 8.0 * f1m + f2m) / (12.0 * h);
    }
    g
}

/// Plain two-point central differences, the reference scheme for gradient checks.
pub fn central_difference<F>(f: &F, x: &[f64], steps: &[f64]) -> Vec<f64>
where
    F: Fn(&[f64]) -> f64,
{
    let mut work = x.to_vec();
    (0..x.len())
        .map(|j| {
            let h = steps[j];
            work[j] = x[j] + h;
            let up = f(&work);
            work[j] = x[j] - h;
            let down = f(&work);
            work[j] = x[j];
            (up - down) / (2.0 * h)
        })
        .collect()
}

fn finite_or_inf(v: f64) -> f64 {
    if v.is_finite() {
        v
    } else {
        f64::INFINITY
    }
}

#[derive(Debug, Clone)]
pub struct Minimum {
    pub x: Vec<f64>,
    pub f: f64,
    pub iterations: usize,
    pub status: Status,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Status {
    GradientTolerance,
    StepTolerance,
    MaxIter,
    /// Line search could not decrease the objective along any direction.
    Stalled,
}

impl Status {
    pub fn converged(self) -> bool {
        matches!(self, Status::GradientTolerance | Status::StepTolerance)
    }
}

#[derive(Debug, Clone, Copy)]
pub struct SimplexOptions {
    pub max_iter: usize,
    pub f_tol: f64,
    pub x_tol: f64,
}

impl Default for SimplexOptions {
    fn default() -> Self {
        SimplexOptions {
            max_iter: 1000,
            f_tol: 1e-9,
            x_tol: 1e-7,
        }
    }
}

/// Nelder–Mead with standard coefficients. `scale[j]` sets the initial
/// simplex edge along coordinate `j`.
pub fn nelder_mead<F>(f: &F, x0: &[f64], scale: &[f64], opts: SimplexOptions) -> Minimum
where
    F: Fn(&[f64]) -> f64,
{
    let n = x0.len();
    let eval = |x: &[f64]| finite_or_inf(f(x));
    let mut simplex: Vec<(Vec<f64>, f64)> = Vec::with_capacity(n + 1);
    simplex.push((x0.to_vec(), eval(x0)));
    for j in 0..n {
        let mut v = x0.to_vec();
        v[j] += scale[j];
        let fv = eval(&v);
        simplex.push((v, fv));
    }
    let mut iterations = 0;
    let mut status = Status::MaxIter;
    while iterations < opts.max_iter {
        simplex.sort_by(|a, b| a.1.total_cmp(&b.1));
        let best = simplex[0].1;
        let worst = simplex[n].1;
        let spread_f = (worst - best).abs();
        let spread_x = simplex[1..]
            .iter()
            .flat_map(|(v, _)| v.iter().zip(&simplex[0].0).map(|(a, b)| (a - b).abs()))
            .fold(0.0, f64::max);
        if spread_f <= opts.f_tol * (best.abs() + opts.f_tol) && spread_x <= opts.x_tol {
            status = Status::StepTolerance;
            break;
        }
        iterations += 1;

        let mut centroid = vec![0.0; n];
        for (v, _) in &simplex[..n] {
            for (c, x) in centroid.iter_mut().zip(v) {
                *c += x / n as f64;
            }
        }
        let along = |t: f64| -> Vec<f64> {
            centroid
                .iter()
                .zip(&simplex[n].0)
                .map(|(c, w)| c + t * (c - w))
                .collect()
        };
        let xr = along(1.0);
        let fr = eval(&xr);
        if fr < simplex[0].1 {
            let xe = along(2.0);
            let fe = eval(&xe);
            simplex[n] = if fe < fr { (xe, fe) } else { (xr, fr) };
            continue;
        }
        if fr < simplex[n - 1].1 {
            simplex[n] = (xr, fr);
            continue;
        }
        let (xc, fc) = if fr < simplex[n].1 {
            let xc = along(0.5);
            let fc = eval(&xc);
            (xc, fc)
        } else {
            let xc = along(-0.5);
            let fc = eval(&xc);
            (xc, fc)
        };
        if fc < simplex[n].1.min(fr) {
            simplex[n] = (xc, fc);
            continue;
        }
        let best_x = simplex[0].0.clone();
        for (v, fv) in simplex[1..].iter_mut() {
            for (x, b) in v.iter_mut().zip(&best_x) {
                *x = b + 0.5 * (*x - b);
            }
            *fv = eval(v);
        }
    }
    simplex.sort_by(|a, b| a.1.total_cmp(&b.1));
    let (x, f) = simplex.swap_remove(0);
    Minimum {
        x,
        f,
        iterations,
        status,
    }
}

#[derive(Debug, Clone, Copy)]
pub struct BfgsOptions {
    pub max_iter: usize,
    pub grad_tol: f64,
    pub step_tol: f64,
}

impl Default for BfgsOptions {
    fn default() -> Self {
        BfgsOptions {
            max_iter: 2000,
            grad_tol: 1e-5,
            step_tol: 1e-9,
        }
    }
}

/// BFGS on the inverse Hessian with Armijo backtracking. `grad` returns the
/// gradient of `f`.
pub fn bfgs<F, G>(f: &F, grad: &G, x0: &[f64], opts: BfgsOptions) -> Minimum
where
    F: Fn(&[f64]) -> f64,
    G: Fn(&[f64]) -> Vec<f64>,
{
    let n = x0.len();
    let eval = |x: &[f64]| finite_or_inf(f(x));
    let mut x = x0.to_vec();
    let mut fx = eval(&x);
    let mut g = grad(&x);
    let mut h = identity(n);
    let mut fresh = true;
    let mut iterations = 0;
    let status = loop {
        if inf_norm(&g) <= opts.grad_tol {
            break Status::GradientTolerance;
        }
        if iterations >= opts.max_iter {
            break Status::MaxIter;
        }
        iterations += 1;

        let mut d: Vec<f64> = mat_vec(&h, &g).into_iter().map(|v| -v).collect();
        let mut slope = dot(&g, &d);
        if !(slope < 0.0) {
            h = identity(n);
            fresh = true;
            d = g.iter().map(|v| -v).collect();
            slope = dot(&g, &d);
        }
        let step_scale = if fresh {
            1.0 / inf_norm(&g).max(1.0)
        } else {
            1.0
        };
        let mut t = step_scale;
        let mut accepted = None;
        for _ in 0..60 {
            let trial: Vec<f64> = x.iter().zip(&d).map(|(a, b)| a + t * b).collect();
            let ft = eval(&trial);
            if ft <= fx + 1e-4 * t * slope {
                accepted = Some((trial, ft));
                break;
            }
            t *= 0.5;
        }
        let Some((x_new, f_new)) = accepted else {
            if fresh {
                break Status::Stalled;
            }
            h = identity(n);
            fresh = true;
            continue;
        };
        let s: Vec<f64> = x_new.iter().zip(&x).map(|(a, b)| a - b).collect();
        let g_new = grad(&x_new);
        let y: Vec<f64> = g_new.iter().zip(&g).map(|(a, b)| a - b).collect();
        x = x_new;
        fx = f_new;
        g = g_new;
        if inf_norm(&s) <= opts.step_tol {
            break Status::StepTolerance;
        }
        let sy = dot(&s, &y);
        if sy > 1e-12 * norm(&s) * norm(&y) {
            if fresh {
                let scale = sy / dot(&y, &y);
                for (k, v) in h.iter_mut().enumerate() {
                    *v = if k / n == k % n { scale } else { 0.0 };
                }
            }
            update_inverse_hessian(&mut h, &s, &y, sy);
            fresh = false;
        }
    };
    Minimum {
        x,
        f: fx,
        iterations,
        status,
    }
}

fn update_inverse_hessian(h: &mut [f64], s: &[f64], y: &[f64], sy: f64) {
    let n = s.len();
    let rho = 1.0 / sy;
    let hy = mat_vec(h, y);
    let yhy = dot(y, &hy);
    for i in 0..n {
        for j in 0..n {
            h[i * n + j] +=
                -rho * (hy[i] * s[j] + s[i] * hy[j]) + (rho * rho * yhy + rho) * s[i] * s[j];
        }
    }
}

fn identity(n: usize) -> Vec<f64> {
    let mut m = vec![0.0; n * n];
    for i in 0..n {
        m[i * n + i] = 1.0;
    }
    m
}

fn mat_vec(m: &[f64], v: &[f64]) -> Vec<f64> {
    let n = v.len();
    (0..n).map(|i| dot(&m[i * n..(i + 1) * n], v)).collect()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

pub(crate) fn inf_norm(a: &[f64]) -> f64 {
    a.iter().fold(0.0, |m, v| m.max(v.abs()))
}
