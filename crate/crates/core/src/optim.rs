//! Dense BFGS minimizer with a strong-Wolfe line search.
//!
//! Parameter vectors here are short (at most eight coordinates), so the inverse Hessian is
//! kept as a dense matrix and can be handed back to warm-start a related problem.

#[derive(Debug, Clone, Copy)]
pub struct BfgsOptions {
    /// Convergence when the infinity norm of the gradient drops to this value.
    pub grad_tol: f64,
    pub max_iter: usize,
}

impl Default for BfgsOptions {
    fn default() -> Self {
        Self {
            grad_tol: 1e-6,
            max_iter: 500,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Minimum {
    pub x: Vec<f64>,
    pub value: f64,
    pub grad: Vec<f64>,
    pub iterations: usize,
    pub evaluations: usize,
    pub converged: bool,
    /// Row-major inverse-Hessian approximation at the final iterate.
    pub inv_hessian: Vec<f64>,
}

impl Minimum {
    pub fn grad_norm(&self) -> f64 {
        inf_norm(&self.grad)
    }
}

fn inf_norm(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |m, x| m.max(x.abs()))
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

struct Objective<F> {
    f: F,
    evaluations: usize,
}

impl<F: FnMut(&[f64], &mut [f64]) -> f64> Objective<F> {
    fn eval(&mut self, x: &[f64], g: &mut [f64]) -> f64 {
        self.evaluations += 1;
        let v = (self.f)(x, g);
        if v.is_finite() && g.iter().all(|x| x.is_finite()) {
            v
        } else {
            f64::INFINITY
        }
    }
}

struct Point {
    step: f64,
    value: f64,
    slope: f64,
}

/// Minimizer of the cubic through two points with known slopes, if it lies strictly inside.
fn cubic_min(lo: &Point, hi: &Point) -> Option<f64> {
    let d1 = lo.slope + hi.slope - 3.0 * (lo.value - hi.value) / (lo.step - hi.step);
    let disc = d1 * d1 - lo.slope * hi.slope;
    if !(disc >= 0.0) {
        return None;
    }
    let d2 = (hi.step - lo.step).signum() * disc.sqrt();
    let t = hi.step - (hi.step - lo.step) * (hi.slope + d2 - d1) / (hi.slope - lo.slope + 2.0 * d2);
    let (a, b) = if lo.step < hi.step {
        (lo.step, hi.step)
    } else {
        (hi.step, lo.step)
    };
    let margin = 0.1 * (b - a);
    (t.is_finite() && t > a + margin && t < b - margin).then_some(t)
}

const C1: f64 = 1e-4;
const C2: f64 = 0.9;
const MAX_LINE_EVALS: usize = 40;

/// Strong-Wolfe line search along `dir`. Returns the accepted step with its value and
/// gradient, or `None` if no acceptable step was found.
fn line_search<F: FnMut(&[f64], &mut [f64]) -> f64>(
    obj: &mut Objective<F>,
    x: &[f64],
    f0: f64,
    g0: &[f64],
    dir: &[f64],
    first_step: f64,
) -> Option<(f64, f64, Vec<f64>)> {
    let n = x.len();
    let slope0 = dot(g0, dir);
    if !(slope0 < 0.0) {
        return None;
    }
    let mut xt = vec![0.0; n];
    let mut gt = vec![0.0; n];
    let probe = |obj: &mut Objective<F>, step: f64, xt: &mut Vec<f64>, gt: &mut Vec<f64>| {
        for i in 0..n {
            xt[i] = x[i] + step * dir[i];
        }
        let v = obj.eval(xt, gt);
        let s = if v.is_finite() { dot(gt, dir) } else { f64::NAN };
        Point {
            step,
            value: v,
            slope: s,
        }
    };

    let origin = Point {
        step: 0.0,
        value: f0,
        slope: slope0,
    };
    let mut prev = origin;
    let mut step = first_step;
    let mut evals = 0;
    let (mut lo, mut hi);
    loop {
        evals += 1;
        let cur = probe(obj, step, &mut xt, &mut gt);
        if !cur.value.is_finite() {
            // outside the domain: shrink and retry
            if evals >= MAX_LINE_EVALS {
                return None;
            }
            step = prev.step + 0.25 * (step - prev.step);
            continue;
        }
        if cur.value > f0 + C1 * step * slope0 || (evals > 1 && cur.value >= prev.value) {
            lo = prev;
            hi = cur;
            break;
        }
        if cur.slope.abs() <= -C2 * slope0 {
            return Some((step, cur.value, gt));
        }
        if cur.slope >= 0.0 {
            lo = cur;
            hi = prev;
            break;
        }
        if evals >= MAX_LINE_EVALS {
            return None;
        }
        prev = cur;
        step *= 2.0;
    }

    // zoom
    while evals < MAX_LINE_EVALS {
        evals += 1;
        let trial = cubic_min(&lo, &hi).unwrap_or(0.5 * (lo.step + hi.step));
        let cur = probe(obj, trial, &mut xt, &mut gt);
        if !cur.value.is_finite() || cur.value > f0 + C1 * trial * slope0 || cur.value >= lo.value {
            hi = Point {
                step: trial,
                value: if cur.value.is_finite() { cur.value } else { f64::MAX },
                slope: if cur.slope.is_finite() { cur.slope } else { 0.0 },
            };
        } else {
            if cur.slope.abs() <= -C2 * slope0 {
                return Some((trial, cur.value, gt));
            }
            if cur.slope * (hi.step - lo.step) >= 0.0 {
                hi = Point { ..lo };
            }
            lo = cur;
        }
        if (hi.step - lo.step).abs() < 1e-16 * lo.step.abs().max(1e-300) {
            break;
        }
    }
    // Sufficient decrease without curvature still makes progress.
    if lo.step > 0.0 && lo.value < f0 {
        let cur = probe(obj, lo.step, &mut xt, &mut gt);
        return Some((lo.step, cur.value, gt));
    }
    None
}

/// Minimizes `f` starting from `x0`. `f(x, grad)` returns the value and writes the gradient;
/// non-finite values mark points outside the domain.
pub fn minimize<F>(f: F, x0: &[f64], options: BfgsOptions, inv_hessian: Option<&[f64]>) -> Minimum
where
    F: FnMut(&[f64], &mut [f64]) -> f64,
{
    let n = x0.len();
    let mut obj = Objective { f, evaluations: 0 };
    let mut x = x0.to_vec();
    let mut g = vec![0.0; n];
    let mut value = obj.eval(&x, &mut g);
    let identity = |scale: f64| {
        let mut h = vec![0.0; n * n];
        for i in 0..n {
            h[i * n + i] = scale;
        }
        h
    };
    let warm = inv_hessian.is_some_and(|h| h.len() == n * n);
    let mut h = match inv_hessian {
        Some(h0) if warm => h0.to_vec(),
        _ => identity(1.0),
    };
    let mut fresh = !warm;
    let mut iterations = 0;
    let mut converged = value.is_finite() && inf_norm(&g) <= options.grad_tol;
    let mut retried = false;

    while !converged && value.is_finite() && iterations < options.max_iter {
        iterations += 1;
        let mut dir = vec![0.0; n];
        for i in 0..n {
            dir[i] = -(0..n).map(|j| h[i * n + j] * g[j]).sum::<f64>();
        }
        if dot(&dir, &g) >= 0.0 {
            h = identity(1.0);
            fresh = true;
            dir.iter_mut().zip(&g).for_each(|(d, gi)| *d = -gi);
        }
        let first_step = if fresh {
            (1.0 / inf_norm(&dir).max(1e-300)).min(1.0)
        } else {
            1.0
        };
        let Some((step, new_value, new_g)) = line_search(&mut obj, &x, value, &g, &dir, first_step) else {
            if retried || fresh {
                break;
            }
            retried = true;
            h = identity(1.0);
            fresh = true;
            continue;
        };
        retried = false;
        let s: Vec<f64> = dir.iter().map(|d| step * d).collect();
        let y: Vec<f64> = new_g.iter().zip(&g).map(|(a, b)| a - b).collect();
        for i in 0..n {
            x[i] += s[i];
        }
        value = new_value;
        g = new_g;
        let sy = dot(&s, &y);
        if sy > 1e-12 * dot(&s, &s).sqrt() * dot(&y, &y).sqrt() {
            if fresh {
                let scale = sy / dot(&y, &y);
                h = identity(scale);
                fresh = false;
            }
            let rho = 1.0 / sy;
            let hy: Vec<f64> = (0..n).map(|i| (0..n).map(|j| h[i * n + j] * y[j]).sum()).collect();
            let yhy = dot(&y, &hy);
            for i in 0..n {
                for j in 0..n {
                    h[i * n + j] += -rho * (hy[i] * s[j] + s[i] * hy[j]) + (rho * rho * yhy + rho) * s[i] * s[j];
                }
            }
        }
        converged = inf_norm(&g) <= options.grad_tol;
    }

    Minimum {
        x,
        value,
        grad: g,
        iterations,
        evaluations: obj.evaluations,
        converged,
        inv_hessian: h,
    }
}
