//! Dense quasi-Newton (BFGS) minimizer with central-difference gradients.

use crate::scalar::Real;

#[derive(Debug, Clone, Copy)]
pub struct BfgsOptions<T> {
    /// Stop once an accepted step improves the objective by less than this.
    pub f_tol: T,
    /// Stop once every gradient component is below this.
    pub g_tol: T,
    pub max_iter: usize,
    /// Finite-difference step, relative to `max(|x_i|, 1)`.
    pub fd_step: T,
}

impl<T: Real> Default for BfgsOptions<T> {
    fn default() -> Self {
        BfgsOptions {
            f_tol: T::lit(1e-12),
            g_tol: T::lit(1e-14),
            max_iter: 500,
            fd_step: T::lit(1e-6),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Minimum<T> {
    pub x: Vec<T>,
    pub f: T,
    pub iterations: usize,
    pub converged: bool,
}

pub fn numeric_gradient<T: Real, F: Fn(&[T]) -> T>(f: &F, x: &[T], rel_step: T) -> Vec<T> {
    let mut probe = x.to_vec();
    let two = T::lit(2.0);
    (0..x.len())
        .map(|i| {
            let h = rel_step * x[i].abs().max(T::one());
            probe[i] = x[i] + h;
            let up = f(&probe);
            probe[i] = x[i] - h;
            let down = f(&probe);
            probe[i] = x[i];
            (up - down) / (two * h)
        })
        .collect()
}

fn dot<T: Real>(a: &[T], b: &[T]) -> T {
    a.iter().zip(b).map(|(&x, &y)| x * y).sum()
}

/// Minimizes `f` from `x0`. Non-finite objective values are treated as
/// +infinity by the line search.
pub fn bfgs<T: Real, F: Fn(&[T]) -> T>(f: F, x0: &[T], opts: &BfgsOptions<T>) -> Minimum<T> {
    let n = x0.len();
    let mut x = x0.to_vec();
    let mut fx = f(&x);
    if !fx.is_finite() {
        return Minimum {
            x,
            f: fx,
            iterations: 0,
            converged: false,
        };
    }
    let identity = |h: &mut Vec<T>| {
        h.iter_mut().for_each(|v| *v = T::zero());
        for i in 0..n {
            h[i * n + i] = T::one();
        }
    };
    let mut h_inv = vec![T::zero(); n * n];
    identity(&mut h_inv);
    let mut g = numeric_gradient(&f, &x, opts.fd_step);
    let c1 = T::lit(1e-4);
    let half = T::lit(0.5);

    for iter in 0..opts.max_iter {
        if g.iter().all(|gi| gi.abs() < opts.g_tol) {
            return Minimum {
                x,
                f: fx,
                iterations: iter,
                converged: true,
            };
        }
        let mut dir: Vec<T> = (0..n)
            .map(|i| -(0..n).map(|j| h_inv[i * n + j] * g[j]).sum::<T>())
            .collect();
        let mut slope = dot(&dir, &g);
        if !(slope < T::zero()) {
            identity(&mut h_inv);
            dir = g.iter().map(|&gi| -gi).collect();
            slope = dot(&dir, &g);
        }

        let mut step = T::one();
        let mut accepted = None;
        for _ in 0..60 {
            let trial: Vec<T> = x.iter().zip(&dir).map(|(&xi, &di)| xi + step * di).collect();
            let ft = f(&trial);
            if ft.is_finite() && ft <= fx + c1 * step * slope {
                accepted = Some((trial, ft));
                break;
            }
            step = step * half;
        }
        let Some((x_new, f_new)) = accepted else {
            // No descent possible along the quasi-Newton or gradient direction.
            let stalled = h_inv.iter().enumerate().all(|(k, &v)| {
                v == if k % (n + 1) == 0 { T::one() } else { T::zero() }
            });
            if stalled {
                return Minimum {
                    x,
                    f: fx,
                    iterations: iter,
                    converged: g.iter().all(|gi| gi.abs() < opts.g_tol.sqrt()),
                };
            }
            identity(&mut h_inv);
            continue;
        };

        let improvement = fx - f_new;
        let g_new = numeric_gradient(&f, &x_new, opts.fd_step);
        let s: Vec<T> = x_new.iter().zip(&x).map(|(&a, &b)| a - b).collect();
        let y: Vec<T> = g_new.iter().zip(&g).map(|(&a, &b)| a - b).collect();
        x = x_new;
        fx = f_new;
        g = g_new;
        if improvement < opts.f_tol {
            return Minimum {
                x,
                f: fx,
                iterations: iter + 1,
                converged: true,
            };
        }

        let sy = dot(&s, &y);
        if sy > T::epsilon() * dot(&s, &s).sqrt() * dot(&y, &y).sqrt() {
            let rho = T::one() / sy;
            let hy: Vec<T> = (0..n)
                .map(|i| (0..n).map(|j| h_inv[i * n + j] * y[j]).sum())
                .collect();
            let yhy = dot(&y, &hy);
            for i in 0..n {
                for j in 0..n {
                    h_inv[i * n + j] = h_inv[i * n + j] - rho * (hy[i] * s[j] + s[i] * hy[j])
                        + (rho * rho * yhy + rho) * s[i] * s[j];
                }
            }
        }
    }
    Minimum {
        x,
        f: fx,
        iterations: opts.max_iter,
        converged: false,
    }
}
