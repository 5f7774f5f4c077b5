use std::collections::VecDeque;

use super::SolveOptions;
use crate::error::Result;
use crate::scalar::Real;

pub(crate) struct Outcome<T> {
    pub x: Vec<T>,
    pub f: T,
    pub grad_norm: T,
    pub iterations: usize,
    pub converged: bool,
    pub history: Vec<T>,
}

const ARMIJO_C1: f64 = 1e-4;
const BACKTRACK: f64 = 0.5;
const MAX_BACKTRACKS: usize = 60;
/// Consecutive iterations without a decrease above roundoff before giving up.
const STALL_LIMIT: usize = 25;

fn dot<T: Real>(a: &[T], b: &[T]) -> T {
    a.iter().zip(b).map(|(&x, &y)| x * y).sum()
}

fn sup<T: Real>(a: &[T]) -> T {
    a.iter().fold(T::zero(), |m, v| m.max(v.abs()))
}

/// Limited-memory BFGS with Armijo backtracking. Accepted energies are
/// nonincreasing. A step whose predicted decrease is below the roundoff level
/// of `f` is accepted when it does not increase `f`; backtracking stops once
/// the predicted decrease is a thousandth of that level. The run ends
/// unconverged after `STALL_LIMIT` iterations in a row that fail to lower `f`
/// by more than roundoff.
pub(crate) fn lbfgs<T: Real>(
    eval: impl Fn(&[T]) -> Result<(T, Vec<T>)>,
    x0: Vec<T>,
    opts: &SolveOptions,
) -> Result<Outcome<T>> {
    let tol = T::lit(opts.grad_tol);
    let c1 = T::lit(ARMIJO_C1);
    let mut x = x0;
    let (mut f, mut g) = eval(&x)?;
    let mut history = vec![f];
    let mut mem: VecDeque<(Vec<T>, Vec<T>, T)> = VecDeque::with_capacity(opts.history);
    let mut iterations = 0;
    let mut converged = false;
    let mut stalled = 0;
    let n = x.len();

    loop {
        let gnorm = sup(&g);
        if gnorm <= tol {
            converged = true;
            break;
        }
        if iterations >= opts.max_iter || stalled >= STALL_LIMIT {
            break;
        }

        let mut d = two_loop(&g, &mem);
        let mut gd = dot(&g, &d);
        if !(gd < T::zero()) || mem.is_empty() {
            mem.clear();
            let scale = T::one().min(T::one() / gnorm);
            d = g.iter().map(|&v| -v * scale).collect();
            gd = dot(&g, &d);
        }

        let roundoff = T::lit(64.0) * T::epsilon() * (T::one() + f.abs());
        let mut alpha = T::one();
        let mut accepted = None;
        let mut trial = vec![T::zero(); n];
        for _ in 0..MAX_BACKTRACKS {
            if -alpha * gd < roundoff * T::lit(1e-3) {
                break;
            }
            for i in 0..n {
                trial[i] = x[i] + alpha * d[i];
            }
            if let Ok((ft, gt)) = eval(&trial) {
                let armijo = ft <= f + c1 * alpha * gd;
                let flat = ft <= f && -alpha * gd <= roundoff;
                if armijo || flat {
                    accepted = Some((ft, gt));
                    break;
                }
            }
            alpha = alpha * T::lit(BACKTRACK);
        }

        let Some((ft, gt)) = accepted else {
            if mem.is_empty() {
                break;
            }
            mem.clear();
            iterations += 1;
            stalled += 1;
            continue;
        };
        if f - ft > roundoff {
            stalled = 0;
        } else {
            stalled += 1;
        }

        let s: Vec<T> = (0..n).map(|i| trial[i] - x[i]).collect();
        let y: Vec<T> = (0..n).map(|i| gt[i] - g[i]).collect();
        let sy = dot(&s, &y);
        if sy > T::lit(1e-12) * dot(&s, &s).sqrt() * dot(&y, &y).sqrt() && sy > T::zero() {
            if mem.len() == opts.history {
                mem.pop_front();
            }
            mem.push_back((s, y, T::one() / sy));
        }
        debug_assert!(ft <= f);
        x.copy_from_slice(&trial);
        f = ft;
        g = gt;
        history.push(f);
        iterations += 1;
    }

    Ok(Outcome {
        grad_norm: sup(&g),
        x,
        f,
        iterations,
        converged,
        history,
    })
}

fn two_loop<T: Real>(g: &[T], mem: &VecDeque<(Vec<T>, Vec<T>, T)>) -> Vec<T> {
    let mut q = g.to_vec();
    let mut alphas = Vec::with_capacity(mem.len());
    for (s, y, rho) in mem.iter().rev() {
        let a = *rho * dot(s, &q);
        for (qi, &yi) in q.iter_mut().zip(y) {
            *qi = *qi - a * yi;
        }
        alphas.push(a);
    }
    if let Some((s, y, _)) = mem.back() {
        let gamma = dot(s, y) / dot(y, y);
        q.iter_mut().for_each(|v| *v = *v * gamma);
    }
    for ((s, y, rho), a) in mem.iter().zip(alphas.into_iter().rev()) {
        let b = *rho * dot(y, &q);
        for (qi, &si) in q.iter_mut().zip(s) {
            *qi = *qi + si * (a - b);
        }
    }
    q.iter_mut().for_each(|v| *v = -*v);
    q
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rosenbrock(x: &[f64]) -> Result<(f64, Vec<f64>)> {
        let mut f = 0.0;
        let mut g = vec![0.0; x.len()];
        for i in 0..x.len() - 1 {
            let a = x[i + 1] - x[i] * x[i];
            let b = 1.0 - x[i];
            f += 100.0 * a * a + b * b;
            g[i] += -400.0 * a * x[i] - 2.0 * b;
            g[i + 1] += 200.0 * a;
        }
        Ok((f, g))
    }

    #[test]
    fn solves_rosenbrock_monotonically() {
        let opts = SolveOptions::default();
        let out = lbfgs(rosenbrock, vec![-1.2, 1.0, -0.5, 0.8], &opts).unwrap();
        assert!(out.converged, "grad {}", out.grad_norm);
        assert!(out.x.iter().all(|&v| (v - 1.0).abs() < 1e-6));
        assert!(out.history.windows(2).all(|w| w[1] <= w[0]));
        assert_eq!(out.history.len(), out.iterations + 1);
    }

    #[test]
    fn zero_iterations_at_critical_point() {
        let out = lbfgs(rosenbrock, vec![1.0; 3], &SolveOptions::default()).unwrap();
        assert!(out.converged);
        assert_eq!(out.iterations, 0);
    }

    #[test]
    fn respects_iteration_cap() {
        let opts = SolveOptions {
            max_iter: 3,
            ..SolveOptions::default()
        };
        let out = lbfgs(rosenbrock, vec![-1.2, 1.0], &opts).unwrap();
        assert!(!out.converged);
        assert!(out.iterations <= 3);
    }
}
