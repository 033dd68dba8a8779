//! Box-constrained local optimizers over log-parameters.

#[derive(Clone, Debug)]
pub(crate) struct Bounds {
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
}

impl Bounds {
    pub fn clamp(&self, x: &mut [f64]) {
        for ((v, lo), hi) in x.iter_mut().zip(&self.lo).zip(&self.hi) {
            *v = v.clamp(*lo, *hi);
        }
    }
}

#[derive(Clone, Debug)]
pub(crate) struct OptimResult {
    pub x: Vec<f64>,
    pub f: f64,
    pub iterations: usize,
    pub evaluations: usize,
    pub converged: bool,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Projected limited-memory BFGS with Armijo backtracking.
///
/// `eval_grad` returns the objective and its gradient, `eval` the objective
/// alone; both return `None` where the objective is undefined, and such points
/// are rejected by the line search. The first trial step of each iteration is
/// evaluated with the gradient; backtracking uses objective values only. Stops
/// when an accepted step improves the objective by less than `tol`, when the
/// projected gradient vanishes, or after `max_iter` iterations.
pub(crate) fn lbfgs<G, F>(
    mut eval_grad: G,
    mut eval: F,
    x0: &[f64],
    bounds: &Bounds,
    max_iter: usize,
    tol: f64,
) -> OptimResult
where
    G: FnMut(&[f64]) -> Option<(f64, Vec<f64>)>,
    F: FnMut(&[f64]) -> Option<f64>,
{
    const MEMORY: usize = 8;
    const MAX_BACKTRACKS: usize = 30;
    let n = x0.len();
    let mut x = x0.to_vec();
    bounds.clamp(&mut x);
    let mut evaluations = 1;
    let valid = |v: &(f64, Vec<f64>)| v.0.is_finite() && v.1.iter().all(|g| g.is_finite());
    let (mut f, mut g) = match eval_grad(&x) {
        Some(v) if valid(&v) => v,
        _ => return OptimResult { x, f: f64::INFINITY, iterations: 0, evaluations, converged: false },
    };
    let mut mem_s: Vec<Vec<f64>> = Vec::new();
    let mut mem_y: Vec<Vec<f64>> = Vec::new();
    let mut converged = false;
    let mut iterations = 0;
    let span = |i: usize| (bounds.hi[i] - bounds.lo[i]).abs() * 1e-12;

    while iterations < max_iter {
        iterations += 1;
        let free: Vec<bool> = (0..n)
            .map(|i| {
                let at_lo = x[i] <= bounds.lo[i] + span(i) && g[i] > 0.0;
                let at_hi = x[i] >= bounds.hi[i] - span(i) && g[i] < 0.0;
                !(at_lo || at_hi)
            })
            .collect();
        let pg_norm = (0..n).filter(|&i| free[i]).map(|i| g[i] * g[i]).sum::<f64>().sqrt();
        if pg_norm < 1e-10 {
            converged = true;
            break;
        }

        let direction = |mem_s: &[Vec<f64>], mem_y: &[Vec<f64>]| -> Vec<f64> {
            // Two-loop recursion on the free variables.
            let mut q: Vec<f64> = g.iter().zip(&free).map(|(gi, &fr)| if fr { *gi } else { 0.0 }).collect();
            let k = mem_s.len();
            let mut alpha = vec![0.0; k];
            for j in (0..k).rev() {
                let rho = 1.0 / dot(&mem_y[j], &mem_s[j]);
                alpha[j] = rho * dot(&mem_s[j], &q);
                for (qi, yi) in q.iter_mut().zip(&mem_y[j]) {
                    *qi -= alpha[j] * yi;
                }
            }
            if k > 0 {
                let gamma = dot(&mem_s[k - 1], &mem_y[k - 1]) / dot(&mem_y[k - 1], &mem_y[k - 1]);
                q.iter_mut().for_each(|v| *v *= gamma);
            }
            for j in 0..k {
                let rho = 1.0 / dot(&mem_y[j], &mem_s[j]);
                let beta = rho * dot(&mem_y[j], &q);
                for (qi, si) in q.iter_mut().zip(&mem_s[j]) {
                    *qi += (alpha[j] - beta) * si;
                }
            }
            q.iter().zip(&free).map(|(v, &fr)| if fr { -v } else { 0.0 }).collect()
        };

        let mut accepted = None;
        // Quasi-Newton direction first, steepest descent as a fallback.
        for attempt in 0..2 {
            if attempt == 1 {
                if mem_s.is_empty() {
                    break;
                }
                mem_s.clear();
                mem_y.clear();
            }
            let mut d = direction(&mem_s, &mem_y);
            if dot(&g, &d) >= 0.0 {
                d = g.iter().zip(&free).map(|(v, &fr)| if fr { -v } else { 0.0 }).collect();
            }
            let dmax = d.iter().fold(0.0f64, |m, v| m.max(v.abs()));
            let mut step = if dmax > 2.0 { 2.0 / dmax } else { 1.0 };
            for trial in 0..MAX_BACKTRACKS {
                let mut xn: Vec<f64> = x.iter().zip(&d).map(|(xi, di)| xi + step * di).collect();
                bounds.clamp(&mut xn);
                let decrease: f64 = g.iter().zip(xn.iter().zip(&x)).map(|(gi, (a, b))| gi * (a - b)).sum();
                evaluations += 1;
                let fnew = if trial == 0 {
                    match eval_grad(&xn) {
                        Some(v) if valid(&v) => {
                            if v.0 <= f + 1e-4 * decrease {
                                accepted = Some((xn, v.0, Some(v.1)));
                                break;
                            }
                            v.0
                        }
                        _ => f64::INFINITY,
                    }
                } else {
                    match eval(&xn) {
                        Some(v) if v.is_finite() => {
                            if v <= f + 1e-4 * decrease {
                                accepted = Some((xn, v, None));
                                break;
                            }
                            v
                        }
                        _ => f64::INFINITY,
                    }
                };
                // Safeguarded quadratic interpolation along the step.
                let slope = decrease / step;
                let next = if fnew.is_finite() && slope < 0.0 {
                    let curv = fnew - f - slope * step;
                    if curv > 0.0 {
                        -slope * step * step / (2.0 * curv)
                    } else {
                        0.5 * step
                    }
                } else {
                    0.25 * step
                };
                step = next.clamp(0.1 * step, 0.5 * step);
            }
            if accepted.is_some() {
                break;
            }
        }
        let Some((xn, fnew, gnew)) = accepted else {
            converged = true;
            break;
        };
        let gnew = match gnew {
            Some(gv) => gv,
            None => {
                evaluations += 1;
                match eval_grad(&xn) {
                    Some(v) if valid(&v) => v.1,
                    _ => break,
                }
            }
        };
        let s: Vec<f64> = xn.iter().zip(&x).map(|(a, b)| a - b).collect();
        let yv: Vec<f64> = gnew.iter().zip(&g).map(|(a, b)| a - b).collect();
        let sy = dot(&s, &yv);
        if sy > 1e-12 * dot(&s, &s).sqrt() * dot(&yv, &yv).sqrt() && sy > 0.0 {
            if mem_s.len() == MEMORY {
                mem_s.remove(0);
                mem_y.remove(0);
            }
            mem_s.push(s);
            mem_y.push(yv);
        }
        let improvement = f - fnew;
        x = xn;
        f = fnew;
        g = gnew;
        if improvement < tol {
            converged = true;
            break;
        }
    }
    OptimResult { x, f, iterations, evaluations, converged }
}

/// Nelder-Mead simplex search, with vertices projected into the box.
pub(crate) fn nelder_mead<F>(mut eval: F, x0: &[f64], bounds: &Bounds, max_iter: usize, tol: f64) -> OptimResult
where
    F: FnMut(&[f64]) -> f64,
{
    let n = x0.len();
    let mut evaluations = 0;
    let mut call = |x: &[f64], evaluations: &mut usize| {
        *evaluations += 1;
        let v = eval(x);
        if v.is_finite() {
            v
        } else {
            f64::INFINITY
        }
    };
    let mut start = x0.to_vec();
    bounds.clamp(&mut start);
    let mut simplex = vec![start.clone()];
    for i in 0..n {
        let mut v = start.clone();
        let step = 0.5;
        v[i] = if v[i] + step <= bounds.hi[i] { v[i] + step } else { v[i] - step };
        bounds.clamp(&mut v);
        simplex.push(v);
    }
    let mut values: Vec<f64> = simplex.iter().map(|v| call(v, &mut evaluations)).collect();
    let mut iterations = 0;
    let mut converged = false;

    while iterations < max_iter {
        iterations += 1;
        let mut order: Vec<usize> = (0..=n).collect();
        order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
        simplex = order.iter().map(|&i| simplex[i].clone()).collect();
        values = order.iter().map(|&i| values[i]).collect();
        if (values[n] - values[0]).abs() < tol {
            converged = true;
            break;
        }
        let centroid: Vec<f64> =
            (0..n).map(|j| simplex[..n].iter().map(|v| v[j]).sum::<f64>() / n as f64).collect();
        let along = |coef: f64| -> Vec<f64> {
            let mut p: Vec<f64> =
                centroid.iter().zip(&simplex[n]).map(|(c, w)| c + coef * (c - w)).collect();
            bounds.clamp(&mut p);
            p
        };
        let xr = along(1.0);
        let fr = call(&xr, &mut evaluations);
        if fr < values[0] {
            let xe = along(2.0);
            let fe = call(&xe, &mut evaluations);
            if fe < fr {
                simplex[n] = xe;
                values[n] = fe;
            } else {
                simplex[n] = xr;
                values[n] = fr;
            }
        } else if fr < values[n - 1] {
            simplex[n] = xr;
            values[n] = fr;
        } else {
            let (xc, fc) = if fr < values[n] {
                let xc = along(0.5);
                let fc = call(&xc, &mut evaluations);
                (xc, fc)
            } else {
                let xc = along(-0.5);
                let fc = call(&xc, &mut evaluations);
                (xc, fc)
            };
            if fc < values[n].min(fr) {
                simplex[n] = xc;
                values[n] = fc;
            } else {
                let best = simplex[0].clone();
                for i in 1..=n {
                    let mut p: Vec<f64> = best.iter().zip(&simplex[i]).map(|(b, v)| b + 0.5 * (v - b)).collect();
                    bounds.clamp(&mut p);
                    values[i] = call(&p, &mut evaluations);
                    simplex[i] = p;
                }
            }
        }
    }
    let best = (0..=n).min_by(|&a, &b| values[a].total_cmp(&values[b])).unwrap_or(0);
    OptimResult { x: simplex[best].clone(), f: values[best], iterations, evaluations, converged }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rosenbrock(x: &[f64]) -> (f64, Vec<f64>) {
        let (a, b) = (x[0], x[1]);
        let f = (1.0 - a).powi(2) + 100.0 * (b - a * a).powi(2);
        let g = vec![-2.0 * (1.0 - a) - 400.0 * a * (b - a * a), 200.0 * (b - a * a)];
        (f, g)
    }

    fn wide() -> Bounds {
        Bounds { lo: vec![-5.0, -5.0], hi: vec![5.0, 5.0] }
    }

    #[test]
    fn lbfgs_finds_rosenbrock_minimum() {
        let r = lbfgs(|x| Some(rosenbrock(x)), |x| Some(rosenbrock(x).0), &[-1.2, 1.0], &wide(), 500, 1e-14);
        assert!((r.x[0] - 1.0).abs() < 1e-4 && (r.x[1] - 1.0).abs() < 1e-4, "{:?}", r);
    }

    #[test]
    fn lbfgs_respects_bounds() {
        let b = Bounds { lo: vec![-5.0, -5.0], hi: vec![0.5, 5.0] };
        let r = lbfgs(|x| Some(rosenbrock(x)), |x| Some(rosenbrock(x).0), &[-1.2, 1.0], &b, 500, 1e-14);
        assert!(r.x[0] <= 0.5 && (r.x[0] - 0.5).abs() < 1e-6, "{:?}", r);
    }

    #[test]
    fn nelder_mead_finds_quadratic_minimum() {
        let r = nelder_mead(|x| (x[0] - 0.3).powi(2) + 2.0 * (x[1] + 1.1).powi(2), &[2.0, 2.0], &wide(), 500, 1e-14);
        assert!((r.x[0] - 0.3).abs() < 1e-5 && (r.x[1] + 1.1).abs() < 1e-5);
    }

    #[test]
    fn never_worse_than_start() {
        let start = [0.9, 0.8];
        let f0 = rosenbrock(&start).0;
        let r = lbfgs(|x| Some(rosenbrock(x)), |x| Some(rosenbrock(x).0), &start, &wide(), 3, 1e-14);
        assert!(r.f <= f0);
        let r = nelder_mead(|x| rosenbrock(x).0, &start, &wide(), 3, 1e-14);
        assert!(r.f <= f0);
    }
}
