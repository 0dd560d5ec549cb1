//! Bounded minimization: Latin-hypercube starts refined by a Nelder-Mead
//! simplex with projection onto the box, and a Levenberg-Marquardt polish
//! for least-squares objectives.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Axis-aligned box `[lower[i], upper[i]]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Bounds {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

impl Bounds {
    pub fn new(lower: Vec<f64>, upper: Vec<f64>) -> Self {
        assert_eq!(lower.len(), upper.len());
        assert!(lower.iter().zip(&upper).all(|(l, u)| l < u));
        Bounds { lower, upper }
    }

    pub fn dim(&self) -> usize {
        self.lower.len()
    }

    pub fn clamp(&self, x: &mut [f64]) {
        for (i, v) in x.iter_mut().enumerate() {
            *v = v.clamp(self.lower[i], self.upper[i]);
        }
    }

    fn from_unit(&self, u: &[f64]) -> Vec<f64> {
        u.iter()
            .enumerate()
            .map(|(i, t)| self.lower[i] + t * (self.upper[i] - self.lower[i]))
            .collect()
    }

    fn to_unit(&self, x: &[f64]) -> Vec<f64> {
        x.iter()
            .enumerate()
            .map(|(i, v)| (v - self.lower[i]) / (self.upper[i] - self.lower[i]))
            .collect()
    }
}

/// Latin-hypercube sample of `n` points in the box: each axis is cut into
/// `n` strata and every stratum holds exactly one point.
pub fn latin_hypercube(bounds: &Bounds, n: usize, seed: u64) -> Vec<Vec<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let d = bounds.dim();
    let mut unit = vec![vec![0.0; d]; n];
    for axis in 0..d {
        let mut strata: Vec<usize> = (0..n).collect();
        strata.shuffle(&mut rng);
        for (point, stratum) in unit.iter_mut().zip(strata) {
            point[axis] = (stratum as f64 + rng.random::<f64>()) / n as f64;
        }
    }
    unit.iter().map(|u| bounds.from_unit(u)).collect()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SimplexOptions {
    pub max_iters: usize,
    /// Stop when the spread of objective values across the simplex falls
    /// below this.
    pub f_tol: f64,
    /// ... and the simplex diameter (in unit-box coordinates) below this.
    pub x_tol: f64,
    /// Initial edge length in unit-box coordinates.
    pub initial_step: f64,
}

impl Default for SimplexOptions {
    fn default() -> Self {
        SimplexOptions {
            max_iters: 2000,
            f_tol: 1e-14,
            x_tol: 1e-9,
            initial_step: 0.1,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Minimum {
    pub x: Vec<f64>,
    pub f: f64,
    pub iters: usize,
    pub n_evals: usize,
    pub converged: bool,
}

/// Nelder-Mead in normalized coordinates; every trial point is clamped to
/// the unit box before evaluation, so the objective never sees a point
/// outside `bounds`.
pub fn nelder_mead<F>(f: F, start: &[f64], bounds: &Bounds, opts: &SimplexOptions) -> Minimum
where
    F: Fn(&[f64]) -> f64,
{
    let d = bounds.dim();
    let mut n_evals = 0usize;
    let mut eval = |u: &[f64]| -> f64 {
        n_evals += 1;
        let v = f(&bounds.from_unit(u));
        if v.is_nan() {
            f64::INFINITY
        } else {
            v
        }
    };
    let project = |u: &mut Vec<f64>| {
        for v in u.iter_mut() {
            *v = v.clamp(0.0, 1.0);
        }
    };

    let mut x0 = bounds.to_unit(start);
    project(&mut x0);
    let mut simplex: Vec<Vec<f64>> = Vec::with_capacity(d + 1);
    simplex.push(x0.clone());
    for i in 0..d {
        let mut v = x0.clone();
        // step inward when the start sits near the upper face
        v[i] += if v[i] + opts.initial_step <= 1.0 {
            opts.initial_step
        } else {
            -opts.initial_step
        };
        simplex.push(v);
    }
    let mut values: Vec<f64> = simplex.iter().map(|v| eval(v)).collect();

    let mut iters = 0;
    let mut converged = false;
    while iters < opts.max_iters {
        let mut order: Vec<usize> = (0..=d).collect();
        order.sort_by(|&i, &j| values[i].total_cmp(&values[j]));
        simplex = order.iter().map(|&i| simplex[i].clone()).collect();
        values = order.iter().map(|&i| values[i]).collect();

        let spread = values[d] - values[0];
        let diameter = simplex[1..]
            .iter()
            .map(|v| {
                v.iter()
                    .zip(&simplex[0])
                    .map(|(a, b)| (a - b).abs())
                    .fold(0.0, f64::max)
            })
            .fold(0.0, f64::max);
        if spread.abs() <= opts.f_tol && diameter <= opts.x_tol {
            converged = true;
            break;
        }
        iters += 1;

        let centroid: Vec<f64> = (0..d)
            .map(|j| simplex[..d].iter().map(|v| v[j]).sum::<f64>() / d as f64)
            .collect();
        let along = |t: f64| -> Vec<f64> {
            let mut p: Vec<f64> = centroid
                .iter()
                .zip(&simplex[d])
                .map(|(c, w)| c + t * (c - w))
                .collect();
            project(&mut p);
            p
        };

        let reflected = along(1.0);
        let fr = eval(&reflected);
        if fr < values[0] {
            let expanded = along(2.0);
            let fe = eval(&expanded);
            if fe < fr {
                simplex[d] = expanded;
                values[d] = fe;
            } else {
                simplex[d] = reflected;
                values[d] = fr;
            }
            continue;
        }
        if fr < values[d - 1] {
            simplex[d] = reflected;
            values[d] = fr;
            continue;
        }
        let (contracted, fc) = if fr < values[d] {
            let p = along(0.5);
            let v = eval(&p);
            (p, v)
        } else {
            let p = along(-0.5);
            let v = eval(&p);
            (p, v)
        };
        if fc < values[d].min(fr) {
            simplex[d] = contracted;
            values[d] = fc;
            continue;
        }
        for i in 1..=d {
            let shrunk: Vec<f64> = simplex[0]
                .iter()
                .zip(&simplex[i])
                .map(|(b, v)| b + 0.5 * (v - b))
                .collect();
            values[i] = eval(&shrunk);
            simplex[i] = shrunk;
        }
    }

    let best = (0..=d)
        .min_by(|&i, &j| values[i].total_cmp(&values[j]))
        .expect("simplex is non-empty");
    let mut x = bounds.from_unit(&simplex[best]);
    bounds.clamp(&mut x);
    Minimum {
        x,
        f: values[best],
        iters,
        n_evals,
        converged,
    }
}

/// Runs the simplex, then restarts it from its own minimum until a restart
/// stops improving. Simplex searches often stall on a collapsed simplex;
/// restarting rebuilds it at full size around the incumbent.
pub fn nelder_mead_restarted<F>(
    f: F,
    start: &[f64],
    bounds: &Bounds,
    opts: &SimplexOptions,
    max_restarts: usize,
) -> Minimum
where
    F: Fn(&[f64]) -> f64,
{
    let mut best = nelder_mead(&f, start, bounds, opts);
    let mut total_evals = best.n_evals;
    let mut total_iters = best.iters;
    for _ in 0..max_restarts {
        let next = nelder_mead(&f, &best.x, bounds, opts);
        total_evals += next.n_evals;
        total_iters += next.iters;
        let improved = next.f < best.f - opts.f_tol;
        if next.f <= best.f {
            best = Minimum {
                converged: next.converged,
                ..next
            };
        }
        if !improved {
            break;
        }
    }
    best.n_evals = total_evals;
    best.iters = total_iters;
    best
}

/// Solves `a x = b` by Gaussian elimination with partial pivoting.
fn solve(mut a: Vec<Vec<f64>>, mut b: Vec<f64>) -> Option<Vec<f64>> {
    let n = b.len();
    for col in 0..n {
        let pivot = (col..n).max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs()))?;
        if !(a[pivot][col].abs() > 1e-300) {
            return None;
        }
        a.swap(col, pivot);
        b.swap(col, pivot);
        for row in col + 1..n {
            let factor = a[row][col] / a[col][col];
            for k in col..n {
                a[row][k] -= factor * a[col][k];
            }
            b[row] -= factor * b[col];
        }
    }
    let mut x = vec![0.0; n];
    for row in (0..n).rev() {
        let tail: f64 = (row + 1..n).map(|k| a[row][k] * x[k]).sum();
        x[row] = (b[row] - tail) / a[row][row];
    }
    x.iter().all(|v| v.is_finite()).then_some(x)
}

fn sum_squares(r: &[f64]) -> f64 {
    r.iter().map(|v| v * v).sum()
}

/// Levenberg-Marquardt refinement of a least-squares problem inside the
/// box. `residuals` returns `None` at infeasible points. Trial points are
/// clamped to the box and kept only when they lower the sum of squares,
/// so the result is never worse than `start`.
pub fn levenberg_marquardt<F>(residuals: F, start: &[f64], bounds: &Bounds, max_iters: usize) -> Minimum
where
    F: Fn(&[f64]) -> Option<Vec<f64>>,
{
    let n = bounds.dim();
    let mut x = start.to_vec();
    bounds.clamp(&mut x);
    let mut n_evals = 1;
    let Some(mut r) = residuals(&x) else {
        return Minimum {
            x,
            f: f64::INFINITY,
            iters: 0,
            n_evals,
            converged: false,
        };
    };
    let mut f = sum_squares(&r);
    let mut lambda = 1e-3;
    let mut iters = 0;
    let mut converged = false;
    while iters < max_iters && f > 0.0 {
        iters += 1;
        // Central differences, one-sided at a bound.
        let mut jac = vec![vec![0.0; n]; r.len()];
        let mut usable = true;
        for i in 0..n {
            let h = 1e-6 * (bounds.upper[i] - bounds.lower[i]);
            let hi = (x[i] + h).min(bounds.upper[i]);
            let lo = (x[i] - h).max(bounds.lower[i]);
            let eval_at = |v: f64| {
                if v == x[i] {
                    return Some(r.clone());
                }
                let mut xh = x.clone();
                xh[i] = v;
                residuals(&xh)
            };
            n_evals += 2;
            match (eval_at(hi), eval_at(lo)) {
                (Some(rp), Some(rm)) => {
                    for (row, (a, b)) in jac.iter_mut().zip(rp.iter().zip(&rm)) {
                        row[i] = (a - b) / (hi - lo);
                    }
                }
                _ => usable = false,
            }
        }
        if !usable {
            break;
        }
        let mut jtj = vec![vec![0.0; n]; n];
        let mut jtr = vec![0.0; n];
        for (row, ri) in jac.iter().zip(&r) {
            for i in 0..n {
                jtr[i] += row[i] * ri;
                for k in 0..n {
                    jtj[i][k] += row[i] * row[k];
                }
            }
        }
        let mut accepted = false;
        while lambda < 1e12 {
            let mut damped = jtj.clone();
            for (i, row) in damped.iter_mut().enumerate() {
                row[i] += lambda * (jtj[i][i] + 1e-12);
            }
            let Some(delta) = solve(damped, jtr.iter().map(|g| -g).collect()) else {
                lambda *= 4.0;
                continue;
            };
            let mut trial: Vec<f64> = x.iter().zip(&delta).map(|(a, d)| a + d).collect();
            bounds.clamp(&mut trial);
            n_evals += 1;
            if let Some(rt) = residuals(&trial) {
                let ft = sum_squares(&rt);
                if ft < f {
                    x = trial;
                    r = rt;
                    f = ft;
                    lambda = (lambda / 3.0).max(1e-12);
                    accepted = true;
                    break;
                }
            }
            lambda *= 4.0;
        }
        if !accepted {
            converged = true;
            break;
        }
    }
    Minimum {
        x,
        f,
        iters,
        n_evals,
        converged,
    }
}
