// Copyright 2026 The spinreg Authors
// SPDX-License-Identifier: Apache-2.0

//! Derivative-free minimisation in a box.

/// Search box for one parameter.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Bound {
    pub lo: f64,
    pub hi: f64,
}

impl Bound {
    pub fn new(lo: f64, hi: f64) -> Self {
        Self { lo: lo.min(hi), hi: lo.max(hi) }
    }

    pub fn clamp(&self, x: f64) -> f64 {
        x.clamp(self.lo, self.hi)
    }

    pub fn width(&self) -> f64 {
        self.hi - self.lo
    }

    /// `n` evenly spaced points including both ends.
    pub fn grid(&self, n: usize) -> Vec<f64> {
        if n <= 1 {
            return vec![0.5 * (self.lo + self.hi)];
        }
        (0..n).map(|i| self.lo + self.width() * i as f64 / (n - 1) as f64).collect()
    }
}

#[derive(Clone, Copy, Debug)]
pub struct NelderMeadOptions {
    pub max_evals: usize,
    /// Stop when the simplex spread of function values falls below this.
    pub ftol: f64,
    /// Stop when every vertex lies within this distance of the best, in units
    /// of the initial step.
    pub xtol: f64,
}

impl Default for NelderMeadOptions {
    fn default() -> Self {
        Self { max_evals: 2000, ftol: 1e-14, xtol: 1e-8 }
    }
}

#[derive(Clone, Debug)]
pub struct Minimum {
    pub x: Vec<f64>,
    pub value: f64,
    pub evals: usize,
    pub converged: bool,
}

/// Nelder-Mead simplex with vertices projected into `bounds`.
pub fn nelder_mead<F>(mut f: F, x0: &[f64], step: &[f64], bounds: &[Bound], opts: NelderMeadOptions) -> Minimum
where
    F: FnMut(&[f64]) -> f64,
{
    let n = x0.len();
    let project = |x: &mut Vec<f64>| {
        for (xi, b) in x.iter_mut().zip(bounds) {
            *xi = b.clamp(*xi);
        }
    };
    let mut evals = 0usize;
    let mut eval = |x: &[f64], evals: &mut usize| {
        *evals += 1;
        let v = f(x);
        if v.is_nan() {
            f64::INFINITY
        } else {
            v
        }
    };
    let mut simplex: Vec<Vec<f64>> = Vec::with_capacity(n + 1);
    let mut start = x0.to_vec();
    project(&mut start);
    simplex.push(start);
    for i in 0..n {
        let mut v = simplex[0].clone();
        v[i] += step[i];
        if v[i] > bounds[i].hi {
            v[i] = simplex[0][i] - step[i];
        }
        project(&mut v);
        simplex.push(v);
    }
    let mut values: Vec<f64> = simplex.iter().map(|v| eval(v, &mut evals)).collect();
    let mut converged = false;
    while evals < opts.max_evals {
        let mut order: Vec<usize> = (0..=n).collect();
        order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
        simplex = order.iter().map(|&i| simplex[i].clone()).collect();
        values = order.iter().map(|&i| values[i]).collect();

        let spread_f = values[n] - values[0];
        let spread_x = simplex[1..]
            .iter()
            .flat_map(|v| v.iter().zip(&simplex[0]).zip(step).map(|((a, b), s)| ((a - b) / s).abs()))
            .fold(0.0, f64::max);
        let flat = spread_f.abs() <= opts.ftol * (1.0 + values[0].abs()) && spread_x <= 1e-3;
        if flat || spread_x <= opts.xtol {
            converged = true;
            break;
        }

        let centroid: Vec<f64> = (0..n).map(|j| simplex[..n].iter().map(|v| v[j]).sum::<f64>() / n as f64).collect();
        let along = |t: f64| {
            let mut p: Vec<f64> = (0..n).map(|j| centroid[j] + t * (simplex[n][j] - centroid[j])).collect();
            project(&mut p);
            p
        };
        let reflected = along(-1.0);
        let fr = eval(&reflected, &mut evals);
        if fr < values[0] {
            let expanded = along(-2.0);
            let fe = eval(&expanded, &mut evals);
            if fe < fr {
                simplex[n] = expanded;
                values[n] = fe;
            } else {
                simplex[n] = reflected;
                values[n] = fr;
            }
        } else if fr < values[n - 1] {
            simplex[n] = reflected;
            values[n] = fr;
        } else {
            let (contracted, fc) = if fr < values[n] {
                let p = along(-0.5);
                let v = eval(&p, &mut evals);
                (p, v)
            } else {
                let p = along(0.5);
                let v = eval(&p, &mut evals);
                (p, v)
            };
            if fc < values[n].min(fr) {
                simplex[n] = contracted;
                values[n] = fc;
            } else {
                for i in 1..=n {
                    let mut p: Vec<f64> = (0..n).map(|j| simplex[0][j] + 0.5 * (simplex[i][j] - simplex[0][j])).collect();
                    project(&mut p);
                    values[i] = eval(&p, &mut evals);
                    simplex[i] = p;
                }
            }
        }
    }
    let best = (0..=n).min_by(|&a, &b| values[a].total_cmp(&values[b])).unwrap_or(0);
    Minimum { x: simplex[best].clone(), value: values[best], evals, converged }
}
