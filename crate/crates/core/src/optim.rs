//! Derivative-free minimization (Nelder–Mead simplex).

#[derive(Debug, Clone, Copy)]
pub struct NelderMeadOptions {
    pub max_iters: usize,
    /// Stop once the spread of simplex values falls below
    /// `f_tol * (1 + |f_best|)` ...
    pub f_tol: f64,
    /// ... and every vertex lies within `x_tol` of the best vertex.
    pub x_tol: f64,
}

impl Default for NelderMeadOptions {
    fn default() -> Self {
        Self { max_iters: 5000, f_tol: 1e-15, x_tol: 1e-12 }
    }
}

#[derive(Debug, Clone)]
pub struct NelderMeadResult {
    pub x: Vec<f64>,
    pub f: f64,
    pub iterations: usize,
    /// Best objective value after each iteration; non-increasing.
    pub history: Vec<f64>,
    pub converged: bool,
}

pub fn nelder_mead<F>(mut f: F, x0: &[f64], steps: &[f64], opts: &NelderMeadOptions) -> NelderMeadResult
where
    F: FnMut(&[f64]) -> f64,
{
    let n = x0.len();
    assert_eq!(steps.len(), n, "one initial step per coordinate");
    let mut eval = |x: &[f64]| {
        let v = f(x);
        if v.is_finite() {
            v
        } else {
            f64::INFINITY
        }
    };

    let mut simplex: Vec<(Vec<f64>, f64)> = Vec::with_capacity(n + 1);
    simplex.push((x0.to_vec(), eval(x0)));
    for i in 0..n {
        let mut x = x0.to_vec();
        x[i] += steps[i];
        let v = eval(&x);
        simplex.push((x, v));
    }

    let mut history = Vec::new();
    let mut converged = false;
    let mut iterations = 0;
    while iterations < opts.max_iters {
        // Stable sort keeps earlier vertices first on ties.
        simplex.sort_by(|a, b| a.1.total_cmp(&b.1));
        let best = simplex[0].1;
        let worst = simplex[n].1;
        let spread = worst - best;
        let size = simplex[1..]
            .iter()
            .flat_map(|(x, _)| x.iter().zip(&simplex[0].0).map(|(a, b)| (a - b).abs()))
            .fold(0.0f64, f64::max);
        if spread <= opts.f_tol * (1.0 + best.abs()) && size <= opts.x_tol {
            converged = true;
            break;
        }
        iterations += 1;

        let mut centroid = vec![0.0; n];
        for (x, _) in &simplex[..n] {
            for (c, xi) in centroid.iter_mut().zip(x) {
                *c += xi / n as f64;
            }
        }
        let along = |t: f64, worst: &[f64]| -> Vec<f64> {
            centroid.iter().zip(worst).map(|(c, w)| c + t * (w - c)).collect()
        };

        let worst_x = simplex[n].0.clone();
        let reflected = along(-1.0, &worst_x);
        let f_r = eval(&reflected);
        if f_r < simplex[0].1 {
            let expanded = along(-2.0, &worst_x);
            let f_e = eval(&expanded);
            simplex[n] = if f_e < f_r { (expanded, f_e) } else { (reflected, f_r) };
        } else if f_r < simplex[n - 1].1 {
            simplex[n] = (reflected, f_r);
        } else {
            let (contracted, f_c) = if f_r < simplex[n].1 {
                let x = along(-0.5, &worst_x);
                let v = eval(&x);
                (x, v)
            } else {
                let x = along(0.5, &worst_x);
                let v = eval(&x);
                (x, v)
            };
            if f_c < simplex[n].1.min(f_r) {
                simplex[n] = (contracted, f_c);
            } else {
                let best_x = simplex[0].0.clone();
                for (x, v) in simplex.iter_mut().skip(1) {
                    for (xi, bi) in x.iter_mut().zip(&best_x) {
                        *xi = bi + 0.5 * (*xi - bi);
                    }
                    *v = eval(x);
                }
            }
        }
        let current = simplex.iter().map(|(_, v)| *v).fold(f64::INFINITY, f64::min);
        history.push(current);
    }
    simplex.sort_by(|a, b| a.1.total_cmp(&b.1));
    let (x, f) = simplex.swap_remove(0);
    NelderMeadResult { x, f, iterations, history, converged }
}
