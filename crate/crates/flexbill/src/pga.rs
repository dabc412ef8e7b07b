//! Projected gradient ascent over a box `[0, upper]` with Armijo
//! backtracking. Shared by the central oracle and the numeric best-response
//! fallback; entries with `upper == 0` are pinned, which encodes infeasible
//! slots without a separate mask.

pub(crate) struct PgaOptions {
    /// Stop when the projected-gradient sup-norm falls below this.
    pub tol: f64,
    pub max_iters: usize,
    /// Upper bound on the gradient's Lipschitz constant; sets the initial
    /// step to `1/lipschitz`.
    pub lipschitz: f64,
}

pub(crate) struct PgaOutcome {
    pub x: Vec<f64>,
    pub pg_norm: f64,
    pub iterations: usize,
    pub converged: bool,
}

/// Sup-norm of the projected gradient: the first-order optimality residual
/// for box-constrained maximization.
pub(crate) fn projected_gradient_norm(x: &[f64], grad: &[f64], upper: &[f64]) -> f64 {
    let mut worst: f64 = 0.0;
    for ((&xi, &gi), &ui) in x.iter().zip(grad).zip(upper) {
        let r = if ui <= 0.0 {
            0.0 // pinned entry, no feasible move
        } else if xi <= 0.0 {
            gi.max(0.0)
        } else if xi >= ui {
            (-gi).max(0.0)
        } else {
            gi.abs()
        };
        worst = worst.max(r);
    }
    worst
}

pub(crate) fn maximize_box<F, G>(
    f: F,
    grad_fn: G,
    upper: &[f64],
    x0: Vec<f64>,
    opts: &PgaOptions,
) -> PgaOutcome
where
    F: Fn(&[f64]) -> f64,
    G: Fn(&[f64], &mut [f64]),
{
    let dim = x0.len();
    let mut x: Vec<f64> = x0
        .iter()
        .zip(upper)
        .map(|(&v, &u)| v.clamp(0.0, u))
        .collect();
    let mut grad = vec![0.0; dim];
    let mut fx = f(&x);
    let base_step = 1.0 / opts.lipschitz.max(1e-12);

    let mut pg_norm = f64::INFINITY;
    let mut iterations = 0;
    for iter in 0..opts.max_iters {
        iterations = iter;
        grad_fn(&x, &mut grad);
        pg_norm = projected_gradient_norm(&x, &grad, upper);
        if pg_norm <= opts.tol {
            return PgaOutcome {
                x,
                pg_norm,
                iterations: iter,
                converged: true,
            };
        }

        let mut step = base_step;
        let mut accepted = false;
        for _ in 0..60 {
            let candidate: Vec<f64> = x
                .iter()
                .zip(&grad)
                .zip(upper)
                .map(|((&xi, &gi), &ui)| (xi + step * gi).clamp(0.0, ui))
                .collect();
            let ascent: f64 = grad
                .iter()
                .zip(&candidate)
                .zip(&x)
                .map(|((&g, &c), &xi)| g * (c - xi))
                .sum();
            let fc = f(&candidate);
            // Late steps improve f by less than its floating-point
            // resolution; the noise allowance keeps them from being
            // rejected (the step is a guaranteed ascent at 1/L).
            let noise = 4e-15 * fx.abs().max(fc.abs());
            if fc >= fx + 1e-4 * ascent - noise {
                x = candidate;
                fx = fc;
                accepted = true;
                break;
            }
            step *= 0.5;
        }
        if !accepted {
            // Step collapsed to nothing; the iterate is as good as the line
            // search can make it.
            break;
        }
    }
    PgaOutcome {
        x,
        pg_norm,
        iterations,
        converged: pg_norm <= opts.tol,
    }
}
