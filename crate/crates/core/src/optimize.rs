//! Derivative-free minimization by the Nelder–Mead simplex method.
//!
//! The search is restarted from the best vertex with a fresh simplex until a
//! restart no longer improves the objective by more than `ftol`; this guards
//! against the premature collapse the plain method is prone to. Everything is
//! deterministic: same objective, start and settings give the same iterates.

#[derive(Debug, Clone)]
pub struct NelderMead {
    /// Stop when the objective spread over the simplex is at most this.
    pub ftol: f64,
    /// ... or when every vertex is within this distance of the best one.
    pub xtol: f64,
    /// Budget of objective evaluations over all restarts.
    pub max_evals: usize,
    /// Edge length of the initial simplex, per coordinate.
    pub initial_step: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Minimum {
    pub x: Vec<f64>,
    pub f: f64,
    pub n_evals: usize,
    pub converged: bool,
}

struct Counter<F> {
    f: F,
    evals: usize,
}

impl<F: FnMut(&[f64]) -> f64> Counter<F> {
    fn call(&mut self, x: &[f64]) -> f64 {
        self.evals += 1;
        let v = (self.f)(x);
        if v.is_nan() {
            f64::INFINITY
        } else {
            v
        }
    }
}

impl NelderMead {
    pub fn new(dim: usize) -> Self {
        NelderMead { ftol: 1e-10, xtol: 1e-10, max_evals: 2000, initial_step: vec![1.0; dim] }
    }

    pub fn minimize<F: FnMut(&[f64]) -> f64>(&self, f: F, x0: &[f64]) -> Minimum {
        assert_eq!(x0.len(), self.initial_step.len(), "start point and step differ in dimension");
        let mut obj = Counter { f, evals: 0 };
        let mut best_x = x0.to_vec();
        let mut best_f = obj.call(&best_x);
        loop {
            let (x, fx, converged) = self.run(&mut obj, &best_x);
            let improvement = best_f - fx;
            if fx < best_f {
                best_x = x;
                best_f = fx;
            }
            if obj.evals >= self.max_evals {
                return Minimum { x: best_x, f: best_f, n_evals: obj.evals, converged: false };
            }
            if converged && !(improvement > self.ftol) {
                return Minimum { x: best_x, f: best_f, n_evals: obj.evals, converged: true };
            }
        }
    }

    fn run<F: FnMut(&[f64]) -> f64>(&self, obj: &mut Counter<F>, start: &[f64]) -> (Vec<f64>, f64, bool) {
        const REFLECT: f64 = 1.0;
        const EXPAND: f64 = 2.0;
        const CONTRACT: f64 = 0.5;
        const SHRINK: f64 = 0.5;

        let n = start.len();
        let mut simplex: Vec<(Vec<f64>, f64)> = Vec::with_capacity(n + 1);
        simplex.push((start.to_vec(), obj.call(start)));
        for i in 0..n {
            let mut v = start.to_vec();
            v[i] += self.initial_step[i];
            let fv = obj.call(&v);
            simplex.push((v, fv));
        }

        let mut fresh = true;
        loop {
            // Stable sort keeps ties in insertion order.
            simplex.sort_by(|a, b| a.1.total_cmp(&b.1));
            let f_best = simplex[0].1;
            let f_worst = simplex[n].1;
            let spread = f_worst - f_best;
            let x_spread = simplex[1..]
                .iter()
                .flat_map(|(v, _)| v.iter().zip(&simplex[0].0).map(|(a, b)| (a - b).abs()))
                .fold(0.0, f64::max);
            // A fresh simplex can straddle the minimum with equal values.
            if (!fresh && spread.is_finite() && spread <= self.ftol) || x_spread <= self.xtol {
                return (simplex[0].0.clone(), f_best, true);
            }
            if obj.evals >= self.max_evals {
                return (simplex[0].0.clone(), f_best, false);
            }

            fresh = false;
            let mut centroid = vec![0.0; n];
            for (v, _) in &simplex[..n] {
                for (c, x) in centroid.iter_mut().zip(v) {
                    *c += x / n as f64;
                }
            }
            let toward = |coef: f64, worst: &[f64]| -> Vec<f64> {
                centroid.iter().zip(worst).map(|(c, w)| c + coef * (c - w)).collect()
            };

            let worst = simplex[n].0.clone();
            let xr = toward(REFLECT, &worst);
            let fr = obj.call(&xr);
            if fr < f_best {
                let xe = toward(EXPAND, &worst);
                let fe = obj.call(&xe);
                simplex[n] = if fe < fr { (xe, fe) } else { (xr, fr) };
                continue;
            }
            if fr < simplex[n - 1].1 {
                simplex[n] = (xr, fr);
                continue;
            }
            let (xc, fc) = if fr < f_worst {
                let xc = toward(CONTRACT, &worst);
                let fc = obj.call(&xc);
                (xc, fc)
            } else {
                let xc = toward(-CONTRACT, &worst);
                let fc = obj.call(&xc);
                (xc, fc)
            };
            if fc < fr.min(f_worst) {
                simplex[n] = (xc, fc);
                continue;
            }
            let best = simplex[0].0.clone();
            for (v, fv) in simplex.iter_mut().skip(1) {
                for (x, b) in v.iter_mut().zip(&best) {
                    *x = b + SHRINK * (*x - b);
                }
                *fv = obj.call(v);
            }
        }
    }
}
