use super::sparse::ResidualBlock;

/// Nonlinear least-squares problem `min Σ r(x)²` with a sparse Jacobian.
pub trait LeastSquaresProblem: Sync {
    fn dim(&self) -> usize;
    /// Residuals and Jacobian at `x`.
    fn evaluate(&self, x: &[f64]) -> ResidualBlock;
    /// Sum of squared residuals at `x`.
    fn cost(&self, x: &[f64]) -> f64 {
        self.evaluate(x).sum_squares()
    }
    /// Projects a trial point onto the feasible box; identity by default.
    fn clamp(&self, _x: &mut [f64]) {}
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LmOptions {
    /// Initial damping, relative to the diagonal of `JᵀJ`.
    pub initial_damping: f64,
    pub max_iterations: usize,
    pub max_damping: f64,
    /// Stop when an accepted step lowers the cost by less than this fraction.
    pub relative_tolerance: f64,
    pub cg_tolerance: f64,
    pub cg_max_iterations: usize,
}

impl Default for LmOptions {
    fn default() -> Self {
        LmOptions {
            initial_damping: 1e-3,
            max_iterations: 20,
            max_damping: 1e12,
            relative_tolerance: 1e-10,
            cg_tolerance: 1e-10,
            cg_max_iterations: 2000,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LmReport {
    pub x: Vec<f64>,
    pub initial_cost: f64,
    pub final_cost: f64,
    /// Cost after each accepted step, starting with the initial cost.
    pub cost_history: Vec<f64>,
    pub iterations: usize,
    pub accepted: usize,
    /// Set when no step could be accepted before the damping limit.
    pub stalled: bool,
    pub damping: f64,
}

/// Levenberg-Marquardt with Marquardt scaling. Each step solves
/// `(JᵀJ + μ·diag(JᵀJ)) h = -Jᵀr` by Jacobi-preconditioned conjugate
/// gradients, so only products with `J` and `Jᵀ` are needed.
pub fn levenberg_marquardt<P: LeastSquaresProblem>(problem: &P, x0: &[f64], opts: &LmOptions) -> LmReport {
    let n = problem.dim();
    assert_eq!(x0.len(), n);
    let mut x = x0.to_vec();
    let mut block = problem.evaluate(&x);
    let mut cost = block.sum_squares();
    let initial_cost = cost;
    let mut history = vec![cost];
    let mut mu = opts.initial_damping;
    let mut iterations = 0;
    let mut accepted = 0;
    let mut stalled = false;
    let mut fresh = true;
    let mut g = Vec::new();
    let mut diag = Vec::new();

    while iterations < opts.max_iterations {
        if fresh {
            g = block.gradient();
            diag = block.normal_diagonal();
            let floor = 1e-12 * diag.iter().copied().fold(0.0, f64::max).max(1e-300);
            for d in &mut diag {
                *d = d.max(floor);
            }
            fresh = false;
        }
        if g.iter().all(|v| *v == 0.0) || cost == 0.0 {
            break;
        }
        iterations += 1;
        let rhs: Vec<f64> = g.iter().map(|v| -v).collect();
        let h = pcg(&block, &diag, mu, &rhs, opts.cg_tolerance, opts.cg_max_iterations);
        let mut trial: Vec<f64> = x.iter().zip(&h).map(|(a, b)| a + b).collect();
        problem.clamp(&mut trial);
        let trial_cost = problem.cost(&trial);
        if trial_cost < cost {
            let decrease = cost - trial_cost;
            x = trial;
            cost = trial_cost;
            history.push(cost);
            accepted += 1;
            mu = (mu / 3.0).max(1e-15);
            block = problem.evaluate(&x);
            fresh = true;
            if decrease <= opts.relative_tolerance * history[history.len() - 2] {
                break;
            }
        } else {
            mu *= 4.0;
            if mu > opts.max_damping {
                stalled = accepted == 0;
                break;
            }
        }
    }
    LmReport {
        x,
        initial_cost,
        final_cost: cost,
        cost_history: history,
        iterations,
        accepted,
        stalled,
        damping: mu,
    }
}

/// Solves `(JᵀJ + μ D) h = b` with Jacobi-preconditioned CG.
fn pcg(j: &ResidualBlock, d: &[f64], mu: f64, b: &[f64], tol: f64, max_iter: usize) -> Vec<f64> {
    let n = b.len();
    let apply = |v: &[f64]| -> Vec<f64> {
        let jtjv = j.tmul(&j.mul(v));
        jtjv.iter().zip(d).zip(v).map(|((a, di), vi)| a + mu * di * vi).collect()
    };
    let precond: Vec<f64> = d.iter().map(|di| 1.0 / (di * (1.0 + mu))).collect();
    let dot = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>();
    let mut x = vec![0.0; n];
    let mut r = b.to_vec();
    let b_norm = dot(b, b).sqrt();
    if b_norm == 0.0 {
        return x;
    }
    let mut z: Vec<f64> = r.iter().zip(&precond).map(|(a, p)| a * p).collect();
    let mut p = z.clone();
    let mut rz = dot(&r, &z);
    for _ in 0..max_iter.max(1) {
        let ap = apply(&p);
        let pap = dot(&p, &ap);
        if pap <= 0.0 {
            break;
        }
        let alpha = rz / pap;
        for i in 0..n {
            x[i] += alpha * p[i];
            r[i] -= alpha * ap[i];
        }
        if dot(&r, &r).sqrt() <= tol * b_norm {
            break;
        }
        z = r.iter().zip(&precond).map(|(a, p)| a * p).collect();
        let rz_new = dot(&r, &z);
        let beta = rz_new / rz;
        rz = rz_new;
        for i in 0..n {
            p[i] = z[i] + beta * p[i];
        }
    }
    x
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::DVector;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// `r(x) = A x - b` with a sparse random `A`.
    struct Linear {
        a: ResidualBlock,
        b: Vec<f64>,
    }

    impl LeastSquaresProblem for Linear {
        fn dim(&self) -> usize {
            self.a.cols
        }

        fn evaluate(&self, x: &[f64]) -> ResidualBlock {
            let mut out = self.a.clone();
            out.residuals = self.a.mul(x).iter().zip(&self.b).map(|(ax, b)| ax - b).collect();
            out
        }
    }

    fn random_linear(n: usize, seed: u64) -> (Linear, Vec<f64>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut a = ResidualBlock::new(n);
        for i in 0..n {
            a.push_row(0.0, [(i, rng.random_range(1.0..3.0))]);
        }
        for _ in 0..2 * n {
            let i = rng.random_range(0..n);
            let j = rng.random_range(0..n);
            a.push_row(0.0, [(i, rng.random_range(-1.0..1.0)), (j, rng.random_range(-1.0..1.0))]);
        }
        let x_true: Vec<f64> = (0..n).map(|_| rng.random_range(-5.0..5.0)).collect();
        let b = a.mul(&x_true);
        (Linear { a, b }, x_true)
    }

    #[test]
    fn linear_problem_matches_dense_solve() {
        let (p, x_true) = random_linear(80, 3);
        let report = levenberg_marquardt(&p, &vec![0.0; 80], &LmOptions { max_iterations: 100, ..Default::default() });
        let dense = p.a.to_dense();
        let oracle = (dense.transpose() * &dense)
            .lu()
            .solve(&(dense.transpose() * DVector::from_vec(p.b.clone())))
            .unwrap();
        for i in 0..80 {
            assert!((report.x[i] - oracle[i]).abs() < 1e-9);
            assert!((report.x[i] - x_true[i]).abs() < 1e-9);
        }
        assert!(report.cost_history.windows(2).all(|w| w[1] <= w[0]));
    }

    #[test]
    fn pure_regularization_stays_at_zero() {
        let mut a = ResidualBlock::new(5);
        for i in 0..5 {
            a.push_row(0.0, [(i, 0.3f64.sqrt())]);
        }
        let p = Linear { a, b: vec![0.0; 5] };
        let report = levenberg_marquardt(&p, &[0.0; 5], &LmOptions::default());
        assert_eq!(report.x, vec![0.0; 5]);
        assert_eq!(report.final_cost, 0.0);
    }

    /// Rosenbrock-like nonlinear residuals.
    struct Curved;

    impl LeastSquaresProblem for Curved {
        fn dim(&self) -> usize {
            2
        }

        fn evaluate(&self, x: &[f64]) -> ResidualBlock {
            let mut b = ResidualBlock::new(2);
            b.push_row(10.0 * (x[1] - x[0] * x[0]), [(0, -20.0 * x[0]), (1, 10.0)]);
            b.push_row(1.0 - x[0], [(0, -1.0)]);
            b
        }
    }

    #[test]
    fn nonlinear_cost_never_increases() {
        let report = levenberg_marquardt(&Curved, &[-1.2, 1.0], &LmOptions { max_iterations: 200, ..Default::default() });
        assert!(report.cost_history.windows(2).all(|w| w[1] <= w[0]));
        assert!((report.x[0] - 1.0).abs() < 1e-6 && (report.x[1] - 1.0).abs() < 1e-6);
    }
}
