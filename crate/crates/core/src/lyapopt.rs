//! Sum-of-squares Lyapunov family `L(x) = s_d(x)' P'P s_d(x)` and the
//! particle swarm search over `P` that maximizes the volume of the DOA
//! estimate's state projection.

use crate::doa::{doa_pipeline, NegDefSpec};
use crate::error::{Error, Result};
use crate::expr::{BinOp, ExprAst, PlantModel};
use crate::interval::IvBox;
use nalgebra::DMatrix;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

/// Full-rank guard on `P`; below this the candidate is rejected with the
/// penalty objective.
pub const RANK_GUARD: f64 = 1e-6;

/// Monomial basis size: all monomials of total degree 1..=d in n
/// variables.
pub fn basis_len(n: usize, d: usize) -> usize {
    binomial(n + d, d) - 1
}

fn binomial(n: usize, k: usize) -> usize {
    let k = k.min(n - k);
    let mut acc = 1usize;
    for i in 0..k {
        acc = acc * (n - i) / (i + 1);
    }
    acc
}

/// Exponent vectors of the basis in graded lexicographic order
/// (degree 1 first; within a degree, x1-major).
pub fn monomial_exponents(n: usize, d: usize) -> Vec<Vec<u32>> {
    let mut out = Vec::new();
    for total in 1..=d as u32 {
        let mut current = vec![0u32; n];
        gen_degree(n, total, 0, &mut current, &mut out);
    }
    out
}

fn gen_degree(n: usize, remaining: u32, pos: usize, current: &mut Vec<u32>, out: &mut Vec<Vec<u32>>) {
    if pos == n - 1 {
        current[pos] = remaining;
        out.push(current.clone());
        current[pos] = 0;
        return;
    }
    for e in (0..=remaining).rev() {
        current[pos] = e;
        gen_degree(n, remaining - e, pos + 1, current, out);
        current[pos] = 0;
    }
}

/// `s_d(x)`: the basis monomials evaluated at `x`.
pub fn monomial_vector(x: &[f64], n: usize, d: usize) -> Vec<f64> {
    assert_eq!(x.len(), n);
    monomial_exponents(n, d)
        .iter()
        .map(|exps| {
            exps.iter()
                .zip(x)
                .map(|(&e, &xi)| xi.powi(e as i32))
                .product()
        })
        .collect()
}

/// The parameterized Lyapunov candidate `L(x) = s_d(x)' P'P s_d(x)`.
#[derive(Debug, Clone)]
pub struct SosLyapunov {
    pub n: usize,
    pub d: usize,
    pub p: DMatrix<f64>,
}

impl SosLyapunov {
    pub fn new(n: usize, d: usize, p: DMatrix<f64>) -> Result<Self> {
        let r = basis_len(n, d);
        if p.shape() != (r, r) {
            return Err(Error::Config(format!(
                "P must be {r}x{r} for n={n}, d={d}, got {:?}",
                p.shape()
            )));
        }
        Ok(SosLyapunov { n, d, p })
    }

    /// `P'P`, the Gram matrix of the induced quadratic form.
    pub fn gram(&self) -> DMatrix<f64> {
        self.p.transpose() * &self.p
    }

    pub fn rank_ok(&self) -> bool {
        self.p.determinant().abs() >= RANK_GUARD
    }

    pub fn eval(&self, x: &[f64]) -> f64 {
        let s = monomial_vector(x, self.n, self.d);
        let sv = nalgebra::DVector::from_vec(s);
        let m = self.gram();
        (sv.transpose() * m * sv)[(0, 0)]
    }
}

/// Builds the candidate as the family's defining sum of squares,
/// `sum_i (P_i . s_d(x))^2`: each square's interval range is exact given
/// the inner product, which keeps enclosures far tighter than the
/// expanded polynomial whose mixed-sign terms cancel. Fails the rank
/// guard with a config error.
pub fn sos_to_expr(lyap: &SosLyapunov) -> Result<ExprAst> {
    if !lyap.rank_ok() {
        return Err(Error::Config(format!(
            "P fails the full-rank guard (|det| = {} < {RANK_GUARD})",
            lyap.p.determinant().abs()
        )));
    }
    let exps = monomial_exponents(lyap.n, lyap.d);
    let monomial = |e: &Vec<u32>| -> ExprAst {
        let mut factors: Vec<ExprAst> = Vec::new();
        for (var, &k) in e.iter().enumerate() {
            match k {
                0 => {}
                1 => factors.push(ExprAst::StateVar(var)),
                _ => factors.push(ExprAst::IntPow(Box::new(ExprAst::StateVar(var)), k)),
            }
        }
        factors
            .into_iter()
            .reduce(|a, b| ExprAst::Binary(BinOp::Mul, Box::new(a), Box::new(b)))
            .expect("basis monomials have positive degree")
    };

    let mut squares: Vec<ExprAst> = Vec::new();
    for i in 0..lyap.p.nrows() {
        let mut terms: Vec<ExprAst> = Vec::new();
        for j in 0..lyap.p.ncols() {
            let c = lyap.p[(i, j)];
            if c == 0.0 {
                continue;
            }
            let m = monomial(&exps[j]);
            let term = if c == 1.0 {
                m
            } else {
                ExprAst::Binary(BinOp::Mul, Box::new(ExprAst::Const(c)), Box::new(m))
            };
            terms.push(term);
        }
        let Some(row) = terms
            .into_iter()
            .reduce(|a, b| ExprAst::Binary(BinOp::Add, Box::new(a), Box::new(b)))
        else {
            continue;
        };
        squares.push(ExprAst::IntPow(Box::new(row), 2));
    }
    squares
        .into_iter()
        .reduce(|a, b| ExprAst::Binary(BinOp::Add, Box::new(a), Box::new(b)))
        .ok_or_else(|| Error::Config("Lyapunov candidate expands to zero".into()))
}

/// Pipeline inputs with the Lyapunov candidate left open.
#[derive(Debug, Clone)]
pub struct LyapSearchSpec {
    pub plant: PlantModel,
    pub cons: IvBox,
    pub alpha: f64,
    pub eps: f64,
    pub d: usize,
}

impl LyapSearchSpec {
    pub fn with_candidate(&self, lyapunov: ExprAst) -> NegDefSpec {
        NegDefSpec {
            plant: self.plant.clone(),
            lyapunov,
            cons: self.cons.clone(),
            alpha: self.alpha,
            eps: self.eps,
        }
    }

    pub fn basis_len(&self) -> usize {
        basis_len(self.plant.n(), self.d)
    }
}

/// `m(P)`: volume of the DOA estimate's state projection for the
/// candidate induced by `P`; the origin neighborhood is excluded.
/// Guard failures and pipeline errors map to the penalty value -1.
pub fn objective(p: &DMatrix<f64>, spec: &LyapSearchSpec) -> f64 {
    let lyap = match SosLyapunov::new(spec.plant.n(), spec.d, p.clone()) {
        Ok(l) => l,
        Err(_) => return -1.0,
    };
    if !lyap.rank_ok() {
        return -1.0;
    }
    let expr = match sos_to_expr(&lyap) {
        Ok(e) => e,
        Err(_) => return -1.0,
    };
    match doa_pipeline(&spec.with_candidate(expr)) {
        Ok(est) => est.proj.measure(),
        Err(_) => -1.0,
    }
}

#[derive(Debug, Clone)]
pub struct PsoConfig {
    pub swarm: usize,
    pub iterations: usize,
    pub inertia: f64,
    pub cognitive: f64,
    pub social: f64,
    /// Bounds applied to every entry of `P`.
    pub bounds: (f64, f64),
    pub seed: u64,
}

impl Default for PsoConfig {
    fn default() -> Self {
        PsoConfig {
            swarm: 20,
            iterations: 30,
            inertia: 0.729,
            cognitive: 1.49445,
            social: 1.49445,
            bounds: (-3.0, 3.0),
            seed: 0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct PsoHistoryEntry {
    pub iteration: usize,
    pub best_objective: f64,
    pub best_p: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct PsoOutcome {
    pub best_p: DMatrix<f64>,
    pub best_objective: f64,
    /// Best objective after initialization (entry 0) and after each
    /// update pass; non-decreasing by construction.
    pub history: Vec<PsoHistoryEntry>,
}

/// Global-best particle swarm over the `r*r` entries of `P`. Candidate
/// evaluations within a pass run in parallel; updates and the global
/// reduction run in particle-index order with a per-config RNG stream,
/// so a seed pins the whole run.
pub fn pso_optimize(cfg: &PsoConfig, spec: &LyapSearchSpec) -> Result<PsoOutcome> {
    if cfg.swarm == 0 {
        return Err(Error::Config("swarm size must be positive".into()));
    }
    let (lo, hi) = cfg.bounds;
    if !(lo < hi) {
        return Err(Error::Config(format!("invalid bounds [{lo}, {hi}]")));
    }
    let r = spec.basis_len();
    let dim = r * r;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);

    let mut positions: Vec<Vec<f64>> = (0..cfg.swarm)
        .map(|_| (0..dim).map(|_| rng.random_range(lo..hi)).collect())
        .collect();
    let mut velocities: Vec<Vec<f64>> = vec![vec![0.0; dim]; cfg.swarm];

    let eval_all = |positions: &[Vec<f64>]| -> Vec<f64> {
        positions
            .par_iter()
            .map(|p| objective(&DMatrix::from_row_slice(r, r, p), spec))
            .collect()
    };

    let mut pbest = positions.clone();
    let mut pbest_val = eval_all(&positions);
    let (mut gbest_idx, _) = pbest_val
        .iter()
        .enumerate()
        .fold((0, f64::NEG_INFINITY), |acc, (i, &v)| {
            if v > acc.1 {
                (i, v)
            } else {
                acc
            }
        });
    let mut gbest = pbest[gbest_idx].clone();
    let mut gbest_val = pbest_val[gbest_idx];

    let mut history = vec![PsoHistoryEntry {
        iteration: 0,
        best_objective: gbest_val,
        best_p: gbest.clone(),
    }];

    for iter in 1..=cfg.iterations {
        for i in 0..cfg.swarm {
            for k in 0..dim {
                let r1: f64 = rng.random();
                let r2: f64 = rng.random();
                velocities[i][k] = cfg.inertia * velocities[i][k]
                    + cfg.cognitive * r1 * (pbest[i][k] - positions[i][k])
                    + cfg.social * r2 * (gbest[k] - positions[i][k]);
                positions[i][k] = (positions[i][k] + velocities[i][k]).clamp(lo, hi);
            }
        }
        let vals = eval_all(&positions);
        for i in 0..cfg.swarm {
            if vals[i] > pbest_val[i] {
                pbest_val[i] = vals[i];
                pbest[i] = positions[i].clone();
            }
            if vals[i] > gbest_val {
                gbest_val = vals[i];
                gbest = positions[i].clone();
                gbest_idx = i;
            }
        }
        let _ = gbest_idx;
        history.push(PsoHistoryEntry {
            iteration: iter,
            best_objective: gbest_val,
            best_p: gbest.clone(),
        });
    }

    Ok(PsoOutcome {
        best_p: DMatrix::from_row_slice(r, r, &gbest),
        best_objective: gbest_val,
        history,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::expr::{eval_scalar, parse};
    use approx::assert_relative_eq;

    const SEC4_PLANT: &str = "-sin(2*x1) - x1*u1 - 0.2*x1 - u1^2 + u1";

    fn search_spec(eps: f64) -> LyapSearchSpec {
        LyapSearchSpec {
            plant: PlantModel::parse(1, 1, &[SEC4_PLANT.to_string()]).unwrap(),
            cons: IvBox::from_bounds(&[-2.0, -2.0], &[2.0, 2.0], 1, 1),
            alpha: 1e-15,
            eps,
            d: 2,
        }
    }

    /// Brute-force monomial count: distinct exponent vectors of total
    /// degree 1..=d.
    fn brute_monomial_count(n: usize, d: usize) -> usize {
        fn count(n: usize, total: u32) -> usize {
            if n == 1 {
                1
            } else {
                (0..=total).map(|e| count(n - 1, total - e)).sum()
            }
        }
        (1..=d as u32).map(|t| count(n, t)).sum()
    }

    #[test]
    fn basis_len_matches_enumeration() {
        for n in 1..=3 {
            for d in 1..=3 {
                assert_eq!(
                    basis_len(n, d),
                    brute_monomial_count(n, d),
                    "n={n} d={d}"
                );
                assert_eq!(monomial_exponents(n, d).len(), basis_len(n, d));
            }
        }
        assert_eq!(basis_len(2, 2), 5);
    }

    #[test]
    fn monomial_vector_order() {
        // n=1, d=2 at x=2: (x; x^2)
        assert_eq!(monomial_vector(&[2.0], 1, 2), vec![2.0, 4.0]);
        // n=2, d=1: (x1; x2)
        assert_eq!(monomial_vector(&[3.0, 5.0], 2, 1), vec![3.0, 5.0]);
        // n=2, d=2: (x1; x2; x1^2; x1 x2; x2^2)
        assert_eq!(
            monomial_vector(&[2.0, 3.0], 2, 2),
            vec![2.0, 3.0, 4.0, 6.0, 9.0]
        );
    }

    #[test]
    fn sos_identity_gram() {
        let l = SosLyapunov::new(1, 2, DMatrix::identity(2, 2)).unwrap();
        let e = sos_to_expr(&l).unwrap();
        // L = x^2 + x^4
        for x in [-1.5, -0.3, 0.7, 2.0] {
            let got = eval_scalar(&e, &[x], &[]).unwrap();
            assert_relative_eq!(got, x * x + x.powi(4), max_relative = 1e-14);
        }
    }

    #[test]
    fn sos_reproduces_paper_optimum() {
        // Gram matrix with halved cubic coefficient off-diagonal gives
        // L = 2.4468 x^2 + 3.4186 x^3 + 1.4524 x^4; its Cholesky factor
        // serves as P
        let m = DMatrix::from_row_slice(2, 2, &[2.4468, 1.7093, 1.7093, 1.4524]);
        let chol = m.clone().cholesky().expect("paper Gram matrix is PD");
        let p = chol.l().transpose();
        let l = SosLyapunov::new(1, 2, p).unwrap();
        let back = l.gram();
        assert_relative_eq!(back[(0, 0)], 2.4468, epsilon = 1e-12);
        assert_relative_eq!(back[(0, 1)], 1.7093, epsilon = 1e-12);

        let e = sos_to_expr(&l).unwrap();
        let got = eval_scalar(&e, &[1.0], &[]).unwrap();
        // coefficient sum at x = 1
        assert_relative_eq!(got, 2.4468 + 3.4186 + 1.4524, max_relative = 1e-12);
        assert_relative_eq!(got, 7.3178, epsilon = 1e-10);
    }

    #[test]
    fn rank_guard_rejects_singular_p() {
        let p = DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 1.0, 1.0]);
        let l = SosLyapunov::new(1, 2, p.clone()).unwrap();
        assert!(!l.rank_ok());
        assert!(matches!(sos_to_expr(&l), Err(Error::Config(_))));
        assert_eq!(objective(&p, &search_spec(0.05)), -1.0);
    }

    #[test]
    fn sos_positivity_sampling() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut tried = 0;
        while tried < 1000 {
            let p = DMatrix::from_fn(2, 2, |_, _| rng.random_range(-3.0..3.0));
            let l = SosLyapunov::new(1, 2, p).unwrap();
            if !l.rank_ok() {
                continue;
            }
            tried += 1;
            let x = loop {
                let v: f64 = rng.random_range(-2.0..2.0);
                if v != 0.0 {
                    break v;
                }
            };
            let val = l.eval(&[x]);
            assert!(val > 0.0, "L({x}) = {val} for full-rank P");
        }
    }

    #[test]
    fn quadratic_baseline_objective() {
        // near-identity P with a tiny regularized second row emulates
        // L ~ x^2; projection measure approaches the 4.1 baseline
        let p = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 1e-2]);
        let spec = search_spec(0.01);
        let m = objective(&p, &spec);
        assert!((m - 3.02).abs() < 0.15, "objective {m}");
    }

    #[test]
    fn paper_optimum_objective() {
        let gram = DMatrix::from_row_slice(2, 2, &[2.4468, 1.7093, 1.7093, 1.4524]);
        let p = gram.cholesky().unwrap().l().transpose();
        let spec = search_spec(0.01);
        let m = objective(&p, &spec);
        // measure([-2,-0.02344] u [0.01563,2]) ~ 3.961
        assert!((m - 3.961).abs() < 0.05, "objective {m}");
    }

    #[test]
    fn pso_zero_iterations_returns_initial_best() {
        let spec = search_spec(0.05);
        let cfg = PsoConfig {
            swarm: 6,
            iterations: 0,
            seed: 9,
            ..PsoConfig::default()
        };
        let out = pso_optimize(&cfg, &spec).unwrap();
        assert_eq!(out.history.len(), 1);
        assert_eq!(out.history[0].best_objective, out.best_objective);
    }

    #[test]
    fn pso_history_non_decreasing_and_deterministic() {
        let spec = search_spec(0.05);
        let cfg = PsoConfig {
            swarm: 8,
            iterations: 6,
            seed: 123,
            ..PsoConfig::default()
        };
        let a = pso_optimize(&cfg, &spec).unwrap();
        let b = pso_optimize(&cfg, &spec).unwrap();
        assert_eq!(a.best_p, b.best_p);
        assert_eq!(a.best_objective, b.best_objective);
        for w in a.history.windows(2) {
            assert!(w[1].best_objective >= w[0].best_objective);
        }
    }
}
