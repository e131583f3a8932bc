//! Controller construction and closed-loop verification: a linear gain
//! for the origin neighborhood, a certified lookup-table selection from
//! the negative-definite and invariant paving for everything else, a
//! uniform sampler over the admissible control set, and trajectory
//! simulation with invariance checking.

use crate::error::{Error, Result};
use crate::expr::PlantModel;
use crate::interval::IvBox;
use crate::paving::Paving;
use nalgebra::DMatrix;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Spectral radius via complex eigenvalues.
pub fn spectral_radius(m: &DMatrix<f64>) -> f64 {
    m.complex_eigenvalues()
        .iter()
        .map(|c| c.norm())
        .fold(0.0, f64::max)
}

/// Stabilizing gain for `u = K x` from the plant's linearization at the
/// origin, via the discrete-time Riccati fixed point
/// `P <- A'PA - A'PB (R + B'PB)^-1 B'PA + Q` iterated from `P = Q` until
/// the update drops below 1e-12 (at most 1e5 passes).
pub fn linear_gain(
    plant: &PlantModel,
    q_weight: &DMatrix<f64>,
    r_weight: &DMatrix<f64>,
) -> Result<DMatrix<f64>> {
    let (a, b) = plant.jacobian_at(&vec![0.0; plant.n()], &vec![0.0; plant.m()])?;
    let n = plant.n();
    let m = plant.m();
    if q_weight.shape() != (n, n) || r_weight.shape() != (m, m) {
        return Err(Error::Config(format!(
            "weight shapes {:?}/{:?} do not match plant dimensions ({n}, {m})",
            q_weight.shape(),
            r_weight.shape()
        )));
    }
    let at = a.transpose();
    let bt = b.transpose();
    let mut p = q_weight.clone();
    let mut converged = false;
    for _ in 0..100_000 {
        let gram = r_weight + &bt * &p * &b;
        let gram_inv = gram.try_inverse().ok_or(Error::Stabilizability)?;
        let next = &at * &p * &a - &at * &p * &b * &gram_inv * &bt * &p * &a + q_weight;
        let delta = (&next - &p).abs().max();
        p = next;
        if !delta.is_finite() {
            return Err(Error::Stabilizability);
        }
        if delta < 1e-12 {
            converged = true;
            break;
        }
    }
    if !converged {
        return Err(Error::Stabilizability);
    }
    let gram = r_weight + &bt * &p * &b;
    let gram_inv = gram.try_inverse().ok_or(Error::Stabilizability)?;
    // sign chosen so u = K x closes the loop as A + BK
    let k = -(gram_inv * &bt * &p * &a);
    let rho = spectral_radius(&(&a + &b * &k));
    if rho >= 1.0 {
        return Err(Error::Stabilizability);
    }
    Ok(k)
}

/// Validates a user-supplied gain the same way a computed one is.
pub fn validate_gain(plant: &PlantModel, k: &DMatrix<f64>) -> Result<f64> {
    let (a, b) = plant.jacobian_at(&vec![0.0; plant.n()], &vec![0.0; plant.m()])?;
    if k.shape() != (plant.m(), plant.n()) {
        return Err(Error::Config(format!(
            "gain shape {:?} does not match (m, n) = ({}, {})",
            k.shape(),
            plant.m(),
            plant.n()
        )));
    }
    let rho = spectral_radius(&(&a + &b * k));
    if rho >= 1.0 {
        return Err(Error::Config(format!(
            "gain does not stabilize the linearization (spectral radius {rho})"
        )));
    }
    Ok(rho)
}

/// One table cell: a state box and the certified control value for it.
#[derive(Debug, Clone)]
pub struct ControllerCell {
    pub state_box: IvBox,
    pub u_value: Vec<f64>,
    /// Smallest control-interval width of the source box; wider is a
    /// deeper margin and wins lookups on overlapping state boxes.
    pub margin: f64,
    pub source_index: usize,
}

/// Certified piecewise control law: one cell per source box, control
/// fixed at the midpoint of the source's control intervals, so
/// `(x, u(x))` lies inside the source box for every `x` in the cell.
#[derive(Debug, Clone)]
pub struct ControllerTable {
    cells: Vec<ControllerCell>,
    n_state: usize,
    m_ctrl: usize,
}

impl ControllerTable {
    pub fn cells(&self) -> &[ControllerCell] {
        &self.cells
    }

    pub fn n_state(&self) -> usize {
        self.n_state
    }

    pub fn m_ctrl(&self) -> usize {
        self.m_ctrl
    }

    /// Control for `x`, or `None` when no cell covers it. Overlap
    /// resolution: widest control margin, then canonical (cell list)
    /// order.
    pub fn lookup(&self, x: &[f64]) -> Option<&ControllerCell> {
        let mut best: Option<&ControllerCell> = None;
        for cell in &self.cells {
            if !cell.state_box.contains_point(x) {
                continue;
            }
            match best {
                Some(b) if b.margin >= cell.margin => {}
                _ => best = Some(cell),
            }
        }
        best
    }
}

/// Builds the lookup table from the negative-definite and invariant
/// paving (cells in canonical order).
pub fn build_table(ni_set: &Paving) -> ControllerTable {
    let cells = ni_set
        .boxes()
        .iter()
        .enumerate()
        .map(|(i, b)| {
            let u_value: Vec<f64> = b.ctrl_dims().iter().map(|iv| iv.midpoint()).collect();
            let margin = b
                .ctrl_dims()
                .iter()
                .map(|iv| iv.width())
                .fold(f64::INFINITY, f64::min);
            ControllerCell {
                state_box: b.state_projection(),
                u_value,
                margin,
                source_index: i,
            }
        })
        .collect();
    ControllerTable {
        cells,
        n_state: ni_set.n_state(),
        m_ctrl: ni_set.m_ctrl(),
    }
}

/// The switched feedback law: table selection over the projection,
/// linear gain on the origin neighborhood. Table takes precedence where
/// both apply.
pub fn mu(
    x: &[f64],
    table: &ControllerTable,
    gain: &DMatrix<f64>,
    x0: &IvBox,
) -> Result<Vec<f64>> {
    if let Some(cell) = table.lookup(x) {
        return Ok(cell.u_value.clone());
    }
    if x0.contains_point(x) {
        let xv = nalgebra::DVector::from_column_slice(x);
        return Ok((gain * xv).iter().cloned().collect());
    }
    Err(Error::OutOfDomain(x.to_vec()))
}

/// Uniform draw from `U(x) = { u : (x; u) in ni_set }`, the union of
/// control boxes whose state part contains `x`, weighted by control
/// volume. Deterministic for a given seed.
pub fn sample_admissible(ni_set: &Paving, x: &[f64], seed: u64) -> Result<Vec<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    sample_admissible_with(ni_set, x, &mut rng)
}

pub fn sample_admissible_with(
    ni_set: &Paving,
    x: &[f64],
    rng: &mut impl Rng,
) -> Result<Vec<f64>> {
    let candidates: Vec<&IvBox> = ni_set
        .boxes()
        .iter()
        .filter(|b| b.state_projection().contains_point(x))
        .collect();
    if candidates.is_empty() {
        return Err(Error::OutOfDomain(x.to_vec()));
    }
    let weights: Vec<f64> = candidates
        .iter()
        .map(|b| b.ctrl_dims().iter().map(|iv| iv.width()).product::<f64>())
        .collect();
    let total: f64 = weights.iter().sum();
    let chosen = if total > 0.0 {
        let mut t = rng.random_range(0.0..total);
        let mut idx = candidates.len() - 1;
        for (i, w) in weights.iter().enumerate() {
            if t < *w {
                idx = i;
                break;
            }
            t -= w;
        }
        candidates[idx]
    } else {
        candidates[0]
    };
    Ok(chosen
        .ctrl_dims()
        .iter()
        .map(|iv| {
            if iv.width() == 0.0 {
                iv.lo
            } else {
                rng.random_range(iv.lo..iv.hi)
            }
        })
        .collect())
}

/// Simulated closed-loop run.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub states: Vec<Vec<f64>>,
    pub controls: Vec<Vec<f64>>,
    pub converged: bool,
    pub steps_to_converge: usize,
}

impl Trajectory {
    pub fn inf_norm(x: &[f64]) -> f64 {
        x.iter().map(|v| v.abs()).fold(0.0, f64::max)
    }
}

/// How the control input is produced during simulation.
pub enum ControlLaw<'a> {
    /// Certified table over the projection, gain on the neighborhood.
    Table(&'a ControllerTable),
    /// Uniform admissible draw over the projection, gain on the
    /// neighborhood.
    Sampled {
        ni_set: &'a Paving,
        rng: ChaCha8Rng,
    },
}

/// Closed-loop simulator over a fixed DOA estimate.
pub struct ClosedLoop<'a> {
    pub plant: &'a PlantModel,
    pub gain: &'a DMatrix<f64>,
    pub x0_box: &'a IvBox,
    pub doa_region: &'a Paving,
}

impl<'a> ClosedLoop<'a> {
    fn control(&self, law: &mut ControlLaw, x: &[f64]) -> Result<Vec<f64>> {
        match law {
            ControlLaw::Table(table) => mu(x, table, self.gain, self.x0_box),
            ControlLaw::Sampled { ni_set, rng } => {
                match sample_admissible_with(ni_set, x, rng) {
                    Ok(u) => Ok(u),
                    Err(Error::OutOfDomain(_)) if self.x0_box.contains_point(x) => {
                        let xv = nalgebra::DVector::from_column_slice(x);
                        Ok((self.gain * xv).iter().cloned().collect())
                    }
                    Err(e) => Err(e),
                }
            }
        }
    }

    /// Iterates `x(k+1) = f(x(k), u(k))` until the state's infinity norm
    /// drops to `conv_tol` or `max_steps` elapse. A state leaving the
    /// DOA estimate is an invariance violation; it must never happen
    /// under a certified law.
    pub fn simulate(
        &self,
        mut law: ControlLaw,
        start: &[f64],
        max_steps: usize,
        conv_tol: f64,
    ) -> Result<Trajectory> {
        if !self.doa_region.contains_point(start) && !self.x0_box.contains_point(start) {
            return Err(Error::OutOfDomain(start.to_vec()));
        }
        let mut states = vec![start.to_vec()];
        let mut controls = Vec::new();
        let mut x = start.to_vec();
        for step in 0..max_steps {
            if Trajectory::inf_norm(&x) <= conv_tol {
                return Ok(Trajectory {
                    states,
                    controls,
                    converged: true,
                    steps_to_converge: step,
                });
            }
            let u = self.control(&mut law, &x)?;
            let next = self.plant.step(&x, &u)?;
            controls.push(u);
            states.push(next.clone());
            if !self.doa_region.contains_point(&next) && !self.x0_box.contains_point(&next) {
                return Err(Error::InvarianceViolation {
                    step: step + 1,
                    state: next,
                });
            }
            x = next;
        }
        let converged = Trajectory::inf_norm(&x) <= conv_tol;
        Ok(Trajectory {
            states,
            controls,
            converged,
            steps_to_converge: max_steps,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::doa::{doa_pipeline, NegDefSpec};
    use crate::expr::parse;
    use approx::assert_relative_eq;

    const SEC4_PLANT: &str = "-sin(2*x1) - x1*u1 - 0.2*x1 - u1^2 + u1";

    fn sec4_plant() -> PlantModel {
        PlantModel::parse(1, 1, &[SEC4_PLANT.to_string()]).unwrap()
    }

    fn eye(n: usize) -> DMatrix<f64> {
        DMatrix::identity(n, n)
    }

    #[test]
    fn riccati_gain_matches_scalar_solution() {
        // scalar oracle: P solves P^2 - 4.84 P - 1 = 0,
        // K = -(1 + P)^-1 P A with A = -2.2, B = 1
        let p = (4.84 + (4.84f64 * 4.84 + 4.0).sqrt()) / 2.0;
        assert_relative_eq!(p, 5.0385, epsilon = 1e-4);
        let k_expected = -(p * -2.2) / (1.0 + p);

        let plant = sec4_plant();
        let k = linear_gain(&plant, &eye(1), &eye(1)).unwrap();
        assert_relative_eq!(k[(0, 0)], k_expected, epsilon = 1e-9);
        assert_relative_eq!(k[(0, 0)], 1.8356, epsilon = 1e-4);
        assert!((-2.2 + k[(0, 0)]).abs() < 1.0);
    }

    #[test]
    fn deadbeat_gain_closes_to_zero() {
        // A = -2.2 so K = 2.2 gives A + BK = 0
        let plant = sec4_plant();
        let k = DMatrix::from_element(1, 1, 2.2);
        let rho = validate_gain(&plant, &k).unwrap();
        assert!(rho < 1e-12);
    }

    #[test]
    fn paper_gain_is_accepted() {
        let plant = sec4_plant();
        let k = DMatrix::from_element(1, 1, 1.8649);
        let rho = validate_gain(&plant, &k).unwrap();
        assert_relative_eq!(rho, 0.3351, epsilon = 1e-10);
    }

    #[test]
    fn unstable_gain_is_rejected() {
        let plant = sec4_plant();
        let k = DMatrix::from_element(1, 1, 0.0); // A alone has |A| = 2.2
        assert!(validate_gain(&plant, &k).is_err());
    }

    #[test]
    fn table_midpoint_cell() {
        let ni = Paving::from_disjoint(
            1,
            1,
            vec![IvBox::from_bounds(&[0.0, 2.0], &[1.0, 4.0], 1, 1)],
        );
        let table = build_table(&ni);
        assert_eq!(table.cells().len(), 1);
        let cell = table.lookup(&[0.5]).unwrap();
        assert_eq!(cell.u_value, vec![3.0]);
    }

    #[test]
    fn table_overlap_resolves_to_wider_margin() {
        let ni = Paving::from_disjoint(
            1,
            1,
            vec![
                IvBox::from_bounds(&[0.0, 0.0], &[1.0, 2.0], 1, 1),
                IvBox::from_bounds(&[0.5, 0.9], &[1.0, 1.1], 1, 1),
            ],
        );
        let table = build_table(&ni);
        let cell = table.lookup(&[0.75]).unwrap();
        assert_eq!(cell.u_value, vec![1.0]); // control interval [0,2] wins
    }

    #[test]
    fn table_certification_membership() {
        // (x, u(x)) lands inside the source box for sampled x
        let spec = NegDefSpec {
            plant: sec4_plant(),
            lyapunov: parse("x1^2", 1, 1).unwrap(),
            cons: IvBox::from_bounds(&[-2.0, -2.0], &[2.0, 2.0], 1, 1),
            alpha: 1e-15,
            eps: 0.02,
        };
        let est = doa_pipeline(&spec).unwrap();
        let table = build_table(&est.ni_set);
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for cell in table.cells().iter().step_by(13) {
            let src = &est.ni_set.boxes()[cell.source_index];
            for _ in 0..100 {
                let x: Vec<f64> = cell
                    .state_box
                    .dims()
                    .iter()
                    .map(|iv| {
                        if iv.width() == 0.0 {
                            iv.lo
                        } else {
                            rng.random_range(iv.lo..iv.hi)
                        }
                    })
                    .collect();
                let mut point = x.clone();
                point.extend_from_slice(&cell.u_value);
                assert!(src.contains_point(&point));
            }
        }
    }

    #[test]
    fn mu_switching_behavior() {
        let ni = Paving::from_disjoint(
            1,
            1,
            vec![IvBox::from_bounds(&[0.5, 1.0], &[1.0, 2.0], 1, 1)],
        );
        let table = build_table(&ni);
        let gain = DMatrix::from_element(1, 1, 1.8649);
        let x0 = IvBox::from_bounds(&[-0.5], &[0.5], 1, 0);

        // origin maps to zero control
        assert_eq!(mu(&[0.0], &table, &gain, &x0).unwrap(), vec![0.0]);
        // inside x0: linear gain
        let u = mu(&[0.01], &table, &gain, &x0).unwrap();
        assert_relative_eq!(u[0], 0.018649, epsilon = 1e-12);
        // covered by the table
        assert_eq!(mu(&[0.75], &table, &gain, &x0).unwrap(), vec![1.5]);
        // outside everything
        assert!(matches!(
            mu(&[3.0], &table, &gain, &x0),
            Err(Error::OutOfDomain(_))
        ));
    }

    #[test]
    fn sampling_stays_inside_single_box() {
        let ni = Paving::from_disjoint(
            1,
            1,
            vec![IvBox::from_bounds(&[0.0, 2.0], &[1.0, 4.0], 1, 1)],
        );
        for seed in 0..50 {
            let u = sample_admissible(&ni, &[0.5], seed).unwrap();
            assert!((2.0..=4.0).contains(&u[0]));
        }
    }

    #[test]
    fn sampling_weights_by_control_measure() {
        // two candidate boxes with equal-length control intervals: the
        // draw frequency splits 50/50 within 5%
        let ni = Paving::from_disjoint(
            1,
            1,
            vec![
                IvBox::from_bounds(&[0.0, 0.0], &[1.0, 1.0], 1, 1),
                IvBox::from_bounds(&[0.0, 3.0], &[1.0, 4.0], 1, 1),
            ],
        );
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut low = 0usize;
        let draws = 10_000;
        for _ in 0..draws {
            let u = sample_admissible_with(&ni, &[0.5], &mut rng).unwrap();
            if u[0] <= 1.0 {
                low += 1;
            } else {
                assert!((3.0..=4.0).contains(&u[0]));
            }
        }
        let frac = low as f64 / draws as f64;
        assert!((frac - 0.5).abs() < 0.05, "low fraction {frac}");
    }

    #[test]
    fn sampling_uncovered_state_errors() {
        let ni = Paving::from_disjoint(
            1,
            1,
            vec![IvBox::from_bounds(&[0.0, 2.0], &[1.0, 4.0], 1, 1)],
        );
        assert!(matches!(
            sample_admissible(&ni, &[5.0], 0),
            Err(Error::OutOfDomain(_))
        ));
    }

    #[test]
    fn sampling_is_deterministic_per_seed() {
        let ni = Paving::from_disjoint(
            1,
            1,
            vec![IvBox::from_bounds(&[0.0, 2.0], &[1.0, 4.0], 1, 1)],
        );
        let a = sample_admissible(&ni, &[0.5], 7).unwrap();
        let b = sample_admissible(&ni, &[0.5], 7).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn simulation_from_origin_converges_immediately() {
        let plant = sec4_plant();
        let gain = DMatrix::from_element(1, 1, 1.8649);
        let x0 = IvBox::from_bounds(&[-0.1], &[0.1], 1, 0);
        let doa = Paving::from_disjoint(1, 0, vec![IvBox::from_bounds(&[-0.1], &[0.1], 1, 0)]);
        let ni = Paving::empty(1, 1);
        let table = build_table(&ni);
        let loop_ = ClosedLoop {
            plant: &plant,
            gain: &gain,
            x0_box: &x0,
            doa_region: &doa,
        };
        let t = loop_
            .simulate(ControlLaw::Table(&table), &[0.0], 200, 1e-3)
            .unwrap();
        assert!(t.converged);
        assert_eq!(t.steps_to_converge, 0);
        assert_eq!(t.states.len(), 1);
    }

    #[test]
    fn simulation_table_controller_converges_and_respects_dynamics() {
        let spec = NegDefSpec {
            plant: sec4_plant(),
            lyapunov: parse("x1^2", 1, 1).unwrap(),
            cons: IvBox::from_bounds(&[-2.0, -2.0], &[2.0, 2.0], 1, 1),
            alpha: 1e-15,
            eps: 0.02,
        };
        let est = doa_pipeline(&spec).unwrap();
        let table = build_table(&est.ni_set);
        let gain = DMatrix::from_element(1, 1, 1.8649);
        let x0 = est.x0.clone().unwrap();
        let loop_ = ClosedLoop {
            plant: &spec.plant,
            gain: &gain,
            x0_box: &x0,
            doa_region: &est.doa_region,
        };
        for start in [-1.8, -0.5, 0.1, 1.2, 1.9] {
            let t = loop_
                .simulate(ControlLaw::Table(&table), &[start], 200, 1e-3)
                .unwrap();
            assert!(t.converged, "start {start} did not converge");
            // states satisfy x(k+1) = f(x(k), u(k)) exactly
            for k in 0..t.controls.len() {
                let expect = spec.plant.step(&t.states[k], &t.controls[k]).unwrap();
                assert_eq!(expect, t.states[k + 1]);
            }
        }
    }
}
