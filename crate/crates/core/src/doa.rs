//! The estimation pipeline: negative-definite set, invariance refinement
//! to a fixed point, projection, origin neighborhood, closed-loop
//! domain-of-attraction estimate, and the sublevel-set baseline it is
//! compared against.
//!
//! The refinement iterates `W := SIVIA(f, proj(W) u X0(W), W, eps)` until
//! the paving stops changing. The coverage target deliberately includes
//! the origin neighborhood `X0`: with a strict margin `alpha > 0`,
//! a nonempty paving whose images all land back in `proj(W)` alone cannot
//! exist (the Lyapunov difference would drop below zero in finitely many
//! steps while trajectories stay in the set), so the fixed point of the
//! bare iteration is empty. Targeting the closed-loop region
//! `proj(W) u X0` instead certifies exactly the invariance the switched
//! controller needs: images either stay in the projection or enter the
//! linearly stabilized neighborhood.

use crate::error::{Error, Result};
use crate::expr::{self, ExprAst, PlantModel};
use crate::interval::IvBox;
use crate::paving::Paving;
use crate::sivia::{self, SiviaResult, SiviaTarget};

/// Safety cap on refinement passes; each non-final pass removes at least
/// one box from a finite dyadic grid, so this is never reached on sound
/// inputs.
const MAX_REFINE_ITERATIONS: usize = 10_000;

/// Problem statement for the negative-definite set computation.
#[derive(Debug, Clone)]
pub struct NegDefSpec {
    pub plant: PlantModel,
    pub lyapunov: ExprAst,
    pub cons: IvBox,
    pub alpha: f64,
    pub eps: f64,
}

impl NegDefSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha > 0.0) {
            return Err(Error::Config(format!(
                "alpha must be positive, got {}",
                self.alpha
            )));
        }
        if !(self.eps > 0.0) {
            return Err(Error::Config(format!(
                "eps must be positive, got {}",
                self.eps
            )));
        }
        if self.cons.dim() != self.plant.n() + self.plant.m() {
            return Err(Error::Config(format!(
                "constraint box has {} dims, plant needs {}",
                self.cons.dim(),
                self.plant.n() + self.plant.m()
            )));
        }
        if self
            .cons
            .dims()
            .iter()
            .any(|iv| !iv.lo.is_finite() || !iv.hi.is_finite())
        {
            return Err(Error::Config("constraint box must be compact".into()));
        }
        if self.lyapunov.references_ctrl() {
            return Err(Error::Config(
                "Lyapunov candidate must be a function of the state only".into(),
            ));
        }
        Ok(())
    }

    /// State part of the constraint box.
    pub fn cons_state(&self) -> IvBox {
        IvBox::state(self.cons.dims()[..self.plant.n()].to_vec())
    }
}

/// Everything the pipeline produces for one Lyapunov candidate.
#[derive(Debug, Clone)]
pub struct DoaEstimate {
    /// Negative-definite and invariant state-control paving.
    pub ni_set: Paving,
    /// Its projection onto the state space (merged components).
    pub proj: Paving,
    /// Origin neighborhood handled by the linear gain; `None` when the
    /// pavings cover the origin.
    pub x0: Option<IvBox>,
    /// `proj u x0`, normalized: the closed-loop DOA estimate.
    pub doa_region: Paving,
    pub volume: f64,
    /// Refinement passes run (including the confirming pass).
    pub iterations: usize,
    /// Set when the negative-definite set came out empty; the estimate
    /// is then vacuous rather than inherited from `x0` alone.
    pub degenerate: bool,
}

/// Inner approximation of the negative-definite set: boxes of the
/// constraint region where the Lyapunov difference certifiably drops by
/// at least `alpha`.
pub fn negdef_set(spec: &NegDefSpec) -> Result<SiviaResult> {
    spec.validate()?;
    if spec.lyapunov.references_ctrl() {
        return Err(Error::Config(
            "Lyapunov candidate must be a function of the state only".into(),
        ));
    }
    let init = Paving::from_disjoint(
        spec.plant.n(),
        spec.plant.m(),
        vec![spec.cons.clone()],
    );
    let target = SiviaTarget::Intervals(vec![crate::interval::Interval::new(
        f64::NEG_INFINITY,
        -spec.alpha,
    )]);
    let dl = sivia::DeltaLImages {
        plant: &spec.plant,
        lyapunov: &spec.lyapunov,
    };
    sivia::sivia_fn(&dl, &target, &init, spec.eps)
}

/// One refinement target: the state projection of the current paving
/// together with the origin gap it leaves (when the origin is free).
fn refine_target(w: &Paving, cons_state: &IvBox) -> Result<Paving> {
    let proj = w.project()?;
    match proj.origin_gap(cons_state) {
        Ok(x0) => Ok(proj.union_with(&[x0])),
        Err(Error::OriginCovered) => Ok(proj),
        Err(e) => Err(e),
    }
}

/// Iterates the invariance mapping on `w0` down to a fixed point:
/// every surviving box's image box is covered by the final projection
/// united with its origin neighborhood. Returns the paving and the
/// number of passes (a confirming pass counts).
pub fn invariant_refine(
    plant: &PlantModel,
    w0: &Paving,
    cons_state: &IvBox,
    eps: f64,
) -> Result<(Paving, usize)> {
    let mut w = w0.clone();
    let mut iterations = 0;
    while iterations < MAX_REFINE_ITERATIONS {
        if w.is_empty() {
            return Ok((w, iterations.max(1)));
        }
        let target = refine_target(&w, cons_state)?;
        let res = sivia::sivia(
            plant.dynamics(),
            &SiviaTarget::Paving(target),
            &w,
            eps,
        )?;
        iterations += 1;
        if res.inner.equals(&w) {
            return Ok((w, iterations));
        }
        w = res.inner;
    }
    Err(Error::Numeric(
        "invariance refinement did not reach a fixed point".into(),
    ))
}

/// Full pipeline: negative-definite set, invariance refinement,
/// projection, origin neighborhood, and the combined estimate.
pub fn doa_pipeline(spec: &NegDefSpec) -> Result<DoaEstimate> {
    let n = spec.plant.n();
    let nd = negdef_set(spec)?;
    if nd.inner.is_empty() {
        return Ok(DoaEstimate {
            ni_set: Paving::empty(n, spec.plant.m()),
            proj: Paving::empty(n, 0),
            x0: None,
            doa_region: Paving::empty(n, 0),
            volume: 0.0,
            iterations: 0,
            degenerate: true,
        });
    }
    let cons_state = spec.cons_state();
    let (ni_set, iterations) = invariant_refine(&spec.plant, &nd.inner, &cons_state, spec.eps)?;
    if ni_set.is_empty() {
        return Ok(DoaEstimate {
            ni_set,
            proj: Paving::empty(n, 0),
            x0: None,
            doa_region: Paving::empty(n, 0),
            volume: 0.0,
            iterations,
            degenerate: true,
        });
    }
    let proj = ni_set.project()?;
    let x0 = match proj.origin_gap(&cons_state) {
        Ok(b) => Some(b),
        Err(Error::OriginCovered) => None,
        Err(e) => return Err(e),
    };
    let doa_region = match &x0 {
        Some(b) => proj.union_with(std::slice::from_ref(b)),
        None => proj.clone(),
    };
    let volume = doa_region.measure();
    Ok(DoaEstimate {
        ni_set,
        proj,
        x0,
        doa_region,
        volume,
        iterations,
        degenerate: false,
    })
}

/// Largest `c` (bisection to relative tolerance 1e-4) whose certified
/// sublevel set `{ x : L(x) <= c }` stays inside `region`, plus the
/// sublevel paving at that `c`. The search box is the state constraint
/// inflated by half its width per side so escapes past the constraint
/// boundary are visible.
pub fn levelset_baseline(
    lyapunov: &ExprAst,
    region: &Paving,
    cons_state: &IvBox,
    eps: f64,
) -> Result<(f64, Paving)> {
    if region.is_empty() {
        return Err(Error::Config("baseline region is empty".into()));
    }
    let inflated: Vec<_> = cons_state
        .dims()
        .iter()
        .map(|iv| {
            let half = iv.width() / 2.0;
            crate::interval::Interval::new(iv.lo - half, iv.hi + half)
        })
        .collect();
    let init = Paving::from_disjoint(cons_state.dim(), 0, vec![IvBox::state(inflated.clone())]);
    let hull = IvBox::state(inflated);
    let l_range = expr::eval_interval(lyapunov, &hull)?;

    let sublevel = |c: f64| -> Result<(bool, Paving)> {
        let target = SiviaTarget::Intervals(vec![crate::interval::Interval::new(
            f64::NEG_INFINITY,
            c,
        )]);
        let res = sivia::sivia(std::slice::from_ref(lyapunov), &target, &init, eps)?;
        let fits = res
            .inner
            .boxes()
            .iter()
            .all(|b| region.covers_box_within(b, sivia::COVER_TOL));
        Ok((fits, res.inner))
    };

    let mut c_lo = 0.0f64;
    let mut c_hi = l_range.hi.max(1.0);
    // make sure the upper end really fails; if not, everything fits
    let (hi_fits, hi_paving) = sublevel(c_hi)?;
    if hi_fits {
        return Ok((c_hi, hi_paving));
    }
    while (c_hi - c_lo) > 1e-4 * c_lo.abs().max(1.0) {
        let mid = 0.5 * (c_lo + c_hi);
        let (fits, _) = sublevel(mid)?;
        if fits {
            c_lo = mid;
        } else {
            c_hi = mid;
        }
    }
    let (_, paving) = sublevel(c_lo)?;
    Ok((c_lo, paving))
}
