//! Implementation of the `doa-kit` subcommands: config ingestion,
//! pipeline orchestration and artifact emission. Kept as a library so
//! integration tests can drive the same code paths as the binary.

use doa_core::config::RunConfig;
use doa_core::control::{self, ClosedLoop, ControlLaw, ControllerTable, Trajectory};
use doa_core::doa::{self, DoaEstimate};
use doa_core::error::{Error, Result};
use doa_core::expr::{self, ExprAst, PlantModel};
use doa_core::interval::IvBox;
use doa_core::lyapopt;
use doa_core::paving::{Paving, PavingFile};
use doa_core::report::{
    load_json, save_json, BaselineReport, BoxCounts, DoaReport, OptimizeReport, TimingsMs,
    VerifyReport,
};
use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

/// Resolved invocation context.
pub struct Ctx {
    pub cfg: RunConfig,
    pub out: PathBuf,
}

impl Ctx {
    pub fn new(
        config_path: &Path,
        out_override: Option<PathBuf>,
        eps_override: Option<f64>,
        seed_override: Option<u64>,
    ) -> Result<Ctx> {
        let mut cfg = RunConfig::load(config_path)?;
        if let Some(eps) = eps_override {
            cfg.eps = eps;
        }
        if let Some(seed) = seed_override {
            if let Some(pso) = cfg.pso.as_mut() {
                pso.seed = seed;
            }
            let mut sim = cfg.sim();
            sim.seed = seed;
            cfg.sim = Some(sim);
        }
        let out = out_override
            .or_else(|| cfg.output_dir.as_ref().map(PathBuf::from))
            .unwrap_or_else(|| PathBuf::from("out"));
        std::fs::create_dir_all(&out)?;
        Ok(Ctx { cfg, out })
    }

    fn path(&self, name: &str) -> PathBuf {
        self.out.join(name)
    }
}

fn fmt_matrix(m: &DMatrix<f64>) -> String {
    let rows: Vec<String> = (0..m.nrows())
        .map(|i| {
            let cells: Vec<String> = (0..m.ncols()).map(|j| format!("{:.6}", m[(i, j)])).collect();
            format!("[{}]", cells.join(", "))
        })
        .collect();
    format!("[{}]", rows.join(", "))
}

fn matrix_rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    (0..m.nrows())
        .map(|i| (0..m.ncols()).map(|j| m[(i, j)]).collect())
        .collect()
}

/// Validates the configuration: expressions parse, the origin is an
/// equilibrium, the linearization and gain are reported.
pub fn cmd_check(ctx: &Ctx) -> Result<()> {
    let plant = ctx.cfg.build_plant()?;
    let cons = ctx.cfg.build_cons()?;
    let lyap = ctx.cfg.build_lyapunov()?;
    ctx.cfg.negdef_spec()?;
    let n = plant.n();
    let m = plant.m();
    let (a, b) = plant.jacobian_at(&vec![0.0; n], &vec![0.0; m])?;
    println!("plant: n={n} m={m}, f(0,0) = 0 verified");
    println!("cons: {cons}");
    let l0 = expr::eval_scalar(&lyap, &vec![0.0; n], &vec![0.0; m])?;
    println!("lyapunov: L(0) = {l0}");
    println!("linearization: A = {}", fmt_matrix(&a));
    println!("               B = {}", fmt_matrix(&b));
    println!(
        "open-loop spectral radius: {:.6}",
        control::spectral_radius(&a)
    );
    let k = ctx.cfg.build_gain(&plant)?;
    let rho = control::spectral_radius(&(&a + &b * &k));
    println!("gain K = {}", fmt_matrix(&k));
    println!("closed-loop spectral radius: {rho:.6}");
    println!("config ok");
    Ok(())
}

/// Negative-definite set only; emits ndef.jsonl.
pub fn cmd_nset(ctx: &Ctx) -> Result<()> {
    let spec = ctx.cfg.negdef_spec()?;
    let nd = doa::negdef_set(&spec)?;
    PavingFile {
        inner: nd.inner.clone(),
        boundary: nd.boundary.clone(),
        epsilon: spec.eps,
        alpha: spec.alpha,
    }
    .save(&ctx.path("ndef.jsonl"))?;
    println!(
        "ndef: {} inner boxes, {} boundary, measure {:.6}",
        nd.inner.len(),
        nd.boundary.len(),
        nd.inner.measure()
    );
    Ok(())
}

fn run_pipeline(ctx: &Ctx) -> Result<(DoaEstimate, DoaReport)> {
    let spec = ctx.cfg.negdef_spec()?;
    let t0 = Instant::now();
    let nd = doa::negdef_set(&spec)?;
    let t_ndef = t0.elapsed().as_secs_f64() * 1e3;
    PavingFile {
        inner: nd.inner.clone(),
        boundary: nd.boundary.clone(),
        epsilon: spec.eps,
        alpha: spec.alpha,
    }
    .save(&ctx.path("ndef.jsonl"))?;

    let t1 = Instant::now();
    let est = doa::doa_pipeline(&spec)?;
    let t_total = t0.elapsed().as_secs_f64() * 1e3;
    let t_refine = t1.elapsed().as_secs_f64() * 1e3;

    let one_d = spec.plant.n() == 1;
    let comps = |p: &Paving| -> Option<Vec<[f64; 2]>> {
        one_d.then(|| p.components_1d().iter().map(|&(a, b)| [a, b]).collect())
    };

    let plant = &spec.plant;
    let (gain, rho) = match ctx.cfg.build_gain(plant) {
        Ok(k) => {
            let (a, b) = plant.jacobian_at(&vec![0.0; plant.n()], &vec![0.0; plant.m()])?;
            let rho = control::spectral_radius(&(&a + &b * &k));
            (Some(matrix_rows(&k)), Some(rho))
        }
        Err(_) if est.degenerate => (None, None),
        Err(e) => return Err(e),
    };

    let report = DoaReport {
        alpha: spec.alpha,
        eps: spec.eps,
        degenerate: est.degenerate,
        iterations: est.iterations,
        proj_components: comps(&est.proj),
        proj_volume: est.proj.measure(),
        x0: est.x0.as_ref().map(|b| {
            b.dims()
                .iter()
                .map(|iv| [iv.lo, iv.hi])
                .collect::<Vec<_>>()
        }),
        doa_components: comps(&est.doa_region),
        volume: est.volume,
        box_counts: BoxCounts {
            ndef: nd.inner.len(),
            niset: est.ni_set.len(),
            proj: est.proj.len(),
            doa: est.doa_region.len(),
        },
        timings_ms: TimingsMs {
            ndef: t_ndef,
            refine: t_refine,
            total: t_total,
        },
        gain,
        spectral_radius: rho,
    };
    Ok((est, report))
}

fn save_doa_artifacts(ctx: &Ctx, est: &DoaEstimate, report: &DoaReport) -> Result<()> {
    let eps = report.eps;
    let alpha = report.alpha;
    let save = |paving: &Paving, name: &str| -> Result<()> {
        PavingFile {
            inner: paving.clone(),
            boundary: Paving::empty(paving.n_state(), paving.m_ctrl()),
            epsilon: eps,
            alpha,
        }
        .save(&ctx.path(name))
    };
    save(&est.ni_set, "niset.jsonl")?;
    save(&est.proj, "proj.jsonl")?;
    save(&est.doa_region, "doa.jsonl")?;
    report.save(&ctx.path("doa_report.json"))?;
    Ok(())
}

/// Negative-definite and invariant set; emits ndef.jsonl + niset.jsonl.
pub fn cmd_niset(ctx: &Ctx) -> Result<()> {
    let (est, report) = run_pipeline(ctx)?;
    save_doa_artifacts(ctx, &est, &report)?;
    println!(
        "niset: {} boxes after {} refinement passes, proj measure {:.6}",
        est.ni_set.len(),
        est.iterations,
        est.proj.measure()
    );
    Ok(())
}

/// Full estimate; emits all stage pavings and doa_report.json.
pub fn cmd_doa(ctx: &Ctx) -> Result<DoaReport> {
    let (est, report) = run_pipeline(ctx)?;
    save_doa_artifacts(ctx, &est, &report)?;
    if est.degenerate {
        println!("doa: degenerate (empty negative-definite set), volume 0");
    } else {
        println!(
            "doa: volume {:.6} ({} boxes, {} refinement passes)",
            est.volume,
            est.doa_region.len(),
            est.iterations
        );
        if let Some(c) = &report.doa_components {
            println!("doa components: {c:?}");
        }
    }
    Ok(report)
}

// ---------------------------------------------------------------------------
// controller artifacts
// ---------------------------------------------------------------------------

fn load_niset(ctx: &Ctx) -> Result<PavingFile> {
    let path = ctx.path("niset.jsonl");
    if !path.exists() {
        return Err(Error::Config(format!(
            "{} not found; run `doa-kit doa` first",
            path.display()
        )));
    }
    PavingFile::load(&path)
}

fn load_doa_region(ctx: &Ctx) -> Result<(Paving, IvBox, DoaReport)> {
    let report: DoaReport = load_json(&ctx.path("doa_report.json")).map_err(|_| {
        Error::Config(format!(
            "{} not found or unreadable; run `doa-kit doa` first",
            ctx.path("doa_report.json").display()
        ))
    })?;
    let doa = PavingFile::load(&ctx.path("doa.jsonl"))?;
    let n = doa.inner.n_state();
    let x0 = match &report.x0 {
        Some(dims) => {
            let lo: Vec<f64> = dims.iter().map(|d| d[0]).collect();
            let hi: Vec<f64> = dims.iter().map(|d| d[1]).collect();
            IvBox::from_bounds(&lo, &hi, n, 0)
        }
        None => IvBox::from_bounds(&vec![0.0; n], &vec![0.0; n], n, 0),
    };
    Ok((doa.inner, x0, report))
}

fn save_table(table: &ControllerTable, path: &Path) -> Result<()> {
    let mut out = Vec::new();
    writeln!(
        out,
        "{}",
        serde_json::json!({
            "n_state": table.n_state(),
            "m_ctrl": table.m_ctrl(),
            "cells": table.cells().len(),
        })
    )?;
    for cell in table.cells() {
        writeln!(
            out,
            "{}",
            serde_json::json!({
                "state_lo": cell.state_box.lo(),
                "state_hi": cell.state_box.hi(),
                "u": cell.u_value,
                "margin": cell.margin,
                "source_index": cell.source_index,
            })
        )?;
    }
    std::fs::write(path, out)?;
    Ok(())
}

/// Builds and certifies the lookup-table controller from the persisted
/// invariant set; emits table.jsonl.
pub fn cmd_controller(ctx: &Ctx) -> Result<()> {
    let niset = load_niset(ctx)?;
    if niset.inner.is_empty() {
        return Err(Error::Config(
            "invariant set is empty; no controller to build".into(),
        ));
    }
    let plant = ctx.cfg.build_plant()?;
    let gain = ctx.cfg.build_gain(&plant)?;
    let table = control::build_table(&niset.inner);
    save_table(&table, &ctx.path("table.jsonl"))?;
    println!(
        "controller: {} cells, gain K = {}",
        table.cells().len(),
        fmt_matrix(&gain)
    );
    Ok(())
}

// ---------------------------------------------------------------------------
// simulation
// ---------------------------------------------------------------------------

struct SimOutcome {
    report: VerifyReport,
    trajectories: Vec<Trajectory>,
}

/// Forbidden open gaps of a one-dimensional estimate within the state
/// constraint: the complement components strictly between estimate
/// pieces.
fn forbidden_gaps_1d(doa_region: &Paving, cons_state: &IvBox) -> Vec<(f64, f64)> {
    if doa_region.dim() != 1 {
        return Vec::new();
    }
    let comps = doa_region.components_1d();
    let mut gaps = Vec::new();
    let lo = cons_state.dims()[0].lo;
    let hi = cons_state.dims()[0].hi;
    let mut cursor = lo;
    for (a, b) in comps {
        if a > cursor {
            gaps.push((cursor, a));
        }
        cursor = cursor.max(b);
    }
    if cursor < hi {
        gaps.push((cursor, hi));
    }
    gaps
}

#[allow(clippy::too_many_arguments)]
fn run_batch(
    plant: &PlantModel,
    lyapunov: &ExprAst,
    gain: &DMatrix<f64>,
    x0_box: &IvBox,
    doa_region: &Paving,
    ni_set: &Paving,
    table: Option<&ControllerTable>,
    starts: &[Vec<f64>],
    sim: &doa_core::config::SimCfg,
    gaps: &[(f64, f64)],
    label: &str,
) -> Result<SimOutcome> {
    let closed = ClosedLoop {
        plant,
        gain,
        x0_box,
        doa_region,
    };
    let trajectories: Vec<Trajectory> = starts
        .par_iter()
        .enumerate()
        .map(|(i, start)| {
            let law = match table {
                Some(t) => ControlLaw::Table(t),
                None => ControlLaw::Sampled {
                    ni_set,
                    rng: ChaCha8Rng::seed_from_u64(
                        sim.seed.wrapping_add(0x9e3779b97f4a7c15u64.wrapping_mul(i as u64 + 1)),
                    ),
                },
            };
            closed.simulate(law, start, sim.max_steps, sim.conv_tol)
        })
        .collect::<Result<Vec<_>>>()?;

    let converged = trajectories.iter().filter(|t| t.converged).count();
    let mut gap_violations = 0usize;
    let mut lyap_increase = 0usize;
    let mut total_steps = 0usize;
    for t in &trajectories {
        for (k, x) in t.states.iter().enumerate() {
            if gaps
                .iter()
                .any(|(a, b)| x[0] > *a && x[0] < *b)
            {
                gap_violations += 1;
            }
            if k < t.controls.len() {
                total_steps += 1;
                // decrease is promised while the state is under the
                // certified selection, i.e. covered by the projection
                let under_table = match table {
                    Some(tb) => tb.lookup(x).is_some(),
                    None => ni_set
                        .boxes()
                        .iter()
                        .any(|b| b.state_projection().contains_point(x)),
                };
                if under_table {
                    let l_now = expr::eval_scalar(lyapunov, x, &[])?;
                    let l_next = expr::eval_scalar(lyapunov, &t.states[k + 1], &[])?;
                    if l_next >= l_now {
                        lyap_increase += 1;
                    }
                }
            }
        }
    }
    Ok(SimOutcome {
        report: VerifyReport {
            controller: label.to_string(),
            trajectories: trajectories.len(),
            converged,
            max_steps: sim.max_steps,
            conv_tol: sim.conv_tol,
            seed: sim.seed,
            gap_violations,
            gap_avoided: gap_violations == 0,
            lyapunov_increase_steps: lyap_increase,
            total_steps,
        },
        trajectories,
    })
}

fn write_traj_csv(path: &Path, trajectories: &[Trajectory], n: usize, m: usize) -> Result<()> {
    let mut out = String::new();
    out.push_str("traj,step");
    for i in 1..=n {
        out.push_str(&format!(",x{i}"));
    }
    for j in 1..=m {
        out.push_str(&format!(",u{j}"));
    }
    out.push('\n');
    for (id, t) in trajectories.iter().enumerate() {
        for (k, x) in t.states.iter().enumerate() {
            out.push_str(&format!("{id},{k}"));
            for v in x {
                out.push_str(&format!(",{v}"));
            }
            if k < t.controls.len() {
                for v in &t.controls[k] {
                    out.push_str(&format!(",{v}"));
                }
            } else {
                for _ in 0..m {
                    out.push(',');
                }
            }
            out.push('\n');
        }
    }
    std::fs::write(path, out)?;
    Ok(())
}

/// Closed-loop verification: seeded initial states uniform on the DOA
/// estimate, simulated under the certified table law and under uniform
/// admissible sampling. Emits traj.csv, traj_sampled.csv, verify.json.
/// Returns false when any run failed to converge or strayed.
pub fn cmd_simulate(ctx: &Ctx) -> Result<bool> {
    let niset = load_niset(ctx)?;
    let (doa_region, x0_box, report) = load_doa_region(ctx)?;
    if niset.inner.is_empty() || doa_region.is_empty() {
        return Err(Error::Config("estimate is empty; nothing to simulate".into()));
    }
    let plant = ctx.cfg.build_plant()?;
    let lyapunov = ctx.cfg.build_lyapunov()?;
    let gain = ctx.cfg.build_gain(&plant)?;
    let sim = ctx.cfg.sim();
    let table = control::build_table(&niset.inner);
    save_table(&table, &ctx.path("table.jsonl"))?;

    let mut rng = ChaCha8Rng::seed_from_u64(sim.seed);
    let starts: Vec<Vec<f64>> = (0..sim.trajectories)
        .map(|_| doa_region.sample_point(&mut rng))
        .collect();

    let cons_state = {
        let cons = ctx.cfg.build_cons()?;
        IvBox::state(cons.dims()[..plant.n()].to_vec())
    };
    let gaps = forbidden_gaps_1d(&doa_region, &cons_state);

    let table_out = run_batch(
        &plant, &lyapunov, &gain, &x0_box, &doa_region, &niset.inner,
        Some(&table), &starts, &sim, &gaps, "table",
    )?;
    let sampled_out = run_batch(
        &plant, &lyapunov, &gain, &x0_box, &doa_region, &niset.inner,
        None, &starts, &sim, &gaps, "sampled",
    )?;

    write_traj_csv(&ctx.path("traj.csv"), &table_out.trajectories, plant.n(), plant.m())?;
    write_traj_csv(
        &ctx.path("traj_sampled.csv"),
        &sampled_out.trajectories,
        plant.n(),
        plant.m(),
    )?;
    save_json(
        &serde_json::json!({
            "table": table_out.report,
            "sampled": sampled_out.report,
            "doa_volume": report.volume,
        }),
        &ctx.path("verify.json"),
    )?;

    let ok = |r: &VerifyReport| {
        r.converged == r.trajectories && r.gap_avoided && r.lyapunov_increase_steps == 0
    };
    for r in [&table_out.report, &sampled_out.report] {
        println!(
            "{}: {}/{} converged, gap violations {}, Lyapunov increases {}",
            r.controller, r.converged, r.trajectories, r.gap_violations, r.lyapunov_increase_steps
        );
    }
    Ok(ok(&table_out.report) && ok(&sampled_out.report))
}

// ---------------------------------------------------------------------------
// optimization and baseline
// ---------------------------------------------------------------------------

/// Swarm search over the Lyapunov family, then a full pipeline run with
/// the best candidate. Emits pso_log.csv, optimize_report.json and the
/// final doa artifacts.
pub fn cmd_optimize(ctx: &Ctx) -> Result<()> {
    let (spec, cfg) = ctx.cfg.search_spec()?;
    let outcome = lyapopt::pso_optimize(&cfg, &spec)?;

    let mut log = String::from("iteration,best_objective");
    let r = spec.basis_len();
    for i in 0..r * r {
        log.push_str(&format!(",p{i}"));
    }
    log.push('\n');
    for h in &outcome.history {
        log.push_str(&format!("{},{}", h.iteration, h.best_objective));
        for v in &h.best_p {
            log.push_str(&format!(",{v}"));
        }
        log.push('\n');
    }
    std::fs::write(ctx.path("pso_log.csv"), log)?;

    save_json(
        &OptimizeReport {
            swarm: cfg.swarm,
            iterations: cfg.iterations,
            seed: cfg.seed,
            best_objective: outcome.best_objective,
            best_p: matrix_rows(&outcome.best_p),
            history_len: outcome.history.len(),
        },
        &ctx.path("optimize_report.json"),
    )?;
    println!(
        "optimize: best objective {:.6} after {} iterations (seed {})",
        outcome.best_objective, cfg.iterations, cfg.seed
    );

    // full run with the optimized candidate
    lyapopt::sos_to_expr(&lyapopt::SosLyapunov::new(
        spec.plant.n(),
        spec.d,
        outcome.best_p.clone(),
    )?)?;
    let mut final_cfg = ctx.cfg.clone();
    final_cfg.lyapunov = doa_core::config::LyapCfg::Sos {
        n: spec.plant.n(),
        d: spec.d,
        p: matrix_rows(&outcome.best_p),
    };
    let final_ctx = Ctx {
        cfg: final_cfg,
        out: ctx.out.clone(),
    };
    cmd_doa(&final_ctx)?;
    Ok(())
}

/// Level-set comparison: largest certified sublevel set of the
/// configured Lyapunov function inside the DOA estimate. Requires doa
/// artifacts. Emits baseline_report.json and baseline_set.jsonl.
pub fn cmd_baseline(ctx: &Ctx) -> Result<()> {
    let (doa_region, _, report) = load_doa_region(ctx)?;
    let plant = ctx.cfg.build_plant()?;
    let lyapunov = ctx.cfg.build_lyapunov()?;
    let cons = ctx.cfg.build_cons()?;
    let cons_state = IvBox::state(cons.dims()[..plant.n()].to_vec());
    let (level, set) = doa::levelset_baseline(&lyapunov, &doa_region, &cons_state, ctx.cfg.eps)?;
    PavingFile {
        inner: set.clone(),
        boundary: Paving::empty(set.n_state(), set.m_ctrl()),
        epsilon: ctx.cfg.eps,
        alpha: report.alpha,
    }
    .save(&ctx.path("baseline_set.jsonl"))?;
    let comps = (set.dim() == 1).then(|| {
        set.components_1d()
            .iter()
            .map(|&(a, b)| [a, b])
            .collect::<Vec<_>>()
    });
    save_json(
        &BaselineReport {
            level,
            eps: ctx.cfg.eps,
            set_components: comps.clone(),
            set_volume: set.measure(),
        },
        &ctx.path("baseline_report.json"),
    )?;
    println!("baseline: level {level:.6}, set volume {:.6}", set.measure());
    if let Some(c) = comps {
        println!("baseline set components: {c:?}");
    }
    Ok(())
}

/// Exit code for an error per the CLI contract: 2 config, 3 numeric, 4
/// verification.
pub fn exit_code(err: &Error) -> i32 {
    match err {
        Error::Config(_) | Error::Syntax { .. } => 2,
        Error::OutOfDomain(_) | Error::InvarianceViolation { .. } => 4,
        _ => 3,
    }
}
