//! Run configuration: a single JSON document describing the plant, the
//! constraint box, the Lyapunov candidate, the controller and the
//! stochastic settings, with every random component explicitly seeded.

use crate::control;
use crate::doa::NegDefSpec;
use crate::error::{Error, Result};
use crate::expr::{self, ExprAst, PlantModel};
use crate::interval::IvBox;
use crate::lyapopt::{self, LyapSearchSpec, PsoConfig, SosLyapunov};
use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use std::path::Path;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PlantCfg {
    pub n: usize,
    pub m: usize,
    pub dynamics: Vec<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ConsCfg {
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "lowercase")]
pub enum LyapCfg {
    Explicit { expression: String },
    Sos { n: usize, d: usize, p: Vec<Vec<f64>> },
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "lowercase")]
pub enum ControllerCfg {
    Lqr { q: Vec<Vec<f64>>, r: Vec<Vec<f64>> },
    Gain { k: Vec<Vec<f64>> },
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PsoCfg {
    pub swarm: usize,
    pub iterations: usize,
    #[serde(default = "default_bounds")]
    pub bounds: [f64; 2],
    pub seed: u64,
    #[serde(default)]
    pub d: Option<usize>,
}

fn default_bounds() -> [f64; 2] {
    [-3.0, 3.0]
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SimCfg {
    #[serde(default = "default_trajectories")]
    pub trajectories: usize,
    #[serde(default = "default_max_steps")]
    pub max_steps: usize,
    #[serde(default = "default_conv_tol")]
    pub conv_tol: f64,
    pub seed: u64,
}

fn default_trajectories() -> usize {
    200
}

fn default_max_steps() -> usize {
    200
}

fn default_conv_tol() -> f64 {
    1e-3
}

impl Default for SimCfg {
    fn default() -> Self {
        SimCfg {
            trajectories: default_trajectories(),
            max_steps: default_max_steps(),
            conv_tol: default_conv_tol(),
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunConfig {
    pub plant: PlantCfg,
    pub cons: ConsCfg,
    pub alpha: f64,
    pub eps: f64,
    pub lyapunov: LyapCfg,
    pub controller: ControllerCfg,
    #[serde(default)]
    pub pso: Option<PsoCfg>,
    #[serde(default)]
    pub sim: Option<SimCfg>,
    #[serde(default)]
    pub output_dir: Option<String>,
}

fn to_dmatrix(rows: &[Vec<f64>], what: &str) -> Result<DMatrix<f64>> {
    if rows.is_empty() {
        return Err(Error::Config(format!("{what}: empty matrix")));
    }
    let cols = rows[0].len();
    if cols == 0 || rows.iter().any(|r| r.len() != cols) {
        return Err(Error::Config(format!("{what}: ragged or empty matrix")));
    }
    let flat: Vec<f64> = rows.iter().flatten().cloned().collect();
    Ok(DMatrix::from_row_slice(rows.len(), cols, &flat))
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<RunConfig> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    pub fn build_plant(&self) -> Result<PlantModel> {
        PlantModel::parse(self.plant.n, self.plant.m, &self.plant.dynamics)
    }

    pub fn build_cons(&self) -> Result<IvBox> {
        let dim = self.plant.n + self.plant.m;
        if self.cons.lo.len() != dim || self.cons.hi.len() != dim {
            return Err(Error::Config(format!(
                "constraint box needs {dim} dims (n + m), got lo:{} hi:{}",
                self.cons.lo.len(),
                self.cons.hi.len()
            )));
        }
        for (l, h) in self.cons.lo.iter().zip(&self.cons.hi) {
            if !l.is_finite() || !h.is_finite() {
                return Err(Error::Config("constraint box must be compact".into()));
            }
            if l >= h {
                return Err(Error::Config(format!(
                    "constraint interval [{l}, {h}] is inverted or empty"
                )));
            }
        }
        Ok(IvBox::from_bounds(
            &self.cons.lo,
            &self.cons.hi,
            self.plant.n,
            self.plant.m,
        ))
    }

    /// The Lyapunov candidate as an expression over the state.
    pub fn build_lyapunov(&self) -> Result<ExprAst> {
        match &self.lyapunov {
            LyapCfg::Explicit { expression } => {
                let ast = expr::parse(expression, self.plant.n, self.plant.m)?;
                if ast.references_ctrl() {
                    return Err(Error::Config(
                        "Lyapunov candidate must be a function of the state only".into(),
                    ));
                }
                Ok(ast)
            }
            LyapCfg::Sos { n, d, p } => {
                if *n != self.plant.n {
                    return Err(Error::Config(format!(
                        "sos candidate declares n={n}, plant has n={}",
                        self.plant.n
                    )));
                }
                let p = to_dmatrix(p, "lyapunov.p")?;
                let lyap = SosLyapunov::new(*n, *d, p)?;
                lyapopt::sos_to_expr(&lyap)
            }
        }
    }

    pub fn negdef_spec(&self) -> Result<NegDefSpec> {
        let spec = NegDefSpec {
            plant: self.build_plant()?,
            lyapunov: self.build_lyapunov()?,
            cons: self.build_cons()?,
            alpha: self.alpha,
            eps: self.eps,
        };
        spec.validate()?;
        Ok(spec)
    }

    /// The configured gain: computed from LQR weights or validated
    /// as-given.
    pub fn build_gain(&self, plant: &PlantModel) -> Result<DMatrix<f64>> {
        match &self.controller {
            ControllerCfg::Lqr { q, r } => {
                let q = to_dmatrix(q, "controller.q")?;
                let r = to_dmatrix(r, "controller.r")?;
                control::linear_gain(plant, &q, &r)
            }
            ControllerCfg::Gain { k } => {
                let k = to_dmatrix(k, "controller.k")?;
                control::validate_gain(plant, &k)?;
                Ok(k)
            }
        }
    }

    pub fn search_spec(&self) -> Result<(LyapSearchSpec, PsoConfig)> {
        let pso = self
            .pso
            .as_ref()
            .ok_or_else(|| Error::Config("config has no pso section".into()))?;
        let LyapCfg::Sos { d: cfg_d, .. } = &self.lyapunov else {
            return Err(Error::Config(
                "optimize requires an sos lyapunov section (explicit candidates fix L)".into(),
            ));
        };
        let d = pso.d.unwrap_or(*cfg_d);
        let spec = LyapSearchSpec {
            plant: self.build_plant()?,
            cons: self.build_cons()?,
            alpha: self.alpha,
            eps: self.eps,
            d,
        };
        let cfg = PsoConfig {
            swarm: pso.swarm,
            iterations: pso.iterations,
            bounds: (pso.bounds[0], pso.bounds[1]),
            seed: pso.seed,
            ..PsoConfig::default()
        };
        Ok((spec, cfg))
    }

    pub fn sim(&self) -> SimCfg {
        self.sim.clone().unwrap_or_default()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const SEC41: &str = r#"{
        "plant": {"n": 1, "m": 1, "dynamics": ["-sin(2*x1) - x1*u1 - 0.2*x1 - u1^2 + u1"]},
        "cons": {"lo": [-2.0, -2.0], "hi": [2.0, 2.0]},
        "alpha": 1e-15,
        "eps": 0.01,
        "lyapunov": {"mode": "explicit", "expression": "x1^2"},
        "controller": {"mode": "gain", "k": [[1.8649]]},
        "sim": {"trajectories": 200, "max_steps": 200, "conv_tol": 1e-3, "seed": 7}
    }"#;

    #[test]
    fn parses_and_builds_section_4_config() {
        let cfg: RunConfig = serde_json::from_str(SEC41).unwrap();
        let spec = cfg.negdef_spec().unwrap();
        assert_eq!(spec.plant.n(), 1);
        assert_eq!(spec.cons.dim(), 2);
        let plant = cfg.build_plant().unwrap();
        let k = cfg.build_gain(&plant).unwrap();
        assert_eq!(k[(0, 0)], 1.8649);
        assert_eq!(cfg.sim().trajectories, 200);
    }

    #[test]
    fn rejects_non_equilibrium_plant() {
        let mut cfg: RunConfig = serde_json::from_str(SEC41).unwrap();
        cfg.plant.dynamics = vec!["x1 + u1 + 0.5".to_string()];
        assert!(matches!(cfg.build_plant(), Err(Error::Config(_))));
    }

    #[test]
    fn rejects_bad_dimensions_and_bounds() {
        let mut cfg: RunConfig = serde_json::from_str(SEC41).unwrap();
        cfg.cons.lo = vec![-2.0];
        assert!(cfg.build_cons().is_err());

        let mut cfg: RunConfig = serde_json::from_str(SEC41).unwrap();
        cfg.cons.hi[0] = f64::INFINITY;
        assert!(cfg.build_cons().is_err());

        let mut cfg: RunConfig = serde_json::from_str(SEC41).unwrap();
        cfg.eps = 0.0;
        assert!(cfg.negdef_spec().is_err());
    }

    #[test]
    fn sos_lyapunov_mode_builds() {
        let mut cfg: RunConfig = serde_json::from_str(SEC41).unwrap();
        cfg.lyapunov = LyapCfg::Sos {
            n: 1,
            d: 2,
            p: vec![vec![1.0, 0.0], vec![0.0, 1.0]],
        };
        let l = cfg.build_lyapunov().unwrap();
        // identity P gives x^2 + x^4
        let v = expr::eval_scalar(&l, &[2.0], &[0.0]).unwrap();
        assert_eq!(v, 20.0);
    }
}
