//! Experiment configuration (JSON) and the built-in presets.

use serde::{Deserialize, Serialize};

use super::expr::Expr;
use crate::coefficients::ParameterBounds;
use crate::error::{Error, Result};
use crate::fem::Source;
use crate::lod::Localization;
use crate::mesh::FaceTag;
use crate::time::TimeGrid;

/// Dirichlet faces per field, as tags like `"x2=1"`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundaryConfig {
    pub u: Vec<FaceTag>,
    pub p: Vec<FaceTag>,
}

/// Initial pressure `p⁰`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum InitialPressure {
    Zero,
    Constant {
        value: f64,
    },
    /// `∏ xᵢ(1 − xᵢ)` over the listed axes (1-based).
    Bubble {
        axes: Vec<usize>,
    },
    /// `√(1 − x_axis)` (1-based axis).
    SqrtProfile {
        axis: usize,
    },
    /// Expression in `x1`, `x2`, `x3`.
    Expr {
        expr: String,
    },
}

impl InitialPressure {
    pub fn evaluator(&self) -> Result<Box<dyn Fn(&[f64]) -> f64 + Send + Sync>> {
        Ok(match self.clone() {
            InitialPressure::Zero => Box::new(|_| 0.0),
            InitialPressure::Constant { value } => Box::new(move |_| value),
            InitialPressure::Bubble { axes } => {
                Box::new(move |x| axes.iter().map(|&a| x[a - 1] * (1.0 - x[a - 1])).product())
            }
            InitialPressure::SqrtProfile { axis } => Box::new(move |x| (1.0 - x[axis - 1]).max(0.0).sqrt()),
            InitialPressure::Expr { expr } => {
                let e = Expr::parse(&expr)?;
                Box::new(move |x| e.eval(x))
            }
        })
    }

    fn problems(&self, dim: usize) -> Vec<String> {
        let axis_ok = |a: usize| (1..=dim).contains(&a);
        match self {
            InitialPressure::Bubble { axes } if axes.iter().any(|&a| !axis_ok(a)) => {
                vec![format!("p0 bubble axes {axes:?} must lie in 1..={dim}")]
            }
            InitialPressure::SqrtProfile { axis } if !axis_ok(*axis) => {
                vec![format!("p0 sqrt_profile axis {axis} must lie in 1..={dim}")]
            }
            InitialPressure::Expr { expr } => match Expr::parse(expr) {
                Err(e) => vec![format!("p0 {e}")],
                Ok(e) if e.max_var().is_some_and(|v| v >= dim) => {
                    vec![format!("p0 expression uses x{} in {dim}D", e.max_var().unwrap() + 1)]
                }
                Ok(_) => vec![],
            },
            _ => vec![],
        }
    }
}

/// Source term `f`, constant in time.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SourceConfig {
    Zero,
    Constant {
        value: f64,
    },
    /// Nodal `U[0,1)` values; without a seed, `config.seed + 1` is used.
    RandomNodal {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        seed: Option<u64>,
    },
}

impl SourceConfig {
    pub fn to_source(&self, config_seed: u64) -> Source {
        match self {
            SourceConfig::Zero => Source::Zero,
            SourceConfig::Constant { value } => Source::Constant(*value),
            SourceConfig::RandomNodal { seed } => Source::RandomNodal {
                seed: seed.unwrap_or(config_seed.wrapping_add(1)),
            },
        }
    }
}

/// Fixed values used instead of random sampling.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConstantCoefficients {
    pub kappa: f64,
    pub mu: f64,
    pub lambda: f64,
    pub alpha: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub name: String,
    pub dim: usize,
    pub fine_cells: usize,
    pub eps_cells: usize,
    pub coarse_cells: Vec<usize>,
    pub tau: f64,
    #[serde(rename = "T")]
    pub t_final: f64,
    pub seed: u64,
    /// Patch layers; `null` means global correctors.
    pub ell: Option<usize>,
    /// Corrector localization; element correctors unless set.
    #[serde(default)]
    pub localization: Localization,
    pub bc: BoundaryConfig,
    pub p0: InitialPressure,
    pub f: SourceConfig,
    pub bounds: ParameterBounds,
    #[serde(rename = "M")]
    pub biot_modulus: f64,
    #[serde(rename = "nu")]
    pub viscosity: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub constant_coefficients: Option<ConstantCoefficients>,
}

impl ExperimentConfig {
    pub fn from_json(s: &str) -> Result<Self> {
        let c: Self = serde_json::from_str(s)?;
        c.validate()?;
        Ok(c)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    pub fn grid(&self) -> Result<TimeGrid> {
        TimeGrid::from_final_time(self.tau, self.t_final)
    }

    /// Checks every invariant and reports all violations at once.
    pub fn validate(&self) -> Result<()> {
        let mut v = Vec::new();
        if !(2..=3).contains(&self.dim) {
            v.push(format!("dim must be 2 or 3, got {}", self.dim));
        }
        if self.fine_cells == 0 {
            v.push("fine_cells must be positive".into());
        }
        if self.eps_cells == 0 || (self.fine_cells > 0 && !self.fine_cells.is_multiple_of(self.eps_cells)) {
            v.push(format!(
                "eps_cells {} must be positive and divide fine_cells {}",
                self.eps_cells, self.fine_cells
            ));
        }
        if self.coarse_cells.is_empty() {
            v.push("coarse_cells must list at least one level".into());
        }
        for &n in &self.coarse_cells {
            if n == 0 || (self.fine_cells > 0 && !self.fine_cells.is_multiple_of(n)) {
                v.push(format!(
                    "coarse_cells {n} must be positive and divide fine_cells {}",
                    self.fine_cells
                ));
            }
        }
        if !(self.tau > 0.0) {
            v.push(format!("tau must be positive, got {}", self.tau));
        } else if let Err(e) = self.grid() {
            v.push(e.to_string());
        }
        for (field, faces) in [("u", &self.bc.u), ("p", &self.bc.p)] {
            for f in faces.iter().filter(|f| f.axis >= self.dim) {
                v.push(format!("bc.{field} face {f} does not exist in {}D", self.dim));
            }
        }
        if let Err(Error::Config(b)) = self.bounds.validate() {
            v.extend(b);
        }
        if !(self.biot_modulus > 0.0) {
            v.push(format!("M must be positive, got {}", self.biot_modulus));
        }
        if !(self.viscosity > 0.0) {
            v.push(format!("nu must be positive, got {}", self.viscosity));
        }
        if let Some(c) = &self.constant_coefficients {
            if !(c.kappa > 0.0 && c.mu > 0.0 && c.lambda >= 0.0) {
                v.push("constant_coefficients need kappa > 0, mu > 0, lambda >= 0".into());
            }
        }
        v.extend(self.p0.problems(self.dim));
        if v.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(v))
        }
    }
}

/// Names accepted by [`preset`].
pub const PRESETS: [&str; 4] = ["exp1", "exp2", "exp3", "exp3d"];

/// Desk-scale versions of the four reference experiments.
pub fn preset(name: &str) -> Result<ExperimentConfig> {
    let x = |axis: usize, upper: bool| FaceTag::new(axis - 1, upper);
    let base = ExperimentConfig {
        name: name.to_string(),
        dim: 2,
        fine_cells: 128,
        eps_cells: 32,
        coarse_cells: vec![2, 4, 8, 16, 32],
        tau: 0.01,
        t_final: 1.0,
        seed: 1,
        ell: Some(2),
        localization: Localization::Element,
        bc: BoundaryConfig {
            u: vec![x(2, true)],
            p: vec![x(2, true)],
        },
        p0: InitialPressure::Zero,
        f: SourceConfig::Zero,
        bounds: ParameterBounds::reference(),
        biot_modulus: 1.0,
        viscosity: 1.0,
        constant_coefficients: None,
    };
    let cfg = match name {
        "exp1" => ExperimentConfig {
            bc: BoundaryConfig {
                u: vec![x(2, false), x(2, true)],
                p: FaceTag::all(2),
            },
            p0: InitialPressure::Bubble { axes: vec![1, 2] },
            f: SourceConfig::Constant { value: 1.0 },
            ..base
        },
        "exp2" => ExperimentConfig {
            p0: InitialPressure::SqrtProfile { axis: 2 },
            ..base
        },
        "exp3" => ExperimentConfig {
            p0: InitialPressure::Bubble { axes: vec![2] },
            f: SourceConfig::RandomNodal { seed: None },
            ..base
        },
        "exp3d" => ExperimentConfig {
            dim: 3,
            fine_cells: 12,
            eps_cells: 6,
            coarse_cells: vec![2, 3, 6],
            tau: 0.05,
            bc: BoundaryConfig {
                u: vec![x(3, true)],
                p: vec![x(3, true)],
            },
            p0: InitialPressure::Bubble { axes: vec![1, 2, 3] },
            ..base
        },
        _ => {
            return Err(Error::Config(vec![format!(
                "unknown preset '{name}' (expected one of {})",
                PRESETS.join(", ")
            )]))
        }
    };
    Ok(cfg)
}
