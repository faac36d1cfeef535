//! End-to-end convergence runs: fine reference once, then one multiscale
//! solve per coarse level.

use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use super::config::ExperimentConfig;
use crate::coefficients::{sample_field, CoefficientField, ElementParams};
use crate::error::{Error, Result};
use crate::fem::{
    assemble_forms, assemble_load, interpolate_nodal, l2_norm_sq_nodal, AssembledForms, FeSpace, FieldKind,
};
use crate::interpolation::{nodal_prolongation, quasi_interpolation};
use crate::lod::{assemble_coarse_system, build_ms_basis, BasisProblem, CoarseSystem, FormId, MsBasis};
use crate::mesh::Mesh;
use crate::metrics::{relative_error, ErrorReport, LevelRecord};
use crate::time::{
    energies, energy_identity_residuals, ms_initial_pressure, run, smallest_ritz_value, stability_ratio, LoadSchedule,
    SpaceTag, SystemRef, TimeGrid, TimeSeriesSolution,
};

pub const VERSION: &str = concat!("porolod ", env!("CARGO_PKG_VERSION"));

/// Invariant checks evaluated on a computed time series.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunDiagnostics {
    /// Largest per-step relative residual of the energy identity.
    pub max_energy_residual: f64,
    /// Largest ratio of the two sides of the stability bound (≤ 1 expected).
    pub stability_ratio: f64,
    /// `Some(monotone)` when `f = 0`, where the energy must not increase.
    pub energy_nonincreasing: Option<bool>,
}

/// Everything shared by the fine run and all coarse levels.
pub struct Experiment {
    pub config: ExperimentConfig,
    pub fine_mesh: Arc<Mesh>,
    pub u_space: FeSpace,
    pub p_space: FeSpace,
    pub field: CoefficientField,
    pub params: ElementParams,
    pub forms: AssembledForms,
    pub p0: Vec<f64>,
    pub loads: LoadSchedule,
    /// `‖f‖²` (time-independent).
    pub f_sq: f64,
    pub c_kappa: f64,
    pub grid: TimeGrid,
    f_is_zero: bool,
}

/// Output of one coarse level.
pub struct LevelOutput {
    pub coarse: CoarseSystem,
    pub ms: TimeSeriesSolution,
    pub prolonged: TimeSeriesSolution,
    pub diagnostics: RunDiagnostics,
}

/// Where multiscale bases come from.
#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    pub export_basis: Option<PathBuf>,
    pub import_basis: Option<PathBuf>,
}

impl Experiment {
    pub fn setup(config: &ExperimentConfig) -> Result<Self> {
        config.validate()?;
        let eps = Mesh::structured(config.dim, config.eps_cells)?;
        let field = match config.constant_coefficients {
            Some(c) => {
                let mut f = CoefficientField::constant(&eps, c.kappa, c.mu, c.lambda, c.alpha);
                f.biot_modulus = config.biot_modulus;
                f.viscosity = config.viscosity;
                f.seed = config.seed;
                f
            }
            None => sample_field(&eps, &config.bounds, config.biot_modulus, config.viscosity, config.seed)?,
        };
        Self::with_field(config, field)
    }

    /// Uses the given coefficient field instead of sampling one.
    pub fn with_field(config: &ExperimentConfig, field: CoefficientField) -> Result<Self> {
        config.validate()?;
        let fine_mesh = Arc::new(Mesh::structured(config.dim, config.fine_cells)?);
        let u_space = FeSpace::new(fine_mesh.clone(), FieldKind::Vector, &config.bc.u)?;
        let p_space = FeSpace::new(fine_mesh.clone(), FieldKind::Scalar, &config.bc.p)?;
        let params = field.restrict_to_fine(&fine_mesh)?;
        let forms = assemble_forms(&u_space, &p_space, &params, field.biot_modulus, field.viscosity)?;
        let p0_fn = config.p0.evaluator()?;
        let p0 = interpolate_nodal(&p_space, |x, _| p0_fn(x))?;
        let source = config.f.to_source(config.seed);
        let loads = LoadSchedule::Steady(assemble_load(&p_space, &source)?);
        let f_sq = l2_norm_sq_nodal(&fine_mesh, &source.nodal_values(&fine_mesh)?);
        let gram = forms.m_p.add_scaled(1.0, &forms.g_p, 1.0)?;
        let c_kappa = smallest_ritz_value(&forms.b, &gram)?;
        Ok(Self {
            config: config.clone(),
            grid: config.grid()?,
            fine_mesh,
            u_space,
            p_space,
            field,
            params,
            forms,
            p0,
            loads,
            f_sq,
            c_kappa,
            f_is_zero: source.is_zero(),
        })
    }

    fn diagnose(&self, sys: SystemRef, sol: &TimeSeriesSolution, loads: &LoadSchedule) -> Result<RunDiagnostics> {
        let res = energy_identity_residuals(sys, sol, loads);
        let f_sq = vec![self.f_sq; sol.grid.n_steps];
        let e = energies(sys, sol);
        Ok(RunDiagnostics {
            max_energy_residual: res.iter().fold(0.0, |m, &r| m.max(r)),
            stability_ratio: stability_ratio(sys, sol, &f_sq, self.c_kappa)?,
            energy_nonincreasing: self
                .f_is_zero
                .then(|| e.windows(2).all(|w| w[1] <= w[0] * (1.0 + 1e-12))),
        })
    }

    pub fn solve_fine(&self) -> Result<(TimeSeriesSolution, RunDiagnostics)> {
        let sys = SystemRef::from(&self.forms);
        let sol = run(sys, &self.p0, &self.loads, self.grid, SpaceTag::Fine)?;
        let diag = self.diagnose(sys, &sol, &self.loads)?;
        Ok((sol, diag))
    }

    pub fn coarse_spaces(&self, coarse_cells: usize) -> Result<(FeSpace, FeSpace)> {
        let m = Arc::new(Mesh::structured(self.config.dim, coarse_cells)?);
        Ok((
            FeSpace::new(m.clone(), FieldKind::Vector, &self.config.bc.u)?,
            FeSpace::new(m, FieldKind::Scalar, &self.config.bc.p)?,
        ))
    }

    /// Displacement and pressure bases for one level.
    pub fn build_bases(&self, coarse_cells: usize) -> Result<(MsBasis, MsBasis)> {
        let (cu, cp) = self.coarse_spaces(coarse_cells)?;
        let (ell, loc, seed) = (self.config.ell, self.config.localization, self.config.seed);
        let iu = quasi_interpolation(&self.u_space, &cu)?;
        let pu = nodal_prolongation(&self.u_space, &cu)?;
        let bu = build_ms_basis(
            &BasisProblem {
                form_id: FormId::A,
                matrix: &self.forms.a,
                coefficients: &self.forms.a_coefficients,
                interp: &iu,
                prolongation: &pu,
                fine: &self.u_space,
                coarse: &cu,
            },
            ell,
            loc,
            seed,
        )?;
        let ip = quasi_interpolation(&self.p_space, &cp)?;
        let pp = nodal_prolongation(&self.p_space, &cp)?;
        let bp = build_ms_basis(
            &BasisProblem {
                form_id: FormId::B,
                matrix: &self.forms.b,
                coefficients: &self.forms.b_coefficients,
                interp: &ip,
                prolongation: &pp,
                fine: &self.p_space,
                coarse: &cp,
            },
            ell,
            loc,
            seed,
        )?;
        Ok((bu, bp))
    }

    /// Multiscale run on the given bases, prolonged to the fine DOFs.
    pub fn solve_level(&self, basis_u: MsBasis, basis_p: MsBasis) -> Result<LevelOutput> {
        let basis_u = Arc::new(basis_u);
        let basis_p = Arc::new(basis_p);
        let coarse = assemble_coarse_system(&self.forms, basis_u.clone(), basis_p.clone())?;
        let sys = SystemRef::from(&coarse);
        let p0 = ms_initial_pressure(&self.forms.b, &basis_p, &coarse.b, &self.p0)?;
        let loads = self.loads.map(&basis_p.basis.transpose());
        let ms = run(sys, &p0, &loads, self.grid, SpaceTag::Multiscale)?;
        let diagnostics = self.diagnose(sys, &ms, &loads)?;
        let prolonged = ms.map(&basis_u.basis, &basis_p.basis, SpaceTag::Fine);
        Ok(LevelOutput {
            coarse,
            ms,
            prolonged,
            diagnostics,
        })
    }
}

/// Path of an exported basis file inside `dir`.
pub fn basis_path(dir: &Path, coarse_cells: usize, field: char) -> PathBuf {
    dir.join(format!("basis_H{coarse_cells}_{field}.csv"))
}

fn write_basis(path: &Path, b: &MsBasis) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    b.write_csv(&mut w)?;
    std::io::Write::flush(&mut w)?;
    Ok(())
}

fn read_basis(path: &Path, exp: &Experiment, coarse_cells: usize, form: FormId, n_coarse: usize) -> Result<MsBasis> {
    let file =
        File::open(path).map_err(|e| Error::Io(std::io::Error::new(e.kind(), format!("{}: {e}", path.display()))))?;
    let b = MsBasis::read_csv(BufReader::new(file))?;
    let c = &exp.config;
    let n_fine = match form {
        FormId::A => exp.u_space.n_free(),
        FormId::B => exp.p_space.n_free(),
    };
    let mut v = Vec::new();
    let m = b.meta;
    if b.form_id != form {
        v.push(format!("form {} instead of {}", b.form_id.as_str(), form.as_str()));
    }
    if (m.dim, m.fine_cells, m.coarse_cells) != (c.dim, c.fine_cells, coarse_cells) {
        v.push(format!(
            "mesh (dim {}, fine {}, coarse {}) does not match (dim {}, fine {}, coarse {coarse_cells})",
            m.dim, m.fine_cells, m.coarse_cells, c.dim, c.fine_cells
        ));
    }
    if b.layers != c.ell {
        v.push(format!("layers {:?} instead of {:?}", b.layers, c.ell));
    }
    if b.localization != c.localization {
        v.push(format!(
            "localization {} instead of {}",
            b.localization.as_str(),
            c.localization.as_str()
        ));
    }
    if m.seed != c.seed {
        v.push(format!("seed {} instead of {}", m.seed, c.seed));
    }
    if (b.n_fine(), b.n_coarse()) != (n_fine, n_coarse) {
        v.push(format!(
            "shape {}x{} instead of {n_fine}x{n_coarse}",
            b.n_fine(),
            b.n_coarse()
        ));
    }
    if v.is_empty() {
        Ok(b)
    } else {
        Err(Error::Config(
            v.into_iter().map(|s| format!("{}: {s}", path.display())).collect(),
        ))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorInfo {
    pub kind: String,
    pub message: String,
}

impl From<&Error> for ErrorInfo {
    fn from(e: &Error) -> Self {
        Self {
            kind: e.kind().to_string(),
            message: e.to_string(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FineRecord {
    pub n_u_dofs: usize,
    pub n_p_dofs: usize,
    pub setup_time_s: f64,
    pub solve_time_s: f64,
    pub c_kappa: f64,
    pub diagnostics: RunDiagnostics,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LevelOutcome {
    pub coarse_cells: usize,
    #[serde(rename = "H")]
    pub h: f64,
    pub error: Option<ErrorInfo>,
    pub rel_error: Option<f64>,
    pub n_coarse_dofs: Option<usize>,
    pub basis_time_s: f64,
    pub online_time_s: f64,
    pub max_kkt_residual: Option<f64>,
    pub diagnostics: Option<RunDiagnostics>,
}

/// JSON sidecar of a convergence run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub version: String,
    pub config: ExperimentConfig,
    pub fine: FineRecord,
    pub levels: Vec<LevelOutcome>,
    pub report: ErrorReport,
    pub slope: Option<f64>,
    pub total_time_s: f64,
}

impl RunRecord {
    pub fn failed_levels(&self) -> usize {
        self.levels.iter().filter(|l| l.error.is_some()).count()
    }
}

/// Runs the fine reference and every coarse level. Failing levels are
/// recorded and skipped; setup and fine-solve failures abort the run.
pub fn run_convergence(config: &ExperimentConfig, opts: &RunOptions) -> Result<RunRecord> {
    let start = Instant::now();
    let exp = Experiment::setup(config)?;
    let setup_time_s = start.elapsed().as_secs_f64();
    let t = Instant::now();
    let (fine, fine_diag) = exp.solve_fine()?;
    let fine_record = FineRecord {
        n_u_dofs: exp.u_space.n_free(),
        n_p_dofs: exp.p_space.n_free(),
        setup_time_s,
        solve_time_s: t.elapsed().as_secs_f64(),
        c_kappa: exp.c_kappa,
        diagnostics: fine_diag,
    };
    if let Some(dir) = &opts.export_basis {
        std::fs::create_dir_all(dir)?;
    }

    let mut levels = Vec::new();
    let mut report = ErrorReport::default();
    for &n in &config.coarse_cells {
        let h = Mesh::structured(config.dim, n)?.mesh_size();
        let mut outcome = LevelOutcome {
            coarse_cells: n,
            h,
            error: None,
            rel_error: None,
            n_coarse_dofs: None,
            basis_time_s: 0.0,
            online_time_s: 0.0,
            max_kkt_residual: None,
            diagnostics: None,
        };
        let result = (|| -> Result<()> {
            let t = Instant::now();
            let (bu, bp) = match &opts.import_basis {
                Some(dir) => {
                    let (cu, cp) = exp.coarse_spaces(n)?;
                    (
                        read_basis(&basis_path(dir, n, 'u'), &exp, n, FormId::A, cu.n_free())?,
                        read_basis(&basis_path(dir, n, 'p'), &exp, n, FormId::B, cp.n_free())?,
                    )
                }
                None => exp.build_bases(n)?,
            };
            if let Some(dir) = &opts.export_basis {
                write_basis(&basis_path(dir, n, 'u'), &bu)?;
                write_basis(&basis_path(dir, n, 'p'), &bp)?;
            }
            outcome.basis_time_s = t.elapsed().as_secs_f64();
            outcome.max_kkt_residual = Some(bu.max_residual().max(bp.max_residual()));
            outcome.n_coarse_dofs = Some(bu.n_coarse() + bp.n_coarse());
            let t = Instant::now();
            let out = exp.solve_level(bu, bp)?;
            let err = relative_error(&out.prolonged, &fine, &exp.forms.g_u, &exp.forms.g_p)?;
            outcome.online_time_s = t.elapsed().as_secs_f64();
            outcome.rel_error = Some(err);
            outcome.diagnostics = Some(out.diagnostics);
            Ok(())
        })();
        match result {
            Ok(()) => report.push(LevelRecord {
                h,
                coarse_cells: n,
                rel_error: outcome.rel_error.unwrap(),
                n_coarse_dofs: outcome.n_coarse_dofs.unwrap(),
                wall_time_s: outcome.basis_time_s + outcome.online_time_s,
            }),
            Err(e) => outcome.error = Some(ErrorInfo::from(&e)),
        }
        levels.push(outcome);
    }
    let slope = report.slope().ok();
    Ok(RunRecord {
        version: VERSION.to_string(),
        config: config.clone(),
        fine: fine_record,
        levels,
        report,
        slope,
        total_time_s: start.elapsed().as_secs_f64(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::harness::preset;

    fn small(name: &str) -> ExperimentConfig {
        let mut c = preset(name).unwrap();
        c.fine_cells = 8;
        c.eps_cells = 4;
        c.coarse_cells = vec![2, 8];
        c.tau = 0.1;
        c
    }

    #[test]
    fn coarse_equal_fine_level_is_exact() {
        for name in ["exp1", "exp2", "exp3"] {
            let rec = run_convergence(&small(name), &RunOptions::default()).unwrap();
            assert_eq!(rec.failed_levels(), 0);
            assert!(rec.levels[1].rel_error.unwrap() <= 1e-9, "{name}: {:?}", rec.levels[1]);
            assert!(rec.levels[0].rel_error.unwrap() > 1e-6);
            assert!(rec.fine.diagnostics.max_energy_residual <= 1e-10);
            assert!(rec.fine.diagnostics.stability_ratio <= 1.0);
        }
    }

    #[test]
    fn failing_level_is_recorded() {
        let mut c = small("exp1");
        c.coarse_cells = vec![2, 4];
        let dir = std::env::temp_dir().join(format!("porolod-missing-{}", std::process::id()));
        let opts = RunOptions {
            export_basis: None,
            import_basis: Some(dir),
        };
        let rec = run_convergence(&c, &opts).unwrap();
        assert_eq!(rec.failed_levels(), 2);
        assert_eq!(rec.levels[0].error.as_ref().unwrap().kind, "io");
        assert!(rec.report.records.is_empty());
    }
}
