//! Backward Euler stepping of the coupled system.
//!
//! Each step solves
//!
//! ```text
//! [ A   −Dᵀ    ] [uⁿ]   [            0             ]
//! [ D   C + τB ] [pⁿ] = [ τFⁿ + D uⁿ⁻¹ + C pⁿ⁻¹    ]
//! ```
//!
//! The second block row is negated before factoring, which turns the matrix
//! into the symmetric quasi-definite `[[A, −Dᵀ], [−D, −(C + τB)]]`. It is
//! factored once and reused for every step.

use std::io::Write;

use crate::error::{check_len, Error, Result};
use crate::fem::AssembledForms;
use crate::lod::{CoarseSystem, MsBasis};
use crate::sparse::{dot, CsrMatrix, FactorKind, Factorization};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TimeGrid {
    pub tau: f64,
    pub n_steps: usize,
}

impl TimeGrid {
    pub fn new(tau: f64, n_steps: usize) -> Result<Self> {
        if !(tau > 0.0 && tau.is_finite()) {
            return Err(Error::InvalidArgument(format!("time step must be positive, got {tau}")));
        }
        Ok(Self { tau, n_steps })
    }

    /// Grid with `N = T/τ` steps; `T/τ` must be an integer up to rounding.
    pub fn from_final_time(tau: f64, t_final: f64) -> Result<Self> {
        let n = t_final / tau;
        let k = n.round();
        if !(n.is_finite() && k >= 0.0 && (n - k).abs() <= 1e-9 * k.max(1.0)) {
            return Err(Error::InvalidArgument(format!(
                "T = {t_final} is not an integer multiple of tau = {tau}"
            )));
        }
        Self::new(tau, k as usize)
    }

    pub fn t(&self, n: usize) -> f64 {
        n as f64 * self.tau
    }

    pub fn final_time(&self) -> f64 {
        self.t(self.n_steps)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SpaceTag {
    Fine,
    Multiscale,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TimeSeriesSolution {
    pub grid: TimeGrid,
    /// `u[n]` for `n = 0..=N`.
    pub u: Vec<Vec<f64>>,
    pub p: Vec<Vec<f64>>,
    pub tag: SpaceTag,
}

impl TimeSeriesSolution {
    /// Maps every snapshot through `pu` and `pp` (e.g. multiscale prolongation).
    pub fn map(&self, pu: &CsrMatrix, pp: &CsrMatrix, tag: SpaceTag) -> Self {
        Self {
            grid: self.grid,
            u: self.u.iter().map(|x| pu.matvec(x)).collect(),
            p: self.p.iter().map(|x| pp.matvec(x)).collect(),
            tag,
        }
    }

    /// Writes `step,t,field,dof,value` rows for the selected steps.
    pub fn write_snapshots<W: Write>(&self, mut w: W, steps: &[usize]) -> std::io::Result<()> {
        writeln!(w, "step,t,field,dof,value")?;
        for &n in steps.iter().filter(|&&n| n <= self.grid.n_steps) {
            let t = self.grid.t(n);
            for (name, x) in [("u", &self.u[n]), ("p", &self.p[n])] {
                for (i, v) in x.iter().enumerate() {
                    writeln!(w, "{n},{t:?},{name},{i},{v:?}")?;
                }
            }
        }
        Ok(())
    }
}

/// Borrowed view of the four system matrices, fine or coarse.
#[derive(Debug, Clone, Copy)]
pub struct SystemRef<'a> {
    pub a: &'a CsrMatrix,
    pub b: &'a CsrMatrix,
    pub c: &'a CsrMatrix,
    /// Pressure rows × displacement columns.
    pub d: &'a CsrMatrix,
}

impl<'a> From<&'a AssembledForms> for SystemRef<'a> {
    fn from(f: &'a AssembledForms) -> Self {
        Self {
            a: &f.a,
            b: &f.b,
            c: &f.c,
            d: &f.d,
        }
    }
}

impl<'a> From<&'a CoarseSystem> for SystemRef<'a> {
    fn from(s: &'a CoarseSystem) -> Self {
        Self {
            a: &s.a,
            b: &s.b,
            c: &s.c,
            d: &s.d,
        }
    }
}

impl SystemRef<'_> {
    pub fn n_u(&self) -> usize {
        self.a.nrows()
    }

    pub fn n_p(&self) -> usize {
        self.b.nrows()
    }

    fn check(&self) -> Result<()> {
        check_len("system: B vs C", self.b.nrows(), self.c.nrows())?;
        check_len("system: D rows", self.n_p(), self.d.nrows())?;
        check_len("system: D cols", self.n_u(), self.d.ncols())
    }
}

/// Right-hand side loads `Fⁿ` (already tested against the pressure basis).
#[derive(Debug, Clone, PartialEq)]
pub enum LoadSchedule {
    /// The same load at every step.
    Steady(Vec<f64>),
    /// `loads[n - 1]` is used at step `n`.
    Sampled(Vec<Vec<f64>>),
}

impl LoadSchedule {
    pub fn at(&self, n: usize) -> &[f64] {
        match self {
            LoadSchedule::Steady(f) => f,
            LoadSchedule::Sampled(fs) => &fs[n - 1],
        }
    }

    /// Applies a linear map (e.g. `basisᵀ`) to every load vector.
    pub fn map(&self, m: &CsrMatrix) -> Self {
        match self {
            LoadSchedule::Steady(f) => LoadSchedule::Steady(m.matvec(f)),
            LoadSchedule::Sampled(fs) => LoadSchedule::Sampled(fs.iter().map(|f| m.matvec(f)).collect()),
        }
    }

    fn check(&self, n_p: usize, n_steps: usize) -> Result<()> {
        match self {
            LoadSchedule::Steady(f) => check_len("load vector", n_p, f.len()),
            LoadSchedule::Sampled(fs) => {
                check_len("load schedule steps", n_steps, fs.len())?;
                fs.iter().try_for_each(|f| check_len("load vector", n_p, f.len()))
            }
        }
    }
}

/// Solves `A u⁰ = Dᵀ p⁰`.
pub fn consistent_initial_displacement(a: &CsrMatrix, d: &CsrMatrix, p0: &[f64]) -> Result<Vec<f64>> {
    check_len("initial pressure", d.nrows(), p0.len())?;
    let rhs = d.matvec_transpose(p0);
    if rhs.iter().all(|&v| v == 0.0) {
        return Ok(vec![0.0; a.nrows()]);
    }
    Factorization::new(a, FactorKind::Spd)?.solve(&rhs)
}

/// Multiscale initial pressure: the `b`-orthogonal projection of `p⁰_h`,
/// i.e. `B_ms p = basisᵀ B p⁰_h`.
pub fn ms_initial_pressure(
    b_fine: &CsrMatrix,
    basis_p: &MsBasis,
    b_ms: &CsrMatrix,
    p0_fine: &[f64],
) -> Result<Vec<f64>> {
    check_len("initial pressure", b_fine.nrows(), p0_fine.len())?;
    let rhs = basis_p.basis.matvec_transpose(&b_fine.matvec(p0_fine));
    if rhs.iter().all(|&v| v == 0.0) {
        return Ok(vec![0.0; b_ms.nrows()]);
    }
    Factorization::new(b_ms, FactorKind::Spd)?.solve(&rhs)
}

/// The one-step matrix `[[A, −Dᵀ], [D, C + τB]]` as assembled (nonsymmetric).
pub fn block_operator(sys: SystemRef, tau: f64) -> Result<CsrMatrix> {
    sys.check()?;
    let ctb = sys.c.add_scaled(1.0, sys.b, tau)?;
    let mdt = sys.d.transpose().scale(-1.0);
    CsrMatrix::block(&[vec![Some(sys.a), Some(&mdt)], vec![Some(sys.d), Some(&ctb)]])
}

/// Factored one-step operator, reused across steps.
pub struct Stepper<'a> {
    sys: SystemRef<'a>,
    tau: f64,
    factor: Factorization,
}

impl<'a> Stepper<'a> {
    pub fn new(sys: SystemRef<'a>, tau: f64) -> Result<Self> {
        sys.check()?;
        if !(tau > 0.0) {
            return Err(Error::InvalidArgument(format!("time step must be positive, got {tau}")));
        }
        let neg = sys.c.add_scaled(-1.0, sys.b, -tau)?;
        let mdt = sys.d.transpose().scale(-1.0);
        let md = sys.d.scale(-1.0);
        let k = CsrMatrix::block(&[vec![Some(sys.a), Some(&mdt)], vec![Some(&md), Some(&neg)]])?;
        let factor = Factorization::new(&k, FactorKind::SymmetricIndefinite)?;
        Ok(Self { sys, tau, factor })
    }

    pub fn step(&self, u_prev: &[f64], p_prev: &[f64], load: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
        let (nu, np) = (self.sys.n_u(), self.sys.n_p());
        check_len("step: displacement", nu, u_prev.len())?;
        check_len("step: pressure", np, p_prev.len())?;
        check_len("step: load", np, load.len())?;
        let du = self.sys.d.matvec(u_prev);
        let cp = self.sys.c.matvec(p_prev);
        let mut rhs = vec![0.0; nu + np];
        for i in 0..np {
            rhs[nu + i] = -(self.tau * load[i] + du[i] + cp[i]);
        }
        self.factor.solve_in_place(&mut rhs)?;
        let p = rhs.split_off(nu);
        Ok((rhs, p))
    }
}

/// Runs `N` steps from `(u⁰, p⁰)` with `u⁰` from the consistency equation.
pub fn run(
    sys: SystemRef,
    p0: &[f64],
    loads: &LoadSchedule,
    grid: TimeGrid,
    tag: SpaceTag,
) -> Result<TimeSeriesSolution> {
    sys.check()?;
    check_len("initial pressure", sys.n_p(), p0.len())?;
    loads.check(sys.n_p(), grid.n_steps)?;
    let u0 = consistent_initial_displacement(sys.a, sys.d, p0)?;
    let mut u = vec![u0];
    let mut p = vec![p0.to_vec()];
    if grid.n_steps > 0 {
        let stepper = Stepper::new(sys, grid.tau)?;
        for n in 1..=grid.n_steps {
            let (un, pn) = stepper
                .step(&u[n - 1], &p[n - 1], loads.at(n))
                .map_err(|e| Error::Step {
                    step: n,
                    source: Box::new(e),
                })?;
            u.push(un);
            p.push(pn);
        }
    }
    Ok(TimeSeriesSolution { grid, u, p, tag })
}

/// Per-step residual of
/// `a(uⁿ, uⁿ − uⁿ⁻¹) + c(pⁿ − pⁿ⁻¹, pⁿ) + τ b(pⁿ, pⁿ) = τ (fⁿ, pⁿ)`,
/// relative to the sum of the magnitudes of the individual terms.
pub fn energy_identity_residuals(sys: SystemRef, sol: &TimeSeriesSolution, loads: &LoadSchedule) -> Vec<f64> {
    let tau = sol.grid.tau;
    (1..=sol.grid.n_steps)
        .map(|n| {
            let (u, u0, p, p0) = (&sol.u[n], &sol.u[n - 1], &sol.p[n], &sol.p[n - 1]);
            let au = sys.a.matvec(u);
            let cp = sys.c.matvec(p);
            let terms = [
                dot(&au, u),
                -dot(&au, u0),
                dot(&cp, p),
                -dot(&cp, p0),
                tau * sys.b.quadratic_form(p),
                -tau * dot(loads.at(n), p),
            ];
            let sum: f64 = terms.iter().sum();
            let scale: f64 = terms.iter().map(|t| t.abs()).sum();
            if scale == 0.0 {
                0.0
            } else {
                sum.abs() / scale
            }
        })
        .collect()
}

/// `‖uⁿ‖²_A + ‖pⁿ‖²_C` for every snapshot.
pub fn energies(sys: SystemRef, sol: &TimeSeriesSolution) -> Vec<f64> {
    sol.u
        .iter()
        .zip(&sol.p)
        .map(|(u, p)| sys.a.quadratic_form(u) + sys.c.quadratic_form(p))
        .collect()
}

/// Smallest generalized eigenvalue of `B x = λ G x` (Rayleigh quotient after
/// inverse iteration); with `G` the H¹ Gram matrix this is the coercivity
/// constant of `b`.
pub fn smallest_ritz_value(b: &CsrMatrix, g: &CsrMatrix) -> Result<f64> {
    check_len("ritz: G", b.nrows(), g.nrows())?;
    let n = b.nrows();
    if n == 0 {
        return Err(Error::InvalidArgument("empty matrix".into()));
    }
    let fb = Factorization::new(b, FactorKind::Spd)?;
    let mut x: Vec<f64> = (0..n).map(|i| 1.0 + 0.1 * ((i * 7 % 13) as f64)).collect();
    let mut lambda = f64::INFINITY;
    for _ in 0..1000 {
        let mut y = fb.solve(&g.matvec(&x))?;
        let s = g.quadratic_form(&y).sqrt();
        y.iter_mut().for_each(|v| *v /= s);
        let next = b.quadratic_form(&y);
        x = y;
        let done = (lambda - next).abs() <= 1e-12 * next;
        lambda = next;
        if done {
            break;
        }
    }
    Ok(lambda)
}

/// Checks, for every `n`,
/// `‖uⁿ‖²_A + ‖pⁿ‖²_C + τ Σ_{j≤n} ‖pʲ‖²_B ≤ (τ/c_κ) Σ_{j≤n} ‖fʲ‖² + ‖u⁰‖²_A + ‖p⁰‖²_C`.
/// `f_sq[j - 1]` is `‖fʲ‖²_{L²}`. Returns the largest ratio lhs/rhs.
pub fn stability_ratio(sys: SystemRef, sol: &TimeSeriesSolution, f_sq: &[f64], c_kappa: f64) -> Result<f64> {
    check_len("stability: load norms", sol.grid.n_steps, f_sq.len())?;
    let tau = sol.grid.tau;
    let e = energies(sys, sol);
    let (mut dissipated, mut supplied) = (0.0, 0.0);
    let mut worst: f64 = 0.0;
    for n in 1..=sol.grid.n_steps {
        dissipated += tau * sys.b.quadratic_form(&sol.p[n]);
        supplied += tau / c_kappa * f_sq[n - 1];
        let rhs = supplied + e[0];
        let lhs = e[n] + dissipated;
        if rhs > 0.0 {
            worst = worst.max(lhs / rhs);
        } else if lhs > 0.0 {
            worst = f64::INFINITY;
        }
    }
    Ok(worst)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::coefficients::ElementParams;
    use crate::fem::{assemble_forms, assemble_load, interpolate_nodal, FeSpace, FieldKind, Source};
    use crate::mesh::{FaceTag, Mesh};
    use crate::sparse::norm2;
    use std::sync::Arc;

    fn forms(n: usize, alpha: f64) -> (FeSpace, AssembledForms) {
        let m = Arc::new(Mesh::structured(2, n).unwrap());
        let u = FeSpace::new(
            m.clone(),
            FieldKind::Vector,
            &[FaceTag::new(1, false), FaceTag::new(1, true)],
        )
        .unwrap();
        let p = FeSpace::new(m.clone(), FieldKind::Scalar, &FaceTag::all(2)).unwrap();
        let params = ElementParams::constant(m.n_elements(), 1.0, 1.0, 1.0, alpha);
        let f = assemble_forms(&u, &p, &params, 1.0, 1.0).unwrap();
        (p, f)
    }

    fn bubble(p: &FeSpace) -> Vec<f64> {
        interpolate_nodal(p, |x, _| x[0] * (1.0 - x[0]) * x[1] * (1.0 - x[1])).unwrap()
    }

    #[test]
    fn grid_from_final_time() {
        assert_eq!(TimeGrid::from_final_time(0.01, 1.0).unwrap().n_steps, 100);
        assert_eq!(TimeGrid::from_final_time(0.05, 1.0).unwrap().n_steps, 20);
        assert!(TimeGrid::from_final_time(0.3, 1.0).is_err());
        assert!(TimeGrid::new(0.0, 3).is_err());
    }

    #[test]
    fn zero_data_stays_zero() {
        let (p, f) = forms(4, 1.0);
        let sys = SystemRef::from(&f);
        let grid = TimeGrid::new(0.1, 5).unwrap();
        let sol = run(
            sys,
            &vec![0.0; p.n_free()],
            &LoadSchedule::Steady(vec![0.0; p.n_free()]),
            grid,
            SpaceTag::Fine,
        )
        .unwrap();
        assert!(sol.u.iter().chain(&sol.p).all(|x| x.iter().all(|&v| v == 0.0)));
        assert_eq!(sol.u.len(), 6);
    }

    #[test]
    fn initial_displacement() {
        let (p, f) = forms(6, 1.0);
        let p0 = bubble(&p);
        let u0 = consistent_initial_displacement(&f.a, &f.d, &p0).unwrap();
        let rhs = f.d.matvec_transpose(&p0);
        assert!(crate::sparse::relative_residual(&f.a, &u0, &rhs) < 1e-10);
        let (_, f0) = forms(6, 0.0);
        assert!(consistent_initial_displacement(&f0.a, &f0.d, &p0)
            .unwrap()
            .iter()
            .all(|&v| v == 0.0));
    }

    #[test]
    fn block_form_is_coercive() {
        let (p, f) = forms(5, 0.7);
        let sys = SystemRef::from(&f);
        let tau = 0.03;
        let k = block_operator(sys, tau).unwrap();
        let mut g = crate::coefficients::uniform_stream(5, 0);
        let nu = f.a.nrows();
        let x: Vec<f64> = (0..nu + p.n_free()).map(|_| g() - 0.5).collect();
        let (u, q) = x.split_at(nu);
        let expect = f.a.quadratic_form(u) + f.c.quadratic_form(q) + tau * f.b.quadratic_form(q);
        assert!((k.quadratic_form(&x) - expect).abs() <= 1e-12 * expect);
    }

    #[test]
    fn energy_identity_and_decay() {
        let (p, f) = forms(8, 0.9);
        let sys = SystemRef::from(&f);
        let grid = TimeGrid::new(0.02, 10).unwrap();
        let zero = LoadSchedule::Steady(vec![0.0; p.n_free()]);
        let sol = run(sys, &bubble(&p), &zero, grid, SpaceTag::Fine).unwrap();
        assert!(energy_identity_residuals(sys, &sol, &zero).iter().all(|&r| r <= 1e-10));
        let e = energies(sys, &sol);
        assert!(e.windows(2).all(|w| w[1] <= w[0]));

        let load = LoadSchedule::Steady(assemble_load(&p, &Source::Constant(1.0)).unwrap());
        let sol = run(sys, &bubble(&p), &load, grid, SpaceTag::Fine).unwrap();
        assert!(energy_identity_residuals(sys, &sol, &load).iter().all(|&r| r <= 1e-10));
        let g = f.m_p.add_scaled(1.0, &f.g_p, 1.0).unwrap();
        let ck = smallest_ritz_value(&f.b, &g).unwrap();
        assert!(ck > 0.0 && ck < 1.0);
        let ratio = stability_ratio(sys, &sol, &vec![1.0; 10], ck).unwrap();
        assert!(ratio <= 1.0, "{ratio}");
    }

    #[test]
    fn steady_and_sampled_loads_agree() {
        let (p, f) = forms(4, 1.0);
        let sys = SystemRef::from(&f);
        let grid = TimeGrid::new(0.1, 4).unwrap();
        let load = assemble_load(&p, &Source::Constant(2.0)).unwrap();
        let a = run(
            sys,
            &bubble(&p),
            &LoadSchedule::Steady(load.clone()),
            grid,
            SpaceTag::Fine,
        )
        .unwrap();
        let b = run(
            sys,
            &bubble(&p),
            &LoadSchedule::Sampled(vec![load; 4]),
            grid,
            SpaceTag::Fine,
        )
        .unwrap();
        assert_eq!(a, b);
        let none = run(
            sys,
            &bubble(&p),
            &LoadSchedule::Sampled(vec![]),
            TimeGrid::new(0.1, 0).unwrap(),
            SpaceTag::Fine,
        )
        .unwrap();
        assert_eq!(none.p.len(), 1);
    }

    #[test]
    fn long_time_limit_is_stationary() {
        // Stationary oracle: B p = F, then A u = Dᵀ p, solved independently.
        let (p, f) = forms(6, 1.0);
        let sys = SystemRef::from(&f);
        let load = assemble_load(&p, &Source::Constant(1.0)).unwrap();
        let grid = TimeGrid::new(0.5, 200).unwrap();
        let sol = run(
            sys,
            &vec![0.0; p.n_free()],
            &LoadSchedule::Steady(load.clone()),
            grid,
            SpaceTag::Fine,
        )
        .unwrap();
        let ps = Factorization::new(&f.b, FactorKind::Spd).unwrap().solve(&load).unwrap();
        let us = consistent_initial_displacement(&f.a, &f.d, &ps).unwrap();
        let dp: Vec<f64> = sol.p[200].iter().zip(&ps).map(|(a, b)| a - b).collect();
        let du: Vec<f64> = sol.u[200].iter().zip(&us).map(|(a, b)| a - b).collect();
        assert!(norm2(&dp) <= 1e-8 * norm2(&ps));
        assert!(norm2(&du) <= 1e-8 * norm2(&us));
    }
}
