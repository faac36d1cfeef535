//! Random piecewise-constant material parameters on the ε-mesh.
//!
//! Sampling is reproducible across platforms: every parameter has its own
//! ChaCha8 stream (`rand_chacha::ChaCha8Rng::seed_from_u64(seed)` with
//! `set_stream(index)`, indices κ = 0, μ = 1, λ = 2, α = 3). Values are drawn in
//! element order as `lo + (hi − lo)·u` with `u = (next_u64 >> 11) · 2⁻⁵³`.

use std::io::{BufRead, Write};

use rand_chacha::ChaCha8Rng;
use rand_core::{RngCore, SeedableRng};
use serde::{Deserialize, Serialize};

use crate::error::{check_len, Error, Result};
use crate::mesh::{Mesh, Refinement};

/// Returns a closure producing the uniform `[0,1)` sequence of one stream.
pub fn uniform_stream(seed: u64, stream: u64) -> impl FnMut() -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    move || (rng.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Interval {
    pub lo: f64,
    pub hi: f64,
}

impl Interval {
    pub fn new(lo: f64, hi: f64) -> Self {
        Self { lo, hi }
    }

    pub fn contains(&self, v: f64) -> bool {
        self.lo <= v && v <= self.hi
    }
}

/// Sampling bounds for each parameter.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ParameterBounds {
    pub kappa: Interval,
    pub mu: Interval,
    pub lambda: Interval,
    pub alpha: Interval,
}

impl ParameterBounds {
    /// κ ∈ [0.1, 0.12], μ ∈ [32.2, 62.2], λ ∈ [40.98, 60.98], α ∈ [0.5, 1].
    pub fn reference() -> Self {
        Self {
            kappa: Interval::new(0.1, 0.12),
            mu: Interval::new(32.2, 62.2),
            lambda: Interval::new(40.98, 60.98),
            alpha: Interval::new(0.5, 1.0),
        }
    }

    fn named(&self) -> [(&'static str, Interval); 4] {
        [
            ("kappa", self.kappa),
            ("mu", self.mu),
            ("lambda", self.lambda),
            ("alpha", self.alpha),
        ]
    }

    pub fn validate(&self) -> Result<()> {
        let bad: Vec<String> = self
            .named()
            .iter()
            .filter(|(_, i)| !(i.lo < i.hi) || !i.lo.is_finite() || !i.hi.is_finite())
            .map(|(n, i)| format!("{n} bounds [{}, {}] need lo < hi", i.lo, i.hi))
            .collect();
        if bad.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(bad))
        }
    }
}

/// Per-element parameter arrays.
#[derive(Debug, Clone, PartialEq)]
pub struct ElementParams {
    pub kappa: Vec<f64>,
    pub mu: Vec<f64>,
    pub lambda: Vec<f64>,
    pub alpha: Vec<f64>,
}

impl ElementParams {
    pub fn constant(n: usize, kappa: f64, mu: f64, lambda: f64, alpha: f64) -> Self {
        Self {
            kappa: vec![kappa; n],
            mu: vec![mu; n],
            lambda: vec![lambda; n],
            alpha: vec![alpha; n],
        }
    }

    pub fn len(&self) -> usize {
        self.kappa.len()
    }

    pub fn is_empty(&self) -> bool {
        self.kappa.is_empty()
    }

    pub fn check_len(&self, n: usize) -> Result<()> {
        check_len("kappa per element", n, self.kappa.len())?;
        check_len("mu per element", n, self.mu.len())?;
        check_len("lambda per element", n, self.lambda.len())?;
        check_len("alpha per element", n, self.alpha.len())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CoefficientField {
    pub eps_cells: usize,
    pub dim: usize,
    pub values: ElementParams,
    pub biot_modulus: f64,
    pub viscosity: f64,
    pub seed: u64,
}

/// Draws one value per ε-element and parameter, independently and uniformly
/// within `bounds`.
pub fn sample_field(
    eps_mesh: &Mesh,
    bounds: &ParameterBounds,
    biot_modulus: f64,
    viscosity: f64,
    seed: u64,
) -> Result<CoefficientField> {
    bounds.validate()?;
    if !(biot_modulus > 0.0 && viscosity > 0.0) {
        return Err(Error::InvalidArgument("M and nu must be positive".into()));
    }
    let n = eps_mesh.n_elements();
    let draw = |stream: u64, iv: Interval| {
        let mut u = uniform_stream(seed, stream);
        (0..n).map(|_| iv.lo + (iv.hi - iv.lo) * u()).collect::<Vec<f64>>()
    };
    Ok(CoefficientField {
        eps_cells: eps_mesh.cells_per_side(),
        dim: eps_mesh.dim(),
        values: ElementParams {
            kappa: draw(0, bounds.kappa),
            mu: draw(1, bounds.mu),
            lambda: draw(2, bounds.lambda),
            alpha: draw(3, bounds.alpha),
        },
        biot_modulus,
        viscosity,
        seed,
    })
}

impl CoefficientField {
    pub fn constant(eps_mesh: &Mesh, kappa: f64, mu: f64, lambda: f64, alpha: f64) -> Self {
        Self {
            eps_cells: eps_mesh.cells_per_side(),
            dim: eps_mesh.dim(),
            values: ElementParams::constant(eps_mesh.n_elements(), kappa, mu, lambda, alpha),
            biot_modulus: 1.0,
            viscosity: 1.0,
            seed: 0,
        }
    }

    /// Copies ε-element values onto each fine element they contain.
    pub fn restrict_to_fine(&self, fine: &Mesh) -> Result<ElementParams> {
        let eps_mesh = Mesh::structured(self.dim, self.eps_cells)?;
        let r = Refinement::new(fine, &eps_mesh)?;
        let pick = |src: &[f64]| -> Vec<f64> { (0..fine.n_elements()).map(|e| src[r.parent(e)]).collect() };
        Ok(ElementParams {
            kappa: pick(&self.values.kappa),
            mu: pick(&self.values.mu),
            lambda: pick(&self.values.lambda),
            alpha: pick(&self.values.alpha),
        })
    }

    /// CSV with columns `element,kappa,mu,lambda,alpha`; floats round-trip exactly.
    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(
            w,
            "# dim={} eps_cells={} M={:?} nu={:?} seed={}",
            self.dim, self.eps_cells, self.biot_modulus, self.viscosity, self.seed
        )?;
        writeln!(w, "element,kappa,mu,lambda,alpha")?;
        let v = &self.values;
        for e in 0..v.len() {
            writeln!(
                w,
                "{e},{:?},{:?},{:?},{:?}",
                v.kappa[e], v.mu[e], v.lambda[e], v.alpha[e]
            )?;
        }
        Ok(())
    }

    pub fn read_csv<R: BufRead>(r: R) -> Result<Self> {
        let mut meta: Option<(usize, usize, f64, f64, u64)> = None;
        let mut values = ElementParams::constant(0, 0.0, 0.0, 0.0, 0.0);
        let perr = |m: String| Error::Parse(format!("coefficient csv: {m}"));
        for (ln, line) in r.lines().enumerate() {
            let line = line?;
            let line = line.trim();
            if line.is_empty() || line.starts_with("element") {
                continue;
            }
            if let Some(rest) = line.strip_prefix('#') {
                let mut kv = std::collections::BTreeMap::new();
                for tok in rest.split_whitespace() {
                    if let Some((k, v)) = tok.split_once('=') {
                        kv.insert(k.to_string(), v.to_string());
                    }
                }
                let get = |k: &str| {
                    kv.get(k)
                        .cloned()
                        .ok_or_else(|| perr(format!("missing metadata key {k}")))
                };
                let num = |k: &str| -> Result<f64> { get(k)?.parse().map_err(|_| perr(format!("bad value for {k}"))) };
                let int = |k: &str| -> Result<u64> { get(k)?.parse().map_err(|_| perr(format!("bad value for {k}"))) };
                meta = Some((
                    int("dim")? as usize,
                    int("eps_cells")? as usize,
                    num("M")?,
                    num("nu")?,
                    int("seed")?,
                ));
                continue;
            }
            let cols: Vec<&str> = line.split(',').collect();
            if cols.len() != 5 {
                return Err(perr(format!("line {}: expected 5 columns", ln + 1)));
            }
            let e: usize = cols[0]
                .parse()
                .map_err(|_| perr(format!("line {}: bad element index", ln + 1)))?;
            if e != values.len() {
                return Err(perr(format!("line {}: elements out of order", ln + 1)));
            }
            let f = |s: &str| -> Result<f64> {
                s.trim()
                    .parse()
                    .map_err(|_| perr(format!("line {}: bad number '{s}'", ln + 1)))
            };
            values.kappa.push(f(cols[1])?);
            values.mu.push(f(cols[2])?);
            values.lambda.push(f(cols[3])?);
            values.alpha.push(f(cols[4])?);
        }
        let (dim, eps_cells, m, nu, seed) = meta.ok_or_else(|| perr("missing metadata line".into()))?;
        let mesh = Mesh::structured(dim, eps_cells)?;
        values.check_len(mesh.n_elements())?;
        Ok(Self {
            eps_cells,
            dim,
            values,
            biot_modulus: m,
            viscosity: nu,
            seed,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sampling_is_deterministic_and_bounded() {
        let m = Mesh::structured(2, 8).unwrap();
        let b = ParameterBounds::reference();
        let f1 = sample_field(&m, &b, 1.0, 1.0, 42).unwrap();
        let f2 = sample_field(&m, &b, 1.0, 1.0, 42).unwrap();
        assert_eq!(f1, f2);
        let f3 = sample_field(&m, &b, 1.0, 1.0, 43).unwrap();
        assert_ne!(f1.values.kappa, f3.values.kappa);
        assert_eq!(f1.values.len(), m.n_elements());
        for (iv, vals) in [
            (b.kappa, &f1.values.kappa),
            (b.mu, &f1.values.mu),
            (b.lambda, &f1.values.lambda),
            (b.alpha, &f1.values.alpha),
        ] {
            assert!(vals.iter().all(|&v| iv.contains(v)));
        }
    }

    #[test]
    fn kappa_mean_monte_carlo() {
        // 2·71² = 10082 samples; the mean of U[0.1,0.12] has std 0.0058/√n ≈ 6e-5.
        let m = Mesh::structured(2, 71).unwrap();
        let f = sample_field(&m, &ParameterBounds::reference(), 1.0, 1.0, 7).unwrap();
        let mean = f.values.kappa.iter().sum::<f64>() / f.values.len() as f64;
        assert!((mean - 0.11).abs() < 1e-3, "mean {mean}");
    }

    #[test]
    fn rejects_empty_interval() {
        let m = Mesh::structured(2, 2).unwrap();
        let mut b = ParameterBounds::reference();
        b.alpha = Interval::new(1.0, 1.0);
        assert!(sample_field(&m, &b, 1.0, 1.0, 0).is_err());
    }

    #[test]
    fn restriction_counts() {
        let eps = Mesh::structured(2, 2).unwrap();
        let f = sample_field(&eps, &ParameterBounds::reference(), 1.0, 1.0, 1).unwrap();
        let same = f.restrict_to_fine(&eps).unwrap();
        assert_eq!(same, f.values);
        let fine = Mesh::structured(2, 8).unwrap();
        let r = f.restrict_to_fine(&fine).unwrap();
        for &v in &f.values.mu {
            assert_eq!(r.mu.iter().filter(|&&x| x == v).count(), 16);
        }
        let c = CoefficientField::constant(&eps, 2.0, 3.0, 4.0, 5.0);
        assert!(c.restrict_to_fine(&fine).unwrap().alpha.iter().all(|&a| a == 5.0));
        assert!(f.restrict_to_fine(&Mesh::structured(2, 3).unwrap()).is_err());
    }

    #[test]
    fn csv_roundtrip_is_exact() {
        let m = Mesh::structured(3, 2).unwrap();
        let f = sample_field(&m, &ParameterBounds::reference(), 2.5, 0.5, 99).unwrap();
        let mut buf = Vec::new();
        f.write_csv(&mut buf).unwrap();
        let g = CoefficientField::read_csv(buf.as_slice()).unwrap();
        assert_eq!(f, g);
    }
}
