//! Exact small-dimension oracle for log-concave measures: tabulated 1D
//! densities with their statistics, slice quadrature of n <= 3 densities,
//! Hessian quadratic forms with kernel handling, the symmetric-difference
//! convex program behind quantitative log-concavity, and the inequality
//! checkers built on them.

use crate::lattice::LatticeGraph;
use crate::numeric::{golden_max, KahanSum};
use crate::potential::Potential;
use nalgebra::{DMatrix, DVector};
use std::io::{BufRead, Write};
use std::path::Path;
use std::sync::Arc;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum DensityError {
    #[error("quadrature error estimate {estimate:.3e} exceeds tolerance {tolerance:.3e}")]
    Quadrature { estimate: f64, tolerance: f64 },
    #[error("minimization did not converge: {0}")]
    Convergence(String),
    #[error("premise probability {0:.4} is below one half")]
    PremiseNotMet(f64),
    #[error("pointwise hypothesis fails at x = {x}, y = {y} (deficit {deficit:.3e})")]
    HypothesisFailed { x: f64, y: f64, deficit: f64 },
    #[error("invalid density: {0}")]
    Invalid(String),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

// ---------------------------------------------------------------------------
// One-dimensional tabulated densities
// ---------------------------------------------------------------------------

/// Probability density tabulated on a uniform grid, normalized so the
/// trapezoid integral is 1.
#[derive(Debug, Clone)]
pub struct DensityGrid1D {
    s_min: f64,
    step: f64,
    values: Vec<f64>,
}

#[derive(Debug, Clone, Copy)]
pub struct DensityStats {
    pub sup: f64,
    pub mean: f64,
    pub variance: f64,
    pub median: f64,
}

impl DensityGrid1D {
    /// Normalizes the samples and validates nonnegativity and midpoint
    /// log-concavity (`tol` absorbs quadrature noise in tabulated inputs).
    pub fn from_unnormalized(
        s_min: f64,
        step: f64,
        values: Vec<f64>,
        tol: f64,
    ) -> Result<Self, DensityError> {
        if values.len() < 5 || !(step > 0.0) {
            return Err(DensityError::Invalid("need at least 5 grid points".into()));
        }
        if values.iter().any(|&v| v < 0.0 || !v.is_finite()) {
            return Err(DensityError::Invalid("density values must be finite and >= 0".into()));
        }
        let total = crate::numeric::trapezoid(&values, step);
        if !(total > 0.0) {
            return Err(DensityError::Invalid("density integrates to zero".into()));
        }
        let values: Vec<f64> = values.into_iter().map(|v| v / total).collect();
        // Values this deep in the tail sit in subnormal territory where
        // quantization fakes non-concavity.
        let floor = values.iter().cloned().fold(0.0, f64::max) * 1e-250;
        for i in 1..values.len() - 1 {
            let (a, b, c) = (values[i - 1], values[i], values[i + 1]);
            if a > floor && b > floor && c > floor {
                let deficit = 0.5 * (a.ln() + c.ln()) - b.ln();
                if deficit > tol {
                    return Err(DensityError::Invalid(format!(
                        "log-concavity fails at s = {} (deficit {deficit:.2e})",
                        s_min + i as f64 * step
                    )));
                }
            }
        }
        Ok(Self { s_min, step, values })
    }

    pub fn from_fn(
        f: impl Fn(f64) -> f64,
        s_min: f64,
        s_max: f64,
        points: usize,
    ) -> Result<Self, DensityError> {
        let points = points.max(5) | 1;
        let step = (s_max - s_min) / (points - 1) as f64;
        let values = (0..points).map(|i| f(s_min + i as f64 * step)).collect();
        Self::from_unnormalized(s_min, step, values, 1e-9)
    }

    pub fn gaussian(mean: f64, sigma: f64, points: usize) -> Self {
        Self::from_fn(
            |s| (-0.5 * ((s - mean) / sigma).powi(2)).exp(),
            mean - 10.0 * sigma,
            mean + 10.0 * sigma,
            points,
        )
        .expect("gaussian grid is log-concave")
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn step(&self) -> f64 {
        self.step
    }

    pub fn s_at(&self, i: usize) -> f64 {
        self.s_min + i as f64 * self.step
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Linear interpolation; zero outside the grid.
    pub fn eval(&self, s: f64) -> f64 {
        let u = (s - self.s_min) / self.step;
        if u < 0.0 || u > (self.values.len() - 1) as f64 {
            return 0.0;
        }
        let i = (u.floor() as usize).min(self.values.len() - 2);
        let frac = u - i as f64;
        self.values[i] * (1.0 - frac) + self.values[i + 1] * frac
    }

    pub fn stats(&self) -> DensityStats {
        let sup = self.values.iter().cloned().fold(0.0, f64::max);
        let mut m0 = KahanSum::new();
        let mut m1 = KahanSum::new();
        let mut m2 = KahanSum::new();
        for i in 0..self.values.len() - 1 {
            let (s0, s1) = (self.s_at(i), self.s_at(i + 1));
            let (v0, v1) = (self.values[i], self.values[i + 1]);
            m0.add(0.5 * (v0 + v1) * self.step);
            m1.add(0.5 * (s0 * v0 + s1 * v1) * self.step);
            m2.add(0.5 * (s0 * s0 * v0 + s1 * s1 * v1) * self.step);
        }
        let mean = m1.value() / m0.value();
        let variance = m2.value() / m0.value() - mean * mean;
        DensityStats { sup, mean, variance, median: self.quantile(0.5) }
    }

    pub fn quantile(&self, q: f64) -> f64 {
        let mut acc = 0.0;
        for i in 0..self.values.len() - 1 {
            let cell = 0.5 * (self.values[i] + self.values[i + 1]) * self.step;
            if acc + cell >= q {
                let frac = if cell > 0.0 { (q - acc) / cell } else { 0.0 };
                return self.s_at(i) + frac * self.step;
            }
            acc += cell;
        }
        self.s_at(self.values.len() - 1)
    }

    /// Cumulative distribution by trapezoid accumulation.
    pub fn cdf(&self, s: f64) -> f64 {
        if s <= self.s_min {
            return 0.0;
        }
        let u = ((s - self.s_min) / self.step).min((self.values.len() - 1) as f64);
        let i_full = u.floor() as usize;
        let mut acc = 0.0;
        for i in 0..i_full.min(self.values.len() - 1) {
            acc += 0.5 * (self.values[i] + self.values[i + 1]) * self.step;
        }
        if i_full < self.values.len() - 1 {
            let frac = u - i_full as f64;
            let v0 = self.values[i_full];
            let v1 = self.values[i_full + 1];
            let vm = v0 * (1.0 - frac) + v1 * frac;
            acc += 0.5 * (v0 + vm) * frac * self.step;
        }
        acc.min(1.0)
    }

    /// `Pr(alpha(xi) <= p)`, integrating cells exactly through the linear
    /// crossing of the level.
    pub fn level_prob(&self, p: f64) -> f64 {
        self.level_mass(p, true)
    }

    /// `Pr(alpha(xi) < p)` (strict).
    pub fn level_prob_strict(&self, p: f64) -> f64 {
        self.level_mass(p, false)
    }

    fn level_mass(&self, p: f64, inclusive: bool) -> f64 {
        let below = |v: f64| if inclusive { v <= p } else { v < p };
        let mut acc = KahanSum::new();
        for i in 0..self.values.len() - 1 {
            let (v0, v1) = (self.values[i], self.values[i + 1]);
            match (below(v0), below(v1)) {
                (true, true) => acc.add(0.5 * (v0 + v1) * self.step),
                (false, false) => {}
                (b0, _) => {
                    // Linear crossing at fraction c of the cell.
                    let c = ((p - v0) / (v1 - v0)).clamp(0.0, 1.0);
                    let vm = v0 + c * (v1 - v0);
                    if b0 {
                        acc.add(0.5 * (v0 + vm) * c * self.step);
                    } else {
                        acc.add(0.5 * (vm + v1) * (1.0 - c) * self.step);
                    }
                }
            }
        }
        acc.value()
    }

    /// `inf { a : Pr(alpha(xi) < a) > 1/4 }`.
    pub fn decay_threshold(&self) -> f64 {
        let mut levels: Vec<f64> = self.values.clone();
        levels.sort_by(|a, b| a.partial_cmp(b).unwrap());
        levels.dedup();
        for &a in &levels {
            if self.level_prob_strict(a) > 0.25 {
                return a;
            }
        }
        *levels.last().unwrap()
    }

    /// Central second difference of `-ln alpha` at interior index `i`.
    pub fn neg_log_second_diff(&self, i: usize) -> Option<f64> {
        if i == 0 || i + 1 >= self.values.len() {
            return None;
        }
        let (a, b, c) = (self.values[i - 1], self.values[i], self.values[i + 1]);
        if a <= 0.0 || b <= 0.0 || c <= 0.0 {
            return None;
        }
        Some(-(a.ln() + c.ln() - 2.0 * b.ln()) / (self.step * self.step))
    }

    /// Save as a `# density v1` text grid.
    pub fn save(&self, path: &Path) -> Result<(), DensityError> {
        let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
        writeln!(out, "# density v1")?;
        writeln!(out, "dimension 1")?;
        writeln!(out, "bounds {} {}", self.s_min, self.s_at(self.values.len() - 1))?;
        writeln!(out, "step {}", self.step)?;
        for v in &self.values {
            writeln!(out, "{v}")?;
        }
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, DensityError> {
        let file = std::fs::File::open(path)?;
        let mut lines = std::io::BufReader::new(file).lines();
        let header = lines.next().transpose()?.unwrap_or_default();
        if header.trim() != "# density v1" {
            return Err(DensityError::Invalid("missing `# density v1` header".into()));
        }
        let mut s_min = 0.0;
        let mut step = 0.0;
        let mut values = Vec::new();
        for line in lines {
            let line = line?;
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            if let Some(rest) = line.strip_prefix("dimension ") {
                if rest.trim() != "1" {
                    return Err(DensityError::Invalid(
                        "only 1D grids load into DensityGrid1D".into(),
                    ));
                }
            } else if let Some(rest) = line.strip_prefix("bounds ") {
                let parts: Vec<&str> = rest.split_whitespace().collect();
                s_min = parts
                    .first()
                    .and_then(|p| p.parse().ok())
                    .ok_or_else(|| DensityError::Invalid("bad bounds".into()))?;
            } else if let Some(rest) = line.strip_prefix("step ") {
                step =
                    rest.trim().parse().map_err(|_| DensityError::Invalid("bad step".into()))?;
            } else {
                values.push(
                    line.parse::<f64>()
                        .map_err(|_| DensityError::Invalid(format!("bad value `{line}`")))?,
                );
            }
        }
        Self::from_unnormalized(s_min, step, values, 1e-9)
    }
}

// ---------------------------------------------------------------------------
// n-dimensional densities (n <= 3) with slice quadrature
// ---------------------------------------------------------------------------

type DynFn = Arc<dyn Fn(&[f64]) -> f64 + Send + Sync>;
type DynGrad = Arc<dyn Fn(&[f64]) -> Vec<f64> + Send + Sync>;
type DynHess = Arc<dyn Fn(&[f64]) -> DMatrix<f64> + Send + Sync>;

/// Log-concave density `exp(-f)` on `R^n`, `n <= 3`. Analytic families carry
/// closed-form gradients and Hessians; `hard_support` marks potentials that
/// are infinite outside the box (uniform laws, tabulated data).
#[derive(Clone)]
pub struct DensityNd {
    dim: usize,
    f: DynFn,
    grad: Option<DynGrad>,
    hess: Option<DynHess>,
    support: Vec<(f64, f64)>,
    hard_support: bool,
    indicator: bool,
    points_per_dim: usize,
}

impl DensityNd {
    pub fn from_parts(
        dim: usize,
        f: DynFn,
        grad: Option<DynGrad>,
        hess: Option<DynHess>,
        support: Vec<(f64, f64)>,
        hard_support: bool,
    ) -> Result<Self, DensityError> {
        if dim == 0 || dim > 3 || support.len() != dim {
            return Err(DensityError::Invalid("dimension must be 1..=3 with matching box".into()));
        }
        Ok(Self {
            dim,
            f,
            grad,
            hess,
            support,
            hard_support,
            indicator: false,
            points_per_dim: default_points(dim),
        })
    }

    pub fn standard_gaussian(dim: usize) -> Self {
        Self::diag_gaussian(&vec![1.0; dim])
    }

    pub fn diag_gaussian(variances: &[f64]) -> Self {
        let dim = variances.len();
        let vars: Vec<f64> = variances.to_vec();
        let vars_g = vars.clone();
        let vars_h = vars.clone();
        let support = vars.iter().map(|&v| (-10.0 * v.sqrt(), 10.0 * v.sqrt())).collect();
        Self {
            dim,
            f: Arc::new(move |x: &[f64]| {
                x.iter().zip(&vars).map(|(xi, vi)| 0.5 * xi * xi / vi).sum()
            }),
            grad: Some(Arc::new(move |x: &[f64]| {
                x.iter().zip(&vars_g).map(|(xi, vi)| xi / vi).collect()
            })),
            hess: Some(Arc::new(move |_x: &[f64]| {
                DMatrix::from_diagonal(&DVector::from_iterator(
                    vars_h.len(),
                    vars_h.iter().map(|v| 1.0 / v),
                ))
            })),
            support,
            hard_support: false,
            indicator: false,
            points_per_dim: default_points(dim),
        }
    }

    /// `f(x) = sum_i c_i x_i^4`.
    pub fn quartic_sum(coeffs: &[f64]) -> Self {
        let dim = coeffs.len();
        let c: Vec<f64> = coeffs.to_vec();
        let cg = c.clone();
        let ch = c.clone();
        let support = c
            .iter()
            .map(|&ci| {
                let r = (45.0 / ci).powf(0.25);
                (-r, r)
            })
            .collect();
        Self {
            dim,
            f: Arc::new(move |x: &[f64]| x.iter().zip(&c).map(|(xi, ci)| ci * xi.powi(4)).sum()),
            grad: Some(Arc::new(move |x: &[f64]| {
                x.iter().zip(&cg).map(|(xi, ci)| 4.0 * ci * xi.powi(3)).collect()
            })),
            hess: Some(Arc::new(move |x: &[f64]| {
                DMatrix::from_diagonal(&DVector::from_iterator(
                    ch.len(),
                    x.iter().zip(&ch).map(|(xi, ci)| 12.0 * ci * xi * xi),
                ))
            })),
            support,
            hard_support: false,
            indicator: false,
            points_per_dim: default_points(dim),
        }
    }

    /// Uniform law on a box (`f = 0` inside, infinite outside).
    pub fn uniform_box(bounds: &[(f64, f64)]) -> Self {
        let dim = bounds.len();
        Self {
            dim,
            f: Arc::new(|_x: &[f64]| 0.0),
            grad: Some(Arc::new(|x: &[f64]| vec![0.0; x.len()])),
            hess: Some(Arc::new(|x: &[f64]| DMatrix::zeros(x.len(), x.len()))),
            support: bounds.to_vec(),
            hard_support: true,
            indicator: true,
            points_per_dim: default_points(dim),
        }
    }

    /// The random-surface measure of a graph with at most 3 free vertices,
    /// as an explicit density over the free coordinates (in the order of
    /// `free_vertices()`). Exact oracle for sampler tests.
    pub fn surface(g: &LatticeGraph, u: &Potential, half_width: f64) -> Result<Self, DensityError> {
        let free = g.free_vertices();
        let dim = free.len();
        if dim == 0 || dim > 3 {
            return Err(DensityError::Invalid(format!(
                "surface oracle needs 1..=3 free vertices, got {dim}"
            )));
        }
        let n = g.vertex_count();
        let mut base = vec![0.0f64; n];
        for (&v, &val) in g.boundary_set().iter().zip(g.boundary_values()) {
            base[v as usize] = val;
        }
        let mut slot = vec![usize::MAX; n];
        for (k, &v) in free.iter().enumerate() {
            slot[v as usize] = k;
        }
        let edges: Vec<(u32, u32)> = g.edges().to_vec();
        let u1 = u.clone();
        let base1 = base.clone();
        let slot1 = slot.clone();
        let edges1 = edges.clone();
        let f: DynFn = Arc::new(move |x: &[f64]| {
            let mut phi = base1.clone();
            for (v, &s) in slot1.iter().enumerate() {
                if s != usize::MAX {
                    phi[v] = x[s];
                }
            }
            edges1.iter().map(|&(a, b)| u1.eval(phi[a as usize] - phi[b as usize])).sum()
        });
        let u2 = u.clone();
        let base2 = base.clone();
        let slot2 = slot.clone();
        let edges2 = edges.clone();
        let grad: DynGrad = Arc::new(move |x: &[f64]| {
            let mut phi = base2.clone();
            for (v, &s) in slot2.iter().enumerate() {
                if s != usize::MAX {
                    phi[v] = x[s];
                }
            }
            let mut g = vec![0.0; x.len()];
            for &(a, b) in &edges2 {
                let d = u2.derivative(phi[a as usize] - phi[b as usize]);
                if slot2[a as usize] != usize::MAX {
                    g[slot2[a as usize]] += d;
                }
                if slot2[b as usize] != usize::MAX {
                    g[slot2[b as usize]] -= d;
                }
            }
            g
        });
        let u3 = u.clone();
        let base3 = base;
        let slot3 = slot;
        let edges3 = edges;
        let hess: DynHess = Arc::new(move |x: &[f64]| {
            let mut phi = base3.clone();
            for (v, &s) in slot3.iter().enumerate() {
                if s != usize::MAX {
                    phi[v] = x[s];
                }
            }
            let k = x.len();
            let mut h = DMatrix::zeros(k, k);
            for &(a, b) in &edges3 {
                let dd = u3
                    .second_derivative(phi[a as usize] - phi[b as usize])
                    .unwrap_or(f64::INFINITY);
                let (sa, sb) = (slot3[a as usize], slot3[b as usize]);
                if sa != usize::MAX {
                    h[(sa, sa)] += dd;
                }
                if sb != usize::MAX {
                    h[(sb, sb)] += dd;
                }
                if sa != usize::MAX && sb != usize::MAX {
                    h[(sa, sb)] -= dd;
                    h[(sb, sa)] -= dd;
                }
            }
            h
        });
        let max_boundary =
            g.boundary_values().iter().fold(0.0f64, |acc, &v| acc.max(v.abs()));
        let (dom_lo, dom_hi) = u.finite_domain();
        let r = if dom_hi.is_finite() {
            max_boundary + dom_hi.min(-dom_lo)
        } else {
            max_boundary + half_width
        };
        let support = vec![(-r, r); dim];
        Ok(Self {
            dim,
            f,
            grad: Some(grad),
            hess: Some(hess),
            support,
            hard_support: dom_hi.is_finite(),
            indicator: false,
            points_per_dim: default_points(dim),
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn support(&self) -> &[(f64, f64)] {
        &self.support
    }

    pub fn is_indicator(&self) -> bool {
        self.indicator
    }

    pub fn set_points_per_dim(&mut self, points: usize) {
        self.points_per_dim = points.max(9) | 1;
    }

    fn in_box(&self, x: &[f64]) -> bool {
        x.iter().zip(&self.support).all(|(xi, &(lo, hi))| *xi >= lo && *xi <= hi)
    }

    /// Potential value; `+inf` outside a hard support box.
    pub fn potential(&self, x: &[f64]) -> f64 {
        if self.hard_support && !self.in_box(x) {
            return f64::INFINITY;
        }
        (self.f)(x)
    }

    pub fn gradient(&self, x: &[f64]) -> Vec<f64> {
        if let Some(g) = &self.grad {
            g(x)
        } else {
            let mut out = vec![0.0; self.dim];
            let h = 1e-6;
            let mut xp = x.to_vec();
            for k in 0..self.dim {
                xp[k] = x[k] + h;
                let fp = self.potential(&xp);
                xp[k] = x[k] - h;
                let fm = self.potential(&xp);
                xp[k] = x[k];
                out[k] = (fp - fm) / (2.0 * h);
            }
            out
        }
    }

    pub fn hessian(&self, x: &[f64]) -> DMatrix<f64> {
        if let Some(h) = &self.hess {
            h(x)
        } else {
            let n = self.dim;
            let step = 1e-4;
            let mut out = DMatrix::zeros(n, n);
            let f0 = self.potential(x);
            let mut xp = x.to_vec();
            for i in 0..n {
                for j in i..n {
                    let v = if i == j {
                        xp[i] = x[i] + step;
                        let fpp = self.potential(&xp);
                        xp[i] = x[i] - step;
                        let fmm = self.potential(&xp);
                        xp[i] = x[i];
                        (fpp + fmm - 2.0 * f0) / (step * step)
                    } else {
                        xp[i] = x[i] + step;
                        xp[j] = x[j] + step;
                        let fpp = self.potential(&xp);
                        xp[j] = x[j] - step;
                        let fpm = self.potential(&xp);
                        xp[i] = x[i] - step;
                        let fmm = self.potential(&xp);
                        xp[j] = x[j] + step;
                        let fmp = self.potential(&xp);
                        xp[i] = x[i];
                        xp[j] = x[j];
                        (fpp + fmm - fpm - fmp) / (4.0 * step * step)
                    };
                    out[(i, j)] = v;
                    out[(j, i)] = v;
                }
            }
            out
        }
    }

    /// Unit vector along `eta` plus an orthonormal basis of its orthogonal
    /// complement (Gram-Schmidt against standard vectors).
    fn slice_frame(&self, eta: &[f64]) -> (Vec<f64>, Vec<Vec<f64>>) {
        let norm = eta.iter().map(|e| e * e).sum::<f64>().sqrt();
        let unit: Vec<f64> = eta.iter().map(|e| e / norm).collect();
        let mut basis: Vec<Vec<f64>> = Vec::new();
        for k in 0..self.dim {
            let mut v = vec![0.0; self.dim];
            v[k] = 1.0;
            let mut proj: Vec<f64> = v.clone();
            let d: f64 = v.iter().zip(&unit).map(|(a, b)| a * b).sum();
            for (p, u) in proj.iter_mut().zip(&unit) {
                *p -= d * u;
            }
            for b in &basis {
                let d: f64 = proj.iter().zip(b).map(|(a, c)| a * c).sum();
                for (p, c) in proj.iter_mut().zip(b) {
                    *p -= d * c;
                }
            }
            let n: f64 = proj.iter().map(|p| p * p).sum::<f64>().sqrt();
            if n > 1e-10 {
                basis.push(proj.into_iter().map(|p| p / n).collect());
            }
            if basis.len() == self.dim - 1 {
                break;
            }
        }
        (unit, basis)
    }

    /// `u`-ranges of the support box corners in the slice frame.
    fn slice_ranges(&self, origin: &[f64], basis: &[Vec<f64>]) -> Vec<(f64, f64)> {
        let mut ranges = vec![(f64::INFINITY, f64::NEG_INFINITY); basis.len()];
        let corners = 1usize << self.dim;
        for c in 0..corners {
            let corner: Vec<f64> = (0..self.dim)
                .map(|k| if c >> k & 1 == 1 { self.support[k].1 } else { self.support[k].0 })
                .collect();
            for (k, b) in basis.iter().enumerate() {
                let u: f64 =
                    corner.iter().zip(origin).zip(b).map(|((x, o), bi)| (x - o) * bi).sum();
                ranges[k].0 = ranges[k].0.min(u);
                ranges[k].1 = ranges[k].1.max(u);
            }
        }
        ranges
    }

    /// Unnormalized slice mass `int exp(-f) dm_{n-1}` over
    /// `<unit(eta), x> = r`: Richardson-extrapolated trapezoid sums with a
    /// nested-grid error estimate. Indicator boxes are sliced exactly
    /// (interval clipping / polygon area), since grid rules cannot see
    /// their jumps.
    pub fn slice_mass(&self, eta: &[f64], r: f64) -> (f64, f64) {
        let (unit, basis) = self.slice_frame(eta);
        let origin: Vec<f64> = unit.iter().map(|u| u * r).collect();
        if self.indicator {
            return (self.indicator_slice_measure(&origin, &basis), 0.0);
        }
        // The support box also truncates soft supports: by construction the
        // density is negligible outside it.
        let eval = |u: &[f64]| -> f64 {
            let x: Vec<f64> = (0..self.dim)
                .map(|k| origin[k] + basis.iter().zip(u).map(|(b, ui)| b[k] * ui).sum::<f64>())
                .collect();
            if !self.in_box(&x) {
                return 0.0;
            }
            let fx = self.potential(&x);
            if fx.is_finite() {
                (-fx).exp()
            } else {
                0.0
            }
        };
        match basis.len() {
            0 => (eval(&[]), 0.0),
            1 => {
                let (lo, hi) = self.slice_ranges(&origin, &basis)[0];
                let n = self.points_per_dim;
                let h = (hi - lo) / (n - 1) as f64;
                let values: Vec<f64> = (0..n).map(|i| eval(&[lo + i as f64 * h])).collect();
                let fine = crate::numeric::trapezoid(&values, h);
                let coarse_values: Vec<f64> = values.iter().step_by(2).copied().collect();
                let coarse = crate::numeric::trapezoid(&coarse_values, 2.0 * h);
                let correction = (fine - coarse) / 3.0;
                (fine + correction, correction.abs())
            }
            2 => {
                let ranges = self.slice_ranges(&origin, &basis);
                let n = self.points_per_dim;
                let (lo0, hi0) = ranges[0];
                let (lo1, hi1) = ranges[1];
                let h0 = (hi0 - lo0) / (n - 1) as f64;
                let h1 = (hi1 - lo1) / (n - 1) as f64;
                let mut rows = Vec::with_capacity(n);
                let mut grid = Vec::with_capacity(n);
                for i in 0..n {
                    let u0 = lo0 + i as f64 * h0;
                    let row: Vec<f64> =
                        (0..n).map(|j| eval(&[u0, lo1 + j as f64 * h1])).collect();
                    rows.push(crate::numeric::trapezoid(&row, h1));
                    grid.push(row);
                }
                let fine = crate::numeric::trapezoid(&rows, h0);
                let coarse_rows: Vec<f64> = grid
                    .iter()
                    .step_by(2)
                    .map(|row| {
                        let sub: Vec<f64> = row.iter().step_by(2).copied().collect();
                        crate::numeric::trapezoid(&sub, 2.0 * h1)
                    })
                    .collect();
                let coarse = crate::numeric::trapezoid(&coarse_rows, 2.0 * h0);
                let correction = (fine - coarse) / 3.0;
                (fine + correction, correction.abs())
            }
            _ => unreachable!("dim <= 3 gives slices of dimension <= 2"),
        }
    }

    /// Exact Hausdorff measure of `box intersect hyperplane` for indicator
    /// densities: interval clipping for 1D slices, half-plane polygon
    /// clipping for 2D slices.
    fn indicator_slice_measure(&self, origin: &[f64], basis: &[Vec<f64>]) -> f64 {
        match basis.len() {
            0 => {
                if self.in_box(origin) {
                    1.0
                } else {
                    0.0
                }
            }
            1 => {
                let b = &basis[0];
                let mut lo = f64::NEG_INFINITY;
                let mut hi = f64::INFINITY;
                for k in 0..self.dim {
                    let (blo, bhi) = self.support[k];
                    if b[k].abs() < 1e-14 {
                        if origin[k] < blo - 1e-12 || origin[k] > bhi + 1e-12 {
                            return 0.0;
                        }
                        continue;
                    }
                    let u1 = (blo - origin[k]) / b[k];
                    let u2 = (bhi - origin[k]) / b[k];
                    lo = lo.max(u1.min(u2));
                    hi = hi.min(u1.max(u2));
                }
                (hi - lo).max(0.0)
            }
            _ => {
                // Clip a generous rectangle against the 6 slab half-planes
                // a.u <= c, then take the shoelace area.
                let big = self
                    .support
                    .iter()
                    .map(|&(lo, hi)| (hi - lo).abs())
                    .sum::<f64>()
                    + 1.0;
                let mut poly: Vec<(f64, f64)> =
                    vec![(-big, -big), (big, -big), (big, big), (-big, big)];
                for k in 0..self.dim {
                    let a = (basis[0][k], basis[1][k]);
                    let (blo, bhi) = self.support[k];
                    for (ax, ay, c) in [
                        (a.0, a.1, bhi - origin[k]),
                        (-a.0, -a.1, origin[k] - blo),
                    ] {
                        let mut next = Vec::with_capacity(poly.len() + 2);
                        let m = poly.len();
                        if m == 0 {
                            return 0.0;
                        }
                        for i in 0..m {
                            let p = poly[i];
                            let q = poly[(i + 1) % m];
                            let dp = ax * p.0 + ay * p.1 - c;
                            let dq = ax * q.0 + ay * q.1 - c;
                            if dp <= 0.0 {
                                next.push(p);
                            }
                            if (dp < 0.0) != (dq < 0.0) && (dq - dp).abs() > 0.0 {
                                let s = dp / (dp - dq);
                                next.push((p.0 + s * (q.0 - p.0), p.1 + s * (q.1 - p.1)));
                            }
                        }
                        poly = next;
                    }
                }
                if poly.len() < 3 {
                    return 0.0;
                }
                let mut area = 0.0;
                for i in 0..poly.len() {
                    let p = poly[i];
                    let q = poly[(i + 1) % poly.len()];
                    area += p.0 * q.1 - q.0 * p.1;
                }
                area.abs() * 0.5
            }
        }
    }

    /// Total mass `int exp(-f) dx` with an error estimate.
    pub fn total_mass(&self) -> (f64, f64) {
        let mut eta = vec![0.0; self.dim];
        eta[0] = 1.0;
        let (lo, hi) = self.support[0];
        let n = self.points_per_dim;
        let h = (hi - lo) / (n - 1) as f64;
        let mut values = Vec::with_capacity(n);
        let mut err_acc = 0.0;
        for i in 0..n {
            let (v, e) = self.slice_mass(&eta, lo + i as f64 * h);
            values.push(v);
            err_acc += e * h;
        }
        let fine = crate::numeric::trapezoid(&values, h);
        let coarse_values: Vec<f64> = values.iter().step_by(2).copied().collect();
        let coarse = crate::numeric::trapezoid(&coarse_values, 2.0 * h);
        (fine, (fine - coarse).abs() / 3.0 + err_acc)
    }

    /// Marginal density of `<unit(eta), X>` on a uniform `r` grid.
    pub fn marginal_density(
        &self,
        eta: &[f64],
        r_min: f64,
        r_max: f64,
        points: usize,
    ) -> Result<DensityGrid1D, DensityError> {
        let points = points.max(9) | 1;
        let step = (r_max - r_min) / (points - 1) as f64;
        let mut values = Vec::with_capacity(points);
        let mut err_total = 0.0;
        let mut mass_total = 0.0;
        for i in 0..points {
            let (v, e) = self.slice_mass(eta, r_min + i as f64 * step);
            values.push(v);
            err_total += e * step;
            mass_total += v * step;
        }
        if mass_total <= 0.0 {
            return Err(DensityError::Invalid("marginal mass is zero on the grid".into()));
        }
        if err_total / mass_total > 1e-6 {
            return Err(DensityError::Quadrature {
                estimate: err_total / mass_total,
                tolerance: 1e-6,
            });
        }
        DensityGrid1D::from_unnormalized(r_min, step, values, (err_total / mass_total).max(1e-9))
    }
}

fn default_points(dim: usize) -> usize {
    match dim {
        1 => 2001,
        2 => 801,
        _ => 201,
    }
}

// ---------------------------------------------------------------------------
// Hessian quadratic forms
// ---------------------------------------------------------------------------

/// Validated symmetric PSD matrix with a unit direction.
#[derive(Debug, Clone)]
pub struct QuadraticForm {
    pub matrix: DMatrix<f64>,
    pub direction: DVector<f64>,
}

impl QuadraticForm {
    pub fn new(matrix: DMatrix<f64>, direction: DVector<f64>) -> Result<Self, DensityError> {
        if matrix.nrows() != matrix.ncols() || matrix.nrows() != direction.len() {
            return Err(DensityError::Invalid("dimension mismatch".into()));
        }
        let sym_err = (&matrix - matrix.transpose()).abs().max();
        if sym_err > 1e-12 * (1.0 + matrix.abs().max()) {
            return Err(DensityError::Invalid("matrix is not symmetric".into()));
        }
        let eig = matrix.clone().symmetric_eigen();
        if eig.eigenvalues.iter().any(|&l| l < -1e-12 * (1.0 + matrix.abs().max())) {
            return Err(DensityError::Invalid("matrix is not positive semidefinite".into()));
        }
        let norm = direction.norm();
        if !(norm > 0.0) {
            return Err(DensityError::Invalid("direction must be nonzero".into()));
        }
        Ok(Self { matrix, direction: direction / norm })
    }

    pub fn inverse_form(&self) -> f64 {
        hess_inverse_form(&self.matrix, &self.direction)
    }
}

/// `<n, H^{-1} n>` through the variational principle
/// `1 / inf { <y, H y> : <n, y> = 1 }`: finite on the range of `H`
/// (pseudo-inverse form), `+inf` as soon as `n` has a kernel component.
pub fn hess_inverse_form(h: &DMatrix<f64>, n: &DVector<f64>) -> f64 {
    let dim = h.nrows();
    let trace: f64 = (0..dim).map(|i| h[(i, i)]).sum();
    let threshold = 1e-10 * trace.abs().max(1e-300);
    let eig = h.clone().symmetric_eigen();
    let mut value = 0.0;
    for k in 0..dim {
        let lambda = eig.eigenvalues[k];
        let overlap = eig.eigenvectors.column(k).dot(n);
        if lambda <= threshold {
            if overlap.abs() > 1e-10 * n.norm() {
                return f64::INFINITY;
            }
        } else {
            value += overlap * overlap / lambda;
        }
    }
    value
}

// ---------------------------------------------------------------------------
// Convex slice programs
// ---------------------------------------------------------------------------

fn descend(
    objective: &dyn Fn(&[f64]) -> f64,
    gradient: &dyn Fn(&[f64]) -> Vec<f64>,
    start: Vec<f64>,
    scale: f64,
) -> Result<(f64, Vec<f64>), DensityError> {
    let mut u = start;
    if u.is_empty() {
        return Ok((objective(&u), u));
    }
    let mut value = objective(&u);
    let mut step = 0.1;
    for _ in 0..200_000 {
        let g = gradient(&u);
        let gnorm = g.iter().map(|x| x * x).sum::<f64>().sqrt();
        if gnorm <= 1e-10 * scale {
            return Ok((value, u));
        }
        let mut accepted = false;
        for _ in 0..80 {
            let trial: Vec<f64> = u.iter().zip(&g).map(|(ui, gi)| ui - step * gi).collect();
            let v = objective(&trial);
            if v < value - 1e-18 * scale {
                u = trial;
                value = v;
                step *= 1.8;
                accepted = true;
                break;
            }
            step *= 0.5;
            if step < 1e-19 {
                break;
            }
        }
        if !accepted {
            let g = gradient(&u);
            let gnorm = g.iter().map(|x| x * x).sum::<f64>().sqrt();
            if gnorm <= 1e-6 * scale {
                return Ok((value, u));
            }
            return Err(DensityError::Convergence(format!(
                "slice descent stalled at gradient norm {gnorm:.2e}"
            )));
        }
    }
    Ok((value, u))
}

/// Symmetric second-difference infimum at `x` along level shift `gamma`:
/// `inf { f(x+) + f(x-) - 2 f(x) }` over `x+ + x- = 2x`,
/// `<n, x+-> = s +- gamma`. As `gamma` shrinks the ratio to `gamma^2`
/// approaches the reciprocal Hessian form.
pub fn one_point_convexity(
    rho: &DensityNd,
    x: &[f64],
    n_dir: &[f64],
    gamma: f64,
) -> Result<f64, DensityError> {
    let (unit, basis) = rho.slice_frame(n_dir);
    let x0: Vec<f64> = x.iter().zip(&unit).map(|(xi, ui)| xi + gamma * ui).collect();
    let fx = rho.potential(x);
    if !fx.is_finite() {
        return Err(DensityError::Invalid("potential infinite at the base point".into()));
    }
    let point = |u: &[f64]| -> Vec<f64> {
        (0..rho.dim())
            .map(|k| x0[k] + basis.iter().zip(u).map(|(b, ui)| b[k] * ui).sum::<f64>())
            .collect()
    };
    let objective = |u: &[f64]| -> f64 {
        let xp = point(u);
        let xm: Vec<f64> = x.iter().zip(&xp).map(|(xi, pi)| 2.0 * xi - pi).collect();
        rho.potential(&xp) + rho.potential(&xm) - 2.0 * fx
    };
    let gradient = |u: &[f64]| -> Vec<f64> {
        let xp = point(u);
        let xm: Vec<f64> = x.iter().zip(&xp).map(|(xi, pi)| 2.0 * xi - pi).collect();
        let gp = rho.gradient(&xp);
        let gm = rho.gradient(&xm);
        basis
            .iter()
            .map(|b| b.iter().zip(gp.iter().zip(&gm)).map(|(bi, (p, m))| bi * (p - m)).sum())
            .collect()
    };
    let scale = (gamma * gamma).max(1e-12);
    let (value, _) = descend(&objective, &gradient, vec![0.0; basis.len()], scale)?;
    Ok(value.max(0.0))
}

#[derive(Debug, Clone)]
pub struct CurvatureValue {
    pub value: f64,
    pub witness: Vec<f64>,
}

/// The symmetric-difference convex program
/// `inf (f(x+) + f(x-) - 2 f(x)) / 2` over `x+ + x- = 2x`,
/// `<eta, x+ - x-> = 2t`. Indicator supports reduce to box feasibility.
pub fn d_curvature(
    rho: &DensityNd,
    eta: &[f64],
    x: &[f64],
    t: f64,
) -> Result<CurvatureValue, DensityError> {
    let fx = rho.potential(x);
    if !fx.is_finite() {
        return Err(DensityError::Invalid("potential infinite at the base point".into()));
    }
    let norm2: f64 = eta.iter().map(|e| e * e).sum();
    if rho.is_indicator() {
        // x+ must lie in box && (2x - box), on the shifted hyperplane.
        let mut lo_sum = 0.0;
        let mut hi_sum = 0.0;
        let mut witness = vec![0.0; rho.dim()];
        for k in 0..rho.dim() {
            let (blo, bhi) = rho.support()[k];
            let lo = blo.max(2.0 * x[k] - bhi);
            let hi = bhi.min(2.0 * x[k] - blo);
            if lo > hi {
                return Ok(CurvatureValue { value: f64::INFINITY, witness });
            }
            witness[k] = 0.5 * (lo + hi);
            let e = eta[k];
            lo_sum += if e >= 0.0 { e * lo } else { e * hi };
            hi_sum += if e >= 0.0 { e * hi } else { e * lo };
        }
        let target: f64 = eta.iter().zip(x).map(|(e, xi)| e * xi).sum::<f64>() + t;
        if target >= lo_sum - 1e-12 && target <= hi_sum + 1e-12 {
            return Ok(CurvatureValue { value: 0.0, witness });
        }
        return Ok(CurvatureValue { value: f64::INFINITY, witness });
    }
    let (_, basis) = rho.slice_frame(eta);
    let x0: Vec<f64> = x.iter().zip(eta).map(|(xi, e)| xi + t * e / norm2).collect();
    let point = |u: &[f64]| -> Vec<f64> {
        (0..rho.dim())
            .map(|k| x0[k] + basis.iter().zip(u).map(|(b, ui)| b[k] * ui).sum::<f64>())
            .collect()
    };
    let objective = |u: &[f64]| -> f64 {
        let xp = point(u);
        let xm: Vec<f64> = x.iter().zip(&xp).map(|(xi, pi)| 2.0 * xi - pi).collect();
        0.5 * (rho.potential(&xp) + rho.potential(&xm)) - fx
    };
    let gradient = |u: &[f64]| -> Vec<f64> {
        let xp = point(u);
        let xm: Vec<f64> = x.iter().zip(&xp).map(|(xi, pi)| 2.0 * xi - pi).collect();
        let gp = rho.gradient(&xp);
        let gm = rho.gradient(&xm);
        basis
            .iter()
            .map(|b| {
                b.iter().zip(gp.iter().zip(&gm)).map(|(bi, (p, m))| 0.5 * bi * (p - m)).sum()
            })
            .collect()
    };
    let scale = (t * t).max(1e-10);
    let (value, u) = descend(&objective, &gradient, vec![0.0; basis.len()], scale)?;
    Ok(CurvatureValue { value: value.max(0.0), witness: point(&u) })
}

/// Conditional probability `Pr(D_{eta,X}(t) >= threshold | <eta, X> = s)` by
/// slice quadrature. Nodes with negligible weight are skipped; the
/// comparison carries a tiny slack so knife-edge equality cases (constant
/// curvature, threshold at the value) resolve to "at least".
pub fn gamma_eta(
    rho: &DensityNd,
    eta: &[f64],
    threshold: f64,
    s: f64,
    t: f64,
) -> Result<f64, DensityError> {
    if threshold <= 0.0 {
        // The symmetric difference of a convex potential is nonnegative.
        return Ok(1.0);
    }
    let (unit, basis) = rho.slice_frame(eta);
    let origin: Vec<f64> = unit.iter().map(|u| u * s).collect();
    let slack = 1e-9 * (1.0 + threshold.abs());
    if basis.is_empty() {
        let c = d_curvature(rho, eta, &origin, t)?;
        return Ok(if c.value >= threshold - slack { 1.0 } else { 0.0 });
    }
    let ranges = rho.slice_ranges(&origin, &basis);
    // Modest node counts: every node costs a convex solve.
    let n = match basis.len() {
        1 => 401,
        _ => 41,
    };
    let point = |u: &[f64]| -> Vec<f64> {
        (0..rho.dim())
            .map(|k| origin[k] + basis.iter().zip(u).map(|(b, ui)| b[k] * ui).sum::<f64>())
            .collect()
    };
    let weight = |x: &[f64]| -> f64 {
        if !rho.in_box(x) {
            return 0.0;
        }
        let fx = rho.potential(x);
        if fx.is_finite() {
            (-fx).exp()
        } else {
            0.0
        }
    };
    let mut nodes: Vec<(Vec<f64>, f64, f64)> = Vec::new(); // (x, weight, cell factor)
    match basis.len() {
        1 => {
            let (lo, hi) = ranges[0];
            let h = (hi - lo) / (n - 1) as f64;
            for i in 0..n {
                let u = [lo + i as f64 * h];
                let x = point(&u);
                let w = weight(&x);
                let factor = if i == 0 || i == n - 1 { 0.5 } else { 1.0 };
                nodes.push((x, w, factor * h));
            }
        }
        _ => {
            let (lo0, hi0) = ranges[0];
            let (lo1, hi1) = ranges[1];
            let h0 = (hi0 - lo0) / (n - 1) as f64;
            let h1 = (hi1 - lo1) / (n - 1) as f64;
            for i in 0..n {
                for j in 0..n {
                    let u = [lo0 + i as f64 * h0, lo1 + j as f64 * h1];
                    let x = point(&u);
                    let w = weight(&x);
                    let fi = if i == 0 || i == n - 1 { 0.5 } else { 1.0 };
                    let fj = if j == 0 || j == n - 1 { 0.5 } else { 1.0 };
                    nodes.push((x, w, fi * fj * h0 * h1));
                }
            }
        }
    }
    let wmax = nodes.iter().map(|(_, w, _)| *w).fold(0.0, f64::max);
    if wmax <= 0.0 {
        return Err(DensityError::Invalid("slice carries no mass".into()));
    }
    let mut num = KahanSum::new();
    let mut den = KahanSum::new();
    for (x, w, factor) in &nodes {
        den.add(w * factor);
        if *w < 1e-14 * wmax {
            continue;
        }
        let c = d_curvature(rho, eta, x, t)?;
        if c.value >= threshold - slack {
            num.add(w * factor);
        }
    }
    Ok((num.value() / den.value()).clamp(0.0, 1.0))
}

// ---------------------------------------------------------------------------
// Inequality checkers
// ---------------------------------------------------------------------------

#[derive(Debug, Clone)]
pub struct InequalityReport {
    pub lhs: f64,
    pub rhs: f64,
    pub quad_error: f64,
    pub pass: bool,
}

/// Quantitative log-concavity of the marginal:
/// `sqrt(alpha(s-t) alpha(s+t)) <= (1 - gamma (1 - e^{-D})) alpha(s)`,
/// checked on unnormalized slice masses (the inequality is homogeneous).
pub fn check_quantitative_logconcavity(
    rho: &DensityNd,
    eta: &[f64],
    s: f64,
    t: f64,
    threshold: f64,
) -> Result<InequalityReport, DensityError> {
    let (a_minus, e1) = rho.slice_mass(eta, s - t);
    let (a_mid, e2) = rho.slice_mass(eta, s);
    let (a_plus, e3) = rho.slice_mass(eta, s + t);
    if a_mid <= 0.0 {
        return Err(DensityError::Invalid("alpha(s) vanishes".into()));
    }
    let gamma = gamma_eta(rho, eta, threshold, s, t)?;
    let lhs = (a_minus * a_plus).sqrt();
    let rhs = (1.0 - gamma * (1.0 - (-threshold).exp())) * a_mid;
    let quad_error = e1 + e2 + e3 + 1e-12 * a_mid;
    Ok(InequalityReport { lhs, rhs, quad_error, pass: lhs <= rhs + 10.0 * quad_error })
}

#[derive(Debug, Clone)]
pub struct Prop21Report {
    /// `sup alpha * sqrt(Var)`.
    pub max_times_sd: f64,
    /// `sup alpha / a0` with `a0 = inf { a : Pr(alpha(xi) < a) > 1/4 }`.
    pub decay_ratio: f64,
    /// `(p, lhs, rhs)` rows of the constant-free level inequality
    /// `Pr(alpha(xi) <= p) <= p / sup alpha`.
    pub level_rows: Vec<(f64, f64, f64)>,
    pub level_pass: bool,
}

pub fn check_prop21(alpha: &DensityGrid1D) -> Prop21Report {
    let stats = alpha.stats();
    let a0 = alpha.decay_threshold();
    let mut rows = Vec::new();
    let mut pass = true;
    // Cell-exact level integration keeps the error at O(h^2); the slack
    // covers the remaining interpolation noise.
    let slack = 10.0 * alpha.step() * alpha.step() * stats.sup;
    for k in 1..=16 {
        let p = stats.sup * k as f64 / 16.0;
        let lhs = alpha.level_prob(p);
        let rhs = p / stats.sup;
        rows.push((p, lhs, rhs));
        if lhs > rhs + slack + 1e-9 {
            pass = false;
        }
    }
    Prop21Report {
        max_times_sd: stats.sup * stats.variance.sqrt(),
        decay_ratio: stats.sup / a0,
        level_rows: rows,
        level_pass: pass,
    }
}

/// Quantile bound on the second logarithmic derivative:
/// `Pr((-ln alpha)''(xi) > (C sup alpha)^2) <= 4 / C` for `C >= 4`.
pub fn check_second_derivative_tail(alpha: &DensityGrid1D, c: f64) -> InequalityReport {
    assert!(c >= 4.0, "the quantile bound requires C >= 4");
    let sup = alpha.stats().sup;
    let cutoff = (c * sup) * (c * sup);
    let mut mass = KahanSum::new();
    let mut boundary_cells = 0usize;
    let mut prev_above: Option<bool> = None;
    for i in 0..alpha.len() {
        let above = alpha.neg_log_second_diff(i).map(|dd| dd > cutoff).unwrap_or(false);
        if above {
            let w = if i == 0 || i == alpha.len() - 1 { 0.5 } else { 1.0 };
            mass.add(alpha.values()[i] * w * alpha.step());
        }
        if let Some(p) = prev_above {
            if p != above {
                boundary_cells += 1;
            }
        }
        prev_above = Some(above);
    }
    let lhs = mass.value();
    let rhs = 4.0 / c;
    let quad_error = boundary_cells as f64 * alpha.step() * sup + alpha.step() * alpha.step();
    InequalityReport { lhs, rhs, quad_error, pass: lhs <= rhs + 10.0 * quad_error }
}

#[derive(Debug, Clone)]
pub struct MaxDensityBoundReport {
    pub p: f64,
    pub sup_alpha: f64,
    pub rhs: f64,
    pub quad_error: f64,
    pub pass: bool,
}

/// Constant-free bound relating the marginal maximum to the quantile of the
/// Hessian quadratic form: `sup alpha >= p^{3/2} / ((8 - 4p) sqrt(2t))`
/// where `p = Pr(<n, (Hess f)(X)^{-1} n> <= t)`.
pub fn check_max_density_bound(
    rho: &DensityNd,
    n_dir: &[f64],
    t: f64,
) -> Result<MaxDensityBoundReport, DensityError> {
    let dim = rho.dim();
    let norm = n_dir.iter().map(|e| e * e).sum::<f64>().sqrt();
    let unit = DVector::from_iterator(dim, n_dir.iter().map(|e| e / norm));
    // p by tensor quadrature over the support box.
    let n_pts = match dim {
        1 => 4001,
        2 => 301,
        _ => 61,
    };
    let steps: Vec<f64> =
        rho.support().iter().map(|&(lo, hi)| (hi - lo) / (n_pts - 1) as f64).collect();
    let mut num = KahanSum::new();
    let mut den = KahanSum::new();
    let mut idx = vec![0usize; dim];
    let cell: f64 = steps.iter().product();
    loop {
        let x: Vec<f64> =
            (0..dim).map(|k| rho.support()[k].0 + idx[k] as f64 * steps[k]).collect();
        let mut factor = cell;
        for k in 0..dim {
            if idx[k] == 0 || idx[k] == n_pts - 1 {
                factor *= 0.5;
            }
        }
        let fx = rho.potential(&x);
        if fx.is_finite() {
            let w = (-fx).exp() * factor;
            den.add(w);
            let h = rho.hessian(&x);
            if !h.iter().any(|v| !v.is_finite()) {
                let form = hess_inverse_form(&h, &unit);
                if form <= t {
                    num.add(w);
                }
            }
        }
        let mut k = 0;
        loop {
            idx[k] += 1;
            if idx[k] < n_pts {
                break;
            }
            idx[k] = 0;
            k += 1;
            if k == dim {
                break;
            }
        }
        if k == dim {
            break;
        }
    }
    if den.value() <= 0.0 {
        return Err(DensityError::Invalid("density carries no mass on its box".into()));
    }
    let p = (num.value() / den.value()).clamp(0.0, 1.0);
    // sup of the normalized marginal via a scan plus golden refinement.
    let mut r_lo = f64::INFINITY;
    let mut r_hi = f64::NEG_INFINITY;
    for c in 0..(1usize << dim) {
        let corner: Vec<f64> = (0..dim)
            .map(|k| if c >> k & 1 == 1 { rho.support()[k].1 } else { rho.support()[k].0 })
            .collect();
        let r: f64 = corner.iter().zip(unit.iter()).map(|(x, u)| x * u).sum();
        r_lo = r_lo.min(r);
        r_hi = r_hi.max(r);
    }
    let scan = 201;
    let h = (r_hi - r_lo) / (scan - 1) as f64;
    let mut best = (r_lo, 0.0);
    let mut err_mass = 0.0;
    let mut total = 0.0;
    let eta: Vec<f64> = unit.iter().cloned().collect();
    for i in 0..scan {
        let r = r_lo + i as f64 * h;
        let (v, e) = rho.slice_mass(&eta, r);
        err_mass += e * h;
        total += v * h;
        if v > best.1 {
            best = (r, v);
        }
    }
    let (_, refined) =
        golden_max(|r| rho.slice_mass(&eta, r).0, best.0 - h, best.0 + h, 1e-10 * (1.0 + h));
    let sup_alpha = refined.max(best.1) / total;
    let rhs = p.powf(1.5) / ((8.0 - 4.0 * p) * (2.0 * t).sqrt());
    let quad_error = (err_mass / total) * sup_alpha + 1e-9;
    Ok(MaxDensityBoundReport {
        p,
        sup_alpha,
        rhs,
        quad_error,
        pass: sup_alpha + 10.0 * quad_error >= rhs,
    })
}

/// Variance from quantitative log-concavity: verifies the premise
/// `Pr(sqrt(alpha(xi+t) alpha(xi-t)) <= (1-delta) alpha(xi)) >= 1/2` and
/// returns the empirical constant `sqrt(Var) * delta / t`.
pub fn check_var_via_logconcavity(
    alpha: &DensityGrid1D,
    t: f64,
    delta: f64,
) -> Result<f64, DensityError> {
    let mut mass = KahanSum::new();
    for i in 0..alpha.len() {
        let s = alpha.s_at(i);
        let product = (alpha.eval(s + t) * alpha.eval(s - t)).sqrt();
        if product <= (1.0 - delta) * alpha.values()[i] {
            let w = if i == 0 || i == alpha.len() - 1 { 0.5 } else { 1.0 };
            mass.add(alpha.values()[i] * w * alpha.step());
        }
    }
    let premise = mass.value();
    // Knife-edge events (the set boundary on a grid cell) get quadrature
    // slack proportional to one cell of mass.
    let tol = 10.0 * alpha.step() * alpha.stats().sup;
    if premise < 0.5 - tol {
        return Err(DensityError::PremiseNotMet(premise));
    }
    Ok(alpha.stats().variance.sqrt() * delta / t)
}

/// Nonnegative sampled function for the product-measure inequality check.
#[derive(Debug, Clone)]
pub struct SampledFunction1D {
    pub s_min: f64,
    pub step: f64,
    pub values: Vec<f64>,
}

impl SampledFunction1D {
    pub fn from_fn(f: impl Fn(f64) -> f64, s_min: f64, s_max: f64, points: usize) -> Self {
        let points = points.max(5) | 1;
        let step = (s_max - s_min) / (points - 1) as f64;
        let values = (0..points).map(|i| f(s_min + i as f64 * step)).collect();
        Self { s_min, step, values }
    }

    pub fn eval(&self, s: f64) -> f64 {
        let u = (s - self.s_min) / self.step;
        if u < 0.0 || u > (self.values.len() - 1) as f64 {
            return 0.0;
        }
        let i = (u.floor() as usize).min(self.values.len() - 2);
        let frac = u - i as f64;
        self.values[i] * (1.0 - frac) + self.values[i + 1] * frac
    }

    pub fn integral(&self) -> f64 {
        crate::numeric::trapezoid(&self.values, self.step)
    }
}

#[derive(Debug, Clone)]
pub struct ProductMeasureReport {
    pub lhs: f64,
    pub rhs: f64,
    pub pass: bool,
}

/// One-dimensional product-measure inequality: verifies the pointwise
/// hypothesis `F((1-l)x + l y) >= F1(x)^{1-l} F2(y)^l` on the grid product
/// (with interpolation slack), then checks
/// `int F >= (int F1)^{1-l} (int F2)^l`.
pub fn product_measure_check(
    f1: &SampledFunction1D,
    f2: &SampledFunction1D,
    f: &SampledFunction1D,
    lambda: f64,
    hypothesis_slack: f64,
) -> Result<ProductMeasureReport, DensityError> {
    assert!(lambda > 0.0 && lambda < 1.0);
    let stride1 = (f1.values.len() / 300).max(1);
    let stride2 = (f2.values.len() / 300).max(1);
    for (i, &v1) in f1.values.iter().enumerate().step_by(stride1) {
        let x = f1.s_min + i as f64 * f1.step;
        for (j, &v2) in f2.values.iter().enumerate().step_by(stride2) {
            let y = f2.s_min + j as f64 * f2.step;
            let lhs = f.eval((1.0 - lambda) * x + lambda * y);
            let rhs = v1.powf(1.0 - lambda) * v2.powf(lambda);
            if lhs < rhs - hypothesis_slack * (1.0 + rhs) {
                return Err(DensityError::HypothesisFailed { x, y, deficit: rhs - lhs });
            }
        }
    }
    let lhs = f.integral();
    let rhs = f1.integral().powf(1.0 - lambda) * f2.integral().powf(lambda);
    let tol = 10.0 * (f.step * f.step + f1.step * f1.step + f2.step * f2.step) * rhs.max(1.0);
    Ok(ProductMeasureReport { lhs, rhs, pass: lhs >= rhs - tol })
}

/// Finite-difference form of the derivative-difference inequality on a
/// grid-convex `f`: one-sided slopes at the ends dominate the integrated
/// second difference between them.
pub fn check_derivative_difference(f: &[f64], step: f64, i_minus: usize, i_plus: usize) -> bool {
    assert!(i_minus < i_plus && i_plus < f.len() - 1 && i_minus >= 1);
    let right_slope = (f[i_plus + 1] - f[i_plus]) / step;
    let left_slope = (f[i_minus] - f[i_minus - 1]) / step;
    let mut integral = 0.0;
    for i in i_minus..=i_plus {
        if i >= 1 && i + 1 < f.len() {
            integral += (f[i - 1] + f[i + 1] - 2.0 * f[i]) / step;
        }
    }
    right_slope - left_slope >= integral - 1e-9 * (1.0 + integral.abs())
}
