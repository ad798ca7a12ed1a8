//! Even convex interaction potentials and their derived scalar functionals:
//! the a.e. second derivative, the second-order ratio `delta_U`, the symmetric
//! convexity gap `W`, small-ratio sets with their Gibbs mass, and the tail
//! factor exponent used by the sparsity estimate.

use crate::numeric::{adaptive_simpson, golden_min, KahanSum};
use rayon::prelude::*;
use std::io::{BufRead, Write};
use std::path::Path;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum PotentialError {
    #[error("argument {0} lies outside the finite domain of the potential")]
    Domain(f64),
    #[error("s-grid leaves uncovered tail mass {0:.3e} above the tolerance")]
    Grid(f64),
    #[error("invalid potential table: {0}")]
    Table(String),
    #[error("invalid parameter: {0}")]
    Parameter(String),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

/// Tabulated even convex function on a symmetric interval, `+inf` outside.
/// Values are interpolated linearly between nodes.
#[derive(Debug, Clone)]
pub struct CustomTable {
    x0: f64,
    step: f64,
    values: Vec<f64>,
}

impl CustomTable {
    fn new(x0: f64, step: f64, values: Vec<f64>) -> Result<Self, PotentialError> {
        if values.len() < 3 {
            return Err(PotentialError::Table("need at least 3 nodes".into()));
        }
        if !(step > 0.0) {
            return Err(PotentialError::Table("grid step must be positive".into()));
        }
        let hi = x0 + step * (values.len() - 1) as f64;
        if (x0 + hi).abs() > 1e-9 * hi.abs().max(1.0) {
            return Err(PotentialError::Table("grid range must be symmetric".into()));
        }
        Ok(Self { x0, step, values })
    }

    fn hi(&self) -> f64 {
        self.x0 + self.step * (self.values.len() - 1) as f64
    }

    fn eval(&self, x: f64) -> f64 {
        if x < self.x0 || x > self.hi() {
            return f64::INFINITY;
        }
        let u = (x - self.x0) / self.step;
        let i = (u.floor() as usize).min(self.values.len() - 2);
        let frac = u - i as f64;
        self.values[i] * (1.0 - frac) + self.values[i + 1] * frac
    }

    fn slope(&self, i: usize) -> f64 {
        (self.values[i + 1] - self.values[i]) / self.step
    }

    /// A subgradient of the interpolated table at `x`.
    fn derivative(&self, x: f64) -> f64 {
        let n = self.values.len();
        let u = (x - self.x0) / self.step;
        let i = u.floor() as isize;
        if i < 0 {
            return self.slope(0);
        }
        let i = (i as usize).min(n - 2);
        let frac = u - i as f64;
        if frac.abs() < 1e-12 && i > 0 {
            0.5 * (self.slope(i - 1) + self.slope(i))
        } else {
            self.slope(i)
        }
    }
}

#[derive(Debug, Clone)]
pub enum PotentialKind {
    /// `U(x) = x^2`
    Quadratic,
    /// `U(x) = |x|^p`, `p > 1`
    Power { p: f64 },
    /// `U(x) = |x|^p + x^2`, `p > 2`
    PowerPlusQuadratic { p: f64 },
    /// Tabulated even convex function, `+inf` outside the table range.
    Custom(CustomTable),
}

/// Even convex interaction potential with evaluators for the derived
/// functionals the bound machinery needs.
#[derive(Debug, Clone)]
pub struct Potential {
    kind: PotentialKind,
    eval_tolerance: f64,
}

/// Requested symmetric evaluation grid for [`Potential::small_ratio_set`].
#[derive(Debug, Clone, Copy)]
pub struct GridSpec {
    pub s_max: f64,
    pub points: usize,
}

/// `S_U(delta)` as disjoint intervals plus the Gibbs mass of its
/// non-negative part.
#[derive(Debug, Clone)]
pub struct SmallRatioSet {
    pub delta: f64,
    pub intervals: Vec<(f64, f64)>,
    pub positive_mass: f64,
}

/// Report of `p(S, d, U)` ingredients. The multiplicative constant of the
/// sparsity estimate is existence-only, hence `constant: None`.
#[derive(Debug, Clone)]
pub struct TailFactor {
    pub integral: f64,
    pub exponent: f64,
    pub constant: Option<f64>,
}

/// Tabulations of the derived functionals on request grids.
#[derive(Debug, Clone)]
pub struct ConvexityProfile {
    pub s_grid: Vec<f64>,
    pub delta_values: Vec<f64>,
    pub r_grid: Vec<f64>,
    pub gap_values: Vec<f64>,
    pub small_set: SmallRatioSet,
}

/// Closed forms of the convexity gap for the built-in families; `Numeric`
/// falls back to the minimization in [`Potential::convexity_gap`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum GapForm {
    /// `W(r) = r^2`
    Quadratic,
    /// `W(r) = |r|^p`
    PowerP { p: f64 },
    /// `W == 0` (power potentials with `p < 2`)
    Zero,
    /// `W(r) = r^2 + |r|^p`
    QuadraticPlusPower { p: f64 },
    Numeric,
}

const DELTA_GRID_LO: f64 = 1e-6;
const DELTA_GRID_HI: f64 = 1e3;
const DELTA_GRID_PER_DECADE: usize = 12;

impl Potential {
    pub fn quadratic() -> Self {
        Self { kind: PotentialKind::Quadratic, eval_tolerance: 1e-10 }
    }

    pub fn power(p: f64) -> Result<Self, PotentialError> {
        if !(p > 1.0) {
            return Err(PotentialError::Parameter(format!("power exponent must exceed 1, got {p}")));
        }
        Ok(Self { kind: PotentialKind::Power { p }, eval_tolerance: 1e-10 })
    }

    pub fn power_plus_quadratic(p: f64) -> Result<Self, PotentialError> {
        if !(p > 2.0) {
            return Err(PotentialError::Parameter(format!(
                "power-plus-quadratic exponent must exceed 2, got {p}"
            )));
        }
        Ok(Self { kind: PotentialKind::PowerPlusQuadratic { p }, eval_tolerance: 1e-10 })
    }

    /// Build a custom potential from symmetric, uniformly spaced nodes.
    /// Validates evenness and midpoint convexity of the table.
    pub fn custom(xs: &[f64], us: &[f64]) -> Result<Self, PotentialError> {
        if xs.len() != us.len() {
            return Err(PotentialError::Table("x and U columns differ in length".into()));
        }
        if xs.len() < 3 {
            return Err(PotentialError::Table("need at least 3 nodes".into()));
        }
        let step = xs[1] - xs[0];
        if !(step > 0.0) {
            return Err(PotentialError::Table("x must be strictly increasing".into()));
        }
        for w in xs.windows(2) {
            if (w[1] - w[0] - step).abs() > 1e-9 * step {
                return Err(PotentialError::Table("x must be uniformly spaced".into()));
            }
        }
        let table = CustomTable::new(xs[0], step, us.to_vec())?;
        let n = us.len();
        let tol = 1e-10;
        for i in 0..n {
            let mirrored = us[n - 1 - i];
            if (us[i] - mirrored).abs() > tol * (1.0 + us[i].abs()) {
                return Err(PotentialError::Table(format!("table is not even at x = {}", xs[i])));
            }
        }
        for i in 1..n - 1 {
            if us[i - 1] + us[i + 1] - 2.0 * us[i] < -tol * (1.0 + us[i].abs()) {
                return Err(PotentialError::Table(format!("table is not convex at x = {}", xs[i])));
            }
        }
        Ok(Self { kind: PotentialKind::Custom(table), eval_tolerance: 1e-10 })
    }

    /// Tabulate `f` on `[-half_width, half_width]` with `points` nodes.
    pub fn custom_from_fn(
        f: impl Fn(f64) -> f64,
        half_width: f64,
        points: usize,
    ) -> Result<Self, PotentialError> {
        let points = if points % 2 == 0 { points + 1 } else { points };
        let step = 2.0 * half_width / (points - 1) as f64;
        let xs: Vec<f64> = (0..points).map(|i| -half_width + i as f64 * step).collect();
        let us: Vec<f64> = xs.iter().map(|&x| f(x)).collect();
        Self::custom(&xs, &us)
    }

    /// Load a custom potential from a two-column `# potential v1` text file.
    pub fn from_file(path: &Path) -> Result<Self, PotentialError> {
        let file = std::fs::File::open(path)?;
        let reader = std::io::BufReader::new(file);
        let mut lines = reader.lines();
        let header = lines.next().transpose()?.unwrap_or_default();
        if header.trim() != "# potential v1" {
            return Err(PotentialError::Table("missing `# potential v1` header".into()));
        }
        let mut xs = Vec::new();
        let mut us = Vec::new();
        for line in lines {
            let line = line?;
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let mut parts = line.split_whitespace();
            let x: f64 = parts
                .next()
                .ok_or_else(|| PotentialError::Table("missing x column".into()))?
                .parse()
                .map_err(|_| PotentialError::Table(format!("bad x value in line `{line}`")))?;
            let u: f64 = parts
                .next()
                .ok_or_else(|| PotentialError::Table("missing U column".into()))?
                .parse()
                .map_err(|_| PotentialError::Table(format!("bad U value in line `{line}`")))?;
            xs.push(x);
            us.push(u);
        }
        Self::custom(&xs, &us)
    }

    /// Write the potential as a `# potential v1` table (built-ins are sampled
    /// on `[-half_width, half_width]`).
    pub fn save_table(
        &self,
        path: &Path,
        half_width: f64,
        points: usize,
    ) -> Result<(), PotentialError> {
        let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
        writeln!(out, "# potential v1")?;
        let points = if points % 2 == 0 { points + 1 } else { points };
        let step = 2.0 * half_width / (points - 1) as f64;
        for i in 0..points {
            let x = -half_width + i as f64 * step;
            writeln!(out, "{} {}", x, self.eval(x))?;
        }
        Ok(())
    }

    pub fn kind(&self) -> &PotentialKind {
        &self.kind
    }

    pub fn eval_tolerance(&self) -> f64 {
        self.eval_tolerance
    }

    pub fn set_eval_tolerance(&mut self, tol: f64) {
        self.eval_tolerance = tol;
    }

    /// Open interval on which the potential is finite.
    pub fn finite_domain(&self) -> (f64, f64) {
        match &self.kind {
            PotentialKind::Custom(t) => (t.x0, t.hi()),
            _ => (f64::NEG_INFINITY, f64::INFINITY),
        }
    }

    pub fn in_domain(&self, x: f64) -> bool {
        let (lo, hi) = self.finite_domain();
        x >= lo && x <= hi
    }

    /// `U(x)`; `+inf` outside the finite domain (infinity is a value here,
    /// not an error).
    pub fn eval(&self, x: f64) -> f64 {
        match &self.kind {
            PotentialKind::Quadratic => x * x,
            PotentialKind::Power { p } => x.abs().powf(*p),
            PotentialKind::PowerPlusQuadratic { p } => x.abs().powf(*p) + x * x,
            PotentialKind::Custom(t) => t.eval(x),
        }
    }

    /// A subgradient of `U` at `x` (the derivative wherever it exists).
    pub fn derivative(&self, x: f64) -> f64 {
        match &self.kind {
            PotentialKind::Quadratic => 2.0 * x,
            PotentialKind::Power { p } => {
                if x == 0.0 {
                    0.0
                } else {
                    p * x.abs().powf(p - 1.0) * x.signum()
                }
            }
            PotentialKind::PowerPlusQuadratic { p } => {
                let power = if x == 0.0 { 0.0 } else { p * x.abs().powf(p - 1.0) * x.signum() };
                power + 2.0 * x
            }
            PotentialKind::Custom(t) => t.derivative(x),
        }
    }

    /// The a.e. second derivative. Closed forms for the built-in families
    /// (`+inf` where the analytic value diverges, e.g. `|x|^p` with `p < 2`
    /// at the origin); symmetric second differences at grid scale for custom
    /// tables.
    pub fn second_derivative(&self, x: f64) -> Result<f64, PotentialError> {
        if !self.in_domain(x) {
            return Err(PotentialError::Domain(x));
        }
        Ok(match &self.kind {
            PotentialKind::Quadratic => 2.0,
            PotentialKind::Power { p } => power_second_derivative(*p, x),
            PotentialKind::PowerPlusQuadratic { p } => power_second_derivative(*p, x) + 2.0,
            PotentialKind::Custom(t) => {
                let h = t.step;
                (self.eval(x + h).min(f64::MAX) + self.eval(x - h).min(f64::MAX)
                    - 2.0 * self.eval(x))
                    / (h * h)
            }
        })
    }

    /// `U(s+t) + U(s-t) - 2 U(s)`, evaluated in a cancellation-safe way.
    pub fn symmetric_gap(&self, s: f64, t: f64) -> f64 {
        let t = t.abs();
        match &self.kind {
            PotentialKind::Quadratic => 2.0 * t * t,
            PotentialKind::Power { p } => power_symmetric_gap(*p, s, t),
            PotentialKind::PowerPlusQuadratic { p } => {
                power_symmetric_gap(*p, s, t) + 2.0 * t * t
            }
            PotentialKind::Custom(_) => {
                let a = self.eval(s + t);
                let b = self.eval(s - t);
                if !a.is_finite() || !b.is_finite() {
                    return f64::INFINITY;
                }
                (a + b - 2.0 * self.eval(s)).max(0.0)
            }
        }
    }

    /// Second-order ratio `delta_U(s) = inf_{t>0} gap(s,t) / min(t^2, 1)`,
    /// minimized on a geometric grid with golden-section refinement.
    pub fn second_order_ratio(&self, s: f64) -> Result<f64, PotentialError> {
        if !self.eval(s).is_finite() {
            return Err(PotentialError::Domain(s));
        }
        let objective = |t: f64| -> f64 {
            let g = self.symmetric_gap(s, t);
            if g.is_finite() {
                g / t.min(1.0).powi(2)
            } else {
                f64::INFINITY
            }
        };
        let decades = (DELTA_GRID_HI / DELTA_GRID_LO).log10();
        let n = (decades * DELTA_GRID_PER_DECADE as f64).ceil() as usize + 1;
        let ratio = (DELTA_GRID_HI / DELTA_GRID_LO).powf(1.0 / (n - 1) as f64);
        let mut best = f64::INFINITY;
        let mut best_i = 0usize;
        let mut t = DELTA_GRID_LO;
        let mut grid = Vec::with_capacity(n);
        for i in 0..n {
            grid.push(t);
            let v = objective(t);
            if v < best {
                best = v;
                best_i = i;
            }
            t *= ratio;
        }
        if !best.is_finite() {
            // Shrink towards 0 until a feasible t appears (open domain).
            let mut t = DELTA_GRID_LO * 0.1;
            while t > 1e-300 {
                let v = objective(t);
                if v.is_finite() {
                    return Ok(v);
                }
                t *= 0.1;
            }
            return Ok(f64::INFINITY);
        }
        let lo = grid[best_i.saturating_sub(1)];
        let hi = grid[(best_i + 1).min(n - 1)];
        // Refine in log t; the objective is smooth enough on a bracket.
        let (_, refined) = golden_min(
            |logt| objective(logt.exp()),
            lo.ln(),
            hi.ln(),
            self.eval_tolerance.max(1e-12),
        );
        Ok(best.min(refined).max(0.0))
    }

    /// Convexity gap `W(r) = inf_s [U(s+r) + U(s-r)] / 2 - U(s)`. The search
    /// is restricted to `s >= 0` by evenness and the window expands until the
    /// objective is non-decreasing over the last decade.
    pub fn convexity_gap(&self, r: f64) -> f64 {
        let r = r.abs();
        if r == 0.0 {
            return 0.0;
        }
        let objective = |s: f64| 0.5 * self.symmetric_gap(s, r);
        let (_, dom_hi) = self.finite_domain();
        let s_feasible_max = if dom_hi.is_finite() { (dom_hi - r).max(0.0) } else { f64::INFINITY };
        if dom_hi.is_finite() && dom_hi < r {
            return f64::INFINITY;
        }
        let mut s_max = (8.0 * r).max(8.0).min(s_feasible_max.max(1e-8));
        let mut best_pair = scan_gap(objective, s_max, r);
        loop {
            let capped = s_max >= s_feasible_max || s_max >= 1e9;
            if capped || last_decade_nondecreasing(objective, s_max) {
                break;
            }
            s_max = (s_max * 4.0).min(s_feasible_max.max(1e-8)).min(1e9);
            let pair = scan_gap(objective, s_max, r);
            if pair.1 < best_pair.1 {
                best_pair = pair;
            }
        }
        let (s_best, v_best) = best_pair;
        let bracket = (s_max / 64.0).max(r * 0.25);
        let lo = (s_best - bracket).max(0.0);
        let hi = (s_best + bracket).min(s_feasible_max.max(s_best));
        let (_, refined) = golden_min(objective, lo, hi, 1e-12 * (1.0 + hi));
        v_best.min(refined).max(0.0)
    }

    /// Closed form of the convexity gap when one is available.
    pub fn convexity_gap_form(&self) -> GapForm {
        match &self.kind {
            PotentialKind::Quadratic => GapForm::Quadratic,
            PotentialKind::Power { p } => {
                if *p >= 2.0 {
                    GapForm::PowerP { p: *p }
                } else {
                    GapForm::Zero
                }
            }
            PotentialKind::PowerPlusQuadratic { p } => GapForm::QuadraticPlusPower { p: *p },
            PotentialKind::Custom(_) => GapForm::Numeric,
        }
    }

    /// `S_U(delta) = {s : U(s) < inf, delta_U(s) < delta}` as grid-resolved
    /// intervals, together with the mass of `exp(-U)` over its non-negative
    /// part.
    pub fn small_ratio_set(
        &self,
        delta: f64,
        grid: &GridSpec,
    ) -> Result<SmallRatioSet, PotentialError> {
        if !(delta > 0.0) {
            return Err(PotentialError::Parameter("delta must be positive".into()));
        }
        let (dom_lo, dom_hi) = self.finite_domain();
        let s_hi = grid.s_max.min(dom_hi);
        let s_lo = (-grid.s_max).max(dom_lo);
        if dom_hi.is_finite() {
            if grid.s_max < dom_hi {
                let tail = self.tail_mass_above(grid.s_max)?;
                if tail > self.eval_tolerance {
                    return Err(PotentialError::Grid(tail));
                }
            }
        } else {
            let tail = self.tail_mass_above(grid.s_max)?;
            if tail > self.eval_tolerance {
                return Err(PotentialError::Grid(tail));
            }
        }
        let points = grid.points.max(3) | 1;
        let h = (s_hi - s_lo) / (points - 1) as f64;
        let marks: Vec<bool> = (0..points)
            .into_par_iter()
            .map(|i| {
                let s = s_lo + i as f64 * h;
                if !self.eval(s).is_finite() {
                    return false;
                }
                match self.second_order_ratio(s) {
                    Ok(d) => d < delta,
                    Err(_) => false,
                }
            })
            .collect();
        let mut intervals = Vec::new();
        let mut run_start: Option<usize> = None;
        for (i, &m) in marks.iter().enumerate() {
            match (m, run_start) {
                (true, None) => run_start = Some(i),
                (false, Some(a)) => {
                    intervals.push(resolve_interval(a, i - 1, s_lo, h, dom_lo, dom_hi));
                    run_start = None;
                }
                _ => {}
            }
        }
        if let Some(a) = run_start {
            intervals.push(resolve_interval(a, points - 1, s_lo, h, dom_lo, dom_hi));
        }
        let mut mass = KahanSum::new();
        for &(a, b) in &intervals {
            let lo = a.max(0.0);
            let hi = b.max(0.0);
            if hi > lo {
                let (v, _) = adaptive_simpson(|x| (-self.eval(x)).exp(), lo, hi, 1e-12);
                mass.add(v);
            }
        }
        Ok(SmallRatioSet { delta, intervals, positive_mass: mass.value() })
    }

    /// Gibbs integral over `S` together with the dimension-only exponent
    /// `c(d) = 1 / (2 d 2^{d-1})` of the sparsity estimate. The matching
    /// multiplicative constant is existence-only and reported as unknown.
    pub fn gibbs_tail_factor(&self, s: &[(f64, f64)], d: usize) -> TailFactor {
        let mut total = KahanSum::new();
        let (dom_lo, dom_hi) = self.finite_domain();
        for &(a, b) in s {
            let lo = a.max(dom_lo);
            let hi = b.min(dom_hi).min(self.effective_support_radius());
            if hi > lo {
                // Two passes so the tolerance tracks the integral's own scale.
                let (coarse, _) = adaptive_simpson(|x| (-self.eval(x)).exp(), lo, hi, 1e-13);
                let tol = (1e-11 * coarse.abs()).clamp(1e-300, 1e-13);
                let (v, _) = adaptive_simpson(|x| (-self.eval(x)).exp(), lo, hi, tol);
                total.add(v);
            }
        }
        let classes = d as f64 * 2f64.powi(d as i32 - 1);
        TailFactor { integral: total.value(), exponent: 1.0 / (2.0 * classes), constant: None }
    }

    /// `int_R exp(-U)` with an error estimate; uses the convexity tail bound
    /// beyond the effective support.
    pub fn integral_exp_neg(&self) -> (f64, f64) {
        let radius = self.effective_support_radius();
        let (core, err) = adaptive_simpson(|x| (-self.eval(x)).exp(), 0.0, radius, 1e-13);
        let tail = self.tail_mass_above(radius).unwrap_or(0.0);
        (2.0 * (core + tail), 2.0 * (err + tail))
    }

    /// Radius beyond which `exp(-U)` is negligible (or the domain edge).
    pub fn effective_support_radius(&self) -> f64 {
        let (_, dom_hi) = self.finite_domain();
        if dom_hi.is_finite() {
            return dom_hi;
        }
        let u0 = self.eval(0.0);
        let mut r = 1.0;
        while self.eval(r) - u0 < 80.0 && r < 1e8 {
            r *= 2.0;
        }
        r
    }

    /// Bound on `int_{s_0}^{inf} exp(-U)` from the supporting line at `s_0`.
    fn tail_mass_above(&self, s0: f64) -> Result<f64, PotentialError> {
        let (_, dom_hi) = self.finite_domain();
        if s0 >= dom_hi {
            return Ok(0.0);
        }
        let u = self.eval(s0);
        if !u.is_finite() {
            return Ok(0.0);
        }
        let slope = self.derivative(s0);
        if slope <= 0.0 {
            return Err(PotentialError::Grid(f64::INFINITY));
        }
        Ok((-u).exp() / slope)
    }

    /// Tabulations of `delta_U`, `W` and the small-ratio set on request grids.
    /// Per-point computations run in parallel; results do not depend on the
    /// schedule.
    pub fn convexity_profile(
        &self,
        delta: f64,
        s_grid: &GridSpec,
        r_grid: &GridSpec,
    ) -> Result<ConvexityProfile, PotentialError> {
        let (dom_lo, dom_hi) = self.finite_domain();
        let s_points = make_symmetric_grid(s_grid, dom_lo, dom_hi);
        let delta_values: Vec<f64> = s_points
            .par_iter()
            .map(|&s| self.second_order_ratio(s).unwrap_or(f64::INFINITY))
            .collect();
        let r_points = make_symmetric_grid(r_grid, f64::NEG_INFINITY, f64::INFINITY);
        let gap_values: Vec<f64> = r_points.par_iter().map(|&r| self.convexity_gap(r)).collect();
        let small_set = self.small_ratio_set(delta, s_grid)?;
        Ok(ConvexityProfile {
            s_grid: s_points,
            delta_values,
            r_grid: r_points,
            gap_values,
            small_set,
        })
    }
}

fn make_symmetric_grid(spec: &GridSpec, dom_lo: f64, dom_hi: f64) -> Vec<f64> {
    let points = spec.points.max(3) | 1;
    let hi = spec.s_max.min(dom_hi);
    let lo = (-spec.s_max).max(dom_lo);
    let h = (hi - lo) / (points - 1) as f64;
    (0..points).map(|i| lo + i as f64 * h).collect()
}

fn resolve_interval(
    first: usize,
    last: usize,
    s_lo: f64,
    h: f64,
    dom_lo: f64,
    dom_hi: f64,
) -> (f64, f64) {
    let a = (s_lo + first as f64 * h - 0.5 * h).max(dom_lo);
    let b = (s_lo + last as f64 * h + 0.5 * h).min(dom_hi);
    (a, b)
}

fn scan_gap(objective: impl Fn(f64) -> f64, s_max: f64, r: f64) -> (f64, f64) {
    let mut best = (0.0, objective(0.0));
    // Linear sweep near the origin catches kinks at scale r, geometric sweep
    // covers the far field.
    let linear_hi = (2.5 * r).min(s_max);
    for i in 0..=160 {
        let s = linear_hi * i as f64 / 160.0;
        let v = objective(s);
        if v < best.1 {
            best = (s, v);
        }
    }
    if s_max > linear_hi {
        let ratio = (s_max / linear_hi.max(1e-8)).powf(1.0 / 80.0);
        let mut s = linear_hi.max(1e-8);
        for _ in 0..=80 {
            let v = objective(s);
            if v < best.1 {
                best = (s, v);
            }
            s *= ratio;
        }
    }
    best
}

fn last_decade_nondecreasing(objective: impl Fn(f64) -> f64, s_max: f64) -> bool {
    let lo = s_max / 10.0;
    let mut prev = objective(lo);
    for i in 1..=16 {
        let s = lo * (s_max / lo).powf(i as f64 / 16.0);
        let v = objective(s);
        if v < prev - 1e-14 * (1.0 + prev.abs()) {
            return false;
        }
        prev = v;
    }
    true
}

fn power_second_derivative(p: f64, x: f64) -> f64 {
    if x == 0.0 {
        if p > 2.0 {
            0.0
        } else if p == 2.0 {
            2.0
        } else {
            f64::INFINITY
        }
    } else {
        p * (p - 1.0) * x.abs().powf(p - 2.0)
    }
}

/// `|s+t|^p + |s-t|^p - 2|s|^p` without catastrophic cancellation: for
/// `t << |s|` the direct expression loses all significant digits, so a
/// binomial series in `(t/|s|)^2` is used there.
fn power_symmetric_gap(p: f64, s: f64, t: f64) -> f64 {
    let s = s.abs();
    if s == 0.0 {
        return 2.0 * t.powf(p);
    }
    let u = t / s;
    if u > 0.5 {
        return ((s + t).powf(p) + (s - t).abs().powf(p) - 2.0 * s.powf(p)).max(0.0);
    }
    // (1+u)^p + (1-u)^p - 2 = 2 * sum_{k>=1} C(p, 2k) u^{2k}
    let u2 = u * u;
    let mut coeff = p * (p - 1.0) / 2.0; // C(p, 2)
    let mut term = coeff * u2;
    let mut acc = term;
    let mut k = 1usize;
    while term.abs() > 1e-18 * acc.abs().max(1e-300) && k < 60 {
        let two_k = 2.0 * k as f64;
        coeff *= (p - two_k) * (p - two_k - 1.0) / ((two_k + 1.0) * (two_k + 2.0));
        k += 1;
        term = coeff * u2.powi(k as i32);
        acc += term;
    }
    (2.0 * acc * s.powf(p)).max(0.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::{assert_abs_diff_eq, assert_relative_eq};

    fn abs_potential() -> Potential {
        Potential::custom_from_fn(|x| x.abs(), 8.0, 257).unwrap()
    }

    #[test]
    fn eval_built_in_families() {
        assert_eq!(Potential::quadratic().eval(2.0), 4.0);
        assert_eq!(Potential::power_plus_quadratic(3.0).unwrap().eval(1.0), 2.0);
        assert_relative_eq!(Potential::power(1.5).unwrap().eval(-4.0), 8.0, epsilon = 1e-12);
    }

    #[test]
    fn eval_outside_custom_domain_is_infinite() {
        let u = abs_potential();
        assert!(u.eval(9.0).is_infinite());
        assert!(u.eval(-8.5).is_infinite());
        assert_relative_eq!(u.eval(3.25), 3.25, epsilon = 1e-12);
    }

    #[test]
    fn second_derivative_closed_forms() {
        let quartic = Potential::power(4.0).unwrap();
        assert_relative_eq!(quartic.second_derivative(1.0).unwrap(), 12.0, epsilon = 1e-12);
        assert_eq!(quartic.second_derivative(0.0).unwrap(), 0.0);
        assert_eq!(Potential::quadratic().second_derivative(3.7).unwrap(), 2.0);
        let subquadratic = Potential::power(1.5).unwrap();
        assert!(subquadratic.second_derivative(0.0).unwrap().is_infinite());
        let custom = abs_potential();
        assert!(custom.second_derivative(9.0).is_err());
    }

    #[test]
    fn second_order_ratio_quadratic_is_two() {
        let u = Potential::quadratic();
        for s in [0.0, 0.5, 5.0, -3.25] {
            assert_abs_diff_eq!(u.second_order_ratio(s).unwrap(), 2.0, epsilon = 1e-9);
        }
    }

    #[test]
    fn second_order_ratio_quartic() {
        let u = Potential::power(4.0).unwrap();
        assert_abs_diff_eq!(u.second_order_ratio(0.0).unwrap(), 0.0, epsilon = 1e-10);
        // Dense-grid oracle for s = 1: the gap is exactly 12 t^2 + 2 t^4, so
        // the ratio decreases to 12 as t -> 0.
        let mut oracle = f64::INFINITY;
        let mut t: f64 = 1e-6;
        while t < 1e3 {
            let ratio = (12.0 * t * t + 2.0 * t.powi(4)) / t.min(1.0).powi(2);
            oracle = oracle.min(ratio);
            t *= 1.01;
        }
        let computed = u.second_order_ratio(1.0).unwrap();
        assert_abs_diff_eq!(computed, oracle, epsilon = 1e-7);
        assert_abs_diff_eq!(computed, 12.0, epsilon = 1e-7);
    }

    #[test]
    fn second_order_ratio_abs_vanishes_off_origin() {
        let u = abs_potential();
        assert_abs_diff_eq!(u.second_order_ratio(1.0).unwrap(), 0.0, epsilon = 1e-12);
        assert_abs_diff_eq!(u.second_order_ratio(-2.5).unwrap(), 0.0, epsilon = 1e-12);
        assert!(u.second_order_ratio(0.0).unwrap() > 1.0);
    }

    #[test]
    fn convexity_gap_quadratic_identity() {
        let u = Potential::quadratic();
        for r in [0.0, 0.3, 1.0, 4.5] {
            assert_abs_diff_eq!(u.convexity_gap(r), r * r, epsilon = 1e-10);
        }
    }

    #[test]
    fn convexity_gap_abs_is_zero() {
        let u = abs_potential();
        assert_abs_diff_eq!(u.convexity_gap(3.0), 0.0, epsilon = 1e-12);
    }

    #[test]
    fn convexity_gap_quartic() {
        let u = Potential::power(4.0).unwrap();
        for r in [0.5, 1.0, 2.0] {
            assert_abs_diff_eq!(u.convexity_gap(r), r.powi(4), epsilon = 1e-8);
        }
    }

    #[test]
    fn gap_closed_forms_match_numeric() {
        let cases: Vec<(Potential, Box<dyn Fn(f64) -> f64>)> = vec![
            (Potential::quadratic(), Box::new(|r: f64| r * r)),
            (Potential::power(4.0).unwrap(), Box::new(|r: f64| r.powi(4))),
            (Potential::power(2.5).unwrap(), Box::new(|r: f64| r.abs().powf(2.5))),
            (
                Potential::power_plus_quadratic(4.0).unwrap(),
                Box::new(|r: f64| r * r + r.powi(4)),
            ),
        ];
        for (u, closed) in cases {
            for r in [0.25, 1.0, 1.75] {
                assert_relative_eq!(u.convexity_gap(r), closed(r), max_relative = 1e-6);
            }
        }
    }

    #[test]
    fn gap_infimum_property_random_probes() {
        let potentials =
            [Potential::quadratic(), Potential::power(4.0).unwrap(), abs_potential()];
        let mut state = 0x9e3779b97f4a7c15u64;
        let mut next = move || {
            state ^= state << 13;
            state ^= state >> 7;
            state ^= state << 17;
            (state >> 11) as f64 / (1u64 << 53) as f64
        };
        for u in &potentials {
            for _ in 0..100 {
                let r = 4.0 * next() - 2.0;
                let s0 = 6.0 * next() - 3.0;
                let probe = 0.5 * u.symmetric_gap(s0, r);
                if probe.is_finite() {
                    assert!(u.convexity_gap(r) <= probe + 1e-9 * (1.0 + probe));
                }
            }
        }
    }

    #[test]
    fn gap_of_power_plus_quadratic_dominates_quadratic() {
        let u = Potential::power_plus_quadratic(3.0).unwrap();
        for r in [0.1, 0.7, 1.3, 2.4] {
            assert!(u.convexity_gap(r) >= r * r - 1e-10);
        }
    }

    #[test]
    fn functional_evenness() {
        let u = Potential::power(4.0).unwrap();
        for x in [0.25, 1.0, 2.5] {
            let dp = u.second_order_ratio(x).unwrap();
            let dm = u.second_order_ratio(-x).unwrap();
            assert_abs_diff_eq!(dp, dm, epsilon = 1e-12);
            assert_abs_diff_eq!(u.convexity_gap(x), u.convexity_gap(-x), epsilon = 1e-12);
        }
    }

    #[test]
    fn ratio_bounded_by_second_derivative() {
        let potentials = [
            Potential::quadratic(),
            Potential::power(4.0).unwrap(),
            Potential::power(2.5).unwrap(),
            Potential::power_plus_quadratic(3.0).unwrap(),
        ];
        for u in &potentials {
            for i in 0..20 {
                let s = -2.0 + 4.0 * i as f64 / 19.0;
                let dd = u.second_derivative(s).unwrap();
                if dd.is_finite() {
                    assert!(
                        u.second_order_ratio(s).unwrap() <= dd + 1e-8 * (1.0 + dd),
                        "ratio exceeds U'' at s = {s}"
                    );
                }
            }
        }
    }

    #[test]
    fn small_ratio_set_quadratic_is_empty() {
        let u = Potential::quadratic();
        let set = u.small_ratio_set(1.0, &GridSpec { s_max: 10.0, points: 2001 }).unwrap();
        assert!(set.intervals.is_empty());
        assert_eq!(set.positive_mass, 0.0);
    }

    #[test]
    fn small_ratio_set_abs_has_unit_mass() {
        let u = Potential::custom_from_fn(|x| x.abs(), 30.0, 4001).unwrap();
        let set = u.small_ratio_set(1.0, &GridSpec { s_max: 30.0, points: 4001 }).unwrap();
        // delta_U vanishes away from the kink, so S misses only a grid cell
        // around the origin; the tabulated domain truncates exp(-s) at 30.
        let h = 60.0 / 4000.0;
        let expected = 1.0 - 30.0f64.exp().recip();
        assert_abs_diff_eq!(set.positive_mass, expected, epsilon = 2.0 * h);
        assert_eq!(set.intervals.len(), 2);
        let (a, b) = set.intervals[0];
        let (c, d) = set.intervals[1];
        assert_abs_diff_eq!(a, -30.0, epsilon = 1e-9);
        assert_abs_diff_eq!(-b, c, epsilon = 1e-12);
        assert_abs_diff_eq!(d, 30.0, epsilon = 1e-9);
    }

    #[test]
    fn small_ratio_set_quartic_interval_boundary() {
        let u = Potential::power(4.0).unwrap();
        let delta = 0.1;
        let set = u.small_ratio_set(delta, &GridSpec { s_max: 8.0, points: 4001 }).unwrap();
        assert_eq!(set.intervals.len(), 1);
        // Bisection oracle: delta_U(s) = 12 s^2 for the quartic near 0.
        let boundary = crate::numeric::bisect(
            |s| u.second_order_ratio(s).unwrap() - delta,
            0.0,
            1.0,
            1e-10,
        );
        let (a, b) = set.intervals[0];
        let h = 16.0 / 4000.0;
        assert_abs_diff_eq!(b, boundary, epsilon = h);
        assert_abs_diff_eq!(a, -boundary, epsilon = h);
        assert_abs_diff_eq!(boundary, (delta / 12.0).sqrt(), epsilon = 1e-5);
    }

    #[test]
    fn small_ratio_mass_monotone_in_delta() {
        let u = Potential::power(4.0).unwrap();
        let grid = GridSpec { s_max: 8.0, points: 1001 };
        let mut prev = 0.0;
        for delta in [0.01, 0.1, 1.0, 10.0] {
            let mass = u.small_ratio_set(delta, &grid).unwrap().positive_mass;
            assert!(mass >= prev - 1e-12);
            prev = mass;
        }
    }

    #[test]
    fn small_ratio_set_rejects_short_grid() {
        let u = Potential::quadratic();
        let err = u.small_ratio_set(1.0, &GridSpec { s_max: 1.0, points: 101 });
        assert!(matches!(err, Err(PotentialError::Grid(_))));
    }

    #[test]
    fn gibbs_tail_factor_gaussian_half_line() {
        let u = Potential::quadratic();
        let report = u.gibbs_tail_factor(&[(0.0, f64::INFINITY)], 2);
        assert_relative_eq!(
            report.integral,
            core::f64::consts::PI.sqrt() / 2.0,
            epsilon = 1e-9
        );
        assert_eq!(report.exponent, 1.0 / 8.0);
        assert!(report.constant.is_none());
    }

    #[test]
    fn gibbs_tail_factor_empty_set() {
        let u = Potential::power(4.0).unwrap();
        let report = u.gibbs_tail_factor(&[], 3);
        assert_eq!(report.integral, 0.0);
        assert_eq!(report.exponent, 1.0 / 24.0);
    }

    #[test]
    fn gibbs_tail_factor_quartic_tail() {
        let u = Potential::power(4.0).unwrap();
        let report = u.gibbs_tail_factor(&[(2.0, f64::INFINITY)], 3);
        let (oracle, _) = adaptive_simpson(|x| (-x.powi(4)).exp(), 2.0, 6.0, 1e-22);
        assert_relative_eq!(report.integral, oracle, max_relative = 1e-8);
        assert_eq!(report.exponent, 1.0 / 24.0);
    }

    #[test]
    fn normalization_integral_finite_and_positive() {
        for u in [
            Potential::quadratic(),
            Potential::power(1.5).unwrap(),
            Potential::power_plus_quadratic(4.0).unwrap(),
            abs_potential(),
        ] {
            let (z, err) = u.integral_exp_neg();
            assert!(z.is_finite() && z > 0.0);
            assert!(err < 1e-6 * z);
        }
    }

    #[test]
    fn custom_table_round_trips_through_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("abs.pot");
        let u = abs_potential();
        u.save_table(&path, 8.0, 257).unwrap();
        let loaded = Potential::from_file(&path).unwrap();
        for x in [-7.5, -1.0, 0.0, 0.33, 6.2] {
            assert_abs_diff_eq!(loaded.eval(x), u.eval(x), epsilon = 1e-9);
        }
    }

    #[test]
    fn custom_rejects_non_convex_table() {
        let xs = [-1.0, 0.0, 1.0];
        let us = [0.0, 1.0, 0.0];
        assert!(matches!(Potential::custom(&xs, &us), Err(PotentialError::Table(_))));
    }

    #[test]
    fn symmetric_gap_stable_at_tiny_offsets() {
        let u = Potential::power(4.0).unwrap();
        // Direct evaluation at t = 1e-7 would lose every significant digit.
        let t = 1e-7;
        let gap = u.symmetric_gap(1.0, t);
        assert_relative_eq!(gap, 12.0 * t * t, max_relative = 1e-10);
    }

    #[test]
    fn convexity_profile_grids_are_even_and_nonnegative() {
        let u = Potential::power(4.0).unwrap();
        let profile = u
            .convexity_profile(
                0.5,
                &GridSpec { s_max: 6.0, points: 201 },
                &GridSpec { s_max: 3.0, points: 101 },
            )
            .unwrap();
        let n = profile.delta_values.len();
        for i in 0..n {
            assert!(profile.delta_values[i] >= 0.0);
            assert_abs_diff_eq!(
                profile.delta_values[i],
                profile.delta_values[n - 1 - i],
                epsilon = 1e-9
            );
        }
        let m = profile.gap_values.len();
        for i in 0..m / 2 {
            assert_abs_diff_eq!(
                profile.gap_values[i],
                profile.gap_values[m - 1 - i],
                epsilon = 1e-9
            );
            assert!(profile.gap_values[i] >= profile.gap_values[i + 1] - 1e-9);
        }
    }
}
