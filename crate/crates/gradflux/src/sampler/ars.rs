//! Exact sampling of one-dimensional log-concave conditionals by rejection
//! from a piecewise-exponential upper envelope built from supporting lines
//! of the log-density. Flat maxima (potentials like `|x|`) produce
//! zero-slope segments on a bounded stretch, which the envelope handles
//! directly; degenerate cases fall back to inverse-CDF on an adaptive grid.

use crate::numeric::golden_max;
use crate::potential::Potential;
use rand::Rng;

use super::SamplerError;

/// Unnormalized log-concave conditional of a single site given its
/// neighbors: `log density(s) = -sum_i U(s - a_i)`.
#[derive(Debug, Clone)]
pub struct Conditional1D<'a> {
    potential: &'a Potential,
    neighbors: Vec<f64>,
    support: (f64, f64),
}

impl<'a> Conditional1D<'a> {
    pub fn new(potential: &'a Potential, neighbors: Vec<f64>) -> Self {
        assert!(!neighbors.is_empty(), "a free site must have neighbors");
        let (dom_lo, dom_hi) = potential.finite_domain();
        // The support is the intersection of the neighbor-shifted domains.
        let lo = neighbors.iter().cloned().fold(f64::NEG_INFINITY, f64::max) + dom_lo;
        let hi = neighbors.iter().cloned().fold(f64::INFINITY, f64::min) + dom_hi;
        Self { potential, neighbors, support: (lo, hi) }
    }

    pub fn support(&self) -> (f64, f64) {
        self.support
    }

    pub fn neighbors(&self) -> &[f64] {
        &self.neighbors
    }

    pub fn log_density(&self, s: f64) -> f64 {
        -self.neighbors.iter().map(|&a| self.potential.eval(s - a)).sum::<f64>()
    }

    /// A supergradient of the concave log-density.
    pub fn slope(&self, s: f64) -> f64 {
        -self.neighbors.iter().map(|&a| self.potential.derivative(s - a)).sum::<f64>()
    }

    fn neighbor_range(&self) -> (f64, f64) {
        let lo = self.neighbors.iter().cloned().fold(f64::INFINITY, f64::min);
        let hi = self.neighbors.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        (lo, hi)
    }

    /// Mode by golden-section over the neighbor range, expanded until the
    /// log-density has dropped at both ends (for even convex potentials the
    /// mode lies in the convex hull of the neighbor values).
    pub fn mode(&self) -> f64 {
        let (nb_lo, nb_hi) = self.neighbor_range();
        let mut pad = 0.5 * (nb_hi - nb_lo) + 1.0;
        let center = 0.5 * (nb_lo + nb_hi);
        let peak_guess = self.log_density(center);
        for _ in 0..60 {
            let a = (nb_lo - pad).max(self.support.0);
            let b = (nb_hi + pad).min(self.support.1);
            let dropped = |s: f64| self.log_density(s) < peak_guess - 20.0;
            let a_done = a <= self.support.0 + 1e-300 || dropped(a);
            let b_done = b >= self.support.1 - 1e-300 || dropped(b);
            if a_done && b_done {
                let (m, _) = golden_max(|s| self.log_density(s), a, b, 1e-12 * (1.0 + b - a));
                return m;
            }
            pad *= 2.0;
        }
        center
    }
}

/// Piecewise-linear upper bound of the shifted log-density: supporting
/// lines at `points`, valid on `support`.
struct Hull {
    /// `(x, shifted log density, slope)`, sorted by `x`, slopes strictly
    /// decreasing.
    points: Vec<(f64, f64, f64)>,
    support: (f64, f64),
}

/// One envelope segment: the supporting line through `(x_ref, v_ref)` with
/// the given slope rules on `[left, right]` (ends may be infinite).
#[derive(Clone, Copy)]
struct Segment {
    left: f64,
    right: f64,
    x_ref: f64,
    v_ref: f64,
    slope: f64,
}

impl Segment {
    fn mass(&self) -> f64 {
        let k = self.slope;
        if !self.left.is_finite() {
            if k <= 0.0 {
                return f64::INFINITY;
            }
            return (self.v_ref + k * (self.right - self.x_ref)).exp() / k;
        }
        if !self.right.is_finite() {
            if k >= 0.0 {
                return f64::INFINITY;
            }
            return (self.v_ref + k * (self.left - self.x_ref)).exp() / (-k);
        }
        let c = (self.v_ref + k * (self.left - self.x_ref)).exp();
        let kw = k * (self.right - self.left);
        if kw.abs() < 1e-12 {
            c * (self.right - self.left) * (1.0 + 0.5 * kw)
        } else {
            c * (self.right - self.left) * kw.exp_m1() / kw
        }
    }

    fn draw(&self, u: f64) -> f64 {
        let k = self.slope;
        if !self.left.is_finite() {
            return self.right + u.max(1e-300).ln() / k;
        }
        if !self.right.is_finite() {
            return self.left + (1.0 - u).max(1e-300).ln() / k;
        }
        let kw = k * (self.right - self.left);
        if kw.abs() < 1e-12 {
            self.left + u * (self.right - self.left)
        } else {
            self.left + (u * kw.exp_m1()).ln_1p() / k
        }
    }
}

impl Hull {
    fn insert(&mut self, x: f64, lx: f64, slope: f64) {
        if self.points.len() >= 64 || !lx.is_finite() {
            return;
        }
        let pos = self.points.partition_point(|p| p.0 < x);
        // Keep slopes strictly decreasing so neighbors intersect cleanly.
        if pos > 0 && self.points[pos - 1].2 - slope < 1e-13 {
            return;
        }
        if pos < self.points.len() && slope - self.points[pos].2 < 1e-13 {
            return;
        }
        self.points.insert(pos, (x, lx, slope));
    }

    fn segments(&self) -> Vec<Segment> {
        let pts = &self.points;
        let mut cuts = Vec::with_capacity(pts.len() + 1);
        cuts.push(self.support.0);
        for w in pts.windows(2) {
            let (x1, l1, s1) = w[0];
            let (x2, l2, s2) = w[1];
            let z = ((l2 - s2 * x2) - (l1 - s1 * x1)) / (s1 - s2);
            let z = z.clamp(self.support.0, self.support.1);
            cuts.push(z.max(*cuts.last().unwrap()));
        }
        cuts.push(self.support.1);
        let mut segments = Vec::with_capacity(pts.len());
        for (i, &(x, lx, slope)) in pts.iter().enumerate() {
            let (left, right) = (cuts[i], cuts[i + 1]);
            if right <= left {
                continue;
            }
            segments.push(Segment { left, right, x_ref: x, v_ref: lx, slope });
        }
        segments
    }

    fn envelope_at(&self, s: f64) -> f64 {
        self.points
            .iter()
            .map(|&(x, lx, slope)| lx + slope * (s - x))
            .fold(f64::INFINITY, f64::min)
    }
}

/// One exact draw from the conditional, reporting the number of rejection
/// trials (acceptance diagnostics).
pub fn sample_conditional_with_trials(
    cond: &Conditional1D,
    rng: &mut impl Rng,
) -> Result<(f64, u32), SamplerError> {
    let mode = cond.mode();
    let peak = cond.log_density(mode);
    let (sup_lo, sup_hi) = cond.support();
    let (nb_lo, nb_hi) = cond.neighbor_range();
    let spread = 0.25 * (nb_hi - nb_lo) + 0.25;
    // Step out from the mode for supporting points whose slopes close the
    // envelope on each unbounded side.
    let find_point = |dir: f64| -> Option<(f64, f64, f64)> {
        let mut d = spread;
        for _ in 0..200 {
            let x = mode + dir * d;
            if x <= sup_lo || x >= sup_hi {
                // A finite support end caps this side regardless of slope.
                let end = if dir < 0.0 { sup_lo } else { sup_hi };
                if !end.is_finite() {
                    return None;
                }
                let x = end - dir * 1e-9 * (1.0 + end.abs());
                let lx = cond.log_density(x);
                return lx.is_finite().then(|| (x, lx, cond.slope(x)));
            }
            let slope = cond.slope(x);
            if dir * slope < -1e-9 && cond.log_density(x).is_finite() {
                return Some((x, cond.log_density(x), slope));
            }
            d *= 2.0;
        }
        None
    };
    if let (Some(l), Some(r)) = (find_point(-1.0), find_point(1.0)) {
        // The envelope must decay on unbounded sides.
        let lo = if l.2 > 1e-9 { f64::NEG_INFINITY.max(sup_lo) } else { sup_lo };
        let hi = if r.2 < -1e-9 { f64::INFINITY.min(sup_hi) } else { sup_hi };
        let sides_ok = (lo.is_finite() || l.2 > 1e-9) && (hi.is_finite() || r.2 < -1e-9);
        if sides_ok {
            let mut hull = Hull { points: Vec::new(), support: (lo, hi) };
            hull.insert(l.0, l.1 - peak, l.2);
            hull.insert(mode, 0.0, cond.slope(mode));
            hull.insert(r.0, r.1 - peak, r.2);
            if !hull.points.is_empty() {
                let mut trials = 0u32;
                'rejection: loop {
                    trials += 1;
                    let segments = hull.segments();
                    let masses: Vec<f64> = segments.iter().map(Segment::mass).collect();
                    let total: f64 = masses.iter().sum();
                    if !total.is_finite() || total <= 0.0 {
                        break 'rejection; // grid fallback
                    }
                    let mut pick = rng.gen::<f64>() * total;
                    let mut chosen = segments.len() - 1;
                    for (i, &m) in masses.iter().enumerate() {
                        if pick < m {
                            chosen = i;
                            break;
                        }
                        pick -= m;
                    }
                    let x = segments[chosen].draw(rng.gen::<f64>());
                    if !x.is_finite() || x < hull.support.0 || x > hull.support.1 {
                        continue;
                    }
                    let lx = cond.log_density(x) - peak;
                    let env = hull.envelope_at(x);
                    if (lx - env).exp() >= rng.gen::<f64>() {
                        return Ok((x, trials));
                    }
                    hull.insert(x, lx, cond.slope(x));
                    if trials >= 2000 {
                        return Err(SamplerError::Envelope { acceptance: 1.0 / trials as f64 });
                    }
                }
            }
        }
    }
    // Inverse-CDF fallback on an adaptive grid (degenerate envelopes).
    let lo = if sup_lo.is_finite() { sup_lo } else { mode - 40.0 * (spread + 1.0) };
    let hi = if sup_hi.is_finite() { sup_hi } else { mode + 40.0 * (spread + 1.0) };
    let n = 8192;
    let h = (hi - lo) / n as f64;
    let mut cdf = Vec::with_capacity(n + 1);
    let mut acc = 0.0;
    let mut prev = (cond.log_density(lo) - peak).exp();
    cdf.push(0.0);
    for i in 1..=n {
        let s = lo + i as f64 * h;
        let cur = (cond.log_density(s) - peak).exp();
        acc += 0.5 * (prev + cur) * h;
        cdf.push(acc);
        prev = cur;
    }
    if !(acc > 0.0) {
        return Err(SamplerError::Envelope { acceptance: 0.0 });
    }
    let target = rng.gen::<f64>() * acc;
    let idx = cdf.partition_point(|&c| c < target).max(1);
    let (c0, c1) = (cdf[idx - 1], cdf[idx]);
    let frac = if c1 > c0 { (target - c0) / (c1 - c0) } else { 0.5 };
    Ok((lo + (idx as f64 - 1.0 + frac) * h, 1))
}

/// Exact draw from a log-concave site conditional.
pub fn sample_conditional(cond: &Conditional1D, rng: &mut impl Rng) -> Result<f64, SamplerError> {
    sample_conditional_with_trials(cond, rng).map(|(x, _)| x)
}
