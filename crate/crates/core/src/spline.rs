//! B-spline and natural cubic spline bases with analytic derivatives.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Floor applied to `t` before a log transform so the hazard stays evaluable near zero.
pub const LOG_TIME_FLOOR: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum TimeTransform {
    #[default]
    Identity,
    Log,
}

impl TimeTransform {
    pub fn apply(self, t: f64) -> f64 {
        match self {
            TimeTransform::Identity => t,
            TimeTransform::Log => t.max(LOG_TIME_FLOOR).ln(),
        }
    }

    pub fn invert(self, r: f64) -> f64 {
        match self {
            TimeTransform::Identity => r,
            TimeTransform::Log => r.exp(),
        }
    }
}

/// Locates the knot span containing `x`; the right boundary belongs to the last
/// non-empty span.
fn find_span(knots: &[f64], degree: usize, n_basis: usize, x: f64) -> usize {
    if x >= knots[n_basis] {
        let mut i = n_basis - 1;
        while i > degree && knots[i] >= knots[i + 1] {
            i -= 1;
        }
        return i;
    }
    // Largest i in [degree, n_basis - 1] with knots[i] <= x.
    let upper = knots[..=n_basis].partition_point(|&k| k <= x);
    upper.saturating_sub(1).clamp(degree, n_basis - 1)
}

/// Runs `f` on a zeroed buffer of length `n`, on the stack when it is small.
pub(crate) fn with_scratch<R>(n: usize, f: impl FnOnce(&mut [f64]) -> R) -> R {
    const STACK: usize = 96;
    if n <= STACK {
        let mut buf = [0.0; STACK];
        f(&mut buf[..n])
    } else {
        f(&mut vec![0.0; n])
    }
}

/// Nonzero basis functions and their derivatives at `x` on span `span`.
///
/// `ders[k * (degree + 1) + j]` receives the k-th derivative of basis function
/// `span - degree + j`, for k up to `n_derivs`.
fn basis_derivatives(span: usize, x: f64, degree: usize, knots: &[f64], n_derivs: usize, ders: &mut [f64]) {
    let p = degree;
    let w = p + 1;
    with_scratch(w * w + 4 * w, |buf| {
        let (ndu, rest) = buf.split_at_mut(w * w);
        let (left, rest) = rest.split_at_mut(w);
        let (right, a) = rest.split_at_mut(w);
        ndu[0] = 1.0;
        for j in 1..=p {
            left[j] = x - knots[span + 1 - j];
            right[j] = knots[span + j] - x;
            let mut saved = 0.0;
            for r in 0..j {
                ndu[j * w + r] = right[r + 1] + left[j - r];
                let temp = ndu[r * w + j - 1] / ndu[j * w + r];
                ndu[r * w + j] = saved + right[r + 1] * temp;
                saved = left[j - r] * temp;
            }
            ndu[j * w + j] = saved;
        }
        ders[..(n_derivs + 1) * w].iter_mut().for_each(|v| *v = 0.0);
        for j in 0..=p {
            ders[j] = ndu[j * w + p];
        }
        let top = n_derivs.min(p);
        for r in 0..=p {
            let (mut s1, mut s2) = (0usize, w);
            a[0] = 1.0;
            for k in 1..=top {
                let mut d = 0.0;
                let rk = r as isize - k as isize;
                let pk = p - k;
                if rk >= 0 {
                    a[s2] = a[s1] / ndu[(pk + 1) * w + rk as usize];
                    d = a[s2] * ndu[rk as usize * w + pk];
                }
                let j1 = if rk >= -1 { 1 } else { (-rk) as usize };
                let j2 = if r as isize - 1 <= pk as isize { k - 1 } else { p - r };
                for j in j1..=j2 {
                    let idx = (rk + j as isize) as usize;
                    a[s2 + j] = (a[s1 + j] - a[s1 + j - 1]) / ndu[(pk + 1) * w + idx];
                    d += a[s2 + j] * ndu[idx * w + pk];
                }
                if r <= pk {
                    a[s2 + k] = -a[s1 + k - 1] / ndu[(pk + 1) * w + r];
                    d += a[s2 + k] * ndu[r * w + pk];
                }
                ders[k * w + r] = d;
                std::mem::swap(&mut s1, &mut s2);
            }
        }
        let mut factor = p as f64;
        for k in 1..=top {
            for v in &mut ders[k * w..(k + 1) * w] {
                *v *= factor;
            }
            factor *= (p - k) as f64;
        }
    })
}

/// Full clamped knot vector: boundary knots repeated `degree + 1` times.
fn clamped_knots(degree: usize, interior: &[f64], boundary: (f64, f64)) -> Vec<f64> {
    let mut knots = vec![boundary.0; degree + 1];
    knots.extend_from_slice(interior);
    knots.extend(std::iter::repeat_n(boundary.1, degree + 1));
    knots
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct BSplineConfig {
    degree: usize,
    interior_knots: Vec<f64>,
    boundary_knots: (f64, f64),
    include_intercept: bool,
    #[serde(default)]
    time_transform: TimeTransform,
}

/// Clamped B-spline basis on a (possibly transformed) time axis.
///
/// Knots and boundaries live on the transformed scale `r(t)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "BSplineConfig", into = "BSplineConfig")]
pub struct BSplineBasis {
    degree: usize,
    interior_knots: Vec<f64>,
    boundary: (f64, f64),
    include_intercept: bool,
    time_transform: TimeTransform,
    knots: Vec<f64>,
}

impl TryFrom<BSplineConfig> for BSplineBasis {
    type Error = Error;
    fn try_from(c: BSplineConfig) -> Result<Self> {
        BSplineBasis::new(
            c.degree,
            c.interior_knots,
            c.boundary_knots,
            c.include_intercept,
            c.time_transform,
        )
    }
}

impl From<BSplineBasis> for BSplineConfig {
    fn from(b: BSplineBasis) -> Self {
        BSplineConfig {
            degree: b.degree,
            interior_knots: b.interior_knots,
            boundary_knots: b.boundary,
            include_intercept: b.include_intercept,
            time_transform: b.time_transform,
        }
    }
}

impl BSplineBasis {
    pub fn new(
        degree: usize,
        interior_knots: Vec<f64>,
        boundary: (f64, f64),
        include_intercept: bool,
        time_transform: TimeTransform,
    ) -> Result<Self> {
        let (lo, hi) = boundary;
        if !(lo.is_finite() && hi.is_finite() && lo < hi) {
            return Err(Error::Config(format!(
                "B-spline boundary knots ({lo}, {hi}) must be finite and increasing"
            )));
        }
        if interior_knots.windows(2).any(|w| w[1] < w[0]) {
            return Err(Error::Config("B-spline interior knots must be nondecreasing".into()));
        }
        if interior_knots.iter().any(|&k| k <= lo || k >= hi) {
            return Err(Error::Config(
                "B-spline interior knots must lie strictly inside the boundary".into(),
            ));
        }
        let knots = clamped_knots(degree, &interior_knots, boundary);
        let basis = BSplineBasis {
            degree,
            interior_knots,
            boundary,
            include_intercept,
            time_transform,
            knots,
        };
        if basis.n_basis() == 0 {
            return Err(Error::Config("B-spline basis has no columns".into()));
        }
        Ok(basis)
    }

    /// Cubic-style basis with `n_basis` columns (intercept included) whose interior
    /// knots sit at equally spaced quantiles of `times` (on the transformed scale).
    pub fn from_quantiles(
        times: &[f64],
        n_basis: usize,
        degree: usize,
        boundary_time: (f64, f64),
        time_transform: TimeTransform,
    ) -> Result<Self> {
        if n_basis < degree + 1 {
            return Err(Error::Config(format!(
                "{n_basis} basis functions cannot support degree {degree}"
            )));
        }
        let n_interior = n_basis - degree - 1;
        let lo = time_transform.apply(boundary_time.0);
        let hi = time_transform.apply(boundary_time.1);
        let mut r: Vec<f64> = times
            .iter()
            .map(|&t| time_transform.apply(t))
            .filter(|x| *x > lo && *x < hi)
            .collect();
        if r.len() < n_interior.max(1) {
            return Err(Error::Data(format!(
                "need at least {} event times inside the boundary to place knots",
                n_interior.max(1)
            )));
        }
        r.sort_by(f64::total_cmp);
        let interior = (1..=n_interior)
            .map(|k| quantile_sorted(&r, k as f64 / (n_interior + 1) as f64))
            .collect();
        BSplineBasis::new(degree, interior, (lo, hi), true, time_transform)
    }

    pub fn degree(&self) -> usize {
        self.degree
    }

    pub fn interior_knots(&self) -> &[f64] {
        &self.interior_knots
    }

    pub fn boundary(&self) -> (f64, f64) {
        self.boundary
    }

    pub fn time_transform(&self) -> TimeTransform {
        self.time_transform
    }

    pub fn include_intercept(&self) -> bool {
        self.include_intercept
    }

    /// Number of columns returned by [`Self::eval`].
    pub fn n_basis(&self) -> usize {
        let full = self.knots.len() - self.degree - 1;
        full - usize::from(!self.include_intercept)
    }

    /// Distinct knot locations mapped back to the time scale.
    pub fn breakpoints_time(&self) -> Vec<f64> {
        let mut pts: Vec<f64> = std::iter::once(self.boundary.0)
            .chain(self.interior_knots.iter().copied())
            .chain(std::iter::once(self.boundary.1))
            .map(|r| self.time_transform.invert(r))
            .collect();
        pts.dedup();
        pts
    }

    /// Basis values at time `t`.
    pub fn eval(&self, t: f64) -> Result<Vec<f64>> {
        let mut out = vec![0.0; self.n_basis()];
        self.eval_into(t, 0, &mut out)?;
        Ok(out)
    }

    /// Basis values (or derivatives with respect to `r(t)`) at time `t`, written into `out`.
    pub fn eval_into(&self, t: f64, derivative: usize, out: &mut [f64]) -> Result<()> {
        let x = self.time_transform.apply(t);
        let (lo, hi) = self.boundary;
        let tol = 1e-12 * (hi - lo).max(1.0);
        if !(x >= lo - tol && x <= hi + tol) {
            return Err(Error::Domain(format!(
                "B-spline evaluated at {x} outside [{lo}, {hi}]"
            )));
        }
        self.eval_transformed(x.clamp(lo, hi), derivative, out);
        Ok(())
    }

    fn eval_transformed(&self, x: f64, derivative: usize, out: &mut [f64]) {
        debug_assert_eq!(out.len(), self.n_basis());
        out.iter_mut().for_each(|v| *v = 0.0);
        let full = self.knots.len() - self.degree - 1;
        let span = find_span(&self.knots, self.degree, full, x);
        let w = self.degree + 1;
        let shift = usize::from(!self.include_intercept);
        with_scratch((derivative + 1) * w, |ders| {
            basis_derivatives(span, x, self.degree, &self.knots, derivative, ders);
            for (j, &v) in ders[derivative * w..].iter().enumerate() {
                let col = span - self.degree + j;
                if col >= shift {
                    out[col - shift] = v;
                }
            }
        });
    }
}

/// Type-7 sample quantile of sorted data.
pub(crate) fn quantile_sorted(sorted: &[f64], p: f64) -> f64 {
    let n = sorted.len();
    if n == 1 {
        return sorted[0];
    }
    let h = (n - 1) as f64 * p.clamp(0.0, 1.0);
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(n - 1);
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct NaturalSplineConfig {
    internal_knots: Vec<f64>,
    boundary_knots: (f64, f64),
}

/// Natural cubic spline basis without intercept, built the way R's `splines::ns`
/// builds it: a cubic B-spline basis projected onto the null space of the
/// second-derivative constraints at both boundary knots. Beyond the boundary
/// the basis continues linearly.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "NaturalSplineConfig", into = "NaturalSplineConfig")]
pub struct NaturalSplineBasis {
    internal_knots: Vec<f64>,
    boundary: (f64, f64),
    bspline: BSplineBasis,
    /// Row-major (n_bspline - 1) x n_basis projection.
    projection: Vec<f64>,
}

impl TryFrom<NaturalSplineConfig> for NaturalSplineBasis {
    type Error = Error;
    fn try_from(c: NaturalSplineConfig) -> Result<Self> {
        NaturalSplineBasis::new(c.internal_knots, c.boundary_knots)
    }
}

impl From<NaturalSplineBasis> for NaturalSplineConfig {
    fn from(b: NaturalSplineBasis) -> Self {
        NaturalSplineConfig {
            internal_knots: b.internal_knots,
            boundary_knots: b.boundary,
        }
    }
}

/// Householder QR of a column-major `m x k` matrix; returns the complete
/// orthogonal factor `Q` (row-major `m x m`). Reflections use the LINPACK sign
/// convention so the result matches R's `qr()`.
fn householder_q(a: &mut [Vec<f64>], m: usize) -> Vec<f64> {
    let k = a.len();
    let mut reflectors: Vec<Option<Vec<f64>>> = Vec::with_capacity(k);
    for l in 0..k.min(m) {
        let mut nrm = a[l][l..].iter().map(|v| v * v).sum::<f64>().sqrt();
        if nrm == 0.0 {
            reflectors.push(None);
            continue;
        }
        if a[l][l] != 0.0 {
            nrm = nrm.copysign(a[l][l]);
        }
        let mut v = vec![0.0; m];
        for i in l..m {
            v[i] = a[l][i] / nrm;
        }
        v[l] += 1.0;
        for col in a.iter_mut().skip(l + 1) {
            apply_reflector(&v, l, col);
        }
        a[l][l] = -nrm;
        for x in a[l][l + 1..].iter_mut() {
            *x = 0.0;
        }
        reflectors.push(Some(v));
    }
    let mut q = vec![0.0; m * m];
    for j in 0..m {
        let mut e = vec![0.0; m];
        e[j] = 1.0;
        for (l, r) in reflectors.iter().enumerate().rev() {
            if let Some(v) = r {
                apply_reflector(v, l, &mut e);
            }
        }
        for i in 0..m {
            q[i * m + j] = e[i];
        }
    }
    q
}

fn apply_reflector(v: &[f64], l: usize, y: &mut [f64]) {
    let dot: f64 = v[l..].iter().zip(&y[l..]).map(|(a, b)| a * b).sum();
    let t = -dot / v[l];
    for i in l..y.len() {
        y[i] += t * v[i];
    }
}

impl NaturalSplineBasis {
    pub fn new(internal_knots: Vec<f64>, boundary: (f64, f64)) -> Result<Self> {
        let (lo, hi) = boundary;
        if !(lo.is_finite() && hi.is_finite() && lo < hi) {
            return Err(Error::Config(format!(
                "natural spline boundary ({lo}, {hi}) must be finite and increasing"
            )));
        }
        if internal_knots.windows(2).any(|w| w[1] <= w[0])
            || internal_knots.iter().any(|&k| k <= lo || k >= hi)
        {
            return Err(Error::Config(
                "natural spline internal knots must be increasing and strictly inside the boundary"
                    .into(),
            ));
        }
        let bspline = BSplineBasis::new(
            3,
            internal_knots.clone(),
            boundary,
            false,
            TimeTransform::Identity,
        )?;
        let m = bspline.n_basis();
        let mut constraints = vec![vec![0.0; m]; 2];
        bspline.eval_transformed(lo, 2, &mut constraints[0]);
        bspline.eval_transformed(hi, 2, &mut constraints[1]);
        let q = householder_q(&mut constraints, m);
        let n_basis = m - 2;
        let mut projection = vec![0.0; m * n_basis];
        for i in 0..m {
            for j in 0..n_basis {
                projection[i * n_basis + j] = q[i * m + j + 2];
            }
        }
        Ok(NaturalSplineBasis {
            internal_knots,
            boundary,
            bspline,
            projection,
        })
    }

    pub fn internal_knots(&self) -> &[f64] {
        &self.internal_knots
    }

    pub fn boundary(&self) -> (f64, f64) {
        self.boundary
    }

    pub fn n_basis(&self) -> usize {
        self.bspline.n_basis() - 2
    }

    /// Knots and boundaries: the points where the basis changes polynomial piece.
    pub fn breakpoints(&self) -> Vec<f64> {
        std::iter::once(self.boundary.0)
            .chain(self.internal_knots.iter().copied())
            .chain(std::iter::once(self.boundary.1))
            .collect()
    }

    /// Basis (or its first/second derivative) at `t`.
    pub fn eval(&self, t: f64, derivative: usize) -> Result<Vec<f64>> {
        if derivative > 2 {
            return Err(Error::Config(format!(
                "natural spline derivative order {derivative} not supported"
            )));
        }
        let mut out = vec![0.0; self.n_basis()];
        self.eval_into(t, derivative, &mut out);
        Ok(out)
    }

    /// Like [`Self::eval`]; orders above 2 evaluate to zero.
    pub fn eval_into(&self, t: f64, derivative: usize, out: &mut [f64]) {
        let m = self.bspline.n_basis();
        let nb = self.n_basis();
        let (lo, hi) = self.boundary;
        with_scratch(2 * m, |buf| {
            let (raw, slope) = buf.split_at_mut(m);
            if t < lo || t > hi {
                let pivot = if t < lo { lo } else { hi };
                match derivative {
                    0 => {
                        self.bspline.eval_transformed(pivot, 0, raw);
                        self.bspline.eval_transformed(pivot, 1, slope);
                        for (r, s) in raw.iter_mut().zip(slope.iter()) {
                            *r += (t - pivot) * s;
                        }
                    }
                    1 => self.bspline.eval_transformed(pivot, 1, raw),
                    _ => {}
                }
            } else if derivative <= 3 {
                self.bspline.eval_transformed(t, derivative, raw);
            }
            for (j, o) in out.iter_mut().enumerate() {
                *o = (0..m).map(|i| raw[i] * self.projection[i * nb + j]).sum();
            }
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn scenario_ns() -> NaturalSplineBasis {
        NaturalSplineBasis::new(vec![5.0, 10.0], (0.0, 25.0)).unwrap()
    }

    /// Textbook recursive Cox-de Boor definition, independent of the triangular
    /// evaluation used above.
    fn cox_de_boor(i: usize, p: usize, knots: &[f64], x: f64, last: bool) -> f64 {
        if p == 0 {
            let inside = knots[i] <= x && x < knots[i + 1];
            let at_end = last && x == knots[i + 1] && knots[i] < knots[i + 1];
            return f64::from(u8::from(inside || at_end));
        }
        let mut v = 0.0;
        let d1 = knots[i + p] - knots[i];
        if d1 > 0.0 {
            v += (x - knots[i]) / d1 * cox_de_boor(i, p - 1, knots, x, last);
        }
        let d2 = knots[i + p + 1] - knots[i + 1];
        if d2 > 0.0 {
            v += (knots[i + p + 1] - x) / d2 * cox_de_boor(i + 1, p - 1, knots, x, last);
        }
        v
    }

    #[test]
    fn degree_zero_is_interval_indicator() {
        let b = BSplineBasis::new(0, vec![1.0], (0.0, 2.0), true, TimeTransform::Identity).unwrap();
        assert_eq!(b.eval(0.5).unwrap(), vec![1.0, 0.0]);
        assert_eq!(b.eval(1.5).unwrap(), vec![0.0, 1.0]);
        assert_eq!(b.eval(2.0).unwrap(), vec![0.0, 1.0]);
    }

    #[test]
    fn cubic_matches_recursive_definition() {
        let interior = vec![3.0, 6.5, 10.0, 14.0, 19.0];
        let b = BSplineBasis::new(3, interior.clone(), (0.0, 37.5), true, TimeTransform::Identity)
            .unwrap();
        let knots = clamped_knots(3, &interior, (0.0, 37.5));
        for &t in &[0.0, 0.3, 7.0, 10.0, 22.2, 37.5] {
            let v = b.eval(t).unwrap();
            for (i, &vi) in v.iter().enumerate() {
                let oracle = cox_de_boor(i, 3, &knots, t, t == 37.5);
                assert_abs_diff_eq!(vi, oracle, epsilon = 1e-13);
            }
        }
    }

    #[test]
    fn rejects_points_outside_domain() {
        let b = BSplineBasis::new(3, vec![1.0], (0.0, 2.0), true, TimeTransform::Identity).unwrap();
        assert!(b.eval(2.5).is_err());
        let log = BSplineBasis::new(1, vec![], (0.0, 2.0), true, TimeTransform::Log).unwrap();
        assert!(log.eval(1.0).is_ok());
        assert!(log.eval(0.5).is_err());
    }

    #[test]
    fn log_transform_clamps_zero() {
        let lo = LOG_TIME_FLOOR.ln();
        let b = BSplineBasis::new(1, vec![], (lo, 4.0), true, TimeTransform::Log).unwrap();
        assert_eq!(b.eval(0.0).unwrap(), vec![1.0, 0.0]);
    }

    #[test]
    fn bspline_derivative_matches_finite_difference() {
        let b = BSplineBasis::new(3, vec![2.0, 4.0, 7.0], (0.0, 10.0), true, TimeTransform::Identity)
            .unwrap();
        let n = b.n_basis();
        let h = 1e-6;
        for &t in &[0.5, 3.3, 6.0, 9.1] {
            let mut d = vec![0.0; n];
            b.eval_into(t, 1, &mut d).unwrap();
            let (up, dn) = (b.eval(t + h).unwrap(), b.eval(t - h).unwrap());
            for j in 0..n {
                assert_abs_diff_eq!(d[j], (up[j] - dn[j]) / (2.0 * h), epsilon = 1e-7);
            }
        }
    }

    #[test]
    fn quantile_knots_follow_data() {
        let times: Vec<f64> = (1..=100).map(f64::from).collect();
        let b = BSplineBasis::from_quantiles(&times, 9, 3, (0.0, 150.0), TimeTransform::Identity)
            .unwrap();
        assert_eq!(b.n_basis(), 9);
        assert_eq!(b.interior_knots().len(), 5);
        assert_abs_diff_eq!(b.interior_knots()[2], 50.5, epsilon = 1e-12);
    }

    #[test]
    fn natural_spline_is_zero_at_left_boundary() {
        let v = scenario_ns().eval(0.0, 0).unwrap();
        assert_eq!(v.len(), 3);
        for x in v {
            assert_abs_diff_eq!(x, 0.0, epsilon = 1e-15);
        }
    }

    #[test]
    fn natural_spline_second_derivative_vanishes_outside() {
        let ns = scenario_ns();
        for &t in &[-3.0, 25.0, 26.0, 40.0] {
            for x in ns.eval(t, 2).unwrap() {
                assert_abs_diff_eq!(x, 0.0, epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn natural_spline_first_derivative_matches_finite_difference() {
        let ns = scenario_ns();
        let h = 1e-5;
        let d = ns.eval(4.0, 1).unwrap();
        let (up, dn) = (ns.eval(4.0 + h, 0).unwrap(), ns.eval(4.0 - h, 0).unwrap());
        for j in 0..3 {
            assert_abs_diff_eq!(d[j], (up[j] - dn[j]) / (2.0 * h), epsilon = 1e-6);
        }
    }

    #[test]
    fn natural_spline_is_c2_at_knots() {
        let ns = scenario_ns();
        for &k in &[5.0, 10.0] {
            for order in 0..=2 {
                let l = ns.eval(k - 1e-12, order).unwrap();
                let r = ns.eval(k + 1e-12, order).unwrap();
                for j in 0..3 {
                    assert_abs_diff_eq!(l[j], r[j], epsilon = 1e-9);
                }
            }
        }
    }

    #[test]
    fn natural_spline_lies_in_truncated_power_space() {
        // Natural cubic spline space with knots xi_1..xi_K (boundaries included):
        // 1, t, and d_k(t) - d_{K-1}(t) with d_k = ((t-xi_k)^3_+ - (t-xi_K)^3_+)/(xi_K - xi_k).
        let xi = [0.0, 5.0, 10.0, 25.0];
        let kk = xi.len();
        let cube = |x: f64| if x > 0.0 { x * x * x } else { 0.0 };
        let d = |k: usize, t: f64| (cube(t - xi[k]) - cube(t - xi[kk - 1])) / (xi[kk - 1] - xi[k]);
        let tpb = |t: f64| -> Vec<f64> {
            let mut row = vec![1.0, t];
            for k in 0..kk - 2 {
                row.push(d(k, t) - d(kk - 2, t));
            }
            row
        };
        let ns = scenario_ns();
        let grid: Vec<f64> = (0..=60).map(|i| -5.0 + 0.55 * i as f64).collect();
        let a = nalgebra::DMatrix::from_fn(grid.len(), kk, |i, j| tpb(grid[i])[j]);
        for col in 0..3 {
            let y = nalgebra::DVector::from_fn(grid.len(), |i, _| ns.eval(grid[i], 0).unwrap()[col]);
            let coef = a.clone().svd(true, true).solve(&y, 1e-12).unwrap();
            let resid = (&a * coef - &y).amax();
            assert!(resid < 1e-9, "column {col} residual {resid}");
        }
    }
}
