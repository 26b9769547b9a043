//! Local polynomial regression with tricube weights.
//!
//! For small samples every prediction is an exact local fit. Above
//! [`INTERPOLATE_ABOVE`] points the fit is computed exactly at a grid of
//! vertices and interpolated (cubic Hermite with slopes differenced from the
//! vertex values, linear on leverages), which is how large pooled samples
//! stay cheap.

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const INTERPOLATE_ABOVE: usize = 1500;
/// Vertices per unit of 1/span: a span-f smoother varies on a scale of f·range,
/// so the vertex spacing is kept a fixed fraction of it.
const VERTICES_PER_INVERSE_SPAN: f64 = 40.0;
const MAX_VERTICES: usize = 401;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LoessConfig {
    pub span: f64,
    pub degree: usize,
    pub robustness_iterations: usize,
}

impl Default for LoessConfig {
    fn default() -> Self {
        LoessConfig {
            span: 0.75,
            degree: 2,
            robustness_iterations: 0,
        }
    }
}

impl LoessConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.span > 0.0 && self.span <= 1.0) {
            return Err(Error::Config(format!("loess span must lie in (0, 1], got {}", self.span)));
        }
        if !(1..=2).contains(&self.degree) {
            return Err(Error::Config(format!("loess degree must be 1 or 2, got {}", self.degree)));
        }
        Ok(())
    }

    /// Neighbourhood size for `n` points.
    pub fn neighbours(&self, n: usize) -> usize {
        ((self.span * n as f64).floor() as usize).min(n)
    }
}

/// Local fit at one target: value, slope and self-influence.
#[derive(Debug, Clone, Copy)]
struct LocalFit {
    value: f64,
    slope: f64,
    leverage: f64,
}

#[derive(Debug, Clone)]
struct Surface {
    vertices: Vec<f64>,
    fits: Vec<LocalFit>,
}

#[derive(Debug, Clone)]
pub struct LoessFit {
    config: LoessConfig,
    /// Training data sorted by x, with the permutation back to input order.
    x: Vec<f64>,
    y: Vec<f64>,
    order: Vec<usize>,
    robustness: Vec<f64>,
    surface: Option<Surface>,
    fitted: Vec<f64>,
    df: f64,
}

fn tricube(u: f64) -> f64 {
    if u >= 1.0 {
        0.0
    } else {
        let a = 1.0 - u * u * u;
        a * a * a
    }
}

impl LoessFit {
    fn local(&self, x0: f64, lo_hint: &mut usize) -> LocalFit {
        local_fit(&self.x, &self.y, &self.robustness, &self.config, x0, lo_hint)
    }

    fn surface_eval(&self, s: &Surface, x0: f64) -> LocalFit {
        let v = &s.vertices;
        let k = v.partition_point(|&p| p <= x0).clamp(1, v.len() - 1) - 1;
        let (a, b) = (v[k], v[k + 1]);
        let (fa, fb) = (s.fits[k], s.fits[k + 1]);
        let h = b - a;
        let t = (x0 - a) / h;
        if !(0.0..=1.0).contains(&t) {
            // Outside the vertex range: linear extrapolation from the end vertex.
            let f = if t < 0.0 { fa } else { fb };
            let base = if t < 0.0 { a } else { b };
            return LocalFit {
                value: f.value + f.slope * (x0 - base),
                slope: f.slope,
                leverage: f.leverage,
            };
        }
        let (t2, t3) = (t * t, t * t * t);
        let h00 = 2.0 * t3 - 3.0 * t2 + 1.0;
        let h10 = t3 - 2.0 * t2 + t;
        let h01 = -2.0 * t3 + 3.0 * t2;
        let h11 = t3 - t2;
        LocalFit {
            value: h00 * fa.value + h10 * h * fa.slope + h01 * fb.value + h11 * h * fb.slope,
            slope: fa.slope + t * (fb.slope - fa.slope),
            leverage: fa.leverage + t * (fb.leverage - fa.leverage),
        }
    }

    fn eval(&self, x0: f64, lo_hint: &mut usize) -> LocalFit {
        match &self.surface {
            Some(s) => self.surface_eval(s, x0),
            None => self.local(x0, lo_hint),
        }
    }

    /// Fitted values at `xs` (any order).
    pub fn predict(&self, xs: &[f64]) -> Vec<f64> {
        let mut idx: Vec<usize> = (0..xs.len()).collect();
        idx.sort_by(|&a, &b| xs[a].total_cmp(&xs[b]));
        let mut out = vec![0.0; xs.len()];
        let mut hint = 0;
        for i in idx {
            out[i] = self.eval(xs[i], &mut hint).value;
        }
        out
    }

    /// Fitted values at the training points, in input order.
    pub fn fitted(&self) -> &[f64] {
        &self.fitted
    }

    pub fn residuals(&self) -> Vec<f64> {
        let mut r = vec![0.0; self.x.len()];
        for (k, &i) in self.order.iter().enumerate() {
            r[i] = self.y[k] - self.fitted[i];
        }
        r
    }

    /// Effective degrees of freedom: trace of the smoother matrix.
    pub fn df(&self) -> f64 {
        self.df
    }

    pub fn n(&self) -> usize {
        self.x.len()
    }

    pub fn config(&self) -> &LoessConfig {
        &self.config
    }

    fn refit(&mut self) {
        let n = self.x.len();
        self.surface = if n > INTERPOLATE_ABOVE {
            let (a, b) = (self.x[0], self.x[n - 1]);
            let nv = ((VERTICES_PER_INVERSE_SPAN / self.config.span).ceil() as usize + 1).clamp(21, MAX_VERTICES);
            let vertices: Vec<f64> = (0..nv)
                .map(|k| a + (b - a) * k as f64 / (nv - 1) as f64)
                .collect();
            let mut hint = 0;
            let mut fits: Vec<LocalFit> = vertices.iter().map(|&v| self.local(v, &mut hint)).collect();
            // Vertex slopes from the fitted values (three-point differences)
            // track the smoothed curve better than the local-polynomial slopes.
            let values: Vec<f64> = fits.iter().map(|f| f.value).collect();
            let step = vertices[1] - vertices[0];
            let m = values.len();
            for (k, f) in fits.iter_mut().enumerate() {
                f.slope = if k == 0 {
                    (-3.0 * values[0] + 4.0 * values[1] - values[2]) / (2.0 * step)
                } else if k == m - 1 {
                    (3.0 * values[m - 1] - 4.0 * values[m - 2] + values[m - 3]) / (2.0 * step)
                } else {
                    (values[k + 1] - values[k - 1]) / (2.0 * step)
                };
            }
            Some(Surface { vertices, fits })
        } else {
            None
        };
        let mut hint = 0;
        let mut fitted = vec![0.0; n];
        let mut df = 0.0;
        for k in 0..n {
            let f = self.eval(self.x[k], &mut hint);
            fitted[self.order[k]] = f.value;
            df += f.leverage * self.robustness[k];
        }
        self.fitted = fitted;
        self.df = df;
    }
}

/// Weighted local polynomial fit at `x0` over the sorted data.
fn local_fit(x: &[f64], y: &[f64], rob: &[f64], cfg: &LoessConfig, x0: f64, lo: &mut usize) -> LocalFit {
    let n = x.len();
    let q = cfg.neighbours(n).max(1);
    // The q nearest points form a contiguous window; slide it to x0.
    let mut start = (*lo).min(n - q);
    while start > 0 && x0 - x[start - 1] < x[start + q - 1] - x0 {
        start -= 1;
    }
    while start + q < n && x[start + q] - x0 < x0 - x[start] {
        start += 1;
    }
    *lo = start;
    let d_q = (x0 - x[start]).max(x[start + q - 1] - x0);
    let mut h = d_q;
    if q < n {
        let left = if start > 0 { x0 - x[start - 1] } else { f64::INFINITY };
        let right = if start + q < n { x[start + q] - x0 } else { f64::INFINITY };
        h = 0.5 * (d_q + left.min(right));
    }
    if h <= 0.0 {
        h = f64::MIN_POSITIVE;
    }
    // Points outside the window lie at distance ≥ h and get zero weight, but
    // ties at the window edge may extend it.
    let mut a = start;
    while a > 0 && (x0 - x[a - 1]) < h {
        a -= 1;
    }
    let mut b = start + q;
    while b < n && (x[b] - x0) < h {
        b += 1;
    }
    let deg = cfg.degree;
    let mut s = [0.0f64; 5];
    let mut t = [0.0f64; 3];
    for k in a..b {
        let u = (x[k] - x0) / h;
        let w = tricube(u.abs()) * rob[k];
        if w == 0.0 {
            continue;
        }
        let mut p = w;
        for (j, sj) in s.iter_mut().enumerate().take(2 * deg + 1) {
            *sj += p;
            if j <= deg {
                t[j] += p * y[k];
            }
            p *= u;
        }
    }
    for d in (0..=deg).rev() {
        if let Some(fit) = solve_local(&s, &t, d) {
            return LocalFit {
                value: fit.0,
                slope: fit.1 / h,
                leverage: fit.2,
            };
        }
    }
    LocalFit {
        value: f64::NAN,
        slope: 0.0,
        leverage: 0.0,
    }
}

/// Solves the normal equations of degree `d`; returns (intercept, slope, (M⁻¹)₀₀).
fn solve_local(s: &[f64; 5], t: &[f64; 3], d: usize) -> Option<(f64, f64, f64)> {
    let m = d + 1;
    let mut mat = Matrix3::identity();
    let mut rhs = Vector3::zeros();
    for i in 0..m {
        for j in 0..m {
            mat[(i, j)] = s[i + j];
        }
        rhs[i] = t[i];
    }
    if s[0] <= 0.0 {
        return None;
    }
    // Relative conditioning guard: the centred, scaled moments are O(1).
    let chol = mat.cholesky()?;
    let diag_min = (0..m).map(|i| chol.l()[(i, i)]).fold(f64::INFINITY, f64::min);
    if diag_min * diag_min < 1e-10 * s[0] {
        return None;
    }
    let coef = chol.solve(&rhs);
    let inv = chol.inverse();
    Some((coef[0], if m > 1 { coef[1] } else { 0.0 }, inv[(0, 0)]))
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

pub fn loess_fit(x: &[f64], y: &[f64], config: &LoessConfig) -> Result<LoessFit> {
    config.validate()?;
    if x.len() != y.len() {
        return Err(Error::Data(format!("loess: {} x values but {} y values", x.len(), y.len())));
    }
    if x.iter().chain(y).any(|v| !v.is_finite()) {
        return Err(Error::Data("loess: non-finite input".into()));
    }
    let n = x.len();
    let q = config.neighbours(n);
    if q < config.degree + 1 {
        return Err(Error::Data(format!(
            "loess: span {} with {n} points leaves {q} neighbours, need at least {}",
            config.span,
            config.degree + 1
        )));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| x[a].total_cmp(&x[b]));
    let xs: Vec<f64> = order.iter().map(|&i| x[i]).collect();
    if xs[0] == xs[n - 1] {
        return Err(Error::Data("loess: all x values are equal".into()));
    }
    let ys: Vec<f64> = order.iter().map(|&i| y[i]).collect();
    let mut fit = LoessFit {
        config: *config,
        x: xs,
        y: ys,
        order,
        robustness: vec![1.0; n],
        surface: None,
        fitted: Vec::new(),
        df: 0.0,
    };
    fit.refit();
    for _ in 0..config.robustness_iterations {
        let resid: Vec<f64> = (0..n).map(|k| fit.y[k] - fit.fitted[fit.order[k]]).collect();
        let scale = 6.0 * median(resid.iter().map(|r| r.abs()).collect());
        if scale <= 0.0 {
            break;
        }
        fit.robustness = resid
            .iter()
            .map(|r| {
                let u = r / scale;
                if u.abs() < 1.0 {
                    (1.0 - u * u).powi(2)
                } else {
                    0.0
                }
            })
            .collect();
        fit.refit();
    }
    Ok(fit)
}
