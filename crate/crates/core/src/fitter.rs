//! Metropolis-within-Gibbs sampler for the Gaussian joint model.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use rand::Rng;
use rand_distr::{ChiSquared, Distribution, Gamma, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::data::JointDataset;
use crate::draws::{ParameterDraw, PosteriorDraws, RandomEffectDraws};
use crate::error::{Error, Result};
use crate::model::{BaselineHazardSpec, Model, ModelSpec};
use crate::quadrature::{split_points, GaussLegendre};
use crate::rng::{stream_rng, SimRng};

/// Difference penalty K = Θ_r'Θ_r on P spline coefficients.
#[derive(Debug, Clone, PartialEq)]
pub struct PenaltyMatrix {
    pub order: usize,
    pub k: DMatrix<f64>,
    pub rank: usize,
}

pub fn difference_penalty(p: usize, order: usize) -> Result<PenaltyMatrix> {
    if order == 0 || order >= p {
        return Err(Error::Config(format!(
            "penalty order {order} must satisfy 1 <= order < P = {p}"
        )));
    }
    let mut theta = DMatrix::<f64>::identity(p, p);
    for _ in 0..order {
        let rows = theta.nrows() - 1;
        theta = DMatrix::from_fn(rows, p, |i, j| theta[(i + 1, j)] - theta[(i, j)]);
    }
    Ok(PenaltyMatrix {
        order,
        k: theta.transpose() * &theta,
        rank: p - order,
    })
}

/// (ρ(K)/2) log τ − (τ/2) γ'Kγ.
pub fn log_penalized_prior(gamma_h0: &[f64], tau: f64, penalty: &PenaltyMatrix) -> Result<f64> {
    if !(tau > 0.0 && tau.is_finite()) {
        return Err(Error::Domain(format!("smoothing parameter must be positive, got {tau}")));
    }
    if gamma_h0.len() != penalty.k.nrows() {
        return Err(Error::Config(format!(
            "{} spline coefficients for a {}-dimensional penalty",
            gamma_h0.len(),
            penalty.k.nrows()
        )));
    }
    Ok(0.5 * penalty.rank as f64 * tau.ln() - 0.5 * tau * quad_form(&penalty.k, gamma_h0))
}

fn quad_form(k: &DMatrix<f64>, g: &[f64]) -> f64 {
    let v = DVector::from_column_slice(g);
    (v.transpose() * k * &v)[0]
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum GammaParameterization {
    Rate,
    /// Second parameter is a scale: Gamma(5, 0.05) has mean 0.25, a weak
    /// smoothing prior that lets the baseline follow steep hazards.
    #[default]
    Scale,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PriorConfig {
    pub beta_sd: f64,
    pub gamma_sd: f64,
    pub alpha_sd: f64,
    /// Ridge on the spline coefficients, covering the penalty's null space.
    pub gamma_h0_sd: f64,
    pub sigma2_shape: f64,
    pub sigma2_rate: f64,
    /// Inverse-Wishart degrees of freedom; defaults to dim(b) + 2.
    pub d_df: Option<f64>,
    /// Inverse-Wishart scale matrix is this multiple of the identity.
    pub d_scale: f64,
    pub tau_shape: f64,
    pub tau_second: f64,
    pub tau_parameterization: GammaParameterization,
    pub penalty_order: usize,
}

impl Default for PriorConfig {
    fn default() -> Self {
        PriorConfig {
            beta_sd: 100.0,
            gamma_sd: 100.0,
            alpha_sd: 100.0,
            gamma_h0_sd: 100.0,
            sigma2_shape: 0.01,
            sigma2_rate: 0.01,
            d_df: None,
            d_scale: 1.0,
            tau_shape: 5.0,
            tau_second: 0.05,
            tau_parameterization: GammaParameterization::Scale,
            penalty_order: 2,
        }
    }
}

impl PriorConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("beta_sd", self.beta_sd),
            ("gamma_sd", self.gamma_sd),
            ("alpha_sd", self.alpha_sd),
            ("gamma_h0_sd", self.gamma_h0_sd),
            ("sigma2_shape", self.sigma2_shape),
            ("sigma2_rate", self.sigma2_rate),
            ("d_scale", self.d_scale),
            ("tau_shape", self.tau_shape),
            ("tau_second", self.tau_second),
        ];
        for (name, v) in positive {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::Config(format!("prior parameter {name} must be positive")));
            }
        }
        if self.d_df.is_some_and(|v| !(v.is_finite() && v > 0.0)) {
            return Err(Error::Config("prior parameter d_df must be positive".into()));
        }
        Ok(())
    }

    fn tau_rate(&self) -> f64 {
        match self.tau_parameterization {
            GammaParameterization::Rate => self.tau_second,
            GammaParameterization::Scale => 1.0 / self.tau_second,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct McmcConfig {
    pub n_iter: usize,
    pub burn_in: usize,
    pub thin: usize,
    pub seed: u64,
    /// When false, α is held at 0 and the survival parameters stay at their
    /// initial estimates.
    pub survival: bool,
}

impl Default for McmcConfig {
    fn default() -> Self {
        McmcConfig {
            n_iter: 2000,
            burn_in: 1000,
            thin: 10,
            seed: 1,
            survival: true,
        }
    }
}

impl McmcConfig {
    pub fn validate(&self) -> Result<()> {
        if self.burn_in >= self.n_iter {
            return Err(Error::Config(format!(
                "burn-in exceeds iterations ({} >= {})",
                self.burn_in, self.n_iter
            )));
        }
        if self.thin == 0 {
            return Err(Error::Config("thinning must be at least 1".into()));
        }
        Ok(())
    }
}

/// Acceptance rates after burn-in.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct FitDiagnostics {
    pub random_effects_acceptance: f64,
    pub beta_acceptance: f64,
    pub survival_acceptance: f64,
}

#[derive(Debug, Clone)]
pub struct FitResult {
    pub draws: PosteriorDraws,
    pub diagnostics: FitDiagnostics,
}

/// Quadrature nodes over (0, T_i) and event-time features for one subject.
struct SubjectCache {
    y: DVector<f64>,
    x: DMatrix<f64>,
    z: DMatrix<f64>,
    ztz: DMatrix<f64>,
    w: Vec<f64>,
    event: bool,
    node_weight: Vec<f64>,
    /// Row-major K x P baseline rows, K x p and K x q form rows.
    node_basis: Vec<f64>,
    node_xf: Vec<f64>,
    node_zf: Vec<f64>,
    ev_basis: Vec<f64>,
    ev_xf: Vec<f64>,
    ev_zf: Vec<f64>,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

impl SubjectCache {
    fn n_nodes(&self) -> usize {
        self.node_weight.len()
    }
}

struct State {
    beta: Vec<f64>,
    sigma2: f64,
    d: DMatrix<f64>,
    b: Vec<Vec<f64>>,
    /// Survival block: gamma_h0, gamma, alpha.
    surv: Vec<f64>,
    tau: f64,
}

/// Survival log-likelihood of one subject reduced to a function of b.
struct BTerms {
    q: usize,
    log_weight: Vec<f64>,
    node_z: Vec<f64>,
    event_offset: f64,
    event_z: Vec<f64>,
}

impl BTerms {
    fn loglik(&self, b: &[f64]) -> f64 {
        let q = self.q;
        let cumhaz: f64 = self
            .log_weight
            .iter()
            .enumerate()
            .map(|(k, lw)| (lw + dot(&self.node_z[k * q..(k + 1) * q], b)).exp())
            .sum();
        self.event_offset + dot(&self.event_z, b) - cumhaz
    }
}

/// The integrand is smooth between hazard breakpoints, so the fitter gets by
/// with fewer nodes than the simulation code.
const FIT_QUADRATURE_ORDER: usize = 7;

struct Sampler<'a> {
    priors: &'a PriorConfig,
    subjects: Vec<SubjectCache>,
    n_basis: usize,
    n_gamma: usize,
    p: usize,
    q: usize,
    penalty: PenaltyMatrix,
    xtx: DMatrix<f64>,
    n_obs: usize,
    shift_map: Vec<usize>,
    survival: bool,
    rng: SimRng,
}

fn cholesky(m: DMatrix<f64>, what: &str) -> Result<Cholesky<f64, Dyn>> {
    Cholesky::new(m).ok_or_else(|| Error::Numerical(format!("{what} is not positive definite")))
}

fn mvn_from_chol(rng: &mut SimRng, mean: &DVector<f64>, l: &DMatrix<f64>) -> DVector<f64> {
    let e = DVector::from_fn(mean.len(), |_, _| rng.sample::<f64, _>(StandardNormal));
    mean + l * e
}

/// Draw from N(P⁻¹ r, P⁻¹) given the Cholesky factor of the precision P.
fn mvn_from_precision(rng: &mut SimRng, chol: &Cholesky<f64, Dyn>, rhs: &DVector<f64>) -> DVector<f64> {
    let mean = chol.solve(rhs);
    let e = DVector::from_fn(rhs.len(), |_, _| rng.sample::<f64, _>(StandardNormal));
    // L' x = e gives x ~ N(0, P⁻¹).
    let x = chol
        .l()
        .transpose()
        .solve_upper_triangular(&e)
        .unwrap_or_else(|| DVector::zeros(rhs.len()));
    mean + x
}

impl<'a> Sampler<'a> {
    fn new(model: &'a Model, data: &JointDataset, priors: &'a PriorConfig, cfg: &McmcConfig) -> Result<Self> {
        let basis = match &model.spec().baseline_hazard {
            BaselineHazardSpec::Spline { basis } => basis,
            BaselineHazardSpec::Weibull => {
                return Err(Error::Config(
                    "the fitter needs a B-spline baseline hazard".into(),
                ))
            }
        };
        let dims = model.dims();
        let (p, q) = (dims.n_beta, dims.n_random);
        let n_basis = basis.n_basis();
        let rule = GaussLegendre::new(FIT_QUADRATURE_ORDER);
        let mut subjects = Vec::with_capacity(data.n_subjects());
        let mut xtx = DMatrix::zeros(p, p);
        let mut xr = vec![0.0; p];
        let mut zr = vec![0.0; q];
        let mut br = vec![0.0; n_basis];
        for s in data.subjects() {
            let n = s.times.len();
            let mut x = DMatrix::zeros(n, p);
            let mut z = DMatrix::zeros(n, q);
            for (l, &t) in s.times.iter().enumerate() {
                model.fill_design(&s.covariates, t, 0, &mut xr, &mut zr);
                for j in 0..p {
                    x[(l, j)] = xr[j];
                }
                for j in 0..q {
                    z[(l, j)] = zr[j];
                }
            }
            xtx += x.transpose() * &x;
            let mut c = SubjectCache {
                y: DVector::from_column_slice(&s.values),
                ztz: z.transpose() * &z,
                x,
                z,
                w: model.survival_covariates(&s.covariates),
                event: s.event,
                node_weight: Vec::new(),
                node_basis: Vec::new(),
                node_xf: Vec::new(),
                node_zf: Vec::new(),
                ev_basis: Vec::new(),
                ev_xf: Vec::new(),
                ev_zf: Vec::new(),
            };
            if s.event_time > 0.0 {
                for w in split_points(0.0, s.event_time, model.hazard_breakpoints()).windows(2) {
                    for (t, wt) in rule.mapped(w[0], w[1]) {
                        model.baseline_row(t, &mut br)?;
                        model.fill_form_design(&s.covariates, t, &mut xr, &mut zr);
                        c.node_weight.push(wt);
                        c.node_basis.extend_from_slice(&br);
                        c.node_xf.extend_from_slice(&xr);
                        c.node_zf.extend_from_slice(&zr);
                    }
                }
            }
            if s.event {
                model.baseline_row(s.event_time, &mut br)?;
                model.fill_form_design(&s.covariates, s.event_time, &mut xr, &mut zr);
                c.ev_basis = br.clone();
                c.ev_xf = xr.clone();
                c.ev_zf = zr.clone();
            }
            subjects.push(c);
        }
        if cholesky(xtx.clone(), "X'X").is_err() {
            return Err(Error::Data(
                "fixed-effects design is rank deficient (collinear columns)".into(),
            ));
        }
        Ok(Sampler {
            priors,
            n_obs: data.n_measurements(),
            subjects,
            n_basis,
            n_gamma: dims.n_gamma,
            p,
            q,
            penalty: difference_penalty(n_basis, priors.penalty_order)?,
            xtx,
            shift_map: model.random_to_fixed(),
            survival: cfg.survival,
            rng: stream_rng(cfg.seed, &[0xF17]),
        })
    }

    fn split_surv<'s>(&self, surv: &'s [f64]) -> (&'s [f64], &'s [f64], f64) {
        let (g, rest) = surv.split_at(self.n_basis);
        let (gamma, alpha) = rest.split_at(self.n_gamma);
        (g, gamma, alpha.first().copied().unwrap_or(0.0))
    }

    /// Functional-form values at the nodes and at the event time.
    fn form_values(&self, i: usize, beta: &[f64], b: &[f64]) -> (Vec<f64>, f64) {
        let c = &self.subjects[i];
        let (p, q) = (self.p, self.q);
        let f = (0..c.n_nodes())
            .map(|k| dot(&c.node_xf[k * p..(k + 1) * p], beta) + dot(&c.node_zf[k * q..(k + 1) * q], b))
            .collect();
        let fe = if c.event { dot(&c.ev_xf, beta) + dot(&c.ev_zf, b) } else { 0.0 };
        (f, fe)
    }

    /// Survival log-likelihood contribution of subject `i`.
    fn surv_loglik(&self, i: usize, surv: &[f64], f: &[f64], fe: f64) -> f64 {
        let c = &self.subjects[i];
        let (g, gamma, alpha) = self.split_surv(surv);
        let pb = self.n_basis;
        let cov = dot(&c.w, gamma);
        let mut ll = 0.0;
        if c.event {
            ll += dot(&c.ev_basis, g) + cov + alpha * fe;
        }
        for k in 0..c.n_nodes() {
            ll -= c.node_weight[k] * (dot(&c.node_basis[k * pb..(k + 1) * pb], g) + cov + alpha * f[k]).exp();
        }
        ll
    }

    /// Log prior of the survival block (without the τ-dependent normalizer).
    fn surv_log_prior(&self, surv: &[f64], tau: f64) -> f64 {
        let (g, gamma, alpha) = self.split_surv(surv);
        let pr = self.priors;
        -0.5 * tau * quad_form(&self.penalty.k, g)
            - 0.5 * dot(g, g) / (pr.gamma_h0_sd * pr.gamma_h0_sd)
            - 0.5 * dot(gamma, gamma) / (pr.gamma_sd * pr.gamma_sd)
            - 0.5 * alpha * alpha / (pr.alpha_sd * pr.alpha_sd)
    }

    /// Gradient and negative Hessian of the survival-block log posterior.
    fn surv_grad_hess(&self, surv: &[f64], tau: f64, forms: &[(Vec<f64>, f64)]) -> (DVector<f64>, DMatrix<f64>) {
        let dim = surv.len();
        let pb = self.n_basis;
        let (g, gamma, alpha) = self.split_surv(surv);
        let mut grad = DVector::zeros(dim);
        let mut neg_h = DMatrix::zeros(dim, dim);
        let mut phi = vec![0.0; dim];
        let with_alpha = dim > pb + self.n_gamma;
        for (i, c) in self.subjects.iter().enumerate() {
            let (f, fe) = &forms[i];
            let cov = dot(&c.w, gamma);
            phi[pb..pb + self.n_gamma].copy_from_slice(&c.w);
            if c.event {
                phi[..pb].copy_from_slice(&c.ev_basis);
                if with_alpha {
                    phi[dim - 1] = *fe;
                }
                for j in 0..dim {
                    grad[j] += phi[j];
                }
            }
            for k in 0..c.n_nodes() {
                let row = &c.node_basis[k * pb..(k + 1) * pb];
                let e = c.node_weight[k] * (dot(row, g) + cov + alpha * f[k]).exp();
                phi[..pb].copy_from_slice(row);
                if with_alpha {
                    phi[dim - 1] = f[k];
                }
                for a in 0..dim {
                    grad[a] -= e * phi[a];
                    let ea = e * phi[a];
                    for bb in 0..=a {
                        neg_h[(a, bb)] += ea * phi[bb];
                    }
                }
            }
        }
        for a in 0..dim {
            for bb in 0..a {
                neg_h[(bb, a)] = neg_h[(a, bb)];
            }
        }
        let pr = self.priors;
        let kg = &self.penalty.k * DVector::from_column_slice(g);
        for j in 0..pb {
            grad[j] -= tau * kg[j] + g[j] / (pr.gamma_h0_sd * pr.gamma_h0_sd);
            for l in 0..pb {
                neg_h[(j, l)] += tau * self.penalty.k[(j, l)];
            }
            neg_h[(j, j)] += 1.0 / (pr.gamma_h0_sd * pr.gamma_h0_sd);
        }
        for j in pb..pb + self.n_gamma {
            grad[j] -= surv[j] / (pr.gamma_sd * pr.gamma_sd);
            neg_h[(j, j)] += 1.0 / (pr.gamma_sd * pr.gamma_sd);
        }
        if with_alpha {
            grad[dim - 1] -= alpha / (pr.alpha_sd * pr.alpha_sd);
            neg_h[(dim - 1, dim - 1)] += 1.0 / (pr.alpha_sd * pr.alpha_sd);
        }
        (grad, neg_h)
    }

    fn surv_log_post(&self, surv: &[f64], tau: f64, forms: &[(Vec<f64>, f64)]) -> f64 {
        let ll: f64 = forms
            .iter()
            .enumerate()
            .map(|(i, (f, fe))| self.surv_loglik(i, surv, f, *fe))
            .sum();
        ll + self.surv_log_prior(surv, tau)
    }

    /// Damped Newton iterations towards the conditional mode of the survival block.
    fn surv_newton(&self, surv: &mut Vec<f64>, tau: f64, forms: &[(Vec<f64>, f64)]) -> Result<()> {
        let mut current = self.surv_log_post(surv, tau, forms);
        for _ in 0..100 {
            let (grad, neg_h) = self.surv_grad_hess(surv, tau, forms);
            let chol = cholesky(neg_h, "survival information matrix")?;
            let step = chol.solve(&grad);
            let mut t = 1.0;
            let mut improved = false;
            for _ in 0..40 {
                let cand: Vec<f64> = surv.iter().zip(step.iter()).map(|(s, d)| s + t * d).collect();
                let v = self.surv_log_post(&cand, tau, forms);
                if v.is_finite() && v >= current - 1e-10 {
                    *surv = cand;
                    current = v;
                    improved = true;
                    break;
                }
                t *= 0.5;
            }
            if !improved || t * step.norm() < 1e-9 {
                break;
            }
        }
        if current.is_finite() {
            Ok(())
        } else {
            Err(Error::Numerical("survival initialization diverged".into()))
        }
    }

    fn residual(&self, i: usize, beta: &DVector<f64>) -> DVector<f64> {
        let c = &self.subjects[i];
        &c.y - &c.x * beta
    }

    /// Survival terms of subject `i` as a function of b alone.
    fn b_terms(&self, i: usize, surv: &[f64], beta: &[f64]) -> BTerms {
        let c = &self.subjects[i];
        let (g, gamma, alpha) = self.split_surv(surv);
        let (p, q, pb) = (self.p, self.q, self.n_basis);
        let cov = dot(&c.w, gamma);
        let log_weight = (0..c.n_nodes())
            .map(|k| {
                c.node_weight[k].ln()
                    + dot(&c.node_basis[k * pb..(k + 1) * pb], g)
                    + cov
                    + alpha * dot(&c.node_xf[k * p..(k + 1) * p], beta)
            })
            .collect();
        let node_z = c.node_zf.iter().map(|v| alpha * v).collect();
        let (event_offset, event_z) = if c.event {
            (
                dot(&c.ev_basis, g) + cov + alpha * dot(&c.ev_xf, beta),
                c.ev_zf.iter().map(|v| alpha * v).collect(),
            )
        } else {
            (0.0, vec![0.0; q])
        };
        BTerms { q, log_weight, node_z, event_offset, event_z }
    }

    fn sample_b(&mut self, st: &mut State, d_inv: &DMatrix<f64>, b_scale: &mut [f64], accepted: &mut usize) -> Result<()> {
        let beta_v = DVector::from_column_slice(&st.beta);
        let q = self.q;
        let mut rng = std::mem::replace(&mut self.rng, stream_rng(0, &[]));
        for i in 0..self.subjects.len() {
            let c = &self.subjects[i];
            let prec = &c.ztz / st.sigma2 + d_inv;
            let chol = cholesky(prec, "random-effects precision")?;
            let rhs = c.z.transpose() * self.residual(i, &beta_v) / st.sigma2;
            let mean = chol.solve(&rhs);
            let cov_l = cholesky(chol.inverse(), "random-effects covariance")?.l();
            let proposal = mvn_from_chol(&mut rng, &mean, &cov_l);
            if !self.survival {
                st.b[i] = proposal.iter().copied().collect();
                *accepted += 1;
                continue;
            }
            let cur_b = st.b[i].clone();
            let prop: Vec<f64> = proposal.iter().copied().collect();
            let terms = self.b_terms(i, &st.surv, &st.beta);
            let cur_ll = terms.loglik(&cur_b);
            let prop_ll = terms.loglik(&prop);
            // Independence proposal from the Gaussian part: only the survival terms remain.
            let (mut cur, mut cur_ll) = (cur_b, cur_ll);
            if rng.random::<f64>().ln() < prop_ll - cur_ll {
                cur = prop;
                cur_ll = prop_ll;
                *accepted += 1;
            }
            // Random-walk step on the full conditional.
            let gauss = |b: &[f64]| {
                let d = DVector::from_column_slice(b) - &mean;
                -0.5 * (d.transpose() * chol.l() * chol.l().transpose() * &d)[0]
            };
            let scale = 2.38 / (q as f64).sqrt() * b_scale[i];
            let step = mvn_from_chol(&mut rng, &DVector::zeros(q), &cov_l);
            let rw: Vec<f64> = cur.iter().zip(step.iter()).map(|(a, s)| a + scale * s).collect();
            let rw_ll = terms.loglik(&rw);
            let log_ratio = rw_ll + gauss(&rw) - cur_ll - gauss(&cur);
            if rng.random::<f64>().ln() < log_ratio {
                cur = rw;
            }
            st.b[i] = cur;
        }
        self.rng = rng;
        Ok(())
    }

    fn total_surv_loglik(&self, st: &State, beta: &[f64]) -> f64 {
        (0..self.subjects.len())
            .map(|i| {
                let (f, fe) = self.form_values(i, beta, &st.b[i]);
                self.surv_loglik(i, &st.surv, &f, fe)
            })
            .sum()
    }

    fn sample_beta(&mut self, st: &mut State, accepted: &mut usize) -> Result<()> {
        let p = self.p;
        let prec = &self.xtx / st.sigma2
            + DMatrix::identity(p, p) / (self.priors.beta_sd * self.priors.beta_sd);
        let mut rhs = DVector::zeros(p);
        for (i, c) in self.subjects.iter().enumerate() {
            let zb = &c.z * DVector::from_column_slice(&st.b[i]);
            rhs += c.x.transpose() * (&c.y - zb);
        }
        rhs /= st.sigma2;
        let chol = cholesky(prec, "fixed-effects precision")?;
        let proposal: Vec<f64> = mvn_from_precision(&mut self.rng, &chol, &rhs).iter().copied().collect();
        if !self.survival {
            st.beta = proposal;
            *accepted += 1;
            return Ok(());
        }
        let log_ratio = self.total_surv_loglik(st, &proposal) - self.total_surv_loglik(st, &st.beta);
        if self.rng.random::<f64>().ln() < log_ratio {
            st.beta = proposal;
            *accepted += 1;
        }
        Ok(())
    }

    /// Moves β and every b_i in opposite directions along the shared design
    /// columns; η is unchanged, so the conditional of the shift is Gaussian.
    fn shift_move(&mut self, st: &mut State, d_inv: &DMatrix<f64>) -> Result<()> {
        let q = self.q;
        let n = self.subjects.len() as f64;
        let s2 = self.priors.beta_sd * self.priors.beta_sd;
        let prec = d_inv * n + DMatrix::identity(q, q) / s2;
        let mut sum_b = DVector::zeros(q);
        for b in &st.b {
            sum_b += DVector::from_column_slice(b);
        }
        let beta_j = DVector::from_iterator(q, self.shift_map.iter().map(|&j| st.beta[j]));
        let rhs = d_inv * sum_b - beta_j / s2;
        let chol = cholesky(prec, "shift precision")?;
        let delta = mvn_from_precision(&mut self.rng, &chol, &rhs);
        for (r, &j) in self.shift_map.iter().enumerate() {
            st.beta[j] += delta[r];
        }
        for b in st.b.iter_mut() {
            for r in 0..q {
                b[r] -= delta[r];
            }
        }
        Ok(())
    }

    fn sample_sigma2(&mut self, st: &mut State) -> Result<()> {
        let beta_v = DVector::from_column_slice(&st.beta);
        let ssr: f64 = (0..self.subjects.len())
            .map(|i| {
                let c = &self.subjects[i];
                (self.residual(i, &beta_v) - &c.z * DVector::from_column_slice(&st.b[i])).norm_squared()
            })
            .sum();
        let shape = self.priors.sigma2_shape + 0.5 * self.n_obs as f64;
        let rate = self.priors.sigma2_rate + 0.5 * ssr;
        let g = Gamma::new(shape, 1.0 / rate).map_err(|e| Error::Numerical(e.to_string()))?;
        st.sigma2 = 1.0 / g.sample(&mut self.rng);
        Ok(())
    }

    fn sample_d(&mut self, st: &mut State) -> Result<()> {
        let q = self.q;
        let nu0 = self.priors.d_df.unwrap_or(q as f64 + 2.0);
        let mut psi = DMatrix::identity(q, q) * self.priors.d_scale;
        for b in &st.b {
            let v = DVector::from_column_slice(b);
            psi += &v * v.transpose();
        }
        let nu = nu0 + self.subjects.len() as f64;
        // Bartlett decomposition of W ~ Wishart(nu, psi⁻¹); D = W⁻¹.
        let l = cholesky(cholesky(psi, "inverse-Wishart scale")?.inverse(), "Wishart scale")?.l();
        let mut a = DMatrix::zeros(q, q);
        for j in 0..q {
            let chi = ChiSquared::new(nu - j as f64).map_err(|e| Error::Numerical(e.to_string()))?;
            a[(j, j)] = chi.sample(&mut self.rng).sqrt();
            for i in j + 1..q {
                a[(i, j)] = self.rng.sample::<f64, _>(StandardNormal);
            }
        }
        let la = l * a;
        let w = &la * la.transpose();
        let d = cholesky(w, "Wishart draw")?.inverse();
        st.d = (&d + d.transpose()) * 0.5;
        Ok(())
    }

    fn sample_tau(&mut self, st: &mut State) -> Result<()> {
        let (g, _, _) = self.split_surv(&st.surv);
        let shape = self.priors.tau_shape + 0.5 * self.penalty.rank as f64;
        let rate = self.priors.tau_rate() + 0.5 * quad_form(&self.penalty.k, g);
        let dist = Gamma::new(shape, 1.0 / rate).map_err(|e| Error::Numerical(e.to_string()))?;
        st.tau = dist.sample(&mut self.rng);
        Ok(())
    }

    fn all_forms(&self, st: &State) -> Vec<(Vec<f64>, f64)> {
        (0..self.subjects.len())
            .map(|i| self.form_values(i, &st.beta, &st.b[i]))
            .collect()
    }

    fn initialize(&mut self) -> Result<State> {
        let (p, q) = (self.p, self.q);
        let mut xty = DVector::zeros(p);
        for c in &self.subjects {
            xty += c.x.transpose() * &c.y;
        }
        let beta = cholesky(&self.xtx + DMatrix::identity(p, p) * 1e-10, "X'X")?.solve(&xty);
        let beta_v: Vec<f64> = beta.iter().copied().collect();
        let ssr: f64 = (0..self.subjects.len())
            .map(|i| self.residual(i, &beta).norm_squared())
            .sum();
        let var = (ssr / self.n_obs.max(1) as f64).max(1e-8);
        let n_surv = self.n_basis + self.n_gamma + usize::from(self.survival);
        let mut st = State {
            beta: beta_v,
            sigma2: var,
            d: DMatrix::identity(q, q) * var,
            b: vec![vec![0.0; q]; self.subjects.len()],
            surv: vec![0.0; n_surv],
            tau: self.priors.tau_shape / self.priors.tau_rate(),
        };
        // Longitudinal-only warm-up.
        let saved = self.survival;
        self.survival = false;
        let mut scratch = vec![1.0; self.subjects.len()];
        let mut count = 0;
        for _ in 0..60 {
            let d_inv = cholesky(st.d.clone(), "D")?.inverse();
            self.sample_b(&mut st, &d_inv, &mut scratch, &mut count)?;
            self.sample_beta(&mut st, &mut count)?;
            let d_inv = cholesky(st.d.clone(), "D")?.inverse();
            self.shift_move(&mut st, &d_inv)?;
            self.sample_sigma2(&mut st)?;
            self.sample_d(&mut st)?;
        }
        self.survival = saved;
        let (n_events, exposure) = self
            .subjects
            .iter()
            .fold((0.0, 0.0), |(e, t), c| (e + f64::from(u8::from(c.event)), t + c.node_weight.iter().sum::<f64>()));
        let level = ((n_events + 0.5) / exposure.max(1e-8)).ln();
        for g in st.surv[..self.n_basis].iter_mut() {
            *g = level;
        }
        let forms = self.all_forms(&st);
        self.surv_newton(&mut st.surv, st.tau, &forms)?;
        Ok(st)
    }

    fn run(&mut self, cfg: &McmcConfig, ids: &[String]) -> Result<FitResult> {
        let mut st = self.initialize()?;
        let n = self.subjects.len();
        let q = self.q;
        let dim = st.surv.len();
        let mut b_scale = vec![1.0; n];
        let mut surv_log_scale = 0.0f64;
        let forms = self.all_forms(&st);
        let mut surv_chol = cholesky(self.surv_grad_hess(&st.surv, st.tau, &forms).1, "survival information")?
            .inverse();
        let mut surv_l = cholesky(surv_chol.clone(), "survival proposal")?.l();
        let (mut acc_b, mut acc_beta, mut acc_s, mut tries_s) = (0usize, 0usize, 0usize, 0usize);
        let mut draws = Vec::new();
        let mut ranef = Vec::new();
        const SURV_STEPS: usize = 3;
        for iter in 0..cfg.n_iter {
            let in_burn = iter < cfg.burn_in;
            let d_inv = cholesky(st.d.clone(), "D")?.inverse();
            let mut ab = 0;
            self.sample_b(&mut st, &d_inv, &mut b_scale, &mut ab)?;
            let mut abeta = 0;
            self.sample_beta(&mut st, &mut abeta)?;
            self.shift_move(&mut st, &d_inv)?;
            self.sample_sigma2(&mut st)?;
            self.sample_d(&mut st)?;
            if self.survival {
                let forms = self.all_forms(&st);
                if in_burn && iter > 0 && iter % 100 == 0 {
                    let neg_h = self.surv_grad_hess(&st.surv, st.tau, &forms).1;
                    if let Some(c) = Cholesky::new(neg_h) {
                        surv_chol = c.inverse();
                        if let Some(l) = Cholesky::new(surv_chol.clone()) {
                            surv_l = l.l();
                        }
                    }
                }
                let mut current = self.surv_log_post(&st.surv, st.tau, &forms);
                let mut acc_here = 0;
                for _ in 0..SURV_STEPS {
                    let scale = 2.38 / (dim as f64).sqrt() * surv_log_scale.exp();
                    let step = mvn_from_chol(&mut self.rng, &DVector::zeros(dim), &surv_l);
                    let cand: Vec<f64> = st.surv.iter().zip(step.iter()).map(|(s, d)| s + scale * d).collect();
                    let v = self.surv_log_post(&cand, st.tau, &forms);
                    let accept = v.is_finite() && self.rng.random::<f64>().ln() < v - current;
                    if accept {
                        st.surv = cand;
                        current = v;
                        acc_here += 1;
                    }
                    if in_burn {
                        let gain = 1.0 / ((iter + 1) as f64).powf(0.6);
                        surv_log_scale += gain * (f64::from(u8::from(accept)) - 0.234);
                    }
                }
                self.sample_tau(&mut st)?;
                if !current.is_finite() {
                    return Err(Error::Sampler(format!(
                        "chain diverged at iteration {iter}: non-finite survival log posterior"
                    )));
                }
                if !in_burn {
                    acc_s += acc_here;
                    tries_s += SURV_STEPS;
                }
            }
            if !(st.sigma2.is_finite() && st.sigma2 > 0.0)
                || st.beta.iter().any(|v| !v.is_finite())
                || st.b.iter().flatten().any(|v| !v.is_finite())
            {
                return Err(Error::Sampler(format!(
                    "chain diverged at iteration {iter}: non-finite longitudinal parameters"
                )));
            }
            if !in_burn {
                acc_b += ab;
                acc_beta += abeta;
                if (iter - cfg.burn_in).is_multiple_of(cfg.thin) {
                    let (g, gamma, alpha) = self.split_surv(&st.surv);
                    draws.push(ParameterDraw {
                        beta: st.beta.clone(),
                        sigma: st.sigma2.sqrt(),
                        gamma: gamma.to_vec(),
                        alpha: vec![alpha],
                        gamma_h0: g.to_vec(),
                        d: (0..q * q).map(|k| st.d[(k / q, k % q)]).collect(),
                        tau: Some(st.tau),
                    });
                    ranef.push(st.b.clone());
                }
            }
        }
        let kept = (cfg.n_iter - cfg.burn_in) as f64;
        Ok(FitResult {
            draws: PosteriorDraws {
                draws,
                random_effects: Some(RandomEffectDraws {
                    subject_ids: ids.to_vec(),
                    values: ranef,
                }),
            },
            diagnostics: FitDiagnostics {
                random_effects_acceptance: acc_b as f64 / (kept * n as f64),
                beta_acceptance: acc_beta as f64 / kept,
                survival_acceptance: if tries_s > 0 { acc_s as f64 / tries_s as f64 } else { 0.0 },
            },
        })
    }
}

/// Data on the scale the model describes (after the outcome transform).
pub fn model_scale_data(data: &JointDataset, spec: &ModelSpec) -> Result<JointDataset> {
    let transform = spec.outcome_transform;
    data.map_values(|y| transform.apply(y))
}

/// Fits the joint model to `data` (observed scale) and returns draws with random effects.
pub fn fit_joint_model(
    data: &JointDataset,
    spec: &ModelSpec,
    priors: &PriorConfig,
    mcmc: &McmcConfig,
) -> Result<PosteriorDraws> {
    fit_joint_model_detailed(data, spec, priors, mcmc).map(|r| r.draws)
}

pub fn fit_joint_model_detailed(
    data: &JointDataset,
    spec: &ModelSpec,
    priors: &PriorConfig,
    mcmc: &McmcConfig,
) -> Result<FitResult> {
    mcmc.validate()?;
    priors.validate()?;
    let scaled = model_scale_data(data, spec)?;
    let model = Model::new(spec.clone(), scaled.covariate_names())?;
    let ids: Vec<String> = scaled.subjects().iter().map(|s| s.id.clone()).collect();
    let mut sampler = Sampler::new(&model, &scaled, priors, mcmc)?;
    sampler.run(mcmc, &ids)
}
