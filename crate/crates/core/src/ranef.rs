//! Random-effects draws: from the prior N(0, D) and from the conditional
//! posterior given a subject's data up to a landmark.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::data::SubjectRecord;
use crate::draws::ParameterDraw;
use crate::error::{Error, Result};
use crate::model::Model;
use crate::quadrature::{split_points, GaussLegendre};

const LN_2PI: f64 = 1.837_877_066_409_345_5;

/// Samples N(0, D) through the Cholesky factor of D.
#[derive(Debug, Clone)]
pub struct PriorSampler {
    chol: DMatrix<f64>,
}

impl PriorSampler {
    /// `index` identifies the draw in error messages.
    pub fn new(draw: &ParameterDraw, index: usize) -> Result<Self> {
        Ok(PriorSampler {
            chol: draw.d_cholesky(index)?.l(),
        })
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        let q = self.chol.nrows();
        let z = DVector::from_fn(q, |_, _| rng.sample::<f64, _>(StandardNormal));
        (&self.chol * z).iter().copied().collect()
    }
}

pub fn sample_prior_random_effects<R: Rng + ?Sized>(
    draw: &ParameterDraw,
    index: usize,
    rng: &mut R,
) -> Result<Vec<f64>> {
    Ok(PriorSampler::new(draw, index)?.sample(rng))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MhConfig {
    pub n_iterations: usize,
    pub burn_in: usize,
    pub thinning: usize,
    /// Multiplier on the initial proposal covariance.
    pub proposal_scale: f64,
    pub adapt: bool,
    pub target_acceptance: f64,
}

impl Default for MhConfig {
    fn default() -> Self {
        MhConfig {
            n_iterations: 1500,
            burn_in: 500,
            thinning: 5,
            proposal_scale: 1.0,
            adapt: true,
            target_acceptance: 0.234,
        }
    }
}

impl MhConfig {
    pub fn validate(&self) -> Result<()> {
        if self.burn_in >= self.n_iterations {
            return Err(Error::Config(format!(
                "MH burn-in ({}) must be below the iteration count ({})",
                self.burn_in, self.n_iterations
            )));
        }
        if self.thinning == 0 {
            return Err(Error::Config("MH thinning must be at least 1".into()));
        }
        if !(self.proposal_scale.is_finite() && self.proposal_scale > 0.0) {
            return Err(Error::Config("MH proposal scale must be positive".into()));
        }
        if !(self.target_acceptance > 0.0 && self.target_acceptance < 1.0) {
            return Err(Error::Config("MH target acceptance must lie in (0, 1)".into()));
        }
        Ok(())
    }
}

/// Log density (up to a constant) of b given the subject's measurements up to
/// `t_l`, survival beyond `t_l` and, when `event` is set, an event at `t_l`.
///
/// The hazard is linear in b on the log scale, so the quadrature nodes over
/// (0, t_l) are reduced once to offsets and random-effects rows.
#[derive(Debug, Clone)]
pub struct ConditionalTarget {
    q: usize,
    /// Residuals y - Xβ.
    resid: DVector<f64>,
    z: DMatrix<f64>,
    sigma: f64,
    d_inv: DMatrix<f64>,
    log_det_d: f64,
    /// Quadrature weight times exp(offset), and α z_f per node.
    node_weight: Vec<f64>,
    node_z: Vec<Vec<f64>>,
    /// Offset and α z_f at t_l when conditioning on an event.
    event_term: Option<(f64, Vec<f64>)>,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

impl ConditionalTarget {
    pub fn new(
        model: &Model,
        draw: &ParameterDraw,
        draw_index: usize,
        subject: &SubjectRecord,
        t_l: f64,
        event: bool,
    ) -> Result<Self> {
        if !(t_l >= 0.0 && t_l.is_finite()) {
            return Err(Error::Domain(format!("landmark must be finite and nonnegative, got {t_l}")));
        }
        if subject.times.iter().any(|&t| t > t_l) {
            return Err(Error::Data(format!(
                "subject '{}': measurements after the landmark {t_l}",
                subject.id
            )));
        }
        let dims = model.dims();
        let (p, q) = (dims.n_beta, dims.n_random);
        let n = subject.times.len();
        let mut x = vec![0.0; p];
        let mut zrow = vec![0.0; q];
        let mut z = DMatrix::zeros(n, q);
        let mut resid = DVector::zeros(n);
        for (l, (&t, &y)) in subject.times.iter().zip(&subject.values).enumerate() {
            model.fill_design(&subject.covariates, t, 0, &mut x, &mut zrow);
            resid[l] = y - dot(&x, &draw.beta);
            for j in 0..q {
                z[(l, j)] = zrow[j];
            }
        }
        let chol = draw.d_cholesky(draw_index)?;
        let log_det_d = 2.0 * chol.l().diagonal().iter().map(|v| v.ln()).sum::<f64>();
        let d_inv = chol.inverse();
        let alpha = draw.alpha[0];
        let covariate_effect = dot(&model.survival_covariates(&subject.covariates), &draw.gamma);
        let offset = |s: f64, x: &mut [f64], z: &mut [f64]| -> Result<f64> {
            model.fill_form_design(&subject.covariates, s, x, z);
            Ok(model.log_baseline_hazard(&draw.gamma_h0, s)?
                + covariate_effect
                + alpha * dot(x, &draw.beta))
        };
        let mut node_weight = Vec::new();
        let mut node_z = Vec::new();
        if t_l > 0.0 {
            let rule = GaussLegendre::standard();
            for w in split_points(0.0, t_l, model.hazard_breakpoints()).windows(2) {
                for (s, wt) in rule.mapped(w[0], w[1]) {
                    let a = offset(s, &mut x, &mut zrow)?;
                    node_weight.push(wt * a.exp());
                    node_z.push(zrow.iter().map(|v| alpha * v).collect());
                }
            }
        }
        let event_term = if event {
            let a = offset(t_l, &mut x, &mut zrow)?;
            Some((a, zrow.iter().map(|v| alpha * v).collect()))
        } else {
            None
        };
        Ok(ConditionalTarget {
            q,
            resid,
            z,
            sigma: draw.sigma,
            d_inv,
            log_det_d,
            node_weight,
            node_z,
            event_term,
        })
    }

    pub fn dim(&self) -> usize {
        self.q
    }

    /// Log target at b; non-finite values map to -inf.
    pub fn log_density(&self, b: &[f64]) -> f64 {
        let bv = DVector::from_column_slice(b);
        let n = self.resid.len() as f64;
        let e = &self.resid - &self.z * &bv;
        let loglik =
            -0.5 * e.norm_squared() / (self.sigma * self.sigma) - n * self.sigma.ln() - 0.5 * n * LN_2PI;
        let cumhaz: f64 = self
            .node_weight
            .iter()
            .zip(&self.node_z)
            .map(|(w, zr)| w * dot(zr, b).exp())
            .sum();
        let event = self.event_term.as_ref().map_or(0.0, |(a, zr)| a + dot(zr, b));
        let prior = -0.5 * (bv.transpose() * &self.d_inv * &bv)[0]
            - 0.5 * self.log_det_d
            - 0.5 * self.q as f64 * LN_2PI;
        let v = loglik - cumhaz + event + prior;
        if v.is_finite() {
            v
        } else {
            f64::NEG_INFINITY
        }
    }

    /// Mean and covariance of the Gaussian part (longitudinal likelihood times prior).
    pub fn gaussian_moments(&self) -> (DVector<f64>, DMatrix<f64>) {
        let s2 = self.sigma * self.sigma;
        let precision = self.z.transpose() * &self.z / s2 + &self.d_inv;
        let cov = precision
            .clone()
            .cholesky()
            .map(|c| c.inverse())
            .unwrap_or_else(|| precision.try_inverse().unwrap_or_else(|| DMatrix::identity(self.q, self.q)));
        let mean = &cov * (self.z.transpose() * &self.resid) / s2;
        (mean, cov)
    }
}

#[derive(Debug, Clone)]
pub struct MhOutput {
    pub draws: Vec<Vec<f64>>,
    /// Acceptance rate after burn-in.
    pub acceptance_rate: f64,
    pub final_scale: f64,
}

/// Random-walk Metropolis-Hastings with a multivariate normal proposal.
///
/// The proposal covariance starts at (2.38²/q)·V, V the covariance of the
/// Gaussian part of the target, and its scale follows Robbins-Monro updates
/// during burn-in when `config.adapt` is set.
pub fn mh_sample_conditional<R: Rng + ?Sized>(
    target: &ConditionalTarget,
    config: &MhConfig,
    rng: &mut R,
) -> Result<MhOutput> {
    config.validate()?;
    let q = target.dim();
    let (mean, cov) = target.gaussian_moments();
    let chol = cov
        .cholesky()
        .ok_or_else(|| Error::Sampler("proposal covariance is not positive definite".into()))?
        .l();
    let base = 2.38 / (q as f64).sqrt();
    let mut log_scale = config.proposal_scale.ln();
    let mut current: Vec<f64> = mean.iter().copied().collect();
    let mut current_lp = target.log_density(&current);
    if !current_lp.is_finite() {
        current = vec![0.0; q];
        current_lp = target.log_density(&current);
    }
    let mut burn_accepted = 0usize;
    let mut accepted = 0usize;
    let mut draws = Vec::with_capacity((config.n_iterations - config.burn_in) / config.thinning);
    let mut proposal = vec![0.0; q];
    for iter in 0..config.n_iterations {
        let scale = base * log_scale.exp();
        let eps = DVector::from_fn(q, |_, _| rng.sample::<f64, _>(StandardNormal));
        let step = &chol * eps;
        for j in 0..q {
            proposal[j] = current[j] + scale * step[j];
        }
        let lp = target.log_density(&proposal);
        let log_u: f64 = rng.random::<f64>().ln();
        let accept = lp.is_finite() && log_u < lp - current_lp;
        if accept {
            current.copy_from_slice(&proposal);
            current_lp = lp;
        }
        if iter < config.burn_in {
            burn_accepted += usize::from(accept);
            if config.adapt {
                let gain = 1.0 / ((iter + 1) as f64).powf(0.6);
                log_scale += gain * (f64::from(u8::from(accept)) - config.target_acceptance);
            }
            if iter + 1 == config.burn_in && burn_accepted == 0 {
                return Err(Error::Sampler(
                    "no proposal accepted during burn-in; decrease the proposal scale".into(),
                ));
            }
        } else {
            accepted += usize::from(accept);
            if (iter + 1 - config.burn_in).is_multiple_of(config.thinning) {
                draws.push(current.clone());
            }
        }
    }
    Ok(MhOutput {
        draws,
        acceptance_rate: accepted as f64 / (config.n_iterations - config.burn_in) as f64,
        final_scale: log_scale.exp(),
    })
}
