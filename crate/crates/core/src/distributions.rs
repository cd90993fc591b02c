//! Zero-inflated Poisson and negative binomial laws and the two link functions.
//!
//! Both mixtures put mass `π` on a structural zero and `1 − π` on the count
//! law. The zero branch is always formed in log space so small `π` with a
//! large mean does not underflow.

use rand::Rng;
use rand_distr::{Distribution, Gamma, Poisson};

use crate::error::{contract, Result};
use crate::math::{exp, ln, ln_gamma, log_add_exp, logistic};

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct ZipParams {
    mu: f64,
    pi: f64,
}

impl ZipParams {
    pub fn new(mu: f64, pi: f64) -> Result<Self> {
        if !(mu.is_finite() && mu > 0.0) {
            return Err(contract!("ZIP mean must be positive and finite, got {mu}"));
        }
        if !(0.0..1.0).contains(&pi) {
            return Err(contract!("zero-inflation probability must lie in [0, 1), got {pi}"));
        }
        Ok(Self { mu, pi })
    }

    pub fn mu(&self) -> f64 {
        self.mu
    }

    pub fn pi(&self) -> f64 {
        self.pi
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct ZinbParams {
    mu: f64,
    nu: f64,
    pi: f64,
}

impl ZinbParams {
    pub fn new(mu: f64, nu: f64, pi: f64) -> Result<Self> {
        ZipParams::new(mu, pi)?;
        if !(nu.is_finite() && nu > 0.0) {
            return Err(contract!("dispersion must be positive and finite, got {nu}"));
        }
        Ok(Self { mu, nu, pi })
    }

    pub fn mu(&self) -> f64 {
        self.mu
    }

    pub fn nu(&self) -> f64 {
        self.nu
    }

    pub fn pi(&self) -> f64 {
        self.pi
    }
}

/// Either mixture family.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ZiParams {
    Zip(ZipParams),
    Zinb(ZinbParams),
}

impl ZiParams {
    pub fn log_pmf(&self, k: u64) -> f64 {
        match self {
            ZiParams::Zip(p) => zip_logpmf(k, p),
            ZiParams::Zinb(p) => zinb_logpmf(k, p),
        }
    }

    pub fn mean(&self) -> f64 {
        zi_mean(self)
    }
}

impl From<ZipParams> for ZiParams {
    fn from(p: ZipParams) -> Self {
        ZiParams::Zip(p)
    }
}

impl From<ZinbParams> for ZiParams {
    fn from(p: ZinbParams) -> Self {
        ZiParams::Zinb(p)
    }
}

/// `ln k!`
pub(crate) fn ln_factorial(k: u64) -> f64 {
    ln_gamma(k as f64 + 1.0)
}

/// Poisson log-pmf with the factorial term supplied by the caller.
pub(crate) fn poisson_log_kernel(k: u64, log_mu: f64, mu: f64, ln_k_fact: f64) -> f64 {
    if k == 0 {
        -mu
    } else {
        k as f64 * log_mu - mu - ln_k_fact
    }
}

/// Negative binomial log-pmf in the mean/dispersion parameterization.
pub(crate) fn negbin_log_kernel(k: u64, log_mu: f64, nu: f64, ln_k_fact: f64) -> f64 {
    let log_nu = ln(nu);
    let log_mu_nu = log_add_exp(log_mu, log_nu);
    if k == 0 {
        return nu * (log_nu - log_mu_nu);
    }
    let kf = k as f64;
    ln_gamma(kf + nu) - ln_gamma(nu) - ln_k_fact + nu * log_nu + kf * log_mu
        - (kf + nu) * log_mu_nu
}

/// Mixes a count log-pmf with a structural zero of probability `pi`.
pub(crate) fn inflate(k: u64, count_log_pmf: f64, pi: f64) -> f64 {
    if pi == 0.0 {
        return count_log_pmf;
    }
    let log_keep = libm::log1p(-pi);
    if k == 0 {
        log_add_exp(ln(pi), log_keep + count_log_pmf)
    } else {
        log_keep + count_log_pmf
    }
}

pub fn zip_logpmf(k: u64, p: &ZipParams) -> f64 {
    let count = poisson_log_kernel(k, ln(p.mu), p.mu, ln_factorial(k));
    inflate(k, count, p.pi)
}

pub fn zinb_logpmf(k: u64, p: &ZinbParams) -> f64 {
    let count = negbin_log_kernel(k, ln(p.mu), p.nu, ln_factorial(k));
    inflate(k, count, p.pi)
}

/// Mixture mean `(1 − π) μ`.
pub fn zi_mean(p: &ZiParams) -> f64 {
    match p {
        ZiParams::Zip(p) => (1.0 - p.pi) * p.mu,
        ZiParams::Zinb(p) => (1.0 - p.pi) * p.mu,
    }
}

/// One draw: a structural zero with probability `π`, otherwise a Poisson or
/// a gamma–Poisson (negative binomial) count.
pub fn zi_sample<R: Rng + ?Sized>(p: &ZiParams, rng: &mut R) -> u64 {
    let (mu, pi, nu) = match p {
        ZiParams::Zip(p) => (p.mu, p.pi, None),
        ZiParams::Zinb(p) => (p.mu, p.pi, Some(p.nu)),
    };
    if rng.random::<f64>() < pi {
        return 0;
    }
    let rate = match nu {
        None => mu,
        Some(nu) => Gamma::new(nu, mu / nu)
            .expect("validated gamma parameters")
            .sample(rng),
    };
    if rate <= 0.0 {
        return 0;
    }
    let draw: f64 = Poisson::new(rate.min(1e15))
        .expect("validated Poisson rate")
        .sample(rng);
    draw as u64
}

/// Inverse log link, saturating at `f64::MAX`.
pub fn link_log_inv(eta: f64) -> f64 {
    let v = exp(eta);
    if v.is_infinite() {
        f64::MAX
    } else {
        v
    }
}

/// Inverse logit link.
pub fn link_logit_inv(eta: f64) -> f64 {
    logistic(eta)
}
