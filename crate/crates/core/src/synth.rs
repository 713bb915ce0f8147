//! Seeded random portfolio instances.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::portfolio::{build_model, naive_wealth, NaivePortfolio, PortfolioModel};

#[derive(Debug, Clone, PartialEq)]
pub struct SynthConfig {
    pub seed: u64,
    pub n_assets: usize,
    pub periods: usize,
    /// Covariance spectra are log-uniform on `[eig_min, eig_max]`.
    pub eig_min: f64,
    pub eig_max: f64,
    /// Expected returns are uniform on `[ret_low, ret_high)`.
    pub ret_low: f64,
    pub ret_high: f64,
    pub xi_ini: f64,
    pub tau1: f64,
    pub tau2: f64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            n_assets: 4,
            periods: 3,
            eig_min: 1e-4,
            eig_max: 1e-1,
            ret_low: 0.0,
            ret_high: 0.02,
            xi_ini: 1.0,
            tau1: 1e-2,
            tau2: 1e-2,
        }
    }
}

impl SynthConfig {
    fn validate(&self) -> Result<()> {
        if self.n_assets == 0 || self.periods == 0 {
            return Err(Error::InvalidConfig("n_assets and periods must be positive".into()));
        }
        if !(self.eig_min > 0.0 && self.eig_min <= self.eig_max && self.eig_max.is_finite()) {
            return Err(Error::InvalidConfig(format!(
                "need 0 < eig_min <= eig_max (got {}, {})",
                self.eig_min, self.eig_max
            )));
        }
        if !(self.ret_low > -1.0 && self.ret_low <= self.ret_high && self.ret_high.is_finite()) {
            return Err(Error::InvalidConfig(format!(
                "need -1 < ret_low <= ret_high (got {}, {})",
                self.ret_low, self.ret_high
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct SynthInstance {
    pub model: PortfolioModel,
    pub naive: NaivePortfolio,
}

/// `QᵀΛQ` with `Q` the orthogonal factor of a Gaussian matrix.
pub fn random_spd(rng: &mut impl Rng, n: usize, eig_min: f64, eig_max: f64) -> DMatrix<f64> {
    let g = DMatrix::from_fn(n, n, |_, _| rng.sample::<f64, _>(StandardNormal));
    let q = g.qr().q();
    let (lo, hi) = (eig_min.ln(), eig_max.ln());
    let lambda = DVector::from_fn(n, |_, _| if lo == hi { eig_min } else { rng.random_range(lo..hi).exp() });
    let mut c = q.transpose() * DMatrix::from_diagonal(&lambda) * &q;
    // exact symmetry
    let ct = c.transpose();
    c = (c + ct) * 0.5;
    c
}

/// A portfolio instance whose target wealth equals the naive final wealth.
pub fn generate(cfg: &SynthConfig) -> Result<SynthInstance> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut c_blocks = Vec::with_capacity(cfg.periods);
    let mut r = Vec::with_capacity(cfg.periods);
    for _ in 0..cfg.periods {
        c_blocks.push(random_spd(&mut rng, cfg.n_assets, cfg.eig_min, cfg.eig_max));
        r.push(DVector::from_fn(cfg.n_assets, |_, _| {
            if cfg.ret_low == cfg.ret_high {
                cfg.ret_low
            } else {
                rng.random_range(cfg.ret_low..cfg.ret_high)
            }
        }));
    }
    let naive = naive_wealth(&r, cfg.n_assets, cfg.xi_ini);
    let model = build_model(&c_blocks, &r, cfg.xi_ini, naive.xi_naive, cfg.tau1, cfg.tau2)?;
    Ok(SynthInstance { model, naive })
}
