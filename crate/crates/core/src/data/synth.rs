use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{DkajError, Result};
use crate::survival::{Cohort, SubjectRecord};

/// Exponential competing-risks generator: `X ~ N(0, I_p)`, latent event times
/// `T_delta ~ Exp(exp(w_delta . x))`, exponential censoring tuned to a target
/// censoring fraction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthConfig {
    pub n: usize,
    pub p: usize,
    /// One weight vector of length `p` per event type.
    pub weights: Vec<Vec<f64>>,
    /// Target fraction of censored records, in `[0, 1)`.
    pub censoring_rate: f64,
    pub seed: u64,
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        if self.p == 0 {
            return Err(DkajError::InvalidConfig("p must be at least 1".into()));
        }
        if self.n == 0 {
            return Err(DkajError::InvalidConfig("n must be at least 1".into()));
        }
        if self.weights.is_empty() {
            return Err(DkajError::InvalidConfig(
                "weights must list at least one event type".into(),
            ));
        }
        if let Some(w) = self.weights.iter().find(|w| w.len() != self.p) {
            return Err(DkajError::InvalidConfig(format!(
                "weight vector has length {}, expected p = {}",
                w.len(),
                self.p
            )));
        }
        if self.weights.iter().flatten().any(|v| !v.is_finite()) {
            return Err(DkajError::InvalidConfig("weights must be finite".into()));
        }
        if !(0.0..1.0).contains(&self.censoring_rate) {
            return Err(DkajError::InvalidConfig(
                "censoring_rate must lie in [0, 1)".into(),
            ));
        }
        Ok(())
    }

    pub fn num_events(&self) -> usize {
        self.weights.len()
    }

    /// Event rates `exp(w_delta . x)`.
    pub fn rates(&self, x: &[f64]) -> Vec<f64> {
        self.weights
            .iter()
            .map(|w| w.iter().zip(x).map(|(a, b)| a * b).sum::<f64>().exp())
            .collect()
    }
}

/// Censoring rate `c` with `mean_i c / (c + Lambda_i) = target`, by bisection
/// on `log c`.
fn censoring_hazard(total_rates: &[f64], target: f64) -> f64 {
    let frac =
        |c: f64| total_rates.iter().map(|&l| c / (c + l)).sum::<f64>() / total_rates.len() as f64;
    let (mut lo, mut hi) = (-60.0f64, 60.0f64);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if frac(mid.exp()) < target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    (0.5 * (lo + hi)).exp()
}

/// Draws a cohort; event codes are `1..=weights.len()`.
pub fn generate_synthetic(cfg: &SynthConfig) -> Result<Cohort<f64>> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let xs: Vec<Vec<f64>> = (0..cfg.n)
        .map(|_| {
            (0..cfg.p)
                .map(|_| StandardNormal.sample(&mut rng))
                .collect()
        })
        .collect();
    let rates: Vec<Vec<f64>> = xs.iter().map(|x| cfg.rates(x)).collect();
    let totals: Vec<f64> = rates.iter().map(|r| r.iter().sum()).collect();
    let censor_rate =
        (cfg.censoring_rate > 0.0).then(|| censoring_hazard(&totals, cfg.censoring_rate));
    let unit = Exp::new(1.0).expect("unit rate");
    let records = xs
        .into_iter()
        .zip(&rates)
        .map(|(x, r)| {
            let (mut time, mut event) = (f64::INFINITY, 0);
            for (d, &lambda) in r.iter().enumerate() {
                let t = unit.sample(&mut rng) / lambda;
                if t < time {
                    time = t;
                    event = d + 1;
                }
            }
            if let Some(c) = censor_rate {
                let ct = unit.sample(&mut rng) / c;
                if ct < time {
                    time = ct;
                    event = 0;
                }
            }
            SubjectRecord::new(x, time, event)
        })
        .collect();
    Cohort::new(records, cfg.num_events())
}

/// Exact `F_delta(t | x) = lambda_delta / Lambda * (1 - exp(-Lambda t))`.
pub fn oracle_cif(cfg: &SynthConfig, x: &[f64], delta: usize, t: f64) -> f64 {
    let rates = cfg.rates(x);
    let total: f64 = rates.iter().sum();
    rates[delta - 1] / total * (1.0 - (-total * t.max(0.0)).exp())
}
