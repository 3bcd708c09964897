//! Exact discrepancy computation on enumerable supports.
//!
//! When both densities can be evaluated pointwise over every sequence up to
//! the length bound, total variation and the approximate discrepancy have
//! closed forms. Estimators elsewhere in the crate are validated against
//! these values.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;

use super::kahan_sum;
use crate::corpus::{enumerate_all_seqs, GroundTruthSource, TokenSeq, Vocab};
use crate::{Error, Result};

/// Anything that assigns an exact probability to a full sequence.
pub trait Density {
    fn prob(&self, x: &TokenSeq) -> Result<f64>;
}

impl Density for GroundTruthSource {
    fn prob(&self, x: &TokenSeq) -> Result<f64> {
        self.exact_prob(x)
    }
}

/// A pair of densities tabulated over one shared support.
#[derive(Debug, Clone)]
pub struct OracleDensities {
    support: Vec<TokenSeq>,
    p_d: Vec<f64>,
    p_theta: Vec<f64>,
}

impl OracleDensities {
    /// Both densities must be non-negative and sum to one over the support
    /// within 1e-6.
    pub fn new(support: Vec<TokenSeq>, p_d: Vec<f64>, p_theta: Vec<f64>) -> Result<OracleDensities> {
        if support.is_empty() {
            return Err(Error::Param("oracle support must be non-empty".into()));
        }
        if support.len() != p_d.len() || support.len() != p_theta.len() {
            return Err(Error::Param(format!(
                "support has {} points but densities have {} and {}",
                support.len(),
                p_d.len(),
                p_theta.len()
            )));
        }
        for (name, dens) in [("real", &p_d), ("model", &p_theta)] {
            if let Some(bad) = dens.iter().find(|v| !(**v >= 0.0) || !v.is_finite()) {
                return Err(Error::NonFinite(format!("{name} density value {bad}")));
            }
            let total = kahan_sum(dens.iter().copied());
            if (total - 1.0).abs() > 1e-6 {
                return Err(Error::Structural(format!(
                    "{name} density sums to {total}, expected 1 within 1e-6"
                )));
            }
        }
        Ok(OracleDensities { support, p_d, p_theta })
    }

    /// Tabulates two densities over every sequence up to `l_max` for the
    /// given vocabulary, failing on more than `cap` sequences.
    pub fn from_pair(
        vocab: &Vocab,
        l_max: usize,
        real: &dyn Density,
        model: &dyn Density,
        cap: usize,
    ) -> Result<OracleDensities> {
        let support = enumerate_all_seqs(vocab.content_size(), l_max, cap)?;
        let mut p_d = Vec::with_capacity(support.len());
        let mut p_theta = Vec::with_capacity(support.len());
        for x in &support {
            p_d.push(real.prob(x)?);
            p_theta.push(model.prob(x)?);
        }
        OracleDensities::new(support, p_d, p_theta)
    }

    pub fn support(&self) -> &[TokenSeq] {
        &self.support
    }

    pub fn p_d(&self) -> &[f64] {
        &self.p_d
    }

    pub fn p_theta(&self) -> &[f64] {
        &self.p_theta
    }

    pub fn len(&self) -> usize {
        self.support.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// Total variation distance: half the summed absolute density gap.
    pub fn tv_exact(&self) -> f64 {
        0.5 * kahan_sum(
            self.p_d
                .iter()
                .zip(&self.p_theta)
                .map(|(pd, pt)| (pd - pt).abs()),
        )
    }

    /// Expectation of the optimal score gap under the real density:
    /// the exact value the mean-score statistic estimates.
    pub fn da_exact(&self) -> f64 {
        kahan_sum(self.p_d.iter().zip(&self.p_theta).map(|(&pd, &pt)| {
            let denom = pd + pt;
            if denom == 0.0 {
                // Zero real mass contributes nothing regardless of scores.
                0.0
            } else {
                let q_d = pd / denom;
                let q_theta = pt / denom;
                pd * (q_d - q_theta)
            }
        }))
    }

    /// Means of the optimal score under each density: `(u_d, u_θ)`.
    pub fn exact_expectations(&self) -> (f64, f64) {
        let score = |pd: f64, pt: f64| if pd + pt == 0.0 { 0.0 } else { pd / (pd + pt) };
        let u_d = kahan_sum(
            self.p_d
                .iter()
                .zip(&self.p_theta)
                .map(|(&pd, &pt)| pd * score(pd, pt)),
        );
        let u_theta = kahan_sum(
            self.p_d
                .iter()
                .zip(&self.p_theta)
                .map(|(&pd, &pt)| pt * score(pd, pt)),
        );
        (u_d, u_theta)
    }

    /// Classify by the optimal score against `threshold` and return the
    /// exact `(d_s, accuracy)` of that classifier under balanced sampling.
    pub fn exact_threshold_stats(&self, threshold: f64) -> Result<(f64, f64)> {
        if !(threshold > 0.0 && threshold < 1.0) {
            return Err(Error::Param(format!("threshold {threshold} outside (0, 1)")));
        }
        let real_correct = kahan_sum(self.p_d.iter().zip(&self.p_theta).map(|(&pd, &pt)| {
            if pd + pt > 0.0 && pd / (pd + pt) > threshold {
                pd
            } else {
                0.0
            }
        }));
        let gen_correct = kahan_sum(self.p_d.iter().zip(&self.p_theta).map(|(&pd, &pt)| {
            if pd + pt == 0.0 || pd / (pd + pt) <= threshold {
                pt
            } else {
                0.0
            }
        }));
        let accuracy = 0.5 * (real_correct + gen_correct);
        Ok((2.0 * accuracy - 1.0, accuracy))
    }
}

/// Monte Carlo estimate of the thresholded discrepancy using exact optimal
/// scores: samples `n` sequences per side and classifies each at one half.
/// Converges to [`OracleDensities::tv_exact`] at rate `1/sqrt(n)`.
pub fn ds_estimate(oracle: &OracleDensities, n: usize, seed: u64) -> Result<f64> {
    if n < 100 {
        return Err(Error::Param(format!(
            "monte carlo estimate needs n >= 100, got {n}"
        )));
    }
    let cum = |dens: &[f64]| -> Vec<f64> {
        let mut acc = 0.0;
        dens.iter()
            .map(|v| {
                acc += v;
                acc
            })
            .collect()
    };
    let cum_d = cum(&oracle.p_d);
    let cum_t = cum(&oracle.p_theta);
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    let mut draw = |cum: &[f64]| -> usize {
        let u = rng.random::<f64>() * cum[cum.len() - 1];
        cum.partition_point(|&c| c <= u).min(cum.len() - 1)
    };
    let mut correct = 0usize;
    for _ in 0..n {
        let i = draw(&cum_d);
        let (pd, pt) = (oracle.p_d[i], oracle.p_theta[i]);
        if pd / (pd + pt) > 0.5 {
            correct += 1;
        }
    }
    for _ in 0..n {
        let i = draw(&cum_t);
        let (pd, pt) = (oracle.p_d[i], oracle.p_theta[i]);
        if pd / (pd + pt) <= 0.5 {
            correct += 1;
        }
    }
    let accuracy = correct as f64 / (2 * n) as f64;
    Ok(2.0 * accuracy - 1.0)
}
