//! Discrepancy statistics between real and generated sequence samples.
//!
//! A trained discriminator scores samples from both sides; these functions
//! turn the scores into the approximate discrepancy `d_a` (difference of
//! mean scores) and the absolute discrepancy `d_s` (a thresholded accuracy
//! statistic that estimates total variation), with bootstrap uncertainty.
//! The [`oracle`] submodule computes the same quantities exactly on
//! enumerable supports for validation.

pub mod oracle;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;

use crate::{Error, Result};

/// Compensated summation; the enumeration oracles and mean statistics must
/// not depend on accumulation order at the 1e-12 tolerances used in tests.
pub fn kahan_sum<I: IntoIterator<Item = f64>>(values: I) -> f64 {
    let mut sum = 0.0;
    let mut c = 0.0;
    for v in values {
        let y = v - c;
        let t = sum + y;
        c = (t - sum) - y;
        sum = t;
    }
    sum
}

/// Discriminator scores for a real-side and a generated-side sample.
#[derive(Debug, Clone)]
pub struct ScoreSet {
    real: Vec<f64>,
    generated: Vec<f64>,
}

impl ScoreSet {
    /// Validates that both sides are non-empty and every score lies in
    /// `[0, 1]`. The closed interval is deliberate: a saturated sigmoid
    /// rounds to exactly 0 or 1 in f64.
    pub fn new(real: Vec<f64>, generated: Vec<f64>) -> Result<ScoreSet> {
        if real.is_empty() || generated.is_empty() {
            return Err(Error::Param("score set needs samples on both sides".into()));
        }
        for (side, scores) in [("real", &real), ("generated", &generated)] {
            if let Some(bad) = scores.iter().find(|s| !(0.0..=1.0).contains(*s)) {
                return Err(Error::Param(format!("{side} score {bad} outside [0, 1]")));
            }
        }
        Ok(ScoreSet { real, generated })
    }

    pub fn real(&self) -> &[f64] {
        &self.real
    }

    pub fn generated(&self) -> &[f64] {
        &self.generated
    }

    pub fn is_balanced(&self) -> bool {
        self.real.len() == self.generated.len()
    }
}

/// The optimal discriminator value at one point: `p_d / (p_d + p_θ)`.
pub fn optimal_d(p_d_val: f64, p_theta_val: f64) -> Result<f64> {
    if !(p_d_val >= 0.0) || !(p_theta_val >= 0.0) {
        return Err(Error::Param(format!(
            "densities must be non-negative, got ({p_d_val}, {p_theta_val})"
        )));
    }
    let denom = p_d_val + p_theta_val;
    if denom == 0.0 {
        return Err(Error::Param(
            "optimal discriminator is undefined where both densities vanish".into(),
        ));
    }
    Ok(p_d_val / denom)
}

fn mean(scores: &[f64]) -> f64 {
    kahan_sum(scores.iter().copied()) / scores.len() as f64
}

/// Mean score per side and their difference: `(u_d, u_θ, d_a)`.
///
/// `d_a` is the literal subtraction `u_d - u_θ`, so identical score
/// multisets yield exactly zero.
pub fn approx_discrepancy(scores: &ScoreSet) -> (f64, f64, f64) {
    let u_d = mean(&scores.real);
    let u_theta = mean(&scores.generated);
    (u_d, u_theta, u_d - u_theta)
}

/// Thresholded discrepancy and classifier accuracy: `(d_s, accuracy)`.
///
/// A sample counts as classified real when its score is strictly above the
/// threshold; ties go to the generated class. On balanced sides `d_s` is
/// computed as `2 * accuracy - 1`, making that identity exact in f64; on
/// unbalanced sides it falls back to the four-fraction form.
pub fn abs_discrepancy(scores: &ScoreSet, threshold: f64) -> Result<(f64, f64)> {
    if !(threshold > 0.0 && threshold < 1.0) {
        return Err(Error::Param(format!("threshold {threshold} outside (0, 1)")));
    }
    let real_hi = scores.real.iter().filter(|&&s| s > threshold).count();
    let gen_lo = scores.generated.iter().filter(|&&s| s <= threshold).count();
    let n_real = scores.real.len();
    let n_gen = scores.generated.len();
    let accuracy = (real_hi + gen_lo) as f64 / (n_real + n_gen) as f64;
    let d_s = if n_real == n_gen {
        2.0 * accuracy - 1.0
    } else {
        let fr_hi = real_hi as f64 / n_real as f64;
        let fg_lo = gen_lo as f64 / n_gen as f64;
        0.5 * ((fr_hi - (1.0 - fr_hi)) + (fg_lo - (1.0 - fg_lo)))
    };
    Ok((d_s, accuracy))
}

/// How far the mean of `u_d` and `u_θ` sits from one half.
///
/// A converged discriminator satisfies `(u_d + u_θ) / 2 = 0.5`; the
/// residual is a convergence diagnostic.
pub fn constraint_residual(scores: &ScoreSet) -> f64 {
    let (u_d, u_theta, _) = approx_discrepancy(scores);
    ((u_d + u_theta) / 2.0 - 0.5).abs()
}

/// Statistic targeted by [`bootstrap_ci`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum BootstrapStat {
    /// The approximate discrepancy `d_a`.
    Da,
    /// The absolute discrepancy `d_s` at the given threshold.
    Ds { threshold: f64 },
}

/// 95% percentile bootstrap interval, resampling each side independently.
pub fn bootstrap_ci(
    scores: &ScoreSet,
    stat: BootstrapStat,
    resamples: usize,
    seed: u64,
) -> Result<(f64, f64)> {
    if resamples < 200 {
        return Err(Error::Param(format!(
            "bootstrap needs at least 200 resamples, got {resamples}"
        )));
    }
    if let BootstrapStat::Ds { threshold } = stat {
        if !(threshold > 0.0 && threshold < 1.0) {
            return Err(Error::Param(format!("threshold {threshold} outside (0, 1)")));
        }
    }
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    let mut draws = Vec::with_capacity(resamples);
    let mut real = vec![0.0; scores.real.len()];
    let mut generated = vec![0.0; scores.generated.len()];
    for _ in 0..resamples {
        for slot in real.iter_mut() {
            *slot = scores.real[rng.random_range(0..scores.real.len())];
        }
        for slot in generated.iter_mut() {
            *slot = scores.generated[rng.random_range(0..scores.generated.len())];
        }
        let resampled = ScoreSet { real: real.clone(), generated: generated.clone() };
        let value = match stat {
            BootstrapStat::Da => approx_discrepancy(&resampled).2,
            BootstrapStat::Ds { threshold } => abs_discrepancy(&resampled, threshold)?.0,
        };
        draws.push(value);
    }
    draws.sort_by(|a, b| a.partial_cmp(b).expect("scores are finite"));
    let last = (resamples - 1) as f64;
    let lo_idx = (0.025 * last).floor() as usize;
    let hi_idx = (0.975 * last).ceil() as usize;
    Ok((draws[lo_idx], draws[hi_idx]))
}

/// Exponential moving average with `y_0 = x_0`.
pub fn ema(series: &[f64], alpha: f64) -> Result<Vec<f64>> {
    if series.is_empty() {
        return Err(Error::Param("ema needs a non-empty series".into()));
    }
    if !(alpha > 0.0 && alpha <= 1.0) {
        return Err(Error::Param(format!("ema alpha {alpha} outside (0, 1]")));
    }
    let mut out = Vec::with_capacity(series.len());
    let mut y = series[0];
    out.push(y);
    for &x in &series[1..] {
        y = alpha * x + (1.0 - alpha) * y;
        out.push(y);
    }
    Ok(out)
}

/// Full measurement summary for one real-versus-generated comparison.
#[derive(Debug, Clone)]
pub struct DiscrepancyReport {
    pub u_d: f64,
    pub u_theta: f64,
    pub d_a: f64,
    pub d_s: f64,
    pub accuracy: f64,
    pub constraint_residual: f64,
    pub ci_d_a: (f64, f64),
    pub ci_d_s: (f64, f64),
    pub n_real: usize,
    pub n_gen: usize,
    pub threshold: f64,
    /// True when the classifier landed below chance; `d_s` is reported
    /// unclipped so a failed fit stays visible.
    pub below_chance: bool,
}

impl DiscrepancyReport {
    pub fn from_scores(
        scores: &ScoreSet,
        threshold: f64,
        resamples: usize,
        seed: u64,
    ) -> Result<DiscrepancyReport> {
        let (u_d, u_theta, d_a) = approx_discrepancy(scores);
        let (d_s, accuracy) = abs_discrepancy(scores, threshold)?;
        let residual = constraint_residual(scores);
        let ci_d_a = bootstrap_ci(scores, BootstrapStat::Da, resamples, seed)?;
        let ci_d_s = bootstrap_ci(scores, BootstrapStat::Ds { threshold }, resamples, seed.wrapping_add(1))?;
        Ok(DiscrepancyReport {
            u_d,
            u_theta,
            d_a,
            d_s,
            accuracy,
            constraint_residual: residual,
            ci_d_a,
            ci_d_s,
            n_real: scores.real.len(),
            n_gen: scores.generated.len(),
            threshold,
            below_chance: accuracy < 0.5,
        })
    }

    pub fn csv_header() -> &'static str {
        "d_s,d_a,accuracy,u_d,u_theta,constraint_residual,\
         ci_ds_lo,ci_ds_hi,ci_da_lo,ci_da_hi,n_real,n_gen"
    }

    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{},{},{},{},{},{},{},{}",
            self.d_s,
            self.d_a,
            self.accuracy,
            self.u_d,
            self.u_theta,
            self.constraint_residual,
            self.ci_d_s.0,
            self.ci_d_s.1,
            self.ci_d_a.0,
            self.ci_d_a.1,
            self.n_real,
            self.n_gen
        )
    }

    pub fn to_csv_string(&self) -> String {
        format!("{}\n{}\n", Self::csv_header(), self.csv_row())
    }

    /// Key-value rendering with one `key value` pair per line, covering
    /// fields the CSV row omits.
    pub fn to_kv_string(&self) -> String {
        format!(
            "d_s {}\nd_a {}\naccuracy {}\nu_d {}\nu_theta {}\nconstraint_residual {}\n\
             ci_ds_lo {}\nci_ds_hi {}\nci_da_lo {}\nci_da_hi {}\nn_real {}\nn_gen {}\n\
             threshold {}\nbelow_chance {}\n",
            self.d_s,
            self.d_a,
            self.accuracy,
            self.u_d,
            self.u_theta,
            self.constraint_residual,
            self.ci_d_s.0,
            self.ci_d_s.1,
            self.ci_d_a.0,
            self.ci_d_a.1,
            self.n_real,
            self.n_gen,
            self.threshold,
            self.below_chance
        )
    }
}
