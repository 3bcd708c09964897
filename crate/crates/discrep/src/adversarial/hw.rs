//! Score-band generator updates.
//!
//! The generator proposes a batch of its own samples, a trained
//! discriminator scores them, and only samples whose score lands in a chosen
//! band survive. The generator is then fine-tuned by maximum likelihood on
//! the survivors. A `random` band keeps everything, which reduces the update
//! to plain self-training and serves as the control row of the grid.

use crate::corpus::TokenSeq;
use crate::models::{lm_finetune_mle, AutoregressiveLM, SeqDiscriminator};
use crate::nnet::TrainConfig;
use crate::util::sub_seed;
use crate::{Error, Result};

/// Slack above 1.0 so a closed top band can admit a saturated score of
/// exactly 1.
const BAND_SLACK: f64 = 1e-9;

/// Score filter for self-generated samples.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum BandSpec {
    /// Keep every sample regardless of score.
    Random,
    /// Keep samples with `lower <= score < upper`.
    Band { lower: f64, upper: f64 },
}

impl BandSpec {
    /// Half-open band `[lower, upper)`. The upper bound may exceed 1 by a
    /// hair so that the topmost band includes scores of exactly 1.
    pub fn band(lower: f64, upper: f64) -> Result<BandSpec> {
        if !lower.is_finite() || !upper.is_finite() {
            return Err(Error::Param(format!("band bounds must be finite, got [{lower}, {upper})")));
        }
        if !(0.0..=1.0).contains(&lower) || upper > 1.0 + BAND_SLACK || lower >= upper {
            return Err(Error::Param(format!(
                "band bounds must satisfy 0 <= lower < upper <= 1, got [{lower}, {upper})"
            )));
        }
        Ok(BandSpec::Band { lower, upper })
    }

    /// Whether a score survives this filter.
    pub fn contains(&self, score: f64) -> bool {
        match *self {
            BandSpec::Random => true,
            BandSpec::Band { lower, upper } => lower <= score && score < upper,
        }
    }

    /// Stable row label for grid reports.
    pub fn label(&self) -> String {
        match *self {
            BandSpec::Random => "random".into(),
            BandSpec::Band { lower, upper } => format!("{:.1}-{:.1}", lower, upper.min(1.0)),
        }
    }
}

/// The four score bands of the selection grid, ascending, followed by the
/// keep-everything control. The lowest band is closed at 0 and the topmost
/// admits a score of exactly 1, so together they cover every attainable
/// score exactly once.
pub fn table_bands() -> Vec<BandSpec> {
    vec![
        BandSpec::Band { lower: 0.0, upper: 0.3 },
        BandSpec::Band { lower: 0.3, upper: 0.5 },
        BandSpec::Band { lower: 0.5, upper: 0.9 },
        BandSpec::Band { lower: 0.9, upper: 1.0 + BAND_SLACK },
        BandSpec::Random,
    ]
}

/// Sample-budget multipliers of the selection grid, as fractions of the
/// training-set size.
pub fn table_multipliers() -> Vec<f64> {
    vec![0.1, 0.5, 1.0, 2.0, 5.0]
}

/// One cell of the selection protocol.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HwConfig {
    /// Samples to draw, as a multiple of the training-set size.
    pub sample_multiplier: f64,
    pub band: BandSpec,
    pub fine_tune_epochs: usize,
    pub seed: u64,
}

impl HwConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.sample_multiplier > 0.0) || !self.sample_multiplier.is_finite() {
            return Err(Error::Param(format!(
                "sample multiplier must be positive, got {}",
                self.sample_multiplier
            )));
        }
        Ok(())
    }
}

/// Outcome counts of one [`hw_update`] call.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct HwReport {
    /// Total samples drawn, across the retry if one happened.
    pub generated: usize,
    /// Samples that survived the band filter.
    pub selected: usize,
    /// Whether the first draw selected nothing and a retry was made.
    pub resampled: bool,
    /// Whether the update was abandoned after the retry also came up empty.
    pub aborted: bool,
}

/// Scores `samples` with `disc` and keeps those inside `band`. An empty
/// result is a signal, not an error: the caller decides between resampling
/// and giving up.
pub fn hw_select(
    samples: &[TokenSeq],
    disc: &SeqDiscriminator,
    band: &BandSpec,
) -> Result<Vec<TokenSeq>> {
    if samples.is_empty() {
        return Err(Error::Param("selection needs a non-empty sample batch".into()));
    }
    let scores = disc.score_batch(samples)?;
    Ok(hw_select_scored(samples, &scores, band))
}

/// Pure filter over pre-computed scores: output is a subsequence of the
/// input.
pub fn hw_select_scored(samples: &[TokenSeq], scores: &[f64], band: &BandSpec) -> Vec<TokenSeq> {
    assert_eq!(samples.len(), scores.len(), "one score per sample");
    samples
        .iter()
        .zip(scores)
        .filter(|(_, &s)| band.contains(s))
        .map(|(x, _)| x.clone())
        .collect()
}

/// Draws `sample_multiplier * train_size` generator samples, filters them
/// through the band, and fine-tunes a copy of the generator on the
/// survivors. One resample is attempted when the first draw selects
/// nothing; if the retry also comes up empty the input generator is
/// returned untouched with `aborted` set.
pub fn hw_update(
    lm: &AutoregressiveLM,
    disc: &SeqDiscriminator,
    train_size: usize,
    cfg: &HwConfig,
    tc: &TrainConfig,
) -> Result<(AutoregressiveLM, HwReport)> {
    cfg.validate()?;
    tc.validate()?;
    if train_size == 0 {
        return Err(Error::Param("training-set size must be positive".into()));
    }
    let n = ((cfg.sample_multiplier * train_size as f64).ceil() as usize).max(1);
    let mut report = HwReport { generated: 0, selected: 0, resampled: false, aborted: false };
    let mut selected = Vec::new();
    for label in ["hw.sample", "hw.resample"] {
        let samples = lm.sample(n, 1.0, sub_seed(cfg.seed, label))?;
        report.generated += n;
        selected = hw_select(&samples, disc, &cfg.band)?;
        if !selected.is_empty() {
            break;
        }
        report.resampled = true;
    }
    if selected.is_empty() {
        report.aborted = true;
        return Ok((lm.clone(), report));
    }
    report.selected = selected.len();
    let mut tuned = lm.clone();
    let tc = TrainConfig { seed: sub_seed(cfg.seed, "hw.finetune"), ..*tc };
    lm_finetune_mle(&mut tuned, &selected, cfg.fine_tune_epochs, tc)?;
    Ok((tuned, report))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::Vocab;
    use crate::models::{DiscConfig, DiscEncoder};
    use proptest::prelude::*;

    fn seq(ids: &[u32]) -> TokenSeq {
        TokenSeq::new(ids.to_vec()).unwrap()
    }

    fn tiny_pair() -> (AutoregressiveLM, SeqDiscriminator) {
        let vocab = Vocab::synthetic(3).unwrap();
        let lm = AutoregressiveLM::new(vocab.clone(), 4, 5, 4, 11).unwrap();
        let cfg = DiscConfig { embed_dim: 4, filters: 3, hidden: 5, encoder: DiscEncoder::Conv };
        let disc = SeqDiscriminator::new(vocab, cfg, 4, 12).unwrap();
        (lm, disc)
    }

    fn quick_tc(seed: u64) -> TrainConfig {
        TrainConfig { lr: 0.01, batch_size: 8, max_epochs: 50, seed, patience: 10 }
    }

    #[test]
    fn band_boundaries_are_half_open() {
        let samples = vec![seq(&[3]), seq(&[4]), seq(&[5]), seq(&[3, 4])];
        let scores = [0.2, 0.3, 0.49, 0.5];
        let band = BandSpec::band(0.3, 0.5).unwrap();
        let kept = hw_select_scored(&samples, &scores, &band);
        assert_eq!(kept, vec![seq(&[4]), seq(&[5])]);
    }

    #[test]
    fn random_band_is_identity() {
        let samples = vec![seq(&[3]), seq(&[4, 5]), seq(&[5])];
        let scores = [0.01, 0.5, 0.99];
        let kept = hw_select_scored(&samples, &scores, &BandSpec::Random);
        assert_eq!(kept, samples);
    }

    #[test]
    fn top_band_admits_score_one() {
        let bands = table_bands();
        let top = bands[3];
        assert!(top.contains(1.0));
        assert!(top.contains(0.9));
        assert!(!top.contains(0.8999999));
    }

    #[test]
    fn invalid_bands_are_rejected() {
        assert!(BandSpec::band(0.5, 0.5).is_err());
        assert!(BandSpec::band(0.6, 0.5).is_err());
        assert!(BandSpec::band(-0.1, 0.5).is_err());
        assert!(BandSpec::band(0.0, 1.5).is_err());
        assert!(BandSpec::band(f64::NAN, 0.5).is_err());
    }

    #[test]
    fn untrained_disc_leaves_top_band_empty() {
        let (lm, disc) = tiny_pair();
        let samples = lm.sample(20, 1.0, 5).unwrap();
        let band = BandSpec::band(0.9, 1.0 + 1e-9).unwrap();
        assert!(hw_select(&samples, &disc, &band).unwrap().is_empty());
    }

    #[test]
    fn empty_sample_batch_is_rejected() {
        let (_, disc) = tiny_pair();
        assert!(hw_select(&[], &disc, &BandSpec::Random).is_err());
    }

    proptest! {
        #[test]
        fn every_score_falls_in_exactly_one_band(s in 0.0f64..=1.0) {
            let hits = table_bands()
                .iter()
                .filter(|b| !matches!(b, BandSpec::Random))
                .filter(|b| b.contains(s))
                .count();
            prop_assert_eq!(hits, 1);
        }

        #[test]
        fn selection_is_a_pure_filter(
            scores in proptest::collection::vec(0.0f64..=1.0, 1..40),
            lower in 0.0f64..0.9,
            width in 0.05f64..0.5,
        ) {
            let samples: Vec<TokenSeq> =
                (0..scores.len()).map(|i| seq(&[3 + (i % 3) as u32])).collect();
            let band = BandSpec::band(lower, (lower + width).min(1.0 + 1e-9)).unwrap();
            let kept = hw_select_scored(&samples, &scores, &band);
            prop_assert!(kept.len() <= samples.len());
            let kept_scores: Vec<f64> = scores
                .iter()
                .copied()
                .filter(|&s| band.contains(s))
                .collect();
            prop_assert_eq!(kept.len(), kept_scores.len());
            let again = hw_select_scored(&kept, &kept_scores, &band);
            prop_assert_eq!(again, kept);
        }
    }

    #[test]
    fn multiplier_must_be_positive() {
        let cfg = HwConfig {
            sample_multiplier: 0.0,
            band: BandSpec::Random,
            fine_tune_epochs: 1,
            seed: 1,
        };
        assert!(cfg.validate().is_err());
        let cfg = HwConfig { sample_multiplier: -2.0, ..cfg };
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn empty_band_aborts_after_one_retry() {
        let (lm, disc) = tiny_pair();
        let cfg = HwConfig {
            sample_multiplier: 1.0,
            band: BandSpec::band(0.9, 1.0 + 1e-9).unwrap(),
            fine_tune_epochs: 2,
            seed: 21,
        };
        let (updated, report) = hw_update(&lm, &disc, 20, &cfg, &quick_tc(3)).unwrap();
        assert!(report.aborted);
        assert!(report.resampled);
        assert_eq!(report.generated, 40);
        assert_eq!(report.selected, 0);
        assert_eq!(updated.params_hash(), lm.params_hash());
    }

    #[test]
    fn zero_fine_tune_epochs_is_identity() {
        let (lm, disc) = tiny_pair();
        let cfg = HwConfig {
            sample_multiplier: 1.0,
            band: BandSpec::Random,
            fine_tune_epochs: 0,
            seed: 22,
        };
        let (updated, report) = hw_update(&lm, &disc, 15, &cfg, &quick_tc(4)).unwrap();
        assert!(!report.aborted);
        assert_eq!(report.selected, report.generated);
        assert_eq!(updated.params_hash(), lm.params_hash());
    }

    #[test]
    fn full_band_matches_plain_self_training() {
        let (lm, disc) = tiny_pair();
        let cfg = HwConfig {
            sample_multiplier: 1.0,
            band: BandSpec::band(0.0, 1.0 + 1e-9).unwrap(),
            fine_tune_epochs: 2,
            seed: 23,
        };
        let tc = quick_tc(5);
        let (updated, report) = hw_update(&lm, &disc, 18, &cfg, &tc).unwrap();
        assert_eq!(report.selected, report.generated);
        assert!(!report.resampled);

        let mut manual = lm.clone();
        let samples = lm.sample(18, 1.0, sub_seed(cfg.seed, "hw.sample")).unwrap();
        let mtc = TrainConfig { seed: sub_seed(cfg.seed, "hw.finetune"), ..tc };
        lm_finetune_mle(&mut manual, &samples, 2, mtc).unwrap();
        assert_eq!(updated.params_hash(), manual.params_hash());
        assert_ne!(updated.params_hash(), lm.params_hash());
    }

    #[test]
    fn untrained_disc_keeps_everything_in_middle_band() {
        let (lm, disc) = tiny_pair();
        let samples = lm.sample(12, 1.0, 9).unwrap();
        let band = BandSpec::band(0.5, 0.9).unwrap();
        let kept = hw_select(&samples, &disc, &band).unwrap();
        assert_eq!(kept.len(), samples.len());
    }

    #[test]
    fn band_labels_are_stable() {
        let labels: Vec<String> = table_bands().iter().map(|b| b.label()).collect();
        assert_eq!(labels, vec!["0.0-0.3", "0.3-0.5", "0.5-0.9", "0.9-1.0", "random"]);
    }
}
