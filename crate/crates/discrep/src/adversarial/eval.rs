//! Third-party evaluation of generator checkpoints.
//!
//! Every checkpoint is judged by a discriminator that never took part in
//! its training: freshly initialized, trained from scratch on fresh real
//! samples versus fresh checkpoint samples, and scored on a held-out test
//! split. Checkpoints therefore compete on equal footing and the verdict is
//! independent of whatever adversary trained them.

use std::time::Instant;

use crate::corpus::{split, GroundTruthSource, TokenSeq, Vocab};
use crate::metrics::{abs_discrepancy, DiscrepancyReport, ScoreSet};
use crate::models::{disc_train, AutoregressiveLM, DiscConfig, SeqDiscriminator, TrainLog};
use crate::nnet::TrainConfig;
use crate::util::sub_seed;
use crate::{Error, Result};

/// Anything that can emit token sequences deterministically per seed.
pub trait SeqSampler {
    fn sample_seqs(&self, n: usize, seed: u64) -> Result<Vec<TokenSeq>>;
}

impl SeqSampler for GroundTruthSource {
    fn sample_seqs(&self, n: usize, seed: u64) -> Result<Vec<TokenSeq>> {
        self.sample_corpus(n, seed)
    }
}

impl SeqSampler for AutoregressiveLM {
    fn sample_seqs(&self, n: usize, seed: u64) -> Result<Vec<TokenSeq>> {
        self.sample(n, 1.0, seed)
    }
}

/// Everything needed to turn two sample sets into a discrepancy report.
#[derive(Debug, Clone)]
pub struct MeasureConfig {
    pub disc: DiscConfig,
    pub train: TrainConfig,
    /// Fraction held out and halved into dev and test.
    pub dev_fraction: f64,
    pub threshold: f64,
    pub resamples: usize,
}

/// Evaluation protocol: sample budget per side plus the measurement recipe.
#[derive(Debug, Clone)]
pub struct EvalConfig {
    pub n_per_side: usize,
    pub measure: MeasureConfig,
    pub seed: u64,
}

/// Verdict on one generator checkpoint.
#[derive(Debug, Clone)]
pub struct RoundRecord {
    /// Position in the evaluated series, starting at 0 for the pre-trained
    /// generator.
    pub round: usize,
    /// Checkpoint reference, shown in ledgers.
    pub label: String,
    pub report: DiscrepancyReport,
    /// Hash of the evaluation discriminator's parameters; fresh per round.
    pub disc_hash: String,
    pub seconds: f64,
}

impl RoundRecord {
    pub fn csv_header() -> &'static str {
        "round,label,d_s,d_a,u_d,u_theta,accuracy,constraint_residual,\
         ci_ds_lo,ci_ds_hi,ci_da_lo,ci_da_hi,seconds"
    }

    pub fn csv_row(&self) -> String {
        let r = &self.report;
        format!(
            "{},{},{},{},{},{},{},{},{},{},{},{},{:.3}",
            self.round,
            self.label,
            r.d_s,
            r.d_a,
            r.u_d,
            r.u_theta,
            r.accuracy,
            r.constraint_residual,
            r.ci_d_s.0,
            r.ci_d_s.1,
            r.ci_d_a.0,
            r.ci_d_a.1,
            self.seconds
        )
    }
}

/// Measures the discrepancy between two sample sets with a freshly trained
/// discriminator: split, train with dev-accuracy selection, then report on
/// the test split. Returns the report, the trained discriminator, and its
/// training log.
pub fn measure_pair(
    real: &[TokenSeq],
    generated: &[TokenSeq],
    vocab: &Vocab,
    l_max: usize,
    cfg: &MeasureConfig,
    seed: u64,
) -> Result<(DiscrepancyReport, SeqDiscriminator, TrainLog)> {
    let splits = split(real, generated, cfg.dev_fraction, sub_seed(seed, "measure.split"))?;
    let disc =
        SeqDiscriminator::new(vocab.clone(), cfg.disc, l_max, sub_seed(seed, "measure.init"))?;
    let tc = TrainConfig { seed: sub_seed(seed, "measure.train"), ..cfg.train };
    let (trained, log) = disc_train(&disc, &splits, tc)?;
    let scores = ScoreSet::new(
        trained.score_batch(&splits.test_a)?,
        trained.score_batch(&splits.test_b)?,
    )?;
    let report = DiscrepancyReport::from_scores(
        &scores,
        cfg.threshold,
        cfg.resamples,
        sub_seed(seed, "measure.bootstrap"),
    )?;
    Ok((report, trained, log))
}

/// Evaluates a series of generator checkpoints against fresh real samples,
/// one freshly initialized and freshly trained discriminator per round.
///
/// Before any round runs, the measurement recipe must prove it can tell
/// trivially separable data apart; failure to beat chance there is a
/// harness fault, not a finding about the generators.
pub fn third_party_eval(
    rounds: &[(&str, &dyn SeqSampler)],
    source: &GroundTruthSource,
    cfg: &EvalConfig,
) -> Result<Vec<RoundRecord>> {
    if rounds.is_empty() {
        return Err(Error::Param("evaluation needs at least one generator checkpoint".into()));
    }
    if cfg.n_per_side < 8 {
        return Err(Error::Param(format!(
            "evaluation needs at least 8 samples per side, got {}",
            cfg.n_per_side
        )));
    }
    sanity_check(source, &cfg.measure, sub_seed(cfg.seed, "eval.sanity"))?;
    let mut records = Vec::with_capacity(rounds.len());
    for (r, (label, sampler)) in rounds.iter().enumerate() {
        let started = Instant::now();
        let real =
            source.sample_corpus(cfg.n_per_side, sub_seed(cfg.seed, &format!("eval.real.{r}")))?;
        let generated =
            sampler.sample_seqs(cfg.n_per_side, sub_seed(cfg.seed, &format!("eval.gen.{r}")))?;
        let (report, disc, _) = measure_pair(
            &real,
            &generated,
            source.vocab(),
            source.l_max(),
            &cfg.measure,
            sub_seed(cfg.seed, &format!("eval.measure.{r}")),
        )?;
        records.push(RoundRecord {
            round: r,
            label: (*label).to_string(),
            report,
            disc_hash: disc.params_hash(),
            seconds: started.elapsed().as_secs_f64(),
        });
    }
    Ok(records)
}

/// Trains a throwaway discriminator on trivially separable data and demands
/// better-than-chance dev accuracy. Epochs and patience are capped: the
/// task is easy, the point is catching a recipe that cannot learn at all.
fn sanity_check(source: &GroundTruthSource, cfg: &MeasureConfig, seed: u64) -> Result<()> {
    let vocab = source.vocab();
    let n = 24;
    let repeat = |ids: Vec<u32>| -> Result<Vec<TokenSeq>> {
        Ok(vec![TokenSeq::new(ids)?; n])
    };
    let (side_a, side_b) = if vocab.content_size() >= 2 {
        let ids: Vec<u32> = vocab.content_ids().collect();
        (repeat(vec![ids[0]])?, repeat(vec![ids[1]])?)
    } else if source.l_max() >= 2 {
        let id = vocab.content_ids().next().expect("vocabulary has content");
        (repeat(vec![id])?, repeat(vec![id, id])?)
    } else {
        return Err(Error::Param("source admits only one sequence, nothing to separate".into()));
    };
    let splits = split(&side_a, &side_b, cfg.dev_fraction, sub_seed(seed, "sanity.split"))?;
    let disc = SeqDiscriminator::new(
        vocab.clone(),
        cfg.disc,
        source.l_max(),
        sub_seed(seed, "sanity.init"),
    )?;
    let tc = TrainConfig {
        seed: sub_seed(seed, "sanity.train"),
        max_epochs: cfg.train.max_epochs.min(30),
        patience: cfg.train.patience.min(8).max(1),
        ..cfg.train
    };
    let (trained, _) = disc_train(&disc, &splits, tc)?;
    let scores = ScoreSet::new(
        trained.score_batch(&splits.dev_a)?,
        trained.score_batch(&splits.dev_b)?,
    )?;
    let (_, acc) = abs_discrepancy(&scores, 0.5)?;
    if acc <= 0.5 {
        return Err(Error::Harness(format!(
            "evaluation discriminator reached only {acc} dev accuracy on separable data"
        )));
    }
    Ok(())
}
