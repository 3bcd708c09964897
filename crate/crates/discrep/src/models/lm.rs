//! Autoregressive sequence generator with exact likelihood evaluation.
//!
//! A GRU over token embeddings feeds a linear head over the content
//! vocabulary plus an end-of-sequence slot. The end slot is masked out on
//! the first step, so the model family matches the data sources: sequences
//! are never empty, and at the length bound termination is forced with
//! probability one. The output head starts at zero, making an untrained
//! model exactly uniform at every step.
//!
//! Scoring walks the recurrence with plain slice math in the same
//! operation order as the training tape, so both paths agree bit for bit.

use std::path::Path;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;

use crate::corpus::{sample_slot, validate_seq, TokenId, TokenSeq, Vocab, BOS, RESERVED};
use crate::metrics::kahan_sum;
use crate::metrics::oracle::Density;
use crate::nnet::checkpoint::{params_hash, read_params, write_params};
use crate::nnet::layers::{gru_cell, gru_cell_math, gru_init, gru_param_nodes, GruRefs};
use crate::nnet::math::{log_softmax_row_in_place, matvec, softmax_row_in_place};
use crate::nnet::params::glorot;
use crate::nnet::{NodeId, ParamStore, Tape, Tensor, TrainConfig};
use crate::util::sub_seed;
use crate::{Error, Result};

use super::log::{TrainEpoch, TrainLog};
use super::{expect_kv, parse_usize};

/// Additive logit mask that zeroes the end-of-sequence slot after softmax.
pub(crate) const MASK: f64 = -1e9;

/// Generator over a fixed vocabulary with an explicit length bound.
#[derive(Debug, Clone)]
pub struct AutoregressiveLM {
    vocab: Vocab,
    embed_dim: usize,
    hidden: usize,
    l_max: usize,
    params: ParamStore,
}

impl AutoregressiveLM {
    /// Fresh model: embeddings and recurrence from the seed, output head at
    /// zero so every next-token distribution starts uniform.
    pub fn new(vocab: Vocab, embed_dim: usize, hidden: usize, l_max: usize, seed: u64) -> Result<AutoregressiveLM> {
        if embed_dim == 0 || hidden == 0 || l_max == 0 {
            return Err(Error::Param("model dimensions must be positive".into()));
        }
        let mut rng = ChaCha12Rng::seed_from_u64(seed);
        let mut params = ParamStore::new();
        params.insert("emb", glorot(&mut rng, vocab.size(), embed_dim))?;
        gru_init(&mut params, "gru", embed_dim, hidden, &mut rng)?;
        let out_slots = vocab.content_size() + 1;
        params.insert("head.w", Tensor::zeros(hidden, out_slots))?;
        params.insert("head.b", Tensor::zeros(1, out_slots))?;
        Ok(AutoregressiveLM { vocab, embed_dim, hidden, l_max, params })
    }

    /// Rebuilds a model around existing parameters, validating their shapes.
    pub fn from_parts(
        vocab: Vocab,
        embed_dim: usize,
        hidden: usize,
        l_max: usize,
        params: ParamStore,
    ) -> Result<AutoregressiveLM> {
        let fresh = AutoregressiveLM::new(vocab, embed_dim, hidden, l_max, 0)?;
        if params.names() != fresh.params.names() {
            return Err(Error::Structural("parameter names do not match the architecture".into()));
        }
        for name in params.names() {
            if params.tensor(&name).shape() != fresh.params.tensor(&name).shape() {
                return Err(Error::Structural(format!("parameter {name} has the wrong shape")));
            }
        }
        Ok(AutoregressiveLM { params, ..fresh })
    }

    pub fn vocab(&self) -> &Vocab {
        &self.vocab
    }

    pub fn l_max(&self) -> usize {
        self.l_max
    }

    pub fn embed_dim(&self) -> usize {
        self.embed_dim
    }

    pub fn hidden(&self) -> usize {
        self.hidden
    }

    pub fn params(&self) -> &ParamStore {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.params
    }

    pub fn params_hash(&self) -> String {
        params_hash(&self.params)
    }

    /// Output slot for a content token id.
    fn slot(&self, id: TokenId) -> usize {
        id as usize - RESERVED
    }

    /// End-of-sequence output slot.
    fn eos_slot(&self) -> usize {
        self.vocab.content_size()
    }

    /// Embedding-table row for the token fed at step `t` of `x`.
    fn input_id(x: &TokenSeq, t: usize) -> usize {
        if t == 0 {
            BOS as usize
        } else {
            x.ids()[t - 1] as usize
        }
    }

    /// Log distribution over output slots after consuming `prefix`, via the
    /// math path. `masked` suppresses the end slot (first step only).
    fn step_log_dist(&self, h: &[f64], masked: bool) -> Vec<f64> {
        let w = self.params.tensor("head.w");
        let b = self.params.tensor("head.b");
        let mut logits = matvec(h, w);
        for (j, l) in logits.iter_mut().enumerate() {
            *l += b.get(0, j);
        }
        if masked {
            let eos = self.eos_slot();
            logits[eos] += MASK;
        }
        log_softmax_row_in_place(&mut logits);
        logits
    }

    fn advance(&self, refs: &GruRefs<'_>, h: &[f64], token_row: usize) -> Vec<f64> {
        let emb = self.params.tensor("emb");
        gru_cell_math(refs, emb.row_slice(token_row), h)
    }

    /// Exact log-probability of the full sequence, termination included.
    pub fn exact_seq_logprob(&self, x: &TokenSeq) -> Result<f64> {
        self.logprob_inner(x, true)
    }

    /// Log-probability that the sequence starts with `x`, ignoring how or
    /// whether it terminates. Unlike full-sequence probability this is
    /// monotone: extending the prefix can only lose mass.
    pub fn prefix_logprob(&self, x: &TokenSeq) -> Result<f64> {
        self.logprob_inner(x, false)
    }

    fn logprob_inner(&self, x: &TokenSeq, with_end: bool) -> Result<f64> {
        validate_seq(&self.vocab, self.l_max, x)?;
        let refs = GruRefs::from_store(&self.params, "gru");
        let steps = if with_end && x.len() < self.l_max { x.len() + 1 } else { x.len() };
        let mut h = vec![0.0; self.hidden];
        let mut total = 0.0;
        for t in 0..steps {
            h = self.advance(&refs, &h, Self::input_id(x, t));
            let log_dist = self.step_log_dist(&h, t == 0);
            let slot = if t < x.len() { self.slot(x.ids()[t]) } else { self.eos_slot() };
            total += log_dist[slot];
        }
        Ok(total)
    }

    /// Next-slot distribution (content slots then the end slot) after an
    /// in-vocabulary prefix; the end slot is masked for the empty prefix.
    pub fn next_dist(&self, prefix: &[TokenId]) -> Result<Vec<f64>> {
        if prefix.len() >= self.l_max {
            return Err(Error::Param(format!(
                "prefix of length {} leaves no next step under the bound {}",
                prefix.len(),
                self.l_max
            )));
        }
        for &id in prefix {
            if !self.vocab.is_content(id) {
                return Err(Error::Param(format!("token id {id} is not a content token")));
            }
        }
        let refs = GruRefs::from_store(&self.params, "gru");
        let mut h = vec![0.0; self.hidden];
        h = self.advance(&refs, &h, BOS as usize);
        for &id in prefix {
            h = self.advance(&refs, &h, id as usize);
        }
        let mut dist = self.step_log_dist(&h, prefix.is_empty());
        for v in dist.iter_mut() {
            *v = v.exp();
        }
        Ok(dist)
    }

    /// Ancestral sampling with a temperature on the logits; deterministic
    /// per seed. Termination is forced at the length bound.
    pub fn sample(&self, n: usize, temperature: f64, seed: u64) -> Result<Vec<TokenSeq>> {
        if n == 0 {
            return Err(Error::Param("sample count must be at least 1".into()));
        }
        if !(temperature > 0.0) || !temperature.is_finite() {
            return Err(Error::Param(format!("temperature {temperature} must be positive")));
        }
        let refs = GruRefs::from_store(&self.params, "gru");
        let w = self.params.tensor("head.w");
        let b = self.params.tensor("head.b");
        let mut rng = ChaCha12Rng::seed_from_u64(seed);
        let mut out = Vec::with_capacity(n);
        for _ in 0..n {
            let mut h = vec![0.0; self.hidden];
            let mut ids: Vec<TokenId> = Vec::new();
            loop {
                let row = if ids.is_empty() { BOS as usize } else { *ids.last().unwrap() as usize };
                h = self.advance(&refs, &h, row);
                let mut logits = matvec(&h, w);
                for (j, l) in logits.iter_mut().enumerate() {
                    *l += b.get(0, j);
                }
                if ids.is_empty() {
                    logits[self.eos_slot()] += MASK;
                }
                for l in logits.iter_mut() {
                    *l /= temperature;
                }
                softmax_row_in_place(&mut logits);
                let slot = sample_slot(&logits, rng.random::<f64>());
                if slot == self.eos_slot() {
                    break;
                }
                ids.push((slot + RESERVED) as TokenId);
                if ids.len() == self.l_max {
                    break;
                }
            }
            out.push(TokenSeq::new(ids).expect("first step cannot terminate"));
        }
        Ok(out)
    }

    /// Pooled perplexity over a held-out set, termination counted as a
    /// token wherever it is not forced.
    pub fn perplexity(&self, dev: &[TokenSeq]) -> Result<f64> {
        if dev.is_empty() {
            return Err(Error::Param("perplexity needs a non-empty evaluation set".into()));
        }
        let pairs: Vec<(f64, usize)> = dev
            .iter()
            .map(|x| {
                let nll = -self.exact_seq_logprob(x)?;
                Ok((nll, self.token_count(x)))
            })
            .collect::<Result<_>>()?;
        pooled_perplexity(&pairs)
    }

    /// Number of prediction steps the model spends on `x`.
    pub fn token_count(&self, x: &TokenSeq) -> usize {
        x.len() + usize::from(x.len() < self.l_max)
    }

    /// Appends the training-loss graph for one sequence: its negative log
    /// likelihood as a scalar node.
    pub fn build_seq_nll(&self, tape: &mut Tape, x: &TokenSeq) -> Result<NodeId> {
        validate_seq(&self.vocab, self.l_max, x)?;
        let steps = if x.len() < self.l_max { x.len() + 1 } else { x.len() };
        let emb = tape.param(&self.params, "emb");
        let gru = gru_param_nodes(tape, &self.params, "gru");
        let w = tape.param(&self.params, "head.w");
        let b = tape.param(&self.params, "head.b");
        let mut h = tape.constant(Tensor::zeros(1, self.hidden));
        let mut states: Option<NodeId> = None;
        for t in 0..steps {
            let x_t = tape.embed_rows(emb, vec![Self::input_id(x, t)]);
            h = gru_cell(tape, &gru, x_t, h);
            states = Some(match states {
                None => h,
                Some(prev) => tape.concat_rows(prev, h),
            });
        }
        let states = states.expect("at least one step");
        let lin = tape.matmul(states, w);
        let lin = tape.add_bias(lin, b);
        let slots = self.eos_slot() + 1;
        let mut mask = Tensor::zeros(steps, slots);
        mask.set(0, self.eos_slot(), MASK);
        let mask = tape.constant(mask);
        let masked = tape.add(lin, mask);
        let log_dist = tape.log_softmax_rows(masked);
        let targets: Vec<usize> = (0..steps)
            .map(|t| if t < x.len() { self.slot(x.ids()[t]) } else { self.eos_slot() })
            .collect();
        let picked = tape.pick(log_dist, targets);
        let total = tape.sum(picked);
        Ok(tape.affine(total, -1.0, 0.0))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut text = String::new();
        text.push_str("kind lm\n");
        text.push_str(&format!("vocab_hash {}\n", self.vocab.hash()));
        text.push_str(&format!("tokens {}\n", self.vocab.content_tokens().join(" ")));
        text.push_str(&format!("l_max {}\n", self.l_max));
        text.push_str(&format!("embed_dim {}\n", self.embed_dim));
        text.push_str(&format!("hidden {}\n", self.hidden));
        write_params(&mut text, &self.params);
        std::fs::write(path, text)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<AutoregressiveLM> {
        let text = std::fs::read_to_string(path)?;
        let mut lines = text.lines();
        let kind = expect_kv(&mut lines, "kind")?;
        if kind != "lm" {
            return Err(Error::Parse(format!("expected a generator checkpoint, found kind {kind:?}")));
        }
        let hash = expect_kv(&mut lines, "vocab_hash")?;
        let tokens = expect_kv(&mut lines, "tokens")?;
        let vocab = Vocab::new(&tokens.split_whitespace().collect::<Vec<_>>())?;
        if vocab.hash() != hash {
            return Err(Error::Parse("vocabulary hash does not match its tokens".into()));
        }
        let l_max = parse_usize(&expect_kv(&mut lines, "l_max")?, "l_max")?;
        let embed_dim = parse_usize(&expect_kv(&mut lines, "embed_dim")?, "embed_dim")?;
        let hidden = parse_usize(&expect_kv(&mut lines, "hidden")?, "hidden")?;
        let params = ParamStore::from_params(read_params(&mut lines)?)?;
        AutoregressiveLM::from_parts(vocab, embed_dim, hidden, l_max, params)
    }
}

impl Density for AutoregressiveLM {
    fn prob(&self, x: &TokenSeq) -> Result<f64> {
        Ok(self.exact_seq_logprob(x)?.exp())
    }
}

/// Pooled perplexity: `exp(total nll / total tokens)`.
pub fn pooled_perplexity(pairs: &[(f64, usize)]) -> Result<f64> {
    if pairs.is_empty() {
        return Err(Error::Param("perplexity needs a non-empty evaluation set".into()));
    }
    let nll = kahan_sum(pairs.iter().map(|(n, _)| *n));
    let tokens: usize = pairs.iter().map(|(_, t)| *t).sum();
    if !nll.is_finite() {
        return Err(Error::NonFinite(format!("total negative log likelihood {nll}")));
    }
    Ok((nll / tokens as f64).exp())
}

/// Maximum-likelihood training with dev-perplexity model selection.
///
/// Returns the checkpoint from the epoch with the lowest dev perplexity,
/// stopping early once `patience` consecutive epochs fail to improve it.
/// Zero epochs returns the input model unchanged.
pub fn lm_train_mle(
    lm: &AutoregressiveLM,
    corpus: &[TokenSeq],
    dev: &[TokenSeq],
    cfg: TrainConfig,
) -> Result<(AutoregressiveLM, TrainLog)> {
    cfg.validate()?;
    if corpus.is_empty() {
        return Err(Error::Param("training corpus is empty".into()));
    }
    if dev.is_empty() {
        return Err(Error::Param("dev set is empty".into()));
    }
    let mut work = lm.clone();
    work.params_mut().reset_moments();
    let mut best_params = work.params().clone();
    let mut best_ppl = f64::INFINITY;
    let mut best_epoch = None;
    let mut log = TrainLog::default();
    let mut rng = ChaCha12Rng::seed_from_u64(sub_seed(cfg.seed, "lm.mle.shuffle"));
    let mut order: Vec<usize> = (0..corpus.len()).collect();
    let mut stale = 0usize;
    for epoch in 0..cfg.max_epochs {
        use rand::seq::SliceRandom;
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        for chunk in order.chunks(cfg.batch_size) {
            let seed = 1.0 / chunk.len() as f64;
            let mut tapes = Vec::with_capacity(chunk.len());
            for &i in chunk {
                let mut tape = Tape::new();
                let loss = work.build_seq_nll(&mut tape, &corpus[i])?;
                let value = tape.value(loss).scalar_value();
                if !value.is_finite() {
                    return Err(Error::NonFinite(format!("training loss {value}")));
                }
                loss_sum += value;
                tapes.push((tape, loss));
            }
            for (tape, loss) in &tapes {
                tape.backward(*loss, seed, work.params_mut());
            }
            work.params_mut().adam_step(cfg.lr);
        }
        let dev_ppl = work.perplexity(dev)?;
        log.epochs.push(TrainEpoch {
            epoch,
            loss: loss_sum / corpus.len() as f64,
            dev_metric: dev_ppl,
            u_d: None,
            u_theta: None,
            d_a: None,
            d_s: None,
        });
        if dev_ppl < best_ppl {
            best_ppl = dev_ppl;
            best_params = work.params().clone();
            best_epoch = Some(epoch);
            stale = 0;
        } else {
            stale += 1;
            if stale >= cfg.patience {
                break;
            }
        }
    }
    log.best_epoch = best_epoch;
    let best = if best_epoch.is_some() {
        AutoregressiveLM { params: best_params, ..work.clone() }
    } else {
        lm.clone()
    };
    Ok((best, log))
}

/// In-place maximum-likelihood refinement without model selection; used for
/// small corrective updates on curated samples.
pub fn lm_finetune_mle(
    lm: &mut AutoregressiveLM,
    corpus: &[TokenSeq],
    epochs: usize,
    cfg: TrainConfig,
) -> Result<()> {
    cfg.validate()?;
    if corpus.is_empty() {
        return Err(Error::Param("fine-tune corpus is empty".into()));
    }
    lm.params_mut().reset_moments();
    let mut rng = ChaCha12Rng::seed_from_u64(sub_seed(cfg.seed, "lm.finetune.shuffle"));
    let mut order: Vec<usize> = (0..corpus.len()).collect();
    for _ in 0..epochs {
        use rand::seq::SliceRandom;
        order.shuffle(&mut rng);
        for chunk in order.chunks(cfg.batch_size) {
            let seed = 1.0 / chunk.len() as f64;
            for &i in chunk {
                let mut tape = Tape::new();
                let loss = lm.build_seq_nll(&mut tape, &corpus[i])?;
                let value = tape.value(loss).scalar_value();
                if !value.is_finite() {
                    return Err(Error::NonFinite(format!("fine-tune loss {value}")));
                }
                tape.backward(loss, seed, lm.params_mut());
            }
            lm.params_mut().adam_step(cfg.lr);
        }
    }
    Ok(())
}
