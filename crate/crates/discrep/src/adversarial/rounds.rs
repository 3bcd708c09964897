//! Adversarial training rounds.
//!
//! One round alternates a generator phase against a frozen discriminator
//! with a discriminator phase against the updated generator. Two generator
//! phases are offered: a policy-gradient update on discrete samples, with
//! the discriminator score as terminal reward and the batch mean as
//! baseline, and a relaxed update where Gumbel-softmax rows flow through the
//! discriminator's embedding matrix so the non-saturating loss is
//! differentiable end to end.

use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use rand_distr::{Distribution, Gumbel};

use crate::corpus::{TokenSeq, Vocab, BOS};
use crate::metrics::kahan_sum;
use crate::models::lm::MASK;
use crate::models::{AutoregressiveLM, SeqDiscriminator};
use crate::nnet::layers::{gru_cell, gru_param_nodes};
use crate::nnet::math::sigmoid;
use crate::nnet::{NodeId, ParamStore, Tape, Tensor, TrainConfig};
use crate::util::sub_seed;
use crate::{Error, Result};

/// Self-samples probed after a generator phase to catch divergence.
const GUARD_SAMPLES: usize = 8;

/// In-loop statistics of one adversarial round. Values covering a phase
/// that ran zero steps are reported as zero.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RoundStats {
    /// Mean discriminator score of generator samples across the generator
    /// phase (policy gradient), or mean score of relaxed samples (relaxed).
    pub mean_reward: f64,
    /// Mean generator objective: advantage-weighted negative log likelihood
    /// (policy gradient) or the non-saturating loss (relaxed).
    pub gen_loss: f64,
    /// Mean discriminator cross-entropy across the discriminator phase.
    pub disc_loss: f64,
    pub g_steps: usize,
    pub d_steps: usize,
}

/// One policy-gradient round: `g_steps` generator updates with the
/// discriminator score of each complete sample as reward, then `d_steps`
/// discriminator updates on fresh real and generated batches.
///
/// The reward baseline is the batch mean, so a discriminator that scores
/// every sample identically produces a generator update of exactly zero.
pub fn pg_round(
    lm: &mut AutoregressiveLM,
    disc: &mut SeqDiscriminator,
    real_pool: &[TokenSeq],
    cfg: &TrainConfig,
    g_steps: usize,
    d_steps: usize,
) -> Result<RoundStats> {
    cfg.validate()?;
    if d_steps > 0 && real_pool.is_empty() {
        return Err(Error::Param("discriminator steps need a real sample pool".into()));
    }
    lm.params_mut().reset_moments();
    disc.params_mut().reset_moments();
    let mut reward_sum = 0.0;
    let mut reward_n = 0usize;
    let mut gen_loss_sum = 0.0;
    for g in 0..g_steps {
        let samples = lm.sample(cfg.batch_size, 1.0, sub_seed(cfg.seed, &format!("pg.gen.{g}")))?;
        let rewards = disc.score_batch(&samples)?;
        let baseline = kahan_sum(rewards.iter().copied()) / rewards.len() as f64;
        let scale = samples.len() as f64;
        let mut tapes = Vec::with_capacity(samples.len());
        for (x, &r) in samples.iter().zip(&rewards) {
            let mut tape = Tape::new();
            let nll = lm.build_seq_nll(&mut tape, x)?;
            let value = tape.value(nll).scalar_value();
            if !value.is_finite() {
                return Err(Error::NonFinite(format!("generator log likelihood {value}")));
            }
            gen_loss_sum += (r - baseline) * value;
            tapes.push((tape, nll, r));
        }
        for (tape, nll, r) in &tapes {
            tape.backward(*nll, (r - baseline) / scale, lm.params_mut());
        }
        lm.params_mut().adam_step(cfg.lr);
        reward_sum += kahan_sum(rewards.iter().copied());
        reward_n += rewards.len();
    }
    if g_steps > 0 {
        divergence_guard(lm, sub_seed(cfg.seed, "pg.guard"))?;
    }
    let disc_loss = disc_phase(lm, disc, real_pool, cfg, d_steps, "pg")?;
    let denom = if reward_n == 0 { 1.0 } else { reward_n as f64 };
    Ok(RoundStats {
        mean_reward: reward_sum / denom,
        gen_loss: gen_loss_sum / denom,
        disc_loss,
        g_steps,
        d_steps,
    })
}

/// One relaxed round: `g_steps` generator updates where each sample is a
/// stack of Gumbel-softmax rows at the given temperature, scored by the
/// frozen discriminator through its embedding matrix, under the
/// non-saturating loss `softplus(-logit)`; then `d_steps` discriminator
/// updates on discrete samples.
pub fn relax_round(
    lm: &mut AutoregressiveLM,
    disc: &mut SeqDiscriminator,
    real_pool: &[TokenSeq],
    cfg: &TrainConfig,
    temperature: f64,
    g_steps: usize,
    d_steps: usize,
) -> Result<RoundStats> {
    cfg.validate()?;
    if !(temperature > 0.0) || !temperature.is_finite() {
        return Err(Error::Param(format!("temperature {temperature} must be positive")));
    }
    if d_steps > 0 && real_pool.is_empty() {
        return Err(Error::Param("discriminator steps need a real sample pool".into()));
    }
    if disc.vocab().hash() != lm.vocab().hash() {
        return Err(Error::Param("generator and discriminator vocabularies differ".into()));
    }
    lm.params_mut().reset_moments();
    disc.params_mut().reset_moments();
    let slots = lm.vocab().content_size() + 1;
    let gumbel = Gumbel::new(0.0, 1.0)
        .map_err(|e| Error::Param(format!("gumbel distribution: {e}")))?;
    let mut reward_sum = 0.0;
    let mut reward_n = 0usize;
    let mut gen_loss_sum = 0.0;
    for g in 0..g_steps {
        let mut rng = ChaCha12Rng::seed_from_u64(sub_seed(cfg.seed, &format!("relax.gumbel.{g}")));
        let scale = cfg.batch_size as f64;
        for _ in 0..cfg.batch_size {
            let mut noise = Tensor::zeros(lm.l_max(), slots);
            for t in 0..lm.l_max() {
                for j in 0..slots {
                    noise.set(t, j, gumbel.sample(&mut rng));
                }
            }
            let mut tape = Tape::new();
            let (_, logit) = build_relaxed_sample(
                &mut tape,
                lm.params(),
                lm.vocab(),
                lm.l_max(),
                lm.hidden(),
                disc,
                &noise,
                temperature,
            )?;
            let neg = tape.affine(logit, -1.0, 0.0);
            let loss = tape.softplus(neg);
            let value = tape.value(loss).scalar_value();
            if !value.is_finite() {
                return Err(Error::NonFinite(format!("relaxed generator loss {value}")));
            }
            gen_loss_sum += value;
            reward_sum += sigmoid(tape.value(logit).scalar_value());
            reward_n += 1;
            tape.backward(loss, 1.0 / scale, lm.params_mut());
        }
        lm.params_mut().adam_step(cfg.lr);
    }
    if g_steps > 0 {
        divergence_guard(lm, sub_seed(cfg.seed, "relax.guard"))?;
    }
    let disc_loss = disc_phase(lm, disc, real_pool, cfg, d_steps, "relax")?;
    let denom = if reward_n == 0 { 1.0 } else { reward_n as f64 };
    Ok(RoundStats {
        mean_reward: reward_sum / denom,
        gen_loss: gen_loss_sum / denom,
        disc_loss,
        g_steps,
        d_steps,
    })
}

/// Unrolls the generator for `l_max` relaxed steps on `tape`, reading
/// generator parameters from `store`. Each step adds the given Gumbel noise
/// row to the logits, divides by the temperature, and takes a softmax; the
/// relaxed row is fed back through the generator's own embedding matrix and
/// forward through the frozen discriminator's, flanked by its marker rows.
/// Returns the `[l_max, slots]` stack of relaxed rows and the
/// discriminator logit node.
fn build_relaxed_sample(
    tape: &mut Tape,
    store: &ParamStore,
    vocab: &Vocab,
    l_max: usize,
    hidden: usize,
    disc: &SeqDiscriminator,
    noise: &Tensor,
    temperature: f64,
) -> Result<(NodeId, NodeId)> {
    let slots = vocab.content_size() + 1;
    if noise.shape() != (l_max, slots) {
        return Err(Error::Param(format!(
            "noise shape {:?} does not match {} steps over {} slots",
            noise.shape(),
            l_max,
            slots
        )));
    }
    let emb = tape.param(store, "emb");
    let gru = gru_param_nodes(tape, store, "gru");
    let w = tape.param(store, "head.w");
    let b = tape.param(store, "head.b");
    let mut slot_ids: Vec<usize> = vocab.content_ids().map(|id| id as usize).collect();
    slot_ids.push(crate::corpus::EOS as usize);
    let m_lm = tape.embed_rows(emb, slot_ids);
    let mut x = tape.embed_rows(emb, vec![BOS as usize]);
    let mut h = tape.constant(Tensor::zeros(1, hidden));
    let mut rows: Option<NodeId> = None;
    for t in 0..l_max {
        h = gru_cell(tape, &gru, x, h);
        let lin = tape.matmul(h, w);
        let mut lin = tape.add_bias(lin, b);
        if t == 0 {
            let mut m = Tensor::zeros(1, slots);
            m.set(0, slots - 1, MASK);
            let m = tape.constant(m);
            lin = tape.add(lin, m);
        }
        let g_row = tape.constant(
            Tensor::from_vec(1, slots, noise.row_slice(t).to_vec()).expect("noise row"),
        );
        let noisy = tape.add(lin, g_row);
        let scaled = tape.affine(noisy, 1.0 / temperature, 0.0);
        let y = tape.softmax_rows(scaled);
        rows = Some(match rows {
            None => y,
            Some(prev) => tape.concat_rows(prev, y),
        });
        x = tape.matmul(y, m_lm);
    }
    let rows = rows.expect("at least one step");
    let (bos_row, eos_row) = disc.marker_rows();
    let m_disc = tape.constant(disc.slot_embedding());
    let soft = tape.matmul(rows, m_disc);
    let top = tape.constant(bos_row);
    let bottom = tape.constant(eos_row);
    let frames = tape.concat_rows(top, soft);
    let frames = tape.concat_rows(frames, bottom);
    let logit = disc.build_logit_from_frames(tape, frames, false);
    Ok((rows, logit))
}

/// Asserts the generator still assigns finite log likelihood to its own
/// samples.
fn divergence_guard(lm: &AutoregressiveLM, seed: u64) -> Result<()> {
    for x in &lm.sample(GUARD_SAMPLES, 1.0, seed)? {
        let lp = lm.exact_seq_logprob(x)?;
        if !lp.is_finite() {
            return Err(Error::NonFinite(format!(
                "generator log likelihood {lp} on its own sample"
            )));
        }
    }
    Ok(())
}

/// Runs `d_steps` discriminator batch updates against the current
/// generator; returns the mean cross-entropy per step.
fn disc_phase(
    lm: &AutoregressiveLM,
    disc: &mut SeqDiscriminator,
    real_pool: &[TokenSeq],
    cfg: &TrainConfig,
    d_steps: usize,
    tag: &str,
) -> Result<f64> {
    let mut loss_sum = 0.0;
    for d in 0..d_steps {
        let k = cfg.batch_size.min(real_pool.len());
        let mut rng =
            ChaCha12Rng::seed_from_u64(sub_seed(cfg.seed, &format!("{tag}.disc.real.{d}")));
        let idx = rand::seq::index::sample(&mut rng, real_pool.len(), k);
        let real: Vec<TokenSeq> = idx.iter().map(|i| real_pool[i].clone()).collect();
        let generated = lm.sample(k, 1.0, sub_seed(cfg.seed, &format!("{tag}.disc.gen.{d}")))?;
        loss_sum += disc_batch_update(disc, &real, &generated, cfg.lr)?;
    }
    Ok(if d_steps == 0 { 0.0 } else { loss_sum / d_steps as f64 })
}

/// One optimizer step of binary cross-entropy on a real batch (label 1)
/// and a generated batch (label 0); returns the mean loss.
fn disc_batch_update(
    disc: &mut SeqDiscriminator,
    real: &[TokenSeq],
    generated: &[TokenSeq],
    lr: f64,
) -> Result<f64> {
    let total = (real.len() + generated.len()) as f64;
    let seed = 1.0 / total;
    let mut loss_sum = 0.0;
    let labeled = real
        .iter()
        .map(|x| (x, true))
        .chain(generated.iter().map(|x| (x, false)));
    for (x, is_real) in labeled {
        let mut tape = Tape::new();
        let z = disc.build_logit(&mut tape, x, true)?;
        let sp = tape.softplus(z);
        let loss = if is_real {
            let neg = tape.affine(z, -1.0, 0.0);
            tape.add(sp, neg)
        } else {
            sp
        };
        let value = tape.value(loss).scalar_value();
        if !value.is_finite() {
            return Err(Error::NonFinite(format!("discriminator loss {value}")));
        }
        loss_sum += value;
        tape.backward(loss, seed, disc.params_mut());
    }
    disc.params_mut().adam_step(lr);
    Ok(loss_sum / total)
}
