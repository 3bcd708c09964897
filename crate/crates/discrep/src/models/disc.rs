//! Binary sequence discriminator: real versus generated.
//!
//! Sequences are framed as begin-marker, content tokens, end-marker, then
//! encoded either by temporal convolutions (widths 2 and 3, max-pooled) or
//! by a GRU whose final state feeds the scorer. The scorer head starts at
//! zero, so an untrained discriminator outputs exactly one half everywhere.
//!
//! Scoring has a tape-free path in the same operation order as the
//! training graph; the two agree bit for bit. For relaxed generator
//! training the graph can also be built from soft embedding frames with the
//! discriminator's parameters held constant.

use std::path::Path;
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;

use crate::corpus::{validate_seq, SplitCorpus, TokenSeq, Vocab, BOS, EOS};
use crate::metrics::{abs_discrepancy, approx_discrepancy, ScoreSet};
use crate::nnet::checkpoint::{params_hash, read_params, write_params};
use crate::nnet::layers::{gru_cell, gru_cell_math, gru_init, gru_param_nodes, GruRefs};
use crate::nnet::math::{matvec, sigmoid};
use crate::nnet::params::glorot;
use crate::nnet::{NodeId, ParamStore, Tape, Tensor, TrainConfig};
use crate::util::sub_seed;
use crate::{Error, Result};

use super::log::{TrainEpoch, TrainLog};
use super::{expect_kv, parse_usize};

const CONV_WIDTHS: [usize; 2] = [2, 3];

/// Sequence encoder family.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DiscEncoder {
    /// Temporal convolutions over frame windows, max-pooled over time.
    Conv,
    /// GRU over frames; the final state is the encoding.
    Recurrent,
}

impl DiscEncoder {
    fn name(self) -> &'static str {
        match self {
            DiscEncoder::Conv => "conv",
            DiscEncoder::Recurrent => "recurrent",
        }
    }
}

impl FromStr for DiscEncoder {
    type Err = Error;

    fn from_str(s: &str) -> Result<DiscEncoder> {
        match s {
            "conv" => Ok(DiscEncoder::Conv),
            "recurrent" => Ok(DiscEncoder::Recurrent),
            other => Err(Error::Param(format!(
                "unknown encoder {other:?}, expected conv or recurrent"
            ))),
        }
    }
}

/// Architecture hyper-parameters for [`SeqDiscriminator`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DiscConfig {
    pub embed_dim: usize,
    /// Filters per convolution width (conv encoder only).
    pub filters: usize,
    pub hidden: usize,
    pub encoder: DiscEncoder,
}

/// Binary classifier over token sequences.
#[derive(Debug, Clone)]
pub struct SeqDiscriminator {
    vocab: Vocab,
    cfg: DiscConfig,
    l_max: usize,
    params: ParamStore,
}

impl SeqDiscriminator {
    pub fn new(vocab: Vocab, cfg: DiscConfig, l_max: usize, seed: u64) -> Result<SeqDiscriminator> {
        if cfg.embed_dim == 0 || cfg.filters == 0 || cfg.hidden == 0 || l_max == 0 {
            return Err(Error::Param("model dimensions must be positive".into()));
        }
        let mut rng = ChaCha12Rng::seed_from_u64(seed);
        let mut params = ParamStore::new();
        params.insert("emb", glorot(&mut rng, vocab.size(), cfg.embed_dim))?;
        match cfg.encoder {
            DiscEncoder::Conv => {
                for w in CONV_WIDTHS {
                    params.insert(&format!("conv{w}.w"), glorot(&mut rng, w * cfg.embed_dim, cfg.filters))?;
                    params.insert(&format!("conv{w}.b"), Tensor::zeros(1, cfg.filters))?;
                }
                params.insert("dense.w", glorot(&mut rng, CONV_WIDTHS.len() * cfg.filters, cfg.hidden))?;
                params.insert("dense.b", Tensor::zeros(1, cfg.hidden))?;
            }
            DiscEncoder::Recurrent => {
                gru_init(&mut params, "gru", cfg.embed_dim, cfg.hidden, &mut rng)?;
            }
        }
        params.insert("out.w", Tensor::zeros(cfg.hidden, 1))?;
        params.insert("out.b", Tensor::zeros(1, 1))?;
        Ok(SeqDiscriminator { vocab, cfg, l_max, params })
    }

    /// Rebuilds a discriminator around existing parameters.
    pub fn from_parts(vocab: Vocab, cfg: DiscConfig, l_max: usize, params: ParamStore) -> Result<SeqDiscriminator> {
        let fresh = SeqDiscriminator::new(vocab, cfg, l_max, 0)?;
        if params.names() != fresh.params.names() {
            return Err(Error::Structural("parameter names do not match the architecture".into()));
        }
        for name in params.names() {
            if params.tensor(&name).shape() != fresh.params.tensor(&name).shape() {
                return Err(Error::Structural(format!("parameter {name} has the wrong shape")));
            }
        }
        Ok(SeqDiscriminator { params, ..fresh })
    }

    pub fn vocab(&self) -> &Vocab {
        &self.vocab
    }

    pub fn cfg(&self) -> DiscConfig {
        self.cfg
    }

    pub fn l_max(&self) -> usize {
        self.l_max
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

    fn frame_ids(x: &TokenSeq) -> Vec<usize> {
        let mut ids = Vec::with_capacity(x.len() + 2);
        ids.push(BOS as usize);
        ids.extend(x.ids().iter().map(|&t| t as usize));
        ids.push(EOS as usize);
        ids
    }

    /// Raw score logit via plain slice math; no tape involved.
    pub fn logit(&self, x: &TokenSeq) -> Result<f64> {
        validate_seq(&self.vocab, self.l_max, x)?;
        let emb = self.params.tensor("emb");
        let ids = Self::frame_ids(x);
        let encoded: Vec<f64> = match self.cfg.encoder {
            DiscEncoder::Conv => {
                let mut pooled = Vec::with_capacity(CONV_WIDTHS.len() * self.cfg.filters);
                for w in CONV_WIDTHS {
                    let cw = self.params.tensor(&format!("conv{w}.w"));
                    let cb = self.params.tensor(&format!("conv{w}.b"));
                    let mut best = vec![f64::NEG_INFINITY; self.cfg.filters];
                    for start in 0..=(ids.len() - w) {
                        let mut window = Vec::with_capacity(w * self.cfg.embed_dim);
                        for j in 0..w {
                            window.extend_from_slice(emb.row_slice(ids[start + j]));
                        }
                        let mut act = matvec(&window, cw);
                        for (j, a) in act.iter_mut().enumerate() {
                            *a += cb.get(0, j);
                            if !(*a > 0.0) {
                                *a = 0.0;
                            }
                        }
                        for (b, a) in best.iter_mut().zip(&act) {
                            if *a > *b {
                                *b = *a;
                            }
                        }
                    }
                    pooled.extend(best);
                }
                let dw = self.params.tensor("dense.w");
                let db = self.params.tensor("dense.b");
                let mut hid = matvec(&pooled, dw);
                for (j, v) in hid.iter_mut().enumerate() {
                    *v += db.get(0, j);
                    if !(*v > 0.0) {
                        *v = 0.0;
                    }
                }
                hid
            }
            DiscEncoder::Recurrent => {
                let refs = GruRefs::from_store(&self.params, "gru");
                let mut h = vec![0.0; self.cfg.hidden];
                for &id in &ids {
                    h = gru_cell_math(&refs, emb.row_slice(id), &h);
                }
                h
            }
        };
        let ow = self.params.tensor("out.w");
        let ob = self.params.tensor("out.b");
        Ok(matvec(&encoded, ow)[0] + ob.get(0, 0))
    }

    /// Score in (0, 1); sigmoid of the logit.
    pub fn score(&self, x: &TokenSeq) -> Result<f64> {
        Ok(sigmoid(self.logit(x)?))
    }

    pub fn score_batch(&self, xs: &[TokenSeq]) -> Result<Vec<f64>> {
        xs.iter().map(|x| self.score(x)).collect()
    }

    /// Appends the logit graph for a discrete sequence. With `trainable`
    /// the parameters are gradient leaves; otherwise they enter as
    /// constants and the graph is differentiable only through inputs.
    pub fn build_logit(&self, tape: &mut Tape, x: &TokenSeq, trainable: bool) -> Result<NodeId> {
        validate_seq(&self.vocab, self.l_max, x)?;
        let emb = self.param_node(tape, "emb", trainable);
        let frames = tape.embed_rows(emb, Self::frame_ids(x));
        Ok(self.build_logit_from_frames(tape, frames, trainable))
    }

    /// Appends the logit graph on top of pre-built embedding frames of
    /// shape `[len + 2, embed_dim]` (markers included). Soft inputs from a
    /// relaxed generator enter here.
    pub fn build_logit_from_frames(&self, tape: &mut Tape, frames: NodeId, trainable: bool) -> NodeId {
        let encoded = match self.cfg.encoder {
            DiscEncoder::Conv => {
                let mut pooled: Option<NodeId> = None;
                for w in CONV_WIDTHS {
                    let cw = self.param_node(tape, &format!("conv{w}.w"), trainable);
                    let cb = self.param_node(tape, &format!("conv{w}.b"), trainable);
                    let win = tape.windows(frames, w);
                    let lin = tape.matmul(win, cw);
                    let lin = tape.add_bias(lin, cb);
                    let act = tape.relu(lin);
                    let best = tape.max_cols(act);
                    pooled = Some(match pooled {
                        None => best,
                        Some(prev) => tape.concat_cols(prev, best),
                    });
                }
                let dw = self.param_node(tape, "dense.w", trainable);
                let db = self.param_node(tape, "dense.b", trainable);
                let lin = tape.matmul(pooled.expect("two widths"), dw);
                let lin = tape.add_bias(lin, db);
                tape.relu(lin)
            }
            DiscEncoder::Recurrent => {
                let gru = if trainable {
                    gru_param_nodes(tape, &self.params, "gru")
                } else {
                    self.frozen_gru_nodes(tape)
                };
                let rows = tape.value(frames).rows();
                let mut h = tape.constant(Tensor::zeros(1, self.cfg.hidden));
                for t in 0..rows {
                    let frame = tape.embed_rows(frames, vec![t]);
                    h = gru_cell(tape, &gru, frame, h);
                }
                h
            }
        };
        let ow = self.param_node(tape, "out.w", trainable);
        let ob = self.param_node(tape, "out.b", trainable);
        let lin = tape.matmul(encoded, ow);
        let out = tape.add_bias(lin, ob);
        out
    }

    fn param_node(&self, tape: &mut Tape, name: &str, trainable: bool) -> NodeId {
        if trainable {
            tape.param(&self.params, name)
        } else {
            tape.constant(self.params.tensor(name).clone())
        }
    }

    fn frozen_gru_nodes(&self, tape: &mut Tape) -> crate::nnet::GruParams {
        crate::nnet::GruParams {
            wz: self.param_node(tape, "gru.wz", false),
            uz: self.param_node(tape, "gru.uz", false),
            bz: self.param_node(tape, "gru.bz", false),
            wr: self.param_node(tape, "gru.wr", false),
            ur: self.param_node(tape, "gru.ur", false),
            br: self.param_node(tape, "gru.br", false),
            wh: self.param_node(tape, "gru.wh", false),
            uh: self.param_node(tape, "gru.uh", false),
            bh: self.param_node(tape, "gru.bh", false),
        }
    }

    /// Embedding rows for the begin marker, the given token ids, and the
    /// end marker, as plain tensors for soft-input graph construction.
    pub fn marker_rows(&self) -> (Tensor, Tensor) {
        let emb = self.params.tensor("emb");
        let row = |id: usize| {
            Tensor::from_vec(1, self.cfg.embed_dim, emb.row_slice(id).to_vec()).expect("row copy")
        };
        (row(BOS as usize), row(EOS as usize))
    }

    /// Embedding matrix whose row `j` embeds output slot `j` of a generator
    /// over the same vocabulary: content slots first, then the end marker.
    pub fn slot_embedding(&self) -> Tensor {
        let emb = self.params.tensor("emb");
        let v = self.vocab.content_size();
        let mut data = Vec::with_capacity((v + 1) * self.cfg.embed_dim);
        for id in self.vocab.content_ids() {
            data.extend_from_slice(emb.row_slice(id as usize));
        }
        data.extend_from_slice(emb.row_slice(EOS as usize));
        Tensor::from_vec(v + 1, self.cfg.embed_dim, data).expect("slot rows")
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut text = String::new();
        text.push_str("kind disc\n");
        text.push_str(&format!("vocab_hash {}\n", self.vocab.hash()));
        text.push_str(&format!("tokens {}\n", self.vocab.content_tokens().join(" ")));
        text.push_str(&format!("l_max {}\n", self.l_max));
        text.push_str(&format!("embed_dim {}\n", self.cfg.embed_dim));
        text.push_str(&format!("filters {}\n", self.cfg.filters));
        text.push_str(&format!("hidden {}\n", self.cfg.hidden));
        text.push_str(&format!("encoder {}\n", self.cfg.encoder.name()));
        write_params(&mut text, &self.params);
        std::fs::write(path, text)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<SeqDiscriminator> {
        let text = std::fs::read_to_string(path)?;
        let mut lines = text.lines();
        let kind = expect_kv(&mut lines, "kind")?;
        if kind != "disc" {
            return Err(Error::Parse(format!(
                "expected a discriminator checkpoint, found kind {kind:?}"
            )));
        }
        let hash = expect_kv(&mut lines, "vocab_hash")?;
        let tokens = expect_kv(&mut lines, "tokens")?;
        let vocab = Vocab::new(&tokens.split_whitespace().collect::<Vec<_>>())?;
        if vocab.hash() != hash {
            return Err(Error::Parse("vocabulary hash does not match its tokens".into()));
        }
        let l_max = parse_usize(&expect_kv(&mut lines, "l_max")?, "l_max")?;
        let embed_dim = parse_usize(&expect_kv(&mut lines, "embed_dim")?, "embed_dim")?;
        let filters = parse_usize(&expect_kv(&mut lines, "filters")?, "filters")?;
        let hidden = parse_usize(&expect_kv(&mut lines, "hidden")?, "hidden")?;
        let encoder: DiscEncoder = expect_kv(&mut lines, "encoder")?.parse()?;
        let cfg = DiscConfig { embed_dim, filters, hidden, encoder };
        let params = ParamStore::from_params(read_params(&mut lines)?)?;
        SeqDiscriminator::from_parts(vocab, cfg, l_max, params)
    }
}

/// Binary cross-entropy training with dev-accuracy model selection.
///
/// Side A carries label 1 (real), side B label 0 (generated). Each epoch
/// logs the loss plus discrepancy statistics on a sampled dev batch; the
/// dev metric driving selection and early stopping is full-dev accuracy.
pub fn disc_train(
    disc: &SeqDiscriminator,
    splits: &SplitCorpus,
    cfg: TrainConfig,
) -> Result<(SeqDiscriminator, TrainLog)> {
    cfg.validate()?;
    if !splits.is_balanced() {
        return Err(Error::Param("discriminator training needs balanced sides".into()));
    }
    let mut work = disc.clone();
    work.params_mut().reset_moments();
    let mut examples: Vec<(&TokenSeq, f64)> = Vec::new();
    examples.extend(splits.train_a.iter().map(|x| (x, 1.0)));
    examples.extend(splits.train_b.iter().map(|x| (x, 0.0)));
    let mut best_params = work.params().clone();
    let mut best_acc = f64::NEG_INFINITY;
    let mut best_epoch = None;
    let mut log = TrainLog::default();
    let mut rng = ChaCha12Rng::seed_from_u64(sub_seed(cfg.seed, "disc.shuffle"));
    let mut order: Vec<usize> = (0..examples.len()).collect();
    let mut stale = 0usize;
    for epoch in 0..cfg.max_epochs {
        use rand::seq::SliceRandom;
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        for chunk in order.chunks(cfg.batch_size) {
            let seed = 1.0 / chunk.len() as f64;
            for &i in chunk {
                let (x, label) = examples[i];
                let mut tape = Tape::new();
                let z = work.build_logit(&mut tape, x, true)?;
                let sp = tape.softplus(z);
                let loss = if label > 0.5 {
                    let neg = tape.affine(z, -1.0, 0.0);
                    tape.add(sp, neg)
                } else {
                    sp
                };
                let value = tape.value(loss).scalar_value();
                if !value.is_finite() {
                    return Err(Error::NonFinite(format!("training loss {value}")));
                }
                loss_sum += value;
                tape.backward(loss, seed, work.params_mut());
            }
            work.params_mut().adam_step(cfg.lr);
        }
        let (batch_stats, dev_acc) = dev_stats(&work, splits, cfg, epoch)?;
        log.epochs.push(TrainEpoch {
            epoch,
            loss: loss_sum / examples.len() as f64,
            dev_metric: dev_acc,
            u_d: Some(batch_stats.0),
            u_theta: Some(batch_stats.1),
            d_a: Some(batch_stats.2),
            d_s: Some(batch_stats.3),
        });
        if dev_acc > best_acc {
            best_acc = dev_acc;
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
        SeqDiscriminator { params: best_params, ..work.clone() }
    } else {
        disc.clone()
    };
    Ok((best, log))
}

/// Per-epoch dev statistics: `(u_d, u_θ, d_a, d_s)` on a sampled batch and
/// accuracy over the full dev split.
fn dev_stats(
    disc: &SeqDiscriminator,
    splits: &SplitCorpus,
    cfg: TrainConfig,
    epoch: usize,
) -> Result<((f64, f64, f64, f64), f64)> {
    let real_all = disc.score_batch(&splits.dev_a)?;
    let gen_all = disc.score_batch(&splits.dev_b)?;
    let k = cfg.batch_size.min(real_all.len()).min(gen_all.len());
    let mut rng =
        ChaCha12Rng::seed_from_u64(sub_seed(cfg.seed, &format!("disc.devbatch.{epoch}")));
    let pick = |scores: &[f64], rng: &mut ChaCha12Rng| -> Vec<f64> {
        rand::seq::index::sample(rng, scores.len(), k)
            .iter()
            .map(|i| scores[i])
            .collect()
    };
    let batch = ScoreSet::new(pick(&real_all, &mut rng), pick(&gen_all, &mut rng))?;
    let (u_d, u_theta, d_a) = approx_discrepancy(&batch);
    let (d_s, _) = abs_discrepancy(&batch, 0.5)?;
    let full = ScoreSet::new(real_all, gen_all)?;
    let (_, accuracy) = abs_discrepancy(&full, 0.5)?;
    Ok(((u_d, u_theta, d_a, d_s), accuracy))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{make_source, split};

    fn seq(ids: &[u32]) -> TokenSeq {
        TokenSeq::new(ids.to_vec()).unwrap()
    }

    fn cfg(encoder: DiscEncoder) -> DiscConfig {
        DiscConfig { embed_dim: 5, filters: 4, hidden: 6, encoder }
    }

    fn tiny(encoder: DiscEncoder, seed: u64) -> SeqDiscriminator {
        SeqDiscriminator::new(Vocab::synthetic(3).unwrap(), cfg(encoder), 5, seed).unwrap()
    }

    fn train_cfg(epochs: usize, seed: u64) -> TrainConfig {
        TrainConfig { lr: 0.02, batch_size: 16, max_epochs: epochs, seed, patience: 30 }
    }

    #[test]
    fn untrained_score_is_exactly_half() {
        for enc in [DiscEncoder::Conv, DiscEncoder::Recurrent] {
            let d = tiny(enc, 3);
            assert_eq!(d.score(&seq(&[3, 4, 5])).unwrap(), 0.5);
            assert_eq!(d.score(&seq(&[5])).unwrap(), 0.5);
        }
    }

    #[test]
    fn score_is_deterministic_and_in_range() {
        let mut d = tiny(DiscEncoder::Conv, 7);
        // Push the head off zero so scores move away from one half.
        let n = d.params().tensor("out.w").len();
        for i in 0..n {
            d.params_mut().set_param_elem("out.w", i, 0.3 * (i as f64 + 1.0));
        }
        for ids in [vec![3], vec![4, 5, 3], vec![5, 5, 5, 5, 5]] {
            let x = seq(&ids);
            let a = d.score(&x).unwrap();
            let b = d.score(&x).unwrap();
            assert_eq!(a.to_bits(), b.to_bits());
            assert!(a > 0.0 && a < 1.0);
        }
    }

    #[test]
    fn tape_and_math_logits_agree_bitwise() {
        for enc in [DiscEncoder::Conv, DiscEncoder::Recurrent] {
            let mut d = tiny(enc, 11);
            let pool = make_source(5, 3, 1, 5, 0.8).unwrap().sample_corpus(40, 2).unwrap();
            let splits = split(&pool[..20], &pool[20..], 0.3, 4).unwrap();
            let (trained, _) = disc_train(&d, &splits, train_cfg(3, 5)).unwrap();
            d = trained;
            for x in &pool[..6] {
                let math = d.logit(x).unwrap();
                let mut tape = Tape::new();
                let z = d.build_logit(&mut tape, x, true).unwrap();
                assert_eq!(math.to_bits(), tape.value(z).scalar_value().to_bits());
            }
        }
    }

    #[test]
    fn frozen_graph_leaves_no_parameter_gradients() {
        let d = tiny(DiscEncoder::Conv, 5);
        let mut params = d.params().clone();
        let mut tape = Tape::new();
        let z = d.build_logit(&mut tape, &seq(&[3, 4]), false).unwrap();
        tape.backward(z, 1.0, &mut params);
        assert!(params.names().iter().all(|n| params.grad(n).is_none()));
    }

    #[test]
    fn identical_sources_are_indistinguishable() {
        let source = make_source(17, 3, 1, 5, 0.8).unwrap();
        let a = source.sample_corpus(250, 1).unwrap();
        let b = source.sample_corpus(250, 2).unwrap();
        let splits = split(&a, &b, 0.3, 9).unwrap();
        let d = tiny(DiscEncoder::Conv, 1);
        let (trained, log) = disc_train(&d, &splits, train_cfg(15, 3)).unwrap();
        let best = log.best_epoch.unwrap();
        let acc = log.epochs[best].dev_metric;
        assert!((acc - 0.5).abs() <= 0.08, "dev accuracy {acc}");
        let scores = ScoreSet::new(
            trained.score_batch(&splits.test_a).unwrap(),
            trained.score_batch(&splits.test_b).unwrap(),
        )
        .unwrap();
        let (d_s, _) = abs_discrepancy(&scores, 0.5).unwrap();
        assert!(d_s.abs() <= 0.15, "d_s {d_s}");
    }

    #[test]
    fn disjoint_token_usage_is_separable() {
        // Class A uses only token 3, class B only token 4.
        let a: Vec<TokenSeq> = (0..200).map(|i| seq(&vec![3; 1 + i % 5])).collect();
        let b: Vec<TokenSeq> = (0..200).map(|i| seq(&vec![4; 1 + i % 5])).collect();
        for enc in [DiscEncoder::Conv, DiscEncoder::Recurrent] {
            let splits = split(&a, &b, 0.3, 5).unwrap();
            let d = tiny(enc, 2);
            let (trained, log) = disc_train(&d, &splits, train_cfg(25, 7)).unwrap();
            let best = log.best_epoch.unwrap();
            assert!(log.epochs[best].dev_metric >= 0.95, "{enc:?} stuck below 0.95");
            let scores = ScoreSet::new(
                trained.score_batch(&splits.test_a).unwrap(),
                trained.score_batch(&splits.test_b).unwrap(),
            )
            .unwrap();
            let (d_s, _) = abs_discrepancy(&scores, 0.5).unwrap();
            assert!(d_s >= 0.9, "{enc:?} test d_s {d_s}");
        }
    }

    #[test]
    fn converged_dev_batches_track_the_constraint() {
        let a: Vec<TokenSeq> = (0..150).map(|i| seq(&vec![3; 1 + i % 4])).collect();
        let b: Vec<TokenSeq> = (0..150).map(|i| seq(&vec![5; 1 + i % 4])).collect();
        let splits = split(&a, &b, 0.3, 8).unwrap();
        let d = tiny(DiscEncoder::Conv, 9);
        let (_, log) = disc_train(&d, &splits, train_cfg(25, 11)).unwrap();
        let last = log.epochs.last().unwrap();
        let residual = ((last.u_d.unwrap() + last.u_theta.unwrap()) / 2.0 - 0.5).abs();
        assert!(residual <= 0.15, "late residual {residual}");
    }

    #[test]
    fn unbalanced_splits_are_rejected() {
        let source = make_source(4, 2, 1, 4, 0.8).unwrap();
        let a = source.sample_corpus(40, 1).unwrap();
        let b = source.sample_corpus(40, 2).unwrap();
        let mut splits = split(&a, &b, 0.25, 3).unwrap();
        splits.train_b.pop();
        let d = SeqDiscriminator::new(Vocab::synthetic(2).unwrap(), cfg(DiscEncoder::Conv), 4, 1).unwrap();
        assert!(matches!(disc_train(&d, &splits, train_cfg(2, 1)), Err(Error::Param(_))));
    }

    #[test]
    fn gradients_match_finite_differences_for_both_encoders() {
        for enc in [DiscEncoder::Conv, DiscEncoder::Recurrent] {
            let mut d = tiny(enc, 13);
            // Train briefly so the check runs at a generic point.
            let pool = make_source(7, 3, 1, 5, 0.9).unwrap().sample_corpus(30, 4).unwrap();
            let splits = split(&pool[..15], &pool[15..], 0.3, 1).unwrap();
            let (trained, _) = disc_train(&d, &splits, train_cfg(2, 9)).unwrap();
            d = trained;
            let x = seq(&[3, 5, 4]);
            let mut params = d.params().clone();
            let report = crate::nnet::grad_check(&mut params, 1e-4, |tape, store| {
                let probe =
                    SeqDiscriminator::from_parts(d.vocab().clone(), d.cfg(), d.l_max(), store.clone())?;
                let z = probe.build_logit(tape, &x, true)?;
                // Softplus keeps the loss scalar and smooth.
                Ok(tape.softplus(z))
            })
            .unwrap();
            assert!(report.pass(), "{enc:?} max rel err {}", report.max_err());
        }
    }

    #[test]
    fn checkpoint_round_trip_is_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        for enc in [DiscEncoder::Conv, DiscEncoder::Recurrent] {
            let path = dir.path().join(format!("{}.ckpt", enc.name()));
            let pool = make_source(9, 3, 1, 5, 0.8).unwrap().sample_corpus(30, 7).unwrap();
            let splits = split(&pool[..15], &pool[15..], 0.3, 2).unwrap();
            let (d, _) = disc_train(&tiny(enc, 21), &splits, train_cfg(2, 3)).unwrap();
            d.save(&path).unwrap();
            let loaded = SeqDiscriminator::load(&path).unwrap();
            assert_eq!(loaded.params_hash(), d.params_hash());
            assert_eq!(loaded.cfg(), d.cfg());
            let x = seq(&[4, 4, 3]);
            assert_eq!(loaded.score(&x).unwrap().to_bits(), d.score(&x).unwrap().to_bits());
        }
    }

    #[test]
    fn encoder_parse_round_trip() {
        assert_eq!("conv".parse::<DiscEncoder>().unwrap(), DiscEncoder::Conv);
        assert_eq!("recurrent".parse::<DiscEncoder>().unwrap(), DiscEncoder::Recurrent);
        assert!("dense".parse::<DiscEncoder>().is_err());
    }

    #[test]
    fn slot_embedding_matches_rows() {
        let d = tiny(DiscEncoder::Conv, 31);
        let m = d.slot_embedding();
        assert_eq!(m.shape(), (4, 5));
        let emb = d.params().tensor("emb");
        assert_eq!(m.row_slice(0), emb.row_slice(3));
        assert_eq!(m.row_slice(3), emb.row_slice(EOS as usize));
        let (bos_row, eos_row) = d.marker_rows();
        assert_eq!(bos_row.row_slice(0), emb.row_slice(BOS as usize));
        assert_eq!(eos_row.row_slice(0), emb.row_slice(EOS as usize));
    }

    #[test]
    fn training_determinism_is_bitwise() {
        let source = make_source(3, 2, 1, 4, 0.7).unwrap();
        let a = source.sample_corpus(60, 5).unwrap();
        let b = source.sample_corpus(60, 6).unwrap();
        let splits = split(&a, &b, 0.25, 1).unwrap();
        let d = SeqDiscriminator::new(Vocab::synthetic(2).unwrap(), cfg(DiscEncoder::Conv), 4, 8).unwrap();
        let run = || disc_train(&d, &splits, train_cfg(4, 19)).unwrap().0.params_hash();
        assert_eq!(run(), run());
    }
}
