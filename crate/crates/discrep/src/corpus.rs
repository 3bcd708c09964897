//! Token sequences, vocabularies, synthetic ground-truth sources with exact
//! probabilities, dataset splitting, and file I/O.
//!
//! Sequence lengths are modeled through an explicit EOS symbol: every
//! context row assigns positive probability to EOS, EOS is forced once a
//! sequence reaches `l_max`, and EOS is masked on the very first step so
//! that sequences always have length at least one. Together these make the
//! support finite and the total probability mass exactly one, which is what
//! enables exact enumeration oracles downstream.

use std::collections::HashMap;
use std::fs;
use std::io::Write as _;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;
use rand_distr::{Distribution, Gamma};

use crate::util::sub_seed;
use crate::{Error, Result};

pub type TokenId = u32;

/// Reserved symbol ids; content token ids start at `RESERVED`.
pub const BOS: TokenId = 0;
pub const EOS: TokenId = 1;
pub const PAD: TokenId = 2;
pub const RESERVED: usize = 3;

const RESERVED_NAMES: [&str; RESERVED] = ["<bos>", "<eos>", "<pad>"];

/// Token inventory: the three reserved symbols at fixed ids 0..2 followed by
/// contiguous content tokens.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocab {
    tokens: Vec<String>,
    index: HashMap<String, TokenId>,
}

impl Vocab {
    /// Builds a vocabulary from content token strings. Tokens must be
    /// distinct, non-empty, free of whitespace (the corpus file format is
    /// space-separated), and must not collide with the reserved names.
    pub fn new<S: AsRef<str>>(content: &[S]) -> Result<Vocab> {
        if content.is_empty() {
            return Err(Error::Param("vocabulary needs at least one content token".into()));
        }
        let mut tokens: Vec<String> = RESERVED_NAMES.iter().map(|s| s.to_string()).collect();
        let mut index = HashMap::new();
        for (i, name) in RESERVED_NAMES.iter().enumerate() {
            index.insert(name.to_string(), i as TokenId);
        }
        for tok in content {
            let tok = tok.as_ref();
            if tok.is_empty() || tok.chars().any(char::is_whitespace) {
                return Err(Error::Param(format!("invalid token {tok:?}")));
            }
            if index.contains_key(tok) {
                return Err(Error::Param(format!("duplicate token {tok:?}")));
            }
            index.insert(tok.to_string(), tokens.len() as TokenId);
            tokens.push(tok.to_string());
        }
        Ok(Vocab { tokens, index })
    }

    /// Synthetic vocabulary with content tokens `t0..t{n-1}`.
    pub fn synthetic(n: usize) -> Result<Vocab> {
        let names: Vec<String> = (0..n).map(|i| format!("t{i}")).collect();
        Vocab::new(&names)
    }

    /// Total number of symbols including the reserved ones.
    pub fn size(&self) -> usize {
        self.tokens.len()
    }

    /// Number of content tokens.
    pub fn content_size(&self) -> usize {
        self.tokens.len() - RESERVED
    }

    /// Content token ids in ascending order.
    pub fn content_ids(&self) -> impl Iterator<Item = TokenId> {
        (RESERVED as TokenId..self.size() as TokenId).collect::<Vec<_>>().into_iter()
    }

    pub fn is_content(&self, id: TokenId) -> bool {
        (id as usize) >= RESERVED && (id as usize) < self.size()
    }

    pub fn id(&self, token: &str) -> Option<TokenId> {
        self.index.get(token).copied()
    }

    pub fn token(&self, id: TokenId) -> Option<&str> {
        self.tokens.get(id as usize).map(String::as_str)
    }

    /// Content tokens in id order.
    pub fn content_tokens(&self) -> &[String] {
        &self.tokens[RESERVED..]
    }

    /// Stable content hash used to cross-check checkpoints against corpora.
    pub fn hash(&self) -> String {
        crate::util::sha256_hex(self.content_tokens().join("\n").as_bytes())
    }
}

/// A sequence of content token ids. BOS/EOS are implicit; length is at
/// least one.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct TokenSeq {
    ids: Vec<TokenId>,
}

impl TokenSeq {
    pub fn new(ids: Vec<TokenId>) -> Result<TokenSeq> {
        if ids.is_empty() {
            return Err(Error::Param("a token sequence must be non-empty".into()));
        }
        Ok(TokenSeq { ids })
    }

    pub fn ids(&self) -> &[TokenId] {
        &self.ids
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }
}

/// Checks that every id is a content token of `vocab` and that the length
/// is within `1..=l_max`.
pub fn validate_seq(vocab: &Vocab, l_max: usize, x: &TokenSeq) -> Result<()> {
    if x.len() > l_max {
        return Err(Error::Param(format!(
            "sequence length {} exceeds l_max {}",
            x.len(),
            l_max
        )));
    }
    for &id in x.ids() {
        if !vocab.is_content(id) {
            return Err(Error::Param(format!("id {id} is not a content token")));
        }
    }
    Ok(())
}

/// An order-k Markov distribution over token sequences with an explicit EOS
/// symbol and exact per-sequence probabilities.
///
/// Transition rows are indexed by the last `order` symbols (BOS-padded on
/// the left) and lay out `[content tokens in id order..., EOS]`. EOS is
/// masked and the row renormalized on the first step, and EOS is forced
/// (probability factor 1) once a sequence reaches `l_max`, so the enumerated
/// support carries total mass one.
#[derive(Debug, Clone, PartialEq)]
pub struct GroundTruthSource {
    vocab: Vocab,
    order: usize,
    l_max: usize,
    rows: Vec<Vec<f64>>,
}

/// Context symbols are coded base `V + 1`: BOS is 0, content token `t` is
/// `t - RESERVED + 1`.
fn ctx_code(prefix: &[TokenId], order: usize, base: usize) -> usize {
    let mut code = 0usize;
    for i in 0..order {
        let sym = if i < order - prefix.len().min(order) {
            0
        } else {
            let idx = prefix.len() - (order - i);
            prefix[idx] as usize - RESERVED + 1
        };
        code = code * base + sym;
    }
    code
}

impl GroundTruthSource {
    /// Builds a source from explicit transition rows. `rows` must have
    /// `(V + 1)^order` entries of `V + 1` probabilities each (content tokens
    /// in id order, then EOS), every row summing to one within 1e-12 with a
    /// strictly positive EOS entry below one.
    pub fn from_rows(vocab: Vocab, order: usize, l_max: usize, rows: Vec<Vec<f64>>) -> Result<GroundTruthSource> {
        if order < 1 {
            return Err(Error::Param("order must be at least 1".into()));
        }
        if l_max < 1 {
            return Err(Error::Param("l_max must be at least 1".into()));
        }
        let v = vocab.content_size();
        let want_rows = (v + 1).pow(order as u32);
        if rows.len() != want_rows {
            return Err(Error::Param(format!(
                "expected {want_rows} transition rows, got {}",
                rows.len()
            )));
        }
        for (i, row) in rows.iter().enumerate() {
            if row.len() != v + 1 {
                return Err(Error::Param(format!("row {i} has {} entries, expected {}", row.len(), v + 1)));
            }
            let mut sum = 0.0;
            for &p in row {
                if !p.is_finite() || p < 0.0 {
                    return Err(Error::Param(format!("row {i} contains an invalid probability {p}")));
                }
                sum += p;
            }
            if (sum - 1.0).abs() > 1e-12 {
                return Err(Error::Param(format!("row {i} sums to {sum}, not 1")));
            }
            let eos = row[v];
            if eos <= 0.0 || eos >= 1.0 {
                return Err(Error::Param(format!("row {i} needs an EOS probability in (0,1), got {eos}")));
            }
        }
        Ok(GroundTruthSource { vocab, order, l_max, rows })
    }

    pub fn vocab(&self) -> &Vocab {
        &self.vocab
    }

    pub fn order(&self) -> usize {
        self.order
    }

    pub fn l_max(&self) -> usize {
        self.l_max
    }

    pub fn rows(&self) -> &[Vec<f64>] {
        &self.rows
    }

    /// Next-symbol distribution after `prefix`, laid out
    /// `[content tokens..., EOS]`. On the first step EOS is masked and the
    /// row renormalized over content tokens.
    pub fn next_dist(&self, prefix: &[TokenId]) -> Vec<f64> {
        let v = self.vocab.content_size();
        let code = ctx_code(prefix, self.order, v + 1);
        let mut dist = self.rows[code].clone();
        if prefix.is_empty() {
            let content_mass = 1.0 - dist[v];
            for p in dist.iter_mut().take(v) {
                *p /= content_mass;
            }
            dist[v] = 0.0;
        }
        dist
    }

    /// Exact probability of `x`: the product of transition probabilities
    /// including the terminating EOS step; the forced EOS at `l_max`
    /// contributes factor 1.
    pub fn exact_prob(&self, x: &TokenSeq) -> Result<f64> {
        validate_seq(&self.vocab, self.l_max, x)?;
        let v = self.vocab.content_size();
        let mut p = 1.0;
        for (t, &id) in x.ids().iter().enumerate() {
            let dist = self.next_dist(&x.ids()[..t]);
            p *= dist[id as usize - RESERVED];
        }
        if x.len() < self.l_max {
            let dist = self.next_dist(x.ids());
            p *= dist[v];
        }
        Ok(p)
    }

    /// Draws `n` i.i.d. ancestral samples; deterministic per seed.
    pub fn sample_corpus(&self, n: usize, seed: u64) -> Result<Vec<TokenSeq>> {
        if n == 0 {
            return Err(Error::Param("sample count must be at least 1".into()));
        }
        let mut rng = ChaCha12Rng::seed_from_u64(seed);
        let mut out = Vec::with_capacity(n);
        for _ in 0..n {
            out.push(self.sample_one(&mut rng));
        }
        Ok(out)
    }

    fn sample_one(&self, rng: &mut ChaCha12Rng) -> TokenSeq {
        let v = self.vocab.content_size();
        let mut ids: Vec<TokenId> = Vec::new();
        while ids.len() < self.l_max {
            let dist = self.next_dist(&ids);
            let slot = sample_slot(&dist, rng.random::<f64>());
            if slot == v {
                break;
            }
            ids.push((slot + RESERVED) as TokenId);
        }
        TokenSeq::new(ids).expect("first step masks EOS, so length >= 1")
    }

    /// Number of sequences in the support: sum over lengths 1..=l_max of V^l.
    pub fn support_size(&self) -> u128 {
        support_size(self.vocab.content_size(), self.l_max)
    }

    /// Enumerates the full support with exact probabilities, in
    /// length-then-lexicographic order. Fails with a capacity error when the
    /// support exceeds `cap`.
    pub fn enumerate_support(&self, cap: usize) -> Result<Vec<(TokenSeq, f64)>> {
        let seqs = enumerate_all_seqs(self.vocab.content_size(), self.l_max, cap)?;
        let mut out = Vec::with_capacity(seqs.len());
        for s in seqs {
            let p = self.exact_prob(&s)?;
            out.push((s, p));
        }
        Ok(out)
    }
}

/// Picks a slot from a probability row given a uniform draw, falling back to
/// the last positive-probability slot if rounding leaves `u` beyond the
/// cumulative total.
pub(crate) fn sample_slot(dist: &[f64], u: f64) -> usize {
    let mut cum = 0.0;
    let mut last_pos = 0;
    for (i, &p) in dist.iter().enumerate() {
        if p > 0.0 {
            last_pos = i;
        }
        cum += p;
        if u < cum {
            return if p > 0.0 { i } else { last_pos };
        }
    }
    last_pos
}

/// Support size for `v` content tokens and maximum length `l_max`.
pub fn support_size(v: usize, l_max: usize) -> u128 {
    let mut total: u128 = 0;
    let mut pow: u128 = 1;
    for _ in 1..=l_max {
        pow = pow.saturating_mul(v as u128);
        total = total.saturating_add(pow);
    }
    total
}

/// All content sequences of length 1..=l_max in length-then-lexicographic
/// order, or a capacity error if there are more than `cap`.
pub fn enumerate_all_seqs(v: usize, l_max: usize, cap: usize) -> Result<Vec<TokenSeq>> {
    let needed = support_size(v, l_max);
    if needed > cap as u128 {
        return Err(Error::Capacity { needed, cap: cap as u128 });
    }
    let mut out = Vec::with_capacity(needed as usize);
    for l in 1..=l_max {
        let mut digits = vec![0usize; l];
        loop {
            let ids: Vec<TokenId> = digits.iter().map(|&d| (d + RESERVED) as TokenId).collect();
            out.push(TokenSeq::new(ids).expect("l >= 1"));
            let mut i = l;
            loop {
                if i == 0 {
                    break;
                }
                i -= 1;
                digits[i] += 1;
                if digits[i] < v {
                    break;
                }
                digits[i] = 0;
                if i == 0 {
                    digits.clear();
                    break;
                }
            }
            if digits.is_empty() {
                break;
            }
        }
        if l < l_max {
            // reset for the next length
        }
    }
    Ok(out)
}

/// Draws a seeded random source: each transition row is a symmetric
/// Dirichlet draw with the given concentration, floored away from exact
/// zero so every row keeps a strictly positive EOS probability.
pub fn make_source(
    seed: u64,
    vocab_size: usize,
    order: usize,
    l_max: usize,
    concentration: f64,
) -> Result<GroundTruthSource> {
    if vocab_size < 2 {
        return Err(Error::Param("vocab_size must be at least 2 content tokens".into()));
    }
    if order < 1 {
        return Err(Error::Param("order must be at least 1".into()));
    }
    if l_max < 1 {
        return Err(Error::Param("l_max must be at least 1".into()));
    }
    if !(concentration > 0.0 && concentration.is_finite()) {
        return Err(Error::Param(format!("concentration must be positive, got {concentration}")));
    }
    let vocab = Vocab::synthetic(vocab_size)?;
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    let gamma = Gamma::new(concentration, 1.0)
        .map_err(|e| Error::Param(format!("invalid concentration: {e}")))?;
    let n_rows = (vocab_size + 1).pow(order as u32);
    let mut rows = Vec::with_capacity(n_rows);
    for _ in 0..n_rows {
        let mut row: Vec<f64> = (0..=vocab_size)
            .map(|_| {
                let g: f64 = gamma.sample(&mut rng);
                if g > 1e-12 {
                    g
                } else {
                    1e-12
                }
            })
            .collect();
        let sum: f64 = row.iter().sum();
        for p in row.iter_mut() {
            *p /= sum;
        }
        // Renormalized rows can miss 1 by an ulp; absorb it into the largest entry.
        let sum: f64 = row.iter().sum();
        let imax = row
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.partial_cmp(b.1).expect("finite"))
            .expect("non-empty")
            .0;
        row[imax] += 1.0 - sum;
        rows.push(row);
    }
    GroundTruthSource::from_rows(vocab, order, l_max, rows)
}

/// Six-way corpus partition with balanced classes: side A is real, side B
/// is generated.
#[derive(Debug, Clone)]
pub struct SplitCorpus {
    pub train_a: Vec<TokenSeq>,
    pub train_b: Vec<TokenSeq>,
    pub dev_a: Vec<TokenSeq>,
    pub dev_b: Vec<TokenSeq>,
    pub test_a: Vec<TokenSeq>,
    pub test_b: Vec<TokenSeq>,
}

impl SplitCorpus {
    pub fn is_balanced(&self) -> bool {
        self.train_a.len() == self.train_b.len()
            && self.dev_a.len() == self.dev_b.len()
            && self.test_a.len() == self.test_b.len()
    }
}

/// Shuffles a side and slices it into train / dev / test, holding out
/// `dev_fraction` of the data and halving the held-out part into dev and
/// test.
pub fn partition(
    seqs: &[TokenSeq],
    dev_fraction: f64,
    seed: u64,
) -> Result<(Vec<TokenSeq>, Vec<TokenSeq>, Vec<TokenSeq>)> {
    if seqs.is_empty() {
        return Err(Error::Param("cannot partition an empty corpus".into()));
    }
    if !(dev_fraction > 0.0 && dev_fraction < 1.0) {
        return Err(Error::Param(format!("dev_fraction must be in (0,1), got {dev_fraction}")));
    }
    let m = seqs.len();
    let held = (m as f64 * dev_fraction).floor() as usize;
    let n_dev = held / 2;
    let n_test = held - n_dev;
    let n_train = m - held;
    if n_train == 0 || n_dev == 0 || n_test == 0 {
        return Err(Error::Param(format!(
            "side of {m} sequences is too small to yield non-empty splits at dev_fraction {dev_fraction}"
        )));
    }
    let mut shuffled: Vec<TokenSeq> = seqs.to_vec();
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    shuffled.shuffle(&mut rng);
    let test = shuffled.split_off(n_train + n_dev);
    let dev = shuffled.split_off(n_train);
    Ok((shuffled, dev, test))
}

/// Builds a balanced six-way split: both sides are truncated to the smaller
/// side's size, then independently shuffled and partitioned with seeds
/// derived from `seed`.
pub fn split(
    real: &[TokenSeq],
    generated: &[TokenSeq],
    dev_fraction: f64,
    seed: u64,
) -> Result<SplitCorpus> {
    if real.is_empty() || generated.is_empty() {
        return Err(Error::Param("both sides of a split must be non-empty".into()));
    }
    let m = real.len().min(generated.len());
    let (train_a, dev_a, test_a) = partition(&real[..m], dev_fraction, sub_seed(seed, "split.real"))?;
    let (train_b, dev_b, test_b) =
        partition(&generated[..m], dev_fraction, sub_seed(seed, "split.gen"))?;
    Ok(SplitCorpus { train_a, train_b, dev_a, dev_b, test_a, test_b })
}

// ---------------------------------------------------------------------------
// File I/O
// ---------------------------------------------------------------------------

/// Writes one sequence per line, tokens space-separated.
pub fn write_corpus(path: &Path, vocab: &Vocab, seqs: &[TokenSeq]) -> Result<()> {
    let mut out = String::new();
    for s in seqs {
        let mut first = true;
        for &id in s.ids() {
            let tok = vocab
                .token(id)
                .ok_or_else(|| Error::Param(format!("id {id} is not in the vocabulary")))?;
            if !first {
                out.push(' ');
            }
            out.push_str(tok);
            first = false;
        }
        out.push('\n');
    }
    fs::write(path, out)?;
    Ok(())
}

pub fn read_corpus(path: &Path, vocab: &Vocab) -> Result<Vec<TokenSeq>> {
    let text = fs::read_to_string(path)?;
    let mut seqs = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let mut ids = Vec::new();
        for tok in line.split_whitespace() {
            let id = vocab
                .id(tok)
                .ok_or_else(|| Error::Parse(format!("{}:{}: unknown token {tok:?}", path.display(), lineno + 1)))?;
            if !vocab.is_content(id) {
                return Err(Error::Parse(format!(
                    "{}:{}: reserved token {tok:?} in corpus",
                    path.display(),
                    lineno + 1
                )));
            }
            ids.push(id);
        }
        if ids.is_empty() {
            return Err(Error::Parse(format!("{}:{}: empty sequence", path.display(), lineno + 1)));
        }
        seqs.push(TokenSeq::new(ids)?);
    }
    Ok(seqs)
}

/// Writes content tokens one per line; the line number is the token id
/// offset by the reserved count.
pub fn write_vocab(path: &Path, vocab: &Vocab) -> Result<()> {
    let mut out = String::new();
    for tok in vocab.content_tokens() {
        out.push_str(tok);
        out.push('\n');
    }
    fs::write(path, out)?;
    Ok(())
}

pub fn read_vocab(path: &Path) -> Result<Vocab> {
    let text = fs::read_to_string(path)?;
    let tokens: Vec<&str> = text.lines().filter(|l| !l.trim().is_empty()).collect();
    Vocab::new(&tokens)
}

/// Writes a source as a key-value document; probabilities are printed with
/// enough digits to round-trip bit-exactly.
pub fn write_source(path: &Path, source: &GroundTruthSource) -> Result<()> {
    let mut f = fs::File::create(path)?;
    writeln!(f, "order {}", source.order)?;
    writeln!(f, "l_max {}", source.l_max)?;
    writeln!(f, "tokens {}", source.vocab.content_tokens().join(" "))?;
    for row in &source.rows {
        let cells: Vec<String> = row.iter().map(|p| format!("{p:.17e}")).collect();
        writeln!(f, "row {}", cells.join(" "))?;
    }
    Ok(())
}

pub fn read_source(path: &Path) -> Result<GroundTruthSource> {
    let text = fs::read_to_string(path)?;
    let mut order: Option<usize> = None;
    let mut l_max: Option<usize> = None;
    let mut tokens: Option<Vec<String>> = None;
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let bad = |what: &str| Error::Parse(format!("{}:{}: {what}", path.display(), lineno + 1));
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let (key, rest) = line.split_once(' ').ok_or_else(|| bad("expected `key value`"))?;
        match key {
            "order" => order = Some(rest.trim().parse().map_err(|_| bad("bad order"))?),
            "l_max" => l_max = Some(rest.trim().parse().map_err(|_| bad("bad l_max"))?),
            "tokens" => tokens = Some(rest.split_whitespace().map(String::from).collect()),
            "row" => {
                let mut row = Vec::new();
                for cell in rest.split_whitespace() {
                    row.push(cell.parse::<f64>().map_err(|_| bad("bad probability"))?);
                }
                rows.push(row);
            }
            other => return Err(bad(&format!("unknown key {other:?}"))),
        }
    }
    let order = order.ok_or_else(|| Error::Parse(format!("{}: missing order", path.display())))?;
    let l_max = l_max.ok_or_else(|| Error::Parse(format!("{}: missing l_max", path.display())))?;
    let tokens = tokens.ok_or_else(|| Error::Parse(format!("{}: missing tokens", path.display())))?;
    let vocab = Vocab::new(&tokens)?;
    GroundTruthSource::from_rows(vocab, order, l_max, rows)
}
