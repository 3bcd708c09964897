//! The two learnable actors: an autoregressive sequence generator with
//! exact likelihoods, and a binary sequence discriminator.
//!
//! Both models are small recurrent or convolutional networks over the
//! shared [`crate::nnet`] tape, sized for exhaustively checkable synthetic
//! languages rather than natural text.

pub mod disc;
pub mod lm;
pub mod log;

pub use disc::{disc_train, DiscConfig, DiscEncoder, SeqDiscriminator};
pub use lm::{lm_finetune_mle, lm_train_mle, pooled_perplexity, AutoregressiveLM};
pub use log::{TrainEpoch, TrainLog};

use crate::{Error, Result};

/// Reads one `key value...` header line, enforcing the expected key.
pub(crate) fn expect_kv<'a, I>(lines: &mut I, key: &str) -> Result<String>
where
    I: Iterator<Item = &'a str>,
{
    let line = lines
        .next()
        .ok_or_else(|| Error::Parse(format!("checkpoint header: missing {key}")))?;
    let rest = line
        .strip_prefix(key)
        .and_then(|r| r.strip_prefix(' '))
        .ok_or_else(|| Error::Parse(format!("checkpoint header: expected {key}, got {line:?}")))?;
    Ok(rest.trim().to_string())
}

pub(crate) fn parse_usize(text: &str, what: &str) -> Result<usize> {
    text.parse()
        .map_err(|_| Error::Parse(format!("checkpoint header: bad {what}: {text:?}")))
}
