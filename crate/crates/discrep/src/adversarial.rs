//! Intervention experiments on a trained generator/discriminator pair.
//!
//! Three ways of pushing a generator after pre-training, plus the harness
//! that judges them:
//!
//! * [`hw_update`] fine-tunes the generator on self-samples filtered by a
//!   discriminator score band.
//! * [`pg_round`] runs one adversarial round with policy-gradient generator
//!   updates on discrete samples.
//! * [`relax_round`] runs one adversarial round with a Gumbel-softmax
//!   relaxation so the discriminator signal backpropagates end to end.
//! * [`third_party_eval`] measures a series of generator checkpoints with a
//!   freshly initialized and freshly trained discriminator per round, so the
//!   verdict never depends on the in-loop adversary.

pub mod eval;
pub mod hw;
pub mod rounds;

pub use eval::{
    measure_pair, third_party_eval, EvalConfig, MeasureConfig, RoundRecord, SeqSampler,
};
pub use hw::{
    hw_select, hw_select_scored, hw_update, table_bands, table_multipliers, BandSpec, HwConfig,
    HwReport,
};
pub use rounds::{pg_round, relax_round, RoundStats};
