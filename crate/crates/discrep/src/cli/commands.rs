//! Subcommand implementations: each one composes library calls into one
//! pipeline phase over a shared output directory.
//!
//! Every phase derives its randomness from the master seed under labels
//! unique to the phase (and, inside grids and loops, to the cell or round),
//! so reruns are bitwise reproducible and phases can be re-executed in any
//! order that respects their input artifacts.

use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::adversarial::{
    hw_update, measure_pair, pg_round, relax_round, table_bands, third_party_eval, EvalConfig,
    HwConfig, RoundRecord, SeqSampler,
};
use crate::corpus::{
    make_source, partition, read_corpus, read_source, split, support_size, write_corpus,
    write_source, write_vocab, GroundTruthSource,
};
use crate::metrics::oracle::OracleDensities;
use crate::metrics::DiscrepancyReport;
use crate::models::{disc_train, lm_train_mle, AutoregressiveLM, SeqDiscriminator};
use crate::nnet::TrainConfig;
use crate::util::sub_seed;
use crate::{Error, Result};

use super::config::RunConfig;
use super::manifest::{LockGuard, Manifest};
use super::GanMode;

pub const SOURCE_FILE: &str = "source.txt";
pub const VOCAB_FILE: &str = "vocab.txt";
pub const REAL_TRAIN: &str = "real_train.txt";
pub const REAL_DEV: &str = "real_dev.txt";
pub const REAL_TEST: &str = "real_test.txt";
pub const LM_CKPT: &str = "lm.ckpt";
pub const LM_LOG: &str = "lm_train_log.csv";
pub const DISC_CKPT: &str = "disc.ckpt";
pub const DISC_LOG: &str = "disc_train_log.csv";
pub const REPORT_CSV: &str = "report.csv";
pub const REPORT_KV: &str = "report.kv";
pub const ORACLE_CSV: &str = "oracle.csv";
pub const HW_DS: &str = "hw_ds.csv";
pub const HW_DA: &str = "hw_da.csv";
pub const HW_COUNTS: &str = "hw_counts.csv";

const PROGRESS_HEADER: &str = "round,mean_reward,gen_loss,disc_loss\n";

/// One subcommand invocation: resolved configuration, the output directory
/// with its lock held, and the manifest to update.
struct Ctx {
    cfg: RunConfig,
    out: PathBuf,
    force: bool,
    manifest: Manifest,
    _lock: LockGuard,
}

impl Ctx {
    fn open(cfg: RunConfig, force: bool) -> Result<Ctx> {
        let out = cfg.out_dir.clone();
        fs::create_dir_all(&out)?;
        let lock = LockGuard::acquire(&out, force)?;
        let snapshot = serde_json::to_value(&cfg)
            .map_err(|e| Error::Structural(format!("config snapshot: {e}")))?;
        let manifest = Manifest::load_or_new(&out, cfg.master_seed, snapshot)?;
        Ok(Ctx { cfg, out, force, manifest, _lock: lock })
    }

    fn path(&self, rel: &str) -> PathBuf {
        self.out.join(rel)
    }

    /// Overwrite refusal: errors when `rel` already exists and `--force`
    /// was not given.
    fn claim(&self, rel: &str) -> Result<()> {
        let p = self.path(rel);
        if p.exists() && !self.force {
            return Err(Error::Exists(p));
        }
        Ok(())
    }

    /// Writes an artifact from memory and records its content hash.
    fn write(&mut self, rel: &str, contents: &str) -> Result<()> {
        let p = self.path(rel);
        if let Some(parent) = p.parent() {
            fs::create_dir_all(parent)?;
        }
        fs::write(&p, contents)?;
        self.manifest.record_artifact(rel, contents.as_bytes());
        Ok(())
    }

    /// Appends to an artifact and refreshes its recorded hash.
    fn append(&mut self, rel: &str, text: &str) -> Result<()> {
        let p = self.path(rel);
        let mut f = fs::OpenOptions::new().create(true).append(true).open(&p)?;
        f.write_all(text.as_bytes())?;
        drop(f);
        let bytes = fs::read(&p)?;
        self.manifest.record_artifact(rel, &bytes);
        Ok(())
    }

    /// Records a file that a library save routine wrote directly.
    fn record(&mut self, rel: &str) -> Result<()> {
        let bytes = fs::read(self.path(rel))?;
        self.manifest.record_artifact(rel, &bytes);
        Ok(())
    }

    fn finish(mut self, command: &str, started: Instant) -> Result<()> {
        self.manifest.record_phase(command, started.elapsed().as_secs_f64());
        self.manifest.save(&self.out)
    }
}

fn require(ctx: &Ctx, rel: &str, produced_by: &str) -> Result<PathBuf> {
    let p = ctx.path(rel);
    if !p.exists() {
        return Err(Error::Param(format!(
            "{} is missing; run `{produced_by}` first",
            p.display()
        )));
    }
    Ok(p)
}

fn load_source(ctx: &Ctx) -> Result<GroundTruthSource> {
    read_source(&require(ctx, SOURCE_FILE, "synth")?)
}

fn load_lm(ctx: &Ctx) -> Result<AutoregressiveLM> {
    AutoregressiveLM::load(&require(ctx, LM_CKPT, "pretrain")?)
}

fn load_disc(ctx: &Ctx) -> Result<SeqDiscriminator> {
    SeqDiscriminator::load(&require(ctx, DISC_CKPT, "pretrain")?)
}

/// Measures a generator against fresh source samples with a freshly trained
/// discriminator. Returns the report and the discriminator's hash.
fn measure_vs_source(
    ctx: &Ctx,
    source: &GroundTruthSource,
    gen_lm: &AutoregressiveLM,
    seed: u64,
) -> Result<(DiscrepancyReport, String)> {
    let n = ctx.cfg.eval.n_per_side;
    let real = source.sample_corpus(n, sub_seed(seed, "real"))?;
    let generated = gen_lm.sample(n, 1.0, sub_seed(seed, "gen"))?;
    let mcfg = ctx.cfg.measure_config()?;
    let (report, disc, _log) = measure_pair(
        &real,
        &generated,
        source.vocab(),
        source.l_max(),
        &mcfg,
        sub_seed(seed, "measure"),
    )?;
    Ok((report, disc.params_hash()))
}

/// Samples the source, partitions the real side, and writes the corpus
/// files everything downstream reads.
pub fn cmd_synth(cfg: RunConfig, force: bool) -> Result<()> {
    let started = Instant::now();
    let mut ctx = Ctx::open(cfg, force)?;
    for rel in [SOURCE_FILE, VOCAB_FILE, REAL_TRAIN, REAL_DEV, REAL_TEST] {
        ctx.claim(rel)?;
    }
    let s = ctx.cfg.source.clone();
    let master = ctx.cfg.master_seed;
    let source =
        make_source(sub_seed(master, "source"), s.vocab_size, s.order, s.l_max, s.concentration)?;
    let real = source.sample_corpus(s.n_per_side, sub_seed(master, "synth.real"))?;
    let (train, dev, test) = partition(&real, s.dev_fraction, sub_seed(master, "synth.partition"))?;

    write_source(&ctx.path(SOURCE_FILE), &source)?;
    ctx.record(SOURCE_FILE)?;
    write_vocab(&ctx.path(VOCAB_FILE), source.vocab())?;
    ctx.record(VOCAB_FILE)?;
    for (rel, seqs) in [(REAL_TRAIN, &train), (REAL_DEV, &dev), (REAL_TEST, &test)] {
        write_corpus(&ctx.path(rel), source.vocab(), seqs)?;
        ctx.record(rel)?;
    }
    println!(
        "synth: {} sequences partitioned into {} train / {} dev / {} test",
        real.len(),
        train.len(),
        dev.len(),
        test.len()
    );
    ctx.finish("synth", started)
}

/// Trains the generator by maximum likelihood on the real training split,
/// then trains the paired discriminator on real-versus-generated samples.
pub fn cmd_pretrain(cfg: RunConfig, force: bool) -> Result<()> {
    let started = Instant::now();
    let mut ctx = Ctx::open(cfg, force)?;
    for rel in [LM_CKPT, LM_LOG, DISC_CKPT, DISC_LOG] {
        ctx.claim(rel)?;
    }
    let source = load_source(&ctx)?;
    let vocab = source.vocab().clone();
    let train = read_corpus(&require(&ctx, REAL_TRAIN, "synth")?, &vocab)?;
    let dev = read_corpus(&require(&ctx, REAL_DEV, "synth")?, &vocab)?;

    let master = ctx.cfg.master_seed;
    let lm0 = AutoregressiveLM::new(
        vocab.clone(),
        ctx.cfg.lm.embed_dim,
        ctx.cfg.lm.hidden,
        source.l_max(),
        sub_seed(master, "lm.init"),
    )?;
    let lm_tc = ctx.cfg.lm.train.to_train_config(sub_seed(master, "lm.train"));
    let (lm, lm_log) = lm_train_mle(&lm0, &train, &dev, lm_tc)?;
    lm.save(&ctx.path(LM_CKPT))?;
    ctx.record(LM_CKPT)?;
    ctx.write(LM_LOG, &lm_log.to_csv_string(ctx.cfg.measure.ema_alpha)?)?;
    println!(
        "pretrain: generator converged after {} epochs (dev perplexity {:.4})",
        lm_log.len(),
        lm_log.best_epoch.and_then(|i| lm_log.epochs.get(i)).map_or(f64::NAN, |e| e.dev_metric)
    );

    let n = ctx.cfg.source.n_per_side;
    let real_pool = source.sample_corpus(n, sub_seed(master, "pretrain.real"))?;
    let gen_pool = lm.sample(n, 1.0, sub_seed(master, "pretrain.gen"))?;
    let splits =
        split(&real_pool, &gen_pool, ctx.cfg.source.dev_fraction, sub_seed(master, "pretrain.split"))?;
    let disc0 = SeqDiscriminator::new(
        vocab,
        ctx.cfg.disc.to_disc_config()?,
        source.l_max(),
        sub_seed(master, "disc.init"),
    )?;
    let disc_tc = ctx.cfg.disc.train.to_train_config(sub_seed(master, "disc.train"));
    let (disc, disc_log) = disc_train(&disc0, &splits, disc_tc)?;
    disc.save(&ctx.path(DISC_CKPT))?;
    ctx.record(DISC_CKPT)?;
    ctx.write(DISC_LOG, &disc_log.to_csv_string(ctx.cfg.measure.ema_alpha)?)?;
    println!(
        "pretrain: discriminator converged after {} epochs (dev accuracy {:.4})",
        disc_log.len(),
        disc_log.best_epoch.and_then(|i| disc_log.epochs.get(i)).map_or(f64::NAN, |e| e.dev_metric)
    );
    ctx.finish("pretrain", started)
}

/// Runs the full estimation procedure for the trained generator: fresh
/// samples from both sides, a fresh discriminator trained to convergence,
/// and a report on the held-out test split. With `measure.oracle` the exact
/// enumeration statistics are written next to the estimate; with
/// `measure.control` the generated side is drawn from the source too.
pub fn cmd_measure(cfg: RunConfig, force: bool) -> Result<()> {
    let started = Instant::now();
    let mut ctx = Ctx::open(cfg, force)?;
    ctx.claim(REPORT_CSV)?;
    ctx.claim(REPORT_KV)?;
    if ctx.cfg.measure.oracle {
        ctx.claim(ORACLE_CSV)?;
    }
    let source = load_source(&ctx)?;
    let lm = load_lm(&ctx)?;
    if ctx.cfg.measure.oracle {
        let needed = support_size(source.vocab().content_size(), source.l_max());
        let cap = ctx.cfg.measure.support_cap;
        if needed > cap as u128 {
            return Err(Error::Capacity { needed, cap: cap as u128 });
        }
    }
    let master = ctx.cfg.master_seed;
    let n = ctx.cfg.source.n_per_side;
    let real = source.sample_corpus(n, sub_seed(master, "measure.real"))?;
    let generated = if ctx.cfg.measure.control {
        source.sample_corpus(n, sub_seed(master, "measure.control"))?
    } else {
        lm.sample(n, 1.0, sub_seed(master, "measure.gen"))?
    };
    let mcfg = ctx.cfg.measure_config()?;
    let (report, _disc, _log) = measure_pair(
        &real,
        &generated,
        source.vocab(),
        source.l_max(),
        &mcfg,
        sub_seed(master, "measure"),
    )?;
    ctx.write(REPORT_CSV, &report.to_csv_string())?;
    ctx.write(REPORT_KV, &report.to_kv_string())?;
    println!(
        "measure: d_s {:.4} d_a {:.4} accuracy {:.4} (n {} per side{})",
        report.d_s,
        report.d_a,
        report.accuracy,
        n,
        if ctx.cfg.measure.control { ", null control" } else { "" }
    );

    if ctx.cfg.measure.oracle {
        let oracle = OracleDensities::from_pair(
            source.vocab(),
            source.l_max(),
            &source,
            &lm,
            ctx.cfg.measure.support_cap,
        )?;
        let (u_d, u_theta) = oracle.exact_expectations();
        let text = format!(
            "tv_exact,da_exact,u_d_exact,u_theta_exact,support_size\n{},{},{},{},{}\n",
            oracle.tv_exact(),
            oracle.da_exact(),
            u_d,
            u_theta,
            oracle.len()
        );
        ctx.write(ORACLE_CSV, &text)?;
        println!("measure: oracle tv {:.4} da {:.4} over {} sequences", oracle.tv_exact(), oracle.da_exact(), oracle.len());
    }
    ctx.finish("measure", started)
}

fn fmt_mult(m: f64) -> String {
    format!("{m}")
}

fn matrix_csv(header_cols: &[String], reference: f64, bands: &[String], cells: &[Vec<Option<f64>>]) -> String {
    let mut out = format!("band,{}\n", header_cols.join(","));
    let ref_row: Vec<String> = header_cols.iter().map(|_| format!("{reference}")).collect();
    out.push_str(&format!("pretrain,{}\n", ref_row.join(",")));
    for (label, row) in bands.iter().zip(cells) {
        let rendered: Vec<String> =
            row.iter().map(|c| c.map_or_else(|| "NA".to_string(), |v| format!("{v}"))).collect();
        out.push_str(&format!("{label},{}\n", rendered.join(",")));
    }
    out
}

/// Runs the score-band selection grid: for every band and sample
/// multiplier, fine-tune a copy of the pre-trained generator on its own
/// band-filtered samples and measure the result against the source. The
/// pre-trained generator's measurement is replicated across the first data
/// row as the reference; aborted cells are reported as `NA`.
pub fn cmd_hw(cfg: RunConfig, force: bool) -> Result<()> {
    let started = Instant::now();
    let mut ctx = Ctx::open(cfg, force)?;
    for rel in [HW_DS, HW_DA, HW_COUNTS] {
        ctx.claim(rel)?;
    }
    let source = load_source(&ctx)?;
    let lm = load_lm(&ctx)?;
    let disc = load_disc(&ctx)?;
    let train_size = read_corpus(&require(&ctx, REAL_TRAIN, "synth")?, source.vocab())?.len();

    let master = ctx.cfg.master_seed;
    let bands = table_bands();
    let mults = ctx.cfg.hw.multipliers.clone();
    if mults.is_empty() {
        return Err(Error::Param("hw.multipliers must not be empty".into()));
    }
    let tc = ctx.cfg.lm.train.to_train_config(0);

    let (reference, _) = measure_vs_source(&ctx, &source, &lm, sub_seed(master, "hw.ref"))?;
    println!("hw: pretrain reference d_s {:.4} d_a {:.4}", reference.d_s, reference.d_a);

    let mut ds = vec![vec![None; mults.len()]; bands.len()];
    let mut da = vec![vec![None; mults.len()]; bands.len()];
    let mut counts = String::from("band,multiplier,generated,selected,resampled,aborted\n");
    for (bi, band) in bands.iter().enumerate() {
        for (mi, &m) in mults.iter().enumerate() {
            let hw_cfg = HwConfig {
                sample_multiplier: m,
                band: *band,
                fine_tune_epochs: ctx.cfg.hw.fine_tune_epochs,
                seed: sub_seed(master, &format!("hw.cell.{bi}.{mi}")),
            };
            let (tuned, rep) = hw_update(&lm, &disc, train_size, &hw_cfg, &tc)?;
            counts.push_str(&format!(
                "{},{},{},{},{},{}\n",
                band.label(),
                fmt_mult(m),
                rep.generated,
                rep.selected,
                rep.resampled,
                rep.aborted
            ));
            if rep.aborted {
                println!("hw: band {} x{} aborted (nothing selected)", band.label(), fmt_mult(m));
                continue;
            }
            let (r, _) = measure_vs_source(
                &ctx,
                &source,
                &tuned,
                sub_seed(master, &format!("hw.measure.{bi}.{mi}")),
            )?;
            ds[bi][mi] = Some(r.d_s);
            da[bi][mi] = Some(r.d_a);
            println!(
                "hw: band {} x{} selected {}/{} d_s {:.4} d_a {:.4}",
                band.label(),
                fmt_mult(m),
                rep.selected,
                rep.generated,
                r.d_s,
                r.d_a
            );
        }
    }
    let header_cols: Vec<String> = mults.iter().map(|&m| fmt_mult(m)).collect();
    let band_labels: Vec<String> = bands.iter().map(|b| b.label()).collect();
    ctx.write(HW_DS, &matrix_csv(&header_cols, reference.d_s, &band_labels, &ds))?;
    ctx.write(HW_DA, &matrix_csv(&header_cols, reference.d_a, &band_labels, &da))?;
    ctx.write(HW_COUNTS, &counts)?;
    ctx.finish("hw", started)
}

#[derive(Debug, Serialize, Deserialize)]
struct GanState {
    completed_rounds: usize,
}

fn gan_dir(mode: GanMode) -> String {
    format!("gan_{}", mode.name())
}

fn gan_ckpt_rel(mode: GanMode, round: usize) -> String {
    format!("{}/gan_r{round:03}.ckpt", gan_dir(mode))
}

fn read_gan_state(path: &Path) -> Result<GanState> {
    serde_json::from_str(&fs::read_to_string(path)?)
        .map_err(|e| Error::Parse(format!("{}: {e}", path.display())))
}

/// Measures the current generator for the round ledger.
fn gan_round_record(
    ctx: &Ctx,
    source: &GroundTruthSource,
    lm: &AutoregressiveLM,
    round: usize,
    mode: GanMode,
) -> Result<RoundRecord> {
    let t = Instant::now();
    let seed = sub_seed(ctx.cfg.master_seed, &format!("gan.{}.eval.{round}", mode.name()));
    let (report, disc_hash) = measure_vs_source(ctx, source, lm, seed)?;
    Ok(RoundRecord {
        round,
        label: format!("r{round:03}"),
        report,
        disc_hash,
        seconds: t.elapsed().as_secs_f64(),
    })
}

/// Runs adversarial update rounds from the pre-trained checkpoints,
/// checkpointing the generator and appending a ledger row after every
/// round. Round 0 is the pre-trained generator before any update. An
/// interrupted run resumes from the last completed round; a completed run
/// is refused without `--force`, which starts it over.
pub fn cmd_gan(cfg: RunConfig, force: bool, mode: GanMode) -> Result<()> {
    let started = Instant::now();
    let mut ctx = Ctx::open(cfg, force)?;
    let source = load_source(&ctx)?;
    let real_pool = read_corpus(&require(&ctx, REAL_TRAIN, "synth")?, source.vocab())?;

    let dir_rel = gan_dir(mode);
    let state_rel = format!("{dir_rel}/state.json");
    let rounds_rel = format!("{dir_rel}/rounds.csv");
    let progress_rel = format!("{dir_rel}/progress.csv");
    let inloop_rel = format!("{dir_rel}/disc_inloop.ckpt");

    let g = ctx.cfg.gan.clone();
    let master = ctx.cfg.master_seed;

    let state_path = ctx.path(&state_rel);
    let mut fresh = !state_path.exists();
    if !fresh {
        let st = read_gan_state(&state_path)?;
        if st.completed_rounds >= g.rounds {
            if !ctx.force {
                return Err(Error::Exists(ctx.path(&dir_rel)));
            }
            fs::remove_dir_all(ctx.path(&dir_rel))?;
            fresh = true;
        }
    }

    let (mut lm, mut disc, start_round) = if fresh {
        fs::create_dir_all(ctx.path(&dir_rel))?;
        let lm = load_lm(&ctx)?;
        let disc = load_disc(&ctx)?;
        lm.save(&ctx.path(&gan_ckpt_rel(mode, 0)))?;
        ctx.record(&gan_ckpt_rel(mode, 0))?;
        disc.save(&ctx.path(&inloop_rel))?;
        ctx.record(&inloop_rel)?;
        let rec = gan_round_record(&ctx, &source, &lm, 0, mode)?;
        println!("gan {}: round 0 d_s {:.4} d_a {:.4}", mode.name(), rec.report.d_s, rec.report.d_a);
        ctx.write(&rounds_rel, &format!("{}\n{}\n", RoundRecord::csv_header(), rec.csv_row()))?;
        ctx.write(&progress_rel, PROGRESS_HEADER)?;
        ctx.write(&state_rel, &gan_state_json(0)?)?;
        (lm, disc, 0)
    } else {
        let st = read_gan_state(&state_path)?;
        let lm = AutoregressiveLM::load(&ctx.path(&gan_ckpt_rel(mode, st.completed_rounds)))?;
        let disc = SeqDiscriminator::load(&ctx.path(&inloop_rel))?;
        println!("gan {}: resuming after round {}", mode.name(), st.completed_rounds);
        (lm, disc, st.completed_rounds)
    };

    for r in (start_round + 1)..=g.rounds {
        let tc = TrainConfig {
            lr: g.lr,
            batch_size: g.batch,
            max_epochs: 1,
            patience: 1,
            seed: sub_seed(master, &format!("gan.{}.round.{r}", mode.name())),
        };
        let stats = match mode {
            GanMode::Pg => pg_round(&mut lm, &mut disc, &real_pool, &tc, g.g_steps, g.d_steps)?,
            GanMode::Relax => relax_round(
                &mut lm,
                &mut disc,
                &real_pool,
                &tc,
                g.temperature,
                g.g_steps,
                g.d_steps,
            )?,
        };
        lm.save(&ctx.path(&gan_ckpt_rel(mode, r)))?;
        ctx.record(&gan_ckpt_rel(mode, r))?;
        disc.save(&ctx.path(&inloop_rel))?;
        ctx.record(&inloop_rel)?;
        ctx.append(
            &progress_rel,
            &format!("{},{},{},{}\n", r, stats.mean_reward, stats.gen_loss, stats.disc_loss),
        )?;
        let rec = gan_round_record(&ctx, &source, &lm, r, mode)?;
        println!(
            "gan {}: round {r} reward {:.4} d_s {:.4} d_a {:.4}",
            mode.name(),
            stats.mean_reward,
            rec.report.d_s,
            rec.report.d_a
        );
        ctx.append(&rounds_rel, &format!("{}\n", rec.csv_row()))?;
        ctx.write(&state_rel, &gan_state_json(r)?)?;
    }
    ctx.finish(&format!("gan-{}", mode.name()), started)
}

fn gan_state_json(completed_rounds: usize) -> Result<String> {
    serde_json::to_string(&GanState { completed_rounds })
        .map(|s| s + "\n")
        .map_err(|e| Error::Structural(format!("gan state serialization: {e}")))
}

/// Re-evaluates the saved round checkpoints with one fresh discriminator
/// per round against fresh source samples, writing the verdict ledger.
pub fn cmd_eval_rounds(cfg: RunConfig, force: bool, mode: GanMode) -> Result<()> {
    let started = Instant::now();
    let mut ctx = Ctx::open(cfg, force)?;
    let out_rel = format!("eval_rounds_{}.csv", mode.name());
    ctx.claim(&out_rel)?;
    let source = load_source(&ctx)?;

    let state_rel = format!("{}/state.json", gan_dir(mode));
    let state_path = ctx.path(&state_rel);
    if !state_path.exists() {
        return Err(Error::Param(format!(
            "{} is missing; run `gan --mode {}` first",
            state_path.display(),
            mode.name()
        )));
    }
    let st = read_gan_state(&state_path)?;

    let mut lms = Vec::with_capacity(st.completed_rounds + 1);
    let mut labels = Vec::with_capacity(st.completed_rounds + 1);
    for r in 0..=st.completed_rounds {
        lms.push(AutoregressiveLM::load(&ctx.path(&gan_ckpt_rel(mode, r)))?);
        labels.push(format!("r{r:03}"));
    }
    let rounds: Vec<(&str, &dyn SeqSampler)> = labels
        .iter()
        .zip(&lms)
        .map(|(label, lm)| (label.as_str(), lm as &dyn SeqSampler))
        .collect();
    let ecfg = EvalConfig {
        n_per_side: ctx.cfg.eval.n_per_side,
        measure: ctx.cfg.measure_config()?,
        seed: sub_seed(ctx.cfg.master_seed, &format!("evalrounds.{}", mode.name())),
    };
    let records = third_party_eval(&rounds, &source, &ecfg)?;
    let mut text = format!("{}\n", RoundRecord::csv_header());
    for rec in &records {
        text.push_str(&rec.csv_row());
        text.push('\n');
        println!(
            "eval-rounds {}: {} d_s {:.4} [{:.4}, {:.4}]",
            mode.name(),
            rec.label,
            rec.report.d_s,
            rec.report.ci_d_s.0,
            rec.report.ci_d_s.1
        );
    }
    ctx.write(&out_rel, &text)?;
    ctx.finish(&format!("eval-rounds-{}", mode.name()), started)
}

fn read_csv_table(path: &Path) -> Result<(Vec<String>, Vec<Vec<String>>)> {
    let mut rdr = csv::Reader::from_path(path)
        .map_err(|e| Error::Parse(format!("{}: {e}", path.display())))?;
    let headers: Vec<String> =
        rdr.headers().map_err(|e| Error::Parse(format!("{}: {e}", path.display())))?
            .iter()
            .map(str::to_string)
            .collect();
    let mut rows = Vec::new();
    for record in rdr.records() {
        let record = record.map_err(|e| Error::Parse(format!("{}: {e}", path.display())))?;
        rows.push(record.iter().map(str::to_string).collect());
    }
    Ok((headers, rows))
}

fn project_columns(
    path: &Path,
    wanted: &[&str],
) -> Result<String> {
    let (headers, rows) = read_csv_table(path)?;
    let mut indices = Vec::with_capacity(wanted.len());
    for name in wanted {
        let idx = headers.iter().position(|h| h == name).ok_or_else(|| {
            Error::Parse(format!("{}: missing column {name}", path.display()))
        })?;
        indices.push(idx);
    }
    let mut out = format!("{}\n", wanted.join(","));
    for row in rows {
        let cells: Vec<&str> = indices.iter().map(|&i| row[i].as_str()).collect();
        out.push_str(&cells.join(","));
        out.push('\n');
    }
    Ok(out)
}

/// Bundles plot-ready series from previously produced artifacts into
/// `plots/`: the pre-training discrepancy trace, the selection grid in long
/// form, and one per-round series per adversarial mode. Only figures whose
/// inputs exist are built; artifact hashes are verified first.
pub fn cmd_report(cfg: RunConfig, force: bool) -> Result<()> {
    let started = Instant::now();
    let mut ctx = Ctx::open(cfg, force)?;
    ctx.manifest.verify(&ctx.out)?;

    let mut built = Vec::new();

    if ctx.path(DISC_LOG).exists() {
        let rel = "plots/fig_pretrain.csv";
        ctx.claim(rel)?;
        let text =
            project_columns(&ctx.path(DISC_LOG), &["epoch", "d_a", "d_s", "ema_d_a", "ema_d_s"])?;
        ctx.write(rel, &text)?;
        built.push(rel.to_string());
    }

    if ctx.path(HW_DS).exists() && ctx.path(HW_DA).exists() {
        let rel = "plots/fig_hw.csv";
        ctx.claim(rel)?;
        let (ds_hdr, ds_rows) = read_csv_table(&ctx.path(HW_DS))?;
        let (da_hdr, da_rows) = read_csv_table(&ctx.path(HW_DA))?;
        if ds_hdr != da_hdr || ds_rows.len() != da_rows.len() {
            return Err(Error::Parse("selection grids do not line up".into()));
        }
        let mut text = String::from("band,multiplier,d_s,d_a\n");
        for (ds_row, da_row) in ds_rows.iter().zip(&da_rows) {
            for (col, mult) in ds_hdr.iter().enumerate().skip(1) {
                text.push_str(&format!(
                    "{},{},{},{}\n",
                    ds_row[0], mult, ds_row[col], da_row[col]
                ));
            }
        }
        ctx.write(rel, &text)?;
        built.push(rel.to_string());
    }

    for mode in [GanMode::Pg, GanMode::Relax] {
        let src_rel = format!("eval_rounds_{}.csv", mode.name());
        if !ctx.path(&src_rel).exists() {
            continue;
        }
        let rel = format!("plots/fig_rounds_{}.csv", mode.name());
        ctx.claim(&rel)?;
        let text = project_columns(
            &ctx.path(&src_rel),
            &["round", "d_s", "ci_ds_lo", "ci_ds_hi", "d_a", "ci_da_lo", "ci_da_hi"],
        )?;
        ctx.write(&rel, &text)?;
        built.push(rel);
    }

    if built.is_empty() {
        return Err(Error::Param(
            "nothing to report: no pre-training log, selection grid, or round ledger found".into(),
        ));
    }
    println!("report: built {}", built.join(", "));
    ctx.finish("report", started)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny_config(out: &Path) -> RunConfig {
        let mut cfg = RunConfig::from_toml(
            r#"
            master_seed = 11

            [source]
            vocab_size = 3
            l_max = 3
            n_per_side = 80

            [lm]
            embed_dim = 4
            hidden = 5
            train = { lr = 0.05, batch_size = 16, max_epochs = 4, patience = 2 }

            [disc]
            embed_dim = 4
            filters = 3
            hidden = 5
            train = { lr = 0.05, batch_size = 16, max_epochs = 4, patience = 2 }

            [eval]
            n_per_side = 60
            "#,
        )
        .unwrap();
        cfg.out_dir = out.to_path_buf();
        cfg
    }

    #[test]
    fn synth_is_deterministic_and_refuses_overwrite() {
        let d1 = tempfile::tempdir().unwrap();
        let d2 = tempfile::tempdir().unwrap();
        cmd_synth(tiny_config(&d1.path().join("a")), false).unwrap();
        cmd_synth(tiny_config(&d2.path().join("b")), false).unwrap();
        for rel in [SOURCE_FILE, VOCAB_FILE, REAL_TRAIN, REAL_DEV, REAL_TEST] {
            let a = fs::read(d1.path().join("a").join(rel)).unwrap();
            let b = fs::read(d2.path().join("b").join(rel)).unwrap();
            assert_eq!(a, b, "{rel} differs between identical runs");
        }

        let again = cmd_synth(tiny_config(&d1.path().join("a")), false);
        assert!(matches!(again, Err(Error::Exists(_))), "got {again:?}");
        cmd_synth(tiny_config(&d1.path().join("a")), true).unwrap();
    }

    #[test]
    fn pretrain_requires_synth_artifacts() {
        let d = tempfile::tempdir().unwrap();
        let err = cmd_pretrain(tiny_config(&d.path().join("x")), false);
        assert!(matches!(err, Err(Error::Param(_))), "got {err:?}");
    }

    #[test]
    fn report_with_no_artifacts_is_a_parameter_error() {
        let d = tempfile::tempdir().unwrap();
        let err = cmd_report(tiny_config(&d.path().join("x")), false);
        assert!(matches!(err, Err(Error::Param(_))), "got {err:?}");
    }

    #[test]
    fn synth_then_pretrain_then_measure_produces_reports() {
        let d = tempfile::tempdir().unwrap();
        let out = d.path().join("run");
        cmd_synth(tiny_config(&out), false).unwrap();
        cmd_pretrain(tiny_config(&out), false).unwrap();

        let mut cfg = tiny_config(&out);
        cfg.measure.oracle = true;
        cmd_measure(cfg, false).unwrap();

        let report = fs::read_to_string(out.join(REPORT_CSV)).unwrap();
        assert!(report.starts_with(DiscrepancyReport::csv_header()));
        assert_eq!(report.lines().count(), 2);
        let oracle = fs::read_to_string(out.join(ORACLE_CSV)).unwrap();
        assert!(oracle.starts_with("tv_exact,da_exact,"));

        let manifest_text = fs::read_to_string(out.join("manifest.json")).unwrap();
        let manifest: Manifest = serde_json::from_str(&manifest_text).unwrap();
        manifest.verify(&out).unwrap();
        assert!(manifest.artifacts.contains_key(REPORT_CSV));
        assert_eq!(manifest.phases.len(), 3);

        cmd_report(tiny_config(&out), false).unwrap();
        let fig = fs::read_to_string(out.join("plots/fig_pretrain.csv")).unwrap();
        assert!(fig.starts_with("epoch,d_a,d_s,ema_d_a,ema_d_s"));
    }

    #[test]
    fn oracle_capacity_cap_is_enforced_early() {
        let d = tempfile::tempdir().unwrap();
        let out = d.path().join("run");
        cmd_synth(tiny_config(&out), false).unwrap();
        cmd_pretrain(tiny_config(&out), false).unwrap();

        let mut cfg = tiny_config(&out);
        cfg.measure.oracle = true;
        cfg.measure.support_cap = 3;
        let err = cmd_measure(cfg, false);
        assert!(matches!(err, Err(Error::Capacity { .. })), "got {err:?}");
    }

    #[test]
    fn gan_resumes_to_the_same_bytes_as_an_uninterrupted_run() {
        let d = tempfile::tempdir().unwrap();
        let straight = d.path().join("straight");
        let resumed = d.path().join("resumed");
        let gan_block = |cfg: &mut RunConfig, rounds: usize| {
            cfg.gan.rounds = rounds;
            cfg.gan.g_steps = 2;
            cfg.gan.d_steps = 2;
            cfg.gan.batch = 8;
        };

        for out in [&straight, &resumed] {
            cmd_synth(tiny_config(out), false).unwrap();
            cmd_pretrain(tiny_config(out), false).unwrap();
        }

        let mut cfg = tiny_config(&straight);
        gan_block(&mut cfg, 2);
        cmd_gan(cfg, false, GanMode::Pg).unwrap();

        let mut first = tiny_config(&resumed);
        gan_block(&mut first, 1);
        cmd_gan(first, false, GanMode::Pg).unwrap();
        let mut second = tiny_config(&resumed);
        gan_block(&mut second, 2);
        cmd_gan(second, false, GanMode::Pg).unwrap();

        for rel in
            ["gan_pg/rounds.csv", "gan_pg/progress.csv", "gan_pg/gan_r002.ckpt", "gan_pg/state.json"]
        {
            let a = fs::read_to_string(straight.join(rel)).unwrap();
            let b = fs::read_to_string(resumed.join(rel)).unwrap();
            let strip = |s: &str| -> String {
                if !rel.ends_with("rounds.csv") {
                    return s.to_string();
                }
                s.lines()
                    .map(|l| l.rsplit_once(',').map_or_else(|| l.to_string(), |(head, _)| head.to_string()))
                    .collect::<Vec<_>>()
                    .join("\n")
            };
            assert_eq!(strip(&a), strip(&b), "{rel} differs after resume");
        }

        let finished = tiny_config(&resumed);
        let mut finished_cfg = finished;
        gan_block(&mut finished_cfg, 2);
        let err = cmd_gan(finished_cfg, false, GanMode::Pg);
        assert!(matches!(err, Err(Error::Exists(_))), "got {err:?}");
    }
}
