//! C interface to the discrepancy measurement toolkit.
//!
//! Sources are opaque handles created by [`discrep_source_new`] and
//! destroyed by [`discrep_source_free`]. Every fallible call returns a
//! [`DiscrepStatus`] and, on failure, stores a message retrievable through
//! [`discrep_last_error_message`]. Messages are thread-local and stay valid
//! until the next failing call on the same thread.
//!
//! Token sequences cross the boundary as arrays of 0-based content-token
//! indices; the reserved marker tokens used internally never appear in the
//! C API.

use std::cell::RefCell;
use std::ffi::{c_char, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};

use discrep::corpus::{make_source, GroundTruthSource, TokenId, TokenSeq, RESERVED};
use discrep::metrics::oracle::{ds_estimate, OracleDensities};
use discrep::metrics::{ema, DiscrepancyReport, ScoreSet};
use discrep::Error;

/// Status code returned by every fallible call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DiscrepStatus {
    /// The call succeeded and any output parameters are filled in.
    Ok = 0,
    /// An argument was rejected: null pointer, out-of-range value, or
    /// mismatched handles.
    ParamError = 2,
    /// An exact computation would exceed the given support cap.
    CapacityError = 3,
    /// An internal invariant failed; the library state is still sound.
    InternalError = 4,
}

/// Opaque handle to a synthetic ground-truth sequence source.
pub struct DiscrepSource {
    inner: GroundTruthSource,
}

/// Discrepancy estimates computed from two score sets.
#[repr(C)]
#[derive(Debug, Clone, Copy)]
pub struct DiscrepReport {
    /// Mean discriminator score on the real side.
    pub u_d: f64,
    /// Mean discriminator score on the generated side.
    pub u_theta: f64,
    /// Approximate discrepancy `u_d - u_theta`.
    pub d_a: f64,
    /// Absolute discrepancy: accuracy minus error rate at the threshold.
    pub d_s: f64,
    pub accuracy: f64,
    /// How far the two means are from summing to one.
    pub constraint_residual: f64,
    pub ci_da_lo: f64,
    pub ci_da_hi: f64,
    pub ci_ds_lo: f64,
    pub ci_ds_hi: f64,
    pub n_real: usize,
    pub n_gen: usize,
    pub threshold: f64,
    /// True when the classifier landed below chance; `d_s` is reported
    /// unclipped so a failed fit stays visible.
    pub below_chance: bool,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(msg: &str) {
    let sanitized: String = msg.chars().map(|c| if c == '\0' { ' ' } else { c }).collect();
    LAST_ERROR.with(|slot| {
        *slot.borrow_mut() = CString::new(sanitized).expect("sanitized message has no NUL");
    });
}

fn fail(err: &Error) -> DiscrepStatus {
    set_error(&err.to_string());
    match err.exit_code() {
        2 => DiscrepStatus::ParamError,
        3 => DiscrepStatus::CapacityError,
        _ => DiscrepStatus::InternalError,
    }
}

fn fail_param(msg: &str) -> DiscrepStatus {
    set_error(msg);
    DiscrepStatus::ParamError
}

/// Runs a body behind a panic guard; a panic must never unwind into C.
fn guarded<F: FnOnce() -> DiscrepStatus>(body: F) -> DiscrepStatus {
    match catch_unwind(AssertUnwindSafe(body)) {
        Ok(status) => status,
        Err(_) => {
            set_error("internal panic");
            DiscrepStatus::InternalError
        }
    }
}

/// Version of the library as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn discrep_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr() as *const c_char
}

/// Message describing the most recent failure on this thread. The pointer
/// stays valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn discrep_last_error_message() -> *const c_char {
    LAST_ERROR.with(|slot| slot.borrow().as_ptr())
}

/// Creates a seeded random source over `vocab_size` content tokens with
/// order-`order` transitions and sequences of at most `l_max` tokens. On
/// success the handle is written to `out` and must be released with
/// [`discrep_source_free`].
///
/// # Safety
///
/// `out` must be a valid pointer to writable storage for one pointer.
#[no_mangle]
pub unsafe extern "C" fn discrep_source_new(
    seed: u64,
    vocab_size: usize,
    order: usize,
    l_max: usize,
    concentration: f64,
    out: *mut *mut DiscrepSource,
) -> DiscrepStatus {
    guarded(|| {
        if out.is_null() {
            return fail_param("out pointer is null");
        }
        match make_source(seed, vocab_size, order, l_max, concentration) {
            Ok(inner) => {
                unsafe { *out = Box::into_raw(Box::new(DiscrepSource { inner })) };
                DiscrepStatus::Ok
            }
            Err(e) => fail(&e),
        }
    })
}

/// Releases a source handle. A null handle is ignored.
///
/// # Safety
///
/// `source` must be null or a handle returned by [`discrep_source_new`]
/// that has not been freed yet.
#[no_mangle]
pub unsafe extern "C" fn discrep_source_free(source: *mut DiscrepSource) {
    if !source.is_null() {
        drop(unsafe { Box::from_raw(source) });
    }
}

unsafe fn source_ref<'a>(ptr: *const DiscrepSource) -> Option<&'a GroundTruthSource> {
    unsafe { ptr.as_ref() }.map(|s| &s.inner)
}

fn seq_from_indices(source: &GroundTruthSource, tokens: &[u32]) -> Result<TokenSeq, Error> {
    let content = source.vocab().content_size() as u32;
    let mut ids = Vec::with_capacity(tokens.len());
    for &t in tokens {
        if t >= content {
            return Err(Error::Param(format!(
                "token index {t} out of range for a vocabulary of {content} content tokens"
            )));
        }
        ids.push(t + RESERVED as TokenId);
    }
    TokenSeq::new(ids)
}

/// Exact probability of a sequence of 0-based content-token indices under
/// the source. Sequences are 1 to `l_max` tokens long; the empty sequence
/// carries no probability mass and is rejected.
///
/// # Safety
///
/// `tokens` must point to `len` readable `uint32_t`s and `out` must point
/// to one writable double.
#[no_mangle]
pub unsafe extern "C" fn discrep_source_exact_prob(
    source: *const DiscrepSource,
    tokens: *const u32,
    len: usize,
    out: *mut f64,
) -> DiscrepStatus {
    guarded(|| {
        let Some(src) = (unsafe { source_ref(source) }) else {
            return fail_param("source handle is null");
        };
        if out.is_null() {
            return fail_param("out pointer is null");
        }
        if tokens.is_null() {
            return fail_param("token pointer is null");
        }
        let slice = unsafe { std::slice::from_raw_parts(tokens, len) };
        let seq = match seq_from_indices(src, slice) {
            Ok(seq) => seq,
            Err(e) => return fail(&e),
        };
        match src.exact_prob(&seq) {
            Ok(p) => {
                unsafe { *out = p };
                DiscrepStatus::Ok
            }
            Err(e) => fail(&e),
        }
    })
}

fn paired_oracle(
    real: &GroundTruthSource,
    model: &GroundTruthSource,
    cap: usize,
) -> Result<OracleDensities, Error> {
    if real.vocab().content_size() != model.vocab().content_size()
        || real.l_max() != model.l_max()
    {
        return Err(Error::Param(
            "sources must share vocabulary size and maximum length".into(),
        ));
    }
    OracleDensities::from_pair(real.vocab(), real.l_max(), real, model, cap)
}

/// Exact total variation distance between two sources over their shared
/// enumerable support, refusing supports larger than `cap`.
///
/// # Safety
///
/// Both handles must be valid and `out` must point to one writable double.
#[no_mangle]
pub unsafe extern "C" fn discrep_tv_exact(
    real: *const DiscrepSource,
    model: *const DiscrepSource,
    cap: usize,
    out: *mut f64,
) -> DiscrepStatus {
    guarded(|| {
        let (Some(a), Some(b)) = (unsafe { source_ref(real) }, unsafe { source_ref(model) })
        else {
            return fail_param("source handle is null");
        };
        if out.is_null() {
            return fail_param("out pointer is null");
        }
        match paired_oracle(a, b, cap) {
            Ok(oracle) => {
                unsafe { *out = oracle.tv_exact() };
                DiscrepStatus::Ok
            }
            Err(e) => fail(&e),
        }
    })
}

/// Exact approximate-discrepancy value of the optimal discriminator between
/// two sources, refusing supports larger than `cap`.
///
/// # Safety
///
/// Both handles must be valid and `out` must point to one writable double.
#[no_mangle]
pub unsafe extern "C" fn discrep_da_exact(
    real: *const DiscrepSource,
    model: *const DiscrepSource,
    cap: usize,
    out: *mut f64,
) -> DiscrepStatus {
    guarded(|| {
        let (Some(a), Some(b)) = (unsafe { source_ref(real) }, unsafe { source_ref(model) })
        else {
            return fail_param("source handle is null");
        };
        if out.is_null() {
            return fail_param("out pointer is null");
        }
        match paired_oracle(a, b, cap) {
            Ok(oracle) => {
                unsafe { *out = oracle.da_exact() };
                DiscrepStatus::Ok
            }
            Err(e) => fail(&e),
        }
    })
}

/// Monte Carlo estimate of the absolute discrepancy under the optimal
/// discriminator, using `n >= 100` draws from the real source.
///
/// # Safety
///
/// Both handles must be valid and `out` must point to one writable double.
#[no_mangle]
pub unsafe extern "C" fn discrep_ds_estimate(
    real: *const DiscrepSource,
    model: *const DiscrepSource,
    cap: usize,
    n: usize,
    seed: u64,
    out: *mut f64,
) -> DiscrepStatus {
    guarded(|| {
        let (Some(a), Some(b)) = (unsafe { source_ref(real) }, unsafe { source_ref(model) })
        else {
            return fail_param("source handle is null");
        };
        if out.is_null() {
            return fail_param("out pointer is null");
        }
        let oracle = match paired_oracle(a, b, cap) {
            Ok(oracle) => oracle,
            Err(e) => return fail(&e),
        };
        match ds_estimate(&oracle, n, seed) {
            Ok(v) => {
                unsafe { *out = v };
                DiscrepStatus::Ok
            }
            Err(e) => fail(&e),
        }
    })
}

/// Computes the full discrepancy report from two arrays of discriminator
/// scores in `[0, 1]`, with `resamples >= 200` bootstrap resamples for the
/// confidence intervals.
///
/// # Safety
///
/// `real_scores` must point to `n_real` readable doubles, `gen_scores` to
/// `n_gen` readable doubles, and `out` to one writable report.
#[no_mangle]
pub unsafe extern "C" fn discrep_report_compute(
    real_scores: *const f64,
    n_real: usize,
    gen_scores: *const f64,
    n_gen: usize,
    threshold: f64,
    resamples: usize,
    seed: u64,
    out: *mut DiscrepReport,
) -> DiscrepStatus {
    guarded(|| {
        if real_scores.is_null() || gen_scores.is_null() {
            return fail_param("score pointer is null");
        }
        if out.is_null() {
            return fail_param("out pointer is null");
        }
        let real = unsafe { std::slice::from_raw_parts(real_scores, n_real) };
        let generated = unsafe { std::slice::from_raw_parts(gen_scores, n_gen) };
        let scores = match ScoreSet::new(real.to_vec(), generated.to_vec()) {
            Ok(s) => s,
            Err(e) => return fail(&e),
        };
        match DiscrepancyReport::from_scores(&scores, threshold, resamples, seed) {
            Ok(r) => {
                unsafe {
                    *out = DiscrepReport {
                        u_d: r.u_d,
                        u_theta: r.u_theta,
                        d_a: r.d_a,
                        d_s: r.d_s,
                        accuracy: r.accuracy,
                        constraint_residual: r.constraint_residual,
                        ci_da_lo: r.ci_d_a.0,
                        ci_da_hi: r.ci_d_a.1,
                        ci_ds_lo: r.ci_d_s.0,
                        ci_ds_hi: r.ci_d_s.1,
                        n_real: r.n_real,
                        n_gen: r.n_gen,
                        threshold: r.threshold,
                        below_chance: r.below_chance,
                    };
                }
                DiscrepStatus::Ok
            }
            Err(e) => fail(&e),
        }
    })
}

/// Exponential moving average with smoothing factor `alpha` in `(0, 1]`,
/// written elementwise to `out`.
///
/// # Safety
///
/// `values` must point to `len` readable doubles and `out` to `len`
/// writable doubles; the regions may alias.
#[no_mangle]
pub unsafe extern "C" fn discrep_ema(
    values: *const f64,
    len: usize,
    alpha: f64,
    out: *mut f64,
) -> DiscrepStatus {
    guarded(|| {
        if values.is_null() || out.is_null() {
            return fail_param("pointer is null");
        }
        let series = unsafe { std::slice::from_raw_parts(values, len) };
        match ema(series, alpha) {
            Ok(smoothed) => {
                let dst = unsafe { std::slice::from_raw_parts_mut(out, len) };
                dst.copy_from_slice(&smoothed);
                DiscrepStatus::Ok
            }
            Err(e) => fail(&e),
        }
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::ffi::CStr;

    fn message() -> String {
        unsafe { CStr::from_ptr(discrep_last_error_message()) }.to_string_lossy().into_owned()
    }

    fn new_source(seed: u64, vocab: usize, l_max: usize) -> *mut DiscrepSource {
        let mut handle: *mut DiscrepSource = std::ptr::null_mut();
        let status = unsafe { discrep_source_new(seed, vocab, 1, l_max, 0.8, &mut handle) };
        assert_eq!(status, DiscrepStatus::Ok, "{}", message());
        assert!(!handle.is_null());
        handle
    }

    #[test]
    fn version_is_a_static_dotted_string() {
        let v = unsafe { CStr::from_ptr(discrep_version()) }.to_str().unwrap();
        assert!(v.contains('.'), "version {v:?}");
        assert_eq!(v, env!("CARGO_PKG_VERSION"));
    }

    #[test]
    fn source_round_trip_and_null_handling() {
        let handle = new_source(7, 3, 4);
        unsafe { discrep_source_free(handle) };
        unsafe { discrep_source_free(std::ptr::null_mut()) };

        let status = unsafe { discrep_source_new(7, 3, 1, 4, 0.8, std::ptr::null_mut()) };
        assert_eq!(status, DiscrepStatus::ParamError);
        assert!(!message().is_empty());
    }

    #[test]
    fn invalid_parameters_are_rejected_with_a_message() {
        let mut handle: *mut DiscrepSource = std::ptr::null_mut();
        let status = unsafe { discrep_source_new(7, 1, 1, 4, 0.8, &mut handle) };
        assert_eq!(status, DiscrepStatus::ParamError);
        assert!(message().contains("vocab"), "message {:?}", message());
        assert!(handle.is_null());
    }

    #[test]
    fn exact_prob_matches_the_library_and_validates_tokens() {
        let handle = new_source(7, 3, 4);
        let direct = make_source(7, 3, 1, 4, 0.8).unwrap();

        let tokens = [0u32, 2, 1];
        let mut p = f64::NAN;
        let status =
            unsafe { discrep_source_exact_prob(handle, tokens.as_ptr(), tokens.len(), &mut p) };
        assert_eq!(status, DiscrepStatus::Ok, "{}", message());
        let ids: Vec<TokenId> = tokens.iter().map(|&t| t + RESERVED as TokenId).collect();
        let expected = direct.exact_prob(&TokenSeq::new(ids).unwrap()).unwrap();
        assert_eq!(p, expected);

        let mut q = f64::NAN;
        let status = unsafe { discrep_source_exact_prob(handle, std::ptr::null(), 0, &mut q) };
        assert_eq!(status, DiscrepStatus::ParamError, "null token pointer must be rejected");

        let empty = [0u32; 1];
        let status = unsafe { discrep_source_exact_prob(handle, empty.as_ptr(), 0, &mut q) };
        assert_eq!(status, DiscrepStatus::ParamError, "the empty sequence carries no mass");

        let bad = [9u32];
        let status = unsafe { discrep_source_exact_prob(handle, bad.as_ptr(), 1, &mut q) };
        assert_eq!(status, DiscrepStatus::ParamError);
        assert!(message().contains("out of range"));

        unsafe { discrep_source_free(handle) };
    }

    #[test]
    fn exact_metrics_behave_like_distances() {
        let a = new_source(7, 3, 4);
        let same = new_source(7, 3, 4);
        let other = new_source(8, 3, 4);

        let mut tv_self = f64::NAN;
        let mut tv_other = f64::NAN;
        let mut da_other = f64::NAN;
        unsafe {
            assert_eq!(discrep_tv_exact(a, same, 100_000, &mut tv_self), DiscrepStatus::Ok);
            assert_eq!(discrep_tv_exact(a, other, 100_000, &mut tv_other), DiscrepStatus::Ok);
            assert_eq!(discrep_da_exact(a, other, 100_000, &mut da_other), DiscrepStatus::Ok);
        }
        assert!(tv_self.abs() < 1e-12, "tv against an identical source is {tv_self}");
        assert!(tv_other > 0.0);
        assert!(da_other >= 0.0 && da_other <= tv_other + 1e-12);

        unsafe {
            discrep_source_free(a);
            discrep_source_free(same);
            discrep_source_free(other);
        }
    }

    #[test]
    fn mismatched_sources_and_tiny_caps_are_refused() {
        let a = new_source(7, 3, 4);
        let longer = new_source(7, 3, 5);
        let mut v = f64::NAN;

        let status = unsafe { discrep_tv_exact(a, longer, 100_000, &mut v) };
        assert_eq!(status, DiscrepStatus::ParamError);

        let status = unsafe { discrep_tv_exact(a, a, 3, &mut v) };
        assert_eq!(status, DiscrepStatus::CapacityError);
        assert!(!message().is_empty());

        unsafe {
            discrep_source_free(a);
            discrep_source_free(longer);
        }
    }

    #[test]
    fn ds_estimate_approaches_the_exact_tv() {
        let a = new_source(7, 3, 4);
        let b = new_source(8, 3, 4);
        let mut tv = f64::NAN;
        let mut est = f64::NAN;
        unsafe {
            assert_eq!(discrep_tv_exact(a, b, 100_000, &mut tv), DiscrepStatus::Ok);
            assert_eq!(
                discrep_ds_estimate(a, b, 100_000, 20_000, 5, &mut est),
                DiscrepStatus::Ok,
                "{}",
                message()
            );
        }
        assert!((est - tv).abs() < 0.05, "estimate {est} vs exact {tv}");

        let status = unsafe { discrep_ds_estimate(a, b, 100_000, 10, 5, &mut est) };
        assert_eq!(status, DiscrepStatus::ParamError);

        unsafe {
            discrep_source_free(a);
            discrep_source_free(b);
        }
    }

    #[test]
    fn report_compute_matches_the_library_bitwise() {
        let real: Vec<f64> = (0..100).map(|i| 0.5 + 0.004 * (i % 100) as f64).collect();
        let generated: Vec<f64> = (0..100).map(|i| 0.5 - 0.004 * (i % 100) as f64).collect();

        let mut out = DiscrepReport {
            u_d: 0.0,
            u_theta: 0.0,
            d_a: 0.0,
            d_s: 0.0,
            accuracy: 0.0,
            constraint_residual: 0.0,
            ci_da_lo: 0.0,
            ci_da_hi: 0.0,
            ci_ds_lo: 0.0,
            ci_ds_hi: 0.0,
            n_real: 0,
            n_gen: 0,
            threshold: 0.0,
            below_chance: true,
        };
        let status = unsafe {
            discrep_report_compute(
                real.as_ptr(),
                real.len(),
                generated.as_ptr(),
                generated.len(),
                0.5,
                200,
                9,
                &mut out,
            )
        };
        assert_eq!(status, DiscrepStatus::Ok, "{}", message());

        let scores = ScoreSet::new(real, generated).unwrap();
        let expected = DiscrepancyReport::from_scores(&scores, 0.5, 200, 9).unwrap();
        assert_eq!(out.d_a, expected.d_a);
        assert_eq!(out.d_s, expected.d_s);
        assert_eq!(out.accuracy, expected.accuracy);
        assert_eq!(out.ci_ds_lo, expected.ci_d_s.0);
        assert_eq!(out.ci_ds_hi, expected.ci_d_s.1);
        assert_eq!(out.n_real, expected.n_real);
        assert_eq!(out.below_chance, expected.below_chance);

        let status = unsafe {
            discrep_report_compute(std::ptr::null(), 0, std::ptr::null(), 0, 0.5, 200, 9, &mut out)
        };
        assert_eq!(status, DiscrepStatus::ParamError);
    }

    #[test]
    fn ema_smooths_in_place_buffers() {
        let values = [1.0, 2.0, 3.0];
        let mut out = [0.0; 3];
        let status = unsafe { discrep_ema(values.as_ptr(), 3, 0.5, out.as_mut_ptr()) };
        assert_eq!(status, DiscrepStatus::Ok, "{}", message());
        let expected = ema(&values, 0.5).unwrap();
        assert_eq!(out.to_vec(), expected);

        let status = unsafe { discrep_ema(std::ptr::null(), 0, 0.5, out.as_mut_ptr()) };
        assert_eq!(status, DiscrepStatus::ParamError);

        let status = unsafe { discrep_ema(values.as_ptr(), 3, 1.5, out.as_mut_ptr()) };
        assert_eq!(status, DiscrepStatus::ParamError);
    }

    #[test]
    fn generated_header_covers_the_exported_surface() {
        let header = std::fs::read_to_string(concat!(
            env!("CARGO_MANIFEST_DIR"),
            "/include/discrep.h"
        ))
        .expect("header is generated at build time");
        for symbol in [
            "DiscrepStatus",
            "DiscrepSource",
            "DiscrepReport",
            "discrep_version",
            "discrep_last_error_message",
            "discrep_source_new",
            "discrep_source_free",
            "discrep_source_exact_prob",
            "discrep_tv_exact",
            "discrep_da_exact",
            "discrep_ds_estimate",
            "discrep_report_compute",
            "discrep_ema",
        ] {
            assert!(header.contains(symbol), "header misses {symbol}");
        }
        assert!(header.contains("DISCREP_H"));
    }
}
