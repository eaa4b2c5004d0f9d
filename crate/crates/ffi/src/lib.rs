//! C interface to `atp-core`.
//!
//! Conventions:
//! - Every fallible function returns an [`AtpStatus`]; results go through
//!   out-pointers that are written only on success.
//! - Matrices and factorizations are opaque handles created by this library
//!   and released with `atp_matrix_free` / `atp_factors_free`.
//! - Matrix data crosses the boundary row-major as `double`.
//! - After a failure, `atp_last_error` returns a message for the calling
//!   thread, valid until that thread's next call into the library.
//! - Panics never unwind into C; they surface as `ATP_STATUS_PANIC`.

#![allow(clippy::missing_safety_doc)]

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use atp_core::attention::{
    lowrank_attention, standard_attention, taylor_dense_attention, AttentionConfig, AttentionOutput, Normalizer,
};
use atp_core::bench::{predicted_ops, BenchDims, BenchMode};
use atp_core::io::{read_matrix, write_matrix};
use atp_core::linalg::{
    alternating_lowrank, energy_ratio, exact_truncation, matrix_entropy, reorthogonalize, select_rank, svd_entropy,
    LowRankFactors, RankPolicy, RankSource,
};
use atp_core::{Dtype, Error, Matrix};

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AtpStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidInput = 2,
    ShapeMismatch = 3,
    Numerical = 4,
    Io = 5,
    ResourceRefused = 6,
    Panic = 7,
}

/// Opaque row-major `f64` matrix.
pub struct AtpMatrix(Matrix);

/// Opaque `X ~ U * Xp` factorization.
pub struct AtpFactors(LowRankFactors);

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AtpRankKind {
    Fixed = 0,
    Fraction = 1,
    Entropy = 2,
}

/// `value` is the rank for `Fixed`, the kept fraction for `Fraction` and the
/// scale for `Entropy`.
#[repr(C)]
#[derive(Debug, Clone, Copy)]
pub struct AtpRankPolicy {
    pub kind: AtpRankKind,
    pub value: f64,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AtpNormalizer {
    RowSum = 0,
    TaylorDenominator = 1,
    SoftmaxOnScores = 2,
}

#[repr(C)]
#[derive(Debug, Clone, Copy)]
pub struct AtpAttentionConfig {
    /// Scale scores by `1/sqrt(head_dim)`.
    pub scale: bool,
    pub normalizer: AtpNormalizer,
    pub epsilon: f64,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AtpBenchMode {
    Standard = 0,
    Lowrank = 1,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct AtpOpCounts {
    pub multiplies: u64,
    pub adds: u64,
    pub elementwise: u64,
    pub peak_values_held: u64,
    pub peak_score_entries: u64,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_last_error(msg: &str) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = c);
}

fn status_of(e: &Error) -> AtpStatus {
    match e {
        Error::InvalidInput(_) | Error::Precondition(_) | Error::Format { .. } | Error::Json(_) => {
            AtpStatus::InvalidInput
        }
        Error::ShapeMismatch(_) => AtpStatus::ShapeMismatch,
        Error::Io { .. } => AtpStatus::Io,
        Error::ResourceRefused { .. } => AtpStatus::ResourceRefused,
        _ => AtpStatus::Numerical,
    }
}

struct Failure(AtpStatus, String);

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure(status_of(&e), e.to_string())
    }
}

fn null(what: &str) -> Failure {
    Failure(AtpStatus::NullPointer, format!("{what} is null"))
}

/// Run `f`, translating errors and panics into a status and the thread's last error.
fn guard(f: impl FnOnce() -> Result<(), Failure>) -> AtpStatus {
    set_last_error("");
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => AtpStatus::Ok,
        Ok(Err(Failure(status, msg))) => {
            set_last_error(&msg);
            status
        }
        Err(payload) => {
            let msg = payload
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| payload.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "panic".into());
            set_last_error(&format!("internal panic: {msg}"));
            AtpStatus::Panic
        }
    }
}

unsafe fn borrow<'a, T>(p: *const T, what: &str) -> Result<&'a T, Failure> {
    p.as_ref().ok_or_else(|| null(what))
}

unsafe fn put<T>(out: *mut T, value: T, what: &str) -> Result<(), Failure> {
    if out.is_null() {
        return Err(null(what));
    }
    out.write(value);
    Ok(())
}

unsafe fn path_arg(p: *const c_char) -> Result<String, Failure> {
    if p.is_null() {
        return Err(null("path"));
    }
    CStr::from_ptr(p)
        .to_str()
        .map(str::to_owned)
        .map_err(|_| Failure(AtpStatus::InvalidInput, "path is not valid UTF-8".into()))
}

fn new_matrix(m: Matrix) -> *mut AtpMatrix {
    Box::into_raw(Box::new(AtpMatrix(m)))
}

fn new_factors(f: LowRankFactors) -> *mut AtpFactors {
    Box::into_raw(Box::new(AtpFactors(f)))
}

fn rank_policy(p: &AtpRankPolicy) -> Result<RankPolicy, Failure> {
    let policy = match p.kind {
        AtpRankKind::Fixed => {
            if !(p.value >= 1.0 && p.value.fract() == 0.0 && p.value <= usize::MAX as f64) {
                return Err(Failure(
                    AtpStatus::InvalidInput,
                    format!("fixed rank must be a positive integer, got {}", p.value),
                ));
            }
            RankPolicy::Fixed(p.value as usize)
        }
        AtpRankKind::Fraction => RankPolicy::Fraction(p.value),
        AtpRankKind::Entropy => RankPolicy::Entropy(p.value),
    };
    policy.validate().map_err(|m| Failure(AtpStatus::InvalidInput, m))?;
    Ok(policy)
}

fn attention_config(c: &AtpAttentionConfig) -> AttentionConfig {
    let normalizer = match c.normalizer {
        AtpNormalizer::RowSum => Normalizer::RowSum,
        AtpNormalizer::TaylorDenominator => Normalizer::TaylorDenominator,
        AtpNormalizer::SoftmaxOnScores => Normalizer::SoftmaxOnScores,
    };
    AttentionConfig { scale: c.scale, normalizer, epsilon: c.epsilon, ..AttentionConfig::default() }
}

/// Message describing the calling thread's most recent failure; empty after a
/// success. Owned by the library.
#[no_mangle]
pub extern "C" fn atp_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Library version, a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn atp_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// New `rows x cols` matrix copied from `data` (row-major), or zeros when
/// `data` is null.
#[no_mangle]
pub unsafe extern "C" fn atp_matrix_new(
    rows: usize,
    cols: usize,
    data: *const f64,
    out: *mut *mut AtpMatrix,
) -> AtpStatus {
    guard(|| {
        let n =
            rows.checked_mul(cols).ok_or_else(|| Failure(AtpStatus::InvalidInput, "matrix size overflows".into()))?;
        let m = if data.is_null() {
            Matrix::zeros(rows, cols)
        } else {
            Matrix::new(rows, cols, std::slice::from_raw_parts(data, n).to_vec())?
        };
        put(out, new_matrix(m), "out")
    })
}

#[no_mangle]
pub unsafe extern "C" fn atp_matrix_free(m: *mut AtpMatrix) {
    if !m.is_null() {
        drop(Box::from_raw(m));
    }
}

/// Row count; 0 for a null handle.
#[no_mangle]
pub unsafe extern "C" fn atp_matrix_rows(m: *const AtpMatrix) -> usize {
    m.as_ref().map_or(0, |m| m.0.rows())
}

/// Column count; 0 for a null handle.
#[no_mangle]
pub unsafe extern "C" fn atp_matrix_cols(m: *const AtpMatrix) -> usize {
    m.as_ref().map_or(0, |m| m.0.cols())
}

/// Copy the entries row-major into `out`, which holds `len >= rows * cols` doubles.
#[no_mangle]
pub unsafe extern "C" fn atp_matrix_copy_data(m: *const AtpMatrix, out: *mut f64, len: usize) -> AtpStatus {
    guard(|| {
        let m = borrow(m, "matrix")?;
        let data = m.0.as_slice();
        if out.is_null() {
            return Err(null("out"));
        }
        if len < data.len() {
            return Err(Failure(AtpStatus::InvalidInput, format!("buffer holds {len} values, need {}", data.len())));
        }
        ptr::copy_nonoverlapping(data.as_ptr(), out, data.len());
        Ok(())
    })
}

/// Read a `.matx` or CSV file.
#[no_mangle]
pub unsafe extern "C" fn atp_matrix_read(path: *const c_char, out: *mut *mut AtpMatrix) -> AtpStatus {
    guard(|| {
        let m: Matrix = read_matrix(path_arg(path)?)?;
        put(out, new_matrix(m), "out")
    })
}

/// Write as `.matx` (f64) or CSV, chosen by extension.
#[no_mangle]
pub unsafe extern "C" fn atp_matrix_write(m: *const AtpMatrix, path: *const c_char) -> AtpStatus {
    guard(|| {
        let m = borrow(m, "matrix")?;
        write_matrix(&m.0, path_arg(path)?, Dtype::F64)?;
        Ok(())
    })
}

/// Base-2 SVD entropy of `n` singular values of a length-`length` sequence.
/// Either out-pointer may be null.
#[no_mangle]
pub unsafe extern "C" fn atp_svd_entropy(
    singular_values: *const f64,
    n: usize,
    length: usize,
    out_mu: *mut f64,
    out_effective_rank: *mut usize,
) -> AtpStatus {
    guard(|| {
        if singular_values.is_null() && n > 0 {
            return Err(null("singular_values"));
        }
        let sv = if n == 0 { &[][..] } else { std::slice::from_raw_parts(singular_values, n) };
        let rep = svd_entropy(sv, length)?;
        if !out_mu.is_null() {
            out_mu.write(rep.mu);
        }
        if !out_effective_rank.is_null() {
            out_effective_rank.write(rep.effective_rank);
        }
        Ok(())
    })
}

/// SVD entropy of a matrix's own spectrum.
#[no_mangle]
pub unsafe extern "C" fn atp_matrix_entropy(x: *const AtpMatrix, out_mu: *mut f64) -> AtpStatus {
    guard(|| {
        let x = borrow(x, "x")?;
        put(out_mu, matrix_entropy(&x.0)?.mu, "out_mu")
    })
}

/// Rank chosen by `policy` for `x` (the entropy rule computes the spectrum).
#[no_mangle]
pub unsafe extern "C" fn atp_select_rank(
    x: *const AtpMatrix,
    policy: *const AtpRankPolicy,
    out_rank: *mut usize,
) -> AtpStatus {
    guard(|| {
        let x = &borrow(x, "x")?.0;
        let policy = rank_policy(borrow(policy, "policy")?)?;
        let (l, d) = x.shape();
        let rank = if policy.needs_spectrum() {
            let rep = matrix_entropy(x)?;
            select_rank(RankSource::Report(&rep), &policy, l, d)
        } else {
            select_rank(RankSource::Spectrum(&[]), &policy, l, d)
        };
        put(out_rank, rank, "out_rank")
    })
}

/// Rank-`rank` alternating fit with `inner_iters` rounds per component.
#[no_mangle]
pub unsafe extern "C" fn atp_alternating_lowrank(
    x: *const AtpMatrix,
    rank: usize,
    inner_iters: usize,
    seed: u64,
    out: *mut *mut AtpFactors,
) -> AtpStatus {
    guard(|| {
        let x = borrow(x, "x")?;
        put(out, new_factors(alternating_lowrank(&x.0, rank, inner_iters, seed)?), "out")
    })
}

/// Exact rank-`rank` truncated SVD; `U` is orthonormal.
#[no_mangle]
pub unsafe extern "C" fn atp_exact_truncation(
    x: *const AtpMatrix,
    rank: usize,
    out: *mut *mut AtpFactors,
) -> AtpStatus {
    guard(|| {
        let x = borrow(x, "x")?;
        put(out, new_factors(exact_truncation(&x.0, rank)?), "out")
    })
}

/// Same product with orthonormal `U`, as a new handle.
#[no_mangle]
pub unsafe extern "C" fn atp_reorthogonalize(f: *const AtpFactors, out: *mut *mut AtpFactors) -> AtpStatus {
    guard(|| {
        let f = borrow(f, "factors")?;
        put(out, new_factors(reorthogonalize(&f.0)?), "out")
    })
}

#[no_mangle]
pub unsafe extern "C" fn atp_factors_free(f: *mut AtpFactors) {
    if !f.is_null() {
        drop(Box::from_raw(f));
    }
}

/// Rank; 0 for a null handle.
#[no_mangle]
pub unsafe extern "C" fn atp_factors_rank(f: *const AtpFactors) -> usize {
    f.as_ref().map_or(0, |f| f.0.rank())
}

#[no_mangle]
pub unsafe extern "C" fn atp_factors_orthonormal(f: *const AtpFactors) -> bool {
    f.as_ref().is_some_and(|f| f.0.orthonormal)
}

/// Copy of `U` (`L x r`).
#[no_mangle]
pub unsafe extern "C" fn atp_factors_u(f: *const AtpFactors, out: *mut *mut AtpMatrix) -> AtpStatus {
    guard(|| {
        let f = borrow(f, "factors")?;
        put(out, new_matrix(f.0.u.clone()), "out")
    })
}

/// Copy of `Xp` (`r x d`).
#[no_mangle]
pub unsafe extern "C" fn atp_factors_xp(f: *const AtpFactors, out: *mut *mut AtpMatrix) -> AtpStatus {
    guard(|| {
        let f = borrow(f, "factors")?;
        put(out, new_matrix(f.0.xp.clone()), "out")
    })
}

/// `|U Xp|_F^2 / |X|_F^2`.
#[no_mangle]
pub unsafe extern "C" fn atp_energy_ratio(x: *const AtpMatrix, f: *const AtpFactors, out: *mut f64) -> AtpStatus {
    guard(|| {
        let x = borrow(x, "x")?;
        let f = borrow(f, "factors")?;
        put(out, energy_ratio(&x.0, &f.0)?, "out")
    })
}

/// Scaled scores, row-sum normalizer, epsilon 1e-6.
#[no_mangle]
pub extern "C" fn atp_attention_config_default() -> AtpAttentionConfig {
    AtpAttentionConfig { scale: true, normalizer: AtpNormalizer::RowSum, epsilon: AttentionConfig::default().epsilon }
}

unsafe fn attend(
    config: *const AtpAttentionConfig,
    out: *mut *mut AtpMatrix,
    f: impl FnOnce(&AttentionConfig) -> atp_core::Result<AttentionOutput>,
) -> AtpStatus {
    guard(|| {
        let config = attention_config(borrow(config, "config")?);
        put(out, new_matrix(f(&config)?.output), "out")
    })
}

/// Softmax attention `softmax(s Q K^T) V`.
#[no_mangle]
pub unsafe extern "C" fn atp_standard_attention(
    q: *const AtpMatrix,
    k: *const AtpMatrix,
    v: *const AtpMatrix,
    config: *const AtpAttentionConfig,
    out: *mut *mut AtpMatrix,
) -> AtpStatus {
    let (Some(q), Some(k), Some(v)) = (q.as_ref(), k.as_ref(), v.as_ref()) else {
        return guard(|| Err(null("q, k or v")));
    };
    attend(config, out, |c| standard_attention(&q.0, &k.0, &v.0, c))
}

/// Dense first-order attention over full-length keys and values.
#[no_mangle]
pub unsafe extern "C" fn atp_taylor_dense_attention(
    q: *const AtpMatrix,
    k: *const AtpMatrix,
    v: *const AtpMatrix,
    config: *const AtpAttentionConfig,
    out: *mut *mut AtpMatrix,
) -> AtpStatus {
    let (Some(q), Some(k), Some(v)) = (q.as_ref(), k.as_ref(), v.as_ref()) else {
        return guard(|| Err(null("q, k or v")));
    };
    attend(config, out, |c| taylor_dense_attention(&q.0, &k.0, &v.0, c))
}

/// First-order attention of full-length queries over `r` principal keys and
/// values with basis `u` (`L x r`).
#[no_mangle]
pub unsafe extern "C" fn atp_lowrank_attention(
    q: *const AtpMatrix,
    kp: *const AtpMatrix,
    vp: *const AtpMatrix,
    u: *const AtpMatrix,
    config: *const AtpAttentionConfig,
    out: *mut *mut AtpMatrix,
) -> AtpStatus {
    let (Some(q), Some(kp), Some(vp), Some(u)) = (q.as_ref(), kp.as_ref(), vp.as_ref(), u.as_ref()) else {
        return guard(|| Err(null("q, kp, vp or u")));
    };
    attend(config, out, |c| lowrank_attention(&q.0, &kp.0, &vp.0, &u.0, c))
}

/// Closed-form operation counts of one benchmark pipeline, summed over stages.
#[no_mangle]
pub unsafe extern "C" fn atp_predicted_ops(
    length: usize,
    rank: usize,
    dim: usize,
    hidden: usize,
    inner_iters: usize,
    mode: AtpBenchMode,
    out: *mut AtpOpCounts,
) -> AtpStatus {
    guard(|| {
        let dims = BenchDims { length, r: rank, d: dim, hidden, inner_iters };
        dims.validate()?;
        let mode = match mode {
            AtpBenchMode::Standard => BenchMode::Standard,
            AtpBenchMode::Lowrank => BenchMode::Lowrank,
        };
        let t = predicted_ops(&dims, mode).total();
        let counts = AtpOpCounts {
            multiplies: t.multiplies,
            adds: t.adds,
            elementwise: t.elementwise,
            peak_values_held: t.peak_values_held,
            peak_score_entries: t.peak_score_entries,
        };
        put(out, counts, "out")
    })
}
