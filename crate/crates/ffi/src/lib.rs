//! C ABI for the mnmt toolkit.
//!
//! Every function returns an [`MnmtStatus`]. On failure a description is
//! available from [`mnmt_last_error_message`] on the same thread. Strings
//! and id arrays handed out by the library are released with
//! [`mnmt_string_free`] and [`mnmt_ids_free`]; handles with their own
//! `*_free` function.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use mnmt::corpus::{filter_pair, FilterConfig, Rule, SentencePair, Verdict};
use mnmt::eval::corpus_bleu;
use mnmt::pipeline::{load_checkpoint, translate_sentences, DecodeConfig};
use mnmt::tokenizer::BpeModel;
use mnmt::translit::transliterate;
use mnmt::LangCode;

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MnmtStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidUtf8 = 2,
    InvalidArgument = 3,
    UnknownLanguage = 4,
    Io = 5,
    Format = 6,
    Unsupported = 7,
    Failed = 8,
    Panic = 9,
}

/// Outcome of the per-pair corpus filter.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MnmtFilterVerdict {
    Keep = 0,
    EmptySide = 1,
    LengthBounds = 2,
    LengthRatio = 3,
    ScriptMismatch = 4,
    Duplicate = 5,
}

/// A loaded BPE model.
pub struct MnmtBpe {
    inner: BpeModel,
}

/// A checkpoint together with its BPE model.
pub struct MnmtTranslator {
    model: mnmt::model::TransformerModel,
    bpe: BpeModel,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

struct Failure(MnmtStatus, String);

type Outcome = Result<(), Failure>;

fn fail(status: MnmtStatus, msg: impl Into<String>) -> Failure {
    Failure(status, msg.into())
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).expect("no interior NUL");
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn guard(f: impl FnOnce() -> Outcome) -> MnmtStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => MnmtStatus::Ok,
        Ok(Err(Failure(status, msg))) => {
            set_error(msg);
            status
        }
        Err(_) => {
            set_error("internal panic".into());
            MnmtStatus::Panic
        }
    }
}

fn status_of(code: &str) -> MnmtStatus {
    if code.ends_with(".io") {
        MnmtStatus::Io
    } else if code.contains("corrupt") || code.contains("version") || code.contains("format") {
        MnmtStatus::Format
    } else if code.contains("unsupported") || code.contains("mismatch") {
        MnmtStatus::Unsupported
    } else {
        MnmtStatus::Failed
    }
}

macro_rules! check {
    ($e:expr, $code:expr) => {
        $e.map_err(|err| fail(status_of($code(&err)), err.to_string()))?
    };
}

unsafe fn text<'a>(p: *const c_char, what: &str) -> Result<&'a str, Failure> {
    if p.is_null() {
        return Err(fail(MnmtStatus::NullPointer, format!("{what} is null")));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| fail(MnmtStatus::InvalidUtf8, format!("{what} is not valid UTF-8")))
}

unsafe fn lang(p: *const c_char, what: &str) -> Result<LangCode, Failure> {
    text(p, what)?
        .parse()
        .map_err(|e: mnmt::lang::UnknownLang| fail(MnmtStatus::UnknownLanguage, e.to_string()))
}

fn out_ptr<T>(p: *mut T, what: &str) -> Result<(), Failure> {
    if p.is_null() {
        Err(fail(MnmtStatus::NullPointer, format!("{what} is null")))
    } else {
        Ok(())
    }
}

fn to_c(s: String) -> Result<*mut c_char, Failure> {
    CString::new(s)
        .map(CString::into_raw)
        .map_err(|_| fail(MnmtStatus::Failed, "output contains a NUL byte"))
}

/// Message for the last failed call on this thread, or null. The pointer
/// stays valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn mnmt_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Releases a string returned by this library. Null is ignored.
///
/// # Safety
/// `s` must come from this library and not have been freed.
#[no_mangle]
pub unsafe extern "C" fn mnmt_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// Releases an id array returned by [`mnmt_bpe_encode`]. Null is ignored.
///
/// # Safety
/// `ids` and `len` must be exactly as returned by this library.
#[no_mangle]
pub unsafe extern "C" fn mnmt_ids_free(ids: *mut u32, len: usize) {
    if !ids.is_null() {
        drop(Box::from_raw(ptr::slice_from_raw_parts_mut(ids, len)));
    }
}

/// Corpus BLEU (0 to 100) of `n` hypotheses against `n` references.
///
/// # Safety
/// `hyps` and `refs` must point to `n` valid NUL-terminated strings each.
#[no_mangle]
pub unsafe extern "C" fn mnmt_bleu_corpus(
    hyps: *const *const c_char,
    refs: *const *const c_char,
    n: usize,
    max_n: usize,
    out_score: *mut f64,
) -> MnmtStatus {
    guard(|| {
        out_ptr(out_score, "out_score")?;
        if n > 0 && (hyps.is_null() || refs.is_null()) {
            return Err(fail(MnmtStatus::NullPointer, "sentence array is null"));
        }
        let mut h = Vec::with_capacity(n);
        let mut r = Vec::with_capacity(n);
        for i in 0..n {
            h.push(text(*hyps.add(i), "hypothesis")?);
            r.push(text(*refs.add(i), "reference")?);
        }
        let report = corpus_bleu(&h, &r, max_n).map_err(|e| fail(MnmtStatus::InvalidArgument, e.to_string()))?;
        *out_score = report.score;
        Ok(())
    })
}

/// Loads `PREFIX.merges` and `PREFIX.vocab`.
///
/// # Safety
/// `prefix` must be a valid string and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn mnmt_bpe_load(prefix: *const c_char, out: *mut *mut MnmtBpe) -> MnmtStatus {
    guard(|| {
        out_ptr(out, "out")?;
        let inner = check!(BpeModel::load(text(prefix, "prefix")?), |e: &mnmt::tokenizer::TokenizerError| e
            .code());
        *out = Box::into_raw(Box::new(MnmtBpe { inner }));
        Ok(())
    })
}

/// # Safety
/// `bpe` must come from [`mnmt_bpe_load`] and not have been freed.
#[no_mangle]
pub unsafe extern "C" fn mnmt_bpe_free(bpe: *mut MnmtBpe) {
    if !bpe.is_null() {
        drop(Box::from_raw(bpe));
    }
}

/// Segments `text` into subword ids (no language tag, BOS or EOS).
///
/// # Safety
/// Pointers must be valid; the result is freed with [`mnmt_ids_free`].
#[no_mangle]
pub unsafe extern "C" fn mnmt_bpe_encode(
    bpe: *const MnmtBpe,
    input: *const c_char,
    out_ids: *mut *mut u32,
    out_len: *mut usize,
) -> MnmtStatus {
    guard(|| {
        out_ptr(out_ids, "out_ids")?;
        out_ptr(out_len, "out_len")?;
        let bpe = bpe.as_ref().ok_or_else(|| fail(MnmtStatus::NullPointer, "bpe is null"))?;
        let ids = bpe.inner.encode(text(input, "text")?).into_boxed_slice();
        *out_len = ids.len();
        *out_ids = Box::into_raw(ids) as *mut u32;
        Ok(())
    })
}

/// Joins subword ids back into text; special ids are skipped.
///
/// # Safety
/// `ids` must point to `len` values; the result is freed with
/// [`mnmt_string_free`].
#[no_mangle]
pub unsafe extern "C" fn mnmt_bpe_decode(
    bpe: *const MnmtBpe,
    ids: *const u32,
    len: usize,
    out: *mut *mut c_char,
) -> MnmtStatus {
    guard(|| {
        out_ptr(out, "out")?;
        let bpe = bpe.as_ref().ok_or_else(|| fail(MnmtStatus::NullPointer, "bpe is null"))?;
        if ids.is_null() && len > 0 {
            return Err(fail(MnmtStatus::NullPointer, "ids is null"));
        }
        let ids = if len == 0 { &[][..] } else { std::slice::from_raw_parts(ids, len) };
        let s = bpe
            .inner
            .decode(ids)
            .map_err(|e| fail(MnmtStatus::InvalidArgument, e.to_string()))?;
        *out = to_c(s)?;
        Ok(())
    })
}

/// Best transliteration of `input` from `from`'s script into `to`'s.
///
/// # Safety
/// Pointers must be valid; the result is freed with [`mnmt_string_free`].
#[no_mangle]
pub unsafe extern "C" fn mnmt_transliterate(
    input: *const c_char,
    from: *const c_char,
    to: *const c_char,
    out: *mut *mut c_char,
) -> MnmtStatus {
    guard(|| {
        out_ptr(out, "out")?;
        let r = check!(
            transliterate(text(input, "text")?, lang(from, "from")?, lang(to, "to")?),
            |e: &mnmt::translit::TranslitError| e.code()
        );
        *out = to_c(r.best().to_string())?;
        Ok(())
    })
}

/// Applies the per-pair filter rules with default settings.
///
/// # Safety
/// Pointers must be valid.
#[no_mangle]
pub unsafe extern "C" fn mnmt_filter_pair(
    source: *const c_char,
    target: *const c_char,
    source_lang: *const c_char,
    target_lang: *const c_char,
    out_verdict: *mut MnmtFilterVerdict,
) -> MnmtStatus {
    guard(|| {
        out_ptr(out_verdict, "out_verdict")?;
        let pair = SentencePair::new(
            text(source, "source")?,
            text(target, "target")?,
            lang(source_lang, "source_lang")?,
            lang(target_lang, "target_lang")?,
            1,
        )
        .map_err(|e| fail(MnmtStatus::InvalidArgument, e.to_string()))?;
        *out_verdict = match filter_pair(&pair, &FilterConfig::default()) {
            Verdict::Keep => MnmtFilterVerdict::Keep,
            Verdict::Reject(Rule::EmptySide) => MnmtFilterVerdict::EmptySide,
            Verdict::Reject(Rule::LengthBounds) => MnmtFilterVerdict::LengthBounds,
            Verdict::Reject(Rule::LengthRatio) => MnmtFilterVerdict::LengthRatio,
            Verdict::Reject(Rule::ScriptMismatch) => MnmtFilterVerdict::ScriptMismatch,
            Verdict::Reject(Rule::Duplicate) => MnmtFilterVerdict::Duplicate,
        };
        Ok(())
    })
}

/// Loads a checkpoint and the BPE model it was trained with.
///
/// # Safety
/// Pointers must be valid; the handle is freed with
/// [`mnmt_translator_free`].
#[no_mangle]
pub unsafe extern "C" fn mnmt_translator_load(
    checkpoint: *const c_char,
    bpe_prefix: *const c_char,
    out: *mut *mut MnmtTranslator,
) -> MnmtStatus {
    guard(|| {
        out_ptr(out, "out")?;
        let code = |e: &mnmt::pipeline::PipelineError| e.code();
        let ck = check!(load_checkpoint(text(checkpoint, "checkpoint")?), code);
        let bpe = check!(BpeModel::load(text(bpe_prefix, "bpe_prefix")?), |e: &mnmt::tokenizer::TokenizerError| e
            .code());
        if bpe.vocab_size() != ck.model.config().vocab_size_tgt {
            return Err(fail(
                MnmtStatus::Unsupported,
                format!(
                    "BPE vocabulary of {} does not match the model's {}",
                    bpe.vocab_size(),
                    ck.model.config().vocab_size_tgt
                ),
            ));
        }
        *out = Box::into_raw(Box::new(MnmtTranslator { model: ck.model, bpe }));
        Ok(())
    })
}

/// # Safety
/// `t` must come from [`mnmt_translator_load`] and not have been freed.
#[no_mangle]
pub unsafe extern "C" fn mnmt_translator_free(t: *mut MnmtTranslator) {
    if !t.is_null() {
        drop(Box::from_raw(t));
    }
}

/// Translates one sentence into `target_lang` with the given beam width.
///
/// # Safety
/// Pointers must be valid; the result is freed with [`mnmt_string_free`].
#[no_mangle]
pub unsafe extern "C" fn mnmt_translator_translate(
    t: *const MnmtTranslator,
    input: *const c_char,
    target_lang: *const c_char,
    beam_size: usize,
    out: *mut *mut c_char,
) -> MnmtStatus {
    guard(|| {
        out_ptr(out, "out")?;
        let t = t.as_ref().ok_or_else(|| fail(MnmtStatus::NullPointer, "translator is null"))?;
        if beam_size == 0 {
            return Err(fail(MnmtStatus::InvalidArgument, "beam_size must be at least 1"));
        }
        let cfg = DecodeConfig {
            beam_size,
            ..DecodeConfig::default()
        };
        let sentences = [text(input, "text")?.to_string()];
        let mut hyps = check!(
            translate_sentences(&t.model, &t.bpe, &sentences, lang(target_lang, "target_lang")?, &cfg),
            |e: &mnmt::pipeline::PipelineError| e.code()
        );
        *out = to_c(hyps.swap_remove(0))?;
        Ok(())
    })
}
