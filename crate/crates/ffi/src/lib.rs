//! C ABI over the `c2w2c` crate.
//!
//! Every function returns a [`C2w2cStatus`]; on failure a message is kept
//! per thread and can be read with [`c2w2c_last_error`]. Strings handed out
//! by the library must be released with [`c2w2c_string_free`], models with
//! [`c2w2c_model_free`]. A model handle may be shared between threads for
//! scoring and sampling.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;

use c2w2c::checkpoint::Checkpoint;
use c2w2c::corpus::parse_sentences;
use c2w2c::inference::{
    corpus_perplexity, format_samples, sample_beam, sample_stochastic, score_sentence, SampleConfig, ScoreOptions,
};
use c2w2c::model::{AnyModel, LanguageModel};
use c2w2c::Error;

/// Result codes shared by every entry point.
#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum C2w2cStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidUtf8 = 2,
    Io = 3,
    Format = 4,
    UnknownCharacter = 5,
    InvalidArgument = 6,
    Internal = 7,
}

/// A loaded model. Opaque to C.
pub struct C2w2cModel {
    model: AnyModel<f64>,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(msg: &str) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = c);
}

fn status_of(e: &Error) -> C2w2cStatus {
    match e {
        Error::Io { .. } => C2w2cStatus::Io,
        Error::Encoding { .. } => C2w2cStatus::InvalidUtf8,
        Error::Checkpoint(_) | Error::Corpus(_) => C2w2cStatus::Format,
        Error::UnknownCharacter(_) => C2w2cStatus::UnknownCharacter,
        Error::Config(_) | Error::Empty(_) | Error::Index(_) => C2w2cStatus::InvalidArgument,
        _ => C2w2cStatus::Internal,
    }
}

struct Fail(C2w2cStatus, String);

impl From<Error> for Fail {
    fn from(e: Error) -> Self {
        Fail(status_of(&e), e.to_string())
    }
}

/// Runs `f`, converting errors and panics into a status code.
fn guard(f: impl FnOnce() -> Result<(), Fail>) -> C2w2cStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            set_error("");
            C2w2cStatus::Ok
        }
        Ok(Err(Fail(code, msg))) => {
            set_error(&msg);
            code
        }
        Err(_) => {
            set_error("internal panic");
            C2w2cStatus::Internal
        }
    }
}

unsafe fn str_arg<'a>(p: *const c_char, what: &str) -> Result<&'a str, Fail> {
    if p.is_null() {
        return Err(Fail(C2w2cStatus::NullPointer, format!("{what} is null")));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| Fail(C2w2cStatus::InvalidUtf8, format!("{what} is not valid UTF-8")))
}

unsafe fn model_arg<'a>(h: *const C2w2cModel) -> Result<&'a C2w2cModel, Fail> {
    h.as_ref().ok_or_else(|| Fail(C2w2cStatus::NullPointer, "model handle is null".into()))
}

fn out_arg<T>(p: *mut T) -> Result<(), Fail> {
    if p.is_null() {
        Err(Fail(C2w2cStatus::NullPointer, "output pointer is null".into()))
    } else {
        Ok(())
    }
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn c2w2c_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Message of the last failed call on this thread, or an empty string.
/// Valid until the next call into the library from the same thread.
#[no_mangle]
pub extern "C" fn c2w2c_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Loads a checkpoint (either precision) for inference.
///
/// # Safety
/// `path` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn c2w2c_model_load(path: *const c_char, out: *mut *mut C2w2cModel) -> C2w2cStatus {
    guard(|| {
        out_arg(out)?;
        *out = ptr::null_mut();
        let path = str_arg(path, "path")?;
        let ck = Checkpoint::<f64>::load(Path::new(path))?;
        *out = Box::into_raw(Box::new(C2w2cModel { model: ck.model }));
        Ok(())
    })
}

/// Releases a model. Null is ignored.
///
/// # Safety
/// `model` must come from [`c2w2c_model_load`] and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn c2w2c_model_free(model: *mut C2w2cModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Number of scalar parameters in the model.
///
/// # Safety
/// `model` must be a live handle and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn c2w2c_model_param_count(model: *const C2w2cModel, out: *mut u64) -> C2w2cStatus {
    guard(|| {
        out_arg(out)?;
        *out = model_arg(model)?.model.params().numel() as u64;
        Ok(())
    })
}

/// Mean per-word negative log-likelihood of one whitespace-tokenized
/// sentence. Words with unknown characters fail with
/// `UnknownCharacter`; the message lists them.
///
/// # Safety
/// `model` must be a live handle, `sentence` a NUL-terminated string and
/// `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn c2w2c_score_sentence(
    model: *const C2w2cModel,
    sentence: *const c_char,
    include_end: bool,
    out: *mut f64,
) -> C2w2cStatus {
    guard(|| {
        out_arg(out)?;
        let m = &model_arg(model)?.model;
        let tokens: Vec<String> = str_arg(sentence, "sentence")?.split_whitespace().map(String::from).collect();
        let r = score_sentence(m, &tokens, ScoreOptions { include_end })?;
        *out = r.score;
        Ok(())
    })
}

/// Word perplexity of newline-separated sentences.
///
/// # Safety
/// `model` must be a live handle, `text` a NUL-terminated string and `out`
/// a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn c2w2c_perplexity(model: *const C2w2cModel, text: *const c_char, out: *mut f64) -> C2w2cStatus {
    guard(|| {
        out_arg(out)?;
        let m = &model_arg(model)?.model;
        let sentences = parse_sentences(str_arg(text, "text")?, false);
        *out = corpus_perplexity(m, &sentences)?.perplexity;
        Ok(())
    })
}

/// Generates text after the space-separated `context`. With `beam` false
/// the most likely character is taken at every step and one line is
/// returned; otherwise up to `sentence_k` lines `rank\tlogp\tsentence`.
/// The result must be freed with [`c2w2c_string_free`].
///
/// # Safety
/// `model` must be a live handle, `context` a NUL-terminated string and
/// `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn c2w2c_sample(
    model: *const C2w2cModel,
    context: *const c_char,
    beam: bool,
    word_k: u32,
    sentence_k: u32,
    max_words: u32,
    out: *mut *mut c_char,
) -> C2w2cStatus {
    guard(|| {
        out_arg(out)?;
        *out = ptr::null_mut();
        let AnyModel::C2w2c(m) = &model_arg(model)?.model else {
            return Err(Fail(C2w2cStatus::InvalidArgument, "sampling needs a c2w2c model".into()));
        };
        if max_words == 0 || (beam && (word_k == 0 || sentence_k == 0)) {
            return Err(Fail(C2w2cStatus::InvalidArgument, "beam widths and max_words must be positive".into()));
        }
        let words: Vec<String> = str_arg(context, "context")?.split_whitespace().map(String::from).collect();
        for w in &words {
            m.check_scorable(w)?;
        }
        let hyps = if beam {
            let cfg = SampleConfig {
                word_k: word_k as usize,
                sentence_k: sentence_k as usize,
                max_words: max_words as usize,
                length_norm: false,
            };
            sample_beam(m, &words, cfg)?
        } else {
            vec![sample_stochastic(m, &words, max_words as usize)?]
        };
        let text = CString::new(format_samples(&hyps)).map_err(|_| Fail(C2w2cStatus::Internal, "NUL in output".into()))?;
        *out = text.into_raw();
        Ok(())
    })
}

/// Frees a string returned by the library. Null is ignored.
///
/// # Safety
/// `s` must come from this library and not be freed twice.
#[no_mangle]
pub unsafe extern "C" fn c2w2c_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}
