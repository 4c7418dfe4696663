//! C ABI over the negclip toolkit.
//!
//! Every fallible call returns a [`NegclipStatus`]; on failure the message is
//! available from [`negclip_last_error`] on the same thread. Handles are
//! opaque and must be released with their `_free` function.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;

use negclip::encoders::{self, EmbeddingVector, EncoderBundle};
use negclip::finetune;
use negclip::negref::{self, BBox};
use negclip::text_negation::{self, CorpusScanner, NegationLexicon};
use negclip::Error;

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NegclipStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidUtf8 = 2,
    InvalidArgument = 3,
    Io = 4,
    Parse = 5,
    Lexicon = 6,
    BundleNotFound = 7,
    Checkpoint = 8,
    DimMismatch = 9,
    NotNormalized = 10,
    Image = 11,
    BufferTooSmall = 12,
    Panic = 13,
    Other = 14,
}

/// Negation lexicon handle.
pub struct NegclipLexicon(NegationLexicon);

/// Streaming corpus scanner handle.
pub struct NegclipScanner(CorpusScanner);

/// Encoder bundle handle.
pub struct NegclipBundle(EncoderBundle);

/// Caption- and word-level negation counts.
#[repr(C)]
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct NegclipStats {
    pub caption_total: u64,
    pub caption_neg: u64,
    pub word_total: u64,
    pub word_neg: u64,
    pub caption_ratio: f64,
    pub word_ratio: f64,
}

/// Pixel box, top-left origin.
#[repr(C)]
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct NegclipBox {
    pub x: u32,
    pub y: u32,
    pub w: u32,
    pub h: u32,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(message: impl Into<String>) {
    let msg = CString::new(message.into().replace('\0', " ")).expect("nul bytes replaced");
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(msg));
}

struct Failure(NegclipStatus, String);

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let status = match &e {
            Error::Io { .. } => NegclipStatus::Io,
            Error::Parse { .. } => NegclipStatus::Parse,
            Error::Lexicon(_) => NegclipStatus::Lexicon,
            Error::BundleNotFound(_) => NegclipStatus::BundleNotFound,
            Error::Checkpoint(_) | Error::ArchitectureMismatch { .. } => NegclipStatus::Checkpoint,
            Error::DimMismatch { .. } | Error::ShapeMismatch(_) => NegclipStatus::DimMismatch,
            Error::NotNormalized { .. } => NegclipStatus::NotNormalized,
            Error::Image { .. } | Error::DegenerateBox { .. } | Error::BoxOutOfBounds { .. } => NegclipStatus::Image,
            _ => NegclipStatus::Other,
        };
        Failure(status, format!("{}: {e}", e.class()))
    }
}

fn fail(status: NegclipStatus, message: impl Into<String>) -> Failure {
    Failure(status, message.into())
}

/// Runs `body`, records any failure and converts panics into `Panic`.
fn guard(body: impl FnOnce() -> Result<(), Failure>) -> NegclipStatus {
    match catch_unwind(AssertUnwindSafe(body)) {
        Ok(Ok(())) => {
            LAST_ERROR.with(|e| *e.borrow_mut() = None);
            NegclipStatus::Ok
        }
        Ok(Err(Failure(status, msg))) => {
            set_error(msg);
            status
        }
        Err(_) => {
            set_error("internal panic");
            NegclipStatus::Panic
        }
    }
}

unsafe fn str_arg<'a>(ptr: *const c_char, name: &str) -> Result<&'a str, Failure> {
    if ptr.is_null() {
        return Err(fail(NegclipStatus::NullPointer, format!("`{name}` is null")));
    }
    CStr::from_ptr(ptr)
        .to_str()
        .map_err(|_| fail(NegclipStatus::InvalidUtf8, format!("`{name}` is not valid UTF-8")))
}

unsafe fn ref_arg<'a, T>(ptr: *const T, name: &str) -> Result<&'a T, Failure> {
    ptr.as_ref()
        .ok_or_else(|| fail(NegclipStatus::NullPointer, format!("`{name}` is null")))
}

unsafe fn out_arg<'a, T>(ptr: *mut T, name: &str) -> Result<&'a mut T, Failure> {
    ptr.as_mut()
        .ok_or_else(|| fail(NegclipStatus::NullPointer, format!("`{name}` is null")))
}

unsafe fn slice_arg<'a>(ptr: *const f64, len: usize, name: &str) -> Result<&'a [f64], Failure> {
    if ptr.is_null() {
        return Err(fail(NegclipStatus::NullPointer, format!("`{name}` is null")));
    }
    Ok(std::slice::from_raw_parts(ptr, len))
}

/// Message for the last failed call on this thread, or null. Valid until the
/// next call on the same thread.
#[no_mangle]
pub extern "C" fn negclip_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(std::ptr::null(), |s| s.as_ptr()))
}

/// Frees a string returned by this library.
///
/// # Safety
/// `s` must come from this library or be null.
#[no_mangle]
pub unsafe extern "C" fn negclip_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// Creates a lexicon from a comma-separated term list, or the built-in
/// lexicon when `terms` is null.
///
/// # Safety
/// `terms` must be null or a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn negclip_lexicon_new(terms: *const c_char, out: *mut *mut NegclipLexicon) -> NegclipStatus {
    guard(|| {
        let out = out_arg(out, "out")?;
        let lexicon = if terms.is_null() {
            NegationLexicon::default()
        } else {
            NegationLexicon::parse_list(str_arg(terms, "terms")?)?
        };
        *out = Box::into_raw(Box::new(NegclipLexicon(lexicon)));
        Ok(())
    })
}

/// # Safety
/// `lexicon` must come from [`negclip_lexicon_new`] or be null.
#[no_mangle]
pub unsafe extern "C" fn negclip_lexicon_free(lexicon: *mut NegclipLexicon) {
    if !lexicon.is_null() {
        drop(Box::from_raw(lexicon));
    }
}

/// Writes the number of negation tokens in `text` to `count`.
///
/// # Safety
/// Pointers must be valid; `text` NUL-terminated.
#[no_mangle]
pub unsafe extern "C" fn negclip_contains_negation(
    lexicon: *const NegclipLexicon,
    text: *const c_char,
    count: *mut usize,
) -> NegclipStatus {
    guard(|| {
        let lexicon = ref_arg(lexicon, "lexicon")?;
        let text = str_arg(text, "text")?;
        *out_arg(count, "count")? = text_negation::contains_negation(text, &lexicon.0).matched.len();
        Ok(())
    })
}

/// Creates a scanner holding its own copy of `lexicon`.
///
/// # Safety
/// Pointers must be valid.
#[no_mangle]
pub unsafe extern "C" fn negclip_scanner_new(
    lexicon: *const NegclipLexicon,
    out: *mut *mut NegclipScanner,
) -> NegclipStatus {
    guard(|| {
        let lexicon = ref_arg(lexicon, "lexicon")?;
        *out_arg(out, "out")? = Box::into_raw(Box::new(NegclipScanner(CorpusScanner::new(lexicon.0.clone()))));
        Ok(())
    })
}

/// Counts one caption.
///
/// # Safety
/// Pointers must be valid; `caption` NUL-terminated.
#[no_mangle]
pub unsafe extern "C" fn negclip_scanner_push(scanner: *mut NegclipScanner, caption: *const c_char) -> NegclipStatus {
    guard(|| {
        let scanner = out_arg(scanner, "scanner")?;
        scanner.0.push_text(str_arg(caption, "caption")?);
        Ok(())
    })
}

/// # Safety
/// Pointers must be valid.
#[no_mangle]
pub unsafe extern "C" fn negclip_scanner_stats(scanner: *const NegclipScanner, out: *mut NegclipStats) -> NegclipStatus {
    guard(|| {
        let s = ref_arg(scanner, "scanner")?.0.stats();
        *out_arg(out, "out")? = NegclipStats {
            caption_total: s.caption_total,
            caption_neg: s.caption_neg,
            word_total: s.word_total,
            word_neg: s.word_neg,
            caption_ratio: s.caption_ratio,
            word_ratio: s.word_ratio,
        };
        Ok(())
    })
}

/// # Safety
/// `scanner` must come from [`negclip_scanner_new`] or be null.
#[no_mangle]
pub unsafe extern "C" fn negclip_scanner_free(scanner: *mut NegclipScanner) {
    if !scanner.is_null() {
        drop(Box::from_raw(scanner));
    }
}

fn to_bbox(b: NegclipBox) -> BBox {
    BBox::new(b.x, b.y, b.w, b.h)
}

/// Grows `patch` to the largest box within one own-size of itself that stays
/// inside the image and disjoint from `other`.
///
/// # Safety
/// `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn negclip_maximize_patch(
    patch: NegclipBox,
    other: NegclipBox,
    width: u32,
    height: u32,
    out: *mut NegclipBox,
) -> NegclipStatus {
    guard(|| {
        let out = out_arg(out, "out")?;
        let (p, o) = (to_bbox(patch), to_bbox(other));
        if !p.within(width, height) || !o.within(width, height) {
            return Err(fail(NegclipStatus::InvalidArgument, "box lies outside the image"));
        }
        if p.overlaps(&o) {
            return Err(fail(NegclipStatus::InvalidArgument, "boxes overlap"));
        }
        let r = negref::maximize_patch(p, o, width, height);
        *out = NegclipBox { x: r.x, y: r.y, w: r.w, h: r.h };
        Ok(())
    })
}

/// Loads a bundle directory.
///
/// # Safety
/// `dir` must be NUL-terminated; `out` writable.
#[no_mangle]
pub unsafe extern "C" fn negclip_bundle_load(dir: *const c_char, out: *mut *mut NegclipBundle) -> NegclipStatus {
    guard(|| {
        let out = out_arg(out, "out")?;
        let bundle = EncoderBundle::load(Path::new(str_arg(dir, "dir")?))?;
        *out = Box::into_raw(Box::new(NegclipBundle(bundle)));
        Ok(())
    })
}

/// # Safety
/// `bundle` must come from [`negclip_bundle_load`] or be null.
#[no_mangle]
pub unsafe extern "C" fn negclip_bundle_free(bundle: *mut NegclipBundle) {
    if !bundle.is_null() {
        drop(Box::from_raw(bundle));
    }
}

/// Embedding dimension, or 0 for a null handle.
///
/// # Safety
/// `bundle` must be valid or null.
#[no_mangle]
pub unsafe extern "C" fn negclip_bundle_dim(bundle: *const NegclipBundle) -> usize {
    bundle.as_ref().map_or(0, |b| b.0.dim())
}

/// Architecture tag as a new string; free with [`negclip_string_free`].
///
/// # Safety
/// `bundle` must be valid or null.
#[no_mangle]
pub unsafe extern "C" fn negclip_bundle_architecture(bundle: *const NegclipBundle) -> *mut c_char {
    match bundle.as_ref() {
        Some(b) => CString::new(b.0.architecture.replace('\0', " "))
            .map_or(std::ptr::null_mut(), CString::into_raw),
        None => std::ptr::null_mut(),
    }
}

fn write_embedding(e: EmbeddingVector, out: &mut [f64]) -> Result<(), Failure> {
    if out.len() != e.dim() {
        return Err(fail(
            NegclipStatus::BufferTooSmall,
            format!("buffer holds {} values, embedding has {}", out.len(), e.dim()),
        ));
    }
    out.copy_from_slice(e.values());
    Ok(())
}

/// Writes the unit-norm text embedding into `out[0..len]`; `len` must equal
/// the bundle dimension.
///
/// # Safety
/// `out` must point to `len` writable doubles.
#[no_mangle]
pub unsafe extern "C" fn negclip_encode_text(
    bundle: *const NegclipBundle,
    text: *const c_char,
    out: *mut f64,
    len: usize,
) -> NegclipStatus {
    guard(|| {
        let bundle = ref_arg(bundle, "bundle")?;
        let text = str_arg(text, "text")?;
        if out.is_null() {
            return Err(fail(NegclipStatus::NullPointer, "`out` is null"));
        }
        let e = bundle.0.encode_text(text)?;
        write_embedding(e, std::slice::from_raw_parts_mut(out, len))
    })
}

/// Writes the unit-norm embedding of the image at `path`.
///
/// # Safety
/// `out` must point to `len` writable doubles.
#[no_mangle]
pub unsafe extern "C" fn negclip_encode_image_file(
    bundle: *const NegclipBundle,
    path: *const c_char,
    out: *mut f64,
    len: usize,
) -> NegclipStatus {
    guard(|| {
        let bundle = ref_arg(bundle, "bundle")?;
        let path = str_arg(path, "path")?;
        if out.is_null() {
            return Err(fail(NegclipStatus::NullPointer, "`out` is null"));
        }
        let image = encoders::load_image(Path::new(path))?;
        let e = bundle.0.encode_image(&image)?;
        write_embedding(e, std::slice::from_raw_parts_mut(out, len))
    })
}

/// Cosine similarity of two vectors of length `len`, clamped to [-1, 1].
///
/// # Safety
/// `a` and `b` must point to `len` readable doubles.
#[no_mangle]
pub unsafe extern "C" fn negclip_similarity(a: *const f64, b: *const f64, len: usize, out: *mut f64) -> NegclipStatus {
    guard(|| {
        let a = EmbeddingVector::new(slice_arg(a, len, "a")?.to_vec());
        let b = EmbeddingVector::new(slice_arg(b, len, "b")?.to_vec());
        *out_arg(out, "out")? = encoders::similarity(&a, &b)?;
        Ok(())
    })
}

/// Symmetric InfoNCE over `n` row-major unit-norm pairs of width `dim`.
///
/// # Safety
/// `text` and `image` must point to `n * dim` readable doubles.
#[no_mangle]
pub unsafe extern "C" fn negclip_info_nce(
    text: *const f64,
    image: *const f64,
    n: usize,
    dim: usize,
    scale: f64,
    out: *mut f64,
) -> NegclipStatus {
    guard(|| {
        let len = n
            .checked_mul(dim)
            .ok_or_else(|| fail(NegclipStatus::InvalidArgument, "n * dim overflows"))?;
        let t = ndarray::ArrayView2::from_shape((n, dim), slice_arg(text, len, "text")?)
            .map_err(|e| fail(NegclipStatus::InvalidArgument, e.to_string()))?;
        let i = ndarray::ArrayView2::from_shape((n, dim), slice_arg(image, len, "image")?)
            .map_err(|e| fail(NegclipStatus::InvalidArgument, e.to_string()))?;
        *out_arg(out, "out")? = finetune::info_nce(t, i, scale)?;
        Ok(())
    })
}
