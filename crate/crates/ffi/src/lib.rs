//! C ABI over the `bingo` library.
//!
//! Every entry point returns a [`BingoStatus`]. On failure the message is
//! available from [`bingo_last_error_message`] until the next call on the
//! same thread. Objects cross the boundary as opaque handles that the caller
//! releases with the matching `_free` function; strings returned through an
//! out-pointer are released with [`bingo_string_free`].

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;

use bingo::asm::{parse_program, tokenize_instruction, Program, Side};
use bingo::embed::HashedEmbedder;
use bingo::flow::SliceConfig;
use bingo::gnn::{load_model, model_forward, GnnParams, TwinSample};
use bingo::patch::{twin_to_json, TwinGraph};
use bingo::pipeline::{extract_twins, PatchSource};
use rand::rngs::mock::StepRng;

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BingoStatus {
    Ok = 0,
    NullArgument = 1,
    InvalidUtf8 = 2,
    Tokenize = 3,
    Parse = 4,
    Patch = 5,
    Model = 6,
    OutOfRange = 7,
    Panic = 8,
}

/// Parsed ASM-TEXT program.
pub struct BingoProgram(Program);

/// Twin graphs produced by one extraction.
pub struct BingoTwinList(Vec<TwinGraph>);

/// Trained classifier weights.
pub struct BingoModel(GnnParams);

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: impl Into<String>) {
    let msg = msg.into().replace('\0', " ");
    LAST_ERROR.with(|e| *e.borrow_mut() = CString::new(msg).ok());
}

struct Fail(BingoStatus, String);

type FfiResult<T> = Result<T, Fail>;

fn fail<E: std::fmt::Display>(status: BingoStatus) -> impl FnOnce(E) -> Fail {
    move |e| Fail(status, e.to_string())
}

/// Runs `f` behind a panic guard and maps its outcome to a status code.
fn guard(f: impl FnOnce() -> FfiResult<()>) -> BingoStatus {
    LAST_ERROR.with(|e| *e.borrow_mut() = None);
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => BingoStatus::Ok,
        Ok(Err(Fail(status, msg))) => {
            set_error(msg);
            status
        }
        Err(payload) => {
            let msg = payload
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| payload.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "unknown panic".into());
            set_error(format!("panic: {msg}"));
            BingoStatus::Panic
        }
    }
}

unsafe fn str_arg<'a>(p: *const c_char, name: &str) -> FfiResult<&'a str> {
    if p.is_null() {
        return Err(Fail(BingoStatus::NullArgument, format!("{name} is null")));
    }
    CStr::from_ptr(p).to_str().map_err(|_| {
        Fail(
            BingoStatus::InvalidUtf8,
            format!("{name} is not valid UTF-8"),
        )
    })
}

unsafe fn ref_arg<'a, T>(p: *const T, name: &str) -> FfiResult<&'a T> {
    p.as_ref()
        .ok_or_else(|| Fail(BingoStatus::NullArgument, format!("{name} is null")))
}

unsafe fn write_out<T>(out: *mut T, value: T) -> FfiResult<()> {
    if out.is_null() {
        return Err(Fail(
            BingoStatus::NullArgument,
            "output pointer is null".into(),
        ));
    }
    out.write(value);
    Ok(())
}

fn to_c_string(s: String) -> *mut c_char {
    CString::new(s.replace('\0', " "))
        .expect("nul bytes replaced")
        .into_raw()
}

/// Message for the last failed call on this thread, or null after a success.
/// The pointer stays valid until the next `bingo_*` call on this thread.
#[no_mangle]
pub extern "C" fn bingo_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |s| s.as_ptr()))
}

/// Releases a string returned by this library. Null is ignored.
///
/// # Safety
/// `s` must come from a `bingo_*` out-parameter and not be freed twice.
#[no_mangle]
pub unsafe extern "C" fn bingo_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// Tokenizes one instruction. `*out_json` receives a JSON array of
/// `[text, kind]` pairs.
///
/// # Safety
/// String arguments must be null or NUL-terminated; `out_json` must be writable.
#[no_mangle]
pub unsafe extern "C" fn bingo_tokenize(
    mnemonic: *const c_char,
    operands: *const c_char,
    out_json: *mut *mut c_char,
) -> BingoStatus {
    guard(|| {
        let m = str_arg(mnemonic, "mnemonic")?;
        let ops = if operands.is_null() {
            ""
        } else {
            str_arg(operands, "operands")?
        };
        let tokens = tokenize_instruction(m, ops).map_err(fail(BingoStatus::Tokenize))?;
        let pairs: Vec<(&str, &str)> = tokens
            .iter()
            .map(|t| (t.text.as_str(), t.kind.as_str()))
            .collect();
        let json = serde_json::to_string(&pairs).map_err(fail(BingoStatus::Panic))?;
        write_out(out_json, to_c_string(json))
    })
}

/// Parses ASM-TEXT into a program handle.
///
/// # Safety
/// `text` must be null or NUL-terminated; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn bingo_program_parse(
    text: *const c_char,
    out: *mut *mut BingoProgram,
) -> BingoStatus {
    guard(|| {
        let text = str_arg(text, "text")?;
        let p = parse_program(text).map_err(fail(BingoStatus::Parse))?;
        write_out(out, Box::into_raw(Box::new(BingoProgram(p))))
    })
}

/// # Safety
/// `p` must be null or a live handle from [`bingo_program_parse`].
#[no_mangle]
pub unsafe extern "C" fn bingo_program_free(p: *mut BingoProgram) {
    if !p.is_null() {
        drop(Box::from_raw(p));
    }
}

/// # Safety
/// `p` must be a live program handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn bingo_program_function_count(
    p: *const BingoProgram,
    out: *mut usize,
) -> BingoStatus {
    guard(|| write_out(out, ref_arg(p, "program")?.0.functions.len()))
}

/// Locates patch blocks by fingerprint diff and builds one twin graph per
/// touched function. An identical pair yields an empty list.
///
/// # Safety
/// `pre` and `post` must be live program handles; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn bingo_extract(
    pre: *const BingoProgram,
    post: *const BingoProgram,
    commit_id: *const c_char,
    slice_stride: usize,
    out: *mut *mut BingoTwinList,
) -> BingoStatus {
    guard(|| {
        let commit = if commit_id.is_null() {
            "local"
        } else {
            str_arg(commit_id, "commit_id")?
        };
        let pre = ref_arg(pre, "pre")?
            .0
            .clone()
            .with_origin(commit, Side::PrePatch);
        let post = ref_arg(post, "post")?
            .0
            .clone()
            .with_origin(commit, Side::PostPatch);
        let slice = SliceConfig {
            stride: slice_stride,
            ..SliceConfig::default()
        };
        slice.validate().map_err(fail(BingoStatus::Patch))?;
        let (twins, _) = extract_twins(&pre, &post, &PatchSource::Diff, None, &slice)
            .map_err(fail(BingoStatus::Patch))?;
        write_out(out, Box::into_raw(Box::new(BingoTwinList(twins))))
    })
}

/// # Safety
/// `l` must be null or a live handle from [`bingo_extract`].
#[no_mangle]
pub unsafe extern "C" fn bingo_twin_list_free(l: *mut BingoTwinList) {
    if !l.is_null() {
        drop(Box::from_raw(l));
    }
}

/// # Safety
/// `l` must be a live twin list; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn bingo_twin_list_len(
    l: *const BingoTwinList,
    out: *mut usize,
) -> BingoStatus {
    guard(|| write_out(out, ref_arg(l, "twin list")?.0.len()))
}

fn twin_at(l: &BingoTwinList, index: usize) -> FfiResult<&TwinGraph> {
    l.0.get(index).ok_or_else(|| {
        Fail(
            BingoStatus::OutOfRange,
            format!("index {index} out of range (len {})", l.0.len()),
        )
    })
}

/// Serializes twin `index` in the twin-graph JSON format.
///
/// # Safety
/// `l` must be a live twin list; `out_json` must be writable.
#[no_mangle]
pub unsafe extern "C" fn bingo_twin_list_to_json(
    l: *const BingoTwinList,
    index: usize,
    out_json: *mut *mut c_char,
) -> BingoStatus {
    guard(|| {
        let t = twin_at(ref_arg(l, "twin list")?, index)?;
        write_out(out_json, to_c_string(twin_to_json(t)))
    })
}

/// Loads a classifier checkpoint written by `bingo train`.
///
/// # Safety
/// `path` must be null or NUL-terminated; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn bingo_model_load(
    path: *const c_char,
    out: *mut *mut BingoModel,
) -> BingoStatus {
    guard(|| {
        let path = str_arg(path, "path")?;
        let params = load_model(Path::new(path)).map_err(fail(BingoStatus::Model))?;
        write_out(out, Box::into_raw(Box::new(BingoModel(params))))
    })
}

/// # Safety
/// `m` must be null or a live handle from [`bingo_model_load`].
#[no_mangle]
pub unsafe extern "C" fn bingo_model_free(m: *mut BingoModel) {
    if !m.is_null() {
        drop(Box::from_raw(m));
    }
}

/// Eval-mode probability that twin `index` is a security patch. Nodes are
/// embedded with the hashed embedder, so the model must have been trained
/// with it.
///
/// # Safety
/// `m` and `l` must be live handles; `out_p_security` must be writable.
#[no_mangle]
pub unsafe extern "C" fn bingo_model_predict(
    m: *const BingoModel,
    l: *const BingoTwinList,
    index: usize,
    out_p_security: *mut f64,
) -> BingoStatus {
    guard(|| {
        let params = &ref_arg(m, "model")?.0;
        let t = twin_at(ref_arg(l, "twin list")?, index)?;
        let embedder = HashedEmbedder::default();
        if params.dims.input != embedder.dim {
            return Err(Fail(
                BingoStatus::Model,
                format!(
                    "model expects {}-wide node vectors, hashed embedder gives {}",
                    params.dims.input, embedder.dim
                ),
            ));
        }
        let sample = TwinSample::from_twin(t, &embedder).map_err(fail(BingoStatus::Model))?;
        let pred = model_forward(params, &sample, false, 0.0, &mut StepRng::new(0, 0))
            .map_err(fail(BingoStatus::Model))?;
        write_out(out_p_security, pred.p1)
    })
}
