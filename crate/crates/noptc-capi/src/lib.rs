//! C ABI over the model-optimization library: opaque model handles, integer
//! status codes, and a thread-local last-error message. The matching header
//! is include/noptc.h.

use std::cell::RefCell;
use std::ffi::{c_char, c_int, CStr, CString};
use std::ptr;

use noptc::graph::Graph;
use noptc::{corpus, interp, pipeline, serdes};

/// Opaque model handle.
pub struct NoptcModel {
    graph: Graph,
}

pub const NOPTC_OK: c_int = 0;
pub const NOPTC_ERR_INVALID_ARG: c_int = 1;
pub const NOPTC_ERR_PARSE: c_int = 2;
pub const NOPTC_ERR_PASS: c_int = 3;
pub const NOPTC_ERR_EXEC: c_int = 4;

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::new("").unwrap());
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = c);
}

fn fail(code: c_int, msg: String) -> c_int {
    set_error(msg);
    code
}

/// Message for the most recent failure on this thread; empty string if none.
/// Valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn noptc_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Stable name for a status code.
#[no_mangle]
pub extern "C" fn noptc_status_name(status: c_int) -> *const c_char {
    let name: &'static [u8] = match status {
        NOPTC_OK => b"ok\0",
        NOPTC_ERR_INVALID_ARG => b"invalid_argument\0",
        NOPTC_ERR_PARSE => b"parse_error\0",
        NOPTC_ERR_PASS => b"pass_error\0",
        NOPTC_ERR_EXEC => b"exec_error\0",
        _ => b"unknown\0",
    };
    name.as_ptr() as *const c_char
}

/// Deserializes a model; on success stores a new handle in `out`.
///
/// # Safety
/// `bytes` must point to `len` readable bytes; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn noptc_model_load(
    bytes: *const u8,
    len: usize,
    out: *mut *mut NoptcModel,
) -> c_int {
    if bytes.is_null() || out.is_null() {
        return fail(NOPTC_ERR_INVALID_ARG, "null pointer".into());
    }
    let slice = std::slice::from_raw_parts(bytes, len);
    match serdes::deserialize(slice) {
        Ok(graph) => {
            *out = Box::into_raw(Box::new(NoptcModel { graph }));
            NOPTC_OK
        }
        Err(e) => fail(NOPTC_ERR_PARSE, format!("{e:?}")),
    }
}

/// Frees a handle returned by `noptc_model_load`. Null is a no-op.
///
/// # Safety
/// `model` must be a live handle from this library, not yet freed.
#[no_mangle]
pub unsafe extern "C" fn noptc_model_free(model: *mut NoptcModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Serializes the model. The buffer stored in `out` is owned by the caller
/// and must be released with `noptc_buffer_free`.
///
/// # Safety
/// `model` must be a live handle; `out` and `out_len` must be writable.
#[no_mangle]
pub unsafe extern "C" fn noptc_model_save(
    model: *const NoptcModel,
    out: *mut *mut u8,
    out_len: *mut usize,
) -> c_int {
    if model.is_null() || out.is_null() || out_len.is_null() {
        return fail(NOPTC_ERR_INVALID_ARG, "null pointer".into());
    }
    let bin = serdes::serialize(&(*model).graph);
    let boxed = bin.bytes.into_boxed_slice();
    *out_len = boxed.len();
    *out = Box::into_raw(boxed) as *mut u8;
    NOPTC_OK
}

/// Frees a buffer returned by `noptc_model_save`. Null is a no-op.
///
/// # Safety
/// `(bytes, len)` must come from `noptc_model_save`, not yet freed.
#[no_mangle]
pub unsafe extern "C" fn noptc_buffer_free(bytes: *mut u8, len: usize) {
    if !bytes.is_null() {
        drop(Box::from_raw(ptr::slice_from_raw_parts_mut(bytes, len)));
    }
}

/// Applies a named preset ("smallest", "accurate", "fastest") in place,
/// calibrating int8 modes on 8 seeded random inputs.
///
/// # Safety
/// `model` must be a live handle; `preset` a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn noptc_model_optimize(
    model: *mut NoptcModel,
    preset: *const c_char,
    seed: u64,
) -> c_int {
    if model.is_null() || preset.is_null() {
        return fail(NOPTC_ERR_INVALID_ARG, "null pointer".into());
    }
    let Ok(name) = CStr::from_ptr(preset).to_str() else {
        return fail(NOPTC_ERR_INVALID_ARG, "preset is not valid UTF-8".into());
    };
    let steps = match pipeline::preset(name) {
        Ok(s) => s,
        Err(e) => return fail(NOPTC_ERR_INVALID_ARG, format!("{e:?}")),
    };
    let graph = &(*model).graph;
    let calibration: Vec<_> = (0..8)
        .map(|i| corpus::random_inputs(graph, seed.wrapping_add(1000 + i)))
        .collect();
    let opts = pipeline::PipelineOptions::default();
    match pipeline::run_pipeline(graph, &steps, &opts, &calibration) {
        Ok((optimized, _)) => {
            (*model).graph = optimized;
            NOPTC_OK
        }
        Err(e) => fail(NOPTC_ERR_PASS, format!("{e:?}")),
    }
}

/// Stores the total trainable-parameter count in `out`.
///
/// # Safety
/// `model` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn noptc_model_param_count(
    model: *const NoptcModel,
    out: *mut usize,
) -> c_int {
    if model.is_null() || out.is_null() {
        return fail(NOPTC_ERR_INVALID_ARG, "null pointer".into());
    }
    *out = corpus::param_count(&(*model).graph);
    NOPTC_OK
}

/// Stores the constant-payload byte count in `out`.
///
/// # Safety
/// `model` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn noptc_model_payload_bytes(
    model: *const NoptcModel,
    out: *mut u64,
) -> c_int {
    if model.is_null() || out.is_null() {
        return fail(NOPTC_ERR_INVALID_ARG, "null pointer".into());
    }
    *out = (*model).graph.payload_bytes();
    NOPTC_OK
}

/// Runs the model on one seeded random input and stores the argmax of the
/// first output's innermost axis in `out`.
///
/// # Safety
/// `model` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn noptc_model_run_argmax(
    model: *const NoptcModel,
    seed: u64,
    out: *mut usize,
) -> c_int {
    if model.is_null() || out.is_null() {
        return fail(NOPTC_ERR_INVALID_ARG, "null pointer".into());
    }
    let graph = &(*model).graph;
    let inputs = corpus::random_inputs(graph, seed);
    match interp::run(graph, &inputs) {
        Ok(result) => {
            let Some(&first) = graph.outputs.first() else {
                return fail(NOPTC_ERR_EXEC, "model has no outputs".into());
            };
            let idx = interp::argmax_last_axis(&result.outputs[&first]);
            let Some(&v) = idx.first() else {
                return fail(NOPTC_ERR_EXEC, "empty output".into());
            };
            *out = v;
            NOPTC_OK
        }
        Err(e) => fail(NOPTC_ERR_EXEC, format!("{e:?}")),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use noptc::corpus;

    fn load(bytes: &[u8]) -> *mut NoptcModel {
        let mut handle: *mut NoptcModel = ptr::null_mut();
        let rc = unsafe { noptc_model_load(bytes.as_ptr(), bytes.len(), &mut handle) };
        assert_eq!(rc, NOPTC_OK);
        handle
    }

    #[test]
    fn load_save_round_trip() {
        let g = corpus::reference_cnn(0);
        let bytes = serdes::serialize(&g).bytes;
        let handle = load(&bytes);
        let mut out: *mut u8 = ptr::null_mut();
        let mut out_len = 0usize;
        let rc = unsafe { noptc_model_save(handle, &mut out, &mut out_len) };
        assert_eq!(rc, NOPTC_OK);
        let round = unsafe { std::slice::from_raw_parts(out, out_len) }.to_vec();
        assert_eq!(round, bytes);
        unsafe {
            noptc_buffer_free(out, out_len);
            noptc_model_free(handle);
        }
    }

    #[test]
    fn parse_error_sets_message() {
        let mut handle: *mut NoptcModel = ptr::null_mut();
        let junk = b"not a model";
        let rc = unsafe { noptc_model_load(junk.as_ptr(), junk.len(), &mut handle) };
        assert_eq!(rc, NOPTC_ERR_PARSE);
        let msg = unsafe { CStr::from_ptr(noptc_last_error()) }.to_str().unwrap();
        assert!(msg.contains("BadMagic"), "{msg}");
    }

    #[test]
    fn optimize_smallest_shrinks_payload() {
        let g = corpus::reference_cnn(0);
        let handle = load(&serdes::serialize(&g).bytes);
        let mut before = 0u64;
        unsafe { noptc_model_payload_bytes(handle, &mut before) };
        let preset = CString::new("smallest").unwrap();
        let rc = unsafe { noptc_model_optimize(handle, preset.as_ptr(), 0) };
        assert_eq!(rc, NOPTC_OK);
        let mut after = 0u64;
        unsafe { noptc_model_payload_bytes(handle, &mut after) };
        assert!(after < before / 3, "{after} vs {before}");
        unsafe { noptc_model_free(handle) };
    }

    #[test]
    fn unknown_preset_is_invalid_argument() {
        let g = corpus::reference_cnn(0);
        let handle = load(&serdes::serialize(&g).bytes);
        let preset = CString::new("bogus").unwrap();
        let rc = unsafe { noptc_model_optimize(handle, preset.as_ptr(), 0) };
        assert_eq!(rc, NOPTC_ERR_INVALID_ARG);
        unsafe { noptc_model_free(handle) };
    }

    #[test]
    fn run_argmax_matches_library() {
        let g = corpus::reference_cnn(0);
        let handle = load(&serdes::serialize(&g).bytes);
        let mut idx = usize::MAX;
        let rc = unsafe { noptc_model_run_argmax(handle, 3, &mut idx) };
        assert_eq!(rc, NOPTC_OK);
        let result = interp::run(&g, &corpus::random_inputs(&g, 3)).unwrap();
        let expect = interp::argmax_last_axis(&result.outputs[&g.outputs[0]])[0];
        assert_eq!(idx, expect);
        unsafe { noptc_model_free(handle) };
    }

    #[test]
    fn null_arguments_rejected() {
        let rc = unsafe { noptc_model_load(ptr::null(), 0, ptr::null_mut()) };
        assert_eq!(rc, NOPTC_ERR_INVALID_ARG);
        let mut count = 0usize;
        let rc = unsafe { noptc_model_param_count(ptr::null(), &mut count) };
        assert_eq!(rc, NOPTC_ERR_INVALID_ARG);
        unsafe { noptc_model_free(ptr::null_mut()) };
    }

    #[test]
    fn param_count_matches() {
        let g = corpus::reference_cnn(0);
        let handle = load(&serdes::serialize(&g).bytes);
        let mut count = 0usize;
        assert_eq!(unsafe { noptc_model_param_count(handle, &mut count) }, NOPTC_OK);
        assert_eq!(count, 67_018);
        unsafe { noptc_model_free(handle) };
    }
}
