//! C ABI over the rica toolkit.
//!
//! Every function returns a [`RicaStatus`]; on failure a message for the
//! calling thread is available from [`rica_last_error_message`]. Objects are
//! opaque handles released with their `_free` function. Matrices cross the
//! boundary as row-major `double` buffers.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use rica::analysis::{extract_sources, next_step_jacobian};
use rica::io::{read_bundle, read_checkpoint, write_bundle, Checkpoint, MatrixBundle};
use rica::matcore::{DenseMatrix, RngStream};
use rica::model::{sequence_nll, Mode};
use rica::{Error, ErrorKind};

/// Result codes. Values 2 to 4 match the command-line exit codes.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RicaStatus {
    Ok = 0,
    NullArgument = 1,
    Usage = 2,
    Data = 3,
    Numerical = 4,
    Panic = 5,
    BufferTooSmall = 6,
}

/// Named arrays and metadata.
pub struct RicaBundle(MatrixBundle);

/// Trained model with its configuration.
pub struct RicaModel(Checkpoint);

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(msg: impl Into<String>) {
    let msg = msg.into().replace('\0', " ");
    LAST_ERROR.with(|e| *e.borrow_mut() = CString::new(msg).unwrap_or_default());
}

enum Fail {
    Null(&'static str),
    Small(usize),
    Core(Error),
}

impl From<Error> for Fail {
    fn from(e: Error) -> Self {
        Fail::Core(e)
    }
}

fn guard(f: impl FnOnce() -> Result<(), Fail>) -> RicaStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            set_error("");
            RicaStatus::Ok
        }
        Ok(Err(Fail::Null(what))) => {
            set_error(format!("null pointer passed for {what}"));
            RicaStatus::NullArgument
        }
        Ok(Err(Fail::Small(need))) => {
            set_error(format!("output buffer too small, need {need} values"));
            RicaStatus::BufferTooSmall
        }
        Ok(Err(Fail::Core(e))) => {
            set_error(format!("{e} ({})", e.name()));
            match e.kind() {
                ErrorKind::Usage => RicaStatus::Usage,
                ErrorKind::Data => RicaStatus::Data,
                ErrorKind::Numerical => RicaStatus::Numerical,
            }
        }
        Err(_) => {
            set_error("internal panic");
            RicaStatus::Panic
        }
    }
}

unsafe fn str_arg<'a>(p: *const c_char, what: &'static str) -> Result<&'a str, Fail> {
    if p.is_null() {
        return Err(Fail::Null(what));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| Fail::Core(Error::InvalidConfig(format!("{what} is not UTF-8"))))
}

unsafe fn matrix_arg(rows: usize, cols: usize, data: *const f64) -> Result<DenseMatrix, Fail> {
    if data.is_null() {
        return Err(Fail::Null("data"));
    }
    let n = rows
        .checked_mul(cols)
        .ok_or_else(|| Fail::Core(Error::DimOverflow(format!("{rows}x{cols}"))))?;
    Ok(DenseMatrix::new(rows, cols, std::slice::from_raw_parts(data, n).to_vec())?)
}

unsafe fn write_out(values: &[f64], out: *mut f64, capacity: usize) -> Result<(), Fail> {
    if out.is_null() {
        return Err(Fail::Null("out"));
    }
    if capacity < values.len() {
        return Err(Fail::Small(values.len()));
    }
    ptr::copy_nonoverlapping(values.as_ptr(), out, values.len());
    Ok(())
}

unsafe fn handle<'a, T>(p: *const T, what: &'static str) -> Result<&'a T, Fail> {
    p.as_ref().ok_or(Fail::Null(what))
}

/// Message for the last failed call on this thread, or an empty string.
/// Valid until the next call into the library on the same thread.
#[no_mangle]
pub extern "C" fn rica_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Library version as a static string.
#[no_mangle]
pub extern "C" fn rica_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Creates an empty bundle.
///
/// # Safety
/// `out` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn rica_bundle_new(out: *mut *mut RicaBundle) -> RicaStatus {
    guard(|| {
        if out.is_null() {
            return Err(Fail::Null("out"));
        }
        *out = Box::into_raw(Box::new(RicaBundle(MatrixBundle::new())));
        Ok(())
    })
}

/// Reads a bundle file.
///
/// # Safety
/// `path` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn rica_bundle_read(
    path: *const c_char,
    out: *mut *mut RicaBundle,
) -> RicaStatus {
    guard(|| {
        let path = str_arg(path, "path")?;
        if out.is_null() {
            return Err(Fail::Null("out"));
        }
        let b = read_bundle(path)?;
        *out = Box::into_raw(Box::new(RicaBundle(b)));
        Ok(())
    })
}

/// Writes a bundle file.
///
/// # Safety
/// `bundle` must come from this library; `path` must be NUL-terminated.
#[no_mangle]
pub unsafe extern "C" fn rica_bundle_write(
    bundle: *const RicaBundle,
    path: *const c_char,
) -> RicaStatus {
    guard(|| {
        let b = handle(bundle, "bundle")?;
        let path = str_arg(path, "path")?;
        Ok(write_bundle(path, &b.0)?)
    })
}

/// Adds a `rows` x `cols` row-major matrix under `name`.
///
/// # Safety
/// `data` must hold `rows * cols` doubles.
#[no_mangle]
pub unsafe extern "C" fn rica_bundle_insert_matrix(
    bundle: *mut RicaBundle,
    name: *const c_char,
    rows: usize,
    cols: usize,
    data: *const f64,
) -> RicaStatus {
    guard(|| {
        let b = bundle.as_mut().ok_or(Fail::Null("bundle"))?;
        let name = str_arg(name, "name")?;
        let m = matrix_arg(rows, cols, data)?;
        Ok(b.0.insert_matrix(name, &m)?)
    })
}

/// Shape of the matrix stored under `name` (1-D arrays report `n` x 1).
///
/// # Safety
/// `rows` and `cols` must be valid pointers.
#[no_mangle]
pub unsafe extern "C" fn rica_bundle_matrix_shape(
    bundle: *const RicaBundle,
    name: *const c_char,
    rows: *mut usize,
    cols: *mut usize,
) -> RicaStatus {
    guard(|| {
        let b = handle(bundle, "bundle")?;
        let name = str_arg(name, "name")?;
        if rows.is_null() || cols.is_null() {
            return Err(Fail::Null("rows/cols"));
        }
        let a = b.0.array(name)?;
        let (r, c) = match a.dims.as_slice() {
            [r, c] => (*r, *c),
            [n] => (*n, 1),
            _ => {
                return Err(Error::ShapeMismatch(format!("{name} has dims {:?}", a.dims)).into())
            }
        };
        *rows = r;
        *cols = c;
        Ok(())
    })
}

/// Copies the array stored under `name` into `out` (row-major).
///
/// # Safety
/// `out` must have room for `capacity` doubles.
#[no_mangle]
pub unsafe extern "C" fn rica_bundle_array_copy(
    bundle: *const RicaBundle,
    name: *const c_char,
    out: *mut f64,
    capacity: usize,
) -> RicaStatus {
    guard(|| {
        let b = handle(bundle, "bundle")?;
        let name = str_arg(name, "name")?;
        write_out(&b.0.array(name)?.data, out, capacity)
    })
}

/// Releases a bundle. Null is ignored.
///
/// # Safety
/// `bundle` must come from this library and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn rica_bundle_free(bundle: *mut RicaBundle) {
    if !bundle.is_null() {
        drop(Box::from_raw(bundle));
    }
}

/// Loads a trained model from a checkpoint file.
///
/// # Safety
/// `path` must be NUL-terminated and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn rica_model_read(
    path: *const c_char,
    out: *mut *mut RicaModel,
) -> RicaStatus {
    guard(|| {
        let path = str_arg(path, "path")?;
        if out.is_null() {
            return Err(Fail::Null("out"));
        }
        let c = read_checkpoint(path)?;
        *out = Box::into_raw(Box::new(RicaModel(c)));
        Ok(())
    })
}

/// Number of sources, hidden units, and initial-state MLP units.
///
/// # Safety
/// Output pointers must be valid.
#[no_mangle]
pub unsafe extern "C" fn rica_model_dims(
    model: *const RicaModel,
    n_sources: *mut usize,
    n_hidden: *mut usize,
    n_mlp_hidden: *mut usize,
) -> RicaStatus {
    guard(|| {
        let m = handle(model, "model")?;
        if n_sources.is_null() || n_hidden.is_null() || n_mlp_hidden.is_null() {
            return Err(Fail::Null("dims"));
        }
        *n_sources = m.0.params.n_sources();
        *n_hidden = m.0.params.n_hidden();
        *n_mlp_hidden = m.0.params.n_mlp_hidden();
        Ok(())
    })
}

/// Sources `W x_t` for a `rows` x `n_sources` sequence; `out` receives the
/// same shape.
///
/// # Safety
/// `data` must hold `rows * cols` doubles and `out` room for `capacity`.
#[no_mangle]
pub unsafe extern "C" fn rica_model_extract_sources(
    model: *const RicaModel,
    rows: usize,
    cols: usize,
    data: *const f64,
    out: *mut f64,
    capacity: usize,
) -> RicaStatus {
    guard(|| {
        let m = handle(model, "model")?;
        let x = matrix_arg(rows, cols, data)?;
        let s = extract_sources(&m.0.params, &x)?;
        write_out(s.data(), out, capacity)
    })
}

/// Negative log-likelihood of one sequence in evaluation mode.
///
/// # Safety
/// `data` must hold `rows * cols` doubles; `nll` must be valid.
#[no_mangle]
pub unsafe extern "C" fn rica_model_nll(
    model: *const RicaModel,
    rows: usize,
    cols: usize,
    data: *const f64,
    nll: *mut f64,
) -> RicaStatus {
    guard(|| {
        let m = handle(model, "model")?;
        if nll.is_null() {
            return Err(Fail::Null("nll"));
        }
        let x = matrix_arg(rows, cols, data)?;
        if rows == 0 || cols != m.0.params.n_sources() {
            return Err(Error::ShapeMismatch(format!(
                "sequence is {rows}x{cols}, model has {} sources",
                m.0.params.n_sources()
            ))
            .into());
        }
        let cfg = m.0.config.model_config();
        *nll = sequence_nll(&m.0.params, &cfg, &x, Mode::Eval, None, &mut RngStream::new(0, 0))?;
        Ok(())
    })
}

/// Time-averaged `|d mu_i(t) / d s_j(t-1)|` as an `n_sources` square matrix.
///
/// # Safety
/// `data` must hold `rows * cols` doubles and `out` room for `capacity`.
#[no_mangle]
pub unsafe extern "C" fn rica_model_mean_abs_jacobian(
    model: *const RicaModel,
    rows: usize,
    cols: usize,
    data: *const f64,
    out: *mut f64,
    capacity: usize,
) -> RicaStatus {
    guard(|| {
        let m = handle(model, "model")?;
        let x = matrix_arg(rows, cols, data)?;
        if cols != m.0.params.n_sources() {
            return Err(Error::ShapeMismatch(format!(
                "sequence has {cols} columns, model has {} sources",
                m.0.params.n_sources()
            ))
            .into());
        }
        let j = next_step_jacobian(&m.0.params, &m.0.config.model_config(), &x)?;
        write_out(j.mean_abs.data(), out, capacity)
    })
}

/// Releases a model. Null is ignored.
///
/// # Safety
/// `model` must come from this library and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn rica_model_free(model: *mut RicaModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}
