//! C ABI over `eventcause`.
//!
//! Every fallible call returns an [`EcStatus`]; on failure a message is
//! available from [`ec_last_error`] on the same thread. Handles are opaque
//! and must be released with their `_free` function. Strings returned
//! through out-parameters are owned by the caller and released with
//! [`ec_string_free`].

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;

use eventcause::dataset::{write_instance_level, Dataset};
use eventcause::graph::{ActivityGraphs, GraphError};
use eventcause::io::{load_bundle_unchecked, ActivityBundle, IoError, LoadOptions};
use eventcause::trajectory::{count_trajectories, delta_graph, CountLevel, TrajectoryError, TransitionScheme};
use eventcause::triplets::{create_triplets, make_hard_variant, CausalQueryTriplet, Variant};

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EcStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidUtf8 = 2,
    Io = 3,
    Validation = 4,
    UnknownNode = 5,
    InvalidArgument = 6,
    Internal = 7,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EcCountLevel {
    Compact = 0,
    Total = 1,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EcTransitionScheme {
    NodeUniform = 0,
    TrajectoryUniform = 1,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EcLevel {
    Node = 0,
    Instance = 1,
}

/// A loaded activity: observational and causal graphs plus node texts.
pub struct EcBundle {
    graphs: ActivityGraphs,
    violations: Vec<String>,
}

/// A generated set of causal query triplets.
pub struct EcTriplets {
    triplets: Vec<CausalQueryTriplet>,
    variant: Variant,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

struct Failure(EcStatus, String);

type FfiResult<T> = Result<T, Failure>;

fn set_error(msg: &str) {
    let c = CString::new(msg.replace('\0', "?")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn guard(f: impl FnOnce() -> FfiResult<()>) -> EcStatus {
    LAST_ERROR.with(|e| *e.borrow_mut() = None);
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => EcStatus::Ok,
        Ok(Err(Failure(status, msg))) => {
            set_error(&msg);
            status
        }
        Err(_) => {
            set_error("internal panic");
            EcStatus::Internal
        }
    }
}

fn graph_status(e: &GraphError) -> EcStatus {
    match e {
        GraphError::UnknownNode(_) => EcStatus::UnknownNode,
        GraphError::SameNode(_) | GraphError::QueryInConditioningSet(_) => EcStatus::InvalidArgument,
        _ => EcStatus::Validation,
    }
}

impl From<IoError> for Failure {
    fn from(e: IoError) -> Self {
        let status = match &e {
            IoError::Io { .. } => EcStatus::Io,
            _ => EcStatus::Validation,
        };
        Failure(status, e.to_string())
    }
}

impl From<GraphError> for Failure {
    fn from(e: GraphError) -> Self {
        Failure(graph_status(&e), e.to_string())
    }
}

impl From<TrajectoryError> for Failure {
    fn from(e: TrajectoryError) -> Self {
        let status = match &e {
            TrajectoryError::Graph(g) => graph_status(g),
            TrajectoryError::NotAfter { .. } => EcStatus::InvalidArgument,
            TrajectoryError::InvalidGraph(_) => EcStatus::Validation,
            _ => EcStatus::Internal,
        };
        Failure(status, e.to_string())
    }
}

fn internal(e: impl std::fmt::Display) -> Failure {
    Failure(EcStatus::Internal, e.to_string())
}

unsafe fn str_arg<'a>(p: *const c_char, name: &str) -> FfiResult<&'a str> {
    if p.is_null() {
        return Err(Failure(EcStatus::NullPointer, format!("`{name}` is null")));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| Failure(EcStatus::InvalidUtf8, format!("`{name}` is not valid UTF-8")))
}

unsafe fn ref_arg<'a, T>(p: *const T, name: &str) -> FfiResult<&'a T> {
    p.as_ref()
        .ok_or_else(|| Failure(EcStatus::NullPointer, format!("`{name}` is null")))
}

unsafe fn out_arg<'a, T>(p: *mut T, name: &str) -> FfiResult<&'a mut T> {
    p.as_mut()
        .ok_or_else(|| Failure(EcStatus::NullPointer, format!("`{name}` is null")))
}

fn c_string(s: String) -> FfiResult<*mut c_char> {
    CString::new(s).map(CString::into_raw).map_err(internal)
}

/// The message of the last failed call on this thread, or null. Valid
/// until the next call into this library on the same thread.
#[no_mangle]
pub extern "C" fn ec_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Releases a string returned by this library. Null is ignored.
///
/// # Safety
/// `s` must come from this library and not have been freed.
#[no_mangle]
pub unsafe extern "C" fn ec_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

fn bundle_from(graphs: ActivityGraphs) -> *mut EcBundle {
    let violations = graphs.validate().violations.iter().map(|v| v.to_string()).collect();
    Box::into_raw(Box::new(EcBundle { graphs, violations }))
}

/// Loads a bundle file. Invariant violations do not fail the load; query
/// them with [`ec_bundle_validate`].
///
/// # Safety
/// `path` must be a valid C string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn ec_bundle_load(path: *const c_char, out: *mut *mut EcBundle) -> EcStatus {
    guard(|| {
        let out = out_arg(out, "out")?;
        *out = ptr::null_mut();
        let path = str_arg(path, "path")?;
        let (graphs, _) = load_bundle_unchecked(Path::new(path), LoadOptions::default())?;
        *out = bundle_from(graphs);
        Ok(())
    })
}

/// Parses a bundle from JSON text.
///
/// # Safety
/// `json` must be a valid C string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn ec_bundle_from_json(json: *const c_char, out: *mut *mut EcBundle) -> EcStatus {
    guard(|| {
        let out = out_arg(out, "out")?;
        *out = ptr::null_mut();
        let json = str_arg(json, "json")?;
        let bundle = ActivityBundle::parse(Path::new("<memory>"), json, LoadOptions::default())?;
        *out = bundle_from(bundle.to_graphs()?);
        Ok(())
    })
}

/// Releases a bundle. Null is ignored.
///
/// # Safety
/// `bundle` must come from this library and not have been freed.
#[no_mangle]
pub unsafe extern "C" fn ec_bundle_free(bundle: *mut EcBundle) {
    if !bundle.is_null() {
        drop(Box::from_raw(bundle));
    }
}

/// Number of invariant violations. When non-zero, the call returns
/// `Validation` and the violations are in the last-error message.
///
/// # Safety
/// `bundle` must be a live handle; `violations` must be writable.
#[no_mangle]
pub unsafe extern "C" fn ec_bundle_validate(bundle: *const EcBundle, violations: *mut usize) -> EcStatus {
    guard(|| {
        let b = ref_arg(bundle, "bundle")?;
        *out_arg(violations, "violations")? = b.violations.len();
        if b.violations.is_empty() {
            Ok(())
        } else {
            Err(Failure(EcStatus::Validation, b.violations.join("; ")))
        }
    })
}

/// # Safety
/// `bundle` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn ec_bundle_node_count(bundle: *const EcBundle, out: *mut usize) -> EcStatus {
    guard(|| {
        *out_arg(out, "out")? = ref_arg(bundle, "bundle")?.graphs.nodes().len();
        Ok(())
    })
}

fn require_valid(b: &EcBundle) -> FfiResult<()> {
    if b.violations.is_empty() {
        Ok(())
    } else {
        Err(Failure(EcStatus::Validation, b.violations.join("; ")))
    }
}

/// Trajectory count between two nodes as a decimal string (counts can
/// exceed 64 bits). Null `from`/`to` mean the start and end nodes.
///
/// # Safety
/// `bundle` must be a live handle; `from`/`to` null or valid C strings;
/// `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn ec_count_trajectories(
    bundle: *const EcBundle,
    from: *const c_char,
    to: *const c_char,
    level: EcCountLevel,
    out: *mut *mut c_char,
) -> EcStatus {
    guard(|| {
        let out = out_arg(out, "out")?;
        *out = ptr::null_mut();
        let b = ref_arg(bundle, "bundle")?;
        require_valid(b)?;
        let g_o = b.graphs.observational();
        let from = if from.is_null() {
            g_o.id(g_o.start())
        } else {
            str_arg(from, "from")?
        };
        let to = if to.is_null() {
            g_o.id(g_o.end())
        } else {
            str_arg(to, "to")?
        };
        let level = match level {
            EcCountLevel::Compact => CountLevel::Compact,
            EcCountLevel::Total => CountLevel::Total,
        };
        let count = count_trajectories(&b.graphs, from, to, level)?;
        *out = c_string(count.value.to_string())?;
        Ok(())
    })
}

/// d-separation of `x` and `y` given `z` in the causal graph.
///
/// # Safety
/// `bundle` must be a live handle; `x`, `y` valid C strings; `z` points to
/// `z_len` valid C strings (or is null when `z_len` is 0); `out` writable.
#[no_mangle]
pub unsafe extern "C" fn ec_d_separated(
    bundle: *const EcBundle,
    x: *const c_char,
    y: *const c_char,
    z: *const *const c_char,
    z_len: usize,
    out: *mut bool,
) -> EcStatus {
    guard(|| {
        let b = ref_arg(bundle, "bundle")?;
        let (x, y) = (str_arg(x, "x")?, str_arg(y, "y")?);
        let zs: Vec<&str> = if z_len == 0 {
            Vec::new()
        } else {
            if z.is_null() {
                return Err(Failure(EcStatus::NullPointer, "`z` is null".into()));
            }
            std::slice::from_raw_parts(z, z_len)
                .iter()
                .map(|&p| str_arg(p, "z[i]"))
                .collect::<FfiResult<_>>()?
        };
        *out_arg(out, "out")? = b.graphs.causal().d_separated(x, y, &zs)?;
        Ok(())
    })
}

/// Generates the causal triplets of a bundle, or the causally-hard variant.
///
/// # Safety
/// `bundle` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn ec_triplets_generate(
    bundle: *const EcBundle,
    hard: bool,
    out: *mut *mut EcTriplets,
) -> EcStatus {
    guard(|| {
        let out = out_arg(out, "out")?;
        *out = ptr::null_mut();
        let b = ref_arg(bundle, "bundle")?;
        require_valid(b)?;
        let mut triplets = create_triplets(&b.graphs).map_err(internal)?;
        let variant = if hard {
            triplets = make_hard_variant(&triplets, &b.graphs).map_err(internal)?;
            Variant::CausallyHard
        } else {
            Variant::Causal
        };
        *out = Box::into_raw(Box::new(EcTriplets { triplets, variant }));
        Ok(())
    })
}

/// # Safety
/// `triplets` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn ec_triplets_len(triplets: *const EcTriplets, out: *mut usize) -> EcStatus {
    guard(|| {
        *out_arg(out, "out")? = ref_arg(triplets, "triplets")?.triplets.len();
        Ok(())
    })
}

/// Releases a triplet set. Null is ignored.
///
/// # Safety
/// `triplets` must come from this library and not have been freed.
#[no_mangle]
pub unsafe extern "C" fn ec_triplets_free(triplets: *mut EcTriplets) {
    if !triplets.is_null() {
        drop(Box::from_raw(triplets));
    }
}

/// Writes a balanced dataset file and returns its digest.
///
/// # Safety
/// `bundle` and `triplets` must be live handles from the same activity;
/// `path` a valid C string; `digest_out` writable.
#[no_mangle]
pub unsafe extern "C" fn ec_dataset_write(
    bundle: *const EcBundle,
    triplets: *const EcTriplets,
    level: EcLevel,
    path: *const c_char,
    seed: u64,
    digest_out: *mut *mut c_char,
) -> EcStatus {
    guard(|| {
        let digest_out = out_arg(digest_out, "digest_out")?;
        *digest_out = ptr::null_mut();
        let b = ref_arg(bundle, "bundle")?;
        let t = ref_arg(triplets, "triplets")?;
        let path = Path::new(str_arg(path, "path")?);
        if let Some(other) = t.triplets.iter().find(|x| x.activity != b.graphs.activity) {
            return Err(Failure(
                EcStatus::InvalidArgument,
                format!(
                    "triplets belong to {:?}, bundle is {:?}",
                    other.activity, b.graphs.activity
                ),
            ));
        }
        let io = |e: eventcause::dataset::DatasetError| Failure(EcStatus::Io, e.to_string());
        let digest = match level {
            EcLevel::Node => {
                let ds = Dataset::build_node_level(&t.triplets, &b.graphs, t.variant, seed).map_err(internal)?;
                ds.write(path).map_err(io)?;
                ds.manifest.digest
            }
            EcLevel::Instance => {
                write_instance_level(path, &t.triplets, &b.graphs, t.variant, seed)
                    .map_err(io)?
                    .digest
            }
        };
        *digest_out = c_string(digest)?;
        Ok(())
    })
}

/// Closed-form `Δ` between two events of the observational graph.
///
/// # Safety
/// `bundle` must be a live handle; `e1`, `e2` valid C strings; `out`
/// writable.
#[no_mangle]
pub unsafe extern "C" fn ec_delta_graph(
    bundle: *const EcBundle,
    e1: *const c_char,
    e2: *const c_char,
    scheme: EcTransitionScheme,
    out: *mut f64,
) -> EcStatus {
    guard(|| {
        let b = ref_arg(bundle, "bundle")?;
        require_valid(b)?;
        let (e1, e2) = (str_arg(e1, "e1")?, str_arg(e2, "e2")?);
        let scheme = match scheme {
            EcTransitionScheme::NodeUniform => TransitionScheme::NodeUniform,
            EcTransitionScheme::TrajectoryUniform => TransitionScheme::TrajectoryUniform,
        };
        *out_arg(out, "out")? = delta_graph(b.graphs.observational(), e1, e2, scheme)?.value;
        Ok(())
    })
}
