//! C ABI over `visern`.
//!
//! Every fallible call returns a [`VisernStatus`]. On failure the message is
//! kept per thread and read with [`visern_last_error`]. Models are opaque
//! handles owned by the caller and released with [`visern_model_free`].
//! Matrices cross the boundary as row-major `double` buffers.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;
use std::slice;

use visern::embedding::{triplet_loss_hard, LossConfig, Reduction};
use visern::error::exit_code;
use visern::eval::{attention_map, rank_queries, report, Direction};
use visern::gcn::GcnConfig;
use visern::model::{Model, ModelConfig};
use visern::numerics::Matrix;
use visern::regions::{RegionSet, VideoSample};
use visern::trainer::{gradcheck_all, Checkpoint};
use visern::Error;

/// Status codes; the nonzero values match the command-line exit codes.
#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum VisernStatus {
    Ok = 0,
    /// A Rust panic was caught at the boundary.
    Internal = 1,
    /// Bad arguments: null pointers, wrong buffer sizes, invalid settings.
    Usage = 2,
    Io = 3,
    Format = 4,
    Numeric = 5,
}

/// Opaque model handle.
pub struct VisernModel {
    model: Model,
}

/// Retrieval metrics for one direction. Recalls are percentages.
#[repr(C)]
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct VisernReport {
    pub r1: f64,
    pub r5: f64,
    pub r10: f64,
    pub med_r: f64,
    pub mean_r: f64,
    pub sum_of_recalls: f64,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_last_error(msg: String) {
    let msg = CString::new(msg.replace('\0', " ")).expect("no interior nul");
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(msg));
}

fn status_of(e: &Error) -> VisernStatus {
    match e.exit_code() {
        exit_code::USAGE => VisernStatus::Usage,
        exit_code::IO => VisernStatus::Io,
        exit_code::FORMAT => VisernStatus::Format,
        _ => VisernStatus::Numeric,
    }
}

fn usage(msg: impl Into<String>) -> Error {
    Error::Config(msg.into())
}

/// Runs `f`, recording any error or panic for [`visern_last_error`].
fn guard(f: impl FnOnce() -> visern::Result<()>) -> VisernStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            LAST_ERROR.with(|e| *e.borrow_mut() = None);
            VisernStatus::Ok
        }
        Ok(Err(e)) => {
            let status = status_of(&e);
            set_last_error(e.to_string());
            status
        }
        Err(_) => {
            set_last_error("internal error: panic in visern".into());
            VisernStatus::Internal
        }
    }
}

unsafe fn input<'a, T>(p: *const T, len: usize, what: &str) -> visern::Result<&'a [T]> {
    if len == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(usage(format!("{what} is null")));
    }
    Ok(slice::from_raw_parts(p, len))
}

unsafe fn output<'a, T>(p: *mut T, len: usize, what: &str) -> visern::Result<&'a mut [T]> {
    if len == 0 {
        return Ok(&mut []);
    }
    if p.is_null() {
        return Err(usage(format!("{what} is null")));
    }
    Ok(slice::from_raw_parts_mut(p, len))
}

unsafe fn write_out<T>(p: *mut T, value: T, what: &str) -> visern::Result<()> {
    if p.is_null() {
        return Err(usage(format!("{what} is null")));
    }
    p.write(value);
    Ok(())
}

unsafe fn model_ref<'a>(m: *const VisernModel) -> visern::Result<&'a Model> {
    m.as_ref()
        .map(|h| &h.model)
        .ok_or_else(|| usage("model handle is null"))
}

fn checked_len(dims: &[usize]) -> visern::Result<usize> {
    dims.iter()
        .try_fold(1usize, |a, &b| a.checked_mul(b))
        .ok_or_else(|| usage("buffer dimensions overflow"))
}

fn expect_len(len: usize, want: usize, what: &str) -> visern::Result<()> {
    if len == want {
        Ok(())
    } else {
        Err(usage(format!("{what} has length {len}, expected {want}")))
    }
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn visern_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Message for the most recent failed call on this thread, or null if the
/// last call succeeded. Valid until the next call on the same thread.
#[no_mangle]
pub extern "C" fn visern_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |s| s.as_ptr()))
}

/// Loads the model stored in a checkpoint file.
///
/// # Safety
/// `path` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn visern_model_load(
    path: *const c_char,
    out: *mut *mut VisernModel,
) -> VisernStatus {
    guard(|| {
        if path.is_null() {
            return Err(usage("path is null"));
        }
        let path = CStr::from_ptr(path)
            .to_str()
            .map_err(|_| usage("path is not valid UTF-8"))?;
        let ck = Checkpoint::load(Path::new(path))?;
        write_out(
            out,
            Box::into_raw(Box::new(VisernModel { model: ck.model })),
            "out",
        )
    })
}

/// Creates a freshly initialized model with random-walk reasoning over the
/// raw adjacency.
///
/// # Safety
/// `out` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn visern_model_init(
    d: usize,
    common_dim: usize,
    word_dim: usize,
    vocab_size: usize,
    seed: u64,
    out: *mut *mut VisernModel,
) -> VisernStatus {
    guard(|| {
        let config = ModelConfig {
            d,
            common_dim,
            word_dim,
            vocab_size,
            gcn: GcnConfig::default(),
        };
        let model = Model::init(config, seed)?;
        write_out(out, Box::into_raw(Box::new(VisernModel { model })), "out")
    })
}

/// Releases a model. Null is ignored.
///
/// # Safety
/// `model` must come from this library and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn visern_model_free(model: *mut VisernModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Region feature width, common-space width and vocabulary size.
///
/// # Safety
/// All pointers must be valid.
#[no_mangle]
pub unsafe extern "C" fn visern_model_dims(
    model: *const VisernModel,
    d: *mut usize,
    common_dim: *mut usize,
    vocab_size: *mut usize,
) -> VisernStatus {
    guard(|| {
        let c = model_ref(model)?.config;
        write_out(d, c.d, "d")?;
        write_out(common_dim, c.common_dim, "common_dim")?;
        write_out(vocab_size, c.vocab_size, "vocab_size")
    })
}

/// Embeds one video given `frames × n × d` region features, writing
/// `common_dim` values to `out`.
///
/// # Safety
/// `features` must hold `frames·n·d` doubles and `out` `out_len` doubles.
#[no_mangle]
pub unsafe extern "C" fn visern_model_encode_video(
    model: *const VisernModel,
    features: *const f64,
    frames: usize,
    n: usize,
    out: *mut f64,
    out_len: usize,
) -> VisernStatus {
    guard(|| {
        let m = model_ref(model)?;
        let d = m.config.d;
        if frames == 0 || n == 0 {
            return Err(usage("a video needs at least one frame and one region"));
        }
        let x = input(features, checked_len(&[frames, n, d])?, "features")?;
        expect_len(out_len, m.config.common_dim, "out")?;
        let video = VideoSample {
            video_id: 0,
            frames: x
                .chunks_exact(n * d)
                .enumerate()
                .map(|(frame_index, c)| {
                    Ok(RegionSet {
                        features: Matrix::from_vec(n, d, c.to_vec())?,
                        frame_index,
                    })
                })
                .collect::<visern::Result<_>>()?,
        };
        output(out, out_len, "out")?.copy_from_slice(&m.encode_video(&video)?);
        Ok(())
    })
}

/// Embeds one caption given its token ids, writing `common_dim` values to
/// `out`.
///
/// # Safety
/// `tokens` must hold `len` ids and `out` `out_len` doubles.
#[no_mangle]
pub unsafe extern "C" fn visern_model_encode_text(
    model: *const VisernModel,
    tokens: *const usize,
    len: usize,
    out: *mut f64,
    out_len: usize,
) -> VisernStatus {
    guard(|| {
        let m = model_ref(model)?;
        let t = input(tokens, len, "tokens")?;
        expect_len(out_len, m.config.common_dim, "out")?;
        output(out, out_len, "out")?.copy_from_slice(&m.encode_text(t)?);
        Ok(())
    })
}

/// Attention scores and 0-based ranks of the `n` regions of one frame.
///
/// # Safety
/// `regions` must hold `n·d` doubles; `scores` and `ranks` `n` entries each.
#[no_mangle]
pub unsafe extern "C" fn visern_model_attention(
    model: *const VisernModel,
    regions: *const f64,
    n: usize,
    scores: *mut f64,
    ranks: *mut usize,
) -> VisernStatus {
    guard(|| {
        let m = model_ref(model)?;
        let x = input(regions, checked_len(&[n, m.config.d])?, "regions")?;
        let z = m.reason_frame(&Matrix::from_vec(n, m.config.d, x.to_vec())?)?;
        let map = attention_map(&z)?;
        output(scores, n, "scores")?.copy_from_slice(&map.region_scores);
        output(ranks, n, "ranks")?.copy_from_slice(&map.region_ranks);
        Ok(())
    })
}

/// Hard-negative triplet loss, summed over a `b × b` similarity matrix whose
/// diagonal holds the matching pairs.
///
/// # Safety
/// `similarity` must hold `b·b` doubles and `loss` be valid.
#[no_mangle]
pub unsafe extern "C" fn visern_triplet_loss(
    similarity: *const f64,
    b: usize,
    margin: f64,
    loss: *mut f64,
) -> VisernStatus {
    guard(|| {
        let s = Matrix::from_vec(
            b,
            b,
            input(similarity, checked_len(&[b, b])?, "similarity")?.to_vec(),
        )?;
        let cfg = LossConfig {
            margin,
            reduction: Reduction::Sum,
        };
        write_out(loss, triplet_loss_hard(&s, &cfg)?.loss, "loss")
    })
}

/// Ranks `queries` rows of a `queries × gallery` score matrix against one
/// correct gallery index per query and summarizes the ranks.
///
/// # Safety
/// `scores` must hold `queries·gallery` doubles, `truth` `queries` indices.
#[no_mangle]
pub unsafe extern "C" fn visern_retrieval_report(
    scores: *const f64,
    queries: usize,
    gallery: usize,
    truth: *const usize,
    out: *mut VisernReport,
) -> VisernStatus {
    guard(|| {
        let s = input(scores, checked_len(&[queries, gallery])?, "scores")?;
        let s = Matrix::from_vec(queries, gallery, s.to_vec())?;
        let gt: Vec<Vec<usize>> = input(truth, queries, "truth")?
            .iter()
            .map(|&g| vec![g])
            .collect();
        let r = report(&rank_queries(&s, &gt)?, Direction::TextToVideo)?;
        write_out(
            out,
            VisernReport {
                r1: r.r1,
                r5: r.r5,
                r10: r.r10,
                med_r: r.med_r,
                mean_r: r.mean_r,
                sum_of_recalls: r.sum_of_recalls,
            },
            "out",
        )
    })
}

/// Whole-model finite-difference gradient check. A failed check is reported
/// through `passed`, not the status.
///
/// # Safety
/// Both pointers must be valid.
#[no_mangle]
pub unsafe extern "C" fn visern_gradcheck(
    seed: u64,
    max_rel_error: *mut f64,
    passed: *mut bool,
) -> VisernStatus {
    guard(|| {
        let r = gradcheck_all(seed)?;
        write_out(max_rel_error, r.max_rel_error, "max_rel_error")?;
        write_out(passed, r.passed, "passed")
    })
}
