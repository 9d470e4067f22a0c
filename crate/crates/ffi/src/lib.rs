//! C ABI over the `gram-dyson` crate.
//!
//! Profiles are opaque handles created by `gd_profile_*` and released with
//! [`gd_profile_free`]. Every function returns a [`GdStatus`]; on failure the
//! message is available from [`gd_last_error_message`] on the same thread.
//! Complex vectors are exchanged as interleaved `(re, im)` doubles.

use std::cell::RefCell;
use std::ffi::{c_char, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use gram_dyson::density::linspace;
use gram_dyson::dyson::{solve_gram, solve_qve, SolverOptions, SpectralParameter};
use gram_dyson::profile::{build_block_profile, BlockSpec, Normalization, VarianceProfile};
use gram_dyson::singularity::{analyze_profile, gram_density_at, AnalyzeOptions};
use gram_dyson::stability::{stability_report, StabilityOptions};
use gram_dyson::Error;

/// Opaque variance profile.
pub struct GdProfile {
    inner: VarianceProfile,
}

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum GdStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    /// Spectral parameter outside the admissible domain.
    Domain = 3,
    NonConvergence = 4,
    /// Other numerical failure (fit, eigensolve, conditioning).
    Numerical = 5,
    BufferTooSmall = 6,
    Panic = 7,
}

#[repr(C)]
#[derive(Clone, Copy, Debug, Default)]
pub enum GdNormalization {
    /// Values divided by p + n.
    #[default]
    Dimension = 0,
    Raw = 1,
}

/// Scalar stability diagnostics at one point z of the embedded equation.
#[repr(C)]
#[derive(Clone, Copy, Debug, Default)]
pub struct GdStability {
    pub norm_f: f64,
    pub gap_fft: f64,
    pub beta_re: f64,
    pub beta_im: f64,
    pub psi: f64,
    pub sigma: f64,
    pub alpha: f64,
    pub psi_plus_sigma2: f64,
    /// Infinite when B is numerically singular.
    pub norm_binv: f64,
    pub im_avg: f64,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn status_of(e: &Error) -> GdStatus {
    match e {
        Error::Domain(_) => GdStatus::Domain,
        Error::NonConvergence { .. } => GdStatus::NonConvergence,
        e if e.is_numerical() => GdStatus::Numerical,
        _ => GdStatus::InvalidArgument,
    }
}

fn fail(status: GdStatus, msg: impl Into<String>) -> GdStatus {
    set_error(msg.into());
    status
}

/// Runs `f`, turning errors and panics into status codes.
fn guard(f: impl FnOnce() -> Result<(), GdStatus>) -> GdStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => GdStatus::Ok,
        Ok(Err(s)) => s,
        Err(p) => {
            let msg = p
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| p.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "panic".into());
            fail(GdStatus::Panic, format!("internal panic: {msg}"))
        }
    }
}

fn check<T>(r: gram_dyson::Result<T>) -> Result<T, GdStatus> {
    r.map_err(|e| fail(status_of(&e), e.to_string()))
}

unsafe fn slice<'a>(ptr: *const f64, len: usize, name: &str) -> Result<&'a [f64], GdStatus> {
    if len == 0 {
        return Ok(&[]);
    }
    if ptr.is_null() {
        return Err(fail(GdStatus::NullPointer, format!("{name} is null")));
    }
    Ok(std::slice::from_raw_parts(ptr, len))
}

unsafe fn slice_mut<'a>(ptr: *mut f64, len: usize, name: &str) -> Result<&'a mut [f64], GdStatus> {
    if ptr.is_null() {
        return Err(fail(GdStatus::NullPointer, format!("{name} is null")));
    }
    Ok(std::slice::from_raw_parts_mut(ptr, len))
}

unsafe fn profile_ref<'a>(p: *const GdProfile) -> Result<&'a VarianceProfile, GdStatus> {
    p.as_ref()
        .map(|h| &h.inner)
        .ok_or_else(|| fail(GdStatus::NullPointer, "profile is null"))
}

unsafe fn store(out: *mut *mut GdProfile, profile: VarianceProfile) -> Result<(), GdStatus> {
    if out.is_null() {
        return Err(fail(GdStatus::NullPointer, "output handle pointer is null"));
    }
    *out = Box::into_raw(Box::new(GdProfile { inner: profile }));
    Ok(())
}

/// Message of the last failed call on this thread, or null. The pointer
/// stays valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn gd_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn gd_version() -> *const c_char {
    static VERSION: &str = concat!(env!("CARGO_PKG_VERSION"), "\0");
    VERSION.as_ptr().cast()
}

/// Profile from a row-major p×n variance matrix with unit weights.
///
/// # Safety
/// `s` must point to `p * n` doubles and `out` to writable storage.
#[no_mangle]
pub unsafe extern "C" fn gd_profile_new_dense(
    p: usize,
    n: usize,
    s: *const f64,
    out: *mut *mut GdProfile,
) -> GdStatus {
    guard(|| {
        let s = slice(s, p.saturating_mul(n), "s")?;
        let prof = check(VarianceProfile::from_dense(p, n, s.to_vec()))?;
        store(out, prof)
    })
}

/// Profile with explicit row weights `w1` (length p) and column weights `w2`
/// (length n).
///
/// # Safety
/// Pointers must reference arrays of the stated lengths.
#[no_mangle]
pub unsafe extern "C" fn gd_profile_new_weighted(
    p: usize,
    n: usize,
    s: *const f64,
    w1: *const f64,
    w2: *const f64,
    out: *mut *mut GdProfile,
) -> GdStatus {
    guard(|| {
        let s = slice(s, p.saturating_mul(n), "s")?;
        let w1 = slice(w1, p, "w1")?;
        let w2 = slice(w2, n, "w2")?;
        let prof = check(VarianceProfile::with_weights(
            p,
            n,
            s.to_vec(),
            w1.to_vec(),
            w2.to_vec(),
        ))?;
        store(out, prof)
    })
}

/// Block profile expanded to p×n. `values` is row-major `rows × cols`;
/// null fraction pointers mean equal fractions.
///
/// # Safety
/// `values` must hold `rows * cols` doubles, the fraction arrays `rows` and
/// `cols` doubles when not null.
#[no_mangle]
#[allow(clippy::too_many_arguments)]
pub unsafe extern "C" fn gd_profile_new_blocks(
    rows: usize,
    cols: usize,
    values: *const f64,
    row_fractions: *const f64,
    col_fractions: *const f64,
    normalization: GdNormalization,
    p: usize,
    n: usize,
    out: *mut *mut GdProfile,
) -> GdStatus {
    guard(|| {
        if rows == 0 || cols == 0 {
            return Err(fail(
                GdStatus::InvalidArgument,
                "rows and cols must be positive",
            ));
        }
        let v = slice(values, rows.saturating_mul(cols), "values")?;
        let norm = match normalization {
            GdNormalization::Dimension => Normalization::Dimension,
            GdNormalization::Raw => Normalization::Raw,
        };
        let mut spec = BlockSpec::uniform(v.chunks(cols).map(<[f64]>::to_vec).collect(), norm);
        if !row_fractions.is_null() {
            spec.row_fractions = slice(row_fractions, rows, "row_fractions")?.to_vec();
        }
        if !col_fractions.is_null() {
            spec.col_fractions = slice(col_fractions, cols, "col_fractions")?.to_vec();
        }
        let prof = check(build_block_profile(&spec, p, n))?;
        store(out, prof)
    })
}

/// # Safety
/// `profile` must come from a `gd_profile_new_*` call and not be used again.
#[no_mangle]
pub unsafe extern "C" fn gd_profile_free(profile: *mut GdProfile) {
    if !profile.is_null() {
        let _ = catch_unwind(AssertUnwindSafe(|| drop(Box::from_raw(profile))));
    }
}

/// # Safety
/// `profile` must be a live handle; `p` and `n` writable.
#[no_mangle]
pub unsafe extern "C" fn gd_profile_dims(
    profile: *const GdProfile,
    p: *mut usize,
    n: *mut usize,
) -> GdStatus {
    guard(|| {
        let prof = profile_ref(profile)?;
        if p.is_null() || n.is_null() {
            return Err(fail(GdStatus::NullPointer, "output pointer is null"));
        }
        *p = prof.p();
        *n = prof.n();
        Ok(())
    })
}

/// Solution m(ζ) of the Gram equation at ζ = re + i·im. `m_out` receives
/// `2p` doubles (interleaved), `avg_out` two doubles for ⟨m⟩; `residual_out`
/// may be null.
///
/// # Safety
/// Output pointers must reference writable arrays of the stated lengths.
#[no_mangle]
pub unsafe extern "C" fn gd_solve_gram(
    profile: *const GdProfile,
    re: f64,
    im: f64,
    m_out: *mut f64,
    m_len: usize,
    avg_out: *mut f64,
    residual_out: *mut f64,
) -> GdStatus {
    guard(|| {
        let prof = profile_ref(profile)?;
        if m_len < 2 * prof.p() {
            return Err(fail(
                GdStatus::BufferTooSmall,
                format!("m_out needs {} doubles", 2 * prof.p()),
            ));
        }
        let zeta = check(SpectralParameter::new(re, im))?;
        let sol = check(solve_gram(prof, zeta, &SolverOptions::default()))?;
        let m = slice_mut(m_out, m_len, "m_out")?;
        for (k, v) in sol.m.iter().enumerate() {
            m[2 * k] = v.re;
            m[2 * k + 1] = v.im;
        }
        let avg = slice_mut(avg_out, 2, "avg_out")?;
        avg[0] = sol.avg_m.re;
        avg[1] = sol.avg_m.im;
        if !residual_out.is_null() {
            *residual_out = sol.residual;
        }
        Ok(())
    })
}

/// Extrapolated averaged density at `count` energies.
///
/// # Safety
/// `energies` and `density_out` must reference `count` doubles.
#[no_mangle]
pub unsafe extern "C" fn gd_density(
    profile: *const GdProfile,
    energies: *const f64,
    count: usize,
    eta_floor: f64,
    density_out: *mut f64,
) -> GdStatus {
    guard(|| {
        let prof = profile_ref(profile)?;
        let e = slice(energies, count, "energies")?;
        let out = slice_mut(density_out, count, "density_out")?;
        let rho = check(gram_density_at(
            prof,
            e,
            eta_floor,
            &SolverOptions::default(),
        ))?;
        out.copy_from_slice(&rho);
        Ok(())
    })
}

/// Density on a uniform grid of `count` points over [lo, hi].
///
/// # Safety
/// `density_out` must reference `count` doubles.
#[no_mangle]
pub unsafe extern "C" fn gd_density_grid(
    profile: *const GdProfile,
    lo: f64,
    hi: f64,
    count: usize,
    eta_floor: f64,
    density_out: *mut f64,
) -> GdStatus {
    let e = linspace(lo, hi, count);
    gd_density(profile, e.as_ptr(), e.len(), eta_floor, density_out)
}

/// Scalar stability diagnostics at z = re + i·im of the embedded equation.
///
/// # Safety
/// `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn gd_stability(
    profile: *const GdProfile,
    re: f64,
    im: f64,
    out: *mut GdStability,
) -> GdStatus {
    guard(|| {
        let prof = profile_ref(profile)?;
        if out.is_null() {
            return Err(fail(GdStatus::NullPointer, "out is null"));
        }
        let z = check(SpectralParameter::new(re, im))?;
        let q = check(solve_qve(prof, z, None, &SolverOptions::default()))?;
        let r = check(stability_report(prof, &q, &StabilityOptions::default()))?;
        *out = GdStability {
            norm_f: r.norm_f,
            gap_fft: r.gap_fft,
            beta_re: r.beta.re,
            beta_im: r.beta.im,
            psi: r.psi,
            sigma: r.sigma,
            alpha: r.alpha,
            psi_plus_sigma2: r.psi_plus_sigma2,
            norm_binv: r.norm_binv,
            im_avg: r.im_avg,
        };
        Ok(())
    })
}

/// Support and boundary classification as a JSON document. The string is
/// owned by the caller and released with [`gd_string_free`].
///
/// # Safety
/// `json_out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn gd_classify_json(
    profile: *const GdProfile,
    delta: f64,
    json_out: *mut *mut c_char,
) -> GdStatus {
    guard(|| {
        let prof = profile_ref(profile)?;
        if json_out.is_null() {
            return Err(fail(GdStatus::NullPointer, "json_out is null"));
        }
        let opts = AnalyzeOptions {
            delta,
            ..AnalyzeOptions::default()
        };
        let (_, report) = check(analyze_profile(prof, &opts))?;
        let text =
            serde_json::to_string(&report).map_err(|e| fail(GdStatus::Numerical, e.to_string()))?;
        let c = CString::new(text).map_err(|e| fail(GdStatus::Numerical, e.to_string()))?;
        *json_out = c.into_raw();
        Ok(())
    })
}

/// # Safety
/// `s` must come from this library and not be used again.
#[no_mangle]
pub unsafe extern "C" fn gd_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}
