//! C interface. Objects are opaque handles created and destroyed through
//! this API. Every fallible call returns a status code (0 on success) and
//! records a message readable with `sep_last_error`.

use std::cell::RefCell;
use std::ffi::{c_char, c_int, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use sepcross::averaging::{capture_prediction, theta};
use sepcross::error::Error;
use sepcross::geometry::{build_chart, find_saddle, log_grid, orbit_scalars, OrbitChart};
use sepcross::systems::{Domain, Preset, PresetParams, PresetPerturbation, SystemSpec};

pub const SEP_OK: c_int = 0;
/// A required pointer argument was null.
pub const SEP_NULL_POINTER: c_int = 100;
/// An argument was out of range (unknown enum value, bad length).
pub const SEP_BAD_ARGUMENT: c_int = 101;
/// The library panicked; the handle involved should be discarded.
pub const SEP_PANIC: c_int = 102;

pub const SEP_DUFFING: c_int = 0;
pub const SEP_PENDULUM: c_int = 1;

pub const SEP_FRICTION: c_int = 0;
pub const SEP_FORCED_FRICTION: c_int = 1;
pub const SEP_TILTED_FRICTION: c_int = 2;
pub const SEP_SLOW_DRIVE: c_int = 3;

pub const SEP_B1: c_int = 1;
pub const SEP_B2: c_int = 2;
pub const SEP_B3: c_int = 3;

/// Unperturbed Hamiltonian together with a perturbation.
pub struct SepSystem {
    inner: SystemSpec,
}

/// Tabulated period, frequency and action on one slow point.
pub struct SepChart {
    inner: OrbitChart,
    z: Vec<f64>,
}

/// Perturbation parameters; unused fields are ignored by a preset.
#[repr(C)]
#[derive(Clone, Copy, Debug)]
pub struct SepParams {
    pub gamma: f64,
    pub a: f64,
    pub c: f64,
    pub rate: f64,
}

#[repr(C)]
#[derive(Clone, Copy, Debug, Default)]
pub struct SepOrbit {
    pub period: f64,
    pub omega: f64,
    pub action: f64,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

enum Fail {
    Code(c_int, String),
    Lib(Error),
}

impl From<Error> for Fail {
    fn from(e: Error) -> Self {
        Fail::Lib(e)
    }
}

fn guard<F: FnOnce() -> Result<(), Fail>>(f: F) -> c_int {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => SEP_OK,
        Ok(Err(Fail::Code(c, m))) => {
            set_error(m);
            c
        }
        Ok(Err(Fail::Lib(e))) => {
            set_error(format!("{}: {e}", e.kind()));
            e.code()
        }
        Err(_) => {
            set_error("internal panic".into());
            SEP_PANIC
        }
    }
}

fn null(what: &str) -> Fail {
    Fail::Code(SEP_NULL_POINTER, format!("{what} is null"))
}

fn bad(msg: String) -> Fail {
    Fail::Code(SEP_BAD_ARGUMENT, msg)
}

unsafe fn slice<'a>(p: *const f64, n: usize) -> Result<&'a [f64], Fail> {
    if n == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(null("z"));
    }
    Ok(std::slice::from_raw_parts(p, n))
}

fn domain(d: c_int) -> Result<Domain, Fail> {
    match d {
        SEP_B1 => Ok(Domain::B1),
        SEP_B2 => Ok(Domain::B2),
        SEP_B3 => Ok(Domain::B3),
        _ => Err(bad(format!("unknown domain {d}"))),
    }
}

unsafe fn system_ref<'a>(s: *const SepSystem) -> Result<&'a SystemSpec, Fail> {
    s.as_ref().map(|s| &s.inner).ok_or_else(|| null("system"))
}

fn check_z(sys: &SystemSpec, z: &[f64]) -> Result<(), Fail> {
    if z.len() != sys.z_dim() {
        return Err(bad(format!("z has length {}, the system needs {}", z.len(), sys.z_dim())));
    }
    Ok(())
}

/// Copy the last error message of this thread into `buf` (NUL-terminated,
/// truncated to `len`). Returns the full message length, 0 when there is none.
///
/// # Safety
/// `buf` must point to `len` writable bytes, or be null when `len` is 0.
#[no_mangle]
pub unsafe extern "C" fn sep_last_error(buf: *mut c_char, len: usize) -> usize {
    LAST_ERROR.with(|e| {
        let e = e.borrow();
        let Some(msg) = e.as_ref() else { return 0 };
        let bytes = msg.as_bytes();
        if !buf.is_null() && len > 0 {
            let n = bytes.len().min(len - 1);
            ptr::copy_nonoverlapping(bytes.as_ptr() as *const c_char, buf, n);
            *buf.add(n) = 0;
        }
        bytes.len()
    })
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn sep_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr() as *const c_char
}

/// Create a system. `hamiltonian` is `SEP_DUFFING` or `SEP_PENDULUM`,
/// `preset` one of the `SEP_*` perturbation constants; `params` may be null
/// for defaults.
///
/// # Safety
/// `out` must be a valid pointer; `params` null or valid.
#[no_mangle]
pub unsafe extern "C" fn sep_system_new(
    hamiltonian: c_int,
    preset: c_int,
    params: *const SepParams,
    out: *mut *mut SepSystem,
) -> c_int {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        *out = ptr::null_mut();
        let preset = match preset {
            SEP_FRICTION => Preset::Friction,
            SEP_FORCED_FRICTION => Preset::ForcedFriction,
            SEP_TILTED_FRICTION => Preset::TiltedFriction,
            SEP_SLOW_DRIVE => Preset::SlowDrive,
            p => return Err(bad(format!("unknown preset {p}"))),
        };
        let params = match params.as_ref() {
            Some(p) => PresetParams { gamma: p.gamma, a: p.a, c: p.c, rate: p.rate },
            None => PresetParams::default(),
        };
        let pert = std::sync::Arc::new(PresetPerturbation { preset, params });
        let inner = match hamiltonian {
            SEP_DUFFING => SystemSpec::duffing_with(pert),
            SEP_PENDULUM => SystemSpec::pendulum(pert),
            h => return Err(bad(format!("unknown hamiltonian {h}"))),
        };
        *out = Box::into_raw(Box::new(SepSystem { inner }));
        Ok(())
    })
}

/// # Safety
/// `sys` must come from `sep_system_new` and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn sep_system_free(sys: *mut SepSystem) {
    if !sys.is_null() {
        drop(Box::from_raw(sys));
    }
}

/// Number of slow variables.
///
/// # Safety
/// `sys` must be a valid handle.
#[no_mangle]
pub unsafe extern "C" fn sep_system_z_dim(sys: *const SepSystem) -> usize {
    sys.as_ref().map(|s| s.inner.z_dim()).unwrap_or(0)
}

/// Period, frequency and action of the closed orbit at energy offset `h`.
///
/// # Safety
/// `sys` valid, `z` points to `z_len` values, `out` valid.
#[no_mangle]
pub unsafe extern "C" fn sep_orbit(
    sys: *const SepSystem,
    domain_id: c_int,
    h: f64,
    z: *const f64,
    z_len: usize,
    out: *mut SepOrbit,
) -> c_int {
    guard(|| {
        let s = system_ref(sys)?;
        let z = slice(z, z_len)?;
        check_z(s, z)?;
        let out = out.as_mut().ok_or_else(|| null("out"))?;
        let d = domain(domain_id)?;
        let ham = s.hamiltonian.as_ref();
        let saddle = find_saddle(ham, z, None)?;
        let o = orbit_scalars(ham, &saddle, d, h, z)?;
        *out = SepOrbit { period: o.period, omega: o.omega, action: o.action };
        Ok(())
    })
}

/// Separatrix integrals `theta[0..3]` at `z` and the capture probabilities
/// `prob[0..2]` into the two loops. `prob` may be null.
///
/// # Safety
/// `sys` valid, `z` points to `z_len` values, `theta` to 3 and `prob` to 2 writable values.
#[no_mangle]
pub unsafe extern "C" fn sep_theta(
    sys: *const SepSystem,
    z: *const f64,
    z_len: usize,
    eps: f64,
    lambda_nodes: usize,
    theta_out: *mut f64,
    prob: *mut f64,
) -> c_int {
    guard(|| {
        let s = system_ref(sys)?;
        let z = slice(z, z_len)?;
        check_z(s, z)?;
        if theta_out.is_null() {
            return Err(null("theta"));
        }
        if !(eps > 0.0) || lambda_nodes == 0 {
            return Err(bad("eps must be positive and lambda_nodes nonzero".into()));
        }
        let th = theta(s, z, eps, lambda_nodes)?;
        ptr::copy_nonoverlapping(th.theta.as_ptr(), theta_out, 3);
        if !prob.is_null() {
            let (p1, p2) = capture_prediction(&th)?;
            *prob = p1;
            *prob.add(1) = p2;
        }
        Ok(())
    })
}

/// Tabulate the three domains on `n_h` log-spaced energy magnitudes in
/// `[h_min, h_max]` at the slow point `z`.
///
/// # Safety
/// `sys` valid, `z` points to `z_len` values, `out` valid.
#[no_mangle]
pub unsafe extern "C" fn sep_chart_new(
    sys: *const SepSystem,
    z: *const f64,
    z_len: usize,
    h_min: f64,
    h_max: f64,
    n_h: usize,
    out: *mut *mut SepChart,
) -> c_int {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        *out = ptr::null_mut();
        let s = system_ref(sys)?;
        let z = slice(z, z_len)?.to_vec();
        check_z(s, &z)?;
        if n_h < 4 || !(h_min > 0.0 && h_max > h_min) {
            return Err(bad("chart needs n_h >= 4 and 0 < h_min < h_max".into()));
        }
        let chart = build_chart(
            s.hamiltonian.as_ref(),
            &[Domain::B1, Domain::B2, Domain::B3],
            &log_grid(h_min, h_max, n_h),
            &[z.clone()],
        )?;
        *out = Box::into_raw(Box::new(SepChart { inner: chart, z }));
        Ok(())
    })
}

/// # Safety
/// `chart` must come from `sep_chart_new` and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn sep_chart_free(chart: *mut SepChart) {
    if !chart.is_null() {
        drop(Box::from_raw(chart));
    }
}

/// Interpolated orbit scalars at energy offset `h`.
///
/// # Safety
/// `chart` and `out` valid.
#[no_mangle]
pub unsafe extern "C" fn sep_chart_eval(chart: *const SepChart, domain_id: c_int, h: f64, out: *mut SepOrbit) -> c_int {
    guard(|| {
        let c = chart.as_ref().ok_or_else(|| null("chart"))?;
        let out = out.as_mut().ok_or_else(|| null("out"))?;
        let d = domain(domain_id)?;
        let z = &c.z;
        *out = SepOrbit {
            period: c.inner.period(d, h, z)?,
            omega: c.inner.omega(d, h, z)?,
            action: c.inner.action(d, h, z)?,
        };
        Ok(())
    })
}

/// Energy offset in `domain` where the frequency equals `omega`.
///
/// # Safety
/// `chart` and `h_out` valid.
#[no_mangle]
pub unsafe extern "C" fn sep_chart_h_for_omega(chart: *const SepChart, domain_id: c_int, omega: f64, h_out: *mut f64) -> c_int {
    guard(|| {
        let c = chart.as_ref().ok_or_else(|| null("chart"))?;
        let h_out = h_out.as_mut().ok_or_else(|| null("h_out"))?;
        *h_out = c.inner.h_for_omega(domain(domain_id)?, omega, &c.z)?;
        Ok(())
    })
}
