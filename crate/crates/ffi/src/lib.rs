//! C ABI for the clustered pinching-antenna ISAC optimizer.
//!
//! Scenarios and solutions travel as opaque handles; every entry point
//! returns a status code, and the most recent failure message per thread
//! is available through [`pinch_last_error`]. Strings returned by this
//! library must be released with [`pinch_string_free`], handles with their
//! matching `_free` functions. The C header is generated into
//! `include/pinch_isac.h` at build time.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};

use pinch_isac::driver::{DriverSettings, SolutionBundle};
use pinch_isac::outage::log_grid;
use pinch_isac::scenario::ScenarioConfig;
use pinch_isac::sweep::run_scheme_by_name;

/// Result of every fallible call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PinchStatus {
    Ok = 0,
    NullArgument = 1,
    Utf8Error = 2,
    ParseError = 3,
    InvalidScenario = 4,
    Infeasible = 5,
    NumericalError = 6,
}

/// Opaque parsed scenario.
pub struct PinchScenario {
    cfg: ScenarioConfig,
}

/// Opaque optimization result.
pub struct PinchSolution {
    bundle: SolutionBundle,
}

/// Optimizer knobs exposed over the ABI. `s_grid_len == 0` selects the
/// library default grid.
#[repr(C)]
#[derive(Debug, Clone, Copy)]
pub struct PinchRunOptions {
    pub seed: u64,
    pub mc_samples: usize,
    pub s_grid_lo: f64,
    pub s_grid_hi: f64,
    pub s_grid_len: usize,
    pub max_outer: usize,
    pub eps: f64,
    pub select_by_mc: bool,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(message: impl Into<Vec<u8>>) {
    let msg = CString::new(message).unwrap_or_else(|_| CString::new("invalid error text").unwrap());
    LAST_ERROR.with(|slot| *slot.borrow_mut() = Some(msg));
}

/// Default options: seed 0, 100k Monte-Carlo samples, default grid.
#[no_mangle]
pub extern "C" fn pinch_run_options_default() -> PinchRunOptions {
    PinchRunOptions {
        seed: 0,
        mc_samples: 100_000,
        s_grid_lo: 0.0,
        s_grid_hi: 0.0,
        s_grid_len: 0,
        max_outer: 30,
        eps: 1e-3,
        select_by_mc: false,
    }
}

/// Message of the most recent failure on this thread, or NULL. The caller
/// owns the string and must pass it to `pinch_string_free`.
#[no_mangle]
pub extern "C" fn pinch_last_error() -> *mut c_char {
    LAST_ERROR.with(|slot| match slot.borrow().as_ref() {
        Some(msg) => msg.clone().into_raw(),
        None => std::ptr::null_mut(),
    })
}

/// Parse and validate a scenario JSON document.
///
/// # Safety
/// `json` must be a valid NUL-terminated C string and `out` a valid
/// pointer; on `Ok` the caller owns the handle written to `*out`.
#[no_mangle]
pub unsafe extern "C" fn pinch_scenario_parse(
    json: *const c_char,
    out: *mut *mut PinchScenario,
) -> PinchStatus {
    if json.is_null() || out.is_null() {
        return PinchStatus::NullArgument;
    }
    let text = match CStr::from_ptr(json).to_str() {
        Ok(t) => t,
        Err(_) => return PinchStatus::Utf8Error,
    };
    match pinch_isac::scenario::load_scenario(text) {
        Ok((cfg, _)) => {
            *out = Box::into_raw(Box::new(PinchScenario { cfg }));
            PinchStatus::Ok
        }
        Err(e @ pinch_isac::scenario::ScenarioError::Parse(_)) => {
            set_error(e.to_string());
            PinchStatus::ParseError
        }
        Err(e) => {
            set_error(e.to_string());
            PinchStatus::InvalidScenario
        }
    }
}

/// # Safety
/// `scenario` must be a handle from `pinch_scenario_parse`, not yet freed.
#[no_mangle]
pub unsafe extern "C" fn pinch_scenario_free(scenario: *mut PinchScenario) {
    if !scenario.is_null() {
        drop(Box::from_raw(scenario));
    }
}

/// Optimize one scheme ("proposed" or a baseline name) for a scenario.
///
/// # Safety
/// `scenario` must be a live handle; `scheme` a NUL-terminated string or
/// NULL (meaning "proposed"); `options` a valid pointer or NULL for
/// defaults; `out` a valid pointer receiving an owned handle on `Ok`.
#[no_mangle]
pub unsafe extern "C" fn pinch_optimize(
    scenario: *const PinchScenario,
    scheme: *const c_char,
    options: *const PinchRunOptions,
    out: *mut *mut PinchSolution,
) -> PinchStatus {
    if scenario.is_null() || out.is_null() {
        return PinchStatus::NullArgument;
    }
    let scheme = if scheme.is_null() {
        "proposed"
    } else {
        match CStr::from_ptr(scheme).to_str() {
            Ok(s) => s,
            Err(_) => return PinchStatus::Utf8Error,
        }
    };
    let opts = if options.is_null() {
        pinch_run_options_default()
    } else {
        *options
    };
    let mut settings = DriverSettings {
        seed: opts.seed,
        mc_samples: opts.mc_samples.max(1),
        max_outer: opts.max_outer.max(1),
        eps: if opts.eps > 0.0 { opts.eps } else { 1e-3 },
        select_by_mc: opts.select_by_mc,
        ..DriverSettings::default()
    };
    if opts.s_grid_len >= 2 && opts.s_grid_lo > 0.0 && opts.s_grid_hi > opts.s_grid_lo {
        settings.s_grid = log_grid(opts.s_grid_lo, opts.s_grid_hi, opts.s_grid_len);
    }
    match run_scheme_by_name(&(*scenario).cfg, scheme, &settings) {
        Ok(bundle) => {
            *out = Box::into_raw(Box::new(PinchSolution { bundle }));
            PinchStatus::Ok
        }
        Err(pinch_isac::sweep::NamedSchemeError::Unknown(m)) => {
            set_error(m);
            PinchStatus::ParseError
        }
        Err(e) => {
            let text = e.to_string();
            set_error(text.clone());
            if text.contains("infeasible") || text.contains("failed; tightest") {
                PinchStatus::Infeasible
            } else {
                PinchStatus::NumericalError
            }
        }
    }
}

/// Monte-Carlo outage estimate of a solution (NaN for NULL).
///
/// # Safety
/// `solution` must be a live handle or NULL.
#[no_mangle]
pub unsafe extern "C" fn pinch_solution_mc_outage(solution: *const PinchSolution) -> f64 {
    if solution.is_null() {
        return f64::NAN;
    }
    (*solution).bundle.mc_outage.p_hat
}

/// Minimized log Chernoff bound of a solution (NaN for NULL).
///
/// # Safety
/// `solution` must be a live handle or NULL.
#[no_mangle]
pub unsafe extern "C" fn pinch_solution_log_bound(solution: *const PinchSolution) -> f64 {
    if solution.is_null() {
        return f64::NAN;
    }
    (*solution).bundle.chernoff.log_bound
}

/// Full solution bundle as a JSON string (caller frees).
///
/// # Safety
/// `solution` must be a live handle or NULL.
#[no_mangle]
pub unsafe extern "C" fn pinch_solution_to_json(solution: *const PinchSolution) -> *mut c_char {
    if solution.is_null() {
        return std::ptr::null_mut();
    }
    match serde_json::to_string(&(*solution).bundle) {
        Ok(json) => CString::new(json).map_or(std::ptr::null_mut(), CString::into_raw),
        Err(_) => std::ptr::null_mut(),
    }
}

/// # Safety
/// `solution` must be a handle from `pinch_optimize`, not yet freed.
#[no_mangle]
pub unsafe extern "C" fn pinch_solution_free(solution: *mut PinchSolution) {
    if !solution.is_null() {
        drop(Box::from_raw(solution));
    }
}

/// # Safety
/// `s` must be a string returned by this library, not yet freed.
#[no_mangle]
pub unsafe extern "C" fn pinch_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scenario_json() -> CString {
        CString::new(
            r#"{
                "waveguide_length": 10.0, "height": 3.0, "num_clusters": 2,
                "antennas_per_cluster": 1, "receive_antennas": 8,
                "num_users": 1, "user_positions": [{"x": 3.0, "y": 2.0}],
                "target_position": {"x": 5.0, "y": 5.0},
                "num_slots": 2, "total_time": 0.008,
                "carrier": 3.0e10, "refractive_index": 1.4, "attenuation": 0.18,
                "transmit_power": 1.0e4, "noise_power": 1.0e-12,
                "snr_threshold": 10.0, "rate_min": 0.5, "rcs_mean": 1.0
            }"#,
        )
        .unwrap()
    }

    #[test]
    fn round_trip_through_the_c_surface() {
        unsafe {
            let mut scenario: *mut PinchScenario = std::ptr::null_mut();
            let st = pinch_scenario_parse(scenario_json().as_ptr(), &mut scenario);
            assert_eq!(st, PinchStatus::Ok);

            let mut opts = pinch_run_options_default();
            opts.mc_samples = 5_000;
            opts.s_grid_lo = 0.02;
            opts.s_grid_hi = 0.3;
            opts.s_grid_len = 3;
            opts.max_outer = 5;
            let mut solution: *mut PinchSolution = std::ptr::null_mut();
            let st = pinch_optimize(scenario, std::ptr::null(), &opts, &mut solution);
            assert_eq!(st, PinchStatus::Ok);

            let p = pinch_solution_mc_outage(solution);
            assert!((0.0..=1.0).contains(&p));
            assert!(pinch_solution_log_bound(solution).is_finite());

            let json = pinch_solution_to_json(solution);
            assert!(!json.is_null());
            let text = CStr::from_ptr(json).to_str().unwrap();
            assert!(text.contains("\"active_clusters\""));
            pinch_string_free(json);

            pinch_solution_free(solution);
            pinch_scenario_free(scenario);
        }
    }

    #[test]
    fn status_codes_for_bad_inputs() {
        unsafe {
            let mut scenario: *mut PinchScenario = std::ptr::null_mut();
            assert_eq!(
                pinch_scenario_parse(std::ptr::null(), &mut scenario),
                PinchStatus::NullArgument
            );
            let broken = CString::new("{\"nope\": 1}").unwrap();
            assert_eq!(
                pinch_scenario_parse(broken.as_ptr(), &mut scenario),
                PinchStatus::ParseError
            );
            let err = pinch_last_error();
            assert!(!err.is_null());
            pinch_string_free(err);

            // structural violation: time budget
            let bad = CString::new(
                scenario_json()
                    .to_str()
                    .unwrap()
                    .replace("\"total_time\": 0.008", "\"total_time\": 0.008, \"min_slot\": 0.008"),
            )
            .unwrap();
            assert_eq!(
                pinch_scenario_parse(bad.as_ptr(), &mut scenario),
                PinchStatus::InvalidScenario
            );
        }
    }

    #[test]
    fn baseline_scheme_and_infeasible_paths() {
        unsafe {
            let mut scenario: *mut PinchScenario = std::ptr::null_mut();
            assert_eq!(
                pinch_scenario_parse(scenario_json().as_ptr(), &mut scenario),
                PinchStatus::Ok
            );
            let mut opts = pinch_run_options_default();
            opts.mc_samples = 2_000;
            opts.s_grid_lo = 0.05;
            opts.s_grid_hi = 0.2;
            opts.s_grid_len = 2;
            opts.max_outer = 4;

            let scheme = CString::new("uniform").unwrap();
            let mut solution: *mut PinchSolution = std::ptr::null_mut();
            assert_eq!(
                pinch_optimize(scenario, scheme.as_ptr(), &opts, &mut solution),
                PinchStatus::Ok
            );
            pinch_solution_free(solution);

            let bogus = CString::new("no_such_scheme").unwrap();
            assert_eq!(
                pinch_optimize(scenario, bogus.as_ptr(), &opts, &mut solution),
                PinchStatus::ParseError
            );
            pinch_scenario_free(scenario);
        }
    }

    #[test]
    fn generated_header_covers_the_surface() {
        let header = std::fs::read_to_string(
            std::path::Path::new(env!("CARGO_MANIFEST_DIR")).join("include/pinch_isac.h"),
        )
        .expect("header generated at build time");
        for name in [
            "pinch_scenario_parse",
            "pinch_optimize",
            "pinch_solution_to_json",
            "pinch_solution_mc_outage",
            "pinch_string_free",
            "PinchRunOptions",
            "PinchStatus",
        ] {
            assert!(header.contains(name), "missing {name}");
        }
    }
}
