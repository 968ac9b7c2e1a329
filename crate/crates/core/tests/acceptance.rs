//! Acceptance suite: one PASS/FAIL line per criterion, non-zero exit on any
//! failure. Tolerances are pinned here so that loosening one in the library
//! fails this target before it can hide a regression.

use std::process::ExitCode;

use bravo_core::verify::{self, Level, Outcome};

fn pinned_tolerances() -> Vec<(&'static str, f64, f64)> {
    vec![
        ("C1 chains", verify::C1_CHAINS as f64, 200.0),
        ("C1 max states", verify::C1_MAX_STATES as f64, 200.0),
        ("C1 tolerance", verify::C1_TOL, 1e-10),
        ("C1 seconds", verify::C1_SECONDS, 5.0),
        ("C2 tolerance", verify::C2_TOL, 1e-12),
        ("C3 lower", verify::C3_RANGE.0, 0.656),
        ("C3 upper", verify::C3_RANGE.1, 0.676),
        ("C4 tolerance", verify::C4_TOL, 1e-12),
        ("C5 argmin tolerance", verify::C5_ARGMIN_TOL, 1e-6),
        ("C5 minimum tolerance", verify::C5_MIN_TOL, 5e-4),
        ("C5 minimum target", verify::C5_MIN_TARGET, 0.6018),
        ("C6 step", verify::C6_STEP, 0.01),
        ("C6 upper", verify::C6_UPPER, 100.0),
        ("C7 literal", verify::C7_LITERAL, 0.2606845),
        ("C7 literal tolerance", verify::C7_LITERAL_TOL, 1e-7),
        ("C7 closed-form tolerance", verify::C7_CLOSED_TOL, 1e-9),
        ("C8 tolerance", verify::C8_TOL, 1e-8),
        ("C8 J0 tolerance", verify::C8_J0_TOL, 1e-9),
        ("C9 tolerance", verify::C9_TOL, 0.02),
        ("C9 seconds", verify::C9_SECONDS, 30.0),
        ("C10 tolerance", verify::C10_TOL, 1e-2),
        ("C10 beta", verify::C10_BETA, 1e-3),
        ("C11 floor", verify::C11_FLOOR, 0.95),
        ("C12 tolerance", verify::C12_TOL, 1e-9),
        ("C13 tolerance", verify::C13_TOL, 0.02),
        ("C13 small beta", verify::C13_SMALL_BETA, 1e-6),
        ("C13 small-beta tolerance", verify::C13_SMALL_TOL, 1e-3),
        ("C14 departures", verify::C14_MIN_DEPARTURES as f64, 2e6),
        ("C14 sigmas", verify::C14_SIGMAS, 3.0),
        ("C14 seconds", verify::C14_SECONDS, 60.0),
        ("C15 Berry-Esseen bound", verify::C15_BE_BOUND, 0.8 * (1.0 + 2.0 / std::f64::consts::E)),
    ]
}

fn main() -> ExitCode {
    let mut ok = true;
    for (name, actual, pinned) in pinned_tolerances() {
        if actual != pinned {
            println!("[FAIL] pinned tolerance {name}: library has {actual:e}, acceptance pins {pinned:e}");
            ok = false;
        }
    }

    let report = verify::run(Level::Full);
    for check in &report.checks {
        println!("{}", check.line());
        ok &= check.outcome == Outcome::Pass;
    }
    let passed = report.checks.iter().filter(|c| c.outcome == Outcome::Pass).count();
    println!("\nacceptance: {passed}/{} criteria passed", report.checks.len());
    if ok {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
