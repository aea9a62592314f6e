//! Acceptance suite: the seven headline criteria, one pass/fail line each.
//!
//! Run with `cargo test -p tpe-core --test acceptance` (about 20 minutes on
//! one core). The process exits non-zero if any criterion fails.

use std::process::ExitCode;
use std::time::Instant;

use tpe_core::validation::{self, Check, QUICK_BUDGET_SECONDS};

const SEED: u64 = 20_240_917;

/// Wall-clock limits (seconds) attached to the criteria.
const ELIMINATION_LIMIT: f64 = 120.0;
const PLANE_LIMIT: f64 = 600.0;
const POINT_LIMIT: f64 = 1800.0;

fn within(mut check: Check, limit: f64) -> Check {
    if check.seconds > limit {
        check.passed = false;
        check.detail.push_str(&format!("; runtime {:.0} s exceeds {limit:.0} s", check.seconds));
    }
    check
}

fn report(number: usize, check: &Check) {
    println!(
        "criterion {number} [{}] {} ({:.1} s): {}",
        if check.passed { "PASS" } else { "FAIL" },
        check.name,
        check.seconds,
        check.detail
    );
}

fn main() -> ExitCode {
    let mut all = true;
    let mut emit = |number: usize, check: Check| {
        report(number, &check);
        all &= check.passed;
    };

    emit(1, within(Check::run("adiabatic elimination of mode c", validation::adiabatic_elimination), ELIMINATION_LIMIT));

    let start = Instant::now();
    let strong = validation::headline_run(0.75, 1.0, SEED);
    let strong_seconds = start.elapsed().as_secs_f64();
    let shared = |name: &str, f: &dyn Fn(&tpe_core::protocol::StochasticRun) -> tpe_core::Result<(bool, String)>| {
        let mut c = Check::run(name, || match &strong {
            Ok(run) => f(run),
            Err(e) => Err(tpe_core::Error::InvalidState(e.to_string())),
        });
        c.seconds += strong_seconds;
        c
    };
    emit(2, shared("parity lobes of the integrated current, α=β=0.75, η=1, M=500", &validation::parity_lobes));

    let start = Instant::now();
    let planes = validation::ReferencePlanes::compute();
    let plane_seconds = start.elapsed().as_secs_f64();
    let on_plane = |name: &str, f: &dyn Fn(&validation::ReferencePlanes) -> tpe_core::Result<(bool, String)>| {
        let mut c = Check::run(name, || match &planes {
            Ok(p) => f(p),
            Err(e) => Err(tpe_core::Error::InvalidState(e.to_string())),
        });
        c.seconds += plane_seconds;
        within(c, PLANE_LIMIT)
    };
    emit(3, on_plane("X outcome plane structure, α=β=0.75", &|p| validation::x_plane_structure(&p.x_even)));
    emit(4, on_plane("Y outcome plane structure, α=β=0.75", &|p| validation::y_plane_structure(&p.y_even)));

    let strong_point = within(shared("max fidelity, α=0.75, η=1.0", &|run| validation::headline(&run.summary, 0.99, false)), POINT_LIMIT);
    let weak_point = within(
        Check::run("max fidelity, α=0.5, η=0.7", || validation::headline(&validation::headline_run(0.5, 0.7, SEED)?.summary, 0.80, true)),
        POINT_LIMIT,
    );
    emit(
        5,
        Check {
            name: "stochastic fidelity points, M=500".into(),
            passed: strong_point.passed && weak_point.passed,
            detail: format!("(α=0.75, η=1.0) {}; (α=0.5, η=0.7) {}", strong_point.detail, weak_point.detail),
            seconds: strong_point.seconds + weak_point.seconds,
        },
    );

    emit(
        6,
        Check::run("trajectory ensemble vs master equation, M=2000, N=6", || {
            validation::unraveling_consistency(SEED, validation::UNRAVELING_TRAJECTORIES)
        }),
    );

    let start = Instant::now();
    let quick = validation::quick_suite(SEED);
    let quick_seconds = start.elapsed().as_secs_f64();
    let failed: Vec<&str> = quick.iter().filter(|c| !c.passed).map(|c| c.name.as_str()).collect();
    emit(
        7,
        Check {
            name: "property suites (quick level)".into(),
            passed: failed.is_empty() && quick_seconds < QUICK_BUDGET_SECONDS,
            detail: format!(
                "{}/{} checks passed{} in {quick_seconds:.1} s (budget {QUICK_BUDGET_SECONDS:.0} s)",
                quick.len() - failed.len(),
                quick.len(),
                if failed.is_empty() { String::new() } else { format!(", failed: {}", failed.join(", ")) }
            ),
            seconds: quick_seconds,
        },
    );

    if all {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
