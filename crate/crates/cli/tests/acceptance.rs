//! End-to-end acceptance checks. Each test prints one PASS/FAIL line.

use std::io::Write;

use mecvf_cli::check::{self, CheckOutcome};

fn report(outcome: CheckOutcome) {
    // Written to the raw handle so the line shows for passing tests too.
    let mut out = std::io::stdout().lock();
    writeln!(out, "{}", outcome.line()).unwrap();
    out.flush().unwrap();
    assert!(outcome.passed, "{}", outcome.line());
}

#[test]
fn c01_erlang_c_matches_birth_death_balance() {
    report(check::check_erlang_c());
}

#[test]
fn c02_mm1_sojourn_matches_simulation() {
    report(check::check_mm1_simulation(1_000_000));
}

#[test]
fn c03_cost_model_matches_reference() {
    report(check::check_cost_model(100));
}

#[test]
fn c04_constraints_are_enforced() {
    report(check::check_constraint_suite());
}

#[test]
fn c05_backprop_matches_finite_differences() {
    report(check::check_gradients(20));
}

#[test]
fn c06_reward_contract() {
    report(check::check_reward_contract());
}

#[test]
fn c07_dtd3_learns_on_desk_preset() {
    let (outcome, _) = check::check_learning(2000, &[0, 1, 2]);
    report(outcome);
}

#[test]
fn c08_metaheuristics_reach_grid_optimum() {
    report(check::check_metaheuristics(20_000));
}

#[test]
fn c09_sigma_endpoints() {
    report(check::check_sigma_endpoints());
}

#[test]
fn c10_compare_is_deterministic() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    report(check::check_determinism(a.path(), b.path()));
}
