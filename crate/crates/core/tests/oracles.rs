mod support;

use support::oracles;

fn check(result: oracles::Check) {
    match result {
        Ok(msg) => println!("{msg}"),
        Err(msg) => panic!("{msg}"),
    }
}

#[test]
fn incremental_cholesky_matches_full() {
    check(oracles::incremental_cholesky());
}

#[test]
fn posterior_matches_dense_inverse() {
    check(oracles::dense_inverse());
}

#[test]
fn nig_evidence_is_multivariate_t() {
    check(oracles::nig_marginal_t());
}

#[test]
fn ei_matches_monte_carlo() {
    check(oracles::ei_monte_carlo());
}

#[test]
fn sobol_matches_reference() {
    check(oracles::sobol_reference());
}

#[test]
fn update_matches_refit_over_run() {
    check(oracles::update_matches_refit());
}

#[test]
fn suites_are_labelled_in_order() {
    let labels: Vec<&str> = oracles::all().iter().map(|(l, _)| &l[..3]).collect();
    assert_eq!(labels, ["(a)", "(b)", "(c)", "(d)", "(e)", "(f)"]);
}
