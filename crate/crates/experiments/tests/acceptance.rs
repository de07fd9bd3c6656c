//! One test per acceptance criterion. Each prints `criterion N: PASS` or
//! `criterion N: FAIL` with the measured quantities and asserts the verdict.

use psafe_experiments::acceptance::evaluate;

fn check(number: u8) {
    let r = evaluate(number);
    println!("{r}");
    assert!(r.pass, "{r}");
}

#[test]
fn criterion_01_system1_worst_case_holds_expected_safety() {
    check(1);
}

#[test]
fn criterion_02_system1_worst_case_baselines_fall_behind() {
    check(2);
}

#[test]
fn criterion_03_system1_switching_proposed_is_safest() {
    check(3);
}

#[test]
fn criterion_04_system2_trap_defeats_myopic_baselines() {
    check(4);
}

#[test]
fn criterion_05_network_nominal_is_made_safe() {
    check(5);
}

#[test]
fn criterion_06_direct_and_reweighted_estimates_agree() {
    check(6);
}

#[test]
fn criterion_07_survival_matches_first_passage_formula() {
    check(7);
}

#[test]
fn criterion_08_kernel_dp_matches_exact_chain_recursion() {
    check(8);
}

#[test]
fn criterion_09_certificate_identities_hold() {
    check(9);
}

#[test]
fn criterion_10_safe_learning_on_the_chain() {
    check(10);
}
