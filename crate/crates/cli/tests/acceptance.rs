//! Acceptance suite. One test per criterion, each printing a pass/fail line
//! (visible with `cargo test -p smsl-cli --test acceptance -- --nocapture`).
//!
//! 1. Oracle equivalence over ten seeded configurations (abs 1e-10, rel 1e-8).
//! 2. Attention normalization across all of criterion 1's combine runs (1e-12).
//! 3. Neck-wide gradient check, L=3 C=8 r=4, rel err < 1e-5.
//! 4. Degeneracy suite: uniform-attention mean, zero-contribution identity,
//!    zero-projection identity, exact half gate.
//! 5. Shape contract over the full configuration matrix.
//! 6. Parameter audit anchored to the detector-scale configuration.
//! 7. Bit-exact determinism of repeated and concurrent forwards, including
//!    through the CLI's files (covered in the `cli_roundtrip` test target).
//! 8. Per-kernel VJP dot-product tests at rel 1e-5.

use smsl_cli::checks;

fn report(criterion: &str, checks: &[checks::Check]) {
    let all = checks.iter().all(|c| c.passed);
    println!(
        "criterion {criterion}: {}",
        if all { "PASS" } else { "FAIL" }
    );
    for c in checks {
        println!(
            "  {} {} {}",
            if c.passed { "ok " } else { "FAIL" },
            c.name,
            c.detail
        );
    }
    assert!(all, "criterion {criterion} failed: {checks:?}");
}

#[test]
fn acceptance_1_oracle_equivalence() {
    let results = checks::check_oracle_matrix();
    assert_eq!(results.len(), 10);
    report("1 (oracle equivalence, 10 configs)", &results);
}

#[test]
fn acceptance_2_attention_normalization() {
    report(
        "2 (attention columns sum to 1 within 1e-12)",
        &checks::check_attention_normalization(),
    );
}

#[test]
fn acceptance_3_gradient_check() {
    let result = checks::gradcheck_reference_config(1e-5, 7).expect("gradcheck must run");
    println!(
        "criterion 3 (gradcheck L=3 C=8 r=4): {}",
        if result.passed { "PASS" } else { "FAIL" }
    );
    println!(
        "  max_rel_err={:e} checked={} skipped={}",
        result.max_rel_err, result.n_params_checked, result.n_skipped
    );
    assert!(result.passed, "{}", result.to_kv_lines());
    assert!(
        result.n_params_checked >= 500,
        "must check at least 500 coordinates, got {}",
        result.n_params_checked
    );
}

#[test]
fn acceptance_4_degeneracy_suite() {
    report("4 (degeneracy suite)", &checks::check_degeneracies());
}

#[test]
fn acceptance_5_shape_contract() {
    report("5 (shape contract)", &[checks::check_shape_contract()]);
}

#[test]
fn acceptance_6_parameter_audit() {
    report("6 (parameter audit)", &[checks::check_param_audit()]);
}

#[test]
fn acceptance_7_determinism_in_process() {
    report(
        "7 (determinism: reruns and threads)",
        &[checks::check_determinism()],
    );
}

#[test]
fn acceptance_8_vjp_dot_products() {
    let results = checks::check_vjp_dot_products(1e-5);
    // Nine kernels; the activation kernel is exercised in both modes.
    assert_eq!(results.len(), 11);
    report("8 (per-kernel VJP dot products)", &results);
}
