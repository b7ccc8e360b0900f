//! End-to-end optimizer behavior on the conjugate fixture: exactness,
//! start-point robustness, lower-bound values and bit-reproducibility.

use nalgebra::DVector;
use vbil_core::expfam::{ProductFamily, VariationalFactor};
use vbil_core::gradient::GradientSample;
use vbil_core::models::{BernoulliBetaModel, VbilModel};
use vbil_core::optimizer::{estimate_lower_bound, run_vbil, StopReason, VbilConfig};

fn conjugate_config(seed: u64) -> VbilConfig {
    VbilConfig {
        samples_per_iter: 500,
        max_iterations: 2000,
        stop_epsilon: 1e-9,
        seed,
        ..VbilConfig::default()
    }
}

#[test]
fn conjugate_fit_is_exact_from_both_starts() {
    let model = BernoulliBetaModel::new(200, 57).unwrap();
    for (a0, b0) in [(5.0, 5.0), (120.0, 30.0)] {
        let m = model.clone().with_init(a0, b0);
        let trace = run_vbil(&m, &conjugate_config(1)).unwrap();
        let lam = trace.final_lambda();
        let kl = model.kl_to_posterior_quadrature(lam[0], lam[1]);
        assert!(
            kl < 0.01,
            "start ({a0},{b0}): KL to Beta(58,144) is {kl}"
        );
    }
}

#[test]
fn the_two_starts_agree_on_the_fitted_moments() {
    let model = BernoulliBetaModel::new(200, 57).unwrap();
    let mut fits = Vec::new();
    for (a0, b0) in [(5.0, 5.0), (120.0, 30.0)] {
        let m = model.clone().with_init(a0, b0);
        let trace = run_vbil(&m, &conjugate_config(7)).unwrap();
        let (mean, sd) = trace.final_family.marginal_mean_sd()[0];
        fits.push((mean, sd));
    }
    let (m1, s1) = fits[0];
    let (m2, s2) = fits[1];
    assert!(
        ((m1 - m2) / m1).abs() < 0.02,
        "means differ: {m1} vs {m2}"
    );
    assert!(((s1 - s2) / s1).abs() < 0.02, "sds differ: {s1} vs {s2}");
}

#[test]
fn zero_iterations_return_the_initial_family() {
    let model = BernoulliBetaModel::new(200, 57).unwrap().with_init(9.0, 4.0);
    let mut cfg = conjugate_config(3);
    cfg.max_iterations = 0;
    let trace = run_vbil(&model, &cfg).unwrap();
    assert!(trace.iterations.is_empty());
    assert_eq!(trace.stop_reason, StopReason::MaxIterations);
    let lam = trace.final_lambda();
    assert_eq!((lam[0], lam[1]), (9.0, 4.0));
    assert!(trace.final_log_marginal_likelihood.is_nan());
}

#[test]
fn lower_bound_reaches_the_exact_log_marginal_likelihood() {
    let model = BernoulliBetaModel::new(200, 57).unwrap();
    let trace = run_vbil(&model, &conjugate_config(5)).unwrap();
    let exact = model.exact_log_marginal();
    assert!(
        (trace.final_log_marginal_likelihood - exact).abs() < 0.05,
        "LB {} vs exact {exact}",
        trace.final_log_marginal_likelihood
    );
    // the scaled lower bound is O(1)
    let last = trace.iterations.last().unwrap();
    assert!(last.lb_scaled.abs() < 50.0);
}

#[test]
fn lower_bound_terms_are_constant_when_q_matches_the_target() {
    // q = exact posterior: log p(theta) + log p(y|theta) - log q(theta) is
    // the same constant ln B(58,144) for every draw.
    let model = BernoulliBetaModel::new(200, 57).unwrap();
    let family =
        ProductFamily::new(vec![VariationalFactor::beta(58.0, 144.0).unwrap()]).unwrap();
    let mut terms = Vec::new();
    let mut samples = Vec::new();
    for k in 1..100 {
        let theta = family.sample_theta(&[k as f64 / 100.0]).unwrap();
        let s = GradientSample {
            log_q_total: family.log_density(theta.as_slice()).unwrap(),
            log_q_blocks: family.log_density_blocks(theta.as_slice()).unwrap(),
            score: family.score(theta.as_slice()).unwrap(),
            log_prior_blocks: vec![0.0],
            log_lik: model.exact_log_lik(&theta).unwrap(),
            theta,
        };
        terms.push(s.log_prior_total() - s.log_q_total + s.log_lik);
        samples.push(s);
    }
    let lb = estimate_lower_bound(&samples);
    assert!((lb - model.exact_log_marginal()).abs() < 1e-9);
    let spread = terms.iter().cloned().fold(f64::NEG_INFINITY, f64::max)
        - terms.iter().cloned().fold(f64::INFINITY, f64::min);
    assert!(spread < 1e-9, "per-sample terms vary by {spread}");
}

#[test]
fn traces_are_bit_identical_across_worker_pool_sizes() {
    let model = BernoulliBetaModel::new(200, 57).unwrap();
    let mut cfg = conjugate_config(11);
    cfg.max_iterations = 25;
    cfg.stop_epsilon = 1e-12;

    let run_with_threads = |threads: usize| {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .unwrap();
        pool.install(|| run_vbil(&model, &cfg).unwrap())
    };
    let a = run_with_threads(1);
    let b = run_with_threads(4);
    assert_eq!(a.iterations.len(), b.iterations.len());
    for (ra, rb) in a.iterations.iter().zip(&b.iterations) {
        assert_eq!(ra.lambda, rb.lambda);
        assert_eq!(ra.lb_hat.to_bits(), rb.lb_hat.to_bits());
    }
    assert_eq!(a.final_lambda(), b.final_lambda());
}

#[test]
fn window_average_rises_near_convergence() {
    // over the tail of the run the window-averaged scaled lower bound is
    // non-decreasing up to the stopping slack
    let model = BernoulliBetaModel::new(200, 57).unwrap();
    let trace = run_vbil(&model, &conjugate_config(13)).unwrap();
    let windows: Vec<f64> = trace
        .iterations
        .iter()
        .filter_map(|r| r.lb_window_avg)
        .collect();
    assert!(windows.len() >= 2);
    let tail = &windows[windows.len().saturating_sub(20)..];
    for pair in tail.windows(2) {
        assert!(
            pair[1] >= pair[0] - 1e-4,
            "window average fell from {} to {}",
            pair[0],
            pair[1]
        );
    }
}
