//! Property tests for the model, trigger and decay-comparison invariants.

mod common;

use std::sync::Arc;

use mbpetc::analysis::{decay_chain_holds, ReferenceDecay};
use mbpetc::certificates::{v_bound, CertifiedConstants};
use mbpetc::dynamics::{pendulum_model, Gamma, LinearQuadratic, SystemModel, PENDULUM_OMEGA0};
use mbpetc::prediction::{PredictionKind, PredictionModel};
use mbpetc::simulator::{run, SimConfig};
use mbpetc::trigger::TriggerState;
use proptest::prelude::*;

fn v_oracle(x: &[f64]) -> f64 {
    1.278 * x[0] * x[0] + 0.632 * x[0] * x[1] + 0.404 * x[1] * x[1]
}

fn scalar(rate: f64) -> SystemModel {
    // ẋ = x + u, κ = −2x, V = x²
    let sys = LinearQuadratic::new(1, 1, vec![1.0], vec![1.0], vec![2.0], vec![1.0]).unwrap();
    SystemModel::new("scalar", Arc::new(sys), Gamma::Linear(rate))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn pendulum_lyapunov_matches_quadratic(x1 in -1.5f64..1.5, x2 in -2.0f64..2.0) {
        let m = pendulum_model(PENDULUM_OMEGA0).unwrap();
        let x = [x1, x2];
        prop_assert!((m.v(&x) - v_oracle(&x)).abs() <= 1e-14 * (1.0 + v_oracle(&x)));
    }

    #[test]
    fn pendulum_gradient_matches_finite_differences(x1 in -1.5f64..1.5, x2 in -2.0f64..2.0) {
        let m = pendulum_model(PENDULUM_OMEGA0).unwrap();
        let g = m.v_grad(&[x1, x2]);
        let e = 1e-6;
        let d1 = (v_oracle(&[x1 + e, x2]) - v_oracle(&[x1 - e, x2])) / (2.0 * e);
        let d2 = (v_oracle(&[x1, x2 + e]) - v_oracle(&[x1, x2 - e])) / (2.0 * e);
        prop_assert!((g[0] - d1).abs() < 1e-7, "{} vs {}", g[0], d1);
        prop_assert!((g[1] - d2).abs() < 1e-7, "{} vs {}", g[1], d2);
    }

    /// The feedback cancels the gravity term, leaving a linear closed loop.
    #[test]
    fn pendulum_closed_loop_is_linear(x1 in -1.5f64..1.5, x2 in -2.0f64..2.0) {
        let m = pendulum_model(PENDULUM_OMEGA0).unwrap();
        let u = m.kappa(&[x1, x2]).unwrap();
        let dx = m.f(&[x1, x2], &u).unwrap();
        prop_assert_eq!(dx[0], x2);
        let expect = -3.16 * x1 - 4.04 * x2;
        prop_assert!((dx[1] - expect).abs() < 1e-12 * (1.0 + u[0].abs()), "{} vs {}", dx[1], expect);
    }

    /// `v_bound` over-approximates V along the exact flow of ẋ = x + u* with
    /// u* held, for the scalar plant with μ set from its own constants.
    #[test]
    fn v_bound_dominates_exact_hold(x in -1.0f64..1.0, m in 0.0f64..0.3) {
        let model = scalar(2.0);
        // f(x,u) = x + u: L₁ = 1, L₂ = 2 on any set, generous M_max
        let k = CertifiedConstants::from_estimates(10.0, 0.35, 1.0, 2.0, 10.0, Some(2.0), 16).unwrap();
        let u = -2.0 * x;
        // x(t) = (x + u)eᵗ − u
        let xt = (x + u) * m.exp() - u;
        let bound = v_bound(&model, &k, &[x], &[u], m).unwrap();
        prop_assert!(xt * xt <= bound + 1e-12, "V {} > bound {}", xt * xt, bound);
    }

    /// The decay budget loses exactly hσγ(V_ref) per elapsed sample.
    #[test]
    fn decay_budget_is_affine_in_k(x0 in 0.01f64..0.9, k in 0u64..1000, sigma in 0.05f64..0.95) {
        let model = scalar(2.0);
        let h = 1e-3;
        let k_consts = CertifiedConstants::from_estimates(1.0, sigma, 1.0, 2.0, 1.5, Some(2.0), 16).unwrap();
        let p = PredictionModel::zoh(model, h).unwrap();
        let mut trig = TriggerState::new(p, k_consts, 10);
        trig.evaluate(0, &[x0]).unwrap();
        let v = x0 * x0;
        let step = h * sigma * 2.0 * v;
        let a = trig.decay_budget(k);
        let b = trig.decay_budget(k + 1);
        prop_assert!(((a - b) - step).abs() <= 1e-12 * v);
        prop_assert!((a - (v - (k as f64 + 1.0) * step)).abs() <= 1e-12 * v.max(1.0) * (k as f64 + 1.0));
    }

    /// No two consecutive transmissions are more than ν + 1 samples apart.
    #[test]
    fn transmissions_respect_max_interval(x0 in -0.9f64..0.9, nu in 0u64..40) {
        let consts = CertifiedConstants::from_estimates(1.0, 0.35, 1.0, 2.0, 1.5, Some(2.0), 16).unwrap();
        let mut cfg = SimConfig::new(scalar(2.0), PredictionKind::ScaledEuler { scale: 1.05 }, 0.01, 1.0, vec![x0]);
        cfg.unsafe_h_override = true;
        cfg.nu = Some(nu);
        let trace = run(&cfg, &consts).unwrap();
        for w in trace.events.windows(2) {
            prop_assert!(w[1].k - w[0].k <= nu + 1, "gap {} with nu {}", w[1].k - w[0].k, nu);
        }
    }

    /// Between transmissions x̂ follows the prediction map; at them it resets.
    #[test]
    fn pendulum_estimate_follows_hybrid_jumps(x1 in -0.4f64..0.4, x2 in -0.3f64..0.3) {
        let x0 = [x1, x2];
        prop_assume!(v_oracle(&x0) < 0.25);
        let model = pendulum_model(PENDULUM_OMEGA0).unwrap();
        let consts = common::pendulum_constants();
        let h = consts.h_sigma_masp;
        let mut cfg = SimConfig::new(model.clone(), PredictionKind::ScaledEuler { scale: 1.05 }, h, 2000.0 * h, x0.to_vec());
        cfg.substeps = 4;
        let trace = run(&cfg, &consts).unwrap();
        let p = PredictionModel::scaled_euler(model, h, 1.05).unwrap();
        for i in 1..trace.len() {
            let Some(reason) = trace.sample[i] else { continue };
            if reason.transmits() {
                prop_assert_eq!(trace.xhat_at(i), trace.x_at(i));
            } else {
                prop_assert_eq!(trace.xhat_at(i).to_vec(), p.predict(trace.xhat_at(i - 1)).unwrap());
            }
        }
    }

    /// Premises `C₁ ≤ C₂ − rσγ(C₂)`, `C₂ ≤ S(s)` imply `C₁ ≤ S(s + r)`, with
    /// S checked against its closed form.
    #[test]
    fn decay_comparison_chains(
        v0 in 0.01f64..1.0,
        s in 0.0f64..5.0,
        r in 0.0f64..1.0,
        shrink in 0.0f64..1.0,
        slack in 0.0f64..1.0,
    ) {
        let (sigma, rate) = (0.35, 0.6886);
        let grid: Vec<f64> = (0..=600).map(|i| i as f64 * 0.01).collect();
        let decay = ReferenceDecay::new(Gamma::Linear(rate), sigma, v0, &grid).unwrap();
        let closed = |t: f64| v0 * (-sigma * rate * t).exp();
        prop_assert!((decay.value_at(s) - closed(s)).abs() <= 1e-12 * v0);

        let c2 = decay.value_at(s) * shrink;
        let c1 = (c2 - r * sigma * rate * c2) * slack;
        prop_assert!(decay_chain_holds(c1, c2, r, s, &decay));
        prop_assert!(c1 <= closed(s + r) * (1.0 + 1e-12));
    }
}
