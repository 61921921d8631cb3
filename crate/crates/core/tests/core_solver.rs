mod common;

use std::time::Duration;

use cex_core::core_solver::{least_core_in, solve_core_in, CoreOptions, CoreResult, CoreStatus, SeedStrategy};
use cex_core::milp::Engine;
use cex_core::model::Market;
use cex_core::samples;
use common::{
    all_allocations, deviation_surplus, least_core_grid, oracle_core_welfare, rng, tiny_instance,
};

fn solve(m: &Market, cap: Option<usize>, eps: f64) -> CoreResult {
    let opts = CoreOptions {
        max_coalition_size: cap,
        epsilon: eps,
        ..CoreOptions::default()
    };
    solve_core_in(m, &opts, &Engine::builtin()).unwrap()
}

/// The outcome is feasible and no deviation of admissible size has positive
/// surplus at level `eps`.
fn assert_unblocked(m: &Market, r: &CoreResult, cap: Option<usize>) {
    let (t, bp, sp) = m.indexed(r.outcome.as_ref().unwrap()).unwrap();
    assert!(m.outcome_violations(&t, &bp, &sp).is_empty());
    let (pib, pis) = m.payoffs(&t, &bp, &sp);
    let all_b = vec![true; m.num_buyers()];
    let all_s = vec![true; m.num_sellers()];
    for d in all_allocations(m, &all_b, &all_s) {
        let size = d.buyer.iter().flatten().count() + d.seller.iter().flatten().count();
        if d.is_empty() || cap.is_some_and(|c| size > c) {
            continue;
        }
        let s = deviation_surplus(m, &d, &pib, &pis, r.epsilon);
        assert!(s <= 1e-6, "deviation {d:?} has surplus {s}");
    }
}

#[test]
fn core_welfare_matches_enumeration_oracle() {
    let mut r = rng(31);
    let (mut empty, mut nonempty) = (0, 0);
    for i in 0..160 {
        let inst = if i == 0 { samples::empty_core() } else { tiny_instance(&mut r) };
        let m = Market::new(&inst).unwrap();
        let got = solve(&m, None, 0.0);
        match oracle_core_welfare(&m, 0.0) {
            None => {
                empty += 1;
                assert_eq!(got.status, CoreStatus::CoreEmpty, "{}", inst.to_json());
            }
            Some(w) => {
                nonempty += 1;
                assert_eq!(got.status, CoreStatus::CoreOutcome, "{}", inst.to_json());
                assert!((got.welfare - w).abs() < 1e-6, "{} vs {w}\n{}", got.welfare, inst.to_json());
                assert_unblocked(&m, &got, None);
            }
        }
    }
    assert!(empty > 1 && nonempty > 100, "{empty} empty, {nonempty} non-empty");
}

#[test]
fn epsilon_core_matches_enumeration_oracle() {
    let mut r = rng(32);
    for _ in 0..40 {
        let m = Market::new(&tiny_instance(&mut r)).unwrap();
        let got = solve(&m, None, 0.5);
        match oracle_core_welfare(&m, 0.5) {
            None => assert_eq!(got.status, CoreStatus::CoreEmpty),
            Some(w) => {
                assert_eq!(got.status, CoreStatus::CoreOutcome);
                assert!((got.welfare - w).abs() < 1e-6);
                assert_unblocked(&m, &got, None);
            }
        }
    }
}

#[test]
fn size_caps_nest() {
    let mut r = rng(33);
    for _ in 0..40 {
        let m = Market::new(&tiny_instance(&mut r)).unwrap();
        let results: Vec<CoreResult> = [Some(2), Some(3), None].iter().map(|&c| solve(&m, c, 0.0)).collect();
        for (r, cap) in results.iter().zip([Some(2), Some(3), None]) {
            if r.status == CoreStatus::CoreOutcome {
                assert_unblocked(&m, r, cap);
            }
        }
        for w in results.windows(2) {
            if w[1].status == CoreStatus::CoreOutcome {
                assert_eq!(w[0].status, CoreStatus::CoreOutcome);
                assert!(w[1].welfare <= w[0].welfare + 1e-6);
            }
        }
    }
}

#[test]
fn seeding_does_not_change_the_answer() {
    let mut r = rng(34);
    for _ in 0..30 {
        let m = Market::new(&tiny_instance(&mut r)).unwrap();
        let plain = solve(&m, None, 0.0);
        let opts = CoreOptions {
            seeds: SeedStrategy::Coalitions { max_size: 3, count: 5 },
            ..CoreOptions::default()
        };
        let seeded = solve_core_in(&m, &opts, &Engine::builtin()).unwrap();
        assert_eq!(plain.status, seeded.status);
        assert!((plain.welfare - seeded.welfare).abs() < 1e-6);
    }
}

#[test]
fn master_bound_never_increases() {
    let mut r = rng(35);
    for _ in 0..40 {
        let m = Market::new(&tiny_instance(&mut r)).unwrap();
        let res = solve(&m, None, 0.0);
        for w in res.trace.windows(2) {
            assert!(w[1].master_objective <= w[0].master_objective + 1e-6);
        }
        assert_eq!(res.trace.iter().filter(|t| t.cut_added).count(), res.cut_pool.len());
    }
}

#[test]
fn zero_time_limit_reports_timeout() {
    let m = Market::new(&samples::stability_vs_welfare()).unwrap();
    let opts = CoreOptions {
        time_limit: Some(Duration::ZERO),
        ..CoreOptions::default()
    };
    let r = solve_core_in(&m, &opts, &Engine::builtin()).unwrap();
    assert_eq!(r.status, CoreStatus::Timeout);
}

#[test]
fn least_core_matches_price_grid() {
    let m = Market::new(&samples::empty_core()).unwrap();
    let best = least_core_grid(&m, 1e-3);
    let lc = least_core_in(&m, None, 1e-4, None, &Engine::builtin()).unwrap();
    assert!((lc.delta - best.max(0.0)).abs() < 2e-3, "{} vs {best}", lc.delta);
    assert!((lc.result.welfare - 10.0).abs() < 1e-6);
}

#[test]
fn least_core_matches_enumeration_oracle() {
    let mut r = rng(36);
    let mut tried = 0;
    while tried < 8 {
        let m = Market::new(&tiny_instance(&mut r)).unwrap();
        if oracle_core_welfare(&m, 0.0).is_some() {
            continue;
        }
        tried += 1;
        let (mut lo, mut hi) = (0.0, 20.0);
        while hi - lo > 1e-5 {
            let mid = 0.5 * (lo + hi);
            if oracle_core_welfare(&m, mid).is_some() {
                hi = mid;
            } else {
                lo = mid;
            }
        }
        let lc = least_core_in(&m, None, 1e-4, None, &Engine::builtin()).unwrap();
        assert!((lc.delta - hi).abs() < 2e-4, "{} vs {hi}", lc.delta);
        let w = oracle_core_welfare(&m, lc.delta).unwrap();
        assert!((lc.result.welfare - w).abs() < 1e-6);
    }
}
