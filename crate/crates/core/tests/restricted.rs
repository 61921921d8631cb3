mod common;

use cex_core::blocking::membership_check;
use cex_core::core_solver::{solve_core_in, CoreOptions, CoreStatus};
use cex_core::milp::Engine;
use cex_core::model::{Market, PackageBid, Seller};
use cex_core::restricted::{solve_dyadic, solve_single_sided, RestrictedStatus};
use common::{all_allocations, reservations, rng, single_seller_instance, tiny_instance, welfare};
use rand::Rng;

#[test]
fn dyadic_equals_pairwise_core() {
    let engine = Engine::builtin();
    let mut r = rng(41);
    for _ in 0..60 {
        let inst = tiny_instance(&mut r);
        let m = Market::new(&inst).unwrap();
        let dy = solve_dyadic(&inst, &engine).unwrap();
        let pair = CoreOptions {
            max_coalition_size: Some(2),
            ..CoreOptions::default()
        };
        let two = solve_core_in(&m, &pair, &engine).unwrap();
        let full = solve_core_in(&m, &CoreOptions::default(), &engine).unwrap();
        match two.status {
            CoreStatus::CoreOutcome => {
                assert_eq!(dy.status, RestrictedStatus::Optimal, "{}", inst.to_json());
                assert!((dy.welfare - two.welfare).abs() < 1e-6);
                let report = membership_check(&inst, dy.outcome.as_ref().unwrap(), Some(2), &engine).unwrap();
                assert!(!report.blocked);
            }
            _ => assert_eq!(dy.status, RestrictedStatus::Infeasible),
        }
        if full.status == CoreStatus::CoreOutcome {
            assert!(dy.welfare >= full.welfare - 1e-6);
        }
    }
}

#[test]
fn dyadic_equals_core_with_one_buyer_and_one_seller() {
    let engine = Engine::builtin();
    let mut r = rng(42);
    for _ in 0..20 {
        let mut inst = tiny_instance(&mut r);
        inst.buyers.truncate(1);
        let items: Vec<String> = inst.items.iter().map(|i| i.id.clone()).collect();
        let asks = vec![PackageBid {
            bundle: items.clone(),
            value: r.gen_range(0..=5) as f64,
        }];
        inst.sellers = vec![Seller {
            id: "s".into(),
            endowment: items,
            asks,
        }];
        let m = Market::new(&inst).unwrap();
        let dy = solve_dyadic(&inst, &engine).unwrap();
        let full = solve_core_in(&m, &CoreOptions::default(), &engine).unwrap();
        assert_eq!(full.status, CoreStatus::CoreOutcome);
        assert!((dy.welfare - full.welfare).abs() < 1e-6);
    }
}

#[test]
fn single_seller_stages_match_enumeration() {
    let engine = Engine::builtin();
    let mut r = rng(43);
    for _ in 0..80 {
        let inst = single_seller_instance(&mut r);
        let m = Market::new(&inst).unwrap();
        let allocs = all_allocations(&m, &vec![true; m.num_buyers()], &[true]);
        let revenue = |t: &cex_core::model::Trades| welfare(&m, t, true) + reservations(&m, t);
        let admissible: Vec<_> = allocs.iter().filter(|t| welfare(&m, t, true) >= -1e-9).collect();
        let z = admissible.iter().map(|t| revenue(t)).fold(0.0, f64::max);
        let best = admissible
            .iter()
            .filter(|t| revenue(t) >= z - 1e-6)
            .map(|t| welfare(&m, t, false))
            .fold(f64::NEG_INFINITY, f64::max);

        let res = solve_single_sided(&inst, &engine).unwrap();
        assert!((res.z_star - z).abs() < 1e-6, "{} vs {z}", res.z_star);
        assert!((res.welfare - best).abs() < 1e-6);
        assert!(res.capped_revenue >= res.z_star - 1e-6);
        if res.status == RestrictedStatus::Optimal {
            let o = res.outcome.unwrap();
            let (t, bp, sp) = m.indexed(&o).unwrap();
            assert!(m.outcome_violations(&t, &bp, &sp).is_empty());
            assert_eq!(res.blocked_by_enumeration, Some(false));
            assert!(!membership_check(&inst, &o, None, &engine).unwrap().blocked);
        }
    }
}
