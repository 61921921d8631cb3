//! Small hand-made exchanges used throughout the docs and tests.

use std::collections::BTreeMap;

use crate::model::{Buyer, ExchangeInstance, Item, Outcome, PackageBid, Seller};

fn buyer(id: &str, budget: f64, bids: &[(&[&str], f64)]) -> Buyer {
    Buyer {
        id: id.into(),
        budget,
        bids: bids.iter().map(|(b, v)| PackageBid::new(b, *v)).collect(),
    }
}

fn seller(id: &str, endowment: &[&str], asks: &[(&[&str], f64)]) -> Seller {
    Seller {
        id: id.into(),
        endowment: endowment.iter().map(|s| s.to_string()).collect(),
        asks: asks.iter().map(|(b, v)| PackageBid::new(b, *v)).collect(),
    }
}

fn instance(name: &str, items: &[&str], buyers: Vec<Buyer>, sellers: Vec<Seller>) -> ExchangeInstance {
    let mut metadata = BTreeMap::new();
    metadata.insert("name".to_string(), serde_json::Value::from(name));
    ExchangeInstance {
        items: items.iter().map(|&i| Item::from(i)).collect(),
        buyers,
        sellers,
        metadata,
    }
}

/// One good offered by two sellers (reservations 0 and 4). `b1` values the
/// unit of `s1` at 10 but can spend only 1; `b2` values either unit at 9.
/// Trading `b1`-`s1` and `b2`-`s2` yields 15, yet only the 9-welfare match
/// `b2`-`s1` is stable.
pub fn stability_vs_welfare() -> ExchangeInstance {
    instance(
        "stability-vs-welfare",
        &["g1", "g2"],
        vec![
            buyer("b1", 1.0, &[(&["g1"], 10.0)]),
            buyer("b2", f64::INFINITY, &[(&["g1"], 9.0), (&["g2"], 9.0)]),
        ],
        vec![
            seller("s1", &["g1"], &[(&["g1"], 0.0)]),
            seller("s2", &["g2"], &[(&["g2"], 4.0)]),
        ],
    )
}

/// The welfare-15 outcome of [`stability_vs_welfare`]: `b1` buys `g1` at 1,
/// `b2` buys `g2` at 4.5.
pub fn stability_vs_welfare_efficient_outcome() -> Outcome {
    outcome(
        &[("b1", Some(0), 1.0), ("b2", Some(1), 4.5)],
        &[("s1", Some(0), 1.0), ("s2", Some(0), 4.5)],
    )
}

/// The stable outcome of [`stability_vs_welfare`]: `b2` buys `g1` at 2.
pub fn stability_vs_welfare_stable_outcome() -> Outcome {
    outcome(
        &[("b1", None, 0.0), ("b2", Some(0), 2.0)],
        &[("s1", Some(0), 2.0), ("s2", None, 0.0)],
    )
}

/// Two single-item sellers, a budget-3 buyer wanting both items at 10 and a
/// budget-2 buyer valuing any non-empty subset at 4. The core is empty, but
/// becomes non-empty once budgets are dropped.
pub fn empty_core() -> ExchangeInstance {
    instance(
        "empty-core",
        &["A", "B"],
        vec![
            buyer("b1", 3.0, &[(&["A", "B"], 10.0)]),
            buyer("b2", 2.0, &[(&["A"], 4.0), (&["B"], 4.0), (&["A", "B"], 4.0)]),
        ],
        vec![
            seller("S1", &["A"], &[(&["A"], 0.0)]),
            seller("S2", &["B"], &[(&["B"], 0.0)]),
        ],
    )
}

/// `b1` values A at 2 and B at 10 with budget 3; `b2` values B at 2 with
/// budget 2. The welfare optimum (b1 gets B) has capped value 3, while the
/// capped optimum (b1 gets A, b2 gets B) reaches 4.
pub fn capped_vs_uncapped() -> ExchangeInstance {
    instance(
        "capped-vs-uncapped",
        &["A", "B"],
        vec![
            buyer("b1", 3.0, &[(&["A"], 2.0), (&["B"], 10.0)]),
            buyer("b2", 2.0, &[(&["B"], 2.0)]),
        ],
        vec![
            seller("S1", &["A"], &[(&["A"], 0.0)]),
            seller("S2", &["B"], &[(&["B"], 0.0)]),
        ],
    )
}

fn outcome(buyers: &[(&str, Option<usize>, f64)], sellers: &[(&str, Option<usize>, f64)]) -> Outcome {
    Outcome {
        buyer_alloc: buyers.iter().map(|(id, k, _)| (id.to_string(), *k)).collect(),
        seller_alloc: sellers.iter().map(|(id, k, _)| (id.to_string(), *k)).collect(),
        buyer_price: buyers.iter().map(|(id, _, p)| (id.to_string(), *p)).collect(),
        seller_price: sellers.iter().map(|(id, _, p)| (id.to_string(), *p)).collect(),
    }
}
