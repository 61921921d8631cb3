//! Airport time-slot exchanges in the style of the CATS "matching"
//! distribution: every buyer wants one departure slot at its origin and one
//! arrival slot at its destination, and every slot is sold by its own seller.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::model::{Buyer, ExchangeInstance, Item, PackageBid, Seller};
use crate::{Error, Result};

const AIRPORTS: [(&str, f64, f64); 8] = [
    ("ATL", 0.0, 0.0),
    ("ORD", 2.0, 6.0),
    ("DFW", -3.0, -2.0),
    ("LAX", -12.0, 1.0),
    ("DEN", -6.5, 3.5),
    ("JFK", 6.5, 6.0),
    ("SFO", -13.0, 5.0),
    ("SEA", -11.5, 11.0),
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase", default)]
pub struct AirportGenConfig {
    pub num_bidders: usize,
    pub num_items: usize,
    pub num_airports: usize,
    pub seed: u64,
    /// Value lost per time step between arrival and the ideal arrival time.
    pub deviation_penalty: f64,
    /// Value lost per time step of flight beyond `min_duration`.
    pub duration_penalty: f64,
    pub min_duration: usize,
    /// Budgets are drawn from `[0, budget_scale · max bid value]`.
    pub budget_scale: f64,
    /// Reservations are drawn from `[0, reservation_scale · v]`, `v` the
    /// largest buyer value of a bundle containing the slot.
    pub reservation_scale: f64,
}

impl Default for AirportGenConfig {
    fn default() -> Self {
        AirportGenConfig {
            num_bidders: 3,
            num_items: 6,
            num_airports: 4,
            seed: 0,
            deviation_penalty: 0.5,
            duration_penalty: 0.25,
            min_duration: 1,
            budget_scale: 1.0,
            reservation_scale: 0.5,
        }
    }
}

impl AirportGenConfig {
    pub fn new(num_bidders: usize, num_items: usize, seed: u64) -> Self {
        AirportGenConfig {
            num_bidders,
            num_items,
            seed,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Vec<String> {
        let mut errs = Vec::new();
        if self.num_bidders == 0 {
            errs.push("numBidders must be at least 1".to_string());
        }
        if !(2..=AIRPORTS.len()).contains(&self.num_airports) {
            errs.push(format!("numAirports must lie in 2..={}", AIRPORTS.len()));
        }
        if self.num_items < self.num_airports {
            errs.push("numItems must be at least numAirports".to_string());
        }
        for (name, v) in [
            ("deviationPenalty", self.deviation_penalty),
            ("durationPenalty", self.duration_penalty),
            ("budgetScale", self.budget_scale),
            ("reservationScale", self.reservation_scale),
        ] {
            if !(v.is_finite() && v >= 0.0) {
                errs.push(format!("{name} must be finite and non-negative"));
            }
        }
        errs
    }
}

/// Pairwise airport distances rescaled linearly onto `[1, 10]`.
fn distances(n: usize) -> Vec<Vec<f64>> {
    let raw: Vec<Vec<f64>> = (0..n)
        .map(|a| {
            (0..n)
                .map(|b| {
                    let (_, xa, ya) = AIRPORTS[a];
                    let (_, xb, yb) = AIRPORTS[b];
                    (xa - xb).hypot(ya - yb)
                })
                .collect()
        })
        .collect();
    let off: Vec<f64> = (0..n)
        .flat_map(|a| (0..n).filter(move |&b| b != a).map(move |b| (a, b)))
        .map(|(a, b)| raw[a][b])
        .collect();
    let lo = off.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = off.iter().copied().fold(0.0, f64::max);
    raw.iter()
        .map(|row| {
            row.iter()
                .map(|&d| if hi > lo { 1.0 + 9.0 * (d - lo) / (hi - lo) } else { 10.0 })
                .collect()
        })
        .collect()
}

fn cents(x: f64) -> f64 {
    (x * 100.0).round() / 100.0
}

/// Slot `k` belongs to airport `k mod A` at time `k / A`.
pub fn gen_airport(config: &AirportGenConfig) -> Result<ExchangeInstance> {
    let errs = config.validate();
    if !errs.is_empty() {
        return Err(Error::InvalidInstance(errs));
    }
    let a = config.num_airports;
    let slot_id = |k: usize| format!("{}@{}", AIRPORTS[k % a].0, k / a);
    let slots_at = |airport: usize| -> Vec<usize> { (airport..config.num_items).step_by(a).collect() };
    let horizon = config.num_items.div_ceil(a);
    let dist = distances(a);

    let mut buyers = Vec::new();
    for b in 0..config.num_bidders {
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        rng.set_stream(b as u64 + 1);
        let origin = rng.gen_range(0..a);
        let destination = (origin + rng.gen_range(1..a)) % a;
        let ideal = rng.gen_range(0..horizon) as f64;
        let mut bids = Vec::new();
        for &dep in &slots_at(origin) {
            for &arr in &slots_at(destination) {
                let (td, ta) = (dep / a, arr / a);
                if ta < td {
                    continue;
                }
                let late = (ta as f64 - ideal).abs();
                let extra = (ta - td).saturating_sub(config.min_duration) as f64;
                let value = cents(
                    dist[origin][destination]
                        - config.deviation_penalty * late
                        - config.duration_penalty * extra,
                );
                if value > 0.0 {
                    bids.push(PackageBid {
                        bundle: vec![slot_id(dep), slot_id(arr)],
                        value,
                    });
                }
            }
        }
        let top = bids.iter().map(|b| b.value).fold(0.0, f64::max);
        let budget = cents(rng.gen_range(0.0..=1.0) * config.budget_scale * top);
        buyers.push(Buyer {
            id: format!("b{}", b + 1),
            budget,
            bids,
        });
    }

    let mut sellers = Vec::new();
    for k in 0..config.num_items {
        let id = slot_id(k);
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        rng.set_stream((1u64 << 32) + k as u64);
        let demand = buyers
            .iter()
            .flat_map(|b| &b.bids)
            .filter(|bid| bid.bundle.contains(&id))
            .map(|bid| bid.value)
            .fold(0.0, f64::max);
        let reservation = cents(rng.gen_range(0.0..=1.0) * config.reservation_scale * demand);
        sellers.push(Seller {
            id: format!("s{}", k + 1),
            endowment: vec![id.clone()],
            asks: vec![PackageBid {
                bundle: vec![id],
                value: reservation,
            }],
        });
    }

    let mut metadata = BTreeMap::new();
    metadata.insert("generator".into(), "airport".into());
    metadata.insert("seed".into(), config.seed.into());
    metadata.insert("config".into(), serde_json::to_value(config)?);
    Ok(ExchangeInstance {
        items: (0..config.num_items).map(|k| Item::from(slot_id(k).as_str())).collect(),
        buyers,
        sellers,
        metadata,
    })
}
