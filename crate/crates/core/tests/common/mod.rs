//! Test-only oracles that share no code with the library's solvers.
#![allow(dead_code)]

use std::collections::BTreeMap;

use cex_core::model::{Buyer, ExchangeInstance, Item, Market, PackageBid, Seller, Trades};
use minilp::{ComparisonOp, OptimizationDirection, Problem};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// A tiny exchange: 2-3 items, 2-3 buyers with 1-3 integer-valued bids and
/// random (sometimes infinite) budgets, sellers owning one or two items
/// with asks on singletons and sometimes on their whole endowment.
pub fn tiny_instance(rng: &mut ChaCha8Rng) -> ExchangeInstance {
    let n_items = rng.gen_range(2..=3);
    let items: Vec<String> = (0..n_items).map(|i| format!("i{i}")).collect();
    let mut sellers = Vec::new();
    let mut rest = items.clone();
    rest.shuffle(rng);
    while !rest.is_empty() {
        let take = if rest.len() >= 2 && rng.gen_bool(0.3) { 2 } else { 1 };
        let endowment: Vec<String> = rest.drain(..take).collect();
        let mut asks: Vec<PackageBid> = endowment
            .iter()
            .map(|it| PackageBid {
                bundle: vec![it.clone()],
                value: rng.gen_range(0..=4) as f64,
            })
            .collect();
        if endowment.len() == 2 && rng.gen_bool(0.5) {
            asks.push(PackageBid {
                bundle: endowment.clone(),
                value: rng.gen_range(0..=6) as f64,
            });
        }
        sellers.push(Seller {
            id: format!("s{}", sellers.len() + 1),
            endowment,
            asks,
        });
    }
    let n_buyers = rng.gen_range(2..=3);
    let buyers = (0..n_buyers)
        .map(|b| {
            let n_bids = rng.gen_range(1..=3);
            let mut bids: Vec<PackageBid> = Vec::new();
            for _ in 0..n_bids {
                let mut bundle: Vec<String> =
                    items.iter().filter(|_| rng.gen_bool(0.5)).cloned().collect();
                if bundle.is_empty() {
                    bundle.push(items.choose(rng).unwrap().clone());
                }
                if bids.iter().any(|b| b.bundle == bundle) {
                    continue;
                }
                bids.push(PackageBid {
                    bundle,
                    value: rng.gen_range(1..=10) as f64,
                });
            }
            let budget = if rng.gen_bool(0.3) {
                f64::INFINITY
            } else {
                rng.gen_range(1..=8) as f64
            };
            Buyer {
                id: format!("b{}", b + 1),
                budget,
                bids,
            }
        })
        .collect();
    ExchangeInstance {
        items: items.iter().map(|i| Item::from(i.as_str())).collect(),
        buyers,
        sellers,
        metadata: BTreeMap::new(),
    }
}

/// Every feasible allocation among the given traders by plain enumeration:
/// each item goes to at most one winning bid and must be covered by its
/// owner's chosen ask; every chosen ask must hand over at least one
/// demanded item.
pub fn all_allocations(market: &Market, buyers: &[bool], sellers: &[bool]) -> Vec<Trades> {
    let nb = market.num_buyers();
    let ns = market.num_sellers();
    let mut choices: Vec<Vec<Option<usize>>> = Vec::new();
    for b in 0..nb {
        let mut c = vec![None];
        if buyers[b] {
            c.extend((0..market.bids[b].len()).map(Some));
        }
        choices.push(c);
    }
    for s in 0..ns {
        let mut c = vec![None];
        if sellers[s] {
            c.extend((0..market.asks[s].len()).map(Some));
        }
        choices.push(c);
    }
    let mut out = Vec::new();
    let mut idx = vec![0usize; nb + ns];
    loop {
        let t = Trades {
            buyer: (0..nb).map(|b| choices[b][idx[b]]).collect(),
            seller: (0..ns).map(|s| choices[nb + s][idx[nb + s]]).collect(),
        };
        if feasible(market, &t) {
            out.push(t);
        }
        let mut i = 0;
        loop {
            if i == idx.len() {
                return out;
            }
            idx[i] += 1;
            if idx[i] < choices[i].len() {
                break;
            }
            idx[i] = 0;
            i += 1;
        }
    }
}

fn feasible(market: &Market, t: &Trades) -> bool {
    let mut demanded = vec![0; market.num_items()];
    for (b, k) in t.buyer.iter().enumerate() {
        if let Some(k) = k {
            for &i in &market.bids[b][*k].items {
                demanded[i] += 1;
            }
        }
    }
    let mut offered = vec![false; market.num_items()];
    for (s, k) in t.seller.iter().enumerate() {
        if let Some(k) = k {
            let ask = &market.asks[s][*k].items;
            if !ask.iter().any(|&i| demanded[i] > 0) {
                return false;
            }
            for &i in ask {
                offered[i] = true;
            }
        }
    }
    demanded
        .iter()
        .zip(&offered)
        .all(|(&d, &o)| d == 0 || (d == 1 && o))
}

pub fn welfare(market: &Market, t: &Trades, capped: bool) -> f64 {
    let mut w = 0.0;
    for (b, k) in t.buyer.iter().enumerate() {
        if let Some(k) = k {
            let v = market.bids[b][*k].value;
            w += if capped { v.min(market.budgets[b]) } else { v };
        }
    }
    for (s, k) in t.seller.iter().enumerate() {
        if let Some(k) = k {
            w -= market.asks[s][*k].value;
        }
    }
    w
}

/// Largest `d` with `Σ min(B, v, v − π − d) ≥ Σ max(r, r + π + d)` and
/// `d ≤ min(v − π)`, located exactly among the breakpoints of the
/// piecewise-linear difference.
pub fn exact_max_min_improvement(
    values: &[f64],
    budgets: &[f64],
    reservations: &[f64],
    buyer_payoffs: &[f64],
    seller_payoffs: &[f64],
) -> f64 {
    let g = |d: f64| -> f64 {
        let mut s = 0.0;
        for i in 0..values.len() {
            s += budgets[i].min(values[i]).min(values[i] - buyer_payoffs[i] - d);
        }
        for j in 0..reservations.len() {
            s -= reservations[j].max(reservations[j] + seller_payoffs[j] + d);
        }
        s
    };
    let cap: f64 = budgets.iter().zip(values).map(|(b, v)| b.min(*v)).sum();
    if cap < reservations.iter().sum::<f64>() - 1e-12 {
        return f64::NEG_INFINITY;
    }
    let hi = values
        .iter()
        .zip(buyer_payoffs)
        .map(|(v, p)| v - p)
        .fold(f64::INFINITY, f64::min);
    let mut bps: Vec<f64> = Vec::new();
    for i in 0..values.len() {
        bps.push(values[i] - buyer_payoffs[i] - budgets[i].min(values[i]));
    }
    for p in seller_payoffs {
        bps.push(-p);
    }
    bps.retain(|d| d.is_finite() && *d < hi);
    bps.push(hi);
    bps.sort_by(f64::total_cmp);
    if g(hi) >= -1e-12 {
        return hi;
    }
    // g is non-increasing; find the segment where it crosses zero.
    let mut prev = bps[0] - 1.0 - cap.abs() - reservations.iter().sum::<f64>();
    let mut g_prev = g(prev);
    while g_prev < 0.0 {
        prev -= 1e3;
        g_prev = g(prev);
    }
    for &x in &bps {
        if x <= prev {
            continue;
        }
        let gx = g(x);
        // Rounding can leave a flat zero segment a hair below zero.
        if gx < -1e-12 {
            return prev + (x - prev) * g_prev / (g_prev - gx);
        }
        prev = x;
        g_prev = gx;
    }
    hi
}

/// Surplus `Σ min(B, v − π − ε) − Σ (r + π + ε)` of a deviation allocation.
pub fn deviation_surplus(market: &Market, dev: &Trades, pib: &[f64], pis: &[f64], eps: f64) -> f64 {
    let mut s = 0.0;
    for (b, k) in dev.buyer.iter().enumerate() {
        if let Some(k) = k {
            s += market.budgets[b].min(market.bids[b][*k].value - pib[b] - eps);
        }
    }
    for (j, k) in dev.seller.iter().enumerate() {
        if let Some(k) = k {
            s -= market.asks[j][*k].value + pis[j] + eps;
        }
    }
    s
}

/// Whether core prices exist for allocation `alpha` at level `eps`.
///
/// The only non-linearity, `min(B_i, v − π_i − ε)`, switches at the
/// thresholds `v − B_i − ε` of buyer `i`. Fixing for every winner an
/// interval of `π_i` between consecutive thresholds makes every deviation
/// constraint linear; prices exist iff one of these LPs is feasible.
pub fn core_prices_exist(market: &Market, alpha: &Trades, deviations: &[Trades], eps: f64) -> bool {
    let nb = market.num_buyers();
    let winners: Vec<usize> = (0..nb).filter(|&b| alpha.buyer[b].is_some()).collect();
    let mut intervals: Vec<Vec<(f64, f64)>> = Vec::new();
    for &b in &winners {
        let mut th: Vec<f64> = market.bids[b]
            .iter()
            .filter(|bid| market.budgets[b] < bid.value)
            .map(|bid| bid.value - market.budgets[b] - eps)
            .filter(|&t| t > 0.0)
            .collect();
        th.sort_by(f64::total_cmp);
        th.dedup();
        let mut cuts = vec![0.0];
        cuts.extend(th);
        cuts.push(f64::INFINITY);
        intervals.push(cuts.windows(2).map(|w| (w[0], w[1])).collect());
    }
    let mut choice = vec![0usize; winners.len()];
    loop {
        if regime_feasible(market, alpha, deviations, eps, &winners, &intervals, &choice) {
            return true;
        }
        let mut i = 0;
        loop {
            if i == choice.len() {
                return false;
            }
            choice[i] += 1;
            if choice[i] < intervals[i].len() {
                break;
            }
            choice[i] = 0;
            i += 1;
        }
    }
}

fn regime_feasible(
    market: &Market,
    alpha: &Trades,
    deviations: &[Trades],
    eps: f64,
    winners: &[usize],
    intervals: &[Vec<(f64, f64)>],
    choice: &[usize],
) -> bool {
    let nb = market.num_buyers();
    let ns = market.num_sellers();
    let mut lp = Problem::new(OptimizationDirection::Minimize);
    // Variables are payoffs: π_b for winners, π_s for sellers that trade.
    let mut pib = vec![None; nb];
    for (w, &b) in winners.iter().enumerate() {
        let v = market.bids[b][alpha.buyer[b].unwrap()].value;
        let cap = market.budgets[b].min(v);
        let (lo, hi) = intervals[w][choice[w]];
        // payment v − π in [0, min(B, v)]
        let lo = lo.max(v - cap);
        let hi = hi.min(v);
        if lo > hi + 1e-12 {
            return false;
        }
        pib[b] = Some(lp.add_var(0.0, (lo, hi)));
    }
    let mut pis = vec![None; ns];
    for s in 0..ns {
        if alpha.seller[s].is_some() {
            pis[s] = Some(lp.add_var(0.0, (0.0, f64::INFINITY)));
        }
    }
    // Budget balance: Σ (v − π_b) = Σ (r + π_s)
    let mut bb = Vec::new();
    let mut rhs = 0.0;
    for &b in winners {
        rhs -= market.bids[b][alpha.buyer[b].unwrap()].value;
        bb.push((pib[b].unwrap(), -1.0));
    }
    for s in 0..ns {
        if let Some(k) = alpha.seller[s] {
            rhs += market.asks[s][k].value;
            bb.push((pis[s].unwrap(), -1.0));
        }
    }
    lp.add_constraint(&bb, ComparisonOp::Eq, rhs);
    let regime = |b: usize| -> Option<(f64, f64)> {
        winners
            .iter()
            .position(|&w| w == b)
            .map(|w| intervals[w][choice[w]])
    };
    for dev in deviations {
        // Σ_i term_i − Σ_j π_j ≤ Σ_j (r_j + ε)
        let mut row: Vec<(minilp::Variable, f64)> = Vec::new();
        let mut rhs = 0.0;
        for (b, k) in dev.buyer.iter().enumerate() {
            let Some(k) = k else { continue };
            let v = market.bids[b][*k].value;
            let budget = market.budgets[b];
            match (pib[b], regime(b)) {
                (Some(p), Some((lo, hi))) => {
                    let theta = v - budget - eps;
                    if budget < v && hi <= theta + 1e-12 {
                        rhs -= budget;
                    } else if budget < v && lo < theta - 1e-12 {
                        unreachable!("intervals are split at every threshold");
                    } else {
                        rhs -= v - eps;
                        row.push((p, -1.0));
                    }
                }
                _ => rhs -= budget.min(v - eps),
            }
        }
        for (s, k) in dev.seller.iter().enumerate() {
            let Some(k) = k else { continue };
            rhs += market.asks[s][*k].value + eps;
            if let Some(p) = pis[s] {
                row.push((p, -1.0));
            }
        }
        lp.add_constraint(&row, ComparisonOp::Le, rhs);
    }
    lp.solve().is_ok()
}

/// Best core welfare by enumeration, or `None` if the (ε-)core is empty.
pub fn oracle_core_welfare(market: &Market, eps: f64) -> Option<f64> {
    let all_b = vec![true; market.num_buyers()];
    let all_s = vec![true; market.num_sellers()];
    let allocs = all_allocations(market, &all_b, &all_s);
    let devs: Vec<Trades> = allocs.iter().filter(|t| !t.is_empty()).cloned().collect();
    let mut ranked: Vec<(f64, &Trades)> = allocs.iter().map(|t| (welfare(market, t, false), t)).collect();
    ranked.sort_by(|a, b| b.0.total_cmp(&a.0));
    ranked
        .into_iter()
        .find(|(_, t)| core_prices_exist(market, t, &devs, eps))
        .map(|(w, _)| w)
}

/// A random feasible outcome: a random allocation, buyer payments drawn in
/// `[0, min(B, v)]` and the proceeds split so that each seller covers its
/// reservation.
pub fn random_outcome(market: &Market, rng: &mut ChaCha8Rng) -> (Trades, Vec<f64>, Vec<f64>) {
    let all_b = vec![true; market.num_buyers()];
    let all_s = vec![true; market.num_sellers()];
    let allocs = all_allocations(market, &all_b, &all_s);
    loop {
        let t = allocs.choose(rng).unwrap().clone();
        let mut bp = vec![0.0; market.num_buyers()];
        for (b, k) in t.buyer.iter().enumerate() {
            if let Some(k) = k {
                let cap = market.budgets[b].min(market.bids[b][*k].value);
                bp[b] = (rng.gen_range(0.0..=cap) * 4.0).round() / 4.0;
            }
        }
        let reserve: f64 = t
            .seller
            .iter()
            .enumerate()
            .filter_map(|(s, k)| k.map(|k| market.asks[s][k].value))
            .sum();
        let paid: f64 = bp.iter().sum();
        if paid < reserve {
            continue;
        }
        let sellers: Vec<usize> = (0..market.num_sellers()).filter(|&s| t.seller[s].is_some()).collect();
        let mut sp = vec![0.0; market.num_sellers()];
        if sellers.is_empty() {
            if paid > 0.0 {
                continue;
            }
            return (t, bp, sp);
        }
        let weights: Vec<f64> = sellers.iter().map(|_| rng.gen_range(0..=3) as f64).collect();
        let total: f64 = weights.iter().sum();
        for (i, &s) in sellers.iter().enumerate() {
            let share = if total > 0.0 {
                weights[i] / total
            } else {
                1.0 / sellers.len() as f64
            };
            sp[s] = market.asks[s][t.seller[s].unwrap()].value + share * (paid - reserve);
        }
        return (t, bp, sp);
    }
}

/// One seller owning everything, with an ask on every non-empty subset.
pub fn single_seller_instance(r: &mut ChaCha8Rng) -> ExchangeInstance {
    let n_items = r.gen_range(1..=3);
    let items: Vec<String> = (0..n_items).map(|i| format!("i{i}")).collect();
    let asks = (1u32..1 << n_items)
        .map(|m| PackageBid {
            bundle: (0..n_items).filter(|i| m >> i & 1 == 1).map(|i| items[i].clone()).collect(),
            value: if r.gen_bool(0.7) { 0.0 } else { r.gen_range(1..=3) as f64 },
        })
        .collect();
    let buyers = (0..r.gen_range(1..=4))
        .map(|b| {
            let mut bids: Vec<PackageBid> = Vec::new();
            for _ in 0..r.gen_range(1..=2) {
                let bundle: Vec<String> = items.iter().filter(|_| r.gen_bool(0.5)).cloned().collect();
                if bundle.is_empty() || bids.iter().any(|x| x.bundle == bundle) {
                    continue;
                }
                bids.push(PackageBid {
                    bundle,
                    value: r.gen_range(1..=10) as f64,
                });
            }
            Buyer {
                id: format!("b{b}"),
                budget: if r.gen_bool(0.3) { f64::INFINITY } else { r.gen_range(1..=8) as f64 },
                bids,
            }
        })
        .collect();
    ExchangeInstance {
        items: items.iter().map(|i| Item::from(i.as_str())).collect(),
        buyers,
        sellers: vec![Seller {
            id: "s".into(),
            endowment: items,
            asks,
        }],
        metadata: BTreeMap::new(),
    }
}

/// Total reservation of the sellers trading in `t`.
pub fn reservations(m: &Market, t: &Trades) -> f64 {
    t.seller
        .iter()
        .enumerate()
        .filter_map(|(s, k)| k.map(|k| m.asks[s][k].value))
        .sum()
}

/// Least-core level of a market with two buyers and two sellers, where
/// single-buyer allocations are the only candidates: minimize over a price
/// grid of width `step` the largest improvement any deviation can offer.
pub fn least_core_grid(m: &Market, step: f64) -> f64 {
    assert_eq!((m.num_buyers(), m.num_sellers()), (2, 2));
    let all_b = vec![true; 2];
    let all_s = vec![true; 2];
    let allocs = all_allocations(m, &all_b, &all_s);
    let devs: Vec<_> = allocs.iter().filter(|t| !t.is_empty()).cloned().collect();
    let mut best = f64::INFINITY;
    for alpha in &allocs {
        let winner = (0..2).find(|&b| alpha.buyer[b].is_some());
        let Some(b) = winner else { continue };
        let k = alpha.buyer[b].unwrap();
        let v = m.bids[b][k].value;
        let cap = v.min(m.budgets[b]);
        let sellers: Vec<usize> = (0..2).filter(|&s| alpha.seller[s].is_some()).collect();
        let np = (cap / step).round() as usize;
        for ip in 0..=np {
            let p = ip as f64 * step;
            let splits = if sellers.len() == 2 { ip } else { 0 };
            for ia in 0..=splits {
                let mut sp = [0.0; 2];
                if sellers.len() == 2 {
                    sp[sellers[0]] = ia as f64 * step;
                    sp[sellers[1]] = p - sp[sellers[0]];
                } else {
                    sp[sellers[0]] = p;
                }
                let mut pib = [0.0; 2];
                pib[b] = v - p;
                let mut worst = f64::NEG_INFINITY;
                for d in &devs {
                    let (mut vv, mut bb, mut rr, mut pb, mut ps) = (vec![], vec![], vec![], vec![], vec![]);
                    for i in 0..2 {
                        if let Some(k) = d.buyer[i] {
                            vv.push(m.bids[i][k].value);
                            bb.push(m.budgets[i]);
                            pb.push(pib[i]);
                        }
                        if let Some(k) = d.seller[i] {
                            rr.push(m.asks[i][k].value);
                            ps.push(sp[i]);
                        }
                    }
                    worst = worst.max(exact_max_min_improvement(&vv, &bb, &rr, &pb, &ps));
                }
                best = best.min(worst);
            }
        }
    }
    best
}
