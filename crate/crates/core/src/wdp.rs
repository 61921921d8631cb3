//! Winner determination: maximum gains from trade with true values (P) or
//! budget-capped values (B), for the whole market or any coalition.
//!
//! Allocations never include idle sales: every sold ask shares at least one
//! item with a bought bundle.

use serde::{Deserialize, Serialize};

use crate::milp::{Cmp, Engine, MilpModel, MilpSolution, MilpStatus, Sense, VarId};
use crate::model::{Coalition, ExchangeInstance, Market, Trades};
use crate::{Error, Result, EPS_FEAS};

/// Optima with a witness allocation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Welfare {
    pub value: f64,
    pub trades: Trades,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct CoalitionValue {
    pub coalition: Coalition,
    #[serde(rename = "wP")]
    pub w_p: f64,
    #[serde(rename = "wB")]
    pub w_b: f64,
    pub alloc_p: Trades,
    pub alloc_b: Trades,
}

/// Allocation variables of a coalition inside some larger model.
#[derive(Debug, Clone)]
pub(crate) struct AllocVars {
    pub x: Vec<Vec<Option<VarId>>>,
    pub y: Vec<Vec<Option<VarId>>>,
}

impl AllocVars {
    pub fn trades(&self, sol: &MilpSolution) -> Trades {
        let pick = |vars: &Vec<Vec<Option<VarId>>>| -> Vec<Option<usize>> {
            vars.iter()
                .map(|row| row.iter().position(|v| v.is_some_and(|v| sol.is_one(v))))
                .collect()
        };
        Trades {
            buyer: pick(&self.x),
            seller: pick(&self.y),
        }
    }

    /// All binaries, buyers' bids first, in (bidder, index) order.
    pub fn ordered(&self) -> Vec<VarId> {
        self.x
            .iter()
            .chain(&self.y)
            .flat_map(|row| row.iter().flatten().copied())
            .collect()
    }
}

/// Adds bid/ask binaries for coalition members plus XOR, Supply and the
/// no-idle-sale rows. Bids rejected by `keep_bid` get no variable.
pub(crate) fn add_allocation(
    model: &mut MilpModel,
    market: &Market,
    buyers: &[bool],
    sellers: &[bool],
    keep_bid: impl Fn(usize, usize) -> bool,
) -> AllocVars {
    let mut offered = vec![false; market.num_items()];
    for (s, asks) in market.asks.iter().enumerate() {
        if sellers[s] {
            for a in asks {
                for &i in &a.items {
                    offered[i] = true;
                }
            }
        }
    }
    let mut demanded = vec![false; market.num_items()];
    let x: Vec<Vec<Option<VarId>>> = market
        .bids
        .iter()
        .enumerate()
        .map(|(b, bids)| {
            bids.iter()
                .enumerate()
                .map(|(k, bid)| {
                    let usable = buyers[b]
                        && keep_bid(b, k)
                        && bid.items.iter().all(|&i| offered[i]);
                    usable.then(|| {
                        for &i in &bid.items {
                            demanded[i] = true;
                        }
                        model.add_binary(format!("x_{b}_{k}"))
                    })
                })
                .collect()
        })
        .collect();
    let y: Vec<Vec<Option<VarId>>> = market
        .asks
        .iter()
        .enumerate()
        .map(|(s, asks)| {
            asks.iter()
                .enumerate()
                .map(|(k, ask)| {
                    let usable = sellers[s] && ask.items.iter().any(|&i| demanded[i]);
                    usable.then(|| model.add_binary(format!("y_{s}_{k}")))
                })
                .collect()
        })
        .collect();

    for (side, vars) in [("xor_b", &x), ("xor_s", &y)] {
        for (who, row) in vars.iter().enumerate() {
            let terms: Vec<_> = row.iter().flatten().map(|&v| (v, 1.0)).collect();
            if terms.len() > 1 {
                model.add_constraint(format!("{side}_{who}"), terms, Cmp::Le, 1.0);
            }
        }
    }
    for item in 0..market.num_items() {
        let mut terms = Vec::new();
        for (b, bids) in market.bids.iter().enumerate() {
            for (k, bid) in bids.iter().enumerate() {
                if let Some(v) = x[b][k] {
                    if bid.items.contains(&item) {
                        terms.push((v, 1.0));
                    }
                }
            }
        }
        if terms.is_empty() {
            continue;
        }
        for (s, asks) in market.asks.iter().enumerate() {
            for (k, ask) in asks.iter().enumerate() {
                if let Some(v) = y[s][k] {
                    if ask.items.contains(&item) {
                        terms.push((v, -1.0));
                    }
                }
            }
        }
        model.add_constraint(format!("supply_{item}"), terms, Cmp::Le, 0.0);
    }
    for (s, asks) in market.asks.iter().enumerate() {
        for (k, ask) in asks.iter().enumerate() {
            let Some(v) = y[s][k] else { continue };
            let mut terms = vec![(v, 1.0)];
            for (b, bids) in market.bids.iter().enumerate() {
                for (kb, bid) in bids.iter().enumerate() {
                    if let Some(xv) = x[b][kb] {
                        if bid.items.iter().any(|i| ask.items.contains(i)) {
                            terms.push((xv, -1.0));
                        }
                    }
                }
            }
            model.add_constraint(format!("no_idle_{s}_{k}"), terms, Cmp::Le, 0.0);
        }
    }
    AllocVars { x, y }
}

pub(crate) fn solved(sol: MilpSolution) -> Result<MilpSolution> {
    match sol.status {
        MilpStatus::Optimal => Ok(sol),
        MilpStatus::Timeout => Err(Error::Timeout),
        MilpStatus::Infeasible => Err(Error::Numerical(
            "winner determination reported infeasible".into(),
        )),
    }
}

/// Among allocations within `tol` of the optimum of `model`, the one whose
/// `order`ed incidence vector is lexicographically smallest.
pub(crate) fn lex_smallest(
    engine: &Engine,
    model: &MilpModel,
    mut sol: MilpSolution,
    order: &[VarId],
    tol: f64,
) -> Result<MilpSolution> {
    let best = sol.objective.unwrap_or(0.0);
    let mut fixed = model.clone();
    let terms: Vec<_> = model
        .objective
        .iter()
        .enumerate()
        .filter(|(_, &c)| c != 0.0)
        .map(|(j, &c)| (VarId(j), c))
        .collect();
    let (cmp, rhs) = match model.sense {
        Sense::Maximize => (Cmp::Ge, best - tol),
        Sense::Minimize => (Cmp::Le, best + tol),
    };
    fixed.add_constraint("near_optimal", terms, cmp, rhs);
    for &v in order {
        if !sol.is_one(v) {
            fixed.vars[v.0].upper = 0.0;
            continue;
        }
        let mut trial = fixed.clone();
        trial.vars[v.0].upper = 0.0;
        let alt = engine.solve(&trial)?;
        match alt.status {
            MilpStatus::Optimal => {
                fixed = trial;
                sol = alt;
            }
            MilpStatus::Infeasible => fixed.vars[v.0].lower = 1.0,
            MilpStatus::Timeout => return Err(Error::Timeout),
        }
    }
    Ok(sol)
}

/// Maximum gains from trade among coalition members given as masks.
pub fn max_welfare_in(
    market: &Market,
    buyers: &[bool],
    sellers: &[bool],
    capped: bool,
    engine: &Engine,
) -> Result<Welfare> {
    solve_wdp(market, buyers, sellers, capped, engine, true)
}

/// Like [`max_welfare_in`] but with whatever optimal witness the solver
/// finds first.
pub fn max_welfare_value_in(
    market: &Market,
    buyers: &[bool],
    sellers: &[bool],
    capped: bool,
    engine: &Engine,
) -> Result<f64> {
    Ok(solve_wdp(market, buyers, sellers, capped, engine, false)?.value)
}

fn solve_wdp(
    market: &Market,
    buyers: &[bool],
    sellers: &[bool],
    capped: bool,
    engine: &Engine,
    tie_break: bool,
) -> Result<Welfare> {
    let mut model = MilpModel::new(Sense::Maximize);
    let value = |b: usize, k: usize| {
        if capped {
            market.capped(b, k)
        } else {
            market.bids[b][k].value
        }
    };
    let vars = add_allocation(&mut model, market, buyers, sellers, |b, k| value(b, k) > 0.0);
    for (b, row) in vars.x.iter().enumerate() {
        for (k, v) in row.iter().enumerate() {
            if let Some(v) = v {
                model.set_objective(*v, value(b, k));
            }
        }
    }
    for (s, row) in vars.y.iter().enumerate() {
        for (k, v) in row.iter().enumerate() {
            if let Some(v) = v {
                model.set_objective(*v, -market.asks[s][k].value);
            }
        }
    }
    if model.num_vars() == 0 {
        return Ok(Welfare {
            value: 0.0,
            trades: Trades::none(market.num_buyers(), market.num_sellers()),
        });
    }
    let sol = solved(engine.solve(&model)?)?;
    let sol = if tie_break {
        lex_smallest(engine, &model, sol, &vars.ordered(), 1e-7)?
    } else {
        sol
    };
    let trades = vars.trades(&sol);
    let value = if capped {
        market.capped_welfare(&trades)
    } else {
        market.welfare(&trades)
    };
    Ok(Welfare { value, trades })
}

/// Maximum gains from trade of a coalition (the grand coalition for the
/// whole market); `capped` replaces every bid value by `min(budget, value)`.
pub fn max_welfare(
    inst: &ExchangeInstance,
    coalition: &Coalition,
    capped: bool,
    engine: &Engine,
) -> Result<Welfare> {
    let market = Market::new(inst)?;
    let (b, s) = market.masks(coalition)?;
    max_welfare_in(&market, &b, &s, capped, engine)
}

pub fn coalition_value_in(
    market: &Market,
    buyers: &[bool],
    sellers: &[bool],
    engine: &Engine,
) -> Result<CoalitionValue> {
    let p = max_welfare_in(market, buyers, sellers, false, engine)?;
    let b = max_welfare_in(market, buyers, sellers, true, engine)?;
    Ok(CoalitionValue {
        coalition: market.coalition(buyers, sellers),
        w_p: p.value,
        w_b: b.value,
        alloc_p: p.trades,
        alloc_b: b.trades,
    })
}

/// Capped value of the (P)-optimal allocation α and of the (B)-optimal
/// allocation β, and whether `w_B(α) <= w_B(β)` holds.
pub fn capped_value_inequality_check(
    inst: &ExchangeInstance,
    coalition: &Coalition,
    engine: &Engine,
) -> Result<(f64, f64, bool)> {
    let market = Market::new(inst)?;
    let (b, s) = market.masks(coalition)?;
    let v = coalition_value_in(&market, &b, &s, engine)?;
    let wb_alpha = market.capped_welfare(&v.alloc_p);
    Ok((wb_alpha, v.w_b, wb_alpha <= v.w_b + EPS_FEAS))
}

/// Upper bound on the number of bids plus asks [`enumerate_allocations`]
/// accepts.
pub const ENUMERATION_LIMIT: usize = 20;

/// Every allocation of the coalition that satisfies XOR and Supply and has
/// no idle sales, each exactly once, in a fixed order.
pub fn enumerate_allocations_in(
    market: &Market,
    buyers: &[bool],
    sellers: &[bool],
) -> Result<Vec<Trades>> {
    let count: usize = (0..market.num_buyers())
        .filter(|&b| buyers[b])
        .map(|b| market.bids[b].len())
        .chain(
            (0..market.num_sellers())
                .filter(|&s| sellers[s])
                .map(|s| market.asks[s].len()),
        )
        .sum();
    if count > ENUMERATION_LIMIT {
        return Err(Error::TooLarge(format!(
            "coalition has {count} bids and asks; enumeration is limited to {ENUMERATION_LIMIT}"
        )));
    }
    let mut out = Vec::new();
    let mut t = Trades::none(market.num_buyers(), market.num_sellers());
    let mut demand = vec![0i32; market.num_items()];
    enumerate_buyers(market, buyers, sellers, 0, &mut t, &mut demand, &mut out);
    Ok(out)
}

fn enumerate_buyers(
    market: &Market,
    buyers: &[bool],
    sellers: &[bool],
    b: usize,
    t: &mut Trades,
    demand: &mut Vec<i32>,
    out: &mut Vec<Trades>,
) {
    if b == market.num_buyers() {
        let mut supply = vec![0i32; market.num_items()];
        enumerate_sellers(market, sellers, 0, t, demand, &mut supply, out);
        return;
    }
    enumerate_buyers(market, buyers, sellers, b + 1, t, demand, out);
    if !buyers[b] {
        return;
    }
    for k in 0..market.bids[b].len() {
        let items = &market.bids[b][k].items;
        if items.iter().any(|&i| !sellers[market.owner[i]]) {
            continue;
        }
        for &i in items {
            demand[i] += 1;
        }
        t.buyer[b] = Some(k);
        enumerate_buyers(market, buyers, sellers, b + 1, t, demand, out);
        t.buyer[b] = None;
        for &i in items {
            demand[i] -= 1;
        }
    }
}

fn enumerate_sellers(
    market: &Market,
    sellers: &[bool],
    s: usize,
    t: &mut Trades,
    demand: &[i32],
    supply: &mut Vec<i32>,
    out: &mut Vec<Trades>,
) {
    if s == market.num_sellers() {
        if demand.iter().zip(supply.iter()).all(|(d, s)| d <= s) {
            out.push(t.clone());
        }
        return;
    }
    enumerate_sellers(market, sellers, s + 1, t, demand, supply, out);
    if !sellers[s] {
        return;
    }
    for k in 0..market.asks[s].len() {
        let items = &market.asks[s][k].items;
        if !items.iter().any(|&i| demand[i] > 0) {
            continue;
        }
        for &i in items {
            supply[i] += 1;
        }
        t.seller[s] = Some(k);
        enumerate_sellers(market, sellers, s + 1, t, demand, supply, out);
        t.seller[s] = None;
        for &i in items {
            supply[i] -= 1;
        }
    }
}

pub fn enumerate_allocations(inst: &ExchangeInstance, coalition: &Coalition) -> Result<Vec<Trades>> {
    let market = Market::new(inst)?;
    let (b, s) = market.masks(coalition)?;
    enumerate_allocations_in(&market, &b, &s)
}
