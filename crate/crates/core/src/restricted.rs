//! Two restricted settings with simpler stability problems: auctions with a
//! single seller, where allocation and pricing decouple, and exchanges that
//! only guard against blocking buyer-seller pairs.

use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::blocking::{self, Payoffs, SeparationScope};
use crate::core_solver::Master;
use crate::milp::{Cmp, Engine, MilpModel, MilpSolution, MilpStatus, Sense, VarId};
use crate::model::{ExchangeInstance, Market, Outcome, Trades};
use crate::wdp::{add_allocation, lex_smallest, solved, AllocVars};
use crate::{Error, Result, EPS_FEAS};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub enum RestrictedStatus {
    Optimal,
    Infeasible,
    Timeout,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct SingleSidedResult {
    pub status: RestrictedStatus,
    /// Largest revenue reachable when every bid is capped by its budget.
    pub z_star: f64,
    pub outcome: Option<Outcome>,
    pub welfare: f64,
    /// Capped revenue of the chosen allocation.
    pub capped_revenue: f64,
    pub pricing_iterations: usize,
    /// Exhaustive coalition audit of the final outcome; `None` when the
    /// market is too large to enumerate.
    pub blocked_by_enumeration: Option<bool>,
    pub wall_time_ms: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct DyadicResult {
    pub status: RestrictedStatus,
    pub outcome: Option<Outcome>,
    pub welfare: f64,
    pub wall_time_ms: f64,
}

/// Largest number of bidders for the exhaustive audit of single-seller
/// outcomes.
pub const AUDIT_LIMIT: usize = 12;

/// Allocation binaries with their capped bid values and reservations.
fn allocation_model(market: &Market) -> (MilpModel, AllocVars, Vec<(VarId, f64)>, Vec<(VarId, f64)>) {
    let mut model = MilpModel::new(Sense::Maximize);
    let nb = market.num_buyers();
    let ns = market.num_sellers();
    let vars = add_allocation(&mut model, market, &vec![true; nb], &vec![true; ns], |b, k| {
        market.bids[b][k].value > 0.0
    });
    let mut capped = Vec::new();
    for (b, row) in vars.x.iter().enumerate() {
        for (k, v) in row.iter().enumerate() {
            if let Some(v) = v {
                capped.push((*v, market.capped(b, k)));
            }
        }
    }
    let mut reserve = Vec::new();
    for (s, row) in vars.y.iter().enumerate() {
        for (k, v) in row.iter().enumerate() {
            if let Some(v) = v {
                reserve.push((*v, market.asks[s][k].value));
            }
        }
    }
    (model, vars, capped, reserve)
}

fn status_of(sol: &MilpSolution) -> Option<RestrictedStatus> {
    match sol.status {
        MilpStatus::Optimal => None,
        MilpStatus::Infeasible => Some(RestrictedStatus::Infeasible),
        MilpStatus::Timeout => Some(RestrictedStatus::Timeout),
    }
}

/// Single-seller auction with budgets.
///
/// 1. Maximize the revenue obtainable from budget-capped bids, `z*`, with
///    the seller's reservation as a floor.
/// 2. Among allocations reaching `z*`, maximize welfare on uncapped values.
/// 3. Price that allocation: minimize total payments subject to every
///    deviation found by separation, breaking ties by the lexicographically
///    smallest payment vector.
pub fn solve_single_sided(inst: &ExchangeInstance, engine: &Engine) -> Result<SingleSidedResult> {
    let start = Instant::now();
    let market = Market::new(inst)?;
    if market.num_sellers() != 1 {
        return Err(Error::Precondition(format!(
            "a single-sided auction needs exactly one seller, found {}",
            market.num_sellers()
        )));
    }
    let mut result = SingleSidedResult {
        status: RestrictedStatus::Timeout,
        z_star: 0.0,
        outcome: None,
        welfare: 0.0,
        capped_revenue: 0.0,
        pricing_iterations: 0,
        blocked_by_enumeration: None,
        wall_time_ms: 0.0,
    };
    let finish = |mut r: SingleSidedResult| {
        r.wall_time_ms = start.elapsed().as_secs_f64() * 1e3;
        Ok(r)
    };

    let (mut model, vars, capped, reserve) = allocation_model(&market);
    let mut floor = capped.clone();
    floor.extend(reserve.iter().map(|&(v, r)| (v, -r)));
    model.add_constraint("reservation_floor", floor, Cmp::Ge, 0.0);
    for &(v, c) in &capped {
        model.set_objective(v, c);
    }
    let stage1 = engine.solve(&model)?;
    if let Some(s) = status_of(&stage1) {
        result.status = s;
        return finish(result);
    }
    let z_star = stage1.objective.unwrap_or(0.0);
    result.z_star = z_star;

    model.add_constraint("revenue", capped.clone(), Cmp::Ge, z_star - EPS_FEAS);
    model.objective = vec![0.0; model.num_vars()];
    for (b, row) in vars.x.iter().enumerate() {
        for (k, v) in row.iter().enumerate() {
            if let Some(v) = v {
                model.set_objective(*v, market.bids[b][k].value);
            }
        }
    }
    for &(v, r) in &reserve {
        model.set_objective(v, -r);
    }
    let stage2 = engine.solve(&model)?;
    if let Some(s) = status_of(&stage2) {
        result.status = s;
        return finish(result);
    }
    let stage2 = match lex_smallest(engine, &model, stage2, &vars.ordered(), 1e-7) {
        Ok(s) => s,
        Err(Error::Timeout) => return finish(result),
        Err(e) => return Err(e),
    };
    let t = vars.trades(&stage2);
    result.welfare = market.welfare(&t);
    result.capped_revenue = market.capped_welfare(&t) + reserve_of(&market, &t);

    match price_allocation(&market, &t, engine, &mut result.pricing_iterations) {
        Ok(Some((bp, sp))) => {
            let pi = Payoffs::of(&market, &t, &bp, &sp);
            if market.num_buyers() + market.num_sellers() <= AUDIT_LIMIT {
                let audit = blocking::scan_coalitions(&market, &pi, None, 0.0, engine)?;
                result.blocked_by_enumeration = Some(audit.blocked);
            }
            result.outcome = Some(market.outcome(&t, &bp, &sp));
            result.status = RestrictedStatus::Optimal;
        }
        Ok(None) => result.status = RestrictedStatus::Infeasible,
        Err(Error::Timeout) => {}
        Err(e) => return Err(e),
    }
    finish(result)
}

fn reserve_of(market: &Market, t: &Trades) -> f64 {
    t.seller
        .iter()
        .enumerate()
        .filter_map(|(s, k)| k.map(|k| market.asks[s][k].value))
        .sum()
}

/// Cheapest unblocked prices for a fixed allocation, or `None` if every
/// price vector is blocked.
fn price_allocation(
    market: &Market,
    t: &Trades,
    engine: &Engine,
    iterations: &mut usize,
) -> Result<Option<(Vec<f64>, Vec<f64>)>> {
    let mut master = Master::new(market, 0.0, 0.0, 0.0);
    master.price_only(t);
    let mut seen = Vec::new();
    let scope = SeparationScope::default();
    loop {
        *iterations += 1;
        let sol = engine.solve(&master.model)?;
        match sol.status {
            MilpStatus::Optimal => {}
            MilpStatus::Infeasible => return Ok(None),
            MilpStatus::Timeout => return Err(Error::Timeout),
        }
        let sol = lex_payments(engine, &master, sol)?;
        let (_, bp, sp) = master.extract(&sol);
        let pi = Payoffs::of(market, t, &bp, &sp);
        let report = blocking::separate_in(market, &pi, 0.0, &scope, engine)?;
        let Some(dev) = report.best_deviation else {
            return Ok(Some((bp, sp)));
        };
        let dt = dev.trades(market);
        if seen.contains(&dt) {
            return Err(Error::Numerical("pricing repeated a deviation".into()));
        }
        master.add_cut(market, &dt);
        seen.push(dt);
    }
}

/// Among minimum-total payment vectors, the lexicographically smallest.
fn lex_payments(engine: &Engine, master: &Master, sol: MilpSolution) -> Result<MilpSolution> {
    let total = sol.objective.unwrap_or(0.0);
    let mut model = master.model.clone();
    let all: Vec<_> = master.pay.iter().map(|&p| (p, 1.0)).collect();
    model.add_constraint("min_total", all, Cmp::Le, total + 1e-7);
    let mut best = sol;
    for &p in &master.pay {
        model.objective = vec![0.0; model.num_vars()];
        model.objective[p.0] = 1.0;
        let s = solved(engine.solve(&model)?)?;
        let v = s.value(p);
        model.vars[p.0].upper = model.vars[p.0].upper.min(v + 1e-9).max(model.vars[p.0].lower);
        best = s;
    }
    Ok(best)
}

/// Welfare-maximizing outcome that no buyer-seller pair can block: for
/// every buyer `i`, seller `j` and ask bundle `S` of `j`, either the seller's
/// current payoff plus reservation reaches the buyer's budget, or it reaches
/// what the buyer would gain from `S`.
pub fn solve_dyadic(inst: &ExchangeInstance, engine: &Engine) -> Result<DyadicResult> {
    let start = Instant::now();
    let market = Market::new(inst)?;
    let mut master = Master::new(&market, 0.0, 0.0, 0.0);
    let m = master.big_m;
    for i in 0..market.num_buyers() {
        let budget = market.budgets[i];
        for j in 0..market.num_sellers() {
            for (a, ask) in market.asks[j].iter().enumerate() {
                // Buyer's value for the ask bundle under free disposal.
                let v = market.bids[i]
                    .iter()
                    .filter(|b| b.items.iter().all(|x| ask.items.contains(x)))
                    .map(|b| b.value)
                    .fold(0.0, f64::max);
                let r = ask.value;
                if v <= r || budget <= r {
                    continue;
                }
                let mut imp = master.seller_payoff(&market, j);
                imp.extend(master.buyer_payoff(&market, i));
                if budget.is_finite() {
                    let delta = master.model.add_binary(format!("delta_{i}_{j}_{a}"));
                    let gamma = master.model.add_binary(format!("gamma_{i}_{j}_{a}"));
                    let mut bud = master.seller_payoff(&market, j);
                    bud.push((delta, -budget));
                    master
                        .model
                        .add_constraint(format!("block_b_{i}_{j}_{a}"), bud, Cmp::Ge, -r);
                    imp.push((gamma, m));
                    master.model.add_constraint(
                        format!("no_block_{i}_{j}_{a}"),
                        vec![(delta, 1.0), (gamma, -1.0)],
                        Cmp::Ge,
                        0.0,
                    );
                }
                master
                    .model
                    .add_constraint(format!("block_imp_{i}_{j}_{a}"), imp, Cmp::Ge, v - r);
            }
        }
    }
    let finish = |status, outcome, welfare| {
        Ok(DyadicResult {
            status,
            outcome,
            welfare,
            wall_time_ms: start.elapsed().as_secs_f64() * 1e3,
        })
    };
    let sol = engine.solve(&master.model)?;
    if let Some(s) = status_of(&sol) {
        return finish(s, None, 0.0);
    }
    let sol = match master.polish(engine, &sol) {
        Ok(Some(p)) => p,
        Ok(None) => sol,
        Err(Error::Timeout) => return finish(RestrictedStatus::Timeout, None, 0.0),
        Err(e) => return Err(e),
    };
    let (t, bp, sp) = master.extract(&sol);
    let welfare = market.welfare(&t);
    finish(RestrictedStatus::Optimal, Some(market.outcome(&t, &bp, &sp)), welfare)
}
