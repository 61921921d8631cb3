//! Blocking coalitions: separation, the per-coalition deviation program,
//! deviation prices, core membership and coalition pruning.
//!
//! A coalition blocks an outcome at level `ε` if it can reallocate its own
//! items and choose budget-feasible, individually rational, budget-balanced
//! transfers so that every member gains more than `ε` over its current
//! payoff. Members that do not trade in the deviation cannot gain, so a
//! blocking coalition is exactly the set of traders of its deviation. For a
//! fixed deviation allocation this is possible iff
//!
//! `Σ_i min(B_i, v_i − π_i − ε) − Σ_j (r_j + π_j + ε) > 0`,
//!
//! which turns separation over all coalitions into one set-packing problem.

use serde::{Deserialize, Serialize};

use crate::milp::{Cmp, Engine, MilpModel, MilpStatus, Sense};
use crate::model::{Coalition, Deviation, ExchangeInstance, Market, Outcome, Trades};
use crate::wdp::{add_allocation, max_welfare_value_in};
use crate::{Error, Result, EPS_BLOCK, EPS_FEAS};

/// Current payoff of every buyer and seller.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Payoffs {
    pub buyer: Vec<f64>,
    pub seller: Vec<f64>,
}

impl Payoffs {
    pub fn zero(market: &Market) -> Self {
        Payoffs {
            buyer: vec![0.0; market.num_buyers()],
            seller: vec![0.0; market.num_sellers()],
        }
    }

    pub fn of(market: &Market, t: &Trades, bp: &[f64], sp: &[f64]) -> Self {
        let (buyer, seller) = market.payoffs(t, bp, sp);
        Payoffs { buyer, seller }
    }

    /// Payoffs of a feasible id-based outcome.
    pub fn of_outcome(market: &Market, outcome: &Outcome) -> Result<Self> {
        let (t, bp, sp) = market.indexed(outcome)?;
        let errs = market.outcome_violations(&t, &bp, &sp);
        if !errs.is_empty() {
            return Err(Error::InvalidOutcome(errs));
        }
        Ok(Payoffs::of(market, &t, &bp, &sp))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct BlockReport {
    pub blocked: bool,
    pub best_deviation: Option<Deviation>,
    /// Coalition problems solved (1 for the joint separation problem).
    pub scanned_coalitions: u64,
    /// `None` means no size limit.
    pub max_coalition_size: Option<usize>,
    pub epsilon: f64,
    /// Optimal separation surplus (or best `d^C` for coalition scans).
    pub surplus: f64,
}

/// Largest `d` such that the given deviation allocation can improve every
/// trader by `d`: buyers pay at most `min(B_i, v_i, v_i − π_i − d)` and at
/// least 0, sellers receive at least `max(r_j, r_j + π_j + d)`, and
/// payments balance. Returns `-∞` if no non-negative budget-balanced
/// transfers exist at all.
pub fn max_min_improvement_for_allocation(
    values: &[f64],
    budgets: &[f64],
    reservations: &[f64],
    buyer_payoffs: &[f64],
    seller_payoffs: &[f64],
) -> f64 {
    let g = |d: f64| -> f64 {
        let pay: f64 = values
            .iter()
            .zip(budgets)
            .zip(buyer_payoffs)
            .map(|((&v, &b), &p)| b.min(v).min(v - p - d))
            .sum();
        let need: f64 = reservations
            .iter()
            .zip(seller_payoffs)
            .map(|(&r, &p)| r.max(r + p + d))
            .sum();
        pay - need
    };
    let capped: f64 = values.iter().zip(budgets).map(|(v, b)| v.min(*b)).sum();
    let reserved: f64 = reservations.iter().sum();
    if capped < reserved {
        return f64::NEG_INFINITY;
    }
    // Every buyer must be able to pay something non-negative.
    let mut hi = values
        .iter()
        .zip(buyer_payoffs)
        .map(|(v, p)| v - p)
        .fold(f64::INFINITY, f64::min);
    if hi.is_infinite() {
        if reservations.is_empty() {
            return f64::INFINITY;
        }
        // Sellers only: receipts must come from nowhere.
        return if reserved <= 0.0 {
            -seller_payoffs.iter().fold(0.0, |a: f64, &b| a.max(b))
        } else {
            f64::NEG_INFINITY
        };
    }
    if g(hi) >= 0.0 {
        return hi;
    }
    let max_seller = seller_payoffs.iter().fold(0.0, |a: f64, &b| a.max(b));
    let slack = values
        .iter()
        .zip(budgets)
        .zip(buyer_payoffs)
        .map(|((&v, &b), &p)| v - p - b.min(v))
        .fold(0.0, f64::min);
    let mut lo = (-max_seller).min(slack).min(hi) - 1.0;
    debug_assert!(g(lo) >= -1e-9);
    for _ in 0..200 {
        if hi - lo <= 1e-9 {
            break;
        }
        let mid = 0.5 * (lo + hi);
        if g(mid) >= 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    lo
}

/// Transfers for a deviation allocation with positive surplus `s`: with
/// `c_i = min(B_i, v_i − π_i − ε)` and
/// `d = min(s / (buyers + sellers + 1), min_i c_i)`, buyer `i` pays
/// `c_i − d`, seller `j` receives `r_j + π_j + ε + d` plus an equal share of
/// what is left. Returns `(buyer payments, seller receipts, d)`.
pub fn devise_prices(
    values: &[f64],
    budgets: &[f64],
    reservations: &[f64],
    buyer_payoffs: &[f64],
    seller_payoffs: &[f64],
    epsilon: f64,
) -> Result<(Vec<f64>, Vec<f64>, f64)> {
    let c: Vec<f64> = values
        .iter()
        .zip(budgets)
        .zip(buyer_payoffs)
        .map(|((&v, &b), &p)| b.min(v - p - epsilon))
        .collect();
    let base: Vec<f64> = reservations
        .iter()
        .zip(seller_payoffs)
        .map(|(&r, &p)| r + p + epsilon)
        .collect();
    let surplus = c.iter().sum::<f64>() - base.iter().sum::<f64>();
    if surplus <= 0.0 || c.iter().any(|&x| x <= 0.0) {
        return Err(Error::Precondition(format!(
            "deviation has no positive surplus ({surplus})"
        )));
    }
    let members = (c.len() + base.len() + 1) as f64;
    let d = c.iter().copied().fold(surplus / members, f64::min);
    let pay: Vec<f64> = c.iter().map(|&x| x - d).collect();
    let mut receive: Vec<f64> = base.iter().map(|&x| x + d).collect();
    if !receive.is_empty() {
        let left = pay.iter().sum::<f64>() - receive.iter().sum::<f64>();
        let share = left / receive.len() as f64;
        for r in &mut receive {
            *r += share;
        }
    }
    Ok((pay, receive, d))
}

/// Builds the deviation witness (coalition = traders of `t`) with devised
/// transfers and its actual smallest member improvement.
fn witness(market: &Market, t: &Trades, pi: &Payoffs, epsilon: f64) -> Result<Deviation> {
    let mut values = Vec::new();
    let mut budgets = Vec::new();
    let mut bpi = Vec::new();
    for (b, k) in t.buyer.iter().enumerate() {
        if let Some(k) = k {
            values.push(market.bids[b][*k].value);
            budgets.push(market.budgets[b]);
            bpi.push(pi.buyer[b]);
        }
    }
    let mut reservations = Vec::new();
    let mut spi = Vec::new();
    for (s, k) in t.seller.iter().enumerate() {
        if let Some(k) = k {
            reservations.push(market.asks[s][*k].value);
            spi.push(pi.seller[s]);
        }
    }
    let (pay, receive, _) = devise_prices(&values, &budgets, &reservations, &bpi, &spi, epsilon)?;
    let mut bp = vec![0.0; market.num_buyers()];
    let mut sp = vec![0.0; market.num_sellers()];
    let mut improvement = f64::INFINITY;
    for (slot, b) in (0..market.num_buyers()).filter(|&b| t.buyer[b].is_some()).enumerate() {
        bp[b] = pay[slot];
        improvement = improvement.min(values[slot] - pay[slot] - bpi[slot]);
    }
    for (slot, s) in (0..market.num_sellers()).filter(|&s| t.seller[s].is_some()).enumerate() {
        sp[s] = receive[slot];
        improvement = improvement.min(receive[slot] - reservations[slot] - spi[slot]);
    }
    Ok(Deviation::from_trades(market, t, (&bp, &sp), improvement))
}

/// Options of [`separate_in`].
#[derive(Debug, Clone, Default)]
pub struct SeparationScope<'a> {
    pub max_size: Option<usize>,
    /// Only these buyers/sellers may deviate.
    pub members: Option<(&'a [bool], &'a [bool])>,
}

/// Finds the deviation with the largest aggregate surplus over all
/// coalitions at once.
pub fn separate_in(
    market: &Market,
    pi: &Payoffs,
    epsilon: f64,
    scope: &SeparationScope<'_>,
    engine: &Engine,
) -> Result<BlockReport> {
    let all_b = vec![true; market.num_buyers()];
    let all_s = vec![true; market.num_sellers()];
    let (buyers, sellers) = scope.members.unwrap_or((&all_b, &all_s));
    let coef = |b: usize, k: usize| market.budgets[b].min(market.bids[b][k].value - pi.buyer[b] - epsilon);

    let mut model = MilpModel::new(Sense::Maximize);
    let vars = add_allocation(&mut model, market, buyers, sellers, |b, k| coef(b, k) > 0.0);
    for (b, row) in vars.x.iter().enumerate() {
        for (k, v) in row.iter().enumerate() {
            if let Some(v) = v {
                model.set_objective(*v, coef(b, k));
            }
        }
    }
    for (s, row) in vars.y.iter().enumerate() {
        for (k, v) in row.iter().enumerate() {
            if let Some(v) = v {
                model.set_objective(*v, -(market.asks[s][k].value + pi.seller[s] + epsilon));
            }
        }
    }
    if let Some(k) = scope.max_size {
        let terms: Vec<_> = vars.ordered().into_iter().map(|v| (v, 1.0)).collect();
        model.add_constraint("coalition_size", terms, Cmp::Le, k as f64);
    }

    let mut report = BlockReport {
        blocked: false,
        best_deviation: None,
        scanned_coalitions: 1,
        max_coalition_size: scope.max_size,
        epsilon,
        surplus: 0.0,
    };
    if model.num_vars() == 0 {
        return Ok(report);
    }
    let sol = engine.solve(&model)?;
    match sol.status {
        MilpStatus::Optimal => {}
        MilpStatus::Timeout => return Err(Error::Timeout),
        MilpStatus::Infeasible => {
            return Err(Error::Numerical("separation problem reported infeasible".into()))
        }
    }
    report.surplus = sol.objective.unwrap_or(0.0).max(0.0);
    if report.surplus > EPS_BLOCK {
        let t = vars.trades(&sol);
        report.blocked = true;
        report.best_deviation = Some(witness(market, &t, pi, epsilon)?);
    }
    Ok(report)
}

/// Checks an outcome against every coalition of at most `max_size`
/// members (all coalitions when `None`) at level `epsilon`.
pub fn separate(
    inst: &ExchangeInstance,
    outcome: &Outcome,
    max_size: Option<usize>,
    epsilon: f64,
    engine: &Engine,
) -> Result<BlockReport> {
    let market = Market::new(inst)?;
    let pi = Payoffs::of_outcome(&market, outcome)?;
    let scope = SeparationScope {
        max_size,
        members: None,
    };
    separate_in(&market, &pi, epsilon, &scope, engine)
}

/// Exact core (or n-core) membership of a feasible outcome.
pub fn membership_check(
    inst: &ExchangeInstance,
    outcome: &Outcome,
    max_size: Option<usize>,
    engine: &Engine,
) -> Result<BlockReport> {
    separate(inst, outcome, max_size, 0.0, engine)
}

/// The deviation program of one coalition: maximize the smallest payoff
/// improvement `d` over all members (non-traders gain `−π`) subject to
/// Supply/XOR on the coalition's items, budgets, individual rationality and
/// budget balance. Returns `d^C` and the optimal deviation.
pub fn lower_level_in(
    market: &Market,
    pi: &Payoffs,
    buyers: &[bool],
    sellers: &[bool],
    engine: &Engine,
) -> Result<(f64, Deviation)> {
    if !buyers.iter().chain(sellers).any(|&m| m) {
        return Err(Error::Precondition("coalition is empty".into()));
    }
    let mut model = MilpModel::new(Sense::Maximize);
    let vars = add_allocation(&mut model, market, buyers, sellers, |_, _| true);
    let m_pay = market.pay_bound();
    let max_pi = pi
        .buyer
        .iter()
        .chain(&pi.seller)
        .fold(0.0, |a: f64, &b| a.max(b));
    let d = model.add_continuous("d", -max_pi - 1.0, market.big_m());
    model.set_objective(d, 1.0);

    let mut pay_terms = Vec::new();
    let mut buyer_pay = vec![None; market.num_buyers()];
    for b in (0..market.num_buyers()).filter(|&b| buyers[b]) {
        let q = model.add_continuous(format!("q_b{b}"), 0.0, m_pay);
        buyer_pay[b] = Some(q);
        pay_terms.push((q, 1.0));
        let mut cap = vec![(q, 1.0)];
        let mut imp = vec![(d, 1.0), (q, 1.0)];
        for (k, v) in vars.x[b].iter().enumerate() {
            if let Some(v) = v {
                cap.push((*v, -market.capped(b, k)));
                imp.push((*v, -market.bids[b][k].value));
            }
        }
        model.add_constraint(format!("bc_{b}"), cap, Cmp::Le, 0.0);
        model.add_constraint(format!("imp_b{b}"), imp, Cmp::Le, -pi.buyer[b]);
    }
    let mut seller_receipt = vec![None; market.num_sellers()];
    for s in (0..market.num_sellers()).filter(|&s| sellers[s]) {
        let q = model.add_continuous(format!("q_s{s}"), 0.0, m_pay);
        seller_receipt[s] = Some(q);
        pay_terms.push((q, -1.0));
        let mut irs = vec![(q, 1.0)];
        let mut top = vec![(q, 1.0)];
        let mut imp = vec![(d, 1.0), (q, -1.0)];
        for (k, v) in vars.y[s].iter().enumerate() {
            if let Some(v) = v {
                let r = market.asks[s][k].value;
                irs.push((*v, -r));
                top.push((*v, -m_pay));
                imp.push((*v, r));
            }
        }
        model.add_constraint(format!("irs_{s}"), irs, Cmp::Ge, 0.0);
        model.add_constraint(format!("receipt_{s}"), top, Cmp::Le, 0.0);
        model.add_constraint(format!("imp_s{s}"), imp, Cmp::Le, -pi.seller[s]);
    }
    model.add_constraint("bb", pay_terms, Cmp::Eq, 0.0);

    let sol = engine.solve(&model)?;
    match sol.status {
        MilpStatus::Optimal => {}
        MilpStatus::Timeout => return Err(Error::Timeout),
        MilpStatus::Infeasible => {
            return Err(Error::Numerical("deviation program reported infeasible".into()))
        }
    }
    let t = vars.trades(&sol);
    let bp: Vec<f64> = buyer_pay
        .iter()
        .map(|q| q.map_or(0.0, |q| sol.value(q)))
        .collect();
    let sp: Vec<f64> = seller_receipt
        .iter()
        .map(|q| q.map_or(0.0, |q| sol.value(q)))
        .collect();
    let value = sol.value(d);
    let mut dev = Deviation::from_trades(market, &t, (&bp, &sp), value);
    dev.coalition = market.coalition(buyers, sellers);
    Ok((value, dev))
}

pub fn lower_level(
    inst: &ExchangeInstance,
    outcome: &Outcome,
    coalition: &Coalition,
    engine: &Engine,
) -> Result<(f64, Deviation)> {
    let market = Market::new(inst)?;
    let pi = Payoffs::of_outcome(&market, outcome)?;
    let (b, s) = market.masks(coalition)?;
    lower_level_in(&market, &pi, &b, &s, engine)
}

/// Every non-empty coalition of at most `max_size` members, buyers first,
/// in increasing bitmask order.
pub fn all_coalitions(market: &Market, max_size: Option<usize>) -> Result<Vec<(Vec<bool>, Vec<bool>)>> {
    let nb = market.num_buyers();
    let n = nb + market.num_sellers();
    if n > 20 {
        return Err(Error::TooLarge(format!(
            "{n} bidders are too many to enumerate coalitions"
        )));
    }
    let cap = max_size.unwrap_or(n);
    Ok((1u32..(1 << n))
        .filter(|m| (m.count_ones() as usize) <= cap)
        .map(|m| {
            let bit = |i: usize| (m >> i) & 1 == 1;
            ((0..nb).map(bit).collect(), (nb..n).map(bit).collect())
        })
        .collect())
}

/// Runs [`lower_level_in`] on every coalition of at most `max_size`
/// members; blocked iff some `d^C > epsilon + EPS_BLOCK`.
pub fn scan_coalitions(
    market: &Market,
    pi: &Payoffs,
    max_size: Option<usize>,
    epsilon: f64,
    engine: &Engine,
) -> Result<BlockReport> {
    let mut report = BlockReport {
        blocked: false,
        best_deviation: None,
        scanned_coalitions: 0,
        max_coalition_size: max_size,
        epsilon,
        surplus: f64::NEG_INFINITY,
    };
    for (b, s) in all_coalitions(market, max_size)? {
        report.scanned_coalitions += 1;
        let (d, dev) = lower_level_in(market, pi, &b, &s, engine)?;
        if d > report.surplus {
            report.surplus = d;
            if d > epsilon + EPS_BLOCK {
                report.blocked = true;
                report.best_deviation = Some(dev);
            }
        }
    }
    Ok(report)
}

/// Drops coalitions whose capped value is at most `EPS_FEAS`; such
/// coalitions cannot block any feasible outcome since payoffs are
/// non-negative.
pub fn prune_unblockable(
    market: &Market,
    coalitions: Vec<(Vec<bool>, Vec<bool>)>,
    engine: &Engine,
) -> Result<Vec<(Vec<bool>, Vec<bool>)>> {
    let mut kept = Vec::new();
    for (b, s) in coalitions {
        if max_welfare_value_in(market, &b, &s, true, engine)? > EPS_FEAS {
            kept.push((b, s));
        }
    }
    Ok(kept)
}
