//! Welfare-maximizing core outcomes by deviation-cut generation.
//!
//! The master problem maximizes welfare over allocations and personalized
//! payments subject to budgets, individual rationality, budget balance and
//! one cut per deviation found so far. Each master solution is separated
//! with [`blocking::separate_in`]; a blocking deviation becomes a new cut,
//! otherwise the master solution is a core outcome and, since every cut is
//! valid for every core outcome, a welfare-maximizing one.

use std::collections::BTreeSet;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use crate::blocking::{self, Payoffs, SeparationScope};
use crate::milp::{Cmp, Engine, MilpModel, MilpSolution, MilpStatus, Sense, VarId};
use crate::model::{Deviation, ExchangeInstance, Market, Outcome, Trades};
use crate::wdp::{add_allocation, max_welfare_in, max_welfare_value_in, AllocVars};
use crate::{Error, Result, EPS_FEAS};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub enum CoreStatus {
    CoreOutcome,
    CoreEmpty,
    Timeout,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub enum SeedStrategy {
    /// Start from an empty cut pool.
    #[default]
    None,
    /// Cuts for the `count` best coalitions of at most `max_size` members.
    Coalitions { max_size: usize, count: usize },
}

#[derive(Debug, Clone, Default)]
pub struct CoreOptions {
    /// Largest blocking coalition considered; `None` for the full core.
    pub max_coalition_size: Option<usize>,
    /// Every member of a blocking coalition must gain more than this.
    pub epsilon: f64,
    pub seeds: SeedStrategy,
    pub time_limit: Option<Duration>,
    /// Deviation allocations to cut from the start.
    pub initial_cuts: Vec<Trades>,
    /// If set, `epsilon` becomes a master variable in `[epsilon, upper]`
    /// penalized by `weight` in the objective: `(weight, upper)`.
    pub weighted_epsilon: Option<(f64, f64)>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct IterationRecord {
    pub iteration: usize,
    pub master_objective: f64,
    pub master_nodes: u64,
    pub separation_surplus: f64,
    pub cut_added: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct CoreResult {
    pub status: CoreStatus,
    /// The core outcome, or the last master solution on timeout.
    pub outcome: Option<Outcome>,
    pub welfare: f64,
    pub coalition_size_cap: Option<usize>,
    pub epsilon: f64,
    pub iterations: usize,
    pub cut_pool: Vec<Deviation>,
    pub trace: Vec<IterationRecord>,
    pub wall_time_ms: f64,
}

/// Per-buyer pieces of a deviation cut.
#[derive(Debug, Clone, PartialEq)]
pub struct CutTerm {
    pub buyer: usize,
    pub value: f64,
    /// Present when the budget can bind, i.e. `B_i < v_i`.
    pub budget: Option<f64>,
    pub t: VarId,
    pub selector: Option<VarId>,
}

/// The master-problem encoding of "this deviation does not make all its
/// members better off": `Σ_i t_i ≤ Σ_j (r_j + π_j + ε)` with
/// `t_i ≥ min(B_i, v_i − π_i − ε)` via one selector binary per buyer whose
/// budget can bind.
#[derive(Debug, Clone, PartialEq)]
pub struct MasterCut {
    pub trades: Trades,
    pub terms: Vec<CutTerm>,
    pub big_m: f64,
}

pub(crate) struct Master {
    pub model: MilpModel,
    pub vars: AllocVars,
    pub pay: Vec<VarId>,
    pub receipt: Vec<VarId>,
    pub eps: VarId,
    eps_hi: f64,
    pub big_m: f64,
    max_value: f64,
    cuts: usize,
}

impl Master {
    pub fn new(market: &Market, eps_lo: f64, eps_hi: f64, eps_weight: f64) -> Self {
        let mut model = MilpModel::new(Sense::Maximize);
        let nb = market.num_buyers();
        let ns = market.num_sellers();
        let vars = add_allocation(
            &mut model,
            market,
            &vec![true; nb],
            &vec![true; ns],
            |b, k| market.bids[b][k].value > 0.0,
        );
        let m_pay = market.pay_bound();
        let mut bb = Vec::new();
        let mut pay = Vec::new();
        for b in 0..nb {
            let top = market.max_value(b).min(market.budgets[b]);
            let p = model.add_continuous(format!("p_{b}"), 0.0, top);
            pay.push(p);
            bb.push((p, 1.0));
            let mut bc = vec![(p, 1.0)];
            for (k, v) in vars.x[b].iter().enumerate() {
                if let Some(v) = v {
                    model.set_objective(*v, market.bids[b][k].value);
                    bc.push((*v, -market.capped(b, k)));
                }
            }
            model.add_constraint(format!("bc_{b}"), bc, Cmp::Le, 0.0);
        }
        let mut receipt = Vec::new();
        for s in 0..ns {
            let q = model.add_continuous(format!("q_{s}"), 0.0, m_pay);
            receipt.push(q);
            bb.push((q, -1.0));
            let mut irs = vec![(q, 1.0)];
            let mut top = vec![(q, 1.0)];
            for (k, v) in vars.y[s].iter().enumerate() {
                if let Some(v) = v {
                    let r = market.asks[s][k].value;
                    model.set_objective(*v, -r);
                    irs.push((*v, -r));
                    top.push((*v, -m_pay));
                }
            }
            model.add_constraint(format!("irs_{s}"), irs, Cmp::Ge, 0.0);
            model.add_constraint(format!("receipt_{s}"), top, Cmp::Le, 0.0);
        }
        model.add_constraint("bb", bb, Cmp::Eq, 0.0);
        let eps = model.add_continuous("eps", eps_lo, eps_hi);
        model.set_objective(eps, -eps_weight);
        let max_value = (0..nb).map(|b| market.max_value(b)).fold(0.0, f64::max);
        Master {
            model,
            vars,
            pay,
            receipt,
            eps,
            eps_hi,
            big_m: market.big_m() + eps_hi,
            max_value,
            cuts: 0,
        }
    }

    /// `π_b` as linear terms over master variables.
    pub fn buyer_payoff(&self, market: &Market, b: usize) -> Vec<(VarId, f64)> {
        let mut terms = vec![(self.pay[b], -1.0)];
        for (k, v) in self.vars.x[b].iter().enumerate() {
            if let Some(v) = v {
                terms.push((*v, market.bids[b][k].value));
            }
        }
        terms
    }

    pub fn seller_payoff(&self, market: &Market, s: usize) -> Vec<(VarId, f64)> {
        let mut terms = vec![(self.receipt[s], 1.0)];
        for (k, v) in self.vars.y[s].iter().enumerate() {
            if let Some(v) = v {
                terms.push((*v, -market.asks[s][k].value));
            }
        }
        terms
    }

    pub fn add_cut(&mut self, market: &Market, dev: &Trades) -> MasterCut {
        let c = self.cuts;
        self.cuts += 1;
        let m = self.big_m;
        let t_bound = self.max_value + self.eps_hi + m;
        let mut cut_row = Vec::new();
        let mut rhs = 0.0;
        let mut terms = Vec::new();
        for (b, k) in dev.buyer.iter().enumerate() {
            let Some(k) = *k else { continue };
            let v = market.bids[b][k].value;
            let budget = market.budgets[b];
            let t = self.model.add_continuous(format!("t_{c}_{b}"), -t_bound, t_bound);
            cut_row.push((t, 1.0));
            // t + π_b + ε (+ M u) ≥ v
            let mut lower = vec![(t, 1.0), (self.eps, 1.0)];
            lower.extend(self.buyer_payoff(market, b));
            let selector = if budget < v {
                let u = self.model.add_binary(format!("u_{c}_{b}"));
                lower.push((u, m));
                self.model
                    .add_constraint(format!("cut{c}_budget_{b}"), vec![(t, 1.0), (u, -m)], Cmp::Ge, budget - m);
                Some(u)
            } else {
                None
            };
            self.model
                .add_constraint(format!("cut{c}_value_{b}"), lower, Cmp::Ge, v);
            terms.push(CutTerm {
                buyer: b,
                value: v,
                budget: (budget < v).then_some(budget),
                t,
                selector,
            });
        }
        for (s, k) in dev.seller.iter().enumerate() {
            let Some(k) = *k else { continue };
            rhs += market.asks[s][k].value;
            cut_row.push((self.eps, -1.0));
            for (v, coef) in self.seller_payoff(market, s) {
                cut_row.push((v, -coef));
            }
        }
        self.model
            .add_constraint(format!("cut{c}"), cut_row, Cmp::Le, rhs);
        MasterCut {
            trades: dev.clone(),
            terms,
            big_m: m,
        }
    }

    pub fn extract(&self, sol: &MilpSolution) -> (Trades, Vec<f64>, Vec<f64>) {
        let t = self.vars.trades(sol);
        let clean = |x: f64| if x.abs() < 1e-9 { 0.0 } else { x };
        let bp = self.pay.iter().map(|&p| clean(sol.value(p))).collect();
        let sp = self.receipt.iter().map(|&q| clean(sol.value(q))).collect();
        (t, bp, sp)
    }

    /// Pins the allocation to `t` and switches to minimizing total payments.
    pub fn price_only(&mut self, t: &Trades) {
        for (rows, chosen) in [(&self.vars.x, &t.buyer), (&self.vars.y, &t.seller)] {
            for (who, row) in rows.iter().enumerate() {
                for (k, v) in row.iter().enumerate() {
                    if let Some(v) = v {
                        let on = if chosen[who] == Some(k) { 1.0 } else { 0.0 };
                        self.model.vars[v.0].lower = on;
                        self.model.vars[v.0].upper = on;
                    }
                }
            }
        }
        self.model.sense = Sense::Minimize;
        self.model.objective = vec![0.0; self.model.num_vars()];
        for &p in &self.pay {
            self.model.objective[p.0] = 1.0;
        }
    }

    /// Cheapest prices for the allocation of `sol` under the current cuts.
    pub fn polish(&self, engine: &Engine, sol: &MilpSolution) -> Result<Option<MilpSolution>> {
        let mut model = self.model.clone();
        model.sense = Sense::Minimize;
        model.objective = vec![0.0; model.num_vars()];
        for &p in &self.pay {
            model.objective[p.0] = 1.0;
        }
        for v in self.vars.ordered() {
            let x = sol.value(v).round();
            model.vars[v.0].lower = x;
            model.vars[v.0].upper = x;
        }
        let e = sol.value(self.eps);
        model.vars[self.eps.0].lower = e;
        model.vars[self.eps.0].upper = e;
        let polished = engine.solve(&model)?;
        Ok(match polished.status {
            MilpStatus::Optimal => Some(polished),
            MilpStatus::Infeasible => None,
            MilpStatus::Timeout => return Err(Error::Timeout),
        })
    }
}

/// Builds the cut for one deviation allocation against a fresh master of
/// `market` (mainly for inspection and tests).
pub fn build_master_cut(market: &Market, deviation: &Trades, epsilon: f64) -> MasterCut {
    let mut master = Master::new(market, epsilon, epsilon, 0.0);
    master.add_cut(market, deviation)
}

/// Checks whether an outcome satisfies the cut of `deviation`, i.e.
/// `Σ_i min(B_i, v_i − π_i − ε) ≤ Σ_j (r_j + π_j + ε)` up to `EPS_FEAS`.
/// Returns the slack (positive when satisfied).
pub fn cut_slack(market: &Market, deviation: &Trades, pi: &Payoffs, epsilon: f64) -> f64 {
    let lhs: f64 = deviation
        .buyer
        .iter()
        .enumerate()
        .filter_map(|(b, k)| {
            k.map(|k| market.budgets[b].min(market.bids[b][k].value - pi.buyer[b] - epsilon))
        })
        .sum();
    let rhs: f64 = deviation
        .seller
        .iter()
        .enumerate()
        .filter_map(|(s, k)| k.map(|k| market.asks[s][k].value + pi.seller[s] + epsilon))
        .sum();
    rhs - lhs
}

/// Non-empty coalitions with at most `max_size` members, as index masks,
/// smallest first.
fn small_coalitions(nb: usize, ns: usize, max_size: usize) -> Vec<(Vec<bool>, Vec<bool>)> {
    fn rec(
        n: usize,
        start: usize,
        left: usize,
        cur: &mut Vec<usize>,
        out: &mut Vec<Vec<usize>>,
    ) {
        if left == 0 {
            out.push(cur.clone());
            return;
        }
        for i in start..n {
            cur.push(i);
            rec(n, i + 1, left - 1, cur, out);
            cur.pop();
        }
    }
    let n = nb + ns;
    let mut sets = Vec::new();
    for size in 1..=max_size.min(n) {
        rec(n, 0, size, &mut Vec::new(), &mut sets);
    }
    sets.into_iter()
        .map(|members| {
            let mut b = vec![false; nb];
            let mut s = vec![false; ns];
            for i in members {
                if i < nb {
                    b[i] = true;
                } else {
                    s[i - nb] = true;
                }
            }
            (b, s)
        })
        .collect()
}

/// Deviation allocations of promising small coalitions: all coalitions of at
/// most `max_size` members that survive pruning, ranked by their optimal
/// gains from trade times the Hamming distance of their optimal allocation
/// to the grand coalition's, then by gains from trade.
pub fn seed_cuts(
    market: &Market,
    max_size: usize,
    count: usize,
    engine: &Engine,
) -> Result<Vec<Trades>> {
    if count == 0 {
        return Ok(Vec::new());
    }
    let nb = market.num_buyers();
    let ns = market.num_sellers();
    let grand = max_welfare_in(market, &vec![true; nb], &vec![true; ns], false, engine)?;
    let mut ranked = Vec::new();
    for (b, s) in small_coalitions(nb, ns, max_size) {
        if max_welfare_value_in(market, &b, &s, true, engine)? <= EPS_FEAS {
            continue;
        }
        let w = max_welfare_in(market, &b, &s, false, engine)?;
        if w.trades.is_empty() {
            continue;
        }
        let dist = w.trades.hamming(&grand.trades, market) as f64;
        ranked.push((w.value * dist, w.value, w.trades));
    }
    ranked.sort_by(|a, b| b.0.total_cmp(&a.0).then(b.1.total_cmp(&a.1)));
    let mut seen = BTreeSet::new();
    Ok(ranked
        .into_iter()
        .map(|r| r.2)
        .filter(|t| seen.insert(t.clone()))
        .take(count)
        .collect())
}

/// Welfare-maximizing (ε-)core outcome of `market`, with blocking coalitions
/// limited to `opts.max_coalition_size` members.
pub fn solve_core_in(market: &Market, opts: &CoreOptions, engine: &Engine) -> Result<CoreResult> {
    let start = Instant::now();
    let engine = match opts.time_limit {
        Some(limit) => engine.clone().with_deadline(Some(start + limit)),
        None => engine.clone(),
    };
    let (eps_hi, weight) = match opts.weighted_epsilon {
        Some((w, hi)) => (hi.max(opts.epsilon), w),
        None => (opts.epsilon, 0.0),
    };
    let mut master = Master::new(market, opts.epsilon, eps_hi, weight);
    let mut result = CoreResult {
        status: CoreStatus::Timeout,
        outcome: None,
        welfare: 0.0,
        coalition_size_cap: opts.max_coalition_size,
        epsilon: opts.epsilon,
        iterations: 0,
        cut_pool: Vec::new(),
        trace: Vec::new(),
        wall_time_ms: 0.0,
    };
    let finish = |mut r: CoreResult| {
        r.wall_time_ms = start.elapsed().as_secs_f64() * 1e3;
        Ok(r)
    };

    let mut fingerprints: BTreeSet<Trades> = BTreeSet::new();
    let seeds = match opts.seeds {
        SeedStrategy::None => Vec::new(),
        SeedStrategy::Coalitions { max_size, count } => {
            match seed_cuts(market, max_size, count, &engine) {
                Ok(s) => s,
                Err(Error::Timeout) => return finish(result),
                Err(e) => return Err(e),
            }
        }
    };
    for t in opts.initial_cuts.iter().chain(&seeds) {
        if let Some(max) = opts.max_coalition_size {
            let (b, s) = t.traders();
            if b.iter().chain(&s).filter(|&&x| x).count() > max {
                continue;
            }
        }
        if fingerprints.insert(t.clone()) {
            master.add_cut(market, t);
            // Seeded cuts carry no prices; they were not found by separation.
            result.cut_pool.push(Deviation::from_trades(
                market,
                t,
                (&vec![0.0; market.num_buyers()], &vec![0.0; market.num_sellers()]),
                0.0,
            ));
        }
    }

    let scope = SeparationScope {
        max_size: opts.max_coalition_size,
        members: None,
    };
    loop {
        if engine.expired() {
            return finish(result);
        }
        result.iterations += 1;
        let sol = engine.solve(&master.model)?;
        match sol.status {
            MilpStatus::Optimal => {}
            MilpStatus::Infeasible => {
                result.status = CoreStatus::CoreEmpty;
                result.outcome = None;
                result.welfare = 0.0;
                return finish(result);
            }
            MilpStatus::Timeout => return finish(result),
        }
        let sol = match master.polish(&engine, &sol) {
            Ok(Some(p)) => p,
            Ok(None) => sol,
            Err(Error::Timeout) => return finish(result),
            Err(e) => return Err(e),
        };
        let (t, bp, sp) = master.extract(&sol);
        let eps = sol.value(master.eps);
        let welfare = market.welfare(&t);
        result.outcome = Some(market.outcome(&t, &bp, &sp));
        result.welfare = welfare;
        result.epsilon = eps;

        let pi = Payoffs::of(market, &t, &bp, &sp);
        let report = match blocking::separate_in(market, &pi, eps, &scope, &engine) {
            Ok(r) => r,
            Err(Error::Timeout) => return finish(result),
            Err(e) => return Err(e),
        };
        let mut record = IterationRecord {
            iteration: result.iterations,
            master_objective: welfare - weight * eps,
            master_nodes: sol.nodes,
            separation_surplus: report.surplus,
            cut_added: false,
        };
        let Some(dev) = report.best_deviation else {
            result.trace.push(record);
            result.status = CoreStatus::CoreOutcome;
            return finish(result);
        };
        let dt = dev.trades(market);
        if !fingerprints.insert(dt.clone()) {
            return Err(Error::Numerical(format!(
                "separation repeated an already cut deviation of {:?}",
                dev.coalition
            )));
        }
        master.add_cut(market, &dt);
        record.cut_added = true;
        result.trace.push(record);
        result.cut_pool.push(dev);
    }
}

pub fn solve_core(inst: &ExchangeInstance, opts: &CoreOptions, engine: &Engine) -> Result<CoreResult> {
    let market = Market::new(inst)?;
    solve_core_in(&market, opts, engine)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct LeastCore {
    /// Smallest ε (within the requested tolerance) whose ε-core is non-empty.
    pub delta: f64,
    pub result: CoreResult,
    /// Every ε tried with its verdict.
    pub probes: Vec<(f64, CoreStatus)>,
}

/// Least core by bisection on ε: the smallest level at which some outcome
/// leaves no coalition able to improve every member by more than ε, and the
/// welfare-maximizing outcome at that level.
pub fn least_core_in(
    market: &Market,
    max_coalition_size: Option<usize>,
    tolerance: f64,
    time_limit: Option<Duration>,
    engine: &Engine,
) -> Result<LeastCore> {
    let start = Instant::now();
    let engine = match time_limit {
        Some(limit) => engine.clone().with_deadline(Some(start + limit)),
        None => engine.clone(),
    };
    let mut known: Vec<Trades> = Vec::new();
    let mut probes = Vec::new();
    let mut probe = |eps: f64, known: &mut Vec<Trades>| -> Result<CoreResult> {
        let opts = CoreOptions {
            max_coalition_size,
            epsilon: eps,
            initial_cuts: known.clone(),
            ..CoreOptions::default()
        };
        let r = solve_core_in(market, &opts, &engine)?;
        for d in &r.cut_pool {
            let t = d.trades(market);
            if !known.contains(&t) {
                known.push(t);
            }
        }
        probes.push((eps, r.status));
        Ok(r)
    };

    let at_zero = probe(0.0, &mut known)?;
    match at_zero.status {
        CoreStatus::CoreOutcome => {
            return Ok(LeastCore {
                delta: 0.0,
                result: at_zero,
                probes,
            })
        }
        CoreStatus::Timeout => {
            return Ok(LeastCore {
                delta: f64::NAN,
                result: at_zero,
                probes,
            })
        }
        CoreStatus::CoreEmpty => {}
    }
    let mut lo = 0.0;
    let mut hi: f64 = (0..market.num_buyers())
        .map(|b| market.max_value(b).min(market.budgets[b]))
        .sum::<f64>()
        .max(tolerance);
    let mut best = probe(hi, &mut known)?;
    if best.status != CoreStatus::CoreOutcome {
        return Ok(LeastCore {
            delta: f64::NAN,
            result: best,
            probes,
        });
    }
    while hi - lo > tolerance {
        let mid = 0.5 * (lo + hi);
        let r = probe(mid, &mut known)?;
        match r.status {
            CoreStatus::CoreOutcome => {
                hi = mid;
                best = r;
            }
            CoreStatus::CoreEmpty => lo = mid,
            CoreStatus::Timeout => {
                return Ok(LeastCore {
                    delta: f64::NAN,
                    result: r,
                    probes,
                })
            }
        }
    }
    Ok(LeastCore {
        delta: hi,
        result: best,
        probes,
    })
}

pub fn least_core(
    inst: &ExchangeInstance,
    max_coalition_size: Option<usize>,
    tolerance: f64,
    time_limit: Option<Duration>,
    engine: &Engine,
) -> Result<LeastCore> {
    let market = Market::new(inst)?;
    least_core_in(&market, max_coalition_size, tolerance, time_limit, engine)
}
