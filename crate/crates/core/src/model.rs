//! Exchanges, outcomes, coalitions and deviations.
//!
//! [`ExchangeInstance`] is the serialized, id-based form. Solvers work on a
//! [`Market`], an index-based view built once per instance after validation.

use std::collections::{BTreeMap, BTreeSet, HashSet};

use serde::{Deserialize, Serialize};

use crate::{Error, Result, EPS_FEAS};

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Item {
    pub id: String,
}

impl From<&str> for Item {
    fn from(id: &str) -> Self {
        Item { id: id.to_string() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PackageBid {
    pub bundle: Vec<String>,
    pub value: f64,
}

impl PackageBid {
    pub fn new(bundle: &[&str], value: f64) -> Self {
        PackageBid {
            bundle: bundle.iter().map(|s| s.to_string()).collect(),
            value,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Buyer {
    pub id: String,
    /// `f64::INFINITY` for an unconstrained buyer (`null` in JSON).
    #[serde(with = "budget_json")]
    pub budget: f64,
    pub bids: Vec<PackageBid>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Seller {
    pub id: String,
    pub endowment: Vec<String>,
    /// Ask values are reservation prices.
    pub asks: Vec<PackageBid>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct ExchangeInstance {
    pub items: Vec<Item>,
    pub buyers: Vec<Buyer>,
    pub sellers: Vec<Seller>,
    #[serde(default)]
    pub metadata: BTreeMap<String, serde_json::Value>,
}

mod budget_json {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(b: &f64, s: S) -> Result<S::Ok, S::Error> {
        if b.is_infinite() && *b > 0.0 {
            s.serialize_none()
        } else {
            s.serialize_f64(*b)
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        Ok(Option::<f64>::deserialize(d)?.unwrap_or(f64::INFINITY))
    }
}

impl ExchangeInstance {
    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("instances always serialize")
    }

    /// Copy with every budget removed.
    pub fn without_budgets(&self) -> Self {
        let mut inst = self.clone();
        for b in &mut inst.buyers {
            b.budget = f64::INFINITY;
        }
        inst
    }

    /// All violated invariants; empty iff the instance is well formed.
    pub fn validate(&self) -> Vec<String> {
        let mut errs = Vec::new();
        let mut items = HashSet::new();
        for item in &self.items {
            if item.id.is_empty() {
                errs.push("item with empty id".to_string());
            } else if !items.insert(item.id.as_str()) {
                errs.push(format!("duplicate item id \"{}\"", item.id));
            }
        }

        let mut ids = HashSet::new();
        for id in self
            .buyers
            .iter()
            .map(|b| &b.id)
            .chain(self.sellers.iter().map(|s| &s.id))
        {
            if id.is_empty() {
                errs.push("bidder with empty id".to_string());
            } else if !ids.insert(id.as_str()) {
                errs.push(format!("bidder id \"{id}\" is used more than once"));
            }
        }

        for b in &self.buyers {
            if b.budget.is_nan() || b.budget < 0.0 {
                errs.push(format!("buyer \"{}\" has negative budget", b.id));
            }
            check_bids(&mut errs, "buyer", &b.id, &b.bids, &items, None);
        }

        let mut owners: BTreeMap<&str, Vec<&str>> = BTreeMap::new();
        for s in &self.sellers {
            let mut own = HashSet::new();
            for it in &s.endowment {
                if !items.contains(it.as_str()) {
                    errs.push(format!("seller \"{}\" endows unknown item \"{it}\"", s.id));
                } else if !own.insert(it.as_str()) {
                    errs.push(format!("seller \"{}\" lists item \"{it}\" twice", s.id));
                } else {
                    owners.entry(it.as_str()).or_default().push(s.id.as_str());
                }
            }
            check_bids(&mut errs, "seller", &s.id, &s.asks, &items, Some(&own));
        }
        for item in &self.items {
            match owners.get(item.id.as_str()).map_or(0, Vec::len) {
                1 => {}
                0 => errs.push(format!("item \"{}\" is not endowed by any seller", item.id)),
                _ => errs.push(format!(
                    "item \"{}\" is endowed by several sellers ({})",
                    item.id,
                    owners[item.id.as_str()].join(", ")
                )),
            }
        }
        errs
    }
}

fn check_bids(
    errs: &mut Vec<String>,
    role: &str,
    who: &str,
    bids: &[PackageBid],
    items: &HashSet<&str>,
    endowment: Option<&HashSet<&str>>,
) {
    let mut seen: HashSet<Vec<&str>> = HashSet::new();
    for (k, bid) in bids.iter().enumerate() {
        if bid.bundle.is_empty() {
            errs.push(format!("{role} \"{who}\" bid {k} has an empty bundle"));
        }
        if !bid.value.is_finite() || bid.value < 0.0 {
            errs.push(format!("{role} \"{who}\" bid {k} has invalid value {}", bid.value));
        }
        let mut members = HashSet::new();
        for it in &bid.bundle {
            if !items.contains(it.as_str()) {
                errs.push(format!("{role} \"{who}\" bid {k} uses unknown item \"{it}\""));
            } else if endowment.is_some_and(|e| !e.contains(it.as_str())) {
                errs.push(format!(
                    "{role} \"{who}\" ask {k} offers item \"{it}\" outside its endowment"
                ));
            }
            if !members.insert(it.as_str()) {
                errs.push(format!("{role} \"{who}\" bid {k} repeats item \"{it}\""));
            }
        }
        let mut key: Vec<&str> = members.into_iter().collect();
        key.sort_unstable();
        if !key.is_empty() && !seen.insert(key) {
            errs.push(format!("{role} \"{who}\" bids twice on the same bundle (bid {k})"));
        }
    }
}

/// A bid with its bundle resolved to item indices (sorted).
#[derive(Debug, Clone, PartialEq)]
pub struct IndexedBid {
    pub items: Vec<usize>,
    pub value: f64,
}

/// Which bid (buyers) and ask (sellers) each bidder trades, by index.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Trades {
    pub buyer: Vec<Option<usize>>,
    pub seller: Vec<Option<usize>>,
}

impl Trades {
    pub fn none(nb: usize, ns: usize) -> Self {
        Trades {
            buyer: vec![None; nb],
            seller: vec![None; ns],
        }
    }

    pub fn is_empty(&self) -> bool {
        self.buyer.iter().chain(&self.seller).all(Option::is_none)
    }

    pub fn traders(&self) -> (Vec<bool>, Vec<bool>) {
        (
            self.buyer.iter().map(Option::is_some).collect(),
            self.seller.iter().map(Option::is_some).collect(),
        )
    }

    /// Incidence vector over all bids followed by all asks.
    pub fn incidence(&self, market: &Market) -> Vec<bool> {
        let mut v = Vec::new();
        for (b, bids) in market.bids.iter().enumerate() {
            v.extend((0..bids.len()).map(|k| self.buyer[b] == Some(k)));
        }
        for (s, asks) in market.asks.iter().enumerate() {
            v.extend((0..asks.len()).map(|k| self.seller[s] == Some(k)));
        }
        v
    }

    pub fn hamming(&self, other: &Trades, market: &Market) -> usize {
        self.incidence(market)
            .iter()
            .zip(other.incidence(market))
            .filter(|(a, b)| **a != *b)
            .count()
    }
}

/// Index-based view of a validated instance.
#[derive(Debug, Clone)]
pub struct Market {
    pub item_ids: Vec<String>,
    pub buyer_ids: Vec<String>,
    pub seller_ids: Vec<String>,
    pub budgets: Vec<f64>,
    pub bids: Vec<Vec<IndexedBid>>,
    pub asks: Vec<Vec<IndexedBid>>,
    /// Seller endowing each item.
    pub owner: Vec<usize>,
}

impl Market {
    pub fn new(inst: &ExchangeInstance) -> Result<Self> {
        let errs = inst.validate();
        if !errs.is_empty() {
            return Err(Error::InvalidInstance(errs));
        }
        let index: BTreeMap<&str, usize> = inst
            .items
            .iter()
            .enumerate()
            .map(|(i, it)| (it.id.as_str(), i))
            .collect();
        let resolve = |bids: &[PackageBid]| -> Vec<IndexedBid> {
            bids.iter()
                .map(|b| {
                    let mut items: Vec<usize> =
                        b.bundle.iter().map(|id| index[id.as_str()]).collect();
                    items.sort_unstable();
                    IndexedBid {
                        items,
                        value: b.value,
                    }
                })
                .collect()
        };
        let mut owner = vec![0; inst.items.len()];
        for (s, seller) in inst.sellers.iter().enumerate() {
            for it in &seller.endowment {
                owner[index[it.as_str()]] = s;
            }
        }
        Ok(Market {
            item_ids: inst.items.iter().map(|i| i.id.clone()).collect(),
            buyer_ids: inst.buyers.iter().map(|b| b.id.clone()).collect(),
            seller_ids: inst.sellers.iter().map(|s| s.id.clone()).collect(),
            budgets: inst.buyers.iter().map(|b| b.budget).collect(),
            bids: inst.buyers.iter().map(|b| resolve(&b.bids)).collect(),
            asks: inst.sellers.iter().map(|s| resolve(&s.asks)).collect(),
            owner,
        })
    }

    pub fn num_buyers(&self) -> usize {
        self.buyer_ids.len()
    }

    pub fn num_sellers(&self) -> usize {
        self.seller_ids.len()
    }

    pub fn num_items(&self) -> usize {
        self.item_ids.len()
    }

    /// `min(B_i, v_i(S))`.
    pub fn capped(&self, b: usize, k: usize) -> f64 {
        self.bids[b][k].value.min(self.budgets[b])
    }

    pub fn max_value(&self, b: usize) -> f64 {
        self.bids[b].iter().map(|x| x.value).fold(0.0, f64::max)
    }

    pub fn max_reservation(&self, s: usize) -> f64 {
        self.asks[s].iter().map(|x| x.value).fold(0.0, f64::max)
    }

    /// Upper bound on any single seller receipt: `Σ_i min(B_i, max_S v_i(S)) + 1`.
    pub fn pay_bound(&self) -> f64 {
        (0..self.num_buyers())
            .map(|b| self.max_value(b).min(self.budgets[b]))
            .sum::<f64>()
            + 1.0
    }

    /// Big-M for deviation cuts: `Σ_i max v_i + Σ_j max r_j + 1`.
    pub fn big_m(&self) -> f64 {
        (0..self.num_buyers()).map(|b| self.max_value(b)).sum::<f64>()
            + (0..self.num_sellers())
                .map(|s| self.max_reservation(s))
                .sum::<f64>()
            + 1.0
    }

    pub fn welfare(&self, t: &Trades) -> f64 {
        self.buyer_values(t, false) - self.seller_costs(t)
    }

    pub fn capped_welfare(&self, t: &Trades) -> f64 {
        self.buyer_values(t, true) - self.seller_costs(t)
    }

    fn buyer_values(&self, t: &Trades, capped: bool) -> f64 {
        t.buyer
            .iter()
            .enumerate()
            .filter_map(|(b, k)| {
                k.map(|k| {
                    if capped {
                        self.capped(b, k)
                    } else {
                        self.bids[b][k].value
                    }
                })
            })
            .sum()
    }

    fn seller_costs(&self, t: &Trades) -> f64 {
        t.seller
            .iter()
            .enumerate()
            .filter_map(|(s, k)| k.map(|k| self.asks[s][k].value))
            .sum()
    }

    /// Items over-demanded by `t` (bought more often than sold).
    pub fn supply_violations(&self, t: &Trades) -> Vec<usize> {
        let mut net = vec![0i64; self.num_items()];
        for (b, k) in t.buyer.iter().enumerate() {
            if let Some(k) = k {
                for &i in &self.bids[b][*k].items {
                    net[i] += 1;
                }
            }
        }
        for (s, k) in t.seller.iter().enumerate() {
            if let Some(k) = k {
                for &i in &self.asks[s][*k].items {
                    net[i] -= 1;
                }
            }
        }
        (0..net.len()).filter(|&i| net[i] > 0).collect()
    }

    pub fn coalition(&self, buyers: &[bool], sellers: &[bool]) -> Coalition {
        Coalition {
            buyer_ids: pick(&self.buyer_ids, buyers),
            seller_ids: pick(&self.seller_ids, sellers),
        }
    }

    pub fn grand_coalition(&self) -> Coalition {
        self.coalition(
            &vec![true; self.num_buyers()],
            &vec![true; self.num_sellers()],
        )
    }

    /// Membership masks; unknown ids are an error.
    pub fn masks(&self, c: &Coalition) -> Result<(Vec<bool>, Vec<bool>)> {
        let mask = |ids: &[String], chosen: &BTreeSet<String>| -> Result<Vec<bool>> {
            for id in chosen {
                if !ids.contains(id) {
                    return Err(Error::Precondition(format!("unknown coalition member \"{id}\"")));
                }
            }
            Ok(ids.iter().map(|id| chosen.contains(id)).collect())
        };
        Ok((mask(&self.buyer_ids, &c.buyer_ids)?, mask(&self.seller_ids, &c.seller_ids)?))
    }

    pub fn outcome(&self, t: &Trades, buyer_price: &[f64], seller_price: &[f64]) -> Outcome {
        Outcome {
            buyer_alloc: self.buyer_ids.iter().cloned().zip(t.buyer.iter().copied()).collect(),
            seller_alloc: self.seller_ids.iter().cloned().zip(t.seller.iter().copied()).collect(),
            buyer_price: self.buyer_ids.iter().cloned().zip(buyer_price.iter().copied()).collect(),
            seller_price: self
                .seller_ids
                .iter()
                .cloned()
                .zip(seller_price.iter().copied())
                .collect(),
        }
    }

    /// Index form of an outcome: trades, buyer payments, seller receipts.
    /// Missing entries mean "no trade" and price 0.
    pub fn indexed(&self, o: &Outcome) -> Result<(Trades, Vec<f64>, Vec<f64>)> {
        let mut errs = Vec::new();
        for id in o.buyer_alloc.keys().chain(o.buyer_price.keys()) {
            if !self.buyer_ids.contains(id) {
                errs.push(format!("outcome mentions unknown buyer \"{id}\""));
            }
        }
        for id in o.seller_alloc.keys().chain(o.seller_price.keys()) {
            if !self.seller_ids.contains(id) {
                errs.push(format!("outcome mentions unknown seller \"{id}\""));
            }
        }
        let mut t = Trades::none(self.num_buyers(), self.num_sellers());
        for (b, id) in self.buyer_ids.iter().enumerate() {
            if let Some(&Some(k)) = o.buyer_alloc.get(id) {
                if k >= self.bids[b].len() {
                    errs.push(format!("buyer \"{id}\" has no bid {k}"));
                } else {
                    t.buyer[b] = Some(k);
                }
            }
        }
        for (s, id) in self.seller_ids.iter().enumerate() {
            if let Some(&Some(k)) = o.seller_alloc.get(id) {
                if k >= self.asks[s].len() {
                    errs.push(format!("seller \"{id}\" has no ask {k}"));
                } else {
                    t.seller[s] = Some(k);
                }
            }
        }
        if !errs.is_empty() {
            return Err(Error::InvalidOutcome(errs));
        }
        let bp = self
            .buyer_ids
            .iter()
            .map(|id| o.buyer_price.get(id).copied().unwrap_or(0.0))
            .collect();
        let sp = self
            .seller_ids
            .iter()
            .map(|id| o.seller_price.get(id).copied().unwrap_or(0.0))
            .collect();
        Ok((t, bp, sp))
    }

    /// Violated outcome invariants (XOR is structural).
    pub fn outcome_violations(&self, t: &Trades, bp: &[f64], sp: &[f64]) -> Vec<String> {
        let mut errs = Vec::new();
        for i in self.supply_violations(t) {
            errs.push(format!("Supply: item \"{}\" is bought more often than sold", self.item_ids[i]));
        }
        for (b, id) in self.buyer_ids.iter().enumerate() {
            let p = bp[b];
            if !p.is_finite() {
                errs.push(format!("BC: buyer \"{id}\" has non-finite price"));
                continue;
            }
            match t.buyer[b] {
                Some(k) => {
                    if p > self.capped(b, k) + EPS_FEAS {
                        errs.push(format!("BC: buyer \"{id}\" pays {p} above budget or value"));
                    }
                    if p < -EPS_FEAS {
                        errs.push(format!("BC: buyer \"{id}\" has negative payment {p}"));
                    }
                }
                None if p.abs() > EPS_FEAS => {
                    errs.push(format!("BC: losing buyer \"{id}\" pays {p}"));
                }
                None => {}
            }
        }
        for (s, id) in self.seller_ids.iter().enumerate() {
            let r = sp[s];
            if !r.is_finite() {
                errs.push(format!("IRS: seller \"{id}\" has non-finite receipt"));
                continue;
            }
            match t.seller[s] {
                Some(k) if r < self.asks[s][k].value - EPS_FEAS => {
                    errs.push(format!("IRS: seller \"{id}\" receives {r} below reservation"));
                }
                None if r.abs() > EPS_FEAS => {
                    errs.push(format!("IRS: idle seller \"{id}\" receives {r}"));
                }
                _ => {}
            }
        }
        let paid: f64 = bp.iter().sum();
        let received: f64 = sp.iter().sum();
        if (paid - received).abs() > EPS_FEAS {
            errs.push(format!("BB: buyers pay {paid} but sellers receive {received}"));
        }
        errs
    }

    /// Payoffs `(buyers, sellers)`: value minus payment, receipt minus reservation.
    pub fn payoffs(&self, t: &Trades, bp: &[f64], sp: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let buyers = (0..self.num_buyers())
            .map(|b| t.buyer[b].map_or(0.0, |k| self.bids[b][k].value - bp[b]))
            .collect();
        let sellers = (0..self.num_sellers())
            .map(|s| t.seller[s].map_or(0.0, |k| sp[s] - self.asks[s][k].value))
            .collect();
        (buyers, sellers)
    }
}

fn pick(ids: &[String], mask: &[bool]) -> BTreeSet<String> {
    ids.iter()
        .zip(mask)
        .filter(|(_, &m)| m)
        .map(|(id, _)| id.clone())
        .collect()
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct Outcome {
    pub buyer_alloc: BTreeMap<String, Option<usize>>,
    pub seller_alloc: BTreeMap<String, Option<usize>>,
    pub buyer_price: BTreeMap<String, f64>,
    pub seller_price: BTreeMap<String, f64>,
}

impl Outcome {
    /// No trade, all prices zero.
    pub fn empty(inst: &ExchangeInstance) -> Self {
        Outcome {
            buyer_alloc: inst.buyers.iter().map(|b| (b.id.clone(), None)).collect(),
            seller_alloc: inst.sellers.iter().map(|s| (s.id.clone(), None)).collect(),
            buyer_price: inst.buyers.iter().map(|b| (b.id.clone(), 0.0)).collect(),
            seller_price: inst.sellers.iter().map(|s| (s.id.clone(), 0.0)).collect(),
        }
    }

    pub fn validate(&self, inst: &ExchangeInstance) -> Vec<String> {
        let market = match Market::new(inst) {
            Ok(m) => m,
            Err(e) => return vec![e.to_string()],
        };
        match market.indexed(self) {
            Ok((t, bp, sp)) => market.outcome_violations(&t, &bp, &sp),
            Err(Error::InvalidOutcome(errs)) => errs,
            Err(e) => vec![e.to_string()],
        }
    }

    pub fn welfare(&self, inst: &ExchangeInstance) -> Result<f64> {
        let market = Market::new(inst)?;
        let (t, _, _) = market.indexed(self)?;
        Ok(market.welfare(&t))
    }
}

/// Payoff of every bidder under a feasible outcome.
pub fn payoffs(inst: &ExchangeInstance, outcome: &Outcome) -> Result<BTreeMap<String, f64>> {
    let market = Market::new(inst)?;
    let (t, bp, sp) = market.indexed(outcome)?;
    let errs = market.outcome_violations(&t, &bp, &sp);
    if !errs.is_empty() {
        return Err(Error::InvalidOutcome(errs));
    }
    let (pb, ps) = market.payoffs(&t, &bp, &sp);
    Ok(market
        .buyer_ids
        .iter()
        .cloned()
        .zip(pb)
        .chain(market.seller_ids.iter().cloned().zip(ps))
        .collect())
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Default, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct Coalition {
    pub buyer_ids: BTreeSet<String>,
    pub seller_ids: BTreeSet<String>,
}

impl Coalition {
    pub fn new(buyers: &[&str], sellers: &[&str]) -> Self {
        Coalition {
            buyer_ids: buyers.iter().map(|s| s.to_string()).collect(),
            seller_ids: sellers.iter().map(|s| s.to_string()).collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.buyer_ids.len() + self.seller_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// A coalition together with an internal reallocation and transfers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct Deviation {
    pub coalition: Coalition,
    pub buyer_alloc: BTreeMap<String, usize>,
    pub seller_alloc: BTreeMap<String, usize>,
    pub transfer_prices: BTreeMap<String, f64>,
    pub min_improvement: f64,
}

impl Deviation {
    pub fn from_trades(market: &Market, t: &Trades, prices: (&[f64], &[f64]), d: f64) -> Self {
        let (buyers, sellers) = t.traders();
        let mut transfer_prices = BTreeMap::new();
        let mut buyer_alloc = BTreeMap::new();
        let mut seller_alloc = BTreeMap::new();
        for (b, k) in t.buyer.iter().enumerate() {
            if let Some(k) = k {
                buyer_alloc.insert(market.buyer_ids[b].clone(), *k);
                transfer_prices.insert(market.buyer_ids[b].clone(), prices.0[b]);
            }
        }
        for (s, k) in t.seller.iter().enumerate() {
            if let Some(k) = k {
                seller_alloc.insert(market.seller_ids[s].clone(), *k);
                transfer_prices.insert(market.seller_ids[s].clone(), prices.1[s]);
            }
        }
        Deviation {
            coalition: market.coalition(&buyers, &sellers),
            buyer_alloc,
            seller_alloc,
            transfer_prices,
            min_improvement: d,
        }
    }

    pub fn trades(&self, market: &Market) -> Trades {
        Trades {
            buyer: market
                .buyer_ids
                .iter()
                .map(|id| self.buyer_alloc.get(id).copied())
                .collect(),
            seller: market
                .seller_ids
                .iter()
                .map(|id| self.seller_alloc.get(id).copied())
                .collect(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::samples;

    #[test]
    fn empty_instance_is_valid() {
        assert!(ExchangeInstance::default().validate().is_empty());
    }

    #[test]
    fn shared_endowment_is_one_violation() {
        let mut inst = samples::stability_vs_welfare();
        inst.sellers[1].endowment.push("g1".into());
        let errs = inst.validate();
        assert_eq!(errs.len(), 1, "{errs:?}");
        assert!(errs[0].contains("\"g1\""));
    }

    #[test]
    fn bad_bids_are_reported() {
        let mut inst = samples::stability_vs_welfare();
        inst.buyers[0].bids.push(PackageBid::new(&["g1"], 3.0));
        inst.buyers[1].bids.push(PackageBid::new(&["zz"], -1.0));
        inst.sellers[0].asks.push(PackageBid::new(&["g2"], 0.0));
        let errs = inst.validate();
        assert_eq!(errs.len(), 4, "{errs:?}");
    }

    #[test]
    fn budget_null_round_trip() {
        let inst = samples::stability_vs_welfare();
        let text = inst.to_json();
        assert!(text.contains("\"budget\": null"));
        assert_eq!(ExchangeInstance::from_json(&text).unwrap(), inst);
    }

    #[test]
    fn stable_outcome_payoffs() {
        let inst = samples::stability_vs_welfare();
        let p = payoffs(&inst, &samples::stability_vs_welfare_efficient_outcome()).unwrap();
        assert_eq!(p["b1"], 9.0);
        assert_eq!(p["b2"], 4.5);
        assert_eq!(p["s1"], 1.0);
        assert_eq!(p["s2"], 0.5);
    }

    #[test]
    fn empty_outcome_pays_nothing() {
        let inst = samples::empty_core();
        let p = payoffs(&inst, &Outcome::empty(&inst)).unwrap();
        assert!(p.values().all(|&x| x == 0.0));
        assert_eq!(p.len(), 4);
    }

    #[test]
    fn over_budget_payment_is_rejected() {
        let inst = samples::stability_vs_welfare();
        let mut o = samples::stability_vs_welfare_efficient_outcome();
        o.buyer_price.insert("b1".into(), 2.0);
        o.seller_price.insert("s1".into(), 2.0);
        let errs = o.validate(&inst);
        assert_eq!(errs.len(), 1);
        assert!(errs[0].starts_with("BC"));
        assert!(payoffs(&inst, &o).is_err());
    }
}
