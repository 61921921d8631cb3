//! Exchanges encoding `∃x ∀y φ(x, y)` for a DNF formula `φ`: a core outcome
//! with welfare at least `nW` exists iff the formula is true.
//!
//! Item families (1-based names): `chi_i`/`chibar_i` per x-variable, a
//! clause matrix `psi_l_a_b` per clause, `gamma_j`/`gammabar_j` per
//! y-variable, markers `phi_l_i`, and the auxiliary `lam1_i`, `lam2_i`,
//! `lambar1_i`, `lambar2_i`. In clause matrix `l`, row `i` is
//! `{psi_l_i_b}` and column `i` is `{psi_l_a_i}`.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::model::{Buyer, ExchangeInstance, Item, PackageBid, Seller};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct Literal {
    /// `false` for an x-variable, `true` for a y-variable.
    pub universal: bool,
    /// 0-based variable index.
    pub index: usize,
    pub negated: bool,
}

impl Literal {
    pub fn x(index: usize, negated: bool) -> Self {
        Literal {
            universal: false,
            index,
            negated,
        }
    }

    pub fn y(index: usize, negated: bool) -> Self {
        Literal {
            universal: true,
            index,
            negated,
        }
    }

    fn holds(&self, x: &[bool], y: &[bool]) -> bool {
        let v = if self.universal { y[self.index] } else { x[self.index] };
        v != self.negated
    }
}

impl fmt::Display for Literal {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let neg = if self.negated { "!" } else { "" };
        let var = if self.universal { 'y' } else { 'x' };
        write!(f, "{neg}{var}{}", self.index + 1)
    }
}

impl FromStr for Literal {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        let s = s.trim();
        let (negated, rest) = match s.strip_prefix(['!', '~', '-']) {
            Some(r) => (true, r.trim_start()),
            None => (false, s),
        };
        let universal = match rest.chars().next() {
            Some('x') => false,
            Some('y') => true,
            _ => return Err(format!("literal \"{s}\" must name x<i> or y<j>")),
        };
        let index: usize = rest[1..]
            .parse()
            .map_err(|_| format!("literal \"{s}\" has no valid 1-based index"))?;
        if index == 0 {
            return Err(format!("literal \"{s}\": indices start at 1"));
        }
        Ok(Literal {
            universal,
            index: index - 1,
            negated,
        })
    }
}

impl TryFrom<String> for Literal {
    type Error = String;

    fn try_from(s: String) -> std::result::Result<Self, String> {
        s.parse()
    }
}

impl From<Literal> for String {
    fn from(l: Literal) -> String {
        l.to_string()
    }
}

/// A DNF formula over `x_1..x_n` (existential) and `y_1..y_m` (universal).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Dnf {
    pub n: usize,
    pub m: usize,
    pub clauses: Vec<Vec<Literal>>,
}

impl Dnf {
    pub fn new(n: usize, m: usize, clauses: Vec<Vec<Literal>>) -> Result<Self> {
        let dnf = Dnf { n, m, clauses };
        let errs = dnf.validate();
        if errs.is_empty() {
            Ok(dnf)
        } else {
            Err(Error::InvalidInstance(errs))
        }
    }

    /// Parses `"x1 & !y1 | x2"`: clauses separated by `|`, literals by `&`.
    /// Variable counts default to the largest index used.
    pub fn parse(text: &str, n: Option<usize>, m: Option<usize>) -> Result<Self> {
        let mut clauses = Vec::new();
        for clause in text.split('|') {
            let lits = clause
                .split('&')
                .map(str::parse)
                .collect::<std::result::Result<Vec<Literal>, String>>()
                .map_err(|e| Error::InvalidInstance(vec![e]))?;
            clauses.push(lits);
        }
        let max = |universal: bool| {
            clauses
                .iter()
                .flatten()
                .filter(|l| l.universal == universal)
                .map(|l| l.index + 1)
                .max()
                .unwrap_or(0)
        };
        let (nx, ny) = (max(false), max(true));
        Dnf::new(n.unwrap_or(nx).max(1), m.unwrap_or(ny).max(1), clauses)
    }

    pub fn validate(&self) -> Vec<String> {
        let mut errs = Vec::new();
        if self.n == 0 || self.m == 0 {
            errs.push("formula needs at least one x and one y variable".into());
        }
        if self.clauses.is_empty() {
            errs.push("formula needs at least one clause".into());
        }
        for (l, c) in self.clauses.iter().enumerate() {
            if c.is_empty() {
                errs.push(format!("clause {} is empty", l + 1));
            }
            for lit in c {
                let bound = if lit.universal { self.m } else { self.n };
                if lit.index >= bound {
                    errs.push(format!("clause {} uses {lit} beyond the declared variables", l + 1));
                }
            }
        }
        errs
    }

    pub fn eval(&self, x: &[bool], y: &[bool]) -> bool {
        self.clauses.iter().any(|c| c.iter().all(|l| l.holds(x, y)))
    }
}

impl fmt::Display for Dnf {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let text: Vec<String> = self
            .clauses
            .iter()
            .map(|c| c.iter().map(Literal::to_string).collect::<Vec<_>>().join(" & "))
            .collect();
        write!(f, "{}", text.join(" | "))
    }
}

/// Largest `n + m` accepted by [`qsat2_bruteforce`].
pub const BRUTEFORCE_LIMIT: usize = 16;

/// Decides `∃x ∀y φ(x, y)` by trying every assignment.
pub fn qsat2_bruteforce(dnf: &Dnf) -> Result<bool> {
    if dnf.n + dnf.m > BRUTEFORCE_LIMIT {
        return Err(Error::TooLarge(format!(
            "{} variables exceed the brute-force limit of {BRUTEFORCE_LIMIT}",
            dnf.n + dnf.m
        )));
    }
    let bits = |mask: u32, len: usize| -> Vec<bool> { (0..len).map(|i| mask >> i & 1 == 1).collect() };
    Ok((0u32..1 << dnf.n).any(|xm| {
        let x = bits(xm, dnf.n);
        (0u32..1 << dnf.m).all(|ym| dnf.eval(&x, &bits(ym, dnf.m)))
    }))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct ReductionConstants {
    pub t: f64,
    pub u: f64,
    pub v: f64,
    pub w: f64,
}

impl ReductionConstants {
    /// Smallest "round" choice: `T = 1/(2n)`, `U = nL + 1`, `V = 4U + 1`,
    /// `W = 7nV + 1`.
    pub fn for_size(n: usize, clauses: usize) -> Self {
        let u = (n * clauses) as f64 + 1.0;
        let v = 4.0 * u + 1.0;
        ReductionConstants {
            t: 1.0 / (2.0 * n as f64),
            u,
            v,
            w: 7.0 * n as f64 * v + 1.0,
        }
    }

    /// `T < 1/n`, `U > nL`, `V > 4U`, `W > 7nV`.
    pub fn satisfied(&self, n: usize, clauses: usize) -> bool {
        let n = n as f64;
        self.t < 1.0 / n && self.u > n * clauses as f64 && self.v > 4.0 * self.u && self.w > 7.0 * n * self.v
    }
}

/// Valuation of the y-variable buyers for a bundle holding `k` clause
/// matrices of one polarity.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub enum GValueRule {
    /// `k`.
    #[default]
    Count,
    /// `(k − 1) / (n (n + 1))`.
    Scaled,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct QsatReduction {
    pub instance: ExchangeInstance,
    pub constants: ReductionConstants,
    /// `nW`: the formula is true iff a core outcome reaches this welfare.
    pub threshold: f64,
}

/// Largest item count [`gen_qsat2`] builds.
pub const MAX_ITEMS: usize = 2000;
/// Largest number of clause matrices one y-literal may appear in.
pub const MAX_LITERAL_CLAUSES: usize = 12;

pub fn gen_qsat2(dnf: &Dnf, rule: GValueRule) -> Result<QsatReduction> {
    let errs = dnf.validate();
    if !errs.is_empty() {
        return Err(Error::InvalidInstance(errs));
    }
    let (n, m, big_l) = (dnf.n, dnf.m, dnf.clauses.len());
    let items_needed = 2 * n + n * n * big_l + 2 * m + n * big_l + 4 * n;
    if items_needed > MAX_ITEMS {
        return Err(Error::TooLarge(format!(
            "the reduction would need {items_needed} items (limit {MAX_ITEMS})"
        )));
    }
    let c = ReductionConstants::for_size(n, big_l);
    debug_assert!(c.satisfied(n, big_l));

    let chi = |i: usize| format!("chi_{i}");
    let chibar = |i: usize| format!("chibar_{i}");
    let psi = |l: usize, a: usize, b: usize| format!("psi_{l}_{a}_{b}");
    let phi = |l: usize, i: usize| format!("phi_{l}_{i}");
    let lam = |k: usize, i: usize| format!("lam{k}_{i}");
    let lambar = |k: usize, i: usize| format!("lambar{k}_{i}");
    let column = |l: usize, i: usize| (1..=n).map(|a| psi(l, a, i)).collect::<Vec<_>>();
    let row = |l: usize, i: usize| (1..=n).map(|b| psi(l, i, b)).collect::<Vec<_>>();
    let column_marked = |l: usize, i: usize| {
        let mut s = column(l, i);
        s.push(phi(l, i));
        s
    };
    let matrix_marked = |l: usize| {
        let mut s: Vec<String> = (1..=n).flat_map(|a| (1..=n).map(move |b| (a, b))).map(|(a, b)| psi(l, a, b)).collect();
        s.extend((1..=n).map(|i| phi(l, i)));
        s
    };
    let has = |l: usize, lit: Literal| dnf.clauses[l - 1].contains(&lit);

    let mut items = Vec::new();
    let mut sellers = Vec::new();
    let mut seller = |id: String, endowment: Vec<String>, items: &mut Vec<String>| {
        items.extend(endowment.iter().cloned());
        sellers.push(Seller {
            id,
            asks: vec![PackageBid {
                bundle: endowment.clone(),
                value: 0.0,
            }],
            endowment,
        });
    };
    for i in 1..=n {
        seller(format!("S_chi_{i}"), vec![chi(i), chibar(i)], &mut items);
    }
    for l in 1..=big_l {
        let cells = (1..=n).flat_map(|a| (1..=n).map(move |b| (a, b))).map(|(a, b)| psi(l, a, b)).collect();
        seller(format!("S_psi_{l}"), cells, &mut items);
    }
    let mut gp: Vec<String> = (1..=m).flat_map(|j| [format!("gamma_{j}"), format!("gammabar_{j}")]).collect();
    gp.extend((1..=big_l).flat_map(|l| (1..=n).map(move |i| (l, i))).map(|(l, i)| phi(l, i)));
    seller("S_gamma_phi".into(), gp, &mut items);
    let lams = (1..=n).flat_map(|i| [lam(1, i), lam(2, i), lambar(1, i), lambar(2, i)]).collect();
    seller("S_lambda".into(), lams, &mut items);
    debug_assert_eq!(items.len(), items_needed);

    let bid = |bundle: Vec<String>, value: f64| PackageBid { bundle, value };
    let mut buyers = Vec::new();
    for i in 1..=n {
        let mut bids = Vec::new();
        for l in 1..=big_l {
            for x in [chi(i), chibar(i)] {
                let mut s = vec![x];
                s.extend(column_marked(l, i));
                bids.push(bid(s, c.w));
            }
        }
        buyers.push(Buyer {
            id: format!("B_K_{i}"),
            budget: c.v + c.t,
            bids,
        });
    }
    for i in 1..=n {
        let mut pos = vec![chi(i), lam(1, i), lam(2, i)];
        let mut neg = vec![chibar(i), lambar(1, i), lambar(2, i)];
        for l in 1..=big_l {
            if has(l, Literal::x(i - 1, false)) {
                pos.extend(row(l, i));
            }
            if has(l, Literal::x(i - 1, true)) {
                neg.extend(row(l, i));
            }
        }
        buyers.push(Buyer {
            id: format!("B_M_{i}"),
            budget: 2.0 * c.v,
            bids: vec![bid(pos, 2.0 * c.v), bid(neg, 2.0 * c.v)],
        });
    }
    for i in 1..=n {
        for k in 1..=2 {
            buyers.push(Buyer {
                id: format!("B_chi{k}_{i}"),
                budget: c.v,
                bids: vec![bid(vec![chi(i)], c.v), bid(vec![chibar(i)], c.v)],
            });
        }
    }
    let big_l_f = big_l as f64;
    for i in 1..=n {
        buyers.push(Buyer {
            id: format!("B_lam1_{i}"),
            budget: c.u,
            bids: vec![bid(vec![lam(1, i)], c.v), bid(vec![lambar(1, i)], c.v - big_l_f)],
        });
        buyers.push(Buyer {
            id: format!("B_lam2_{i}"),
            budget: c.u,
            bids: vec![bid(vec![lam(2, i)], c.v - big_l_f), bid(vec![lambar(2, i)], c.v)],
        });
    }
    for j in 1..=m {
        let mut bids = Vec::new();
        // gamma_j goes with clauses containing !y_j, gammabar_j with y_j.
        for (marker, negated) in [(format!("gamma_{j}"), true), (format!("gammabar_{j}"), false)] {
            let clauses: Vec<usize> = (1..=big_l).filter(|&l| has(l, Literal::y(j - 1, negated))).collect();
            if clauses.len() > MAX_LITERAL_CLAUSES {
                return Err(Error::TooLarge(format!(
                    "y{j} appears in {} clauses (limit {MAX_LITERAL_CLAUSES})",
                    clauses.len()
                )));
            }
            for mask in 1u32..1 << clauses.len() {
                let chosen: Vec<usize> = (0..clauses.len()).filter(|b| mask >> b & 1 == 1).map(|b| clauses[b]).collect();
                let mut s = vec![marker.clone()];
                for &l in &chosen {
                    s.extend(matrix_marked(l));
                }
                let k = chosen.len() as f64;
                let value = match rule {
                    GValueRule::Count => k,
                    GValueRule::Scaled => (k - 1.0) / (n * (n + 1)) as f64,
                };
                bids.push(bid(s, value));
            }
        }
        buyers.push(Buyer {
            id: format!("B_G_{j}"),
            budget: big_l_f,
            bids,
        });
    }

    let threshold = n as f64 * c.w;
    let mut metadata = BTreeMap::new();
    metadata.insert("generator".into(), "qsat2".into());
    metadata.insert("formula".into(), dnf.to_string().into());
    metadata.insert("constants".into(), serde_json::to_value(c)?);
    metadata.insert("threshold".into(), threshold.into());
    let unique: BTreeSet<&String> = items.iter().collect();
    debug_assert_eq!(unique.len(), items.len());
    Ok(QsatReduction {
        instance: ExchangeInstance {
            items: items.iter().map(|i| Item::from(i.as_str())).collect(),
            buyers,
            sellers,
            metadata,
        },
        constants: c,
        threshold,
    })
}
