//! Dense-tableau primal simplex for bounded variables.
//!
//! Every row `a·x (<=|>=|=) b` gets a slack `s = a·x` whose bounds encode the
//! row sense, plus an artificial used only by phase 1. Nonbasic variables sit
//! at a finite bound; the ratio test allows bound flips. Pricing is Dantzig's
//! rule until too many consecutive degenerate pivots have happened, after
//! which Bland's rule takes over for the rest of the phase.

use std::time::Instant;

use serde::{Deserialize, Serialize};

use super::{Cmp, MilpError, MilpModel, Sense};

const PIVOT_TOL: f64 = 1e-9;
const COST_TOL: f64 = 1e-9;
const PHASE1_TOL: f64 = 1e-7;
const DEGENERATE_STEP: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub enum LpStatus {
    Optimal,
    Infeasible,
    Timeout,
}

/// Result of an LP solve. Duals and reduced costs refer to the model's own
/// objective sense: at a maximum, a variable at its lower bound has reduced
/// cost `<= 0`; at a minimum, `>= 0`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct LpSolution {
    pub status: LpStatus,
    pub objective: f64,
    pub values: Vec<f64>,
    pub row_activity: Vec<f64>,
    pub duals: Vec<f64>,
    pub reduced_costs: Vec<f64>,
    pub iterations: u64,
    /// True when the anti-cycling rule had to be switched on.
    pub used_bland: bool,
}

/// LP relaxation of `model` (binaries relaxed to [0, 1]).
pub fn solve_relaxation(model: &MilpModel) -> Result<LpSolution, MilpError> {
    model.validate()?;
    let lower: Vec<f64> = model.vars.iter().map(|v| v.lower).collect();
    let upper: Vec<f64> = model.vars.iter().map(|v| v.upper).collect();
    solve_with_bounds(model, &lower, &upper, None)
}

pub(crate) fn solve_with_bounds(
    model: &MilpModel,
    lower: &[f64],
    upper: &[f64],
    deadline: Option<Instant>,
) -> Result<LpSolution, MilpError> {
    let mut lp = Tableau::new(model, lower, upper);
    let sign = match model.sense {
        Sense::Minimize => 1.0,
        Sense::Maximize => -1.0,
    };
    let n = lp.n;
    let m = lp.m;

    if lp.needs_phase1() {
        let mut cost = vec![0.0; lp.cols];
        for c in &mut cost[n + m..] {
            *c = 1.0;
        }
        if !lp.optimize(&cost, deadline)? {
            return Ok(lp.timeout());
        }
        let infeasibility: f64 = (n + m..lp.cols).map(|j| lp.value(j)).sum();
        if infeasibility > PHASE1_TOL {
            return Ok(lp.infeasible());
        }
    }
    for j in n + m..lp.cols {
        lp.lo[j] = 0.0;
        lp.hi[j] = 0.0;
        lp.at_upper[j] = false;
    }
    lp.refresh_basics();

    let mut cost = vec![0.0; lp.cols];
    for (c, &obj) in cost.iter_mut().zip(&model.objective) {
        *c = sign * obj;
    }
    if !lp.optimize(&cost, deadline)? {
        return Ok(lp.timeout());
    }

    let d = lp.reduced_costs(&cost);
    let values: Vec<f64> = (0..n).map(|j| lp.value(j)).collect();
    let row_activity = model
        .constraints
        .iter()
        .map(|row| row.activity(&values))
        .collect();
    Ok(LpSolution {
        status: LpStatus::Optimal,
        objective: model.objective_value(&values),
        values,
        row_activity,
        duals: (0..m).map(|i| sign * d[n + i]).collect(),
        reduced_costs: (0..n).map(|j| sign * d[j]).collect(),
        iterations: lp.iterations,
        used_bland: lp.used_bland,
    })
}

struct Tableau {
    n: usize,
    m: usize,
    cols: usize,
    /// Row-major `m x cols`, always equal to `B^-1 A`.
    tab: Vec<f64>,
    lo: Vec<f64>,
    hi: Vec<f64>,
    basis: Vec<usize>,
    /// Row holding each basic column, `usize::MAX` when nonbasic.
    row_of: Vec<usize>,
    at_upper: Vec<bool>,
    basic_value: Vec<f64>,
    iterations: u64,
    used_bland: bool,
}

impl Tableau {
    fn new(model: &MilpModel, lower: &[f64], upper: &[f64]) -> Self {
        let n = model.vars.len();
        let m = model.constraints.len();
        let cols = n + 2 * m;
        let mut lo = vec![0.0; cols];
        let mut hi = vec![0.0; cols];
        lo[..n].copy_from_slice(lower);
        hi[..n].copy_from_slice(upper);
        let mut tab = vec![0.0; m * cols];
        let mut basis = vec![0; m];
        let mut at_upper = vec![false; cols];

        for (i, row) in model.constraints.iter().enumerate() {
            let (slo, shi) = match row.cmp {
                Cmp::Le => (f64::NEG_INFINITY, row.rhs),
                Cmp::Ge => (row.rhs, f64::INFINITY),
                Cmp::Eq => (row.rhs, row.rhs),
            };
            let s = n + i;
            let a = n + m + i;
            lo[s] = slo;
            hi[s] = shi;
            let r = &mut tab[i * cols..(i + 1) * cols];
            for &(v, c) in &row.terms {
                r[v.0] += c;
            }
            r[s] = -1.0;
            let activity: f64 = (0..n).map(|j| r[j] * lower[j]).sum();

            if activity >= slo - 1e-9 && activity <= shi + 1e-9 {
                basis[i] = s;
                lo[a] = 0.0;
                hi[a] = 0.0;
                for x in r.iter_mut() {
                    *x = -*x;
                }
            } else {
                let (bound, upper_side) = if activity < slo { (slo, false) } else { (shi, true) };
                at_upper[s] = upper_side;
                let sigma = if bound - activity >= 0.0 { 1.0 } else { -1.0 };
                r[a] = sigma;
                basis[i] = a;
                lo[a] = 0.0;
                hi[a] = f64::INFINITY;
                for x in r.iter_mut() {
                    *x /= sigma;
                }
            }
        }

        let mut row_of = vec![usize::MAX; cols];
        for (i, &b) in basis.iter().enumerate() {
            row_of[b] = i;
        }
        let mut t = Tableau {
            n,
            m,
            cols,
            tab,
            lo,
            hi,
            basis,
            row_of,
            at_upper,
            basic_value: vec![0.0; m],
            iterations: 0,
            used_bland: false,
        };
        t.refresh_basics();
        t
    }

    fn needs_phase1(&self) -> bool {
        self.basis.iter().any(|&b| b >= self.n + self.m)
    }

    fn nonbasic_value(&self, j: usize) -> f64 {
        if self.at_upper[j] {
            self.hi[j]
        } else {
            self.lo[j]
        }
    }

    fn value(&self, j: usize) -> f64 {
        match self.row_of[j] {
            usize::MAX => self.nonbasic_value(j),
            r => self.basic_value[r],
        }
    }

    fn refresh_basics(&mut self) {
        let nb: Vec<(usize, f64)> = (0..self.cols)
            .filter(|&j| self.row_of[j] == usize::MAX)
            .map(|j| (j, self.nonbasic_value(j)))
            .filter(|&(_, v)| v != 0.0)
            .collect();
        for i in 0..self.m {
            let row = &self.tab[i * self.cols..(i + 1) * self.cols];
            self.basic_value[i] = -nb.iter().map(|&(j, v)| row[j] * v).sum::<f64>();
        }
    }

    fn reduced_costs(&self, cost: &[f64]) -> Vec<f64> {
        let mut d = cost.to_vec();
        for (i, &b) in self.basis.iter().enumerate() {
            let cb = cost[b];
            if cb == 0.0 {
                continue;
            }
            let row = &self.tab[i * self.cols..(i + 1) * self.cols];
            for (dj, &t) in d.iter_mut().zip(row) {
                *dj -= cb * t;
            }
        }
        for &b in &self.basis {
            d[b] = 0.0;
        }
        d
    }

    /// Minimizes `cost`; returns false on deadline expiry.
    fn optimize(&mut self, cost: &[f64], deadline: Option<Instant>) -> Result<bool, MilpError> {
        let limit = 50_000 + 200 * (self.m + self.cols) as u64;
        let degenerate_limit = 10 * (self.m + self.n);
        let mut degenerate_run = 0usize;
        let mut bland = false;
        let mut steps = 0u64;

        loop {
            if deadline.is_some_and(|d| Instant::now() >= d) {
                return Ok(false);
            }
            steps += 1;
            if steps > limit {
                return Err(MilpError::IterationLimit);
            }
            let d = self.reduced_costs(cost);

            let mut entering: Option<(usize, f64)> = None;
            for j in 0..self.cols {
                if self.row_of[j] != usize::MAX || self.hi[j] - self.lo[j] <= 1e-12 {
                    continue;
                }
                let dir = if !self.at_upper[j] && d[j] < -COST_TOL {
                    1.0
                } else if self.at_upper[j] && d[j] > COST_TOL {
                    -1.0
                } else {
                    continue;
                };
                if bland {
                    entering = Some((j, dir));
                    break;
                }
                if entering.is_none_or(|(e, _)| d[j].abs() > d[e].abs()) {
                    entering = Some((j, dir));
                }
            }
            let Some((j, dir)) = entering else {
                return Ok(true);
            };

            let flip = self.hi[j] - self.lo[j];
            let mut ratios = Vec::new();
            for i in 0..self.m {
                let alpha = dir * self.tab[i * self.cols + j];
                let b = self.basis[i];
                let ratio = if alpha > PIVOT_TOL {
                    (self.basic_value[i] - self.lo[b]) / alpha
                } else if alpha < -PIVOT_TOL {
                    (self.hi[b] - self.basic_value[i]) / -alpha
                } else {
                    continue;
                };
                if ratio.is_finite() {
                    ratios.push((i, alpha, ratio.max(0.0)));
                }
            }
            let min_ratio = ratios.iter().map(|r| r.2).fold(f64::INFINITY, f64::min);
            let mut leave: Option<(usize, f64)> = None;
            let step = if flip <= min_ratio {
                flip
            } else {
                for &(i, alpha, ratio) in &ratios {
                    if ratio > min_ratio + 1e-12 {
                        continue;
                    }
                    let take = match leave {
                        None => true,
                        Some((r, _)) if bland => self.basis[i] < self.basis[r],
                        Some((_, a)) => alpha.abs() > a.abs(),
                    };
                    if take {
                        leave = Some((i, alpha));
                    }
                }
                min_ratio
            };
            if step.is_infinite() {
                return Err(MilpError::Numerical("unbounded LP direction".into()));
            }

            self.iterations += 1;
            if step <= DEGENERATE_STEP {
                degenerate_run += 1;
                if degenerate_run > degenerate_limit && !bland {
                    bland = true;
                    self.used_bland = true;
                }
            } else {
                degenerate_run = 0;
            }

            match leave {
                None => {
                    self.at_upper[j] = !self.at_upper[j];
                }
                Some((r, alpha)) => {
                    let old = self.basis[r];
                    self.pivot(r, j);
                    self.at_upper[old] = alpha < 0.0;
                    self.at_upper[j] = false;
                }
            }
            self.refresh_basics();
        }
    }

    fn pivot(&mut self, r: usize, j: usize) {
        let cols = self.cols;
        let p = self.tab[r * cols + j];
        for x in &mut self.tab[r * cols..(r + 1) * cols] {
            *x /= p;
        }
        let pivot_row = self.tab[r * cols..(r + 1) * cols].to_vec();
        for i in 0..self.m {
            if i == r {
                continue;
            }
            let f = self.tab[i * cols + j];
            if f == 0.0 {
                continue;
            }
            let row = &mut self.tab[i * cols..(i + 1) * cols];
            for (x, &pr) in row.iter_mut().zip(&pivot_row) {
                *x -= f * pr;
            }
            row[j] = 0.0;
        }
        let old = self.basis[r];
        self.row_of[old] = usize::MAX;
        self.basis[r] = j;
        self.row_of[j] = r;
    }

    fn empty(&self, status: LpStatus) -> LpSolution {
        LpSolution {
            status,
            objective: f64::NAN,
            values: Vec::new(),
            row_activity: Vec::new(),
            duals: Vec::new(),
            reduced_costs: Vec::new(),
            iterations: self.iterations,
            used_bland: self.used_bland,
        }
    }

    fn timeout(&self) -> LpSolution {
        self.empty(LpStatus::Timeout)
    }

    fn infeasible(&self) -> LpSolution {
        self.empty(LpStatus::Infeasible)
    }
}
