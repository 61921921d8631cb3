//! Best-bound branch-and-bound over the binary variables.

use std::cmp::Ordering;
use std::collections::BinaryHeap;
use std::time::{Duration, Instant};

use super::simplex::{solve_with_bounds, LpStatus};
use super::{MilpError, MilpModel, MilpSolution, MilpStatus, Sense, INTEGRALITY_TOL};

/// A node may only be pruned when its bound fails to beat the incumbent by
/// more than this.
const PRUNE_TOL: f64 = 1e-7;
const ACCEPT_TOL: f64 = 1e-6;

struct Node {
    /// Parent LP objective, in maximization form.
    bound: f64,
    depth: usize,
    seq: u64,
    lower: Vec<f64>,
    upper: Vec<f64>,
}

impl PartialEq for Node {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl Eq for Node {}

impl PartialOrd for Node {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Node {
    fn cmp(&self, other: &Self) -> Ordering {
        self.bound
            .total_cmp(&other.bound)
            .then(self.depth.cmp(&other.depth))
            .then(self.seq.cmp(&other.seq))
    }
}

pub fn solve_builtin(model: &MilpModel) -> Result<MilpSolution, MilpError> {
    model.validate()?;
    let start = Instant::now();
    let deadline = model
        .time_limit_ms
        .map(|ms| start + Duration::from_millis(ms));
    let flip = match model.sense {
        Sense::Maximize => 1.0,
        Sense::Minimize => -1.0,
    };

    let mut heap = BinaryHeap::new();
    let mut seq = 0u64;
    heap.push(Node {
        bound: f64::INFINITY,
        depth: 0,
        seq,
        lower: model.vars.iter().map(|v| v.lower).collect(),
        upper: model.vars.iter().map(|v| v.upper).collect(),
    });

    let mut incumbent: Option<(f64, Vec<f64>)> = None;
    let mut nodes = 0u64;
    let mut timed_out = false;

    while let Some(node) = heap.pop() {
        if beaten(node.bound, &incumbent) {
            continue;
        }
        if deadline.is_some_and(|d| Instant::now() >= d) {
            timed_out = true;
            break;
        }
        nodes += 1;
        let lp = solve_with_bounds(model, &node.lower, &node.upper, deadline)?;
        match lp.status {
            LpStatus::Timeout => {
                timed_out = true;
                break;
            }
            LpStatus::Infeasible => continue,
            LpStatus::Optimal => {}
        }
        let bound = flip * lp.objective;
        if beaten(bound, &incumbent) {
            continue;
        }

        let mut branch_var = None;
        let mut best_frac = INTEGRALITY_TOL;
        for j in model.binaries() {
            let x = lp.values[j];
            let frac = (x - x.floor()).min(x.ceil() - x);
            if frac > best_frac + 1e-12 {
                best_frac = frac;
                branch_var = Some(j);
            }
        }

        match branch_var {
            None => {
                if let Some(values) = integral_point(model, &node, &lp.values, deadline)? {
                    let obj = flip * model.objective_value(&values);
                    if incumbent.as_ref().is_none_or(|(best, _)| obj > *best) {
                        incumbent = Some((obj, values));
                    }
                }
            }
            Some(j) => {
                for fixed in [0.0, 1.0] {
                    let mut lower = node.lower.clone();
                    let mut upper = node.upper.clone();
                    lower[j] = fixed;
                    upper[j] = fixed;
                    seq += 1;
                    heap.push(Node {
                        bound,
                        depth: node.depth + 1,
                        seq,
                        lower,
                        upper,
                    });
                }
            }
        }
    }

    let status = if timed_out {
        MilpStatus::Timeout
    } else if incumbent.is_some() {
        MilpStatus::Optimal
    } else {
        MilpStatus::Infeasible
    };
    let (objective, values) = match incumbent {
        Some((_, values)) => (Some(model.objective_value(&values)), values),
        None => (None, Vec::new()),
    };
    Ok(MilpSolution {
        status,
        objective,
        values,
        nodes,
        wall_time: start.elapsed(),
    })
}

fn beaten(bound: f64, incumbent: &Option<(f64, Vec<f64>)>) -> bool {
    incumbent
        .as_ref()
        .is_some_and(|(best, _)| bound <= best + PRUNE_TOL)
}

/// Rounds the binaries of an integral LP point and checks it against the
/// original rows; if rounding broke a row, the continuous part is re-solved
/// with the binaries fixed.
fn integral_point(
    model: &MilpModel,
    node: &Node,
    lp_values: &[f64],
    deadline: Option<Instant>,
) -> Result<Option<Vec<f64>>, MilpError> {
    let mut values = lp_values.to_vec();
    for j in model.binaries() {
        values[j] = values[j].round();
    }
    for (x, v) in values.iter_mut().zip(&model.vars) {
        *x = x.clamp(v.lower, v.upper);
    }
    if model.max_violation(&values) <= ACCEPT_TOL {
        return Ok(Some(values));
    }
    let mut lower = node.lower.clone();
    let mut upper = node.upper.clone();
    for j in model.binaries() {
        lower[j] = values[j];
        upper[j] = values[j];
    }
    let lp = solve_with_bounds(model, &lower, &upper, deadline)?;
    if lp.status != LpStatus::Optimal {
        return Ok(None);
    }
    let mut values = lp.values;
    for j in model.binaries() {
        values[j] = values[j].round();
    }
    Ok((model.max_violation(&values) <= ACCEPT_TOL).then_some(values))
}
