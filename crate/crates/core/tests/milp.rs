use std::sync::Arc;

use cex_core::milp::{
    register_backend, solve, solve_relaxation, Cmp, Engine, LpStatus, MilpBackend, MilpError,
    MilpModel, MilpSolution, MilpStatus, Sense, VarKind,
};
use minilp::{ComparisonOp, OptimizationDirection, Problem};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_model(rng: &mut ChaCha8Rng, binaries: usize, continuous: usize, rows: usize) -> MilpModel {
    let sense = if rng.gen_bool(0.5) {
        Sense::Maximize
    } else {
        Sense::Minimize
    };
    let mut m = MilpModel::new(sense);
    for i in 0..binaries {
        let v = m.add_binary(format!("b{i}"));
        m.set_objective(v, rng.gen_range(-6..=10) as f64 / 2.0);
    }
    for i in 0..continuous {
        let lo = rng.gen_range(-3..=1) as f64;
        let hi = lo + rng.gen_range(0..=6) as f64 * 0.75;
        let v = m.add_continuous(format!("c{i}"), lo, hi);
        m.set_objective(v, rng.gen_range(-6..=10) as f64 / 3.0);
    }
    let n = m.num_vars();
    for r in 0..rows {
        let mut terms = Vec::new();
        for j in 0..n {
            if rng.gen_bool(0.6) {
                terms.push((cex_core::milp::VarId(j), rng.gen_range(-4..=6) as f64));
            }
        }
        let cmp = match rng.gen_range(0..10) {
            0..=6 => Cmp::Le,
            7..=8 => Cmp::Ge,
            _ => Cmp::Eq,
        };
        let rhs = rng.gen_range(-2..=8) as f64;
        m.add_constraint(format!("r{r}"), terms, cmp, rhs);
    }
    m
}

/// Solves the LP left after fixing the binaries with an independent simplex.
fn residual_lp(model: &MilpModel, fixed: &[(usize, f64)]) -> Option<(f64, Vec<f64>)> {
    let dir = match model.sense {
        Sense::Maximize => OptimizationDirection::Maximize,
        Sense::Minimize => OptimizationDirection::Minimize,
    };
    let mut p = Problem::new(dir);
    let mut vars = Vec::new();
    for (j, v) in model.vars.iter().enumerate() {
        let (lo, hi) = match fixed.iter().find(|(k, _)| *k == j) {
            Some(&(_, x)) => (x, x),
            None => (v.lower, v.upper),
        };
        vars.push(p.add_var(model.objective[j], (lo, hi)));
    }
    for row in &model.constraints {
        let expr: Vec<_> = row.terms.iter().map(|&(v, c)| (vars[v.0], c)).collect();
        let op = match row.cmp {
            Cmp::Le => ComparisonOp::Le,
            Cmp::Ge => ComparisonOp::Ge,
            Cmp::Eq => ComparisonOp::Eq,
        };
        p.add_constraint(&expr[..], op, row.rhs);
    }
    match p.solve() {
        Ok(sol) => Some((sol.objective(), vars.iter().map(|&v| sol[v]).collect())),
        Err(minilp::Error::Infeasible) => None,
        Err(e) => panic!("reference solver failed: {e:?}"),
    }
}

fn better(sense: Sense, a: f64, b: f64) -> bool {
    match sense {
        Sense::Maximize => a > b,
        Sense::Minimize => a < b,
    }
}

struct Enumerator;

impl MilpBackend for Enumerator {
    fn name(&self) -> &str {
        "enumerate-minilp"
    }

    fn solve(&self, model: &MilpModel) -> Result<MilpSolution, MilpError> {
        let start = std::time::Instant::now();
        let bins: Vec<usize> = model.binaries().collect();
        let mut best: Option<(f64, Vec<f64>)> = None;
        for mask in 0u32..(1 << bins.len()) {
            let fixed: Vec<(usize, f64)> = bins
                .iter()
                .enumerate()
                .map(|(k, &j)| (j, ((mask >> k) & 1) as f64))
                .collect();
            if let Some((obj, vals)) = residual_lp(model, &fixed) {
                if best.as_ref().is_none_or(|(b, _)| better(model.sense, obj, *b)) {
                    best = Some((obj, vals));
                }
            }
        }
        Ok(match best {
            Some((obj, values)) => MilpSolution {
                status: MilpStatus::Optimal,
                objective: Some(obj),
                values,
                nodes: 1 << bins.len(),
                wall_time: start.elapsed(),
            },
            None => MilpSolution {
                status: MilpStatus::Infeasible,
                objective: None,
                values: Vec::new(),
                nodes: 1 << bins.len(),
                wall_time: start.elapsed(),
            },
        })
    }
}

fn assert_solution_valid(model: &MilpModel, s: &MilpSolution) {
    assert_eq!(s.status, MilpStatus::Optimal);
    assert!(model.max_violation(&s.values) <= 1e-6);
    for (v, x) in model.vars.iter().zip(&s.values) {
        if v.kind == VarKind::Binary {
            assert!(x.abs() <= 1e-6 || (x - 1.0).abs() <= 1e-6);
        }
    }
    assert!((model.objective_value(&s.values) - s.objective.unwrap()).abs() <= 1e-9);
}

#[test]
fn builtin_matches_registered_enumeration_backend() {
    register_backend(Arc::new(Enumerator)).unwrap();
    let other = Engine::named("enumerate-minilp").unwrap();
    let builtin = Engine::builtin();
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for case in 0..100 {
        let bins = rng.gen_range(1..=6);
        let cont = rng.gen_range(0..=3);
        let rows = rng.gen_range(1..=5);
        let model = random_model(&mut rng, bins, cont, rows);
        let ours = builtin.solve(&model).unwrap();
        let theirs = other.solve(&model).unwrap();
        assert_eq!(ours.status, theirs.status, "case {case}");
        if ours.status == MilpStatus::Optimal {
            assert_solution_valid(&model, &ours);
            let diff = (ours.objective.unwrap() - theirs.objective.unwrap()).abs();
            assert!(diff <= 1e-6, "case {case}: {ours:?} vs {theirs:?}");
        }
    }
}

#[test]
fn branch_and_bound_equals_binary_enumeration() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for case in 0..200 {
        let bins = rng.gen_range(1..=12);
        let cont = rng.gen_range(0..=2);
        let rows = rng.gen_range(1..=6);
        let model = random_model(&mut rng, bins, cont, rows);
        let bb = solve(&model).unwrap();

        let mut best: Option<f64> = None;
        for mask in 0u32..(1 << bins) {
            let mut fixed = model.clone();
            for j in 0..bins {
                let x = ((mask >> j) & 1) as f64;
                fixed.vars[j].lower = x;
                fixed.vars[j].upper = x;
            }
            let lp = solve_relaxation(&fixed).unwrap();
            if lp.status == LpStatus::Optimal {
                if best.is_none_or(|b| better(model.sense, lp.objective, b)) {
                    best = Some(lp.objective);
                }
            }
        }
        match best {
            None => assert_eq!(bb.status, MilpStatus::Infeasible, "case {case}"),
            Some(obj) => {
                assert_solution_valid(&model, &bb);
                assert!(
                    (bb.objective.unwrap() - obj).abs() <= 1e-6,
                    "case {case}: {:?} vs {obj}",
                    bb.objective
                );
            }
        }
    }
}

#[test]
fn lp_optima_are_dual_feasible_and_match_reference() {
    let mut rng = ChaCha8Rng::seed_from_u64(23);
    let tol = 1e-6;
    for case in 0..300 {
        let cont = rng.gen_range(1..=8);
        let rows = rng.gen_range(1..=8);
        let model = random_model(&mut rng, 0, cont, rows);
        let lp = solve_relaxation(&model).unwrap();
        let reference = residual_lp(&model, &[]);
        let Some((ref_obj, _)) = reference else {
            assert_eq!(lp.status, LpStatus::Infeasible, "case {case}");
            continue;
        };
        assert_eq!(lp.status, LpStatus::Optimal, "case {case}");
        assert!((lp.objective - ref_obj).abs() <= 1e-6, "case {case}");
        assert!(model.max_violation(&lp.values) <= 1e-6);

        // In minimization form a variable at its lower bound needs d >= 0,
        // at its upper bound d <= 0, strictly inside d = 0.
        let s = if model.sense == Sense::Maximize { -1.0 } else { 1.0 };
        for (j, v) in model.vars.iter().enumerate() {
            let mut d = model.objective[j];
            for (i, row) in model.constraints.iter().enumerate() {
                for &(var, c) in &row.terms {
                    if var.0 == j {
                        d -= lp.duals[i] * c;
                    }
                }
            }
            assert!((d - lp.reduced_costs[j]).abs() <= 1e-6, "case {case}");
            let d = s * d;
            let x = lp.values[j];
            let at_lo = (x - v.lower).abs() <= tol;
            let at_hi = (x - v.upper).abs() <= tol;
            if !at_lo {
                assert!(d <= tol, "case {case} var {j}: d={d}");
            }
            if !at_hi {
                assert!(d >= -tol, "case {case} var {j}: d={d}");
            }
        }
        for (i, row) in model.constraints.iter().enumerate() {
            let y = s * lp.duals[i];
            let slack_active = (lp.row_activity[i] - row.rhs).abs() <= tol;
            match row.cmp {
                Cmp::Le => {
                    assert!(y <= tol, "case {case} row {i}");
                    assert!(slack_active || y.abs() <= tol, "case {case} row {i}");
                }
                Cmp::Ge => {
                    assert!(y >= -tol, "case {case} row {i}");
                    assert!(slack_active || y.abs() <= tol, "case {case} row {i}");
                }
                Cmp::Eq => {}
            }
        }
    }
}

#[test]
fn degenerate_lp_terminates() {
    // Many redundant rows through the same vertex.
    let mut m = MilpModel::new(Sense::Maximize);
    let x: Vec<_> = (0..4)
        .map(|j| m.add_continuous(format!("x{j}"), 0.0, 5.0))
        .collect();
    for &v in &x {
        m.set_objective(v, 1.0);
    }
    for k in 0..30 {
        let terms = x
            .iter()
            .enumerate()
            .map(|(j, &v)| (v, 1.0 + ((j + k) % 3) as f64))
            .collect();
        m.add_constraint(format!("r{k}"), terms, Cmp::Le, 0.0);
    }
    let lp = solve_relaxation(&m).unwrap();
    assert_eq!(lp.status, LpStatus::Optimal);
    assert!(lp.objective.abs() < 1e-9);
}

#[test]
fn repeated_solves_are_identical() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for _ in 0..20 {
        let model = random_model(&mut rng, 8, 2, 5);
        let a = solve(&model).unwrap();
        let b = solve(&model).unwrap();
        assert_eq!(a.status, b.status);
        assert_eq!(a.values, b.values);
        assert_eq!(a.nodes, b.nodes);
    }
}
