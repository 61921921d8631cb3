//! Bounded mixed-binary linear programs.
//!
//! A [`MilpModel`] holds binary and bounded continuous variables, a linear
//! objective and linear rows. The built-in engine runs best-bound
//! branch-and-bound over the binaries with LP relaxations solved by a
//! bounded-variable primal simplex (see [`simplex`]). Other engines can be
//! plugged in through [`MilpBackend`] and [`register_backend`].

mod branch;
mod export;
pub mod simplex;

use std::collections::BTreeMap;
use std::fmt;
use std::sync::{Arc, RwLock};
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use branch::solve_builtin;
pub use simplex::{solve_relaxation, LpSolution, LpStatus};

/// Distance from {0, 1} tolerated for a binary in an accepted solution.
pub const INTEGRALITY_TOL: f64 = 1e-6;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MilpError {
    #[error("constraint `{constraint}` references undeclared variable #{index}")]
    UnknownVariable { constraint: String, index: usize },
    #[error("variable `{0}` has a non-finite bound")]
    NonFiniteBound(String),
    #[error("variable `{0}` has lower bound above upper bound")]
    EmptyDomain(String),
    #[error("constraint `{0}` has a non-finite coefficient or right-hand side")]
    NonFiniteRow(String),
    #[error("objective coefficient of `{0}` is not finite")]
    NonFiniteObjective(String),
    #[error("a backend named `{0}` is already registered")]
    DuplicateBackend(String),
    #[error("no backend named `{0}` is registered")]
    UnknownBackend(String),
    #[error("simplex iteration limit reached")]
    IterationLimit,
    #[error("numerical failure: {0}")]
    Numerical(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct VarId(pub usize);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum VarKind {
    Binary,
    Continuous,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Variable {
    pub name: String,
    pub kind: VarKind,
    pub lower: f64,
    pub upper: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Sense {
    Maximize,
    Minimize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Cmp {
    Le,
    Ge,
    Eq,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Constraint {
    pub name: String,
    pub terms: Vec<(VarId, f64)>,
    pub cmp: Cmp,
    pub rhs: f64,
}

impl Constraint {
    pub fn activity(&self, values: &[f64]) -> f64 {
        self.terms.iter().map(|(v, c)| c * values[v.0]).sum()
    }

    /// Amount by which `values` violates this row (0 when satisfied).
    pub fn violation(&self, values: &[f64]) -> f64 {
        let lhs = self.activity(values);
        match self.cmp {
            Cmp::Le => (lhs - self.rhs).max(0.0),
            Cmp::Ge => (self.rhs - lhs).max(0.0),
            Cmp::Eq => (lhs - self.rhs).abs(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MilpModel {
    pub vars: Vec<Variable>,
    pub objective: Vec<f64>,
    pub sense: Sense,
    pub constraints: Vec<Constraint>,
    pub time_limit_ms: Option<u64>,
}

impl MilpModel {
    pub fn new(sense: Sense) -> Self {
        MilpModel {
            vars: Vec::new(),
            objective: Vec::new(),
            sense,
            constraints: Vec::new(),
            time_limit_ms: None,
        }
    }

    pub fn add_binary(&mut self, name: impl Into<String>) -> VarId {
        self.push_var(Variable {
            name: name.into(),
            kind: VarKind::Binary,
            lower: 0.0,
            upper: 1.0,
        })
    }

    pub fn add_continuous(&mut self, name: impl Into<String>, lower: f64, upper: f64) -> VarId {
        self.push_var(Variable {
            name: name.into(),
            kind: VarKind::Continuous,
            lower,
            upper,
        })
    }

    fn push_var(&mut self, var: Variable) -> VarId {
        self.vars.push(var);
        self.objective.push(0.0);
        VarId(self.vars.len() - 1)
    }

    pub fn set_objective(&mut self, var: VarId, coef: f64) {
        self.objective[var.0] = coef;
    }

    pub fn add_objective(&mut self, var: VarId, coef: f64) {
        self.objective[var.0] += coef;
    }

    pub fn add_constraint(
        &mut self,
        name: impl Into<String>,
        terms: Vec<(VarId, f64)>,
        cmp: Cmp,
        rhs: f64,
    ) {
        self.constraints.push(Constraint {
            name: name.into(),
            terms,
            cmp,
            rhs,
        });
    }

    pub fn num_vars(&self) -> usize {
        self.vars.len()
    }

    pub fn binaries(&self) -> impl Iterator<Item = usize> + '_ {
        self.vars
            .iter()
            .enumerate()
            .filter(|(_, v)| v.kind == VarKind::Binary)
            .map(|(i, _)| i)
    }

    pub fn objective_value(&self, values: &[f64]) -> f64 {
        self.objective.iter().zip(values).map(|(c, x)| c * x).sum()
    }

    /// Largest bound or row violation of `values`.
    pub fn max_violation(&self, values: &[f64]) -> f64 {
        let bounds = self
            .vars
            .iter()
            .zip(values)
            .map(|(v, &x)| (v.lower - x).max(x - v.upper).max(0.0));
        let rows = self.constraints.iter().map(|c| c.violation(values));
        bounds.chain(rows).fold(0.0, f64::max)
    }

    pub fn validate(&self) -> Result<(), MilpError> {
        for (var, c) in self.vars.iter().zip(&self.objective) {
            if !var.lower.is_finite() || !var.upper.is_finite() {
                return Err(MilpError::NonFiniteBound(var.name.clone()));
            }
            if var.lower > var.upper {
                return Err(MilpError::EmptyDomain(var.name.clone()));
            }
            if !c.is_finite() {
                return Err(MilpError::NonFiniteObjective(var.name.clone()));
            }
        }
        if self.objective.len() != self.vars.len() {
            return Err(MilpError::NonFiniteObjective("<objective length>".into()));
        }
        for row in &self.constraints {
            if !row.rhs.is_finite() {
                return Err(MilpError::NonFiniteRow(row.name.clone()));
            }
            for &(v, c) in &row.terms {
                if v.0 >= self.vars.len() {
                    return Err(MilpError::UnknownVariable {
                        constraint: row.name.clone(),
                        index: v.0,
                    });
                }
                if !c.is_finite() {
                    return Err(MilpError::NonFiniteRow(row.name.clone()));
                }
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub enum MilpStatus {
    Optimal,
    Infeasible,
    Timeout,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct MilpSolution {
    pub status: MilpStatus,
    /// Objective of the reported assignment; `None` without an incumbent.
    pub objective: Option<f64>,
    /// Empty when no incumbent exists.
    pub values: Vec<f64>,
    pub nodes: u64,
    #[serde(with = "duration_ms")]
    pub wall_time: Duration,
}

impl MilpSolution {
    pub fn value(&self, var: VarId) -> f64 {
        self.values[var.0]
    }

    pub fn is_one(&self, var: VarId) -> bool {
        self.values[var.0] > 0.5
    }

    pub fn has_incumbent(&self) -> bool {
        !self.values.is_empty()
    }
}

mod duration_ms {
    use serde::{Deserialize, Deserializer, Serializer};
    use std::time::Duration;

    pub fn serialize<S: Serializer>(d: &Duration, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_f64(d.as_secs_f64() * 1e3)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Duration, D::Error> {
        let ms = f64::deserialize(d)?;
        Ok(Duration::from_secs_f64(ms.max(0.0) / 1e3))
    }
}

/// An external MILP engine honoring the same contract as the built-in one.
pub trait MilpBackend: Send + Sync {
    fn name(&self) -> &str;
    fn solve(&self, model: &MilpModel) -> Result<MilpSolution, MilpError>;
}

impl fmt::Debug for dyn MilpBackend {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "MilpBackend({})", self.name())
    }
}

static REGISTRY: RwLock<BTreeMap<String, Arc<dyn MilpBackend>>> = RwLock::new(BTreeMap::new());

pub fn register_backend(adapter: Arc<dyn MilpBackend>) -> Result<(), MilpError> {
    let mut registry = REGISTRY.write().expect("backend registry poisoned");
    let name = adapter.name().to_string();
    if name == BUILTIN || registry.contains_key(&name) {
        return Err(MilpError::DuplicateBackend(name));
    }
    registry.insert(name, adapter);
    Ok(())
}

pub fn lookup_backend(name: &str) -> Result<Arc<dyn MilpBackend>, MilpError> {
    REGISTRY
        .read()
        .expect("backend registry poisoned")
        .get(name)
        .cloned()
        .ok_or_else(|| MilpError::UnknownBackend(name.to_string()))
}

pub const BUILTIN: &str = "builtin";

/// Routes solves to a backend and enforces a wall-clock deadline shared by
/// every model solved through it.
#[derive(Clone, Default)]
pub struct Engine {
    backend: Option<Arc<dyn MilpBackend>>,
    deadline: Option<Instant>,
}

impl fmt::Debug for Engine {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Engine")
            .field(
                "backend",
                &self.backend.as_ref().map(|b| b.name()).unwrap_or(BUILTIN),
            )
            .field("deadline", &self.deadline)
            .finish()
    }
}

impl Engine {
    pub fn builtin() -> Self {
        Engine::default()
    }

    /// Engine routed to a registered backend (`"builtin"` selects the
    /// built-in solver).
    pub fn named(name: &str) -> Result<Self, MilpError> {
        if name == BUILTIN {
            return Ok(Engine::builtin());
        }
        Ok(Engine {
            backend: Some(lookup_backend(name)?),
            deadline: None,
        })
    }

    pub fn with_backend(backend: Arc<dyn MilpBackend>) -> Self {
        Engine {
            backend: Some(backend),
            deadline: None,
        }
    }

    pub fn with_deadline(mut self, deadline: Option<Instant>) -> Self {
        self.deadline = deadline;
        self
    }

    pub fn with_time_limit(self, limit: Option<Duration>) -> Self {
        let deadline = limit.map(|l| Instant::now() + l);
        self.with_deadline(deadline)
    }

    pub fn deadline(&self) -> Option<Instant> {
        self.deadline
    }

    pub fn expired(&self) -> bool {
        self.deadline.is_some_and(|d| Instant::now() >= d)
    }

    pub fn backend_name(&self) -> &str {
        self.backend.as_ref().map(|b| b.name()).unwrap_or(BUILTIN)
    }

    pub fn solve(&self, model: &MilpModel) -> Result<MilpSolution, MilpError> {
        let mut limited;
        let model = match self.deadline {
            Some(deadline) => {
                let left = deadline.saturating_duration_since(Instant::now());
                let left_ms = left.as_millis() as u64;
                limited = model.clone();
                limited.time_limit_ms = Some(match model.time_limit_ms {
                    Some(own) => own.min(left_ms),
                    None => left_ms,
                });
                &limited
            }
            None => model,
        };
        match &self.backend {
            Some(backend) => backend.solve(model),
            None => solve_builtin(model),
        }
    }
}

/// Solve with the built-in engine.
pub fn solve(model: &MilpModel) -> Result<MilpSolution, MilpError> {
    solve_builtin(model)
}

pub use export::to_lp_format;

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_unknown_variable() {
        let mut m = MilpModel::new(Sense::Maximize);
        let x = m.add_binary("x");
        m.add_constraint("bad", vec![(x, 1.0), (VarId(7), 1.0)], Cmp::Le, 1.0);
        assert_eq!(
            m.validate(),
            Err(MilpError::UnknownVariable {
                constraint: "bad".into(),
                index: 7
            })
        );
        assert!(solve(&m).is_err());
    }

    #[test]
    fn rejects_infinite_continuous_bound() {
        let mut m = MilpModel::new(Sense::Minimize);
        m.add_continuous("free", f64::NEG_INFINITY, 1.0);
        assert_eq!(m.validate(), Err(MilpError::NonFiniteBound("free".into())));
    }

    #[test]
    fn duplicate_backend_names_are_refused() {
        struct Named;
        impl MilpBackend for Named {
            fn name(&self) -> &str {
                "dup-test"
            }
            fn solve(&self, model: &MilpModel) -> Result<MilpSolution, MilpError> {
                solve_builtin(model)
            }
        }
        register_backend(Arc::new(Named)).unwrap();
        assert_eq!(
            register_backend(Arc::new(Named)),
            Err(MilpError::DuplicateBackend("dup-test".into()))
        );
        assert!(Engine::named("dup-test").is_ok());
        assert!(matches!(
            Engine::named("nope"),
            Err(MilpError::UnknownBackend(_))
        ));
    }
}
