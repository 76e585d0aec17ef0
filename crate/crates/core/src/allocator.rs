//! Proportional-fair resource allocation across APs.
//!
//! The problem is
//!
//! ```text
//! maximize   sum_k sum_l ln(1 + xi_k e[k,l] r[k,l])
//! subject to sum_k e[k,l] <= rho_l                   (per-AP capacity)
//!            e_min[k] <= sum_l e[k,l] <= e_max[k]    (per-user bounds)
//!            e >= 0
//! ```
//!
//! [`solve_dual`] relaxes the three constraint families with multipliers
//! `lambda`, `eta_max`, `eta_min`; each AP then solves its own closed-form
//! subproblem and the multipliers follow projected subgradient steps.

use std::fmt;
use std::str::FromStr;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};

/// Feasibility tolerance relative to the largest AP capacity.
pub const FEASIBILITY_TOL: f64 = 1e-6;

#[derive(Clone, Debug, PartialEq)]
pub struct AllocationProblem {
    /// `K x L` per-link rates.
    pub rates: DMatrix<f64>,
    pub e_min: Vec<f64>,
    pub e_max: Vec<f64>,
    pub capacity: Vec<f64>,
    pub weights: Vec<f64>,
}

impl AllocationProblem {
    pub fn new(
        rates: DMatrix<f64>,
        e_min: Vec<f64>,
        e_max: Vec<f64>,
        capacity: Vec<f64>,
        weights: Vec<f64>,
    ) -> Result<Self> {
        let problem = Self {
            rates,
            e_min,
            e_max,
            capacity,
            weights,
        };
        problem.validate()?;
        Ok(problem)
    }

    /// Unit weights for every user.
    pub fn unweighted(
        rates: DMatrix<f64>,
        e_min: Vec<f64>,
        e_max: Vec<f64>,
        capacity: Vec<f64>,
    ) -> Result<Self> {
        let k = rates.nrows();
        Self::new(rates, e_min, e_max, capacity, vec![1.0; k])
    }

    pub fn validate(&self) -> Result<()> {
        let (k, l) = self.rates.shape();
        if k == 0 || l == 0 {
            return Err(invalid("problem needs at least one user and one AP"));
        }
        if self.e_min.len() != k || self.e_max.len() != k || self.weights.len() != k {
            return Err(invalid(format!("per-user vectors must have length {k}")));
        }
        if self.capacity.len() != l {
            return Err(invalid(format!("capacity vector must have length {l}")));
        }
        if self.rates.iter().any(|r| !(r.is_finite() && *r >= 0.0)) {
            return Err(invalid("rates must be finite and non-negative"));
        }
        for u in 0..k {
            let (lo, hi) = (self.e_min[u], self.e_max[u]);
            if !(lo.is_finite() && hi.is_finite() && 0.0 <= lo && lo <= hi) {
                return Err(invalid(format!(
                    "user {u}: need 0 <= e_min <= e_max, got [{lo}, {hi}]"
                )));
            }
            if !(self.weights[u].is_finite() && self.weights[u] > 0.0) {
                return Err(invalid(format!("user {u}: weight must be positive")));
            }
        }
        if self.capacity.iter().any(|c| !(c.is_finite() && *c > 0.0)) {
            return Err(invalid("AP capacities must be positive"));
        }
        let need: f64 = self.e_min.iter().sum();
        let have: f64 = self.capacity.iter().sum();
        if need > have {
            return Err(Error::Infeasible(format!(
                "total minimum demand {need} exceeds total capacity {have}"
            )));
        }
        Ok(())
    }

    pub fn num_users(&self) -> usize {
        self.rates.nrows()
    }

    pub fn num_aps(&self) -> usize {
        self.rates.ncols()
    }

    /// Absolute feasibility tolerance, `1e-6 * max(rho)`.
    pub fn tolerance(&self) -> f64 {
        FEASIBILITY_TOL * self.max_capacity()
    }

    pub fn max_capacity(&self) -> f64 {
        self.capacity.iter().copied().fold(0.0, f64::max)
    }

    fn check_shape(&self, e: &DMatrix<f64>) -> Result<()> {
        if e.shape() != self.rates.shape() {
            return Err(Error::InvalidAllocation(format!(
                "allocation is {:?}, problem is {:?}",
                e.shape(),
                self.rates.shape()
            )));
        }
        Ok(())
    }
}

/// `sum ln(1 + xi e r)`.
pub fn utility(e: &DMatrix<f64>, problem: &AllocationProblem) -> Result<f64> {
    problem.check_shape(e)?;
    if let Some(v) = e.iter().find(|v| !(**v >= 0.0 && v.is_finite())) {
        return Err(Error::InvalidAllocation(format!(
            "entry {v} is not a finite non-negative value"
        )));
    }
    Ok(utility_unchecked(e, problem))
}

fn utility_unchecked(e: &DMatrix<f64>, problem: &AllocationProblem) -> f64 {
    let mut total = 0.0;
    for l in 0..e.ncols() {
        for k in 0..e.nrows() {
            total += (problem.weights[k] * e[(k, l)] * problem.rates[(k, l)]).ln_1p();
        }
    }
    total
}

/// `sum e r`, the rate-weighted resource total.
pub fn sum_rate(e: &DMatrix<f64>, problem: &AllocationProblem) -> f64 {
    e.component_mul(&problem.rates).sum()
}

/// Largest violation over all three constraint families and `e >= 0`.
pub fn max_violation(e: &DMatrix<f64>, problem: &AllocationProblem) -> f64 {
    let mut worst: f64 = e.iter().map(|v| (-v).max(0.0)).fold(0.0, f64::max);
    for (l, cap) in problem.capacity.iter().enumerate() {
        worst = worst.max(e.column(l).sum() - cap);
    }
    for k in 0..e.nrows() {
        let total = e.row(k).sum();
        worst = worst
            .max(total - problem.e_max[k])
            .max(problem.e_min[k] - total);
    }
    worst.max(0.0)
}

pub fn is_feasible(e: &DMatrix<f64>, problem: &AllocationProblem) -> bool {
    e.shape() == problem.rates.shape()
        && e.iter().all(|v| v.is_finite())
        && max_violation(e, problem) <= problem.tolerance()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Dual,
    Exhaustive,
    Uniform,
    Surrogate,
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Method::Dual => "dual",
            Method::Exhaustive => "exhaustive",
            Method::Uniform => "uniform",
            Method::Surrogate => "surrogate",
        })
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "dual" => Ok(Method::Dual),
            "exhaustive" => Ok(Method::Exhaustive),
            "uniform" => Ok(Method::Uniform),
            "surrogate" => Ok(Method::Surrogate),
            other => Err(invalid(format!("unknown method {other:?}"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TraceRow {
    pub iter: usize,
    /// Best feasible utility found so far.
    pub utility: f64,
    /// Constraint violation of the raw iterate.
    pub max_violation: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct AllocationSolution {
    pub allocation: DMatrix<f64>,
    pub utility: f64,
    pub feasible: bool,
    pub trace: Vec<TraceRow>,
    pub method: Method,
    pub iterations: usize,
    pub converged: bool,
    /// Lowest Lagrangian dual bound seen (dual solver only).
    pub dual_bound: Option<f64>,
    pub diagnostic: Option<String>,
}

impl AllocationSolution {
    /// Record for a finished allocation, with utility and feasibility filled in.
    pub fn finished(allocation: DMatrix<f64>, problem: &AllocationProblem, method: Method) -> Self {
        let utility = utility_unchecked(&allocation, problem);
        let feasible = is_feasible(&allocation, problem);
        Self {
            allocation,
            utility,
            feasible,
            trace: Vec::new(),
            method,
            iterations: 0,
            converged: true,
            dual_bound: None,
            diagnostic: None,
        }
    }

    pub fn sum_rate(&self, problem: &AllocationProblem) -> f64 {
        sum_rate(&self.allocation, problem)
    }

    /// Trace as CSV with header `iter,utility,max_violation`.
    pub fn trace_csv(&self) -> String {
        let mut out = String::from("iter,utility,max_violation\n");
        for row in &self.trace {
            out.push_str(&format!(
                "{},{},{}\n",
                row.iter, row.utility, row.max_violation
            ));
        }
        out
    }
}

/// Default cap on the number of exhaustive-search grid points.
pub const EXHAUSTIVE_BUDGET: f64 = 1e8;

/// Best feasible point on a uniform grid, by depth-first enumeration.
pub fn solve_exhaustive(problem: &AllocationProblem, grid_step: f64) -> Result<AllocationSolution> {
    solve_exhaustive_with_budget(problem, grid_step, EXHAUSTIVE_BUDGET)
}

pub fn solve_exhaustive_with_budget(
    problem: &AllocationProblem,
    grid_step: f64,
    budget: f64,
) -> Result<AllocationSolution> {
    problem.validate()?;
    if !(grid_step.is_finite() && grid_step > 0.0) {
        return Err(invalid("grid step must be positive"));
    }
    let (k, l) = problem.rates.shape();
    // variable order: row-major over (user, AP)
    let mut tables: Vec<(Vec<f64>, Vec<f64>)> = Vec::with_capacity(k * l);
    let mut points = 1.0f64;
    for u in 0..k {
        for a in 0..l {
            let cap = problem.capacity[a].min(problem.e_max[u]);
            let n = (cap / grid_step + 1e-9).floor() as usize + 1;
            points *= n as f64;
            let values: Vec<f64> = (0..n).map(|j| j as f64 * grid_step).collect();
            let gains = values
                .iter()
                .map(|v| (problem.weights[u] * v * problem.rates[(u, a)]).ln_1p())
                .collect();
            tables.push((values, gains));
        }
    }
    if points > budget {
        return Err(Error::ProblemTooLarge { points, budget });
    }
    // optimistic utility of all variables from index i onward
    let mut bound = vec![0.0; k * l + 1];
    for i in (0..k * l).rev() {
        bound[i] = bound[i + 1] + tables[i].1.last().copied().unwrap_or(0.0);
    }
    let row_capacity: Vec<f64> = (0..k)
        .map(|u| {
            problem
                .capacity
                .iter()
                .map(|c| c.min(problem.e_max[u]))
                .sum()
        })
        .collect();

    let eps = 1e-12 * problem.max_capacity().max(1.0);
    let mut search = Search {
        problem,
        tables: &tables,
        bound: &bound,
        row_capacity: &row_capacity,
        eps,
        l,
        load: vec![0.0; l],
        row: vec![0.0; k],
        current: vec![0; k * l],
        best: None,
        best_utility: f64::NEG_INFINITY,
    };
    search.descend(0, 0.0);

    let Some(best) = search.best else {
        return Err(Error::Infeasible("no feasible grid point".into()));
    };
    let allocation = DMatrix::from_fn(k, l, |u, a| tables[u * l + a].0[best[u * l + a]]);
    let mut sol = AllocationSolution::finished(allocation, problem, Method::Exhaustive);
    sol.iterations = points as usize;
    sol.trace.push(TraceRow {
        iter: 0,
        utility: sol.utility,
        max_violation: max_violation(&sol.allocation, problem),
    });
    Ok(sol)
}

struct Search<'a> {
    problem: &'a AllocationProblem,
    tables: &'a [(Vec<f64>, Vec<f64>)],
    bound: &'a [f64],
    row_capacity: &'a [f64],
    eps: f64,
    l: usize,
    load: Vec<f64>,
    row: Vec<f64>,
    current: Vec<usize>,
    best: Option<Vec<usize>>,
    best_utility: f64,
}

impl Search<'_> {
    fn descend(&mut self, i: usize, value: f64) {
        if value + self.bound[i] <= self.best_utility {
            return;
        }
        if i == self.tables.len() {
            self.best_utility = value;
            self.best = Some(self.current.clone());
            return;
        }
        let (u, a) = (i / self.l, i % self.l);
        let p = self.problem;
        // capacity this user can still reach at the APs after this one
        let later: f64 = (a + 1..self.l).map(|b| p.capacity[b].min(p.e_max[u])).sum();
        debug_assert!(later <= self.row_capacity[u]);
        let (values, gains) = &self.tables[i];
        for j in (0..values.len()).rev() {
            let v = values[j];
            let load = self.load[a] + v;
            let row = self.row[u] + v;
            if load > p.capacity[a] + self.eps || row > p.e_max[u] + self.eps {
                continue;
            }
            if row + later < p.e_min[u] - self.eps {
                // larger values were already tried; smaller ones fall further short
                break;
            }
            self.load[a] = load;
            self.row[u] = row;
            self.current[i] = j;
            self.descend(i + 1, value + gains[j]);
            self.load[a] -= v;
            self.row[u] -= v;
        }
    }
}

/// Step sizes for the multiplier updates.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum StepSchedule {
    Constant(f64),
    /// `scale * a / (b + i)`.
    Diminishing {
        a: f64,
        b: f64,
        scale: f64,
    },
}

impl StepSchedule {
    pub fn step(&self, iteration: usize) -> f64 {
        match *self {
            StepSchedule::Constant(s) => s,
            StepSchedule::Diminishing { a, b, scale } => scale * a / (b + iteration as f64),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct MultiplierState {
    /// Per-AP capacity multipliers.
    pub lambda: Vec<f64>,
    /// Per-user multipliers for `sum_l e <= e_max`.
    pub eta_max: Vec<f64>,
    /// Per-user multipliers for `sum_l e >= e_min`.
    pub eta_min: Vec<f64>,
    pub iteration: usize,
    pub schedule: StepSchedule,
}

impl MultiplierState {
    pub fn uniform(k: usize, l: usize, value: f64, schedule: StepSchedule) -> Self {
        Self {
            lambda: vec![value; l],
            eta_max: vec![value; k],
            eta_min: vec![value; k],
            iteration: 0,
            schedule,
        }
    }

    /// `mu_k = lambda_l + eta_max[k] - eta_min[k]`.
    pub fn price(&self, user: usize, ap: usize) -> f64 {
        self.lambda[ap] + self.eta_max[user] - self.eta_min[user]
    }
}

/// Maximizer of `ln(1 + xi r e) - mu e` over `0 <= e <= cap`.
///
/// For `mu > 0` this is `1/mu - 1/(xi r)` clipped to the box; otherwise the
/// objective is non-decreasing and the answer is `cap`. A zero-rate link is
/// linear in `e` and sits at whichever end of the box `-mu` favors.
pub fn kkt_allocation(mu: f64, xi: f64, r: f64, cap: f64) -> f64 {
    if r <= 0.0 {
        return if mu < 0.0 { cap } else { 0.0 };
    }
    if mu <= 0.0 {
        return cap;
    }
    (1.0 / mu - 1.0 / (xi * r)).clamp(0.0, cap)
}

/// Closed-form allocations of AP `ap` to every user under the current prices.
pub fn per_ap_best_response(
    ap: usize,
    state: &MultiplierState,
    problem: &AllocationProblem,
) -> Result<Vec<f64>> {
    let l = problem.num_aps();
    if ap >= l {
        return Err(Error::Index { index: ap, len: l });
    }
    if state.lambda.len() != l || state.eta_max.len() != problem.num_users() {
        return Err(invalid("multiplier state does not match the problem"));
    }
    Ok((0..problem.num_users())
        .map(|k| {
            kkt_allocation(
                state.price(k, ap),
                problem.weights[k],
                problem.rates[(k, ap)],
                problem.e_max[k],
            )
        })
        .collect())
}

/// One projected subgradient step on all three multiplier families.
pub fn update_multipliers(
    state: &MultiplierState,
    e: &DMatrix<f64>,
    problem: &AllocationProblem,
) -> MultiplierState {
    let step = state.schedule.step(state.iteration);
    let lambda = state
        .lambda
        .iter()
        .enumerate()
        .map(|(l, lam)| (lam - step * (problem.capacity[l] - e.column(l).sum())).max(0.0))
        .collect();
    let totals: Vec<f64> = (0..e.nrows()).map(|k| e.row(k).sum()).collect();
    let eta_max = state
        .eta_max
        .iter()
        .zip(&totals)
        .zip(&problem.e_max)
        .map(|((eta, t), hi)| (eta - step * (hi - t)).max(0.0))
        .collect();
    let eta_min = state
        .eta_min
        .iter()
        .zip(&totals)
        .zip(&problem.e_min)
        .map(|((eta, t), lo)| (eta - step * (t - lo)).max(0.0))
        .collect();
    MultiplierState {
        lambda,
        eta_max,
        eta_min,
        iteration: state.iteration + 1,
        schedule: state.schedule,
    }
}

/// Lagrangian evaluated at `e`; an upper bound on the optimum when `e` is
/// the best response to the multipliers.
fn lagrangian(e: &DMatrix<f64>, state: &MultiplierState, problem: &AllocationProblem) -> f64 {
    let mut value = utility_unchecked(e, problem);
    for (l, lam) in state.lambda.iter().enumerate() {
        value += lam * (problem.capacity[l] - e.column(l).sum());
    }
    for k in 0..e.nrows() {
        let t = e.row(k).sum();
        value +=
            state.eta_max[k] * (problem.e_max[k] - t) + state.eta_min[k] * (t - problem.e_min[k]);
    }
    value
}

/// How `solve_dual` moves the multipliers between best responses.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MultiplierUpdate {
    /// Damped projected Newton steps on the dual function.
    Newton,
    /// Projected subgradient steps with the diminishing schedule.
    Subgradient,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolverConfig {
    pub update: MultiplierUpdate,
    /// Tolerance on the raw iterate's constraint violation, relative to `max(rho)`.
    pub tol: f64,
    pub max_iters: usize,
    pub step_a: f64,
    pub step_b: f64,
    /// Scale subgradient steps by `max(xi r) / mean(rho)` so they track the
    /// problem's units.
    pub normalize_steps: bool,
    /// Starting value of every multiplier; multiplied by `max(xi r)` when
    /// `normalize_steps` is set.
    pub init_multiplier: f64,
    /// Stop once the duality gap falls below this fraction of `max(1, |U|)`.
    pub gap_tol: f64,
    /// Subgradient iterations between feasibility repairs of the iterate
    /// and its running average.
    pub repair_every: usize,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            update: MultiplierUpdate::Newton,
            tol: 1e-4,
            max_iters: 5000,
            step_a: 1.0,
            step_b: 10.0,
            normalize_steps: true,
            init_multiplier: 0.1,
            gap_tol: 1e-7,
            repair_every: 10,
        }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.tol > 0.0 && self.gap_tol >= 0.0) {
            return Err(invalid("solver tolerances must be positive"));
        }
        if self.max_iters == 0 || self.repair_every == 0 {
            return Err(invalid("max_iters and repair_every must be at least 1"));
        }
        if !(self.step_a > 0.0 && self.step_b >= 0.0 && self.init_multiplier >= 0.0) {
            return Err(invalid("step schedule parameters must be positive"));
        }
        Ok(())
    }

    pub fn schedule(&self, problem: &AllocationProblem) -> StepSchedule {
        let scale = if self.normalize_steps {
            let mean_rho = problem.capacity.iter().sum::<f64>() / problem.num_aps() as f64;
            match max_weighted_rate(problem) {
                kappa if kappa > 0.0 => kappa / mean_rho,
                _ => 1.0 / mean_rho,
            }
        } else {
            1.0
        };
        StepSchedule::Diminishing {
            a: self.step_a,
            b: self.step_b,
            scale,
        }
    }
}

fn max_weighted_rate(problem: &AllocationProblem) -> f64 {
    let mut kappa: f64 = 0.0;
    for k in 0..problem.num_users() {
        for r in problem.rates.row(k).iter() {
            kappa = kappa.max(problem.weights[k] * r);
        }
    }
    kappa
}

/// Best feasible allocation seen so far.
struct Incumbent<'a> {
    problem: &'a AllocationProblem,
    allocation: DMatrix<f64>,
    utility: f64,
}

impl<'a> Incumbent<'a> {
    fn new(problem: &'a AllocationProblem) -> Self {
        let (k, l) = problem.rates.shape();
        let mut inc = Self {
            problem,
            allocation: DMatrix::zeros(k, l),
            utility: f64::NEG_INFINITY,
        };
        inc.offer(&DMatrix::zeros(k, l));
        inc
    }

    fn offer(&mut self, candidate: &DMatrix<f64>) {
        let repaired = repair_allocation(candidate, self.problem);
        if is_feasible(&repaired, self.problem) {
            let u = utility_unchecked(&repaired, self.problem);
            if u > self.utility {
                self.utility = u;
                self.allocation = repaired;
            }
        }
    }

    fn gap_closed(&self, bound: f64, gap_tol: f64) -> bool {
        self.utility.is_finite() && bound - self.utility <= gap_tol * self.utility.abs().max(1.0)
    }
}

fn respond(state: &MultiplierState, problem: &AllocationProblem) -> Result<DMatrix<f64>> {
    let (k, l) = problem.rates.shape();
    let mut e = DMatrix::zeros(k, l);
    for a in 0..l {
        for (u, v) in per_ap_best_response(a, state, problem)?
            .into_iter()
            .enumerate()
        {
            e[(u, a)] = v;
        }
    }
    Ok(e)
}

struct Outcome {
    iterations: usize,
    converged: bool,
    dual_bound: f64,
    trace: Vec<TraceRow>,
    note: Option<String>,
}

/// Lagrangian dual decomposition.
///
/// Each iteration every AP computes its closed-form best response to the
/// current prices, the repaired response competes for the incumbent, and the
/// multipliers move against the constraint slacks. The Lagrangian at a best
/// response bounds the optimum from above, so the loop stops once that
/// bound is within `gap_tol` of the incumbent, or after `max_iters`.
pub fn solve_dual(problem: &AllocationProblem, cfg: &SolverConfig) -> Result<AllocationSolution> {
    let (k, l) = problem.rates.shape();
    let kappa = max_weighted_rate(problem);
    let init = if cfg.normalize_steps && kappa > 0.0 {
        cfg.init_multiplier * kappa
    } else {
        cfg.init_multiplier
    };
    let start = MultiplierState::uniform(k, l, init, cfg.schedule(problem));
    solve_dual_from(problem, cfg, &start, None)
}

/// [`solve_dual`] warm-started from `start`, with `hint` (if any) offered
/// to the incumbent before the first iteration.
pub fn solve_dual_from(
    problem: &AllocationProblem,
    cfg: &SolverConfig,
    start: &MultiplierState,
    hint: Option<&DMatrix<f64>>,
) -> Result<AllocationSolution> {
    problem.validate()?;
    cfg.validate()?;
    let (k, l) = problem.rates.shape();
    if start.lambda.len() != l || start.eta_max.len() != k || start.eta_min.len() != k {
        return Err(invalid("multiplier state does not match the problem"));
    }
    let mut incumbent = Incumbent::new(problem);
    if let Some(h) = hint {
        if h.shape() != (k, l) {
            return Err(invalid("hint allocation does not match the problem"));
        }
        incumbent.offer(h);
    }
    let outcome = if max_weighted_rate(problem) == 0.0 {
        // nothing to gain anywhere; the repaired zero allocation is optimal
        Outcome {
            iterations: 0,
            converged: true,
            dual_bound: incumbent.utility,
            trace: Vec::new(),
            note: None,
        }
    } else {
        match cfg.update {
            MultiplierUpdate::Newton => run_newton(problem, cfg, start, &mut incumbent)?,
            MultiplierUpdate::Subgradient => run_subgradient(problem, cfg, start, &mut incumbent)?,
        }
    };
    if !incumbent.utility.is_finite() {
        return Err(Error::Infeasible("no feasible allocation found".into()));
    }
    let mut sol = AllocationSolution::finished(incumbent.allocation, problem, Method::Dual);
    sol.trace = outcome.trace;
    sol.iterations = outcome.iterations;
    sol.converged = outcome.converged;
    sol.dual_bound = Some(outcome.dual_bound);
    if !outcome.converged {
        let gap = outcome.dual_bound - sol.utility;
        sol.diagnostic = Some(match outcome.note {
            Some(note) => format!("{note}; duality gap {gap:.3e}"),
            None => format!(
                "stopped after {} iterations with duality gap {gap:.3e}",
                outcome.iterations
            ),
        });
    }
    Ok(sol)
}

/// Step-weighted ergodic averaging of the subgradient iterates.
fn run_subgradient(
    problem: &AllocationProblem,
    cfg: &SolverConfig,
    start: &MultiplierState,
    incumbent: &mut Incumbent,
) -> Result<Outcome> {
    let (k, l) = problem.rates.shape();
    let tol = cfg.tol * problem.max_capacity();
    let mut state = start.clone();
    let mut dual_bound = f64::INFINITY;
    let mut average = DMatrix::zeros(k, l);
    let mut weight = 0.0;
    let mut trace = Vec::new();
    let mut iterations = 0;
    let mut converged = false;

    for i in 0..cfg.max_iters {
        iterations = i + 1;
        let e = respond(&state, problem)?;
        let step = state.schedule.step(state.iteration);
        average += &e * step;
        weight += step;
        let violation = max_violation(&e, problem);
        let check = i % cfg.repair_every == 0 || i + 1 == cfg.max_iters || violation <= tol;
        if check {
            dual_bound = dual_bound.min(lagrangian(&e, &state, problem));
            incumbent.offer(&e);
            incumbent.offer(&(&average / weight));
        }
        trace.push(TraceRow {
            iter: i,
            utility: incumbent.utility,
            max_violation: violation,
        });
        if check && incumbent.gap_closed(dual_bound, cfg.gap_tol) {
            converged = true;
            break;
        }
        state = update_multipliers(&state, &e, problem);
    }
    Ok(Outcome {
        iterations,
        converged,
        dual_bound,
        trace,
        note: None,
    })
}

/// Gradient of the dual function: the constraint slacks at `e`, ordered
/// `[lambda (L), eta_max (K), eta_min (K)]`.
fn dual_gradient(e: &DMatrix<f64>, problem: &AllocationProblem) -> Vec<f64> {
    let (k, l) = e.shape();
    let mut g = Vec::with_capacity(l + 2 * k);
    g.extend((0..l).map(|a| problem.capacity[a] - e.column(a).sum()));
    let totals: Vec<f64> = (0..k).map(|u| e.row(u).sum()).collect();
    g.extend((0..k).map(|u| problem.e_max[u] - totals[u]));
    g.extend((0..k).map(|u| totals[u] - problem.e_min[u]));
    g
}

fn state_from(y: &[f64], k: usize, l: usize) -> MultiplierState {
    MultiplierState {
        lambda: y[..l].to_vec(),
        eta_max: y[l..l + k].to_vec(),
        eta_min: y[l + k..].to_vec(),
        iteration: 0,
        schedule: StepSchedule::Constant(0.0),
    }
}

/// Projected Newton on the dual with Levenberg-Marquardt damping.
///
/// The best response is continuous in the prices, so the dual function is
/// differentiable with gradient equal to the constraint slacks. Its Hessian
/// is `sum w s s^T` over links strictly inside their box, with
/// `w = 1/mu^2` and `s` the price's dependence on the multipliers.
fn run_newton(
    problem: &AllocationProblem,
    cfg: &SolverConfig,
    start: &MultiplierState,
    incumbent: &mut Incumbent,
) -> Result<Outcome> {
    let (k, l) = problem.rates.shape();
    let n = l + 2 * k;
    let mean_rho = problem.capacity.iter().sum::<f64>() / l as f64;
    // curvature floor with the units of d(slack)/d(price)
    let h_floor = mean_rho / max_weighted_rate(problem);
    let dual_at = |y: &[f64]| -> Result<(f64, DMatrix<f64>)> {
        let state = state_from(y, k, l);
        let e = respond(&state, problem)?;
        Ok((lagrangian(&e, &state, problem), e))
    };

    let mut y: Vec<f64> = start
        .lambda
        .iter()
        .chain(&start.eta_max)
        .chain(&start.eta_min)
        .map(|v| v.max(0.0))
        .collect();
    let (mut g, mut e) = dual_at(&y)?;
    let mut dual_bound = f64::INFINITY;
    let mut damping = 1e-4;
    let mut trace = Vec::new();
    let mut iterations = 0;
    let mut converged = false;
    let mut note = None;

    for i in 0..cfg.max_iters {
        iterations = i + 1;
        dual_bound = dual_bound.min(g);
        incumbent.offer(&e);
        trace.push(TraceRow {
            iter: i,
            utility: incumbent.utility,
            max_violation: max_violation(&e, problem),
        });
        if incumbent.gap_closed(dual_bound, cfg.gap_tol) {
            converged = true;
            break;
        }

        let grad = dual_gradient(&e, problem);
        let mut hess = DMatrix::<f64>::zeros(n, n);
        for u in 0..k {
            for a in 0..l {
                let v = e[(u, a)];
                if !(v > 0.0 && v < problem.e_max[u]) {
                    continue;
                }
                let mu = y[a] + y[l + u] - y[l + k + u];
                let w = 1.0 / (mu * mu);
                let idx = [a, l + u, l + k + u];
                let sign = [1.0, 1.0, -1.0];
                for p in 0..3 {
                    for q in 0..3 {
                        hess[(idx[p], idx[q])] += w * sign[p] * sign[q];
                    }
                }
            }
        }
        let free: Vec<usize> = (0..n).filter(|&j| y[j] > 0.0 || grad[j] < 0.0).collect();
        if free.is_empty() {
            note = Some("no descent direction at the bound".to_string());
            break;
        }

        let mut accepted = None;
        'damping: for _ in 0..12 {
            let m = free.len();
            let mut sys = DMatrix::from_fn(m, m, |p, q| hess[(free[p], free[q])]);
            for (p, &j) in free.iter().enumerate() {
                sys[(p, p)] += damping * hess[(j, j)].max(h_floor);
            }
            let rhs = nalgebra::DVector::from_iterator(m, free.iter().map(|&j| -grad[j]));
            let Some(dir) = sys.cholesky().map(|c| c.solve(&rhs)) else {
                damping *= 100.0;
                continue;
            };
            let mut t = 1.0;
            for _ in 0..30 {
                let mut trial = y.clone();
                for (p, &j) in free.iter().enumerate() {
                    trial[j] = (y[j] + t * dir[p]).max(0.0);
                }
                let predicted: f64 = (0..n).map(|j| grad[j] * (trial[j] - y[j])).sum();
                let (g_trial, e_trial) = dual_at(&trial)?;
                if g_trial <= g + 1e-4 * predicted {
                    accepted = Some((trial, g_trial, e_trial));
                    break 'damping;
                }
                t *= 0.5;
            }
            damping *= 100.0;
        }
        match accepted {
            Some((trial, g_trial, e_trial)) => {
                y = trial;
                g = g_trial;
                e = e_trial;
                damping = (damping / 10.0).max(1e-12);
            }
            None => {
                note = Some(format!("line search stalled at iteration {i}"));
                break;
            }
        }
    }
    Ok(Outcome {
        iterations,
        converged,
        dual_bound,
        trace,
        note,
    })
}

/// Move `e` onto the feasible set.
///
/// In order: clamp to `e >= 0`, scale overloaded AP columns down to
/// capacity, scale users above `e_max` down, then fill `e_min` deficits
/// from spare capacity (best links first) and, failing that, from users
/// holding more than their own minimum. Feasible inputs are returned as is.
pub fn repair_allocation(e: &DMatrix<f64>, problem: &AllocationProblem) -> DMatrix<f64> {
    if is_feasible(e, problem) {
        return e.clone();
    }
    let (k, l) = problem.rates.shape();
    let mut e = e.map(|v| if v.is_finite() { v.max(0.0) } else { 0.0 });
    for a in 0..l {
        let s = e.column(a).sum();
        if s > problem.capacity[a] {
            e.column_mut(a).scale_mut(problem.capacity[a] / s);
        }
    }
    for u in 0..k {
        let t = e.row(u).sum();
        if t > problem.e_max[u] {
            e.row_mut(u).scale_mut(problem.e_max[u] / t);
        }
    }
    for u in 0..k {
        let mut deficit = problem.e_min[u] - e.row(u).sum();
        if deficit <= 0.0 {
            continue;
        }
        let mut order: Vec<usize> = (0..l).collect();
        order.sort_by(|&x, &y| problem.rates[(u, y)].total_cmp(&problem.rates[(u, x)]));
        for &a in &order {
            let spare = (problem.capacity[a] - e.column(a).sum()).max(0.0);
            let take = deficit.min(spare);
            e[(u, a)] += take;
            deficit -= take;
            if deficit <= 0.0 {
                break;
            }
        }
        for &a in &order {
            if deficit <= 0.0 {
                break;
            }
            for j in (0..k).filter(|&j| j != u) {
                let surplus = (e.row(j).sum() - problem.e_min[j]).max(0.0);
                let take = deficit.min(surplus).min(e[(j, a)]);
                e[(j, a)] -= take;
                e[(u, a)] += take;
                deficit -= take;
                if deficit <= 0.0 {
                    break;
                }
            }
        }
    }
    e
}

/// `e[k,l] = rho_l / K`, ignoring user bounds.
pub fn uniform_allocation(problem: &AllocationProblem) -> AllocationSolution {
    let (k, l) = problem.rates.shape();
    let allocation = DMatrix::from_fn(k, l, |_, a| problem.capacity[a] / k as f64);
    let mut sol = AllocationSolution::finished(allocation, problem, Method::Uniform);
    sol.trace.push(TraceRow {
        iter: 0,
        utility: sol.utility,
        max_violation: max_violation(&sol.allocation, problem),
    });
    sol
}
