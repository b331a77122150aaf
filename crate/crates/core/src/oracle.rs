//! Offline benchmark and performance-bound checks for the dynamic policy.
//!
//! For one worker, the offline problem is a 0/1 knapsack over rounds:
//! maximize `Σ γ(t)·β(t)` subject to `Σ β(t)·E(t) ≤ T·Ē`. With the whole
//! future known it is solved here by exhaustive enumeration, which is exact
//! and cheap for the short horizons the bound checks use.
//!
//! With queue floor zero, the dynamic rule is guaranteed to satisfy, for
//! every realization of the energies,
//!
//! ```text
//! u† ≤ u* + (T / 2V) · Σ_n α_n²
//! Σ_t β_n(t)·E_n(t) ≤ T·Ē_n + sqrt(T²·α_n² + 2·V·T·u*_n)
//! ```
//!
//! where `u = (1/T) Σ_t Σ_n γ(t)(1 − β_n(t))/N` is the weighted fraction of
//! unscheduled workers and `α_n` bounds the per-round energy deficit
//! `|β·E − Ē|`. These are proven inequalities, so they are checked with no
//! tolerance: every comparison below is made in exact rational arithmetic on
//! the recorded `f64` values.

use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{ToPrimitive, Zero};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::orchestrator::ExperimentResult;
use crate::scheduler::Policy;

/// Largest horizon the exhaustive genie accepts (2^24 schedules).
pub const EXHAUSTIVE_LIMIT: usize = 24;

/// One worker's view of a run: energies, weights, budget.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WorkerTrace {
    pub energies: Vec<f64>,
    pub gammas: Vec<f64>,
    pub budget: f64,
    pub num_workers: usize,
}

impl WorkerTrace {
    pub fn horizon(&self) -> usize {
        self.energies.len()
    }

    /// `(1/T) Σ γ(t)(1 − β(t))/N` for a schedule.
    pub fn utility(&self, schedule: &[bool]) -> f64 {
        let t = self.horizon() as f64;
        self.gammas
            .iter()
            .zip(schedule)
            .filter(|(_, &b)| !b)
            .map(|(g, _)| g)
            .sum::<f64>()
            / (t * self.num_workers as f64)
    }

    pub fn energy(&self, schedule: &[bool]) -> f64 {
        self.energies.iter().zip(schedule).filter(|(_, &b)| b).map(|(e, _)| e).sum()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenieSolution {
    pub schedule: Vec<bool>,
    /// Optimal per-worker utility `u*_n`.
    pub utility: f64,
    pub total_energy: f64,
}

/// Exact offline optimum by enumerating all `2^T` schedules.
///
/// Schedules are visited as integers with bit `t` set iff round `t` is
/// scheduled, and only a strictly better objective replaces the incumbent,
/// so among equal optima the one with the smallest such integer wins.
pub fn genie_optimal(trace: &WorkerTrace) -> Result<GenieSolution> {
    let horizon = trace.horizon();
    if horizon > EXHAUSTIVE_LIMIT {
        return Err(Error::HorizonTooLarge {
            horizon,
            limit: EXHAUSTIVE_LIMIT,
        });
    }
    if trace.gammas.len() != horizon {
        return Err(Error::LengthMismatch {
            expected: horizon,
            actual: trace.gammas.len(),
        });
    }
    let capacity = horizon as f64 * trace.budget;
    let mut best_mask = 0u32;
    let mut best_value = f64::NEG_INFINITY;
    for mask in 0u32..(1u32 << horizon) {
        let mut energy = 0.0;
        let mut value = 0.0;
        for t in 0..horizon {
            if mask & (1 << t) != 0 {
                energy += trace.energies[t];
                value += trace.gammas[t];
            }
        }
        if energy <= capacity && value > best_value {
            best_value = value;
            best_mask = mask;
        }
    }
    let schedule: Vec<bool> = (0..horizon).map(|t| best_mask & (1 << t) != 0).collect();
    Ok(GenieSolution {
        utility: trace.utility(&schedule),
        total_energy: trace.energy(&schedule),
        schedule,
    })
}

/// `α = max_t max(E(t) − Ē, Ē)`: the largest `|β·E(t) − Ē|` over both
/// choices of `β` in every round, so it bounds the deficit of any schedule.
pub fn alpha_bound(trace: &WorkerTrace) -> f64 {
    trace
        .energies
        .iter()
        .map(|&e| (e - trace.budget).max(trace.budget))
        .fold(trace.budget, f64::max)
}

/// [`alpha_bound`] in exact arithmetic; the float version can round the
/// difference `E − Ē` down by half an ulp.
pub fn alpha_exact(trace: &WorkerTrace) -> BigRational {
    let budget = exact(trace.budget);
    trace
        .energies
        .iter()
        .map(|&e| exact(e) - &budget)
        .fold(budget.clone(), |a, d| if d > a { d } else { a })
}

fn exact(x: f64) -> BigRational {
    BigRational::from_float(x).expect("finite value")
}

fn exact_int(n: usize) -> BigRational {
    BigRational::from_integer(BigInt::from(n))
}

/// Exact `(1/T) Σ_t γ(t)(1 − β(t))/N`.
fn exact_utility(trace: &WorkerTrace, schedule: &[bool]) -> BigRational {
    let sum = trace
        .gammas
        .iter()
        .zip(schedule)
        .filter(|(_, &b)| !b)
        .fold(BigRational::zero(), |acc, (g, _)| acc + exact(*g));
    sum / (exact_int(trace.horizon()) * exact_int(trace.num_workers))
}

fn exact_energy(trace: &WorkerTrace, schedule: &[bool]) -> BigRational {
    trace
        .energies
        .iter()
        .zip(schedule)
        .filter(|(_, &b)| b)
        .fold(BigRational::zero(), |acc, (e, _)| acc + exact(*e))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundReport {
    pub weight: f64,
    pub horizon: usize,
    /// Utility achieved by the online schedule, summed over workers.
    pub u_dagger: f64,
    /// Offline optimum, summed over workers.
    pub u_star: f64,
    pub alphas: Vec<f64>,
    /// `(T / 2V) Σ α²`.
    pub utility_bound_term: f64,
    /// `u* + (T/2V)Σα² − u†`.
    pub utility_slack: f64,
    pub energy_used: Vec<f64>,
    /// `T·Ē + sqrt(T²α² + 2VTu*_n)` per worker.
    pub energy_bound: Vec<f64>,
    pub energy_slack: Vec<f64>,
    pub utility_satisfied: bool,
    pub energy_satisfied: Vec<bool>,
    pub genie: Vec<GenieSolution>,
}

impl BoundReport {
    pub fn satisfied(&self) -> (bool, bool) {
        (self.utility_satisfied, self.energy_satisfied.iter().all(|&b| b))
    }

    pub fn all_satisfied(&self) -> bool {
        let (u, e) = self.satisfied();
        u && e
    }
}

/// Checks both performance bounds for realized online `schedules` against
/// the offline optimum on the same traces.
pub fn bound_report(traces: &[WorkerTrace], schedules: &[Vec<bool>], weight: f64) -> Result<BoundReport> {
    if traces.len() != schedules.len() || traces.is_empty() {
        return Err(Error::LengthMismatch {
            expected: traces.len(),
            actual: schedules.len(),
        });
    }
    let horizon = traces[0].horizon();
    if traces.iter().any(|t| t.horizon() != horizon) || schedules.iter().any(|s| s.len() != horizon) {
        return Err(Error::Precondition("traces and schedules must share one horizon".into()));
    }
    let genie: Vec<GenieSolution> = traces.iter().map(genie_optimal).collect::<Result<_>>()?;
    let alphas: Vec<f64> = traces.iter().map(alpha_bound).collect();

    let t_exact = exact_int(horizon);
    let v_exact = exact(weight);
    let two = exact_int(2);

    let u_dagger_x = traces
        .iter()
        .zip(schedules)
        .fold(BigRational::zero(), |acc, (tr, s)| acc + exact_utility(tr, s));
    let u_star_parts: Vec<BigRational> = traces
        .iter()
        .zip(&genie)
        .map(|(tr, g)| exact_utility(tr, &g.schedule))
        .collect();
    let u_star_x = u_star_parts.iter().fold(BigRational::zero(), |acc, u| acc + u);
    let alphas_x: Vec<BigRational> = traces.iter().map(alpha_exact).collect();
    let alpha_sq_sum = alphas_x.iter().fold(BigRational::zero(), |acc, a| acc + a * a);
    let term_x = &t_exact / (&two * &v_exact) * alpha_sq_sum;
    let utility_satisfied = u_dagger_x <= &u_star_x + &term_x;

    let mut energy_used = Vec::new();
    let mut energy_bound = Vec::new();
    let mut energy_slack = Vec::new();
    let mut energy_satisfied = Vec::new();
    for ((tr, s), (a, u_n)) in traces.iter().zip(schedules).zip(alphas_x.iter().zip(&u_star_parts)) {
        let used = exact_energy(tr, s);
        let excess = &used - &t_exact * exact(tr.budget);
        let radicand = &t_exact * &t_exact * a * a + &two * &v_exact * &t_exact * u_n;
        let ok = excess <= BigRational::zero() || &excess * &excess <= radicand;
        let radicand_f = radicand.to_f64().unwrap_or(f64::INFINITY);
        let bound = horizon as f64 * tr.budget + radicand_f.sqrt();
        let used_f = used.to_f64().unwrap_or(f64::INFINITY);
        energy_used.push(used_f);
        energy_bound.push(bound);
        energy_slack.push(bound - used_f);
        energy_satisfied.push(ok);
    }

    let u_dagger = u_dagger_x.to_f64().unwrap_or(f64::NAN);
    let u_star = u_star_x.to_f64().unwrap_or(f64::NAN);
    let utility_bound_term = term_x.to_f64().unwrap_or(f64::INFINITY);
    Ok(BoundReport {
        weight,
        horizon,
        u_dagger,
        u_star,
        alphas,
        utility_bound_term,
        utility_slack: u_star + utility_bound_term - u_dagger,
        energy_used,
        energy_bound,
        energy_slack,
        utility_satisfied,
        energy_satisfied,
        genie,
    })
}

/// Per-worker traces of a finished run.
pub fn worker_traces(result: &ExperimentResult) -> Vec<WorkerTrace> {
    let cfg = &result.config;
    let budgets = cfg.energy_budget.resolve(cfg.num_workers);
    let gammas = result.gammas();
    result
        .energy_traces()
        .into_iter()
        .zip(budgets)
        .map(|(energies, budget)| WorkerTrace {
            energies,
            gammas: gammas.clone(),
            budget,
            num_workers: cfg.num_workers,
        })
        .collect()
}

fn require_dynamic(result: &ExperimentResult) -> Result<()> {
    if result.config.policy != Policy::Dynamic {
        return Err(Error::Precondition(format!(
            "run used the {} policy, not dynamic",
            result.config.policy
        )));
    }
    Ok(())
}

/// Bound check for a dynamic run with queue floor zero.
pub fn check_theorem1(result: &ExperimentResult) -> Result<BoundReport> {
    require_dynamic(result)?;
    if result.config.queue_floor != 0.0 {
        return Err(Error::Precondition(format!(
            "bounds need queue_floor = 0, run used {}",
            result.config.queue_floor
        )));
    }
    bound_report(&worker_traces(result), &result.schedules(), result.config.weight)
}

/// Lyapunov quantities for one worker in one round, from the recorded
/// (floating-point) queue values.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DriftSlot {
    pub round: usize,
    pub queue: f64,
    /// `L = q²/2`.
    pub lyapunov: f64,
    /// `L(t+1) − L(t)`.
    pub drift: f64,
    /// `y = β·E − Ē`.
    pub deficit: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DriftCheck {
    /// `Δ ≤ y²/2 + q·y`
    SquareBound,
    /// `Δ ≤ α²/2 + q·y`
    AlphaBound,
    /// `Σ_t y(t) ≤ q(T)` (only checked with floor zero)
    DeficitSum,
    /// `q ≥ q_min`
    Floor,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DriftViolation {
    pub worker: usize,
    /// `None` for whole-horizon checks.
    pub round: Option<usize>,
    pub check: DriftCheck,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WorkerDrift {
    pub worker: usize,
    pub alpha: f64,
    pub slots: Vec<DriftSlot>,
    pub final_queue: f64,
    pub deficit_sum: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DriftReport {
    pub queue_floor: f64,
    pub workers: Vec<WorkerDrift>,
    pub violations: Vec<DriftViolation>,
    /// Largest gap between the recorded queues and an exact recomputation
    /// from the realized decisions, relative to `max(1, |q|)`.
    pub max_queue_deviation: f64,
}

impl DriftReport {
    pub fn holds(&self) -> bool {
        self.violations.is_empty()
    }
}

/// Lyapunov drift bookkeeping for a dynamic run.
///
/// The emitted slots use the run's own queue values. The inequalities are
/// checked on the queue trajectory recomputed exactly from the realized
/// decisions and energies, so the check has no rounding allowance; the
/// recorded queues are compared against that trajectory separately
/// (`max_queue_deviation`) and against the floor directly.
pub fn drift_trace(result: &ExperimentResult) -> Result<DriftReport> {
    require_dynamic(result)?;
    let traces = worker_traces(result);
    let schedules = result.schedules();
    let floor = result.config.queue_floor;
    let recorded: Vec<Vec<f64>> = (0..result.config.num_workers)
        .map(|n| {
            let mut q: Vec<f64> = result.records.iter().map(|r| r.queues[n]).collect();
            q.push(result.final_queues[n]);
            q
        })
        .collect();
    Ok(drift_from_traces(&traces, &schedules, &recorded, floor))
}

/// Drift checks from raw traces. `queues[n]` holds `T + 1` recorded values
/// `q(0), …, q(T)`.
pub fn drift_from_traces(traces: &[WorkerTrace], schedules: &[Vec<bool>], queues: &[Vec<f64>], floor: f64) -> DriftReport {
    let mut workers = Vec::new();
    let mut violations = Vec::new();
    let mut max_dev = 0.0f64;
    let half = BigRational::new(BigInt::from(1), BigInt::from(2));
    let floor_x = exact(floor);

    for (n, ((trace, sched), q_rec)) in traces.iter().zip(schedules).zip(queues).enumerate() {
        let alpha = alpha_bound(trace);
        let alpha_x = alpha_exact(trace);
        let budget_x = exact(trace.budget);
        let mut q = floor_x.clone();
        let mut deficit_sum = BigRational::zero();
        let mut slots = Vec::with_capacity(trace.horizon());

        for t in 0..trace.horizon() {
            let y = if sched[t] {
                exact(trace.energies[t]) - &budget_x
            } else {
                -budget_x.clone()
            };
            let next = {
                let cand = &q + &y;
                if cand > floor_x {
                    cand
                } else {
                    floor_x.clone()
                }
            };
            let drift = &half * (&next * &next - &q * &q);
            let qy = &q * &y;
            if drift > &half * &y * &y + &qy {
                violations.push(DriftViolation {
                    worker: n,
                    round: Some(t),
                    check: DriftCheck::SquareBound,
                });
            }
            if drift > &half * &alpha_x * &alpha_x + &qy {
                violations.push(DriftViolation {
                    worker: n,
                    round: Some(t),
                    check: DriftCheck::AlphaBound,
                });
            }
            let q_f = q.to_f64().unwrap_or(f64::NAN);
            max_dev = max_dev.max((q_f - q_rec[t]).abs() / q_rec[t].abs().max(1.0));
            if q_rec[t] < floor {
                violations.push(DriftViolation {
                    worker: n,
                    round: Some(t),
                    check: DriftCheck::Floor,
                });
            }
            let (lo, hi) = (q_rec[t], q_rec[t + 1]);
            slots.push(DriftSlot {
                round: t,
                queue: lo,
                lyapunov: 0.5 * lo * lo,
                drift: 0.5 * hi * hi - 0.5 * lo * lo,
                deficit: y.to_f64().unwrap_or(f64::NAN),
            });
            deficit_sum += &y;
            q = next;
        }

        let horizon = trace.horizon();
        if q_rec[horizon] < floor {
            violations.push(DriftViolation {
                worker: n,
                round: Some(horizon),
                check: DriftCheck::Floor,
            });
        }
        let q_final_f = q.to_f64().unwrap_or(f64::NAN);
        max_dev = max_dev.max((q_final_f - q_rec[horizon]).abs() / q_rec[horizon].abs().max(1.0));
        if floor == 0.0 && deficit_sum > q {
            violations.push(DriftViolation {
                worker: n,
                round: None,
                check: DriftCheck::DeficitSum,
            });
        }
        workers.push(WorkerDrift {
            worker: n,
            alpha,
            slots,
            final_queue: q_rec[horizon],
            deficit_sum: deficit_sum.to_f64().unwrap_or(f64::NAN),
        });
    }

    DriftReport {
        queue_floor: floor,
        workers,
        violations,
        max_queue_deviation: max_dev,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scheduler::run_dynamic;

    fn trace(energies: &[f64], budget: f64) -> WorkerTrace {
        WorkerTrace {
            energies: energies.to_vec(),
            gammas: vec![1.0; energies.len()],
            budget,
            num_workers: 1,
        }
    }

    #[test]
    fn genie_two_slot_example() {
        let g = genie_optimal(&trace(&[3.0, 4.0], 2.0)).unwrap();
        assert_eq!(g.schedule, vec![true, false]);
        assert_eq!(g.utility, 0.5);
        assert_eq!(g.total_energy, 3.0);
    }

    #[test]
    fn genie_unconstrained_and_infeasible() {
        let g = genie_optimal(&trace(&[1.0, 2.0, 3.0], 3.0)).unwrap();
        assert!(g.schedule.iter().all(|&b| b));
        assert_eq!(g.utility, 0.0);

        let mut tr = trace(&[10.0, 20.0, 30.0], 3.0);
        tr.gammas = vec![2.0, 1.5, 1.0];
        tr.num_workers = 2;
        let g = genie_optimal(&tr).unwrap();
        assert!(g.schedule.iter().all(|&b| !b));
        assert!((g.utility - 4.5 / 3.0 / 2.0).abs() < 1e-15);
    }

    #[test]
    fn genie_refuses_long_horizons() {
        let tr = trace(&[1.0; EXHAUSTIVE_LIMIT + 1], 1.0);
        assert!(matches!(genie_optimal(&tr), Err(Error::HorizonTooLarge { .. })));
    }

    #[test]
    fn alpha_examples() {
        assert_eq!(alpha_bound(&trace(&[3.0, 4.0], 2.0)), 2.0);
        assert_eq!(alpha_bound(&trace(&[1.0, 3.9, 2.0], 2.0)), 2.0);
        assert_eq!(alpha_bound(&trace(&[10.0], 1.0)), 9.0);
    }

    #[test]
    fn abundant_energy_gives_zero_utilities() {
        let tr = trace(&[1.0, 0.5, 2.0], 10.0);
        let run = run_dynamic(&tr.energies, &tr.gammas, tr.budget, 5.0, 0.0, 1);
        assert!(run.scheduled.iter().all(|&b| b));
        let r = bound_report(&[tr], &[run.scheduled], 5.0).unwrap();
        assert_eq!(r.u_dagger, 0.0);
        assert_eq!(r.u_star, 0.0);
        assert!(r.all_satisfied());
        assert!(r.utility_slack > 0.0);
    }

    #[test]
    fn bound_term_scales_inverse_with_weight() {
        let tr = trace(&[3.0, 8.0, 1.0, 6.0], 2.0);
        let s = vec![vec![true, false, true, false]];
        let a = bound_report(std::slice::from_ref(&tr), &s, 10.0).unwrap();
        let b = bound_report(&[tr], &s, 100.0).unwrap();
        assert!((a.utility_bound_term / b.utility_bound_term - 10.0).abs() < 1e-12);
    }

    #[test]
    fn drift_zero_when_idle_at_floor() {
        // E ≫ threshold so the worker is never scheduled; q stays 0
        let tr = trace(&[5.0, 5.0], 1.0);
        let report = drift_from_traces(&[tr], &[vec![false, false]], &[vec![0.0, 0.0, 0.0]], 0.0);
        assert!(report.holds());
        assert!(report.workers[0].slots.iter().all(|s| s.drift == 0.0));
    }

    #[test]
    fn drift_flags_recorded_queue_below_floor() {
        let tr = trace(&[1.0], 1.0);
        let report = drift_from_traces(&[tr], &[vec![false]], &[vec![0.3, 0.2]], 0.3);
        assert!(report
            .violations
            .iter()
            .any(|v| v.check == DriftCheck::Floor && v.round == Some(1)));
    }
}
