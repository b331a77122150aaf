//! Worker scheduling policies and the per-worker virtual energy queue.
//!
//! Three policies are provided:
//!
//! * [`Policy::AlwaysOn`] schedules everyone every round (unlimited energy).
//! * [`Policy::Myopic`] schedules a worker iff this round's transmit energy
//!   fits the per-round budget, `E ≤ Ē`.
//! * [`Policy::Dynamic`] is the drift-plus-penalty rule: schedule iff
//!   `q·E ≤ V·γ(t)/N`, then grow the queue by the energy overshoot,
//!   `q ← max(q + β·E − Ē, q_min)`.
//!
//! Every rule is per-worker: a decision never reads another worker's state.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Policy {
    AlwaysOn,
    Myopic,
    Dynamic,
}

impl std::str::FromStr for Policy {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s.to_ascii_lowercase().replace('-', "_").as_str() {
            "always_on" | "alwayson" => Ok(Policy::AlwaysOn),
            "myopic" => Ok(Policy::Myopic),
            "dynamic" => Ok(Policy::Dynamic),
            other => Err(format!("unknown policy `{other}`")),
        }
    }
}

impl std::fmt::Display for Policy {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            Policy::AlwaysOn => "always_on",
            Policy::Myopic => "myopic",
            Policy::Dynamic => "dynamic",
        };
        f.write_str(s)
    }
}

/// One affine piece of γ(t): `base + slope · (t − start_round)` for
/// `start_round ≤ t ≤ end_round` (inclusive; open-ended when `end_round` is
/// absent).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GammaSegment {
    pub start_round: usize,
    #[serde(default)]
    pub end_round: Option<usize>,
    pub base: f64,
    #[serde(default)]
    pub slope: f64,
}

impl GammaSegment {
    fn covers(&self, t: usize) -> bool {
        t >= self.start_round && self.end_round.is_none_or(|end| t <= end)
    }
}

/// Piecewise-affine weight on the scheduled fraction per round. The first
/// segment covering `t` wins.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct GammaSchedule(pub Vec<GammaSegment>);

impl GammaSchedule {
    /// γ = 2 through round 9, a linear ramp down to 1 over rounds 10..=14,
    /// then 1 forever.
    pub fn standard() -> Self {
        GammaSchedule(vec![
            GammaSegment {
                start_round: 0,
                end_round: Some(9),
                base: 2.0,
                slope: 0.0,
            },
            GammaSegment {
                start_round: 10,
                end_round: Some(14),
                base: 1.8,
                slope: -0.2,
            },
            GammaSegment {
                start_round: 15,
                end_round: None,
                base: 1.0,
                slope: 0.0,
            },
        ])
    }

    pub fn constant(value: f64) -> Self {
        GammaSchedule(vec![GammaSegment {
            start_round: 0,
            end_round: None,
            base: value,
            slope: 0.0,
        }])
    }

    pub fn gamma(&self, t: usize) -> Result<f64> {
        self.0
            .iter()
            .find(|seg| seg.covers(t))
            .map(|seg| seg.base + seg.slope * (t as f64 - seg.start_round as f64))
            .ok_or(Error::GammaOutOfRange { round: t })
    }

    /// Checks that every round in `0..rounds` is covered with γ > 0.
    pub fn check_horizon(&self, rounds: usize) -> std::result::Result<(), String> {
        for t in 0..rounds {
            match self.gamma(t) {
                Ok(g) if g > 0.0 && g.is_finite() => {}
                Ok(g) => return Err(format!("gamma({t}) = {g} is not positive")),
                Err(_) => return Err(format!("round {t} is not covered")),
            }
        }
        Ok(())
    }
}

/// Free-function form of [`GammaSchedule::gamma`] that also enforces the
/// horizon `t < rounds`.
pub fn gamma(t: usize, rounds: usize, schedule: &GammaSchedule) -> Result<f64> {
    if t >= rounds {
        return Err(Error::GammaOutOfRange { round: t });
    }
    schedule.gamma(t)
}

/// Scheduling outcome for one worker in one round.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Decision {
    pub scheduled: bool,
    pub energy_if_scheduled: f64,
    /// `V·γ/N` for the dynamic rule, `Ē` for myopic, +∞ for always-on.
    pub threshold: f64,
}

impl Decision {
    pub fn beta(&self) -> u8 {
        self.scheduled as u8
    }
}

pub fn myopic_decide(energy: f64, budget: f64) -> Decision {
    Decision {
        scheduled: energy <= budget,
        energy_if_scheduled: energy,
        threshold: budget,
    }
}

/// Compares the queue-weighted energy `q·E` with the weighted utility
/// `V·γ/N`. Ties schedule.
pub fn dynamic_decide(queue: f64, energy: f64, weight: f64, gamma: f64, num_workers: usize) -> Decision {
    let threshold = weight * gamma / num_workers as f64;
    Decision {
        scheduled: queue * energy <= threshold,
        energy_if_scheduled: energy,
        threshold,
    }
}

pub fn queue_update(queue: f64, scheduled: bool, energy: f64, budget: f64, floor: f64) -> f64 {
    let spent = if scheduled { energy } else { 0.0 };
    (queue + spent - budget).max(floor)
}

/// Virtual energy-deficit queue; starts at and never drops below its floor.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VirtualQueue {
    q: f64,
    floor: f64,
}

impl VirtualQueue {
    pub fn new(floor: f64) -> Self {
        Self { q: floor, floor }
    }

    pub fn value(&self) -> f64 {
        self.q
    }

    pub fn floor(&self) -> f64 {
        self.floor
    }

    pub fn update(&mut self, scheduled: bool, energy: f64, budget: f64) {
        self.q = queue_update(self.q, scheduled, energy, budget, self.floor);
    }
}

/// Per-round inputs shared by all workers' decisions.
#[derive(Debug, Clone, Copy)]
pub struct RoundContext<'a> {
    pub policy: Policy,
    pub gamma: f64,
    pub weight: f64,
    pub budgets: &'a [f64],
}

/// Applies the policy to each worker independently.
pub fn decide_all(ctx: &RoundContext<'_>, queues: &[f64], energies: &[f64]) -> Vec<Decision> {
    assert_eq!(queues.len(), energies.len());
    assert_eq!(ctx.budgets.len(), energies.len());
    let n = energies.len();
    energies
        .iter()
        .zip(queues)
        .zip(ctx.budgets)
        .map(|((&e, &q), &budget)| match ctx.policy {
            Policy::AlwaysOn => Decision {
                scheduled: true,
                energy_if_scheduled: e,
                threshold: f64::INFINITY,
            },
            Policy::Myopic => myopic_decide(e, budget),
            Policy::Dynamic => dynamic_decide(q, e, ctx.weight, ctx.gamma, n),
        })
        .collect()
}

/// Trajectory of the dynamic rule on a fixed energy trace.
#[derive(Debug, Clone, PartialEq)]
pub struct DynamicTrajectory {
    pub scheduled: Vec<bool>,
    /// `queues[t]` is the pre-decision queue of round `t`; one extra final
    /// entry holds q(T).
    pub queues: Vec<f64>,
}

/// Runs the dynamic rule for one worker over a known trace of energies and
/// weights. `num_workers` only enters through the `V·γ/N` threshold.
pub fn run_dynamic(
    energies: &[f64],
    gammas: &[f64],
    budget: f64,
    weight: f64,
    floor: f64,
    num_workers: usize,
) -> DynamicTrajectory {
    assert_eq!(energies.len(), gammas.len());
    let mut queue = VirtualQueue::new(floor);
    let mut queues = Vec::with_capacity(energies.len() + 1);
    let mut scheduled = Vec::with_capacity(energies.len());
    for (&e, &g) in energies.iter().zip(gammas) {
        queues.push(queue.value());
        let d = dynamic_decide(queue.value(), e, weight, g, num_workers);
        queue.update(d.scheduled, e, budget);
        scheduled.push(d.scheduled);
    }
    queues.push(queue.value());
    DynamicTrajectory { scheduled, queues }
}
