//! Plug-in electric vehicle charging benchmark.
//!
//! Each vehicle picks per-slot charging powers `ξ_t ∈ [0, max_charge_rate]`
//! so that its state of charge stays within the battery capacity and ends at
//! or above the requested target. Its cost is `γ'ξ` with slot prices `γ`. The
//! fleet shares a per-slot grid limit `Σ ξ_i ≤ b`, turned into an equality with
//! per-vehicle slacks `s_i ∈ [0, s̄]`:
//!
//! ```text
//! x_i = [ξ_i; s_i],   A_i = [I I],   Σ A_i x_i = b.
//! ```
//!
//! Units: power in kW, energy in kWh, prices in currency per kWh; `γ` is the
//! price times the slot length, so `γ'ξ` is the energy bill.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::engine::EngineConfig;
use crate::network::{ConsensusMatrix, Graph, NetworkError};
use crate::problem::{
    split_rhs, Agent, ConstraintCoupledProblem, CouplingBlock, LocalObjective, Polyhedron, ProblemError, SplitMode,
};
use crate::scalar::Scalar;

#[derive(Debug, Error)]
pub enum PevError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error(
        "vehicle {vehicle}: target {target:.3} kWh is unreachable from {initial:.3} kWh \
         (capacity {capacity:.3} kWh, at most {max_energy:.3} kWh can be charged)"
    )]
    Unreachable {
        vehicle: usize,
        initial: f64,
        target: f64,
        capacity: f64,
        max_energy: f64,
    },
    #[error(transparent)]
    Problem(#[from] ProblemError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase", default)]
pub struct PevConfig {
    pub n_vehicles: usize,
    pub horizon: usize,
    /// Slot length in hours.
    pub slot_hours: f64,
    /// Range of the fleet-wide per-slot energy price.
    pub price_range: [f64; 2],
    /// Relative per-vehicle deviation from the fleet price (uniform in ±spread).
    pub price_spread: f64,
    pub battery_capacity_range: [f64; 2],
    pub initial_soc_range: [f64; 2],
    pub target_soc_range: [f64; 2],
    pub max_charge_rate: f64,
    /// Explicit per-slot grid limit; calibrated from the fleet when absent.
    pub grid_cap: Option<Vec<f64>>,
    /// Calibrated cap is this fraction of the uncoordinated peak load
    /// (but never below 1.2 times the average load the fleet needs).
    pub cap_factor: f64,
    /// Slack upper bound `s̄`; defaults to `‖b‖∞`.
    pub slack_cap: Option<f64>,
    pub seed: u64,
}

impl Default for PevConfig {
    fn default() -> Self {
        Self {
            n_vehicles: 20,
            horizon: 24,
            slot_hours: 1.0 / 3.0,
            price_range: [0.019, 0.035],
            price_spread: 0.05,
            battery_capacity_range: [20.0, 40.0],
            initial_soc_range: [2.0, 8.0],
            target_soc_range: [12.0, 20.0],
            max_charge_rate: 4.0,
            grid_cap: None,
            cap_factor: 0.6,
            slack_cap: None,
            seed: 0,
        }
    }
}

/// Penalty the desk preset uses.
pub const DESK_C: f64 = 1e-3;

/// Edge probability of the communication graph the presets run on.
pub const PRESET_EDGE_PROB: f64 = 0.2;

impl PevConfig {
    pub fn paper_scale() -> Self {
        Self {
            n_vehicles: 100,
            ..Self::default()
        }
    }

    pub fn desk_scale() -> Self {
        Self::default()
    }

    fn check(&self) -> Result<(), PevError> {
        let bad = |msg: String| Err(PevError::Config(msg));
        if self.n_vehicles == 0 || self.horizon == 0 {
            return bad("need at least one vehicle and one slot".into());
        }
        for (name, [lo, hi]) in [
            ("priceRange", self.price_range),
            ("batteryCapacityRange", self.battery_capacity_range),
            ("initialSocRange", self.initial_soc_range),
            ("targetSocRange", self.target_soc_range),
        ] {
            if !(lo.is_finite() && hi.is_finite() && 0.0 <= lo && lo <= hi) {
                return bad(format!("{name} must be a nonnegative interval, got [{lo}, {hi}]"));
            }
        }
        for (name, v) in [
            ("slotHours", self.slot_hours),
            ("maxChargeRate", self.max_charge_rate),
            ("capFactor", self.cap_factor),
        ] {
            if !(v.is_finite() && v > 0.0) {
                return bad(format!("{name} must be positive, got {v}"));
            }
        }
        if !(0.0..1.0).contains(&self.price_spread) {
            return bad(format!("priceSpread must lie in [0, 1), got {}", self.price_spread));
        }
        if let Some(cap) = &self.grid_cap {
            if cap.len() != self.horizon || cap.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
                return bad(format!("gridCap needs {} nonnegative entries", self.horizon));
            }
        }
        Ok(())
    }
}

/// One drawn vehicle.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct Vehicle {
    /// Cost per kW in each slot.
    pub gamma: Vec<f64>,
    pub capacity: f64,
    pub initial_soc: f64,
    pub target_soc: f64,
}

impl Vehicle {
    fn need(&self) -> f64 {
        (self.target_soc - self.initial_soc).max(0.0)
    }
}

/// A generated fleet before it is assembled into a coupled problem.
#[derive(Debug, Clone)]
pub struct PevInstance<T: Scalar> {
    pub agents: Vec<Agent<T>>,
    pub vehicles: Vec<Vehicle>,
    pub grid_cap: Vec<f64>,
    pub slack_cap: f64,
    /// Inequalities per local set, box bounds included.
    pub local_inequalities: usize,
}

impl<T: Scalar> PevInstance<T> {
    pub fn into_problem(self) -> Result<ConstraintCoupledProblem<T>, PevError> {
        let b = DVector::from_iterator(self.grid_cap.len(), self.grid_cap.iter().map(|&v| T::lit(v)));
        Ok(ConstraintCoupledProblem::new(self.agents, b)?)
    }
}

fn draw(rng: &mut ChaCha8Rng, [lo, hi]: [f64; 2]) -> f64 {
    if hi > lo {
        rng.gen_range(lo..hi)
    } else {
        lo
    }
}

/// Draws the fleet; the random stream does not depend on the grid cap.
pub fn draw_vehicles(config: &PevConfig) -> Result<Vec<Vehicle>, PevError> {
    config.check()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let t = config.horizon;
    let base: Vec<f64> = (0..t).map(|_| draw(&mut rng, config.price_range)).collect();
    let mut fleet = Vec::with_capacity(config.n_vehicles);
    for i in 0..config.n_vehicles {
        let gamma = base
            .iter()
            .map(|&p| {
                let jitter = if config.price_spread > 0.0 {
                    rng.gen_range(-config.price_spread..config.price_spread)
                } else {
                    0.0
                };
                p * (1.0 + jitter) * config.slot_hours
            })
            .collect();
        let capacity = draw(&mut rng, config.battery_capacity_range);
        let initial_soc = draw(&mut rng, config.initial_soc_range);
        let target_soc = draw(&mut rng, config.target_soc_range);
        let max_energy = config.max_charge_rate * config.slot_hours * t as f64;
        if target_soc > capacity || initial_soc > capacity || target_soc - initial_soc > max_energy {
            return Err(PevError::Unreachable {
                vehicle: i,
                initial: initial_soc,
                target: target_soc,
                capacity,
                max_energy,
            });
        }
        fleet.push(Vehicle {
            gamma,
            capacity,
            initial_soc,
            target_soc,
        });
    }
    Ok(fleet)
}

/// Charging each vehicle at full rate in its cheapest slots (the minimizer
/// without the grid limit), summed over the fleet.
pub fn uncoordinated_load(fleet: &[Vehicle], config: &PevConfig) -> Vec<f64> {
    let t = config.horizon;
    let mut load = vec![0.0; t];
    for v in fleet {
        let mut order: Vec<usize> = (0..t).collect();
        order.sort_by(|&a, &b| v.gamma[a].total_cmp(&v.gamma[b]).then(a.cmp(&b)));
        let mut remaining = v.need();
        for slot in order {
            if remaining <= 0.0 {
                break;
            }
            let energy = (config.max_charge_rate * config.slot_hours).min(remaining);
            load[slot] += energy / config.slot_hours;
            remaining -= energy;
        }
    }
    load
}

fn calibrated_cap(fleet: &[Vehicle], config: &PevConfig) -> Vec<f64> {
    let t = config.horizon;
    let peak = uncoordinated_load(fleet, config).into_iter().fold(0.0, f64::max);
    let total_need: f64 = fleet.iter().map(Vehicle::need).sum();
    let average = total_need / (t as f64 * config.slot_hours);
    vec![(config.cap_factor * peak).max(1.2 * average); t]
}

fn vehicle_agent<T: Scalar>(
    v: &Vehicle,
    config: &PevConfig,
    slack_cap: f64,
    share: DVector<T>,
) -> Result<Agent<T>, PevError> {
    let t = config.horizon;
    let n = 2 * t;
    let lit = T::lit;
    let lin = DVector::from_fn(n, |k, _| if k < t { lit(v.gamma[k]) } else { T::zero() });
    let objective = LocalObjective::linear(lin);
    let lower = DVector::zeros(n);
    let upper = DVector::from_fn(n, |k, _| if k < t { lit(config.max_charge_rate) } else { lit(slack_cap) });
    // soc_0 + h Σ_{τ≤t} ξ_τ ≤ capacity for every t, and soc_0 + h Σ ξ ≥ target.
    let h = lit(config.slot_hours);
    let mut ineq_a = DMatrix::zeros(t + 1, n);
    let mut ineq_b = DVector::zeros(t + 1);
    for row in 0..t {
        for tau in 0..=row {
            ineq_a[(row, tau)] = h;
        }
        ineq_b[row] = lit(v.capacity - v.initial_soc);
    }
    for tau in 0..t {
        ineq_a[(t, tau)] = -h;
    }
    ineq_b[t] = lit(v.initial_soc - v.target_soc);
    let region = Polyhedron::new(ineq_a, ineq_b, lower, upper)?;
    let mut a = DMatrix::zeros(t, n);
    for k in 0..t {
        a[(k, k)] = T::one();
        a[(k, t + k)] = T::one();
    }
    Ok(Agent::new(objective, region, CouplingBlock::new(a, share))?)
}

pub fn generate_instance<T: Scalar>(config: &PevConfig) -> Result<PevInstance<T>, PevError> {
    let fleet = draw_vehicles(config)?;
    let grid_cap = match &config.grid_cap {
        Some(cap) => cap.clone(),
        None => calibrated_cap(&fleet, config),
    };
    let cap_inf = grid_cap.iter().copied().fold(0.0, f64::max);
    let slack_cap = config.slack_cap.unwrap_or(cap_inf);
    if slack_cap < cap_inf {
        return Err(PevError::Config(format!(
            "slackCap {slack_cap} must be at least the largest grid limit {cap_inf}"
        )));
    }
    let b = DVector::from_iterator(grid_cap.len(), grid_cap.iter().map(|&v| T::lit(v)));
    let shares = split_rhs(&b, fleet.len(), SplitMode::Uniform)?;
    let agents = fleet
        .iter()
        .zip(shares)
        .map(|(v, share)| vehicle_agent(v, config, slack_cap, share))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(PevInstance {
        agents,
        vehicles: fleet,
        grid_cap,
        slack_cap,
        local_inequalities: config.horizon + 1 + 2 * 2 * config.horizon,
    })
}

pub fn generate<T: Scalar>(config: &PevConfig) -> Result<ConstraintCoupledProblem<T>, PevError> {
    generate_instance(config)?.into_problem()
}

/// `N = 100`, 24 slots, `c = 1e-4`, 200 rounds.
pub fn preset_paper_scale<T: Scalar>() -> (PevConfig, EngineConfig<T>) {
    let engine = EngineConfig {
        max_iters: 200,
        ..EngineConfig::with_c(T::lit(1e-4))
    };
    (PevConfig::paper_scale(), engine)
}

/// `N = 20`, 24 slots, `c =` [`DESK_C`], 2000 rounds.
pub fn preset_desk_scale<T: Scalar>() -> (PevConfig, EngineConfig<T>) {
    let engine = EngineConfig {
        max_iters: 2000,
        ..EngineConfig::with_c(T::lit(DESK_C))
    };
    (PevConfig::desk_scale(), engine)
}

/// Seeded Erdős–Rényi graph with [`PRESET_EDGE_PROB`] and squared
/// Metropolis weights, the network both presets are run on.
pub fn preset_network<T: Scalar>(n: usize, seed: u64) -> Result<ConsensusMatrix<T>, NetworkError> {
    let graph = Graph::erdos_renyi(n, PRESET_EDGE_PROB, seed)?;
    Ok(ConsensusMatrix::metropolis(&graph)?.squared())
}
