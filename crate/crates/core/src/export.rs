//! Plot-ready trajectory files and run summaries.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::engine::{StopReason, Trajectory};
use crate::scalar::Scalar;

fn num<T: Scalar>(v: T) -> String {
    format!("{}", v.to_f64_lossy())
}

/// `k,cost,costGap,couplingInf,eD,eL,dBarInf,lambdaBar_0..`; `costGap` is
/// left empty without a reference cost.
pub fn write_trajectory_csv<T: Scalar, W: Write>(
    trajectory: &Trajectory<T>,
    reference_cost: Option<T>,
    out: W,
) -> Result<(), csv::Error> {
    let mut w = csv::Writer::from_writer(out);
    let p = trajectory.metrics.first().map_or(0, |m| m.lambda_bar.len());
    let mut header: Vec<String> = ["k", "cost", "costGap", "couplingInf", "eD", "eL", "dBarInf"]
        .iter()
        .map(|s| s.to_string())
        .collect();
    header.extend((0..p).map(|r| format!("lambdaBar_{r}")));
    w.write_record(&header)?;
    for m in &trajectory.metrics {
        let mut row = vec![
            m.k.to_string(),
            num(m.cost),
            reference_cost.map(|f| num(m.cost - f)).unwrap_or_default(),
            num(m.coupling_inf),
            num(m.e_d),
            num(m.e_l),
            num(m.d_bar_inf()),
        ];
        row.extend(m.lambda_bar.iter().map(|&v| num(v)));
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

/// Per-agent multipliers, one row per (round, agent): `k,agent,lambda_0..`.
pub fn write_lambdas_csv<T: Scalar, W: Write>(trajectory: &Trajectory<T>, out: W) -> Result<(), csv::Error> {
    let mut w = csv::Writer::from_writer(out);
    let p = trajectory.metrics.first().map_or(0, |m| m.lambda_bar.len());
    let mut header = vec!["k".to_string(), "agent".to_string()];
    header.extend((0..p).map(|r| format!("lambda_{r}")));
    w.write_record(&header)?;
    for m in &trajectory.metrics {
        let n = m.lambda_stack.len().checked_div(p).unwrap_or(0);
        for i in 0..n {
            let mut row = vec![m.k.to_string(), i.to_string()];
            row.extend((0..p).map(|r| num(m.lambda_stack[i * p + r])));
            w.write_record(&row)?;
        }
    }
    w.flush()?;
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct RunSummary {
    pub algorithm: String,
    pub stop_reason: StopReason,
    pub rounds: usize,
    pub wall_time_secs: f64,
    pub qp_iterations: usize,
    pub c: f64,
    pub agents: usize,
    pub coupling_dim: usize,
    pub final_cost: f64,
    pub final_coupling_inf: f64,
    pub final_e_d: f64,
    pub final_e_l: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub reference_cost: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub final_cost_gap: Option<f64>,
}

impl RunSummary {
    pub fn new<T: Scalar>(trajectory: &Trajectory<T>, reference_cost: Option<T>) -> Self {
        let last = trajectory.last();
        let p = last.lambda_bar.len();
        Self {
            algorithm: trajectory.algorithm.tag().to_string(),
            stop_reason: trajectory.stop,
            rounds: trajectory.rounds(),
            wall_time_secs: trajectory.wall_time_secs,
            qp_iterations: trajectory.qp_iterations(),
            c: trajectory.c.to_f64_lossy(),
            agents: trajectory.states.len(),
            coupling_dim: p,
            final_cost: last.cost.to_f64_lossy(),
            final_coupling_inf: last.coupling_inf.to_f64_lossy(),
            final_e_d: last.e_d.to_f64_lossy(),
            final_e_l: last.e_l.to_f64_lossy(),
            reference_cost: reference_cost.map(|f| f.to_f64_lossy()),
            final_cost_gap: reference_cost.map(|f| (last.cost - f).to_f64_lossy()),
        }
    }
}
