//! Analytic round timing and the straggler rules built on it.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::data::ShardSet;
use crate::device::{effective_throughput, DeviceId, ExecTargetChoice, Fleet};
use crate::energy::{BusySegment, EnergyTrace};
use crate::error::{Result, SimError};
use crate::variance::DeviceConditions;
use crate::workload::{GlobalParams, NnDescriptor};

/// Timing for one participant.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ParticipantTiming {
    pub device: DeviceId,
    pub choice: ExecTargetChoice,
    pub t_comp: f64,
    pub t_comm: f64,
}

impl ParticipantTiming {
    pub fn total(&self) -> f64 {
        self.t_comp + self.t_comm
    }
}

/// Per-round timing: the synchronous round is gated by the slowest
/// participant.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundTiming {
    pub participants: Vec<ParticipantTiming>,
    pub t_round: f64,
}

/// Computes per-participant compute/transmit times and the round duration.
///
/// Compute time is total training FLOPs over effective throughput; transmit
/// time is the update size over the device's sampled bandwidth; the round
/// lasts until the slowest participant finishes both.
pub fn simulate_timing(
    selection: &[(DeviceId, ExecTargetChoice)],
    conditions: &BTreeMap<DeviceId, DeviceConditions>,
    nn: &NnDescriptor,
    params: &GlobalParams,
    shards: &ShardSet,
    fleet: &Fleet,
) -> Result<RoundTiming> {
    if selection.is_empty() {
        return Err(SimError::Contract("simulate_timing needs at least one participant".into()));
    }
    let mut participants = Vec::with_capacity(selection.len());
    let mut t_round: f64 = 0.0;
    for &(id, choice) in selection {
        let profile = fleet.device(id)?;
        let (interference, network) = conditions
            .get(&id)
            .ok_or_else(|| SimError::Contract(format!("device {id} has no sampled conditions")))?;
        let throughput = effective_throughput(profile, choice, *interference)?;
        let flops = nn.flops_per_sample * shards.shard(id)?.len() as f64 * params.local_epochs as f64;
        let t_comp = flops / throughput;
        let t_comm = nn.update_bytes as f64 * 8.0 / (network.bandwidth_mbps * 1.0e6);
        let timing = ParticipantTiming { device: id, choice, t_comp, t_comm };
        t_round = t_round.max(timing.total());
        participants.push(timing);
    }
    Ok(RoundTiming { participants, t_round })
}

/// Outcome of the baseline straggler rule.
#[derive(Debug, Clone, PartialEq)]
pub struct StragglerCut {
    /// Devices whose updates are dropped from aggregation.
    pub excluded: BTreeSet<DeviceId>,
    /// Round duration after the cut: the slowest *included* participant.
    pub t_round: f64,
}

/// Applies the severe-straggler rule: participants slower than
/// `deadline_factor` times the (upper) median finish time are dropped and
/// the round closes with the slowest survivor. The median participant can
/// never be excluded, so at least one update always survives.
pub fn straggler_exclusion(timing: &RoundTiming, deadline_factor: f64) -> StragglerCut {
    let mut totals: Vec<f64> = timing.participants.iter().map(ParticipantTiming::total).collect();
    totals.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let median = totals[totals.len() / 2];
    let deadline = deadline_factor.max(1.0) * median;
    let excluded: BTreeSet<DeviceId> = timing
        .participants
        .iter()
        .filter(|p| p.total() > deadline)
        .map(|p| p.device)
        .collect();
    let t_round = timing
        .participants
        .iter()
        .filter(|p| !excluded.contains(&p.device))
        .map(ParticipantTiming::total)
        .fold(0.0, f64::max);
    StragglerCut { excluded, t_round }
}

/// Builds energy traces for every device in the fleet.
///
/// Participants are busy at their chosen operating point for `t_comp`, then
/// transmit for `t_comm`, then idle out the rest of the round. If the round
/// closed before a participant finished (an excluded straggler), its
/// activity is clipped to the round window: compute first, then whatever
/// transmit time still fits.
pub fn build_traces(
    timing: &RoundTiming,
    t_round: f64,
    conditions: &BTreeMap<DeviceId, DeviceConditions>,
    fleet: &Fleet,
) -> Result<BTreeMap<DeviceId, EnergyTrace>> {
    let by_id: BTreeMap<DeviceId, &ParticipantTiming> =
        timing.participants.iter().map(|p| (p.device, p)).collect();
    let mut traces = BTreeMap::new();
    for device in &fleet.devices {
        let band = conditions
            .get(&device.id)
            .ok_or_else(|| SimError::Contract(format!("device {} has no sampled conditions", device.id)))?
            .1
            .signal_band();
        let trace = match by_id.get(&device.id) {
            Some(p) => {
                let t_busy = p.t_comp.min(t_round);
                let t_tx = p.t_comm.min((t_round - t_busy).max(0.0));
                let t_idle = (t_round - t_busy - t_tx).max(0.0);
                EnergyTrace {
                    busy: vec![BusySegment { kind: p.choice.kind, step: p.choice.step, seconds: t_busy }],
                    t_idle,
                    t_tx,
                    t_round,
                    signal_band: band,
                }
            }
            None => EnergyTrace::idle(t_round, band),
        };
        traces.insert(device.id, trace);
    }
    Ok(traces)
}
