//! Energy accounting.
//!
//! Computation energy integrates busy power over per-frequency busy time
//! plus idle power over idle time; for CPU targets the sum runs per core
//! with the package busy/idle power split evenly across cores (so a fully
//! busy CPU draws the table power regardless of core count).
//! Communication energy is the signal-band transmit power times transmit
//! time, and idle devices pay idle power for the whole round. Local and
//! global energy rewards follow from those per the participant/non-
//! participant split.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::device::{DeviceId, DeviceProfile, Fleet, TargetKind};
use crate::error::{Result, SimError};
use crate::variance::SignalBand;

/// Busy time spent at one (target, DVFS step) operating point.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BusySegment {
    pub kind: TargetKind,
    pub step: usize,
    pub seconds: f64,
}

/// Per-device activity record for one round.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnergyTrace {
    /// Busy segments; empty for a device that only idled.
    pub busy: Vec<BusySegment>,
    /// Idle seconds inside the device's own activity window (compute slack).
    pub t_idle: f64,
    /// Transmit seconds.
    pub t_tx: f64,
    /// Full round duration.
    pub t_round: f64,
    pub signal_band: SignalBand,
}

impl EnergyTrace {
    /// An all-idle trace for a non-participant.
    pub fn idle(t_round: f64, signal_band: SignalBand) -> Self {
        EnergyTrace { busy: Vec::new(), t_idle: 0.0, t_tx: 0.0, t_round, signal_band }
    }

    fn validate(&self) -> Result<()> {
        let times_ok = self.busy.iter().all(|s| s.seconds >= 0.0 && s.seconds.is_finite())
            && self.t_idle >= 0.0
            && self.t_tx >= 0.0
            && self.t_round >= 0.0
            && [self.t_idle, self.t_tx, self.t_round].iter().all(|t| t.is_finite());
        if !times_ok {
            return Err(SimError::Contract("energy trace times must be finite and nonnegative".into()));
        }
        let busy_total: f64 = self.busy.iter().map(|s| s.seconds).sum();
        if busy_total + self.t_tx + self.t_idle > self.t_round * (1.0 + 1e-9) + 1e-12 {
            return Err(SimError::Contract("device activity exceeds the round window".into()));
        }
        Ok(())
    }
}

/// Aggregated energies for one round.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnergyReport {
    /// Total computation energy across participants.
    pub e_comp_j: f64,
    /// Total communication energy across participants.
    pub e_comm_j: f64,
    /// Total idle energy across non-participants.
    pub e_idle_j: f64,
    /// Per-device local energy reward, indexed by device id order.
    pub local_j: BTreeMap<DeviceId, f64>,
    /// Sum of the local rewards over the whole fleet.
    pub global_j: f64,
}

/// Computation energy for one device's trace on the given target.
///
/// CPU: sum over cores of per-frequency busy energy plus the per-core idle
/// share. GPU: the same integral without a core split.
pub fn comp_energy(trace: &EnergyTrace, profile: &DeviceProfile, target: TargetKind) -> Result<f64> {
    trace.validate()?;
    if trace.busy.iter().any(|s| s.kind != target) {
        return Err(SimError::Contract(format!(
            "device {}: trace has busy segments off the {target:?} target",
            profile.id
        )));
    }
    let spec = profile.target(target)?;
    let mut segment_energy = 0.0;
    for seg in &trace.busy {
        let step = spec
            .dvfs_steps
            .get(seg.step)
            .ok_or_else(|| SimError::Lookup(format!("device {}: {target:?} step {} out of range", profile.id, seg.step)))?;
        segment_energy += step.busy_power_w * seg.seconds;
    }
    Ok(match target {
        TargetKind::Cpu => {
            let cores = spec.cores.max(1) as f64;
            let mut total = 0.0;
            for _core in 0..spec.cores.max(1) {
                total += segment_energy / cores + profile.idle_power_w / cores * trace.t_idle;
            }
            total
        }
        TargetKind::Gpu => segment_energy + profile.idle_power_w * trace.t_idle,
    })
}

/// Communication energy: band transmit power times transmit time.
pub fn comm_energy(trace: &EnergyTrace, profile: &DeviceProfile) -> Result<f64> {
    trace.validate()?;
    Ok(profile.tx_power(trace.signal_band)? * trace.t_tx)
}

/// Idle energy for a device that sat out the round.
pub fn idle_energy(profile: &DeviceProfile, t_round: f64) -> Result<f64> {
    if !(t_round.is_finite() && t_round >= 0.0) {
        return Err(SimError::Contract("t_round must be finite and nonnegative".into()));
    }
    Ok(profile.idle_power_w * t_round)
}

fn trace_target(trace: &EnergyTrace) -> TargetKind {
    trace.busy.first().map(|s| s.kind).unwrap_or(TargetKind::Cpu)
}

/// Computes local and global energy rewards for a round.
///
/// Selected participants pay computation plus communication energy; every
/// other device pays idle energy for the round. The global reward is the
/// sum of the local rewards over all devices, accumulated in id order.
pub fn energy_rewards(
    traces: &BTreeMap<DeviceId, EnergyTrace>,
    participants: &BTreeSet<DeviceId>,
    fleet: &Fleet,
) -> Result<EnergyReport> {
    for &p in participants {
        if !traces.contains_key(&p) {
            return Err(SimError::Contract(format!("participant {p} has no trace")));
        }
        fleet.device(p)?;
    }
    let mut report = EnergyReport {
        e_comp_j: 0.0,
        e_comm_j: 0.0,
        e_idle_j: 0.0,
        local_j: BTreeMap::new(),
        global_j: 0.0,
    };
    for device in &fleet.devices {
        let trace = traces
            .get(&device.id)
            .ok_or_else(|| SimError::Contract(format!("device {} has no trace", device.id)))?;
        let local = if participants.contains(&device.id) {
            let comp = comp_energy(trace, device, trace_target(trace))?;
            let comm = comm_energy(trace, device)?;
            report.e_comp_j += comp;
            report.e_comm_j += comm;
            comp + comm
        } else {
            let idle = idle_energy(device, trace.t_round)?;
            report.e_idle_j += idle;
            idle
        };
        report.local_j.insert(device.id, local);
        report.global_j += local;
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::device::{build_fleet, DvfsStep, ExecTargetSpec, FleetSpec};

    /// Single-core single-target profile with hand-picked powers.
    fn simple_profile(id: DeviceId, busy: &[f64], idle: f64) -> DeviceProfile {
        let dvfs_steps = busy
            .iter()
            .enumerate()
            .map(|(i, &p)| DvfsStep { freq_hz: 1.0e9 * (i + 1) as f64, busy_power_w: p })
            .collect();
        let mut comm_power_w = BTreeMap::new();
        comm_power_w.insert(SignalBand::Strong, 0.8);
        comm_power_w.insert(SignalBand::Weak, 1.4);
        DeviceProfile {
            id,
            tier: crate::device::Tier::Mid,
            targets: vec![ExecTargetSpec {
                kind: TargetKind::Cpu,
                dvfs_steps,
                cores: 1,
                base_throughput: 1.0e6,
            }],
            idle_power_w: idle,
            comm_power_w,
        }
    }

    #[test]
    fn single_core_single_step() {
        let p = simple_profile(0, &[5.5], 0.1);
        let trace = EnergyTrace {
            busy: vec![BusySegment { kind: TargetKind::Cpu, step: 0, seconds: 2.0 }],
            t_idle: 1.0,
            t_tx: 0.0,
            t_round: 3.0,
            signal_band: SignalBand::Strong,
        };
        let e = comp_energy(&trace, &p, TargetKind::Cpu).unwrap();
        assert!((e - 11.1).abs() < 1e-12);
    }

    #[test]
    fn zero_times_zero_energy() {
        let p = simple_profile(0, &[5.5], 0.1);
        let trace = EnergyTrace {
            busy: vec![],
            t_idle: 0.0,
            t_tx: 0.0,
            t_round: 0.0,
            signal_band: SignalBand::Strong,
        };
        assert_eq!(comp_energy(&trace, &p, TargetKind::Cpu).unwrap(), 0.0);
        assert_eq!(comm_energy(&trace, &p).unwrap(), 0.0);
        assert_eq!(idle_energy(&p, 0.0).unwrap(), 0.0);
    }

    #[test]
    fn two_frequency_segments() {
        let p = simple_profile(0, &[2.0, 5.5], 0.1);
        let trace = EnergyTrace {
            busy: vec![
                BusySegment { kind: TargetKind::Cpu, step: 1, seconds: 1.0 },
                BusySegment { kind: TargetKind::Cpu, step: 0, seconds: 1.0 },
            ],
            t_idle: 0.0,
            t_tx: 0.0,
            t_round: 2.0,
            signal_band: SignalBand::Strong,
        };
        let e = comp_energy(&trace, &p, TargetKind::Cpu).unwrap();
        assert!((e - 7.5).abs() < 1e-12);
    }

    #[test]
    fn negative_time_is_contract_violation() {
        let p = simple_profile(0, &[5.5], 0.1);
        let trace = EnergyTrace {
            busy: vec![BusySegment { kind: TargetKind::Cpu, step: 0, seconds: -1.0 }],
            t_idle: 0.0,
            t_tx: 0.0,
            t_round: 1.0,
            signal_band: SignalBand::Strong,
        };
        assert!(matches!(comp_energy(&trace, &p, TargetKind::Cpu), Err(SimError::Contract(_))));
    }

    #[test]
    fn comm_energy_by_band() {
        let p = simple_profile(0, &[5.5], 0.1);
        let strong = EnergyTrace {
            busy: vec![],
            t_idle: 0.0,
            t_tx: 5.0,
            t_round: 5.0,
            signal_band: SignalBand::Strong,
        };
        assert!((comm_energy(&strong, &p).unwrap() - 4.0).abs() < 1e-12);
        let weak = EnergyTrace { signal_band: SignalBand::Weak, ..strong.clone() };
        assert!(comm_energy(&weak, &p).unwrap() > comm_energy(&strong, &p).unwrap());
    }

    #[test]
    fn idle_energy_scales_with_power() {
        let a = simple_profile(0, &[5.5], 0.1);
        let b = simple_profile(1, &[5.5], 0.3);
        assert!((idle_energy(&a, 60.0).unwrap() - 6.0).abs() < 1e-12);
        assert!((idle_energy(&b, 60.0).unwrap() - 3.0 * idle_energy(&a, 60.0).unwrap()).abs() < 1e-12);
    }

    #[test]
    fn two_device_round_totals() {
        // device 0 participates (11.1 J comp + 4.0 J comm), device 1 idles 60 s at 0.1 W.
        let tiny_fleet = Fleet {
            devices: vec![simple_profile(0, &[5.5], 0.1), simple_profile(1, &[5.5], 0.1)],
            tier_counts: (0, 2, 0),
        };
        let mut traces = BTreeMap::new();
        traces.insert(
            0,
            EnergyTrace {
                busy: vec![BusySegment { kind: TargetKind::Cpu, step: 0, seconds: 2.0 }],
                t_idle: 1.0,
                t_tx: 5.0,
                t_round: 60.0,
                signal_band: SignalBand::Strong,
            },
        );
        traces.insert(1, EnergyTrace::idle(60.0, SignalBand::Strong));
        let participants: BTreeSet<DeviceId> = [0].into();
        let report = energy_rewards(&traces, &participants, &tiny_fleet).unwrap();
        assert!((report.local_j[&0] - 15.1).abs() < 1e-12);
        assert!((report.local_j[&1] - 6.0).abs() < 1e-12);
        assert!((report.global_j - 21.1).abs() < 1e-12);
        let direct: f64 = report.local_j.values().sum();
        assert_eq!(report.global_j, direct);
    }

    #[test]
    fn single_device_fleet_global_is_local() {
        let fleet = build_fleet(&FleetSpec::new(1, 0, 0)).unwrap();
        let d = &fleet.devices[0];
        let cpu_top = d.target(TargetKind::Cpu).unwrap().top_step();
        let mut traces = BTreeMap::new();
        traces.insert(
            0,
            EnergyTrace {
                busy: vec![BusySegment { kind: TargetKind::Cpu, step: cpu_top, seconds: 1.5 }],
                t_idle: 0.0,
                t_tx: 0.5,
                t_round: 2.0,
                signal_band: SignalBand::Strong,
            },
        );
        let participants: BTreeSet<DeviceId> = [0].into();
        let report = energy_rewards(&traces, &participants, &fleet).unwrap();
        assert_eq!(report.global_j, report.local_j[&0]);
        assert_eq!(report.e_idle_j, 0.0);
    }

    #[test]
    fn missing_participant_trace_is_contract_violation() {
        let fleet = build_fleet(&FleetSpec::new(2, 0, 0)).unwrap();
        let traces = BTreeMap::new();
        let participants: BTreeSet<DeviceId> = [0].into();
        assert!(matches!(
            energy_rewards(&traces, &participants, &fleet),
            Err(SimError::Contract(_))
        ));
    }
}
