//! Heterogeneous device fleet model.
//!
//! Devices come in three performance tiers. Each device exposes one or more
//! execution targets (CPU, optionally GPU) with an ordered DVFS step table
//! of (frequency, busy power) pairs, an idle power, per-signal-band transmit
//! powers, and a peak compute throughput per target. Profiles are immutable
//! after construction and safe to share by reference.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Result, SimError};
use crate::variance::{InterferenceState, SignalBand};

pub type DeviceId = u32;

/// Device performance tier.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Tier {
    High,
    Mid,
    Low,
}

impl Tier {
    pub const ALL: [Tier; 3] = [Tier::High, Tier::Mid, Tier::Low];

    pub fn index(self) -> usize {
        match self {
            Tier::High => 0,
            Tier::Mid => 1,
            Tier::Low => 2,
        }
    }
}

/// On-device processor kind that can run local training.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum TargetKind {
    Cpu,
    Gpu,
}

/// One DVFS operating point.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DvfsStep {
    pub freq_hz: f64,
    pub busy_power_w: f64,
}

/// An execution target and its DVFS table.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ExecTargetSpec {
    pub kind: TargetKind,
    /// Ordered by strictly increasing frequency; busy power is nondecreasing.
    pub dvfs_steps: Vec<DvfsStep>,
    /// Core count; only meaningful for CPU targets (per-core energy split).
    pub cores: u32,
    /// Peak throughput in FLOP/s at the top DVFS step.
    pub base_throughput: f64,
}

impl ExecTargetSpec {
    pub fn validate(&self) -> Result<()> {
        if self.dvfs_steps.is_empty() {
            return Err(SimError::Config(format!("{:?} target has no DVFS steps", self.kind)));
        }
        for w in self.dvfs_steps.windows(2) {
            if w[1].freq_hz <= w[0].freq_hz {
                return Err(SimError::Config(format!(
                    "{:?} DVFS frequencies must strictly increase",
                    self.kind
                )));
            }
            if w[1].busy_power_w < w[0].busy_power_w {
                return Err(SimError::Config(format!(
                    "{:?} DVFS busy power must be nondecreasing",
                    self.kind
                )));
            }
        }
        if self
            .dvfs_steps
            .iter()
            .any(|s| !(s.freq_hz.is_finite() && s.freq_hz > 0.0 && s.busy_power_w.is_finite() && s.busy_power_w > 0.0))
        {
            return Err(SimError::Config(format!("{:?} DVFS table has nonpositive entries", self.kind)));
        }
        if self.cores == 0 {
            return Err(SimError::Config(format!("{:?} target has zero cores", self.kind)));
        }
        if !(self.base_throughput.is_finite() && self.base_throughput > 0.0) {
            return Err(SimError::Config(format!("{:?} base throughput must be positive", self.kind)));
        }
        Ok(())
    }

    pub fn top_step(&self) -> usize {
        self.dvfs_steps.len() - 1
    }

    pub fn top_freq(&self) -> f64 {
        self.dvfs_steps[self.top_step()].freq_hz
    }
}

/// A (target kind, DVFS step index) pair — what an action commits a device to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct ExecTargetChoice {
    pub kind: TargetKind,
    /// Index into the target's full `dvfs_steps` table.
    pub step: usize,
}

/// Static hardware description of one device.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DeviceProfile {
    pub id: DeviceId,
    pub tier: Tier,
    pub targets: Vec<ExecTargetSpec>,
    pub idle_power_w: f64,
    /// Transmit power of the wireless interface per signal-strength band.
    pub comm_power_w: BTreeMap<SignalBand, f64>,
}

impl DeviceProfile {
    pub fn validate(&self) -> Result<()> {
        if !self.targets.iter().any(|t| t.kind == TargetKind::Cpu) {
            return Err(SimError::Config(format!("device {} has no CPU target", self.id)));
        }
        if !(self.idle_power_w.is_finite() && self.idle_power_w > 0.0) {
            return Err(SimError::Config(format!("device {} idle power must be positive", self.id)));
        }
        for (band, p) in &self.comm_power_w {
            if !(p.is_finite() && *p > 0.0) {
                return Err(SimError::Config(format!("device {} {band:?} tx power must be positive", self.id)));
            }
        }
        for t in &self.targets {
            t.validate()?;
        }
        Ok(())
    }

    pub fn target(&self, kind: TargetKind) -> Result<&ExecTargetSpec> {
        self.targets
            .iter()
            .find(|t| t.kind == kind)
            .ok_or_else(|| SimError::Lookup(format!("device {} has no {kind:?} target", self.id)))
    }

    pub fn has_target(&self, kind: TargetKind) -> bool {
        self.targets.iter().any(|t| t.kind == kind)
    }

    /// Transmit power at the given signal band.
    pub fn tx_power(&self, band: SignalBand) -> Result<f64> {
        self.comm_power_w
            .get(&band)
            .copied()
            .ok_or_else(|| SimError::Lookup(format!("device {} has no tx power for {band:?}", self.id)))
    }

    /// The CPU target at its top step — the default action for baselines.
    pub fn default_choice(&self) -> ExecTargetChoice {
        let cpu = self.target(TargetKind::Cpu).expect("CPU target is mandatory");
        ExecTargetChoice { kind: TargetKind::Cpu, step: cpu.top_step() }
    }

    /// Peak busy power across targets (used by the Power baseline ordering).
    pub fn peak_power(&self) -> f64 {
        self.targets
            .iter()
            .map(|t| t.dvfs_steps[t.top_step()].busy_power_w)
            .fold(0.0, f64::max)
    }

    /// Peak CPU throughput (used by the Performance baseline ordering).
    pub fn cpu_throughput(&self) -> f64 {
        self.target(TargetKind::Cpu).map(|t| t.base_throughput).unwrap_or(0.0)
    }
}

/// Per-tier construction template. The defaults mirror the three reference
/// handsets: measured peak powers and V-F step counts per target, with tier
/// throughputs in the 153.6 : 80 : 52.8 ratio.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TierTemplate {
    pub cpu_steps: usize,
    pub cpu_top_freq_hz: f64,
    pub cpu_peak_power_w: f64,
    pub cpu_cores: u32,
    pub cpu_throughput: f64,
    pub gpu_steps: usize,
    pub gpu_top_freq_hz: f64,
    pub gpu_peak_power_w: f64,
    /// GPU peak throughput as a fraction of the CPU's.
    pub gpu_throughput_ratio: f64,
    pub idle_power_w: f64,
    pub tx_power_strong_w: f64,
    pub tx_power_weak_w: f64,
    pub has_gpu: bool,
}

impl Default for TierTemplate {
    fn default() -> Self {
        TierTemplate::for_tier(Tier::Mid)
    }
}

/// Fraction of busy power that does not scale with frequency.
const STATIC_POWER_FLOOR: f64 = 0.1;

impl TierTemplate {
    /// Built-in template for a tier.
    ///
    /// Throughputs are desk-scaled: the published GFLOPS figures are used as
    /// MFLOP/s so that toy workloads produce measurable round times while
    /// preserving the tier ratios. Override per config for other scales.
    pub fn for_tier(tier: Tier) -> Self {
        const MFLOP: f64 = 1.0e6;
        match tier {
            Tier::High => TierTemplate {
                cpu_steps: 23,
                cpu_top_freq_hz: 2.8e9,
                cpu_peak_power_w: 5.5,
                cpu_cores: 8,
                cpu_throughput: 153.6 * MFLOP,
                gpu_steps: 7,
                gpu_top_freq_hz: 0.7e9,
                gpu_peak_power_w: 2.8,
                gpu_throughput_ratio: 0.4,
                idle_power_w: 0.12,
                tx_power_strong_w: 0.96,
                tx_power_weak_w: 1.68,
                has_gpu: true,
            },
            Tier::Mid => TierTemplate {
                cpu_steps: 21,
                cpu_top_freq_hz: 2.7e9,
                cpu_peak_power_w: 5.6,
                cpu_cores: 8,
                cpu_throughput: 80.0 * MFLOP,
                gpu_steps: 9,
                gpu_top_freq_hz: 0.7e9,
                gpu_peak_power_w: 2.4,
                gpu_throughput_ratio: 0.4,
                idle_power_w: 0.10,
                tx_power_strong_w: 0.80,
                tx_power_weak_w: 1.40,
                has_gpu: true,
            },
            Tier::Low => TierTemplate {
                cpu_steps: 15,
                cpu_top_freq_hz: 1.9e9,
                cpu_peak_power_w: 3.6,
                cpu_cores: 6,
                cpu_throughput: 52.8 * MFLOP,
                gpu_steps: 6,
                gpu_top_freq_hz: 0.6e9,
                gpu_peak_power_w: 2.0,
                gpu_throughput_ratio: 0.4,
                idle_power_w: 0.08,
                tx_power_strong_w: 0.64,
                tx_power_weak_w: 1.12,
                has_gpu: true,
            },
        }
    }

    fn build_target(kind: TargetKind, steps: usize, top_freq: f64, peak_power: f64, cores: u32, throughput: f64) -> ExecTargetSpec {
        // Busy power follows P(f) = P_peak * (floor + (1-floor) * (f/f_peak)^3):
        // cubic dynamic term plus a static floor, anchored at the measured peak.
        let dvfs_steps = (1..=steps)
            .map(|i| {
                let frac = i as f64 / steps as f64;
                DvfsStep {
                    freq_hz: top_freq * frac,
                    busy_power_w: peak_power * (STATIC_POWER_FLOOR + (1.0 - STATIC_POWER_FLOOR) * frac.powi(3)),
                }
            })
            .collect();
        ExecTargetSpec { kind, dvfs_steps, cores, base_throughput: throughput }
    }

    pub fn instantiate(&self, id: DeviceId, tier: Tier) -> DeviceProfile {
        let mut targets = vec![Self::build_target(
            TargetKind::Cpu,
            self.cpu_steps,
            self.cpu_top_freq_hz,
            self.cpu_peak_power_w,
            self.cpu_cores,
            self.cpu_throughput,
        )];
        if self.has_gpu {
            targets.push(Self::build_target(
                TargetKind::Gpu,
                self.gpu_steps,
                self.gpu_top_freq_hz,
                self.gpu_peak_power_w,
                1,
                self.cpu_throughput * self.gpu_throughput_ratio,
            ));
        }
        let mut comm_power_w = BTreeMap::new();
        comm_power_w.insert(SignalBand::Strong, self.tx_power_strong_w);
        comm_power_w.insert(SignalBand::Weak, self.tx_power_weak_w);
        DeviceProfile { id, tier, targets, idle_power_w: self.idle_power_w, comm_power_w }
    }
}

/// How many devices of each tier to build, plus optional template overrides.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FleetSpec {
    pub high: u32,
    pub mid: u32,
    pub low: u32,
    #[serde(default)]
    pub template_high: Option<TierTemplate>,
    #[serde(default)]
    pub template_mid: Option<TierTemplate>,
    #[serde(default)]
    pub template_low: Option<TierTemplate>,
}

impl FleetSpec {
    pub fn new(high: u32, mid: u32, low: u32) -> Self {
        FleetSpec { high, mid, low, template_high: None, template_mid: None, template_low: None }
    }
}

/// The constructed device fleet.
#[derive(Debug, Clone)]
pub struct Fleet {
    pub devices: Vec<DeviceProfile>,
    pub tier_counts: (u32, u32, u32),
}

impl Fleet {
    pub fn len(&self) -> usize {
        self.devices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.devices.is_empty()
    }

    pub fn device(&self, id: DeviceId) -> Result<&DeviceProfile> {
        self.devices
            .get(id as usize)
            .filter(|d| d.id == id)
            .ok_or_else(|| SimError::Lookup(format!("no device with id {id}")))
    }

    pub fn ids(&self) -> impl Iterator<Item = DeviceId> + '_ {
        self.devices.iter().map(|d| d.id)
    }
}

/// Builds the fleet in tier-major order: all High devices first, then Mid,
/// then Low, with ids assigned 0..N in that order.
pub fn build_fleet(spec: &FleetSpec) -> Result<Fleet> {
    let total = spec.high + spec.mid + spec.low;
    if total == 0 {
        return Err(SimError::Config("fleet must contain at least one device".into()));
    }
    let mut devices = Vec::with_capacity(total as usize);
    let mut next_id: DeviceId = 0;
    for (tier, count, template) in [
        (Tier::High, spec.high, &spec.template_high),
        (Tier::Mid, spec.mid, &spec.template_mid),
        (Tier::Low, spec.low, &spec.template_low),
    ] {
        let template = template.clone().unwrap_or_else(|| TierTemplate::for_tier(tier));
        for _ in 0..count {
            let profile = template.instantiate(next_id, tier);
            profile.validate()?;
            devices.push(profile);
            next_id += 1;
        }
    }
    Ok(Fleet { devices, tier_counts: (spec.high, spec.mid, spec.low) })
}

/// Lowest multiplier left after CPU contention, keeping throughput positive.
const MIN_CONTENTION_MULTIPLIER: f64 = 0.05;

/// Effective training throughput for a device at a chosen target and step.
///
/// Throughput scales linearly with frequency. A co-running application
/// penalizes CPU targets multiplicatively by its CPU utilization; GPU
/// targets are unaffected.
pub fn effective_throughput(
    profile: &DeviceProfile,
    choice: ExecTargetChoice,
    interference: InterferenceState,
) -> Result<f64> {
    let target = profile.target(choice.kind)?;
    let step = target
        .dvfs_steps
        .get(choice.step)
        .ok_or_else(|| SimError::Lookup(format!("device {}: {:?} step {} out of range", profile.id, choice.kind, choice.step)))?;
    let freq_frac = step.freq_hz / target.top_freq();
    let contention = match choice.kind {
        TargetKind::Cpu => (1.0 - interference.cpu_util).max(MIN_CONTENTION_MULTIPLIER),
        TargetKind::Gpu => 1.0,
    };
    Ok(target.base_throughput * freq_frac * contention)
}

/// Busy and idle power for a device at a chosen target and step.
pub fn power_at(profile: &DeviceProfile, choice: ExecTargetChoice) -> Result<(f64, f64)> {
    let target = profile.target(choice.kind)?;
    let step = target
        .dvfs_steps
        .get(choice.step)
        .ok_or_else(|| SimError::Lookup(format!("device {}: {:?} step {} out of range", profile.id, choice.kind, choice.step)))?;
    Ok((step.busy_power_w, profile.idle_power_w))
}

/// Indices of `exposed` evenly spaced DVFS steps (always including the top).
pub fn exposed_step_indices(total_steps: usize, exposed: usize) -> Vec<usize> {
    let exposed = exposed.clamp(1, total_steps);
    (1..=exposed)
        .map(|j| (total_steps * j).div_ceil(exposed) - 1)
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn zero_interference() -> InterferenceState {
        InterferenceState { cpu_util: 0.0, mem_util: 0.0 }
    }

    #[test]
    fn builds_reference_fleet() {
        let fleet = build_fleet(&FleetSpec::new(30, 70, 100)).unwrap();
        assert_eq!(fleet.len(), 200);
        assert_eq!(fleet.tier_counts, (30, 70, 100));
    }

    #[test]
    fn builds_minimal_fleet() {
        let fleet = build_fleet(&FleetSpec::new(1, 0, 0)).unwrap();
        assert_eq!(fleet.len(), 1);
        assert_eq!(fleet.devices[0].tier, Tier::High);
    }

    #[test]
    fn ids_are_tier_major() {
        let fleet = build_fleet(&FleetSpec::new(3, 7, 10)).unwrap();
        assert_eq!(fleet.len(), 20);
        let ids: Vec<_> = fleet.ids().collect();
        assert_eq!(ids, (0..20).collect::<Vec<_>>());
        assert!(fleet.devices[..3].iter().all(|d| d.tier == Tier::High));
        assert!(fleet.devices[3..10].iter().all(|d| d.tier == Tier::Mid));
        assert!(fleet.devices[10..].iter().all(|d| d.tier == Tier::Low));
    }

    #[test]
    fn empty_fleet_is_config_error() {
        assert!(matches!(build_fleet(&FleetSpec::new(0, 0, 0)), Err(SimError::Config(_))));
    }

    #[test]
    fn top_step_full_throughput() {
        let fleet = build_fleet(&FleetSpec::new(1, 0, 0)).unwrap();
        let d = &fleet.devices[0];
        let cpu = d.target(TargetKind::Cpu).unwrap();
        let thr = effective_throughput(
            d,
            ExecTargetChoice { kind: TargetKind::Cpu, step: cpu.top_step() },
            zero_interference(),
        )
        .unwrap();
        assert_eq!(thr, cpu.base_throughput);
    }

    #[test]
    fn half_frequency_halves_throughput() {
        // Two steps: index 0 sits at exactly half the top frequency.
        let mut template = TierTemplate::for_tier(Tier::Mid);
        template.cpu_steps = 2;
        let d = template.instantiate(0, Tier::Mid);
        let thr = effective_throughput(
            &d,
            ExecTargetChoice { kind: TargetKind::Cpu, step: 0 },
            zero_interference(),
        )
        .unwrap();
        assert!((thr - 0.5 * template.cpu_throughput).abs() < 1e-9);
    }

    #[test]
    fn gpu_ignores_cpu_contention() {
        let fleet = build_fleet(&FleetSpec::new(1, 0, 0)).unwrap();
        let d = &fleet.devices[0];
        let gpu = d.target(TargetKind::Gpu).unwrap();
        let choice = ExecTargetChoice { kind: TargetKind::Gpu, step: gpu.top_step() };
        let clean = effective_throughput(d, choice, zero_interference()).unwrap();
        let loaded = effective_throughput(
            d,
            choice,
            InterferenceState { cpu_util: 0.75, mem_util: 0.4 },
        )
        .unwrap();
        assert_eq!(clean, loaded);
    }

    #[test]
    fn contention_penalizes_cpu() {
        let fleet = build_fleet(&FleetSpec::new(1, 0, 0)).unwrap();
        let d = &fleet.devices[0];
        let choice = d.default_choice();
        let clean = effective_throughput(d, choice, zero_interference()).unwrap();
        let loaded = effective_throughput(
            d,
            choice,
            InterferenceState { cpu_util: 0.5, mem_util: 0.0 },
        )
        .unwrap();
        assert!((loaded - 0.5 * clean).abs() < 1e-9);
        // Saturated co-runner still leaves positive throughput.
        let saturated = effective_throughput(
            d,
            choice,
            InterferenceState { cpu_util: 1.0, mem_util: 1.0 },
        )
        .unwrap();
        assert!(saturated > 0.0);
    }

    #[test]
    fn table_peak_powers() {
        let fleet = build_fleet(&FleetSpec::new(1, 0, 1)).unwrap();
        let high = &fleet.devices[0];
        let cpu = high.target(TargetKind::Cpu).unwrap();
        let (busy, idle) = power_at(high, ExecTargetChoice { kind: TargetKind::Cpu, step: cpu.top_step() }).unwrap();
        assert!((busy - 5.5).abs() < 1e-12);
        assert!((idle - high.idle_power_w).abs() < 1e-12);

        let low = &fleet.devices[1];
        let gpu = low.target(TargetKind::Gpu).unwrap();
        let (busy, _) = power_at(low, ExecTargetChoice { kind: TargetKind::Gpu, step: gpu.top_step() }).unwrap();
        assert!((busy - 2.0).abs() < 1e-12);
    }

    #[test]
    fn out_of_range_step_is_lookup_error() {
        let fleet = build_fleet(&FleetSpec::new(1, 0, 0)).unwrap();
        let err = power_at(&fleet.devices[0], ExecTargetChoice { kind: TargetKind::Cpu, step: 99 });
        assert!(matches!(err, Err(SimError::Lookup(_))));
    }

    #[test]
    fn power_monotone_in_step() {
        let fleet = build_fleet(&FleetSpec::new(1, 1, 1)).unwrap();
        for d in &fleet.devices {
            for t in &d.targets {
                let mut prev = 0.0;
                for (i, _) in t.dvfs_steps.iter().enumerate() {
                    let (busy, _) = power_at(d, ExecTargetChoice { kind: t.kind, step: i }).unwrap();
                    assert!(busy >= prev);
                    prev = busy;
                }
            }
        }
    }

    #[test]
    fn tier_throughput_ordering() {
        let fleet = build_fleet(&FleetSpec::new(1, 1, 1)).unwrap();
        let thr: Vec<f64> = fleet
            .devices
            .iter()
            .map(|d| {
                let cpu = d.target(TargetKind::Cpu).unwrap();
                effective_throughput(d, ExecTargetChoice { kind: TargetKind::Cpu, step: cpu.top_step() }, zero_interference()).unwrap()
            })
            .collect();
        assert!(thr[0] >= thr[1] && thr[1] >= thr[2]);
        // Defaults preserve the published tier ratios.
        assert!((thr[0] / thr[2] - 153.6 / 52.8).abs() < 1e-9);
        assert!((thr[1] / thr[2] - 80.0 / 52.8).abs() < 1e-9);
    }

    #[test]
    fn exposed_steps_include_top_and_stay_sorted() {
        for (total, exposed) in [(23, 4), (21, 4), (15, 4), (6, 4), (7, 7), (5, 1)] {
            let idx = exposed_step_indices(total, exposed);
            assert_eq!(idx.len(), exposed.min(total));
            assert_eq!(*idx.last().unwrap(), total - 1);
            assert!(idx.windows(2).all(|w| w[0] < w[1]));
        }
    }
}
