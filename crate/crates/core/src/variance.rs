//! Per-round stochastic runtime conditions.
//!
//! Each round, every device independently gets an optional co-running
//! application (CPU/memory utilization drawn within configured bounds) and a
//! network bandwidth drawn from a clamped Gaussian. Sampling is a pure
//! function of (seed, round, device), so conditions can be re-derived at any
//! point without carrying state.

use std::collections::BTreeMap;

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::device::{DeviceId, Fleet};
use crate::error::{Result, SimError};
use crate::rng::{substream, tag};

/// Bandwidth at or below this is the weak-signal band.
pub const WEAK_BAND_MBPS: f64 = 40.0;

/// Wireless signal strength band, derived from bandwidth.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum SignalBand {
    Strong,
    Weak,
}

/// Co-running application load on a device.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InterferenceState {
    pub cpu_util: f64,
    pub mem_util: f64,
}

impl InterferenceState {
    pub const NONE: InterferenceState = InterferenceState { cpu_util: 0.0, mem_util: 0.0 };
}

/// Network conditions seen by a device for one round.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NetworkState {
    pub bandwidth_mbps: f64,
}

impl NetworkState {
    pub fn signal_band(&self) -> SignalBand {
        if self.bandwidth_mbps <= WEAK_BAND_MBPS {
            SignalBand::Weak
        } else {
            SignalBand::Strong
        }
    }
}

/// Distribution parameters for runtime variance.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct VarianceSpec {
    /// Probability that a device hosts a co-running app in a given round.
    pub interference_prob: f64,
    /// Uniform bounds for the co-runner's CPU utilization.
    pub co_cpu_util: (f64, f64),
    /// Uniform bounds for the co-runner's memory utilization.
    pub co_mem_util: (f64, f64),
    pub bw_mean_mbps: f64,
    pub bw_stddev_mbps: f64,
    pub bw_floor_mbps: f64,
}

impl Default for VarianceSpec {
    fn default() -> Self {
        // Co-runner bounds mimic a web-browsing workload; bandwidth defaults
        // model the regular-network scenario.
        VarianceSpec {
            interference_prob: 0.0,
            co_cpu_util: (0.25, 0.75),
            co_mem_util: (0.1, 0.5),
            bw_mean_mbps: 80.0,
            bw_stddev_mbps: 25.0,
            bw_floor_mbps: 1.0,
        }
    }
}

impl VarianceSpec {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.interference_prob) {
            return Err(SimError::Config("interference_prob must be in [0,1]".into()));
        }
        for (name, (lo, hi)) in [("co_cpu_util", self.co_cpu_util), ("co_mem_util", self.co_mem_util)] {
            if !(0.0..=1.0).contains(&lo) || !(0.0..=1.0).contains(&hi) || lo > hi {
                return Err(SimError::Config(format!("{name} bounds must satisfy 0 <= lo <= hi <= 1")));
            }
        }
        if !(self.bw_floor_mbps > 0.0) {
            return Err(SimError::Config("bw_floor_mbps must be positive".into()));
        }
        if self.bw_stddev_mbps < 0.0 {
            return Err(SimError::Config("bw_stddev_mbps must be nonnegative".into()));
        }
        Ok(())
    }
}

/// Conditions for one device in one round.
pub type DeviceConditions = (InterferenceState, NetworkState);

/// Samples every device's conditions for a round.
///
/// Each device draws from its own sub-stream keyed by (seed, round, device),
/// so draws are independent across devices and stable under reordering.
pub fn sample_round_conditions(
    spec: &VarianceSpec,
    fleet: &Fleet,
    round_idx: u64,
    seed: u64,
) -> BTreeMap<DeviceId, DeviceConditions> {
    let gauss = Normal::new(spec.bw_mean_mbps, spec.bw_stddev_mbps)
        .expect("validated stddev is nonnegative and finite");
    fleet
        .ids()
        .map(|id| {
            let mut rng = substream(seed, tag::VARIANCE, round_idx, id as u64);
            let interference = if rng.gen::<f64>() < spec.interference_prob {
                InterferenceState {
                    cpu_util: rng.gen_range(spec.co_cpu_util.0..=spec.co_cpu_util.1),
                    mem_util: rng.gen_range(spec.co_mem_util.0..=spec.co_mem_util.1),
                }
            } else {
                InterferenceState::NONE
            };
            let bandwidth = gauss.sample(&mut rng).max(spec.bw_floor_mbps);
            (id, (interference, NetworkState { bandwidth_mbps: bandwidth }))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::device::{build_fleet, FleetSpec};

    #[test]
    fn degenerate_spec_gives_constant_conditions() {
        let fleet = build_fleet(&FleetSpec::new(2, 2, 2)).unwrap();
        let spec = VarianceSpec {
            interference_prob: 0.0,
            bw_stddev_mbps: 0.0,
            bw_mean_mbps: 80.0,
            ..VarianceSpec::default()
        };
        let conds = sample_round_conditions(&spec, &fleet, 0, 11);
        for (interf, net) in conds.values() {
            assert_eq!(*interf, InterferenceState::NONE);
            assert_eq!(net.bandwidth_mbps, 80.0);
            assert_eq!(net.signal_band(), SignalBand::Strong);
        }
    }

    #[test]
    fn weak_band_at_boundary() {
        assert_eq!(NetworkState { bandwidth_mbps: 40.0 }.signal_band(), SignalBand::Weak);
        assert_eq!(NetworkState { bandwidth_mbps: 40.0001 }.signal_band(), SignalBand::Strong);
        let fleet = build_fleet(&FleetSpec::new(0, 0, 3)).unwrap();
        let spec = VarianceSpec { bw_mean_mbps: 30.0, bw_stddev_mbps: 0.0, ..VarianceSpec::default() };
        let conds = sample_round_conditions(&spec, &fleet, 5, 1);
        assert!(conds.values().all(|(_, net)| net.signal_band() == SignalBand::Weak));
    }

    #[test]
    fn interference_frequency_tracks_probability() {
        let fleet = build_fleet(&FleetSpec::new(0, 0, 10)).unwrap();
        let spec = VarianceSpec { interference_prob: 0.3, ..VarianceSpec::default() };
        let mut hits = 0u32;
        let mut total = 0u32;
        for round in 0..1000 {
            for (interf, _) in sample_round_conditions(&spec, &fleet, round, 99).values() {
                total += 1;
                if interf.cpu_util > 0.0 {
                    hits += 1;
                }
            }
        }
        let freq = hits as f64 / total as f64;
        assert!((0.28..=0.32).contains(&freq), "frequency {freq}");
    }

    #[test]
    fn deterministic_and_device_independent() {
        let fleet = build_fleet(&FleetSpec::new(1, 1, 1)).unwrap();
        let spec = VarianceSpec { interference_prob: 0.5, ..VarianceSpec::default() };
        let a = sample_round_conditions(&spec, &fleet, 7, 3);
        let b = sample_round_conditions(&spec, &fleet, 7, 3);
        assert_eq!(a, b);
        let c = sample_round_conditions(&spec, &fleet, 8, 3);
        assert_ne!(a, c);
    }

    #[test]
    fn bandwidth_never_below_floor() {
        let fleet = build_fleet(&FleetSpec::new(0, 0, 5)).unwrap();
        let spec = VarianceSpec { bw_mean_mbps: 2.0, bw_stddev_mbps: 50.0, bw_floor_mbps: 1.0, ..VarianceSpec::default() };
        for round in 0..200 {
            for (_, net) in sample_round_conditions(&spec, &fleet, round, 4).values() {
                assert!(net.bandwidth_mbps >= 1.0);
            }
        }
    }
}
