//! Discretized controller state.
//!
//! The global state captures the workload shape and FL parameters; the
//! local state captures each device's runtime variance and data skew. Bin
//! edges are fixed, with the lower-most bin winning ties stated as
//! inclusive upper bounds.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::data::{classes_present, ShardSet};
use crate::device::DeviceId;
use crate::error::Result;
use crate::variance::{DeviceConditions, SignalBand};
use crate::workload::{GlobalParams, NnDescriptor};

macro_rules! bin_enum {
    ($(#[$meta:meta])* $name:ident { $($variant:ident),+ $(,)? }) => {
        $(#[$meta])*
        #[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
        pub enum $name { $($variant),+ }

        impl $name {
            pub const ALL: &'static [$name] = &[$($name::$variant),+];

            pub fn index(self) -> usize {
                Self::ALL.iter().position(|&v| v == self).expect("variant listed")
            }

            pub fn as_str(self) -> &'static str {
                match self { $($name::$variant => stringify!($variant)),+ }
            }

            pub fn parse(s: &str) -> Option<Self> {
                match s { $(stringify!($variant) => Some($name::$variant),)+ _ => None }
            }
        }
    };
}

bin_enum!(
    /// Convolution layer count: <10, <20, <30, and everything above.
    ConvBin { Small, Medium, Large, Larger }
);
bin_enum!(
    /// Fully-connected layer count: <10, >=10.
    FcBin { Small, Large }
);
bin_enum!(
    /// Recurrent layer count: <5, <10, >=10.
    RcBin { Small, Medium, Large }
);
bin_enum!(
    /// Batch size: <8, <32, >=32.
    BatchBin { Small, Medium, Large }
);
bin_enum!(
    /// Local epochs: <5, <10, >=10.
    EpochBin { Small, Medium, Large }
);
bin_enum!(
    /// Participants per round: <10, <50, >=50.
    KBin { Small, Medium, Large }
);
bin_enum!(
    /// Co-runner utilization: exactly zero, <25%, <75%, <=100%.
    CoUtilBin { None, Small, Medium, Large }
);
bin_enum!(
    /// Network band: regular (>40 Mbps) or bad (<=40 Mbps).
    NetworkBin { Regular, Bad }
);
bin_enum!(
    /// Fraction of all classes present: <25%, <100%, =100%.
    DataBin { Small, Medium, Large }
);

impl ConvBin {
    pub fn from_count(n: u32) -> Self {
        match n {
            0..=9 => ConvBin::Small,
            10..=19 => ConvBin::Medium,
            20..=29 => ConvBin::Large,
            _ => ConvBin::Larger,
        }
    }
}

impl FcBin {
    pub fn from_count(n: u32) -> Self {
        if n < 10 { FcBin::Small } else { FcBin::Large }
    }
}

impl RcBin {
    pub fn from_count(n: u32) -> Self {
        match n {
            0..=4 => RcBin::Small,
            5..=9 => RcBin::Medium,
            _ => RcBin::Large,
        }
    }
}

impl BatchBin {
    pub fn from_size(b: usize) -> Self {
        match b {
            0..=7 => BatchBin::Small,
            8..=31 => BatchBin::Medium,
            _ => BatchBin::Large,
        }
    }
}

impl EpochBin {
    pub fn from_count(e: usize) -> Self {
        match e {
            0..=4 => EpochBin::Small,
            5..=9 => EpochBin::Medium,
            _ => EpochBin::Large,
        }
    }
}

impl KBin {
    pub fn from_count(k: usize) -> Self {
        match k {
            0..=9 => KBin::Small,
            10..=49 => KBin::Medium,
            _ => KBin::Large,
        }
    }
}

impl CoUtilBin {
    pub fn from_fraction(f: f64) -> Self {
        if f == 0.0 {
            CoUtilBin::None
        } else if f < 0.25 {
            CoUtilBin::Small
        } else if f < 0.75 {
            CoUtilBin::Medium
        } else {
            CoUtilBin::Large
        }
    }
}

impl NetworkBin {
    pub fn from_band(band: SignalBand) -> Self {
        match band {
            SignalBand::Strong => NetworkBin::Regular,
            SignalBand::Weak => NetworkBin::Bad,
        }
    }
}

impl DataBin {
    pub fn from_fraction(f: f64) -> Self {
        if f >= 1.0 {
            DataBin::Large
        } else if f >= 0.25 {
            DataBin::Medium
        } else {
            DataBin::Small
        }
    }
}

/// Workload/parameter state shared by all devices in a round.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct GlobalState {
    pub conv: ConvBin,
    pub fc: FcBin,
    pub rc: RcBin,
    pub batch: BatchBin,
    pub epochs: EpochBin,
    pub k: KBin,
}

impl GlobalState {
    pub const CARDINALITY: usize = 4 * 2 * 3 * 3 * 3 * 3;

    pub fn index(&self) -> usize {
        let mut idx = self.conv.index();
        idx = idx * 2 + self.fc.index();
        idx = idx * 3 + self.rc.index();
        idx = idx * 3 + self.batch.index();
        idx = idx * 3 + self.epochs.index();
        idx * 3 + self.k.index()
    }
}

/// Per-device runtime state.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct LocalState {
    pub co_cpu: CoUtilBin,
    pub co_mem: CoUtilBin,
    pub network: NetworkBin,
    pub data: DataBin,
}

impl LocalState {
    pub const CARDINALITY: usize = 4 * 4 * 2 * 3;

    pub fn index(&self) -> usize {
        let mut idx = self.co_cpu.index();
        idx = idx * 4 + self.co_mem.index();
        idx = idx * 2 + self.network.index();
        idx * 3 + self.data.index()
    }
}

/// Discretizes the round's observables into controller state.
pub fn featurize(
    nn: &NnDescriptor,
    params: &GlobalParams,
    conditions: &BTreeMap<DeviceId, DeviceConditions>,
    shards: &ShardSet,
) -> Result<(GlobalState, BTreeMap<DeviceId, LocalState>)> {
    let global = GlobalState {
        conv: ConvBin::from_count(nn.conv_layers),
        fc: FcBin::from_count(nn.fc_layers),
        rc: RcBin::from_count(nn.rc_layers),
        batch: BatchBin::from_size(params.batch_size),
        epochs: EpochBin::from_count(params.local_epochs),
        k: KBin::from_count(params.participants_per_round),
    };
    let mut locals = BTreeMap::new();
    for (&id, (interference, network)) in conditions {
        let present = classes_present(shards, id)? as f64;
        let frac = present / shards.num_classes as f64;
        locals.insert(
            id,
            LocalState {
                co_cpu: CoUtilBin::from_fraction(interference.cpu_util),
                co_mem: CoUtilBin::from_fraction(interference.mem_util),
                network: NetworkBin::from_band(network.signal_band()),
                data: DataBin::from_fraction(frac),
            },
        );
    }
    Ok((global, locals))
}
