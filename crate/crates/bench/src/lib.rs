//! Fixtures shared by the benchmarks.

use onebit_core::{ConstellationKind, CorrelationMode, CsiMode, SimConfig};

/// Desk-scale uplink: 128 antennas, 200-symbol blocks, 20 pilots per frame.
pub fn desk_config(users: usize, constellation: ConstellationKind) -> SimConfig {
    SimConfig {
        antennas: 128,
        users,
        coherence_time: 200,
        pilots: 20,
        rho: 1.0,
        constellation,
        correlation: CorrelationMode::Iid,
        csi: CsiMode::Estimated,
        frames: 1,
        seed: 0,
    }
}
