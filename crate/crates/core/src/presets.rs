//! Benchmark configuration: a second-order unstable plant over the SINR
//! channel `(c, xi, sigma) = (1, 3, 0.4)`.

use nalgebra::DMatrix;

use crate::attacks::explicit_strategy;
use crate::model::{ChannelParams, DisturbanceModel, PlantModel};
use crate::sim::SimConfig;

pub const BENCH_A: [[f64; 2]; 2] = [[0.1, -1.0], [1.1, 1.8]];
pub const BENCH_B: [[f64; 1]; 2] = [[0.0], [1.0]];
pub const BENCH_K: [[f64; 2]; 1] = [[-0.9277, -1.2615]];
pub const BENCH_P: [[f64; 2]; 2] = [[0.7728, 0.8554], [0.8554, 3.2649]];
pub const BENCH_X0: [f64; 2] = [1.0, 1.0];

/// Uniform disturbance half-width used in the burst-attack experiments.
pub const BENCH_DISTURBANCE_HALF_WIDTH: f64 = 0.5;

pub fn benchmark_plant() -> PlantModel {
    PlantModel::new(
        DMatrix::from_row_iterator(2, 2, BENCH_A.iter().flatten().copied()),
        DMatrix::from_row_iterator(2, 1, BENCH_B.iter().flatten().copied()),
        DMatrix::from_row_iterator(1, 2, BENCH_K.iter().flatten().copied()),
        nalgebra::DVector::from_column_slice(&BENCH_X0),
    )
    .expect("benchmark plant is consistent")
}

pub fn benchmark_channel() -> ChannelParams {
    ChannelParams::new(1.0, 3.0, 0.4).expect("benchmark channel is valid")
}

pub fn benchmark_p() -> DMatrix<f64> {
    DMatrix::from_row_iterator(2, 2, BENCH_P.iter().flatten().copied())
}

/// Average-power budget rate shared by the burst experiments.
pub const BURST_RATE: f64 = 1.28;
/// Windowed-budget offset that admits the 40-step burst at power 32.
pub const BURST_WINDOW_KAPPA: f64 = 1228.8;
pub const BURST_POWER: f64 = 32.0;
/// `(sleep, jam)` of the short and the long burst.
pub const SHORT_BURST: (u64, u64) = (960, 40);
pub const LONG_BURST: (u64, u64) = (1440, 60);
pub const BURST_HORIZON: usize = 2000;
pub const BURST_RUNS: usize = 500;

/// Countermeasure grid: boosted powers, failure triggers and boost durations.
pub const COUNTERMEASURE_POWERS: [f64; 2] = [6.0, 12.0];
pub const COUNTERMEASURE_TRIGGERS: [u32; 2] = [2, 4];
pub const COUNTERMEASURE_DURATIONS: [u32; 2] = [4, 8];

/// Every `(xi_c, n_c, t_c)` of the countermeasure grid.
pub fn countermeasure_grid() -> Vec<(f64, u32, u32)> {
    let mut grid = Vec::new();
    for &xi in &COUNTERMEASURE_POWERS {
        for &n in &COUNTERMEASURE_TRIGGERS {
            for &t in &COUNTERMEASURE_DURATIONS {
                grid.push((xi, n, t));
            }
        }
    }
    grid
}

/// Benchmark loop under a single burst of power 32, optionally with the
/// uniform disturbance.
pub fn burst_config(burst: (u64, u64), disturbed: bool, horizon: usize, runs: usize, seed: u64) -> SimConfig {
    let disturbance = if disturbed {
        DisturbanceModel::Uniform { half_width: BENCH_DISTURBANCE_HALF_WIDTH }
    } else {
        DisturbanceModel::None
    };
    let strategy = explicit_strategy(burst.0, burst.1, BURST_POWER, None).expect("burst schedule is valid");
    SimConfig::new(benchmark_plant(), benchmark_channel(), strategy, disturbance, horizon, runs, seed)
        .expect("burst configuration is valid")
}
