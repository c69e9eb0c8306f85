//! Load generation, latency reporting, autoscaling and Sybil races.

pub mod live;
pub mod load;
pub mod race;
pub mod report;
pub mod scale;
pub mod sim;

pub use live::{run_in_process, run_load, Autoscale, Endpoints, LiveOptions};
pub use load::{schedule, FlashCrowd, LoadConfig, PlannedRequest, RunConfig, RunMode};
pub use race::{sybil_race, sybil_race_on, RaceMode, RaceOutcome};
pub use report::{LatencyReport, Op, Outcome, Sample, Stats};
pub use scale::{scaling_controller, ReplicaPool, ScaleController, ScalePolicy};
pub use sim::{simulate, CostModel, SimConfig};
