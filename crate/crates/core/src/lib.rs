//! Land-use planning simulation: scenarios, synthetic residents, metrics,
//! baseline planners and a participatory pipeline driven by role-played
//! agents.

pub mod agents;
pub mod domain;
pub mod exec;
pub mod geometry;
pub mod metrics;
pub mod pipeline;
pub mod planners;
pub mod population;
pub mod scenario_gen;
