pub mod agents;
pub mod audit;
pub mod clock;
pub mod decision;
pub mod evaluation;
pub mod events;
pub mod policy;
pub mod trust;
pub mod ledger;
pub mod orchestrator;
pub mod rng;
pub mod scenario;
pub mod telemetry;
