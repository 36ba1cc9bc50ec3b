pub mod aggregate;
pub mod cluster;
pub mod gateway;
pub mod geo;
pub mod numbers;
pub mod pipeline;
pub mod planner;
pub mod store;
pub mod synth;
pub mod telemetry;
pub mod validate;
