pub mod channel;
pub mod cli;
pub mod dependability;
pub mod engine;
pub mod error;
pub mod experiment;
pub mod metrics;
pub mod scenario;
pub mod sim;
pub mod transport;
