pub mod codec;
pub mod domain;
pub mod memory;
pub mod world;
pub mod inference;
pub mod policy;
pub mod protocols;
pub mod rollout;
pub mod metrics;
