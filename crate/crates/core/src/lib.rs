pub mod arith;
pub mod config;
pub mod cpu;
pub mod experiment;
pub mod isa;
pub mod machine;
pub mod mapping;
pub mod memory;
pub mod mmae;
pub mod noc;
pub mod oracle;
pub mod queues;
pub mod sim;
pub mod stats;
pub mod tiling;
pub mod translation;
