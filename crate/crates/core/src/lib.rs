pub mod asm;
pub mod embed;
pub mod flow;
pub mod gnn;
pub mod nn;
pub mod patch;
pub mod pipeline;
pub mod synth;
