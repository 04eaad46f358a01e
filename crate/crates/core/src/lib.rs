//! Chart fact-checking toolkit: dataset synthesis from tables and claims,
//! chart rendering and reading, input sequence generation, and a small
//! from-scratch neural stack with a structurally embedded transformer and
//! multimodal fusion baselines.

pub mod chartbert;
pub mod data;
pub mod encoder;
pub mod experiment;
pub mod fusion;
pub mod geometry;
pub mod linker;
pub mod nn;
pub mod pipeline;
pub mod reader;
pub mod render;
pub mod seqgen;
pub mod synth;
pub mod text;
pub mod train;
