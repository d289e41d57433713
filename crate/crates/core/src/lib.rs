//! Persona-conditioned tweet simulation: corpus ingest, user profiling,
//! time-decayed memory, two-stage generation, evaluation and sampling.

pub mod corpus;
pub mod evaluation;
pub mod experiment;
pub mod llm;
pub mod memory;
pub mod profiling;
pub mod prompts;
pub mod sampling;
pub mod text;
pub mod vector;
pub mod workflow;
