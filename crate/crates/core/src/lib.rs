//! A laboratory for leveled context-free grammars.

pub mod attention;
pub mod cli;
pub mod corpus;
pub mod evaluation;
pub mod grammar;
pub mod implicit;
pub mod parser;
pub mod perturbation;
pub mod probe;
pub mod rng;
pub mod sampler;
pub mod tensor;
