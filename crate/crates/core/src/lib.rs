//! Interactive evolution of GLSL fragment shaders with language-model
//! operators.
//!
//! The human (or an autopilot policy) selects favourites from a population;
//! [`evolution::Engine::evolve_step`] keeps them and refills the other slots
//! with validated mutants or crossover hybrids. Every candidate goes through
//! [`glsl::validate_candidate`] before it can enter a population.

pub mod audio;
pub mod evolution;
pub mod genome;
pub mod glsl;
pub mod operators;
pub mod persistence;
pub mod seed;
pub mod seeds;
