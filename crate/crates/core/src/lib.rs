pub mod distill;
pub mod env;
pub mod extraction;
pub mod gate;
mod hash;
pub mod policy;
pub mod skillbank;
pub mod trainer;
