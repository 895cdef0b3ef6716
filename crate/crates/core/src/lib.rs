pub mod measures;
pub mod nn;
pub mod pipeline;
pub mod robust_eval;
pub mod robust_regress;
pub mod seed;
pub mod stats;
pub mod trainer;
