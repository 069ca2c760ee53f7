pub mod baselines;
pub mod eval;
pub mod graph;
pub mod measurement;
pub mod model;
pub mod numeric;
pub mod pipeline;
pub mod training;
