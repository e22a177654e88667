pub mod expr;
pub mod ode;
pub mod series;
pub mod jet;
pub mod flow;
pub mod wilczynski;
pub mod distribution;
pub mod legendre;
pub mod classifier;
