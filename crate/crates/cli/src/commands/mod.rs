pub mod eval;
pub mod fig2;
pub mod folds;
pub mod gen;
pub mod train;
