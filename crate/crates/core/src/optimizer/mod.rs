//! L-BFGS and the alternating block schedule over relative motions, reference pose and shape.

mod alternate;
mod lbfgs;

pub use alternate::{
    alternate_optimize, optimize_direct_points, Block, BlockMask, BlockOrder, DirectOutcome, OptimizationState, OptimizeOutcome,
    OptimizerOptions, Termination, TraceRow,
};
pub use lbfgs::{lbfgs_minimize, LbfgsOptions, LbfgsResult, LbfgsStatus};
