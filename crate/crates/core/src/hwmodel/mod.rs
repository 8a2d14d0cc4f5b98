//! Dataflow kernels, list scheduling and the area/latency cost model.

mod cost;
mod estimate;
mod kernel;
mod schedule;

pub use cost::{Areas, CostModel, Latencies};
pub use estimate::{
    estimate_area, estimate_latency, AreaEstimate, BlockLatency, LatencyMode, LatencyReport,
    WALK_LIMIT,
};
pub use kernel::{
    build_kernel, BlockGraph, KernelError, KernelGraph, KernelMethod, Node, NodeOp, Operand,
    Terminator,
};
pub use schedule::{node_latency, schedule, BlockSchedule, ScheduledKernel};
