//! Training and evaluation stack for privileged reinforcement learning on a
//! partially observable UAV navigation task.
//!
//! The stack is a vertical slice with no external runtime dependencies:
//!
//! * [`world`] — procedural cylinder fields and exact geometric queries (the
//!   privileged obstacle map),
//! * [`vehicle`] — first-order point-mass kinematics and episode outcomes,
//! * [`sensing`] — an analytic ray-cast depth camera and the 8-dim self state,
//! * [`corruption`] — the observation-noise ladder that creates partial
//!   observability,
//! * [`reward`] — shaped progress/path/proximity reward plus sparse terminal
//!   rewards,
//! * [`replay`] — a concurrent FIFO experience ring,
//! * [`agent`] — asymmetric-critic TD3 (critics see clean observations,
//!   the actor sees corrupted ones),
//! * [`env`] — the episode state machine tying the above together,
//! * [`orchestrator`] — multi-worker collection, the learner loop, evaluation
//!   and metrics, in deterministic lockstep or threaded async mode.
//!
//! Every random choice flows from an explicit seed through a counter-based
//! stream, and numeric paths iterate in fixed order, so lockstep runs are
//! bit-reproducible.

pub mod agent;
pub mod corruption;
pub mod env;
pub mod orchestrator;
pub mod replay;
pub mod reward;
pub mod sensing;
pub mod vehicle;
pub mod world;
