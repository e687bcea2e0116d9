//! Adaptive task allocation and execution for heterogeneous robot teams.
//!
//! Robots are single integrators. Each task is a go-to-goal cost encoded as a
//! control barrier constraint with a slack; a per-step mixed-integer QP picks
//! which task each robot prioritizes and the velocity commands, and robot
//! specializations are adapted online from the gap between predicted and
//! measured progress.
//!
//! Modules, bottom up: [`qp`] (dense convex QP solver), [`task`] (costs and
//! barrier rows), [`allocator`], [`adaptation`], [`world`] (disturbed
//! dynamics and the closed loop), [`scenario`] (documents and traces) and
//! [`oracle`] (reference solvers for self-tests).

pub mod adaptation;
pub mod allocator;
pub mod geometry;
pub mod oracle;
pub mod qp;
pub mod scenario;
pub mod task;
pub mod world;
