//! Core of the locokit robot control framework.
//!
//! * [`model`]: URDF-subset robot descriptions, gains files, the shipped fixture robots.
//! * [`kindyn`]: forward kinematics, Jacobians, RNEA, CRBA, forward dynamics, CoM and centroidal quantities.
//! * [`bus`]: in-process publish/subscribe for `/command`, `/joint_states`, `/ground_truth`, `/diagnostics`.
//! * [`lowlevel`]: the fixed-rate joint impedance loop (PID plus feed-forward effort).
//! * [`backends`]: the simulator and the mock hardware driver behind one [`backends::Backend`] trait.
//! * [`control`]: the high-level controller core, IK, trajectories, GRF estimation and logging.

// `!(x > 0.0)` checks are written that way to reject NaN as well.
#![allow(clippy::neg_cmp_op_on_partial_ord)]
// Link-indexed loops walk several parallel per-link arrays at once.
#![allow(clippy::needless_range_loop)]

pub mod backends;
pub mod bus;
pub mod control;
pub mod csvfmt;
pub mod kindyn;
pub mod lowlevel;
pub mod model;
