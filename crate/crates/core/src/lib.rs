//! Collision-free inverse kinematics for several redundant manipulators that
//! share a workspace with moving obstacles.
//!
//! Each manipulator is solved with a pair of IK solvers raced against each
//! other. Its links are covered by spheres and checked against truncated
//! velocity obstacles. When a collision is predicted, a particle swarm
//! searches over IK seeds for a solution that clears every obstacle.

pub mod chain;
pub mod error;
pub mod ik;
pub mod planner;
pub mod pso;
pub mod rvo;
pub mod sim;

pub use chain::{JointConfig, JointLimit, KinematicChain, Pose};
pub use error::{ChainError, IkError, LogError, PlanError, SceneError};
