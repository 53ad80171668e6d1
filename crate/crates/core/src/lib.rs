pub mod artifact;
pub mod config;
pub mod grasp;
pub mod kinematics;
pub mod log;
pub mod perception;
pub mod policy;
pub mod se3;
pub mod sim;
pub mod snapshot;
pub mod trial;
