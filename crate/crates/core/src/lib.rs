//! Hierarchical instruction-following navigation.
//!
//! A step of the agent runs three translations: a planner model turns the
//! instruction, history and four current views into a coarse language action
//! (a direction, a backtrack, or stop); a grounding model turns the chosen
//! view into a bounding box; the robot layer unprojects the box's goal pixel,
//! maps it onto an occupancy grid, plans with fast marching and emits
//! discrete motion commands.

pub mod geometry;
pub mod grid;
pub mod mapping;
pub mod planner;
pub mod action;
pub mod history;
pub mod mllm;
pub mod pipeline;
pub mod sim;
pub mod metrics;
