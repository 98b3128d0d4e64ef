//! Training-free articulated pose estimation from a single depth image.
//!
//! Given an arbitrary kinematic skeleton (a rooted tree of capsule links
//! with parameterizable joint angles and lengths) and a point cloud from a
//! depth image, the crate searches for the pose parameters that minimize a
//! robust mean-log distance objective using a seeded evolutionary algorithm,
//! with a hill-climbing baseline for comparison and a synthetic rendering
//! harness for quantitative ground-truth evaluation.
//!
//! - [`skeleton`]: skeleton model, parameter layout, forward kinematics
//! - [`geometry`]: point-to-capsule distance queries
//! - [`objective`]: the robust fitting loss and its σ statistic
//! - [`depthio`]: 16-bit PGM depth maps and `.xyz` cloud files
//! - [`evolution`]: evolutionary optimizer and hill-climbing baseline
//! - [`syntheval`]: ray-traced synthetic benchmarks and accuracy scoring
//! - [`posefile`]: the JSON pose result format

pub mod depthio;
pub mod error;
pub mod evolution;
pub mod geometry;
pub mod objective;
pub mod posefile;
pub mod skeleton;
pub mod syntheval;

pub use error::{Error, Result};
pub use evolution::{evolve, hill_climb, EAConfig, RunStats};
pub use geometry::{distance_to_model, Capsule};
pub use objective::{evaluate, evaluate_batch, ObjectiveValue, PointCloud};
pub use posefile::PoseFile;
pub use skeleton::{parse_skeleton, PoseParams, PosedModel, SceneBounds, Skeleton};
