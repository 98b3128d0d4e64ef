//! Robust mean-log fitting loss of a posed skeleton against a point cloud.
//!
//! For points `p_n` and a posed model, the loss is
//! `(1/N) * Σ ln(1 + d_n / σ)` where `d_n` is the distance from `p_n` to the
//! nearest capsule surface and `σ` is a per-cloud scale statistic. The log
//! saturates, so far outliers cannot dominate the fit.

use nalgebra::Point3;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::geometry;
use crate::skeleton::{PoseParams, PosedModel, Skeleton};

/// Lower bound on σ; keeps degenerate clouds (all points coincident) from
/// dividing by zero.
pub const SIGMA_FLOOR: f64 = 1e-6;

/// Observed 3D points (meters, camera frame) with their cached σ statistic.
#[derive(Debug, Clone, PartialEq)]
pub struct PointCloud {
    points: Vec<Point3<f64>>,
    sigma: f64,
}

impl PointCloud {
    /// Build a cloud and compute σ once; σ is never recomputed per pose.
    pub fn new(points: Vec<Point3<f64>>) -> Result<Self> {
        let sigma = compute_sigma(&points)?;
        Ok(PointCloud { points, sigma })
    }

    /// Build a cloud with an explicit σ override.
    pub fn with_sigma(points: Vec<Point3<f64>>, sigma: f64) -> Result<Self> {
        if points.is_empty() {
            return Err(Error::EmptyCloud);
        }
        check_finite(&points)?;
        if !(sigma.is_finite() && sigma > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "sigma override must be positive, got {sigma}"
            )));
        }
        Ok(PointCloud { points, sigma })
    }

    pub fn points(&self) -> &[Point3<f64>] {
        &self.points
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn sigma(&self) -> f64 {
        self.sigma
    }

    pub fn centroid(&self) -> Point3<f64> {
        centroid(&self.points)
    }

    /// Deterministic random subsample of at most `max_points`, preserving
    /// point order. Returns a clone when the cloud is already small enough.
    /// σ is recomputed on the subsample.
    pub fn subsample(&self, max_points: usize, seed: u64) -> Result<PointCloud> {
        if max_points == 0 {
            return Err(Error::InvalidArgument("max_points must be positive".into()));
        }
        if self.points.len() <= max_points {
            return Ok(self.clone());
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut picked =
            rand::seq::index::sample(&mut rng, self.points.len(), max_points).into_vec();
        picked.sort_unstable();
        PointCloud::new(picked.into_iter().map(|i| self.points[i]).collect())
    }
}

fn centroid(points: &[Point3<f64>]) -> Point3<f64> {
    let mut acc = Point3::origin();
    for p in points {
        acc += p.coords;
    }
    acc / points.len() as f64
}

fn check_finite(points: &[Point3<f64>]) -> Result<()> {
    if points
        .iter()
        .any(|p| !(p.x.is_finite() && p.y.is_finite() && p.z.is_finite()))
    {
        return Err(Error::NonFinite {
            context: "point cloud".into(),
        });
    }
    Ok(())
}

/// Population standard deviation of point distances from the centroid,
/// floored at [`SIGMA_FLOOR`].
pub fn compute_sigma(points: &[Point3<f64>]) -> Result<f64> {
    if points.is_empty() {
        return Err(Error::EmptyCloud);
    }
    check_finite(points)?;
    let c = centroid(points);
    let dists: Vec<f64> = points.iter().map(|p| (p - c).norm()).collect();
    let mean = dists.iter().sum::<f64>() / dists.len() as f64;
    let var = dists.iter().map(|d| (d - mean) * (d - mean)).sum::<f64>() / dists.len() as f64;
    Ok(var.sqrt().max(SIGMA_FLOOR))
}

/// Loss value plus the number of point-distance queries it took.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ObjectiveValue {
    /// Mean robust log term, nats; non-negative.
    pub value: f64,
    /// Point-distance queries performed (one per cloud point).
    pub evaluations: u64,
}

/// Score a pose: runs forward kinematics once and sums the per-point terms
/// in index order.
pub fn evaluate(skeleton: &Skeleton, pose: &PoseParams, cloud: &PointCloud) -> Result<ObjectiveValue> {
    let model = skeleton.forward_kinematics(pose)?;
    evaluate_posed(&model, cloud)
}

/// Score an already-posed model against a cloud.
pub fn evaluate_posed(model: &PosedModel, cloud: &PointCloud) -> Result<ObjectiveValue> {
    if model.is_empty() {
        return Err(Error::EmptyModel);
    }
    if cloud.is_empty() {
        return Err(Error::EmptyCloud);
    }
    let sigma = cloud.sigma();
    let mut sum = 0.0;
    for &p in cloud.points() {
        let (d, _) = geometry::nearest_link(p, model);
        sum += (1.0 + d / sigma).ln();
    }
    Ok(ObjectiveValue {
        value: sum / cloud.len() as f64,
        evaluations: cloud.len() as u64,
    })
}

/// Score many poses in parallel. Element `i` equals
/// `evaluate(skeleton, &poses[i], cloud)` bit-exactly; parallelism never
/// reorders a pose's own point sum.
pub fn evaluate_batch(
    skeleton: &Skeleton,
    poses: &[PoseParams],
    cloud: &PointCloud,
) -> Result<Vec<ObjectiveValue>> {
    poses
        .par_iter()
        .enumerate()
        .map(|(index, pose)| {
            evaluate(skeleton, pose, cloud).map_err(|e| Error::Batch {
                index,
                source: Box::new(e),
            })
        })
        .collect()
}

/// Sequential reference for [`evaluate_batch`]; same contract, one thread.
pub fn evaluate_batch_seq(
    skeleton: &Skeleton,
    poses: &[PoseParams],
    cloud: &PointCloud,
) -> Result<Vec<ObjectiveValue>> {
    poses
        .iter()
        .enumerate()
        .map(|(index, pose)| {
            evaluate(skeleton, pose, cloud).map_err(|e| Error::Batch {
                index,
                source: Box::new(e),
            })
        })
        .collect()
}
