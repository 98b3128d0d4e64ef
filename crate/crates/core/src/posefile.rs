//! Machine-readable pose result files (JSON).
//!
//! Both the estimator's output and the synthetic benchmark's ground truth
//! use this format, so evaluation tooling handles them interchangeably.

use std::fs;
use std::path::Path;

use nalgebra::Point3;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::Capsule;
use crate::skeleton::{PoseParams, PosedLink, PosedModel, Skeleton};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PoseFileLink {
    pub id: u32,
    pub start: [f64; 3],
    pub end: [f64; 3],
    pub radius: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PoseFile {
    /// Name of the skeleton this pose belongs to (not a path).
    pub skeleton: String,
    pub theta: Vec<f64>,
    /// World endpoints from forward kinematics, for consumers that do not
    /// re-run FK.
    pub links: Vec<PoseFileLink>,
    pub objective: f64,
    pub seed: u64,
    /// Full-objective evaluations spent producing this pose.
    pub evaluations: u64,
    /// Point-level distance queries spent.
    pub distance_queries: u64,
}

impl PoseFile {
    pub fn new(
        skeleton: &Skeleton,
        pose: &PoseParams,
        objective: f64,
        seed: u64,
        evaluations: u64,
        distance_queries: u64,
    ) -> Result<PoseFile> {
        let model = skeleton.forward_kinematics(pose)?;
        let links = model
            .segments
            .iter()
            .map(|s| PoseFileLink {
                id: s.link_id,
                start: [s.capsule.a.x, s.capsule.a.y, s.capsule.a.z],
                end: [s.capsule.b.x, s.capsule.b.y, s.capsule.b.z],
                radius: s.capsule.radius,
            })
            .collect();
        Ok(PoseFile {
            skeleton: skeleton.name().to_owned(),
            theta: pose.theta().to_vec(),
            links,
            objective,
            seed,
            evaluations,
            distance_queries,
        })
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("pose file serializes");
        s.push('\n');
        s
    }

    pub fn from_json(text: &str) -> Result<PoseFile> {
        serde_json::from_str(text).map_err(|e| Error::PoseFile(e.to_string()))
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        fs::write(path.as_ref(), self.to_json())?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<PoseFile> {
        let text = fs::read_to_string(path.as_ref())?;
        PoseFile::from_json(&text)
    }

    pub fn pose(&self) -> PoseParams {
        PoseParams::from_theta(self.theta.clone())
    }

    /// Reconstruct the posed model from the stored endpoints.
    pub fn posed_model(&self) -> PosedModel {
        PosedModel {
            segments: self
                .links
                .iter()
                .map(|l| PosedLink {
                    link_id: l.id,
                    capsule: Capsule {
                        a: Point3::new(l.start[0], l.start[1], l.start[2]),
                        b: Point3::new(l.end[0], l.end[1], l.end[2]),
                        radius: l.radius,
                    },
                })
                .collect(),
        }
    }

    /// Check the file against a skeleton: matching name and theta length,
    /// and stored endpoints within 1e-9 of recomputed forward kinematics.
    pub fn validate_against(&self, skeleton: &Skeleton) -> Result<()> {
        if self.skeleton != skeleton.name() {
            return Err(Error::PoseFile(format!(
                "file is for skeleton `{}`, expected `{}`",
                self.skeleton,
                skeleton.name()
            )));
        }
        if self.theta.len() != skeleton.dof_count() {
            return Err(Error::PoseDimension {
                skeleton: skeleton.name().to_owned(),
                expected: skeleton.dof_count(),
                got: self.theta.len(),
            });
        }
        let model = skeleton.forward_kinematics(&self.pose())?;
        if self.links.len() != model.len() {
            return Err(Error::PoseFile(format!(
                "{} stored links, skeleton has {}",
                self.links.len(),
                model.len()
            )));
        }
        for (stored, fresh) in self.links.iter().zip(&model.segments) {
            let sa = Point3::new(stored.start[0], stored.start[1], stored.start[2]);
            let sb = Point3::new(stored.end[0], stored.end[1], stored.end[2]);
            if stored.id != fresh.link_id
                || (sa - fresh.capsule.a).norm() > 1e-9
                || (sb - fresh.capsule.b).norm() > 1e-9
            {
                return Err(Error::PoseFile(format!(
                    "stored endpoints of link {} disagree with forward kinematics",
                    stored.id
                )));
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::skeleton::{parse_skeleton, SceneBounds};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn chain2() -> Skeleton {
        parse_skeleton(crate::skeleton::tests::chain2_doc()).unwrap()
    }

    #[test]
    fn round_trips_through_its_own_parser() {
        let sk = chain2();
        let pose = sk.random_pose(
            &SceneBounds::cube(Point3::origin(), 0.5),
            &mut ChaCha8Rng::seed_from_u64(2),
        );
        let pf = PoseFile::new(&sk, &pose, 0.125, 42, 1000, 300_000).unwrap();
        let back = PoseFile::from_json(&pf.to_json()).unwrap();
        assert_eq!(back, pf);
        back.validate_against(&sk).unwrap();
    }

    #[test]
    fn validation_catches_edited_endpoints() {
        let sk = chain2();
        let pose = sk.random_pose(
            &SceneBounds::cube(Point3::origin(), 0.5),
            &mut ChaCha8Rng::seed_from_u64(3),
        );
        let mut pf = PoseFile::new(&sk, &pose, 0.0, 0, 0, 0).unwrap();
        pf.links[1].end[0] += 0.01;
        assert!(pf.validate_against(&sk).is_err());
    }

    #[test]
    fn wrong_skeleton_name_is_rejected() {
        let sk = chain2();
        let pose = sk.random_pose(
            &SceneBounds::cube(Point3::origin(), 0.5),
            &mut ChaCha8Rng::seed_from_u64(4),
        );
        let mut pf = PoseFile::new(&sk, &pose, 0.0, 0, 0, 0).unwrap();
        pf.skeleton = "somebody_else".into();
        assert!(pf.validate_against(&sk).is_err());
    }
}
