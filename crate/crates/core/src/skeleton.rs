//! Kinematic skeleton data model, parameter-vector layout, and forward
//! kinematics.
//!
//! A skeleton is an immutable rooted tree of capsule links. Its pose is a
//! flat parameter vector laid out as:
//!
//! ```text
//! [ root position (3), root orientation quaternion (w,x,y,z),
//!   then per link in topological order: joint angles, length (if free) ]
//! ```
//!
//! The quaternion stores 4 parameters for 3 rotational degrees of freedom;
//! `dof_count` reports stored-parameter counts, so a skeleton with no joints
//! still has 7.

use std::collections::{HashMap, HashSet};

use nalgebra::{Point3, Quaternion, Unit, UnitQuaternion, UnitVector3, Vector3};
use rand::Rng;
use serde::Deserialize;

use crate::error::{Error, Result};
use crate::geometry::Capsule;

/// Tolerance for unit-length checks (joint axes, pose quaternion).
pub const UNIT_TOL: f64 = 1e-9;

/// Default angle limits when a skeleton document omits them.
pub const DEFAULT_ANGLE_LIMITS: (f64, f64) = (-std::f64::consts::PI, std::f64::consts::PI);

/// Joint description: up to three rotation axes applied in order, plus an
/// optional free length.
#[derive(Debug, Clone, PartialEq)]
pub struct JointSpec {
    pub axes: Vec<UnitVector3<f64>>,
    /// One `(lo, hi)` interval per axis, radians.
    pub angle_limits: Vec<(f64, f64)>,
    pub length_free: bool,
    /// Required when `length_free`; meters.
    pub length_limits: Option<(f64, f64)>,
}

impl JointSpec {
    /// Number of pose parameters this joint contributes.
    pub fn param_count(&self) -> usize {
        self.axes.len() + usize::from(self.length_free)
    }
}

/// One rigid link of the tree.
#[derive(Debug, Clone, PartialEq)]
pub struct LinkSpec {
    pub id: u32,
    pub parent: Option<u32>,
    pub joint: JointSpec,
    /// Meters; used whenever the length is not a free parameter.
    pub default_length: f64,
    /// Capsule radius, meters.
    pub radius: f64,
}

/// Where a single scalar of the pose vector lives and what bounds it.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ParamKind {
    RootPosition { axis: usize },
    RootOrientation { component: usize },
    JointAngle { link: usize, axis: usize, lo: f64, hi: f64 },
    Length { link: usize, lo: f64, hi: f64 },
}

/// Immutable, validated kinematic tree.
#[derive(Debug, Clone)]
pub struct Skeleton {
    name: String,
    links: Vec<LinkSpec>,
    parent_index: Vec<Option<usize>>,
    children: Vec<Vec<usize>>,
    /// Offset of each link's parameter block in theta.
    param_offsets: Vec<usize>,
    layout: Vec<ParamKind>,
    dof: usize,
    /// Groups of interchangeable links (by id), e.g. left/right legs.
    symmetry_groups: Vec<Vec<u32>>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct SkeletonDoc {
    name: String,
    links: Vec<LinkDoc>,
    #[serde(default)]
    symmetry_groups: Vec<Vec<u32>>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct LinkDoc {
    id: u32,
    parent: Option<u32>,
    axes: Vec<[f64; 3]>,
    angle_limits: Option<Vec<[f64; 2]>>,
    length_free: bool,
    length_limits: Option<[f64; 2]>,
    default_length: f64,
    radius: f64,
}

/// Parse and validate a skeleton-spec JSON document.
pub fn parse_skeleton(text: &str) -> Result<Skeleton> {
    let doc: SkeletonDoc = serde_json::from_str(text)?;
    let mut links = Vec::with_capacity(doc.links.len());
    for link in doc.links {
        let axes = link
            .axes
            .iter()
            .map(|&[x, y, z]| {
                let v = Vector3::new(x, y, z);
                if !v.iter().all(|c| c.is_finite()) || (v.norm() - 1.0).abs() > UNIT_TOL {
                    return Err(Error::skeleton(
                        Some(link.id),
                        "axes",
                        format!("axis ({x}, {y}, {z}) is not unit length"),
                    ));
                }
                Ok(Unit::new_unchecked(v))
            })
            .collect::<Result<Vec<_>>>()?;
        let angle_limits = match link.angle_limits {
            Some(lims) => {
                if lims.len() != axes.len() {
                    return Err(Error::skeleton(
                        Some(link.id),
                        "angle_limits",
                        format!("{} intervals for {} axes", lims.len(), axes.len()),
                    ));
                }
                lims.iter().map(|&[lo, hi]| (lo, hi)).collect()
            }
            None => vec![DEFAULT_ANGLE_LIMITS; axes.len()],
        };
        links.push(LinkSpec {
            id: link.id,
            parent: link.parent,
            joint: JointSpec {
                axes,
                angle_limits,
                length_free: link.length_free,
                length_limits: link.length_limits.map(|[lo, hi]| (lo, hi)),
            },
            default_length: link.default_length,
            radius: link.radius,
        });
    }
    Skeleton::from_parts(doc.name, links, doc.symmetry_groups)
}

impl Skeleton {
    /// Build a skeleton from already-constructed links, enforcing every
    /// structural invariant. Links must be listed in topological order.
    pub fn from_parts(
        name: String,
        links: Vec<LinkSpec>,
        symmetry_groups: Vec<Vec<u32>>,
    ) -> Result<Skeleton> {
        if links.is_empty() {
            return Err(Error::skeleton(None, "links", "skeleton has no links"));
        }

        let mut index_of: HashMap<u32, usize> = HashMap::new();
        for (i, link) in links.iter().enumerate() {
            if index_of.insert(link.id, i).is_some() {
                return Err(Error::skeleton(Some(link.id), "id", "duplicate link id"));
            }
        }

        let mut parent_index = Vec::with_capacity(links.len());
        let mut roots = 0usize;
        for (i, link) in links.iter().enumerate() {
            match link.parent {
                None => {
                    roots += 1;
                    parent_index.push(None);
                }
                Some(pid) => {
                    if pid == link.id {
                        return Err(Error::skeleton(
                            Some(link.id),
                            "parent",
                            "link is its own parent (cycle)",
                        ));
                    }
                    let pi = *index_of.get(&pid).ok_or_else(|| {
                        Error::skeleton(
                            Some(link.id),
                            "parent",
                            format!("parent id {pid} does not exist"),
                        )
                    })?;
                    if pi >= i {
                        return Err(Error::skeleton(
                            Some(link.id),
                            "parent",
                            format!("parent id {pid} does not precede the link (cycle or bad order)"),
                        ));
                    }
                    parent_index.push(Some(pi));
                }
            }
        }
        match roots {
            0 => return Err(Error::skeleton(None, "parent", "no root link (cycle)")),
            1 => {}
            _ => return Err(Error::skeleton(None, "parent", "multiple root links")),
        }

        for link in &links {
            let joint = &link.joint;
            if joint.axes.len() > 3 {
                return Err(Error::skeleton(
                    Some(link.id),
                    "axes",
                    format!("{} rotational axes; at most 3 allowed", joint.axes.len()),
                ));
            }
            for (a, axis_a) in joint.axes.iter().enumerate() {
                for axis_b in joint.axes.iter().skip(a + 1) {
                    if (axis_a.as_ref() - axis_b.as_ref()).norm() <= UNIT_TOL {
                        return Err(Error::skeleton(
                            Some(link.id),
                            "axes",
                            "axes are not pairwise distinct",
                        ));
                    }
                }
            }
            for &(lo, hi) in &joint.angle_limits {
                if !(lo.is_finite() && hi.is_finite()) || lo > hi {
                    return Err(Error::skeleton(
                        Some(link.id),
                        "angle_limits",
                        format!("inverted or non-finite interval [{lo}, {hi}]"),
                    ));
                }
            }
            if joint.length_free {
                let (lo, hi) = joint.length_limits.ok_or_else(|| {
                    Error::skeleton(
                        Some(link.id),
                        "length_limits",
                        "required when length_free",
                    )
                })?;
                if !(lo.is_finite() && hi.is_finite()) || lo > hi || lo < 0.0 {
                    return Err(Error::skeleton(
                        Some(link.id),
                        "length_limits",
                        format!("invalid interval [{lo}, {hi}]"),
                    ));
                }
                if link.default_length < lo || link.default_length > hi {
                    return Err(Error::skeleton(
                        Some(link.id),
                        "default_length",
                        format!(
                            "{} outside length_limits [{lo}, {hi}]",
                            link.default_length
                        ),
                    ));
                }
            }
            if !(link.default_length.is_finite() && link.default_length > 0.0) {
                return Err(Error::skeleton(
                    Some(link.id),
                    "default_length",
                    "must be a positive number",
                ));
            }
            if !(link.radius.is_finite() && link.radius > 0.0) {
                return Err(Error::skeleton(Some(link.id), "radius", "must be a positive number"));
            }
        }

        let mut children = vec![Vec::new(); links.len()];
        for (i, pi) in parent_index.iter().enumerate() {
            if let Some(p) = *pi {
                children[p].push(i);
            }
        }

        let mut param_offsets = Vec::with_capacity(links.len());
        let mut layout = Vec::new();
        for axis in 0..3 {
            layout.push(ParamKind::RootPosition { axis });
        }
        for component in 0..4 {
            layout.push(ParamKind::RootOrientation { component });
        }
        for (i, link) in links.iter().enumerate() {
            param_offsets.push(layout.len());
            for (axis, &(lo, hi)) in link.joint.angle_limits.iter().enumerate() {
                layout.push(ParamKind::JointAngle { link: i, axis, lo, hi });
            }
            if link.joint.length_free {
                let (lo, hi) = link.joint.length_limits.expect("validated above");
                layout.push(ParamKind::Length { link: i, lo, hi });
            }
        }
        let dof = layout.len();

        let skeleton = Skeleton {
            name,
            links,
            parent_index,
            children,
            param_offsets,
            layout,
            dof,
            symmetry_groups: Vec::new(),
        };
        skeleton.validate_symmetry_groups(&symmetry_groups)?;
        Ok(Skeleton {
            symmetry_groups,
            ..skeleton
        })
    }

    fn validate_symmetry_groups(&self, groups: &[Vec<u32>]) -> Result<()> {
        let mut seen = HashSet::new();
        for group in groups {
            if group.len() < 2 {
                return Err(Error::skeleton(
                    None,
                    "symmetry_groups",
                    "a group needs at least two links",
                ));
            }
            let mut shapes: Vec<Vec<(usize, bool, Option<usize>)>> = Vec::new();
            for &id in group {
                if !seen.insert(id) {
                    return Err(Error::skeleton(
                        Some(id),
                        "symmetry_groups",
                        "link appears in more than one group",
                    ));
                }
                let idx = self.link_index(id).ok_or_else(|| {
                    Error::skeleton(Some(id), "symmetry_groups", "unknown link id")
                })?;
                let subtree = self.subtree_indices(idx);
                // Shape signature: per subtree position, the joint arity and
                // the position of the parent within the subtree.
                let pos_of: HashMap<usize, usize> =
                    subtree.iter().enumerate().map(|(k, &v)| (v, k)).collect();
                let shape = subtree
                    .iter()
                    .map(|&li| {
                        let link = &self.links[li];
                        let parent_pos =
                            self.parent_index[li].and_then(|p| pos_of.get(&p).copied());
                        (link.joint.axes.len(), link.joint.length_free, parent_pos)
                    })
                    .collect::<Vec<_>>();
                shapes.push(shape);
            }
            if shapes.iter().any(|s| s != &shapes[0]) {
                return Err(Error::skeleton(
                    None,
                    "symmetry_groups",
                    "group subtrees are not structurally identical",
                ));
            }
        }
        Ok(())
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn links(&self) -> &[LinkSpec] {
        &self.links
    }

    pub fn link_count(&self) -> usize {
        self.links.len()
    }

    pub fn link_index(&self, id: u32) -> Option<usize> {
        self.links.iter().position(|l| l.id == id)
    }

    pub fn parent_of(&self, index: usize) -> Option<usize> {
        self.parent_index[index]
    }

    pub fn children_of(&self, index: usize) -> &[usize] {
        &self.children[index]
    }

    pub fn symmetry_groups(&self) -> &[Vec<u32>] {
        &self.symmetry_groups
    }

    /// Number of stored pose parameters: 7 for the root transform plus each
    /// link's joint angles and free length.
    pub fn dof_count(&self) -> usize {
        self.dof
    }

    /// Kind and bounds of every scalar in theta, in storage order.
    pub fn param_layout(&self) -> &[ParamKind] {
        &self.layout
    }

    /// Range of link `index`'s parameter block within theta.
    pub fn param_range(&self, index: usize) -> std::ops::Range<usize> {
        let start = self.param_offsets[index];
        start..start + self.links[index].joint.param_count()
    }

    /// Indices of `index` and all its descendants, in storage order.
    pub fn subtree_indices(&self, index: usize) -> Vec<usize> {
        let mut out = Vec::new();
        let mut stack = vec![index];
        while let Some(i) = stack.pop() {
            out.push(i);
            // Reverse keeps storage order in the preorder output.
            for &c in self.children[i].iter().rev() {
                stack.push(c);
            }
        }
        out.sort_unstable();
        out
    }

    pub fn mean_link_length(&self, pose: &PoseParams) -> f64 {
        let total: f64 = (0..self.links.len()).map(|i| pose.length(self, i)).sum();
        total / self.links.len() as f64
    }

    /// Check dimension, finiteness, quaternion normalization, and declared
    /// limits.
    pub fn validate_pose(&self, pose: &PoseParams) -> Result<()> {
        self.check_pose_numeric(pose)?;
        for (i, kind) in self.layout.iter().enumerate() {
            let v = pose.theta[i];
            match *kind {
                ParamKind::JointAngle { lo, hi, .. } | ParamKind::Length { lo, hi, .. } => {
                    if v < lo || v > hi {
                        return Err(Error::InvalidArgument(format!(
                            "theta[{i}] = {v} outside declared limits [{lo}, {hi}]"
                        )));
                    }
                }
                _ => {}
            }
        }
        let qn = pose.orientation_norm();
        if (qn - 1.0).abs() > UNIT_TOL {
            return Err(Error::InvalidArgument(format!(
                "pose quaternion norm {qn} is not 1"
            )));
        }
        Ok(())
    }

    /// Dimension and finiteness only; limits are not enforced so that
    /// out-of-bounds candidates can still be scored.
    pub fn check_pose_numeric(&self, pose: &PoseParams) -> Result<()> {
        if pose.theta.len() != self.dof {
            return Err(Error::PoseDimension {
                skeleton: self.name.clone(),
                expected: self.dof,
                got: pose.theta.len(),
            });
        }
        if !pose.theta.iter().all(|v| v.is_finite()) {
            return Err(Error::NonFinite {
                context: "pose parameters".into(),
            });
        }
        Ok(())
    }

    /// World-space capsules for a pose.
    ///
    /// Each link's frame is its parent's end frame (the root transform for
    /// the root link) rotated about the joint axes in declared order; the
    /// segment extends along the local +x axis by the link length.
    pub fn forward_kinematics(&self, pose: &PoseParams) -> Result<PosedModel> {
        self.check_pose_numeric(pose)?;
        let root_rot = pose.root_rotation()?;
        let root_pos = pose.root_position();

        let mut frames: Vec<(UnitQuaternion<f64>, Point3<f64>)> =
            Vec::with_capacity(self.links.len());
        let mut segments = Vec::with_capacity(self.links.len());
        for (i, link) in self.links.iter().enumerate() {
            let (parent_rot, start) = match self.parent_index[i] {
                None => (root_rot, root_pos),
                Some(p) => frames[p],
            };
            let mut rot = parent_rot;
            let angles = pose.joint_angles(self, i);
            for (axis, &angle) in link.joint.axes.iter().zip(angles) {
                rot *= UnitQuaternion::from_axis_angle(axis, angle);
            }
            let length = pose.length(self, i);
            let end = start + rot * Vector3::new(length, 0.0, 0.0);
            frames.push((rot, end));
            segments.push(PosedLink {
                link_id: link.id,
                capsule: Capsule {
                    a: start,
                    b: end,
                    radius: link.radius,
                },
            });
        }
        Ok(PosedModel { segments })
    }

    /// Sample a pose uniformly: bounded entries within their limits, root
    /// position within `bounds`, orientation uniform on the unit 3-sphere.
    pub fn random_pose<R: Rng>(&self, bounds: &SceneBounds, rng: &mut R) -> PoseParams {
        let mut theta = Vec::with_capacity(self.dof);
        for kind in &self.layout {
            match *kind {
                ParamKind::RootPosition { axis } => {
                    theta.push(sample_interval(rng, bounds.min[axis], bounds.max[axis]));
                }
                ParamKind::RootOrientation { component } => {
                    if component == 0 {
                        let q = random_unit_quaternion(rng);
                        theta.extend_from_slice(&[q.w, q.i, q.j, q.k]);
                    }
                }
                ParamKind::JointAngle { lo, hi, .. } | ParamKind::Length { lo, hi, .. } => {
                    theta.push(sample_interval(rng, lo, hi));
                }
            }
        }
        PoseParams { theta }
    }

    /// Clamp bounded entries to their intervals and renormalize the
    /// quaternion when it drifted beyond tolerance. Idempotent; a feasible
    /// pose comes back unchanged.
    pub fn clamp_pose(&self, pose: &PoseParams) -> Result<PoseParams> {
        self.check_pose_numeric(pose)?;
        let mut theta = pose.theta.clone();
        for (i, kind) in self.layout.iter().enumerate() {
            if let ParamKind::JointAngle { lo, hi, .. } | ParamKind::Length { lo, hi, .. } = *kind
            {
                theta[i] = theta[i].clamp(lo, hi);
            }
        }
        let norm = (theta[3] * theta[3] + theta[4] * theta[4] + theta[5] * theta[5]
            + theta[6] * theta[6])
            .sqrt();
        if norm < 1e-12 {
            return Err(Error::NonFinite {
                context: "pose quaternion has zero norm".into(),
            });
        }
        if (norm - 1.0).abs() > UNIT_TOL {
            for q in &mut theta[3..7] {
                *q /= norm;
            }
        }
        Ok(PoseParams { theta })
    }
}

fn sample_interval<R: Rng>(rng: &mut R, lo: f64, hi: f64) -> f64 {
    if lo == hi {
        lo
    } else {
        rng.gen_range(lo..hi)
    }
}

/// Shoemake's subgroup method: uniform on the unit 3-sphere.
fn random_unit_quaternion<R: Rng>(rng: &mut R) -> Quaternion<f64> {
    use std::f64::consts::TAU;
    let u1: f64 = rng.gen();
    let u2: f64 = rng.gen();
    let u3: f64 = rng.gen();
    let a = (1.0 - u1).sqrt();
    let b = u1.sqrt();
    let q = Quaternion::new(
        b * (TAU * u3).cos(),
        a * (TAU * u2).sin(),
        a * (TAU * u2).cos(),
        b * (TAU * u3).sin(),
    );
    q / q.norm()
}

/// Flat pose vector. Layout is fixed by the owning skeleton; see the module
/// docs.
#[derive(Debug, Clone, PartialEq)]
pub struct PoseParams {
    theta: Vec<f64>,
}

impl PoseParams {
    pub fn from_theta(theta: Vec<f64>) -> Self {
        PoseParams { theta }
    }

    pub fn theta(&self) -> &[f64] {
        &self.theta
    }

    pub(crate) fn theta_mut(&mut self) -> &mut [f64] {
        &mut self.theta
    }

    pub fn root_position(&self) -> Point3<f64> {
        Point3::new(self.theta[0], self.theta[1], self.theta[2])
    }

    /// Stored orientation components `(w, x, y, z)`, unnormalized.
    pub fn root_orientation(&self) -> [f64; 4] {
        [self.theta[3], self.theta[4], self.theta[5], self.theta[6]]
    }

    fn orientation_norm(&self) -> f64 {
        let [w, x, y, z] = self.root_orientation();
        (w * w + x * x + y * y + z * z).sqrt()
    }

    /// Root rotation as a unit quaternion; errors when the stored components
    /// cannot be normalized.
    pub fn root_rotation(&self) -> Result<UnitQuaternion<f64>> {
        let [w, x, y, z] = self.root_orientation();
        let q = Quaternion::new(w, x, y, z);
        if q.norm() < 1e-12 {
            return Err(Error::NonFinite {
                context: "pose quaternion has zero norm".into(),
            });
        }
        Ok(UnitQuaternion::from_quaternion(q))
    }

    /// Joint angles of link `index`, in axis order.
    pub fn joint_angles<'a>(&'a self, skeleton: &Skeleton, index: usize) -> &'a [f64] {
        let start = skeleton.param_offsets[index];
        &self.theta[start..start + skeleton.links[index].joint.axes.len()]
    }

    /// Link length: the stored free parameter, or the spec default.
    pub fn length(&self, skeleton: &Skeleton, index: usize) -> f64 {
        let link = &skeleton.links[index];
        if link.joint.length_free {
            self.theta[skeleton.param_offsets[index] + link.joint.axes.len()]
        } else {
            link.default_length
        }
    }
}

/// One posed link: world-frame capsule plus the link id it came from.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PosedLink {
    pub link_id: u32,
    pub capsule: Capsule,
}

/// World-space capsules produced by forward kinematics, in link storage
/// order.
#[derive(Debug, Clone, PartialEq)]
pub struct PosedModel {
    pub segments: Vec<PosedLink>,
}

impl PosedModel {
    pub fn len(&self) -> usize {
        self.segments.len()
    }

    pub fn is_empty(&self) -> bool {
        self.segments.is_empty()
    }

    pub fn mean_link_length(&self) -> f64 {
        let total: f64 = self.segments.iter().map(|s| s.capsule.axis_length()).sum();
        total / self.segments.len() as f64
    }
}

/// Axis-aligned box used to sample and perturb root positions.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SceneBounds {
    pub min: Point3<f64>,
    pub max: Point3<f64>,
}

impl SceneBounds {
    pub fn new(min: Point3<f64>, max: Point3<f64>) -> Result<Self> {
        for a in 0..3 {
            if !(min[a].is_finite() && max[a].is_finite()) || min[a] > max[a] {
                return Err(Error::InvalidArgument(format!(
                    "scene bounds axis {a}: [{}, {}] is invalid",
                    min[a], max[a]
                )));
            }
        }
        Ok(SceneBounds { min, max })
    }

    pub fn cube(center: Point3<f64>, half: f64) -> Self {
        let h = Vector3::new(half, half, half);
        SceneBounds {
            min: center - h,
            max: center + h,
        }
    }

    /// Tight box around `points`, inflated by `margin` on every side.
    pub fn from_points(points: &[Point3<f64>], margin: f64) -> Result<Self> {
        if points.is_empty() {
            return Err(Error::EmptyCloud);
        }
        let mut min = points[0];
        let mut max = points[0];
        for p in points {
            for a in 0..3 {
                min[a] = min[a].min(p[a]);
                max[a] = max[a].max(p[a]);
            }
        }
        let m = Vector3::new(margin, margin, margin);
        SceneBounds::new(min - m, max + m)
    }

    /// Per-axis widths.
    pub fn widths(&self) -> Vector3<f64> {
        self.max - self.min
    }
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    pub(crate) fn chain2_doc() -> &'static str {
        r#"{
            "name": "chain2",
            "links": [
                {"id": 0, "parent": null,
                 "axes": [[0,0,1],[0,1,0],[1,0,0]],
                 "length_free": true, "length_limits": [0.5, 2.0],
                 "default_length": 1.0, "radius": 0.1},
                {"id": 1, "parent": 0,
                 "axes": [[0,0,1],[0,1,0],[1,0,0]],
                 "length_free": true, "length_limits": [0.5, 2.0],
                 "default_length": 1.0, "radius": 0.1}
            ]
        }"#
    }

    fn chain2() -> Skeleton {
        parse_skeleton(chain2_doc()).unwrap()
    }

    /// Identity transform, all angles zero, all lengths 1.
    fn rest_pose(sk: &Skeleton) -> PoseParams {
        let mut theta = vec![0.0; sk.dof_count()];
        theta[3] = 1.0;
        for (i, kind) in sk.param_layout().iter().enumerate() {
            if let ParamKind::Length { .. } = kind {
                theta[i] = 1.0;
            }
        }
        PoseParams::from_theta(theta)
    }

    #[test]
    fn two_link_chain_has_15_params() {
        let sk = chain2();
        assert_eq!(sk.link_count(), 2);
        assert_eq!(sk.dof_count(), 15);
    }

    #[test]
    fn root_only_fixed_link_has_7_params() {
        let sk = parse_skeleton(
            r#"{"name": "stick", "links": [
                {"id": 0, "parent": null, "axes": [], "length_free": false,
                 "default_length": 0.4, "radius": 0.05}
            ]}"#,
        )
        .unwrap();
        assert_eq!(sk.dof_count(), 7);
    }

    #[test]
    fn self_parent_is_cycle_error() {
        let err = parse_skeleton(
            r#"{"name": "bad", "links": [
                {"id": 0, "parent": 0, "axes": [], "length_free": false,
                 "default_length": 0.4, "radius": 0.05}
            ]}"#,
        )
        .unwrap_err();
        assert!(err.to_string().contains("cycle"), "{err}");
    }

    #[test]
    fn duplicate_id_rejected() {
        let err = parse_skeleton(
            r#"{"name": "bad", "links": [
                {"id": 0, "parent": null, "axes": [], "length_free": false,
                 "default_length": 0.4, "radius": 0.05},
                {"id": 0, "parent": 0, "axes": [], "length_free": false,
                 "default_length": 0.4, "radius": 0.05}
            ]}"#,
        )
        .unwrap_err();
        assert!(err.to_string().contains("duplicate"), "{err}");
    }

    #[test]
    fn non_unit_axis_rejected() {
        let err = parse_skeleton(
            r#"{"name": "bad", "links": [
                {"id": 0, "parent": null, "axes": [[0, 0, 2]], "length_free": false,
                 "default_length": 0.4, "radius": 0.05}
            ]}"#,
        )
        .unwrap_err();
        assert!(err.to_string().contains("unit"), "{err}");
    }

    #[test]
    fn inverted_limits_rejected() {
        let err = parse_skeleton(
            r#"{"name": "bad", "links": [
                {"id": 0, "parent": null, "axes": [[0, 0, 1]],
                 "angle_limits": [[1.0, -1.0]], "length_free": false,
                 "default_length": 0.4, "radius": 0.05}
            ]}"#,
        )
        .unwrap_err();
        assert!(matches!(err, Error::Skeleton { link: Some(0), field: "angle_limits", .. }), "{err}");
    }

    #[test]
    fn unknown_key_rejected() {
        let err = parse_skeleton(r#"{"name": "bad", "links": [], "extra": 1}"#).unwrap_err();
        assert!(matches!(err, Error::SkeletonJson(_)));
    }

    #[test]
    fn multiple_roots_rejected() {
        let err = parse_skeleton(
            r#"{"name": "bad", "links": [
                {"id": 0, "parent": null, "axes": [], "length_free": false,
                 "default_length": 0.4, "radius": 0.05},
                {"id": 1, "parent": null, "axes": [], "length_free": false,
                 "default_length": 0.4, "radius": 0.05}
            ]}"#,
        )
        .unwrap_err();
        assert!(err.to_string().contains("multiple root"), "{err}");
    }

    #[test]
    fn unrotated_chain_is_collinear() {
        let sk = chain2();
        let model = sk.forward_kinematics(&rest_pose(&sk)).unwrap();
        let s0 = model.segments[0].capsule;
        let s1 = model.segments[1].capsule;
        assert_relative_eq!(s0.a, Point3::new(0.0, 0.0, 0.0), epsilon = 1e-12);
        assert_relative_eq!(s0.b, Point3::new(1.0, 0.0, 0.0), epsilon = 1e-12);
        assert_relative_eq!(s1.a, Point3::new(1.0, 0.0, 0.0), epsilon = 1e-12);
        assert_relative_eq!(s1.b, Point3::new(2.0, 0.0, 0.0), epsilon = 1e-12);
    }

    #[test]
    fn quarter_turn_about_z() {
        let sk = chain2();
        let mut pose = rest_pose(&sk);
        // Link 1's first axis is z; its block starts after root(7) + link0(4).
        pose.theta_mut()[11] = std::f64::consts::FRAC_PI_2;
        let model = sk.forward_kinematics(&pose).unwrap();
        let s1 = model.segments[1].capsule;
        assert_relative_eq!(s1.a, Point3::new(1.0, 0.0, 0.0), epsilon = 1e-12);
        assert_relative_eq!(s1.b, Point3::new(1.0, 1.0, 0.0), epsilon = 1e-9);
    }

    #[test]
    fn fk_dimension_mismatch_errors() {
        let sk = chain2();
        let err = sk
            .forward_kinematics(&PoseParams::from_theta(vec![0.0; 3]))
            .unwrap_err();
        assert!(matches!(err, Error::PoseDimension { expected: 15, got: 3, .. }));
    }

    #[test]
    fn fk_rejects_non_finite() {
        let sk = chain2();
        let mut pose = rest_pose(&sk);
        pose.theta_mut()[8] = f64::NAN;
        assert!(sk.forward_kinematics(&pose).is_err());
    }

    #[test]
    fn random_pose_is_deterministic() {
        let sk = chain2();
        let bounds = SceneBounds::cube(Point3::origin(), 1.0);
        let a = sk.random_pose(&bounds, &mut ChaCha8Rng::seed_from_u64(42));
        let b = sk.random_pose(&bounds, &mut ChaCha8Rng::seed_from_u64(42));
        assert_eq!(a, b);
    }

    #[test]
    fn random_pose_respects_limits_and_mean() {
        let sk = parse_skeleton(
            r#"{"name": "one", "links": [
                {"id": 0, "parent": null, "axes": [[0,0,1]],
                 "angle_limits": [[-0.3, 0.9]], "length_free": false,
                 "default_length": 0.4, "radius": 0.05}
            ]}"#,
        )
        .unwrap();
        let bounds = SceneBounds::cube(Point3::origin(), 1.0);
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let mut sum = 0.0;
        let n = 10_000;
        for _ in 0..n {
            let pose = sk.random_pose(&bounds, &mut rng);
            let angle = pose.theta()[7];
            assert!((-0.3..=0.9).contains(&angle));
            sum += angle;
        }
        let mean = sum / n as f64;
        let mid = 0.3;
        // Within 5% of the interval midpoint, measured in interval widths.
        assert!((mean - mid).abs() < 0.05 * 1.2, "mean {mean}");
    }

    #[test]
    fn random_quaternions_are_unit() {
        let sk = chain2();
        let bounds = SceneBounds::cube(Point3::origin(), 1.0);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..10_000 {
            let pose = sk.random_pose(&bounds, &mut rng);
            assert!((pose.orientation_norm() - 1.0).abs() <= UNIT_TOL);
        }
    }

    #[test]
    fn clamp_is_identity_on_feasible_poses() {
        let sk = chain2();
        let bounds = SceneBounds::cube(Point3::origin(), 1.0);
        let pose = sk.random_pose(&bounds, &mut ChaCha8Rng::seed_from_u64(9));
        let clamped = sk.clamp_pose(&pose).unwrap();
        assert_eq!(pose, clamped);
    }

    #[test]
    fn clamp_pins_out_of_range_angle() {
        let sk = chain2();
        let mut pose = rest_pose(&sk);
        pose.theta_mut()[7] = std::f64::consts::PI + 0.5;
        let clamped = sk.clamp_pose(&pose).unwrap();
        assert_eq!(clamped.theta()[7], std::f64::consts::PI);
        // Idempotent.
        assert_eq!(sk.clamp_pose(&clamped).unwrap(), clamped);
    }

    #[test]
    fn clamp_renormalizes_quaternion() {
        let sk = chain2();
        let mut pose = rest_pose(&sk);
        pose.theta_mut()[3] = 2.0;
        let clamped = sk.clamp_pose(&pose).unwrap();
        assert!((clamped.orientation_norm() - 1.0).abs() < 1e-12);
        assert_eq!(clamped.theta()[3], 1.0);
    }

    #[test]
    fn clamp_rejects_non_finite() {
        let sk = chain2();
        let mut pose = rest_pose(&sk);
        pose.theta_mut()[0] = f64::INFINITY;
        assert!(sk.clamp_pose(&pose).is_err());
    }

    #[test]
    fn walking_parents_reaches_root() {
        let sk = chain2();
        for start in 0..sk.link_count() {
            let mut i = start;
            let mut steps = 0;
            while let Some(p) = sk.parent_of(i) {
                i = p;
                steps += 1;
                assert!(steps <= sk.link_count());
            }
            assert_eq!(i, 0);
        }
    }

    #[test]
    fn accessors_reproduce_theta_exactly() {
        let sk = chain2();
        let bounds = SceneBounds::cube(Point3::new(0.3, -0.2, 1.1), 0.7);
        let pose = sk.random_pose(&bounds, &mut ChaCha8Rng::seed_from_u64(11));

        let mut rebuilt = Vec::new();
        let p = pose.root_position();
        rebuilt.extend_from_slice(&[p.x, p.y, p.z]);
        rebuilt.extend_from_slice(&pose.root_orientation());
        for i in 0..sk.link_count() {
            rebuilt.extend_from_slice(pose.joint_angles(&sk, i));
            if sk.links()[i].joint.length_free {
                rebuilt.push(pose.length(&sk, i));
            }
        }
        assert_eq!(rebuilt, pose.theta());
    }

    #[test]
    fn subtree_indices_cover_descendants() {
        // 0 -> 1 -> {2, 3}; 0 -> 4
        let mk = |id: u32, parent: Option<u32>| LinkSpec {
            id,
            parent,
            joint: JointSpec {
                axes: vec![],
                angle_limits: vec![],
                length_free: false,
                length_limits: None,
            },
            default_length: 0.1,
            radius: 0.01,
        };
        let sk = Skeleton::from_parts(
            "t".into(),
            vec![mk(0, None), mk(1, Some(0)), mk(2, Some(1)), mk(3, Some(1)), mk(4, Some(0))],
            vec![],
        )
        .unwrap();
        assert_eq!(sk.subtree_indices(1), vec![1, 2, 3]);
        assert_eq!(sk.subtree_indices(0), vec![0, 1, 2, 3, 4]);
        assert_eq!(sk.subtree_indices(4), vec![4]);
    }
}
