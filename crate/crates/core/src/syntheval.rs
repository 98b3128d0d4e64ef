//! Synthetic depth-data generation and quantitative scoring.
//!
//! Renders a posed skeleton through a pinhole camera by exact ray–capsule
//! intersection (nearest surface per ray, so self-occlusion falls out of the
//! z-test), quantizes to 16-bit millimeter depth to mirror the ingestion
//! path, and scores estimated poses by per-link endpoint error.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use nalgebra::{Isometry3, Point3, Quaternion, Rotation3, Translation3, UnitQuaternion, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;

use crate::depthio::{background_subtract, save_depth, save_xyz, to_point_cloud, DepthImage, Intrinsics};
use crate::error::{Error, Result};
use crate::geometry::Capsule;
use crate::objective::{evaluate, PointCloud};
use crate::posefile::PoseFile;
use crate::skeleton::{ParamKind, PoseParams, PosedModel, Skeleton};

/// Synthetic pinhole camera: intrinsics, resolution, and the rigid
/// world-to-camera transform.
#[derive(Debug, Clone, PartialEq)]
pub struct CameraSpec {
    pub intrinsics: Intrinsics,
    pub width: usize,
    pub height: usize,
    pub pose: Isometry3<f64>,
}

impl CameraSpec {
    pub fn new(intrinsics: Intrinsics, width: usize, height: usize, pose: Isometry3<f64>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::InvalidArgument(format!(
                "camera resolution {width}x{height} is invalid"
            )));
        }
        Ok(CameraSpec { intrinsics, width, height, pose })
    }

    /// Camera on a circle of `distance` around the world origin at the given
    /// elevation angle (radians above the horizon), looking at the origin
    /// with world +z up.
    pub fn orbiting(intrinsics: Intrinsics, width: usize, height: usize, distance: f64, elevation: f64) -> Result<Self> {
        let center = Point3::new(-distance * elevation.cos(), 0.0, distance * elevation.sin());
        let forward = (Point3::origin() - center).normalize();
        let up = Vector3::z();
        let right = forward.cross(&up).normalize();
        let down = forward.cross(&right).normalize();
        let rot = Rotation3::from_matrix_unchecked(nalgebra::Matrix3::from_rows(&[
            right.transpose(),
            down.transpose(),
            forward.transpose(),
        ]));
        let translation = Translation3::from(-(rot * center.coords));
        CameraSpec::new(
            intrinsics,
            width,
            height,
            Isometry3::from_parts(translation, UnitQuaternion::from_rotation_matrix(&rot)),
        )
    }
}

/// Smallest `t > 0` with `t * dir` on the capsule surface (camera at the
/// origin). `dir` need not be normalized; with `dir.z == 1` the result is
/// the hit's z-depth.
pub fn ray_capsule_intersection(dir: Vector3<f64>, capsule: &Capsule) -> Option<f64> {
    let r = capsule.radius;
    let axis = capsule.b - capsule.a;
    let axis_len2 = axis.norm_squared();
    let mut best: Option<f64> = None;
    let mut consider = |t: f64| {
        if t > 0.0 && best.is_none_or(|b| t < b) {
            best = Some(t);
        }
    };

    // Cylindrical body (skipped for degenerate segments).
    if axis_len2 > 0.0 {
        let m = -capsule.a.coords; // origin - a
        let dd = dir.norm_squared();
        let bd = axis.dot(&dir);
        let bm = axis.dot(&m);
        let a = dd - bd * bd / axis_len2;
        let b = m.dot(&dir) - bd * bm / axis_len2;
        let c = m.norm_squared() - bm * bm / axis_len2 - r * r;
        if a.abs() > 1e-18 {
            let disc = b * b - a * c;
            if disc >= 0.0 {
                let sq = disc.sqrt();
                for t in [(-b - sq) / a, (-b + sq) / a] {
                    let s = (m + dir * t).dot(&axis) / axis_len2;
                    if (0.0..=1.0).contains(&s) {
                        consider(t);
                    }
                }
            }
        }
    }

    // Spherical caps; keep only hits on the outward hemispheres so interior
    // sphere walls never shadow the cylinder.
    for (center, outward_sign) in [(capsule.a, -1.0), (capsule.b, 1.0)] {
        let m = -center.coords;
        let a = dir.norm_squared();
        let b = m.dot(&dir);
        let c = m.norm_squared() - r * r;
        let disc = b * b - a * c;
        if disc < 0.0 {
            continue;
        }
        let sq = disc.sqrt();
        for t in [(-b - sq) / a, (-b + sq) / a] {
            let hit = Point3::from(dir * t);
            if axis_len2 == 0.0 || outward_sign * (hit - center).dot(&axis) >= 0.0 {
                consider(t);
            }
        }
    }
    best
}

/// Render a posed skeleton to a quantized depth image and its
/// back-projected cloud. Per pixel, the nearest ray–capsule intersection
/// wins, so occluded surfaces never contribute points.
pub fn render_cloud(
    skeleton: &Skeleton,
    pose: &PoseParams,
    camera: &CameraSpec,
) -> Result<(DepthImage, PointCloud)> {
    let model = skeleton.forward_kinematics(pose)?;
    let capsules: Vec<Capsule> = model
        .segments
        .iter()
        .map(|s| Capsule {
            a: camera.pose * s.capsule.a,
            b: camera.pose * s.capsule.b,
            radius: s.capsule.radius,
        })
        .collect();

    let intr = camera.intrinsics;
    let width = camera.width;
    let mut depth = vec![0u16; width * camera.height];
    depth.par_chunks_mut(width).enumerate().for_each(|(v, row)| {
        for (u, out) in row.iter_mut().enumerate() {
            let dir = Vector3::new(
                (u as f64 - intr.cx) / intr.fx,
                (v as f64 - intr.cy) / intr.fy,
                1.0,
            );
            let mut nearest = f64::INFINITY;
            for c in &capsules {
                if let Some(t) = ray_capsule_intersection(dir, c) {
                    nearest = nearest.min(t);
                }
            }
            if nearest.is_finite() {
                let mm = (nearest * 1000.0).round();
                if (1.0..=65534.0).contains(&mm) {
                    *out = mm as u16;
                }
            }
        }
    });

    if depth.iter().all(|&d| d == 0) {
        return Err(Error::EmptyRender);
    }
    let img = DepthImage::new(width, camera.height, depth, intr)?;
    let mask = background_subtract(&img, u16::MAX);
    let cloud = to_point_cloud(&img, &mask)?;
    Ok((img, cloud))
}

/// Add Gaussian noise along each point's viewing ray (the camera sits at
/// the origin of the cloud's frame). σ of the cloud is recomputed.
pub fn add_noise<R: Rng>(cloud: &PointCloud, depth_sigma_mm: f64, rng: &mut R) -> Result<PointCloud> {
    if !(depth_sigma_mm.is_finite() && depth_sigma_mm >= 0.0) {
        return Err(Error::InvalidArgument(format!(
            "noise sigma must be non-negative, got {depth_sigma_mm}"
        )));
    }
    if depth_sigma_mm == 0.0 {
        return Ok(cloud.clone());
    }
    let normal = Normal::new(0.0, depth_sigma_mm / 1000.0).expect("sigma is positive");
    let points = cloud
        .points()
        .iter()
        .map(|&p| {
            let range = p.coords.norm();
            if range == 0.0 {
                return p;
            }
            let dir = p.coords / range;
            p + dir * normal.sample(rng)
        })
        .collect();
    PointCloud::new(points)
}

/// Endpoint errors of one link (meters).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LinkEndpointError {
    pub link_id: u32,
    pub start: f64,
    pub end: f64,
}

impl LinkEndpointError {
    pub fn correct(&self, threshold: f64) -> bool {
        self.start <= threshold && self.end <= threshold
    }
}

/// Link-placement score: a link counts as correct only when both of its
/// endpoints land within `threshold` of the true link's endpoints.
#[derive(Debug, Clone, PartialEq)]
pub struct AccuracyReport {
    pub per_link: Vec<LinkEndpointError>,
    pub fraction_correct: f64,
    pub threshold: f64,
}

impl AccuracyReport {
    pub fn mean_endpoint_error(&self) -> f64 {
        let sum: f64 = self.per_link.iter().map(|l| l.start + l.end).sum();
        sum / (2 * self.per_link.len()) as f64
    }

    pub fn max_endpoint_error(&self) -> f64 {
        self.per_link.iter().map(|l| l.start.max(l.end)).fold(0.0, f64::max)
    }
}

fn report_for_mapping(
    estimated: &PosedModel,
    truth: &PosedModel,
    threshold: f64,
    mapping: &[usize],
) -> AccuracyReport {
    let mut per_link = Vec::with_capacity(estimated.len());
    let mut correct = 0usize;
    for (i, est) in estimated.segments.iter().enumerate() {
        let tru = &truth.segments[mapping[i]];
        let err = LinkEndpointError {
            link_id: est.link_id,
            start: (est.capsule.a - tru.capsule.a).norm(),
            end: (est.capsule.b - tru.capsule.b).norm(),
        };
        if err.correct(threshold) {
            correct += 1;
        }
        per_link.push(err);
    }
    AccuracyReport {
        fraction_correct: correct as f64 / estimated.len() as f64,
        per_link,
        threshold,
    }
}

fn check_accuracy_inputs(estimated: &PosedModel, truth: &PosedModel, threshold: f64) -> Result<()> {
    if estimated.len() != truth.len() {
        return Err(Error::ModelSizeMismatch {
            estimated: estimated.len(),
            truth: truth.len(),
        });
    }
    if estimated.is_empty() {
        return Err(Error::EmptyModel);
    }
    if !(threshold.is_finite() && threshold > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "accuracy threshold must be positive, got {threshold}"
        )));
    }
    Ok(())
}

/// Strict link-identity accuracy: link `i` is compared against true link `i`.
pub fn link_accuracy(estimated: &PosedModel, truth: &PosedModel, threshold: f64) -> Result<AccuracyReport> {
    check_accuracy_inputs(estimated, truth, threshold)?;
    let identity: Vec<usize> = (0..estimated.len()).collect();
    Ok(report_for_mapping(estimated, truth, threshold, &identity))
}

fn permutations(n: usize) -> Vec<Vec<usize>> {
    if n == 1 {
        return vec![vec![0]];
    }
    let mut out = Vec::new();
    for p in permutations(n - 1) {
        for slot in 0..n {
            let mut q = p.clone();
            q.insert(slot, n - 1);
            out.push(q);
        }
    }
    out.sort();
    out
}

/// Accuracy under the best relabeling of the skeleton's interchangeable-link
/// groups (whole subtrees are permuted together). Falls back to the strict
/// report when the skeleton declares no groups.
pub fn link_accuracy_best_permutation(
    estimated: &PosedModel,
    truth: &PosedModel,
    threshold: f64,
    skeleton: &Skeleton,
) -> Result<AccuracyReport> {
    check_accuracy_inputs(estimated, truth, threshold)?;
    if estimated.len() != skeleton.link_count() {
        return Err(Error::ModelSizeMismatch {
            estimated: estimated.len(),
            truth: skeleton.link_count(),
        });
    }
    let groups = skeleton.symmetry_groups();
    if groups.is_empty() {
        return link_accuracy(estimated, truth, threshold);
    }

    // Subtree index lists per group member; members were validated to have
    // identical shapes at parse time.
    let group_subtrees: Vec<Vec<Vec<usize>>> = groups
        .iter()
        .map(|g| {
            g.iter()
                .map(|&id| {
                    let idx = skeleton.link_index(id).expect("validated at parse");
                    skeleton.subtree_indices(idx)
                })
                .collect()
        })
        .collect();
    let perms_per_group: Vec<Vec<Vec<usize>>> =
        groups.iter().map(|g| permutations(g.len())).collect();

    let mut best: Option<AccuracyReport> = None;
    let mut choice = vec![0usize; groups.len()];
    loop {
        let mut mapping: Vec<usize> = (0..estimated.len()).collect();
        for (gi, subtrees) in group_subtrees.iter().enumerate() {
            let perm = &perms_per_group[gi][choice[gi]];
            for (from, &to) in perm.iter().enumerate() {
                for (a, b) in subtrees[from].iter().zip(&subtrees[to]) {
                    mapping[*a] = *b;
                }
            }
        }
        let report = report_for_mapping(estimated, truth, threshold, &mapping);
        if best.as_ref().is_none_or(|b| report.fraction_correct > b.fraction_correct) {
            best = Some(report);
        }

        // Advance the mixed-radix counter over per-group permutations.
        let mut gi = 0;
        loop {
            if gi == groups.len() {
                return Ok(best.expect("at least one mapping evaluated"));
            }
            choice[gi] += 1;
            if choice[gi] < perms_per_group[gi].len() {
                break;
            }
            choice[gi] = 0;
            gi += 1;
        }
    }
}

/// One benchmark case; paths are relative to the manifest's directory.
#[derive(Debug, Clone, PartialEq)]
pub struct BenchmarkCase {
    pub cloud: String,
    pub truth: String,
    pub intr: String,
}

/// The case list written by [`make_benchmark`].
#[derive(Debug, Clone, PartialEq, Default)]
pub struct BenchmarkManifest {
    pub cases: Vec<BenchmarkCase>,
}

impl BenchmarkManifest {
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for c in &self.cases {
            let _ = writeln!(out, "{} {} {}", c.cloud, c.truth, c.intr);
        }
        out
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        fs::write(path.as_ref(), self.to_text())?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<BenchmarkManifest> {
        let text = fs::read_to_string(path.as_ref())?;
        let mut cases = Vec::new();
        for (lineno, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let fields: Vec<&str> = line.split_whitespace().collect();
            if fields.len() != 3 {
                return Err(Error::InvalidArgument(format!(
                    "manifest line {}: expected 3 fields, found {}",
                    lineno + 1,
                    fields.len()
                )));
            }
            cases.push(BenchmarkCase {
                cloud: fields[0].to_owned(),
                truth: fields[1].to_owned(),
                intr: fields[2].to_owned(),
            });
        }
        Ok(BenchmarkManifest { cases })
    }
}

/// Knobs for synthetic benchmark generation.
#[derive(Debug, Clone, PartialEq)]
pub struct SynthParams {
    pub width: usize,
    pub height: usize,
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    /// Camera orbit radius, meters.
    pub camera_distance: f64,
    /// Highest camera elevation, radians; views sweep [0, max] evenly.
    pub max_elevation: f64,
    /// Depth noise added to the written clouds, millimeters (0 = noiseless).
    pub noise_mm: f64,
    /// Half-width of the box the true root position is drawn from, meters.
    pub root_box_half: f64,
}

impl Default for SynthParams {
    fn default() -> Self {
        SynthParams {
            width: 320,
            height: 240,
            fx: 400.0,
            fy: 400.0,
            cx: 160.0,
            cy: 120.0,
            camera_distance: 1.6,
            max_elevation: 60f64.to_radians(),
            noise_mm: 0.0,
            root_box_half: 0.05,
        }
    }
}

impl SynthParams {
    /// Defaults with the camera orbit radius sized to the skeleton's
    /// maximum reach, so the whole model stays in frame.
    pub fn for_skeleton(skeleton: &Skeleton) -> SynthParams {
        let mut params = SynthParams::default();
        let reach = max_reach(skeleton) + params.root_box_half;
        params.camera_distance = (3.2 * reach).max(1.2);
        params
    }

    pub fn intrinsics(&self) -> Result<Intrinsics> {
        Intrinsics::new(self.fx, self.fy, self.cx, self.cy)
    }

    pub fn view_camera(&self, view: usize, n_views: usize) -> Result<CameraSpec> {
        let elevation = if n_views <= 1 {
            0.0
        } else {
            self.max_elevation * view as f64 / (n_views - 1) as f64
        };
        CameraSpec::orbiting(self.intrinsics()?, self.width, self.height, self.camera_distance, elevation)
    }
}

/// Farthest any capsule surface can get from the root position, using the
/// upper length limit of every free link.
pub fn max_reach(skeleton: &Skeleton) -> f64 {
    let mut depth = vec![0.0f64; skeleton.link_count()];
    let mut best: f64 = 0.0;
    for (i, link) in skeleton.links().iter().enumerate() {
        let len = match (link.joint.length_free, link.joint.length_limits) {
            (true, Some((_, hi))) => hi,
            _ => link.default_length,
        };
        let base = skeleton.parent_of(i).map_or(0.0, |p| depth[p]);
        depth[i] = base + len;
        best = best.max(depth[i] + link.radius);
    }
    best
}

/// Upright staged pose: joints uniform within their limits, root position
/// in a small box at the world origin, orientation a uniform yaw about
/// world +z. Mirrors how the benchmark subjects were physically staged.
pub fn sample_staged_pose<R: Rng>(skeleton: &Skeleton, half: f64, rng: &mut R) -> PoseParams {
    let mut theta = Vec::with_capacity(skeleton.dof_count());
    for kind in skeleton.param_layout() {
        match *kind {
            ParamKind::RootPosition { .. } => theta.push(rng.gen_range(-half..half)),
            ParamKind::RootOrientation { component } => {
                if component == 0 {
                    let yaw: f64 = rng.gen_range(-std::f64::consts::PI..std::f64::consts::PI);
                    theta.extend_from_slice(&[(yaw / 2.0).cos(), 0.0, 0.0, (yaw / 2.0).sin()]);
                }
            }
            ParamKind::JointAngle { lo, hi, .. } | ParamKind::Length { lo, hi, .. } => {
                theta.push(if lo == hi { lo } else { rng.gen_range(lo..hi) });
            }
        }
    }
    PoseParams::from_theta(theta)
}

/// Re-express a pose in another frame: the rigid transform is composed into
/// the root transform, joint parameters are untouched.
pub fn transform_pose(iso: &Isometry3<f64>, pose: &PoseParams) -> Result<PoseParams> {
    let mut theta = pose.theta().to_vec();
    let p = iso * pose.root_position();
    let q = iso.rotation * pose.root_rotation()?;
    theta[0] = p.x;
    theta[1] = p.y;
    theta[2] = p.z;
    let q: &Quaternion<f64> = q.quaternion();
    theta[3] = q.w;
    theta[4] = q.i;
    theta[5] = q.j;
    theta[6] = q.k;
    Ok(PoseParams::from_theta(theta))
}

/// Render `n_poses` staged poses from `n_views` orbit cameras each, writing
/// per case a cloud (`.xyz`), ground-truth pose (`.truth.json`, expressed in
/// that case's camera frame), depth map (`.pgm`), and intrinsics sidecar
/// (`.intr`), plus a `manifest.txt` listing every case.
pub fn make_benchmark(
    skeleton: &Skeleton,
    n_poses: usize,
    n_views: usize,
    seed: u64,
    params: &SynthParams,
    outdir: impl AsRef<Path>,
) -> Result<BenchmarkManifest> {
    if n_poses == 0 || n_views == 0 {
        return Err(Error::InvalidArgument(
            "benchmark needs at least one pose and one view".into(),
        ));
    }
    let outdir = outdir.as_ref();
    fs::create_dir_all(outdir)?;

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut manifest = BenchmarkManifest::default();
    for pose_i in 0..n_poses {
        let world_pose = sample_staged_pose(skeleton, params.root_box_half, &mut rng);
        for view_i in 0..n_views {
            let camera = params.view_camera(view_i, n_views)?;
            let (img, cloud) = render_cloud(skeleton, &world_pose, &camera)?;
            let cloud = if params.noise_mm > 0.0 {
                add_noise(&cloud, params.noise_mm, &mut rng)?
            } else {
                cloud
            };

            let stem = format!("case_p{pose_i}_v{view_i}");
            let cloud_name = format!("{stem}.xyz");
            let truth_name = format!("{stem}.truth.json");
            let intr_name = format!("{stem}.intr");

            save_xyz(&cloud, outdir.join(&cloud_name))?;
            // Writes both the depth map and the .intr sidecar.
            save_depth(&img, outdir.join(format!("{stem}.pgm")))?;

            let camera_pose = transform_pose(&camera.pose, &world_pose)?;
            let truth_objective = evaluate(skeleton, &camera_pose, &cloud)?;
            PoseFile::new(
                skeleton,
                &camera_pose,
                truth_objective.value,
                seed,
                0,
                0,
            )?
            .save(outdir.join(&truth_name))?;

            manifest.cases.push(BenchmarkCase {
                cloud: cloud_name,
                truth: truth_name,
                intr: intr_name,
            });
        }
    }
    manifest.save(outdir.join("manifest.txt"))?;
    Ok(manifest)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::skeleton::{parse_skeleton, PosedLink, SceneBounds};
    use approx::assert_relative_eq;

    fn capsule_skeleton() -> Skeleton {
        parse_skeleton(
            r#"{"name": "one", "links": [
                {"id": 0, "parent": null, "axes": [], "length_free": false,
                 "default_length": 0.2, "radius": 0.05}
            ]}"#,
        )
        .unwrap()
    }

    fn test_camera() -> CameraSpec {
        CameraSpec::new(
            Intrinsics::new(200.0, 200.0, 80.0, 60.0).unwrap(),
            160,
            120,
            Isometry3::identity(),
        )
        .unwrap()
    }

    /// Pose whose capsule runs along the optical axis from z=1.0.
    fn axial_pose(sk: &Skeleton) -> PoseParams {
        let mut theta = vec![0.0; sk.dof_count()];
        theta[2] = 1.0;
        // Rotate +x onto +z: quarter turn about y.
        let q = UnitQuaternion::from_axis_angle(&Vector3::y_axis(), -std::f64::consts::FRAC_PI_2);
        theta[3] = q.w;
        theta[4] = q.i;
        theta[5] = q.j;
        theta[6] = q.k;
        PoseParams::from_theta(theta)
    }

    #[test]
    fn axial_ray_depth_matches_surface_distance() {
        let sk = capsule_skeleton();
        let cam = test_camera();
        let (img, _) = render_cloud(&sk, &axial_pose(&sk), &cam).unwrap();
        // The principal pixel looks straight down the capsule: nearest
        // surface is the start cap at z = 1.0 - radius.
        let d = img.at(80, 60);
        assert!((f64::from(d) - 950.0).abs() <= 0.5, "depth {d} mm");
    }

    #[test]
    fn invisible_model_is_an_error() {
        let sk = capsule_skeleton();
        let cam = test_camera();
        let mut theta = vec![0.0; sk.dof_count()];
        theta[2] = -2.0; // behind the camera
        theta[3] = 1.0;
        let pose = PoseParams::from_theta(theta);
        assert!(matches!(render_cloud(&sk, &pose, &cam), Err(Error::EmptyRender)));
    }

    #[test]
    fn occluder_hides_the_far_capsule() {
        // Two parallel capsules stacked along z; the near one fully covers
        // the far one from the camera at the origin.
        let near = Capsule::new(Point3::new(-0.3, 0.0, 0.8), Point3::new(0.3, 0.0, 0.8), 0.05);
        let far = Capsule::new(Point3::new(-0.3, 0.0, 1.2), Point3::new(0.3, 0.0, 1.2), 0.02);
        // Rays that hit the far capsule all hit the near one first.
        for i in 0..200 {
            let x = -0.28 + 0.56 * i as f64 / 199.0;
            let dir = Vector3::new(x / 1.2, 0.0, 1.0);
            let t_far = ray_capsule_intersection(dir, &far);
            let t_near = ray_capsule_intersection(dir, &near);
            if let Some(tf) = t_far {
                let tn = t_near.expect("near capsule must cover the far one");
                assert!(tn < tf);
                // The z-buffer winner is never within the far capsule's skin.
                let hit = Point3::from(dir * tn);
                assert!(crate::geometry::distance_to_capsule(hit, &far) > 1e-6);
            }
        }
    }

    #[test]
    fn rendered_points_re_verify_as_nearest_hits() {
        let sk = parse_skeleton(crate::skeleton::tests::chain2_doc()).unwrap();
        let bounds = SceneBounds::cube(Point3::new(0.0, 0.0, 2.0), 0.3);
        let pose = sk.random_pose(&bounds, &mut ChaCha8Rng::seed_from_u64(31));
        let cam = test_camera();
        let Ok((img, _)) = render_cloud(&sk, &pose, &cam) else {
            panic!("model should be visible");
        };
        let model = sk.forward_kinematics(&pose).unwrap();
        let capsules: Vec<Capsule> = model.segments.iter().map(|s| s.capsule).collect();
        for v in 0..img.height() {
            for u in 0..img.width() {
                let d = img.at(u, v);
                if d == 0 {
                    continue;
                }
                let dir = Vector3::new(
                    (u as f64 - cam.intrinsics.cx) / cam.intrinsics.fx,
                    (v as f64 - cam.intrinsics.cy) / cam.intrinsics.fy,
                    1.0,
                );
                let t_min = capsules
                    .iter()
                    .filter_map(|c| ray_capsule_intersection(dir, c))
                    .fold(f64::INFINITY, f64::min);
                assert!(t_min.is_finite());
                assert!((t_min * 1000.0 - f64::from(d)).abs() <= 0.5 + 1e-9);
            }
        }
    }

    #[test]
    fn render_objective_stays_under_quantization_bound() {
        let sk = parse_skeleton(crate::skeleton::tests::chain2_doc()).unwrap();
        let bounds = SceneBounds::cube(Point3::new(0.0, 0.0, 2.0), 0.2);
        let pose = sk.random_pose(&bounds, &mut ChaCha8Rng::seed_from_u64(8));
        let cam = test_camera();
        if let Ok((_, cloud)) = render_cloud(&sk, &pose, &cam) {
            let v = evaluate(&sk, &pose, &cloud).unwrap();
            // 0.5 mm quantization, stretched by the widest ray direction.
            let max_dir = (1.0 + (80.0f64 / 200.0).powi(2) + (60.0f64 / 200.0).powi(2)).sqrt();
            let bound = (1.0 + 0.5e-3 * max_dir / cloud.sigma()).ln();
            assert!(v.value <= bound, "value {} bound {}", v.value, bound);
        } else {
            panic!("model should be visible");
        }
    }

    #[test]
    fn zero_noise_is_identity() {
        let cloud = PointCloud::new(vec![Point3::new(0.1, 0.2, 1.0), Point3::new(-0.1, 0.0, 1.5)]).unwrap();
        let out = add_noise(&cloud, 0.0, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        assert_eq!(out, cloud);
    }

    #[test]
    fn noise_is_deterministic_and_scaled() {
        let pts: Vec<Point3<f64>> = (0..10_000)
            .map(|i| Point3::new(0.0, 0.0, 1.0 + (i % 7) as f64 * 0.1))
            .collect();
        let cloud = PointCloud::new(pts).unwrap();
        let a = add_noise(&cloud, 5.0, &mut ChaCha8Rng::seed_from_u64(2)).unwrap();
        let b = add_noise(&cloud, 5.0, &mut ChaCha8Rng::seed_from_u64(2)).unwrap();
        assert_eq!(a, b);

        // Empirical std of the along-ray displacement.
        let mut sum = 0.0;
        let mut sum2 = 0.0;
        for (p, q) in cloud.points().iter().zip(a.points()) {
            let disp = (q - p).dot(&(p.coords / p.coords.norm()));
            sum += disp;
            sum2 += disp * disp;
        }
        let n = cloud.len() as f64;
        let std = (sum2 / n - (sum / n).powi(2)).sqrt();
        assert!((std - 5.0e-3).abs() < 0.05 * 5.0e-3, "std {std}");
    }

    fn shifted(model: &PosedModel, dx: f64) -> PosedModel {
        PosedModel {
            segments: model
                .segments
                .iter()
                .map(|s| PosedLink {
                    link_id: s.link_id,
                    capsule: Capsule {
                        a: s.capsule.a + Vector3::new(dx, 0.0, 0.0),
                        b: s.capsule.b + Vector3::new(dx, 0.0, 0.0),
                        radius: s.capsule.radius,
                    },
                })
                .collect(),
        }
    }

    #[test]
    fn exact_match_scores_one() {
        let sk = parse_skeleton(crate::skeleton::tests::chain2_doc()).unwrap();
        let pose = sk.random_pose(&SceneBounds::cube(Point3::origin(), 0.5), &mut ChaCha8Rng::seed_from_u64(4));
        let model = sk.forward_kinematics(&pose).unwrap();
        let report = link_accuracy(&model, &model, 0.01).unwrap();
        assert_eq!(report.fraction_correct, 1.0);
        assert_eq!(report.max_endpoint_error(), 0.0);
    }

    #[test]
    fn uniform_miss_scores_zero() {
        let sk = parse_skeleton(crate::skeleton::tests::chain2_doc()).unwrap();
        let pose = sk.random_pose(&SceneBounds::cube(Point3::origin(), 0.5), &mut ChaCha8Rng::seed_from_u64(4));
        let model = sk.forward_kinematics(&pose).unwrap();
        let threshold = 0.02;
        let moved = shifted(&model, 2.0 * threshold);
        let report = link_accuracy(&moved, &model, threshold).unwrap();
        assert_eq!(report.fraction_correct, 0.0);
    }

    #[test]
    fn half_displaced_scores_half() {
        // Four independent links; displace exactly two beyond threshold.
        let mk = |id: u32, y: f64| PosedLink {
            link_id: id,
            capsule: Capsule::new(Point3::new(0.0, y, 0.0), Point3::new(1.0, y, 0.0), 0.05),
        };
        let truth = PosedModel { segments: vec![mk(0, 0.0), mk(1, 1.0), mk(2, 2.0), mk(3, 3.0)] };
        let mut est = truth.clone();
        for i in [1usize, 3] {
            est.segments[i].capsule.a += Vector3::new(0.0, 0.1, 0.0);
            est.segments[i].capsule.b += Vector3::new(0.0, 0.1, 0.0);
        }
        let report = link_accuracy(&est, &truth, 0.05).unwrap();
        assert_eq!(report.fraction_correct, 0.5);
    }

    #[test]
    fn accuracy_is_monotone_in_threshold() {
        let sk = parse_skeleton(crate::skeleton::tests::chain2_doc()).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let bounds = SceneBounds::cube(Point3::origin(), 0.5);
        let truth = sk.forward_kinematics(&sk.random_pose(&bounds, &mut rng)).unwrap();
        let est = sk.forward_kinematics(&sk.random_pose(&bounds, &mut rng)).unwrap();
        let mut prev = 0.0;
        for threshold in [0.01, 0.05, 0.2, 1.0, 10.0] {
            let f = link_accuracy(&est, &truth, threshold).unwrap().fraction_correct;
            assert!(f >= prev);
            prev = f;
        }
    }

    #[test]
    fn size_mismatch_is_an_error() {
        let mk = |id: u32| PosedLink {
            link_id: id,
            capsule: Capsule::new(Point3::origin(), Point3::new(1.0, 0.0, 0.0), 0.05),
        };
        let a = PosedModel { segments: vec![mk(0)] };
        let b = PosedModel { segments: vec![mk(0), mk(1)] };
        assert!(matches!(
            link_accuracy(&a, &b, 0.1),
            Err(Error::ModelSizeMismatch { estimated: 1, truth: 2 })
        ));
    }

    #[test]
    fn best_permutation_recovers_swapped_legs() {
        // Two interchangeable single-link "legs" hanging off a root.
        let sk = parse_skeleton(
            r#"{"name": "pair", "links": [
                {"id": 0, "parent": null, "axes": [], "length_free": false,
                 "default_length": 0.1, "radius": 0.02},
                {"id": 1, "parent": 0, "axes": [[0,0,1]], "length_free": false,
                 "default_length": 0.2, "radius": 0.02},
                {"id": 2, "parent": 0, "axes": [[0,0,1]], "length_free": false,
                 "default_length": 0.2, "radius": 0.02}
            ],
            "symmetry_groups": [[1, 2]]}"#,
        )
        .unwrap();
        let mut theta = vec![0.0; sk.dof_count()];
        theta[3] = 1.0;
        theta[7] = 0.8; // leg 1 up
        theta[8] = -0.8; // leg 2 down
        let truth_pose = PoseParams::from_theta(theta.clone());
        // Estimated pose has the two legs' labels swapped.
        theta[7] = -0.8;
        theta[8] = 0.8;
        let swapped_pose = PoseParams::from_theta(theta);

        let truth = sk.forward_kinematics(&truth_pose).unwrap();
        let swapped = sk.forward_kinematics(&swapped_pose).unwrap();

        let strict = link_accuracy(&swapped, &truth, 0.01).unwrap();
        let best = link_accuracy_best_permutation(&swapped, &truth, 0.01, &sk).unwrap();
        assert!(strict.fraction_correct < 1.0);
        assert_eq!(best.fraction_correct, 1.0);
    }

    #[test]
    fn permutations_are_complete_and_sorted() {
        let p3 = permutations(3);
        assert_eq!(p3.len(), 6);
        assert_eq!(p3[0], vec![0, 1, 2]);
        let unique: std::collections::HashSet<_> = p3.iter().collect();
        assert_eq!(unique.len(), 6);
    }

    #[test]
    fn benchmark_writes_expected_cases() {
        let sk = capsule_skeleton();
        let dir = tempfile::tempdir().unwrap();
        let params = SynthParams { width: 64, height: 48, fx: 80.0, fy: 80.0, cx: 32.0, cy: 24.0, ..SynthParams::default() };
        let manifest = make_benchmark(&sk, 2, 3, 7, &params, dir.path()).unwrap();
        assert_eq!(manifest.cases.len(), 6);
        let loaded = BenchmarkManifest::load(dir.path().join("manifest.txt")).unwrap();
        assert_eq!(loaded, manifest);
        for case in &manifest.cases {
            assert!(dir.path().join(&case.cloud).exists());
            assert!(dir.path().join(&case.truth).exists());
            assert!(dir.path().join(&case.intr).exists());
        }
    }

    #[test]
    fn benchmark_truth_round_trips_and_matches_fk() {
        let sk = capsule_skeleton();
        let dir = tempfile::tempdir().unwrap();
        let params = SynthParams { width: 64, height: 48, fx: 80.0, fy: 80.0, cx: 32.0, cy: 24.0, ..SynthParams::default() };
        let manifest = make_benchmark(&sk, 1, 1, 3, &params, dir.path()).unwrap();
        let truth = PoseFile::load(dir.path().join(&manifest.cases[0].truth)).unwrap();
        truth.validate_against(&sk).unwrap();
        let again = PoseFile::from_json(&truth.to_json()).unwrap();
        assert_eq!(again, truth);
    }

    #[test]
    fn benchmark_is_deterministic() {
        let sk = capsule_skeleton();
        let params = SynthParams { width: 64, height: 48, fx: 80.0, fy: 80.0, cx: 32.0, cy: 24.0, ..SynthParams::default() };
        let dir_a = tempfile::tempdir().unwrap();
        let dir_b = tempfile::tempdir().unwrap();
        make_benchmark(&sk, 2, 2, 11, &params, dir_a.path()).unwrap();
        make_benchmark(&sk, 2, 2, 11, &params, dir_b.path()).unwrap();
        for name in ["manifest.txt", "case_p0_v0.xyz", "case_p1_v1.truth.json", "case_p0_v1.pgm"] {
            let a = fs::read(dir_a.path().join(name)).unwrap();
            let b = fs::read(dir_b.path().join(name)).unwrap();
            assert_eq!(a, b, "{name} differs between runs");
        }
    }

    #[test]
    fn transform_pose_composes_with_fk() {
        let sk = parse_skeleton(crate::skeleton::tests::chain2_doc()).unwrap();
        let pose = sk.random_pose(&SceneBounds::cube(Point3::origin(), 0.5), &mut ChaCha8Rng::seed_from_u64(19));
        let iso = Isometry3::from_parts(
            Translation3::new(0.3, -0.7, 1.9),
            UnitQuaternion::from_axis_angle(&Vector3::y_axis(), 0.6),
        );
        let moved = transform_pose(&iso, &pose).unwrap();
        let direct = sk.forward_kinematics(&moved).unwrap();
        let composed = sk.forward_kinematics(&pose).unwrap();
        for (d, c) in direct.segments.iter().zip(&composed.segments) {
            assert_relative_eq!(d.capsule.a, iso * c.capsule.a, epsilon = 1e-9);
            assert_relative_eq!(d.capsule.b, iso * c.capsule.b, epsilon = 1e-9);
        }
    }

    #[test]
    fn orbit_camera_looks_at_origin() {
        let intr = Intrinsics::new(200.0, 200.0, 80.0, 60.0).unwrap();
        for elevation in [0.0, 0.4, 1.0] {
            let cam = CameraSpec::orbiting(intr, 160, 120, 1.5, elevation).unwrap();
            let origin_cam = cam.pose * Point3::origin();
            assert_relative_eq!(origin_cam.x, 0.0, epsilon = 1e-12);
            assert_relative_eq!(origin_cam.y, 0.0, epsilon = 1e-12);
            assert_relative_eq!(origin_cam.z, 1.5, epsilon = 1e-12);
        }
    }
}
