//! The skeleton files shipped in `skeletons/` must parse and expose the
//! advertised parameter counts.

use std::path::PathBuf;

use skelfit::skeleton::parse_skeleton;

fn load(name: &str) -> skelfit::Skeleton {
    let path = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../skeletons").join(name);
    let text = std::fs::read_to_string(&path)
        .unwrap_or_else(|e| panic!("cannot read {}: {e}", path.display()));
    parse_skeleton(&text).unwrap_or_else(|e| panic!("{name}: {e}"))
}

#[test]
fn spider_has_8_links_and_39_parameters() {
    let sk = load("spider.skel");
    assert_eq!(sk.link_count(), 8);
    assert_eq!(sk.dof_count(), 39);
    assert_eq!(sk.symmetry_groups().len(), 2);
}

#[test]
fn humanoid_has_78_parameters() {
    let sk = load("humanoid.skel");
    assert_eq!(sk.dof_count(), 78);
    assert_eq!(sk.symmetry_groups().len(), 2);
}

#[test]
fn shipped_skeletons_pose_and_render() {
    use nalgebra::Point3;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use skelfit::skeleton::SceneBounds;

    for name in ["spider.skel", "humanoid.skel"] {
        let sk = load(name);
        let bounds = SceneBounds::cube(Point3::origin(), 0.05);
        let pose = sk.random_pose(&bounds, &mut ChaCha8Rng::seed_from_u64(1));
        let model = sk.forward_kinematics(&pose).unwrap();
        assert_eq!(model.len(), sk.link_count());

        let params = skelfit::syntheval::SynthParams::for_skeleton(&sk);
        let camera = params.view_camera(1, 5).unwrap();
        let (_, cloud) = skelfit::syntheval::render_cloud(&sk, &pose, &camera)
            .unwrap_or_else(|e| panic!("{name} render: {e}"));
        assert!(cloud.len() > 200, "{name}: only {} points", cloud.len());
    }
}
