//! Scratch harness for benchmark recovery rates. Run with:
//!   cargo run --release -p skelfit --example probe_recovery -- [budget] [max_points] [n_cases] [n_seeds]

use std::time::Instant;

use skelfit::evolution::{evolve, EAConfig};
use skelfit::posefile::PoseFile;
use skelfit::skeleton::parse_skeleton;
use skelfit::syntheval::{link_accuracy_best_permutation, make_benchmark, SynthParams};

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let budget: u64 = args.get(1).map_or(200_000, |s| s.parse().unwrap());
    let max_points: usize = args.get(2).map_or(400, |s| s.parse().unwrap());
    let n_cases: usize = args.get(3).map_or(6, |s| s.parse().unwrap());
    let n_seeds: u64 = args.get(4).map_or(1, |s| s.parse().unwrap());
    let scale: f64 = args.get(5).map_or(0.1, |s| s.parse().unwrap());
    let pc: f64 = args.get(6).map_or(0.5, |s| s.parse().unwrap());
    let tournament: usize = args.get(7).map_or(3, |s| s.parse().unwrap());

    let text = std::fs::read_to_string(concat!(
        env!("CARGO_MANIFEST_DIR"),
        "/../../skeletons/spider.skel"
    ))
    .unwrap();
    let sk = parse_skeleton(&text).unwrap();

    let dir = tempfile::tempdir().unwrap();
    let params = SynthParams::for_skeleton(&sk);
    eprintln!("camera distance: {:.3}", params.camera_distance);
    let manifest = make_benchmark(&sk, 4, 5, 1, &params, dir.path()).unwrap();

    let threshold = {
        let truth = PoseFile::load(dir.path().join(&manifest.cases[0].truth)).unwrap();
        0.25 * truth.posed_model().mean_link_length()
    };
    eprintln!("threshold: {:.4} m", threshold);

    let mut accs = Vec::new();
    for (ci, case) in manifest.cases.iter().take(n_cases).enumerate() {
        let cloud_full = skelfit::depthio::load_xyz(dir.path().join(&case.cloud)).unwrap();
        let truth = PoseFile::load(dir.path().join(&case.truth)).unwrap();
        for seed in 0..n_seeds {
            let cloud = cloud_full.subsample(max_points, seed).unwrap();
            let cfg = EAConfig {
                eval_budget: budget,
                seed,
                mutation_scale: scale,
                crossover_probability: pc,
                tournament_size: tournament,
                ..EAConfig::default()
            };
            let t0 = Instant::now();
            let (best, stats) = evolve(&sk, &cloud, &cfg).unwrap();
            let est_model = sk.forward_kinematics(&best).unwrap();
            let report =
                link_accuracy_best_permutation(&est_model, &truth.posed_model(), threshold, &sk)
                    .unwrap();
            let truth_obj = skelfit::objective::evaluate(&sk, &truth.pose(), &cloud).unwrap();
            println!(
                "case {ci:2} seed {seed}: n={} acc={:.3} obj={:.4} truth_obj={:.4} evals={} t={:.1}s",
                cloud.len(),
                report.fraction_correct,
                stats.best_value,
                truth_obj.value,
                stats.evaluations,
                t0.elapsed().as_secs_f64()
            );
            if std::env::var("PROBE_VERBOSE").is_ok() {
                let tm = truth.posed_model();
                for (l, (e, t)) in report
                    .per_link
                    .iter()
                    .zip(est_model.segments.iter().zip(&tm.segments))
                {
                    println!(
                        "    link {}: start {:.3} end {:.3} | est ({:.2},{:.2},{:.2})->({:.2},{:.2},{:.2}) truth ({:.2},{:.2},{:.2})->({:.2},{:.2},{:.2})",
                        l.link_id, l.start, l.end,
                        e.capsule.a.x, e.capsule.a.y, e.capsule.a.z,
                        e.capsule.b.x, e.capsule.b.y, e.capsule.b.z,
                        t.capsule.a.x, t.capsule.a.y, t.capsule.a.z,
                        t.capsule.b.x, t.capsule.b.y, t.capsule.b.z,
                    );
                }
            }
            accs.push(report.fraction_correct);
        }
    }
    accs.sort_by(|a, b| a.partial_cmp(b).unwrap());
    println!("median accuracy: {:.3}", accs[accs.len() / 2]);
}
