//! Population-based evolutionary search over pose parameters, plus a
//! hill-climbing baseline run under the same evaluation budget.
//!
//! Both optimizers are fully deterministic for a fixed seed: every random
//! draw comes from one seeded generator on the main thread, and fitness
//! evaluation parallelizes only inside `evaluate_batch`, whose results are
//! bit-identical to sequential execution.

use std::fmt::Write as _;
use std::time::{Duration, Instant};

use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::objective::{evaluate, evaluate_batch, ObjectiveValue, PointCloud};
use crate::skeleton::{ParamKind, PoseParams, SceneBounds, Skeleton};

/// Consecutive rejected proposals before the hill climber restarts from a
/// fresh random pose.
pub const HILL_CLIMB_RESTART_AFTER: usize = 500;

/// Optimizer hyperparameters. Defaults follow standard real-coded EA
/// practice; everything is overridable via config file or CLI flag.
#[derive(Debug, Clone, PartialEq)]
pub struct EAConfig {
    pub population_size: usize,
    pub elite_count: usize,
    pub tournament_size: usize,
    pub crossover_probability: f64,
    /// Per-parameter mutation probability; `None` resolves to `3 / dof`.
    pub mutation_rate: Option<f64>,
    /// Mutation noise std as a fraction of each parameter's range.
    pub mutation_scale: f64,
    /// Total objective evaluations allowed.
    pub eval_budget: u64,
    pub seed: u64,
    /// Root-position sampling box; `None` derives one from the cloud.
    pub bounds: Option<SceneBounds>,
}

impl Default for EAConfig {
    fn default() -> Self {
        EAConfig {
            population_size: 200,
            elite_count: 2,
            tournament_size: 3,
            crossover_probability: 0.5,
            mutation_rate: None,
            mutation_scale: 0.1,
            eval_budget: 200_000,
            seed: 0,
            bounds: None,
        }
    }
}

impl EAConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |key: &str, message: String| Err(Error::Config { key: key.into(), message });
        if self.population_size == 0 {
            return fail("population_size", "must be positive".into());
        }
        if self.elite_count >= self.population_size {
            return fail(
                "elite_count",
                format!("{} must be below population size {}", self.elite_count, self.population_size),
            );
        }
        if self.tournament_size == 0 {
            return fail("tournament_size", "must be at least 1".into());
        }
        if !(0.0..=1.0).contains(&self.crossover_probability) {
            return fail("crossover_probability", format!("{} outside [0, 1]", self.crossover_probability));
        }
        if let Some(rate) = self.mutation_rate {
            if !(0.0..=1.0).contains(&rate) {
                return fail("mutation_rate", format!("{rate} outside [0, 1]"));
            }
        }
        if !(self.mutation_scale.is_finite() && self.mutation_scale > 0.0) {
            return fail("mutation_scale", format!("{} must be positive", self.mutation_scale));
        }
        if self.eval_budget == 0 {
            return fail("eval_budget", "must be positive".into());
        }
        Ok(())
    }

    /// Per-parameter mutation probability for a skeleton of `dof` parameters.
    pub fn resolved_mutation_rate(&self, dof: usize) -> f64 {
        self.mutation_rate
            .unwrap_or_else(|| 3.0 / dof.max(1) as f64)
            .min(1.0)
    }

    /// Explicit bounds, or the cloud's bounding box inflated by a tenth of
    /// its diagonal (at least 5 cm) on every side. The root joint sits on
    /// the subject, so the cloud's box is already a tight prior.
    pub fn resolved_bounds(&self, cloud: &PointCloud) -> Result<SceneBounds> {
        if let Some(b) = self.bounds {
            return Ok(b);
        }
        let tight = SceneBounds::from_points(cloud.points(), 0.0)?;
        let margin = (0.10 * tight.widths().norm()).max(0.05);
        SceneBounds::from_points(cloud.points(), margin)
    }

    /// Serialize as a flat `key = value` document.
    pub fn to_kv_string(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "population_size = {}", self.population_size);
        let _ = writeln!(out, "elite_count = {}", self.elite_count);
        let _ = writeln!(out, "tournament_size = {}", self.tournament_size);
        let _ = writeln!(out, "crossover_probability = {}", self.crossover_probability);
        match self.mutation_rate {
            Some(r) => {
                let _ = writeln!(out, "mutation_rate = {r}");
            }
            None => {
                let _ = writeln!(out, "mutation_rate = auto");
            }
        }
        let _ = writeln!(out, "mutation_scale = {}", self.mutation_scale);
        let _ = writeln!(out, "eval_budget = {}", self.eval_budget);
        let _ = writeln!(out, "seed = {}", self.seed);
        if let Some(b) = self.bounds {
            let _ = writeln!(
                out,
                "bounds = {} {} {} {} {} {}",
                b.min.x, b.min.y, b.min.z, b.max.x, b.max.y, b.max.z
            );
        }
        out
    }

    /// Parse the flat `key = value` format written by [`to_kv_string`].
    /// Unknown keys are rejected; omitted keys keep their defaults.
    pub fn from_kv_str(text: &str) -> Result<EAConfig> {
        let mut cfg = EAConfig::default();
        for raw in text.lines() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| Error::Config {
                key: line.into(),
                message: "expected `key = value`".into(),
            })?;
            let key = key.trim();
            let value = value.trim();
            let bad = |message: String| Error::Config { key: key.into(), message };
            match key {
                "population_size" => {
                    cfg.population_size = value.parse().map_err(|_| bad(format!("bad integer `{value}`")))?
                }
                "elite_count" => {
                    cfg.elite_count = value.parse().map_err(|_| bad(format!("bad integer `{value}`")))?
                }
                "tournament_size" => {
                    cfg.tournament_size = value.parse().map_err(|_| bad(format!("bad integer `{value}`")))?
                }
                "crossover_probability" => {
                    cfg.crossover_probability = value.parse().map_err(|_| bad(format!("bad number `{value}`")))?
                }
                "mutation_rate" => {
                    cfg.mutation_rate = if value == "auto" {
                        None
                    } else {
                        Some(value.parse().map_err(|_| bad(format!("bad number `{value}`")))?)
                    }
                }
                "mutation_scale" => {
                    cfg.mutation_scale = value.parse().map_err(|_| bad(format!("bad number `{value}`")))?
                }
                "eval_budget" => {
                    cfg.eval_budget = value.parse().map_err(|_| bad(format!("bad integer `{value}`")))?
                }
                "seed" => cfg.seed = value.parse().map_err(|_| bad(format!("bad integer `{value}`")))?,
                "bounds" => {
                    let nums: Vec<f64> = value
                        .split_whitespace()
                        .map(|t| t.parse().map_err(|_| bad(format!("bad number `{t}`"))))
                        .collect::<Result<_>>()?;
                    if nums.len() != 6 {
                        return Err(bad("expected 6 numbers: min_x min_y min_z max_x max_y max_z".into()));
                    }
                    cfg.bounds = Some(SceneBounds::new(
                        nalgebra::Point3::new(nums[0], nums[1], nums[2]),
                        nalgebra::Point3::new(nums[3], nums[4], nums[5]),
                    )?);
                }
                _ => return Err(bad("unknown key".into())),
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

/// One candidate solution; fitness is filled in after evaluation and, once
/// set, always equals `evaluate()` of the pose.
#[derive(Debug, Clone)]
pub struct Individual {
    pub pose: PoseParams,
    pub fitness: Option<ObjectiveValue>,
}

/// One logged row of optimizer progress.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GenerationStats {
    pub generation: usize,
    /// Best-so-far objective; non-increasing across rows.
    pub best: f64,
    /// Mean objective of the current population (or proposal window).
    pub mean: f64,
    /// Cumulative objective evaluations after this row.
    pub evaluations: u64,
}

/// Convergence record of one optimizer run.
#[derive(Debug, Clone)]
pub struct RunStats {
    pub generations: Vec<GenerationStats>,
    /// Full-objective evaluations performed.
    pub evaluations: u64,
    /// Point-level distance queries performed (N per evaluation).
    pub distance_queries: u64,
    pub best_value: f64,
    /// Not part of the deterministic contract.
    pub wall_time: Duration,
}

/// Gaussian-perturb each parameter independently with the configured
/// probability, then clamp back to the feasible set. Noise std is
/// `mutation_scale` times the parameter's range width (bounds width for root
/// position, 1 for quaternion components). The input is not modified.
pub fn mutate<R: Rng>(
    pose: &PoseParams,
    skeleton: &Skeleton,
    cfg: &EAConfig,
    bounds: &SceneBounds,
    rng: &mut R,
) -> PoseParams {
    let rate = cfg.resolved_mutation_rate(skeleton.dof_count());
    let widths = bounds.widths();
    let mut out = pose.clone();
    let mut touched = false;
    for (i, kind) in skeleton.param_layout().iter().enumerate() {
        if rng.gen::<f64>() >= rate {
            continue;
        }
        let width = match *kind {
            ParamKind::RootPosition { axis } => widths[axis],
            ParamKind::RootOrientation { .. } => 1.0,
            ParamKind::JointAngle { lo, hi, .. } | ParamKind::Length { lo, hi, .. } => hi - lo,
        };
        let sigma = cfg.mutation_scale * width;
        if sigma <= 0.0 {
            continue;
        }
        let noise = Normal::new(0.0, sigma).expect("sigma is positive").sample(rng);
        out.theta_mut()[i] += noise;
        touched = true;
    }
    if !touched {
        return out;
    }
    skeleton
        .clamp_pose(&out)
        .expect("mutating a finite pose keeps it finite")
}

/// Subtree-swap recombination: copy `parent_a`, then replace the parameter
/// blocks of one uniformly chosen non-root link and all its descendants with
/// `parent_b`'s. The root transform always comes from `parent_a`. On a
/// single-link skeleton this is a copy of `parent_a`.
pub fn crossover<R: Rng>(
    parent_a: &PoseParams,
    parent_b: &PoseParams,
    skeleton: &Skeleton,
    rng: &mut R,
) -> Result<PoseParams> {
    if parent_a.theta().len() != skeleton.dof_count() || parent_b.theta().len() != skeleton.dof_count() {
        return Err(Error::SkeletonMismatch);
    }
    if skeleton.link_count() == 1 {
        return Ok(parent_a.clone());
    }
    let k = rng.gen_range(1..skeleton.link_count());
    crossover_at(parent_a, parent_b, skeleton, k)
}

/// [`crossover`] with the swapped branch fixed to link `index`.
pub fn crossover_at(
    parent_a: &PoseParams,
    parent_b: &PoseParams,
    skeleton: &Skeleton,
    index: usize,
) -> Result<PoseParams> {
    if parent_a.theta().len() != skeleton.dof_count() || parent_b.theta().len() != skeleton.dof_count() {
        return Err(Error::SkeletonMismatch);
    }
    if index == 0 || index >= skeleton.link_count() {
        return Err(Error::InvalidArgument(format!(
            "crossover link index {index} is not a non-root link"
        )));
    }
    let mut theta = parent_a.theta().to_vec();
    for li in skeleton.subtree_indices(index) {
        let range = skeleton.param_range(li);
        theta[range.clone()].copy_from_slice(&parent_b.theta()[range]);
    }
    Ok(PoseParams::from_theta(theta))
}

/// Tournament selection over the current population: sample
/// `tournament_size` distinct indices, return the one with the lowest
/// objective, ties to the lower index.
pub(crate) fn tournament<R: Rng>(fits: &[ObjectiveValue], size: usize, rng: &mut R) -> usize {
    let k = size.min(fits.len());
    let mut best = usize::MAX;
    let mut best_value = f64::INFINITY;
    for i in index::sample(rng, fits.len(), k) {
        let v = fits[i].value;
        if v < best_value || (v == best_value && i < best) {
            best_value = v;
            best = i;
        }
    }
    best
}

fn mean_value(fits: &[ObjectiveValue]) -> f64 {
    fits.iter().map(|f| f.value).sum::<f64>() / fits.len() as f64
}

/// Generational evolutionary search. Returns the best pose ever evaluated
/// and the per-generation convergence record.
pub fn evolve(skeleton: &Skeleton, cloud: &PointCloud, cfg: &EAConfig) -> Result<(PoseParams, RunStats)> {
    evolve_with_initial(skeleton, cloud, cfg, &[])
}

/// [`evolve`] with caller-supplied poses occupying the first slots of the
/// initial population (the rest is sampled randomly).
pub fn evolve_with_initial(
    skeleton: &Skeleton,
    cloud: &PointCloud,
    cfg: &EAConfig,
    injected: &[PoseParams],
) -> Result<(PoseParams, RunStats)> {
    cfg.validate()?;
    let pop_n = cfg.population_size;
    if cfg.eval_budget < pop_n as u64 {
        return Err(Error::BudgetTooSmall {
            budget: cfg.eval_budget,
            population: pop_n,
        });
    }
    let start = Instant::now();
    let bounds = cfg.resolved_bounds(cloud)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);

    let mut poses: Vec<PoseParams> = Vec::with_capacity(pop_n);
    for pose in injected.iter().take(pop_n) {
        poses.push(skeleton.clamp_pose(pose)?);
    }
    while poses.len() < pop_n {
        poses.push(skeleton.random_pose(&bounds, &mut rng));
    }

    let mut fits = evaluate_batch(skeleton, &poses, cloud)?;
    let mut evaluations = pop_n as u64;
    let mut distance_queries: u64 = fits.iter().map(|f| f.evaluations).sum();

    let mut best_index = 0;
    for (i, f) in fits.iter().enumerate() {
        if f.value < fits[best_index].value {
            best_index = i;
        }
    }
    let mut best_pose = poses[best_index].clone();
    let mut best_value = fits[best_index].value;

    let mut generations = vec![GenerationStats {
        generation: 0,
        best: best_value,
        mean: mean_value(&fits),
        evaluations,
    }];

    let offspring_n = pop_n - cfg.elite_count;
    let mut generation = 0usize;
    while evaluations + offspring_n as u64 <= cfg.eval_budget {
        generation += 1;

        let mut order: Vec<usize> = (0..pop_n).collect();
        order.sort_by(|&i, &j| {
            fits[i]
                .value
                .partial_cmp(&fits[j].value)
                .expect("objective values are finite")
                .then(i.cmp(&j))
        });

        let mut next_poses: Vec<PoseParams> = Vec::with_capacity(pop_n);
        let mut next_fits: Vec<ObjectiveValue> = Vec::with_capacity(pop_n);
        for &e in order.iter().take(cfg.elite_count) {
            next_poses.push(poses[e].clone());
            next_fits.push(fits[e]);
        }

        let mut offspring = Vec::with_capacity(offspring_n);
        for _ in 0..offspring_n {
            let a = tournament(&fits, cfg.tournament_size, &mut rng);
            let child = if rng.gen::<f64>() < cfg.crossover_probability {
                let b = tournament(&fits, cfg.tournament_size, &mut rng);
                crossover(&poses[a], &poses[b], skeleton, &mut rng)?
            } else {
                poses[a].clone()
            };
            offspring.push(mutate(&child, skeleton, cfg, &bounds, &mut rng));
        }

        let offspring_fits = evaluate_batch(skeleton, &offspring, cloud)?;
        evaluations += offspring_n as u64;
        distance_queries += offspring_fits.iter().map(|f| f.evaluations).sum::<u64>();

        next_poses.append(&mut offspring);
        next_fits.extend(offspring_fits);
        poses = next_poses;
        fits = next_fits;

        for (i, f) in fits.iter().enumerate() {
            if f.value < best_value {
                best_value = f.value;
                best_pose = poses[i].clone();
            }
        }
        generations.push(GenerationStats {
            generation,
            best: best_value,
            mean: mean_value(&fits),
            evaluations,
        });
    }

    Ok((
        best_pose,
        RunStats {
            generations,
            evaluations,
            distance_queries,
            best_value,
            wall_time: start.elapsed(),
        },
    ))
}

/// Hill-climbing baseline under the same budget accounting as [`evolve`]:
/// propose `mutate(current)`, accept only strict improvements, restart from
/// a fresh random pose after [`HILL_CLIMB_RESTART_AFTER`] consecutive
/// rejections. Stats rows are logged every `population_size` evaluations so
/// the two optimizers' logs line up.
pub fn hill_climb(skeleton: &Skeleton, cloud: &PointCloud, cfg: &EAConfig) -> Result<(PoseParams, RunStats)> {
    cfg.validate()?;
    let start = Instant::now();
    let bounds = cfg.resolved_bounds(cloud)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);

    let mut current = skeleton.random_pose(&bounds, &mut rng);
    let mut current_fit = evaluate(skeleton, &current, cloud)?;
    let mut evaluations: u64 = 1;
    let mut distance_queries = current_fit.evaluations;

    let mut best_pose = current.clone();
    let mut best_value = current_fit.value;

    let window = cfg.population_size as u64;
    let mut generations = Vec::new();
    let mut window_sum = current_fit.value;
    let mut window_count = 1u64;
    let mut generation = 0usize;
    let mut rejections = 0usize;

    let flush_window =
        |generations: &mut Vec<GenerationStats>, generation: &mut usize, sum: &mut f64, count: &mut u64, best: f64, evaluations: u64| {
            if *count == 0 {
                return;
            }
            generations.push(GenerationStats {
                generation: *generation,
                best,
                mean: *sum / *count as f64,
                evaluations,
            });
            *generation += 1;
            *sum = 0.0;
            *count = 0;
        };

    while evaluations < cfg.eval_budget {
        if rejections >= HILL_CLIMB_RESTART_AFTER {
            current = skeleton.random_pose(&bounds, &mut rng);
            current_fit = evaluate(skeleton, &current, cloud)?;
            rejections = 0;
        } else {
            let candidate = mutate(&current, skeleton, cfg, &bounds, &mut rng);
            let fit = evaluate(skeleton, &candidate, cloud)?;
            if fit.value < current_fit.value {
                current = candidate;
                current_fit = fit;
                rejections = 0;
            } else {
                rejections += 1;
            }
            // The candidate was scored even when rejected.
            if fit.value < best_value {
                best_value = fit.value;
                best_pose = current.clone();
            }
            evaluations += 1;
            distance_queries += fit.evaluations;
            window_sum += fit.value;
            window_count += 1;
            if evaluations % window == 0 {
                flush_window(&mut generations, &mut generation, &mut window_sum, &mut window_count, best_value, evaluations);
            }
            continue;
        }
        // Restart bookkeeping.
        evaluations += 1;
        distance_queries += current_fit.evaluations;
        if current_fit.value < best_value {
            best_value = current_fit.value;
            best_pose = current.clone();
        }
        window_sum += current_fit.value;
        window_count += 1;
        if evaluations % window == 0 {
            flush_window(&mut generations, &mut generation, &mut window_sum, &mut window_count, best_value, evaluations);
        }
    }
    flush_window(&mut generations, &mut generation, &mut window_sum, &mut window_count, best_value, evaluations);

    Ok((
        best_pose,
        RunStats {
            generations,
            evaluations,
            distance_queries,
            best_value,
            wall_time: start.elapsed(),
        },
    ))
}
