//! Acceptance run: one PASS/FAIL line per criterion. Exits non-zero when any
//! criterion fails.

use std::f64::consts::PI;
use std::process::ExitCode;
use std::time::{Duration, Instant};

use nalgebra::{Isometry3, Translation3, UnitQuaternion, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use wholebody::anneal::{fd_gradient, minimize, AnnealConfig, SearchSpace};
use wholebody::bench::report::{metrics_csv, strip_latency};
use wholebody::bench::{check_certificate, generate_scenarios, run_suite, Family, Prepared, Scenario, SuiteTable, Variant};
use wholebody::costs::{
    collision_cost, evaluate_targets, reachability_cost, smoothness_cost, total_objective, CostContext, CostWeights,
    Trajectory, WholeBodyState,
};
use wholebody::field::{build_field, materialize_points, Aabb, Obstacle, QueryPointSet, Scene, Shape};
use wholebody::geometry::{gamma_to_world, BasePose};
use wholebody::kinematics::{solve_ik, IkResult, IkStatus, JointVector, KinematicChain, Residual, IK_TOL_POS, IK_TOL_ROT};
use wholebody::planner::{init_targets, lift_waypoint, PlannerConfig};

const SUITE_SEED: u64 = 7;
const PER_FAMILY: usize = 20;

struct Verdict {
    pass: bool,
    detail: String,
}

fn verdict(pass: bool, detail: String) -> Verdict {
    Verdict { pass, detail }
}

fn secs(d: Duration) -> f64 {
    d.as_secs_f64()
}

// ---------- criterion 1 ----------

fn ik_stub(status: IkStatus, iterations: usize) -> IkResult {
    IkResult {
        status,
        joints: JointVector::zeros(6),
        iterations,
        residual: Residual { translation: 0.0, rotation: 0.0 },
    }
}

fn state(x: f64, joints: Vec<f64>) -> WholeBodyState {
    WholeBodyState::new(BasePose::new(x, 0.0, 0.0), JointVector(joints), 1.0)
}

fn cost_stack() -> Verdict {
    let clock = Instant::now();
    let w = CostWeights::default();
    let mut worst: f64 = 0.0;
    let mut check = |got: f64, want: f64| worst = worst.max((got - want).abs());

    // reachability: iterations / n_max when converged, c0 otherwise
    for (status, it) in [(IkStatus::Converged, 0), (IkStatus::Converged, 37), (IkStatus::Converged, 100)] {
        check(reachability_cost(&ik_stub(status, it), &w), it as f64 / 100.0);
    }
    check(reachability_cost(&ik_stub(IkStatus::IterationBudgetExceeded, 100), &w), 1e3);

    // smoothness: Euclidean joint step plus Euclidean base step
    let a = state(0.0, vec![0.0; 6]);
    let b = state(0.0, vec![0.3, 0.4, 0.0, 0.0, 0.0, 0.0]);
    let c = state(0.2, vec![0.0; 6]);
    let pair = |x: &WholeBodyState, y: &WholeBodyState| {
        let t = Trajectory::new(vec![x.clone(), y.clone()]).unwrap();
        smoothness_cost(&t, &[x.joints.clone(), y.joints.clone()], &w).unwrap()
    };
    check(pair(&a, &b), (0.3f64 * 0.3 + 0.4 * 0.4).sqrt());
    check(pair(&a, &c), 0.2);
    check(pair(&a, &a), 0.0);

    // collision: a wall face at x = 0.5 and one probe point on a grid line
    let scene = Scene::new(
        Aabb::new([-1.0; 3], [1.0; 3]).unwrap(),
        vec![Obstacle::new(Shape::AxisBox { min: [0.5, -1.0, -1.0], max: [1.0, 1.0, 1.0] })],
    )
    .unwrap();
    let field = build_field(&scene, 0.02).unwrap();
    let qps = QueryPointSet { link_points: vec![], base_points: vec![Vector3::zeros()] };
    let chain = KinematicChain::reference_arm();
    let ctx = CostContext { chain: &chain, field: &field, qps: &qps, weights: &w };
    let penalty = |x: f64| (w.epsilon0 - (0.5 - x)).max(0.0);
    for x in [0.2, 0.46, 0.52] {
        let traj = Trajectory::new(vec![state(-0.5, vec![0.0; 6]), state(x, vec![0.0; 6])]).unwrap();
        check(collision_cost(&traj, &ctx), penalty(-0.5) + penalty(x));
    }
    check(penalty(0.46), 0.06);
    check(penalty(0.52), 0.12);

    // weighted total
    check(w.weighted(1.0, 0.0, 0.0), 10.0);
    check(w.weighted(0.0, 0.0, 0.0), 0.0);
    check(w.weighted(0.5, 2.0, 0.1), 5.0 + 2.0 + 0.06);
    let traj = Trajectory::new(vec![
        state(0.3, vec![0.0, 0.5, 0.8, 0.0, 0.3, 0.0]),
        state(0.45, vec![0.1, 0.55, 0.75, 0.05, 0.3, 0.0]),
    ])
    .unwrap();
    let r = total_objective(&traj, &ctx).unwrap();
    check(r.total, 10.0 * r.reach + 1.0 * r.smooth + 0.6 * r.collide);

    let t = clock.elapsed();
    verdict(
        worst <= 1e-12 && t < Duration::from_secs(1),
        format!("max abs error {worst:.1e} (tol 1e-12), {:.3}s (limit 1s)", secs(t)),
    )
}

// ---------- criterion 2 ----------

fn oracle_box(p: &Vector3<f64>, min: [f64; 3], max: [f64; 3]) -> f64 {
    let mut outside = 0.0;
    let mut inside = f64::NEG_INFINITY;
    for i in 0..3 {
        let d = (min[i] - p[i]).max(p[i] - max[i]);
        outside += d.max(0.0).powi(2);
        inside = inside.max(d);
    }
    if inside > 0.0 {
        outside.sqrt()
    } else {
        inside
    }
}

fn oracle_cylinder(p: &Vector3<f64>, c: [f64; 3], r: f64, h: f64) -> f64 {
    let radial = ((p.x - c[0]).powi(2) + (p.y - c[1]).powi(2)).sqrt() - r;
    let axial = (c[2] - p.z).max(p.z - (c[2] + h));
    if radial > 0.0 || axial > 0.0 {
        (radial.max(0.0).powi(2) + axial.max(0.0).powi(2)).sqrt()
    } else {
        radial.max(axial)
    }
}

fn oracle_distance(scene: &Scene, p: &Vector3<f64>) -> f64 {
    scene
        .obstacles
        .iter()
        .filter(|o| !o.is_target)
        .map(|o| match o.shape {
            Shape::Sphere { center, radius } => (p - Vector3::from(center)).norm() - radius,
            Shape::AxisBox { min, max } => oracle_box(p, min, max),
            Shape::Cylinder { base_center, radius, height } => oracle_cylinder(p, base_center, radius, height),
        })
        .fold(f64::INFINITY, f64::min)
}

fn esdf_scenes() -> Vec<Scene> {
    let ws = Aabb::new([-1.0, -1.0, 0.0], [1.0, 1.0, 1.2]).unwrap();
    let sphere = Shape::Sphere { center: [0.1, -0.2, 0.5], radius: 0.3 };
    let boxed = Shape::AxisBox { min: [-0.4, -0.3, 0.0], max: [0.2, 0.5, 0.7] };
    let cyl = Shape::Cylinder { base_center: [0.2, 0.1, 0.0], radius: 0.25, height: 0.9 };
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut clutter = Vec::new();
    for k in 0..8 {
        let c = [rng.random_range(-0.6..0.6), rng.random_range(-0.6..0.6), rng.random_range(0.2..0.8)];
        let s = rng.random_range(0.05..0.2);
        clutter.push(Obstacle::new(match k % 3 {
            0 => Shape::Sphere { center: c, radius: s },
            1 => Shape::AxisBox { min: [c[0] - s, c[1] - s, c[2] - s], max: [c[0] + s, c[1] + s, c[2] + s] },
            _ => Shape::Cylinder { base_center: [c[0], c[1], c[2] - s], radius: s, height: 2.0 * s },
        }));
    }
    vec![
        Scene::new(ws, vec![Obstacle::new(sphere)]).unwrap(),
        Scene::new(ws, vec![Obstacle::new(boxed)]).unwrap(),
        Scene::new(ws, vec![Obstacle::new(cyl)]).unwrap(),
        Scene::new(ws, vec![Obstacle::new(sphere), Obstacle::new(boxed), Obstacle::new(cyl)]).unwrap(),
        Scene::new(ws, clutter).unwrap(),
    ]
}

fn esdf_fidelity() -> Verdict {
    let clock = Instant::now();
    let res = 0.02;
    let bound = res * 3f64.sqrt() / 2.0 + 1e-9;
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut worst: f64 = 0.0;
    let mut points = 0;
    let scenes = esdf_scenes();
    for scene in &scenes {
        let field = build_field(scene, res).unwrap();
        for _ in 0..2000 {
            let w = &scene.workspace;
            let p = Vector3::from_fn(|i, _| rng.random_range(w.min[i]..w.max[i]));
            worst = worst.max((field.query(&p) - oracle_distance(scene, &p)).abs());
            points += 1;
        }
    }
    let t = clock.elapsed();
    verdict(
        worst <= bound && t < Duration::from_secs(30),
        format!(
            "{points} points over {} scenes, max error {worst:.5} (bound {bound:.5}), {:.1}s (limit 30s)",
            scenes.len(),
            secs(t)
        ),
    )
}

// ---------- criterion 3 ----------

/// Chain-multiplication forward kinematics, written out from the link data.
fn oracle_fk(chain: &KinematicChain, q: &[f64]) -> Isometry3<f64> {
    let mut t = chain.base_mount().to_isometry();
    for (link, &angle) in chain.links().iter().zip(q) {
        t *= Isometry3::from_parts(
            Translation3::identity(),
            UnitQuaternion::from_axis_angle(&link.axis, angle),
        );
        t *= link.offset.to_isometry();
    }
    t
}

fn ik_soundness() -> Verdict {
    let clock = Instant::now();
    let chain = KinematicChain::reference_arm();
    let mut rng = ChaCha8Rng::seed_from_u64(500);
    let random_q = |rng: &mut ChaCha8Rng| {
        JointVector(chain.links().iter().map(|l| rng.random_range(l.limits.lo..l.limits.hi)).collect())
    };
    let (mut converged, mut bad_round_trips) = (0, 0);
    let n = 500;
    for _ in 0..n {
        let q_true = random_q(&mut rng);
        let seed = random_q(&mut rng);
        let target = oracle_fk(&chain, &q_true.0);
        let target_pose = wholebody::geometry::Pose3::from_isometry(&target);
        let r = solve_ik(&chain, &target_pose, &seed, 100).unwrap();
        if r.converged() {
            converged += 1;
            let got = oracle_fk(&chain, &r.joints.0);
            let dp = (got.translation.vector - target.translation.vector).norm();
            let dr = got.rotation.angle_to(&target.rotation);
            if dp > IK_TOL_POS || dr > IK_TOL_ROT {
                bad_round_trips += 1;
            }
        }
    }
    let rate = converged as f64 / n as f64;
    let t = clock.elapsed();
    verdict(
        rate >= 0.95 && bad_round_trips == 0 && t < Duration::from_secs(30),
        format!(
            "{converged}/{n} converged ({:.1}%, need 95%), {bad_round_trips} round-trip violations, {:.1}s (limit 30s)",
            100.0 * rate,
            secs(t)
        ),
    )
}

// ---------- criterion 4 ----------

fn optimizer_sanity() -> Verdict {
    let clock = Instant::now();
    let rastrigin = |x: &[f64]| 20.0 + x.iter().map(|v| v * v - 10.0 * (2.0 * PI * v).cos()).sum::<f64>();
    let space = SearchSpace::new(vec![-5.12; 2], vec![5.12; 2]).unwrap();
    let mut solved = 0;
    let mut worst_f: f64 = 0.0;
    for seed in 0..10 {
        let cfg = AnnealConfig { max_evals: 4000, rng_seed: seed, ..AnnealConfig::default() };
        let r = minimize(rastrigin, &space, &cfg).unwrap();
        worst_f = worst_f.max(r.f_best);
        if r.f_best <= 1e-4 && r.evals_used <= 4000 {
            solved += 1;
        }
    }

    // polynomials with hand-derived gradients
    type Poly = (usize, fn(&[f64]) -> f64, fn(&[f64]) -> Vec<f64>);
    let polys: [Poly; 4] = [
        (2, |x| x[0].powi(3) - 2.0 * x[0] * x[1] + x[1].powi(2), |x| vec![3.0 * x[0].powi(2) - 2.0 * x[1], -2.0 * x[0] + 2.0 * x[1]]),
        (
            3,
            |x| x[0].powi(4) + x[0] * x[1] * x[2] - 3.0 * x[2].powi(2) + 5.0,
            |x| vec![4.0 * x[0].powi(3) + x[1] * x[2], x[0] * x[2], x[0] * x[1] - 6.0 * x[2]],
        ),
        (2, |x| x.iter().map(|v| v * v).sum::<f64>(), |x| x.iter().map(|v| 2.0 * v).collect()),
        (3, |x| x.iter().map(|v| v * v).sum::<f64>(), |x| x.iter().map(|v| 2.0 * v).collect()),
    ];
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut worst_rel: f64 = 0.0;
    for (dim, f, g) in polys {
        let space = SearchSpace::new(vec![-3.0; dim], vec![3.0; dim]).unwrap();
        for _ in 0..50 {
            let x: Vec<f64> = (0..dim).map(|_| rng.random_range(-2.5..2.5)).collect();
            let mut fm = f;
            let fd = fd_gradient(&mut fm, &x, &space);
            let exact = g(&x);
            let scale = exact.iter().map(|v| v.abs()).fold(1.0, f64::max);
            for (a, b) in fd.iter().zip(&exact) {
                worst_rel = worst_rel.max((a - b).abs() / scale);
            }
        }
    }
    let t = clock.elapsed();
    verdict(
        solved == 10 && worst_rel <= 1e-5 && t < Duration::from_secs(60),
        format!(
            "Rastrigin {solved}/10 seeds at f <= 1e-4 (worst {worst_f:.1e}), FD gradient max rel error {worst_rel:.1e} (tol 1e-5), {:.1}s (limit 60s)",
            secs(t)
        ),
    )
}

// ---------- criteria 5 to 7 ----------

struct Suite {
    scenarios: Vec<Scenario>,
    certified: usize,
    bilevel: SuiteTable,
    bilevel_time: Duration,
}

fn build_suite() -> Suite {
    let mut scenarios = Vec::new();
    for f in Family::ALL {
        scenarios.extend(generate_scenarios(f, PER_FAMILY, SUITE_SEED).unwrap());
    }
    let certified = scenarios
        .iter()
        .filter(|s| {
            let p = Prepared::new((*s).clone()).unwrap();
            check_certificate(&p).unwrap().is_some_and(|c| c.passed())
        })
        .count();
    let clock = Instant::now();
    let bilevel = run_suite(&scenarios, &[Variant::bilevel()], &suite_config()).unwrap();
    Suite { scenarios, certified, bilevel, bilevel_time: clock.elapsed() }
}

fn suite_config() -> PlannerConfig {
    PlannerConfig { seed: SUITE_SEED, ..PlannerConfig::default() }
}

fn planner_contracts(suite: &Suite) -> Verdict {
    let clock = Instant::now();
    let cfg = suite_config();
    let (mut converged, mut pin_fail, mut worse, mut runs, mut negative, mut inconsistent) = (0, 0, 0, 0, 0, 0);
    for (sc, cell) in suite.scenarios.iter().zip(&suite.bilevel.cells) {
        let prepared = Prepared::new(sc.clone()).unwrap();
        let ctx = prepared.ctx();
        let mut state = sc.start_state.clone();
        for (wp, r) in sc.waypoints.iter().zip(&cell.segments) {
            let start = state.clone();
            state = r.trajectory.last().clone();
            if !r.attempted {
                continue;
            }
            runs += 1;
            let (q0, q1) = lift_waypoint(wp).unwrap();
            // objective of the interpolation initialization, recomputed here
            let init = init_targets(&start, &q0, &q1, wp.gripper_next, &ctx, &cfg).unwrap();
            let init_total = evaluate_targets(&init, &start.joints, &ctx).unwrap().report.total;
            if r.report.total > init_total {
                worse += 1;
            }
            let again = evaluate_targets(&r.targets, &start.joints, &ctx).unwrap();
            if again.report.total != r.report.total || again.trajectory != r.trajectory {
                inconsistent += 1;
            }
            if !r.converged {
                continue;
            }
            converged += 1;
            let ee = |s: &WholeBodyState| {
                let local = oracle_fk(&sc.chain, &s.joints.0);
                gamma_to_world(&s.base, &wholebody::geometry::Pose3::from_isometry(&local)).unwrap()
            };
            let e0 = (ee(r.trajectory.first()).position() - q0.position()).norm();
            let e1 = (ee(r.trajectory.last()).position() - q1.position()).norm();
            if e0 > cfg.mu_s || e1 > cfg.mu_s {
                pin_fail += 1;
            }
            let clearance = r
                .trajectory
                .states()
                .iter()
                .flat_map(|s| materialize_points(&prepared.qps, s, &sc.chain))
                .map(|p| prepared.field.query(&p))
                .fold(f64::INFINITY, f64::min);
            if clearance < 0.0 {
                negative += 1;
            }
        }
    }
    let t = suite.bilevel_time + clock.elapsed();
    let n = suite.scenarios.len();
    verdict(
        suite.certified == n
            && pin_fail == 0
            && worse == 0
            && negative == 0
            && inconsistent == 0
            && t < Duration::from_secs(600),
        format!(
            "{}/{n} certified; {converged}/{runs} segments converged; pinning violations {pin_fail}; worse than init {worse}/{runs}; negative clearance {negative}; report mismatches {inconsistent}; {:.1}s (limit 600s)",
            suite.certified,
            secs(t)
        ),
    )
}

fn success_rate(table: &SuiteTable, family: Option<&str>, variant: &str) -> f64 {
    let rows: Vec<_> = table
        .rows()
        .filter(|m| m.variant == variant && family.is_none_or(|f| m.family == f))
        .collect();
    rows.iter().filter(|m| m.success).count() as f64 / rows.len() as f64
}

fn mean_latency(table: &SuiteTable, variant: &str) -> f64 {
    let rows: Vec<_> = table.rows().filter(|m| m.variant == variant).collect();
    rows.iter().map(|m| m.latency_ms).sum::<f64>() / rows.len() as f64
}

fn ablation_trends(suite: &Suite) -> Verdict {
    let clock = Instant::now();
    let cfg = suite_config();
    let direct = run_suite(&suite.scenarios, &[Variant::direct()], &cfg).unwrap();
    let oor: Vec<Scenario> =
        suite.scenarios.iter().filter(|s| s.family == Some(Family::OutOfReach)).cloned().collect();
    let removals = [Variant::without(0), Variant::without(1), Variant::without(2)];
    let ablated = run_suite(&oor, &removals, &cfg).unwrap();

    let (lat_b, lat_d) = (mean_latency(&suite.bilevel, "bilevel"), mean_latency(&direct, "direct"));
    let (sr_b, sr_d) = (success_rate(&suite.bilevel, None, "bilevel"), success_rate(&direct, None, "direct"));
    let part_a = lat_b <= lat_d && sr_b >= sr_d - 0.02;

    let base = success_rate(&suite.bilevel, Some("out_of_reach"), "bilevel");
    let drops: Vec<f64> = removals
        .iter()
        .map(|v| base - success_rate(&ablated, Some("out_of_reach"), &v.name))
        .collect();
    let part_b = drops[0] > 0.0 && drops[0] >= drops[1] && drops[0] >= drops[2];
    let t = suite.bilevel_time + clock.elapsed();
    verdict(
        part_a && part_b && t < Duration::from_secs(1800),
        format!(
            "(a) latency bilevel {lat_b:.1} ms vs direct {lat_d:.1} ms, SR bilevel {:.1}% vs direct {:.1}%; (b) out_of_reach SR {:.1}%, drop no_reach {:.1} pp, no_smooth {:.1} pp, no_collide {:.1} pp; {:.1}s (limit 1800s)",
            100.0 * sr_b,
            100.0 * sr_d,
            100.0 * base,
            100.0 * drops[0],
            100.0 * drops[1],
            100.0 * drops[2],
            secs(t)
        ),
    )
}

fn determinism(suite: &Suite) -> Verdict {
    let again = run_suite(&suite.scenarios, &[Variant::bilevel()], &suite_config()).unwrap();
    let csv = |t: &SuiteTable| metrics_csv(&t.rows().collect::<Vec<_>>()).unwrap();
    let (a, b) = (strip_latency(&csv(&suite.bilevel)), strip_latency(&csv(&again)));
    let differing = a.lines().zip(b.lines()).filter(|(x, y)| x != y).count();
    verdict(
        a == b,
        format!("{} metrics rows, {differing} differing rows, {} bytes compared", a.lines().count() - 1, a.len()),
    )
}

fn main() -> ExitCode {
    let mut lines: Vec<(usize, &str, Verdict)> = Vec::new();
    let mut report = |n: usize, name: &'static str, v: Verdict| {
        println!("criterion {n} {}: {name}: {}", if v.pass { "PASS" } else { "FAIL" }, v.detail);
        lines.push((n, name, v));
    };
    report(1, "cost-stack exactness", cost_stack());
    report(2, "ESDF fidelity", esdf_fidelity());
    report(3, "IK soundness", ik_soundness());
    report(4, "optimizer sanity", optimizer_sanity());
    let suite = build_suite();
    report(5, "planner contracts on the generated suite", planner_contracts(&suite));
    report(6, "ablation trends", ablation_trends(&suite));
    report(7, "suite determinism", determinism(&suite));
    let failed: Vec<usize> = lines.iter().filter(|l| !l.2.pass).map(|l| l.0).collect();
    if failed.is_empty() {
        println!("acceptance: all {} criteria pass", lines.len());
        ExitCode::SUCCESS
    } else {
        println!("acceptance: failing criteria {failed:?}");
        ExitCode::FAILURE
    }
}
