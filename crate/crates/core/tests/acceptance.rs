//! Acceptance suite: one test per criterion, each printing a single
//! PASS/FAIL line (visible with `--nocapture`; embedded in the panic message
//! on failure). Expensive fixtures (value iteration at n = 2048, attractor
//! bitmaps up to 2048^2) are shared through OnceLocks.

use birkhoff_lab::attractor::{
    check_graph_in_attractor, compute_c0_escape, compute_c0_subdivision, compute_c1,
    directed_hausdorff_cells, hausdorff_cells, AnnulusBitmap, BitmapGeom,
};
use birkhoff_lab::cli::{run, ExperimentConfig, Verdict};
use birkhoff_lab::counterexamples::{
    q1_bump_spec, q1_violation_witness, q2_inclusion_breaker, q3_verify, vertical_crossings,
    Q3Spec,
};
use birkhoff_lab::curve::PolylineCurve;
use birkhoff_lab::flow::{
    energy_dissipation_audit, integrate, shoot_heteroclinic, time_map, AnnulusMap, Direction,
    FlowConfig, FlowError, Side, TimeMap,
};
use birkhoff_lab::gammagap::{gamma_gap, separatrix_area_quadrature, shoelace_signed};
use birkhoff_lab::models::{build_perturbed, HamiltonianModel, PhasePoint};
use birkhoff_lab::weakkam::{
    one_sided_derivatives, solve_discounted_fd, solve_discounted_lo, vanishing_discount_driver,
    FdConfig, GridFunction, LoConfig, LoOperator, SolveReport,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::sync::OnceLock;
use std::time::{Duration, Instant};

const ALPHA: f64 = 0.5;

fn report(n: u32, name: &str, pass: bool, details: &str) {
    let line = format!(
        "criterion {n} ({name}): {} - {details}",
        if pass { "PASS" } else { "FAIL" }
    );
    println!("{line}");
    assert!(pass, "{line}");
}

// ---------------------------------------------------------------------------
// Shared fixtures
// ---------------------------------------------------------------------------

struct AppSolves {
    u_lo: GridFunction,
    rep_lo: SolveReport,
    u_fd: GridFunction,
    rep_fd: SolveReport,
    elapsed: Duration,
}

/// Appendix pendulum, alpha = 0.5, n = 2048, both solvers (criteria 4, 5).
fn app_solves() -> &'static AppSolves {
    static CELL: OnceLock<AppSolves> = OnceLock::new();
    CELL.get_or_init(|| {
        let m = HamiltonianModel::appendix_pendulum(ALPHA);
        let t0 = Instant::now();
        let lo = LoConfig {
            n: 2048,
            ..LoConfig::default()
        };
        let (u_lo, rep_lo) = solve_discounted_lo(&m, ALPHA, &lo).unwrap();
        let fd = FdConfig {
            n: 2048,
            ..FdConfig::default()
        };
        let (u_fd, rep_fd) = solve_discounted_fd(&m, ALPHA, &fd).unwrap();
        AppSolves {
            u_lo,
            rep_lo,
            u_fd,
            rep_fd,
            elapsed: t0.elapsed(),
        }
    })
}

struct PendFixture {
    u: GridFunction,
    c1: AnnulusBitmap,
    branch: AnnulusBitmap,
    elapsed: Duration,
}

/// Classic pendulum, alpha = 0.5: LO solution at n = 2048 and the Birkhoff
/// attractor on the 2048^2 grid (criteria 6, 7).
fn pend_fixture() -> &'static PendFixture {
    static CELL: OnceLock<PendFixture> = OnceLock::new();
    CELL.get_or_init(|| {
        let m = HamiltonianModel::pendulum(ALPHA);
        let t0 = Instant::now();
        let lo = LoConfig {
            n: 2048,
            ..LoConfig::default()
        };
        let (u, _) = solve_discounted_lo(&m, ALPHA, &lo).unwrap();
        let tau = std::f64::consts::TAU;
        let geom = BitmapGeom::new(2048, 2048, tau, -3.0, 3.0);
        let map = time_map(&m, 3.0);
        let c0 = compute_c0_subdivision(&map, geom, 1).unwrap();
        let c1 = compute_c1(&c0, 2).unwrap();
        let right = shoot_heteroclinic(&m, Side::Right, 1e-7, 1e-4).unwrap();
        let left = shoot_heteroclinic(&m, Side::Left, 1e-7, 1e-4).unwrap();
        let mut branch = AnnulusBitmap::rasterize_curve(geom, &right.points);
        branch = branch.union(&AnnulusBitmap::rasterize_curve(geom, &left.points));
        for (q, p) in [(std::f64::consts::PI, 0.0), (0.0, 0.0)] {
            if let Some((i, j)) = geom.cell_of(q, p) {
                branch.set(i, j, true);
            }
        }
        PendFixture {
            u,
            c1: c1.bitmap,
            branch,
            elapsed: t0.elapsed(),
        }
    })
}

struct AppCex {
    u: GridFunction,
    residual: f64,
    c1: AnnulusBitmap,
    branch_r: PolylineCurve,
    branch_l: PolylineCurve,
}

/// Appendix pendulum counterexample scaffolding: LO solution at n = 1024,
/// the 512^2 attractor under the time-0.5 map, and the shot heteroclinic
/// branches (criteria 11, 12).
fn app_cex() -> &'static AppCex {
    static CELL: OnceLock<AppCex> = OnceLock::new();
    CELL.get_or_init(|| {
        let m = HamiltonianModel::appendix_pendulum(ALPHA);
        let branch_r = shoot_heteroclinic(&m, Side::Right, 1e-7, 1e-4).unwrap();
        let branch_l = shoot_heteroclinic(&m, Side::Left, 1e-7, 1e-4).unwrap();
        let lo = LoConfig {
            n: 1024,
            ..LoConfig::default()
        };
        let (u, rep) = solve_discounted_lo(&m, ALPHA, &lo).unwrap();
        let geom = BitmapGeom::new(512, 512, 1.0, -3.0, 3.0);
        let map = TimeMap::new(&m, 0.5, 0.005);
        let c0 = compute_c0_subdivision(&map, geom, 1).unwrap();
        let c1 = compute_c1(&c0, 2).unwrap();
        AppCex {
            u,
            residual: rep.residual,
            c1: c1.bitmap,
            branch_r,
            branch_l,
        }
    })
}

// ---------------------------------------------------------------------------
// Criteria
// ---------------------------------------------------------------------------

#[test]
fn criterion_01_separatrix_area() {
    let t0 = Instant::now();
    let quad = separatrix_area_quadrature(4096);
    let m = HamiltonianModel::pendulum(0.0);
    let arc = shoot_heteroclinic(&m, Side::Right, 1e-7, 1e-3).unwrap();
    let shoelace = shoelace_signed(&arc.points).abs();
    let elapsed = t0.elapsed();
    let pass = (quad - 8.0).abs() <= 1e-6
        && (shoelace - 8.0).abs() <= 1e-2
        && elapsed < Duration::from_secs(5);
    report(
        1,
        "separatrix area",
        pass,
        &format!("quadrature {quad:.9}, shoelace {shoelace:.4}, in {elapsed:.1?}"),
    );
}

#[test]
fn criterion_02_dissipation_identity() {
    let t0 = Instant::now();
    let m = HamiltonianModel::pendulum(ALPHA);
    let cfg = FlowConfig::new(1e-3, 20.0);
    let traj = integrate(&m, PhasePoint::new(2.0, 0.0), &cfg, Direction::Forward).unwrap();
    let audit = energy_dissipation_audit(&traj);
    let elapsed = t0.elapsed();
    let pass = audit <= 1e-6 && elapsed < Duration::from_secs(2);
    report(
        2,
        "energy dissipation identity",
        pass,
        &format!("audit residual {audit:.2e}, in {elapsed:.1?}"),
    );
}

#[test]
fn criterion_03_lax_oleinik_contraction() {
    let t0 = Instant::now();
    let tau = 0.05;
    let n = 256;
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut violations = 0usize;
    let mut worst: f64 = 0.0;
    for &alpha in &[0.1, 0.5, 1.0] {
        let m = HamiltonianModel::pendulum(alpha);
        let op = LoOperator::build(&m, alpha, n, tau, 6.0).unwrap();
        for _ in 0..100 {
            let mk = |rng: &mut ChaCha8Rng| {
                GridFunction::from_values(
                    m.period(),
                    (0..n).map(|_| rng.gen_range(-2.0..2.0)).collect(),
                )
            };
            let u1 = mk(&mut rng);
            let u2 = mk(&mut rng);
            let lhs = op.apply(&u1, 1).sup_dist(&op.apply(&u2, 1));
            let rhs = (-alpha * tau).exp() * u1.sup_dist(&u2);
            worst = worst.max(lhs - rhs);
            if lhs > rhs + 1e-12 {
                violations += 1;
            }
        }
    }
    let elapsed = t0.elapsed();
    let pass = violations == 0 && elapsed < Duration::from_secs(30);
    report(
        3,
        "Lax-Oleinik contraction",
        pass,
        &format!("300 pairs, {violations} violations, worst excess {worst:.2e}, in {elapsed:.1?}"),
    );
}

#[test]
fn criterion_04_solver_cross_validation() {
    let s = app_solves();
    let n = 2048.0f64;
    let diff = s.u_lo.sup_dist(&s.u_fd);
    let diff_bound = 10.0 / n.sqrt();
    let res_bound = 5.0 / n.sqrt();
    let pass = diff <= diff_bound
        && s.rep_lo.residual <= res_bound
        && s.rep_fd.residual <= res_bound
        && s.elapsed < Duration::from_secs(120);
    report(
        4,
        "LO/FD cross-validation",
        pass,
        &format!(
            "sup|u_lo-u_fd| {diff:.2e} (<= {diff_bound:.2e}), residuals {:.2e}/{:.2e} (<= {res_bound:.2e}), in {:.1?}",
            s.rep_lo.residual, s.rep_fd.residual, s.elapsed
        ),
    );
}

#[test]
fn criterion_05_kink_structure() {
    let s = app_solves();
    let u = &s.u_lo;
    let h = u.h();
    let kinks = &s.rep_lo.kink_indices;
    let one_kink = kinks.len() == 1;
    let (mut at_half, mut ordered, mut slopes_match) = (false, false, false);
    let mut detail = String::new();
    if one_kink {
        let ki = kinks[0];
        let x = u.x(ki);
        at_half = (x - 0.5).abs() <= 2.0 * h;
        let (dm, dp) = one_sided_derivatives(u, ki);
        ordered = dm > dp;
        // Reference branch values f+-(1/2) from the shot heteroclinic.
        let cex = app_cex();
        let f_plus = vertical_crossings(&cex.branch_r, 0.5)
            .into_iter()
            .filter(|p| *p > 0.0)
            .fold(f64::MIN, f64::max);
        // Tolerance: 5 cells' slope scale, i.e. 5 h Lip(u') with the
        // derivative's Lipschitz constant estimated away from the kink.
        let mut lip: f64 = 0.0;
        for i in 0..u.n {
            let d = (i as isize - ki as isize).rem_euclid(u.n as isize);
            if d.min(u.n as isize - d) <= 3 {
                continue;
            }
            let a = u.d_central(i);
            let b = u.d_central((i + 1) % u.n);
            lip = lip.max((b - a).abs() / h);
        }
        let tol = 5.0 * h * lip;
        slopes_match = (dm - f_plus).abs() <= tol && (dp + f_plus).abs() <= tol;
        detail = format!(
            "kink at x={x:.6}, u'-={dm:.4}, u'+={dp:.4}, f+(1/2)={f_plus:.4}, slope tol {tol:.4}"
        );
    }
    let pass = one_kink && at_half && ordered && slopes_match;
    report(
        5,
        "kink structure",
        pass,
        &format!("{} kink(s); {detail}", kinks.len()),
    );
}

#[test]
fn criterion_06_inclusion_check_2048() {
    let f = pend_fixture();
    let (verdict, max_offset) = check_graph_in_attractor(&f.u, &f.c1, 3.0).unwrap();
    let pass = verdict && max_offset <= 3.0 && f.elapsed < Duration::from_secs(600);
    report(
        6,
        "Theorem 1.4 inclusion at 2048^2",
        pass,
        &format!(
            "verdict {verdict}, max offset {max_offset:.2} cells, fixture in {:.1?}",
            f.elapsed
        ),
    );
}

/// Closure-backed linear test map (q, p) -> (q, p/2).
struct LinearContraction;
impl AnnulusMap for LinearContraction {
    fn apply(&self, q: f64, p: f64) -> Result<(f64, f64), FlowError> {
        Ok((q, p / 2.0))
    }
    fn apply_inverse(&self, q: f64, p: f64) -> Result<(f64, f64), FlowError> {
        Ok((q, p * 2.0))
    }
    fn period(&self) -> f64 {
        1.0
    }
}

#[test]
fn criterion_07_attractor_oracles() {
    // Exact oracle: odd n_p so p = 0 is a cell-row center.
    let geom = BitmapGeom::new(64, 255, 1.0, -3.0, 3.0);
    let c0 = compute_c0_escape(&LinearContraction, geom, 60, 1).unwrap();
    let mut row = AnnulusBitmap::empty(geom);
    for i in 0..64 {
        row.set(i, 127, true);
    }
    let c1 = compute_c1(&c0, 1).unwrap();
    let exact = c0 == row && hausdorff_cells(&c1.bitmap, &row).unwrap() == 0.0;
    // Pendulum C1 vs heteroclinic union + equilibria at 2048^2.
    let f = pend_fixture();
    let d1 = directed_hausdorff_cells(&f.c1, &f.branch).unwrap();
    let d2 = directed_hausdorff_cells(&f.branch, &f.c1).unwrap();
    let pass = exact && d1.max(d2) <= 3.0;
    report(
        7,
        "attractor oracles",
        pass,
        &format!("linear-contraction exact {exact}, pendulum Hausdorff {d1:.2}/{d2:.2} cells"),
    );
}

#[test]
fn criterion_08_prop_6_9_scaling() {
    let mut pass = true;
    let mut details = Vec::new();
    for &beta in &[0.01, 0.002] {
        let rep = gamma_gap(0.1, beta).unwrap();
        let bound8 = 8.0 * (1.0 - beta / 0.1);
        let hard = rep.area_energy >= rep.bound4;
        let near = (rep.area_energy - bound8).abs() <= 0.15 * bound8;
        let agree = (rep.area_energy - rep.area_shoelace).abs()
            <= 0.02 * rep.area_energy.abs().max(rep.area_shoelace.abs());
        pass &= hard && near && agree;
        details.push(format!(
            "beta={beta}: area {:.4} (>= {:.4}, 8-bound {bound8:.4}), shoelace {:.4}",
            rep.area_energy, rep.bound4, rep.area_shoelace
        ));
    }
    report(8, "Prop 6.9 scaling", pass, &details.join("; "));
}

#[test]
fn criterion_09_non_convergence_evidence() {
    let mut pass = true;
    let mut details = Vec::new();
    for &alpha in &[0.4, 0.2, 0.1] {
        let rep = gamma_gap(alpha, 0.1 * alpha).unwrap();
        pass &= rep.area_energy > 3.6;
        details.push(format!("alpha={alpha}: area {:.4}", rep.area_energy));
    }
    report(9, "Theorem 1.5 non-convergence", pass, &details.join("; "));
}

#[test]
fn criterion_10_dfiz_trend() {
    let m = HamiltonianModel::appendix_pendulum(ALPHA);
    let alphas = [0.8, 0.4, 0.2, 0.1, 0.05];
    let lo = LoConfig {
        n: 2048,
        ..LoConfig::default()
    };
    let (_, gaps) = vanishing_discount_driver(&m, &alphas, &lo).unwrap();
    let dec = gaps.windows(2).all(|w| w[1] < w[0]);
    report(
        10,
        "DFIZ trend",
        dec,
        &format!("sup-gaps {gaps:?} strictly decreasing: {dec}"),
    );
}

#[test]
fn criterion_11_q1_violation() {
    let cex = app_cex();
    let m = HamiltonianModel::appendix_pendulum(ALPHA);
    let tol = 3.0 * cex.residual;
    let branches = [&cex.branch_r, &cex.branch_l];
    // Height-5 bump must certify the violation with margin >= height - 1.
    let bump5 = q1_bump_spec(&branches, 5.0).unwrap();
    let h1 = build_perturbed(&m, bump5).unwrap();
    let r5 = q1_violation_witness(&cex.u, &h1, &cex.c1, tol).unwrap();
    // Zero-height control must not.
    let bump0 = q1_bump_spec(&branches, 0.0).unwrap();
    let h0 = build_perturbed(&m, bump0).unwrap();
    let r0 = q1_violation_witness(&cex.u, &h0, &cex.c1, tol).unwrap();
    let pass = r5.violated && r5.value >= 4.0 && !r0.violated;
    report(
        11,
        "Appendix Q1 violation witness",
        pass,
        &format!(
            "height 5: value {:.4} violated {}; height 0: value {:.4} violated {} (tol {tol:.2e})",
            r5.value, r5.violated, r0.value, r0.violated
        ),
    );
}

#[test]
fn criterion_12_q2_broken_inclusion() {
    let cex = app_cex();
    let m = HamiltonianModel::appendix_pendulum(ALPHA);
    let bump = q1_bump_spec(&[&cex.branch_r, &cex.branch_l], 5.0).unwrap();
    let h1 = build_perturbed(&m, bump).unwrap();
    let mut fd = FdConfig {
        n: 1024,
        ..FdConfig::default()
    };
    fd.sigma = h1.dp_bound(fd.p_bound).ceil();
    fd.tol = 1e-3;
    fd.max_sweeps = 6_000_000;
    let rep = q2_inclusion_breaker(&h1, &cex.c1, &fd, 2, 3.0, 0.5, 0.005, 1).unwrap();
    let pass = !rep.verdict && rep.max_offset_cells > 10.0 && rep.bitmap_hausdorff <= 1.0;
    report(
        12,
        "Appendix Q2 broken inclusion",
        pass,
        &format!(
            "verdict {}, max offset {:.2} cells (> 10), bitmap Hausdorff {:.2} (<= 1)",
            rep.verdict, rep.max_offset_cells, rep.bitmap_hausdorff
        ),
    );
}

#[test]
fn criterion_13_q3_dichotomy() {
    let spec = Q3Spec::default();
    let model = birkhoff_lab::counterexamples::q3_build(&spec, ALPHA).unwrap();
    let geom = BitmapGeom::new(256, 256, 1.0, -1.45, 1.45);
    let rep = q3_verify(&model, &spec, geom, 2, 0.75, 0.01, 1).unwrap();
    let pass = rep.cond1_min_margin > 0.0
        && rep.cond2_min_margin > 0.0
        && rep.lyap_residual <= 1e-9
        && rep.fiberwise_convex
        && rep.branch_invariance_residual <= 1e-3
        && rep.closure_complement_connected
        && !rep.c1_complement_connected;
    report(
        13,
        "Appendix Q3 dichotomy",
        pass,
        &format!(
            "cond1 {:.3}, cond2 {:.3}, lyap {:.1e}, convex {}, invariance {:.1e}, closure connected {}, C1 connected {}",
            rep.cond1_min_margin,
            rep.cond2_min_margin,
            rep.lyap_residual,
            rep.fiberwise_convex,
            rep.branch_invariance_residual,
            rep.closure_complement_connected,
            rep.c1_complement_connected
        ),
    );
}

#[test]
fn criterion_14_varying_contraction_driver() {
    let dir = std::env::temp_dir().join("birkhoff_lab_acceptance_c14");
    std::fs::create_dir_all(&dir).unwrap();
    let mut cfg = ExperimentConfig {
        experiment: "property-suite".into(),
        ..ExperimentConfig::default()
    };
    cfg.out_dir = dir.to_str().unwrap().to_string();
    cfg.seed = 42;
    cfg.property.n_affine = 1000;
    cfg.property.n_contraction_pairs = 5;
    let verdict = run(&cfg).unwrap();
    let rep: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.join("report.json")).unwrap()).unwrap();
    let max_err = rep["affine_max_error"].as_f64().unwrap();
    let pass = verdict == Verdict::Pass && max_err <= 1e-6;
    report(
        14,
        "varying-contraction driver",
        pass,
        &format!("1000 sequences, max fixed-point error {max_err:.2e}"),
    );
}
