//! Config-driven experiment runner: parses a TOML experiment file, runs one
//! named experiment, and writes deterministic CSV/JSON/SVG/PBM artifacts plus
//! a manifest echoing the fully resolved configuration.
//!
//! Exit codes (mapped in the binary): 0 pass, 1 check failed, 2 config
//! error, 3 numerical failure.

use crate::attractor::{
    check_graph_in_attractor_offsets, compute_c0_subdivision, compute_c1, directed_hausdorff_cells,
    AnnulusBitmap, BitmapGeom,
};
use crate::counterexamples::{
    q1_bump_spec, q1_violation_witness, q2_inclusion_breaker, q3_build, q3_verify, Q3Spec,
};
use crate::flow::{shoot_heteroclinic, Side, TimeMap};
use crate::models::{build_perturbed, HamiltonianModel};
use crate::svg::SvgPlot;
use crate::util::fmt_f64;
use crate::weakkam::{
    iterate_varying_contractions, lax_oleinik_step, solve_discounted_fd, solve_discounted_lo,
    vanishing_discount_driver, FdConfig, GridFunction, LoConfig,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::path::{Path, PathBuf};

// ---------------------------------------------------------------------------
// Configuration
// ---------------------------------------------------------------------------

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    /// Invalid configuration; the message lists every offending key.
    #[error("config error: {0}")]
    Config(String),
    #[error("numerical failure: {0}")]
    Numerical(String),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

/// Outcome of a run that completed without errors.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Verdict {
    Pass,
    CheckFailed,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelSpec {
    /// "pendulum" | "appendix-pendulum" | "q3"
    pub kind: String,
    pub alpha: f64,
}

impl Default for ModelSpec {
    fn default() -> Self {
        Self {
            kind: "pendulum".into(),
            alpha: 0.5,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SolverSpec {
    pub n: usize,
    pub tau: f64,
    pub tol: f64,
    /// FD artificial viscosity; 0 = automatic (Lipschitz bound of dH/dp).
    pub sigma: f64,
    pub p_bound: f64,
    pub v_max: f64,
    pub max_iter: usize,
    pub max_sweeps: usize,
}

impl Default for SolverSpec {
    fn default() -> Self {
        Self {
            n: 2048,
            tau: 0.05,
            tol: 1e-6,
            sigma: 0.0,
            p_bound: 3.0,
            v_max: 6.0,
            max_iter: 100_000,
            max_sweeps: 2_000_000,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GridSpec {
    pub n_theta: usize,
    pub n_p: usize,
    pub p_min: f64,
    pub p_max: f64,
}

impl Default for GridSpec {
    fn default() -> Self {
        Self {
            n_theta: 512,
            n_p: 512,
            p_min: -3.0,
            p_max: 3.0,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MapSpec {
    /// Time of the stroboscopic map.
    pub t: f64,
    pub dt: f64,
}

impl Default for MapSpec {
    fn default() -> Self {
        Self { t: 3.0, dt: 0.005 }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GapSpec {
    pub alpha: f64,
    pub betas: Vec<f64>,
}

impl Default for GapSpec {
    fn default() -> Self {
        Self {
            alpha: 0.1,
            betas: vec![0.01, 0.002],
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LimitSpec {
    /// Strictly descending discount list.
    pub alphas: Vec<f64>,
}

impl Default for LimitSpec {
    fn default() -> Self {
        Self {
            alphas: vec![0.8, 0.4, 0.2, 0.1, 0.05],
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CexSpec {
    pub bump_height: f64,
    /// Adherence radius (cells) for the C1 hair filter.
    pub c1_radius: usize,
    /// Graph-inclusion tolerance in cells.
    pub tol_cells: f64,
}

impl Default for CexSpec {
    fn default() -> Self {
        Self {
            bump_height: 5.0,
            c1_radius: 2,
            tol_cells: 3.0,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PropertySpec {
    /// Number of random affine-contraction sequences in R^4.
    pub n_affine: usize,
    /// Number of random grid-function pairs for the contraction check.
    pub n_contraction_pairs: usize,
}

impl Default for PropertySpec {
    fn default() -> Self {
        Self {
            n_affine: 1000,
            n_contraction_pairs: 25,
        }
    }
}

/// Full experiment configuration. One file describes one experiment; every
/// run writes `manifest.json` echoing the resolved values actually used.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    /// One of: pendulum-attractor, solve-hj, inclusion-check, spiral-gap,
    /// limit-alpha, counterexample, property-suite.
    pub experiment: String,
    /// Sub-variant: "lo"|"fd" for solve-hj, "q1"|"q2"|"q3" for counterexample.
    pub variant: String,
    pub out_dir: String,
    pub seed: u64,
    pub workers: usize,
    pub model: ModelSpec,
    pub solver: SolverSpec,
    pub grid: GridSpec,
    pub map: MapSpec,
    pub gap: GapSpec,
    pub limit: LimitSpec,
    pub counterexample: CexSpec,
    pub property: PropertySpec,
    pub q3: Q3Spec,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            experiment: String::new(),
            variant: String::new(),
            out_dir: "out".into(),
            seed: 0,
            workers: 1,
            model: ModelSpec::default(),
            solver: SolverSpec::default(),
            grid: GridSpec::default(),
            map: MapSpec::default(),
            gap: GapSpec::default(),
            limit: LimitSpec::default(),
            counterexample: CexSpec::default(),
            property: PropertySpec::default(),
            q3: Q3Spec::default(),
        }
    }
}

/// Allowed keys per config table; used to report *all* unknown keys at once
/// (serde's deny_unknown_fields stops at the first).
fn allowed_keys(path: &str) -> Option<&'static [&'static str]> {
    Some(match path {
        "" => &[
            "experiment",
            "variant",
            "out_dir",
            "seed",
            "workers",
            "model",
            "solver",
            "grid",
            "map",
            "gap",
            "limit",
            "counterexample",
            "property",
            "q3",
        ],
        "model" => &["kind", "alpha"],
        "solver" => &[
            "n",
            "tau",
            "tol",
            "sigma",
            "p_bound",
            "v_max",
            "max_iter",
            "max_sweeps",
        ],
        "grid" => &["n_theta", "n_p", "p_min", "p_max"],
        "map" => &["t", "dt"],
        "gap" => &["alpha", "betas"],
        "limit" => &["alphas"],
        "counterexample" => &["bump_height", "c1_radius", "tol_cells"],
        "property" => &["n_affine", "n_contraction_pairs"],
        "q3" => &[
            "eps1",
            "eps2",
            "eps2_margin",
            "eps_strip",
            "m",
            "round_frac",
            "psi_w",
            "nx",
            "np",
            "p_max",
        ],
        _ => return None,
    })
}

fn collect_unknown(value: &toml::Value, path: &str, out: &mut Vec<String>) {
    let table = match value.as_table() {
        Some(t) => t,
        None => return,
    };
    match allowed_keys(path) {
        Some(allowed) => {
            for (k, v) in table {
                let full = if path.is_empty() {
                    k.clone()
                } else {
                    format!("{path}.{k}")
                };
                if !allowed.contains(&k.as_str()) {
                    out.push(full);
                } else {
                    collect_unknown(v, &full, out);
                }
            }
        }
        // A table where a scalar was expected: flag every key under it.
        None => {
            for k in table.keys() {
                out.push(format!("{path}.{k}"));
            }
        }
    }
}

/// Parse and validate a TOML experiment config. Unknown keys are rejected
/// with a single error listing every offending key.
pub fn parse_config(text: &str) -> Result<ExperimentConfig, CliError> {
    let value: toml::Value = text
        .parse()
        .map_err(|e| CliError::Config(format!("TOML parse failure: {e}")))?;
    let mut unknown = Vec::new();
    collect_unknown(&value, "", &mut unknown);
    if !unknown.is_empty() {
        unknown.sort();
        return Err(CliError::Config(format!(
            "unknown config keys: {}",
            unknown.join(", ")
        )));
    }
    let cfg: ExperimentConfig = value
        .try_into()
        .map_err(|e| CliError::Config(format!("config deserialization failure: {e}")))?;
    validate(&cfg)?;
    Ok(cfg)
}

const EXPERIMENTS: &[&str] = &[
    "pendulum-attractor",
    "solve-hj",
    "inclusion-check",
    "spiral-gap",
    "limit-alpha",
    "counterexample",
    "property-suite",
];

fn validate(cfg: &ExperimentConfig) -> Result<(), CliError> {
    let mut problems = Vec::new();
    if !EXPERIMENTS.contains(&cfg.experiment.as_str()) {
        problems.push(format!(
            "experiment: \"{}\" is not one of {}",
            cfg.experiment,
            EXPERIMENTS.join("|")
        ));
    }
    match cfg.experiment.as_str() {
        "solve-hj" => {
            if cfg.variant != "lo" && cfg.variant != "fd" {
                problems.push(format!("variant: \"{}\" must be lo|fd", cfg.variant));
            }
        }
        "counterexample" => {
            if !["q1", "q2", "q3"].contains(&cfg.variant.as_str()) {
                problems.push(format!("variant: \"{}\" must be q1|q2|q3", cfg.variant));
            }
        }
        _ => {}
    }
    if !["pendulum", "appendix-pendulum", "q3"].contains(&cfg.model.kind.as_str()) {
        problems.push(format!(
            "model.kind: \"{}\" must be pendulum|appendix-pendulum|q3",
            cfg.model.kind
        ));
    }
    if !(cfg.model.alpha > 0.0) {
        problems.push("model.alpha: must be > 0".into());
    }
    if cfg.grid.p_min >= cfg.grid.p_max {
        problems.push("grid.p_min: must be < grid.p_max".into());
    }
    if cfg.grid.n_theta < 64 || cfg.grid.n_p < 64 {
        problems.push("grid.n_theta/n_p: must be >= 64".into());
    }
    if cfg.workers == 0 {
        problems.push("workers: must be >= 1".into());
    }
    if problems.is_empty() {
        Ok(())
    } else {
        Err(CliError::Config(problems.join("; ")))
    }
}

fn build_model(cfg: &ExperimentConfig) -> Result<HamiltonianModel, CliError> {
    match cfg.model.kind.as_str() {
        "pendulum" => Ok(HamiltonianModel::pendulum(cfg.model.alpha)),
        "appendix-pendulum" => Ok(HamiltonianModel::appendix_pendulum(cfg.model.alpha)),
        "q3" => q3_build(&cfg.q3, cfg.model.alpha)
            .map_err(|e| CliError::Numerical(format!("q3 construction: {e}"))),
        other => Err(CliError::Config(format!("model.kind: \"{other}\""))),
    }
}

// ---------------------------------------------------------------------------
// Artifact helpers
// ---------------------------------------------------------------------------

fn write_text(dir: &Path, name: &str, text: &str) -> Result<(), CliError> {
    std::fs::write(dir.join(name), text)?;
    Ok(())
}

fn write_json<T: Serialize>(dir: &Path, name: &str, value: &T) -> Result<(), CliError> {
    let mut s = serde_json::to_string_pretty(value)
        .map_err(|e| CliError::Numerical(format!("json: {e}")))?;
    s.push('\n');
    write_text(dir, name, &s)
}

fn write_bytes(dir: &Path, name: &str, bytes: &[u8]) -> Result<(), CliError> {
    std::fs::write(dir.join(name), bytes)?;
    Ok(())
}

fn curve_svg(dir: &Path, name: &str, title: &str, series: &[&[(f64, f64)]]) -> Result<(), CliError> {
    let mut plot = SvgPlot::new(title, "theta", "p");
    for s in series {
        plot.polyline(s);
    }
    write_text(dir, name, &plot.render())
}

fn num(e: impl std::fmt::Display) -> CliError {
    CliError::Numerical(e.to_string())
}

// ---------------------------------------------------------------------------
// Experiments
// ---------------------------------------------------------------------------

/// Run the configured experiment, writing artifacts into `cfg.out_dir`.
pub fn run(cfg: &ExperimentConfig) -> Result<Verdict, CliError> {
    let dir = PathBuf::from(&cfg.out_dir);
    std::fs::create_dir_all(&dir)?;
    write_json(&dir, "manifest.json", cfg)?;
    match cfg.experiment.as_str() {
        "pendulum-attractor" => run_attractor(cfg, &dir),
        "solve-hj" => run_solve_hj(cfg, &dir),
        "inclusion-check" => run_inclusion(cfg, &dir),
        "spiral-gap" => run_spiral_gap(cfg, &dir),
        "limit-alpha" => run_limit_alpha(cfg, &dir),
        "counterexample" => match cfg.variant.as_str() {
            "q1" => run_q1(cfg, &dir),
            "q2" => run_q2(cfg, &dir),
            "q3" => run_q3(cfg, &dir),
            v => Err(CliError::Config(format!("variant: \"{v}\""))),
        },
        "property-suite" => run_property_suite(cfg, &dir),
        e => Err(CliError::Config(format!("experiment: \"{e}\""))),
    }
}

fn geom_of(cfg: &ExperimentConfig, model: &HamiltonianModel) -> BitmapGeom {
    BitmapGeom::new(
        cfg.grid.n_theta,
        cfg.grid.n_p,
        model.period(),
        cfg.grid.p_min,
        cfg.grid.p_max,
    )
}

#[derive(Serialize)]
struct AttractorReport {
    c0_cells: usize,
    c1_cells: usize,
    pocket_cells: usize,
    /// Directed Hausdorff (cells): C1 -> shot-branch raster, and back.
    c1_to_branch_cells: Option<f64>,
    branch_to_c1_cells: Option<f64>,
}

fn shoot_branches(
    model: &HamiltonianModel,
) -> Result<(Vec<(f64, f64)>, Vec<(f64, f64)>), CliError> {
    let r = shoot_heteroclinic(model, Side::Right, 1e-7, 1e-4).map_err(num)?;
    let l = shoot_heteroclinic(model, Side::Left, 1e-7, 1e-4).map_err(num)?;
    Ok((r.points, l.points))
}

fn run_attractor(cfg: &ExperimentConfig, dir: &Path) -> Result<Verdict, CliError> {
    let model = build_model(cfg)?;
    let geom = geom_of(cfg, &model);
    let map = TimeMap::new(&model, cfg.map.t, cfg.map.dt);
    let c0 = compute_c0_subdivision(&map, geom, cfg.workers).map_err(num)?;
    let c1 = compute_c1(&c0, cfg.counterexample.c1_radius).map_err(num)?;
    write_bytes(dir, "c0.pbm", &c0.to_pbm())?;
    write_bytes(dir, "c1.pbm", &c1.bitmap.to_pbm())?;
    write_text(dir, "c1.json", &c1.bitmap.sidecar_json())?;

    // For pendulum-type models, compare against the shot heteroclinics.
    let (mut to_b, mut from_b) = (None, None);
    if cfg.model.kind != "q3" {
        let (br, bl) = shoot_branches(&model)?;
        let mut branch_bm = AnnulusBitmap::rasterize_curve(geom, &br);
        branch_bm = branch_bm.union(&AnnulusBitmap::rasterize_curve(geom, &bl));
        to_b = Some(directed_hausdorff_cells(&c1.bitmap, &branch_bm).map_err(num)?);
        from_b = Some(directed_hausdorff_cells(&branch_bm, &c1.bitmap).map_err(num)?);
        let mut csv = String::from("theta,p\n");
        for &(q, p) in br.iter().chain(bl.iter()) {
            csv.push_str(&format!("{},{}\n", fmt_f64(q), fmt_f64(p)));
        }
        write_text(dir, "branches.csv", &csv)?;
        curve_svg(dir, "branches.svg", "heteroclinic branches", &[&br, &bl])?;
    }
    let report = AttractorReport {
        c0_cells: c0.count(),
        c1_cells: c1.bitmap.count(),
        pocket_cells: c1.pocket_cells,
        c1_to_branch_cells: to_b,
        branch_to_c1_cells: from_b,
    };
    write_json(dir, "report.json", &report)?;
    if report.c1_cells == 0 {
        return Err(CliError::Numerical("C1 attractor is empty".into()));
    }
    Ok(Verdict::Pass)
}

#[derive(Serialize)]
struct HjReport {
    method: String,
    n: usize,
    iterations: usize,
    residual: f64,
    residual_threshold: f64,
    kinks: Vec<f64>,
    pass: bool,
}

fn solve_with(
    cfg: &ExperimentConfig,
    model: &HamiltonianModel,
    method: &str,
) -> Result<(GridFunction, crate::weakkam::SolveReport), CliError> {
    match method {
        "lo" => {
            let lo = LoConfig {
                n: cfg.solver.n,
                tau: cfg.solver.tau,
                tol: cfg.solver.tol,
                v_max: cfg.solver.v_max,
                max_iter: cfg.solver.max_iter,
                workers: cfg.workers,
            };
            solve_discounted_lo(model, model.alpha, &lo).map_err(num)
        }
        "fd" => {
            let mut fd = FdConfig {
                n: cfg.solver.n,
                sigma: cfg.solver.sigma,
                tol: cfg.solver.tol,
                p_bound: cfg.solver.p_bound,
                max_sweeps: cfg.solver.max_sweeps,
                cascadic: true,
                workers: cfg.workers,
            };
            if fd.sigma == 0.0 {
                fd.sigma = model.dp_bound(fd.p_bound).ceil();
            }
            solve_discounted_fd(model, model.alpha, &fd).map_err(num)
        }
        other => Err(CliError::Config(format!("variant: \"{other}\""))),
    }
}

fn run_solve_hj(cfg: &ExperimentConfig, dir: &Path) -> Result<Verdict, CliError> {
    let model = build_model(cfg)?;
    let (u, rep) = solve_with(cfg, &model, &cfg.variant)?;
    write_text(dir, "u.csv", &u.to_csv())?;
    let pts: Vec<(f64, f64)> = (0..u.n).map(|i| (u.x(i), u.at(i as isize))).collect();
    let mut plot = SvgPlot::new("discounted weak KAM solution", "x", "u");
    plot.polyline(&pts);
    write_text(dir, "u.svg", &plot.render())?;
    let threshold = 5.0 / (cfg.solver.n as f64).sqrt();
    let report = HjReport {
        method: cfg.variant.clone(),
        n: cfg.solver.n,
        iterations: rep.iterations,
        residual: rep.residual,
        residual_threshold: threshold,
        kinks: rep.kinks.clone(),
        pass: rep.residual <= threshold,
    };
    write_json(dir, "report.json", &report)?;
    Ok(if report.pass {
        Verdict::Pass
    } else {
        Verdict::CheckFailed
    })
}

#[derive(Serialize)]
struct InclusionReport {
    verdict: bool,
    max_offset_cells: f64,
    tol_cells: f64,
    c1_cells: usize,
    solve_residual: f64,
}

fn run_inclusion(cfg: &ExperimentConfig, dir: &Path) -> Result<Verdict, CliError> {
    let model = build_model(cfg)?;
    let (u, rep) = solve_with(cfg, &model, "lo")?;
    let geom = geom_of(cfg, &model);
    let map = TimeMap::new(&model, cfg.map.t, cfg.map.dt);
    let c0 = compute_c0_subdivision(&map, geom, cfg.workers).map_err(num)?;
    let c1 = compute_c1(&c0, cfg.counterexample.c1_radius).map_err(num)?;
    write_bytes(dir, "c1.pbm", &c1.bitmap.to_pbm())?;
    write_text(dir, "u.csv", &u.to_csv())?;
    let (verdict, max_offset, offsets) =
        check_graph_in_attractor_offsets(&u, &c1.bitmap, cfg.counterexample.tol_cells)
            .map_err(num)?;
    let mut csv = String::from("x,offset_cells\n");
    for &(x, off) in &offsets {
        csv.push_str(&format!("{},{}\n", fmt_f64(x), fmt_f64(off)));
    }
    write_text(dir, "offsets.csv", &csv)?;
    let mut plot = SvgPlot::new("graph(du) offset to C1", "x", "offset (cells)");
    plot.polyline(&offsets);
    write_text(dir, "offsets.svg", &plot.render())?;
    let report = InclusionReport {
        verdict,
        max_offset_cells: max_offset,
        tol_cells: cfg.counterexample.tol_cells,
        c1_cells: c1.bitmap.count(),
        solve_residual: rep.residual,
    };
    write_json(dir, "report.json", &report)?;
    Ok(if verdict {
        Verdict::Pass
    } else {
        Verdict::CheckFailed
    })
}

#[derive(Serialize)]
struct GapRowCheck {
    beta: f64,
    area_energy: f64,
    area_shoelace: f64,
    bound4: f64,
    above_bound4: bool,
    oracle_agreement: bool,
}

fn run_spiral_gap(cfg: &ExperimentConfig, dir: &Path) -> Result<Verdict, CliError> {
    let alpha = cfg.gap.alpha;
    let mut csv = String::from(crate::gammagap::GapReport::csv_header());
    csv.push('\n');
    let mut rows = Vec::new();
    let mut curve = Vec::new();
    for &beta in &cfg.gap.betas {
        if !(beta > 0.0 && beta < alpha) {
            return Err(CliError::Config(format!(
                "gap.betas: beta {beta} must satisfy 0 < beta < gap.alpha"
            )));
        }
        let rep = crate::gammagap::gamma_gap(alpha, beta).map_err(num)?;
        csv.push_str(&rep.csv_row());
        csv.push('\n');
        let agreement = (rep.area_energy - rep.area_shoelace).abs()
            <= 0.02 * rep.area_energy.abs().max(rep.area_shoelace.abs());
        rows.push(GapRowCheck {
            beta,
            area_energy: rep.area_energy,
            area_shoelace: rep.area_shoelace,
            bound4: rep.bound4,
            above_bound4: rep.area_energy >= rep.bound4,
            oracle_agreement: agreement,
        });
        curve.push((beta, rep.area_energy));
    }
    write_text(dir, "gap.csv", &csv)?;
    if curve.len() >= 2 {
        let mut plot = SvgPlot::new("spiral gap area vs beta", "beta", "area");
        plot.polyline(&curve);
        write_text(dir, "gap.svg", &plot.render())?;
    }
    let pass = rows.iter().all(|r| r.above_bound4 && r.oracle_agreement);
    write_json(dir, "report.json", &rows)?;
    Ok(if pass {
        Verdict::Pass
    } else {
        Verdict::CheckFailed
    })
}

#[derive(Serialize)]
struct LimitReport {
    alphas: Vec<f64>,
    sup_gaps: Vec<f64>,
    strictly_decreasing: bool,
}

fn run_limit_alpha(cfg: &ExperimentConfig, dir: &Path) -> Result<Verdict, CliError> {
    let model = build_model(cfg)?;
    let lo = LoConfig {
        n: cfg.solver.n,
        tau: cfg.solver.tau,
        tol: cfg.solver.tol,
        v_max: cfg.solver.v_max,
        max_iter: cfg.solver.max_iter,
        workers: cfg.workers,
    };
    let (solutions, gaps) =
        vanishing_discount_driver(&model, &cfg.limit.alphas, &lo).map_err(num)?;
    let mut csv = String::from("alpha,sup_gap_to_next\n");
    for (k, g) in gaps.iter().enumerate() {
        csv.push_str(&format!(
            "{},{}\n",
            fmt_f64(cfg.limit.alphas[k]),
            fmt_f64(*g)
        ));
    }
    write_text(dir, "gaps.csv", &csv)?;
    let mut plot = SvgPlot::new("u_alpha family", "x", "u");
    for (_, u) in &solutions {
        let pts: Vec<(f64, f64)> = (0..u.n).map(|i| (u.x(i), u.at(i as isize))).collect();
        plot.polyline(&pts);
    }
    write_text(dir, "u_family.svg", &plot.render())?;
    let dec = gaps.windows(2).all(|w| w[1] < w[0]);
    let report = LimitReport {
        alphas: cfg.limit.alphas.clone(),
        sup_gaps: gaps,
        strictly_decreasing: dec,
    };
    write_json(dir, "report.json", &report)?;
    Ok(if dec {
        Verdict::Pass
    } else {
        Verdict::CheckFailed
    })
}

/// Shared Q1/Q2 scaffolding: branches, unperturbed LO solution, C1(H).
struct CexContext {
    model: HamiltonianModel,
    branches: (Vec<(f64, f64)>, Vec<(f64, f64)>),
    u: GridFunction,
    residual: f64,
    c1: AnnulusBitmap,
}

fn cex_context(cfg: &ExperimentConfig) -> Result<CexContext, CliError> {
    let model = build_model(cfg)?;
    let branches = shoot_branches(&model)?;
    let (u, rep) = solve_with(cfg, &model, "lo")?;
    let geom = geom_of(cfg, &model);
    let map = TimeMap::new(&model, cfg.map.t, cfg.map.dt);
    let c0 = compute_c0_subdivision(&map, geom, cfg.workers).map_err(num)?;
    let c1 = compute_c1(&c0, cfg.counterexample.c1_radius).map_err(num)?;
    Ok(CexContext {
        model,
        branches,
        u,
        residual: rep.residual,
        c1: c1.bitmap,
    })
}

fn run_q1(cfg: &ExperimentConfig, dir: &Path) -> Result<Verdict, CliError> {
    let ctx = cex_context(cfg)?;
    let br = crate::curve::PolylineCurve::new(ctx.branches.0.clone());
    let bl = crate::curve::PolylineCurve::new(ctx.branches.1.clone());
    let height = cfg.counterexample.bump_height;
    let bump = q1_bump_spec(&[&br, &bl], height).map_err(num)?;
    let h1 = build_perturbed(&ctx.model, bump).map_err(num)?;
    let tol = 3.0 * ctx.residual;
    let rep = q1_violation_witness(&ctx.u, &h1, &ctx.c1, tol).map_err(num)?;
    write_json(dir, "report.json", &rep)?;
    write_bytes(dir, "c1.pbm", &ctx.c1.to_pbm())?;
    // The violation must appear exactly when the bump is actually there.
    let pass = rep.violated == (height > 0.0);
    Ok(if pass {
        Verdict::Pass
    } else {
        Verdict::CheckFailed
    })
}

fn run_q2(cfg: &ExperimentConfig, dir: &Path) -> Result<Verdict, CliError> {
    let ctx = cex_context(cfg)?;
    let br = crate::curve::PolylineCurve::new(ctx.branches.0.clone());
    let bl = crate::curve::PolylineCurve::new(ctx.branches.1.clone());
    let height = cfg.counterexample.bump_height;
    let bump = q1_bump_spec(&[&br, &bl], height).map_err(num)?;
    let h1 = build_perturbed(&ctx.model, bump).map_err(num)?;
    let mut fd = FdConfig {
        n: cfg.solver.n,
        sigma: cfg.solver.sigma,
        tol: cfg.solver.tol,
        p_bound: cfg.solver.p_bound,
        max_sweeps: cfg.solver.max_sweeps,
        cascadic: true,
        workers: cfg.workers,
    };
    if fd.sigma == 0.0 {
        fd.sigma = h1.dp_bound(fd.p_bound).ceil();
    }
    let rep = q2_inclusion_breaker(
        &h1,
        &ctx.c1,
        &fd,
        cfg.counterexample.c1_radius,
        cfg.counterexample.tol_cells,
        cfg.map.t,
        cfg.map.dt,
        cfg.workers,
    )
    .map_err(num)?;
    write_json(dir, "report.json", &rep)?;
    // Expected: inclusion broken for a real bump, intact for the control.
    let pass = if height > 0.0 {
        !rep.verdict && rep.bitmap_hausdorff <= 1.0
    } else {
        rep.verdict
    };
    Ok(if pass {
        Verdict::Pass
    } else {
        Verdict::CheckFailed
    })
}

fn run_q3(cfg: &ExperimentConfig, dir: &Path) -> Result<Verdict, CliError> {
    let model = q3_build(&cfg.q3, cfg.model.alpha)
        .map_err(|e| CliError::Numerical(format!("q3 construction: {e}")))?;
    let geom = BitmapGeom::new(
        cfg.grid.n_theta,
        cfg.grid.n_p,
        model.period(),
        cfg.grid.p_min,
        cfg.grid.p_max,
    );
    let rep = q3_verify(
        &model,
        &cfg.q3,
        geom,
        cfg.counterexample.c1_radius,
        cfg.map.t,
        cfg.map.dt,
        cfg.workers,
    )
    .map_err(num)?;
    write_json(dir, "report.json", &rep)?;
    if let crate::models::ModelKind::Tabulated(table) = &model.kind {
        write_text(dir, "h.csv", &table.to_csv())?;
    }
    let pass = rep.cond1_min_margin > 0.0
        && rep.cond2_min_margin > 0.0
        && rep.lyap_residual <= 1e-9
        && rep.fiberwise_convex
        && rep.branch_invariance_residual <= 1e-3
        && rep.closure_complement_connected
        && !rep.c1_complement_connected;
    Ok(if pass {
        Verdict::Pass
    } else {
        Verdict::CheckFailed
    })
}

// ---------------------------------------------------------------------------
// Property suite
// ---------------------------------------------------------------------------

/// Solve (I - A) x = b for a 4x4 contraction A by Gaussian elimination with
/// partial pivoting.
fn fixed_point_4(a: &[[f64; 4]; 4], b: &[f64; 4]) -> [f64; 4] {
    let mut m = [[0.0f64; 5]; 4];
    for i in 0..4 {
        for j in 0..4 {
            m[i][j] = (i == j) as u8 as f64 - a[i][j];
        }
        m[i][4] = b[i];
    }
    for col in 0..4 {
        let piv = (col..4)
            .max_by(|&r, &s| m[r][col].abs().partial_cmp(&m[s][col].abs()).unwrap())
            .unwrap();
        m.swap(col, piv);
        for row in col + 1..4 {
            let f = m[row][col] / m[col][col];
            for j in col..5 {
                m[row][j] -= f * m[col][j];
            }
        }
    }
    let mut x = [0.0f64; 4];
    for i in (0..4).rev() {
        let mut s = m[i][4];
        for j in i + 1..4 {
            s -= m[i][j] * x[j];
        }
        x[i] = s / m[i][i];
    }
    x
}

#[derive(Serialize)]
struct PropertyReport {
    seed: u64,
    affine_cases: usize,
    affine_max_error: f64,
    affine_tolerance: f64,
    contraction_pairs: usize,
    contraction_violations: usize,
    pass: bool,
}

/// Criterion-style randomized properties, reproducible from the seed:
/// 1) varying affine contractions in R^4 with uniformly converging offsets
///    converge to the limit map's fixed point;
/// 2) the discounted Lax-Oleinik operator contracts the sup norm by
///    exactly e^{-alpha tau}.
fn run_property_suite(cfg: &ExperimentConfig, dir: &Path) -> Result<Verdict, CliError> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut max_err: f64 = 0.0;
    for _ in 0..cfg.property.n_affine {
        // Contraction A: random matrix rescaled to Frobenius norm rho < 1,
        // which bounds the Euclidean operator norm by rho.
        let rho = rng.gen_range(0.2..0.9);
        let mut a = [[0.0f64; 4]; 4];
        let mut fro = 0.0;
        for row in a.iter_mut() {
            for v in row.iter_mut() {
                *v = rng.gen_range(-1.0..1.0);
                fro += *v * *v;
            }
        }
        let scale = rho / fro.sqrt().max(1e-12);
        for row in a.iter_mut() {
            for v in row.iter_mut() {
                *v *= scale;
            }
        }
        let b_inf: [f64; 4] = std::array::from_fn(|_| rng.gen_range(-5.0..5.0));
        let drift: [f64; 4] = std::array::from_fn(|_| rng.gen_range(-1.0..1.0));
        let decay: f64 = rng.gen_range(0.3..0.9);
        let x_star = fixed_point_4(&a, &b_inf);
        let x0: [f64; 4] = std::array::from_fn(|_| rng.gen_range(-10.0..10.0));
        // T_k(x) = A x + b_inf + drift * decay^k  ->  T_inf(x) = A x + b_inf.
        let step = |k: usize, x: &[f64; 4]| -> [f64; 4] {
            let d = decay.powi(k as i32);
            std::array::from_fn(|i| {
                a[i][0] * x[0] + a[i][1] * x[1] + a[i][2] * x[2] + a[i][3] * x[3]
                    + b_inf[i]
                    + drift[i] * d
            })
        };
        let dist = |x: &[f64; 4], y: &[f64; 4]| -> f64 {
            (0..4).map(|i| (x[i] - y[i]) * (x[i] - y[i])).sum::<f64>().sqrt()
        };
        let (x_end, _) =
            iterate_varying_contractions(x0, step, dist, 1e-10, 20_000).map_err(num)?;
        max_err = max_err.max(dist(&x_end, &x_star));
    }

    // Lax-Oleinik sup-norm contraction on random grid pairs.
    let model = build_model(cfg)?;
    let alpha = model.alpha;
    let tau = cfg.solver.tau;
    let n = 256;
    let mut violations = 0usize;
    for _ in 0..cfg.property.n_contraction_pairs {
        let mk = |rng: &mut ChaCha8Rng| {
            GridFunction::from_values(
                model.period(),
                (0..n).map(|_| rng.gen_range(-2.0..2.0)).collect(),
            )
        };
        let u1 = mk(&mut rng);
        let u2 = mk(&mut rng);
        let t1 = lax_oleinik_step(&model, alpha, &u1, tau).map_err(num)?;
        let t2 = lax_oleinik_step(&model, alpha, &u2, tau).map_err(num)?;
        if t1.sup_dist(&t2) > (-alpha * tau).exp() * u1.sup_dist(&u2) + 1e-12 {
            violations += 1;
        }
    }

    let report = PropertyReport {
        seed: cfg.seed,
        affine_cases: cfg.property.n_affine,
        affine_max_error: max_err,
        affine_tolerance: 1e-6,
        contraction_pairs: cfg.property.n_contraction_pairs,
        contraction_violations: violations,
        pass: max_err <= 1e-6 && violations == 0,
    };
    write_json(dir, "report.json", &report)?;
    Ok(if report.pass {
        Verdict::Pass
    } else {
        Verdict::CheckFailed
    })
}

// ---------------------------------------------------------------------------
// Tests
// ---------------------------------------------------------------------------

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unknown_keys_all_reported() {
        let toml = r#"
experiment = "solve-hj"
variant = "lo"
bogus_top = 1
[model]
kind = "pendulum"
alpha = 0.5
typo_one = 2
typo_two = 3
[solver]
n = 128
"#;
        let err = parse_config(toml).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("bogus_top"), "{msg}");
        assert!(msg.contains("model.typo_one"), "{msg}");
        assert!(msg.contains("model.typo_two"), "{msg}");
    }

    #[test]
    fn valid_config_parses_with_defaults() {
        let cfg = parse_config("experiment = \"pendulum-attractor\"").unwrap();
        assert_eq!(cfg.experiment, "pendulum-attractor");
        assert_eq!(cfg.solver.n, 2048);
        assert_eq!(cfg.model.kind, "pendulum");
    }

    #[test]
    fn invalid_experiment_and_variant_rejected() {
        let err = parse_config("experiment = \"frobnicate\"").unwrap_err();
        assert!(matches!(err, CliError::Config(_)));
        let err =
            parse_config("experiment = \"solve-hj\"\nvariant = \"xx\"").unwrap_err();
        assert!(err.to_string().contains("lo|fd"));
    }

    #[test]
    fn fixed_point_solver_exact_on_diagonal() {
        let mut a = [[0.0; 4]; 4];
        for (i, row) in a.iter_mut().enumerate() {
            row[i] = 0.5;
        }
        let x = fixed_point_4(&a, &[1.0, 2.0, 3.0, 4.0]);
        // (I - 0.5 I)^{-1} b = 2 b.
        assert_eq!(x, [2.0, 4.0, 6.0, 8.0]);
    }

    #[test]
    fn property_suite_small_run_passes() {
        let dir = std::env::temp_dir().join("bl_cli_prop_test");
        std::fs::create_dir_all(&dir).unwrap();
        let mut cfg = ExperimentConfig {
            experiment: "property-suite".into(),
            ..ExperimentConfig::default()
        };
        cfg.out_dir = dir.to_str().unwrap().to_string();
        cfg.property.n_affine = 20;
        cfg.property.n_contraction_pairs = 2;
        cfg.seed = 7;
        let v = run(&cfg).unwrap();
        assert_eq!(v, Verdict::Pass);
        // Byte-identical rerun.
        let first = std::fs::read(dir.join("report.json")).unwrap();
        run(&cfg).unwrap();
        let second = std::fs::read(dir.join("report.json")).unwrap();
        assert_eq!(first, second);
    }
}
