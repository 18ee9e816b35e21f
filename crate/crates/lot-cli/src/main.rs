//! `lot` — command-line driver for linearized optimal transport runs.
//!
//! Every subcommand reads an optional JSON run configuration, applies
//! flag overrides, echoes the resolved configuration into the output
//! directory as `resolved_config.json`, and writes its artifacts there.
//! Given the same configuration and seed, every command produces
//! byte-identical output files.
//!
//! Exit codes: 0 on success, 2 for input/parse errors, 3 when a solver
//! fails to converge, 4 for unsupported requests.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};

use lot_core::analysis::{
    convexity_probe, embed_samples, kappa_study, pca, refinement_study, shoot,
    symmetric_probe_points, Metric,
};
use lot_core::manifold::{Manifold, Point};
use lot_core::measure::{
    gen_disk_box, gen_disk_line_spaced, gen_sphere_caps_sized, rasterize, uniform_disk,
    DiscreteMeasure, GridSpec,
};
use lot_core::oracle::{exact_balanced, hk_dirac_closed_form, hk_grid_search, TinyInstance};
use lot_core::solver::{
    build_cost_hk, build_cost_w2, sinkhorn_balanced, sinkhorn_hk, DualPotentials, Solution,
    SolverConfig,
};
use lot_core::tangent::{
    exp_hk, exp_w2, geodesic_hk, hk_to_shk, log_hk, log_w2, norm_hk, norm_shk,
    rescale_to_unit_mass, shk_distance, shk_to_hk, ShkTangent, W2Tangent,
};
use lot_core::{io, Error, Result};

/// Like `println!` but tolerates a closed stdout (e.g. piping into
/// `head`), which must not bring the process down mid-run.
macro_rules! say {
    ($($arg:tt)*) => {{
        use std::io::Write;
        let _ = writeln!(std::io::stdout(), $($arg)*);
    }};
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::from(match err {
                Error::NoConvergence { .. } => 3,
                Error::Unsupported(_) => 4,
                _ => 2,
            })
        }
    }
}

#[derive(Parser)]
#[command(
    name = "lot",
    version,
    about = "Linearized optimal transport: solvers, tangent maps, PCA, and studies"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Transport distance between two measure files.
    Dist(DistArgs),
    /// Embed a target measure into the tangent space at a reference.
    Log(LogArgs),
    /// Push a stored tangent back to a measure.
    Exp(ExpArgs),
    /// Exponentiate a scaled tangent at several times along its geodesic.
    Geodesic(GeodesicArgs),
    /// Principal component analysis of a family of samples.
    Pca(PcaArgs),
    /// Sweep a principal mode around the mean and export the measures.
    Shoot(ShootArgs),
    /// Study harnesses: large length scales, grid refinement, convexity.
    #[command(subcommand)]
    Study(StudyCommand),
    /// Dataset generators.
    #[command(subcommand)]
    GenData(GenDataCommand),
    /// Exact small-instance solver (debugging aid).
    #[command(hide = true)]
    Oracle(OracleArgs),
}

fn run(command: Command) -> Result<()> {
    match command {
        Command::Dist(args) => cmd_dist(args),
        Command::Log(args) => cmd_log(args),
        Command::Exp(args) => cmd_exp(args),
        Command::Geodesic(args) => cmd_geodesic(args),
        Command::Pca(args) => cmd_pca(args),
        Command::Shoot(args) => cmd_shoot(args),
        Command::Study(study) => match study {
            StudyCommand::Kappa(args) => cmd_study_kappa(args),
            StudyCommand::Refine(args) => cmd_study_refine(args),
            StudyCommand::Convexity(args) => cmd_study_convexity(args),
        },
        Command::GenData(gen) => cmd_gen_data(gen),
        Command::Oracle(args) => cmd_oracle(args),
    }
}

// ---------------------------------------------------------------------------
// Configuration
// ---------------------------------------------------------------------------

/// Flags shared by every subcommand. Each one overrides the matching
/// field of the JSON configuration passed with `--config`.
#[derive(Args)]
struct CommonArgs {
    /// JSON run configuration file; explicit flags override its fields.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Transport metric: w2, hk, or shk.
    #[arg(long)]
    metric: Option<String>,
    /// Length scale of the soft-marginal metrics (hk/shk only).
    #[arg(long)]
    kappa: Option<f64>,
    /// Final entropic regularization (omitted: adaptive default).
    #[arg(long)]
    epsilon: Option<f64>,
    /// Multiplier of the epsilon-scaling schedule, in (0, 1).
    #[arg(long)]
    epsilon_factor: Option<f64>,
    /// Iteration budget across all scaling stages.
    #[arg(long)]
    max_iters: Option<usize>,
    /// Marginal residual tolerance of the solver.
    #[arg(long)]
    marginal_tol: Option<f64>,
    /// Base space: euclidean, sphere, or hyperbolic.
    #[arg(long)]
    manifold: Option<String>,
    /// Ambient dimension (euclidean only).
    #[arg(long)]
    dim: Option<usize>,
    /// Sphere radius.
    #[arg(long)]
    radius: Option<f64>,
    /// Output directory for artifacts and the resolved configuration.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Seed for the dataset generators.
    #[arg(long)]
    seed: Option<u64>,
    /// Normalize input measures to probability measures before solving.
    #[arg(long)]
    normalize: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct ManifoldConfig {
    manifold: String,
    dim: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    radius: Option<f64>,
}

impl Default for ManifoldConfig {
    fn default() -> Self {
        ManifoldConfig {
            manifold: "euclidean".into(),
            dim: 2,
            radius: None,
        }
    }
}

impl ManifoldConfig {
    fn build(&self) -> Result<Manifold> {
        match self.manifold.as_str() {
            "euclidean" => Ok(Manifold::Euclidean { dim: self.dim }),
            "sphere" => {
                let radius = self.radius.ok_or_else(|| {
                    Error::InvalidInput("a sphere base space needs --radius".into())
                })?;
                Ok(Manifold::Sphere { radius })
            }
            "hyperbolic" => Ok(Manifold::Hyperbolic),
            other => Err(Error::InvalidInput(format!(
                "unknown base space '{other}' (expected euclidean, sphere, or hyperbolic)"
            ))),
        }
    }
}

/// One experiment = one configuration. Serialized back into the output
/// directory so a run can be reproduced from its artifacts alone.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct RunConfig {
    metric: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    kappa: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    epsilon: Option<f64>,
    epsilon_scaling_factor: f64,
    max_iters: usize,
    marginal_tol: f64,
    manifold: ManifoldConfig,
    out: PathBuf,
    seed: u64,
    normalize: bool,
}

impl Default for RunConfig {
    fn default() -> Self {
        let solver = SolverConfig::default();
        RunConfig {
            metric: "w2".into(),
            kappa: None,
            epsilon: None,
            epsilon_scaling_factor: solver.epsilon_scaling_factor,
            max_iters: solver.max_iters,
            marginal_tol: solver.marginal_tol,
            manifold: ManifoldConfig::default(),
            out: PathBuf::from("out"),
            seed: 0,
            normalize: false,
        }
    }
}

impl RunConfig {
    fn validate(&self) -> Result<()> {
        match self.metric.as_str() {
            "w2" => {
                if self.kappa.is_some() {
                    return Err(Error::InvalidInput(
                        "kappa applies to the hk/shk metrics only".into(),
                    ));
                }
            }
            "hk" | "shk" => {
                let kappa = self.kappa.ok_or_else(|| {
                    Error::InvalidInput(format!("metric {} needs --kappa", self.metric))
                })?;
                if kappa <= 0.0 || !kappa.is_finite() {
                    return Err(Error::InvalidInput(format!(
                        "kappa must be positive and finite, got {kappa}"
                    )));
                }
            }
            other => {
                return Err(Error::InvalidInput(format!(
                    "unknown metric '{other}' (expected w2, hk, or shk)"
                )));
            }
        }
        self.manifold.build()?;
        self.solver().validate()
    }

    fn metric(&self) -> Result<Metric> {
        match (self.metric.as_str(), self.kappa) {
            ("w2", _) => Ok(Metric::W2),
            ("hk", Some(kappa)) => Ok(Metric::Hk { kappa }),
            ("shk", Some(kappa)) => Ok(Metric::Shk { kappa }),
            _ => Err(Error::InvalidInput(format!(
                "metric {} needs --kappa",
                self.metric
            ))),
        }
    }

    fn solver(&self) -> SolverConfig {
        SolverConfig {
            epsilon_target: self.epsilon,
            epsilon_scaling_factor: self.epsilon_scaling_factor,
            max_iters: self.max_iters,
            marginal_tol: self.marginal_tol,
            kappa: self.kappa,
        }
    }

    fn path(&self, name: &str) -> PathBuf {
        self.out.join(name)
    }
}

fn resolve_config(args: &CommonArgs) -> Result<RunConfig> {
    let mut cfg: RunConfig = match &args.config {
        Some(path) => {
            let text = fs::read_to_string(path)?;
            serde_json::from_str(&text)
                .map_err(|e| Error::Parse(format!("{}: {e}", path.display())))?
        }
        None => RunConfig::default(),
    };
    if let Some(metric) = &args.metric {
        cfg.metric = metric.clone();
    }
    if let Some(kappa) = args.kappa {
        cfg.kappa = Some(kappa);
    }
    if let Some(epsilon) = args.epsilon {
        cfg.epsilon = Some(epsilon);
    }
    if let Some(factor) = args.epsilon_factor {
        cfg.epsilon_scaling_factor = factor;
    }
    if let Some(iters) = args.max_iters {
        cfg.max_iters = iters;
    }
    if let Some(tol) = args.marginal_tol {
        cfg.marginal_tol = tol;
    }
    if let Some(manifold) = &args.manifold {
        cfg.manifold.manifold = manifold.clone();
    }
    if let Some(dim) = args.dim {
        cfg.manifold.dim = dim;
    }
    if let Some(radius) = args.radius {
        cfg.manifold.radius = Some(radius);
    }
    if let Some(out) = &args.out {
        cfg.out = out.clone();
    }
    if let Some(seed) = args.seed {
        cfg.seed = seed;
    }
    cfg.normalize |= args.normalize;
    cfg.validate()?;
    fs::create_dir_all(&cfg.out)?;
    io::write_json(cfg.path("resolved_config.json"), &cfg)?;
    Ok(cfg)
}

// ---------------------------------------------------------------------------
// Shared helpers
// ---------------------------------------------------------------------------

/// 12 significant digits, so regression diffs stay meaningful.
fn sig(v: f64) -> String {
    format!("{v:.11e}")
}

fn metric_line(cfg: &RunConfig) -> String {
    match cfg.kappa {
        Some(kappa) => format!("{} (kappa = {})", cfg.metric, sig(kappa)),
        None => cfg.metric.clone(),
    }
}

fn load_pair(
    cfg: &RunConfig,
    mu0: &Path,
    mu1: &Path,
) -> Result<(DiscreteMeasure, DiscreteMeasure)> {
    let mut a = io::read_measure(mu0)?;
    let mut b = io::read_measure(mu1)?;
    if cfg.normalize {
        a = a.normalize()?;
        b = b.normalize()?;
    }
    if cfg.metric == "shk" {
        for (path, measure) in [(mu0, &a), (mu1, &b)] {
            if (measure.total_mass() - 1.0).abs() > 1e-6 {
                return Err(Error::InvalidInput(format!(
                    "{} has total mass {}; the spherical metric needs probability \
                     measures (pass --normalize)",
                    path.display(),
                    measure.total_mass()
                )));
            }
        }
    }
    Ok((a, b))
}

fn solve_pair(cfg: &RunConfig, mu0: &DiscreteMeasure, mu1: &DiscreteMeasure) -> Result<Solution> {
    let solver = cfg.solver();
    match cfg.metric()? {
        Metric::W2 => sinkhorn_balanced(&build_cost_w2(mu0, mu1)?, mu0, mu1, &solver),
        Metric::Hk { kappa } | Metric::Shk { kappa } => {
            sinkhorn_hk(&build_cost_hk(mu0, mu1, kappa)?, mu0, mu1, &solver)
        }
    }
}

/// Value of the dual objective at the returned potentials. Both solvers
/// report potentials in the scale whose dual objective is the plain
/// pairing with the marginals, so the duality gap is `primal - dual`.
fn dual_value(potentials: &DualPotentials, mu0: &DiscreteMeasure, mu1: &DiscreteMeasure) -> f64 {
    let pair =
        |phi: &[f64], masses: &[f64]| -> f64 { phi.iter().zip(masses).map(|(f, m)| f * m).sum() };
    pair(&potentials.phi0, mu0.masses()) + pair(&potentials.phi1, mu1.masses())
}

fn export_solution(
    cfg: &RunConfig,
    solution: &Solution,
    plan: bool,
    potentials: bool,
) -> Result<()> {
    if plan {
        io::write_plan(cfg.path("plan.csv"), solution.plan.matrix())?;
    }
    if potentials {
        io::write_potentials(cfg.path("potentials.csv"), &solution.potentials)?;
    }
    Ok(())
}

fn scale_shk(tangent: &ShkTangent, s: f64) -> Result<ShkTangent> {
    let velocities = tangent.velocities().iter().map(|v| v.scaled(s)).collect();
    let alpha = tangent.alpha().iter().map(|a| a * s).collect();
    let singular = DiscreteMeasure::new(
        *tangent.singular().manifold(),
        tangent.singular().points().to_vec(),
        tangent
            .singular()
            .masses()
            .iter()
            .map(|m| m * s * s)
            .collect(),
    )?;
    ShkTangent::from_components(
        tangent.reference().clone(),
        velocities,
        alpha,
        singular,
        tangent.kappa(),
        tangent.dropped_plan_mass(),
    )
}

/// Bounds for rasterization: the planar bounding box of all atoms with a
/// 5% margin, or the full equirectangular chart on a sphere.
fn default_bounds(measures: &[DiscreteMeasure]) -> Result<Vec<(f64, f64)>> {
    let manifold = measures
        .first()
        .ok_or_else(|| Error::InvalidInput("no measures to rasterize".into()))?
        .manifold();
    match manifold {
        Manifold::Euclidean { dim: 2 } => {
            let mut lo = [f64::INFINITY; 2];
            let mut hi = [f64::NEG_INFINITY; 2];
            for measure in measures {
                for point in measure.points() {
                    for axis in 0..2 {
                        lo[axis] = lo[axis].min(point.coords()[axis]);
                        hi[axis] = hi[axis].max(point.coords()[axis]);
                    }
                }
            }
            Ok((0..2)
                .map(|axis| {
                    let margin = 0.05 * (hi[axis] - lo[axis]).max(1.0);
                    (lo[axis] - margin, hi[axis] + margin)
                })
                .collect())
        }
        Manifold::Sphere { .. } => Ok(vec![
            (-std::f64::consts::PI, std::f64::consts::PI),
            (-std::f64::consts::FRAC_PI_2, std::f64::consts::FRAC_PI_2),
        ]),
        _ => Err(Error::Unsupported(
            "rasterization bounds are defined for planar and spherical measures only".into(),
        )),
    }
}

fn parse_bounds(flag: &Option<Vec<f64>>, measures: &[DiscreteMeasure]) -> Result<Vec<(f64, f64)>> {
    match flag {
        Some(values) if values.len() == 4 => {
            Ok(vec![(values[0], values[1]), (values[2], values[3])])
        }
        Some(values) => Err(Error::InvalidInput(format!(
            "--raster-bounds needs 4 numbers x_lo,x_hi,y_lo,y_hi, got {}",
            values.len()
        ))),
        None => default_bounds(measures),
    }
}

/// Rasterizes each measure onto a shared grid, writing a 16-bit PGM and
/// a raw-float CSV per measure. Returns the PGM file names.
fn write_rasters(
    cfg: &RunConfig,
    prefix: &str,
    measures: &[DiscreteMeasure],
    resolution: usize,
    bounds: &Option<Vec<f64>>,
    blur: f64,
) -> Result<Vec<String>> {
    let grid = GridSpec::new(
        parse_bounds(bounds, measures)?,
        vec![resolution, resolution],
    )?;
    let mut files = Vec::new();
    for (i, measure) in measures.iter().enumerate() {
        let raster = rasterize(measure, &grid, blur)?;
        let pgm = format!("{prefix}_{i:03}.pgm");
        io::write_raster_pgm(cfg.path(&pgm), &raster)?;
        io::write_raster_csv(cfg.path(&format!("{prefix}_{i:03}_raster.csv")), &raster)?;
        files.push(pgm);
    }
    Ok(files)
}

// ---------------------------------------------------------------------------
// dist
// ---------------------------------------------------------------------------

#[derive(Args)]
struct DistArgs {
    /// Source measure CSV (its JSON sidecar must sit alongside).
    mu0: PathBuf,
    /// Target measure CSV.
    mu1: PathBuf,
    /// Also write the optimal plan as plan.csv.
    #[arg(long)]
    export_plan: bool,
    /// Also write the dual potentials as potentials.csv.
    #[arg(long)]
    export_potentials: bool,
    #[command(flatten)]
    common: CommonArgs,
}

fn cmd_dist(args: DistArgs) -> Result<()> {
    let cfg = resolve_config(&args.common)?;
    let (mu0, mu1) = load_pair(&cfg, &args.mu0, &args.mu1)?;
    let solution = solve_pair(&cfg, &mu0, &mu1)?;
    let primal = solution.plan.value();
    let gap = primal - dual_value(&solution.potentials, &mu0, &mu1);
    let squared = match cfg.metric()? {
        Metric::Shk { kappa } => {
            let distance = shk_distance(primal, kappa)?;
            distance * distance
        }
        _ => primal,
    };
    let distance = squared.max(0.0).sqrt();

    say!("metric: {}", metric_line(&cfg));
    say!("squared distance: {}", sig(squared));
    say!("distance: {}", sig(distance));
    say!("duality gap: {}", sig(gap));
    say!("iterations: {}", solution.iterations);
    say!("epsilon: {}", sig(solution.epsilon));
    say!("marginal residual: {}", sig(solution.residual));

    let report = serde_json::json!({
        "metric": cfg.metric,
        "kappa": cfg.kappa,
        "squared_distance": squared,
        "distance": distance,
        "duality_gap": gap,
        "iterations": solution.iterations,
        "epsilon": solution.epsilon,
        "residual": solution.residual,
    });
    io::write_json(cfg.path("report.json"), &report)?;
    export_solution(&cfg, &solution, args.export_plan, args.export_potentials)
}

// ---------------------------------------------------------------------------
// log
// ---------------------------------------------------------------------------

#[derive(Args)]
struct LogArgs {
    /// Reference measure CSV (the tangent space lives here).
    mu0: PathBuf,
    /// Target measure CSV.
    mu1: PathBuf,
    /// Also write the optimal plan as plan.csv.
    #[arg(long)]
    export_plan: bool,
    /// Also write the dual potentials as potentials.csv.
    #[arg(long)]
    export_potentials: bool,
    #[command(flatten)]
    common: CommonArgs,
}

fn cmd_log(args: LogArgs) -> Result<()> {
    let cfg = resolve_config(&args.common)?;
    let (mu0, mu1) = load_pair(&cfg, &args.mu0, &args.mu1)?;
    let solution = solve_pair(&cfg, &mu0, &mu1)?;
    let tangent_path = cfg.path("tangent.csv");
    let report = match cfg.metric()? {
        Metric::W2 => {
            let tangent = log_w2(&mu0, &mu1, &solution.plan)?;
            io::write_w2_tangent(&tangent_path, &tangent)?;
            let norm_sq = tangent.norm_squared();
            say!("tangent norm squared: {}", sig(norm_sq));
            serde_json::json!({
                "metric": cfg.metric,
                "norm_squared": norm_sq,
                "iterations": solution.iterations,
                "epsilon": solution.epsilon,
            })
        }
        Metric::Hk { kappa } => {
            let tangent = log_hk(&mu0, &mu1, &solution.plan, kappa)?;
            io::write_hk_tangent(&tangent_path, &tangent)?;
            let norm_sq = norm_hk(&tangent);
            say!("tangent norm squared: {}", sig(norm_sq));
            say!("singular mass: {}", sig(tangent.singular().total_mass()));
            serde_json::json!({
                "metric": cfg.metric,
                "kappa": kappa,
                "norm_squared": norm_sq,
                "singular_mass": tangent.singular().total_mass(),
                "dropped_plan_mass": tangent.dropped_plan_mass(),
                "iterations": solution.iterations,
                "epsilon": solution.epsilon,
            })
        }
        Metric::Shk { kappa } => {
            let tangent = log_hk(&mu0, &mu1, &solution.plan, kappa)?;
            let tangent = rescale_to_unit_mass(&tangent)?;
            let spherical = hk_to_shk(&tangent)?;
            io::write_shk_tangent(&tangent_path, &spherical)?;
            let norm_sq = norm_shk(&spherical);
            say!("tangent norm squared: {}", sig(norm_sq));
            say!(
                "initial reparametrization speed: {}",
                sig(spherical.s_prime0())
            );
            serde_json::json!({
                "metric": cfg.metric,
                "kappa": kappa,
                "norm_squared": norm_sq,
                "s_prime0": spherical.s_prime0(),
                "singular_mass": spherical.singular().total_mass(),
                "iterations": solution.iterations,
                "epsilon": solution.epsilon,
            })
        }
    };
    say!("tangent file: {}", tangent_path.display());
    io::write_json(cfg.path("report.json"), &report)?;
    export_solution(&cfg, &solution, args.export_plan, args.export_potentials)
}

// ---------------------------------------------------------------------------
// exp
// ---------------------------------------------------------------------------

#[derive(Args)]
struct ExpArgs {
    /// Tangent CSV written by `lot log` (sidecar and singular file alongside).
    tangent: PathBuf,
    #[command(flatten)]
    common: CommonArgs,
}

fn cmd_exp(args: ExpArgs) -> Result<()> {
    let cfg = resolve_config(&args.common)?;
    let measure = exponentiate(&cfg, &args.tangent, 1.0)?;
    let out = cfg.path("measure.csv");
    io::write_measure(&out, &measure)?;
    say!("atoms: {}", measure.len());
    say!("total mass: {}", sig(measure.total_mass()));
    say!("measure file: {}", out.display());
    io::write_json(
        cfg.path("report.json"),
        &serde_json::json!({
            "metric": cfg.metric,
            "atoms": measure.len(),
            "total_mass": measure.total_mass(),
        }),
    )
}

/// Reads the tangent for the configured metric and exponentiates `s`
/// times it (spherical sweeps are normalized back to probabilities).
fn exponentiate(cfg: &RunConfig, tangent: &Path, s: f64) -> Result<DiscreteMeasure> {
    match cfg.metric()? {
        Metric::W2 => {
            let t = io::read_w2_tangent(tangent)?;
            let velocities = t.velocities().iter().map(|v| v.scaled(s)).collect();
            exp_w2(&W2Tangent::new(t.reference().clone(), velocities)?)
        }
        Metric::Hk { .. } => geodesic_hk(&io::read_hk_tangent(tangent)?, s),
        Metric::Shk { .. } => {
            let t = scale_shk(&io::read_shk_tangent(tangent)?, s)?;
            exp_hk(&shk_to_hk(&t)?)?.normalize()
        }
    }
}

// ---------------------------------------------------------------------------
// geodesic
// ---------------------------------------------------------------------------

#[derive(Args)]
struct GeodesicArgs {
    /// Tangent CSV written by `lot log`.
    tangent: PathBuf,
    /// Interpolation times (comma separated).
    #[arg(long, value_delimiter = ',', default_values_t = [0.0, 0.25, 0.5, 0.75, 1.0])]
    t_list: Vec<f64>,
    #[command(flatten)]
    common: CommonArgs,
}

fn cmd_geodesic(args: GeodesicArgs) -> Result<()> {
    let cfg = resolve_config(&args.common)?;
    let mut masses = Vec::new();
    let mut files = Vec::new();
    for (i, &t) in args.t_list.iter().enumerate() {
        let measure = exponentiate(&cfg, &args.tangent, t)?;
        let name = format!("geodesic_{i:03}.csv");
        io::write_measure(cfg.path(&name), &measure)?;
        say!("t = {}: mass = {}", sig(t), sig(measure.total_mass()));
        masses.push(measure.total_mass());
        files.push(name);
    }
    io::write_json(
        cfg.path("report.json"),
        &serde_json::json!({
            "metric": cfg.metric,
            "kappa": cfg.kappa,
            "t_values": args.t_list,
            "masses": masses,
            "files": files,
        }),
    )
}

// ---------------------------------------------------------------------------
// pca
// ---------------------------------------------------------------------------

#[derive(Args)]
struct PcaArgs {
    /// Directory of sample measure CSVs (each with its sidecar).
    samples_dir: PathBuf,
    /// Reference measure the samples are embedded at.
    #[arg(long)]
    reference: PathBuf,
    #[command(flatten)]
    common: CommonArgs,
}

/// Sample files: every `.csv` in the directory except singular parts and
/// a `reference.csv`, in name order.
fn collect_samples(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut files = Vec::new();
    for entry in fs::read_dir(dir)? {
        let path = entry?.path();
        let name = match path.file_name() {
            Some(name) => name.to_string_lossy().into_owned(),
            None => continue,
        };
        if name.ends_with(".csv") && !name.ends_with("_singular.csv") && name != "reference.csv" {
            files.push(path);
        }
    }
    files.sort();
    if files.len() < 2 {
        return Err(Error::InvalidInput(format!(
            "need at least 2 samples, found {} in {}",
            files.len(),
            dir.display()
        )));
    }
    Ok(files)
}

fn cmd_pca(args: PcaArgs) -> Result<()> {
    let cfg = resolve_config(&args.common)?;
    let metric = cfg.metric()?;
    let mut reference = io::read_measure(&args.reference)?;
    if cfg.normalize {
        reference = reference.normalize()?;
    }
    let sample_files = collect_samples(&args.samples_dir)?;
    let mut samples = Vec::with_capacity(sample_files.len());
    for path in &sample_files {
        let mut sample = io::read_measure(path)?;
        if cfg.normalize {
            sample = sample.normalize()?;
        }
        samples.push(sample);
    }

    let set = embed_samples(&reference, &samples, metric, &cfg.solver())?;
    let result = pca(&set)?;

    io::write_eigenvalues_csv(cfg.path("eigenvalues.csv"), &result)?;
    io::write_projections_csv(cfg.path("projections.csv"), &result)?;
    io::write_field(cfg.path("mean.csv"), &result.reference, &result.mean)?;
    let mut mode_files = Vec::new();
    for (l, mode) in result.modes.iter().enumerate() {
        let name = format!("mode_{:02}.csv", l + 1);
        io::write_field(cfg.path(&name), &result.reference, mode)?;
        mode_files.push(name);
    }

    let total: f64 = result.eigenvalues.iter().sum();
    let explained: Vec<f64> = result
        .eigenvalues
        .iter()
        .map(|ev| if total > 0.0 { ev / total } else { 0.0 })
        .collect();
    say!("metric: {}", metric_line(&cfg));
    say!("samples: {}", samples.len());
    say!("modes kept: {}", result.modes.len());
    for (k, ev) in result.eigenvalues.iter().take(5).enumerate() {
        say!(
            "lambda{} = {} (explained {})",
            k + 1,
            sig(*ev),
            sig(explained[k])
        );
    }
    if result.eigenvalues.len() >= 2 && result.eigenvalues[0] > 0.0 {
        say!(
            "lambda2/lambda1: {}",
            sig(result.eigenvalues[1] / result.eigenvalues[0])
        );
    }

    let names: Vec<String> = sample_files
        .iter()
        .map(|p| {
            p.file_name()
                .unwrap_or_default()
                .to_string_lossy()
                .into_owned()
        })
        .collect();
    io::write_json(
        cfg.path("summary.json"),
        &serde_json::json!({
            "metric": cfg.metric,
            "kappa": cfg.kappa,
            "samples": names,
            "eigenvalues": result.eigenvalues,
            "explained_variance_ratio": explained,
            "modes_kept": result.modes.len(),
            "mode_files": mode_files,
        }),
    )
}

// ---------------------------------------------------------------------------
// shoot
// ---------------------------------------------------------------------------

#[derive(Args)]
struct ShootArgs {
    /// Mean tangent field CSV (from `lot pca`).
    #[arg(long)]
    mean: PathBuf,
    /// Mode tangent field CSV (from `lot pca`).
    #[arg(long)]
    mode: PathBuf,
    /// Half-width of the sweep in mode units.
    #[arg(long, default_value_t = 1.0)]
    sigma: f64,
    /// Number of sweep points.
    #[arg(long, default_value_t = 5)]
    steps: usize,
    /// Also rasterize each swept measure at this resolution.
    #[arg(long)]
    raster_res: Option<usize>,
    /// Raster bounds x_lo,x_hi,y_lo,y_hi (default: data bounding box).
    #[arg(long, value_delimiter = ',')]
    raster_bounds: Option<Vec<f64>>,
    /// Gaussian blur width for the rasters, in coordinate units.
    #[arg(long, default_value_t = 0.0)]
    blur: f64,
    #[command(flatten)]
    common: CommonArgs,
}

fn cmd_shoot(args: ShootArgs) -> Result<()> {
    let cfg = resolve_config(&args.common)?;
    let metric = cfg.metric()?;
    let (reference, mean) = io::read_field(&args.mean)?;
    let (_, mode) = io::read_field(&args.mode)?;
    let steps = if args.sigma == 0.0 { 1 } else { args.steps };
    let result = shoot(&reference, &mean, &mode, args.sigma, steps, metric)?;

    let mut files = Vec::new();
    let mut masses = Vec::new();
    for (i, measure) in result.measures.iter().enumerate() {
        let name = format!("shot_{i:03}.csv");
        io::write_measure(cfg.path(&name), measure)?;
        masses.push(measure.total_mass());
        files.push(name);
    }
    let rasters = match args.raster_res {
        Some(resolution) => write_rasters(
            &cfg,
            "shot",
            &result.measures,
            resolution,
            &args.raster_bounds,
            args.blur,
        )?,
        None => Vec::new(),
    };

    say!("metric: {}", metric_line(&cfg));
    say!(
        "steps: {} (truncated: {})",
        result.measures.len(),
        result.truncated
    );
    for (t, mass) in result.t_values.iter().zip(&masses) {
        say!("t = {}: mass = {}", sig(*t), sig(*mass));
    }
    io::write_json(
        cfg.path("summary.json"),
        &serde_json::json!({
            "metric": cfg.metric,
            "kappa": cfg.kappa,
            "sigma": args.sigma,
            "t_values": result.t_values,
            "truncated": result.truncated,
            "masses": masses,
            "files": files,
            "rasters": rasters,
        }),
    )
}

// ---------------------------------------------------------------------------
// study
// ---------------------------------------------------------------------------

#[derive(Subcommand)]
enum StudyCommand {
    /// Convergence of the soft-marginal metric to the balanced one as
    /// the length scale grows.
    Kappa(StudyKappaArgs),
    /// Moment convergence of tangent embeddings under grid refinement.
    Refine(StudyRefineArgs),
    /// Exchange-margin probe of geodesic convexity.
    Convexity(StudyConvexityArgs),
}

#[derive(Args)]
struct StudyKappaArgs {
    /// Source measure CSV.
    mu0: PathBuf,
    /// Target measure CSV.
    mu1: PathBuf,
    /// Strictly increasing length scales (comma separated).
    #[arg(long, value_delimiter = ',', required = true)]
    kappas: Vec<f64>,
    #[command(flatten)]
    common: CommonArgs,
}

fn cmd_study_kappa(args: StudyKappaArgs) -> Result<()> {
    let cfg = resolve_config(&args.common)?;
    let (mu0, mu1) = load_pair(&cfg, &args.mu0, &args.mu1)?;
    let study = kappa_study(&mu0, &mu1, &args.kappas, &cfg.solver())?;
    io::write_kappa_study_csv(cfg.path("kappa.csv"), &study)?;
    io::write_json(cfg.path("kappa.json"), &study)?;
    say!("balanced squared value: {}", sig(study.w2_value));
    for point in &study.points {
        say!(
            "kappa = {}: gap = {}, alpha norm = {}, value = {}",
            sig(point.kappa),
            sig(point.velocity_gap),
            sig(point.alpha_norm),
            sig(point.hk_value)
        );
    }
    say!(
        "gap decreasing: {} / value increasing: {} / below balanced: {}",
        study.gap_decreasing,
        study.value_increasing,
        study.value_below_w2
    );
    Ok(())
}

#[derive(Args)]
struct StudyRefineArgs {
    /// Fine source measure CSV (coarsened to each resolution).
    mu0: PathBuf,
    /// Fine target measure CSV.
    mu1: PathBuf,
    /// Strictly increasing resolutions; the last is the reference level.
    #[arg(long, value_delimiter = ',', required = true)]
    resolutions: Vec<usize>,
    #[command(flatten)]
    common: CommonArgs,
}

fn cmd_study_refine(args: StudyRefineArgs) -> Result<()> {
    let cfg = resolve_config(&args.common)?;
    let (mu0, mu1) = load_pair(&cfg, &args.mu0, &args.mu1)?;
    let study = refinement_study(&mu0, &mu1, &args.resolutions, cfg.metric()?, &cfg.solver())?;
    io::write_refinement_csv(cfg.path("refine.csv"), &study)?;
    io::write_json(cfg.path("refine.json"), &study)?;
    for (k, deviation) in study.deviations.iter().enumerate() {
        say!(
            "resolution {}: deviation = {}",
            study.resolutions[k],
            sig(*deviation)
        );
    }
    say!(
        "monotone after first: {} / final below {}: {}",
        study.monotone_after_first,
        sig(study.tolerance),
        study.final_below_tolerance
    );
    Ok(())
}

#[derive(Args)]
struct StudyConvexityArgs {
    /// Half-offsets a,b of the probe configuration: sources at
    /// exp(±a e1) around the center, targets at exp(±b e2).
    #[arg(long, value_delimiter = ',', required = true)]
    amplitudes: Vec<f64>,
    /// Center of the probe configuration (ambient coordinates; default:
    /// the origin of the base space).
    #[arg(long, value_delimiter = ',')]
    center: Option<Vec<f64>>,
    /// Number of interpolation times on [0, 1].
    #[arg(long, default_value_t = 11)]
    t_steps: usize,
    /// Margins below -tolerance count as failures.
    #[arg(long, default_value_t = 1e-9)]
    tolerance: f64,
    #[command(flatten)]
    common: CommonArgs,
}

fn canonical_center(manifold: &Manifold) -> Result<Point> {
    match manifold {
        Manifold::Euclidean { dim } => manifold.point(vec![0.0; *dim]),
        Manifold::Sphere { radius } => manifold.point(vec![0.0, 0.0, *radius]),
        Manifold::Hyperbolic => manifold.point(vec![1.0, 0.0, 0.0]),
    }
}

fn cmd_study_convexity(args: StudyConvexityArgs) -> Result<()> {
    let cfg = resolve_config(&args.common)?;
    if args.amplitudes.len() != 2 {
        return Err(Error::InvalidInput(format!(
            "--amplitudes needs exactly 2 numbers a,b, got {}",
            args.amplitudes.len()
        )));
    }
    if args.t_steps < 2 {
        return Err(Error::InvalidInput("--t-steps must be at least 2".into()));
    }
    let manifold = cfg.manifold.build()?;
    let center = match &args.center {
        Some(coords) => manifold.point(coords.clone())?,
        None => canonical_center(&manifold)?,
    };
    let (x0, x1, y0, y1) =
        symmetric_probe_points(&manifold, &center, args.amplitudes[0], args.amplitudes[1])?;
    let t_list: Vec<f64> = (0..args.t_steps)
        .map(|k| k as f64 / (args.t_steps - 1) as f64)
        .collect();
    let probe = convexity_probe(
        &manifold,
        &x0,
        &x1,
        &y0,
        &y1,
        cfg.metric()?,
        &t_list,
        args.tolerance,
        &cfg.solver(),
    )?;

    let max_abs = probe.margins.iter().fold(0.0_f64, |m, x| m.max(x.abs()));
    let min_margin = probe.margins.iter().fold(f64::INFINITY, |m, x| m.min(*x));
    let verdict = if max_abs <= args.tolerance {
        "equality"
    } else if probe.all_pass {
        "pass"
    } else {
        "fail"
    };
    io::write_convexity_csv(cfg.path("convexity.csv"), &probe)?;
    io::write_json(
        cfg.path("convexity.json"),
        &serde_json::json!({
            "metric": cfg.metric,
            "kappa": cfg.kappa,
            "amplitudes": args.amplitudes,
            "t_values": probe.t_values,
            "margins": probe.margins,
            "min_margin": min_margin,
            "max_abs_margin": max_abs,
            "all_pass": probe.all_pass,
            "tolerance": probe.tolerance,
            "verdict": verdict,
        }),
    )?;
    say!("metric: {}", metric_line(&cfg));
    say!("min margin: {}", sig(min_margin));
    say!("max |margin|: {}", sig(max_abs));
    say!("verdict: {verdict}");
    Ok(())
}

// ---------------------------------------------------------------------------
// gen-data
// ---------------------------------------------------------------------------

#[derive(Subcommand)]
enum GenDataCommand {
    /// Uniform disks with centers on a horizontal segment.
    DiskLine(DiskLineArgs),
    /// Uniform disks with random centers and radii in a box.
    DiskBox(DiskBoxArgs),
    /// Uniform spherical caps centered on the equator, plus a north-pole
    /// reference cap.
    SphereCaps(SphereCapsArgs),
    /// Single atoms evenly spaced on a horizontal segment.
    DiracLine(DiracLineArgs),
}

#[derive(Args)]
struct RasterFlags {
    /// Also rasterize every generated measure at this resolution.
    #[arg(long)]
    raster_res: Option<usize>,
    /// Raster bounds x_lo,x_hi,y_lo,y_hi (default: data bounding box).
    #[arg(long, value_delimiter = ',')]
    raster_bounds: Option<Vec<f64>>,
    /// Gaussian blur width for the rasters.
    #[arg(long, default_value_t = 0.0)]
    blur: f64,
}

#[derive(Args)]
struct DiskLineArgs {
    /// Number of samples.
    #[arg(long)]
    count: usize,
    /// Segment length.
    #[arg(long, default_value_t = 5.0)]
    l: f64,
    /// Disk radius.
    #[arg(long, default_value_t = 0.2)]
    disk_radius: f64,
    /// Grid spacing of the disk discretization (default: radius / 6).
    #[arg(long)]
    spacing: Option<f64>,
    #[command(flatten)]
    raster: RasterFlags,
    #[command(flatten)]
    common: CommonArgs,
}

#[derive(Args)]
struct DiskBoxArgs {
    /// Number of samples.
    #[arg(long)]
    count: usize,
    /// Box side length.
    #[arg(long, default_value_t = 5.0)]
    l: f64,
    /// Smallest disk radius.
    #[arg(long, default_value_t = 0.3)]
    r_min: f64,
    /// Largest disk radius.
    #[arg(long, default_value_t = 0.7)]
    r_max: f64,
    #[command(flatten)]
    raster: RasterFlags,
    #[command(flatten)]
    common: CommonArgs,
}

#[derive(Args)]
struct SphereCapsArgs {
    /// Number of samples.
    #[arg(long)]
    count: usize,
    /// Geodesic radius of the caps, in (0, pi/2).
    #[arg(long, default_value_t = 0.5)]
    cap_angle: f64,
    /// Sphere radius.
    #[arg(long, default_value_t = 1.0)]
    sphere_radius: f64,
    /// Atoms per cap.
    #[arg(long, default_value_t = 60)]
    points_per_cap: usize,
    #[command(flatten)]
    raster: RasterFlags,
    #[command(flatten)]
    common: CommonArgs,
}

#[derive(Args)]
struct DiracLineArgs {
    /// Number of samples.
    #[arg(long)]
    count: usize,
    /// Segment length.
    #[arg(long, default_value_t = 5.0)]
    l: f64,
    #[command(flatten)]
    raster: RasterFlags,
    #[command(flatten)]
    common: CommonArgs,
}

fn dirac_on_segment(manifold: &Manifold, x: f64) -> Result<DiscreteMeasure> {
    let dim = manifold.ambient_dim();
    let mut coords = vec![0.0; dim];
    coords[0] = x;
    DiscreteMeasure::dirac(*manifold, manifold.point(coords)?, 1.0)
}

fn cmd_gen_data(command: GenDataCommand) -> Result<()> {
    let (cfg, kind, params, reference, samples, raster) = match command {
        GenDataCommand::DiskLine(args) => {
            let cfg = resolve_config(&args.common)?;
            let spacing = args.spacing.unwrap_or(args.disk_radius / 6.0);
            let samples =
                gen_disk_line_spaced(args.l, args.disk_radius, args.count, cfg.seed, spacing)?;
            let reference = uniform_disk(args.l / 2.0, 0.0, args.disk_radius, spacing)?;
            let params = serde_json::json!({
                "l": args.l, "disk_radius": args.disk_radius, "spacing": spacing,
            });
            (cfg, "disk-line", params, reference, samples, args.raster)
        }
        GenDataCommand::DiskBox(args) => {
            let cfg = resolve_config(&args.common)?;
            let samples = gen_disk_box(args.l, args.r_min, args.r_max, args.count, cfg.seed)?;
            let mid = 0.5 * (args.r_min + args.r_max);
            let reference = uniform_disk(args.l / 2.0, args.l / 2.0, mid, mid / 6.0)?;
            let params = serde_json::json!({
                "l": args.l, "r_min": args.r_min, "r_max": args.r_max,
            });
            (cfg, "disk-box", params, reference, samples, args.raster)
        }
        GenDataCommand::SphereCaps(args) => {
            let cfg = resolve_config(&args.common)?;
            let (reference, samples) = gen_sphere_caps_sized(
                args.sphere_radius,
                args.cap_angle,
                args.count,
                cfg.seed,
                args.points_per_cap,
            )?;
            let params = serde_json::json!({
                "sphere_radius": args.sphere_radius,
                "cap_angle": args.cap_angle,
                "points_per_cap": args.points_per_cap,
            });
            (cfg, "sphere-caps", params, reference, samples, args.raster)
        }
        GenDataCommand::DiracLine(args) => {
            let cfg = resolve_config(&args.common)?;
            let manifold = cfg.manifold.build()?;
            if !matches!(manifold, Manifold::Euclidean { .. }) {
                return Err(Error::Unsupported(
                    "dirac-line generates Euclidean data only".into(),
                ));
            }
            let mut samples = Vec::with_capacity(args.count);
            for k in 0..args.count {
                let x = if args.count == 1 {
                    args.l / 2.0
                } else {
                    args.l * k as f64 / (args.count - 1) as f64
                };
                samples.push(dirac_on_segment(&manifold, x)?);
            }
            let reference = dirac_on_segment(&manifold, args.l / 2.0)?;
            let params = serde_json::json!({ "l": args.l });
            (cfg, "dirac-line", params, reference, samples, args.raster)
        }
    };

    io::write_measure(cfg.path("reference.csv"), &reference)?;
    let mut files = vec!["reference.csv".to_string()];
    for (i, sample) in samples.iter().enumerate() {
        let name = format!("sample_{i:03}.csv");
        io::write_measure(cfg.path(&name), sample)?;
        files.push(name);
    }
    if let Some(resolution) = raster.raster_res {
        write_rasters(
            &cfg,
            "sample",
            &samples,
            resolution,
            &raster.raster_bounds,
            raster.blur,
        )?;
    }

    say!("kind: {kind}");
    say!("samples: {}", samples.len());
    say!("output directory: {}", cfg.out.display());
    io::write_json(
        cfg.path("manifest.json"),
        &serde_json::json!({
            "kind": kind,
            "seed": cfg.seed,
            "params": params,
            "files": files,
        }),
    )
}

// ---------------------------------------------------------------------------
// oracle (hidden)
// ---------------------------------------------------------------------------

#[derive(Args)]
struct OracleArgs {
    /// Source measure CSV.
    mu0: PathBuf,
    /// Target measure CSV.
    mu1: PathBuf,
    /// Grid step of the soft-marginal search.
    #[arg(long, default_value_t = 1e-3)]
    grid_step: f64,
    #[command(flatten)]
    common: CommonArgs,
}

fn cmd_oracle(args: OracleArgs) -> Result<()> {
    let cfg = resolve_config(&args.common)?;
    let (mu0, mu1) = load_pair(&cfg, &args.mu0, &args.mu1)?;
    let instance = TinyInstance::new(mu0.clone(), mu1.clone())?;
    match cfg.metric()? {
        Metric::W2 => {
            let solution = exact_balanced(&instance)?;
            say!("exact squared value: {}", sig(solution.value));
            io::write_plan(cfg.path("plan.csv"), solution.plan.matrix())?;
            io::write_json(
                cfg.path("report.json"),
                &serde_json::json!({ "metric": "w2", "value": solution.value }),
            )
        }
        Metric::Hk { kappa } => {
            let value = hk_grid_search(&instance, kappa, args.grid_step)?;
            say!("grid-search squared value: {}", sig(value));
            let closed_form = if mu0.len() == 1 && mu1.len() == 1 {
                let exact = hk_dirac_closed_form(
                    mu0.manifold(),
                    mu0.masses()[0],
                    &mu0.points()[0],
                    mu1.masses()[0],
                    &mu1.points()[0],
                    kappa,
                )?;
                say!("closed-form squared value: {}", sig(exact.value));
                Some(exact.value)
            } else {
                None
            };
            io::write_json(
                cfg.path("report.json"),
                &serde_json::json!({
                    "metric": "hk",
                    "kappa": kappa,
                    "grid_step": args.grid_step,
                    "value": value,
                    "closed_form_value": closed_form,
                }),
            )
        }
        Metric::Shk { .. } => Err(Error::Unsupported(
            "the exact oracle covers the w2 and hk metrics".into(),
        )),
    }
}
