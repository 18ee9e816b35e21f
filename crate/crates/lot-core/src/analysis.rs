//! Linearized analysis over a reference measure: embedding samples as
//! tangent fields, principal component analysis in the tangent space,
//! geodesic shooting along modes, and study harnesses (large-scale
//! limits, grid refinement, geodesic convexity probes).

use std::collections::BTreeMap;

use nalgebra::{DMatrix, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::manifold::{Manifold, Point};
use crate::measure::DiscreteMeasure;
use crate::solver::{
    build_cost_hk, build_cost_w2, primal_value_hk, sinkhorn_balanced, sinkhorn_hk, Solution,
    SolverConfig, TransportPlan,
};
use crate::tangent::{
    exp_hk, exp_w2, hk_to_shk, log_hk, log_w2, rescale_to_unit_mass, shk_to_hk, HkTangent,
    ShkTangent, W2Tangent,
};
use crate::{Error, Result};

/// Relative threshold under which a principal component counts as null
/// (its share of the leading eigenvalue is numerical noise).
const RANK_TOL: f64 = 1e-12;

/// Which transport geometry an embedding or study works in.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Metric {
    /// Balanced quadratic transport: mass is conserved, only positions move.
    W2,
    /// Soft-marginal transport at length scale `kappa`: mass may be
    /// created or destroyed at quadratic cost.
    Hk { kappa: f64 },
    /// Soft-marginal transport projected onto the sphere of probability
    /// measures (arc-length metric).
    Shk { kappa: f64 },
}

impl Metric {
    pub fn kappa(&self) -> Option<f64> {
        match self {
            Metric::W2 => None,
            Metric::Hk { kappa } | Metric::Shk { kappa } => Some(*kappa),
        }
    }

    /// Weight of the mass-rate coordinate in the tangent inner product.
    fn alpha_weight(&self) -> f64 {
        match self {
            Metric::W2 => 0.0,
            Metric::Hk { kappa } | Metric::Shk { kappa } => kappa * kappa / 4.0,
        }
    }
}

/// Raw per-atom tangent data over a reference measure: one velocity
/// component vector and one mass-rate scalar per atom. Unlike the typed
/// tangents in [`crate::tangent`], fields are closed under linear
/// combination (so means and principal modes are representable).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TangentField {
    /// Velocity components per reference atom (ambient coordinates).
    pub v: Vec<Vec<f64>>,
    /// Mass-change rate per reference atom (zero for balanced transport).
    pub alpha: Vec<f64>,
}

impl TangentField {
    pub fn zeros(atoms: usize, ambient_dim: usize) -> Self {
        TangentField {
            v: vec![vec![0.0; ambient_dim]; atoms],
            alpha: vec![0.0; atoms],
        }
    }

    pub fn from_w2(tangent: &W2Tangent) -> Self {
        TangentField {
            v: tangent
                .velocities()
                .iter()
                .map(|t| t.comps().to_vec())
                .collect(),
            alpha: vec![0.0; tangent.reference().len()],
        }
    }

    pub fn from_hk(tangent: &HkTangent) -> Self {
        TangentField {
            v: tangent
                .velocities()
                .iter()
                .map(|t| t.comps().to_vec())
                .collect(),
            alpha: tangent.alpha().to_vec(),
        }
    }

    pub fn from_shk(tangent: &ShkTangent) -> Self {
        TangentField {
            v: tangent
                .velocities()
                .iter()
                .map(|t| t.comps().to_vec())
                .collect(),
            alpha: tangent.alpha().to_vec(),
        }
    }

    fn add_scaled(&mut self, c: f64, other: &TangentField) {
        for (row, orow) in self.v.iter_mut().zip(&other.v) {
            for (a, b) in row.iter_mut().zip(orow) {
                *a += c * b;
            }
        }
        for (a, b) in self.alpha.iter_mut().zip(&other.alpha) {
            *a += c * b;
        }
    }

    fn shape(&self) -> (usize, usize) {
        (self.alpha.len(), self.v.first().map_or(0, Vec::len))
    }
}

/// A batch of samples embedded as tangent fields over one reference
/// measure, under one metric.
#[derive(Debug, Clone)]
pub struct EmbeddingSet {
    pub reference: DiscreteMeasure,
    pub metric: Metric,
    pub fields: Vec<TangentField>,
}

/// Inner product of two tangent fields, weighted by the reference masses:
/// `sum_k m_k (<v_k, v'_k>_x + (kappa^2/4) alpha_k alpha'_k)` (the rate
/// term is absent for balanced transport).
///
/// # Errors
///
/// `InvalidInput` if either field's shape does not match the reference.
pub fn weighted_inner(
    reference: &DiscreteMeasure,
    metric: Metric,
    f: &TangentField,
    g: &TangentField,
) -> Result<f64> {
    check_field(reference, f)?;
    check_field(reference, g)?;
    Ok(weighted_inner_unchecked(
        reference,
        metric.alpha_weight(),
        f,
        g,
    ))
}

fn weighted_inner_unchecked(
    reference: &DiscreteMeasure,
    alpha_weight: f64,
    f: &TangentField,
    g: &TangentField,
) -> f64 {
    let manifold = reference.manifold();
    reference
        .masses()
        .iter()
        .enumerate()
        .map(|(k, m)| {
            let velocity = manifold.inner_at(&reference.points()[k], &f.v[k], &g.v[k]);
            m * (velocity + alpha_weight * f.alpha[k] * g.alpha[k])
        })
        .sum()
}

fn check_field(reference: &DiscreteMeasure, f: &TangentField) -> Result<()> {
    let (atoms, dim) = f.shape();
    if atoms != reference.len()
        || f.v.len() != reference.len()
        || f.v.iter().any(|row| row.len() != dim)
        || (!reference.is_empty() && dim != reference.manifold().ambient_dim())
    {
        return Err(Error::InvalidInput(
            "tangent field shape does not match the reference measure".into(),
        ));
    }
    Ok(())
}

fn annotate(err: Error, index: usize) -> Error {
    match err {
        Error::InvalidInput(m) => Error::InvalidInput(format!("sample {index}: {m}")),
        Error::CutLocus(m) => Error::CutLocus(format!("sample {index}: {m}")),
        Error::InvalidPlan(m) => Error::InvalidPlan(format!("sample {index}: {m}")),
        Error::Unsupported(m) => Error::Unsupported(format!("sample {index}: {m}")),
        other => other,
    }
}

fn solve_w2(
    mu0: &DiscreteMeasure,
    mu1: &DiscreteMeasure,
    config: &SolverConfig,
) -> Result<Solution> {
    let cost = build_cost_w2(mu0, mu1)?;
    sinkhorn_balanced(&cost, mu0, mu1, config)
}

fn solve_hk(
    mu0: &DiscreteMeasure,
    mu1: &DiscreteMeasure,
    kappa: f64,
    config: &SolverConfig,
) -> Result<Solution> {
    let cost = build_cost_hk(mu0, mu1, kappa)?;
    let mut config = config.clone();
    config.kappa = Some(kappa);
    sinkhorn_hk(&cost, mu0, mu1, &config)
}

/// Solves transport from the reference to each sample and stacks the
/// logarithms into an [`EmbeddingSet`]. Under the spherical metric each
/// sample's tangent is rescaled onto the unit-mass sphere first (the
/// reference itself must already be a probability measure).
///
/// # Errors
///
/// Solver and logarithm errors are passed through with the failing sample
/// index prefixed. A sample needing mass creation from nothing (singular
/// part) cannot be embedded as a field and yields `Unsupported`.
pub fn embed_samples(
    reference: &DiscreteMeasure,
    samples: &[DiscreteMeasure],
    metric: Metric,
    config: &SolverConfig,
) -> Result<EmbeddingSet> {
    let mut fields = Vec::with_capacity(samples.len());
    for (i, sample) in samples.iter().enumerate() {
        let field = embed_one(reference, sample, metric, config).map_err(|e| annotate(e, i))?;
        fields.push(field);
    }
    Ok(EmbeddingSet {
        reference: reference.clone(),
        metric,
        fields,
    })
}

fn embed_one(
    reference: &DiscreteMeasure,
    sample: &DiscreteMeasure,
    metric: Metric,
    config: &SolverConfig,
) -> Result<TangentField> {
    match metric {
        Metric::W2 => {
            let sol = solve_w2(reference, sample, config)?;
            let t = log_w2(reference, sample, &sol.plan)?;
            Ok(TangentField::from_w2(&t))
        }
        Metric::Hk { kappa } => {
            let sol = solve_hk(reference, sample, kappa, config)?;
            let t = log_hk(reference, sample, &sol.plan, kappa)?;
            ensure_no_singular(&t)?;
            Ok(TangentField::from_hk(&t))
        }
        Metric::Shk { kappa } => {
            let sol = solve_hk(reference, sample, kappa, config)?;
            let t = log_hk(reference, sample, &sol.plan, kappa)?;
            ensure_no_singular(&t)?;
            let spherical = hk_to_shk(&rescale_to_unit_mass(&t)?)?;
            Ok(TangentField::from_shk(&spherical))
        }
    }
}

fn ensure_no_singular(t: &HkTangent) -> Result<()> {
    if t.singular().total_mass() > 0.0 {
        return Err(Error::Unsupported(format!(
            "tangent carries a singular part of mass {:.3e}; it has no field representation",
            t.singular().total_mass()
        )));
    }
    Ok(())
}

/// Principal component analysis of an embedding set in its weighted
/// tangent inner product.
#[derive(Debug, Clone)]
pub struct PcaResult {
    pub reference: DiscreteMeasure,
    pub metric: Metric,
    /// All sample-count many variances, descending, clipped at zero.
    pub eigenvalues: Vec<f64>,
    /// Unit-norm principal modes for the eigenvalues above the rank
    /// threshold, in the same order.
    pub modes: Vec<TangentField>,
    /// Mean tangent field of the embedding.
    pub mean: TangentField,
    /// `projections[i][l]` is the coefficient of sample `i` on mode `l`.
    pub projections: Vec<Vec<f64>>,
}

/// Runs PCA on the embedded samples via the Gram matrix of centered
/// fields: eigenvalues are variances (Gram eigenvalues over the sample
/// count), modes are the corresponding unit-norm fields, and projections
/// reconstruct each sample as `mean + sum_l proj[i][l] mode_l`.
///
/// # Errors
///
/// `InvalidInput` if the set is empty or shapes are inconsistent.
pub fn pca(set: &EmbeddingSet) -> Result<PcaResult> {
    let n = set.fields.len();
    if n == 0 {
        return Err(Error::InvalidInput("no samples to analyze".into()));
    }
    for f in &set.fields {
        check_field(&set.reference, f)?;
    }
    let aw = set.metric.alpha_weight();
    let (atoms, dim) = set.fields[0].shape();

    let mut mean = TangentField::zeros(atoms, dim);
    for f in &set.fields {
        mean.add_scaled(1.0 / n as f64, f);
    }
    let centered: Vec<TangentField> = set
        .fields
        .iter()
        .map(|f| {
            let mut c = f.clone();
            c.add_scaled(-1.0, &mean);
            c
        })
        .collect();

    let mut gram = DMatrix::zeros(n, n);
    for i in 0..n {
        for j in i..n {
            let g = weighted_inner_unchecked(&set.reference, aw, &centered[i], &centered[j]);
            gram[(i, j)] = g;
            gram[(j, i)] = g;
        }
    }
    let eigen = SymmetricEigen::new(gram);
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| {
        eigen.eigenvalues[b]
            .partial_cmp(&eigen.eigenvalues[a])
            .expect("Gram eigenvalues are finite")
    });

    let thetas: Vec<f64> = order
        .iter()
        .map(|&l| eigen.eigenvalues[l].max(0.0))
        .collect();
    let eigenvalues: Vec<f64> = thetas.iter().map(|t| t / n as f64).collect();
    let theta_lead = thetas.first().copied().unwrap_or(0.0);

    let mut modes = Vec::new();
    let mut kept = Vec::new();
    for (rank, &l) in order.iter().enumerate() {
        let theta = thetas[rank];
        if theta <= RANK_TOL * theta_lead || theta <= 0.0 {
            break;
        }
        let mut mode = TangentField::zeros(atoms, dim);
        for (i, c) in centered.iter().enumerate() {
            mode.add_scaled(eigen.eigenvectors[(i, l)] / theta.sqrt(), c);
        }
        modes.push(mode);
        kept.push((l, theta));
    }

    let projections: Vec<Vec<f64>> = (0..n)
        .map(|i| {
            kept.iter()
                .map(|&(l, theta)| theta.sqrt() * eigen.eigenvectors[(i, l)])
                .collect()
        })
        .collect();

    Ok(PcaResult {
        reference: set.reference.clone(),
        metric: set.metric,
        eigenvalues,
        modes,
        mean,
        projections,
    })
}

/// Coefficients of an external field on the result's modes (after
/// centering by the mean): `proj_l = <field - mean, mode_l>`.
///
/// # Errors
///
/// `InvalidInput` if the field's shape does not match the reference.
pub fn project_field(result: &PcaResult, field: &TangentField) -> Result<Vec<f64>> {
    check_field(&result.reference, field)?;
    let aw = result.metric.alpha_weight();
    let mut centered = field.clone();
    centered.add_scaled(-1.0, &result.mean);
    Ok(result
        .modes
        .iter()
        .map(|m| weighted_inner_unchecked(&result.reference, aw, &centered, m))
        .collect())
}

/// Measures along a principal-mode geodesic sweep.
#[derive(Debug, Clone)]
pub struct ShootResult {
    pub measures: Vec<DiscreteMeasure>,
    pub t_values: Vec<f64>,
    /// True when the sweep range was cut short of `[-sigma, sigma]`
    /// because the path would leave the admissible tangent region.
    pub truncated: bool,
}

/// Sweeps the geodesic `exp(mean + t * mode)` for `steps` equally spaced
/// `t` in `[-sigma, sigma]`. Under the soft-marginal metric the range is
/// truncated where some mass rate would drop below `-2`; under the
/// spherical metric, where the tangent norm would reach the injectivity
/// radius `kappa pi/2` or the pulled-back mass rates would leave the
/// cone (spherical sweeps are normalized back to probability measures).
///
/// # Errors
///
/// `InvalidInput` for empty sweeps or an inadmissible mean.
pub fn shoot(
    reference: &DiscreteMeasure,
    mean: &TangentField,
    mode: &TangentField,
    sigma: f64,
    steps: usize,
    metric: Metric,
) -> Result<ShootResult> {
    check_field(reference, mean)?;
    check_field(reference, mode)?;
    if steps == 0 {
        return Err(Error::InvalidInput("steps must be positive".into()));
    }
    if !(sigma >= 0.0) || !sigma.is_finite() {
        return Err(Error::InvalidInput(format!(
            "sigma must be nonnegative and finite, got {sigma}"
        )));
    }

    let (mut lo, mut hi) = (-sigma, sigma);
    match metric {
        Metric::W2 => {}
        Metric::Hk { .. } => {
            for (a0, da) in mean.alpha.iter().zip(&mode.alpha) {
                // Admissibility a0 + t*da >= -2 bounds t on one side.
                if *a0 < -2.0 - 1e-12 {
                    return Err(Error::InvalidInput(
                        "mean field is already past the destruction boundary".into(),
                    ));
                }
                if *da > 0.0 {
                    lo = lo.max((-2.0 - a0) / da);
                } else if *da < 0.0 {
                    hi = hi.min((-2.0 - a0) / da);
                }
            }
        }
        Metric::Shk { kappa } => {
            // Two constraints bound the sweep. The squared norm of
            // mean + t*mode is quadratic in t and must stay strictly
            // inside the injectivity radius; and the mass rates after
            // pulling back to the cone must stay above -2 (destruction
            // directions exit the cone before the norm bound does).
            let aw = metric.alpha_weight();
            let c0 = weighted_inner_unchecked(reference, aw, mean, mean);
            let c1 = weighted_inner_unchecked(reference, aw, mean, mode);
            let c2 = weighted_inner_unchecked(reference, aw, mode, mode);
            let bound = (kappa * std::f64::consts::FRAC_PI_2).powi(2) * (1.0 - 1e-12);
            let mass_floor = 1e-12 * reference.total_mass();
            let manifold = *reference.manifold();
            let feasible = |t: f64| -> bool {
                let norm_sq = c0 + 2.0 * c1 * t + c2 * t * t;
                if norm_sq >= bound {
                    return false;
                }
                let arc = norm_sq.max(0.0).sqrt() / kappa;
                let sp = crate::manifold::x_over_sin_guarded(arc);
                let ratio = 2.0 * (1.0 - arc.cos());
                // Pull the rates and velocities back to the cone and
                // check admissibility plus a positive remaining mass
                // (a fully destroyed measure cannot be normalized).
                let mut mass = 0.0;
                for (k, m) in reference.masses().iter().enumerate() {
                    let a = (mean.alpha[k] + t * mode.alpha[k]) / sp - ratio;
                    if a < -2.0 {
                        return false;
                    }
                    let comps: Vec<f64> = mean.v[k]
                        .iter()
                        .zip(&mode.v[k])
                        .map(|(mv, dv)| (mv + t * dv) / sp)
                        .collect();
                    let speed_sq = manifold
                        .inner_at(&reference.points()[k], &comps, &comps)
                        .max(0.0);
                    let h = 1.0 + a / 2.0;
                    mass += m * (h * h + speed_sq / (kappa * kappa));
                }
                mass > mass_floor
            };
            if !feasible(0.0) {
                return Err(Error::InvalidInput(
                    "mean field is outside the admissible spherical region".into(),
                ));
            }
            hi = largest_feasible(&feasible, hi);
            lo = -largest_feasible(&|t| feasible(-t), -lo);
        }
    }
    let truncated = lo > -sigma || hi < sigma;
    if lo > hi {
        return Err(Error::InvalidInput(
            "admissible sweep range is empty".into(),
        ));
    }

    let t_values = linspace(lo, hi, steps);
    let manifold = reference.manifold();
    let mut measures = Vec::with_capacity(steps);
    for &t in &t_values {
        let mut field = mean.clone();
        field.add_scaled(t, mode);
        let velocities = field
            .v
            .iter()
            .zip(reference.points())
            .map(|(comps, x)| manifold.tangent(x.clone(), comps.clone()))
            .collect::<Result<Vec<_>>>()?;
        let measure = match metric {
            Metric::W2 => exp_w2(&W2Tangent::new(reference.clone(), velocities)?)?,
            Metric::Hk { kappa } => exp_hk(&HkTangent::new(
                reference.clone(),
                velocities,
                field.alpha,
                DiscreteMeasure::empty(*manifold),
                kappa,
                0.0,
            )?)?,
            Metric::Shk { kappa } => {
                let spherical = ShkTangent::from_components(
                    reference.clone(),
                    velocities,
                    field.alpha,
                    DiscreteMeasure::empty(*manifold),
                    kappa,
                    0.0,
                )?;
                exp_hk(&shk_to_hk(&spherical)?)?.normalize()?
            }
        };
        measures.push(measure);
    }
    Ok(ShootResult {
        measures,
        t_values,
        truncated,
    })
}

/// Largest `t` in `[0, limit]` for which `feasible` holds, assuming the
/// feasible set is an interval containing 0 (bisection to round-off).
fn largest_feasible(feasible: &dyn Fn(f64) -> bool, limit: f64) -> f64 {
    debug_assert!(limit >= 0.0);
    if feasible(limit) {
        return limit;
    }
    let (mut ok, mut bad) = (0.0f64, limit);
    for _ in 0..80 {
        let mid = 0.5 * (ok + bad);
        if feasible(mid) {
            ok = mid;
        } else {
            bad = mid;
        }
    }
    ok
}

fn linspace(lo: f64, hi: f64, steps: usize) -> Vec<f64> {
    if steps == 1 {
        return vec![0.5 * (lo + hi)];
    }
    (0..steps)
        .map(|i| lo + (hi - lo) * i as f64 / (steps - 1) as f64)
        .collect()
}

/// One length scale's comparison against the balanced limit.
#[derive(Debug, Clone, Serialize)]
pub struct KappaStudyPoint {
    pub kappa: f64,
    /// `L^2(mu0)` distance between the soft-marginal and balanced
    /// velocity fields.
    pub velocity_gap: f64,
    /// `L^2(mu0)` norm of the mass rates.
    pub alpha_norm: f64,
    /// Squared soft-marginal transport value.
    pub hk_value: f64,
}

/// How soft-marginal transport converges to balanced transport as the
/// length scale grows.
#[derive(Debug, Clone, Serialize)]
pub struct KappaStudy {
    pub points: Vec<KappaStudyPoint>,
    /// Squared balanced transport value.
    pub w2_value: f64,
    /// Velocity gaps shrink as `kappa` grows (within solver slack).
    pub gap_decreasing: bool,
    /// Transport values grow with `kappa` (within solver slack).
    pub value_increasing: bool,
    /// Every transport value stays below the balanced value (within
    /// solver slack).
    pub value_below_w2: bool,
    /// Entropic slack used in the three flags.
    pub comparison_slack: f64,
}

/// Solves the same pair at several length scales and against the balanced
/// metric, recording velocity-field gaps, mass-rate norms, and values.
/// The measures must have equal total mass (the balanced solve requires
/// it); `kappas` must be strictly increasing.
///
/// # Errors
///
/// Solver errors propagate; `InvalidInput` for an unsorted scale list.
pub fn kappa_study(
    mu0: &DiscreteMeasure,
    mu1: &DiscreteMeasure,
    kappas: &[f64],
    config: &SolverConfig,
) -> Result<KappaStudy> {
    if kappas.is_empty() || kappas.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::InvalidInput(
            "length scales must be strictly increasing and nonempty".into(),
        ));
    }
    let manifold = mu0.manifold();
    let w2_solution = solve_w2(mu0, mu1, config)?;
    let w2_value = w2_solution.plan.value();
    let w2_field = TangentField::from_w2(&log_w2(mu0, mu1, &w2_solution.plan)?);

    let mut points = Vec::with_capacity(kappas.len());
    let mut max_epsilon = w2_solution.epsilon;
    for &kappa in kappas {
        let sol = solve_hk(mu0, mu1, kappa, config)?;
        max_epsilon = max_epsilon.max(sol.epsilon);
        let t = log_hk(mu0, mu1, &sol.plan, kappa)?;
        let field = TangentField::from_hk(&t);
        let gap_sq: f64 = mu0
            .masses()
            .iter()
            .enumerate()
            .map(|(k, m)| {
                let diff: Vec<f64> = field.v[k]
                    .iter()
                    .zip(&w2_field.v[k])
                    .map(|(a, b)| a - b)
                    .collect();
                m * manifold.inner_at(&mu0.points()[k], &diff, &diff)
            })
            .sum();
        let alpha_sq: f64 = mu0
            .masses()
            .iter()
            .zip(&field.alpha)
            .map(|(m, a)| m * a * a)
            .sum();
        points.push(KappaStudyPoint {
            kappa,
            velocity_gap: gap_sq.max(0.0).sqrt(),
            alpha_norm: alpha_sq.max(0.0).sqrt(),
            hk_value: sol.plan.value(),
        });
    }

    // Entropic values carry an O(epsilon) bias, so the qualitative flags
    // allow a matching slack.
    let slack = 50.0 * max_epsilon * (mu0.total_mass() + mu1.total_mass());
    let gap_decreasing = points
        .windows(2)
        .all(|w| w[1].velocity_gap <= w[0].velocity_gap + slack);
    let value_increasing = points
        .windows(2)
        .all(|w| w[1].hk_value >= w[0].hk_value - slack);
    let value_below_w2 = points.iter().all(|p| p.hk_value <= w2_value + slack);
    Ok(KappaStudy {
        points,
        w2_value,
        gap_decreasing,
        value_increasing,
        value_below_w2,
        comparison_slack: slack,
    })
}

/// Coarsens a measure onto a uniform grid with `bins` cells per axis over
/// its own bounding box: each nonempty cell becomes one atom at the
/// mass-weighted centroid of its atoms (projected back onto curved
/// manifolds), carrying their total mass.
///
/// # Errors
///
/// `InvalidInput` if `bins` is zero or a spherical cell's centroid sits
/// at the center of the sphere (no projection).
pub fn regrid(mu: &DiscreteMeasure, bins: usize) -> Result<DiscreteMeasure> {
    if bins == 0 {
        return Err(Error::InvalidInput("bins must be positive".into()));
    }
    let manifold = mu.manifold();
    if mu.is_empty() {
        return Ok(mu.clone());
    }
    // Bin on the coordinates that determine the point: all of them on
    // flat space and the sphere, the spatial part on the hyperboloid
    // (whose zeroth coordinate is derived).
    let skip = match manifold {
        Manifold::Hyperbolic => 1,
        _ => 0,
    };
    let dim = manifold.ambient_dim() - skip;
    let mut lo = vec![f64::INFINITY; dim];
    let mut hi = vec![f64::NEG_INFINITY; dim];
    for p in mu.points() {
        for (a, c) in p.coords()[skip..].iter().enumerate() {
            lo[a] = lo[a].min(*c);
            hi[a] = hi[a].max(*c);
        }
    }
    let mut cells: BTreeMap<usize, (f64, Vec<f64>)> = BTreeMap::new();
    for (p, mass) in mu.points().iter().zip(mu.masses()) {
        if *mass == 0.0 {
            continue;
        }
        let mut index = 0usize;
        for (a, c) in p.coords()[skip..].iter().enumerate() {
            let width = hi[a] - lo[a];
            let bin = if width > 0.0 {
                (((c - lo[a]) / width * bins as f64) as usize).min(bins - 1)
            } else {
                0
            };
            index = index * bins + bin;
        }
        let entry = cells.entry(index).or_insert_with(|| (0.0, vec![0.0; dim]));
        entry.0 += mass;
        for (s, c) in entry.1.iter_mut().zip(&p.coords()[skip..]) {
            *s += mass * c;
        }
    }
    let mut points = Vec::with_capacity(cells.len());
    let mut masses = Vec::with_capacity(cells.len());
    for (mass, sums) in cells.into_values() {
        let centroid: Vec<f64> = sums.iter().map(|s| s / mass).collect();
        let coords = match manifold {
            Manifold::Euclidean { .. } => centroid,
            Manifold::Sphere { radius } => {
                let norm: f64 = centroid.iter().map(|c| c * c).sum::<f64>().sqrt();
                if norm <= 1e-12 * radius {
                    return Err(Error::InvalidInput(
                        "cell centroid sits at the sphere center; cannot project".into(),
                    ));
                }
                centroid.iter().map(|c| c * radius / norm).collect()
            }
            Manifold::Hyperbolic => {
                let spatial_sq: f64 = centroid.iter().map(|c| c * c).sum();
                let mut coords = vec![(1.0 + spatial_sq).sqrt()];
                coords.extend(centroid);
                coords
            }
        };
        points.push(manifold.point(coords)?);
        masses.push(mass);
    }
    DiscreteMeasure::new(*manifold, points, masses)
}

/// Convergence of tangent moments under grid refinement.
#[derive(Debug, Clone, Serialize)]
pub struct RefinementStudy {
    pub resolutions: Vec<usize>,
    /// Name of each moment entry (test function times field component).
    pub moment_labels: Vec<String>,
    /// One moment vector per resolution (the last row is the reference).
    pub moments: Vec<Vec<f64>>,
    /// Max absolute moment deviation from the reference level, one per
    /// non-reference resolution.
    pub deviations: Vec<f64>,
    /// Deviations never increase from the second refinement level on.
    pub monotone_after_first: bool,
    /// The finest non-reference deviation is below [`Self::tolerance`].
    pub final_below_tolerance: bool,
    pub tolerance: f64,
}

/// Tolerance that the finest refinement level's moment deviation must
/// meet in [`refinement_study`].
pub const REFINEMENT_TOL: f64 = 5e-3;

/// Coarsens a fine pair to each resolution, solves and takes the
/// logarithm at each level, and compares moments of the velocity and
/// mass-rate fields (test functions: constants, coordinates, squares,
/// and pairwise products) against the finest level, which serves as the
/// reference.
///
/// # Errors
///
/// `InvalidInput` unless `resolutions` is strictly increasing with at
/// least two entries; solver and logarithm errors propagate.
pub fn refinement_study(
    mu0_fine: &DiscreteMeasure,
    mu1_fine: &DiscreteMeasure,
    resolutions: &[usize],
    metric: Metric,
    config: &SolverConfig,
) -> Result<RefinementStudy> {
    if resolutions.len() < 2 || resolutions.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::InvalidInput(
            "resolutions must be strictly increasing with at least two levels".into(),
        ));
    }
    let mut moments = Vec::with_capacity(resolutions.len());
    let mut labels: Option<Vec<String>> = None;
    for &n in resolutions {
        let mu0 = regrid(mu0_fine, n)?;
        let mu1 = regrid(mu1_fine, n)?;
        let field = embed_one(&mu0, &mu1, metric, config)?;
        let (m, l) = field_moments(&mu0, &field);
        moments.push(m);
        labels.get_or_insert(l);
    }
    let reference = moments.last().expect("at least two levels").clone();
    let deviations: Vec<f64> = moments[..moments.len() - 1]
        .iter()
        .map(|m| {
            m.iter()
                .zip(&reference)
                .map(|(a, b)| (a - b).abs())
                .fold(0.0, f64::max)
        })
        .collect();
    let monotone_after_first = deviations.windows(2).skip(1).all(|w| w[1] <= w[0] + 1e-9);
    let final_below_tolerance = deviations.last().is_some_and(|d| *d < REFINEMENT_TOL);
    Ok(RefinementStudy {
        resolutions: resolutions.to_vec(),
        moment_labels: labels.unwrap_or_default(),
        moments,
        deviations,
        monotone_after_first,
        final_below_tolerance,
        tolerance: REFINEMENT_TOL,
    })
}

/// A named test function of the atom coordinates.
type TestFunction = (String, Box<dyn Fn(&[f64]) -> f64>);

/// Integrates the velocity components and mass rate against low-order
/// polynomial test functions under the reference measure.
fn field_moments(mu0: &DiscreteMeasure, field: &TangentField) -> (Vec<f64>, Vec<String>) {
    let dim = mu0.manifold().ambient_dim();
    // Test functions of the atom coordinates: 1, x_a, x_a^2, x_a x_b.
    let mut phis: Vec<TestFunction> = Vec::new();
    phis.push(("1".into(), Box::new(|_: &[f64]| 1.0)));
    for a in 0..dim {
        phis.push((format!("x{}", a + 1), Box::new(move |c: &[f64]| c[a])));
    }
    for a in 0..dim {
        phis.push((
            format!("x{}^2", a + 1),
            Box::new(move |c: &[f64]| c[a] * c[a]),
        ));
    }
    for a in 0..dim {
        for b in (a + 1)..dim {
            phis.push((
                format!("x{}x{}", a + 1, b + 1),
                Box::new(move |c: &[f64]| c[a] * c[b]),
            ));
        }
    }
    let mut values = Vec::new();
    let mut labels = Vec::new();
    for (name, phi) in &phis {
        for comp in 0..dim {
            let v: f64 = mu0
                .points()
                .iter()
                .zip(mu0.masses())
                .enumerate()
                .map(|(k, (p, m))| m * phi(p.coords()) * field.v[k][comp])
                .sum();
            values.push(v);
            labels.push(format!("{name}*v{}", comp + 1));
        }
        let a: f64 = mu0
            .points()
            .iter()
            .zip(mu0.masses())
            .enumerate()
            .map(|(k, (p, m))| m * phi(p.coords()) * field.alpha[k])
            .sum();
        values.push(a);
        labels.push(format!("{name}*alpha"));
    }
    (values, labels)
}

/// Separation between the two unit blocks in the mass-swap family (far
/// enough that no transport between blocks is possible at unit length
/// scale).
pub const MASS_SWAP_SEPARATION: f64 = 3.0;

/// The mass-swap family on the line: `mu0` puts mass `1 - 1/n` uniformly
/// on `[0, 1]` and `1/n` on the far block; `mu1` swaps the two masses.
/// Each block is a grid of `n` atoms. As `n` grows, the pair approaches
/// two unit blocks with nothing in common — yet at every finite `n` the
/// optimal soft-marginal plan only reweights in place.
///
/// # Errors
///
/// `InvalidInput` if `n < 2`.
pub fn mass_swap_pair(n: usize) -> Result<(DiscreteMeasure, DiscreteMeasure)> {
    if n < 2 {
        return Err(Error::InvalidInput("need at least two atoms".into()));
    }
    let heavy = 1.0 - 1.0 / n as f64;
    let light = 1.0 / n as f64;
    let mu0 = two_block_measure(n, heavy, light)?;
    let mu1 = two_block_measure(n, light, heavy)?;
    Ok((mu0, mu1))
}

/// The limit of the mass-swap family: all of `mu0` on `[0, 1]`, all of
/// `mu1` on the far block. At unit length scale every pairing is beyond
/// the transport horizon, so the optimal plan is empty and the whole
/// target is singular.
///
/// # Errors
///
/// `InvalidInput` if `n < 2`.
pub fn mass_swap_limit(n: usize) -> Result<(DiscreteMeasure, DiscreteMeasure)> {
    if n < 2 {
        return Err(Error::InvalidInput("need at least two atoms".into()));
    }
    let mu0 = two_block_measure(n, 1.0, 0.0)?.subset(|k| k < n);
    let mu1 = two_block_measure(n, 0.0, 1.0)?.subset(|k| k >= n);
    Ok((mu0, mu1))
}

fn two_block_measure(n: usize, mass0: f64, mass1: f64) -> Result<DiscreteMeasure> {
    let line = Manifold::Euclidean { dim: 1 };
    let mut coords = Vec::with_capacity(2 * n);
    let mut masses = Vec::with_capacity(2 * n);
    for k in 0..n {
        coords.push(vec![(k as f64 + 0.5) / n as f64]);
        masses.push(mass0 / n as f64);
    }
    for k in 0..n {
        coords.push(vec![MASS_SWAP_SEPARATION + (k as f64 + 0.5) / n as f64]);
        masses.push(mass1 / n as f64);
    }
    DiscreteMeasure::from_coords(line, &coords, masses)
}

/// Closed-form squared soft-marginal distance of [`mass_swap_pair`] at
/// unit length scale: transport happens only in place, so the value is a
/// pure reweighting cost.
pub fn mass_swap_exact_value(n: usize) -> f64 {
    let heavy = 1.0 - 1.0 / n as f64;
    let light = 1.0 / n as f64;
    2.0 * (heavy.sqrt() - light.sqrt()).powi(2)
}

/// Behavior of the mass-swap family across resolutions, against its
/// degenerate limit.
#[derive(Debug, Clone, Serialize)]
pub struct MassSwapStudy {
    pub n_values: Vec<usize>,
    pub hk_values: Vec<f64>,
    pub exact_values: Vec<f64>,
    pub singular_masses: Vec<f64>,
    /// Singular mass of the limit pair's logarithm (its whole target).
    pub limit_singular_mass: f64,
    /// Every finite-resolution logarithm had zero singular mass.
    pub finite_singular_free: bool,
    /// The limit pair's tangent is entirely singular.
    pub limit_fully_singular: bool,
}

/// Solves the mass-swap family at unit length scale for each resolution
/// and at the limit pair, recording values and singular masses. The
/// family demonstrates that the singular part can appear discontinuously
/// in the limit while being absent at every finite resolution.
///
/// # Errors
///
/// `InvalidInput` for an empty or unsorted resolution list; solver errors
/// propagate.
pub fn mass_swap_study(n_values: &[usize], config: &SolverConfig) -> Result<MassSwapStudy> {
    if n_values.is_empty() || n_values.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::InvalidInput(
            "resolutions must be strictly increasing and nonempty".into(),
        ));
    }
    let kappa = 1.0;
    let mut hk_values = Vec::new();
    let mut exact_values = Vec::new();
    let mut singular_masses = Vec::new();
    for &n in n_values {
        let (mu0, mu1) = mass_swap_pair(n)?;
        let sol = solve_hk(&mu0, &mu1, kappa, config)?;
        let t = log_hk(&mu0, &mu1, &sol.plan, kappa)?;
        hk_values.push(sol.plan.value());
        exact_values.push(mass_swap_exact_value(n));
        singular_masses.push(t.singular().total_mass());
    }
    let n_limit = *n_values.last().expect("nonempty");
    let (mu0, mu1) = mass_swap_limit(n_limit)?;
    let sol = solve_hk(&mu0, &mu1, kappa, config)?;
    let t = log_hk(&mu0, &mu1, &sol.plan, kappa)?;
    let limit_singular_mass = t.singular().total_mass();
    let finite_singular_free = singular_masses.iter().all(|m| *m == 0.0);
    let limit_fully_singular =
        (limit_singular_mass - mu1.total_mass()).abs() <= 1e-12 * mu1.total_mass().max(1.0);
    Ok(MassSwapStudy {
        n_values: n_values.to_vec(),
        hk_values,
        exact_values,
        singular_masses,
        limit_singular_mass,
        finite_singular_free,
        limit_fully_singular,
    })
}

/// A self-transport pair with a prescribed plan that sends a vanishing
/// mass fraction almost to the transport horizon: two identical blocks on
/// the line, separation just under `pi/2`, with plan
/// `(1 - 1/n) identity + (1/n) shift`.
///
/// The barycentric velocity on the first block is
/// `(1/n) tan(pi/2 - 1/n) -> 1`, although the transported mass vanishes:
/// barycentric moments need not converge to the moments of the limit
/// plan when mass concentrates near the horizon.
///
/// # Errors
///
/// `InvalidInput` if `n < 2`.
pub fn near_cut_shift_pair(n: usize) -> Result<(DiscreteMeasure, DiscreteMeasure, TransportPlan)> {
    if n < 2 {
        return Err(Error::InvalidInput("need at least two atoms".into()));
    }
    let line = Manifold::Euclidean { dim: 1 };
    let shift = std::f64::consts::FRAC_PI_2 - 1.0 / n as f64;
    let mut coords = Vec::with_capacity(2 * n);
    for k in 0..n {
        coords.push(vec![(k as f64 + 0.5) / n as f64]);
    }
    for k in 0..n {
        coords.push(vec![shift + (k as f64 + 0.5) / n as f64]);
    }
    let masses = vec![1.0 / n as f64; 2 * n];
    let mu = DiscreteMeasure::from_coords(line, &coords, masses)?;
    let unit = 1.0 / n as f64;
    let mut matrix = DMatrix::zeros(2 * n, 2 * n);
    for i in 0..2 * n {
        matrix[(i, i)] = (1.0 - unit) * unit;
    }
    for k in 0..n {
        // Atom k of the first block also sends a sliver to atom k of the
        // second block, a distance just under the horizon away.
        matrix[(k, n + k)] = unit * unit;
    }
    let plan = TransportPlan::from_matrix(matrix, 0.0)?;
    Ok((mu.clone(), mu, plan))
}

/// First velocity moments of the near-horizon shift family.
#[derive(Debug, Clone, Serialize)]
pub struct NearCutStudy {
    pub n_values: Vec<usize>,
    /// `integral of v d mu0` at each resolution.
    pub first_moments: Vec<f64>,
    /// The moment of the limiting plan (the identity): zero.
    pub true_limit: f64,
    /// The moments converge away from the true limit (towards 1).
    pub diverges_from_true_limit: bool,
}

/// Evaluates the first velocity moment of [`near_cut_shift_pair`] across
/// resolutions, exhibiting non-convergence of barycentric moments under
/// mass concentration at the horizon.
///
/// # Errors
///
/// `InvalidInput` for an empty or unsorted resolution list.
pub fn near_cut_study(n_values: &[usize]) -> Result<NearCutStudy> {
    if n_values.is_empty() || n_values.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::InvalidInput(
            "resolutions must be strictly increasing and nonempty".into(),
        ));
    }
    let kappa = 1.0;
    let mut first_moments = Vec::new();
    for &n in n_values {
        let (mu0, mu1, plan) = near_cut_shift_pair(n)?;
        let t = log_hk(&mu0, &mu1, &plan, kappa)?;
        let moment: f64 = mu0
            .masses()
            .iter()
            .zip(t.velocities())
            .map(|(m, v)| m * v.comps()[0])
            .sum();
        first_moments.push(moment);
    }
    let last = *first_moments.last().expect("nonempty");
    Ok(NearCutStudy {
        n_values: n_values.to_vec(),
        first_moments,
        true_limit: 0.0,
        diverges_from_true_limit: (last - 0.0).abs() > 0.5,
    })
}

/// Margins of the two-point geodesic interpolation test.
#[derive(Debug, Clone, Serialize)]
pub struct ConvexityProbe {
    pub t_values: Vec<f64>,
    /// Swapped-minus-diagonal pairing cost at each interpolation time;
    /// nonnegative margins mean the interpolated assignment stays
    /// optimal (the convexity proxy holds).
    pub margins: Vec<f64>,
    pub passes: Vec<bool>,
    pub all_pass: bool,
    pub tolerance: f64,
}

/// Probes geodesic convexity of the metric between a two-atom source
/// `(x0, x1)` (half mass each) and two single-atom targets `y0`, `y1`:
/// the transport tangents towards both targets are interpolated, pushed
/// forward at each `t`, and the diagonal pairing's cost compared against
/// the swapped pairing's. A negative margin exhibits a convexity failure.
///
/// # Errors
///
/// Solver, logarithm, and cut-locus errors propagate. `Unsupported` if an
/// interpolated atom is destroyed (no pairing to compare).
#[allow(clippy::too_many_arguments)]
pub fn convexity_probe(
    manifold: &Manifold,
    x0: &Point,
    x1: &Point,
    y0: &Point,
    y1: &Point,
    metric: Metric,
    t_list: &[f64],
    tolerance: f64,
    config: &SolverConfig,
) -> Result<ConvexityProbe> {
    let margins = match metric {
        Metric::W2 => w2_probe_margins(manifold, x0, x1, y0, y1, t_list)?,
        Metric::Hk { kappa } => {
            hk_probe_margins(manifold, x0, x1, y0, y1, kappa, t_list, false, config)?
        }
        Metric::Shk { kappa } => {
            hk_probe_margins(manifold, x0, x1, y0, y1, kappa, t_list, true, config)?
        }
    };
    let passes: Vec<bool> = margins.iter().map(|m| *m >= -tolerance).collect();
    let all_pass = passes.iter().all(|p| *p);
    Ok(ConvexityProbe {
        t_values: t_list.to_vec(),
        margins,
        passes,
        all_pass,
        tolerance,
    })
}

fn w2_probe_margins(
    manifold: &Manifold,
    x0: &Point,
    x1: &Point,
    y0: &Point,
    y1: &Point,
    t_list: &[f64],
) -> Result<Vec<f64>> {
    let sources = [x0, x1];
    let mut margins = Vec::with_capacity(t_list.len());
    for &t in t_list {
        let mut images = Vec::with_capacity(2);
        for x in sources {
            let to0 = manifold.log(x, y0)?;
            let to1 = manifold.log(x, y1)?;
            let comps: Vec<f64> = to0
                .comps()
                .iter()
                .zip(to1.comps())
                .map(|(a, b)| (1.0 - t) * a + t * b)
                .collect();
            images.push(manifold.exp(&manifold.tangent(x.clone(), comps)?));
        }
        let d = |a: &Point, b: &Point| -> Result<f64> { Ok(manifold.dist(a, b)?.powi(2)) };
        let swapped = d(x0, &images[1])? + d(x1, &images[0])?;
        let diagonal = d(x0, &images[0])? + d(x1, &images[1])?;
        margins.push(swapped - diagonal);
    }
    Ok(margins)
}

#[allow(clippy::too_many_arguments)]
fn hk_probe_margins(
    manifold: &Manifold,
    x0: &Point,
    x1: &Point,
    y0: &Point,
    y1: &Point,
    kappa: f64,
    t_list: &[f64],
    spherical: bool,
    config: &SolverConfig,
) -> Result<Vec<f64>> {
    let mu = DiscreteMeasure::new(*manifold, vec![x0.clone(), x1.clone()], vec![0.5, 0.5])?;
    let mut endpoint_fields = Vec::with_capacity(2);
    for y in [y0, y1] {
        let nu = DiscreteMeasure::dirac(*manifold, y.clone(), 1.0)?;
        let sol = solve_hk(&mu, &nu, kappa, config)?;
        let t = log_hk(&mu, &nu, &sol.plan, kappa)?;
        ensure_no_singular(&t)?;
        if spherical {
            endpoint_fields.push(TangentField::from_shk(&hk_to_shk(&rescale_to_unit_mass(
                &t,
            )?)?));
        } else {
            endpoint_fields.push(TangentField::from_hk(&t));
        }
    }

    let mut margins = Vec::with_capacity(t_list.len());
    for &t in t_list {
        let mut field = endpoint_fields[0].clone();
        field.add_scaled(-t, &endpoint_fields[0]);
        field.add_scaled(t, &endpoint_fields[1]);
        let velocities = field
            .v
            .iter()
            .zip(mu.points())
            .map(|(comps, x)| manifold.tangent(x.clone(), comps.clone()))
            .collect::<Result<Vec<_>>>()?;
        let interpolated = if spherical {
            shk_to_hk(&ShkTangent::from_components(
                mu.clone(),
                velocities,
                field.alpha,
                DiscreteMeasure::empty(*manifold),
                kappa,
                0.0,
            )?)?
        } else {
            HkTangent::new(
                mu.clone(),
                velocities,
                field.alpha,
                DiscreteMeasure::empty(*manifold),
                kappa,
                0.0,
            )?
        };
        let nu_t = exp_hk(&interpolated)?;
        if nu_t.len() != 2 {
            return Err(Error::Unsupported(
                "an interpolated atom was destroyed; no pairing to compare".into(),
            ));
        }
        let pairing_cost = |assignment: [(usize, usize); 2]| -> Result<f64> {
            let mut matrix = DMatrix::zeros(2, 2);
            for (i, j) in assignment {
                let coupling = crate::oracle::hk_dirac_closed_form(
                    manifold,
                    mu.masses()[i],
                    &mu.points()[i],
                    nu_t.masses()[j],
                    &nu_t.points()[j],
                    kappa,
                )?;
                matrix[(i, j)] = coupling.plan_mass;
            }
            let plan = TransportPlan::from_matrix(matrix, 0.0)?;
            primal_value_hk(&plan, &mu, &nu_t, kappa)
        };
        let diagonal = pairing_cost([(0, 0), (1, 1)])?;
        let swapped = pairing_cost([(0, 1), (1, 0)])?;
        margins.push(swapped - diagonal);
    }
    Ok(margins)
}

/// Places a symmetric probe configuration around a center point: sources
/// at `±a` along the first tangent basis direction, targets at `±b`
/// along the second.
///
/// # Errors
///
/// `InvalidInput` if the manifold has fewer than two intrinsic
/// dimensions.
pub fn symmetric_probe_points(
    manifold: &Manifold,
    center: &Point,
    a: f64,
    b: f64,
) -> Result<(Point, Point, Point, Point)> {
    let basis = manifold.tangent_basis(center);
    if basis.len() < 2 {
        return Err(Error::InvalidInput(
            "the probe needs at least two intrinsic dimensions".into(),
        ));
    }
    Ok((
        manifold.exp(&basis[0].scaled(a)),
        manifold.exp(&basis[0].scaled(-a)),
        manifold.exp(&basis[1].scaled(b)),
        manifold.exp(&basis[1].scaled(-b)),
    ))
}
