//! Tangent-space representations of transport: barycentric logarithm
//! maps, exponential maps, and geodesics.
//!
//! A transport plan from a reference measure `mu0` to a target `mu1` is
//! compressed into a tangent object anchored at `mu0`:
//!
//! * **Balanced** ([`W2Tangent`]): one velocity vector per reference atom,
//!   the plan-weighted average of the manifold logarithms towards the
//!   targets. Masses never change.
//! * **Soft-marginal** ([`HkTangent`]): a velocity `v_i` and a mass-change
//!   rate `alpha_i >= -2` per reference atom (`alpha = -2` meaning the
//!   atom's mass is destroyed), plus a *singular* measure collecting
//!   target atoms that receive no transported mass and must be created
//!   from nothing, and the length scale `kappa`.
//! * **Spherical** ([`ShkTangent`]): the soft-marginal tangent reweighted
//!   so that its norm equals the arc length of the geodesic on the sphere
//!   of measures obtained by constraining total mass to one.
//!
//! The squared tangent norm
//! `sum_i m0_i (|v_i|^2 + (kappa^2/4) alpha_i^2) + kappa^2 |singular|`
//! reproduces the squared transport distance exactly whenever the plan is
//! deterministic (each atom has a single destination); barycentric
//! averaging of split rows is lossy, as averaging always is.

use crate::manifold::{x_over_sin_guarded, Manifold, Point, TangentVec};
use crate::measure::DiscreteMeasure;
use crate::solver::{DualPotentials, TransportPlan, DEFAULT_MARGINAL_TOL};
use crate::{Error, Result};

/// Distance slack under the transport horizon `kappa pi/2` within which a
/// plan entry counts as sitting on the horizon (where velocities blow up).
const HORIZON_SLACK: f64 = 1e-9;

/// Relative L1 tolerance for a balanced plan's first marginal against the
/// reference masses.
const W2_MARGINAL_TOL: f64 = 1e-6;

/// Balanced tangent: a velocity field over the reference atoms.
#[derive(Debug, Clone)]
pub struct W2Tangent {
    reference: DiscreteMeasure,
    velocities: Vec<TangentVec>,
}

impl W2Tangent {
    /// # Errors
    ///
    /// `InvalidInput` if the velocity count differs from the atom count.
    pub fn new(reference: DiscreteMeasure, velocities: Vec<TangentVec>) -> Result<Self> {
        if velocities.len() != reference.len() {
            return Err(Error::InvalidInput(format!(
                "{} velocities for {} atoms",
                velocities.len(),
                reference.len()
            )));
        }
        Ok(W2Tangent {
            reference,
            velocities,
        })
    }

    pub fn reference(&self) -> &DiscreteMeasure {
        &self.reference
    }

    pub fn velocities(&self) -> &[TangentVec] {
        &self.velocities
    }

    /// Weighted squared norm `sum_i m0_i |v_i|^2`.
    pub fn norm_squared(&self) -> f64 {
        let m = self.reference.manifold();
        self.reference
            .masses()
            .iter()
            .zip(&self.velocities)
            .map(|(mass, v)| mass * m.inner_at(v.base(), v.comps(), v.comps()))
            .sum()
    }
}

/// Soft-marginal tangent: velocities, mass-change rates, and a singular
/// (created-from-nothing) measure, at length scale `kappa`.
#[derive(Debug, Clone)]
pub struct HkTangent {
    reference: DiscreteMeasure,
    velocities: Vec<TangentVec>,
    alpha: Vec<f64>,
    singular: DiscreteMeasure,
    kappa: f64,
    dropped_plan_mass: f64,
}

impl HkTangent {
    /// # Errors
    ///
    /// `InvalidInput` if lengths mismatch, `kappa <= 0`, some
    /// `alpha_i < -2` (mass cannot shrink faster than to zero), or the
    /// singular measure lives on a different manifold.
    pub fn new(
        reference: DiscreteMeasure,
        velocities: Vec<TangentVec>,
        alpha: Vec<f64>,
        singular: DiscreteMeasure,
        kappa: f64,
        dropped_plan_mass: f64,
    ) -> Result<Self> {
        if velocities.len() != reference.len() || alpha.len() != reference.len() {
            return Err(Error::InvalidInput(format!(
                "{} velocities and {} alphas for {} atoms",
                velocities.len(),
                alpha.len(),
                reference.len()
            )));
        }
        if !(kappa > 0.0) || !kappa.is_finite() {
            return Err(Error::InvalidInput(format!(
                "kappa must be positive and finite, got {kappa}"
            )));
        }
        if singular.manifold() != reference.manifold() {
            return Err(Error::InvalidInput(
                "singular part must live on the reference manifold".into(),
            ));
        }
        let mut alpha = alpha;
        for a in alpha.iter_mut() {
            if *a < -2.0 {
                if *a < -2.0 - 1e-12 {
                    return Err(Error::InvalidInput(format!(
                        "alpha must be at least -2, got {a}"
                    )));
                }
                *a = -2.0; // round-off dust below the floor
            }
        }
        Ok(HkTangent {
            reference,
            velocities,
            alpha,
            singular,
            kappa,
            dropped_plan_mass,
        })
    }

    pub fn reference(&self) -> &DiscreteMeasure {
        &self.reference
    }

    pub fn velocities(&self) -> &[TangentVec] {
        &self.velocities
    }

    pub fn alpha(&self) -> &[f64] {
        &self.alpha
    }

    pub fn singular(&self) -> &DiscreteMeasure {
        &self.singular
    }

    pub fn kappa(&self) -> f64 {
        self.kappa
    }

    /// Plan mass that sat on the transport horizon and was discarded by
    /// the logarithm (zero unless the plan had near-horizon entries).
    pub fn dropped_plan_mass(&self) -> f64 {
        self.dropped_plan_mass
    }

    /// Scales the tangent by `s`: velocities and alphas scale linearly,
    /// the singular measure quadratically (its mass grows with the square
    /// of how far along the geodesic it has been created).
    ///
    /// # Errors
    ///
    /// `InvalidInput` when some `s * alpha_i < -2` (the scaled tangent
    /// would shrink mass below zero).
    pub fn scaled(&self, s: f64) -> Result<HkTangent> {
        HkTangent::new(
            self.reference.clone(),
            self.velocities.iter().map(|v| v.scaled(s)).collect(),
            self.alpha.iter().map(|a| a * s).collect(),
            scale_measure(&self.singular, s * s),
            self.kappa,
            self.dropped_plan_mass,
        )
    }
}

/// Spherical tangent: a soft-marginal tangent reweighted onto the unit
/// sphere of measures; `s_prime0 >= 1` is the reweighting derivative at
/// the reference.
#[derive(Debug, Clone)]
pub struct ShkTangent {
    reference: DiscreteMeasure,
    velocities: Vec<TangentVec>,
    alpha: Vec<f64>,
    singular: DiscreteMeasure,
    kappa: f64,
    dropped_plan_mass: f64,
    s_prime0: f64,
}

impl ShkTangent {
    /// Builds a spherical tangent from raw components, deriving the
    /// reweighting derivative from the tangent's own norm (as for a
    /// genuine spherical logarithm).
    ///
    /// # Errors
    ///
    /// `InvalidInput` if lengths mismatch, `kappa` is invalid, the
    /// singular part lives elsewhere, or the norm reaches the injectivity
    /// radius `kappa pi/2`.
    pub fn from_components(
        reference: DiscreteMeasure,
        velocities: Vec<TangentVec>,
        alpha: Vec<f64>,
        singular: DiscreteMeasure,
        kappa: f64,
        dropped_plan_mass: f64,
    ) -> Result<Self> {
        if velocities.len() != reference.len() || alpha.len() != reference.len() {
            return Err(Error::InvalidInput(format!(
                "{} velocities and {} alphas for {} atoms",
                velocities.len(),
                alpha.len(),
                reference.len()
            )));
        }
        if !(kappa > 0.0) || !kappa.is_finite() {
            return Err(Error::InvalidInput(format!(
                "kappa must be positive and finite, got {kappa}"
            )));
        }
        if singular.manifold() != reference.manifold() {
            return Err(Error::InvalidInput(
                "singular part must live on the reference manifold".into(),
            ));
        }
        let mut tangent = ShkTangent {
            reference,
            velocities,
            alpha,
            singular,
            kappa,
            dropped_plan_mass,
            s_prime0: 1.0,
        };
        let shk = norm_shk(&tangent).max(0.0).sqrt();
        if shk >= kappa * std::f64::consts::FRAC_PI_2 {
            return Err(Error::InvalidInput(format!(
                "spherical tangent norm {shk} reaches the injectivity radius {}",
                kappa * std::f64::consts::FRAC_PI_2
            )));
        }
        tangent.s_prime0 = x_over_sin_guarded(shk / kappa);
        Ok(tangent)
    }

    pub fn reference(&self) -> &DiscreteMeasure {
        &self.reference
    }

    pub fn velocities(&self) -> &[TangentVec] {
        &self.velocities
    }

    pub fn alpha(&self) -> &[f64] {
        &self.alpha
    }

    pub fn singular(&self) -> &DiscreteMeasure {
        &self.singular
    }

    pub fn kappa(&self) -> f64 {
        self.kappa
    }

    pub fn dropped_plan_mass(&self) -> f64 {
        self.dropped_plan_mass
    }

    /// Derivative of the sphere reparameterization at the reference point.
    pub fn s_prime0(&self) -> f64 {
        self.s_prime0
    }
}

fn scale_measure(mu: &DiscreteMeasure, factor: f64) -> DiscreteMeasure {
    DiscreteMeasure::new(
        *mu.manifold(),
        mu.points().to_vec(),
        mu.masses().iter().map(|m| m * factor).collect(),
    )
    .expect("scaling nonnegative masses keeps the measure valid")
}

/// Barycentric balanced logarithm: averages the manifold logarithms from
/// each reference atom to its transport destinations,
/// `v_i = sum_j pi_ij Log_{x_i}(y_j) / pi0_i`. Atoms with zero plan
/// marginal get zero velocity.
///
/// # Errors
///
/// * `InvalidPlan` if the plan's first marginal strays from the reference
///   masses by more than `1e-6 max(1, |mu0|)` in L1.
/// * `CutLocus` if the plan charges a pair with no unique shortest path.
/// * `InvalidInput` on dimension or manifold mismatches.
pub fn log_w2(
    mu0: &DiscreteMeasure,
    mu1: &DiscreteMeasure,
    plan: &TransportPlan,
) -> Result<W2Tangent> {
    let manifold = check_pair(mu0, mu1, plan)?;
    let marginal0 = plan.marginal0();
    let drift: f64 = marginal0
        .iter()
        .zip(mu0.masses())
        .map(|(p, m)| (p - m).abs())
        .sum();
    if drift > W2_MARGINAL_TOL * mu0.total_mass().max(1.0) {
        return Err(Error::InvalidPlan(format!(
            "plan marginal deviates from the reference by {drift:.3e} in L1"
        )));
    }
    let mut velocities = Vec::with_capacity(mu0.len());
    for (i, x) in mu0.points().iter().enumerate() {
        let mut comps = vec![0.0; manifold.ambient_dim()];
        if marginal0[i] > 0.0 {
            for (j, y) in mu1.points().iter().enumerate() {
                let w = plan.matrix()[(i, j)];
                if w > 0.0 {
                    let step = manifold.log(x, y)?;
                    for (c, s) in comps.iter_mut().zip(step.comps()) {
                        *c += s * w / marginal0[i];
                    }
                }
            }
        }
        velocities.push(manifold.tangent(x.clone(), comps)?);
    }
    W2Tangent::new(mu0.clone(), velocities)
}

/// Pushes the reference forward along the velocity field: each atom moves
/// to `Exp_{x_i}(v_i)` keeping its mass.
pub fn exp_w2(tangent: &W2Tangent) -> Result<DiscreteMeasure> {
    let manifold = tangent.reference.manifold();
    let points: Vec<Point> = tangent.velocities.iter().map(|v| manifold.exp(v)).collect();
    DiscreteMeasure::new(*manifold, points, tangent.reference.masses().to_vec())
}

/// Barycentric soft-marginal logarithm. Per reference atom,
/// `v_i = (kappa / m0_i) sum_j tan(d_ij/kappa) e_ij pi_ij` with `e_ij`
/// the unit vector towards the destination, and
/// `alpha_i = 2 (pi0_i / m0_i - 1)`; destroyed atoms (zero marginal or
/// zero mass) get `v = 0, alpha = -2`. Target atoms with positive mass
/// and an exactly zero plan column form the singular part. Plan entries
/// within `1e-9` of the transport horizon `kappa pi/2` are dropped and
/// their total recorded, unless it exceeds `1e-8`, which voids the plan.
///
/// # Errors
///
/// * `InvalidPlan` if horizon mass exceeds the tolerance or the plan
///   charges a zero-mass atom.
/// * `InvalidInput` on dimension/manifold mismatch or bad `kappa`.
pub fn log_hk(
    mu0: &DiscreteMeasure,
    mu1: &DiscreteMeasure,
    plan: &TransportPlan,
    kappa: f64,
) -> Result<HkTangent> {
    let manifold = check_pair(mu0, mu1, plan)?;
    if !(kappa > 0.0) || !kappa.is_finite() {
        return Err(Error::InvalidInput(format!(
            "kappa must be positive and finite, got {kappa}"
        )));
    }
    let horizon = kappa * std::f64::consts::FRAC_PI_2;
    let (k0, k1) = (mu0.len(), mu1.len());

    // Distances once; drop horizon entries.
    let mut dist = vec![0.0f64; k0 * k1];
    let mut kept = plan.matrix().clone();
    let mut dropped = 0.0f64;
    for i in 0..k0 {
        for j in 0..k1 {
            let d = manifold.dist(&mu0.points()[i], &mu1.points()[j])?;
            dist[i * k1 + j] = d;
            if d >= horizon - HORIZON_SLACK && kept[(i, j)] > 0.0 {
                dropped += kept[(i, j)];
                kept[(i, j)] = 0.0;
            }
        }
    }
    if dropped > DEFAULT_MARGINAL_TOL {
        return Err(Error::InvalidPlan(format!(
            "plan carries {dropped:.3e} mass on the transport horizon"
        )));
    }

    let marginal0: Vec<f64> = (0..k0).map(|i| kept.row(i).sum()).collect();
    let marginal1: Vec<f64> = (0..k1).map(|j| kept.column(j).sum()).collect();
    for i in 0..k0 {
        if marginal0[i] > 0.0 && mu0.masses()[i] == 0.0 {
            return Err(Error::InvalidPlan(format!(
                "plan transports mass from zero-mass atom {i}"
            )));
        }
    }
    for j in 0..k1 {
        if marginal1[j] > 0.0 && mu1.masses()[j] == 0.0 {
            return Err(Error::InvalidPlan(format!(
                "plan transports mass to zero-mass atom {j}"
            )));
        }
    }

    let mut velocities = Vec::with_capacity(k0);
    let mut alpha = Vec::with_capacity(k0);
    for (i, x) in mu0.points().iter().enumerate() {
        let m0 = mu0.masses()[i];
        let mut comps = vec![0.0; manifold.ambient_dim()];
        if m0 > 0.0 && marginal0[i] > 0.0 {
            for (j, y) in mu1.points().iter().enumerate() {
                let w = kept[(i, j)];
                let d = dist[i * k1 + j];
                if w > 0.0 && d > 0.0 {
                    let step = manifold.log(x, y)?;
                    // Unit direction times kappa tan(d/kappa), weighted by
                    // transported mass relative to the reference mass.
                    let scale = kappa * (d / kappa).tan() / d * w / m0;
                    for (c, s) in comps.iter_mut().zip(step.comps()) {
                        *c += s * scale;
                    }
                }
            }
            alpha.push(2.0 * (marginal0[i] / m0 - 1.0));
        } else {
            alpha.push(-2.0);
        }
        velocities.push(manifold.tangent(x.clone(), comps)?);
    }

    let singular = mu1.subset(|j| mu1.masses()[j] > 0.0 && marginal1[j] == 0.0);
    HkTangent::new(mu0.clone(), velocities, alpha, singular, kappa, dropped)
}

/// Squared soft-marginal tangent norm:
/// `sum_i m0_i (|v_i|^2 + (kappa^2/4) alpha_i^2) + kappa^2 |singular|`.
/// Equals the squared transport distance when the producing plan was
/// deterministic.
pub fn norm_hk(tangent: &HkTangent) -> f64 {
    let m = tangent.reference.manifold();
    let ksq = tangent.kappa * tangent.kappa;
    let transported: f64 = tangent
        .reference
        .masses()
        .iter()
        .zip(&tangent.velocities)
        .zip(&tangent.alpha)
        .map(|((mass, v), a)| {
            mass * (m.inner_at(v.base(), v.comps(), v.comps()) + ksq / 4.0 * a * a)
        })
        .sum();
    transported + ksq * tangent.singular.total_mass()
}

/// Squared spherical tangent norm (same weighted form as [`norm_hk`]).
pub fn norm_shk(tangent: &ShkTangent) -> f64 {
    let m = tangent.reference.manifold();
    let ksq = tangent.kappa * tangent.kappa;
    let transported: f64 = tangent
        .reference
        .masses()
        .iter()
        .zip(&tangent.velocities)
        .zip(&tangent.alpha)
        .map(|((mass, v), a)| {
            mass * (m.inner_at(v.base(), v.comps(), v.comps()) + ksq / 4.0 * a * a)
        })
        .sum();
    transported + ksq * tangent.singular.total_mass()
}

/// Soft-marginal exponential: each reference atom moves a geodesic
/// distance `kappa atan2(|v|/kappa, 1 + alpha/2)` towards its velocity
/// direction and its mass scales by `(1 + alpha/2)^2 + |v|^2/kappa^2`;
/// fully destroyed atoms (`alpha = -2`, `v = 0`) disappear, and the
/// singular atoms are appended unchanged.
pub fn exp_hk(tangent: &HkTangent) -> Result<DiscreteMeasure> {
    let manifold = tangent.reference.manifold();
    let kappa = tangent.kappa;
    let mut points = Vec::new();
    let mut masses = Vec::new();
    for ((x, mass), (v, a)) in tangent
        .reference
        .points()
        .iter()
        .zip(tangent.reference.masses())
        .zip(tangent.velocities.iter().zip(&tangent.alpha))
    {
        let h = 1.0 + a / 2.0;
        let speed = manifold.tangent_norm(v) / kappa;
        let scale = h * h + speed * speed;
        if scale == 0.0 {
            continue; // mass shrinks to nothing: the atom is destroyed
        }
        let angle = kappa * speed.atan2(h);
        let target = if angle > 0.0 && speed > 0.0 {
            let step = v.scaled(angle / (speed * kappa));
            manifold.exp(&step)
        } else {
            x.clone()
        };
        points.push(target);
        masses.push(mass * scale);
    }
    points.extend_from_slice(tangent.singular.points());
    masses.extend_from_slice(tangent.singular.masses());
    DiscreteMeasure::new(*manifold, points, masses)
}

/// Point at parameter `s` of the geodesic shot from the reference along
/// the tangent: `exp(s * tangent)` with the singular mass scaling as
/// `s^2`. At `s in [0, 1]` this interpolates reference to target; the
/// total mass along the way obeys
/// `|mu_s| = |mu0| (adjusted) - s(1-s) HK^2 / kappa^2` for unit-mass
/// endpoints.
///
/// # Errors
///
/// `InvalidInput` when `s * alpha` dips below `-2` (past the destruction
/// boundary, the path leaves the cone).
pub fn geodesic_hk(tangent: &HkTangent, s: f64) -> Result<DiscreteMeasure> {
    exp_hk(&tangent.scaled(s)?)
}

/// Largest mismatch `max_i |alpha_i + 2 phi0_i / kappa^2|` between a
/// tangent's mass-change rates and the dual potentials of the solve that
/// produced its plan; near zero when both sides describe the same optimal
/// solution.
///
/// # Errors
///
/// `InvalidInput` if the potential count differs from the atom count.
pub fn alpha_dual_check(tangent: &HkTangent, potentials: &DualPotentials) -> Result<f64> {
    if potentials.phi0.len() != tangent.reference.len() {
        return Err(Error::InvalidInput(format!(
            "{} potentials for {} atoms",
            potentials.phi0.len(),
            tangent.reference.len()
        )));
    }
    let ksq = tangent.kappa * tangent.kappa;
    Ok(tangent
        .alpha
        .iter()
        .zip(&potentials.phi0)
        .map(|(a, phi)| (a + 2.0 * phi / ksq).abs())
        .fold(0.0, f64::max))
}

/// Arc length on the unit sphere of measures corresponding to a squared
/// soft-marginal distance: `kappa arccos(1 - hk_sq / (2 kappa^2))`.
/// For probability measures `hk_sq <= 2 kappa^2`, so values up to a
/// `1e-9` relative overshoot are clamped.
///
/// # Errors
///
/// `InvalidInput` if `hk_sq` is negative or exceeds `2 kappa^2` beyond
/// round-off, or `kappa` is invalid.
pub fn shk_distance(hk_sq: f64, kappa: f64) -> Result<f64> {
    if !(kappa > 0.0) || !kappa.is_finite() {
        return Err(Error::InvalidInput(format!(
            "kappa must be positive and finite, got {kappa}"
        )));
    }
    let cap = 2.0 * kappa * kappa;
    if !(hk_sq >= 0.0) {
        return Err(Error::InvalidInput(format!(
            "squared distance must be nonnegative, got {hk_sq}"
        )));
    }
    if hk_sq > cap * (1.0 + 1e-9) {
        return Err(Error::InvalidInput(format!(
            "squared distance {hk_sq} exceeds the {cap} bound for probability measures"
        )));
    }
    let cos = (1.0 - hk_sq.min(cap) / cap).clamp(-1.0, 1.0);
    Ok(kappa * cos.acos())
}

/// Converts a soft-marginal tangent at a probability reference into the
/// spherical tangent of the mass-normalized geodesic:
/// with `S = shk_distance(norm_hk)` and `s'(0) = (S/kappa)/sin(S/kappa)`,
/// velocities scale by `s'(0)`, `alpha` shifts by the squared distance and
/// scales, and singular mass scales by `s'(0)^2`.
///
/// # Errors
///
/// `InvalidInput` unless both the reference and the tangent's endpoint
/// have total mass 1 within `1e-6` (rescale first — see
/// [`rescale_to_unit_mass`]).
pub fn hk_to_shk(tangent: &HkTangent) -> Result<ShkTangent> {
    let mass0 = tangent.reference.total_mass();
    if (mass0 - 1.0).abs() > 1e-6 {
        return Err(Error::InvalidInput(format!(
            "reference mass is {mass0}, not 1; rescale to unit mass first"
        )));
    }
    let mass1 = exp_hk(tangent)?.total_mass();
    if (mass1 - 1.0).abs() > 1e-6 {
        return Err(Error::InvalidInput(format!(
            "endpoint mass is {mass1}, not 1; rescale to unit mass first"
        )));
    }
    let kappa = tangent.kappa;
    let hk_sq = norm_hk(tangent);
    let shk = shk_distance(hk_sq, kappa)?;
    let sp = x_over_sin_guarded(shk / kappa);
    let ratio = hk_sq / (kappa * kappa);
    Ok(ShkTangent {
        reference: tangent.reference.clone(),
        velocities: tangent.velocities.iter().map(|v| v.scaled(sp)).collect(),
        alpha: tangent.alpha.iter().map(|a| sp * (a + ratio)).collect(),
        singular: scale_measure(&tangent.singular, sp * sp),
        kappa,
        dropped_plan_mass: tangent.dropped_plan_mass,
        s_prime0: sp,
    })
}

/// Inverse of [`hk_to_shk`]: recovers the soft-marginal tangent from a
/// spherical one. The spherical norm must stay under the sphere's radius
/// of injectivity `kappa pi/2`.
///
/// # Errors
///
/// `InvalidInput` when the spherical norm reaches `kappa pi/2`.
pub fn shk_to_hk(tangent: &ShkTangent) -> Result<HkTangent> {
    let kappa = tangent.kappa;
    let shk_sq = norm_shk(tangent);
    let shk = shk_sq.max(0.0).sqrt();
    if shk >= kappa * std::f64::consts::FRAC_PI_2 {
        return Err(Error::InvalidInput(format!(
            "spherical tangent norm {shk} reaches the injectivity radius {}",
            kappa * std::f64::consts::FRAC_PI_2
        )));
    }
    let sp = x_over_sin_guarded(shk / kappa);
    let hk_sq = 2.0 * kappa * kappa * (1.0 - (shk / kappa).cos());
    let ratio = hk_sq / (kappa * kappa);
    HkTangent::new(
        tangent.reference.clone(),
        tangent
            .velocities
            .iter()
            .map(|v| v.scaled(1.0 / sp))
            .collect(),
        tangent.alpha.iter().map(|a| a / sp - ratio).collect(),
        scale_measure(&tangent.singular, 1.0 / (sp * sp)),
        kappa,
        tangent.dropped_plan_mass,
    )
}

/// Reweights a soft-marginal tangent so that its endpoint has total mass
/// one: with `q = 1/sqrt(endpoint mass)`, velocities scale by `q`, the
/// mass rates transform affinely (`alpha -> q alpha + 2(q - 1)`), and
/// singular mass scales by `q^2`. The reference measure itself is
/// untouched.
///
/// # Errors
///
/// `InvalidInput` when the endpoint has zero mass (nothing to normalize).
pub fn rescale_to_unit_mass(tangent: &HkTangent) -> Result<HkTangent> {
    let mass = exp_hk(tangent)?.total_mass();
    if mass <= 0.0 {
        return Err(Error::InvalidInput(
            "tangent endpoint has zero mass; cannot rescale to the unit sphere".into(),
        ));
    }
    let q = 1.0 / mass.sqrt();
    HkTangent::new(
        tangent.reference.clone(),
        tangent.velocities.iter().map(|v| v.scaled(q)).collect(),
        tangent
            .alpha
            .iter()
            .map(|a| q * a + 2.0 * (q - 1.0))
            .collect(),
        scale_measure(&tangent.singular, q * q),
        tangent.kappa,
        tangent.dropped_plan_mass,
    )
}

fn check_pair(
    mu0: &DiscreteMeasure,
    mu1: &DiscreteMeasure,
    plan: &TransportPlan,
) -> Result<Manifold> {
    if mu0.manifold() != mu1.manifold() {
        return Err(Error::InvalidInput(
            "measures live on different manifolds".into(),
        ));
    }
    if plan.nrows() != mu0.len() || plan.ncols() != mu1.len() {
        return Err(Error::InvalidInput(format!(
            "plan is {}x{} but measures have {} and {} atoms",
            plan.nrows(),
            plan.ncols(),
            mu0.len(),
            mu1.len()
        )));
    }
    Ok(*mu0.manifold())
}
