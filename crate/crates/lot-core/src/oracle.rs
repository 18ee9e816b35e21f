//! Exact reference solutions on tiny instances.
//!
//! Everything here is independent of the Sinkhorn solvers: small balanced
//! problems are solved by exhaustive vertex enumeration, single-atom
//! soft-marginal problems by a closed form, and two-atom soft-marginal
//! problems by direct minimization of the primal objective (coarse grid
//! plus projected gradient). These provide ground truth for testing the
//! entropic solvers, which approach the exact values as their
//! regularization shrinks.

use crate::manifold::{Manifold, Point};
use crate::measure::DiscreteMeasure;
use crate::solver::{build_cost_w2, truncated_cos, CostMatrix, TransportPlan};
use crate::{Error, Result};
use itertools::Itertools;
use nalgebra::DMatrix;

/// Largest atom count per side that the exact oracles accept.
pub const MAX_ORACLE_ATOMS: usize = 6;

/// Largest mass denominator the balanced oracle will detect when scaling
/// rational masses to integers.
const MAX_DENOMINATOR: u64 = 64;

/// A transport instance small enough for exhaustive treatment.
#[derive(Debug, Clone)]
pub struct TinyInstance {
    mu0: DiscreteMeasure,
    mu1: DiscreteMeasure,
}

impl TinyInstance {
    /// # Errors
    ///
    /// `InvalidInput` if either side has more than [`MAX_ORACLE_ATOMS`]
    /// atoms or the measures live on different manifolds.
    pub fn new(mu0: DiscreteMeasure, mu1: DiscreteMeasure) -> Result<Self> {
        if mu0.len() > MAX_ORACLE_ATOMS || mu1.len() > MAX_ORACLE_ATOMS {
            return Err(Error::InvalidInput(format!(
                "oracle instances allow at most {MAX_ORACLE_ATOMS} atoms per side, got {} and {}",
                mu0.len(),
                mu1.len()
            )));
        }
        if mu0.manifold() != mu1.manifold() {
            return Err(Error::InvalidInput(
                "oracle instance measures must share a manifold".into(),
            ));
        }
        Ok(TinyInstance { mu0, mu1 })
    }

    pub fn mu0(&self) -> &DiscreteMeasure {
        &self.mu0
    }

    pub fn mu1(&self) -> &DiscreteMeasure {
        &self.mu1
    }
}

/// An exact optimum found by enumeration.
#[derive(Debug, Clone)]
pub struct ExactSolution {
    pub value: f64,
    pub plan: TransportPlan,
}

/// Exact balanced transport on a tiny instance by enumerating the vertices
/// of the coupling polytope; some vertex is always optimal because the
/// objective is linear.
///
/// Two instance classes are handled:
///
/// * equal atom counts with one common mass — vertices are permutation
///   matrices, all of which are enumerated;
/// * rational masses with a common denominator at most 64 — masses scale
///   to integers, and every polytope vertex is reached by the northwest-
///   corner rule under some ordering of rows and columns, so all ordering
///   pairs are enumerated.
///
/// Matchings that use a forbidden (infinite-cost) pair are skipped.
///
/// # Errors
///
/// * `Unsupported` when the masses fit neither class.
/// * `InvalidInput` when total masses differ by more than `1e-9` or no
///   finite-cost coupling exists.
pub fn exact_balanced(inst: &TinyInstance) -> Result<ExactSolution> {
    let mu0 = &inst.mu0;
    let mu1 = &inst.mu1;
    if (mu0.total_mass() - mu1.total_mass()).abs() > 1e-9 {
        return Err(Error::InvalidInput(format!(
            "balanced transport requires equal masses, got {} vs {}",
            mu0.total_mass(),
            mu1.total_mass()
        )));
    }
    let cost = build_cost_w2(mu0, mu1)?;

    if is_uniform_equal_count(mu0, mu1) {
        return exact_by_permutations(&cost, mu0.masses()[0], mu0.len());
    }
    if let Some(q) = common_denominator(mu0.masses(), mu1.masses()) {
        return exact_by_vertex_enumeration(&cost, mu0.masses(), mu1.masses(), q);
    }
    Err(Error::Unsupported(
        "balanced oracle needs uniform masses or rationals with denominator <= 64".into(),
    ))
}

fn is_uniform_equal_count(mu0: &DiscreteMeasure, mu1: &DiscreteMeasure) -> bool {
    if mu0.len() != mu1.len() || mu0.is_empty() {
        return false;
    }
    let m = mu0.masses()[0];
    if m <= 0.0 {
        return false;
    }
    mu0.masses()
        .iter()
        .chain(mu1.masses())
        .all(|x| (x - m).abs() <= 1e-12 * m)
}

fn exact_by_permutations(cost: &CostMatrix, mass: f64, n: usize) -> Result<ExactSolution> {
    let mut best: Option<(f64, Vec<usize>)> = None;
    for perm in (0..n).permutations(n) {
        let total: f64 = (0..n).map(|i| cost.get(i, perm[i])).sum();
        if total.is_finite() && best.as_ref().is_none_or(|(b, _)| total < *b) {
            best = Some((total, perm));
        }
    }
    let (total, perm) = best.ok_or_else(|| {
        Error::InvalidInput("every matching uses a forbidden pair: no feasible plan".into())
    })?;
    let mut matrix = DMatrix::zeros(n, n);
    for (i, j) in perm.iter().enumerate() {
        matrix[(i, *j)] = mass;
    }
    let value = total * mass;
    Ok(ExactSolution {
        value,
        plan: TransportPlan::from_matrix(matrix, value)?,
    })
}

/// Smallest `q <= 64` making every mass an integer multiple of `1/q`.
fn common_denominator(m0: &[f64], m1: &[f64]) -> Option<u64> {
    (1..=MAX_DENOMINATOR).find(|&q| {
        m0.iter().chain(m1).all(|m| {
            let scaled = m * q as f64;
            (scaled - scaled.round()).abs() <= 1e-9 * q as f64
        })
    })
}

fn exact_by_vertex_enumeration(
    cost: &CostMatrix,
    m0: &[f64],
    m1: &[f64],
    q: u64,
) -> Result<ExactSolution> {
    let a: Vec<i64> = m0.iter().map(|m| (m * q as f64).round() as i64).collect();
    let b: Vec<i64> = m1.iter().map(|m| (m * q as f64).round() as i64).collect();
    if a.iter().sum::<i64>() != b.iter().sum::<i64>() {
        return Err(Error::InvalidInput(
            "rational mass scaling produced unequal integer totals".into(),
        ));
    }
    let (k0, k1) = (a.len(), b.len());
    let mut best: Option<(f64, DMatrix<f64>)> = None;
    let mut remaining0 = vec![0i64; k0];
    let mut remaining1 = vec![0i64; k1];
    for rows in (0..k0).permutations(k0) {
        for cols in (0..k1).permutations(k1) {
            remaining0.copy_from_slice(&a);
            remaining1.copy_from_slice(&b);
            let mut total = 0.0f64;
            let mut plan = DMatrix::zeros(k0, k1);
            let (mut ri, mut ci) = (0usize, 0usize);
            while ri < k0 && ci < k1 {
                let i = rows[ri];
                let j = cols[ci];
                let t = remaining0[i].min(remaining1[j]);
                if t > 0 {
                    let mass = t as f64 / q as f64;
                    plan[(i, j)] = mass;
                    total += mass * cost.get(i, j);
                    remaining0[i] -= t;
                    remaining1[j] -= t;
                }
                // Advance past exhausted rows/columns; when both empty at
                // once this yields a degenerate vertex, which is fine.
                if remaining0[i] == 0 {
                    ri += 1;
                }
                if remaining1[j] == 0 {
                    ci += 1;
                }
            }
            if total.is_finite() && best.as_ref().is_none_or(|(v, _)| total < *v) {
                best = Some((total, plan));
            }
        }
    }
    let (value, plan) = best.ok_or_else(|| {
        Error::InvalidInput("every coupling vertex uses a forbidden pair: no feasible plan".into())
    })?;
    Ok(ExactSolution {
        value,
        plan: TransportPlan::from_matrix(plan, value)?,
    })
}

/// Closed-form optimum of the soft-marginal problem between two single
/// atoms `m0 delta_x0` and `m1 delta_x1`.
#[derive(Debug, Clone, PartialEq)]
pub struct DiracSolution {
    /// Optimal objective
    /// `kappa^2 (m0 + m1 - 2 sqrt(m0 m1) cos_trunc(d / kappa))`.
    pub value: f64,
    /// Transported mass `sqrt(m0 m1) cos_trunc(d / kappa)`.
    pub plan_mass: f64,
    /// Optimal potential on the first atom,
    /// `kappa^2 (1 - plan_mass / m0)`.
    pub phi0: f64,
    /// Optimal potential on the second atom.
    pub phi1: f64,
}

/// Exact solution for a pair of single atoms; `d >= kappa pi/2` (or a zero
/// mass) degenerates to pure destruction/creation with saturated
/// potentials `phi = kappa^2`.
///
/// # Errors
///
/// `InvalidInput` for negative masses, nonpositive `kappa`, or points not
/// on the manifold.
pub fn hk_dirac_closed_form(
    manifold: &Manifold,
    m0: f64,
    x0: &Point,
    m1: f64,
    x1: &Point,
    kappa: f64,
) -> Result<DiracSolution> {
    if !(kappa > 0.0) || !kappa.is_finite() {
        return Err(Error::InvalidInput(format!(
            "kappa must be positive and finite, got {kappa}"
        )));
    }
    if m0 < 0.0 || m1 < 0.0 || !m0.is_finite() || !m1.is_finite() {
        return Err(Error::InvalidInput(format!(
            "masses must be finite and nonnegative, got {m0} and {m1}"
        )));
    }
    let d = manifold.dist(x0, x1)?;
    let ksq = kappa * kappa;
    let cos = truncated_cos(d / kappa);
    let plan_mass = (m0 * m1).sqrt() * cos;
    let value = ksq * (m0 + m1 - 2.0 * plan_mass);
    let phi = |m: f64| {
        if m > 0.0 {
            ksq * (1.0 - plan_mass / m)
        } else {
            ksq
        }
    };
    Ok(DiracSolution {
        value,
        plan_mass,
        phi0: phi(m0),
        phi1: phi(m1),
    })
}

/// Exact soft-marginal value on instances with at most two atoms per side,
/// by direct minimization of the primal objective over the box
/// `0 <= pi_ij <= sqrt(m0_i m1_j)` (entries above that bound are never
/// optimal, and forbidden pairs are pinned at zero): a coarse grid scan
/// with spacing `grid_step * bound` per coordinate locates the basin, and
/// projected gradient descent with Armijo backtracking polishes the
/// minimum. The objective is convex, so the polished point is the global
/// optimum.
///
/// # Errors
///
/// `InvalidInput` if a side has more than two atoms, `grid_step` is
/// outside `(0, 1]`, the scan would exceed 20 million nodes, or `kappa`
/// is invalid.
pub fn hk_grid_search(inst: &TinyInstance, kappa: f64, grid_step: f64) -> Result<f64> {
    if inst.mu0.len() > 2 || inst.mu1.len() > 2 {
        return Err(Error::InvalidInput(
            "grid search handles at most two atoms per side".into(),
        ));
    }
    if !(grid_step > 0.0 && grid_step <= 1.0) {
        return Err(Error::InvalidInput(format!(
            "grid_step must lie in (0, 1], got {grid_step}"
        )));
    }
    if !(kappa > 0.0) || !kappa.is_finite() {
        return Err(Error::InvalidInput(format!(
            "kappa must be positive and finite, got {kappa}"
        )));
    }
    let ksq = kappa * kappa;
    let m0 = inst.mu0.masses();
    let m1 = inst.mu1.masses();
    let (k0, k1) = (m0.len(), m1.len());
    let mut costs = vec![0.0f64; k0 * k1];
    let mut bounds = vec![0.0f64; k0 * k1];
    let manifold = inst.mu0.manifold();
    for i in 0..k0 {
        for j in 0..k1 {
            let d = manifold.dist(&inst.mu0.points()[i], &inst.mu1.points()[j])?;
            let t = d / kappa;
            costs[i * k1 + j] = if t < std::f64::consts::FRAC_PI_2 {
                -2.0 * ksq * t.cos().ln()
            } else {
                f64::INFINITY
            };
            bounds[i * k1 + j] = (m0[i] * m1[j]).sqrt();
        }
    }
    // Free coordinates: finite cost and positive bound.
    let free: Vec<usize> = (0..k0 * k1)
        .filter(|&e| costs[e].is_finite() && bounds[e] > 0.0)
        .collect();

    let objective = |pi: &[f64]| -> f64 {
        let mut total = 0.0;
        for i in 0..k0 {
            let mut row = 0.0;
            for j in 0..k1 {
                let p = pi[i * k1 + j];
                if p > 0.0 {
                    total += p * costs[i * k1 + j];
                    row += p;
                }
            }
            total += ksq * kl_term(row, m0[i]);
        }
        for j in 0..k1 {
            let mut col = 0.0;
            for i in 0..k0 {
                col += pi[i * k1 + j];
            }
            total += ksq * kl_term(col, m1[j]);
        }
        total
    };

    let mut pi = vec![0.0f64; k0 * k1];
    if free.is_empty() {
        return Ok(objective(&pi));
    }

    // Coarse scan.
    let nodes = (1.0 / grid_step).ceil() as usize + 1;
    let total_nodes = (nodes as f64).powi(free.len() as i32);
    if total_nodes > 2e7 {
        return Err(Error::InvalidInput(format!(
            "coarse grid would need {total_nodes:.2e} nodes; use a larger grid_step"
        )));
    }
    let mut best_val = f64::INFINITY;
    let mut best = pi.clone();
    let mut counter = vec![0usize; free.len()];
    loop {
        for (axis, &e) in free.iter().enumerate() {
            pi[e] = bounds[e] * counter[axis] as f64 / (nodes - 1) as f64;
        }
        let v = objective(&pi);
        if v < best_val {
            best_val = v;
            best.copy_from_slice(&pi);
        }
        // Mixed-radix increment.
        let mut axis = 0;
        loop {
            if axis == free.len() {
                break;
            }
            counter[axis] += 1;
            if counter[axis] < nodes {
                break;
            }
            counter[axis] = 0;
            axis += 1;
        }
        if axis == free.len() {
            break;
        }
    }

    // Projected gradient polish with Armijo backtracking.
    pi = best;
    let mut value = best_val;
    let mut step = 1.0 / ksq.max(1.0);
    let mut trial = pi.clone();
    for _ in 0..20_000 {
        let mut row = vec![0.0f64; k0];
        let mut col = vec![0.0f64; k1];
        for i in 0..k0 {
            for j in 0..k1 {
                row[i] += pi[i * k1 + j];
                col[j] += pi[i * k1 + j];
            }
        }
        let grad: Vec<f64> = free
            .iter()
            .map(|&e| {
                let (i, j) = (e / k1, e % k1);
                costs[e]
                    + ksq * (row[i] / m0[i]).max(1e-300).ln()
                    + ksq * (col[j] / m1[j]).max(1e-300).ln()
            })
            .collect();
        let mut accepted = false;
        for _ in 0..60 {
            trial.copy_from_slice(&pi);
            let mut decrease = 0.0;
            for (axis, &e) in free.iter().enumerate() {
                trial[e] = (pi[e] - step * grad[axis]).clamp(0.0, bounds[e]);
                decrease += grad[axis] * (pi[e] - trial[e]);
            }
            let v = objective(&trial);
            if v <= value - 1e-4 * decrease {
                let moved: f64 = free
                    .iter()
                    .map(|&e| (trial[e] - pi[e]).abs())
                    .fold(0.0, f64::max);
                pi.copy_from_slice(&trial);
                let improved = value - v;
                value = v;
                accepted = true;
                if moved < 1e-15 || improved < 1e-16 * (1.0 + value.abs()) {
                    return Ok(value);
                }
                step *= 2.0;
                break;
            }
            step *= 0.5;
        }
        if !accepted {
            break;
        }
    }
    Ok(value)
}

fn kl_term(rho: f64, mu: f64) -> f64 {
    if rho > 0.0 {
        if mu <= 0.0 {
            return f64::INFINITY;
        }
        rho * (rho / mu).ln() - rho + mu
    } else {
        mu
    }
}

/// Soft-marginal cost of a semi-coupling pair `(gamma0, gamma1)`: two
/// nonnegative matrices where `gamma0` has row sums `mu0` and `gamma1`
/// has column sums `mu1`, scored as
/// `kappa^2 (|gamma0| + |gamma1| - 2 sum_ij cos_trunc(d_ij/kappa)
/// sqrt(gamma0_ij gamma1_ij))`. Minimizing this over all such pairs is an
/// equivalent formulation of the soft-marginal problem.
///
/// # Errors
///
/// `InvalidInput` if shapes mismatch, entries are negative or nonfinite,
/// or the prescribed marginals are violated by more than `1e-9`.
pub fn semicoupling_value(
    gamma0: &DMatrix<f64>,
    gamma1: &DMatrix<f64>,
    mu0: &DiscreteMeasure,
    mu1: &DiscreteMeasure,
    kappa: f64,
) -> Result<f64> {
    if !(kappa > 0.0) || !kappa.is_finite() {
        return Err(Error::InvalidInput(format!(
            "kappa must be positive and finite, got {kappa}"
        )));
    }
    let (k0, k1) = (mu0.len(), mu1.len());
    if gamma0.nrows() != k0 || gamma0.ncols() != k1 || gamma1.nrows() != k0 || gamma1.ncols() != k1
    {
        return Err(Error::InvalidInput(
            "semi-coupling matrices must both be (atoms of mu0) x (atoms of mu1)".into(),
        ));
    }
    for x in gamma0.iter().chain(gamma1.iter()) {
        if !x.is_finite() || *x < 0.0 {
            return Err(Error::InvalidInput(format!(
                "semi-coupling entries must be finite and nonnegative, got {x}"
            )));
        }
    }
    for i in 0..k0 {
        let row: f64 = gamma0.row(i).sum();
        if (row - mu0.masses()[i]).abs() > 1e-9 {
            return Err(Error::InvalidInput(format!(
                "gamma0 row {i} sums to {row}, expected mass {}",
                mu0.masses()[i]
            )));
        }
    }
    for j in 0..k1 {
        let col: f64 = gamma1.column(j).sum();
        if (col - mu1.masses()[j]).abs() > 1e-9 {
            return Err(Error::InvalidInput(format!(
                "gamma1 column {j} sums to {col}, expected mass {}",
                mu1.masses()[j]
            )));
        }
    }
    let manifold = mu0.manifold();
    if manifold != mu1.manifold() {
        return Err(Error::InvalidInput(
            "semi-coupling measures must share a manifold".into(),
        ));
    }
    let ksq = kappa * kappa;
    let mut cross = 0.0;
    for i in 0..k0 {
        for j in 0..k1 {
            let product = gamma0[(i, j)] * gamma1[(i, j)];
            if product > 0.0 {
                let d = manifold.dist(&mu0.points()[i], &mu1.points()[j])?;
                cross += truncated_cos(d / kappa) * product.sqrt();
            }
        }
    }
    Ok(ksq * (gamma0.sum() + gamma1.sum() - 2.0 * cross))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::solver::{
        build_cost_hk, check_optimality_conditions, sinkhorn_balanced, sinkhorn_hk, DualPotentials,
        SolverConfig,
    };
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn line() -> Manifold {
        Manifold::Euclidean { dim: 1 }
    }

    fn measure_1d(xs: &[f64], ms: &[f64]) -> DiscreteMeasure {
        let coords: Vec<Vec<f64>> = xs.iter().map(|x| vec![*x]).collect();
        DiscreteMeasure::from_coords(line(), &coords, ms.to_vec()).unwrap()
    }

    #[test]
    fn permutation_oracle_matches_hand_value() {
        // {0, 1} -> {2, 3} with unit masses: identity matching costs
        // 4 + 4 = 8, the swap costs 9 + 1 = 10.
        let inst = TinyInstance::new(
            measure_1d(&[0.0, 1.0], &[1.0, 1.0]),
            measure_1d(&[2.0, 3.0], &[1.0, 1.0]),
        )
        .unwrap();
        let sol = exact_balanced(&inst).unwrap();
        assert_eq!(sol.value, 8.0);
        assert_eq!(sol.plan.matrix()[(0, 0)], 1.0);
        assert_eq!(sol.plan.matrix()[(1, 1)], 1.0);
        assert_eq!(sol.plan.matrix()[(0, 1)], 0.0);
    }

    #[test]
    fn vertex_oracle_handles_rational_masses() {
        // Masses (1/2, 1/2) vs (1/4, 3/4) on {0,1} -> {0,1}: ship 1/4
        // across, keep the rest in place; cost 1/4.
        let inst = TinyInstance::new(
            measure_1d(&[0.0, 1.0], &[0.5, 0.5]),
            measure_1d(&[0.0, 1.0], &[0.25, 0.75]),
        )
        .unwrap();
        let sol = exact_balanced(&inst).unwrap();
        assert!((sol.value - 0.25).abs() < 1e-12, "value {}", sol.value);
        let m0 = sol.plan.marginal0();
        assert!((m0[0] - 0.5).abs() < 1e-12 && (m0[1] - 0.5).abs() < 1e-12);
    }

    #[test]
    fn oracle_rejects_awkward_masses() {
        let inst = TinyInstance::new(
            measure_1d(&[0.0, 1.0], &[1.0 / 97.0, 96.0 / 97.0]),
            measure_1d(&[2.0], &[1.0]),
        )
        .unwrap();
        assert!(matches!(exact_balanced(&inst), Err(Error::Unsupported(_))));
    }

    #[test]
    fn oracle_rejects_oversized_instances() {
        let xs: Vec<f64> = (0..7).map(|i| i as f64).collect();
        let ms = vec![1.0; 7];
        assert!(matches!(
            TinyInstance::new(measure_1d(&xs, &ms), measure_1d(&[0.0], &[7.0])),
            Err(Error::InvalidInput(_))
        ));
    }

    #[test]
    fn balanced_solver_matches_permutation_oracle() {
        let mu0 = measure_1d(&[0.0, 0.8], &[0.5, 0.5]);
        let mu1 = measure_1d(&[0.3, 1.1], &[0.5, 0.5]);
        let inst = TinyInstance::new(mu0.clone(), mu1.clone()).unwrap();
        let exact = exact_balanced(&inst).unwrap().value;
        let eps = 1e-5;
        let cfg = SolverConfig {
            epsilon_target: Some(eps),
            ..SolverConfig::default()
        };
        let approx = sinkhorn_balanced(&build_cost_w2(&mu0, &mu1).unwrap(), &mu0, &mu1, &cfg)
            .unwrap()
            .plan
            .value();
        assert!(
            (approx - exact).abs() <= 5.0 * eps,
            "solver {approx} vs oracle {exact}"
        );
    }

    #[test]
    fn dirac_closed_form_frozen_values() {
        let m = line();
        let x = m.point(vec![0.0]).unwrap();
        // Same location, masses 4 and 1: value (sqrt(4) - sqrt(1))^2 = 1.
        let sol = hk_dirac_closed_form(&m, 4.0, &x, 1.0, &x, 1.0).unwrap();
        assert!((sol.value - 1.0).abs() < 1e-15);
        assert!((sol.plan_mass - 2.0).abs() < 1e-15);
        assert!((sol.phi0 - 0.5).abs() < 1e-15);
        assert!((sol.phi1 - (-1.0)).abs() < 1e-15);

        // Beyond the horizon: pure destruction and creation.
        let y = m.point(vec![2.0]).unwrap();
        let far = hk_dirac_closed_form(&m, 2.0, &x, 0.7, &y, 1.0).unwrap();
        assert_eq!(far.plan_mass, 0.0);
        assert!((far.value - 2.7).abs() < 1e-15);
        assert_eq!(far.phi0, 1.0);
        assert_eq!(far.phi1, 1.0);
    }

    #[test]
    fn dirac_closed_form_passes_optimality_audit() {
        let m = line();
        for (m0, m1, d, kappa) in [
            (1.0, 1.0, 0.5, 1.0),
            (4.0, 1.0, 0.0, 1.0),
            (0.3, 2.0, 1.2, 2.5),
            (2.0, 0.7, 3.0, 1.0), // beyond the horizon
        ] {
            let x0 = m.point(vec![0.0]).unwrap();
            let x1 = m.point(vec![d]).unwrap();
            let sol = hk_dirac_closed_form(&m, m0, &x0, m1, &x1, kappa).unwrap();
            let mu0 = measure_1d(&[0.0], &[m0]);
            let mu1 = measure_1d(&[d], &[m1]);
            let plan =
                TransportPlan::from_matrix(DMatrix::from_element(1, 1, sol.plan_mass), sol.value)
                    .unwrap();
            let potentials = DualPotentials {
                phi0: vec![sol.phi0],
                phi1: vec![sol.phi1],
            };
            let report =
                check_optimality_conditions(&plan, &potentials, &mu0, &mu1, kappa).unwrap();
            assert!(
                report.passes(1e-9),
                "closed form fails audit at (m0={m0}, m1={m1}, d={d}, kappa={kappa}): {report:?}"
            );
        }
    }

    #[test]
    fn grid_search_matches_closed_form() {
        let m = line();
        let x0 = m.point(vec![0.0]).unwrap();
        let x1 = m.point(vec![0.6]).unwrap();
        let closed = hk_dirac_closed_form(&m, 1.3, &x0, 0.8, &x1, 1.0)
            .unwrap()
            .value;
        let inst =
            TinyInstance::new(measure_1d(&[0.0], &[1.3]), measure_1d(&[0.6], &[0.8])).unwrap();
        let grid = hk_grid_search(&inst, 1.0, 1e-3).unwrap();
        assert!(
            (grid - closed).abs() < 1e-6,
            "grid {grid} vs closed form {closed}"
        );
    }

    #[test]
    fn grid_search_with_empty_target_destroys_everything() {
        let inst = TinyInstance::new(
            measure_1d(&[0.0, 1.0], &[1.2, 0.8]),
            measure_1d(&[0.5], &[0.0]),
        )
        .unwrap();
        let v = hk_grid_search(&inst, 1.5, 0.01).unwrap();
        assert!((v - 1.5 * 1.5 * 2.0).abs() < 1e-12, "value {v}");
    }

    #[test]
    fn sinkhorn_tracks_grid_search_on_random_instances() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let eps = 1e-5;
        let kappa = 1.0;
        for trial in 0..20 {
            let xs0: Vec<f64> = (0..2).map(|_| rng.gen_range(0.0..1.2)).collect();
            let xs1: Vec<f64> = (0..2).map(|_| rng.gen_range(0.0..1.2)).collect();
            let ms0: Vec<f64> = (0..2).map(|_| rng.gen_range(0.2..1.5)).collect();
            let ms1: Vec<f64> = (0..2).map(|_| rng.gen_range(0.2..1.5)).collect();
            let mu0 = measure_1d(&xs0, &ms0);
            let mu1 = measure_1d(&xs1, &ms1);
            let inst = TinyInstance::new(mu0.clone(), mu1.clone()).unwrap();
            let exact = hk_grid_search(&inst, kappa, 0.05).unwrap();
            let cfg = SolverConfig {
                epsilon_target: Some(eps),
                kappa: Some(kappa),
                ..SolverConfig::default()
            };
            let approx = sinkhorn_hk(&build_cost_hk(&mu0, &mu1, kappa).unwrap(), &mu0, &mu1, &cfg)
                .unwrap()
                .plan
                .value();
            let slack = 5.0 * eps * (mu0.total_mass() + mu1.total_mass());
            assert!(
                (approx - exact).abs() <= slack,
                "trial {trial}: solver {approx} vs grid {exact} (slack {slack})"
            );
        }
    }

    #[test]
    fn semicoupling_of_dirac_pair_matches_closed_form() {
        let m = line();
        let x0 = m.point(vec![0.0]).unwrap();
        let x1 = m.point(vec![0.7]).unwrap();
        let (m0, m1, kappa) = (1.4, 0.9, 1.2);
        let closed = hk_dirac_closed_form(&m, m0, &x0, m1, &x1, kappa).unwrap();
        let mu0 = measure_1d(&[0.0], &[m0]);
        let mu1 = measure_1d(&[0.7], &[m1]);
        // The optimal semi-coupling pair for two single atoms routes each
        // side's full mass through the single pair.
        let gamma0 = DMatrix::from_element(1, 1, m0);
        let gamma1 = DMatrix::from_element(1, 1, m1);
        let v = semicoupling_value(&gamma0, &gamma1, &mu0, &mu1, kappa).unwrap();
        assert!(
            (v - closed.value).abs() < 1e-12,
            "semi-coupling {v} vs closed form {}",
            closed.value
        );
    }

    #[test]
    fn semicoupling_rejects_wrong_marginals() {
        let mu0 = measure_1d(&[0.0], &[1.0]);
        let mu1 = measure_1d(&[0.5], &[1.0]);
        let bad = DMatrix::from_element(1, 1, 0.5);
        let good = DMatrix::from_element(1, 1, 1.0);
        assert!(matches!(
            semicoupling_value(&bad, &good, &mu0, &mu1, 1.0),
            Err(Error::InvalidInput(_))
        ));
    }
}
