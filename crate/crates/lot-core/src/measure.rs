//! Discrete measures, synthetic dataset generators, and rasterization.
//!
//! A [`DiscreteMeasure`] is a finite weighted point cloud on one of the
//! base manifolds: atoms may coincide and masses may be zero, but never
//! negative. The generators in this module produce the standard synthetic
//! families used by the studies — uniform disks with random centers on a
//! line or in a box, and spherical caps — deterministically from a seed.
//! [`rasterize`] converts a measure into a pixel grid for visual
//! inspection and export.

use crate::manifold::{Manifold, Point};
use crate::{Error, Result};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Number of discretization points used per spherical cap when no explicit
/// count is requested.
pub const DEFAULT_CAP_POINTS: usize = 200;

/// A finite nonnegative measure `sum_i m_i delta_{x_i}` on a manifold.
#[derive(Debug, Clone, PartialEq)]
pub struct DiscreteMeasure {
    manifold: Manifold,
    points: Vec<Point>,
    masses: Vec<f64>,
}

impl DiscreteMeasure {
    /// Builds a measure from points and masses of equal length.
    ///
    /// # Errors
    ///
    /// `InvalidInput` if lengths differ, a mass is negative or non-finite,
    /// or a point's coordinate count does not match the manifold.
    pub fn new(manifold: Manifold, points: Vec<Point>, masses: Vec<f64>) -> Result<Self> {
        manifold.validate()?;
        if points.len() != masses.len() {
            return Err(Error::InvalidInput(format!(
                "{} points but {} masses",
                points.len(),
                masses.len()
            )));
        }
        for m in &masses {
            if !m.is_finite() || *m < 0.0 {
                return Err(Error::InvalidInput(format!(
                    "masses must be finite and nonnegative, got {m}"
                )));
            }
        }
        for p in &points {
            if p.coords().len() != manifold.ambient_dim() {
                return Err(Error::InvalidInput(format!(
                    "point has {} coordinates but {manifold:?} expects {}",
                    p.coords().len(),
                    manifold.ambient_dim()
                )));
            }
        }
        Ok(DiscreteMeasure {
            manifold,
            points,
            masses,
        })
    }

    /// Builds a measure from raw coordinate rows, projecting each row onto
    /// the manifold.
    pub fn from_coords(manifold: Manifold, coords: &[Vec<f64>], masses: Vec<f64>) -> Result<Self> {
        let points = coords
            .iter()
            .map(|c| manifold.point(c.clone()))
            .collect::<Result<Vec<_>>>()?;
        Self::new(manifold, points, masses)
    }

    /// A single atom of the given mass.
    pub fn dirac(manifold: Manifold, point: Point, mass: f64) -> Result<Self> {
        Self::new(manifold, vec![point], vec![mass])
    }

    /// The empty measure (zero atoms).
    pub fn empty(manifold: Manifold) -> Self {
        DiscreteMeasure {
            manifold,
            points: Vec::new(),
            masses: Vec::new(),
        }
    }

    pub fn manifold(&self) -> &Manifold {
        &self.manifold
    }

    pub fn points(&self) -> &[Point] {
        &self.points
    }

    pub fn masses(&self) -> &[f64] {
        &self.masses
    }

    /// Number of atoms (coincident atoms count separately).
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Total mass `sum_i m_i`.
    pub fn total_mass(&self) -> f64 {
        self.masses.iter().sum()
    }

    /// The same measure rescaled to total mass one.
    ///
    /// # Errors
    ///
    /// `InvalidInput` if the total mass is zero (or the measure is empty):
    /// no rescaling can reach mass one.
    pub fn normalize(&self) -> Result<Self> {
        let total = self.total_mass();
        if total <= 0.0 {
            return Err(Error::InvalidInput(
                "cannot normalize a measure with zero total mass".into(),
            ));
        }
        let masses = self.masses.iter().map(|m| m / total).collect();
        Ok(DiscreteMeasure {
            manifold: self.manifold,
            points: self.points.clone(),
            masses,
        })
    }

    /// The sub-measure of atoms selected by `keep` (same manifold).
    pub fn subset(&self, keep: impl Fn(usize) -> bool) -> Self {
        let mut points = Vec::new();
        let mut masses = Vec::new();
        for i in 0..self.len() {
            if keep(i) {
                points.push(self.points[i].clone());
                masses.push(self.masses[i]);
            }
        }
        DiscreteMeasure {
            manifold: self.manifold,
            points,
            masses,
        }
    }
}

/// A uniform probability measure on the disk of radius `r` around
/// `(cx, cy)`, discretized by the square grid of spacing `h` centered on
/// the disk center: grid nodes inside the disk get equal weights summing
/// to one.
///
/// # Errors
///
/// `InvalidInput` if `r <= 0`, `h <= 0`, or the grid misses the disk
/// entirely (cannot happen for `h <= r`, since the center node is always
/// inside).
pub fn uniform_disk(cx: f64, cy: f64, r: f64, h: f64) -> Result<DiscreteMeasure> {
    if !(r > 0.0) || !(h > 0.0) {
        return Err(Error::InvalidInput(format!(
            "disk radius and spacing must be positive, got r={r}, h={h}"
        )));
    }
    let manifold = Manifold::Euclidean { dim: 2 };
    let steps = (r / h).floor() as i64;
    let mut points = Vec::new();
    for i in -steps..=steps {
        for j in -steps..=steps {
            let (dx, dy) = (i as f64 * h, j as f64 * h);
            if dx * dx + dy * dy <= r * r {
                points.push(manifold.point(vec![cx + dx, cy + dy])?);
            }
        }
    }
    if points.is_empty() {
        return Err(Error::InvalidInput(
            "grid spacing too coarse: no node falls inside the disk".into(),
        ));
    }
    let mass = 1.0 / points.len() as f64;
    let masses = vec![mass; points.len()];
    DiscreteMeasure::new(manifold, points, masses)
}

/// `count` uniform disks of radius `r`, centers drawn uniformly on the
/// segment `[r, l - r] x {0}`, discretized with the default spacing
/// `r / 6`. Deterministic in `seed`.
///
/// # Errors
///
/// `InvalidInput` unless `l > 2 r > 0`.
pub fn gen_disk_line(l: f64, r: f64, count: usize, seed: u64) -> Result<Vec<DiscreteMeasure>> {
    gen_disk_line_spaced(l, r, count, seed, r / 6.0)
}

/// Like [`gen_disk_line`] with an explicit grid spacing `h`.
pub fn gen_disk_line_spaced(
    l: f64,
    r: f64,
    count: usize,
    seed: u64,
    h: f64,
) -> Result<Vec<DiscreteMeasure>> {
    if !(r > 0.0) || !(l > 2.0 * r) {
        return Err(Error::InvalidInput(format!(
            "need l > 2 r > 0 so disks fit in the domain, got l={l}, r={r}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count)
        .map(|_| {
            let cx = rng.gen_range(r..=l - r);
            uniform_disk(cx, 0.0, r, h)
        })
        .collect()
}

/// `count` uniform disks with radius drawn uniformly from
/// `[r_min, r_max]` and center drawn uniformly from
/// `[r_max, l - r_max]^2`, each discretized with spacing `radius / 6`.
/// Deterministic in `seed`.
///
/// # Errors
///
/// `InvalidInput` unless `0 < r_min <= r_max` and `l > 2 r_max`.
pub fn gen_disk_box(
    l: f64,
    r_min: f64,
    r_max: f64,
    count: usize,
    seed: u64,
) -> Result<Vec<DiscreteMeasure>> {
    if !(r_min > 0.0) || !(r_max >= r_min) || !(l > 2.0 * r_max) {
        return Err(Error::InvalidInput(format!(
            "need 0 < r_min <= r_max and l > 2 r_max, got l={l}, r_min={r_min}, r_max={r_max}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count)
        .map(|_| {
            let radius = rng.gen_range(r_min..=r_max);
            let cx = rng.gen_range(r_max..=l - r_max);
            let cy = rng.gen_range(r_max..=l - r_max);
            uniform_disk(cx, cy, radius, radius / 6.0)
        })
        .collect()
}

/// A reference spherical cap at the north pole plus `count` caps of the
/// same opening angle centered at seeded random points on the equator of
/// the radius-`r` sphere. Each cap is a uniform probability measure
/// discretized by a Fibonacci lattice of [`DEFAULT_CAP_POINTS`] nodes.
///
/// # Errors
///
/// `InvalidInput` unless `0 < cap_angle < pi/2` and `r > 0`.
pub fn gen_sphere_caps(
    r: f64,
    cap_angle: f64,
    count: usize,
    seed: u64,
) -> Result<(DiscreteMeasure, Vec<DiscreteMeasure>)> {
    gen_sphere_caps_sized(r, cap_angle, count, seed, DEFAULT_CAP_POINTS)
}

/// Like [`gen_sphere_caps`] with an explicit number of nodes per cap.
pub fn gen_sphere_caps_sized(
    r: f64,
    cap_angle: f64,
    count: usize,
    seed: u64,
    points_per_cap: usize,
) -> Result<(DiscreteMeasure, Vec<DiscreteMeasure>)> {
    if !(r > 0.0) {
        return Err(Error::InvalidInput(format!(
            "sphere radius must be positive, got {r}"
        )));
    }
    if !(cap_angle > 0.0 && cap_angle < std::f64::consts::FRAC_PI_2) {
        return Err(Error::InvalidInput(format!(
            "cap angle must lie in (0, pi/2), got {cap_angle}"
        )));
    }
    if points_per_cap == 0 {
        return Err(Error::InvalidInput("caps need at least one node".into()));
    }
    let reference = fibonacci_cap(r, cap_angle, points_per_cap, &[0.0, 0.0, 1.0])?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let samples = (0..count)
        .map(|_| {
            let phi = rng.gen_range(0.0..std::f64::consts::TAU);
            fibonacci_cap(r, cap_angle, points_per_cap, &[phi.cos(), phi.sin(), 0.0])
        })
        .collect::<Result<Vec<_>>>()?;
    Ok((reference, samples))
}

/// Uniform probability measure on the cap of opening angle `cap_angle`
/// around the unit direction `center`, sampled by a Fibonacci lattice:
/// heights equally spaced over the cap, azimuths stepped by the golden
/// angle. Low-discrepancy and deterministic.
fn fibonacci_cap(r: f64, cap_angle: f64, n: usize, center: &[f64]) -> Result<DiscreteMeasure> {
    let manifold = Manifold::Sphere { radius: r };
    let golden_angle = std::f64::consts::PI * (3.0 - 5.0_f64.sqrt());
    let z_min = cap_angle.cos();
    let rot = rotation_from_north(center);
    let mut points = Vec::with_capacity(n);
    for i in 0..n {
        let z = 1.0 - (1.0 - z_min) * (i as f64 + 0.5) / n as f64;
        let rho = (1.0 - z * z).max(0.0).sqrt();
        let phi = golden_angle * i as f64;
        let local = [rho * phi.cos(), rho * phi.sin(), z];
        let world: Vec<f64> = (0..3)
            .map(|a| r * (0..3).map(|b| rot[a][b] * local[b]).sum::<f64>())
            .collect();
        points.push(manifold.point(world)?);
    }
    let masses = vec![1.0 / n as f64; n];
    DiscreteMeasure::new(manifold, points, masses)
}

/// Rotation matrix carrying the north pole `(0,0,1)` to the unit vector
/// `c` (Rodrigues' formula; the antipodal case falls back to a half-turn
/// about the x-axis).
fn rotation_from_north(c: &[f64]) -> [[f64; 3]; 3] {
    let cos_t = c[2];
    if cos_t > 1.0 - 1e-15 {
        return [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]];
    }
    if cos_t < -1.0 + 1e-15 {
        return [[1.0, 0.0, 0.0], [0.0, -1.0, 0.0], [0.0, 0.0, -1.0]];
    }
    // Axis = north x c (unnormalized), angle t with cos t = c_z.
    let (ax, ay) = (-c[1], c[0]);
    let s2 = ax * ax + ay * ay; // sin^2 t
    let k = (1.0 - cos_t) / s2;
    [
        [cos_t + k * ax * ax, k * ax * ay, c[0]],
        [k * ax * ay, cos_t + k * ay * ay, c[1]],
        [-c[0], -c[1], cos_t],
    ]
}

/// An axis-aligned pixel grid: per-axis bounds and resolutions.
/// Cell `i` along an axis is centered at `lo + (i + 1/2) (hi - lo) / res`.
#[derive(Debug, Clone, PartialEq)]
pub struct GridSpec {
    bounds: Vec<(f64, f64)>,
    resolution: Vec<usize>,
}

impl GridSpec {
    /// # Errors
    ///
    /// `InvalidInput` if lengths differ, any resolution is zero, or any
    /// axis has `hi <= lo`.
    pub fn new(bounds: Vec<(f64, f64)>, resolution: Vec<usize>) -> Result<Self> {
        if bounds.len() != resolution.len() {
            return Err(Error::InvalidInput(format!(
                "{} bounds but {} resolutions",
                bounds.len(),
                resolution.len()
            )));
        }
        for (lo, hi) in &bounds {
            if !(hi > lo) || !lo.is_finite() || !hi.is_finite() {
                return Err(Error::InvalidInput(format!(
                    "axis bounds must satisfy lo < hi, got [{lo}, {hi}]"
                )));
            }
        }
        if resolution.contains(&0) {
            return Err(Error::InvalidInput(
                "grid resolution must be at least 1 per axis".into(),
            ));
        }
        Ok(GridSpec { bounds, resolution })
    }

    pub fn bounds(&self) -> &[(f64, f64)] {
        &self.bounds
    }

    pub fn resolution(&self) -> &[usize] {
        &self.resolution
    }

    /// Cell edge length along `axis`.
    pub fn cell_size(&self, axis: usize) -> f64 {
        let (lo, hi) = self.bounds[axis];
        (hi - lo) / self.resolution[axis] as f64
    }
}

/// A nonnegative image over a 2-D [`GridSpec`], stored row-major with the
/// first axis as rows.
#[derive(Debug, Clone, PartialEq)]
pub struct RasterImage {
    grid: GridSpec,
    values: Vec<f64>,
    clamped_atoms: usize,
}

impl RasterImage {
    pub fn grid(&self) -> &GridSpec {
        &self.grid
    }

    /// Raw cell values, row-major (`values[i * cols + j]`).
    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Number of atoms that fell outside the grid and were clamped onto
    /// the nearest boundary cell.
    pub fn clamped_atoms(&self) -> usize {
        self.clamped_atoms
    }

    pub fn rows(&self) -> usize {
        self.grid.resolution[0]
    }

    pub fn cols(&self) -> usize {
        self.grid.resolution[1]
    }
}

/// Splats a measure onto a 2-D grid with bilinear weights, then applies an
/// optional truncated Gaussian blur (`blur_sigma` in coordinate units,
/// kernel cut at three sigma, normalized so interior mass is preserved).
///
/// Euclidean measures must be planar; sphere measures are first mapped
/// through the equirectangular chart `(longitude, latitude) =
/// (atan2(y, x), asin(z / r))`, so the grid bounds are chart coordinates.
/// Atoms outside the grid are clamped onto the nearest boundary cell and
/// counted in [`RasterImage::clamped_atoms`]. Splatting is linear in the
/// measure and preserves total mass exactly; blurring loses only the
/// kernel tails that extend past the grid edge.
///
/// # Errors
///
/// * `InvalidInput` if the grid is not 2-D, a Euclidean measure is not
///   2-D, or `blur_sigma` is negative.
/// * `Unsupported` for hyperbolic measures (no standard chart is wired
///   up).
pub fn rasterize(mu: &DiscreteMeasure, grid: &GridSpec, blur_sigma: f64) -> Result<RasterImage> {
    if grid.bounds.len() != 2 {
        return Err(Error::InvalidInput(format!(
            "rasterization needs a 2-D grid, got {} axes",
            grid.bounds.len()
        )));
    }
    if !(blur_sigma >= 0.0) {
        return Err(Error::InvalidInput(format!(
            "blur sigma must be nonnegative, got {blur_sigma}"
        )));
    }
    type Chart = Box<dyn Fn(&Point) -> [f64; 2]>;
    let chart: Chart = match mu.manifold() {
        Manifold::Euclidean { dim: 2 } => Box::new(|p: &Point| [p.coords()[0], p.coords()[1]]),
        Manifold::Euclidean { dim } => {
            return Err(Error::InvalidInput(format!(
                "rasterization needs planar coordinates, got a {dim}-dimensional measure"
            )));
        }
        Manifold::Sphere { radius } => {
            let r = *radius;
            Box::new(move |p: &Point| {
                let c = p.coords();
                let lon = c[1].atan2(c[0]);
                let lat = (c[2] / r).clamp(-1.0, 1.0).asin();
                [lon, lat]
            })
        }
        Manifold::Hyperbolic => {
            return Err(Error::Unsupported(
                "rasterization of hyperbolic measures is not implemented".into(),
            ));
        }
    };

    let (rows, cols) = (grid.resolution[0], grid.resolution[1]);
    let mut values = vec![0.0; rows * cols];
    let mut clamped_atoms = 0usize;
    for (p, &mass) in mu.points().iter().zip(mu.masses()) {
        let xy = chart(p);
        let mut outside = false;
        let mut frac = [0.0f64; 2];
        let mut cell = [0i64; 2];
        for axis in 0..2 {
            let (lo, hi) = grid.bounds[axis];
            if xy[axis] < lo || xy[axis] > hi {
                outside = true;
            }
            let g = (xy[axis].clamp(lo, hi) - lo) / grid.cell_size(axis) - 0.5;
            let base = g.floor();
            cell[axis] = base as i64;
            frac[axis] = g - base;
        }
        if outside {
            clamped_atoms += 1;
        }
        let clamp_idx = |i: i64, n: usize| i.clamp(0, n as i64 - 1) as usize;
        for (di, wi) in [(0, 1.0 - frac[0]), (1, frac[0])] {
            for (dj, wj) in [(0, 1.0 - frac[1]), (1, frac[1])] {
                let i = clamp_idx(cell[0] + di, rows);
                let j = clamp_idx(cell[1] + dj, cols);
                values[i * cols + j] += mass * wi * wj;
            }
        }
    }

    if blur_sigma > 0.0 {
        for axis in 0..2 {
            let kernel = gaussian_kernel(blur_sigma, grid.cell_size(axis));
            if kernel.len() > 1 {
                values = convolve_axis(&values, rows, cols, axis, &kernel);
            }
        }
    }

    Ok(RasterImage {
        grid: grid.clone(),
        values,
        clamped_atoms,
    })
}

/// Discrete Gaussian kernel with standard deviation `sigma`, truncated at
/// three sigma, normalized to unit sum.
fn gaussian_kernel(sigma: f64, cell: f64) -> Vec<f64> {
    let half = (3.0 * sigma / cell).ceil() as i64;
    let mut k: Vec<f64> = (-half..=half)
        .map(|i| {
            let x = i as f64 * cell;
            (-x * x / (2.0 * sigma * sigma)).exp()
        })
        .collect();
    let sum: f64 = k.iter().sum();
    for v in &mut k {
        *v /= sum;
    }
    k
}

fn convolve_axis(
    values: &[f64],
    rows: usize,
    cols: usize,
    axis: usize,
    kernel: &[f64],
) -> Vec<f64> {
    let half = (kernel.len() / 2) as i64;
    let mut out = vec![0.0; values.len()];
    for i in 0..rows as i64 {
        for j in 0..cols as i64 {
            let v = values[(i * cols as i64 + j) as usize];
            if v == 0.0 {
                continue;
            }
            for (k, w) in kernel.iter().enumerate() {
                let off = k as i64 - half;
                let (ti, tj) = if axis == 0 {
                    (i + off, j)
                } else {
                    (i, j + off)
                };
                if ti >= 0 && ti < rows as i64 && tj >= 0 && tj < cols as i64 {
                    out[(ti * cols as i64 + tj) as usize] += v * w;
                }
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn line_manifold() -> Manifold {
        Manifold::Euclidean { dim: 1 }
    }

    #[test]
    fn total_mass_and_normalize() {
        let m = line_manifold();
        let mu = DiscreteMeasure::from_coords(
            m,
            &[vec![0.0], vec![1.0], vec![2.0]],
            vec![1.0, 2.0, 3.0],
        )
        .unwrap();
        assert!((mu.total_mass() - 6.0).abs() < 1e-15);
        let p = mu.normalize().unwrap();
        assert!((p.total_mass() - 1.0).abs() < 1e-12);
        assert!((p.masses()[2] - 0.5).abs() < 1e-15);
    }

    #[test]
    fn zero_measure_cannot_normalize() {
        let m = line_manifold();
        let mu = DiscreteMeasure::from_coords(m, &[vec![0.0]], vec![0.0]).unwrap();
        assert!(matches!(mu.normalize(), Err(Error::InvalidInput(_))));
    }

    #[test]
    fn negative_mass_is_rejected() {
        let m = line_manifold();
        assert!(matches!(
            DiscreteMeasure::from_coords(m, &[vec![0.0]], vec![-1.0]),
            Err(Error::InvalidInput(_))
        ));
    }

    #[test]
    fn uniform_disk_is_a_probability_inside_the_disk() {
        let mu = uniform_disk(1.0, -2.0, 0.2, 0.2 / 6.0).unwrap();
        assert!((mu.total_mass() - 1.0).abs() < 1e-12);
        for p in mu.points() {
            let (dx, dy) = (p.coords()[0] - 1.0, p.coords()[1] + 2.0);
            assert!(dx * dx + dy * dy <= 0.2 * 0.2 + 1e-15);
        }
        // Spacing r/6 gives a filled grid, not a handful of nodes.
        assert!(mu.len() > 80, "only {} nodes", mu.len());
    }

    #[test]
    fn disk_line_is_deterministic_and_in_bounds() {
        let a = gen_disk_line(5.0, 0.2, 8, 42).unwrap();
        let b = gen_disk_line(5.0, 0.2, 8, 42).unwrap();
        assert_eq!(a, b);
        let c = gen_disk_line(5.0, 0.2, 8, 43).unwrap();
        assert_ne!(a, c, "different seeds should move the disks");
        for mu in &a {
            for p in mu.points() {
                let x = p.coords()[0];
                assert!((0.0..=5.0).contains(&x), "x = {x} escaped the domain");
                assert!(p.coords()[1].abs() <= 0.2 + 1e-12);
            }
        }
    }

    #[test]
    fn disk_line_rejects_oversized_disks() {
        assert!(matches!(
            gen_disk_line(0.3, 0.2, 1, 0),
            Err(Error::InvalidInput(_))
        ));
    }

    #[test]
    fn disk_box_radii_and_centers_in_range() {
        let samples = gen_disk_box(5.0, 0.3, 0.7, 6, 11).unwrap();
        for mu in &samples {
            assert!((mu.total_mass() - 1.0).abs() < 1e-12);
            for p in mu.points() {
                for c in p.coords() {
                    assert!((0.0..=5.0).contains(c));
                }
            }
        }
    }

    #[test]
    fn sphere_caps_cover_the_requested_cap() {
        let (reference, samples) = gen_sphere_caps(2.0, 0.5, 3, 7).unwrap();
        let m = Manifold::Sphere { radius: 2.0 };
        let pole = m.point(vec![0.0, 0.0, 2.0]).unwrap();
        for p in reference.points() {
            let d = m.dist(&pole, p).unwrap();
            // Geodesic radius of the cap is r * cap_angle.
            assert!(d <= 2.0 * 0.5 + 1e-9, "reference point at distance {d}");
        }
        assert_eq!(samples.len(), 3);
        for mu in &samples {
            assert!((mu.total_mass() - 1.0).abs() < 1e-12);
            // Sample caps sit on the equator: centroid z stays near zero.
            let mean_z: f64 = mu
                .points()
                .iter()
                .zip(mu.masses())
                .map(|(p, m)| p.coords()[2] * m)
                .sum();
            assert!(mean_z.abs() < 0.2, "cap drifted off the equator: {mean_z}");
        }
    }

    #[test]
    fn cap_angle_outside_range_is_rejected() {
        assert!(matches!(
            gen_sphere_caps(1.0, 1.6, 1, 0),
            Err(Error::InvalidInput(_))
        ));
    }

    #[test]
    fn rasterize_preserves_mass_and_is_linear() {
        let m = Manifold::Euclidean { dim: 2 };
        let grid = GridSpec::new(vec![(0.0, 1.0), (0.0, 1.0)], vec![8, 8]).unwrap();
        let mu = DiscreteMeasure::from_coords(
            m,
            &[vec![0.25, 0.25], vec![0.8, 0.3], vec![0.5, 0.9]],
            vec![1.0, 2.0, 0.5],
        )
        .unwrap();
        let img = rasterize(&mu, &grid, 0.0).unwrap();
        let total: f64 = img.values().iter().sum();
        assert!((total - mu.total_mass()).abs() < 1e-6);
        assert_eq!(img.clamped_atoms(), 0);
        assert!(img.values().iter().all(|v| *v >= 0.0));

        // Doubling the masses doubles every cell.
        let mu2 = DiscreteMeasure::new(m, mu.points().to_vec(), vec![2.0, 4.0, 1.0]).unwrap();
        let img2 = rasterize(&mu2, &grid, 0.0).unwrap();
        for (a, b) in img.values().iter().zip(img2.values()) {
            assert!((2.0 * a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn rasterize_clamps_and_counts_outside_atoms() {
        let m = Manifold::Euclidean { dim: 2 };
        let grid = GridSpec::new(vec![(0.0, 1.0), (0.0, 1.0)], vec![4, 4]).unwrap();
        let mu = DiscreteMeasure::from_coords(m, &[vec![3.0, 0.5], vec![0.5, 0.5]], vec![1.0, 1.0])
            .unwrap();
        let img = rasterize(&mu, &grid, 0.0).unwrap();
        assert_eq!(img.clamped_atoms(), 1);
        let total: f64 = img.values().iter().sum();
        assert!(
            (total - 2.0).abs() < 1e-6,
            "clamped mass is kept on the grid"
        );
    }

    #[test]
    fn blur_keeps_interior_mass() {
        let m = Manifold::Euclidean { dim: 2 };
        let grid = GridSpec::new(vec![(0.0, 1.0), (0.0, 1.0)], vec![32, 32]).unwrap();
        let mu = DiscreteMeasure::from_coords(m, &[vec![0.5, 0.5]], vec![1.0]).unwrap();
        let img = rasterize(&mu, &grid, 0.05).unwrap();
        let total: f64 = img.values().iter().sum();
        // A centered atom with 3 sigma < 0.5 loses nothing to the border.
        assert!((total - 1.0).abs() < 1e-9, "blurred mass {total}");
    }

    #[test]
    fn rasterize_sphere_uses_longitude_latitude_chart() {
        let m = Manifold::Sphere { radius: 1.0 };
        let pi = std::f64::consts::PI;
        let grid = GridSpec::new(vec![(-pi, pi), (-pi / 2.0, pi / 2.0)], vec![16, 8]).unwrap();
        let mu = DiscreteMeasure::new(m, vec![m.point(vec![1.0, 0.0, 0.0]).unwrap()], vec![1.0])
            .unwrap();
        let img = rasterize(&mu, &grid, 0.0).unwrap();
        let total: f64 = img.values().iter().sum();
        assert!((total - 1.0).abs() < 1e-9);
        assert_eq!(img.clamped_atoms(), 0);
    }

    #[test]
    fn rasterize_hyperbolic_is_unsupported() {
        let m = Manifold::Hyperbolic;
        let grid = GridSpec::new(vec![(0.0, 1.0), (0.0, 1.0)], vec![4, 4]).unwrap();
        let mu = DiscreteMeasure::from_coords(m, &[vec![0.0, 0.0, 1.0]], vec![1.0]).unwrap();
        assert!(matches!(
            rasterize(&mu, &grid, 0.0),
            Err(Error::Unsupported(_))
        ));
    }
}
