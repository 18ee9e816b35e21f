//! Reading and writing the crate's artifacts: measures, tangents,
//! transport plans, dual potentials, raster images, and study reports.
//!
//! File conventions:
//!
//! * **Measures** — CSV with header `x1,..,xd,mass` (ambient coordinates,
//!   then mass) plus a JSON *sidecar* at the same path with a `.json`
//!   extension describing the base space.
//! * **Tangents** — CSV with header `x1,..,xd,mass,v1,..,vd,alpha` over
//!   the reference atoms, a second CSV `<stem>_singular.csv` holding the
//!   singular part (soft-marginal metrics only), and a sidecar carrying
//!   the base space, metric name, length scale, and bookkeeping scalars.
//! * **Plans** — headerless dense CSV, one row per source atom.
//! * **Potentials** — two-column CSV `phi0,phi1`; the shorter column is
//!   padded with empty cells.
//! * **Rasters** — plain-text PGM (`P2`, 16-bit, scaled to the maximum
//!   cell) for viewing, or raw-float CSV for further processing.
//! * **Reports** — one CSV per data series plus [`write_json`] for the
//!   full summary structure.
//!
//! All floats are written with Rust's shortest-round-trip formatting, so
//! a write → read cycle is exact and repeated runs with identical inputs
//! produce byte-identical files.

use std::fs;
use std::path::{Path, PathBuf};

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::analysis::{
    ConvexityProbe, KappaStudy, MassSwapStudy, NearCutStudy, PcaResult, RefinementStudy,
    TangentField,
};
use crate::manifold::Manifold;
use crate::measure::{DiscreteMeasure, RasterImage};
use crate::solver::DualPotentials;
use crate::tangent::{HkTangent, ShkTangent, W2Tangent};
use crate::{Error, Result};

/// Maximum grey value used by [`write_raster_pgm`].
pub const PGM_MAX_GREY: u32 = 65535;

// ---------------------------------------------------------------------------
// Paths and primitives
// ---------------------------------------------------------------------------

/// The JSON sidecar path for a CSV artifact: same path, `.json` extension.
pub fn sidecar_path(path: &Path) -> PathBuf {
    path.with_extension("json")
}

/// The singular-part path for a tangent CSV: `foo.csv` → `foo_singular.csv`.
pub fn singular_path(path: &Path) -> PathBuf {
    let stem = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    path.with_file_name(format!("{stem}_singular.csv"))
}

/// Shortest round-trip decimal form of `v`.
fn fmt_f64(v: f64) -> String {
    format!("{v}")
}

fn parse_f64(field: &str, what: &str) -> Result<f64> {
    field
        .trim()
        .parse::<f64>()
        .map_err(|_| Error::Parse(format!("{what}: cannot read '{field}' as a number")))
}

fn csv_err(e: csv::Error) -> Error {
    if e.is_io_error() {
        match e.into_kind() {
            csv::ErrorKind::Io(io) => Error::Io(io),
            other => Error::Parse(format!("{other:?}")),
        }
    } else {
        Error::Parse(e.to_string())
    }
}

fn open_writer(path: &Path) -> Result<csv::Writer<fs::File>> {
    csv::Writer::from_path(path).map_err(csv_err)
}

fn open_reader(path: &Path, headers: bool) -> Result<csv::Reader<fs::File>> {
    csv::ReaderBuilder::new()
        .has_headers(headers)
        .flexible(true)
        .from_path(path)
        .map_err(csv_err)
}

fn read_rows(path: &Path, headers: bool) -> Result<Vec<csv::StringRecord>> {
    let mut reader = open_reader(path, headers)?;
    let mut rows = Vec::new();
    for record in reader.records() {
        rows.push(record.map_err(csv_err)?);
    }
    Ok(rows)
}

// ---------------------------------------------------------------------------
// Sidecars
// ---------------------------------------------------------------------------

/// JSON companion of a CSV artifact. The base-space fields are always
/// present; the remaining fields appear only on tangent sidecars.
#[derive(Debug, Clone, Serialize, Deserialize)]
struct Sidecar {
    manifold: String,
    dim: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    radius: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    metric: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    kappa: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    dropped_plan_mass: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    s_prime0: Option<f64>,
}

impl Sidecar {
    fn for_manifold(manifold: &Manifold) -> Self {
        let (name, radius) = match manifold {
            Manifold::Euclidean { .. } => ("euclidean", None),
            Manifold::Sphere { radius } => ("sphere", Some(*radius)),
            Manifold::Hyperbolic => ("hyperbolic", None),
        };
        Sidecar {
            manifold: name.to_string(),
            dim: manifold.ambient_dim(),
            radius,
            metric: None,
            kappa: None,
            dropped_plan_mass: None,
            s_prime0: None,
        }
    }

    fn manifold(&self) -> Result<Manifold> {
        match self.manifold.as_str() {
            "euclidean" => Ok(Manifold::Euclidean { dim: self.dim }),
            "sphere" => {
                let radius = self
                    .radius
                    .ok_or_else(|| Error::Parse("sphere sidecar is missing its radius".into()))?;
                Ok(Manifold::Sphere { radius })
            }
            "hyperbolic" => Ok(Manifold::Hyperbolic),
            other => Err(Error::Parse(format!("unknown base space '{other}'"))),
        }
    }

    fn write(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self).map_err(|e| Error::Parse(e.to_string()))?;
        fs::write(path, text + "\n")?;
        Ok(())
    }

    fn read(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)?;
        serde_json::from_str(&text).map_err(|e| Error::Parse(format!("{}: {e}", path.display())))
    }

    fn require(&self, field: &str, value: Option<f64>) -> Result<f64> {
        value.ok_or_else(|| Error::Parse(format!("tangent sidecar is missing '{field}'")))
    }
}

/// Serializes any report structure as pretty-printed JSON.
pub fn write_json<T: Serialize>(path: impl AsRef<Path>, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value).map_err(|e| Error::Parse(e.to_string()))?;
    fs::write(path.as_ref(), text + "\n")?;
    Ok(())
}

// ---------------------------------------------------------------------------
// Measures
// ---------------------------------------------------------------------------

fn coordinate_header(dim: usize) -> Vec<String> {
    (1..=dim).map(|a| format!("x{a}")).collect()
}

/// Writes `mu` as `x1,..,xd,mass` CSV plus a base-space sidecar.
pub fn write_measure(path: impl AsRef<Path>, mu: &DiscreteMeasure) -> Result<()> {
    let path = path.as_ref();
    let dim = mu.manifold().ambient_dim();
    let mut writer = open_writer(path)?;
    let mut header = coordinate_header(dim);
    header.push("mass".into());
    writer.write_record(&header).map_err(csv_err)?;
    for (point, mass) in mu.points().iter().zip(mu.masses()) {
        let mut row: Vec<String> = point.coords().iter().copied().map(fmt_f64).collect();
        row.push(fmt_f64(*mass));
        writer.write_record(&row).map_err(csv_err)?;
    }
    writer.flush().map_err(Error::Io)?;
    Sidecar::for_manifold(mu.manifold()).write(&sidecar_path(path))
}

/// Reads a measure written by [`write_measure`] (CSV plus sidecar).
pub fn read_measure(path: impl AsRef<Path>) -> Result<DiscreteMeasure> {
    let path = path.as_ref();
    let sidecar = Sidecar::read(&sidecar_path(path))?;
    let manifold = sidecar.manifold()?;
    let dim = manifold.ambient_dim();
    let mut coords = Vec::new();
    let mut masses = Vec::new();
    for (index, row) in read_rows(path, true)?.iter().enumerate() {
        if row.len() != dim + 1 {
            return Err(Error::Parse(format!(
                "measure row {} has {} fields, expected {} coordinates plus a mass",
                index + 1,
                row.len(),
                dim
            )));
        }
        let mut point = Vec::with_capacity(dim);
        for a in 0..dim {
            point.push(parse_f64(&row[a], "coordinate")?);
        }
        coords.push(point);
        masses.push(parse_f64(&row[dim], "mass")?);
    }
    DiscreteMeasure::from_coords(manifold, &coords, masses)
}

// ---------------------------------------------------------------------------
// Tangents
// ---------------------------------------------------------------------------

fn write_tangent_rows(
    path: &Path,
    reference: &DiscreteMeasure,
    component_rows: &[&[f64]],
    alpha: &[f64],
) -> Result<()> {
    let dim = reference.manifold().ambient_dim();
    let mut writer = open_writer(path)?;
    let mut header = coordinate_header(dim);
    header.push("mass".into());
    header.extend((1..=dim).map(|a| format!("v{a}")));
    header.push("alpha".into());
    writer.write_record(&header).map_err(csv_err)?;
    for (i, (point, mass)) in reference
        .points()
        .iter()
        .zip(reference.masses())
        .enumerate()
    {
        let mut row: Vec<String> = point.coords().iter().copied().map(fmt_f64).collect();
        row.push(fmt_f64(*mass));
        row.extend(component_rows[i].iter().copied().map(fmt_f64));
        row.push(fmt_f64(alpha[i]));
        writer.write_record(&row).map_err(csv_err)?;
    }
    writer.flush().map_err(Error::Io)?;
    Ok(())
}

struct TangentRows {
    reference: DiscreteMeasure,
    components: Vec<Vec<f64>>,
    alpha: Vec<f64>,
}

fn read_tangent_rows(path: &Path, manifold: Manifold) -> Result<TangentRows> {
    let dim = manifold.ambient_dim();
    let width = 2 * dim + 2;
    let mut coords = Vec::new();
    let mut masses = Vec::new();
    let mut components = Vec::new();
    let mut alpha = Vec::new();
    for (index, row) in read_rows(path, true)?.iter().enumerate() {
        if row.len() != width {
            return Err(Error::Parse(format!(
                "tangent row {} has {} fields, expected {width}",
                index + 1,
                row.len()
            )));
        }
        let mut point = Vec::with_capacity(dim);
        let mut comps = Vec::with_capacity(dim);
        for a in 0..dim {
            point.push(parse_f64(&row[a], "coordinate")?);
            comps.push(parse_f64(&row[dim + 1 + a], "velocity component")?);
        }
        coords.push(point);
        masses.push(parse_f64(&row[dim], "mass")?);
        components.push(comps);
        alpha.push(parse_f64(&row[width - 1], "alpha")?);
    }
    Ok(TangentRows {
        reference: DiscreteMeasure::from_coords(manifold, &coords, masses)?,
        components,
        alpha,
    })
}

fn attach_velocities(
    reference: &DiscreteMeasure,
    components: Vec<Vec<f64>>,
) -> Result<Vec<crate::manifold::TangentVec>> {
    reference
        .points()
        .iter()
        .zip(components)
        .map(|(point, comps)| reference.manifold().tangent(point.clone(), comps))
        .collect()
}

/// Writes a balanced-metric tangent: one CSV over the reference atoms
/// (the `alpha` column is identically zero) plus a sidecar.
pub fn write_w2_tangent(path: impl AsRef<Path>, tangent: &W2Tangent) -> Result<()> {
    let path = path.as_ref();
    let reference = tangent.reference();
    let rows: Vec<&[f64]> = tangent.velocities().iter().map(|v| v.comps()).collect();
    let alpha = vec![0.0; reference.len()];
    write_tangent_rows(path, reference, &rows, &alpha)?;
    let mut sidecar = Sidecar::for_manifold(reference.manifold());
    sidecar.metric = Some("w2".into());
    sidecar.write(&sidecar_path(path))
}

/// Reads a tangent written by [`write_w2_tangent`].
pub fn read_w2_tangent(path: impl AsRef<Path>) -> Result<W2Tangent> {
    let path = path.as_ref();
    let sidecar = Sidecar::read(&sidecar_path(path))?;
    expect_metric(&sidecar, "w2")?;
    let rows = read_tangent_rows(path, sidecar.manifold()?)?;
    let velocities = attach_velocities(&rows.reference, rows.components)?;
    W2Tangent::new(rows.reference, velocities)
}

fn expect_metric(sidecar: &Sidecar, expected: &str) -> Result<()> {
    match sidecar.metric.as_deref() {
        Some(found) if found == expected => Ok(()),
        Some(found) => Err(Error::Parse(format!(
            "tangent sidecar declares metric '{found}', expected '{expected}'"
        ))),
        None => Err(Error::Parse("tangent sidecar is missing its metric".into())),
    }
}

/// Writes a soft-marginal tangent: the main CSV, the singular part as a
/// measure CSV at [`singular_path`], and a sidecar with `kappa` and the
/// dropped plan mass.
pub fn write_hk_tangent(path: impl AsRef<Path>, tangent: &HkTangent) -> Result<()> {
    let path = path.as_ref();
    let reference = tangent.reference();
    let rows: Vec<&[f64]> = tangent.velocities().iter().map(|v| v.comps()).collect();
    write_tangent_rows(path, reference, &rows, tangent.alpha())?;
    write_measure(singular_path(path), tangent.singular())?;
    let mut sidecar = Sidecar::for_manifold(reference.manifold());
    sidecar.metric = Some("hk".into());
    sidecar.kappa = Some(tangent.kappa());
    sidecar.dropped_plan_mass = Some(tangent.dropped_plan_mass());
    sidecar.write(&sidecar_path(path))
}

/// Reads a tangent written by [`write_hk_tangent`].
pub fn read_hk_tangent(path: impl AsRef<Path>) -> Result<HkTangent> {
    let path = path.as_ref();
    let sidecar = Sidecar::read(&sidecar_path(path))?;
    expect_metric(&sidecar, "hk")?;
    let kappa = sidecar.require("kappa", sidecar.kappa)?;
    let dropped = sidecar.require("dropped_plan_mass", sidecar.dropped_plan_mass)?;
    let rows = read_tangent_rows(path, sidecar.manifold()?)?;
    let singular = read_measure(singular_path(path))?;
    let velocities = attach_velocities(&rows.reference, rows.components)?;
    HkTangent::new(
        rows.reference,
        velocities,
        rows.alpha,
        singular,
        kappa,
        dropped,
    )
}

/// Writes a spherical tangent: same layout as the soft-marginal writer
/// plus the initial reparametrization speed in the sidecar.
pub fn write_shk_tangent(path: impl AsRef<Path>, tangent: &ShkTangent) -> Result<()> {
    let path = path.as_ref();
    let reference = tangent.reference();
    let rows: Vec<&[f64]> = tangent.velocities().iter().map(|v| v.comps()).collect();
    write_tangent_rows(path, reference, &rows, tangent.alpha())?;
    write_measure(singular_path(path), tangent.singular())?;
    let mut sidecar = Sidecar::for_manifold(reference.manifold());
    sidecar.metric = Some("shk".into());
    sidecar.kappa = Some(tangent.kappa());
    sidecar.dropped_plan_mass = Some(tangent.dropped_plan_mass());
    sidecar.s_prime0 = Some(tangent.s_prime0());
    sidecar.write(&sidecar_path(path))
}

/// Reads a tangent written by [`write_shk_tangent`]. The
/// reparametrization speed is recomputed from the stored components and
/// checked against the sidecar value.
pub fn read_shk_tangent(path: impl AsRef<Path>) -> Result<ShkTangent> {
    let path = path.as_ref();
    let sidecar = Sidecar::read(&sidecar_path(path))?;
    expect_metric(&sidecar, "shk")?;
    let kappa = sidecar.require("kappa", sidecar.kappa)?;
    let dropped = sidecar.require("dropped_plan_mass", sidecar.dropped_plan_mass)?;
    let stored_speed = sidecar.require("s_prime0", sidecar.s_prime0)?;
    let rows = read_tangent_rows(path, sidecar.manifold()?)?;
    let singular = read_measure(singular_path(path))?;
    let velocities = attach_velocities(&rows.reference, rows.components)?;
    let tangent = ShkTangent::from_components(
        rows.reference,
        velocities,
        rows.alpha,
        singular,
        kappa,
        dropped,
    )?;
    let drift = (tangent.s_prime0() - stored_speed).abs();
    if drift > 1e-9 * stored_speed.abs().max(1.0) {
        return Err(Error::Parse(format!(
            "stored reparametrization speed {stored_speed} disagrees with the \
             recomputed value {} by {drift:.3e}",
            tangent.s_prime0()
        )));
    }
    Ok(tangent)
}

// ---------------------------------------------------------------------------
// Raw tangent fields (PCA means and modes)
// ---------------------------------------------------------------------------

/// Writes a raw tangent field over `reference` in the tangent CSV layout.
/// Unlike the typed tangent writers this puts no admissibility
/// constraints on the entries, so PCA means and modes can be stored.
pub fn write_field(
    path: impl AsRef<Path>,
    reference: &DiscreteMeasure,
    field: &TangentField,
) -> Result<()> {
    let path = path.as_ref();
    if field.v.len() != reference.len() || field.alpha.len() != reference.len() {
        return Err(Error::InvalidInput(format!(
            "field over {} atoms does not match a reference with {}",
            field.v.len(),
            reference.len()
        )));
    }
    let rows: Vec<&[f64]> = field.v.iter().map(|c| c.as_slice()).collect();
    write_tangent_rows(path, reference, &rows, &field.alpha)?;
    Sidecar::for_manifold(reference.manifold()).write(&sidecar_path(path))
}

/// Reads a raw tangent field written by [`write_field`], returning the
/// reference measure reconstructed from the same rows.
pub fn read_field(path: impl AsRef<Path>) -> Result<(DiscreteMeasure, TangentField)> {
    let path = path.as_ref();
    let sidecar = Sidecar::read(&sidecar_path(path))?;
    let rows = read_tangent_rows(path, sidecar.manifold()?)?;
    Ok((
        rows.reference,
        TangentField {
            v: rows.components,
            alpha: rows.alpha,
        },
    ))
}

// ---------------------------------------------------------------------------
// Plans and potentials
// ---------------------------------------------------------------------------

/// Writes a dense coupling matrix as headerless CSV, one row per source
/// atom.
pub fn write_plan(path: impl AsRef<Path>, plan: &DMatrix<f64>) -> Result<()> {
    let mut writer = open_writer(path.as_ref())?;
    for i in 0..plan.nrows() {
        let row: Vec<String> = (0..plan.ncols()).map(|j| fmt_f64(plan[(i, j)])).collect();
        writer.write_record(&row).map_err(csv_err)?;
    }
    writer.flush().map_err(Error::Io)?;
    Ok(())
}

/// Reads a dense coupling matrix written by [`write_plan`].
pub fn read_plan(path: impl AsRef<Path>) -> Result<DMatrix<f64>> {
    let rows = read_rows(path.as_ref(), false)?;
    if rows.is_empty() {
        return Err(Error::Parse("plan file contains no rows".into()));
    }
    let ncols = rows[0].len();
    let mut entries = Vec::with_capacity(rows.len() * ncols);
    for (index, row) in rows.iter().enumerate() {
        if row.len() != ncols {
            return Err(Error::Parse(format!(
                "plan row {} has {} fields, expected {ncols}",
                index + 1,
                row.len()
            )));
        }
        for field in row.iter() {
            entries.push(parse_f64(field, "plan entry")?);
        }
    }
    Ok(DMatrix::from_row_slice(rows.len(), ncols, &entries))
}

/// Writes the two dual potential vectors side by side; the shorter column
/// is padded with empty cells.
pub fn write_potentials(path: impl AsRef<Path>, potentials: &DualPotentials) -> Result<()> {
    let mut writer = open_writer(path.as_ref())?;
    writer.write_record(["phi0", "phi1"]).map_err(csv_err)?;
    let rows = potentials.phi0.len().max(potentials.phi1.len());
    for i in 0..rows {
        let left = potentials
            .phi0
            .get(i)
            .copied()
            .map(fmt_f64)
            .unwrap_or_default();
        let right = potentials
            .phi1
            .get(i)
            .copied()
            .map(fmt_f64)
            .unwrap_or_default();
        writer.write_record([left, right]).map_err(csv_err)?;
    }
    writer.flush().map_err(Error::Io)?;
    Ok(())
}

/// Reads potentials written by [`write_potentials`].
pub fn read_potentials(path: impl AsRef<Path>) -> Result<DualPotentials> {
    let mut phi0 = Vec::new();
    let mut phi1 = Vec::new();
    for row in read_rows(path.as_ref(), true)? {
        if row.len() != 2 {
            return Err(Error::Parse(format!(
                "potentials rows must have 2 fields, found {}",
                row.len()
            )));
        }
        if !row[0].trim().is_empty() {
            phi0.push(parse_f64(&row[0], "phi0")?);
        }
        if !row[1].trim().is_empty() {
            phi1.push(parse_f64(&row[1], "phi1")?);
        }
    }
    Ok(DualPotentials { phi0, phi1 })
}

// ---------------------------------------------------------------------------
// Rasters
// ---------------------------------------------------------------------------

/// Writes a raster as plain-text PGM (`P2`), linearly rescaled so its
/// largest cell maps to [`PGM_MAX_GREY`]. An all-zero raster stays zero.
pub fn write_raster_pgm(path: impl AsRef<Path>, raster: &RasterImage) -> Result<()> {
    let (rows, cols) = (raster.rows(), raster.cols());
    let max = raster.values().iter().copied().fold(0.0_f64, f64::max);
    let scale = if max > 0.0 {
        f64::from(PGM_MAX_GREY) / max
    } else {
        0.0
    };
    let mut text = format!("P2\n{cols} {rows}\n{PGM_MAX_GREY}\n");
    for i in 0..rows {
        let line: Vec<String> = (0..cols)
            .map(|j| {
                let v = raster.values()[i * cols + j].max(0.0) * scale;
                format!("{}", (v.round() as u32).min(PGM_MAX_GREY))
            })
            .collect();
        text.push_str(&line.join(" "));
        text.push('\n');
    }
    fs::write(path.as_ref(), text)?;
    Ok(())
}

/// Writes the raw raster cell values as headerless CSV, one row per grid
/// row.
pub fn write_raster_csv(path: impl AsRef<Path>, raster: &RasterImage) -> Result<()> {
    let mut writer = open_writer(path.as_ref())?;
    let (rows, cols) = (raster.rows(), raster.cols());
    for i in 0..rows {
        let row: Vec<String> = (0..cols)
            .map(|j| fmt_f64(raster.values()[i * cols + j]))
            .collect();
        writer.write_record(&row).map_err(csv_err)?;
    }
    writer.flush().map_err(Error::Io)?;
    Ok(())
}

// ---------------------------------------------------------------------------
// Report tables
// ---------------------------------------------------------------------------

fn write_table<I, R>(path: &Path, header: &[String], rows: I) -> Result<()>
where
    I: IntoIterator<Item = R>,
    R: IntoIterator<Item = String>,
{
    let mut writer = open_writer(path)?;
    writer.write_record(header).map_err(csv_err)?;
    for row in rows {
        writer
            .write_record(row.into_iter().collect::<Vec<_>>())
            .map_err(csv_err)?;
    }
    writer.flush().map_err(Error::Io)?;
    Ok(())
}

fn owned(header: &[&str]) -> Vec<String> {
    header.iter().map(|s| s.to_string()).collect()
}

/// One row per length scale: `kappa,velocity_gap,alpha_norm,hk_value`.
pub fn write_kappa_study_csv(path: impl AsRef<Path>, study: &KappaStudy) -> Result<()> {
    write_table(
        path.as_ref(),
        &owned(&["kappa", "velocity_gap", "alpha_norm", "hk_value"]),
        study.points.iter().map(|p| {
            vec![
                fmt_f64(p.kappa),
                fmt_f64(p.velocity_gap),
                fmt_f64(p.alpha_norm),
                fmt_f64(p.hk_value),
            ]
        }),
    )
}

/// One row per resolution: the deviation from the reference level (empty
/// for the reference row itself) followed by every moment entry.
pub fn write_refinement_csv(path: impl AsRef<Path>, study: &RefinementStudy) -> Result<()> {
    let mut header = owned(&["resolution", "deviation"]);
    header.extend(study.moment_labels.iter().cloned());
    let rows = study.resolutions.iter().enumerate().map(|(k, res)| {
        let mut row = vec![
            res.to_string(),
            study
                .deviations
                .get(k)
                .copied()
                .map(fmt_f64)
                .unwrap_or_default(),
        ];
        row.extend(study.moments[k].iter().copied().map(fmt_f64));
        row
    });
    write_table(path.as_ref(), &header, rows)
}

/// One row per resolution: `n,hk_value,exact_value,singular_mass`.
pub fn write_mass_swap_csv(path: impl AsRef<Path>, study: &MassSwapStudy) -> Result<()> {
    write_table(
        path.as_ref(),
        &owned(&["n", "hk_value", "exact_value", "singular_mass"]),
        study.n_values.iter().enumerate().map(|(k, n)| {
            vec![
                n.to_string(),
                fmt_f64(study.hk_values[k]),
                fmt_f64(study.exact_values[k]),
                fmt_f64(study.singular_masses[k]),
            ]
        }),
    )
}

/// One row per resolution: `n,first_moment`.
pub fn write_near_cut_csv(path: impl AsRef<Path>, study: &NearCutStudy) -> Result<()> {
    write_table(
        path.as_ref(),
        &owned(&["n", "first_moment"]),
        study
            .n_values
            .iter()
            .zip(&study.first_moments)
            .map(|(n, m)| vec![n.to_string(), fmt_f64(*m)]),
    )
}

/// One row per interpolation time: `t,margin,pass`.
pub fn write_convexity_csv(path: impl AsRef<Path>, probe: &ConvexityProbe) -> Result<()> {
    write_table(
        path.as_ref(),
        &owned(&["t", "margin", "pass"]),
        probe.t_values.iter().enumerate().map(|(k, t)| {
            vec![
                fmt_f64(*t),
                fmt_f64(probe.margins[k]),
                probe.passes[k].to_string(),
            ]
        }),
    )
}

/// One row per component: `index,eigenvalue` (1-based, descending).
pub fn write_eigenvalues_csv(path: impl AsRef<Path>, result: &PcaResult) -> Result<()> {
    write_table(
        path.as_ref(),
        &owned(&["index", "eigenvalue"]),
        result
            .eigenvalues
            .iter()
            .enumerate()
            .map(|(k, ev)| vec![(k + 1).to_string(), fmt_f64(*ev)]),
    )
}

/// One row per sample: `sample,mode1,..,modeL` projection coefficients.
pub fn write_projections_csv(path: impl AsRef<Path>, result: &PcaResult) -> Result<()> {
    let mut header = owned(&["sample"]);
    header.extend((1..=result.modes.len()).map(|l| format!("mode{l}")));
    write_table(
        path.as_ref(),
        &header,
        result.projections.iter().enumerate().map(|(i, proj)| {
            let mut row = vec![(i + 1).to_string()];
            row.extend(proj.iter().copied().map(fmt_f64));
            row
        }),
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::analysis::{KappaStudyPoint, Metric};
    use crate::measure::{rasterize, GridSpec};
    use crate::tangent::log_hk;
    use nalgebra::DMatrix;
    use tempfile::TempDir;

    fn euclidean_measure() -> DiscreteMeasure {
        DiscreteMeasure::from_coords(
            Manifold::Euclidean { dim: 2 },
            &[vec![0.0, 0.1], vec![1.5, -0.75], vec![0.125, 3.0]],
            vec![0.5, 1.25, 0.0625],
        )
        .unwrap()
    }

    #[test]
    fn measure_round_trip_is_exact_on_flat_space() {
        let dir = TempDir::new().unwrap();
        let path = dir.path().join("mu.csv");
        let mu = euclidean_measure();
        write_measure(&path, &mu).unwrap();
        let back = read_measure(&path).unwrap();
        assert_eq!(back.manifold(), mu.manifold());
        assert_eq!(back.masses(), mu.masses());
        for (p, q) in back.points().iter().zip(mu.points()) {
            assert_eq!(p.coords(), q.coords());
        }
    }

    #[test]
    fn measure_round_trip_preserves_curved_points() {
        let dir = TempDir::new().unwrap();
        for (name, mu) in [
            (
                "sphere.csv",
                DiscreteMeasure::from_coords(
                    Manifold::Sphere { radius: 2.0 },
                    &[vec![2.0, 0.0, 0.0], vec![0.0, 0.0, -2.0]],
                    vec![1.0, 3.0],
                )
                .unwrap(),
            ),
            (
                "hyper.csv",
                DiscreteMeasure::from_coords(
                    Manifold::Hyperbolic,
                    &[vec![1.13_f64.sqrt(), 0.3, -0.2]],
                    vec![2.0],
                )
                .unwrap(),
            ),
        ] {
            let path = dir.path().join(name);
            write_measure(&path, &mu).unwrap();
            let back = read_measure(&path).unwrap();
            assert_eq!(back.manifold(), mu.manifold());
            assert_eq!(back.masses(), mu.masses());
            for (p, q) in back.points().iter().zip(mu.points()) {
                for (a, b) in p.coords().iter().zip(q.coords()) {
                    assert!((a - b).abs() <= 1e-14 * b.abs().max(1.0));
                }
            }
        }
    }

    #[test]
    fn sidecar_names_the_base_space() {
        let dir = TempDir::new().unwrap();
        let path = dir.path().join("mu.csv");
        let mu = DiscreteMeasure::from_coords(
            Manifold::Sphere { radius: 1.5 },
            &[vec![1.5, 0.0, 0.0]],
            vec![1.0],
        )
        .unwrap();
        write_measure(&path, &mu).unwrap();
        let text = fs::read_to_string(dir.path().join("mu.json")).unwrap();
        let value: serde_json::Value = serde_json::from_str(&text).unwrap();
        assert_eq!(value["manifold"], "sphere");
        assert_eq!(value["dim"], 3);
        assert_eq!(value["radius"], 1.5);
        assert!(value.get("kappa").is_none());
    }

    #[test]
    fn missing_sidecar_is_an_io_error() {
        let dir = TempDir::new().unwrap();
        let path = dir.path().join("mu.csv");
        fs::write(&path, "x1,x2,mass\n0,0,1\n").unwrap();
        match read_measure(&path) {
            Err(Error::Io(_)) => {}
            other => panic!("expected an i/o error, got {other:?}"),
        }
    }

    #[test]
    fn malformed_rows_are_parse_errors() {
        let dir = TempDir::new().unwrap();
        let path = dir.path().join("mu.csv");
        fs::write(
            dir.path().join("mu.json"),
            "{\"manifold\":\"euclidean\",\"dim\":2}",
        )
        .unwrap();
        fs::write(&path, "x1,x2,mass\n0,0\n").unwrap();
        match read_measure(&path) {
            Err(Error::Parse(msg)) => assert!(msg.contains("row 1"), "{msg}"),
            other => panic!("expected a parse error, got {other:?}"),
        }
        fs::write(&path, "x1,x2,mass\n0,zero,1\n").unwrap();
        match read_measure(&path) {
            Err(Error::Parse(msg)) => assert!(msg.contains("zero"), "{msg}"),
            other => panic!("expected a parse error, got {other:?}"),
        }
    }

    #[test]
    fn hk_tangent_round_trip_keeps_every_component() {
        let dir = TempDir::new().unwrap();
        let path = dir.path().join("tangent.csv");
        let manifold = Manifold::Euclidean { dim: 1 };
        let mu0 = DiscreteMeasure::from_coords(manifold, &[vec![0.0], vec![1.0]], vec![1.0, 0.5])
            .unwrap();
        let mu1 = DiscreteMeasure::from_coords(manifold, &[vec![0.25], vec![5.0]], vec![1.5, 0.25])
            .unwrap();
        // Diagonal plan: the far-away second target atom stays unmatched
        // and must come back through the singular file.
        let plan = crate::solver::TransportPlan::from_matrix(
            DMatrix::from_row_slice(2, 2, &[1.2, 0.0, 0.4, 0.0]),
            0.0,
        )
        .unwrap();
        let tangent = log_hk(&mu0, &mu1, &plan, 1.0).unwrap();
        assert_eq!(tangent.singular().len(), 1);

        write_hk_tangent(&path, &tangent).unwrap();
        assert!(dir.path().join("tangent_singular.csv").exists());
        assert!(dir.path().join("tangent_singular.json").exists());
        let back = read_hk_tangent(&path).unwrap();

        assert_eq!(back.kappa(), tangent.kappa());
        assert_eq!(back.dropped_plan_mass(), tangent.dropped_plan_mass());
        assert_eq!(back.alpha(), tangent.alpha());
        assert_eq!(back.singular().masses(), tangent.singular().masses());
        for (v, w) in back.velocities().iter().zip(tangent.velocities()) {
            assert_eq!(v.comps(), w.comps());
            assert_eq!(v.base().coords(), w.base().coords());
        }
    }

    #[test]
    fn shk_tangent_round_trip_restores_the_reparametrization() {
        let dir = TempDir::new().unwrap();
        let path = dir.path().join("spherical.csv");
        let manifold = Manifold::Euclidean { dim: 1 };
        let reference =
            DiscreteMeasure::from_coords(manifold, &[vec![0.0], vec![1.0]], vec![0.5, 0.5])
                .unwrap();
        let velocities = vec![
            manifold
                .tangent(reference.points()[0].clone(), vec![0.3])
                .unwrap(),
            manifold
                .tangent(reference.points()[1].clone(), vec![-0.1])
                .unwrap(),
        ];
        let tangent = ShkTangent::from_components(
            reference,
            velocities,
            vec![0.2, -0.2],
            DiscreteMeasure::empty(manifold),
            2.0,
            0.125,
        )
        .unwrap();
        write_shk_tangent(&path, &tangent).unwrap();
        let back = read_shk_tangent(&path).unwrap();
        assert_eq!(back.kappa(), 2.0);
        assert_eq!(back.dropped_plan_mass(), 0.125);
        assert_eq!(back.alpha(), tangent.alpha());
        assert!((back.s_prime0() - tangent.s_prime0()).abs() < 1e-15);
    }

    #[test]
    fn w2_tangent_round_trip_and_metric_check() {
        let dir = TempDir::new().unwrap();
        let path = dir.path().join("flat.csv");
        let mu = euclidean_measure();
        let velocities = mu
            .points()
            .iter()
            .map(|p| mu.manifold().tangent(p.clone(), vec![0.5, -1.0]).unwrap())
            .collect();
        let tangent = W2Tangent::new(mu, velocities).unwrap();
        write_w2_tangent(&path, &tangent).unwrap();
        let back = read_w2_tangent(&path).unwrap();
        assert_eq!(back.reference().masses(), tangent.reference().masses());
        for (v, w) in back.velocities().iter().zip(tangent.velocities()) {
            assert_eq!(v.comps(), w.comps());
        }
        // Reading it as a soft-marginal tangent must fail loudly.
        match read_hk_tangent(&path) {
            Err(Error::Parse(msg)) => assert!(msg.contains("w2"), "{msg}"),
            other => panic!("expected a parse error, got {other:?}"),
        }
    }

    #[test]
    fn field_round_trip_allows_inadmissible_entries() {
        let dir = TempDir::new().unwrap();
        let path = dir.path().join("mode.csv");
        let mu = euclidean_measure();
        let field = TangentField {
            v: vec![vec![0.1, 0.2], vec![-0.3, 0.4], vec![0.0, 0.0]],
            alpha: vec![-5.0, 7.0, 0.0],
        };
        write_field(&path, &mu, &field).unwrap();
        let (reference, back) = read_field(&path).unwrap();
        assert_eq!(reference.masses(), mu.masses());
        assert_eq!(back.v, field.v);
        assert_eq!(back.alpha, field.alpha);
    }

    #[test]
    fn plan_round_trip_is_exact() {
        let dir = TempDir::new().unwrap();
        let path = dir.path().join("plan.csv");
        let matrix = DMatrix::from_row_slice(2, 3, &[0.0, 1.0e-300, 0.125, 2.5, 3.0, 1.0 / 3.0]);
        write_plan(&path, &matrix).unwrap();
        let back = read_plan(&path).unwrap();
        assert_eq!(back, matrix);
    }

    #[test]
    fn potentials_pad_the_shorter_column() {
        let dir = TempDir::new().unwrap();
        let path = dir.path().join("potentials.csv");
        let potentials = DualPotentials {
            phi0: vec![0.5, -2.0, 3.5],
            phi1: vec![1.25],
        };
        write_potentials(&path, &potentials).unwrap();
        let text = fs::read_to_string(&path).unwrap();
        assert_eq!(text, "phi0,phi1\n0.5,1.25\n-2,\n3.5,\n");
        let back = read_potentials(&path).unwrap();
        assert_eq!(back.phi0, potentials.phi0);
        assert_eq!(back.phi1, potentials.phi1);
    }

    #[test]
    fn pgm_rescales_to_the_16_bit_range() {
        let dir = TempDir::new().unwrap();
        let grid = GridSpec::new(vec![(0.0, 2.0), (0.0, 2.0)], vec![2, 2]).unwrap();
        // One atom per cell center with masses 1 and 3: after bilinear
        // splatting each lands entirely in its own cell.
        let mu = DiscreteMeasure::from_coords(
            Manifold::Euclidean { dim: 2 },
            &[vec![0.5, 0.5], vec![1.5, 1.5]],
            vec![1.0, 3.0],
        )
        .unwrap();
        let raster = rasterize(&mu, &grid, 0.0).unwrap();
        let pgm = dir.path().join("image.pgm");
        write_raster_pgm(&pgm, &raster).unwrap();
        let text = fs::read_to_string(&pgm).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next(), Some("P2"));
        assert_eq!(lines.next(), Some("2 2"));
        assert_eq!(lines.next(), Some("65535"));
        let pixels: Vec<u32> = lines
            .flat_map(|l| l.split_whitespace())
            .map(|t| t.parse().unwrap())
            .collect();
        assert_eq!(pixels.len(), 4);
        assert_eq!(pixels.iter().copied().max(), Some(PGM_MAX_GREY));
        let max_value = raster.values().iter().copied().fold(0.0, f64::max);
        for (pixel, value) in pixels.iter().zip(raster.values()) {
            let expected = (value / max_value * f64::from(PGM_MAX_GREY)).round() as u32;
            assert_eq!(*pixel, expected);
        }

        let csv_path = dir.path().join("image.csv");
        write_raster_csv(&csv_path, &raster).unwrap();
        let rows = read_rows(&csv_path, false).unwrap();
        assert_eq!(rows.len(), 2);
        let cells: Vec<f64> = rows
            .iter()
            .flat_map(|r| r.iter().map(|f| f.parse::<f64>().unwrap()))
            .collect();
        assert_eq!(cells, raster.values());
    }

    #[test]
    fn report_tables_have_one_row_per_entry() {
        let dir = TempDir::new().unwrap();
        let study = KappaStudy {
            points: vec![
                KappaStudyPoint {
                    kappa: 1.0,
                    velocity_gap: 0.5,
                    alpha_norm: 0.25,
                    hk_value: 0.75,
                },
                KappaStudyPoint {
                    kappa: 2.0,
                    velocity_gap: 0.25,
                    alpha_norm: 0.125,
                    hk_value: 0.875,
                },
            ],
            w2_value: 1.0,
            gap_decreasing: true,
            value_increasing: true,
            value_below_w2: true,
            comparison_slack: 1e-4,
        };
        let csv_path = dir.path().join("kappa.csv");
        write_kappa_study_csv(&csv_path, &study).unwrap();
        let rows = read_rows(&csv_path, true).unwrap();
        assert_eq!(rows.len(), 2);
        assert_eq!(&rows[1][0], "2");

        let refinement = RefinementStudy {
            resolutions: vec![4, 8, 16],
            moment_labels: vec!["1*v1".into(), "1*alpha".into()],
            moments: vec![vec![0.1, 0.0], vec![0.11, 0.0], vec![0.111, 0.0]],
            deviations: vec![0.011, 0.001],
            monotone_after_first: true,
            final_below_tolerance: true,
            tolerance: 5e-3,
        };
        let refine_path = dir.path().join("refine.csv");
        write_refinement_csv(&refine_path, &refinement).unwrap();
        let rows = read_rows(&refine_path, true).unwrap();
        assert_eq!(rows.len(), 3);
        assert_eq!(&rows[2][1], "", "reference row has no deviation");
        assert_eq!(&rows[0][1], "0.011");

        let json_path = dir.path().join("kappa.json");
        write_json(&json_path, &study).unwrap();
        let text = fs::read_to_string(&json_path).unwrap();
        let value: serde_json::Value = serde_json::from_str(&text).unwrap();
        assert_eq!(value["points"].as_array().unwrap().len(), 2);
        assert_eq!(value["w2_value"], 1.0);
    }

    #[test]
    fn pca_tables_cover_eigenvalues_and_projections() {
        let dir = TempDir::new().unwrap();
        let result = PcaResult {
            reference: euclidean_measure(),
            metric: Metric::W2,
            eigenvalues: vec![2.0, 0.5, 0.0],
            modes: vec![
                TangentField {
                    v: vec![vec![1.0, 0.0]; 3],
                    alpha: vec![0.0; 3],
                },
                TangentField {
                    v: vec![vec![0.0, 1.0]; 3],
                    alpha: vec![0.0; 3],
                },
            ],
            mean: TangentField {
                v: vec![vec![0.0, 0.0]; 3],
                alpha: vec![0.0; 3],
            },
            projections: vec![vec![1.0, -1.0], vec![-1.0, 1.0], vec![0.5, 0.25]],
        };
        let ev_path = dir.path().join("eigenvalues.csv");
        write_eigenvalues_csv(&ev_path, &result).unwrap();
        let rows = read_rows(&ev_path, true).unwrap();
        assert_eq!(rows.len(), 3);
        assert_eq!(&rows[0][1], "2");

        let proj_path = dir.path().join("projections.csv");
        write_projections_csv(&proj_path, &result).unwrap();
        let rows = read_rows(&proj_path, true).unwrap();
        assert_eq!(rows.len(), 3);
        assert_eq!(rows[0].len(), 3);
        assert_eq!(&rows[2][2], "0.25");
    }
}
