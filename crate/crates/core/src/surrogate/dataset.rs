use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Deserializer, Serialize};

use super::{simulate_impact, ForceProfile, SimulatedImpact, SurrogateConfig};
use crate::error::{Error, Result};
use crate::geometry::{setup_location, HelmetRegion, ImpactLocation, ImpactSetup};
use crate::kinematics::{parse_row, KinematicSeries, SERIES_LEN};

pub const MANIFEST_FILE: &str = "manifest.csv";
const IMPACT_DIR: &str = "impacts";
const FORCE_CSV_HEADER: &str = "t_ms,f_helmet_kN,f_head_kN";

/// Values swept along each setup dimension; the grid is their Cartesian product.
///
/// In JSON each axis is either an explicit list or `{"min", "max", "count"}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    #[serde(deserialize_with = "axis")]
    pub alpha_deg: Vec<f64>,
    #[serde(deserialize_with = "axis")]
    pub beta_deg: Vec<f64>,
    #[serde(deserialize_with = "axis")]
    pub y_mm: Vec<f64>,
    #[serde(deserialize_with = "axis")]
    pub z_mm: Vec<f64>,
    #[serde(deserialize_with = "axis")]
    pub speed_mps: Vec<f64>,
}

#[derive(Deserialize)]
#[serde(untagged)]
enum AxisSpec {
    Values(Vec<f64>),
    Range { min: f64, max: f64, count: usize },
}

fn axis<'de, D: Deserializer<'de>>(d: D) -> std::result::Result<Vec<f64>, D::Error> {
    Ok(match AxisSpec::deserialize(d)? {
        AxisSpec::Values(v) => v,
        AxisSpec::Range { min, max, count } => linspace(min, max, count),
    })
}

/// `count` evenly spaced values from `min` to `max` inclusive.
pub fn linspace(min: f64, max: f64, count: usize) -> Vec<f64> {
    match count {
        0 => Vec::new(),
        1 => vec![min],
        n => (0..n).map(|i| min + (max - min) * i as f64 / (n - 1) as f64).collect(),
    }
}

impl GridSpec {
    /// The full 8 × 8 × 5 × 5 × 5 sweep over the dataset ranges.
    pub fn full() -> Self {
        Self {
            alpha_deg: linspace(10.0, 180.0, 8),
            beta_deg: linspace(-45.0, 70.0, 8),
            y_mm: linspace(-120.0, 120.0, 5),
            z_mm: linspace(-120.0, 120.0, 5),
            speed_mps: linspace(3.0, 10.0, 5),
        }
    }

    pub fn len(&self) -> usize {
        self.alpha_deg.len() * self.beta_deg.len() * self.y_mm.len() * self.z_mm.len() * self.speed_mps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Grid points in order α, β, Y, Z, speed (speed varies fastest).
    pub fn setups(&self) -> Vec<ImpactSetup> {
        let mut out = Vec::with_capacity(self.len());
        for &a in &self.alpha_deg {
            for &b in &self.beta_deg {
                for &y in &self.y_mm {
                    for &z in &self.z_mm {
                        for &v in &self.speed_mps {
                            out.push(ImpactSetup::new(a, b, y, z, v));
                        }
                    }
                }
            }
        }
        out
    }

    pub fn validate(&self) -> Result<()> {
        let all = [&self.alpha_deg, &self.beta_deg, &self.y_mm, &self.z_mm, &self.speed_mps];
        if all.iter().flat_map(|v| v.iter()).any(|x| !x.is_finite()) {
            return Err(Error::InvalidArgument("grid values must be finite".into()));
        }
        if self.speed_mps.iter().any(|v| *v < 0.0) {
            return Err(Error::InvalidArgument("grid speeds must be nonnegative".into()));
        }
        Ok(())
    }
}

/// One manifest line; paths are relative to the manifest directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestRow {
    pub id: String,
    pub source_id: String,
    pub mirrored: bool,
    pub alpha_deg: f64,
    pub beta_deg: f64,
    pub y_mm: f64,
    pub z_mm: f64,
    pub speed_mps: f64,
    pub theta_deg: f64,
    pub eta_deg: f64,
    pub region: HelmetRegion,
    pub peak_force_helmet_kn: f64,
    pub peak_force_head_kn: f64,
    pub kinematics_path: String,
    pub force_path: String,
    pub meta_path: String,
}

impl ManifestRow {
    pub fn setup(&self) -> ImpactSetup {
        ImpactSetup::new(self.alpha_deg, self.beta_deg, self.y_mm, self.z_mm, self.speed_mps)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Manifest {
    pub dir: PathBuf,
    pub rows: Vec<ManifestRow>,
}

impl Manifest {
    pub fn path(&self) -> PathBuf {
        self.dir.join(MANIFEST_FILE)
    }

    pub fn write(&self) -> Result<()> {
        let path = self.path();
        let mut w = csv::Writer::from_path(&path).map_err(|e| Error::io(&path, e.into()))?;
        if self.rows.is_empty() {
            w.write_record(manifest_header()).map_err(|e| Error::io(&path, e.into()))?;
        }
        for row in &self.rows {
            w.serialize(row).map_err(|e| Error::io(&path, e.into()))?;
        }
        w.flush().map_err(|e| Error::io(&path, e))
    }

    pub fn read(path: &Path) -> Result<Self> {
        let dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
        let mut rdr = csv::Reader::from_path(path).map_err(|e| match e.into_kind() {
            csv::ErrorKind::Io(io) => Error::io(path, io),
            other => Error::parse(path, None, format!("{other:?}")),
        })?;
        let header = rdr.headers().map_err(|e| Error::parse(path, Some(0), e.to_string()))?.clone();
        if !header.is_empty() && header.iter().ne(manifest_header()) {
            return Err(Error::parse(path, Some(0), format!("expected header {}", manifest_header().join(","))));
        }
        let mut rows = Vec::new();
        for (i, rec) in rdr.deserialize::<ManifestRow>().enumerate() {
            let row = rec.map_err(|e| Error::parse(path, Some(i + 1), e.to_string()))?;
            let numbers = [
                row.alpha_deg,
                row.beta_deg,
                row.y_mm,
                row.z_mm,
                row.speed_mps,
                row.theta_deg,
                row.eta_deg,
                row.peak_force_helmet_kn,
                row.peak_force_head_kn,
            ];
            if numbers.iter().any(|x| !x.is_finite()) {
                return Err(Error::parse(path, Some(i + 1), "non-finite value"));
            }
            rows.push(row);
        }
        Ok(Self { dir, rows })
    }
}

fn manifest_header() -> [&'static str; 16] {
    [
        "id",
        "source_id",
        "mirrored",
        "alpha_deg",
        "beta_deg",
        "y_mm",
        "z_mm",
        "speed_mps",
        "theta_deg",
        "eta_deg",
        "region",
        "peak_force_helmet_kn",
        "peak_force_head_kn",
        "kinematics_path",
        "force_path",
        "meta_path",
    ]
}

#[derive(Debug, Serialize, Deserialize)]
struct ImpactMeta {
    id: String,
    source_id: String,
    mirrored: bool,
    setup: ImpactSetup,
    location: LocationMeta,
}

#[derive(Debug, Serialize, Deserialize)]
struct LocationMeta {
    theta_deg: f64,
    eta_deg: f64,
    region: HelmetRegion,
}

fn write_force_csv(path: &Path, helmet: &ForceProfile, head: &ForceProfile) -> Result<()> {
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = std::io::BufWriter::new(file);
    let mut body = || -> std::io::Result<()> {
        writeln!(w, "{FORCE_CSV_HEADER}")?;
        for (k, (a, b)) in helmet.values().iter().zip(head.values()).enumerate() {
            writeln!(w, "{k},{a},{b}")?;
        }
        w.flush()
    };
    body().map_err(|e| Error::io(path, e))
}

fn read_force_csv(path: &Path) -> Result<(ForceProfile, ForceProfile)> {
    let file = fs::File::open(path).map_err(|e| Error::parse(path, None, format!("cannot open: {e}")))?;
    let mut rdr = csv::Reader::from_reader(file);
    let header = rdr.headers().map_err(|e| Error::parse(path, Some(0), e.to_string()))?.clone();
    if header.iter().map(str::trim).ne(FORCE_CSV_HEADER.split(',')) {
        return Err(Error::parse(path, Some(0), format!("expected header {FORCE_CSV_HEADER}")));
    }
    let mut helmet = Vec::with_capacity(SERIES_LEN);
    let mut head = Vec::with_capacity(SERIES_LEN);
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(|e| Error::parse(path, Some(i + 1), e.to_string()))?;
        let v = parse_row(&rec, 3, path, i + 1)?;
        if v[0] != i as f64 {
            return Err(Error::parse(path, Some(i + 1), format!("t_ms = {} but expected {i}", v[0])));
        }
        helmet.push(v[1]);
        head.push(v[2]);
    }
    if helmet.len() != SERIES_LEN {
        return Err(Error::parse(path, None, format!("expected {SERIES_LEN} data rows, found {}", helmet.len())));
    }
    let wrap = |e: Error| Error::parse(path, None, e.to_string());
    Ok((ForceProfile::new(helmet).map_err(wrap)?, ForceProfile::new(head).map_err(wrap)?))
}

fn write_impact(dir: &Path, imp: &SimulatedImpact) -> Result<ManifestRow> {
    let kin = format!("{IMPACT_DIR}/{}_kinematics.csv", imp.id);
    let force = format!("{IMPACT_DIR}/{}_force.csv", imp.id);
    let meta = format!("{IMPACT_DIR}/{}_meta.json", imp.id);
    imp.series.write_csv(&dir.join(&kin))?;
    write_force_csv(&dir.join(&force), &imp.force_helmet, &imp.force_head)?;
    let meta_doc = ImpactMeta {
        id: imp.id.clone(),
        source_id: imp.source_id.clone(),
        mirrored: imp.mirrored,
        setup: imp.setup,
        location: LocationMeta {
            theta_deg: imp.location.theta_deg,
            eta_deg: imp.location.eta_deg,
            region: imp.region,
        },
    };
    let meta_path = dir.join(&meta);
    fs::write(&meta_path, serde_json::to_string_pretty(&meta_doc)?).map_err(|e| Error::io(&meta_path, e))?;
    Ok(ManifestRow {
        id: imp.id.clone(),
        source_id: imp.source_id.clone(),
        mirrored: imp.mirrored,
        alpha_deg: imp.setup.alpha_deg,
        beta_deg: imp.setup.beta_deg,
        y_mm: imp.setup.y_mm,
        z_mm: imp.setup.z_mm,
        speed_mps: imp.setup.speed_mps,
        theta_deg: imp.location.theta_deg,
        eta_deg: imp.location.eta_deg,
        region: imp.region,
        peak_force_helmet_kn: imp.force_helmet.peak(),
        peak_force_head_kn: imp.force_head.peak(),
        kinematics_path: kin,
        force_path: force,
        meta_path: meta,
    })
}

/// Simulates every grid point plus its mirror image and writes the dataset.
///
/// Originals come first in grid order, followed by their mirrored copies in
/// the same order. Grid points whose line misses the helmet are skipped.
/// Output does not depend on `workers`.
/// Simulates every grid point and appends the mirror images; ids follow
/// grid order (`imp00000`, ...) with an `m` suffix on mirrors. Grid points
/// whose impact line misses the helmet are skipped.
pub fn simulate_grid(grid: &GridSpec, config: &SurrogateConfig, workers: usize) -> Result<Vec<SimulatedImpact>> {
    grid.validate()?;
    config.validate()?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers.max(1))
        .build()
        .map_err(|e| Error::InvalidArgument(format!("cannot start worker pool: {e}")))?;
    let setups = grid.setups();
    let results: Vec<Result<Option<(SimulatedImpact, SimulatedImpact)>>> = pool.install(|| {
        setups
            .par_iter()
            .enumerate()
            .map(|(i, setup)| {
                let id = format!("imp{i:05}");
                let mut imp = match simulate_impact(setup, config) {
                    Ok(imp) => imp,
                    Err(Error::NoIntersection) => {
                        log::warn!("skipping grid point {i} ({setup:?}): impact line misses the helmet");
                        return Ok(None);
                    }
                    Err(e) => return Err(e),
                };
                imp.id = id.clone();
                imp.source_id = id.clone();
                let mirror = imp.mirrored_copy(format!("{id}m"))?;
                Ok(Some((imp, mirror)))
            })
            .collect()
    });

    let mut originals = Vec::new();
    let mut mirrors = Vec::new();
    for r in results {
        if let Some((a, b)) = r? {
            originals.push(a);
            mirrors.push(b);
        }
    }
    log::info!("simulated {} impacts from {} grid points", 2 * originals.len(), setups.len());
    originals.extend(mirrors);
    Ok(originals)
}

/// [`simulate_grid`] followed by writing every impact and the manifest
/// under `out_dir`.
pub fn generate_dataset(grid: &GridSpec, config: &SurrogateConfig, out_dir: &Path, workers: usize) -> Result<Manifest> {
    let impacts = simulate_grid(grid, config, workers)?;
    let impact_dir = out_dir.join(IMPACT_DIR);
    fs::create_dir_all(&impact_dir).map_err(|e| Error::io(&impact_dir, e))?;
    let rows = impacts.iter().map(|imp| write_impact(out_dir, imp)).collect::<Result<Vec<_>>>()?;
    let manifest = Manifest {
        dir: out_dir.to_path_buf(),
        rows,
    };
    manifest.write()?;
    Ok(manifest)
}

/// Reads every impact listed in a manifest.
pub fn load_dataset(manifest_path: &Path) -> Result<Vec<SimulatedImpact>> {
    let manifest = Manifest::read(manifest_path)?;
    manifest
        .rows
        .iter()
        .enumerate()
        .map(|(i, row)| load_row(&manifest.dir, row).map_err(|e| locate(e, manifest_path, i + 1)))
        .collect()
}

fn locate(e: Error, manifest: &Path, row: usize) -> Error {
    match e {
        Error::Parse { .. } => e,
        other => Error::parse(manifest, Some(row), other.to_string()),
    }
}

fn load_row(dir: &Path, row: &ManifestRow) -> Result<SimulatedImpact> {
    let kin_path = dir.join(&row.kinematics_path);
    if !kin_path.is_file() {
        return Err(Error::parse(&kin_path, None, "kinematics file not found"));
    }
    let series = KinematicSeries::read_csv(&kin_path)?;
    let (force_helmet, force_head) = read_force_csv(&dir.join(&row.force_path))?;

    let meta_path = dir.join(&row.meta_path);
    let text = fs::read_to_string(&meta_path).map_err(|e| Error::parse(&meta_path, None, format!("cannot open: {e}")))?;
    let meta: ImpactMeta = serde_json::from_str(&text).map_err(|e| Error::parse(&meta_path, None, e.to_string()))?;
    let setup = row.setup();
    if meta.setup != setup || meta.id != row.id {
        return Err(Error::parse(&meta_path, None, "metadata disagrees with the manifest"));
    }
    let location = ImpactLocation {
        theta_deg: meta.location.theta_deg,
        eta_deg: meta.location.eta_deg,
    };
    let expected = setup_location(&setup)?;
    if (expected.point() - location.point()).norm() > 1e-6 || meta.location.region != row.region {
        return Err(Error::parse(&meta_path, None, "stored location disagrees with the setup"));
    }
    Ok(SimulatedImpact {
        id: row.id.clone(),
        source_id: row.source_id.clone(),
        mirrored: row.mirrored,
        setup,
        series,
        force_helmet,
        force_head,
        region: row.region,
        location,
    })
}
