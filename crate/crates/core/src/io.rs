//! File formats: CSV curves and scans, JSON configuration and results.
//!
//! Curve files carry storage times in microseconds (`t_us`); everything is
//! converted to seconds on ingestion. Numbers are written in the shortest
//! decimal form that parses back to the same `f64`.

use std::fs::File;
use std::io::{BufWriter, Read, Write};
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::analytic::DecayCurve;
use crate::ensemble::{EfficiencyEstimator, MotionModel, Weighting, DEFAULT_CELL_LENGTH};
use crate::error::{config, Error, Result};
use crate::model::{make_spinwave, Lifetime, OamMode, Species, SpinWave, ThermalGas};
use crate::scenarios::{Envelope, ScenarioConfig, ScenarioKind, TimeGrid};

const MICRO: f64 = 1e6;
const MILLI: f64 = 1e3;

/// Shortest decimal representation that round-trips.
pub fn format_float(v: f64) -> String {
    format!("{v}")
}

fn parse_error(e: csv::Error) -> Error {
    let line = e.position().map_or(0, csv::Position::line);
    Error::Parse { line, message: e.to_string() }
}

fn parse_cell<T: std::str::FromStr>(record: &csv::StringRecord, i: usize, column: &str) -> Result<T> {
    let line = record.position().map_or(0, csv::Position::line);
    let raw = record.get(i).unwrap_or("");
    raw.parse()
        .map_err(|_| Error::Parse { line, message: format!("bad {column} value `{raw}`") })
}

/// Reads a two- or three-column table whose header must match `names`
/// (the third column optional).
fn read_table<R: Read>(reader: R, names: [&str; 3]) -> Result<Vec<csv::StringRecord>> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let header = rdr.headers().map_err(parse_error)?.clone();
    let cols: Vec<&str> = header.iter().collect();
    if cols != names[..2] && cols != names[..] {
        return Err(Error::Parse {
            line: 1,
            message: format!("header must be `{}` with optional `{}`", names[..2].join(","), names[2]),
        });
    }
    let mut rows = Vec::new();
    for rec in rdr.records() {
        rows.push(rec.map_err(parse_error)?);
    }
    Ok(rows)
}

fn write_table<W: Write>(writer: W, header: &[&str], rows: impl Iterator<Item = Vec<String>>) -> Result<()> {
    let mut wtr = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(writer);
    wtr.write_record(header).map_err(parse_error)?;
    for row in rows {
        wtr.write_record(&row).map_err(parse_error)?;
    }
    wtr.flush()?;
    Ok(())
}

/// A decay curve as stored on disk: `t_us,efficiency[,stderr]`.
#[derive(Debug, Clone, PartialEq)]
pub struct CurveFile {
    pub t_us: Vec<f64>,
    pub efficiency: Vec<f64>,
    pub stderr: Option<Vec<f64>>,
}

impl CurveFile {
    pub fn from_curve(curve: &DecayCurve<f64>) -> Self {
        CurveFile {
            t_us: curve.times().iter().map(|t| t * MICRO).collect(),
            efficiency: curve.efficiencies().to_vec(),
            stderr: curve.stderrs().map(<[f64]>::to_vec),
        }
    }

    pub fn to_curve(&self) -> Result<DecayCurve<f64>> {
        let times = self.t_us.iter().map(|t| t / MICRO).collect();
        DecayCurve::new(times, self.efficiency.clone(), self.stderr.clone())
    }

    pub fn read<R: Read>(reader: R) -> Result<Self> {
        let rows = read_table(reader, ["t_us", "efficiency", "stderr"])?;
        let with_se = rows.first().is_some_and(|r| r.len() == 3);
        let mut file = CurveFile { t_us: Vec::new(), efficiency: Vec::new(), stderr: with_se.then(Vec::new) };
        for rec in &rows {
            file.t_us.push(parse_cell(rec, 0, "t_us")?);
            file.efficiency.push(parse_cell(rec, 1, "efficiency")?);
            if let Some(se) = &mut file.stderr {
                se.push(parse_cell(rec, 2, "stderr")?);
            }
        }
        file.to_curve().map_err(|e| Error::Parse { line: 0, message: e.to_string() })?;
        Ok(file)
    }

    pub fn write<W: Write>(&self, writer: W) -> Result<()> {
        let header: &[&str] =
            if self.stderr.is_some() { &["t_us", "efficiency", "stderr"] } else { &["t_us", "efficiency"] };
        let rows = (0..self.t_us.len()).map(|i| {
            let mut row = vec![format_float(self.t_us[i]), format_float(self.efficiency[i])];
            if let Some(se) = &self.stderr {
                row.push(format_float(se[i]));
            }
            row
        });
        write_table(writer, header, rows)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::read(File::open(path)?)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        self.write(&mut w)?;
        w.flush()?;
        Ok(())
    }
}

/// Efficiency against control charge: `m,efficiency[,stderr]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ScanFile {
    pub m: Vec<i32>,
    pub efficiency: Vec<f64>,
    pub stderr: Option<Vec<f64>>,
}

impl ScanFile {
    pub fn read<R: Read>(reader: R) -> Result<Self> {
        let rows = read_table(reader, ["m", "efficiency", "stderr"])?;
        let with_se = rows.first().is_some_and(|r| r.len() == 3);
        let mut file = ScanFile { m: Vec::new(), efficiency: Vec::new(), stderr: with_se.then(Vec::new) };
        for rec in &rows {
            file.m.push(parse_cell(rec, 0, "m")?);
            let e: f64 = parse_cell(rec, 1, "efficiency")?;
            if !e.is_finite() {
                let line = rec.position().map_or(0, csv::Position::line);
                return Err(Error::Parse { line, message: "efficiency must be finite".into() });
            }
            file.efficiency.push(e);
            if let Some(se) = &mut file.stderr {
                se.push(parse_cell(rec, 2, "stderr")?);
            }
        }
        Ok(file)
    }

    pub fn write<W: Write>(&self, writer: W) -> Result<()> {
        let header: &[&str] =
            if self.stderr.is_some() { &["m", "efficiency", "stderr"] } else { &["m", "efficiency"] };
        let rows = (0..self.m.len()).map(|i| {
            let mut row = vec![self.m[i].to_string(), format_float(self.efficiency[i])];
            if let Some(se) = &self.stderr {
                row.push(format_float(se[i]));
            }
            row
        });
        write_table(writer, header, rows)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::read(File::open(path)?)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        self.write(&mut w)?;
        w.flush()?;
        Ok(())
    }
}

/// Reads a JSON document; unknown keys are reported by name.
pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path)?;
    serde_json::from_str(&text).map_err(|e| config(format!("{}: {e}", path.display())))
}

/// Writes pretty-printed JSON followed by a newline.
pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    serde_json::to_writer_pretty(&mut w, value)?;
    w.write_all(b"\n")?;
    w.flush()?;
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum WeightingChoice {
    #[default]
    GaussianBeam,
    /// Donut profile matching the spin-wave charge.
    LgDonut,
}

/// Input of the `simulate` command.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulateConfig {
    #[serde(default = "default_species")]
    pub species: Species,
    #[serde(default = "default_temperature_c")]
    pub temperature_c: f64,
    pub waist_mm: f64,
    pub probe_charge: i32,
    pub control_charge: i32,
    #[serde(default)]
    pub longitudinal_mismatch_per_m: f64,
    pub time_grid_us: Vec<f64>,
    pub n_atoms: usize,
    #[serde(default)]
    pub motion: MotionModel,
    #[serde(default)]
    pub estimator: EfficiencyEstimator,
    #[serde(default)]
    pub weighting: WeightingChoice,
    #[serde(default = "default_cell_length_mm")]
    pub cell_length_mm: f64,
    pub seed: u64,
}

fn default_species() -> Species {
    Species::Rb85
}

fn default_temperature_c() -> f64 {
    55.0
}

fn default_cell_length_mm() -> f64 {
    DEFAULT_CELL_LENGTH * MILLI
}

impl SimulateConfig {
    pub fn gas(&self) -> Result<ThermalGas<f64>> {
        ThermalGas::from_celsius(self.species, self.temperature_c)
    }

    pub fn spin_wave(&self) -> Result<SpinWave<f64>> {
        let w = self.waist_mm / MILLI;
        make_spinwave(
            &OamMode::new(self.probe_charge, w)?,
            &OamMode::new(self.control_charge, w)?,
            self.longitudinal_mismatch_per_m,
        )
    }

    pub fn times(&self) -> Vec<f64> {
        self.time_grid_us.iter().map(|t| t / MICRO).collect()
    }

    pub fn weighting(&self) -> Weighting {
        match self.weighting {
            WeightingChoice::GaussianBeam => Weighting::GaussianBeam,
            WeightingChoice::LgDonut => {
                Weighting::LgDonut { charge: (self.probe_charge - self.control_charge).unsigned_abs() }
            }
        }
    }
}

/// Longitudinal and background envelope in file units.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EnvelopeFile {
    pub c1: f64,
    pub c2: f64,
    pub tau0_us: Lifetime<f64>,
    pub tau1_us: Lifetime<f64>,
}

/// Scenario configuration file. Every key except `scenario` and `seed` is
/// optional and falls back to the scenario's default.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioFile {
    pub scenario: Option<ScenarioKind>,
    pub seed: Option<u64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub species: Option<Species>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub temperature_c: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub waists_mm: Option<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub probe_charges: Option<Vec<i32>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub control_charges: Option<Vec<i32>>,
    /// Explicit grid; excludes the lifetime-scaled keys below.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub time_grid_us: Option<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub time_grid_points: Option<usize>,
    /// Grid span in units of the closed-form averaged lifetime of each configuration.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub time_grid_lifetimes: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub storage_time_us: Option<f64>,
    /// Control charges scanned in fig3, as offsets `[low, high]` from the probe charge.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub control_offsets: Option<[i32; 2]>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub n_atoms: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub motion: Option<MotionModel>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub estimator: Option<EfficiencyEstimator>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub cell_length_mm: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub longitudinal_mismatch_per_m: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub envelope: Option<EnvelopeFile>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub output_dir: Option<String>,
}

impl ScenarioFile {
    /// Resolves the file against the defaults of its scenario.
    pub fn into_config(self) -> Result<ScenarioConfig> {
        let kind = self.scenario.ok_or_else(|| config("missing key `scenario`"))?;
        let seed = self.seed.ok_or_else(|| config("missing key `seed` (seeds are mandatory)"))?;
        let mut cfg = ScenarioConfig::defaults(kind, seed);
        if self.species.is_some() || self.temperature_c.is_some() {
            let species = self.species.unwrap_or(Species::Rb85);
            let celsius = self.temperature_c.unwrap_or(55.0);
            cfg.gas = ThermalGas::from_celsius(species, celsius)?;
        }
        if let Some(w) = self.waists_mm {
            cfg.waists = w.iter().map(|w| w / MILLI).collect();
        }
        if let Some(p) = self.probe_charges {
            cfg.probe_charges = p;
        }
        if let Some(c) = self.control_charges {
            cfg.control_charges = c;
        }
        match (self.time_grid_us, self.time_grid_points, self.time_grid_lifetimes) {
            (Some(_), Some(_), _) | (Some(_), _, Some(_)) => {
                return Err(config("`time_grid_us` excludes `time_grid_points` and `time_grid_lifetimes`"));
            }
            (Some(t), None, None) => cfg.time_grid = TimeGrid::Explicit(t.iter().map(|t| t / MICRO).collect()),
            (None, None, None) => {}
            (None, points, lifetimes) => {
                let (p0, l0) = match cfg.time_grid {
                    TimeGrid::LifetimeScaled { points, lifetimes } => (points, lifetimes),
                    TimeGrid::Explicit(ref t) => (t.len(), 3.0),
                };
                cfg.time_grid = TimeGrid::LifetimeScaled {
                    points: points.unwrap_or(p0),
                    lifetimes: lifetimes.unwrap_or(l0),
                };
            }
        }
        if let Some(t) = self.storage_time_us {
            cfg.storage_time = t / MICRO;
        }
        if let Some(o) = self.control_offsets {
            cfg.control_offsets = o;
        }
        if let Some(n) = self.n_atoms {
            cfg.n_atoms = n;
        }
        if let Some(m) = self.motion {
            cfg.motion = m;
        }
        if let Some(e) = self.estimator {
            cfg.estimator = e;
        }
        if let Some(c) = self.cell_length_mm {
            cfg.cell_length = c / MILLI;
        }
        if let Some(dk) = self.longitudinal_mismatch_per_m {
            cfg.longitudinal_mismatch = dk;
        }
        if let Some(e) = self.envelope {
            cfg.envelope = Some(Envelope {
                c1: e.c1,
                c2: e.c2,
                tau0: e.tau0_us.map(|t| t / MICRO),
                tau1: e.tau1_us.map(|t| t / MICRO),
            });
        }
        cfg.output_dir = self.output_dir.map(Into::into);
        cfg.validate()?;
        Ok(cfg)
    }
}
