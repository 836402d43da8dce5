//! Versioned CSV artifacts and atomic file output.
//!
//! Every CSV starts with a `# schema: kneeassist.<kind> v<N>` line followed
//! by a header row. Readers check both before touching the data. Angles are
//! written in degrees; floats use the shortest representation that parses
//! back to the same value, so identical inputs give identical files.

use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::grf_net::EvalReport;
use crate::sim::benchmark::BenchmarkReport;
use crate::sim::dataset::{DatasetRow, SyntheticDataset};
use crate::sim::imu::{CHANNELS, CHANNEL_NAMES};
use crate::sim::trial::TrialResult;
use crate::sim::Terrain;
use crate::stiffness::{BilateralKnees, GaitCycleSample};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Schema {
    pub kind: &'static str,
    pub version: u32,
    pub columns: &'static [&'static str],
}

impl Schema {
    pub fn header_line(&self) -> String {
        format!("# schema: kneeassist.{} v{}", self.kind, self.version)
    }
}

pub const IMU: Schema = Schema {
    kind: "imu",
    version: 1,
    columns: &[
        "time_s", "shank_ax", "shank_az", "shank_gy", "heel_ax", "heel_az", "heel_gy", "toe_ax", "toe_az", "toe_gy",
    ],
};

pub const LABELS: Schema =
    Schema { kind: "grf_labels", version: 1, columns: &["time_s", "fx_norm", "fz_norm", "terrain", "stance"] };

pub const GAIT: Schema = Schema {
    kind: "gait",
    version: 1,
    columns: &["time_s", "s", "theta_kr_deg", "theta_kl_deg", "tau_h_norm", "terrain"],
};

pub const TIMESERIES: Schema = Schema {
    kind: "timeseries",
    version: 1,
    columns: &[
        "time_s",
        "s",
        "stride",
        "theta_t_deg",
        "theta_k_deg",
        "omega_t_deg_s",
        "omega_k_deg_s",
        "theta_t_ref_deg",
        "theta_k_ref_deg",
        "omega_t_ref_deg_s",
        "omega_k_ref_deg_s",
        "tau_h",
        "tau_hip",
        "tau_e_cmd",
        "tau_e",
        "fx_norm",
        "fz_norm",
        "fx_hat_norm",
        "fz_hat_norm",
        "tau_h_hat",
        "delta_tau",
        "contact",
    ],
};

pub const METRICS: Schema = Schema {
    kind: "metrics",
    version: 1,
    columns: &[
        "group",
        "terrain",
        "seed",
        "tracking_rmse",
        "human_rms",
        "exo_rms",
        "peak_exo",
        "strides",
        "stride_mean",
        "stride_sd",
        "delta_tau_rms",
        "peak_fz_norm",
        "degraded_ticks",
    ],
};

pub const BENCHMARK: Schema = Schema {
    kind: "benchmark",
    version: 1,
    columns: &["group", "terrain", "seed", "tracking_rmse", "human_rms", "exo_rms", "peak_exo", "strides", "status"],
};

pub const CURVES: Schema =
    Schema { kind: "phase_curves", version: 1, columns: &["group", "terrain", "bin", "phase", "tau_e_mean"] };

pub const GRF_EVAL: Schema = Schema {
    kind: "grf_eval",
    version: 1,
    columns: &["terrain", "fx_rmse", "fz_rmse", "stance_windows", "accuracy", "windows"],
};

fn terrain_code(t: Terrain) -> &'static str {
    match t {
        Terrain::Solid => "0",
        Terrain::Sand => "1",
    }
}

fn bool_code(b: bool) -> &'static str {
    if b {
        "1"
    } else {
        "0"
    }
}

/// Builds a CSV document, checking each record against the schema.
struct CsvDoc {
    schema: Schema,
    writer: csv::Writer<Vec<u8>>,
}

impl CsvDoc {
    fn new(schema: Schema) -> Result<Self> {
        let mut writer = csv::WriterBuilder::new().from_writer(Vec::new());
        writer.write_record(schema.columns)?;
        Ok(Self { schema, writer })
    }

    fn row(&mut self, fields: Vec<String>) -> Result<()> {
        if fields.len() != self.schema.columns.len() {
            return Err(Error::Schema(format!(
                "{} row has {} fields, schema has {}",
                self.schema.kind,
                fields.len(),
                self.schema.columns.len()
            )));
        }
        self.writer.write_record(&fields)?;
        Ok(())
    }

    fn finish(self) -> Result<String> {
        let body = self.writer.into_inner().map_err(|e| Error::Io(e.into_error()))?;
        let body = String::from_utf8(body).map_err(|e| Error::Schema(e.to_string()))?;
        Ok(format!("{}\n{body}", self.schema.header_line()))
    }
}

macro_rules! fields {
    ($($x:expr),* $(,)?) => { vec![$($x.to_string()),*] };
}

/// Parses a CSV document against a schema and returns its records.
fn parse_doc(text: &str, schema: &Schema, source: &str) -> Result<Vec<csv::StringRecord>> {
    let (first, rest) = text.split_once('\n').unwrap_or((text, ""));
    let first = first.trim_end_matches('\r');
    if first != schema.header_line() {
        return Err(Error::Schema(format!(
            "{source}: expected schema line '{}', found '{first}'",
            schema.header_line()
        )));
    }
    let mut reader = csv::ReaderBuilder::new().has_headers(true).from_reader(rest.as_bytes());
    let header = reader.headers()?.clone();
    for (i, want) in schema.columns.iter().enumerate() {
        match header.get(i) {
            Some(got) if got == *want => {}
            Some(got) => {
                return Err(Error::Schema(format!("{source}: column {} is '{got}', expected '{want}'", i + 1)))
            }
            None => return Err(Error::Schema(format!("{source}: missing column '{want}'"))),
        }
    }
    if let Some(extra) = header.get(schema.columns.len()) {
        return Err(Error::Schema(format!("{source}: unexpected column '{extra}'")));
    }
    let records = reader.records().collect::<std::result::Result<Vec<_>, _>>()?;
    if records.is_empty() {
        return Err(Error::Empty("csv data"));
    }
    Ok(records)
}

fn field<T: std::str::FromStr>(rec: &csv::StringRecord, i: usize, schema: &Schema, source: &str) -> Result<T> {
    let raw = rec.get(i).unwrap_or("");
    raw.trim().parse().map_err(|_| {
        let line = rec.position().map(|p| p.line() + 1).unwrap_or(0);
        Error::Schema(format!("{source} line {line}: column '{}' has invalid value '{raw}'", schema.columns[i]))
    })
}

fn terrain_field(rec: &csv::StringRecord, i: usize, schema: &Schema, source: &str) -> Result<Terrain> {
    match field::<u8>(rec, i, schema, source)? {
        0 => Ok(Terrain::Solid),
        1 => Ok(Terrain::Sand),
        v => Err(Error::Schema(format!("{source}: column '{}' must be 0 or 1, got {v}", schema.columns[i]))),
    }
}

pub fn imu_csv(rows: &[DatasetRow]) -> Result<String> {
    let mut doc = CsvDoc::new(IMU)?;
    for r in rows {
        let mut f = vec![r.t.to_string()];
        f.extend(r.channels.iter().map(|v| v.to_string()));
        doc.row(f)?;
    }
    doc.finish()
}

pub fn labels_csv(rows: &[DatasetRow]) -> Result<String> {
    let mut doc = CsvDoc::new(LABELS)?;
    for r in rows {
        doc.row(fields![r.t, r.fx_norm, r.fz_norm, terrain_code(r.terrain), bool_code(r.stance)])?;
    }
    doc.finish()
}

/// Joins an IMU document and its label document row by row.
pub fn parse_dataset(imu_text: &str, label_text: &str) -> Result<Vec<DatasetRow>> {
    debug_assert_eq!(IMU.columns.len(), CHANNELS + 1);
    debug_assert!(IMU.columns[1..].iter().zip(CHANNEL_NAMES).all(|(a, b)| *a == b));
    let imu = parse_doc(imu_text, &IMU, "imu csv")?;
    let labels = parse_doc(label_text, &LABELS, "label csv")?;
    if imu.len() != labels.len() {
        return Err(Error::Schema(format!("imu csv has {} rows, label csv has {}", imu.len(), labels.len())));
    }
    imu.iter()
        .zip(&labels)
        .map(|(a, b)| {
            let t: f64 = field(a, 0, &IMU, "imu csv")?;
            let tl: f64 = field(b, 0, &LABELS, "label csv")?;
            if t != tl {
                return Err(Error::Schema(format!("imu time {t} does not match label time {tl}")));
            }
            let mut channels = [0.0; CHANNELS];
            for (c, v) in channels.iter_mut().enumerate() {
                *v = field(a, c + 1, &IMU, "imu csv")?;
            }
            Ok(DatasetRow {
                t,
                channels,
                fx_norm: field(b, 1, &LABELS, "label csv")?,
                fz_norm: field(b, 2, &LABELS, "label csv")?,
                terrain: terrain_field(b, 3, &LABELS, "label csv")?,
                stance: field::<u8>(b, 4, &LABELS, "label csv")? == 1,
            })
        })
        .collect()
}

pub fn gait_csv(samples: &[GaitCycleSample]) -> Result<String> {
    let mut doc = CsvDoc::new(GAIT)?;
    for x in samples {
        doc.row(fields![
            x.time,
            x.s,
            x.knees.theta_kr,
            x.knees.theta_kl,
            x.tau_h_true,
            terrain_code(x.terrain)
        ])?;
    }
    doc.finish()
}

pub fn parse_gait(text: &str) -> Result<Vec<GaitCycleSample>> {
    let src = "gait csv";
    parse_doc(text, &GAIT, src)?
        .iter()
        .map(|r| {
            Ok(GaitCycleSample {
                time: field(r, 0, &GAIT, src)?,
                s: field(r, 1, &GAIT, src)?,
                knees: BilateralKnees::new(field(r, 2, &GAIT, src)?, field(r, 3, &GAIT, src)?),
                tau_h_true: field(r, 4, &GAIT, src)?,
                terrain: terrain_field(r, 5, &GAIT, src)?,
            })
        })
        .collect()
}

/// Per-step trial record; forces are divided by `body_weight` (N).
pub fn timeseries_csv(result: &TrialResult, body_weight: f64) -> Result<String> {
    let mut doc = CsvDoc::new(TIMESERIES)?;
    for x in &result.samples {
        doc.row(fields![
            x.t,
            x.s,
            x.stride,
            x.state.q[0].to_degrees(),
            x.state.q[1].to_degrees(),
            x.state.qdot[0].to_degrees(),
            x.state.qdot[1].to_degrees(),
            x.reference.q[0].to_degrees(),
            x.reference.q[1].to_degrees(),
            x.reference.qdot[0].to_degrees(),
            x.reference.qdot[1].to_degrees(),
            x.tau_h,
            x.tau_hip,
            x.tau_e_cmd,
            x.tau_e,
            x.grf.fx / body_weight,
            x.grf.fz / body_weight,
            x.grf_hat.fx / body_weight,
            x.grf_hat.fz / body_weight,
            x.tau_h_hat,
            x.delta_tau,
            bool_code(x.contact),
        ])?;
    }
    doc.finish()
}

pub fn metrics_csv(result: &TrialResult) -> Result<String> {
    let m = &result.metrics;
    let mut doc = CsvDoc::new(METRICS)?;
    doc.row(fields![
        result.group,
        result.terrain.as_str(),
        result.seed,
        m.tracking_rmse,
        m.human_rms,
        m.exo_rms,
        m.peak_exo,
        m.strides,
        m.stride_mean,
        m.stride_sd,
        m.delta_tau_rms,
        m.peak_fz_norm,
        m.degraded_ticks,
    ])?;
    doc.finish()
}

pub fn benchmark_csv(report: &BenchmarkReport) -> Result<String> {
    let mut doc = CsvDoc::new(BENCHMARK)?;
    for c in &report.cells {
        let row = match &c.outcome {
            Ok(m) => fields![
                c.group,
                c.terrain.as_str(),
                c.seed,
                m.tracking_rmse,
                m.human_rms,
                m.exo_rms,
                m.peak_exo,
                m.strides,
                "ok"
            ],
            Err(_) => fields![c.group, c.terrain.as_str(), c.seed, "", "", "", "", "", "failed"],
        };
        doc.row(row)?;
    }
    doc.finish()
}

pub fn curves_csv(report: &BenchmarkReport) -> Result<String> {
    let mut doc = CsvDoc::new(CURVES)?;
    for c in &report.curves {
        let bins = c.tau_e_mean.len();
        for (b, v) in c.tau_e_mean.iter().enumerate() {
            doc.row(fields![c.group, c.terrain.as_str(), b, (b as f64 + 0.5) / bins as f64, v])?;
        }
    }
    doc.finish()
}

pub fn grf_eval_csv(report: &EvalReport) -> Result<String> {
    let mut doc = CsvDoc::new(GRF_EVAL)?;
    for s in &report.per_terrain {
        doc.row(fields![s.terrain.as_str(), s.fx_rmse, s.fz_rmse, s.stance_windows, s.accuracy, s.windows])?;
    }
    doc.row(fields!["all", "", "", "", report.accuracy, report.windows])?;
    doc.finish()
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

/// Writes a file through a temporary sibling and a rename, so readers never
/// see a partial file.
pub fn write_atomic(path: &Path, contents: &[u8]) -> Result<()> {
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p.to_path_buf(),
        _ => PathBuf::from("."),
    };
    let mut tmp = tempfile::NamedTempFile::new_in(&dir)?;
    tmp.write_all(contents)?;
    tmp.as_file().sync_all()?;
    tmp.persist(path).map_err(|e| Error::Io(e.error))?;
    Ok(())
}

/// Dataset description: the files it names, their checksums and the
/// recording conditions.
#[derive(Debug, Clone, PartialEq)]
pub struct DatasetManifest {
    pub imu_file: String,
    pub label_file: String,
    pub gait_file: String,
    pub rate_hz: f64,
    pub body_mass: f64,
    pub terrains: Vec<Terrain>,
    pub rows: usize,
    pub imu_sha256: String,
    pub label_sha256: String,
    pub gait_sha256: String,
}

pub const MANIFEST_HEADER: &str = "# kneeassist dataset manifest v1";
pub const IMU_FILE: &str = "imu.csv";
pub const LABEL_FILE: &str = "labels.csv";
pub const GAIT_FILE: &str = "gait.csv";
pub const MANIFEST_FILE: &str = "manifest.txt";

impl DatasetManifest {
    pub fn to_text(&self) -> String {
        let terrains: Vec<&str> = self.terrains.iter().map(|t| t.as_str()).collect();
        format!(
            "{MANIFEST_HEADER}\nimu_file = {}\nlabel_file = {}\ngait_file = {}\nrate_hz = {}\nbody_mass = {}\nterrains = {}\nrows = {}\nimu_sha256 = {}\nlabel_sha256 = {}\ngait_sha256 = {}\n",
            self.imu_file,
            self.label_file,
            self.gait_file,
            self.rate_hz,
            self.body_mass,
            terrains.join(","),
            self.rows,
            self.imu_sha256,
            self.label_sha256,
            self.gait_sha256
        )
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut lines = text.lines();
        if lines.next() != Some(MANIFEST_HEADER) {
            return Err(Error::Schema(format!("manifest must start with '{MANIFEST_HEADER}'")));
        }
        let mut kv = std::collections::BTreeMap::new();
        for l in lines.filter(|l| !l.trim().is_empty()) {
            let (k, v) = l.split_once('=').ok_or_else(|| Error::Schema(format!("manifest line '{l}' lacks '='")))?;
            kv.insert(k.trim().to_string(), v.trim().to_string());
        }
        let get = |k: &str| kv.get(k).cloned().ok_or_else(|| Error::Schema(format!("manifest lacks '{k}'")));
        let num = |k: &str| -> Result<f64> {
            get(k)?.parse().map_err(|_| Error::Schema(format!("manifest '{k}' is not a number")))
        };
        let terrains = get("terrains")?
            .split(',')
            .map(|t| t.parse::<Terrain>().map_err(|_| Error::Schema(format!("manifest terrain '{t}' is unknown"))))
            .collect::<Result<Vec<_>>>()?;
        let m = Self {
            imu_file: get("imu_file")?,
            label_file: get("label_file")?,
            gait_file: get("gait_file")?,
            rate_hz: num("rate_hz")?,
            body_mass: num("body_mass")?,
            terrains,
            rows: get("rows")?.parse().map_err(|_| Error::Schema("manifest 'rows' is not a count".into()))?,
            imu_sha256: get("imu_sha256")?,
            label_sha256: get("label_sha256")?,
            gait_sha256: get("gait_sha256")?,
        };
        if !(m.rate_hz > 0.0) {
            return Err(Error::Schema("manifest rate_hz must be > 0".into()));
        }
        Ok(m)
    }
}

/// CSV documents and manifest of a synthetic dataset, ready to write.
pub struct DatasetFiles {
    pub imu: String,
    pub labels: String,
    pub gait: String,
    pub manifest: DatasetManifest,
}

pub fn dataset_files(data: &SyntheticDataset) -> Result<DatasetFiles> {
    let imu = imu_csv(&data.rows)?;
    let labels = labels_csv(&data.rows)?;
    let gait = gait_csv(&data.gait)?;
    let mut terrains: Vec<Terrain> = data.rows.iter().map(|r| r.terrain).collect();
    terrains.sort();
    terrains.dedup();
    let manifest = DatasetManifest {
        imu_file: IMU_FILE.into(),
        label_file: LABEL_FILE.into(),
        gait_file: GAIT_FILE.into(),
        rate_hz: data.rate_hz,
        body_mass: data.body_mass,
        terrains,
        rows: data.rows.len(),
        imu_sha256: sha256_hex(imu.as_bytes()),
        label_sha256: sha256_hex(labels.as_bytes()),
        gait_sha256: sha256_hex(gait.as_bytes()),
    };
    Ok(DatasetFiles { imu, labels, gait, manifest })
}

pub fn write_dataset(dir: &Path, data: &SyntheticDataset) -> Result<DatasetManifest> {
    let files = dataset_files(data)?;
    fs::create_dir_all(dir)?;
    write_atomic(&dir.join(IMU_FILE), files.imu.as_bytes())?;
    write_atomic(&dir.join(LABEL_FILE), files.labels.as_bytes())?;
    write_atomic(&dir.join(GAIT_FILE), files.gait.as_bytes())?;
    write_atomic(&dir.join(MANIFEST_FILE), files.manifest.to_text().as_bytes())?;
    Ok(files.manifest)
}

fn verify(name: &str, text: &str, sha: &str) -> Result<()> {
    let got = sha256_hex(text.as_bytes());
    if got != sha {
        return Err(Error::Schema(format!("{name}: checksum {got} does not match manifest {sha}")));
    }
    Ok(())
}

/// Reads a dataset directory. Schemas are checked first, so a malformed
/// file is reported by column; then every checksum in the manifest.
pub fn read_dataset(dir: &Path) -> Result<(DatasetManifest, SyntheticDataset)> {
    let manifest = DatasetManifest::parse(&fs::read_to_string(dir.join(MANIFEST_FILE))?)?;
    let imu = fs::read_to_string(dir.join(&manifest.imu_file))?;
    let labels = fs::read_to_string(dir.join(&manifest.label_file))?;
    let gait = fs::read_to_string(dir.join(&manifest.gait_file))?;
    let rows = parse_dataset(&imu, &labels)?;
    let gait_rows = parse_gait(&gait)?;
    verify(&manifest.imu_file, &imu, &manifest.imu_sha256)?;
    verify(&manifest.label_file, &labels, &manifest.label_sha256)?;
    verify(&manifest.gait_file, &gait, &manifest.gait_sha256)?;
    if rows.len() != manifest.rows {
        return Err(Error::Schema(format!("manifest lists {} rows, imu csv has {}", manifest.rows, rows.len())));
    }
    let data = SyntheticDataset { rows, gait: gait_rows, body_mass: manifest.body_mass, rate_hz: manifest.rate_hz };
    Ok((manifest, data))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rows() -> Vec<DatasetRow> {
        (0..4)
            .map(|i| DatasetRow {
                t: i as f64 * 0.01,
                channels: std::array::from_fn(|c| 0.1 * c as f64 + i as f64 / 3.0),
                fx_norm: -0.05 * i as f64,
                fz_norm: 0.3,
                terrain: if i < 2 { Terrain::Solid } else { Terrain::Sand },
                stance: i % 2 == 0,
            })
            .collect()
    }

    #[test]
    fn dataset_documents_parse_back_exactly() {
        let r = rows();
        let back = parse_dataset(&imu_csv(&r).unwrap(), &labels_csv(&r).unwrap()).unwrap();
        assert_eq!(back, r);
    }

    #[test]
    fn missing_channel_is_named() {
        let r = rows();
        let imu = imu_csv(&r).unwrap().replace(",toe_gy", "");
        let err = parse_dataset(&imu, &labels_csv(&r).unwrap()).unwrap_err().to_string();
        assert!(err.contains("toe_gy"), "{err}");
    }

    #[test]
    fn wrong_schema_version_is_rejected() {
        let r = rows();
        let imu = imu_csv(&r).unwrap().replacen("imu v1", "imu v2", 1);
        assert!(matches!(parse_dataset(&imu, &labels_csv(&r).unwrap()), Err(Error::Schema(_))));
    }

    #[test]
    fn header_only_csv_is_empty() {
        let text = gait_csv(&[]).unwrap();
        assert!(matches!(parse_gait(&text), Err(Error::Empty(_))));
    }

    #[test]
    fn manifest_round_trips_and_catches_tampering() {
        let dir = tempfile::tempdir().unwrap();
        let gait = vec![GaitCycleSample {
            time: 0.0,
            s: 0.25,
            knees: BilateralKnees::new(12.0, 40.0),
            tau_h_true: 0.3,
            terrain: Terrain::Sand,
        }];
        let data = SyntheticDataset { rows: rows(), gait, body_mass: 70.0, rate_hz: 100.0 };
        let m = write_dataset(dir.path(), &data).unwrap();
        assert_eq!(DatasetManifest::parse(&m.to_text()).unwrap(), m);
        let (_, back) = read_dataset(dir.path()).unwrap();
        assert_eq!(back.rows, data.rows);
        assert_eq!(back.gait, data.gait);
        assert_eq!(m.terrains, vec![Terrain::Solid, Terrain::Sand]);
        let p = dir.path().join(IMU_FILE);
        let text = fs::read_to_string(&p).unwrap();
        fs::write(&p, text.replace("0.1", "0.2")).unwrap();
        let err = read_dataset(dir.path()).unwrap_err().to_string();
        assert!(err.contains("checksum"), "{err}");
    }
}
