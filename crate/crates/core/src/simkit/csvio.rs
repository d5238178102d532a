//! Recorded-data interchange.
//!
//! | file        | columns                          |
//! |-------------|----------------------------------|
//! | `imu.csv`   | `t,fx,fy,fz,wx,wy,wz`            |
//! | `dvl.csv`   | `t,vx,vy,vz,valid`               |
//! | `truth.csv` | `t,yaw,pitch,roll,vN,vE,vD`      |
//!
//! SI units, angles in radians, body axes forward/right/down. `truth.csv`
//! is optional. Row numbers in errors count data rows from 1.

use std::fs::File;
use std::io::Write;
use std::path::{Path, PathBuf};

use nalgebra::Vector3;
use thiserror::Error;

use super::{DvlSample, LabelStream, TruthStream};
use crate::strapdown::{ImuSample, NavState};

pub const IMU_COLUMNS: [&str; 7] = ["t", "fx", "fy", "fz", "wx", "wy", "wz"];
pub const DVL_COLUMNS: [&str; 5] = ["t", "vx", "vy", "vz", "valid"];
pub const TRUTH_COLUMNS: [&str; 7] = ["t", "yaw", "pitch", "roll", "vN", "vE", "vD"];

/// Largest plausible specific force magnitude (m/s²).
pub const MAX_SPECIFIC_FORCE: f64 = 100.0;

#[derive(Debug, Error)]
pub enum IngestError {
    #[error("{file}: {source}")]
    Io {
        file: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{file}: malformed CSV: {source}")]
    Csv {
        file: PathBuf,
        #[source]
        source: csv::Error,
    },
    #[error("{file}: missing column {column}")]
    MissingColumn { file: PathBuf, column: &'static str },
    #[error("{file} row {row}: column {column}: {message}")]
    Value {
        file: PathBuf,
        row: usize,
        column: &'static str,
        message: String,
    },
    #[error("{file} row {row}: timestamp {t} does not increase")]
    NonMonotone { file: PathBuf, row: usize, t: f64 },
    #[error(
        "{file} row {row}: specific force magnitude {magnitude} exceeds {MAX_SPECIFIC_FORCE} m/s²"
    )]
    Range {
        file: PathBuf,
        row: usize,
        magnitude: f64,
    },
    #[error("{file}: no data rows")]
    Empty { file: PathBuf },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TruthRow {
    pub t: f64,
    pub yaw: f64,
    pub pitch: f64,
    pub roll: f64,
    pub v_n: Vector3<f64>,
}

impl TruthRow {
    pub fn nav_state(&self) -> NavState {
        NavState::from_euler(self.yaw, self.pitch, self.roll, self.v_n, self.t)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RecordedDataset {
    pub imu: Vec<ImuSample>,
    pub dvl: Vec<DvlSample>,
    pub truth: Option<Vec<TruthRow>>,
}

impl RecordedDataset {
    /// Interprets the recording as ideal sensors plus truth, so synthetic
    /// corruption can be layered on top. Truth rows must coincide with the
    /// IMU epochs.
    pub fn into_truth_stream(self, name: &str) -> Result<TruthStream, IngestError> {
        let truth = self.truth.ok_or_else(|| IngestError::Empty {
            file: PathBuf::from("truth.csv"),
        })?;
        if self.imu.len() < 2 {
            return Err(IngestError::Empty {
                file: PathBuf::from("imu.csv"),
            });
        }
        let dt = self.imu[1].t - self.imu[0].t;
        let mut states: Vec<NavState> = Vec::with_capacity(self.imu.len() + 1);
        let mut j = 0;
        for k in 0..=self.imu.len() {
            let t = self.imu[0].t + k as f64 * dt;
            while j + 1 < truth.len() && truth[j].t < t - 0.5 * dt {
                j += 1;
            }
            if (truth[j].t - t).abs() > 0.5 * dt {
                return Err(IngestError::Value {
                    file: PathBuf::from("truth.csv"),
                    row: j + 1,
                    column: "t",
                    message: format!("no truth row at IMU epoch {t}"),
                });
            }
            let mut s = truth[j].nav_state();
            s.t = t;
            states.push(s);
        }
        Ok(TruthStream {
            name: name.to_string(),
            imu_rate: 1.0 / dt,
            states,
            imu: self.imu,
            dvl: self.dvl,
        })
    }
}

fn open(path: &Path) -> Result<csv::Reader<File>, IngestError> {
    let file = File::open(path).map_err(|source| IngestError::Io {
        file: path.to_path_buf(),
        source,
    })?;
    Ok(csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_reader(file))
}

/// Reads every row as floats in the order of `columns`, enforcing
/// strictly increasing time in the first column.
fn read_table(path: &Path, columns: &[&'static str]) -> Result<Vec<Vec<f64>>, IngestError> {
    let mut rdr = open(path)?;
    let csv_err = |source| IngestError::Csv {
        file: path.to_path_buf(),
        source,
    };
    let headers = rdr.headers().map_err(csv_err)?.clone();
    let idx: Vec<usize> = columns
        .iter()
        .map(|c| {
            headers
                .iter()
                .position(|h| h == *c)
                .ok_or(IngestError::MissingColumn {
                    file: path.to_path_buf(),
                    column: c,
                })
        })
        .collect::<Result<_, _>>()?;
    let mut rows = Vec::new();
    let mut last_t = f64::NEG_INFINITY;
    for (n, rec) in rdr.records().enumerate() {
        let row = n + 1;
        let rec = rec.map_err(csv_err)?;
        let mut vals = Vec::with_capacity(columns.len());
        for (col, &i) in columns.iter().zip(&idx) {
            let raw = rec.get(i).unwrap_or("");
            let v = match (*col, raw) {
                ("valid", "true") => 1.0,
                ("valid", "false") => 0.0,
                _ => raw.parse::<f64>().map_err(|e| IngestError::Value {
                    file: path.to_path_buf(),
                    row,
                    column: col,
                    message: format!("{raw:?}: {e}"),
                })?,
            };
            if !v.is_finite() {
                return Err(IngestError::Value {
                    file: path.to_path_buf(),
                    row,
                    column: col,
                    message: "non-finite".into(),
                });
            }
            vals.push(v);
        }
        if vals[0] <= last_t {
            return Err(IngestError::NonMonotone {
                file: path.to_path_buf(),
                row,
                t: vals[0],
            });
        }
        last_t = vals[0];
        rows.push(vals);
    }
    if rows.is_empty() {
        return Err(IngestError::Empty {
            file: path.to_path_buf(),
        });
    }
    Ok(rows)
}

pub fn read_imu_csv(path: &Path) -> Result<Vec<ImuSample>, IngestError> {
    read_table(path, &IMU_COLUMNS)?
        .into_iter()
        .enumerate()
        .map(|(n, r)| {
            let f_b = Vector3::new(r[1], r[2], r[3]);
            if f_b.norm() > MAX_SPECIFIC_FORCE {
                return Err(IngestError::Range {
                    file: path.to_path_buf(),
                    row: n + 1,
                    magnitude: f_b.norm(),
                });
            }
            Ok(ImuSample {
                f_b,
                w_b: Vector3::new(r[4], r[5], r[6]),
                t: r[0],
            })
        })
        .collect()
}

pub fn read_dvl_csv(path: &Path) -> Result<Vec<DvlSample>, IngestError> {
    read_table(path, &DVL_COLUMNS)?
        .into_iter()
        .enumerate()
        .map(|(n, r)| {
            if r[4] != 0.0 && r[4] != 1.0 {
                return Err(IngestError::Value {
                    file: path.to_path_buf(),
                    row: n + 1,
                    column: "valid",
                    message: format!("flag must be 0 or 1, got {}", r[4]),
                });
            }
            Ok(DvlSample {
                t: r[0],
                v_b: Vector3::new(r[1], r[2], r[3]),
                valid: r[4] == 1.0,
            })
        })
        .collect()
}

pub fn read_truth_csv(path: &Path) -> Result<Vec<TruthRow>, IngestError> {
    Ok(read_table(path, &TRUTH_COLUMNS)?
        .into_iter()
        .map(|r| TruthRow {
            t: r[0],
            yaw: r[1],
            pitch: r[2],
            roll: r[3],
            v_n: Vector3::new(r[4], r[5], r[6]),
        })
        .collect())
}

/// Reads `imu.csv`, `dvl.csv` and, when present, `truth.csv` from `dir`.
pub fn ingest_csv(dir: &Path) -> Result<RecordedDataset, IngestError> {
    let truth_path = dir.join("truth.csv");
    Ok(RecordedDataset {
        imu: read_imu_csv(&dir.join("imu.csv"))?,
        dvl: read_dvl_csv(&dir.join("dvl.csv"))?,
        truth: if truth_path.exists() {
            Some(read_truth_csv(&truth_path)?)
        } else {
            None
        },
    })
}

fn create(path: &Path) -> Result<csv::Writer<File>, IngestError> {
    let file = File::create(path).map_err(|source| IngestError::Io {
        file: path.to_path_buf(),
        source,
    })?;
    Ok(csv::Writer::from_writer(file))
}

fn write_rows<I>(path: &Path, header: &[&str], rows: I) -> Result<(), IngestError>
where
    I: IntoIterator<Item = Vec<String>>,
{
    let mut w = create(path)?;
    let csv_err = |source| IngestError::Csv {
        file: path.to_path_buf(),
        source,
    };
    w.write_record(header).map_err(csv_err)?;
    for r in rows {
        w.write_record(&r).map_err(csv_err)?;
    }
    w.flush().map_err(|source| IngestError::Io {
        file: path.to_path_buf(),
        source,
    })
}

fn fmt(vals: &[f64]) -> Vec<String> {
    vals.iter().map(|v| v.to_string()).collect()
}

pub fn write_imu_csv(path: &Path, imu: &[ImuSample]) -> Result<(), IngestError> {
    write_rows(
        path,
        &IMU_COLUMNS,
        imu.iter()
            .map(|s| fmt(&[s.t, s.f_b.x, s.f_b.y, s.f_b.z, s.w_b.x, s.w_b.y, s.w_b.z])),
    )
}

pub fn write_dvl_csv(path: &Path, dvl: &[DvlSample]) -> Result<(), IngestError> {
    write_rows(
        path,
        &DVL_COLUMNS,
        dvl.iter().map(|d| {
            let mut r = fmt(&[d.t, d.v_b.x, d.v_b.y, d.v_b.z]);
            r.push(if d.valid { "1" } else { "0" }.into());
            r
        }),
    )
}

pub fn write_truth_csv(path: &Path, states: &[NavState]) -> Result<(), IngestError> {
    write_rows(
        path,
        &TRUTH_COLUMNS,
        states.iter().map(|s| {
            let e = s.euler();
            fmt(&[s.t, e[0], e[1], e[2], s.v_n.x, s.v_n.y, s.v_n.z])
        }),
    )
}

pub fn write_labels_csv(path: &Path, labels: &LabelStream) -> Result<(), IngestError> {
    let mut file = File::create(path).map_err(|source| IngestError::Io {
        file: path.to_path_buf(),
        source,
    })?;
    let mut text = String::from("t,accel_x,accel_y,accel_z,gyro_x,gyro_y,gyro_z\n");
    for ((t, a), g) in labels.t.iter().zip(&labels.accel).zip(&labels.gyro) {
        text.push_str(&fmt(&[*t, a[0], a[1], a[2], g[0], g[1], g[2]]).join(","));
        text.push('\n');
    }
    file.write_all(text.as_bytes())
        .map_err(|source| IngestError::Io {
            file: path.to_path_buf(),
            source,
        })
}
