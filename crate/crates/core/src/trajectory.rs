//! Observation sequences and the fixed-length future windows cut from them.
//!
//! Time indices follow the usual filtering convention and start at 1: the
//! first observation of a trajectory is `x_1`. Storage is a flat, time-major
//! buffer of `len * dim` reals.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// An ordered sequence of equal-dimension, finite observation vectors.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    data: Vec<f64>,
    dim: usize,
}

impl Trajectory {
    /// Builds a trajectory from per-step rows, validating dimensions and finiteness.
    pub fn new(rows: Vec<Vec<f64>>) -> Result<Self> {
        let first = rows
            .first()
            .ok_or(Error::Empty("trajectory has no observations"))?;
        let dim = first.len();
        let mut data = Vec::with_capacity(rows.len() * dim);
        for (i, row) in rows.iter().enumerate() {
            if row.len() != dim {
                return Err(Error::InvalidData(format!(
                    "observation {} has dimension {}, expected {}",
                    i + 1,
                    row.len(),
                    dim
                )));
            }
            data.extend_from_slice(row);
        }
        Self::from_flat(data, dim)
    }

    /// Builds a trajectory from a flat time-major buffer.
    pub fn from_flat(data: Vec<f64>, dim: usize) -> Result<Self> {
        if dim == 0 {
            return Err(Error::InvalidData(
                "observation dimension must be at least 1".into(),
            ));
        }
        if data.is_empty() {
            return Err(Error::Empty("trajectory has no observations"));
        }
        if !data.len().is_multiple_of(dim) {
            return Err(Error::InvalidData(format!(
                "buffer of {} entries is not a multiple of dimension {}",
                data.len(),
                dim
            )));
        }
        if let Some(pos) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::InvalidData(format!(
                "non-finite value at observation {}",
                pos / dim + 1
            )));
        }
        Ok(Self { data, dim })
    }

    pub fn len(&self) -> usize {
        self.data.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    /// Observation dimension `n`.
    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Observation `x_t`, with `t` starting at 1.
    ///
    /// Panics if `t` is 0 or beyond the end of the trajectory.
    pub fn obs(&self, t: usize) -> &[f64] {
        assert!(
            t >= 1 && t <= self.len(),
            "time index {t} out of range 1..={}",
            self.len()
        );
        &self.data[(t - 1) * self.dim..t * self.dim]
    }

    pub fn as_flat(&self) -> &[f64] {
        &self.data
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> {
        self.data.chunks_exact(self.dim)
    }

    /// Number of filter steps `T = L - k` a window of length `k` allows.
    pub fn usable_steps(&self, k: usize) -> usize {
        self.len().saturating_sub(k)
    }

    /// The window `f_t = [x_t; ...; x_{t+k-1}]`.
    pub fn future_window(&self, t: usize, k: usize) -> Result<FutureWindow<'_>> {
        let len = self.len();
        if t == 0 || k == 0 || t + k - 1 > len {
            return Err(Error::WindowUnavailable { t, k, len });
        }
        Ok(FutureWindow {
            values: &self.data[(t - 1) * self.dim..(t - 1 + k) * self.dim],
            k,
            dim: self.dim,
            origin: t,
        })
    }
}

/// `k` consecutive observations concatenated in time order.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FutureWindow<'a> {
    values: &'a [f64],
    k: usize,
    dim: usize,
    origin: usize,
}

impl<'a> FutureWindow<'a> {
    /// Wraps a flat buffer of `k * dim` values as a window starting at `origin`.
    pub fn from_slice(values: &'a [f64], k: usize, dim: usize, origin: usize) -> Result<Self> {
        if values.len() != k * dim {
            return Err(Error::DimensionMismatch {
                context: "future window",
                expected: k * dim,
                actual: values.len(),
            });
        }
        Ok(Self {
            values,
            k,
            dim,
            origin,
        })
    }

    pub fn values(&self) -> &'a [f64] {
        self.values
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn origin(&self) -> usize {
        self.origin
    }

    /// The `i`-th observation of the window (0-based).
    pub fn step(&self, i: usize) -> &'a [f64] {
        &self.values[i * self.dim..(i + 1) * self.dim]
    }
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct JsonTrajectory {
    obs: Vec<Vec<f64>>,
}

fn check_common_dim(trajs: &[Trajectory], path: &Path) -> Result<()> {
    if let Some(first) = trajs.first() {
        if let Some((i, t)) = trajs
            .iter()
            .enumerate()
            .find(|(_, t)| t.dim() != first.dim())
        {
            return Err(Error::Parse {
                path: path.to_path_buf(),
                line: i + 1,
                message: format!(
                    "trajectory has observation dimension {}, expected {}",
                    t.dim(),
                    first.dim()
                ),
            });
        }
    }
    Ok(())
}

/// Reads a JSON-lines trajectory file, one `{"obs": [[...], ...]}` per line.
pub fn read_jsonl(path: impl AsRef<Path>) -> Result<Vec<Trajectory>> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut trajs = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let parse_err = |message: String| Error::Parse {
            path: path.to_path_buf(),
            line: i + 1,
            message,
        };
        let record: JsonTrajectory =
            serde_json::from_str(&line).map_err(|e| parse_err(e.to_string()))?;
        trajs.push(Trajectory::new(record.obs).map_err(|e| parse_err(e.to_string()))?);
    }
    check_common_dim(&trajs, path)?;
    Ok(trajs)
}

/// Writes trajectories in the JSON-lines format read by [`read_jsonl`].
pub fn write_jsonl<W: Write>(mut out: W, trajs: &[Trajectory]) -> Result<()> {
    for traj in trajs {
        let record = JsonTrajectory {
            obs: traj.rows().map(<[f64]>::to_vec).collect(),
        };
        serde_json::to_writer(&mut out, &record)?;
        out.write_all(b"\n").map_err(|e| Error::io("<output>", e))?;
    }
    Ok(())
}

pub fn write_jsonl_file(path: impl AsRef<Path>, trajs: &[Trajectory]) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut out = BufWriter::new(file);
    write_jsonl(&mut out, trajs)?;
    out.flush().map_err(|e| Error::io(path, e))
}

/// Reads a CSV file with columns `traj_id, t, x_0, ..., x_{n-1}`, sorted by
/// `(traj_id, t)` with `t` contiguous from 1 within each trajectory.
pub fn read_csv(path: impl AsRef<Path>) -> Result<Vec<Trajectory>> {
    let path = path.as_ref();
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            line: 0,
            message: e.to_string(),
        })?;
    let headers = reader
        .headers()
        .map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            line: 1,
            message: e.to_string(),
        })?
        .clone();
    if headers.len() < 3 || &headers[0] != "traj_id" || &headers[1] != "t" {
        return Err(Error::Parse {
            path: path.to_path_buf(),
            line: 1,
            message: "expected header traj_id,t,x_0,...".into(),
        });
    }
    let dim = headers.len() - 2;

    let mut trajs = Vec::new();
    let mut current_id: Option<String> = None;
    let mut current: Vec<f64> = Vec::new();
    let mut expected_t = 1usize;
    let finish = |buf: &mut Vec<f64>, trajs: &mut Vec<Trajectory>| -> Result<()> {
        if !buf.is_empty() {
            trajs.push(Trajectory::from_flat(std::mem::take(buf), dim)?);
        }
        Ok(())
    };

    for (i, record) in reader.records().enumerate() {
        let line = i + 2;
        let parse_err = |message: String| Error::Parse {
            path: path.to_path_buf(),
            line,
            message,
        };
        let record = record.map_err(|e| parse_err(e.to_string()))?;
        if record.len() != dim + 2 {
            return Err(parse_err(format!(
                "expected {} columns, found {}",
                dim + 2,
                record.len()
            )));
        }
        let id = &record[0];
        let t: usize = record[1]
            .parse()
            .map_err(|_| parse_err(format!("bad time index {:?}", &record[1])))?;
        if current_id.as_deref() != Some(id) {
            finish(&mut current, &mut trajs).map_err(|e| parse_err(e.to_string()))?;
            current_id = Some(id.to_string());
            expected_t = 1;
        }
        if t != expected_t {
            return Err(parse_err(format!(
                "trajectory {id}: expected t={expected_t}, found t={t}"
            )));
        }
        expected_t += 1;
        for field in record.iter().skip(2) {
            let v: f64 = field
                .parse()
                .map_err(|_| parse_err(format!("bad value {field:?}")))?;
            if !v.is_finite() {
                return Err(parse_err(format!("non-finite value {field:?}")));
            }
            current.push(v);
        }
    }
    finish(&mut current, &mut trajs)?;
    Ok(trajs)
}

/// Loads trajectories, choosing the format from the file extension (`.csv`
/// or JSON-lines otherwise).
pub fn read_trajectories(path: impl AsRef<Path>) -> Result<Vec<Trajectory>> {
    let path = path.as_ref();
    match path.extension().and_then(|e| e.to_str()) {
        Some("csv") => read_csv(path),
        _ => read_jsonl(path),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> Trajectory {
        Trajectory::new(vec![vec![1.0, 2.0], vec![3.0, 4.0], vec![5.0, 6.0]]).unwrap()
    }

    #[test]
    fn window_slices() {
        let traj = sample();
        assert_eq!(
            traj.future_window(1, 2).unwrap().values(),
            &[1.0, 2.0, 3.0, 4.0]
        );
        assert_eq!(
            traj.future_window(2, 2).unwrap().values(),
            &[3.0, 4.0, 5.0, 6.0]
        );
        let w = traj.future_window(2, 2).unwrap();
        assert_eq!(w.step(1), &[5.0, 6.0]);
        assert_eq!(w.origin(), 2);
    }

    #[test]
    fn window_past_end() {
        let err = sample().future_window(3, 2).unwrap_err();
        assert!(matches!(
            err,
            Error::WindowUnavailable { t: 3, k: 2, len: 3 }
        ));
        assert!(err.to_string().contains("t=3"));
    }

    #[test]
    fn rejects_ragged_and_non_finite() {
        assert!(Trajectory::new(vec![vec![1.0], vec![1.0, 2.0]]).is_err());
        assert!(Trajectory::new(vec![vec![f64::NAN]]).is_err());
        assert!(Trajectory::new(vec![vec![f64::INFINITY, 0.0]]).is_err());
        assert!(Trajectory::new(vec![]).is_err());
        assert!(Trajectory::new(vec![vec![]]).is_err());
    }

    #[test]
    fn jsonl_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let dir = dir.path();
        let path = dir.join("t.jsonl");
        let trajs = vec![sample(), Trajectory::new(vec![vec![0.5, -1.0]]).unwrap()];
        write_jsonl_file(&path, &trajs).unwrap();
        assert_eq!(read_trajectories(&path).unwrap(), trajs);
    }

    #[test]
    fn jsonl_rejects_mixed_dimensions() {
        let dir = tempfile::tempdir().unwrap();
        let dir = dir.path();
        let path = dir.join("bad.jsonl");
        std::fs::write(&path, "{\"obs\": [[1, 2]]}\n{\"obs\": [[1]]}\n").unwrap();
        let err = read_jsonl(&path).unwrap_err();
        assert!(matches!(err, Error::Parse { line: 2, .. }), "{err}");
    }

    #[test]
    fn csv_loader() {
        let dir = tempfile::tempdir().unwrap();
        let dir = dir.path();
        let path = dir.join("t.csv");
        std::fs::write(
            &path,
            "traj_id,t,x_0,x_1\na,1,1,2\na,2,3,4\na,3,5,6\nb,1,0.5,-1\n",
        )
        .unwrap();
        let trajs = read_trajectories(&path).unwrap();
        assert_eq!(trajs.len(), 2);
        assert_eq!(trajs[0], sample());
        assert_eq!(trajs[1].obs(1), &[0.5, -1.0]);
    }

    #[test]
    fn csv_rejects_gaps_and_nan() {
        let dir = tempfile::tempdir().unwrap();
        let dir = dir.path();
        let gap = dir.join("gap.csv");
        std::fs::write(&gap, "traj_id,t,x_0\na,1,1\na,3,2\n").unwrap();
        assert!(matches!(
            read_csv(&gap).unwrap_err(),
            Error::Parse { line: 3, .. }
        ));
        let start = dir.join("start.csv");
        std::fs::write(&start, "traj_id,t,x_0\na,0,1\n").unwrap();
        assert!(read_csv(&start).is_err());
        let nan = dir.join("nan.csv");
        std::fs::write(&nan, "traj_id,t,x_0\na,1,NaN\n").unwrap();
        assert!(read_csv(&nan).is_err());
    }
}
