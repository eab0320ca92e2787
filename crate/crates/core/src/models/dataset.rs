use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{DataPoint, LatentModel};
use crate::error::{Error, Result};
use crate::io::format_real;
use crate::rng::{DrawKey, Substream};

/// A finite dataset `X` of `N` observations.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    points: Vec<DataPoint>,
}

/// Sidecar header written next to a dataset file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DataHeader {
    pub dim: usize,
    pub n_total: usize,
    pub seed: u64,
    pub true_theta: Vec<f64>,
}

impl Dataset {
    pub fn new(points: Vec<DataPoint>) -> Result<Self> {
        if points.is_empty() {
            return Err(Error::contract("dataset must contain at least one point"));
        }
        let dim = points[0].as_slice().len();
        if points.iter().any(|p| p.as_slice().len() != dim) {
            return Err(Error::contract("dataset points have inconsistent dimensions"));
        }
        Ok(Dataset { points })
    }

    /// Draws `n` observations from `model` at `theta`, one keyed stream per point.
    pub fn synthesize(model: &dyn LatentModel, theta: &[f64], n: usize, seed: u64) -> Result<Self> {
        if theta.len() != model.theta_dim() {
            return Err(Error::contract("theta length does not match the model"));
        }
        let points = (0..n as u64)
            .map(|i| {
                let mut rng = DrawKey::new(seed, Substream::DataGen, 0, i).rng();
                DataPoint::new(model.sample_data(theta, &mut rng))
            })
            .collect::<Result<Vec<_>>>()?;
        Dataset::new(points)
    }

    pub fn points(&self) -> &[DataPoint] {
        &self.points
    }

    pub fn get(&self, i: usize) -> &DataPoint {
        &self.points[i]
    }

    /// `N`.
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.points[0].as_slice().len()
    }

    /// One observation per line, whitespace-separated, 17 significant digits.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for p in &self.points {
            let row: Vec<String> = p.as_slice().iter().map(|v| format_real(*v)).collect();
            out.push_str(&row.join(" "));
            out.push('\n');
        }
        out
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let points = text
            .lines()
            .enumerate()
            .filter(|(_, l)| !l.trim().is_empty())
            .map(|(i, line)| {
                let x = line
                    .split_whitespace()
                    .map(|tok| {
                        tok.parse::<f64>()
                            .map_err(|e| Error::Parse(format!("line {}: `{tok}`: {e}", i + 1)))
                    })
                    .collect::<Result<Vec<_>>>()?;
                DataPoint::new(x)
            })
            .collect::<Result<Vec<_>>>()?;
        Dataset::new(points)
    }

    /// Path of the JSON header belonging to a dataset file.
    pub fn header_path(path: &Path) -> PathBuf {
        let mut os = path.as_os_str().to_owned();
        os.push(".json");
        PathBuf::from(os)
    }

    pub fn save(&self, path: &Path, seed: u64, true_theta: &[f64]) -> Result<()> {
        fs::write(path, self.to_text())?;
        let header = DataHeader {
            dim: self.dim(),
            n_total: self.len(),
            seed,
            true_theta: true_theta.to_vec(),
        };
        let json = serde_json::to_string_pretty(&header).map_err(|e| Error::Io(e.to_string()))?;
        fs::write(Self::header_path(path), json + "\n")?;
        Ok(())
    }

    /// Loads a dataset and, when present, its header; checks they agree.
    pub fn load(path: &Path) -> Result<(Self, Option<DataHeader>)> {
        let data = Dataset::from_text(&fs::read_to_string(path)?)?;
        let hp = Self::header_path(path);
        let header = if hp.exists() {
            let h: DataHeader = serde_json::from_str(&fs::read_to_string(&hp)?)
                .map_err(|e| Error::Parse(format!("{}: {e}", hp.display())))?;
            if h.n_total != data.len() || h.dim != data.dim() {
                return Err(Error::Parse(format!(
                    "header says {} x {}, file has {} x {}",
                    h.n_total,
                    h.dim,
                    data.len(),
                    data.dim()
                )));
            }
            Some(h)
        } else {
            None
        };
        Ok((data, header))
    }
}
