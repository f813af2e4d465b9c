//! Trajectory datasets and their `SIVA` binary format.
//!
//! Layout (all little-endian):
//!
//! | field        | type |
//! |--------------|------|
//! | magic        | `b"SIVA"` |
//! | version      | u32  |
//! | equation     | u32 (0 = MS, 1 = KS) |
//! | beta         | f64  |
//! | d            | u32  |
//! | p            | u32  |
//! | channels     | u32  |
//! | dt           | f64  |
//! | n_sequences  | u64  |
//! | n_steps      | u64  |
//! | seed         | u64  |
//!
//! followed by `n_sequences * (n_steps + 1) * channels * p^d` f64 values,
//! sequence-major, then time, then channel, then row-major grid.
//! A JSON sidecar (`<file>.json`) repeats the header and records the
//! generation settings.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{InitialConditionSpec, SolverConfig};
use crate::error::{Error, Result};
use crate::io::*;
use crate::spectral::{Equation, Field, Grid};

pub const DATASET_MAGIC: &[u8; 4] = b"SIVA";
pub const DATASET_VERSION: u32 = 1;

/// Ordered trajectories sampled every `dt` time units.
#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryDataset {
    pub equation: Equation,
    pub beta: f64,
    pub grid: Grid,
    pub dt: f64,
    pub seed: u64,
    /// `sequences[i][t]` is the snapshot at time `t * dt` of sequence `i`.
    pub sequences: Vec<Vec<Field>>,
    pub solver: Option<SolverConfig>,
    pub initial_condition: Option<InitialConditionSpec>,
    pub sequence_seeds: Vec<u64>,
}

/// Human-readable sidecar of a dataset file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub format: String,
    pub version: u32,
    pub equation: Equation,
    pub beta: f64,
    pub dim: usize,
    pub points: usize,
    pub channels: usize,
    pub dt: f64,
    pub n_sequences: usize,
    pub n_steps: usize,
    pub seed: u64,
    #[serde(default)]
    pub solver: Option<SolverConfig>,
    #[serde(default)]
    pub initial_condition: Option<InitialConditionSpec>,
    #[serde(default)]
    pub sequence_seeds: Vec<u64>,
    pub value_min: f64,
    pub value_max: f64,
}

impl TrajectoryDataset {
    pub fn n_sequences(&self) -> usize {
        self.sequences.len()
    }

    /// Steps per sequence (snapshots minus one).
    pub fn n_steps(&self) -> usize {
        self.sequences.first().map_or(0, |s| s.len().saturating_sub(1))
    }

    pub fn channels(&self) -> usize {
        self.sequences.first().and_then(|s| s.first()).map_or(1, |f| f.channels())
    }

    pub fn value_range(&self) -> (f64, f64) {
        self.sequences
            .iter()
            .flatten()
            .flat_map(|f| f.values().iter().copied())
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| (a.min(v), b.max(v)))
    }

    /// Checks that every sequence has the same length and every snapshot
    /// lives on the dataset grid.
    pub fn validate(&self) -> Result<()> {
        let len = self.sequences.first().map_or(0, |s| s.len());
        for (i, s) in self.sequences.iter().enumerate() {
            if s.len() != len {
                return Err(Error::config(format!("sequence {i} has {} snapshots, expected {len}", s.len())));
            }
            if s.iter().any(|f| f.grid() != self.grid) {
                return Err(Error::config(format!("sequence {i} contains a snapshot off the dataset grid")));
            }
        }
        Ok(())
    }

    /// Splits off the last `ceil(fraction * n)` sequences as a validation set.
    pub fn split_validation(mut self, fraction: f64) -> Result<(TrajectoryDataset, TrajectoryDataset)> {
        if !(0.0..1.0).contains(&fraction) {
            return Err(Error::config(format!("validation fraction {fraction} not in [0, 1)")));
        }
        let n = self.sequences.len();
        let n_valid = ((fraction * n as f64).ceil() as usize).min(n.saturating_sub(1));
        let valid_seqs = self.sequences.split_off(n - n_valid);
        let valid_seeds = if self.sequence_seeds.len() == n {
            self.sequence_seeds.split_off(n - n_valid)
        } else {
            Vec::new()
        };
        let valid = TrajectoryDataset { sequences: valid_seqs, sequence_seeds: valid_seeds, ..self.clone() };
        Ok((self, valid))
    }

    pub fn manifest(&self) -> DatasetManifest {
        let (lo, hi) = self.value_range();
        DatasetManifest {
            format: "SIVA".into(),
            version: DATASET_VERSION,
            equation: self.equation,
            beta: self.beta,
            dim: self.grid.dim(),
            points: self.grid.points(),
            channels: self.channels(),
            dt: self.dt,
            n_sequences: self.n_sequences(),
            n_steps: self.n_steps(),
            seed: self.seed,
            solver: self.solver,
            initial_condition: self.initial_condition.clone(),
            sequence_seeds: self.sequence_seeds.clone(),
            value_min: lo,
            value_max: hi,
        }
    }

    /// Serializes the binary representation.
    pub fn write_binary(&self, w: &mut impl Write) -> Result<()> {
        self.validate()?;
        w.write_all(DATASET_MAGIC)?;
        write_u32(w, DATASET_VERSION)?;
        write_u32(w, self.equation.code())?;
        write_f64(w, self.beta)?;
        write_u32(w, self.grid.dim() as u32)?;
        write_u32(w, self.grid.points() as u32)?;
        write_u32(w, self.channels() as u32)?;
        write_f64(w, self.dt)?;
        write_u64(w, self.n_sequences() as u64)?;
        write_u64(w, self.n_steps() as u64)?;
        write_u64(w, self.seed)?;
        for f in self.sequences.iter().flatten() {
            write_f64_slice(w, f.values())?;
        }
        Ok(())
    }

    /// Parses the binary representation; generation metadata is left empty.
    pub fn read_binary(r: &mut impl Read) -> Result<Self> {
        read_magic(r, DATASET_MAGIC)?;
        let version = read_u32(r, "version")?;
        if version != DATASET_VERSION {
            return Err(Error::Format(format!("unsupported dataset version {version}")));
        }
        let equation = Equation::from_code(read_u32(r, "equation")?)?;
        let beta = read_f64(r, "beta")?;
        let dim = read_u32(r, "d")? as usize;
        let points = read_u32(r, "p")? as usize;
        let grid = Grid::new(dim, points).map_err(|e| Error::Format(e.to_string()))?;
        let channels = read_u32(r, "channels")? as usize;
        if channels == 0 {
            return Err(Error::Format("dataset declares zero channels".into()));
        }
        let dt = read_f64(r, "dt")?;
        let n_sequences = read_u64(r, "n_sequences")? as usize;
        let n_steps = read_u64(r, "n_steps")? as usize;
        let seed = read_u64(r, "seed")?;
        let per = channels * grid.len();
        let mut sequences = Vec::with_capacity(n_sequences);
        for _ in 0..n_sequences {
            let mut seq = Vec::with_capacity(n_steps + 1);
            for _ in 0..=n_steps {
                let v = read_f64_vec(r, per, "dataset")?;
                seq.push(Field::new(grid, channels, v).map_err(|e| Error::Format(e.to_string()))?);
            }
            sequences.push(seq);
        }
        let mut trailing = [0u8; 1];
        if r.read(&mut trailing)? != 0 {
            return Err(Error::Format("trailing bytes after dataset payload".into()));
        }
        Ok(TrajectoryDataset {
            equation,
            beta,
            grid,
            dt,
            seed,
            sequences,
            solver: None,
            initial_condition: None,
            sequence_seeds: Vec::new(),
        })
    }

    pub fn sidecar_path(path: &Path) -> PathBuf {
        let mut s = path.as_os_str().to_owned();
        s.push(".json");
        PathBuf::from(s)
    }

    /// Writes the binary file and its JSON sidecar.
    pub fn save(&self, path: &Path) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        self.write_binary(&mut w)?;
        w.flush()?;
        let json = serde_json::to_string_pretty(&self.manifest())?;
        std::fs::write(Self::sidecar_path(path), json + "\n")?;
        Ok(())
    }

    /// Reads a dataset, attaching generation metadata from the sidecar
    /// when one is present.
    pub fn load(path: &Path) -> Result<Self> {
        let mut ds = Self::read_binary(&mut BufReader::new(File::open(path)?))?;
        let side = Self::sidecar_path(path);
        if side.exists() {
            let m: DatasetManifest = serde_json::from_slice(&std::fs::read(side)?)?;
            if m.n_sequences != ds.n_sequences() || m.n_steps != ds.n_steps() || m.points != ds.grid.points() {
                return Err(Error::Format("dataset sidecar disagrees with binary header".into()));
            }
            ds.solver = m.solver;
            ds.initial_condition = m.initial_condition;
            ds.sequence_seeds = m.sequence_seeds;
        }
        Ok(ds)
    }
}
