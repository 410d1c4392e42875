//! In-memory volume containers. Arrays are row-major with x fastest.

use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::kinetic::FrameSchedule;

pub const FIT_CHANNELS: [&str; 5] = ["K1", "k2", "k3", "VB", "converged"];
pub const PARAM_CHANNELS: [&str; 4] = ["K1", "k2", "k3", "VB"];

/// Spatial grid shared by all volume kinds: `[z, y, x]` extents and
/// spacing in millimetres.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Grid {
    pub dims: [usize; 3],
    pub spacing_mm: [f64; 3],
}

impl Grid {
    pub fn new(dims: [usize; 3], spacing_mm: [f64; 3]) -> Result<Self> {
        if dims.contains(&0) {
            return Err(Error::domain(format!("grid dims {dims:?} contain a zero extent")));
        }
        if spacing_mm.iter().any(|s| !(*s > 0.0) || !s.is_finite()) {
            return Err(Error::domain(format!("spacing {spacing_mm:?} must be positive")));
        }
        Ok(Self { dims, spacing_mm })
    }

    pub fn isotropic(dims: [usize; 3], spacing_mm: f64) -> Result<Self> {
        Self::new(dims, [spacing_mm; 3])
    }

    pub fn n_voxels(&self) -> usize {
        self.dims.iter().product()
    }

    pub fn slice_len(&self) -> usize {
        self.dims[1] * self.dims[2]
    }

    pub fn index(&self, z: usize, y: usize, x: usize) -> usize {
        (z * self.dims[1] + y) * self.dims[2] + x
    }

    pub fn coords(&self, i: usize) -> (usize, usize, usize) {
        let x = i % self.dims[2];
        let y = (i / self.dims[2]) % self.dims[1];
        (i / self.slice_len(), y, x)
    }

    fn check_same(&self, other: &Grid, what: &'static str) -> Result<()> {
        if self.dims != other.dims {
            return Err(Error::DimensionMismatch {
                what,
                expected: format!("{:?}", self.dims),
                actual: format!("{:?}", other.dims),
            });
        }
        Ok(())
    }
}

/// 4D frame stack `[T, Z, Y, X]` of activity concentration (Bq/ml).
#[derive(Debug, Clone, PartialEq)]
pub struct DynamicVolume {
    grid: Grid,
    schedule: FrameSchedule,
    data: Vec<f32>,
}

impl DynamicVolume {
    pub fn new(grid: Grid, schedule: FrameSchedule, data: Vec<f32>) -> Result<Self> {
        let expected = schedule.len() * grid.n_voxels();
        if data.len() != expected {
            return Err(Error::DimensionMismatch {
                what: "dynamic volume data length",
                expected: expected.to_string(),
                actual: data.len().to_string(),
            });
        }
        Ok(Self {
            grid,
            schedule,
            data,
        })
    }

    pub fn zeros(grid: Grid, schedule: FrameSchedule) -> Self {
        let n = schedule.len() * grid.n_voxels();
        Self {
            grid,
            schedule,
            data: vec![0.0; n],
        }
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn schedule(&self) -> &FrameSchedule {
        &self.schedule
    }

    pub fn n_frames(&self) -> usize {
        self.schedule.len()
    }

    /// `[T, Z, Y, X]`
    pub fn dims(&self) -> [usize; 4] {
        let [z, y, x] = self.grid.dims;
        [self.n_frames(), z, y, x]
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    pub fn tac(&self, voxel: usize) -> Vec<f64> {
        let stride = self.grid.n_voxels();
        (0..self.n_frames())
            .map(|t| self.data[t * stride + voxel] as f64)
            .collect()
    }

    pub fn set_tac(&mut self, voxel: usize, values: &[f64]) {
        let stride = self.grid.n_voxels();
        for (t, v) in values.iter().enumerate() {
            self.data[t * stride + voxel] = *v as f32;
        }
    }

    /// Checks that the volume's frames match `schedule`.
    pub fn check_schedule(&self, schedule: &FrameSchedule) -> Result<()> {
        if self.schedule.len() != schedule.len() {
            return Err(Error::DimensionMismatch {
                what: "volume frame count vs schedule",
                expected: schedule.len().to_string(),
                actual: self.schedule.len().to_string(),
            });
        }
        Ok(())
    }
}

/// Organ label map `[Z, Y, X]`; 0 is background.
#[derive(Debug, Clone, PartialEq)]
pub struct LabelMap {
    grid: Grid,
    legend: BTreeMap<u8, String>,
    data: Vec<u8>,
}

impl LabelMap {
    pub fn new(grid: Grid, legend: BTreeMap<u8, String>, data: Vec<u8>) -> Result<Self> {
        if data.len() != grid.n_voxels() {
            return Err(Error::DimensionMismatch {
                what: "label map data length",
                expected: grid.n_voxels().to_string(),
                actual: data.len().to_string(),
            });
        }
        if let Some(l) = data.iter().find(|&&l| l != 0 && !legend.contains_key(&l)) {
            return Err(Error::domain(format!("label {l} has no legend entry")));
        }
        Ok(Self { grid, legend, data })
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn legend(&self) -> &BTreeMap<u8, String> {
        &self.legend
    }

    pub fn data(&self) -> &[u8] {
        &self.data
    }

    pub fn name(&self, label: u8) -> Option<&str> {
        self.legend.get(&label).map(String::as_str)
    }

    /// Label ids present in the map, ascending, background excluded.
    pub fn present_labels(&self) -> Vec<u8> {
        let mut seen = [false; 256];
        for &l in &self.data {
            seen[l as usize] = true;
        }
        (1..=255u8).filter(|&l| seen[l as usize]).collect()
    }

    pub fn voxels_with(&self, label: u8) -> Vec<usize> {
        self.data
            .iter()
            .enumerate()
            .filter(|(_, &l)| l == label)
            .map(|(i, _)| i)
            .collect()
    }

    pub fn check_grid(&self, grid: &Grid) -> Result<()> {
        grid.check_same(&self.grid, "label map vs volume dims")
    }
}

/// Channel stack `[C, Z, Y, X]` of per-voxel parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct ParametricVolume {
    grid: Grid,
    channels: Vec<String>,
    data: Vec<f32>,
}

impl ParametricVolume {
    pub fn new(grid: Grid, channels: Vec<String>, data: Vec<f32>) -> Result<Self> {
        if channels.is_empty() {
            return Err(Error::domain("parametric volume needs at least one channel"));
        }
        let expected = channels.len() * grid.n_voxels();
        if data.len() != expected {
            return Err(Error::DimensionMismatch {
                what: "parametric volume data length",
                expected: expected.to_string(),
                actual: data.len().to_string(),
            });
        }
        Ok(Self {
            grid,
            channels,
            data,
        })
    }

    pub fn zeros(grid: Grid, channels: &[&str]) -> Self {
        let n = channels.len() * grid.n_voxels();
        Self {
            grid,
            channels: channels.iter().map(|c| c.to_string()).collect(),
            data: vec![0.0; n],
        }
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn channels(&self) -> &[String] {
        &self.channels
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn channel_index(&self, name: &str) -> Option<usize> {
        self.channels.iter().position(|c| c == name)
    }

    pub fn channel(&self, c: usize) -> &[f32] {
        let n = self.grid.n_voxels();
        &self.data[c * n..(c + 1) * n]
    }

    pub fn channel_mut(&mut self, c: usize) -> &mut [f32] {
        let n = self.grid.n_voxels();
        &mut self.data[c * n..(c + 1) * n]
    }

    pub fn get(&self, c: usize, voxel: usize) -> f32 {
        self.data[c * self.grid.n_voxels() + voxel]
    }

    pub fn set(&mut self, c: usize, voxel: usize, v: f32) {
        let n = self.grid.n_voxels();
        self.data[c * n + voxel] = v;
    }

    /// Resolves the four kinetic channels by name.
    pub fn kinetic_channels(&self) -> Result<[usize; 4]> {
        let mut idx = [0; 4];
        for (slot, name) in idx.iter_mut().zip(PARAM_CHANNELS) {
            *slot = self
                .channel_index(name)
                .ok_or_else(|| Error::domain(format!("parametric volume lacks channel {name}")))?;
        }
        Ok(idx)
    }

    pub fn check_grid(&self, grid: &Grid) -> Result<()> {
        grid.check_same(&self.grid, "parametric volume vs volume dims")
    }
}
