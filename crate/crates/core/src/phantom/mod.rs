//! Synthetic dynamic PET datasets with known ground truth.
//!
//! A phantom is a set of organ regions (boxes and ellipsoids in normalized
//! coordinates) on a voxel grid. Every voxel of a region carries the
//! region's noiseless TAC from the forward model, optionally perturbed
//! frame by frame with seeded, per-voxel noise.

mod input_model;
mod noise;

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fitter::Execution;
use crate::kinetic::{model_tac, FrameSchedule, InputFunction, KineticParams, ParamBounds};
use crate::reference;
use crate::volume::{DynamicVolume, Grid, LabelMap, ParametricVolume, PARAM_CHANNELS};

pub use input_model::{synth_input, InputFunctionModel};
pub use noise::{noise_sigma, NoiseModel};

/// Region geometry in normalized `[x, y, z]` coordinates, each axis
/// spanning `[0, 1]` across the grid. A voxel belongs to a shape when its
/// centre does.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Shape {
    Box { min: [f64; 3], max: [f64; 3] },
    Ellipsoid { center: [f64; 3], radii: [f64; 3] },
}

impl Shape {
    pub fn contains(&self, p: [f64; 3]) -> bool {
        match self {
            Shape::Box { min, max } => (0..3).all(|i| p[i] >= min[i] && p[i] <= max[i]),
            Shape::Ellipsoid { center, radii } => {
                (0..3).map(|i| ((p[i] - center[i]) / radii[i]).powi(2)).sum::<f64>() <= 1.0
            }
        }
    }

    fn validate(&self) -> Result<()> {
        let ok = match self {
            Shape::Box { min, max } => (0..3).all(|i| min[i].is_finite() && max[i].is_finite() && min[i] < max[i]),
            Shape::Ellipsoid { center, radii } => {
                center.iter().all(|c| c.is_finite()) && radii.iter().all(|r| r.is_finite() && *r > 0.0)
            }
        };
        if ok {
            Ok(())
        } else {
            Err(Error::config(format!("degenerate region shape {self:?}")))
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Region {
    pub label: u8,
    pub organ: String,
    pub shape: Shape,
    /// Falls back to the organ's reference preset when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub params: Option<KineticParams>,
}

impl Region {
    pub fn resolved_params(&self) -> Result<KineticParams> {
        match self.params {
            Some(p) => Ok(p),
            None => reference::preset(&self.organ),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PhantomSpec {
    /// Grid extent as `[x, y, z]`.
    #[serde(default = "default_size")]
    pub size_xyz: [usize; 3],
    #[serde(default = "default_spacing")]
    pub spacing_mm: f64,
    #[serde(default = "default_regions")]
    pub regions: Vec<Region>,
    #[serde(default)]
    pub noise: NoiseModel,
    #[serde(default)]
    pub seed: u64,
}

fn default_size() -> [usize; 3] {
    [64, 64, 32]
}

fn default_spacing() -> f64 {
    2.5
}

fn region(organ: &str, shape: Shape) -> Region {
    Region {
        label: reference::organ_label(organ).expect("known organ"),
        organ: organ.to_string(),
        shape,
        params: None,
    }
}

fn ellipsoid(center: [f64; 3], radii: [f64; 3]) -> Shape {
    Shape::Ellipsoid { center, radii }
}

/// A crude torso: lungs and heart above, liver, spleen and kidneys below,
/// with the aorta and spine running the full axial length so every slice
/// holds labelled tissue.
pub fn default_regions() -> Vec<Region> {
    vec![
        region("lungs", ellipsoid([0.28, 0.45, 0.78], [0.12, 0.18, 0.20])),
        region("lungs", ellipsoid([0.72, 0.45, 0.78], [0.12, 0.18, 0.20])),
        region("heart", ellipsoid([0.50, 0.35, 0.70], [0.08, 0.10, 0.10])),
        region("aorta", Shape::Box { min: [0.47, 0.55, 0.0], max: [0.53, 0.62, 1.0] }),
        region("bones", Shape::Box { min: [0.45, 0.68, 0.0], max: [0.55, 0.80, 1.0] }),
        region("liver", ellipsoid([0.32, 0.45, 0.38], [0.17, 0.20, 0.12])),
        region("spleen", ellipsoid([0.74, 0.50, 0.40], [0.08, 0.10, 0.08])),
        region("kidneys", ellipsoid([0.36, 0.72, 0.22], [0.06, 0.07, 0.10])),
        region("kidneys", ellipsoid([0.64, 0.72, 0.22], [0.06, 0.07, 0.10])),
    ]
}

impl Default for PhantomSpec {
    fn default() -> Self {
        Self {
            size_xyz: default_size(),
            spacing_mm: default_spacing(),
            regions: default_regions(),
            noise: NoiseModel::default(),
            seed: 0,
        }
    }
}

impl PhantomSpec {
    pub fn grid(&self) -> Result<Grid> {
        let [x, y, z] = self.size_xyz;
        Grid::isotropic([z, y, x], self.spacing_mm)
    }

    /// Checks shapes, labels and presets, returning one preset per label.
    pub fn validate(&self) -> Result<BTreeMap<u8, (String, KineticParams)>> {
        self.grid()?;
        self.noise.validate()?;
        if self.regions.is_empty() {
            return Err(Error::config("phantom has no regions"));
        }
        let bounds = ParamBounds::multi_clamp();
        let mut presets: BTreeMap<u8, (String, KineticParams)> = BTreeMap::new();
        for r in &self.regions {
            if r.label == 0 {
                return Err(Error::config(format!("region '{}' uses the background label 0", r.organ)));
            }
            r.shape.validate()?;
            let p = r.resolved_params()?;
            if !bounds.contains(&p) {
                return Err(Error::config(format!(
                    "preset for '{}' {p:?} lies outside the valid parameter box",
                    r.organ
                )));
            }
            match presets.get(&r.label) {
                Some((organ, q)) if *q != p || *organ != r.organ => {
                    return Err(Error::config(format!(
                        "label {} is used by regions with different organs or parameters",
                        r.label
                    )))
                }
                _ => {
                    presets.insert(r.label, (r.organ.clone(), p));
                }
            }
        }
        Ok(presets)
    }

    /// Label of every voxel; regions of different labels must not share a voxel.
    pub fn rasterize(&self) -> Result<LabelMap> {
        let presets = self.validate()?;
        let grid = self.grid()?;
        let [nz, ny, nx] = grid.dims;
        let mut data = vec![0u8; grid.n_voxels()];
        for z in 0..nz {
            for y in 0..ny {
                for x in 0..nx {
                    let p = [
                        (x as f64 + 0.5) / nx as f64,
                        (y as f64 + 0.5) / ny as f64,
                        (z as f64 + 0.5) / nz as f64,
                    ];
                    let v = grid.index(z, y, x);
                    for r in self.regions.iter().filter(|r| r.shape.contains(p)) {
                        if data[v] != 0 && data[v] != r.label {
                            return Err(Error::OverlappingRegions {
                                z,
                                y,
                                x,
                                first: data[v],
                                second: r.label,
                            });
                        }
                        data[v] = r.label;
                    }
                }
            }
        }
        let legend = presets.into_iter().map(|(l, (organ, _))| (l, organ)).collect();
        LabelMap::new(grid, legend, data)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Phantom {
    pub volume: DynamicVolume,
    pub labels: LabelMap,
    /// K1, k2, k3 and VB per voxel; zero outside every region.
    pub truth: ParametricVolume,
}

pub fn build_phantom(spec: &PhantomSpec, input: &InputFunction, schedule: &FrameSchedule) -> Result<Phantom> {
    build_phantom_with(spec, input, schedule, Execution::Parallel)
}

/// As [`build_phantom`]; each voxel's noise comes from its own stream of
/// the seed, so the result does not depend on `exec`.
pub fn build_phantom_with(
    spec: &PhantomSpec,
    input: &InputFunction,
    schedule: &FrameSchedule,
    exec: Execution,
) -> Result<Phantom> {
    let presets = spec.validate()?;
    let labels = spec.rasterize()?;
    let grid = *labels.grid();
    let mut clean: BTreeMap<u8, Vec<f64>> = BTreeMap::new();
    for (&l, (_, p)) in &presets {
        clean.insert(l, model_tac(p, input, schedule)?.into_inner());
    }
    let durations = schedule.durations_s();

    let voxels: Vec<usize> = (0..grid.n_voxels()).filter(|&v| labels.data()[v] != 0).collect();
    let noisy = |&v: &usize| -> Vec<f64> {
        let mean = &clean[&labels.data()[v]];
        spec.noise.apply(mean, &durations, spec.seed, v as u64)
    };
    let tacs: Vec<Vec<f64>> = match exec {
        Execution::Sequential => voxels.iter().map(noisy).collect(),
        Execution::Parallel => voxels.par_iter().map(noisy).collect(),
    };

    let mut volume = DynamicVolume::zeros(grid, schedule.clone());
    let mut truth = ParametricVolume::zeros(grid, &PARAM_CHANNELS);
    for (&v, tac) in voxels.iter().zip(&tacs) {
        volume.set_tac(v, tac);
        let p = presets[&labels.data()[v]].1.to_array();
        for (c, value) in p.iter().enumerate() {
            truth.set(c, v, *value as f32);
        }
    }
    Ok(Phantom { volume, labels, truth })
}
