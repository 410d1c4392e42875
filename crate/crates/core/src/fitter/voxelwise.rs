use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::fitter::{FitConfig, FitResult, TacFitter};
use crate::kinetic::{FrameSchedule, InputFunction};
use crate::volume::{DynamicVolume, LabelMap, ParametricVolume, FIT_CHANNELS};

/// How independent per-voxel work is scheduled.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Execution {
    /// Voxels in index order on the calling thread.
    Sequential,
    /// Voxels spread over the current rayon pool.
    #[default]
    Parallel,
}

/// Fits every voxel inside `mask` (all voxels when `None`).
///
/// Output channels are K1, k2, k3, VB and a 0/1 convergence flag. Voxels
/// outside the mask are left at zero.
pub fn fit_voxelwise(
    vol: &DynamicVolume,
    input: &InputFunction,
    schedule: &FrameSchedule,
    cfg: &FitConfig,
    mask: Option<&LabelMap>,
    exec: Execution,
) -> Result<ParametricVolume> {
    vol.check_schedule(schedule)?;
    if let Some(m) = mask {
        m.check_grid(vol.grid())?;
    }
    let fitter = TacFitter::new(input, schedule, cfg)?;
    let voxels: Vec<usize> = match mask {
        Some(m) => m
            .data()
            .iter()
            .enumerate()
            .filter(|(_, &l)| l != 0)
            .map(|(i, _)| i)
            .collect(),
        None => (0..vol.grid().n_voxels()).collect(),
    };

    let fit_one = |&v: &usize| fitter.fit(&vol.tac(v)).map(|r| (v, r));
    let results: Vec<(usize, FitResult)> = match exec {
        Execution::Sequential => voxels.iter().map(fit_one).collect::<Result<_>>()?,
        Execution::Parallel => voxels.par_iter().map(fit_one).collect::<Result<_>>()?,
    };

    let mut out = ParametricVolume::zeros(*vol.grid(), &FIT_CHANNELS);
    for (v, r) in results {
        for (c, p) in r.params.to_array().iter().enumerate() {
            out.set(c, v, *p as f32);
        }
        out.set(4, v, if r.converged { 1.0 } else { 0.0 });
    }
    Ok(out)
}

/// Mean TAC over all voxels carrying `label`.
pub fn mean_tac(vol: &DynamicVolume, mask: &LabelMap, label: u8) -> Result<Vec<f64>> {
    mask.check_grid(vol.grid())?;
    let voxels = mask.voxels_with(label);
    if voxels.is_empty() {
        return Err(Error::EmptyRegion(format!("no voxels carry label {label}")));
    }
    let mut sum = vec![0.0f64; vol.n_frames()];
    for &v in &voxels {
        for (s, x) in sum.iter_mut().zip(vol.tac(v)) {
            *s += x;
        }
    }
    let n = voxels.len() as f64;
    Ok(sum.into_iter().map(|s| s / n).collect())
}

/// Region-of-interest fit: average the TACs in the region, then fit once.
pub fn fit_voi(
    vol: &DynamicVolume,
    mask: &LabelMap,
    label: u8,
    input: &InputFunction,
    schedule: &FrameSchedule,
    cfg: &FitConfig,
) -> Result<FitResult> {
    vol.check_schedule(schedule)?;
    let tac = mean_tac(vol, mask, label)?;
    TacFitter::new(input, schedule, cfg)?.fit(&tac)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kinetic::{model_tac, KineticParams};
    use crate::phantom::InputFunctionModel;
    use crate::volume::Grid;
    use std::collections::BTreeMap;

    fn setup() -> (FrameSchedule, InputFunction, Vec<f64>) {
        let s = FrameSchedule::reference();
        let a = InputFunctionModel::default().sample(&s, 1.0).unwrap();
        let tac = model_tac(&KineticParams::new(0.5, 0.6, 0.03, 0.08), &a, &s)
            .unwrap()
            .into_inner();
        (s, a, tac)
    }

    #[test]
    fn identical_voxels_get_identical_fits() {
        let (s, a, tac) = setup();
        let g = Grid::isotropic([1, 1, 2], 2.5).unwrap();
        let mut vol = DynamicVolume::zeros(g, s.clone());
        vol.set_tac(0, &tac);
        vol.set_tac(1, &tac);
        let seq = fit_voxelwise(&vol, &a, &s, &FitConfig::default(), None, Execution::Sequential).unwrap();
        for c in 0..5 {
            assert_eq!(seq.get(c, 0), seq.get(c, 1));
        }
        assert_eq!(seq.get(4, 0), 1.0);
        let par = fit_voxelwise(&vol, &a, &s, &FitConfig::default(), None, Execution::Parallel).unwrap();
        assert_eq!(seq, par);
    }

    #[test]
    fn mask_restricts_fitting() {
        let (s, a, tac) = setup();
        let g = Grid::isotropic([1, 1, 3], 2.5).unwrap();
        let mut vol = DynamicVolume::zeros(g, s.clone());
        for v in 0..3 {
            vol.set_tac(v, &tac);
        }
        let legend = BTreeMap::from([(4u8, "liver".to_string())]);
        let mask = LabelMap::new(g, legend, vec![4, 0, 4]).unwrap();
        let out = fit_voxelwise(&vol, &a, &s, &FitConfig::default(), Some(&mask), Execution::Sequential)
            .unwrap();
        assert!(out.get(0, 0) > 0.0);
        assert_eq!(out.get(0, 1), 0.0);
        assert_eq!(out.get(4, 1), 0.0);

        let voi = fit_voi(&vol, &mask, 4, &a, &s, &FitConfig::default()).unwrap();
        let single = crate::fitter::fit_tac(&vol.tac(0), &a, &s, &FitConfig::default()).unwrap();
        assert_eq!(voi.params, single.params);
        assert!(matches!(
            fit_voi(&vol, &mask, 9, &a, &s, &FitConfig::default()),
            Err(Error::EmptyRegion(_))
        ));
    }

    #[test]
    fn dimension_mismatch_is_reported() {
        let (s, a, _) = setup();
        let g = Grid::isotropic([1, 1, 2], 2.5).unwrap();
        let vol = DynamicVolume::zeros(g, s.clone());
        let other = Grid::isotropic([1, 2, 2], 2.5).unwrap();
        let mask = LabelMap::new(other, BTreeMap::new(), vec![0; 4]).unwrap();
        assert!(matches!(
            fit_voxelwise(&vol, &a, &s, &FitConfig::default(), Some(&mask), Execution::Sequential),
            Err(Error::DimensionMismatch { .. })
        ));
        let short = FrameSchedule::from_durations(&[10.0; 5]).unwrap();
        assert!(fit_voxelwise(&vol, &a, &short, &FitConfig::default(), None, Execution::Sequential).is_err());
    }
}
