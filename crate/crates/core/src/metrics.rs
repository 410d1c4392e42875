//! TAC fidelity, parameter errors and organ/slice summaries.

use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fitter::Execution;
use crate::kinetic::{FrameSchedule, InputFunction, KineticParams, ModelOptions, TacModel, PARAM_NAMES};
use crate::reference::ReferenceTable;
use crate::volume::{DynamicVolume, LabelMap, ParametricVolume};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TacMetrics {
    pub mse: f64,
    pub mae: f64,
    pub cosine_similarity: f64,
}

pub fn cosine_similarity(a: &[f64], b: &[f64]) -> Result<f64> {
    check_len(a, b)?;
    let na = a.iter().map(|v| v * v).sum::<f64>().sqrt();
    let nb = b.iter().map(|v| v * v).sum::<f64>().sqrt();
    if na == 0.0 {
        return Err(Error::UndefinedCosine("measured"));
    }
    if nb == 0.0 {
        return Err(Error::UndefinedCosine("modeled"));
    }
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    Ok((dot / (na * nb)).clamp(-1.0, 1.0))
}

pub fn tac_metrics(measured: &[f64], modeled: &[f64]) -> Result<TacMetrics> {
    check_len(measured, modeled)?;
    if measured.is_empty() {
        return Err(Error::domain("metrics of empty curves"));
    }
    let n = measured.len() as f64;
    let mse = measured.iter().zip(modeled).map(|(a, b)| (a - b).powi(2)).sum::<f64>() / n;
    let mae = measured.iter().zip(modeled).map(|(a, b)| (a - b).abs()).sum::<f64>() / n;
    Ok(TacMetrics {
        mse,
        mae,
        cosine_similarity: cosine_similarity(measured, modeled)?,
    })
}

fn check_len(a: &[f64], b: &[f64]) -> Result<()> {
    if a.len() != b.len() {
        return Err(Error::DimensionMismatch {
            what: "curve lengths",
            expected: a.len().to_string(),
            actual: b.len().to_string(),
        });
    }
    Ok(())
}

/// Rebuilds model TACs from a parametric volume. Unlike `model_tac`, a
/// fitted `k2 + k3 = 0` is accepted as the pure-uptake limit.
pub struct Reconstructor {
    model: TacModel,
    channels: [usize; 4],
}

impl Reconstructor {
    pub fn new(pv: &ParametricVolume, input: &InputFunction, schedule: &FrameSchedule) -> Result<Self> {
        Ok(Self {
            model: TacModel::for_schedule(input, schedule, &ModelOptions::default())?,
            channels: pv.kinetic_channels()?,
        })
    }

    pub fn params(&self, pv: &ParametricVolume, voxel: usize) -> KineticParams {
        KineticParams::from_array(self.channels.map(|c| pv.get(c, voxel) as f64))
    }

    pub fn tac(&self, pv: &ParametricVolume, voxel: usize) -> Vec<f64> {
        let mut out = vec![0.0; self.model.n_frames()];
        self.model.evaluate(&self.params(pv, voxel), &mut out);
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OrganRow {
    pub label: u8,
    pub organ: String,
    pub voxels: usize,
    /// Per channel of the parametric volume.
    pub mean: Vec<f64>,
    /// Population standard deviation per channel.
    pub std: Vec<f64>,
    /// Voxel-averaged fidelity of the reconstructed TACs, when requested.
    pub tac: Option<TacMetrics>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OrganReport {
    pub channels: Vec<String>,
    pub rows: Vec<OrganRow>,
}

impl OrganReport {
    pub fn row(&self, label: u8) -> Option<&OrganRow> {
        self.rows.iter().find(|r| r.label == label)
    }

    /// Organ mean of a named channel.
    pub fn mean_of(&self, label: u8, channel: &str) -> Option<f64> {
        let c = self.channels.iter().position(|n| n == channel)?;
        self.row(label).map(|r| r.mean[c])
    }
}

/// Mean and standard deviation of every channel over each labelled organ.
pub fn organ_aggregate(pv: &ParametricVolume, mask: &LabelMap) -> Result<OrganReport> {
    organ_aggregate_labels(pv, mask, &mask.present_labels())
}

pub fn organ_aggregate_labels(pv: &ParametricVolume, mask: &LabelMap, labels: &[u8]) -> Result<OrganReport> {
    pv.check_grid(mask.grid())?;
    let mut rows = Vec::with_capacity(labels.len());
    for &label in labels {
        let voxels = mask.voxels_with(label);
        if voxels.is_empty() {
            return Err(Error::LabelAbsent(label));
        }
        let n = voxels.len() as f64;
        let (mut mean, mut std) = (Vec::new(), Vec::new());
        for c in 0..pv.channels().len() {
            let ch = pv.channel(c);
            let m = voxels.iter().map(|&v| ch[v] as f64).sum::<f64>() / n;
            let var = voxels.iter().map(|&v| (ch[v] as f64 - m).powi(2)).sum::<f64>() / n;
            mean.push(m);
            std.push(var.sqrt());
        }
        rows.push(OrganRow {
            label,
            organ: mask.name(label).unwrap_or("").to_string(),
            voxels: voxels.len(),
            mean,
            std,
            tac: None,
        });
    }
    Ok(OrganReport {
        channels: pv.channels().to_vec(),
        rows,
    })
}

/// Fills each row's TAC metrics with the voxel average of the metrics
/// between measured and reconstructed TACs.
pub fn add_tac_metrics(
    report: &mut OrganReport,
    vol: &DynamicVolume,
    pv: &ParametricVolume,
    mask: &LabelMap,
    input: &InputFunction,
    schedule: &FrameSchedule,
) -> Result<()> {
    vol.check_schedule(schedule)?;
    pv.check_grid(vol.grid())?;
    let rec = Reconstructor::new(pv, input, schedule)?;
    for row in &mut report.rows {
        let voxels = mask.voxels_with(row.label);
        let ms = voxels
            .iter()
            .map(|&v| tac_metrics(&vol.tac(v), &rec.tac(pv, v)))
            .collect::<Result<Vec<_>>>()?;
        let n = ms.len() as f64;
        row.tac = Some(TacMetrics {
            mse: ms.iter().map(|m| m.mse).sum::<f64>() / n,
            mae: ms.iter().map(|m| m.mae).sum::<f64>() / n,
            cosine_similarity: ms.iter().map(|m| m.cosine_similarity).sum::<f64>() / n,
        });
    }
    Ok(())
}

/// How voxel TACs of a slice are combined into one cosine similarity.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CsPooling {
    /// Mean of per-voxel CS values.
    #[default]
    VoxelMean,
    /// CS of the slice's concatenated TACs.
    Pooled,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SliceCs {
    pub z: usize,
    pub voxels: usize,
    pub cosine_similarity: f64,
}

/// Cosine similarity between measured and reconstructed TACs for each
/// axial slice. Voxels are those with a nonzero label in `mask`, or with a
/// nonzero measured TAC when no mask is given; a slice without any is an
/// error.
pub fn per_slice_cs(
    vol: &DynamicVolume,
    pv: &ParametricVolume,
    input: &InputFunction,
    schedule: &FrameSchedule,
    mask: Option<&LabelMap>,
    pooling: CsPooling,
    exec: Execution,
) -> Result<Vec<SliceCs>> {
    vol.check_schedule(schedule)?;
    pv.check_grid(vol.grid())?;
    if let Some(m) = mask {
        m.check_grid(vol.grid())?;
    }
    let rec = Reconstructor::new(pv, input, schedule)?;
    let grid = *vol.grid();
    let per_slice = grid.slice_len();

    let slice = |z: usize| -> Result<SliceCs> {
        let voxels: Vec<usize> = (z * per_slice..(z + 1) * per_slice)
            .filter(|&v| match mask {
                Some(m) => m.data()[v] != 0,
                None => vol.tac(v).iter().any(|&x| x != 0.0),
            })
            .collect();
        if voxels.is_empty() {
            return Err(Error::EmptyRegion(format!("axial slice {z} has no voxels to score")));
        }
        let cs = match pooling {
            CsPooling::VoxelMean => {
                let mut sum = 0.0;
                for &v in &voxels {
                    sum += cosine_similarity(&vol.tac(v), &rec.tac(pv, v))?;
                }
                sum / voxels.len() as f64
            }
            CsPooling::Pooled => {
                let mut measured = Vec::new();
                let mut modeled = Vec::new();
                for &v in &voxels {
                    measured.extend(vol.tac(v));
                    modeled.extend(rec.tac(pv, v));
                }
                cosine_similarity(&measured, &modeled)?
            }
        };
        Ok(SliceCs {
            z,
            voxels: voxels.len(),
            cosine_similarity: cs,
        })
    };
    match exec {
        Execution::Sequential => (0..grid.dims[0]).map(slice).collect(),
        Execution::Parallel => (0..grid.dims[0]).into_par_iter().map(slice).collect(),
    }
}

/// Fitted versus true parameters for one organ.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ParamErrorRow {
    pub label: u8,
    pub organ: String,
    pub voxels: usize,
    pub truth_mean: [f64; 4],
    pub fit_mean: [f64; 4],
    /// `fit_mean / truth_mean - 1`.
    pub relative_bias: [f64; 4],
    /// Median over voxels of `|fit / truth - 1|`.
    pub median_abs_relative_error: [f64; 4],
}

pub fn param_errors(fit: &ParametricVolume, truth: &ParametricVolume, mask: &LabelMap) -> Result<Vec<ParamErrorRow>> {
    fit.check_grid(mask.grid())?;
    truth.check_grid(mask.grid())?;
    let fc = fit.kinetic_channels()?;
    let tc = truth.kinetic_channels()?;
    let mut rows = Vec::new();
    for label in mask.present_labels() {
        let voxels = mask.voxels_with(label);
        let n = voxels.len() as f64;
        let mut row = ParamErrorRow {
            label,
            organ: mask.name(label).unwrap_or("").to_string(),
            voxels: voxels.len(),
            truth_mean: [0.0; 4],
            fit_mean: [0.0; 4],
            relative_bias: [0.0; 4],
            median_abs_relative_error: [0.0; 4],
        };
        for p in 0..4 {
            let f: Vec<f64> = voxels.iter().map(|&v| fit.get(fc[p], v) as f64).collect();
            let t: Vec<f64> = voxels.iter().map(|&v| truth.get(tc[p], v) as f64).collect();
            row.fit_mean[p] = f.iter().sum::<f64>() / n;
            row.truth_mean[p] = t.iter().sum::<f64>() / n;
            row.relative_bias[p] = relative(row.fit_mean[p], row.truth_mean[p]);
            let mut errs: Vec<f64> = f.iter().zip(&t).map(|(&a, &b)| relative(a, b).abs()).collect();
            row.median_abs_relative_error[p] = median(&mut errs);
        }
        rows.push(row);
    }
    Ok(rows)
}

fn relative(value: f64, truth: f64) -> f64 {
    if truth == 0.0 {
        if value == 0.0 {
            0.0
        } else {
            f64::INFINITY
        }
    } else {
        value / truth - 1.0
    }
}

/// Median of a non-empty slice (mean of the middle pair for even length).
pub fn median(values: &mut [f64]) -> f64 {
    values.sort_by(f64::total_cmp);
    let n = values.len();
    if n == 0 {
        return f64::NAN;
    }
    if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    }
}

/// One organ-parameter comparison against a reference table.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AgreementRow {
    pub organ: String,
    pub parameter: &'static str,
    pub measured: f64,
    pub reference: f64,
    pub relative_difference: f64,
    pub agrees: bool,
}

/// Compares organ means with a reference table. Organs missing from the
/// table are skipped; `threshold` is the largest tolerated relative
/// difference.
pub fn reference_agreement(report: &OrganReport, table: &ReferenceTable, threshold: f64) -> Vec<AgreementRow> {
    let mut out = Vec::new();
    for row in &report.rows {
        let Some(r) = table.get(&row.organ) else { continue };
        for (p, name) in PARAM_NAMES.iter().enumerate() {
            let Some(measured) = report.mean_of(row.label, name) else { continue };
            let reference = r.mean.to_array()[p];
            let d = relative(measured, reference);
            out.push(AgreementRow {
                organ: row.organ.clone(),
                parameter: name,
                measured,
                reference,
                relative_difference: d,
                agrees: d.abs() <= threshold,
            });
        }
    }
    out
}

pub const TAC_METRICS_HEADER: [&str; 4] = ["scope", "mse", "mae", "cosine_similarity"];

/// Writes `scope,mse,mae,cosine_similarity` rows, the schema shared by every
/// producer of TAC fidelity numbers.
pub fn write_tac_metrics_csv<W: Write>(w: W, rows: &[(String, TacMetrics)]) -> Result<()> {
    let mut wr = csv::Writer::from_writer(w);
    wr.write_record(TAC_METRICS_HEADER)?;
    for (scope, m) in rows {
        wr.write_record([scope.clone(), m.mse.to_string(), m.mae.to_string(), m.cosine_similarity.to_string()])?;
    }
    wr.flush().map_err(csv::Error::from)?;
    Ok(())
}

/// `label,organ,voxels,<ch>_mean,<ch>_std...` plus `mse,mae,cosine_similarity`
/// when TAC metrics were added.
pub fn write_organ_report_csv<W: Write>(w: W, report: &OrganReport) -> Result<()> {
    let with_tac = report.rows.iter().any(|r| r.tac.is_some());
    let mut wr = csv::Writer::from_writer(w);
    let mut header = vec!["label".to_string(), "organ".into(), "voxels".into()];
    for c in &report.channels {
        header.push(format!("{c}_mean"));
        header.push(format!("{c}_std"));
    }
    if with_tac {
        header.extend(["mse".into(), "mae".into(), "cosine_similarity".into()]);
    }
    wr.write_record(&header)?;
    for r in &report.rows {
        let mut rec = vec![r.label.to_string(), r.organ.clone(), r.voxels.to_string()];
        for (m, s) in r.mean.iter().zip(&r.std) {
            rec.push(m.to_string());
            rec.push(s.to_string());
        }
        if with_tac {
            let t = r.tac.unwrap_or(TacMetrics { mse: f64::NAN, mae: f64::NAN, cosine_similarity: f64::NAN });
            rec.extend([t.mse.to_string(), t.mae.to_string(), t.cosine_similarity.to_string()]);
        }
        wr.write_record(&rec)?;
    }
    wr.flush().map_err(csv::Error::from)?;
    Ok(())
}

pub fn write_slice_cs_csv<W: Write>(w: W, rows: &[SliceCs]) -> Result<()> {
    let mut wr = csv::Writer::from_writer(w);
    for r in rows {
        wr.serialize(r)?;
    }
    wr.flush().map_err(csv::Error::from)?;
    Ok(())
}

pub fn write_param_errors_csv<W: Write>(w: W, rows: &[ParamErrorRow]) -> Result<()> {
    let mut wr = csv::Writer::from_writer(w);
    let mut header = vec!["label".to_string(), "organ".into(), "voxels".into()];
    for name in PARAM_NAMES {
        for what in ["true", "fit_mean", "bias", "median_abs_rel_error"] {
            header.push(format!("{name}_{what}"));
        }
    }
    wr.write_record(&header)?;
    for r in rows {
        let mut rec = vec![r.label.to_string(), r.organ.clone(), r.voxels.to_string()];
        for p in 0..4 {
            rec.extend([
                r.truth_mean[p].to_string(),
                r.fit_mean[p].to_string(),
                r.relative_bias[p].to_string(),
                r.median_abs_relative_error[p].to_string(),
            ]);
        }
        wr.write_record(&rec)?;
    }
    wr.flush().map_err(csv::Error::from)?;
    Ok(())
}

pub fn write_agreement_csv<W: Write>(w: W, rows: &[AgreementRow]) -> Result<()> {
    let mut wr = csv::Writer::from_writer(w);
    for r in rows {
        wr.serialize(r)?;
    }
    wr.flush().map_err(csv::Error::from)?;
    Ok(())
}
