use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{bail, Context, Result};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use pbpk_core::fitter::{self, fit_voi, fit_voxelwise, mean_tac, Execution, FitResult, PatlakResult, TacFitter};
use pbpk_core::io::{self, FrameCurve, ParityCase};
use pbpk_core::kinetic::{macro_ki, model_tac_with, FrameSchedule, InputFunction, KineticParams, ParamBounds, PARAM_NAMES};
use pbpk_core::metrics::{self, CsPooling, TacMetrics};
use pbpk_core::phantom::{build_phantom, synth_input};
use pbpk_core::reference::{self, ReferenceTable};
use pbpk_core::volume::{DynamicVolume, LabelMap, ParametricVolume};

use crate::config::Config;
use crate::dataset::{self, Dataset};
use crate::{EvalArgs, ExportArgs, FitArgs, PatlakArgs, PoolingChoice, ReferenceChoice, SimulateArgs, TacgenArgs};

const IDIF_STEP_S: f64 = 1.0;

pub fn simulate(a: SimulateArgs) -> Result<()> {
    let cfg = Config::load(a.config.as_deref())?;
    let mut spec = cfg.phantom.clone();
    if let Some(seed) = a.seed {
        spec.seed = seed;
    }
    let schedule = cfg.schedule()?;
    cfg.input.validate().context("invalid [input] model")?;
    // the dataset's own curve drives the phantom, so reading it back
    // reproduces the exact input
    let idif = io::fine_curve(|t| cfg.input.eval(t), IDIF_STEP_S, schedule.end_time_s())?;
    let input = idif.to_input()?;

    let t0 = Instant::now();
    let ph = build_phantom(&spec, &input, &schedule)?;
    fs::create_dir_all(&a.out).with_context(|| format!("cannot create {}", a.out.display()))?;
    let ds = Dataset::open(&a.out)?;
    io::write_dynamic(&ds.volume_path(dataset::PET), &ph.volume)?;
    io::write_labels(&ds.volume_path(dataset::LABELS), &ph.labels)?;
    io::write_parametric(&ds.volume_path(dataset::TRUTH), &ph.truth)?;
    io::write_curve_file(&a.out.join(dataset::IDIF), &idif)?;
    let [z, y, x] = ph.volume.grid().dims;
    eprintln!(
        "simulated {x}x{y}x{z} voxels, {} frames, {} labelled, seed {} in {:.1} s -> {}",
        schedule.len(),
        ph.labels.data().iter().filter(|&&l| l != 0).count(),
        spec.seed,
        t0.elapsed().as_secs_f64(),
        a.out.display()
    );
    Ok(())
}

pub fn tacgen(a: TacgenArgs) -> Result<()> {
    let cfg = Config::load(a.config.as_deref())?;
    let params = match (&a.organ, &a.params) {
        (Some(organ), _) => reference::preset(organ)?,
        (None, Some(v)) => KineticParams::from_array(*v),
        (None, None) => unreachable!("clap requires one of --organ and --params"),
    };
    let schedule = cfg.schedule()?;
    let input = match &a.idif {
        Some(p) => dataset::read_input(p)?,
        None => synth_input(&cfg.input, &schedule)?,
    };
    let mut opts = pbpk_core::kinetic::ModelOptions::default();
    if let Some(s) = a.fine_step_s.or(cfg.fit.fine_step_s) {
        opts.fine_step_s = s;
    }
    let tac = model_tac_with(&params, &input, &schedule, &opts)?;
    let curve = FrameCurve::from_schedule(&schedule, tac.into_inner())?;
    match &a.out {
        Some(p) => io::write_curve_file(p, &curve)?,
        None => io::write_curve(std::io::stdout().lock(), &curve)?,
    }
    Ok(())
}

/// A label given as an id or an organ name.
fn resolve_label(spec: &str, mask: &LabelMap) -> Result<u8> {
    let label = match spec.parse::<u8>() {
        Ok(l) => l,
        Err(_) => mask
            .legend()
            .iter()
            .find(|(_, n)| n.eq_ignore_ascii_case(spec))
            .map(|(l, _)| *l)
            .or_else(|| reference::organ_label(spec))
            .with_context(|| format!("unknown region {spec:?}; the label map has {:?}", mask.legend()))?,
    };
    if label == 0 || mask.voxels_with(label).is_empty() {
        bail!("label {label} does not occur in the label map (present: {:?})", mask.present_labels());
    }
    Ok(label)
}

fn mask_for(ds: &Dataset, all_voxels: bool) -> Result<Option<LabelMap>> {
    if all_voxels {
        Ok(None)
    } else {
        ds.labels()
    }
}

fn open_output(path: Option<&Path>) -> Result<Box<dyn Write>> {
    Ok(match path {
        Some(p) => Box::new(fs::File::create(p).with_context(|| format!("cannot create {}", p.display()))?),
        None => Box::new(std::io::stdout().lock()),
    })
}

pub fn fit(a: FitArgs) -> Result<()> {
    let cfg = Config::load(a.config.as_deref())?.fit_config(a.bounds, a.fine_step_s)?;
    let ds = Dataset::open(&a.dataset)?;
    let vol = ds.pet()?;
    let input = ds.input(a.idif.as_deref())?;
    let schedule = vol.schedule().clone();

    if let Some(voi) = &a.voi {
        let mask = ds.require_labels()?;
        let label = resolve_label(voi, &mask)?;
        let r = fit_voi(&vol, &mask, label, &input, &schedule, &cfg)?;
        let mut w = csv::Writer::from_writer(open_output(a.out.as_deref())?);
        w.write_record([
            "label", "organ", "voxels", "K1", "k2", "k3", "VB", "Ki", "converged", "termination", "final_cost", "iterations",
        ])?;
        w.write_record(voi_fit_record(&r, label, &mask))?;
        w.flush()?;
        return Ok(());
    }

    let mask = mask_for(&ds, a.all_voxels)?;
    let t0 = Instant::now();
    let pv = fit_voxelwise(&vol, &input, &schedule, &cfg, mask.as_ref(), Execution::Parallel)?;
    let n = mask.as_ref().map_or(vol.grid().n_voxels(), |m| m.data().iter().filter(|&&l| l != 0).count());
    let converged = pv.channel(4).iter().filter(|&&c| c == 1.0).count();
    let out = a.out.unwrap_or_else(|| ds.volume_path(dataset::FIT));
    io::write_parametric(&out, &pv)?;
    eprintln!(
        "fitted {n} voxels ({converged} converged) in {:.1} s -> {}",
        t0.elapsed().as_secs_f64(),
        out.display()
    );
    Ok(())
}

fn voi_fit_record(r: &FitResult, label: u8, mask: &LabelMap) -> Vec<String> {
    let p = r.params;
    let ki = macro_ki(&p).map_or(f64::NAN, |v| v);
    vec![
        label.to_string(),
        mask.name(label).unwrap_or("").to_string(),
        mask.voxels_with(label).len().to_string(),
        p.k1.to_string(),
        p.k2.to_string(),
        p.k3.to_string(),
        p.vb.to_string(),
        ki.to_string(),
        r.converged.to_string(),
        r.termination.clone(),
        r.final_cost.to_string(),
        r.iterations.to_string(),
    ]
}

pub const PATLAK_CHANNELS: [&str; 3] = ["Ki", "intercept", "r_squared"];

pub fn patlak(a: PatlakArgs) -> Result<()> {
    let ds = Dataset::open(&a.dataset)?;
    let vol = ds.pet()?;
    let input = ds.input(a.idif.as_deref())?;
    let schedule = vol.schedule().clone();
    let t_star_s = a.t_star_min * 60.0;

    if let Some(voi) = &a.voi {
        let mask = ds.require_labels()?;
        let label = resolve_label(voi, &mask)?;
        let r = fitter::patlak(&mean_tac(&vol, &mask, label)?, &input, &schedule, t_star_s)?;
        let mut w = csv::Writer::from_writer(open_output(a.out.as_deref())?);
        w.write_record(["label", "organ", "voxels", "Ki", "intercept", "r_squared", "t_star_s", "frames_used"])?;
        w.write_record([
            label.to_string(),
            mask.name(label).unwrap_or("").to_string(),
            mask.voxels_with(label).len().to_string(),
            r.ki_slope.to_string(),
            r.intercept.to_string(),
            r.r_squared.to_string(),
            r.t_star_s.to_string(),
            r.frames_used.to_string(),
        ])?;
        w.flush()?;
        return Ok(());
    }

    let mask = mask_for(&ds, a.all_voxels)?;
    let voxels: Vec<usize> = match &mask {
        Some(m) => (0..vol.grid().n_voxels()).filter(|&v| m.data()[v] != 0).collect(),
        None => (0..vol.grid().n_voxels()).collect(),
    };
    let results: Vec<(usize, PatlakResult)> = voxels
        .par_iter()
        .map(|&v| fitter::patlak(&vol.tac(v), &input, &schedule, t_star_s).map(|r| (v, r)))
        .collect::<pbpk_core::Result<_>>()?;
    let mut pv = ParametricVolume::zeros(*vol.grid(), &PATLAK_CHANNELS);
    for (v, r) in results {
        pv.set(0, v, r.ki_slope as f32);
        pv.set(1, v, r.intercept as f32);
        pv.set(2, v, r.r_squared as f32);
    }
    let out = a.out.unwrap_or_else(|| ds.volume_path(dataset::PATLAK));
    io::write_parametric(&out, &pv)?;
    eprintln!("Patlak on {} voxels from t* = {} min -> {}", voxels.len(), a.t_star_min, out.display());
    Ok(())
}

pub fn eval(a: EvalArgs) -> Result<()> {
    if !(a.threshold >= 0.0) {
        bail!("--threshold must be non-negative, got {}", a.threshold);
    }
    let ds = Dataset::open(&a.dataset)?;
    let vol = ds.pet()?;
    let mask = ds.require_labels()?;
    let input = ds.input(a.idif.as_deref())?;
    let schedule = vol.schedule().clone();
    let fit_path = a.fit.unwrap_or_else(|| ds.volume_path(dataset::FIT));
    if !fit_path.is_file() {
        bail!("no fit at {} (run `pbpk fit --dataset {}` first)", fit_path.display(), ds.dir.display());
    }
    let pv = dataset::read_parametric(&fit_path)?;
    let truth = match a.truth {
        Some(p) => Some(dataset::read_parametric(&p)?),
        None if ds.has(dataset::TRUTH) => Some(dataset::read_parametric(&ds.volume_path(dataset::TRUTH))?),
        None => None,
    };
    let table = match a.reference {
        ReferenceChoice::Network => reference::network_table(),
        ReferenceChoice::CurveFit => reference::curve_fit_table(),
    };
    let pooling = match a.pooling {
        PoolingChoice::VoxelMean => CsPooling::VoxelMean,
        PoolingChoice::Pooled => CsPooling::Pooled,
    };
    let out = a.out.unwrap_or_else(|| ds.dir.join("eval"));
    fs::create_dir_all(&out).with_context(|| format!("cannot create {}", out.display()))?;

    let report = evaluate(&vol, &pv, &mask, &input, &schedule, truth.as_ref(), &table, a.threshold, pooling)?;
    report.write(&out)?;
    print!("{}", report.summary(a.threshold));
    eprintln!("reports -> {}", out.display());
    Ok(())
}

struct EvalReport {
    organs: metrics::OrganReport,
    slices: Vec<metrics::SliceCs>,
    errors: Option<Vec<metrics::ParamErrorRow>>,
    agreement: Vec<metrics::AgreementRow>,
}

#[allow(clippy::too_many_arguments)]
fn evaluate(
    vol: &DynamicVolume,
    pv: &ParametricVolume,
    mask: &LabelMap,
    input: &InputFunction,
    schedule: &FrameSchedule,
    truth: Option<&ParametricVolume>,
    table: &ReferenceTable,
    threshold: f64,
    pooling: CsPooling,
) -> Result<EvalReport> {
    let mut organs = metrics::organ_aggregate(pv, mask)?;
    metrics::add_tac_metrics(&mut organs, vol, pv, mask, input, schedule)?;
    let slices = metrics::per_slice_cs(vol, pv, input, schedule, Some(mask), pooling, Execution::Parallel)?;
    let errors = truth.map(|t| metrics::param_errors(pv, t, mask)).transpose()?;
    let agreement = metrics::reference_agreement(&organs, table, threshold);
    Ok(EvalReport { organs, slices, errors, agreement })
}

impl EvalReport {
    fn write(&self, dir: &Path) -> Result<()> {
        let create = |name: &str| -> Result<fs::File> {
            let p: PathBuf = dir.join(name);
            fs::File::create(&p).with_context(|| format!("cannot create {}", p.display()))
        };
        metrics::write_organ_report_csv(create("organ_report.csv")?, &self.organs)?;
        let tac_rows: Vec<(String, TacMetrics)> = self
            .organs
            .rows
            .iter()
            .filter_map(|r| r.tac.map(|t| (r.organ.clone(), t)))
            .collect();
        metrics::write_tac_metrics_csv(create("tac_metrics.csv")?, &tac_rows)?;
        metrics::write_slice_cs_csv(create("slice_cs.csv")?, &self.slices)?;
        if let Some(e) = &self.errors {
            metrics::write_param_errors_csv(create("param_errors.csv")?, e)?;
        }
        metrics::write_agreement_csv(create("agreement.csv")?, &self.agreement)?;
        Ok(())
    }

    fn summary(&self, threshold: f64) -> String {
        let mut s = String::new();
        let k1 = self.organs.channels.iter().position(|c| c == "K1");
        s.push_str(&format!("{:<10} {:>7} {:>9} {:>9} {:>8}\n", "organ", "voxels", "K1_mean", "K1_std", "CS"));
        for r in &self.organs.rows {
            let (m, sd) = k1.map_or((f64::NAN, f64::NAN), |c| (r.mean[c], r.std[c]));
            let cs = r.tac.map_or(f64::NAN, |t| t.cosine_similarity);
            s.push_str(&format!("{:<10} {:>7} {:>9.4} {:>9.4} {:>8.4}\n", r.organ, r.voxels, m, sd, cs));
        }
        if let Some(errors) = &self.errors {
            s.push_str(&format!("\n{:<10} {:>9} {:>9} {:>9} {:>12}\n", "organ", "K1_true", "K1_fit", "bias", "median|err|"));
            for e in errors {
                s.push_str(&format!(
                    "{:<10} {:>9.4} {:>9.4} {:>8.1}% {:>11.1}%\n",
                    e.organ,
                    e.truth_mean[0],
                    e.fit_mean[0],
                    100.0 * e.relative_bias[0],
                    100.0 * e.median_abs_relative_error[0]
                ));
            }
        }
        let (lo, hi) = self
            .slices
            .iter()
            .map(|c| c.cosine_similarity)
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), c| (lo.min(c), hi.max(c)));
        s.push_str(&format!("\nslice CS range {lo:.4} .. {hi:.4} over {} slices\n", self.slices.len()));
        let agree = self.agreement.iter().filter(|r| r.agrees).count();
        s.push_str(&format!(
            "{agree}/{} organ parameters within {:.0}% of the reference table\n",
            self.agreement.len(),
            100.0 * threshold
        ));
        s
    }
}

pub fn export_fixtures(a: ExportArgs) -> Result<()> {
    let cfg = Config::load(a.config.as_deref())?;
    let schedule = cfg.schedule()?;
    let input = synth_input(&cfg.input, &schedule)?;
    let table = reference::network_table();
    let mut cases: Vec<ParityCase> = table
        .rows
        .iter()
        .map(|r| ParityCase { name: r.organ.clone(), params: r.mean })
        .collect();
    let b = ParamBounds::multi_clamp();
    let mut rng = ChaCha8Rng::seed_from_u64(a.seed);
    for i in 0..a.random {
        let p = KineticParams::new(
            rng.random_range(b.k1.lo..=b.k1.hi),
            rng.random_range(b.k2.lo..=b.k2.hi),
            rng.random_range(b.k3.lo..=b.k3.hi),
            rng.random_range(b.vb.lo..=b.vb.hi),
        );
        cases.push(ParityCase { name: format!("random_{i}"), params: p });
    }
    io::write_parity_fixtures(&a.out, &input, &schedule, &cases)?;
    // the clean fit of every case, for checking a learned estimator's targets
    let fitter = TacFitter::new(&input, &schedule, &pbpk_core::fitter::FitConfig::default())?;
    let mut w = csv::Writer::from_path(a.out.join("fit_reference.csv"))?;
    let mut header = vec!["case".to_string()];
    header.extend(PARAM_NAMES.iter().map(|n| format!("{n}_fit")));
    header.push("converged".into());
    w.write_record(&header)?;
    for c in &cases {
        let tac = model_tac_with(&c.params, &input, &schedule, &Default::default())?;
        let r = fitter.fit(&tac)?;
        let mut rec = vec![c.name.clone()];
        rec.extend(r.params.to_array().iter().map(|v| v.to_string()));
        rec.push(r.converged.to_string());
        w.write_record(&rec)?;
    }
    w.flush()?;
    eprintln!("{} cases -> {}", cases.len(), a.out.display());
    Ok(())
}
