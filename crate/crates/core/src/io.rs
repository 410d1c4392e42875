//! On-disk formats.
//!
//! A volume is two files sharing a stem: `<stem>.raw` holds the array as
//! little-endian values with x fastest, `<stem>.json` the sidecar naming
//! its kind, dtype, dims, spacing, frame durations, channels or legend,
//! plus a magic string and format version. Time-activity curves and image
//! derived input functions are CSV with one row per frame.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kinetic::{model_tac, Frame, FrameSchedule, InputFunction, KineticParams};
use crate::volume::{DynamicVolume, Grid, LabelMap, ParametricVolume};

pub const MAGIC: &str = "pbpk-volume";
pub const FORMAT_VERSION: &str = "1.0.0";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VolumeKind {
    Dynamic,
    Parametric,
    Labels,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Sidecar {
    pub magic: String,
    pub version: String,
    pub kind: VolumeKind,
    /// `f32le` or `u8`.
    pub dtype: String,
    /// `[T, Z, Y, X]`, `[C, Z, Y, X]` or `[Z, Y, X]`.
    pub dims: Vec<usize>,
    pub spacing_mm: [f64; 3],
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub frame_durations_s: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub channels: Option<Vec<String>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub legend: Option<BTreeMap<u8, String>>,
}

/// Sidecar and payload paths for a stem; a trailing `.json` or `.raw` is
/// ignored so either file may be named.
pub fn volume_paths(path: &Path) -> (PathBuf, PathBuf) {
    let stem = match path.extension().and_then(|e| e.to_str()) {
        Some("json") | Some("raw") => path.with_extension(""),
        _ => path.to_path_buf(),
    };
    let with = |ext: &str| {
        let mut s = stem.clone().into_os_string();
        s.push(".");
        s.push(ext);
        PathBuf::from(s)
    };
    (with("json"), with("raw"))
}

fn sidecar(kind: VolumeKind, dtype: &str, dims: Vec<usize>, grid: &Grid) -> Sidecar {
    Sidecar {
        magic: MAGIC.into(),
        version: FORMAT_VERSION.into(),
        kind,
        dtype: dtype.into(),
        dims,
        spacing_mm: grid.spacing_mm,
        frame_durations_s: None,
        channels: None,
        legend: None,
    }
}

fn write_pair(path: &Path, meta: &Sidecar, payload: &[u8]) -> Result<()> {
    let (json, raw) = volume_paths(path);
    if let Some(dir) = json.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    fs::write(&raw, payload).map_err(|e| Error::io(&raw, e))?;
    let text = serde_json::to_string_pretty(meta)?;
    fs::write(&json, text + "\n").map_err(|e| Error::io(&json, e))?;
    Ok(())
}

/// Reads and checks a sidecar. Magic and version are checked before the
/// remaining fields so a newer file is reported as such.
pub fn read_sidecar(path: &Path) -> Result<Sidecar> {
    let (json, _) = volume_paths(path);
    let text = fs::read_to_string(&json).map_err(|e| Error::io(&json, e))?;
    let value: serde_json::Value =
        serde_json::from_str(&text).map_err(|e| Error::format(&json, format!("invalid JSON: {e}")))?;
    if value.get("magic").and_then(|m| m.as_str()) != Some(MAGIC) {
        return Err(Error::format(&json, format!("not a volume sidecar (magic must be \"{MAGIC}\")")));
    }
    let version = value.get("version").and_then(|v| v.as_str()).unwrap_or("");
    if !compatible(version) {
        return Err(Error::VersionMismatch {
            path: json,
            found: version.into(),
            supported: FORMAT_VERSION.into(),
        });
    }
    serde_json::from_value(value).map_err(|e| Error::format(&json, e.to_string()))
}

/// Same major version, minor not newer than this build's.
fn compatible(version: &str) -> bool {
    let parse = |v: &str| -> Option<(u64, u64)> {
        let mut it = v.split('.');
        let major = it.next()?.parse().ok()?;
        let minor = it.next()?.parse().ok()?;
        it.next()?.parse::<u64>().ok()?;
        Some((major, minor))
    };
    match (parse(version), parse(FORMAT_VERSION)) {
        (Some((a, b)), Some((c, d))) => a == c && b <= d,
        _ => false,
    }
}

fn read_payload(path: &Path, expected: u64) -> Result<Vec<u8>> {
    let (_, raw) = volume_paths(path);
    let bytes = fs::read(&raw).map_err(|e| Error::io(&raw, e))?;
    if bytes.len() as u64 != expected {
        return Err(Error::TruncatedPayload {
            path: raw,
            expected,
            actual: bytes.len() as u64,
        });
    }
    Ok(bytes)
}

fn f32_bytes(data: &[f32]) -> Vec<u8> {
    data.iter().flat_map(|v| v.to_le_bytes()).collect()
}

fn f32_values(bytes: &[u8]) -> Vec<f32> {
    bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect()
}

fn expect(meta: &Sidecar, path: &Path, kind: VolumeKind, dtype: &str, rank: usize) -> Result<()> {
    let json = volume_paths(path).0;
    if meta.kind != kind {
        return Err(Error::format(&json, format!("expected a {kind:?} volume, found {:?}", meta.kind)));
    }
    if meta.dtype != dtype {
        return Err(Error::format(&json, format!("expected dtype {dtype}, found {}", meta.dtype)));
    }
    if meta.dims.len() != rank {
        return Err(Error::format(&json, format!("expected {rank} dims, found {:?}", meta.dims)));
    }
    Ok(())
}

fn grid_of(meta: &Sidecar, spatial: &[usize], path: &Path) -> Result<Grid> {
    Grid::new([spatial[0], spatial[1], spatial[2]], meta.spacing_mm)
        .map_err(|e| Error::format(volume_paths(path).0, e.to_string()))
}

fn byte_len(dims: &[usize], width: usize) -> u64 {
    dims.iter().map(|&d| d as u64).product::<u64>() * width as u64
}

pub fn write_dynamic(path: &Path, vol: &DynamicVolume) -> Result<()> {
    let mut meta = sidecar(VolumeKind::Dynamic, "f32le", vol.dims().to_vec(), vol.grid());
    meta.frame_durations_s = Some(vol.schedule().durations_s());
    write_pair(path, &meta, &f32_bytes(vol.data()))
}

pub fn read_dynamic(path: &Path) -> Result<DynamicVolume> {
    let meta = read_sidecar(path)?;
    expect(&meta, path, VolumeKind::Dynamic, "f32le", 4)?;
    let json = volume_paths(path).0;
    let durations = meta
        .frame_durations_s
        .as_ref()
        .ok_or_else(|| Error::format(&json, "dynamic volume without frame_durations_s"))?;
    let schedule = FrameSchedule::from_durations(durations).map_err(|e| Error::format(&json, e.to_string()))?;
    if schedule.len() != meta.dims[0] {
        return Err(Error::DimensionMismatch {
            what: "frame count in sidecar dims vs frame durations",
            expected: meta.dims[0].to_string(),
            actual: schedule.len().to_string(),
        });
    }
    let grid = grid_of(&meta, &meta.dims[1..], path)?;
    let bytes = read_payload(path, byte_len(&meta.dims, 4))?;
    DynamicVolume::new(grid, schedule, f32_values(&bytes))
}

pub fn write_parametric(path: &Path, pv: &ParametricVolume) -> Result<()> {
    let [z, y, x] = pv.grid().dims;
    let mut meta = sidecar(VolumeKind::Parametric, "f32le", vec![pv.channels().len(), z, y, x], pv.grid());
    meta.channels = Some(pv.channels().to_vec());
    write_pair(path, &meta, &f32_bytes(pv.data()))
}

pub fn read_parametric(path: &Path) -> Result<ParametricVolume> {
    let meta = read_sidecar(path)?;
    expect(&meta, path, VolumeKind::Parametric, "f32le", 4)?;
    let channels = meta
        .channels
        .clone()
        .ok_or_else(|| Error::format(volume_paths(path).0, "parametric volume without channels"))?;
    if channels.len() != meta.dims[0] {
        return Err(Error::DimensionMismatch {
            what: "channel count in sidecar dims vs channel legend",
            expected: meta.dims[0].to_string(),
            actual: channels.len().to_string(),
        });
    }
    let grid = grid_of(&meta, &meta.dims[1..], path)?;
    let bytes = read_payload(path, byte_len(&meta.dims, 4))?;
    ParametricVolume::new(grid, channels, f32_values(&bytes))
}

pub fn write_labels(path: &Path, labels: &LabelMap) -> Result<()> {
    let mut meta = sidecar(VolumeKind::Labels, "u8", labels.grid().dims.to_vec(), labels.grid());
    meta.legend = Some(labels.legend().clone());
    write_pair(path, &meta, labels.data())
}

pub fn read_labels(path: &Path) -> Result<LabelMap> {
    let meta = read_sidecar(path)?;
    expect(&meta, path, VolumeKind::Labels, "u8", 3)?;
    let grid = grid_of(&meta, &meta.dims, path)?;
    let bytes = read_payload(path, byte_len(&meta.dims, 1))?;
    LabelMap::new(grid, meta.legend.unwrap_or_default(), bytes)
}

/// One curve sampled per frame: `frame_start_s,duration_s,activity_bq_ml`.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameCurve {
    pub frames: Vec<Frame>,
    pub activity: Vec<f64>,
}

#[derive(Debug, Serialize, Deserialize)]
struct CurveRow {
    frame_start_s: f64,
    duration_s: f64,
    activity_bq_ml: f64,
}

impl FrameCurve {
    pub fn new(frames: Vec<Frame>, activity: Vec<f64>) -> Result<Self> {
        if frames.is_empty() {
            return Err(Error::domain("curve has no frames"));
        }
        if frames.len() != activity.len() {
            return Err(Error::DimensionMismatch {
                what: "curve frames vs activity values",
                expected: frames.len().to_string(),
                actual: activity.len().to_string(),
            });
        }
        for (i, f) in frames.iter().enumerate() {
            if !f.start_s.is_finite() || f.start_s < 0.0 || !(f.duration_s > 0.0) || !f.duration_s.is_finite() {
                return Err(Error::domain(format!("frame {i} has invalid timing {f:?}")));
            }
            if i > 0 && f.start_s < frames[i - 1].end_s() - 1e-9 {
                return Err(Error::domain(format!(
                    "frame times not monotone at row {}: start {} s precedes the previous frame end {} s",
                    i + 1,
                    f.start_s,
                    frames[i - 1].end_s()
                )));
            }
            if !activity[i].is_finite() || activity[i] < 0.0 {
                return Err(Error::domain(format!("activity {} at row {} is negative or not finite", activity[i], i + 1)));
            }
        }
        Ok(Self { frames, activity })
    }

    pub fn from_schedule(schedule: &FrameSchedule, activity: Vec<f64>) -> Result<Self> {
        Self::new(schedule.frames().to_vec(), activity)
    }

    /// Input function with each value placed at its frame midpoint and the
    /// last value held to the end of the last frame.
    pub fn to_input(&self) -> Result<InputFunction> {
        let mids = self.frames.iter().map(|f| f.mid_s()).collect();
        InputFunction::with_coverage(mids, self.activity.clone(), self.frames.last().unwrap().end_s())
    }

    /// The frames as a schedule, when they tile `[0, end]`.
    pub fn schedule(&self) -> Result<FrameSchedule> {
        FrameSchedule::new(self.frames.clone())
    }
}

pub fn read_curve(path: &Path) -> Result<FrameCurve> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    if text.trim().is_empty() {
        return Err(Error::format(path, "empty curve file"));
    }
    let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(text.as_bytes());
    let header = reader.headers()?.clone();
    if header.iter().collect::<Vec<_>>() != ["frame_start_s", "duration_s", "activity_bq_ml"] {
        return Err(Error::format(
            path,
            format!("header must be frame_start_s,duration_s,activity_bq_ml, found {}", header.iter().collect::<Vec<_>>().join(",")),
        ));
    }
    let mut frames = Vec::new();
    let mut activity = Vec::new();
    for (i, row) in reader.deserialize::<CurveRow>().enumerate() {
        let row = row.map_err(|e| Error::format(path, format!("row {}: {e}", i + 1)))?;
        frames.push(Frame {
            start_s: row.frame_start_s,
            duration_s: row.duration_s,
        });
        activity.push(row.activity_bq_ml);
    }
    if frames.is_empty() {
        return Err(Error::format(path, "curve file has a header but no rows"));
    }
    FrameCurve::new(frames, activity).map_err(|e| Error::format(path, e.to_string()))
}

pub fn write_curve<W: std::io::Write>(w: W, curve: &FrameCurve) -> Result<()> {
    let mut wr = csv::Writer::from_writer(w);
    for (f, a) in curve.frames.iter().zip(&curve.activity) {
        wr.serialize(CurveRow {
            frame_start_s: f.start_s,
            duration_s: f.duration_s,
            activity_bq_ml: *a,
        })?;
    }
    wr.flush().map_err(csv::Error::from)?;
    Ok(())
}

pub fn write_curve_file(path: &Path, curve: &FrameCurve) -> Result<()> {
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    write_curve(std::io::BufWriter::new(file), curve)
}

/// Input function stored with one row per fine-grid step, so it reads back
/// as the same piecewise-linear curve when resampled at step midpoints.
pub fn fine_curve(f: impl Fn(f64) -> f64, step_s: f64, end_s: f64) -> Result<FrameCurve> {
    if !(step_s > 0.0) || !(end_s > 0.0) {
        return Err(Error::config("curve step and end must be positive"));
    }
    let n = (end_s / step_s).round() as usize;
    if ((n as f64) * step_s - end_s).abs() > 1e-9 * end_s {
        return Err(Error::config(format!("end {end_s} s is not a multiple of the step {step_s} s")));
    }
    let frames: Vec<Frame> = (0..n)
        .map(|i| Frame {
            start_s: i as f64 * step_s,
            duration_s: step_s,
        })
        .collect();
    let activity = frames.iter().map(|fr| f(fr.mid_s()).max(0.0)).collect();
    FrameCurve::new(frames, activity)
}

/// A forward-model test case shared with other implementations.
#[derive(Debug, Clone, PartialEq)]
pub struct ParityCase {
    pub name: String,
    pub params: KineticParams,
}

/// Writes forward-parity fixtures into `dir`: the input function at its
/// sample points (`input.csv`: time_s,activity_bq_ml), the frame schedule
/// (`schedule.csv`: frame_start_s,duration_s) and the model TAC of every
/// case (`forward_parity.csv`: case,K1,k2,k3,VB,frame_0..frame_{T-1}).
pub fn write_parity_fixtures(
    dir: &Path,
    input: &InputFunction,
    schedule: &FrameSchedule,
    cases: &[ParityCase],
) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let open = |name: &str| -> Result<csv::Writer<fs::File>> {
        let p = dir.join(name);
        Ok(csv::Writer::from_writer(fs::File::create(&p).map_err(|e| Error::io(&p, e))?))
    };

    let mut w = open("input.csv")?;
    w.write_record(["time_s", "activity_bq_ml"])?;
    for (t, a) in input.times_s().iter().zip(input.values()) {
        w.write_record([t.to_string(), a.to_string()])?;
    }
    w.flush().map_err(csv::Error::from)?;

    let mut w = open("schedule.csv")?;
    w.write_record(["frame_start_s", "duration_s"])?;
    for f in schedule.frames() {
        w.write_record([f.start_s.to_string(), f.duration_s.to_string()])?;
    }
    w.flush().map_err(csv::Error::from)?;

    let mut w = open("forward_parity.csv")?;
    let mut header: Vec<String> = ["case", "K1", "k2", "k3", "VB"].map(String::from).to_vec();
    header.extend((0..schedule.len()).map(|i| format!("frame_{i}")));
    w.write_record(&header)?;
    for c in cases {
        let tac = model_tac(&c.params, input, schedule)?;
        let mut rec = vec![c.name.clone()];
        rec.extend(c.params.to_array().iter().map(|v| v.to_string()));
        rec.extend(tac.iter().map(|v| v.to_string()));
        w.write_record(&rec)?;
    }
    w.flush().map_err(csv::Error::from)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::volume::FIT_CHANNELS;

    fn grid() -> Grid {
        Grid::new([2, 3, 4], [2.5, 2.0, 1.5]).unwrap()
    }

    #[test]
    fn paths_accept_either_extension() {
        let (j, r) = volume_paths(Path::new("d/pet.json"));
        assert_eq!((j.as_path(), r.as_path()), (Path::new("d/pet.json"), Path::new("d/pet.raw")));
        let (j, _) = volume_paths(Path::new("d/pet.v2"));
        assert_eq!(j, Path::new("d/pet.v2.json"));
    }

    #[test]
    fn dynamic_round_trip_is_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let s = FrameSchedule::reference();
        let n = grid().n_voxels() * s.len();
        // includes a NaN payload and negative zero
        let mut data: Vec<f32> = (0..n).map(|i| (i as f32).sin() * 1e4).collect();
        data[0] = f32::from_bits(0x7fc0_1234);
        data[1] = -0.0;
        let vol = DynamicVolume::new(grid(), s, data).unwrap();
        let p = dir.path().join("pet");
        write_dynamic(&p, &vol).unwrap();
        let back = read_dynamic(&p).unwrap();
        assert_eq!(back.schedule().end_time_s(), 3900.0);
        let a: Vec<u32> = vol.data().iter().map(|v| v.to_bits()).collect();
        let b: Vec<u32> = back.data().iter().map(|v| v.to_bits()).collect();
        assert_eq!(a, b);
        assert_eq!(back.grid(), vol.grid());
    }

    #[test]
    fn parametric_and_labels_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let mut pv = ParametricVolume::zeros(grid(), &FIT_CHANNELS);
        pv.set(2, 5, 0.25);
        write_parametric(&dir.path().join("fit.json"), &pv).unwrap();
        assert_eq!(read_parametric(&dir.path().join("fit")).unwrap(), pv);

        let legend = BTreeMap::from([(4u8, "liver".to_string())]);
        let mut data = vec![0u8; 24];
        data[3] = 4;
        let lm = LabelMap::new(grid(), legend, data).unwrap();
        write_labels(&dir.path().join("labels"), &lm).unwrap();
        assert_eq!(read_labels(&dir.path().join("labels.raw")).unwrap(), lm);
        assert!(read_dynamic(&dir.path().join("labels")).is_err());
    }

    #[test]
    fn size_and_version_errors_are_structured() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("fit");
        write_parametric(&p, &ParametricVolume::zeros(grid(), &FIT_CHANNELS)).unwrap();
        fs::write(dir.path().join("fit.raw"), vec![0u8; 100]).unwrap();
        match read_parametric(&p) {
            Err(Error::TruncatedPayload { expected, actual, .. }) => assert_eq!((expected, actual), (480, 100)),
            other => panic!("{other:?}"),
        }
        let json = fs::read_to_string(dir.path().join("fit.json")).unwrap();
        fs::write(dir.path().join("fit.json"), json.replace("1.0.0", "2.0.0")).unwrap();
        assert!(matches!(read_parametric(&p), Err(Error::VersionMismatch { .. })));
        fs::write(dir.path().join("fit.json"), "{\"magic\": \"other\"}").unwrap();
        assert!(matches!(read_parametric(&p), Err(Error::Format { .. })));
    }

    #[test]
    fn schedule_and_dims_must_agree() {
        let dir = tempfile::tempdir().unwrap();
        let s = FrameSchedule::from_durations(&[10.0; 3]).unwrap();
        let vol = DynamicVolume::zeros(grid(), s);
        let p = dir.path().join("pet");
        write_dynamic(&p, &vol).unwrap();
        let json = fs::read_to_string(dir.path().join("pet.json")).unwrap();
        let mut meta: Sidecar = serde_json::from_str(&json).unwrap();
        meta.frame_durations_s = Some(vec![10.0; 4]);
        fs::write(dir.path().join("pet.json"), serde_json::to_string(&meta).unwrap()).unwrap();
        assert!(matches!(read_dynamic(&p), Err(Error::DimensionMismatch { .. })));
    }

    #[test]
    fn curve_round_trip_and_validation() {
        let dir = tempfile::tempdir().unwrap();
        let s = FrameSchedule::reference();
        let c = FrameCurve::from_schedule(&s, vec![123.5; 62]).unwrap();
        let p = dir.path().join("idif.csv");
        write_curve_file(&p, &c).unwrap();
        let back = read_curve(&p).unwrap();
        assert_eq!(back, c);
        assert_eq!(back.schedule().unwrap(), s);
        assert_eq!(back.to_input().unwrap().eval(2000.0), 123.5);

        fs::write(&p, "").unwrap();
        assert!(read_curve(&p).is_err());
        fs::write(&p, "frame_start_s,duration_s,activity_bq_ml\n").unwrap();
        assert!(read_curve(&p).is_err());
        fs::write(&p, "frame_start_s,duration_s,activity_bq_ml\n10,10,1\n0,10,1\n").unwrap();
        assert!(read_curve(&p).is_err());
        fs::write(&p, "frame_start_s,duration_s,activity_bq_ml\n0,10,-1\n").unwrap();
        assert!(read_curve(&p).is_err());
        fs::write(&p, "time,activity\n0,1\n").unwrap();
        assert!(read_curve(&p).is_err());
        assert!(matches!(read_curve(&dir.path().join("missing.csv")), Err(Error::Io { .. })));
    }

    #[test]
    fn fine_curve_reads_back_on_midpoints() {
        let c = fine_curve(|t| t * 2.0, 1.0, 10.0).unwrap();
        assert_eq!(c.frames.len(), 10);
        let a = c.to_input().unwrap();
        assert_eq!(a.eval(3.5), 7.0);
        assert_eq!(a.end_s(), 10.0);
        assert!(fine_curve(|_| 1.0, 3.0, 10.0).is_err());
    }

    #[test]
    fn parity_fixtures_have_one_row_per_case() {
        let dir = tempfile::tempdir().unwrap();
        let s = FrameSchedule::reference();
        let a = InputFunction::with_coverage(vec![0.0, 60.0], vec![0.0, 100.0], 3900.0).unwrap();
        let cases = vec![ParityCase {
            name: "liver".into(),
            params: KineticParams::new(0.611, 0.793, 0.014, 0.005),
        }];
        write_parity_fixtures(dir.path(), &a, &s, &cases).unwrap();
        let text = fs::read_to_string(dir.path().join("forward_parity.csv")).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines.len(), 2);
        assert_eq!(lines[1].split(',').count(), 5 + 62);
        assert!(dir.path().join("schedule.csv").exists());
    }
}
