use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One acquisition window, times in seconds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Frame {
    pub start_s: f64,
    pub duration_s: f64,
}

impl Frame {
    pub fn end_s(&self) -> f64 {
        self.start_s + self.duration_s
    }

    pub fn mid_s(&self) -> f64 {
        self.start_s + 0.5 * self.duration_s
    }
}

/// Contiguous, non-overlapping acquisition frames starting at t = 0.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<Frame>", into = "Vec<Frame>")]
pub struct FrameSchedule {
    frames: Vec<Frame>,
}

/// Frame counts and durations (seconds) of the 65-minute, 62-frame FDG
/// protocol used as the toolkit default.
pub const REFERENCE_PROTOCOL: [(usize, f64); 7] = [
    (2, 10.0),
    (30, 2.0),
    (4, 10.0),
    (8, 30.0),
    (4, 60.0),
    (5, 120.0),
    (9, 300.0),
];

const CONTIGUITY_TOL_S: f64 = 1e-9;

impl FrameSchedule {
    pub fn new(frames: Vec<Frame>) -> Result<Self> {
        if frames.is_empty() {
            return Err(Error::domain("frame schedule is empty"));
        }
        let mut expected_start = 0.0;
        for (i, f) in frames.iter().enumerate() {
            if !(f.duration_s > 0.0) || !f.duration_s.is_finite() {
                return Err(Error::domain(format!(
                    "frame {i}: duration {} s must be positive",
                    f.duration_s
                )));
            }
            if (f.start_s - expected_start).abs() > CONTIGUITY_TOL_S * expected_start.max(1.0) {
                return Err(Error::domain(format!(
                    "frame {i}: starts at {} s, expected {} s (frames must be contiguous from 0)",
                    f.start_s, expected_start
                )));
            }
            expected_start = f.end_s();
        }
        Ok(Self { frames })
    }

    /// Builds contiguous frames from a list of durations.
    pub fn from_durations(durations_s: &[f64]) -> Result<Self> {
        let mut start = 0.0;
        let frames = durations_s
            .iter()
            .map(|&d| {
                let f = Frame {
                    start_s: start,
                    duration_s: d,
                };
                start += d;
                f
            })
            .collect();
        Self::new(frames)
    }

    /// Builds a schedule from (count, duration) blocks.
    pub fn from_blocks(blocks: &[(usize, f64)]) -> Result<Self> {
        let durations: Vec<f64> = blocks
            .iter()
            .flat_map(|&(n, d)| std::iter::repeat_n(d, n))
            .collect();
        Self::from_durations(&durations)
    }

    /// The 62-frame reference protocol ending at 3900 s.
    pub fn reference() -> Self {
        Self::from_blocks(&REFERENCE_PROTOCOL).expect("reference protocol is valid")
    }

    pub fn frames(&self) -> &[Frame] {
        &self.frames
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn mid_times_s(&self) -> Vec<f64> {
        self.frames.iter().map(Frame::mid_s).collect()
    }

    pub fn durations_s(&self) -> Vec<f64> {
        self.frames.iter().map(|f| f.duration_s).collect()
    }

    pub fn end_time_s(&self) -> f64 {
        self.frames.last().map_or(0.0, Frame::end_s)
    }

    /// Splits into two schedules at frame index `at`; the second is shifted
    /// to keep the time origin of the first.
    pub fn split_at(&self, at: usize) -> Result<(Vec<Frame>, Vec<Frame>)> {
        if at == 0 || at >= self.frames.len() {
            return Err(Error::domain(format!("cannot split {} frames at {at}", self.len())));
        }
        let (a, b) = self.frames.split_at(at);
        Ok((a.to_vec(), b.to_vec()))
    }
}

impl TryFrom<Vec<Frame>> for FrameSchedule {
    type Error = Error;

    fn try_from(frames: Vec<Frame>) -> Result<Self> {
        Self::new(frames)
    }
}

impl From<FrameSchedule> for Vec<Frame> {
    fn from(s: FrameSchedule) -> Self {
        s.frames
    }
}
