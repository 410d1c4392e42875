//! Organ legend and reference parameter tables.
//!
//! Two organ-level tables ship with the crate as CSV assets: mean and
//! standard deviation of (K1, k2, k3, VB) per organ, one from voxel-wise
//! network estimates averaged per VoI, one from curve fits of the
//! VoI-averaged TAC. The first doubles as the default phantom presets.

use serde::Deserialize;

use crate::error::{Error, Result};
use crate::kinetic::KineticParams;

/// Label ids used by the default phantom and its label maps.
pub const ORGAN_LABELS: [(u8, &str); 8] = [
    (1, "bones"),
    (2, "lungs"),
    (3, "heart"),
    (4, "liver"),
    (5, "kidneys"),
    (6, "spleen"),
    (7, "aorta"),
    (8, "brain"),
];

pub const TABLE_FORMAT: &str = "pbpk-reference-table";
pub const TABLE_VERSION: &str = "1.0.0";

const NETWORK_CSV: &str = include_str!("../assets/organ_params_network.csv");
const CURVE_FIT_CSV: &str = include_str!("../assets/organ_params_curve_fit.csv");

pub fn organ_label(name: &str) -> Option<u8> {
    ORGAN_LABELS
        .iter()
        .find(|(_, n)| n.eq_ignore_ascii_case(name))
        .map(|(l, _)| *l)
}

pub fn organ_name(label: u8) -> Option<&'static str> {
    ORGAN_LABELS.iter().find(|(l, _)| *l == label).map(|(_, n)| *n)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReferenceRow {
    pub organ: String,
    pub mean: KineticParams,
    pub std: [f64; 4],
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReferenceTable {
    pub version: String,
    pub rows: Vec<ReferenceRow>,
}

#[derive(Deserialize)]
struct RawRow {
    organ: String,
    k1_mean: f64,
    k1_std: f64,
    k2_mean: f64,
    k2_std: f64,
    k3_mean: f64,
    k3_std: f64,
    vb_mean: f64,
    vb_std: f64,
}

impl ReferenceTable {
    /// Parses a table. The first line must be `# format: <name> <semver>`;
    /// other `#` lines are provenance comments.
    pub fn parse(text: &str) -> Result<Self> {
        let first = text.lines().next().unwrap_or("");
        let version = first
            .strip_prefix("# format:")
            .map(str::split_whitespace)
            .and_then(|mut w| match (w.next(), w.next()) {
                (Some(TABLE_FORMAT), Some(v)) => Some(v.to_string()),
                _ => None,
            })
            .ok_or_else(|| Error::config(format!("reference table must start with '# format: {TABLE_FORMAT} <version>'")))?;
        if version.split('.').next() != TABLE_VERSION.split('.').next() {
            return Err(Error::config(format!(
                "reference table version {version} is not compatible with {TABLE_VERSION}"
            )));
        }
        let mut reader = csv::ReaderBuilder::new()
            .comment(Some(b'#'))
            .trim(csv::Trim::All)
            .from_reader(text.as_bytes());
        let mut rows = Vec::new();
        for rec in reader.deserialize::<RawRow>() {
            let r = rec?;
            let mean = KineticParams::new(r.k1_mean, r.k2_mean, r.k3_mean, r.vb_mean);
            mean.validate()?;
            rows.push(ReferenceRow {
                organ: r.organ,
                mean,
                std: [r.k1_std, r.k2_std, r.k3_std, r.vb_std],
            });
        }
        if rows.is_empty() {
            return Err(Error::config("reference table has no rows"));
        }
        Ok(Self { version, rows })
    }

    pub fn get(&self, organ: &str) -> Option<&ReferenceRow> {
        self.rows.iter().find(|r| r.organ.eq_ignore_ascii_case(organ))
    }

    pub fn preset(&self, organ: &str) -> Result<KineticParams> {
        self.get(organ)
            .map(|r| r.mean)
            .ok_or_else(|| Error::config(format!("no reference parameters for organ '{organ}'")))
    }
}

/// VoI means of voxel-wise network estimates; the default phantom presets.
pub fn network_table() -> ReferenceTable {
    ReferenceTable::parse(NETWORK_CSV).expect("bundled table parses")
}

/// Curve fits of VoI-averaged TACs.
pub fn curve_fit_table() -> ReferenceTable {
    ReferenceTable::parse(CURVE_FIT_CSV).expect("bundled table parses")
}

pub fn preset(organ: &str) -> Result<KineticParams> {
    network_table().preset(organ)
}
