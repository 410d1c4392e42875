//! On-disk dataset layout.
//!
//! A dataset directory holds `pet.{json,raw}` (dynamic volume),
//! `idif.csv` (input function curve) and optionally `labels.{json,raw}`
//! (organ mask) and `truth.{json,raw}` (true parameters). `fit` adds
//! `fit.{json,raw}`, `patlak` adds `patlak.{json,raw}`.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};

use pbpk_core::io;
use pbpk_core::kinetic::InputFunction;
use pbpk_core::volume::{DynamicVolume, LabelMap, ParametricVolume};

pub const PET: &str = "pet";
pub const LABELS: &str = "labels";
pub const TRUTH: &str = "truth";
pub const FIT: &str = "fit";
pub const PATLAK: &str = "patlak";
pub const IDIF: &str = "idif.csv";

pub struct Dataset {
    pub dir: PathBuf,
}

impl Dataset {
    pub fn open(dir: &Path) -> Result<Self> {
        if !dir.is_dir() {
            bail!("dataset directory {} does not exist (create one with `pbpk simulate --out {}`)", dir.display(), dir.display());
        }
        Ok(Self { dir: dir.to_path_buf() })
    }

    pub fn volume_path(&self, stem: &str) -> PathBuf {
        self.dir.join(format!("{stem}.json"))
    }

    pub fn has(&self, stem: &str) -> bool {
        self.volume_path(stem).is_file()
    }

    pub fn pet(&self) -> Result<DynamicVolume> {
        let p = self.volume_path(PET);
        io::read_dynamic(&p).with_context(|| format!("cannot load the dynamic volume {}", p.display()))
    }

    pub fn labels(&self) -> Result<Option<LabelMap>> {
        if !self.has(LABELS) {
            return Ok(None);
        }
        let p = self.volume_path(LABELS);
        Ok(Some(io::read_labels(&p).with_context(|| format!("cannot load the label map {}", p.display()))?))
    }

    pub fn require_labels(&self) -> Result<LabelMap> {
        self.labels()?
            .with_context(|| format!("{} has no label map ({LABELS}.json)", self.dir.display()))
    }

    /// The input function, from `override_path` when given.
    pub fn input(&self, override_path: Option<&Path>) -> Result<InputFunction> {
        let p = override_path.map(Path::to_path_buf).unwrap_or_else(|| self.dir.join(IDIF));
        read_input(&p)
    }
}

pub fn read_input(path: &Path) -> Result<InputFunction> {
    let curve = io::read_curve(path).with_context(|| format!("cannot load the input function {}", path.display()))?;
    Ok(curve.to_input()?)
}

pub fn read_parametric(path: &Path) -> Result<ParametricVolume> {
    io::read_parametric(path).with_context(|| format!("cannot load the parametric volume {}", path.display()))
}
