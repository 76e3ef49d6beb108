//! Sidecar files: ground-truth manifests written by `simulate` and the
//! calibration file written by `calibrate`.

use std::fs;
use std::path::{Path, PathBuf};

use rollsense_core::localization::LabeledContact;
use rollsense_core::simulator::RollSpeed;
use rollsense_core::{CameraIntrinsics, ExtrinsicPose, SurfacePoint};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::CliError;

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SequenceKind {
    Roll,
    Grid,
    Taps,
}

/// Per-sequence ground truth.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub schema_version: u32,
    pub kind: SequenceKind,
    pub speed: Option<RollSpeed>,
    pub seed: u64,
    pub radius_mm: f64,
    pub camera: CameraIntrinsics,
    pub pose: ExtrinsicPose,
    pub reference: Option<ReferenceInfo>,
    pub frames: Vec<ManifestFrame>,
}

/// Top-down reference view of the scene.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReferenceInfo {
    /// Relative to the manifest's directory.
    pub file: PathBuf,
    pub px_per_mm: f64,
    /// Scene coordinates of the nadir at `contact_y = 0`.
    pub origin_offset_mm: [f64; 2],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestFrame {
    pub index: usize,
    pub file: String,
    pub contact_y_mm: f64,
    /// Row shift from the previous frame (px), and its rounded value.
    pub shift_px: Option<f64>,
    pub shift_rounded: Option<i32>,
    #[serde(default)]
    pub contacts: Vec<ManifestContact>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestContact {
    pub x: f64,
    pub y: f64,
    pub z: f64,
    pub u: f64,
    pub v: f64,
    /// `[angle index, axial index]` of the tap layout.
    pub cell: Option<[usize; 2]>,
}

impl Manifest {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let m: Self = read_toml(path)?;
        if m.schema_version != SCHEMA_VERSION {
            return Err(CliError::Input(format!(
                "{}: unsupported manifest schema {}",
                path.display(),
                m.schema_version
            )));
        }
        Ok(m)
    }

    pub fn save(&self, path: &Path) -> Result<(), CliError> {
        write_toml(self, path)
    }

    /// Labeled contacts of every frame, in frame order.
    pub fn labeled_contacts(&self) -> Vec<LabeledContact> {
        self.frames
            .iter()
            .flat_map(|f| &f.contacts)
            .filter_map(|c| {
                c.cell.map(|[a, x]| LabeledContact { point: SurfacePoint::new(c.x, c.y, c.z), cell: (a, x) })
            })
            .collect()
    }
}

/// Averaged extrinsics written by `calibrate`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CalibrationFile {
    pub schema_version: u32,
    pub theta: f64,
    pub d: f64,
    pub theta_std: f64,
    pub d_std: f64,
    pub valid_frames: usize,
    pub rejected_frames: usize,
}

impl CalibrationFile {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        read_toml(path)
    }

    pub fn save(&self, path: &Path) -> Result<(), CliError> {
        write_toml(self, path)
    }

    pub fn pose(&self) -> ExtrinsicPose {
        ExtrinsicPose { theta: self.theta, d: self.d }
    }
}

fn read_toml<T: DeserializeOwned>(path: &Path) -> Result<T, CliError> {
    let text = fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    toml::from_str(&text).map_err(|e| CliError::io(path, e))
}

pub(crate) fn write_toml<T: Serialize>(value: &T, path: &Path) -> Result<(), CliError> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
    }
    let text = toml::to_string(value).map_err(|e| CliError::io(path, e))?;
    fs::write(path, text).map_err(|e| CliError::io(path, e))
}
