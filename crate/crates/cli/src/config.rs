//! Run configuration: TOML with every section optional and unknown keys
//! rejected. Relative paths resolve against the config file's directory.

use std::f64::consts::FRAC_PI_2;
use std::fs;
use std::path::{Path, PathBuf};

use rollsense_core::calibration::{CalibrationOptions, GridSpec};
use rollsense_core::localization::{LocalizeParams, PreprocessParams, TapLayout, ThresholdMode};
use rollsense_core::mapping::StitchParams;
use rollsense_core::{CameraIntrinsics, CylinderModel, ExtrinsicPose};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::CliError;

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub seed: u64,
    pub camera: CameraIntrinsics,
    pub cylinder: CylinderSection,
    pub pose: PoseSection,
    pub flip: FlipFlags,
    pub paths: PathsSection,
    pub grid: GridSpec,
    pub calibrate: CalibrationOptions,
    pub localize: LocalizeSection,
    pub stitch: StitchParams,
    pub align: Option<AlignSection>,
    pub taps: TapLayout,
    pub simulate: SimulateSection,
    pub coverage: CoverageSection,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CylinderSection {
    pub radius_mm: f64,
}

impl Default for CylinderSection {
    fn default() -> Self {
        Self { radius_mm: CylinderModel::default().radius() }
    }
}

/// Sensor pose, given directly or as a calibration file written by
/// `calibrate` (which takes precedence).
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PoseSection {
    pub theta: f64,
    pub d: f64,
    pub calibration: Option<PathBuf>,
}

/// Mirror input frames before processing, for cameras mounted so that image
/// axes run opposite to the model's.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FlipFlags {
    pub u: bool,
    pub v: bool,
}

/// Default inputs; command-line flags override them.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PathsSection {
    pub frames: Option<PathBuf>,
    pub reference: Option<PathBuf>,
    pub truth: Option<PathBuf>,
    pub out_dir: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LocalizeSection {
    pub blur_sigma: f64,
    pub threshold: ThresholdMode,
    pub invert: bool,
    pub min_area: usize,
    /// Largest estimate-to-truth distance accepted as a match.
    pub gate_mm: f64,
}

impl Default for LocalizeSection {
    fn default() -> Self {
        let p = LocalizeParams::default();
        Self {
            blur_sigma: p.preprocess.blur_sigma,
            threshold: p.preprocess.threshold,
            invert: p.preprocess.invert,
            min_area: p.min_area,
            gate_mm: 10.0,
        }
    }
}

impl LocalizeSection {
    pub fn params(&self) -> LocalizeParams {
        LocalizeParams {
            preprocess: PreprocessParams {
                blur_sigma: self.blur_sigma,
                threshold: self.threshold,
                invert: self.invert,
            },
            min_area: self.min_area,
        }
    }
}

/// Two corresponding point pairs `[u, v]` in the map and `[x, y]` in the
/// reference image.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AlignSection {
    pub map: [[f64; 2]; 2],
    pub reference: [[f64; 2]; 2],
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SceneChoice {
    Fabric,
    Grid,
    Taps,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SimulateSection {
    pub scenes: Vec<SceneChoice>,
    /// Pose the sensor is rendered at.
    pub pose: ExtrinsicPose,
    pub fabric_width_mm: f64,
    pub fabric_length_mm: f64,
    pub texture_pitch_mm: f64,
    pub roll_start_mm: f64,
    pub roll_end_mm: f64,
    pub frame_rate: f64,
    pub contact_halfwidth_mm: f64,
    pub grid_halfwidth_mm: f64,
    pub calibration_frames: usize,
    pub noise_sigma: f64,
}

impl Default for SimulateSection {
    fn default() -> Self {
        Self {
            scenes: vec![SceneChoice::Fabric, SceneChoice::Grid, SceneChoice::Taps],
            pose: ExtrinsicPose::identity(),
            fabric_width_mm: 80.0,
            fabric_length_mm: 110.0,
            texture_pitch_mm: 0.1,
            roll_start_mm: 5.0,
            roll_end_mm: 105.0,
            frame_rate: 6.0,
            contact_halfwidth_mm: 5.0,
            grid_halfwidth_mm: 8.0,
            calibration_frames: 10,
            noise_sigma: 0.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CoverageSection {
    pub fabric_mm: [f64; 2],
    pub sensing_area_mm: [f64; 2],
}

impl Default for CoverageSection {
    fn default() -> Self {
        Self { fabric_mm: [80.0, 110.0], sensing_area_mm: [16.0, 12.0] }
    }
}

fn check(ok: bool, what: impl FnOnce() -> String) -> Result<(), CliError> {
    if ok {
        Ok(())
    } else {
        Err(CliError::Config(what()))
    }
}

fn in_range(name: &str, v: f64, lo: f64, hi: f64) -> Result<(), CliError> {
    check(v.is_finite() && v >= lo && v <= hi, || format!("{name}={v} outside [{lo}, {hi}]"))
}

fn positive(name: &str, v: f64) -> Result<(), CliError> {
    check(v.is_finite() && v > 0.0, || format!("{name}={v} must be positive"))
}

impl RunConfig {
    /// Reads, resolves and validates a config file.
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = fs::read_to_string(path).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        let mut cfg = Self::parse(&text)?;
        cfg.resolve_paths(path.parent().unwrap_or(Path::new(".")));
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn parse(text: &str) -> Result<Self, CliError> {
        toml::from_str(text).map_err(|e| CliError::Config(e.to_string()))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config is always serializable")
    }

    /// SHA-256 of the canonical serialization.
    pub fn hash(&self) -> String {
        Sha256::digest(self.to_toml().as_bytes()).iter().map(|b| format!("{b:02x}")).collect()
    }

    fn resolve_paths(&mut self, base: &Path) {
        let fix = |p: &mut Option<PathBuf>| {
            if let Some(path) = p {
                if path.is_relative() {
                    *path = base.join(&*path);
                }
            }
        };
        fix(&mut self.pose.calibration);
        fix(&mut self.paths.frames);
        fix(&mut self.paths.reference);
        fix(&mut self.paths.truth);
        fix(&mut self.paths.out_dir);
    }

    pub fn cylinder(&self) -> CylinderModel {
        CylinderModel::new(self.cylinder.radius_mm).expect("validated")
    }

    pub fn validate(&self) -> Result<(), CliError> {
        let cfg_err = |e: rollsense_core::Error| CliError::Config(e.to_string());
        self.camera.validate().map_err(cfg_err)?;
        check(self.camera.width >= 16 && self.camera.height >= 16, || "camera must be at least 16x16".into())?;
        let cyl = CylinderModel::new(self.cylinder.radius_mm).map_err(cfg_err)?;
        if self.pose.calibration.is_none() {
            ExtrinsicPose { theta: self.pose.theta, d: self.pose.d }.validate_for(&cyl).map_err(cfg_err)?;
        }
        self.grid.validate().map_err(cfg_err)?;

        let det = &self.calibrate.detect;
        in_range("calibrate.detect.blur_sigma", det.blur_sigma, 0.0, 20.0)?;
        check(det.open_size <= 31, || "calibrate.detect.open_size must be at most 31".into())?;
        check(det.min_area >= 1, || "calibrate.detect.min_area must be at least 1".into())?;
        let pnp = &self.calibrate.pnp;
        check((1..=10_000).contains(&pnp.max_iterations), || "calibrate.pnp.max_iterations outside [1, 10000]".into())?;
        positive("calibrate.pnp.step_tolerance", pnp.step_tolerance)?;
        check(pnp.max_escalations >= 1, || "calibrate.pnp.max_escalations must be at least 1".into())?;
        self.calibrate.init.validate_for(&cyl).map_err(cfg_err)?;

        in_range("localize.blur_sigma", self.localize.blur_sigma, 0.0, 20.0)?;
        check(self.localize.min_area >= 1, || "localize.min_area must be at least 1".into())?;
        positive("localize.gate_mm", self.localize.gate_mm)?;

        let st = &self.stitch;
        check(st.patch_height >= 1 && st.patch_height <= self.camera.height, || {
            format!("stitch.patch_height={} outside [1, {}]", st.patch_height, self.camera.height)
        })?;
        let h = self.camera.height as i32;
        check(st.shift_range.min <= st.shift_range.max, || "stitch.shift_range min exceeds max".into())?;
        check(st.shift_range.min > -h && st.shift_range.max < h, || {
            format!("stitch.shift_range must lie within (-{h}, {h})")
        })?;
        if let Some(a) = &self.align {
            check(a.map.iter().chain(&a.reference).flatten().all(|v| v.is_finite()), || {
                "align points must be finite".into()
            })?;
        }

        let t = &self.taps;
        check(!t.angles.is_empty() && t.angles.iter().all(|a| a.abs() < FRAC_PI_2), || {
            "taps.angles must be non-empty and within (-pi/2, pi/2)".into()
        })?;
        check(!t.axial_fractions.is_empty() && t.axial_fractions.iter().all(|f| (0.0..=1.0).contains(f)), || {
            "taps.axial_fractions must be non-empty and within [0, 1]".into()
        })?;
        positive("taps.sensor_length_mm", t.sensor_length_mm)?;
        positive("taps.stick_radius_mm", t.stick_radius_mm)?;

        let s = &self.simulate;
        s.pose.validate_for(&cyl).map_err(cfg_err)?;
        positive("simulate.fabric_width_mm", s.fabric_width_mm)?;
        positive("simulate.fabric_length_mm", s.fabric_length_mm)?;
        in_range("simulate.texture_pitch_mm", s.texture_pitch_mm, 0.01, 5.0)?;
        check(s.roll_start_mm.is_finite() && s.roll_end_mm.is_finite() && s.roll_start_mm <= s.roll_end_mm, || {
            "simulate.roll_start_mm must not exceed roll_end_mm".into()
        })?;
        in_range("simulate.frame_rate", s.frame_rate, 0.1, 1000.0)?;
        positive("simulate.contact_halfwidth_mm", s.contact_halfwidth_mm)?;
        positive("simulate.grid_halfwidth_mm", s.grid_halfwidth_mm)?;
        check((1..=1000).contains(&s.calibration_frames), || "simulate.calibration_frames outside [1, 1000]".into())?;
        in_range("simulate.noise_sigma", s.noise_sigma, 0.0, 100.0)?;

        for v in self.coverage.fabric_mm.iter().chain(&self.coverage.sensing_area_mm) {
            positive("coverage dimension", *v)?;
        }

        let exists = |name: &str, p: &Option<PathBuf>| match p {
            Some(path) if !path.exists() => Err(CliError::Config(format!("{name} {} does not exist", path.display()))),
            _ => Ok(()),
        };
        exists("pose.calibration", &self.pose.calibration)?;
        exists("paths.frames", &self.paths.frames)?;
        exists("paths.reference", &self.paths.reference)?;
        exists("paths.truth", &self.paths.truth)?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_round_trips() {
        let cfg = RunConfig::default();
        assert_eq!(RunConfig::parse(&cfg.to_toml()).unwrap(), cfg);
        cfg.validate().unwrap();
    }

    #[test]
    fn custom_document_round_trips() {
        let text = r#"
            seed = 9
            [camera]
            fx = 400.0
            fy = 410.0
            u0 = 300.0
            v0 = 250.0
            width = 600
            height = 500
            [localize]
            threshold = { fixed = 90 }
            [stitch]
            patch_height = 60
            overlap = "average"
            shift_range = { min = -30, max = 30 }
            [align]
            map = [[1.0, 2.0], [3.0, 4.0]]
            reference = [[5.0, 6.0], [7.0, 8.0]]
        "#;
        let cfg = RunConfig::parse(text).unwrap();
        assert_eq!(cfg.localize.threshold, ThresholdMode::Fixed(90));
        assert_eq!(RunConfig::parse(&cfg.to_toml()).unwrap(), cfg);
        assert_eq!(cfg.hash(), RunConfig::parse(&cfg.to_toml()).unwrap().hash());
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert_eq!(RunConfig::parse("sead = 1").unwrap_err().code(), 2);
        assert!(RunConfig::parse("[stitch]\npatch_hieght = 3").is_err());
    }

    #[test]
    fn out_of_bounds_values_are_rejected() {
        let mut cfg = RunConfig::default();
        cfg.stitch.patch_height = 0;
        assert!(cfg.validate().is_err());
        let mut cfg = RunConfig::default();
        cfg.pose.d = 60.0;
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn missing_calibration_file_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.toml");
        fs::write(&path, "[pose]\ncalibration = \"nope.toml\"\n").unwrap();
        let err = RunConfig::load(&path).unwrap_err();
        assert_eq!(err.code(), 2);
        assert!(err.to_string().contains("nope.toml"));
    }
}
