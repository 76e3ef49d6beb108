//! Subcommand implementations. Each returns the report; artifacts are
//! written under the output directory as a side effect.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use rollsense_core::calibration::calibrate;
use rollsense_core::localization::{evaluate_localization, localize_contacts, HARDWARE_REFERENCE_MM};
use rollsense_core::mapping::{
    derive_affine, evaluate, score_alignment, stitch, HARDWARE_REFERENCE, REAL_DATA_SSIM_RANGE,
};
use rollsense_core::simulator::{
    render_frame, render_roll_sequence, truth_alignment_points, RenderOptions, RollSpeed, RollState, SimScene,
    TactileFrame, Texture,
};
use rollsense_core::{project, ExtrinsicPose, PixelPoint};
use serde::Serialize;

use crate::artifacts::{
    CalibrationFile, Manifest, ManifestContact, ManifestFrame, ReferenceInfo, SequenceKind, SCHEMA_VERSION,
};
use crate::config::{RunConfig, SceneChoice};
use crate::coverage::coverage_note;
use crate::error::{CliError, Stage};
use crate::io::{apply_flips, frame_name, list_frames, load_gray, save_png};
use crate::report::{RunReport, Timer};

#[derive(Debug, Clone, PartialEq)]
pub enum Command {
    /// Render the fabric rolls, calibration grid and tap presses.
    Simulate,
    Calibrate { frames: Option<PathBuf> },
    Localize { frames: Option<PathBuf>, calibration: Option<PathBuf>, truth: Option<PathBuf> },
    Stitch { frames: Option<PathBuf>, reference: Option<PathBuf>, truth: Option<PathBuf> },
    Evaluate { a: PathBuf, b: PathBuf },
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::Simulate => "simulate",
            Command::Calibrate { .. } => "calibrate",
            Command::Localize { .. } => "localize",
            Command::Stitch { .. } => "stitch",
            Command::Evaluate { .. } => "evaluate",
        }
    }
}

/// Runs `cmd` and writes `<out_dir>/<command>.report.toml`.
pub fn run(cmd: &Command, cfg: &RunConfig, out_dir: &Path) -> Result<RunReport, CliError> {
    let mut timer = Timer::default();
    let mut report = RunReport::new(
        cmd.name(),
        cfg.hash(),
        cfg.seed,
        coverage_note(cfg.coverage.fabric_mm, cfg.coverage.sensing_area_mm),
    );
    match cmd {
        Command::Simulate => simulate(cfg, out_dir, &mut report, &mut timer)?,
        Command::Calibrate { frames } => {
            let frames = pick(frames, &cfg.paths.frames, "frames directory")?;
            run_calibrate(cfg, &frames, out_dir, &mut report, &mut timer)?
        }
        Command::Localize { frames, calibration, truth } => {
            let frames = pick(frames, &cfg.paths.frames, "frames directory")?;
            let truth = truth.clone().or_else(|| cfg.paths.truth.clone());
            run_localize(cfg, &frames, calibration.as_deref(), truth.as_deref(), &mut report, &mut timer)?
        }
        Command::Stitch { frames, reference, truth } => {
            let frames = pick(frames, &cfg.paths.frames, "frames directory")?;
            let reference = reference.clone().or_else(|| cfg.paths.reference.clone());
            let truth = truth.clone().or_else(|| cfg.paths.truth.clone());
            run_stitch(cfg, &frames, reference, truth.as_deref(), out_dir, &mut report, &mut timer)?
        }
        Command::Evaluate { a, b } => run_evaluate(a, b, &mut report, &mut timer)?,
    }
    report.timing = timer.finish();
    report.save(&out_dir.join(format!("{}.report.toml", cmd.name())))?;
    Ok(report)
}

fn pick(flag: &Option<PathBuf>, config: &Option<PathBuf>, what: &str) -> Result<PathBuf, CliError> {
    flag.clone()
        .or_else(|| config.clone())
        .ok_or_else(|| CliError::Config(format!("no {what} given on the command line or in [paths]")))
}

/// Loads a frame directory in frame-number order, applying axis flips.
pub fn load_frames(dir: &Path, cfg: &RunConfig) -> Result<Vec<TactileFrame>, CliError> {
    list_frames(dir)?
        .into_iter()
        .map(|(number, path)| {
            let img = apply_flips(load_gray(&path)?, cfg.flip.u, cfg.flip.v);
            if img.dimensions() != (cfg.camera.width, cfg.camera.height) {
                return Err(CliError::Input(format!(
                    "{}: frame is {}x{}, camera is {}x{}",
                    path.display(),
                    img.width(),
                    img.height(),
                    cfg.camera.width,
                    cfg.camera.height
                )));
            }
            Ok(TactileFrame::from_image(img, number as usize))
        })
        .collect()
}

#[derive(Serialize)]
struct SequenceSummary {
    name: String,
    dir: String,
    frames: usize,
    mean_abs_shift_px: f64,
}

fn simulate(cfg: &RunConfig, out: &Path, report: &mut RunReport, timer: &mut Timer) -> Result<(), CliError> {
    let s = &cfg.simulate;
    let k = cfg.camera;
    let cyl = cfg.cylinder();
    let manifest = |kind, speed, reference, frames| Manifest {
        schema_version: SCHEMA_VERSION,
        kind,
        speed,
        seed: cfg.seed,
        radius_mm: cyl.radius(),
        camera: k,
        pose: s.pose,
        reference,
        frames,
    };
    let mut sequences = Vec::new();

    if s.scenes.contains(&SceneChoice::Fabric) {
        let texture = timer
            .stage("texture", || Texture::fabric(s.fabric_width_mm, s.fabric_length_mm, s.texture_pitch_mm, cfg.seed))
            .stage("texture")?;
        let ppm = k.fy / cyl.radius();
        save_png(&texture.reference_view(ppm), &out.join("fabric/reference.png"))?;
        let scene = SimScene::texture(texture);
        for (i, speed) in RollSpeed::ALL.into_iter().enumerate() {
            let traj = speed.trajectory(s.roll_start_mm, s.roll_end_mm, s.frame_rate, s.pose, &cyl);
            let opts = RenderOptions {
                contact_halfwidth_mm: s.contact_halfwidth_mm,
                noise_sigma: s.noise_sigma,
                seed: cfg.seed.wrapping_add(i as u64 + 1),
            };
            let frames = timer
                .stage(speed.name(), || render_roll_sequence(&scene, &traj, &k, &cyl, &opts))
                .stage("simulate")?;
            let dir = out.join("fabric").join(speed.name());
            let rows = write_frames(&frames, &dir, |_| Vec::new())?;
            let reference = ReferenceInfo {
                file: PathBuf::from("../reference.png"),
                px_per_mm: ppm,
                origin_offset_mm: scene.origin_offset,
            };
            manifest(SequenceKind::Roll, Some(speed), Some(reference), rows).save(&dir.join("manifest.toml"))?;
            let shifts: Vec<f64> = frames.iter().filter_map(|f| f.truth.shift_px).collect();
            sequences.push(SequenceSummary {
                name: format!("fabric/{}", speed.name()),
                dir: dir.display().to_string(),
                frames: frames.len(),
                mean_abs_shift_px: shifts.iter().map(|v| v.abs()).sum::<f64>() / shifts.len().max(1) as f64,
            });
        }
    }

    if s.scenes.contains(&SceneChoice::Grid) {
        let scene = SimScene::hemisphere_grid(cfg.grid);
        let opts = RenderOptions {
            contact_halfwidth_mm: s.grid_halfwidth_mm,
            noise_sigma: s.noise_sigma,
            seed: cfg.seed.wrapping_add(100),
        };
        let frames = timer
            .stage("grid", || {
                (0..s.calibration_frames)
                    .map(|i| render_frame(&scene, &RollState { frame_index: i, ..RollState::at_rest(s.pose) }, &k, &cyl, &opts))
                    .collect::<rollsense_core::Result<Vec<_>>>()
            })
            .stage("simulate")?;
        let dir = out.join("grid");
        let rows = write_frames(&frames, &dir, |f| {
            f.truth.contacts.iter().map(|c| contact_row(c.point, c.pixel, None)).collect()
        })?;
        manifest(SequenceKind::Grid, None, None, rows).save(&dir.join("manifest.toml"))?;
        sequences.push(SequenceSummary {
            name: "grid".into(),
            dir: dir.display().to_string(),
            frames: frames.len(),
            mean_abs_shift_px: 0.0,
        });
    }

    if s.scenes.contains(&SceneChoice::Taps) {
        let presses = cfg.taps.presses(&cyl);
        let opts = RenderOptions {
            contact_halfwidth_mm: s.contact_halfwidth_mm,
            noise_sigma: s.noise_sigma,
            seed: cfg.seed.wrapping_add(200),
        };
        let frames = timer
            .stage("taps", || {
                presses
                    .iter()
                    .enumerate()
                    .map(|(i, p)| {
                        render_frame(&p.scene, &RollState { frame_index: i, ..RollState::at_rest(s.pose) }, &k, &cyl, &opts)
                    })
                    .collect::<rollsense_core::Result<Vec<_>>>()
            })
            .stage("simulate")?;
        let dir = out.join("taps");
        let rows = write_frames(&frames, &dir, |f| {
            presses[f.index]
                .truth
                .iter()
                .filter_map(|t| {
                    let px = project(&t.point, &k, &s.pose).ok()?.pixel;
                    Some(contact_row(t.point, px, Some([t.cell.0, t.cell.1])))
                })
                .collect()
        })?;
        manifest(SequenceKind::Taps, None, None, rows).save(&dir.join("manifest.toml"))?;
        sequences.push(SequenceSummary {
            name: "taps".into(),
            dir: dir.display().to_string(),
            frames: frames.len(),
            mean_abs_shift_px: 0.0,
        });
    }

    report.output("sequences", &sequences);
    report.output("pose", &s.pose);
    Ok(())
}

fn contact_row(p: rollsense_core::SurfacePoint, px: PixelPoint, cell: Option<[usize; 2]>) -> ManifestContact {
    ManifestContact { x: p.x, y: p.y, z: p.z, u: px.u, v: px.v, cell }
}

fn write_frames(
    frames: &[TactileFrame],
    dir: &Path,
    contacts: impl Fn(&TactileFrame) -> Vec<ManifestContact>,
) -> Result<Vec<ManifestFrame>, CliError> {
    frames
        .iter()
        .map(|f| {
            let file = frame_name(f.index);
            save_png(&f.pixels, &dir.join(&file))?;
            Ok(ManifestFrame {
                index: f.index,
                file,
                contact_y_mm: f.truth.contact_y,
                shift_px: f.truth.shift_px,
                shift_rounded: f.truth.shift_rounded(),
                contacts: contacts(f),
            })
        })
        .collect()
}

#[derive(Serialize)]
struct CalibrationRow {
    frame: usize,
    theta: Option<f64>,
    d: Option<f64>,
    reprojection_rmse_px: Option<f64>,
    iterations: Option<usize>,
    error: Option<String>,
}

fn run_calibrate(
    cfg: &RunConfig,
    frames_dir: &Path,
    out: &Path,
    report: &mut RunReport,
    timer: &mut Timer,
) -> Result<(), CliError> {
    report.input("frames", frames_dir);
    let frames = timer.stage("load", || load_frames(frames_dir, cfg))?;
    let cyl = cfg.cylinder();
    let result = timer
        .stage("calibrate", || calibrate(&frames, &cfg.grid, &cfg.camera, &cyl, &cfg.calibrate))
        .stage("calibrate")?;
    let file = CalibrationFile {
        schema_version: SCHEMA_VERSION,
        theta: result.pose.theta,
        d: result.pose.d,
        theta_std: result.theta_std,
        d_std: result.d_std,
        valid_frames: result.valid_frames,
        rejected_frames: result.rejected_frames,
    };
    file.save(&out.join("calibration.toml"))?;
    let rows: Vec<CalibrationRow> = result
        .frames
        .iter()
        .map(|f| CalibrationRow {
            frame: f.index,
            theta: f.estimate.map(|e| e.theta),
            d: f.estimate.map(|e| e.d),
            reprojection_rmse_px: f.estimate.map(|e| e.reprojection_rmse),
            iterations: f.estimate.map(|e| e.iterations),
            error: f.error.clone(),
        })
        .collect();
    report.output("calibration", &file);
    report.output("frames", &rows);
    Ok(())
}

fn resolve_pose(cfg: &RunConfig, flag: Option<&Path>, report: &mut RunReport) -> Result<ExtrinsicPose, CliError> {
    let path = flag.map(Path::to_path_buf).or_else(|| cfg.pose.calibration.clone());
    let pose = match path {
        Some(p) => {
            report.input("calibration", &p);
            CalibrationFile::load(&p)?.pose()
        }
        None => ExtrinsicPose { theta: cfg.pose.theta, d: cfg.pose.d },
    };
    pose.validate_for(&cfg.cylinder()).map_err(|e| CliError::Input(format!("calibration: {e}")))?;
    Ok(pose)
}

#[derive(Serialize)]
struct ContactRow {
    frame: usize,
    u: f64,
    v: f64,
    area: usize,
    x: f64,
    y: f64,
    z: f64,
    central_angle: f64,
    axial_position: f64,
}

#[derive(Serialize)]
struct SkippedRow {
    frame: usize,
    u: f64,
    v: f64,
    reason: String,
}

#[derive(Serialize)]
struct CellRow {
    angle: f64,
    axial_fraction: f64,
    count: usize,
    mean_mm: f64,
    std_mm: f64,
    hardware_mean_mm: Option<f64>,
    hardware_std_mm: Option<f64>,
}

#[derive(Serialize)]
struct LocalizationSummary {
    mean_mm: f64,
    std_mm: f64,
    matched: usize,
    unmatched_estimates: usize,
    unmatched_truth: usize,
    cells: Vec<CellRow>,
}

fn run_localize(
    cfg: &RunConfig,
    frames_dir: &Path,
    calibration: Option<&Path>,
    truth: Option<&Path>,
    report: &mut RunReport,
    timer: &mut Timer,
) -> Result<(), CliError> {
    report.input("frames", frames_dir);
    let pose = resolve_pose(cfg, calibration, report)?;
    let frames = timer.stage("load", || load_frames(frames_dir, cfg))?;
    let cyl = cfg.cylinder();
    let params = cfg.localize.params();
    let found = timer
        .stage("localize", || {
            frames
                .iter()
                .map(|f| localize_contacts(f, &cfg.camera, &pose, &cyl, &params).map(|l| (f.index, l)))
                .collect::<rollsense_core::Result<Vec<_>>>()
        })
        .stage("localize")?;
    let mut contacts = Vec::new();
    let mut skipped = Vec::new();
    let mut estimates = Vec::new();
    for (frame, loc) in &found {
        for e in &loc.estimates {
            contacts.push(ContactRow {
                frame: *frame,
                u: e.pixel.u,
                v: e.pixel.v,
                area: e.area,
                x: e.point.x,
                y: e.point.y,
                z: e.point.z,
                central_angle: e.central_angle,
                axial_position: e.axial_position,
            });
            estimates.push(*e);
        }
        skipped.extend(loc.skipped.iter().map(|s| SkippedRow {
            frame: *frame,
            u: s.pixel.u,
            v: s.pixel.v,
            reason: s.reason.clone(),
        }));
    }
    report.output("pose", &pose);
    report.output("contacts", &contacts);
    if !skipped.is_empty() {
        report.output("skipped", &skipped);
    }

    if let Some(path) = truth {
        report.input("truth", path);
        let manifest = Manifest::load(path)?;
        let labeled = manifest.labeled_contacts();
        if labeled.is_empty() {
            return Err(CliError::Input(format!("{}: no labeled contacts", path.display())));
        }
        let layout = &cfg.taps;
        let eval = timer.stage("evaluate", || evaluate_localization(&estimates, &labeled, layout, cfg.localize.gate_mm));
        let standard = layout.angles.len() == 5 && layout.axial_fractions.len() == 3;
        let n_ax = layout.axial_fractions.len();
        let cells = eval
            .cells
            .iter()
            .enumerate()
            .map(|(i, c)| {
                let hw = standard.then(|| HARDWARE_REFERENCE_MM[i / n_ax][i % n_ax]);
                CellRow {
                    angle: c.angle,
                    axial_fraction: c.axial_fraction,
                    count: c.count,
                    mean_mm: c.mean_mm,
                    std_mm: c.std_mm,
                    hardware_mean_mm: hw.map(|h| h.0),
                    hardware_std_mm: hw.map(|h| h.1),
                }
            })
            .collect();
        report.output(
            "evaluation",
            &LocalizationSummary {
                mean_mm: eval.mean_mm,
                std_mm: eval.std_mm,
                matched: eval.matches.len(),
                unmatched_estimates: eval.unmatched_estimates.len(),
                unmatched_truth: eval.unmatched_truth.len(),
                cells,
            },
        );
    }
    Ok(())
}

#[derive(Serialize)]
struct ShiftRow {
    from: usize,
    to: usize,
    dy: i32,
    mae: f64,
    unique: bool,
    subpixel: Option<f64>,
    truth: Option<i32>,
}

#[derive(Serialize)]
struct ShiftAccuracy {
    pairs: usize,
    exact: usize,
    within_one: usize,
}

#[derive(Serialize)]
struct MapSummary {
    file: String,
    width: u32,
    height: u32,
    patch_height: u32,
    patch_top_row: u32,
    offsets: Vec<i64>,
}

#[derive(Serialize)]
struct MappingMetrics {
    ssim: f64,
    psnr_db: f64,
    mae_percent: f64,
    /// `[x, y, width, height]` of the scored reference region.
    region: [u32; 4],
    aligned_file: String,
    real_data_ssim_range: [f64; 2],
    ssim_in_real_data_range: bool,
}

#[derive(Serialize)]
struct HardwareRow {
    speed: &'static str,
    ssim: [f64; 2],
    psnr_db: [f64; 2],
    mae_percent: [f64; 2],
}

fn run_stitch(
    cfg: &RunConfig,
    frames_dir: &Path,
    reference: Option<PathBuf>,
    truth: Option<&Path>,
    out: &Path,
    report: &mut RunReport,
    timer: &mut Timer,
) -> Result<(), CliError> {
    report.input("frames", frames_dir);
    let frames = timer.stage("load", || load_frames(frames_dir, cfg))?;
    let map = timer.stage("stitch", || stitch(&frames, &cfg.stitch)).stage("stitch")?;
    save_png(&map.pixels, &out.join("map.png"))?;

    let manifest = match truth {
        Some(p) => {
            report.input("truth", p);
            Some(Manifest::load(p)?)
        }
        None => None,
    };
    let truth_shift = |i: usize| -> Option<i32> {
        let m = manifest.as_ref()?;
        m.frames.iter().find(|f| f.index == frames[i + 1].index)?.shift_rounded
    };
    let rows: Vec<ShiftRow> = map
        .shifts
        .iter()
        .enumerate()
        .map(|(i, s)| ShiftRow {
            from: frames[i].index,
            to: frames[i + 1].index,
            dy: s.dy,
            mae: s.mae_at_dy,
            unique: s.unique,
            subpixel: s.subpixel,
            truth: truth_shift(i),
        })
        .collect();
    report.output(
        "map",
        &MapSummary {
            file: "map.png".into(),
            width: map.pixels.width(),
            height: map.pixels.height(),
            patch_height: map.patch_height,
            patch_top_row: map.patch_top_row,
            offsets: map.offsets.clone(),
        },
    );
    let compared: Vec<(i32, i32)> = rows.iter().filter_map(|r| r.truth.map(|t| (r.dy, t))).collect();
    if !compared.is_empty() {
        report.output(
            "shift_accuracy",
            &ShiftAccuracy {
                pairs: compared.len(),
                exact: compared.iter().filter(|(a, b)| a == b).count(),
                within_one: compared.iter().filter(|(a, b)| (a - b).abs() <= 1).count(),
            },
        );
    }
    report.output("shifts", &rows);

    let manifest_dir = truth.and_then(Path::parent).unwrap_or(Path::new("."));
    let reference = reference.or_else(|| {
        manifest.as_ref().and_then(|m| m.reference.as_ref()).map(|r| manifest_dir.join(&r.file))
    });
    let Some(reference) = reference else { return Ok(()) };
    report.input("reference", &reference);
    let ref_img = load_gray(&reference)?;

    let (map_pts, ref_pts) = if let Some(a) = &cfg.align {
        let p = |v: [f64; 2]| PixelPoint::new(v[0], v[1]);
        ([p(a.map[0]), p(a.map[1])], [p(a.reference[0]), p(a.reference[1])])
    } else if let Some(info) = manifest.as_ref().and_then(|m| m.reference.as_ref().map(|r| (m, r))) {
        let (m, r) = info;
        let mut truth: Vec<_> = Vec::with_capacity(frames.len());
        for f in &frames {
            let row = m.frames.iter().find(|mf| mf.index == f.index).ok_or_else(|| {
                CliError::Input(format!("frame {} missing from the truth manifest", f.index))
            })?;
            truth.push(rollsense_core::simulator::FrameTruth {
                contact_y: row.contact_y_mm,
                pose: m.pose,
                contacts: Vec::new(),
                shift_px: row.shift_px,
            });
        }
        let cyl = rollsense_core::CylinderModel::new(m.radius_mm).stage("align")?;
        truth_alignment_points(&map.offsets, map.patch_top_row, &truth, &m.camera, &cyl, r.origin_offset_mm, r.px_per_mm)
            .stage("align")?
    } else {
        return Err(CliError::Config(
            "a reference image needs alignment points: set [align] or pass a roll manifest with --truth".into(),
        ));
    };
    let spec = derive_affine(map_pts, ref_pts).stage("align")?;
    let (metrics, region, aligned) =
        timer.stage("score", || score_alignment(&map.pixels, &ref_img, &spec.affine)).stage("score")?;
    save_png(&aligned, &out.join("aligned.png"))?;
    let (lo, hi) = REAL_DATA_SSIM_RANGE;
    report.output(
        "metrics",
        &MappingMetrics {
            ssim: metrics.ssim,
            psnr_db: metrics.psnr_db,
            mae_percent: metrics.mae_percent,
            region: [region.0, region.1, region.2, region.3],
            aligned_file: "aligned.png".into(),
            real_data_ssim_range: [lo, hi],
            ssim_in_real_data_range: (lo..=hi).contains(&metrics.ssim),
        },
    );
    report.output("alignment", &BTreeMap::from([("affine", spec.affine.m)]));
    let hardware: Vec<HardwareRow> = HARDWARE_REFERENCE
        .iter()
        .map(|&(speed, s, p, m)| HardwareRow {
            speed,
            ssim: [s.0, s.1],
            psnr_db: [p.0, p.1],
            mae_percent: [m.0, m.1],
        })
        .collect();
    report.output("hardware_reference", &hardware);
    Ok(())
}

fn run_evaluate(a: &Path, b: &Path, report: &mut RunReport, timer: &mut Timer) -> Result<(), CliError> {
    report.input("a", a);
    report.input("b", b);
    let (ia, ib) = (load_gray(a)?, load_gray(b)?);
    let metrics = timer.stage("evaluate", || evaluate(&ia, &ib)).stage("evaluate")?;
    report.output("metrics", &metrics);
    Ok(())
}
