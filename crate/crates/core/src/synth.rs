//! Synthetic sequences with known landmark trajectories.
//!
//! The texture is a field of Gaussian blobs evaluated analytically, so a
//! frame can be rendered at any warped coordinate without resampling.

use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;

use crate::diffeo::integrate_svf;
use crate::error::{Error, Result};
use crate::grid::{ScalarField, Vec2Field};
use crate::io::{save_frame_png16, write_annotations, write_tracklets, Annotation, AnnotationSet};
use crate::tracker::{TrackPoint, Tracklet};

/// Landmark id used in generated annotations.
pub const SYNTH_LANDMARK: u32 = 1;

const CELL: f64 = 8.0;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SynthMotion {
    /// Rigid drift of the whole texture.
    Translation,
    /// Oscillating smooth deformation given by a scaled stationary velocity field.
    Svf,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SynthConfig {
    pub motion: SynthMotion,
    pub frames: usize,
    pub seed: u64,
    pub width: usize,
    pub height: usize,
    pub landmark: (f64, f64),
    /// Per-frame drift for [`SynthMotion::Translation`].
    pub velocity: (f64, f64),
    /// Largest displacement of any deformed frame for [`SynthMotion::Svf`].
    pub max_displacement: f64,
    /// Oscillation period in frames for [`SynthMotion::Svf`].
    pub period: f64,
    pub noise_sigma: f64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            motion: SynthMotion::Translation,
            frames: 100,
            seed: 0,
            width: 256,
            height: 192,
            landmark: (96.0, 96.0),
            velocity: (0.4, 0.3),
            max_displacement: 4.0,
            period: 20.0,
            noise_sigma: 0.01,
        }
    }
}

#[derive(Clone, Debug)]
pub struct SynthSequence {
    pub frames: Vec<ScalarField>,
    /// True landmark position per frame.
    pub truth: Vec<(f64, f64)>,
}

impl SynthSequence {
    pub fn truth_tracklet(&self) -> Tracklet {
        Tracklet {
            landmark_id: SYNTH_LANDMARK,
            points: self
                .truth
                .iter()
                .enumerate()
                .map(|(frame, &(x, y))| TrackPoint { frame, x, y, out_of_view: false })
                .collect(),
        }
    }

    pub fn annotations(&self) -> AnnotationSet {
        let mut set = AnnotationSet::default();
        set.landmarks.insert(
            SYNTH_LANDMARK,
            self.truth
                .iter()
                .enumerate()
                .map(|(frame, &(x, y))| Annotation { frame, x, y })
                .collect(),
        );
        set
    }
}

#[derive(Clone, Copy)]
struct Blob {
    x: f64,
    y: f64,
    inv_two_var: f64,
    radius: f64,
    amp: f64,
}

/// Blobs bucketed on a coarse grid for fast point evaluation.
struct Texture {
    x0: f64,
    y0: f64,
    cols: usize,
    rows: usize,
    cells: Vec<Vec<Blob>>,
}

impl Texture {
    fn random(width: usize, height: usize, margin: f64, rng: &mut ChaCha8Rng) -> Self {
        let (x0, y0) = (-margin, -margin);
        let (span_x, span_y) = (width as f64 + 2.0 * margin, height as f64 + 2.0 * margin);
        let cols = (span_x / CELL).ceil() as usize;
        let rows = (span_y / CELL).ceil() as usize;
        let mut cells = vec![Vec::new(); cols * rows];
        let count = (span_x * span_y / 30.0) as usize;
        for _ in 0..count {
            let sigma: f64 = rng.random_range(1.5..4.0);
            let b = Blob {
                x: x0 + rng.random_range(0.0..span_x),
                y: y0 + rng.random_range(0.0..span_y),
                inv_two_var: 0.5 / (sigma * sigma),
                radius: 4.0 * sigma,
                amp: rng.random_range(0.05..0.35),
            };
            let cx = (((b.x - x0) / CELL) as usize).min(cols - 1);
            let cy = (((b.y - y0) / CELL) as usize).min(rows - 1);
            cells[cy * cols + cx].push(b);
        }
        Self { x0, y0, cols, rows, cells }
    }

    fn eval(&self, x: f64, y: f64) -> f64 {
        let cx = ((x - self.x0) / CELL).floor() as isize;
        let cy = ((y - self.y0) / CELL).floor() as isize;
        let mut v = 0.15;
        for j in (cy - 2).max(0)..=(cy + 2).min(self.rows as isize - 1) {
            for i in (cx - 2).max(0)..=(cx + 2).min(self.cols as isize - 1) {
                for b in &self.cells[j as usize * self.cols + i as usize] {
                    let (dx, dy) = (x - b.x, y - b.y);
                    let d2 = dx * dx + dy * dy;
                    if d2 < b.radius * b.radius {
                        v += b.amp * (-d2 * b.inv_two_var).exp();
                    }
                }
            }
        }
        v
    }

    /// Renders `texture(map(x, y))` at every pixel.
    fn render(&self, width: usize, height: usize, map: impl Fn(usize, usize) -> (f64, f64) + Sync) -> ScalarField {
        let mut out = vec![0.0; width * height];
        out.par_chunks_mut(width).enumerate().for_each(|(y, row)| {
            for (x, o) in row.iter_mut().enumerate() {
                let (sx, sy) = map(x, y);
                *o = self.eval(sx, sy);
            }
        });
        ScalarField::new(width, height, out).expect("finite render")
    }
}

/// Sum of a few broad Gaussian velocity bumps, one of them near the landmark.
fn velocity_field(cfg: &SynthConfig, rng: &mut ChaCha8Rng) -> Vec2Field {
    let (w, h) = (cfg.width as f64, cfg.height as f64);
    let mut bumps = vec![(
        cfg.landmark.0 + rng.random_range(-12.0..12.0),
        cfg.landmark.1 + rng.random_range(-12.0..12.0),
        rng.random_range(30.0..45.0),
        rng.random_range(0.0..std::f64::consts::TAU),
    )];
    for _ in 0..3 {
        bumps.push((
            rng.random_range(0.0..w),
            rng.random_range(0.0..h),
            rng.random_range(25.0..50.0),
            rng.random_range(0.0..std::f64::consts::TAU),
        ));
    }
    Vec2Field::from_fn(cfg.width, cfg.height, |x, y| {
        let (mut u, mut v) = (0.0, 0.0);
        for &(bx, by, s, angle) in &bumps {
            let g = (-((x as f64 - bx).powi(2) + (y as f64 - by).powi(2)) / (2.0 * s * s)).exp();
            u += g * angle.cos();
            v += g * angle.sin();
        }
        (u, v)
    })
}

/// Rescales `w` until `exp(w)` moves no point by more than `target` px.
fn calibrate(w: Vec2Field, target: f64) -> Result<Vec2Field> {
    let mut w = w.scaled(target / w.max_magnitude());
    for _ in 0..4 {
        let m = integrate_svf(&w, 7)?.displacement.max_magnitude();
        w = w.scaled(target / m);
    }
    Ok(w)
}

pub fn generate(cfg: &SynthConfig) -> Result<SynthSequence> {
    if cfg.frames < 2 {
        return Err(Error::InvalidConfig("a synthetic sequence needs at least 2 frames".into()));
    }
    if cfg.width < 16 || cfg.height < 16 {
        return Err(Error::InvalidConfig("synthetic frames must be at least 16x16".into()));
    }
    let (lx, ly) = cfg.landmark;
    if !(lx >= 0.0 && ly >= 0.0 && lx <= (cfg.width - 1) as f64 && ly <= (cfg.height - 1) as f64) {
        return Err(Error::InvalidConfig("landmark lies outside the frame".into()));
    }
    if cfg.noise_sigma < 0.0 || !cfg.noise_sigma.is_finite() {
        return Err(Error::InvalidConfig("noise_sigma must be non-negative".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let n = cfg.frames as f64;
    let margin = match cfg.motion {
        SynthMotion::Translation => 32.0 + n * cfg.velocity.0.abs().max(cfg.velocity.1.abs()),
        SynthMotion::Svf => 32.0 + cfg.max_displacement,
    };
    let texture = Texture::random(cfg.width, cfg.height, margin, &mut rng);
    let (w, h) = (cfg.width, cfg.height);

    let mut frames = Vec::with_capacity(cfg.frames);
    let mut truth = Vec::with_capacity(cfg.frames);
    match cfg.motion {
        SynthMotion::Translation => {
            for t in 0..cfg.frames {
                let (sx, sy) = (cfg.velocity.0 * t as f64, cfg.velocity.1 * t as f64);
                frames.push(texture.render(w, h, |x, y| (x as f64 - sx, y as f64 - sy)));
                truth.push((lx + sx, ly + sy));
            }
        }
        SynthMotion::Svf => {
            if !(cfg.max_displacement > 0.0 && cfg.period > 0.0) {
                return Err(Error::InvalidConfig("max_displacement and period must be positive".into()));
            }
            let vel = calibrate(velocity_field(cfg, &mut rng), cfg.max_displacement)?;
            for t in 0..cfg.frames {
                let a = (std::f64::consts::TAU * t as f64 / cfg.period).sin();
                // Frame t shows the texture pushed forward by exp(a·v); pixels
                // look it up through the inverse exp(−a·v).
                let back = integrate_svf(&vel.scaled(-a), 7)?;
                let fwd = integrate_svf(&vel.scaled(a), 7)?;
                frames.push(texture.render(w, h, |x, y| back.apply(x as f64, y as f64)));
                truth.push(fwd.apply(lx, ly));
            }
        }
    }

    if cfg.noise_sigma > 0.0 {
        let normal = Normal::new(0.0, cfg.noise_sigma).map_err(|e| Error::InvalidConfig(e.to_string()))?;
        for (t, f) in frames.iter_mut().enumerate() {
            let mut r = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(0x5EED_0000 + t as u64));
            for v in f.data_mut() {
                *v += normal.sample(&mut r);
            }
        }
    }
    for f in &mut frames {
        for v in f.data_mut() {
            *v = v.clamp(0.0, 1.0);
        }
    }
    Ok(SynthSequence { frames, truth })
}

/// Writes `frames/NNNN.png` (16-bit), `annotations.txt` and `ground_truth.csv` under `dir`.
pub fn write_sequence(seq: &SynthSequence, dir: &Path) -> Result<()> {
    let frame_dir = dir.join("frames");
    fs::create_dir_all(&frame_dir)?;
    for (t, f) in seq.frames.iter().enumerate() {
        save_frame_png16(&frame_dir.join(format!("{:04}.png", t + 1)), f)?;
    }
    write_annotations(fs::File::create(dir.join("annotations.txt"))?, &seq.annotations())?;
    let name = dir
        .file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_else(|| "synthetic".into());
    write_tracklets(fs::File::create(dir.join("ground_truth.csv"))?, &name, &[seq.truth_tracklet()])?;
    Ok(())
}
