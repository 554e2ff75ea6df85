//! Correlation tracking guided by long/short motion.
//!
//! Each frame is matched against a fixed frame-0 exemplar by normalized
//! cross-correlation. Motion estimated on local crops predicts where the
//! landmark should be; the prediction enters twice: as a Gaussian gate on
//! the response and, through the deformation pyramid, as extra feature
//! channels aligned with the prediction.

use rayon::prelude::*;

use crate::diffeo::{jacobian_determinant, DeformationField};
use crate::emma::{emma_align, EmmaConfig};
use crate::error::{Error, Result};
use crate::grid::{build_pyramid_with, GridField, Pyramid, ScalarField};
use crate::motion::{estimate_long_short_frames, sample_delta_t, LongShortMotion, MotionConfig};

/// Variance below which a channel or window counts as flat.
const FLAT: f64 = 1e-12;

/// Stack of equally sized channels.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureMap {
    pub channels: Vec<ScalarField>,
}

impl FeatureMap {
    pub fn new(channels: Vec<ScalarField>) -> Result<Self> {
        let Some(first) = channels.first() else {
            return Err(Error::EmptyInput);
        };
        let dims = first.dims();
        if channels.iter().any(|c| c.dims() != dims) {
            return Err(Error::DimMismatch("feature channels differ in size".into()));
        }
        Ok(Self { channels })
    }

    pub fn channel_count(&self) -> usize {
        self.channels.len()
    }

    pub fn dims(&self) -> (usize, usize) {
        self.channels[0].dims()
    }

    pub fn crop(&self, x0: isize, y0: isize, w: usize, h: usize) -> Self {
        Self {
            channels: self.channels.iter().map(|c| c.crop(x0, y0, w, h)).collect(),
        }
    }

    /// Every channel shifted to zero mean and scaled to unit variance.
    /// Flat channels become zero.
    pub fn normalized(&self) -> Self {
        Self {
            channels: self.channels.iter().map(normalize_channel).collect(),
        }
    }

    pub fn concat(&self, other: &FeatureMap) -> Result<Self> {
        if self.dims() != other.dims() {
            return Err(Error::DimMismatch(format!(
                "cannot concatenate {:?} and {:?} feature maps",
                self.dims(),
                other.dims()
            )));
        }
        let mut channels = self.channels.clone();
        channels.extend(other.channels.iter().cloned());
        Ok(Self { channels })
    }
}

impl GridField for FeatureMap {
    fn dims(&self) -> (usize, usize) {
        self.channels[0].dims()
    }

    fn smoothed(&self, sigma: f64) -> Self {
        Self {
            channels: self.channels.iter().map(|c| c.smoothed(sigma)).collect(),
        }
    }

    fn decimated(&self) -> Self {
        Self {
            channels: self.channels.iter().map(|c| c.decimated()).collect(),
        }
    }

    fn resampled(&self, width: usize, height: usize, scale: f64) -> Self {
        Self {
            channels: self
                .channels
                .iter()
                .map(|c| c.resampled(width, height, scale))
                .collect(),
        }
    }
}

fn normalize_channel(c: &ScalarField) -> ScalarField {
    let n = c.data().len() as f64;
    let mean = c.mean();
    let var = c.data().iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    if var <= FLAT {
        return ScalarField::zeros(c.width(), c.height());
    }
    let sd = var.sqrt();
    c.map(|v| (v - mean) / sd)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum FeatureBank {
    /// Smoothed intensity, x/y gradients and gradient magnitude.
    #[default]
    IntensityGradients,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrackerConfig {
    pub exemplar_size: usize,
    pub search_size: usize,
    pub label_sigma: f64,
    pub prior_sigma: f64,
    pub prior_weight: f64,
    pub dpn_levels: usize,
    /// Pyramid level whose motion channels join the appearance features.
    pub dpn_fuse_level: usize,
    pub use_dpn: bool,
    /// Blend rate of the current appearance into the exemplar; 0 keeps it fixed.
    pub template_update_rate: f64,
    pub feature_bank: FeatureBank,
    /// Seeds the short-interval sampling.
    pub seed: u64,
}

impl Default for TrackerConfig {
    fn default() -> Self {
        Self {
            exemplar_size: 64,
            search_size: 128,
            label_sigma: 2.0,
            prior_sigma: 6.0,
            prior_weight: 0.5,
            dpn_levels: 3,
            dpn_fuse_level: 1,
            use_dpn: true,
            template_update_rate: 0.0,
            feature_bank: FeatureBank::IntensityGradients,
            seed: 0,
        }
    }
}

impl TrackerConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(m));
        if self.exemplar_size < 4 {
            return bad(format!("exemplar_size must be at least 4, got {}", self.exemplar_size));
        }
        if self.search_size <= self.exemplar_size {
            return bad(format!(
                "search_size ({}) must exceed exemplar_size ({})",
                self.search_size, self.exemplar_size
            ));
        }
        if !(0.0..=1.0).contains(&self.prior_weight) {
            return bad(format!("prior_weight must lie in [0, 1], got {}", self.prior_weight));
        }
        if !(self.label_sigma > 0.0 && self.label_sigma.is_finite()) {
            return bad(format!("label_sigma must be positive, got {}", self.label_sigma));
        }
        if !(self.prior_sigma > 0.0 && self.prior_sigma.is_finite()) {
            return bad(format!("prior_sigma must be positive, got {}", self.prior_sigma));
        }
        if self.dpn_levels == 0 || self.dpn_fuse_level >= self.dpn_levels {
            return bad(format!(
                "need dpn_fuse_level < dpn_levels, got {} and {}",
                self.dpn_fuse_level, self.dpn_levels
            ));
        }
        if !(0.0..=1.0).contains(&self.template_update_rate) {
            return bad(format!(
                "template_update_rate must lie in [0, 1], got {}",
                self.template_update_rate
            ));
        }
        Ok(())
    }
}

/// Unnormalized feature bank over a whole image.
pub fn raw_features(img: &ScalarField) -> FeatureMap {
    let s = img.smoothed(1.0);
    let (w, h) = s.dims();
    let diff = |a: f64, b: f64, span: usize| (a - b) / span as f64;
    let gx = ScalarField::from_fn(w, h, |x, y| {
        let (l, r) = (x.saturating_sub(1), (x + 1).min(w - 1));
        diff(s.get(r, y), s.get(l, y), r - l)
    });
    let gy = ScalarField::from_fn(w, h, |x, y| {
        let (t, b) = (y.saturating_sub(1), (y + 1).min(h - 1));
        diff(s.get(x, b), s.get(x, t), b - t)
    });
    let mag = gx.zip_map(&gy, |a, b| a.hypot(b));
    FeatureMap {
        channels: vec![s, gx, gy, mag],
    }
}

pub fn extract_features(img: &ScalarField, cfg: &TrackerConfig) -> FeatureMap {
    match cfg.feature_bank {
        FeatureBank::IntensityGradients => raw_features(img).normalized(),
    }
}

/// Isotropic Gaussian with peak 1 at `center`.
pub fn gaussian_label(center: (f64, f64), sigma: f64, size: (usize, usize)) -> ScalarField {
    let k = 0.5 / (sigma * sigma);
    ScalarField::from_fn(size.0, size.1, |x, y| {
        let dx = x as f64 - center.0;
        let dy = y as f64 - center.1;
        (-(dx * dx + dy * dy) * k).exp()
    })
}

/// `[|φ_l|, |φ_s|, det J(φ_l) − 1, det J(φ_s) − 1]`.
pub fn motion_channels(phi_l: &DeformationField, phi_s: &DeformationField) -> Result<FeatureMap> {
    if phi_l.dims() != phi_s.dims() {
        return Err(Error::DimMismatch(format!(
            "long motion is {:?}, short motion is {:?}",
            phi_l.dims(),
            phi_s.dims()
        )));
    }
    let jac = |phi: &DeformationField| jacobian_determinant(phi).det.map(|d| d - 1.0);
    FeatureMap::new(vec![
        phi_l.displacement.magnitude(),
        phi_s.displacement.magnitude(),
        jac(phi_l),
        jac(phi_s),
    ])
}

/// Deformation pyramid of [`motion_channels`]. Finer levels are reduced
/// with wider kernels: going from level `k` to `k+1` smooths with
/// `sigma = max(levels - 1 - k, 1)`.
pub fn build_dpn_from_fields(
    phi_l: &DeformationField,
    phi_s: &DeformationField,
    levels: usize,
) -> Result<Pyramid<FeatureMap>> {
    let base = motion_channels(phi_l, phi_s)?;
    build_pyramid_with(&base, levels, |k| (levels.saturating_sub(1 + k)).max(1) as f64)
}

pub fn build_dpn(motion: &LongShortMotion, levels: usize) -> Result<Pyramid<FeatureMap>> {
    build_dpn_from_fields(&motion.phi_l, &motion.phi_s, levels)
}

/// Level `level` of the pyramid brought back to `size` by bilinear upsampling.
pub fn dpn_level_at(dpn: &Pyramid<FeatureMap>, level: usize, size: (usize, usize)) -> Result<FeatureMap> {
    if level >= dpn.len() {
        return Err(Error::InvalidConfig(format!(
            "pyramid has {} levels, asked for level {level}",
            dpn.len()
        )));
    }
    let map = dpn.level(level);
    let f = 1usize << level;
    let (lw, lh) = map.dims();
    if lw != size.0.div_ceil(f) || lh != size.1.div_ceil(f) {
        return Err(Error::DimMismatch(format!(
            "pyramid level {level} is {lw}x{lh}, which does not cover {}x{}",
            size.0, size.1
        )));
    }
    Ok(map.resampled(size.0, size.1, 1.0 / f as f64))
}

/// Appends the pyramid's motion channels at `level` and renormalizes.
pub fn fuse(features: &FeatureMap, dpn: &Pyramid<FeatureMap>, level: usize) -> Result<FeatureMap> {
    let motion = dpn_level_at(dpn, level, features.dims())?;
    Ok(features.concat(&motion)?.normalized())
}

#[derive(Clone, Debug, PartialEq)]
pub struct ResponseMap {
    pub scores: ScalarField,
}

/// Summed-area table with a zero first row and column.
fn integral(data: &[f64], w: usize, h: usize, square: bool) -> Vec<f64> {
    let mut s = vec![0.0; (w + 1) * (h + 1)];
    for y in 0..h {
        let mut row = 0.0;
        for x in 0..w {
            let v = data[y * w + x];
            row += if square { v * v } else { v };
            s[(y + 1) * (w + 1) + x + 1] = s[y * (w + 1) + x + 1] + row;
        }
    }
    s
}

/// Valid-mode normalized cross-correlation averaged over channels.
///
/// Entry `(i, j)` scores the exemplar placed with its top-left corner at
/// `(i, j)` of the search map. Flat exemplar channels and flat windows
/// score 0.
pub fn correlate(exemplar: &FeatureMap, search: &FeatureMap) -> Result<ResponseMap> {
    if exemplar.channel_count() != search.channel_count() {
        return Err(Error::ChannelMismatch {
            exemplar: exemplar.channel_count(),
            search: search.channel_count(),
        });
    }
    let (ew, eh) = exemplar.dims();
    let (sw, sh) = search.dims();
    if ew > sw || eh > sh || sw - ew + 1 < 2 || sh - eh + 1 < 2 {
        return Err(Error::DimMismatch(format!(
            "exemplar {ew}x{eh} must be smaller than search {sw}x{sh} in both directions"
        )));
    }
    let (rw, rh) = (sw - ew + 1, sh - eh + 1);
    let n = (ew * eh) as f64;
    let mut total = vec![0.0; rw * rh];
    for (e, s) in exemplar.channels.iter().zip(&search.channels) {
        let mean = e.mean();
        let centered: Vec<f64> = e.data().iter().map(|v| v - mean).collect();
        let e_energy: f64 = centered.iter().map(|v| v * v).sum();
        if e_energy / n <= FLAT {
            continue;
        }
        let e_norm = e_energy.sqrt();
        let sd = s.data();
        let s1 = integral(sd, sw, sh, false);
        let s2 = integral(sd, sw, sh, true);
        let box_sum = |t: &[f64], x: usize, y: usize| {
            let w1 = sw + 1;
            t[(y + eh) * w1 + x + ew] - t[y * w1 + x + ew] - t[(y + eh) * w1 + x] + t[y * w1 + x]
        };
        total.par_chunks_mut(rw).enumerate().for_each(|(j, out)| {
            for (i, o) in out.iter_mut().enumerate() {
                let sum = box_sum(&s1, i, j);
                let sq = box_sum(&s2, i, j);
                let var = sq / n - (sum / n) * (sum / n);
                if var <= FLAT {
                    continue;
                }
                let mut cross = 0.0;
                for y in 0..eh {
                    let er = &centered[y * ew..(y + 1) * ew];
                    let start = (j + y) * sw + i;
                    let sr = &sd[start..start + ew];
                    cross += er.iter().zip(sr).map(|(a, b)| a * b).sum::<f64>();
                }
                let r = cross / (e_norm * (var * n).sqrt());
                *o += r.clamp(-1.0, 1.0);
            }
        });
    }
    let c = exemplar.channel_count() as f64;
    total.iter_mut().for_each(|v| *v /= c);
    Ok(ResponseMap {
        scores: ScalarField::new(rw, rh, total)?,
    })
}

/// Placement of the candidate grid (response map) in motion-crop coordinates:
/// candidate `(i, j)` sits at `origin + (i, j)`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PriorGrid {
    pub origin: (f64, f64),
    pub width: usize,
    pub height: usize,
}

/// Predicted position `prev_pos + φ_s(prev_pos)`.
pub fn predict_position(motion: &LongShortMotion, prev_pos: (f64, f64)) -> (f64, f64) {
    motion.phi_s.apply(prev_pos.0, prev_pos.1)
}

/// Gaussian map of width `prior_sigma` around the predicted position.
pub fn motion_prior_map(
    motion: &LongShortMotion,
    prev_pos: (f64, f64),
    grid: &PriorGrid,
    cfg: &TrackerConfig,
) -> ScalarField {
    let p = predict_position(motion, prev_pos);
    gaussian_label(
        (p.0 - grid.origin.0, p.1 - grid.origin.1),
        cfg.prior_sigma,
        (grid.width, grid.height),
    )
}

/// Min-max normalization; a constant map becomes all ones.
fn min_max_normalized(r: &ScalarField) -> ScalarField {
    let (lo, hi) = r.min_max();
    if hi - lo <= 0.0 {
        return ScalarField::filled(r.width(), r.height(), 1.0);
    }
    let span = hi - lo;
    r.map(|v| (v - lo) / span)
}

/// Subpixel offset of the extremum of a quadratic fitted to a 3×3 patch.
///
/// `f` is row-major with the centre at index 4. The fit uses the basis
/// `{1, x, y, x²−2/3, y²−2/3, xy}`, which is orthogonal on the 3×3 grid.
fn quadratic_offset(f: &[f64; 9]) -> (f64, f64) {
    let (mut c1, mut c2, mut c3, mut c4, mut c5) = (0.0, 0.0, 0.0, 0.0, 0.0);
    for (k, &v) in f.iter().enumerate() {
        let x = (k % 3) as f64 - 1.0;
        let y = (k / 3) as f64 - 1.0;
        c1 += v * x;
        c2 += v * y;
        c3 += v * (x * x - 2.0 / 3.0);
        c4 += v * (y * y - 2.0 / 3.0);
        c5 += v * x * y;
    }
    let (c1, c2, c3, c4, c5) = (c1 / 6.0, c2 / 6.0, c3 / 2.0, c4 / 2.0, c5 / 4.0);
    let det = 4.0 * c3 * c4 - c5 * c5;
    let (dx, dy) = if c3 < 0.0 && det > 0.0 {
        ((c5 * c2 - 2.0 * c4 * c1) / det, (c5 * c1 - 2.0 * c3 * c2) / det)
    } else {
        (
            if c3 < 0.0 { -c1 / (2.0 * c3) } else { 0.0 },
            if c4 < 0.0 { -c2 / (2.0 * c4) } else { 0.0 },
        )
    };
    (dx.clamp(-0.5, 0.5), dy.clamp(-0.5, 0.5))
}

/// Subpixel peak of `(1−w)·r + w·r·prior`, with `r` the min-max normalized
/// response. Ties go to the first maximum in row-major order.
pub fn select_peak(response: &ResponseMap, prior: &ScalarField, w: f64) -> Result<(f64, f64)> {
    let r = &response.scores;
    if r.dims() != prior.dims() {
        return Err(Error::DimMismatch(format!(
            "response is {:?}, prior is {:?}",
            r.dims(),
            prior.dims()
        )));
    }
    let rn = min_max_normalized(r);
    let combined = rn.zip_map(prior, |a, p| (1.0 - w) * a + w * a * p);
    let (cw, ch) = combined.dims();
    let mut best = 0;
    for (k, &v) in combined.data().iter().enumerate() {
        if v > combined.data()[best] {
            best = k;
        }
    }
    let (bx, by) = (best % cw, best / cw);
    if bx == 0 || by == 0 || bx + 1 == cw || by + 1 == ch {
        return Ok((bx as f64, by as f64));
    }
    let mut patch = [0.0; 9];
    for j in 0..3 {
        for i in 0..3 {
            patch[j * 3 + i] = combined.get(bx + i - 1, by + j - 1);
        }
    }
    let (dx, dy) = quadratic_offset(&patch);
    Ok((bx as f64 + dx, by as f64 + dy))
}

/// Squared distance between the normalized response and a Gaussian label
/// centred on the true candidate.
pub fn tracking_loss(response: &ResponseMap, center: (f64, f64), sigma: f64) -> f64 {
    let rn = min_max_normalized(&response.scores);
    let y = gaussian_label(center, sigma, rn.dims());
    rn.data().iter().zip(y.data()).map(|(a, b)| (a - b) * (a - b)).sum()
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TrackPoint {
    pub frame: usize,
    pub x: f64,
    pub y: f64,
    /// The search window had to be pushed back inside the frame.
    pub out_of_view: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Tracklet {
    pub landmark_id: u32,
    pub points: Vec<TrackPoint>,
}

impl Tracklet {
    pub fn position(&self, frame: usize) -> Option<(f64, f64)> {
        self.points
            .binary_search_by_key(&frame, |p| p.frame)
            .ok()
            .map(|i| (self.points[i].x, self.points[i].y))
    }
}

/// Fixed geometry shared by every frame of one track.
struct Layout {
    width: usize,
    height: usize,
    e: usize,
    sw: usize,
    sh: usize,
    /// Top-left of the exemplar (and of the long-motion template crop).
    e0: (isize, isize),
    /// Landmark position inside the exemplar.
    rel: (f64, f64),
}

impl Layout {
    fn new(frame0: &ScalarField, init: (f64, f64), cfg: &TrackerConfig) -> Result<Self> {
        let (width, height) = frame0.dims();
        if !(init.0 >= 0.0 && init.1 >= 0.0 && init.0 <= (width - 1) as f64 && init.1 <= (height - 1) as f64) {
            return Err(Error::OutOfFrame {
                landmark: 0,
                x: init.0,
                y: init.1,
                width,
                height,
            });
        }
        let e = cfg.exemplar_size;
        let (sw, sh) = (cfg.search_size.min(width), cfg.search_size.min(height));
        if sw <= e || sh <= e {
            return Err(Error::InvalidConfig(format!(
                "{width}x{height} frames leave no room to search with a {e} px exemplar"
            )));
        }
        let e0 = corner(init, e);
        Ok(Self {
            width,
            height,
            e,
            sw,
            sh,
            e0,
            rel: (init.0 - e0.0 as f64, init.1 - e0.1 as f64),
        })
    }

    /// Search window around `prev`, clamped into the frame, and whether
    /// clamping was needed.
    fn search_origin(&self, prev: (f64, f64)) -> ((isize, isize), bool) {
        let ideal = (
            prev.0.round() as isize - (self.sw / 2) as isize,
            prev.1.round() as isize - (self.sh / 2) as isize,
        );
        let clamped = (
            ideal.0.clamp(0, (self.width - self.sw) as isize),
            ideal.1.clamp(0, (self.height - self.sh) as isize),
        );
        (clamped, clamped != ideal)
    }

    fn response_dims(&self) -> (usize, usize) {
        (self.sw - self.e + 1, self.sh - self.e + 1)
    }

    /// Landmark position in the frame for candidate `peak`.
    fn position(&self, s0: (isize, isize), peak: (f64, f64)) -> (f64, f64) {
        let x = s0.0 as f64 + peak.0 + self.rel.0;
        let y = s0.1 as f64 + peak.1 + self.rel.1;
        (x.clamp(0.0, (self.width - 1) as f64), y.clamp(0.0, (self.height - 1) as f64))
    }
}

/// Top-left corner of a `size` window centred on `p`.
fn corner(p: (f64, f64), size: usize) -> (isize, isize) {
    let half = (size / 2) as isize;
    (p.0.round() as isize - half, p.1.round() as isize - half)
}

fn appearance(raw: &FeatureMap, origin: (isize, isize), w: usize, h: usize) -> FeatureMap {
    raw.crop(origin.0, origin.1, w, h).normalized()
}

/// Places `motion` (an exemplar-sized map) into a search-sized canvas so that
/// the exemplar's landmark pixel lands on `target`, given in canvas pixels.
fn place_motion(motion: &FeatureMap, rel: (f64, f64), target: (f64, f64), sw: usize, sh: usize) -> FeatureMap {
    let (mw, mh) = motion.dims();
    let (ox, oy) = (target.0 - rel.0, target.1 - rel.1);
    let channels = motion
        .channels
        .iter()
        .map(|c| {
            ScalarField::from_fn(sw, sh, |x, y| {
                let (mx, my) = (x as f64 - ox, y as f64 - oy);
                if mx >= 0.0 && my >= 0.0 && mx <= (mw - 1) as f64 && my <= (mh - 1) as f64 {
                    c.sample(mx, my)
                } else {
                    0.0
                }
            })
        })
        .collect();
    FeatureMap { channels }
}

/// Tracks one landmark from `init` in `frames[0]` through the sequence.
pub fn track_sequence(
    frames: &[ScalarField],
    init: (f64, f64),
    cfg: &TrackerConfig,
    mcfg: &MotionConfig,
    ecfg: &EmmaConfig,
) -> Result<Tracklet> {
    track_landmark(frames, 0, init, cfg, mcfg, ecfg)
}

pub fn track_landmark(
    frames: &[ScalarField],
    landmark_id: u32,
    init: (f64, f64),
    cfg: &TrackerConfig,
    mcfg: &MotionConfig,
    ecfg: &EmmaConfig,
) -> Result<Tracklet> {
    cfg.validate()?;
    mcfg.validate()?;
    if cfg.use_dpn {
        ecfg.validate()?;
    }
    let Some(frame0) = frames.first() else {
        return Err(Error::EmptyInput);
    };
    if frames.iter().any(|f| f.dims() != frame0.dims()) {
        return Err(Error::DimMismatch("frames differ in size".into()));
    }
    let lay = Layout::new(frame0, init, cfg).map_err(|e| match e {
        Error::OutOfFrame { x, y, width, height, .. } => Error::OutOfFrame {
            landmark: landmark_id,
            x,
            y,
            width,
            height,
        },
        e => e,
    })?;
    let e = lay.e;
    let use_motion = cfg.use_dpn || cfg.prior_weight > 0.0;
    // Crops are standardized so the smoothness weight means the same for any contrast.
    let template = normalize_channel(&frame0.crop(lay.e0.0, lay.e0.1, e, e));
    let mut exemplar = appearance(&raw_features(frame0), lay.e0, e, e);
    let (rw, rh) = lay.response_dims();
    let flat_prior = ScalarField::filled(rw, rh, 1.0);

    let mut points = vec![TrackPoint {
        frame: 0,
        x: init.0,
        y: init.1,
        out_of_view: false,
    }];
    for t in 1..frames.len() {
        let prev = (points[t - 1].x, points[t - 1].y);
        let (s0, out_of_view) = lay.search_origin(prev);
        let raw = raw_features(&frames[t]);
        let search_app = appearance(&raw, s0, lay.sw, lay.sh);

        let mut prior = None;
        let (ex, search) = if use_motion {
            let dt = sample_delta_t(t, mcfg, cfg.seed);
            let anchor = points[t - dt];
            let a0 = corner((anchor.x, anchor.y), e);
            let short_template = normalize_channel(&frames[t - dt].crop(a0.0, a0.1, e, e));
            let current = normalize_channel(&frames[t].crop(a0.0, a0.1, e, e));
            let motion = estimate_long_short_frames(&template, &short_template, &current, t, dt, mcfg)?;

            // Landmark carried from frame 0 into the anchor crop, then predicted in frame t.
            let prev_pos = motion.phi_l.apply(lay.rel.0, lay.rel.1);
            let grid = PriorGrid {
                origin: (
                    (s0.0 - a0.0) as f64 + lay.rel.0,
                    (s0.1 - a0.1) as f64 + lay.rel.1,
                ),
                width: rw,
                height: rh,
            };
            if cfg.prior_weight > 0.0 {
                prior = Some(motion_prior_map(&motion, prev_pos, &grid, cfg));
            }
            if cfg.use_dpn {
                let aligned = emma_align(&motion.phi_l, &motion.phi_s, ecfg)?;
                let dpn = build_dpn_from_fields(&aligned.phi_l, &aligned.phi_s, cfg.dpn_levels)?;
                let ex = fuse(&exemplar, &dpn, cfg.dpn_fuse_level)?;
                let p = predict_position(&motion, prev_pos);
                let target = ((a0.0 - s0.0) as f64 + p.0, (a0.1 - s0.1) as f64 + p.1);
                let level = dpn_level_at(&dpn, cfg.dpn_fuse_level, (e, e))?;
                let placed = place_motion(&level, lay.rel, target, lay.sw, lay.sh);
                (ex, search_app.concat(&placed)?.normalized())
            } else {
                (exemplar.clone(), search_app)
            }
        } else {
            (exemplar.clone(), search_app)
        };

        let response = correlate(&ex, &search)?;
        let peak = select_peak(&response, prior.as_ref().unwrap_or(&flat_prior), cfg.prior_weight)?;
        let (x, y) = lay.position(s0, peak);
        if !(x.is_finite() && y.is_finite()) {
            return Err(Error::NonFinite);
        }
        points.push(TrackPoint {
            frame: t,
            x,
            y,
            out_of_view,
        });

        if cfg.template_update_rate > 0.0 {
            let r = cfg.template_update_rate;
            let current = appearance(&raw, corner((x, y), e), e, e);
            let channels = exemplar
                .channels
                .iter()
                .zip(&current.channels)
                .map(|(a, b)| a.zip_map(b, |p, q| (1.0 - r) * p + r * q))
                .collect();
            exemplar = FeatureMap { channels }.normalized();
        }
    }
    Ok(Tracklet { landmark_id, points })
}

/// Tracks several landmarks of one sequence in parallel.
pub fn track_landmarks(
    frames: &[ScalarField],
    inits: &[(u32, (f64, f64))],
    cfg: &TrackerConfig,
    mcfg: &MotionConfig,
    ecfg: &EmmaConfig,
) -> Result<Vec<Tracklet>> {
    inits
        .par_iter()
        .map(|&(id, p)| track_landmark(frames, id, p, cfg, mcfg, ecfg))
        .collect()
}

/// Appearance-only correlation tracker with no motion input.
pub fn track_baseline(frames: &[ScalarField], init: (f64, f64), cfg: &TrackerConfig) -> Result<Tracklet> {
    cfg.validate()?;
    let Some(frame0) = frames.first() else {
        return Err(Error::EmptyInput);
    };
    let lay = Layout::new(frame0, init, cfg)?;
    let exemplar = appearance(&raw_features(frame0), lay.e0, lay.e, lay.e);
    let (rw, rh) = lay.response_dims();
    let ones = ScalarField::filled(rw, rh, 1.0);
    let mut points = vec![TrackPoint {
        frame: 0,
        x: init.0,
        y: init.1,
        out_of_view: false,
    }];
    for (t, frame) in frames.iter().enumerate().skip(1) {
        let last = points[t - 1];
        let (s0, out_of_view) = lay.search_origin((last.x, last.y));
        let search = appearance(&raw_features(frame), s0, lay.sw, lay.sh);
        let peak = select_peak(&correlate(&exemplar, &search)?, &ones, 0.0)?;
        let (x, y) = lay.position(s0, peak);
        points.push(TrackPoint {
            frame: t,
            x,
            y,
            out_of_view,
        });
    }
    Ok(Tracklet { landmark_id: 0, points })
}
