//! Dense 2-D grids: scalar images, two-channel vector fields, interpolation,
//! Gaussian smoothing and image pyramids.
//!
//! Coordinates are `(x, y)` = (column, row) with the origin at the centre of
//! the top-left pixel. Every sampling and convolution clamps to the border.

use rayon::prelude::*;

use crate::error::{Error, Result};

/// A row-major grid of real values (an image, a confidence map, a Jacobian map...).
#[derive(Clone, Debug, PartialEq)]
pub struct ScalarField {
    width: usize,
    height: usize,
    data: Vec<f64>,
}

/// A two-channel grid of horizontal (`u`) and vertical (`v`) components in pixels.
#[derive(Clone, Debug, PartialEq)]
pub struct Vec2Field {
    pub u: ScalarField,
    pub v: ScalarField,
}

fn check_dims(width: usize, height: usize) -> Result<()> {
    if width < 2 || height < 2 {
        return Err(Error::DimMismatch(format!(
            "grid must be at least 2x2, got {width}x{height}"
        )));
    }
    Ok(())
}

impl ScalarField {
    pub fn new(width: usize, height: usize, data: Vec<f64>) -> Result<Self> {
        check_dims(width, height)?;
        if data.len() != width * height {
            return Err(Error::DimMismatch(format!(
                "{} values for a {width}x{height} grid",
                data.len()
            )));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite);
        }
        Ok(Self {
            width,
            height,
            data,
        })
    }

    /// Builds a field without validating finiteness. Panics on bad dimensions.
    pub(crate) fn from_raw(width: usize, height: usize, data: Vec<f64>) -> Self {
        assert!(width >= 2 && height >= 2, "grid must be at least 2x2");
        assert_eq!(data.len(), width * height);
        Self {
            width,
            height,
            data,
        }
    }

    pub fn filled(width: usize, height: usize, value: f64) -> Self {
        Self::from_raw(width, height, vec![value; width * height])
    }

    pub fn zeros(width: usize, height: usize) -> Self {
        Self::filled(width, height, 0.0)
    }

    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                data.push(f(x, y));
            }
        }
        Self::from_raw(width, height, data)
    }

    #[inline]
    pub fn width(&self) -> usize {
        self.width
    }

    #[inline]
    pub fn height(&self) -> usize {
        self.height
    }

    #[inline]
    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> f64 {
        self.data[y * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, value: f64) {
        self.data[y * self.width + x] = value;
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        Self::from_raw(self.width, self.height, self.data.iter().map(|&v| f(v)).collect())
    }

    pub fn zip_map(&self, other: &Self, f: impl Fn(f64, f64) -> f64) -> Self {
        debug_assert_eq!(self.dims(), other.dims());
        Self::from_raw(
            self.width,
            self.height,
            self.data
                .iter()
                .zip(&other.data)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        )
    }

    pub fn mean(&self) -> f64 {
        self.data.iter().sum::<f64>() / self.data.len() as f64
    }

    pub fn min_max(&self) -> (f64, f64) {
        self.data
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| {
                (lo.min(v), hi.max(v))
            })
    }

    /// Copies the `w`x`h` window whose top-left pixel is `(x0, y0)`.
    /// Pixels outside the grid are clamped to the border.
    pub fn crop(&self, x0: isize, y0: isize, w: usize, h: usize) -> Self {
        let max_x = self.width as isize - 1;
        let max_y = self.height as isize - 1;
        Self::from_fn(w, h, |x, y| {
            let sx = (x0 + x as isize).clamp(0, max_x) as usize;
            let sy = (y0 + y as isize).clamp(0, max_y) as usize;
            self.get(sx, sy)
        })
    }

    /// Bilinear sample with clamp-to-edge.
    #[inline]
    pub fn sample(&self, x: f64, y: f64) -> f64 {
        BilinearCell::locate(self.width, self.height, x, y).interpolate(&self.data)
    }
}

impl Vec2Field {
    pub fn new(u: ScalarField, v: ScalarField) -> Result<Self> {
        if u.dims() != v.dims() {
            return Err(Error::DimMismatch(format!(
                "u is {:?}, v is {:?}",
                u.dims(),
                v.dims()
            )));
        }
        Ok(Self { u, v })
    }

    pub fn zeros(width: usize, height: usize) -> Self {
        Self {
            u: ScalarField::zeros(width, height),
            v: ScalarField::zeros(width, height),
        }
    }

    pub fn constant(width: usize, height: usize, u: f64, v: f64) -> Self {
        Self {
            u: ScalarField::filled(width, height, u),
            v: ScalarField::filled(width, height, v),
        }
    }

    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> (f64, f64)) -> Self {
        let mut u = Vec::with_capacity(width * height);
        let mut v = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                let (a, b) = f(x, y);
                u.push(a);
                v.push(b);
            }
        }
        Self {
            u: ScalarField::from_raw(width, height, u),
            v: ScalarField::from_raw(width, height, v),
        }
    }

    #[inline]
    pub fn width(&self) -> usize {
        self.u.width
    }

    #[inline]
    pub fn height(&self) -> usize {
        self.u.height
    }

    #[inline]
    pub fn dims(&self) -> (usize, usize) {
        self.u.dims()
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> (f64, f64) {
        (self.u.get(x, y), self.v.get(x, y))
    }

    #[inline]
    pub fn sample(&self, x: f64, y: f64) -> (f64, f64) {
        let cell = BilinearCell::locate(self.width(), self.height(), x, y);
        (cell.interpolate(self.u.data()), cell.interpolate(self.v.data()))
    }

    pub fn is_finite(&self) -> bool {
        self.u.is_finite() && self.v.is_finite()
    }

    pub fn scaled(&self, s: f64) -> Self {
        Self {
            u: self.u.map(|a| a * s),
            v: self.v.map(|a| a * s),
        }
    }

    pub fn add(&self, other: &Self) -> Self {
        Self {
            u: self.u.zip_map(&other.u, |a, b| a + b),
            v: self.v.zip_map(&other.v, |a, b| a + b),
        }
    }

    pub fn sub(&self, other: &Self) -> Self {
        Self {
            u: self.u.zip_map(&other.u, |a, b| a - b),
            v: self.v.zip_map(&other.v, |a, b| a - b),
        }
    }

    /// Per-pixel Euclidean norm.
    pub fn magnitude(&self) -> ScalarField {
        self.u.zip_map(&self.v, |a, b| a.hypot(b))
    }

    pub fn max_magnitude(&self) -> f64 {
        self.magnitude().min_max().1
    }

    pub fn crop(&self, x0: isize, y0: isize, w: usize, h: usize) -> Self {
        Self {
            u: self.u.crop(x0, y0, w, h),
            v: self.v.crop(x0, y0, w, h),
        }
    }
}

/// Location of a bilinear sample: the four cell corners, their weights and
/// whether each axis fell inside the grid before clamping.
#[derive(Clone, Copy, Debug)]
pub(crate) struct BilinearCell {
    pub idx: [usize; 4],
    pub weights: [f64; 4],
    pub fx: f64,
    pub fy: f64,
    pub inside_x: bool,
    pub inside_y: bool,
}

impl BilinearCell {
    #[inline]
    pub fn locate(width: usize, height: usize, x: f64, y: f64) -> Self {
        let max_x = (width - 1) as f64;
        let max_y = (height - 1) as f64;
        let inside_x = (0.0..=max_x).contains(&x);
        let inside_y = (0.0..=max_y).contains(&y);
        let cx = if x.is_nan() { 0.0 } else { x.clamp(0.0, max_x) };
        let cy = if y.is_nan() { 0.0 } else { y.clamp(0.0, max_y) };
        let x0 = (cx.floor() as usize).min(width - 2);
        let y0 = (cy.floor() as usize).min(height - 2);
        let fx = cx - x0 as f64;
        let fy = cy - y0 as f64;
        let i00 = y0 * width + x0;
        Self {
            idx: [i00, i00 + 1, i00 + width, i00 + width + 1],
            weights: [
                (1.0 - fx) * (1.0 - fy),
                fx * (1.0 - fy),
                (1.0 - fx) * fy,
                fx * fy,
            ],
            fx,
            fy,
            inside_x,
            inside_y,
        }
    }

    #[inline]
    pub fn interpolate(&self, data: &[f64]) -> f64 {
        let [a, b, c, d] = self.idx.map(|i| data[i]);
        (1.0 - self.fy) * ((1.0 - self.fx) * a + self.fx * b)
            + self.fy * ((1.0 - self.fx) * c + self.fx * d)
    }

    /// Partial derivatives of the interpolant with respect to the query
    /// coordinates. Zero along an axis whose coordinate was clamped.
    #[inline]
    pub fn gradient(&self, data: &[f64]) -> (f64, f64) {
        let [a, b, c, d] = self.idx.map(|i| data[i]);
        let dx = if self.inside_x {
            (1.0 - self.fy) * (b - a) + self.fy * (d - c)
        } else {
            0.0
        };
        let dy = if self.inside_y {
            (1.0 - self.fx) * (c - a) + self.fx * (d - b)
        } else {
            0.0
        };
        (dx, dy)
    }
}

/// Bilinear interpolation with clamp-to-edge; exact at integer coordinates.
pub fn bilinear_sample(field: &ScalarField, x: f64, y: f64) -> f64 {
    field.sample(x, y)
}

/// Normalized 1-D Gaussian taps for offsets `-r..=r`, `r = ceil(3 sigma)`.
pub fn gaussian_kernel(sigma: f64) -> Vec<f64> {
    let radius = (3.0 * sigma).ceil() as isize;
    let taps: Vec<f64> = (-radius..=radius)
        .map(|i| (-(i * i) as f64 / (2.0 * sigma * sigma)).exp())
        .collect();
    let sum: f64 = taps.iter().sum();
    taps.into_iter().map(|t| t / sum).collect()
}

fn convolve_rows(src: &ScalarField, kernel: &[f64]) -> ScalarField {
    let (w, h) = src.dims();
    let r = (kernel.len() / 2) as isize;
    let mut out = vec![0.0; w * h];
    out.par_chunks_mut(w).enumerate().for_each(|(y, row)| {
        let line = &src.data[y * w..(y + 1) * w];
        for (x, o) in row.iter_mut().enumerate() {
            let mut acc = 0.0;
            for (k, &t) in kernel.iter().enumerate() {
                let sx = (x as isize + k as isize - r).clamp(0, w as isize - 1) as usize;
                acc += t * line[sx];
            }
            *o = acc;
        }
    });
    ScalarField::from_raw(w, h, out)
}

fn convolve_cols(src: &ScalarField, kernel: &[f64]) -> ScalarField {
    let (w, h) = src.dims();
    let r = (kernel.len() / 2) as isize;
    let mut out = vec![0.0; w * h];
    out.par_chunks_mut(w).enumerate().for_each(|(y, row)| {
        for (k, &t) in kernel.iter().enumerate() {
            let sy = (y as isize + k as isize - r).clamp(0, h as isize - 1) as usize;
            let line = &src.data[sy * w..(sy + 1) * w];
            for (o, &s) in row.iter_mut().zip(line) {
                *o += t * s;
            }
        }
    });
    ScalarField::from_raw(w, h, out)
}

/// Grids that can be smoothed, decimated and resampled as a unit.
pub trait GridField: Clone + Send + Sync {
    fn dims(&self) -> (usize, usize);
    /// Separable Gaussian smoothing; `sigma == 0` is the identity.
    fn smoothed(&self, sigma: f64) -> Self;
    /// Keeps every second row and column starting at index 0.
    fn decimated(&self) -> Self;
    /// Bilinear resampling to `width`x`height`, output pixel `p` reading
    /// input position `p * scale`.
    fn resampled(&self, width: usize, height: usize, scale: f64) -> Self;
}

impl GridField for ScalarField {
    fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    fn smoothed(&self, sigma: f64) -> Self {
        if sigma <= 0.0 {
            return self.clone();
        }
        let kernel = gaussian_kernel(sigma);
        convolve_cols(&convolve_rows(self, &kernel), &kernel)
    }

    fn decimated(&self) -> Self {
        let w = self.width.div_ceil(2);
        let h = self.height.div_ceil(2);
        Self::from_fn(w, h, |x, y| self.get(2 * x, 2 * y))
    }

    fn resampled(&self, width: usize, height: usize, scale: f64) -> Self {
        let mut out = vec![0.0; width * height];
        out.par_chunks_mut(width).enumerate().for_each(|(y, row)| {
            for (x, o) in row.iter_mut().enumerate() {
                *o = self.sample(x as f64 * scale, y as f64 * scale);
            }
        });
        Self::from_raw(width, height, out)
    }
}

impl GridField for Vec2Field {
    fn dims(&self) -> (usize, usize) {
        self.u.dims()
    }

    fn smoothed(&self, sigma: f64) -> Self {
        Self {
            u: self.u.smoothed(sigma),
            v: self.v.smoothed(sigma),
        }
    }

    fn decimated(&self) -> Self {
        Self {
            u: self.u.decimated(),
            v: self.v.decimated(),
        }
    }

    fn resampled(&self, width: usize, height: usize, scale: f64) -> Self {
        Self {
            u: self.u.resampled(width, height, scale),
            v: self.v.resampled(width, height, scale),
        }
    }
}

/// Gaussian smoothing of any grid (kernel truncated at 3 sigma, clamped borders).
pub fn gaussian_smooth<T: GridField>(field: &T, sigma: f64) -> T {
    field.smoothed(sigma)
}

/// Multi-resolution stack; level 0 is full resolution.
#[derive(Clone, Debug)]
pub struct Pyramid<T> {
    pub levels: Vec<T>,
}

impl<T> Pyramid<T> {
    pub fn len(&self) -> usize {
        self.levels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.levels.is_empty()
    }

    pub fn level(&self, k: usize) -> &T {
        &self.levels[k]
    }

    pub fn coarsest(&self) -> &T {
        self.levels.last().expect("pyramid has at least one level")
    }
}

/// Checks that `levels` halvings of `(w, h)` stay at least 2x2.
pub fn check_pyramid_dims(width: usize, height: usize, levels: usize) -> Result<()> {
    if levels == 0 {
        return Err(Error::InvalidConfig("pyramid needs at least one level".into()));
    }
    let (mut w, mut h) = (width, height);
    for level in 0..levels {
        if w < 2 || h < 2 {
            return Err(Error::TooManyLevels {
                levels,
                level,
                width: w,
                height: h,
            });
        }
        w = w.div_ceil(2);
        h = h.div_ceil(2);
    }
    Ok(())
}

/// Builds a pyramid whose level `k+1` is level `k` smoothed with
/// `sigma_for(k)` and decimated by two.
pub fn build_pyramid_with<T: GridField>(
    field: &T,
    levels: usize,
    sigma_for: impl Fn(usize) -> f64,
) -> Result<Pyramid<T>> {
    let (w, h) = field.dims();
    check_pyramid_dims(w, h, levels)?;
    let mut out = Vec::with_capacity(levels);
    out.push(field.clone());
    for k in 1..levels {
        let next = out[k - 1].smoothed(sigma_for(k - 1)).decimated();
        out.push(next);
    }
    Ok(Pyramid { levels: out })
}

/// Standard pyramid: smooth with sigma 1 then stride-2 subsample.
pub fn build_pyramid<T: GridField>(field: &T, levels: usize) -> Result<Pyramid<T>> {
    build_pyramid_with(field, levels, |_| 1.0)
}
