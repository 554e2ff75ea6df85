//! Diffeomorphic deformations from stationary velocity fields.
//!
//! A deformation is stored as its displacement `u`, so that
//! `phi(p) = p + u(p)` and the identity is the zero field.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::grid::{BilinearCell, ScalarField, Vec2Field};

pub const DEFAULT_SQUARING_STEPS: usize = 7;

#[derive(Clone, Debug, PartialEq)]
pub struct DeformationField {
    pub displacement: Vec2Field,
}

/// Per-pixel determinant of the deformation's spatial Jacobian.
#[derive(Clone, Debug, PartialEq)]
pub struct JacobianMap {
    pub det: ScalarField,
}

impl DeformationField {
    pub fn identity(width: usize, height: usize) -> Self {
        Self {
            displacement: Vec2Field::zeros(width, height),
        }
    }

    pub fn from_displacement(displacement: Vec2Field) -> Self {
        Self { displacement }
    }

    pub fn translation(width: usize, height: usize, dx: f64, dy: f64) -> Self {
        Self {
            displacement: Vec2Field::constant(width, height, dx, dy),
        }
    }

    pub fn dims(&self) -> (usize, usize) {
        self.displacement.dims()
    }

    /// Maps a point: `phi(p) = p + u(p)` with bilinear interpolation of `u`.
    pub fn apply(&self, x: f64, y: f64) -> (f64, f64) {
        let (dx, dy) = self.displacement.sample(x, y);
        (x + dx, y + dy)
    }
}

impl JacobianMap {
    /// Fraction of pixels at least `margin` px from the border with det > 0.
    pub fn positive_fraction(&self, margin: usize) -> f64 {
        let (w, h) = self.det.dims();
        let mut total = 0usize;
        let mut positive = 0usize;
        for y in margin..h.saturating_sub(margin) {
            for x in margin..w.saturating_sub(margin) {
                total += 1;
                if self.det.get(x, y) > 0.0 {
                    positive += 1;
                }
            }
        }
        if total == 0 {
            return 1.0;
        }
        positive as f64 / total as f64
    }
}

fn ensure_same_dims(a: (usize, usize), b: (usize, usize), what: &str) -> Result<()> {
    if a != b {
        return Err(Error::DimMismatch(format!("{what}: {a:?} vs {b:?}")));
    }
    Ok(())
}

/// Displacement of `a o b`: `u_b(p) + u_a(p + u_b(p))`.
pub(crate) fn compose_displacements(a: &Vec2Field, b: &Vec2Field) -> Vec2Field {
    let (w, h) = b.dims();
    let mut u = vec![0.0; w * h];
    let mut v = vec![0.0; w * h];
    u.par_chunks_mut(w)
        .zip(v.par_chunks_mut(w))
        .enumerate()
        .for_each(|(y, (ur, vr))| {
            for x in 0..w {
                let (bu, bv) = b.get(x, y);
                let cell = BilinearCell::locate(w, h, x as f64 + bu, y as f64 + bv);
                ur[x] = bu + cell.interpolate(a.u.data());
                vr[x] = bv + cell.interpolate(a.v.data());
            }
        });
    Vec2Field {
        u: ScalarField::from_raw(w, h, u),
        v: ScalarField::from_raw(w, h, v),
    }
}

/// `(phi_a o phi_b)(p) = phi_a(phi_b(p))`.
pub fn compose(phi_a: &DeformationField, phi_b: &DeformationField) -> Result<DeformationField> {
    ensure_same_dims(phi_a.dims(), phi_b.dims(), "compose")?;
    Ok(DeformationField {
        displacement: compose_displacements(&phi_a.displacement, &phi_b.displacement),
    })
}

/// Scaling and squaring: every intermediate displacement, `u_0 = v / 2^S`
/// through `u_S = exp(v)`. Used by the optimizer's backward pass.
pub(crate) fn squaring_chain(v: &Vec2Field, squaring_steps: usize) -> Vec<Vec2Field> {
    let mut chain = Vec::with_capacity(squaring_steps + 1);
    chain.push(v.scaled(0.5f64.powi(squaring_steps as i32)));
    for k in 0..squaring_steps {
        let next = compose_displacements(&chain[k], &chain[k]);
        chain.push(next);
    }
    chain
}

/// Exponential of a stationary velocity field by scaling and squaring.
pub fn integrate_svf(v: &Vec2Field, squaring_steps: usize) -> Result<DeformationField> {
    if squaring_steps == 0 {
        return Err(Error::InvalidConfig("squaring_steps must be >= 1".into()));
    }
    if !v.is_finite() {
        return Err(Error::NonFinite);
    }
    let displacement = squaring_chain(v, squaring_steps)
        .pop()
        .expect("chain is never empty");
    Ok(DeformationField { displacement })
}

/// `out(p) = img(phi(p))`, clamped bilinear sampling.
pub fn warp_image(img: &ScalarField, phi: &DeformationField) -> Result<ScalarField> {
    ensure_same_dims(img.dims(), phi.dims(), "warp_image")?;
    Ok(warp_raw(img, &phi.displacement))
}

pub(crate) fn warp_raw(img: &ScalarField, disp: &Vec2Field) -> ScalarField {
    let (w, h) = img.dims();
    let mut out = vec![0.0; w * h];
    out.par_chunks_mut(w).enumerate().for_each(|(y, row)| {
        for (x, o) in row.iter_mut().enumerate() {
            let (du, dv) = disp.get(x, y);
            *o = img.sample(x as f64 + du, y as f64 + dv);
        }
    });
    ScalarField::from_raw(w, h, out)
}

/// Central difference in the interior, one-sided at the borders, unit spacing.
fn diff_x(f: &ScalarField, x: usize, y: usize) -> f64 {
    let w = f.width();
    if x == 0 {
        f.get(1, y) - f.get(0, y)
    } else if x == w - 1 {
        f.get(w - 1, y) - f.get(w - 2, y)
    } else {
        0.5 * (f.get(x + 1, y) - f.get(x - 1, y))
    }
}

fn diff_y(f: &ScalarField, x: usize, y: usize) -> f64 {
    let h = f.height();
    if y == 0 {
        f.get(x, 1) - f.get(x, 0)
    } else if y == h - 1 {
        f.get(x, h - 1) - f.get(x, h - 2)
    } else {
        0.5 * (f.get(x, y + 1) - f.get(x, y - 1))
    }
}

pub fn jacobian_determinant(phi: &DeformationField) -> JacobianMap {
    let d = &phi.displacement;
    let (w, h) = d.dims();
    let det = ScalarField::from_fn(w, h, |x, y| {
        let uxx = diff_x(&d.u, x, y);
        let uxy = diff_y(&d.u, x, y);
        let uyx = diff_x(&d.v, x, y);
        let uyy = diff_y(&d.v, x, y);
        (1.0 + uxx) * (1.0 + uyy) - uxy * uyx
    });
    JacobianMap { det }
}
