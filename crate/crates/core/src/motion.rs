//! Variational estimation of stationary-velocity motion between frames.
//!
//! For a pair `(fixed, moving)` the velocity `v` minimizes
//!
//! ```text
//! E(v) = D(moving o exp(v), fixed) + lambda_reg * sum |grad v|^2
//! ```
//!
//! so that `exp(v)` carries fixed-frame points onto their position in the
//! moving frame. `D` is the sum of squared differences (default) or negated
//! local normalized cross-correlation. The gradient is exact: it is
//! back-propagated through the warp and through every squaring step.

use std::io::Write;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::diffeo::{self, DeformationField};
use crate::error::{Error, Result};
use crate::grid::{build_pyramid, BilinearCell, GridField, ScalarField, Vec2Field};

/// Consecutive failed backtracking halvings tolerated per iteration.
pub const MAX_BACKTRACKS: usize = 20;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DeltaTMode {
    Fixed,
    UniformRandom,
}

/// How the long and short motions are optimized.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Coupling {
    /// One joint energy and one shared line search over both velocities.
    Complete,
    /// Two independent estimations.
    Partial,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Similarity {
    Ssd,
    /// Local normalized cross-correlation over `(2r+1)^2` windows.
    Lncc { radius: usize },
}

#[derive(Clone, Debug, PartialEq)]
pub struct MotionConfig {
    pub lambda_reg: f64,
    pub pyramid_levels: usize,
    pub iters_per_level: usize,
    /// Largest per-iteration velocity update, in pixels.
    pub step_size: f64,
    pub squaring_steps: usize,
    /// Gaussian width used to smooth the descent direction; 0 uses the raw gradient.
    pub gradient_sigma: f64,
    pub delta_t_max: usize,
    pub delta_t_mode: DeltaTMode,
    pub coupling: Coupling,
    pub similarity: Similarity,
}

impl Default for MotionConfig {
    fn default() -> Self {
        Self {
            lambda_reg: 1.0,
            pyramid_levels: 3,
            iters_per_level: 50,
            step_size: 0.5,
            squaring_steps: diffeo::DEFAULT_SQUARING_STEPS,
            gradient_sigma: 2.0,
            delta_t_max: 5,
            delta_t_mode: DeltaTMode::Fixed,
            coupling: Coupling::Complete,
            similarity: Similarity::Ssd,
        }
    }
}

impl MotionConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidConfig(m.to_string()));
        if !(self.step_size > 0.0) {
            return bad("step_size must be > 0");
        }
        if !(self.lambda_reg >= 0.0) {
            return bad("lambda_reg must be >= 0");
        }
        if !(self.gradient_sigma >= 0.0 && self.gradient_sigma.is_finite()) {
            return bad("gradient_sigma must be finite and >= 0");
        }
        if self.delta_t_max < 1 {
            return bad("delta_t_max must be >= 1");
        }
        if self.pyramid_levels < 1 {
            return bad("pyramid_levels must be >= 1");
        }
        if self.squaring_steps < 1 {
            return bad("squaring_steps must be >= 1");
        }
        if let Similarity::Lncc { radius: 0 } = self.similarity {
            return bad("lncc radius must be >= 1");
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Energy {
    pub data: f64,
    pub reg: f64,
    pub total: f64,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EnergyRecord {
    /// Pyramid level the record was taken at (0 = full resolution).
    pub level: usize,
    pub energy: Energy,
}

/// Energies after every accepted step; the first record of each level is
/// the energy before that level's first step.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct EnergyTrace {
    pub records: Vec<EnergyRecord>,
}

impl EnergyTrace {
    pub fn final_energy(&self) -> Option<Energy> {
        self.records.last().map(|r| r.energy)
    }

    /// Writes `iter,data,reg,total`.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["iter", "data", "reg", "total"])?;
        for (i, r) in self.records.iter().enumerate() {
            w.write_record([
                i.to_string(),
                r.energy.data.to_string(),
                r.energy.reg.to_string(),
                r.energy.total.to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Registration energy for one `(fixed, moving)` pair at one resolution.
#[derive(Clone, Copy, Debug)]
pub struct EnergyModel<'a> {
    pub fixed: &'a ScalarField,
    pub moving: &'a ScalarField,
    pub lambda_reg: f64,
    pub squaring_steps: usize,
    pub similarity: Similarity,
}

impl<'a> EnergyModel<'a> {
    pub fn new(fixed: &'a ScalarField, moving: &'a ScalarField, cfg: &MotionConfig) -> Self {
        Self {
            fixed,
            moving,
            lambda_reg: cfg.lambda_reg,
            squaring_steps: cfg.squaring_steps,
            similarity: cfg.similarity,
        }
    }

    pub fn evaluate(&self, v: &Vec2Field) -> Energy {
        let chain = diffeo::squaring_chain(v, self.squaring_steps);
        let warped = diffeo::warp_raw(self.moving, chain.last().unwrap());
        let data = match self.similarity {
            Similarity::Ssd => ssd(&warped, self.fixed).0,
            Similarity::Lncc { radius } => lncc(&warped, self.fixed, radius, false).0,
        };
        let reg = self.lambda_reg * smoothness(v);
        Energy {
            data,
            reg,
            total: data + reg,
        }
    }

    pub fn evaluate_with_gradient(&self, v: &Vec2Field) -> (Energy, Vec2Field) {
        let (w, h) = v.dims();
        let chain = diffeo::squaring_chain(v, self.squaring_steps);
        let last = chain.last().unwrap();
        let warped = diffeo::warp_raw(self.moving, last);
        let (data, d_warped) = match self.similarity {
            Similarity::Ssd => ssd(&warped, self.fixed),
            Similarity::Lncc { radius } => lncc(&warped, self.fixed, radius, true),
        };
        let d_warped = d_warped.expect("gradient requested");

        // Through the warp: d/du_S of moving(p + u_S(p)).
        let mut gu = vec![0.0; w * h];
        let mut gv = vec![0.0; w * h];
        for y in 0..h {
            for x in 0..w {
                let i = y * w + x;
                let (du, dv) = last.get(x, y);
                let cell = BilinearCell::locate(w, h, x as f64 + du, y as f64 + dv);
                let (mx, my) = cell.gradient(self.moving.data());
                gu[i] = d_warped[i] * mx;
                gv[i] = d_warped[i] * my;
            }
        }

        // Through each squaring step u_{k+1}(p) = u_k(p) + u_k(p + u_k(p)).
        for k in (0..self.squaring_steps).rev() {
            let uk = &chain[k];
            let mut nu = gu.clone();
            let mut nv = gv.clone();
            for y in 0..h {
                for x in 0..w {
                    let i = y * w + x;
                    let (gx, gy) = (gu[i], gv[i]);
                    if gx == 0.0 && gy == 0.0 {
                        continue;
                    }
                    let (du, dv) = uk.get(x, y);
                    let cell = BilinearCell::locate(w, h, x as f64 + du, y as f64 + dv);
                    let (uxx, uxy) = cell.gradient(uk.u.data());
                    let (uyx, uyy) = cell.gradient(uk.v.data());
                    nu[i] += gx * uxx + gy * uyx;
                    nv[i] += gx * uxy + gy * uyy;
                    for (&j, &wt) in cell.idx.iter().zip(&cell.weights) {
                        nu[j] += wt * gx;
                        nv[j] += wt * gy;
                    }
                }
            }
            gu = nu;
            gv = nv;
        }

        let scale = 0.5f64.powi(self.squaring_steps as i32);
        let mut grad = Vec2Field {
            u: ScalarField::from_raw(w, h, gu.into_iter().map(|g| g * scale).collect()),
            v: ScalarField::from_raw(w, h, gv.into_iter().map(|g| g * scale).collect()),
        };
        smoothness_gradient(v, self.lambda_reg, &mut grad);

        let reg = self.lambda_reg * smoothness(v);
        (
            Energy {
                data,
                reg,
                total: data + reg,
            },
            grad,
        )
    }
}

fn ssd(warped: &ScalarField, fixed: &ScalarField) -> (f64, Option<Vec<f64>>) {
    let mut e = 0.0;
    let mut g = Vec::with_capacity(warped.data().len());
    for (&a, &b) in warped.data().iter().zip(fixed.data()) {
        let r = a - b;
        e += r * r;
        g.push(2.0 * r);
    }
    (e, Some(g))
}

const LNCC_EPS: f64 = 1e-5;

/// Sums over the `(2r+1)^2` window around each pixel, truncated at the border.
fn box_sum(data: &[f64], w: usize, h: usize, r: usize) -> Vec<f64> {
    let mut integral = vec![0.0; (w + 1) * (h + 1)];
    for y in 0..h {
        let mut row = 0.0;
        for x in 0..w {
            row += data[y * w + x];
            integral[(y + 1) * (w + 1) + x + 1] = integral[y * (w + 1) + x + 1] + row;
        }
    }
    let mut out = vec![0.0; w * h];
    for y in 0..h {
        let y0 = y.saturating_sub(r);
        let y1 = (y + r + 1).min(h);
        for x in 0..w {
            let x0 = x.saturating_sub(r);
            let x1 = (x + r + 1).min(w);
            out[y * w + x] = integral[y1 * (w + 1) + x1] - integral[y0 * (w + 1) + x1]
                - integral[y1 * (w + 1) + x0]
                + integral[y0 * (w + 1) + x0];
        }
    }
    out
}

/// Negated sum of squared local correlation coefficients and, optionally,
/// its derivative with respect to every warped intensity.
fn lncc(
    warped: &ScalarField,
    fixed: &ScalarField,
    r: usize,
    want_grad: bool,
) -> (f64, Option<Vec<f64>>) {
    let (w, h) = warped.dims();
    let i_ = warped.data();
    let j_ = fixed.data();
    let ones = vec![1.0; w * h];
    let n = box_sum(&ones, w, h, r);
    let si = box_sum(i_, w, h, r);
    let sj = box_sum(j_, w, h, r);
    let sii = box_sum(&i_.iter().map(|a| a * a).collect::<Vec<_>>(), w, h, r);
    let sjj = box_sum(&j_.iter().map(|a| a * a).collect::<Vec<_>>(), w, h, r);
    let sij = box_sum(
        &i_.iter().zip(j_).map(|(a, b)| a * b).collect::<Vec<_>>(),
        w,
        h,
        r,
    );

    let mut energy = 0.0;
    let mut a = vec![0.0; w * h];
    let mut a_jbar = vec![0.0; w * h];
    let mut b = vec![0.0; w * h];
    let mut b_ibar = vec![0.0; w * h];
    for p in 0..w * h {
        let cross = sij[p] - si[p] * sj[p] / n[p];
        let ivar = sii[p] - si[p] * si[p] / n[p];
        let jvar = sjj[p] - sj[p] * sj[p] / n[p];
        let d = ivar * jvar + LNCC_EPS;
        energy -= cross * cross / d;
        a[p] = 2.0 * cross / d;
        b[p] = 2.0 * cross * cross * jvar / (d * d);
        a_jbar[p] = a[p] * sj[p] / n[p];
        b_ibar[p] = b[p] * si[p] / n[p];
    }
    if !want_grad {
        return (energy, None);
    }
    let sa = box_sum(&a, w, h, r);
    let saj = box_sum(&a_jbar, w, h, r);
    let sb = box_sum(&b, w, h, r);
    let sbi = box_sum(&b_ibar, w, h, r);
    let grad = (0..w * h)
        .map(|q| -(j_[q] * sa[q] - saj[q] - i_[q] * sb[q] + sbi[q]))
        .collect();
    (energy, Some(grad))
}

/// Sum of squared forward differences of both components.
pub fn smoothness(v: &Vec2Field) -> f64 {
    let (w, h) = v.dims();
    let mut acc = 0.0;
    for c in [&v.u, &v.v] {
        for y in 0..h {
            for x in 0..w {
                let f = c.get(x, y);
                if x + 1 < w {
                    acc += (c.get(x + 1, y) - f).powi(2);
                }
                if y + 1 < h {
                    acc += (c.get(x, y + 1) - f).powi(2);
                }
            }
        }
    }
    acc
}

fn smoothness_gradient(v: &Vec2Field, lambda: f64, grad: &mut Vec2Field) {
    if lambda == 0.0 {
        return;
    }
    let (w, h) = v.dims();
    for (c, g) in [(&v.u, &mut grad.u), (&v.v, &mut grad.v)] {
        let gd = g.data_mut();
        for y in 0..h {
            for x in 0..w {
                let i = y * w + x;
                let f = c.get(x, y);
                if x + 1 < w {
                    let d = 2.0 * lambda * (c.get(x + 1, y) - f);
                    gd[i + 1] += d;
                    gd[i] -= d;
                }
                if y + 1 < h {
                    let d = 2.0 * lambda * (c.get(x, y + 1) - f);
                    gd[i + w] += d;
                    gd[i] -= d;
                }
            }
        }
    }
}

fn add_energy(a: Energy, b: Energy) -> Energy {
    Energy {
        data: a.data + b.data,
        reg: a.reg + b.reg,
        total: a.total + b.total,
    }
}

fn evaluate_all(models: &[EnergyModel], vs: &[Vec2Field]) -> Energy {
    models
        .iter()
        .zip(vs)
        .map(|(m, v)| m.evaluate(v))
        .fold(
            Energy {
                data: 0.0,
                reg: 0.0,
                total: 0.0,
            },
            add_energy,
        )
}

fn evaluate_all_with_gradient(models: &[EnergyModel], vs: &[Vec2Field]) -> (Energy, Vec<Vec2Field>) {
    let mut total = Energy {
        data: 0.0,
        reg: 0.0,
        total: 0.0,
    };
    let mut grads = Vec::with_capacity(models.len());
    for (m, v) in models.iter().zip(vs) {
        let (e, g) = m.evaluate_with_gradient(v);
        total = add_energy(total, e);
        grads.push(g);
    }
    (total, grads)
}

fn precondition(grads: Vec<Vec2Field>, sigma: f64) -> Vec<Vec2Field> {
    if sigma > 0.0 {
        grads.iter().map(|g| g.smoothed(sigma)).collect()
    } else {
        grads
    }
}

/// Gradient descent with halving backtracking over one or more velocities
/// sharing a single step length. The direction is the negative gradient,
/// Gaussian smoothed, scaled so its largest vector is `alpha` pixels long.
fn descend(
    models: &[EnergyModel],
    vs: &mut [Vec2Field],
    cfg: &MotionConfig,
    level: usize,
    trace: &mut EnergyTrace,
) -> Result<()> {
    let (mut energy, mut grads) = evaluate_all_with_gradient(models, vs);
    grads = precondition(grads, cfg.gradient_sigma);
    if !energy.total.is_finite() {
        return Err(Error::Diverged("initial energy is not finite".into()));
    }
    trace.records.push(EnergyRecord { level, energy });
    let mut alpha = cfg.step_size;

    for _ in 0..cfg.iters_per_level {
        let gmax = grads
            .iter()
            .map(|g| g.max_magnitude())
            .fold(0.0, f64::max);
        if !(gmax > 1e-14) {
            break;
        }
        let mut accepted = None;
        let mut last_finite = true;
        for _ in 0..MAX_BACKTRACKS {
            let s = alpha / gmax;
            let trial: Vec<Vec2Field> = vs
                .iter()
                .zip(&grads)
                .map(|(v, g)| v.sub(&g.scaled(s)))
                .collect();
            let e = evaluate_all(models, &trial);
            last_finite = e.total.is_finite();
            if last_finite && e.total < energy.total {
                accepted = Some(trial);
                break;
            }
            alpha *= 0.5;
        }
        let Some(next) = accepted else {
            if !last_finite {
                return Err(Error::Diverged(format!(
                    "{MAX_BACKTRACKS} consecutive backtracking steps produced non-finite energy at level {level}"
                )));
            }
            // No decrease at a sub-micropixel step: converged at this level.
            break;
        };
        vs.clone_from_slice(&next);
        let previous = energy.total;
        let (e, g) = evaluate_all_with_gradient(models, vs);
        energy = e;
        grads = precondition(g, cfg.gradient_sigma);
        trace.records.push(EnergyRecord { level, energy });
        alpha = (alpha * 2.0).min(cfg.step_size);
        if previous - energy.total <= 1e-10 * previous.abs() {
            break;
        }
    }
    Ok(())
}

fn check_pair(fixed: &ScalarField, moving: &ScalarField) -> Result<()> {
    if fixed.dims() != moving.dims() {
        return Err(Error::DimMismatch(format!(
            "fixed is {:?}, moving is {:?}",
            fixed.dims(),
            moving.dims()
        )));
    }
    Ok(())
}

fn upsample_velocity(v: &Vec2Field, dims: (usize, usize)) -> Vec2Field {
    v.resampled(dims.0, dims.1, 0.5).scaled(2.0)
}

/// Coarse-to-fine joint estimation of one velocity per `(fixed, moving)` pair.
fn estimate_joint(
    pairs: &[(&ScalarField, &ScalarField)],
    cfg: &MotionConfig,
) -> Result<(Vec<Vec2Field>, EnergyTrace)> {
    cfg.validate()?;
    let mut pyramids = Vec::with_capacity(pairs.len());
    for (fixed, moving) in pairs {
        check_pair(fixed, moving)?;
        pyramids.push((
            build_pyramid(*fixed, cfg.pyramid_levels)?,
            build_pyramid(*moving, cfg.pyramid_levels)?,
        ));
    }
    let mut trace = EnergyTrace::default();
    let mut vs: Vec<Vec2Field> = Vec::new();
    for level in (0..cfg.pyramid_levels).rev() {
        let dims = pyramids[0].0.level(level).dims();
        vs = if vs.is_empty() {
            vec![Vec2Field::zeros(dims.0, dims.1); pairs.len()]
        } else {
            vs.iter().map(|v| upsample_velocity(v, dims)).collect()
        };
        let models: Vec<EnergyModel> = pyramids
            .iter()
            .map(|(f, m)| EnergyModel::new(f.level(level), m.level(level), cfg))
            .collect();
        descend(&models, &mut vs, cfg, level, &mut trace)?;
    }
    Ok((vs, trace))
}

/// Estimates `v` such that `moving(exp(v)(p)) ~ fixed(p)`.
pub fn estimate_pair(
    fixed: &ScalarField,
    moving: &ScalarField,
    cfg: &MotionConfig,
) -> Result<(Vec2Field, DeformationField, EnergyTrace)> {
    let (mut vs, trace) = estimate_joint(&[(fixed, moving)], cfg)?;
    let v = vs.pop().expect("one velocity per pair");
    let phi = diffeo::integrate_svf(&v, cfg.squaring_steps)?;
    Ok((v, phi, trace))
}

/// Short interval for frame `t`: `min(delta_t_max, t)` in fixed mode, a
/// seeded uniform draw from `1..=min(delta_t_max, t)` otherwise.
pub fn sample_delta_t(t: usize, cfg: &MotionConfig, seed: u64) -> usize {
    let upper = cfg.delta_t_max.min(t).max(1);
    match cfg.delta_t_mode {
        DeltaTMode::Fixed => upper,
        DeltaTMode::UniformRandom => {
            let mut rng =
                ChaCha8Rng::seed_from_u64(seed ^ (t as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15));
            rng.random_range(1..=upper)
        }
    }
}

/// Long motion (template frame 0 -> frame `t - delta_t`) and short motion
/// (frame `t - delta_t` -> frame `t`) with their velocities.
#[derive(Clone, Debug)]
pub struct LongShortMotion {
    pub phi_l: DeformationField,
    pub phi_s: DeformationField,
    pub v_l: Vec2Field,
    pub v_s: Vec2Field,
    pub t: usize,
    pub delta_t: usize,
    /// One joint trace for complete coupling, `[long, short]` for partial.
    pub traces: Vec<EnergyTrace>,
}

impl LongShortMotion {
    pub fn zero(width: usize, height: usize, t: usize, delta_t: usize) -> Self {
        Self {
            phi_l: DeformationField::identity(width, height),
            phi_s: DeformationField::identity(width, height),
            v_l: Vec2Field::zeros(width, height),
            v_s: Vec2Field::zeros(width, height),
            t,
            delta_t,
            traces: Vec::new(),
        }
    }

    pub fn dims(&self) -> (usize, usize) {
        self.phi_l.dims()
    }
}

/// Long/short estimation from the three frames involved: the long
/// template, the short template and the current frame.
pub fn estimate_long_short_frames(
    template: &ScalarField,
    short_template: &ScalarField,
    current: &ScalarField,
    t: usize,
    delta_t: usize,
    cfg: &MotionConfig,
) -> Result<LongShortMotion> {
    check_pair(template, short_template)?;
    check_pair(short_template, current)?;
    let (v_l, v_s, traces) = match cfg.coupling {
        Coupling::Complete => {
            let (mut vs, trace) =
                estimate_joint(&[(template, short_template), (short_template, current)], cfg)?;
            let v_s = vs.pop().unwrap();
            let v_l = vs.pop().unwrap();
            (v_l, v_s, vec![trace])
        }
        Coupling::Partial => {
            let (long, short) = rayon::join(
                || estimate_joint(&[(template, short_template)], cfg),
                || estimate_joint(&[(short_template, current)], cfg),
            );
            let (mut vl, tl) = long?;
            let (mut vs, ts) = short?;
            (vl.pop().unwrap(), vs.pop().unwrap(), vec![tl, ts])
        }
    };
    Ok(LongShortMotion {
        phi_l: diffeo::integrate_svf(&v_l, cfg.squaring_steps)?,
        phi_s: diffeo::integrate_svf(&v_s, cfg.squaring_steps)?,
        v_l,
        v_s,
        t,
        delta_t,
        traces,
    })
}

pub fn estimate_long_short(
    frames: &[ScalarField],
    t: usize,
    delta_t: usize,
    cfg: &MotionConfig,
) -> Result<LongShortMotion> {
    if t < 1 || delta_t < 1 || delta_t > t || t >= frames.len() {
        return Err(Error::InvalidConfig(format!(
            "need 1 <= delta_t <= t < {} (got t={t}, delta_t={delta_t})",
            frames.len()
        )));
    }
    estimate_long_short_frames(&frames[0], &frames[t - delta_t], &frames[t], t, delta_t, cfg)
}
