//! Expectation-maximization alignment of long and short motion.
//!
//! Fields are cut into non-overlapping displacement patches ("descriptors").
//! The short motion supplies the initial seeds, the long motion is softly
//! assigned to them, and both fields receive the reconstruction as a residual.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::diffeo::DeformationField;
use crate::error::{Error, Result};
use crate::grid::{ScalarField, Vec2Field};

/// Column totals below this leave the previous seed untouched.
const EMPTY_COLUMN: f64 = 1e-12;

/// Dense row-major matrix.
#[derive(Clone, Debug, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn from_rows(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::DimMismatch(format!(
                "{} values for a {rows}x{cols} matrix",
                data.len()
            )));
        }
        Ok(Self { rows, cols, data })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// `self · otherᵀ`.
    pub fn mul_transpose(&self, other: &Matrix) -> Result<Matrix> {
        if self.cols != other.cols {
            return Err(Error::DimMismatch(format!(
                "inner dimensions {} and {}",
                self.cols, other.cols
            )));
        }
        let mut out = Matrix::zeros(self.rows, other.rows);
        out.data
            .par_chunks_mut(other.rows.max(1))
            .enumerate()
            .for_each(|(r, out_row)| {
                let a = self.row(r);
                for (c, o) in out_row.iter_mut().enumerate() {
                    *o = dot(a, other.row(c));
                }
            });
        Ok(out)
    }

    /// `self · other`.
    pub fn mul(&self, other: &Matrix) -> Result<Matrix> {
        if self.cols != other.rows {
            return Err(Error::DimMismatch(format!(
                "inner dimensions {} and {}",
                self.cols, other.rows
            )));
        }
        let mut out = Matrix::zeros(self.rows, other.cols);
        out.data
            .par_chunks_mut(other.cols.max(1))
            .enumerate()
            .for_each(|(r, out_row)| {
                for (i, &a) in self.row(r).iter().enumerate() {
                    if a != 0.0 {
                        for (o, &b) in out_row.iter_mut().zip(other.row(i)) {
                            *o += a * b;
                        }
                    }
                }
            });
        Ok(out)
    }

    pub fn add(&self, other: &Matrix) -> Result<Matrix> {
        if (self.rows, self.cols) != (other.rows, other.cols) {
            return Err(Error::DimMismatch(format!(
                "{}x{} vs {}x{}",
                self.rows, self.cols, other.rows, other.cols
            )));
        }
        let data = self.data.iter().zip(&other.data).map(|(a, b)| a + b).collect();
        Ok(Matrix {
            rows: self.rows,
            cols: self.cols,
            data,
        })
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Geometry needed to turn a descriptor matrix back into a field.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct BlockLayout {
    pub width: usize,
    pub height: usize,
    pub patch: usize,
    pub blocks_x: usize,
    pub blocks_y: usize,
}

impl BlockLayout {
    pub fn new(width: usize, height: usize, patch: usize) -> Self {
        Self {
            width,
            height,
            patch,
            blocks_x: width.div_ceil(patch),
            blocks_y: height.div_ceil(patch),
        }
    }

    pub fn count(&self) -> usize {
        self.blocks_x * self.blocks_y
    }

    pub fn dim(&self) -> usize {
        2 * self.patch * self.patch
    }
}

/// Cuts the displacement into `patch`×`patch` blocks, one row per block.
///
/// Each row holds the block's u values then its v values, both row-major.
/// Blocks hanging over the right or bottom edge repeat the edge pixels.
pub fn descriptorize(phi: &DeformationField, patch: usize) -> Result<(Matrix, BlockLayout)> {
    if patch == 0 {
        return Err(Error::InvalidConfig("descriptor patch must be positive".into()));
    }
    let (w, h) = phi.dims();
    let layout = BlockLayout::new(w, h, patch);
    let d = layout.dim();
    let pp = patch * patch;
    let disp = &phi.displacement;
    let mut m = Matrix::zeros(layout.count(), d);
    for by in 0..layout.blocks_y {
        for bx in 0..layout.blocks_x {
            let r = by * layout.blocks_x + bx;
            let row = &mut m.data[r * d..(r + 1) * d];
            for j in 0..patch {
                let y = (by * patch + j).min(h - 1);
                for i in 0..patch {
                    let x = (bx * patch + i).min(w - 1);
                    let (u, v) = disp.get(x, y);
                    row[j * patch + i] = u;
                    row[pp + j * patch + i] = v;
                }
            }
        }
    }
    Ok((m, layout))
}

/// Inverse of [`descriptorize`]; padding entries are dropped.
pub fn reassemble(desc: &Matrix, layout: &BlockLayout) -> Result<DeformationField> {
    if desc.rows != layout.count() || desc.cols != layout.dim() {
        return Err(Error::DimMismatch(format!(
            "{}x{} descriptors for a {}x{} layout with patch {}",
            desc.rows, desc.cols, layout.width, layout.height, layout.patch
        )));
    }
    let p = layout.patch;
    let pp = p * p;
    let mut u = ScalarField::zeros(layout.width, layout.height);
    let mut v = ScalarField::zeros(layout.width, layout.height);
    for by in 0..layout.blocks_y {
        for bx in 0..layout.blocks_x {
            let row = desc.row(by * layout.blocks_x + bx);
            for j in 0..p {
                let y = by * p + j;
                if y >= layout.height {
                    break;
                }
                for i in 0..p {
                    let x = bx * p + i;
                    if x >= layout.width {
                        break;
                    }
                    u.set(x, y, row[j * p + i]);
                    v.set(x, y, row[pp + j * p + i]);
                }
            }
        }
    }
    Ok(DeformationField::from_displacement(Vec2Field::new(u, v)?))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum Kernel {
    #[default]
    InnerProduct,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EmmaConfig {
    pub k: usize,
    pub iterations: usize,
    pub descriptor_patch: usize,
    pub kernel: Kernel,
    /// Seeds the farthest-point start index.
    pub seed: u64,
}

impl Default for EmmaConfig {
    fn default() -> Self {
        Self {
            k: 64,
            iterations: 5,
            descriptor_patch: 4,
            kernel: Kernel::InnerProduct,
            seed: 0,
        }
    }
}

impl EmmaConfig {
    pub fn validate(&self) -> Result<()> {
        if self.k == 0 {
            return Err(Error::InvalidConfig("emma k must be at least 1".into()));
        }
        if !(1..=10).contains(&self.iterations) {
            return Err(Error::InvalidConfig(format!(
                "emma iterations must be in 1..=10, got {}",
                self.iterations
            )));
        }
        if self.descriptor_patch == 0 {
            return Err(Error::InvalidConfig("descriptor patch must be positive".into()));
        }
        Ok(())
    }
}

/// k seed descriptors, one per row.
#[derive(Clone, Debug, PartialEq)]
pub struct SeedSet {
    pub seeds: Matrix,
}

impl SeedSet {
    pub fn new(seeds: Matrix) -> Result<Self> {
        if seeds.rows == 0 {
            return Err(Error::InvalidConfig("seed set must not be empty".into()));
        }
        if !seeds.is_finite() {
            return Err(Error::NonFinite);
        }
        Ok(Self { seeds })
    }

    pub fn k(&self) -> usize {
        self.seeds.rows
    }

    pub fn d(&self) -> usize {
        self.seeds.cols
    }
}

/// Soft assignment of descriptors (rows) to seeds (columns).
#[derive(Clone, Debug, PartialEq)]
pub struct Responsibilities {
    pub z: Matrix,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct EmmaTrace {
    pub elbo: Vec<f64>,
}

impl EmmaTrace {
    pub fn write_csv<W: std::io::Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["iter", "elbo"])?;
        for (i, e) in self.elbo.iter().enumerate() {
            w.write_record([i.to_string(), format!("{e:.10e}")])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Picks `cfg.k` descriptor rows of `phi_s` by farthest-point sampling.
///
/// The first pick comes from a ChaCha RNG seeded with `cfg.seed`; later picks
/// maximise the distance to the chosen set, ties going to the lowest row.
pub fn kernelize(phi_s: &DeformationField, cfg: &EmmaConfig) -> Result<SeedSet> {
    let (desc, _) = descriptorize(phi_s, cfg.descriptor_patch)?;
    kernelize_descriptors(&desc, cfg.k, cfg.seed)
}

pub fn kernelize_descriptors(desc: &Matrix, k: usize, seed: u64) -> Result<SeedSet> {
    let n = desc.rows;
    if k == 0 || k > n {
        return Err(Error::TooFewDescriptors { k, n });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let first = rng.random_range(0..n);
    let mut chosen = vec![first];
    let sq = |a: &[f64], b: &[f64]| -> f64 { a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum() };
    let mut nearest: Vec<f64> = (0..n).map(|r| sq(desc.row(r), desc.row(first))).collect();
    let mut taken = vec![false; n];
    taken[first] = true;
    while chosen.len() < k {
        let mut best = usize::MAX;
        let mut best_d = f64::NEG_INFINITY;
        for r in 0..n {
            if !taken[r] && nearest[r] > best_d {
                best = r;
                best_d = nearest[r];
            }
        }
        taken[best] = true;
        chosen.push(best);
        let s = desc.row(best).to_vec();
        for r in 0..n {
            let d = sq(desc.row(r), &s);
            if d < nearest[r] {
                nearest[r] = d;
            }
        }
    }
    let mut data = Vec::with_capacity(k * desc.cols);
    for &r in &chosen {
        data.extend_from_slice(desc.row(r));
    }
    SeedSet::new(Matrix::from_rows(k, desc.cols, data)?)
}

/// Scaled kernel responses `desc · seedsᵀ / √d`.
fn responses(desc: &Matrix, seeds: &SeedSet) -> Result<Matrix> {
    let mut s = desc.mul_transpose(&seeds.seeds)?;
    let scale = 1.0 / (desc.cols as f64).sqrt();
    s.data.iter_mut().for_each(|v| *v *= scale);
    Ok(s)
}

fn softmax_rows(mut s: Matrix) -> Matrix {
    let k = s.cols;
    s.data.par_chunks_mut(k.max(1)).for_each(|row| {
        let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut total = 0.0;
        for v in row.iter_mut() {
            *v = (*v - m).exp();
            total += *v;
        }
        for v in row.iter_mut() {
            *v /= total;
        }
    });
    s
}

/// Row-wise log-softmax of the responses.
fn log_kernel(desc: &Matrix, seeds: &SeedSet) -> Result<Matrix> {
    let mut s = responses(desc, seeds)?;
    let k = s.cols;
    s.data.par_chunks_mut(k.max(1)).for_each(|row| {
        let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let lse = m + row.iter().map(|v| (v - m).exp()).sum::<f64>().ln();
        row.iter_mut().for_each(|v| *v -= lse);
    });
    Ok(s)
}

pub fn e_step(desc: &Matrix, seeds: &SeedSet) -> Result<Responsibilities> {
    if desc.cols != seeds.d() {
        return Err(Error::DimMismatch(format!(
            "descriptors have d={}, seeds have d={}",
            desc.cols,
            seeds.d()
        )));
    }
    Ok(Responsibilities {
        z: softmax_rows(responses(desc, seeds)?),
    })
}

/// Responsibility-weighted mean of the rows for every seed.
pub fn m_step(z: &Responsibilities, desc: &Matrix, previous: &SeedSet) -> Result<SeedSet> {
    let (n, k) = (z.z.rows, z.z.cols);
    if n != desc.rows || k != previous.k() || desc.cols != previous.d() {
        return Err(Error::DimMismatch(format!(
            "z is {n}x{k}, descriptors {}x{}, seeds {}x{}",
            desc.rows,
            desc.cols,
            previous.k(),
            previous.d()
        )));
    }
    let d = desc.cols;
    let mut out = previous.seeds.clone();
    out.data.par_chunks_mut(d.max(1)).enumerate().for_each(|(i, seed)| {
        let total: f64 = (0..n).map(|r| z.z.get(r, i)).sum();
        if total < EMPTY_COLUMN {
            return;
        }
        seed.iter_mut().for_each(|s| *s = 0.0);
        for r in 0..n {
            let w = z.z.get(r, i);
            for (s, &x) in seed.iter_mut().zip(desc.row(r)) {
                *s += w * x;
            }
        }
        seed.iter_mut().for_each(|s| *s /= total);
    });
    SeedSet::new(out)
}

/// `Σ z·(log κ − log z)` with κ the softmax-normalised kernel; `0·log 0 = 0`.
pub fn elbo(desc: &Matrix, seeds: &SeedSet, z: &Responsibilities) -> Result<f64> {
    let lk = log_kernel(desc, seeds)?;
    if (lk.rows, lk.cols) != (z.z.rows, z.z.cols) {
        return Err(Error::DimMismatch(format!(
            "z is {}x{}, kernel is {}x{}",
            z.z.rows, z.z.cols, lk.rows, lk.cols
        )));
    }
    Ok(z
        .z
        .data
        .iter()
        .zip(&lk.data)
        .filter(|(&q, _)| q > 0.0)
        .map(|(&q, &l)| q * (l - q.ln()))
        .sum())
}

/// Everything produced by one alignment run.
#[derive(Clone, Debug)]
pub struct EmmaOutput {
    pub phi_l: DeformationField,
    pub phi_s: DeformationField,
    /// Reconstruction added to the long input.
    pub long_term: DeformationField,
    /// Reconstruction added to the short input.
    pub short_term: DeformationField,
    pub responsibilities: Responsibilities,
    pub seeds: SeedSet,
    pub trace: EmmaTrace,
}

/// Aligns a long/short motion pair.
///
/// Per iteration: responses of the long descriptors against the seeds, a
/// softmax E-step, the ELBO, an M-step on the long descriptors and the long
/// reconstruction `z · seeds`. Afterwards the long reconstruction is pulled
/// back through `z` to give the short term, and both reconstructions are
/// added to the inputs.
pub fn emma_align(
    phi_l: &DeformationField,
    phi_s: &DeformationField,
    cfg: &EmmaConfig,
) -> Result<EmmaOutput> {
    cfg.validate()?;
    if phi_l.dims() != phi_s.dims() {
        return Err(Error::DimMismatch(format!(
            "long motion is {:?}, short motion is {:?}",
            phi_l.dims(),
            phi_s.dims()
        )));
    }
    if !phi_l.displacement.is_finite() || !phi_s.displacement.is_finite() {
        return Err(Error::NonFinite);
    }
    let (desc_l, layout) = descriptorize(phi_l, cfg.descriptor_patch)?;
    let (desc_s, _) = descriptorize(phi_s, cfg.descriptor_patch)?;
    let mut seeds = kernelize_descriptors(&desc_s, cfg.k, cfg.seed)?;

    let mut trace = EmmaTrace::default();
    let mut z = e_step(&desc_l, &seeds)?;
    let mut recon_l = Matrix::zeros(desc_l.rows, desc_l.cols);
    for it in 0..cfg.iterations {
        if it > 0 {
            z = e_step(&desc_l, &seeds)?;
        }
        trace.elbo.push(elbo(&desc_l, &seeds, &z)?);
        seeds = m_step(&z, &desc_l, &seeds)?;
        recon_l = z.z.mul(&seeds.seeds)?;
    }
    let projected = m_step(&z, &recon_l, &seeds)?;
    let recon_s = z.z.mul(&projected.seeds)?;

    let out_l = desc_l.add(&recon_l)?;
    let out_s = desc_s.add(&recon_s)?;
    if !out_l.is_finite() || !out_s.is_finite() || trace.elbo.iter().any(|e| !e.is_finite()) {
        return Err(Error::NonFinite);
    }
    Ok(EmmaOutput {
        phi_l: reassemble(&out_l, &layout)?,
        phi_s: reassemble(&out_s, &layout)?,
        long_term: reassemble(&recon_l, &layout)?,
        short_term: reassemble(&recon_s, &layout)?,
        responsibilities: z,
        seeds,
        trace,
    })
}
