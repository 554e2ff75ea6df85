//! Tracking-error metrics and summaries.

use std::io::Write;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::io::AnnotationSet;
use crate::tracker::Tracklet;

/// Euclidean tracking error.
pub fn te(pred: (f64, f64), gt: (f64, f64)) -> f64 {
    (pred.0 - gt.0).hypot(pred.1 - gt.1)
}

/// Error of never moving from the initial position.
pub fn note(init_pred: (f64, f64), gt_t: (f64, f64)) -> f64 {
    te(init_pred, gt_t)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EvalSummary {
    pub mean: f64,
    /// Sample standard deviation (n − 1).
    pub std: f64,
    /// Nearest-rank 95th percentile.
    pub p95: f64,
    pub min: f64,
    pub max: f64,
    pub n: usize,
}

pub fn summarize(errors: &[f64]) -> Result<EvalSummary> {
    let n = errors.len();
    if n == 0 {
        return Err(Error::EmptyInput);
    }
    let mut sorted = errors.to_vec();
    sorted.sort_by(f64::total_cmp);
    // Shifted by the minimum so that constant inputs give their value exactly.
    let lo = sorted[0];
    let mean = lo + sorted.iter().map(|e| e - lo).sum::<f64>() / n as f64;
    let std = if n > 1 {
        (sorted.iter().map(|e| (e - mean) * (e - mean)).sum::<f64>() / (n - 1) as f64).sqrt()
    } else {
        0.0
    };
    let rank = ((0.95 * n as f64).ceil() as usize).clamp(1, n);
    Ok(EvalSummary {
        mean,
        std,
        p95: sorted[rank - 1],
        min: sorted[0],
        max: sorted[n - 1],
        n,
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct LandmarkEval {
    pub landmark_id: u32,
    pub te: EvalSummary,
    pub note: EvalSummary,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EvalReport {
    pub landmarks: Vec<LandmarkEval>,
    pub pooled: EvalSummary,
    pub pooled_note: EvalSummary,
}

/// Per-landmark errors `(te, note)` over annotated frames after the first.
fn landmark_errors(id: u32, track: &Tracklet, annotations: &[crate::io::Annotation]) -> Result<(Vec<f64>, Vec<f64>)> {
    let init = annotations[0];
    let p0 = (init.x, init.y);
    let mut tes = Vec::new();
    let mut notes = Vec::new();
    for a in &annotations[1..] {
        let pred = track.position(a.frame).ok_or(Error::MissingFrame {
            landmark: id,
            frame: a.frame,
        })?;
        tes.push(te(pred, (a.x, a.y)));
        notes.push(note(p0, (a.x, a.y)));
    }
    Ok((tes, notes))
}

/// TE and NoTE summaries per landmark and pooled over all landmarks.
///
/// A landmark's first annotation is its initialization and is not scored.
/// Landmarks with a single annotation contribute nothing.
pub fn evaluate(tracklets: &[Tracklet], annotations: &AnnotationSet) -> Result<EvalReport> {
    let jobs: Vec<_> = annotations
        .landmarks
        .iter()
        .filter(|(_, a)| a.len() > 1)
        .collect();
    let per: Vec<(u32, Vec<f64>, Vec<f64>)> = jobs
        .par_iter()
        .map(|(&id, list)| {
            let track = tracklets.iter().find(|t| t.landmark_id == id).ok_or(Error::MissingFrame {
                landmark: id,
                frame: list[1].frame,
            })?;
            let (t, n) = landmark_errors(id, track, list)?;
            Ok((id, t, n))
        })
        .collect::<Result<_>>()?;
    let mut landmarks = Vec::new();
    let mut all_te = Vec::new();
    let mut all_note = Vec::new();
    for (id, t, n) in per {
        landmarks.push(LandmarkEval {
            landmark_id: id,
            te: summarize(&t)?,
            note: summarize(&n)?,
        });
        all_te.extend(t);
        all_note.extend(n);
    }
    Ok(EvalReport {
        landmarks,
        pooled: summarize(&all_te)?,
        pooled_note: summarize(&all_note)?,
    })
}

/// CSV rows `scope,mean,std,p95,min,max,n`: every landmark, the pool, then
/// the matching no-tracking baselines.
pub fn write_report<W: Write>(out: W, report: &EvalReport) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["scope", "mean", "std", "p95", "min", "max", "n"])?;
    let mut row = |scope: String, s: &EvalSummary| -> Result<()> {
        w.write_record([
            scope,
            format!("{:.6}", s.mean),
            format!("{:.6}", s.std),
            format!("{:.6}", s.p95),
            format!("{:.6}", s.min),
            format!("{:.6}", s.max),
            s.n.to_string(),
        ])?;
        Ok(())
    };
    for l in &report.landmarks {
        row(format!("landmark_{}", l.landmark_id), &l.te)?;
    }
    row("pooled".into(), &report.pooled)?;
    for l in &report.landmarks {
        row(format!("note_landmark_{}", l.landmark_id), &l.note)?;
    }
    row("note_pooled".into(), &report.pooled_note)?;
    w.flush()?;
    Ok(())
}
