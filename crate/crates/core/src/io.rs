//! Frame directories, annotation text, tracklet CSV and LSDF field files.

use std::collections::BTreeMap;
use std::fs;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use image::DynamicImage;
use serde::{Deserialize, Serialize};

use crate::diffeo::DeformationField;
use crate::error::{Error, Result};
use crate::grid::{ScalarField, Vec2Field};
use crate::tracker::{TrackPoint, Tracklet};

const IMAGE_EXTENSIONS: [&str; 2] = ["png", "pgm"];
const LSDF_MAGIC: &[u8; 4] = b"LSDF";
const LSDF_HEADER: usize = 16;

/// An ordered, fully loaded grayscale sequence with intensities in [0, 1].
#[derive(Clone, Debug)]
pub struct SequenceDataset {
    pub name: String,
    pub paths: Vec<PathBuf>,
    pub frames: Vec<ScalarField>,
    pub width: usize,
    pub height: usize,
}

impl SequenceDataset {
    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }
}

fn is_image(path: &Path) -> bool {
    path.extension()
        .and_then(|e| e.to_str())
        .map(|e| IMAGE_EXTENSIONS.contains(&e.to_ascii_lowercase().as_str()))
        .unwrap_or(false)
}

/// Decodes one grayscale frame, scaling 8- and 16-bit samples to [0, 1].
pub fn load_frame(path: &Path) -> Result<ScalarField> {
    let img = image::ImageReader::open(path)?
        .with_guessed_format()?
        .decode()
        .map_err(|e| Error::UnsupportedFormat {
            file: path.to_path_buf(),
            reason: e.to_string(),
        })?;
    let (w, h) = (img.width() as usize, img.height() as usize);
    if w < 2 || h < 2 {
        return Err(Error::UnsupportedFormat {
            file: path.to_path_buf(),
            reason: format!("frame is {w}x{h}, need at least 2x2"),
        });
    }
    let data: Vec<f64> = match img {
        DynamicImage::ImageLuma8(buf) => buf.into_raw().into_iter().map(|v| v as f64 / 255.0).collect(),
        DynamicImage::ImageLuma16(buf) => buf.into_raw().into_iter().map(|v| v as f64 / 65535.0).collect(),
        other => {
            return Err(Error::UnsupportedFormat {
                file: path.to_path_buf(),
                reason: format!("{:?} is not single-channel grayscale", other.color()),
            })
        }
    };
    ScalarField::new(w, h, data)
}

/// Loads every PNG/PGM file of `dir`, sorted by file name.
pub fn load_sequence(dir: &Path) -> Result<SequenceDataset> {
    let mut paths: Vec<PathBuf> = fs::read_dir(dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_file() && is_image(p))
        .collect();
    paths.sort_by(|a, b| a.file_name().cmp(&b.file_name()));
    if paths.is_empty() {
        return Err(Error::EmptyDirectory(dir.to_path_buf()));
    }
    if paths.len() < 2 {
        return Err(Error::TooFewFrames {
            dir: dir.to_path_buf(),
            found: paths.len(),
        });
    }
    let mut frames = Vec::with_capacity(paths.len());
    for p in &paths {
        let f = load_frame(p)?;
        if let Some(first) = frames.first() {
            let first: &ScalarField = first;
            if f.dims() != first.dims() {
                return Err(Error::DimsMismatch {
                    file: p.clone(),
                    expected_w: first.width(),
                    expected_h: first.height(),
                    found_w: f.width(),
                    found_h: f.height(),
                });
            }
        }
        frames.push(f);
    }
    let (width, height) = frames[0].dims();
    let name = dir
        .file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_default();
    Ok(SequenceDataset {
        name,
        paths,
        frames,
        width,
        height,
    })
}

/// Writes a field in [0, 1] as a 16-bit grayscale PNG.
pub fn save_frame_png16(path: &Path, img: &ScalarField) -> Result<()> {
    let raw: Vec<u16> = img
        .data()
        .iter()
        .map(|v| (v.clamp(0.0, 1.0) * 65535.0).round() as u16)
        .collect();
    let buf = image::ImageBuffer::<image::Luma<u16>, _>::from_raw(img.width() as u32, img.height() as u32, raw)
        .expect("buffer length matches dims");
    buf.save(path)?;
    Ok(())
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Annotation {
    /// Zero-based.
    pub frame: usize,
    pub x: f64,
    pub y: f64,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct AnnotationSet {
    pub landmarks: BTreeMap<u32, Vec<Annotation>>,
}

impl AnnotationSet {
    pub fn is_empty(&self) -> bool {
        self.landmarks.is_empty()
    }

    /// Each landmark's earliest annotation.
    pub fn initial_positions(&self) -> Vec<(u32, Annotation)> {
        self.landmarks
            .iter()
            .filter_map(|(&id, a)| a.first().map(|&a| (id, a)))
            .collect()
    }

    pub fn check_within(&self, width: usize, height: usize) -> Result<()> {
        for (&landmark, list) in &self.landmarks {
            for a in list {
                if a.x < 0.0 || a.y < 0.0 || a.x > (width - 1) as f64 || a.y > (height - 1) as f64 {
                    return Err(Error::OutOfFrame {
                        landmark,
                        x: a.x,
                        y: a.y,
                        width,
                        height,
                    });
                }
            }
        }
        Ok(())
    }
}

/// Parses `landmark_id frame x y` lines with 1-based frames.
pub fn parse_annotations(text: &str) -> Result<AnnotationSet> {
    let mut set = AnnotationSet::default();
    for (i, raw) in text.lines().enumerate() {
        let line_no = i + 1;
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let parts: Vec<&str> = line.split_whitespace().collect();
        let err = |message: String| Error::Parse {
            line: line_no,
            message,
        };
        if parts.len() != 4 {
            return Err(err(format!("expected 4 fields, found {}", parts.len())));
        }
        let id: u32 = parts[0]
            .parse()
            .map_err(|_| err(format!("bad landmark id {:?}", parts[0])))?;
        let frame: usize = parts[1]
            .parse()
            .map_err(|_| err(format!("bad frame index {:?}", parts[1])))?;
        if frame < 1 {
            return Err(err("frame indices start at 1".into()));
        }
        let coord = |s: &str| -> Result<f64> {
            match s.parse::<f64>() {
                Ok(v) if v.is_finite() => Ok(v),
                _ => Err(err(format!("bad coordinate {s:?}"))),
            }
        };
        let (x, y) = (coord(parts[2])?, coord(parts[3])?);
        let list = set.landmarks.entry(id).or_default();
        if list.last().is_some_and(|a| a.frame > frame - 1) {
            return Err(Error::NonMonotoneFrames {
                landmark: id,
                line: line_no,
            });
        }
        list.push(Annotation { frame: frame - 1, x, y });
    }
    Ok(set)
}

pub fn load_annotations(path: &Path) -> Result<AnnotationSet> {
    parse_annotations(&fs::read_to_string(path)?)
}

pub fn write_annotations<W: Write>(mut out: W, set: &AnnotationSet) -> Result<()> {
    for (id, list) in &set.landmarks {
        for a in list {
            writeln!(out, "{id} {} {} {}", a.frame + 1, a.x, a.y)?;
        }
    }
    Ok(())
}

#[derive(Debug, Serialize, Deserialize)]
struct TrackletRow {
    sequence: String,
    landmark_id: u32,
    frame: usize,
    x: String,
    y: String,
}

/// CSV with header `sequence,landmark_id,frame,x,y`; frames written 1-based.
pub fn write_tracklets<W: Write>(out: W, sequence: &str, tracklets: &[Tracklet]) -> Result<()> {
    let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(out);
    w.write_record(["sequence", "landmark_id", "frame", "x", "y"])?;
    for t in tracklets {
        for p in &t.points {
            w.serialize(TrackletRow {
                sequence: sequence.to_string(),
                landmark_id: t.landmark_id,
                frame: p.frame + 1,
                x: format!("{:.4}", p.x),
                y: format!("{:.4}", p.y),
            })?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Reads tracklets back, grouped by (sequence, landmark) in order of appearance.
pub fn read_tracklets<R: Read>(input: R) -> Result<Vec<(String, Tracklet)>> {
    let mut rdr = csv::Reader::from_reader(input);
    let mut out: Vec<(String, Tracklet)> = Vec::new();
    for (i, row) in rdr.deserialize::<TrackletRow>().enumerate() {
        let row = row?;
        let line = i + 2;
        let parse = |s: &str| -> Result<f64> {
            s.trim().parse::<f64>().ok().filter(|v| v.is_finite()).ok_or(Error::Parse {
                line,
                message: format!("bad coordinate {s:?}"),
            })
        };
        if row.frame < 1 {
            return Err(Error::Parse {
                line,
                message: "frame indices start at 1".into(),
            });
        }
        let point = TrackPoint {
            frame: row.frame - 1,
            x: parse(&row.x)?,
            y: parse(&row.y)?,
            out_of_view: false,
        };
        let slot = out
            .iter_mut()
            .find(|(s, t)| *s == row.sequence && t.landmark_id == row.landmark_id);
        match slot {
            Some((_, t)) => {
                if t.points.last().is_some_and(|p| p.frame >= point.frame) {
                    return Err(Error::NonMonotoneFrames {
                        landmark: row.landmark_id,
                        line,
                    });
                }
                t.points.push(point)
            }
            None => out.push((
                row.sequence,
                Tracklet {
                    landmark_id: row.landmark_id,
                    points: vec![point],
                },
            )),
        }
    }
    Ok(out)
}

/// Encodes 1 or 2 equally sized channels as an LSDF byte stream.
pub fn encode_lsdf(channels: &[&ScalarField]) -> Result<Vec<u8>> {
    if channels.is_empty() || channels.len() > 2 {
        return Err(Error::BadChannelCount(channels.len() as u32));
    }
    let (w, h) = channels[0].dims();
    if channels.iter().any(|c| c.dims() != (w, h)) {
        return Err(Error::DimMismatch("LSDF channels differ in size".into()));
    }
    let mut out = Vec::with_capacity(LSDF_HEADER + channels.len() * w * h * 4);
    out.extend_from_slice(LSDF_MAGIC);
    out.extend_from_slice(&(h as u32).to_le_bytes());
    out.extend_from_slice(&(w as u32).to_le_bytes());
    out.extend_from_slice(&(channels.len() as u32).to_le_bytes());
    for c in channels {
        for &v in c.data() {
            out.extend_from_slice(&(v as f32).to_le_bytes());
        }
    }
    Ok(out)
}

/// Decodes an LSDF byte stream into its channels.
pub fn decode_lsdf(bytes: &[u8]) -> Result<Vec<ScalarField>> {
    if bytes.len() >= 4 && &bytes[..4] != LSDF_MAGIC {
        let mut m = [0u8; 4];
        m.copy_from_slice(&bytes[..4]);
        return Err(Error::BadMagic(m));
    }
    if bytes.len() < LSDF_HEADER {
        return Err(Error::TruncatedFile {
            expected: LSDF_HEADER,
            found: bytes.len(),
        });
    }
    let word = |i: usize| u32::from_le_bytes(bytes[i..i + 4].try_into().unwrap()) as usize;
    let (h, w, c) = (word(4), word(8), word(12));
    if c == 0 || c > 2 {
        return Err(Error::BadChannelCount(c as u32));
    }
    let expected = LSDF_HEADER + c * w * h * 4;
    if bytes.len() < expected {
        return Err(Error::TruncatedFile {
            expected,
            found: bytes.len(),
        });
    }
    if bytes.len() > expected {
        return Err(Error::TrailingData(bytes.len() - expected));
    }
    let values: Vec<f64> = bytes[LSDF_HEADER..]
        .chunks_exact(4)
        .map(|b| f32::from_le_bytes(b.try_into().unwrap()) as f64)
        .collect();
    values
        .chunks_exact(w * h)
        .map(|chunk| ScalarField::new(w, h, chunk.to_vec()))
        .collect()
}

pub fn write_field(path: &Path, phi: &DeformationField) -> Result<()> {
    let d = &phi.displacement;
    fs::write(path, encode_lsdf(&[&d.u, &d.v])?)?;
    Ok(())
}

pub fn read_field(path: &Path) -> Result<DeformationField> {
    let mut channels = decode_lsdf(&fs::read(path)?)?;
    if channels.len() != 2 {
        return Err(Error::DimMismatch(format!(
            "{} holds {} channel(s), a deformation needs 2",
            path.display(),
            channels.len()
        )));
    }
    let v = channels.pop().unwrap();
    let u = channels.pop().unwrap();
    Ok(DeformationField::from_displacement(Vec2Field::new(u, v)?))
}
