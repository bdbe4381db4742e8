//! Gaze logs to fixation events, and fixation events to maps.

use std::path::Path;

use thiserror::Error;

use crate::raster::{gaussian_blur, GrayMap, RasterError};

/// Shortest accepted fixation, in milliseconds.
pub const MIN_FIXATION_MS: f64 = 160.0;
/// Gaze speed (pixels per 100 ms) at or above which a sample belongs to a saccade.
pub const SACCADE_SPEED: f64 = 50.0;
/// Blur used when human fixations are rendered as a test saliency map for
/// inter-subject consistency, as a fraction of the image width.
pub const CONSISTENCY_SIGMA_FRAC: f64 = 0.05;
/// Blur used when human fixation maps are scored as saliency maps.
pub const HUMAN_MAP_SIGMA_FRAC: f64 = 0.03;
/// Width of the fixed center-bias Gaussian, as a fraction of the image width.
pub const CENTER_BIAS_SIGMA_FRAC: f64 = 0.4;

#[derive(Debug, Error)]
pub enum FixationError {
    #[error("no gaze samples")]
    Empty,
    #[error("gaze timestamps not strictly increasing at sample {0}")]
    Unsorted(usize),
    #[error("need at least 2 valid gaze samples, found {0}")]
    TooFewValid(usize),
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("bad gaze record at line {line}: {msg}")]
    Parse { line: u64, msg: String },
    #[error(transparent)]
    Raster(#[from] RasterError),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GazeSample {
    pub t_ms: f64,
    pub x: f64,
    pub y: f64,
    /// False during blinks or track loss.
    pub valid: bool,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Fixation {
    pub x: f64,
    pub y: f64,
    pub onset_ms: f64,
    pub duration_ms: f64,
}

impl Fixation {
    /// Nearest pixel, clamped into a `width`×`height` image.
    pub fn pixel(&self, width: usize, height: usize) -> (usize, usize) {
        let clamp = |v: f64, n: usize| v.round().clamp(0.0, (n - 1) as f64) as usize;
        (clamp(self.x, width), clamp(self.y, height))
    }
}

/// Fixations of one subject on one image.
#[derive(Clone, Debug, PartialEq)]
pub struct FixationSet {
    pub image_id: String,
    pub subject_id: String,
    pub fixations: Vec<Fixation>,
}

impl FixationSet {
    pub fn clamp_to(&mut self, width: usize, height: usize) {
        for f in &mut self.fixations {
            f.x = f.x.clamp(0.0, (width - 1) as f64);
            f.y = f.y.clamp(0.0, (height - 1) as f64);
        }
    }

    pub fn pixels(&self, width: usize, height: usize) -> Vec<(usize, usize)> {
        self.fixations.iter().map(|f| f.pixel(width, height)).collect()
    }
}

/// Groups consecutive valid samples whose speed stays below `max_speed`
/// (pixels per 100 ms); groups spanning at least `min_duration_ms` become one
/// fixation at the group centroid. Invalid samples end the current group.
pub fn detect_fixations(
    samples: &[GazeSample],
    min_duration_ms: f64,
    max_speed: f64,
) -> Result<Vec<Fixation>, FixationError> {
    if samples.is_empty() {
        return Err(FixationError::Empty);
    }
    if !(min_duration_ms > 0.0) || !(max_speed > 0.0) {
        return Err(FixationError::InvalidParameter(format!(
            "min_duration {min_duration_ms} and max_speed {max_speed} must be positive"
        )));
    }
    if let Some(i) = samples.windows(2).position(|w| !(w[1].t_ms > w[0].t_ms)) {
        return Err(FixationError::Unsorted(i + 1));
    }
    let n_valid = samples.iter().filter(|s| s.valid).count();
    if n_valid < 2 {
        return Err(FixationError::TooFewValid(n_valid));
    }

    let mut fixations = Vec::new();
    let mut group: Vec<&GazeSample> = Vec::new();
    let mut flush = |group: &mut Vec<&GazeSample>| {
        if let (Some(first), Some(last)) = (group.first(), group.last()) {
            let duration = last.t_ms - first.t_ms;
            if duration >= min_duration_ms {
                let n = group.len() as f64;
                fixations.push(Fixation {
                    x: group.iter().map(|s| s.x).sum::<f64>() / n,
                    y: group.iter().map(|s| s.y).sum::<f64>() / n,
                    onset_ms: first.t_ms,
                    duration_ms: duration,
                });
            }
        }
        group.clear();
    };

    for s in samples {
        if !s.valid {
            flush(&mut group);
            continue;
        }
        if let Some(prev) = group.last() {
            let dist = (s.x - prev.x).hypot(s.y - prev.y);
            let speed = dist / (s.t_ms - prev.t_ms) * 100.0;
            if speed >= max_speed {
                flush(&mut group);
            }
        }
        group.push(s);
    }
    flush(&mut group);
    Ok(fixations)
}

/// Fixation counts per pixel (unblurred): the energy map for human fixations.
pub fn fixation_count_map(sets: &[FixationSet], width: usize, height: usize) -> GrayMap {
    let mut map = GrayMap::zeros(width, height);
    for f in sets.iter().flat_map(|s| &s.fixations) {
        let (x, y) = f.pixel(width, height);
        map.add(x, y, 1.0);
    }
    map
}

/// Count map blurred with σ = `sigma_frac`·width and scaled so its peak is 1.
pub fn render_fixation_map(
    sets: &[FixationSet],
    width: usize,
    height: usize,
    sigma_frac: f64,
) -> Result<GrayMap, FixationError> {
    let counts = fixation_count_map(sets, width, height);
    let blurred = gaussian_blur(&counts, sigma_frac * width as f64)?;
    Ok(blurred.normalize_peak())
}

/// Centered Gaussian with σ = `sigma_frac`·width and peak value 1.
pub fn centered_gaussian(width: usize, height: usize, sigma_frac: f64) -> GrayMap {
    let sigma = sigma_frac * width as f64;
    let (cx, cy) = ((width - 1) as f64 / 2.0, (height - 1) as f64 / 2.0);
    GrayMap::from_fn(width, height, |x, y| {
        let (dx, dy) = (x as f64 - cx, y as f64 - cy);
        (-(dx * dx + dy * dy) / (2.0 * sigma * sigma)).exp()
    })
}

fn blend_with(map: &GrayMap, prior: &GrayMap) -> GrayMap {
    GrayMap::from_fn(map.width(), map.height(), |x, y| {
        0.5 * (map.get(x, y) + prior.get(x, y))
    })
}

/// Averages `map` with a centered Gaussian prior and rescales the result to a
/// peak of 1.
pub fn add_center_bias(map: &GrayMap, sigma_frac: f64) -> Result<GrayMap, FixationError> {
    if !(sigma_frac > 0.0) {
        return Err(FixationError::InvalidParameter(format!(
            "center-bias sigma must be positive, got {sigma_frac}"
        )));
    }
    let prior = centered_gaussian(map.width(), map.height(), sigma_frac);
    Ok(blend_with(map, &prior).normalize_peak())
}

fn parse_bool(s: &str) -> Option<bool> {
    match s.trim() {
        "1" | "true" | "TRUE" | "True" => Some(true),
        "0" | "false" | "FALSE" | "False" => Some(false),
        _ => None,
    }
}

/// Reads a `t_ms,x,y,valid` gaze log.
pub fn read_gaze_csv(path: impl AsRef<Path>) -> Result<Vec<GazeSample>, FixationError> {
    let mut rdr = csv::Reader::from_path(path)?;
    let mut out = Vec::new();
    for rec in rdr.records() {
        let rec = rec?;
        let line = rec.position().map_or(0, |p| p.line());
        let bad = |msg: &str| FixationError::Parse {
            line,
            msg: msg.to_string(),
        };
        if rec.len() != 4 {
            return Err(bad("expected 4 fields"));
        }
        let num = |i: usize| rec[i].trim().parse::<f64>().map_err(|e| bad(&e.to_string()));
        out.push(GazeSample {
            t_ms: num(0)?,
            x: num(1)?,
            y: num(2)?,
            valid: parse_bool(&rec[3]).ok_or_else(|| bad("valid must be 0/1"))?,
        });
    }
    Ok(out)
}

pub fn write_gaze_csv(path: impl AsRef<Path>, samples: &[GazeSample]) -> Result<(), FixationError> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["t_ms", "x", "y", "valid"])?;
    for s in samples {
        w.write_record([
            s.t_ms.to_string(),
            format!("{:.2}", s.x),
            format!("{:.2}", s.y),
            (s.valid as u8).to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Writes `x,y,onset_ms,duration_ms` rows.
pub fn write_fixations_csv(
    path: impl AsRef<Path>,
    fixations: &[Fixation],
) -> Result<(), FixationError> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["x", "y", "onset_ms", "duration_ms"])?;
    for f in fixations {
        w.write_record([
            f.x.to_string(),
            f.y.to_string(),
            f.onset_ms.to_string(),
            f.duration_ms.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_fixations_csv(path: impl AsRef<Path>) -> Result<Vec<Fixation>, FixationError> {
    let mut rdr = csv::Reader::from_path(path)?;
    let mut out = Vec::new();
    for rec in rdr.records() {
        let rec = rec?;
        let line = rec.position().map_or(0, |p| p.line());
        let num = |i: usize| {
            rec.get(i)
                .and_then(|s| s.trim().parse::<f64>().ok())
                .ok_or_else(|| FixationError::Parse {
                    line,
                    msg: format!("field {i} is not a number"),
                })
        };
        out.push(Fixation {
            x: num(0)?,
            y: num(1)?,
            onset_ms: num(2)?,
            duration_ms: num(3)?,
        });
    }
    Ok(out)
}
