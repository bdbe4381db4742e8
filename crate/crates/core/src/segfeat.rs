//! The 33-component descriptor of a segment: 15 shape features of the mask
//! followed by 18 features of the fixation energy inside it.
//!
//! Lengths are normalized by the image diagonal, areas by the image area and
//! positions by the image width/height, so descriptors from images of
//! different sizes are comparable.

use std::f64::consts::PI;
use std::ops::Index;

use thiserror::Error;

use crate::raster::{connected_components, BinaryMask, Connectivity, GrayMap};

pub const SHAPE_DIM: usize = 15;
pub const FIXATION_DIM: usize = 18;
pub const FEATURE_DIM: usize = SHAPE_DIM + FIXATION_DIM;
/// Histogram cells along the major and minor axes.
pub const HIST_MAJOR: usize = 4;
pub const HIST_MINOR: usize = 3;

pub const FEATURE_NAMES: [&str; FEATURE_DIM] = [
    "area",
    "centroid_x",
    "centroid_y",
    "convex_area",
    "euler_number",
    "perimeter",
    "major_axis_length",
    "minor_axis_length",
    "eccentricity",
    "orientation",
    "equivalent_diameter",
    "solidity",
    "extent",
    "width",
    "height",
    "min_energy",
    "max_energy",
    "mean_energy",
    "weighted_centroid_x",
    "weighted_centroid_y",
    "energy_ratio",
    "hist_0",
    "hist_1",
    "hist_2",
    "hist_3",
    "hist_4",
    "hist_5",
    "hist_6",
    "hist_7",
    "hist_8",
    "hist_9",
    "hist_10",
    "hist_11",
];

#[derive(Debug, Error, PartialEq, Eq)]
pub enum FeatureError {
    #[error("segment mask is empty")]
    EmptyMask,
    #[error("mask is {mask:?} but energy map is {energy:?}")]
    DimensionMismatch {
        mask: (usize, usize),
        energy: (usize, usize),
    },
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FeatureVector(pub [f64; FEATURE_DIM]);

impl FeatureVector {
    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        FEATURE_DIM
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn histogram(&self) -> &[f64] {
        &self.0[SHAPE_DIM + 6..]
    }
}

impl Index<usize> for FeatureVector {
    type Output = f64;

    fn index(&self, i: usize) -> &f64 {
        &self.0[i]
    }
}

impl AsRef<[f64]> for FeatureVector {
    fn as_ref(&self) -> &[f64] {
        &self.0
    }
}

/// Pixel count, centroid and central second moments of a region, in pixel
/// units. The second moments include the 1/12 variance of a unit pixel.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RegionMoments {
    pub m00: f64,
    pub cx: f64,
    pub cy: f64,
    pub mu20: f64,
    pub mu02: f64,
    pub mu11: f64,
}

impl RegionMoments {
    /// Pixel centres are at `(x + 0.5, y + 0.5)`.
    pub fn of(mask: &BinaryMask) -> Option<Self> {
        let (mut n, mut sx, mut sy) = (0.0, 0.0, 0.0);
        for (x, y) in mask.iter_set() {
            n += 1.0;
            sx += x as f64 + 0.5;
            sy += y as f64 + 0.5;
        }
        if n == 0.0 {
            return None;
        }
        let (cx, cy) = (sx / n, sy / n);
        let (mut xx, mut yy, mut xy) = (0.0, 0.0, 0.0);
        for (x, y) in mask.iter_set() {
            let (dx, dy) = (x as f64 + 0.5 - cx, y as f64 + 0.5 - cy);
            xx += dx * dx;
            yy += dy * dy;
            xy += dx * dy;
        }
        Some(Self {
            m00: n,
            cx,
            cy,
            mu20: xx / n + 1.0 / 12.0,
            mu02: yy / n + 1.0 / 12.0,
            mu11: xy / n,
        })
    }

    fn axis_term(&self) -> f64 {
        ((self.mu20 - self.mu02).powi(2) + 4.0 * self.mu11 * self.mu11).sqrt()
    }

    /// Major axis of the ellipse with the same second moments, in pixels.
    pub fn major_axis(&self) -> f64 {
        2.0 * (2.0 * (self.mu20 + self.mu02 + self.axis_term())).sqrt()
    }

    pub fn minor_axis(&self) -> f64 {
        2.0 * (2.0 * (self.mu20 + self.mu02 - self.axis_term()).max(0.0)).sqrt()
    }

    pub fn eccentricity(&self) -> f64 {
        let (a, b) = (self.major_axis(), self.minor_axis());
        (1.0 - (b / a).powi(2)).max(0.0).sqrt()
    }

    /// Angle of the major axis from the x axis in image coordinates (y down),
    /// in (−π/2, π/2].
    pub fn orientation(&self) -> f64 {
        0.5 * (2.0 * self.mu11).atan2(self.mu20 - self.mu02)
    }
}

/// Components (8-connected) minus holes (4-connected background regions not
/// touching the image border).
pub fn euler_number(mask: &BinaryMask) -> i64 {
    let objects = connected_components(mask, Connectivity::Eight).count as i64;
    let (w, h) = mask.dims();
    let padded = BinaryMask::from_fn(w + 2, h + 2, |x, y| {
        !(x >= 1 && y >= 1 && x <= w && y <= h && mask.get(x - 1, y - 1))
    });
    let background = connected_components(&padded, Connectivity::Four).count as i64;
    objects - (background - 1)
}

fn cross(o: (i64, i64), a: (i64, i64), b: (i64, i64)) -> i64 {
    (a.0 - o.0) * (b.1 - o.1) - (a.1 - o.1) * (b.0 - o.0)
}

/// Area of the convex hull of the pixel squares, in pixels.
pub fn convex_hull_area(mask: &BinaryMask) -> f64 {
    let (w, h) = mask.dims();
    let mut pts = Vec::new();
    for y in 0..h {
        let row = (0..w).filter(|&x| mask.get(x, y));
        let (lo, hi) = row.fold((usize::MAX, 0), |(lo, hi), x| (lo.min(x), hi.max(x)));
        if lo == usize::MAX {
            continue;
        }
        let (y0, y1) = (y as i64, y as i64 + 1);
        pts.extend([
            (lo as i64, y0),
            (lo as i64, y1),
            (hi as i64 + 1, y0),
            (hi as i64 + 1, y1),
        ]);
    }
    pts.sort_unstable();
    pts.dedup();
    if pts.len() < 3 {
        return 0.0;
    }
    // Andrew's monotone chain: lower hull, then upper hull
    let mut hull: Vec<(i64, i64)> = Vec::with_capacity(2 * pts.len());
    for &p in &pts {
        while hull.len() >= 2 && cross(hull[hull.len() - 2], hull[hull.len() - 1], p) <= 0 {
            hull.pop();
        }
        hull.push(p);
    }
    let lower_len = hull.len() + 1;
    for &p in pts.iter().rev().skip(1) {
        while hull.len() >= lower_len && cross(hull[hull.len() - 2], hull[hull.len() - 1], p) <= 0 {
            hull.pop();
        }
        hull.push(p);
    }
    hull.pop();
    let twice: i64 = (0..hull.len())
        .map(|i| {
            let (a, b) = (hull[i], hull[(i + 1) % hull.len()]);
            a.0 * b.1 - b.0 * a.1
        })
        .sum();
    twice.abs() as f64 / 2.0
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ShapeFeatures {
    pub area: f64,
    pub centroid_x: f64,
    pub centroid_y: f64,
    pub convex_area: f64,
    pub euler_number: f64,
    pub perimeter: f64,
    pub major_axis_length: f64,
    pub minor_axis_length: f64,
    pub eccentricity: f64,
    pub orientation: f64,
    pub equivalent_diameter: f64,
    pub solidity: f64,
    pub extent: f64,
    pub width: f64,
    pub height: f64,
}

impl ShapeFeatures {
    pub fn to_array(&self) -> [f64; SHAPE_DIM] {
        [
            self.area,
            self.centroid_x,
            self.centroid_y,
            self.convex_area,
            self.euler_number,
            self.perimeter,
            self.major_axis_length,
            self.minor_axis_length,
            self.eccentricity,
            self.orientation,
            self.equivalent_diameter,
            self.solidity,
            self.extent,
            self.width,
            self.height,
        ]
    }
}

pub fn shape_features(mask: &BinaryMask) -> Result<ShapeFeatures, FeatureError> {
    let m = RegionMoments::of(mask).ok_or(FeatureError::EmptyMask)?;
    let (w, h) = (mask.width() as f64, mask.height() as f64);
    let image_area = w * h;
    let diag = w.hypot(h);
    let (x0, y0, x1, y1) = mask.bounding_box().expect("mask is nonempty");
    let (bw, bh) = ((x1 - x0 + 1) as f64, (y1 - y0 + 1) as f64);
    let hull = convex_hull_area(mask);
    Ok(ShapeFeatures {
        area: m.m00 / image_area,
        centroid_x: m.cx / w,
        centroid_y: m.cy / h,
        convex_area: hull / image_area,
        euler_number: euler_number(mask) as f64,
        perimeter: mask.inner_boundary_padded().len() as f64 / diag,
        major_axis_length: m.major_axis() / diag,
        minor_axis_length: m.minor_axis() / diag,
        eccentricity: m.eccentricity(),
        orientation: m.orientation(),
        equivalent_diameter: (4.0 * m.m00 / PI).sqrt() / diag,
        solidity: m.m00 / hull,
        extent: m.m00 / (bw * bh),
        width: bw / w,
        height: bh / h,
    })
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FixationFeatures {
    pub min_energy: f64,
    pub max_energy: f64,
    pub mean_energy: f64,
    pub weighted_centroid_x: f64,
    pub weighted_centroid_y: f64,
    pub energy_ratio: f64,
    /// Row-major over (major-axis cell, minor-axis cell).
    pub histogram: [f64; HIST_MAJOR * HIST_MINOR],
}

impl FixationFeatures {
    pub fn to_array(&self) -> [f64; FIXATION_DIM] {
        let mut out = [0.0; FIXATION_DIM];
        out[..6].copy_from_slice(&[
            self.min_energy,
            self.max_energy,
            self.mean_energy,
            self.weighted_centroid_x,
            self.weighted_centroid_y,
            self.energy_ratio,
        ]);
        out[6..].copy_from_slice(&self.histogram);
        out
    }
}

pub fn fixation_features(
    mask: &BinaryMask,
    energy: &GrayMap,
) -> Result<FixationFeatures, FeatureError> {
    if mask.dims() != energy.dims() {
        return Err(FeatureError::DimensionMismatch {
            mask: mask.dims(),
            energy: energy.dims(),
        });
    }
    let m = RegionMoments::of(mask).ok_or(FeatureError::EmptyMask)?;
    let (w, h) = (mask.width() as f64, mask.height() as f64);

    let (mut lo, mut hi, mut sum) = (f64::INFINITY, f64::NEG_INFINITY, 0.0);
    let (mut wx, mut wy) = (0.0, 0.0);
    for (x, y) in mask.iter_set() {
        let e = energy.get(x, y);
        lo = lo.min(e);
        hi = hi.max(e);
        sum += e;
        wx += e * (x as f64 + 0.5);
        wy += e * (y as f64 + 0.5);
    }
    let (weighted_centroid_x, weighted_centroid_y) = if sum > 0.0 {
        (wx / sum / w, wy / sum / h)
    } else {
        (m.cx / w, m.cy / h)
    };
    let image_total = energy.sum();
    let energy_ratio = if image_total > 0.0 { sum / image_total } else { 0.0 };

    let histogram = aligned_histogram(mask, energy, &m, sum);
    Ok(FixationFeatures {
        min_energy: lo,
        max_energy: hi,
        mean_energy: sum / m.m00,
        weighted_centroid_x,
        weighted_centroid_y,
        energy_ratio,
        histogram,
    })
}

/// Energy summed over a 4×3 grid laid on the segment after rotating it so
/// its major axis is horizontal, normalized to sum 1.
fn aligned_histogram(
    mask: &BinaryMask,
    energy: &GrayMap,
    m: &RegionMoments,
    in_mask_energy: f64,
) -> [f64; HIST_MAJOR * HIST_MINOR] {
    let mut hist = [0.0; HIST_MAJOR * HIST_MINOR];
    if in_mask_energy <= 0.0 {
        return hist;
    }
    let (s, c) = m.orientation().sin_cos();
    let rotated: Vec<(f64, f64, f64)> = mask
        .iter_set()
        .map(|(x, y)| {
            let (dx, dy) = (x as f64 + 0.5 - m.cx, y as f64 + 0.5 - m.cy);
            (dx * c + dy * s, -dx * s + dy * c, energy.get(x, y))
        })
        .collect();
    let bounds = |sel: fn(&(f64, f64, f64)) -> f64| {
        rotated.iter().map(sel).fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| {
            (a.min(v), b.max(v))
        })
    };
    // pixel centres extended by half a pixel to cover the pixel squares
    let (u0, u1) = bounds(|p| p.0);
    let (v0, v1) = bounds(|p| p.1);
    let (u0, u1, v0, v1) = (u0 - 0.5, u1 + 0.5, v0 - 0.5, v1 + 0.5);
    let cell = |t: f64, lo: f64, hi: f64, n: usize| -> usize {
        (((t - lo) / (hi - lo) * n as f64) as usize).min(n - 1)
    };
    for &(u, v, e) in &rotated {
        let i = cell(u, u0, u1, HIST_MAJOR);
        let j = cell(v, v0, v1, HIST_MINOR);
        hist[i * HIST_MINOR + j] += e;
    }
    hist.iter_mut().for_each(|v| *v /= in_mask_energy);
    hist
}

/// Shape block followed by the fixation block.
pub fn extract(mask: &BinaryMask, energy: &GrayMap) -> Result<FeatureVector, FeatureError> {
    let fix = fixation_features(mask, energy)?;
    let shape = shape_features(mask)?;
    let mut out = [0.0; FEATURE_DIM];
    out[..SHAPE_DIM].copy_from_slice(&shape.to_array());
    out[SHAPE_DIM..].copy_from_slice(&fix.to_array());
    Ok(FeatureVector(out))
}
