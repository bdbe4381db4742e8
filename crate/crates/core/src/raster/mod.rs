//! Pixel-level primitives: images, real-valued maps, binary masks, color
//! histograms, Gaussian blur, thresholding and connected components.

mod io;

pub use io::{
    load_image, load_map_pgm, load_mask_pgm, load_pgm, save_map_pgm, save_mask_pgm, save_ppm,
};

use std::collections::VecDeque;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum RasterError {
    #[error("invalid dimensions {width}x{height} for {len} values")]
    InvalidDimensions {
        width: usize,
        height: usize,
        len: usize,
    },
    #[error("dimension mismatch: expected {expected:?}, found {found:?}")]
    DimensionMismatch {
        expected: (usize, usize),
        found: (usize, usize),
    },
    #[error("non-finite map value at index {0}")]
    NonFinite(usize),
    #[error("sigma must be positive, got {0}")]
    NonPositiveSigma(f64),
    #[error("histogram bins must be in [2, 32], got {0}")]
    InvalidBins(usize),
    #[error("histogram bin counts differ ({0} vs {1})")]
    BinMismatch(usize, usize),
    #[error("histogram has no samples")]
    EmptyHistogram,
    #[error("malformed header: {0}")]
    MalformedHeader(String),
    #[error("unsupported color type: {0}")]
    UnsupportedColorType(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

fn check_dims(width: usize, height: usize, len: usize) -> Result<(), RasterError> {
    if width == 0 || height == 0 || width.checked_mul(height) != Some(len) {
        return Err(RasterError::InvalidDimensions { width, height, len });
    }
    Ok(())
}

/// 8-bit RGB image, row-major.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RgbImage {
    width: usize,
    height: usize,
    data: Vec<u8>,
}

impl RgbImage {
    pub fn new(width: usize, height: usize, data: Vec<u8>) -> Result<Self, RasterError> {
        if data.len() % 3 != 0 {
            return Err(RasterError::InvalidDimensions {
                width,
                height,
                len: data.len(),
            });
        }
        check_dims(width, height, data.len() / 3)?;
        Ok(Self {
            width,
            height,
            data,
        })
    }

    pub fn filled(width: usize, height: usize, rgb: [u8; 3]) -> Self {
        assert!(width > 0 && height > 0, "image dimensions must be positive");
        let data = rgb.iter().copied().cycle().take(3 * width * height).collect();
        Self {
            width,
            height,
            data,
        }
    }

    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> [u8; 3]) -> Self {
        assert!(width > 0 && height > 0, "image dimensions must be positive");
        let mut data = Vec::with_capacity(3 * width * height);
        for y in 0..height {
            for x in 0..width {
                data.extend_from_slice(&f(x, y));
            }
        }
        Self {
            width,
            height,
            data,
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    pub fn data(&self) -> &[u8] {
        &self.data
    }

    #[inline]
    pub fn pixel(&self, x: usize, y: usize) -> [u8; 3] {
        let i = 3 * (y * self.width + x);
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }

    pub fn set_pixel(&mut self, x: usize, y: usize, rgb: [u8; 3]) {
        let i = 3 * (y * self.width + x);
        self.data[i..i + 3].copy_from_slice(&rgb);
    }
}

/// Real-valued 2-D field (saliency maps, fixation energy, edge maps).
#[derive(Clone, Debug, PartialEq)]
pub struct GrayMap {
    width: usize,
    height: usize,
    data: Vec<f64>,
}

impl GrayMap {
    pub fn new(width: usize, height: usize, data: Vec<f64>) -> Result<Self, RasterError> {
        check_dims(width, height, data.len())?;
        if let Some(i) = data.iter().position(|v| !v.is_finite()) {
            return Err(RasterError::NonFinite(i));
        }
        Ok(Self {
            width,
            height,
            data,
        })
    }

    pub fn zeros(width: usize, height: usize) -> Self {
        Self::constant(width, height, 0.0)
    }

    pub fn constant(width: usize, height: usize, value: f64) -> Self {
        assert!(width > 0 && height > 0, "map dimensions must be positive");
        assert!(value.is_finite());
        Self {
            width,
            height,
            data: vec![value; width * height],
        }
    }

    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        assert!(width > 0 && height > 0, "map dimensions must be positive");
        let mut data = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                let v = f(x, y);
                assert!(v.is_finite(), "non-finite map value at ({x}, {y})");
                data.push(v);
            }
        }
        Self {
            width,
            height,
            data,
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> f64 {
        self.data[y * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, v: f64) {
        debug_assert!(v.is_finite());
        self.data[y * self.width + x] = v;
    }

    #[inline]
    pub fn add(&mut self, x: usize, y: usize, v: f64) {
        self.data[y * self.width + x] += v;
    }

    pub fn max(&self) -> f64 {
        self.data.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn min(&self) -> f64 {
        self.data.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().sum()
    }

    /// Applies `f` to every value. Panics if `f` produces a non-finite value.
    pub fn map_values(&self, f: impl Fn(f64) -> f64) -> Self {
        let data: Vec<f64> = self.data.iter().map(|&v| f(v)).collect();
        assert!(data.iter().all(|v| v.is_finite()), "map_values produced a non-finite value");
        Self {
            width: self.width,
            height: self.height,
            data,
        }
    }

    /// Divides by the maximum so the peak becomes 1. Maps whose maximum is
    /// not positive are returned unchanged.
    pub fn normalize_peak(&self) -> Self {
        let max = self.max();
        if max > 0.0 {
            self.map_values(|v| v / max)
        } else {
            self.clone()
        }
    }

    /// Affine rescale to [0,1]; constant maps become all-zero.
    pub fn normalize_range(&self) -> Self {
        let (lo, hi) = (self.min(), self.max());
        if hi > lo {
            self.map_values(|v| (v - lo) / (hi - lo))
        } else {
            Self::zeros(self.width, self.height)
        }
    }
}

/// Boolean 2-D field, row-major.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct BinaryMask {
    width: usize,
    height: usize,
    data: Vec<bool>,
}

impl BinaryMask {
    pub fn new(width: usize, height: usize, data: Vec<bool>) -> Result<Self, RasterError> {
        check_dims(width, height, data.len())?;
        Ok(Self {
            width,
            height,
            data,
        })
    }

    pub fn empty(width: usize, height: usize) -> Self {
        Self::filled(width, height, false)
    }

    pub fn filled(width: usize, height: usize, value: bool) -> Self {
        assert!(width > 0 && height > 0, "mask dimensions must be positive");
        Self {
            width,
            height,
            data: vec![value; width * height],
        }
    }

    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> bool) -> Self {
        assert!(width > 0 && height > 0, "mask dimensions must be positive");
        let mut data = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                data.push(f(x, y));
            }
        }
        Self {
            width,
            height,
            data,
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    pub fn data(&self) -> &[bool] {
        &self.data
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> bool {
        self.data[y * self.width + x]
    }

    /// Like [`get`](Self::get) but treats out-of-bounds coordinates as background.
    #[inline]
    pub fn get_signed(&self, x: isize, y: isize) -> bool {
        x >= 0
            && y >= 0
            && (x as usize) < self.width
            && (y as usize) < self.height
            && self.data[y as usize * self.width + x as usize]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, v: bool) {
        self.data[y * self.width + x] = v;
    }

    pub fn count(&self) -> usize {
        self.data.iter().filter(|&&b| b).count()
    }

    pub fn is_empty(&self) -> bool {
        !self.data.iter().any(|&b| b)
    }

    pub fn is_full(&self) -> bool {
        self.data.iter().all(|&b| b)
    }

    /// Coordinates of set pixels in raster order.
    pub fn iter_set(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        let w = self.width;
        self.data
            .iter()
            .enumerate()
            .filter(|(_, &b)| b)
            .map(move |(i, _)| (i % w, i / w))
    }

    fn same_dims(&self, other: &Self) -> Result<(), RasterError> {
        if self.dims() != other.dims() {
            return Err(RasterError::DimensionMismatch {
                expected: self.dims(),
                found: other.dims(),
            });
        }
        Ok(())
    }

    pub fn and(&self, other: &Self) -> Result<Self, RasterError> {
        self.same_dims(other)?;
        let data = self.data.iter().zip(&other.data).map(|(a, b)| *a && *b).collect();
        Ok(Self { data, ..*self })
    }

    pub fn or(&self, other: &Self) -> Result<Self, RasterError> {
        self.same_dims(other)?;
        let data = self.data.iter().zip(&other.data).map(|(a, b)| *a || *b).collect();
        Ok(Self { data, ..*self })
    }

    pub fn not(&self) -> Self {
        Self {
            data: self.data.iter().map(|b| !b).collect(),
            ..*self
        }
    }

    /// (|a ∧ b|, |a ∨ b|)
    pub fn overlap_counts(&self, other: &Self) -> Result<(usize, usize), RasterError> {
        self.same_dims(other)?;
        let mut inter = 0;
        let mut union = 0;
        for (&a, &b) in self.data.iter().zip(&other.data) {
            inter += (a && b) as usize;
            union += (a || b) as usize;
        }
        Ok((inter, union))
    }

    /// 0/1 valued map.
    pub fn to_map(&self) -> GrayMap {
        GrayMap {
            width: self.width,
            height: self.height,
            data: self.data.iter().map(|&b| if b { 1.0 } else { 0.0 }).collect(),
        }
    }

    /// Inclusive bounding box `(x0, y0, x1, y1)` of the set pixels.
    pub fn bounding_box(&self) -> Option<(usize, usize, usize, usize)> {
        let mut bbox: Option<(usize, usize, usize, usize)> = None;
        for (x, y) in self.iter_set() {
            bbox = Some(match bbox {
                None => (x, y, x, y),
                Some((x0, y0, x1, y1)) => (x0.min(x), y0.min(y), x1.max(x), y1.max(y)),
            });
        }
        bbox
    }

    /// Set pixels with at least one 4-adjacent unset pixel inside the image.
    pub fn inner_boundary(&self) -> Vec<(usize, usize)> {
        self.boundary_pixels(false)
    }

    /// Set pixels with a 4-adjacent unset pixel, counting pixels outside the
    /// image as unset.
    pub fn inner_boundary_padded(&self) -> Vec<(usize, usize)> {
        self.boundary_pixels(true)
    }

    fn boundary_pixels(&self, outside_is_background: bool) -> Vec<(usize, usize)> {
        let mut out = Vec::new();
        for (x, y) in self.iter_set() {
            let (xi, yi) = (x as isize, y as isize);
            let on_edge = [(-1, 0), (1, 0), (0, -1), (0, 1)].iter().any(|&(dx, dy)| {
                let (nx, ny) = (xi + dx, yi + dy);
                let inside =
                    nx >= 0 && ny >= 0 && (nx as usize) < self.width && (ny as usize) < self.height;
                if inside {
                    !self.get(nx as usize, ny as usize)
                } else {
                    outside_is_background
                }
            });
            if on_edge {
                out.push((x, y));
            }
        }
        out
    }

    /// Mirror about the vertical axis.
    pub fn flip_horizontal(&self) -> Self {
        Self::from_fn(self.width, self.height, |x, y| self.get(self.width - 1 - x, y))
    }
}

/// Normalized 1-D Gaussian kernel truncated at radius ⌈3σ⌉.
pub fn gaussian_kernel(sigma: f64) -> Result<Vec<f64>, RasterError> {
    if !(sigma > 0.0) || !sigma.is_finite() {
        return Err(RasterError::NonPositiveSigma(sigma));
    }
    let radius = (3.0 * sigma).ceil() as isize;
    let mut k: Vec<f64> = (-radius..=radius)
        .map(|i| (-((i * i) as f64) / (2.0 * sigma * sigma)).exp())
        .collect();
    let sum: f64 = k.iter().sum();
    k.iter_mut().for_each(|v| *v /= sum);
    Ok(k)
}

/// Separable Gaussian blur. At the borders the kernel is renormalized over
/// the taps that fall inside the image, so constant maps stay constant.
pub fn gaussian_blur(map: &GrayMap, sigma: f64) -> Result<GrayMap, RasterError> {
    let kernel = gaussian_kernel(sigma)?;
    let (w, h) = map.dims();
    let mut tmp = vec![0.0; w * h];
    for y in 0..h {
        let row = &map.data[y * w..(y + 1) * w];
        convolve_line(row, &kernel, &mut tmp[y * w..(y + 1) * w]);
    }
    let mut out = vec![0.0; w * h];
    let mut column = vec![0.0; h];
    let mut blurred = vec![0.0; h];
    for x in 0..w {
        for y in 0..h {
            column[y] = tmp[y * w + x];
        }
        convolve_line(&column, &kernel, &mut blurred);
        for y in 0..h {
            out[y * w + x] = blurred[y];
        }
    }
    Ok(GrayMap {
        width: w,
        height: h,
        data: out,
    })
}

fn convolve_line(src: &[f64], kernel: &[f64], dst: &mut [f64]) {
    let n = src.len() as isize;
    let radius = (kernel.len() / 2) as isize;
    for (i, d) in dst.iter_mut().enumerate() {
        let i = i as isize;
        let lo = (i - radius).max(0);
        let hi = (i + radius).min(n - 1);
        let mut acc = 0.0;
        let mut norm = 0.0;
        for j in lo..=hi {
            let wgt = kernel[(j - i + radius) as usize];
            acc += wgt * src[j as usize];
            norm += wgt;
        }
        *d = acc / norm;
    }
}

/// `mask[p] = map[p] >= th`
pub fn threshold(map: &GrayMap, th: f64) -> BinaryMask {
    BinaryMask {
        width: map.width,
        height: map.height,
        data: map.data.iter().map(|&v| v >= th).collect(),
    }
}

/// Joint RGB histogram with `bins` levels per channel.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RgbHistogram {
    bins: usize,
    counts: Vec<u64>,
    total: u64,
}

impl RgbHistogram {
    pub fn new(bins: usize) -> Result<Self, RasterError> {
        if !(2..=32).contains(&bins) {
            return Err(RasterError::InvalidBins(bins));
        }
        Ok(Self {
            bins,
            counts: vec![0; bins * bins * bins],
            total: 0,
        })
    }

    pub fn bins(&self) -> usize {
        self.bins
    }

    pub fn counts(&self) -> &[u64] {
        &self.counts
    }

    pub fn total(&self) -> u64 {
        self.total
    }

    #[inline]
    pub fn bin_index(&self, rgb: [u8; 3]) -> usize {
        let q = |c: u8| c as usize * self.bins / 256;
        (q(rgb[0]) * self.bins + q(rgb[1])) * self.bins + q(rgb[2])
    }

    pub fn count(&self, r_bin: usize, g_bin: usize, b_bin: usize) -> u64 {
        self.counts[(r_bin * self.bins + g_bin) * self.bins + b_bin]
    }

    #[inline]
    pub fn insert(&mut self, rgb: [u8; 3]) {
        let i = self.bin_index(rgb);
        self.counts[i] += 1;
        self.total += 1;
    }
}

/// Histogram of the pixels of `img` selected by `mask`.
pub fn rgb_histogram(
    img: &RgbImage,
    mask: &BinaryMask,
    bins: usize,
) -> Result<RgbHistogram, RasterError> {
    if img.dims() != mask.dims() {
        return Err(RasterError::DimensionMismatch {
            expected: img.dims(),
            found: mask.dims(),
        });
    }
    let mut hist = RgbHistogram::new(bins)?;
    for (x, y) in mask.iter_set() {
        hist.insert(img.pixel(x, y));
    }
    Ok(hist)
}

/// Chi-square distance between the frequency-normalized histograms, halved
/// so the result lies in [0,1].
pub fn chi_square(h1: &RgbHistogram, h2: &RgbHistogram) -> Result<f64, RasterError> {
    if h1.bins != h2.bins {
        return Err(RasterError::BinMismatch(h1.bins, h2.bins));
    }
    if h1.total == 0 || h2.total == 0 {
        return Err(RasterError::EmptyHistogram);
    }
    let (t1, t2) = (h1.total as f64, h2.total as f64);
    let mut acc = 0.0;
    for (&a, &b) in h1.counts.iter().zip(&h2.counts) {
        if a == 0 && b == 0 {
            continue;
        }
        let (p, q) = (a as f64 / t1, b as f64 / t2);
        acc += (p - q) * (p - q) / (p + q);
    }
    Ok(0.5 * acc)
}

/// Same distance for two already-normalized distributions of equal length.
pub fn chi_square_distributions(p: &[f64], q: &[f64]) -> f64 {
    assert_eq!(p.len(), q.len());
    0.5 * p
        .iter()
        .zip(q)
        .filter(|(a, b)| *a + *b > 0.0)
        .map(|(a, b)| (a - b) * (a - b) / (a + b))
        .sum::<f64>()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Connectivity {
    Four,
    Eight,
}

impl Connectivity {
    fn offsets(self) -> &'static [(isize, isize)] {
        match self {
            Connectivity::Four => &[(-1, 0), (1, 0), (0, -1), (0, 1)],
            Connectivity::Eight => &[
                (-1, -1),
                (0, -1),
                (1, -1),
                (-1, 0),
                (1, 0),
                (-1, 1),
                (0, 1),
                (1, 1),
            ],
        }
    }
}

/// Label image produced by [`connected_components`]. Label 0 is background;
/// components are numbered 1..=count in raster-scan first-encounter order.
#[derive(Clone, Debug)]
pub struct Components {
    pub width: usize,
    pub height: usize,
    pub labels: Vec<u32>,
    pub count: usize,
}

impl Components {
    pub fn label(&self, x: usize, y: usize) -> u32 {
        self.labels[y * self.width + x]
    }

    /// Pixel count per component, indexed by `label - 1`.
    pub fn areas(&self) -> Vec<usize> {
        let mut areas = vec![0; self.count];
        for &l in &self.labels {
            if l > 0 {
                areas[l as usize - 1] += 1;
            }
        }
        areas
    }

    /// Mask of a single component.
    pub fn component_mask(&self, label: u32) -> BinaryMask {
        BinaryMask {
            width: self.width,
            height: self.height,
            data: self.labels.iter().map(|&l| l == label).collect(),
        }
    }
}

pub fn connected_components(mask: &BinaryMask, connectivity: Connectivity) -> Components {
    let (w, h) = mask.dims();
    let mut labels = vec![0u32; w * h];
    let mut count = 0u32;
    let mut queue = VecDeque::new();
    for start in 0..w * h {
        if !mask.data[start] || labels[start] != 0 {
            continue;
        }
        count += 1;
        labels[start] = count;
        queue.push_back(start);
        while let Some(i) = queue.pop_front() {
            let (x, y) = ((i % w) as isize, (i / w) as isize);
            for &(dx, dy) in connectivity.offsets() {
                let (nx, ny) = (x + dx, y + dy);
                if nx < 0 || ny < 0 || nx >= w as isize || ny >= h as isize {
                    continue;
                }
                let j = ny as usize * w + nx as usize;
                if mask.data[j] && labels[j] == 0 {
                    labels[j] = count;
                    queue.push_back(j);
                }
            }
        }
    }
    Components {
        width: w,
        height: h,
        labels,
        count: count as usize,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn blur_preserves_constant_maps() {
        let map = GrayMap::constant(17, 9, 0.37);
        for sigma in [0.5, 2.0, 7.5] {
            let out = gaussian_blur(&map, sigma).unwrap();
            for &v in out.data() {
                assert!((v - 0.37).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn blur_impulse_matches_kernel() {
        let mut map = GrayMap::zeros(31, 31);
        map.set(15, 15, 1.0);
        let out = gaussian_blur(&map, 2.0).unwrap();
        let k = gaussian_kernel(2.0).unwrap();
        let r = k.len() / 2;
        for y in 0..31usize {
            for x in 0..31usize {
                let (dx, dy) = (x as isize - 15, y as isize - 15);
                let expected = if dx.unsigned_abs() <= r && dy.unsigned_abs() <= r {
                    k[(dx + r as isize) as usize] * k[(dy + r as isize) as usize]
                } else {
                    0.0
                };
                assert!((out.get(x, y) - expected).abs() < 1e-15);
            }
        }
        let max = out.max();
        assert_eq!(out.get(15, 15), max);
    }

    #[test]
    fn blur_preserves_interior_mass() {
        let mut map = GrayMap::zeros(40, 40);
        map.set(20, 19, 2.5);
        map.set(18, 21, 0.5);
        let before = map.sum();
        let out = gaussian_blur(&map, 1.5).unwrap();
        assert!((out.sum() - before).abs() < 1e-9);
    }

    #[test]
    fn blur_rejects_bad_sigma() {
        let map = GrayMap::zeros(3, 3);
        assert!(matches!(gaussian_blur(&map, 0.0), Err(RasterError::NonPositiveSigma(_))));
        assert!(matches!(gaussian_blur(&map, -1.0), Err(RasterError::NonPositiveSigma(_))));
    }

    #[test]
    fn threshold_uses_greater_or_equal() {
        assert!(threshold(&GrayMap::constant(3, 2, 0.6), 0.5).is_full());
        assert!(threshold(&GrayMap::constant(3, 2, 0.5), 0.5).is_full());
        let m = threshold(&GrayMap::new(2, 1, vec![0.2, 0.8]).unwrap(), 0.5);
        assert_eq!(m.data(), &[false, true]);
    }

    #[test]
    fn histogram_binning() {
        let img = RgbImage::filled(4, 3, [0, 0, 0]);
        let h = rgb_histogram(&img, &BinaryMask::filled(4, 3, true), 8).unwrap();
        assert_eq!(h.counts()[0], 12);
        assert_eq!(h.counts().iter().sum::<u64>(), 12);
        assert_eq!(h.total(), 12);

        let h = rgb_histogram(&img, &BinaryMask::empty(4, 3), 8).unwrap();
        assert_eq!(h.total(), 0);
        assert!(h.counts().iter().all(|&c| c == 0));

        let img = RgbImage::new(2, 1, vec![0, 0, 0, 255, 255, 255]).unwrap();
        let h = rgb_histogram(&img, &BinaryMask::filled(2, 1, true), 2).unwrap();
        assert_eq!(h.count(0, 0, 0), 1);
        assert_eq!(h.count(1, 1, 1), 1);
        assert_eq!(h.total(), 2);
    }

    #[test]
    fn histogram_errors() {
        let img = RgbImage::filled(4, 3, [0, 0, 0]);
        assert!(matches!(
            rgb_histogram(&img, &BinaryMask::empty(3, 3), 8),
            Err(RasterError::DimensionMismatch { .. })
        ));
        assert!(matches!(
            rgb_histogram(&img, &BinaryMask::empty(4, 3), 1),
            Err(RasterError::InvalidBins(1))
        ));
        assert!(matches!(
            rgb_histogram(&img, &BinaryMask::empty(4, 3), 33),
            Err(RasterError::InvalidBins(33))
        ));
    }

    #[test]
    fn chi_square_examples() {
        let black = RgbImage::filled(2, 2, [0, 0, 0]);
        let white = RgbImage::filled(2, 2, [255, 255, 255]);
        let full = BinaryMask::filled(2, 2, true);
        let hb = rgb_histogram(&black, &full, 8).unwrap();
        let hw = rgb_histogram(&white, &full, 8).unwrap();
        assert_eq!(chi_square(&hb, &hb).unwrap(), 0.0);
        assert!((chi_square(&hb, &hw).unwrap() - 1.0).abs() < 1e-15);
        // ½(0.0625/0.75 + 0.0625/1.25)
        let d = chi_square_distributions(&[0.5, 0.5], &[0.25, 0.75]);
        assert!((d - 0.0667).abs() < 1e-4);
        assert!((d - 0.5 * (0.0625 / 0.75 + 0.0625 / 1.25)).abs() < 1e-15);
    }

    #[test]
    fn chi_square_errors() {
        let img = RgbImage::filled(2, 2, [0, 0, 0]);
        let full = BinaryMask::filled(2, 2, true);
        let h8 = rgb_histogram(&img, &full, 8).unwrap();
        let h4 = rgb_histogram(&img, &full, 4).unwrap();
        let empty = rgb_histogram(&img, &BinaryMask::empty(2, 2), 8).unwrap();
        assert!(matches!(chi_square(&h8, &h4), Err(RasterError::BinMismatch(8, 4))));
        assert!(matches!(chi_square(&h8, &empty), Err(RasterError::EmptyHistogram)));
    }

    #[test]
    fn components_examples() {
        let c = connected_components(&BinaryMask::empty(5, 5), Connectivity::Four);
        assert_eq!(c.count, 0);

        let mut diag = BinaryMask::empty(3, 3);
        diag.set(0, 0, true);
        diag.set(1, 1, true);
        assert_eq!(connected_components(&diag, Connectivity::Four).count, 2);
        assert_eq!(connected_components(&diag, Connectivity::Eight).count, 1);

        let squares = BinaryMask::from_fn(10, 10, |x, y| {
            (1..4).contains(&x) && (1..4).contains(&y) || (5..8).contains(&x) && (6..9).contains(&y)
        });
        let c = connected_components(&squares, Connectivity::Eight);
        assert_eq!(c.count, 2);
        assert_eq!(c.areas(), vec![9, 9]);
        assert_eq!(c.label(1, 1), 1);
        assert_eq!(c.label(5, 6), 2);
    }

    // Recursive flood fill from every unlabeled pixel; returns components as
    // sorted pixel sets so that label order is irrelevant.
    fn flood_fill_oracle(mask: &BinaryMask, conn: Connectivity) -> Vec<Vec<usize>> {
        let (w, h) = mask.dims();
        let mut seen = vec![false; w * h];
        let mut comps = Vec::new();
        fn visit(
            mask: &BinaryMask,
            conn: Connectivity,
            seen: &mut [bool],
            x: isize,
            y: isize,
            out: &mut Vec<usize>,
        ) {
            let (w, h) = mask.dims();
            if x < 0 || y < 0 || x >= w as isize || y >= h as isize {
                return;
            }
            let i = y as usize * w + x as usize;
            if seen[i] || !mask.data()[i] {
                return;
            }
            seen[i] = true;
            out.push(i);
            for &(dx, dy) in conn.offsets() {
                visit(mask, conn, seen, x + dx, y + dy, out);
            }
        }
        for i in 0..w * h {
            if mask.data()[i] && !seen[i] {
                let mut comp = Vec::new();
                visit(mask, conn, &mut seen, (i % w) as isize, (i / w) as isize, &mut comp);
                comp.sort_unstable();
                comps.push(comp);
            }
        }
        comps.sort();
        comps
    }

    proptest! {
        #[test]
        fn components_match_flood_fill(bits in proptest::collection::vec(any::<bool>(), 48), eight in any::<bool>()) {
            let mask = BinaryMask::new(8, 6, bits).unwrap();
            let conn = if eight { Connectivity::Eight } else { Connectivity::Four };
            let c = connected_components(&mask, conn);
            let mut ours: Vec<Vec<usize>> = (1..=c.count as u32)
                .map(|l| (0..48).filter(|&i| c.labels[i] == l).collect())
                .collect();
            ours.sort();
            prop_assert_eq!(ours, flood_fill_oracle(&mask, conn));
        }

        #[test]
        fn histogram_total_is_mask_popcount(bits in proptest::collection::vec(any::<bool>(), 30), seed in any::<u8>()) {
            let img = RgbImage::from_fn(6, 5, |x, y| [(x * 40) as u8 ^ seed, (y * 50) as u8, seed]);
            let mask = BinaryMask::new(6, 5, bits).unwrap();
            let h = rgb_histogram(&img, &mask, 8).unwrap();
            prop_assert_eq!(h.total() as usize, mask.count());
            prop_assert_eq!(h.counts().iter().sum::<u64>(), h.total());
        }

        #[test]
        fn chi_square_is_a_bounded_symmetric_distance(
            a in proptest::collection::vec(0u64..20, 8),
            b in proptest::collection::vec(0u64..20, 8),
        ) {
            prop_assume!(a.iter().sum::<u64>() > 0 && b.iter().sum::<u64>() > 0);
            let mk = |c: &[u64]| RgbHistogram { bins: 2, counts: c.to_vec(), total: c.iter().sum() };
            let (h1, h2) = (mk(&a), mk(&b));
            let d = chi_square(&h1, &h2).unwrap();
            prop_assert_eq!(d, chi_square(&h2, &h1).unwrap());
            prop_assert!((0.0..=1.0 + 1e-12).contains(&d));
            prop_assert_eq!(chi_square(&h1, &h1).unwrap(), 0.0);
        }

        #[test]
        fn threshold_of_constant_is_uniform(v in 0.0f64..1.0, th in 0.0f64..1.0) {
            let m = threshold(&GrayMap::constant(4, 4, v), th);
            prop_assert!(m.is_full() || m.is_empty());
        }
    }
}
