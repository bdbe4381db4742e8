//! Dataset design-bias statistics: local and global color contrast of
//! labeled objects, boundary strength on an edge map, and object size.

use std::path::Path;

use thiserror::Error;

use crate::raster::{chi_square, BinaryMask, GrayMap, RasterError, RgbHistogram, RgbImage};

pub const DEFAULT_BINS: usize = 8;
pub const LOCAL_PATCH: usize = 5;
pub const BOUNDARY_PATCH: usize = 3;
pub const HIST_BINS: usize = 20;

#[derive(Debug, Error)]
pub enum StatsError {
    #[error("mask is empty")]
    EmptyMask,
    #[error("mask covers the whole image")]
    FullMask,
    #[error("mask has no boundary pixels")]
    EmptyBoundary,
    #[error(transparent)]
    Raster(#[from] RasterError),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

fn check_dims(a: (usize, usize), b: (usize, usize)) -> Result<(), StatsError> {
    if a != b {
        return Err(RasterError::DimensionMismatch {
            expected: a,
            found: b,
        }
        .into());
    }
    Ok(())
}

fn check_mask(mask: &BinaryMask) -> Result<(), StatsError> {
    if mask.is_empty() {
        return Err(StatsError::EmptyMask);
    }
    if mask.is_full() {
        return Err(StatsError::FullMask);
    }
    Ok(())
}

/// Inclusive window of side `patch` centred on `(x, y)`, clipped to the image.
fn window(x: usize, y: usize, patch: usize, w: usize, h: usize) -> (usize, usize, usize, usize) {
    let r = patch / 2;
    (
        x.saturating_sub(r),
        y.saturating_sub(r),
        (x + r).min(w - 1),
        (y + r).min(h - 1),
    )
}

/// Mean chi-square distance between foreground and background color
/// histograms in `patch`×`patch` windows centred on the object boundary.
pub fn local_color_contrast(
    img: &RgbImage,
    mask: &BinaryMask,
    patch: usize,
    bins: usize,
) -> Result<f64, StatsError> {
    check_dims(img.dims(), mask.dims())?;
    check_mask(mask)?;
    let boundary = mask.inner_boundary();
    let (w, h) = img.dims();
    let mut total = 0.0;
    let mut used = 0usize;
    for (x, y) in boundary {
        let (x0, y0, x1, y1) = window(x, y, patch, w, h);
        let mut fg = RgbHistogram::new(bins)?;
        let mut bg = RgbHistogram::new(bins)?;
        for wy in y0..=y1 {
            for wx in x0..=x1 {
                if mask.get(wx, wy) {
                    fg.insert(img.pixel(wx, wy));
                } else {
                    bg.insert(img.pixel(wx, wy));
                }
            }
        }
        if fg.total() == 0 || bg.total() == 0 {
            continue;
        }
        total += chi_square(&fg, &bg)?;
        used += 1;
    }
    if used == 0 {
        return Err(StatsError::EmptyBoundary);
    }
    Ok(total / used as f64)
}

/// Chi-square distance between the object and background color histograms.
pub fn global_color_contrast(
    img: &RgbImage,
    mask: &BinaryMask,
    bins: usize,
) -> Result<f64, StatsError> {
    check_dims(img.dims(), mask.dims())?;
    check_mask(mask)?;
    let fg = crate::raster::rgb_histogram(img, mask, bins)?;
    let bg = crate::raster::rgb_histogram(img, &mask.not(), bins)?;
    Ok(chi_square(&fg, &bg)?)
}

/// Mean edge response in `patch`×`patch` windows around boundary pixels.
pub fn boundary_strength(
    edge_map: &GrayMap,
    mask: &BinaryMask,
    patch: usize,
) -> Result<f64, StatsError> {
    check_dims(edge_map.dims(), mask.dims())?;
    let boundary = mask.inner_boundary();
    if boundary.is_empty() {
        return Err(StatsError::EmptyBoundary);
    }
    let (w, h) = mask.dims();
    let mut total = 0.0;
    for &(x, y) in &boundary {
        let (x0, y0, x1, y1) = window(x, y, patch, w, h);
        let mut sum = 0.0;
        for wy in y0..=y1 {
            for wx in x0..=x1 {
                sum += edge_map.get(wx, wy);
            }
        }
        total += sum / ((x1 - x0 + 1) * (y1 - y0 + 1)) as f64;
    }
    Ok(total / boundary.len() as f64)
}

/// Per-channel Sobel magnitude, maximum over channels, scaled by the global
/// maximum. Borders replicate the nearest pixel.
pub fn default_edge_map(img: &RgbImage) -> GrayMap {
    let (w, h) = img.dims();
    let at = |x: isize, y: isize, c: usize| -> f64 {
        let xc = x.clamp(0, w as isize - 1) as usize;
        let yc = y.clamp(0, h as isize - 1) as usize;
        img.pixel(xc, yc)[c] as f64
    };
    let raw = GrayMap::from_fn(w, h, |x, y| {
        let (x, y) = (x as isize, y as isize);
        (0..3)
            .map(|c| {
                let gx = (at(x + 1, y - 1, c) + 2.0 * at(x + 1, y, c) + at(x + 1, y + 1, c))
                    - (at(x - 1, y - 1, c) + 2.0 * at(x - 1, y, c) + at(x - 1, y + 1, c));
                let gy = (at(x - 1, y + 1, c) + 2.0 * at(x, y + 1, c) + at(x + 1, y + 1, c))
                    - (at(x - 1, y - 1, c) + 2.0 * at(x, y - 1, c) + at(x + 1, y - 1, c));
                gx.hypot(gy)
            })
            .fold(0.0, f64::max)
    });
    raw.normalize_peak()
}

/// Fraction of image pixels covered by the mask.
pub fn object_size(mask: &BinaryMask) -> f64 {
    mask.count() as f64 / (mask.width() * mask.height()) as f64
}

#[derive(Clone, Debug, PartialEq)]
pub struct ObjectStats {
    pub image_id: String,
    pub object_id: String,
    pub local_contrast: f64,
    pub global_contrast: f64,
    pub boundary_strength: f64,
    pub size_fraction: f64,
}

pub const STAT_NAMES: [&str; 4] = [
    "local_contrast",
    "global_contrast",
    "boundary_strength",
    "size_fraction",
];

impl ObjectStats {
    pub fn compute(
        image_id: &str,
        object_id: &str,
        img: &RgbImage,
        mask: &BinaryMask,
        edge_map: &GrayMap,
    ) -> Result<Self, StatsError> {
        Ok(Self {
            image_id: image_id.to_string(),
            object_id: object_id.to_string(),
            local_contrast: local_color_contrast(img, mask, LOCAL_PATCH, DEFAULT_BINS)?,
            global_contrast: global_color_contrast(img, mask, DEFAULT_BINS)?,
            boundary_strength: boundary_strength(edge_map, mask, BOUNDARY_PATCH)?,
            size_fraction: object_size(mask),
        })
    }

    pub fn values(&self) -> [f64; 4] {
        [
            self.local_contrast,
            self.global_contrast,
            self.boundary_strength,
            self.size_fraction,
        ]
    }
}

/// One `stats.csv` row per object.
pub fn write_stats_csv(path: impl AsRef<Path>, stats: &[ObjectStats]) -> Result<(), StatsError> {
    let mut w = csv::Writer::from_path(path)?;
    let mut header = vec!["image", "object"];
    header.extend(STAT_NAMES);
    w.write_record(&header)?;
    for s in stats {
        let mut row = vec![s.image_id.clone(), s.object_id.clone()];
        row.extend(s.values().iter().map(|v| format!("{v:.6}")));
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

/// Counts of `values` in `bins` equal-width bins over [0,1]; 1.0 falls in the
/// last bin and out-of-range values are clamped.
pub fn unit_histogram(values: impl IntoIterator<Item = f64>, bins: usize) -> Vec<usize> {
    let mut counts = vec![0; bins];
    for v in values {
        let i = ((v.clamp(0.0, 1.0) * bins as f64) as usize).min(bins - 1);
        counts[i] += 1;
    }
    counts
}

/// `statistic,bin_lo,bin_hi,count,fraction` rows, 20 bins per statistic.
pub fn write_stats_hist_csv(path: impl AsRef<Path>, stats: &[ObjectStats]) -> Result<(), StatsError> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["statistic", "bin_lo", "bin_hi", "count", "fraction"])?;
    for (k, name) in STAT_NAMES.iter().enumerate() {
        let counts = unit_histogram(stats.iter().map(|s| s.values()[k]), HIST_BINS);
        let n = stats.len().max(1) as f64;
        for (i, c) in counts.iter().enumerate() {
            w.write_record([
                name.to_string(),
                format!("{:.2}", i as f64 / HIST_BINS as f64),
                format!("{:.2}", (i + 1) as f64 / HIST_BINS as f64),
                c.to_string(),
                format!("{:.6}", *c as f64 / n),
            ])?;
        }
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn square_scene() -> (RgbImage, BinaryMask) {
        let inside = |x: usize, y: usize| (12..28).contains(&x) && (8..20).contains(&y);
        let img = RgbImage::from_fn(40, 30, |x, y| if inside(x, y) { [0, 0, 0] } else { [255, 255, 255] });
        (img, BinaryMask::from_fn(40, 30, inside))
    }

    #[test]
    fn uniform_image_has_no_contrast() {
        let img = RgbImage::filled(30, 20, [90, 120, 30]);
        let mask = BinaryMask::from_fn(30, 20, |x, y| x > 5 && x < 20 && y > 3 && y < 15);
        assert_eq!(local_color_contrast(&img, &mask, 5, 8).unwrap(), 0.0);
        assert_eq!(global_color_contrast(&img, &mask, 8).unwrap(), 0.0);
        let edges = default_edge_map(&img);
        assert!(edges.data().iter().all(|&v| v == 0.0));
        assert_eq!(boundary_strength(&edges, &mask, 3).unwrap(), 0.0);
    }

    #[test]
    fn black_square_on_white() {
        let (img, mask) = square_scene();
        assert!((local_color_contrast(&img, &mask, 5, 8).unwrap() - 1.0).abs() < 1e-12);
        assert!((global_color_contrast(&img, &mask, 8).unwrap() - 1.0).abs() < 1e-12);
        let b = boundary_strength(&default_edge_map(&img), &mask, 3).unwrap();
        assert!(b > 0.3, "{b}");
        assert_eq!(object_size(&mask), (16 * 12) as f64 / 1200.0);
    }

    #[test]
    fn same_texture_on_both_sides_has_zero_local_contrast() {
        // rows alternate colors, so every window column has the same palette
        let img = RgbImage::from_fn(24, 17, |_, y| if y % 2 == 0 { [200, 10, 10] } else { [10, 10, 200] });
        let mask = BinaryMask::from_fn(24, 17, |x, _| x < 11);
        assert!(local_color_contrast(&img, &mask, 5, 8).unwrap().abs() < 1e-9);
    }

    #[test]
    fn random_half_of_noise_has_low_global_contrast() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let img = RgbImage::from_fn(160, 160, |_, _| rng.gen());
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let mask = BinaryMask::from_fn(160, 160, |_, _| rng.gen_bool(0.5));
        let c = global_color_contrast(&img, &mask, 8).unwrap();
        assert!(c < 0.05, "{c}");
    }

    #[test]
    fn degenerate_masks_are_rejected() {
        let img = RgbImage::filled(5, 5, [0, 0, 0]);
        assert!(matches!(
            local_color_contrast(&img, &BinaryMask::empty(5, 5), 5, 8),
            Err(StatsError::EmptyMask)
        ));
        assert!(matches!(
            local_color_contrast(&img, &BinaryMask::filled(5, 5, true), 5, 8),
            Err(StatsError::FullMask)
        ));
        assert!(matches!(
            global_color_contrast(&img, &BinaryMask::filled(5, 5, true), 8),
            Err(StatsError::FullMask)
        ));
        assert!(matches!(
            boundary_strength(&GrayMap::zeros(5, 5), &BinaryMask::empty(5, 5), 3),
            Err(StatsError::EmptyBoundary)
        ));
    }

    #[test]
    fn boundary_strength_examples() {
        let mask = BinaryMask::from_fn(20, 12, |x, _| x < 8);
        assert_eq!(boundary_strength(&GrayMap::constant(20, 12, 1.0), &mask, 3).unwrap(), 1.0);
        assert_eq!(boundary_strength(&GrayMap::zeros(20, 12), &mask, 3).unwrap(), 0.0);
        // indicator of the boundary column: every window holds one boundary column out of three
        let boundary = mask.inner_boundary();
        let mut edge = GrayMap::zeros(20, 12);
        for &(x, y) in &boundary {
            edge.set(x, y, 1.0);
        }
        let b = boundary_strength(&edge, &mask, 3).unwrap();
        assert!((b - 3.0 / 9.0).abs() < 1e-12);
    }

    #[test]
    fn sobel_step_and_ramp() {
        let step = RgbImage::from_fn(12, 6, |x, _| if x < 6 { [0; 3] } else { [255; 3] });
        let e = default_edge_map(&step);
        for y in 0..6 {
            assert_eq!(e.get(5, y), 1.0);
            assert_eq!(e.get(6, y), 1.0);
            assert_eq!(e.get(1, y), 0.0);
            assert_eq!(e.get(10, y), 0.0);
        }
        let ramp = RgbImage::from_fn(10, 5, |x, _| [x as u8 * 10; 3]);
        let e = default_edge_map(&ramp);
        for y in 0..5 {
            for x in 1..9 {
                assert_eq!(e.get(x, y), 1.0);
            }
        }
    }

    #[test]
    fn object_size_examples() {
        assert_eq!(object_size(&BinaryMask::filled(10, 10, true)), 1.0);
        assert_eq!(object_size(&BinaryMask::empty(10, 10)), 0.0);
        assert_eq!(object_size(&BinaryMask::from_fn(10, 10, |x, y| x < 5 && y < 5)), 0.25);
    }

    #[test]
    fn report_files() {
        let (img, mask) = square_scene();
        let s = ObjectStats::compute("a", "01", &img, &mask, &default_edge_map(&img)).unwrap();
        let dir = tempfile::tempdir().unwrap();
        write_stats_csv(dir.path().join("stats.csv"), &[s.clone()]).unwrap();
        write_stats_hist_csv(dir.path().join("stats_hist.csv"), &[s]).unwrap();
        let hist = std::fs::read_to_string(dir.path().join("stats_hist.csv")).unwrap();
        assert_eq!(hist.lines().count(), 1 + 4 * HIST_BINS);
        assert_eq!(unit_histogram([0.0, 0.05, 1.0, 0.999], 20), {
            let mut v = vec![0; 20];
            v[0] = 1;
            v[1] = 1;
            v[19] = 2;
            v
        });
    }

    fn scene_strategy() -> impl Strategy<Value = (RgbImage, BinaryMask)> {
        (any::<u64>(), 2usize..6, 2usize..6, 3usize..9, 3usize..7).prop_map(|(seed, x0, y0, mw, mh)| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let img = RgbImage::from_fn(16, 12, |_, _| [rng.gen_range(0..4) * 60, rng.gen(), 128]);
            let mask = BinaryMask::from_fn(16, 12, |x, y| (x0..x0 + mw).contains(&x) && (y0..y0 + mh).contains(&y) && (x + y) % 5 != 0);
            (img, mask)
        })
    }

    proptest! {
        #[test]
        fn stats_are_mirror_invariant((img, mask) in scene_strategy()) {
            let (w, h) = img.dims();
            let mirror = RgbImage::from_fn(w, h, |x, y| img.pixel(w - 1 - x, y));
            let mmask = mask.flip_horizontal();
            let a = ObjectStats::compute("i", "o", &img, &mask, &default_edge_map(&img)).unwrap();
            let b = ObjectStats::compute("i", "o", &mirror, &mmask, &default_edge_map(&mirror)).unwrap();
            for (p, q) in a.values().iter().zip(b.values()) {
                prop_assert!((p - q).abs() < 1e-12);
            }
        }

        #[test]
        fn contrast_is_channel_permutation_invariant((img, mask) in scene_strategy()) {
            let (w, h) = img.dims();
            let perm = RgbImage::from_fn(w, h, |x, y| { let p = img.pixel(x, y); [p[2], p[0], p[1]] });
            prop_assert!((local_color_contrast(&img, &mask, 5, 8).unwrap() - local_color_contrast(&perm, &mask, 5, 8).unwrap()).abs() < 1e-12);
            prop_assert!((global_color_contrast(&img, &mask, 8).unwrap() - global_color_contrast(&perm, &mask, 8).unwrap()).abs() < 1e-12);
        }

        #[test]
        fn boundary_strength_within_edge_range((img, mask) in scene_strategy()) {
            let e = default_edge_map(&img);
            let b = boundary_strength(&e, &mask, 3).unwrap();
            prop_assert!(b >= e.min() - 1e-12 && b <= e.max() + 1e-12);
        }
    }
}
