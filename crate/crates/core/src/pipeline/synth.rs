//! Deterministic synthetic datasets in the on-disk layout of [`DatasetIndex`].

use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::dataset::{ClickRecord, ClickTable, DatasetIndex};
use super::PipelineError;
use crate::fixproc::{write_gaze_csv, GazeSample};
use crate::proposals::{builtin_proposals, save_pool, CandidateSource, SegmentCandidate, SegmentPool};
use crate::raster::{save_mask_pgm, save_ppm, BinaryMask, RgbImage};

pub const GAZE_SUBJECTS: usize = 8;
pub const CLICK_SUBJECTS: usize = 12;
pub const BUILTIN_PER_IMAGE: usize = 24;
pub const DISTRACTORS_PER_IMAGE: usize = 20;
/// Gaze sampling period (125 Hz).
pub const SAMPLE_MS: f64 = 8.0;
/// Click probability = this × area fraction × color contrast, capped at 1.
const CLICK_GAIN: f64 = 60.0;
/// Share of fixations placed uniformly instead of on an object.
const DISTRACTOR_FIXATION_RATE: f64 = 0.2;
const MIN_OBJECT_PIXELS: usize = 50;

#[derive(Clone, Copy, Debug)]
enum Shape {
    Rect { x0: f64, y0: f64, x1: f64, y1: f64 },
    Ellipse { cx: f64, cy: f64, rx: f64, ry: f64 },
}

impl Shape {
    fn contains(&self, x: usize, y: usize) -> bool {
        let (px, py) = (x as f64 + 0.5, y as f64 + 0.5);
        match *self {
            Shape::Rect { x0, y0, x1, y1 } => px >= x0 && px < x1 && py >= y0 && py < y1,
            Shape::Ellipse { cx, cy, rx, ry } => {
                let (dx, dy) = ((px - cx) / rx, (py - cy) / ry);
                dx * dx + dy * dy <= 1.0
            }
        }
    }

    fn mask(&self, w: usize, h: usize) -> BinaryMask {
        BinaryMask::from_fn(w, h, |x, y| self.contains(x, y))
    }

    /// Random rectangle or ellipse with extents in the given fractions of the frame.
    fn random(rng: &mut ChaCha8Rng, w: usize, h: usize, lo: f64, hi: f64) -> Shape {
        let (wf, hf) = (w as f64, h as f64);
        let sw = rng.gen_range(lo..hi) * wf;
        let sh = rng.gen_range(lo..hi) * hf;
        let x0 = rng.gen_range(0.0..(wf - sw).max(1.0));
        let y0 = rng.gen_range(0.0..(hf - sh).max(1.0));
        if rng.gen_bool(0.5) {
            Shape::Rect { x0, y0, x1: x0 + sw, y1: y0 + sh }
        } else {
            Shape::Ellipse {
                cx: x0 + sw / 2.0,
                cy: y0 + sh / 2.0,
                rx: sw / 2.0,
                ry: sh / 2.0,
            }
        }
    }
}

struct SynthObject {
    mask: BinaryMask,
    click_prob: f64,
}

struct SynthImage {
    id: String,
    image: RgbImage,
    objects: Vec<SynthObject>,
    gaze: Vec<Vec<GazeSample>>,
    clicks: Vec<ClickRecord>,
    pool: SegmentPool,
}

fn clamp_u8(v: f64) -> u8 {
    v.round().clamp(0.0, 255.0) as u8
}

fn color_contrast(a: [f64; 3], b: [f64; 3]) -> f64 {
    let d = (0..3).map(|c| (a[c] - b[c]).powi(2)).sum::<f64>().sqrt();
    d / (255.0 * 3f64.sqrt())
}

fn random_point_in(mask: &BinaryMask, rng: &mut ChaCha8Rng) -> (f64, f64) {
    let pts: Vec<(usize, usize)> = mask.iter_set().collect();
    let (x, y) = pts[rng.gen_range(0..pts.len())];
    (x as f64, y as f64)
}

/// Point near the object's centroid, resampled until it lands inside the mask.
fn point_near_center(mask: &BinaryMask, rng: &mut ChaCha8Rng) -> (f64, f64) {
    let n = mask.count() as f64;
    let (sx, sy) = mask.iter_set().fold((0.0, 0.0), |(a, b), (x, y)| (a + x as f64, b + y as f64));
    let (cx, cy) = (sx / n, sy / n);
    let spread = 0.25 * n.sqrt();
    for _ in 0..20 {
        // Box-Muller
        let (u1, u2): (f64, f64) = (rng.gen_range(f64::EPSILON..1.0), rng.gen());
        let r = (-2.0 * u1.ln()).sqrt() * spread;
        let t = std::f64::consts::TAU * u2;
        let (x, y) = (cx + r * t.cos(), cy + r * t.sin());
        let (xi, yi) = (x.round(), y.round());
        if xi >= 0.0 && yi >= 0.0 && mask.get_signed(xi as isize, yi as isize) {
            return (x, y);
        }
    }
    random_point_in(mask, rng)
}

/// One viewing of 2–3 s: fixations of 180–400 ms joined by fast saccades,
/// with occasional blinks.
fn simulate_gaze(objects: &[SynthObject], w: usize, h: usize, rng: &mut ChaCha8Rng) -> Vec<GazeSample> {
    let total: f64 = objects.iter().map(|o| o.click_prob).sum();
    let viewing_ms = rng.gen_range(2000.0..3000.0);
    let mut samples = Vec::new();
    let mut t = 0.0;
    let mut prev: Option<(f64, f64)> = None;
    while t < viewing_ms {
        let target = if rng.gen_bool(DISTRACTOR_FIXATION_RATE) || objects.is_empty() {
            (rng.gen_range(0.0..(w - 1) as f64), rng.gen_range(0.0..(h - 1) as f64))
        } else {
            let mut pick = rng.gen_range(0.0..1.0) * total;
            let mut chosen = &objects[0];
            for o in objects {
                chosen = o;
                if total <= 0.0 || pick < o.click_prob {
                    break;
                }
                pick -= o.click_prob;
            }
            if total <= 0.0 {
                chosen = &objects[rng.gen_range(0..objects.len())];
            }
            point_near_center(&chosen.mask, rng)
        };
        if let Some((px, py)) = prev {
            for s in 1..=3 {
                let a = s as f64 / 4.0;
                samples.push(GazeSample {
                    t_ms: t,
                    x: px + a * (target.0 - px),
                    y: py + a * (target.1 - py),
                    valid: true,
                });
                t += SAMPLE_MS;
            }
        }
        let dur = rng.gen_range(180.0..400.0);
        let end = t + dur;
        while t < end {
            samples.push(GazeSample {
                t_ms: t,
                x: target.0 + rng.gen_range(-0.3..0.3),
                y: target.1 + rng.gen_range(-0.3..0.3),
                valid: true,
            });
            t += SAMPLE_MS;
        }
        if rng.gen_bool(0.1) {
            for _ in 0..10 {
                samples.push(GazeSample { t_ms: t, x: 0.0, y: 0.0, valid: false });
                t += SAMPLE_MS;
            }
        }
        prev = Some(target);
    }
    samples
}

fn synth_image(index: usize, w: usize, h: usize, seed: u64) -> SynthImage {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index as u64);
    let id = format!("img{index:04}");

    let base: [f64; 3] = std::array::from_fn(|_| rng.gen_range(40.0..215.0));
    let amp = rng.gen_range(10.0..25.0);
    let (fx, fy) = (rng.gen_range(0.05..0.3), rng.gen_range(0.05..0.3));
    let (p1, p2) = (rng.gen_range(0.0..6.3), rng.gen_range(0.0..6.3));
    let mut pixels: Vec<[f64; 3]> = (0..w * h)
        .map(|i| {
            let (x, y) = ((i % w) as f64, (i / w) as f64);
            let wave = amp * (fx * x + p1).sin() * (fy * y + p2).sin();
            std::array::from_fn(|c| base[c] + wave + rng.gen_range(-12.0..12.0))
        })
        .collect();

    let n_objects = rng.gen_range(1..=3);
    let (objects, colors) = loop {
        let shapes: Vec<Shape> = (0..n_objects).map(|_| Shape::random(&mut rng, w, h, 0.08, 0.45)).collect();
        let full: Vec<BinaryMask> = shapes.iter().map(|s| s.mask(w, h)).collect();
        // later shapes occlude earlier ones
        let visible: Vec<BinaryMask> = (0..n_objects)
            .map(|i| {
                let mut m = full[i].clone();
                for later in &full[i + 1..] {
                    m = m.and(&later.not()).expect("same dims");
                }
                m
            })
            .collect();
        let ok = visible
            .iter()
            .zip(&full)
            .all(|(v, f)| v.count() >= MIN_OBJECT_PIXELS && 5 * v.count() >= 2 * f.count());
        if ok {
            let colors: Vec<[f64; 3]> = (0..n_objects)
                .map(|_| std::array::from_fn(|_| rng.gen_range(0.0..255.0)))
                .collect();
            break (visible, colors);
        }
    };

    let mut synth_objects = Vec::with_capacity(n_objects);
    for (mask, color) in objects.into_iter().zip(&colors) {
        for (x, y) in mask.iter_set() {
            pixels[y * w + x] = std::array::from_fn(|c| color[c] + rng.gen_range(-4.0..4.0));
        }
        let area = mask.count() as f64 / (w * h) as f64;
        let click_prob = (CLICK_GAIN * area * color_contrast(*color, base)).min(1.0);
        synth_objects.push(SynthObject { mask, click_prob });
    }
    let image = RgbImage::from_fn(w, h, |x, y| pixels[y * w + x].map(clamp_u8));

    let gaze = (0..GAZE_SUBJECTS).map(|_| simulate_gaze(&synth_objects, w, h, &mut rng)).collect();

    let mut clicks = Vec::new();
    for s in 0..CLICK_SUBJECTS {
        for (o, obj) in synth_objects.iter().enumerate() {
            clicks.push(ClickRecord {
                image: id.clone(),
                object: o + 1,
                subject: format!("c{:02}", s + 1),
                clicked: rng.gen_bool(obj.click_prob),
            });
        }
    }

    let mut candidates: Vec<(BinaryMask, CandidateSource)> = synth_objects
        .iter()
        .map(|o| (o.mask.clone(), CandidateSource::GroundTruth))
        .collect();
    let builtin = builtin_proposals(&image, BUILTIN_PER_IMAGE, rng.gen());
    candidates.extend(builtin.candidates.into_iter().map(|c| (c.mask, c.source)));
    let mut distractors = 0;
    while distractors < DISTRACTORS_PER_IMAGE {
        let m = Shape::random(&mut rng, w, h, 0.1, 0.5).mask(w, h);
        if !m.is_empty() {
            candidates.push((m, CandidateSource::Builtin));
            distractors += 1;
        }
    }
    candidates.shuffle(&mut rng);
    let pool = SegmentPool {
        image_id: id.clone(),
        candidates: candidates
            .into_iter()
            .enumerate()
            .map(|(i, (mask, source))| SegmentCandidate { mask, rank: i + 1, source, score: None })
            .collect(),
    };

    SynthImage { id, image, objects: synth_objects, gaze, clicks, pool }
}

/// Writes `n_images` synthetic images with object ground truth, clicks, gaze
/// logs and segment pools under `root`, and indexes the result.
///
/// Each image has a textured background and 1–3 flat-colored rectangles or
/// ellipses. Click probability grows with object area and color contrast;
/// gaze subjects fixate near the centers of objects chosen in proportion to
/// that probability, plus uniform distractor fixations. Pools mix the object
/// masks, built-in proposals and random distractor shapes in shuffled order.
pub fn synth_dataset(root: impl AsRef<Path>, n_images: usize, width: usize, height: usize, seed: u64) -> Result<DatasetIndex, PipelineError> {
    if n_images < 10 {
        return Err(PipelineError::InvalidParameter(format!("need at least 10 images, got {n_images}")));
    }
    if width < 16 || height < 16 {
        return Err(PipelineError::InvalidParameter(format!("image size {width}x{height} is too small")));
    }
    let root = root.as_ref();
    for d in ["images", "objects", "segments", "fixations"] {
        fs::create_dir_all(root.join(d))?;
    }
    for s in 0..GAZE_SUBJECTS {
        fs::create_dir_all(root.join("fixations").join(format!("s{:02}", s + 1)))?;
    }

    let clicks: Vec<Vec<ClickRecord>> = (0..n_images)
        .into_par_iter()
        .map(|i| -> Result<Vec<ClickRecord>, PipelineError> {
            let img = synth_image(i, width, height, seed);
            save_ppm(&img.image, root.join("images").join(format!("{}.ppm", img.id)))?;
            let obj_dir = root.join("objects").join(&img.id);
            fs::create_dir_all(&obj_dir)?;
            for (o, obj) in img.objects.iter().enumerate() {
                save_mask_pgm(&obj.mask, obj_dir.join(format!("{:02}.pgm", o + 1)))?;
            }
            for (s, gaze) in img.gaze.iter().enumerate() {
                let p = root.join("fixations").join(format!("s{:02}", s + 1)).join(format!("{}.csv", img.id));
                write_gaze_csv(p, gaze)?;
            }
            save_pool(&img.pool, root.join("segments").join(&img.id))?;
            Ok(img.clicks)
        })
        .collect::<Result<_, _>>()?;
    ClickTable::new(clicks.into_iter().flatten().collect()).write(root.join("clicks.csv"))?;
    DatasetIndex::open(root)
}
