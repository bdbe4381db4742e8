//! Benchmark scores: precision/recall curves and F-measure, ROC AUC,
//! shuffled AUC, intersection over union, and the two inter-subject
//! consistency protocols.

use std::collections::HashSet;
use std::path::Path;

use rand::seq::{index, SliceRandom};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::fixproc::{render_fixation_map, FixationSet, CONSISTENCY_SIGMA_FRAC};
use crate::raster::{BinaryMask, GrayMap};

/// Weight on precision in the F-measure (this is β², not β).
pub const F_BETA_SQ: f64 = 0.3;
/// Number of evenly spaced binarization levels in [0,1].
pub const PR_LEVELS: usize = 256;
/// Default number of negative draws averaged by the shuffled AUC.
pub const SAUC_SPLITS: usize = 100;
/// Uniform negatives per positive for plain-AUC consistency scoring.
pub const NEGATIVE_RATIO: usize = 10;

#[derive(Debug, Error)]
pub enum MetricError {
    #[error("no maps to score")]
    Empty,
    #[error("{maps} maps but {gts} ground-truth masks")]
    LengthMismatch { maps: usize, gts: usize },
    #[error("map {index} is {map:?} but its ground truth is {gt:?}")]
    DimensionMismatch {
        index: usize,
        map: (usize, usize),
        gt: (usize, usize),
    },
    #[error("empty {0} sample set")]
    EmptySamples(&'static str),
    #[error("pixel {0:?} outside the map")]
    OutOfBounds((usize, usize)),
    #[error("need at least 2 subjects per image, image {image} has {found}")]
    TooFewSubjects { image: usize, found: usize },
    #[error("no image could be scored")]
    NothingScored,
    #[error(transparent)]
    Fixation(#[from] crate::fixproc::FixationError),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// The 256 binarization levels `i/255`.
pub fn pr_thresholds() -> Vec<f64> {
    (0..PR_LEVELS).map(|i| i as f64 / (PR_LEVELS - 1) as f64).collect()
}

/// Pixel counts of one binarized prediction against ground truth.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct Confusion {
    pub tp: u64,
    pub fp: u64,
    pub fn_: u64,
}

impl Confusion {
    /// 1 when nothing is predicted positive.
    pub fn precision(&self) -> f64 {
        if self.tp + self.fp == 0 {
            1.0
        } else {
            self.tp as f64 / (self.tp + self.fp) as f64
        }
    }

    /// 1 when the ground truth has no positives.
    pub fn recall(&self) -> f64 {
        if self.tp + self.fn_ == 0 {
            1.0
        } else {
            self.tp as f64 / (self.tp + self.fn_) as f64
        }
    }

    pub fn merge(&mut self, other: &Confusion) {
        self.tp += other.tp;
        self.fp += other.fp;
        self.fn_ += other.fn_;
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct PrCurve {
    pub thresholds: Vec<f64>,
    pub precision: Vec<f64>,
    pub recall: Vec<f64>,
}

/// Best F-measure along a curve and the operating point that achieves it.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FScore {
    pub f: f64,
    pub precision: f64,
    pub recall: f64,
    pub threshold: f64,
}

impl PrCurve {
    /// Maximum F over all levels; the lowest threshold wins ties.
    pub fn best_f(&self, beta_sq: f64) -> FScore {
        let mut best = FScore {
            f: f64::NEG_INFINITY,
            precision: 0.0,
            recall: 0.0,
            threshold: 0.0,
        };
        for i in 0..self.thresholds.len() {
            let f = f_measure(self.precision[i], self.recall[i], beta_sq);
            if f > best.f {
                best = FScore {
                    f,
                    precision: self.precision[i],
                    recall: self.recall[i],
                    threshold: self.thresholds[i],
                };
            }
        }
        best
    }

    /// `threshold,precision,recall` rows.
    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<(), MetricError> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(["threshold", "precision", "recall"])?;
        for i in 0..self.thresholds.len() {
            w.write_record([
                format!("{:.6}", self.thresholds[i]),
                format!("{:.6}", self.precision[i]),
                format!("{:.6}", self.recall[i]),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// How per-image counts are combined into one curve.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum PrAggregation {
    /// Sum TP/FP/FN over the dataset, then compute P and R.
    #[default]
    Pooled,
    /// Compute P and R per image and average them.
    PerImage,
}

fn check_pairs(maps_len: usize, gts_len: usize) -> Result<(), MetricError> {
    if maps_len != gts_len {
        return Err(MetricError::LengthMismatch {
            maps: maps_len,
            gts: gts_len,
        });
    }
    if maps_len == 0 {
        return Err(MetricError::Empty);
    }
    Ok(())
}

/// Confusion counts of one map at every level.
fn image_counts(
    map: &GrayMap,
    gt: &BinaryMask,
    thresholds: &[f64],
) -> Vec<Confusion> {
    // hist[i] counts pixels whose highest level not exceeding the value is i
    let n = thresholds.len();
    let mut pos = vec![0u64; n + 1];
    let mut neg = vec![0u64; n + 1];
    for (&v, &g) in map.data().iter().zip(gt.data()) {
        // number of levels t with t <= v; 0 means never predicted positive
        let k = thresholds.partition_point(|&t| t <= v);
        if g {
            pos[k] += 1;
        } else {
            neg[k] += 1;
        }
    }
    let total_pos: u64 = pos.iter().sum();
    let mut out = vec![Confusion::default(); n];
    let (mut tp, mut fp) = (0u64, 0u64);
    for i in (0..n).rev() {
        // level i is passed by every pixel with k >= i + 1
        tp += pos[i + 1];
        fp += neg[i + 1];
        out[i] = Confusion {
            tp,
            fp,
            fn_: total_pos - tp,
        };
    }
    out
}

/// Precision/recall at the 256 levels, pooled over the dataset.
pub fn pr_curve(maps: &[GrayMap], gts: &[BinaryMask]) -> Result<PrCurve, MetricError> {
    pr_curve_with(maps, gts, PrAggregation::Pooled)
}

pub fn pr_curve_with(
    maps: &[GrayMap],
    gts: &[BinaryMask],
    aggregation: PrAggregation,
) -> Result<PrCurve, MetricError> {
    check_pairs(maps.len(), gts.len())?;
    let thresholds = pr_thresholds();
    let n = thresholds.len();
    let mut pooled = vec![Confusion::default(); n];
    let mut p_sum = vec![0.0; n];
    let mut r_sum = vec![0.0; n];
    for (i, (map, gt)) in maps.iter().zip(gts).enumerate() {
        if map.dims() != gt.dims() {
            return Err(MetricError::DimensionMismatch {
                index: i,
                map: map.dims(),
                gt: gt.dims(),
            });
        }
        let counts = image_counts(map, gt, &thresholds);
        for (j, c) in counts.iter().enumerate() {
            pooled[j].merge(c);
            p_sum[j] += c.precision();
            r_sum[j] += c.recall();
        }
    }
    let (precision, recall) = match aggregation {
        PrAggregation::Pooled => (
            pooled.iter().map(Confusion::precision).collect(),
            pooled.iter().map(Confusion::recall).collect(),
        ),
        PrAggregation::PerImage => {
            let m = maps.len() as f64;
            (
                p_sum.iter().map(|p| p / m).collect(),
                r_sum.iter().map(|r| r / m).collect(),
            )
        }
    };
    Ok(PrCurve {
        thresholds,
        precision,
        recall,
    })
}

/// `(1+β²)PR / (β²P + R)`, defined as 0 when R = 0.
pub fn f_measure(precision: f64, recall: f64, beta_sq: f64) -> f64 {
    if recall == 0.0 {
        return 0.0;
    }
    let denom = beta_sq * precision + recall;
    (1.0 + beta_sq) * precision * recall / denom
}

/// Maximum F (β² = 0.3) over the pooled PR curve.
pub fn dataset_f(maps: &[GrayMap], gts: &[BinaryMask]) -> Result<f64, MetricError> {
    Ok(best_f(maps, gts, PrAggregation::Pooled)?.f)
}

pub fn best_f(
    maps: &[GrayMap],
    gts: &[BinaryMask],
    aggregation: PrAggregation,
) -> Result<FScore, MetricError> {
    Ok(pr_curve_with(maps, gts, aggregation)?.best_f(F_BETA_SQ))
}

/// F of binary predictions, counts pooled over the dataset.
pub fn binary_f(masks: &[BinaryMask], gts: &[BinaryMask]) -> Result<FScore, MetricError> {
    check_pairs(masks.len(), gts.len())?;
    let mut total = Confusion::default();
    for (i, (m, g)) in masks.iter().zip(gts).enumerate() {
        if m.dims() != g.dims() {
            return Err(MetricError::DimensionMismatch {
                index: i,
                map: m.dims(),
                gt: g.dims(),
            });
        }
        for (&p, &t) in m.data().iter().zip(g.data()) {
            total.tp += (p && t) as u64;
            total.fp += (p && !t) as u64;
            total.fn_ += (!p && t) as u64;
        }
    }
    let (precision, recall) = (total.precision(), total.recall());
    Ok(FScore {
        f: f_measure(precision, recall, F_BETA_SQ),
        precision,
        recall,
        threshold: 0.5,
    })
}

/// Mann-Whitney AUC of two score samples; ties count one half.
pub fn auc_from_scores(positives: &[f64], negatives: &[f64]) -> Result<f64, MetricError> {
    if positives.is_empty() {
        return Err(MetricError::EmptySamples("positive"));
    }
    if negatives.is_empty() {
        return Err(MetricError::EmptySamples("negative"));
    }
    let mut neg = negatives.to_vec();
    neg.sort_by(f64::total_cmp);
    // wins are counted in half-units to stay in exact integer arithmetic
    let mut half_wins: u64 = 0;
    for &p in positives {
        let below = neg.partition_point(|&n| n < p) as u64;
        let not_above = neg.partition_point(|&n| n <= p) as u64;
        half_wins += 2 * below + (not_above - below);
    }
    Ok(half_wins as f64 / (2.0 * positives.len() as f64 * negatives.len() as f64))
}

fn sample_map(map: &GrayMap, pixels: &[(usize, usize)]) -> Result<Vec<f64>, MetricError> {
    pixels
        .iter()
        .map(|&(x, y)| {
            if x < map.width() && y < map.height() {
                Ok(map.get(x, y))
            } else {
                Err(MetricError::OutOfBounds((x, y)))
            }
        })
        .collect()
}

/// Probability that a positive pixel outscores a negative pixel.
pub fn roc_auc(
    map: &GrayMap,
    positives: &[(usize, usize)],
    negatives: &[(usize, usize)],
) -> Result<f64, MetricError> {
    auc_from_scores(&sample_map(map, positives)?, &sample_map(map, negatives)?)
}

/// AUC with negatives drawn from fixations made on other images, averaged
/// over `n_splits` seeded draws. Each draw takes as many negatives as there
/// are positives, or the whole pool when it is smaller.
pub fn shuffled_auc(
    map: &GrayMap,
    this_image: &[(usize, usize)],
    other_images: &[(usize, usize)],
    n_splits: usize,
    seed: u64,
) -> Result<f64, MetricError> {
    if this_image.is_empty() {
        return Err(MetricError::EmptySamples("positive"));
    }
    if other_images.is_empty() {
        return Err(MetricError::EmptySamples("negative"));
    }
    let pos = sample_map(map, this_image)?;
    let pool = sample_map(map, other_images)?;
    let take = pos.len().min(pool.len());
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let splits = n_splits.max(1);
    let mut acc = 0.0;
    let mut neg = Vec::with_capacity(take);
    for _ in 0..splits {
        neg.clear();
        neg.extend(index::sample(&mut rng, pool.len(), take).iter().map(|i| pool[i]));
        acc += auc_from_scores(&pos, &neg)?;
    }
    Ok(acc / splits as f64)
}

/// |a ∧ b| / |a ∨ b|, or 0 when both are empty.
pub fn iou(a: &BinaryMask, b: &BinaryMask) -> Result<f64, MetricError> {
    let (inter, union) = a.overlap_counts(b).map_err(|_| MetricError::DimensionMismatch {
        index: 0,
        map: a.dims(),
        gt: b.dims(),
    })?;
    Ok(if union == 0 {
        0.0
    } else {
        inter as f64 / union as f64
    })
}

/// Per-image fixations of every subject.
#[derive(Clone, Debug)]
pub struct ImageFixations {
    pub width: usize,
    pub height: usize,
    pub subjects: Vec<FixationSet>,
}

/// Score used to compare the test-half map with the held-out fixations.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum ConsistencyScore {
    /// Negatives are uniformly drawn non-fixated pixels.
    #[default]
    Auc,
    /// Negatives are held-out fixations made on other images.
    ShuffledAuc,
}

fn split_subjects(n: usize, rng: &mut ChaCha8Rng) -> (Vec<usize>, Vec<usize>) {
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(rng);
    let gt = order.split_off(n / 2);
    (order, gt)
}

/// Rescales a pixel from one image frame to another.
pub fn rescale_pixel(
    (x, y): (usize, usize),
    from: (usize, usize),
    to: (usize, usize),
) -> (usize, usize) {
    let map = |v: usize, a: usize, b: usize| {
        (((v as f64 + 0.5) * b as f64 / a as f64 - 0.5).round().max(0.0) as usize).min(b - 1)
    };
    (map(x, from.0, to.0), map(y, from.1, to.1))
}

/// `NEGATIVE_RATIO` times as many distinct non-fixated pixels as there are
/// positives (or all of them when fewer remain), drawn uniformly.
fn uniform_negatives(
    width: usize,
    height: usize,
    positives: &[(usize, usize)],
    rng: &mut ChaCha8Rng,
) -> Vec<(usize, usize)> {
    let fixated: HashSet<(usize, usize)> = positives.iter().copied().collect();
    let candidates: Vec<(usize, usize)> = (0..height)
        .flat_map(|y| (0..width).map(move |x| (x, y)))
        .filter(|p| !fixated.contains(p))
        .collect();
    let take = (NEGATIVE_RATIO * positives.len()).min(candidates.len());
    index::sample(rng, candidates.len(), take)
        .iter()
        .map(|j| candidates[j])
        .collect()
}

/// Mean scores of fixation-prediction maps against recorded fixations.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FixationBenchmark {
    /// Negatives drawn uniformly from non-fixated pixels.
    pub auc: f64,
    /// Negatives drawn from the fixations of the other images.
    pub shuffled_auc: f64,
    pub n_images: usize,
}

/// Scores `maps[i]` against the fixated pixels `fixations[i]`; images without
/// fixations are skipped.
pub fn benchmark_fixation_maps(
    maps: &[GrayMap],
    fixations: &[Vec<(usize, usize)>],
    seed: u64,
) -> Result<FixationBenchmark, MetricError> {
    check_pairs(maps.len(), fixations.len())?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (mut auc, mut sauc, mut n) = (0.0, 0.0, 0usize);
    for (i, (map, pos)) in maps.iter().zip(fixations).enumerate() {
        if pos.is_empty() {
            continue;
        }
        let negatives = uniform_negatives(map.width(), map.height(), pos, &mut rng);
        let others: Vec<(usize, usize)> = maps
            .iter()
            .zip(fixations)
            .enumerate()
            .filter(|&(j, _)| j != i)
            .flat_map(|(_, (m, f))| f.iter().map(move |&p| rescale_pixel(p, m.dims(), map.dims())))
            .collect();
        if negatives.is_empty() || others.is_empty() {
            continue;
        }
        auc += roc_auc(map, pos, &negatives)?;
        use rand::Rng;
        sauc += shuffled_auc(map, pos, &others, SAUC_SPLITS, rng.gen())?;
        n += 1;
    }
    if n == 0 {
        return Err(MetricError::NothingScored);
    }
    Ok(FixationBenchmark {
        auc: auc / n as f64,
        shuffled_auc: sauc / n as f64,
        n_images: n,
    })
}

/// Fixation consistency with plain AUC.
pub fn consistency_fixation(images: &[ImageFixations], seed: u64) -> Result<f64, MetricError> {
    consistency_fixation_with(images, ConsistencyScore::Auc, seed)
}

/// Half of the subjects (chosen at random per image) form a blurred test map;
/// the other half's fixations are the positives. Scores are averaged over
/// images that have held-out fixations.
pub fn consistency_fixation_with(
    images: &[ImageFixations],
    score: ConsistencyScore,
    seed: u64,
) -> Result<f64, MetricError> {
    if images.is_empty() {
        return Err(MetricError::Empty);
    }
    for (i, img) in images.iter().enumerate() {
        if img.subjects.len() < 2 {
            return Err(MetricError::TooFewSubjects {
                image: i,
                found: img.subjects.len(),
            });
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let splits: Vec<(Vec<usize>, Vec<usize>)> = images
        .iter()
        .map(|img| split_subjects(img.subjects.len(), &mut rng))
        .collect();
    let held_out: Vec<Vec<(usize, usize)>> = images
        .iter()
        .zip(&splits)
        .map(|(img, (_, gt))| {
            gt.iter()
                .flat_map(|&s| img.subjects[s].pixels(img.width, img.height))
                .collect()
        })
        .collect();

    let mut total = 0.0;
    let mut scored = 0usize;
    for (i, img) in images.iter().enumerate() {
        let positives = &held_out[i];
        if positives.is_empty() {
            continue;
        }
        let test: Vec<FixationSet> = splits[i]
            .0
            .iter()
            .map(|&s| img.subjects[s].clone())
            .collect();
        let map = render_fixation_map(&test, img.width, img.height, CONSISTENCY_SIGMA_FRAC)?;
        let value = match score {
            ConsistencyScore::Auc => {
                let negatives = uniform_negatives(img.width, img.height, positives, &mut rng);
                if negatives.is_empty() {
                    continue;
                }
                roc_auc(&map, positives, &negatives)?
            }
            ConsistencyScore::ShuffledAuc => {
                let others: Vec<(usize, usize)> = images
                    .iter()
                    .enumerate()
                    .filter(|&(j, _)| j != i)
                    .flat_map(|(j, o)| {
                        held_out[j]
                            .iter()
                            .map(move |&p| rescale_pixel(p, (o.width, o.height), (img.width, img.height)))
                    })
                    .collect();
                if others.is_empty() {
                    continue;
                }
                use rand::Rng;
                shuffled_auc(&map, positives, &others, SAUC_SPLITS, rng.gen())?
            }
        };
        total += value;
        scored += 1;
    }
    if scored == 0 {
        return Err(MetricError::NothingScored);
    }
    Ok(total / scored as f64)
}

/// Per image, each half's masks are averaged and thresholded at 0.5; the test
/// half is scored against the other half with the pooled binary F-measure.
/// `images[i]` holds one binary mask per subject.
pub fn consistency_segmentation(
    images: &[Vec<BinaryMask>],
    seed: u64,
) -> Result<f64, MetricError> {
    if images.is_empty() {
        return Err(MetricError::Empty);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut tests = Vec::with_capacity(images.len());
    let mut gts = Vec::with_capacity(images.len());
    for (i, masks) in images.iter().enumerate() {
        if masks.len() < 2 {
            return Err(MetricError::TooFewSubjects {
                image: i,
                found: masks.len(),
            });
        }
        let (test, gt) = split_subjects(masks.len(), &mut rng);
        tests.push(majority(masks, &test, i)?);
        gts.push(majority(masks, &gt, i)?);
    }
    Ok(binary_f(&tests, &gts)?.f)
}

/// Pixels selected by at least half of the chosen masks.
fn majority(masks: &[BinaryMask], chosen: &[usize], image: usize) -> Result<BinaryMask, MetricError> {
    let (w, h) = masks[chosen[0]].dims();
    let mut votes = vec![0usize; w * h];
    for &s in chosen {
        let m = &masks[s];
        if m.dims() != (w, h) {
            return Err(MetricError::DimensionMismatch {
                index: image,
                map: (w, h),
                gt: m.dims(),
            });
        }
        for (v, &b) in votes.iter_mut().zip(m.data()) {
            *v += b as usize;
        }
    }
    let n = chosen.len();
    Ok(BinaryMask::new(w, h, votes.into_iter().map(|v| 2 * v >= n).collect())
        .expect("dimensions already checked"))
}

/// One row of a score report.
#[derive(Clone, Debug, PartialEq)]
pub struct BenchmarkScore {
    pub metric: String,
    pub dataset: String,
    pub algorithm: String,
    pub value: f64,
    pub n_images: usize,
}

/// `metric,dataset,algorithm,value,n_images` rows.
pub fn write_scores_csv(path: impl AsRef<Path>, scores: &[BenchmarkScore]) -> Result<(), MetricError> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["metric", "dataset", "algorithm", "value", "n_images"])?;
    for s in scores {
        w.write_record([
            s.metric.clone(),
            s.dataset.clone(),
            s.algorithm.clone(),
            format!("{:.6}", s.value),
            s.n_images.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}
