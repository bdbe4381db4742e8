//! Training targets, folds, top-K composition and the experiments built on them.

use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::config::{ExperimentConfig, FixationSource};
use super::dataset::{DatasetIndex, SalientGroundTruth};
use super::PipelineError;
use crate::fixproc::{add_center_bias, fixation_count_map};
use crate::forest::Forest;
use crate::metrics::{best_f, iou, FScore, PrAggregation};
use crate::proposals::{best_overlap_selection, CandidateSource, SegmentPool};
use crate::raster::{BinaryMask, GrayMap};
use crate::segfeat::{extract, FeatureVector, FEATURE_DIM};

/// Which candidates an experiment scores.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PoolSource {
    /// `segments/<id>/`.
    Stored,
    /// The image's ground-truth object masks.
    GroundTruth,
}

/// Everything an experiment needs about one image, computed once.
#[derive(Clone, Debug)]
pub struct PreparedImage {
    pub id: String,
    /// Union of the salient objects.
    pub gt: BinaryMask,
    pub salient: Vec<BinaryMask>,
    pub pool: SegmentPool,
    /// One per pool candidate, in rank order.
    pub features: Vec<FeatureVector>,
    pub targets: Vec<f64>,
}

/// Fixation energy for an image of the given size: raw human fixation counts
/// or an external map, optionally blended with a centered prior.
pub fn energy_map(index: &DatasetIndex, id: &str, dims: (usize, usize), cfg: &ExperimentConfig) -> Result<GrayMap, PipelineError> {
    let (w, h) = dims;
    let energy = match &cfg.fixation_source {
        FixationSource::Human => fixation_count_map(&index.fixations(id, w, h)?, w, h),
        FixationSource::Map(alg) => {
            let m = index.map(alg, id)?;
            if m.dims() != dims {
                return Err(PipelineError::DimensionMismatch {
                    id: id.to_string(),
                    what: "map",
                    expected: dims,
                    found: m.dims(),
                });
            }
            m
        }
    };
    Ok(match cfg.center_bias_sigma {
        Some(s) => add_center_bias(&energy.normalize_peak(), s)?,
        None => energy,
    })
}

/// Features of every candidate against `energy`, paired with the candidate's
/// best IoU over the salient objects (0 when there are none).
pub fn build_targets(pool: &SegmentPool, gt: &SalientGroundTruth, energy: &GrayMap) -> Result<Vec<(FeatureVector, f64)>, PipelineError> {
    if gt.objects.is_empty() {
        return Err(PipelineError::MissingGroundTruth(pool.image_id.clone()));
    }
    let salient: Vec<&BinaryMask> = gt.salient_objects().collect();
    pool.candidates
        .iter()
        .map(|c| {
            let mut target = 0.0f64;
            for s in &salient {
                target = target.max(iou(&c.mask, s)?);
            }
            Ok((extract(&c.mask, energy)?, target))
        })
        .collect()
}

/// Loads, featurizes and labels every image of the index.
pub fn prepare(index: &DatasetIndex, cfg: &ExperimentConfig, source: PoolSource) -> Result<Vec<PreparedImage>, PipelineError> {
    let clicks = index.clicks()?;
    index
        .image_ids
        .par_iter()
        .map(|id| {
            let gt = index.ground_truth(id, &clicks)?;
            let dims = gt.objects[0].dims();
            let pool = match source {
                PoolSource::Stored => index.pool(id)?,
                PoolSource::GroundTruth => SegmentPool::from_masks(id.clone(), gt.objects.clone(), CandidateSource::GroundTruth)?,
            };
            if pool.is_empty() {
                return Err(PipelineError::EmptyPool(id.clone()));
            }
            if let Some(c) = pool.candidates.iter().find(|c| c.mask.dims() != dims) {
                return Err(PipelineError::DimensionMismatch {
                    id: id.clone(),
                    what: "segment",
                    expected: dims,
                    found: c.mask.dims(),
                });
            }
            let energy = energy_map(index, id, dims, cfg)?;
            let (features, targets) = build_targets(&pool, &gt, &energy)?.into_iter().unzip();
            Ok(PreparedImage {
                id: id.clone(),
                gt: gt.combined(),
                salient: gt.salient_objects().cloned().collect(),
                pool,
                features,
                targets,
            })
        })
        .collect()
}

/// Stored pool and candidate features of one image, without ground truth.
#[derive(Clone, Debug)]
pub struct FeaturizedPool {
    pub pool: SegmentPool,
    pub features: Vec<FeatureVector>,
}

/// Features of every stored pool; needs no ground truth.
pub fn featurize_pools(index: &DatasetIndex, cfg: &ExperimentConfig) -> Result<Vec<FeaturizedPool>, PipelineError> {
    index
        .image_ids
        .par_iter()
        .map(|id| {
            let pool = index.pool(id)?;
            let energy = energy_map(index, id, pool.candidates[0].mask.dims(), cfg)?;
            let features = pool
                .candidates
                .iter()
                .map(|c| Ok(extract(&c.mask, &energy)?))
                .collect::<Result<Vec<_>, PipelineError>>()?;
            Ok(FeaturizedPool { pool, features })
        })
        .collect()
}

/// Pixelwise mean of the `k` best-scoring masks (ties go to the lower rank);
/// `k` is clamped to the pool size.
pub fn compose_topk(pool: &SegmentPool, scores: &[f64], k: usize) -> Result<GrayMap, PipelineError> {
    if pool.is_empty() {
        return Err(PipelineError::EmptyPool(pool.image_id.clone()));
    }
    if scores.len() != pool.len() {
        return Err(PipelineError::InvalidParameter(format!(
            "{} scores for {} candidates",
            scores.len(),
            pool.len()
        )));
    }
    if k == 0 {
        return Err(PipelineError::InvalidParameter("k must be at least 1".into()));
    }
    if scores.iter().any(|s| s.is_nan()) {
        return Err(PipelineError::InvalidParameter("NaN segment score".into()));
    }
    let mut order: Vec<usize> = (0..pool.len()).collect();
    // candidates are in rank order, so the stable sort breaks ties by rank
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    let k = k.min(pool.len());
    let (w, h) = pool.candidates[0].mask.dims();
    let mut counts = vec![0u32; w * h];
    for &i in &order[..k] {
        for (c, &b) in counts.iter_mut().zip(pool.candidates[i].mask.data()) {
            *c += b as u32;
        }
    }
    Ok(GrayMap::new(w, h, counts.into_iter().map(|c| c as f64 / k as f64).collect())?)
}

#[derive(Clone, Debug, PartialEq)]
pub struct FoldSplit {
    pub train: Vec<usize>,
    pub test: Vec<usize>,
    /// Seed of the fold's forest.
    pub seed: u64,
}

/// `n_folds` random splits with round(`train_fraction`·n) training images.
pub fn fold_splits(n: usize, train_fraction: f64, n_folds: usize, seed: u64) -> Result<Vec<FoldSplit>, PipelineError> {
    let n_train = (train_fraction * n as f64).round() as usize;
    if n_train == 0 || n_train >= n {
        return Err(PipelineError::DegenerateSplit {
            n_train,
            n_test: n.saturating_sub(n_train),
        });
    }
    Ok((0..n_folds)
        .map(|f| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(f as u64);
            let mut order: Vec<usize> = (0..n).collect();
            order.shuffle(&mut rng);
            let mut test = order.split_off(n_train);
            let mut train = order;
            train.sort_unstable();
            test.sort_unstable();
            FoldSplit {
                train,
                test,
                seed: rng.gen(),
            }
        })
        .collect())
}

/// Forest on every candidate of the given images.
pub fn train_forest(images: &[&PreparedImage], cfg: &ExperimentConfig, seed: u64) -> Result<Forest, PipelineError> {
    let rows: Vec<&[f64]> = images.iter().flat_map(|im| im.features.iter().map(|f| f.as_slice())).collect();
    let targets: Vec<f64> = images.iter().flat_map(|im| im.targets.iter().copied()).collect();
    Ok(Forest::train(&rows, &targets, &cfg.forest, seed)?)
}

pub fn predict_scores(forest: &Forest, image: &PreparedImage) -> Result<Vec<f64>, PipelineError> {
    image
        .features
        .iter()
        .map(|f| Ok(forest.predict(f.as_slice())?))
        .collect()
}

#[derive(Clone, Debug, PartialEq)]
pub struct FoldScore {
    pub fold: usize,
    pub n_train: usize,
    pub n_test: usize,
    /// Best point of the test images' pooled PR curve.
    pub score: FScore,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ExperimentReport {
    pub k: usize,
    pub folds: Vec<FoldScore>,
    pub mean_f: f64,
    pub mean_precision: f64,
    pub mean_recall: f64,
}

impl ExperimentReport {
    fn new(k: usize, folds: Vec<FoldScore>) -> Self {
        let n = folds.len().max(1) as f64;
        let mean = |f: fn(&FScore) -> f64| folds.iter().map(|s| f(&s.score)).sum::<f64>() / n;
        Self {
            k,
            mean_f: mean(|s| s.f),
            mean_precision: mean(|s| s.precision),
            mean_recall: mean(|s| s.recall),
            folds,
        }
    }
}

/// Model and external-rank baseline results, one report per K.
#[derive(Clone, Debug, PartialEq)]
pub struct KSweep {
    pub ks: Vec<usize>,
    pub model: Vec<ExperimentReport>,
    /// Candidates scored by their external rank alone.
    pub baseline: Vec<ExperimentReport>,
}

fn score_fold(images: &[PreparedImage], test: &[usize], scores: &[Vec<f64>], k: usize) -> Result<FScore, PipelineError> {
    let maps = test
        .iter()
        .zip(scores)
        .map(|(&i, s)| compose_topk(&images[i].pool, s, k))
        .collect::<Result<Vec<_>, _>>()?;
    let gts: Vec<BinaryMask> = test.iter().map(|&i| images[i].gt.clone()).collect();
    Ok(best_f(&maps, &gts, PrAggregation::Pooled)?)
}

/// Trains one forest per fold on the training images and scores the test
/// images at every K, reusing the forest and its predictions across K.
pub fn ksweep_prepared(images: &[PreparedImage], cfg: &ExperimentConfig, ks: &[usize]) -> Result<KSweep, PipelineError> {
    cfg.validate()?;
    if ks.is_empty() || ks.contains(&0) {
        return Err(PipelineError::InvalidParameter("K values must be at least 1".into()));
    }
    let splits = fold_splits(images.len(), cfg.train_fraction, cfg.n_folds, cfg.seed)?;
    let per_fold: Vec<(Vec<FoldScore>, Vec<FoldScore>)> = splits
        .par_iter()
        .enumerate()
        .map(|(fold, split)| {
            let train: Vec<&PreparedImage> = split.train.iter().map(|&i| &images[i]).collect();
            let forest = train_forest(&train, cfg, split.seed)?;
            let model_scores = split
                .test
                .iter()
                .map(|&i| predict_scores(&forest, &images[i]))
                .collect::<Result<Vec<_>, _>>()?;
            let rank_scores: Vec<Vec<f64>> = split
                .test
                .iter()
                .map(|&i| images[i].pool.candidates.iter().map(|c| -(c.rank as f64)).collect())
                .collect();
            let mut model = Vec::with_capacity(ks.len());
            let mut baseline = Vec::with_capacity(ks.len());
            for &k in ks {
                let mk = |score| FoldScore {
                    fold,
                    n_train: split.train.len(),
                    n_test: split.test.len(),
                    score,
                };
                model.push(mk(score_fold(images, &split.test, &model_scores, k)?));
                baseline.push(mk(score_fold(images, &split.test, &rank_scores, k)?));
            }
            Ok((model, baseline))
        })
        .collect::<Result<_, PipelineError>>()?;

    let report = |pick: fn(&(Vec<FoldScore>, Vec<FoldScore>)) -> &Vec<FoldScore>| {
        ks.iter()
            .enumerate()
            .map(|(j, &k)| ExperimentReport::new(k, per_fold.iter().map(|f| pick(f)[j].clone()).collect()))
            .collect()
    };
    Ok(KSweep {
        ks: ks.to_vec(),
        model: report(|f| &f.0),
        baseline: report(|f| &f.1),
    })
}

pub fn run_prepared(images: &[PreparedImage], cfg: &ExperimentConfig) -> Result<ExperimentReport, PipelineError> {
    Ok(ksweep_prepared(images, cfg, &[cfg.k])?.model.remove(0))
}

/// Per-fold and mean F of the model on the stored pools.
pub fn run_experiment(index: &DatasetIndex, cfg: &ExperimentConfig) -> Result<ExperimentReport, PipelineError> {
    run_prepared(&prepare(index, cfg, PoolSource::Stored)?, cfg)
}

pub fn ksweep(index: &DatasetIndex, cfg: &ExperimentConfig, ks: &[usize]) -> Result<KSweep, PipelineError> {
    ksweep_prepared(&prepare(index, cfg, PoolSource::Stored)?, cfg, ks)
}

/// The experiment with pools replaced by the ground-truth object masks and
/// human fixations as the energy source.
pub fn upper_bound_selector(index: &DatasetIndex, cfg: &ExperimentConfig) -> Result<ExperimentReport, PipelineError> {
    let cfg = ExperimentConfig {
        fixation_source: FixationSource::Human,
        ..cfg.clone()
    };
    run_prepared(&prepare(index, &cfg, PoolSource::GroundTruth)?, &cfg)
}

/// Per image, the union of the best-overlapping candidate among the first
/// `first_n` for each salient object, scored with the pooled F-measure.
pub fn upper_bound_segmenter_prepared(images: &[PreparedImage], first_n: usize) -> Result<FScore, PipelineError> {
    let maps = images
        .par_iter()
        .map(|im| {
            let (w, h) = im.gt.dims();
            let mut union = BinaryMask::empty(w, h);
            if !im.salient.is_empty() {
                for s in best_overlap_selection(&im.pool, &im.salient, first_n)? {
                    union = union.or(&im.pool.candidates[s.index].mask)?;
                }
            }
            Ok(union.to_map())
        })
        .collect::<Result<Vec<_>, PipelineError>>()?;
    let gts: Vec<BinaryMask> = images.iter().map(|im| im.gt.clone()).collect();
    Ok(best_f(&maps, &gts, PrAggregation::Pooled)?)
}

pub fn upper_bound_segmenter(index: &DatasetIndex, cfg: &ExperimentConfig) -> Result<FScore, PipelineError> {
    upper_bound_segmenter_prepared(&prepare(index, cfg, PoolSource::Stored)?, cfg.first_n)
}

/// `K,F` rows.
pub fn write_ksweep_csv(path: impl AsRef<Path>, reports: &[ExperimentReport]) -> Result<(), PipelineError> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["K", "F"])?;
    for r in reports {
        w.write_record([r.k.to_string(), format!("{:.6}", r.mean_f)])?;
    }
    w.flush()?;
    Ok(())
}

/// `image-id,rank,f0..f32,target-iou` rows, one per candidate.
pub fn write_features_csv(path: impl AsRef<Path>, images: &[PreparedImage]) -> Result<(), PipelineError> {
    let mut w = csv::Writer::from_path(path)?;
    let mut header = vec!["image-id".to_string(), "rank".to_string()];
    header.extend((0..FEATURE_DIM).map(|i| format!("f{i}")));
    header.push("target-iou".into());
    w.write_record(&header)?;
    for im in images {
        for ((c, f), t) in im.pool.candidates.iter().zip(&im.features).zip(&im.targets) {
            let mut row = vec![im.id.clone(), c.rank.to_string()];
            row.extend(f.as_slice().iter().map(|v| v.to_string()));
            row.push(t.to_string());
            w.write_record(&row)?;
        }
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metrics::dataset_f;
    use proptest::prelude::*;

    fn rect(w: usize, h: usize, x0: usize, y0: usize, x1: usize, y1: usize) -> BinaryMask {
        BinaryMask::from_fn(w, h, |x, y| x >= x0 && x < x1 && y >= y0 && y < y1)
    }

    fn pool(masks: Vec<BinaryMask>) -> SegmentPool {
        SegmentPool::from_masks("t", masks, CandidateSource::External).unwrap()
    }

    #[test]
    fn targets_examples() {
        let obj = rect(20, 10, 0, 0, 8, 10);
        let gt = SalientGroundTruth {
            objects: vec![obj.clone(), rect(20, 10, 15, 0, 20, 2)],
            saliency: vec![1.0, 0.0],
        };
        let half = rect(20, 10, 0, 0, 4, 10);
        let p = pool(vec![obj.clone(), rect(20, 10, 10, 0, 14, 10), half, rect(20, 10, 15, 0, 20, 2)]);
        let energy = GrayMap::constant(20, 10, 1.0);
        let t: Vec<f64> = build_targets(&p, &gt, &energy).unwrap().into_iter().map(|r| r.1).collect();
        // 40 of 80 pixels shared, union 80
        assert_eq!(t, vec![1.0, 0.0, 0.5, 0.0]);
    }

    #[test]
    fn compose_examples() {
        let a = rect(6, 4, 0, 0, 3, 4);
        let b = rect(6, 4, 2, 0, 6, 2);
        let p = pool(vec![a.clone(), b.clone()]);
        assert_eq!(compose_topk(&p, &[0.2, 0.9], 1).unwrap(), b.to_map());
        // ties go to rank 1
        assert_eq!(compose_topk(&p, &[0.5, 0.5], 1).unwrap(), a.to_map());
        let all = compose_topk(&p, &[0.1, 0.2], 10).unwrap();
        assert_eq!(all, compose_topk(&p, &[0.1, 0.2], 2).unwrap());
        assert_eq!(all.get(2, 0), 1.0);
        assert_eq!(all.get(0, 0), 0.5);
        let twin = pool(vec![a.clone(), a.clone(), b]);
        assert_eq!(compose_topk(&twin, &[1.0, 1.0, 0.0], 2).unwrap(), a.to_map());
        assert!(compose_topk(&p, &[0.1], 1).is_err());
        assert!(compose_topk(&p, &[0.1, 0.2], 0).is_err());
    }

    #[test]
    fn splits_follow_fraction() {
        let s = fold_splits(100, 0.4, 10, 3).unwrap();
        assert_eq!(s.len(), 10);
        for f in &s {
            assert_eq!((f.train.len(), f.test.len()), (40, 60));
            let mut all: Vec<usize> = f.train.iter().chain(&f.test).copied().collect();
            all.sort_unstable();
            assert_eq!(all, (0..100).collect::<Vec<_>>());
        }
        assert_ne!(s[0].train, s[1].train);
        assert_eq!(s, fold_splits(100, 0.4, 10, 3).unwrap());
        assert!(matches!(fold_splits(1, 0.4, 1, 0), Err(PipelineError::DegenerateSplit { .. })));
    }

    fn toy_images(n: usize) -> Vec<PreparedImage> {
        (0..n)
            .map(|i| {
                let (w, h) = (12, 10);
                let obj = rect(w, h, i % 5, 2, i % 5 + 5, 8);
                let other = rect(w, h, 0, 0, w, 2);
                let p = pool(vec![other, obj.clone(), BinaryMask::filled(w, h, true)]);
                let mut energy = GrayMap::zeros(w, h);
                energy.set(i % 5 + 2, 5, 3.0);
                let gt = SalientGroundTruth {
                    objects: vec![obj.clone()],
                    saliency: vec![1.0],
                };
                let (features, targets) = build_targets(&p, &gt, &energy).unwrap().into_iter().unzip();
                PreparedImage {
                    id: format!("i{i}"),
                    gt: obj.clone(),
                    salient: vec![obj],
                    pool: p,
                    features,
                    targets,
                }
            })
            .collect()
    }

    fn small_cfg() -> ExperimentConfig {
        let mut cfg = ExperimentConfig {
            k: 1,
            n_folds: 3,
            ..Default::default()
        };
        cfg.forest.n_trees = 5;
        cfg.forest.min_leaf = 1;
        cfg
    }

    #[test]
    fn toy_experiment_is_deterministic() {
        let images = toy_images(20);
        let a = run_prepared(&images, &small_cfg()).unwrap();
        let b = run_prepared(&images, &small_cfg()).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.folds.len(), 3);
        assert!(a.folds.iter().all(|f| (f.n_train, f.n_test) == (8, 12)));
        assert!(a.mean_f > 0.99, "{}", a.mean_f);
    }

    #[test]
    fn ksweep_single_k_matches_direct_run() {
        let images = toy_images(15);
        let cfg = small_cfg();
        let sweep = ksweep_prepared(&images, &cfg, &[1, 2, 3]).unwrap();
        assert_eq!(sweep.model[0], run_prepared(&images, &cfg).unwrap());
        for r in sweep.model.iter().chain(&sweep.baseline) {
            assert!((0.0..=1.0).contains(&r.mean_f));
        }
    }

    #[test]
    fn test_targets_are_not_read_in_training() {
        let images = toy_images(20);
        let cfg = small_cfg();
        let splits = fold_splits(images.len(), cfg.train_fraction, cfg.n_folds, cfg.seed).unwrap();
        let mut corrupted = images.clone();
        for &i in &splits[0].test {
            corrupted[i].targets.iter_mut().for_each(|t| *t = 1.0 - *t);
        }
        let train = |imgs: &[PreparedImage]| {
            let tr: Vec<&PreparedImage> = splits[0].train.iter().map(|&i| &imgs[i]).collect();
            train_forest(&tr, &cfg, splits[0].seed).unwrap()
        };
        let (fa, fb) = (train(&images), train(&corrupted));
        for &i in &splits[0].test {
            assert_eq!(predict_scores(&fa, &images[i]).unwrap(), predict_scores(&fb, &corrupted[i]).unwrap());
        }
    }

    #[test]
    fn segmenter_with_verbatim_objects_is_perfect() {
        let f = upper_bound_segmenter_prepared(&toy_images(10), 200).unwrap();
        assert_eq!(f.f, 1.0);
    }

    #[test]
    fn full_frame_pool_gives_full_frame_baseline() {
        let mut images = toy_images(10);
        for im in &mut images {
            let full = BinaryMask::filled(12, 10, true);
            im.pool = pool(vec![full]);
            im.features.truncate(1);
            im.targets.truncate(1);
        }
        let cfg = small_cfg();
        let report = run_prepared(&images, &cfg).unwrap();
        for (fold, split) in fold_splits(10, cfg.train_fraction, cfg.n_folds, cfg.seed).unwrap().iter().enumerate() {
            let maps: Vec<GrayMap> = split.test.iter().map(|_| GrayMap::constant(12, 10, 1.0)).collect();
            let gts: Vec<BinaryMask> = split.test.iter().map(|&i| images[i].gt.clone()).collect();
            assert_eq!(report.folds[fold].score.f, dataset_f(&maps, &gts).unwrap());
        }
    }

    proptest! {
        #[test]
        fn composed_values_are_multiples_of_one_over_k(
            boxes in proptest::collection::vec((0usize..8, 0usize..8, 1usize..5, 1usize..5), 1..10),
            scores in proptest::collection::vec(-1.0f64..1.0, 10),
            k in 1usize..12,
        ) {
            let masks: Vec<BinaryMask> = boxes.iter().map(|&(x, y, w, h)| rect(10, 10, x, y, x + w, y + h)).collect();
            let n = masks.len();
            let p = pool(masks);
            let map = compose_topk(&p, &scores[..n], k).unwrap();
            let kk = k.min(n) as f64;
            for &v in map.data() {
                let m = v * kk;
                prop_assert!((m - m.round()).abs() < 1e-9 && (0.0..=1.0).contains(&v));
            }
        }
    }
}
