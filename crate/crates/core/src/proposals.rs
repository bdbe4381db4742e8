//! Segment candidate pools: loading externally generated proposal stacks and a
//! built-in graph-based generator.

use std::collections::HashMap;
use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::metrics::iou;
use crate::raster::{load_mask_pgm, save_mask_pgm, BinaryMask, RasterError, RgbImage};

/// Merge thresholds of the built-in generator, finest first.
pub const MERGE_SCALES: [f64; 3] = [150.0, 500.0, 1500.0];
/// Smallest kept region, as a fraction of the image area.
pub const MIN_REGION_FRAC: f64 = 0.001;
pub const DEDUP_IOU: f64 = 0.95;

#[derive(Debug, Error)]
pub enum ProposalError {
    #[error("pool directory {0} does not exist")]
    MissingDirectory(PathBuf),
    #[error("no masks in {0}")]
    NoMasks(PathBuf),
    #[error("empty mask {0}")]
    EmptyMask(String),
    #[error("ranks are not contiguous: expected {expected}, found {found}")]
    NonContiguousRanks { expected: usize, found: usize },
    #[error("mask {rank} is {found:?}, expected {expected:?}")]
    DimensionMismatch {
        rank: usize,
        expected: (usize, usize),
        found: (usize, usize),
    },
    #[error("scores.csv: {0}")]
    Scores(String),
    #[error("empty pool")]
    EmptyPool,
    #[error(transparent)]
    Raster(#[from] RasterError),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CandidateSource {
    External,
    Builtin,
    GroundTruth,
}

#[derive(Clone, Debug)]
pub struct SegmentCandidate {
    pub mask: BinaryMask,
    /// 1 is the generator's best.
    pub rank: usize,
    pub source: CandidateSource,
    /// Objectness score supplied with an external pool, if any.
    pub score: Option<f64>,
}

#[derive(Clone, Debug)]
pub struct SegmentPool {
    pub image_id: String,
    pub candidates: Vec<SegmentCandidate>,
}

impl SegmentPool {
    /// Sorts by rank and checks ranks are `1..=n`, masks nonempty and equal-sized.
    pub fn new(image_id: impl Into<String>, mut candidates: Vec<SegmentCandidate>) -> Result<Self, ProposalError> {
        candidates.sort_by_key(|c| c.rank);
        for (i, c) in candidates.iter().enumerate() {
            if c.rank != i + 1 {
                return Err(ProposalError::NonContiguousRanks {
                    expected: i + 1,
                    found: c.rank,
                });
            }
            if c.mask.is_empty() {
                return Err(ProposalError::EmptyMask(format!("rank {}", c.rank)));
            }
            let expected = candidates[0].mask.dims();
            if c.mask.dims() != expected {
                return Err(ProposalError::DimensionMismatch {
                    rank: c.rank,
                    expected,
                    found: c.mask.dims(),
                });
            }
        }
        Ok(Self {
            image_id: image_id.into(),
            candidates,
        })
    }

    /// Builds a pool from masks listed best first.
    pub fn from_masks(image_id: impl Into<String>, masks: Vec<BinaryMask>, source: CandidateSource) -> Result<Self, ProposalError> {
        let candidates = masks
            .into_iter()
            .enumerate()
            .map(|(i, mask)| SegmentCandidate {
                mask,
                rank: i + 1,
                source,
                score: None,
            })
            .collect();
        Self::new(image_id, candidates)
    }

    pub fn len(&self) -> usize {
        self.candidates.len()
    }

    pub fn is_empty(&self) -> bool {
        self.candidates.is_empty()
    }

    pub fn masks(&self) -> impl Iterator<Item = &BinaryMask> {
        self.candidates.iter().map(|c| &c.mask)
    }
}

fn parse_rank(name: &str) -> Option<usize> {
    let stem = name.strip_suffix(".pgm")?;
    if stem.is_empty() || !stem.bytes().all(|b| b.is_ascii_digit()) {
        return None;
    }
    stem.parse().ok()
}

/// Reads `NNN.pgm` masks (NNN = rank) and an optional `scores.csv` (`rank,score`).
/// The image id is the directory name.
pub fn load_pool(dir: impl AsRef<Path>) -> Result<SegmentPool, ProposalError> {
    let dir = dir.as_ref();
    if !dir.is_dir() {
        return Err(ProposalError::MissingDirectory(dir.to_path_buf()));
    }
    let mut files: Vec<(usize, PathBuf)> = Vec::new();
    for entry in fs::read_dir(dir)? {
        let entry = entry?;
        if let Some(rank) = entry.file_name().to_str().and_then(parse_rank) {
            files.push((rank, entry.path()));
        }
    }
    if files.is_empty() {
        return Err(ProposalError::NoMasks(dir.to_path_buf()));
    }
    files.sort();
    for (i, (rank, _)) in files.iter().enumerate() {
        if *rank != i + 1 {
            return Err(ProposalError::NonContiguousRanks {
                expected: i + 1,
                found: *rank,
            });
        }
    }

    let scores = read_scores(&dir.join("scores.csv"))?;
    let mut candidates = Vec::with_capacity(files.len());
    for (rank, path) in files {
        let mask = load_mask_pgm(&path)?;
        if mask.is_empty() {
            return Err(ProposalError::EmptyMask(path.display().to_string()));
        }
        candidates.push(SegmentCandidate {
            mask,
            rank,
            source: CandidateSource::External,
            score: scores.get(&rank).copied(),
        });
    }
    let image_id = dir
        .file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_default();
    SegmentPool::new(image_id, candidates)
}

fn read_scores(path: &Path) -> Result<HashMap<usize, f64>, ProposalError> {
    let mut out = HashMap::new();
    if !path.exists() {
        return Ok(out);
    }
    let mut rdr = csv::Reader::from_path(path)?;
    for (line, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let field = |i: usize| rec.get(i).map(str::trim).unwrap_or("");
        let rank: usize = field(0)
            .parse()
            .map_err(|_| ProposalError::Scores(format!("row {}: bad rank {:?}", line + 1, field(0))))?;
        let score: f64 = field(1)
            .parse()
            .map_err(|_| ProposalError::Scores(format!("row {}: bad score {:?}", line + 1, field(1))))?;
        out.insert(rank, score);
    }
    Ok(out)
}

/// Writes a pool in the layout read by [`load_pool`].
pub fn save_pool(pool: &SegmentPool, dir: impl AsRef<Path>) -> Result<(), ProposalError> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir)?;
    let digits = pool.len().to_string().len().max(3);
    for c in &pool.candidates {
        save_mask_pgm(&c.mask, dir.join(format!("{:0digits$}.pgm", c.rank)))?;
    }
    if pool.candidates.iter().any(|c| c.score.is_some()) {
        let mut w = csv::Writer::from_path(dir.join("scores.csv"))?;
        w.write_record(["rank", "score"])?;
        for c in &pool.candidates {
            if let Some(s) = c.score {
                w.write_record([c.rank.to_string(), s.to_string()])?;
            }
        }
        w.flush()?;
    }
    Ok(())
}

struct DisjointSet {
    parent: Vec<u32>,
    size: Vec<u32>,
    internal: Vec<f64>,
}

impl DisjointSet {
    fn new(n: usize) -> Self {
        Self {
            parent: (0..n as u32).collect(),
            size: vec![1; n],
            internal: vec![0.0; n],
        }
    }

    fn find(&mut self, mut x: u32) -> u32 {
        while self.parent[x as usize] != x {
            let p = self.parent[x as usize];
            self.parent[x as usize] = self.parent[p as usize];
            x = p;
        }
        x
    }

    fn union(&mut self, a: u32, b: u32, w: f64) {
        let (big, small) = if self.size[a as usize] >= self.size[b as usize] { (a, b) } else { (b, a) };
        self.parent[small as usize] = big;
        self.size[big as usize] += self.size[small as usize];
        self.internal[big as usize] = w;
    }
}

struct Edge {
    a: u32,
    b: u32,
    w: f64,
}

fn channels(img: &RgbImage) -> [Vec<f64>; 3] {
    std::array::from_fn(|c| img.data().chunks_exact(3).map(|px| px[c] as f64).collect())
}

fn color_distance(ch: &[Vec<f64>; 3], p: usize, q: usize) -> f64 {
    ch.iter().map(|c| (c[p] - c[q]).powi(2)).sum::<f64>().sqrt()
}

/// Region labels of one merge pass: components are joined across an edge when
/// its weight does not exceed either side's internal difference plus `k / size`.
fn segment(n: usize, edges: &[Edge], k: f64) -> Vec<u32> {
    let mut ds = DisjointSet::new(n);
    for e in edges {
        let (a, b) = (ds.find(e.a), ds.find(e.b));
        if a == b {
            continue;
        }
        let ta = ds.internal[a as usize] + k / ds.size[a as usize] as f64;
        let tb = ds.internal[b as usize] + k / ds.size[b as usize] as f64;
        if e.w <= ta.min(tb) {
            ds.union(a, b, e.w);
        }
    }
    (0..n as u32).map(|p| ds.find(p)).collect()
}

struct Region {
    scale: usize,
    label: u32,
    pixels: Vec<usize>,
    score: f64,
}

/// Graph-based region merging on color similarity at [`MERGE_SCALES`].
/// Regions covering at least [`MIN_REGION_FRAC`] of the image become
/// candidates, ranked by area fraction times mean color contrast across their
/// boundary, deduplicated at [`DEDUP_IOU`] and truncated to `max_count`.
/// The seed orders equal-weight edges.
pub fn builtin_proposals(img: &RgbImage, max_count: usize, seed: u64) -> SegmentPool {
    let (w, h) = img.dims();
    let n = w * h;
    let ch = channels(img);

    let mut edges = Vec::with_capacity(4 * n);
    for y in 0..h {
        for x in 0..w {
            let p = y * w + x;
            let mut push = |q: usize| {
                edges.push(Edge {
                    a: p as u32,
                    b: q as u32,
                    w: color_distance(&ch, p, q),
                })
            };
            if x + 1 < w {
                push(p + 1);
            }
            if y + 1 < h {
                push(p + w);
                if x + 1 < w {
                    push(p + w + 1);
                }
                if x > 0 {
                    push(p + w - 1);
                }
            }
        }
    }
    edges.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    edges.sort_by(|a, b| a.w.total_cmp(&b.w));

    let min_area = ((n as f64 * MIN_REGION_FRAC).ceil() as usize).max(1);
    let max_contrast = 255.0 * 3f64.sqrt();
    let mut scale_labels = Vec::with_capacity(MERGE_SCALES.len());
    let mut regions = Vec::new();
    for (scale, &k) in MERGE_SCALES.iter().enumerate() {
        let labels = segment(n, &edges, k);
        let mut pixels: HashMap<u32, Vec<usize>> = HashMap::new();
        let mut order = Vec::new();
        for (p, &l) in labels.iter().enumerate() {
            pixels
                .entry(l)
                .or_insert_with(|| {
                    order.push(l);
                    Vec::new()
                })
                .push(p);
        }
        // boundary contrast: summed distance and count of 4-neighbour pairs crossing each region's edge
        let mut border: HashMap<u32, (f64, usize)> = HashMap::new();
        for y in 0..h {
            for x in 0..w {
                let p = y * w + x;
                for q in [(x + 1 < w).then(|| p + 1), (y + 1 < h).then(|| p + w)].into_iter().flatten() {
                    if labels[p] != labels[q] {
                        let d = color_distance(&ch, p, q);
                        for l in [labels[p], labels[q]] {
                            let e = border.entry(l).or_default();
                            e.0 += d;
                            e.1 += 1;
                        }
                    }
                }
            }
        }
        for label in order {
            let px = pixels.remove(&label).unwrap_or_default();
            if px.len() < min_area {
                continue;
            }
            let contrast = match border.get(&label) {
                Some(&(sum, cnt)) if cnt > 0 => sum / cnt as f64 / max_contrast,
                _ => 0.0,
            };
            regions.push(Region {
                scale,
                label,
                score: px.len() as f64 / n as f64 * contrast,
                pixels: px,
            });
        }
        scale_labels.push(labels);
    }

    // stable: equal scores keep scale then raster order
    regions.sort_by(|a, b| b.score.total_cmp(&a.score));
    let mut kept: Vec<&Region> = Vec::new();
    for r in &regions {
        if kept.len() >= max_count.max(1) {
            break;
        }
        let dup = kept.iter().any(|k| {
            let (small, large) = if r.pixels.len() <= k.pixels.len() { (r, *k) } else { (*k, r) };
            if (small.pixels.len() as f64) < DEDUP_IOU * large.pixels.len() as f64 {
                return false;
            }
            let inter = if small.scale == large.scale {
                if small.label == large.label { small.pixels.len() } else { 0 }
            } else {
                let labels = &scale_labels[large.scale];
                small.pixels.iter().filter(|&&p| labels[p] == large.label).count()
            };
            let union = small.pixels.len() + large.pixels.len() - inter;
            inter as f64 / union as f64 > DEDUP_IOU
        });
        if !dup {
            kept.push(r);
        }
    }

    let candidates = kept
        .iter()
        .enumerate()
        .map(|(i, r)| {
            let mut mask = BinaryMask::empty(w, h);
            for &p in &r.pixels {
                mask.set(p % w, p / w, true);
            }
            SegmentCandidate {
                mask,
                rank: i + 1,
                source: CandidateSource::Builtin,
                score: Some(r.score),
            }
        })
        .collect();
    SegmentPool {
        image_id: String::new(),
        candidates,
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Selection {
    /// Index into the pool's candidates.
    pub index: usize,
    pub iou: f64,
}

/// For each ground-truth mask, the candidate among ranks `<= first_n` with the
/// highest IoU; ties go to the lower rank.
pub fn best_overlap_selection(pool: &SegmentPool, gts: &[BinaryMask], first_n: usize) -> Result<Vec<Selection>, ProposalError> {
    if pool.is_empty() {
        return Err(ProposalError::EmptyPool);
    }
    let limit = first_n.max(1).min(pool.len());
    let mut out = Vec::with_capacity(gts.len());
    for gt in gts {
        let mut best: Option<Selection> = None;
        for (index, c) in pool.candidates[..limit].iter().enumerate() {
            let v = iou(&c.mask, gt).map_err(|_| ProposalError::DimensionMismatch {
                rank: c.rank,
                expected: gt.dims(),
                found: c.mask.dims(),
            })?;
            if best.is_none_or(|b| v > b.iou) {
                best = Some(Selection { index, iou: v });
            }
        }
        out.extend(best);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn rect(w: usize, h: usize, x0: usize, y0: usize, x1: usize, y1: usize) -> BinaryMask {
        BinaryMask::from_fn(w, h, |x, y| x >= x0 && x < x1 && y >= y0 && y < y1)
    }

    fn busy_image(w: usize, h: usize) -> RgbImage {
        RgbImage::from_fn(w, h, |x, y| {
            let cell = (x / 6 + 7 * (y / 5)) as u32;
            let v = cell.wrapping_mul(2654435761) >> 8;
            [(v & 255) as u8, ((v >> 8) & 255) as u8, ((v >> 16) & 255) as u8]
        })
    }

    #[test]
    fn load_contiguous_pool() {
        let dir = tempfile::tempdir().unwrap();
        let masks: Vec<BinaryMask> = (0..10).map(|i| rect(12, 8, i, 0, i + 2, 8)).collect();
        let pool = SegmentPool::from_masks("img", masks.clone(), CandidateSource::External).unwrap();
        let sub = dir.path().join("img");
        save_pool(&pool, &sub).unwrap();
        assert!(sub.join("001.pgm").exists() && sub.join("010.pgm").exists());
        let loaded = load_pool(&sub).unwrap();
        assert_eq!(loaded.image_id, "img");
        assert_eq!(loaded.len(), 10);
        for (i, c) in loaded.candidates.iter().enumerate() {
            assert_eq!(c.rank, i + 1);
            assert_eq!(c.mask, masks[i]);
            assert_eq!(c.score, None);
        }
    }

    #[test]
    fn load_errors() {
        let dir = tempfile::tempdir().unwrap();
        assert!(matches!(load_pool(dir.path().join("nope")), Err(ProposalError::MissingDirectory(_))));

        let gap = dir.path().join("gap");
        fs::create_dir_all(&gap).unwrap();
        save_mask_pgm(&rect(4, 4, 0, 0, 2, 2), gap.join("001.pgm")).unwrap();
        save_mask_pgm(&rect(4, 4, 0, 0, 2, 2), gap.join("003.pgm")).unwrap();
        assert!(matches!(
            load_pool(&gap),
            Err(ProposalError::NonContiguousRanks { expected: 2, found: 3 })
        ));

        let empty = dir.path().join("empty");
        fs::create_dir_all(&empty).unwrap();
        save_mask_pgm(&BinaryMask::empty(4, 4), empty.join("001.pgm")).unwrap();
        assert!(matches!(load_pool(&empty), Err(ProposalError::EmptyMask(_))));
    }

    #[test]
    fn scores_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let mut pool = SegmentPool::from_masks("a", vec![rect(5, 5, 0, 0, 2, 2), rect(5, 5, 1, 1, 5, 5)], CandidateSource::External).unwrap();
        pool.candidates[0].score = Some(0.25);
        pool.candidates[1].score = Some(-1.5);
        save_pool(&pool, dir.path()).unwrap();
        let loaded = load_pool(dir.path()).unwrap();
        assert_eq!(loaded.candidates[0].score, Some(0.25));
        assert_eq!(loaded.candidates[1].score, Some(-1.5));
    }

    #[test]
    fn two_flat_halves() {
        let img = RgbImage::from_fn(40, 30, |x, _| if x < 20 { [200, 30, 30] } else { [20, 40, 220] });
        let pool = builtin_proposals(&img, 50, 1);
        let left = rect(40, 30, 0, 0, 20, 30);
        let right = rect(40, 30, 20, 0, 40, 30);
        assert!(pool.masks().any(|m| *m == left));
        assert!(pool.masks().any(|m| *m == right));
    }

    #[test]
    fn constant_image_single_candidate() {
        let pool = builtin_proposals(&RgbImage::filled(30, 20, [90, 90, 90]), 10, 3);
        assert_eq!(pool.len(), 1);
        assert!(pool.candidates[0].mask.is_full());
    }

    #[test]
    fn truncates_busy_image() {
        let pool = builtin_proposals(&busy_image(60, 40), 5, 0);
        assert_eq!(pool.len(), 5);
        assert_eq!(pool.candidates.iter().map(|c| c.rank).collect::<Vec<_>>(), vec![1, 2, 3, 4, 5]);
    }

    #[test]
    fn builtin_is_deterministic_and_valid() {
        let img = busy_image(50, 40);
        let a = builtin_proposals(&img, 30, 11);
        let b = builtin_proposals(&img, 30, 11);
        assert_eq!(a.len(), b.len());
        for (x, y) in a.candidates.iter().zip(&b.candidates) {
            assert_eq!(x.mask, y.mask);
        }
        for c in &a.candidates {
            assert!(!c.mask.is_empty());
            assert_eq!(c.mask.dims(), (50, 40));
            assert!(c.mask.count() as f64 >= 50.0 * 40.0 * MIN_REGION_FRAC);
        }
        for (i, x) in a.candidates.iter().enumerate() {
            for y in &a.candidates[..i] {
                assert!(iou(&x.mask, &y.mask).unwrap() <= DEDUP_IOU);
            }
        }
    }

    #[test]
    fn selection_examples() {
        let gt = rect(20, 10, 0, 0, 10, 10);
        let verbatim = SegmentPool::from_masks("a", vec![rect(20, 10, 5, 0, 15, 10), gt.clone()], CandidateSource::External).unwrap();
        assert_eq!(
            best_overlap_selection(&verbatim, &[gt.clone()], 200).unwrap(),
            vec![Selection { index: 1, iou: 1.0 }]
        );

        let single = SegmentPool::from_masks("a", vec![rect(20, 10, 15, 0, 20, 10)], CandidateSource::External).unwrap();
        let picks = best_overlap_selection(&single, &[gt.clone(), rect(20, 10, 0, 0, 3, 3)], 200).unwrap();
        assert!(picks.iter().all(|s| s.index == 0));

        // 6/10 and 8/10 overlap with the gt
        let p06 = rect(20, 10, 0, 0, 6, 10);
        let p08 = rect(20, 10, 0, 0, 8, 10);
        let pool = SegmentPool::from_masks("a", vec![p06, p08], CandidateSource::External).unwrap();
        let pick = best_overlap_selection(&pool, &[gt.clone()], 200).unwrap()[0];
        assert_eq!(pick.index, 1);
        assert!((pick.iou - 0.8).abs() < 1e-15);
        // first_n excludes the better one
        assert_eq!(best_overlap_selection(&pool, &[gt], 1).unwrap()[0].index, 0);
    }

    #[test]
    fn selection_ties_prefer_lower_rank() {
        let gt = rect(10, 10, 0, 0, 4, 10);
        let pool = SegmentPool::from_masks("a", vec![rect(10, 10, 0, 0, 2, 10), rect(10, 10, 2, 0, 4, 10)], CandidateSource::External).unwrap();
        assert_eq!(best_overlap_selection(&pool, &[gt], 10).unwrap()[0].index, 0);
    }

    proptest! {
        #[test]
        fn selection_is_exhaustive_maximum(
            boxes in proptest::collection::vec((0usize..12, 0usize..12, 1usize..6, 1usize..6), 1..8),
            g in (0usize..12, 0usize..12, 1usize..6, 1usize..6),
            first_n in 1usize..10,
        ) {
            let mk = |(x, y, bw, bh): (usize, usize, usize, usize)| rect(16, 16, x, y, x + bw, y + bh);
            let pool = SegmentPool::from_masks("p", boxes.into_iter().map(mk).collect(), CandidateSource::External).unwrap();
            let gt = mk(g);
            let pick = best_overlap_selection(&pool, std::slice::from_ref(&gt), first_n).unwrap()[0];
            prop_assert!(pick.index < first_n);
            for c in pool.candidates.iter().take(first_n) {
                prop_assert!(pick.iou >= iou(&c.mask, &gt).unwrap());
            }
        }
    }
}
