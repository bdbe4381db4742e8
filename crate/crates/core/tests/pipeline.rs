use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use salseg::pipeline::{
    prepare, run_experiment, synth_dataset, upper_bound_segmenter_prepared, DatasetIndex, ExperimentConfig,
    PoolSource,
};

fn tree(root: &Path) -> BTreeMap<String, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        for entry in fs::read_dir(&dir).unwrap() {
            let path = entry.unwrap().path();
            if path.is_dir() {
                stack.push(path);
            } else {
                let rel = path.strip_prefix(root).unwrap().to_string_lossy().into_owned();
                out.insert(rel, fs::read(&path).unwrap());
            }
        }
    }
    out
}

fn small(root: &Path, seed: u64) -> DatasetIndex {
    synth_dataset(root, 16, 64, 48, seed).unwrap()
}

fn quick_config() -> ExperimentConfig {
    let mut cfg = ExperimentConfig::default();
    cfg.n_folds = 3;
    cfg.forest.n_trees = 8;
    cfg
}

#[test]
fn synth_is_byte_identical_for_a_seed() {
    let (a, b, c) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    small(a.path(), 3);
    small(b.path(), 3);
    small(c.path(), 4);
    let (ta, tb, tc) = (tree(a.path()), tree(b.path()), tree(c.path()));
    assert!(!ta.is_empty());
    assert_eq!(ta, tb);
    assert_ne!(ta, tc);
}

#[test]
fn fixations_concentrate_on_objects() {
    let dir = tempfile::tempdir().unwrap();
    let index = small(dir.path(), 5);
    let (mut inside, mut outside, mut in_area, mut out_area) = (0usize, 0usize, 0usize, 0usize);
    for (i, id) in index.image_ids.iter().enumerate() {
        let img = index.image(i).unwrap();
        let (w, h) = img.dims();
        let objects = index.objects(id).unwrap();
        let covered = |x: usize, y: usize| objects.iter().any(|m| m.get(x, y));
        let area = (0..h).flat_map(|y| (0..w).map(move |x| (x, y))).filter(|&(x, y)| covered(x, y)).count();
        in_area += area;
        out_area += w * h - area;
        for set in index.fixations(id, w, h).unwrap() {
            for (x, y) in set.pixels(w, h) {
                if covered(x, y) {
                    inside += 1;
                } else {
                    outside += 1;
                }
            }
        }
    }
    let density_in = inside as f64 / in_area as f64;
    let density_out = outside as f64 / out_area as f64;
    assert!(density_in > density_out, "{density_in} vs {density_out}");
}

#[test]
fn segmenter_bound_grows_with_first_n() {
    let dir = tempfile::tempdir().unwrap();
    let index = small(dir.path(), 6);
    let images = prepare(&index, &quick_config(), PoolSource::Stored).unwrap();
    let largest = images.iter().map(|im| im.pool.len()).max().unwrap();
    let full = upper_bound_segmenter_prepared(&images, largest).unwrap().f;
    assert_eq!(full, 1.0);
    for n in [1, 2, 5, 10, 20] {
        let f = upper_bound_segmenter_prepared(&images, n).unwrap().f;
        assert!(f <= full, "first_n {n}: {f} > {full}");
    }
}

#[test]
fn experiment_is_reproducible() {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let cfg = quick_config();
    let ra = run_experiment(&small(a.path(), 8), &cfg).unwrap();
    let rb = run_experiment(&small(b.path(), 8), &cfg).unwrap();
    assert_eq!(ra, rb);
    assert_eq!(ra.mean_f.to_bits(), rb.mean_f.to_bits());
    assert!((0.0..=1.0).contains(&ra.mean_f));
}
