//! On-disk dataset layout:
//!
//! ```text
//! <root>/images/<id>.ppm|png
//! <root>/objects/<id>/NN.pgm              per-object ground truth, NN from 01
//! <root>/clicks.csv                       image,object,subject,clicked
//! <root>/fixations/<subject>/<id>.csv     gaze log t_ms,x,y,valid
//! <root>/segments/<id>/NNN.pgm            proposal pool, NNN = rank
//! <root>/maps/<algorithm>/<id>.pgm        external saliency or fixation maps
//! ```

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::{Path, PathBuf};

use super::PipelineError;
use crate::fixproc::{detect_fixations, read_gaze_csv, FixationSet, MIN_FIXATION_MS, SACCADE_SPEED};
use crate::proposals::{load_pool, SegmentPool};
use crate::raster::{load_image, load_map_pgm, load_mask_pgm, BinaryMask, GrayMap, RgbImage};

/// Saliency at or above which an object belongs to the combined mask.
pub const SALIENT_THRESHOLD: f64 = 0.5;

#[derive(Clone, Debug)]
pub struct DatasetIndex {
    pub root: PathBuf,
    pub image_ids: Vec<String>,
    image_paths: Vec<PathBuf>,
    /// Subjects with a gaze directory, sorted.
    pub gaze_subjects: Vec<String>,
}

fn sorted_entries(dir: &Path) -> Result<Vec<PathBuf>, PipelineError> {
    let mut out = Vec::new();
    for entry in fs::read_dir(dir)? {
        out.push(entry?.path());
    }
    out.sort();
    Ok(out)
}

fn file_stem(p: &Path) -> String {
    p.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default()
}

impl DatasetIndex {
    /// Indexes `images/`; every other directory is read on demand.
    pub fn open(root: impl AsRef<Path>) -> Result<Self, PipelineError> {
        let root = root.as_ref().to_path_buf();
        let images = root.join("images");
        if !images.is_dir() {
            return Err(PipelineError::MissingImages(images));
        }
        let mut image_ids = Vec::new();
        let mut image_paths = Vec::new();
        for p in sorted_entries(&images)? {
            let ext = p.extension().and_then(|e| e.to_str()).map(str::to_ascii_lowercase);
            if matches!(ext.as_deref(), Some("ppm" | "png")) {
                image_ids.push(file_stem(&p));
                image_paths.push(p);
            }
        }
        if image_ids.is_empty() {
            return Err(PipelineError::MissingImages(images));
        }
        let fix = root.join("fixations");
        let gaze_subjects = if fix.is_dir() {
            sorted_entries(&fix)?
                .into_iter()
                .filter(|p| p.is_dir())
                .map(|p| p.file_name().unwrap().to_string_lossy().into_owned())
                .collect()
        } else {
            Vec::new()
        };
        Ok(Self {
            root,
            image_ids,
            image_paths,
            gaze_subjects,
        })
    }

    pub fn len(&self) -> usize {
        self.image_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.image_ids.is_empty()
    }

    /// Dataset name used in reports: the root directory's name.
    pub fn name(&self) -> String {
        self.root
            .canonicalize()
            .unwrap_or_else(|_| self.root.clone())
            .file_name()
            .map(|n| n.to_string_lossy().into_owned())
            .unwrap_or_else(|| "dataset".into())
    }

    pub fn image(&self, i: usize) -> Result<RgbImage, PipelineError> {
        Ok(load_image(&self.image_paths[i])?)
    }

    pub fn objects_dir(&self, id: &str) -> PathBuf {
        self.root.join("objects").join(id)
    }

    pub fn segments_dir(&self, id: &str) -> PathBuf {
        self.root.join("segments").join(id)
    }

    pub fn gaze_path(&self, subject: &str, id: &str) -> PathBuf {
        self.root.join("fixations").join(subject).join(format!("{id}.csv"))
    }

    pub fn map_path(&self, algorithm: &str, id: &str) -> PathBuf {
        self.root.join("maps").join(algorithm).join(format!("{id}.pgm"))
    }

    pub fn clicks_path(&self) -> PathBuf {
        self.root.join("clicks.csv")
    }

    /// Subdirectories of `maps/`, sorted.
    pub fn map_algorithms(&self) -> Result<Vec<String>, PipelineError> {
        let dir = self.root.join("maps");
        if !dir.is_dir() {
            return Ok(Vec::new());
        }
        Ok(sorted_entries(&dir)?
            .into_iter()
            .filter(|p| p.is_dir())
            .map(|p| p.file_name().unwrap().to_string_lossy().into_owned())
            .collect())
    }

    /// Object masks in `NN` order.
    pub fn objects(&self, id: &str) -> Result<Vec<BinaryMask>, PipelineError> {
        let dir = self.objects_dir(id);
        if !dir.is_dir() {
            return Err(PipelineError::MissingGroundTruth(id.to_string()));
        }
        let mut files: Vec<(usize, PathBuf)> = sorted_entries(&dir)?
            .into_iter()
            .filter(|p| p.extension().is_some_and(|e| e == "pgm"))
            .filter_map(|p| file_stem(&p).parse().ok().map(|n| (n, p)))
            .collect();
        files.sort();
        if files.is_empty() {
            return Err(PipelineError::MissingGroundTruth(id.to_string()));
        }
        files.iter().map(|(_, p)| Ok(load_mask_pgm(p)?)).collect()
    }

    pub fn clicks(&self) -> Result<ClickTable, PipelineError> {
        let path = self.clicks_path();
        if !path.exists() {
            return Err(PipelineError::MissingGroundTruth(path.display().to_string()));
        }
        ClickTable::read(path)
    }

    pub fn ground_truth(&self, id: &str, clicks: &ClickTable) -> Result<SalientGroundTruth, PipelineError> {
        let objects = self.objects(id)?;
        let saliency = clicks.saliency(id, objects.len())?;
        Ok(SalientGroundTruth { objects, saliency })
    }

    /// Fixations of every subject with a gaze log for this image.
    pub fn fixations(&self, id: &str, width: usize, height: usize) -> Result<Vec<FixationSet>, PipelineError> {
        let mut out = Vec::new();
        for subject in &self.gaze_subjects {
            let path = self.gaze_path(subject, id);
            if !path.exists() {
                continue;
            }
            let samples = read_gaze_csv(&path)?;
            let mut set = FixationSet {
                image_id: id.to_string(),
                subject_id: subject.clone(),
                fixations: detect_fixations(&samples, MIN_FIXATION_MS, SACCADE_SPEED)?,
            };
            set.clamp_to(width, height);
            out.push(set);
        }
        if out.is_empty() {
            return Err(PipelineError::MissingGaze(id.to_string()));
        }
        Ok(out)
    }

    pub fn pool(&self, id: &str) -> Result<SegmentPool, PipelineError> {
        let dir = self.segments_dir(id);
        if !dir.is_dir() {
            return Err(PipelineError::MissingPool(id.to_string()));
        }
        Ok(load_pool(dir)?)
    }

    pub fn map(&self, algorithm: &str, id: &str) -> Result<GrayMap, PipelineError> {
        let path = self.map_path(algorithm, id);
        if !path.exists() {
            return Err(PipelineError::MissingMap(path));
        }
        Ok(load_map_pgm(path)?)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ClickRecord {
    pub image: String,
    /// 1-based object number, matching `objects/<id>/NN.pgm`.
    pub object: usize,
    pub subject: String,
    pub clicked: bool,
}

/// Per-object click labels of every click subject.
#[derive(Clone, Debug, Default)]
pub struct ClickTable {
    by_image: BTreeMap<String, Vec<ClickRecord>>,
}

impl ClickTable {
    pub fn new(records: Vec<ClickRecord>) -> Self {
        let mut by_image: BTreeMap<String, Vec<ClickRecord>> = BTreeMap::new();
        for r in records {
            by_image.entry(r.image.clone()).or_default().push(r);
        }
        Self { by_image }
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self, PipelineError> {
        let mut rdr = csv::Reader::from_path(path)?;
        let mut records = Vec::new();
        for (i, rec) in rdr.records().enumerate() {
            let rec = rec?;
            let line = i + 2;
            let field = |k: usize| rec.get(k).map(str::trim).unwrap_or("");
            let err = |m: String| PipelineError::Config { line, msg: format!("clicks.csv: {m}") };
            let object = field(1).parse().map_err(|_| err(format!("bad object {:?}", field(1))))?;
            let clicked = match field(3) {
                "1" | "true" => true,
                "0" | "false" => false,
                v => return Err(err(format!("bad clicked flag {v:?}"))),
            };
            records.push(ClickRecord {
                image: field(0).to_string(),
                object,
                subject: field(2).to_string(),
                clicked,
            });
        }
        Ok(Self::new(records))
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<(), PipelineError> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(["image", "object", "subject", "clicked"])?;
        for r in self.by_image.values().flatten() {
            w.write_record([
                r.image.as_str(),
                &r.object.to_string(),
                &r.subject,
                if r.clicked { "1" } else { "0" },
            ])?;
        }
        w.flush()?;
        Ok(())
    }

    /// Click subjects who labelled this image, sorted.
    pub fn subjects(&self, image: &str) -> Vec<String> {
        let set: BTreeSet<&str> = self
            .by_image
            .get(image)
            .into_iter()
            .flatten()
            .map(|r| r.subject.as_str())
            .collect();
        set.into_iter().map(String::from).collect()
    }

    /// clicks / subjects per object.
    pub fn saliency(&self, image: &str, n_objects: usize) -> Result<Vec<f64>, PipelineError> {
        let n_subjects = self.subjects(image).len();
        if n_subjects == 0 {
            return Err(PipelineError::MissingGroundTruth(format!("no clicks for {image}")));
        }
        let mut clicks = vec![0usize; n_objects];
        for r in &self.by_image[image] {
            if r.object == 0 || r.object > n_objects {
                return Err(PipelineError::MissingGroundTruth(format!(
                    "{image}: click on unknown object {}",
                    r.object
                )));
            }
            clicks[r.object - 1] += r.clicked as usize;
        }
        Ok(clicks.into_iter().map(|c| c as f64 / n_subjects as f64).collect())
    }

    /// Per subject, the union of the objects that subject clicked.
    pub fn subject_masks(&self, image: &str, objects: &[BinaryMask]) -> Result<Vec<BinaryMask>, PipelineError> {
        let Some(first) = objects.first() else {
            return Err(PipelineError::MissingGroundTruth(image.to_string()));
        };
        let (w, h) = first.dims();
        let subjects = self.subjects(image);
        let mut masks = vec![BinaryMask::empty(w, h); subjects.len()];
        for r in self.by_image.get(image).into_iter().flatten() {
            if !r.clicked {
                continue;
            }
            let obj = objects.get(r.object.wrapping_sub(1)).ok_or_else(|| {
                PipelineError::MissingGroundTruth(format!("{image}: click on unknown object {}", r.object))
            })?;
            let s = subjects.binary_search(&r.subject).expect("subject listed");
            masks[s] = masks[s].or(obj)?;
        }
        Ok(masks)
    }
}

#[derive(Clone, Debug)]
pub struct SalientGroundTruth {
    pub objects: Vec<BinaryMask>,
    /// Fraction of click subjects who selected each object.
    pub saliency: Vec<f64>,
}

impl SalientGroundTruth {
    pub fn salient_objects(&self) -> impl Iterator<Item = &BinaryMask> {
        self.objects
            .iter()
            .zip(&self.saliency)
            .filter(|(_, &s)| s >= SALIENT_THRESHOLD)
            .map(|(m, _)| m)
    }

    /// Union of the objects with saliency of at least one half.
    pub fn combined(&self) -> BinaryMask {
        let (w, h) = self.objects[0].dims();
        let mut out = BinaryMask::empty(w, h);
        for m in self.salient_objects() {
            for (x, y) in m.iter_set() {
                out.set(x, y, true);
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rect(x0: usize, x1: usize) -> BinaryMask {
        BinaryMask::from_fn(10, 4, |x, _| x >= x0 && x < x1)
    }

    fn table() -> ClickTable {
        let mut rows = Vec::new();
        for (s, picks) in [("a", [true, false]), ("b", [true, true]), ("c", [false, false]), ("d", [true, false])] {
            for (o, &c) in picks.iter().enumerate() {
                rows.push(ClickRecord {
                    image: "im".into(),
                    object: o + 1,
                    subject: s.into(),
                    clicked: c,
                });
            }
        }
        ClickTable::new(rows)
    }

    #[test]
    fn saliency_is_click_fraction() {
        let t = table();
        assert_eq!(t.saliency("im", 2).unwrap(), vec![0.75, 0.25]);
        assert!(t.saliency("other", 2).is_err());
        assert!(t.saliency("im", 1).is_err());
    }

    #[test]
    fn combined_mask_uses_half_threshold() {
        let gt = SalientGroundTruth {
            objects: vec![rect(0, 3), rect(5, 8), rect(8, 10)],
            saliency: vec![0.75, 0.25, 0.5],
        };
        let c = gt.combined();
        assert_eq!(c, rect(0, 3).or(&rect(8, 10)).unwrap());
    }

    #[test]
    fn subject_masks_union_clicks() {
        let objs = [rect(0, 3), rect(5, 8)];
        let m = table().subject_masks("im", &objs).unwrap();
        assert_eq!(m.len(), 4);
        assert_eq!(m[0], objs[0]);
        assert_eq!(m[1], objs[0].or(&objs[1]).unwrap());
        assert!(m[2].is_empty());
    }

    #[test]
    fn clicks_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("clicks.csv");
        table().write(&p).unwrap();
        let back = ClickTable::read(&p).unwrap();
        assert_eq!(back.saliency("im", 2).unwrap(), vec![0.75, 0.25]);
        assert_eq!(back.subjects("im"), vec!["a", "b", "c", "d"]);
    }

    #[test]
    fn open_requires_images() {
        let dir = tempfile::tempdir().unwrap();
        assert!(matches!(DatasetIndex::open(dir.path()), Err(PipelineError::MissingImages(_))));
        fs::create_dir_all(dir.path().join("images")).unwrap();
        assert!(matches!(DatasetIndex::open(dir.path()), Err(PipelineError::MissingImages(_))));
    }
}
