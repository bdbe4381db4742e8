use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use salseg::fixproc::{add_center_bias, render_fixation_map, write_fixations_csv, HUMAN_MAP_SIGMA_FRAC};
use salseg::forest::Forest;
use salseg::metrics::{
    benchmark_fixation_maps, best_f, consistency_fixation_with, consistency_segmentation, pr_curve,
    write_scores_csv, BenchmarkScore, ConsistencyScore, ImageFixations, PrAggregation,
};
use salseg::pipeline::{
    compose_topk, featurize_pools, ksweep_prepared, prepare, run_prepared, synth_dataset, train_forest,
    upper_bound_segmenter_prepared, upper_bound_selector, write_features_csv, write_ksweep_csv, DatasetIndex,
    ExperimentConfig, FixationSource, PoolSource,
};
use salseg::raster::{save_map_pgm, save_mask_pgm, threshold, BinaryMask, GrayMap};
use salseg::stats::{default_edge_map, write_stats_csv, write_stats_hist_csv, ObjectStats};

/// Salient object segmentation from eye fixations
#[derive(Parser, Debug)]
#[command(name = "salseg", version, about)]
struct Cli {
    #[command(flatten)]
    common: Common,

    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug)]
struct Common {
    /// Dataset root
    #[arg(long, global = true, default_value = ".")]
    root: PathBuf,

    /// Overrides the config seed
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// key=value experiment config
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Output file or directory (per command)
    #[arg(long, global = true)]
    out: Option<PathBuf>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a synthetic dataset under --root
    Synth {
        #[arg(long, default_value_t = 200)]
        images: usize,
        #[arg(long, default_value_t = 160)]
        width: usize,
        #[arg(long, default_value_t = 120)]
        height: usize,
    },
    /// Detect fixations and render human fixation maps (default out: <root>/maps/human)
    Fixmap {
        /// Blur σ as a fraction of image width
        #[arg(long, default_value_t = HUMAN_MAP_SIGMA_FRAC)]
        sigma_frac: f64,
        /// Blend with a centered Gaussian of this σ (fraction of width)
        #[arg(long)]
        center_bias: Option<f64>,
        /// Also write detected fixations as <dir>/<subject>/<image>.csv
        #[arg(long)]
        fixations_out: Option<PathBuf>,
    },
    /// Per-object bias statistics: stats.csv and stats_hist.csv (default out: <root>)
    Stats {
        /// Use maps/<name> as edge maps instead of the Sobel default
        #[arg(long)]
        edge_maps: Option<String>,
    },
    /// Inter-subject consistency of fixations and object selections
    Consistency,
    /// AUC and shuffled AUC of maps/<alg> against human fixations
    EvalFixation {
        /// Algorithms to score (default: every maps/ subdirectory)
        #[arg(long, value_delimiter = ',')]
        alg: Vec<String>,
        #[arg(long)]
        center_bias: Option<f64>,
    },
    /// F-measure of maps/<alg> against the salient object masks
    EvalSalobj {
        #[arg(long, value_delimiter = ',')]
        alg: Vec<String>,
        /// Write threshold,precision,recall dumps as <dir>/<alg>_pr.csv
        #[arg(long)]
        pr_dir: Option<PathBuf>,
    },
    /// Train a forest on every image's stored pool and write the model to --out
    Train {
        /// Also dump the training rows
        #[arg(long)]
        features: Option<PathBuf>,
    },
    /// Score stored pools with a model; writes <out>/<image>.pgm maps and <out>/masks/
    Predict {
        #[arg(long)]
        model: PathBuf,
    },
    /// F-measure per K over the configured folds (K,F table)
    Ksweep {
        #[arg(long, value_delimiter = ',', default_values_t = vec![1, 2, 5, 10, 20, 50])]
        ks: Vec<usize>,
    },
    /// Full benchmark: scores.csv and a plain-text table (default out: <root>/bench)
    Bench {
        /// maps/ subdirectories holding salient object maps; the rest are fixation maps
        #[arg(long, value_delimiter = ',')]
        salobj: Vec<String>,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}

fn load_config(common: &Common) -> Result<ExperimentConfig> {
    let mut cfg = match &common.config {
        Some(p) => ExperimentConfig::load(p).with_context(|| format!("config {}", p.display()))?,
        None => ExperimentConfig::default(),
    };
    if let Some(seed) = common.seed {
        cfg.seed = seed;
    }
    Ok(cfg)
}

fn require_out(common: &Common) -> Result<&Path> {
    match &common.out {
        Some(p) => Ok(p),
        None => bail!("--out is required for this command"),
    }
}

fn out_dir(common: &Common, default: PathBuf) -> Result<PathBuf> {
    let dir = common.out.clone().unwrap_or(default);
    fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
    Ok(dir)
}

fn run(cli: Cli) -> Result<()> {
    let common = &cli.common;
    let cfg = load_config(common)?;
    if let Command::Synth { images, width, height } = cli.command {
        let index = synth_dataset(&common.root, images, width, height, cfg.seed)?;
        println!("wrote {} images to {}", index.len(), common.root.display());
        return Ok(());
    }
    let index = DatasetIndex::open(&common.root)?;
    match cli.command {
        Command::Synth { .. } => unreachable!(),
        Command::Fixmap { sigma_frac, center_bias, fixations_out } => fixmap(common, &index, sigma_frac, center_bias, fixations_out),
        Command::Stats { edge_maps } => stats(common, &index, edge_maps),
        Command::Consistency => consistency(common, &index, &cfg),
        Command::EvalFixation { alg, center_bias } => eval_fixation(common, &index, &cfg, alg, center_bias),
        Command::EvalSalobj { alg, pr_dir } => eval_salobj(common, &index, alg, pr_dir),
        Command::Train { features } => train(common, &index, &cfg, features),
        Command::Predict { model } => predict(common, &index, &cfg, &model),
        Command::Ksweep { ks } => ksweep(common, &index, &cfg, &ks),
        Command::Bench { salobj } => bench(common, &index, &cfg, salobj),
    }
}

fn image_dims(index: &DatasetIndex, i: usize) -> Result<(usize, usize)> {
    Ok(index.image(i)?.dims())
}

fn fixmap(common: &Common, index: &DatasetIndex, sigma_frac: f64, center_bias: Option<f64>, fixations_out: Option<PathBuf>) -> Result<()> {
    let dir = out_dir(common, index.root.join("maps").join("human"))?;
    for (i, id) in index.image_ids.iter().enumerate() {
        let (w, h) = image_dims(index, i)?;
        let sets = index.fixations(id, w, h)?;
        let mut map = render_fixation_map(&sets, w, h, sigma_frac)?;
        if let Some(s) = center_bias {
            map = add_center_bias(&map, s)?;
        }
        save_map_pgm(&map, dir.join(format!("{id}.pgm")))?;
        if let Some(fdir) = &fixations_out {
            for set in &sets {
                let sub = fdir.join(&set.subject_id);
                fs::create_dir_all(&sub)?;
                write_fixations_csv(sub.join(format!("{id}.csv")), &set.fixations)?;
            }
        }
    }
    println!("wrote {} maps to {}", index.len(), dir.display());
    Ok(())
}

fn stats(common: &Common, index: &DatasetIndex, edge_maps: Option<String>) -> Result<()> {
    let dir = out_dir(common, index.root.clone())?;
    let mut rows = Vec::new();
    for (i, id) in index.image_ids.iter().enumerate() {
        let img = index.image(i)?;
        let edges = match &edge_maps {
            Some(alg) => index.map(alg, id)?,
            None => default_edge_map(&img),
        };
        for (o, mask) in index.objects(id)?.iter().enumerate() {
            let s = ObjectStats::compute(id, &format!("{:02}", o + 1), &img, mask, &edges)
                .with_context(|| format!("{id} object {}", o + 1))?;
            rows.push(s);
        }
    }
    write_stats_csv(dir.join("stats.csv"), &rows)?;
    write_stats_hist_csv(dir.join("stats_hist.csv"), &rows)?;
    println!("{} objects; wrote stats.csv and stats_hist.csv to {}", rows.len(), dir.display());
    Ok(())
}

fn emit_scores(common: &Common, scores: &[BenchmarkScore]) -> Result<()> {
    for s in scores {
        println!("{:<20} {:<14} {:.4}  ({} images)", s.metric, s.algorithm, s.value, s.n_images);
    }
    if let Some(p) = &common.out {
        write_scores_csv(p, scores)?;
    }
    Ok(())
}

fn score(metric: &str, dataset: &str, algorithm: &str, value: f64, n_images: usize) -> BenchmarkScore {
    BenchmarkScore {
        metric: metric.into(),
        dataset: dataset.into(),
        algorithm: algorithm.into(),
        value,
        n_images,
    }
}

fn consistency(common: &Common, index: &DatasetIndex, cfg: &ExperimentConfig) -> Result<()> {
    let clicks = index.clicks()?;
    let mut fixations = Vec::new();
    let mut selections = Vec::new();
    for (i, id) in index.image_ids.iter().enumerate() {
        let (w, h) = image_dims(index, i)?;
        fixations.push(ImageFixations {
            width: w,
            height: h,
            subjects: index.fixations(id, w, h)?,
        });
        selections.push(clicks.subject_masks(id, &index.objects(id)?)?);
    }
    let name = index.name();
    let n = index.len();
    let scores = vec![
        score("consistency_auc", &name, "human", consistency_fixation_with(&fixations, ConsistencyScore::Auc, cfg.seed)?, n),
        score("consistency_sauc", &name, "human", consistency_fixation_with(&fixations, ConsistencyScore::ShuffledAuc, cfg.seed)?, n),
        score("consistency_f", &name, "human", consistency_segmentation(&selections, cfg.seed)?, n),
    ];
    emit_scores(common, &scores)
}

fn algorithms(index: &DatasetIndex, requested: Vec<String>) -> Result<Vec<String>> {
    let algs = if requested.is_empty() { index.map_algorithms()? } else { requested };
    if algs.is_empty() {
        bail!("no maps under {}", index.root.join("maps").display());
    }
    Ok(algs)
}

fn load_maps(index: &DatasetIndex, alg: &str) -> Result<Vec<GrayMap>> {
    index.image_ids.iter().map(|id| Ok(index.map(alg, id)?)).collect()
}

fn combined_masks(index: &DatasetIndex) -> Result<Vec<BinaryMask>> {
    let clicks = index.clicks()?;
    index
        .image_ids
        .iter()
        .map(|id| Ok(index.ground_truth(id, &clicks)?.combined()))
        .collect()
}

fn eval_fixation(common: &Common, index: &DatasetIndex, cfg: &ExperimentConfig, alg: Vec<String>, center_bias: Option<f64>) -> Result<()> {
    let mut positives = Vec::new();
    for (i, id) in index.image_ids.iter().enumerate() {
        let (w, h) = image_dims(index, i)?;
        positives.push(index.fixations(id, w, h)?.iter().flat_map(|s| s.pixels(w, h)).collect::<Vec<_>>());
    }
    let name = index.name();
    let mut scores = Vec::new();
    for a in algorithms(index, alg)? {
        let mut maps = load_maps(index, &a)?;
        if let Some(s) = center_bias {
            maps = maps.iter().map(|m| add_center_bias(m, s)).collect::<Result<_, _>>()?;
        }
        let b = benchmark_fixation_maps(&maps, &positives, cfg.seed).with_context(|| format!("algorithm {a}"))?;
        scores.push(score("auc", &name, &a, b.auc, b.n_images));
        scores.push(score("sauc", &name, &a, b.shuffled_auc, b.n_images));
    }
    emit_scores(common, &scores)
}

fn eval_salobj(common: &Common, index: &DatasetIndex, alg: Vec<String>, pr_dir: Option<PathBuf>) -> Result<()> {
    let gts = combined_masks(index)?;
    let name = index.name();
    let mut scores = Vec::new();
    for a in algorithms(index, alg)? {
        let maps = load_maps(index, &a)?;
        let curve = pr_curve(&maps, &gts).with_context(|| format!("algorithm {a}"))?;
        if let Some(dir) = &pr_dir {
            fs::create_dir_all(dir)?;
            curve.write_csv(dir.join(format!("{a}_pr.csv")))?;
        }
        let best = best_f(&maps, &gts, PrAggregation::Pooled)?;
        scores.push(score("f_measure", &name, &a, best.f, maps.len()));
        scores.push(score("precision", &name, &a, best.precision, maps.len()));
        scores.push(score("recall", &name, &a, best.recall, maps.len()));
    }
    emit_scores(common, &scores)
}

fn train(common: &Common, index: &DatasetIndex, cfg: &ExperimentConfig, features: Option<PathBuf>) -> Result<()> {
    let out = require_out(common)?;
    let images = prepare(index, cfg, PoolSource::Stored)?;
    if let Some(p) = features {
        write_features_csv(p, &images)?;
    }
    let refs: Vec<_> = images.iter().collect();
    let forest = train_forest(&refs, cfg, cfg.seed)?;
    forest.save(out)?;
    let rows: usize = images.iter().map(|im| im.targets.len()).sum();
    println!("trained {} trees on {} segments from {} images; wrote {}", forest.trees.len(), rows, images.len(), out.display());
    Ok(())
}

fn predict(common: &Common, index: &DatasetIndex, cfg: &ExperimentConfig, model: &Path) -> Result<()> {
    let dir = out_dir(common, index.root.join("maps").join("predicted"))?;
    let masks_dir = dir.join("masks");
    fs::create_dir_all(&masks_dir)?;
    let forest = Forest::load(model).with_context(|| format!("model {}", model.display()))?;
    for item in featurize_pools(index, cfg)? {
        let scores = item
            .features
            .iter()
            .map(|f| forest.predict(f.as_slice()))
            .collect::<Result<Vec<_>, _>>()?;
        let map = compose_topk(&item.pool, &scores, cfg.k)?;
        let id = &item.pool.image_id;
        save_map_pgm(&map, dir.join(format!("{id}.pgm")))?;
        save_mask_pgm(&threshold(&map, cfg.mask_threshold), masks_dir.join(format!("{id}.pgm")))?;
    }
    println!("wrote {} maps to {}", index.len(), dir.display());
    Ok(())
}

fn ksweep(common: &Common, index: &DatasetIndex, cfg: &ExperimentConfig, ks: &[usize]) -> Result<()> {
    let images = prepare(index, cfg, PoolSource::Stored)?;
    let sweep = ksweep_prepared(&images, cfg, ks)?;
    println!("{:>5} {:>8} {:>10}", "K", "F", "rank-F");
    for (m, b) in sweep.model.iter().zip(&sweep.baseline) {
        println!("{:>5} {:>8.4} {:>10.4}", m.k, m.mean_f, b.mean_f);
    }
    if let Some(p) = &common.out {
        write_ksweep_csv(p, &sweep.model)?;
    }
    Ok(())
}

fn cell(v: Option<f64>) -> String {
    v.map_or("N/A".into(), |v| format!("{v:.4}"))
}

fn bench(common: &Common, index: &DatasetIndex, cfg: &ExperimentConfig, salobj: Vec<String>) -> Result<()> {
    let dir = out_dir(common, index.root.join("bench"))?;
    let name = index.name();
    let n = index.len();
    let gts = combined_masks(index)?;
    let mut scores = Vec::new();

    let all_maps = index.map_algorithms()?;
    let fixation_algs: Vec<String> = all_maps.iter().filter(|a| !salobj.contains(a)).cloned().collect();
    let mut salobj_rows = Vec::new();
    for a in &salobj {
        let f = best_f(&load_maps(index, a)?, &gts, PrAggregation::Pooled)?.f;
        scores.push(score("f_measure", &name, a, f, n));
        salobj_rows.push((a.clone(), Some(f)));
    }

    let human_cfg = ExperimentConfig { fixation_source: FixationSource::Human, ..cfg.clone() };
    let human = prepare(index, &human_cfg, PoolSource::Stored)?;
    let sweep = ksweep_prepared(&human, &human_cfg, &[cfg.k])?;
    let best_segments = upper_bound_segmenter_prepared(&human, cfg.first_n)?.f;
    let ideal = upper_bound_selector(index, cfg)?.mean_f;
    let baseline_rows = vec![
        ("Rank Baseline".to_string(), Some(sweep.baseline[0].mean_f)),
        ("Segments + Human".to_string(), Some(sweep.model[0].mean_f)),
        ("Best Segments".to_string(), Some(best_segments)),
        ("GT Seg. + Human".to_string(), Some(ideal)),
    ];
    for (label, metric) in [
        ("rank_baseline", sweep.baseline[0].mean_f),
        ("segments_human", sweep.model[0].mean_f),
        ("best_segments", best_segments),
        ("gt_segments_human", ideal),
    ] {
        scores.push(score("f_measure", &name, label, metric, n));
    }

    let mut orig_rows = Vec::new();
    let mut model_rows = Vec::new();
    for a in &fixation_algs {
        let f = best_f(&load_maps(index, a)?, &gts, PrAggregation::Pooled)?.f;
        scores.push(score("f_measure", &name, a, f, n));
        orig_rows.push((a.clone(), Some(f)));
        let map_cfg = ExperimentConfig { fixation_source: FixationSource::Map(a.clone()), ..cfg.clone() };
        let r = run_prepared(&prepare(index, &map_cfg, PoolSource::Stored)?, &map_cfg)?;
        scores.push(score("f_measure", &name, &format!("segments_{a}"), r.mean_f, n));
        model_rows.push((a.clone(), Some(r.mean_f)));
    }

    write_scores_csv(dir.join("scores.csv"), &scores)?;
    let table = render_table(&name, cfg.k, &[
        (("Salient Object", salobj_rows), ("Baseline Models", baseline_rows)),
        (("Orig. Fixation", orig_rows), ("Segments + Fixation", model_rows)),
    ]);
    fs::write(dir.join("table.txt"), &table)?;
    print!("{table}");
    Ok(())
}

type Block = (&'static str, Vec<(String, Option<f64>)>);

/// Two side-by-side columns of blocks, each block a heading row plus
/// algorithm rows, separated by double rules.
fn render_table(dataset: &str, k: usize, sections: &[(Block, Block)]) -> String {
    let label_w = sections
        .iter()
        .flat_map(|(l, r)| [l, r])
        .flat_map(|(h, rows)| std::iter::once(h.len()).chain(rows.iter().map(|(n, _)| n.len())))
        .max()
        .unwrap_or(0)
        .max(12);
    let val_w = dataset.len().max(6);
    let mut out = String::new();
    let rule = "-".repeat(2 * (label_w + val_w + 3) + 1);
    let double = "=".repeat(rule.len());
    let _ = writeln!(out, "F-measures, K={k}");
    for (left, right) in sections {
        let _ = writeln!(out, "{double}");
        let _ = writeln!(out, "{:<label_w$} | {:>val_w$} || {:<label_w$} | {:>val_w$}", left.0, dataset, right.0, dataset);
        let _ = writeln!(out, "{rule}");
        for i in 0..left.1.len().max(right.1.len()) {
            let side = |b: &Block| match b.1.get(i) {
                Some((n, v)) => (n.clone(), cell(*v)),
                None => (String::new(), String::new()),
            };
            let (ln, lv) = side(left);
            let (rn, rv) = side(right);
            let _ = writeln!(out, "{ln:<label_w$} | {lv:>val_w$} || {rn:<label_w$} | {rv:>val_w$}");
        }
    }
    let _ = writeln!(out, "{double}");
    out
}
