use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use serde::Serialize;
use serde_json::json;
use sigan::augmentation::{generate_defective, GenerationOptions, MANIFEST_FILE};
use sigan::data::{list_images, load_image_files, to_raw_image, write_gray_png, DatasetLoader, Domain, Split};
use sigan::evaluation::{extractor_by_id, fid_images};
use sigan::models::{Checkpoint, GeneratorRole};
use sigan::segmentation::{
    aggregate, evaluate_masks, read_mask, segment_all, write_mask, DiffPolarity, SegMetrics, SegmentConfig,
    ThresholdRule,
};
use sigan::trainer::{prepare_training_data, train, TrainConfig};
use sigan::SiganError;

use crate::args::{AugmentArgs, FidArgs, PolarityArg, SegEvalArgs, SegmentArgs, TrainArgs};
use crate::manifest::RunRecorder;
use crate::output::{print_json, write_json};

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))
}

/// The defective class a checkpoint was trained on, from its config snapshot.
fn checkpoint_class(ck: &Checkpoint) -> Domain {
    ck.meta.config.get("defect_class").and_then(|v| serde_json::from_value(v.clone()).ok()).unwrap_or(Domain::Crack)
}

/// Image files in `dir` keyed by file stem.
fn images_by_stem(dir: &Path) -> Result<BTreeMap<String, PathBuf>> {
    if !dir.is_dir() {
        return Err(SiganError::DatasetLayout { path: dir.to_path_buf() }.into());
    }
    let mut out = BTreeMap::new();
    for path in list_images(dir)? {
        let stem = path.file_stem().and_then(|s| s.to_str()).unwrap_or_default().to_string();
        if let Some(prev) = out.insert(stem.clone(), path.clone()) {
            return Err(SiganError::Config(format!(
                "{} and {} share the name {stem:?}",
                prev.display(),
                path.display()
            ))
            .into());
        }
    }
    Ok(out)
}

pub fn run_train(args: &TrainArgs) -> Result<()> {
    let text = match &args.config {
        Some(p) => Some(fs::read_to_string(p).with_context(|| format!("reading config {}", p.display()))?),
        None => None,
    };
    let cfg = TrainConfig::resolve(text.as_deref(), &args.overrides)?;
    create_dir(&args.out)?;
    let mut rec = RunRecorder::start("train", &args.out);
    let snapshot = args.out.join("config.toml");
    fs::write(&snapshot, cfg.to_toml()).with_context(|| format!("writing {}", snapshot.display()))?;
    rec.add(&snapshot);

    let data = DatasetLoader::default()
        .with_image_size(cfg.image_size)
        .with_classes(&[Domain::DefectFree, cfg.defect_class])
        .load(&args.data, Split::Train)?;
    let data = prepare_training_data(data, &cfg)?;
    let series = train(&cfg, &data, &args.out, args.resume.as_deref())?;
    rec.add(&series.log);
    series.checkpoints.iter().for_each(|c| rec.add(c));
    let manifest = rec.finish(serde_json::to_value(&cfg)?, Some(cfg.seed))?;
    print_json(&json!({
        "steps": series.steps,
        "final_checkpoint": series.final_checkpoint,
        "log": series.log,
        "manifest": manifest,
    }))
}

#[derive(Serialize)]
struct SegmentRecord<'a> {
    id: &'a str,
    threshold: f64,
    threshold_mode: sigan::segmentation::ThresholdMode,
    defect_pixels: usize,
    mask: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    metrics: Option<SegMetrics>,
}

pub fn run_segment(args: &SegmentArgs) -> Result<()> {
    let ck = Checkpoint::load(&args.checkpoint)?;
    let translator = ck.generator(GeneratorRole::DefectToDefectFree)?;
    let size = translator.arch.image_size;
    let samples = load_image_files(&args.input, size, checkpoint_class(&ck))?;
    let cfg = SegmentConfig {
        threshold: args.threshold.map_or(ThresholdRule::Otsu, |value| ThresholdRule::Fixed { value }),
        polarity: match args.polarity {
            PolarityArg::Absolute => DiffPolarity::Absolute,
            PolarityArg::Signed => DiffPolarity::SignedClipped,
        },
        min_area: args.min_area,
    };
    let gt_files = args.gt.as_deref().map(images_by_stem).transpose()?;
    let results = segment_all(&samples, &translator, &cfg, args.batch_size)?;

    let mut rec = RunRecorder::start("segment", &args.out);
    let (mask_dir, diff_dir) = (args.out.join("masks"), args.out.join("diff"));
    create_dir(&mask_dir)?;
    create_dir(&diff_dir)?;
    let mut records = Vec::with_capacity(results.len());
    let mut per_image = Vec::new();
    for (sample, r) in samples.iter().zip(&results) {
        let mask_path = mask_dir.join(format!("{}.png", sample.id));
        write_mask(&mask_path, &r.mask, Some(sample.original_size))?;
        let diff_path = diff_dir.join(format!("{}.png", sample.id));
        write_gray_png(&diff_path, &to_raw_image(&r.diff_map.map(|v| v - 1.0)))?;
        rec.add(&mask_path);
        rec.add(&diff_path);
        if args.save_generated {
            let gen_dir = args.out.join("generated");
            create_dir(&gen_dir)?;
            let gen_path = gen_dir.join(format!("{}.png", sample.id));
            write_gray_png(&gen_path, &to_raw_image(&r.generated))?;
            rec.add(&gen_path);
        }
        let metrics = match &gt_files {
            Some(gt) => {
                let path = gt
                    .get(&sample.id)
                    .ok_or_else(|| SiganError::Config(format!("no ground-truth mask for {}", sample.id)))?;
                let m = evaluate_masks(&r.mask, &read_mask(path, Some(size))?)?;
                per_image.push(m);
                Some(m)
            }
            None => None,
        };
        records.push(SegmentRecord {
            id: &sample.id,
            threshold: r.threshold_used,
            threshold_mode: r.threshold_mode,
            defect_pixels: r.mask.count(),
            mask: format!("masks/{}.png", sample.id),
            metrics,
        });
    }
    let report_path = args.out.join("segmentation.json");
    let agg = gt_files.is_some().then(|| aggregate(&per_image));
    write_json(&report_path, &json!({ "images": records, "aggregate": agg }))?;
    rec.add(&report_path);
    let config = json!({
        "checkpoint": args.checkpoint,
        "input": args.input,
        "gt": args.gt,
        "segment": cfg,
        "image_size": size,
    });
    rec.finish(config, None)?;
    match agg {
        Some(a) => print_json(&a),
        None => print_json(&json!({ "images": records.len(), "masks": mask_dir })),
    }
}

pub fn run_augment(args: &AugmentArgs) -> Result<()> {
    let ck = Checkpoint::load(&args.checkpoint)?;
    let generator = ck.generator(GeneratorRole::DefectFreeToDefect)?;
    let class = match &args.class {
        Some(c) => c.parse::<Domain>()?,
        None => checkpoint_class(&ck),
    };
    let data = DatasetLoader::default()
        .with_image_size(generator.arch.image_size)
        .with_classes(&[Domain::DefectFree])
        .load(&args.data, Split::Train)?;
    let opts = GenerationOptions {
        target_class: class,
        seed: args.seed,
        with_replacement: args.with_replacement,
        checkpoint_label: args.checkpoint.display().to_string(),
    };
    let mut rec = RunRecorder::start("augment", &args.out);
    let manifest = generate_defective(data.defect_free(), &generator, args.count, &args.out, &opts)?;
    manifest.entries.iter().for_each(|e| rec.add(args.out.join(&e.output_path)));
    rec.add(args.out.join(MANIFEST_FILE));
    let config = json!({
        "checkpoint": args.checkpoint,
        "data": args.data,
        "count": args.count,
        "class": class,
        "with_replacement": args.with_replacement,
    });
    rec.finish(config, Some(args.seed))?;
    print_json(&json!({
        "generated": manifest.fake_count(),
        "class": class,
        "sources": data.defect_free().len(),
        "manifest": args.out.join(MANIFEST_FILE),
    }))
}

pub fn run_evaluate_fid(args: &FidArgs) -> Result<()> {
    let out = args.out.clone().unwrap_or_else(|| args.fake.clone());
    let mut rec = RunRecorder::start("evaluate-fid", &out);
    let extractor = extractor_by_id(&args.extractor)?;
    let real = load_image_files(&args.real, args.size, Domain::DefectFree)?;
    let fake = load_image_files(&args.fake, args.size, Domain::DefectFree)?;
    let report = fid_images(&real, &fake, extractor.as_ref())?;
    let summary = report.summary();
    create_dir(&out)?;
    let path = out.join("fid.json");
    write_json(&path, &summary)?;
    rec.add(&path);
    let config = json!({ "real": args.real, "fake": args.fake, "extractor": args.extractor, "size": args.size });
    rec.finish(config, None)?;
    print_json(&summary)
}

pub fn run_evaluate_seg(args: &SegEvalArgs) -> Result<()> {
    let out = args.out.clone().unwrap_or_else(|| args.pred.clone());
    let mut rec = RunRecorder::start("evaluate-seg", &out);
    let preds = images_by_stem(&args.pred)?;
    let gts = images_by_stem(&args.gt)?;
    if preds.is_empty() {
        return Err(SiganError::Config(format!("no masks in {}", args.pred.display())).into());
    }
    if let Some(stem) = gts.keys().find(|k| !preds.contains_key(*k)) {
        return Err(SiganError::Config(format!("no predicted mask for ground truth {stem:?}")).into());
    }
    let mut rows = Vec::with_capacity(preds.len());
    for (stem, pred_path) in &preds {
        let gt_path = gts.get(stem).ok_or_else(|| SiganError::Config(format!("no ground-truth mask for {stem:?}")))?;
        let gt = read_mask(gt_path, None)?;
        let mut pred = read_mask(pred_path, None)?;
        if pred.shape() != gt.shape() {
            pred = pred.resize_nearest(gt.height, gt.width);
        }
        rows.push((stem.clone(), evaluate_masks(&pred, &gt)?));
    }
    let agg = aggregate(&rows.iter().map(|(_, m)| *m).collect::<Vec<_>>());
    let per_image: Vec<_> = rows.iter().map(|(id, m)| json!({ "id": id, "metrics": m })).collect();
    create_dir(&out)?;
    let path = out.join("seg_metrics.json");
    write_json(&path, &json!({ "aggregate": agg, "images": per_image }))?;
    rec.add(&path);
    rec.finish(json!({ "pred": args.pred, "gt": args.gt }), None)?;
    print_json(&agg)
}
