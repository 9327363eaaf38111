use std::collections::btree_map::Entry;
use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use log::{debug, info};
use nwdkit::data_io::{
    compute_stats, export_csv, format_sig6, load_annotations, load_detections, synth_scene,
    write_atomic, AnnotationSet, CsvValue, DatasetStats, SceneSpec,
};
use nwdkit::diagnostics::{bucket_imbalance, BucketStat, PositiveStatsAccumulator};
use nwdkit::{
    assign, deviation_curve, generate_anchors, AnchorConfig, AssignerConfig, BBox, EvalParams,
    Label, MetricKind, ScaleBucket, Strategy,
};
use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::{
    AssignOpts, AssignStatsArgs, CurveArgs, DatasetStatsArgs, EvaluateArgs, StrategyName,
    SweepArgs, SweepParam, UsageError,
};

fn usage(msg: impl Into<String>) -> anyhow::Error {
    UsageError(msg.into()).into()
}

fn write_json<T: Serialize>(value: &T, out: Option<&Path>) -> Result<()> {
    let text = serde_json::to_string_pretty(value)? + "\n";
    match out {
        Some(path) => {
            write_atomic(path, text.as_bytes())?;
            info!("wrote {}", path.display());
        }
        None => print!("{text}"),
    }
    Ok(())
}

fn ensure_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir)
        .with_context(|| format!("cannot create output directory {}", dir.display()))
}

pub fn curve(args: &CurveArgs) -> Result<()> {
    ensure_dir(&args.out)?;
    let mut metrics = args.metrics.clone();
    metrics.dedup();
    for m in metrics {
        let metric = MetricKind::parse_with_c(m.as_str(), args.c)?;
        for &scale in &args.scales {
            if !(scale.is_finite() && scale > 0.0) {
                return Err(usage(format!("--scale must be positive, got {scale}")));
            }
            if !(args.ratio.is_finite() && args.ratio > 0.0) {
                return Err(usage(format!(
                    "--ratio must be positive, got {}",
                    args.ratio
                )));
            }
            let curve = deviation_curve(metric, scale, args.ratio, args.max_dev)?;
            let rows: Vec<Vec<CsvValue>> = curve
                .points
                .iter()
                .map(|&(d, v)| vec![CsvValue::from(d), CsvValue::from(v)])
                .collect();
            let mut name = format!("{}_s{}", metric.name(), format_sig6(scale));
            if args.ratio != 1.0 {
                name += &format!("_r{}", format_sig6(args.ratio));
            }
            let path = args.out.join(format!("{name}.csv"));
            export_csv(&["deviation", "value"], &rows, &path)?;
            println!("{}", path.display());
        }
    }
    Ok(())
}

#[derive(Debug, Serialize)]
struct AnchorReport {
    strides: Vec<f64>,
    anchor_scale: f64,
    ratios: Vec<f64>,
    clip_border: bool,
}

#[derive(Debug, Serialize)]
struct AssignReport {
    source: String,
    seed: Option<u64>,
    strategy: String,
    metric: String,
    #[serde(rename = "C")]
    c: Option<f64>,
    k: usize,
    theta_p: f64,
    theta_n: f64,
    min_pos_metric: f64,
    anchors: AnchorReport,
    num_images: usize,
    num_gts: usize,
    /// Mean positives per gt by scale bucket; buckets without gts are absent.
    buckets: BTreeMap<ScaleBucket, BucketStat>,
    /// Largest over smallest bucket mean; `"inf"` when some bucket mean is 0.
    imbalance: Option<serde_json::Value>,
    positives: u64,
    negatives: u64,
    ignored: u64,
    /// SHA-256 over every image id and label, in image order.
    labels_digest: String,
}

fn parse_scene_spec(spec: &str) -> Result<SceneSpec> {
    let mut out = SceneSpec::new();
    for part in spec.split(',').filter(|p| !p.trim().is_empty()) {
        let (k, v) = part
            .split_once('=')
            .ok_or_else(|| usage(format!("--synth expects bucket=count pairs, got `{part}`")))?;
        let bucket: ScaleBucket = k.trim().parse()?;
        let count: usize = v
            .trim()
            .parse()
            .map_err(|_| usage(format!("--synth: `{v}` is not a count")))?;
        out.insert(bucket, count);
    }
    Ok(out)
}

fn load_source(opts: &AssignOpts) -> Result<(String, AnnotationSet)> {
    match (&opts.ann, &opts.synth) {
        (Some(path), _) => Ok((path.display().to_string(), load_annotations(path)?)),
        (None, Some(spec)) => {
            let seed = opts.seed.ok_or_else(|| usage("--synth needs --seed"))?;
            let scene = parse_scene_spec(spec)?;
            if opts.image_size == 0 {
                return Err(usage("--image-size must be positive"));
            }
            Ok((
                format!("synthetic:{spec}"),
                synth_scene(&scene, opts.image_size, opts.image_size, seed)?,
            ))
        }
        (None, None) => Err(usage("one of --ann or --synth is required")),
    }
}

fn metric_name(opts: &AssignOpts) -> &'static str {
    let default = match opts.strategy {
        StrategyName::Rka => "nwd",
        StrategyName::Threshold => "iou",
    };
    opts.metric.map_or(default, |m| m.as_str())
}

fn assigner(opts: &AssignOpts) -> Result<AssignerConfig<f64>> {
    let strategy = match opts.strategy {
        StrategyName::Rka => Strategy::Rka,
        StrategyName::Threshold => Strategy::Threshold,
    };
    let name = metric_name(opts);
    let cfg = AssignerConfig {
        strategy,
        metric: MetricKind::parse_with_c(name, opts.c)?,
        theta_p: opts.theta_p,
        theta_n: opts.theta_n,
        min_pos_metric: opts.min_pos_metric,
        k: opts.k,
    };
    cfg.validate()?;
    Ok(cfg)
}

fn anchor_config(opts: &AssignOpts) -> Result<AnchorConfig<f64>> {
    let cfg = AnchorConfig {
        strides: opts.strides.clone(),
        anchor_scale: opts.anchor_scale,
        ratios: opts.ratios.clone(),
        clip_border: opts.clip_border,
    };
    cfg.validate()?;
    Ok(cfg)
}

fn assignment_report(
    opts: &AssignOpts,
    source: String,
    set: &AnnotationSet,
) -> Result<AssignReport> {
    let cfg = assigner(opts)?;
    let anchor_cfg = anchor_config(opts)?;
    let mut anchor_cache: BTreeMap<(u32, u32), Vec<BBox<f64>>> = BTreeMap::new();
    let mut acc = PositiveStatsAccumulator::default();
    let (mut positives, mut negatives, mut ignored, mut num_gts) = (0u64, 0u64, 0u64, 0usize);
    let mut hasher = Sha256::new();

    for (image_id, anns) in set.by_image() {
        let image = set.image(image_id).expect("grouped by known image ids");
        let key = (image.width, image.height);
        let anchors = match anchor_cache.entry(key) {
            Entry::Occupied(e) => e.into_mut(),
            Entry::Vacant(e) => e.insert(generate_anchors(
                &anchor_cfg,
                f64::from(image.width),
                f64::from(image.height),
            )?),
        };
        let gts: Vec<BBox<f64>> = anns.iter().filter(|a| !a.iscrowd).map(|a| a.bbox).collect();
        let res = assign(&cfg, &gts, anchors)?;
        acc.add(&res, &gts)?;
        num_gts += gts.len();
        hasher.update(image_id.to_le_bytes());
        for label in &res.labels {
            hasher.update(label.to_flat().to_le_bytes());
            match label {
                Label::Positive(_) => positives += 1,
                Label::Negative => negatives += 1,
                Label::Ignore => ignored += 1,
            }
        }
        debug!(
            "image {image_id}: {} gts, {} positives",
            gts.len(),
            res.num_positive()
        );
    }

    let buckets = acc.finish();
    let imbalance = bucket_imbalance(&buckets).map(|r| {
        if r.is_finite() {
            serde_json::json!(r)
        } else {
            serde_json::json!("inf")
        }
    });
    let c = match cfg.metric {
        MetricKind::Nwd { c } => Some(c),
        _ => None,
    };
    Ok(AssignReport {
        source,
        seed: opts.synth.as_ref().and(opts.seed),
        strategy: cfg.strategy.to_string(),
        metric: cfg.metric.name().to_string(),
        c,
        k: cfg.k,
        theta_p: cfg.theta_p,
        theta_n: cfg.theta_n,
        min_pos_metric: cfg.min_pos_metric,
        anchors: AnchorReport {
            strides: anchor_cfg.strides,
            anchor_scale: anchor_cfg.anchor_scale,
            ratios: anchor_cfg.ratios,
            clip_border: anchor_cfg.clip_border,
        },
        num_images: set.images.len(),
        num_gts,
        buckets,
        imbalance,
        positives,
        negatives,
        ignored,
        labels_digest: format!("{:x}", hasher.finalize()),
    })
}

pub fn assign_stats(args: &AssignStatsArgs) -> Result<()> {
    let (source, set) = load_source(&args.opts)?;
    let report = assignment_report(&args.opts, source, &set)?;
    write_json(&report, args.out.as_deref())
}

pub fn evaluate(args: &EvaluateArgs) -> Result<()> {
    let gt = load_annotations(&args.ann)?;
    let dets = load_detections(&args.dets)?;
    let params = EvalParams {
        max_det: args.max_det,
        ..EvalParams::default()
    };
    let report = nwdkit::evaluate(&dets, &gt, &params);
    print!("{}", report.to_table());
    if let Some(out) = &args.out {
        write_json(&report, Some(out))?;
    }
    Ok(())
}

#[derive(Serialize)]
struct StatsReport {
    splits: BTreeMap<String, DatasetStats>,
    /// All files pooled; present when more than one file is given.
    combined: Option<DatasetStats>,
}

fn split_name(path: &Path, taken: &BTreeMap<String, DatasetStats>) -> String {
    let stem = path.file_stem().map_or_else(
        || path.display().to_string(),
        |s| s.to_string_lossy().into_owned(),
    );
    if taken.contains_key(&stem) {
        path.display().to_string()
    } else {
        stem
    }
}

fn print_stats(name: &str, s: &DatasetStats) {
    let size = match (s.size_mean, s.size_std) {
        (Some(m), Some(sd)) => format!("{m:.2} +- {sd:.2}"),
        _ => "-".into(),
    };
    let shares: Vec<String> = ScaleBucket::ALL
        .iter()
        .map(|b| {
            format!(
                "{} {:.1}%",
                b.short_name(),
                s.bucket_percentages.get(b).copied().unwrap_or(0.0)
            )
        })
        .collect();
    println!(
        "{name}: {} images, {} instances, size {size}, {}",
        s.num_images,
        s.total_instances,
        shares.join(", ")
    );
}

pub fn dataset_stats(args: &DatasetStatsArgs) -> Result<()> {
    let mut splits = BTreeMap::new();
    let mut pooled = AnnotationSet::default();
    for path in &args.anns {
        let set = load_annotations(path)?;
        let name = split_name(path, &splits);
        let stats = compute_stats(&set);
        print_stats(&name, &stats);
        splits.insert(name, stats);
        pooled.images.extend(set.images);
        pooled.annotations.extend(set.annotations);
    }
    let combined = (args.anns.len() > 1).then(|| compute_stats(&pooled));
    if let Some(c) = &combined {
        print_stats("combined", c);
    }
    if let Some(out) = &args.out {
        write_json(&StatsReport { splits, combined }, Some(out))?;
    }
    Ok(())
}

fn apply_sweep_value(opts: &AssignOpts, param: SweepParam, value: &str) -> Result<AssignOpts> {
    let mut o = opts.clone();
    let bad = || {
        usage(format!(
            "--values: `{value}` is not valid for {}",
            param.as_str()
        ))
    };
    match param {
        SweepParam::C => o.c = value.trim().parse().map_err(|_| bad())?,
        SweepParam::K => o.k = value.trim().parse().map_err(|_| bad())?,
        SweepParam::AnchorScale => o.anchor_scale = value.trim().parse().map_err(|_| bad())?,
    }
    Ok(o)
}

pub fn sweep(args: &SweepArgs) -> Result<()> {
    if args.param == SweepParam::C && metric_name(&args.opts) != "nwd" {
        bail!(UsageError(
            "--param C only applies to the nwd metric".into()
        ));
    }
    ensure_dir(&args.out)?;
    let (source, set) = load_source(&args.opts)?;
    let header = [
        "param",
        "value",
        "gts",
        "positives",
        "negatives",
        "ignored",
        "mean_vt",
        "mean_t",
        "mean_s",
        "mean_m",
        "mean_l",
        "imbalance",
        "labels_digest",
    ];
    let mut rows = Vec::new();
    for value in &args.values {
        let opts = apply_sweep_value(&args.opts, args.param, value)?;
        let report = assignment_report(&opts, source.clone(), &set)?;
        let safe: String = value
            .trim()
            .chars()
            .map(|ch| {
                if ch.is_ascii_alphanumeric() || "._-".contains(ch) {
                    ch
                } else {
                    '_'
                }
            })
            .collect();
        let file = args
            .out
            .join(format!("{}_{safe}.json", args.param.as_str()));
        write_json(&report, Some(&file))?;
        let mut row = vec![
            CsvValue::from(args.param.as_str()),
            CsvValue::from(value.trim()),
            CsvValue::from(report.num_gts),
            CsvValue::Int(report.positives as i64),
            CsvValue::Int(report.negatives as i64),
            CsvValue::Int(report.ignored as i64),
        ];
        for b in ScaleBucket::ALL {
            row.push(match report.buckets.get(&b) {
                Some(s) => CsvValue::from(s.mean_positives),
                None => CsvValue::from(""),
            });
        }
        row.push(match bucket_imbalance(&report.buckets) {
            Some(r) => CsvValue::from(r),
            None => CsvValue::from(""),
        });
        row.push(CsvValue::from(report.labels_digest.clone()));
        rows.push(row);
        println!("{}", file.display());
    }
    let summary: PathBuf = args.out.join("summary.csv");
    export_csv(&header, &rows, &summary)?;
    println!("{}", summary.display());
    Ok(())
}
