//! COCO-format annotation and detection files, dataset statistics, synthetic
//! scenes and CSV export.
//!
//! Boxes are kept in center form internally; COCO's top-left `[x, y, w, h]`
//! is converted at the file boundary.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt::Write as _;
use std::io::Write as _;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Deserializer, Serialize};

use crate::diagnostics::ScaleBucket;
use crate::error::{Error, Result};
use crate::evaluation::Detection;
use crate::geometry::BBox;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImageInfo {
    pub id: u64,
    pub width: u32,
    pub height: u32,
    #[serde(default)]
    pub file_name: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Category {
    pub id: u64,
    pub name: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Annotation {
    pub id: u64,
    pub image_id: u64,
    pub category_id: u64,
    pub bbox: BBox<f64>,
    pub iscrowd: bool,
}

/// A validated COCO annotation file.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct AnnotationSet {
    pub images: Vec<ImageInfo>,
    pub annotations: Vec<Annotation>,
    pub categories: Vec<Category>,
    /// Annotations dropped at load time for a non-positive or non-finite box.
    pub dropped_degenerate: usize,
}

impl AnnotationSet {
    /// Annotations grouped by image id, in file order within each image.
    pub fn by_image(&self) -> BTreeMap<u64, Vec<&Annotation>> {
        let mut map: BTreeMap<u64, Vec<&Annotation>> =
            self.images.iter().map(|im| (im.id, Vec::new())).collect();
        for a in &self.annotations {
            map.entry(a.image_id).or_default().push(a);
        }
        map
    }

    pub fn image(&self, id: u64) -> Option<&ImageInfo> {
        self.images.iter().find(|im| im.id == id)
    }
}

#[derive(Serialize, Deserialize)]
struct CocoFile {
    images: Vec<ImageInfo>,
    annotations: Vec<CocoAnnotation>,
    categories: Vec<Category>,
}

#[derive(Serialize, Deserialize)]
struct CocoAnnotation {
    id: u64,
    image_id: u64,
    category_id: u64,
    bbox: [f64; 4],
    #[serde(default, skip_serializing_if = "Option::is_none")]
    area: Option<f64>,
    #[serde(default, deserialize_with = "flag_from_int_or_bool")]
    iscrowd: u8,
}

fn flag_from_int_or_bool<'de, D: Deserializer<'de>>(d: D) -> std::result::Result<u8, D::Error> {
    #[derive(Deserialize)]
    #[serde(untagged)]
    enum Flag {
        Bool(bool),
        Int(u8),
    }
    Ok(match Flag::deserialize(d)? {
        Flag::Bool(b) => u8::from(b),
        Flag::Int(i) => u8::from(i != 0),
    })
}

#[derive(Serialize, Deserialize)]
struct CocoDetection {
    image_id: u64,
    category_id: u64,
    bbox: [f64; 4],
    score: f64,
}

fn byte_offset(text: &str, line: usize, column: usize) -> usize {
    if line == 0 {
        return 0;
    }
    let line_start: usize = text
        .split_inclusive('\n')
        .take(line - 1)
        .map(str::len)
        .sum();
    (line_start + column.saturating_sub(1)).min(text.len())
}

fn parse_json<T: for<'de> Deserialize<'de>>(text: &str, path: &Path) -> Result<T> {
    serde_json::from_str(text).map_err(|source| {
        let (line, column) = (source.line(), source.column());
        Error::Json {
            path: path.to_path_buf(),
            offset: byte_offset(text, line, column),
            line,
            column,
            source,
        }
    })
}

fn read_text(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

pub fn load_annotations(path: impl AsRef<Path>) -> Result<AnnotationSet> {
    let path = path.as_ref();
    parse_annotations(&read_text(path)?, path)
}

/// Parses and validates COCO annotation JSON. `path` is only used in errors.
pub fn parse_annotations(text: &str, path: &Path) -> Result<AnnotationSet> {
    let raw: CocoFile = parse_json(text, path)?;
    let schema = |message: String| Error::Schema {
        path: path.to_path_buf(),
        message,
    };

    let mut image_ids = HashSet::new();
    for im in &raw.images {
        if !image_ids.insert(im.id) {
            return Err(schema(format!("duplicate image id {}", im.id)));
        }
    }
    let mut category_ids = HashSet::new();
    for c in &raw.categories {
        if !category_ids.insert(c.id) {
            return Err(schema(format!("duplicate category id {}", c.id)));
        }
    }

    let mut ann_ids = HashSet::new();
    let mut annotations = Vec::with_capacity(raw.annotations.len());
    let mut dropped = 0;
    for a in raw.annotations {
        if !ann_ids.insert(a.id) {
            return Err(schema(format!("duplicate annotation id {}", a.id)));
        }
        if !image_ids.contains(&a.image_id) {
            return Err(schema(format!(
                "annotation {} references unknown image_id {}",
                a.id, a.image_id
            )));
        }
        if !category_ids.contains(&a.category_id) {
            return Err(schema(format!(
                "annotation {} references unknown category_id {}",
                a.id, a.category_id
            )));
        }
        let [x, y, w, h] = a.bbox;
        match BBox::from_xywh(x, y, w, h) {
            Ok(bbox) => annotations.push(Annotation {
                id: a.id,
                image_id: a.image_id,
                category_id: a.category_id,
                bbox,
                iscrowd: a.iscrowd != 0,
            }),
            Err(_) => dropped += 1,
        }
    }
    if dropped > 0 {
        log::warn!(
            "{}: dropped {dropped} annotation(s) with degenerate boxes",
            path.display()
        );
    }

    Ok(AnnotationSet {
        images: raw.images,
        annotations,
        categories: raw.categories,
        dropped_degenerate: dropped,
    })
}

pub fn annotations_to_json(set: &AnnotationSet) -> String {
    let file = CocoFile {
        images: set.images.clone(),
        annotations: set
            .annotations
            .iter()
            .map(|a| CocoAnnotation {
                id: a.id,
                image_id: a.image_id,
                category_id: a.category_id,
                bbox: a.bbox.to_xywh(),
                area: Some(a.bbox.area()),
                iscrowd: u8::from(a.iscrowd),
            })
            .collect(),
        categories: set.categories.clone(),
    };
    serde_json::to_string_pretty(&file).expect("annotation set serializes")
}

pub fn save_annotations(set: &AnnotationSet, path: impl AsRef<Path>) -> Result<()> {
    write_atomic(path.as_ref(), annotations_to_json(set).as_bytes())
}

/// Loads a COCO results file: a JSON array of
/// `{image_id, category_id, bbox: [x, y, w, h], score}`.
/// Detections with degenerate boxes are dropped with a warning.
pub fn load_detections(path: impl AsRef<Path>) -> Result<Vec<Detection>> {
    let path = path.as_ref();
    parse_detections(&read_text(path)?, path)
}

pub fn parse_detections(text: &str, path: &Path) -> Result<Vec<Detection>> {
    let raw: Vec<CocoDetection> = parse_json(text, path)?;
    let total = raw.len();
    let dets: Vec<Detection> = raw
        .into_iter()
        .filter_map(|d| {
            let [x, y, w, h] = d.bbox;
            let bbox = BBox::from_xywh(x, y, w, h).ok()?;
            d.score.is_finite().then_some(Detection {
                image_id: d.image_id,
                category_id: d.category_id,
                bbox,
                score: d.score,
            })
        })
        .collect();
    if dets.len() < total {
        log::warn!(
            "{}: dropped {} detection(s) with degenerate boxes or scores",
            path.display(),
            total - dets.len()
        );
    }
    Ok(dets)
}

pub fn detections_to_json(dets: &[Detection]) -> String {
    let raw: Vec<CocoDetection> = dets
        .iter()
        .map(|d| CocoDetection {
            image_id: d.image_id,
            category_id: d.category_id,
            bbox: d.bbox.to_xywh(),
            score: d.score,
        })
        .collect();
    serde_json::to_string_pretty(&raw).expect("detections serialize")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetStats {
    pub num_images: usize,
    pub total_instances: usize,
    /// Instances per category name, including empty categories.
    pub per_category: BTreeMap<String, usize>,
    /// Mean absolute size, `None` for an empty set.
    pub size_mean: Option<f64>,
    /// Population standard deviation of the absolute size.
    pub size_std: Option<f64>,
    pub bucket_counts: BTreeMap<ScaleBucket, usize>,
    /// Share of all instances per bucket, in percent.
    pub bucket_percentages: BTreeMap<ScaleBucket, f64>,
    /// Instances below the smallest bucket (under 2 px).
    pub below_min_size: usize,
    /// Number of images holding a given number of instances.
    pub instances_per_image: BTreeMap<usize, usize>,
}

/// Neumaier-compensated sum.
#[derive(Default)]
struct CompensatedSum {
    sum: f64,
    c: f64,
}

impl CompensatedSum {
    fn add(&mut self, x: f64) {
        let t = self.sum + x;
        if self.sum.abs() >= x.abs() {
            self.c += (self.sum - t) + x;
        } else {
            self.c += (x - t) + self.sum;
        }
        self.sum = t;
    }

    fn value(&self) -> f64 {
        self.sum + self.c
    }
}

pub fn compute_stats(set: &AnnotationSet) -> DatasetStats {
    let n = set.annotations.len();
    let names: HashMap<u64, &str> = set
        .categories
        .iter()
        .map(|c| (c.id, c.name.as_str()))
        .collect();
    let mut per_category: BTreeMap<String, usize> =
        set.categories.iter().map(|c| (c.name.clone(), 0)).collect();
    let mut bucket_counts: BTreeMap<ScaleBucket, usize> =
        ScaleBucket::ALL.iter().map(|&b| (b, 0)).collect();
    let mut below_min_size = 0;
    let mut sum = CompensatedSum::default();

    for a in &set.annotations {
        let name = names.get(&a.category_id).copied().unwrap_or("<unknown>");
        *per_category.entry(name.to_string()).or_default() += 1;
        let size = a.bbox.absolute_size();
        sum.add(size);
        match ScaleBucket::of_size(size) {
            Some(b) => *bucket_counts.get_mut(&b).expect("all buckets present") += 1,
            None => below_min_size += 1,
        }
    }

    let (size_mean, size_std) = if n == 0 {
        (None, None)
    } else {
        let mean = sum.value() / n as f64;
        let mut sq = CompensatedSum::default();
        for a in &set.annotations {
            let d = a.bbox.absolute_size() - mean;
            sq.add(d * d);
        }
        (Some(mean), Some((sq.value() / n as f64).sqrt()))
    };

    let bucket_percentages = if n == 0 {
        BTreeMap::new()
    } else {
        bucket_counts
            .iter()
            .map(|(&b, &c)| (b, 100.0 * c as f64 / n as f64))
            .collect()
    };

    let mut instances_per_image = BTreeMap::new();
    for anns in set.by_image().values() {
        *instances_per_image.entry(anns.len()).or_insert(0) += 1;
    }

    DatasetStats {
        num_images: set.images.len(),
        total_instances: n,
        per_category,
        size_mean,
        size_std,
        bucket_counts,
        bucket_percentages,
        below_min_size,
        instances_per_image,
    }
}

/// Number of gts to draw per scale bucket.
pub type SceneSpec = BTreeMap<ScaleBucket, usize>;

/// Upper size bound used when drawing `Large` boxes.
pub const SYNTH_LARGE_MAX: f64 = 128.0;
const SYNTH_MAX_RETRIES: usize = 100;

/// Generates one image with the requested number of boxes per bucket.
///
/// Each box has an absolute size drawn uniformly from its bucket's range and
/// an aspect ratio drawn log-uniformly from `[1/2, 2]`, and is placed
/// uniformly inside the image. Boxes that do not fit are redrawn a bounded
/// number of times and then clipped to the image.
pub fn synth_scene(
    spec: &SceneSpec,
    image_w: u32,
    image_h: u32,
    seed: u64,
) -> Result<AnnotationSet> {
    if image_w == 0 || image_h == 0 {
        return Err(Error::InvalidInput("image size must be positive".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (iw, ih) = (f64::from(image_w), f64::from(image_h));
    let mut annotations = Vec::new();
    for (&bucket, &count) in spec {
        let (lo, hi) = bucket.range();
        let hi = hi.min(SYNTH_LARGE_MAX);
        for _ in 0..count {
            let mut placed = None;
            let mut last = (0.0, 0.0, 0.0, 0.0);
            for _ in 0..SYNTH_MAX_RETRIES {
                let size = rng.gen_range(lo..hi);
                let ratio = rng
                    .gen_range(-std::f64::consts::LN_2..std::f64::consts::LN_2)
                    .exp();
                let (w, h) = (size * ratio.sqrt(), size / ratio.sqrt());
                let cx = rng.gen_range(0.0..iw);
                let cy = rng.gen_range(0.0..ih);
                last = (cx, cy, w, h);
                let bbox = BBox::new(cx, cy, w, h)?;
                let (x1, y1, x2, y2) = bbox.corners();
                if x1 >= 0.0 && y1 >= 0.0 && x2 <= iw && y2 <= ih {
                    placed = Some(bbox);
                    break;
                }
            }
            let bbox = match placed {
                Some(b) => b,
                None => {
                    let (cx, cy, w, h) = last;
                    BBox::from_corners(
                        (cx - w / 2.0).max(0.0),
                        (cy - h / 2.0).max(0.0),
                        (cx + w / 2.0).min(iw),
                        (cy + h / 2.0).min(ih),
                    )?
                }
            };
            annotations.push(Annotation {
                id: annotations.len() as u64 + 1,
                image_id: 1,
                category_id: 1,
                bbox,
                iscrowd: false,
            });
        }
    }
    Ok(AnnotationSet {
        images: vec![ImageInfo {
            id: 1,
            width: image_w,
            height: image_h,
            file_name: format!("synthetic_{seed}.png"),
        }],
        annotations,
        categories: vec![Category {
            id: 1,
            name: "object".into(),
        }],
        dropped_degenerate: 0,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub enum CsvValue {
    Int(i64),
    Float(f64),
    Text(String),
}

impl From<f64> for CsvValue {
    fn from(v: f64) -> Self {
        CsvValue::Float(v)
    }
}

impl From<i64> for CsvValue {
    fn from(v: i64) -> Self {
        CsvValue::Int(v)
    }
}

impl From<u32> for CsvValue {
    fn from(v: u32) -> Self {
        CsvValue::Int(i64::from(v))
    }
}

impl From<usize> for CsvValue {
    fn from(v: usize) -> Self {
        CsvValue::Int(v as i64)
    }
}

impl From<&str> for CsvValue {
    fn from(v: &str) -> Self {
        CsvValue::Text(v.to_string())
    }
}

impl From<String> for CsvValue {
    fn from(v: String) -> Self {
        CsvValue::Text(v)
    }
}

/// Formats like C's `%.6g`.
pub fn format_sig6(x: f64) -> String {
    const PREC: i32 = 6;
    if x == 0.0 {
        return "0".into();
    }
    if !x.is_finite() {
        return if x.is_nan() {
            "nan".into()
        } else if x > 0.0 {
            "inf".into()
        } else {
            "-inf".into()
        };
    }
    let sci = format!("{:.*e}", (PREC - 1) as usize, x);
    let (mantissa, exp) = sci.split_once('e').expect("exponent present");
    let exp: i32 = exp.parse().expect("integer exponent");
    if !(-4..PREC).contains(&exp) {
        let m = trim_fraction(mantissa);
        let sign = if exp < 0 { '-' } else { '+' };
        format!("{m}e{sign}{:02}", exp.abs())
    } else {
        let decimals = (PREC - 1 - exp).max(0) as usize;
        trim_fraction(&format!("{x:.decimals$}")).to_string()
    }
}

fn trim_fraction(s: &str) -> &str {
    if s.contains('.') {
        s.trim_end_matches('0').trim_end_matches('.')
    } else {
        s
    }
}

fn csv_field(v: &CsvValue) -> String {
    match v {
        CsvValue::Int(i) => i.to_string(),
        CsvValue::Float(f) => format_sig6(*f),
        CsvValue::Text(s) => {
            if s.contains([',', '"', '\n', '\r']) {
                format!("\"{}\"", s.replace('"', "\"\""))
            } else {
                s.clone()
            }
        }
    }
}

/// Renders a header row plus data rows, LF-terminated.
pub fn to_csv(header: &[&str], rows: &[Vec<CsvValue>]) -> String {
    let mut out = String::new();
    out.push_str(&header.join(","));
    out.push('\n');
    for row in rows {
        let fields: Vec<String> = row.iter().map(csv_field).collect();
        let _ = writeln!(out, "{}", fields.join(","));
    }
    out
}

pub fn export_csv(header: &[&str], rows: &[Vec<CsvValue>], path: impl AsRef<Path>) -> Result<()> {
    write_atomic(path.as_ref(), to_csv(header, rows).as_bytes())
}

/// Writes through a temporary file in the target directory, then renames.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(|e| Error::io(path, e))?;
    tmp.write_all(bytes).map_err(|e| Error::io(path, e))?;
    tmp.persist(path).map_err(|e| Error::io(path, e.error))?;
    Ok(())
}
