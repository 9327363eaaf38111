//! Shared fixtures and independent oracles for the integration tests.
#![allow(dead_code)]

use std::collections::BTreeMap;
use std::path::PathBuf;

use nwdkit::data_io::{synth_scene, Annotation, AnnotationSet, Category, ImageInfo, SceneSpec};
use nwdkit::{AnchorConfig, BBox, Detection, ScaleBucket};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn fixture(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR"))
        .join("tests/fixtures")
        .join(name)
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_box(rng: &mut impl Rng, extent: f64, min_side: f64, max_side: f64) -> BBox<f64> {
    BBox::new(
        rng.gen_range(0.0..extent),
        rng.gen_range(0.0..extent),
        rng.gen_range(min_side..max_side),
        rng.gen_range(min_side..max_side),
    )
    .unwrap()
}

/// A random image with 1..=10 gts of 2..64 px and a two-level anchor grid.
pub fn random_scene(seed: u64) -> (Vec<BBox<f64>>, Vec<BBox<f64>>) {
    let mut r = rng(seed);
    let side: f64 = r.gen_range(64.0..160.0);
    let n_gts = r.gen_range(1..=10);
    let gts = (0..n_gts)
        .map(|_| random_box(&mut r, side, 2.0, 64.0))
        .collect();
    let cfg = AnchorConfig {
        strides: vec![8.0, 16.0],
        anchor_scale: 4.0,
        ratios: vec![0.5, 1.0, 2.0],
        clip_border: false,
    };
    let anchors = nwdkit::generate_anchors(&cfg, side, side).unwrap();
    (gts, anchors)
}

/// Equal numbers of very-tiny, tiny, small and medium gts on one 512x512 image.
pub fn canonical_mixed_scene() -> Vec<BBox<f64>> {
    let spec: SceneSpec = [
        (ScaleBucket::VeryTiny, 25),
        (ScaleBucket::Tiny, 25),
        (ScaleBucket::Small, 25),
        (ScaleBucket::Medium, 25),
    ]
    .into_iter()
    .collect();
    synth_scene(&spec, 512, 512, 2022)
        .unwrap()
        .annotations
        .iter()
        .map(|a| a.bbox)
        .collect()
}

pub fn stride8_scale8_anchors(image: f64) -> Vec<BBox<f64>> {
    let cfg = AnchorConfig {
        strides: vec![8.0],
        anchor_scale: 8.0,
        ratios: vec![0.5, 1.0, 2.0],
        clip_border: false,
    };
    nwdkit::generate_anchors(&cfg, image, image).unwrap()
}

/// W2^2 between N(m1, S1) and N(m2, S2) from the general Bures form
/// `|m1 - m2|^2 + tr(S1 + S2 - 2 (S2^1/2 S1 S2^1/2)^1/2)`, with every square
/// root taken as an explicit 2x2 symmetric PSD matrix square root.
pub fn wasserstein_sq_oracle(
    m1: [f64; 2],
    s1: [[f64; 2]; 2],
    m2: [f64; 2],
    s2: [[f64; 2]; 2],
) -> f64 {
    let dm = (m1[0] - m2[0]).powi(2) + (m1[1] - m2[1]).powi(2);
    let r2 = sqrtm2(s2);
    let inner = matmul(matmul(r2, s1), r2);
    let cross = sqrtm2(inner);
    let tr = |m: [[f64; 2]; 2]| m[0][0] + m[1][1];
    dm + tr(s1) + tr(s2) - 2.0 * tr(cross)
}

/// Same quantity from the Frobenius form `|m1 - m2|^2 + |S1^1/2 - S2^1/2|_F^2`.
pub fn wasserstein_sq_frobenius(
    m1: [f64; 2],
    s1: [[f64; 2]; 2],
    m2: [f64; 2],
    s2: [[f64; 2]; 2],
) -> f64 {
    let dm = (m1[0] - m2[0]).powi(2) + (m1[1] - m2[1]).powi(2);
    let (a, b) = (sqrtm2(s1), sqrtm2(s2));
    let mut f = 0.0;
    for i in 0..2 {
        for j in 0..2 {
            f += (a[i][j] - b[i][j]).powi(2);
        }
    }
    dm + f
}

fn matmul(a: [[f64; 2]; 2], b: [[f64; 2]; 2]) -> [[f64; 2]; 2] {
    let mut c = [[0.0; 2]; 2];
    for i in 0..2 {
        for j in 0..2 {
            c[i][j] = a[i][0] * b[0][j] + a[i][1] * b[1][j];
        }
    }
    c
}

/// Principal square root of a symmetric PSD 2x2 matrix:
/// `(M + sqrt(det M) I) / sqrt(tr M + 2 sqrt(det M))`.
fn sqrtm2(m: [[f64; 2]; 2]) -> [[f64; 2]; 2] {
    let det = (m[0][0] * m[1][1] - m[0][1] * m[1][0]).max(0.0);
    let s = det.sqrt();
    let t = (m[0][0] + m[1][1] + 2.0 * s).sqrt();
    [
        [(m[0][0] + s) / t, m[0][1] / t],
        [m[1][0] / t, (m[1][1] + s) / t],
    ]
}

/// Inclusion-exclusion IoU straight from the corner coordinates.
pub fn iou_oracle(a: &BBox<f64>, b: &BBox<f64>) -> f64 {
    let (ax1, ay1, ax2, ay2) = a.corners();
    let (bx1, by1, bx2, by2) = b.corners();
    let w = (ax2.min(bx2) - ax1.max(bx1)).max(0.0);
    let h = (ay2.min(by2) - ay1.max(by1)).max(0.0);
    let inter = w * h;
    inter / ((ax2 - ax1) * (ay2 - ay1) + (bx2 - bx1) * (by2 - by1) - inter)
}

/// Textbook max-IoU labels by exhaustive enumeration: `Some(gt)`, `None` for
/// negative, and `Some(usize::MAX)` for ignore.
pub fn threshold_oracle(
    gts: &[BBox<f64>],
    anchors: &[BBox<f64>],
    theta_p: f64,
    theta_n: f64,
    min_pos: f64,
) -> Vec<Option<usize>> {
    let mut labels = vec![None; anchors.len()];
    if gts.is_empty() {
        return labels;
    }
    for (j, a) in anchors.iter().enumerate() {
        let mut best = f64::NEG_INFINITY;
        let mut best_i = 0;
        for (i, g) in gts.iter().enumerate() {
            let v = iou_oracle(g, a);
            if v > best {
                best = v;
                best_i = i;
            }
        }
        labels[j] = if best >= theta_p {
            Some(best_i)
        } else if best < theta_n {
            None
        } else {
            Some(usize::MAX)
        };
    }
    for (i, g) in gts.iter().enumerate() {
        let mut best = f64::NEG_INFINITY;
        let mut best_j = None;
        for (j, a) in anchors.iter().enumerate() {
            let v = iou_oracle(g, a);
            if v > best {
                best = v;
                best_j = Some(j);
            }
        }
        if let Some(j) = best_j {
            if best >= min_pos {
                labels[j] = Some(i);
            }
        }
    }
    labels
}

/// Result of the brute-force evaluation oracle for one stratum.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OracleStratum {
    pub ap: Option<f64>,
    pub ar: Option<f64>,
    pub ap_at: [Option<f64>; 10],
}

fn overlap_oracle(det: &BBox<f64>, gt: &Annotation) -> f64 {
    if gt.iscrowd {
        let (ax1, ay1, ax2, ay2) = det.corners();
        let (bx1, by1, bx2, by2) = gt.bbox.corners();
        let w = (ax2.min(bx2) - ax1.max(bx1)).max(0.0);
        let h = (ay2.min(by2) - ay1.max(by1)).max(0.0);
        w * h / ((ax2 - ax1) * (ay2 - ay1))
    } else {
        iou_oracle(det, &gt.bbox)
    }
}

/// Evaluates one size stratum `[lo, hi)` by enumerating the precision/recall
/// pairs at every rank and taking, for each recall level r/100, the best
/// precision reached at recall >= r/100.
pub fn eval_oracle(
    dets: &[Detection],
    gt: &AnnotationSet,
    lo: f64,
    hi: f64,
    max_det: usize,
) -> OracleStratum {
    let in_range = |b: &BBox<f64>| {
        let s = (b.w() * b.h()).sqrt();
        s >= lo && s < hi
    };
    let mut cats: Vec<u64> = gt.categories.iter().map(|c| c.id).collect();
    cats.sort_unstable();
    let mut images: Vec<u64> = gt.images.iter().map(|i| i.id).collect();
    images.sort_unstable();

    // per category: per threshold (ap, recall), None when no counted gts
    let mut per_cat: Vec<Vec<(f64, f64)>> = Vec::new();
    for &c in &cats {
        let counted = gt
            .annotations
            .iter()
            .filter(|a| a.category_id == c && !a.iscrowd && in_range(&a.bbox))
            .count();
        if counted == 0 {
            continue;
        }
        let mut per_thr = Vec::new();
        for ti in 0..10 {
            let thr = (50 + 5 * ti) as f64 / 100.0;
            // (score, image position, rank in image, is_tp)
            let mut outcomes: Vec<(f64, usize, usize, bool)> = Vec::new();
            for (ip, &img) in images.iter().enumerate() {
                let g: Vec<&Annotation> = gt
                    .annotations
                    .iter()
                    .filter(|a| a.image_id == img && a.category_id == c)
                    .collect();
                let mut d: Vec<&Detection> = dets
                    .iter()
                    .filter(|x| x.image_id == img && x.category_id == c)
                    .collect();
                d.sort_by(|a, b| b.score.partial_cmp(&a.score).unwrap());
                d.truncate(max_det);
                let counted_gt = |a: &Annotation| !a.iscrowd && in_range(&a.bbox);
                let mut taken = vec![false; g.len()];
                for (rank, det) in d.iter().enumerate() {
                    let pick = |want_counted: bool, taken: &Vec<bool>| {
                        let mut best: Option<(usize, f64)> = None;
                        for (gi, a) in g.iter().enumerate() {
                            if counted_gt(a) != want_counted || (taken[gi] && !a.iscrowd) {
                                continue;
                            }
                            let o = overlap_oracle(&det.bbox, a);
                            if o >= thr.min(1.0 - 1e-10) && best.is_none_or(|(_, bo)| o >= bo) {
                                best = Some((gi, o));
                            }
                        }
                        best.map(|(gi, _)| gi)
                    };
                    if let Some(gi) = pick(true, &taken) {
                        taken[gi] = true;
                        outcomes.push((det.score, ip, rank, true));
                    } else if let Some(gi) = pick(false, &taken) {
                        taken[gi] = true;
                    } else if in_range(&det.bbox) {
                        outcomes.push((det.score, ip, rank, false));
                    }
                }
            }
            outcomes.sort_by(|a, b| {
                b.0.partial_cmp(&a.0)
                    .unwrap()
                    .then(a.1.cmp(&b.1))
                    .then(a.2.cmp(&b.2))
            });
            let mut pr = Vec::new();
            let mut tp = 0usize;
            for (i, o) in outcomes.iter().enumerate() {
                tp += usize::from(o.3);
                pr.push((tp as f64 / (i + 1) as f64, tp as f64 / counted as f64));
            }
            let mut ap = 0.0;
            for r in 0..=100 {
                let level = r as f64 / 100.0;
                let best = pr
                    .iter()
                    .filter(|(_, rc)| *rc >= level)
                    .map(|(p, _)| *p)
                    .fold(0.0, f64::max);
                ap += best;
            }
            per_thr.push((ap / 101.0, tp as f64 / counted as f64));
        }
        per_cat.push(per_thr);
    }

    if per_cat.is_empty() {
        return OracleStratum {
            ap: None,
            ar: None,
            ap_at: [None; 10],
        };
    }
    let n = per_cat.len() as f64;
    let mut ap_at = [None; 10];
    for (ti, slot) in ap_at.iter_mut().enumerate() {
        *slot = Some(per_cat.iter().map(|v| v[ti].0).sum::<f64>() / n);
    }
    let ap = per_cat
        .iter()
        .flat_map(|v| v.iter().map(|x| x.0))
        .sum::<f64>()
        / (n * 10.0);
    let ar = per_cat
        .iter()
        .flat_map(|v| v.iter().map(|x| x.1))
        .sum::<f64>()
        / (n * 10.0);
    OracleStratum {
        ap: Some(ap),
        ar: Some(ar),
        ap_at,
    }
}

/// A random dataset of up to 10 images, 2 categories and up to 50 detections
/// scattered around (and away from) the gts.
pub fn random_eval_fixture(seed: u64) -> (AnnotationSet, Vec<Detection>) {
    let mut r = rng(seed);
    let n_images = r.gen_range(1..=10);
    let mut annotations = Vec::new();
    let mut dets = Vec::new();
    for img in 1..=n_images as u64 {
        for _ in 0..r.gen_range(0..6) {
            let b = random_box(&mut r, 200.0, 2.0, 70.0);
            annotations.push(Annotation {
                id: annotations.len() as u64 + 1,
                image_id: img,
                category_id: r.gen_range(1..=2),
                bbox: b,
                iscrowd: r.gen_bool(0.05),
            });
        }
    }
    let n_dets = r.gen_range(0..=50);
    for _ in 0..n_dets {
        let (image_id, category_id, bbox) = if !annotations.is_empty() && r.gen_bool(0.7) {
            let a = &annotations[r.gen_range(0..annotations.len())];
            let jitter = |r: &mut ChaCha8Rng, v: f64| v * r.gen_range(0.7..1.3);
            let b = BBox::new(
                a.bbox.cx() + r.gen_range(-3.0..3.0),
                a.bbox.cy() + r.gen_range(-3.0..3.0),
                jitter(&mut r, a.bbox.w()),
                jitter(&mut r, a.bbox.h()),
            )
            .unwrap();
            let cat = if r.gen_bool(0.9) {
                a.category_id
            } else {
                3 - a.category_id
            };
            (a.image_id, cat, b)
        } else {
            (
                r.gen_range(1..=n_images as u64),
                r.gen_range(1..=2),
                random_box(&mut r, 200.0, 2.0, 70.0),
            )
        };
        dets.push(Detection {
            image_id,
            category_id,
            bbox,
            score: r.gen_range(0.0..1.0),
        });
    }
    let set = AnnotationSet {
        images: (1..=n_images as u64)
            .map(|id| ImageInfo {
                id,
                width: 200,
                height: 200,
                file_name: String::new(),
            })
            .collect(),
        annotations,
        categories: vec![
            Category {
                id: 1,
                name: "a".into(),
            },
            Category {
                id: 2,
                name: "b".into(),
            },
        ],
        dropped_degenerate: 0,
    };
    (set, dets)
}

pub fn bucket_means(
    stats: &BTreeMap<ScaleBucket, nwdkit::diagnostics::BucketStat>,
) -> BTreeMap<ScaleBucket, f64> {
    stats.iter().map(|(&b, s)| (b, s.mean_positives)).collect()
}
