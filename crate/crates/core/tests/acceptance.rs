//! Acceptance suite. Built without the libtest harness so that every
//! criterion prints exactly one PASS/FAIL line with its runtime. Pass
//! criterion numbers as arguments to run a subset.

use std::collections::BTreeMap;
use std::error::Error;
use std::f64::consts::PI;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::time::{Duration, Instant};

use nalgebra::{Matrix4, Rotation3, Vector3};
use ndarray::{Array1, Array2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use percept3d::aggregation::{aggregate, aggregation_weights, AggregationParams, Query, NUM_KEYPOINTS};
use percept3d::camera::{
    project, standardize_intrinsics, unproject, CameraModel, Intrinsics, PixelDepth, Raster, STANDARD_INTRINSICS,
};
use percept3d::eval::{metrics_report, BoxRecord, EvalConfig, MetricsReport, SceneRecord};
use percept3d::geometry::{
    box_corners, box_iou, box_to_gaussian, euler_to_rotation, reparameterize, rotation_to_euler, signed_permutations,
    Box9DoF,
};
use percept3d::gradcheck::{central_difference, relative_error};
use percept3d::harness::config::RunConfig;
use percept3d::harness::fit::{fit_boxes, FitConfig};
use percept3d::harness::pe::pe_heatmap;
use percept3d::harness::render::render_feature_maps;
use percept3d::harness::scene::gen_scenes;
use percept3d::harness::aggregate_demo;
use percept3d::losses::{
    box_loss, box_loss_body_frame, center_loss, focal_loss, l1_box_loss, permutation_corner_costs,
    permutation_corner_loss, wasserstein_loss, BoxLossKind,
};
use percept3d::matching::hungarian;

type Outcome = Result<String, Box<dyn Error>>;

struct Criterion {
    id: usize,
    name: &'static str,
    budget: Option<Duration>,
    run: fn() -> Outcome,
}

fn main() {
    let wanted: Vec<usize> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let secs = |s: u64| Some(Duration::from_secs(s));
    let criteria = [
        Criterion { id: 1, name: "loss symmetry", budget: secs(5), run: symmetry_suite },
        Criterion { id: 2, name: "gradients", budget: secs(30), run: gradient_suite },
        Criterion { id: 3, name: "iou monte carlo", budget: secs(60), run: iou_oracle },
        Criterion { id: 4, name: "hungarian exhaustive", budget: secs(10), run: hungarian_oracle },
        Criterion { id: 5, name: "evaluation oracle", budget: secs(10), run: eval_oracle },
        Criterion { id: 6, name: "camera round trip", budget: secs(5), run: camera_suite },
        Criterion { id: 7, name: "aggregation contract", budget: secs(30), run: aggregation_suite },
        Criterion { id: 8, name: "box loss fitting", budget: secs(120), run: fitting_suite },
        Criterion { id: 9, name: "position embedding", budget: secs(20), run: pe_suite },
        Criterion { id: 10, name: "determinism", budget: None, run: determinism_suite },
    ];
    let mut failed = 0;
    for c in criteria.iter().filter(|c| wanted.is_empty() || wanted.contains(&c.id)) {
        let start = Instant::now();
        let out = catch_unwind(AssertUnwindSafe(c.run));
        let elapsed = start.elapsed();
        let (ok, detail) = match out {
            Ok(Ok(d)) => match c.budget {
                Some(b) if elapsed > b => (false, format!("{d}; over the {}s budget", b.as_secs())),
                _ => (true, d),
            },
            Ok(Err(e)) => (false, e.to_string()),
            Err(_) => (false, "panicked".to_string()),
        };
        failed += !ok as usize;
        println!(
            "{} [{:>2}] {:<22} {:>7.2}s  {}",
            if ok { "PASS" } else { "FAIL" },
            c.id,
            c.name,
            elapsed.as_secs_f64(),
            detail
        );
    }
    if failed > 0 {
        println!("{failed} criteria failed");
        std::process::exit(1);
    }
}

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn random_box(rng: &mut ChaCha8Rng) -> Box9DoF {
    Box9DoF::new(
        Vector3::new(rng.random_range(-3.0..3.0), rng.random_range(-3.0..3.0), rng.random_range(0.0..3.0)),
        Vector3::new(rng.random_range(0.2..2.0), rng.random_range(0.2..2.0), rng.random_range(0.2..2.0)),
        Vector3::new(rng.random_range(-PI..PI), rng.random_range(-1.4..1.4), rng.random_range(-PI..PI)),
    )
    .unwrap()
}

/// A box in the neighbourhood of `b`, as a prediction would be.
fn nearby_box(b: &Box9DoF, spread: f64, rng: &mut ChaCha8Rng) -> Box9DoF {
    let center = b.center + Vector3::from_fn(|k, _| spread * b.size[k] * rng.random_range(-1.0..1.0));
    let size = b.size.map(|s| s * rng.random_range(1.0 - 0.5 * spread..1.0 + spread));
    let euler = b.euler + Vector3::from_fn(|_, _| spread * rng.random_range(-1.0..1.0));
    Box9DoF::new(center, size, euler).unwrap()
}

fn symmetry_suite() -> Outcome {
    let mut r = rng(1);
    let (mut wd_max, mut pcd_max, mut l1_min) = (0.0f64, 0.0f64, f64::INFINITY);
    for i in 0..200 {
        let b = random_box(&mut r);
        let mut l1_best = 0.0f64;
        for p in signed_permutations() {
            let q = reparameterize(&b, p)?;
            wd_max = wd_max.max(wasserstein_loss(&q, &b)?.value);
            pcd_max = pcd_max.max(permutation_corner_loss(&q, &b)?.value);
            if !p.is_identity() {
                l1_best = l1_best.max(l1_box_loss(&q, &b)?.value);
            }
        }
        if l1_best <= 0.05 {
            return Err(format!("box {i}: l1 stays at {l1_best:.3e} under every relabeling").into());
        }
        l1_min = l1_min.min(l1_best);
    }
    let detail = format!("max wd {wd_max:.1e}, max pcd {pcd_max:.1e}, min over boxes of max l1 {l1_min:.3}");
    if wd_max < 1e-6 && pcd_max < 1e-6 {
        Ok(detail)
    } else {
        Err(detail.into())
    }
}

const FD_STEP: f64 = 1e-5;
const GRAD_TOL: f64 = 1e-4;
/// Pairs closer than this to a switch of the active branch are ties.
const TIE_GAP: f64 = 1e-4;

fn params_box(x: &[f64]) -> Box9DoF {
    Box9DoF::from_params(&x.try_into().expect("nine parameters"))
}

fn is_tie(kind: BoxLossKind, pred: &Box9DoF, gt: &Box9DoF) -> bool {
    match kind {
        BoxLossKind::L1 => pred.params().iter().zip(gt.params()).any(|(p, g)| (p - g).abs() < TIE_GAP),
        BoxLossKind::CornerChamfer => {
            let (a, b) = (box_corners(pred).unwrap().0, box_corners(gt).unwrap().0);
            let ambiguous = |from: &[Vector3<f64>; 8], to: &[Vector3<f64>; 8]| {
                from.iter().any(|p| {
                    let mut d: Vec<f64> = to.iter().map(|q| (p - q).norm()).collect();
                    d.sort_by(f64::total_cmp);
                    d[0] < TIE_GAP || d[1] - d[0] < TIE_GAP
                })
            };
            ambiguous(&a, &b) || ambiguous(&b, &a)
        }
        BoxLossKind::PermutationCorner => {
            let costs = permutation_corner_costs(pred, gt).unwrap();
            let best = (0..48).min_by(|&i, &j| costs[i].total_cmp(&costs[j])).unwrap();
            let mut sorted = costs;
            sorted.sort_by(f64::total_cmp);
            let perm = signed_permutations()[best].corner_permutation();
            let (a, b) = (box_corners(pred).unwrap().0, box_corners(gt).unwrap().0);
            sorted[1] - sorted[0] < TIE_GAP || (0..8).any(|i| (a[i] - b[perm[i]]).norm() < TIE_GAP)
        }
        BoxLossKind::Wasserstein => {
            let (p, g) = (box_to_gaussian(pred).unwrap(), box_to_gaussian(gt).unwrap());
            (p.mean - g.mean).norm() < TIE_GAP || (p.cov - g.cov).norm() < TIE_GAP
        }
    }
}

fn gradient_suite() -> Outcome {
    let mut notes = Vec::new();
    let mut failures = Vec::new();
    for (n, kind) in BoxLossKind::ALL.into_iter().enumerate() {
        let mut r = rng(20 + n as u64);
        let (mut checked, mut skipped, mut worst, mut worst_body) = (0, 0, 0.0f64, 0.0f64);
        while checked < 1000 {
            let gt = random_box(&mut r);
            let pred = nearby_box(&gt, 0.4, &mut r);
            if is_tie(kind, &pred, &gt) {
                skipped += 1;
                continue;
            }
            checked += 1;
            let analytic = box_loss(kind, &pred, &gt)?.grad;
            let numeric = central_difference(|x| box_loss(kind, &params_box(x), &gt).unwrap().value, &pred.params(), FD_STEP);
            worst = worst.max(relative_error(&analytic, &numeric));
            if kind != BoxLossKind::L1 {
                // Rotation entries against a body-frame increment R exp([w]x).
                let body = box_loss_body_frame(kind, &pred, &gt)?.grad;
                let rot = pred.rotation()?;
                let mut x0 = pred.params();
                x0[6..].fill(0.0);
                let f = |x: &[f64]| {
                    let w = Vector3::new(x[6], x[7], x[8]);
                    let euler = rotation_to_euler(&(rot * Rotation3::new(w).into_inner()));
                    let b = Box9DoF::new(Vector3::new(x[0], x[1], x[2]), Vector3::new(x[3], x[4], x[5]), euler).unwrap();
                    box_loss(kind, &b, &gt).unwrap().value
                };
                worst_body = worst_body.max(relative_error(&body, &central_difference(f, &x0, FD_STEP)));
            }
        }
        let body = if kind == BoxLossKind::L1 { "-".to_string() } else { format!("{worst_body:.1e}") };
        notes.push(format!("{} {worst:.1e}/{body} ({skipped} ties)", kind.name()));
        if worst > GRAD_TOL || worst_body > GRAD_TOL {
            failures.push(kind.name().to_string());
        }
    }

    let mut r = rng(30);
    let mut worst = 0.0f64;
    for _ in 0..1000 {
        let gt = Vector3::from_fn(|_, _| r.random_range(-3.0..3.0));
        let p: Vec<f64> = (0..3).map(|_| r.random_range(-3.0..3.0)).collect();
        let analytic = center_loss(&Vector3::from_column_slice(&p), &gt).grad;
        let numeric = central_difference(|x| center_loss(&Vector3::from_column_slice(x), &gt).value, &p, FD_STEP);
        worst = worst.max(relative_error(&analytic, &numeric));
    }
    notes.push(format!("center {worst:.1e}"));
    if worst > GRAD_TOL {
        failures.push("center".into());
    }

    let mut worst = 0.0f64;
    for _ in 0..1000 {
        let n = r.random_range(1..=10usize);
        let logits: Vec<f64> = (0..n).map(|_| r.random_range(-6.0..6.0)).collect();
        let target = r.random_bool(0.8).then(|| r.random_range(0..n));
        let analytic = focal_loss(&logits, target)?.grad;
        let numeric = central_difference(|x| focal_loss(x, target).unwrap().value, &logits, FD_STEP);
        worst = worst.max(relative_error(&analytic, &numeric));
    }
    notes.push(format!("focal {worst:.1e}"));
    if worst > GRAD_TOL {
        failures.push("focal".into());
    }

    let detail = format!("max relative error (euler/body): {}", notes.join(", "));
    if failures.is_empty() {
        Ok(detail)
    } else {
        Err(format!("{detail}; failing: {}", failures.join(", ")).into())
    }
}

/// IoU of two boxes estimated from points drawn uniformly inside `a`.
fn monte_carlo_iou(a: &Box9DoF, b: &Box9DoF, samples: usize, seed: u64) -> f64 {
    let mut r = rng(seed);
    let (ra, rb) = (a.rotation().unwrap(), b.rotation().unwrap());
    let half = 0.5 * b.size;
    let mut inside = 0usize;
    for _ in 0..samples {
        let local = Vector3::from_fn(|k, _| a.size[k] * r.random_range(-0.5..0.5));
        let q = rb.transpose() * (ra * local + a.center - b.center);
        inside += (q.x.abs() <= half.x && q.y.abs() <= half.y && q.z.abs() <= half.z) as usize;
    }
    let inter = a.volume() * inside as f64 / samples as f64;
    inter / (a.volume() + b.volume() - inter)
}

fn iou_oracle() -> Outcome {
    let mut r = rng(3);
    let pairs: Vec<(Box9DoF, Box9DoF)> = (0..100)
        .map(|i| {
            let a = random_box(&mut r);
            let b = match i % 4 {
                0 => nearby_box(&a, 0.1, &mut r),
                1 => nearby_box(&a, 0.4, &mut r),
                2 => Box9DoF::new(a.center, a.size * 0.7, a.euler).unwrap(),
                _ => {
                    let c = a.center + Vector3::from_fn(|_, _| r.random_range(-1.0..1.0));
                    let mut b = random_box(&mut r);
                    b.center = c;
                    b
                }
            };
            (a, b)
        })
        .collect();
    let errors: Vec<(f64, f64)> = pairs
        .par_iter()
        .enumerate()
        .map(|(i, (a, b))| {
            let exact = box_iou(a, b);
            (exact, (exact - monte_carlo_iou(a, b, 1_000_000, 300 + i as u64)).abs())
        })
        .collect();
    let worst = errors.iter().map(|e| e.1).fold(0.0, f64::max);
    let overlapping = errors.iter().filter(|e| e.0 > 0.0).count();
    let detail = format!("max |exact - mc| {worst:.4} over 100 pairs ({overlapping} overlapping)");
    if worst <= 0.005 {
        Ok(detail)
    } else {
        Err(detail.into())
    }
}

fn exhaustive_min(cost: &Array2<f64>) -> f64 {
    let m = if cost.nrows() <= cost.ncols() { cost.clone() } else { cost.t().to_owned() };
    fn go(m: &Array2<f64>, row: usize, used: u32) -> f64 {
        if row == m.nrows() {
            return 0.0;
        }
        (0..m.ncols())
            .filter(|c| used & (1 << c) == 0)
            .map(|c| m[(row, c)] + go(m, row + 1, used | (1 << c)))
            .fold(f64::INFINITY, f64::min)
    }
    go(&m, 0, 0)
}

fn hungarian_oracle() -> Outcome {
    let mut r = rng(4);
    let mut worst = 0.0f64;
    for t in 0..500 {
        let (rows, cols) = (r.random_range(1..=6usize), r.random_range(1..=6usize));
        // Every third matrix has small integer entries, so optima tie.
        let cost = Array2::from_shape_fn((rows, cols), |_| {
            if t % 3 == 0 {
                r.random_range(0..4) as f64
            } else {
                r.random_range(-10.0..10.0)
            }
        });
        let a = hungarian(&cost)?;
        let mut seen_rows = vec![false; rows];
        let mut seen_cols = vec![false; cols];
        for &(i, j) in &a.pairs {
            if std::mem::replace(&mut seen_rows[i], true) || std::mem::replace(&mut seen_cols[j], true) {
                return Err(format!("matrix {t}: assignment reuses a row or column").into());
            }
        }
        if a.pairs.len() != rows.min(cols) {
            return Err(format!("matrix {t}: {} pairs for a {rows}x{cols} matrix", a.pairs.len()).into());
        }
        let gap = (a.total_cost(&cost) - exhaustive_min(&cost)).abs();
        worst = worst.max(gap);
        if gap > 1e-9 {
            return Err(format!("matrix {t}: cost differs from exhaustive optimum by {gap:.3e}").into());
        }
    }
    Ok(format!("500 matrices up to 6x6, max cost gap {worst:.1e}"))
}

/// Split name -> (mean AP, category -> (AP, gts, dets)).
type Flat = BTreeMap<String, (f64, BTreeMap<u32, (f64, usize, usize)>)>;

fn flatten(report: &MetricsReport) -> Flat {
    let mut out = Flat::new();
    let mut put = |name: String, s: &percept3d::eval::SplitReport| {
        let cats = s.categories.iter().map(|(c, a)| (*c, (a.ap, a.num_gt, a.num_det))).collect();
        out.insert(name, (s.mean_ap, cats));
    };
    put("overall".into(), &report.overall);
    for (k, s) in &report.sizes {
        put(format!("size/{k}"), s);
    }
    for (k, s) in &report.subsets {
        put(format!("subset/{k}"), s);
    }
    out
}

struct OracleScene {
    subset: Option<String>,
    gts: Vec<(Box9DoF, u32)>,
    dets: Vec<(Box9DoF, u32, f64)>,
}

fn size_name(b: &Box9DoF, cfg: &EvalConfig) -> &'static str {
    let v = b.size.x * b.size.y * b.size.z;
    if v < cfg.small_max_volume {
        "small"
    } else if v < cfg.medium_max_volume {
        "medium"
    } else {
        "large"
    }
}

/// Brute-force re-derivation of the report: one global score ranking per
/// category, greedy matching by scanning every ground truth, and AP as the
/// mean over ground truths of the best precision at or after each hit.
fn oracle_report(scenes: &[OracleScene], cfg: &EvalConfig) -> Flat {
    let split = |keep_scene: &dyn Fn(&OracleScene) -> bool, size: Option<&str>| {
        let ok = |b: &Box9DoF| size.is_none_or(|s| size_name(b, cfg) == s);
        let chosen: Vec<&OracleScene> = scenes.iter().filter(|s| keep_scene(s)).collect();
        let mut cats: Vec<u32> = chosen
            .iter()
            .flat_map(|s| {
                let g = s.gts.iter().filter(|g| ok(&g.0)).map(|g| g.1);
                g.chain(s.dets.iter().filter(|d| ok(&d.0)).map(|d| d.1)).collect::<Vec<_>>()
            })
            .collect();
        cats.sort();
        cats.dedup();
        let mut per = BTreeMap::new();
        for cat in cats {
            let mut ranked = Vec::new();
            let mut num_gt = 0;
            let mut taken = Vec::new();
            for (si, s) in chosen.iter().enumerate() {
                num_gt += s.gts.iter().filter(|g| g.1 == cat && ok(&g.0)).count();
                taken.push(vec![false; s.gts.len()]);
                for d in s.dets.iter().filter(|d| d.1 == cat && ok(&d.0)) {
                    ranked.push((d.2, si, d.0));
                }
            }
            ranked.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
            let mut hits = Vec::new();
            for (_, si, det) in &ranked {
                let mut best: Option<(usize, f64)> = None;
                for (gi, g) in chosen[*si].gts.iter().enumerate() {
                    if g.1 != cat || !ok(&g.0) || taken[*si][gi] {
                        continue;
                    }
                    let iou = box_iou(det, &g.0);
                    if iou >= cfg.iou_threshold && best.is_none_or(|b| iou > b.1) {
                        best = Some((gi, iou));
                    }
                }
                if let Some((gi, _)) = best {
                    taken[*si][gi] = true;
                }
                hits.push(best.is_some());
            }
            let precision: Vec<f64> = (0..hits.len())
                .map(|k| hits[..=k].iter().filter(|h| **h).count() as f64 / (k + 1) as f64)
                .collect();
            let ap = if num_gt == 0 {
                0.0
            } else {
                (0..hits.len())
                    .filter(|&k| hits[k])
                    .map(|k| precision[k..].iter().cloned().fold(0.0, f64::max))
                    .sum::<f64>()
                    / num_gt as f64
            };
            per.insert(cat, (ap, num_gt, ranked.len()));
        }
        let with_gt: Vec<f64> = per.values().filter(|v| v.1 > 0).map(|v| v.0).collect();
        let mean = if with_gt.is_empty() { 0.0 } else { with_gt.iter().sum::<f64>() / with_gt.len() as f64 };
        (mean, per)
    };
    let mut out = Flat::new();
    out.insert("overall".into(), split(&|_| true, None));
    for size in ["small", "medium", "large"] {
        let s = split(&|_| true, Some(size));
        if s.1.values().any(|v| v.1 > 0) {
            out.insert(format!("size/{size}"), s);
        }
    }
    let mut tags: Vec<&String> = scenes.iter().filter_map(|s| s.subset.as_ref()).collect();
    tags.sort();
    tags.dedup();
    for t in tags {
        out.insert(format!("subset/{t}"), split(&|s| s.subset.as_ref() == Some(t), None));
    }
    out
}

fn compare_flat(a: &Flat, b: &Flat) -> Result<f64, String> {
    if a.keys().ne(b.keys()) {
        return Err(format!("split names differ: {:?} vs {:?}", a.keys(), b.keys()));
    }
    let mut worst = 0.0f64;
    for (k, (ma, ca)) in a {
        let (mb, cb) = &b[k];
        worst = worst.max((ma - mb).abs());
        if ca.keys().ne(cb.keys()) {
            return Err(format!("{k}: category sets differ"));
        }
        for (c, x) in ca {
            let y = cb[c];
            if x.1 != y.1 || x.2 != y.2 {
                return Err(format!("{k}/{c}: counts {:?} vs {:?}", (x.1, x.2), (y.1, y.2)));
            }
            worst = worst.max((x.0 - y.0).abs());
        }
    }
    Ok(worst)
}

fn eval_oracle() -> Outcome {
    let mut r = rng(5);
    let mut scenes = Vec::new();
    for i in 0..50 {
        let n = r.random_range(0..=10usize);
        let gts: Vec<(Box9DoF, u32)> = (0..n)
            .map(|_| {
                let size = Vector3::from_fn(|_, _| (r.random_range(0.08f64.ln()..1.5f64.ln())).exp());
                let c = Vector3::new(r.random_range(-3.0..3.0), r.random_range(-3.0..3.0), r.random_range(0.0..2.0));
                let b = Box9DoF::new(c, size, Vector3::new(0.0, 0.0, r.random_range(-PI..PI))).unwrap();
                (b, r.random_range(0..4))
            })
            .collect();
        let mut dets = Vec::new();
        for (g, cat) in &gts {
            for _ in 0..[0, 1, 1, 1, 2][r.random_range(0..5)] {
                let cat = if r.random_bool(0.9) { *cat } else { r.random_range(0..5) };
                dets.push((nearby_box(g, 0.15, &mut r), cat, r.random_range(0.0..1.0)));
            }
        }
        for _ in 0..r.random_range(0..3) {
            dets.push((random_box(&mut r), r.random_range(0..5), r.random_range(0.0..1.0)));
        }
        scenes.push(OracleScene {
            subset: Some(["north", "south", "east"][i % 3].to_string()),
            gts,
            dets,
        });
    }
    // Detections for a scene without ground truth.
    scenes.push(OracleScene {
        subset: None,
        gts: Vec::new(),
        dets: vec![(random_box(&mut r), 1, 0.7)],
    });

    let gt_records: Vec<SceneRecord> = scenes
        .iter()
        .enumerate()
        .filter(|(_, s)| s.subset.is_some())
        .map(|(i, s)| SceneRecord {
            scene_id: format!("s{i}"),
            subset: s.subset.clone(),
            boxes: s.gts.iter().map(|(b, c)| BoxRecord::from_box(b, *c, None)).collect(),
        })
        .collect();
    let det_records: Vec<SceneRecord> = scenes
        .iter()
        .enumerate()
        .map(|(i, s)| SceneRecord {
            scene_id: format!("s{i}"),
            subset: None,
            boxes: s.dets.iter().map(|(b, c, sc)| BoxRecord::from_box(b, *c, Some(*sc))).collect(),
        })
        .collect();

    let mut worst = 0.0f64;
    let mut mean_aps = Vec::new();
    for threshold in [0.25, 0.5] {
        let cfg = EvalConfig {
            iou_threshold: threshold,
            ..EvalConfig::default()
        };
        let report = metrics_report(&det_records, &gt_records, &cfg)?;
        let expected = oracle_report(&scenes, &cfg);
        worst = worst.max(compare_flat(&flatten(&report), &expected).map_err(|e| format!("iou {threshold}: {e}"))?);
        mean_aps.push(format!("{:.3}", report.overall.mean_ap));
    }
    if worst > 1e-12 {
        return Err(format!("AP differs from the oracle by {worst:.2e}").into());
    }

    // Hand cases on a single ground-truth box.
    let gt_box = Box9DoF::axis_aligned([0.0, 0.0, 0.5], [1.0, 1.0, 1.0])?;
    let far = Box9DoF::axis_aligned([5.0, 0.0, 0.5], [1.0, 1.0, 1.0])?;
    let gt = vec![SceneRecord {
        scene_id: "a".into(),
        subset: None,
        boxes: vec![BoxRecord::from_box(&gt_box, 0, None)],
    }];
    let dets = |boxes: Vec<BoxRecord>| {
        vec![SceneRecord {
            scene_id: "a".into(),
            subset: None,
            boxes,
        }]
    };
    let tp = metrics_report(&dets(vec![BoxRecord::from_box(&gt_box, 0, Some(0.9))]), &gt, &EvalConfig::default())?;
    let fp_tp = metrics_report(
        &dets(vec![BoxRecord::from_box(&far, 0, Some(0.9)), BoxRecord::from_box(&gt_box, 0, Some(0.5))]),
        &gt,
        &EvalConfig::default(),
    )?;
    if tp.overall.mean_ap != 1.0 || fp_tp.overall.mean_ap != 0.5 {
        return Err(format!("hand cases gave {} and {}", tp.overall.mean_ap, fp_tp.overall.mean_ap).into());
    }
    Ok(format!(
        "51 scenes match the oracle (max gap {worst:.1e}, mAP {} at IoU 0.25/0.5); [TP] = 1, [FP, TP] = 0.5",
        mean_aps.join("/")
    ))
}

fn random_camera(r: &mut ChaCha8Rng) -> CameraModel {
    let k = Intrinsics::new(
        r.random_range(300.0..900.0),
        r.random_range(300.0..900.0),
        r.random_range(280.0..360.0),
        r.random_range(200.0..280.0),
    )
    .unwrap();
    let pos = Vector3::new(r.random_range(-5.0..5.0), r.random_range(-5.0..5.0), r.random_range(0.5..3.0));
    let target = Vector3::new(r.random_range(-1.0..1.0), r.random_range(-1.0..1.0), r.random_range(0.0..1.5));
    CameraModel::look_at(k, pos, target, Vector3::z(), 640, 480).unwrap()
}

fn camera_suite() -> Outcome {
    let mut r = rng(6);
    let mut worst = 0.0f64;
    for _ in 0..1000 {
        let cam = random_camera(&mut r);
        let pd = PixelDepth {
            u: r.random_range(0.0..640.0),
            v: r.random_range(0.0..480.0),
            depth: r.random_range(0.3..20.0),
        };
        let w = unproject(&cam, &pd)?;
        let back = project(&cam, &w)?;
        worst = worst.max((back.u - pd.u).abs()).max((back.v - pd.v).abs()).max((back.depth - pd.depth).abs());
        worst = worst.max((unproject(&cam, &back)? - w).norm());
    }
    if worst > 1e-7 {
        return Err(format!("round trip error {worst:.2e}").into());
    }

    // A ramp image stores each pixel's own coordinates, so sampling the
    // warped image reveals which source position the warp read there.
    let ramp = Raster::from_fn(640, 480, 2, |x, y, c| if c == 0 { x as f32 } else { y as f32 });
    let target = Intrinsics::from_array(STANDARD_INTRINSICS)?;
    let (mut checked, mut px_worst) = (0, 0.0f64);
    let mut sample = [0.0f32; 2];
    while checked < 1000 {
        let cam = random_camera(&mut r);
        let (warped, std_cam) = standardize_intrinsics(&ramp, &cam, &target)?;
        if std_cam.intrinsics.to_array() != STANDARD_INTRINSICS || std_cam.extrinsics != cam.extrinsics {
            return Err("standardized camera does not carry the target intrinsics".into());
        }
        for _ in 0..100 {
            let pd = PixelDepth {
                u: r.random_range(3.0..637.0),
                v: r.random_range(3.0..477.0),
                depth: r.random_range(0.5..15.0),
            };
            let q = project(&std_cam, &unproject(&cam, &pd)?)?;
            if !warped.sample_bilinear(q.u, q.v, &mut sample) {
                continue;
            }
            let err = ((sample[0] as f64 - pd.u).powi(2) + (sample[1] as f64 - pd.v).powi(2)).sqrt();
            px_worst = px_worst.max(err);
            checked += 1;
        }
    }
    if px_worst > 0.5 {
        return Err(format!("standardized projection off by {px_worst:.3} px").into());
    }
    if STANDARD_INTRINSICS != [432.579, 539.857, 256.0, 256.0] || RunConfig::default().intrinsics != STANDARD_INTRINSICS {
        return Err(format!("default intrinsics are {STANDARD_INTRINSICS:?}").into());
    }
    Ok(format!(
        "round trip {worst:.1e}; standardized projection {px_worst:.1e} px over {checked} points; intrinsics {STANDARD_INTRINSICS:?}"
    ))
}

fn rigid(r: &mut ChaCha8Rng) -> (Matrix4<f64>, nalgebra::Matrix3<f64>, Vector3<f64>) {
    let rot = euler_to_rotation(&Vector3::from_fn(|_, _| r.random_range(-PI..PI))).unwrap();
    let trans = Vector3::from_fn(|_, _| r.random_range(-5.0..5.0));
    let mut g = Matrix4::identity();
    g.fixed_view_mut::<3, 3>(0, 0).copy_from(&rot);
    g.fixed_view_mut::<3, 1>(0, 3).copy_from(&trans);
    (g, rot, trans)
}

fn aggregation_suite() -> Outcome {
    let cfg = RunConfig::default();
    let scenes = gen_scenes(&cfg, 7, 50)?;
    let rendered: Vec<_> = scenes.par_iter().map(|s| render_feature_maps(s, &cfg)).collect::<Result<_, _>>()?;
    let channels = cfg.scene.signature_dims;
    let mut r = rng(7);

    // Masked softmax over random validity masks.
    let mut sum_err = 0.0f64;
    for t in 0..2000 {
        let cams = scenes[t % 50].cameras()?;
        let n = cams.len();
        let p = AggregationParams::seeded(channels, n, cfg.max_depth, t as u64);
        let density = [0.0, 0.1, 0.5, 1.0][t % 4];
        let valid = Array2::from_shape_fn((NUM_KEYPOINTS, n), |_| r.random_bool(density));
        let q = Query {
            feature: Array1::from_shape_fn(channels, |_| r.random_range(-1.0..1.0)),
            anchor: random_box(&mut r),
        };
        let w = aggregation_weights(&q, &cams, &valid, &p.weight_head)?;
        let masked_out = w.weights.iter().zip(valid.iter()).any(|(x, ok)| !ok && *x != 0.0);
        if masked_out {
            return Err(format!("trial {t}: an invalid sample has nonzero weight").into());
        }
        if valid.iter().any(|v| *v) {
            sum_err = sum_err.max((w.weights.sum() - 1.0).abs());
        } else if !w.all_invalid {
            return Err(format!("trial {t}: empty mask not flagged").into());
        }
    }
    if sum_err > 1e-12 {
        return Err(format!("weights sum to one only within {sum_err:.1e}").into());
    }

    // Rigid motion of boxes and cameras, with zero heads and with a weight
    // head that reads only the query feature.
    let mut eq_err = 0.0f64;
    for (i, (s, rs)) in scenes.iter().zip(&rendered).enumerate() {
        let cams = s.cameras()?;
        let mut feature_only = AggregationParams::seeded(channels, cams.len(), cfg.max_depth, i as u64);
        feature_only.weight_head.weight.columns_mut().into_iter().skip(channels).for_each(|mut c| c.fill(0.0));
        let queries: Vec<Query> = s
            .gt_boxes()?
            .into_iter()
            .map(|b| Query {
                feature: Array1::from_shape_fn(channels, |_| r.random_range(-1.0..1.0)),
                anchor: nearby_box(&b, 0.1, &mut r),
            })
            .collect();
        let (g, rot, trans) = rigid(&mut r);
        let moved_cams = cams.iter().map(|c| c.transformed(&g)).collect::<Result<Vec<_>, _>>()?;
        let moved: Vec<Query> = queries
            .iter()
            .map(|q| Query {
                feature: q.feature.clone(),
                anchor: q.anchor.transformed(&rot, &trans).unwrap(),
            })
            .collect();
        for p in [AggregationParams::zeros(channels, cams.len(), cfg.max_depth), feature_only] {
            let before = aggregate(&queries, &rs.features, &cams, &p)?;
            let after = aggregate(&moved, &rs.features, &moved_cams, &p)?;
            for (a, b) in before.iter().zip(&after) {
                for (x, y) in a.feature.iter().zip(&b.feature) {
                    eq_err = eq_err.max((x - y).abs());
                }
                for (x, y) in a.weights.weights.iter().zip(&b.weights.weights) {
                    eq_err = eq_err.max((x - y).abs());
                }
            }
        }
    }
    if eq_err > 1e-6 {
        return Err(format!("rigid motion changes the update by {eq_err:.2e}").into());
    }

    // Oracle signatures come back out of the rendered views.
    let mut total = 0;
    let mut wrong = Vec::new();
    let mut margin = f64::INFINITY;
    for (s, rs) in scenes.iter().zip(&rendered) {
        for rec in aggregate_demo(s, rs, &cfg)? {
            total += 1;
            if rec.top1 != Some(rec.index) {
                wrong.push(format!("{}#{}", s.scene_id, rec.index));
            }
            margin = margin.min(rec.own_cosine - rec.best_other_cosine);
        }
    }
    if !wrong.is_empty() {
        return Err(format!("top-1 recovery {}/{total}; missed {}", total - wrong.len(), wrong.join(" ")).into());
    }
    Ok(format!(
        "weight sums within {sum_err:.1e}, rigid motion {eq_err:.1e}, top-1 recovery {total}/{total} (min cosine margin {margin:.2})"
    ))
}

fn fitting_suite() -> Outcome {
    let cfg = RunConfig::default();
    let gts: Vec<Box9DoF> = gen_scenes(&cfg, 8, 40)?
        .iter()
        .flat_map(|s| s.gt_boxes().unwrap())
        .take(100)
        .collect();
    if gts.len() < 100 {
        return Err(format!("only {} boxes generated", gts.len()).into());
    }
    // Every run starts from a jittered box relabeled by a random symmetry.
    let fit = FitConfig {
        symmetry_probability: 1.0,
        ..cfg.fit
    };
    let rate = |kind: BoxLossKind| -> Result<usize, Box<dyn Error>> {
        let traces = fit_boxes(&gts, kind, &fit, 8)?;
        Ok(traces.iter().zip(&gts).filter(|(t, g)| box_iou(&t.final_box(), g) >= 0.9).count())
    };
    let (wd, pcd, l1) = (rate(BoxLossKind::Wasserstein)?, rate(BoxLossKind::PermutationCorner)?, rate(BoxLossKind::L1)?);
    let detail = format!("IoU >= 0.9 in wd {wd}/100, pcd {pcd}/100, l1 {l1}/100");
    if wd >= 95 && pcd >= 95 && l1 < 50 {
        Ok(detail)
    } else {
        Err(detail.into())
    }
}

fn pe_suite() -> Outcome {
    let cfg = RunConfig::default();
    let scenes = gen_scenes(&cfg, 9, 20)?;
    let rhos: Vec<f64> = scenes
        .par_iter()
        .map(|s| {
            let rendered = render_feature_maps(s, &cfg)?;
            Ok(pe_heatmap(s, &rendered, 0, None, &cfg)?.spearman)
        })
        .collect::<Result<_, percept3d::Error>>()?;
    let worst = rhos.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mean = rhos.iter().sum::<f64>() / rhos.len() as f64;
    let detail = format!("spearman mean {mean:.3}, largest {worst:.3} over 20 scenes");
    if rhos.iter().all(|r| *r < 0.0) {
        Ok(detail)
    } else {
        Err(detail.into())
    }
}

fn cli(args: &[&str]) -> Result<(), Box<dyn Error>> {
    let mut v = vec!["percept3d".to_string()];
    v.extend(args.iter().map(|s| s.to_string()));
    match percept3d::cli::run(&v) {
        0 => Ok(()),
        code => Err(format!("`{}` exited with {code}", args.join(" ")).into()),
    }
}

fn dir_contents(dir: &Path) -> Result<BTreeMap<String, Vec<u8>>, Box<dyn Error>> {
    let mut out = BTreeMap::new();
    for e in std::fs::read_dir(dir)? {
        let e = e?;
        if e.file_type()?.is_dir() {
            continue;
        }
        out.insert(e.file_name().to_string_lossy().into_owned(), std::fs::read(e.path())?);
    }
    Ok(out)
}

/// Runs the three commands into `dir`, the second time on a single thread
/// so any dependence on scheduling would show.
fn determinism_run(dir: &Path) -> Result<(), Box<dyn Error>> {
    let p = |name: &str| dir.join(name).to_string_lossy().into_owned();
    cli(&["gen-scene", "--seed", "11", "--count", "6", "--out", &p("scenes.jsonl"), "--gt", &p("gt.jsonl")])?;
    cli(&["fit", "--loss", "wd", "--seed", "11", "--out-dir", &p("fit")])?;
    cli(&["fit", "--loss", "pcd", "--scene", &p("scenes.jsonl"), "--index", "2", "--out-dir", &p("fit_scene")])?;
    // Detections: the ground truth with a few boxes moved and scored.
    let mut r = rng(10);
    let gts = percept3d::eval::read_scenes(dir.join("gt.jsonl"))?;
    let dets: Vec<SceneRecord> = gts
        .iter()
        .map(|s| SceneRecord {
            scene_id: s.scene_id.clone(),
            subset: None,
            boxes: s
                .boxes
                .iter()
                .map(|b| {
                    let moved = nearby_box(&b.to_box().unwrap(), 0.2, &mut r);
                    BoxRecord::from_box(&moved, b.category, Some(r.random_range(0.0..1.0)))
                })
                .collect(),
        })
        .collect();
    percept3d::eval::write_scenes(dir.join("dets.jsonl"), &dets)?;
    cli(&["eval", "--dets", &p("dets.jsonl"), "--gt", &p("gt.jsonl"), "--nms", "--out", &p("metrics.csv")])?;
    Ok(())
}

fn determinism_suite() -> Outcome {
    let root = tempfile::tempdir()?;
    let (a, b) = (root.path().join("a"), root.path().join("b"));
    std::fs::create_dir_all(&a)?;
    std::fs::create_dir_all(&b)?;
    determinism_run(&a)?;
    let single = rayon::ThreadPoolBuilder::new().num_threads(1).build()?;
    single.install(|| determinism_run(&b).map_err(|e| e.to_string()))?;
    let mut compared = 0;
    for sub in ["", "fit", "fit_scene"] {
        let (x, y) = (dir_contents(&a.join(sub))?, dir_contents(&b.join(sub))?);
        let files = |m: &BTreeMap<String, Vec<u8>>| m.keys().cloned().collect::<Vec<_>>();
        if files(&x) != files(&y) {
            return Err(format!("file sets differ in {sub:?}").into());
        }
        for (name, bytes) in &x {
            if *bytes != y[name] {
                return Err(format!("{sub}/{name} differs between runs").into());
            }
            compared += 1;
        }
    }
    Ok(format!("{compared} output files byte-identical across runs (multi- and single-threaded)"))
}
