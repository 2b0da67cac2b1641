//! Command-line front end. [`run`] maps usage errors to exit code 2 and
//! runtime failures to exit code 1.

use std::io::{BufRead, BufReader};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use log::info;

use crate::camera::{standardize_intrinsics, CameraJson, CameraModel, Intrinsics, Raster};
use crate::error::{invalid, Error, Result};
use crate::harness::config::RunConfig;
use crate::harness::pe::{heatmap_csv, pe_heatmap};
use crate::harness::plot::{line_chart, Series};
use crate::harness::render::render_feature_maps;
use crate::harness::scene::{gen_scenes, SceneSample};
use crate::harness::{aggregate_demo, fit_scene, fit_summary_csv, recovery_csv, run_eval, trace_csv};
use crate::losses::BoxLossKind;

#[derive(Debug, Parser)]
#[command(name = "percept3d", version, about = "Multi-view 3D detection math on synthetic scenes")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate synthetic scenes as JSON lines.
    GenScene(GenSceneArgs),
    /// Render oracle feature and depth maps of one scene.
    Render(RenderArgs),
    /// Warp an image to the standard virtual camera.
    Standardize(StandardizeArgs),
    /// Fit boxes to a scene's ground truth by gradient descent.
    Fit(FitArgs),
    /// Evaluate detections against ground truth.
    Eval(EvalArgs),
    /// Image position embedding similarity map of one view.
    PeHeatmap(PeHeatmapArgs),
    /// Aggregate oracle features into ground-truth boxes.
    AggregateDemo(AggregateArgs),
}

#[derive(Debug, Args)]
struct ConfigArg {
    /// JSON run configuration; missing fields take their defaults.
    #[arg(long)]
    config: Option<PathBuf>,
}

impl ConfigArg {
    fn load(&self) -> Result<RunConfig> {
        match &self.config {
            Some(p) => RunConfig::load(p),
            None => Ok(RunConfig::default()),
        }
    }
}

#[derive(Debug, Args)]
struct SceneArg {
    /// Scene file written by `gen-scene`.
    #[arg(long)]
    scene: PathBuf,
    /// Line of the scene file to use.
    #[arg(long, default_value_t = 0)]
    index: usize,
}

impl SceneArg {
    fn load(&self) -> Result<SceneSample> {
        let f = BufReader::new(std::fs::File::open(&self.scene)?);
        let mut seen = 0;
        for (i, line) in f.lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            if seen == self.index {
                return serde_json::from_str(&line).map_err(|e| Error::Parse {
                    line: i + 1,
                    message: e.to_string(),
                });
            }
            seen += 1;
        }
        Err(invalid(format!("scene file has {seen} scenes, index {} requested", self.index)))
    }
}

#[derive(Debug, Args)]
struct GenSceneArgs {
    #[command(flatten)]
    config: ConfigArg,
    /// Root seed; overrides the config.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, default_value_t = 1)]
    count: usize,
    #[arg(long)]
    out: PathBuf,
    /// Also write the ground truth in evaluation format.
    #[arg(long)]
    gt: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct RenderArgs {
    #[command(flatten)]
    config: ConfigArg,
    #[command(flatten)]
    scene: SceneArg,
    #[arg(long)]
    out_dir: PathBuf,
}

#[derive(Debug, Args)]
struct StandardizeArgs {
    /// Input PPM or PGM image.
    #[arg(long = "in")]
    input: PathBuf,
    /// Camera JSON of the input image.
    #[arg(long)]
    cam: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    cam_out: PathBuf,
    /// Target intrinsics `fu,fv,cu,cv`; defaults to the standard camera.
    #[arg(long, value_delimiter = ',', num_args = 4)]
    intrinsics: Option<Vec<f64>>,
}

#[derive(Debug, Args)]
struct FitArgs {
    #[command(flatten)]
    config: ConfigArg,
    /// One of l1, ccd, pcd, wd.
    #[arg(long)]
    loss: BoxLossKind,
    /// Seed of the generated scene and the perturbations; overrides the
    /// config.
    #[arg(long)]
    seed: Option<u64>,
    /// Fit the boxes of this scene file instead of a generated scene.
    #[arg(long)]
    scene: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    index: usize,
    #[arg(long)]
    out_dir: PathBuf,
}

#[derive(Debug, Args)]
struct EvalArgs {
    #[command(flatten)]
    config: ConfigArg,
    #[arg(long)]
    dets: PathBuf,
    #[arg(long)]
    gt: PathBuf,
    /// IoU threshold; overrides the config.
    #[arg(long)]
    iou: Option<f64>,
    /// Apply per-category NMS to the detections, at the config threshold
    /// unless given.
    #[arg(long, num_args = 0..=1)]
    nms: Option<Option<f64>>,
    /// CSV destination; stdout when absent.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct PeHeatmapArgs {
    #[command(flatten)]
    config: ConfigArg,
    #[command(flatten)]
    scene: SceneArg,
    #[arg(long, default_value_t = 0)]
    view: usize,
    /// Reference cell; defaults to the image center.
    #[arg(long, requires = "ref_col")]
    ref_row: Option<usize>,
    #[arg(long, requires = "ref_row")]
    ref_col: Option<usize>,
    #[arg(long)]
    out_dir: PathBuf,
}

#[derive(Debug, Args)]
struct AggregateArgs {
    #[command(flatten)]
    config: ConfigArg,
    #[command(flatten)]
    scene: SceneArg,
    /// CSV destination; stdout when absent.
    #[arg(long)]
    out: Option<PathBuf>,
}

/// Parses `args` (program name first) and runs the subcommand.
pub fn run(args: &[String]) -> i32 {
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    match dispatch(cli.command) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            1
        }
    }
}

fn dispatch(cmd: Command) -> Result<()> {
    match cmd {
        Command::GenScene(a) => gen_scene_cmd(a),
        Command::Render(a) => render_cmd(a),
        Command::Standardize(a) => standardize_cmd(a),
        Command::Fit(a) => fit_cmd(a),
        Command::Eval(a) => eval_cmd(a),
        Command::PeHeatmap(a) => pe_heatmap_cmd(a),
        Command::AggregateDemo(a) => aggregate_cmd(a),
    }
}

fn write_json_lines<T: serde::Serialize>(path: &Path, items: &[T]) -> Result<()> {
    let mut out = String::new();
    for item in items {
        out.push_str(&serde_json::to_string(item)?);
        out.push('\n');
    }
    std::fs::write(path, out)?;
    Ok(())
}

fn write_or_print(path: Option<&Path>, text: &str) -> Result<()> {
    match path {
        Some(p) => std::fs::write(p, text)?,
        None => print!("{text}"),
    }
    Ok(())
}

fn gen_scene_cmd(a: GenSceneArgs) -> Result<()> {
    let cfg = a.config.load()?;
    if a.count == 0 {
        return Err(invalid("count must be positive"));
    }
    let scenes = gen_scenes(&cfg, a.seed.unwrap_or(cfg.seed), a.count)?;
    write_json_lines(&a.out, &scenes)?;
    if let Some(gt) = &a.gt {
        let records: Vec<_> = scenes.iter().map(SceneSample::to_record).collect();
        write_json_lines(gt, &records)?;
    }
    info!("wrote {} scenes to {}", scenes.len(), a.out.display());
    Ok(())
}

fn render_cmd(a: RenderArgs) -> Result<()> {
    let cfg = a.config.load()?;
    let scene = a.scene.load()?;
    let r = render_feature_maps(&scene, &cfg)?;
    std::fs::create_dir_all(&a.out_dir)?;
    for (view, (feat, depth)) in r.features.iter().zip(&r.depths).enumerate() {
        let (h, w, c) = feat.data.dim();
        let img = Raster::from_fn(w, h, 3, |x, y, ch| {
            if ch < c {
                (127.5 + 127.5 * feat.data[(y, x, ch)]) as f32
            } else {
                0.0
            }
        });
        img.write_pnm(a.out_dir.join(format!("view{view}_features.ppm")))?;
        let dep = Raster::from_fn(w, h, 1, |x, y, _| (255.0 * depth.data[(y, x, 0)] / cfg.max_depth) as f32);
        dep.write_pnm(a.out_dir.join(format!("view{view}_depth.pgm")))?;
        let cam = &scene.cameras[view];
        std::fs::write(a.out_dir.join(format!("view{view}_camera.json")), serde_json::to_string_pretty(cam)?)?;
    }
    Ok(())
}

fn standardize_cmd(a: StandardizeArgs) -> Result<()> {
    let img = Raster::read_pnm(&a.input)?;
    let cam: CameraJson = serde_json::from_str(&std::fs::read_to_string(&a.cam)?)?;
    let cam = CameraModel::try_from(cam)?;
    if (img.width, img.height) != (cam.width, cam.height) {
        return Err(invalid(format!(
            "image is {}x{} but the camera expects {}x{}",
            img.width, img.height, cam.width, cam.height
        )));
    }
    let target = match a.intrinsics {
        Some(v) => Intrinsics::new(v[0], v[1], v[2], v[3])?,
        None => Intrinsics::from_array(crate::camera::STANDARD_INTRINSICS)?,
    };
    let (out, cam2) = standardize_intrinsics(&img, &cam, &target)?;
    out.write_pnm(&a.out)?;
    std::fs::write(&a.cam_out, serde_json::to_string_pretty(&CameraJson::from(&cam2))?)?;
    Ok(())
}

fn fit_cmd(a: FitArgs) -> Result<()> {
    let mut cfg = a.config.load()?;
    if let Some(s) = a.seed {
        cfg.seed = s;
    }
    let scene = match &a.scene {
        Some(p) => SceneArg {
            scene: p.clone(),
            index: a.index,
        }
        .load()?,
        None => crate::harness::scene::gen_scene(&cfg, cfg.seed)?,
    };
    let gts = scene.gt_boxes()?;
    let traces = fit_scene(&scene, a.loss, &cfg)?;
    std::fs::create_dir_all(&a.out_dir)?;
    std::fs::write(a.out_dir.join("trace.csv"), trace_csv(&traces, &gts))?;
    let summary = fit_summary_csv(&traces, &gts);
    std::fs::write(a.out_dir.join("summary.csv"), &summary)?;
    let series: Vec<Series> = traces
        .iter()
        .enumerate()
        .map(|(i, t)| Series {
            name: format!("box {i}"),
            points: t.steps.iter().enumerate().map(|(k, s)| (k as f64, s.loss)).collect(),
        })
        .collect();
    let svg = line_chart(&format!("{} loss", a.loss), "step", "loss", &series);
    std::fs::write(a.out_dir.join("loss.svg"), svg)?;
    print!("{summary}");
    Ok(())
}

fn eval_cmd(a: EvalArgs) -> Result<()> {
    let cfg = a.config.load()?;
    let mut ec = cfg.eval;
    if let Some(t) = a.iou {
        ec.iou_threshold = t;
    }
    let nms = a.nms.map(|t| t.unwrap_or(cfg.nms_threshold));
    let report = run_eval(&a.dets, &a.gt, &ec, nms)?;
    write_or_print(a.out.as_deref(), &report.to_csv())
}

fn pe_heatmap_cmd(a: PeHeatmapArgs) -> Result<()> {
    let cfg = a.config.load()?;
    let scene = a.scene.load()?;
    let rendered = render_feature_maps(&scene, &cfg)?;
    let reference = a.ref_row.zip(a.ref_col);
    let h = pe_heatmap(&scene, &rendered, a.view, reference, &cfg)?;
    std::fs::create_dir_all(&a.out_dir)?;
    std::fs::write(a.out_dir.join("heatmap.csv"), heatmap_csv(&h))?;
    let (rows, cols) = h.similarity.dim();
    let img = Raster::from_fn(cols, rows, 1, |x, y, _| (127.5 * (h.similarity[(y, x)] + 1.0)) as f32);
    img.write_pnm(a.out_dir.join("heatmap.pgm"))?;

    // Mean similarity in equal-width ray-distance bins.
    const BINS: usize = 20;
    let max_d = h.ray_distance.iter().cloned().fold(0.0, f64::max);
    let mut sums = [(0.0, 0usize); BINS];
    for (s, d) in h.similarity.iter().zip(h.ray_distance.iter()) {
        let b = if max_d > 0.0 { ((d / max_d) * BINS as f64) as usize } else { 0 };
        let e = &mut sums[b.min(BINS - 1)];
        e.0 += s;
        e.1 += 1;
    }
    let points = sums
        .iter()
        .enumerate()
        .filter(|(_, (_, n))| *n > 0)
        .map(|(b, (s, n))| ((b as f64 + 0.5) * max_d / BINS as f64, s / *n as f64))
        .collect();
    let svg = line_chart(
        "position embedding similarity",
        "ray distance (m)",
        "mean cosine similarity",
        &[Series {
            name: format!("view {}", a.view),
            points,
        }],
    );
    std::fs::write(a.out_dir.join("similarity.svg"), svg)?;
    println!("spearman,{:.6}", h.spearman);
    Ok(())
}

fn aggregate_cmd(a: AggregateArgs) -> Result<()> {
    let cfg = a.config.load()?;
    let scene = a.scene.load()?;
    let rendered = render_feature_maps(&scene, &cfg)?;
    let rows = aggregate_demo(&scene, &rendered, &cfg)?;
    let recovered = rows.iter().filter(|r| r.top1 == Some(r.index)).count();
    info!("recovered {recovered} of {} signatures", rows.len());
    write_or_print(a.out.as_deref(), &recovery_csv(&rows))
}
