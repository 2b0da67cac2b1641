use ndarray::Array2;
use statrs::statistics::{Data, OrderStatistics, RankTieBreaker, Statistics};

use super::config::RunConfig;
use super::render::RenderedScene;
use super::scene::SceneSample;
use crate::enhancer::{ipe_correlation_map, SpatialEnhancer};
use crate::error::{invalid, Result};

/// Similarity of every cell's image position embedding to a reference
/// cell, next to the distance between their frustum rays.
#[derive(Debug, Clone)]
pub struct PeHeatmap {
    pub view: usize,
    pub reference: (usize, usize),
    pub similarity: Array2<f64>,
    /// Mean distance between corresponding depth samples of the two rays.
    pub ray_distance: Array2<f64>,
    /// Rank correlation of similarity against ray distance over all
    /// non-reference cells.
    pub spearman: f64,
}

/// Runs the spatial enhancer with seeded parameters on one view of a
/// rendered scene. The reference defaults to the central cell.
pub fn pe_heatmap(
    scene: &SceneSample,
    rendered: &RenderedScene,
    view: usize,
    reference: Option<(usize, usize)>,
    cfg: &RunConfig,
) -> Result<PeHeatmap> {
    let cams = scene.cameras()?;
    let cam = cams.get(view).ok_or_else(|| invalid(format!("scene has no view {view}")))?;
    let (img, dep) = (&rendered.features[view], &rendered.depths[view]);
    let enhancer = SpatialEnhancer::seeded(
        img.channels(),
        dep.channels(),
        cfg.embed_dims,
        cfg.max_depth,
        cfg.num_depths,
        cfg.seed,
    );
    let out = enhancer.forward(img, dep, cam)?;
    let reference = reference.unwrap_or((img.rows() / 2, img.cols() / 2));
    let similarity = ipe_correlation_map(&out.ipe, reference)?;
    let g = &out.grid;
    let ray_distance = Array2::from_shape_fn((g.rows, g.cols), |(r, c)| {
        (0..g.num_depths)
            .map(|k| (g.point(r, c, k) - g.point(reference.0, reference.1, k)).norm())
            .sum::<f64>()
            / g.num_depths as f64
    });
    let (mut sims, mut dists) = (Vec::new(), Vec::new());
    for ((idx, s), d) in similarity.indexed_iter().zip(ray_distance.iter()) {
        if idx != reference {
            sims.push(*s);
            dists.push(*d);
        }
    }
    Ok(PeHeatmap {
        view,
        reference,
        similarity,
        ray_distance,
        spearman: spearman(&sims, &dists),
    })
}

/// Spearman rank correlation with average ranks for ties; NaN when either
/// side is constant or fewer than two pairs are given.
pub fn spearman(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len(), "spearman needs paired samples");
    if a.len() < 2 {
        return f64::NAN;
    }
    let ra = Data::new(a.to_vec()).ranks(RankTieBreaker::Average);
    let rb = Data::new(b.to_vec()).ranks(RankTieBreaker::Average);
    let (sa, sb) = ((&ra).std_dev(), (&rb).std_dev());
    if sa == 0.0 || sb == 0.0 {
        return f64::NAN;
    }
    (&ra).covariance(&rb) / (sa * sb)
}

/// CSV rows of `row,col,similarity,ray_distance`.
pub fn heatmap_csv(h: &PeHeatmap) -> String {
    let mut out = String::from("row,col,similarity,ray_distance\n");
    for ((r, c), s) in h.similarity.indexed_iter() {
        out.push_str(&format!("{r},{c},{s:.6},{:.6}\n", h.ray_distance[(r, c)]));
    }
    out
}
