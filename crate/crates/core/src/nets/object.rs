//! PointNet++ style object encoder and the point-cloud decoder.

use xgrasp_autodiff::{Array, Graph, ParamStore, Var};

use super::config::{ModelConfig, StageConfig};
use super::layers::{Activation, Init, Mlp};
use crate::error::{Error, Result};

/// Neighbor cap of the ball query.
pub const MAX_NEIGHBORS: usize = 32;

/// Sorted, duplicate-free copy of a cloud. Makes the encoder independent of
/// point order and multiplicity.
pub fn canonicalize(cloud: &[[f64; 3]]) -> Result<Vec<[f64; 3]>> {
    if cloud.is_empty() {
        return Err(Error::EmptyCloud);
    }
    if cloud.iter().flatten().any(|x| !x.is_finite()) {
        return Err(Error::DegenerateInput("cloud contains non-finite coordinates".into()));
    }
    let mut pts = cloud.to_vec();
    pts.sort_by(|a, b| a[0].total_cmp(&b[0]).then(a[1].total_cmp(&b[1])).then(a[2].total_cmp(&b[2])));
    pts.dedup();
    Ok(pts)
}

fn sq_dist(a: &[f64; 3], b: &[f64; 3]) -> f64 {
    (a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2) + (a[2] - b[2]).powi(2)
}

/// Farthest-point sampling starting from the point farthest from the mean.
/// Ties go to the lowest index.
pub fn farthest_point_sampling(points: &[[f64; 3]], n: usize) -> Vec<usize> {
    let n = n.min(points.len());
    if n == 0 {
        return Vec::new();
    }
    let mut mean = [0.0; 3];
    for p in points {
        for k in 0..3 {
            mean[k] += p[k] / points.len() as f64;
        }
    }
    let argmax = |v: &[f64]| {
        v.iter()
            .enumerate()
            .fold((0, f64::NEG_INFINITY), |b, (i, &x)| if x > b.1 { (i, x) } else { b })
            .0
    };
    let from_mean: Vec<f64> = points.iter().map(|p| sq_dist(p, &mean)).collect();
    let mut chosen = vec![argmax(&from_mean)];
    let mut dist: Vec<f64> = points.iter().map(|p| sq_dist(p, &points[chosen[0]])).collect();
    while chosen.len() < n {
        let next = argmax(&dist);
        chosen.push(next);
        for (d, p) in dist.iter_mut().zip(points) {
            *d = d.min(sq_dist(p, &points[next]));
        }
    }
    chosen
}

/// Up to `cap` points within `radius` of `center`, nearest first.
pub fn ball_query(points: &[[f64; 3]], center: &[f64; 3], radius: f64, cap: usize) -> Vec<usize> {
    let r2 = radius * radius;
    let mut hits: Vec<(f64, usize)> = points
        .iter()
        .enumerate()
        .map(|(i, p)| (sq_dist(p, center), i))
        .filter(|&(d, _)| d <= r2)
        .collect();
    hits.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    hits.into_iter().take(cap).map(|(_, i)| i).collect()
}

/// Precomputed sampling and grouping of one set-abstraction stage.
#[derive(Clone, Debug, PartialEq)]
pub struct StageLayout {
    /// Rows of the previous level gathered as neighbors, concatenated per group.
    pub gather: Vec<usize>,
    /// Ranges of `gather` forming each group.
    pub groups: Vec<Vec<usize>>,
    /// Coordinates of every gathered row: relative and divided by the radius,
    /// or absolute over the radius for the global stage.
    pub rel: Array,
    /// Positions of the output level.
    pub centers: Vec<[f64; 3]>,
}

/// Sampling and grouping for every stage of one cloud.
#[derive(Clone, Debug, PartialEq)]
pub struct CloudLayout {
    pub points: Vec<[f64; 3]>,
    pub stages: Vec<StageLayout>,
}

impl CloudLayout {
    pub fn new(cloud: &[[f64; 3]], stages: &[StageConfig]) -> Result<Self> {
        let points = canonicalize(cloud)?;
        let mut level = points.clone();
        let mut out = Vec::with_capacity(stages.len());
        for st in stages {
            let (gather, groups, rel, centers) = match st.centroids {
                Some(n) => {
                    let idx = farthest_point_sampling(&level, n);
                    let centers: Vec<[f64; 3]> = idx.iter().map(|&i| level[i]).collect();
                    let mut gather = Vec::new();
                    let mut groups = Vec::with_capacity(centers.len());
                    let mut rel = Vec::new();
                    for c in &centers {
                        let nb = ball_query(&level, c, st.radius, MAX_NEIGHBORS);
                        groups.push((gather.len()..gather.len() + nb.len()).collect());
                        for &j in &nb {
                            rel.extend((0..3).map(|k| (level[j][k] - c[k]) / st.radius));
                        }
                        gather.extend(nb);
                    }
                    let rel = Array::from_vec(gather.len(), 3, rel)?;
                    (gather, groups, rel, centers)
                }
                None => {
                    let gather: Vec<usize> = (0..level.len()).collect();
                    let rel = level.iter().flat_map(|p| p.map(|x| x / st.radius)).collect();
                    let rel = Array::from_vec(level.len(), 3, rel)?;
                    (gather.clone(), vec![gather], rel, vec![[0.0; 3]])
                }
            };
            level = centers.clone();
            out.push(StageLayout { gather, groups, rel, centers });
        }
        Ok(Self { points, stages: out })
    }
}

#[derive(Clone, Debug)]
pub struct ObjectEncoder {
    stages: Vec<(StageConfig, Mlp)>,
}

impl ObjectEncoder {
    pub fn new(init: &mut Init, cfg: &ModelConfig) -> Result<Self> {
        init.scoped("object", |init| {
            let mut in_feat = 0;
            let mut stages = Vec::new();
            for (i, st) in cfg.object_preset.stages().into_iter().enumerate() {
                let mut widths = vec![3 + in_feat];
                widths.extend(&st.widths);
                let mlp = Mlp::new(init, &format!("sa{i}"), &widths, Activation::Relu, true)?;
                in_feat = mlp.out_dim();
                stages.push((st, mlp));
            }
            Ok(Self { stages })
        })
    }

    pub fn stage_configs(&self) -> Vec<StageConfig> {
        self.stages.iter().map(|(s, _)| s.clone()).collect()
    }

    pub fn layout(&self, cloud: &[[f64; 3]]) -> Result<CloudLayout> {
        CloudLayout::new(cloud, &self.stage_configs())
    }

    /// 1 × |f_obj| embedding from a precomputed layout.
    pub fn forward_layout(&self, g: &mut Graph, s: &ParamStore, layout: &CloudLayout) -> Result<Var> {
        let mut feats: Option<Var> = None;
        for ((_, mlp), st) in self.stages.iter().zip(&layout.stages) {
            let rel = g.constant(st.rel.clone());
            let input = match feats {
                Some(f) => {
                    let idx: Vec<Option<usize>> = st.gather.iter().map(|&i| Some(i)).collect();
                    let gathered = g.gather_rows(f, &idx)?;
                    g.concat_cols(&[rel, gathered])?
                }
                None => rel,
            };
            let h = mlp.forward(g, s, input)?;
            feats = Some(g.group_max(h, &st.groups)?);
        }
        feats.ok_or_else(|| Error::ConfigMismatch("object encoder has no stages".into()))
    }

    pub fn forward(&self, g: &mut Graph, s: &ParamStore, cloud: &[[f64; 3]]) -> Result<Var> {
        let layout = self.layout(cloud)?;
        self.forward_layout(g, s, &layout)
    }
}

/// Output coordinates are scaled to the 0.1 m object range.
pub const DECODER_SCALE: f64 = 0.1;

#[derive(Clone, Debug)]
pub struct PointDecoder {
    mlp: Mlp,
    n_out: usize,
}

impl PointDecoder {
    pub fn new(init: &mut Init, cfg: &ModelConfig) -> Result<Self> {
        let widths = [cfg.object_dim(), cfg.decoder_hidden, cfg.decoder_hidden, 3 * cfg.decoder_points];
        Ok(Self {
            mlp: Mlp::new(init, "decoder", &widths, Activation::Gelu, false)?,
            n_out: cfg.decoder_points,
        })
    }

    /// N_out × 3 reconstructed cloud.
    pub fn forward(&self, g: &mut Graph, s: &ParamStore, f_obj: Var) -> Result<Var> {
        let flat = self.mlp.forward(g, s, f_obj)?;
        let pts = g.reshape(flat, self.n_out, 3)?;
        Ok(g.scale(pts, DECODER_SCALE))
    }
}

/// Symmetric mean of squared nearest-neighbor distances.
pub fn chamfer_distance(a: &[[f64; 3]], b: &[[f64; 3]]) -> Result<f64> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::EmptyCloud);
    }
    let one_way = |x: &[[f64; 3]], y: &[[f64; 3]]| {
        x.iter()
            .map(|p| y.iter().map(|q| sq_dist(p, q)).fold(f64::INFINITY, f64::min))
            .sum::<f64>()
            / x.len() as f64
    };
    Ok(one_way(a, b) + one_way(b, a))
}

pub fn cloud_array(cloud: &[[f64; 3]]) -> Array {
    Array::from_vec(cloud.len(), 3, cloud.iter().flatten().copied().collect()).expect("n × 3")
}
