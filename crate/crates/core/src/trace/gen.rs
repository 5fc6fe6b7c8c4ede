//! Deterministic synthetic scene generator.
//!
//! Objects are grouped into sharing clusters that draw most of their texture
//! bytes from a small common subset of the pool, so texture-sharing grouping
//! has real structure to find. Cluster-to-texture assignment is fixed across
//! frames, which gives consecutive frames the cross-frame locality a real
//! scene would have.

use std::collections::BTreeMap;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, LogNormal};

use crate::error::{Error, Result};
use crate::trace::{DrawObject, Frame, Rect, TextureRef, Trace};

/// Log-normal triangle-count distribution, truncated to `[8, 32768]`.
/// The skew is what makes load balancing nontrivial.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TriangleDistribution {
    /// Mean of ln(triangles).
    pub mu: f64,
    /// Standard deviation of ln(triangles).
    pub sigma: f64,
}

impl Default for TriangleDistribution {
    fn default() -> Self {
        TriangleDistribution { mu: (1200.0f64).ln(), sigma: 0.8 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SceneParams {
    pub seed: u64,
    pub frames: u32,
    pub objects_per_frame: u32,
    pub triangle_distribution: TriangleDistribution,
    /// Number of distinct textures the scene draws from.
    pub texture_pool_size: u32,
    /// Consecutive objects per sharing cluster.
    pub sharing_cluster_size: u32,
    /// Fraction of an object's pixels that appear in both eyes; controls the
    /// horizontal disparity between the two view bboxes.
    pub stereo_overlap_fraction: f64,
    /// Per-eye resolution (width, height).
    pub resolution: (u32, u32),
    /// Texture bytes consumed per rendered fragment.
    pub bytes_per_fragment: u64,
}

impl Default for SceneParams {
    fn default() -> Self {
        SceneParams {
            seed: 1,
            frames: 1,
            objects_per_frame: 64,
            triangle_distribution: TriangleDistribution::default(),
            texture_pool_size: 24,
            sharing_cluster_size: 6,
            stereo_overlap_fraction: 0.85,
            resolution: (960, 540),
            bytes_per_fragment: 16,
        }
    }
}

impl SceneParams {
    fn validate(&self) -> Result<()> {
        let positive = |ok: bool, field: &'static str| {
            if ok {
                Ok(())
            } else {
                Err(Error::Param { field, msg: "must be positive".into() })
            }
        };
        positive(self.frames > 0, "frames")?;
        positive(self.texture_pool_size > 0, "texture_pool_size")?;
        positive(self.sharing_cluster_size > 0, "sharing_cluster_size")?;
        positive(self.resolution.0 > 0 && self.resolution.1 > 0, "resolution")?;
        positive(self.bytes_per_fragment > 0, "bytes_per_fragment")?;
        if !(0.0..=1.0).contains(&self.stereo_overlap_fraction) {
            return Err(Error::Param {
                field: "stereo_overlap_fraction",
                msg: format!("{} not in [0, 1]", self.stereo_overlap_fraction),
            });
        }
        if !(self.triangle_distribution.sigma >= 0.0) || !self.triangle_distribution.mu.is_finite() {
            return Err(Error::Param {
                field: "triangle_distribution",
                msg: "mu must be finite and sigma >= 0".into(),
            });
        }
        Ok(())
    }
}

const MIN_TRIANGLES: u64 = 8;
const MAX_TRIANGLES: u64 = 32_768;
/// Fraction of objects that depend on one earlier object.
const DEPENDENCY_RATE: f64 = 0.05;

/// Generates a trace deterministically from `params`. Identical params give
/// bit-identical serialized traces.
///
/// The scene is a static world viewed over consecutive frames: every frame
/// submits the same draw list, the way a trace replay of a stereo scene
/// renders the same geometry frame after frame.
pub fn generate_scene(params: &SceneParams) -> Result<Trace> {
    params.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    let (width, height) = params.resolution;
    let pool = params.texture_pool_size as u64;

    // Texture sizes are fixed properties of the pool, drawn up front so that
    // per-frame draws do not disturb them.
    let tri_dist = LogNormal::new(params.triangle_distribution.mu, params.triangle_distribution.sigma)
        .map_err(|e| Error::Param { field: "triangle_distribution", msg: e.to_string() })?;
    let pixel_dist = LogNormal::new((8000.0f64).ln(), 0.4).unwrap();
    let mut texture_sizes = BTreeMap::new();
    for id in 0..pool {
        let kib = rng.gen_range(96..=192u64);
        texture_sizes.insert(id, kib * 1024);
    }

    let mut world = Vec::with_capacity(params.objects_per_frame as usize);
    let mut referenced: BTreeMap<u64, u64> = BTreeMap::new();
    for idx in 0..params.objects_per_frame as u64 {
        let cluster = idx / params.sharing_cluster_size as u64;
        let mut obj = gen_object(
            &mut rng,
            params,
            &texture_sizes,
            cluster,
            width,
            height,
            tri_dist,
            pixel_dist,
        );
        obj.object_id = idx;
        if idx > 0 && rng.gen_bool(DEPENDENCY_RATE) {
            let back = rng.gen_range(1..=idx.min(16));
            obj.depends_on.push(idx - back);
        }
        for t in &obj.textures {
            referenced.insert(t.texture_id, texture_sizes[&t.texture_id]);
        }
        world.push(obj);
    }

    let frames = (0..params.frames as u64)
        .map(|frame_id| Frame { frame_id, width, height, objects: world.clone() })
        .collect();

    let mut metadata = BTreeMap::new();
    metadata.insert("generator".to_string(), "scene-v1".to_string());
    metadata.insert("seed".to_string(), params.seed.to_string());

    let trace = Trace {
        frames,
        texture_table: referenced,
        bytes_per_fragment: params.bytes_per_fragment,
        metadata,
    };
    trace.validate()?;
    Ok(trace)
}

#[allow(clippy::too_many_arguments)]
fn gen_object(
    rng: &mut ChaCha8Rng,
    params: &SceneParams,
    texture_sizes: &BTreeMap<u64, u64>,
    cluster: u64,
    width: u32,
    height: u32,
    tri_dist: LogNormal<f64>,
    pixel_dist: LogNormal<f64>,
) -> DrawObject {
    let pool = params.texture_pool_size as u64;

    let triangle_count = (tri_dist.sample(rng).round() as u64).clamp(MIN_TRIANGLES, MAX_TRIANGLES);
    let vert_ratio = rng.gen_range(0.6..1.4f64);
    let vertex_count = ((triangle_count as f64 * vert_ratio).round() as u64)
        .max(triangle_count.div_ceil(3))
        .max(3);

    // Screen placement: pick a pixel budget, size a bbox around it, then put
    // the right-eye copy at a disparity that leaves `stereo_overlap_fraction`
    // of the box overlapping its re-projection.
    let eye_area = width as u64 * height as u64;
    let pixels_per_view = (pixel_dist.sample(rng).round() as u64).clamp(16, eye_area / 3);
    let coverage = rng.gen_range(0.4..0.9f64);
    let aspect = rng.gen_range(0.5..2.0f64);
    let bw = ((pixels_per_view as f64 / coverage * aspect).sqrt().round() as u32)
        .clamp(4, width.saturating_sub(1).max(4));
    let bh = ((pixels_per_view as f64 / coverage / bw as f64).ceil() as u32)
        .clamp(2, height.saturating_sub(1).max(2));
    let bw = bw.min(width);
    let bh = bh.min(height);
    let x0 = rng.gen_range(0..=width - bw);
    let y0 = rng.gen_range(0..=height - bh);
    let left = Rect { x0, y0, x1: x0 + bw, y1: y0 + bh };
    let disparity = ((1.0 - params.stereo_overlap_fraction) * bw as f64).round() as u32;
    let rx0 = (x0 + disparity).min(width - bw);
    let right = Rect { x0: width + rx0, y0, x1: width + rx0 + bw, y1: y0 + bh };
    let pixels_per_view = pixels_per_view.min(left.area());

    // Texture footprint: a dominant cluster texture, a secondary one from
    // the same cluster, and sometimes a stray from the whole pool. Cluster
    // members deliberately touch most of the shared texels: the cross-view
    // and cross-object sharing is what distribution schemes fight over.
    let cluster_tex = |slot: u64| (cluster * 3 + slot) % pool;
    let mut textures = Vec::new();
    let primary = cluster_tex(0);
    let primary_total = texture_sizes[&primary];
    let primary_frac = rng.gen_range(0.75..0.95f64);
    textures.push(TextureRef {
        texture_id: primary,
        bytes: ((primary_total as f64 * primary_frac) as u64).max(1),
    });
    let secondary = cluster_tex(1 + rng.gen_range(0..2u64));
    if textures.iter().all(|t| t.texture_id != secondary) {
        let total = texture_sizes[&secondary];
        textures.push(TextureRef {
            texture_id: secondary,
            bytes: ((total as f64 * rng.gen_range(0.3..0.6f64)) as u64).max(1),
        });
    }
    if rng.gen_bool(0.2) {
        let stray = rng.gen_range(0..pool);
        if textures.iter().all(|t| t.texture_id != stray) {
            let total = texture_sizes[&stray];
            textures.push(TextureRef {
                texture_id: stray,
                bytes: ((total as f64 * rng.gen_range(0.1..0.25f64)) as u64).max(1),
            });
        }
    }

    // Canonical in-memory form, matching what a parse would yield. Ids and
    // dependencies are assigned per frame against the drifted order.
    textures.sort_unstable_by_key(|t| t.texture_id);

    DrawObject {
        object_id: 0,
        vertex_count,
        triangle_count,
        pixels_per_view,
        bbox_per_view: [left, right],
        textures,
        depends_on: Vec::new(),
    }
}

/// Parameters of the bundled reference scene used by the experiment matrix:
/// four frames, ~512 objects, heavy cross-view and cross-object sharing.
pub fn reference_scene_params() -> SceneParams {
    SceneParams {
        seed: 2024,
        frames: 8,
        objects_per_frame: 128,
        triangle_distribution: TriangleDistribution { mu: (1200.0f64).ln(), sigma: 0.5 },
        texture_pool_size: 64,
        sharing_cluster_size: 3,
        stereo_overlap_fraction: 0.85,
        resolution: (960, 540),
        bytes_per_fragment: 16,
    }
}

/// The bundled reference scene (`ref.rrtrace`).
pub fn reference_scene() -> Trace {
    generate_scene(&reference_scene_params()).expect("reference params are valid")
}
