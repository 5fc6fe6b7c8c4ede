//! Per-object stage cost model: geometry, multi-projection, rasterization,
//! fragment and color-output stages, their memory footprints, and the
//! roofline timing rule that turns a stage cost into cycles.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::machine::{bandwidth_bytes_per_cycle, BandwidthKind, MachineConfig};
use crate::trace::DrawObject;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Stage {
    Geometry,
    Smp,
    Raster,
    Fragment,
    Color,
}

/// Cost of one stage of one work slice on one GPM.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct StageCost {
    pub stage: Stage,
    pub compute_cycles: u64,
    pub local_bytes: u64,
    pub remote_bytes: u64,
    pub output_pixels: u64,
}

/// Which eye views a slice renders.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Views {
    Left,
    Right,
    Both,
}

impl Views {
    pub fn count(self) -> u64 {
        match self {
            Views::Left | Views::Right => 1,
            Views::Both => 2,
        }
    }
}

/// A share of one object's work, expressed as exact unit counts over the
/// object's totals so that slices of one object always add up exactly.
/// `pixel_units` are per-view pixels; a `Both` slice renders them twice.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct WorkSlice {
    pub object_id: u64,
    pub triangle_units: u64,
    pub vertex_units: u64,
    pub pixel_units: u64,
    pub triangle_total: u64,
    pub vertex_total: u64,
    pub pixel_total: u64,
    pub views: Views,
}

impl WorkSlice {
    /// The whole object in the given views.
    pub fn full(obj: &DrawObject, views: Views) -> Self {
        WorkSlice {
            object_id: obj.object_id,
            triangle_units: obj.triangle_count,
            vertex_units: obj.vertex_count,
            pixel_units: obj.pixels_per_view,
            triangle_total: obj.triangle_count,
            vertex_total: obj.vertex_count,
            pixel_total: obj.pixels_per_view,
            views,
        }
    }

    pub fn triangle_fraction(&self) -> f64 {
        ratio(self.triangle_units, self.triangle_total)
    }

    pub fn pixel_fraction(&self) -> f64 {
        ratio(self.pixel_units, self.pixel_total)
    }

    pub fn is_empty(&self) -> bool {
        self.triangle_units == 0 && self.pixel_units == 0
    }
}

fn ratio(units: u64, total: u64) -> f64 {
    if total == 0 {
        0.0
    } else {
        units as f64 / total as f64
    }
}

/// Splits `total` units over integer weights with largest-remainder
/// apportionment; ties go to the lowest index. The parts sum to `total`
/// exactly, and even splits differ by at most one unit.
pub fn apportion(total: u64, weights: &[u64]) -> Vec<u64> {
    let weight_sum: u128 = weights.iter().map(|w| *w as u128).sum();
    if weight_sum == 0 || weights.is_empty() {
        return vec![0; weights.len()];
    }
    let mut parts: Vec<u64> = Vec::with_capacity(weights.len());
    let mut remainders: Vec<(u128, usize)> = Vec::with_capacity(weights.len());
    let mut assigned: u64 = 0;
    for (i, &w) in weights.iter().enumerate() {
        let exact = total as u128 * w as u128;
        let part = (exact / weight_sum) as u64;
        parts.push(part);
        assigned += part;
        remainders.push((exact % weight_sum, i));
    }
    // Largest remainder first; ties by lowest index.
    remainders.sort_by(|a, b| b.0.cmp(&a.0).then(a.1.cmp(&b.1)));
    let mut leftover = total - assigned;
    for &(_, i) in &remainders {
        if leftover == 0 {
            break;
        }
        if weights[i] > 0 {
            parts[i] += 1;
            leftover -= 1;
        }
    }
    // All weights zero-remainder but leftover units remain (possible only
    // when some weights are zero): give them to the lowest nonzero weight.
    if leftover > 0 {
        for (i, &w) in weights.iter().enumerate() {
            if w > 0 {
                parts[i] += leftover;
                break;
            }
        }
    }
    parts
}

/// Splits an object's work over weighted parts (e.g. tile overlap areas).
/// Returns one slice per weight; zero-weight parts get empty slices.
pub fn split_object(obj: &DrawObject, views: Views, weights: &[u64]) -> Vec<WorkSlice> {
    let tris = apportion(obj.triangle_count, weights);
    let verts = apportion(obj.vertex_count, weights);
    let pixels = apportion(obj.pixels_per_view, weights);
    (0..weights.len())
        .map(|i| WorkSlice {
            object_id: obj.object_id,
            triangle_units: tris[i],
            vertex_units: verts[i],
            pixel_units: pixels[i],
            triangle_total: obj.triangle_count,
            vertex_total: obj.vertex_count,
            pixel_total: obj.pixels_per_view,
            views,
        })
        .collect()
}

/// Placement-independent cost plan for one slice: per-stage compute cycles,
/// the Eq-style work signals, and the memory footprints whose local/remote
/// split the machine's page placement decides later.
#[derive(Debug, Clone, PartialEq)]
pub struct SlicePlan {
    pub geometry_compute: u64,
    pub fragment_compute: u64,
    pub color_compute: u64,
    /// Transformed-vertex count: the geometry stream emits one position per
    /// view per vertex.
    pub transformed_vertices: u64,
    /// Rendered pixels across all views of the slice.
    pub pixels: u64,
    /// Texture bytes read by the fragment stage (bandwidth volume).
    pub texture_volume_bytes: u64,
    /// Per-texture footprint actually touched, for page mapping. Both views
    /// share one footprint: the texture is read once per GPM.
    pub texture_footprint: BTreeMap<u64, u64>,
    /// Vertex bytes fetched by the geometry stage (bandwidth volume).
    pub vertex_volume_bytes: u64,
    /// Vertex buffer bytes touched, for page mapping.
    pub vertex_footprint_bytes: u64,
}

impl SlicePlan {
    /// Assembles the stage list assuming all footprints are local; callers
    /// with placement information overwrite the byte split before timing.
    pub fn to_stage_costs(&self, cfg: &MachineConfig) -> Vec<StageCost> {
        let zero = |stage| StageCost {
            stage,
            compute_cycles: 0,
            local_bytes: 0,
            remote_bytes: 0,
            output_pixels: 0,
        };
        vec![
            StageCost {
                stage: Stage::Geometry,
                compute_cycles: self.geometry_compute,
                local_bytes: self.vertex_volume_bytes,
                remote_bytes: 0,
                output_pixels: 0,
            },
            zero(Stage::Smp),
            zero(Stage::Raster),
            StageCost {
                stage: Stage::Fragment,
                compute_cycles: self.fragment_compute,
                local_bytes: self.texture_volume_bytes,
                remote_bytes: 0,
                output_pixels: 0,
            },
            StageCost {
                stage: Stage::Color,
                compute_cycles: self.color_compute,
                local_bytes: self.pixels * cfg.fb_bytes_per_pixel,
                remote_bytes: 0,
                output_pixels: self.pixels,
            },
        ]
    }
}

/// Computes the stage cost plan for one slice.
///
/// Geometry runs once per slice when multi-projection is enabled (or a
/// single view is rendered) and once per view otherwise; the transformed
/// vertex stream always carries one position per view. Pixel work scales
/// with the views rendered, while the texture footprint does not: both
/// views of a slice read the same texels.
pub fn stage_costs(
    obj: &DrawObject,
    slice: &WorkSlice,
    cfg: &MachineConfig,
    bytes_per_fragment: u64,
    smp_enabled: bool,
) -> Result<SlicePlan> {
    if cfg.vertex_rate <= 0.0 || cfg.fragment_rate <= 0.0 || cfg.rop_throughput() == 0 {
        return Err(Error::Config("zero pipeline rate".into()));
    }
    if slice.triangle_total != obj.triangle_count
        || slice.vertex_total != obj.vertex_count
        || slice.pixel_total != obj.pixels_per_view
    {
        return Err(Error::Domain(format!(
            "slice totals do not match object {}",
            obj.object_id
        )));
    }
    if slice.triangle_units > slice.triangle_total
        || slice.vertex_units > slice.vertex_total
        || slice.pixel_units > slice.pixel_total
    {
        return Err(Error::Domain(format!(
            "slice units exceed totals for object {}",
            obj.object_id
        )));
    }

    let views = slice.views.count();
    let geometry_passes = if matches!(slice.views, Views::Both) && !smp_enabled {
        2
    } else {
        1
    };
    let geometry_compute =
        geometry_passes * ceil_div_rate(slice.vertex_units, cfg.vertex_rate);
    let transformed_vertices = slice.vertex_units * views;

    let pixels = slice.pixel_units * views;
    let fragment_compute = ceil_div_rate(pixels, cfg.fragment_rate);
    let color_compute = pixels.div_ceil(cfg.rop_throughput().max(1));

    let mut texture_footprint = BTreeMap::new();
    if slice.pixel_units > 0 {
        for t in &obj.textures {
            let touched = mul_frac(t.bytes, slice.pixel_units, slice.pixel_total).max(1);
            texture_footprint.insert(t.texture_id, touched);
        }
    }

    let vertex_footprint_bytes = slice.vertex_units * cfg.vertex_fetch_bytes;
    Ok(SlicePlan {
        geometry_compute,
        fragment_compute,
        color_compute,
        transformed_vertices,
        pixels,
        texture_volume_bytes: pixels * bytes_per_fragment,
        texture_footprint,
        vertex_volume_bytes: vertex_footprint_bytes * geometry_passes,
        vertex_footprint_bytes,
    })
}

/// The per-object work signals the distribution engine tracks: transformed
/// vertices (one position per view per vertex) and rendered pixels.
pub fn work_signals(obj: &DrawObject, views: Views) -> (u64, u64) {
    (obj.vertex_count * views.count(), obj.pixels_per_view * views.count())
}

fn ceil_div_rate(units: u64, rate: f64) -> u64 {
    if units == 0 {
        0
    } else {
        (units as f64 / rate).ceil() as u64
    }
}

/// Scales `bytes` by `units/total`, rounding up.
fn mul_frac(bytes: u64, units: u64, total: u64) -> u64 {
    if total == 0 || units == 0 {
        0
    } else {
        ((bytes as u128 * units as u128).div_ceil(total as u128)) as u64
    }
}

/// Roofline timing: a stage takes as long as its slowest resource,
/// compute, local DRAM, or the inter-GPM link.
pub fn stage_time(cost: &StageCost, cfg: &MachineConfig) -> u64 {
    let local_bpc = bandwidth_bytes_per_cycle(cfg, BandwidthKind::Local);
    let link_bpc = bandwidth_bytes_per_cycle(cfg, BandwidthKind::Link);
    let local = (cost.local_bytes as f64 / local_bpc).ceil() as u64;
    let remote = (cost.remote_bytes as f64 / link_bpc).ceil() as u64;
    cost.compute_cycles.max(local).max(remote)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::trace::{Rect, TextureRef};

    fn sample_object() -> DrawObject {
        DrawObject {
            object_id: 1,
            vertex_count: 128,
            triangle_count: 64,
            pixels_per_view: 1000,
            bbox_per_view: [
                Rect { x0: 0, y0: 0, x1: 50, y1: 20 },
                Rect { x0: 960, y0: 0, x1: 1010, y1: 20 },
            ],
            textures: vec![TextureRef { texture_id: 5, bytes: 8192 }],
            depends_on: vec![],
        }
    }

    #[test]
    fn both_views_with_smp_matches_hand_formulas() {
        let obj = sample_object();
        let cfg = MachineConfig::default();
        let plan = stage_costs(&obj, &WorkSlice::full(&obj, Views::Both), &cfg, 4, true).unwrap();
        assert_eq!(plan.geometry_compute, 16); // ceil(128 / 8)
        assert_eq!(plan.transformed_vertices, 256);
        assert_eq!(plan.pixels, 2000);
        assert_eq!(plan.texture_volume_bytes, 8000);
    }

    #[test]
    fn single_view_halves_pixels_and_texture_volume() {
        let obj = sample_object();
        let cfg = MachineConfig::default();
        let both = stage_costs(&obj, &WorkSlice::full(&obj, Views::Both), &cfg, 4, true).unwrap();
        let left = stage_costs(&obj, &WorkSlice::full(&obj, Views::Left), &cfg, 4, true).unwrap();
        assert_eq!(left.pixels, 1000);
        assert_eq!(left.texture_volume_bytes * 2, both.texture_volume_bytes);
        // Both views share one footprint: the page-mapped bytes are equal.
        assert_eq!(left.texture_footprint, both.texture_footprint);
    }

    #[test]
    fn zero_pixel_slice_has_zero_pixel_stages() {
        let obj = sample_object();
        let cfg = MachineConfig::default();
        let slice = WorkSlice { pixel_units: 0, ..WorkSlice::full(&obj, Views::Both) };
        let plan = stage_costs(&obj, &slice, &cfg, 4, true).unwrap();
        assert_eq!(plan.fragment_compute, 0);
        assert_eq!(plan.color_compute, 0);
        assert_eq!(plan.pixels, 0);
        assert!(plan.texture_footprint.is_empty());
    }

    #[test]
    fn smp_saves_geometry_versus_separate_views() {
        let obj = sample_object();
        let cfg = MachineConfig::default();
        let both = stage_costs(&obj, &WorkSlice::full(&obj, Views::Both), &cfg, 4, true).unwrap();
        let left = stage_costs(&obj, &WorkSlice::full(&obj, Views::Left), &cfg, 4, true).unwrap();
        let right = stage_costs(&obj, &WorkSlice::full(&obj, Views::Right), &cfg, 4, true).unwrap();
        assert!(both.geometry_compute < left.geometry_compute + right.geometry_compute);
        // Without multi-projection, both views pay two geometry passes.
        let no_smp = stage_costs(&obj, &WorkSlice::full(&obj, Views::Both), &cfg, 4, false).unwrap();
        assert_eq!(no_smp.geometry_compute, left.geometry_compute + right.geometry_compute);
        assert_eq!(no_smp.transformed_vertices, both.transformed_vertices);
    }

    #[test]
    fn stage_time_is_rooflined() {
        let cfg = MachineConfig::default();
        let mk = |compute, local, remote| StageCost {
            stage: Stage::Fragment,
            compute_cycles: compute,
            local_bytes: local,
            remote_bytes: remote,
            output_pixels: 0,
        };
        assert_eq!(stage_time(&mk(100, 0, 0), &cfg), 100);
        assert_eq!(stage_time(&mk(10, 0, 6400), &cfg), 100); // 6400 B / 64 B per cycle
        assert_eq!(stage_time(&mk(100, 102_400, 0), &cfg), 100); // tie with local DRAM
    }

    #[test]
    fn slice_additivity_is_exact() {
        let obj = sample_object();
        let cfg = MachineConfig::default();
        let weights = [3, 1, 5, 0, 2];
        let slices = split_object(&obj, Views::Both, &weights);
        let full = stage_costs(&obj, &WorkSlice::full(&obj, Views::Both), &cfg, 4, true).unwrap();
        let mut tv = 0;
        let mut pixels = 0;
        for s in &slices {
            let plan = stage_costs(&obj, s, &cfg, 4, true).unwrap();
            tv += plan.transformed_vertices;
            pixels += plan.pixels;
        }
        assert_eq!(tv, full.transformed_vertices);
        assert_eq!(pixels, full.pixels);
    }

    #[test]
    fn apportion_even_split_differs_by_at_most_one() {
        let parts = apportion(999, &[1, 1]);
        assert_eq!(parts, vec![500, 499]);
        let parts = apportion(4000, &[1, 1, 1, 1]);
        assert_eq!(parts, vec![1000, 1000, 1000, 1000]);
        let parts = apportion(10, &[0, 3, 0]);
        assert_eq!(parts, vec![0, 10, 0]);
    }
}
