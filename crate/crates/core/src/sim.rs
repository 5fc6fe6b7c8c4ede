//! Shared execution machinery for all distribution schemes: runs one work
//! slice on one GPM, resolving its footprints against the machine's page
//! placement, charging the traffic ledger, and timing each stage with the
//! roofline rule.
//!
//! Traffic classes divide into two kinds. Data the pipeline must wait for
//! (texture and vertex page fetches, pre-allocation copies) gates stage
//! timing through the link roofline. Depth-test, command and composition
//! traffic are accounted in the ledger but hidden from timing: they overlap
//! with the massively threaded shader work.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::machine::{
    bandwidth_bytes_per_cycle, pages_for_bytes, BandwidthKind, Machine, MachineConfig, PageId,
    PageSpace,
};
use crate::metrics::{TrafficCategory, TrafficLedger};
use crate::pipeline::{apportion, stage_costs, stage_time, Stage, StageCost, Views, WorkSlice};
use crate::trace::{DrawObject, Rect};

/// One GPM's share of the distributed framebuffer: a column range of the
/// final stereo frame.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct FbPartition {
    pub gpm: usize,
    pub x0: u32,
    pub x1: u32,
}

/// Splits the stereo frame's `width_total` columns into one partition per
/// GPM, equal widths within one pixel.
pub fn column_partitions(width_total: u32, gpm_count: usize) -> Vec<FbPartition> {
    let widths = apportion(width_total as u64, &vec![1u64; gpm_count]);
    let mut x = 0u32;
    widths
        .iter()
        .enumerate()
        .map(|(gpm, w)| {
            let part = FbPartition { gpm, x0: x, x1: x + *w as u32 };
            x = part.x1;
            part
        })
        .collect()
}

/// Who owns the framebuffer (and depth buffer) a renderer writes to.
#[derive(Debug, Clone, PartialEq)]
pub enum FbModel {
    /// The whole framebuffer lives on one root GPM.
    Root(usize),
    /// Column-partitioned across GPMs (distributed composition).
    Columns(Vec<FbPartition>),
    /// Every renderer owns what it renders (tiles, whole-frame rendering).
    SelfOwned,
}

/// How a slice's fragments sample its textures.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TextureSampling {
    /// Screen-space splits keep texture locality: a slice touches the
    /// footprint scaled by its pixel share (minimum one page).
    ScaledByPixelShare,
    /// Primitive chunking with no locality: every chunk's fragments sample
    /// the whole footprint.
    FullFootprint,
}

/// Execution environment for one scheme run.
pub struct ExecEnv<'a> {
    pub machine: &'a mut Machine,
    pub ledger: &'a mut TrafficLedger,
    pub bytes_per_fragment: u64,
    /// Page namespace; alternate-frame rendering reserves one per GPM.
    pub segment: u32,
    pub fb: FbModel,
    pub texture_sampling: TextureSampling,
    /// Whether dispatch sends per-assignment command bytes over the link.
    pub charge_command: bool,
    /// The GPM issuing commands (the scheduling node).
    pub dispatcher: usize,
}

/// Timing and accounting result of one slice execution.
#[derive(Debug, Clone, PartialEq)]
pub struct UnitOutcome {
    pub cycles: u64,
    /// Cycle offsets (from slice start) at which the geometry and fragment
    /// stages complete, for the engine's elapsed counters.
    pub geometry_end: u64,
    pub fragment_end: u64,
    pub tv: u64,
    pub pixels: u64,
    /// Per-view rendered pixels: (left, right).
    pub rendered_per_view: (u64, u64),
    /// Rendered pixels per framebuffer partition (when `fb` is `Columns`).
    pub pixels_by_partition: Option<Vec<u64>>,
}

/// Distributes `pixels` of one view over the partitions its bbox columns
/// overlap, proportional to overlap area, exactly (largest remainder).
pub fn route_view_pixels(
    bbox: &Rect,
    pixels: u64,
    partitions: &[FbPartition],
) -> Result<Vec<u64>> {
    if pixels == 0 {
        return Ok(vec![0; partitions.len()]);
    }
    if bbox.is_empty() {
        return Err(Error::Accounting(
            "rendered pixels with an empty bbox".into(),
        ));
    }
    let covered = partitions
        .iter()
        .map(|p| {
            let lo = bbox.x0.max(p.x0);
            let hi = bbox.x1.min(p.x1);
            hi.saturating_sub(lo) as u64 * bbox.height() as u64
        })
        .collect::<Vec<_>>();
    if covered.iter().sum::<u64>() == 0 {
        return Err(Error::Accounting(format!(
            "bbox [{}, {}) outside every framebuffer partition",
            bbox.x0, bbox.x1
        )));
    }
    Ok(apportion(pixels, &covered))
}

impl ExecEnv<'_> {
    fn cfg(&self) -> &MachineConfig {
        &self.machine.cfg
    }

    /// Touches a page set from `gpm`, records link traffic under `category`,
    /// and returns the page-granular remote byte count.
    fn touch_and_record(
        &mut self,
        gpm: usize,
        pages: &[PageId],
        category: TrafficCategory,
    ) -> Result<u64> {
        let summary = self.machine.touch_pages(gpm, pages);
        for (src, bytes) in &summary.remote_by_source {
            if *src != gpm {
                self.ledger.record(*src, gpm, category, *bytes)?;
            }
        }
        Ok(summary.remote_bytes)
    }

    /// Runs one slice of one object on `gpm`, charging placement, ledger and
    /// stage time.
    pub fn exec_slice(
        &mut self,
        frame_id: u64,
        obj: &DrawObject,
        slice: &WorkSlice,
        smp_enabled: bool,
        gpm: usize,
    ) -> Result<UnitOutcome> {
        let cfg = self.cfg().clone();
        let plan = stage_costs(obj, slice, &cfg, self.bytes_per_fragment, smp_enabled)?;

        if self.charge_command && gpm != self.dispatcher {
            self.ledger
                .record(self.dispatcher, gpm, TrafficCategory::Command, cfg.command_bytes)?;
        }

        // Geometry: vertex buffer fetch through page placement.
        let vertex_pages = pages_for_bytes(
            self.segment,
            PageSpace::Vertex { frame_id, object_id: obj.object_id },
            plan.vertex_footprint_bytes,
            cfg.page_bytes,
        );
        let vertex_remote = self.touch_and_record(gpm, &vertex_pages, TrafficCategory::Vertex)?;

        // Fragment: texture footprint through page placement. Each distinct
        // page is charged once per object per GPM; re-reads within the
        // slice hit local memory.
        let mut texture_pages = Vec::new();
        for (texture_id, bytes) in &plan.texture_footprint {
            let touched = match self.texture_sampling {
                TextureSampling::ScaledByPixelShare => *bytes,
                TextureSampling::FullFootprint => obj
                    .textures
                    .iter()
                    .find(|t| t.texture_id == *texture_id)
                    .map_or(*bytes, |t| t.bytes),
            };
            texture_pages.extend(pages_for_bytes(
                self.segment,
                PageSpace::Texture { texture_id: *texture_id },
                touched,
                cfg.page_bytes,
            ));
        }
        let texture_remote =
            self.touch_and_record(gpm, &texture_pages, TrafficCategory::TextureRemote)?;

        // Depth test and composition routing against the framebuffer owner.
        let (rendered_per_view, pixels_by_partition) =
            self.route_output(obj, slice, plan.pixels, gpm)?;

        let stages = [
            StageCost {
                stage: Stage::Geometry,
                compute_cycles: plan.geometry_compute,
                local_bytes: plan.vertex_volume_bytes.saturating_sub(vertex_remote),
                remote_bytes: vertex_remote,
                output_pixels: 0,
            },
            StageCost {
                stage: Stage::Fragment,
                compute_cycles: plan.fragment_compute,
                local_bytes: plan.texture_volume_bytes.saturating_sub(texture_remote),
                remote_bytes: texture_remote,
                output_pixels: 0,
            },
            StageCost {
                stage: Stage::Color,
                compute_cycles: plan.color_compute,
                local_bytes: plan.pixels * cfg.fb_bytes_per_pixel,
                remote_bytes: 0,
                output_pixels: plan.pixels,
            },
        ];
        let geometry_end = stage_time(&stages[0], &cfg);
        let fragment_end = geometry_end + stage_time(&stages[1], &cfg);
        let cycles = fragment_end + stage_time(&stages[2], &cfg);

        Ok(UnitOutcome {
            cycles,
            geometry_end,
            fragment_end,
            tv: plan.transformed_vertices,
            pixels: plan.pixels,
            rendered_per_view,
            pixels_by_partition,
        })
    }

    /// Routes rendered pixels to their framebuffer owner: ledger depth-test
    /// bytes, and per-partition pixel counts under distributed composition.
    fn route_output(
        &mut self,
        obj: &DrawObject,
        slice: &WorkSlice,
        pixels: u64,
        gpm: usize,
    ) -> Result<((u64, u64), Option<Vec<u64>>)> {
        let rendered_per_view = match slice.views {
            Views::Left => (slice.pixel_units, 0),
            Views::Right => (0, slice.pixel_units),
            Views::Both => (slice.pixel_units, slice.pixel_units),
        };
        let ztest = self.cfg().ztest_bytes_per_pixel;
        match self.fb.clone() {
            FbModel::SelfOwned => Ok((rendered_per_view, None)),
            FbModel::Root(root) => {
                if gpm != root && pixels > 0 {
                    self.ledger.record(gpm, root, TrafficCategory::Ztest, pixels * ztest)?;
                }
                Ok((rendered_per_view, None))
            }
            FbModel::Columns(partitions) => {
                let mut by_partition = vec![0u64; partitions.len()];
                let views: &[(usize, u64)] = match slice.views {
                    Views::Left => &[(0, slice.pixel_units)],
                    Views::Right => &[(1, slice.pixel_units)],
                    Views::Both => &[(0, slice.pixel_units), (1, slice.pixel_units)],
                };
                for (view_idx, view_pixels) in views {
                    let routed =
                        route_view_pixels(&obj.bbox_per_view[*view_idx], *view_pixels, &partitions)?;
                    for (p, n) in routed.iter().enumerate() {
                        by_partition[p] += n;
                    }
                }
                for (p, n) in by_partition.iter().enumerate() {
                    let owner = partitions[p].gpm;
                    if owner != gpm && *n > 0 {
                        self.ledger.record(gpm, owner, TrafficCategory::Ztest, n * ztest)?;
                    }
                }
                Ok((rendered_per_view, Some(by_partition)))
            }
        }
    }

    /// Pre-allocates pages into `gpm`, recording copy traffic; returns the
    /// link cycles until the slowest source finishes.
    pub fn preallocate(&mut self, gpm: usize, pages: &[PageId]) -> Result<u64> {
        let summary = self.machine.preallocate_pages(gpm, pages);
        let link_bpc = bandwidth_bytes_per_cycle(self.cfg(), BandwidthKind::Link);
        let mut worst = 0u64;
        for (src, bytes) in &summary.source_map {
            if *src != gpm {
                self.ledger
                    .record(*src, gpm, TrafficCategory::PreallocationCopy, *bytes)?;
                worst = worst.max((*bytes as f64 / link_bpc).ceil() as u64);
            }
        }
        Ok(worst)
    }
}

/// Result of a composition pass.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CompositionOutcome {
    pub composition_cycles: u64,
    pub composition_link_bytes: u64,
}

/// Distributed composition: every rendered pixel is routed to its column's
/// owner; off-owner pixels pay framebuffer bytes on the link, and each GPM's
/// ROPs write its own partition in parallel, so the composition time is the
/// worst single partition.
pub fn compose_distributed(
    per_gpm_pixels: &BTreeMap<usize, Vec<u64>>,
    partitions: &[FbPartition],
    cfg: &MachineConfig,
) -> Result<CompositionOutcome> {
    let mut owned = vec![0u64; partitions.len()];
    let mut link_bytes = 0u64;
    for (renderer, counts) in per_gpm_pixels {
        if counts.len() != partitions.len() {
            return Err(Error::Accounting(format!(
                "renderer {renderer} routed pixels to {} partitions, frame has {}",
                counts.len(),
                partitions.len()
            )));
        }
        for (p, pixels) in counts.iter().enumerate() {
            owned[p] += pixels;
            if partitions[p].gpm != *renderer {
                link_bytes += pixels * cfg.fb_bytes_per_pixel;
            }
        }
    }
    let throughput = cfg.rop_throughput();
    let composition_cycles = owned
        .iter()
        .map(|p| p.div_ceil(throughput))
        .max()
        .unwrap_or(0);
    Ok(CompositionOutcome { composition_cycles, composition_link_bytes: link_bytes })
}

/// Root-only composition: all pixels funnel through one GPM's ROPs.
pub fn compose_root_only(total_pixels: u64, cfg: &MachineConfig) -> u64 {
    total_pixels.div_ceil(cfg.rop_throughput())
}

/// Color output runs asynchronously with shading: a composition engine
/// consumes unit outputs in arrival order, so composition only extends the
/// frame past the render end by whatever backlog remains. Returns the cycle
/// the engine drains. `events` are `(arrival_cycle, pixels)`.
pub fn composition_timeline(mut events: Vec<(u64, u64)>, throughput: u64) -> u64 {
    events.sort_unstable();
    let mut free = 0u64;
    for (arrival, pixels) in events {
        if pixels == 0 {
            continue;
        }
        free = free.max(arrival) + pixels.div_ceil(throughput);
    }
    free
}

/// Records composition traffic of a distributed pass into the ledger.
pub fn record_composition_traffic(
    ledger: &mut TrafficLedger,
    per_gpm_pixels: &BTreeMap<usize, Vec<u64>>,
    partitions: &[FbPartition],
    fb_bytes_per_pixel: u64,
) -> Result<()> {
    for (renderer, counts) in per_gpm_pixels {
        for (p, pixels) in counts.iter().enumerate() {
            let owner = partitions[p].gpm;
            if owner != *renderer && *pixels > 0 {
                ledger.record(
                    *renderer,
                    owner,
                    TrafficCategory::Composition,
                    pixels * fb_bytes_per_pixel,
                )?;
            }
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn partitions_tile_the_frame_exactly() {
        let parts = column_partitions(1920, 4);
        assert_eq!(parts.len(), 4);
        assert_eq!(parts[0].x0, 0);
        assert_eq!(parts[3].x1, 1920);
        for w in parts.windows(2) {
            assert_eq!(w[0].x1, w[1].x0);
        }
        // Uneven width: equal within one pixel.
        let parts = column_partitions(1921, 4);
        let widths: Vec<u32> = parts.iter().map(|p| p.x1 - p.x0).collect();
        assert_eq!(widths.iter().sum::<u32>(), 1921);
        assert!(widths.iter().max().unwrap() - widths.iter().min().unwrap() <= 1);
    }

    #[test]
    fn view_pixels_route_proportionally_and_conserve() {
        let parts = column_partitions(16, 4);
        let bbox = Rect { x0: 0, y0: 0, x1: 16, y1: 4 };
        let routed = route_view_pixels(&bbox, 100, &parts).unwrap();
        assert_eq!(routed, vec![25, 25, 25, 25]);
        let bbox = Rect { x0: 2, y0: 0, x1: 6, y1: 4 };
        let routed = route_view_pixels(&bbox, 99, &parts).unwrap();
        assert_eq!(routed.iter().sum::<u64>(), 99);
        assert_eq!(routed[2], 0);
        assert_eq!(routed[3], 0);
    }

    #[test]
    fn uniform_composition_matches_rop_arithmetic() {
        let cfg = MachineConfig::default();
        let parts = column_partitions(1024, 4);
        let total = 131_072u64;
        let per_gpm: BTreeMap<usize, Vec<u64>> = (0..4)
            .map(|g| (g, vec![total / 16; 4]))
            .collect();
        let outcome = compose_distributed(&per_gpm, &parts, &cfg).unwrap();
        // Each GPM owns total/4 pixels at 32 pixels per cycle.
        assert_eq!(outcome.composition_cycles, (total / 4).div_ceil(32));
        assert_eq!(compose_root_only(total, &cfg), total.div_ceil(32));
        assert!(compose_root_only(total, &cfg) >= 4 * outcome.composition_cycles);
    }

    #[test]
    fn self_owned_pixels_have_zero_composition_bytes() {
        let cfg = MachineConfig::default();
        let parts = column_partitions(1024, 4);
        let per_gpm: BTreeMap<usize, Vec<u64>> = (0..4)
            .map(|g| {
                let mut counts = vec![0u64; 4];
                counts[g] = 1000;
                (g, counts)
            })
            .collect();
        let outcome = compose_distributed(&per_gpm, &parts, &cfg).unwrap();
        assert_eq!(outcome.composition_link_bytes, 0);
    }

    #[test]
    fn misrouted_pixels_are_an_accounting_error() {
        let cfg = MachineConfig::default();
        let parts = column_partitions(1024, 4);
        let per_gpm: BTreeMap<usize, Vec<u64>> = [(0usize, vec![1u64; 3])].into_iter().collect();
        assert!(compose_distributed(&per_gpm, &parts, &cfg).is_err());
    }
}
