//! Multi-GPU machine model: GPM compute rates, local DRAM and inter-GPM
//! link bandwidths, page-granular memory placement with a first-touch
//! policy, pre-allocation copies, and a small per-GPM remote-page cache.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const KIB: u64 = 1024;
pub const MIB: u64 = 1024 * KIB;

/// Baseline topology and rates. Defaults follow a 4-GPM system with 64 GB/s
/// uni-directional links, 1 TB/s local DRAM, 8 SMs and 8 ROPs per GPM at
/// 1 GHz; each ROP outputs 4 pixels per cycle.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MachineConfig {
    pub gpm_count: usize,
    pub sm_per_gpm: u32,
    pub rop_per_gpm: u32,
    pub clock_ghz: f64,
    /// Local DRAM bandwidth per GPM, GB/s.
    pub local_dram_gbps: f64,
    /// Bandwidth of each directed GPM-pair link, GB/s. Every ordered pair has
    /// a dedicated link, so distinct pairs never contend.
    pub link_gbps: f64,
    /// Vertices processed per cycle per GPM in the geometry stage.
    pub vertex_rate: f64,
    /// Fragments shaded per cycle per GPM.
    pub fragment_rate: f64,
    /// Pixels written per cycle per ROP.
    pub rop_pixels_per_cycle: u32,
    pub page_bytes: u64,
    /// Capacity of the per-GPM remote-page cache, bytes. Zero disables it.
    pub remote_cache_bytes: u64,
    /// Bytes fetched per vertex by the geometry stage.
    pub vertex_fetch_bytes: u64,
    /// Framebuffer bytes per pixel (RGBA8).
    pub fb_bytes_per_pixel: u64,
    /// Command-dispatch bytes per object assignment sent over a link.
    pub command_bytes: u64,
    /// Depth-test bytes per rendered pixel against the framebuffer owner.
    pub ztest_bytes_per_pixel: u64,
    /// Triangles per chunk when the single-programming-model baseline slices
    /// objects with no locality.
    pub baseline_chunk_triangles: u64,
}

impl Default for MachineConfig {
    fn default() -> Self {
        MachineConfig {
            gpm_count: 4,
            sm_per_gpm: 8,
            rop_per_gpm: 8,
            clock_ghz: 1.0,
            local_dram_gbps: 1024.0,
            link_gbps: 64.0,
            vertex_rate: 8.0,
            fragment_rate: 64.0,
            rop_pixels_per_cycle: 4,
            page_bytes: 4096,
            remote_cache_bytes: 2 * MIB,
            vertex_fetch_bytes: 32,
            fb_bytes_per_pixel: 4,
            command_bytes: 256,
            ztest_bytes_per_pixel: 4,
            baseline_chunk_triangles: 256,
        }
    }
}

/// Memory access class for bandwidth conversion.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BandwidthKind {
    Local,
    Link,
}

impl MachineConfig {
    pub fn validate(&self) -> Result<()> {
        let check = |ok: bool, msg: &str| {
            if ok {
                Ok(())
            } else {
                Err(Error::Config(msg.to_string()))
            }
        };
        check(self.gpm_count >= 1 && self.gpm_count <= 64, "gpm_count must be in 1..=64")?;
        check(self.clock_ghz > 0.0, "clock_ghz must be positive")?;
        check(self.local_dram_gbps > 0.0, "local_dram_gbps must be positive")?;
        check(self.link_gbps > 0.0, "link_gbps must be positive")?;
        // NUMA asymmetry: a link faster than local DRAM is an inverted config.
        check(
            self.link_gbps <= self.local_dram_gbps,
            "link_gbps must not exceed local_dram_gbps",
        )?;
        check(self.vertex_rate > 0.0, "vertex_rate must be positive")?;
        check(self.fragment_rate > 0.0, "fragment_rate must be positive")?;
        check(self.rop_per_gpm > 0, "rop_per_gpm must be positive")?;
        check(self.rop_pixels_per_cycle > 0, "rop_pixels_per_cycle must be positive")?;
        check(self.sm_per_gpm > 0, "sm_per_gpm must be positive")?;
        check(self.page_bytes > 0, "page_bytes must be positive")?;
        Ok(())
    }

    /// Pixels per cycle a GPM's ROPs sustain together.
    pub fn rop_throughput(&self) -> u64 {
        self.rop_per_gpm as u64 * self.rop_pixels_per_cycle as u64
    }
}

/// GB/s converted to bytes per clock cycle: at 1 GHz, 64 GB/s is 64 B/cycle
/// and 1 TB/s (1024 GB/s) is 1024 B/cycle.
pub fn bandwidth_bytes_per_cycle(cfg: &MachineConfig, kind: BandwidthKind) -> f64 {
    let gbps = match kind {
        BandwidthKind::Local => cfg.local_dram_gbps,
        BandwidthKind::Link => cfg.link_gbps,
    };
    gbps / cfg.clock_ghz
}

/// Which address space a page belongs to. Texture pages are shared scene
/// data; vertex pages are per-object buffers created with their frame.
/// `segment` separates replicated address spaces (alternate-frame rendering
/// reserves one segment per GPM); segment 0 is the shared space.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum PageSpace {
    Texture { texture_id: u64 },
    Vertex { frame_id: u64, object_id: u64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct PageId {
    pub segment: u32,
    pub space: PageSpace,
    pub index: u32,
}

/// Enumerates the first pages of `space` covering `bytes`.
pub fn pages_for_bytes(segment: u32, space: PageSpace, bytes: u64, page_bytes: u64) -> Vec<PageId> {
    if bytes == 0 {
        return Vec::new();
    }
    let count = bytes.div_ceil(page_bytes);
    (0..count)
        .map(|index| PageId { segment, space, index: index as u32 })
        .collect()
}

/// Where a page is resident. The home GPM is where first touch (or first
/// pre-allocation) placed it; duplicates exist only through pre-allocation
/// or segment replication and are flagged by a bit per GPM.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Placement {
    pub home: usize,
    pub duplicate_mask: u64,
}

impl Placement {
    pub fn resident_on(&self, gpm: usize) -> bool {
        self.home == gpm || self.duplicate_mask & (1 << gpm) != 0
    }

    pub fn is_duplicated(&self) -> bool {
        self.duplicate_mask != 0
    }
}

/// Result of touching a page set from one GPM.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct AccessSummary {
    /// Bytes served from local DRAM or the remote cache.
    pub local_bytes: u64,
    /// Bytes pulled over links, page granular.
    pub remote_bytes: u64,
    /// Pages newly placed by first touch.
    pub allocations: u64,
    /// Remote bytes broken down by the serving GPM.
    pub remote_by_source: BTreeMap<usize, u64>,
}

/// Result of pre-allocating a page set into one GPM.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct CopySummary {
    pub copied_bytes: u64,
    /// Copied bytes by source GPM.
    pub source_map: BTreeMap<usize, u64>,
}

/// Bounded LRU set of remote pages. Deterministic: eviction order depends
/// only on the touch sequence.
#[derive(Debug, Clone, Default)]
struct RemoteCache {
    capacity_pages: u64,
    stamp: u64,
    by_page: BTreeMap<PageId, u64>,
    by_stamp: BTreeSet<(u64, PageId)>,
}

impl RemoteCache {
    fn new(capacity_pages: u64) -> Self {
        RemoteCache { capacity_pages, ..Default::default() }
    }

    fn contains_refresh(&mut self, page: PageId) -> bool {
        match self.by_page.get_mut(&page) {
            Some(stamp) => {
                self.by_stamp.remove(&(*stamp, page));
                self.stamp += 1;
                *stamp = self.stamp;
                self.by_stamp.insert((self.stamp, page));
                true
            }
            None => false,
        }
    }

    fn insert(&mut self, page: PageId) {
        if self.capacity_pages == 0 {
            return;
        }
        if self.contains_refresh(page) {
            return;
        }
        if self.by_page.len() as u64 >= self.capacity_pages {
            if let Some(&(stamp, victim)) = self.by_stamp.iter().next() {
                self.by_stamp.remove(&(stamp, victim));
                self.by_page.remove(&victim);
            }
        }
        self.stamp += 1;
        self.by_page.insert(page, self.stamp);
        self.by_stamp.insert((self.stamp, page));
    }
}

/// Per-GPM simulation state.
#[derive(Debug, Clone, Default)]
pub struct GpmState {
    pub gpm_id: usize,
    /// Next free cycle of the GPM's execution timeline within the current frame.
    pub timeline_cycles: u64,
    /// Accumulated compute-occupied cycles within the current frame.
    pub busy_cycles: u64,
    remote_cache: RemoteCache,
}

/// One machine instance: placement tables plus per-GPM state. Owned by
/// exactly one simulation run; runs own private instances.
#[derive(Debug, Clone)]
pub struct Machine {
    pub cfg: MachineConfig,
    placement: BTreeMap<PageId, Placement>,
    pub gpms: Vec<GpmState>,
}

impl Machine {
    pub fn new(cfg: &MachineConfig) -> Result<Self> {
        cfg.validate()?;
        let cache_pages = cfg.remote_cache_bytes / cfg.page_bytes;
        let gpms = (0..cfg.gpm_count)
            .map(|gpm_id| GpmState {
                gpm_id,
                remote_cache: RemoteCache::new(cache_pages),
                ..Default::default()
            })
            .collect();
        Ok(Machine { cfg: cfg.clone(), placement: BTreeMap::new(), gpms })
    }

    /// Resets per-frame timeline counters. Placement and caches persist
    /// across frames of a run.
    pub fn reset_timelines(&mut self) {
        for g in &mut self.gpms {
            g.timeline_cycles = 0;
            g.busy_cycles = 0;
        }
    }

    pub fn placement_of(&self, page: &PageId) -> Option<Placement> {
        self.placement.get(page).copied()
    }

    pub fn placements(&self) -> impl Iterator<Item = (&PageId, &Placement)> {
        self.placement.iter()
    }

    /// First-touch access from `gpm`: unallocated pages become resident here
    /// and count local; pages resident elsewhere count remote (page granular)
    /// unless the remote cache holds them; remote touches populate the cache.
    pub fn touch_pages(&mut self, gpm: usize, pages: &[PageId]) -> AccessSummary {
        let page_bytes = self.cfg.page_bytes;
        let mut summary = AccessSummary::default();
        for &page in pages {
            match self.placement.get(&page) {
                None => {
                    self.placement.insert(page, Placement { home: gpm, duplicate_mask: 0 });
                    summary.allocations += 1;
                    summary.local_bytes += page_bytes;
                }
                Some(p) if p.resident_on(gpm) => {
                    summary.local_bytes += page_bytes;
                }
                Some(p) => {
                    let home = p.home;
                    if self.gpms[gpm].remote_cache.contains_refresh(page) {
                        // Cache hit: served locally, zero link bytes.
                        summary.local_bytes += page_bytes;
                    } else {
                        summary.remote_bytes += page_bytes;
                        *summary.remote_by_source.entry(home).or_default() += page_bytes;
                        self.gpms[gpm].remote_cache.insert(page);
                    }
                }
            }
        }
        summary
    }

    /// Pre-allocation: fresh pages become resident in `gpm` at zero cost;
    /// pages resident elsewhere are duplicated into `gpm`, paying one page
    /// copy each from their home GPM.
    pub fn preallocate_pages(&mut self, gpm: usize, pages: &[PageId]) -> CopySummary {
        let page_bytes = self.cfg.page_bytes;
        let mut summary = CopySummary::default();
        for &page in pages {
            match self.placement.get_mut(&page) {
                None => {
                    self.placement.insert(page, Placement { home: gpm, duplicate_mask: 0 });
                }
                Some(p) if p.resident_on(gpm) => {}
                Some(p) => {
                    let home = p.home;
                    p.duplicate_mask |= 1 << gpm;
                    summary.copied_bytes += page_bytes;
                    *summary.source_map.entry(home).or_default() += page_bytes;
                }
            }
        }
        summary
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pages(n: u64) -> Vec<PageId> {
        pages_for_bytes(0, PageSpace::Texture { texture_id: 1 }, n * 4096, 4096)
    }

    #[test]
    fn bandwidth_conversion_matches_baseline_rates() {
        let cfg = MachineConfig::default();
        assert_eq!(bandwidth_bytes_per_cycle(&cfg, BandwidthKind::Link), 64.0);
        assert_eq!(bandwidth_bytes_per_cycle(&cfg, BandwidthKind::Local), 1024.0);
        let fast = MachineConfig { clock_ghz: 2.0, ..Default::default() };
        assert_eq!(bandwidth_bytes_per_cycle(&fast, BandwidthKind::Link), 32.0);
    }

    #[test]
    fn inverted_bandwidth_config_is_refused() {
        let cfg = MachineConfig { link_gbps: 2048.0, ..Default::default() };
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn first_touch_then_remote_then_cache_hit() {
        let mut m = Machine::new(&MachineConfig::default()).unwrap();
        let ps = pages(3);

        let first = m.touch_pages(0, &ps);
        assert_eq!(first.allocations, 3);
        assert_eq!(first.remote_bytes, 0);
        assert_eq!(first.local_bytes, 3 * 4096);

        let second = m.touch_pages(1, &ps);
        assert_eq!(second.remote_bytes, 3 * 4096);
        assert_eq!(second.remote_by_source[&0], 3 * 4096);

        // Same pages again: the remote cache absorbs the link traffic.
        let third = m.touch_pages(1, &ps);
        assert_eq!(third.remote_bytes, 0);
        assert_eq!(third.local_bytes, 3 * 4096);
    }

    #[test]
    fn remote_cache_capacity_zero_never_hits() {
        let cfg = MachineConfig { remote_cache_bytes: 0, ..Default::default() };
        let mut m = Machine::new(&cfg).unwrap();
        let ps = pages(2);
        m.touch_pages(0, &ps);
        m.touch_pages(1, &ps);
        let again = m.touch_pages(1, &ps);
        assert_eq!(again.remote_bytes, 2 * 4096);
    }

    #[test]
    fn lru_evicts_oldest_page() {
        let cfg = MachineConfig { remote_cache_bytes: 2 * 4096, ..Default::default() };
        let mut m = Machine::new(&cfg).unwrap();
        let ps = pages(3);
        m.touch_pages(0, &ps);
        // GPM1 pulls pages 0,1,2 with capacity 2: page 0 is evicted.
        m.touch_pages(1, &ps);
        let again = m.touch_pages(1, &ps[..1]);
        assert_eq!(again.remote_bytes, 4096);
    }

    #[test]
    fn preallocate_fresh_is_free_and_makes_touches_local() {
        let mut m = Machine::new(&MachineConfig::default()).unwrap();
        let ps = pages(2);
        let copy = m.preallocate_pages(2, &ps);
        assert_eq!(copy.copied_bytes, 0);
        let touch = m.touch_pages(2, &ps);
        assert_eq!(touch.remote_bytes, 0);
        assert_eq!(touch.allocations, 0);
    }

    #[test]
    fn preallocate_duplicates_pay_page_copies() {
        let mut m = Machine::new(&MachineConfig::default()).unwrap();
        let ps = pages(2);
        m.touch_pages(0, &ps);
        let copy = m.preallocate_pages(3, &ps);
        assert_eq!(copy.copied_bytes, 2 * 4096);
        assert_eq!(copy.source_map[&0], 2 * 4096);
        // After pre-allocation the touching GPM reads locally.
        let touch = m.touch_pages(3, &ps);
        assert_eq!(touch.remote_bytes, 0);
        // Placement conservation: home unchanged, duplicate flagged.
        let p = m.placement_of(&ps[0]).unwrap();
        assert_eq!(p.home, 0);
        assert!(p.resident_on(3));
        assert!(p.is_duplicated());
    }

    #[test]
    fn pages_for_bytes_rounds_up() {
        let ps = pages_for_bytes(0, PageSpace::Texture { texture_id: 9 }, 4097, 4096);
        assert_eq!(ps.len(), 2);
        assert!(pages_for_bytes(0, PageSpace::Texture { texture_id: 9 }, 0, 4096).is_empty());
    }
}
