//! Traffic and time accounting: categorized link-byte ledgers, per-frame
//! latency and balance figures, speedups, and canonical report emission.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::machine::MachineConfig;
use crate::schemes::SchemeId;

/// Inter-GPM traffic classes. Sent bytes per ordered pair are the single
/// source of truth: whatever GPM `a` debits as sent to `b` is by definition
/// what `b` received, so the two sides cannot diverge.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub enum TrafficCategory {
    /// Texture pages pulled from a remote home GPM.
    TextureRemote,
    /// Color outputs shipped to their framebuffer owner.
    Composition,
    /// Pre-allocation unit page copies.
    PreallocationCopy,
    /// Command dispatch to a rendering GPM.
    Command,
    /// Depth-test traffic against a remote framebuffer owner.
    Ztest,
    /// Vertex buffer pages pulled from a remote home GPM.
    Vertex,
}

pub const CATEGORIES: [TrafficCategory; 6] = [
    TrafficCategory::TextureRemote,
    TrafficCategory::Composition,
    TrafficCategory::PreallocationCopy,
    TrafficCategory::Command,
    TrafficCategory::Ztest,
    TrafficCategory::Vertex,
];

impl TrafficCategory {
    pub fn name(self) -> &'static str {
        match self {
            TrafficCategory::TextureRemote => "texture_remote",
            TrafficCategory::Composition => "composition",
            TrafficCategory::PreallocationCopy => "preallocation_copy",
            TrafficCategory::Command => "command",
            TrafficCategory::Ztest => "ztest",
            TrafficCategory::Vertex => "vertex",
        }
    }

    fn index(self) -> usize {
        CATEGORIES.iter().position(|c| *c == self).unwrap()
    }
}

/// Byte counts per ordered GPM pair per category.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrafficLedger {
    gpm_count: usize,
    /// Indexed `[src * gpm_count + dst][category]`.
    sent: Vec<[u64; 6]>,
}

impl TrafficLedger {
    pub fn new(gpm_count: usize) -> Self {
        TrafficLedger { gpm_count, sent: vec![[0; 6]; gpm_count * gpm_count] }
    }

    /// Records bytes sent from `src` to `dst`. Local traffic never enters
    /// the ledger; `src == dst` is an accounting bug.
    pub fn record(
        &mut self,
        src: usize,
        dst: usize,
        category: TrafficCategory,
        bytes: u64,
    ) -> Result<()> {
        if src == dst {
            return Err(Error::Accounting(format!(
                "ledger record with src == dst == {src}"
            )));
        }
        if src >= self.gpm_count || dst >= self.gpm_count {
            return Err(Error::Accounting(format!(
                "ledger record outside machine: {src} -> {dst}"
            )));
        }
        self.sent[src * self.gpm_count + dst][category.index()] += bytes;
        Ok(())
    }

    pub fn pair_total(&self, src: usize, dst: usize) -> u64 {
        self.sent[src * self.gpm_count + dst].iter().sum()
    }

    pub fn category_total(&self, category: TrafficCategory) -> u64 {
        self.sent.iter().map(|cats| cats[category.index()]).sum()
    }

    pub fn total_bytes(&self) -> u64 {
        self.sent.iter().flatten().sum()
    }

    pub fn by_category(&self) -> BTreeMap<String, u64> {
        CATEGORIES
            .iter()
            .map(|c| (c.name().to_string(), self.category_total(*c)))
            .collect()
    }

    /// Nonzero ordered pairs, for the report.
    pub fn pairs(&self) -> Vec<PairTraffic> {
        let mut out = Vec::new();
        for src in 0..self.gpm_count {
            for dst in 0..self.gpm_count {
                let cats = &self.sent[src * self.gpm_count + dst];
                if cats.iter().any(|b| *b > 0) {
                    out.push(PairTraffic {
                        src,
                        dst,
                        by_category: CATEGORIES
                            .iter()
                            .map(|c| (c.name().to_string(), cats[c.index()]))
                            .filter(|(_, b)| *b > 0)
                            .collect(),
                    });
                }
            }
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PairTraffic {
    pub src: usize,
    pub dst: usize,
    pub by_category: BTreeMap<String, u64>,
}

/// Worst-to-best completion ratio across GPMs that did work; 1.0 means
/// perfectly balanced. When at most one GPM worked the ratio is reported as
/// 1.0 with `degenerate` set.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BalanceRatio {
    pub ratio: f64,
    pub degenerate: bool,
}

pub fn balance_ratio(completions: &[u64]) -> BalanceRatio {
    let active: Vec<u64> = completions.iter().copied().filter(|c| *c > 0).collect();
    if active.len() <= 1 {
        return BalanceRatio { ratio: 1.0, degenerate: true };
    }
    let worst = *active.iter().max().unwrap();
    let best = *active.iter().min().unwrap();
    BalanceRatio { ratio: worst as f64 / best as f64, degenerate: false }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrameMetrics {
    pub frame_id: u64,
    pub latency_cycles: u64,
    pub per_gpm_completion: Vec<u64>,
    pub per_gpm_busy: Vec<u64>,
    pub balance: BalanceRatio,
    /// Rendered pixels per eye, for conservation checks.
    pub rendered_pixels_left: u64,
    pub rendered_pixels_right: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScheduleLogEntry {
    pub batch_id: u64,
    pub frame_id: u64,
    pub gpm: usize,
    pub dispatch_cycle: u64,
    pub start_cycle: u64,
    pub end_cycle: u64,
    pub predicted_cycles: u64,
    pub round_robin: bool,
    /// Straggler slices: (gpm, object_id, triangle_units, pixel_units).
    pub slices: Vec<(usize, u64, u64, u64)>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub total_cycles: u64,
    pub frames_per_megacycle: f64,
    pub mean_frame_latency: f64,
    pub total_link_bytes: u64,
    pub bytes_by_category: BTreeMap<String, u64>,
}

/// Everything one scheme run reports.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub scheme: SchemeId,
    pub config: MachineConfig,
    pub frames: Vec<FrameMetrics>,
    pub aggregate: Aggregate,
    pub traffic_pairs: Vec<PairTraffic>,
    pub schedule: Vec<ScheduleLogEntry>,
}

impl MetricsReport {
    /// Canonical structured-text form: keys sorted, stable across runs.
    pub fn to_canonical_text(&self) -> String {
        let mut text = serde_json::to_string_pretty(self).expect("report serializes");
        text.push('\n');
        text
    }

    /// Flat CSV: one row per frame plus one aggregate row.
    pub fn to_csv(&self) -> String {
        let mut out = String::from(
            "scheme,row,frame_id,latency_cycles,balance_ratio,rendered_pixels_per_view,total_link_bytes,frames_per_megacycle\n",
        );
        let scheme = self.scheme.name();
        for f in &self.frames {
            out.push_str(&format!(
                "{scheme},frame,{},{},{:.6},{},,\n",
                f.frame_id, f.latency_cycles, f.balance.ratio, f.rendered_pixels_left
            ));
        }
        out.push_str(&format!(
            "{scheme},aggregate,,{},,,{},{:.6}\n",
            self.aggregate.total_cycles,
            self.aggregate.total_link_bytes,
            self.aggregate.frames_per_megacycle
        ));
        out
    }

    pub fn mean_latency(&self) -> f64 {
        if self.frames.is_empty() {
            0.0
        } else {
            self.frames.iter().map(|f| f.latency_cycles as f64).sum::<f64>()
                / self.frames.len() as f64
        }
    }

    /// Median per-frame latency: the steady-state frame time, robust to the
    /// cold-placement warm-up of the first frames.
    pub fn median_latency(&self) -> f64 {
        if self.frames.is_empty() {
            return 0.0;
        }
        let mut lats: Vec<u64> = self.frames.iter().map(|f| f.latency_cycles).collect();
        lats.sort_unstable();
        let n = lats.len();
        if n % 2 == 1 {
            lats[n / 2] as f64
        } else {
            (lats[n / 2 - 1] + lats[n / 2]) as f64 / 2.0
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SpeedupMetric {
    SingleFrameLatency,
    Throughput,
}

/// Speedup of run `a` over run `b`: latency metrics divide b by a (lower is
/// better), throughput divides a by b.
pub fn speedup(a: &MetricsReport, b: &MetricsReport, metric: SpeedupMetric) -> Result<f64> {
    let (num, den) = match metric {
        SpeedupMetric::SingleFrameLatency => (b.mean_latency(), a.mean_latency()),
        SpeedupMetric::Throughput => (
            a.aggregate.frames_per_megacycle,
            b.aggregate.frames_per_megacycle,
        ),
    };
    if den == 0.0 {
        return Err(Error::Domain("speedup with zero denominator".into()));
    }
    Ok(num / den)
}
