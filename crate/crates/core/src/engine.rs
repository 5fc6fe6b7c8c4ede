//! Object-aware runtime distribution engine: a linear rendering-time
//! predictor calibrated from the first eight batches, total/elapsed work
//! counters per GPM, earliest-available GPM selection under a bounded batch
//! queue, pre-allocation of batch footprints, and fine-grained
//! redistribution of a straggling batch onto idle GPMs.

use std::collections::BTreeMap;
use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use crate::batching::{batch_signals, Batch, BatchSignals};
use crate::error::{Error, Result};
use crate::machine::{pages_for_bytes, PageId, PageSpace};
use crate::metrics::ScheduleLogEntry;
use crate::pipeline::{apportion, Views, WorkSlice};
use crate::sim::ExecEnv;
use crate::trace::{DrawObject, Frame};

/// Batches used to fit the predictor coefficients.
pub const CALIBRATION_BATCHES: usize = 8;
/// Maximum pending batches per GPM.
pub const MAX_BATCH_QUEUE: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CalibrationSample {
    pub triangles: u64,
    pub tv: u64,
    pub pixels: u64,
    pub measured_cycles: u64,
}

/// The linear memorization model: total time from triangle counts,
/// elapsed time from transformed vertices and rendered pixels.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictorState {
    /// Cycles per triangle.
    pub c0: f64,
    /// Cycles per transformed vertex.
    pub c1: f64,
    /// Cycles per rendered pixel.
    pub c2: f64,
    pub calibrated: bool,
    pub samples: Vec<CalibrationSample>,
}

/// Fits the predictor from exactly eight measured batches. `c0` is the
/// ratio of total measured cycles to total triangles; `(c1, c2)` solve the
/// least-squares fit of `measured ~ c1*tv + c2*pixels`, clamped to be
/// non-negative. A rank-deficient sample set falls back to splitting the
/// measured time evenly between the two signals.
pub fn calibrate(samples: &[CalibrationSample]) -> Result<PredictorState> {
    if samples.len() != CALIBRATION_BATCHES {
        return Err(Error::Calibration(format!(
            "need exactly {CALIBRATION_BATCHES} samples, got {}",
            samples.len()
        )));
    }
    if samples.iter().any(|s| s.measured_cycles == 0) {
        return Err(Error::Calibration("sample with zero measured cycles".into()));
    }

    let sum_measured: f64 = samples.iter().map(|s| s.measured_cycles as f64).sum();
    let sum_tris: f64 = samples.iter().map(|s| s.triangles as f64).sum();
    let sum_tv: f64 = samples.iter().map(|s| s.tv as f64).sum();
    let sum_px: f64 = samples.iter().map(|s| s.pixels as f64).sum();
    let c0 = if sum_tris > 0.0 { sum_measured / sum_tris } else { 0.0 };

    let mut s_tt = 0.0;
    let mut s_tp = 0.0;
    let mut s_pp = 0.0;
    let mut s_tm = 0.0;
    let mut s_pm = 0.0;
    for s in samples {
        let tv = s.tv as f64;
        let px = s.pixels as f64;
        let m = s.measured_cycles as f64;
        s_tt += tv * tv;
        s_tp += tv * px;
        s_pp += px * px;
        s_tm += tv * m;
        s_pm += px * m;
    }
    let det = s_tt * s_pp - s_tp * s_tp;
    let (c1, c2) = if det > 1e-9 * s_tt.max(1.0) * s_pp.max(1.0) {
        let c1 = (s_tm * s_pp - s_pm * s_tp) / det;
        let c2 = (s_pm * s_tt - s_tm * s_tp) / det;
        (c1.max(0.0), c2.max(0.0))
    } else {
        // Rank < 2: split the measured time between the signals.
        match (sum_tv > 0.0, sum_px > 0.0) {
            (true, true) => (0.5 * sum_measured / sum_tv, 0.5 * sum_measured / sum_px),
            (true, false) => (sum_measured / sum_tv, 0.0),
            (false, true) => (0.0, sum_measured / sum_px),
            (false, false) => (0.0, 0.0),
        }
    };

    Ok(PredictorState { c0, c1, c2, calibrated: true, samples: samples.to_vec() })
}

/// Predicted total rendering time of a batch from its triangle count.
pub fn predict_total(ps: &PredictorState, signals: &BatchSignals) -> Result<u64> {
    if !ps.calibrated {
        return Err(Error::State("predictor not calibrated".into()));
    }
    Ok((ps.c0 * signals.triangles as f64).round() as u64)
}

/// Per-GPM work counters: total predicted cycles of assigned batches and
/// elapsed cycles accrued as the pipeline reports progress. Reset per frame.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct GpmCounters {
    pub total_predicted_cycles: u64,
    pub elapsed_cycles: u64,
}

impl GpmCounters {
    pub fn remaining(&self) -> i64 {
        self.total_predicted_cycles as i64 - self.elapsed_cycles as i64
    }
}

/// Advances a GPM's elapsed counter by `c1` per transformed vertex and `c2`
/// per rendered pixel.
pub fn advance_elapsed(
    counters: &mut GpmCounters,
    ps: &PredictorState,
    delta_tv: u64,
    delta_pixels: u64,
) {
    counters.elapsed_cycles +=
        (ps.c1 * delta_tv as f64 + ps.c2 * delta_pixels as f64).round() as u64;
}

/// Picks the GPM predicted to become available first: the smallest gap
/// between total-predicted and elapsed counters among GPMs whose batch
/// queue has room. Ties break to the lowest id. `None` means backpressure:
/// every queue is full.
pub fn select_gpm(counters: &[GpmCounters], queue_lens: &[usize]) -> Option<usize> {
    counters
        .iter()
        .zip(queue_lens)
        .enumerate()
        .filter(|(_, (_, len))| **len < MAX_BATCH_QUEUE)
        .min_by_key(|(gpm, (c, _))| (c.remaining(), *gpm))
        .map(|(gpm, _)| gpm)
}

/// Splits the remaining objects of a straggling batch evenly (within one
/// work unit) across the owner and the idle GPMs, ordered by GPM id: the
/// fine-grained tail redistribution. Returns per-participant slices; empty
/// when there is no idle GPM.
pub fn redistribute_straggler(
    remaining: &[&DrawObject],
    owner: usize,
    idle_gpms: &[usize],
) -> Vec<(usize, WorkSlice)> {
    if idle_gpms.is_empty() || remaining.is_empty() {
        return Vec::new();
    }
    let mut participants: Vec<usize> = idle_gpms.to_vec();
    participants.push(owner);
    participants.sort_unstable();
    participants.dedup();
    let k = participants.len();

    let tris: Vec<u64> = remaining.iter().map(|o| o.triangle_count).collect();
    let verts: Vec<u64> = remaining.iter().map(|o| o.vertex_count).collect();
    let pixels: Vec<u64> = remaining.iter().map(|o| o.pixels_per_view).collect();
    let even = vec![1u64; k];
    let tri_carve = carve(&tris, &apportion(tris.iter().sum(), &even));
    let vert_carve = carve(&verts, &apportion(verts.iter().sum(), &even));
    let pixel_carve = carve(&pixels, &apportion(pixels.iter().sum(), &even));

    let mut slices = Vec::new();
    for (p, gpm) in participants.iter().enumerate() {
        for (i, obj) in remaining.iter().enumerate() {
            let slice = WorkSlice {
                object_id: obj.object_id,
                triangle_units: tri_carve[p][i],
                vertex_units: vert_carve[p][i],
                pixel_units: pixel_carve[p][i],
                triangle_total: obj.triangle_count,
                vertex_total: obj.vertex_count,
                pixel_total: obj.pixels_per_view,
                views: Views::Both,
            };
            if !slice.is_empty() {
                slices.push((*gpm, slice));
            }
        }
    }
    slices
}

/// Assigns contiguous runs of per-object units to participants so each
/// participant receives exactly its quota.
fn carve(per_obj: &[u64], quotas: &[u64]) -> Vec<Vec<u64>> {
    let mut out = vec![vec![0u64; per_obj.len()]; quotas.len()];
    let mut p = 0usize;
    let mut quota_left = quotas.first().copied().unwrap_or(0);
    for (i, &units) in per_obj.iter().enumerate() {
        let mut left = units;
        while left > 0 {
            if quota_left == 0 {
                if p + 1 < quotas.len() {
                    p += 1;
                    quota_left = quotas[p];
                    continue;
                }
                // Quotas exhausted (cannot happen when they sum to the total).
                quota_left = left;
                continue;
            }
            let take = left.min(quota_left);
            out[p][i] += take;
            left -= take;
            quota_left -= take;
        }
    }
    out
}

/// Everything a frame dispatch produces.
#[derive(Debug, Clone)]
pub struct DispatchResult {
    pub entries: Vec<ScheduleLogEntry>,
    pub per_gpm_completion: Vec<u64>,
    pub per_gpm_busy: Vec<u64>,
    pub rendered_per_view: (u64, u64),
    /// Renderer -> rendered pixels per framebuffer partition.
    pub pixels_by_partition: BTreeMap<usize, Vec<u64>>,
    /// Per-unit composition arrivals: (completion cycle, pixels per
    /// framebuffer partition).
    pub comp_events: Vec<(u64, Vec<u64>)>,
    /// True when the frame ran entirely round-robin because the predictor
    /// could not be calibrated (fewer than eight batches seen).
    pub round_robin_frame: bool,
}

/// Dispatches one frame's batches.
///
/// While the predictor is uncalibrated, batches go round-robin with
/// first-touch placement; once eight measured batches exist the predictor
/// is fitted and every further batch goes to the GPM predicted to free up
/// first, with its union footprint pre-allocated at dispatch so the copy
/// overlaps queued work. Queues hold at most four batches. After the last
/// batch, if exactly one batch is still running while every other GPM is
/// idle, its unstarted objects are redistributed across all GPMs.
pub fn dispatch_frame(
    frame: &Frame,
    batches: &[Batch],
    env: &mut ExecEnv<'_>,
    predictor: &mut Option<PredictorState>,
) -> Result<DispatchResult> {
    // Probe pass: detect a straggler tail worth redistributing.
    let machine_snapshot = env.machine.clone();
    let ledger_snapshot = env.ledger.clone();
    let predictor_snapshot = predictor.clone();

    let probe = run_dispatch(frame, batches, env, predictor, None)?;
    let Some(plan) = find_straggler(&probe, batches, env.machine.cfg.gpm_count) else {
        return Ok(probe.result);
    };

    // Replay with the straggler batch truncated at the split point; the
    // redistribution is applied after the dispatch loop at the time every
    // other GPM actually went idle.
    *env.machine = machine_snapshot;
    *env.ledger = ledger_snapshot;
    *predictor = predictor_snapshot;
    let replay = run_dispatch(frame, batches, env, predictor, Some(&plan))?;
    Ok(replay.result)
}

#[derive(Debug, Clone, Copy)]
struct StragglerPlan {
    batch_index: usize,
    /// Members `[first_unstarted..]` are redistributed.
    first_unstarted: usize,
}

struct BatchRun {
    gpm: usize,
    end: u64,
    /// Absolute completion cycle of each executed member.
    member_ends: Vec<u64>,
    start: u64,
}

struct DispatchRun {
    result: DispatchResult,
    runs: Vec<BatchRun>,
}

fn find_straggler(
    probe: &DispatchRun,
    batches: &[Batch],
    gpm_count: usize,
) -> Option<StragglerPlan> {
    if gpm_count < 2 || batches.is_empty() {
        return None;
    }
    let completion = &probe.result.per_gpm_completion;
    let owner = (0..gpm_count).max_by_key(|g| (completion[*g], gpm_count - g))?;
    let others_end = (0..gpm_count)
        .filter(|g| *g != owner)
        .map(|g| completion[g])
        .max()
        .unwrap_or(0);
    if completion[owner] <= others_end {
        return None;
    }
    // Exactly one batch may still be running on the owner at the moment the
    // rest of the machine drains.
    let running: Vec<usize> = probe
        .runs
        .iter()
        .enumerate()
        .filter(|(_, r)| r.gpm == owner && r.end > others_end)
        .map(|(i, _)| i)
        .collect();
    let [batch_index] = running[..] else { return None };
    // Calibration-round batches are never truncated: their measured times
    // feed the predictor.
    if probe.result.entries[batch_index].round_robin {
        return None;
    }
    let run = &probe.runs[batch_index];
    let first_unstarted = (0..batches[batch_index].members.len()).find(|&m| {
        let member_start = if m == 0 { run.start } else { run.member_ends[m - 1] };
        member_start >= others_end
    })?;
    Some(StragglerPlan { batch_index, first_unstarted })
}

fn object_by_id<'a>(frame: &'a Frame, id: u64) -> Result<&'a DrawObject> {
    frame
        .objects
        .iter()
        .find(|o| o.object_id == id)
        .ok_or_else(|| Error::Domain(format!("batch member {id} not in frame")))
}

/// Pages covering a batch's union texture footprint plus its members'
/// vertex buffers.
fn batch_footprint_pages(
    frame: &Frame,
    batch: &Batch,
    members: &[u64],
    segment: u32,
    page_bytes: u64,
    vertex_fetch_bytes: u64,
) -> Result<Vec<PageId>> {
    let mut pages = Vec::new();
    for (texture_id, bytes) in &batch.union_textures {
        pages.extend(pages_for_bytes(
            segment,
            PageSpace::Texture { texture_id: *texture_id },
            *bytes,
            page_bytes,
        ));
    }
    for id in members {
        let obj = object_by_id(frame, *id)?;
        pages.extend(pages_for_bytes(
            segment,
            PageSpace::Vertex { frame_id: frame.frame_id, object_id: obj.object_id },
            obj.vertex_count * vertex_fetch_bytes,
            page_bytes,
        ));
    }
    Ok(pages)
}

fn run_dispatch(
    frame: &Frame,
    batches: &[Batch],
    env: &mut ExecEnv<'_>,
    predictor: &mut Option<PredictorState>,
    plan: Option<&StragglerPlan>,
) -> Result<DispatchRun> {
    let n = env.machine.cfg.gpm_count;
    let page_bytes = env.machine.cfg.page_bytes;
    let vertex_fetch_bytes = env.machine.cfg.vertex_fetch_bytes;
    let segment = env.segment;

    let mut timeline = vec![0u64; n];
    let mut busy = vec![0u64; n];
    let mut pa_free = vec![0u64; n];
    let mut queues: Vec<VecDeque<(usize, u64)>> = vec![VecDeque::new(); n];
    let mut counters = vec![GpmCounters::default(); n];
    // Per-GPM stage-completion events (cycle, delta_tv, delta_pixels),
    // consumed in time order as the dispatch clock advances.
    let mut events: Vec<VecDeque<(u64, u64, u64)>> = vec![VecDeque::new(); n];
    let mut now = 0u64;

    let mut rendered = (0u64, 0u64);
    let mut pixels_by_partition: BTreeMap<usize, Vec<u64>> = BTreeMap::new();
    let mut comp_events: Vec<(u64, Vec<u64>)> = Vec::new();
    let mut entries = Vec::new();
    let mut runs: Vec<BatchRun> = Vec::new();
    let mut rr_samples: Vec<(usize, CalibrationSample)> = Vec::new();
    let round_robin_frame = predictor.is_none() && batches.len() < CALIBRATION_BATCHES;

    for (i, batch) in batches.iter().enumerate() {
        let signals = batch_signals(batch, frame, true)?;
        let calibrated = predictor.as_ref().is_some_and(|p| p.calibrated);

        let (gpm, dispatch_cycle, copy_done) = if !calibrated {
            // Round-robin with first-touch placement; no pre-allocation.
            let gpm = i % n;
            while queues[gpm].len() >= MAX_BATCH_QUEUE {
                let free_at = queues[gpm].front().expect("queue nonempty").1;
                now = now.max(free_at);
                drain(&mut queues, now);
            }
            (gpm, now, 0)
        } else {
            let gpm = loop {
                settle(&mut counters, &mut events, predictor.as_ref().unwrap(), now);
                let lens: Vec<usize> = queues.iter().map(|q| q.len()).collect();
                match select_gpm(&counters, &lens) {
                    Some(g) => break g,
                    None => {
                        // Backpressure: wait for the earliest completion.
                        let earliest = queues
                            .iter()
                            .filter_map(|q| q.front().map(|(_, end)| *end))
                            .min()
                            .expect("full queues imply inflight batches");
                        now = now.max(earliest);
                        drain(&mut queues, now);
                    }
                }
            };
            // Pre-allocate the batch footprint; the PA unit fetches batches
            // in dispatch order, and the copy overlaps queued work.
            let pages = batch_footprint_pages(
                frame,
                batch,
                &batch.members,
                segment,
                page_bytes,
                vertex_fetch_bytes,
            )?;
            let copy_cycles = env.preallocate(gpm, &pages)?;
            let copy_start = now.max(pa_free[gpm]);
            let copy_done = copy_start + copy_cycles;
            pa_free[gpm] = copy_done;
            (gpm, now, copy_done)
        };

        // Execute members in submission order. A planned straggler batch is
        // truncated at the split point; its tail runs after the loop.
        let truncate_at = match plan {
            Some(p) if p.batch_index == i => p.first_unstarted,
            _ => batch.members.len(),
        };
        let start = timeline[gpm].max(dispatch_cycle).max(copy_done);
        let mut offset = 0u64;
        let mut member_ends = Vec::with_capacity(truncate_at);
        for id in &batch.members[..truncate_at] {
            let obj = object_by_id(frame, *id)?;
            let outcome =
                env.exec_slice(frame.frame_id, obj, &WorkSlice::full(obj, Views::Both), true, gpm)?;
            events[gpm].push_back((start + offset + outcome.geometry_end, outcome.tv, 0));
            events[gpm].push_back((start + offset + outcome.fragment_end, 0, outcome.pixels));
            offset += outcome.cycles;
            member_ends.push(start + offset);
            accumulate_output(&mut rendered, &mut pixels_by_partition, gpm, &outcome);
            if let Some(routed) = &outcome.pixels_by_partition {
                comp_events.push((start + offset, routed.clone()));
            }
        }
        let end = start + offset;
        timeline[gpm] = end;
        busy[gpm] += offset;
        queues[gpm].push_back((i, end));
        debug_assert!(queues[gpm].len() <= MAX_BATCH_QUEUE);

        let predicted = match predictor.as_ref() {
            Some(ps) => {
                let p = predict_total(ps, &signals)?;
                counters[gpm].total_predicted_cycles += p;
                p
            }
            None => 0,
        };
        entries.push(ScheduleLogEntry {
            batch_id: batch.batch_id,
            frame_id: frame.frame_id,
            gpm,
            dispatch_cycle,
            start_cycle: start,
            end_cycle: end,
            predicted_cycles: predicted,
            round_robin: !calibrated,
            slices: Vec::new(),
        });
        runs.push(BatchRun { gpm, end, member_ends, start });

        if !calibrated {
            rr_samples.push((
                gpm,
                CalibrationSample {
                    triangles: signals.triangles,
                    tv: signals.tv,
                    pixels: signals.pixels,
                    measured_cycles: offset.max(1),
                },
            ));
            if predictor.is_none() && rr_samples.len() == CALIBRATION_BATCHES {
                // Calibration barrier: the measured times come back only
                // once the whole round completes.
                let barrier = runs.iter().map(|r| r.end).max().unwrap_or(now);
                now = now.max(barrier);
                drain(&mut queues, now);
                let samples: Vec<CalibrationSample> =
                    rr_samples.iter().map(|(_, s)| *s).collect();
                let ps = calibrate(&samples)?;
                for (gpm, sample) in &rr_samples {
                    let sig = BatchSignals {
                        triangles: sample.triangles,
                        tv: sample.tv,
                        pixels: sample.pixels,
                    };
                    counters[*gpm].total_predicted_cycles += predict_total(&ps, &sig)?;
                    advance_elapsed(&mut counters[*gpm], &ps, sample.tv, sample.pixels);
                }
                for ev in &mut events {
                    ev.clear();
                }
                *predictor = Some(ps);
            }
        }
    }

    // Fine-grained tail redistribution, applied at the cycle the rest of
    // the machine actually drained in this run.
    if let Some(plan) = plan {
        apply_redistribution(
            frame,
            batches,
            env,
            plan,
            &mut timeline,
            &mut busy,
            &mut rendered,
            &mut pixels_by_partition,
            &mut comp_events,
            &mut entries,
            &runs,
        )?;
    }

    let result = DispatchResult {
        entries,
        per_gpm_completion: timeline,
        per_gpm_busy: busy,
        rendered_per_view: rendered,
        pixels_by_partition,
        comp_events,
        round_robin_frame,
    };
    Ok(DispatchRun { result, runs })
}

#[allow(clippy::too_many_arguments)]
fn apply_redistribution(
    frame: &Frame,
    batches: &[Batch],
    env: &mut ExecEnv<'_>,
    plan: &StragglerPlan,
    timeline: &mut [u64],
    busy: &mut [u64],
    rendered: &mut (u64, u64),
    pixels_by_partition: &mut BTreeMap<usize, Vec<u64>>,
    comp_events: &mut Vec<(u64, Vec<u64>)>,
    entries: &mut [ScheduleLogEntry],
    runs: &[BatchRun],
) -> Result<()> {
    let n = env.machine.cfg.gpm_count;
    let batch = &batches[plan.batch_index];
    let run = &runs[plan.batch_index];
    let owner = run.gpm;
    let trigger = (0..n)
        .filter(|g| *g != owner)
        .map(|g| timeline[g])
        .max()
        .unwrap_or(0)
        .max(run.start);
    let owner_boundary = run.member_ends.last().copied().unwrap_or(run.start);

    let remaining_ids = &batch.members[plan.first_unstarted..];
    let remaining: Vec<&DrawObject> = remaining_ids
        .iter()
        .map(|id| object_by_id(frame, *id))
        .collect::<Result<_>>()?;
    let idle: Vec<usize> = (0..n).filter(|g| *g != owner).collect();
    let slices = redistribute_straggler(&remaining, owner, &idle);
    if slices.is_empty() {
        return Ok(());
    }

    // The PA units duplicate the remaining footprint into every participant
    // (owner first, so fresh pages home where the batch lives), eliminating
    // remote accesses for the slices; copies are charged to the links.
    let pages = batch_footprint_pages(
        frame,
        batch,
        remaining_ids,
        env.segment,
        env.machine.cfg.page_bytes,
        env.machine.cfg.vertex_fetch_bytes,
    )?;
    let mut copy_done = vec![trigger; n];
    let mut participants: Vec<usize> = slices.iter().map(|(g, _)| *g).collect();
    participants.sort_unstable();
    participants.dedup();
    if let Some(pos) = participants.iter().position(|g| *g == owner) {
        participants.remove(pos);
        participants.insert(0, owner);
    }
    for &p in &participants {
        copy_done[p] = trigger + env.preallocate(p, &pages)?;
    }

    let mut slice_log = Vec::new();
    for &p in &participants {
        let mut start = copy_done[p].max(timeline[p]);
        if p == owner {
            start = start.max(owner_boundary);
        }
        let mut offset = 0u64;
        for (gpm, slice) in slices.iter().filter(|(g, _)| *g == p) {
            let obj = object_by_id(frame, slice.object_id)?;
            let outcome = env.exec_slice(frame.frame_id, obj, slice, true, *gpm)?;
            offset += outcome.cycles;
            accumulate_output(rendered, pixels_by_partition, *gpm, &outcome);
            if let Some(routed) = &outcome.pixels_by_partition {
                comp_events.push((start + offset, routed.clone()));
            }
            slice_log.push((*gpm, slice.object_id, slice.triangle_units, slice.pixel_units));
        }
        timeline[p] = start + offset;
        busy[p] += offset;
    }

    let entry = &mut entries[plan.batch_index];
    entry.end_cycle = *participants.iter().map(|p| &timeline[*p]).max().unwrap();
    entry.slices = slice_log;
    Ok(())
}

fn accumulate_output(
    rendered: &mut (u64, u64),
    pixels_by_partition: &mut BTreeMap<usize, Vec<u64>>,
    gpm: usize,
    outcome: &crate::sim::UnitOutcome,
) {
    rendered.0 += outcome.rendered_per_view.0;
    rendered.1 += outcome.rendered_per_view.1;
    if let Some(routed) = &outcome.pixels_by_partition {
        let entry = pixels_by_partition
            .entry(gpm)
            .or_insert_with(|| vec![0; routed.len()]);
        for (p, n) in routed.iter().enumerate() {
            entry[p] += n;
        }
    }
}

fn drain(queues: &mut [VecDeque<(usize, u64)>], now: u64) {
    for q in queues {
        while q.front().is_some_and(|(_, end)| *end <= now) {
            q.pop_front();
        }
    }
}

fn settle(
    counters: &mut [GpmCounters],
    events: &mut [VecDeque<(u64, u64, u64)>],
    ps: &PredictorState,
    now: u64,
) {
    for (gpm, ev) in events.iter_mut().enumerate() {
        while ev.front().is_some_and(|(t, _, _)| *t <= now) {
            let (_, dtv, dpx) = ev.pop_front().unwrap();
            advance_elapsed(&mut counters[gpm], ps, dtv, dpx);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn linear_samples() -> Vec<CalibrationSample> {
        // measured = 2 * tv + 0.5 * pixels, rank-2 spread.
        let mut samples = Vec::new();
        for i in 0..8u64 {
            let tv = 100 + 40 * i;
            let pixels = 2000 - 180 * i + 17 * i * i;
            let measured = 2 * tv + pixels / 2;
            samples.push(CalibrationSample {
                triangles: 50 + 10 * i,
                tv,
                pixels,
                measured_cycles: measured,
            });
        }
        samples
    }

    #[test]
    fn calibration_recovers_exact_linear_law() {
        // Even pixel counts so measured = 2*tv + 0.5*px holds exactly.
        let samples: Vec<CalibrationSample> = linear_samples()
            .into_iter()
            .map(|mut s| {
                s.pixels &= !1;
                s.measured_cycles = 2 * s.tv + s.pixels / 2;
                s
            })
            .collect();
        let ps = calibrate(&samples).unwrap();
        assert!((ps.c1 - 2.0).abs() < 1e-9, "c1 = {}", ps.c1);
        assert!((ps.c2 - 0.5).abs() < 1e-9, "c2 = {}", ps.c2);
    }

    #[test]
    fn degenerate_samples_fall_back_to_even_split() {
        let s = CalibrationSample { triangles: 10, tv: 100, pixels: 200, measured_cycles: 400 };
        let samples = vec![s; 8];
        let ps = calibrate(&samples).unwrap();
        let reconstructed = ps.c1 * 100.0 + ps.c2 * 200.0;
        assert!((reconstructed - 400.0).abs() < 1e-9);
    }

    #[test]
    fn c0_is_ratio_of_sums() {
        let samples: Vec<CalibrationSample> = (0..8)
            .map(|i| CalibrationSample {
                triangles: 10 + i,
                tv: 1,
                pixels: 1,
                measured_cycles: (10 + i) * 10,
            })
            .collect();
        let ps = calibrate(&samples).unwrap();
        assert_eq!(ps.c0, 10.0);
        let sig = BatchSignals { triangles: 64, tv: 0, pixels: 0 };
        assert_eq!(predict_total(&ps, &sig).unwrap(), 640);
        assert_eq!(
            predict_total(&ps, &BatchSignals { triangles: 0, tv: 0, pixels: 0 }).unwrap(),
            0
        );
        assert_eq!(
            predict_total(&ps, &BatchSignals { triangles: 4096, tv: 0, pixels: 0 }).unwrap(),
            40960
        );
    }

    #[test]
    fn too_few_samples_is_a_calibration_error() {
        assert!(calibrate(&linear_samples()[..7]).is_err());
    }

    #[test]
    fn uncalibrated_prediction_is_a_state_error() {
        let ps = PredictorState { c0: 0.0, c1: 0.0, c2: 0.0, calibrated: false, samples: vec![] };
        assert!(predict_total(&ps, &BatchSignals { triangles: 1, tv: 1, pixels: 1 }).is_err());
    }

    #[test]
    fn elapsed_advance_and_additivity() {
        let ps = PredictorState { c0: 1.0, c1: 2.0, c2: 0.5, calibrated: true, samples: vec![] };
        let mut c = GpmCounters::default();
        advance_elapsed(&mut c, &ps, 100, 200);
        assert_eq!(c.elapsed_cycles, 300);
        advance_elapsed(&mut c, &ps, 0, 0);
        assert_eq!(c.elapsed_cycles, 300);

        // Two calls differ from one combined call by at most a cycle.
        let mut split = GpmCounters::default();
        advance_elapsed(&mut split, &ps, 33, 77);
        advance_elapsed(&mut split, &ps, 67, 123);
        let mut joint = GpmCounters::default();
        advance_elapsed(&mut joint, &ps, 100, 200);
        assert!(split.elapsed_cycles.abs_diff(joint.elapsed_cycles) <= 1);
    }

    #[test]
    fn select_gpm_argmin_and_tiebreak() {
        let mk = |total: u64| GpmCounters { total_predicted_cycles: total, elapsed_cycles: 0 };
        let counters = vec![mk(100), mk(50), mk(80), mk(200)];
        let lens = vec![0, 0, 0, 0];
        assert_eq!(select_gpm(&counters, &lens), Some(1));

        let counters = vec![mk(50), mk(50), mk(90), mk(90)];
        assert_eq!(select_gpm(&counters, &lens), Some(0));

        // A full queue removes a GPM from consideration.
        let counters = vec![mk(100), mk(50), mk(80), mk(200)];
        let lens = vec![0, 4, 0, 0];
        assert_eq!(select_gpm(&counters, &lens), Some(2));

        let lens = vec![4, 4, 4, 4];
        assert_eq!(select_gpm(&counters, &lens), None);
    }

    #[test]
    fn select_gpm_invariant_under_uniform_scaling() {
        let mk = |total: u64| GpmCounters { total_predicted_cycles: total, elapsed_cycles: 0 };
        let lens = vec![0; 4];
        let base = vec![mk(12), mk(7), mk(30), mk(9)];
        let scaled = vec![mk(36), mk(21), mk(90), mk(27)];
        assert_eq!(select_gpm(&base, &lens), select_gpm(&scaled, &lens));
    }

    #[test]
    fn straggler_split_is_even_within_one_unit() {
        let obj = DrawObject {
            object_id: 9,
            vertex_count: 999,
            triangle_count: 999,
            pixels_per_view: 2000,
            bbox_per_view: [
                crate::trace::Rect { x0: 0, y0: 0, x1: 100, y1: 40 },
                crate::trace::Rect { x0: 960, y0: 0, x1: 1060, y1: 40 },
            ],
            textures: vec![],
            depends_on: vec![],
        };
        let slices = redistribute_straggler(&[&obj], 0, &[1]);
        assert_eq!(slices.len(), 2);
        assert_eq!(slices[0].1.triangle_units, 500);
        assert_eq!(slices[1].1.triangle_units, 499);
        assert_eq!(slices[0].1.pixel_units + slices[1].1.pixel_units, 2000);

        // 4000 remaining per-view pixels over four participants: 1000 each.
        let obj4 = DrawObject { pixels_per_view: 4000, ..obj.clone() };
        let slices = redistribute_straggler(&[&obj4], 0, &[1, 2, 3]);
        assert_eq!(slices.len(), 4);
        assert!(slices.iter().all(|(_, s)| s.pixel_units == 1000));

        assert!(redistribute_straggler(&[&obj], 0, &[]).is_empty());
    }
}
