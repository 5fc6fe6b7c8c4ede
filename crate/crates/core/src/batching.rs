//! Object-oriented middleware: merges both views of an object into one
//! rendering task and groups objects into batches by texture sharing level,
//! so that objects reading the same textures land on the same GPM.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::pipeline::{work_signals, Views};
use crate::trace::Frame;

/// A texture-sharing group scheduled as one unit onto a GPM.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Batch {
    pub batch_id: u64,
    /// Member object ids in submission order.
    pub members: Vec<u64>,
    /// Union footprint: texture_id -> bytes touched (max over members, since
    /// each member touches a prefix of the texture's pages).
    pub union_textures: BTreeMap<u64, u64>,
    pub total_triangles: u64,
    pub total_vertices: u64,
    pub total_pixels_both_views: u64,
    /// True when a dependent object was force-merged, which is the only way
    /// a batch may exceed the triangle cap.
    pub dependency_merged: bool,
}

/// Work signals of a batch, the inputs of the rendering-time predictor.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BatchSignals {
    pub triangles: u64,
    pub tv: u64,
    pub pixels: u64,
}

/// Grouping knobs. The sharing threshold and triangle cap are the framework
/// constants; the lookahead window models a bounded streaming queue.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BatchOptions {
    pub tsl_threshold: f64,
    pub triangle_cap: u64,
    pub lookahead: usize,
}

impl Default for BatchOptions {
    fn default() -> Self {
        BatchOptions { tsl_threshold: 0.5, triangle_cap: 4096, lookahead: 64 }
    }
}

/// Texture sharing level between a root footprint and a candidate object's
/// footprint:
///
/// ```text
/// TSL = sum over shared t of P_r(t) * P_n(t) / sum over shared t of P_r(t)
/// ```
///
/// where `P_r(t)` and `P_n(t)` are the byte shares of texture `t` within the
/// root's and the candidate's total footprint. Always in `[0, 1]`; 0 when
/// the footprints are disjoint.
pub fn tsl(
    root_textures: &BTreeMap<u64, u64>,
    target_textures: &BTreeMap<u64, u64>,
) -> Result<f64> {
    if root_textures.is_empty() || target_textures.is_empty() {
        return Err(Error::Domain("texture sharing level of an empty footprint".into()));
    }
    let root_total: u64 = root_textures.values().sum();
    let target_total: u64 = target_textures.values().sum();
    if root_total == 0 || target_total == 0 {
        return Err(Error::Domain("texture footprint with zero bytes".into()));
    }
    let mut numerator = 0.0;
    let mut denominator = 0.0;
    for (id, root_bytes) in root_textures {
        if let Some(target_bytes) = target_textures.get(id) {
            let p_r = *root_bytes as f64 / root_total as f64;
            let p_n = *target_bytes as f64 / target_total as f64;
            numerator += p_r * p_n;
            denominator += p_r;
        }
    }
    if denominator == 0.0 {
        Ok(0.0)
    } else {
        Ok(numerator / denominator)
    }
}

/// One grouping decision, recorded so tests can audit the threshold rule.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MergeRecord {
    pub batch_id: u64,
    pub object_id: u64,
    /// Sharing level against the batch union at merge time. `None` for the
    /// root member and for forced dependency merges.
    pub tsl: Option<f64>,
    pub forced: bool,
}

pub struct BatchBuild {
    pub batches: Vec<Batch>,
    pub merges: Vec<MergeRecord>,
}

/// Groups a frame's objects into batches.
///
/// The head of the remaining queue roots a new batch. The builder then
/// scans forward through the lookahead window: objects depending on a
/// member are merged unconditionally (they must follow the programmer's
/// order), and an independent object merges when its sharing level against
/// the evolving union exceeds the threshold, the union becoming the new
/// root. The batch closes when a passing candidate would push the triangle
/// count past the cap, or the window is exhausted. An object whose
/// prerequisite is still unbatched is never pulled forward.
pub fn build_batches(frame: &Frame, opts: &BatchOptions) -> Vec<Batch> {
    build_batches_traced(frame, opts).batches
}

pub fn build_batches_traced(frame: &Frame, opts: &BatchOptions) -> BatchBuild {
    let by_id: BTreeMap<u64, usize> = frame
        .objects
        .iter()
        .enumerate()
        .map(|(i, o)| (o.object_id, i))
        .collect();
    let mut remaining: Vec<usize> = (0..frame.objects.len()).collect();
    let mut batched = vec![false; frame.objects.len()];
    let mut batches: Vec<Batch> = Vec::new();
    let mut merges: Vec<MergeRecord> = Vec::new();

    while !remaining.is_empty() {
        let root_idx = remaining.remove(0);
        let root = &frame.objects[root_idx];
        let batch_id = batches.len() as u64;
        let mut batch = Batch {
            batch_id,
            members: vec![root.object_id],
            union_textures: root
                .textures
                .iter()
                .map(|t| (t.texture_id, t.bytes))
                .collect(),
            total_triangles: root.triangle_count,
            total_vertices: root.vertex_count,
            total_pixels_both_views: 2 * root.pixels_per_view,
            dependency_merged: false,
        };
        batched[root_idx] = true;
        merges.push(MergeRecord { batch_id, object_id: root.object_id, tsl: None, forced: false });

        let mut in_batch = vec![root.object_id];
        let mut pos = 0;
        let mut examined = 0;
        while pos < remaining.len() && examined < opts.lookahead {
            // A forced merge may have pushed the batch past the cap; the cap
            // rule resumes here and closes the batch.
            if batch.total_triangles > opts.triangle_cap {
                break;
            }
            let cand_idx = remaining[pos];
            let cand = &frame.objects[cand_idx];
            examined += 1;

            // Never pull an object ahead of an unbatched prerequisite.
            let deps_ready = cand
                .depends_on
                .iter()
                .all(|d| by_id.get(d).map_or(true, |i| batched[*i]));
            if !deps_ready {
                pos += 1;
                continue;
            }
            let depends_on_member = cand.depends_on.iter().any(|d| in_batch.contains(d));
            if depends_on_member {
                merge(&mut batch, cand, &mut in_batch);
                batch.dependency_merged = true;
                merges.push(MergeRecord {
                    batch_id,
                    object_id: cand.object_id,
                    tsl: None,
                    forced: true,
                });
                batched[cand_idx] = true;
                remaining.remove(pos);
                continue;
            }

            if cand.textures.is_empty() || batch.union_textures.is_empty() {
                pos += 1;
                continue;
            }
            let cand_textures: BTreeMap<u64, u64> = cand
                .textures
                .iter()
                .map(|t| (t.texture_id, t.bytes))
                .collect();
            let level = tsl(&batch.union_textures, &cand_textures)
                .expect("nonempty footprints");
            if level > opts.tsl_threshold {
                if batch.total_triangles + cand.triangle_count > opts.triangle_cap {
                    // The batch is full: stop searching rather than skip.
                    break;
                }
                merge(&mut batch, cand, &mut in_batch);
                merges.push(MergeRecord {
                    batch_id,
                    object_id: cand.object_id,
                    tsl: Some(level),
                    forced: false,
                });
                batched[cand_idx] = true;
                remaining.remove(pos);
            } else {
                pos += 1;
            }
        }
        batches.push(batch);
    }
    BatchBuild { batches, merges }
}

fn merge(batch: &mut Batch, cand: &crate::trace::DrawObject, in_batch: &mut Vec<u64>) {
    batch.members.push(cand.object_id);
    in_batch.push(cand.object_id);
    for t in &cand.textures {
        let entry = batch.union_textures.entry(t.texture_id).or_insert(0);
        *entry = (*entry).max(t.bytes);
    }
    batch.total_triangles += cand.triangle_count;
    batch.total_vertices += cand.vertex_count;
    batch.total_pixels_both_views += 2 * cand.pixels_per_view;
}

/// Aggregates the predictor's work signals over a batch's members, both
/// views merged into one task. The transformed-vertex stream carries a
/// position per view whether multi-projection duplicates it in one pass
/// (`smp_enabled`) or two passes emit it, so the signal totals are the same
/// either way.
pub fn batch_signals(batch: &Batch, frame: &Frame, smp_enabled: bool) -> Result<BatchSignals> {
    let _ = smp_enabled;
    if batch.members.is_empty() {
        return Err(Error::Domain("batch with no members".into()));
    }
    let mut signals = BatchSignals { triangles: 0, tv: 0, pixels: 0 };
    for id in &batch.members {
        let obj = frame
            .objects
            .iter()
            .find(|o| o.object_id == *id)
            .ok_or_else(|| Error::Domain(format!("batch member {id} not in frame")))?;
        let (tv, pixels) = work_signals(obj, Views::Both);
        signals.triangles += obj.triangle_count;
        signals.tv += tv;
        signals.pixels += pixels;
    }
    Ok(signals)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::trace::{DrawObject, Rect, TextureRef};

    fn tex(pairs: &[(u64, u64)]) -> BTreeMap<u64, u64> {
        pairs.iter().copied().collect()
    }

    fn obj(id: u64, tris: u64, textures: &[(u64, u64)], deps: &[u64]) -> DrawObject {
        DrawObject {
            object_id: id,
            vertex_count: tris.max(3),
            triangle_count: tris,
            pixels_per_view: 100,
            bbox_per_view: [
                Rect { x0: 0, y0: 0, x1: 10, y1: 10 },
                Rect { x0: 640, y0: 0, x1: 650, y1: 10 },
            ],
            textures: textures
                .iter()
                .map(|(t, b)| TextureRef { texture_id: *t, bytes: *b })
                .collect(),
            depends_on: deps.to_vec(),
        }
    }

    fn frame(objects: Vec<DrawObject>) -> Frame {
        Frame { frame_id: 0, width: 640, height: 480, objects }
    }

    #[test]
    fn tsl_identical_single_texture_is_one() {
        assert_eq!(tsl(&tex(&[(1, 100)]), &tex(&[(1, 100)])).unwrap(), 1.0);
    }

    #[test]
    fn tsl_hand_evaluated_example() {
        // P_r(A) = 0.5, P_n(A) = 1.0 -> (0.5 * 1.0) / 0.5 = 1.0
        let level = tsl(&tex(&[(1, 50), (2, 50)]), &tex(&[(1, 200)])).unwrap();
        assert!((level - 1.0).abs() < 1e-12);
    }

    #[test]
    fn tsl_disjoint_is_zero() {
        assert_eq!(tsl(&tex(&[(1, 50), (2, 50)]), &tex(&[(3, 100)])).unwrap(), 0.0);
    }

    #[test]
    fn tsl_empty_footprint_is_domain_error() {
        assert!(tsl(&tex(&[]), &tex(&[(1, 1)])).is_err());
    }

    #[test]
    fn single_object_frame_gives_one_batch() {
        let f = frame(vec![obj(0, 100, &[(1, 100)], &[])]);
        let batches = build_batches(&f, &BatchOptions::default());
        assert_eq!(batches.len(), 1);
        assert_eq!(batches[0].members, vec![0]);
    }

    #[test]
    fn shared_texture_objects_group_until_cap() {
        // Four 1000-triangle objects sharing texture A exclusively: one
        // batch of four (4000 <= 4096). A fifth would overflow and is cut.
        let objs: Vec<_> = (0..5).map(|i| obj(i, 1000, &[(7, 500)], &[])).collect();
        let f = frame(objs);
        let batches = build_batches(&f, &BatchOptions::default());
        assert_eq!(batches[0].members, vec![0, 1, 2, 3]);
        assert_eq!(batches[0].total_triangles, 4000);
        assert_eq!(batches.len(), 2);
        assert!(!batches[0].dependency_merged);
    }

    #[test]
    fn disjoint_textures_give_singleton_batches() {
        let f = frame(vec![obj(0, 100, &[(1, 100)], &[]), obj(1, 100, &[(2, 100)], &[])]);
        let batches = build_batches(&f, &BatchOptions::default());
        assert_eq!(batches.len(), 2);
    }

    #[test]
    fn dependent_object_is_force_merged_past_cap() {
        let f = frame(vec![
            obj(0, 4000, &[(1, 100)], &[]),
            obj(1, 500, &[(9, 100)], &[0]), // depends on 0, disjoint textures
        ]);
        let build = build_batches_traced(&f, &BatchOptions::default());
        assert_eq!(build.batches.len(), 1);
        assert!(build.batches[0].dependency_merged);
        assert_eq!(build.batches[0].total_triangles, 4500);
        assert!(build.merges.iter().any(|m| m.object_id == 1 && m.forced));
    }

    #[test]
    fn object_never_precedes_unbatched_prerequisite() {
        // Object 2 shares with 0 but depends on 1, which shares nothing.
        let f = frame(vec![
            obj(0, 100, &[(1, 100)], &[]),
            obj(1, 100, &[(5, 100)], &[]),
            obj(2, 100, &[(1, 100)], &[1]),
        ]);
        let batches = build_batches(&f, &BatchOptions::default());
        let batch_of = |id: u64| batches.iter().position(|b| b.members.contains(&id)).unwrap();
        assert!(batch_of(1) <= batch_of(2));
    }

    #[test]
    fn union_grows_and_becomes_new_root() {
        let f = frame(vec![
            obj(0, 100, &[(1, 100)], &[]),
            obj(1, 100, &[(1, 80), (2, 20)], &[]),
            obj(2, 100, &[(2, 100)], &[]),
        ]);
        let batches = build_batches(&f, &BatchOptions::default());
        // Object 1 joins the root (share 0.8); object 2 is then measured
        // against the union {1:100, 2:20} where texture 2 holds a 1/6 root
        // share but full candidate share: TSL = 1.0 > 0.5, so it joins too,
        // growing the union footprint of texture 2 to its own 100 bytes.
        assert_eq!(batches.len(), 1);
        assert_eq!(batches[0].union_textures, tex(&[(1, 100), (2, 100)]));
    }

    #[test]
    fn batch_signals_match_pipeline_example() {
        let mut o = obj(0, 64, &[(1, 100)], &[]);
        o.vertex_count = 128;
        o.pixels_per_view = 1000;
        let f = frame(vec![o]);
        let batches = build_batches(&f, &BatchOptions::default());
        let signals = batch_signals(&batches[0], &f, true).unwrap();
        assert_eq!(signals, BatchSignals { triangles: 64, tv: 256, pixels: 2000 });
    }

    #[test]
    fn empty_batch_is_domain_error() {
        let f = frame(vec![]);
        let batch = Batch {
            batch_id: 0,
            members: vec![],
            union_textures: BTreeMap::new(),
            total_triangles: 0,
            total_vertices: 0,
            total_pixels_both_views: 0,
            dependency_merged: false,
        };
        assert!(batch_signals(&batch, &f, true).is_err());
    }

    #[test]
    fn merged_identical_singletons_double_signals() {
        let a = obj(0, 64, &[(1, 100)], &[]);
        let b = obj(1, 64, &[(1, 100)], &[]);
        let f = frame(vec![a, b]);
        let batches = build_batches(&f, &BatchOptions::default());
        assert_eq!(batches.len(), 1);
        let s = batch_signals(&batches[0], &f, true).unwrap();
        let single = BatchSignals { triangles: 64, tv: 64 * 2 * 2 / 2, pixels: 200 };
        // Each member contributes tv = 2 * verts and pixels = 2 * ppv.
        assert_eq!(s.triangles, 2 * single.triangles);
        assert_eq!(s.tv, 2 * 2 * 64);
        assert_eq!(s.pixels, 2 * 2 * 100);
    }
}
