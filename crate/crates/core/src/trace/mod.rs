//! Workload data model: stereo frames of draw objects with texture
//! footprints, plus a deterministic scene generator and the `rrtrace`
//! text format.

mod format;
mod gen;

pub use format::{parse_trace, serialize_trace};
pub use gen::{generate_scene, reference_scene, reference_scene_params, SceneParams, TriangleDistribution};

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A slice of one texture that an object reads while shading.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TextureRef {
    pub texture_id: u64,
    /// Bytes of this texture the object touches. Always > 0.
    pub bytes: u64,
}

/// Axis-aligned half-open rectangle `[x0,x1) x [y0,y1)` in final-frame
/// screen space (the stereo frame is `2*width` columns wide).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Rect {
    pub x0: u32,
    pub y0: u32,
    pub x1: u32,
    pub y1: u32,
}

impl Rect {
    pub fn width(&self) -> u32 {
        self.x1.saturating_sub(self.x0)
    }

    pub fn height(&self) -> u32 {
        self.y1.saturating_sub(self.y0)
    }

    pub fn area(&self) -> u64 {
        self.width() as u64 * self.height() as u64
    }

    pub fn is_empty(&self) -> bool {
        self.x0 >= self.x1 || self.y0 >= self.y1
    }
}

/// One draw call: geometry counts, per-eye pixel workload, screen bounds
/// for both eyes, the texture footprint, and submission-order dependencies.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DrawObject {
    pub object_id: u64,
    pub vertex_count: u64,
    pub triangle_count: u64,
    /// Pixels this object renders into one eye's image.
    pub pixels_per_view: u64,
    /// Bounding boxes in final-frame coordinates: `[left eye, right eye]`.
    pub bbox_per_view: [Rect; 2],
    pub textures: Vec<TextureRef>,
    /// Object ids this object must render after. All refer to objects with
    /// a smaller submission index in the same frame.
    pub depends_on: Vec<u64>,
}

/// One stereo frame: per-eye resolution and the ordered draw list.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Frame {
    pub frame_id: u64,
    /// Per-eye resolution; the stereo frame is `2 * width` columns wide.
    pub width: u32,
    pub height: u32,
    /// Submission order is the programmer-defined rendering order.
    pub objects: Vec<DrawObject>,
}

/// A full workload: frames, the texture size table, and the texture-read
/// rate of the fragment stage.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Trace {
    pub frames: Vec<Frame>,
    /// texture_id -> total texture bytes.
    pub texture_table: BTreeMap<u64, u64>,
    /// Texture bytes consumed per rendered fragment.
    pub bytes_per_fragment: u64,
    pub metadata: BTreeMap<String, String>,
}

impl Trace {
    pub fn total_objects(&self) -> usize {
        self.frames.iter().map(|f| f.objects.len()).sum()
    }

    /// Checks every data-model invariant; parse and generation both route
    /// through this.
    pub fn validate(&self) -> Result<()> {
        if self.bytes_per_fragment == 0 {
            return Err(Error::Param {
                field: "bytes_per_fragment",
                msg: "must be positive".into(),
            });
        }
        for frame in &self.frames {
            if frame.width == 0 || frame.height == 0 {
                return Err(Error::Param {
                    field: "resolution",
                    msg: format!("frame {} has a zero dimension", frame.frame_id),
                });
            }
            let mut seen = BTreeMap::new();
            for (idx, obj) in frame.objects.iter().enumerate() {
                validate_object(obj, frame, idx, &seen, &self.texture_table)?;
                seen.insert(obj.object_id, idx);
            }
        }
        Ok(())
    }
}

fn validate_object(
    obj: &DrawObject,
    frame: &Frame,
    idx: usize,
    earlier: &BTreeMap<u64, usize>,
    texture_table: &BTreeMap<u64, u64>,
) -> Result<()> {
    let fail = |msg: String| Error::Validation {
        object_id: obj.object_id,
        msg,
    };
    if earlier.contains_key(&obj.object_id) {
        return Err(fail(format!("duplicate object id in frame {}", frame.frame_id)));
    }
    if obj.vertex_count == 0 {
        return Err(fail("vertex_count must be positive".into()));
    }
    if obj.triangle_count == 0 {
        return Err(fail("triangle_count must be positive".into()));
    }
    if obj.triangle_count > obj.vertex_count * 3 {
        return Err(fail(format!(
            "triangle_count {} exceeds 3 x vertex_count {}",
            obj.triangle_count, obj.vertex_count
        )));
    }
    // Each view's bbox must sit inside its eye's half of the stereo frame.
    let eye_bounds = [(0, frame.width), (frame.width, 2 * frame.width)];
    for (view, (lo, hi)) in obj.bbox_per_view.iter().zip(eye_bounds) {
        if view.x0 > view.x1 || view.y0 > view.y1 {
            return Err(fail("bbox has inverted corners".into()));
        }
        if view.x0 < lo || view.x1 > hi || view.y1 > frame.height {
            return Err(fail(format!(
                "bbox ({},{})..({},{}) outside its eye half [{} .. {}) x [0 .. {})",
                view.x0, view.y0, view.x1, view.y1, lo, hi, frame.height
            )));
        }
        if obj.pixels_per_view > 0 && view.is_empty() {
            return Err(fail("object with pixels has an empty bbox".into()));
        }
        if obj.pixels_per_view > view.area() {
            return Err(fail(format!(
                "pixels_per_view {} exceeds bbox area {}",
                obj.pixels_per_view,
                view.area()
            )));
        }
    }
    let mut seen_tex = BTreeMap::new();
    for t in &obj.textures {
        if t.bytes == 0 {
            return Err(fail(format!("texture {} referenced with zero bytes", t.texture_id)));
        }
        let Some(total) = texture_table.get(&t.texture_id) else {
            return Err(fail(format!("unknown texture id {}", t.texture_id)));
        };
        if t.bytes > *total {
            return Err(fail(format!(
                "texture {} footprint {} exceeds texture size {}",
                t.texture_id, t.bytes, total
            )));
        }
        if seen_tex.insert(t.texture_id, ()).is_some() {
            return Err(fail(format!("texture {} referenced twice", t.texture_id)));
        }
    }
    for dep in &obj.depends_on {
        match earlier.get(dep) {
            Some(dep_idx) if *dep_idx < idx => {}
            _ => {
                return Err(fail(format!(
                    "dependency {dep} does not name an earlier object"
                )))
            }
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny_trace() -> Trace {
        let obj = DrawObject {
            object_id: 0,
            vertex_count: 12,
            triangle_count: 10,
            pixels_per_view: 100,
            bbox_per_view: [
                Rect { x0: 0, y0: 0, x1: 20, y1: 20 },
                Rect { x0: 64, y0: 0, x1: 84, y1: 20 },
            ],
            textures: vec![TextureRef { texture_id: 1, bytes: 4096 }],
            depends_on: vec![],
        };
        Trace {
            frames: vec![Frame { frame_id: 0, width: 64, height: 64, objects: vec![obj] }],
            texture_table: [(1u64, 8192u64)].into_iter().collect(),
            bytes_per_fragment: 4,
            metadata: BTreeMap::new(),
        }
    }

    #[test]
    fn valid_trace_passes() {
        tiny_trace().validate().unwrap();
    }

    #[test]
    fn unknown_texture_rejected() {
        let mut t = tiny_trace();
        t.frames[0].objects[0].textures[0].texture_id = 99;
        let err = t.validate().unwrap_err();
        assert!(matches!(err, Error::Validation { object_id: 0, .. }), "{err}");
    }

    #[test]
    fn bbox_in_wrong_eye_rejected() {
        let mut t = tiny_trace();
        // Right-eye bbox placed in the left half.
        t.frames[0].objects[0].bbox_per_view[1] = Rect { x0: 0, y0: 0, x1: 20, y1: 20 };
        assert!(t.validate().is_err());
    }

    #[test]
    fn too_many_triangles_rejected() {
        let mut t = tiny_trace();
        t.frames[0].objects[0].triangle_count = 37; // 3 * 12 = 36
        assert!(t.validate().is_err());
    }

    #[test]
    fn forward_dependency_rejected() {
        let mut t = tiny_trace();
        t.frames[0].objects[0].depends_on = vec![5];
        assert!(t.validate().is_err());
    }
}
