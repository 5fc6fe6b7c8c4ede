//! The `rrtrace` line-oriented text format.
//!
//! ```text
//! rrtrace v1 <frames> <width> <height> <bytes_per_fragment>
//! M <key> <value>                 (optional metadata, key-sorted)
//! T <id> <bytes>                  (texture table, id-sorted)
//! F <frame_id>
//! O <id> <verts> <tris> <pixels_per_view> <lx0> <ly0> <lx1> <ly1> \
//!   <rx0> <ry0> <rx1> <ry1> deps=<csv> tex=<id:bytes,...>
//! ```
//!
//! All integers decimal, LF line endings. Serialization is canonical:
//! key-sorted maps, sorted dependency lists, and a trailing newline, so
//! equal traces serialize to identical bytes.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use crate::error::{Error, Result};
use crate::trace::{DrawObject, Frame, Rect, TextureRef, Trace};

/// Serializes a trace to its canonical byte form.
pub fn serialize_trace(trace: &Trace) -> Vec<u8> {
    let mut out = String::new();
    let width = trace.frames.first().map_or(0, |f| f.width);
    let height = trace.frames.first().map_or(0, |f| f.height);
    writeln!(
        out,
        "rrtrace v1 {} {} {} {}",
        trace.frames.len(),
        width,
        height,
        trace.bytes_per_fragment
    )
    .unwrap();
    for (key, value) in &trace.metadata {
        writeln!(out, "M {key} {value}").unwrap();
    }
    for (id, bytes) in &trace.texture_table {
        writeln!(out, "T {id} {bytes}").unwrap();
    }
    for frame in &trace.frames {
        writeln!(out, "F {}", frame.frame_id).unwrap();
        for obj in &frame.objects {
            let [l, r] = obj.bbox_per_view;
            let mut deps: Vec<u64> = obj.depends_on.clone();
            deps.sort_unstable();
            let deps = deps
                .iter()
                .map(|d| d.to_string())
                .collect::<Vec<_>>()
                .join(",");
            let mut tex: Vec<&TextureRef> = obj.textures.iter().collect();
            tex.sort_unstable_by_key(|t| t.texture_id);
            let tex = tex
                .iter()
                .map(|t| format!("{}:{}", t.texture_id, t.bytes))
                .collect::<Vec<_>>()
                .join(",");
            writeln!(
                out,
                "O {} {} {} {} {} {} {} {} {} {} {} {} deps={} tex={}",
                obj.object_id,
                obj.vertex_count,
                obj.triangle_count,
                obj.pixels_per_view,
                l.x0, l.y0, l.x1, l.y1,
                r.x0, r.y0, r.x1, r.y1,
                deps,
                tex
            )
            .unwrap();
        }
    }
    out.into_bytes()
}

/// Parses and validates a trace file.
pub fn parse_trace(bytes: &[u8]) -> Result<Trace> {
    let text = std::str::from_utf8(bytes).map_err(|e| Error::Parse {
        line: 1 + bytes[..e.valid_up_to()].iter().filter(|b| **b == b'\n').count(),
        msg: "not valid UTF-8".into(),
    })?;
    let mut parser = Parser::new(text);
    let trace = parser.parse()?;
    trace.validate()?;
    Ok(trace)
}

struct Parser<'a> {
    lines: std::iter::Enumerate<std::str::Lines<'a>>,
}

struct Header {
    frames: usize,
    width: u32,
    height: u32,
    bytes_per_fragment: u64,
}

impl<'a> Parser<'a> {
    fn new(text: &'a str) -> Self {
        Parser { lines: text.lines().enumerate() }
    }

    fn parse(&mut self) -> Result<Trace> {
        let (line_no, header_line) = self
            .lines
            .next()
            .ok_or_else(|| err(1, "empty input"))?;
        let header = parse_header(line_no + 1, header_line)?;

        let mut metadata = BTreeMap::new();
        let mut texture_table = BTreeMap::new();
        let mut frames: Vec<Frame> = Vec::with_capacity(header.frames);

        for (idx, line) in &mut self.lines {
            let line_no = idx + 1;
            let line = line.trim_end_matches('\r');
            if line.is_empty() {
                return Err(err(line_no, "blank line"));
            }
            let (tag, rest) = line.split_at(1);
            let rest = rest.strip_prefix(' ').unwrap_or(rest);
            match tag {
                "M" => {
                    if !texture_table.is_empty() || !frames.is_empty() {
                        return Err(err(line_no, "M record after T/F records"));
                    }
                    let (key, value) = rest
                        .split_once(' ')
                        .ok_or_else(|| err(line_no, "M record needs `key value`"))?;
                    if metadata.insert(key.to_string(), value.to_string()).is_some() {
                        return Err(err(line_no, "duplicate metadata key"));
                    }
                }
                "T" => {
                    if !frames.is_empty() {
                        return Err(err(line_no, "T record after first frame"));
                    }
                    let mut it = rest.split_ascii_whitespace();
                    let id = field(line_no, &mut it, "texture id")?;
                    let bytes = field(line_no, &mut it, "texture bytes")?;
                    end(line_no, &mut it)?;
                    if texture_table.insert(id, bytes).is_some() {
                        return Err(err(line_no, "duplicate texture id"));
                    }
                }
                "F" => {
                    let mut it = rest.split_ascii_whitespace();
                    let frame_id = field(line_no, &mut it, "frame id")?;
                    end(line_no, &mut it)?;
                    frames.push(Frame {
                        frame_id,
                        width: header.width,
                        height: header.height,
                        objects: Vec::new(),
                    });
                }
                "O" => {
                    let frame = frames
                        .last_mut()
                        .ok_or_else(|| err(line_no, "O record before any F record"))?;
                    frame.objects.push(parse_object(line_no, rest)?);
                }
                _ => return Err(err(line_no, &format!("unknown record tag `{tag}`"))),
            }
        }

        if frames.len() != header.frames {
            return Err(err(
                1,
                &format!("header declares {} frames, found {}", header.frames, frames.len()),
            ));
        }
        Ok(Trace {
            frames,
            texture_table,
            bytes_per_fragment: header.bytes_per_fragment,
            metadata,
        })
    }
}

fn err(line: usize, msg: &str) -> Error {
    Error::Parse { line, msg: msg.to_string() }
}

fn parse_header(line_no: usize, line: &str) -> Result<Header> {
    let mut it = line.split_ascii_whitespace();
    if it.next() != Some("rrtrace") {
        return Err(err(line_no, "expected `rrtrace` magic"));
    }
    if it.next() != Some("v1") {
        return Err(err(line_no, "unsupported version (want v1)"));
    }
    let frames = field(line_no, &mut it, "frame count")?;
    let width = field(line_no, &mut it, "width")?;
    let height = field(line_no, &mut it, "height")?;
    let bytes_per_fragment = field(line_no, &mut it, "bytes_per_fragment")?;
    end(line_no, &mut it)?;
    Ok(Header { frames, width, height, bytes_per_fragment })
}

fn field<T: std::str::FromStr>(
    line_no: usize,
    it: &mut std::str::SplitAsciiWhitespace<'_>,
    what: &str,
) -> Result<T> {
    let tok = it.next().ok_or_else(|| err(line_no, &format!("missing {what}")))?;
    tok.parse()
        .map_err(|_| err(line_no, &format!("bad {what} `{tok}`")))
}

fn end(line_no: usize, it: &mut std::str::SplitAsciiWhitespace<'_>) -> Result<()> {
    match it.next() {
        None => Ok(()),
        Some(tok) => Err(err(line_no, &format!("unexpected trailing field `{tok}`"))),
    }
}

fn parse_object(line_no: usize, rest: &str) -> Result<DrawObject> {
    let mut it = rest.split_ascii_whitespace();
    let object_id = field(line_no, &mut it, "object id")?;
    let vertex_count = field(line_no, &mut it, "vertex count")?;
    let triangle_count = field(line_no, &mut it, "triangle count")?;
    let pixels_per_view = field(line_no, &mut it, "pixels_per_view")?;
    let mut coords = [0u32; 8];
    for (i, c) in coords.iter_mut().enumerate() {
        *c = field(line_no, &mut it, &format!("bbox coordinate {i}"))?;
    }
    let deps_tok: String = field(line_no, &mut it, "deps field")?;
    let tex_tok: String = field(line_no, &mut it, "tex field")?;
    end(line_no, &mut it)?;

    let deps_body = deps_tok
        .strip_prefix("deps=")
        .ok_or_else(|| err(line_no, "expected deps=<csv>"))?;
    let mut depends_on = Vec::new();
    if !deps_body.is_empty() {
        for tok in deps_body.split(',') {
            depends_on.push(
                tok.parse()
                    .map_err(|_| err(line_no, &format!("bad dependency id `{tok}`")))?,
            );
        }
    }

    let tex_body = tex_tok
        .strip_prefix("tex=")
        .ok_or_else(|| err(line_no, "expected tex=<id:bytes,...>"))?;
    let mut textures = Vec::new();
    if !tex_body.is_empty() {
        for pair in tex_body.split(',') {
            let (id, bytes) = pair
                .split_once(':')
                .ok_or_else(|| err(line_no, &format!("bad texture ref `{pair}`")))?;
            textures.push(TextureRef {
                texture_id: id
                    .parse()
                    .map_err(|_| err(line_no, &format!("bad texture id `{id}`")))?,
                bytes: bytes
                    .parse()
                    .map_err(|_| err(line_no, &format!("bad texture bytes `{bytes}`")))?,
            });
        }
    }

    Ok(DrawObject {
        object_id,
        vertex_count,
        triangle_count,
        pixels_per_view,
        bbox_per_view: [
            Rect { x0: coords[0], y0: coords[1], x1: coords[2], y1: coords[3] },
            Rect { x0: coords[4], y0: coords[5], x1: coords[6], y1: coords[7] },
        ],
        textures,
        depends_on,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = "rrtrace v1 1 64 64 4\nT 1 8192\nF 0\nO 0 12 10 100 0 0 20 20 64 0 84 20 deps= tex=1:4096\n";

    #[test]
    fn minimal_file_parses() {
        let trace = parse_trace(MINIMAL.as_bytes()).unwrap();
        assert_eq!(trace.frames.len(), 1);
        assert_eq!(trace.frames[0].objects.len(), 1);
        assert_eq!(trace.frames[0].objects[0].textures[0].bytes, 4096);
    }

    #[test]
    fn parse_serialize_is_identity_on_canonical_files() {
        let trace = parse_trace(MINIMAL.as_bytes()).unwrap();
        assert_eq!(serialize_trace(&trace), MINIMAL.as_bytes());
    }

    #[test]
    fn unknown_texture_is_validation_error() {
        let text = MINIMAL.replace("tex=1:4096", "tex=9:4096");
        let errv = parse_trace(text.as_bytes()).unwrap_err();
        assert!(matches!(errv, Error::Validation { object_id: 0, .. }), "{errv}");
    }

    #[test]
    fn syntax_error_reports_line() {
        let text = "rrtrace v1 1 64 64 4\nT 1\nF 0\n";
        match parse_trace(text.as_bytes()).unwrap_err() {
            Error::Parse { line, .. } => assert_eq!(line, 2),
            other => panic!("expected parse error, got {other}"),
        }
    }

    #[test]
    fn differing_object_ids_serialize_differently() {
        let a = parse_trace(MINIMAL.as_bytes()).unwrap();
        let mut b = a.clone();
        b.frames[0].objects[0].object_id = 7;
        assert_ne!(serialize_trace(&a), serialize_trace(&b));
    }
}
