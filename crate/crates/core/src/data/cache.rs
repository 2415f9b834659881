//! On-disk clip cache.
//!
//! Layout (little-endian):
//!
//! ```text
//! "AVSD" | u32 version | u32 task | u64 seed | u32 T | u32 H | u32 W | u32 D
//! f64 frames[T·3·H·W] | f64 audio[T·D] | u16 gt[T·(H/4)·(W/4)]
//! u32 n_instances, per instance:
//!     u8 kind | u16 class | f64 cx, cy, radius, r, g, b, vx, vy
//! per frame: u32 n_sounding | u32 instance_index[n_sounding]
//! ```

use std::fs;
use std::path::Path;

use super::{Clip, LabelMap, ShapeInstance, ShapeKind, Task};
use crate::codec::{Reader, Writer};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const CLIP_MAGIC: &[u8; 4] = b"AVSD";
pub const CLIP_VERSION: u32 = 1;

pub(crate) fn encode_clip(clip: &Clip) -> Vec<u8> {
    let mut w = Writer::default();
    let s = clip.frames.shape();
    w.bytes(CLIP_MAGIC);
    w.u32(CLIP_VERSION);
    w.u32(clip.task.code());
    w.u64(clip.seed);
    w.u32(s[0] as u32);
    w.u32(s[2] as u32);
    w.u32(s[3] as u32);
    w.u32(clip.audio.shape()[1] as u32);
    w.f64s(clip.frames.data());
    w.f64s(clip.audio.data());
    for &g in &clip.gt.data {
        w.u16(g);
    }
    w.u32(clip.instances.len() as u32);
    for inst in &clip.instances {
        w.u8(match inst.kind {
            ShapeKind::Circle => 0,
            ShapeKind::Square => 1,
            ShapeKind::Triangle => 2,
        });
        w.u16(inst.class_id);
        for v in [
            inst.center.0,
            inst.center.1,
            inst.radius,
            inst.color[0],
            inst.color[1],
            inst.color[2],
            inst.velocity.0,
            inst.velocity.1,
        ] {
            w.f64(v);
        }
    }
    for s in &clip.sounding {
        w.u32(s.len() as u32);
        for &i in s {
            w.u32(i as u32);
        }
    }
    w.buf
}

pub(crate) fn decode_clip(bytes: &[u8]) -> Result<Clip> {
    let mut r = Reader::new(bytes);
    if r.take(4, "magic")? != CLIP_MAGIC {
        return Err(Error::format(0, "bad magic, expected AVSD"));
    }
    let at = r.offset();
    let version = r.u32("version")?;
    if version != CLIP_VERSION {
        return Err(Error::format(
            at,
            format!("unsupported clip version {version}"),
        ));
    }
    let at = r.offset();
    let task =
        Task::from_code(r.u32("task")?).ok_or_else(|| Error::format(at, "unknown task code"))?;
    let seed = r.u64("seed")?;
    let at = r.offset();
    let (t, h, w, d) = (
        r.u32("frames")? as usize,
        r.u32("height")? as usize,
        r.u32("width")? as usize,
        r.u32("audio dim")? as usize,
    );
    if t == 0 || h < 4 || w < 4 || d == 0 || h % 4 != 0 || w % 4 != 0 {
        return Err(Error::format(
            at,
            format!("invalid extents T={t} H={h} W={w} D={d}"),
        ));
    }
    let frames = Tensor::new(&[t, 3, h, w], r.f64s(t * 3 * h * w, "frames")?)?;
    let audio = Tensor::new(&[t, d], r.f64s(t * d, "audio")?)?;
    let mut gt = LabelMap::zeros(t, h / 4, w / 4);
    for g in gt.data.iter_mut() {
        *g = r.u16("labels")?;
    }
    let n_inst = r.u32("instance count")? as usize;
    let mut instances = Vec::with_capacity(n_inst.min(64));
    for _ in 0..n_inst {
        let at = r.offset();
        let kind = match r.u8("shape kind")? {
            0 => ShapeKind::Circle,
            1 => ShapeKind::Square,
            2 => ShapeKind::Triangle,
            k => return Err(Error::format(at, format!("unknown shape kind {k}"))),
        };
        let class_id = r.u16("class id")?;
        let mut v = [0.0; 8];
        for x in v.iter_mut() {
            *x = r.f64("instance geometry")?;
        }
        instances.push(ShapeInstance {
            kind,
            class_id,
            center: (v[0], v[1]),
            radius: v[2],
            color: [v[3], v[4], v[5]],
            velocity: (v[6], v[7]),
        });
    }
    let mut sounding = Vec::with_capacity(t);
    for _ in 0..t {
        let n = r.u32("sounding count")? as usize;
        let mut s = Vec::with_capacity(n.min(64));
        for _ in 0..n {
            let at = r.offset();
            let i = r.u32("sounding index")? as usize;
            if i >= instances.len() {
                return Err(Error::format(
                    at,
                    format!("sounding index {i} out of range"),
                ));
            }
            s.push(i);
        }
        sounding.push(s);
    }
    if !r.is_at_end() {
        return Err(Error::format(r.offset(), "trailing bytes after clip"));
    }
    Ok(Clip {
        task,
        seed,
        frames,
        audio,
        gt,
        instances,
        sounding,
    })
}

pub fn write_clip(clip: &Clip, path: &Path) -> Result<()> {
    fs::write(path, encode_clip(clip))?;
    Ok(())
}

pub fn read_clip(path: &Path) -> Result<Clip> {
    decode_clip(&fs::read(path)?)
}
