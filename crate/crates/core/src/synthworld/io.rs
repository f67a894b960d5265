//! Binary split files. Layout (all little-endian):
//!
//! ```text
//! magic        8 bytes  "UDA3DSCN"
//! version      u32      currently 1
//! domain tag   u8       0 = source, 1 = target
//! scene count  u64
//! per scene:
//!   scene_id u64, rng_seed u64, beam_count u32
//!   camera count u32; per camera: id u32, K 9 x f64 (row-major),
//!     E 16 x f64 (row-major), width f64, height f64
//!   object count u32; per object: object_id u32, x y z l w h theta 7 x f64,
//!     color u8, body u8, size u8 (vocabulary indices)
//!   point count u64; per point: x y z 3 x f32, ring u16, owner i32
//! ```

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use byteorder::{LittleEndian as LE, ReadBytesExt, WriteBytesExt};

use super::{
    AttributeSet, BodyStyle, Color, DomainTag, LidarPoint, ObjectSpec, Scene, SizeClass, SynthError,
};
use crate::geometry::{Box3D, CameraModel};

pub const MAGIC: &[u8; 8] = b"UDA3DSCN";
pub const VERSION: u32 = 1;

pub fn write_scenes<W: Write>(mut w: W, tag: DomainTag, scenes: &[Scene]) -> Result<(), SynthError> {
    w.write_all(MAGIC)?;
    w.write_u32::<LE>(VERSION)?;
    w.write_u8(match tag {
        DomainTag::Source => 0,
        DomainTag::Target => 1,
    })?;
    w.write_u64::<LE>(scenes.len() as u64)?;
    for s in scenes {
        if s.domain_tag != tag {
            return Err(SynthError::Format(format!("scene {} has a different domain tag", s.scene_id)));
        }
        w.write_u64::<LE>(s.scene_id)?;
        w.write_u64::<LE>(s.rng_seed)?;
        w.write_u32::<LE>(s.beam_count as u32)?;
        w.write_u32::<LE>(s.cameras.len() as u32)?;
        for c in &s.cameras {
            w.write_u32::<LE>(c.id)?;
            for row in &c.k {
                for v in row {
                    w.write_f64::<LE>(*v)?;
                }
            }
            for row in &c.e {
                for v in row {
                    w.write_f64::<LE>(*v)?;
                }
            }
            w.write_f64::<LE>(c.width)?;
            w.write_f64::<LE>(c.height)?;
        }
        w.write_u32::<LE>(s.objects.len() as u32)?;
        for o in &s.objects {
            let (color, size, body) = o.attributes.triple()?;
            w.write_u32::<LE>(o.object_id)?;
            let b = &o.bbox;
            for v in [b.x, b.y, b.z, b.l, b.w, b.h, b.theta] {
                w.write_f64::<LE>(v)?;
            }
            w.write_u8(color.index() as u8)?;
            w.write_u8(body.index() as u8)?;
            w.write_u8(size.index() as u8)?;
        }
        w.write_u64::<LE>(s.points.len() as u64)?;
        for p in &s.points {
            w.write_f32::<LE>(p.x)?;
            w.write_f32::<LE>(p.y)?;
            w.write_f32::<LE>(p.z)?;
            w.write_u16::<LE>(p.ring)?;
            w.write_i32::<LE>(p.owner)?;
        }
    }
    w.flush()?;
    Ok(())
}

fn vocab<T: Copy>(all: &[T], i: u8, what: &str) -> Result<T, SynthError> {
    all.get(i as usize)
        .copied()
        .ok_or_else(|| SynthError::Format(format!("{what} index {i} out of range")))
}

pub fn read_scenes<R: Read>(mut r: R) -> Result<(DomainTag, Vec<Scene>), SynthError> {
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(SynthError::Format("bad magic".into()));
    }
    let version = r.read_u32::<LE>()?;
    if version != VERSION {
        return Err(SynthError::Format(format!("unsupported version {version}")));
    }
    let tag = match r.read_u8()? {
        0 => DomainTag::Source,
        1 => DomainTag::Target,
        t => return Err(SynthError::Format(format!("unknown domain tag {t}"))),
    };
    let n = r.read_u64::<LE>()?;
    let mut scenes = Vec::with_capacity(n.min(1 << 16) as usize);
    for _ in 0..n {
        let scene_id = r.read_u64::<LE>()?;
        let rng_seed = r.read_u64::<LE>()?;
        let beam_count = r.read_u32::<LE>()? as usize;
        let n_cams = r.read_u32::<LE>()?;
        let mut cameras = Vec::new();
        for _ in 0..n_cams {
            let id = r.read_u32::<LE>()?;
            let mut k = [[0.0; 3]; 3];
            for row in k.iter_mut() {
                for v in row.iter_mut() {
                    *v = r.read_f64::<LE>()?;
                }
            }
            let mut e = [[0.0; 4]; 4];
            for row in e.iter_mut() {
                for v in row.iter_mut() {
                    *v = r.read_f64::<LE>()?;
                }
            }
            let width = r.read_f64::<LE>()?;
            let height = r.read_f64::<LE>()?;
            cameras.push(CameraModel::new(id, k, e, width, height)?);
        }
        let n_obj = r.read_u32::<LE>()?;
        let mut objects = Vec::new();
        for _ in 0..n_obj {
            let object_id = r.read_u32::<LE>()?;
            let mut b = [0.0; 7];
            for v in b.iter_mut() {
                *v = r.read_f64::<LE>()?;
            }
            let color = vocab(Color::ALL, r.read_u8()?, "color")?;
            let body = vocab(BodyStyle::ALL, r.read_u8()?, "body")?;
            let size = vocab(SizeClass::ALL, r.read_u8()?, "size")?;
            objects.push(ObjectSpec {
                object_id,
                bbox: Box3D::new(b[0], b[1], b[2], b[3], b[4], b[5], b[6])?,
                attributes: AttributeSet::new(color, size, body),
            });
        }
        let n_pts = r.read_u64::<LE>()?;
        let mut points = Vec::with_capacity(n_pts.min(1 << 22) as usize);
        for _ in 0..n_pts {
            let x = r.read_f32::<LE>()?;
            let y = r.read_f32::<LE>()?;
            let z = r.read_f32::<LE>()?;
            let ring = r.read_u16::<LE>()?;
            let owner = r.read_i32::<LE>()?;
            if owner >= 0 && owner as u32 >= n_obj {
                return Err(SynthError::Format(format!("point owner {owner} out of range")));
            }
            points.push(LidarPoint { x, y, z, ring, owner });
        }
        scenes.push(Scene {
            scene_id,
            domain_tag: tag,
            rng_seed,
            beam_count,
            points,
            objects,
            cameras,
        });
    }
    Ok((tag, scenes))
}

pub fn save_split(path: &Path, tag: DomainTag, scenes: &[Scene]) -> Result<(), SynthError> {
    write_scenes(BufWriter::new(File::create(path)?), tag, scenes)
}

pub fn load_split(path: &Path) -> Result<(DomainTag, Vec<Scene>), SynthError> {
    read_scenes(BufReader::new(File::open(path)?))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synthworld::{generate_split, DomainConfig};

    #[test]
    fn round_trip() {
        let scenes = generate_split(&DomainConfig::target(), 2, 5).unwrap();
        let mut buf = Vec::new();
        write_scenes(&mut buf, DomainTag::Target, &scenes).unwrap();
        let (tag, back) = read_scenes(buf.as_slice()).unwrap();
        assert_eq!(tag, DomainTag::Target);
        assert_eq!(back, scenes);
    }

    #[test]
    fn rejects_bad_magic() {
        assert!(matches!(read_scenes(&b"NOTASCNE\x01\0\0\0"[..]), Err(SynthError::Format(_))));
    }
}
