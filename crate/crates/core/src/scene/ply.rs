//! Binary little-endian PLY in the 62-property layout used by Gaussian-splatting
//! tools: `x y z nx ny nz f_dc_0..2 f_rest_0..44 opacity scale_0..2 rot_0..3`.
//!
//! `f_rest` is channel-major: `f_rest[c * 15 + (k - 1)]` is basis `k` of channel `c`.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use nalgebra::Vector3;

use super::{GaussianSplat, SplatScene};
use crate::error::{Error, Result};
use crate::math::sh::MAX_COEFFS;
use crate::math::UnitQuaternion;

const REST_PER_CHANNEL: usize = MAX_COEFFS - 1;

/// Property names in file order.
pub static PLY_PROPERTIES: std::sync::LazyLock<Vec<String>> = std::sync::LazyLock::new(|| {
    let mut names: Vec<String> = ["x", "y", "z", "nx", "ny", "nz"].iter().map(|s| s.to_string()).collect();
    names.extend((0..3).map(|i| format!("f_dc_{i}")));
    names.extend((0..3 * REST_PER_CHANNEL).map(|i| format!("f_rest_{i}")));
    names.push("opacity".into());
    names.extend((0..3).map(|i| format!("scale_{i}")));
    names.extend((0..4).map(|i| format!("rot_{i}")));
    names
});

pub fn save_ply(scene: &SplatScene, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(Error::file(path))?;
    let mut w = BufWriter::new(file);
    write_ply(scene, &mut w)?;
    w.flush().map_err(Error::file(path))?;
    Ok(())
}

pub fn write_ply(scene: &SplatScene, w: &mut impl Write) -> Result<()> {
    if scene.is_empty() {
        return Err(Error::EmptyScene);
    }
    let mut header = format!("ply\nformat binary_little_endian 1.0\nelement vertex {}\n", scene.len());
    for name in PLY_PROPERTIES.iter() {
        header.push_str("property float ");
        header.push_str(name);
        header.push('\n');
    }
    header.push_str("end_header\n");
    w.write_all(header.as_bytes())?;

    let mut row = Vec::with_capacity(PLY_PROPERTIES.len() * 4);
    for s in &scene.splats {
        row.clear();
        let mut put = |v: f64| row.extend_from_slice(&(v as f32).to_le_bytes());
        s.position.iter().for_each(|&v| put(v));
        (0..3).for_each(|_| put(0.0));
        s.sh[0].iter().for_each(|&v| put(v));
        for c in 0..3 {
            for k in 1..MAX_COEFFS {
                put(s.sh[k][c]);
            }
        }
        put(s.opacity_logit);
        s.log_scale.iter().for_each(|&v| put(v));
        s.rotation.wxyz().iter().for_each(|&v| put(v));
        w.write_all(&row)?;
    }
    Ok(())
}

pub fn load_ply(path: impl AsRef<Path>) -> Result<SplatScene> {
    let path = path.as_ref();
    let file = File::open(path).map_err(Error::file(path))?;
    read_ply(&mut BufReader::new(file))
}

#[derive(Clone, Copy)]
enum Scalar {
    I8,
    U8,
    I16,
    U16,
    I32,
    U32,
    F32,
    F64,
}

impl Scalar {
    fn parse(s: &str) -> Option<Self> {
        Some(match s {
            "char" | "int8" => Self::I8,
            "uchar" | "uint8" => Self::U8,
            "short" | "int16" => Self::I16,
            "ushort" | "uint16" => Self::U16,
            "int" | "int32" => Self::I32,
            "uint" | "uint32" => Self::U32,
            "float" | "float32" => Self::F32,
            "double" | "float64" => Self::F64,
            _ => return None,
        })
    }

    fn size(self) -> usize {
        match self {
            Self::I8 | Self::U8 => 1,
            Self::I16 | Self::U16 => 2,
            Self::I32 | Self::U32 | Self::F32 => 4,
            Self::F64 => 8,
        }
    }

    fn read(self, b: &[u8]) -> f64 {
        match self {
            Self::I8 => b[0] as i8 as f64,
            Self::U8 => b[0] as f64,
            Self::I16 => i16::from_le_bytes([b[0], b[1]]) as f64,
            Self::U16 => u16::from_le_bytes([b[0], b[1]]) as f64,
            Self::I32 => i32::from_le_bytes(b[..4].try_into().unwrap()) as f64,
            Self::U32 => u32::from_le_bytes(b[..4].try_into().unwrap()) as f64,
            Self::F32 => f32::from_le_bytes(b[..4].try_into().unwrap()) as f64,
            Self::F64 => f64::from_le_bytes(b[..8].try_into().unwrap()),
        }
    }
}

struct Property {
    name: String,
    kind: Scalar,
    offset: usize,
}

struct Header {
    count: usize,
    stride: usize,
    props: Vec<Property>,
}

impl Header {
    fn find(&self, name: &str) -> Option<&Property> {
        self.props.iter().find(|p| p.name == name)
    }

    fn require(&self, name: &str) -> Result<&Property> {
        self.find(name).ok_or_else(|| Error::PlyMissingField(name.to_string()))
    }
}

fn read_header(r: &mut impl BufRead) -> Result<Header> {
    let mut line = String::new();
    let mut next = |line: &mut String| -> Result<()> {
        line.clear();
        if r.read_line(line)? == 0 {
            return Err(Error::PlyHeader("unexpected end of file in header".into()));
        }
        Ok(())
    };
    next(&mut line)?;
    if line.trim_end() != "ply" {
        return Err(Error::PlyHeader("missing `ply` magic".into()));
    }
    let mut format_ok = false;
    let mut count = None;
    let mut in_vertex = false;
    let mut props = Vec::new();
    let mut stride = 0;
    loop {
        next(&mut line)?;
        let toks: Vec<&str> = line.split_whitespace().collect();
        match toks.as_slice() {
            ["end_header"] => break,
            ["format", fmt, _] => {
                if *fmt != "binary_little_endian" {
                    return Err(Error::PlyHeader(format!("unsupported format `{fmt}`")));
                }
                format_ok = true;
            }
            ["comment", ..] | ["obj_info", ..] | [] => {}
            ["element", name, n] => {
                if *name == "vertex" {
                    if count.is_some() {
                        return Err(Error::PlyHeader("duplicate vertex element".into()));
                    }
                    count = Some(n.parse::<usize>().map_err(|_| Error::PlyHeader(format!("bad count `{n}`")))?);
                    in_vertex = true;
                } else {
                    if count.is_none() {
                        return Err(Error::PlyHeader(format!("element `{name}` precedes vertex data")));
                    }
                    in_vertex = false;
                }
            }
            ["property", "list", ..] => {
                if in_vertex {
                    return Err(Error::PlyHeader("list properties are not supported on vertices".into()));
                }
            }
            ["property", ty, name] => {
                if in_vertex {
                    let kind = Scalar::parse(ty).ok_or_else(|| Error::PlyHeader(format!("unknown type `{ty}`")))?;
                    props.push(Property { name: name.to_string(), kind, offset: stride });
                    stride += kind.size();
                }
            }
            _ => return Err(Error::PlyHeader(format!("unrecognized line `{}`", line.trim_end()))),
        }
    }
    if !format_ok {
        return Err(Error::PlyHeader("missing format line".into()));
    }
    let count = count.ok_or_else(|| Error::PlyHeader("no vertex element".into()))?;
    Ok(Header { count, stride, props })
}

pub fn read_ply(r: &mut impl BufRead) -> Result<SplatScene> {
    let header = read_header(r)?;
    let field = |name: &str| header.require(name).map(|p| (p.kind, p.offset));
    let pos = [field("x")?, field("y")?, field("z")?];
    let dc = [field("f_dc_0")?, field("f_dc_1")?, field("f_dc_2")?];
    let opacity = field("opacity")?;
    let scale = [field("scale_0")?, field("scale_1")?, field("scale_2")?];
    let rot = [field("rot_0")?, field("rot_1")?, field("rot_2")?, field("rot_3")?];

    let rest_count = (0..).take_while(|i| header.find(&format!("f_rest_{i}")).is_some()).count();
    let per_channel = rest_count / 3;
    if rest_count % 3 != 0 || ![0, 3, 8, 15].contains(&per_channel) {
        return Err(Error::PlyHeader(format!("{rest_count} f_rest properties do not form an SH degree")));
    }
    let rest: Vec<(Scalar, usize)> = (0..rest_count).map(|i| field(&format!("f_rest_{i}"))).collect::<Result<_>>()?;

    let expected = header.count * header.stride;
    let mut payload = Vec::with_capacity(expected);
    r.take(expected as u64).read_to_end(&mut payload)?;
    if payload.len() < expected {
        return Err(Error::PlyTruncated { expected, found: payload.len() });
    }

    let mut splats = Vec::with_capacity(header.count);
    for (i, row) in payload.chunks_exact(header.stride).enumerate() {
        let get = |(kind, off): (Scalar, usize)| kind.read(&row[off..]);
        let mut sh = [[0.0; 3]; MAX_COEFFS];
        sh[0] = dc.map(get);
        for c in 0..3 {
            for k in 0..per_channel {
                sh[k + 1][c] = get(rest[c * per_channel + k]);
            }
        }
        let rot = rot.map(get);
        let raw = [
            pos.map(get).to_vec(),
            scale.map(get).to_vec(),
            rot.to_vec(),
            vec![get(opacity)],
            sh.iter().flatten().copied().collect(),
        ];
        if raw.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("PLY vertex {i}")));
        }
        if rot.iter().all(|&v| v == 0.0) {
            return Err(Error::NonFinite(format!("PLY vertex {i} has a zero rotation")));
        }
        let splat = GaussianSplat {
            position: Vector3::from(pos.map(get)),
            rotation: UnitQuaternion::from_wxyz(rot),
            log_scale: Vector3::from(scale.map(get)),
            opacity_logit: get(opacity),
            sh,
        };
        if !splat.is_finite() {
            return Err(Error::NonFinite(format!("PLY vertex {i} scale overflows")));
        }
        splats.push(splat);
    }
    SplatScene::new(splats)
}
