//! The `ADCG` file: a fixed header, a table of contents with per-section
//! CRC32, and the section payloads.
//!
//! Layout (little-endian): magic, u16 version, u16 flags, u32 anchor count,
//! u32 K, u32 N_v, u32 N_g, u32 M, f32 voxel size, 6×f32 scene bounds,
//! u32 section count, then per section u8 id, u64 offset, u64 length,
//! u32 crc32. Payloads follow in ascending id order.

use std::collections::BTreeMap;

use adcgs_tensor::{read_checkpoint, CheckpointWriter, DType, Tensor};
use serde::{Deserialize, Serialize};

use super::mem::{run_pipeline, CodedAnchors, Side, SECTION_COLOR, SECTION_COV, SECTION_F_G, SECTION_F_V, SECTION_HYPER};
use super::octree::{decode_positions, encode_positions, octree_order};
use crate::config::ModelConfig;
use crate::error::{ContainerError, CoreError, Result};
use crate::model::{Model, Stages};

pub const MAGIC: &[u8; 4] = b"ADCG";
pub const VERSION: u16 = 1;
pub const SECTION_POSITIONS: u8 = 1;
pub const SECTION_NETWORKS: u8 = 16;
const FIXED_HEADER: usize = 4 + 2 + 2 + 5 * 4 + 4 + 6 * 4 + 4;
const TOC_ENTRY: usize = 1 + 8 + 8 + 4;
const META_TENSOR: &str = "meta.json";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SectionEntry {
    pub id: u8,
    pub offset: u64,
    pub length: u64,
    pub crc32: u32,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Header {
    pub version: u16,
    pub flags: u16,
    pub anchor_count: u32,
    pub k: u32,
    pub n_v: u32,
    pub n_g: u32,
    pub m: u32,
    pub voxel_size: f32,
    pub bbox: [f32; 6],
    pub sections: Vec<SectionEntry>,
}

impl Header {
    pub fn byte_len(&self) -> usize {
        FIXED_HEADER + TOC_ENTRY * self.sections.len()
    }
}

/// Everything the decoder needs that the header does not carry.
#[derive(Debug, Clone, Serialize, Deserialize)]
struct NetworkMeta {
    config: ModelConfig,
    lambda_tag: f64,
}

pub fn section_name(id: u8, m: usize) -> String {
    match id {
        SECTION_POSITIONS => "positions".into(),
        SECTION_HYPER => "hyperprior".into(),
        SECTION_F_V => "f_v".into(),
        SECTION_COV => "cov".into(),
        SECTION_COLOR => "color".into(),
        SECTION_NETWORKS => "networks".into(),
        id if id >= SECTION_F_G && ((id - SECTION_F_G) as usize) < m => {
            format!("f_g.{}", id - SECTION_F_G + 1)
        }
        id => format!("unknown.{id}"),
    }
}

/// Output of [`encode_model`].
pub struct Encoded {
    pub bytes: Vec<u8>,
    /// What the decoder will reconstruct: `f32` networks, anchors in octree
    /// order with dequantized attributes.
    pub quantized: Model<f32>,
    pub coded: CodedAnchors,
}

fn network_blob(model: &Model<f32>, lambda_tag: f64) -> Result<Vec<u8>> {
    let meta = serde_json::to_vec(&NetworkMeta {
        config: model.config.clone(),
        lambda_tag,
    })?;
    let mut cw = CheckpointWriter::new();
    let bytes: Vec<f32> = meta.iter().map(|&b| b as f32).collect();
    cw.add(META_TENSOR, &Tensor::new(vec![bytes.len()], bytes)?);
    model.visit_networks(&mut |name, t| cw.add_as(name, t, DType::F32));
    Ok(cw.to_bytes())
}

/// Quantize, entropy-code and pack a model.
pub fn encode_model<T: adcgs_tensor::Real>(model: &Model<T>, lambda_tag: f64) -> Result<Encoded> {
    let cfg = &model.config;
    cfg.validate()?;
    let mut m32 = model.cast::<f32>();
    let voxel = m32.canonical.voxel_size;
    let a = m32.anchor_count();
    let positions: Vec<[f64; 3]> = (0..a).map(|i| m32.canonical.anchors.position(i)).collect();
    let order = octree_order(&positions, voxel)?;
    m32.canonical.anchors.permute(&order);
    let sorted: Vec<[f64; 3]> = order.iter().map(|&i| positions[i]).collect();
    let pos_bytes = encode_positions(&sorted, voxel, cfg.octree_depth)?;
    let decoded_pos = decode_positions(&pos_bytes, voxel)?;

    let coded = run_pipeline(&m32.mem, a, Side::Encode(&m32.canonical.anchors))?;
    let mut sections: BTreeMap<u8, Vec<u8>> = coded.payloads.clone();
    sections.insert(SECTION_POSITIONS, pos_bytes);
    sections.insert(SECTION_NETWORKS, network_blob(&m32, lambda_tag)?);

    let mut quantized = m32;
    let mut anchors = coded.anchors.clone();
    anchors.positions = Tensor::new(
        vec![a, 3],
        decoded_pos.iter().flatten().map(|&x| x as f32).collect(),
    )?;
    quantized.canonical.anchors = anchors;

    let header = Header {
        version: VERSION,
        flags: quantized.stages.flags(),
        anchor_count: a as u32,
        k: cfg.k as u32,
        n_v: cfg.n_v as u32,
        n_g: cfg.n_g as u32,
        m: cfg.m as u32,
        voxel_size: voxel as f32,
        bbox: quantized.bbox,
        sections: Vec::new(),
    };
    Ok(Encoded {
        bytes: pack(header, &sections),
        quantized,
        coded,
    })
}

fn pack(mut header: Header, sections: &BTreeMap<u8, Vec<u8>>) -> Vec<u8> {
    let mut offset = (FIXED_HEADER + TOC_ENTRY * sections.len()) as u64;
    header.sections = sections
        .iter()
        .map(|(&id, p)| {
            let e = SectionEntry {
                id,
                offset,
                length: p.len() as u64,
                crc32: crc32fast::hash(p),
            };
            offset += p.len() as u64;
            e
        })
        .collect();
    let mut out = Vec::with_capacity(offset as usize);
    out.extend_from_slice(MAGIC);
    out.extend(header.version.to_le_bytes());
    out.extend(header.flags.to_le_bytes());
    for v in [header.anchor_count, header.k, header.n_v, header.n_g, header.m] {
        out.extend(v.to_le_bytes());
    }
    out.extend(header.voxel_size.to_le_bytes());
    for v in header.bbox {
        out.extend(v.to_le_bytes());
    }
    out.extend((header.sections.len() as u32).to_le_bytes());
    for e in &header.sections {
        out.push(e.id);
        out.extend(e.offset.to_le_bytes());
        out.extend(e.length.to_le_bytes());
        out.extend(e.crc32.to_le_bytes());
    }
    for p in sections.values() {
        out.extend_from_slice(p);
    }
    out
}

struct Cursor<'a> {
    b: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.b.len() - self.pos < n {
            return Err(ContainerError::Truncated("header".into()).into());
        }
        let s = &self.b[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }
    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }
    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
    fn f32(&mut self) -> Result<f32> {
        Ok(f32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
}

/// Parse and validate the header and table of contents.
pub fn read_header(bytes: &[u8]) -> Result<Header> {
    if bytes.len() < 4 {
        return Err(ContainerError::Truncated("file shorter than its magic".into()).into());
    }
    if &bytes[..4] != MAGIC {
        return Err(ContainerError::BadMagic.into());
    }
    let mut c = Cursor { b: bytes, pos: 4 };
    let version = c.u16()?;
    if version != VERSION {
        return Err(ContainerError::Version(version).into());
    }
    let flags = c.u16()?;
    let (anchor_count, k, n_v, n_g, m) = (c.u32()?, c.u32()?, c.u32()?, c.u32()?, c.u32()?);
    let voxel_size = c.f32()?;
    let mut bbox = [0f32; 6];
    for v in bbox.iter_mut() {
        *v = c.f32()?;
    }
    let count = c.u32()? as usize;
    if count > 256 {
        return Err(CoreError::Decode(format!("implausible section count {count}")));
    }
    let mut sections = Vec::with_capacity(count);
    for _ in 0..count {
        let id = c.take(1)?[0];
        sections.push(SectionEntry {
            id,
            offset: c.u64()?,
            length: c.u64()?,
            crc32: c.u32()?,
        });
    }
    Ok(Header {
        version,
        flags,
        anchor_count,
        k,
        n_v,
        n_g,
        m,
        voxel_size,
        bbox,
        sections,
    })
}

/// Section payloads after bounds and checksum checks.
pub fn read_sections(bytes: &[u8], header: &Header) -> Result<BTreeMap<u8, Vec<u8>>> {
    let mut out = BTreeMap::new();
    for e in &header.sections {
        let end = e.offset.checked_add(e.length);
        match end {
            Some(end) if end <= bytes.len() as u64 && e.offset >= header.byte_len() as u64 => {
                let p = &bytes[e.offset as usize..end as usize];
                if crc32fast::hash(p) != e.crc32 {
                    return Err(ContainerError::Checksum(e.id).into());
                }
                if out.insert(e.id, p.to_vec()).is_some() {
                    return Err(CoreError::Decode(format!("section {} appears twice", e.id)));
                }
            }
            _ => {
                return Err(ContainerError::Truncated(format!(
                    "section {} extends past the end of the file",
                    e.id
                ))
                .into())
            }
        }
    }
    Ok(out)
}

/// Rebuild a renderable model from a file.
pub fn decode_model(bytes: &[u8]) -> Result<Model<f32>> {
    let header = read_header(bytes)?;
    let sections = read_sections(bytes, &header)?;
    let section = |id: u8| {
        sections
            .get(&id)
            .ok_or_else(|| CoreError::Decode(format!("section {} is missing", section_name(id, 0))))
    };

    let ck = read_checkpoint(&mut &section(SECTION_NETWORKS)?[..])
        .map_err(|e| CoreError::Decode(format!("network section: {e}")))?;
    let meta_bytes: Vec<u8> = ck
        .get::<f64>(META_TENSOR)
        .map_err(|e| CoreError::Decode(e.to_string()))?
        .data()
        .iter()
        .map(|&b| b as u8)
        .collect();
    let meta: NetworkMeta = serde_json::from_slice(&meta_bytes)
        .map_err(|e| CoreError::Decode(format!("network metadata: {e}")))?;
    let cfg = meta.config;
    if (cfg.k, cfg.n_v, cfg.n_g, cfg.m) != (header.k as usize, header.n_v as usize, header.n_g as usize, header.m as usize)
    {
        return Err(CoreError::Decode("header dimensions disagree with the network section".into()));
    }
    cfg.validate().map_err(|e| CoreError::Decode(e.to_string()))?;

    let mut model = Model::<f32>::skeleton(&cfg, header.voxel_size as f64)?;
    model.bbox = header.bbox;
    model.stages = Stages::from_flags(header.flags);
    let mut err = None;
    model.visit_networks_mut(&mut |name, t| match ck.get::<f32>(name) {
        Ok(v) if v.shape() == t.shape() => {
            let rg = t.requires_grad;
            *t = v;
            t.requires_grad = rg;
        }
        _ => {
            err.get_or_insert(CoreError::Decode(format!("network tensor {name} is missing or misshapen")));
        }
    });
    if let Some(e) = err {
        return Err(e);
    }

    let positions = decode_positions(section(SECTION_POSITIONS)?, header.voxel_size as f64)?;
    let a = header.anchor_count as usize;
    if positions.len() != a {
        return Err(CoreError::Decode(format!(
            "position section holds {} anchors, header says {a}",
            positions.len()
        )));
    }
    let coded = run_pipeline(&model.mem, a, Side::Decode(&sections))?;
    let mut anchors = coded.anchors;
    anchors.positions = Tensor::new(vec![a, 3], positions.iter().flatten().map(|&x| x as f32).collect())?;
    model.canonical.anchors = anchors;
    Ok(model)
}

/// One row of the byte breakdown.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct SectionSize {
    pub id: Option<u8>,
    pub name: String,
    pub bytes: u64,
}

/// Per-section sizes, led by the header row; the rows sum to the file size.
pub fn inspect(bytes: &[u8]) -> Result<Vec<SectionSize>> {
    let header = read_header(bytes)?;
    read_sections(bytes, &header)?;
    let mut rows = vec![SectionSize {
        id: None,
        name: "header".into(),
        bytes: header.byte_len() as u64,
    }];
    for e in &header.sections {
        rows.push(SectionSize {
            id: Some(e.id),
            name: section_name(e.id, header.m as usize),
            bytes: e.length,
        });
    }
    Ok(rows)
}
