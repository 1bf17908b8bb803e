//! Breadth-first octree coding of voxelised positions. Each occupancy byte
//! is coded bit by bit with adaptive binary models indexed by the bits
//! already coded in that byte.

use super::range::{frame_payload, unframe_payload, BitModel, RangeDecoder, RangeEncoder};
use crate::canonical::voxel_center;
use crate::error::{CoreError, Result};

fn spread(v: u64) -> u64 {
    let mut out = 0;
    for b in 0..21 {
        out |= ((v >> b) & 1) << (3 * b);
    }
    out
}

fn compact(v: u64) -> u64 {
    let mut out = 0;
    for b in 0..21 {
        out |= ((v >> (3 * b)) & 1) << b;
    }
    out
}

/// Interleave so that the child index at each level is `x<<2 | y<<1 | z`.
pub fn morton(k: [u32; 3]) -> u64 {
    (spread(k[0] as u64) << 2) | (spread(k[1] as u64) << 1) | spread(k[2] as u64)
}

pub fn unmorton(c: u64) -> [u32; 3] {
    [compact(c >> 2) as u32, compact(c >> 1) as u32, compact(c) as u32]
}

/// Occupancy bytes, level by level, for distinct keys below `2^depth`.
pub fn occupancy_bytes(keys: &[[u32; 3]], depth: u8) -> Vec<u8> {
    let mut codes: Vec<u64> = keys.iter().map(|&k| morton(k)).collect();
    codes.sort_unstable();
    codes.dedup();
    let d = depth as u32;
    let mut out = Vec::new();
    for level in 0..d {
        let shift = 3 * (d - level - 1);
        let mut i = 0;
        while i < codes.len() {
            let prefix = codes[i] >> (shift + 3);
            let mut byte = 0u8;
            while i < codes.len() && codes[i] >> (shift + 3) == prefix {
                byte |= 1 << ((codes[i] >> shift) & 7);
                i += 1;
            }
            out.push(byte);
        }
    }
    out
}

/// Integer voxel indices of on-grid positions (centres of voxels).
pub fn grid_keys(positions: &[[f64; 3]], voxel_size: f64) -> Result<Vec<[i64; 3]>> {
    let v = voxel_size as f32 as f64;
    positions
        .iter()
        .map(|p| {
            let mut key = [0i64; 3];
            for a in 0..3 {
                let u = p[a] / v - 0.5;
                let r = u.round();
                if !u.is_finite() || (u - r).abs() > 1e-3 {
                    return Err(CoreError::Contract(format!(
                        "position {p:?} is not on the voxel grid of size {v}"
                    )));
                }
                key[a] = r as i64;
            }
            Ok(key)
        })
        .collect()
}

/// Permutation sorting positions into decoded (Morton) order.
pub fn octree_order(positions: &[[f64; 3]], voxel_size: f64) -> Result<Vec<usize>> {
    let keys = grid_keys(positions, voxel_size)?;
    let min = min_key(&keys);
    let mut order: Vec<usize> = (0..keys.len()).collect();
    order.sort_by_key(|&i| morton(rel(keys[i], min)));
    Ok(order)
}

fn min_key(keys: &[[i64; 3]]) -> [i64; 3] {
    let mut m = [i64::MAX; 3];
    for k in keys {
        for a in 0..3 {
            m[a] = m[a].min(k[a]);
        }
    }
    m
}

fn rel(k: [i64; 3], min: [i64; 3]) -> [u32; 3] {
    [(k[0] - min[0]) as u32, (k[1] - min[1]) as u32, (k[2] - min[2]) as u32]
}

pub fn encode_positions(positions: &[[f64; 3]], voxel_size: f64, depth: u8) -> Result<Vec<u8>> {
    if !(1..=16).contains(&depth) {
        return Err(CoreError::Config(format!("octree depth {depth} outside 1..=16")));
    }
    let keys = grid_keys(positions, voxel_size)?;
    let mut header = Vec::with_capacity(17);
    if keys.is_empty() {
        header.extend([0u8; 12]);
        header.push(depth);
        header.extend(0u32.to_le_bytes());
        return Ok(frame_payload(&header, 0));
    }
    let min = min_key(&keys);
    let mut rels = Vec::with_capacity(keys.len());
    for &k in &keys {
        let r = rel(k, min);
        if r.iter().any(|&x| (x as u64) >> depth != 0) {
            return Err(CoreError::Config(format!(
                "anchor extent exceeds a depth-{depth} octree"
            )));
        }
        rels.push(r);
    }
    let mut sorted: Vec<u64> = rels.iter().map(|&r| morton(r)).collect();
    sorted.sort_unstable();
    if sorted.windows(2).any(|w| w[0] == w[1]) {
        return Err(CoreError::Contract("two anchors share one voxel".into()));
    }
    for a in 0..3 {
        header.extend((min[a] as i32).to_le_bytes());
    }
    header.push(depth);
    header.extend((keys.len() as u32).to_le_bytes());
    let mut enc = RangeEncoder::new();
    let mut models = [BitModel::default(); 256];
    for byte in occupancy_bytes(&rels, depth) {
        let mut ctx = 1usize;
        for b in (0..8).rev() {
            let bit = (byte >> b) & 1 == 1;
            enc.encode_bit(&mut models[ctx], bit);
            ctx = (ctx << 1) | bit as usize;
        }
    }
    header.extend(enc.finish());
    Ok(frame_payload(&header, keys.len() as u32))
}

/// Voxel centres in Morton order.
pub fn decode_positions(bytes: &[u8], voxel_size: f64) -> Result<Vec<[f64; 3]>> {
    let (body, count) = unframe_payload(bytes)?;
    if body.len() < 17 {
        return Err(CoreError::Decode("position header is truncated".into()));
    }
    let min: [i64; 3] =
        std::array::from_fn(|a| i32::from_le_bytes(body[4 * a..4 * a + 4].try_into().unwrap()) as i64);
    let depth = body[12] as u32;
    let n = u32::from_le_bytes(body[13..17].try_into().unwrap());
    if n != count || !(1..=16).contains(&depth) && n > 0 {
        return Err(CoreError::Decode("position header is inconsistent".into()));
    }
    if n == 0 {
        return Ok(Vec::new());
    }
    let mut dec = RangeDecoder::new(&body[17..])?;
    let mut models = [BitModel::default(); 256];
    let mut nodes: Vec<u64> = vec![0];
    for _ in 0..depth {
        let mut next = Vec::with_capacity(nodes.len() * 2);
        for &p in &nodes {
            let mut ctx = 1usize;
            for _ in 0..8 {
                let bit = dec.decode_bit(&mut models[ctx]);
                ctx = (ctx << 1) | bit as usize;
            }
            let byte = (ctx & 0xFF) as u8;
            if byte == 0 {
                return Err(CoreError::Decode("empty octree node".into()));
            }
            for c in 0..8 {
                if byte >> c & 1 == 1 {
                    next.push((p << 3) | c as u64);
                }
            }
            if next.len() > n as usize {
                return Err(CoreError::Decode("octree holds more points than declared".into()));
            }
        }
        nodes = next;
    }
    if nodes.len() != n as usize {
        return Err(CoreError::Decode("octree point count mismatch".into()));
    }
    Ok(nodes
        .into_iter()
        .map(|c| {
            let r = unmorton(c);
            voxel_center(
                [r[0] as i64 + min[0], r[1] as i64 + min[1], r[2] as i64 + min[2]],
                voxel_size,
            )
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_point_has_one_bit_per_level() {
        let bytes = occupancy_bytes(&[[0, 0, 0]], 8);
        assert_eq!(bytes.len(), 8);
        assert!(bytes.iter().all(|b| b.count_ones() == 1));
    }

    #[test]
    fn eight_siblings_fill_one_node() {
        let keys: Vec<[u32; 3]> = (0..8).map(|c| [c >> 2 & 1, c >> 1 & 1, c & 1]).collect();
        let bytes = occupancy_bytes(&keys, 3);
        assert_eq!(bytes, vec![0x01, 0x01, 0xFF]);
    }

    #[test]
    fn morton_round_trip() {
        for k in [[0, 0, 0], [1, 2, 3], [1023, 5, 777], [65535, 65535, 0]] {
            assert_eq!(unmorton(morton(k)), k);
        }
    }

    #[test]
    fn off_grid_position_is_rejected() {
        assert!(encode_positions(&[[0.013, 0.05, 0.05]], 0.1, 8).is_err());
    }
}
