//! Mesh geometry, the collective-targetable address map and the
//! multi-address codec.
//!
//! A multi-address is a `(base, mask)` pair: every set bit of the mask turns
//! the corresponding base bit into a don't-care, so masking `n` bits names
//! `2^n` addresses. Inside the collective region node windows are equal,
//! aligned and laid out Y-major (Y varies fastest), so the node-index field
//! of an address splits into a Y part (low bits) and an X part (high bits)
//! and translating an address mask into coordinate masks is a bit select.

use std::collections::BTreeSet;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Position of a node in the mesh. `x` is the column, `y` the row; North is +y.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Coord {
    pub x: u32,
    pub y: u32,
}

impl Coord {
    pub const fn new(x: u32, y: u32) -> Self {
        Self { x, y }
    }

    pub fn manhattan(self, other: Coord) -> u32 {
        self.x.abs_diff(other.x) + self.y.abs_diff(other.y)
    }
}

impl fmt::Display for Coord {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({},{})", self.x, self.y)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Mesh {
    pub width: u32,
    pub height: u32,
}

impl Mesh {
    pub const fn new(width: u32, height: u32) -> Self {
        Self { width, height }
    }

    pub fn contains(&self, c: Coord) -> bool {
        c.x < self.width && c.y < self.height
    }

    pub fn num_nodes(&self) -> usize {
        (self.width * self.height) as usize
    }

    /// Dense index used for per-node arrays (row-major, x fastest).
    pub fn index(&self, c: Coord) -> usize {
        (c.y * self.width + c.x) as usize
    }

    pub fn coord(&self, index: usize) -> Coord {
        let i = index as u32;
        Coord::new(i % self.width, i / self.width)
    }

    pub fn coords(&self) -> impl Iterator<Item = Coord> + '_ {
        (0..self.num_nodes()).map(move |i| self.coord(i))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum TopologyError {
    #[error("region extent {0} is not a non-zero power of two")]
    NonPowerOfTwoExtent(u32),
    #[error("region origin ({x},{y}) is not aligned to the region extent {w}x{h}")]
    MisalignedOrigin { x: u32, y: u32, w: u32, h: u32 },
    #[error("node windows overlap: {0}")]
    OverlappingWindows(String),
    #[error("region {w}x{h} at ({x},{y}) does not fit in a {mesh_w}x{mesh_h} mesh")]
    RegionOutsideMesh {
        x: u32,
        y: u32,
        w: u32,
        h: u32,
        mesh_w: u32,
        mesh_h: u32,
    },
    #[error("empty destination set")]
    EmptySet,
    #[error("{0} lies outside the collective region")]
    OutsideRegion(Coord),
    #[error("destination set is not expressible as a single (dst, mask) pair")]
    NotRepresentable,
    #[error("address mask {mask:#x} on base {base:#x} does not conform to the node-index field")]
    NonConformingMask { base: u64, mask: u64 },
    #[error("{0} is not a destination of the multi-address")]
    NotADestination(Coord),
    #[error("address {0:#x} is not mapped to any node")]
    Unmapped(u64),
}

pub type Result<T> = std::result::Result<T, TopologyError>;

/// Parameters of the collective-targetable submesh and the per-node windows.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct AddressMap {
    pub region_x: u32,
    pub region_y: u32,
    pub region_w: u32,
    pub region_h: u32,
    /// Each node owns a `2^node_region_log2`-byte window.
    pub node_region_log2: u32,
    /// Byte address of the window of node `(region_x, region_y)`.
    pub base_address: u64,
}

impl AddressMap {
    fn log2_w(&self) -> u32 {
        self.region_w.trailing_zeros()
    }

    fn log2_h(&self) -> u32 {
        self.region_h.trailing_zeros()
    }

    pub fn window_size(&self) -> u64 {
        1u64 << self.node_region_log2
    }

    /// Bits `[s, s + log2(W*H))` of an address.
    pub fn index_field_mask(&self) -> u64 {
        let bits = self.log2_w() + self.log2_h();
        ((1u64 << bits) - 1) << self.node_region_log2
    }

    fn region_span(&self) -> u64 {
        u64::from(self.region_w) * u64::from(self.region_h) * self.window_size()
    }

    pub fn in_region(&self, c: Coord) -> bool {
        c.x >= self.region_x
            && c.x < self.region_x + self.region_w
            && c.y >= self.region_y
            && c.y < self.region_y + self.region_h
    }

    pub fn region_coords(&self) -> impl Iterator<Item = Coord> + '_ {
        (self.region_x..self.region_x + self.region_w)
            .flat_map(move |x| (self.region_y..self.region_y + self.region_h).map(move |y| Coord::new(x, y)))
    }

    /// Y-major node index: Y varies fastest.
    fn region_index(&self, c: Coord) -> u64 {
        u64::from(c.x - self.region_x) * u64::from(self.region_h) + u64::from(c.y - self.region_y)
    }

    /// Base address of the window owned by `c`. Nodes outside the region are
    /// placed after the region, in Y-major order over the whole mesh.
    pub fn window_base(&self, mesh: &Mesh, c: Coord) -> u64 {
        if self.in_region(c) {
            self.base_address + (self.region_index(c) << self.node_region_log2)
        } else {
            let k = self.outside_rank(mesh, c);
            self.base_address + self.region_span() + (k << self.node_region_log2)
        }
    }

    fn outside_rank(&self, mesh: &Mesh, c: Coord) -> u64 {
        let mut k = 0u64;
        for x in 0..mesh.width {
            for y in 0..mesh.height {
                let n = Coord::new(x, y);
                if n == c {
                    return k;
                }
                if !self.in_region(n) {
                    k += 1;
                }
            }
        }
        k
    }

    /// Node owning `addr`.
    pub fn decode(&self, mesh: &Mesh, addr: u64) -> Result<Coord> {
        let lo = self.base_address;
        if addr < lo {
            return Err(TopologyError::Unmapped(addr));
        }
        let off = addr - lo;
        if off < self.region_span() {
            return Ok(self.coord_of_index(off >> self.node_region_log2));
        }
        let mut k = (off - self.region_span()) >> self.node_region_log2;
        for x in 0..mesh.width {
            for y in 0..mesh.height {
                let n = Coord::new(x, y);
                if !self.in_region(n) {
                    if k == 0 {
                        return Ok(n);
                    }
                    k -= 1;
                }
            }
        }
        Err(TopologyError::Unmapped(addr))
    }

    fn coord_of_index(&self, idx: u64) -> Coord {
        let h = u64::from(self.region_h);
        Coord::new(self.region_x + (idx / h) as u32, self.region_y + (idx % h) as u32)
    }
}

pub fn validate_region(map: &AddressMap, mesh: &Mesh) -> Result<()> {
    for extent in [map.region_w, map.region_h] {
        if extent == 0 || !extent.is_power_of_two() {
            return Err(TopologyError::NonPowerOfTwoExtent(extent));
        }
    }
    if map.region_x % map.region_w != 0 || map.region_y % map.region_h != 0 {
        return Err(TopologyError::MisalignedOrigin {
            x: map.region_x,
            y: map.region_y,
            w: map.region_w,
            h: map.region_h,
        });
    }
    if map.region_x + map.region_w > mesh.width || map.region_y + map.region_h > mesh.height {
        return Err(TopologyError::RegionOutsideMesh {
            x: map.region_x,
            y: map.region_y,
            w: map.region_w,
            h: map.region_h,
            mesh_w: mesh.width,
            mesh_h: mesh.height,
        });
    }
    let field_top = map.node_region_log2 + map.log2_w() + map.log2_h();
    let total = u64::from(mesh.width) * u64::from(mesh.height);
    if field_top >= 64 || map.node_region_log2 >= 48 {
        return Err(TopologyError::OverlappingWindows(format!(
            "window size 2^{} leaves no room for the node index",
            map.node_region_log2
        )));
    }
    if map.base_address & ((1u64 << field_top) - 1) != 0 {
        return Err(TopologyError::OverlappingWindows(format!(
            "base address {:#x} is not aligned to the region span 2^{}",
            map.base_address, field_top
        )));
    }
    if map
        .base_address
        .checked_add(total << map.node_region_log2)
        .is_none()
    {
        return Err(TopologyError::OverlappingWindows("address space overflow".into()));
    }
    Ok(())
}

/// A byte address with a don't-care mask of the same width.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct MultiAddress {
    pub base: u64,
    pub mask: u64,
}

impl MultiAddress {
    pub const fn unicast(base: u64) -> Self {
        Self { base, mask: 0 }
    }

    pub fn is_multicast(&self) -> bool {
        self.mask != 0
    }
}

/// Destination (or source) set encoded as coordinates plus per-axis masks.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct CoordMasks {
    pub dst: Coord,
    pub x_mask: u32,
    pub y_mask: u32,
}

impl CoordMasks {
    pub fn unicast(dst: Coord) -> Self {
        Self {
            dst,
            x_mask: 0,
            y_mask: 0,
        }
    }

    /// Clears the masked bits of `dst`.
    pub fn canonical(self) -> Self {
        Self {
            dst: Coord::new(self.dst.x & !self.x_mask, self.dst.y & !self.y_mask),
            ..self
        }
    }

    pub fn is_unicast(&self) -> bool {
        self.x_mask == 0 && self.y_mask == 0
    }

    pub fn len(&self) -> usize {
        1usize << (self.x_mask.count_ones() + self.y_mask.count_ones())
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn matches_x(&self, x: u32) -> bool {
        (x & !self.x_mask) == (self.dst.x & !self.x_mask)
    }

    pub fn matches_y(&self, y: u32) -> bool {
        (y & !self.y_mask) == (self.dst.y & !self.y_mask)
    }

    pub fn contains(&self, c: Coord) -> bool {
        self.matches_x(c.x) && self.matches_y(c.y)
    }

    /// Values of one axis selected by `(value, mask)`, ascending.
    fn axis_values(value: u32, mask: u32) -> Vec<u32> {
        let base = value & !mask;
        let mut out = Vec::with_capacity(1 << mask.count_ones());
        // Enumerate all submasks of `mask`.
        let mut sub = 0u32;
        loop {
            out.push(base | sub);
            if sub == mask {
                break;
            }
            sub = (sub.wrapping_sub(mask)) & mask;
        }
        out.sort_unstable();
        out
    }

    pub fn xs(&self) -> Vec<u32> {
        Self::axis_values(self.dst.x, self.x_mask)
    }

    pub fn ys(&self) -> Vec<u32> {
        Self::axis_values(self.dst.y, self.y_mask)
    }
}

pub fn expand_coord_masks(cm: &CoordMasks) -> BTreeSet<Coord> {
    let ys = cm.ys();
    cm.xs()
        .into_iter()
        .flat_map(|x| ys.iter().map(move |&y| Coord::new(x, y)))
        .collect()
}

/// `(base, mask)` for a set of axis values, if the set is mask-expressible.
fn axis_encoding(values: &BTreeSet<u32>) -> Option<(u32, u32)> {
    let and = values.iter().fold(u32::MAX, |a, &v| a & v);
    let or = values.iter().fold(0, |a, &v| a | v);
    let mask = and ^ or;
    (values.len() == 1usize << mask.count_ones()).then_some((and, mask))
}

pub fn encode_destinations(dests: &BTreeSet<Coord>, map: &AddressMap) -> Result<CoordMasks> {
    if dests.is_empty() {
        return Err(TopologyError::EmptySet);
    }
    if let Some(&c) = dests.iter().find(|&&c| !map.in_region(c)) {
        // A lone node outside the region is still reachable by unicast.
        if dests.len() == 1 {
            return Ok(CoordMasks::unicast(c));
        }
        return Err(TopologyError::OutsideRegion(c));
    }
    let xs: BTreeSet<u32> = dests.iter().map(|c| c.x).collect();
    let ys: BTreeSet<u32> = dests.iter().map(|c| c.y).collect();
    if xs.len() * ys.len() != dests.len() {
        return Err(TopologyError::NotRepresentable);
    }
    let (x, x_mask) = axis_encoding(&xs).ok_or(TopologyError::NotRepresentable)?;
    let (y, y_mask) = axis_encoding(&ys).ok_or(TopologyError::NotRepresentable)?;
    Ok(CoordMasks {
        dst: Coord::new(x, y),
        x_mask,
        y_mask,
    })
}

/// Greedy cover of an arbitrary set by disjoint mask-expressible blocks,
/// largest block first. Ties go to the numerically smaller masks, then to
/// the smaller base coordinate.
pub fn cover_destinations(dests: &BTreeSet<Coord>, map: &AddressMap) -> Vec<CoordMasks> {
    let mut remaining = dests.clone();
    let mut out = Vec::new();
    let outside: Vec<Coord> = remaining.iter().copied().filter(|&c| !map.in_region(c)).collect();
    for c in outside {
        remaining.remove(&c);
        out.push(CoordMasks::unicast(c));
    }
    if remaining.is_empty() {
        return out;
    }

    let lw = map.region_w.trailing_zeros();
    let lh = map.region_h.trailing_zeros();
    let mut mask_pairs: Vec<(u32, u32)> = (0..1u32 << lw)
        .flat_map(|xm| (0..1u32 << lh).map(move |ym| (xm, ym)))
        .collect();
    mask_pairs.sort_by_key(|&(xm, ym)| (std::cmp::Reverse(xm.count_ones() + ym.count_ones()), xm, ym));

    while !remaining.is_empty() {
        let mut chosen = None;
        'sizes: for &(xm, ym) in &mask_pairs {
            let size = 1usize << (xm.count_ones() + ym.count_ones());
            if size > remaining.len() {
                continue;
            }
            // Only blocks anchored at a remaining coordinate can be fully contained.
            for &anchor in &remaining {
                let cm = CoordMasks {
                    dst: anchor,
                    x_mask: xm,
                    y_mask: ym,
                }
                .canonical();
                if cm.dst != anchor && remaining.contains(&cm.dst) {
                    // Same block will be found from its canonical anchor.
                    continue;
                }
                if expand_coord_masks(&cm).iter().all(|c| remaining.contains(c)) {
                    chosen = Some(cm);
                    break 'sizes;
                }
            }
        }
        let cm = chosen.expect("a unicast block always fits");
        for c in expand_coord_masks(&cm) {
            remaining.remove(&c);
        }
        out.push(cm);
    }
    out
}

/// Bit-selects the X and Y masks out of an address mask.
pub fn addr_mask_to_coord_masks(ma: &MultiAddress, map: &AddressMap, mesh: &Mesh) -> Result<CoordMasks> {
    let nonconforming = TopologyError::NonConformingMask {
        base: ma.base,
        mask: ma.mask,
    };
    let dst = map.decode(mesh, ma.base)?;
    if !map.in_region(dst) {
        return if ma.mask == 0 {
            Ok(CoordMasks::unicast(dst))
        } else {
            Err(nonconforming)
        };
    }
    if ma.mask & !map.index_field_mask() != 0 {
        return Err(nonconforming);
    }
    let s = map.node_region_log2;
    let lh = map.log2_h();
    let y_mask = ((ma.mask >> s) & u64::from(map.region_h - 1)) as u32;
    let x_mask = ((ma.mask >> (s + lh)) & u64::from(map.region_w - 1)) as u32;
    Ok(CoordMasks { dst, x_mask, y_mask }.canonical())
}

/// Address-space image of a coordinate-mask set: the window of the canonical
/// destination plus `offset`, with the index-field bits masked.
pub fn coord_masks_to_multi_address(cm: &CoordMasks, offset: u64, map: &AddressMap, mesh: &Mesh) -> MultiAddress {
    let cm = cm.canonical();
    let s = map.node_region_log2;
    let mask = (u64::from(cm.y_mask) << s) | (u64::from(cm.x_mask) << (s + map.log2_h()));
    MultiAddress {
        base: map.window_base(mesh, cm.dst) + offset,
        mask,
    }
}

/// Translates a multi-address back into the local window of `local`.
pub fn resolve_local_address(ma: &MultiAddress, local: Coord, map: &AddressMap, mesh: &Mesh) -> Result<u64> {
    let cm = addr_mask_to_coord_masks(ma, map, mesh)?;
    if !cm.contains(local) {
        return Err(TopologyError::NotADestination(local));
    }
    if !map.in_region(local) {
        return Ok(ma.base);
    }
    let field = map.index_field_mask();
    Ok((ma.base & !field) | (map.region_index(local) << map.node_region_log2))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn map4() -> AddressMap {
        AddressMap {
            region_x: 0,
            region_y: 0,
            region_w: 4,
            region_h: 4,
            node_region_log2: 21,
            base_address: 0,
        }
    }

    fn set(cs: &[(u32, u32)]) -> BTreeSet<Coord> {
        cs.iter().map(|&(x, y)| Coord::new(x, y)).collect()
    }

    #[test]
    fn region_validation() {
        let mesh = Mesh::new(5, 4);
        assert_eq!(validate_region(&map4(), &mesh), Ok(()));
        let bad = AddressMap { region_x: 1, ..map4() };
        assert!(matches!(
            validate_region(&bad, &mesh),
            Err(TopologyError::MisalignedOrigin { .. })
        ));
        let bad = AddressMap { region_w: 3, ..map4() };
        assert_eq!(validate_region(&bad, &mesh), Err(TopologyError::NonPowerOfTwoExtent(3)));
        let bad = AddressMap {
            base_address: 1 << 21,
            ..map4()
        };
        assert!(matches!(
            validate_region(&bad, &mesh),
            Err(TopologyError::OverlappingWindows(_))
        ));
    }

    #[test]
    fn encode_examples() {
        let m = map4();
        assert_eq!(
            encode_destinations(&set(&[(2, 1)]), &m),
            Ok(CoordMasks::unicast(Coord::new(2, 1)))
        );
        assert_eq!(
            encode_destinations(&set(&[(0, 0), (1, 0), (0, 1), (1, 1)]), &m),
            Ok(CoordMasks {
                dst: Coord::new(0, 0),
                x_mask: 0b01,
                y_mask: 0b01
            })
        );
        assert_eq!(
            encode_destinations(&set(&[(0, 0), (2, 0)]), &m),
            Ok(CoordMasks {
                dst: Coord::new(0, 0),
                x_mask: 0b10,
                y_mask: 0
            })
        );
        assert_eq!(
            encode_destinations(&set(&[(0, 0), (1, 0), (2, 0)]), &m),
            Err(TopologyError::NotRepresentable)
        );
        assert_eq!(encode_destinations(&BTreeSet::new(), &m), Err(TopologyError::EmptySet));
    }

    #[test]
    fn cover_examples() {
        let m = map4();
        let cover = cover_destinations(&set(&[(0, 0), (1, 0), (2, 0)]), &m);
        assert_eq!(
            cover,
            vec![
                CoordMasks {
                    dst: Coord::new(0, 0),
                    x_mask: 1,
                    y_mask: 0
                },
                CoordMasks::unicast(Coord::new(2, 0)),
            ]
        );
        let full: BTreeSet<Coord> = m.region_coords().collect();
        assert_eq!(
            cover_destinations(&full, &m),
            vec![CoordMasks {
                dst: Coord::new(0, 0),
                x_mask: 3,
                y_mask: 3
            }]
        );
    }

    #[test]
    fn mask_translation() {
        let m = map4();
        let mesh = Mesh::new(5, 4);
        let cm = addr_mask_to_coord_masks(
            &MultiAddress {
                base: 0,
                mask: 0b11 << 21,
            },
            &m,
            &mesh,
        )
        .unwrap();
        assert_eq!((cm.x_mask, cm.y_mask), (0, 0b11));
        let cm = addr_mask_to_coord_masks(
            &MultiAddress {
                base: 0,
                mask: 0b1100 << 21,
            },
            &m,
            &mesh,
        )
        .unwrap();
        assert_eq!((cm.x_mask, cm.y_mask), (0b11, 0));
        assert!(matches!(
            addr_mask_to_coord_masks(&MultiAddress { base: 0, mask: 1 << 20 }, &m, &mesh),
            Err(TopologyError::NonConformingMask { .. })
        ));
    }

    #[test]
    fn resolve_examples() {
        let m = map4();
        let mesh = Mesh::new(5, 4);
        let ma = MultiAddress {
            base: 0x40,
            mask: 0b11 << 21,
        };
        let a = resolve_local_address(&ma, Coord::new(0, 1), &m, &mesh).unwrap();
        assert_eq!(a, m.window_base(&mesh, Coord::new(0, 1)) + 0x40);
        let uni = MultiAddress::unicast(m.window_base(&mesh, Coord::new(2, 3)) + 8);
        assert_eq!(resolve_local_address(&uni, Coord::new(2, 3), &m, &mesh), Ok(uni.base));
        assert_eq!(
            resolve_local_address(&ma, Coord::new(1, 0), &m, &mesh),
            Err(TopologyError::NotADestination(Coord::new(1, 0)))
        );
    }

    #[test]
    fn expand_examples() {
        let cm = CoordMasks {
            dst: Coord::new(0, 0),
            x_mask: 1,
            y_mask: 0,
        };
        assert_eq!(expand_coord_masks(&cm), set(&[(0, 0), (1, 0)]));
        assert_eq!(
            expand_coord_masks(&CoordMasks::unicast(Coord::new(3, 2))),
            set(&[(3, 2)])
        );
        let cm = CoordMasks {
            dst: Coord::new(0, 0),
            x_mask: 3,
            y_mask: 1,
        };
        let e = expand_coord_masks(&cm);
        assert_eq!(e.len(), 8);
        assert!(e.iter().all(|c| c.x < 4 && c.y < 2));
    }

    #[test]
    fn windows_decode_back() {
        let m = map4();
        let mesh = Mesh::new(5, 4);
        for c in mesh.coords() {
            let base = m.window_base(&mesh, c);
            assert_eq!(m.decode(&mesh, base + 17), Ok(c));
        }
    }
}
