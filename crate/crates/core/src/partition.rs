//! Cubic partitions of `R^d` with side length `h`.
//!
//! Cells are half-open boxes `((k_1 - 1) h, k_1 h] x ... x ((k_d - 1) h, k_d h]`, so the cell
//! `(0, h]^d` carries the key `(1, ..., 1)`. A point lying on a face belongs to the cell whose
//! upper face it touches.

use std::borrow::Borrow;
use std::fmt;

use crate::error::{invalid_input, invalid_param, Error, Result};

/// Upper bound on the number of cells a universe may hold unless overridden.
pub const DEFAULT_CELL_CAP: usize = 10_000_000;

/// Keys beyond this magnitude are rejected instead of wrapping.
const KEY_LIMIT: f64 = (1u64 << 62) as f64;

/// Integer lattice coordinates of one cell.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct CellKey(Vec<i64>);

impl CellKey {
    pub fn new(coords: Vec<i64>) -> Self {
        CellKey(coords)
    }

    pub fn coords(&self) -> &[i64] {
        &self.0
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn into_inner(self) -> Vec<i64> {
        self.0
    }
}

impl Borrow<[i64]> for CellKey {
    fn borrow(&self) -> &[i64] {
        &self.0
    }
}

impl From<Vec<i64>> for CellKey {
    fn from(v: Vec<i64>) -> Self {
        CellKey(v)
    }
}

impl fmt::Display for CellKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "(")?;
        for (i, c) in self.0.iter().enumerate() {
            if i > 0 {
                write!(f, ",")?;
            }
            write!(f, "{c}")?;
        }
        write!(f, ")")
    }
}

/// Side length, dimension and bounding box of a cubic partition.
#[derive(Debug, Clone, PartialEq)]
pub struct PartitionSpec {
    h: f64,
    lower: Vec<f64>,
    upper: Vec<f64>,
}

impl PartitionSpec {
    pub fn new(h: f64, lower: Vec<f64>, upper: Vec<f64>) -> Result<Self> {
        if !(h.is_finite() && h > 0.0) {
            return Err(invalid_param(format!("cell side h must be positive and finite, got {h}")));
        }
        if lower.is_empty() || lower.len() != upper.len() {
            return Err(invalid_param(format!(
                "bounding box corners must be non-empty and of equal dimension (got {} and {})",
                lower.len(),
                upper.len()
            )));
        }
        for (i, (lo, hi)) in lower.iter().zip(&upper).enumerate() {
            if !(lo.is_finite() && hi.is_finite() && lo < hi) {
                return Err(invalid_param(format!(
                    "bounding box axis {i} must satisfy lower < upper, got [{lo}, {hi}]"
                )));
            }
        }
        Ok(PartitionSpec { h, lower, upper })
    }

    /// Partition of the cube `[lo, hi]^dim`.
    pub fn cube(h: f64, dim: usize, lo: f64, hi: f64) -> Result<Self> {
        Self::new(h, vec![lo; dim], vec![hi; dim])
    }

    pub fn h(&self) -> f64 {
        self.h
    }

    pub fn dim(&self) -> usize {
        self.lower.len()
    }

    pub fn lower(&self) -> &[f64] {
        &self.lower
    }

    pub fn upper(&self) -> &[f64] {
        &self.upper
    }

    /// Same bounding box, different side length.
    pub fn with_h(&self, h: f64) -> Result<Self> {
        Self::new(h, self.lower.clone(), self.upper.clone())
    }

    /// Volume `h^d` of one cell.
    pub fn cell_volume(&self) -> f64 {
        self.h.powi(self.dim() as i32)
    }

    pub fn cell_key(&self, x: &[f64]) -> Result<CellKey> {
        let mut coords = vec![0; self.dim()];
        self.cell_key_into(x, &mut coords)?;
        Ok(CellKey(coords))
    }

    /// Writes the key of the cell containing `x` into `out` without allocating.
    pub fn cell_key_into(&self, x: &[f64], out: &mut [i64]) -> Result<()> {
        if x.len() != self.dim() || out.len() != self.dim() {
            return Err(invalid_input(format!(
                "point has dimension {}, partition has dimension {}",
                x.len(),
                self.dim()
            )));
        }
        for (o, &xi) in out.iter_mut().zip(x) {
            *o = axis_key(xi, self.h)?;
        }
        Ok(())
    }

    /// Lower and upper corners of the cell with the given key.
    pub fn cell_bounds(&self, key: &[i64]) -> (Vec<f64>, Vec<f64>) {
        let lo = key.iter().map(|&k| (k - 1) as f64 * self.h).collect();
        let hi = key.iter().map(|&k| k as f64 * self.h).collect();
        (lo, hi)
    }

    pub fn universe(&self) -> Result<CellUniverse> {
        self.universe_with_cap(DEFAULT_CELL_CAP)
    }

    /// The finite set of cells meeting the bounding box.
    pub fn universe_with_cap(&self, cap: usize) -> Result<CellUniverse> {
        let mut lo = Vec::with_capacity(self.dim());
        let mut hi = Vec::with_capacity(self.dim());
        for (&a, &b) in self.lower.iter().zip(&self.upper) {
            lo.push(axis_key(a, self.h)?);
            hi.push(axis_key(b, self.h)?);
        }
        CellUniverse::new(lo, hi, cap)
    }
}

/// Key of `v` along a single axis: `ceil(v / h)`, snapping quotients within four ulps of an
/// integer onto that integer.
pub fn axis_key(v: f64, h: f64) -> Result<i64> {
    if !v.is_finite() {
        return Err(invalid_input(format!("non-finite coordinate {v}")));
    }
    let q = v / h;
    if q.abs() > KEY_LIMIT {
        return Err(invalid_input(format!(
            "coordinate {v} with h = {h} exceeds the representable key range"
        )));
    }
    let nearest = q.round();
    let ulp = q.abs().next_up() - q.abs();
    let k = if (q - nearest).abs() <= 4.0 * ulp { nearest } else { q.ceil() };
    Ok(k as i64)
}

/// Key of the cell containing `x`.
pub fn cell_key(x: &[f64], spec: &PartitionSpec) -> Result<CellKey> {
    spec.cell_key(x)
}

/// Every key whose cell intersects the bounding box, in row-major order (last axis fastest).
pub fn enumerate_cells(spec: &PartitionSpec) -> Result<Vec<CellKey>> {
    Ok(spec.universe()?.iter().collect())
}

/// A dense, row-major indexed box of cell keys `lo..=hi` per axis.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CellUniverse {
    lo: Vec<i64>,
    hi: Vec<i64>,
    strides: Vec<usize>,
    len: usize,
}

impl CellUniverse {
    pub fn new(lo: Vec<i64>, hi: Vec<i64>, cap: usize) -> Result<Self> {
        if lo.len() != hi.len() || lo.is_empty() {
            return Err(invalid_param("universe corners must be non-empty and of equal dimension"));
        }
        let mut strides = vec![0usize; lo.len()];
        let mut len: usize = 1;
        for axis in (0..lo.len()).rev() {
            if hi[axis] < lo[axis] {
                return Err(invalid_param(format!("empty key range on axis {axis}")));
            }
            strides[axis] = len;
            let extent = usize::try_from(hi[axis] - lo[axis] + 1)
                .ok()
                .filter(|&e| e <= cap)
                .ok_or_else(|| Error::Resource(format!("cell universe exceeds cap {cap}")))?;
            len = len
                .checked_mul(extent)
                .filter(|&l| l <= cap)
                .ok_or_else(|| Error::Resource(format!("cell universe exceeds cap {cap}")))?;
        }
        Ok(CellUniverse { lo, hi, strides, len })
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn dim(&self) -> usize {
        self.lo.len()
    }

    pub fn key_lo(&self) -> &[i64] {
        &self.lo
    }

    pub fn key_hi(&self) -> &[i64] {
        &self.hi
    }

    pub fn index_of(&self, key: &[i64]) -> Option<usize> {
        if key.len() != self.dim() {
            return None;
        }
        let mut idx = 0;
        for axis in 0..key.len() {
            let k = key[axis];
            if k < self.lo[axis] || k > self.hi[axis] {
                return None;
            }
            idx += (k - self.lo[axis]) as usize * self.strides[axis];
        }
        Some(idx)
    }

    pub fn key_at(&self, mut idx: usize) -> CellKey {
        let mut coords = vec![0; self.dim()];
        for axis in 0..self.dim() {
            coords[axis] = self.lo[axis] + (idx / self.strides[axis]) as i64;
            idx %= self.strides[axis];
        }
        CellKey(coords)
    }

    pub fn iter(&self) -> impl Iterator<Item = CellKey> + '_ {
        (0..self.len).map(move |i| self.key_at(i))
    }

    /// Stable identifier of the key box, used to detect records built over another universe.
    pub fn fingerprint(&self) -> u64 {
        let mut h = crate::seeds::mix(0x5045_4C4C_5F55_4E49, self.dim() as u64);
        for (&a, &b) in self.lo.iter().zip(&self.hi) {
            h = crate::seeds::mix(h, a as u64);
            h = crate::seeds::mix(h, b as u64);
        }
        h
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn anchor_cell() {
        let spec = PartitionSpec::cube(1.0, 1, -1.0, 1.0).unwrap();
        assert_eq!(spec.cell_key(&[0.5]).unwrap().coords(), &[1]);
    }

    #[test]
    fn upper_face_is_inclusive() {
        let spec = PartitionSpec::cube(1.0, 1, -1.0, 2.0).unwrap();
        assert_eq!(spec.cell_key(&[1.0]).unwrap().coords(), &[1]);
        assert_eq!(spec.cell_key(&[1.0 + 1e-9]).unwrap().coords(), &[2]);
        assert_eq!(spec.cell_key(&[0.0]).unwrap().coords(), &[0]);
    }

    #[test]
    fn snaps_quotients_near_integers() {
        // 0.7 / 0.1 evaluates to 7.000000000000001
        assert_eq!(axis_key(0.7, 0.1).unwrap(), 7);
        assert_eq!(axis_key(0.3, 0.1).unwrap(), 3);
        assert_eq!(axis_key(1.0 + f64::EPSILON, 1.0).unwrap(), 1);
    }

    #[test]
    fn two_dimensional_key() {
        let spec = PartitionSpec::cube(0.5, 2, -1.0, 3.0).unwrap();
        // brute-force scan of (k - 1) h < x <= k h
        let scan = |x: f64| (-20i64..20).find(|&k| (k - 1) as f64 * 0.5 < x && x <= k as f64 * 0.5).unwrap();
        assert_eq!(scan(-0.3), 0);
        assert_eq!(scan(2.7), 6);
        assert_eq!(spec.cell_key(&[-0.3, 2.7]).unwrap().coords(), &[0, 6]);
    }

    #[test]
    fn rejects_bad_points() {
        let spec = PartitionSpec::cube(1.0, 1, -1.0, 1.0).unwrap();
        assert!(matches!(spec.cell_key(&[f64::NAN]), Err(Error::InvalidInput(_))));
        assert!(matches!(spec.cell_key(&[f64::INFINITY]), Err(Error::InvalidInput(_))));
        assert!(matches!(spec.cell_key(&[1e300]), Err(Error::InvalidInput(_))));
        assert!(spec.cell_key(&[0.0, 0.0]).is_err());
    }

    #[test]
    fn rejects_bad_specs() {
        assert!(PartitionSpec::cube(0.0, 1, -1.0, 1.0).is_err());
        assert!(PartitionSpec::cube(-1.0, 1, -1.0, 1.0).is_err());
        assert!(PartitionSpec::cube(1.0, 1, 1.0, 1.0).is_err());
        assert!(PartitionSpec::new(1.0, vec![], vec![]).is_err());
    }

    /// Keys on one axis whose cell meets [lo, hi], found by scanning a fine grid of box points.
    fn scan_axis(lo: f64, hi: f64, h: f64) -> Vec<i64> {
        let mut keys = std::collections::BTreeSet::new();
        let steps = 10_000;
        for i in 0..=steps {
            let x = lo + (hi - lo) * i as f64 / steps as f64;
            let k = (-1000i64..1000).find(|&k| (k - 1) as f64 * h < x && x <= k as f64 * h).unwrap();
            keys.insert(k);
        }
        keys.into_iter().collect()
    }

    #[test]
    fn enumerate_small_boxes() {
        let spec = PartitionSpec::cube(1.0, 1, -1.0, 1.0).unwrap();
        let keys: Vec<_> = enumerate_cells(&spec).unwrap().into_iter().map(|k| k.coords()[0]).collect();
        assert_eq!(keys, scan_axis(-1.0, 1.0, 1.0));
        assert_eq!(keys, vec![-1, 0, 1]);

        let spec = PartitionSpec::cube(1.0, 1, 0.1, 0.9).unwrap();
        assert_eq!(enumerate_cells(&spec).unwrap(), vec![CellKey::new(vec![1])]);

        let spec = PartitionSpec::cube(0.5, 2, -1.0, 1.0).unwrap();
        let cells = enumerate_cells(&spec).unwrap();
        let axis = scan_axis(-1.0, 1.0, 0.5);
        assert_eq!(axis, vec![-2, -1, 0, 1, 2]);
        assert_eq!(cells.len(), axis.len() * axis.len());
        let unique: std::collections::HashSet<_> = cells.iter().collect();
        assert_eq!(unique.len(), 25);
    }

    #[test]
    fn universe_cap() {
        let spec = PartitionSpec::cube(1e-4, 2, 0.0, 1.0).unwrap();
        assert!(matches!(spec.universe(), Err(Error::Resource(_))));
        assert!(matches!(spec.universe_with_cap(100), Err(Error::Resource(_))));
    }

    #[test]
    fn universe_indexing_roundtrip() {
        let spec = PartitionSpec::new(0.3, vec![-1.0, 0.0, 2.0], vec![1.0, 0.5, 2.2]).unwrap();
        let u = spec.universe().unwrap();
        for i in 0..u.len() {
            assert_eq!(u.index_of(u.key_at(i).coords()), Some(i));
        }
        assert_eq!(u.index_of(&[100, 0, 0]), None);
    }
}
