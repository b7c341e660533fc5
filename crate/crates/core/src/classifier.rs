//! The partitioning classification rule.
//!
//! Each cell stores unnormalized sums: the signed label sum for binary problems and per-class
//! counts otherwise. Sign and argmax are invariant to the `1/n` normalization, so predictions
//! agree with the normalized rule while counts stay exact integers.

use std::collections::HashMap;

use crate::distributions::{argmax, sign, Dataset, Label, LabelSet};
use crate::error::{invalid_input, Result};
use crate::partition::{CellKey, PartitionSpec};

/// Magic tag opening a serialized classifier.
pub const PCLF_MAGIC: &[u8; 5] = b"PCLF1";

/// Per-cell aggregated label sums over a cubic partition.
#[derive(Debug, Clone)]
pub struct PartitionClassifier {
    spec: PartitionSpec,
    labels: LabelSet,
    index: HashMap<CellKey, usize>,
    values: Vec<f64>,
    counts: Vec<u64>,
    n: usize,
    private: bool,
}

impl PartialEq for PartitionClassifier {
    fn eq(&self, other: &Self) -> bool {
        let counts = |c: &Self| -> Vec<Option<u64>> { c.cells().iter().map(|(k, _)| c.cell_count(k.coords())).collect() };
        self.spec == other.spec
            && self.labels == other.labels
            && self.n == other.n
            && self.private == other.private
            && self.cells() == other.cells()
            && counts(self) == counts(other)
    }
}

impl PartitionClassifier {
    /// Fits the observable-data rule in a single pass.
    pub fn fit(data: &Dataset, spec: &PartitionSpec) -> Result<Self> {
        if data.is_empty() {
            return Err(invalid_input("cannot fit a classifier on an empty dataset"));
        }
        if data.dim() != spec.dim() {
            return Err(invalid_input(format!(
                "data dimension {} does not match partition dimension {}",
                data.dim(),
                spec.dim()
            )));
        }
        let labels = data.labels();
        let width = labels.values_per_cell();
        let mut index: HashMap<CellKey, usize> = HashMap::new();
        let mut values = Vec::new();
        let mut counts = Vec::new();
        let mut key = vec![0i64; spec.dim()];
        for (x, y) in data.iter() {
            spec.cell_key_into(x, &mut key)?;
            let slot = match index.get(key.as_slice()) {
                Some(&s) => s,
                None => {
                    let s = counts.len();
                    index.insert(CellKey::new(key.clone()), s);
                    values.extend(std::iter::repeat(0.0).take(width));
                    counts.push(0);
                    s
                }
            };
            counts[slot] += 1;
            match labels {
                LabelSet::Binary => values[slot] += y as f64,
                LabelSet::MultiClass(_) => {
                    let k = labels.class_index(y).ok_or_else(|| invalid_input(format!("label {y} out of range")))?;
                    values[slot * width + k] += 1.0;
                }
            }
        }
        Ok(PartitionClassifier { spec: spec.clone(), labels, index, values, counts, n: data.len(), private: false })
    }

    /// Assembles a classifier from explicit cell sums. Private classifiers carry no cell counts.
    pub fn from_cells(
        spec: PartitionSpec,
        labels: LabelSet,
        cells: Vec<(CellKey, Vec<f64>)>,
        counts: Option<Vec<u64>>,
        n: usize,
        private: bool,
    ) -> Result<Self> {
        let width = labels.values_per_cell();
        if let Some(c) = &counts {
            if c.len() != cells.len() {
                return Err(invalid_input("one count per cell is required"));
            }
        }
        let mut index = HashMap::with_capacity(cells.len());
        let mut values = Vec::with_capacity(cells.len() * width);
        for (i, (key, v)) in cells.into_iter().enumerate() {
            if key.dim() != spec.dim() || v.len() != width {
                return Err(invalid_input(format!("cell {key} has the wrong shape")));
            }
            if index.insert(key.clone(), i).is_some() {
                return Err(invalid_input(format!("duplicate cell {key}")));
            }
            values.extend(v);
        }
        Ok(PartitionClassifier { spec, labels, index, values, counts: counts.unwrap_or_default(), n, private })
    }

    pub fn spec(&self) -> &PartitionSpec {
        &self.spec
    }

    pub fn labels(&self) -> LabelSet {
        self.labels
    }

    pub fn num_classes(&self) -> usize {
        self.labels.num_classes()
    }

    /// Number of samples the classifier was fitted on.
    pub fn n(&self) -> usize {
        self.n
    }

    pub fn is_private(&self) -> bool {
        self.private
    }

    pub fn num_cells(&self) -> usize {
        self.index.len()
    }

    /// Stored sums of a cell, `None` for cells without data.
    pub fn cell_values(&self, key: &[i64]) -> Option<&[f64]> {
        let w = self.labels.values_per_cell();
        self.index.get(key).map(|&s| &self.values[s * w..(s + 1) * w])
    }

    /// Sample count of a cell (observable fits only).
    pub fn cell_count(&self, key: &[i64]) -> Option<u64> {
        if self.private {
            return None;
        }
        self.index.get(key).map(|&s| self.counts[s])
    }

    /// Cells in key order with their sums.
    pub fn cells(&self) -> Vec<(&CellKey, &[f64])> {
        let w = self.labels.values_per_cell();
        let mut out: Vec<_> = self.index.iter().map(|(k, &s)| (k, &self.values[s * w..(s + 1) * w])).collect();
        out.sort_by(|a, b| a.0.cmp(b.0));
        out
    }

    /// Decision on a cell; a cell without data behaves as all-zero sums.
    pub fn predict_cell(&self, key: &[i64]) -> Label {
        match self.cell_values(key) {
            Some(v) => self.decide(v),
            None => self.labels.label(0),
        }
    }

    fn decide(&self, v: &[f64]) -> Label {
        match self.labels {
            LabelSet::Binary => sign(v[0]),
            LabelSet::MultiClass(_) => self.labels.label(argmax(v)),
        }
    }

    /// `sign(sum)` or `argmax` of the cell containing `x`. Points that cannot be keyed (non-finite
    /// coordinates or wrong dimension) get the empty-cell decision.
    pub fn predict(&self, x: &[f64]) -> Label {
        match self.spec.cell_key(x) {
            Ok(k) => self.predict_cell(k.coords()),
            Err(_) => self.labels.label(0),
        }
    }

    pub fn predict_batch<'a, I>(&self, points: I) -> Vec<Label>
    where
        I: IntoIterator<Item = &'a [f64]>,
    {
        points.into_iter().map(|x| self.predict(x)).collect()
    }

    /// Same classifier with every cell sum multiplied by `factor`.
    pub fn scaled(&self, factor: f64) -> Self {
        let mut c = self.clone();
        c.values.iter_mut().for_each(|v| *v *= factor);
        c
    }

    /// Serializes to the little-endian `PCLF1` layout:
    ///
    /// ```text
    /// magic "PCLF1" | flags u8 (bit 0: private) | dim u32 | classes u32 (0 = binary +1/-1)
    /// | h f64 | lower f64*dim | upper f64*dim | n u64 | cells u64
    /// | per cell, in key order: key i64*dim, sums f64*width, count u64 (observable only)
    /// ```
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(PCLF_MAGIC);
        out.push(u8::from(self.private));
        out.extend_from_slice(&(self.spec.dim() as u32).to_le_bytes());
        let classes = match self.labels {
            LabelSet::Binary => 0u32,
            LabelSet::MultiClass(m) => m as u32,
        };
        out.extend_from_slice(&classes.to_le_bytes());
        out.extend_from_slice(&self.spec.h().to_le_bytes());
        for v in self.spec.lower().iter().chain(self.spec.upper()) {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out.extend_from_slice(&(self.n as u64).to_le_bytes());
        out.extend_from_slice(&(self.index.len() as u64).to_le_bytes());
        for (key, vals) in self.cells() {
            for c in key.coords() {
                out.extend_from_slice(&c.to_le_bytes());
            }
            for v in vals {
                out.extend_from_slice(&v.to_le_bytes());
            }
            if !self.private {
                let s = self.index[key];
                out.extend_from_slice(&self.counts[s].to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(5)? != PCLF_MAGIC {
            return Err(invalid_input("not a PCLF1 classifier dump"));
        }
        let private = match r.take(1)?[0] {
            0 => false,
            1 => true,
            f => return Err(invalid_input(format!("unknown flags {f:#x}"))),
        };
        let dim = r.u32()? as usize;
        let labels = match r.u32()? {
            0 => LabelSet::Binary,
            m if m >= 2 => LabelSet::MultiClass(m as usize),
            m => return Err(invalid_input(format!("invalid class count {m}"))),
        };
        if dim == 0 || dim > 1 << 16 {
            return Err(invalid_input(format!("invalid dimension {dim}")));
        }
        let h = r.f64()?;
        let lower = (0..dim).map(|_| r.f64()).collect::<Result<Vec<_>>>()?;
        let upper = (0..dim).map(|_| r.f64()).collect::<Result<Vec<_>>>()?;
        let spec = PartitionSpec::new(h, lower, upper)?;
        let n = r.u64()? as usize;
        let num_cells = r.u64()? as usize;
        let width = labels.values_per_cell();
        let per_cell = 8 * (dim + width + usize::from(!private));
        if num_cells.checked_mul(per_cell) != Some(bytes.len() - r.pos) {
            return Err(invalid_input("classifier dump length does not match its cell count"));
        }
        let mut cells = Vec::with_capacity(num_cells);
        let mut counts = Vec::new();
        for _ in 0..num_cells {
            let key = (0..dim).map(|_| r.i64()).collect::<Result<Vec<_>>>()?;
            let vals = (0..width).map(|_| r.f64()).collect::<Result<Vec<_>>>()?;
            if !private {
                counts.push(r.u64()?);
            }
            cells.push((CellKey::new(key), vals));
        }
        Self::from_cells(spec, labels, cells, (!private).then_some(counts), n, private)
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, k: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(k).filter(|&e| e <= self.bytes.len());
        let end = end.ok_or_else(|| invalid_input("truncated classifier dump"))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn arr<const N: usize>(&mut self) -> Result<[u8; N]> {
        Ok(self.take(N)?.try_into().expect("slice length checked"))
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.arr()?))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.arr()?))
    }

    fn i64(&mut self) -> Result<i64> {
        Ok(i64::from_le_bytes(self.arr()?))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.arr()?))
    }
}

pub fn fit(data: &Dataset, spec: &PartitionSpec) -> Result<PartitionClassifier> {
    PartitionClassifier::fit(data, spec)
}

pub fn predict(clf: &PartitionClassifier, x: &[f64]) -> Label {
    clf.predict(x)
}

pub fn predict_batch(clf: &PartitionClassifier, points: &[Vec<f64>]) -> Vec<Label> {
    clf.predict_batch(points.iter().map(Vec::as_slice))
}
