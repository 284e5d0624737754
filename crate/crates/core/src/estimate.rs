//! Joint density estimation over `(value, context)` windows.
//!
//! The density of a window `x ∈ [0,1]^d` is expanded in the product basis
//! `f_j(x) = Π_i f_{j_i}(x_i)`. With an orthonormal basis the least-squares
//! coefficients are plain sample means, `a_j = mean_t f_j(x^t)`, each with
//! standard error close to `1/sqrt(n)` when the data are near uniform.

use std::collections::BTreeMap;
use std::fmt;
use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::basis::OrthoBasis;
use crate::error::{HcrError, Result};

/// Inputs exactly at 0 or 1 are moved this far inside the interval.
pub const EDGE_EPS: f64 = 1e-12;

/// Dense storage is used up to this many coefficients.
pub const DENSE_LIMIT: usize = 1 << 20;

/// Custom filters are evaluated over the full index space, which is capped.
const CUSTOM_FILTER_LIMIT: usize = 1 << 26;

/// Rows per reduction chunk. Fixed so that sums are identical regardless of
/// thread count or basis size.
const CHUNK_ROWS: usize = 2048;

#[inline]
pub(crate) fn clamp_unit(x: f64) -> f64 {
    x.clamp(EDGE_EPS, 1.0 - EDGE_EPS)
}

/// Sliding windows `(x^t, x^{t-1}, …, x^{t-d+1})`, one row per `t`.
#[derive(Debug, Clone, PartialEq)]
pub struct WindowSet {
    d: usize,
    data: Vec<f64>,
}

impl WindowSet {
    /// Builds a window set from explicit rows of length `d`. Values are
    /// clamped into `[EDGE_EPS, 1 - EDGE_EPS]`.
    pub fn from_rows(d: usize, rows: &[Vec<f64>]) -> Result<Self> {
        if d == 0 {
            return Err(HcrError::Shape(
                "window dimension must be at least 1".into(),
            ));
        }
        let mut data = Vec::with_capacity(rows.len() * d);
        for (i, r) in rows.iter().enumerate() {
            if r.len() != d {
                return Err(HcrError::Shape(format!(
                    "row {i} has {} coordinates, expected {d}",
                    r.len()
                )));
            }
            for &v in r {
                if !(0.0..=1.0).contains(&v) {
                    return Err(HcrError::Domain(format!(
                        "row {i} value {v} outside [0, 1]"
                    )));
                }
                data.push(clamp_unit(v));
            }
        }
        Ok(WindowSet { d, data })
    }

    pub fn d(&self) -> usize {
        self.d
    }

    pub fn len(&self) -> usize {
        self.data.len() / self.d
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.d..(i + 1) * self.d]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> {
        self.data.chunks_exact(self.d)
    }

    /// Prepends a coordinate to every row, e.g. rescaled time.
    pub fn with_leading_coordinate(&self, lead: impl Fn(usize) -> f64) -> WindowSet {
        let d = self.d + 1;
        let mut data = Vec::with_capacity(self.len() * d);
        for (t, r) in self.rows().enumerate() {
            data.push(clamp_unit(lead(t)));
            data.extend_from_slice(r);
        }
        WindowSet { d, data }
    }
}

/// Windows of a normalized series: coordinate 1 is the current value,
/// coordinates 2..=d the preceding values, most recent first.
pub fn build_windows(x: &[f64], d: usize) -> Result<WindowSet> {
    if d == 0 {
        return Err(HcrError::Shape(
            "window dimension must be at least 1".into(),
        ));
    }
    if x.len() < d {
        return Err(HcrError::InsufficientData {
            needed: d,
            got: x.len(),
        });
    }
    if let Some(v) = x.iter().find(|v| !(0.0..=1.0).contains(*v)) {
        return Err(HcrError::Domain(format!(
            "normalized value {v} outside [0, 1]"
        )));
    }
    let n = x.len() - d + 1;
    let mut data = Vec::with_capacity(n * d);
    for t in (d - 1)..x.len() {
        for i in 0..d {
            data.push(clamp_unit(x[t - i]));
        }
    }
    Ok(WindowSet { d, data })
}

/// Mixed-radix numbering of multi-indices. Coordinate 1 is the most
/// significant digit, so all entries sharing `j_1` form one contiguous block.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct IndexLayout {
    degrees: Vec<usize>,
    strides: Vec<usize>,
    size: usize,
}

impl IndexLayout {
    pub fn new(degrees: &[usize]) -> Result<Self> {
        if degrees.is_empty() {
            return Err(HcrError::Shape("at least one coordinate required".into()));
        }
        let mut strides = vec![0; degrees.len()];
        let mut size: usize = 1;
        for i in (0..degrees.len()).rev() {
            strides[i] = size;
            size = size
                .checked_mul(degrees[i] + 1)
                .ok_or_else(|| HcrError::Shape("basis too large to index".into()))?;
        }
        Ok(IndexLayout {
            degrees: degrees.to_vec(),
            strides,
            size,
        })
    }

    pub fn d(&self) -> usize {
        self.degrees.len()
    }

    pub fn degrees(&self) -> &[usize] {
        &self.degrees
    }

    /// Number of functions in the full product basis, `Π (m_i + 1)`.
    pub fn size(&self) -> usize {
        self.size
    }

    pub fn linear(&self, j: &[usize]) -> Result<usize> {
        if j.len() != self.d() {
            return Err(HcrError::Shape(format!(
                "multi-index of length {}, expected {}",
                j.len(),
                self.d()
            )));
        }
        let mut k = 0;
        for (i, (&ji, &mi)) in j.iter().zip(&self.degrees).enumerate() {
            if ji > mi {
                return Err(HcrError::Shape(format!(
                    "index {ji} exceeds degree {mi} at coordinate {}",
                    i + 1
                )));
            }
            k += ji * self.strides[i];
        }
        Ok(k)
    }

    pub fn multi(&self, mut k: usize) -> Vec<usize> {
        self.strides
            .iter()
            .map(|&s| {
                let digit = k / s;
                k %= s;
                digit
            })
            .collect()
    }

    fn multi_into(&self, mut k: usize, out: &mut [usize]) {
        for (slot, &s) in out.iter_mut().zip(&self.strides) {
            *slot = k / s;
            k %= s;
        }
    }
}

/// Which multi-indices to estimate.
/// Predicate over multi-indices for [`IndexFilter::Custom`].
pub type IndexPredicate = Arc<dyn Fn(&[usize]) -> bool + Send + Sync>;

#[derive(Clone, Default)]
pub enum IndexFilter {
    #[default]
    All,
    /// At most two nonzero `j_i`.
    Pairwise,
    /// `Σ j_i ≤ D`.
    TotalDegree(usize),
    Custom(IndexPredicate),
}

impl fmt::Debug for IndexFilter {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            IndexFilter::All => write!(f, "All"),
            IndexFilter::Pairwise => write!(f, "Pairwise"),
            IndexFilter::TotalDegree(d) => write!(f, "TotalDegree({d})"),
            IndexFilter::Custom(_) => write!(f, "Custom(..)"),
        }
    }
}

impl IndexFilter {
    /// Whether `j` is estimated under this filter.
    pub fn admits(&self, j: &[usize]) -> bool {
        match self {
            IndexFilter::All => true,
            IndexFilter::Pairwise => j.iter().filter(|&&v| v > 0).count() <= 2,
            IndexFilter::TotalDegree(max) => j.iter().sum::<usize>() <= *max,
            IndexFilter::Custom(pred) => j.iter().all(|&v| v == 0) || pred(j),
        }
    }

    /// Admitted indices in canonical order. `j = 0` is always admitted.
    fn enumerate(&self, layout: &IndexLayout) -> Result<Vec<usize>> {
        if let IndexFilter::Custom(_) = self {
            if layout.size() > CUSTOM_FILTER_LIMIT {
                return Err(HcrError::Config(format!(
                    "custom index filter over {} indices is too large",
                    layout.size()
                )));
            }
        }
        let mut out = Vec::new();
        let mut j = vec![0usize; layout.d()];
        self.walk(layout, 0, 0, 0, 0, &mut j, &mut out);
        Ok(out)
    }

    #[allow(clippy::too_many_arguments)]
    fn walk(
        &self,
        layout: &IndexLayout,
        level: usize,
        offset: usize,
        nonzero: usize,
        total: usize,
        j: &mut [usize],
        out: &mut Vec<usize>,
    ) {
        if level == layout.d() {
            let keep = match self {
                IndexFilter::Custom(pred) => offset == 0 || pred(j),
                _ => true,
            };
            if keep {
                out.push(offset);
            }
            return;
        }
        for v in 0..=layout.degrees[level] {
            let nz = nonzero + usize::from(v > 0);
            let tot = total + v;
            let admissible = match self {
                IndexFilter::Pairwise => nz <= 2,
                IndexFilter::TotalDegree(max) => tot <= *max,
                _ => true,
            };
            if !admissible {
                // both bounds are monotone in v
                break;
            }
            j[level] = v;
            self.walk(
                layout,
                level + 1,
                offset + v * layout.strides[level],
                nz,
                tot,
                j,
                out,
            );
        }
        j[level] = 0;
    }
}

#[derive(Debug, Clone, PartialEq)]
enum Storage {
    Dense(Vec<f64>),
    Sparse(BTreeMap<usize, f64>),
}

/// Coefficients `a_j` of a product-basis expansion.
#[derive(Debug, Clone, PartialEq)]
pub struct CoefficientTensor {
    layout: IndexLayout,
    sample_count: usize,
    dropped: usize,
    storage: Storage,
}

impl CoefficientTensor {
    pub fn from_dense(degrees: &[usize], values: Vec<f64>, sample_count: usize) -> Result<Self> {
        let layout = IndexLayout::new(degrees)?;
        if values.len() != layout.size() {
            return Err(HcrError::Shape(format!(
                "{} values for a basis of size {}",
                values.len(),
                layout.size()
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(HcrError::Domain("non-finite coefficient".into()));
        }
        Ok(CoefficientTensor {
            layout,
            sample_count,
            dropped: 0,
            storage: Storage::Dense(values),
        })
    }

    /// Sparse tensor from `(multi-index, value)` pairs. Later duplicates win.
    pub fn from_entries(
        degrees: &[usize],
        entries: impl IntoIterator<Item = (Vec<usize>, f64)>,
        sample_count: usize,
    ) -> Result<Self> {
        let layout = IndexLayout::new(degrees)?;
        let mut map = BTreeMap::new();
        for (j, a) in entries {
            if !a.is_finite() {
                return Err(HcrError::Domain(format!("non-finite coefficient at {j:?}")));
            }
            map.insert(layout.linear(&j)?, a);
        }
        Ok(CoefficientTensor {
            layout,
            sample_count,
            dropped: 0,
            storage: Storage::Sparse(map),
        })
    }

    pub fn layout(&self) -> &IndexLayout {
        &self.layout
    }

    pub fn d(&self) -> usize {
        self.layout.d()
    }

    pub fn degrees(&self) -> &[usize] {
        self.layout.degrees()
    }

    /// Number of windows the coefficients were averaged over.
    pub fn sample_count(&self) -> usize {
        self.sample_count
    }

    /// Entries removed by pruning.
    pub fn dropped(&self) -> usize {
        self.dropped
    }

    pub fn is_dense(&self) -> bool {
        matches!(self.storage, Storage::Dense(_))
    }

    /// Stored entries (for dense storage, the full basis size).
    pub fn nnz(&self) -> usize {
        match &self.storage {
            Storage::Dense(v) => v.len(),
            Storage::Sparse(m) => m.len(),
        }
    }

    /// `a_j`, zero when not stored.
    pub fn get(&self, j: &[usize]) -> Result<f64> {
        Ok(self.get_linear(self.layout.linear(j)?))
    }

    pub fn get_linear(&self, k: usize) -> f64 {
        match &self.storage {
            Storage::Dense(v) => v.get(k).copied().unwrap_or(0.0),
            Storage::Sparse(m) => m.get(&k).copied().unwrap_or(0.0),
        }
    }

    pub(crate) fn dense_values(&self) -> Option<&[f64]> {
        match &self.storage {
            Storage::Dense(v) => Some(v),
            Storage::Sparse(_) => None,
        }
    }

    /// `(linear index, value)` in canonical order.
    pub fn entries_linear(&self) -> Box<dyn Iterator<Item = (usize, f64)> + '_> {
        match &self.storage {
            Storage::Dense(v) => Box::new(v.iter().copied().enumerate()),
            Storage::Sparse(m) => Box::new(m.iter().map(|(&k, &v)| (k, v))),
        }
    }

    /// `(multi-index, value)` in canonical order.
    pub fn entries(&self) -> impl Iterator<Item = (Vec<usize>, f64)> + '_ {
        self.entries_linear()
            .map(|(k, v)| (self.layout.multi(k), v))
    }

    /// Entries sorted by decreasing magnitude, skipping `j = 0`.
    pub fn largest(&self, count: usize) -> Vec<(Vec<usize>, f64)> {
        let mut all: Vec<(usize, f64)> = self.entries_linear().filter(|&(k, _)| k != 0).collect();
        all.sort_by(|a, b| b.1.abs().total_cmp(&a.1.abs()).then(a.0.cmp(&b.0)));
        all.truncate(count);
        all.into_iter()
            .map(|(k, v)| (self.layout.multi(k), v))
            .collect()
    }

    pub fn to_json(&self) -> serde_json::Value {
        let doc = TensorJson {
            d: self.d(),
            degrees: self.degrees().to_vec(),
            sample_count: self.sample_count,
            dropped: self.dropped,
            entries: self.entries().collect(),
        };
        serde_json::to_value(doc).expect("tensor export is plain data")
    }

    pub fn from_json(value: &serde_json::Value) -> Result<Self> {
        let doc: TensorJson = serde_json::from_value(value.clone())?;
        if doc.degrees.len() != doc.d {
            return Err(HcrError::Shape(format!(
                "tensor declares d = {} but {} degrees",
                doc.d,
                doc.degrees.len()
            )));
        }
        let mut t = CoefficientTensor::from_entries(&doc.degrees, doc.entries, doc.sample_count)?;
        t.dropped = doc.dropped;
        Ok(t)
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct TensorJson {
    d: usize,
    degrees: Vec<usize>,
    #[serde(default)]
    sample_count: usize,
    #[serde(default)]
    dropped: usize,
    entries: Vec<(Vec<usize>, f64)>,
}

/// Per-row basis values laid out `d × (width)`.
fn row_basis_values(basis: &OrthoBasis, row: &[f64], width: usize, out: &mut [f64]) {
    for (i, &x) in row.iter().enumerate() {
        basis.eval_into(x, &mut out[i * width..(i + 1) * width]);
    }
}

fn accumulate_dense(
    level: usize,
    prefix: f64,
    offset: usize,
    vals: &[f64],
    width: usize,
    layout: &IndexLayout,
    out: &mut [f64],
) {
    let d = layout.d();
    let row_vals = &vals[level * width..level * width + layout.degrees[level] + 1];
    if level + 1 == d {
        for (slot, &v) in out[offset..offset + row_vals.len()]
            .iter_mut()
            .zip(row_vals)
        {
            *slot += prefix * v;
        }
        return;
    }
    let stride = layout.strides[level];
    for (j, &v) in row_vals.iter().enumerate() {
        accumulate_dense(
            level + 1,
            prefix * v,
            offset + j * stride,
            vals,
            width,
            layout,
            out,
        );
    }
}

/// Writes `Π_i f_{j_i}(row_i)` for every `j` of a dense layout into `out`.
pub(crate) fn dense_products(
    basis: &OrthoBasis,
    layout: &IndexLayout,
    row: &[f64],
    scratch: &mut Vec<f64>,
    out: &mut [f64],
) {
    let width = layout.degrees.iter().max().copied().unwrap_or(0) + 1;
    scratch.resize(layout.d() * width, 0.0);
    row_basis_values(basis, row, width, scratch);
    out.fill(0.0);
    accumulate_dense(0, 1.0, 0, scratch, width, layout, out);
}

/// Sum over rows of `f(row)`-derived vectors of length `size`. Rows are cut
/// into fixed chunks, each summed serially; chunk sums are added in chunk
/// order, so the result is independent of scheduling.
fn chunked_row_sums<F>(windows: &WindowSet, size: usize, per_row: F) -> Vec<f64>
where
    F: Fn(&[f64], &mut [f64], &mut Vec<f64>) + Sync,
{
    let n = windows.len();
    let chunk_count = n.div_ceil(CHUNK_ROWS);
    // Bound the memory held by in-flight partial sums.
    let batch = ((1usize << 24) / size.max(1)).clamp(1, 64);
    let mut total = vec![0.0; size];
    let chunk_ids: Vec<usize> = (0..chunk_count).collect();
    for group in chunk_ids.chunks(batch) {
        let partials: Vec<Vec<f64>> = group
            .par_iter()
            .map(|&c| {
                let mut acc = vec![0.0; size];
                let mut scratch = Vec::new();
                let end = ((c + 1) * CHUNK_ROWS).min(n);
                for t in c * CHUNK_ROWS..end {
                    per_row(windows.row(t), &mut acc, &mut scratch);
                }
                acc
            })
            .collect();
        for p in partials {
            for (a, b) in total.iter_mut().zip(p) {
                *a += b;
            }
        }
    }
    total
}

/// `a_j = mean over windows of Π_i f_{j_i}(x_i)` for every admitted `j`.
pub fn estimate_coefficients(
    windows: &WindowSet,
    basis: &OrthoBasis,
    degrees: &[usize],
    filter: &IndexFilter,
) -> Result<CoefficientTensor> {
    if degrees.len() != windows.d() {
        return Err(HcrError::Shape(format!(
            "{} degrees for windows of dimension {}",
            degrees.len(),
            windows.d()
        )));
    }
    if let Some(&m) = degrees.iter().find(|&&m| m > basis.max_degree()) {
        return Err(HcrError::DegreeUnsupported {
            degree: m,
            max: basis.max_degree(),
        });
    }
    if windows.is_empty() {
        return Err(HcrError::InsufficientData { needed: 1, got: 0 });
    }
    let layout = IndexLayout::new(degrees)?;
    let width = degrees.iter().max().copied().unwrap_or(0) + 1;
    let d = layout.d();
    let n = windows.len();

    let dense = matches!(filter, IndexFilter::All) && layout.size() <= DENSE_LIMIT;
    let storage = if dense {
        let sums = chunked_row_sums(windows, layout.size(), |row, acc, scratch| {
            scratch.resize(d * width, 0.0);
            row_basis_values(basis, row, width, scratch);
            accumulate_dense(0, 1.0, 0, scratch, width, &layout, acc);
        });
        Storage::Dense(sums.into_iter().map(|s| s / n as f64).collect())
    } else {
        let admitted = filter.enumerate(&layout)?;
        let mut digits = vec![0u8; admitted.len() * d];
        let mut tmp = vec![0usize; d];
        for (slot, &k) in digits.chunks_exact_mut(d).zip(&admitted) {
            layout.multi_into(k, &mut tmp);
            for (s, &v) in slot.iter_mut().zip(&tmp) {
                *s = v as u8;
            }
        }
        let sums = chunked_row_sums(windows, admitted.len(), |row, acc, scratch| {
            scratch.resize(d * width, 0.0);
            row_basis_values(basis, row, width, scratch);
            for (slot, j) in acc.iter_mut().zip(digits.chunks_exact(d)) {
                let mut p = 1.0;
                for (i, &ji) in j.iter().enumerate() {
                    p *= scratch[i * width + ji as usize];
                }
                *slot += p;
            }
        });
        Storage::Sparse(
            admitted
                .into_iter()
                .zip(sums)
                .map(|(k, s)| (k, s / n as f64))
                .collect(),
        )
    };
    Ok(CoefficientTensor {
        layout,
        sample_count: n,
        dropped: 0,
        storage,
    })
}

/// Approximate standard error of a coefficient under the uniform null.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseLevel {
    pub sigma: f64,
}

pub fn noise_sigma(n: usize) -> Result<NoiseLevel> {
    if n == 0 {
        return Err(HcrError::InsufficientData { needed: 1, got: 0 });
    }
    Ok(NoiseLevel {
        sigma: 1.0 / (n as f64).sqrt(),
    })
}

/// Drops every `a_j` (other than `j = 0`) with `|a_j| < threshold · σ`,
/// `σ = 1/sqrt(n)`. The result is sparse.
pub fn prune(tensor: &CoefficientTensor, threshold: f64) -> Result<CoefficientTensor> {
    if !(threshold >= 0.0) {
        return Err(HcrError::Domain(format!(
            "pruning threshold {threshold} must be nonnegative"
        )));
    }
    let sigma = noise_sigma(tensor.sample_count.max(1))?.sigma;
    let cut = threshold * sigma;
    let mut kept = BTreeMap::new();
    let mut dropped = tensor.dropped;
    for (k, a) in tensor.entries_linear() {
        if k == 0 || a.abs() >= cut {
            kept.insert(k, a);
        } else {
            dropped += 1;
        }
    }
    Ok(CoefficientTensor {
        layout: tensor.layout.clone(),
        sample_count: tensor.sample_count,
        dropped,
        storage: Storage::Sparse(kept),
    })
}

/// `ρ(point) = Σ_j a_j Π_i f_{j_i}(point_i)`. May be negative.
pub fn eval_joint_density(
    tensor: &CoefficientTensor,
    basis: &OrthoBasis,
    point: &[f64],
) -> Result<f64> {
    let d = tensor.d();
    if point.len() != d {
        return Err(HcrError::Shape(format!(
            "point of dimension {}, tensor has {d}",
            point.len()
        )));
    }
    if let Some(v) = point.iter().find(|v| !(0.0..=1.0).contains(*v)) {
        return Err(HcrError::Domain(format!("coordinate {v} outside [0, 1]")));
    }
    let width = tensor.degrees().iter().max().copied().unwrap_or(0) + 1;
    if width > basis.len() {
        return Err(HcrError::DegreeUnsupported {
            degree: width - 1,
            max: basis.max_degree(),
        });
    }
    let mut vals = vec![0.0; d * width];
    for (i, &x) in point.iter().enumerate() {
        basis.eval_into(x, &mut vals[i * width..(i + 1) * width]);
    }
    let mut j = vec![0usize; d];
    let mut total = 0.0;
    for (k, a) in tensor.entries_linear() {
        if a == 0.0 {
            continue;
        }
        tensor.layout.multi_into(k, &mut j);
        let mut p = a;
        for (i, &ji) in j.iter().enumerate() {
            p *= vals[i * width + ji];
        }
        total += p;
    }
    Ok(total)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn windows_shift_definition() {
        let w = build_windows(&[0.1, 0.2, 0.3], 2).unwrap();
        assert_eq!(w.len(), 2);
        assert_eq!(w.row(0), &[0.2, 0.1]);
        assert_eq!(w.row(1), &[0.3, 0.2]);
        let w1 = build_windows(&[0.1, 0.2, 0.3], 1).unwrap();
        assert_eq!(
            w1.rows().map(|r| r[0]).collect::<Vec<_>>(),
            vec![0.1, 0.2, 0.3]
        );
        assert!(matches!(
            build_windows(&[0.1], 2),
            Err(HcrError::InsufficientData { .. })
        ));
        let x: Vec<f64> = (0..29354).map(|i| (i as f64 + 0.5) / 29354.0).collect();
        assert_eq!(build_windows(&x, 6).unwrap().len(), 29349);
    }

    #[test]
    fn windows_shift_consistent_and_clamped() {
        let x = [0.0, 0.4, 1.0, 0.7, 0.2];
        let w = build_windows(&x, 3).unwrap();
        for i in 0..w.len() - 1 {
            for k in 0..2 {
                assert_eq!(w.row(i)[k], w.row(i + 1)[k + 1]);
            }
        }
        assert_eq!(w.row(0)[0], 1.0 - EDGE_EPS);
        assert_eq!(w.row(0)[2], EDGE_EPS);
    }

    #[test]
    fn layout_is_big_endian_mixed_radix() {
        let l = IndexLayout::new(&[2, 3]).unwrap();
        assert_eq!(l.size(), 12);
        assert_eq!(l.linear(&[1, 2]).unwrap(), 6);
        assert_eq!(l.multi(6), vec![1, 2]);
        assert!(l.linear(&[3, 0]).is_err());
    }

    #[test]
    fn zero_index_is_one_and_antisymmetric_sample() {
        let basis = OrthoBasis::new(3).unwrap();
        let w = WindowSet::from_rows(1, &[vec![0.2], vec![0.8]]).unwrap();
        let t = estimate_coefficients(&w, &basis, &[3], &IndexFilter::All).unwrap();
        assert_eq!(t.get(&[0]).unwrap(), 1.0);
        assert!(t.get(&[1]).unwrap().abs() < 1e-15);
    }

    #[test]
    fn empty_windows_rejected() {
        let basis = OrthoBasis::new(2).unwrap();
        let w = WindowSet::from_rows(2, &[]).unwrap();
        assert!(matches!(
            estimate_coefficients(&w, &basis, &[2, 2], &IndexFilter::All),
            Err(HcrError::InsufficientData { .. })
        ));
        let w = WindowSet::from_rows(1, &[vec![0.5]]).unwrap();
        assert!(matches!(
            estimate_coefficients(&w, &basis, &[3], &IndexFilter::All),
            Err(HcrError::DegreeUnsupported { .. })
        ));
    }

    #[test]
    fn filters_admit_expected_indices() {
        let layout = IndexLayout::new(&[2, 2, 2]).unwrap();
        let pairwise = IndexFilter::Pairwise.enumerate(&layout).unwrap();
        assert!(pairwise
            .iter()
            .all(|&k| layout.multi(k).iter().filter(|&&v| v > 0).count() <= 2));
        // 1 + 3·2 + 3·4 = 19
        assert_eq!(pairwise.len(), 19);
        let total = IndexFilter::TotalDegree(2).enumerate(&layout).unwrap();
        assert!(total
            .iter()
            .all(|&k| layout.multi(k).iter().sum::<usize>() <= 2));
        assert_eq!(total.len(), 10);
        assert!(total.windows(2).all(|w| w[0] < w[1]));
        let custom = IndexFilter::Custom(Arc::new(|j: &[usize]| j[0] == 2))
            .enumerate(&layout)
            .unwrap();
        assert_eq!(custom[0], 0);
        assert_eq!(custom.len(), 1 + 9);
    }

    #[test]
    fn filtered_estimate_matches_dense_entries() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let x: Vec<f64> = (0..500).map(|_| rng.random()).collect();
        let w = build_windows(&x, 3).unwrap();
        let basis = OrthoBasis::new(3).unwrap();
        let dense = estimate_coefficients(&w, &basis, &[3, 3, 3], &IndexFilter::All).unwrap();
        let sparse =
            estimate_coefficients(&w, &basis, &[3, 3, 3], &IndexFilter::TotalDegree(4)).unwrap();
        assert!(!sparse.is_dense());
        for (j, a) in sparse.entries() {
            assert!((dense.get(&j).unwrap() - a).abs() < 1e-14);
        }
    }

    #[test]
    fn noise_levels() {
        assert!((noise_sigma(29349).unwrap().sigma - 0.005837).abs() < 5e-7);
        assert_eq!(noise_sigma(1).unwrap().sigma, 1.0);
        assert_eq!(noise_sigma(10_000).unwrap().sigma, 0.01);
        assert!(noise_sigma(0).is_err());
    }

    #[test]
    fn prune_zero_threshold_keeps_everything() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let x: Vec<f64> = (0..300).map(|_| rng.random()).collect();
        let w = build_windows(&x, 2).unwrap();
        let basis = OrthoBasis::new(4).unwrap();
        let t = estimate_coefficients(&w, &basis, &[4, 4], &IndexFilter::All).unwrap();
        let p = prune(&t, 0.0).unwrap();
        assert_eq!(p.nnz(), t.nnz());
        assert_eq!(p.dropped(), 0);
        for (j, a) in t.entries() {
            assert_eq!(p.get(&j).unwrap(), a);
        }
    }

    #[test]
    fn prune_uniform_data_leaves_only_normalization() {
        // Under the uniform null each a_j is ~N(0, 1/n); 10σ is never reached.
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let x: Vec<f64> = (0..20_000).map(|_| rng.random()).collect();
        let w = build_windows(&x, 3).unwrap();
        let basis = OrthoBasis::new(3).unwrap();
        let t = estimate_coefficients(&w, &basis, &[3, 3, 3], &IndexFilter::All).unwrap();
        let p = prune(&t, 10.0).unwrap();
        assert_eq!(p.nnz(), 1);
        assert_eq!(p.get(&[0, 0, 0]).unwrap(), 1.0);
        assert_eq!(p.dropped(), 63);
    }

    #[test]
    fn joint_density_simple_cases() {
        let basis = OrthoBasis::new(3).unwrap();
        let t = CoefficientTensor::from_entries(&[3, 3], [(vec![0, 0], 1.0)], 1).unwrap();
        assert_eq!(eval_joint_density(&t, &basis, &[0.3, 0.9]).unwrap(), 1.0);
        let t1 =
            CoefficientTensor::from_entries(&[1], [(vec![0], 1.0), (vec![1], 0.3)], 1).unwrap();
        assert!((eval_joint_density(&t1, &basis, &[0.5]).unwrap() - 1.0).abs() < 1e-15);
        assert!(matches!(
            eval_joint_density(&t, &basis, &[0.5]),
            Err(HcrError::Shape(_))
        ));
    }

    #[test]
    fn json_round_trip() {
        let t =
            CoefficientTensor::from_entries(&[2, 1], [(vec![0, 0], 1.0), (vec![2, 1], -0.125)], 40)
                .unwrap();
        let back = CoefficientTensor::from_json(&t.to_json()).unwrap();
        assert_eq!(back, t);
        let text = t.to_json().to_string();
        assert!(
            text.contains("[[0,0],1.0]") && text.contains("[[2,1],-0.125]"),
            "{text}"
        );
    }
}
