//! Gridded prediction map with multilinear interpolation and a compact
//! little-endian binary format.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use super::PredictionError;

const MAGIC: &[u8; 8] = b"MBPETCLT";
const VERSION: u32 = 1;

/// Values of a prediction map on a rectilinear grid.
///
/// Node values are stored row-major (last axis fastest), `dim` components per
/// node.
#[derive(Debug, Clone, PartialEq)]
pub struct LookupTable {
    step: f64,
    axes: Vec<Vec<f64>>,
    values: Vec<f64>,
}

impl LookupTable {
    pub fn new(step: f64, axes: Vec<Vec<f64>>, values: Vec<f64>) -> Result<Self, PredictionError> {
        let bad = |msg: String| Err(PredictionError::Format(msg));
        if !(step > 0.0 && step.is_finite()) {
            return bad(format!("step {step}"));
        }
        if axes.is_empty() {
            return bad("no axes".into());
        }
        for (i, axis) in axes.iter().enumerate() {
            if axis.len() < 2 {
                return bad(format!("axis {i} has {} nodes", axis.len()));
            }
            if axis.iter().any(|v| !v.is_finite()) || axis.windows(2).any(|w| w[0] >= w[1]) {
                return bad(format!("axis {i} is not strictly increasing"));
            }
        }
        let expected = node_count(&axes) * axes.len();
        if values.len() != expected {
            return bad(format!("{} values, expected {expected}", values.len()));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return bad("non-finite node value".into());
        }
        Ok(Self { step, axes, values })
    }

    pub fn dim(&self) -> usize {
        self.axes.len()
    }

    pub fn step(&self) -> f64 {
        self.step
    }

    pub fn axes(&self) -> &[Vec<f64>] {
        &self.axes
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn interpolate(&self, x: &[f64]) -> Result<Vec<f64>, PredictionError> {
        let n = self.dim();
        let mut cell = Vec::with_capacity(n);
        let mut frac = Vec::with_capacity(n);
        for (axis, &xi) in self.axes.iter().zip(x) {
            let (lo, hi) = (axis[0], axis[axis.len() - 1]);
            if !(xi >= lo && xi <= hi) {
                return Err(PredictionError::OutsideTable { point: x.to_vec() });
            }
            let i = axis.partition_point(|&a| a <= xi).saturating_sub(1).min(axis.len() - 2);
            cell.push(i);
            frac.push((xi - axis[i]) / (axis[i + 1] - axis[i]));
        }
        let strides = strides(&self.axes);
        let mut out = vec![0.0; n];
        for corner in 0..(1usize << n) {
            let mut weight = 1.0;
            let mut flat = 0;
            for k in 0..n {
                let upper = corner >> k & 1 == 1;
                weight *= if upper { frac[k] } else { 1.0 - frac[k] };
                flat += (cell[k] + upper as usize) * strides[k];
            }
            if weight == 0.0 {
                continue;
            }
            for (o, v) in out.iter_mut().zip(&self.values[flat * n..(flat + 1) * n]) {
                *o += weight * v;
            }
        }
        Ok(out)
    }

    pub fn write_to<W: Write>(&self, mut w: W) -> Result<(), PredictionError> {
        w.write_all(MAGIC)?;
        w.write_all(&VERSION.to_le_bytes())?;
        w.write_all(&(self.dim() as u32).to_le_bytes())?;
        w.write_all(&self.step.to_le_bytes())?;
        for axis in &self.axes {
            w.write_all(&(axis.len() as u32).to_le_bytes())?;
        }
        for v in self.axes.iter().flatten().chain(&self.values) {
            w.write_all(&v.to_le_bytes())?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_from<R: Read>(mut r: R) -> Result<Self, PredictionError> {
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic)?;
        if &magic != MAGIC {
            return Err(PredictionError::Format("bad magic".into()));
        }
        let version = read_u32(&mut r)?;
        if version != VERSION {
            return Err(PredictionError::Format(format!("unsupported version {version}")));
        }
        let dim = read_u32(&mut r)? as usize;
        if dim == 0 || dim > 16 {
            return Err(PredictionError::Format(format!("dimension {dim}")));
        }
        let step = read_f64(&mut r)?;
        let counts = (0..dim).map(|_| read_u32(&mut r).map(|c| c as usize)).collect::<Result<Vec<_>, _>>()?;
        let axes = counts
            .iter()
            .map(|&c| (0..c).map(|_| read_f64(&mut r)).collect::<Result<Vec<_>, _>>())
            .collect::<Result<Vec<_>, _>>()?;
        let total = counts
            .iter()
            .try_fold(dim, |acc, &c| acc.checked_mul(c))
            .ok_or_else(|| PredictionError::Format("node count overflow".into()))?;
        let values = (0..total).map(|_| read_f64(&mut r)).collect::<Result<Vec<_>, _>>()?;
        let mut rest = [0u8; 1];
        if r.read(&mut rest)? != 0 {
            return Err(PredictionError::Format("trailing bytes".into()));
        }
        Self::new(step, axes, values)
    }

    pub fn save(&self, path: &Path) -> Result<(), PredictionError> {
        self.write_to(BufWriter::new(File::create(path)?))
    }

    pub fn load(path: &Path) -> Result<Self, PredictionError> {
        Self::read_from(BufReader::new(File::open(path)?))
    }
}

fn read_u32<R: Read>(r: &mut R) -> Result<u32, PredictionError> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn read_f64<R: Read>(r: &mut R) -> Result<f64, PredictionError> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(f64::from_le_bytes(b))
}

fn strides(axes: &[Vec<f64>]) -> Vec<usize> {
    let mut s = vec![1; axes.len()];
    for k in (0..axes.len().saturating_sub(1)).rev() {
        s[k] = s[k + 1] * axes[k + 1].len();
    }
    s
}

pub(crate) fn node_count(axes: &[Vec<f64>]) -> usize {
    axes.iter().map(Vec::len).product()
}

pub(crate) fn node_point(axes: &[Vec<f64>], mut flat: usize) -> Vec<f64> {
    let mut x = vec![0.0; axes.len()];
    for k in (0..axes.len()).rev() {
        let len = axes[k].len();
        x[k] = axes[k][flat % len];
        flat /= len;
    }
    x
}

/// `n` uniform nodes on `[lo, hi]` with zero made a node: the nearest node
/// is snapped to zero when close, otherwise zero is inserted.
pub(crate) fn axis_with_origin(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    let dx = (hi - lo) / (n - 1) as f64;
    let mut axis: Vec<f64> = (0..n).map(|i| if i == n - 1 { hi } else { lo + i as f64 * dx }).collect();
    if lo < 0.0 && hi > 0.0 {
        let nearest = (0..n)
            .min_by(|&a, &b| axis[a].abs().total_cmp(&axis[b].abs()))
            .unwrap_or(0);
        if axis[nearest].abs() < 1e-9 * dx && nearest != 0 && nearest != n - 1 {
            axis[nearest] = 0.0;
        } else {
            let at = axis.partition_point(|&a| a < 0.0);
            axis.insert(at, 0.0);
        }
    }
    axis
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn origin_is_snapped_or_inserted() {
        let odd = axis_with_origin(-1.0, 1.0, 5);
        assert_eq!(odd, vec![-1.0, -0.5, 0.0, 0.5, 1.0]);
        let even = axis_with_origin(-1.0, 1.0, 4);
        assert_eq!(even.len(), 5);
        assert!(even.contains(&0.0));
        assert!(even.windows(2).all(|w| w[0] < w[1]));
        assert_eq!(axis_with_origin(0.5, 1.0, 3), vec![0.5, 0.75, 1.0]);
    }

    #[test]
    fn node_indexing_round_trips() {
        let axes = vec![vec![0.0, 1.0, 2.0], vec![10.0, 20.0]];
        assert_eq!(node_point(&axes, 0), vec![0.0, 10.0]);
        assert_eq!(node_point(&axes, 1), vec![0.0, 20.0]);
        assert_eq!(node_point(&axes, 5), vec![2.0, 20.0]);
        assert_eq!(strides(&axes), vec![2, 1]);
    }

    #[test]
    fn corrupt_streams_are_rejected() {
        let t = LookupTable::new(0.1, vec![vec![0.0, 1.0]], vec![0.0, 2.0]).unwrap();
        let mut buf = Vec::new();
        t.write_to(&mut buf).unwrap();
        let mut bad_magic = buf.clone();
        bad_magic[0] = b'X';
        assert!(matches!(LookupTable::read_from(&bad_magic[..]), Err(PredictionError::Format(_))));
        assert!(LookupTable::read_from(&buf[..buf.len() - 3]).is_err());
        let mut trailing = buf.clone();
        trailing.push(0);
        assert!(LookupTable::read_from(&trailing[..]).is_err());
    }

    #[test]
    fn invalid_tables() {
        assert!(LookupTable::new(0.1, vec![vec![0.0]], vec![0.0]).is_err());
        assert!(LookupTable::new(0.1, vec![vec![1.0, 0.0]], vec![0.0, 0.0]).is_err());
        assert!(LookupTable::new(0.1, vec![vec![0.0, 1.0]], vec![0.0]).is_err());
        assert!(LookupTable::new(-0.1, vec![vec![0.0, 1.0]], vec![0.0, 0.0]).is_err());
    }

    fn table_strategy() -> impl Strategy<Value = LookupTable> {
        (1usize..=3, 2usize..=4, 1e-6f64..1.0).prop_flat_map(|(dim, n, step)| {
            let total = n.pow(dim as u32) * dim;
            proptest::collection::vec(-1e3f64..1e3, total).prop_map(move |values| {
                let axes = (0..dim).map(|k| (0..n).map(|i| i as f64 + 0.25 * k as f64).collect()).collect();
                LookupTable::new(step, axes, values).unwrap()
            })
        })
    }

    proptest! {
        #[test]
        fn binary_round_trip_is_bit_exact(t in table_strategy()) {
            let mut buf = Vec::new();
            t.write_to(&mut buf).unwrap();
            let back = LookupTable::read_from(&buf[..]).unwrap();
            prop_assert_eq!(t.step().to_bits(), back.step().to_bits());
            prop_assert_eq!(t.axes(), back.axes());
            let same = t.values().iter().zip(back.values()).all(|(a, b)| a.to_bits() == b.to_bits());
            prop_assert!(same);
        }

        #[test]
        fn interpolation_is_exact_at_nodes(t in table_strategy(), pick in 0usize..1000) {
            let flat = pick % node_count(t.axes());
            let x = node_point(t.axes(), flat);
            let d = t.dim();
            prop_assert_eq!(t.interpolate(&x).unwrap(), t.values()[flat * d..(flat + 1) * d].to_vec());
        }
    }
}
