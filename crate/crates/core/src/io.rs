//! Text and binary serialisations of flows, fields, policies and records.
//!
//! Matrix files are little-endian:
//!
//! ```text
//! magic   8 bytes  "MFGMAT01"
//! tag     u32      MatrixTag
//! _       u32      reserved, zero
//! rows    u64
//! cols    u64
//! meta    3 × f64  (density/value/slope/policy: T, x_lower, x_upper; paths: dt, T, threshold)
//! extra   u64      (absorbing lower edge flag; for paths, the seed)
//! data    rows × cols f64, row-major
//! ```
//!
//! Floats in CSV files use Rust's shortest round-trip formatting.

use std::io::{self, Read, Write};

use crate::grid::Grids;
use crate::measures::{EmpiricalRecord, SubProbFlow};
use crate::pde::{FeedbackPolicy, ValueField};
use crate::scalar::Scalar;

pub const MAGIC: &[u8; 8] = b"MFGMAT01";
pub const HEADER_LEN: usize = 8 + 4 + 4 + 8 + 8 + 3 * 8 + 8;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u32)]
pub enum MatrixTag {
    Density = 1,
    Value = 2,
    Slope = 3,
    Policy = 4,
    Paths = 5,
}

impl MatrixTag {
    fn from_u32(v: u32) -> Option<Self> {
        Some(match v {
            1 => Self::Density,
            2 => Self::Value,
            3 => Self::Slope,
            4 => Self::Policy,
            5 => Self::Paths,
            _ => return None,
        })
    }
}

/// Decoded matrix file.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    pub tag: MatrixTag,
    pub rows: usize,
    pub cols: usize,
    pub meta: [f64; 3],
    pub extra: u64,
    pub data: Vec<f64>,
}

impl Matrix {
    fn on_grids<T: Scalar>(tag: MatrixTag, grids: &Grids<T>, data: &[T]) -> Self {
        let s = grids.state;
        Self {
            tag,
            rows: grids.rows(),
            cols: grids.cols(),
            meta: [grids.time.horizon.as_f64(), s.lower.as_f64(), s.upper.as_f64()],
            extra: u64::from(s.absorbing_lower),
            data: data.iter().map(|v| v.as_f64()).collect(),
        }
    }

    pub fn density<T: Scalar>(flow: &SubProbFlow<T>) -> Self {
        Self::on_grids(MatrixTag::Density, &flow.grids, &flow.density)
    }

    pub fn value<T: Scalar>(field: &ValueField<T>) -> Self {
        Self::on_grids(MatrixTag::Value, &field.grids, &field.values)
    }

    pub fn slope<T: Scalar>(field: &ValueField<T>) -> Self {
        Self::on_grids(MatrixTag::Slope, &field.grids, &field.slope)
    }

    pub fn policy<T: Scalar>(policy: &FeedbackPolicy<T>) -> Self {
        Self::on_grids(MatrixTag::Policy, &policy.grids, &policy.actions)
    }

    /// `(K+1) × N` positions; `None` when the record has no stored paths.
    pub fn paths<T: Scalar>(record: &EmpiricalRecord<T>, seed: u64) -> Option<Self> {
        let paths = record.paths.as_ref()?;
        Some(Self {
            tag: MatrixTag::Paths,
            rows: record.time.len(),
            cols: record.n(),
            meta: [record.time.dt().as_f64(), record.time.horizon.as_f64(), record.threshold.as_f64()],
            extra: seed,
            data: paths.iter().map(|v| v.as_f64()).collect(),
        })
    }

    pub fn write_to(&self, mut w: impl Write) -> io::Result<()> {
        w.write_all(MAGIC)?;
        w.write_all(&(self.tag as u32).to_le_bytes())?;
        w.write_all(&0u32.to_le_bytes())?;
        w.write_all(&(self.rows as u64).to_le_bytes())?;
        w.write_all(&(self.cols as u64).to_le_bytes())?;
        for m in self.meta {
            w.write_all(&m.to_le_bytes())?;
        }
        w.write_all(&self.extra.to_le_bytes())?;
        for v in &self.data {
            w.write_all(&v.to_le_bytes())?;
        }
        Ok(())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(HEADER_LEN + 8 * self.data.len());
        self.write_to(&mut out).expect("writing to a Vec cannot fail");
        out
    }

    pub fn read_from(mut r: impl Read) -> io::Result<Self> {
        let bad = |msg: &str| io::Error::new(io::ErrorKind::InvalidData, msg.to_string());
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic)?;
        if &magic != MAGIC {
            return Err(bad("not a matrix file (bad magic)"));
        }
        let mut b4 = [0u8; 4];
        let mut b8 = [0u8; 8];
        r.read_exact(&mut b4)?;
        let tag = MatrixTag::from_u32(u32::from_le_bytes(b4)).ok_or_else(|| bad("unknown matrix tag"))?;
        r.read_exact(&mut b4)?;
        let mut u64_field = |r: &mut dyn Read| -> io::Result<u64> {
            r.read_exact(&mut b8)?;
            Ok(u64::from_le_bytes(b8))
        };
        let rows = u64_field(&mut r)? as usize;
        let cols = u64_field(&mut r)? as usize;
        let mut meta = [0.0; 3];
        for m in &mut meta {
            *m = f64::from_bits(u64_field(&mut r)?);
        }
        let extra = u64_field(&mut r)?;
        let len = rows.checked_mul(cols).ok_or_else(|| bad("matrix size overflows"))?;
        let mut raw = Vec::new();
        r.read_to_end(&mut raw)?;
        if raw.len() != 8 * len {
            return Err(bad("matrix payload length does not match its header"));
        }
        let data = raw.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("chunk of 8"))).collect();
        Ok(Self { tag, rows, cols, meta, extra, data })
    }
}

/// `t,survivor_mass,loss,mean`, one row per grid time.
pub fn flow_csv<T: Scalar>(flow: &SubProbFlow<T>) -> String {
    let mut out = String::from("t,survivor_mass,loss,mean\n");
    for k in 0..flow.rows() {
        out.push_str(&format!(
            "{},{},{},{}\n",
            flow.grids.time.time(k),
            flow.survivor_mass[k],
            flow.loss[k],
            flow.mean[k]
        ));
    }
    out
}

/// Empirical traces of a record in the flow CSV layout.
pub fn record_csv<T: Scalar>(record: &EmpiricalRecord<T>) -> String {
    let mut out = String::from("t,survivor_mass,loss,mean\n");
    for k in 0..record.time.len() {
        let l = record.loss[k];
        out.push_str(&format!("{},{},{},{}\n", record.time.time(k), T::one() - l, l, record.mean[k]));
    }
    out
}

/// `player,tau`; survivors carry `inf`.
pub fn absorption_csv<T: Scalar>(record: &EmpiricalRecord<T>) -> String {
    let mut out = String::from("player,tau\n");
    for (i, t) in record.tau.iter().enumerate() {
        out.push_str(&format!("{i},{t}\n"));
    }
    out
}
