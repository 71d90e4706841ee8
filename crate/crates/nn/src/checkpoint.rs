//! Checkpoint files.
//!
//! ```text
//! perturbrl-ckpt v1\n
//! <key> <value>\n            zero or more header entries
//! arrays <count>\n
//! <records>                 binary, one per array, in id order:
//!   id    u32 LE
//!   rank  u32 LE
//!   dims  rank x u32 LE
//!   data  prod(dims) x f32 LE (row-major)
//! ```
//!
//! Header keys contain no whitespace; values run to the end of the line and
//! contain no newline.

use std::io::{BufRead, Read, Write};

use ndarray::Array2;

use crate::error::NnError;
use crate::param::{ParamArray, ParamId, ParamStore};

pub const MAGIC: &str = "perturbrl-ckpt v1";

#[derive(Clone, Debug, PartialEq, Default)]
pub struct Checkpoint {
    pub header: Vec<(String, String)>,
    pub params: ParamStore<f32>,
}

impl Checkpoint {
    pub fn new(params: ParamStore<f32>) -> Self {
        Self {
            header: Vec::new(),
            params,
        }
    }

    pub fn with(mut self, key: &str, value: impl ToString) -> Self {
        self.header.push((key.to_string(), value.to_string()));
        self
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.header
            .iter()
            .find(|(k, _)| k == key)
            .map(|(_, v)| v.as_str())
    }

    pub fn require(&self, key: &str) -> Result<&str, NnError> {
        self.get(key)
            .ok_or_else(|| NnError::Checkpoint(format!("missing header key `{key}`")))
    }

    pub fn write_to<W: Write>(&self, mut w: W) -> Result<(), NnError> {
        writeln!(w, "{MAGIC}")?;
        for (k, v) in &self.header {
            if k.is_empty() || k.chars().any(char::is_whitespace) || v.contains('\n') || k == "arrays" {
                return Err(NnError::Checkpoint(format!("invalid header entry `{k}`")));
            }
            writeln!(w, "{k} {v}")?;
        }
        writeln!(w, "arrays {}", self.params.len())?;
        for p in self.params.iter() {
            let (r, c) = p.values.dim();
            w.write_all(&(p.id.0 as u32).to_le_bytes())?;
            w.write_all(&2u32.to_le_bytes())?;
            w.write_all(&(r as u32).to_le_bytes())?;
            w.write_all(&(c as u32).to_le_bytes())?;
            for v in p.values.iter() {
                w.write_all(&v.to_le_bytes())?;
            }
        }
        Ok(())
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>, NnError> {
        let mut buf = Vec::new();
        self.write_to(&mut buf)?;
        Ok(buf)
    }

    pub fn read_from<R: BufRead>(mut r: R) -> Result<Self, NnError> {
        let mut line = String::new();
        r.read_line(&mut line)?;
        if line.trim_end_matches('\n') != MAGIC {
            return Err(NnError::Checkpoint(format!(
                "bad magic line `{}`",
                line.trim_end()
            )));
        }
        let mut header = Vec::new();
        let count = loop {
            line.clear();
            if r.read_line(&mut line)? == 0 {
                return Err(NnError::Checkpoint("truncated header".into()));
            }
            let l = line.trim_end_matches('\n');
            let (k, v) = l.split_once(' ').unwrap_or((l, ""));
            if k == "arrays" {
                break v
                    .parse::<usize>()
                    .map_err(|_| NnError::Checkpoint(format!("bad array count `{v}`")))?;
            }
            header.push((k.to_string(), v.to_string()));
        };
        let mut arrays = Vec::with_capacity(count);
        for expected in 0..count {
            let id = read_u32(&mut r)? as usize;
            if id != expected {
                return Err(NnError::Checkpoint(format!("array id {id}, expected {expected}")));
            }
            let rank = read_u32(&mut r)? as usize;
            let dims = (0..rank)
                .map(|_| read_u32(&mut r).map(|d| d as usize))
                .collect::<Result<Vec<_>, _>>()?;
            let (rows, cols) = match dims.as_slice() {
                [n] => (1, *n),
                [r, c] => (*r, *c),
                _ => return Err(NnError::Checkpoint(format!("unsupported rank {rank}"))),
            };
            let mut data = Vec::with_capacity(rows * cols);
            let mut b = [0u8; 4];
            for _ in 0..rows * cols {
                r.read_exact(&mut b)?;
                data.push(f32::from_le_bytes(b));
            }
            arrays.push(ParamArray {
                id: ParamId(id),
                values: Array2::from_shape_vec((rows, cols), data).unwrap(),
            });
        }
        let mut rest = [0u8; 1];
        if r.read(&mut rest)? != 0 {
            return Err(NnError::Checkpoint("trailing bytes".into()));
        }
        Ok(Self {
            header,
            params: ParamStore::from_arrays(arrays),
        })
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, NnError> {
        Self::read_from(bytes)
    }
}

fn read_u32<R: Read>(r: &mut R) -> Result<u32, NnError> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use proptest::prelude::*;

    #[test]
    fn layout_is_byte_exact() {
        let mut s = ParamStore::new();
        s.push(array![[1.0f32, -2.0]]);
        let ck = Checkpoint::new(s).with("agent", "ppo");
        let bytes = ck.to_bytes().unwrap();
        let mut expected = b"perturbrl-ckpt v1\nagent ppo\narrays 1\n".to_vec();
        for v in [0u32, 2, 1, 2] {
            expected.extend_from_slice(&v.to_le_bytes());
        }
        expected.extend_from_slice(&1.0f32.to_le_bytes());
        expected.extend_from_slice(&(-2.0f32).to_le_bytes());
        assert_eq!(bytes, expected);
    }

    #[test]
    fn rejects_bad_magic() {
        assert!(Checkpoint::from_bytes(b"perturbrl-ckpt v2\narrays 0\n").is_err());
    }

    proptest! {
        #[test]
        fn round_trip_is_bit_identical(
            shapes in proptest::collection::vec((1usize..5, 1usize..5), 0..4),
            seed in any::<u32>(),
            value in "[a-z0-9=., ]{0,20}",
        ) {
            let mut s = ParamStore::new();
            let mut x = seed as f32;
            for (r, c) in shapes {
                let vals: Vec<f32> = (0..r * c).map(|_| { x = (x * 1.37 + 0.11).sin() * 1e3; x }).collect();
                s.push(Array2::from_shape_vec((r, c), vals).unwrap());
            }
            let ck = Checkpoint::new(s).with("note", value);
            let back = Checkpoint::from_bytes(&ck.to_bytes().unwrap()).unwrap();
            prop_assert_eq!(&back, &ck);
            prop_assert_eq!(back.to_bytes().unwrap(), ck.to_bytes().unwrap());
        }
    }
}
