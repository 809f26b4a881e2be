//! Binary tensor-table format shared by checkpoints and feature-extractor
//! weight files.
//!
//! Layout, all integers little-endian:
//!   magic "QOTR" | version u32 | tensor count u32
//!   per tensor: name length u16 | UTF-8 name | rank u8 | dims u64 each
//!               | dtype u8 (0 = f32) | raw little-endian values
//!   trailer: snapshot length u32 | UTF-8 snapshot text

use std::io::{Read, Write};

use crate::error::{Error, Result};

pub const MAGIC: [u8; 4] = *b"QOTR";
pub const VERSION: u32 = 1;
pub const DTYPE_F32: u8 = 0;

/// An ordered list of named tensors plus a free-form text snapshot.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct NamedTensors {
    pub entries: Vec<(String, Vec<usize>, Vec<f32>)>,
    pub snapshot: String,
}

impl NamedTensors {
    pub fn find(&self, name: &str) -> Option<(&[usize], &[f32])> {
        self.entries
            .iter()
            .find(|(n, _, _)| n == name)
            .map(|(_, s, d)| (s.as_slice(), d.as_slice()))
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.entries.iter().map(|(n, _, _)| n.as_str())
    }
}

pub fn write_to(w: &mut impl Write, table: &NamedTensors) -> Result<()> {
    w.write_all(&MAGIC)?;
    w.write_all(&VERSION.to_le_bytes())?;
    let count = u32::try_from(table.entries.len())
        .map_err(|_| Error::Format("too many tensors for u32 count".into()))?;
    w.write_all(&count.to_le_bytes())?;
    for (name, shape, data) in &table.entries {
        let name_len = u16::try_from(name.len())
            .map_err(|_| Error::Format(format!("tensor name too long: {name}")))?;
        w.write_all(&name_len.to_le_bytes())?;
        w.write_all(name.as_bytes())?;
        let rank = u8::try_from(shape.len())
            .map_err(|_| Error::Format(format!("rank too high for {name}")))?;
        w.write_all(&[rank])?;
        for &d in shape {
            w.write_all(&(d as u64).to_le_bytes())?;
        }
        w.write_all(&[DTYPE_F32])?;
        let numel: usize = shape.iter().product();
        if numel != data.len() {
            return Err(Error::Format(format!(
                "tensor {name}: shape/data mismatch ({numel} vs {})",
                data.len()
            )));
        }
        for &v in data {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    let snap_len = u32::try_from(table.snapshot.len())
        .map_err(|_| Error::Format("snapshot too large".into()))?;
    w.write_all(&snap_len.to_le_bytes())?;
    w.write_all(table.snapshot.as_bytes())?;
    Ok(())
}

fn read_exact(r: &mut impl Read, buf: &mut [u8], what: &str) -> Result<()> {
    r.read_exact(buf)
        .map_err(|_| Error::Format(format!("truncated file while reading {what}")))
}

pub fn read_from(r: &mut impl Read) -> Result<NamedTensors> {
    let mut magic = [0u8; 4];
    read_exact(r, &mut magic, "magic")?;
    if magic != MAGIC {
        return Err(Error::Format(format!(
            "bad magic {:?}, expected {:?}",
            magic, MAGIC
        )));
    }
    let mut u32b = [0u8; 4];
    read_exact(r, &mut u32b, "version")?;
    let version = u32::from_le_bytes(u32b);
    if version != VERSION {
        return Err(Error::Format(format!(
            "unsupported version {version}, expected {VERSION}"
        )));
    }
    read_exact(r, &mut u32b, "tensor count")?;
    let count = u32::from_le_bytes(u32b) as usize;

    let mut entries = Vec::with_capacity(count);
    for i in 0..count {
        let mut u16b = [0u8; 2];
        read_exact(r, &mut u16b, "name length")?;
        let name_len = u16::from_le_bytes(u16b) as usize;
        let mut name_bytes = vec![0u8; name_len];
        read_exact(r, &mut name_bytes, "name")?;
        let name = String::from_utf8(name_bytes)
            .map_err(|_| Error::Format(format!("tensor {i}: name is not UTF-8")))?;

        let mut rank_b = [0u8; 1];
        read_exact(r, &mut rank_b, "rank")?;
        let mut shape = Vec::with_capacity(rank_b[0] as usize);
        for _ in 0..rank_b[0] {
            let mut dim_b = [0u8; 8];
            read_exact(r, &mut dim_b, "dimension")?;
            shape.push(u64::from_le_bytes(dim_b) as usize);
        }

        let mut dtype_b = [0u8; 1];
        read_exact(r, &mut dtype_b, "dtype")?;
        if dtype_b[0] != DTYPE_F32 {
            return Err(Error::Format(format!(
                "tensor {name}: unsupported dtype code {}",
                dtype_b[0]
            )));
        }
        let numel: usize = shape.iter().product();
        let mut raw = vec![0u8; numel * 4];
        read_exact(r, &mut raw, &format!("data of {name}"))?;
        let data: Vec<f32> = raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect();
        entries.push((name, shape, data));
    }

    read_exact(r, &mut u32b, "snapshot length")?;
    let snap_len = u32::from_le_bytes(u32b) as usize;
    let mut snap = vec![0u8; snap_len];
    read_exact(r, &mut snap, "snapshot")?;
    let snapshot =
        String::from_utf8(snap).map_err(|_| Error::Format("snapshot is not UTF-8".into()))?;

    Ok(NamedTensors { entries, snapshot })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> NamedTensors {
        NamedTensors {
            entries: vec![
                ("a.w".into(), vec![2, 3], vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]),
                ("a.b".into(), vec![3], vec![-0.5, 0.0, 0.5]),
            ],
            snapshot: "seed = 42".into(),
        }
    }

    #[test]
    fn roundtrip_is_byte_identical() {
        let t = sample();
        let mut buf = Vec::new();
        write_to(&mut buf, &t).unwrap();
        let back = read_from(&mut buf.as_slice()).unwrap();
        assert_eq!(back, t);
        let mut buf2 = Vec::new();
        write_to(&mut buf2, &back).unwrap();
        assert_eq!(buf, buf2);
    }

    #[test]
    fn corrupted_magic_rejected() {
        let mut buf = Vec::new();
        write_to(&mut buf, &sample()).unwrap();
        buf[0] = b'X';
        let err = read_from(&mut buf.as_slice()).unwrap_err();
        assert!(err.to_string().contains("magic"), "{err}");
    }

    #[test]
    fn truncation_rejected() {
        let mut buf = Vec::new();
        write_to(&mut buf, &sample()).unwrap();
        buf.truncate(buf.len() - 3);
        let err = read_from(&mut buf.as_slice()).unwrap_err();
        assert!(err.to_string().contains("truncated"), "{err}");
    }

    #[test]
    fn wrong_version_rejected() {
        let mut buf = Vec::new();
        write_to(&mut buf, &sample()).unwrap();
        buf[4] = 99;
        let err = read_from(&mut buf.as_slice()).unwrap_err();
        assert!(err.to_string().contains("version"), "{err}");
    }
}
