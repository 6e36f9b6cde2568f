//! The "IPDW" tensor container.
//!
//! ```text
//! magic "IPDW" | version u32 | count u32 |
//!   count x { name_len u32 | name utf-8 | rank u32 | dims rank x u32 | data f32 x prod(dims) }
//! ```
//! All integers and floats little-endian. Trailing bytes are rejected.

use std::collections::HashSet;
use std::io::Write;
use std::path::Path;

use crate::error::{CoreError, Result};

pub const MAGIC: &[u8; 4] = b"IPDW";
pub const VERSION: u32 = 1;
const MAX_RANK: usize = 8;

#[derive(Debug, Clone, PartialEq)]
pub struct NamedTensor {
    pub name: String,
    pub dims: Vec<usize>,
    pub data: Vec<f32>,
}

impl NamedTensor {
    pub fn new(name: impl Into<String>, dims: Vec<usize>, data: Vec<f32>) -> Result<Self> {
        let name = name.into();
        if dims.iter().product::<usize>() != data.len() {
            return Err(CoreError::Container(format!(
                "tensor {name}: dims {dims:?} do not match {} values",
                data.len()
            )));
        }
        Ok(NamedTensor { name, dims, data })
    }

    /// UTF-8 text stored one byte per value.
    pub fn text(name: impl Into<String>, text: &str) -> Self {
        let data: Vec<f32> = text.bytes().map(f32::from).collect();
        NamedTensor {
            name: name.into(),
            dims: vec![data.len()],
            data,
        }
    }

    pub fn as_text(&self) -> Result<String> {
        let bytes = self
            .data
            .iter()
            .map(|&v| {
                if (0.0..=255.0).contains(&v) && v.fract() == 0.0 {
                    Ok(v as u8)
                } else {
                    Err(CoreError::Container(format!("tensor {} is not text", self.name)))
                }
            })
            .collect::<Result<Vec<u8>>>()?;
        String::from_utf8(bytes).map_err(|_| CoreError::Container(format!("tensor {} is not UTF-8", self.name)))
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct WeightContainer {
    pub tensors: Vec<NamedTensor>,
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.bytes.len() - self.pos < n {
            return Err(CoreError::Container(format!(
                "truncated while reading {what} at byte {}",
                self.pos
            )));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }

    fn remaining(&self) -> usize {
        self.bytes.len() - self.pos
    }
}

impl WeightContainer {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, tensor: NamedTensor) -> Result<()> {
        if self.get(&tensor.name).is_some() {
            return Err(CoreError::Container(format!("duplicate tensor name {}", tensor.name)));
        }
        self.tensors.push(tensor);
        Ok(())
    }

    pub fn get(&self, name: &str) -> Option<&NamedTensor> {
        self.tensors.iter().find(|t| t.name == name)
    }

    pub fn require(&self, name: &str) -> Result<&NamedTensor> {
        self.get(name)
            .ok_or_else(|| CoreError::Container(format!("missing tensor {name}")))
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut seen = HashSet::new();
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&(self.tensors.len() as u32).to_le_bytes());
        for t in &self.tensors {
            if !seen.insert(t.name.as_str()) {
                return Err(CoreError::Container(format!("duplicate tensor name {}", t.name)));
            }
            if t.dims.len() > MAX_RANK || t.dims.iter().product::<usize>() != t.data.len() {
                return Err(CoreError::Container(format!("tensor {} has inconsistent dims", t.name)));
            }
            out.extend_from_slice(&(t.name.len() as u32).to_le_bytes());
            out.extend_from_slice(t.name.as_bytes());
            out.extend_from_slice(&(t.dims.len() as u32).to_le_bytes());
            for &d in &t.dims {
                let d = u32::try_from(d).map_err(|_| CoreError::Container(format!("tensor {} too large", t.name)))?;
                out.extend_from_slice(&d.to_le_bytes());
            }
            for v in &t.data {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        Ok(out)
    }

    /// Every size is checked against the remaining bytes before anything is allocated.
    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(4, "magic").map_err(|_| CoreError::Container("file too short for magic".into()))? != MAGIC {
            return Err(CoreError::Container("bad magic, not an IPDW file".into()));
        }
        let version = r.u32("version")?;
        if version != VERSION {
            return Err(CoreError::Container(format!(
                "format version {version} is not supported (expected {VERSION})"
            )));
        }
        let count = r.u32("tensor count")? as usize;
        // Each tensor needs at least 8 header bytes.
        if count > r.remaining() / 8 {
            return Err(CoreError::Container(format!("tensor count {count} exceeds file size")));
        }
        let mut tensors = Vec::with_capacity(count);
        let mut seen = HashSet::new();
        for i in 0..count {
            let name_len = r.u32("name length")? as usize;
            let name = std::str::from_utf8(r.take(name_len, "name")?)
                .map_err(|_| CoreError::Container(format!("tensor {i}: name is not UTF-8")))?
                .to_string();
            let rank = r.u32("rank")? as usize;
            if rank > MAX_RANK {
                return Err(CoreError::Container(format!("tensor {name}: rank {rank} above {MAX_RANK}")));
            }
            let mut dims = Vec::with_capacity(rank);
            for _ in 0..rank {
                dims.push(r.u32("dims")? as usize);
            }
            let numel = dims
                .iter()
                .try_fold(1usize, |a, &d| a.checked_mul(d))
                .filter(|&n| n.checked_mul(4).is_some_and(|b| b <= r.remaining()))
                .ok_or_else(|| CoreError::Container(format!("tensor {name}: payload {dims:?} exceeds file size")))?;
            let data = r
                .take(numel * 4, "data")?
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
                .collect();
            if !seen.insert(name.clone()) {
                return Err(CoreError::Container(format!("duplicate tensor name {name}")));
            }
            tensors.push(NamedTensor { name, dims, data });
        }
        if r.remaining() != 0 {
            return Err(CoreError::Container(format!("{} trailing bytes", r.remaining())));
        }
        Ok(WeightContainer { tensors })
    }

    /// Writes to a temporary sibling, then renames over `path`.
    pub fn save(&self, path: &Path) -> Result<()> {
        write_atomic(path, &self.to_bytes()?)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_bytes(&std::fs::read(path)?)
    }
}

/// Write-then-rename so readers never see a partial file.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    let name = path
        .file_name()
        .ok_or_else(|| CoreError::Container(format!("{} is not a file path", path.display())))?;
    let tmp = dir.join(format!(".{}.tmp{}", name.to_string_lossy(), std::process::id()));
    {
        let mut f = std::fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
    }
    std::fs::rename(&tmp, path)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> WeightContainer {
        let mut c = WeightContainer::new();
        c.push(NamedTensor::new("a/w", vec![2, 3], vec![1.0, -2.0, 3.5, f32::MIN_POSITIVE, 0.0, -0.0]).unwrap())
            .unwrap();
        c.push(NamedTensor::new("b", vec![], vec![7.0]).unwrap()).unwrap();
        c.push(NamedTensor::text("meta/config", "{\"k\":2}")).unwrap();
        c
    }

    #[test]
    fn round_trip_bit_exact() {
        let c = sample();
        let bytes = c.to_bytes().unwrap();
        let back = WeightContainer::from_bytes(&bytes).unwrap();
        assert_eq!(back.to_bytes().unwrap(), bytes);
        assert_eq!(back.get("meta/config").unwrap().as_text().unwrap(), "{\"k\":2}");
        assert_eq!(&bytes[..4], b"IPDW");
        assert_eq!(&bytes[4..8], &1u32.to_le_bytes());
    }

    #[test]
    fn rejects_corruption() {
        let bytes = sample().to_bytes().unwrap();
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(WeightContainer::from_bytes(&bad).unwrap_err().to_string().contains("magic"));
        for cut in [3, 10, bytes.len() - 1] {
            assert!(WeightContainer::from_bytes(&bytes[..cut]).is_err());
        }
        let mut trailing = bytes.clone();
        trailing.push(0);
        assert!(WeightContainer::from_bytes(&trailing).unwrap_err().to_string().contains("trailing"));
        let mut version = bytes.clone();
        version[4] = 2;
        assert!(WeightContainer::from_bytes(&version).unwrap_err().to_string().contains("version"));
    }

    #[test]
    fn huge_dims_rejected_without_allocation() {
        let mut b = Vec::new();
        b.extend_from_slice(MAGIC);
        b.extend_from_slice(&1u32.to_le_bytes());
        b.extend_from_slice(&1u32.to_le_bytes());
        b.extend_from_slice(&1u32.to_le_bytes());
        b.push(b'x');
        b.extend_from_slice(&2u32.to_le_bytes());
        b.extend_from_slice(&u32::MAX.to_le_bytes());
        b.extend_from_slice(&u32::MAX.to_le_bytes());
        assert!(WeightContainer::from_bytes(&b).unwrap_err().to_string().contains("exceeds"));
    }

    #[test]
    fn duplicate_names() {
        let mut c = sample();
        assert!(c.push(NamedTensor::text("b", "x")).is_err());
        c.tensors.push(NamedTensor::text("b", "x"));
        assert!(c.to_bytes().is_err());
    }

    #[test]
    fn atomic_save_load() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("w.ipdw");
        sample().save(&p).unwrap();
        assert_eq!(WeightContainer::load(&p).unwrap(), sample());
        assert_eq!(std::fs::read_dir(dir.path()).unwrap().count(), 1);
    }
}
