//! Binary container for named f64 tensors.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! magic[8] version:u32 header_len:u64 header(JSON) count:u64
//! count × { name_len:u32 name flags:u8 ndim:u32 dims:u64*ndim data:f64*prod(dims) }
//! sha256[32] over every preceding byte
//! ```

use sha2::{Digest, Sha256};

use super::PipelineError;

#[derive(Debug, Clone, PartialEq)]
pub struct Section {
    pub name: String,
    pub shape: Vec<usize>,
    pub trainable: bool,
    pub data: Vec<f64>,
}

impl Section {
    pub fn new(name: impl Into<String>, shape: Vec<usize>, trainable: bool, data: Vec<f64>) -> Self {
        Self {
            name: name.into(),
            shape,
            trainable,
            data,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Container {
    pub magic: [u8; 8],
    pub version: u32,
    pub header: String,
    pub sections: Vec<Section>,
}

impl Container {
    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(&self.magic);
        out.extend_from_slice(&self.version.to_le_bytes());
        out.extend_from_slice(&(self.header.len() as u64).to_le_bytes());
        out.extend_from_slice(self.header.as_bytes());
        out.extend_from_slice(&(self.sections.len() as u64).to_le_bytes());
        for s in &self.sections {
            out.extend_from_slice(&(s.name.len() as u32).to_le_bytes());
            out.extend_from_slice(s.name.as_bytes());
            out.push(u8::from(s.trainable));
            out.extend_from_slice(&(s.shape.len() as u32).to_le_bytes());
            for &d in &s.shape {
                out.extend_from_slice(&(d as u64).to_le_bytes());
            }
            for v in &s.data {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        let digest = Sha256::digest(&out);
        out.extend_from_slice(&digest);
        out
    }

    /// Checks magic, version and checksum, in that order.
    pub fn decode(bytes: &[u8], magic: &[u8; 8], version: u32) -> Result<Self, PipelineError> {
        let mut r = Reader { bytes, pos: 0 };
        let found_magic = r.take(8)?;
        if found_magic != magic {
            return Err(PipelineError::Format(format!(
                "bad magic {:?}, expected {:?}",
                String::from_utf8_lossy(found_magic),
                String::from_utf8_lossy(magic)
            )));
        }
        let found = r.u32()?;
        if found != version {
            return Err(PipelineError::Version { found, expected: version });
        }
        if bytes.len() < 32 + r.pos {
            return Err(PipelineError::Format("truncated file".into()));
        }
        let (body, digest) = bytes.split_at(bytes.len() - 32);
        if Sha256::digest(body).as_slice() != digest {
            return Err(PipelineError::Format("checksum mismatch".into()));
        }
        let mut r = Reader { bytes: body, pos: r.pos };
        let header_len = r.len()?;
        let header = String::from_utf8(r.take(header_len)?.to_vec())
            .map_err(|_| PipelineError::Format("header is not UTF-8".into()))?;
        let count = r.len()?;
        let mut sections = Vec::new();
        for _ in 0..count {
            let name_len = r.u32()? as usize;
            let name = String::from_utf8(r.take(name_len)?.to_vec())
                .map_err(|_| PipelineError::Format("section name is not UTF-8".into()))?;
            let trainable = match r.take(1)?[0] {
                0 => false,
                1 => true,
                f => return Err(PipelineError::Format(format!("section {name}: bad flags {f}"))),
            };
            let ndim = r.u32()? as usize;
            let shape = (0..ndim).map(|_| r.len()).collect::<Result<Vec<_>, _>>()?;
            let n = shape
                .iter()
                .try_fold(1usize, |a, &d| a.checked_mul(d))
                .filter(|&n| n <= (body.len() - r.pos) / 8)
                .ok_or_else(|| PipelineError::Format(format!("section {name}: shape {shape:?} exceeds the file")))?;
            let data = r
                .take(n * 8)?
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
                .collect();
            sections.push(Section { name, shape, trainable, data });
        }
        if r.pos != body.len() {
            return Err(PipelineError::Format(format!("{} trailing bytes", body.len() - r.pos)));
        }
        Ok(Self {
            magic: *magic,
            version,
            header,
            sections,
        })
    }

    pub fn section(&self, name: &str) -> Result<&Section, PipelineError> {
        self.sections
            .iter()
            .find(|s| s.name == name)
            .ok_or_else(|| PipelineError::Format(format!("missing section {name}")))
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], PipelineError> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let end = end.ok_or_else(|| PipelineError::Format("truncated file".into()))?;
        let out = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(out)
    }

    fn u32(&mut self) -> Result<u32, PipelineError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn len(&mut self) -> Result<usize, PipelineError> {
        let v = u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes"));
        usize::try_from(v).map_err(|_| PipelineError::Format(format!("length {v} too large")))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> Container {
        Container {
            magic: *b"TESTBLOB",
            version: 3,
            header: r#"{"k":1}"#.into(),
            sections: vec![
                Section::new("a", vec![2, 2], true, vec![1.0, -0.0, f64::MIN_POSITIVE, 1e300]),
                Section::new("empty", vec![0], false, vec![]),
                Section::new("s", vec![], false, vec![std::f64::consts::PI]),
            ],
        }
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let c = sample();
        let bytes = c.encode();
        let back = Container::decode(&bytes, b"TESTBLOB", 3).unwrap();
        assert_eq!(back.encode(), bytes);
        assert_eq!(back.sections[0].data[1].to_bits(), (-0.0f64).to_bits());
        assert_eq!(back, c);
    }

    #[test]
    fn wrong_version_is_a_version_error() {
        let bytes = sample().encode();
        assert_eq!(
            Container::decode(&bytes, b"TESTBLOB", 4),
            Err(PipelineError::Version { found: 3, expected: 4 })
        );
    }

    #[test]
    fn corruption_is_detected() {
        let mut bytes = sample().encode();
        let mid = bytes.len() / 2;
        bytes[mid] ^= 1;
        assert!(matches!(Container::decode(&bytes, b"TESTBLOB", 3), Err(PipelineError::Format(_))));
        assert!(matches!(Container::decode(&bytes[..10], b"TESTBLOB", 3), Err(PipelineError::Format(_))));
        assert!(matches!(Container::decode(&sample().encode(), b"OTHERBLB", 3), Err(PipelineError::Format(_))));
    }
}
