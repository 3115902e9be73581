//! Checkpoint persistence.
//!
//! Binary layout, little-endian: magic "FNKC", version u32, model name
//! (u32 length + utf8), iteration u64, rng state (u64 counter, u8 spare
//! flag, f64 spare), then a u32 section count followed by named sections,
//! each a (u32 length + utf8) name and an FNK1 tensor blob. Sections carry
//! `param.*`, `buffer.*`, and `momentum.*` entries. Writes go through a
//! temp file and an atomic rename.

use std::io::{Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::rng::Rng;
use crate::tensor::Tensor;

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"FNKC";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub model: String,
    pub iteration: u64,
    pub rng_counter: u64,
    pub rng_spare: Option<f64>,
    /// `param.<name>`, `buffer.<name>`, `momentum.<name>` sections, in
    /// canonical order.
    pub sections: Vec<(String, Tensor)>,
}

impl Checkpoint {
    pub fn rng(&self) -> Rng {
        Rng::from_state(self.rng_counter, self.rng_spare)
    }

    pub fn section(&self, name: &str) -> Option<&Tensor> {
        self.sections.iter().find(|(n, _)| n == name).map(|(_, t)| t)
    }

    pub fn write_to<W: Write>(&self, w: &mut W) -> Result<()> {
        w.write_all(CHECKPOINT_MAGIC)?;
        w.write_all(&CHECKPOINT_VERSION.to_le_bytes())?;
        write_string(w, &self.model)?;
        w.write_all(&self.iteration.to_le_bytes())?;
        w.write_all(&self.rng_counter.to_le_bytes())?;
        match self.rng_spare {
            Some(v) => {
                w.write_all(&[1u8])?;
                w.write_all(&v.to_le_bytes())?;
            }
            None => {
                w.write_all(&[0u8])?;
                w.write_all(&0f64.to_le_bytes())?;
            }
        }
        let n = u32::try_from(self.sections.len())
            .map_err(|_| Error::State("too many checkpoint sections".into()))?;
        w.write_all(&n.to_le_bytes())?;
        for (name, tensor) in &self.sections {
            write_string(w, name)?;
            tensor.write_fnk1(w)?;
        }
        Ok(())
    }

    pub fn read_from<R: Read>(r: &mut R) -> Result<Checkpoint> {
        let mut offset = 0u64;
        let mut magic = [0u8; 4];
        read_exact(r, &mut magic, &mut offset)?;
        if &magic != CHECKPOINT_MAGIC {
            return Err(Error::Format {
                offset: 0,
                msg: format!("bad checkpoint magic {magic:?}"),
            });
        }
        let version = read_u32(r, &mut offset)?;
        if version != CHECKPOINT_VERSION {
            return Err(Error::Format {
                offset: 4,
                msg: format!("unsupported checkpoint version {version}"),
            });
        }
        let model = read_string(r, &mut offset)?;
        let iteration = read_u64(r, &mut offset)?;
        let rng_counter = read_u64(r, &mut offset)?;
        let mut flag = [0u8; 1];
        read_exact(r, &mut flag, &mut offset)?;
        let mut spare = [0u8; 8];
        read_exact(r, &mut spare, &mut offset)?;
        let rng_spare = (flag[0] == 1).then(|| f64::from_le_bytes(spare));
        let n = read_u32(r, &mut offset)? as usize;
        let mut sections = Vec::with_capacity(n);
        for _ in 0..n {
            let name = read_string(r, &mut offset)?;
            let tensor = Tensor::read_fnk1(r)?;
            sections.push((name, tensor));
        }
        Ok(Checkpoint { model, iteration, rng_counter, rng_spare, sections })
    }

    /// Atomic save: write to `<path>.tmp`, then rename over the target.
    pub fn save(&self, path: &Path) -> Result<()> {
        let tmp = path.with_extension("tmp");
        {
            let mut f = std::io::BufWriter::new(std::fs::File::create(&tmp)?);
            self.write_to(&mut f)?;
            f.flush()?;
        }
        std::fs::rename(&tmp, path)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Checkpoint> {
        let mut f = std::io::BufReader::new(std::fs::File::open(path)?);
        Checkpoint::read_from(&mut f)
    }
}

fn write_string<W: Write>(w: &mut W, s: &str) -> Result<()> {
    let bytes = s.as_bytes();
    let n = u32::try_from(bytes.len()).map_err(|_| Error::State("string too long".into()))?;
    w.write_all(&n.to_le_bytes())?;
    w.write_all(bytes)?;
    Ok(())
}

fn read_exact<R: Read>(r: &mut R, buf: &mut [u8], offset: &mut u64) -> Result<()> {
    r.read_exact(buf).map_err(|e| Error::Format {
        offset: *offset,
        msg: format!("truncated checkpoint: {e}"),
    })?;
    *offset += buf.len() as u64;
    Ok(())
}

fn read_u32<R: Read>(r: &mut R, offset: &mut u64) -> Result<u32> {
    let mut buf = [0u8; 4];
    read_exact(r, &mut buf, offset)?;
    Ok(u32::from_le_bytes(buf))
}

fn read_u64<R: Read>(r: &mut R, offset: &mut u64) -> Result<u64> {
    let mut buf = [0u8; 8];
    read_exact(r, &mut buf, offset)?;
    Ok(u64::from_le_bytes(buf))
}

fn read_string<R: Read>(r: &mut R, offset: &mut u64) -> Result<String> {
    let n = read_u32(r, offset)? as usize;
    let mut buf = vec![0u8; n];
    read_exact(r, &mut buf, offset)?;
    String::from_utf8(buf).map_err(|e| Error::Format {
        offset: *offset,
        msg: format!("invalid utf8 in checkpoint string: {e}"),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> Checkpoint {
        let mut rng = Rng::new(3);
        rng.next_normal();
        let (counter, spare) = rng.state();
        Checkpoint {
            model: "toy-cnn-frelu".into(),
            iteration: 123,
            rng_counter: counter,
            rng_spare: spare,
            sections: vec![
                (
                    "param.c1.weight".into(),
                    Tensor::gaussian(2, 1, 3, 3, 0.0, 1.0, &mut Rng::new(4)).unwrap(),
                ),
                (
                    "momentum.c1.weight".into(),
                    Tensor::zeros(1, 18, 1, 1).unwrap(),
                ),
            ],
        }
    }

    #[test]
    fn save_load_save_is_byte_identical() {
        let cp = sample();
        let mut a = Vec::new();
        cp.write_to(&mut a).unwrap();
        let back = Checkpoint::read_from(&mut a.as_slice()).unwrap();
        assert_eq!(back, cp);
        let mut b = Vec::new();
        back.write_to(&mut b).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn save_is_atomic_and_loadable() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ck.fnkc");
        let cp = sample();
        cp.save(&path).unwrap();
        assert!(!path.with_extension("tmp").exists());
        assert_eq!(Checkpoint::load(&path).unwrap(), cp);
    }

    #[test]
    fn corrupt_magic_rejected() {
        let cp = sample();
        let mut bytes = Vec::new();
        cp.write_to(&mut bytes).unwrap();
        bytes[0] = b'Z';
        match Checkpoint::read_from(&mut bytes.as_slice()) {
            Err(Error::Format { offset: 0, .. }) => {}
            other => panic!("expected format error at 0, got {other:?}"),
        }
    }

    #[test]
    fn rng_round_trips_through_checkpoint() {
        let cp = sample();
        let mut restored = cp.rng();
        let mut original = Rng::new(3);
        original.next_normal();
        for _ in 0..5 {
            assert_eq!(original.next_normal().to_bits(), restored.next_normal().to_bits());
        }
    }
}
