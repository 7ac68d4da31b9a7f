//! Little-endian binary tensor files.
//!
//! Layout:
//! ```text
//! magic  "NLIT"            4 bytes
//! version u32              = 1
//! provenance key           32 bytes (SHA-256)
//! kind u8, channel i32 (i32::MIN for none), coi_sub u32, sub u32
//! n_max i32, sigma_max i32, a_lo i32, a_hi i32
//! scale f64
//! entry count u64
//! records: n i32, k i32, k' i32, re f64, im f64   (unscaled grid values)
//! ```
//! Files are written to a temporary name and renamed into place.

use std::io::{Read, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use super::{hex, Grid, NliTensor, TensorKind};
use crate::{Error, Result, C64};

const MAGIC: &[u8; 4] = b"NLIT";
const VERSION: u32 = 1;

pub fn path_for(dir: &Path, key: &[u8; 32]) -> PathBuf {
    dir.join(format!("{}.nlit", hex(key)))
}

pub fn cache_store(t: &NliTensor, path: &Path) -> Result<()> {
    let g = &t.grid;
    let entries: Vec<(i32, i32, i32, C64)> = g.entries().collect();
    let mut buf = Vec::with_capacity(96 + entries.len() * 28);
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&VERSION.to_le_bytes());
    buf.extend_from_slice(&t.provenance_key);
    buf.push(t.kind.code());
    buf.extend_from_slice(&t.channel.unwrap_or(i32::MIN).to_le_bytes());
    buf.extend_from_slice(&(t.coi_sub as u32).to_le_bytes());
    buf.extend_from_slice(&(t.sub as u32).to_le_bytes());
    for v in [g.n_max, g.sigma_max, g.a_lo, g.a_hi] {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    buf.extend_from_slice(&t.scale.to_le_bytes());
    buf.extend_from_slice(&(entries.len() as u64).to_le_bytes());
    for (n, k, kp, v) in entries {
        buf.extend_from_slice(&n.to_le_bytes());
        buf.extend_from_slice(&k.to_le_bytes());
        buf.extend_from_slice(&kp.to_le_bytes());
        buf.extend_from_slice(&v.re.to_le_bytes());
        buf.extend_from_slice(&v.im.to_le_bytes());
    }
    if let Some(dir) = path.parent() {
        if !dir.as_os_str().is_empty() {
            std::fs::create_dir_all(dir)?;
        }
    }
    let tmp = path.with_extension(format!("tmp{}", std::process::id()));
    {
        let mut f = std::fs::File::create(&tmp)?;
        f.write_all(&buf)?;
        f.sync_all()?;
    }
    std::fs::rename(&tmp, path)?;
    Ok(())
}

struct Reader<'a> {
    b: &'a [u8],
    pos: usize,
    path: &'a Path,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.b.len() {
            return Err(Error::CorruptCache {
                path: self.path.to_path_buf(),
                reason: "truncated file".into(),
            });
        }
        let s = &self.b[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }
    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
    fn i32(&mut self) -> Result<i32> {
        Ok(i32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}

/// Loads a tensor, rejecting it unless its key equals `expected`.
pub fn cache_load(path: &Path, expected: &[u8; 32]) -> Result<NliTensor> {
    let t = read_tensor(path)?;
    if &t.provenance_key != expected {
        return Err(Error::CacheKeyMismatch {
            path: path.to_path_buf(),
        });
    }
    Ok(t)
}

/// Loads a tensor without checking its provenance.
pub fn read_tensor(path: &Path) -> Result<NliTensor> {
    let mut bytes = Vec::new();
    std::fs::File::open(path)?.read_to_end(&mut bytes)?;
    let corrupt = |reason: &str| Error::CorruptCache {
        path: path.to_path_buf(),
        reason: reason.into(),
    };
    let mut r = Reader {
        b: &bytes,
        pos: 0,
        path,
    };
    if r.take(4)? != MAGIC {
        return Err(corrupt("bad magic"));
    }
    if r.u32()? != VERSION {
        return Err(corrupt("unsupported version"));
    }
    let key: [u8; 32] = r.take(32)?.try_into().unwrap();
    let kind = TensorKind::from_code(r.take(1)?[0]).ok_or_else(|| corrupt("unknown kind"))?;
    let ch = r.i32()?;
    let coi_sub = r.u32()? as usize;
    let sub = r.u32()? as usize;
    let (n_max, sigma_max, a_lo, a_hi) = (r.i32()?, r.i32()?, r.i32()?, r.i32()?);
    if n_max < 0 || sigma_max < 0 || a_hi < a_lo - 1 || n_max > 1 << 12 || sigma_max > 1 << 12 || (a_hi - a_lo) > 1 << 22 {
        return Err(corrupt("bad bounds"));
    }
    let scale = r.f64()?;
    let count = r.u64()?;
    let mut grid = Grid::zeros(n_max, sigma_max, a_lo, a_hi);
    if count as usize > grid.data.len() {
        return Err(corrupt("too many entries"));
    }
    for _ in 0..count {
        let (n, k, kp) = (r.i32()?, r.i32()?, r.i32()?);
        let v = C64::new(r.f64()?, r.f64()?);
        let (s, a) = (n + k - kp, n - kp);
        if n.abs() > n_max || s.abs() > sigma_max || a < a_lo || a > a_hi {
            return Err(corrupt("entry outside bounds"));
        }
        if !v.re.is_finite() || !v.im.is_finite() {
            return Err(corrupt("non-finite entry"));
        }
        grid.line_mut(n, s)[(a - a_lo) as usize] = v;
    }
    if r.pos != bytes.len() {
        return Err(corrupt("trailing bytes"));
    }
    Ok(NliTensor {
        kind,
        channel: if ch == i32::MIN { None } else { Some(ch) },
        coi_sub,
        sub,
        scale,
        grid: Arc::new(grid),
        provenance_key: key,
    })
}

/// CSV dump `n,k,kp,re,im` of the scaled tensor values.
pub fn write_csv(t: &NliTensor, out: &mut dyn Write) -> Result<()> {
    writeln!(out, "n,k,kp,re,im")?;
    for (n, k, kp, v) in t.entries() {
        writeln!(out, "{n},{k},{kp},{:e},{:e}", v.re, v.im)?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample(kind: TensorKind) -> NliTensor {
        let mut g = Grid::zeros(2, 1, -3, 4);
        g.line_mut(1, -1)[2] = C64::new(1.5, -2.25e-7);
        g.line_mut(-2, 0)[7] = C64::new(-0.0, 3.0);
        NliTensor {
            kind,
            channel: Some(-2),
            coi_sub: 1,
            sub: 3,
            scale: 2.0,
            grid: Arc::new(g),
            provenance_key: [7u8; 32],
        }
    }

    #[test]
    fn round_trip_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let t = sample(TensorKind::C);
        let p = path_for(dir.path(), &t.provenance_key);
        cache_store(&t, &p).unwrap();
        let u = cache_load(&p, &t.provenance_key).unwrap();
        assert_eq!(u.grid.data().len(), t.grid.data().len());
        for (a, b) in u.grid.data().iter().zip(t.grid.data()) {
            assert_eq!(a.re.to_bits(), b.re.to_bits());
            assert_eq!(a.im.to_bits(), b.im.to_bits());
        }
        assert_eq!(u, t);
    }

    #[test]
    fn empty_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let t = NliTensor {
            grid: Arc::new(Grid::zeros(0, 0, 0, -1)),
            channel: None,
            ..sample(TensorKind::S)
        };
        let p = dir.path().join("e.nlit");
        cache_store(&t, &p).unwrap();
        assert_eq!(cache_load(&p, &t.provenance_key).unwrap(), t);
    }

    #[test]
    fn key_mismatch_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let t = sample(TensorKind::D);
        let p = dir.path().join("x.nlit");
        cache_store(&t, &p).unwrap();
        let err = cache_load(&p, &[8u8; 32]).unwrap_err();
        assert!(matches!(err, Error::CacheKeyMismatch { .. }));
    }

    #[test]
    fn corrupt_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let t = sample(TensorKind::D);
        let p = dir.path().join("x.nlit");
        cache_store(&t, &p).unwrap();
        let mut b = std::fs::read(&p).unwrap();
        b.truncate(b.len() - 3);
        std::fs::write(&p, &b).unwrap();
        assert!(matches!(cache_load(&p, &t.provenance_key), Err(Error::CorruptCache { .. })));
        std::fs::write(&p, b"junk").unwrap();
        assert!(matches!(cache_load(&p, &t.provenance_key), Err(Error::CorruptCache { .. })));
    }

    #[test]
    fn csv_dump_scaled() {
        let t = sample(TensorKind::C);
        let mut out = Vec::new();
        write_csv(&t, &mut out).unwrap();
        let s = String::from_utf8(out).unwrap();
        assert!(s.starts_with("n,k,kp,re,im\n"));
        assert_eq!(s.lines().count(), 3);
        assert!(s.contains("3e0") || s.contains("6e0"));
    }
}
