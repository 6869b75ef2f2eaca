//! Orbit cache files.
//!
//! Layout (version 1):
//!
//! ```text
//! SIEGELORBIT 1\n
//! map <map>\n  rot <rot>\n  prec <bits>\n  n <iterations>\n
//! digest <sha256 hex>\n  chunk <records per chunk>\n  end-header\n
//! 'C' u32 count, u32 bytes, then `count` lines "<re> <im>\n" (C99 hex-floats)
//! ...
//! 'K' u32 bytes, JSON checkpoint (exact MPFR radix-16 state of the last iterate)
//! 'E' u64 total records
//! ```
//!
//! Integers are little-endian. Records are the `f64`-rounded iterates;
//! the checkpoint makes the orbit resumable at full precision.

use std::fs::{self, File};
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::hexfloat;
use crate::maps::MapSpec;
use crate::orbit::{orbit_digest, Checkpoint, OrbitStore};

pub const MAGIC: &str = "SIEGELORBIT";
pub const FORMAT_VERSION: u32 = 1;
pub const DEFAULT_CHUNK: usize = 1 << 16;
/// Environment variable naming the cache directory.
pub const CACHE_DIR_ENV: &str = "SIEGEL_CACHE_DIR";

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CacheHeader {
    pub map: String,
    pub rot: String,
    pub prec_bits: u32,
    pub iterations: u64,
    pub digest: String,
    pub chunk: usize,
}

/// Directory from `SIEGEL_CACHE_DIR`, if set and non-empty.
pub fn cache_dir_from_env() -> Option<PathBuf> {
    std::env::var_os(CACHE_DIR_ENV).filter(|v| !v.is_empty()).map(PathBuf::from)
}

pub fn cache_file_name(spec: &MapSpec, prec_bits: u32, iterations: u64) -> String {
    let digest = orbit_digest(spec, prec_bits);
    format!("orbit-{}-{iterations}.sgo", &digest[..16])
}

pub fn save_orbit(path: &Path, orbit: &OrbitStore) -> Result<()> {
    save_orbit_chunked(path, orbit, DEFAULT_CHUNK)
}

/// Writes atomically (temporary file, then rename).
pub fn save_orbit_chunked(path: &Path, orbit: &OrbitStore, chunk: usize) -> Result<()> {
    let chunk = chunk.max(1);
    let tmp = path.with_extension("sgo.partial");
    {
        let mut w = BufWriter::new(File::create(&tmp)?);
        write!(
            w,
            "{MAGIC} {FORMAT_VERSION}\nmap {}\nrot {}\nprec {}\nn {}\ndigest {}\nchunk {chunk}\nend-header\n",
            orbit.spec().kind,
            orbit.spec().rot,
            orbit.prec_bits(),
            orbit.iterations(),
            orbit.digest(),
        )?;
        let mut payload = String::new();
        for block in orbit.values().chunks(chunk) {
            payload.clear();
            for v in block {
                payload.push_str(&hexfloat::format_f64(v.re));
                payload.push(' ');
                payload.push_str(&hexfloat::format_f64(v.im));
                payload.push('\n');
            }
            w.write_all(b"C")?;
            w.write_all(&(block.len() as u32).to_le_bytes())?;
            w.write_all(&(payload.len() as u32).to_le_bytes())?;
            w.write_all(payload.as_bytes())?;
        }
        let ck = serde_json::to_vec(orbit.checkpoint())?;
        w.write_all(b"K")?;
        w.write_all(&(ck.len() as u32).to_le_bytes())?;
        w.write_all(&ck)?;
        w.write_all(b"E")?;
        w.write_all(&(orbit.values().len() as u64).to_le_bytes())?;
        w.flush()?;
    }
    fs::rename(&tmp, path)?;
    Ok(())
}

fn bad(msg: impl Into<String>) -> Error {
    Error::Format(format!("orbit cache: {}", msg.into()))
}

fn read_header(r: &mut impl BufRead) -> Result<CacheHeader> {
    let mut line = String::new();
    let mut next = |r: &mut dyn BufRead| -> Result<String> {
        line.clear();
        if r.read_line(&mut line)? == 0 {
            return Err(bad("truncated header"));
        }
        Ok(line.trim_end_matches('\n').to_string())
    };
    let first = next(r)?;
    let version = first
        .strip_prefix(MAGIC)
        .map(str::trim)
        .ok_or_else(|| bad("not an orbit cache file"))?;
    if version != FORMAT_VERSION.to_string() {
        return Err(bad(format!("unsupported format version {version}")));
    }
    let mut field = |r: &mut dyn BufRead, key: &str| -> Result<String> {
        let l = next(r)?;
        l.strip_prefix(key)
            .and_then(|v| v.strip_prefix(' '))
            .map(str::to_string)
            .ok_or_else(|| bad(format!("expected '{key}' line, found {l:?}")))
    };
    let map = field(r, "map")?;
    let rot = field(r, "rot")?;
    let prec_bits = field(r, "prec")?.parse().map_err(|_| bad("bad prec"))?;
    let iterations = field(r, "n")?.parse().map_err(|_| bad("bad n"))?;
    let digest = field(r, "digest")?;
    let chunk = field(r, "chunk")?.parse().map_err(|_| bad("bad chunk"))?;
    let mut l = String::new();
    r.read_line(&mut l)?;
    if l.trim_end() != "end-header" {
        return Err(bad("missing end-header"));
    }
    Ok(CacheHeader { map, rot, prec_bits, iterations, digest, chunk })
}

/// Reads only the header.
pub fn read_cache_header(path: &Path) -> Result<CacheHeader> {
    read_header(&mut BufReader::new(File::open(path)?))
}

fn read_u32(r: &mut impl Read) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b).map_err(|_| bad("truncated frame"))?;
    Ok(u32::from_le_bytes(b))
}

/// Loads a cache file; with `expected`, the header must describe that
/// (map, rotation number, precision) or loading fails.
pub fn load_orbit(path: &Path, expected: Option<(&MapSpec, u32)>) -> Result<OrbitStore> {
    let mut r = BufReader::new(File::open(path)?);
    let h = read_header(&mut r)?;
    let spec = MapSpec::new(h.map.parse()?, h.rot.parse()?)?;
    let digest = orbit_digest(&spec, h.prec_bits);
    if digest != h.digest {
        return Err(Error::CacheMismatch(format!(
            "{}: header digest does not match its own map/rot/prec",
            path.display()
        )));
    }
    if let Some((want, prec)) = expected {
        let want_digest = orbit_digest(want, prec);
        if want_digest != h.digest {
            return Err(Error::CacheMismatch(format!(
                "{}: cache is for {} at {} bits, requested {} at {prec} bits",
                path.display(),
                spec,
                h.prec_bits,
                want
            )));
        }
    }
    let total = h.iterations as usize + 1;
    let mut values: Vec<Complex64> = Vec::with_capacity(total);
    let mut checkpoint: Option<Checkpoint> = None;
    let mut payload = Vec::new();
    loop {
        let mut tag = [0u8; 1];
        r.read_exact(&mut tag).map_err(|_| bad("missing end marker"))?;
        match tag[0] {
            b'C' => {
                let count = read_u32(&mut r)? as usize;
                let bytes = read_u32(&mut r)? as usize;
                payload.resize(bytes, 0);
                r.read_exact(&mut payload).map_err(|_| bad("truncated chunk"))?;
                let text = std::str::from_utf8(&payload).map_err(|_| bad("chunk is not UTF-8"))?;
                let before = values.len();
                for line in text.lines() {
                    let (re, im) = line.split_once(' ').ok_or_else(|| bad("bad record"))?;
                    values.push(Complex64::new(hexfloat::parse_f64(re)?, hexfloat::parse_f64(im)?));
                }
                if values.len() - before != count {
                    return Err(bad("chunk record count mismatch"));
                }
            }
            b'K' => {
                let bytes = read_u32(&mut r)? as usize;
                payload.resize(bytes, 0);
                r.read_exact(&mut payload).map_err(|_| bad("truncated checkpoint"))?;
                checkpoint = Some(serde_json::from_slice(&payload)?);
            }
            b'E' => {
                let mut b = [0u8; 8];
                r.read_exact(&mut b).map_err(|_| bad("truncated end marker"))?;
                if u64::from_le_bytes(b) as usize != values.len() || values.len() != total {
                    return Err(bad("record count does not match header"));
                }
                break;
            }
            t => return Err(bad(format!("unknown frame tag {t:#04x}"))),
        }
    }
    let checkpoint = checkpoint.ok_or_else(|| bad("missing checkpoint"))?;
    if checkpoint.digest != digest || checkpoint.prec_bits != h.prec_bits {
        return Err(Error::CacheMismatch("checkpoint does not belong to this orbit".into()));
    }
    OrbitStore::from_parts(spec, h.prec_bits, values, checkpoint)
}

/// Finds the longest cached orbit for `(spec, prec)` with at most
/// `max_iterations` iterations.
pub fn find_cached(dir: &Path, spec: &MapSpec, prec_bits: u32, max_iterations: u64) -> Option<(PathBuf, u64)> {
    let digest = orbit_digest(spec, prec_bits);
    let prefix = format!("orbit-{}-", &digest[..16]);
    fs::read_dir(dir)
        .ok()?
        .filter_map(|e| e.ok())
        .filter_map(|e| {
            let name = e.file_name().into_string().ok()?;
            let n: u64 = name.strip_prefix(&prefix)?.strip_suffix(".sgo")?.parse().ok()?;
            (n <= max_iterations).then(|| (e.path(), n))
        })
        .max_by_key(|&(_, n)| n)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::orbit::iterate_critical;

    fn spec() -> MapSpec {
        MapSpec::fmb(1, Complex64::new(1.0, 3.0), ":1".parse().unwrap()).unwrap()
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let orbit = iterate_critical(&spec(), 1000, 160).unwrap();
        let path = dir.path().join(cache_file_name(orbit.spec(), 160, 1000));
        save_orbit_chunked(&path, &orbit, 64).unwrap();
        let back = load_orbit(&path, Some((&spec(), 160))).unwrap();
        assert_eq!(back.iterations(), 1000);
        assert!(orbit.values().iter().zip(back.values()).all(|(a, b)| a.re.to_bits() == b.re.to_bits()
            && a.im.to_bits() == b.im.to_bits()));
        assert_eq!(back.angle_turns(), orbit.angle_turns());
        assert_eq!(back.checkpoint(), orbit.checkpoint());
    }

    #[test]
    fn resume_from_cache_matches_direct_run() {
        let dir = tempfile::tempdir().unwrap();
        let short = iterate_critical(&spec(), 300, 160).unwrap();
        let path = dir.path().join(cache_file_name(short.spec(), 160, 300));
        save_orbit(&path, &short).unwrap();
        let (found, n) = find_cached(dir.path(), &spec(), 160, 800).unwrap();
        assert_eq!((found.as_path(), n), (path.as_path(), 300));
        let mut resumed = load_orbit(&found, None).unwrap();
        resumed.extend_to(800).unwrap();
        let direct = iterate_critical(&spec(), 800, 160).unwrap();
        assert_eq!(resumed.values(), direct.values());
        assert_eq!(resumed.checkpoint(), direct.checkpoint());
        assert!(find_cached(dir.path(), &spec(), 192, 800).is_none());
    }

    #[test]
    fn mismatched_digest_fails_loudly() {
        let dir = tempfile::tempdir().unwrap();
        let orbit = iterate_critical(&spec(), 50, 128).unwrap();
        let path = dir.path().join("o.sgo");
        save_orbit(&path, &orbit).unwrap();
        let other = MapSpec::quadratic(":1".parse().unwrap());
        assert!(matches!(load_orbit(&path, Some((&other, 128))), Err(Error::CacheMismatch(_))));
        assert!(matches!(load_orbit(&path, Some((&spec(), 256))), Err(Error::CacheMismatch(_))));

        // Tampered header: digest no longer matches the stated precision.
        let text = fs::read(&path).unwrap();
        let tampered = String::from_utf8_lossy(&text).replacen("prec 128", "prec 129", 1);
        let bad_path = dir.path().join("t.sgo");
        fs::write(&bad_path, tampered.as_bytes()).unwrap();
        assert!(load_orbit(&bad_path, None).is_err());
    }

    #[test]
    fn truncated_files_are_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let orbit = iterate_critical(&spec(), 200, 128).unwrap();
        let path = dir.path().join("o.sgo");
        save_orbit_chunked(&path, &orbit, 50).unwrap();
        let bytes = fs::read(&path).unwrap();
        for cut in [10, bytes.len() / 2, bytes.len() - 3] {
            let p = dir.path().join(format!("cut{cut}.sgo"));
            fs::write(&p, &bytes[..cut]).unwrap();
            assert!(matches!(load_orbit(&p, None), Err(Error::Format(_))), "cut {cut}");
        }
        let h = read_cache_header(&path).unwrap();
        assert_eq!((h.iterations, h.chunk, h.prec_bits), (200, 50, 128));
    }
}
