//! Line-oriented text snapshots of a particle pool.
//!
//! ```text
//! # cascade-lab pool snapshot
//! # manifest: <id>
//! # generation: 80
//! # seed: 42
//! # ensemble: <sha256>
//! # dimension: 2
//! # particles: 1000000
//! 1.2e0 3.4e-1
//! ```

use std::io::{BufRead, Write};

use super::ParticlePool;
use crate::error::{Error, Result};

pub const SNAPSHOT_MAGIC: &str = "# cascade-lab pool snapshot";

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SnapshotHeader {
    pub manifest: String,
    pub generation: usize,
    pub seed: u64,
    pub ensemble_hash: String,
    pub dimension: usize,
    pub particles: usize,
}

pub fn write_snapshot<W: Write>(pool: &ParticlePool, manifest: &str, mut w: W) -> Result<()> {
    writeln!(w, "{SNAPSHOT_MAGIC}")?;
    writeln!(w, "# manifest: {manifest}")?;
    writeln!(w, "# generation: {}", pool.generation)?;
    writeln!(w, "# seed: {}", pool.seed)?;
    writeln!(w, "# ensemble: {}", pool.ensemble_hash)?;
    writeln!(w, "# dimension: {}", pool.dim())?;
    writeln!(w, "# particles: {}", pool.len())?;
    let mut line = String::new();
    for z in pool.iter() {
        line.clear();
        for (i, x) in z.iter().enumerate() {
            if i > 0 {
                line.push(' ');
            }
            // LowerExp without precision is the shortest round-trip form
            line.push_str(&format!("{x:e}"));
        }
        writeln!(w, "{line}")?;
    }
    w.flush()?;
    Ok(())
}

fn header_field<'a>(line: Option<std::io::Result<String>>, key: &str, buf: &'a mut String) -> Result<&'a str> {
    let line = line.ok_or_else(|| Error::MalformedSnapshot(format!("missing header `{key}`")))??;
    let prefix = format!("# {key}: ");
    let value = line
        .strip_prefix(&prefix)
        .ok_or_else(|| Error::MalformedSnapshot(format!("expected header `{key}`, found `{line}`")))?;
    *buf = value.trim().to_owned();
    Ok(buf.as_str())
}

fn parse<T: std::str::FromStr>(value: &str, key: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::MalformedSnapshot(format!("bad value `{value}` for `{key}`")))
}

pub fn read_snapshot<R: BufRead>(r: R) -> Result<(SnapshotHeader, ParticlePool)> {
    let mut lines = r.lines();
    match lines.next() {
        Some(Ok(l)) if l == SNAPSHOT_MAGIC => {}
        _ => return Err(Error::MalformedSnapshot("missing snapshot magic line".into())),
    }
    let mut buf = String::new();
    let manifest = header_field(lines.next(), "manifest", &mut buf)?.to_owned();
    let generation = parse(header_field(lines.next(), "generation", &mut buf)?, "generation")?;
    let seed = parse(header_field(lines.next(), "seed", &mut buf)?, "seed")?;
    let ensemble_hash = header_field(lines.next(), "ensemble", &mut buf)?.to_owned();
    let dimension: usize = parse(header_field(lines.next(), "dimension", &mut buf)?, "dimension")?;
    let particles: usize = parse(header_field(lines.next(), "particles", &mut buf)?, "particles")?;
    if dimension == 0 {
        return Err(Error::MalformedSnapshot("dimension must be positive".into()));
    }
    let mut data = Vec::with_capacity(particles * dimension);
    for (n, line) in lines.enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let before = data.len();
        for tok in line.split_whitespace() {
            let x: f64 = parse(tok, "coordinate")?;
            if !(x >= 0.0 && x.is_finite()) {
                return Err(Error::MalformedSnapshot(format!("particle {n}: coordinate {x} outside the cone")));
            }
            data.push(x);
        }
        if data.len() - before != dimension {
            return Err(Error::MalformedSnapshot(format!(
                "particle {n}: expected {dimension} coordinates, found {}",
                data.len() - before
            )));
        }
    }
    if data.len() != particles * dimension {
        return Err(Error::MalformedSnapshot(format!(
            "header promises {particles} particles, found {}",
            data.len() / dimension
        )));
    }
    let header = SnapshotHeader {
        manifest,
        generation,
        seed,
        ensemble_hash: ensemble_hash.clone(),
        dimension,
        particles,
    };
    Ok((header, ParticlePool::from_parts(dimension, data, generation, seed, ensemble_hash)))
}

#[cfg(test)]
mod tests {
    use super::super::tests::calibrated_oracle;
    use super::super::{fixpoint_pool, PoolOptions};
    use super::*;
    use crate::rng::StreamSeed;

    #[test]
    fn round_trip_is_exact() {
        let pool = fixpoint_pool(&calibrated_oracle(), 300, 5, StreamSeed::new(8), &PoolOptions::default()).unwrap();
        let mut buf = Vec::new();
        write_snapshot(&pool, "abc123", &mut buf).unwrap();
        let (h, back) = read_snapshot(buf.as_slice()).unwrap();
        assert_eq!(h.manifest, "abc123");
        assert_eq!(h.generation, 5);
        assert_eq!(h.seed, 8);
        assert_eq!(back.as_flat(), pool.as_flat());
    }

    #[test]
    fn truncated_snapshot_is_rejected() {
        let pool = fixpoint_pool(&calibrated_oracle(), 10, 1, StreamSeed::new(8), &PoolOptions::default()).unwrap();
        let mut buf = Vec::new();
        write_snapshot(&pool, "m", &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let cut: String = text.lines().take(12).map(|l| format!("{l}\n")).collect();
        assert!(matches!(read_snapshot(cut.as_bytes()), Err(Error::MalformedSnapshot(_))));
        assert!(matches!(read_snapshot("nope\n".as_bytes()), Err(Error::MalformedSnapshot(_))));
    }

    #[test]
    fn negative_coordinate_is_rejected() {
        let text = format!("{SNAPSHOT_MAGIC}\n# manifest: m\n# generation: 0\n# seed: 1\n# ensemble: h\n# dimension: 2\n# particles: 1\n1e0 -1e0\n");
        assert!(matches!(read_snapshot(text.as_bytes()), Err(Error::MalformedSnapshot(_))));
    }
}
