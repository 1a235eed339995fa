//! Compact binary trace format for nearest-neighbor paths.
//!
//! Layout (little endian): the magic `b"ILTRACE"`, a version byte, a `u64`
//! segment count, then per segment its `i64` clock, `i32` start coordinates,
//! a `u64` step count and the steps packed four to a byte as 2-bit indices
//! into [`STEPS`](crate::lattice::STEPS).

use std::io::{Read, Write};

use crate::error::{Error, Result};
use crate::lattice::{Site, STEPS};

use super::PathSegment;

const MAGIC: &[u8; 7] = b"ILTRACE";
pub const VERSION: u8 = 1;

fn step_index(from: Site, to: Site) -> Option<u8> {
    let d = (to.x - from.x, to.y - from.y);
    STEPS.iter().position(|&s| s == d).map(|k| k as u8)
}

pub fn write_trace(mut w: impl Write, segments: &[PathSegment]) -> Result<()> {
    w.write_all(MAGIC)?;
    w.write_all(&[VERSION])?;
    w.write_all(&(segments.len() as u64).to_le_bytes())?;
    for seg in segments {
        let start = seg
            .first()
            .ok_or_else(|| Error::invalid("segment", "empty path segment"))?;
        w.write_all(&seg.clock.to_le_bytes())?;
        w.write_all(&start.x.to_le_bytes())?;
        w.write_all(&start.y.to_le_bytes())?;
        let steps = seg.len() - 1;
        w.write_all(&(steps as u64).to_le_bytes())?;
        let mut packed = vec![0u8; steps.div_ceil(4)];
        for (i, pair) in seg.sites.windows(2).enumerate() {
            let k = step_index(pair[0], pair[1])
                .ok_or_else(|| Error::invalid("segment", format!("{} -> {} is not a lattice step", pair[0], pair[1])))?;
            packed[i / 4] |= k << (2 * (i % 4));
        }
        w.write_all(&packed)?;
    }
    Ok(())
}

fn read_array<const N: usize>(r: &mut impl Read) -> Result<[u8; N]> {
    let mut buf = [0u8; N];
    r.read_exact(&mut buf)?;
    Ok(buf)
}

pub fn read_trace(mut r: impl Read) -> Result<Vec<PathSegment>> {
    let magic: [u8; 7] = read_array(&mut r)?;
    if &magic != MAGIC {
        return Err(Error::Cache("not a trace file".into()));
    }
    let [version] = read_array::<1>(&mut r)?;
    if version != VERSION {
        return Err(Error::Cache(format!("unsupported trace version {version}")));
    }
    let count = u64::from_le_bytes(read_array(&mut r)?);
    let mut out = Vec::new();
    for _ in 0..count {
        let clock = i64::from_le_bytes(read_array(&mut r)?);
        let x = i32::from_le_bytes(read_array(&mut r)?);
        let y = i32::from_le_bytes(read_array(&mut r)?);
        let steps = u64::from_le_bytes(read_array(&mut r)?) as usize;
        let mut packed = vec![0u8; steps.div_ceil(4)];
        r.read_exact(&mut packed)?;
        let mut sites = Vec::with_capacity(steps + 1);
        let mut cur = Site::new(x, y);
        sites.push(cur);
        for i in 0..steps {
            let k = (packed[i / 4] >> (2 * (i % 4))) & 3;
            cur = cur.step(k as usize);
            sites.push(cur);
        }
        out.push(PathSegment::new(sites, clock));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    proptest! {
        #[test]
        fn round_trip(
            segs in prop::collection::vec(
                (any::<i32>(), -1000i32..1000, -1000i32..1000, prop::collection::vec(0usize..4, 0..200)),
                0..5,
            )
        ) {
            let segments: Vec<PathSegment> = segs
                .into_iter()
                .map(|(clock, x, y, dirs)| {
                    let mut cur = Site::new(x, y);
                    let mut sites = vec![cur];
                    for d in dirs {
                        cur = cur.step(d);
                        sites.push(cur);
                    }
                    PathSegment::new(sites, clock as i64)
                })
                .collect();
            let mut buf = Vec::new();
            write_trace(&mut buf, &segments).unwrap();
            let back = read_trace(buf.as_slice()).unwrap();
            prop_assert_eq!(back, segments);
        }
    }

    #[test]
    fn rejects_jumps_and_bad_headers() {
        let seg = PathSegment::new(vec![Site::new(0, 0), Site::new(2, 0)], 0);
        assert!(write_trace(Vec::new(), &[seg]).is_err());
        assert!(read_trace(&b"NOTATRACE"[..]).is_err());
        let mut buf = Vec::new();
        write_trace(&mut buf, &[]).unwrap();
        buf[7] = 99;
        assert!(read_trace(buf.as_slice()).is_err());
    }
}
