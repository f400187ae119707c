//! Binary trace format.
//!
//! Little-endian layout:
//!
//! | offset | type      | field                     |
//! |--------|-----------|---------------------------|
//! | 0      | `[u8; 4]` | magic `SQTR`              |
//! | 4      | `u32`     | format version (1)        |
//! | 8      | `f64`     | sample interval, ns       |
//! | 16     | `f64`     | time of sample 0, s       |
//! | 24     | `u64`     | samples per channel       |
//! | 32     | `f64`     | readout gain              |
//! | 40     | `f32 * n` | current channel           |
//! | 40+4n  | `f32 * n` | voltage channel           |

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};

use super::{ChannelPair, SampleClock};
use crate::error::{Error, Result};

pub const TRACE_MAGIC: [u8; 4] = *b"SQTR";
pub const TRACE_VERSION: u32 = 1;

pub fn write_trace<W: Write>(mut w: W, pair: &ChannelPair, gain: f64) -> Result<()> {
    w.write_all(&TRACE_MAGIC)?;
    w.write_u32::<LittleEndian>(TRACE_VERSION)?;
    w.write_f64::<LittleEndian>(pair.clock.dt_ns)?;
    w.write_f64::<LittleEndian>(pair.clock.t0_s)?;
    w.write_u64::<LittleEndian>(pair.len() as u64)?;
    w.write_f64::<LittleEndian>(gain)?;
    for channel in [&pair.current, &pair.voltage] {
        let mut bytes = Vec::with_capacity(channel.len() * 4);
        for &x in channel.iter() {
            bytes.extend_from_slice(&x.to_le_bytes());
        }
        w.write_all(&bytes)?;
    }
    Ok(())
}

/// Reads a trace, returning the channels and the recorded readout gain.
pub fn read_trace<R: Read>(mut r: R) -> Result<(ChannelPair, f64)> {
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if magic != TRACE_MAGIC {
        return Err(Error::Format(format!("bad magic {magic:?}")));
    }
    let version = r.read_u32::<LittleEndian>()?;
    if version != TRACE_VERSION {
        return Err(Error::Format(format!("unsupported version {version}")));
    }
    let dt_ns = r.read_f64::<LittleEndian>()?;
    let t0_s = r.read_f64::<LittleEndian>()?;
    let len = r.read_u64::<LittleEndian>()?;
    let gain = r.read_f64::<LittleEndian>()?;
    let len = usize::try_from(len).map_err(|_| Error::Format("length overflow".into()))?;
    let read_channel = |r: &mut R| -> Result<Vec<f32>> {
        let mut bytes = vec![0u8; len.checked_mul(4).ok_or_else(|| Error::Format("length overflow".into()))?];
        r.read_exact(&mut bytes)?;
        Ok(bytes
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect())
    };
    let current = read_channel(&mut r)?;
    let voltage = read_channel(&mut r)?;
    let pair = ChannelPair::new(SampleClock { dt_ns, t0_s }, current, voltage)?;
    Ok((pair, gain))
}

pub fn write_trace_file(path: &Path, pair: &ChannelPair, gain: f64) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    write_trace(&mut w, pair, gain)?;
    w.flush()?;
    Ok(())
}

pub fn read_trace_file(path: &Path) -> Result<(ChannelPair, f64)> {
    read_trace(BufReader::new(File::open(path)?))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    proptest! {
        #[test]
        fn round_trip_is_bit_identical(
            samples in proptest::collection::vec((-10.0f32..10.0, -1.0f32..1.0), 0..200),
            dt in 0.1f64..100.0,
            t0 in -1.0f64..1.0,
        ) {
            let (current, voltage): (Vec<f32>, Vec<f32>) = samples.into_iter().unzip();
            let pair = ChannelPair::new(SampleClock { dt_ns: dt, t0_s: t0 }, current, voltage).unwrap();
            let mut buf = Vec::new();
            write_trace(&mut buf, &pair, 1e4).unwrap();
            prop_assert_eq!(buf.len(), 40 + 8 * pair.len());
            let (back, gain) = read_trace(&buf[..]).unwrap();
            prop_assert_eq!(gain, 1e4);
            prop_assert_eq!(back, pair);
        }
    }

    #[test]
    fn header_layout_is_fixed() {
        let pair = ChannelPair::new(SampleClock { dt_ns: 4.0, t0_s: -1e-3 }, vec![1.0], vec![-2.0]).unwrap();
        let mut buf = Vec::new();
        write_trace(&mut buf, &pair, 1e4).unwrap();
        assert_eq!(&buf[0..4], b"SQTR");
        assert_eq!(u32::from_le_bytes(buf[4..8].try_into().unwrap()), 1);
        assert_eq!(f64::from_le_bytes(buf[8..16].try_into().unwrap()), 4.0);
        assert_eq!(u64::from_le_bytes(buf[24..32].try_into().unwrap()), 1);
        assert_eq!(f32::from_le_bytes(buf[40..44].try_into().unwrap()), 1.0);
        assert_eq!(f32::from_le_bytes(buf[44..48].try_into().unwrap()), -2.0);
    }

    #[test]
    fn rejects_bad_magic() {
        let buf = vec![0u8; 64];
        assert!(matches!(read_trace(&buf[..]), Err(Error::Format(_))));
    }
}
