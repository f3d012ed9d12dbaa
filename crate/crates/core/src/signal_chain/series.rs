use std::io::{Read, Write};

use crate::error::{NvError, Result};

pub const NVTS_MAGIC: &[u8; 4] = b"NVTS";
pub const NVTS_VERSION: u16 = 1;

/// Synchronized ADC codes of the fluorescence (A) and reference (B) channels.
#[derive(Debug, Clone, PartialEq)]
pub struct DualTimeSeries {
    pub sample_rate: f64,
    pub bits: u8,
    /// ADC full scale, volts. Not part of the binary header.
    pub full_scale: f64,
    pub t0: f64,
    pub seed_used: u64,
    pub config_digest: String,
    /// Samples clamped at either end of the ADC range.
    pub clamped_a: u64,
    pub clamped_b: u64,
    pub codes_a: Vec<u16>,
    pub codes_b: Vec<u16>,
}

impl DualTimeSeries {
    pub fn len(&self) -> usize {
        self.codes_a.len()
    }

    pub fn is_empty(&self) -> bool {
        self.codes_a.is_empty()
    }

    pub fn duration(&self) -> f64 {
        self.len() as f64 / self.sample_rate
    }

    pub fn saturated(&self) -> bool {
        self.clamped_a > 0 || self.clamped_b > 0
    }

    pub fn lsb(&self) -> f64 {
        self.full_scale / f64::from(1u32 << self.bits)
    }

    #[inline]
    pub fn to_volts(&self, code: u16) -> f64 {
        (f64::from(code) + 0.5) * self.lsb()
    }

    pub fn volts_a(&self) -> Vec<f64> {
        self.codes_a.iter().map(|&c| self.to_volts(c)).collect()
    }

    pub fn volts_b(&self) -> Vec<f64> {
        self.codes_b.iter().map(|&c| self.to_volts(c)).collect()
    }

    pub fn check(&self) -> Result<()> {
        if self.codes_a.len() != self.codes_b.len() {
            return Err(NvError::invalid("channel lengths differ"));
        }
        let max = (1u32 << self.bits) - 1;
        if self
            .codes_a
            .iter()
            .chain(&self.codes_b)
            .any(|&c| u32::from(c) > max)
        {
            return Err(NvError::invalid("code outside the ADC range"));
        }
        Ok(())
    }
}

/// Little-endian binary layout:
///
/// ```text
/// "NVTS" | version u16 | bits u8 | sample_rate f64 | length u64 | seed u64
/// codes_a [u16; length] | codes_b [u16; length]
/// ```
pub fn write_nvts<W: Write>(ts: &DualTimeSeries, mut w: W) -> Result<()> {
    ts.check()?;
    w.write_all(NVTS_MAGIC)?;
    w.write_all(&NVTS_VERSION.to_le_bytes())?;
    w.write_all(&[ts.bits])?;
    w.write_all(&ts.sample_rate.to_le_bytes())?;
    w.write_all(&(ts.len() as u64).to_le_bytes())?;
    w.write_all(&ts.seed_used.to_le_bytes())?;
    let mut buf = Vec::with_capacity(2 * ts.len());
    for channel in [&ts.codes_a, &ts.codes_b] {
        buf.clear();
        for c in channel.iter() {
            buf.extend_from_slice(&c.to_le_bytes());
        }
        w.write_all(&buf)?;
    }
    Ok(())
}

/// Reads the binary layout written by [`write_nvts`]. The header carries no
/// full-scale voltage, so the caller supplies it.
pub fn read_nvts<R: Read>(mut r: R, full_scale: f64) -> Result<DualTimeSeries> {
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if &magic != NVTS_MAGIC {
        return Err(NvError::invalid("not an NVTS stream (bad magic)"));
    }
    let mut b2 = [0u8; 2];
    r.read_exact(&mut b2)?;
    let version = u16::from_le_bytes(b2);
    if version != NVTS_VERSION {
        return Err(NvError::invalid(format!("unsupported NVTS version {version}")));
    }
    let mut b1 = [0u8; 1];
    r.read_exact(&mut b1)?;
    let bits = b1[0];
    if !(2..=16).contains(&bits) {
        return Err(NvError::invalid(format!("unsupported bit width {bits}")));
    }
    let mut b8 = [0u8; 8];
    r.read_exact(&mut b8)?;
    let sample_rate = f64::from_le_bytes(b8);
    r.read_exact(&mut b8)?;
    let len = usize::try_from(u64::from_le_bytes(b8))
        .map_err(|_| NvError::invalid("length does not fit in memory"))?;
    r.read_exact(&mut b8)?;
    let seed = u64::from_le_bytes(b8);

    let read_channel = |r: &mut R| -> Result<Vec<u16>> {
        let mut raw = vec![0u8; len.checked_mul(2).ok_or_else(|| NvError::invalid("length overflow"))?];
        r.read_exact(&mut raw)?;
        Ok(raw.chunks_exact(2).map(|c| u16::from_le_bytes([c[0], c[1]])).collect())
    };
    let codes_a = read_channel(&mut r)?;
    let codes_b = read_channel(&mut r)?;
    let ts = DualTimeSeries {
        sample_rate,
        bits,
        full_scale,
        t0: 0.0,
        seed_used: seed,
        config_digest: String::new(),
        clamped_a: 0,
        clamped_b: 0,
        codes_a,
        codes_b,
    };
    ts.check()?;
    Ok(ts)
}

/// CSV export with columns `t,code_a,code_b`.
pub fn write_csv<W: Write>(ts: &DualTimeSeries, mut w: W) -> Result<()> {
    writeln!(w, "t,code_a,code_b")?;
    for (i, (a, b)) in ts.codes_a.iter().zip(&ts.codes_b).enumerate() {
        let t = ts.t0 + i as f64 / ts.sample_rate;
        writeln!(w, "{t:.9e},{a},{b}")?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn series(a: Vec<u16>, b: Vec<u16>) -> DualTimeSeries {
        DualTimeSeries {
            sample_rate: 1e6,
            bits: 14,
            full_scale: 2.0,
            t0: 0.0,
            seed_used: 0xDEAD_BEEF,
            config_digest: String::new(),
            clamped_a: 0,
            clamped_b: 0,
            codes_a: a,
            codes_b: b,
        }
    }

    #[test]
    fn header_layout() {
        let ts = series(vec![1, 2], vec![3, 0x3FFF]);
        let mut buf = Vec::new();
        write_nvts(&ts, &mut buf).unwrap();
        assert_eq!(&buf[..4], b"NVTS");
        assert_eq!(&buf[4..6], &[1, 0]);
        assert_eq!(buf[6], 14);
        assert_eq!(&buf[7..15], &1e6f64.to_le_bytes());
        assert_eq!(&buf[15..23], &2u64.to_le_bytes());
        assert_eq!(&buf[23..31], &0xDEAD_BEEFu64.to_le_bytes());
        assert_eq!(&buf[31..], &[1, 0, 2, 0, 3, 0, 0xFF, 0x3F]);
        assert_eq!(buf.len(), 31 + 8);
    }

    #[test]
    fn rejects_garbage() {
        assert!(read_nvts(&b"NVTX\x01\x00"[..], 2.0).is_err());
        let ts = series(vec![1, 2], vec![3, 4]);
        let mut buf = Vec::new();
        write_nvts(&ts, &mut buf).unwrap();
        buf.truncate(buf.len() - 1);
        assert!(matches!(read_nvts(&buf[..], 2.0), Err(NvError::Io(_))));
        assert!(write_nvts(&series(vec![1], vec![]), Vec::new()).is_err());
    }

    #[test]
    fn csv_rows() {
        let ts = series(vec![5, 6], vec![7, 8]);
        let mut buf = Vec::new();
        write_csv(&ts, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text, "t,code_a,code_b\n0.000000000e0,5,7\n1.000000000e-6,6,8\n");
    }

    proptest! {
        #[test]
        fn binary_round_trip(a in prop::collection::vec(0u16..16384, 0..200), seed: u64) {
            let b: Vec<u16> = a.iter().rev().cloned().collect();
            let mut ts = series(a, b);
            ts.seed_used = seed;
            let mut buf = Vec::new();
            write_nvts(&ts, &mut buf).unwrap();
            let back = read_nvts(&buf[..], 2.0).unwrap();
            prop_assert_eq!(back.codes_a, ts.codes_a);
            prop_assert_eq!(back.codes_b, ts.codes_b);
            prop_assert_eq!(back.seed_used, seed);
            prop_assert_eq!(back.sample_rate, ts.sample_rate);
        }
    }
}
