//! Binary file formats: media (`SPKLTM01`) and signal/speckle sets (`SPKLSET1`).
//!
//! Everything is little-endian. Readers reject a wrong magic, truncated
//! payloads and trailing bytes.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use nalgebra::DMatrix;
use num_complex::Complex64;

use crate::calibration::CalibrationSet;
use crate::error::{CoreError, Result};
use crate::medium::{SignalMode, SignalVector, TransmissionMatrix};

pub const TM_MAGIC: &[u8; 8] = b"SPKLTM01";
pub const SET_MAGIC: &[u8; 8] = b"SPKLSET1";

pub fn write_tm<W: Write>(mut w: W, a: &TransmissionMatrix) -> Result<()> {
    let mut buf = Vec::with_capacity(24 + 16 * a.n() * a.m());
    buf.extend_from_slice(TM_MAGIC);
    buf.extend_from_slice(&dim_u32(a.n())?.to_le_bytes());
    buf.extend_from_slice(&dim_u32(a.m())?.to_le_bytes());
    buf.extend_from_slice(&a.seed().to_le_bytes());
    for z in a.entries().iter() {
        buf.extend_from_slice(&z.re.to_le_bytes());
        buf.extend_from_slice(&z.im.to_le_bytes());
    }
    w.write_all(&buf)?;
    Ok(())
}

pub fn read_tm<R: Read>(mut r: R) -> Result<TransmissionMatrix> {
    let mut bytes = Vec::new();
    r.read_to_end(&mut bytes)?;
    let mut c = Cursor::new(&bytes);
    c.magic(TM_MAGIC)?;
    let n = c.u32()? as usize;
    let m = c.u32()? as usize;
    let seed = c.u64()?;
    let count = n
        .checked_mul(m)
        .filter(|k| k.checked_mul(16).is_some_and(|b| b <= c.remaining()))
        .ok_or_else(|| CoreError::Format(format!("payload too short for a {n}x{m} medium")))?;
    let mut data = Vec::with_capacity(count);
    for _ in 0..count {
        let re = c.f64()?;
        let im = c.f64()?;
        data.push(Complex64::new(re, im));
    }
    c.finish()?;
    TransmissionMatrix::new(DMatrix::from_vec(n, m, data), seed)
}

pub fn save_tm(path: impl AsRef<Path>, a: &TransmissionMatrix) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    write_tm(&mut w, a)?;
    w.flush()?;
    Ok(())
}

pub fn load_tm(path: impl AsRef<Path>) -> Result<TransmissionMatrix> {
    read_tm(BufReader::new(File::open(path)?))
}

fn mode_code(mode: SignalMode) -> u8 {
    match mode {
        SignalMode::AmplitudeSlm => 0,
        SignalMode::PhaseSlm => 1,
        SignalMode::FreeReal => 2,
        SignalMode::FreeComplex => 3,
    }
}

fn mode_from_code(code: u8) -> Result<SignalMode> {
    Ok(match code {
        0 => SignalMode::AmplitudeSlm,
        1 => SignalMode::PhaseSlm,
        2 => SignalMode::FreeReal,
        3 => SignalMode::FreeComplex,
        other => return Err(CoreError::Format(format!("unknown signal mode {other}"))),
    })
}

pub fn write_set<W: Write>(mut w: W, set: &CalibrationSet) -> Result<()> {
    let (k, n, m) = (set.k(), set.n(), set.m());
    let complex = set.mode() == SignalMode::FreeComplex;
    let width = if complex { 2 * n } else { n };
    let mut buf = Vec::with_capacity(22 + 8 * k * (width + m));
    buf.extend_from_slice(SET_MAGIC);
    for d in [k, n, m] {
        buf.extend_from_slice(&dim_u32(d)?.to_le_bytes());
    }
    buf.push(mode_code(set.mode()));
    buf.push(complex as u8);
    for i in 0..k {
        for z in set.signals().column(i).iter() {
            buf.extend_from_slice(&z.re.to_le_bytes());
            if complex {
                buf.extend_from_slice(&z.im.to_le_bytes());
            }
        }
        for v in set.intensities().column(i).iter() {
            buf.extend_from_slice(&v.to_le_bytes());
        }
    }
    w.write_all(&buf)?;
    Ok(())
}

pub fn read_set<R: Read>(mut r: R) -> Result<CalibrationSet> {
    let mut bytes = Vec::new();
    r.read_to_end(&mut bytes)?;
    let mut c = Cursor::new(&bytes);
    c.magic(SET_MAGIC)?;
    let k = c.u32()? as usize;
    let n = c.u32()? as usize;
    let m = c.u32()? as usize;
    let mode = mode_from_code(c.u8()?)?;
    let complex = match c.u8()? {
        0 => false,
        1 => true,
        other => return Err(CoreError::Format(format!("bad complex flag {other}"))),
    };
    let width = if complex { 2 * n } else { n };
    let needed = k
        .checked_mul(width + m)
        .and_then(|v| v.checked_mul(8))
        .ok_or_else(|| CoreError::Format("record count overflows".into()))?;
    if needed > c.remaining() {
        return Err(CoreError::Format(format!(
            "payload holds {} bytes, {k} records need {needed}",
            c.remaining()
        )));
    }
    let mut signals = DMatrix::<Complex64>::zeros(n, k);
    let mut intensities = DMatrix::<f64>::zeros(m, k);
    for i in 0..k {
        for row in 0..n {
            let re = c.f64()?;
            let im = if complex { c.f64()? } else { 0.0 };
            signals[(row, i)] = Complex64::new(re, im);
        }
        for row in 0..m {
            intensities[(row, i)] = c.f64()?;
        }
        SignalVector::new(signals.column(i).into_owned(), mode)
            .map_err(|e| CoreError::Format(format!("record {i}: {e}")))?;
    }
    c.finish()?;
    CalibrationSet::new(signals, intensities, mode)
}

pub fn save_set(path: impl AsRef<Path>, set: &CalibrationSet) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    write_set(&mut w, set)?;
    w.flush()?;
    Ok(())
}

pub fn load_set(path: impl AsRef<Path>) -> Result<CalibrationSet> {
    read_set(BufReader::new(File::open(path)?))
}

fn dim_u32(d: usize) -> Result<u32> {
    u32::try_from(d).map_err(|_| CoreError::Format(format!("dimension {d} does not fit in u32")))
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn new(bytes: &'a [u8]) -> Self {
        Self { bytes, pos: 0 }
    }

    fn remaining(&self) -> usize {
        self.bytes.len() - self.pos
    }

    fn take<const N: usize>(&mut self) -> Result<[u8; N]> {
        if self.remaining() < N {
            return Err(CoreError::Format(format!("truncated at byte {}", self.pos)));
        }
        let mut out = [0u8; N];
        out.copy_from_slice(&self.bytes[self.pos..self.pos + N]);
        self.pos += N;
        Ok(out)
    }

    fn magic(&mut self, expected: &[u8; 8]) -> Result<()> {
        let got = self.take::<8>().map_err(|_| CoreError::Format("missing magic".into()))?;
        if &got != expected {
            return Err(CoreError::Format(format!(
                "bad magic {:?}, expected {:?}",
                String::from_utf8_lossy(&got),
                String::from_utf8_lossy(expected)
            )));
        }
        Ok(())
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take::<1>()?[0])
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take()?))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take()?))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take()?))
    }

    fn finish(&self) -> Result<()> {
        if self.remaining() != 0 {
            return Err(CoreError::Format(format!("{} trailing bytes", self.remaining())));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::calibration::CalibrationSignals;
    use crate::medium::{gen_transmission_matrix, SlmMode};
    use proptest::prelude::*;

    #[test]
    fn tm_header_layout() {
        let a = gen_transmission_matrix(2, 3, 77).unwrap();
        let mut buf = Vec::new();
        write_tm(&mut buf, &a).unwrap();
        assert_eq!(buf.len(), 24 + 16 * 6);
        assert_eq!(&buf[..8], b"SPKLTM01");
        assert_eq!(&buf[8..12], &2u32.to_le_bytes());
        assert_eq!(&buf[12..16], &3u32.to_le_bytes());
        assert_eq!(&buf[16..24], &77u64.to_le_bytes());
        // column-major: entry (1, 0) follows (0, 0)
        assert_eq!(&buf[40..48], &a.entries()[(1, 0)].re.to_le_bytes());
    }

    #[test]
    fn rejects_corrupt_media() {
        let a = gen_transmission_matrix(3, 4, 1).unwrap();
        let mut buf = Vec::new();
        write_tm(&mut buf, &a).unwrap();
        let mut bad = buf.clone();
        bad[0] = b'X';
        assert!(matches!(read_tm(&bad[..]), Err(CoreError::Format(_))));
        assert!(matches!(read_tm(&buf[..buf.len() - 1]), Err(CoreError::Format(_))));
        assert!(matches!(read_tm(&buf[..5]), Err(CoreError::Format(_))));
        let mut long = buf.clone();
        long.push(0);
        assert!(read_tm(&long[..]).is_err());
    }

    #[test]
    fn set_roundtrip_all_modes() {
        let a = gen_transmission_matrix(4, 6, 2).unwrap();
        for kind in [
            CalibrationSignals::Gaussian,
            CalibrationSignals::Binary(SlmMode::Amplitude),
            CalibrationSignals::Binary(SlmMode::Phase),
        ] {
            let set = CalibrationSet::generate(&a, 5, kind, 3).unwrap();
            let mut buf = Vec::new();
            write_set(&mut buf, &set).unwrap();
            let back = read_set(&buf[..]).unwrap();
            assert_eq!(back, set);
            assert!(read_set(&buf[..buf.len() - 3]).is_err());
        }
    }

    #[test]
    fn set_reader_checks_alphabet() {
        let a = gen_transmission_matrix(4, 6, 2).unwrap();
        let set = CalibrationSet::generate(&a, 2, CalibrationSignals::Binary(SlmMode::Amplitude), 3).unwrap();
        let mut buf = Vec::new();
        write_set(&mut buf, &set).unwrap();
        // first signal value becomes 0.5
        buf[22..30].copy_from_slice(&0.5f64.to_le_bytes());
        assert!(read_set(&buf[..]).is_err());
        buf[20] = 9;
        assert!(read_set(&buf[..]).is_err());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(48))]
        #[test]
        fn tm_roundtrip(n in 1usize..6, m in 1usize..6, seed in any::<u64>()) {
            let a = gen_transmission_matrix(n, m, seed).unwrap();
            let mut buf = Vec::new();
            write_tm(&mut buf, &a).unwrap();
            let back = read_tm(&buf[..]).unwrap();
            prop_assert_eq!(back, a);
        }

        #[test]
        fn set_roundtrip(k in 1usize..5, n in 1usize..5, m in 1usize..5, seed in any::<u64>()) {
            let a = gen_transmission_matrix(n, m, seed).unwrap();
            let set = CalibrationSet::generate(&a, k, CalibrationSignals::Gaussian, seed ^ 1).unwrap();
            let mut buf = Vec::new();
            write_set(&mut buf, &set).unwrap();
            prop_assert_eq!(read_set(&buf[..]).unwrap(), set);
        }
    }
}
