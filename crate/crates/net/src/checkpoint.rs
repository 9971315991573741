//! `SPKLNET1` checkpoints.
//!
//! Layout, little-endian: magic, config (u32 input_side, output_side,
//! num_flows, residue_blocks_per_flow, base_channels, kernel_size; f64
//! dropout_rate, bn_epsilon, bn_momentum; u64 seed), u64 scalar count, every
//! parameter and running statistic in graph order as f64, then a CRC32 of all
//! preceding bytes.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::error::{NetError, Result};
use crate::layers::Layer;
use crate::network::{Network, NetworkConfig};

pub const NET_MAGIC: &[u8; 8] = b"SPKLNET1";

const HEADER_LEN: usize = 8 + 6 * 4 + 3 * 8 + 8 + 8;

pub fn write_checkpoint<W: Write>(mut w: W, net: &mut Network) -> Result<()> {
    let cfg = *net.config();
    let mut values = Vec::new();
    net.visit(&mut |p| values.extend_from_slice(p.values()));

    let mut buf = Vec::with_capacity(HEADER_LEN + 8 * values.len() + 4);
    buf.extend_from_slice(NET_MAGIC);
    for d in [
        cfg.input_side,
        cfg.output_side,
        cfg.num_flows,
        cfg.residue_blocks_per_flow,
        cfg.base_channels,
        cfg.kernel_size,
    ] {
        let d = u32::try_from(d).map_err(|_| NetError::Checkpoint(format!("{d} does not fit in u32")))?;
        buf.extend_from_slice(&d.to_le_bytes());
    }
    for r in [cfg.dropout_rate, cfg.bn_epsilon, cfg.bn_momentum] {
        buf.extend_from_slice(&r.to_le_bytes());
    }
    buf.extend_from_slice(&cfg.seed.to_le_bytes());
    buf.extend_from_slice(&(values.len() as u64).to_le_bytes());
    for v in &values {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    let crc = crc32fast::hash(&buf);
    buf.extend_from_slice(&crc.to_le_bytes());
    w.write_all(&buf)?;
    Ok(())
}

pub fn read_checkpoint<R: Read>(mut r: R) -> Result<Network> {
    let mut bytes = Vec::new();
    r.read_to_end(&mut bytes)?;
    let bad = |msg: String| NetError::Checkpoint(msg);
    if bytes.len() < HEADER_LEN + 4 {
        return Err(bad(format!("{} bytes is too short", bytes.len())));
    }
    if &bytes[..8] != NET_MAGIC {
        return Err(bad("bad magic".into()));
    }
    let (body, tail) = bytes.split_at(bytes.len() - 4);
    let stored = u32::from_le_bytes(tail.try_into().expect("four bytes"));
    if crc32fast::hash(body) != stored {
        return Err(bad("CRC mismatch".into()));
    }

    let word = |i: usize| u32::from_le_bytes(body[8 + 4 * i..12 + 4 * i].try_into().expect("four bytes")) as usize;
    let at = |off: usize| <[u8; 8]>::try_from(&body[off..off + 8]).expect("eight bytes");
    let reals = 8 + 6 * 4;
    let cfg = NetworkConfig {
        input_side: word(0),
        output_side: word(1),
        num_flows: word(2),
        residue_blocks_per_flow: word(3),
        base_channels: word(4),
        kernel_size: word(5),
        dropout_rate: f64::from_le_bytes(at(reals)),
        bn_epsilon: f64::from_le_bytes(at(reals + 8)),
        bn_momentum: f64::from_le_bytes(at(reals + 16)),
        seed: u64::from_le_bytes(at(reals + 24)),
    };
    let count = u64::from_le_bytes(at(reals + 32));
    let payload = &body[HEADER_LEN..];
    if count.checked_mul(8) != Some(payload.len() as u64) {
        return Err(bad(format!("{count} scalars declared, {} payload bytes", payload.len())));
    }

    let mut net = Network::new(cfg).map_err(|e| bad(format!("stored config: {e}")))?;
    let mut expected = 0;
    net.visit(&mut |p| expected += p.len());
    if expected as u64 != count {
        return Err(bad(format!("config implies {expected} scalars, file holds {count}")));
    }
    let mut chunks = payload.chunks_exact(8);
    net.visit(&mut |p| {
        for v in p.values_mut() {
            *v = f64::from_le_bytes(chunks.next().expect("count checked").try_into().expect("eight bytes"));
        }
    });
    Ok(net)
}

pub fn save_checkpoint(path: impl AsRef<Path>, net: &mut Network) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    write_checkpoint(&mut w, net)?;
    w.flush()?;
    Ok(())
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<Network> {
    read_checkpoint(BufReader::new(File::open(path)?))
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array2;

    fn small() -> NetworkConfig {
        NetworkConfig {
            input_side: 8,
            output_side: 4,
            base_channels: 3,
            seed: 9,
            ..Default::default()
        }
    }

    #[test]
    fn roundtrip_preserves_inference() {
        let mut net = Network::new(small()).unwrap();
        // perturb every scalar so a fresh build from the seed would differ
        net.visit(&mut |p| p.values_mut().iter_mut().for_each(|v| *v += 0.01));
        let mut buf = Vec::new();
        write_checkpoint(&mut buf, &mut net).unwrap();
        let mut back = read_checkpoint(&buf[..]).unwrap();
        assert_eq!(back.config(), net.config());
        let x = Array2::from_shape_fn((8, 8), |(i, j)| (i as f64 - j as f64) * 0.1);
        assert_eq!(back.predict(&x).unwrap(), net.predict(&x).unwrap());
    }

    #[test]
    fn rejects_corruption() {
        let mut net = Network::new(small()).unwrap();
        let mut buf = Vec::new();
        write_checkpoint(&mut buf, &mut net).unwrap();
        let mut flipped = buf.clone();
        flipped[HEADER_LEN + 3] ^= 1;
        assert!(matches!(read_checkpoint(&flipped[..]), Err(NetError::Checkpoint(_))));
        assert!(read_checkpoint(&buf[..buf.len() - 1]).is_err());
        let mut magic = buf.clone();
        magic[0] = b'X';
        assert!(read_checkpoint(&magic[..]).is_err());
        assert!(read_checkpoint(&buf[..10]).is_err());
    }
}
