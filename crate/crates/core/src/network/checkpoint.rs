//! Little-endian binary checkpoints.
//!
//! ```text
//! magic      "WCNN"
//! version    u32
//! spec       C, H, W, levels, base_channels, stages, stage widths...,
//!            fc_hidden, num_classes (u32 each); subband mode (u8);
//!            wavelet name (u32 length + UTF-8)
//! count      u32
//! records    count × { name length u32, name, ndim u32, dims u32..., f32 data }
//! crc32      u32 over every preceding byte
//! ```

use std::fs;
use std::path::Path;

use super::{Network, NetworkSpec, SubbandMode};
use crate::error::{Error, Result};
use crate::kernels::RunningStats;
use crate::tensor::Tensor;
use crate::wavelet::WaveletFilterPair;

pub const MAGIC: &[u8; 4] = b"WCNN";
pub const FORMAT_VERSION: u32 = 1;

const RUNNING_MEAN: &str = ".bn.running_mean";
const RUNNING_VAR: &str = ".bn.running_var";
const WAVELET_LOW: &str = "wavelet.low";
const WAVELET_HIGH: &str = "wavelet.high";

struct Writer(Vec<u8>);

impl Writer {
    fn u32(&mut self, v: usize) {
        self.0.extend_from_slice(&(v as u32).to_le_bytes());
    }

    fn str(&mut self, s: &str) {
        self.u32(s.len());
        self.0.extend_from_slice(s.as_bytes());
    }

    fn record(&mut self, name: &str, shape: &[usize], data: &[f32]) {
        self.str(name);
        self.u32(shape.len());
        shape.iter().for_each(|&d| self.u32(d));
        for v in data {
            self.0.extend_from_slice(&v.to_le_bytes());
        }
    }
}

pub fn encode(net: &Network) -> Vec<u8> {
    let spec = net.spec();
    let mut w = Writer(Vec::new());
    w.0.extend_from_slice(MAGIC);
    w.u32(FORMAT_VERSION as usize);
    spec.input_shape.iter().for_each(|&d| w.u32(d));
    w.u32(spec.levels);
    w.u32(spec.base_channels);
    w.u32(spec.stages());
    spec.stage_channels.iter().for_each(|&c| w.u32(c));
    w.u32(spec.fc_hidden);
    w.u32(spec.num_classes);
    w.0.push(match spec.subband_mode {
        SubbandMode::All => 0,
        SubbandMode::DetailOnly => 1,
    });
    w.str(net.wavelet().name());

    let stats = net.running_stats();
    w.u32(net.params().len() + 2 * stats.len() + 2);
    for (_, p) in net.params().iter() {
        w.record(&p.name, p.value.shape(), p.value.data());
    }
    for (name, s) in &stats {
        w.record(&format!("{name}{RUNNING_MEAN}"), &[s.mean.len()], &s.mean);
        w.record(&format!("{name}{RUNNING_VAR}"), &[s.var.len()], &s.var);
    }
    let pair = net.wavelet();
    w.record(WAVELET_LOW, &[pair.len()], pair.low());
    w.record(WAVELET_HIGH, &[pair.len()], pair.high());

    let crc = crc32fast::hash(&w.0);
    w.0.extend_from_slice(&crc.to_le_bytes());
    w.0
}

pub fn save(net: &Network, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, encode(net)).map_err(|e| Error::io(path, e))
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.buf.len() - self.pos < n {
            return Err(Error::Integrity(format!(
                "unexpected end of data at byte {} (wanted {n} more)",
                self.pos
            )));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<usize> {
        let b = self.take(4)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]) as usize)
    }

    fn str(&mut self) -> Result<String> {
        let n = self.u32()?;
        String::from_utf8(self.take(n)?.to_vec())
            .map_err(|_| Error::Integrity(format!("invalid UTF-8 name before byte {}", self.pos)))
    }

    fn record(&mut self) -> Result<(String, Tensor)> {
        let name = self.str()?;
        let ndim = self.u32()?;
        let shape = (0..ndim).map(|_| self.u32()).collect::<Result<Vec<_>>>()?;
        let n: usize = shape.iter().product();
        let bytes = self
            .take(n.checked_mul(4).ok_or_else(|| {
                Error::Integrity(format!("record {name} is implausibly large"))
            })?)?;
        let data = bytes
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect();
        Ok((name, Tensor::new(&shape, data)?))
    }
}

pub fn decode(bytes: &[u8]) -> Result<Network> {
    if bytes.len() < MAGIC.len() + 8 {
        return Err(Error::Integrity(format!(
            "file of {} bytes is truncated",
            bytes.len()
        )));
    }
    if &bytes[..4] != MAGIC {
        return Err(Error::Integrity("bad magic bytes".into()));
    }
    let (body, tail) = bytes.split_at(bytes.len() - 4);
    let stored = u32::from_le_bytes([tail[0], tail[1], tail[2], tail[3]]);
    if crc32fast::hash(body) != stored {
        return Err(Error::Integrity(
            "CRC32 mismatch (truncated or corrupt file)".into(),
        ));
    }

    let mut r = Reader { buf: body, pos: 4 };
    let version = r.u32()? as u32;
    if version != FORMAT_VERSION {
        return Err(Error::SpecMismatch(format!(
            "checkpoint format version {version}, this build reads {FORMAT_VERSION}"
        )));
    }
    let input_shape = [r.u32()?, r.u32()?, r.u32()?];
    let levels = r.u32()?;
    let base_channels = r.u32()?;
    let stages = r.u32()?;
    let stage_channels = (0..stages).map(|_| r.u32()).collect::<Result<Vec<_>>>()?;
    let fc_hidden = r.u32()?;
    let num_classes = r.u32()?;
    let subband_mode = match r.take(1)?[0] {
        0 => SubbandMode::All,
        1 => SubbandMode::DetailOnly,
        other => {
            return Err(Error::Integrity(format!(
                "unknown subband mode tag {other}"
            )))
        }
    };
    let wavelet_name = r.str()?;
    let spec = NetworkSpec {
        input_shape,
        levels,
        base_channels,
        stage_channels,
        fc_hidden,
        num_classes,
        subband_mode,
    };

    let count = r.u32()?;
    let mut records = Vec::with_capacity(count.min(4096));
    for _ in 0..count {
        records.push(r.record()?);
    }
    if r.pos != body.len() {
        return Err(Error::Integrity(format!(
            "{} trailing bytes after the last record",
            body.len() - r.pos
        )));
    }

    let take_record = |records: &mut Vec<(String, Tensor)>, name: &str| -> Result<Tensor> {
        let i = records
            .iter()
            .position(|(n, _)| n == name)
            .ok_or_else(|| Error::SpecMismatch(format!("checkpoint lacks tensor {name}")))?;
        Ok(records.swap_remove(i).1)
    };
    let low = take_record(&mut records, WAVELET_LOW)?.into_data();
    let high = take_record(&mut records, WAVELET_HIGH)?.into_data();
    let pair = WaveletFilterPair::new(wavelet_name, low, high)?;

    let mut net = Network::build_with_pair(&spec, pair)
        .map_err(|e| Error::SpecMismatch(format!("stored spec is invalid: {e}")))?;
    let names: Vec<String> = net.params().iter().map(|(_, p)| p.name.clone()).collect();
    for name in names {
        let t = take_record(&mut records, &name)?;
        let id = net.params().find(&name).expect("name from the same store");
        let slot = &mut net.params_mut().get_mut(id).value;
        if slot.shape() != t.shape() {
            return Err(Error::SpecMismatch(format!(
                "{name} is {:?} in the checkpoint but {:?} in the network",
                t.shape(),
                slot.shape()
            )));
        }
        slot.data_mut().copy_from_slice(t.data());
    }
    for (name, _) in net.running_stats() {
        let mean = take_record(&mut records, &format!("{name}{RUNNING_MEAN}"))?.into_data();
        let var = take_record(&mut records, &format!("{name}{RUNNING_VAR}"))?.into_data();
        net.set_running_stats(&name, RunningStats { mean, var })?;
    }
    if let Some((extra, _)) = records.first() {
        return Err(Error::SpecMismatch(format!("unexpected tensor {extra}")));
    }
    Ok(net)
}

pub fn load(path: impl AsRef<Path>) -> Result<Network> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode(&bytes)
}

/// Loads a checkpoint and insists it was written for `expected`.
pub fn load_expecting(path: impl AsRef<Path>, expected: &NetworkSpec) -> Result<Network> {
    let net = load(path)?;
    if net.spec() != expected {
        return Err(Error::SpecMismatch(format!(
            "checkpoint holds {:?}, expected {:?}",
            net.spec(),
            expected
        )));
    }
    Ok(net)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample_net() -> Network {
        let spec = NetworkSpec::new([3, 16, 16], 2, 3)
            .with_base_channels(4)
            .with_stages(3);
        let mut net = Network::build(&spec).unwrap();
        for (i, p) in net.params_mut().iter_mut().enumerate() {
            for (j, v) in p.value.data_mut().iter_mut().enumerate() {
                *v = ((i * 31 + j * 7) % 17) as f32 * 0.01 - 0.08;
            }
        }
        let (name, mut s) = net.running_stats().remove(2);
        s.mean.iter_mut().for_each(|m| *m = 0.25);
        net.set_running_stats(&name, s).unwrap();
        net
    }

    #[test]
    fn roundtrip_is_bit_exact() {
        let net = sample_net();
        let back = decode(&encode(&net)).unwrap();
        assert_eq!(back, net);
        let x = Tensor::from_fn(&[2, 3, 16, 16], |i| (i as f32 * 0.37).sin());
        assert_eq!(back.predict(&x).unwrap(), net.predict(&x).unwrap());
    }

    #[test]
    fn corrupt_magic_is_integrity_error() {
        let mut bytes = encode(&sample_net());
        bytes[0] = b'X';
        assert!(matches!(decode(&bytes), Err(Error::Integrity(_))));
    }

    #[test]
    fn truncation_is_integrity_error() {
        let bytes = encode(&sample_net());
        for cut in [3, 10, bytes.len() / 2, bytes.len() - 1] {
            assert!(
                matches!(decode(&bytes[..cut]), Err(Error::Integrity(_))),
                "cut {cut}"
            );
        }
    }

    #[test]
    fn flipped_payload_bit_is_detected() {
        let mut bytes = encode(&sample_net());
        let mid = bytes.len() / 2;
        bytes[mid] ^= 0x10;
        assert!(matches!(decode(&bytes), Err(Error::Integrity(_))));
    }

    #[test]
    fn expecting_other_spec_fails() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("net.wcnn");
        let net = sample_net();
        save(&net, &path).unwrap();
        load_expecting(&path, net.spec()).unwrap();
        let mut other = net.spec().clone();
        other.num_classes = 5;
        assert!(matches!(
            load_expecting(&path, &other),
            Err(Error::SpecMismatch(_))
        ));
    }

    #[test]
    fn future_version_is_spec_mismatch() {
        let mut bytes = encode(&sample_net());
        bytes[4] = 9;
        let body = bytes.len() - 4;
        let crc = crc32fast::hash(&bytes[..body]);
        bytes[body..].copy_from_slice(&crc.to_le_bytes());
        assert!(matches!(decode(&bytes), Err(Error::SpecMismatch(_))));
    }
}
