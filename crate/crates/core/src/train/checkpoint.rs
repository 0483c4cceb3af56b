//! Resumable training snapshots.
//!
//! Layout (little-endian): magic `STCK`, version `u32`, then sections, each
//! a 4-byte tag, a `u64` payload length and the payload:
//!
//! | tag    | payload |
//! |--------|---------|
//! | `ARCH` | depth, classes, 4 stage widths, 4 input extents (all `u64`) |
//! | `TENS` | `u32` count, then per tensor `u32` name length, UTF-8 name, `STT1` tensor |
//! | `OPTS` | momentum `f64`, weight decay `f64`, decay-batchnorm `u8` |
//! | `SCHD` | lr0, min_delta, best (`f64`); max drops, drops (`u32`); patience, stall, observed, epoch (`u64`) |
//! | `RNGS` | generator state blob |
//!
//! Network tensors (parameters, then running statistics) are stored under
//! their own names, optimizer velocities under `velocity/<parameter>`.

use std::io::{Cursor, Read};
use std::path::Path;

use crate::error::{Error, Result};
use crate::resnet::{ArchSpec, Network};
use crate::rng::Rng;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

use super::fit::TrainState;
use super::schedule::PlateauSchedule;
use super::sgd::Sgd;

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"STCK";
pub const CHECKPOINT_VERSION: u32 = 1;
pub const VELOCITY_PREFIX: &str = "velocity/";

#[derive(Debug, Clone)]
pub struct Checkpoint<T: Scalar> {
    pub arch: ArchSpec,
    pub tensors: Vec<(String, Tensor<T>)>,
    pub velocities: Vec<(String, Tensor<T>)>,
    pub momentum: f64,
    pub weight_decay: f64,
    pub decay_batchnorm: bool,
    pub schedule: PlateauSchedule,
    pub epoch: usize,
    pub rng_state: Vec<u8>,
}

fn put_u32(out: &mut Vec<u8>, v: u32) {
    out.extend_from_slice(&v.to_le_bytes());
}

fn put_u64(out: &mut Vec<u8>, v: u64) {
    out.extend_from_slice(&v.to_le_bytes());
}

fn put_f64(out: &mut Vec<u8>, v: f64) {
    out.extend_from_slice(&v.to_le_bytes());
}

fn section(out: &mut Vec<u8>, tag: &[u8; 4], payload: &[u8]) {
    out.extend_from_slice(tag);
    put_u64(out, payload.len() as u64);
    out.extend_from_slice(payload);
}

struct Reader<'a> {
    cur: Cursor<&'a [u8]>,
    what: &'static str,
}

impl<'a> Reader<'a> {
    fn new(bytes: &'a [u8], what: &'static str) -> Self {
        Reader {
            cur: Cursor::new(bytes),
            what,
        }
    }

    fn take<const N: usize>(&mut self) -> Result<[u8; N]> {
        let mut b = [0u8; N];
        self.cur
            .read_exact(&mut b)
            .map_err(|_| Error::Format(format!("truncated {} section", self.what)))?;
        Ok(b)
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

    fn usize(&mut self) -> Result<usize> {
        usize::try_from(self.u64()?).map_err(|_| Error::Format(format!("oversized value in {}", self.what)))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take()?))
    }

    fn bytes(&mut self, n: usize) -> Result<Vec<u8>> {
        let pos = self.cur.position() as usize;
        let data = *self.cur.get_ref();
        if data.len() - pos < n {
            return Err(Error::Format(format!("truncated {} section", self.what)));
        }
        self.cur.set_position((pos + n) as u64);
        Ok(data[pos..pos + n].to_vec())
    }

    fn finish(&self) -> Result<()> {
        if (self.cur.position() as usize) != self.cur.get_ref().len() {
            return Err(Error::Format(format!("trailing bytes in {} section", self.what)));
        }
        Ok(())
    }
}

fn shape_error(name: &str, found: &[usize], expected: &[usize]) -> Error {
    Error::Parameter {
        name: name.to_string(),
        reason: format!("checkpoint shape {found:?} does not match network shape {expected:?}"),
    }
}

impl<T: Scalar> Checkpoint<T> {
    pub fn capture(state: &TrainState<T>) -> Self {
        Checkpoint {
            arch: state.net.spec().clone(),
            tensors: state
                .net
                .state_tensors()
                .into_iter()
                .map(|(n, t)| (n, t.clone()))
                .collect(),
            velocities: state.opt.velocities().to_vec(),
            momentum: state.opt.momentum,
            weight_decay: state.opt.weight_decay,
            decay_batchnorm: state.opt.decay_batchnorm,
            schedule: state.schedule.clone(),
            epoch: state.epoch,
            rng_state: state.rng.state_bytes(),
        }
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(CHECKPOINT_MAGIC);
        put_u32(&mut out, CHECKPOINT_VERSION);

        let mut arch = Vec::new();
        put_u64(&mut arch, self.arch.depth as u64);
        put_u64(&mut arch, self.arch.num_classes as u64);
        for v in self.arch.stage_channels.iter().chain(&self.arch.input_shape) {
            put_u64(&mut arch, *v as u64);
        }
        section(&mut out, b"ARCH", &arch);

        let mut tens = Vec::new();
        put_u32(&mut tens, (self.tensors.len() + self.velocities.len()) as u32);
        let velocity_names: Vec<String> = self
            .velocities
            .iter()
            .map(|(n, _)| format!("{VELOCITY_PREFIX}{n}"))
            .collect();
        let entries = self.tensors.iter().map(|(n, t)| (n.as_str(), t)).chain(
            velocity_names
                .iter()
                .map(String::as_str)
                .zip(self.velocities.iter().map(|(_, t)| t)),
        );
        for (name, t) in entries {
            put_u32(&mut tens, name.len() as u32);
            tens.extend_from_slice(name.as_bytes());
            t.encode(&mut tens);
        }
        section(&mut out, b"TENS", &tens);

        let mut opts = Vec::new();
        put_f64(&mut opts, self.momentum);
        put_f64(&mut opts, self.weight_decay);
        opts.push(self.decay_batchnorm as u8);
        section(&mut out, b"OPTS", &opts);

        let s = &self.schedule;
        let (drops, best, stall, observed) = s.to_parts();
        let mut schd = Vec::new();
        put_f64(&mut schd, s.lr0);
        put_f64(&mut schd, s.min_delta);
        put_f64(&mut schd, best);
        put_u32(&mut schd, s.max_drops);
        put_u32(&mut schd, drops);
        put_u64(&mut schd, s.patience as u64);
        put_u64(&mut schd, stall as u64);
        put_u64(&mut schd, observed as u64);
        put_u64(&mut schd, self.epoch as u64);
        section(&mut out, b"SCHD", &schd);

        section(&mut out, b"RNGS", &self.rng_state);
        out
    }

    pub fn decode(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader::new(bytes, "checkpoint header");
        if &r
            .take::<4>()
            .map_err(|_| Error::Format("file too short for a checkpoint".into()))?
            != CHECKPOINT_MAGIC
        {
            return Err(Error::Format("bad checkpoint magic".into()));
        }
        let version = r.u32()?;
        if version != CHECKPOINT_VERSION {
            return Err(Error::Format(format!(
                "unsupported checkpoint version {version} (expected {CHECKPOINT_VERSION})"
            )));
        }

        let (mut arch, mut tens, mut opts, mut schd, mut rngs) = (None, None, None, None, None);
        while (r.cur.position() as usize) < bytes.len() {
            let tag = r.take::<4>()?;
            let len = r.usize()?;
            let payload = r.bytes(len)?;
            let slot = match &tag {
                b"ARCH" => &mut arch,
                b"TENS" => &mut tens,
                b"OPTS" => &mut opts,
                b"SCHD" => &mut schd,
                b"RNGS" => &mut rngs,
                other => {
                    return Err(Error::Format(format!(
                        "unknown checkpoint section {:?}",
                        String::from_utf8_lossy(other)
                    )))
                }
            };
            if slot.replace(payload).is_some() {
                return Err(Error::Format(format!(
                    "duplicate section {}",
                    String::from_utf8_lossy(&tag)
                )));
            }
        }
        let need = |s: Option<Vec<u8>>, tag: &str| s.ok_or_else(|| Error::Format(format!("missing {tag} section")));

        let arch_bytes = need(arch, "ARCH")?;
        let mut r = Reader::new(&arch_bytes, "ARCH");
        let depth = r.usize()?;
        let classes = r.usize()?;
        let mut channels = [0usize; 4];
        for c in &mut channels {
            *c = r.usize()?;
        }
        let mut input = [0usize; 4];
        for c in &mut input {
            *c = r.usize()?;
        }
        r.finish()?;
        let arch = ArchSpec::new(depth, classes)
            .map(|s| s.with_stage_channels(channels).with_input(input))
            .and_then(|s| s.validate().map(|_| s))
            .map_err(|e| Error::Format(format!("invalid ARCH section: {e}")))?;

        let tens_bytes = need(tens, "TENS")?;
        let mut r = Reader::new(&tens_bytes, "TENS");
        let count = r.u32()? as usize;
        let (mut tensors, mut velocities) = (Vec::new(), Vec::new());
        for _ in 0..count {
            let n = r.u32()? as usize;
            let name = String::from_utf8(r.bytes(n)?).map_err(|_| Error::Format("tensor name is not UTF-8".into()))?;
            let t = Tensor::<T>::read_from(&mut r.cur).map_err(|e| match e {
                Error::Format(m) => Error::Format(format!("tensor `{name}`: {m}")),
                other => other,
            })?;
            match name.strip_prefix(VELOCITY_PREFIX) {
                Some(param) => velocities.push((param.to_string(), t)),
                None => tensors.push((name, t)),
            }
        }
        r.finish()?;

        let opts_bytes = need(opts, "OPTS")?;
        let mut r = Reader::new(&opts_bytes, "OPTS");
        let momentum = r.f64()?;
        let weight_decay = r.f64()?;
        let decay_batchnorm = match r.u8()? {
            0 => false,
            1 => true,
            b => return Err(Error::Format(format!("bad decay flag {b}"))),
        };
        r.finish()?;

        let schd_bytes = need(schd, "SCHD")?;
        let mut r = Reader::new(&schd_bytes, "SCHD");
        let lr0 = r.f64()?;
        let min_delta = r.f64()?;
        let best = r.f64()?;
        let max_drops = r.u32()?;
        let drops = r.u32()?;
        let patience = r.usize()?;
        let stall = r.usize()?;
        let observed = r.usize()?;
        let epoch = r.usize()?;
        r.finish()?;
        let schedule =
            PlateauSchedule::from_parts(lr0, max_drops, patience, min_delta, (drops, best, stall, observed))?;

        let rng_state = need(rngs, "RNGS")?;
        Rng::from_state_bytes(&rng_state)?;

        Ok(Checkpoint {
            arch,
            tensors,
            velocities,
            momentum,
            weight_decay,
            decay_batchnorm,
            schedule,
            epoch,
            rng_state,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let tmp = path.with_extension("tmp");
        std::fs::write(&tmp, self.encode())?;
        std::fs::rename(&tmp, path)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::decode(&std::fs::read(path)?)
    }

    /// Copies weights and running statistics into `net`. Every name and
    /// shape is checked before anything is written; the error names the
    /// first offending tensor in network order.
    pub fn load_into(&self, net: &mut Network<T>) -> Result<()> {
        let expected = net.state_tensors();
        for (name, t) in &expected {
            match self.tensors.iter().find(|(n, _)| n == name) {
                None => {
                    return Err(Error::Parameter {
                        name: name.clone(),
                        reason: "missing from checkpoint".into(),
                    })
                }
                Some((_, c)) if c.shape() != t.shape() => return Err(shape_error(name, c.shape(), t.shape())),
                Some(_) => {}
            }
        }
        if let Some((extra, _)) = self.tensors.iter().find(|(n, _)| !expected.iter().any(|(e, _)| e == n)) {
            return Err(Error::Parameter {
                name: extra.clone(),
                reason: "unknown tensor for this network".into(),
            });
        }
        for (name, slot) in net.state_tensors_mut() {
            let (_, c) = self.tensors.iter().find(|(n, _)| *n == name).expect("checked above");
            *slot = c.clone();
        }
        Ok(())
    }

    pub fn into_state(self) -> Result<TrainState<T>> {
        // weights are overwritten below, so the init seed is irrelevant
        let mut net = Network::build(&self.arch, &mut Rng::new(0))?;
        self.load_into(&mut net)?;
        let mut opt = Sgd::new(&net, self.momentum, self.weight_decay, self.decay_batchnorm);
        if self.velocities.len() != opt.velocities().len() {
            return Err(Error::Format(format!(
                "checkpoint holds {} velocities, network has {} parameters",
                self.velocities.len(),
                opt.velocities().len()
            )));
        }
        for (name, v) in self.velocities {
            opt.set_velocity(&name, v)?;
        }
        Ok(TrainState {
            net,
            opt,
            schedule: self.schedule,
            rng: Rng::from_state_bytes(&self.rng_state)?,
            epoch: self.epoch,
        })
    }
}

pub fn save_checkpoint<T: Scalar>(state: &TrainState<T>, path: &Path) -> Result<()> {
    Checkpoint::capture(state).save(path)
}

pub fn load_checkpoint<T: Scalar>(path: &Path) -> Result<TrainState<T>> {
    Checkpoint::load(path)?.into_state()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::train::TrainConfig;

    fn tiny_state() -> TrainState<f32> {
        let spec = ArchSpec::resnet18(3)
            .with_stage_channels([4, 8, 8, 8])
            .with_input([3, 4, 16, 16]);
        let mut s = TrainState::new(
            &spec,
            &TrainConfig {
                seed: 5,
                ..Default::default()
            },
        )
        .unwrap();
        s.schedule.observe(2.0).unwrap();
        s.schedule.observe(2.5).unwrap();
        s.epoch = 2;
        s.rng.next_u64();
        s
    }

    #[test]
    fn byte_identical_round_trip() {
        let s = tiny_state();
        let bytes = Checkpoint::capture(&s).encode();
        let back = Checkpoint::<f32>::decode(&bytes).unwrap().into_state().unwrap();
        assert_eq!(Checkpoint::capture(&back).encode(), bytes);
        assert_eq!(back.schedule, s.schedule);
        assert_eq!(back.epoch, 2);
        assert_eq!(back.rng.clone().next_u64(), s.rng.clone().next_u64());
    }

    #[test]
    fn corrupt_files() {
        let bytes = Checkpoint::capture(&tiny_state()).encode();
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(matches!(Checkpoint::<f32>::decode(&bad), Err(Error::Format(m)) if m.contains("magic")));
        let mut bad = bytes.clone();
        bad[4] = 9;
        assert!(matches!(Checkpoint::<f32>::decode(&bad), Err(Error::Format(m)) if m.contains("version")));
        for cut in [3, 10, bytes.len() / 2, bytes.len() - 1] {
            assert!(
                matches!(Checkpoint::<f32>::decode(&bytes[..cut]), Err(Error::Format(_))),
                "cut {cut}"
            );
        }
        assert!(matches!(
            Checkpoint::<f64>::decode(&bytes),
            Err(Error::DTypeMismatch { .. })
        ));
    }

    #[test]
    fn mismatched_network_names_first_offender() {
        let ck = Checkpoint::capture(&tiny_state());
        let other = ArchSpec::resnet18(3)
            .with_stage_channels([4, 8, 8, 16])
            .with_input([3, 4, 16, 16]);
        let mut net = Network::<f32>::build(&other, &mut Rng::new(1)).unwrap();
        let before = net
            .state_tensors()
            .into_iter()
            .map(|(_, t)| t.clone())
            .collect::<Vec<_>>();
        match ck.load_into(&mut net) {
            Err(Error::Parameter { name, reason }) => {
                assert_eq!(name, "conv5_1.conv_a.weight");
                assert!(reason.contains("[8, 8, 3, 3, 3]"), "{reason}");
            }
            other => panic!("{other:?}"),
        }
        let after = net
            .state_tensors()
            .into_iter()
            .map(|(_, t)| t.clone())
            .collect::<Vec<_>>();
        assert_eq!(before, after);

        let deeper = ArchSpec::resnet34(3)
            .with_stage_channels([4, 8, 8, 8])
            .with_input([3, 4, 16, 16]);
        let mut net = Network::<f32>::build(&deeper, &mut Rng::new(1)).unwrap();
        assert!(
            matches!(ck.load_into(&mut net), Err(Error::Parameter { name, .. }) if name == "conv2_3.conv_a.weight")
        );
    }
}
