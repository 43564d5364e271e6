//! Versioned training checkpoints.
//!
//! Layout: 8-byte magic, `u32` format version, `u64` header length, a JSON
//! header (config, step, RNG snapshot, optimizer step counts and a tensor
//! index), then every tensor as little-endian `f32` in index order.

use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{Discriminator, Generator, Level, Networks};
use crate::nn::{AdamState, Conv2d, ConvParams};
use crate::rng::{RandomSnapshot, RandomState};
use crate::trainer::{TrainConfig, TrainState};

pub const MAGIC: &[u8; 8] = b"AWNCKPT\0";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TensorEntry {
    pub name: String,
    pub shape: Vec<usize>,
    pub offset: usize,
    pub len: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Header {
    pub config: TrainConfig,
    pub step: u64,
    pub rng: RandomSnapshot,
    pub generator_opt_steps: u64,
    pub critic_opt_steps: [u64; 3],
    pub tensors: Vec<TensorEntry>,
}

struct Writer {
    index: Vec<TensorEntry>,
    data: Vec<f32>,
}

impl Writer {
    fn push(&mut self, name: String, shape: Vec<usize>, values: &[f32]) {
        self.index.push(TensorEntry {
            name,
            shape,
            offset: self.data.len(),
            len: values.len(),
        });
        self.data.extend_from_slice(values);
    }

    fn params(&mut self, prefix: &str, names: &[String], convs: &[Conv2d<f32>], sets: &[ConvParams<f32>]) {
        for ((name, conv), p) in names.iter().zip(convs).zip(sets) {
            let s = conv.shape;
            self.push(
                format!("{prefix}.{name}.weight"),
                vec![s.out_c, s.in_c, s.kernel, s.kernel],
                &p.weight,
            );
            self.push(format!("{prefix}.{name}.bias"), vec![s.out_c], &p.bias);
        }
    }
}

fn net_params(convs: &[Conv2d<f32>]) -> Vec<ConvParams<f32>> {
    convs.iter().map(|c| c.params.clone()).collect()
}

fn critic_prefix(level: Level) -> String {
    format!("critic.{level}")
}

pub fn save(state: &TrainState, path: impl AsRef<Path>) -> Result<()> {
    let mut w = Writer {
        index: Vec::new(),
        data: Vec::new(),
    };
    let gen = &state.nets.generator;
    let gen_names = gen.config.layer_names();
    w.params("generator", &gen_names, &gen.convs, &net_params(&gen.convs));
    w.params("adam.m.generator", &gen_names, &gen.convs, &state.generator_opt.first);
    w.params("adam.v.generator", &gen_names, &gen.convs, &state.generator_opt.second);
    for level in Level::ALL {
        let critic = state.nets.critic(level);
        let opt = &state.critic_opts[level.index()];
        let names = critic.config.layer_names();
        let p = critic_prefix(level);
        w.params(&p, &names, &critic.convs, &net_params(&critic.convs));
        w.params(&format!("adam.m.{p}"), &names, &critic.convs, &opt.first);
        w.params(&format!("adam.v.{p}"), &names, &critic.convs, &opt.second);
    }
    let header = Header {
        config: state.config.clone(),
        step: state.step,
        rng: state.rng.snapshot(),
        generator_opt_steps: state.generator_opt.steps,
        critic_opt_steps: [
            state.critic_opts[0].steps,
            state.critic_opts[1].steps,
            state.critic_opts[2].steps,
        ],
        tensors: w.index,
    };
    let json = serde_json::to_vec(&header).map_err(|e| Error::Checkpoint(e.to_string()))?;
    let mut bytes = Vec::with_capacity(20 + json.len() + 4 * w.data.len());
    bytes.extend_from_slice(MAGIC);
    bytes.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    bytes.extend_from_slice(&(json.len() as u64).to_le_bytes());
    bytes.extend_from_slice(&json);
    for v in &w.data {
        bytes.extend_from_slice(&v.to_le_bytes());
    }
    let path = path.as_ref();
    let tmp = path.with_extension("partial");
    let mut f = fs::File::create(&tmp)?;
    f.write_all(&bytes)?;
    f.sync_all()?;
    drop(f);
    fs::rename(&tmp, path)?;
    Ok(())
}

fn corrupt(path: &Path, what: impl std::fmt::Display) -> Error {
    Error::Checkpoint(format!("{}: {what}", path.display()))
}

/// Parses the header and the raw tensor payload.
pub fn read_raw(path: impl AsRef<Path>) -> Result<(Header, Vec<f32>)> {
    let path = path.as_ref();
    let bytes = fs::read(path)?;
    if bytes.len() < 20 || &bytes[..8] != MAGIC {
        return Err(corrupt(path, "not a checkpoint file"));
    }
    let version = u32::from_le_bytes(bytes[8..12].try_into().unwrap());
    if version != FORMAT_VERSION {
        return Err(corrupt(
            path,
            format!("format version {version} is not supported (expected {FORMAT_VERSION})"),
        ));
    }
    let hlen = u64::from_le_bytes(bytes[12..20].try_into().unwrap()) as usize;
    let body = bytes
        .get(20..20usize.saturating_add(hlen))
        .ok_or_else(|| corrupt(path, "truncated header"))?;
    let header: Header = serde_json::from_slice(body).map_err(|e| corrupt(path, e))?;
    let payload = &bytes[20 + hlen..];
    if payload.len() % 4 != 0 {
        return Err(corrupt(path, "payload is not a whole number of f32 values"));
    }
    let data: Vec<f32> = payload
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
        .collect();
    let need = header.tensors.iter().map(|t| t.offset + t.len).max().unwrap_or(0);
    if data.len() != need {
        return Err(corrupt(path, format!("expected {need} values, found {}", data.len())));
    }
    Ok((header, data))
}

struct Reader<'a> {
    path: &'a Path,
    header: &'a Header,
    data: &'a [f32],
    next: usize,
}

impl Reader<'_> {
    fn take(&mut self, name: &str, shape: &[usize]) -> Result<Vec<f32>> {
        let entry = self
            .header
            .tensors
            .get(self.next)
            .ok_or_else(|| corrupt(self.path, format!("missing tensor {name}")))?;
        if entry.name != name || entry.shape != shape {
            return Err(corrupt(
                self.path,
                format!(
                    "tensor {} {:?} found where {name} {shape:?} was expected",
                    entry.name, entry.shape
                ),
            ));
        }
        self.next += 1;
        Ok(self.data[entry.offset..entry.offset + entry.len].to_vec())
    }

    fn params(&mut self, prefix: &str, names: &[String], convs: &[Conv2d<f32>]) -> Result<Vec<ConvParams<f32>>> {
        names
            .iter()
            .zip(convs)
            .map(|(name, conv)| {
                let s = conv.shape;
                Ok(ConvParams {
                    weight: self.take(&format!("{prefix}.{name}.weight"), &[s.out_c, s.in_c, s.kernel, s.kernel])?,
                    bias: self.take(&format!("{prefix}.{name}.bias"), &[s.out_c])?,
                })
            })
            .collect()
    }
}

fn install(convs: &mut [Conv2d<f32>], params: Vec<ConvParams<f32>>) {
    for (c, p) in convs.iter_mut().zip(params) {
        c.params = p;
    }
}

pub fn load(path: impl AsRef<Path>) -> Result<TrainState> {
    let path = path.as_ref();
    let (header, data) = read_raw(path)?;
    header
        .config
        .validate()
        .map_err(|e| corrupt(path, format!("stored config is invalid: {e}")))?;
    let cfg = &header.config;
    // Shapes only; every parameter is overwritten below.
    let mut scratch = RandomState::new(0);
    let mut generator = Generator::<f32>::new(cfg.generator.clone(), &mut scratch)?;
    let mut critics = [
        Discriminator::<f32>::new(cfg.discriminator.clone(), &mut scratch)?,
        Discriminator::<f32>::new(cfg.discriminator.clone(), &mut scratch)?,
        Discriminator::<f32>::new(cfg.discriminator.clone(), &mut scratch)?,
    ];
    let mut r = Reader {
        path,
        header: &header,
        data: &data,
        next: 0,
    };
    let gen_names = cfg.generator.layer_names();
    let p = r.params("generator", &gen_names, &generator.convs)?;
    let m = r.params("adam.m.generator", &gen_names, &generator.convs)?;
    let v = r.params("adam.v.generator", &gen_names, &generator.convs)?;
    install(&mut generator.convs, p);
    let generator_opt = AdamState {
        first: m,
        second: v,
        steps: header.generator_opt_steps,
    };
    let names = cfg.discriminator.layer_names();
    let mut opts = Vec::new();
    for level in Level::ALL {
        let critic = &mut critics[level.index()];
        let pre = critic_prefix(level);
        let p = r.params(&pre, &names, &critic.convs)?;
        let m = r.params(&format!("adam.m.{pre}"), &names, &critic.convs)?;
        let v = r.params(&format!("adam.v.{pre}"), &names, &critic.convs)?;
        install(&mut critic.convs, p);
        opts.push(AdamState {
            first: m,
            second: v,
            steps: header.critic_opt_steps[level.index()],
        });
    }
    if r.next != header.tensors.len() {
        return Err(corrupt(path, "unexpected extra tensors"));
    }
    let critic_opts: [AdamState<f32>; 3] = opts.try_into().expect("three critics");
    Ok(TrainState {
        config: header.config.clone(),
        nets: Networks { generator, critics },
        generator_opt,
        critic_opts,
        step: header.step,
        rng: RandomState::restore(&header.rng)?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hierarchy::HierarchySpec;
    use crate::model::{DiscriminatorConfig, GeneratorConfig};
    use crate::rawp::SearchSpec;
    use crate::synthetic::synthetic_pairs;
    use crate::trainer::train_step;
    use rand::RngCore;

    fn small() -> TrainConfig {
        let hierarchy = HierarchySpec {
            scene_size: 32,
            objects_per_scene: 2,
            ..Default::default()
        };
        TrainConfig {
            batch_size: 1,
            search: SearchSpec::for_window(16),
            hierarchy,
            generator: GeneratorConfig {
                base_channels: 4,
                depth: 2,
                ..Default::default()
            },
            discriminator: DiscriminatorConfig {
                base_channels: 4,
                layers: 2,
            },
            ..Default::default()
        }
    }

    #[test]
    fn round_trip_is_exact() {
        let cfg = small();
        let pairs = synthetic_pairs(1, 32, 3);
        let mut state = TrainState::new(&cfg).unwrap();
        train_step(&mut state, &[&pairs[0]]).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("a.ckpt");
        save(&state, &path).unwrap();
        let mut back = load(&path).unwrap();
        assert_eq!(back.nets, state.nets);
        assert_eq!(back.generator_opt, state.generator_opt);
        assert_eq!(back.critic_opts, state.critic_opts);
        assert_eq!(back.step, 1);
        assert_eq!(back.config, cfg);
        assert_eq!(back.rng.next_u64(), state.rng.next_u64());
    }

    #[test]
    fn rejects_garbage_and_truncation() {
        let dir = tempfile::tempdir().unwrap();
        let junk = dir.path().join("junk.ckpt");
        fs::write(&junk, b"hello world, definitely not a checkpoint").unwrap();
        assert!(matches!(load(&junk), Err(Error::Checkpoint(_))));

        let state = TrainState::new(&small()).unwrap();
        let good = dir.path().join("good.ckpt");
        save(&state, &good).unwrap();
        let bytes = fs::read(&good).unwrap();
        let cut = dir.path().join("cut.ckpt");
        fs::write(&cut, &bytes[..bytes.len() - 8]).unwrap();
        assert!(matches!(load(&cut), Err(Error::Checkpoint(_))));

        let mut future = bytes.clone();
        future[8] = 9;
        fs::write(&cut, &future).unwrap();
        match load(&cut) {
            Err(Error::Checkpoint(m)) => assert!(m.contains("version 9"), "{m}"),
            _ => panic!("expected version error"),
        }
    }
}
