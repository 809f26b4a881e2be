//! Checkpoints: generator and discriminator weights, optimizer moments,
//! spectral-norm state, the step counter, and a TOML snapshot of the
//! configuration, all in the shared tensor-table format.

use std::collections::BTreeSet;
use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use qotr_core::generator::GeneratorParams;
use qotr_core::losses::DiscriminatorParams;
use qotr_core::serialize::{read_from, write_to, NamedTensors};
use qotr_core::tensor::Tensor;
use qotr_core::{Error, Result};

use crate::config::TrainConfig;
use crate::optim::AdamState;
use crate::{DISC_BASE_CHANNELS, DISC_STRIDED_LAYERS};

pub struct Checkpoint {
    pub config: TrainConfig,
    pub generator: GeneratorParams<f32>,
    pub discriminator: DiscriminatorParams<f32>,
    /// None when the file carried no optimizer state (inference only).
    pub opt_g: Option<AdamState>,
    pub opt_d: Option<AdamState>,
    pub step: u64,
}

fn push_all(
    table: &mut NamedTensors,
    prefix: &str,
    f: impl FnOnce(&mut dyn FnMut(String, &mut Tensor<f32>)),
) {
    f(&mut |name, t| {
        table
            .entries
            .push((format!("{prefix}{name}"), t.shape().to_vec(), t.data().to_vec()));
    });
}

impl Checkpoint {
    pub fn to_table(&self) -> NamedTensors {
        let mut table = NamedTensors {
            entries: Vec::new(),
            snapshot: self.config.to_toml(),
        };
        table
            .entries
            .push(("step".into(), vec![1], vec![self.step as f32]));

        let mut g = self.generator.clone();
        push_all(&mut table, "", |f| g.for_each(f));
        let mut d = self.discriminator.clone();
        push_all(&mut table, "", |f| d.for_each_trainable(f));
        push_all(&mut table, "", |f| d.for_each_state(f));

        if let (Some(og), Some(od)) = (&self.opt_g, &self.opt_d) {
            let mut names_g = Vec::new();
            self.generator.clone().for_each(&mut |n, _| names_g.push(n));
            for (i, n) in names_g.iter().enumerate() {
                table.entries.push((
                    format!("opt_g.m.{n}"),
                    og.m[i].shape().to_vec(),
                    og.m[i].data().to_vec(),
                ));
                table.entries.push((
                    format!("opt_g.v.{n}"),
                    og.v[i].shape().to_vec(),
                    og.v[i].data().to_vec(),
                ));
            }
            table
                .entries
                .push(("opt_g.step".into(), vec![1], vec![og.step as f32]));

            let mut names_d = Vec::new();
            self.discriminator
                .clone()
                .for_each_trainable(&mut |n, _| names_d.push(n));
            for (i, n) in names_d.iter().enumerate() {
                table.entries.push((
                    format!("opt_d.m.{n}"),
                    od.m[i].shape().to_vec(),
                    od.m[i].data().to_vec(),
                ));
                table.entries.push((
                    format!("opt_d.v.{n}"),
                    od.v[i].shape().to_vec(),
                    od.v[i].data().to_vec(),
                ));
            }
            table
                .entries
                .push(("opt_d.step".into(), vec![1], vec![od.step as f32]));
        }
        table
    }

    /// Rebuild a checkpoint from a tensor table. Returns warnings for
    /// recoverable issues (missing optimizer state).
    pub fn from_table(table: &NamedTensors) -> Result<(Self, Vec<String>)> {
        let config = TrainConfig::from_toml(&table.snapshot)
            .map_err(|e| Error::Format(format!("config snapshot: {e}")))?;
        let spec = config.grid();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut generator = GeneratorParams::<f32>::init(&mut rng, &spec, &config.dims())?;
        let mut discriminator = DiscriminatorParams::<f32>::init(
            &mut rng,
            config.disc_scales,
            DISC_BASE_CHANNELS,
            DISC_STRIDED_LAYERS,
        )?;

        let mut consumed: BTreeSet<String> = BTreeSet::new();
        let mut take = |name: &str, t: &mut Tensor<f32>| -> Result<()> {
            let (shape, data) = table.find(name).ok_or_else(|| {
                Error::Format(format!("checkpoint is missing tensor {name}"))
            })?;
            if shape != t.shape() {
                return Err(Error::Format(format!(
                    "tensor {name} has shape {shape:?}, model expects {:?}",
                    t.shape()
                )));
            }
            *t = Tensor::from_vec(shape, data.to_vec())?;
            consumed.insert(name.to_string());
            Ok(())
        };

        let mut first_err = None;
        generator.for_each(&mut |n, t| {
            if first_err.is_none() {
                first_err = take(&n, t).err();
            }
        });
        discriminator.for_each_trainable(&mut |n, t| {
            if first_err.is_none() {
                first_err = take(&n, t).err();
            }
        });
        discriminator.for_each_state(&mut |n, t| {
            if first_err.is_none() {
                first_err = take(&n, t).err();
            }
        });
        if let Some(e) = first_err {
            return Err(e);
        }

        let step = table
            .find("step")
            .map(|(_, d)| d[0] as u64)
            .ok_or_else(|| Error::Format("checkpoint is missing tensor step".into()))?;
        consumed.insert("step".into());

        // optimizer state is optional: absent means inference-only
        let mut warnings = Vec::new();
        let load_opt = |prefix: &str,
                            names: &[String],
                            consumed: &mut BTreeSet<String>|
         -> Result<Option<AdamState>> {
            let mut m = Vec::with_capacity(names.len());
            let mut v = Vec::with_capacity(names.len());
            for n in names {
                let mn = format!("{prefix}.m.{n}");
                let vn = format!("{prefix}.v.{n}");
                match (table.find(&mn), table.find(&vn)) {
                    (Some((ms, md)), Some((vs, vd))) => {
                        m.push(Tensor::from_vec(ms, md.to_vec())?);
                        v.push(Tensor::from_vec(vs, vd.to_vec())?);
                        consumed.insert(mn);
                        consumed.insert(vn);
                    }
                    _ => return Ok(None),
                }
            }
            let step_name = format!("{prefix}.step");
            let step = match table.find(&step_name) {
                Some((_, d)) => d[0] as u64,
                None => return Ok(None),
            };
            consumed.insert(step_name);
            Ok(Some(AdamState { m, v, step }))
        };

        let mut names_g = Vec::new();
        generator.for_each(&mut |n, _| names_g.push(n));
        let mut names_d = Vec::new();
        discriminator.for_each_trainable(&mut |n, _| names_d.push(n));

        let opt_g = load_opt("opt_g", &names_g, &mut consumed)?;
        let opt_d = load_opt("opt_d", &names_d, &mut consumed)?;
        if opt_g.is_none() || opt_d.is_none() {
            warnings.push(
                "checkpoint has no optimizer state; loading for inference only".to_string(),
            );
        }

        // a tensor nobody asked for is a malformed file
        for name in table.names() {
            if !consumed.contains(name) && opt_g.is_some() {
                return Err(Error::Format(format!(
                    "checkpoint contains unknown tensor {name}"
                )));
            }
        }

        Ok((
            Checkpoint {
                config,
                generator,
                discriminator,
                opt_g,
                opt_d,
                step,
            },
            warnings,
        ))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        if let Some(dir) = path.parent() {
            if !dir.as_os_str().is_empty() {
                std::fs::create_dir_all(dir)?;
            }
        }
        let mut w = BufWriter::new(File::create(path)?);
        write_to(&mut w, &self.to_table())
    }

    pub fn load(path: &Path) -> Result<(Self, Vec<String>)> {
        let mut r = BufReader::new(File::open(path)?);
        let table = read_from(&mut r)?;
        Self::from_table(&table)
    }

    /// Serialized bytes, for determinism comparisons.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut buf = Vec::new();
        write_to(&mut buf, &self.to_table()).expect("in-memory write");
        buf
    }
}
