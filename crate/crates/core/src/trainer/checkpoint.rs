//! Binary checkpoint: magic, version, JSON header, then raw `f64` tensors in
//! header order.

use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{CurriculumSchedule, Trainer, TrainerConfig, TrainingLog};
use crate::error::{Error, Result};
use crate::nn::{Matrix, ParamStore, TransformerConfig};
use crate::reward::RewardConfig;
use crate::tokenizer::Vocabulary;

pub const CHECKPOINT_VERSION: u32 = 1;
const MAGIC: &[u8; 8] = b"DCPCKPT\0";

#[derive(Debug, Serialize, Deserialize)]
struct TensorMeta {
    name: String,
    rows: usize,
    cols: usize,
}

#[derive(Debug, Serialize, Deserialize)]
struct Header {
    encoder: TransformerConfig,
    trainer: TrainerConfig,
    schedule: CurriculumSchedule,
    reward: RewardConfig,
    completed_stages: usize,
    actor_opt_steps: u64,
    critic_opt_steps: u64,
    vocab: Option<Vocabulary>,
    log: TrainingLog,
    tensors: Vec<TensorMeta>,
}

/// A restored trainer plus the vocabulary it was trained with.
#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub trainer: Trainer,
    pub vocab: Option<Vocabulary>,
}

fn push_store<'a>(
    out: &mut Vec<(String, &'a Matrix)>,
    prefix: &str,
    store: &'a ParamStore,
    values: Option<&'a [Matrix]>,
) {
    for (i, id) in store.ids().enumerate() {
        let m = values.map_or_else(|| store.get(id), |v| &v[i]);
        out.push((format!("{prefix}/{}", store.name(id)), m));
    }
}

fn sections(trainer: &Trainer) -> Vec<(String, &Matrix)> {
    let mut out = Vec::new();
    push_store(&mut out, "actor", trainer.actor.params(), None);
    push_store(&mut out, "critic", trainer.critic.params(), None);
    push_store(&mut out, "actor_adam.m", trainer.actor.params(), Some(&trainer.actor_opt.m));
    push_store(&mut out, "actor_adam.v", trainer.actor.params(), Some(&trainer.actor_opt.v));
    push_store(&mut out, "critic_adam.m", trainer.critic.params(), Some(&trainer.critic_opt.m));
    push_store(&mut out, "critic_adam.v", trainer.critic.params(), Some(&trainer.critic_opt.v));
    out
}

/// Writes `trainer` to `path` via a `.partial` sibling and an atomic rename.
pub fn save_checkpoint(trainer: &Trainer, vocab: Option<&Vocabulary>, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let tensors = sections(trainer);
    let header = Header {
        encoder: *trainer.actor.encoder().config(),
        trainer: trainer.cfg.clone(),
        schedule: trainer.schedule.clone(),
        reward: trainer.reward,
        completed_stages: trainer.completed_stages,
        actor_opt_steps: trainer.actor_opt.t,
        critic_opt_steps: trainer.critic_opt.t,
        vocab: vocab.cloned(),
        log: trainer.log.clone(),
        tensors: tensors
            .iter()
            .map(|(name, m)| TensorMeta {
                name: name.clone(),
                rows: m.nrows(),
                cols: m.ncols(),
            })
            .collect(),
    };
    let header = serde_json::to_vec(&header)?;
    let mut buf = Vec::with_capacity(header.len() + 64);
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    buf.extend_from_slice(&(header.len() as u64).to_le_bytes());
    buf.extend_from_slice(&header);
    for (_, m) in &tensors {
        for &x in m.iter() {
            buf.extend_from_slice(&x.to_le_bytes());
        }
    }
    let partial = partial_path(path);
    let mut f = fs::File::create(&partial).map_err(|e| Error::io(&partial, e))?;
    f.write_all(&buf).map_err(|e| Error::io(&partial, e))?;
    f.sync_all().map_err(|e| Error::io(&partial, e))?;
    fs::rename(&partial, path).map_err(|e| Error::io(path, e))
}

pub(crate) fn partial_path(path: &Path) -> std::path::PathBuf {
    let mut name = path.file_name().map(|n| n.to_os_string()).unwrap_or_default();
    name.push(".partial");
    path.with_file_name(name)
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, field: &str) -> Result<&'a [u8]> {
        if self.buf.len() - self.pos < n {
            return Err(Error::CorruptCheckpoint {
                field: field.to_string(),
                message: format!("file truncated ({} bytes remain, {n} needed)", self.buf.len() - self.pos),
            });
        }
        let out = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(out)
    }
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<Checkpoint> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let mut r = Reader { buf: &bytes, pos: 0 };
    if r.take(MAGIC.len(), "magic")? != MAGIC {
        return Err(Error::CorruptCheckpoint {
            field: "magic".into(),
            message: "not a checkpoint file".into(),
        });
    }
    let version = u32::from_le_bytes(r.take(4, "version")?.try_into().expect("4 bytes"));
    if version != CHECKPOINT_VERSION {
        return Err(Error::VersionMismatch {
            found: version,
            expected: CHECKPOINT_VERSION,
        });
    }
    let header_len = u64::from_le_bytes(r.take(8, "header_length")?.try_into().expect("8 bytes"));
    let header_len = usize::try_from(header_len).map_err(|_| Error::CorruptCheckpoint {
        field: "header_length".into(),
        message: "too large".into(),
    })?;
    let header: Header =
        serde_json::from_slice(r.take(header_len, "header")?).map_err(|e| Error::CorruptCheckpoint {
            field: "header".into(),
            message: e.to_string(),
        })?;

    let mut trainer = Trainer::reference(
        header.trainer.clone(),
        header.schedule.clone(),
        header.reward,
        header.encoder,
    )
    .map_err(|e| Error::CorruptCheckpoint {
        field: "header".into(),
        message: e.to_string(),
    })?;
    if header.completed_stages > trainer.schedule.n_stages() {
        return Err(Error::CorruptCheckpoint {
            field: "completed_stages".into(),
            message: format!("{} exceeds the schedule's stages", header.completed_stages),
        });
    }
    let expected = sections(&trainer);
    if expected.len() != header.tensors.len() {
        return Err(Error::CorruptCheckpoint {
            field: "tensors".into(),
            message: format!("expected {} tensors, found {}", expected.len(), header.tensors.len()),
        });
    }
    let mut loaded = Vec::with_capacity(expected.len());
    for ((name, m), meta) in expected.iter().zip(&header.tensors) {
        if *name != meta.name || m.dim() != (meta.rows, meta.cols) {
            return Err(Error::CorruptCheckpoint {
                field: meta.name.clone(),
                message: format!(
                    "expected `{name}` of shape {:?}, found {:?}",
                    m.dim(),
                    (meta.rows, meta.cols)
                ),
            });
        }
        let raw = r.take(meta.rows * meta.cols * 8, &meta.name)?;
        let data: Vec<f64> = raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect();
        loaded.push(Matrix::from_shape_vec((meta.rows, meta.cols), data).expect("shape checked"));
    }
    if r.pos != bytes.len() {
        return Err(Error::CorruptCheckpoint {
            field: "trailer".into(),
            message: format!("{} unexpected trailing bytes", bytes.len() - r.pos),
        });
    }

    let mut it = loaded.into_iter();
    let n_actor = trainer.actor.params().len();
    let n_critic = trainer.critic.params().len();
    let actor_ids: Vec<_> = trainer.actor.params().ids().collect();
    let critic_ids: Vec<_> = trainer.critic.params().ids().collect();
    for &id in &actor_ids {
        *trainer.actor.params_mut().get_mut(id) = it.next().expect("counted");
    }
    for &id in &critic_ids {
        *trainer.critic.params_mut().get_mut(id) = it.next().expect("counted");
    }
    trainer.actor_opt.m = it.by_ref().take(n_actor).collect();
    trainer.actor_opt.v = it.by_ref().take(n_actor).collect();
    trainer.critic_opt.m = it.by_ref().take(n_critic).collect();
    trainer.critic_opt.v = it.by_ref().take(n_critic).collect();
    trainer.actor_opt.t = header.actor_opt_steps;
    trainer.critic_opt.t = header.critic_opt_steps;
    trainer.completed_stages = header.completed_stages;
    trainer.log = header.log;
    trainer.actor_old = trainer.actor.clone();
    trainer.critic_old = trainer.critic.clone();
    Ok(Checkpoint {
        trainer,
        vocab: header.vocab,
    })
}
