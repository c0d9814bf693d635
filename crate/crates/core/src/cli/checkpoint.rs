//! Binary checkpoints.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! magic "PRSNCKPT" | version u32 | meta_len u64 | meta JSON
//! | blob_count u32 | blobs... | sha256 of everything before it (32 bytes)
//! ```
//!
//! A blob is `name_len u32 | name | rows u32 | cols u32 | rows*cols f32`.
//! Parameters are stored at 32 bits, so a loaded model equals the saved one
//! rounded to f32; saving it again reproduces the file byte for byte.

use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::RunConfig;
use crate::editor::{EditorNetwork, EditorSpec};
use crate::error::{Error, Result};
use crate::model::{AdaptiveLayerSet, Backbone, BackboneSpec, DeviceModel};
use crate::numerics::{rng_from_seed, Matrix, Params};
use crate::prototypes::{PartitionMap, PrototypeModel, PrototypeSet};

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"PRSNCKPT";
pub const CHECKPOINT_VERSION: u32 = 1;
const DIGEST_LEN: usize = 32;

/// What a pipeline stage hands to the next one.
#[allow(clippy::large_enum_variant)]
#[derive(Clone, Debug)]
pub enum Stage {
    Empty,
    /// A trained device model, before any editor exists.
    Dam(DeviceModel),
    /// Global prototype, optional partition and group prototypes.
    Prototypes(PrototypeSet),
}

#[derive(Clone, Debug)]
pub struct Checkpoint {
    pub config: RunConfig,
    pub stage: Stage,
}

impl Checkpoint {
    pub fn empty(config: RunConfig) -> Self {
        Self { config, stage: Stage::Empty }
    }

    pub fn prototypes(&self) -> Result<&PrototypeSet> {
        match &self.stage {
            Stage::Prototypes(p) => Ok(p),
            _ => Err(Error::Lifecycle("checkpoint holds no prototypes".into())),
        }
    }

    /// The device model, either stored directly or as the global prototype's
    /// backbone and base.
    pub fn device_model(&self) -> Result<DeviceModel> {
        match &self.stage {
            Stage::Dam(d) => Ok(d.clone()),
            Stage::Prototypes(p) => DeviceModel::new(p.global.backbone.clone(), p.global.base.clone()),
            Stage::Empty => Err(Error::Lifecycle("checkpoint holds no device model".into())),
        }
    }
}

#[derive(Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
enum StageKind {
    Empty,
    Dam,
    Prototypes,
}

#[derive(Serialize, Deserialize)]
struct EditorMeta {
    spec: EditorSpec,
    trained: bool,
}

#[derive(Serialize, Deserialize)]
struct Meta {
    config: String,
    stage: StageKind,
    backbone: Option<BackboneSpec>,
    dam_layers: usize,
    global: Option<EditorMeta>,
    groups: Vec<EditorMeta>,
    partition: Option<PartitionMap>,
}

struct Blob {
    name: String,
    value: Matrix,
}

fn push_params(out: &mut Vec<Blob>, prefix: &str, p: &dyn Params) {
    p.visit_params(&mut |t| out.push(Blob { name: format!("{prefix}{}", t.name), value: t.value.clone() }));
}

fn push_layers(out: &mut Vec<Blob>, prefix: &str, layers: &AdaptiveLayerSet) {
    for t in layers.to_params(prefix) {
        out.push(Blob { name: t.name, value: t.value });
    }
}

fn push_proto(out: &mut Vec<Blob>, meta: &mut Vec<EditorMeta>, tag: &str, p: &PrototypeModel) {
    push_layers(out, &format!("{tag}.base"), &p.base);
    push_params(out, &format!("{tag}/"), &p.editor);
    meta.push(EditorMeta { spec: p.editor.spec.clone(), trained: p.editor.trained });
}

pub fn to_bytes(ckpt: &Checkpoint) -> Result<Vec<u8>> {
    let mut blobs = Vec::new();
    let mut meta = Meta {
        config: ckpt.config.to_toml(),
        stage: StageKind::Empty,
        backbone: None,
        dam_layers: 0,
        global: None,
        groups: Vec::new(),
        partition: None,
    };
    match &ckpt.stage {
        Stage::Empty => {}
        Stage::Dam(d) => {
            meta.stage = StageKind::Dam;
            meta.backbone = Some(d.backbone.spec);
            meta.dam_layers = d.adaptive.layer_count();
            push_params(&mut blobs, "", d.backbone.as_ref());
            push_layers(&mut blobs, "dam.adaptive", &d.adaptive);
        }
        Stage::Prototypes(set) => {
            if !set.shares_backbone() {
                return Err(Error::InvalidInput("group prototypes must share the global backbone".into()));
            }
            meta.stage = StageKind::Prototypes;
            meta.backbone = Some(set.global.backbone.spec);
            meta.partition = set.partition.clone();
            push_params(&mut blobs, "", set.global.backbone.as_ref());
            let mut g = Vec::new();
            push_proto(&mut blobs, &mut g, "global", &set.global);
            meta.global = g.pop();
            for (j, p) in set.groups.iter().enumerate() {
                push_proto(&mut blobs, &mut meta.groups, &format!("group{j}"), p);
            }
        }
    }

    let meta_json = serde_json::to_vec(&meta).map_err(|e| Error::InvalidInput(e.to_string()))?;
    let mut buf = Vec::new();
    buf.extend_from_slice(CHECKPOINT_MAGIC);
    buf.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    buf.extend_from_slice(&(meta_json.len() as u64).to_le_bytes());
    buf.extend_from_slice(&meta_json);
    buf.extend_from_slice(&(blobs.len() as u32).to_le_bytes());
    for b in &blobs {
        buf.extend_from_slice(&(b.name.len() as u32).to_le_bytes());
        buf.extend_from_slice(b.name.as_bytes());
        buf.extend_from_slice(&(b.value.rows() as u32).to_le_bytes());
        buf.extend_from_slice(&(b.value.cols() as u32).to_le_bytes());
        for &v in b.value.data() {
            buf.extend_from_slice(&(v as f32).to_le_bytes());
        }
    }
    let digest = Sha256::digest(&buf);
    buf.extend_from_slice(&digest);
    Ok(buf)
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len());
        let end = end.ok_or_else(|| Error::Format { line: 0, msg: format!("checkpoint ends early at byte {}", self.pos) })?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }
    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}

/// Named blobs in file order; every one must be claimed exactly once.
struct Blobs(Vec<Option<Blob>>);

impl Blobs {
    fn take(&mut self, name: &str) -> Result<Matrix> {
        self.0
            .iter_mut()
            .find(|b| b.as_ref().is_some_and(|b| b.name == name))
            .and_then(Option::take)
            .map(|b| b.value)
            .ok_or_else(|| Error::Format { line: 0, msg: format!("missing blob {name}") })
    }

    fn fill(&mut self, prefix: &str, p: &mut dyn Params) -> Result<()> {
        let mut err = None;
        p.visit_params_mut(&mut |t| {
            if err.is_some() {
                return;
            }
            match self.take(&format!("{prefix}{}", t.name)) {
                Ok(m) if m.shape() == t.value.shape() => t.value = m,
                Ok(m) => {
                    err = Some(Error::InvalidShape(format!("blob {prefix}{}: {:?} != {:?}", t.name, m.shape(), t.value.shape())))
                }
                Err(e) => err = Some(e),
            }
        });
        err.map_or(Ok(()), Err)
    }

    fn layers(&mut self, prefix: &str, count: usize) -> Result<AdaptiveLayerSet> {
        let layers = (0..count).map(|i| self.take(&format!("{prefix}.layer{i}"))).collect::<Result<Vec<_>>>()?;
        AdaptiveLayerSet::new(layers)
    }

    fn proto(&mut self, tag: &str, backbone: &Arc<Backbone>, meta: &EditorMeta) -> Result<PrototypeModel> {
        let base = self.layers(&format!("{tag}.base"), meta.spec.layer_shapes.len())?;
        let mut editor = EditorNetwork::new(meta.spec.clone(), 0)?;
        self.fill(&format!("{tag}/"), &mut editor)?;
        editor.trained = meta.trained;
        PrototypeModel::new(backbone.clone(), base, editor)
    }

    fn finish(self) -> Result<()> {
        match self.0.into_iter().flatten().next() {
            Some(b) => Err(Error::Format { line: 0, msg: format!("unexpected blob {}", b.name) }),
            None => Ok(()),
        }
    }
}

pub fn from_bytes(buf: &[u8]) -> Result<Checkpoint> {
    let header = CHECKPOINT_MAGIC.len() + 4;
    if buf.len() < header + DIGEST_LEN {
        return Err(Error::Checksum(format!("checkpoint of {} bytes is truncated", buf.len())));
    }
    if &buf[..CHECKPOINT_MAGIC.len()] != CHECKPOINT_MAGIC {
        return Err(Error::Format { line: 0, msg: "not a checkpoint file".into() });
    }
    let version = u32::from_le_bytes(buf[CHECKPOINT_MAGIC.len()..header].try_into().unwrap());
    if version != CHECKPOINT_VERSION {
        return Err(Error::Version { found: version, expected: CHECKPOINT_VERSION });
    }
    let (body, digest) = buf.split_at(buf.len() - DIGEST_LEN);
    if Sha256::digest(body).as_slice() != digest {
        return Err(Error::Checksum("checkpoint content does not match its digest".into()));
    }

    let mut r = Reader { buf: body, pos: header };
    let meta_len = r.u64()? as usize;
    let meta: Meta = serde_json::from_slice(r.take(meta_len)?).map_err(|e| Error::Format { line: 0, msg: e.to_string() })?;
    let config = RunConfig::from_toml_str(&meta.config)?;
    let count = r.u32()? as usize;
    let mut blobs = Vec::with_capacity(count.min(1 << 16));
    for _ in 0..count {
        let name_len = r.u32()? as usize;
        let name = String::from_utf8(r.take(name_len)?.to_vec()).map_err(|e| Error::Format { line: 0, msg: e.to_string() })?;
        let rows = r.u32()? as usize;
        let cols = r.u32()? as usize;
        let raw = r.take(rows.checked_mul(cols).and_then(|n| n.checked_mul(4)).ok_or_else(|| Error::Format { line: 0, msg: "blob too large".into() })?)?;
        let data = raw.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64).collect();
        blobs.push(Some(Blob { name, value: Matrix::from_vec(rows, cols, data)? }));
    }
    if r.pos != body.len() {
        return Err(Error::Format { line: 0, msg: format!("{} trailing bytes", body.len() - r.pos) });
    }
    let mut blobs = Blobs(blobs);

    let backbone = |blobs: &mut Blobs| -> Result<Arc<Backbone>> {
        let spec = meta.backbone.ok_or_else(|| Error::Format { line: 0, msg: "missing backbone spec".into() })?;
        let mut b = Backbone::new(spec, &mut rng_from_seed(0))?;
        blobs.fill("", &mut b)?;
        Ok(Arc::new(b))
    };
    let stage = match meta.stage {
        StageKind::Empty => Stage::Empty,
        StageKind::Dam => {
            let bb = backbone(&mut blobs)?;
            let adaptive = blobs.layers("dam.adaptive", meta.dam_layers)?;
            Stage::Dam(DeviceModel::new(bb, adaptive)?)
        }
        StageKind::Prototypes => {
            let bb = backbone(&mut blobs)?;
            let gm = meta.global.as_ref().ok_or_else(|| Error::Format { line: 0, msg: "missing global prototype".into() })?;
            let global = blobs.proto("global", &bb, gm)?;
            let groups = meta
                .groups
                .iter()
                .enumerate()
                .map(|(j, m)| blobs.proto(&format!("group{j}"), &bb, m))
                .collect::<Result<Vec<_>>>()?;
            Stage::Prototypes(PrototypeSet { global, groups, partition: meta.partition.clone() })
        }
    };
    blobs.finish()?;
    Ok(Checkpoint { config, stage })
}

pub fn save_checkpoint(path: &Path, ckpt: &Checkpoint) -> Result<()> {
    let bytes = to_bytes(ckpt)?;
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    from_bytes(&bytes)
}
