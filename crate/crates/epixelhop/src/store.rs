//! Single-file binary container for fitted models: a fixed magic, a chunk
//! directory with CRC-32 checksums, and little-endian payloads with all
//! floating values at 64 bits. Writes are atomic (temp file + rename) and
//! byte-stable for identical bundles.

use std::collections::BTreeMap;
use std::path::Path;

use ndarray::{Array1, Array2};

use crate::cascade::{CascadeConfig, CascadeModel, HopLayer, SelectionMode};
use crate::color::ColorPca;
use crate::error::{Error, Result};
use crate::gbdt::{BoostedModel, GbdtParams, Tree, TreeNode};
use crate::pipeline::{PairModel, PipelineConfig, Stage1Model};
use crate::saab::{ChannelRole, HopConfig, PoolConfig, SaabNode};
use crate::smoothing::SlsClassifiers;

pub const MAGIC: [u8; 8] = *b"EPXHOP01";
const VERSION: &str = "01";

pub mod chunk_kind {
    pub const BUNDLE_HEADER: u16 = 0x0001;
    pub const COLOR_PCA: u16 = 0x0002;
    pub const CASCADE_P: u16 = 0x0003;
    pub const CASCADE_Q: u16 = 0x0004;
    pub const SLS_P: u16 = 0x0005;
    pub const SLS_Q: u16 = 0x0006;
    pub const META: u16 = 0x0007;
    pub const META_P: u16 = 0x0008;
    pub const META_Q: u16 = 0x0009;
    pub const PAIR_ENTRY: u16 = 0x000a;

    pub fn name(kind: u16) -> &'static str {
        match kind {
            BUNDLE_HEADER => "bundle-header",
            COLOR_PCA => "color-pca",
            CASCADE_P => "cascade-p",
            CASCADE_Q => "cascade-q",
            SLS_P => "sls-p",
            SLS_Q => "sls-q",
            META => "meta",
            META_P => "meta-p",
            META_Q => "meta-q",
            PAIR_ENTRY => "pair-entry",
            _ => "unknown",
        }
    }
}

/// Everything persistable in one file.
#[derive(Debug, Clone, PartialEq)]
pub enum Bundle {
    Stage1(Box<Stage1Model>),
    Pairs(Vec<PairModel>),
}

const BUNDLE_KIND_STAGE1: u8 = 1;
const BUNDLE_KIND_PAIRS: u8 = 2;

// ---------------------------------------------------------------------------
// byte-level encode / decode
// ---------------------------------------------------------------------------

#[derive(Default)]
struct Writer {
    buf: Vec<u8>,
}

impl Writer {
    fn u8(&mut self, v: u8) {
        self.buf.push(v);
    }
    fn u32(&mut self, v: u32) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }
    fn i32(&mut self, v: i32) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }
    fn u64(&mut self, v: u64) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }
    fn usize(&mut self, v: usize) {
        self.u64(v as u64);
    }
    fn f64(&mut self, v: f64) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }
    fn f64s<'a>(&mut self, vals: impl Iterator<Item = &'a f64>) {
        for v in vals {
            self.f64(*v);
        }
    }
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
    what: &'static str,
}

impl<'a> Reader<'a> {
    fn new(buf: &'a [u8], what: &'static str) -> Self {
        Reader { buf, pos: 0, what }
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.buf.len() {
            return Err(Error::Truncated {
                what: self.what.into(),
            });
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }
    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
    fn i32(&mut self) -> Result<i32> {
        Ok(i32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
    fn usize(&mut self) -> Result<usize> {
        Ok(self.u64()? as usize)
    }
    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
    fn f64_vec(&mut self, n: usize) -> Result<Vec<f64>> {
        (0..n).map(|_| self.f64()).collect()
    }

    fn done(&self) -> Result<()> {
        if self.pos != self.buf.len() {
            return Err(Error::Truncated {
                what: self.what.into(),
            });
        }
        Ok(())
    }
}

fn put_color_pca(w: &mut Writer, pca: &ColorPca) {
    w.f64s(pca.basis.iter());
    w.f64s(pca.mean.iter());
    w.f64s(pca.energy_fractions.iter());
}

fn get_color_pca(r: &mut Reader) -> Result<ColorPca> {
    let basis = Array2::from_shape_vec((3, 3), r.f64_vec(9)?).unwrap();
    let mean = Array1::from_vec(r.f64_vec(3)?);
    let energy_fractions = Array1::from_vec(r.f64_vec(3)?);
    Ok(ColorPca {
        basis,
        mean,
        energy_fractions,
    })
}

fn put_hop_config(w: &mut Writer, cfg: &HopConfig) {
    w.u32(cfg.window.0 as u32);
    w.u32(cfg.window.1 as u32);
    w.u32(cfg.stride.0 as u32);
    w.u32(cfg.stride.1 as u32);
    w.u32(cfg.padding as u32);
    match cfg.pool_after {
        Some(p) => {
            w.u8(1);
            w.u32(p.window as u32);
            w.u32(p.stride as u32);
        }
        None => w.u8(0),
    }
    w.f64(cfg.energy_th_intermediate);
    w.f64(cfg.energy_th_discard);
    match cfg.max_channels {
        Some(k) => {
            w.u8(1);
            w.usize(k);
        }
        None => w.u8(0),
    }
}

fn get_hop_config(r: &mut Reader) -> Result<HopConfig> {
    let window = (r.u32()? as usize, r.u32()? as usize);
    let stride = (r.u32()? as usize, r.u32()? as usize);
    let padding = r.u32()? as usize;
    let pool_after = if r.u8()? == 1 {
        Some(PoolConfig {
            window: r.u32()? as usize,
            stride: r.u32()? as usize,
        })
    } else {
        None
    };
    let energy_th_intermediate = r.f64()?;
    let energy_th_discard = r.f64()?;
    let max_channels = if r.u8()? == 1 { Some(r.usize()?) } else { None };
    Ok(HopConfig {
        window,
        stride,
        padding,
        pool_after,
        energy_th_intermediate,
        energy_th_discard,
        max_channels,
    })
}

fn put_cascade_config(w: &mut Writer, cfg: &CascadeConfig) {
    w.u8(match cfg.mode {
        SelectionMode::FixedK => 0,
        SelectionMode::Threshold => 1,
    });
    w.usize(cfg.hops.len());
    for h in &cfg.hops {
        put_hop_config(w, h);
    }
}

fn get_cascade_config(r: &mut Reader) -> Result<CascadeConfig> {
    let mode = match r.u8()? {
        0 => SelectionMode::FixedK,
        1 => SelectionMode::Threshold,
        _ => {
            return Err(Error::Truncated {
                what: "selection mode".into(),
            })
        }
    };
    let count = r.usize()?;
    let hops = (0..count)
        .map(|_| get_hop_config(r))
        .collect::<Result<_>>()?;
    Ok(CascadeConfig { hops, mode })
}

fn put_saab_node(w: &mut Writer, node: &SaabNode) {
    let n = node.patch_len();
    let k = node.ac_kernels.nrows();
    w.usize(n);
    w.usize(k);
    w.f64s(node.dc_kernel.iter());
    w.f64s(node.ac_kernels.iter());
    w.f64s(node.eigenvalues.iter());
    w.f64(node.parent_energy);
    w.f64s(node.child_energies.iter());
    for role in &node.child_roles {
        w.u8(match role {
            ChannelRole::Intermediate => 0,
            ChannelRole::Leaf => 1,
            ChannelRole::Discarded => 2,
        });
    }
}

fn get_saab_node(r: &mut Reader) -> Result<SaabNode> {
    let n = r.usize()?;
    let k = r.usize()?;
    let dc_kernel = Array1::from_vec(r.f64_vec(n)?);
    let ac_kernels = Array2::from_shape_vec((k, n), r.f64_vec(k * n)?).unwrap();
    let eigenvalues = Array1::from_vec(r.f64_vec(k)?);
    let parent_energy = r.f64()?;
    let child_energies = Array1::from_vec(r.f64_vec(k + 1)?);
    let child_roles = (0..k + 1)
        .map(|_| {
            Ok(match r.u8()? {
                0 => ChannelRole::Intermediate,
                1 => ChannelRole::Leaf,
                _ => ChannelRole::Discarded,
            })
        })
        .collect::<Result<_>>()?;
    Ok(SaabNode {
        dc_kernel,
        ac_kernels,
        eigenvalues,
        parent_energy,
        child_energies,
        child_roles,
    })
}

fn put_pairs(w: &mut Writer, pairs: &[(usize, usize)]) {
    w.usize(pairs.len());
    for &(a, b) in pairs {
        w.u32(a as u32);
        w.u32(b as u32);
    }
}

fn get_pairs(r: &mut Reader) -> Result<Vec<(usize, usize)>> {
    let n = r.usize()?;
    (0..n)
        .map(|_| Ok((r.u32()? as usize, r.u32()? as usize)))
        .collect()
}

fn put_cascade_model(w: &mut Writer, model: &CascadeModel) {
    put_cascade_config(w, &model.config);
    w.usize(model.input_side);
    w.usize(model.hops.len());
    for layer in &model.hops {
        w.usize(layer.nodes.len());
        for node in &layer.nodes {
            put_saab_node(w, node);
        }
        put_pairs(w, &layer.emit);
        put_pairs(w, &layer.forward);
        w.usize(layer.forward_emit_pos.len());
        for &p in &layer.forward_emit_pos {
            w.usize(p);
        }
    }
    w.usize(model.output_shapes.len());
    for &(a, b, c) in &model.output_shapes {
        w.usize(a);
        w.usize(b);
        w.usize(c);
    }
}

fn get_cascade_model(r: &mut Reader) -> Result<CascadeModel> {
    let config = get_cascade_config(r)?;
    let input_side = r.usize()?;
    let layer_count = r.usize()?;
    let mut hops = Vec::with_capacity(layer_count);
    for _ in 0..layer_count {
        let node_count = r.usize()?;
        let nodes = (0..node_count)
            .map(|_| get_saab_node(r))
            .collect::<Result<_>>()?;
        let emit = get_pairs(r)?;
        let forward = get_pairs(r)?;
        let pos_count = r.usize()?;
        let forward_emit_pos = (0..pos_count).map(|_| r.usize()).collect::<Result<_>>()?;
        hops.push(HopLayer {
            nodes,
            emit,
            forward,
            forward_emit_pos,
        });
    }
    let shape_count = r.usize()?;
    let output_shapes = (0..shape_count)
        .map(|_| Ok((r.usize()?, r.usize()?, r.usize()?)))
        .collect::<Result<_>>()?;
    Ok(CascadeModel {
        config,
        hops,
        output_shapes,
        input_side,
    })
}

fn put_gbdt_params(w: &mut Writer, p: &GbdtParams) {
    w.usize(p.rounds);
    w.usize(p.max_depth);
    w.f64(p.learning_rate);
    w.usize(p.min_leaf_samples);
    w.f64(p.subsample_fraction);
    w.f64(p.lambda);
    w.u64(p.seed);
}

fn get_gbdt_params(r: &mut Reader) -> Result<GbdtParams> {
    Ok(GbdtParams {
        rounds: r.usize()?,
        max_depth: r.usize()?,
        learning_rate: r.f64()?,
        min_leaf_samples: r.usize()?,
        subsample_fraction: r.f64()?,
        lambda: r.f64()?,
        seed: r.u64()?,
    })
}

fn put_boosted(w: &mut Writer, m: &BoostedModel) {
    put_gbdt_params(w, &m.params);
    w.usize(m.class_count);
    w.usize(m.feature_width);
    w.usize(m.trees.len());
    for round in &m.trees {
        w.usize(round.len());
        for tree in round {
            w.usize(tree.nodes.len());
            for n in &tree.nodes {
                w.u32(n.feature);
                w.f64(n.threshold);
                w.u8(n.split_bin);
                w.i32(n.left);
                w.i32(n.right);
                w.f64(n.value);
            }
        }
    }
    w.usize(m.train_loss.len());
    w.f64s(m.train_loss.iter());
}

fn get_boosted(r: &mut Reader) -> Result<BoostedModel> {
    let params = get_gbdt_params(r)?;
    let class_count = r.usize()?;
    let feature_width = r.usize()?;
    let round_count = r.usize()?;
    let mut trees = Vec::with_capacity(round_count);
    for _ in 0..round_count {
        let class_trees = r.usize()?;
        let mut round = Vec::with_capacity(class_trees);
        for _ in 0..class_trees {
            let node_count = r.usize()?;
            let nodes = (0..node_count)
                .map(|_| {
                    Ok(TreeNode {
                        feature: r.u32()?,
                        threshold: r.f64()?,
                        split_bin: r.u8()?,
                        left: r.i32()?,
                        right: r.i32()?,
                        value: r.f64()?,
                    })
                })
                .collect::<Result<_>>()?;
            round.push(Tree { nodes });
        }
        trees.push(round);
    }
    let loss_count = r.usize()?;
    let train_loss = r.f64_vec(loss_count)?;
    Ok(BoostedModel {
        params,
        class_count,
        feature_width,
        trees,
        train_loss,
    })
}

fn put_sls(w: &mut Writer, s: &SlsClassifiers) {
    w.u8(match s.init_style {
        crate::smoothing::InitStyle::FeaturesOnly => 0,
        crate::smoothing::InitStyle::WithChildLabels => 1,
    });
    w.usize(s.num_iter);
    w.usize(s.class_count);
    w.usize(s.init.len());
    for m in &s.init {
        put_boosted(w, m);
    }
    w.usize(s.updates.len());
    for round in &s.updates {
        w.usize(round.len());
        for m in round {
            put_boosted(w, m);
        }
    }
}

fn get_sls(r: &mut Reader) -> Result<SlsClassifiers> {
    let init_style = match r.u8()? {
        0 => crate::smoothing::InitStyle::FeaturesOnly,
        1 => crate::smoothing::InitStyle::WithChildLabels,
        _ => {
            return Err(Error::Truncated {
                what: "init style".into(),
            })
        }
    };
    let num_iter = r.usize()?;
    let class_count = r.usize()?;
    let init_count = r.usize()?;
    let init = (0..init_count)
        .map(|_| get_boosted(r))
        .collect::<Result<_>>()?;
    let round_count = r.usize()?;
    let updates = (0..round_count)
        .map(|_| {
            let n = r.usize()?;
            (0..n).map(|_| get_boosted(r)).collect::<Result<Vec<_>>>()
        })
        .collect::<Result<_>>()?;
    Ok(SlsClassifiers {
        init_style,
        init,
        updates,
        num_iter,
        class_count,
    })
}

fn put_pipeline_config(w: &mut Writer, c: &PipelineConfig) {
    w.u64(c.seed);
    w.usize(c.class_count);
    put_cascade_config(w, &c.cascade_p);
    put_cascade_config(w, &c.cascade_q);
    put_gbdt_params(w, &c.gbdt);
    w.usize(c.num_iter_stage1);
    w.usize(c.num_iter_stage2);
    w.u8(c.augment as u8);
    w.usize(c.resolve_top_k);
}

fn get_pipeline_config(r: &mut Reader) -> Result<PipelineConfig> {
    Ok(PipelineConfig {
        seed: r.u64()?,
        class_count: r.usize()?,
        cascade_p: get_cascade_config(r)?,
        cascade_q: get_cascade_config(r)?,
        gbdt: get_gbdt_params(r)?,
        num_iter_stage1: r.usize()?,
        num_iter_stage2: r.usize()?,
        augment: r.u8()? == 1,
        resolve_top_k: r.usize()?,
    })
}

fn put_pair_model(w: &mut Writer, p: &PairModel) {
    w.u32(p.pair.0 as u32);
    w.u32(p.pair.1 as u32);
    put_sls(w, &p.sls_p);
    put_sls(w, &p.sls_q);
    put_boosted(w, &p.meta);
}

fn get_pair_model(r: &mut Reader) -> Result<PairModel> {
    Ok(PairModel {
        pair: (r.u32()? as usize, r.u32()? as usize),
        sls_p: get_sls(r)?,
        sls_q: get_sls(r)?,
        meta: get_boosted(r)?,
    })
}

// ---------------------------------------------------------------------------
// container assembly
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq)]
pub struct ChunkInfo {
    pub kind: u16,
    pub offset: u64,
    pub len: u64,
    pub crc32: u32,
}

fn encode_container(chunks: &[(u16, Vec<u8>)]) -> Vec<u8> {
    let dir_len = 8 + 4 + chunks.len() * 22;
    let mut out = Vec::with_capacity(dir_len + chunks.iter().map(|c| c.1.len()).sum::<usize>());
    out.extend_from_slice(&MAGIC);
    out.extend_from_slice(&(chunks.len() as u32).to_le_bytes());
    let mut offset = dir_len as u64;
    for (kind, payload) in chunks {
        out.extend_from_slice(&kind.to_le_bytes());
        out.extend_from_slice(&offset.to_le_bytes());
        out.extend_from_slice(&(payload.len() as u64).to_le_bytes());
        out.extend_from_slice(&crc32fast::hash(payload).to_le_bytes());
        offset += payload.len() as u64;
    }
    for (_, payload) in chunks {
        out.extend_from_slice(payload);
    }
    out
}

/// Read and validate the chunk directory (magic, version, bounds, overlap).
pub fn read_manifest(bytes: &[u8]) -> Result<Vec<ChunkInfo>> {
    if bytes.len() < 12 {
        return Err(Error::Truncated {
            what: "container header".into(),
        });
    }
    if bytes[..8] != MAGIC {
        if bytes[..6] == MAGIC[..6] {
            return Err(Error::UnsupportedVersion {
                version: [bytes[6], bytes[7]],
            });
        }
        return Err(Error::BadMagic {
            found: bytes[..8].try_into().unwrap(),
        });
    }
    let count = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
    let dir_len = 12 + count * 22;
    if bytes.len() < dir_len {
        return Err(Error::Truncated {
            what: "chunk directory".into(),
        });
    }
    let mut chunks = Vec::with_capacity(count);
    for i in 0..count {
        let base = 12 + i * 22;
        let kind = u16::from_le_bytes(bytes[base..base + 2].try_into().unwrap());
        let offset = u64::from_le_bytes(bytes[base + 2..base + 10].try_into().unwrap());
        let len = u64::from_le_bytes(bytes[base + 10..base + 18].try_into().unwrap());
        let crc32 = u32::from_le_bytes(bytes[base + 18..base + 22].try_into().unwrap());
        if offset < dir_len as u64 || offset + len > bytes.len() as u64 {
            return Err(Error::Truncated {
                what: format!("chunk {} payload", chunk_kind::name(kind)),
            });
        }
        chunks.push(ChunkInfo {
            kind,
            offset,
            len,
            crc32,
        });
    }
    let mut spans: Vec<(u64, u64)> = chunks
        .iter()
        .map(|c| (c.offset, c.offset + c.len))
        .collect();
    spans.sort_unstable();
    for w in spans.windows(2) {
        if w[1].0 < w[0].1 {
            return Err(Error::Truncated {
                what: "overlapping chunk directory entries".into(),
            });
        }
    }
    Ok(chunks)
}

fn verified_payload<'a>(bytes: &'a [u8], info: &ChunkInfo) -> Result<&'a [u8]> {
    let payload = &bytes[info.offset as usize..(info.offset + info.len) as usize];
    if crc32fast::hash(payload) != info.crc32 {
        return Err(Error::ChecksumMismatch {
            chunk: chunk_kind::name(info.kind).into(),
        });
    }
    Ok(payload)
}

fn bundle_chunks(bundle: &Bundle) -> Vec<(u16, Vec<u8>)> {
    let mut chunks = Vec::new();
    match bundle {
        Bundle::Stage1(model) => {
            let mut header = Writer::default();
            header.u8(BUNDLE_KIND_STAGE1);
            put_pipeline_config(&mut header, &model.config);
            chunks.push((chunk_kind::BUNDLE_HEADER, header.buf));

            let mut w = Writer::default();
            put_color_pca(&mut w, &model.color_pca);
            chunks.push((chunk_kind::COLOR_PCA, w.buf));

            let mut w = Writer::default();
            put_cascade_model(&mut w, &model.cascade_p);
            chunks.push((chunk_kind::CASCADE_P, w.buf));
            let mut w = Writer::default();
            put_cascade_model(&mut w, &model.cascade_q);
            chunks.push((chunk_kind::CASCADE_Q, w.buf));

            let mut w = Writer::default();
            put_sls(&mut w, &model.sls_p);
            chunks.push((chunk_kind::SLS_P, w.buf));
            let mut w = Writer::default();
            put_sls(&mut w, &model.sls_q);
            chunks.push((chunk_kind::SLS_Q, w.buf));

            let mut w = Writer::default();
            put_boosted(&mut w, &model.meta);
            chunks.push((chunk_kind::META, w.buf));
            let mut w = Writer::default();
            put_boosted(&mut w, &model.meta_p);
            chunks.push((chunk_kind::META_P, w.buf));
            let mut w = Writer::default();
            put_boosted(&mut w, &model.meta_q);
            chunks.push((chunk_kind::META_Q, w.buf));
        }
        Bundle::Pairs(pairs) => {
            let mut header = Writer::default();
            header.u8(BUNDLE_KIND_PAIRS);
            header.usize(pairs.len());
            chunks.push((chunk_kind::BUNDLE_HEADER, header.buf));
            for pair in pairs {
                let mut w = Writer::default();
                put_pair_model(&mut w, pair);
                chunks.push((chunk_kind::PAIR_ENTRY, w.buf));
            }
        }
    }
    chunks
}

/// Serialize a bundle to its container bytes.
pub fn to_bytes(bundle: &Bundle) -> Vec<u8> {
    encode_container(&bundle_chunks(bundle))
}

/// Decode a container.
pub fn from_bytes(bytes: &[u8]) -> Result<Bundle> {
    let manifest = read_manifest(bytes)?;
    let mut by_kind: BTreeMap<u16, Vec<&ChunkInfo>> = BTreeMap::new();
    for info in &manifest {
        by_kind.entry(info.kind).or_default().push(info);
    }
    for kind in by_kind.keys() {
        if chunk_kind::name(*kind) == "unknown" {
            return Err(Error::UnknownChunk {
                kind: *kind,
                version: VERSION.into(),
            });
        }
    }
    let single = |kind: u16| -> Result<&[u8]> {
        let infos = by_kind.get(&kind).ok_or_else(|| Error::Truncated {
            what: format!("missing chunk {}", chunk_kind::name(kind)),
        })?;
        verified_payload(bytes, infos[0])
    };

    let header = single(chunk_kind::BUNDLE_HEADER)?;
    let mut r = Reader::new(header, "bundle header");
    match r.u8()? {
        BUNDLE_KIND_STAGE1 => {
            let config = get_pipeline_config(&mut r)?;
            r.done()?;
            let mut rr = Reader::new(single(chunk_kind::COLOR_PCA)?, "color pca");
            let color_pca = get_color_pca(&mut rr)?;
            rr.done()?;
            let mut rr = Reader::new(single(chunk_kind::CASCADE_P)?, "cascade p");
            let cascade_p = get_cascade_model(&mut rr)?;
            rr.done()?;
            let mut rr = Reader::new(single(chunk_kind::CASCADE_Q)?, "cascade q");
            let cascade_q = get_cascade_model(&mut rr)?;
            rr.done()?;
            let mut rr = Reader::new(single(chunk_kind::SLS_P)?, "sls p");
            let sls_p = get_sls(&mut rr)?;
            rr.done()?;
            let mut rr = Reader::new(single(chunk_kind::SLS_Q)?, "sls q");
            let sls_q = get_sls(&mut rr)?;
            rr.done()?;
            let mut rr = Reader::new(single(chunk_kind::META)?, "meta");
            let meta = get_boosted(&mut rr)?;
            rr.done()?;
            let mut rr = Reader::new(single(chunk_kind::META_P)?, "meta p");
            let meta_p = get_boosted(&mut rr)?;
            rr.done()?;
            let mut rr = Reader::new(single(chunk_kind::META_Q)?, "meta q");
            let meta_q = get_boosted(&mut rr)?;
            rr.done()?;
            Ok(Bundle::Stage1(Box::new(Stage1Model {
                config,
                color_pca,
                cascade_p,
                cascade_q,
                sls_p,
                sls_q,
                meta,
                meta_p,
                meta_q,
            })))
        }
        BUNDLE_KIND_PAIRS => {
            let count = r.usize()?;
            r.done()?;
            let entries = by_kind
                .get(&chunk_kind::PAIR_ENTRY)
                .map(|v| v.as_slice())
                .unwrap_or(&[]);
            if entries.len() != count {
                return Err(Error::Truncated {
                    what: format!("expected {count} pair entries, found {}", entries.len()),
                });
            }
            let mut pairs = Vec::with_capacity(count);
            for info in entries {
                let payload = verified_payload(bytes, info)?;
                let mut r = Reader::new(payload, "pair entry");
                pairs.push(get_pair_model(&mut r)?);
                r.done()?;
            }
            Ok(Bundle::Pairs(pairs))
        }
        other => Err(Error::Truncated {
            what: format!("unknown bundle kind {other}"),
        }),
    }
}

/// Write a bundle atomically: serialize, write to a temp file next to the
/// target, then rename over it.
pub fn save(bundle: &Bundle, path: &Path) -> Result<()> {
    let bytes = to_bytes(bundle);
    let tmp = path.with_extension("tmp");
    let io_err = |source: std::io::Error| Error::Io {
        path: path.to_path_buf(),
        source,
    };
    std::fs::write(&tmp, &bytes).map_err(io_err)?;
    std::fs::rename(&tmp, path).map_err(io_err)?;
    Ok(())
}

/// Load a bundle from disk, verifying magic, directory, and checksums.
pub fn load(path: &Path) -> Result<Bundle> {
    let bytes = std::fs::read(path).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })?;
    from_bytes(&bytes)
}
