//! Multi-hop cascades: per-channel Saab nodes linked by an energy tree, with
//! channel routing (forward / emit / discard) and interleaved max-pooling.

use ndarray::{Array2, Array3};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::linalg::constant_complement_basis;
use crate::saab::{
    for_each_patch, max_pool, ChannelRole, HopConfig, PoolConfig, SaabNode, SaabPass1, SaabPass2,
};

/// Images per parallel chunk during fitting; fixed for thread-count
/// independence.
const CHUNK: usize = 32;

/// How channels are kept at each hop.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SelectionMode {
    /// Keep exactly `max_channels` per hop, by descending energy.
    FixedK,
    /// Keep channels by the TH1/TH2 energy thresholds.
    Threshold,
}

/// Full cascade configuration: per-hop geometry plus the selection mode.
#[derive(Debug, Clone, PartialEq)]
pub struct CascadeConfig {
    pub hops: Vec<HopConfig>,
    pub mode: SelectionMode,
}

/// Emitted-channel caps reproducing the default architecture on the first
/// principal color channel.
pub const P_CHANNEL_CAPS: [usize; 4] = [24, 144, 203, 211];
/// Same, for the second principal channel.
pub const Q_CHANNEL_CAPS: [usize; 4] = [22, 114, 174, 185];

impl CascadeConfig {
    /// The standard four-hop geometry: 5x5 windows with pad 2 and pooling
    /// after the first two hops, then 3x3 windows.
    pub fn four_hop(mode: SelectionMode, th1: f64, th2: f64, caps: [Option<usize>; 4]) -> Self {
        let mut hops = vec![
            HopConfig::new(5, 2, Some(PoolConfig::default())),
            HopConfig::new(5, 2, Some(PoolConfig::default())),
            HopConfig::new(3, 0, None),
            HopConfig::new(3, 0, None),
        ];
        for (hop, cap) in hops.iter_mut().zip(caps) {
            hop.energy_th_intermediate = th1;
            hop.energy_th_discard = th2;
            hop.max_channels = cap;
        }
        CascadeConfig { hops, mode }
    }

    pub fn default_p() -> Self {
        Self::four_hop(
            SelectionMode::FixedK,
            1e-12,
            1e-12,
            P_CHANNEL_CAPS.map(Some),
        )
    }

    pub fn default_q() -> Self {
        Self::four_hop(
            SelectionMode::FixedK,
            1e-12,
            1e-12,
            Q_CHANNEL_CAPS.map(Some),
        )
    }

    pub fn validate(&self) -> Result<()> {
        if self.hops.is_empty() {
            return Err(Error::Config("cascade needs at least one hop".into()));
        }
        for hop in &self.hops {
            hop.validate()?;
            if self.mode == SelectionMode::FixedK && hop.max_channels.is_none() {
                return Err(Error::Config(
                    "fixed-K selection requires max_channels on every hop".into(),
                ));
            }
            if hop.max_channels == Some(0) {
                return Err(Error::Config("max_channels must be positive".into()));
            }
        }
        Ok(())
    }
}

/// Raw and pooled grid sides per hop for a given input side.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct HopGeometry {
    pub raw_side: usize,
    pub pooled_side: Option<usize>,
}

/// Spatial sides at every hop of a cascade configuration.
pub fn hop_geometry(config: &CascadeConfig, input_side: usize) -> Result<Vec<HopGeometry>> {
    let mut sides = Vec::with_capacity(config.hops.len());
    let mut side = input_side;
    for cfg in &config.hops {
        let raw = cfg.out_side(side)?;
        let pooled = match cfg.pool_after {
            Some(pool) => {
                if raw < pool.window {
                    return Err(Error::WindowTooLarge {
                        window: pool.window,
                        padded: raw,
                    });
                }
                Some((raw - pool.window) / pool.stride + 1)
            }
            None => None,
        };
        sides.push(HopGeometry {
            raw_side: raw,
            pooled_side: pooled,
        });
        side = pooled.unwrap_or(raw);
    }
    Ok(sides)
}

/// One fitted hop: a node per forwarded input channel plus the channel
/// routing lists.
#[derive(Debug, Clone, PartialEq)]
pub struct HopLayer {
    pub nodes: Vec<SaabNode>,
    /// Emitted (leaf + intermediate) children as (node, child), channel order
    /// of the hop's feature tensor.
    pub emit: Vec<(usize, usize)>,
    /// Forwarded children as (node, child), order of the next hop's nodes.
    pub forward: Vec<(usize, usize)>,
    /// Position of each forwarded channel inside `emit`.
    pub forward_emit_pos: Vec<usize>,
}

/// A fitted multi-hop cascade for one color channel.
#[derive(Debug, Clone, PartialEq)]
pub struct CascadeModel {
    pub config: CascadeConfig,
    pub hops: Vec<HopLayer>,
    /// (S, S, K) of the raw feature tensor per hop.
    pub output_shapes: Vec<(usize, usize, usize)>,
    pub input_side: usize,
}

/// Per-hop feature tensors produced by [`apply_cascade`].
#[derive(Debug, Clone, PartialEq)]
pub struct HopOutput {
    pub raw: Array3<f64>,
    pub pooled: Option<Array3<f64>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CascadeFeatures {
    pub hops: Vec<HopOutput>,
}

/// Decide each child's fate and build the emit / forward lists.
#[allow(clippy::type_complexity)]
fn assign_roles(
    nodes: &mut [SaabNode],
    cfg: &HopConfig,
    mode: SelectionMode,
    last_hop: bool,
    hop_idx: usize,
) -> Result<(Vec<(usize, usize)>, Vec<(usize, usize)>)> {
    let th1 = cfg.energy_th_intermediate;
    let th2 = cfg.energy_th_discard;

    // DC children are never discarded: the patch mean carries the bulk of the
    // energy and the tree semantics keep it routable at every hop.
    let mut kept: Vec<(usize, usize, f64)> = Vec::new();
    let mut rest: Vec<(usize, usize, f64)> = Vec::new();
    for (ni, node) in nodes.iter().enumerate() {
        for ci in 0..node.child_count() {
            let e = node.child_energies[ci];
            if ci == 0 {
                kept.push((ni, ci, e));
            } else {
                rest.push((ni, ci, e));
            }
        }
    }

    match mode {
        SelectionMode::FixedK => {
            let cap = cfg.max_channels.expect("validated");
            rest.sort_by(|a, b| {
                b.2.partial_cmp(&a.2)
                    .unwrap()
                    .then(a.0.cmp(&b.0))
                    .then(a.1.cmp(&b.1))
            });
            if kept.len() > cap {
                kept.sort_by(|a, b| {
                    b.2.partial_cmp(&a.2)
                        .unwrap()
                        .then(a.0.cmp(&b.0))
                        .then(a.1.cmp(&b.1))
                });
                kept.truncate(cap);
            } else {
                let room = cap - kept.len();
                kept.extend(rest.into_iter().take(room));
            }
        }
        SelectionMode::Threshold => {
            kept.extend(rest.into_iter().filter(|&(_, _, e)| e >= th2));
            if let Some(cap) = cfg.max_channels {
                if kept.len() > cap {
                    kept.sort_by(|a, b| {
                        let dc_a = (a.1 == 0) as u8;
                        let dc_b = (b.1 == 0) as u8;
                        dc_b.cmp(&dc_a)
                            .then(b.2.partial_cmp(&a.2).unwrap())
                            .then(a.0.cmp(&b.0))
                            .then(a.1.cmp(&b.1))
                    });
                    kept.truncate(cap);
                }
            }
        }
    }

    for node in nodes.iter_mut() {
        node.child_roles.fill(ChannelRole::Discarded);
    }
    for &(ni, ci, e) in &kept {
        let role = if last_hop {
            ChannelRole::Leaf
        } else if ci == 0 || e >= th1 {
            ChannelRole::Intermediate
        } else {
            ChannelRole::Leaf
        };
        nodes[ni].child_roles[ci] = role;
    }

    let mut emit = Vec::new();
    let mut forward = Vec::new();
    for (ni, node) in nodes.iter().enumerate() {
        for (ci, role) in node.child_roles.iter().enumerate() {
            match role {
                ChannelRole::Intermediate => {
                    emit.push((ni, ci));
                    forward.push((ni, ci));
                }
                ChannelRole::Leaf => emit.push((ni, ci)),
                ChannelRole::Discarded => {}
            }
        }
    }
    if !last_hop && forward.is_empty() {
        return Err(Error::EmptyIntermediate {
            hop: hop_idx + 1,
            th1,
        });
    }
    Ok((emit, forward))
}

/// Project an image's channel maps through one fitted hop, returning the
/// forwarded coefficient maps (pooled when the hop pools).
#[allow(clippy::needless_range_loop)]
fn forward_image(
    maps: &[Array2<f64>],
    layer: &HopLayer,
    cfg: &HopConfig,
    out_side: usize,
) -> Vec<Array2<f64>> {
    let mut out: Vec<Array2<f64>> = layer
        .forward
        .iter()
        .map(|_| Array2::zeros((out_side, out_side)))
        .collect();
    // Group forwarded children by node so each node's patches are walked once.
    let mut fi = 0;
    while fi < layer.forward.len() {
        let node_idx = layer.forward[fi].0;
        let mut until = fi;
        while until < layer.forward.len() && layer.forward[until].0 == node_idx {
            until += 1;
        }
        let node = &layer.nodes[node_idx];
        let mut pos = 0usize;
        for_each_patch(&maps[node_idx], cfg, |patch| {
            let (r, c) = (pos / out_side, pos % out_side);
            for slot in fi..until {
                let (_, ci) = layer.forward[slot];
                out[slot][[r, c]] = node.project_child(patch, ci);
            }
            pos += 1;
        });
        fi = until;
    }
    if let Some(pool) = cfg.pool_after {
        out = out
            .into_iter()
            .map(|m| {
                let (s, _) = m.dim();
                let cube = m.into_shape_with_order((s, s, 1)).unwrap();
                let pooled = max_pool(&cube, pool).expect("pool geometry validated");
                let ps = pooled.dim().0;
                pooled.into_shape_with_order((ps, ps)).unwrap()
            })
            .collect();
    }
    out
}

/// Fit a cascade on one channel map per training image.
pub fn fit_cascade(channel_maps: &[Array2<f64>], config: &CascadeConfig) -> Result<CascadeModel> {
    config.validate()?;
    if channel_maps.is_empty() {
        return Err(Error::InsufficientSamples { got: 0, need: 1 });
    }
    let input_side = channel_maps[0].nrows();
    for m in channel_maps {
        if m.nrows() != input_side || m.ncols() != input_side {
            return Err(Error::InconsistentShapes {
                level: 0,
                expected: input_side,
                got: m.nrows(),
            });
        }
    }
    hop_geometry(config, input_side)?;

    let last = config.hops.len() - 1;
    let mut current: Vec<Vec<Array2<f64>>> = channel_maps.iter().map(|m| vec![m.clone()]).collect();
    let mut parent_energies = vec![1.0f64];
    let mut layers: Vec<HopLayer> = Vec::new();
    let mut output_shapes = Vec::new();
    let mut side = input_side;

    for (h, cfg) in config.hops.iter().enumerate() {
        let out_side = cfg.out_side(side)?;
        let n = cfg.patch_len();
        let n_ch = current[0].len();
        if current.len() * out_side * out_side < n {
            return Err(Error::InsufficientSamples {
                got: current.len() * out_side * out_side,
                need: n,
            });
        }
        let basis = constant_complement_basis(n);
        let inv_sqrt_n = 1.0 / (n as f64).sqrt();

        let pass1: Vec<SaabPass1> = {
            let partials: Vec<Vec<SaabPass1>> = current
                .par_chunks(CHUNK)
                .map(|chunk| {
                    let mut acc: Vec<SaabPass1> = (0..n_ch).map(|_| SaabPass1::new(n)).collect();
                    for img in chunk {
                        for (ch, map) in img.iter().enumerate() {
                            for_each_patch(map, cfg, |p| acc[ch].add(p, &basis, inv_sqrt_n));
                        }
                    }
                    acc
                })
                .collect();
            let mut merged: Vec<SaabPass1> = (0..n_ch).map(|_| SaabPass1::new(n)).collect();
            for part in &partials {
                for (ch, p) in part.iter().enumerate() {
                    merged[ch].merge(p);
                }
            }
            merged
        };
        let means: Vec<(Vec<f64>, f64)> = pass1
            .iter()
            .map(|p| {
                let m = p.count as f64;
                (p.rho_sum.iter().map(|v| v / m).collect(), p.dc_sum / m)
            })
            .collect();

        let pass2: Vec<SaabPass2> = {
            let partials: Vec<Vec<SaabPass2>> = current
                .par_chunks(CHUNK)
                .map(|chunk| {
                    let mut acc: Vec<SaabPass2> = (0..n_ch).map(|_| SaabPass2::new(n)).collect();
                    let mut scratch = vec![0.0f64; n - 1];
                    for img in chunk {
                        for (ch, map) in img.iter().enumerate() {
                            let (rho_mean, dc_mean) = &means[ch];
                            for_each_patch(map, cfg, |p| {
                                acc[ch].add(p, &basis, inv_sqrt_n, rho_mean, *dc_mean, &mut scratch)
                            });
                        }
                    }
                    acc
                })
                .collect();
            let mut merged: Vec<SaabPass2> = (0..n_ch).map(|_| SaabPass2::new(n)).collect();
            for part in &partials {
                for (ch, p) in part.iter().enumerate() {
                    merged[ch].merge(p);
                }
            }
            merged
        };

        let mut nodes: Vec<SaabNode> = (0..n_ch)
            .into_par_iter()
            .map(|ch| {
                crate::saab::node_from_moments(
                    &pass1[ch],
                    &pass2[ch],
                    &basis,
                    n,
                    n - 1,
                    parent_energies[ch],
                )
            })
            .collect();

        let (emit, forward) = assign_roles(&mut nodes, cfg, config.mode, h == last, h)?;
        let forward_emit_pos = forward
            .iter()
            .map(|f| emit.iter().position(|e| e == f).unwrap())
            .collect();
        let layer = HopLayer {
            nodes,
            emit,
            forward,
            forward_emit_pos,
        };

        if h != last {
            current = current
                .par_iter()
                .map(|maps| forward_image(maps, &layer, cfg, out_side))
                .collect();
            parent_energies = layer
                .forward
                .iter()
                .map(|&(ni, ci)| layer.nodes[ni].child_energies[ci])
                .collect();
        }
        output_shapes.push((out_side, out_side, layer.emit.len()));
        side = match cfg.pool_after {
            Some(pool) => (out_side - pool.window) / pool.stride + 1,
            None => out_side,
        };
        layers.push(layer);
    }

    Ok(CascadeModel {
        config: config.clone(),
        hops: layers,
        output_shapes,
        input_side,
    })
}

/// Run one channel map through a fitted cascade, returning the raw (and,
/// where configured, pooled) feature tensor of every hop.
pub fn apply_cascade(map: &Array2<f64>, model: &CascadeModel) -> Result<CascadeFeatures> {
    if map.nrows() != model.input_side || map.ncols() != model.input_side {
        return Err(Error::InconsistentShapes {
            level: 0,
            expected: model.input_side,
            got: map.nrows(),
        });
    }
    let mut current: Vec<Array2<f64>> = vec![map.clone()];
    let mut hops = Vec::with_capacity(model.hops.len());
    let mut side = model.input_side;

    for (layer, cfg) in model.hops.iter().zip(&model.config.hops) {
        let out_side = cfg.out_side(side)?;
        if current.len() != layer.nodes.len() {
            return Err(Error::DimensionMismatch {
                context: "cascade channel count".into(),
                expected: layer.nodes.len(),
                got: current.len(),
            });
        }
        let mut raw = Array3::<f64>::zeros((out_side, out_side, layer.emit.len()));
        let mut ei = 0;
        while ei < layer.emit.len() {
            let node_idx = layer.emit[ei].0;
            let mut until = ei;
            while until < layer.emit.len() && layer.emit[until].0 == node_idx {
                until += 1;
            }
            let node = &layer.nodes[node_idx];
            let mut pos = 0usize;
            for_each_patch(&current[node_idx], cfg, |patch| {
                let (r, c) = (pos / out_side, pos % out_side);
                for slot in ei..until {
                    let (_, ci) = layer.emit[slot];
                    raw[[r, c, slot]] = node.project_child(patch, ci);
                }
                pos += 1;
            });
            ei = until;
        }
        let pooled = match cfg.pool_after {
            Some(pool) => Some(max_pool(&raw, pool)?),
            None => None,
        };
        let source = pooled.as_ref().unwrap_or(&raw);
        let src_side = source.dim().0;
        current = layer
            .forward_emit_pos
            .iter()
            .map(|&pos| Array2::from_shape_fn((src_side, src_side), |(r, c)| source[[r, c, pos]]))
            .collect();
        side = src_side;
        hops.push(HopOutput { raw, pooled });
    }
    Ok(CascadeFeatures { hops })
}

/// Inclusive input-image footprint (row range, col range) of one node at one
/// hop, composed through windows and any interleaved pooling.
pub fn input_footprint(
    config: &CascadeConfig,
    input_side: usize,
    hop: usize,
    node: (usize, usize),
) -> Result<((usize, usize), (usize, usize))> {
    let geom = hop_geometry(config, input_side)?;
    let mut r = (node.0 as isize, node.0 as isize);
    let mut c = (node.1 as isize, node.1 as isize);
    for h in (0..=hop).rev() {
        let cfg = &config.hops[h];
        let in_side = if h == 0 {
            input_side
        } else {
            geom[h - 1].pooled_side.unwrap_or(geom[h - 1].raw_side)
        } as isize;
        let pad = cfg.padding as isize;
        r = (
            (r.0 * cfg.stride.0 as isize - pad).max(0),
            (r.1 * cfg.stride.0 as isize - pad + cfg.window.0 as isize - 1).min(in_side - 1),
        );
        c = (
            (c.0 * cfg.stride.1 as isize - pad).max(0),
            (c.1 * cfg.stride.1 as isize - pad + cfg.window.1 as isize - 1).min(in_side - 1),
        );
        if h > 0 {
            if let Some(pool) = config.hops[h - 1].pool_after {
                let raw = geom[h - 1].raw_side as isize;
                r = (
                    (r.0 * pool.stride as isize).max(0),
                    (r.1 * pool.stride as isize + pool.window as isize - 1).min(raw - 1),
                );
                c = (
                    (c.0 * pool.stride as isize).max(0),
                    (c.1 * pool.stride as isize + pool.window as isize - 1).min(raw - 1),
                );
            }
        }
    }
    Ok(((r.0 as usize, r.1 as usize), (c.0 as usize, c.1 as usize)))
}
