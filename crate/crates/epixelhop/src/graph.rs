//! Local graphs over label grids: child / parent / sibling relations across
//! hops, composed through window geometry and any interleaved pooling.

use crate::cascade::{hop_geometry, CascadeConfig};
use crate::error::{Error, Result};
use crate::saab::PoolConfig;

/// Which hop's feature tensor (raw or pooled) a label grid lives on.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct HopSelect {
    pub hop: usize,
    pub pooled: bool,
}

/// Relation between one label grid and the next-shallower one.
#[derive(Debug, Clone, PartialEq)]
pub struct HopAdjacency {
    pub window: (usize, usize),
    pub stride: (usize, usize),
    pub padding: usize,
    /// Pooling between the shallow label grid and the window's input, present
    /// when labels live on the unpooled grid of a pooled hop.
    pub pool: Option<PoolConfig>,
}

/// Grid sides plus the adjacency chain, shallow to deep.
#[derive(Debug, Clone, PartialEq)]
pub struct GraphSpec {
    pub sides: Vec<usize>,
    pub adjacencies: Vec<HopAdjacency>,
}

/// Label-grid levels used by the multi-class stage: every hop past the first,
/// on its pooled grid where pooling is configured.
pub fn stage1_selections(config: &CascadeConfig) -> Vec<HopSelect> {
    (1..config.hops.len())
        .map(|hop| HopSelect {
            hop,
            pooled: config.hops[hop].pool_after.is_some(),
        })
        .collect()
}

/// Label-grid levels used by pair resolution: the same hops, all unpooled for
/// higher resolution.
pub fn stage2_selections(config: &CascadeConfig) -> Vec<HopSelect> {
    (1..config.hops.len())
        .map(|hop| HopSelect { hop, pooled: false })
        .collect()
}

/// Derive the graph geometry for a list of selected hops (consecutive, at
/// most the shallowest may sit between pooling and the next window).
pub fn graph_spec_for(
    config: &CascadeConfig,
    input_side: usize,
    selections: &[HopSelect],
) -> Result<GraphSpec> {
    if selections.is_empty() {
        return Err(Error::Config("graph needs at least one hop".into()));
    }
    let geom = hop_geometry(config, input_side)?;
    let mut sides = Vec::with_capacity(selections.len());
    for sel in selections {
        if sel.hop >= config.hops.len() {
            return Err(Error::Config(format!("hop {} out of range", sel.hop)));
        }
        let g = geom[sel.hop];
        let side = if sel.pooled {
            g.pooled_side
                .ok_or_else(|| Error::Config(format!("hop {} has no pooling", sel.hop)))?
        } else {
            g.raw_side
        };
        sides.push(side);
    }
    let mut adjacencies = Vec::with_capacity(selections.len() - 1);
    for w in selections.windows(2) {
        let (shallow, deep) = (w[0], w[1]);
        if deep.hop != shallow.hop + 1 {
            return Err(Error::Config(format!(
                "label grids must sit on consecutive hops, got {} then {}",
                shallow.hop, deep.hop
            )));
        }
        if deep.pooled {
            return Err(Error::Config(
                "only the shallowest label grid may be a pooled grid".into(),
            ));
        }
        let cfg = &config.hops[deep.hop];
        let pool = if shallow.pooled {
            None
        } else {
            config.hops[shallow.hop].pool_after
        };
        adjacencies.push(HopAdjacency {
            window: cfg.window,
            stride: cfg.stride,
            padding: cfg.padding,
            pool,
        });
    }
    Ok(GraphSpec { sides, adjacencies })
}

/// Relations of one node. Children point one level shallower, parents one
/// level deeper; both are empty at the boundary levels.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct NodeRelations {
    pub children: Vec<(usize, usize)>,
    pub parents: Vec<(usize, usize)>,
    pub siblings: Vec<(usize, usize)>,
}

/// Fully materialized relations for every node of every level.
#[derive(Debug, Clone, PartialEq)]
pub struct LocalGraph {
    pub sides: Vec<usize>,
    /// Per level, row-major node relations.
    pub levels: Vec<Vec<NodeRelations>>,
}

impl LocalGraph {
    pub fn node(&self, level: usize, r: usize, c: usize) -> &NodeRelations {
        &self.levels[level][r * self.sides[level] + c]
    }

    pub fn level_count(&self) -> usize {
        self.sides.len()
    }
}

/// Inclusive child range of a deep node along one axis.
fn child_range(
    coord: usize,
    window: usize,
    stride: usize,
    padding: usize,
    input_side: usize,
    pool: Option<PoolConfig>,
    shallow_side: usize,
) -> (usize, usize) {
    let lo = (coord * stride) as isize - padding as isize;
    let hi = lo + window as isize - 1;
    let lo = lo.clamp(0, input_side as isize - 1) as usize;
    let hi = hi.clamp(0, input_side as isize - 1) as usize;
    match pool {
        Some(p) => {
            let raw_lo = lo * p.stride;
            let raw_hi = (hi * p.stride + p.window - 1).min(shallow_side - 1);
            (raw_lo, raw_hi)
        }
        None => (lo, hi),
    }
}

/// Build the full relation structure from a graph spec.
pub fn build_local_graph(spec: &GraphSpec) -> Result<LocalGraph> {
    let levels = spec.sides.len();
    let mut graph: Vec<Vec<NodeRelations>> = spec
        .sides
        .iter()
        .map(|&s| vec![NodeRelations::default(); s * s])
        .collect();

    // Siblings: the eight nearest neighbors, clipped at borders.
    for (level, &side) in spec.sides.iter().enumerate() {
        for r in 0..side {
            for c in 0..side {
                let mut sib = Vec::with_capacity(8);
                for dr in -1i32..=1 {
                    for dc in -1i32..=1 {
                        if dr == 0 && dc == 0 {
                            continue;
                        }
                        let nr = r as i32 + dr;
                        let nc = c as i32 + dc;
                        if nr >= 0 && nc >= 0 && (nr as usize) < side && (nc as usize) < side {
                            sib.push((nr as usize, nc as usize));
                        }
                    }
                }
                graph[level][r * side + c].siblings = sib;
            }
        }
    }

    // Children from the window arithmetic; parents by inversion, which keeps
    // the two relations mutually consistent by construction.
    for li in 1..levels {
        let adj = &spec.adjacencies[li - 1];
        let deep_side = spec.sides[li];
        let shallow_side = spec.sides[li - 1];
        let input_side = match adj.pool {
            Some(p) => {
                if shallow_side < p.window {
                    return Err(Error::InconsistentShapes {
                        level: li - 1,
                        expected: p.window,
                        got: shallow_side,
                    });
                }
                (shallow_side - p.window) / p.stride + 1
            }
            None => shallow_side,
        };
        let expect_deep = {
            let padded = input_side + 2 * adj.padding;
            if padded < adj.window.0 {
                return Err(Error::InconsistentShapes {
                    level: li,
                    expected: adj.window.0,
                    got: padded,
                });
            }
            (padded - adj.window.0) / adj.stride.0 + 1
        };
        if expect_deep != deep_side {
            return Err(Error::InconsistentShapes {
                level: li,
                expected: expect_deep,
                got: deep_side,
            });
        }
        for r in 0..deep_side {
            for c in 0..deep_side {
                let (r_lo, r_hi) = child_range(
                    r,
                    adj.window.0,
                    adj.stride.0,
                    adj.padding,
                    input_side,
                    adj.pool,
                    shallow_side,
                );
                let (c_lo, c_hi) = child_range(
                    c,
                    adj.window.1,
                    adj.stride.1,
                    adj.padding,
                    input_side,
                    adj.pool,
                    shallow_side,
                );
                let mut children = Vec::with_capacity((r_hi - r_lo + 1) * (c_hi - c_lo + 1));
                for cr in r_lo..=r_hi {
                    for cc in c_lo..=c_hi {
                        children.push((cr, cc));
                        graph[li - 1][cr * shallow_side + cc].parents.push((r, c));
                    }
                }
                graph[li][r * deep_side + c].children = children;
            }
        }
    }

    Ok(LocalGraph {
        sides: spec.sides.clone(),
        levels: graph,
    })
}
