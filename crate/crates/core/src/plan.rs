//! Level planning: where to refresh so that no segment exceeds the modulus chain.

use crate::error::{Error, Result};
use crate::graph::{LayerKind, ModelGraph};
use crate::packed::cost;

/// Level bookkeeping of one executed layer.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LevelStep {
    pub index: usize,
    pub level_in: usize,
    pub level_out: usize,
    pub refreshed: bool,
}

/// An indivisible stretch of layers: a single layer or a whole residual block.
struct Unit {
    start: usize,
    cost: usize,
}

fn shortcut_cost(kind: &LayerKind) -> usize {
    match kind {
        LayerKind::ResidualBegin { shortcut: Some(_) } => cost::CONV,
        _ => 0,
    }
}

fn units(graph: &ModelGraph) -> Result<Vec<Unit>> {
    let mut out = Vec::new();
    let mut i = 0;
    while i < graph.layers.len() {
        let layer = &graph.layers[i];
        match &layer.kind {
            LayerKind::BatchNorm(_) => {
                return Err(Error::Plan(format!(
                    "batch norm {} must be folded before planning",
                    layer.name
                )))
            }
            LayerKind::ResidualBegin { .. } => {
                let end = graph.layers[i..]
                    .iter()
                    .position(|l| matches!(l.kind, LayerKind::ResidualEnd))
                    .map(|p| i + p)
                    .ok_or_else(|| Error::Plan(format!("residual block {} is not closed", layer.name)))?;
                let main: usize = graph.layers[i + 1..end].iter().map(|l| l.kind.level_cost()).sum();
                out.push(Unit {
                    start: i,
                    cost: main.max(shortcut_cost(&layer.kind)),
                });
                i = end + 1;
            }
            kind => {
                out.push(Unit {
                    start: i,
                    cost: kind.level_cost(),
                });
                i += 1;
            }
        }
    }
    Ok(out)
}

/// Greedy left-to-right segmentation into stretches of at most `usable` levels.
///
/// A refresh is placed before the first unit that would overrun the
/// remaining levels; residual blocks are never split.
pub fn plan_levels(graph: &ModelGraph, usable: usize) -> Result<ModelGraph> {
    graph.shapes()?;
    let mut refresh_points = Vec::new();
    let mut remaining = usable;
    for unit in units(graph)? {
        if unit.cost > usable {
            let name = &graph.layers[unit.start].name;
            return Err(Error::Plan(format!(
                "{name} needs {} levels in one segment but the chain provides {usable}; use a deeper modulus chain",
                unit.cost
            )));
        }
        if unit.cost > remaining {
            refresh_points.push(unit.start);
            remaining = usable;
        }
        remaining -= unit.cost;
    }
    Ok(ModelGraph {
        refresh_points,
        ..graph.clone()
    })
}

/// Level trace of executing `graph` from `max_level`, honouring its refresh points.
pub fn predict_levels(graph: &ModelGraph, max_level: usize) -> Result<Vec<LevelStep>> {
    let mut level = max_level;
    let mut skip: Option<(usize, usize)> = None;
    let mut steps = Vec::with_capacity(graph.layers.len());
    for (index, layer) in graph.layers.iter().enumerate() {
        let refreshed = graph.refresh_points.contains(&index);
        if refreshed {
            level = max_level;
        }
        let depth = |needed: usize, at: usize| Error::Plan(format!(
            "layer {} needs {needed} levels at level {at}",
            layer.name
        ));
        let level_out = match &layer.kind {
            LayerKind::ResidualBegin { .. } => {
                skip = Some((level, shortcut_cost(&layer.kind)));
                level
            }
            LayerKind::ResidualEnd => {
                let (skip_level, sc) = skip.take().ok_or_else(|| Error::Plan("unbalanced residual block".into()))?;
                if skip_level < sc {
                    return Err(depth(sc, skip_level));
                }
                level.min(skip_level - sc)
            }
            kind => {
                let c = kind.level_cost();
                if level < c {
                    return Err(depth(c, level));
                }
                level - c
            }
        };
        steps.push(LevelStep {
            index,
            level_in: level,
            level_out,
            refreshed,
        });
        level = level_out;
    }
    Ok(steps)
}
