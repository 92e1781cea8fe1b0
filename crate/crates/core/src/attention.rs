//! Timing attention over candidate events and greedy conditional
//! trajectory discovery.
//!
//! The attention score of an event, conditioned on an ordered list of
//! preceding events, is the excess kurtosis of the event's relative
//! timestamps across the individuals that exhibit the whole pattern in
//! that order. Tight alignment of most individuals with a few stragglers
//! is leptokurtic (large kappa); diffuse timing is platykurtic (kappa
//! near or below zero). Perfect alignment has zero variance and ranks
//! above every finite kappa, flagged as degenerate.
//!
//! Conditioning is by order, not mere co-occurrence: an individual counts
//! for the pattern `A -> B -> C` only if the matched occurrences happen
//! at strictly increasing steps.

use crate::cells::{run_sequence, CellSpec, GammaParams, RunTraces};
use crate::cohort::{CohortBatch, Individual};
use crate::grad::ModelParams;
use crate::numkit::{excess_kurtosis, Matrix, NumKitError};
use crate::timeline::{accumulate_timeline, RelativeTimeline};
use std::fmt::Write as _;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum AttentionError {
    #[error("sub-cohort of size {size} below min_support {min_support}")]
    InsufficientSupport { size: usize, min_support: usize },
    #[error("event `{0}` not present in cohort schema")]
    UnknownEvent(String),
    #[error("timeline count {timelines} does not match cohort size {cohort}")]
    TimelineMismatch { timelines: usize, cohort: usize },
    #[error(transparent)]
    NumKit(#[from] NumKitError),
}

/// A candidate event: an event-flag column plus which occurrence of it
/// (1 = first administration, 2 = second, ...).
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct EventDef {
    pub id: String,
    pub source_feature: String,
    pub occurrence_rank: usize,
}

impl EventDef {
    pub fn first(id: &str, source_feature: &str) -> Self {
        EventDef {
            id: id.to_string(),
            source_feature: source_feature.to_string(),
            occurrence_rank: 1,
        }
    }
}

/// Attention score for one conditioned event.
#[derive(Debug, Clone, Copy)]
pub struct AttentionScore {
    /// Excess kurtosis of the event's relative timestamps; `+inf` when
    /// the timestamps have zero variance (perfect alignment).
    pub kappa: f64,
    pub cohort_size: usize,
    /// Individuals that have the conditioning pattern but not the event
    /// after it (or lack pattern order), hence excluded.
    pub excluded: usize,
    pub degenerate: bool,
}

fn event_col(cohort: &CohortBatch, ev: &EventDef) -> Result<usize, AttentionError> {
    cohort
        .event_index(&ev.source_feature)
        .ok_or_else(|| AttentionError::UnknownEvent(ev.source_feature.clone()))
}

/// Step of the event's matched occurrence for one individual.
fn occurrence(ind: &Individual, col: usize, ev: &EventDef) -> Option<usize> {
    ind.occurrence_step(col, ev.occurrence_rank)
}

/// Returns the step of `event` for individuals matching
/// `condition[0] < condition[1] < ... < event` in step order, or None.
fn pattern_step(
    ind: &Individual,
    cond_cols: &[(usize, &EventDef)],
    event_col: usize,
    event: &EventDef,
) -> Option<usize> {
    let mut prev: Option<usize> = None;
    for (col, ev) in cond_cols {
        let s = occurrence(ind, *col, ev)?;
        if let Some(p) = prev {
            if s <= p {
                return None;
            }
        }
        prev = Some(s);
    }
    let s = occurrence(ind, event_col, event)?;
    match prev {
        Some(p) if s <= p => None,
        _ => Some(s),
    }
}

/// Computes the conditional timing attention of `event` given the ordered
/// `condition` prefix.
pub fn timing_attention(
    cohort: &CohortBatch,
    timelines: &[RelativeTimeline],
    event: &EventDef,
    condition: &[EventDef],
    min_support: usize,
) -> Result<AttentionScore, AttentionError> {
    if timelines.len() != cohort.n() {
        return Err(AttentionError::TimelineMismatch {
            timelines: timelines.len(),
            cohort: cohort.n(),
        });
    }
    let ev_col = event_col(cohort, event)?;
    let cond_cols: Vec<(usize, &EventDef)> = condition
        .iter()
        .map(|c| event_col(cohort, c).map(|i| (i, c)))
        .collect::<Result<_, _>>()?;

    let mut taus = Vec::new();
    let mut excluded = 0usize;
    for (ind, tl) in cohort.individuals.iter().zip(timelines) {
        match pattern_step(ind, &cond_cols, ev_col, event) {
            Some(step) if step < tl.taus.len() => taus.push(tl.taus[step]),
            _ => excluded += 1,
        }
    }
    if taus.len() < min_support.max(2) {
        return Err(AttentionError::InsufficientSupport {
            size: taus.len(),
            min_support,
        });
    }
    match excess_kurtosis(&taus) {
        Ok(kappa) => Ok(AttentionScore {
            kappa,
            cohort_size: taus.len(),
            excluded,
            degenerate: false,
        }),
        Err(NumKitError::DegenerateDistribution) => Ok(AttentionScore {
            // Zero variance is the limit of maximal concentration: rank it
            // above every finite kappa and flag it.
            kappa: f64::INFINITY,
            cohort_size: taus.len(),
            excluded,
            degenerate: true,
        }),
        Err(e) => Err(e.into()),
    }
}

/// Discovery parameters.
#[derive(Debug, Clone)]
pub struct DiscoveryConfig {
    /// Children below this kappa are pruned (unless they are the only
    /// supported candidate at a node: with no competition the argmax is
    /// kept regardless).
    pub kappa_threshold: f64,
    /// Fourth moments need samples; below this the branch is dropped.
    pub min_support: usize,
    pub max_depth: usize,
    /// Relative kappa tolerance for sibling merging.
    pub merge_tolerance: f64,
}

impl Default for DiscoveryConfig {
    fn default() -> Self {
        DiscoveryConfig {
            kappa_threshold: 3.0,
            min_support: 30,
            max_depth: 5,
            merge_tolerance: 0.05,
        }
    }
}

/// One node of a discovered trajectory tree.
#[derive(Debug, Clone)]
pub struct TrajectoryNode {
    pub event: EventDef,
    pub kappa: f64,
    pub degenerate: bool,
    pub cohort_size: usize,
    /// Fraction of the node's sub-cohort with an observed (uncensored)
    /// outcome.
    pub positive_rate: f64,
    pub children: Vec<TrajectoryNode>,
    /// Sibling events coalesced into this node (empty unless the merge
    /// rule fired; includes the representative itself when non-empty).
    pub merged_events: Vec<EventDef>,
}

#[derive(Debug, Clone)]
pub struct TrajectoryTree {
    pub root: TrajectoryNode,
}

fn positive_rate(cohort: &CohortBatch, cond_cols: &[(usize, &EventDef)]) -> (usize, f64) {
    // Sub-cohort exhibiting the full ordered pattern; the last condition
    // entry plays the role of the node event.
    let mut size = 0usize;
    let mut pos = 0usize;
    if cond_cols.is_empty() {
        return (0, 0.0);
    }
    let (last, rest) = cond_cols.split_last().unwrap();
    for ind in &cohort.individuals {
        if pattern_step(ind, rest, last.0, last.1).is_some() {
            size += 1;
            if !ind.censored {
                pos += 1;
            }
        }
    }
    (size, if size > 0 { pos as f64 / size as f64 } else { 0.0 })
}

/// Greedy conditional trajectory discovery from `root`.
///
/// At every node the attention of each remaining candidate is recomputed
/// conditioned on the whole path; candidates at or above the threshold
/// (or degenerate) are kept as children, sorted by kappa descending with
/// ties broken by larger cohort then lexical id, and expanded recursively
/// to `max_depth`.
pub fn discover(
    cohort: &CohortBatch,
    timelines: &[RelativeTimeline],
    candidates: &[EventDef],
    config: &DiscoveryConfig,
    root: &EventDef,
) -> Result<TrajectoryTree, AttentionError> {
    let root_score = timing_attention(cohort, timelines, root, &[], config.min_support)?;
    let root_cols = vec![(event_col(cohort, root)?, root)];
    let (size, rate) = positive_rate(cohort, &root_cols);
    debug_assert_eq!(size, root_score.cohort_size);
    let mut root_node = TrajectoryNode {
        event: root.clone(),
        kappa: root_score.kappa,
        degenerate: root_score.degenerate,
        cohort_size: root_score.cohort_size,
        positive_rate: rate,
        children: Vec::new(),
        merged_events: Vec::new(),
    };
    let mut path = vec![root.clone()];
    expand(
        cohort,
        timelines,
        candidates,
        config,
        &mut path,
        &mut root_node,
        1,
    )?;
    Ok(TrajectoryTree { root: root_node })
}

fn expand(
    cohort: &CohortBatch,
    timelines: &[RelativeTimeline],
    candidates: &[EventDef],
    config: &DiscoveryConfig,
    path: &mut Vec<EventDef>,
    node: &mut TrajectoryNode,
    depth: usize,
) -> Result<(), AttentionError> {
    if depth > config.max_depth {
        return Ok(());
    }
    let remaining: Vec<&EventDef> = candidates.iter().filter(|c| !path.contains(c)).collect();
    let mut scored: Vec<(&EventDef, AttentionScore)> = Vec::new();
    for cand in &remaining {
        match timing_attention(cohort, timelines, cand, path, config.min_support) {
            Ok(score) => scored.push((cand, score)),
            Err(AttentionError::InsufficientSupport { .. }) => continue,
            Err(e) => return Err(e),
        }
    }
    let no_competition = scored.len() == 1;
    let mut kept: Vec<(&EventDef, AttentionScore)> = scored
        .into_iter()
        .filter(|(_, s)| s.degenerate || s.kappa >= config.kappa_threshold || no_competition)
        .collect();
    kept.sort_by(|(ea, sa), (eb, sb)| {
        sb.kappa
            .partial_cmp(&sa.kappa)
            .unwrap()
            .then(sb.cohort_size.cmp(&sa.cohort_size))
            .then(ea.id.cmp(&eb.id))
    });
    for (ev, score) in kept {
        path.push(ev.clone());
        let cond_cols: Vec<(usize, &EventDef)> = path
            .iter()
            .map(|c| (event_col(cohort, c).unwrap(), c))
            .collect();
        let (_, rate) = positive_rate(cohort, &cond_cols);
        let mut child = TrajectoryNode {
            event: ev.clone(),
            kappa: score.kappa,
            degenerate: score.degenerate,
            cohort_size: score.cohort_size,
            positive_rate: rate,
            children: Vec::new(),
            merged_events: Vec::new(),
        };
        expand(cohort, timelines, candidates, config, path, &mut child, depth + 1)?;
        path.pop();
        node.children.push(child);
    }
    Ok(())
}

fn kappas_close(a: f64, b: f64, tolerance: f64) -> bool {
    if a.is_infinite() || b.is_infinite() {
        return a == b;
    }
    (a - b).abs() <= tolerance * a.abs().max(b.abs())
}

/// Coalesces children of `node` whose kappa values are pairwise within
/// the relative tolerance. Siblings condition on the same preceding path
/// by construction, so kappa closeness is the whole rule. The
/// representative of a cluster is its highest-kappa member; its
/// `merged_events` records every member.
pub fn merge_siblings(node: &TrajectoryNode, tolerance: f64) -> TrajectoryNode {
    let mut out = node.clone();
    if node.children.len() >= 2 {
        // Children are already kappa-sorted by construction; re-sort
        // defensively since merge may be applied to hand-built trees.
        let mut sorted: Vec<TrajectoryNode> = node.children.clone();
        sorted.sort_by(|a, b| {
            b.kappa
                .partial_cmp(&a.kappa)
                .unwrap()
                .then(b.cohort_size.cmp(&a.cohort_size))
                .then(a.event.id.cmp(&b.event.id))
        });
        let mut merged: Vec<TrajectoryNode> = Vec::new();
        let mut cluster: Vec<TrajectoryNode> = Vec::new();
        let flush = |cluster: &mut Vec<TrajectoryNode>, merged: &mut Vec<TrajectoryNode>| {
            if cluster.is_empty() {
                return;
            }
            let mut rep = cluster[0].clone();
            if cluster.len() > 1 {
                rep.merged_events = cluster.iter().map(|c| c.event.clone()).collect();
            }
            merged.push(rep);
            cluster.clear();
        };
        for child in sorted {
            let fits = cluster
                .iter()
                .all(|m| kappas_close(m.kappa, child.kappa, tolerance));
            if cluster.is_empty() || fits {
                cluster.push(child);
            } else {
                flush(&mut cluster, &mut merged);
                cluster.push(child);
            }
        }
        flush(&mut cluster, &mut merged);
        out.children = merged;
    }
    out.children = out
        .children
        .iter()
        .map(|c| merge_siblings(c, tolerance))
        .collect();
    out
}

/// The path from the root following the highest-kappa child at each node.
pub fn best_path(tree: &TrajectoryTree) -> Vec<EventDef> {
    let mut path = vec![tree.root.event.clone()];
    let mut node = &tree.root;
    while let Some(best) = node.children.first() {
        path.push(best.event.clone());
        node = best;
    }
    path
}

// ---------------------------------------------------------------------------
// Association heatmap
// ---------------------------------------------------------------------------

/// Pairwise association matrix of event occurrence indicators.
#[derive(Debug, Clone)]
pub struct Heatmap {
    pub events: Vec<EventDef>,
    pub scores: Matrix,
    /// Events whose indicator was constant in the sub-cohort (correlation
    /// undefined, reported as 0).
    pub constant_flags: Vec<bool>,
    pub cohort_size: usize,
}

/// Pearson correlations of binary occurrence indicators within the
/// sub-cohort whose first event (among `initial` and `events`) is
/// `initial`: individuals where `initial` occurs and no listed event
/// occurs strictly earlier.
pub fn association_heatmap(
    cohort: &CohortBatch,
    initial: &EventDef,
    events: &[EventDef],
) -> Result<Heatmap, AttentionError> {
    let init_col = event_col(cohort, initial)?;
    let cols: Vec<usize> = events
        .iter()
        .map(|e| event_col(cohort, e))
        .collect::<Result<_, _>>()?;

    let mut rows: Vec<Vec<f64>> = Vec::new();
    for ind in &cohort.individuals {
        let Some(s0) = occurrence(ind, init_col, initial) else {
            continue;
        };
        let mut earlier = false;
        for (col, ev) in cols.iter().zip(events) {
            if let Some(s) = occurrence(ind, *col, ev) {
                if s < s0 {
                    earlier = true;
                    break;
                }
            }
        }
        if earlier {
            continue;
        }
        rows.push(
            cols.iter()
                .zip(events)
                .map(|(col, ev)| if occurrence(ind, *col, ev).is_some() { 1.0 } else { 0.0 })
                .collect(),
        );
    }
    let n = rows.len();
    if n < 2 {
        return Err(AttentionError::InsufficientSupport {
            size: n,
            min_support: 2,
        });
    }
    let p = events.len();
    let mut mean = vec![0.0; p];
    for row in &rows {
        for (m, v) in mean.iter_mut().zip(row) {
            *m += v;
        }
    }
    for m in &mut mean {
        *m /= n as f64;
    }
    let mut var = vec![0.0; p];
    for row in &rows {
        for k in 0..p {
            var[k] += (row[k] - mean[k]) * (row[k] - mean[k]);
        }
    }
    let constant_flags: Vec<bool> = var.iter().map(|v| *v <= 0.0).collect();
    let mut scores = Matrix::zeros(p, p);
    for i in 0..p {
        scores.set(i, i, 1.0);
        for j in (i + 1)..p {
            let score = if constant_flags[i] || constant_flags[j] {
                0.0
            } else {
                let mut cov = 0.0;
                for row in &rows {
                    cov += (row[i] - mean[i]) * (row[j] - mean[j]);
                }
                cov / (var[i].sqrt() * var[j].sqrt())
            };
            scores.set(i, j, score);
            scores.set(j, i, score);
        }
    }
    Ok(Heatmap {
        events: events.to_vec(),
        scores,
        constant_flags,
        cohort_size: n,
    })
}

pub fn heatmap_to_csv(h: &Heatmap) -> String {
    let mut out = String::from("event");
    for e in &h.events {
        let _ = write!(out, ",{}", e.id);
    }
    out.push('\n');
    for (i, e) in h.events.iter().enumerate() {
        let _ = write!(out, "{}", e.id);
        for j in 0..h.events.len() {
            let _ = write!(out, ",{}", h.scores.get(i, j));
        }
        out.push('\n');
    }
    out
}

// ---------------------------------------------------------------------------
// Timelines from models or ground truth
// ---------------------------------------------------------------------------

/// Builds per-individual relative timelines from a trained LITT model by
/// replaying each sequence and accumulating the per-step gammas.
pub fn timelines_from_model(
    cohort: &CohortBatch,
    model: &ModelParams,
    gammas: &[GammaParams],
) -> Result<Vec<RelativeTimeline>, AttentionError> {
    let mut out = Vec::with_capacity(cohort.n());
    for (ind, g) in cohort.individuals.iter().zip(gammas) {
        let spec = model.cell_spec(Some(g));
        let run = run_sequence(spec, &ind.features, &ind.times)
            .map_err(|e| AttentionError::UnknownEvent(format!("forward pass failed: {e}")))?;
        let step_gammas = match &run.traces {
            RunTraces::Recurrent(traces) => traces.iter().map(|t| t.gamma).collect::<Vec<_>>(),
            RunTraces::Gru(_) => vec![0.0; ind.len()],
        };
        let mut tl = accumulate_timeline(&step_gammas)
            .map_err(|e| AttentionError::UnknownEvent(format!("timeline failed: {e}")))?;
        tl.cumulative_t = ind.times.clone();
        out.push(tl);
    }
    Ok(out)
}

/// Builds timelines from one constant per-step coefficient per individual
/// (the representation synthetic generators use as ground truth).
pub fn timelines_from_constant_gammas(
    cohort: &CohortBatch,
    gammas: &[f64],
) -> Vec<RelativeTimeline> {
    cohort
        .individuals
        .iter()
        .zip(gammas)
        .map(|(ind, &g)| {
            let mut tl = accumulate_timeline(&vec![g; ind.len()]).expect("finite gamma");
            tl.cumulative_t = ind.times.clone();
            tl
        })
        .collect()
}

// ---------------------------------------------------------------------------
// Tree serialization
// ---------------------------------------------------------------------------

fn node_label(node: &TrajectoryNode) -> String {
    let id = if node.merged_events.is_empty() {
        node.event.id.clone()
    } else {
        node.merged_events
            .iter()
            .map(|e| e.id.as_str())
            .collect::<Vec<_>>()
            .join("+")
    };
    let kappa = if node.degenerate {
        "inf".to_string()
    } else {
        format!("{:.3}", node.kappa)
    };
    format!(
        "{id} kappa={kappa} size={} rate={:.3}",
        node.cohort_size, node.positive_rate
    )
}

/// Indented text rendering; the highest-kappa child chain is starred.
pub fn tree_to_text(tree: &TrajectoryTree) -> String {
    let mut out = String::new();
    fn rec(node: &TrajectoryNode, indent: usize, on_best: bool, out: &mut String) {
        let star = if on_best { " *" } else { "" };
        let _ = writeln!(out, "{}{}{}", "  ".repeat(indent), node_label(node), star);
        for (i, child) in node.children.iter().enumerate() {
            rec(child, indent + 1, on_best && i == 0, out);
        }
    }
    rec(&tree.root, 0, true, &mut out);
    out
}

/// DOT (graphviz) rendering with kappa/size/rate per node; the
/// highest-kappa route is drawn red.
pub fn tree_to_dot(tree: &TrajectoryTree) -> String {
    let mut out = String::from("digraph trajectory {\n  node [shape=box];\n");
    let mut counter = 0usize;
    fn rec(
        node: &TrajectoryNode,
        my_id: usize,
        counter: &mut usize,
        on_best: bool,
        out: &mut String,
    ) {
        let color = if on_best { ", color=red" } else { "" };
        let _ = writeln!(out, "  n{my_id} [label=\"{}\"{color}];", node_label(node));
        for (i, child) in node.children.iter().enumerate() {
            *counter += 1;
            let cid = *counter;
            let best_edge = on_best && i == 0;
            let _ = writeln!(
                out,
                "  n{my_id} -> n{cid}{};",
                if best_edge { " [color=red]" } else { "" }
            );
            rec(child, cid, counter, best_edge, out);
        }
    }
    rec(&tree.root, 0, &mut counter, true, &mut out);
    out.push_str("}\n");
    out
}
