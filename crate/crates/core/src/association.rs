//! Data association: optimal and k-best assignment of tracked components to
//! detections, an exhaustive posterior oracle, and hypothesis pruning.
//!
//! An association event maps every component to one detection or to a miss,
//! with each detection used at most once. Detections left over become births.
//! Costs are negative log weights.
//!
//! Internally an event is solved as a rectangular `n × (m + n)` assignment:
//! column `j < m` is detection `j` with the birth cost of `j` subtracted,
//! column `m + i` is the miss slot private to row `i`. Every assignment of
//! that matrix corresponds to exactly one event, so Murty's partitioning
//! never yields duplicates.

use std::cmp::Ordering;
use std::collections::{BTreeMap, BinaryHeap, HashSet};

use thiserror::Error;

use crate::moupdate::{Hypothesis, HypothesisSet};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AssociationError {
    #[error("no feasible association event")]
    Infeasible,
    #[error("invalid cost matrix: {0}")]
    InvalidMatrix(String),
    #[error("problem too large for exhaustive enumeration ({rows} x {cols}, limit 4 x 4)")]
    TooLarge { rows: usize, cols: usize },
}

#[derive(Debug, Clone, PartialEq)]
pub struct CostMatrix {
    rows: usize,
    cols: usize,
    match_cost: Vec<f64>,
    miss_cost: Vec<f64>,
    birth_cost: Vec<f64>,
}

impl CostMatrix {
    /// `match_cost` is row-major `rows × cols`; `+∞` marks infeasible pairs.
    /// Birth costs must be finite.
    pub fn new(match_cost: Vec<Vec<f64>>, miss_cost: Vec<f64>, birth_cost: Vec<f64>) -> Result<Self, AssociationError> {
        let rows = miss_cost.len();
        let cols = birth_cost.len();
        if match_cost.len() != rows || match_cost.iter().any(|r| r.len() != cols) {
            return Err(AssociationError::InvalidMatrix("shape mismatch".into()));
        }
        let flat: Vec<f64> = match_cost.into_iter().flatten().collect();
        if flat
            .iter()
            .chain(&miss_cost)
            .chain(&birth_cost)
            .any(|c| c.is_nan() || *c == f64::NEG_INFINITY)
        {
            return Err(AssociationError::InvalidMatrix("NaN or -inf cost".into()));
        }
        if birth_cost.iter().any(|c| !c.is_finite()) {
            return Err(AssociationError::InvalidMatrix("birth costs must be finite".into()));
        }
        Ok(Self {
            rows,
            cols,
            match_cost: flat,
            miss_cost,
            birth_cost,
        })
    }

    /// Builds costs as negative logs of nonnegative weights.
    pub fn from_weights(table: &WeightTable) -> Result<Self, AssociationError> {
        let nl = |w: f64| if w > 0.0 { -w.ln() } else { f64::INFINITY };
        Self::new(
            table.match_w.iter().map(|r| r.iter().map(|&w| nl(w)).collect()).collect(),
            table.miss_w.iter().map(|&w| nl(w)).collect(),
            table.birth_w.iter().map(|&w| nl(w)).collect(),
        )
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn match_cost(&self, row: usize, col: usize) -> f64 {
        self.match_cost[row * self.cols + col]
    }

    pub fn miss_cost(&self, row: usize) -> f64 {
        self.miss_cost[row]
    }

    pub fn birth_cost(&self, col: usize) -> f64 {
        self.birth_cost[col]
    }

    /// Total cost of an assignment (`None` = miss); `+∞` if infeasible.
    pub fn event_cost(&self, assignment: &[Option<usize>]) -> f64 {
        let mut used = vec![false; self.cols];
        let mut total = 0.0;
        for (r, a) in assignment.iter().enumerate() {
            match *a {
                Some(c) => {
                    if used[c] {
                        return f64::INFINITY;
                    }
                    used[c] = true;
                    total += self.match_cost(r, c);
                }
                None => total += self.miss_cost[r],
            }
        }
        total
            + used
                .iter()
                .enumerate()
                .filter(|(_, u)| !**u)
                .map(|(c, _)| self.birth_cost[c])
                .sum::<f64>()
    }

    fn event(&self, assignment: Vec<Option<usize>>) -> AssociationEvent {
        let cost = self.event_cost(&assignment);
        AssociationEvent::new(assignment, self.cols, cost)
    }

    fn reduced(&self) -> DenseCosts {
        let width = self.cols + self.rows;
        let mut data = vec![f64::INFINITY; self.rows * width];
        for r in 0..self.rows {
            for c in 0..self.cols {
                data[r * width + c] = self.match_cost(r, c) - self.birth_cost[c];
            }
            data[r * width + self.cols + r] = self.miss_cost[r];
        }
        DenseCosts {
            rows: self.rows,
            cols: width,
            data,
        }
    }

    fn birth_total(&self) -> f64 {
        self.birth_cost.iter().sum()
    }

    fn sub_matrix(&self, rows: &[usize], cols: &[usize]) -> CostMatrix {
        CostMatrix {
            rows: rows.len(),
            cols: cols.len(),
            match_cost: rows
                .iter()
                .flat_map(|&r| cols.iter().map(move |&c| (r, c)))
                .map(|(r, c)| self.match_cost(r, c))
                .collect(),
            miss_cost: rows.iter().map(|&r| self.miss_cost[r]).collect(),
            birth_cost: cols.iter().map(|&c| self.birth_cost[c]).collect(),
        }
    }
}

/// Linear-domain weights for one prior hypothesis.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightTable {
    pub match_w: Vec<Vec<f64>>,
    pub miss_w: Vec<f64>,
    pub birth_w: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AssociationEvent {
    /// Per component: matched detection, or `None` for a miss.
    pub assignment: Vec<Option<usize>>,
    /// Detections not matched to any component, ascending.
    pub births: Vec<usize>,
    pub cost: f64,
}

impl AssociationEvent {
    fn new(assignment: Vec<Option<usize>>, cols: usize, cost: f64) -> Self {
        let mut used = vec![false; cols];
        for c in assignment.iter().flatten() {
            used[*c] = true;
        }
        let births = (0..cols).filter(|c| !used[*c]).collect();
        Self { assignment, births, cost }
    }
}

/// Dense row-major cost table with `rows <= cols`.
#[derive(Debug, Clone)]
struct DenseCosts {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl DenseCosts {
    fn at(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }
}

/// Shortest augmenting path assignment (Jonker–Volgenant style potentials)
/// for `rows <= cols`. Returns the column of each row, or `None` when no
/// finite-cost assignment exists.
fn solve_lap(costs: &DenseCosts) -> Option<Vec<usize>> {
    let n = costs.rows;
    let m = costs.cols;
    if n == 0 {
        return Some(Vec::new());
    }
    let inf = f64::INFINITY;
    let mut u = vec![0.0; n + 1];
    let mut v = vec![0.0; m + 1];
    let mut p = vec![0usize; m + 1];
    let mut way = vec![0usize; m + 1];
    for i in 1..=n {
        p[0] = i;
        let mut j0 = 0usize;
        let mut minv = vec![inf; m + 1];
        let mut used = vec![false; m + 1];
        loop {
            used[j0] = true;
            let i0 = p[j0];
            let mut delta = inf;
            let mut j1 = 0usize;
            for j in 1..=m {
                if used[j] {
                    continue;
                }
                let cur = costs.at(i0 - 1, j - 1) - u[i0] - v[j];
                if cur < minv[j] {
                    minv[j] = cur;
                    way[j] = j0;
                }
                if minv[j] < delta {
                    delta = minv[j];
                    j1 = j;
                }
            }
            if !delta.is_finite() {
                return None;
            }
            for j in 0..=m {
                if used[j] {
                    u[p[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if p[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            p[j0] = p[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut assignment = vec![0usize; n];
    for j in 1..=m {
        if p[j] != 0 {
            assignment[p[j] - 1] = j - 1;
        }
    }
    Some(assignment)
}

fn decode(m: &CostMatrix, cols: &[usize]) -> Vec<Option<usize>> {
    cols.iter().map(|&c| if c < m.cols { Some(c) } else { None }).collect()
}

/// Minimum-cost association event.
pub fn best_assignment(m: &CostMatrix) -> Result<AssociationEvent, AssociationError> {
    let reduced = m.reduced();
    let cols = solve_lap(&reduced).ok_or(AssociationError::Infeasible)?;
    let event = m.event(decode(m, &cols));
    if !event.cost.is_finite() {
        return Err(AssociationError::Infeasible);
    }
    Ok(event)
}

#[derive(Debug, Clone)]
struct MurtyNode {
    cost: f64,
    cols: Vec<usize>,
    /// Rows `0..fixed` are pinned to their current columns.
    fixed: usize,
    excluded: Vec<(usize, usize)>,
}

impl PartialEq for MurtyNode {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}
impl Eq for MurtyNode {}
impl PartialOrd for MurtyNode {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for MurtyNode {
    // Reversed so the BinaryHeap pops the cheapest node, ties by assignment.
    fn cmp(&self, other: &Self) -> Ordering {
        other.cost.total_cmp(&self.cost).then_with(|| other.cols.cmp(&self.cols))
    }
}

fn solve_constrained(base: &DenseCosts, pinned: &[(usize, usize)], excluded: &[(usize, usize)]) -> Option<(f64, Vec<usize>)> {
    let mut costs = base.clone();
    for &(r, c) in excluded {
        costs.data[r * costs.cols + c] = f64::INFINITY;
    }
    for &(r, c) in pinned {
        for cc in 0..costs.cols {
            if cc != c {
                costs.data[r * costs.cols + cc] = f64::INFINITY;
            }
        }
        for rr in 0..costs.rows {
            if rr != r {
                costs.data[rr * costs.cols + c] = f64::INFINITY;
            }
        }
    }
    let cols = solve_lap(&costs)?;
    let total: f64 = cols.iter().enumerate().map(|(r, &c)| base.at(r, c)).sum();
    total.is_finite().then_some((total, cols))
}

/// Up to `k` distinct events in nondecreasing cost (Murty's partitioning).
pub fn kbest(m: &CostMatrix, k: usize) -> Vec<AssociationEvent> {
    if k == 0 {
        return Vec::new();
    }
    let base = m.reduced();
    let Some((cost, cols)) = solve_constrained(&base, &[], &[]) else {
        return Vec::new();
    };
    let mut heap = BinaryHeap::new();
    heap.push(MurtyNode {
        cost,
        cols,
        fixed: 0,
        excluded: Vec::new(),
    });
    let mut out = Vec::new();
    let birth_total = m.birth_total();
    while let Some(node) = heap.pop() {
        out.push(AssociationEvent::new(decode(m, &node.cols), m.cols, node.cost + birth_total));
        if out.len() == k {
            break;
        }
        for row in node.fixed..m.rows {
            let pinned: Vec<(usize, usize)> = (0..row).map(|r| (r, node.cols[r])).collect();
            let mut excluded = node.excluded.clone();
            excluded.retain(|&(r, _)| r >= row);
            excluded.push((row, node.cols[row]));
            if let Some((cost, cols)) = solve_constrained(&base, &pinned, &excluded) {
                heap.push(MurtyNode {
                    cost,
                    cols,
                    fixed: row,
                    excluded,
                });
            }
        }
    }
    out
}

/// Same result as [`kbest`] (up to ordering of equal costs), computed by
/// splitting the matrix into independent clusters of rows and columns
/// connected through finite match costs and merging the per-cluster lists.
pub fn kbest_partitioned(m: &CostMatrix, k: usize) -> Vec<AssociationEvent> {
    if k == 0 {
        return Vec::new();
    }
    let clusters = clusters(m);
    let mut fixed_cost = 0.0;
    let mut lists: Vec<(Vec<usize>, Vec<usize>, Vec<AssociationEvent>)> = Vec::new();
    for (rows, cols) in clusters {
        if cols.is_empty() {
            // Lone rows can only miss.
            for &r in &rows {
                fixed_cost += m.miss_cost[r];
            }
            continue;
        }
        if rows.is_empty() {
            for &c in &cols {
                fixed_cost += m.birth_cost[c];
            }
            continue;
        }
        let sub = m.sub_matrix(&rows, &cols);
        let events = kbest(&sub, k);
        if events.is_empty() {
            return Vec::new();
        }
        lists.push((rows, cols, events));
    }
    if !fixed_cost.is_finite() {
        return Vec::new();
    }
    let costs: Vec<Vec<f64>> = lists.iter().map(|(_, _, ev)| ev.iter().map(|e| e.cost).collect()).collect();
    let combos = k_smallest_sums(&costs, k);
    let mut out = Vec::with_capacity(combos.len());
    for (total, picks) in combos {
        let mut assignment: Vec<Option<usize>> = vec![None; m.rows];
        for ((rows, cols, events), &pick) in lists.iter().zip(&picks) {
            for (local_r, a) in events[pick].assignment.iter().enumerate() {
                assignment[rows[local_r]] = a.map(|lc| cols[lc]);
            }
        }
        out.push(AssociationEvent::new(assignment, m.cols, total + fixed_cost));
    }
    out
}

/// Rows and columns grouped into connected components of the finite-match graph.
fn clusters(m: &CostMatrix) -> Vec<(Vec<usize>, Vec<usize>)> {
    let n = m.rows + m.cols;
    let mut parent: Vec<usize> = (0..n).collect();
    fn find(parent: &mut [usize], mut x: usize) -> usize {
        while parent[x] != x {
            parent[x] = parent[parent[x]];
            x = parent[x];
        }
        x
    }
    for r in 0..m.rows {
        for c in 0..m.cols {
            if m.match_cost(r, c).is_finite() {
                let a = find(&mut parent, r);
                let b = find(&mut parent, m.rows + c);
                if a != b {
                    parent[a.max(b)] = a.min(b);
                }
            }
        }
    }
    let mut groups: BTreeMap<usize, (Vec<usize>, Vec<usize>)> = BTreeMap::new();
    for x in 0..n {
        let root = find(&mut parent, x);
        let g = groups.entry(root).or_default();
        if x < m.rows {
            g.0.push(x);
        } else {
            g.1.push(x - m.rows);
        }
    }
    groups.into_values().collect()
}

#[derive(Debug, PartialEq)]
struct SumNode {
    cost: f64,
    picks: Vec<usize>,
}
impl Eq for SumNode {}
impl PartialOrd for SumNode {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for SumNode {
    fn cmp(&self, other: &Self) -> Ordering {
        other.cost.total_cmp(&self.cost).then_with(|| other.picks.cmp(&self.picks))
    }
}

/// The `k` cheapest ways to pick one entry from each ascending list.
fn k_smallest_sums(lists: &[Vec<f64>], k: usize) -> Vec<(f64, Vec<usize>)> {
    let start = vec![0usize; lists.len()];
    let cost0: f64 = lists.iter().map(|l| l[0]).sum();
    let mut heap = BinaryHeap::new();
    let mut seen = HashSet::new();
    seen.insert(start.clone());
    heap.push(SumNode { cost: cost0, picks: start });
    let mut out = Vec::new();
    while let Some(node) = heap.pop() {
        for (i, list) in lists.iter().enumerate() {
            let next = node.picks[i] + 1;
            if next < list.len() {
                let mut picks = node.picks.clone();
                picks[i] = next;
                if seen.insert(picks.clone()) {
                    let cost = node.cost - list[next - 1] + list[next];
                    heap.push(SumNode { cost, picks });
                }
            }
        }
        out.push((node.cost, node.picks));
        if out.len() == k {
            break;
        }
    }
    out
}

/// Every feasible event, sorted by cost then assignment.
pub fn enumerate_events(m: &CostMatrix) -> Vec<AssociationEvent> {
    fn recurse(m: &CostMatrix, row: usize, used: &mut Vec<bool>, current: &mut Vec<Option<usize>>, out: &mut Vec<AssociationEvent>) {
        if row == m.rows {
            let ev = m.event(current.clone());
            if ev.cost.is_finite() {
                out.push(ev);
            }
            return;
        }
        current.push(None);
        recurse(m, row + 1, used, current, out);
        current.pop();
        for c in 0..m.cols {
            if !used[c] {
                used[c] = true;
                current.push(Some(c));
                recurse(m, row + 1, used, current, out);
                current.pop();
                used[c] = false;
            }
        }
    }
    let mut out = Vec::new();
    recurse(m, 0, &mut vec![false; m.cols], &mut Vec::new(), &mut out);
    out.sort_by(|a, b| {
        a.cost.total_cmp(&b.cost).then_with(|| {
            a.assignment
                .iter()
                .map(|x| x.map_or(0, |c| c + 1))
                .cmp(b.assignment.iter().map(|x| x.map_or(0, |c| c + 1)))
        })
    });
    out
}

/// Exact normalized posterior weight of every feasible event, computed as
/// direct products of the supplied weights. Limited to 4 × 4.
pub fn brute_force_posterior(table: &WeightTable) -> Result<Vec<(AssociationEvent, f64)>, AssociationError> {
    let rows = table.miss_w.len();
    let cols = table.birth_w.len();
    if rows > 4 || cols > 4 {
        return Err(AssociationError::TooLarge { rows, cols });
    }
    let mut events: Vec<(AssociationEvent, f64)> = Vec::new();
    fn recurse(
        t: &WeightTable,
        row: usize,
        used: &mut Vec<bool>,
        current: &mut Vec<Option<usize>>,
        out: &mut Vec<(AssociationEvent, f64)>,
    ) {
        let cols = t.birth_w.len();
        if row == t.miss_w.len() {
            let mut w = 1.0;
            for (r, a) in current.iter().enumerate() {
                w *= match a {
                    Some(c) => t.match_w[r][*c],
                    None => t.miss_w[r],
                };
            }
            for (c, u) in used.iter().enumerate() {
                if !u {
                    w *= t.birth_w[c];
                }
            }
            if w > 0.0 {
                out.push((AssociationEvent::new(current.clone(), cols, -w.ln()), w));
            }
            return;
        }
        current.push(None);
        recurse(t, row + 1, used, current, out);
        current.pop();
        for c in 0..cols {
            if !used[c] {
                used[c] = true;
                current.push(Some(c));
                recurse(t, row + 1, used, current, out);
                current.pop();
                used[c] = false;
            }
        }
    }
    recurse(table, 0, &mut vec![false; cols], &mut Vec::new(), &mut events);
    let total: f64 = events.iter().map(|(_, w)| w).sum();
    if total <= 0.0 {
        return Err(AssociationError::Infeasible);
    }
    for (_, w) in &mut events {
        *w /= total;
    }
    Ok(events)
}

/// Drops light hypotheses and unlikely components, caps the hypothesis
/// count and merges hypotheses made identical by the drops.
pub fn prune_and_cap(h: &HypothesisSet, max_hyps: usize, weight_floor: f64, existence_floor: f64) -> HypothesisSet {
    let mut hyps: Vec<Hypothesis> = h.hypotheses.clone();
    hyps.sort_by(|a, b| b.log_weight.total_cmp(&a.log_weight).then_with(|| a.members.cmp(&b.members)));
    let heaviest = hyps.first().cloned();
    let floor_log = weight_floor.ln();
    let mut kept: Vec<Hypothesis> = hyps.into_iter().filter(|x| x.log_weight >= floor_log).collect();
    if kept.is_empty() {
        kept.extend(heaviest);
    }
    kept.truncate(max_hyps.max(1));

    let mut out = HypothesisSet {
        components: h.components.clone(),
        hypotheses: kept,
        next_component_id: h.next_component_id,
        next_lineage: h.next_lineage,
    };
    out.normalize();

    let dropped: HashSet<u64> = out
        .components
        .keys()
        .copied()
        .filter(|id| out.marginal_existence(*id) < existence_floor)
        .collect();
    if !dropped.is_empty() {
        for hyp in &mut out.hypotheses {
            hyp.members.retain(|id| !dropped.contains(id));
        }
    }
    out.merge_duplicates();
    out.normalize();
    out.retain_referenced();
    out
}
