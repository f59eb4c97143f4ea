//! Transfer-layer observer: per-asset transfer graphs, parcel-level flow
//! attribution, taint propagation and label-erased canonical forms.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt::Write as _;

use num_bigint::BigInt;
use num_traits::ToPrimitive;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::amm::{Amount, AssetId, NumericMode};
use crate::engine::{Address, ExecutionTrace, Role, WorldState};
use crate::numeric::{rational_gcd, Scalar};

/// Default cap on parcel routings explored by [`attribute`].
pub const DEFAULT_BUDGET: u64 = 1_000_000;

/// Largest edge size, in parcels, that automatic quantization aims for.
pub const AUTO_MAX_PARCELS: u64 = 100;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum GraphError {
    #[error("attribution needs more than {budget} parcel routings; coarsen the quantization")]
    BudgetExceeded { budget: u64 },
    #[error("edge amounts have no common rational divisor; use an explicit quantum")]
    Incommensurable,
    #[error("quantum must be positive")]
    InvalidQuantum,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GraphEdge {
    pub seq: u64,
    pub from: Address,
    pub to: Address,
    pub amount: Amount,
}

/// Transfers of a single asset in execution order.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TransferGraph {
    pub asset: AssetId,
    pub numeric_mode: NumericMode,
    pub nodes: BTreeSet<Address>,
    pub edges: Vec<GraphEdge>,
    /// Role labels of the nodes, used only for display.
    pub labels: BTreeMap<Address, Role>,
    /// Holdings before the first edge. Nodes missing here are assumed to
    /// hold the least amount that makes their outflows feasible.
    pub initial: BTreeMap<Address, Amount>,
}

pub fn build_graph(trace: &ExecutionTrace, asset: &AssetId) -> TransferGraph {
    let edges: Vec<GraphEdge> = trace
        .events
        .iter()
        .filter(|e| e.asset == asset.symbol)
        .map(|e| GraphEdge {
            seq: e.seq,
            from: e.from.clone(),
            to: e.to.clone(),
            amount: e.amount.clone(),
        })
        .collect();
    let nodes: BTreeSet<Address> = edges.iter().flat_map(|e| [e.from.clone(), e.to.clone()]).collect();
    let labels = nodes.iter().map(|n| (n.clone(), trace.label(n))).collect();
    TransferGraph {
        asset: asset.clone(),
        numeric_mode: trace.numeric_mode,
        nodes,
        edges,
        labels,
        initial: BTreeMap::new(),
    }
}

/// One graph per asset of the trace, in the trace's asset order.
pub fn build_graphs(trace: &ExecutionTrace) -> Vec<TransferGraph> {
    trace.assets.iter().map(|a| build_graph(trace, a)).collect()
}

impl TransferGraph {
    /// Takes initial holdings of every node from `world`.
    pub fn with_world_balances(mut self, world: &WorldState) -> Self {
        self.initial = self
            .nodes
            .iter()
            .map(|n| (n.clone(), world.holdings(n, &self.asset.symbol)))
            .filter(|(_, v)| !v.is_zero())
            .collect();
        self
    }

    pub fn with_initial(mut self, addr: &Address, amount: Amount) -> Self {
        self.initial.insert(addr.clone(), amount);
        self
    }

    /// A copy with one more transfer appended after the last edge.
    pub fn with_extra_edge(&self, from: &Address, to: &Address, amount: Amount) -> Self {
        let mut g = self.clone();
        let seq = g.edges.last().map_or(1, |e| e.seq + 1);
        g.nodes.insert(from.clone());
        g.nodes.insert(to.clone());
        g.edges.push(GraphEdge {
            seq,
            from: from.clone(),
            to: to.clone(),
            amount,
        });
        g
    }

    pub fn has_edge(&self, from: &Address, to: &Address) -> bool {
        self.edges.iter().any(|e| &e.from == from && &e.to == to)
    }

    /// Effective starting holdings: the declared balance, raised where
    /// needed so that no node ever forwards more than it has.
    pub fn effective_initial(&self) -> BTreeMap<Address, Scalar> {
        let mut need: BTreeMap<Address, Scalar> = BTreeMap::new();
        let mut running: BTreeMap<Address, Scalar> = BTreeMap::new();
        for e in &self.edges {
            let r = running.entry(e.from.clone()).or_default();
            *r = &*r - e.amount.value();
            let deficit = -r.clone();
            let n = need.entry(e.from.clone()).or_default();
            if deficit > *n {
                *n = deficit;
            }
            let r = running.entry(e.to.clone()).or_default();
            *r = &*r + e.amount.value();
        }
        let mut out = BTreeMap::new();
        for node in &self.nodes {
            let declared = self.initial.get(node).map(|a| a.value().clone()).unwrap_or_default();
            let implied = need.get(node).cloned().unwrap_or_default();
            out.insert(node.clone(), declared.max(implied));
        }
        out
    }

    pub fn to_dot(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "digraph \"{}\" {{", self.asset.symbol);
        let _ = writeln!(s, "  rankdir=LR;");
        for n in &self.nodes {
            let role = self.labels.get(n).copied().unwrap_or_default();
            let _ = writeln!(s, "  \"{n}\" [label=\"{n} ({})\"];", role.tag());
        }
        for e in &self.edges {
            let _ = writeln!(
                s,
                "  \"{}\" -> \"{}\" [label=\"{}:{} {}\"];",
                e.from,
                e.to,
                e.seq,
                e.amount.display(&self.asset, self.numeric_mode, 6),
                self.asset.symbol
            );
        }
        s.push_str("}\n");
        s
    }
}

/// Every transfer of a trace as one DOT digraph.
pub fn trace_to_dot(trace: &ExecutionTrace) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "digraph \"{}\" {{", trace.bundle_id);
    let _ = writeln!(s, "  rankdir=LR;");
    let nodes: BTreeSet<&Address> = trace.events.iter().flat_map(|e| [&e.from, &e.to]).collect();
    for n in nodes {
        let _ = writeln!(s, "  \"{n}\" [label=\"{n} ({})\"];", trace.label(n).tag());
    }
    for e in &trace.events {
        let shown = match trace.asset(&e.asset) {
            Some(a) => e.amount.display(a, trace.numeric_mode, 6),
            None => e.amount.to_string(),
        };
        let _ = writeln!(s, "  \"{}\" -> \"{}\" [label=\"{}:{} {}\"];", e.from, e.to, e.seq, shown, e.asset);
    }
    s.push_str("}\n");
    s
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Quantization {
    /// Greatest common divisor of the edge amounts; exact.
    Gcd,
    /// A fixed parcel size; amounts are rounded to whole parcels.
    Explicit(Amount),
    /// The gcd if it keeps edges small, otherwise a power of ten.
    Auto,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AttributionResult {
    pub principal: Address,
    pub beneficiary: Address,
    pub asset: String,
    pub quantum: Amount,
    pub p_to_b_min: Amount,
    pub p_to_b_max: Amount,
    pub decomposition_count: u64,
    pub recoverable: bool,
}

fn pick_quantum(g: &TransferGraph, q: &Quantization) -> Result<Scalar, GraphError> {
    let amounts: Vec<&Scalar> = g.edges.iter().map(|e| e.amount.value()).collect();
    let quantum = match q {
        Quantization::Explicit(a) => a.value().clone(),
        Quantization::Gcd => rational_gcd(amounts.iter().copied()).ok_or(GraphError::Incommensurable)?,
        Quantization::Auto => {
            let largest = amounts.iter().map(|a| (*a).clone()).max().unwrap_or_else(Scalar::one);
            let cap = Scalar::from_int(AUTO_MAX_PARCELS);
            match rational_gcd(amounts.iter().copied()) {
                Some(gcd) if &largest / &gcd <= cap => gcd,
                _ => {
                    let mut k: i32 = 0;
                    let fits = |k: i32| largest.scale_pow10(-k) <= cap;
                    while !fits(k) {
                        k += 1;
                    }
                    while k > -60 && fits(k - 1) {
                        k -= 1;
                    }
                    Scalar::one().scale_pow10(k)
                }
            }
        }
    };
    if !quantum.is_positive() {
        return Err(GraphError::InvalidQuantum);
    }
    Ok(quantum)
}

fn parcels(v: &Scalar, q: &Scalar, budget: u64) -> Result<u64, GraphError> {
    let n: BigInt = (v / q).round();
    n.to_u64().filter(|n| *n <= budget).ok_or(GraphError::BudgetExceeded { budget })
}

struct Search {
    /// (from, to, parcels) per edge, node indices.
    edges: Vec<(usize, usize, u64)>,
    /// Sender holdings just before each edge.
    sender_hold: Vec<u64>,
    beneficiary: usize,
    budget: u64,
    expanded: u64,
    memo: HashMap<(usize, Vec<u64>), (u64, u64, u64)>,
}

impl Search {
    /// (min, max, count) of the principal's own parcels that end at the
    /// beneficiary, over all routings of edges `i..`.
    fn solve(&mut self, i: usize, tagged: Vec<u64>) -> Result<(u64, u64, u64), GraphError> {
        if i == self.edges.len() {
            let v = tagged[self.beneficiary];
            return Ok((v, v, 1));
        }
        let key = (i, tagged);
        if let Some(r) = self.memo.get(&key) {
            return Ok(*r);
        }
        let tagged = key.1.clone();
        let (s, r, n) = self.edges[i];
        let t = tagged[s];
        let untagged = self.sender_hold[i] - t;
        let lo = n.saturating_sub(untagged);
        let hi = n.min(t);
        let mut acc: Option<(u64, u64, u64)> = None;
        for k in lo..=hi {
            self.expanded += 1;
            if self.expanded > self.budget {
                return Err(GraphError::BudgetExceeded { budget: self.budget });
            }
            let mut next = tagged.clone();
            next[s] -= k;
            next[r] += k;
            let (mn, mx, c) = self.solve(i + 1, next)?;
            acc = Some(match acc {
                None => (mn, mx, c),
                Some((a, b, d)) => (a.min(mn), b.max(mx), d.saturating_add(c)),
            });
        }
        let res = acc.expect("range is never empty under conservation");
        self.memo.insert(key, res);
        Ok(res)
    }
}

pub fn attribute(
    g: &TransferGraph,
    principal: &Address,
    beneficiary: &Address,
    quantization: &Quantization,
) -> Result<AttributionResult, GraphError> {
    attribute_with_budget(g, principal, beneficiary, quantization, DEFAULT_BUDGET)
}

/// Enumerates every time-ordered, conserving routing of parcels and reports
/// the range of the principal's starting holdings that can end at
/// `beneficiary`. Value a node receives keeps its origin, so forwarding
/// through the principal does not make value the principal's. Parcels are
/// fungible within each origin class and routings are counted up to that.
pub fn attribute_with_budget(
    g: &TransferGraph,
    principal: &Address,
    beneficiary: &Address,
    quantization: &Quantization,
    budget: u64,
) -> Result<AttributionResult, GraphError> {
    let q = pick_quantum(g, quantization)?;
    let mut index: BTreeMap<&Address, usize> = BTreeMap::new();
    for n in g.nodes.iter().chain([principal, beneficiary]) {
        let len = index.len();
        index.entry(n).or_insert(len);
    }
    let mut edges = Vec::with_capacity(g.edges.len());
    for e in &g.edges {
        edges.push((index[&e.from], index[&e.to], parcels(e.amount.value(), &q, budget)?));
    }
    let p = index[principal];
    let b = index[beneficiary];

    // Starting holdings in parcels, raised to cover rounded outflows.
    let declared = g.effective_initial();
    let mut hold = vec![0u64; index.len()];
    for (addr, v) in &declared {
        hold[index[addr]] = parcels(v, &q, budget)?;
    }
    let mut run = hold.clone();
    for &(s, r, n) in &edges {
        if run[s] < n {
            hold[s] += n - run[s];
            run[s] = n;
        }
        run[s] -= n;
        run[r] += n;
    }
    let mut sender_hold = Vec::with_capacity(edges.len());
    let mut run = hold.clone();
    for &(s, r, n) in &edges {
        sender_hold.push(run[s]);
        run[s] -= n;
        run[r] += n;
    }
    let mut tagged = vec![0u64; index.len()];
    tagged[p] = hold[p];

    let mut search = Search {
        edges,
        sender_hold,
        beneficiary: b,
        budget,
        expanded: 0,
        memo: HashMap::new(),
    };
    let (mn, mx, count) = search.solve(0, tagged)?;
    let amt = |n: u64| Amount::new(&Scalar::from_int(n) * &q).expect("non-negative");
    Ok(AttributionResult {
        principal: principal.clone(),
        beneficiary: beneficiary.clone(),
        asset: g.asset.symbol.clone(),
        quantum: Amount::new(q.clone()).expect("positive"),
        p_to_b_min: amt(mn),
        p_to_b_max: amt(mx),
        decomposition_count: count,
        recoverable: mn == mx && mn > 0,
    })
}

/// Binary forward closure: a node becomes tainted when it receives from a
/// node that is tainted at that point in time.
pub fn taint_poison(g: &TransferGraph, tainted: &BTreeSet<Address>) -> BTreeMap<Address, bool> {
    let mut set: BTreeSet<Address> = tainted.clone();
    for e in &g.edges {
        if set.contains(&e.from) && !e.amount.is_zero() {
            set.insert(e.to.clone());
        }
    }
    g.nodes.iter().chain(tainted.iter()).map(|n| (n.clone(), set.contains(n))).collect()
}

/// Proportional dilution: each transfer carries the sender's tainted share
/// at that moment. Reports each node's share of its final holdings, or of
/// its last non-empty holdings if it ends empty.
pub fn taint_haircut(g: &TransferGraph, tainted: &BTreeSet<Address>) -> BTreeMap<Address, Scalar> {
    let mut bal = g.effective_initial();
    for t in tainted {
        bal.entry(t.clone()).or_default();
    }
    let mut dirty: BTreeMap<Address, Scalar> = bal
        .iter()
        .map(|(n, v)| (n.clone(), if tainted.contains(n) { v.clone() } else { Scalar::zero() }))
        .collect();
    let mut share: BTreeMap<Address, Scalar> = bal
        .keys()
        .map(|n| (n.clone(), if tainted.contains(n) { Scalar::one() } else { Scalar::zero() }))
        .collect();
    for e in &g.edges {
        let v = e.amount.value();
        let f = share[&e.from].clone();
        let moved = v * &f;
        for (node, sign) in [(&e.from, -1i64), (&e.to, 1)] {
            let s = Scalar::from_int(sign);
            let b = bal.get_mut(node).expect("node");
            *b = &*b + &(v * &s);
            let d = dirty.get_mut(node).expect("node");
            *d = &*d + &(&moved * &s);
            if b.is_positive() {
                let ratio = &*d / &*b;
                share.insert(node.clone(), ratio);
            }
        }
    }
    share
}

/// Label-erased encoding of a time-ordered valued multigraph. Nodes are
/// numbered by first appearance, so two graphs get the same string exactly
/// when a node renaming maps one edge sequence onto the other.
pub fn canonical_form(g: &TransferGraph) -> String {
    let mut ids = NodeIds::default();
    let parts: Vec<String> = g
        .edges
        .iter()
        .map(|e| format!("{}>{}:{}", ids.get(&e.from), ids.get(&e.to), e.amount.value()))
        .collect();
    format!("{}|{}", g.asset.symbol, parts.join(";"))
}

/// Canonical form over every transfer of a trace, with asset symbols kept.
pub fn canonical_form_trace(trace: &ExecutionTrace) -> String {
    let mut ids = NodeIds::default();
    let parts: Vec<String> = trace
        .events
        .iter()
        .map(|e| format!("{}>{}:{} {}", ids.get(&e.from), ids.get(&e.to), e.amount.value(), e.asset))
        .collect();
    parts.join(";")
}

#[derive(Default)]
struct NodeIds(BTreeMap<Address, usize>);

impl NodeIds {
    fn get(&mut self, a: &Address) -> usize {
        let next = self.0.len();
        *self.0.entry(a.clone()).or_insert(next)
    }
}

/// JSON object mapping address to taint flag or share, with stable order.
pub fn taint_json<V: Serialize>(map: &BTreeMap<Address, V>) -> String {
    serde_json::to_string_pretty(map).expect("taint map serializes")
}

#[cfg(test)]
mod tests {
    use super::*;

    fn a(s: &str) -> Address {
        Address::new(s)
    }

    fn graph(edges: &[(&str, &str, i64)]) -> TransferGraph {
        let edges: Vec<GraphEdge> = edges
            .iter()
            .enumerate()
            .map(|(i, (f, t, v))| GraphEdge {
                seq: i as u64 + 1,
                from: a(f),
                to: a(t),
                amount: Amount::from_int(*v),
            })
            .collect();
        TransferGraph {
            asset: AssetId::new("A", 0).unwrap(),
            numeric_mode: NumericMode::Exact,
            nodes: edges.iter().flat_map(|e| [e.from.clone(), e.to.clone()]).collect(),
            edges,
            labels: BTreeMap::new(),
            initial: BTreeMap::new(),
        }
    }

    #[test]
    fn direct_edge_is_recoverable() {
        let g = graph(&[("P", "B", 10)]);
        let r = attribute(&g, &a("P"), &a("B"), &Quantization::Gcd).unwrap();
        assert_eq!((r.p_to_b_min.clone(), r.p_to_b_max.clone()), (Amount::from_int(10), Amount::from_int(10)));
        assert!(r.recoverable);
        assert_eq!(r.decomposition_count, 1);
    }

    #[test]
    fn mixing_node_is_not_recoverable() {
        let g = graph(&[("P", "O", 10), ("F", "O", 10), ("O", "B", 10), ("O", "F", 10)]);
        let r = attribute(&g, &a("P"), &a("B"), &Quantization::Gcd).unwrap();
        assert_eq!(r.p_to_b_min, Amount::zero());
        assert_eq!(r.p_to_b_max, Amount::from_int(10));
        assert!(!r.recoverable);
        assert_eq!(r.decomposition_count, 2);
        let fine = attribute(&g, &a("P"), &a("B"), &Quantization::Explicit(Amount::from_int(1))).unwrap();
        assert_eq!(fine.decomposition_count, 11);
    }

    #[test]
    fn lossy_chain_stays_recoverable() {
        let g = graph(&[("P", "X", 10), ("X", "Y", 9), ("Y", "B", 8)]);
        let r = attribute(&g, &a("P"), &a("B"), &Quantization::Gcd).unwrap();
        assert!(r.recoverable);
        assert_eq!(r.p_to_b_min, Amount::from_int(8));
    }

    #[test]
    fn budget_is_enforced() {
        let g = graph(&[("P", "O", 1000), ("F", "O", 1000), ("O", "B", 1000), ("O", "F", 1000)]);
        let q = Quantization::Explicit(Amount::from_int(1));
        assert_eq!(
            attribute_with_budget(&g, &a("P"), &a("B"), &q, 100),
            Err(GraphError::BudgetExceeded { budget: 100 })
        );
    }

    #[test]
    fn irrational_amounts_need_a_quantum() {
        let mut g = graph(&[("P", "B", 1)]);
        g.edges[0].amount = Amount::new(Scalar::from_int(2).sqrt_exact(None).unwrap()).unwrap();
        assert_eq!(attribute(&g, &a("P"), &a("B"), &Quantization::Gcd), Err(GraphError::Incommensurable));
        assert!(attribute(&g, &a("P"), &a("B"), &Quantization::Auto).unwrap().recoverable);
    }

    #[test]
    fn poison_closure() {
        let g = graph(&[("P", "X", 1), ("X", "Y", 1)]);
        let t = taint_poison(&g, &[a("P")].into());
        assert!(t.values().all(|v| *v));
        assert!(taint_poison(&g, &BTreeSet::new()).values().all(|v| !*v));
        // Order matters: Y forwarded before it was tainted.
        let g = graph(&[("Y", "Z", 1), ("P", "Y", 1)]);
        assert!(!taint_poison(&g, &[a("P")].into())[&a("Z")]);
    }

    #[test]
    fn haircut_mixes_proportionally() {
        let g = graph(&[("P", "X", 10)]).with_initial(&a("X"), Amount::from_int(10));
        let h = taint_haircut(&g, &[a("P")].into());
        assert_eq!(h[&a("X")], Scalar::from_ratio(1, 2));
        assert!(taint_haircut(&g, &BTreeSet::new()).values().all(|v| v.is_zero()));
    }

    #[test]
    fn canonical_form_ignores_names_not_order() {
        let g1 = graph(&[("P", "O", 10), ("O", "B", 10)]);
        let g2 = graph(&[("u", "v", 10), ("v", "w", 10)]);
        let g3 = graph(&[("O", "B", 10), ("P", "O", 10)]);
        assert_eq!(canonical_form(&g1), canonical_form(&g2));
        assert_ne!(canonical_form(&g1), canonical_form(&g3));
        let extra = g1.with_extra_edge(&a("B"), &a("P"), Amount::from_int(1));
        assert_ne!(canonical_form(&g1), canonical_form(&extra));
    }

    #[test]
    fn dot_lists_nodes_and_edges() {
        let dot = graph(&[("P", "B", 10)]).to_dot();
        assert!(dot.contains("\"P\" [label=\"P (unlabeled)\"]"));
        assert!(dot.contains("\"P\" -> \"B\" [label=\"1:10 A\"]"));
    }
}
