//! Relation-path rules, rule-following walk probabilities and rule weights.
//!
//! A rule `h = [r_1, .., r_n]` is followed from `e_0` by a uniform random walk:
//! each step picks one of the `|C(e)|` outgoing edges of the current entity
//! and survives only if the edge carries the next relation of the rule. The
//! probability of ending at `e_n` is computed by pushing mass through the
//! graph, one relation at a time.
//!
//! Training examples can mask their own edge (leave-one-out): the masked
//! triple is invisible everywhere during the walk and the head's out-degree
//! shrinks by one while it is masked.

use std::collections::{BTreeMap, HashMap};
use std::io::Write;
use std::path::Path;

use log::warn;
use rand::seq::index::sample;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dist::{DistKind, EntityDistribution};
use crate::error::{Error, Result};
use crate::kg::{EntityId, KnowledgeGraph, RelationId, Triple};

#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Rule(pub Vec<RelationId>);

impl Rule {
    pub fn new(relations: impl Into<Vec<RelationId>>) -> Self {
        Rule(relations.into())
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn display(&self, graph: &KnowledgeGraph) -> String {
        let names: Vec<&str> = self.0.iter().map(|&r| graph.relation_name(r)).collect();
        format!("[{}]", names.join(","))
    }
}

/// Outgoing edges of `e`, with the masked triple removed.
#[inline]
fn degree(graph: &KnowledgeGraph, e: EntityId, mask: Option<&Triple>) -> usize {
    let d = graph.out_degree(e);
    match mask {
        Some(m) if m.head == e && graph.contains(m) => d - 1,
        _ => d,
    }
}

/// Pushes `mass` one step along `relation`, accumulating into `next`.
fn push(
    graph: &KnowledgeGraph,
    frontier: &[(EntityId, f64)],
    relation: RelationId,
    mask: Option<&Triple>,
    next: &mut BTreeMap<EntityId, f64>,
) {
    for &(e, m) in frontier {
        let edges = graph.edges_with_relation(e, relation);
        if edges.is_empty() {
            continue;
        }
        let d = degree(graph, e, mask);
        if d == 0 {
            continue;
        }
        let step = m / d as f64;
        for edge in edges {
            if let Some(t) = mask {
                if t.head == e && t.relation == relation && t.tail == edge.tail {
                    continue;
                }
            }
            *next.entry(edge.tail).or_insert(0.0) += step;
        }
    }
}

/// `P(e | e0, h)` for every reachable `e`, sorted by entity id.
pub fn rule_prob(graph: &KnowledgeGraph, e0: EntityId, rule: &Rule) -> Vec<(EntityId, f64)> {
    rule_prob_masked(graph, e0, rule, None)
}

/// [`rule_prob`] with one triple hidden from the graph.
pub fn rule_prob_masked(
    graph: &KnowledgeGraph,
    e0: EntityId,
    rule: &Rule,
    mask: Option<&Triple>,
) -> Vec<(EntityId, f64)> {
    let mut frontier = vec![(e0, 1.0)];
    for &r in &rule.0 {
        let mut next = BTreeMap::new();
        push(graph, &frontier, r, mask, &mut next);
        frontier = next.into_iter().filter(|&(_, m)| m > 0.0).collect();
        if frontier.is_empty() {
            break;
        }
    }
    frontier
}

/// Prefix tree over a rule list; evaluates every rule from one start entity
/// while sharing the walk over common prefixes.
#[derive(Clone, Debug)]
pub struct RuleTrie {
    // node 0 is the root; children sorted by relation
    children: Vec<Vec<(RelationId, usize)>>,
    // rule indices ending at each node
    ends: Vec<Vec<usize>>,
    rules: usize,
}

impl RuleTrie {
    pub fn new<'a>(rules: impl IntoIterator<Item = &'a Rule>) -> Self {
        let mut children: Vec<Vec<(RelationId, usize)>> = vec![Vec::new()];
        let mut ends = vec![Vec::new()];
        let mut count = 0;
        for (i, rule) in rules.into_iter().enumerate() {
            let mut node = 0;
            for &r in &rule.0 {
                node = match children[node].iter().find(|c| c.0 == r) {
                    Some(&(_, n)) => n,
                    None => {
                        let n = children.len();
                        children.push(Vec::new());
                        ends.push(Vec::new());
                        children[node].push((r, n));
                        n
                    }
                };
            }
            ends[node].push(i);
            count = i + 1;
        }
        for c in &mut children {
            c.sort();
        }
        Self {
            children,
            ends,
            rules: count,
        }
    }

    pub fn rule_count(&self) -> usize {
        self.rules
    }

    /// Calls `visit(rule_index, distribution)` for every rule reachable with
    /// positive mass, in depth-first order.
    pub fn walk(
        &self,
        graph: &KnowledgeGraph,
        e0: EntityId,
        mask: Option<&Triple>,
        mut visit: impl FnMut(usize, &[(EntityId, f64)]),
    ) {
        let mut stack: Vec<(usize, Vec<(EntityId, f64)>)> = vec![(0, vec![(e0, 1.0)])];
        while let Some((node, frontier)) = stack.pop() {
            for &rule in &self.ends[node] {
                visit(rule, &frontier);
            }
            for &(r, child) in self.children[node].iter().rev() {
                let mut next = BTreeMap::new();
                push(graph, &frontier, r, mask, &mut next);
                let next: Vec<_> = next.into_iter().filter(|&(_, m)| m > 0.0).collect();
                if !next.is_empty() {
                    stack.push((child, next));
                }
            }
        }
    }

    /// `P(target | e0, h)` for every rule, as a dense feature row.
    pub fn features(
        &self,
        graph: &KnowledgeGraph,
        e0: EntityId,
        target: EntityId,
        mask: Option<&Triple>,
    ) -> Vec<f64> {
        let mut row = vec![0.0; self.rules];
        self.walk(graph, e0, mask, |i, dist| {
            if let Ok(k) = dist.binary_search_by_key(&target, |x| x.0) {
                row[i] = dist[k].1;
            }
        });
        row
    }

    /// `Σ_h w_h P(e | e0, h)` over all entities (dense).
    pub fn scores(&self, graph: &KnowledgeGraph, e0: EntityId, weights: &[f64]) -> Vec<f64> {
        let mut s = vec![0.0; graph.entity_count()];
        self.walk(graph, e0, None, |i, dist| {
            let w = weights[i];
            if w != 0.0 {
                for &(e, p) in dist {
                    s[e.index()] += w * p;
                }
            }
        });
        s
    }
}

/// How rule support is counted during mining.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SupportMode {
    /// Every path instance counts.
    #[default]
    Instances,
    /// Each `(e1, e2)` pair counts once per rule.
    Pairs,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MiningOptions {
    /// Maximum paths enumerated per `(e1, e2)` pair.
    pub path_cap: usize,
    /// Keep the single-relation rule `[r]`.
    pub include_self_rule: bool,
    /// Hide the target edge while searching its paths.
    pub mask_target_edge: bool,
    pub support: SupportMode,
}

impl Default for MiningOptions {
    fn default() -> Self {
        Self {
            path_cap: 10_000,
            include_self_rule: false,
            mask_target_edge: true,
            support: SupportMode::Instances,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RuleStat {
    pub rule: Rule,
    pub support: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RuleSet {
    pub relation: RelationId,
    pub n_max: usize,
    pub min_support: u64,
    /// Sorted by rule (lexicographic on relation ids, shorter first).
    pub rules: Vec<RuleStat>,
    /// Number of pairs whose enumeration hit the path cap.
    #[serde(default)]
    pub truncated_pairs: usize,
}

impl RuleSet {
    pub fn len(&self) -> usize {
        self.rules.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rules.is_empty()
    }

    pub fn rules(&self) -> impl Iterator<Item = &Rule> {
        self.rules.iter().map(|s| &s.rule)
    }

    pub fn trie(&self) -> RuleTrie {
        RuleTrie::new(self.rules())
    }

    /// Keeps rules of length at most `n_max` and support above `m`.
    pub fn restrict(&self, n_max: usize, m: u64) -> RuleSet {
        RuleSet {
            relation: self.relation,
            n_max: n_max.min(self.n_max),
            min_support: m.max(self.min_support),
            rules: self
                .rules
                .iter()
                .filter(|s| s.rule.len() <= n_max && s.support > m)
                .cloned()
                .collect(),
            truncated_pairs: self.truncated_pairs,
        }
    }
}

/// Shortest distance from every entity to `target` (`u32::MAX` beyond `max`).
fn distances_to(
    graph: &KnowledgeGraph,
    target: EntityId,
    max: usize,
    mask: Option<&Triple>,
) -> Vec<u32> {
    let n = graph.entity_count();
    let mut dist = vec![u32::MAX; n];
    dist[target.index()] = 0;
    for depth in 1..=max as u32 {
        let mut next = Vec::new();
        for e in 0..n {
            if dist[e] != u32::MAX {
                continue;
            }
            let id = EntityId(e as u32);
            let hits = graph.edges_of(id).iter().any(|edge| {
                dist[edge.tail.index()] == depth - 1
                    && !matches!(mask, Some(t) if t.head == id && t.relation == edge.relation && t.tail == edge.tail)
            });
            if hits {
                next.push(id);
            }
        }
        for &e in &next {
            dist[e.index()] = depth;
        }
        if next.is_empty() {
            break;
        }
    }
    dist
}

/// Relation sequences of all walks `e1 ⇝ e2` of length `1..=n_max`, capped.
fn enumerate_paths(
    graph: &KnowledgeGraph,
    e1: EntityId,
    e2: EntityId,
    n_max: usize,
    cap: usize,
    mask: Option<&Triple>,
    out: &mut HashMap<Vec<RelationId>, u64>,
) -> bool {
    let dist = distances_to(graph, e2, n_max, mask);
    if dist[e1.index()] as usize > n_max {
        return false;
    }
    let mut found = 0usize;
    let mut seq = Vec::with_capacity(n_max);
    // explicit stack: (entity, edge cursor)
    let mut stack: Vec<(EntityId, usize)> = vec![(e1, 0)];
    while let Some(top) = stack.last_mut() {
        let (e, cursor) = *top;
        let edges = graph.edges_of(e);
        if cursor >= edges.len() {
            stack.pop();
            seq.pop();
            continue;
        }
        top.1 += 1;
        let edge = edges[cursor];
        if let Some(t) = mask {
            if t.head == e && t.relation == edge.relation && t.tail == edge.tail {
                continue;
            }
        }
        let depth = stack.len(); // length of the path once this edge is taken
        let remaining = n_max - depth;
        if dist[edge.tail.index()] as usize > remaining {
            continue;
        }
        seq.push(edge.relation);
        if edge.tail == e2 {
            *out.entry(seq.clone()).or_insert(0) += 1;
            found += 1;
            if found >= cap {
                return true;
            }
        }
        if remaining > 0 {
            stack.push((edge.tail, 0));
        } else {
            seq.pop();
        }
    }
    false
}

/// Mines `H_r`: relation sequences of length `<= n_max` connecting the
/// endpoints of `r`-triples, kept when their support exceeds `m`.
pub fn mine_rules(
    graph: &KnowledgeGraph,
    r: RelationId,
    n_max: usize,
    m: u64,
    opts: &MiningOptions,
) -> Result<RuleSet> {
    if r.index() >= graph.relation_count() {
        return Err(Error::OutOfRange {
            kind: "relation",
            id: r.index(),
            size: graph.relation_count(),
        });
    }
    if n_max == 0 {
        return Err(Error::Config("N_max must be at least 1".into()));
    }
    let targets: Vec<Triple> = graph.triples_with_relation(r).copied().collect();
    let per_pair: Vec<(HashMap<Vec<RelationId>, u64>, bool)> = targets
        .par_iter()
        .map(|t| {
            let mask = opts.mask_target_edge.then_some(t);
            let mut counts = HashMap::new();
            let truncated = enumerate_paths(
                graph,
                t.head,
                t.tail,
                n_max,
                opts.path_cap.max(1),
                mask,
                &mut counts,
            );
            (counts, truncated)
        })
        .collect();
    let mut support: BTreeMap<Vec<RelationId>, u64> = BTreeMap::new();
    let mut truncated_pairs = 0;
    for (counts, truncated) in per_pair {
        truncated_pairs += truncated as usize;
        for (seq, c) in counts {
            let add = match opts.support {
                SupportMode::Instances => c,
                SupportMode::Pairs => 1,
            };
            *support.entry(seq).or_insert(0) += add;
        }
    }
    if truncated_pairs > 0 {
        warn!(
            "relation {}: path enumeration hit the cap of {} on {} pairs",
            graph.relation_name(r),
            opts.path_cap,
            truncated_pairs
        );
    }
    let mut rules: Vec<RuleStat> = support
        .into_iter()
        .filter(|(seq, c)| *c > m && (opts.include_self_rule || seq.as_slice() != [r]))
        .map(|(seq, c)| RuleStat {
            rule: Rule(seq),
            support: c,
        })
        .collect();
    rules.sort_by(|a, b| a.rule.len().cmp(&b.rule.len()).then(a.rule.cmp(&b.rule)));
    Ok(RuleSet {
        relation: r,
        n_max,
        min_support: m,
        rules,
        truncated_pairs,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WeightedRule {
    pub rule: Rule,
    pub support: u64,
    pub weight: f64,
}

/// `w_r(h)` over `H_r`; rules outside the list weigh zero.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RuleWeights {
    pub relation: RelationId,
    pub rules: Vec<WeightedRule>,
    #[serde(default)]
    pub fit: Option<FitReport>,
}

impl RuleWeights {
    /// Every rule of `set` with the same weight.
    pub fn constant(set: &RuleSet, w: f64) -> Self {
        Self {
            relation: set.relation,
            rules: set
                .rules
                .iter()
                .map(|s| WeightedRule {
                    rule: s.rule.clone(),
                    support: s.support,
                    weight: w,
                })
                .collect(),
            fit: None,
        }
    }

    pub fn weights(&self) -> Vec<f64> {
        self.rules.iter().map(|r| r.weight).collect()
    }

    pub fn trie(&self) -> RuleTrie {
        RuleTrie::new(self.rules.iter().map(|r| &r.rule))
    }

    /// Keeps only rules of length `<= n_max`.
    pub fn restrict(&self, n_max: usize) -> RuleWeights {
        RuleWeights {
            relation: self.relation,
            rules: self
                .rules
                .iter()
                .filter(|r| r.rule.len() <= n_max)
                .cloned()
                .collect(),
            fit: self.fit.clone(),
        }
    }
}

/// `S_w(· | e1, r)` restricted to entities with a non-zero score.
pub fn score(graph: &KnowledgeGraph, weights: &RuleWeights, e1: EntityId) -> Vec<(EntityId, f64)> {
    weights
        .trie()
        .scores(graph, e1, &weights.weights())
        .into_iter()
        .enumerate()
        .filter(|&(_, s)| s != 0.0)
        .map(|(i, s)| (EntityId(i as u32), s))
        .collect()
}

/// Precomputed evaluator for many queries against one rule weighting.
#[derive(Clone, Debug)]
pub struct Aggregator {
    trie: RuleTrie,
    weights: Vec<f64>,
    pub temperature: f64,
    pub kind: DistKind,
}

impl Aggregator {
    pub fn weighted(weights: &RuleWeights, temperature: f64) -> Self {
        Self {
            trie: weights.trie(),
            weights: weights.weights(),
            temperature,
            kind: DistKind::Weighted,
        }
    }

    pub fn unweighted(set: &RuleSet, temperature: f64) -> Self {
        Self {
            trie: set.trie(),
            weights: vec![1.0; set.len()],
            temperature,
            kind: DistKind::Unweighted,
        }
    }

    pub fn scores(&self, graph: &KnowledgeGraph, e1: EntityId) -> Vec<f64> {
        self.trie.scores(graph, e1, &self.weights)
    }

    pub fn distribution(&self, graph: &KnowledgeGraph, e1: EntityId) -> EntityDistribution {
        EntityDistribution::softmax(&self.scores(graph, e1), self.temperature, self.kind)
    }

    /// Highest-scoring entity; ties go to the smallest id.
    pub fn predict(&self, graph: &KnowledgeGraph, e1: EntityId) -> EntityId {
        EntityId(crate::dist::argmax(&self.scores(graph, e1)) as u32)
    }
}

fn check_temperature(t: f64) -> Result<()> {
    if t > 0.0 && t.is_finite() {
        Ok(())
    } else {
        Err(Error::Config(format!(
            "temperature must be positive, got {t}"
        )))
    }
}

/// `P_w(· | e1, r) = softmax(S_w / T)`.
pub fn weighted_dist(
    graph: &KnowledgeGraph,
    weights: &RuleWeights,
    e1: EntityId,
    temperature: f64,
) -> Result<EntityDistribution> {
    check_temperature(temperature)?;
    Ok(Aggregator::weighted(weights, temperature).distribution(graph, e1))
}

/// `P_s`: [`weighted_dist`] with every rule of `set` weighted one.
pub fn unweighted_dist(
    graph: &KnowledgeGraph,
    set: &RuleSet,
    e1: EntityId,
    temperature: f64,
) -> Result<EntityDistribution> {
    check_temperature(temperature)?;
    Ok(Aggregator::unweighted(set, temperature).distribution(graph, e1))
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Penalty {
    /// `λ Σ |w_h|`
    #[default]
    L1,
    /// `λ Σ w_h²`
    L2,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LearnConfig {
    pub lambda: f64,
    pub penalty: Penalty,
    pub negatives_per_positive: usize,
    pub learning_rate: f64,
    pub max_iters: usize,
    /// Stop once the loss improves by less than this (relative).
    pub tolerance: f64,
    /// Leave-one-out features: hide each example's own edge.
    pub mask_own_edge: bool,
    pub seed: u64,
}

impl Default for LearnConfig {
    fn default() -> Self {
        Self {
            lambda: 0.01,
            penalty: Penalty::L1,
            negatives_per_positive: 4,
            learning_rate: 0.1,
            max_iters: 5000,
            tolerance: 1e-10,
            mask_own_edge: true,
            seed: 0,
        }
    }
}

/// Feature matrix of a logistic-regression problem.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainingData {
    pub triples: Vec<Triple>,
    /// Row-major `[examples, rules]`.
    pub features: Vec<Vec<f64>>,
    pub labels: Vec<f64>,
}

impl TrainingData {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn write_csv(&self, graph: &KnowledgeGraph, rules: &RuleSet, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        let mut header = vec![
            "head".to_string(),
            "relation".into(),
            "tail".into(),
            "label".into(),
        ];
        header.extend(rules.rules().map(|r| r.display(graph)));
        w.write_record(&header)?;
        for ((t, x), y) in self.triples.iter().zip(&self.features).zip(&self.labels) {
            let mut rec = vec![
                graph.entity_name(t.head).to_string(),
                graph.relation_name(t.relation).to_string(),
                graph.entity_name(t.tail).to_string(),
                format!("{y}"),
            ];
            rec.extend(x.iter().map(|v| format!("{v}")));
            w.write_record(&rec)?;
        }
        w.flush().map_err(|e| Error::io(path, e))?;
        Ok(())
    }
}

/// Positives are the `r`-triples of the graph; negatives are drawn uniformly
/// from triples with other relations (without replacement when possible).
pub fn build_training_data(
    graph: &KnowledgeGraph,
    set: &RuleSet,
    cfg: &LearnConfig,
) -> TrainingData {
    let r = set.relation;
    let positives: Vec<Triple> = graph.triples_with_relation(r).copied().collect();
    let pool: Vec<Triple> = graph
        .triples()
        .iter()
        .filter(|t| t.relation != r)
        .copied()
        .collect();
    let want = positives.len() * cfg.negatives_per_positive;
    let mut rng =
        ChaCha8Rng::seed_from_u64(cfg.seed ^ (r.0 as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15));
    let negatives: Vec<Triple> = if pool.is_empty() {
        Vec::new()
    } else if want <= pool.len() {
        let mut idx = sample(&mut rng, pool.len(), want).into_vec();
        idx.sort_unstable();
        idx.into_iter().map(|i| pool[i]).collect()
    } else {
        (0..want)
            .map(|_| pool[rng.gen_range(0..pool.len())])
            .collect()
    };
    let mut triples = positives;
    let n_pos = triples.len();
    triples.extend(negatives);
    let labels = (0..triples.len())
        .map(|i| if i < n_pos { 1.0 } else { 0.0 })
        .collect();
    let trie = set.trie();
    let features = triples
        .par_iter()
        .map(|t| {
            let mask = cfg.mask_own_edge.then_some(t);
            trie.features(graph, t.head, t.tail, mask)
        })
        .collect();
    TrainingData {
        triples,
        features,
        labels,
    }
}

#[inline]
fn log_sigmoid(z: f64) -> f64 {
    // ln(1 / (1 + e^-z)), stable for large |z|
    if z >= 0.0 {
        -(-z).exp().ln_1p()
    } else {
        z - z.exp().ln_1p()
    }
}

#[inline]
fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// Regularised binary cross-entropy (summed over examples) and its
/// (sub)gradient; the L1 subgradient at zero is taken as zero.
pub fn logistic_loss_grad(
    w: &[f64],
    data: &TrainingData,
    lambda: f64,
    penalty: Penalty,
) -> (f64, Vec<f64>) {
    let mut loss = 0.0;
    let mut grad = vec![0.0; w.len()];
    for (x, &y) in data.features.iter().zip(&data.labels) {
        let z: f64 = x.iter().zip(w).map(|(a, b)| a * b).sum();
        loss -= y * log_sigmoid(z) + (1.0 - y) * log_sigmoid(-z);
        let g = sigmoid(z) - y;
        if g != 0.0 {
            for (gj, &xj) in grad.iter_mut().zip(x) {
                *gj += g * xj;
            }
        }
    }
    match penalty {
        Penalty::L1 => {
            for (gj, &wj) in grad.iter_mut().zip(w) {
                loss += lambda * wj.abs();
                *gj += lambda
                    * if wj > 0.0 {
                        1.0
                    } else if wj < 0.0 {
                        -1.0
                    } else {
                        0.0
                    };
            }
        }
        Penalty::L2 => {
            for (gj, &wj) in grad.iter_mut().zip(w) {
                loss += lambda * wj * wj;
                *gj += 2.0 * lambda * wj;
            }
        }
    }
    (loss, grad)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FitReport {
    pub loss: f64,
    pub initial_loss: f64,
    pub iterations: usize,
    pub converged: bool,
    pub examples: usize,
}

/// Full-batch gradient descent from `w = 0`. A step that does not lower the
/// loss is retried at half the step size; an accepted step grows it by half.
pub fn fit_logistic(data: &TrainingData, dims: usize, cfg: &LearnConfig) -> (Vec<f64>, FitReport) {
    let mut w = vec![0.0; dims];
    let (mut loss, mut grad) = logistic_loss_grad(&w, data, cfg.lambda, cfg.penalty);
    let initial_loss = loss;
    let mut lr = cfg.learning_rate;
    let mut converged = dims == 0;
    let mut iterations = 0;
    // consecutive accepted steps whose relative gain fell under the tolerance
    let mut flat = 0;
    while !converged && iterations < cfg.max_iters {
        iterations += 1;
        let cand: Vec<f64> = w.iter().zip(&grad).map(|(a, g)| a - lr * g).collect();
        let (l2, g2) = logistic_loss_grad(&cand, data, cfg.lambda, cfg.penalty);
        if l2 < loss {
            let gain = loss - l2;
            w = cand;
            grad = g2;
            loss = l2;
            lr *= 1.5;
            flat = if gain <= cfg.tolerance * loss.abs().max(1.0) {
                flat + 1
            } else {
                0
            };
            converged = flat >= 10;
        } else {
            lr *= 0.5;
            converged = lr < 1e-14;
        }
    }
    if !converged {
        warn!(
            "logistic fit stopped after {} iterations without converging (loss {loss})",
            iterations
        );
    }
    (
        w,
        FitReport {
            loss,
            initial_loss,
            iterations,
            converged,
            examples: data.len(),
        },
    )
}

/// Learns `w_r` for the rules of `set`.
pub fn learn_weights(
    graph: &KnowledgeGraph,
    set: &RuleSet,
    cfg: &LearnConfig,
) -> Result<RuleWeights> {
    if cfg.lambda < 0.0 {
        return Err(Error::Config(format!(
            "lambda must be >= 0, got {}",
            cfg.lambda
        )));
    }
    if set.is_empty() {
        return Ok(RuleWeights::constant(set, 0.0));
    }
    let data = build_training_data(graph, set, cfg);
    let (w, report) = fit_logistic(&data, set.len(), cfg);
    Ok(RuleWeights {
        relation: set.relation,
        rules: set
            .rules
            .iter()
            .zip(w)
            .map(|(s, weight)| WeightedRule {
                rule: s.rule.clone(),
                support: s.support,
                weight,
            })
            .collect(),
        fit: Some(report),
    })
}

/// Rule sets for several relations, stored together.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct RuleBook {
    pub n_max: usize,
    pub min_support: u64,
    pub sets: Vec<RuleSet>,
}

impl RuleBook {
    pub fn get(&self, r: RelationId) -> Option<&RuleSet> {
        self.sets.iter().find(|s| s.relation == r)
    }
}

/// Learned weights for several relations.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct WeightBook {
    pub weights: Vec<RuleWeights>,
}

impl WeightBook {
    pub fn get(&self, r: RelationId) -> Option<&RuleWeights> {
        self.weights.iter().find(|w| w.relation == r)
    }
}

pub fn save_json<T: Serialize>(value: &T, path: &Path) -> Result<()> {
    let mut f =
        std::io::BufWriter::new(std::fs::File::create(path).map_err(|e| Error::io(path, e))?);
    serde_json::to_writer_pretty(&mut f, value)?;
    f.write_all(b"\n").map_err(|e| Error::io(path, e))?;
    Ok(())
}

pub fn load_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let f = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    Ok(serde_json::from_reader(std::io::BufReader::new(f))?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kg::GraphBuilder;

    fn close(a: f64, b: f64) -> bool {
        (a - b).abs() < 1e-12
    }

    #[test]
    fn fan_graph() {
        let mut g = GraphBuilder::new();
        g.add("A", "r1", "B");
        g.add("A", "r2", "C");
        let g = g.build();
        let r1 = g.relation_id("r1").unwrap();
        let p = rule_prob(&g, g.entity_id("A").unwrap(), &Rule::new([r1]));
        assert_eq!(p.len(), 1);
        assert_eq!(p[0].0, g.entity_id("B").unwrap());
        assert!(close(p[0].1, 0.5));
    }

    fn diamond() -> KnowledgeGraph {
        let mut g = GraphBuilder::new();
        g.add("A", "r1", "B1");
        g.add("A", "r1", "B2");
        g.add("B1", "r2", "C");
        g.add("B2", "r2", "C");
        g.build()
    }

    #[test]
    fn diamond_graph_sums_both_paths() {
        let g = diamond();
        let (r1, r2) = (g.relation_id("r1").unwrap(), g.relation_id("r2").unwrap());
        let p = rule_prob(&g, g.entity_id("A").unwrap(), &Rule::new([r1, r2]));
        assert_eq!(p, vec![(g.entity_id("C").unwrap(), 1.0)]);
    }

    #[test]
    fn branching_graph() {
        let mut b = GraphBuilder::new();
        b.add("A", "r1", "B");
        b.add("A", "r2", "X");
        b.add("B", "r1", "C");
        b.add("B", "r2", "D");
        let g = b.build();
        let (r1, r2) = (g.relation_id("r1").unwrap(), g.relation_id("r2").unwrap());
        let p = rule_prob(&g, g.entity_id("A").unwrap(), &Rule::new([r1, r2]));
        assert_eq!(p.len(), 1);
        assert_eq!(p[0].0, g.entity_id("D").unwrap());
        assert!(close(p[0].1, 0.25));
    }

    #[test]
    fn masking_hides_edge_and_shrinks_degree() {
        let mut b = GraphBuilder::new();
        let t = b.add("A", "r", "B");
        b.add("A", "s", "C");
        b.add("C", "s", "B");
        let g = b.build();
        let r = g.relation_id("r").unwrap();
        let s = g.relation_id("s").unwrap();
        let a = g.entity_id("A").unwrap();
        assert!(rule_prob_masked(&g, a, &Rule::new([r]), Some(&t)).is_empty());
        let p = rule_prob_masked(&g, a, &Rule::new([s, s]), Some(&t));
        assert!(close(p[0].1, 1.0));
        assert!(close(rule_prob(&g, a, &Rule::new([s, s]))[0].1, 0.5));
    }

    #[test]
    fn mining_the_diamond() {
        let mut b = GraphBuilder::new();
        b.add("A", "r1", "B1");
        b.add("A", "r1", "B2");
        b.add("B1", "r2", "C");
        b.add("B2", "r2", "C");
        b.add("A", "r3", "C");
        let g = b.build();
        let r3 = g.relation_id("r3").unwrap();
        let set = mine_rules(&g, r3, 2, 1, &MiningOptions::default()).unwrap();
        assert_eq!(set.rules.len(), 1);
        let want = Rule::new([g.relation_id("r1").unwrap(), g.relation_id("r2").unwrap()]);
        assert_eq!(set.rules[0].rule, want);
        assert_eq!(set.rules[0].support, 2);
        assert!(mine_rules(&g, r3, 2, 2, &MiningOptions::default())
            .unwrap()
            .is_empty());
        // the literal reading keeps [r3] when asked to
        let opts = MiningOptions {
            include_self_rule: true,
            mask_target_edge: false,
            ..MiningOptions::default()
        };
        let lit = mine_rules(&g, r3, 2, 0, &opts).unwrap();
        assert_eq!(lit.rules[0].rule, Rule::new([r3]));
    }

    #[test]
    fn path_cap_truncates() {
        let mut b = GraphBuilder::new();
        for i in 0..5 {
            b.add("A", "p", &format!("M{i}"));
            b.add(&format!("M{i}"), "q", "Z");
        }
        b.add("A", "t", "Z");
        let g = b.build();
        let t = g.relation_id("t").unwrap();
        let full = mine_rules(&g, t, 2, 0, &MiningOptions::default()).unwrap();
        assert_eq!(full.rules[0].support, 5);
        let opts = MiningOptions {
            path_cap: 3,
            ..MiningOptions::default()
        };
        let capped = mine_rules(&g, t, 2, 0, &opts).unwrap();
        assert_eq!(capped.rules[0].support, 3);
        assert_eq!(capped.truncated_pairs, 1);
        let pairs = MiningOptions {
            support: SupportMode::Pairs,
            ..MiningOptions::default()
        };
        assert_eq!(mine_rules(&g, t, 2, 0, &pairs).unwrap().rules[0].support, 1);
    }

    #[test]
    fn two_rule_score_is_linear() {
        let g = diamond();
        let (r1, r2) = (g.relation_id("r1").unwrap(), g.relation_id("r2").unwrap());
        let w = RuleWeights {
            relation: r1,
            rules: vec![
                WeightedRule {
                    rule: Rule::new([r1]),
                    support: 1,
                    weight: 2.0,
                },
                WeightedRule {
                    rule: Rule::new([r1, r2]),
                    support: 1,
                    weight: -1.0,
                },
            ],
            fit: None,
        };
        let s = score(&g, &w, g.entity_id("A").unwrap());
        // [r1] reaches B1, B2 with 1/2 each; [r1,r2] reaches C with 1.
        let name = |e: EntityId| g.entity_name(e).to_string();
        let got: Vec<(String, f64)> = s.into_iter().map(|(e, v)| (name(e), v)).collect();
        assert_eq!(
            got,
            vec![("B1".into(), 1.0), ("B2".into(), 1.0), ("C".into(), -1.0)]
        );
    }

    #[test]
    fn zero_features_give_half_probability() {
        let data = TrainingData {
            triples: vec![],
            features: vec![vec![0.0, 0.0]; 3],
            labels: vec![1.0, 0.0, 1.0],
        };
        let (loss, grad) = logistic_loss_grad(&[0.7, -0.2], &data, 0.0, Penalty::L2);
        assert!(close(loss, 3.0 * std::f64::consts::LN_2));
        assert_eq!(grad, vec![0.0, 0.0]);
    }

    #[test]
    fn separable_feature_gets_positive_weight() {
        let data = TrainingData {
            triples: vec![],
            features: vec![vec![1.0], vec![1.0], vec![0.0], vec![0.0], vec![0.0]],
            labels: vec![1.0, 1.0, 0.0, 0.0, 0.0],
        };
        let cfg = LearnConfig {
            penalty: Penalty::L2,
            ..LearnConfig::default()
        };
        let (w, rep) = fit_logistic(&data, 1, &cfg);
        assert!(w[0] > 0.0 && w[0].is_finite());
        assert!(rep.loss < 5.0 * std::f64::consts::LN_2);
        assert!(rep.loss < rep.initial_loss);
    }
}
