//! Comparing entity distributions: KL divergence, accuracy, KL grids,
//! rule-length statistics and the rule-marginalisation bound.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt::Write as _;
use std::path::Path;

use log::warn;
use rand::Rng;
use rand_distr::{Distribution, Exp1};
use serde::{Deserialize, Serialize};

use crate::dist::{DistKind, EntityDistribution};
use crate::error::{Error, Result};
use crate::kg::{EntityId, KnowledgeGraph, RelationId, Triple};
use crate::rules::{RuleSet, RuleWeights};

/// `KL(p || q) = Σ p_i ln(p_i / q_i)` in nats, with `0 ln 0 = 0`.
pub fn kl(p: &[f64], q: &[f64]) -> Result<f64> {
    if p.len() != q.len() {
        return Err(Error::Data(format!(
            "KL between vectors of length {} and {}",
            p.len(),
            q.len()
        )));
    }
    let mut sum = 0.0;
    for (i, (&pi, &qi)) in p.iter().zip(q).enumerate() {
        if pi > 0.0 {
            if qi <= 0.0 {
                return Err(Error::InfiniteDivergence { index: i, p: pi });
            }
            sum += pi * (pi / qi).ln();
        }
    }
    Ok(sum)
}

pub fn kl_dist(p: &EntityDistribution, q: &EntityDistribution) -> Result<f64> {
    kl(&p.probs, &q.probs)
}

/// Correct tails of every `(e1, r)` query.
#[derive(Clone, Debug, Default)]
pub struct QueryAnswerIndex {
    answers: HashMap<(EntityId, RelationId), BTreeSet<EntityId>>,
    entities: usize,
}

impl QueryAnswerIndex {
    /// Built from the training graph plus the evaluation triples (and the
    /// validation triples when given).
    pub fn build(graph: &KnowledgeGraph, test: &[Triple], valid: Option<&[Triple]>) -> Self {
        let mut answers: HashMap<_, BTreeSet<EntityId>> = HashMap::new();
        let extra = valid.unwrap_or(&[]);
        for t in graph.triples().iter().chain(test).chain(extra) {
            answers
                .entry((t.head, t.relation))
                .or_default()
                .insert(t.tail);
        }
        Self {
            answers,
            entities: graph.entity_count(),
        }
    }

    pub fn answers(&self, e1: EntityId, r: RelationId) -> Option<&BTreeSet<EntityId>> {
        self.answers.get(&(e1, r))
    }

    pub fn is_correct(&self, e1: EntityId, r: RelationId, e2: EntityId) -> bool {
        self.answers(e1, r).is_some_and(|a| a.contains(&e2))
    }

    pub fn entity_count(&self) -> usize {
        self.entities
    }

    /// Mean answer-set size over the queries of `test` (one per triple).
    pub fn mean_answer_count(&self, test: &[Triple]) -> f64 {
        if test.is_empty() {
            return 0.0;
        }
        let total: usize = test
            .iter()
            .map(|t| self.answers(t.head, t.relation).map_or(0, |a| a.len()))
            .sum();
        total as f64 / test.len() as f64
    }
}

/// `P*`: uniform over the correct answers of `(e1, r)`.
pub fn reference_dist(
    index: &QueryAnswerIndex,
    e1: EntityId,
    r: RelationId,
) -> Result<EntityDistribution> {
    let answers = index
        .answers(e1, r)
        .ok_or_else(|| Error::Data(format!("no answers recorded for query ({e1}, {r})")))?;
    let mut probs = vec![0.0; index.entity_count()];
    let w = 1.0 / answers.len() as f64;
    for a in answers {
        probs[a.index()] = w;
    }
    Ok(EntityDistribution::new(probs, DistKind::Reference))
}

/// `P_u`: uniform over all entities.
pub fn uniform_dist(entities: usize) -> EntityDistribution {
    EntityDistribution::new(vec![1.0 / entities as f64; entities], DistKind::Uniform)
}

/// Fraction of test triples whose predicted tail is a correct answer.
pub fn accuracy(
    mut predict: impl FnMut(EntityId, RelationId) -> Result<EntityId>,
    test: &[Triple],
    index: &QueryAnswerIndex,
) -> Result<f64> {
    if test.is_empty() {
        return Ok(0.0);
    }
    let mut hits = 0usize;
    for t in test {
        let guess = predict(t.head, t.relation)?;
        if index.is_correct(t.head, t.relation, guess) {
            hits += 1;
        }
    }
    Ok(hits as f64 / test.len() as f64)
}

/// How grid cells average over the evaluation set.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Averaging {
    /// One term per test triple (queries with several gold tails repeat).
    #[default]
    PerTriple,
    /// One term per distinct `(e1, r)` query.
    PerQuery,
}

/// The `(e1, r)` prompts a grid is averaged over.
pub fn grid_queries(test: &[Triple], averaging: Averaging) -> Vec<(EntityId, RelationId)> {
    let all = test.iter().map(|t| (t.head, t.relation));
    match averaging {
        Averaging::PerTriple => all.collect(),
        Averaging::PerQuery => {
            let mut seen = BTreeSet::new();
            all.filter(|q| seen.insert(*q)).collect()
        }
    }
}

/// Distributions of one aggregation predictor (per `N_max`) over the grid
/// queries, in query order.
pub type ColumnDists = BTreeMap<usize, Vec<EntityDistribution>>;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RawKl {
    pub l_max: usize,
    pub column: String,
    pub head: EntityId,
    pub relation: RelationId,
    pub kl: f64,
}

/// Mean KL of every reference distribution against each LM checkpoint.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct KlGrid {
    pub l_max: Vec<usize>,
    pub n_max_weighted: Vec<usize>,
    pub n_max_unweighted: Vec<usize>,
    /// `[row][col]` mean `KL[P_w, P_LM]`.
    pub weighted: Vec<Vec<f64>>,
    /// `[row][col]` mean `KL[P_s, P_LM]`.
    pub unweighted: Vec<Vec<f64>>,
    pub reference: Vec<f64>,
    pub uniform: Vec<f64>,
    pub raw: Vec<RawKl>,
}

fn mean_kl(
    refs: &[EntityDistribution],
    lm: &[EntityDistribution],
    queries: &[(EntityId, RelationId)],
    l_max: usize,
    column: String,
    raw: &mut Vec<RawKl>,
) -> Result<f64> {
    if refs.len() != lm.len() || lm.len() != queries.len() {
        return Err(Error::Data(format!(
            "column {column}: {} reference and {} LM distributions for {} queries",
            refs.len(),
            lm.len(),
            queries.len()
        )));
    }
    let mut sum = 0.0;
    for ((p, q), &(h, r)) in refs.iter().zip(lm).zip(queries) {
        let v = kl_dist(p, q)?;
        sum += v;
        raw.push(RawKl {
            l_max,
            column: column.clone(),
            head: h,
            relation: r,
            kl: v,
        });
    }
    Ok(if queries.is_empty() {
        0.0
    } else {
        sum / queries.len() as f64
    })
}

/// Builds the grid for the requested `L_max` rows.
///
/// `lm` maps `L_max` to the LM distributions over `queries`; every requested
/// row must be present. `reference` holds `P*` per query.
pub fn kl_grid(
    rows: &[usize],
    queries: &[(EntityId, RelationId)],
    lm: &BTreeMap<usize, Vec<EntityDistribution>>,
    weighted: &ColumnDists,
    unweighted: &ColumnDists,
    reference: &[EntityDistribution],
    entities: usize,
) -> Result<KlGrid> {
    let uniform = vec![uniform_dist(entities); queries.len()];
    let mut raw = Vec::new();
    let mut grid = KlGrid {
        l_max: rows.to_vec(),
        n_max_weighted: weighted.keys().copied().collect(),
        n_max_unweighted: unweighted.keys().copied().collect(),
        weighted: Vec::new(),
        unweighted: Vec::new(),
        reference: Vec::new(),
        uniform: Vec::new(),
        raw: Vec::new(),
    };
    for &l in rows {
        let q = lm
            .get(&l)
            .ok_or_else(|| Error::Missing(format!("LM checkpoint for L_max={l}")))?;
        let mut wrow = Vec::new();
        for (n, d) in weighted {
            wrow.push(mean_kl(
                d,
                q,
                queries,
                l,
                format!("P_w(N_max={n})"),
                &mut raw,
            )?);
        }
        let mut srow = Vec::new();
        for (n, d) in unweighted {
            srow.push(mean_kl(
                d,
                q,
                queries,
                l,
                format!("P_s(N_max={n})"),
                &mut raw,
            )?);
        }
        grid.weighted.push(wrow);
        grid.unweighted.push(srow);
        grid.reference
            .push(mean_kl(reference, q, queries, l, "P*".into(), &mut raw)?);
        grid.uniform
            .push(mean_kl(&uniform, q, queries, l, "P_u".into(), &mut raw)?);
    }
    grid.raw = raw;
    Ok(grid)
}

fn with_header(header: Option<&str>) -> String {
    let mut s = String::new();
    if let Some(h) = header {
        s.push_str(h);
        s.push('\n');
    }
    s
}

fn write_text(path: &Path, body: &str) -> Result<()> {
    std::fs::write(path, body).map_err(|e| Error::io(path, e))
}

/// Float formatting shared by every CSV writer (shortest round-trip form).
fn num(x: f64) -> String {
    format!("{x}")
}

impl KlGrid {
    pub fn to_csv(&self, header: Option<&str>) -> String {
        let mut s = with_header(header);
        s.push_str("L_max");
        for n in &self.n_max_weighted {
            let _ = write!(s, ",P_w(N_max={n})");
        }
        for n in &self.n_max_unweighted {
            let _ = write!(s, ",P_s(N_max={n})");
        }
        s.push_str(",P*,P_u\n");
        for (i, l) in self.l_max.iter().enumerate() {
            let _ = write!(s, "{l}");
            for v in self.weighted[i].iter().chain(&self.unweighted[i]) {
                let _ = write!(s, ",{}", num(*v));
            }
            let _ = writeln!(s, ",{},{}", num(self.reference[i]), num(self.uniform[i]));
        }
        s
    }

    pub fn raw_csv(&self, graph: &KnowledgeGraph, header: Option<&str>) -> String {
        let mut s = with_header(header);
        s.push_str("L_max,column,head,relation,kl\n");
        for r in &self.raw {
            let _ = writeln!(
                s,
                "{},{},{},{},{}",
                r.l_max,
                r.column,
                graph.entity_name(r.head),
                graph.relation_name(r.relation),
                num(r.kl)
            );
        }
        s
    }

    pub fn write_csv(&self, path: &Path, header: Option<&str>) -> Result<()> {
        write_text(path, &self.to_csv(header))
    }

    /// Cell of the weighted block for `(L_max, N_max)`.
    pub fn weighted_at(&self, l_max: usize, n_max: usize) -> Option<f64> {
        let i = self.l_max.iter().position(|&l| l == l_max)?;
        let j = self.n_max_weighted.iter().position(|&n| n == n_max)?;
        Some(self.weighted[i][j])
    }

    pub fn unweighted_at(&self, l_max: usize, n_max: usize) -> Option<f64> {
        let i = self.l_max.iter().position(|&l| l == l_max)?;
        let j = self.n_max_unweighted.iter().position(|&n| n == n_max)?;
        Some(self.unweighted[i][j])
    }
}

/// One accuracy curve: `(length, accuracy)` points for one predictor, where
/// length is `L_max` for LMs and `N_max` for rule aggregators.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LengthAccuracyCurve {
    pub dataset: String,
    pub predictor: String,
    pub points: Vec<(usize, f64)>,
}

pub fn accuracy_curves_csv(curves: &[LengthAccuracyCurve], header: Option<&str>) -> String {
    let mut s = with_header(header);
    s.push_str("dataset,predictor,length,accuracy\n");
    for c in curves {
        for (l, a) in &c.points {
            let _ = writeln!(s, "{},{},{},{}", c.dataset, c.predictor, l, num(*a));
        }
    }
    s
}

pub fn write_accuracy_curves(
    curves: &[LengthAccuracyCurve],
    path: &Path,
    header: Option<&str>,
) -> Result<()> {
    write_text(path, &accuracy_curves_csv(curves, header))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RelationRuleStats {
    pub relation: RelationId,
    /// Length of the rule with the most support.
    pub support_len: usize,
    /// Length of the rule with the largest weight, when weights are known.
    pub weight_len: Option<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RuleLengthReport {
    pub relations: Vec<RelationRuleStats>,
    pub mean_support_len: f64,
    pub mean_weight_len: Option<f64>,
    pub excluded: Vec<RelationId>,
}

/// Per relation: length of the best-supported and of the heaviest rule, and
/// their means. Ties go to the earlier rule (shorter, then lexicographic).
/// Relations with an empty rule set are excluded.
pub fn rule_length_stats(sets: &[RuleSet], weights: &[RuleWeights]) -> RuleLengthReport {
    let mut relations = Vec::new();
    let mut excluded = Vec::new();
    for set in sets {
        if set.is_empty() {
            warn!(
                "relation {} has no rules; excluded from length statistics",
                set.relation
            );
            excluded.push(set.relation);
            continue;
        }
        let mut best = &set.rules[0];
        for s in &set.rules[1..] {
            if s.support > best.support {
                best = s;
            }
        }
        let weight_len = weights
            .iter()
            .find(|w| w.relation == set.relation && !w.rules.is_empty())
            .map(|w| {
                let mut top = &w.rules[0];
                for r in &w.rules[1..] {
                    if r.weight > top.weight {
                        top = r;
                    }
                }
                top.rule.len()
            });
        relations.push(RelationRuleStats {
            relation: set.relation,
            support_len: best.rule.len(),
            weight_len,
        });
    }
    let n = relations.len().max(1) as f64;
    let mean_support_len = relations.iter().map(|r| r.support_len as f64).sum::<f64>() / n;
    let with_w: Vec<usize> = relations.iter().filter_map(|r| r.weight_len).collect();
    let mean_weight_len =
        (!with_w.is_empty()).then(|| with_w.iter().sum::<usize>() as f64 / with_w.len() as f64);
    RuleLengthReport {
        relations,
        mean_support_len,
        mean_weight_len,
        excluded,
    }
}

impl RuleLengthReport {
    pub fn to_csv(&self, graph: &KnowledgeGraph, header: Option<&str>) -> String {
        let mut s = with_header(header);
        s.push_str("relation,argmax_support_len,argmax_weight_len\n");
        for r in &self.relations {
            let w = r.weight_len.map_or(String::new(), |l| l.to_string());
            let _ = writeln!(
                s,
                "{},{},{}",
                graph.relation_name(r.relation),
                r.support_len,
                w
            );
        }
        let w = self.mean_weight_len.map_or(String::new(), num);
        let _ = writeln!(s, "mean,{},{}", num(self.mean_support_len), w);
        s
    }
}

/// Entity marginal `Σ_h P(e | h) P(h)` of a row-stochastic table.
pub fn marginalize(table: &[Vec<f64>], rule_dist: &[f64]) -> Vec<f64> {
    let n = table.first().map_or(0, |r| r.len());
    let mut out = vec![0.0; n];
    for (row, &w) in table.iter().zip(rule_dist) {
        for (o, &p) in out.iter_mut().zip(row) {
            *o += w * p;
        }
    }
    out
}

fn random_simplex<R: Rng + ?Sized>(n: usize, rng: &mut R) -> Vec<f64> {
    let v: Vec<f64> = (0..n).map(|_| Exp1.sample(rng)).collect::<Vec<f64>>();
    let s: f64 = v.iter().sum();
    v.into_iter().map(|x| x / s).collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Prop1Trial {
    pub kl_entity: f64,
    pub kl_rule: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Prop1Report {
    pub entities: usize,
    pub rules: usize,
    pub trials: Vec<Prop1Trial>,
    pub violations: usize,
    /// Smallest `KL(rule) - KL(entity)` observed.
    pub min_slack: f64,
    pub max_slack: f64,
}

impl Prop1Report {
    pub fn passed(&self) -> bool {
        self.violations == 0
    }
}

/// Samples random rule decompositions and checks that marginalising two rule
/// distributions through the same `P(e | h)` never increases their KL.
pub fn prop1_check<R: Rng + ?Sized>(
    entities: usize,
    rules: usize,
    trials: usize,
    rng: &mut R,
) -> Result<Prop1Report> {
    if entities < 2 || rules < 2 {
        return Err(Error::Config(
            "entity and rule counts must be at least 2".into(),
        ));
    }
    let mut out = Vec::with_capacity(trials);
    let mut violations = 0;
    let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
    for _ in 0..trials {
        let table: Vec<Vec<f64>> = (0..rules).map(|_| random_simplex(entities, rng)).collect();
        let pw = random_simplex(rules, rng);
        let plm = random_simplex(rules, rng);
        let kl_entity = kl(&marginalize(&table, &pw), &marginalize(&table, &plm))?;
        let kl_rule = kl(&pw, &plm)?;
        let slack = kl_rule - kl_entity;
        if kl_entity > kl_rule + 1e-12 {
            violations += 1;
        }
        lo = lo.min(slack);
        hi = hi.max(slack);
        out.push(Prop1Trial { kl_entity, kl_rule });
    }
    Ok(Prop1Report {
        entities,
        rules,
        trials: out,
        violations,
        min_slack: if trials == 0 { 0.0 } else { lo },
        max_slack: if trials == 0 { 0.0 } else { hi },
    })
}

pub fn prop1_csv(reports: &[Prop1Report], header: Option<&str>) -> String {
    let mut s = with_header(header);
    s.push_str("entities,rules,trials,violations,min_slack,max_slack\n");
    for r in reports {
        let _ = writeln!(
            s,
            "{},{},{},{},{},{}",
            r.entities,
            r.rules,
            r.trials.len(),
            r.violations,
            num(r.min_slack),
            num(r.max_slack)
        );
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn kl_examples() {
        let p = [0.1, 0.2, 0.7];
        assert_eq!(kl(&p, &p).unwrap(), 0.0);
        let point = [0.0, 1.0, 0.0, 0.0, 0.0];
        let u = [0.2; 5];
        assert!((kl(&point, &u).unwrap() - 5f64.ln()).abs() < 1e-15);
        let q = [0.7, 0.1, 0.1, 0.1];
        let direct = 0.25 * (0.25f64 / 0.7).ln() + 3.0 * 0.25 * (0.25f64 / 0.1).ln();
        assert!((kl(&[0.25; 4], &q).unwrap() - direct).abs() < 1e-15);
    }

    #[test]
    fn kl_rejects_unsupported_mass() {
        let err = kl(&[0.5, 0.5], &[1.0, 0.0]).unwrap_err();
        assert!(matches!(err, Error::InfiniteDivergence { index: 1, .. }));
        assert!(kl(&[0.0, 1.0], &[0.0, 1.0]).is_ok());
    }

    #[test]
    fn uniform_examples() {
        assert_eq!(uniform_dist(1).probs, vec![1.0]);
        let u = uniform_dist(227);
        assert!(u.probs.iter().all(|&p| p == 1.0 / 227.0));
        assert!((u.total() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn prop1_degenerate_cases() {
        // identical rule distributions
        let table = vec![vec![0.5, 0.5], vec![0.1, 0.9]];
        let p = [0.3, 0.7];
        assert_eq!(
            kl(&marginalize(&table, &p), &marginalize(&table, &p)).unwrap(),
            0.0
        );
        // an injective deterministic map preserves KL exactly
        let table = vec![
            vec![0.0, 1.0, 0.0],
            vec![0.0, 0.0, 1.0],
            vec![1.0, 0.0, 0.0],
        ];
        let (a, b) = ([0.2, 0.3, 0.5], [0.6, 0.1, 0.3]);
        let ke = kl(&marginalize(&table, &a), &marginalize(&table, &b)).unwrap();
        let kr = kl(&a, &b).unwrap();
        assert!((ke - kr).abs() < 1e-15);
    }
}
