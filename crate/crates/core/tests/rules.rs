use std::collections::BTreeMap;
use std::path::Path;

use pathagg::kg::{load_graph, GraphBuilder, KnowledgeGraph};
use pathagg::rules::*;
use pathagg::{EntityId, RelationId};
use proptest::prelude::*;

/// Every labelled walk, expanded one edge at a time from the raw triple list.
fn brute_force(g: &KnowledgeGraph, e0: EntityId, rule: &[RelationId]) -> BTreeMap<EntityId, f64> {
    fn go(
        g: &KnowledgeGraph,
        at: EntityId,
        rule: &[RelationId],
        p: f64,
        out: &mut BTreeMap<EntityId, f64>,
    ) {
        let Some((&r, rest)) = rule.split_first() else {
            *out.entry(at).or_insert(0.0) += p;
            return;
        };
        let deg = g.triples().iter().filter(|t| t.head == at).count();
        for t in g
            .triples()
            .iter()
            .filter(|t| t.head == at && t.relation == r)
        {
            go(g, t.tail, rest, p / deg as f64, out);
        }
    }
    let mut out = BTreeMap::new();
    go(g, e0, rule, 1.0, &mut out);
    out
}

fn random_graph(entities: usize, relations: usize, density: f64, seed: u64) -> KnowledgeGraph {
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let mut b = GraphBuilder::new();
    for e in 0..entities {
        b.entity(&format!("e{e}"));
    }
    for r in 0..relations {
        b.relation(&format!("r{r}"));
    }
    for h in 0..entities {
        for r in 0..relations {
            for t in 0..entities {
                if rng.gen::<f64>() < density / relations as f64 {
                    b.add(&format!("e{h}"), &format!("r{r}"), &format!("e{t}"));
                }
            }
        }
    }
    b.build()
}

fn all_rules(relations: usize, max_len: usize) -> Vec<Rule> {
    let mut out: Vec<Vec<RelationId>> = vec![vec![]];
    let mut rules = Vec::new();
    for _ in 0..max_len {
        out = out
            .iter()
            .flat_map(|p| {
                (0..relations).map(move |r| {
                    let mut q = p.clone();
                    q.push(RelationId(r as u32));
                    q
                })
            })
            .collect();
        rules.extend(out.iter().cloned().map(Rule));
    }
    rules
}

#[test]
fn dynamic_program_matches_enumeration() {
    for seed in 0..40 {
        let g = random_graph(
            2 + seed as usize % 7,
            1 + seed as usize % 3,
            0.2 + 0.01 * seed as f64,
            seed,
        );
        let rules = all_rules(g.relation_count(), 3);
        let trie = RuleTrie::new(&rules);
        for e in 0..g.entity_count() {
            let e0 = EntityId(e as u32);
            let mut via_trie = vec![Vec::new(); rules.len()];
            trie.walk(&g, e0, None, |i, d| via_trie[i] = d.to_vec());
            for (i, rule) in rules.iter().enumerate() {
                let want = brute_force(&g, e0, &rule.0);
                let got = rule_prob(&g, e0, rule);
                assert_eq!(got.len(), want.len());
                for ((e, p), (we, wp)) in got.iter().zip(&want) {
                    assert_eq!(e, we);
                    assert!((p - wp).abs() <= 1e-12);
                }
                assert_eq!(got, via_trie[i]);
            }
        }
    }
}

#[test]
fn masked_probability_matches_enumeration_on_reduced_graph() {
    let g = random_graph(6, 2, 0.5, 99);
    let rules = all_rules(2, 3);
    for t in g.triples().iter().take(10) {
        let mut b = GraphBuilder::new();
        for e in g.entities().names() {
            b.entity(e);
        }
        for r in g.relations().names() {
            b.relation(r);
        }
        for u in g.triples().iter().filter(|u| *u != t) {
            b.add(
                g.entity_name(u.head),
                g.relation_name(u.relation),
                g.entity_name(u.tail),
            );
        }
        let reduced = b.build();
        for rule in &rules {
            let got = rule_prob_masked(&g, t.head, rule, Some(t));
            let want: Vec<_> = brute_force(&reduced, t.head, &rule.0).into_iter().collect();
            assert_eq!(got.len(), want.len());
            for (a, b) in got.iter().zip(&want) {
                assert_eq!(a.0, b.0);
                assert!((a.1 - b.1).abs() < 1e-12);
            }
        }
    }
}

fn check_gradient(penalty: Penalty, lambda: f64) {
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(5);
    let data = TrainingData {
        triples: vec![],
        features: (0..30)
            .map(|_| {
                (0..6)
                    .map(|_| rng.gen::<f64>() * if rng.gen::<bool>() { 1.0 } else { 0.0 })
                    .collect()
            })
            .collect(),
        labels: (0..30).map(|i| (i % 3 == 0) as u8 as f64).collect(),
    };
    let mut points = 0;
    for _ in 0..25 {
        // keep coordinates away from the L1 kink at zero
        let w: Vec<f64> = (0..6)
            .map(|_| {
                let v = rng.gen_range(0.2..3.0);
                if rng.gen::<bool>() {
                    v
                } else {
                    -v
                }
            })
            .collect();
        let (_, g) = logistic_loss_grad(&w, &data, lambda, penalty);
        for j in 0..6 {
            let h = 1e-6;
            let mut a = w.clone();
            a[j] += h;
            let mut b = w.clone();
            b[j] -= h;
            let fd = (logistic_loss_grad(&a, &data, lambda, penalty).0
                - logistic_loss_grad(&b, &data, lambda, penalty).0)
                / (2.0 * h);
            let rel = (fd - g[j]).abs() / fd.abs().max(g[j].abs()).max(1e-8);
            assert!(rel <= 1e-6, "{penalty:?} coord {j}: {fd} vs {}", g[j]);
        }
        points += 1;
    }
    assert!(points >= 20);
}

#[test]
fn logistic_gradient_matches_differences() {
    check_gradient(Penalty::L1, 0.01);
    check_gradient(Penalty::L2, 0.3);
}

#[test]
fn l1_subgradient_is_zero_at_zero() {
    let data = TrainingData {
        triples: vec![],
        features: vec![vec![0.0]],
        labels: vec![1.0],
    };
    let (_, g) = logistic_loss_grad(&[0.0], &data, 5.0, Penalty::L1);
    assert_eq!(g, vec![0.0]);
}

fn diamond() -> KnowledgeGraph {
    let mut b = GraphBuilder::new();
    b.add("A", "r1", "B1");
    b.add("A", "r1", "B2");
    b.add("B1", "r2", "C");
    b.add("B2", "r2", "C");
    b.build()
}

#[test]
fn unweighted_distributions() {
    let g = diamond();
    let (r1, r2) = (g.relation_id("r1").unwrap(), g.relation_id("r2").unwrap());
    let a = g.entity_id("A").unwrap();
    let c = g.entity_id("C").unwrap();
    let empty = RuleSet {
        relation: r1,
        n_max: 2,
        min_support: 0,
        rules: vec![],
        truncated_pairs: 0,
    };
    let u = unweighted_dist(&g, &empty, a, 0.01).unwrap();
    assert!(u.probs.iter().all(|&p| (p - 0.25).abs() < 1e-15));

    let set = RuleSet {
        rules: vec![RuleStat {
            rule: Rule::new([r1, r2]),
            support: 2,
        }],
        ..empty
    };
    let cold = unweighted_dist(&g, &set, a, 0.01).unwrap();
    let warm = unweighted_dist(&g, &set, a, 1.0).unwrap();
    assert!(cold.prob(c) > 0.999);
    let e = std::f64::consts::E;
    assert!((warm.prob(c) - e / (e + 3.0)).abs() < 1e-12);
    let w1 = weighted_dist(&g, &RuleWeights::constant(&set, 1.0), a, 0.01).unwrap();
    assert_eq!(w1.probs, cold.probs);
    assert!(weighted_dist(&g, &RuleWeights::constant(&set, 1.0), a, 0.0).is_err());
}

#[test]
fn countries_mining_finds_length_three_rules() {
    let root = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../data/countries_s3");
    let (g, _) = load_graph(&root.join("train.txt")).unwrap();
    let located = g.relation_id("locatedIn").unwrap();
    let set = mine_rules(&g, located, 3, 1, &MiningOptions::default()).unwrap();
    assert!(set.rules.iter().any(|s| s.rule.len() == 3));
    assert!(set.rules.iter().all(|s| s.rule.len() <= 3 && s.support > 1));
    assert!(!set.rules.iter().any(|s| s.rule.0 == [located]));
    let w = learn_weights(&g, &set, &LearnConfig::default()).unwrap();
    let fit = w.fit.unwrap();
    assert!(fit.loss < fit.initial_loss);
    assert!(w.rules.iter().all(|r| r.weight.is_finite()));
}

#[test]
fn rule_files_round_trip() {
    let g = diamond();
    let set = mine_rules(
        &g,
        g.relation_id("r1").unwrap(),
        2,
        0,
        &MiningOptions::default(),
    )
    .unwrap();
    let book = RuleBook {
        n_max: 2,
        min_support: 0,
        sets: vec![set],
    };
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("rules.json");
    save_json(&book, &p).unwrap();
    let back: RuleBook = load_json(&p).unwrap();
    assert_eq!(back, book);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn mass_never_exceeds_one(seed in 0u64..10_000, n in 2usize..9, k in 1usize..4) {
        let g = random_graph(n, k, 0.4, seed);
        for rule in all_rules(k, 3) {
            for e in 0..n {
                let total: f64 = rule_prob(&g, EntityId(e as u32), &rule).iter().map(|x| x.1).sum();
                prop_assert!(total <= 1.0 + 1e-12);
            }
        }
    }

    #[test]
    fn raising_support_never_adds_rules(seed in 0u64..10_000, m in 0u64..4) {
        let g = random_graph(8, 3, 0.5, seed);
        let r = RelationId(0);
        let lo = mine_rules(&g, r, 3, m, &MiningOptions::default()).unwrap();
        let hi = mine_rules(&g, r, 3, m + 1, &MiningOptions::default()).unwrap();
        for s in &hi.rules {
            prop_assert!(lo.rules.iter().any(|x| x.rule == s.rule));
        }
        prop_assert_eq!(lo.restrict(3, m + 1), RuleSet { min_support: m + 1, ..hi });
    }

    #[test]
    fn argmax_is_temperature_invariant(seed in 0u64..10_000, t in 0.001f64..10.0) {
        let g = random_graph(8, 2, 0.5, seed);
        let set = mine_rules(&g, RelationId(0), 2, 0, &MiningOptions::default()).unwrap();
        let w = RuleWeights {
            rules: set.rules.iter().enumerate().map(|(i, s)| WeightedRule {
                rule: s.rule.clone(), support: s.support, weight: 1.0 - 0.3 * i as f64,
            }).collect(),
            ..RuleWeights::constant(&set, 0.0)
        };
        for e in 0..8 {
            let a = weighted_dist(&g, &w, EntityId(e), 0.01).unwrap();
            let b = weighted_dist(&g, &w, EntityId(e), t).unwrap();
            prop_assert!((a.total() - 1.0).abs() < 1e-9);
            // near-ties (within rounding of S / T) may break either way
            let s = Aggregator::weighted(&w, t).scores(&g, EntityId(e));
            let best = s[a.argmax().index()];
            prop_assert!((s[b.argmax().index()] - best).abs() <= 1e-12 * best.abs().max(1.0));
        }
    }
}
