use std::collections::HashMap;

use pathagg::cot::*;
use pathagg::Error;

fn ex(id: &str, question: &str, steps: &[&str]) -> CotExample {
    CotExample {
        id: id.into(),
        question: question.into(),
        steps: steps.iter().map(|s| s.to_string()).collect(),
        answer: "0".into(),
    }
}

#[test]
fn hash_state_of_two_token_prefix() {
    // FNV-1a("a") = 0xaf63dc4c8601ec8c and FNV-1a("b") = 0xaf63df4c8601f1a5,
    // so with d = 4 they land in buckets 0 and 1.
    assert_eq!(fnv1a(b"a"), 0xaf63_dc4c_8601_ec8c);
    assert_eq!(fnv1a(b"b"), 0xaf63_df4c_8601_f1a5);
    let data = vec![ex("q", "a", &["b"])];
    let s = embed_states(&data, &EmbeddingProvider::TokenHash { dim: 4 }).unwrap();
    assert_eq!(s.len(), 1);
    assert_eq!(s[0].vector, vec![0.5, 0.5, 0.0, 0.0]);
}

#[test]
fn hash_states_are_cumulative_and_deterministic() {
    let data = vec![
        ex(
            "1",
            "how many apples",
            &["three apples", "minus one", "two"],
        ),
        ex("2", "how many apples", &["three apples", "plus one"]),
    ];
    let p = EmbeddingProvider::TokenHash { dim: 16 };
    let s = embed_states(&data, &p).unwrap();
    assert_eq!(s.len(), 5);
    // identical prefixes, identical vectors
    assert_eq!(s[0].vector, s[3].vector);
    assert_ne!(s[1].vector, s[4].vector);
    assert_eq!(s, embed_states(&data, &p).unwrap());
    for v in &s {
        assert!((v.vector.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }
}

#[test]
fn external_vectors_report_missing_keys() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("v.csv");
    std::fs::write(&path, "id,step_index,v0,v1\nx,0,1.0,2.0\n").unwrap();
    let map = load_external_vectors(&path).unwrap();
    let data = vec![ex("x", "q", &["s0", "s1"]), ex("y", "q", &["s0"])];
    let err = embed_states(&data, &EmbeddingProvider::External(map)).unwrap_err();
    let msg = err.to_string();
    assert!(matches!(err, Error::Missing(_)));
    assert!(msg.contains("(x, 1)") && msg.contains("(y, 0)"), "{msg}");
}

fn blobs() -> (Vec<Vec<f64>>, Vec<usize>) {
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(9);
    let mut pts = Vec::new();
    let mut label = Vec::new();
    for i in 0..200 {
        let c = if i % 2 == 0 { 0.0 } else { 50.0 };
        pts.push(vec![
            c + rng.gen_range(-1.0..1.0),
            c + rng.gen_range(-1.0..1.0),
        ]);
        label.push(i % 2);
    }
    (pts, label)
}

#[test]
fn two_blobs_are_recovered() {
    let (pts, label) = blobs();
    let km = kmeans(&pts, 2, 3, 100).unwrap();
    assert!(km.converged);
    let flip = km.assignment[0] != label[0];
    for (a, l) in km.assignment.iter().zip(&label) {
        assert_eq!(*a, if flip { 1 - l } else { *l });
    }
}

#[test]
fn kmeans_objective_never_increases() {
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(1);
    let pts: Vec<Vec<f64>> = (0..300)
        .map(|_| (0..5).map(|_| rng.gen_range(0.0..1.0)).collect())
        .collect();
    for seed in 0..5 {
        let km = kmeans(&pts, 12, seed, 200).unwrap();
        for w in km.objective.windows(2) {
            assert!(w[1] <= w[0] + 1e-9, "{:?}", km.objective);
        }
        assert_eq!(km, kmeans(&pts, 12, seed, 200).unwrap());
    }
}

#[test]
fn duplicate_points_still_fill_every_cluster() {
    let pts = vec![vec![0.0], vec![0.0], vec![0.0], vec![1.0]];
    let km = kmeans(&pts, 3, 0, 20).unwrap();
    let mut sizes = [0; 3];
    for &a in &km.assignment {
        sizes[a] += 1;
    }
    assert!(sizes.iter().all(|&s| s > 0), "{sizes:?}");
}

/// Two examples whose only shared state is example 1 step index 1 and
/// example 2 step index 0.
type Vectors = HashMap<(String, usize), Vec<f64>>;

fn crossing_fixture() -> (Vec<CotExample>, LatentGraph, Vectors) {
    let data = vec![
        ex("e1", "q1", &["a0", "a1", "a2"]),
        ex("e2", "q2", &["b0", "b1", "b2"]),
    ];
    let mut v = HashMap::new();
    v.insert(("e1".to_string(), 0), vec![0.0, 0.0]);
    v.insert(("e1".to_string(), 1), vec![10.0, 10.0]);
    v.insert(("e1".to_string(), 2), vec![20.0, 0.0]);
    v.insert(("e2".to_string(), 0), vec![10.0, 10.0]);
    v.insert(("e2".to_string(), 1), vec![0.0, 20.0]);
    v.insert(("e2".to_string(), 2), vec![30.0, 30.0]);
    let states = embed_states(&data, &EmbeddingProvider::External(v.clone())).unwrap();
    let g = build_graph(&data, &states, 5, 0, 50).unwrap();
    (data, g, v)
}

#[test]
fn walks_cross_examples_only_at_the_shared_node() {
    let (data, g, v) = crossing_fixture();
    let shared = g.node_of(StepRef {
        example: 0,
        step: 1,
    });
    assert_eq!(
        shared,
        g.node_of(StepRef {
            example: 1,
            step: 0
        })
    );
    assert_eq!(g.members.iter().filter(|m| !m.is_empty()).count(), 5);

    let cfg = WalkConfig {
        l_max: 6,
        segment_cap: Some(1),
        count: 400,
        seed: 5,
        ..WalkConfig::default()
    };
    let paths = random_walk_paths(&data, &g, &cfg).unwrap();
    let mut crossings = 0;
    for p in &paths {
        check_path(p, &data, &g, &cfg).unwrap();
        for w in p.segments.windows(2) {
            let (a, b) = (w[0], w[1]);
            if a.example != b.example {
                // the junction must join identical embeddings
                let end = &v[&(data[a.example].id.clone(), a.end)];
                let start = &v[&(data[b.example].id.clone(), b.start)];
                assert_eq!(end, start);
                if a.example == 0 && a.end == 1 && b.example == 1 && b.start == 0 {
                    crossings += 1;
                }
            }
        }
    }
    assert!(crossings > 0);
}

#[test]
fn walk_text_and_question_prefix() {
    let (data, g, _) = crossing_fixture();
    let cfg = WalkConfig {
        l_max: 3,
        count: 20,
        include_question: true,
        ..WalkConfig::default()
    };
    for p in random_walk_paths(&data, &g, &cfg).unwrap() {
        let lines: Vec<&str> = p.text.lines().collect();
        assert_eq!(lines.len(), p.len() + 1);
        assert_eq!(lines[0], data[p.segments[0].example].question);
    }
}

#[test]
fn training_plan_files() {
    let (data, g, _) = crossing_fixture();
    let cfg = WalkConfig {
        l_max: 4,
        count: 37,
        ..WalkConfig::default()
    };
    let paths = random_walk_paths(&data, &g, &cfg).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let plan = emit_training_plan(&paths, &data, 500, 2500, 0, dir.path()).unwrap();
    let phases: Vec<(String, usize)> = plan
        .phases
        .iter()
        .map(|p| (p.name.clone(), p.steps))
        .collect();
    assert_eq!(
        phases,
        vec![("random_walk".into(), 500), ("sft".into(), 2000)]
    );
    let count = |f: &str| {
        std::fs::read_to_string(dir.path().join(f))
            .unwrap()
            .lines()
            .count()
    };
    assert_eq!(count("random_walk.jsonl"), 37);
    assert_eq!(count("sft.jsonl"), 2);
    let manifest: TrainingPlan =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("plan.json")).unwrap())
            .unwrap();
    assert_eq!(manifest, plan);

    let dir = tempfile::tempdir().unwrap();
    let plan = emit_training_plan(&paths, &data, 0, 2500, 0, dir.path()).unwrap();
    assert_eq!(plan.phases.len(), 1);
    assert_eq!(plan.phases[0].name, "sft");
    assert!(!dir.path().join("random_walk.jsonl").exists());
}

#[test]
fn ingest_and_mean_length() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("c.jsonl");
    std::fs::write(
        &path,
        concat!(
            r#"{"id":"1","question":"q","steps":["a","b","c"],"answer":"x"}"#,
            "\n\n",
            r#"{"id":"2","question":"q","steps":["a"],"answer":"y"}"#,
            "\n"
        ),
    )
    .unwrap();
    let data = ingest_cot(&path).unwrap();
    assert_eq!(data.len(), 2);
    assert_eq!(data[0].steps.len(), 3);
    assert_eq!(mean_steps(&data), 2.0);

    std::fs::write(&path, r#"{"id":"bad","question":"q","answer":"y"}"#).unwrap();
    let err = ingest_cot(&path).unwrap_err().to_string();
    assert!(err.contains("`bad`"), "{err}");
}

#[test]
fn all_empty_graph_is_an_error() {
    let data = vec![ex("a", "q", &["s"])];
    let g = LatentGraph {
        k: 1,
        centroids: vec![vec![0.0]],
        node: vec![vec![0]],
        members: vec![vec![]],
        objective: vec![],
        converged: true,
    };
    assert!(random_walk_paths(&data, &g, &WalkConfig::default()).is_err());
}
