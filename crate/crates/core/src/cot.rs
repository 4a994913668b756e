//! Latent reasoning graphs over chain-of-thought data.
//!
//! Every CoT step gets a state vector (an embedding of the question plus all
//! steps up to and including it); k-means over the states gives the graph's
//! nodes. Random walks then stitch contiguous step segments from different
//! examples together wherever they pass through the same node.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use rand::distributions::{Distribution, WeightedIndex};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{Error, Result};
use crate::walk::walk_rng;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CotExample {
    pub id: String,
    pub question: String,
    pub steps: Vec<String>,
    pub answer: String,
}

fn scalar_text(v: &Value) -> Option<String> {
    match v {
        Value::String(s) => Some(s.clone()),
        Value::Number(n) => Some(n.to_string()),
        Value::Bool(b) => Some(b.to_string()),
        _ => None,
    }
}

/// Parses one JSONL record; `line` is 1-based and only used for messages.
pub fn parse_cot_record(text: &str, path: &Path, line: usize) -> Result<CotExample> {
    let err = |message: String| Error::Parse {
        path: path.to_path_buf(),
        line,
        message,
    };
    let v: Value = serde_json::from_str(text).map_err(|e| err(format!("invalid JSON: {e}")))?;
    let obj = v
        .as_object()
        .ok_or_else(|| err("record is not an object".into()))?;
    let id = obj
        .get("id")
        .and_then(scalar_text)
        .ok_or_else(|| err("record has no `id`".into()))?;
    let field = |name: &str| -> Result<String> {
        obj.get(name)
            .and_then(scalar_text)
            .ok_or_else(|| err(format!("record `{id}`: missing or non-text `{name}`")))
    };
    let question = field("question")?;
    let answer = field("answer")?;
    let steps: Vec<String> = match obj.get("steps") {
        Some(Value::Array(items)) => items
            .iter()
            .map(|s| scalar_text(s).ok_or_else(|| err(format!("record `{id}`: non-text step"))))
            .collect::<Result<_>>()?,
        _ => return Err(err(format!("record `{id}`: missing `steps` list"))),
    };
    if question.trim().is_empty() {
        return Err(err(format!("record `{id}`: empty question")));
    }
    if steps.is_empty() {
        return Err(err(format!("record `{id}`: empty steps list")));
    }
    if steps.iter().any(|s| s.trim().is_empty()) {
        return Err(err(format!("record `{id}`: empty step")));
    }
    Ok(CotExample {
        id,
        question,
        steps,
        answer,
    })
}

/// Reads line-delimited records `{id, question, steps: [...], answer}`.
/// Blank lines are skipped; duplicate ids are rejected.
pub fn ingest_cot(path: &Path) -> Result<Vec<CotExample>> {
    let f = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    let mut seen = BTreeSet::new();
    for (i, line) in BufReader::new(f).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let ex = parse_cot_record(&line, path, i + 1)?;
        if !seen.insert(ex.id.clone()) {
            return Err(Error::Parse {
                path: path.to_path_buf(),
                line: i + 1,
                message: format!("duplicate id `{}`", ex.id),
            });
        }
        out.push(ex);
    }
    Ok(out)
}

pub fn write_cot_jsonl(examples: &[CotExample], path: &Path) -> Result<()> {
    let mut body = String::new();
    for ex in examples {
        body.push_str(&serde_json::to_string(ex)?);
        body.push('\n');
    }
    std::fs::write(path, body).map_err(|e| Error::io(path, e))
}

pub fn mean_steps(examples: &[CotExample]) -> f64 {
    if examples.is_empty() {
        return 0.0;
    }
    examples.iter().map(|e| e.steps.len()).sum::<usize>() as f64 / examples.len() as f64
}

/// A CoT step: example index into the dataset, 0-based step index.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct StepRef {
    pub example: usize,
    pub step: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StateVector {
    pub at: StepRef,
    pub vector: Vec<f64>,
}

/// 64-bit FNV-1a.
pub fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

/// Where state vectors come from.
#[derive(Clone, Debug, PartialEq)]
pub enum EmbeddingProvider {
    /// Whitespace tokens hashed into `dim` buckets; the state is the mean
    /// one-hot vector over every token of the prefix.
    TokenHash { dim: usize },
    /// Precomputed vectors keyed by `(example id, step index)`.
    External(HashMap<(String, usize), Vec<f64>>),
}

/// Reads `id,step_index,v_0,...,v_{d-1}` rows (an optional header row whose
/// first field is `id` is skipped).
pub fn load_external_vectors(path: &Path) -> Result<HashMap<(String, usize), Vec<f64>>> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .from_path(path)?;
    let mut out = HashMap::new();
    let mut dim = None;
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let line = i + 1;
        let bad = |message: String| Error::Parse {
            path: path.to_path_buf(),
            line,
            message,
        };
        if line == 1 && rec.get(0) == Some("id") {
            continue;
        }
        if rec.len() < 3 {
            return Err(bad("expected id, step_index and at least one value".into()));
        }
        let step: usize = rec[1]
            .trim()
            .parse()
            .map_err(|_| bad(format!("bad step index `{}`", &rec[1])))?;
        let v: Vec<f64> = rec
            .iter()
            .skip(2)
            .map(|x| {
                x.trim()
                    .parse::<f64>()
                    .map_err(|_| bad(format!("bad value `{x}`")))
            })
            .collect::<Result<_>>()?;
        if v.iter().any(|x| !x.is_finite()) {
            return Err(bad("non-finite value".into()));
        }
        match dim {
            None => dim = Some(v.len()),
            Some(d) if d != v.len() => {
                return Err(bad(format!("expected {d} values, found {}", v.len())))
            }
            _ => {}
        }
        out.insert((rec[0].to_string(), step), v);
    }
    Ok(out)
}

/// One state vector per CoT step, in dataset order.
pub fn embed_states(
    examples: &[CotExample],
    provider: &EmbeddingProvider,
) -> Result<Vec<StateVector>> {
    match provider {
        EmbeddingProvider::TokenHash { dim } => {
            if *dim == 0 {
                return Err(Error::Config("embedding dimension must be positive".into()));
            }
            Ok(examples
                .par_iter()
                .enumerate()
                .flat_map_iter(|(i, ex)| hash_states(i, ex, *dim))
                .collect())
        }
        EmbeddingProvider::External(map) => {
            let mut out = Vec::new();
            let mut missing = Vec::new();
            for (i, ex) in examples.iter().enumerate() {
                for j in 0..ex.steps.len() {
                    match map.get(&(ex.id.clone(), j)) {
                        Some(v) => out.push(StateVector {
                            at: StepRef {
                                example: i,
                                step: j,
                            },
                            vector: v.clone(),
                        }),
                        None => missing.push(format!("({}, {j})", ex.id)),
                    }
                }
            }
            if !missing.is_empty() {
                return Err(Error::Missing(format!(
                    "external vectors for {} steps: {}",
                    missing.len(),
                    missing.join(", ")
                )));
            }
            Ok(out)
        }
    }
}

fn hash_states(i: usize, ex: &CotExample, dim: usize) -> Vec<StateVector> {
    let add = |text: &str, counts: &mut [u64]| -> u64 {
        let mut n = 0;
        for tok in text.split_whitespace() {
            counts[(fnv1a(tok.as_bytes()) % dim as u64) as usize] += 1;
            n += 1;
        }
        n
    };
    let mut counts = vec![0u64; dim];
    let mut total = add(&ex.question, &mut counts);
    let mut out = Vec::with_capacity(ex.steps.len());
    for (j, step) in ex.steps.iter().enumerate() {
        total += add(step, &mut counts);
        let n = total.max(1) as f64;
        out.push(StateVector {
            at: StepRef {
                example: i,
                step: j,
            },
            vector: counts.iter().map(|&c| c as f64 / n).collect(),
        });
    }
    out
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Nearest centroid (ties to the lowest index) and its squared distance.
fn nearest(x: &[f64], centroids: &[Vec<f64>]) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (k, c) in centroids.iter().enumerate() {
        let d = sq_dist(x, c);
        if d < best.1 {
            best = (k, d);
        }
    }
    best
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct KMeans {
    pub centroids: Vec<Vec<f64>>,
    pub assignment: Vec<usize>,
    /// Sum of squared distances after every Lloyd iteration.
    pub objective: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
    /// Clusters re-seeded because they lost all members.
    pub repairs: usize,
}

/// k-means++ seeding followed by Lloyd iterations.
pub fn kmeans(points: &[Vec<f64>], k: usize, seed: u64, max_iters: usize) -> Result<KMeans> {
    if k == 0 {
        return Err(Error::Config("K must be at least 1".into()));
    }
    if k > points.len() {
        return Err(Error::Config(format!(
            "K = {k} exceeds the number of states ({})",
            points.len()
        )));
    }
    let dim = points[0].len();
    if points.iter().any(|p| p.len() != dim) {
        return Err(Error::Data(
            "state vectors have different dimensions".into(),
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut centroids = vec![points[rng.gen_range(0..points.len())].clone()];
    let mut d2: Vec<f64> = points.iter().map(|p| sq_dist(p, &centroids[0])).collect();
    while centroids.len() < k {
        let total: f64 = d2.iter().sum();
        let next = if total > 0.0 {
            WeightedIndex::new(&d2)
                .expect("non-negative weights")
                .sample(&mut rng)
        } else {
            // all remaining points coincide with a centroid
            rng.gen_range(0..points.len())
        };
        centroids.push(points[next].clone());
        for (d, p) in d2.iter_mut().zip(points) {
            *d = d.min(sq_dist(p, &centroids[centroids.len() - 1]));
        }
    }

    let mut assignment = vec![usize::MAX; points.len()];
    let mut objective = Vec::new();
    let mut repairs = 0;
    let mut converged = false;
    let mut iterations = 0;
    while iterations < max_iters {
        iterations += 1;
        let near: Vec<(usize, f64)> = points.par_iter().map(|p| nearest(p, &centroids)).collect();
        let changed = near.iter().zip(&assignment).any(|(n, &a)| n.0 != a);
        for (a, n) in assignment.iter_mut().zip(&near) {
            *a = n.0;
        }
        let mut dist: Vec<f64> = near.iter().map(|n| n.1).collect();
        // repair empty clusters with the point farthest from its centroid
        let mut sizes = vec![0usize; k];
        for &a in &assignment {
            sizes[a] += 1;
        }
        for c in 0..k {
            if sizes[c] > 0 {
                continue;
            }
            let far = (0..points.len())
                .filter(|&i| sizes[assignment[i]] > 1)
                .fold(None, |best: Option<usize>, i| match best {
                    Some(b) if dist[b] >= dist[i] => Some(b),
                    _ => Some(i),
                });
            if let Some(i) = far {
                sizes[assignment[i]] -= 1;
                assignment[i] = c;
                sizes[c] = 1;
                dist[i] = 0.0;
                centroids[c] = points[i].clone();
                repairs += 1;
            }
        }
        // centroid update
        let mut sums = vec![vec![0.0; dim]; k];
        for (p, &a) in points.iter().zip(&assignment) {
            for (s, x) in sums[a].iter_mut().zip(p) {
                *s += x;
            }
        }
        for c in 0..k {
            if sizes[c] > 0 {
                centroids[c] = sums[c].iter().map(|s| s / sizes[c] as f64).collect();
            }
        }
        let obj: f64 = points
            .iter()
            .zip(&assignment)
            .map(|(p, &a)| sq_dist(p, &centroids[a]))
            .sum();
        objective.push(obj);
        if !changed {
            converged = true;
            break;
        }
    }
    Ok(KMeans {
        centroids,
        assignment,
        objective,
        iterations,
        converged,
        repairs,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LatentGraph {
    pub k: usize,
    pub centroids: Vec<Vec<f64>>,
    /// `node[example][step]`.
    pub node: Vec<Vec<usize>>,
    pub members: Vec<Vec<StepRef>>,
    pub objective: Vec<f64>,
    pub converged: bool,
}

impl LatentGraph {
    pub fn node_of(&self, at: StepRef) -> usize {
        self.node[at.example][at.step]
    }

    pub fn non_empty_nodes(&self) -> Vec<usize> {
        (0..self.k)
            .filter(|&n| !self.members[n].is_empty())
            .collect()
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        serde_json::to_writer(std::io::BufWriter::new(f), self)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let f = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_reader(BufReader::new(f))?)
    }
}

/// Clusters the states of `examples` into `k` nodes.
pub fn build_graph(
    examples: &[CotExample],
    states: &[StateVector],
    k: usize,
    seed: u64,
    max_iters: usize,
) -> Result<LatentGraph> {
    let points: Vec<Vec<f64>> = states.iter().map(|s| s.vector.clone()).collect();
    let km = kmeans(&points, k, seed, max_iters)?;
    let mut node: Vec<Vec<usize>> = examples
        .iter()
        .map(|e| vec![usize::MAX; e.steps.len()])
        .collect();
    let mut members = vec![Vec::new(); k];
    for (s, &a) in states.iter().zip(&km.assignment) {
        let slot = node
            .get_mut(s.at.example)
            .and_then(|row| row.get_mut(s.at.step))
            .ok_or_else(|| Error::Data(format!("state {:?} does not match the dataset", s.at)))?;
        *slot = a;
        members[a].push(s.at);
    }
    if node.iter().flatten().any(|&n| n == usize::MAX) {
        return Err(Error::Data("some CoT steps have no state vector".into()));
    }
    for m in &mut members {
        m.sort();
    }
    Ok(LatentGraph {
        k,
        centroids: km.centroids,
        node,
        members,
        objective: km.objective,
        converged: km.converged,
    })
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InitialNode {
    /// Uniform over non-empty nodes.
    #[default]
    Uniform,
    /// Proportional to node size.
    SizeWeighted,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct WalkConfig {
    /// Stop once the path has at least this many steps.
    pub l_max: usize,
    /// Segment bound `L`: each segment adds `m ~ U[1, L]` steps after its first.
    /// Defaults to `l_max` when unset.
    pub segment_cap: Option<usize>,
    pub count: usize,
    pub seed: u64,
    pub initial: InitialNode,
    /// Prefix the rendered text with the first segment's question.
    pub include_question: bool,
}

impl Default for WalkConfig {
    fn default() -> Self {
        Self {
            l_max: 5,
            segment_cap: None,
            count: 1000,
            seed: 0,
            initial: InitialNode::Uniform,
            include_question: false,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Segment {
    pub example: usize,
    pub start: usize,
    /// Inclusive.
    pub end: usize,
    /// Node the walk was at when the segment was chosen.
    pub node: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EmittedPath {
    pub steps: Vec<StepRef>,
    pub segments: Vec<Segment>,
    pub text: String,
}

impl EmittedPath {
    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }
}

/// One path of the segment-stitching walk.
pub fn random_walk_path<R: Rng + ?Sized>(
    examples: &[CotExample],
    graph: &LatentGraph,
    cfg: &WalkConfig,
    rng: &mut R,
) -> Result<EmittedPath> {
    let nodes = graph.non_empty_nodes();
    if nodes.is_empty() {
        return Err(Error::Unsatisfiable(
            "latent graph has no non-empty node".into(),
        ));
    }
    if cfg.l_max == 0 {
        return Err(Error::Config("L_max must be at least 1".into()));
    }
    let cap = cfg.segment_cap.unwrap_or(cfg.l_max);
    if cap == 0 {
        return Err(Error::Config("segment cap L must be at least 1".into()));
    }
    let mut node = match cfg.initial {
        InitialNode::Uniform => nodes[rng.gen_range(0..nodes.len())],
        InitialNode::SizeWeighted => {
            let w: Vec<usize> = nodes.iter().map(|&n| graph.members[n].len()).collect();
            nodes[WeightedIndex::new(&w).expect("non-empty nodes").sample(rng)]
        }
    };
    let mut steps = Vec::new();
    let mut segments = Vec::new();
    while steps.len() < cfg.l_max {
        let pick = graph.members[node][rng.gen_range(0..graph.members[node].len())];
        let m = rng.gen_range(1..=cap);
        let n = examples[pick.example].steps.len();
        let end = (pick.step + m).min(n - 1);
        for j in pick.step..=end {
            steps.push(StepRef {
                example: pick.example,
                step: j,
            });
        }
        segments.push(Segment {
            example: pick.example,
            start: pick.step,
            end,
            node,
        });
        node = graph.node[pick.example][end];
    }
    let mut lines: Vec<&str> = Vec::with_capacity(steps.len() + 1);
    if cfg.include_question {
        lines.push(&examples[segments[0].example].question);
    }
    lines.extend(
        steps
            .iter()
            .map(|s| examples[s.example].steps[s.step].as_str()),
    );
    Ok(EmittedPath {
        text: lines.join("\n"),
        steps,
        segments,
    })
}

/// `cfg.count` paths; path `i` uses its own seeded stream.
pub fn random_walk_paths(
    examples: &[CotExample],
    graph: &LatentGraph,
    cfg: &WalkConfig,
) -> Result<Vec<EmittedPath>> {
    (0..cfg.count)
        .into_par_iter()
        .map(|i| random_walk_path(examples, graph, cfg, &mut walk_rng(cfg.seed, i as u64)))
        .collect()
}

/// Checks the structural guarantees of an emitted path.
pub fn check_path(
    path: &EmittedPath,
    examples: &[CotExample],
    graph: &LatentGraph,
    cfg: &WalkConfig,
) -> std::result::Result<(), String> {
    let cap = cfg.segment_cap.unwrap_or(cfg.l_max);
    if path.segments.is_empty() {
        return Err("no segments".into());
    }
    let mut at = 0;
    let mut expected_node: Option<usize> = None;
    for (k, s) in path.segments.iter().enumerate() {
        let n = examples
            .get(s.example)
            .ok_or_else(|| format!("segment {k}: unknown example"))?
            .steps
            .len();
        if s.start > s.end || s.end >= n {
            return Err(format!("segment {k}: bad bounds {}..={}", s.start, s.end));
        }
        if s.end - s.start > cap {
            return Err(format!("segment {k}: longer than the cap"));
        }
        if let Some(want) = expected_node {
            if s.node != want {
                return Err(format!(
                    "segment {k}: starts at node {} but walk is at {want}",
                    s.node
                ));
            }
        }
        let first = StepRef {
            example: s.example,
            step: s.start,
        };
        if graph.node_of(first) != s.node {
            return Err(format!("segment {k}: first step is not in node {}", s.node));
        }
        for j in s.start..=s.end {
            let want = StepRef {
                example: s.example,
                step: j,
            };
            if path.steps.get(at) != Some(&want) {
                return Err(format!("segment {k}: steps are not contiguous"));
            }
            at += 1;
        }
        expected_node = Some(graph.node_of(StepRef {
            example: s.example,
            step: s.end,
        }));
    }
    if at != path.steps.len() {
        return Err("steps outside every segment".into());
    }
    if path.steps.len() < cfg.l_max {
        return Err(format!(
            "length {} below L_max {}",
            path.steps.len(),
            cfg.l_max
        ));
    }
    // the walk stops as soon as it reaches L_max
    let last = path.segments[path.segments.len() - 1];
    let before_last = path.steps.len() - (last.end - last.start + 1);
    if before_last >= cfg.l_max {
        return Err("walk continued past L_max".into());
    }
    Ok(())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Phase {
    pub name: String,
    pub steps: usize,
    pub file: PathBuf,
    pub records: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainingPlan {
    pub random_walk_steps: usize,
    pub sft_steps: usize,
    pub seed: u64,
    pub phases: Vec<Phase>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub extra: BTreeMap<String, String>,
}

pub fn sft_text(ex: &CotExample) -> String {
    let mut s = ex.question.clone();
    for step in &ex.steps {
        s.push('\n');
        s.push_str(step);
    }
    s.push('\n');
    s.push_str(&ex.answer);
    s
}

fn write_jsonl(path: &Path, rows: impl Iterator<Item = Value>) -> Result<usize> {
    let f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = std::io::BufWriter::new(f);
    let mut n = 0;
    for row in rows {
        serde_json::to_writer(&mut w, &row)?;
        w.write_all(b"\n").map_err(|e| Error::io(path, e))?;
        n += 1;
    }
    w.flush().map_err(|e| Error::io(path, e))?;
    Ok(n)
}

/// Writes the random-walk corpus, the SFT file and `plan.json` describing
/// `m` random-walk steps followed by `n - m` fine-tuning steps.
pub fn emit_training_plan(
    paths: &[EmittedPath],
    examples: &[CotExample],
    m: usize,
    n: usize,
    seed: u64,
    out_dir: &Path,
) -> Result<TrainingPlan> {
    if m >= n {
        return Err(Error::Config(format!(
            "random-walk steps M = {m} must be below total steps N = {n}"
        )));
    }
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let mut phases = Vec::new();
    if m > 0 {
        let file = out_dir.join("random_walk.jsonl");
        let records = write_jsonl(
            &file,
            paths.iter().map(|p| serde_json::json!({ "text": p.text })),
        )?;
        phases.push(Phase {
            name: "random_walk".into(),
            steps: m,
            file: PathBuf::from("random_walk.jsonl"),
            records,
        });
    }
    let file = out_dir.join("sft.jsonl");
    let records = write_jsonl(
        &file,
        examples
            .iter()
            .map(|e| serde_json::json!({ "id": e.id, "text": sft_text(e) })),
    )?;
    phases.push(Phase {
        name: "sft".into(),
        steps: n - m,
        file: PathBuf::from("sft.jsonl"),
        records,
    });
    let plan = TrainingPlan {
        random_walk_steps: m,
        sft_steps: n - m,
        seed,
        phases,
        extra: BTreeMap::new(),
    };
    let p = out_dir.join("plan.json");
    std::fs::write(&p, serde_json::to_string_pretty(&plan)? + "\n")
        .map_err(|e| Error::io(&p, e))?;
    Ok(plan)
}
