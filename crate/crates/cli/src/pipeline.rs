//! Pipeline stages. Every stage reads its inputs from, and writes its outputs
//! to, a run directory named by the configuration hash.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use log::info;
use pathagg::analysis::{
    accuracy, grid_queries, kl_grid, prop1_check, prop1_csv, reference_dist, rule_length_stats,
    write_accuracy_curves, ColumnDists, KlGrid, LengthAccuracyCurve, QueryAnswerIndex,
};
use pathagg::cot::{
    build_graph, check_path, embed_states, emit_training_plan, ingest_cot, load_external_vectors,
    mean_steps, random_walk_paths, CotExample, EmbeddingProvider, EmittedPath, LatentGraph,
    TrainingPlan, WalkConfig,
};
use pathagg::kg::{load_split, DatasetSplit};
use pathagg::lm::{lm_entity_distribution, train, write_train_log, Checkpoint, LmParams};
use pathagg::rules::{
    learn_weights, load_json, mine_rules, save_json, Aggregator, RuleBook, WeightBook,
};
use pathagg::walk::{vocab_hash, CorpusConfig, TokenCorpus};
use pathagg::{EntityDistribution, Error, RelationId, Result};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::json;
use sha2::{Digest, Sha256};

use crate::config::ExperimentConfig;

/// Environment variable naming the root of all run directories.
pub const RUNS_ENV: &str = "PATHAGG_RUNS";

pub fn default_runs_root() -> PathBuf {
    std::env::var_os(RUNS_ENV)
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from("runs"))
}

/// A validated configuration bound to its run directory.
#[derive(Clone, Debug)]
pub struct Run {
    pub config: ExperimentConfig,
    pub hash: String,
    pub dir: PathBuf,
}

impl Run {
    pub fn open(config: ExperimentConfig, root: &Path) -> Result<Self> {
        config.validate()?;
        let hash = config.hash();
        let dir = root.join(config.short_hash());
        std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        let cfg_path = dir.join("config.toml");
        if !cfg_path.exists() {
            let text = format!("# config_hash={hash}\n{}", config.to_toml()?);
            std::fs::write(&cfg_path, text).map_err(|e| Error::io(&cfg_path, e))?;
        }
        Ok(Self { config, hash, dir })
    }

    /// First line of every CSV this run writes.
    pub fn header(&self) -> String {
        format!("# config_hash={}", self.hash)
    }

    /// `dir/rel`, creating parent directories.
    pub fn output(&self, rel: &str) -> Result<PathBuf> {
        let p = self.dir.join(rel);
        if let Some(parent) = p.parent() {
            std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        }
        Ok(p)
    }

    /// `dir/rel` if it exists, otherwise an error naming the producing command.
    pub fn input(&self, rel: &str, producer: &str) -> Result<PathBuf> {
        let p = self.dir.join(rel);
        if p.exists() {
            Ok(p)
        } else {
            Err(Error::Missing(format!(
                "{} (run `pathagg {producer}` with the same configuration first)",
                p.display()
            )))
        }
    }

    fn write_csv(&self, rel: &str, body: &str) -> Result<PathBuf> {
        let p = self.output(rel)?;
        std::fs::write(&p, body).map_err(|e| Error::io(&p, e))?;
        Ok(p)
    }

    fn manifest(&self, command: &str, details: serde_json::Value) -> Result<()> {
        let p = self.output(&format!("manifests/{command}.json"))?;
        let body = json!({ "command": command, "config_hash": self.hash, "details": details });
        std::fs::write(&p, serde_json::to_string_pretty(&body)? + "\n")
            .map_err(|e| Error::io(&p, e))
    }

    pub fn load_dataset(&self) -> Result<DatasetSplit> {
        let d = &self.config.data;
        let mut split = load_split(&d.train, &d.test, d.valid.as_deref(), d.unknown)?;
        if d.inverse {
            split.graph = split.graph.add_inverse_relations();
        }
        Ok(split)
    }

    pub fn corpus_path(l_max: usize) -> String {
        format!("corpus/L{l_max}.bin")
    }

    pub fn checkpoint_path(l_max: usize) -> String {
        format!("lm/L{l_max}.ckpt")
    }

    pub fn weights_path(n_max: usize) -> String {
        format!("rules/weights_N{n_max}.json")
    }
}

fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

fn answer_index(split: &DatasetSplit) -> QueryAnswerIndex {
    QueryAnswerIndex::build(&split.graph, &split.test, split.valid.as_deref())
}

/// Relations to mine rules for: the configured names, or every relation the
/// test set queries.
pub fn target_relations(run: &Run, split: &DatasetSplit) -> Result<Vec<RelationId>> {
    let g = &split.graph;
    let mut out: Vec<RelationId> = if run.config.rules.relations.is_empty() {
        split.test.iter().map(|t| t.relation).collect()
    } else {
        run.config
            .rules
            .relations
            .iter()
            .map(|name| {
                g.relation_id(name).ok_or_else(|| {
                    Error::Config(format!("rules.relations: unknown relation `{name}`"))
                })
            })
            .collect::<Result<_>>()?
    };
    out.sort();
    out.dedup();
    Ok(out)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IngestReport {
    pub entities: usize,
    pub relations: usize,
    pub train_triples: usize,
    pub test_triples: usize,
    pub valid_triples: Option<usize>,
    pub duplicate_train: usize,
    pub rejected_test: usize,
    pub rejected_valid: usize,
    pub test_in_train: usize,
    pub vocab_hash: String,
    pub cot_examples: Option<usize>,
    pub cot_mean_steps: Option<f64>,
}

pub fn cmd_ingest(run: &Run) -> Result<IngestReport> {
    let split = run.load_dataset()?;
    let g = &split.graph;
    let cot = match &run.config.cot.input {
        Some(p) => Some(ingest_cot(p)?),
        None => None,
    };
    let report = IngestReport {
        entities: g.entity_count(),
        relations: g.relation_count(),
        train_triples: g.triple_count(),
        test_triples: split.test.len(),
        valid_triples: split.valid.as_ref().map(Vec::len),
        duplicate_train: split.report.duplicate_train,
        rejected_test: split.report.rejected_test,
        rejected_valid: split.report.rejected_valid,
        test_in_train: split.report.test_in_train,
        vocab_hash: vocab_hash(g),
        cot_examples: cot.as_ref().map(Vec::len),
        cot_mean_steps: cot.as_deref().map(mean_steps),
    };
    let p = run.output("ingest.json")?;
    save_json(&json!({ "config_hash": run.hash, "report": report }), &p)?;
    Ok(report)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CorpusEntry {
    pub l_max: usize,
    pub walks: usize,
    pub seed: u64,
    pub chunks: usize,
    pub tokens: usize,
    pub file: String,
    pub sha256: String,
}

pub fn cmd_gen_corpus(run: &Run) -> Result<Vec<CorpusEntry>> {
    let split = run.load_dataset()?;
    let g = &split.graph;
    let cfg = &run.config;
    let mut entries = Vec::new();
    for &l in &cfg.walk.l_max {
        let walks = if cfg.walk.walks == 0 {
            CorpusConfig::default_walks(g, l)
        } else {
            cfg.walk.walks
        };
        let cc = CorpusConfig {
            l_max: l,
            walks,
            t_chunk: cfg.walk.t_chunk,
            seed: cfg.seed,
            length: cfg.walk.length,
        };
        let corpus = TokenCorpus::generate(g, &cc)?;
        let rel = Run::corpus_path(l);
        let bytes = corpus.to_bytes()?;
        let p = run.output(&rel)?;
        std::fs::write(&p, &bytes).map_err(|e| Error::io(&p, e))?;
        info!("L_max={l}: {walks} walks, {} chunks", corpus.num_chunks());
        entries.push(CorpusEntry {
            l_max: l,
            walks,
            seed: cfg.seed,
            chunks: corpus.num_chunks(),
            tokens: corpus.tokens().len(),
            file: rel,
            sha256: sha256_hex(&bytes),
        });
    }
    run.manifest("gen-corpus", serde_json::to_value(&entries)?)?;
    Ok(entries)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainSummary {
    pub l_max: usize,
    pub steps: u64,
    pub final_loss: f64,
    pub checkpoint: String,
}

/// Trains one LM per configured `L_max` (or only `only`).
pub fn cmd_train_lm(run: &Run, only: Option<usize>) -> Result<Vec<TrainSummary>> {
    let cfg = &run.config;
    let rows: Vec<usize> = match only {
        Some(l) if cfg.walk.l_max.contains(&l) => vec![l],
        Some(l) => return Err(Error::Config(format!("L_max={l} is not in walk.l_max"))),
        None => cfg.walk.l_max.clone(),
    };
    let tc = cfg.train_config();
    let mut out = Vec::new();
    for l in rows {
        let corpus = TokenCorpus::load(&run.input(&Run::corpus_path(l), "gen-corpus")?)?;
        let lc = cfg.lm_config(corpus.vocab().size());
        let params = LmParams::<f32>::init(&lc)?;
        let every = (tc.steps / 10).max(1);
        let (params, adam, log) = train(params, &corpus, &tc, |s| {
            if s.step % every == 0 {
                info!("L_max={l} step {} loss {:.4}", s.step, s.loss);
            }
        })?;
        let ckpt = Checkpoint::new(
            params,
            Some(adam),
            Some(tc.clone()),
            Some(corpus.meta.vocab_hash.clone()),
        );
        let rel = Run::checkpoint_path(l);
        ckpt.save(&run.output(&rel)?)?;
        write_train_log(
            &log,
            Some(&run.header()),
            &run.output(&format!("lm/train_L{l}.csv"))?,
        )?;
        out.push(TrainSummary {
            l_max: l,
            steps: tc.steps,
            final_loss: log.last().map_or(f64::NAN, |s| s.loss),
            checkpoint: rel,
        });
    }
    Ok(out)
}

fn load_checkpoint(run: &Run, l: usize, split: &DatasetSplit) -> Result<Checkpoint<f32>> {
    let ckpt = Checkpoint::<f32>::load(&run.input(&Run::checkpoint_path(l), "train-lm")?)?;
    let expected = vocab_hash(&split.graph);
    if let Some(h) = &ckpt.header.vocab_hash {
        if *h != expected {
            return Err(Error::Data(format!(
                "checkpoint for L_max={l} was trained on a different vocabulary"
            )));
        }
    }
    Ok(ckpt)
}

pub fn cmd_mine_rules(run: &Run) -> Result<RuleBook> {
    let split = run.load_dataset()?;
    let g = &split.graph;
    let cfg = &run.config;
    let n = *cfg.rules.n_max.iter().max().expect("validated non-empty");
    let opts = cfg.mining_options();
    let mut sets = Vec::new();
    for r in target_relations(run, &split)? {
        let set = mine_rules(g, r, n, cfg.rules.min_support, &opts)?;
        info!(
            "{}: {} rules up to length {n}",
            g.relation_name(r),
            set.len()
        );
        sets.push(set);
    }
    let book = RuleBook {
        n_max: n,
        min_support: cfg.rules.min_support,
        sets,
    };
    save_json(&book, &run.output("rules/rules.json")?)?;
    let mut csv = run.header();
    csv.push_str("\nrelation,rule,length,support\n");
    for set in &book.sets {
        for s in &set.rules {
            let _ = writeln!(
                csv,
                "{},{},{},{}",
                g.relation_name(set.relation),
                s.rule.display(g),
                s.rule.len(),
                s.support
            );
        }
    }
    run.write_csv("rules/rules.csv", &csv)?;
    Ok(book)
}

fn load_rulebook(run: &Run) -> Result<RuleBook> {
    load_json(&run.input("rules/rules.json", "mine-rules")?)
}

pub fn cmd_learn_weights(run: &Run) -> Result<BTreeMap<usize, WeightBook>> {
    let split = run.load_dataset()?;
    let g = &split.graph;
    let cfg = &run.config;
    let book = load_rulebook(run)?;
    let lc = cfg.learn_config();
    let mut out = BTreeMap::new();
    let mut csv = run.header();
    csv.push_str("\nN_max,relation,rules,examples,initial_loss,loss,iterations,converged\n");
    for &n in &cfg.rules.n_max {
        let mut weights = Vec::new();
        for set in &book.sets {
            let sub = set.restrict(n, cfg.rules.min_support);
            let w = learn_weights(g, &sub, &lc)?;
            if let Some(f) = &w.fit {
                let _ = writeln!(
                    csv,
                    "{n},{},{},{},{},{},{},{}",
                    g.relation_name(set.relation),
                    sub.len(),
                    f.examples,
                    f.initial_loss,
                    f.loss,
                    f.iterations,
                    f.converged
                );
            }
            weights.push(w);
        }
        let wb = WeightBook { weights };
        save_json(&wb, &run.output(&Run::weights_path(n))?)?;
        out.insert(n, wb);
    }
    run.write_csv("rules/fit.csv", &csv)?;
    Ok(out)
}

fn load_weights(run: &Run, n: usize) -> Result<WeightBook> {
    load_json(&run.input(&Run::weights_path(n), "learn-weights")?)
}

/// Per-relation aggregators for one `N_max`.
struct Aggregators {
    weighted: BTreeMap<RelationId, Aggregator>,
    unweighted: BTreeMap<RelationId, Aggregator>,
}

fn aggregators(run: &Run, book: &RuleBook, n: usize) -> Result<Aggregators> {
    let t = run.config.rules.temperature;
    let wb = load_weights(run, n)?;
    let mut weighted = BTreeMap::new();
    let mut unweighted = BTreeMap::new();
    for set in &book.sets {
        let sub = set.restrict(n, run.config.rules.min_support);
        let w = wb.get(set.relation).ok_or_else(|| {
            Error::Missing(format!(
                "weights for relation {} at N_max={n} (run `pathagg learn-weights`)",
                set.relation
            ))
        })?;
        weighted.insert(set.relation, Aggregator::weighted(w, t));
        unweighted.insert(set.relation, Aggregator::unweighted(&sub, t));
    }
    Ok(Aggregators {
        weighted,
        unweighted,
    })
}

fn no_rules(r: RelationId) -> Error {
    Error::Missing(format!("rules for relation {r} (run `pathagg mine-rules`)"))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub curves: Vec<LengthAccuracyCurve>,
}

impl EvalReport {
    pub fn point(&self, predictor: &str, length: usize) -> Option<f64> {
        self.curves
            .iter()
            .find(|c| c.predictor == predictor)?
            .points
            .iter()
            .find(|p| p.0 == length)
            .map(|p| p.1)
    }
}

fn dataset_name(run: &Run) -> String {
    run.config
        .data
        .train
        .parent()
        .and_then(|p| p.file_name())
        .map_or_else(|| "dataset".into(), |s| s.to_string_lossy().into_owned())
}

/// Test accuracy of every available predictor: the LM per `L_max` (when
/// `with_lm`) and the weighted/unweighted aggregators per `N_max`.
pub fn cmd_eval(run: &Run, with_lm: bool) -> Result<EvalReport> {
    let split = run.load_dataset()?;
    let g = &split.graph;
    let index = answer_index(&split);
    let cfg = &run.config;
    let name = dataset_name(run);
    let mut curves = Vec::new();
    if with_lm {
        let mut points = Vec::new();
        for &l in &cfg.walk.l_max {
            let ckpt = load_checkpoint(run, l, &split)?;
            let vocab = pathagg::walk::TokenVocab::for_graph(g);
            let acc = accuracy(
                |e, r| Ok(lm_entity_distribution(&ckpt.params, &vocab, e, r)?.argmax()),
                &split.test,
                &index,
            )?;
            info!("LM L_max={l}: accuracy {acc:.4}");
            points.push((l, acc));
        }
        curves.push(LengthAccuracyCurve {
            dataset: name.clone(),
            predictor: "LM".into(),
            points,
        });
    }
    let book = load_rulebook(run)?;
    let (mut wp, mut sp) = (Vec::new(), Vec::new());
    for &n in &cfg.rules.n_max {
        let aggs = aggregators(run, &book, n)?;
        let wa = accuracy(
            |e, r| {
                Ok(aggs
                    .weighted
                    .get(&r)
                    .ok_or_else(|| no_rules(r))?
                    .predict(g, e))
            },
            &split.test,
            &index,
        )?;
        let sa = accuracy(
            |e, r| {
                Ok(aggs
                    .unweighted
                    .get(&r)
                    .ok_or_else(|| no_rules(r))?
                    .predict(g, e))
            },
            &split.test,
            &index,
        )?;
        info!("N_max={n}: weighted {wa:.4} unweighted {sa:.4}");
        wp.push((n, wa));
        sp.push((n, sa));
    }
    curves.push(LengthAccuracyCurve {
        dataset: name.clone(),
        predictor: "Weighted".into(),
        points: wp,
    });
    curves.push(LengthAccuracyCurve {
        dataset: name,
        predictor: "Unweighted".into(),
        points: sp,
    });
    write_accuracy_curves(
        &curves,
        &run.output("eval/accuracy_curve.csv")?,
        Some(&run.header()),
    )?;

    let sets: Vec<_> = book.sets.clone();
    let top = *cfg.rules.n_max.iter().max().expect("validated non-empty");
    let weights = load_weights(run, top)?;
    let lengths = rule_length_stats(&sets, &weights.weights);
    run.write_csv(
        "eval/rule_stats.csv",
        &lengths.to_csv(g, Some(&run.header())),
    )?;
    Ok(EvalReport { curves })
}

pub fn cmd_kl_grid(run: &Run) -> Result<KlGrid> {
    let split = run.load_dataset()?;
    let g = &split.graph;
    let index = answer_index(&split);
    let cfg = &run.config;
    let queries = grid_queries(&split.test, cfg.analysis.averaging);
    let rows = cfg.kl_rows();
    let vocab = pathagg::walk::TokenVocab::for_graph(g);
    let mut lm = BTreeMap::new();
    for &l in &rows {
        let ckpt = load_checkpoint(run, l, &split)?;
        let d: Vec<EntityDistribution> = queries
            .iter()
            .map(|&(e, r)| lm_entity_distribution(&ckpt.params, &vocab, e, r))
            .collect::<Result<_>>()?;
        lm.insert(l, d);
    }
    let book = load_rulebook(run)?;
    let mut weighted = ColumnDists::new();
    let mut unweighted = ColumnDists::new();
    for &n in &cfg.rules.n_max {
        let aggs = aggregators(run, &book, n)?;
        let mut w = Vec::with_capacity(queries.len());
        let mut s = Vec::with_capacity(queries.len());
        for &(e, r) in &queries {
            w.push(
                aggs.weighted
                    .get(&r)
                    .ok_or_else(|| no_rules(r))?
                    .distribution(g, e),
            );
            s.push(
                aggs.unweighted
                    .get(&r)
                    .ok_or_else(|| no_rules(r))?
                    .distribution(g, e),
            );
        }
        weighted.insert(n, w);
        unweighted.insert(n, s);
    }
    let reference: Vec<EntityDistribution> = queries
        .iter()
        .map(|&(e, r)| reference_dist(&index, e, r))
        .collect::<Result<_>>()?;
    let grid = kl_grid(
        &rows,
        &queries,
        &lm,
        &weighted,
        &unweighted,
        &reference,
        g.entity_count(),
    )?;
    run.write_csv("kl/kl_grid.csv", &grid.to_csv(Some(&run.header())))?;
    run.write_csv("kl/raw.csv", &grid.raw_csv(g, Some(&run.header())))?;
    Ok(grid)
}

pub fn cmd_prop1_check(run: &Run) -> Result<Vec<pathagg::analysis::Prop1Report>> {
    let cfg = &run.config.analysis;
    let mut rng = ChaCha8Rng::seed_from_u64(run.config.seed);
    let mut reports = Vec::new();
    for &[e, h] in &cfg.prop1_sizes {
        reports.push(prop1_check(e, h, cfg.prop1_trials, &mut rng)?);
    }
    run.write_csv(
        "prop1_report.csv",
        &prop1_csv(&reports, Some(&run.header())),
    )?;
    Ok(reports)
}

fn cot_examples(run: &Run) -> Result<Vec<CotExample>> {
    let p = run
        .config
        .cot
        .input
        .as_ref()
        .ok_or_else(|| Error::Config("cot.input is not set".into()))?;
    ingest_cot(p)
}

pub fn cmd_cot_graph(run: &Run) -> Result<LatentGraph> {
    let c = &run.config.cot;
    let examples = cot_examples(run)?;
    let provider = match &c.vectors {
        Some(p) => EmbeddingProvider::External(load_external_vectors(p)?),
        None => EmbeddingProvider::TokenHash { dim: c.hash_dim },
    };
    let states = embed_states(&examples, &provider)?;
    let graph = build_graph(&examples, &states, c.k, run.config.seed, c.kmeans_iters)?;
    graph.save(&run.output("cot/graph.json")?)?;
    let mut csv = run.header();
    csv.push_str("\nid,step,node\n");
    for (i, ex) in examples.iter().enumerate() {
        for (j, n) in graph.node[i].iter().enumerate() {
            let _ = writeln!(csv, "{},{j},{n}", ex.id);
        }
    }
    run.write_csv("cot/assignments.csv", &csv)?;
    let mut obj = run.header();
    obj.push_str("\niteration,objective\n");
    for (i, v) in graph.objective.iter().enumerate() {
        let _ = writeln!(obj, "{},{v}", i + 1);
    }
    run.write_csv("cot/kmeans.csv", &obj)?;
    Ok(graph)
}

pub fn walk_config(run: &Run) -> WalkConfig {
    let c = &run.config.cot;
    WalkConfig {
        l_max: c.l_max,
        segment_cap: c.segment_cap,
        count: c.paths,
        seed: run.config.seed,
        initial: c.initial,
        include_question: c.include_question,
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CotWalkReport {
    pub paths: usize,
    pub valid: usize,
    pub mean_len: f64,
    pub mean_segments: f64,
}

pub fn cmd_cot_walk(run: &Run) -> Result<(Vec<EmittedPath>, CotWalkReport)> {
    let examples = cot_examples(run)?;
    let graph = LatentGraph::load(&run.input("cot/graph.json", "cot-graph")?)?;
    let wc = walk_config(run);
    let paths = random_walk_paths(&examples, &graph, &wc)?;
    let p = run.output("cot/paths.jsonl")?;
    let mut body = String::new();
    for path in &paths {
        body.push_str(&serde_json::to_string(path)?);
        body.push('\n');
    }
    std::fs::write(&p, body).map_err(|e| Error::io(&p, e))?;
    let mut csv = run.header();
    csv.push_str("\npath,length,segments,valid\n");
    let mut valid = 0;
    for (i, path) in paths.iter().enumerate() {
        let ok = check_path(path, &examples, &graph, &wc).is_ok();
        valid += ok as usize;
        let _ = writeln!(csv, "{i},{},{},{ok}", path.len(), path.segments.len());
    }
    run.write_csv("cot/paths.csv", &csv)?;
    let n = paths.len().max(1) as f64;
    let report = CotWalkReport {
        paths: paths.len(),
        valid,
        mean_len: paths.iter().map(|p| p.len()).sum::<usize>() as f64 / n,
        mean_segments: paths.iter().map(|p| p.segments.len()).sum::<usize>() as f64 / n,
    };
    Ok((paths, report))
}

pub fn cmd_cot_plan(run: &Run) -> Result<TrainingPlan> {
    let examples = cot_examples(run)?;
    let p = run.input("cot/paths.jsonl", "cot-walk")?;
    let text = std::fs::read_to_string(&p).map_err(|e| Error::io(&p, e))?;
    let paths: Vec<EmittedPath> = text
        .lines()
        .filter(|l| !l.trim().is_empty())
        .map(serde_json::from_str)
        .collect::<std::result::Result<_, _>>()?;
    let c = &run.config.cot;
    let out = run.output("cot/plan/plan.json")?;
    let dir = out.parent().expect("has parent").to_path_buf();
    let mut plan = emit_training_plan(&paths, &examples, c.m, c.n, run.config.seed, &dir)?;
    plan.extra.insert("config_hash".into(), run.hash.clone());
    std::fs::write(&out, serde_json::to_string_pretty(&plan)? + "\n")
        .map_err(|e| Error::io(&out, e))?;
    Ok(plan)
}
