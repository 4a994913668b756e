//! Random-walk corpora: sampling, verbalisation and chunk packing.

use std::fmt::Write as _;
use std::fs::File;
use std::io::{BufWriter, Read, Write};
use std::path::Path;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::kg::{EntityId, KnowledgeGraph, RelationId, Triple};

/// A chained sequence of triples: `tail(step_i) == head(step_{i+1})`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct WalkPath(pub Vec<Triple>);

impl WalkPath {
    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn is_chained(&self) -> bool {
        self.0.windows(2).all(|w| w[0].tail == w[1].head)
    }
}

/// How many steps a walk attempts before a sink can cut it short.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WalkLength {
    /// Exactly `l_max` steps.
    #[default]
    Fixed,
    /// A length drawn uniformly from `1..=l_max` per walk.
    Uniform,
}

/// Token layout: entities `0..E`, relations `E..E+R`, then PERIOD, EOS, PAD.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenVocab {
    pub entities: usize,
    pub relations: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Token {
    Entity(EntityId),
    Relation(RelationId),
    Period,
    Eos,
    Pad,
}

impl TokenVocab {
    pub fn for_graph(graph: &KnowledgeGraph) -> Self {
        Self {
            entities: graph.entity_count(),
            relations: graph.relation_count(),
        }
    }

    pub fn size(&self) -> usize {
        self.entities + self.relations + 3
    }

    #[inline]
    pub fn entity(&self, e: EntityId) -> u32 {
        e.0
    }

    #[inline]
    pub fn relation(&self, r: RelationId) -> u32 {
        (self.entities as u32) + r.0
    }

    pub fn period(&self) -> u32 {
        (self.entities + self.relations) as u32
    }

    pub fn eos(&self) -> u32 {
        self.period() + 1
    }

    pub fn pad(&self) -> u32 {
        self.period() + 2
    }

    /// Token ids of the entity block, which is always `0..entities`.
    pub fn entity_block(&self) -> std::ops::Range<usize> {
        0..self.entities
    }

    pub fn decode(&self, id: u32) -> Result<Token> {
        let i = id as usize;
        let e = self.entities;
        let r = self.relations;
        Ok(match i {
            _ if i < e => Token::Entity(EntityId(id)),
            _ if i < e + r => Token::Relation(RelationId((i - e) as u32)),
            _ if i == e + r => Token::Period,
            _ if i == e + r + 1 => Token::Eos,
            _ if i == e + r + 2 => Token::Pad,
            _ => {
                return Err(Error::OutOfRange {
                    kind: "token",
                    id: i,
                    size: self.size(),
                })
            }
        })
    }
}

/// Hash of the surface vocabulary, stored in corpus headers and checkpoints.
pub fn vocab_hash(graph: &KnowledgeGraph) -> String {
    let mut h = Sha256::new();
    for n in graph.entities().names() {
        h.update(n.as_bytes());
        h.update([0u8]);
    }
    h.update([1u8]);
    for n in graph.relations().names() {
        h.update(n.as_bytes());
        h.update([0u8]);
    }
    hex::encode(h.finalize())
}

/// Samples one uniform random walk.
///
/// The start entity is uniform over all entities; starts without outgoing
/// edges are redrawn. Each step picks an outgoing edge uniformly.
pub fn sample_walk<R: Rng + ?Sized>(
    graph: &KnowledgeGraph,
    l_max: usize,
    length: WalkLength,
    rng: &mut R,
) -> Result<WalkPath> {
    if l_max == 0 {
        return Err(Error::Config("l_max must be at least 1".into()));
    }
    if !graph.has_edges() {
        return Err(Error::Unsatisfiable("graph has no edges to walk on".into()));
    }
    let target = match length {
        WalkLength::Fixed => l_max,
        WalkLength::Uniform => rng.gen_range(1..=l_max),
    };
    let n = graph.entity_count();
    let mut current = loop {
        let e = EntityId(rng.gen_range(0..n) as u32);
        if graph.out_degree(e) > 0 {
            break e;
        }
    };
    let mut steps = Vec::with_capacity(target);
    while steps.len() < target {
        let edges = graph.edges_of(current);
        if edges.is_empty() {
            break;
        }
        let edge = edges[rng.gen_range(0..edges.len())];
        steps.push(Triple::new(current, edge.relation, edge.tail));
        current = edge.tail;
    }
    Ok(WalkPath(steps))
}

/// Random stream for walk `index` under `seed`. Every walk has its own
/// stream, so corpora do not depend on how walks are scheduled.
pub fn walk_rng(seed: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng
}

/// Samples `count` walks, walk `i` from [`walk_rng`]`(seed, i)`.
pub fn sample_walks(
    graph: &KnowledgeGraph,
    l_max: usize,
    length: WalkLength,
    count: usize,
    seed: u64,
) -> Result<Vec<WalkPath>> {
    (0..count)
        .into_par_iter()
        .map(|i| sample_walk(graph, l_max, length, &mut walk_rng(seed, i as u64)))
        .collect()
}

/// `<h> <r> <t> PERIOD` per triple, concatenated.
pub fn verbalize(vocab: &TokenVocab, path: &WalkPath) -> Vec<u32> {
    let mut out = Vec::with_capacity(path.len() * 4);
    for t in &path.0 {
        out.extend_from_slice(&[
            vocab.entity(t.head),
            vocab.relation(t.relation),
            vocab.entity(t.tail),
            vocab.period(),
        ]);
    }
    out
}

/// The two-token completion prompt for query `(e1, r)`.
pub fn make_query_prompt(vocab: &TokenVocab, e1: EntityId, r: RelationId) -> [u32; 2] {
    [vocab.entity(e1), vocab.relation(r)]
}

/// Space-separated surface form: `<name>` for symbols, `.` for PERIOD.
pub fn detokenize(graph: &KnowledgeGraph, vocab: &TokenVocab, tokens: &[u32]) -> Result<String> {
    let mut out = String::new();
    for (i, &id) in tokens.iter().enumerate() {
        if i > 0 {
            out.push(' ');
        }
        match vocab.decode(id)? {
            Token::Entity(e) => write!(out, "<{}>", graph.entity_name(e)),
            Token::Relation(r) => write!(out, "<{}>", graph.relation_name(r)),
            Token::Period => write!(out, "."),
            Token::Eos => write!(out, "<eos>"),
            Token::Pad => write!(out, "<pad>"),
        }
        .expect("writing to a String cannot fail");
    }
    Ok(out)
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CorpusMeta {
    pub vocab_hash: String,
    pub entities: usize,
    pub relations: usize,
    pub t_chunk: usize,
    pub seed: u64,
    pub l_max: usize,
    pub walks: usize,
}

/// Fixed-length token chunks, stored flat.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TokenCorpus {
    pub meta: CorpusMeta,
    tokens: Vec<u32>,
}

/// Joins paragraphs with EOS after each, then cuts `t_chunk` windows. The
/// incomplete final window is dropped.
pub fn pack_chunks(paragraphs: &[Vec<u32>], eos: u32, t_chunk: usize) -> Result<Vec<u32>> {
    if t_chunk < 2 {
        return Err(Error::Config(format!(
            "chunk length must be at least 2, got {t_chunk}"
        )));
    }
    let total: usize = paragraphs.iter().map(|p| p.len() + 1).sum();
    let mut stream = Vec::with_capacity(total);
    for p in paragraphs {
        stream.extend_from_slice(p);
        stream.push(eos);
    }
    let keep = (stream.len() / t_chunk) * t_chunk;
    stream.truncate(keep);
    Ok(stream)
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CorpusConfig {
    pub l_max: usize,
    pub walks: usize,
    pub t_chunk: usize,
    pub seed: u64,
    #[serde(default)]
    pub length: WalkLength,
}

impl CorpusConfig {
    /// Walk count giving roughly `50 x triples` tokens at this `l_max`.
    pub fn default_walks(graph: &KnowledgeGraph, l_max: usize) -> usize {
        let per_walk = 4 * l_max + 1;
        (50 * graph.triple_count()).div_ceil(per_walk).max(1)
    }
}

impl TokenCorpus {
    pub fn generate(graph: &KnowledgeGraph, cfg: &CorpusConfig) -> Result<Self> {
        let vocab = TokenVocab::for_graph(graph);
        let walks = sample_walks(graph, cfg.l_max, cfg.length, cfg.walks, cfg.seed)?;
        debug_assert!(walks.iter().all(WalkPath::is_chained));
        let paragraphs: Vec<Vec<u32>> = walks.iter().map(|w| verbalize(&vocab, w)).collect();
        let tokens = pack_chunks(&paragraphs, vocab.eos(), cfg.t_chunk)?;
        Ok(Self {
            meta: CorpusMeta {
                vocab_hash: vocab_hash(graph),
                entities: vocab.entities,
                relations: vocab.relations,
                t_chunk: cfg.t_chunk,
                seed: cfg.seed,
                l_max: cfg.l_max,
                walks: cfg.walks,
            },
            tokens,
        })
    }

    pub fn from_tokens(meta: CorpusMeta, tokens: Vec<u32>) -> Result<Self> {
        if meta.t_chunk == 0 || !tokens.len().is_multiple_of(meta.t_chunk) {
            return Err(Error::Format(format!(
                "{} tokens do not split into chunks of {}",
                tokens.len(),
                meta.t_chunk
            )));
        }
        Ok(Self { meta, tokens })
    }

    pub fn vocab(&self) -> TokenVocab {
        TokenVocab {
            entities: self.meta.entities,
            relations: self.meta.relations,
        }
    }

    pub fn t_chunk(&self) -> usize {
        self.meta.t_chunk
    }

    pub fn num_chunks(&self) -> usize {
        self.tokens.len() / self.meta.t_chunk
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn chunk(&self, i: usize) -> &[u32] {
        let t = self.meta.t_chunk;
        &self.tokens[i * t..(i + 1) * t]
    }

    pub fn chunks(&self) -> impl Iterator<Item = &[u32]> {
        self.tokens.chunks_exact(self.meta.t_chunk)
    }

    pub fn tokens(&self) -> &[u32] {
        &self.tokens
    }

    const MAGIC: &'static [u8; 8] = b"PAGCORP\x01";

    /// Binary layout: magic, u32 header length, JSON header, u32 LE tokens.
    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let header = serde_json::to_vec(&self.meta)?;
        let mut out = Vec::with_capacity(12 + header.len() + 4 * self.tokens.len());
        out.extend_from_slice(Self::MAGIC);
        out.extend_from_slice(&(header.len() as u32).to_le_bytes());
        out.extend_from_slice(&header);
        for t in &self.tokens {
            out.extend_from_slice(&t.to_le_bytes());
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let bad = |m: &str| Error::Format(format!("corpus: {m}"));
        if bytes.len() < 12 || &bytes[..8] != Self::MAGIC {
            return Err(bad("missing magic"));
        }
        let hlen = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
        let body = bytes
            .get(12..12 + hlen)
            .ok_or_else(|| bad("truncated header"))?;
        let meta: CorpusMeta = serde_json::from_slice(body)?;
        let rest = &bytes[12 + hlen..];
        if !rest.len().is_multiple_of(4) {
            return Err(bad("token section is not a whole number of u32"));
        }
        let tokens = rest
            .chunks_exact(4)
            .map(|c| u32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        Self::from_tokens(meta, tokens)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let mut buf = Vec::new();
        File::open(path)
            .and_then(|mut f| f.read_to_end(&mut buf))
            .map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&buf)
    }

    /// Human-readable dump: one sentence per line, `<eos>` on its own line,
    /// and a `--- chunk i` marker before every chunk.
    pub fn write_text(&self, graph: &KnowledgeGraph, path: &Path) -> Result<()> {
        let vocab = self.vocab();
        let f = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = BufWriter::new(f);
        let io = |e| Error::io(path, e);
        for (i, chunk) in self.chunks().enumerate() {
            writeln!(w, "--- chunk {i}").map_err(io)?;
            let mut line: Vec<u32> = Vec::new();
            for &tok in chunk {
                line.push(tok);
                let end = tok == vocab.period() || tok == vocab.eos();
                if end {
                    writeln!(w, "{}", detokenize(graph, &vocab, &line)?).map_err(io)?;
                    line.clear();
                }
            }
            if !line.is_empty() {
                writeln!(w, "{}", detokenize(graph, &vocab, &line)?).map_err(io)?;
            }
        }
        w.flush().map_err(io)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kg::GraphBuilder;

    fn chain() -> KnowledgeGraph {
        let mut b = GraphBuilder::new();
        b.add("A", "r", "B");
        b.add("B", "r", "C");
        b.build()
    }

    #[test]
    fn sink_truncates_walk() {
        let g = chain();
        let a = g.entity_id("A").unwrap();
        // Seeds until the start entity is A (B also works but yields length 1).
        for seed in 0..200 {
            let w = sample_walk(&g, 10, WalkLength::Fixed, &mut walk_rng(seed, 0)).unwrap();
            assert!(w.is_chained());
            assert!(!w.is_empty());
            if w.0[0].head == a {
                assert_eq!(w.len(), 2);
                return;
            }
        }
        panic!("never started at A");
    }

    #[test]
    fn l_max_one_is_a_single_triple() {
        let g = chain();
        for seed in 0..20 {
            let w = sample_walk(&g, 1, WalkLength::Fixed, &mut walk_rng(seed, 3)).unwrap();
            assert_eq!(w.len(), 1);
            assert!(g.contains(&w.0[0]));
        }
    }

    #[test]
    fn empty_graph_is_unsatisfiable() {
        let mut b = GraphBuilder::new();
        b.entity("lonely");
        let g = b.build();
        let err = sample_walk(&g, 3, WalkLength::Fixed, &mut walk_rng(0, 0)).unwrap_err();
        assert!(matches!(err, Error::Unsatisfiable(_)));
    }

    #[test]
    fn uniform_length_stays_in_range() {
        let g = chain();
        for i in 0..50 {
            let w = sample_walk(&g, 2, WalkLength::Uniform, &mut walk_rng(9, i)).unwrap();
            assert!((1..=2).contains(&w.len()));
        }
    }

    #[test]
    fn verbalize_repeats_shared_entity() {
        let mut b = GraphBuilder::new();
        let t1 = b.add("A", "r1", "B");
        let t2 = b.add("B", "r2", "C");
        let g = b.build();
        let v = TokenVocab::for_graph(&g);
        let toks = verbalize(&v, &WalkPath(vec![t1, t2]));
        let want = vec![
            v.entity(t1.head),
            v.relation(t1.relation),
            v.entity(t1.tail),
            v.period(),
            v.entity(t2.head),
            v.relation(t2.relation),
            v.entity(t2.tail),
            v.period(),
        ];
        assert_eq!(toks, want);
        assert_eq!(
            detokenize(&g, &v, &toks).unwrap(),
            "<A> <r1> <B> . <B> <r2> <C> ."
        );
    }

    #[test]
    fn packing_examples() {
        let eos = 99;
        let one = pack_chunks(&[vec![1, 2, 3, 4, 5]], eos, 6).unwrap();
        assert_eq!(one, vec![1, 2, 3, 4, 5, eos]);
        // 4 + EOS + 4 + EOS = 10 tokens -> one chunk of 6, 4 dropped
        let two = pack_chunks(&[vec![1, 2, 3, 4], vec![5, 6, 7, 8]], eos, 6).unwrap();
        assert_eq!(two, vec![1, 2, 3, 4, eos, 5]);
        assert!(pack_chunks(&[], eos, 6).unwrap().is_empty());
        assert!(pack_chunks(&[vec![1]], eos, 1).is_err());
    }

    #[test]
    fn prompt_round_trip() {
        let mut b = GraphBuilder::new();
        let t = b.add("A", "r1", "B");
        let g = b.build();
        let v = TokenVocab::for_graph(&g);
        let p = make_query_prompt(&v, t.head, t.relation);
        assert_eq!(p.len(), 2);
        assert_eq!(detokenize(&g, &v, &p).unwrap(), "<A> <r1>");
    }

    #[test]
    fn vocab_blocks_are_disjoint() {
        let v = TokenVocab {
            entities: 5,
            relations: 3,
        };
        assert_eq!(v.size(), 11);
        let mut seen = std::collections::HashSet::new();
        for e in 0..5 {
            assert!(seen.insert(v.entity(EntityId(e))));
        }
        for r in 0..3 {
            assert!(seen.insert(v.relation(RelationId(r))));
        }
        assert!(seen.insert(v.period()));
        assert!(seen.insert(v.eos()));
        assert!(seen.insert(v.pad()));
        assert!(v.decode(11).is_err());
        assert_eq!(v.decode(6).unwrap(), Token::Relation(RelationId(1)));
    }

    #[test]
    fn corpus_bytes_round_trip() {
        let g = chain();
        let cfg = CorpusConfig {
            l_max: 2,
            walks: 40,
            t_chunk: 8,
            seed: 5,
            length: WalkLength::Fixed,
        };
        let c = TokenCorpus::generate(&g, &cfg).unwrap();
        assert!(c.num_chunks() > 0);
        assert!(c
            .chunks()
            .all(|ch| ch.len() == 8 && !ch.contains(&c.vocab().pad())));
        let back = TokenCorpus::from_bytes(&c.to_bytes().unwrap()).unwrap();
        assert_eq!(back, c);
        let again = TokenCorpus::generate(&g, &cfg).unwrap();
        assert_eq!(again.to_bytes().unwrap(), c.to_bytes().unwrap());
    }
}
