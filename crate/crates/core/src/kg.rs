//! Interned knowledge graphs and train/test splits.

use std::collections::{HashMap, HashSet};
use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct EntityId(pub u32);

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct RelationId(pub u32);

impl EntityId {
    #[inline]
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

impl RelationId {
    #[inline]
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

impl fmt::Display for EntityId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "e{}", self.0)
    }
}

impl fmt::Display for RelationId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "r{}", self.0)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Triple {
    pub head: EntityId,
    pub relation: RelationId,
    pub tail: EntityId,
}

impl Triple {
    pub fn new(head: EntityId, relation: RelationId, tail: EntityId) -> Self {
        Self {
            head,
            relation,
            tail,
        }
    }
}

/// One outgoing edge of an entity: `(relation, tail)`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Edge {
    pub relation: RelationId,
    pub tail: EntityId,
}

/// Bidirectional string table with contiguous ids in first-appearance order.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(from = "Vec<String>", into = "Vec<String>")]
pub struct Interner {
    names: Vec<String>,
    index: HashMap<String, u32>,
}

impl From<Vec<String>> for Interner {
    fn from(names: Vec<String>) -> Self {
        let index = names
            .iter()
            .enumerate()
            .map(|(i, n)| (n.clone(), i as u32))
            .collect();
        Self { names, index }
    }
}

impl From<Interner> for Vec<String> {
    fn from(i: Interner) -> Self {
        i.names
    }
}

impl Interner {
    pub fn intern(&mut self, name: &str) -> u32 {
        if let Some(&id) = self.index.get(name) {
            return id;
        }
        let id = self.names.len() as u32;
        self.names.push(name.to_owned());
        self.index.insert(name.to_owned(), id);
        id
    }

    pub fn get(&self, name: &str) -> Option<u32> {
        self.index.get(name).copied()
    }

    pub fn name(&self, id: u32) -> Option<&str> {
        self.names.get(id as usize).map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }
}

/// An immutable knowledge graph with a CSR index of outgoing edges.
///
/// Within each head the edges are sorted by `(relation, tail)`, so the edges
/// carrying one relation form a contiguous run.
#[derive(Clone, Debug)]
pub struct KnowledgeGraph {
    entities: Interner,
    relations: Interner,
    triples: Vec<Triple>,
    members: HashSet<Triple>,
    offsets: Vec<usize>,
    edges: Vec<Edge>,
    inverse_base: Option<u32>,
}

impl PartialEq for KnowledgeGraph {
    fn eq(&self, other: &Self) -> bool {
        self.entities == other.entities
            && self.relations == other.relations
            && self.triples == other.triples
            && self.inverse_base == other.inverse_base
    }
}

#[derive(Serialize, Deserialize)]
struct Snapshot {
    entities: Interner,
    relations: Interner,
    triples: Vec<[u32; 3]>,
    inverse_base: Option<u32>,
}

impl KnowledgeGraph {
    /// Builds a graph from already-interned triples. Duplicates are dropped,
    /// keeping the first occurrence; the number dropped is returned alongside.
    pub fn from_parts(
        entities: Interner,
        relations: Interner,
        triples: impl IntoIterator<Item = Triple>,
    ) -> Result<(Self, usize)> {
        let mut members = HashSet::new();
        let mut kept = Vec::new();
        let mut duplicates = 0;
        for t in triples {
            check_range("entity", t.head.index(), entities.len())?;
            check_range("entity", t.tail.index(), entities.len())?;
            check_range("relation", t.relation.index(), relations.len())?;
            if members.insert(t) {
                kept.push(t);
            } else {
                duplicates += 1;
            }
        }
        let graph = Self::index(entities, relations, kept, members, None);
        Ok((graph, duplicates))
    }

    fn index(
        entities: Interner,
        relations: Interner,
        triples: Vec<Triple>,
        members: HashSet<Triple>,
        inverse_base: Option<u32>,
    ) -> Self {
        let n = entities.len();
        let mut offsets = vec![0usize; n + 1];
        for t in &triples {
            offsets[t.head.index() + 1] += 1;
        }
        for i in 0..n {
            offsets[i + 1] += offsets[i];
        }
        let mut fill = offsets.clone();
        let mut edges = vec![
            Edge {
                relation: RelationId(0),
                tail: EntityId(0)
            };
            triples.len()
        ];
        for t in &triples {
            let slot = &mut fill[t.head.index()];
            edges[*slot] = Edge {
                relation: t.relation,
                tail: t.tail,
            };
            *slot += 1;
        }
        for e in 0..n {
            edges[offsets[e]..offsets[e + 1]].sort_unstable();
        }
        Self {
            entities,
            relations,
            triples,
            members,
            offsets,
            edges,
            inverse_base,
        }
    }

    pub fn entity_count(&self) -> usize {
        self.entities.len()
    }

    pub fn relation_count(&self) -> usize {
        self.relations.len()
    }

    pub fn triple_count(&self) -> usize {
        self.triples.len()
    }

    /// Triples in first-appearance order.
    pub fn triples(&self) -> &[Triple] {
        &self.triples
    }

    pub fn contains(&self, t: &Triple) -> bool {
        self.members.contains(t)
    }

    pub fn entities(&self) -> &Interner {
        &self.entities
    }

    pub fn relations(&self) -> &Interner {
        &self.relations
    }

    pub fn entity_name(&self, e: EntityId) -> &str {
        self.entities.name(e.0).unwrap_or("?")
    }

    pub fn relation_name(&self, r: RelationId) -> &str {
        self.relations.name(r.0).unwrap_or("?")
    }

    pub fn entity_id(&self, name: &str) -> Option<EntityId> {
        self.entities.get(name).map(EntityId)
    }

    pub fn relation_id(&self, name: &str) -> Option<RelationId> {
        self.relations.get(name).map(RelationId)
    }

    /// `C(e)`: the outgoing edges of `e`, sorted by `(relation, tail)`.
    pub fn outgoing(&self, e: EntityId) -> Result<&[Edge]> {
        check_range("entity", e.index(), self.entity_count())?;
        Ok(self.edges_of(e))
    }

    /// Unchecked variant of [`outgoing`](Self::outgoing) for hot loops.
    #[inline]
    pub fn edges_of(&self, e: EntityId) -> &[Edge] {
        let i = e.index();
        &self.edges[self.offsets[i]..self.offsets[i + 1]]
    }

    #[inline]
    pub fn out_degree(&self, e: EntityId) -> usize {
        let i = e.index();
        self.offsets[i + 1] - self.offsets[i]
    }

    /// Outgoing edges of `e` labelled `r`.
    #[inline]
    pub fn edges_with_relation(&self, e: EntityId, r: RelationId) -> &[Edge] {
        let edges = self.edges_of(e);
        let lo = edges.partition_point(|x| x.relation < r);
        let hi = lo + edges[lo..].partition_point(|x| x.relation == r);
        &edges[lo..hi]
    }

    pub fn has_edges(&self) -> bool {
        !self.edges.is_empty()
    }

    /// Relations `>= base` are inverse copies, when present.
    pub fn inverse_base(&self) -> Option<u32> {
        self.inverse_base
    }

    /// Adds `(t, inv(r), h)` for every `(h, r, t)`. Applying it to an already
    /// augmented graph returns an unchanged copy.
    pub fn add_inverse_relations(&self) -> KnowledgeGraph {
        if self.inverse_base.is_some() {
            return self.clone();
        }
        let base = self.relation_count() as u32;
        let mut relations = self.relations.clone();
        for name in self.relations.names() {
            relations.intern(&format!("{name}^-1"));
        }
        let mut triples = self.triples.clone();
        let mut members = self.members.clone();
        for t in &self.triples {
            let inv = Triple::new(t.tail, RelationId(t.relation.0 + base), t.head);
            if members.insert(inv) {
                triples.push(inv);
            }
        }
        Self::index(
            self.entities.clone(),
            relations,
            triples,
            members,
            Some(base),
        )
    }

    /// Returns the subset of triples whose relation is `r`.
    pub fn triples_with_relation(&self, r: RelationId) -> impl Iterator<Item = &Triple> {
        self.triples.iter().filter(move |t| t.relation == r)
    }

    pub fn to_json(&self) -> Result<String> {
        let snap = Snapshot {
            entities: self.entities.clone(),
            relations: self.relations.clone(),
            triples: self
                .triples
                .iter()
                .map(|t| [t.head.0, t.relation.0, t.tail.0])
                .collect(),
            inverse_base: self.inverse_base,
        };
        Ok(serde_json::to_string(&snap)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let snap: Snapshot = serde_json::from_str(s)?;
        let triples = snap
            .triples
            .iter()
            .map(|&[h, r, t]| Triple::new(EntityId(h), RelationId(r), EntityId(t)));
        let (mut g, _) = Self::from_parts(snap.entities, snap.relations, triples)?;
        g.inverse_base = snap.inverse_base;
        Ok(g)
    }

    pub fn save_snapshot(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()?).map_err(|e| Error::io(path, e))
    }

    pub fn load_snapshot(path: &Path) -> Result<Self> {
        let s = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&s)
    }

    /// Vocabulary as TSV: `kind id name`.
    pub fn write_vocab_tsv(&self, path: &Path) -> Result<()> {
        let f = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = BufWriter::new(f);
        let io = |e| Error::io(path, e);
        writeln!(w, "kind\tid\tname").map_err(io)?;
        for (i, n) in self.entities.names().iter().enumerate() {
            writeln!(w, "entity\t{i}\t{n}").map_err(io)?;
        }
        for (i, n) in self.relations.names().iter().enumerate() {
            writeln!(w, "relation\t{i}\t{n}").map_err(io)?;
        }
        w.flush().map_err(io)
    }

    /// Writes triples as `head<TAB>relation<TAB>tail` lines.
    pub fn write_triples_tsv(&self, triples: &[Triple], path: &Path) -> Result<()> {
        let f = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = BufWriter::new(f);
        for t in triples {
            writeln!(
                w,
                "{}\t{}\t{}",
                self.entity_name(t.head),
                self.relation_name(t.relation),
                self.entity_name(t.tail)
            )
            .map_err(|e| Error::io(path, e))?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }
}

fn check_range(kind: &'static str, id: usize, size: usize) -> Result<()> {
    if id >= size {
        return Err(Error::OutOfRange { kind, id, size });
    }
    Ok(())
}

/// What to do with an evaluation triple whose symbols never occur in training.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum UnknownPolicy {
    /// Drop the line and count it.
    #[default]
    Skip,
    Error,
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize)]
pub struct LoadReport {
    pub duplicate_train: usize,
    pub rejected_test: usize,
    pub rejected_valid: usize,
    /// Evaluation triples already present in the training graph (dropped).
    pub test_in_train: usize,
}

#[derive(Clone, Debug)]
pub struct DatasetSplit {
    pub graph: KnowledgeGraph,
    pub test: Vec<Triple>,
    pub valid: Option<Vec<Triple>>,
    pub report: LoadReport,
}

type RawTriple = (usize, String, String, String);

fn read_raw(path: &Path) -> Result<Vec<RawTriple>> {
    let f = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(f).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        let line = line.trim_end_matches('\r');
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() != 3 || fields.iter().any(|f| f.is_empty()) {
            return Err(Error::Parse {
                path: path.to_owned(),
                line: i + 1,
                message: format!("expected 3 tab-separated fields, got {:?}", line),
            });
        }
        out.push((
            i + 1,
            fields[0].to_owned(),
            fields[1].to_owned(),
            fields[2].to_owned(),
        ));
    }
    Ok(out)
}

/// Reads a triple file into a fresh graph (ids in first-appearance order).
pub fn load_graph(path: &Path) -> Result<(KnowledgeGraph, usize)> {
    let raw = read_raw(path)?;
    let mut entities = Interner::default();
    let mut relations = Interner::default();
    let triples: Vec<Triple> = raw
        .iter()
        .map(|(_, h, r, t)| {
            let h = EntityId(entities.intern(h));
            let r = RelationId(relations.intern(r));
            let t = EntityId(entities.intern(t));
            Triple::new(h, r, t)
        })
        .collect();
    KnowledgeGraph::from_parts(entities, relations, triples)
}

fn resolve_eval(
    graph: &KnowledgeGraph,
    path: &Path,
    policy: UnknownPolicy,
    rejected: &mut usize,
    in_train: &mut usize,
) -> Result<Vec<Triple>> {
    let mut out = Vec::new();
    let mut seen = HashSet::new();
    for (line, h, r, t) in read_raw(path)? {
        let lookup = (
            graph.entity_id(&h).ok_or(("entity", &h)),
            graph.relation_id(&r).ok_or(("relation", &r)),
            graph.entity_id(&t).ok_or(("entity", &t)),
        );
        let triple = match lookup {
            (Ok(h), Ok(r), Ok(t)) => Triple::new(h, r, t),
            (Err((kind, name)), _, _) | (_, Err((kind, name)), _) | (_, _, Err((kind, name))) => {
                match policy {
                    UnknownPolicy::Skip => {
                        *rejected += 1;
                        continue;
                    }
                    UnknownPolicy::Error => {
                        return Err(Error::UnknownSymbol {
                            path: path.to_owned(),
                            line,
                            kind,
                            name: name.clone(),
                        })
                    }
                }
            }
        };
        if graph.contains(&triple) {
            *in_train += 1;
            continue;
        }
        if seen.insert(triple) {
            out.push(triple);
        }
    }
    Ok(out)
}

/// Loads a train/test(/valid) split sharing the training vocabulary.
pub fn load_split(
    train: &Path,
    test: &Path,
    valid: Option<&Path>,
    policy: UnknownPolicy,
) -> Result<DatasetSplit> {
    let (graph, duplicate_train) = load_graph(train)?;
    let mut report = LoadReport {
        duplicate_train,
        ..LoadReport::default()
    };
    if duplicate_train > 0 {
        log::warn!(
            "{}: dropped {duplicate_train} duplicate triples",
            train.display()
        );
    }
    let test = resolve_eval(
        &graph,
        test,
        policy,
        &mut report.rejected_test,
        &mut report.test_in_train,
    )?;
    let valid = valid
        .map(|p| {
            resolve_eval(
                &graph,
                p,
                policy,
                &mut report.rejected_valid,
                &mut report.test_in_train,
            )
        })
        .transpose()?;
    if report.rejected_test + report.rejected_valid > 0 {
        log::warn!(
            "rejected {} test / {} valid triples with symbols unseen in training",
            report.rejected_test,
            report.rejected_valid
        );
    }
    Ok(DatasetSplit {
        graph,
        test,
        valid,
        report,
    })
}

/// Small helper for building graphs in code and tests from surface names.
#[derive(Default)]
pub struct GraphBuilder {
    entities: Interner,
    relations: Interner,
    triples: Vec<Triple>,
}

impl GraphBuilder {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn entity(&mut self, name: &str) -> EntityId {
        EntityId(self.entities.intern(name))
    }

    pub fn relation(&mut self, name: &str) -> RelationId {
        RelationId(self.relations.intern(name))
    }

    pub fn add(&mut self, head: &str, relation: &str, tail: &str) -> Triple {
        let h = self.entity(head);
        let r = self.relation(relation);
        let t = self.entity(tail);
        let triple = Triple::new(h, r, t);
        self.triples.push(triple);
        triple
    }

    pub fn build(self) -> KnowledgeGraph {
        KnowledgeGraph::from_parts(self.entities, self.relations, self.triples)
            .expect("builder ids are always in range")
            .0
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn write(dir: &Path, name: &str, body: &str) -> std::path::PathBuf {
        let p = dir.join(name);
        let mut f = File::create(&p).unwrap();
        f.write_all(body.as_bytes()).unwrap();
        p
    }

    #[test]
    fn two_line_file() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(dir.path(), "train.txt", "A\tr\tB\nB\tr\tC\n");
        let (g, dups) = load_graph(&p).unwrap();
        assert_eq!(dups, 0);
        assert_eq!(g.entity_count(), 3);
        assert_eq!(g.relation_count(), 1);
        let a = g.entity_id("A").unwrap();
        let edges = g.outgoing(a).unwrap();
        assert_eq!(
            edges,
            &[Edge {
                relation: g.relation_id("r").unwrap(),
                tail: g.entity_id("B").unwrap()
            }]
        );
        // first-appearance ids
        assert_eq!(g.entity_id("A"), Some(EntityId(0)));
        assert_eq!(g.entity_id("B"), Some(EntityId(1)));
        assert_eq!(g.entity_id("C"), Some(EntityId(2)));
    }

    #[test]
    fn malformed_line_reports_line_number() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(dir.path(), "train.txt", "A\tr\tB\nB r C\n");
        match load_graph(&p) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 2),
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn duplicates_are_counted() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(dir.path(), "train.txt", "A\tr\tB\nA\tr\tB\nB\tr\tC\n");
        let (g, dups) = load_graph(&p).unwrap();
        assert_eq!(dups, 1);
        assert_eq!(g.triple_count(), 2);
    }

    #[test]
    fn unknown_policy() {
        let dir = tempfile::tempdir().unwrap();
        let train = write(dir.path(), "train.txt", "A\tr\tB\n");
        let test = write(dir.path(), "test.txt", "B\tr\tA\nA\tr\tZ\n");
        let split = load_split(&train, &test, None, UnknownPolicy::Skip).unwrap();
        assert_eq!(split.test.len(), 1);
        assert_eq!(split.report.rejected_test, 1);
        match load_split(&train, &test, None, UnknownPolicy::Error) {
            Err(Error::UnknownSymbol { line, name, .. }) => {
                assert_eq!(line, 2);
                assert_eq!(name, "Z");
            }
            other => panic!("expected unknown-symbol error, got {other:?}"),
        }
    }

    #[test]
    fn sink_and_fan() {
        let mut b = GraphBuilder::new();
        b.add("A", "r1", "B");
        b.add("A", "r2", "C");
        let g = b.build();
        assert_eq!(g.outgoing(g.entity_id("A").unwrap()).unwrap().len(), 2);
        assert!(g.outgoing(g.entity_id("B").unwrap()).unwrap().is_empty());
        assert!(matches!(
            g.outgoing(EntityId(9)),
            Err(Error::OutOfRange { .. })
        ));
    }

    #[test]
    fn inverse_relations() {
        let mut b = GraphBuilder::new();
        b.add("A", "r", "B");
        let g = b.build();
        let inv = g.add_inverse_relations();
        assert_eq!(inv.triple_count(), 2);
        assert_eq!(inv.relation_count(), 2);
        assert_eq!(inv.add_inverse_relations(), inv);
        let b_id = inv.entity_id("B").unwrap();
        assert_eq!(
            inv.outgoing(b_id).unwrap()[0].tail,
            inv.entity_id("A").unwrap()
        );
    }

    #[test]
    fn edges_with_relation_is_a_contiguous_run() {
        let mut b = GraphBuilder::new();
        b.add("A", "r2", "C");
        b.add("A", "r1", "B");
        b.add("A", "r2", "D");
        b.add("A", "r3", "B");
        let g = b.build();
        let a = g.entity_id("A").unwrap();
        let r2 = g.relation_id("r2").unwrap();
        let run = g.edges_with_relation(a, r2);
        assert_eq!(run.len(), 2);
        assert!(run.iter().all(|e| e.relation == r2));
        let r9 = RelationId(7);
        assert!(g.edges_with_relation(a, r9).is_empty());
    }

    #[test]
    fn snapshot_round_trip() {
        let mut b = GraphBuilder::new();
        b.add("A", "r", "B");
        b.add("B", "s", "C");
        let g = b.build().add_inverse_relations();
        let back = KnowledgeGraph::from_json(&g.to_json().unwrap()).unwrap();
        assert_eq!(back, g);
        assert_eq!(back.inverse_base(), Some(2));
    }
}
