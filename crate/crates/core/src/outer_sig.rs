//! Per-CSP additive signature trees.
//!
//! Each CSP keeps a table layer whose leaves are table signatures, and one
//! record layer per table whose leaves are record signatures `HF*_i(bytes)`.
//! Every internal node holds the mod-`p` sum of its children, and a table
//! leaf holds the empty-table marker plus its record layer's root. Trees are
//! append-only: positions never move, so an update is a delta pushed up the
//! ancestor chain.

use std::collections::HashMap;
use std::fmt;

use crate::error::{Error, Result};
use crate::field::{Fe, PrimeField};

/// A w-ary append-only sum tree. `levels[0]` holds the leaves; the last
/// level holds the root once there is at least one leaf.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct AppendTree {
    w: usize,
    levels: Vec<Vec<Fe>>,
}

impl AppendTree {
    pub fn new(w: usize) -> Self {
        assert!(w >= 2, "arity must be at least 2");
        Self { w, levels: Vec::new() }
    }

    pub fn arity(&self) -> usize {
        self.w
    }

    pub fn len(&self) -> usize {
        self.levels.first().map_or(0, Vec::len)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Number of levels above the leaves.
    pub fn depth(&self) -> usize {
        self.levels.len().saturating_sub(1)
    }

    pub fn root(&self) -> Fe {
        self.levels.last().map_or(Fe::ZERO, |l| l[0])
    }

    pub fn leaf(&self, pos: usize) -> Option<Fe> {
        self.levels.first().and_then(|l| l.get(pos)).copied()
    }

    pub fn leaves(&self) -> &[Fe] {
        self.levels.first().map_or(&[], Vec::as_slice)
    }

    pub fn node(&self, level: usize, index: usize) -> Option<Fe> {
        self.levels.get(level).and_then(|l| l.get(index)).copied()
    }

    pub fn level_len(&self, level: usize) -> usize {
        self.levels.get(level).map_or(0, Vec::len)
    }

    /// Appends a leaf and returns its position.
    pub fn push(&mut self, field: &PrimeField, v: Fe) -> usize {
        if self.levels.is_empty() {
            self.levels.push(vec![v]);
            return 0;
        }
        self.levels[0].push(v);
        let pos = self.levels[0].len() - 1;
        let mut idx = pos;
        let mut l = 0;
        loop {
            if l + 1 == self.levels.len() {
                if self.levels[l].len() > 1 {
                    let parents = self.levels[l].chunks(self.w).map(|c| field.sum(c.iter().copied())).collect();
                    self.levels.push(parents);
                }
                break;
            }
            let parent = idx / self.w;
            let up = &mut self.levels[l + 1];
            if parent == up.len() {
                up.push(v);
            } else {
                up[parent] = field.add(up[parent], v);
            }
            idx = parent;
            l += 1;
        }
        pos
    }

    /// Adds `delta` to leaf `pos` and all its ancestors.
    pub fn add_at(&mut self, field: &PrimeField, pos: usize, delta: Fe) -> Result<()> {
        if pos >= self.len() {
            return Err(Error::UnknownRecordPosition { table: String::new(), position: pos });
        }
        let mut idx = pos;
        for level in &mut self.levels {
            level[idx] = field.add(level[idx], delta);
            idx /= self.w;
        }
        Ok(())
    }

    pub fn from_leaves(field: &PrimeField, w: usize, leaves: impl IntoIterator<Item = Fe>) -> Self {
        let mut t = Self::new(w);
        for v in leaves {
            t.push(field, v);
        }
        t
    }

    /// `(level, index, value)` triples in level order.
    pub fn triples(&self) -> impl Iterator<Item = (usize, usize, Fe)> + '_ {
        self.levels.iter().enumerate().flat_map(|(l, nodes)| nodes.iter().enumerate().map(move |(i, &v)| (l, i, v)))
    }

    /// Rebuilds a tree from serialized triples, checking the shape matches
    /// an append-only tree over the same number of leaves.
    pub fn from_triples(w: usize, triples: impl IntoIterator<Item = (usize, usize, Fe)>) -> Result<Self> {
        let mut levels: Vec<Vec<Fe>> = Vec::new();
        for (l, i, v) in triples {
            if l > levels.len() || (l == levels.len() && i != 0) || (l < levels.len() && i != levels[l].len()) {
                return Err(Error::StoreFormat(format!("signature tree node ({l}, {i}) out of order")));
            }
            if l == levels.len() {
                levels.push(Vec::new());
            }
            levels[l].push(v);
        }
        let leaves = levels.first().map_or(0, Vec::len);
        let mut expect = Vec::new();
        let mut len = leaves;
        if len > 0 {
            expect.push(len);
            while len > 1 {
                len = len.div_ceil(w);
                expect.push(len);
            }
        }
        if levels.iter().map(Vec::len).collect::<Vec<_>>() != expect {
            return Err(Error::StoreFormat("signature tree shape does not match its leaf count".into()));
        }
        Ok(Self { w, levels })
    }

    /// True when every internal node equals the sum of its children.
    pub fn sums_hold(&self, field: &PrimeField) -> bool {
        self.levels.windows(2).all(|pair| {
            pair[1].iter().enumerate().all(|(i, &v)| {
                let kids = &pair[0][i * self.w..((i + 1) * self.w).min(pair[0].len())];
                field.sum(kids.iter().copied()) == v
            })
        })
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
struct TableEntry {
    name: String,
    marker: Fe,
    records: AppendTree,
}

/// The whole signature tree of one CSP.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SignatureTree {
    w: usize,
    tables: AppendTree,
    entries: Vec<TableEntry>,
    by_name: HashMap<String, usize>,
}

/// Which part of a tree to verify.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum VerifyScope {
    Whole,
    Table(String),
    Record { table: String, position: usize },
}

/// One node found inconsistent during verification.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct BreachPath {
    pub table: Option<String>,
    /// Table-layer `(level, index)` steps from the root, then record-layer steps.
    pub steps: Vec<(Layer, usize, usize)>,
    /// Record position when the breach reaches a leaf.
    pub position: Option<usize>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Layer {
    Table,
    Record,
}

impl fmt::Display for BreachPath {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let steps: Vec<String> = self
            .steps
            .iter()
            .map(|(layer, l, i)| {
                let tag = match layer {
                    Layer::Table => "T",
                    Layer::Record => "R",
                };
                format!("{tag}{l}.{i}")
            })
            .collect();
        write!(f, "{}", steps.join(" > "))?;
        match (&self.table, self.position) {
            (Some(t), Some(p)) => write!(f, " => {t}#{p}"),
            (Some(t), None) => write!(f, " => {t}"),
            _ => Ok(()),
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct VerifyReport {
    pub breaches: Vec<BreachPath>,
    /// Root comparisons (always one per verified scope).
    pub root_checks: usize,
    /// Nodes compared below the scope root.
    pub inspected: usize,
    /// Levels below the scope root.
    pub depth: usize,
}

impl VerifyReport {
    pub fn is_ok(&self) -> bool {
        self.breaches.is_empty()
    }
}

impl SignatureTree {
    pub fn new(w: usize) -> Result<Self> {
        if w < 2 {
            return Err(Error::InvalidConfig(format!("tree arity w = {w} must be at least 2")));
        }
        Ok(Self { w, tables: AppendTree::new(w), entries: Vec::new(), by_name: HashMap::new() })
    }

    pub fn arity(&self) -> usize {
        self.w
    }

    pub fn root(&self) -> Fe {
        self.tables.root()
    }

    pub fn table_names(&self) -> impl Iterator<Item = &str> {
        self.entries.iter().map(|e| e.name.as_str())
    }

    pub fn has_table(&self, table: &str) -> bool {
        self.by_name.contains_key(table)
    }

    pub fn table_layer(&self) -> &AppendTree {
        &self.tables
    }

    pub fn record_layer(&self, table: &str) -> Result<&AppendTree> {
        Ok(&self.entries[self.index(table)?].records)
    }

    pub fn marker(&self, table: &str) -> Result<Fe> {
        Ok(self.entries[self.index(table)?].marker)
    }

    fn index(&self, table: &str) -> Result<usize> {
        self.by_name.get(table).copied().ok_or_else(|| Error::UnknownTable(table.to_string()))
    }

    /// Adds a table leaf holding `marker` (the empty-table signature).
    pub fn create_table(&mut self, field: &PrimeField, table: &str, marker: Fe) -> Result<()> {
        if self.by_name.contains_key(table) {
            return Err(Error::DuplicateTable(table.to_string()));
        }
        let pos = self.tables.push(field, marker);
        debug_assert_eq!(pos, self.entries.len());
        self.by_name.insert(table.to_string(), pos);
        self.entries.push(TableEntry { name: table.to_string(), marker, records: AppendTree::new(self.w) });
        Ok(())
    }

    /// Appends a record signature and returns its position.
    pub fn insert_record(&mut self, field: &PrimeField, table: &str, sig: Fe) -> Result<usize> {
        let t = self.index(table)?;
        let pos = self.entries[t].records.push(field, sig);
        self.tables.add_at(field, t, sig)?;
        Ok(pos)
    }

    /// Replaces the signature at `position`, pushing the delta to the root.
    pub fn update_record(&mut self, field: &PrimeField, table: &str, position: usize, sig: Fe) -> Result<()> {
        let t = self.index(table)?;
        let old = self.entries[t]
            .records
            .leaf(position)
            .ok_or_else(|| Error::UnknownRecordPosition { table: table.to_string(), position })?;
        let delta = field.sub(sig, old);
        if delta == Fe::ZERO {
            return Ok(());
        }
        self.entries[t].records.add_at(field, position, delta)?;
        self.tables.add_at(field, t, delta)
    }

    pub fn record_sig(&self, table: &str, position: usize) -> Result<Fe> {
        self.entries[self.index(table)?]
            .records
            .leaf(position)
            .ok_or_else(|| Error::UnknownRecordPosition { table: table.to_string(), position })
    }

    /// Replaces a table's whole record layer, e.g. after recovery.
    pub fn replace_table(&mut self, field: &PrimeField, table: &str, sigs: impl IntoIterator<Item = Fe>) -> Result<()> {
        let t = self.index(table)?;
        let fresh = AppendTree::from_leaves(field, self.w, sigs);
        let delta = field.sub(fresh.root(), self.entries[t].records.root());
        self.entries[t].records = fresh;
        self.tables.add_at(field, t, delta)
    }

    /// Builds the tree a CSP should hold for the given tables and record
    /// signatures, in table order.
    pub fn rebuild<'a>(
        field: &PrimeField,
        w: usize,
        tables: impl IntoIterator<Item = (&'a str, Fe, Vec<Fe>)>,
    ) -> Result<Self> {
        let mut tree = Self::new(w)?;
        for (name, marker, sigs) in tables {
            tree.create_table(field, name, marker)?;
            tree.replace_table(field, name, sigs)?;
        }
        Ok(tree)
    }

    /// Checks every internal node against its children, and every table leaf
    /// against marker + record root.
    pub fn sums_hold(&self, field: &PrimeField) -> bool {
        self.tables.sums_hold(field)
            && self.entries.iter().enumerate().all(|(i, e)| {
                e.records.sums_hold(field) && self.tables.leaf(i) == Some(field.add(e.marker, e.records.root()))
            })
    }

    /// Compares this (stored) tree against `shadow`, built from freshly
    /// recomputed record signatures, descending only into mismatching nodes.
    pub fn verify_against(&self, shadow: &SignatureTree, scope: &VerifyScope) -> Result<VerifyReport> {
        let mut report = VerifyReport { root_checks: 1, ..Default::default() };
        match scope {
            VerifyScope::Whole => {
                report.depth = self.tables.depth() + self.max_record_depth();
                if self.root() == shadow.root() && self.entries.len() == shadow.entries.len() {
                    return Ok(report);
                }
                let top = self.tables.depth();
                if self.tables.is_empty() {
                    return Ok(report);
                }
                let mut path = vec![(Layer::Table, top, 0)];
                self.descend_tables(shadow, top, 0, &mut path, &mut report)?;
            }
            VerifyScope::Table(name) => {
                let t = self.index(name)?;
                let e = &self.entries[t];
                report.depth = record_depth(&e.records);
                if self.tables.leaf(t) == shadow.tables.leaf(t) {
                    return Ok(report);
                }
                self.descend_records(shadow, t, &mut vec![(Layer::Table, 0, t)], &mut report)?;
            }
            VerifyScope::Record { table, position } => {
                let t = self.index(table)?;
                let mine = self.record_sig(table, *position)?;
                let theirs = shadow.entries.get(t).and_then(|e| e.records.leaf(*position));
                if Some(mine) != theirs {
                    report.breaches.push(BreachPath {
                        table: Some(table.clone()),
                        steps: vec![(Layer::Record, 0, *position)],
                        position: Some(*position),
                    });
                }
            }
        }
        Ok(report)
    }

    fn max_record_depth(&self) -> usize {
        self.entries.iter().map(|e| record_depth(&e.records)).max().unwrap_or(0)
    }

    fn descend_tables(
        &self,
        shadow: &SignatureTree,
        level: usize,
        index: usize,
        path: &mut Vec<(Layer, usize, usize)>,
        report: &mut VerifyReport,
    ) -> Result<()> {
        if level == 0 {
            return self.descend_records(shadow, index, path, report);
        }
        let w = self.w;
        let kids = index * w..((index + 1) * w).min(self.tables.level_len(level - 1));
        let mut any = false;
        for k in kids {
            report.inspected += 1;
            if self.tables.node(level - 1, k) != shadow.tables.node(level - 1, k) {
                any = true;
                path.push((Layer::Table, level - 1, k));
                self.descend_tables(shadow, level - 1, k, path, report)?;
                path.pop();
            }
        }
        if !any {
            report.breaches.push(BreachPath { table: None, steps: path.clone(), position: None });
        }
        Ok(())
    }

    fn descend_records(
        &self,
        shadow: &SignatureTree,
        t: usize,
        path: &mut Vec<(Layer, usize, usize)>,
        report: &mut VerifyReport,
    ) -> Result<()> {
        let mine = &self.entries[t];
        let Some(theirs) = shadow.entries.get(t) else {
            report.breaches.push(BreachPath { table: Some(mine.name.clone()), steps: path.clone(), position: None });
            return Ok(());
        };
        let before = report.breaches.len();
        if mine.records.len() == theirs.records.len() && !mine.records.is_empty() {
            // the table leaf stands in for the record root
            let top = mine.records.depth();
            if top == 0 {
                report.inspected += 1;
                if mine.records.leaf(0) != theirs.records.leaf(0) {
                    path.push((Layer::Record, 0, 0));
                    report.breaches.push(BreachPath {
                        table: Some(mine.name.clone()),
                        steps: path.clone(),
                        position: Some(0),
                    });
                    path.pop();
                }
            } else {
                self.descend_record_level(&mine.name, &mine.records, &theirs.records, top, 0, path, report);
            }
        }
        if report.breaches.len() == before {
            report.breaches.push(BreachPath { table: Some(mine.name.clone()), steps: path.clone(), position: None });
        }
        Ok(())
    }

    #[allow(clippy::too_many_arguments)]
    fn descend_record_level(
        &self,
        name: &str,
        mine: &AppendTree,
        theirs: &AppendTree,
        level: usize,
        index: usize,
        path: &mut Vec<(Layer, usize, usize)>,
        report: &mut VerifyReport,
    ) {
        let kids = index * self.w..((index + 1) * self.w).min(mine.level_len(level - 1));
        let mut any = false;
        for k in kids {
            report.inspected += 1;
            if mine.node(level - 1, k) != theirs.node(level - 1, k) {
                any = true;
                path.push((Layer::Record, level - 1, k));
                if level == 1 {
                    report.breaches.push(BreachPath {
                        table: Some(name.to_string()),
                        steps: path.clone(),
                        position: Some(k),
                    });
                } else {
                    self.descend_record_level(name, mine, theirs, level - 1, k, path, report);
                }
                path.pop();
            }
        }
        if !any {
            report.breaches.push(BreachPath { table: Some(name.to_string()), steps: path.clone(), position: None });
        }
    }

    /// Table-layer triples and `(name, marker)` pairs for persistence.
    pub fn table_entries(&self) -> impl Iterator<Item = (&str, Fe)> {
        self.entries.iter().map(|e| (e.name.as_str(), e.marker))
    }

    /// Reassembles a tree from its persisted parts.
    pub fn from_parts(w: usize, tables: AppendTree, records: Vec<(String, Fe, AppendTree)>) -> Result<Self> {
        if tables.len() != records.len() {
            return Err(Error::StoreFormat("table layer and table list disagree".into()));
        }
        let mut by_name = HashMap::new();
        let mut entries = Vec::with_capacity(records.len());
        for (i, (name, marker, tree)) in records.into_iter().enumerate() {
            if by_name.insert(name.clone(), i).is_some() {
                return Err(Error::DuplicateTable(name));
            }
            entries.push(TableEntry { name, marker, records: tree });
        }
        Ok(Self { w, tables, entries, by_name })
    }
}

/// Levels traversed below a table leaf to reach a record leaf.
fn record_depth(t: &AppendTree) -> usize {
    t.depth().max(usize::from(!t.is_empty()))
}
