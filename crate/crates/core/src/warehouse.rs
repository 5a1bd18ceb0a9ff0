//! A client plus `n` simulated CSPs plus the index server, wired together:
//! loading, reading with reconstruction-group rotation, homomorphic sums,
//! failure and tamper injection, verification and recovery.

use std::collections::{BTreeMap, HashMap};
use std::path::Path;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex};

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::field::Fe;
use crate::keys::Scheme;
use crate::outer_sig::{VerifyReport, VerifyScope};
use crate::schema::{Codec, ColumnType, StoredValue, TableSchema, Value};
use crate::sharing::{
    select_storage_group, share_record, share_value_everywhere, CspSet, PlacementPolicy, Recombiner, ShareBundle,
    StorageGroup, StoredAttr,
};
use crate::store::persist::{self, write_atomic};
use crate::store::{CspStore, IndexServer, LocationEntry, StoredRow};

/// Cap on reconstruction groups tried before giving up on a read.
pub const MAX_ROTATIONS: usize = 256;

/// Deployment parameters.
#[derive(Clone, Debug, PartialEq)]
pub struct WarehouseParams {
    pub p: u64,
    pub n: usize,
    pub t: usize,
    pub seed: Vec<u8>,
    /// Signature tree arity.
    pub w: usize,
    /// Offset added to signed numeric values; `None` picks a default for `p`.
    pub bias: Option<u64>,
    /// Placement weights; uniform when `None`.
    pub weights: Option<Vec<f64>>,
    /// Per-CSP compute price used to rank reconstruction-group candidates.
    pub rg_cost: Option<Vec<f64>>,
}

impl WarehouseParams {
    pub fn new(p: u64, n: usize, t: usize, seed: &[u8]) -> Self {
        Self { p, n, t, seed: seed.to_vec(), w: 3, bias: None, weights: None, rg_cost: None }
    }
}

/// How to pick the `t` CSPs answering a read.
#[derive(Clone, Debug, PartialEq, Eq, Default)]
pub enum RgChoice {
    /// Cheapest alive CSPs first; rotate on integrity failures.
    #[default]
    Auto,
    /// Exactly these CSPs; failed members are replaced, mismatches are errors.
    Fixed(Vec<usize>),
}

#[derive(Debug, Default)]
struct Counters {
    records: AtomicU64,
    chunks: AtomicU64,
    aggregates: AtomicU64,
    rotations: AtomicU64,
    cube_cells: AtomicU64,
}

/// Snapshot of read-side work counters.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct ReadCounts {
    pub records: u64,
    pub chunks: u64,
    pub aggregates: u64,
    pub rotations: u64,
    /// Record reconstructions performed on cube tables.
    pub cube_cells: u64,
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct LoadReport {
    pub inserted: usize,
    pub updated: usize,
    /// Shared records written per CSP (index 0 is CSP 1).
    pub writes: Vec<usize>,
}

pub struct Warehouse {
    params: WarehouseParams,
    scheme: Scheme,
    codec: Codec,
    policy: PlacementPolicy,
    rank: Vec<usize>,
    csps: Vec<CspStore>,
    index: IndexServer,
    counters: Counters,
    recombiners: Mutex<HashMap<Vec<usize>, Arc<Recombiner>>>,
}

impl std::fmt::Debug for Warehouse {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Warehouse").field("n", &self.scheme.n()).field("t", &self.scheme.t()).finish()
    }
}

impl Warehouse {
    pub fn new(params: WarehouseParams) -> Result<Self> {
        let scheme = Scheme::init(params.p, params.n, params.t, &params.seed)?;
        let csps = (1..=params.n).map(|i| CspStore::new(i, params.w)).collect::<Result<Vec<_>>>()?;
        Self::assemble(params, scheme, csps, IndexServer::default())
    }

    fn assemble(params: WarehouseParams, scheme: Scheme, csps: Vec<CspStore>, index: IndexServer) -> Result<Self> {
        let n = params.n;
        let policy = match &params.weights {
            Some(w) if w.len() != n || w.iter().any(|x| !x.is_finite() || *x < 0.0) => {
                return Err(Error::InvalidConfig(format!("placement needs {n} nonnegative weights")));
            }
            Some(w) => PlacementPolicy { weights: w.clone() },
            None => PlacementPolicy::uniform(n),
        };
        let cost = match &params.rg_cost {
            Some(c) if c.len() != n => return Err(Error::InvalidConfig(format!("rg ranking needs {n} prices"))),
            Some(c) => c.clone(),
            None => vec![0.0; n],
        };
        let mut rank: Vec<usize> = (1..=n).collect();
        rank.sort_by(|&a, &b| cost[a - 1].total_cmp(&cost[b - 1]).then(a.cmp(&b)));
        let bias = params.bias.unwrap_or_else(|| Codec::default_bias(params.p));
        if bias >= params.p / 2 {
            return Err(Error::InvalidConfig(format!("bias {bias} must stay below p / 2")));
        }
        let codec = Codec::new(*scheme.field(), bias);
        Ok(Self {
            params,
            scheme,
            codec,
            policy,
            rank,
            csps,
            index,
            counters: Counters::default(),
            recombiners: Mutex::new(HashMap::new()),
        })
    }

    pub fn params(&self) -> &WarehouseParams {
        &self.params
    }
    pub fn scheme(&self) -> &Scheme {
        &self.scheme
    }
    pub fn codec(&self) -> &Codec {
        &self.codec
    }
    pub fn index(&self) -> &IndexServer {
        &self.index
    }
    pub fn csp(&self, i: usize) -> &CspStore {
        &self.csps[i - 1]
    }
    pub fn n(&self) -> usize {
        self.scheme.n()
    }
    pub fn t(&self) -> usize {
        self.scheme.t()
    }

    pub fn read_counts(&self) -> ReadCounts {
        let c = &self.counters;
        ReadCounts {
            records: c.records.load(Ordering::Relaxed),
            chunks: c.chunks.load(Ordering::Relaxed),
            aggregates: c.aggregates.load(Ordering::Relaxed),
            rotations: c.rotations.load(Ordering::Relaxed),
            cube_cells: c.cube_cells.load(Ordering::Relaxed),
        }
    }

    pub fn alive(&self) -> CspSet {
        let mut s = CspSet::empty(self.n());
        for c in self.csps.iter().filter(|c| c.is_alive()) {
            s.insert(c.index());
        }
        s
    }

    /// CSPs in reconstruction-group preference order.
    pub fn ranking(&self) -> &[usize] {
        &self.rank
    }

    fn check_csp(&self, csp: usize) -> Result<()> {
        if csp == 0 || csp > self.n() {
            return Err(Error::OutOfRange(format!("CSP index {csp} outside 1..={}", self.n())));
        }
        Ok(())
    }

    // ---- catalog -------------------------------------------------------

    pub fn create_table(&mut self, schema: TableSchema) -> Result<()> {
        let name = schema.name.clone();
        self.index.register(schema)?;
        for c in self.csps.iter_mut().filter(|c| c.is_alive()) {
            c.create_table(&self.scheme, &name)?;
        }
        Ok(())
    }

    pub fn schema(&self, table: &str) -> Result<&TableSchema> {
        self.index.schema(table)
    }

    /// Adds a Type II index; existing rows are indexed by reconstructing them.
    pub fn add_order_index(&mut self, table: &str, column: &str) -> Result<()> {
        if self.index.is_ordered(table, column) {
            return Ok(());
        }
        let schema = self.schema(table)?.clone();
        let ci = schema.column_index(column).ok_or_else(|| Error::UnknownColumn(format!("{table}.{column}")))?;
        let ty = schema.columns[ci].ty;
        let pks: Vec<u64> = self.index.location(table)?.pks().collect();
        let mut keys = Vec::with_capacity(pks.len());
        for pk in pks {
            let row = self.reconstruct_row(table, pk, &RgChoice::Auto)?;
            keys.push((pk, row[ci].index_key(ty)));
        }
        self.index.add_order_index(table, column)?;
        let idx = self.index.ordered.get_mut(&(table.to_string(), column.to_ascii_lowercase())).expect("added");
        for (pk, k) in keys {
            idx.set(pk, k);
        }
        Ok(())
    }

    /// Registers a Type III derived column. Only allowed before loading.
    pub fn add_derived_column(&mut self, table: &str, kind: crate::schema::Derived) -> Result<()> {
        if !self.index.location(table)?.is_empty() {
            return Err(Error::UnsupportedFeature(format!(
                "derived column {} must be declared before {table} is loaded",
                kind.name()
            )));
        }
        self.index.catalog.get_mut(table).ok_or_else(|| Error::UnknownTable(table.to_string()))?.add_derived(kind)
    }

    // ---- loading -------------------------------------------------------

    /// Shares and stores rows. A row whose key already exists replaces the
    /// old record in place at its original storage group.
    pub fn insert_rows(&mut self, table: &str, rows: Vec<Vec<Value>>) -> Result<LoadReport> {
        let schema = self.schema(table)?.clone();
        let alive = self.alive();
        let loc = self.index.location(table)?;
        let mut groups = Vec::with_capacity(rows.len());
        let mut fresh: HashMap<u64, StorageGroup> = HashMap::new();
        let mut updated = 0;
        for row in &rows {
            let pk = schema.pk_of(row)?;
            let group = if let Some(e) = loc.get(pk) {
                updated += 1;
                if let Some(dead) = e.bitmap.members().find(|&c| !alive.contains(c)) {
                    return Err(Error::CspUnavailable(dead));
                }
                StorageGroup::new(&self.scheme, e.bitmap)?
            } else if let Some(g) = fresh.get(&pk) {
                updated += 1;
                *g
            } else {
                let g = select_storage_group(&self.scheme, table, pk, &self.policy, alive)?;
                fresh.insert(pk, g);
                g
            };
            groups.push(group);
        }
        self.apply_rows(&schema, rows, groups, updated)
    }

    /// Shares one row at an explicitly chosen storage group.
    pub fn insert_row_in_group(&mut self, table: &str, row: Vec<Value>, sg: CspSet) -> Result<LoadReport> {
        let schema = self.schema(table)?.clone();
        let group = StorageGroup::new(&self.scheme, sg)?;
        if let Some(dead) = sg.members().find(|&c| !self.csps[c - 1].is_alive()) {
            return Err(Error::CspUnavailable(dead));
        }
        let pk = schema.pk_of(&row)?;
        let mut updated = 0;
        if let Some(e) = self.index.location(table)?.get(pk) {
            if e.bitmap != sg {
                return Err(Error::InvalidConfig(format!("key {pk} already lives at {}", e.bitmap)));
            }
            updated = 1;
        }
        self.apply_rows(&schema, vec![row], vec![group], updated)
    }

    fn apply_rows(
        &mut self,
        schema: &TableSchema,
        rows: Vec<Vec<Value>>,
        groups: Vec<StorageGroup>,
        updated: usize,
    ) -> Result<LoadReport> {
        let (scheme, codec) = (&self.scheme, &self.codec);
        let bundles: Vec<(ShareBundle, Vec<StoredValue>)> = rows
            .par_iter()
            .zip(groups.par_iter())
            .map(|(row, g)| Ok((share_record(scheme, codec, schema, row, g)?, schema.stored_values(row)?)))
            .collect::<Result<_>>()?;
        let mut report = LoadReport { inserted: rows.len() - updated, updated, writes: vec![0; self.n()] };
        let stored = schema.stored_columns();
        let ordered: Vec<(String, usize, ColumnType)> = self
            .index
            .order_columns(&schema.name)
            .into_iter()
            .map(|c| {
                let i = schema.column_index(&c).expect("indexed columns exist");
                (c, i, schema.columns[i].ty)
            })
            .collect();
        for ((bundle, values), row) in bundles.into_iter().zip(&rows) {
            for (csp, attrs) in bundle.parts {
                self.csps[csp - 1].put_shared_record(&self.scheme, &schema.name, bundle.pk, attrs)?;
                report.writes[csp - 1] += 1;
            }
            let keys = values
                .iter()
                .zip(&stored)
                .map(|(v, c)| match (v, c.ty) {
                    (StoredValue::Plain(Value::Key(k)), ColumnType::ForeignKey) => Some(*k),
                    _ => None,
                })
                .collect();
            let nulls = values.iter().map(|v| matches!(v, StoredValue::Plain(Value::Null))).collect();
            let loc = self.index.locations.get_mut(&schema.name).expect("registered");
            loc.entries.insert(bundle.pk, LocationEntry { bitmap: bundle.bitmap, keys, nulls });
            for (col, i, ty) in &ordered {
                let idx = self.index.ordered.get_mut(&(schema.name.clone(), col.clone())).expect("listed");
                idx.set(bundle.pk, row[*i].index_key(*ty));
            }
        }
        Ok(report)
    }

    /// Stores values shared at all `n` CSPs (cube rows). `cells[c]` is the
    /// raw field encoding of stored column `c`, or `None` for null.
    pub fn put_everywhere(&mut self, table: &str, pk: u64, keys: &[Option<u64>], cells: &[Option<Fe>]) -> Result<()> {
        let schema = self.schema(table)?.clone();
        let stored = schema.stored_columns();
        if keys.len() != stored.len() || cells.len() != stored.len() {
            return Err(Error::SchemaMismatch(format!("{table} stores {} columns", stored.len())));
        }
        if let Some(dead) = (1..=self.n()).find(|&c| !self.csps[c - 1].is_alive()) {
            return Err(Error::CspUnavailable(dead));
        }
        let mut per_csp: Vec<Vec<StoredAttr>> = vec![Vec::with_capacity(stored.len()); self.n()];
        for (ci, col) in stored.iter().enumerate() {
            if col.ty == ColumnType::ForeignKey {
                let a = keys[ci].map_or(StoredAttr::Null, StoredAttr::Key);
                per_csp.iter_mut().for_each(|p| p.push(a.clone()));
                continue;
            }
            match cells[ci] {
                None => per_csp.iter_mut().for_each(|p| p.push(StoredAttr::Null)),
                Some(d) => {
                    let seed = [table.as_bytes(), b"/", &pk.to_be_bytes(), &(ci as u64).to_be_bytes()].concat();
                    let shares = share_value_everywhere(&self.scheme, d, &seed)?;
                    for (p, s) in per_csp.iter_mut().zip(shares) {
                        p.push(StoredAttr::Shares(vec![s]));
                    }
                }
            }
        }
        for (i, attrs) in per_csp.into_iter().enumerate() {
            self.csps[i].put_shared_record(&self.scheme, table, pk, attrs)?;
        }
        let nulls = stored
            .iter()
            .enumerate()
            .map(|(ci, c)| if c.ty == ColumnType::ForeignKey { keys[ci].is_none() } else { cells[ci].is_none() })
            .collect();
        let bitmap = CspSet::full(self.n());
        let loc = self.index.locations.get_mut(table).expect("registered");
        loc.entries.insert(pk, LocationEntry { bitmap, keys: keys.to_vec(), nulls });
        Ok(())
    }

    /// Re-shares one column of a record stored everywhere. `nonce` keeps the
    /// filler points of successive versions independent.
    pub fn set_everywhere(&mut self, table: &str, pk: u64, column: usize, cell: Option<Fe>, nonce: &[u8]) -> Result<()> {
        if let Some(dead) = (1..=self.n()).find(|&c| !self.csps[c - 1].is_alive()) {
            return Err(Error::CspUnavailable(dead));
        }
        if self.index.location(table)?.get(pk).is_none() {
            return Err(Error::UnknownRecord { table: table.to_string(), pk });
        }
        let shares = match cell {
            None => None,
            Some(d) => {
                let seed = [table.as_bytes(), b"/", &pk.to_be_bytes(), &(column as u64).to_be_bytes(), b"/", nonce].concat();
                Some(share_value_everywhere(&self.scheme, d, &seed)?)
            }
        };
        for i in 1..=self.n() {
            let row = self.csps[i - 1].get_shared_record(table, pk)?.clone();
            let mut attrs = row.attrs;
            let slot = attrs
                .get_mut(column)
                .ok_or_else(|| Error::SchemaMismatch(format!("{table} has no stored column {column}")))?;
            *slot = shares.as_ref().map_or(StoredAttr::Null, |s| StoredAttr::Shares(vec![s[i - 1]]));
            self.csps[i - 1].put_shared_record(&self.scheme, table, pk, attrs)?;
        }
        let loc = self.index.locations.get_mut(table).expect("registered");
        loc.entries.get_mut(&pk).expect("checked above").nulls[column] = cell.is_none();
        Ok(())
    }

    /// Adds `delta(csp)` to the single-chunk share of column `column` of a
    /// record stored everywhere, at every CSP.
    pub fn add_to_everywhere(&mut self, table: &str, pk: u64, column: usize, delta: impl Fn(usize) -> Fe) -> Result<()> {
        if let Some(dead) = (1..=self.n()).find(|&c| !self.csps[c - 1].is_alive()) {
            return Err(Error::CspUnavailable(dead));
        }
        let f = *self.scheme.field();
        let nulls_before = self.index.location(table)?.get(pk).map(|e| e.nulls[column]);
        if nulls_before != Some(false) {
            return Err(Error::UnknownRecord { table: table.to_string(), pk });
        }
        for i in 1..=self.n() {
            let row = self.csps[i - 1].table(table)?.get(pk).cloned().ok_or(Error::MissingShare {
                csp: i,
                table: table.to_string(),
                pk,
            })?;
            let mut attrs = row.attrs;
            match attrs.get_mut(column) {
                Some(StoredAttr::Shares(s)) if s.len() == 1 => s[0] = f.add(s[0], delta(i)),
                _ => return Err(Error::SchemaMismatch(format!("{table} column {column} is not a single share"))),
            }
            self.csps[i - 1].put_shared_record(&self.scheme, table, pk, attrs)?;
        }
        Ok(())
    }

    // ---- reading -------------------------------------------------------

    fn recombiner(&self, rg: &[usize]) -> Result<Arc<Recombiner>> {
        let mut cache = self.recombiners.lock().expect("recombiner cache poisoned");
        if let Some(r) = cache.get(rg) {
            return Ok(r.clone());
        }
        let r = Arc::new(Recombiner::new(&self.scheme, rg, &[])?);
        cache.insert(rg.to_vec(), r.clone());
        Ok(r)
    }

    /// Candidate reconstruction groups, in the order they will be tried.
    pub fn candidate_groups(&self, choice: &RgChoice, exclude: CspSet) -> Result<Vec<Vec<usize>>> {
        let t = self.t();
        let usable: Vec<usize> =
            self.rank.iter().copied().filter(|&c| self.csps[c - 1].is_alive() && !exclude.contains(c)).collect();
        match choice {
            RgChoice::Auto => {
                if usable.len() < t {
                    return Err(Error::NotEnoughAliveCsps { alive: usable.len(), needed: t });
                }
                Ok(combinations(&usable, t, MAX_ROTATIONS))
            }
            RgChoice::Fixed(rg) => {
                if rg.len() != t {
                    return Err(Error::InvalidConfig(format!("--rg needs exactly t = {t} CSPs")));
                }
                let mut seen = CspSet::empty(self.n());
                for &c in rg {
                    self.check_csp(c)?;
                    if seen.contains(c) {
                        return Err(Error::InvalidConfig(format!("CSP{c} listed twice in --rg")));
                    }
                    seen.insert(c);
                }
                let mut spare = usable.iter().copied().filter(|c| !seen.contains(*c));
                let mut out = Vec::with_capacity(t);
                for &c in rg {
                    if self.csps[c - 1].is_alive() {
                        out.push(c);
                    } else {
                        let alive = self.alive().len();
                        out.push(spare.next().ok_or(Error::NotEnoughAliveCsps { alive, needed: t })?);
                    }
                }
                Ok(vec![out])
            }
        }
    }

    /// Reconstructs the raw field chunks of every stored column of one
    /// record (`None` for nulls and keys).
    pub fn reconstruct_raw(&self, table: &str, pk: u64, choice: &RgChoice) -> Result<Vec<Option<Vec<Fe>>>> {
        let entry = self
            .index
            .location(table)?
            .get(pk)
            .ok_or_else(|| Error::UnknownRecord { table: table.to_string(), pk })?;
        let mut exclude = CspSet::empty(self.n());
        if *choice == RgChoice::Auto {
            for c in entry.bitmap.members().filter(|&c| self.csps[c - 1].is_alive()) {
                if !self.csps[c - 1].record_intact(&self.scheme, table, pk).unwrap_or(false) {
                    exclude.insert(c);
                }
            }
        }
        let groups = self.candidate_groups(choice, exclude)?;
        self.counters.records.fetch_add(1, Ordering::Relaxed);
        if table.starts_with(crate::cube::CUBE_PREFIX) {
            self.counters.cube_cells.fetch_add(1, Ordering::Relaxed);
        }
        let mut last = None;
        for (k, rg) in groups.iter().enumerate() {
            if k > 0 {
                self.counters.rotations.fetch_add(1, Ordering::Relaxed);
            }
            match self.try_reconstruct(table, pk, entry, rg) {
                Ok(v) => return Ok(v),
                Err(Error::InnerSignatureMismatch { rg, .. }) => {
                    last = Some(Error::InnerSignatureMismatch { rg, context: Some(format!("{table} key {pk}")) });
                }
                Err(e) => return Err(e),
            }
        }
        Err(last.expect("at least one candidate group"))
    }

    fn try_reconstruct(&self, table: &str, pk: u64, entry: &LocationEntry, rg: &[usize]) -> Result<Vec<Option<Vec<Fe>>>> {
        let rec = self.recombiner(rg)?;
        let mismatch = || Error::InnerSignatureMismatch { rg: rg.to_vec(), context: None };
        let rows: Vec<Option<&StoredRow>> = rg
            .iter()
            .map(|&c| {
                if entry.bitmap.contains(c) {
                    self.csps[c - 1].get_shared_record(table, pk).map(Some)
                } else {
                    Ok(None)
                }
            })
            .collect::<Result<_>>()?;
        let width = entry.nulls.len();
        let mut out = Vec::with_capacity(width);
        for col in 0..width {
            if entry.nulls[col] || entry.keys[col].is_some() {
                out.push(None);
                continue;
            }
            let lists: Vec<Option<&Vec<Fe>>> = rows
                .iter()
                .map(|r| match r {
                    None => Ok(None),
                    Some(row) => match row.attrs.get(col) {
                        Some(StoredAttr::Shares(s)) => Ok(Some(s)),
                        _ => Err(mismatch()),
                    },
                })
                .collect::<Result<_>>()?;
            let len = lists.iter().flatten().next().map_or(0, |l| l.len());
            if lists.iter().flatten().any(|l| l.len() != len) {
                return Err(mismatch());
            }
            let pseudo: Vec<Fe> = rg.iter().map(|&c| self.scheme.pseudo_share(pk, c)).collect();
            let mut chunks = Vec::with_capacity(len);
            let mut ys = vec![Fe::ZERO; rg.len()];
            for j in 0..len {
                for (m, l) in lists.iter().enumerate() {
                    ys[m] = l.map_or(pseudo[m], |l| l[j]);
                }
                chunks.push(rec.combine(&self.scheme, &ys)?);
            }
            self.counters.chunks.fetch_add(len as u64, Ordering::Relaxed);
            out.push(Some(chunks));
        }
        Ok(out)
    }

    /// Reconstructs and decodes one record, base columns in schema order.
    pub fn reconstruct_row(&self, table: &str, pk: u64, choice: &RgChoice) -> Result<Vec<Value>> {
        let schema = self.schema(table)?;
        let raw = self.reconstruct_raw(table, pk, choice)?;
        let entry = self.index.location(table)?.get(pk).expect("reconstructed above");
        let mut stored = 0;
        schema
            .columns
            .iter()
            .map(|c| {
                if c.ty == ColumnType::PrimaryKey {
                    return Ok(Value::Key(pk));
                }
                let i = stored;
                stored += 1;
                if entry.nulls[i] {
                    return Ok(Value::Null);
                }
                if let Some(k) = entry.keys[i] {
                    return Ok(Value::Key(k));
                }
                self.codec.decode(raw[i].as_deref().unwrap_or(&[]), c.ty)
            })
            .collect()
    }

    /// Homomorphic weighted sum `Σ mult · Σ coef·column` over the given
    /// records, recombined from per-CSP partial sums plus pseudo-share
    /// corrections. Returns the raw field value (bias still included).
    pub fn sum_terms(&self, table: &str, weighted: &[(u64, u64)], terms: &[(usize, i64)], choice: &RgChoice) -> Result<Fe> {
        let f = *self.scheme.field();
        let loc = self.index.location(table)?;
        let coefs: Vec<(usize, Fe)> = terms.iter().map(|&(c, k)| (c, f.elem_signed(k as i128))).collect();
        let groups = self.candidate_groups(choice, CspSet::empty(self.n()))?;
        self.counters.aggregates.fetch_add(1, Ordering::Relaxed);
        let partial = |csp: usize| -> Result<Fe> {
            let stored = self.csps[csp - 1].sum_column(&self.scheme, table, weighted, &coefs)?;
            let corr = f.sum(coefs.iter().map(|&(col, k)| {
                f.mul(k, self.scheme.pseudo_share_fe(loc.pseudo_sum(&f, weighted, col, csp), csp))
            }));
            Ok(f.add(stored, corr))
        };
        let mut cache: BTreeMap<usize, Fe> = BTreeMap::new();
        let mut last = None;
        for (k, rg) in groups.iter().enumerate() {
            if k > 0 {
                self.counters.rotations.fetch_add(1, Ordering::Relaxed);
            }
            let missing: Vec<usize> = rg.iter().copied().filter(|c| !cache.contains_key(c)).collect();
            let got: Vec<(usize, Fe)> =
                missing.par_iter().map(|&c| partial(c).map(|v| (c, v))).collect::<Result<_>>()?;
            cache.extend(got);
            let ys: Vec<Fe> = rg.iter().map(|c| cache[c]).collect();
            match self.recombiner(rg)?.combine(&self.scheme, &ys) {
                Ok(v) => return Ok(v),
                Err(Error::InnerSignatureMismatch { rg, .. }) => {
                    last = Some(Error::InnerSignatureMismatch { rg, context: Some(format!("SUM over {table}")) });
                }
                Err(e) => return Err(e),
            }
        }
        Err(last.expect("at least one candidate group"))
    }

    // ---- faults --------------------------------------------------------

    pub fn fail(&mut self, csp: usize) -> Result<()> {
        self.check_csp(csp)?;
        self.csps[csp - 1].inject_failure();
        Ok(())
    }

    pub fn heal(&mut self, csp: usize) -> Result<()> {
        self.check_csp(csp)?;
        self.csps[csp - 1].heal();
        Ok(())
    }

    /// Drops a CSP's rows (all tables when `table` is `None`).
    pub fn wipe(&mut self, csp: usize, table: Option<&str>) -> Result<()> {
        self.check_csp(csp)?;
        let names: Vec<String> = match table {
            Some(t) => vec![t.to_string()],
            None => self.csps[csp - 1].table_names().map(str::to_string).collect(),
        };
        for name in names {
            self.csps[csp - 1].wipe_table(&name)?;
        }
        Ok(())
    }

    /// Overwrites one stored share of record `pk` at `csp` with `value`
    /// (or the old share plus one), bypassing the signature tree.
    pub fn tamper(&mut self, csp: usize, table: &str, pk: u64, column: &str, chunk: usize, value: Option<u64>) -> Result<()> {
        self.check_csp(csp)?;
        let schema = self.schema(table)?;
        let col = schema.stored_index(column).ok_or_else(|| Error::UnknownColumn(format!("{table}.{column}")))?;
        let store = &self.csps[csp - 1];
        let t = store.raw_table(table).ok_or_else(|| Error::UnknownTable(table.to_string()))?;
        let pos = t.position(pk).ok_or(Error::MissingShare { csp, table: table.to_string(), pk })?;
        let f = self.scheme.field();
        let new = match value {
            Some(v) => f.elem(v),
            None => match t.rows()[pos].attrs.get(col) {
                Some(StoredAttr::Shares(s)) if chunk < s.len() => f.add(s[chunk], f.elem(1)),
                _ => return Err(Error::OutOfRange(format!("{table}.{column} has no share chunk {chunk} at CSP{csp}"))),
            },
        };
        self.csps[csp - 1].inject_tamper(table, pos, col, chunk, new)
    }

    /// Outer-signature verification at one CSP or all alive ones.
    pub fn verify(&self, csp: Option<usize>, scope: &VerifyScope) -> Result<Vec<(usize, VerifyReport)>> {
        let targets: Vec<usize> = match csp {
            Some(c) => {
                self.check_csp(c)?;
                vec![c]
            }
            None => self.alive().members().collect(),
        };
        targets
            .into_par_iter()
            .map(|c| {
                let store = &self.csps[c - 1];
                let scope = match scope {
                    VerifyScope::Table(t) if !store.tree().has_table(t) => return Ok((c, VerifyReport::default())),
                    s => s,
                };
                Ok((c, store.verify(&self.scheme, scope)?))
            })
            .collect()
    }

    /// Regenerates CSP `target`'s shares from `t` other CSPs, for one table
    /// or all of them, and rebuilds its signatures. Returns the number of
    /// share chunks written.
    pub fn recover(&mut self, target: usize, table: Option<&str>) -> Result<usize> {
        self.check_csp(target)?;
        let t = self.t();
        let others: Vec<usize> =
            self.rank.iter().copied().filter(|&c| c != target && self.csps[c - 1].is_alive()).collect();
        if others.len() < t {
            return Err(Error::NotEnoughAliveCsps { alive: others.len(), needed: t });
        }
        let names: Vec<String> = match table {
            Some(name) => {
                self.schema(name)?;
                vec![name.to_string()]
            }
            None => self.index.catalog.keys().cloned().collect(),
        };
        self.csps[target - 1].heal();
        let x_target = self.scheme.x_csp(target);
        let mut written = 0;
        for name in names {
            let loc = self.index.location(&name)?;
            let pks: Vec<u64> = loc.entries.iter().filter(|(_, e)| e.bitmap.contains(target)).map(|(pk, _)| *pk).collect();
            let mut rows = Vec::with_capacity(pks.len());
            for pk in pks {
                let entry = &loc.entries[&pk];
                let mut exclude = CspSet::empty(self.n());
                exclude.insert(target);
                for c in entry.bitmap.members().filter(|&c| c != target && self.csps[c - 1].is_alive()) {
                    if !self.csps[c - 1].record_intact(&self.scheme, &name, pk).unwrap_or(false) {
                        exclude.insert(c);
                    }
                }
                let usable: Vec<usize> = others.iter().copied().filter(|c| !exclude.contains(*c)).collect();
                if usable.len() < t {
                    return Err(Error::NotEnoughAliveCsps { alive: usable.len(), needed: t });
                }
                let mut result = None;
                for rg in combinations(&usable, t, MAX_ROTATIONS) {
                    let rec = Recombiner::new(&self.scheme, &rg, &[x_target])?;
                    match self.regenerate(&name, pk, entry, &rg, &rec) {
                        Ok(attrs) => {
                            result = Some(attrs);
                            break;
                        }
                        Err(Error::InnerSignatureMismatch { .. }) => continue,
                        Err(e) => return Err(e),
                    }
                }
                let attrs = result.ok_or_else(|| Error::InnerSignatureMismatch {
                    rg: usable.clone(),
                    context: Some(format!("recovering {name} key {pk}")),
                })?;
                written += attrs.iter().map(|a| if let StoredAttr::Shares(s) = a { s.len() } else { 0 }).sum::<usize>();
                rows.push(StoredRow { pk, attrs });
            }
            self.csps[target - 1].replace_table(&self.scheme, &name, rows)?;
        }
        Ok(written)
    }

    fn regenerate(&self, table: &str, pk: u64, entry: &LocationEntry, rg: &[usize], rec: &Recombiner) -> Result<Vec<StoredAttr>> {
        let mismatch = || Error::InnerSignatureMismatch { rg: rg.to_vec(), context: None };
        let rows: Vec<Option<&StoredRow>> = rg
            .iter()
            .map(|&c| if entry.bitmap.contains(c) { self.csps[c - 1].get_shared_record(table, pk).map(Some) } else { Ok(None) })
            .collect::<Result<_>>()?;
        (0..entry.nulls.len())
            .map(|col| {
                if entry.nulls[col] {
                    return Ok(StoredAttr::Null);
                }
                if let Some(k) = entry.keys[col] {
                    return Ok(StoredAttr::Key(k));
                }
                let lists: Vec<Option<&Vec<Fe>>> = rows
                    .iter()
                    .map(|r| match r.map(|row| row.attrs.get(col)) {
                        None => Ok(None),
                        Some(Some(StoredAttr::Shares(s))) => Ok(Some(s)),
                        Some(_) => Err(mismatch()),
                    })
                    .collect::<Result<_>>()?;
                let len = lists.iter().flatten().next().map_or(0, |l| l.len());
                if lists.iter().flatten().any(|l| l.len() != len) {
                    return Err(mismatch());
                }
                let mut out = Vec::with_capacity(len);
                for j in 0..len {
                    let ys: Vec<Fe> = lists
                        .iter()
                        .zip(rg)
                        .map(|(l, &c)| l.map_or_else(|| self.scheme.pseudo_share(pk, c), |l| l[j]))
                        .collect();
                    rec.combine(&self.scheme, &ys)?;
                    out.push(rec.extra(&self.scheme, 0, &ys));
                }
                Ok(StoredAttr::Shares(out))
            })
            .collect()
    }

    // ---- persistence ---------------------------------------------------

    /// Writes the whole deployment under `root`.
    pub fn save(&self, root: &Path) -> Result<()> {
        for c in &self.csps {
            persist::save_csp(root, c)?;
        }
        persist::save_index(root, &self.index)?;
        write_atomic(&root.join("client").join("keys"), &self.scheme.describe())
    }

    /// Loads a deployment saved with the same parameters.
    pub fn open(root: &Path, params: WarehouseParams) -> Result<Self> {
        let scheme = Scheme::init(params.p, params.n, params.t, &params.seed)?;
        let keys_path = root.join("client").join("keys");
        let saved = std::fs::read_to_string(&keys_path)
            .map_err(|_| Error::StoreFormat(format!("{} is missing; run init first", keys_path.display())))?;
        if saved != scheme.describe() {
            return Err(Error::InvalidConfig(
                "key material derived from the configuration differs from the stored keys (p, n, t or seed changed)".into(),
            ));
        }
        let index = persist::load_index(root, params.n)?;
        let csps = (1..=params.n)
            .map(|i| persist::load_csp(root, i, params.w, scheme.field(), &index))
            .collect::<Result<Vec<_>>>()?;
        Self::assemble(params, scheme, csps, index)
    }
}

/// First `cap` size-`k` combinations of `items`, in lexicographic order of
/// positions.
pub fn combinations(items: &[usize], k: usize, cap: usize) -> Vec<Vec<usize>> {
    let mut out = Vec::new();
    if k > items.len() {
        return out;
    }
    let mut idx: Vec<usize> = (0..k).collect();
    loop {
        out.push(idx.iter().map(|&i| items[i]).collect());
        if out.len() >= cap {
            return out;
        }
        let Some(pos) = (0..k).rev().find(|&i| idx[i] != i + items.len() - k) else {
            return out;
        };
        idx[pos] += 1;
        for j in pos + 1..k {
            idx[j] = idx[j - 1] + 1;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::field::MERSENNE_61;

    fn product_wh() -> Warehouse {
        let mut wh = Warehouse::new(WarehouseParams::new(MERSENNE_61, 5, 4, b"wh-tests")).unwrap();
        wh.create_table(TableSchema::parse("product", "prodno:pk, name:text, price:real(2), qty:int").unwrap())
            .unwrap();
        wh
    }

    fn row(wh: &Warehouse, fields: &[&str]) -> Vec<Value> {
        wh.schema("product").unwrap().parse_row(fields).unwrap()
    }

    #[test]
    fn combinations_are_lexicographic() {
        assert_eq!(combinations(&[1, 2, 3, 4], 3, 10), vec![vec![1, 2, 3], vec![1, 2, 4], vec![1, 3, 4], vec![2, 3, 4]]);
        assert_eq!(combinations(&[5, 6], 2, 1), vec![vec![5, 6]]);
        assert!(combinations(&[1], 2, 9).is_empty());
    }

    #[test]
    fn products_at_fixed_groups() {
        let mut wh = product_wh();
        for (r, sg) in [(["124", "Shirt", "75.25", "3"], "10101"), (["125", "Skirt", "50", "NULL"], "01110"), (["126", "Hat", "12.5", "1"], "11010")] {
            let row = row(&wh, &r);
            wh.insert_row_in_group("product", row, CspSet::parse(sg).unwrap()).unwrap();
        }
        let loc = wh.index().location("product").unwrap();
        assert_eq!(loc.get(124).unwrap().bitmap.to_string(), "10101");
        let total: usize = (1..=5).map(|c| wh.csp(c).table("product").unwrap().len()).sum();
        assert_eq!(total, 9);
        let back = wh.reconstruct_row("product", 125, &RgChoice::Fixed(vec![1, 2, 4, 5])).unwrap();
        assert_eq!(back, row(&wh, &["125", "Skirt", "50", "NULL"]));
        // a new record while CSP1 and CSP2 are unavailable
        wh.fail(1).unwrap();
        wh.fail(2).unwrap();
        let r = row(&wh, &["127", "Cap", "9.99", "2"]);
        let rep = wh.insert_row_in_group("product", r.clone(), CspSet::parse("00111").unwrap()).unwrap();
        assert_eq!(rep.writes, vec![0, 0, 1, 1, 1]);
        wh.heal(1).unwrap();
        assert_eq!(wh.reconstruct_row("product", 127, &RgChoice::Auto).unwrap(), r);
    }

    #[test]
    fn reads_survive_n_minus_t_failures_only() {
        let mut wh = product_wh();
        let rows: Vec<_> = (0..20).map(|i| row(&wh, &[&i.to_string(), "x", "1.5", &(i * 3).to_string()])).collect();
        wh.insert_rows("product", rows.clone()).unwrap();
        wh.fail(3).unwrap();
        for r in &rows {
            let pk = wh.schema("product").unwrap().pk_of(r).unwrap();
            assert_eq!(&wh.reconstruct_row("product", pk, &RgChoice::Auto).unwrap(), r);
        }
        wh.fail(5).unwrap();
        assert!(matches!(
            wh.reconstruct_row("product", 0, &RgChoice::Auto),
            Err(Error::NotEnoughAliveCsps { alive: 3, needed: 4 })
        ));
    }

    #[test]
    fn updates_keep_position_and_need_old_group() {
        let mut wh = product_wh();
        let r = row(&wh, &["1", "a", "1", "1"]);
        wh.insert_rows("product", vec![r]).unwrap();
        let r2 = row(&wh, &["1", "bb", "2", "2"]);
        let rep = wh.insert_rows("product", vec![r2.clone()]).unwrap();
        assert_eq!((rep.inserted, rep.updated), (0, 1));
        assert_eq!(wh.reconstruct_row("product", 1, &RgChoice::Auto).unwrap(), r2);
        let victim = wh.index().location("product").unwrap().get(1).unwrap().bitmap.members().next().unwrap();
        wh.fail(victim).unwrap();
        assert!(matches!(wh.insert_rows("product", vec![r2]), Err(Error::CspUnavailable(c)) if c == victim));
    }

    #[test]
    fn tamper_rotates_auto_and_fails_fixed() {
        let mut wh = product_wh();
        let r = row(&wh, &["9", "abc", "3.25", "4"]);
        wh.insert_row_in_group("product", r.clone(), CspSet::parse("10101").unwrap()).unwrap();
        wh.tamper(1, "product", 9, "qty", 0, None).unwrap();
        assert_eq!(wh.reconstruct_row("product", 9, &RgChoice::Auto).unwrap(), r);
        let err = wh.reconstruct_row("product", 9, &RgChoice::Fixed(vec![1, 2, 3, 4])).unwrap_err();
        assert!(matches!(err, Error::InnerSignatureMismatch { .. }));
        let reports = wh.verify(None, &VerifyScope::Whole).unwrap();
        let bad: Vec<usize> = reports.iter().filter(|(_, r)| !r.is_ok()).map(|(c, _)| *c).collect();
        assert_eq!(bad, vec![1]);
    }

    #[test]
    fn recovery_restores_bit_for_bit() {
        let mut wh = product_wh();
        let rows: Vec<_> = (0..30).map(|i| row(&wh, &[&i.to_string(), "name", "2.5", &i.to_string()])).collect();
        wh.insert_rows("product", rows).unwrap();
        let before = wh.csp(1).raw_table("product").unwrap().clone();
        let tree = wh.csp(1).tree().clone();
        wh.wipe(1, Some("product")).unwrap();
        assert!(!wh.verify(Some(1), &VerifyScope::Whole).unwrap()[0].1.is_ok());
        let n = wh.recover(1, Some("product")).unwrap();
        assert!(n > 0);
        assert_eq!(wh.csp(1).raw_table("product").unwrap(), &before);
        assert_eq!(wh.csp(1).tree(), &tree);
        assert!(wh.verify(Some(1), &VerifyScope::Table("product".into())).unwrap()[0].1.is_ok());
    }

    #[test]
    fn recovery_needs_t_others() {
        let mut wh = product_wh();
        let r = row(&wh, &["1", "a", "1", "1"]);
        wh.insert_rows("product", vec![r]).unwrap();
        // CSPs 2..5 are exactly t others
        assert!(wh.recover(1, None).is_ok());
        wh.fail(3).unwrap();
        assert!(matches!(wh.recover(1, None), Err(Error::NotEnoughAliveCsps { alive: 3, needed: 4 })));
    }

    #[test]
    fn homomorphic_sum_matches_plaintext() {
        let mut wh = product_wh();
        let rows: Vec<_> = (0..25).map(|i| row(&wh, &[&i.to_string(), "n", "1", &(i as i64 - 12).to_string()])).collect();
        wh.insert_rows("product", rows).unwrap();
        let col = wh.schema("product").unwrap().stored_index("qty").unwrap();
        let weighted: Vec<(u64, u64)> = (0..25).map(|pk| (pk, 1 + pk % 3)).collect();
        let raw = wh.sum_terms("product", &weighted, &[(col, 1)], &RgChoice::Auto).unwrap();
        let weight: i128 = weighted.iter().map(|w| w.1 as i128).sum();
        let got = wh.codec().unbias_sum(raw, weight, ColumnType::Int);
        let want: i128 = weighted.iter().map(|&(pk, m)| (pk as i128 - 12) * m as i128).sum();
        assert_eq!(got, want);
        assert_eq!(wh.sum_terms("product", &[], &[(col, 1)], &RgChoice::Auto).unwrap(), Fe::ZERO);
    }

    #[test]
    fn save_and_open_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let mut wh = product_wh();
        wh.add_order_index("product", "price").unwrap();
        let rows: Vec<_> = (0..5).map(|i| row(&wh, &[&i.to_string(), "n", &format!("{i}.5"), "1"])).collect();
        wh.insert_rows("product", rows.clone()).unwrap();
        wh.fail(4).unwrap();
        wh.save(dir.path()).unwrap();
        let back = Warehouse::open(dir.path(), wh.params().clone()).unwrap();
        assert_eq!(back.alive().to_string(), "11101");
        assert_eq!(back.reconstruct_row("product", 3, &RgChoice::Auto).unwrap(), rows[3]);
        assert_eq!(back.index().ordered, wh.index().ordered);
        let mut other = wh.params().clone();
        other.seed = b"different".to_vec();
        assert!(matches!(Warehouse::open(dir.path(), other), Err(Error::InvalidConfig(_))));
    }
}
