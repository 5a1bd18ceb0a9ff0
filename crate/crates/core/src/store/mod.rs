//! Simulated CSP stores and the index server.

pub mod index;
pub mod persist;

use std::collections::HashMap;
use std::sync::atomic::{AtomicU64, Ordering};

use indexmap::IndexMap;

use crate::error::{Error, Result};
use crate::field::Fe;
use crate::keys::Scheme;
use crate::outer_sig::{SignatureTree, VerifyReport, VerifyScope};
use crate::sharing::{record_bytes, StoredAttr};

pub use index::{IndexServer, LocationEntry, LocationIndex, OrderAggregate, OrderAnswer, OrderIndex, Predicate};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CspStatus {
    Alive,
    Failed,
}

/// One record as held by a CSP.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct StoredRow {
    pub pk: u64,
    pub attrs: Vec<StoredAttr>,
}

impl StoredRow {
    pub fn bytes(&self) -> Vec<u8> {
        record_bytes(self.pk, &self.attrs)
    }

    fn size(&self) -> u64 {
        self.bytes().len() as u64
    }
}

/// A shared table at one CSP; row positions are stable.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct CspTable {
    rows: Vec<StoredRow>,
    by_pk: HashMap<u64, usize>,
}

impl CspTable {
    pub fn rows(&self) -> &[StoredRow] {
        &self.rows
    }

    pub fn position(&self, pk: u64) -> Option<usize> {
        self.by_pk.get(&pk).copied()
    }

    pub fn get(&self, pk: u64) -> Option<&StoredRow> {
        self.position(pk).map(|i| &self.rows[i])
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    fn from_rows(rows: Vec<StoredRow>) -> Result<Self> {
        let mut by_pk = HashMap::with_capacity(rows.len());
        for (i, r) in rows.iter().enumerate() {
            if by_pk.insert(r.pk, i).is_some() {
                return Err(Error::StoreFormat(format!("key {} appears twice", r.pk)));
            }
        }
        Ok(Self { rows, by_pk })
    }
}

/// One simulated cloud service provider.
#[derive(Debug)]
pub struct CspStore {
    index: usize,
    status: CspStatus,
    tables: IndexMap<String, CspTable>,
    tree: SignatureTree,
    bytes_stored: AtomicU64,
    bytes_transferred: AtomicU64,
}

impl CspStore {
    pub fn new(index: usize, w: usize) -> Result<Self> {
        Ok(Self {
            index,
            status: CspStatus::Alive,
            tables: IndexMap::new(),
            tree: SignatureTree::new(w)?,
            bytes_stored: AtomicU64::new(0),
            bytes_transferred: AtomicU64::new(0),
        })
    }

    pub fn index(&self) -> usize {
        self.index
    }

    pub fn status(&self) -> CspStatus {
        self.status
    }

    pub fn is_alive(&self) -> bool {
        self.status == CspStatus::Alive
    }

    pub fn inject_failure(&mut self) {
        self.status = CspStatus::Failed;
    }

    pub fn heal(&mut self) {
        self.status = CspStatus::Alive;
    }

    fn ensure_alive(&self) -> Result<()> {
        if self.is_alive() {
            Ok(())
        } else {
            Err(Error::CspUnavailable(self.index))
        }
    }

    pub fn tree(&self) -> &SignatureTree {
        &self.tree
    }

    pub fn bytes_stored(&self) -> u64 {
        self.bytes_stored.load(Ordering::Relaxed)
    }

    pub fn bytes_transferred(&self) -> u64 {
        self.bytes_transferred.load(Ordering::Relaxed)
    }

    fn count_transfer(&self, bytes: u64) {
        self.bytes_transferred.fetch_add(bytes, Ordering::Relaxed);
    }

    pub fn table_names(&self) -> impl Iterator<Item = &str> {
        self.tables.keys().map(String::as_str)
    }

    /// Direct view of a table, ignoring status; used for persistence and
    /// recovery bookkeeping.
    pub fn raw_table(&self, table: &str) -> Option<&CspTable> {
        self.tables.get(table)
    }

    pub fn table(&self, table: &str) -> Result<&CspTable> {
        self.ensure_alive()?;
        self.tables.get(table).ok_or_else(|| Error::UnknownTable(table.to_string()))
    }

    /// Creates an empty shared table (no-op if present).
    pub fn create_table(&mut self, scheme: &Scheme, table: &str) -> Result<()> {
        self.ensure_alive()?;
        if !self.tables.contains_key(table) {
            self.tree.create_table(scheme.field(), table, scheme.empty_table_marker(self.index))?;
            self.tables.insert(table.to_string(), CspTable::default());
        }
        Ok(())
    }

    /// Stores a record, appending it or replacing the one with the same key
    /// in place; the signature tree follows. Returns the position.
    pub fn put_shared_record(&mut self, scheme: &Scheme, table: &str, pk: u64, attrs: Vec<StoredAttr>) -> Result<usize> {
        self.create_table(scheme, table)?;
        let row = StoredRow { pk, attrs };
        let sig = scheme.hf_star(self.index, &row.bytes());
        self.bytes_stored.fetch_add(row.size(), Ordering::Relaxed);
        let t = self.tables.get_mut(table).expect("created above");
        match t.by_pk.get(&pk) {
            Some(&pos) => {
                t.rows[pos] = row;
                self.tree.update_record(scheme.field(), table, pos, sig)?;
                Ok(pos)
            }
            None => {
                t.by_pk.insert(pk, t.rows.len());
                t.rows.push(row);
                let pos = self.tree.insert_record(scheme.field(), table, sig)?;
                debug_assert_eq!(pos + 1, t.rows.len());
                Ok(pos)
            }
        }
    }

    /// Fetches a record for transfer to the client.
    pub fn get_shared_record(&self, table: &str, pk: u64) -> Result<&StoredRow> {
        let row = self
            .table(table)?
            .get(pk)
            .ok_or(Error::MissingShare { csp: self.index, table: table.to_string(), pk })?;
        self.count_transfer(row.size());
        Ok(row)
    }

    /// Checks one record against its stored leaf signature.
    pub fn record_intact(&self, scheme: &Scheme, table: &str, pk: u64) -> Result<bool> {
        let t = self.table(table)?;
        let pos = t.position(pk).ok_or(Error::MissingShare { csp: self.index, table: table.to_string(), pk })?;
        Ok(self.tree.record_sig(table, pos)? == scheme.hf_star(self.index, &t.rows[pos].bytes()))
    }

    /// Per-CSP part of a homomorphic sum: `Σ mult·share` of chunk 0 of stored
    /// column `column` over the weighted records held here. Null and absent
    /// records contribute nothing.
    pub fn sum_column(&self, scheme: &Scheme, table: &str, weighted: &[(u64, u64)], columns: &[(usize, Fe)]) -> Result<Fe> {
        let f = scheme.field();
        let t = self.table(table)?;
        let mut acc = Fe::ZERO;
        for &(pk, mult) in weighted {
            let Some(row) = t.get(pk) else { continue };
            for &(col, coef) in columns {
                if let Some(StoredAttr::Shares(s)) = row.attrs.get(col) {
                    let share = s.first().copied().unwrap_or(Fe::ZERO);
                    acc = f.add(acc, f.mul(f.mul(share, coef), f.elem(mult)));
                }
            }
        }
        self.count_transfer(8);
        Ok(acc)
    }

    /// Overwrites one share chunk without touching the signature tree.
    pub fn inject_tamper(&mut self, table: &str, position: usize, attr: usize, chunk: usize, share: Fe) -> Result<()> {
        let unknown = || Error::UnknownRecordPosition { table: table.to_string(), position };
        let t = self.tables.get_mut(table).ok_or_else(|| Error::UnknownTable(table.to_string()))?;
        let row = t.rows.get_mut(position).ok_or_else(unknown)?;
        match row.attrs.get_mut(attr) {
            Some(StoredAttr::Shares(s)) if chunk < s.len() => {
                s[chunk] = share;
                Ok(())
            }
            Some(StoredAttr::Key(k)) => {
                *k = share.value();
                Ok(())
            }
            _ => Err(Error::OutOfRange(format!("no share chunk {chunk} in column {attr} of {table}#{position}"))),
        }
    }

    /// Tree this CSP should hold given the records it actually stores.
    pub fn shadow_tree(&self, scheme: &Scheme) -> Result<SignatureTree> {
        let f = scheme.field();
        SignatureTree::rebuild(
            f,
            self.tree.arity(),
            self.tree.table_names().map(|name| {
                let sigs = self
                    .tables
                    .get(name)
                    .map(|t| t.rows.iter().map(|r| scheme.hf_star(self.index, &r.bytes())).collect())
                    .unwrap_or_default();
                (name, scheme.empty_table_marker(self.index), sigs)
            }),
        )
    }

    pub fn verify(&self, scheme: &Scheme, scope: &VerifyScope) -> Result<VerifyReport> {
        self.ensure_alive()?;
        let shadow = self.shadow_tree(scheme)?;
        self.tree.verify_against(&shadow, scope)
    }

    /// Replaces a table's rows wholesale and rebuilds its signatures.
    pub fn replace_table(&mut self, scheme: &Scheme, table: &str, rows: Vec<StoredRow>) -> Result<()> {
        self.create_table(scheme, table)?;
        let sigs: Vec<Fe> = rows.iter().map(|r| scheme.hf_star(self.index, &r.bytes())).collect();
        let added: u64 = rows.iter().map(StoredRow::size).sum();
        self.tables.insert(table.to_string(), CspTable::from_rows(rows)?);
        self.tree.replace_table(scheme.field(), table, sigs)?;
        self.bytes_stored.fetch_add(added, Ordering::Relaxed);
        Ok(())
    }

    /// Drops every row of a table (simulated data loss); the signature tree
    /// keeps its old values, as a real loss would leave them.
    pub fn wipe_table(&mut self, table: &str) -> Result<()> {
        let t = self.tables.get_mut(table).ok_or_else(|| Error::UnknownTable(table.to_string()))?;
        *t = CspTable::default();
        Ok(())
    }

    /// Reassembles a store from persisted parts.
    pub fn from_parts(
        index: usize,
        status: CspStatus,
        tables: IndexMap<String, Vec<StoredRow>>,
        tree: SignatureTree,
    ) -> Result<Self> {
        let mut stored = 0;
        let mut out = IndexMap::new();
        for (name, rows) in tables {
            stored += rows.iter().map(StoredRow::size).sum::<u64>();
            out.insert(name, CspTable::from_rows(rows)?);
        }
        Ok(Self {
            index,
            status,
            tables: out,
            tree,
            bytes_stored: AtomicU64::new(stored),
            bytes_transferred: AtomicU64::new(0),
        })
    }
}
