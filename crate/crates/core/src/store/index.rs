//! The trusted index server: table catalog, Type I location bitmaps with
//! plaintext keys, and Type II plaintext-ordered attribute indices.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::ops::Bound;

use indexmap::IndexMap;

use crate::error::{Error, Result};
use crate::field::{Fe, PrimeField};
use crate::schema::{IndexKey, TableSchema};
use crate::sharing::CspSet;

/// Type I entry of one record.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LocationEntry {
    pub bitmap: CspSet,
    /// Plaintext foreign-key values, aligned with the stored columns
    /// (`None` for non-key columns and null keys).
    pub keys: Vec<Option<u64>>,
    /// Null flags, aligned with the stored columns.
    pub nulls: Vec<bool>,
}

/// Type I index of one table, in load order.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct LocationIndex {
    pub entries: IndexMap<u64, LocationEntry>,
}

impl LocationIndex {
    pub fn get(&self, pk: u64) -> Option<&LocationEntry> {
        self.entries.get(&pk)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn pks(&self) -> impl Iterator<Item = u64> + '_ {
        self.entries.keys().copied()
    }

    /// `Σ mult·pk` over the weighted records, restricted to those with a
    /// non-null `column` that are not stored at `csp`.
    pub fn pseudo_sum(&self, field: &PrimeField, weighted: &[(u64, u64)], column: usize, csp: usize) -> Fe {
        field.sum(weighted.iter().filter_map(|&(pk, mult)| {
            let e = self.entries.get(&pk)?;
            (!e.bitmap.contains(csp) && !e.nulls[column]).then(|| field.mul(field.elem(pk), field.elem(mult)))
        }))
    }
}

/// Predicates evaluated on plaintext order keys.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Predicate {
    Eq(IndexKey),
    Ne(IndexKey),
    Lt(IndexKey),
    Le(IndexKey),
    Gt(IndexKey),
    Ge(IndexKey),
    Between(IndexKey, IndexKey),
    In(Vec<IndexKey>),
    IsNull,
    IsNotNull,
}

impl Predicate {
    /// Plaintext semantics of the predicate for one (possibly null) value.
    pub fn matches(&self, key: Option<&IndexKey>) -> bool {
        match (self, key) {
            (Predicate::IsNull, k) => k.is_none(),
            (Predicate::IsNotNull, k) => k.is_some(),
            (_, None) => false,
            (Predicate::Eq(v), Some(k)) => k == v,
            (Predicate::Ne(v), Some(k)) => k != v,
            (Predicate::Lt(v), Some(k)) => k < v,
            (Predicate::Le(v), Some(k)) => k <= v,
            (Predicate::Gt(v), Some(k)) => k > v,
            (Predicate::Ge(v), Some(k)) => k >= v,
            (Predicate::Between(a, b), Some(k)) => a <= k && k <= b,
            (Predicate::In(vs), Some(k)) => vs.contains(k),
        }
    }
}

/// Aggregates answered by a Type II index without touching shares.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum OrderAggregate {
    Min,
    Max,
    Median,
    Count,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum OrderAnswer {
    Pk(u64),
    Count(u64),
}

/// Type II index: plaintext order key to record keys.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct OrderIndex {
    by_key: BTreeMap<IndexKey, BTreeSet<u64>>,
    by_pk: HashMap<u64, IndexKey>,
}

impl OrderIndex {
    /// Inserts or moves `pk`; `None` removes it (null value).
    pub fn set(&mut self, pk: u64, key: Option<IndexKey>) {
        if let Some(old) = self.by_pk.remove(&pk) {
            if let Some(set) = self.by_key.get_mut(&old) {
                set.remove(&pk);
                if set.is_empty() {
                    self.by_key.remove(&old);
                }
            }
        }
        if let Some(k) = key {
            self.by_key.entry(k.clone()).or_default().insert(pk);
            self.by_pk.insert(pk, k);
        }
    }

    pub fn key_of(&self, pk: u64) -> Option<&IndexKey> {
        self.by_pk.get(&pk)
    }

    pub fn len(&self) -> usize {
        self.by_pk.len()
    }

    pub fn is_empty(&self) -> bool {
        self.by_pk.is_empty()
    }

    /// In-order `(key, pk)` pairs.
    pub fn iter(&self) -> impl Iterator<Item = (&IndexKey, u64)> + '_ {
        self.by_key.iter().flat_map(|(k, pks)| pks.iter().map(move |&pk| (k, pk)))
    }

    /// Records whose value satisfies `pred`. `universe` supplies every key of
    /// the table, needed for `IS NULL`.
    pub fn lookup(&self, pred: &Predicate, universe: impl Iterator<Item = u64>) -> BTreeSet<u64> {
        let range = |lo: Bound<&IndexKey>, hi: Bound<&IndexKey>| -> BTreeSet<u64> {
            self.by_key.range::<IndexKey, _>((lo, hi)).flat_map(|(_, s)| s.iter().copied()).collect()
        };
        use Bound::*;
        match pred {
            Predicate::Eq(v) => self.by_key.get(v).cloned().unwrap_or_default(),
            Predicate::Ne(v) => self.iter().filter(|(k, _)| *k != v).map(|(_, pk)| pk).collect(),
            Predicate::Lt(v) => range(Unbounded, Excluded(v)),
            Predicate::Le(v) => range(Unbounded, Included(v)),
            Predicate::Gt(v) => range(Excluded(v), Unbounded),
            Predicate::Ge(v) => range(Included(v), Unbounded),
            Predicate::Between(a, b) if a > b => BTreeSet::new(),
            Predicate::Between(a, b) => range(Included(a), Included(b)),
            Predicate::In(vs) => vs.iter().filter_map(|v| self.by_key.get(v)).flatten().copied().collect(),
            Predicate::IsNotNull => self.by_pk.keys().copied().collect(),
            Predicate::IsNull => universe.filter(|pk| !self.by_pk.contains_key(pk)).collect(),
        }
    }

    /// MIN/MAX/MEDIAN return the key of the chosen record, COUNT the number
    /// of non-null filtered records. Ties resolve to the smallest key.
    pub fn aggregate(&self, agg: OrderAggregate, filter: Option<&BTreeSet<u64>>) -> Result<OrderAnswer> {
        let keep = |pk: &u64| filter.is_none_or(|f| f.contains(pk));
        let ordered = || self.iter().filter(|(_, pk)| keep(pk));
        match agg {
            OrderAggregate::Count => Ok(OrderAnswer::Count(ordered().count() as u64)),
            OrderAggregate::Min => ordered().next().map(|(_, pk)| OrderAnswer::Pk(pk)).ok_or(Error::EmptyInput),
            OrderAggregate::Max => {
                let top = ordered().last().map(|(k, _)| k.clone()).ok_or(Error::EmptyInput)?;
                let pk = self.by_key[&top].iter().copied().find(|pk| keep(pk)).expect("top key has a kept pk");
                Ok(OrderAnswer::Pk(pk))
            }
            OrderAggregate::Median => {
                let all: Vec<u64> = ordered().map(|(_, pk)| pk).collect();
                if all.is_empty() {
                    return Err(Error::EmptyInput);
                }
                Ok(OrderAnswer::Pk(all[(all.len() - 1) / 2]))
            }
        }
    }
}

/// Catalog plus Type I and Type II indices.
#[derive(Clone, Debug, Default)]
pub struct IndexServer {
    pub catalog: IndexMap<String, TableSchema>,
    pub locations: HashMap<String, LocationIndex>,
    /// Keyed by `(table, column)` with the column name lower-cased.
    pub ordered: BTreeMap<(String, String), OrderIndex>,
}

impl IndexServer {
    pub fn schema(&self, table: &str) -> Result<&TableSchema> {
        self.catalog.get(table).ok_or_else(|| Error::UnknownTable(table.to_string()))
    }

    pub fn register(&mut self, schema: TableSchema) -> Result<()> {
        if self.catalog.contains_key(&schema.name) {
            return Err(Error::DuplicateTable(schema.name));
        }
        self.locations.insert(schema.name.clone(), LocationIndex::default());
        self.catalog.insert(schema.name.clone(), schema);
        Ok(())
    }

    pub fn location(&self, table: &str) -> Result<&LocationIndex> {
        self.locations.get(table).ok_or_else(|| Error::UnknownTable(table.to_string()))
    }

    pub fn add_order_index(&mut self, table: &str, column: &str) -> Result<()> {
        let schema = self.schema(table)?;
        schema.column(column)?;
        self.ordered.entry((table.to_string(), column.to_ascii_lowercase())).or_default();
        Ok(())
    }

    pub fn is_ordered(&self, table: &str, column: &str) -> bool {
        self.ordered.contains_key(&(table.to_string(), column.to_ascii_lowercase()))
    }

    pub fn order_index(&self, table: &str, column: &str) -> Result<&OrderIndex> {
        self.ordered
            .get(&(table.to_string(), column.to_ascii_lowercase()))
            .ok_or_else(|| Error::NotIndexed { table: table.to_string(), column: column.to_string() })
    }

    pub fn order_columns(&self, table: &str) -> Vec<String> {
        self.ordered.keys().filter(|(t, _)| t == table).map(|(_, c)| c.clone()).collect()
    }

    pub fn type2_lookup(&self, table: &str, column: &str, pred: &Predicate) -> Result<BTreeSet<u64>> {
        let idx = self.order_index(table, column)?;
        Ok(idx.lookup(pred, self.location(table)?.pks()))
    }

    pub fn type2_aggregate(
        &self,
        table: &str,
        column: &str,
        agg: OrderAggregate,
        filter: Option<&BTreeSet<u64>>,
    ) -> Result<OrderAnswer> {
        self.order_index(table, column)?.aggregate(agg, filter)
    }

    pub fn type1_pseudo_sum(
        &self,
        field: &PrimeField,
        table: &str,
        weighted: &[(u64, u64)],
        column: usize,
        csp: usize,
    ) -> Result<Fe> {
        Ok(self.location(table)?.pseudo_sum(field, weighted, column, csp))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::field::MERSENNE_61;
    use proptest::prelude::*;

    fn num(v: i128) -> IndexKey {
        IndexKey::Num(v)
    }

    fn toy() -> OrderIndex {
        let mut idx = OrderIndex::default();
        for (pk, v) in [(1, 30), (2, 10), (3, 20), (4, 10), (5, 50), (6, 40), (7, 20), (8, 60), (9, 5), (10, 30)] {
            idx.set(pk, Some(num(v)));
        }
        idx
    }

    #[test]
    fn lookups() {
        let idx = toy();
        let all = || 1..=11u64;
        assert_eq!(idx.lookup(&Predicate::Between(num(10), num(20)), all()), BTreeSet::from([2, 3, 4, 7]));
        assert!(idx.lookup(&Predicate::Eq(num(999)), all()).is_empty());
        assert_eq!(idx.lookup(&Predicate::Ge(num(0)), all()).len(), 10);
        assert_eq!(idx.lookup(&Predicate::IsNull, all()), BTreeSet::from([11]));
        assert_eq!(idx.lookup(&Predicate::In(vec![num(5), num(60)]), all()), BTreeSet::from([8, 9]));
        assert_eq!(idx.lookup(&Predicate::Ne(num(10)), all()).len(), 8);
    }

    #[test]
    fn aggregates() {
        let idx = toy();
        assert_eq!(idx.aggregate(OrderAggregate::Count, None).unwrap(), OrderAnswer::Count(10));
        assert_eq!(idx.aggregate(OrderAggregate::Max, Some(&BTreeSet::from([3]))).unwrap(), OrderAnswer::Pk(3));
        assert_eq!(idx.aggregate(OrderAggregate::Min, None).unwrap(), OrderAnswer::Pk(9));
        assert_eq!(idx.aggregate(OrderAggregate::Max, None).unwrap(), OrderAnswer::Pk(8));
        // sorted (value, pk): ..., (20, 3), (20, 7), ...; position 4 is (20, 7)
        assert_eq!(idx.aggregate(OrderAggregate::Median, None).unwrap(), OrderAnswer::Pk(7));
        assert!(matches!(idx.aggregate(OrderAggregate::Min, Some(&BTreeSet::new())), Err(Error::EmptyInput)));
    }

    #[test]
    fn moving_a_key() {
        let mut idx = toy();
        idx.set(8, Some(num(1)));
        assert_eq!(idx.aggregate(OrderAggregate::Min, None).unwrap(), OrderAnswer::Pk(8));
        idx.set(8, None);
        assert_eq!(idx.len(), 9);
    }

    #[test]
    fn pseudo_sum_on_fig8_bitmaps() {
        let f = PrimeField::new(MERSENNE_61).unwrap();
        let mut loc = LocationIndex::default();
        for (pk, bits) in [(124, "10101"), (125, "01110"), (126, "11010"), (127, "00111")] {
            loc.entries.insert(pk, LocationEntry { bitmap: CspSet::parse(bits).unwrap(), keys: vec![None], nulls: vec![false] });
        }
        let w: Vec<(u64, u64)> = [124, 125, 126, 127].iter().map(|&pk| (pk, 1)).collect();
        assert_eq!(loc.pseudo_sum(&f, &w, 0, 1).value(), 252);
        assert_eq!(loc.pseudo_sum(&f, &[(124, 1)], 0, 1).value(), 0);
        loc.entries.insert(42, LocationEntry { bitmap: CspSet::parse("01110").unwrap(), keys: vec![None], nulls: vec![false] });
        assert_eq!(loc.pseudo_sum(&f, &[(42, 1)], 0, 1).value(), 42);
    }

    #[test]
    fn unknown_index() {
        let s = IndexServer::default();
        assert!(matches!(s.order_index("t", "x"), Err(Error::NotIndexed { .. })));
    }

    proptest! {
        #[test]
        fn lookups_match_brute_force(vals in prop::collection::vec(prop::option::of(-20i128..20), 0..200), a in -25i128..25, b in -25i128..25) {
            let mut idx = OrderIndex::default();
            for (pk, v) in vals.iter().enumerate() {
                idx.set(pk as u64, v.map(num));
            }
            let preds = [
                Predicate::Eq(num(a)), Predicate::Ne(num(a)), Predicate::Lt(num(a)), Predicate::Le(num(a)),
                Predicate::Gt(num(a)), Predicate::Ge(num(a)), Predicate::Between(num(a), num(b)),
                Predicate::In(vec![num(a), num(b)]), Predicate::IsNull, Predicate::IsNotNull,
            ];
            for p in &preds {
                let got = idx.lookup(p, 0..vals.len() as u64);
                let want: BTreeSet<u64> = vals.iter().enumerate()
                    .filter(|(_, v)| p.matches(v.map(num).as_ref()))
                    .map(|(pk, _)| pk as u64).collect();
                prop_assert_eq!(got, want);
            }
            let keys: Vec<&IndexKey> = idx.iter().map(|(k, _)| k).collect();
            prop_assert!(keys.windows(2).all(|w| w[0] <= w[1]));
        }
    }
}
