//! Plan execution: key joins and filters on the index server, homomorphic
//! sums recombined from per-CSP partial aggregates, order statistics from
//! Type II indices, and client-side finishing arithmetic.

use std::collections::{BTreeMap, BTreeSet, HashMap};

use rayon::prelude::*;

use super::ast::{AggArg, AggFunc, BinOp, ColumnRef};
use super::plan::{BoundColumn, ColKind, Linear, Measure, OrderFn, Output, QueryPlan};
use crate::error::{Error, Result};
use crate::schema::{ColumnType, IndexKey, Value};
use crate::store::index::{LocationIndex, OrderIndex};
use crate::warehouse::{RgChoice, Warehouse};

#[derive(Clone, Debug, Default, PartialEq)]
pub struct QueryResult {
    pub columns: Vec<String>,
    pub rows: Vec<Vec<Value>>,
}

/// Multiplicity of each record key of one table in a selection.
pub type Weights = BTreeMap<u64, u64>;

struct Ctx<'a> {
    wh: &'a Warehouse,
    tables: Vec<&'a str>,
    locs: Vec<&'a LocationIndex>,
    rg: &'a RgChoice,
}

impl<'a> Ctx<'a> {
    fn new(wh: &'a Warehouse, tables: Vec<&'a str>, rg: &'a RgChoice) -> Result<Self> {
        let locs = tables.iter().map(|t| wh.index().location(t)).collect::<Result<_>>()?;
        Ok(Self { wh, tables, locs, rg })
    }

    fn key_value(&self, c: &BoundColumn, pk: u64) -> Option<u64> {
        match c.kind {
            ColKind::PrimaryKey => Some(pk),
            ColKind::ForeignKey(i) => self.locs[c.source].get(pk).and_then(|e| e.keys[i]),
            ColKind::Shared(_) => None,
        }
    }

    fn is_null(&self, c: &BoundColumn, pk: u64) -> bool {
        match c.kind {
            ColKind::PrimaryKey => false,
            ColKind::ForeignKey(i) | ColKind::Shared(i) => self.locs[c.source].get(pk).is_none_or(|e| e.nulls[i]),
        }
    }

    fn order_index(&self, c: &BoundColumn) -> Result<&'a OrderIndex> {
        self.wh.index().order_index(self.tables[c.source], &c.name)
    }

    /// Exact scaled sum and non-null weight of a linear combination.
    fn linear_sum(&self, l: &Linear, w: &Weights) -> Result<Option<(i128, u64)>> {
        let loc = self.locs[l.source];
        let first = l.terms[0].stored;
        let mut weight = 0u64;
        for (&pk, &m) in w {
            let e = loc.get(pk).ok_or_else(|| Error::UnknownRecord { table: self.tables[l.source].to_string(), pk })?;
            if l.terms.iter().any(|t| e.nulls[t.stored] != e.nulls[first]) {
                return Err(Error::SchemaMismatch(format!(
                    "{} mixes NULL and non-NULL operands at key {pk}",
                    l.text
                )));
            }
            if !e.nulls[first] {
                weight += m;
            }
        }
        if weight == 0 {
            return Ok(None);
        }
        let weighted: Vec<(u64, u64)> = w.iter().map(|(&pk, &m)| (pk, m)).collect();
        let terms: Vec<(usize, i64)> = l.terms.iter().map(|t| (t.stored, t.coef)).collect();
        let raw = self.wh.sum_terms(self.tables[l.source], &weighted, &terms, self.rg)?;
        let biased: i128 = l.terms.iter().filter(|t| t.ty.biased()).map(|t| t.coef as i128).sum();
        let units = self.wh.codec().unbias_sum(raw, biased * weight as i128, ColumnType::Int);
        Ok(Some((units, weight)))
    }

    fn count(&self, c: &BoundColumn, w: &Weights) -> u64 {
        w.iter().filter(|(&pk, _)| !self.is_null(c, pk)).map(|(_, &m)| m).sum()
    }

    fn reconstruct_column(&self, c: &BoundColumn, pk: u64) -> Result<Value> {
        let row = self.wh.reconstruct_row(self.tables[c.source], pk, self.rg)?;
        let schema = self.wh.schema(self.tables[c.source])?;
        let i = schema.column_index(&c.name).expect("bound column");
        Ok(row[i].clone())
    }

    fn order(&self, f: OrderFn, c: &BoundColumn, w: &Weights) -> Result<Value> {
        if c.is_key() {
            let mut vals: Vec<(u64, u64)> = w.iter().filter_map(|(&pk, &m)| self.key_value(c, pk).map(|k| (k, m))).collect();
            vals.sort_unstable();
            return Ok(pick_weighted(f, vals.iter().map(|&(k, m)| (k, m))).map_or(Value::Null, Value::Key));
        }
        let idx = self.order_index(c)?;
        let entries = idx.iter().filter_map(|(k, pk)| w.get(&pk).map(|&m| ((k, pk), m)));
        let chosen = match f {
            OrderFn::Max => {
                // smallest key among the records holding the largest value
                let all: Vec<(&IndexKey, u64)> = idx.iter().filter(|(_, pk)| w.contains_key(pk)).collect();
                all.last().map(|(top, _)| all.iter().find(|(k, _)| k == top).expect("present").1)
            }
            _ => pick_weighted(f, entries).map(|(_, pk)| pk),
        };
        match chosen {
            None => Ok(Value::Null),
            Some(pk) => self.reconstruct_column(c, pk),
        }
    }

    fn measure(&self, m: &Measure, weights: &dyn Fn(usize) -> Weights, rows: u64) -> Result<Value> {
        Ok(match m {
            Measure::CountRows => Value::Int(rows as i64),
            Measure::Count(c) => Value::Int(self.count(c, &weights(c.source)) as i64),
            Measure::Sum(l) => match self.linear_sum(l, &weights(l.source))? {
                None => Value::Null,
                Some((units, _)) => Value::from_units(units, sum_type(l.scale))?,
            },
            Measure::Avg(l) => match self.linear_sum(l, &weights(l.source))? {
                None => Value::Null,
                Some((units, n)) => Value::Real(units as f64 / n as f64 / 10f64.powi(l.scale as i32)),
            },
            Measure::Var { x, square } | Measure::Stddev { x, square } => {
                let w = weights(x.source);
                let Some((s1, n)) = self.linear_sum(x, &w)? else { return Ok(Value::Null) };
                let sq = Linear {
                    source: x.source,
                    terms: vec![super::plan::Term { stored: *square, coef: 1, ty: sum_type(2 * x.scale) }],
                    scale: 2 * x.scale,
                    text: format!("{}^2", x.text),
                };
                let (s2, _) = self.linear_sum(&sq, &w)?.expect("same null pattern as x");
                let var = variance(s1, s2, n, x.scale)?;
                Value::Real(if matches!(m, Measure::Var { .. }) { var } else { var.sqrt() })
            }
            Measure::Order(f, c) => self.order(*f, c, &weights(c.source))?,
        })
    }
}

fn sum_type(scale: u32) -> ColumnType {
    if scale == 0 {
        ColumnType::Int
    } else {
        ColumnType::Real { scale }
    }
}

/// Population variance from exact scaled sums: `(n·S2 − S1²) / n²`.
fn variance(s1: i128, s2: i128, n: u64, scale: u32) -> Result<f64> {
    let n = n as i128;
    let overflow = || Error::OutOfRange("variance numerator overflows 128 bits".into());
    let num = n.checked_mul(s2).ok_or_else(overflow)?.checked_sub(s1.checked_mul(s1).ok_or_else(overflow)?).ok_or_else(overflow)?;
    Ok(num as f64 / (n * n) as f64 / 10f64.powi(2 * scale as i32))
}

/// MIN, MAX or lower MEDIAN of a sorted weighted sequence.
fn pick_weighted<T: Copy>(f: OrderFn, items: impl Iterator<Item = (T, u64)>) -> Option<T> {
    match f {
        OrderFn::Min => items.into_iter().next().map(|(v, _)| v),
        OrderFn::Max => items.into_iter().last().map(|(v, _)| v),
        OrderFn::Median => {
            let all: Vec<(T, u64)> = items.collect();
            let total: u64 = all.iter().map(|(_, m)| m).sum();
            if total == 0 {
                return None;
            }
            let target = (total - 1) / 2;
            let mut seen = 0;
            for (v, m) in all {
                seen += m;
                if seen > target {
                    return Some(v);
                }
            }
            None
        }
    }
}

/// Joined records as one key per source.
fn join_rows(plan: &QueryPlan, ctx: &Ctx<'_>) -> Result<Vec<Vec<u64>>> {
    let n = plan.sources.len();
    let mut allowed: Vec<Option<BTreeSet<u64>>> = vec![None; n];
    for f in &plan.filters {
        let s = f.column.source;
        let hits: BTreeSet<u64> = if f.column.is_key() {
            ctx.locs[s]
                .pks()
                .filter(|&pk| f.predicate.matches(ctx.key_value(&f.column, pk).map(|k| IndexKey::Num(k as i128)).as_ref()))
                .collect()
        } else {
            ctx.wh.index().type2_lookup(ctx.tables[s], &f.column.name, &f.predicate)?
        };
        allowed[s] = Some(match allowed[s].take() {
            None => hits,
            Some(prev) => prev.intersection(&hits).copied().collect(),
        });
    }
    let keep = |s: usize, pk: u64| allowed[s].as_ref().is_none_or(|a| a.contains(&pk));
    let mut rows: Vec<Vec<u64>> = ctx.locs[0].pks().filter(|&pk| keep(0, pk)).map(|pk| vec![pk]).collect();
    for j in &plan.joins {
        let s = j.incoming.source;
        let mut by_key: HashMap<u64, Vec<u64>> = HashMap::new();
        for pk in ctx.locs[s].pks().filter(|&pk| keep(s, pk)) {
            if let Some(k) = ctx.key_value(&j.incoming, pk) {
                by_key.entry(k).or_default().push(pk);
            }
        }
        let mut next = Vec::with_capacity(rows.len());
        for row in rows {
            let Some(k) = ctx.key_value(&j.existing, row[j.existing.source]) else { continue };
            for &pk in by_key.get(&k).map(Vec::as_slice).unwrap_or(&[]) {
                let mut r = row.clone();
                r.push(pk);
                next.push(r);
            }
        }
        rows = next;
    }
    Ok(rows)
}

fn group_key(ctx: &Ctx<'_>, c: &BoundColumn, pk: u64) -> Result<Option<IndexKey>> {
    if c.is_key() {
        return Ok(ctx.key_value(c, pk).map(|k| IndexKey::Num(k as i128)));
    }
    Ok(ctx.order_index(c)?.key_of(pk).cloned())
}

fn label_value(c: &BoundColumn, k: &Option<IndexKey>) -> Result<Value> {
    match k {
        None => Ok(Value::Null),
        Some(k) if c.is_key() => k.to_value(ColumnType::ForeignKey),
        Some(k) => k.to_value(c.ty),
    }
}

/// Runs a plan and returns plaintext rows. Grouped results come back in
/// ascending group-key order, others in load order of the FROM table.
pub fn execute(plan: &QueryPlan, wh: &Warehouse, rg: &RgChoice) -> Result<QueryResult> {
    let tables: Vec<&str> = plan.sources.iter().map(|s| s.table.as_str()).collect();
    let ctx = Ctx::new(wh, tables, rg)?;
    let rows = join_rows(plan, &ctx)?;
    let columns = plan.outputs.iter().map(|o| o.name.clone()).collect();

    if !plan.grouped {
        let mut needed: BTreeSet<(usize, u64)> = BTreeSet::new();
        for o in &plan.outputs {
            if let Output::Plain(c) = &o.expr {
                if !c.is_key() {
                    needed.extend(rows.iter().map(|r| (c.source, r[c.source])));
                }
            }
        }
        let fetched: HashMap<(usize, u64), Vec<Value>> = needed
            .into_par_iter()
            .map(|(s, pk)| Ok(((s, pk), wh.reconstruct_row(ctx.tables[s], pk, rg)?)))
            .collect::<Result<_>>()?;
        let schemas: Vec<_> = ctx.tables.iter().map(|t| wh.schema(t)).collect::<Result<_>>()?;
        let out = rows
            .iter()
            .map(|r| {
                plan.outputs
                    .iter()
                    .map(|o| match &o.expr {
                        Output::Plain(c) if c.is_key() => ctx.key_value(c, r[c.source]).map_or(Value::Null, Value::Key),
                        Output::Plain(c) => {
                            let i = schemas[c.source].column_index(&c.name).expect("bound");
                            fetched[&(c.source, r[c.source])][i].clone()
                        }
                        _ => unreachable!("ungrouped plans only project columns"),
                    })
                    .collect()
            })
            .collect();
        return Ok(QueryResult { columns, rows: out });
    }

    let mut groups: BTreeMap<Vec<Option<IndexKey>>, Vec<usize>> = BTreeMap::new();
    if plan.group_by.is_empty() {
        groups.insert(Vec::new(), (0..rows.len()).collect());
    } else {
        for (i, r) in rows.iter().enumerate() {
            let key = plan.group_by.iter().map(|c| group_key(&ctx, c, r[c.source])).collect::<Result<Vec<_>>>()?;
            groups.entry(key).or_default().push(i);
        }
    }
    let out = groups
        .into_par_iter()
        .map(|(key, members)| {
            let weights = |s: usize| -> Weights {
                let mut w = Weights::new();
                for &i in &members {
                    *w.entry(rows[i][s]).or_default() += 1;
                }
                w
            };
            plan.outputs
                .iter()
                .map(|o| match &o.expr {
                    Output::Label(i) => label_value(&plan.group_by[*i], &key[*i]),
                    Output::Measure(m) => ctx.measure(m, &weights, members.len() as u64),
                    Output::Plain(_) => unreachable!("grouped plans project labels"),
                })
                .collect::<Result<Vec<_>>>()
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(QueryResult { columns, rows: out })
}

/// Parses, plans and executes one query.
pub fn run(wh: &Warehouse, text: &str, rg: &RgChoice) -> Result<QueryResult> {
    let q = super::parser::parse(text)?;
    let p = super::plan::plan(&q, wh)?;
    execute(&p, wh, rg)
}

fn unit_weights(pks: &[u64]) -> Weights {
    let mut w = Weights::new();
    for &pk in pks {
        *w.entry(pk).or_default() += 1;
    }
    w
}

fn single(wh: &Warehouse, table: &str, func: AggFunc, arg: AggArg, pks: &[u64], rg: &RgChoice) -> Result<(Value, u64)> {
    let m = super::plan::bind_measure(wh, table, func, &arg)?;
    let ctx = Ctx::new(wh, vec![table], rg)?;
    let w = unit_weights(pks);
    let v = ctx.measure(&m, &|_| w.clone(), pks.len() as u64)?;
    Ok((v, pks.len() as u64))
}

fn col(name: &str) -> ColumnRef {
    ColumnRef::new(None, name)
}

fn zero_if_null(v: Value, wh: &Warehouse, table: &str, column: &str) -> Result<Value> {
    if !v.is_null() {
        return Ok(v);
    }
    Ok(match wh.schema(table)?.column(column)?.ty {
        ColumnType::Real { .. } => Value::Real(0.0),
        _ => Value::Int(0),
    })
}

/// SUM of one column over the given records; zero when none is non-null.
pub fn exec_sum(wh: &Warehouse, table: &str, column: &str, pks: &[u64], rg: &RgChoice) -> Result<Value> {
    let (v, _) = single(wh, table, AggFunc::Sum, AggArg::Column(col(column)), pks, rg)?;
    zero_if_null(v, wh, table, column)
}

/// SUM(x ± y) over the given records; zero when none is non-null.
pub fn exec_sum_combined(wh: &Warehouse, table: &str, x: &str, op: BinOp, y: &str, pks: &[u64], rg: &RgChoice) -> Result<Value> {
    if !matches!(op, BinOp::Add | BinOp::Sub) {
        return Err(Error::UnsupportedFeature("combined sums take + or -".into()));
    }
    let (v, _) = single(wh, table, AggFunc::Sum, AggArg::Binary(col(x), op, col(y)), pks, rg)?;
    zero_if_null(v, wh, table, x)
}

fn real_or_empty(v: Value) -> Result<f64> {
    match v {
        Value::Real(x) => Ok(x),
        Value::Null => Err(Error::EmptyInput),
        other => unreachable!("real-valued aggregate produced {other:?}"),
    }
}

pub fn exec_avg(wh: &Warehouse, table: &str, column: &str, pks: &[u64], rg: &RgChoice) -> Result<f64> {
    real_or_empty(single(wh, table, AggFunc::Avg, AggArg::Column(col(column)), pks, rg)?.0)
}

/// Population variance; needs the `column^2` Type III column.
pub fn exec_var(wh: &Warehouse, table: &str, column: &str, pks: &[u64], rg: &RgChoice) -> Result<f64> {
    real_or_empty(single(wh, table, AggFunc::Var, AggArg::Column(col(column)), pks, rg)?.0)
}

pub fn exec_stddev(wh: &Warehouse, table: &str, column: &str, pks: &[u64], rg: &RgChoice) -> Result<f64> {
    real_or_empty(single(wh, table, AggFunc::Stddev, AggArg::Column(col(column)), pks, rg)?.0)
}

/// MIN, MAX, MEDIAN (reconstructed value of the chosen record) or COUNT.
pub fn exec_minmax_count(
    wh: &Warehouse,
    table: &str,
    column: &str,
    func: AggFunc,
    pks: &[u64],
    rg: &RgChoice,
) -> Result<Value> {
    if !matches!(func, AggFunc::Min | AggFunc::Max | AggFunc::Median | AggFunc::Count) {
        return Err(Error::UnsupportedFeature(format!("{} is not an order aggregate", func.name())));
    }
    let (v, _) = single(wh, table, func, AggArg::Column(col(column)), pks, rg)?;
    if v.is_null() && func != AggFunc::Count {
        return Err(Error::EmptyInput);
    }
    Ok(v)
}
