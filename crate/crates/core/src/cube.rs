//! Shared cloud cubes.
//!
//! A cube materializes every grouping set of a star query over plaintext key
//! dimensions. Each cell is one record of the table `cube:<name>`, shared at
//! all `n` CSPs; rolled-up dimensions are NULL. A plaintext `level` key (the
//! bitmask of rolled-up dimensions) disambiguates superaggregates from facts
//! whose own dimension key is NULL.

use std::collections::{BTreeSet, HashMap};
use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::field::Fe;
use crate::query::ast::{AggArg, AggFunc, BinOp, ColumnRef, CondOp, Condition, Literal, Query, SelectExpr, SelectItem, SelectList};
use crate::query::plan::{self, Measure, Output};
use crate::query::{execute, parse, QueryResult};
use crate::schema::{Column, ColumnType, IndexKey, TableSchema, Value};
use crate::sharing::share_value_everywhere;
use crate::store::index::Predicate;
use crate::warehouse::{RgChoice, Warehouse};

/// Table-name prefix of cube tables.
pub const CUBE_PREFIX: &str = "cube:";

/// A cube of `k` dimensions has `2^k` grouping sets; keep that sane.
pub const MAX_DIMENSIONS: usize = 12;

const CELL_COLUMN: &str = "cell";
const LEVEL_COLUMN: &str = "level";

/// Aggregates a cube cell can hold and refresh.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum CellFn {
    Sum,
    Count,
    Min,
    Max,
}

impl CellFn {
    fn agg(self) -> AggFunc {
        match self {
            CellFn::Sum => AggFunc::Sum,
            CellFn::Count => AggFunc::Count,
            CellFn::Min => AggFunc::Min,
            CellFn::Max => AggFunc::Max,
        }
    }
}

/// One stored measure column. AVG measures are backed by a SUM and a COUNT
/// column rather than stored themselves.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CubeColumn {
    pub func: CellFn,
    pub arg: AggArg,
    pub name: String,
}

/// A measure as the user asked for it.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CubeMeasure {
    pub func: AggFunc,
    pub arg: AggArg,
    pub label: String,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CubeSpec {
    pub name: String,
    /// `SELECT dims, measures FROM ... [WHERE ...] GROUP BY dims`.
    pub query: Query,
    /// Dimension key attributes, coarsest first.
    pub dimensions: Vec<ColumnRef>,
    pub measures: Vec<CubeMeasure>,
    pub columns: Vec<CubeColumn>,
}

fn arg_slug(arg: &AggArg) -> String {
    match arg {
        AggArg::Star => "all".to_string(),
        AggArg::Column(c) => c.name.clone(),
        AggArg::Binary(a, op, b) => {
            let word = match op {
                BinOp::Add => "plus",
                BinOp::Sub => "minus",
                BinOp::Mul => "times",
                BinOp::Div => "over",
            };
            format!("{}_{word}_{}", a.name, b.name)
        }
    }
}

impl CubeSpec {
    /// Builds a spec from a grouped query; the GROUP BY list gives the
    /// dimensions in hierarchy order.
    pub fn new(name: &str, sql: &str) -> Result<Self> {
        if name.is_empty() || !name.chars().all(|c| c.is_ascii_alphanumeric() || c == '_' || c == '-') {
            return Err(Error::InvalidConfig(format!("cube name `{name}` must be alphanumeric")));
        }
        let query = parse(sql)?;
        let dimensions = query.group_by.clone();
        if dimensions.is_empty() || dimensions.len() > MAX_DIMENSIONS {
            return Err(Error::InvalidConfig(format!("a cube needs 1..={MAX_DIMENSIONS} GROUP BY dimensions")));
        }
        for (i, d) in dimensions.iter().enumerate() {
            let clash = dimensions[..i].iter().any(|e| e.name.eq_ignore_ascii_case(&d.name))
                || d.name.eq_ignore_ascii_case(CELL_COLUMN)
                || d.name.eq_ignore_ascii_case(LEVEL_COLUMN);
            if clash {
                return Err(Error::InvalidConfig(format!("cube dimension name `{}` is taken", d.name)));
            }
        }
        let SelectList::Items(items) = &query.select else {
            return Err(Error::UnsupportedFeature("a cube needs explicit measures, not SELECT *".into()));
        };
        let mut measures = Vec::new();
        for item in items {
            match &item.expr {
                SelectExpr::Column(c) => {
                    if !dimensions.iter().any(|d| same_ref(d, c)) {
                        return Err(Error::InvalidConfig(format!("{c} is neither a dimension nor aggregated")));
                    }
                }
                SelectExpr::Aggregate { func, arg } => {
                    if !matches!(func, AggFunc::Sum | AggFunc::Count | AggFunc::Min | AggFunc::Max | AggFunc::Avg) {
                        return Err(Error::UnsupportedFeature(format!("cube measures cannot use {}", func.name())));
                    }
                    let label = item.alias.clone().unwrap_or_else(|| item.expr.to_string());
                    measures.push(CubeMeasure { func: *func, arg: arg.clone(), label });
                }
            }
        }
        if measures.is_empty() {
            return Err(Error::InvalidConfig("a cube needs at least one measure".into()));
        }
        let mut columns: Vec<CubeColumn> = Vec::new();
        let mut push = |func: CellFn, arg: &AggArg| {
            if columns.iter().any(|c| c.func == func && c.arg == *arg) {
                return;
            }
            let base = format!("{}_{}", func.agg().name().to_ascii_lowercase(), arg_slug(arg));
            let mut name = base.clone();
            let mut k = 2;
            while columns.iter().any(|c| c.name.eq_ignore_ascii_case(&name)) {
                name = format!("{base}_{k}");
                k += 1;
            }
            columns.push(CubeColumn { func, arg: arg.clone(), name });
        };
        for m in &measures {
            match m.func {
                AggFunc::Sum => push(CellFn::Sum, &m.arg),
                AggFunc::Count => push(CellFn::Count, &m.arg),
                AggFunc::Min => push(CellFn::Min, &m.arg),
                AggFunc::Max => push(CellFn::Max, &m.arg),
                AggFunc::Avg => {
                    push(CellFn::Sum, &m.arg);
                    push(CellFn::Count, &m.arg);
                }
                _ => unreachable!("rejected above"),
            }
        }
        Ok(Self { name: name.to_string(), query, dimensions, measures, columns })
    }

    pub fn table_name(&self) -> String {
        format!("{CUBE_PREFIX}{}", self.name)
    }

    /// Number of grouping sets.
    pub fn lattice_size(&self) -> usize {
        1 << self.dimensions.len()
    }

    fn column_index(&self, func: CellFn, arg: &AggArg) -> usize {
        self.columns.iter().position(|c| c.func == func && c.arg == *arg).expect("measure columns cover every measure")
    }

    /// Query of one grouping set: dimensions whose bit is set in `rolled`
    /// are aggregated away.
    fn grouping_query(&self, rolled: usize, extra: Option<Condition>) -> Query {
        self.grouping_query_counted(rolled, extra, false)
    }

    /// As [`grouping_query`](Self::grouping_query), optionally followed by a
    /// trailing `COUNT(*)` of joined rows.
    fn grouping_query_counted(&self, rolled: usize, extra: Option<Condition>, count_rows: bool) -> Query {
        let kept: Vec<ColumnRef> =
            self.dimensions.iter().enumerate().filter(|(i, _)| rolled & (1 << i) == 0).map(|(_, d)| d.clone()).collect();
        let mut items: Vec<SelectItem> =
            kept.iter().map(|d| SelectItem { expr: SelectExpr::Column(d.clone()), alias: None }).collect();
        items.extend(self.columns.iter().map(|c| SelectItem {
            expr: SelectExpr::Aggregate { func: c.func.agg(), arg: c.arg.clone() },
            alias: None,
        }));
        if count_rows {
            items.push(SelectItem { expr: SelectExpr::Aggregate { func: AggFunc::Count, arg: AggArg::Star }, alias: None });
        }
        let mut q = self.query.clone();
        q.select = SelectList::Items(items);
        q.group_by = kept;
        q.filters.extend(extra);
        q
    }
}

fn same_ref(a: &ColumnRef, b: &ColumnRef) -> bool {
    a.name.eq_ignore_ascii_case(&b.name)
        && match (&a.qualifier, &b.qualifier) {
            (Some(x), Some(y)) => x.eq_ignore_ascii_case(y),
            _ => true,
        }
}

impl fmt::Display for CubeSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "CUBE {} AS {}", self.name, self.query)
    }
}

impl FromStr for CubeSpec {
    type Err = Error;

    /// Parses `CUBE <name> AS SELECT ...`.
    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::Syntax { pos: 0, message: "expected `CUBE <name> AS SELECT ...`".into() };
        let mut words = s.trim_start().splitn(4, char::is_whitespace);
        let (Some(kw), Some(name), Some(as_kw), Some(rest)) = (words.next(), words.next(), words.next(), words.next()) else {
            return Err(bad());
        };
        if !kw.eq_ignore_ascii_case("CUBE") || !as_kw.eq_ignore_ascii_case("AS") {
            return Err(bad());
        }
        CubeSpec::new(name, rest)
    }
}

/// Storage type of each measure column, and whether it aggregates a key.
fn column_types(wh: &Warehouse, spec: &CubeSpec) -> Result<Vec<(ColumnType, bool)>> {
    let p = plan::plan(&spec.grouping_query(0, None), wh)?;
    for d in &p.group_by {
        if !d.is_key() {
            return Err(Error::UnsupportedFeature(format!("cube dimension {} is not a plaintext key", d.name)));
        }
    }
    p.outputs
        .iter()
        .filter_map(|o| match &o.expr {
            Output::Measure(m) => Some(m),
            _ => None,
        })
        .map(|m| match m {
            Measure::Sum(l) => Ok((if l.scale == 0 { ColumnType::Int } else { ColumnType::Real { scale: l.scale } }, false)),
            Measure::CountRows | Measure::Count(_) => Ok((ColumnType::Int, false)),
            Measure::Order(_, c) if c.is_key() => Ok((ColumnType::Int, true)),
            Measure::Order(_, c) if c.ty.is_numeric() => Ok((c.ty, false)),
            Measure::Order(_, c) => Err(Error::UnsupportedFeature(format!("cube MIN/MAX over {} column {}", c.ty, c.name))),
            other => unreachable!("cube columns never plan to {other:?}"),
        })
        .collect()
}

fn require_all_alive(wh: &Warehouse) -> Result<()> {
    match (1..=wh.n()).find(|&c| !wh.alive().contains(c)) {
        Some(dead) => Err(Error::CspUnavailable(dead)),
        None => Ok(()),
    }
}

fn encode_cell(wh: &Warehouse, v: &Value, ty: ColumnType) -> Result<Option<Fe>> {
    let v = match v {
        Value::Null => return Ok(None),
        Value::Key(k) => Value::Int(i64::try_from(*k).map_err(|_| Error::OutOfRange(format!("key {k}")))?),
        other => other.clone(),
    };
    Ok(Some(wh.codec().encode(&v, ty)?.chunks[0]))
}

/// Cube coordinates: rolled-up mask plus one key per dimension.
type CellKey = (u64, Vec<Option<u64>>);

fn cell_key(spec: &CubeSpec, rolled: usize, labels: &[Value]) -> CellKey {
    let mut it = labels.iter();
    let dims = (0..spec.dimensions.len())
        .map(|i| {
            if rolled & (1 << i) != 0 {
                return None;
            }
            match it.next().expect("one label per kept dimension") {
                Value::Key(k) => Some(*k),
                _ => None,
            }
        })
        .collect();
    (rolled as u64, dims)
}

fn cell_map(wh: &Warehouse, spec: &CubeSpec) -> Result<HashMap<CellKey, u64>> {
    let k = spec.dimensions.len();
    let loc = wh.index().location(&spec.table_name())?;
    Ok(loc
        .entries
        .iter()
        .map(|(&pk, e)| ((e.keys[k].expect("level is always set"), e.keys[..k].to_vec()), pk))
        .collect())
}

fn put_cell(wh: &mut Warehouse, spec: &CubeSpec, types: &[(ColumnType, bool)], pk: u64, key: &CellKey, vals: &[Value]) -> Result<()> {
    let mut keys = key.1.clone();
    keys.push(Some(key.0));
    let mut cells = vec![None; keys.len()];
    keys.extend(std::iter::repeat_n(None, vals.len()));
    for (v, (ty, _)) in vals.iter().zip(types) {
        cells.push(encode_cell(wh, v, *ty)?);
    }
    wh.put_everywhere(&spec.table_name(), pk, &keys, &cells)
}

/// Computes every grouping set through the query module and stores the
/// cells at all `n` CSPs. Returns the number of cells.
pub fn cube_build(wh: &mut Warehouse, spec: &CubeSpec, rg: &RgChoice) -> Result<usize> {
    require_all_alive(wh)?;
    let types = column_types(wh, spec)?;
    let mut columns = vec![Column { name: CELL_COLUMN.into(), ty: ColumnType::PrimaryKey }];
    columns.extend(spec.dimensions.iter().map(|d| Column { name: d.name.clone(), ty: ColumnType::ForeignKey }));
    columns.push(Column { name: LEVEL_COLUMN.into(), ty: ColumnType::ForeignKey });
    columns.extend(spec.columns.iter().zip(&types).map(|(c, (ty, _))| Column { name: c.name.clone(), ty: *ty }));

    let mut cells: Vec<(CellKey, Vec<Value>)> = Vec::new();
    for rolled in 0..spec.lattice_size() {
        let p = plan::plan(&spec.grouping_query(rolled, None), wh)?;
        let kept = p.group_by.len();
        for row in execute(&p, wh, rg)?.rows {
            cells.push((cell_key(spec, rolled, &row[..kept]), row[kept..].to_vec()));
        }
    }
    wh.create_table(TableSchema::new(spec.table_name(), columns)?)?;
    for (i, (key, vals)) in cells.iter().enumerate() {
        put_cell(wh, spec, &types, i as u64 + 1, key, vals)?;
    }
    Ok(cells.len())
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct RefreshReport {
    pub facts: usize,
    pub cells_created: usize,
    pub cells_updated: usize,
}

/// Loads new fact records and brings the cube up to date:
/// SUM cells by adding a sharing of the increment to the stored shares,
/// COUNT cells by reconstructing, incrementing and re-sharing, MIN/MAX
/// cells by re-sharing the extremum found through the Type II index.
pub fn cube_refresh(wh: &mut Warehouse, spec: &CubeSpec, rows: Vec<Vec<Value>>, rg: &RgChoice) -> Result<RefreshReport> {
    if rows.is_empty() {
        return Ok(RefreshReport::default());
    }
    require_all_alive(wh)?;
    let types = column_types(wh, spec)?;
    let fact = plan::plan(&spec.grouping_query(0, None), wh)?.sources[0].table.clone();
    let schema = wh.schema(&fact)?.clone();
    let existing = wh.index().location(&fact)?;
    let mut fresh = BTreeSet::new();
    for row in &rows {
        let pk = schema.pk_of(row)?;
        if existing.get(pk).is_some() || !fresh.insert(pk) {
            return Err(Error::SchemaMismatch(format!("cube refresh takes new {fact} records only; key {pk} repeats")));
        }
    }
    let facts = rows.len();
    wh.insert_rows(&fact, rows)?;

    let mut h = Sha256::new();
    h.update(spec.table_name().as_bytes());
    fresh.iter().for_each(|pk| h.update(pk.to_be_bytes()));
    let nonce = h.finalize();

    let table = spec.table_name();
    let k = spec.dimensions.len();
    let first_measure = k + 1;
    let needs_full = spec.columns.iter().any(|c| matches!(c.func, CellFn::Min | CellFn::Max));
    let new_keys = CondOp::In(fresh.iter().map(|pk| Literal { text: pk.to_string(), quoted: false }).collect());
    let pk_ref = ColumnRef::new(Some(spec.query.from.visible_name()), schema.pk_name());
    let mut cells = cell_map(wh, spec)?;
    let mut next_pk = cells.values().max().copied().unwrap_or(0) + 1;
    let mut report = RefreshReport { facts, ..Default::default() };

    for rolled in 0..spec.lattice_size() {
        let cond = Condition { column: pk_ref.clone(), op: new_keys.clone() };
        let p = plan::plan(&spec.grouping_query_counted(rolled, Some(cond), true), wh)?;
        let kept = p.group_by.len();
        // The ungrouped set yields a row even when no new fact survives the filters.
        let delta: Vec<_> = execute(&p, wh, rg)?.rows.into_iter().filter(|r| r.last() != Some(&Value::Int(0))).collect();
        let full: HashMap<CellKey, Vec<Value>> = if needs_full && !delta.is_empty() {
            let p = plan::plan(&spec.grouping_query(rolled, None), wh)?;
            execute(&p, wh, rg)?.rows.into_iter().map(|r| (cell_key(spec, rolled, &r[..kept]), r[kept..].to_vec())).collect()
        } else {
            HashMap::new()
        };
        for row in delta {
            let key = cell_key(spec, rolled, &row[..kept]);
            let inc = &row[kept..];
            let Some(&pk) = cells.get(&key) else {
                let vals: Vec<Value> = spec
                    .columns
                    .iter()
                    .enumerate()
                    .map(|(j, c)| match c.func {
                        CellFn::Min | CellFn::Max => full[&key][j].clone(),
                        _ => inc[j].clone(),
                    })
                    .collect();
                put_cell(wh, spec, &types, next_pk, &key, &vals)?;
                cells.insert(key, next_pk);
                next_pk += 1;
                report.cells_created += 1;
                continue;
            };
            let mut current: Option<Vec<Option<Vec<Fe>>>> = None;
            for (j, c) in spec.columns.iter().enumerate() {
                let col = first_measure + j;
                let ty = types[j].0;
                match c.func {
                    CellFn::Sum => {
                        let Some(units) = inc[j].units(ty) else { continue };
                        let was_null = wh.index().location(&table)?.get(pk).expect("cell exists").nulls[col];
                        if was_null {
                            let v = encode_cell(wh, &inc[j], ty)?;
                            wh.set_everywhere(&table, pk, col, v, &nonce)?;
                        } else {
                            let d = wh.scheme().field().elem_signed(units);
                            let seed = [table.as_bytes(), &pk.to_be_bytes(), &(col as u64).to_be_bytes(), &nonce[..]].concat();
                            let shares = share_value_everywhere(wh.scheme(), d, &seed)?;
                            wh.add_to_everywhere(&table, pk, col, |i| shares[i - 1])?;
                        }
                    }
                    CellFn::Count => {
                        let Value::Int(add) = inc[j] else { unreachable!("COUNT yields integers") };
                        if add == 0 {
                            continue;
                        }
                        if current.is_none() {
                            current = Some(wh.reconstruct_raw(&table, pk, rg)?);
                        }
                        let raw = current.as_ref().expect("just set")[col].as_deref().unwrap_or(&[]);
                        let Value::Int(old) = wh.codec().decode(raw, ty)? else { unreachable!("count column is int") };
                        let v = encode_cell(wh, &Value::Int(old + add), ty)?;
                        wh.set_everywhere(&table, pk, col, v, &nonce)?;
                    }
                    CellFn::Min | CellFn::Max => {
                        let v = encode_cell(wh, &full[&key][j], ty)?;
                        wh.set_everywhere(&table, pk, col, v, &nonce)?;
                    }
                }
            }
            report.cells_updated += 1;
        }
    }
    Ok(report)
}

fn key_predicate(c: &Condition) -> Result<Predicate> {
    let key = |l: &Literal| -> Result<IndexKey> {
        l.text
            .parse::<u64>()
            .map(|k| IndexKey::Num(k as i128))
            .map_err(|_| Error::SchemaMismatch(format!("cube dimensions are keys; `{}` is not one", l.text)))
    };
    use crate::query::ast::CmpOp;
    Ok(match &c.op {
        CondOp::Cmp(op, l) => {
            let k = key(l)?;
            match op {
                CmpOp::Eq => Predicate::Eq(k),
                CmpOp::Ne => Predicate::Ne(k),
                CmpOp::Lt => Predicate::Lt(k),
                CmpOp::Le => Predicate::Le(k),
                CmpOp::Gt => Predicate::Gt(k),
                CmpOp::Ge => Predicate::Ge(k),
            }
        }
        CondOp::Between(a, b) => Predicate::Between(key(a)?, key(b)?),
        CondOp::In(vs) => Predicate::In(vs.iter().map(key).collect::<Result<_>>()?),
        CondOp::IsNull => Predicate::IsNull,
        CondOp::IsNotNull => Predicate::IsNotNull,
    })
}

/// Selects cells by a conjunction of key predicates on the dimensions
/// (`YearID = 2014 AND MonthID IS NULL`, empty for all cells) and
/// reconstructs their measures. Rows come back in cell order.
pub fn cube_query(wh: &Warehouse, spec: &CubeSpec, slice: &str, rg: &RgChoice) -> Result<QueryResult> {
    let table = spec.table_name();
    let types = column_types(wh, spec)?;
    let k = spec.dimensions.len();
    let mut preds: Vec<(usize, Predicate)> = Vec::new();
    if !slice.trim().is_empty() {
        let q = parse(&format!("SELECT * FROM cube WHERE {slice}"))?;
        for c in &q.filters {
            let dim = spec
                .dimensions
                .iter()
                .position(|d| d.name.eq_ignore_ascii_case(&c.column.name))
                .ok_or_else(|| Error::UnknownColumn(format!("{} is not a dimension of cube {}", c.column, spec.name)))?;
            preds.push((dim, key_predicate(c)?));
        }
    }
    let loc = wh.index().location(&table)?;
    let chosen: Vec<u64> = loc
        .entries
        .iter()
        .filter(|(_, e)| preds.iter().all(|(d, p)| p.matches(e.keys[*d].map(|v| IndexKey::Num(v as i128)).as_ref())))
        .map(|(&pk, _)| pk)
        .collect();
    let rows: Vec<Vec<Value>> = chosen.par_iter().map(|&pk| wh.reconstruct_row(&table, pk, rg)).collect::<Result<_>>()?;

    let mut columns: Vec<String> = spec.dimensions.iter().map(|d| d.name.clone()).collect();
    columns.extend(spec.measures.iter().map(|m| m.label.clone()));
    let out = rows
        .into_iter()
        .map(|r| {
            // r: cell, dims.., level, measure columns..
            let stored = &r[k + 2..];
            let mut row: Vec<Value> = r[1..=k].to_vec();
            for m in &spec.measures {
                let v = match m.func {
                    AggFunc::Avg => {
                        let s = spec.column_index(CellFn::Sum, &m.arg);
                        let c = spec.column_index(CellFn::Count, &m.arg);
                        match (&stored[s], &stored[c]) {
                            (sum, Value::Int(n)) if *n > 0 && !sum.is_null() => {
                                let ty = types[s].0;
                                let units = sum.units(ty).expect("numeric sum");
                                Value::Real(units as f64 / *n as f64 / 10f64.powi(ty.scale() as i32))
                            }
                            _ => Value::Null,
                        }
                    }
                    f => {
                        let cf = match f {
                            AggFunc::Sum => CellFn::Sum,
                            AggFunc::Count => CellFn::Count,
                            AggFunc::Min => CellFn::Min,
                            _ => CellFn::Max,
                        };
                        let j = spec.column_index(cf, &m.arg);
                        match (&stored[j], types[j].1) {
                            (Value::Int(x), true) => Value::Key(*x as u64),
                            (v, _) => v.clone(),
                        }
                    }
                };
                row.push(v);
            }
            row
        })
        .collect();
    Ok(QueryResult { columns, rows: out })
}
