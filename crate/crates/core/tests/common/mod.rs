//! Shared test fixtures: an unshared reference database, a plaintext query
//! evaluator used as oracle, and random schema/data/query generators.
#![allow(dead_code)]

use std::cmp::Ordering;
use std::collections::BTreeMap;

use chrono::NaiveDate;
use fvss_core::query::ast::*;
use fvss_core::schema::{ColumnType, Derived, TableSchema, Value};
use fvss_core::warehouse::{Warehouse, WarehouseParams};
use rand::seq::IndexedRandom;
use rand::{Rng, RngCore};

/// Relative tolerance for real-valued aggregates (AVG, VAR, STDDEV).
pub const REL_TOL: f64 = 1e-9;

#[derive(Clone, Debug)]
pub struct PlainTable {
    pub schema: TableSchema,
    pub rows: Vec<Vec<Value>>,
}

#[derive(Clone, Debug, Default)]
pub struct PlainDb {
    pub tables: Vec<PlainTable>,
}

impl PlainDb {
    pub fn add(&mut self, schema: TableSchema) {
        self.tables.push(PlainTable { schema, rows: Vec::new() });
    }

    pub fn table(&self, name: &str) -> &PlainTable {
        self.tables.iter().find(|t| t.schema.name.eq_ignore_ascii_case(name)).expect("known table")
    }

    /// Inserts or replaces (by primary key, keeping position).
    pub fn upsert(&mut self, table: &str, row: Vec<Value>) {
        let t = self.tables.iter_mut().find(|t| t.schema.name == table).expect("known table");
        let pk = t.schema.pk_index();
        match t.rows.iter_mut().find(|r| r[pk] == row[pk]) {
            Some(r) => *r = row,
            None => t.rows.push(row),
        }
    }
}

fn units(v: &Value, ty: ColumnType) -> Option<i128> {
    let s = ty.scale();
    match v {
        Value::Int(x) => Some(*x as i128 * 10i128.pow(s)),
        Value::Real(x) => Some((x * 10f64.powi(s as i32)).round() as i128),
        Value::Bool(b) => Some(*b as i128),
        _ => None,
    }
}

fn cmp_values(a: &Value, b: &Value) -> Ordering {
    match (a, b) {
        (Value::Key(x), Value::Key(y)) => x.cmp(y),
        (Value::Int(x), Value::Int(y)) => x.cmp(y),
        (Value::Real(x), Value::Real(y)) => x.total_cmp(y),
        (Value::Int(x), Value::Real(y)) => (*x as f64).total_cmp(y),
        (Value::Real(x), Value::Int(y)) => x.total_cmp(&(*y as f64)),
        (Value::Text(x), Value::Text(y)) => x.as_bytes().cmp(y.as_bytes()),
        (Value::Date(x), Value::Date(y)) => x.cmp(y),
        (Value::Bool(x), Value::Bool(y)) => x.cmp(y),
        (Value::Null, Value::Null) => Ordering::Equal,
        (Value::Null, _) => Ordering::Less,
        (_, Value::Null) => Ordering::Greater,
        _ => panic!("incomparable {a:?} {b:?}"),
    }
}

struct Bound<'a> {
    aliases: Vec<(String, &'a PlainTable)>,
}

impl<'a> Bound<'a> {
    fn col(&self, c: &ColumnRef) -> Result<(usize, usize, ColumnType), String> {
        let hits: Vec<(usize, usize, ColumnType)> = self
            .aliases
            .iter()
            .enumerate()
            .filter(|(_, (a, _))| c.qualifier.as_ref().is_none_or(|q| q.eq_ignore_ascii_case(a)))
            .filter_map(|(s, (_, t))| {
                t.schema.columns.iter().position(|k| k.name.eq_ignore_ascii_case(&c.name)).map(|i| (s, i, t.schema.columns[i].ty))
            })
            .collect();
        match hits.as_slice() {
            [one] => Ok(*one),
            _ => Err(format!("cannot bind {c}")),
        }
    }
}

/// Evaluates `q` on unshared data with textbook SQL semantics.
pub fn oracle(db: &PlainDb, q: &Query) -> Result<Vec<Vec<Value>>, String> {
    let mut b = Bound { aliases: vec![(q.from.visible_name().to_string(), db.table(&q.from.name))] };
    let mut rows: Vec<Vec<&Vec<Value>>> = b.aliases[0].1.rows.iter().map(|r| vec![r]).collect();
    for j in &q.joins {
        b.aliases.push((j.table.visible_name().to_string(), db.table(&j.table.name)));
        let (l, r) = (b.col(&j.left)?, b.col(&j.right)?);
        let new = b.aliases.len() - 1;
        let (old, newc) = if l.0 == new { (r, l) } else { (l, r) };
        let table = b.aliases[new].1;
        let mut next = Vec::new();
        for row in rows {
            for cand in &table.rows {
                let lv = &row[old.0][old.1];
                if !lv.is_null() && *lv == cand[newc.1] {
                    let mut r2 = row.clone();
                    r2.push(cand);
                    next.push(r2);
                }
            }
        }
        rows = next;
    }
    for f in &q.filters {
        let (s, i, ty) = b.col(&f.column)?;
        let ty = if ty.is_key() { ColumnType::ForeignKey } else { ty };
        let lit = |l: &Literal| Value::parse(&l.text, ty).map_err(|e| e.to_string());
        let pred: Box<dyn Fn(&Value) -> bool> = match &f.op {
            CondOp::IsNull => Box::new(|v: &Value| v.is_null()),
            CondOp::IsNotNull => Box::new(|v: &Value| !v.is_null()),
            CondOp::Cmp(op, l) => {
                let l = lit(l)?;
                let op = *op;
                Box::new(move |v: &Value| {
                    !v.is_null() && {
                        let o = cmp_values(v, &l);
                        match op {
                            CmpOp::Eq => o == Ordering::Equal,
                            CmpOp::Ne => o != Ordering::Equal,
                            CmpOp::Lt => o == Ordering::Less,
                            CmpOp::Le => o != Ordering::Greater,
                            CmpOp::Gt => o == Ordering::Greater,
                            CmpOp::Ge => o != Ordering::Less,
                        }
                    }
                })
            }
            CondOp::Between(a, c) => {
                let (a, c) = (lit(a)?, lit(c)?);
                Box::new(move |v: &Value| !v.is_null() && cmp_values(v, &a) != Ordering::Less && cmp_values(v, &c) != Ordering::Greater)
            }
            CondOp::In(vs) => {
                let vs = vs.iter().map(lit).collect::<Result<Vec<_>, _>>()?;
                Box::new(move |v: &Value| !v.is_null() && vs.iter().any(|x| cmp_values(v, x) == Ordering::Equal))
            }
        };
        rows.retain(|r| pred(&r[s][i]));
    }

    let items: Vec<SelectItem> = match &q.select {
        SelectList::Star => {
            let mut out = Vec::new();
            for (a, t) in &b.aliases {
                for c in &t.schema.columns {
                    out.push(SelectItem { expr: SelectExpr::Column(ColumnRef::new(Some(a), &c.name)), alias: None });
                }
            }
            out
        }
        SelectList::Items(items) => items.clone(),
    };
    let grouped = !q.group_by.is_empty() || items.iter().any(|i| matches!(i.expr, SelectExpr::Aggregate { .. }));
    if !grouped {
        return items
            .iter()
            .map(|it| match &it.expr {
                SelectExpr::Column(c) => b.col(c),
                _ => unreachable!(),
            })
            .collect::<Result<Vec<_>, _>>()
            .map(|cols| rows.iter().map(|r| cols.iter().map(|&(s, i, _)| r[s][i].clone()).collect()).collect());
    }

    let gcols = q.group_by.iter().map(|c| b.col(c)).collect::<Result<Vec<_>, _>>()?;
    let mut groups: Vec<(Vec<Value>, Vec<usize>)> = Vec::new();
    if gcols.is_empty() {
        groups.push((Vec::new(), (0..rows.len()).collect()));
    } else {
        for (ri, r) in rows.iter().enumerate() {
            let key: Vec<Value> = gcols.iter().map(|&(s, i, _)| r[s][i].clone()).collect();
            match groups.iter_mut().find(|(k, _)| *k == key) {
                Some(g) => g.1.push(ri),
                None => groups.push((key, vec![ri])),
            }
        }
    }
    let mut out = Vec::new();
    for (key, members) in groups {
        let mut row = Vec::new();
        for it in &items {
            row.push(match &it.expr {
                SelectExpr::Column(c) => {
                    let bc = b.col(c)?;
                    let gi = gcols.iter().position(|g| *g == bc).ok_or("ungrouped column")?;
                    key[gi].clone()
                }
                SelectExpr::Aggregate { func, arg } => aggregate(&b, &rows, &members, *func, arg)?,
            });
        }
        out.push(row);
    }
    Ok(out)
}

fn aggregate(b: &Bound<'_>, rows: &[Vec<&Vec<Value>>], members: &[usize], func: AggFunc, arg: &AggArg) -> Result<Value, String> {
    if let AggArg::Star = arg {
        return Ok(Value::Int(members.len() as i64));
    }
    // per row: Some((units, scale)) for numeric args, raw value otherwise
    let (vals, scale): (Vec<Value>, Option<(Vec<Option<i128>>, u32)>) = match arg {
        AggArg::Column(c) => {
            let (s, i, ty) = b.col(c)?;
            let vals: Vec<Value> = members.iter().map(|&m| rows[m][s][i].clone()).collect();
            let num = matches!(ty, ColumnType::Int | ColumnType::Real { .. } | ColumnType::Bool)
                .then(|| (vals.iter().map(|v| units(v, ty)).collect(), ty.scale()));
            (vals, num)
        }
        AggArg::Binary(x, op, y) => {
            let (sx, ix, tx) = b.col(x)?;
            let (sy, iy, ty) = b.col(y)?;
            let mut us = Vec::new();
            let scale = match op {
                BinOp::Add | BinOp::Sub => tx.scale().max(ty.scale()),
                BinOp::Mul => tx.scale() + ty.scale(),
                BinOp::Div => 6,
            };
            for &m in members {
                let (vx, vy) = (&rows[m][sx][ix], &rows[m][sy][iy]);
                let (ux, uy) = (units(vx, tx), units(vy, ty));
                if matches!(op, BinOp::Add | BinOp::Sub) && ux.is_some() != uy.is_some() {
                    return Err("mixed nulls".into());
                }
                us.push(match (ux, uy) {
                    (Some(a), Some(c)) => Some(match op {
                        BinOp::Add => a * 10i128.pow(scale - tx.scale()) + c * 10i128.pow(scale - ty.scale()),
                        BinOp::Sub => a * 10i128.pow(scale - tx.scale()) - c * 10i128.pow(scale - ty.scale()),
                        BinOp::Mul => a * c,
                        BinOp::Div if c == 0 => {
                            us.push(None);
                            continue;
                        }
                        BinOp::Div => {
                            let q = (a as f64 / 10f64.powi(tx.scale() as i32)) / (c as f64 / 10f64.powi(ty.scale() as i32));
                            (q * 1e6).round() as i128
                        }
                    }),
                    _ => None,
                });
            }
            (Vec::new(), Some((us, scale)))
        }
        AggArg::Star => unreachable!(),
    };
    let to_value = |u: i128, s: u32| if s == 0 { Value::Int(u as i64) } else { Value::Real(u as f64 / 10f64.powi(s as i32)) };
    match func {
        AggFunc::Count => Ok(Value::Int(match &scale {
            Some((us, _)) if vals.is_empty() => us.iter().flatten().count(),
            _ => vals.iter().filter(|v| !v.is_null()).count(),
        } as i64)),
        AggFunc::Sum | AggFunc::Avg | AggFunc::Var | AggFunc::Stddev => {
            let (us, s) = scale.ok_or("numeric aggregate over non-numeric column")?;
            let xs: Vec<i128> = us.into_iter().flatten().collect();
            if xs.is_empty() {
                return Ok(Value::Null);
            }
            let n = xs.len() as f64;
            let sum: i128 = xs.iter().sum();
            let p = 10f64.powi(s as i32);
            Ok(match func {
                AggFunc::Sum => to_value(sum, s),
                AggFunc::Avg => Value::Real(sum as f64 / n / p),
                _ => {
                    let mean = sum as f64 / n / p;
                    let var = xs.iter().map(|&x| (x as f64 / p - mean).powi(2)).sum::<f64>() / n;
                    Value::Real(if func == AggFunc::Var { var } else { var.sqrt() })
                }
            })
        }
        AggFunc::Min | AggFunc::Max | AggFunc::Median => {
            let mut xs: Vec<Value> = vals.into_iter().filter(|v| !v.is_null()).collect();
            if xs.is_empty() {
                return Ok(Value::Null);
            }
            xs.sort_by(cmp_values);
            Ok(match func {
                AggFunc::Min => xs[0].clone(),
                AggFunc::Max => xs[xs.len() - 1].clone(),
                _ => xs[(xs.len() - 1) / 2].clone(),
            })
        }
    }
}

fn cell_close(a: &Value, b: &Value) -> bool {
    match (a, b) {
        (Value::Real(x), Value::Real(y)) => (x - y).abs() <= REL_TOL * x.abs().max(y.abs()).max(1.0),
        _ => a == b,
    }
}

fn sort_key(row: &[Value]) -> String {
    row.iter()
        .map(|v| match v {
            Value::Real(x) => format!("{x:.4}"),
            v => format!("{v:?}"),
        })
        .collect::<Vec<_>>()
        .join("|")
}

/// Compares two row multisets, reals within [`REL_TOL`].
pub fn same_rows(got: &[Vec<Value>], want: &[Vec<Value>]) -> Result<(), String> {
    if got.len() != want.len() {
        return Err(format!("row count {} vs oracle {}", got.len(), want.len()));
    }
    let mut g: Vec<&Vec<Value>> = got.iter().collect();
    let mut w: Vec<&Vec<Value>> = want.iter().collect();
    g.sort_by_key(|r| sort_key(r));
    w.sort_by_key(|r| sort_key(r));
    for (a, b) in g.iter().zip(&w) {
        if a.len() != b.len() || !a.iter().zip(b.iter()).all(|(x, y)| cell_close(x, y)) {
            return Err(format!("row {a:?} vs oracle {b:?}"));
        }
    }
    Ok(())
}

// ---- fixtures --------------------------------------------------------------

pub fn params(p: u64, n: usize, t: usize, seed: &str) -> WarehouseParams {
    WarehouseParams::new(p, n, t, seed.as_bytes())
}

/// Declares every table of `db`, with Type III columns and Type II indices,
/// then loads all rows.
pub fn load(wh: &mut Warehouse, db: &PlainDb, derived: &[(&str, &str)], ordered: &[(&str, &str)]) {
    for t in &db.tables {
        let mut s = t.schema.clone();
        s.derived.clear();
        wh.create_table(s).unwrap();
    }
    for (t, d) in derived {
        wh.add_derived_column(t, Derived::parse(d).unwrap()).unwrap();
    }
    for (t, c) in ordered {
        wh.add_order_index(t, c).unwrap();
    }
    for t in &db.tables {
        wh.insert_rows(&t.schema.name, t.rows.clone()).unwrap();
    }
}

pub fn date(s: &str) -> Value {
    Value::Date(NaiveDate::parse_from_str(s, "%Y-%m-%d").unwrap())
}

/// The sample warehouse used for the rewriting example: sales of products
/// over dates in early 2014.
pub fn sales_db() -> PlainDb {
    let mut db = PlainDb::default();
    db.add(TableSchema::parse("Product", "ProdNo:pk, prodName:text, category:int").unwrap());
    db.add(TableSchema::parse("Date", "DateKey:pk, Date:date").unwrap());
    db.add(TableSchema::parse("Sale", "OrderNo:pk, ProdNo:fk, DateKey:fk, price:real(2), tax:real(2), qty:int").unwrap());
    for (pk, name, cat) in [(124, "Shirt", 1), (125, "Shoes", 2), (126, "Hat", 1), (127, "Shirt", 3)] {
        db.upsert("Product", vec![Value::Key(pk), Value::Text(name.into()), Value::Int(cat)]);
    }
    for d in 1..=31u64 {
        db.upsert("Date", vec![Value::Key(d), date(&format!("2014-01-{d:02}"))]);
    }
    let mut x: u64 = 7;
    for o in 1..=60u64 {
        x = x.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
        let prod = 124 + (x >> 33) % 4;
        let day = 1 + (x >> 40) % 31;
        let price = ((x >> 20) % 20000) as f64 / 100.0;
        let tax = ((x >> 12) % 3000) as f64 / 100.0;
        let qty = ((x >> 50) % 40) as i64 - 5;
        db.upsert(
            "Sale",
            vec![Value::Key(o), Value::Key(prod), Value::Key(day), Value::Real(price), Value::Real(tax), Value::Int(qty)],
        );
    }
    db
}

pub const SALES_DERIVED: &[(&str, &str)] = &[("Sale", "price^2"), ("Sale", "qty^2"), ("Sale", "price*tax")];
pub const SALES_ORDERED: &[(&str, &str)] =
    &[("Date", "Date"), ("Product", "prodName"), ("Product", "category"), ("Sale", "price"), ("Sale", "qty")];

pub const REWRITE_QUERY: &str = "SELECT SUM(S.price+S.tax) AS sumprice, P.prodName \
    FROM Sale AS S JOIN Product AS P ON S.ProdNo=P.ProdNo \
    JOIN Date AS D ON S.DateKey=D.DateKey \
    WHERE D.Date BETWEEN '2014-01-01' AND '2014-01-15' \
    GROUP BY P.prodName";

pub fn sales_warehouse(p: u64, n: usize, t: usize) -> (Warehouse, PlainDb) {
    let db = sales_db();
    let mut wh = Warehouse::new(params(p, n, t, "sales")).unwrap();
    load(&mut wh, &db, SALES_DERIVED, SALES_ORDERED);
    (wh, db)
}

// ---- random star schemas and queries --------------------------------------

pub struct RandomStar {
    pub db: PlainDb,
    pub derived: Vec<(&'static str, &'static str)>,
    pub ordered: Vec<(&'static str, &'static str)>,
}

const NAMES: [&str; 6] = ["alpha", "beta", "gamma", "delta", "Epsilon", "zeta"];

/// Star schema `f` (facts) with dimensions `p` and `d`. Fact measures may be
/// null; `a` and `b` share one null pattern so `a ± b` is defined.
pub fn random_star(rng: &mut impl RngCore, facts: usize, p_small: bool) -> RandomStar {
    let mut db = PlainDb::default();
    db.add(TableSchema::parse("p", "pid:pk, name:text, cat:int").unwrap());
    db.add(TableSchema::parse("d", "did:pk, day:date, month:int").unwrap());
    db.add(TableSchema::parse("f", "fid:pk, pid:fk, did:fk, a:real(2), b:real(2), q:int, ok:bool").unwrap());
    let dims_p = rng.random_range(2..8u64);
    let dims_d = rng.random_range(2..10u64);
    for pid in 1..=dims_p {
        let name = *NAMES.choose(rng).unwrap();
        db.upsert("p", vec![Value::Key(pid), Value::Text(name.into()), Value::Int(rng.random_range(0..3))]);
    }
    for did in 1..=dims_d {
        let day = NaiveDate::from_ymd_opt(2014, 1, 1).unwrap() + chrono::Duration::days(rng.random_range(0..90));
        db.upsert("d", vec![Value::Key(did), Value::Date(day), Value::Int(rng.random_range(1..4))]);
    }
    // small nonnegative values fit a p = 251 field without a bias
    let (amax, qmax) = if p_small { (3, 2) } else { (100_000, 500) };
    let (alo, qlo) = if p_small { (0, 0) } else { (-amax, -qmax) };
    for fid in 1..=facts as u64 {
        let null_ab = rng.random_bool(0.1);
        let (a, b) = if null_ab {
            (Value::Null, Value::Null)
        } else {
            (
                Value::Real(rng.random_range(alo..=amax) as f64 / 100.0),
                Value::Real(rng.random_range(0..=amax) as f64 / 100.0),
            )
        };
        let q = if rng.random_bool(0.1) { Value::Null } else { Value::Int(rng.random_range(qlo..=qmax)) };
        let pid = if rng.random_bool(0.05) { Value::Null } else { Value::Key(rng.random_range(1..=dims_p)) };
        let did = if rng.random_bool(0.05) { Value::Null } else { Value::Key(rng.random_range(1..=dims_d)) };
        db.upsert("f", vec![Value::Key(fid * 3 + 11), pid, did, a, b, q, Value::Bool(rng.random_bool(0.5))]);
    }
    RandomStar {
        db,
        derived: vec![("f", "a^2"), ("f", "q^2"), ("f", "a*b")],
        ordered: vec![("f", "a"), ("f", "q"), ("f", "ok"), ("p", "name"), ("p", "cat"), ("d", "day"), ("d", "month")],
    }
}

/// A random query over [`random_star`] in the supported grammar.
pub fn random_query(rng: &mut impl RngCore) -> String {
    let joins = rng.random_range(0..3);
    let mut from = String::from("f");
    if joins >= 1 {
        from.push_str(" JOIN p ON f.pid = p.pid");
    }
    if joins >= 2 {
        from.push_str(" JOIN d AS dd ON f.did = dd.did");
    }
    let mut preds: Vec<String> = vec![
        format!("f.q BETWEEN {} AND {}", rng.random_range(-300..0), rng.random_range(0..300)),
        format!("f.a > {}", rng.random_range(-500..500) as f64 / 2.0),
        format!("f.q <= {}", rng.random_range(-100..200)),
        "f.q IS NOT NULL".into(),
        "f.a IS NULL".into(),
        format!("f.ok = {}", rng.random_bool(0.5)),
        format!("f.pid IN ({}, {})", rng.random_range(1..8), rng.random_range(1..8)),
        format!("f.fid <> {}", rng.random_range(1..100) * 3 + 11),
    ];
    let mut groups: Vec<&str> = vec!["f.ok", "f.pid"];
    if joins >= 1 {
        preds.push(format!("p.cat IN ({}, {})", rng.random_range(0..3), rng.random_range(0..3)));
        preds.push(format!("p.name <> '{}'", NAMES.choose(rng).unwrap()));
        groups.extend(["p.name", "p.cat"]);
    }
    if joins >= 2 {
        preds.push(format!("dd.day BETWEEN '2014-01-{:02}' AND '2014-03-{:02}'", rng.random_range(1..29), rng.random_range(1..29)));
        preds.push(format!("dd.month >= {}", rng.random_range(1..4)));
        groups.extend(["dd.month", "dd.did"]);
    }
    let npred = rng.random_range(0..3);
    let chosen: Vec<String> = preds.choose_multiple(rng, npred).cloned().collect();
    let where_ = if chosen.is_empty() { String::new() } else { format!(" WHERE {}", chosen.join(" AND ")) };

    if rng.random_bool(0.15) {
        let mut cols = vec!["f.fid", "f.a", "f.q", "f.ok"];
        if joins >= 1 {
            cols.push("p.name");
        }
        if joins >= 2 {
            cols.push("dd.day");
        }
        let k = rng.random_range(1..=cols.len());
        let pick: Vec<&str> = cols.choose_multiple(rng, k).copied().collect();
        return format!("SELECT {} FROM {from}{where_}", pick.join(", "));
    }
    let mut aggs = vec![
        "SUM(f.a)", "SUM(f.q)", "SUM(f.a + f.b)", "SUM(f.a - f.b)", "AVG(f.a)", "AVG(f.q)", "VAR(f.q)", "STDDEV(f.a)",
        "MIN(f.a)", "MAX(f.q)", "MEDIAN(f.q)", "COUNT(*)", "COUNT(f.q)", "SUM(f.a * f.b)", "MAX(f.ok)", "SUM(f.ok)",
        "MIN(f.pid)", "MEDIAN(f.a)",
    ];
    if joins >= 1 {
        aggs.extend(["MIN(p.name)", "MAX(p.cat)", "COUNT(p.name)"]);
    }
    if joins >= 2 {
        aggs.extend(["MAX(dd.day)", "MEDIAN(dd.day)"]);
    }
    let k = rng.random_range(1..4);
    let mut items: Vec<String> = aggs.choose_multiple(rng, k).map(|s| s.to_string()).collect();
    let mut group = String::new();
    if rng.random_bool(0.6) {
        let g = *groups.choose(rng).unwrap();
        items.insert(0, g.to_string());
        group = format!(" GROUP BY {g}");
    }
    format!("SELECT {} FROM {from}{where_}{group}", items.join(", "))
}

/// Loads a random star into a fresh warehouse.
pub fn star_warehouse(star: &RandomStar, p: u64, n: usize, t: usize, seed: &str) -> Warehouse {
    let mut wh = Warehouse::new(params(p, n, t, seed)).unwrap();
    load(&mut wh, &star.db, &star.derived, &star.ordered);
    wh
}

/// Rows of a query result, run through the oracle.
pub fn oracle_text(db: &PlainDb, sql: &str) -> Result<Vec<Vec<Value>>, String> {
    let q = fvss_core::query::parse(sql).map_err(|e| e.to_string())?;
    oracle(db, &q)
}

pub fn group_counts(rows: &[Vec<Value>]) -> BTreeMap<String, usize> {
    let mut m = BTreeMap::new();
    for r in rows {
        *m.entry(sort_key(r)).or_default() += 1;
    }
    m
}
