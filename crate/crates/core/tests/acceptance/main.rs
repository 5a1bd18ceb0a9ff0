//! Acceptance gate: one PASS/FAIL line per criterion. Exits nonzero when any
//! criterion fails.

#[path = "../common/mod.rs"]
mod common;

use std::collections::BTreeSet;
use std::time::{Duration, Instant};

use common::*;
use fvss_core::cost::*;
use fvss_core::cube::{cube_build, cube_query, cube_refresh, CubeSpec};
use fvss_core::field::{lagrange_interpolate, Fe, PrimeField, MERSENNE_61};
use fvss_core::keys::Scheme;
use fvss_core::outer_sig::{SignatureTree, VerifyScope};
use fvss_core::schema::{Column, ColumnType, TableSchema, Value};
use fvss_core::sharing::{share_value, CspSet, StorageGroup, StoredAttr};
use fvss_core::warehouse::{combinations, RgChoice, Warehouse, WarehouseParams};
use fvss_core::{query, Error, ErrorClass};
use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Dollar tolerance for storage and access costs.
const STORAGE_TOL: f64 = 0.01;
const ACCESS_TOL: f64 = 0.01;
/// Dollar tolerance for sharing costs.
const SHARING_TOL: f64 = 0.05;
/// Wall-time tolerance, in minutes.
const MINUTES_TOL: i64 = 1;
const COST_BUDGET: Duration = Duration::from_secs(1);
const ROUND_TRIP_BUDGET: Duration = Duration::from_secs(60);

const ROUND_TRIP_TABLES: usize = 120;
const TAMPERS: usize = 1000;
const QUERY_INSTANCES: usize = 120;
const TREE_OPS: usize = 1000;

const P_SMALL: u64 = 251;

type Check = Result<String, String>;

fn ensure(ok: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if ok {
        Ok(())
    } else {
        Err(msg())
    }
}

fn minutes(hmm: &str) -> i64 {
    let (h, m) = hmm.split_once(':').expect("h:mm");
    h.parse::<i64>().unwrap() * 60 + m.parse::<i64>().unwrap()
}

/// Compares `(label, got, want)` triples within `tol`; lists every miss.
fn within(items: &[(&str, f64, f64)], tol: f64) -> Check {
    let misses: Vec<String> = items
        .iter()
        .filter(|(_, got, want)| (got - want).abs() > tol + 1e-9)
        .map(|(l, got, want)| format!("{l} = {got:.2}, expected {want:.2}"))
        .collect();
    let shown: Vec<String> = items.iter().map(|(l, got, _)| format!("{l} {got:.2}")).collect();
    if misses.is_empty() {
        Ok(shown.join(", "))
    } else {
        Err(format!("{} (all: {})", misses.join("; "), shown.join(", ")))
    }
}

fn times(items: &[(&str, f64, &str)]) -> Result<(), String> {
    for (l, hours, want) in items {
        let got = hmm(*hours);
        ensure((minutes(&got) - minutes(want)).abs() <= MINUTES_TOL, || format!("{l} wall time {got}, expected {want}"))?;
    }
    Ok(())
}

// ---- cost ------------------------------------------------------------------

fn cost_storage() -> Check {
    let start = Instant::now();
    let rows = storage_rows(&Scenario::default(), &PricingPolicy::public_cloud_2014()).map_err(|e| e.to_string())?;
    let by = |name: &str| rows.iter().find(|r| r.approach == name).map(|r| cents(r.dollars)).unwrap_or(f64::NAN);
    let fvss = share_volume(VolumeFamily::Fvss, 5, 4, 100.0, None).map_err(|e| e.to_string())?.total_gb;
    ensure(fvss == 300.0, || format!("fVSS volume {fvss} GB, expected 300"))?;
    let res = within(
        &[
            ("2nV", by("2nV family"), 113.60),
            ("nV", by("nV family"), 56.80),
            ("nV/(t-1)", by("nV/(t-1) family"), 19.31),
            ("nV/t", by("nV/t family"), 14.77),
            ("fVSS-I", by("fVSS-I"), 34.08),
            ("fVSS-II", by("fVSS-II"), 12.39),
        ],
        STORAGE_TOL,
    );
    ensure(start.elapsed() < COST_BUDGET, || format!("took {:?}", start.elapsed()))?;
    res.map(|s| format!("{s}; fVSS volume 300 GB"))
}

fn cost_compute(access: bool) -> Check {
    let rows = compute_rows(&Scenario::default(), &PricingPolicy::public_cloud_2014(), access).map_err(|e| e.to_string())?;
    let [all, even, uneven] = &rows[..] else { return Err("expected three strategies".into()) };
    let (want, wall, tol) = if access {
        ([0.48, 0.30, 0.12], ["0:42", "0:50", "0:42"], ACCESS_TOL)
    } else {
        ([6.40, 4.40, 2.80], ["6:57", "8:20", "6:56"], SHARING_TOL)
    };
    times(&[
        ("competitors", all.cost.wall_hours, wall[0]),
        ("fVSS-I", even.cost.wall_hours, wall[1]),
        ("fVSS-II", uneven.cost.wall_hours, wall[2]),
    ])?;
    within(
        &[
            ("competitors", all.cost.dollars, want[0]),
            ("fVSS-I", even.cost.dollars, want[1]),
            ("fVSS-II", uneven.cost.dollars, want[2]),
        ],
        tol,
    )
    .map(|s| format!("{s}; wall {} / {} / {}", hmm(all.cost.wall_hours), hmm(even.cost.wall_hours), hmm(uneven.cost.wall_hours)))
}

fn cost_volume_curves() -> Check {
    let mut checked = 0;
    for n in 3..=7usize {
        for t in 2..=n {
            let curve = volume_curve([n], |_| t).map_err(|e| e.to_string())?;
            let (nf, tf) = (n as f64, t as f64);
            let want = [2.0 * nf, nf, nf / (tf - 1.0), nf / tf, nf - tf + 2.0];
            for (fam, (&got, w)) in VolumeFamily::ALL.iter().zip(curve[0].1.iter().zip(want)) {
                let v = 100.0;
                let total = share_volume(*fam, n, t, v, None).map_err(|e| e.to_string())?.total_gb;
                ensure(got == w && total == w * v, || format!("n={n}, t={t}, {}: {got} vs {w}", fam.label()))?;
                checked += 1;
            }
        }
    }
    Ok(format!("{checked} (n, t, family) points exact"))
}

// ---- round trip ------------------------------------------------------------

fn random_table(rng: &mut ChaCha8Rng, small: bool, name: &str) -> (TableSchema, Vec<Vec<Value>>) {
    let mut kinds = vec![ColumnType::ForeignKey, ColumnType::Int, ColumnType::Real { scale: 2 }, ColumnType::Text, ColumnType::Bool];
    if !small {
        kinds.push(ColumnType::Date);
    }
    let mut columns = vec![Column { name: "k".into(), ty: ColumnType::PrimaryKey }];
    for i in 0..rng.random_range(2..=6) {
        columns.push(Column { name: format!("c{i}"), ty: *kinds.choose(rng).unwrap() });
    }
    let schema = TableSchema::new(name, columns).unwrap();
    let mut pks = BTreeSet::new();
    for _ in 0..rng.random_range(1..=25) {
        pks.insert(rng.random_range(0..10_000u64));
    }
    let rows = pks.into_iter().map(|pk| random_row(rng, &schema, pk, small)).collect();
    (schema, rows)
}

fn random_row(rng: &mut ChaCha8Rng, schema: &TableSchema, pk: u64, small: bool) -> Vec<Value> {
    let mut row = vec![Value::Key(pk)];
    for c in &schema.columns[1..] {
        if rng.random_bool(0.1) {
            row.push(Value::Null);
            continue;
        }
        row.push(match c.ty {
            ColumnType::ForeignKey => Value::Key(rng.random_range(0..1000)),
            ColumnType::Int if small => Value::Int(rng.random_range(0..P_SMALL as i64)),
            ColumnType::Int => Value::Int(rng.random_range(-1_000_000_000..1_000_000_000)),
            ColumnType::Real { .. } if small => Value::Real(rng.random_range(0..P_SMALL as i64) as f64 / 100.0),
            ColumnType::Real { .. } => Value::Real(rng.random_range(-10_000_000i64..10_000_000) as f64 / 100.0),
            ColumnType::Text => {
                let len = rng.random_range(0..if small { 5 } else { 13 });
                Value::Text((0..len).map(|_| rng.random_range(b'a'..=b'z') as char).collect())
            }
            ColumnType::Bool => Value::Bool(rng.random_bool(0.5)),
            _ => Value::Date(chrono::NaiveDate::from_num_days_from_ce_opt(rng.random_range(730_000..740_000)).unwrap()),
        });
    }
    row
}

fn same_values(schema: &TableSchema, a: &[Value], b: &[Value]) -> bool {
    a.len() == b.len()
        && schema.columns.iter().zip(a.iter().zip(b)).all(|(c, (x, y))| match (x.units(c.ty), y.units(c.ty)) {
            (Some(u), Some(v)) => u == v,
            _ => x == y,
        })
}

fn round_trip() -> Check {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(0x5eed_0001);
    let (mut reads, mut failures, mut small) = (0usize, Vec::new(), 0);
    for i in 0..ROUND_TRIP_TABLES {
        let is_small = i % 2 == 0;
        let p = if is_small { P_SMALL } else { MERSENNE_61 };
        small += is_small as usize;
        let n = rng.random_range(3..=7);
        let t = rng.random_range(2..=n);
        let (schema, rows) = random_table(&mut rng, is_small, "r");
        let mut wh = Warehouse::new(WarehouseParams::new(p, n, t, format!("rt{i}").as_bytes())).map_err(|e| e.to_string())?;
        wh.create_table(schema.clone()).map_err(|e| e.to_string())?;
        wh.insert_rows("r", rows.clone()).map_err(|e| format!("table {i}: {e}"))?;
        let all: Vec<usize> = (1..=n).collect();
        for rg in combinations(&all, t, usize::MAX) {
            for row in &rows {
                let pk = schema.pk_of(row).unwrap();
                reads += 1;
                match wh.reconstruct_row("r", pk, &RgChoice::Fixed(rg.clone())) {
                    Ok(back) if same_values(&schema, &back, row) => {}
                    other => failures.push(format!("table {i} (p={p}, n={n}, t={t}) rg {rg:?} key {pk}: {other:?}")),
                }
            }
        }
    }
    ensure(failures.is_empty(), || format!("{} failures, first: {}", failures.len(), failures[0]))?;
    ensure(start.elapsed() < ROUND_TRIP_BUDGET, || format!("took {:?}", start.elapsed()))?;
    Ok(format!("{ROUND_TRIP_TABLES} tables ({small} at p=251), {reads} reads over every reconstruction group, 0 failures"))
}

// ---- availability ----------------------------------------------------------

fn availability() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(0x5eed_0002);
    let mut summary = Vec::new();
    for (n, t) in [(5, 4), (5, 3), (7, 4)] {
        let (schema, rows) = random_table(&mut rng, false, "a");
        let mut wh = Warehouse::new(WarehouseParams::new(MERSENNE_61, n, t, b"avail")).map_err(|e| e.to_string())?;
        wh.create_table(schema.clone()).map_err(|e| e.to_string())?;
        wh.insert_rows("a", rows.clone()).map_err(|e| e.to_string())?;
        let all: Vec<usize> = (1..=n).collect();
        let (mut ok, mut refused) = (0, 0);
        for k in [n - t, n - t + 1] {
            for down in combinations(&all, k, usize::MAX) {
                down.iter().for_each(|&c| wh.fail(c).unwrap());
                for row in &rows {
                    let r = wh.reconstruct_row("a", schema.pk_of(row).unwrap(), &RgChoice::Auto);
                    match (k == n - t, r) {
                        (true, Ok(back)) if same_values(&schema, &back, row) => ok += 1,
                        (false, Err(e)) if e.class() == ErrorClass::Availability => refused += 1,
                        (_, other) => return Err(format!("n={n}, t={t}, failed {down:?}: {other:?}")),
                    }
                }
                down.iter().for_each(|&c| wh.heal(c).unwrap());
            }
        }
        summary.push(format!("n={n},t={t}: {ok} reads ok, {refused} refused"));
    }

    // new loads with one CSP down
    let (n, t) = (5, 4);
    let (schema, rows) = random_table(&mut rng, false, "u");
    let mut wh = Warehouse::new(WarehouseParams::new(MERSENNE_61, n, t, b"loads")).map_err(|e| e.to_string())?;
    wh.create_table(schema.clone()).map_err(|e| e.to_string())?;
    wh.insert_rows("u", rows).map_err(|e| e.to_string())?;
    let mut loaded = 0;
    for down in 1..=n {
        wh.fail(down).unwrap();
        let fresh: Vec<Vec<Value>> = (0..8).map(|i| random_row(&mut rng, &schema, 20_000 + 10 * down as u64 + i, false)).collect();
        wh.insert_rows("u", fresh.clone()).map_err(|e| format!("load with CSP{down} down: {e}"))?;
        for phase in ["down", "healed"] {
            for row in &fresh {
                let back = wh.reconstruct_row("u", schema.pk_of(row).unwrap(), &RgChoice::Auto).map_err(|e| format!("{phase}: {e}"))?;
                ensure(same_values(&schema, &back, row), || format!("CSP{down} {phase}: {back:?} vs {row:?}"))?;
            }
            if phase == "down" {
                wh.heal(down).unwrap();
            }
        }
        loaded += fresh.len();
    }
    summary.push(format!("{loaded} new records loaded with one CSP down, all read back"));
    Ok(summary.join("; "))
}

// ---- integrity ---------------------------------------------------------------

fn integrity() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(0x5eed_0003);
    let star = random_star(&mut rng, 200, false);
    let mut wh = star_warehouse(&star, MERSENNE_61, 5, 4, "integrity");
    let (n, t) = (wh.n(), wh.t());
    let w = wh.params().w;
    let (mut detected, mut localized, mut max_ratio) = (0, 0, 0.0f64);
    for trial in 0..TAMPERS {
        let csp = rng.random_range(1..=n);
        let tables: Vec<String> =
            wh.csp(csp).table_names().filter(|tb| !wh.csp(csp).table(tb).unwrap().is_empty()).map(str::to_string).collect();
        let table = tables.choose(&mut rng).unwrap().clone();
        let stored = wh.csp(csp).table(&table).unwrap();
        let pos = rng.random_range(0..stored.len());
        let row = &stored.rows()[pos];
        let shared: Vec<(usize, usize)> = row
            .attrs
            .iter()
            .enumerate()
            .filter_map(|(i, a)| match a {
                StoredAttr::Shares(s) if !s.is_empty() => Some((i, s.len())),
                _ => None,
            })
            .collect();
        let Some(&(col, chunks)) = shared.choose(&mut rng) else { continue };
        let chunk = rng.random_range(0..chunks);
        let pk = row.pk;
        let StoredAttr::Shares(s) = &row.attrs[col] else { unreachable!() };
        let original = s[chunk].value();
        let column = wh.schema(&table).unwrap().stored_columns()[col].name.clone();
        wh.tamper(csp, &table, pk, &column, chunk, None).map_err(|e| e.to_string())?;

        let mut others: Vec<usize> = (1..=n).filter(|&c| c != csp).collect();
        others.shuffle(&mut rng);
        let mut rg: Vec<usize> = others[..t - 1].to_vec();
        rg.push(csp);
        rg.sort_unstable();
        match wh.reconstruct_row(&table, pk, &RgChoice::Fixed(rg.clone())) {
            Err(Error::InnerSignatureMismatch { .. }) => detected += 1,
            other => return Err(format!("trial {trial}: tamper at CSP{csp} {table}#{pos} with rg {rg:?} gave {other:?}")),
        }
        let reports = wh.verify(Some(csp), &VerifyScope::Whole).map_err(|e| e.to_string())?;
        let r = &reports[0].1;
        let exact = r.breaches.len() == 1
            && r.breaches[0].table.as_deref() == Some(table.as_str())
            && r.breaches[0].position == Some(pos);
        ensure(exact, || format!("trial {trial}: expected one breach at {table}#{pos}, got {:?}", r.breaches))?;
        ensure(r.inspected <= w * r.depth, || format!("trial {trial}: inspected {} > w*depth = {}", r.inspected, w * r.depth))?;
        localized += 1;
        max_ratio = max_ratio.max(r.inspected as f64 / (w * r.depth) as f64);

        wh.tamper(csp, &table, pk, &column, chunk, Some(original)).map_err(|e| e.to_string())?;
    }
    let clean = wh.verify(None, &VerifyScope::Whole).map_err(|e| e.to_string())?;
    ensure(clean.iter().all(|(_, r)| r.is_ok()), || "store not clean after restoring every tamper".into())?;
    Ok(format!(
        "{TAMPERS} tampers: {detected} detected by the inner signature, {localized} localized to the exact leaf; inspected/(w*depth) <= {max_ratio:.2}"
    ))
}

// ---- aggregation -------------------------------------------------------------

fn aggregation() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(0x5eed_0004);
    let mut seen = BTreeSet::new();
    let (mut instances, mut degraded) = (0, 0);
    let rounds = QUERY_INSTANCES / 15;
    for round in 0..rounds {
        let star = random_star(&mut rng, 80, false);
        let mut wh = star_warehouse(&star, MERSENNE_61, 5, 4, &format!("agg{round}"));
        let failed = round % 2 == 1;
        if failed {
            wh.fail(1 + round % 5).unwrap();
        }
        for _ in 0..15 {
            let sql = random_query(&mut rng);
            for f in ["SUM(", "AVG(", "VAR(", "STDDEV(", "MAX(", "MIN(", "COUNT(", "MEDIAN("] {
                if sql.contains(f) {
                    seen.insert(f.trim_end_matches('('));
                }
            }
            if sql.contains(" + f.b)") {
                seen.insert("SUM(X+Y)");
            }
            if sql.contains(" - f.b)") {
                seen.insert("SUM(X-Y)");
            }
            let got = query::run(&wh, &sql, &RgChoice::Auto).map_err(|e| format!("{sql}: {e}"))?;
            let want = oracle_text(&star.db, &sql)?;
            same_rows(&got.rows, &want).map_err(|e| format!("{sql}: {e}"))?;
            instances += 1;
            degraded += failed as usize;
        }
    }
    let all = ["AVG", "COUNT", "MAX", "MEDIAN", "MIN", "STDDEV", "SUM", "SUM(X+Y)", "SUM(X-Y)", "VAR"];
    let missing: Vec<&str> = all.iter().copied().filter(|f| !seen.contains(f)).collect();
    ensure(missing.is_empty(), || format!("aggregates never generated: {missing:?}"))?;
    ensure(instances >= 100, || format!("only {instances} instances"))?;
    Ok(format!("{instances} random queries ({degraded} with one CSP failed) equal the plaintext oracle; covered {}", all.join(", ")))
}

// ---- signature tree ----------------------------------------------------------

/// Independent model: per table, marker and record signatures.
type Model = Vec<(Fe, Vec<Fe>)>;

fn tree_matches(f: &PrimeField, tree: &SignatureTree, model: &Model) -> Result<usize, String> {
    let w = tree.arity();
    let check = |layer: &fvss_core::outer_sig::AppendTree, leaves: &[Fe]| -> Result<usize, String> {
        ensure(layer.len() == leaves.len(), || format!("{} leaves, model has {}", layer.len(), leaves.len()))?;
        let mut nodes = 0;
        for level in 0..=layer.depth() {
            let span = w.pow(level as u32);
            for i in 0..layer.level_len(level) {
                let lo = i * span;
                let hi = (lo + span).min(leaves.len());
                let want = f.sum(leaves[lo..hi].iter().copied());
                ensure(layer.node(level, i) == Some(want), || format!("node ({level}, {i}) differs from the sum of its leaves"))?;
                nodes += 1;
            }
        }
        Ok(nodes)
    };
    let names: Vec<&str> = tree.table_names().collect();
    ensure(names.len() == model.len(), || "table count differs".into())?;
    let mut nodes = 0;
    for (name, (marker, sigs)) in names.iter().zip(model) {
        ensure(tree.marker(name).ok() == Some(*marker), || format!("{name}: marker differs"))?;
        nodes += check(tree.record_layer(name).unwrap(), sigs)?;
    }
    let table_leaves: Vec<Fe> = model.iter().map(|(m, sigs)| f.add(*m, f.sum(sigs.iter().copied()))).collect();
    nodes += check(tree.table_layer(), &table_leaves)?;
    Ok(nodes)
}

fn signature_tree() -> Check {
    let f = PrimeField::new(MERSENNE_61).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(0x5eed_0005);
    let mut checked = 0;
    for w in 2..=4 {
        let mut tree = SignatureTree::new(w).map_err(|e| e.to_string())?;
        let mut model: Model = Vec::new();
        for op in 0..TREE_OPS {
            let roll = rng.random_range(0..10);
            if model.is_empty() || roll == 0 {
                let marker = f.elem(rng.random());
                tree.create_table(&f, &format!("t{}", model.len()), marker).map_err(|e| e.to_string())?;
                model.push((marker, Vec::new()));
            } else {
                let k = rng.random_range(0..model.len());
                let name = format!("t{k}");
                let sig = f.elem(rng.random());
                if roll <= 6 || model[k].1.is_empty() {
                    tree.insert_record(&f, &name, sig).map_err(|e| e.to_string())?;
                    model[k].1.push(sig);
                } else {
                    let pos = rng.random_range(0..model[k].1.len());
                    tree.update_record(&f, &name, pos, sig).map_err(|e| e.to_string())?;
                    model[k].1[pos] = sig;
                }
            }
            checked += tree_matches(&f, &tree, &model).map_err(|e| format!("w={w}, op {op}: {e}"))?;
        }
    }
    Ok(format!("{TREE_OPS} random operations at each w in 2..=4; {checked} node checks against leaf sums"))
}

// ---- cube ----------------------------------------------------------------------

fn fact(rng: &mut ChaCha8Rng, pk: u64, members: &[u64]) -> Vec<Value> {
    let mut row = vec![Value::Key(pk)];
    for &m in members {
        row.push(if rng.random_bool(0.05) { Value::Null } else { Value::Key(rng.random_range(1..=m)) });
    }
    row.push(if rng.random_bool(0.1) { Value::Null } else { Value::Int(rng.random_range(-50..200)) });
    row.push(Value::Real(rng.random_range(0..100_000) as f64 / 100.0));
    row
}

fn all_cells(wh: &Warehouse, spec: &CubeSpec) -> Result<Vec<Vec<Value>>, String> {
    cube_query(wh, spec, "", &RgChoice::Auto).map(|r| r.rows).map_err(|e| e.to_string())
}

fn cube_refresh_equals_rebuild() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(0x5eed_0006);
    let (mut batches, mut cells, mut sum_batches) = (0, 0, 0);
    for round in 0..6 {
        let dims = 1 + round % 3;
        let members: Vec<u64> = (0..dims).map(|_| rng.random_range(2..=10)).collect();
        let cols: Vec<String> = (0..dims).map(|i| format!("d{i}:fk")).collect();
        let schema = TableSchema::parse("F", &format!("id:pk, {}, m:int, r:real(2)", cols.join(", "))).unwrap();
        let mut next = 0u64;
        let mut draw = |rng: &mut ChaCha8Rng, k: usize| -> Vec<Vec<Value>> {
            (0..k)
                .map(|_| {
                    next += 1;
                    fact(rng, next, &members)
                })
                .collect()
        };
        let initial = draw(&mut rng, 30);
        let stream: Vec<Vec<Vec<Value>>> = (0..3).map(|_| {
            let k = rng.random_range(1..=8);
            draw(&mut rng, k)
        }).collect();

        let dim_list: Vec<String> = (0..dims).map(|i| format!("F.d{i}")).collect();
        let sql = |measures: &str| format!("SELECT {0}, {measures} FROM F GROUP BY {0}", dim_list.join(", "));
        for (label, measures) in
            [("mixed", "SUM(F.m), COUNT(*), COUNT(F.m), MIN(F.m), MAX(F.r), AVG(F.r)"), ("sum-only", "SUM(F.m), SUM(F.r)")]
        {
            let seed = format!("cube{round}{label}");
            let mut wh = Warehouse::new(WarehouseParams::new(MERSENNE_61, 5, 3, seed.as_bytes())).map_err(|e| e.to_string())?;
            wh.create_table(schema.clone()).map_err(|e| e.to_string())?;
            wh.add_order_index("F", "m").map_err(|e| e.to_string())?;
            wh.add_order_index("F", "r").map_err(|e| e.to_string())?;
            wh.insert_rows("F", initial.clone()).map_err(|e| e.to_string())?;
            let live = CubeSpec::new("live", &sql(measures)).map_err(|e| e.to_string())?;
            cube_build(&mut wh, &live, &RgChoice::Auto).map_err(|e| e.to_string())?;
            for (b, batch) in stream.iter().enumerate() {
                let before = wh.read_counts().cube_cells;
                cube_refresh(&mut wh, &live, batch.clone(), &RgChoice::Auto).map_err(|e| format!("{seed}: {e}"))?;
                if label == "sum-only" {
                    let n = wh.read_counts().cube_cells - before;
                    ensure(n == 0, || format!("{seed}: SUM refresh reconstructed {n} cells"))?;
                    sum_batches += 1;
                }
                let rebuilt = CubeSpec::new(&format!("rebuilt{b}"), &sql(measures)).map_err(|e| e.to_string())?;
                cube_build(&mut wh, &rebuilt, &RgChoice::Auto).map_err(|e| e.to_string())?;
                let (x, y) = (all_cells(&wh, &live)?, all_cells(&wh, &rebuilt)?);
                same_rows(&x, &y).map_err(|e| format!("{seed}, batch {b}: {e}"))?;
                cells += x.len();
                batches += 1;
            }
        }
    }
    Ok(format!(
        "{batches} insert batches on cubes of 1 to 3 dimensions, {cells} cells equal a rebuild; {sum_batches} SUM-only refreshes with 0 cell reconstructions"
    ))
}

// ---- privacy -------------------------------------------------------------------

fn structural_privacy() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(0x5eed_0007);
    let mut bitmaps = 0;
    for n in 2..=7usize {
        for t in 2..=n {
            let (schema, rows) = random_table(&mut rng, false, "s");
            let mut wh = Warehouse::new(WarehouseParams::new(MERSENNE_61, n, t, b"privacy")).map_err(|e| e.to_string())?;
            wh.create_table(schema).map_err(|e| e.to_string())?;
            wh.insert_rows("s", rows).map_err(|e| e.to_string())?;
            let loc = wh.index().location("s").unwrap();
            for pk in loc.pks() {
                let pop = loc.get(pk).unwrap().bitmap.len();
                ensure(pop == n - t + 2, || format!("n={n}, t={t}: bitmap of {pk} has {pop} members"))?;
                bitmaps += 1;
            }
            if n + 2 < 2 * t {
                ensure(n - t + 2 < t, || format!("n={n}, t={t}: storage group reaches t"))?;
            }
        }
    }

    // t - 1 known shares at p = 251 leave every secret possible
    let (n, t) = (5, 4);
    let scheme = Scheme::init(P_SMALL, n, t, b"underdetermined").map_err(|e| e.to_string())?;
    let f = *scheme.field();
    let group = StorageGroup::new(&scheme, CspSet::parse("10101").unwrap()).map_err(|e| e.to_string())?;
    let mut tried = 0;
    for d in [0u64, 1, 77, 250] {
        let shares = share_value(&scheme, f.elem(d), 124, &group).map_err(|e| e.to_string())?;
        ensure(shares.len() == t - 1, || format!("{} real shares for t - 1 = {}", shares.len(), t - 1))?;
        let known: Vec<(Fe, Fe)> = shares.iter().map(|&(c, y)| (scheme.x_csp(c), y)).collect();
        let mut polys = BTreeSet::new();
        for s in 0..P_SMALL {
            let mut pts = known.clone();
            pts.push((scheme.x_data(), f.elem(s)));
            let poly = lagrange_interpolate(&f, &pts).map_err(|e| e.to_string())?;
            let fits = poly.degree() < t && known.iter().all(|&(x, y)| poly.eval(&f, x) == y) && poly.eval(&f, scheme.x_data()) == f.elem(s);
            ensure(fits, || format!("candidate {s} inconsistent with the known shares"))?;
            polys.insert(poly.coefficients().iter().map(|c| c.value()).collect::<Vec<_>>());
            tried += 1;
        }
        ensure(polys.len() == P_SMALL as usize, || "two candidates collapsed to one polynomial".into())?;
    }
    Ok(format!("{bitmaps} Type I bitmaps of popcount n-t+2 over 2 <= t <= n <= 7; {tried} candidate secrets all consistent with t-1 shares at p=251"))
}

fn main() {
    let criteria: [(&str, fn() -> Check); 11] = [
        ("cost: storage per approach", cost_storage),
        ("cost: sharing compute", || cost_compute(false)),
        ("cost: access compute", || cost_compute(true)),
        ("cost: volume curves", cost_volume_curves),
        ("protocol: round trip", round_trip),
        ("protocol: availability", availability),
        ("protocol: integrity", integrity),
        ("protocol: homomorphic aggregation", aggregation),
        ("protocol: signature tree oracle", signature_tree),
        ("protocol: cube refresh equals rebuild", cube_refresh_equals_rebuild),
        ("protocol: structural privacy", structural_privacy),
    ];
    let mut failed = 0;
    for (name, run) in criteria {
        let start = Instant::now();
        let outcome = run();
        let secs = start.elapsed().as_secs_f64();
        match outcome {
            Ok(detail) => println!("PASS  {name} ({secs:.2}s): {detail}"),
            Err(detail) => {
                failed += 1;
                println!("FAIL  {name} ({secs:.2}s): {detail}");
            }
        }
    }
    println!("acceptance: {} passed, {failed} failed", criteria.len() - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
