//! On-disk layout of the simulated deployment. Everything is line-oriented
//! decimal text:
//!
//! ```text
//! <root>/csp<i>/status              alive | failed
//! <root>/csp<i>/tables.order        name \t marker
//! <root>/csp<i>/tables.sigtree      level \t index \t value
//! <root>/csp<i>/<table>.shares      pk \t attr \t attr ...
//! <root>/csp<i>/<table>.sigtree     level \t index \t value
//! <root>/index/catalog              table \t columns \t derived
//! <root>/index/type1.bitmap         table \t pk \t bitmap \t keys \t nulls
//! <root>/index/type2/<t>.<c>.idx    pk \t key
//! ```

use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use indexmap::IndexMap;

use crate::error::{Error, Result};
use crate::field::{Fe, PrimeField};
use crate::outer_sig::{AppendTree, SignatureTree};
use crate::schema::{ColumnType, Derived, IndexKey, TableSchema};
use crate::sharing::{CspSet, StoredAttr};

use super::{CspStatus, CspStore, IndexServer, LocationEntry, StoredRow};

/// Writes `contents` to `path` through a temporary file and a rename.
pub fn write_atomic(path: &Path, contents: &str) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir)?;
    }
    let tmp = path.with_extension("tmp~");
    {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(contents.as_bytes())?;
        f.sync_all()?;
    }
    fs::rename(&tmp, path)?;
    Ok(())
}

fn bad(path: &Path, line: usize, what: &str) -> Error {
    Error::StoreFormat(format!("{}:{}: {what}", path.display(), line + 1))
}

fn lines(path: &Path) -> Result<Vec<(usize, String)>> {
    if !path.exists() {
        return Ok(Vec::new());
    }
    Ok(fs::read_to_string(path)?
        .lines()
        .enumerate()
        .filter(|(_, l)| !l.is_empty())
        .map(|(i, l)| (i, l.to_string()))
        .collect())
}

fn parse_fe(field: &PrimeField, path: &Path, line: usize, s: &str) -> Result<Fe> {
    let v: u64 = s.parse().map_err(|_| bad(path, line, "expected an integer"))?;
    field.checked(v).map_err(|_| bad(path, line, "value not below p"))
}

pub fn csp_dir(root: &Path, csp: usize) -> PathBuf {
    root.join(format!("csp{csp}"))
}

fn tree_text(tree: &AppendTree) -> String {
    tree.triples().map(|(l, i, v)| format!("{l}\t{i}\t{v}\n")).collect()
}

fn read_tree(field: &PrimeField, w: usize, path: &Path) -> Result<AppendTree> {
    let mut triples = Vec::new();
    for (n, line) in lines(path)? {
        let parts: Vec<&str> = line.split('\t').collect();
        let [l, i, v] = parts[..] else { return Err(bad(path, n, "expected level, index, value")) };
        let l = l.parse().map_err(|_| bad(path, n, "bad level"))?;
        let i = i.parse().map_err(|_| bad(path, n, "bad index"))?;
        triples.push((l, i, parse_fe(field, path, n, v)?));
    }
    AppendTree::from_triples(w, triples)
}

fn attr_text(a: &StoredAttr) -> String {
    match a {
        StoredAttr::Null => "NULL".into(),
        StoredAttr::Key(k) => k.to_string(),
        StoredAttr::Shares(s) => s.iter().map(Fe::to_string).collect::<Vec<_>>().join(","),
    }
}

/// Persists one CSP: status, rows and signature tree.
pub fn save_csp(root: &Path, store: &CspStore) -> Result<()> {
    let dir = csp_dir(root, store.index());
    fs::create_dir_all(&dir)?;
    let status = match store.status() {
        CspStatus::Alive => "alive",
        CspStatus::Failed => "failed",
    };
    write_atomic(&dir.join("status"), &format!("{status}\n"))?;
    let tree = store.tree();
    let order: String = tree.table_entries().map(|(name, marker)| format!("{name}\t{marker}\n")).collect();
    write_atomic(&dir.join("tables.order"), &order)?;
    write_atomic(&dir.join("tables.sigtree"), &tree_text(tree.table_layer()))?;
    for (name, _) in tree.table_entries() {
        let mut text = String::new();
        if let Some(t) = store.raw_table(name) {
            for row in t.rows() {
                text.push_str(&row.pk.to_string());
                for a in &row.attrs {
                    text.push('\t');
                    text.push_str(&attr_text(a));
                }
                text.push('\n');
            }
        }
        write_atomic(&dir.join(format!("{name}.shares")), &text)?;
        write_atomic(&dir.join(format!("{name}.sigtree")), &tree_text(tree.record_layer(name)?))?;
    }
    Ok(())
}

/// Loads one CSP; column types come from the catalog.
pub fn load_csp(root: &Path, csp: usize, w: usize, field: &PrimeField, catalog: &IndexServer) -> Result<CspStore> {
    let dir = csp_dir(root, csp);
    if !dir.is_dir() {
        return Err(Error::StoreFormat(format!("{} is missing", dir.display())));
    }
    let status = match fs::read_to_string(dir.join("status"))?.trim() {
        "alive" => CspStatus::Alive,
        "failed" => CspStatus::Failed,
        other => return Err(Error::StoreFormat(format!("csp{csp}: unknown status `{other}`"))),
    };
    let order_path = dir.join("tables.order");
    let mut tables = IndexMap::new();
    let mut layers = Vec::new();
    for (n, line) in lines(&order_path)? {
        let (name, marker) = line.split_once('\t').ok_or_else(|| bad(&order_path, n, "expected name, marker"))?;
        let marker = parse_fe(field, &order_path, n, marker)?;
        let types: Vec<ColumnType> = catalog.schema(name)?.stored_columns().iter().map(|c| c.ty).collect();
        let shares_path = dir.join(format!("{name}.shares"));
        let mut rows = Vec::new();
        for (ln, line) in lines(&shares_path)? {
            let fields: Vec<&str> = line.split('\t').collect();
            if fields.len() != types.len() + 1 {
                return Err(bad(&shares_path, ln, "wrong number of fields"));
            }
            let pk = fields[0].parse().map_err(|_| bad(&shares_path, ln, "bad key"))?;
            let attrs = fields[1..]
                .iter()
                .zip(&types)
                .map(|(f, ty)| match (*f, ty) {
                    ("NULL", _) => Ok(StoredAttr::Null),
                    (k, ColumnType::ForeignKey) => {
                        k.parse().map(StoredAttr::Key).map_err(|_| bad(&shares_path, ln, "bad key"))
                    }
                    ("", _) => Ok(StoredAttr::Shares(Vec::new())),
                    (list, _) => list
                        .split(',')
                        .map(|v| parse_fe(field, &shares_path, ln, v))
                        .collect::<Result<Vec<_>>>()
                        .map(StoredAttr::Shares),
                })
                .collect::<Result<Vec<_>>>()?;
            rows.push(StoredRow { pk, attrs });
        }
        tables.insert(name.to_string(), rows);
        let layer = read_tree(field, w, &dir.join(format!("{name}.sigtree")))?;
        layers.push((name.to_string(), marker, layer));
    }
    let table_layer = read_tree(field, w, &dir.join("tables.sigtree"))?;
    let tree = SignatureTree::from_parts(w, table_layer, layers)?;
    CspStore::from_parts(csp, status, tables, tree)
}

fn escape(s: &str) -> String {
    s.replace('\\', "\\\\").replace('\t', "\\t").replace('\n', "\\n")
}

fn unescape(s: &str) -> String {
    let mut out = String::with_capacity(s.len());
    let mut it = s.chars();
    while let Some(c) = it.next() {
        if c == '\\' {
            match it.next() {
                Some('t') => out.push('\t'),
                Some('n') => out.push('\n'),
                Some(o) => out.push(o),
                None => out.push('\\'),
            }
        } else {
            out.push(c);
        }
    }
    out
}

/// Persists the catalog, Type I and Type II indices.
pub fn save_index(root: &Path, server: &IndexServer) -> Result<()> {
    let dir = root.join("index");
    fs::create_dir_all(dir.join("type2"))?;
    let mut catalog = String::new();
    for s in server.catalog.values() {
        let derived: Vec<String> = s.derived.iter().map(|d| d.kind.name()).collect();
        catalog.push_str(&format!("{}\t{}\t{}\n", s.name, s.describe(), derived.join(",")));
    }
    write_atomic(&dir.join("catalog"), &catalog)?;
    let mut type1 = String::new();
    for name in server.catalog.keys() {
        for (pk, e) in &server.location(name)?.entries {
            let keys: Vec<String> = e.keys.iter().map(|k| k.map_or("-".into(), |k| k.to_string())).collect();
            let nulls: String = e.nulls.iter().map(|&b| if b { '1' } else { '0' }).collect();
            type1.push_str(&format!("{name}\t{pk}\t{}\t{}\t{nulls}\n", e.bitmap, keys.join(",")));
        }
    }
    write_atomic(&dir.join("type1.bitmap"), &type1)?;
    let mut listed = String::new();
    for ((table, column), idx) in &server.ordered {
        listed.push_str(&format!("{table}\t{column}\n"));
        let text: String = idx
            .iter()
            .map(|(k, pk)| match k {
                IndexKey::Num(n) => format!("{pk}\tn:{n}\n"),
                IndexKey::Text(s) => format!("{pk}\ts:{}\n", escape(s)),
            })
            .collect();
        write_atomic(&dir.join("type2").join(format!("{table}.{column}.idx")), &text)?;
    }
    write_atomic(&dir.join("type2.list"), &listed)
}

pub fn load_index(root: &Path, n: usize) -> Result<IndexServer> {
    let dir = root.join("index");
    let mut server = IndexServer::default();
    let cat_path = dir.join("catalog");
    for (ln, line) in lines(&cat_path)? {
        let parts: Vec<&str> = line.split('\t').collect();
        let [name, cols, derived] = parts[..] else { return Err(bad(&cat_path, ln, "expected 3 fields")) };
        let mut schema = TableSchema::parse(name, cols)?;
        for d in derived.split(',').filter(|d| !d.is_empty()) {
            schema.add_derived(Derived::parse(d)?)?;
        }
        server.register(schema)?;
    }
    let t1_path = dir.join("type1.bitmap");
    for (ln, line) in lines(&t1_path)? {
        let parts: Vec<&str> = line.split('\t').collect();
        let [table, pk, bitmap, keys, nulls] = parts[..] else { return Err(bad(&t1_path, ln, "expected 5 fields")) };
        let pk: u64 = pk.parse().map_err(|_| bad(&t1_path, ln, "bad key"))?;
        let bitmap = CspSet::parse(bitmap)?;
        if bitmap.n() != n {
            return Err(bad(&t1_path, ln, "bitmap width differs from n"));
        }
        let keys = if keys.is_empty() {
            Vec::new()
        } else {
            keys.split(',')
                .map(|k| if k == "-" { Ok(None) } else { k.parse().map(Some) })
                .collect::<std::result::Result<Vec<_>, _>>()
                .map_err(|_| bad(&t1_path, ln, "bad key list"))?
        };
        let nulls = nulls.chars().map(|c| c == '1').collect();
        let loc = server.locations.get_mut(table).ok_or_else(|| Error::UnknownTable(table.to_string()))?;
        loc.entries.insert(pk, LocationEntry { bitmap, keys, nulls });
    }
    let list_path = dir.join("type2.list");
    for (ln, line) in lines(&list_path)? {
        let (table, column) = line.split_once('\t').ok_or_else(|| bad(&list_path, ln, "expected table, column"))?;
        server.add_order_index(table, column)?;
        let idx = server.ordered.get_mut(&(table.to_string(), column.to_string())).expect("just added");
        let path = dir.join("type2").join(format!("{table}.{column}.idx"));
        for (n, line) in lines(&path)? {
            let (pk, key) = line.split_once('\t').ok_or_else(|| bad(&path, n, "expected pk, key"))?;
            let pk = pk.parse().map_err(|_| bad(&path, n, "bad key"))?;
            let key = if let Some(v) = key.strip_prefix("n:") {
                IndexKey::Num(v.parse().map_err(|_| bad(&path, n, "bad number"))?)
            } else if let Some(v) = key.strip_prefix("s:") {
                IndexKey::Text(unescape(v))
            } else {
                return Err(bad(&path, n, "unknown key tag"));
            };
            idx.set(pk, Some(key));
        }
    }
    Ok(server)
}

/// Exclusive ownership of a store directory, held through a `LOCK` file
/// created with `create_new` and removed on drop.
#[derive(Debug)]
pub struct StoreLock {
    path: PathBuf,
}

impl StoreLock {
    pub fn acquire(root: &Path) -> Result<Self> {
        fs::create_dir_all(root)?;
        let path = root.join("LOCK");
        match fs::OpenOptions::new().write(true).create_new(true).open(&path) {
            Ok(mut f) => {
                writeln!(f, "{}", std::process::id())?;
                Ok(Self { path })
            }
            Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => {
                Err(Error::StoreLocked(root.display().to_string()))
            }
            Err(e) => Err(e.into()),
        }
    }
}

impl Drop for StoreLock {
    fn drop(&mut self) {
        let _ = fs::remove_file(&self.path);
    }
}
