//! Table schemas, plaintext values and their integer encoding.
//!
//! Keys travel in plaintext. Every other non-null value is turned into one or
//! more field elements before sharing:
//!
//! | type      | chunks                                    |
//! |-----------|-------------------------------------------|
//! | int       | `x + bias`                                |
//! | real(s)   | `round(x * 10^s) + bias`                  |
//! | date      | `days since 1970-01-01 + bias`            |
//! | bool      | `0` / `1`                                 |
//! | text      | one chunk per UTF-8 byte                  |

use std::cmp::Ordering;
use std::fmt;

use chrono::NaiveDate;

use crate::error::{Error, Result};
use crate::field::{Fe, PrimeField};

/// Scale used for quotient (`x/y`) derived columns.
pub const QUOTIENT_SCALE: u32 = 6;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum ColumnType {
    PrimaryKey,
    ForeignKey,
    Int,
    Real { scale: u32 },
    Text,
    Date,
    Bool,
}

impl ColumnType {
    pub fn is_key(self) -> bool {
        matches!(self, ColumnType::PrimaryKey | ColumnType::ForeignKey)
    }

    /// Types stored as a single integer chunk.
    pub fn is_numeric(self) -> bool {
        matches!(self, ColumnType::Int | ColumnType::Real { .. } | ColumnType::Date | ColumnType::Bool)
    }

    pub fn scale(self) -> u32 {
        match self {
            ColumnType::Real { scale } => scale,
            _ => 0,
        }
    }

    /// Types offset by the codec bias before sharing.
    pub fn biased(self) -> bool {
        matches!(self, ColumnType::Int | ColumnType::Real { .. } | ColumnType::Date)
    }

    pub fn parse(s: &str) -> Result<Self> {
        let s = s.trim().to_ascii_lowercase();
        Ok(match s.as_str() {
            "pk" => ColumnType::PrimaryKey,
            "key" | "fk" => ColumnType::ForeignKey,
            "int" => ColumnType::Int,
            "real" => ColumnType::Real { scale: 2 },
            "text" => ColumnType::Text,
            "date" => ColumnType::Date,
            "bool" => ColumnType::Bool,
            other => {
                let scale = other
                    .strip_prefix("real(")
                    .and_then(|r| r.strip_suffix(')'))
                    .and_then(|d| d.parse().ok())
                    .filter(|&d: &u32| d <= 9)
                    .ok_or_else(|| Error::InvalidConfig(format!("unknown column type `{other}`")))?;
                ColumnType::Real { scale }
            }
        })
    }
}

impl fmt::Display for ColumnType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ColumnType::PrimaryKey => f.write_str("pk"),
            ColumnType::ForeignKey => f.write_str("key"),
            ColumnType::Int => f.write_str("int"),
            ColumnType::Real { scale } => write!(f, "real({scale})"),
            ColumnType::Text => f.write_str("text"),
            ColumnType::Date => f.write_str("date"),
            ColumnType::Bool => f.write_str("bool"),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Column {
    pub name: String,
    pub ty: ColumnType,
}

/// Type III derived attribute, shared as an extra column.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub enum Derived {
    Square(String),
    Product(String, String),
    Quotient(String, String),
}

impl Derived {
    pub fn name(&self) -> String {
        match self {
            Derived::Square(x) => format!("{x}^2"),
            Derived::Product(x, y) => format!("{x}*{y}"),
            Derived::Quotient(x, y) => format!("{x}/{y}"),
        }
    }

    /// Parses `x^2`, `x*y` or `x/y`.
    pub fn parse(s: &str) -> Result<Self> {
        let s = s.trim();
        let bad = || Error::InvalidConfig(format!("bad derived column `{s}`"));
        if let Some(x) = s.strip_suffix("^2") {
            return Ok(Derived::Square(x.trim().to_string()));
        }
        for (op, mk) in [('*', Derived::Product as fn(String, String) -> Derived), ('/', Derived::Quotient)] {
            if let Some((a, b)) = s.split_once(op) {
                let (a, b) = (a.trim(), b.trim());
                if a.is_empty() || b.is_empty() {
                    return Err(bad());
                }
                return Ok(mk(a.to_string(), b.to_string()));
            }
        }
        Err(bad())
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct DerivedColumn {
    pub kind: Derived,
    pub ty: ColumnType,
}

/// A column as stored at the CSPs: every base column except the primary key,
/// followed by derived columns.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct StoredColumn {
    pub name: String,
    pub ty: ColumnType,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TableSchema {
    pub name: String,
    pub columns: Vec<Column>,
    pub derived: Vec<DerivedColumn>,
}

impl TableSchema {
    pub fn new(name: impl Into<String>, columns: Vec<Column>) -> Result<Self> {
        let name = name.into();
        let pks = columns.iter().filter(|c| c.ty == ColumnType::PrimaryKey).count();
        if pks != 1 {
            return Err(Error::SchemaMismatch(format!("{name} needs exactly one pk column, has {pks}")));
        }
        for (i, c) in columns.iter().enumerate() {
            if columns[..i].iter().any(|d| d.name.eq_ignore_ascii_case(&c.name)) {
                return Err(Error::SchemaMismatch(format!("{name}: duplicate column {}", c.name)));
            }
        }
        Ok(Self { name, columns, derived: Vec::new() })
    }

    /// Parses `name:type, name:type, ...`.
    pub fn parse(name: &str, spec: &str) -> Result<Self> {
        let columns = spec
            .split(',')
            .map(|part| {
                let (n, t) = part
                    .split_once(':')
                    .ok_or_else(|| Error::InvalidConfig(format!("column `{part}` lacks a type")))?;
                Ok(Column { name: n.trim().to_string(), ty: ColumnType::parse(t)? })
            })
            .collect::<Result<Vec<_>>>()?;
        Self::new(name, columns)
    }

    pub fn describe(&self) -> String {
        self.columns.iter().map(|c| format!("{}:{}", c.name, c.ty)).collect::<Vec<_>>().join(", ")
    }

    pub fn pk_index(&self) -> usize {
        self.columns.iter().position(|c| c.ty == ColumnType::PrimaryKey).expect("validated")
    }

    pub fn pk_name(&self) -> &str {
        &self.columns[self.pk_index()].name
    }

    pub fn column_index(&self, name: &str) -> Option<usize> {
        self.columns.iter().position(|c| c.name.eq_ignore_ascii_case(name))
    }

    pub fn column(&self, name: &str) -> Result<&Column> {
        self.column_index(name)
            .map(|i| &self.columns[i])
            .ok_or_else(|| Error::UnknownColumn(format!("{}.{name}", self.name)))
    }

    pub fn stored_columns(&self) -> Vec<StoredColumn> {
        self.columns
            .iter()
            .filter(|c| c.ty != ColumnType::PrimaryKey)
            .map(|c| StoredColumn { name: c.name.clone(), ty: c.ty })
            .chain(self.derived.iter().map(|d| StoredColumn { name: d.kind.name(), ty: d.ty }))
            .collect()
    }

    /// Position of `name` among [`stored_columns`](Self::stored_columns).
    pub fn stored_index(&self, name: &str) -> Option<usize> {
        let base = self.columns.iter().filter(|c| c.ty != ColumnType::PrimaryKey);
        base.map(|c| c.name.clone())
            .chain(self.derived.iter().map(|d| d.kind.name()))
            .position(|n| n.eq_ignore_ascii_case(name))
    }

    pub fn stored_type(&self, name: &str) -> Option<ColumnType> {
        let cols = self.stored_columns();
        self.stored_index(name).map(|i| cols[i].ty)
    }

    /// Registers a Type III derived column; its type follows from its inputs.
    pub fn add_derived(&mut self, kind: Derived) -> Result<()> {
        if self.derived.iter().any(|d| d.kind == kind) {
            return Ok(());
        }
        let numeric = |name: &str| -> Result<ColumnType> {
            let c = self.column(name)?;
            match c.ty {
                ColumnType::Int | ColumnType::Bool => Ok(ColumnType::Int),
                ColumnType::Real { .. } => Ok(c.ty),
                _ => Err(Error::SchemaMismatch(format!("{}.{name} is not numeric", self.name))),
            }
        };
        let ty = match &kind {
            Derived::Square(x) => scaled(numeric(x)?.scale() * 2),
            Derived::Product(x, y) => scaled(numeric(x)?.scale() + numeric(y)?.scale()),
            Derived::Quotient(x, y) => {
                numeric(x)?;
                numeric(y)?;
                ColumnType::Real { scale: QUOTIENT_SCALE }
            }
        };
        self.derived.push(DerivedColumn { kind, ty });
        Ok(())
    }

    /// Parses one CSV-style row of strings into typed values.
    pub fn parse_row(&self, fields: &[&str]) -> Result<Vec<Value>> {
        if fields.len() != self.columns.len() {
            return Err(Error::SchemaMismatch(format!(
                "{} expects {} fields, got {}",
                self.name,
                self.columns.len(),
                fields.len()
            )));
        }
        self.columns.iter().zip(fields).map(|(c, f)| Value::parse(f, c.ty)).collect()
    }

    pub fn pk_of(&self, row: &[Value]) -> Result<u64> {
        match row.get(self.pk_index()) {
            Some(Value::Key(k)) => Ok(*k),
            other => Err(Error::SchemaMismatch(format!("{}: primary key must be a key, got {other:?}", self.name))),
        }
    }

    /// Values of every stored column for `row`, derived ones computed here.
    /// Derived values come back as exact scaled units.
    pub fn stored_values(&self, row: &[Value]) -> Result<Vec<StoredValue>> {
        if row.len() != self.columns.len() {
            return Err(Error::SchemaMismatch(format!("{}: row has {} values", self.name, row.len())));
        }
        for (c, v) in self.columns.iter().zip(row) {
            v.check_type(c.ty).map_err(|e| Error::SchemaMismatch(format!("{}.{}: {e}", self.name, c.name)))?;
        }
        let mut out: Vec<StoredValue> = self
            .columns
            .iter()
            .zip(row)
            .filter(|(c, _)| c.ty != ColumnType::PrimaryKey)
            .map(|(_, v)| StoredValue::Plain(v.clone()))
            .collect();
        for d in &self.derived {
            let units = |name: &str| -> Result<Option<(i128, u32)>> {
                let i = self.column_index(name).expect("validated at registration");
                Ok(row[i].units(self.columns[i].ty).map(|u| (u, self.columns[i].ty.scale())))
            };
            let v = match &d.kind {
                Derived::Square(x) => units(x)?.map(|(u, _)| u * u),
                Derived::Product(x, y) => match (units(x)?, units(y)?) {
                    (Some((a, _)), Some((b, _))) => Some(a * b),
                    _ => None,
                },
                Derived::Quotient(x, y) => match (units(x)?, units(y)?) {
                    (Some(_), Some((0, _))) => None,
                    (Some((a, sa)), Some((b, sb))) => {
                        let q = (a as f64 / 10f64.powi(sa as i32)) / (b as f64 / 10f64.powi(sb as i32));
                        Some((q * 10f64.powi(QUOTIENT_SCALE as i32)).round() as i128)
                    }
                    _ => None,
                },
            };
            out.push(v.map_or(StoredValue::Plain(Value::Null), StoredValue::Units));
        }
        Ok(out)
    }
}

fn scaled(scale: u32) -> ColumnType {
    if scale == 0 {
        ColumnType::Int
    } else {
        ColumnType::Real { scale }
    }
}

/// A stored column value before encoding.
#[derive(Clone, Debug, PartialEq)]
pub enum StoredValue {
    Plain(Value),
    /// Already-scaled numeric value of a derived column.
    Units(i128),
}

#[derive(Clone, Debug, PartialEq)]
pub enum Value {
    Null,
    Key(u64),
    Int(i64),
    Real(f64),
    Text(String),
    Date(NaiveDate),
    Bool(bool),
}

fn epoch() -> NaiveDate {
    NaiveDate::from_ymd_opt(1970, 1, 1).unwrap()
}

impl Value {
    pub fn parse(s: &str, ty: ColumnType) -> Result<Value> {
        let t = s.trim();
        if ty != ColumnType::Text && (t.is_empty() || t.eq_ignore_ascii_case("null")) {
            return Ok(Value::Null);
        }
        if ty == ColumnType::Text && t.eq_ignore_ascii_case("null") {
            return Ok(Value::Null);
        }
        let bad = || Error::SchemaMismatch(format!("`{s}` is not a valid {ty}"));
        Ok(match ty {
            ColumnType::PrimaryKey | ColumnType::ForeignKey => Value::Key(t.parse().map_err(|_| bad())?),
            ColumnType::Int => Value::Int(t.parse().map_err(|_| bad())?),
            ColumnType::Real { .. } => Value::Real(t.parse().map_err(|_| bad())?),
            ColumnType::Text => Value::Text(s.to_string()),
            ColumnType::Date => Value::Date(NaiveDate::parse_from_str(t, "%Y-%m-%d").map_err(|_| bad())?),
            ColumnType::Bool => match t.to_ascii_lowercase().as_str() {
                "true" | "t" | "1" | "yes" => Value::Bool(true),
                "false" | "f" | "0" | "no" => Value::Bool(false),
                _ => return Err(bad()),
            },
        })
    }

    pub fn is_null(&self) -> bool {
        matches!(self, Value::Null)
    }

    fn check_type(&self, ty: ColumnType) -> std::result::Result<(), String> {
        let ok = match (self, ty) {
            (Value::Null, ColumnType::PrimaryKey) => false,
            (Value::Null, _) => true,
            (Value::Key(_), t) => t.is_key(),
            (Value::Int(_), ColumnType::Int) => true,
            (Value::Real(_), ColumnType::Real { .. }) => true,
            (Value::Int(_), ColumnType::Real { .. }) => true,
            (Value::Text(_), ColumnType::Text) => true,
            (Value::Date(_), ColumnType::Date) => true,
            (Value::Bool(_), ColumnType::Bool) => true,
            _ => false,
        };
        if ok {
            Ok(())
        } else {
            Err(format!("value {self:?} does not fit type {ty}"))
        }
    }

    /// Scaled integer form of a numeric value (`None` for null/text/keys).
    pub fn units(&self, ty: ColumnType) -> Option<i128> {
        let pow = 10f64.powi(ty.scale() as i32);
        match self {
            Value::Int(x) => Some(*x as i128 * 10i128.pow(ty.scale())),
            Value::Real(x) => Some((x * pow).round() as i128),
            Value::Date(d) => Some((*d - epoch()).num_days() as i128),
            Value::Bool(b) => Some(*b as i128),
            _ => None,
        }
    }

    /// Inverse of [`units`](Self::units).
    pub fn from_units(units: i128, ty: ColumnType) -> Result<Value> {
        Ok(match ty {
            ColumnType::Int => Value::Int(i64::try_from(units).map_err(|_| out_of_range(units))?),
            ColumnType::Real { scale } => Value::Real(units as f64 / 10f64.powi(scale as i32)),
            ColumnType::Date => Value::Date(
                epoch()
                    .checked_add_signed(chrono::Duration::days(i64::try_from(units).map_err(|_| out_of_range(units))?))
                    .ok_or_else(|| out_of_range(units))?,
            ),
            ColumnType::Bool => Value::Bool(units != 0),
            _ => return Err(Error::SchemaMismatch(format!("{ty} has no numeric form"))),
        })
    }

    /// Order key for Type II indices; `None` for nulls.
    pub fn index_key(&self, ty: ColumnType) -> Option<IndexKey> {
        match self {
            Value::Null => None,
            Value::Text(s) => Some(IndexKey::Text(s.clone())),
            Value::Key(k) => Some(IndexKey::Num(*k as i128)),
            v => v.units(ty).map(IndexKey::Num),
        }
    }
}

fn out_of_range(units: i128) -> Error {
    Error::OutOfRange(format!("{units} does not fit the column type"))
}

impl fmt::Display for Value {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Value::Null => f.write_str("NULL"),
            Value::Key(k) => write!(f, "{k}"),
            Value::Int(x) => write!(f, "{x}"),
            Value::Real(x) => write!(f, "{x}"),
            Value::Text(s) => f.write_str(s),
            Value::Date(d) => write!(f, "{}", d.format("%Y-%m-%d")),
            Value::Bool(b) => write!(f, "{b}"),
        }
    }
}

/// Plaintext order key kept by the index server.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum IndexKey {
    Num(i128),
    Text(String),
}

impl fmt::Display for IndexKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            IndexKey::Num(n) => write!(f, "{n}"),
            IndexKey::Text(s) => f.write_str(s),
        }
    }
}

impl IndexKey {
    /// Plaintext value for a key of a column with type `ty`.
    pub fn to_value(&self, ty: ColumnType) -> Result<Value> {
        match (self, ty) {
            (IndexKey::Text(s), _) => Ok(Value::Text(s.clone())),
            (IndexKey::Num(n), t) if t.is_key() => Ok(Value::Key(*n as u64)),
            (IndexKey::Num(n), t) => Value::from_units(*n, t),
        }
    }

    pub fn cmp_value(&self, other: &IndexKey) -> Ordering {
        self.cmp(other)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ValueKind {
    Null,
    Int,
    Real,
    Text,
    Date,
    Bool,
}

/// A value after integer encoding, ready to be shared chunk by chunk.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct EncodedValue {
    pub kind: ValueKind,
    pub chunks: Vec<Fe>,
    pub scale: u32,
}

/// Encodes values of one deployment: prime field plus signed-integer bias.
#[derive(Clone, Copy, Debug)]
pub struct Codec {
    pub field: PrimeField,
    pub bias: u64,
}

impl Codec {
    pub fn new(field: PrimeField, bias: u64) -> Self {
        Self { field, bias }
    }

    /// Default bias: `2^40` when `p` leaves enough headroom, else 0.
    pub fn default_bias(p: u64) -> u64 {
        if p > 1 << 55 {
            1 << 40
        } else {
            0
        }
    }

    fn encode_units(&self, units: i128, ty: ColumnType) -> Result<Fe> {
        let biased = if ty.biased() { units + self.bias as i128 } else { units };
        if biased < 0 || biased >= self.field.modulus() as i128 {
            return Err(Error::OutOfRange(format!(
                "encoded value {biased} outside [0, {})",
                self.field.modulus()
            )));
        }
        Ok(self.field.elem(biased as u64))
    }

    pub fn encode(&self, value: &Value, ty: ColumnType) -> Result<EncodedValue> {
        let scale = ty.scale();
        let single = |kind, units| -> Result<EncodedValue> {
            Ok(EncodedValue { kind, chunks: vec![self.encode_units(units, ty)?], scale })
        };
        match value {
            Value::Null => Ok(EncodedValue { kind: ValueKind::Null, chunks: vec![], scale }),
            Value::Key(_) => Err(Error::SchemaMismatch("keys are stored in plaintext, not shared".into())),
            Value::Text(s) => {
                let chunks = s.bytes().map(|b| self.field.checked(b as u64)).collect::<Result<Vec<_>>>()?;
                Ok(EncodedValue { kind: ValueKind::Text, chunks, scale: 0 })
            }
            Value::Int(_) | Value::Real(_) if !matches!(ty, ColumnType::Int | ColumnType::Real { .. }) => {
                Err(Error::SchemaMismatch(format!("{value:?} cannot be stored as {ty}")))
            }
            Value::Int(_) => single(ValueKind::Int, value.units(ty).unwrap()),
            Value::Real(_) => single(ValueKind::Real, value.units(ty).unwrap()),
            Value::Date(_) => single(ValueKind::Date, value.units(ty).unwrap()),
            Value::Bool(_) => single(ValueKind::Bool, value.units(ty).unwrap()),
        }
    }

    pub fn encode_stored(&self, value: &StoredValue, ty: ColumnType) -> Result<EncodedValue> {
        match value {
            StoredValue::Plain(v) => self.encode(v, ty),
            StoredValue::Units(u) => Ok(EncodedValue {
                kind: if ty.scale() == 0 { ValueKind::Int } else { ValueKind::Real },
                chunks: vec![self.encode_units(*u, ty)?],
                scale: ty.scale(),
            }),
        }
    }

    /// Decodes the chunks of a single value of type `ty`.
    pub fn decode(&self, chunks: &[Fe], ty: ColumnType) -> Result<Value> {
        match ty {
            ColumnType::Text => {
                let bytes = chunks
                    .iter()
                    .map(|c| u8::try_from(c.value()).map_err(|_| Error::OutOfRange(format!("byte chunk {c}"))))
                    .collect::<Result<Vec<u8>>>()?;
                String::from_utf8(bytes)
                    .map(Value::Text)
                    .map_err(|_| Error::OutOfRange("reconstructed text is not UTF-8".into()))
            }
            t if t.is_numeric() => {
                let [chunk] = chunks else {
                    return Err(Error::OutOfRange(format!("{ty} value needs one chunk, got {}", chunks.len())));
                };
                let units = chunk.value() as i128 - if t.biased() { self.bias as i128 } else { 0 };
                Value::from_units(units, t)
            }
            _ => Err(Error::SchemaMismatch(format!("{ty} values are not shared"))),
        }
    }

    /// Removes `weight * bias` from an aggregated field value and lifts it to
    /// a signed integer. `weight` is the number of biased terms summed.
    pub fn unbias_sum(&self, raw: Fe, weight: i128, ty: ColumnType) -> i128 {
        let bias = if ty.biased() { self.bias as i128 } else { 0 };
        let correction = self.field.elem_signed(weight * bias);
        self.field.to_signed(self.field.sub(raw, correction))
    }
}
