//! Fixtures shared by the criterion benches.

use fvss_core::schema::{TableSchema, Value};
use fvss_core::warehouse::{Warehouse, WarehouseParams};
use fvss_core::MERSENNE_61;

/// Sale-like rows: key, foreign key, a real and an int measure.
pub fn sales_rows(count: u64) -> Vec<Vec<Value>> {
    (1..=count)
        .map(|k| {
            vec![
                Value::Key(k),
                Value::Key(1 + k % 7),
                Value::Real((k * 37 % 10_000) as f64 / 100.0),
                Value::Int((k * 13 % 500) as i64 - 250),
            ]
        })
        .collect()
}

pub fn sales_schema() -> TableSchema {
    TableSchema::parse("Sale", "OrderNo:pk, ProdNo:key, price:real(2), qty:int").expect("valid schema")
}

/// An empty deployment with the `Sale` table and a Type II index on `qty`.
pub fn empty_warehouse(n: usize, t: usize) -> Warehouse {
    let mut wh = Warehouse::new(WarehouseParams::new(MERSENNE_61, n, t, b"bench")).expect("valid parameters");
    wh.create_table(sales_schema()).expect("fresh table");
    wh.add_order_index("Sale", "qty").expect("known column");
    wh
}

/// [`empty_warehouse`] loaded with `rows` sales.
pub fn sales_warehouse(n: usize, t: usize, rows: u64) -> Warehouse {
    let mut wh = empty_warehouse(n, t);
    wh.insert_rows("Sale", sales_rows(rows)).expect("load");
    wh
}
