//! `fvss`: batch front end over a persisted simulated deployment.
//!
//! Exit codes: 0 success, 1 usage or configuration error, 2 integrity
//! breach, 3 availability error.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use fvss_core::config::{ConfigFile, SEED_ENV};
use fvss_core::cost::{compute_table, storage_table, volume_table, TextTable};
use fvss_core::cube::{cube_build, cube_query, cube_refresh, CubeSpec};
use fvss_core::outer_sig::VerifyScope;
use fvss_core::query::{self, QueryResult};
use fvss_core::schema::{TableSchema, Value};
use fvss_core::store::persist::{write_atomic, StoreLock};
use fvss_core::warehouse::{RgChoice, Warehouse};
use fvss_core::{Error, ErrorClass};

#[derive(Parser)]
#[command(name = "fvss", version, about = "Flexible verifiable secret sharing over simulated CSPs")]
struct Cli {
    /// Deployment configuration file.
    #[arg(long, value_name = "PATH")]
    config: PathBuf,
    /// Store root; overrides `store` in the configuration.
    #[arg(long, value_name = "PATH")]
    store: Option<PathBuf>,
    /// Reconstruction group, e.g. `1,2,4,5`.
    #[arg(long, value_name = "i,j,k,l", value_delimiter = ',')]
    rg: Option<Vec<usize>>,
    #[arg(long, value_enum, default_value_t = Output::Table)]
    output: Output,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum Output {
    Csv,
    Table,
}

#[derive(Subcommand)]
enum Command {
    /// Creates the store: CSP directories, key material, tables and indices.
    Init,
    /// Shares the rows of a CSV file (header row names the columns).
    Share { table: String, csv: PathBuf },
    /// Runs a query and prints the result rows.
    Query { text: String },
    /// Checks outer signatures and prints OK or the breach paths.
    Verify {
        #[arg(long)]
        csp: Option<usize>,
        #[arg(long)]
        table: Option<String>,
    },
    /// Marks a CSP as failed.
    Fail {
        csp: usize,
        /// Also drop its stored rows.
        #[arg(long)]
        wipe: bool,
    },
    /// Brings a failed CSP back online.
    Heal { csp: usize },
    /// Overwrites one stored share, bypassing the signature tree.
    Tamper(TamperArgs),
    /// Regenerates a CSP's shares from t others.
    Recover {
        csp: usize,
        #[arg(long)]
        table: Option<String>,
    },
    /// Cloud cubes.
    #[command(subcommand)]
    Cube(CubeCommand),
    /// Storage, sharing, access and volume cost reports.
    CostReport {
        #[arg(long, value_enum, default_value_t = Report::All)]
        report: Report,
    },
}

#[derive(Args)]
struct TamperArgs {
    csp: usize,
    table: String,
    pk: u64,
    column: String,
    #[arg(long, default_value_t = 0)]
    chunk: usize,
    /// Replacement share; defaults to the old share plus one.
    #[arg(long)]
    value: Option<u64>,
}

#[derive(Subcommand)]
enum CubeCommand {
    /// Builds a cube from `SELECT dims, aggregates FROM ... GROUP BY dims`.
    Build { name: String, sql: String },
    /// Loads new fact rows from a CSV file and refreshes the cube.
    Refresh { name: String, csv: PathBuf },
    /// Reads cube cells; the slice is a WHERE condition on dimensions.
    Query {
        name: String,
        #[arg(default_value = "")]
        slice: String,
    },
    List,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Report {
    All,
    Storage,
    Sharing,
    Access,
    Volume,
}

/// Failure carrying its exit class.
#[derive(Debug)]
enum Failure {
    Core(Error),
    Breach(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Core(e)
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure::Core(e.into())
    }
}

impl Failure {
    fn code(&self) -> u8 {
        match self {
            Failure::Breach(_) => 2,
            Failure::Core(e) => match e.class() {
                ErrorClass::Usage => 1,
                ErrorClass::Integrity => 2,
                ErrorClass::Availability => 3,
            },
        }
    }
}

type Outcome = std::result::Result<(), Failure>;

const CUBES_FILE: &str = "cubes";

struct Session {
    cfg: ConfigFile,
    root: Option<PathBuf>,
    rg: RgChoice,
    output: Output,
}

impl Session {
    fn new(cli: &Cli) -> Result<Self, Error> {
        let text = fs::read_to_string(&cli.config)
            .map_err(|e| Error::InvalidConfig(format!("{}: {e}", cli.config.display())))?;
        let mut cfg = ConfigFile::parse(&text)?;
        cfg.override_seed(std::env::var(SEED_ENV).ok());
        let root = match (&cli.store, &cfg.store) {
            (Some(s), _) => Some(s.clone()),
            (None, Some(s)) if s.is_relative() => Some(cli.config.parent().unwrap_or(Path::new(".")).join(s)),
            (None, s) => s.clone(),
        };
        let rg = match &cli.rg {
            Some(v) => {
                if v.len() != cfg.t || v.iter().any(|&c| c == 0 || c > cfg.n) {
                    return Err(Error::InvalidConfig(format!("--rg needs {} distinct CSPs in 1..={}", cfg.t, cfg.n)));
                }
                RgChoice::Fixed(v.clone())
            }
            None => RgChoice::Auto,
        };
        Ok(Self { cfg, root, rg, output: cli.output })
    }

    fn root(&self) -> Result<&Path, Error> {
        self.root.as_deref().ok_or_else(|| Error::InvalidConfig("no store path: set `store` or pass --store".into()))
    }

    fn open(&self) -> Result<Warehouse, Error> {
        Warehouse::open(self.root()?, self.cfg.params())
    }

    fn print(&self, t: &TextTable) {
        match self.output {
            Output::Table => print!("{}", t.render_text()),
            Output::Csv => print!("{}", t.render_csv()),
        }
    }

    fn print_result(&self, r: &QueryResult) {
        self.print(&TextTable {
            title: format!("({} row{})", r.rows.len(), if r.rows.len() == 1 { "" } else { "s" }),
            header: r.columns.clone(),
            rows: r.rows.iter().map(|row| row.iter().map(ToString::to_string).collect()).collect(),
        });
    }

    fn cubes(&self) -> Result<Vec<CubeSpec>, Error> {
        let path = self.root()?.join(CUBES_FILE);
        if !path.exists() {
            return Ok(Vec::new());
        }
        fs::read_to_string(path)?.lines().filter(|l| !l.trim().is_empty()).map(str::parse).collect()
    }

    fn cube(&self, name: &str) -> Result<CubeSpec, Error> {
        self.cubes()?
            .into_iter()
            .find(|c| c.name == name)
            .ok_or_else(|| Error::UnknownTable(format!("cube {name}")))
    }
}

/// Reads a CSV file whose header names the schema columns in any order.
fn read_csv(path: &Path, schema: &TableSchema) -> Result<Vec<Vec<Value>>, Error> {
    let mut rdr = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| Error::InvalidConfig(format!("{}: {e}", path.display())))?;
    let header = rdr.headers().map_err(|e| Error::SchemaMismatch(e.to_string()))?.clone();
    if header.is_empty() {
        return Ok(Vec::new());
    }
    let mut order = Vec::with_capacity(schema.columns.len());
    for c in &schema.columns {
        let at = header.iter().position(|h| h.eq_ignore_ascii_case(&c.name));
        order.push(at.ok_or_else(|| Error::SchemaMismatch(format!("{}: no `{}` column", path.display(), c.name)))?);
    }
    if header.len() != order.len() {
        return Err(Error::SchemaMismatch(format!(
            "{}: {} columns, {} expects {}",
            path.display(),
            header.len(),
            schema.name,
            order.len()
        )));
    }
    let mut rows = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| Error::SchemaMismatch(e.to_string()))?;
        let fields: Vec<&str> = order.iter().map(|&i| rec.get(i).unwrap_or("")).collect();
        rows.push(schema.parse_row(&fields)?);
    }
    Ok(rows)
}

fn same_row(schema: &TableSchema, a: &[Value], b: &[Value]) -> bool {
    schema.columns.iter().zip(a.iter().zip(b)).all(|(c, (x, y))| match (x.units(c.ty), y.units(c.ty)) {
        (Some(u), Some(v)) => u == v,
        _ => x == y,
    })
}

fn init(s: &Session) -> Outcome {
    if s.root()?.join("client").join("keys").exists() {
        return Err(Error::InvalidConfig(format!("{} is already initialized", s.root()?.display())).into());
    }
    let _lock = StoreLock::acquire(s.root()?)?;
    let mut wh = Warehouse::new(s.cfg.params())?;
    for schema in s.cfg.schemas()? {
        wh.create_table(schema)?;
    }
    for (t, c) in &s.cfg.type2 {
        wh.add_order_index(t, c)?;
    }
    for (t, d) in &s.cfg.type3 {
        wh.add_derived_column(t, fvss_core::schema::Derived::parse(d)?)?;
    }
    wh.save(s.root()?)?;
    println!("initialized {} CSPs, {} tables at {}", s.cfg.n, s.cfg.tables.len(), s.root()?.display());
    Ok(())
}

fn share(s: &Session, table: &str, csv: &Path) -> Outcome {
    let _lock = StoreLock::acquire(s.root()?)?;
    let mut wh = s.open()?;
    let schema = wh.schema(table)?.clone();
    let rows = read_csv(csv, &schema)?;
    let loc = wh.index().location(table)?;
    let mut fresh = Vec::new();
    let mut unchanged = 0;
    for row in rows {
        let pk = schema.pk_of(&row)?;
        if loc.get(pk).is_some() {
            // Re-sharing an identical record is a no-op.
            if let Ok(old) = wh.reconstruct_row(table, pk, &s.rg) {
                if same_row(&schema, &old, &row) {
                    unchanged += 1;
                    continue;
                }
            }
        }
        fresh.push(row);
    }
    let report = if fresh.is_empty() { Default::default() } else { wh.insert_rows(table, fresh)? };
    wh.save(s.root()?)?;
    let writes = if report.writes.is_empty() { vec![0; s.cfg.n] } else { report.writes.clone() };
    s.print(&TextTable {
        title: format!("{table}: {} inserted, {} updated, {unchanged} unchanged", report.inserted, report.updated),
        header: vec!["CSP".into(), "shared records written".into()],
        rows: writes
            .iter()
            .enumerate()
            .map(|(i, w)| vec![format!("CSP{}", i + 1), w.to_string()])
            .chain([vec!["total".into(), writes.iter().sum::<usize>().to_string()]])
            .collect(),
    });
    Ok(())
}

fn verify(s: &Session, csp: Option<usize>, table: Option<String>) -> Outcome {
    let wh = s.open()?;
    let scope = table.map_or(VerifyScope::Whole, VerifyScope::Table);
    let reports = wh.verify(csp, &scope)?;
    let mut breaches = Vec::new();
    for (c, r) in &reports {
        for b in &r.breaches {
            breaches.push(format!("CSP{c}: {b}"));
        }
    }
    if breaches.is_empty() {
        println!("OK");
        Ok(())
    } else {
        for b in &breaches {
            println!("BREACH {b}");
        }
        Err(Failure::Breach(format!("{} breach path(s)", breaches.len())))
    }
}

fn mutate(s: &Session, f: impl FnOnce(&mut Warehouse) -> Result<String, Error>) -> Outcome {
    let _lock = StoreLock::acquire(s.root()?)?;
    let mut wh = s.open()?;
    let msg = f(&mut wh)?;
    wh.save(s.root()?)?;
    println!("{msg}");
    Ok(())
}

fn cube(s: &Session, cmd: CubeCommand) -> Outcome {
    match cmd {
        CubeCommand::Build { name, sql } => {
            let spec = CubeSpec::new(&name, &sql)?;
            let mut specs = s.cubes()?;
            if specs.iter().any(|c| c.name == name) {
                return Err(Error::DuplicateTable(spec.table_name()).into());
            }
            let _lock = StoreLock::acquire(s.root()?)?;
            let mut wh = s.open()?;
            let cells = cube_build(&mut wh, &spec, &s.rg)?;
            wh.save(s.root()?)?;
            specs.push(spec);
            let text: String = specs.iter().map(|c| format!("{c}\n")).collect();
            write_atomic(&s.root()?.join(CUBES_FILE), &text)?;
            println!("cube {name}: {cells} cells over {} grouping sets", specs.last().map_or(0, CubeSpec::lattice_size));
        }
        CubeCommand::Refresh { name, csv } => {
            let spec = s.cube(&name)?;
            let _lock = StoreLock::acquire(s.root()?)?;
            let mut wh = s.open()?;
            let fact = wh.schema(&spec.query.from.name)?.clone();
            let rows = read_csv(&csv, &fact)?;
            let r = cube_refresh(&mut wh, &spec, rows, &s.rg)?;
            wh.save(s.root()?)?;
            println!("cube {name}: {} new facts, {} cells created, {} cells updated", r.facts, r.cells_created, r.cells_updated);
        }
        CubeCommand::Query { name, slice } => {
            let spec = s.cube(&name)?;
            let wh = s.open()?;
            s.print_result(&cube_query(&wh, &spec, &slice, &s.rg)?);
        }
        CubeCommand::List => {
            for c in s.cubes()? {
                println!("{c}");
            }
        }
    }
    Ok(())
}

fn cost_report(s: &Session, report: Report) -> Outcome {
    let scenario = s.cfg.scenario();
    let pricing = s.cfg.pricing_policy()?;
    let mut tables = Vec::new();
    if matches!(report, Report::All | Report::Storage) {
        tables.push(storage_table(&scenario, &pricing)?);
    }
    if matches!(report, Report::All | Report::Sharing) {
        tables.push(compute_table(&scenario, &pricing, false)?);
    }
    if matches!(report, Report::All | Report::Access) {
        tables.push(compute_table(&scenario, &pricing, true)?);
    }
    if matches!(report, Report::All | Report::Volume) {
        tables.push(volume_table()?);
    }
    for (i, t) in tables.iter().enumerate() {
        if i > 0 {
            println!();
        }
        s.print(t);
    }
    Ok(())
}

fn run(cli: Cli) -> Outcome {
    let s = Session::new(&cli)?;
    if let Some(w) = s.cfg.warning() {
        eprintln!("{w}");
    }
    match cli.command {
        Command::Init => init(&s),
        Command::Share { table, csv } => share(&s, &table, &csv),
        Command::Query { text } => {
            let wh = s.open()?;
            s.print_result(&query::run(&wh, &text, &s.rg)?);
            Ok(())
        }
        Command::Verify { csp, table } => verify(&s, csp, table),
        Command::Fail { csp, wipe } => mutate(&s, |wh| {
            wh.fail(csp)?;
            if wipe {
                wh.wipe(csp, None)?;
            }
            Ok(format!("CSP{csp} failed{}", if wipe { " and wiped" } else { "" }))
        }),
        Command::Heal { csp } => mutate(&s, |wh| {
            wh.heal(csp)?;
            Ok(format!("CSP{csp} healed"))
        }),
        Command::Tamper(a) => mutate(&s, |wh| {
            wh.tamper(a.csp, &a.table, a.pk, &a.column, a.chunk, a.value)?;
            Ok(format!("CSP{}: tampered {}.{} of key {}", a.csp, a.table, a.column, a.pk))
        }),
        Command::Recover { csp, table } => mutate(&s, |wh| {
            let n = wh.recover(csp, table.as_deref())?;
            Ok(format!("CSP{csp}: regenerated {n} shares"))
        }),
        Command::Cube(cmd) => cube(&s, cmd),
        Command::CostReport { report } => cost_report(&s, report),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            match &f {
                Failure::Core(e) => eprintln!("error: {e}"),
                Failure::Breach(m) => eprintln!("integrity breach: {m}"),
            }
            ExitCode::from(f.code())
        }
    }
}
