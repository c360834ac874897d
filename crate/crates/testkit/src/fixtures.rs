//! Seeded fixture databases.
//!
//! Every constructor creates a fresh SQLite file inside `dir` and returns the
//! matching data-source configuration. Owner account `hdb_owner`/`owner-pw`,
//! read-only account `hdb_reader`/`reader-pw`.
//!
//! Engine-assigned keys are declared without `NOT NULL`: the auto-increment
//! trigger fills them after the row is written.

use std::path::Path;

use hdb_core::catalog::{install_auto_increment, Access, DataSourceConfig, DbAccount};
use hdb_core::ops::AuditLog;
use hdb_core::Secret;

pub const OWNER: &str = "hdb_owner";
pub const OWNER_PASSWORD: &str = "owner-pw";
pub const READER: &str = "hdb_reader";
pub const READER_PASSWORD: &str = "reader-pw";

/// The read-only audit table of `scibsdb`.
pub const AUDIT_TABLE: &str = "Input";
pub const COMPOUND_ROWS: usize = 210;

/// The six tables of the lab listing, in catalog order.
pub const LAB_TABLES: [&str; 6] = ["Experiment", "ExternalDataSource", "Input", "Mix", "MixIngredient", "Plate"];

/// Columns the user fills on `SpecScan`, in declaration order.
pub const SPECSCAN_USER_COLUMNS: [&str; 7] =
    ["ScanID", "SampleName", "ScanDate", "Operator", "Polarity", "ScanNote", "ScanLoc"];

/// Columns the derived fill computes, in declaration order.
pub const SPECSCAN_DERIVED_COLUMNS: [&str; 11] = [
    "ScanAICLoc",
    "ScanIMGLoc",
    "SpectraNof",
    "RetTimeMin",
    "RetTimeMax",
    "IonCountMean",
    "IonCountMax",
    "MassMin",
    "MassMax",
    "PrfMethod",
    "PrfStep",
];

const COMPOUND_DDL: &str = r#"
CREATE TABLE "Compound" (
    "CompID" "bigint(20) unsigned" PRIMARY KEY,
    "CompName" tinytext,
    "CompMr" "float unsigned" NOT NULL,
    "pKa" float,
    "EduID" "bigint(20) unsigned",
    "CompNote" text
);
"#;

const LAB_DDL: &str = r#"
CREATE TABLE "Experiment" (
    "ExpID" "bigint(20) unsigned" PRIMARY KEY,
    "ExpName" tinytext NOT NULL,
    "StartDate" date,
    "Notes" text
);
CREATE TABLE "ExternalDataSource" (
    "SrcID" integer PRIMARY KEY,
    "SrcName" tinytext NOT NULL,
    "Url" tinytext
);
CREATE TABLE "Mix" (
    "MixID" "bigint(20) unsigned" PRIMARY KEY,
    "MixName" tinytext NOT NULL,
    "Temp" "enum('20C','25C','37C')" NOT NULL DEFAULT '20C',
    "MixDate" date
);
CREATE TABLE "MixIngredient" (
    "MixID" "bigint(20) unsigned" NOT NULL,
    "CompID" "bigint(20) unsigned" NOT NULL,
    "Conc" float NOT NULL,
    PRIMARY KEY ("MixID", "CompID")
);
CREATE TABLE "Plate" (
    "PlateID" "bigint(20) unsigned" PRIMARY KEY,
    "PlateDate" date,
    "Layout" "enum('96','384')" NOT NULL DEFAULT '96'
);
"#;

const SPECSCAN_DDL: &str = r#"
CREATE TABLE "SpecScan" (
    "ScanID" "int(10) unsigned" NOT NULL PRIMARY KEY,
    "SampleName" tinytext NOT NULL,
    "ScanDate" date NOT NULL,
    "Operator" tinytext,
    "Polarity" "enum('positive','negative')" NOT NULL,
    "ScanNote" text,
    "ScanLoc" tinytext NOT NULL,
    "ScanAICLoc" tinytext,
    "ScanIMGLoc" tinytext,
    "SpectraNof" "int(10) unsigned",
    "RetTimeMin" float,
    "RetTimeMax" float,
    "IonCountMean" float,
    "IonCountMax" float,
    "MassMin" float,
    "MassMax" float,
    "PrfMethod" tinytext,
    "PrfStep" float
);
"#;

const NI_LHH_DDL: &str = r#"
CREATE TABLE "Experiment" (
    "ExpID" "bigint(20) unsigned" PRIMARY KEY,
    "Title" tinytext NOT NULL,
    "SetDate" date,
    "StartDate" date,
    "Notes" text
);
CREATE TABLE "Well" (
    "WellID" "bigint(20) unsigned" PRIMARY KEY,
    "PlateID" int NOT NULL,
    "StartDate" date NOT NULL,
    "Pos" tinytext NOT NULL,
    "Observation" "enum('alive','dead','censored')" NOT NULL,
    "Count" int
);
"#;

fn config(name: &str, path: &Path, read_only: &[&str]) -> DataSourceConfig {
    let mut cfg = DataSourceConfig::new(name, path);
    cfg.db_user = OWNER.into();
    cfg.db_password = Secret::new(OWNER_PASSWORD);
    cfg.accounts.push(DbAccount {
        user: READER.into(),
        password: Secret::new(READER_PASSWORD),
        access: Access::ReadOnly,
    });
    cfg.read_only_tables = read_only.iter().map(|s| s.to_string()).collect();
    cfg
}

fn create(dir: &Path, file: &str, ddl: &str, autoinc: &[(&str, &str)]) -> (std::path::PathBuf, rusqlite::Connection) {
    let path = dir.join(file);
    let _ = std::fs::remove_file(&path);
    let conn = rusqlite::Connection::open(&path).expect("create fixture database");
    conn.execute_batch(ddl).expect("fixture DDL");
    for (table, column) in autoinc {
        install_auto_increment(&conn, table, column).expect("auto-increment trigger");
    }
    (path, conn)
}

const LAB_AUTOINC: [(&str, &str); 3] = [("Experiment", "ExpID"), ("Mix", "MixID"), ("Plate", "PlateID")];

/// The main fixture: the lab tables plus `Compound` (210 rows) and `SpecScan`.
/// `Input` is the audit table and is configured read-only.
pub fn scibsdb(dir: &Path) -> DataSourceConfig {
    let ddl = format!("{COMPOUND_DDL}{LAB_DDL}{SPECSCAN_DDL}{};", AuditLog::create_table_sql(AUDIT_TABLE));
    let mut autoinc = vec![("Compound", "CompID")];
    autoinc.extend(LAB_AUTOINC);
    let (path, mut conn) = create(dir, "scibsloc.db", &ddl, &autoinc);
    seed_compounds(&mut conn);
    config("scibsdb", &path, &[AUDIT_TABLE])
}

/// Exactly the six lab tables, `Input` read-only.
pub fn lab(dir: &Path) -> DataSourceConfig {
    let ddl = format!("{LAB_DDL}{};", AuditLog::create_table_sql(AUDIT_TABLE));
    let (path, _) = create(dir, "labloc.db", &ddl, &LAB_AUTOINC);
    config("lab", &path, &[AUDIT_TABLE])
}

/// Plate experiments with per-well observations.
pub fn ni_lhh(dir: &Path) -> DataSourceConfig {
    let (path, _) = create(dir, "nilhhloc.db", NI_LHH_DDL, &[("Experiment", "ExpID"), ("Well", "WellID")]);
    config("ni_lhh", &path, &[])
}

/// A database without tables.
pub fn empty(dir: &Path, name: &str) -> DataSourceConfig {
    let (path, _) = create(dir, &format!("{name}loc.db"), "", &[]);
    config(name, &path, &[])
}

/// A source whose file does not exist.
pub fn unreachable(dir: &Path, name: &str) -> DataSourceConfig {
    config(name, &dir.join(format!("{name}loc.db")), &[])
}

#[derive(Debug, Clone, PartialEq)]
pub struct CompoundRow {
    pub id: i64,
    pub name: String,
    pub mr: f64,
    pub pka: Option<f64>,
    pub edu_id: Option<i64>,
    pub note: Option<String>,
}

const STEMS: [&str; 14] = [
    "nifedipine",
    "amlodipine",
    "felodipine",
    "isradipine",
    "nimodipine",
    "ivermectin",
    "levamisole",
    "albendazole",
    "pyrantel",
    "praziquantel",
    "serotonin",
    "dopamine",
    "octopamine",
    "tyramine",
];

/// The deterministic `Compound` rows, ids 1..=210.
pub fn compound_rows() -> Vec<CompoundRow> {
    (1..=COMPOUND_ROWS as i64)
        .map(|id| {
            let stem = STEMS[(id as usize - 1) % STEMS.len()];
            CompoundRow {
                id,
                name: format!("{stem}-{:03}", id),
                mr: 120.0 + ((id * 37) % 480) as f64 + 0.25,
                pka: (id % 3 != 0).then(|| ((id * 13) % 120) as f64 / 10.0),
                edu_id: (id % 4 == 0).then_some(50_000 + id),
                note: (id % 5 == 0).then(|| format!("batch {} & <lot {}>", id / 5, id % 7)),
            }
        })
        .collect()
}

fn seed_compounds(conn: &mut rusqlite::Connection) {
    let tx = conn.transaction().expect("seed transaction");
    {
        let mut stmt = tx
            .prepare(
                "INSERT INTO \"Compound\" (\"CompID\", \"CompName\", \"CompMr\", \"pKa\", \"EduID\", \"CompNote\") \
                 VALUES (?1, ?2, ?3, ?4, ?5, ?6)",
            )
            .expect("prepare seed");
        for r in compound_rows() {
            stmt.execute(rusqlite::params![r.id, r.name, r.mr, r.pka, r.edu_id, r.note]).expect("seed row");
        }
    }
    tx.commit().expect("seed commit");
}

/// A spectra file of `scans` lines `rt mass ions`, deterministic.
pub fn spectra_upload(scans: usize) -> String {
    (0..scans)
        .map(|i| {
            let rt = 30.0 + i as f64 * 1.5;
            let mass = 100.0 + ((i * 53) % 700) as f64 + 0.5;
            let ions = 1000 + (i * 7919) % 50_000;
            format!("{rt} {mass} {ions}\n")
        })
        .collect()
}

/// Row count of `table` through a direct engine query, bypassing hdb.
pub fn direct_count(cfg: &DataSourceConfig, table: &str) -> i64 {
    let conn = rusqlite::Connection::open(&cfg.location).expect("open fixture");
    conn.query_row(&format!("SELECT count(*) FROM \"{}\"", table.replace('"', "\"\"")), [], |r| r.get(0))
        .expect("count")
}
