//! Site extensions registered at startup: the hooks and handlers that adapt
//! the generic interface to the lab deployments.

use hdb_core::bridge::{DerivedFillSpec, DerivedOutput, Expr, OutputParse};
use hdb_core::catalog::ColumnRef;
use hdb_core::hooks::site::register_date_defaults;
use hdb_core::hooks::{HookError, HookFn, HookKind, HookMatcher, HookRegistry};
use hdb_core::views::artifact_display;

use crate::config::{ServerConfig, SlaveCommand};

/// URL prefix under which stored uploads and artifacts are served.
pub const FILES_PREFIX: &str = "/files";

/// Compound pages at the external registry, keyed by its id.
pub const EDU_URL: &str = "https://www.eduliss.org/compound?id=";

/// The spectra upload column and the analysis that fills the rest of its row.
pub fn specscan_fill(slave: &SlaveCommand) -> DerivedFillSpec {
    let d = || Expr::ident("d");
    let col = |k: f64| Expr::call("column", [d(), Expr::num(k), Expr::num(3.0)]);
    let out = |column: &str, expr: Expr, parse: OutputParse| DerivedOutput { column: column.into(), expr, parse };
    let number = OutputParse::ParseNumber;
    DerivedFillSpec {
        trigger: ColumnRef::new("scibsdb", "SpecScan", "ScanLoc"),
        program: slave.program.clone(),
        args: slave.args.clone(),
        steps: vec![Expr::assign("d", Expr::call("read_numbers", [Expr::str("{upload}")]))],
        outputs: vec![
            out(
                "ScanAICLoc",
                Expr::call("aic_plot", [d(), Expr::str("aic.ps")]),
                OutputParse::ArtifactPath { subdir: "scibsdb/SpecScan/ScanAICLoc".into() },
            ),
            out(
                "ScanIMGLoc",
                Expr::call("heatmap", [d(), Expr::str("heatmap.svg")]),
                OutputParse::ArtifactPath { subdir: "scibsdb/SpecScan/ScanIMGLoc".into() },
            ),
            out("SpectraNof", Expr::call("length", [col(1.0)]), number.clone()),
            out("RetTimeMin", Expr::call("min", [col(1.0)]), number.clone()),
            out("RetTimeMax", Expr::call("max", [col(1.0)]), number.clone()),
            out("IonCountMean", Expr::call("mean", [col(3.0)]), number.clone()),
            out("IonCountMax", Expr::call("max", [col(3.0)]), number.clone()),
            out("MassMin", Expr::call("min", [col(2.0)]), number.clone()),
            out("MassMax", Expr::call("max", [col(2.0)]), number.clone()),
            out("PrfMethod", Expr::str("centroid"), OutputParse::ParseString),
            out("PrfStep", Expr::num(0.1), number),
        ],
        timeout: slave.timeout,
    }
}

/// The hook registry for a configuration.
pub fn build_hooks(cfg: &ServerConfig) -> Result<HookRegistry, HookError> {
    let mut reg = HookRegistry::new();
    for src in &cfg.sources {
        if src.name == "ni_lhh" {
            register_date_defaults(&mut reg, &src.name)?;
        }
    }
    reg.register(
        HookKind::OutputLink,
        HookMatcher::any().column("EduID"),
        HookFn::output_link(|_, v| Ok((!v.is_empty()).then(|| format!("{EDU_URL}{v}")))),
    )?;
    for c in &cfg.upload_columns {
        reg.declare_upload_column(HookMatcher::exact(&c.db, &c.table, &c.column));
    }
    if let Some(slave) = &cfg.slave {
        let spec = specscan_fill(slave);
        let t = spec.trigger.clone();
        if cfg.upload_columns.contains(&t) {
            reg.register(
                HookKind::DerivedFill,
                HookMatcher::exact(&t.db, &t.table, &t.column),
                HookFn::derived_fill(spec),
            )?;
        }
    }
    reg.register_handler("artifact_display", artifact_display(FILES_PREFIX))?;
    Ok(reg)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::time::Duration;

    #[test]
    fn spec_fills_eleven_columns() {
        let spec = specscan_fill(&SlaveCommand { program: "x".into(), args: vec![], timeout: Duration::from_secs(1) });
        assert_eq!(spec.outputs.len(), 11);
        let artifacts = spec.outputs.iter().filter(|o| matches!(o.parse, OutputParse::ArtifactPath { .. })).count();
        assert_eq!(artifacts, 2);
    }

    #[test]
    fn derived_fill_needs_the_upload_column() {
        let mut cfg = ServerConfig {
            slave: Some(SlaveCommand { program: "x".into(), args: vec![], timeout: Duration::from_secs(1) }),
            ..Default::default()
        };
        assert!(build_hooks(&cfg).unwrap().derived_fill("scibsdb", "SpecScan", "ScanLoc").is_none());
        cfg.upload_columns.push(ColumnRef::new("scibsdb", "SpecScan", "ScanLoc"));
        let reg = build_hooks(&cfg).unwrap();
        assert!(reg.derived_fill("scibsdb", "SpecScan", "ScanLoc").is_some());
        assert!(reg.is_upload_column("scibsdb", "SpecScan", "ScanLoc"));
    }
}
