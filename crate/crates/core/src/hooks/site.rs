//! Hooks shipped for site configurations.

use chrono::{Datelike, Local};

use super::{HookError, HookFn, HookKind, HookMatcher, HookRegistry};

/// Prefills a column with the current local date as `Y-M-D`, month and day
/// without zero padding (2007-8-24).
pub fn date_default() -> HookFn {
    HookFn::default_value(|_, now| {
        let d = now.with_timezone(&Local).date_naive();
        Ok(Some(format!("{}-{}-{}", d.year(), d.month(), d.day())))
    })
}

/// Registers [`date_default`] for every column of `db` whose name ends in
/// `Date`.
pub fn register_date_defaults(reg: &mut HookRegistry, db: &str) -> Result<(), HookError> {
    reg.register(HookKind::InputDefaultValue, HookMatcher::any().db(db).column_suffix("Date"), date_default())
}
