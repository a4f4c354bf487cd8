//! Command-line front end for the `hetvar` variance estimators: panel CSV
//! ingestion, estimation runs, simulation campaigns, diagnostics and the
//! analytic checks.
//!
//! Exit codes: 0 success, 1 usage or config error, 2 data error, 3 failed
//! check.

pub mod checks;
pub mod commands;
pub mod config;
pub mod error;
pub mod panel_csv;
pub mod report;

pub use error::CliError;

/// Environment variable overriding the simulation seed (below `--seed`).
pub const SEED_ENV: &str = "HETVAR_SEED";

/// `--seed` wins over the environment; the config file is the fallback.
pub fn seed_override(flag: Option<u64>, env: Option<&str>) -> Result<Option<u64>, CliError> {
    if flag.is_some() {
        return Ok(flag);
    }
    match env.map(str::trim).filter(|s| !s.is_empty()) {
        Some(s) => s
            .parse()
            .map(Some)
            .map_err(|_| CliError::Usage(format!("{SEED_ENV} must be a non-negative integer, got '{s}'"))),
        None => Ok(None),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn seed_precedence() {
        assert_eq!(seed_override(Some(1), Some("2")).unwrap(), Some(1));
        assert_eq!(seed_override(None, Some("2")).unwrap(), Some(2));
        assert_eq!(seed_override(None, Some("")).unwrap(), None);
        assert_eq!(seed_override(None, None).unwrap(), None);
        assert!(seed_override(None, Some("x")).is_err());
    }
}
