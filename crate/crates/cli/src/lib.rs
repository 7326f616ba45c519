//! Configuration, stage-tagged errors and the commands behind the
//! `flexcmtf` binary.

pub mod config;
pub mod error;
pub mod pipeline;

pub use config::RunConfig;
pub use error::{CliError, Stage};

/// Parses `--key value`, `--key=value` and `key=value` overrides.
pub fn parse_overrides(args: &[String]) -> Result<Vec<(String, String)>, CliError> {
    let mut out = Vec::new();
    let mut iter = args.iter();
    while let Some(arg) = iter.next() {
        let body = arg.strip_prefix("--").unwrap_or(arg);
        if let Some((k, v)) = body.split_once('=') {
            out.push((k.to_string(), v.to_string()));
        } else if arg.starts_with("--") {
            let value = iter.next().ok_or_else(|| {
                CliError::new(Stage::Config, format!("override '{arg}' needs a value"))
            })?;
            out.push((body.to_string(), value.clone()));
        } else {
            return Err(CliError::new(
                Stage::Config,
                format!("unexpected argument '{arg}' (use --key value)"),
            ));
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn override_forms() {
        let args: Vec<String> = ["--rank", "4", "--basis=polynomial", "degree=3"]
            .iter()
            .map(|s| s.to_string())
            .collect();
        let parsed = parse_overrides(&args).unwrap();
        assert_eq!(parsed[0], ("rank".into(), "4".into()));
        assert_eq!(parsed[1], ("basis".into(), "polynomial".into()));
        assert_eq!(parsed[2], ("degree".into(), "3".into()));
        assert!(parse_overrides(&["--rank".to_string()]).is_err());
        assert!(parse_overrides(&["stray".to_string()]).is_err());
    }
}
