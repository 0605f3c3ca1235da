//! Flat `key=value` config files merged into the argument list.

use std::path::{Path, PathBuf};

use clap::CommandFactory;

use crate::Cli;

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("cannot read config file {path}: {source}")]
    Read {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}:{line}: {msg}")]
    Syntax { path: PathBuf, line: usize, msg: String },
    #[error("--config requires a file path")]
    MissingPath,
}

impl ConfigError {
    pub fn class(&self) -> &'static str {
        match self {
            ConfigError::Read { .. } => "file",
            ConfigError::Syntax { .. } | ConfigError::MissingPath => "usage",
        }
    }
}

/// One `key=value` line; `#` starts a comment.
fn parse_lines(text: &str, path: &Path) -> Result<Vec<(usize, String, String)>, ConfigError> {
    let mut out = Vec::new();
    for (k, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let Some((key, value)) = line.split_once('=') else {
            return Err(ConfigError::Syntax {
                path: path.to_path_buf(),
                line: k + 1,
                msg: format!("expected key=value, got {line:?}"),
            });
        };
        out.push((k + 1, key.trim().to_string(), value.trim().to_string()));
    }
    Ok(out)
}

fn find_config(argv: &[String]) -> Result<Option<PathBuf>, ConfigError> {
    let mut found = None;
    let mut it = argv.iter().skip(1);
    while let Some(a) = it.next() {
        if a == "--" {
            break;
        }
        if a == "--config" {
            found = Some(PathBuf::from(it.next().ok_or(ConfigError::MissingPath)?));
        } else if let Some(p) = a.strip_prefix("--config=") {
            found = Some(PathBuf::from(p));
        }
    }
    Ok(found)
}

/// Position of the subcommand token, skipping values of global options.
fn subcommand_position(argv: &[String], cmd: &clap::Command) -> Option<usize> {
    let mut k = 1;
    while k < argv.len() {
        let a = &argv[k];
        if let Some(name) = a.strip_prefix("--") {
            let takes_value = !name.contains('=')
                && cmd
                    .get_arguments()
                    .find(|arg| arg.get_long() == Some(name))
                    .is_some_and(|arg| arg.get_action().takes_values());
            k += if takes_value { 2 } else { 1 };
        } else if cmd.find_subcommand(a).is_some() {
            return Some(k);
        } else {
            k += 1;
        }
    }
    None
}

fn render(arg: &clap::Arg, key: &str, value: &str, ctx: (&Path, usize)) -> Result<Vec<String>, ConfigError> {
    if arg.get_action().takes_values() {
        return Ok(vec![format!("--{key}"), value.to_string()]);
    }
    match value {
        "true" | "1" | "yes" => Ok(vec![format!("--{key}")]),
        "false" | "0" | "no" => Ok(Vec::new()),
        _ => Err(ConfigError::Syntax {
            path: ctx.0.to_path_buf(),
            line: ctx.1,
            msg: format!("`{key}` expects true or false, got {value:?}"),
        }),
    }
}

/// Expands `--config FILE` into explicit flags placed before the
/// command-line ones, so that flags given on the command line take effect.
pub fn apply_config_file(argv: Vec<String>) -> anyhow::Result<Vec<String>> {
    let Some(path) = find_config(&argv)? else {
        return Ok(argv);
    };
    let text = std::fs::read_to_string(&path).map_err(|source| ConfigError::Read {
        path: path.clone(),
        source,
    })?;
    let entries = parse_lines(&text, &path)?;

    let cmd = Cli::command();
    let sub_pos = subcommand_position(&argv, &cmd);
    let sub = sub_pos.and_then(|p| cmd.find_subcommand(&argv[p]));

    let mut globals = Vec::new();
    let mut locals = Vec::new();
    for (line, key, value) in entries {
        let unknown = || ConfigError::Syntax {
            path: path.clone(),
            line,
            msg: format!("unknown key `{key}`"),
        };
        if key == "config" || key == "help" || key == "version" {
            return Err(unknown().into());
        }
        if let Some(arg) = cmd.get_arguments().find(|a| a.get_long() == Some(&key)) {
            globals.extend(render(arg, &key, &value, (&path, line))?);
        } else if let Some(arg) = sub.and_then(|s| s.get_arguments().find(|a| a.get_long() == Some(&key))) {
            locals.extend(render(arg, &key, &value, (&path, line))?);
        } else {
            return Err(unknown().into());
        }
    }

    let mut out = Vec::with_capacity(argv.len() + globals.len() + locals.len());
    out.push(argv[0].clone());
    out.extend(globals);
    match sub_pos {
        Some(p) => {
            out.extend(argv[1..=p].iter().cloned());
            out.extend(locals);
            out.extend(argv[p + 1..].iter().cloned());
        }
        None => out.extend(argv[1..].iter().cloned()),
    }
    Ok(out)
}
