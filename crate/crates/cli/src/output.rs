//! Output files: a commented header carrying the resolved config, then the body.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use anyhow::{Context, Result};

pub const CONFIG_BEGIN: &str = "resolved config begin";
pub const CONFIG_END: &str = "resolved config end";

/// Comment syntax of an output file.
#[derive(Debug, Clone, Copy)]
pub enum Format {
    Csv,
    Markdown,
}

pub fn header(format: Format, command: &str, config_toml: &str) -> String {
    let stamp = SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0);
    let mut lines = vec![
        format!("migband {} {command}", env!("CARGO_PKG_VERSION")),
        format!("generated at unix time {stamp}"),
        CONFIG_BEGIN.to_string(),
    ];
    lines.extend(config_toml.lines().map(str::to_string));
    lines.push(CONFIG_END.to_string());
    match format {
        Format::Csv => lines.iter().map(|l| format!("# {l}\n")).collect(),
        Format::Markdown => format!("<!--\n{}\n-->\n\n", lines.join("\n")),
    }
}

/// Lines between the config markers of an output written by [`header`].
#[cfg(test)]
pub fn extract_config(text: &str) -> Option<String> {
    let mut inside = false;
    let mut out = String::new();
    for line in text.lines() {
        let bare = line
            .strip_prefix("# ")
            .or_else(|| line.strip_prefix('#'))
            .unwrap_or(line);
        if bare == CONFIG_BEGIN {
            inside = true;
        } else if bare == CONFIG_END {
            return Some(out);
        } else if inside {
            out.push_str(bare);
            out.push('\n');
        }
    }
    None
}

/// Write `contents` to `dir/name` via a temporary file and a rename.
pub fn write_atomic(dir: &Path, name: &str, contents: &[u8]) -> Result<PathBuf> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    let target = dir.join(name);
    let tmp = dir.join(format!(".{name}.tmp"));
    {
        let mut f = fs::File::create(&tmp).with_context(|| format!("writing {}", tmp.display()))?;
        f.write_all(contents)?;
        f.sync_all()?;
    }
    fs::rename(&tmp, &target).with_context(|| format!("renaming to {}", target.display()))?;
    Ok(target)
}
