use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::structuralizer::CLASS_NAMES;

use super::SaliencyMap;

/// Tab-separated `token<TAB>value` lines after two header lines naming the
/// note and class. Values use the shortest exact decimal form.
pub fn render_tsv(map: &SaliencyMap) -> String {
    let mut out = format!("#note\t{}\n#class\t{}\n", map.note_id, map.target_class);
    for (t, v) in map.tokens.iter().zip(&map.values) {
        let _ = writeln!(out, "{t}\t{v:?}");
    }
    out
}

pub fn parse_tsv(text: &str) -> Result<SaliencyMap> {
    let mut lines = text.lines();
    let header = |line: Option<&str>, key: &str| -> Result<String> {
        line.and_then(|l| l.strip_prefix(&format!("#{key}\t")))
            .map(str::to_string)
            .ok_or_else(|| Error::parse("saliency tsv", format!("missing #{key} header")))
    };
    let note_id = header(lines.next(), "note")?;
    let target_class = header(lines.next(), "class")?.parse().map_err(|e| Error::parse("saliency tsv", e))?;
    let (mut tokens, mut values) = (Vec::new(), Vec::new());
    for (n, line) in lines.enumerate() {
        let (tok, val) = line
            .rsplit_once('\t')
            .ok_or_else(|| Error::parse("saliency tsv", format!("line {}: expected token and value", n + 3)))?;
        tokens.push(tok.to_string());
        values.push(val.parse::<f64>().map_err(|e| Error::parse("saliency tsv", e))?);
    }
    Ok(SaliencyMap { note_id, tokens, values, target_class })
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

/// Standalone HTML page shading each token red (positive) or blue
/// (negative) with opacity `|value| / max |value|`.
pub fn render_html(map: &SaliencyMap) -> String {
    let max = map.values.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let class = CLASS_NAMES.get(map.target_class).copied().unwrap_or("?");
    let mut body = String::new();
    for (t, &v) in map.tokens.iter().zip(&map.values) {
        let alpha = if max > 0.0 { v.abs() / max } else { 0.0 };
        if alpha > 0.0 {
            let rgb = if v > 0.0 { "220,38,38" } else { "37,99,235" };
            let _ = write!(body, "<span style=\"background-color:rgba({rgb},{alpha:.4})\" title=\"{v:e}\">{}</span> ", escape(t));
        } else {
            let _ = write!(body, "<span title=\"{v:e}\">{}</span> ", escape(t));
        }
    }
    format!(
        "<!DOCTYPE html>\n<html>\n<head>\n<meta charset=\"utf-8\">\n<title>{id} / {class}</title>\n\
         <style>body{{font-family:sans-serif;line-height:2}} span{{padding:2px 1px}}</style>\n</head>\n<body>\n\
         <h1>{id} / {class}</h1>\n<p>{body}</p>\n</body>\n</html>\n",
        id = escape(&map.note_id),
    )
}

/// Writes `{note_id}.{class}.saliency.tsv` and `.html` into `dir`.
pub fn write_saliency(map: &SaliencyMap, dir: &Path) -> Result<(PathBuf, PathBuf)> {
    let class = CLASS_NAMES.get(map.target_class).copied().unwrap_or("unknown");
    let stem = format!("{}.{class}.saliency", map.note_id);
    let tsv = dir.join(format!("{stem}.tsv"));
    let html = dir.join(format!("{stem}.html"));
    fs::write(&tsv, render_tsv(map)).map_err(|e| Error::io(&tsv, e))?;
    fs::write(&html, render_html(map)).map_err(|e| Error::io(&html, e))?;
    Ok((tsv, html))
}
