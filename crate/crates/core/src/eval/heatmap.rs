//! Standalone XHTML rendering of per-token log-probability differences and
//! combination weights as two aligned rows of colored spans.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::error::{Error, Result};

/// Upper edges (nats) of the first four `|diff|` bins; larger values fall
/// in bin 5.
const DIFF_EDGES: [f64; 4] = [0.5, 1.0, 2.0, 4.0];
/// Width of each `|λ - 0.5|` bin.
const LAMBDA_STEP: f64 = 0.1;
const BINS: usize = 5;

const STYLE: &str = "body{font-family:monospace;line-height:2.2}\
.row{white-space:pre-wrap;margin-bottom:1.5em}\
.row span{padding:1px 0}\
.n{background:#eeeeee}\
.g1{background:#e3f5e1}.g2{background:#b9e4b3}.g3{background:#8ccf83}.g4{background:#5cb453}.g5{background:#2e8b29;color:#fff}\
.r1{background:#fbe3e1}.r2{background:#f4b6b0}.r3{background:#e9857c}.r4{background:#d6544a}.r5{background:#b0241b;color:#fff}";

/// `g{bin}` when `x > 0`, `r{bin}` when `x < 0`, `n` otherwise.
fn class(x: f64, bin: usize) -> String {
    if x > 0.0 {
        format!("g{bin}")
    } else if x < 0.0 {
        format!("r{bin}")
    } else {
        "n".to_string()
    }
}

fn diff_bin(d: f64) -> usize {
    let m = d.abs();
    DIFF_EDGES.iter().position(|&e| m <= e).map_or(BINS, |i| i + 1)
}

fn lambda_bin(lam: f64) -> usize {
    ((lam - 0.5).abs() / LAMBDA_STEP).ceil().clamp(1.0, BINS as f64) as usize
}

fn escape(s: &str, out: &mut String) {
    for c in s.chars() {
        match c {
            '&' => out.push_str("&amp;"),
            '<' => out.push_str("&lt;"),
            '>' => out.push_str("&gt;"),
            '"' => out.push_str("&quot;"),
            '\n' => out.push('\u{21b5}'),
            c if c.is_control() => {
                let _ = write!(out, "\\u{{{:x}}}", c as u32);
            }
            c => out.push(c),
        }
    }
}

/// Renders the heatmap document. Green marks tokens the small model
/// predicted better (row 1) or weighted towards it (row 2); red the large
/// model. Intensity is binned in five steps per sign.
pub fn heatmap(tokens: &[String], diffs: &[f64], lambdas: &[f64]) -> Result<String> {
    if tokens.len() != diffs.len() || tokens.len() != lambdas.len() {
        return Err(Error::ShapeError(format!(
            "heatmap needs equal lengths, got {} tokens, {} diffs, {} weights",
            tokens.len(),
            diffs.len(),
            lambdas.len()
        )));
    }
    let mut diff_row = String::new();
    let mut lambda_row = String::new();
    for ((tok, &d), &lam) in tokens.iter().zip(diffs).zip(lambdas) {
        let mut text = String::new();
        escape(tok, &mut text);
        let _ = write!(
            diff_row,
            "<span class=\"{}\" title=\"diff={d:.3}\">{text}</span>",
            class(d, diff_bin(d))
        );
        let _ = write!(
            lambda_row,
            "<span class=\"{}\" title=\"lambda={lam:.3}\">{text}</span>",
            class(lam - 0.5, lambda_bin(lam))
        );
    }
    Ok(format!(
        "<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n\
<!DOCTYPE html>\n\
<html xmlns=\"http://www.w3.org/1999/xhtml\">\n\
<head>\n<meta charset=\"UTF-8\"/>\n<title>token heatmap</title>\n<style>{STYLE}</style>\n</head>\n\
<body>\n\
<h2>log p(small) - log p(large)</h2>\n<div class=\"row diff\">{diff_row}</div>\n\
<h2>weight on small model - 0.5</h2>\n<div class=\"row lambda\">{lambda_row}</div>\n\
</body>\n</html>\n"
    ))
}

pub fn write_heatmap(path: &Path, tokens: &[String], diffs: &[f64], lambdas: &[f64]) -> Result<()> {
    let html = heatmap(tokens, diffs, lambdas)?;
    fs::write(path, html).map_err(|e| Error::io(path, e))
}
