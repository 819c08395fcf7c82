//! Turns raw Chisel/Scala/FIRRTL toolchain output into [`ErrorEntry`] lists.
//!
//! Recognized shapes:
//! - scalac 2 / firtool: `path/File.scala:14:5: message` (optionally `error:`)
//! - scala 3: `-- [E008] Not Found Error: path/File.scala:14:5` + `|` body
//! - JVM exceptions: `chisel3.ChiselException: message @[File.scala 14:5]`
//! - bare `error: message`
//!
//! sbt's `[error]` prefix and ANSI colors are stripped first. A log with
//! content but none of these shapes becomes a single unlocated entry.

use std::sync::OnceLock;

use regex::Regex;

use crate::catalog::{Catalog, STATIC_LOGIC_CLASSES};
use crate::domain::{ErrorEntry, ErrorKind, SourceLocation};

const FALLBACK_LINES: usize = 6;
const FALLBACK_CHARS: usize = 1000;

struct Patterns {
    ansi: Regex,
    prefix: Regex,
    file_line: Regex,
    scala3_header: Regex,
    scala3_excerpt: Regex,
    exception: Regex,
    bare_error: Regex,
    source_locator: Regex,
    module_tag: Regex,
    did_you_mean: Regex,
    perhaps: Regex,
    caret: Regex,
    noise: Regex,
}

fn patterns() -> &'static Patterns {
    static P: OnceLock<Patterns> = OnceLock::new();
    P.get_or_init(|| {
        let re = |s: &str| Regex::new(s).expect("diagnostic pattern compiles");
        Patterns {
            ansi: re(r"\x1b\[[0-9;]*[A-Za-z]"),
            prefix: re(r"^\[(error|warn|info|success|debug)\]\s?"),
            file_line: re(
                r"^\s*(\S+?\.(?:scala|sc|fir|mlir|sv|v|java)):(\d+):(?:(\d+):)?\s*(?:error:\s*)?(.*)$",
            ),
            scala3_header: re(
                r"^\s*--\s*(?:\[E\d+\]\s*)?[^:]*Error:\s*(\S+?):(\d+):(\d+)\s*-*\s*$",
            ),
            scala3_excerpt: re(r"^\s*(\d+\s*\||\|\s*\^+\s*$)"),
            exception: re(
                r#"^\s*(?:Exception in thread "[^"]*"\s+)?((?:[A-Za-z_][\w]*\.)+[\w$]*(?:Exception|Error))(?::\s*(.*))?$"#,
            ),
            bare_error: re(r"^\s*(?i:error):\s*(.+)$"),
            source_locator: re(r"@\[([^\s\]]+)\s+(\d+):(\d+)\]"),
            module_tag: re(r"\[module [^\]]*\]"),
            did_you_mean: re(r"(?i)did you mean\s+`?([^`?\s]+)`?\s*\?"),
            perhaps: re(r"(?i)(perhaps you forgot[^.?]*[.?])"),
            caret: re(r"^\s*\^+\s*$"),
            noise: re(
                r"(?i)^\s*(?:\w+ errors? found|\(.*\) compilation failed|compilation failed|total time:|warning:|at\s+[\w$.<>/]+\(.*\)\s*$|\.\.\. \d+ more)",
            ),
        }
    })
}

#[derive(Debug)]
struct Pending {
    location: Option<SourceLocation>,
    head: String,
    body: Vec<String>,
    scala3: bool,
}

impl Pending {
    fn message(&self) -> String {
        // Drop caret markers and the code excerpt each one points into.
        let p = patterns();
        let mut kept: Vec<&str> = Vec::new();
        for line in &self.body {
            if p.caret.is_match(line) {
                kept.pop();
                continue;
            }
            kept.push(line);
        }
        let mut parts: Vec<&str> = Vec::new();
        if !self.head.trim().is_empty() {
            parts.push(self.head.trim());
        }
        parts.extend(kept.iter().map(|l| l.trim()).filter(|l| !l.is_empty()));
        parts.join("\n")
    }
}

fn clean(line: &str) -> (Option<String>, String) {
    let p = patterns();
    let line = p.ansi.replace_all(line, "");
    match p.prefix.captures(&line) {
        Some(c) => {
            let tag = c[1].to_string();
            (Some(tag), line[c.get(0).unwrap().end()..].to_string())
        }
        None => (None, line.to_string()),
    }
}

fn start_of(line: &str) -> Option<Pending> {
    let p = patterns();
    if let Some(c) = p.scala3_header.captures(line) {
        return Some(Pending {
            location: Some(SourceLocation {
                file: c[1].to_string(),
                line: c[2].parse().unwrap_or(0),
                column: c[3].parse().ok(),
            }),
            head: String::new(),
            body: Vec::new(),
            scala3: true,
        });
    }
    if let Some(c) = p.file_line.captures(line) {
        return Some(Pending {
            location: Some(SourceLocation {
                file: c[1].to_string(),
                line: c[2].parse().unwrap_or(0),
                column: c.get(3).and_then(|m| m.as_str().parse().ok()),
            }),
            head: c[4].to_string(),
            body: Vec::new(),
            scala3: false,
        });
    }
    if let Some(c) = p.exception.captures(line) {
        let text = c.get(2).map_or("", |m| m.as_str());
        let location = p.source_locator.captures(text).map(|l| SourceLocation {
            file: l[1].to_string(),
            line: l[2].parse().unwrap_or(0),
            column: l[3].parse().ok(),
        });
        let stripped = p.source_locator.replace_all(text, "");
        let stripped = p.module_tag.replace_all(&stripped, "");
        let head = stripped.trim().trim_start_matches(':').trim().to_string();
        let head = if head.is_empty() {
            c[1].to_string()
        } else {
            head
        };
        return Some(Pending {
            location,
            head,
            body: Vec::new(),
            scala3: false,
        });
    }
    if let Some(c) = p.bare_error.captures(line) {
        return Some(Pending {
            location: None,
            head: c[1].to_string(),
            body: Vec::new(),
            scala3: false,
        });
    }
    None
}

fn finish(pending: Pending, catalog: &Catalog, out: &mut Vec<ErrorEntry>) {
    let message = pending.message();
    if message.is_empty() {
        return;
    }
    let p = patterns();
    let suggestion = p
        .did_you_mean
        .captures(&message)
        .map(|c| c[1].trim_end_matches(['?', '.']).to_string())
        .or_else(|| p.perhaps.captures(&message).map(|c| c[1].to_string()));
    let class = catalog.match_message(&message).map(|c| c.class_id.clone());
    let kind = match class.as_deref() {
        Some(c) if STATIC_LOGIC_CLASSES.contains(&c) => ErrorKind::FunctionalStatic,
        _ => ErrorKind::Syntax,
    };
    let entry = ErrorEntry::new(kind, pending.location, message, suggestion, class);
    let duplicate = out
        .iter()
        .any(|e| e.location == entry.location && e.message == entry.message);
    if !duplicate {
        out.push(entry);
    }
}

/// One entry per distinct diagnostic, in log order. Empty logs give `[]`.
pub fn parse_diagnostics(raw_log: &str, catalog: &Catalog) -> Vec<ErrorEntry> {
    let p = patterns();
    let mut out = Vec::new();
    let mut current: Option<Pending> = None;
    let mut content: Vec<String> = Vec::new();

    for raw in raw_log.lines() {
        let (tag, line) = clean(raw);
        let informational = matches!(tag.as_deref(), Some("info" | "success" | "debug" | "warn"));
        let noisy = p.noise.is_match(&line);
        if !informational && !noisy && !line.trim().is_empty() && content.len() < FALLBACK_LINES {
            content.push(line.trim().to_string());
        }
        if informational {
            if let Some(done) = current.take() {
                finish(done, catalog, &mut out);
            }
            continue;
        }
        if let Some(next) = start_of(&line) {
            if let Some(done) = current.replace(next) {
                finish(done, catalog, &mut out);
            }
            continue;
        }
        if noisy || line.trim().is_empty() {
            // Stack frames and summaries end a diagnostic; blank lines end
            // everything except scala 3 bodies, which use them as spacers.
            let keep_open = line.trim().is_empty() && current.as_ref().is_some_and(|c| c.scala3);
            if !keep_open {
                if let Some(done) = current.take() {
                    finish(done, catalog, &mut out);
                }
            }
            continue;
        }
        if let Some(cur) = current.as_mut() {
            if cur.scala3 {
                if p.scala3_excerpt.is_match(&line) {
                    continue;
                }
                let body = line.trim_start().trim_start_matches('|').to_string();
                cur.body.push(body);
            } else {
                cur.body.push(line);
            }
        }
    }
    if let Some(done) = current.take() {
        finish(done, catalog, &mut out);
    }

    if out.is_empty() && !content.is_empty() {
        let mut message = content.join("\n");
        if message.len() > FALLBACK_CHARS {
            let mut cut = FALLBACK_CHARS;
            while !message.is_char_boundary(cut) {
                cut -= 1;
            }
            message.truncate(cut);
        }
        finish(
            Pending {
                location: None,
                head: String::new(),
                body: message.lines().map(str::to_string).collect(),
                scala3: false,
            },
            catalog,
            &mut out,
        );
    }
    out
}

/// Renders entries back into a compiler-style log that parses to the same
/// entries.
pub fn render_diagnostics(entries: &[ErrorEntry]) -> String {
    let mut out = String::new();
    for e in entries {
        let mut lines = e.message.lines();
        let first = lines.next().unwrap_or("");
        match &e.location {
            Some(loc) => out.push_str(&format!("[error] {loc}: {first}\n")),
            None => out.push_str(&format!("[error] error: {first}\n")),
        }
        for rest in lines {
            out.push_str(&format!("[error]   {rest}\n"));
        }
    }
    out
}
