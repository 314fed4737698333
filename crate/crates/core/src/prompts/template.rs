//! Slot templates: literal text, `{argK}` slots (1-based) and `[...]`
//! optional groups. A group renders only when every slot directly inside it
//! is filled; nested groups decide for themselves.

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Piece {
    Text(String),
    Slot(usize),
    Group(Vec<Piece>),
}

pub fn parse(template: &str) -> Result<Vec<Piece>> {
    let chars: Vec<char> = template.chars().collect();
    let mut pos = 0;
    let pieces = parse_seq(&chars, &mut pos, template)?;
    if pos != chars.len() {
        return Err(Error::TemplateSyntax(format!(
            "unmatched `]` at {pos} in `{template}`"
        )));
    }
    Ok(pieces)
}

fn parse_seq(chars: &[char], pos: &mut usize, src: &str) -> Result<Vec<Piece>> {
    let mut out = Vec::new();
    let mut text = String::new();
    while *pos < chars.len() {
        match chars[*pos] {
            '[' => {
                *pos += 1;
                flush(&mut text, &mut out);
                let inner = parse_seq(chars, pos, src)?;
                if chars.get(*pos) != Some(&']') {
                    return Err(Error::TemplateSyntax(format!("unclosed `[` in `{src}`")));
                }
                *pos += 1;
                out.push(Piece::Group(inner));
            }
            ']' => break,
            '{' => {
                let close = chars[*pos..]
                    .iter()
                    .position(|&c| c == '}')
                    .ok_or_else(|| Error::TemplateSyntax(format!("unclosed `{{` in `{src}`")))?;
                let name: String = chars[*pos + 1..*pos + close].iter().collect();
                let k = name
                    .strip_prefix("arg")
                    .and_then(|n| n.parse::<usize>().ok())
                    .filter(|&k| k >= 1)
                    .ok_or_else(|| {
                        Error::TemplateSyntax(format!("bad slot `{{{name}}}` in `{src}`"))
                    })?;
                flush(&mut text, &mut out);
                out.push(Piece::Slot(k));
                *pos += close + 1;
            }
            '}' => {
                return Err(Error::TemplateSyntax(format!("stray `}}` in `{src}`")));
            }
            c => {
                text.push(c);
                *pos += 1;
            }
        }
    }
    flush(&mut text, &mut out);
    Ok(out)
}

fn flush(text: &mut String, out: &mut Vec<Piece>) {
    if !text.is_empty() {
        out.push(Piece::Text(std::mem::take(text)));
    }
}

/// Render with `fill(k)` supplying slot `k`. A top-level slot that cannot be
/// filled renders empty.
pub fn render(pieces: &[Piece], fill: &dyn Fn(usize) -> Option<String>) -> String {
    let mut out = String::new();
    render_into(pieces, fill, &mut out);
    out
}

fn render_into(pieces: &[Piece], fill: &dyn Fn(usize) -> Option<String>, out: &mut String) {
    for p in pieces {
        match p {
            Piece::Text(t) => out.push_str(t),
            Piece::Slot(k) => out.push_str(&fill(*k).unwrap_or_default()),
            Piece::Group(inner) => {
                let complete = inner.iter().all(|q| match q {
                    Piece::Slot(k) => fill(*k).is_some(),
                    _ => true,
                });
                if complete {
                    render_into(inner, fill, out);
                }
            }
        }
    }
}
