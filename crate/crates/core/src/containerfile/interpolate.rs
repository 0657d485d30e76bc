use std::collections::{BTreeMap, BTreeSet};

use serde::Serialize;

use super::shell::split_commands;
use super::{Instruction, Verb};

/// Variables visible at a point in the instruction sequence.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct EnvContext {
    vars: BTreeMap<String, String>,
    /// `ARG`s declared without a value; their uses stay unresolved.
    declared: BTreeSet<String>,
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize)]
pub struct Interpolated {
    pub text: String,
    pub unresolved: Vec<String>,
}

impl EnvContext {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn get(&self, name: &str) -> Option<&str> {
        self.vars.get(name).map(String::as_str)
    }

    pub fn set(&mut self, name: impl Into<String>, value: impl Into<String>) {
        let name = name.into();
        self.declared.remove(&name);
        self.vars.insert(name, value.into());
    }

    /// Folds an instruction's assignments into the context. `ENV` and `ARG`
    /// values are themselves interpolated first, so `B=$A` sees the current
    /// value of `A`.
    pub fn apply(&mut self, instr: &Instruction) {
        for (k, v) in &instr.build_args {
            self.set(k.clone(), v.clone());
        }
        match instr.verb {
            Verb::Env => {
                for (k, v) in parse_assignments(&instr.args, true) {
                    let v = self.expand(&v).text;
                    self.set(k, v);
                }
            }
            Verb::Arg => {
                for (k, v) in parse_assignments(&instr.args, false) {
                    if v.is_empty() && !instr.args.contains(&format!("{k}=")) {
                        if !self.vars.contains_key(&k) {
                            self.declared.insert(k);
                        }
                    } else {
                        let v = self.expand(&v).text;
                        self.set(k, v);
                    }
                }
            }
            _ => {}
        }
    }

    /// Replaces `$VAR`, `${VAR}`, `${VAR:-default}`, `${VAR-default}` and
    /// `${VAR:+alt}`. Text inside single quotes is left alone, as are
    /// escaped dollars and positional/special parameters.
    pub fn expand(&self, text: &str) -> Interpolated {
        let chars: Vec<char> = text.chars().collect();
        let mut out = String::with_capacity(text.len());
        let mut unresolved = Vec::new();
        let mut in_single = false;
        let mut i = 0;
        while i < chars.len() {
            let c = chars[i];
            if c == '\'' {
                in_single = !in_single;
                out.push(c);
                i += 1;
                continue;
            }
            if c == '\\' && !in_single {
                out.push(c);
                if let Some(&n) = chars.get(i + 1) {
                    out.push(n);
                }
                i += 2;
                continue;
            }
            if c != '$' || in_single {
                out.push(c);
                i += 1;
                continue;
            }
            // c == '$'
            if chars.get(i + 1) == Some(&'{') {
                let Some(close) = chars[i + 2..].iter().position(|&x| x == '}') else {
                    out.push(c);
                    i += 1;
                    continue;
                };
                let inner: String = chars[i + 2..i + 2 + close].iter().collect();
                let whole: String = chars[i..i + 3 + close].iter().collect();
                i += 3 + close;
                let name_len = inner
                    .char_indices()
                    .find(|(_, ch)| !(ch.is_ascii_alphanumeric() || *ch == '_'))
                    .map(|(j, _)| j)
                    .unwrap_or(inner.len());
                let (name, op) = inner.split_at(name_len);
                if !is_name(name) {
                    out.push_str(&whole);
                    continue;
                }
                let value = self.vars.get(name).filter(|_| !self.declared.contains(name));
                match (op, value) {
                    ("", Some(v)) => out.push_str(v),
                    ("", None) => {
                        unresolved.push(name.to_string());
                        out.push_str(&whole);
                    }
                    (op, v) if op.starts_with(":-") || op.starts_with('-') => {
                        let default = op.trim_start_matches(':')[1..].to_string();
                        match v {
                            Some(v) if !(v.is_empty() && op.starts_with(':')) => out.push_str(v),
                            _ => {
                                let d = self.expand(&default);
                                unresolved.extend(d.unresolved);
                                out.push_str(&d.text);
                            }
                        }
                    }
                    (op, v) if op.starts_with(":+") || op.starts_with('+') => {
                        let alt = op.trim_start_matches(':')[1..].to_string();
                        if v.map(|v| !v.is_empty()).unwrap_or(false) {
                            let a = self.expand(&alt);
                            unresolved.extend(a.unresolved);
                            out.push_str(&a.text);
                        }
                    }
                    _ => out.push_str(&whole),
                }
                continue;
            }
            let name: String = chars[i + 1..]
                .iter()
                .take_while(|ch| ch.is_ascii_alphanumeric() || **ch == '_')
                .collect();
            if !is_name(&name) {
                out.push(c);
                i += 1;
                continue;
            }
            i += 1 + name.chars().count();
            match self.vars.get(&name) {
                Some(v) => out.push_str(v),
                None => {
                    out.push('$');
                    out.push_str(&name);
                    unresolved.push(name);
                }
            }
        }
        unresolved.sort();
        unresolved.dedup();
        Interpolated {
            text: out,
            unresolved,
        }
    }
}

fn is_name(s: &str) -> bool {
    let mut chars = s.chars();
    matches!(chars.next(), Some(c) if c.is_ascii_alphabetic() || c == '_')
        && chars.all(|c| c.is_ascii_alphanumeric() || c == '_')
}

/// Parses `K=V K2="v 2"` or the legacy `K value with spaces` form.
fn parse_assignments(args: &str, allow_legacy: bool) -> Vec<(String, String)> {
    let first = args.split_whitespace().next().unwrap_or_default();
    if allow_legacy && !first.contains('=') {
        let value = args[first.len()..].trim();
        return if first.is_empty() {
            Vec::new()
        } else {
            vec![(first.to_string(), value.to_string())]
        };
    }
    let words: Vec<String> = split_commands(args).into_iter().flatten().collect();
    words
        .into_iter()
        .filter_map(|w| match w.split_once('=') {
            Some((k, v)) if is_name(k) => Some((k.to_string(), v.to_string())),
            None if is_name(&w) => Some((w, String::new())),
            _ => None,
        })
        .collect()
}

/// Interpolates one instruction against the context that precedes it.
pub fn interpolate(instr: &Instruction, ctx: &EnvContext) -> Interpolated {
    let mut local = ctx.clone();
    for (k, v) in &instr.build_args {
        local.set(k.clone(), v.clone());
    }
    local.expand(&instr.args)
}
