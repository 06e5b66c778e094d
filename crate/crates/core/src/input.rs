//! Syscall-sequence inputs and their text form.
//!
//! One call per line, `name(arg, ...)`. Integers are written in hex,
//! resource references as `@<call-index>`, enum tags as bare identifiers.

use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::graph::Constant;

#[derive(Debug, thiserror::Error)]
pub enum InputError {
    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("call {call} references call {target}, which does not precede it")]
    ForwardReference { call: usize, target: usize },
    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Arg {
    Int(u64),
    /// Result of an earlier call, by index.
    Res(usize),
    Tag(String),
}

impl Arg {
    pub fn matches(&self, c: &Constant) -> bool {
        match (self, c) {
            (Arg::Int(a), Constant::Int(b)) => a == b,
            (Arg::Tag(a), Constant::Str(b)) => a == b,
            _ => false,
        }
    }
}

impl From<&Constant> for Arg {
    fn from(c: &Constant) -> Self {
        match c {
            Constant::Int(v) => Arg::Int(*v),
            Constant::Str(s) => Arg::Tag(s.clone()),
        }
    }
}

impl fmt::Display for Arg {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Arg::Int(v) => write!(f, "{v:#x}"),
            Arg::Res(i) => write!(f, "@{i}"),
            Arg::Tag(t) => f.write_str(t),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Call {
    pub name: String,
    pub args: Vec<Arg>,
}

impl Call {
    pub fn new(name: impl Into<String>, args: Vec<Arg>) -> Self {
        Call {
            name: name.into(),
            args,
        }
    }
}

impl fmt::Display for Call {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}(", self.name)?;
        for (i, a) in self.args.iter().enumerate() {
            if i > 0 {
                f.write_str(", ")?;
            }
            write!(f, "{a}")?;
        }
        f.write_str(")")
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Input {
    pub calls: Vec<Call>,
}

impl Input {
    pub fn new(calls: Vec<Call>) -> Self {
        Input { calls }
    }

    pub fn len(&self) -> usize {
        self.calls.len()
    }

    pub fn is_empty(&self) -> bool {
        self.calls.is_empty()
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.calls.iter().map(|c| c.name.as_str())
    }

    /// Resource references must point strictly backwards.
    pub fn validate(&self) -> Result<(), InputError> {
        for (i, c) in self.calls.iter().enumerate() {
            for a in &c.args {
                if let Arg::Res(j) = a {
                    if *j >= i {
                        return Err(InputError::ForwardReference { call: i, target: *j });
                    }
                }
            }
        }
        Ok(())
    }

    /// Insert `call` at `at`, shifting later references.
    pub fn insert(&mut self, at: usize, call: Call) {
        for c in &mut self.calls[at..] {
            for a in &mut c.args {
                if let Arg::Res(j) = a {
                    if *j >= at {
                        *j += 1;
                    }
                }
            }
        }
        self.calls.insert(at, call);
    }

    /// Remove call `at`. References to it become the invalid handle `0x0`;
    /// later references shift down.
    pub fn remove(&mut self, at: usize) -> Call {
        let removed = self.calls.remove(at);
        for c in &mut self.calls[at..] {
            for a in &mut c.args {
                if let Arg::Res(j) = *a {
                    if j == at {
                        *a = Arg::Int(0);
                    } else if j > at {
                        *a = Arg::Res(j - 1);
                    }
                }
            }
        }
        removed
    }

    pub fn parse(text: &str) -> Result<Input, InputError> {
        let mut calls = Vec::new();
        for (n, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            calls.push(parse_call(line).map_err(|msg| InputError::Parse { line: n + 1, msg })?);
        }
        let input = Input { calls };
        input.validate()?;
        Ok(input)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Input, InputError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|source| InputError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Input::parse(&text)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), InputError> {
        let path = path.as_ref();
        std::fs::write(path, self.to_string()).map_err(|source| InputError::Io {
            path: path.display().to_string(),
            source,
        })
    }
}

impl fmt::Display for Input {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for c in &self.calls {
            writeln!(f, "{c}")?;
        }
        Ok(())
    }
}

fn parse_call(line: &str) -> Result<Call, String> {
    let open = line.find('(').ok_or("missing `(`")?;
    let body = line[open + 1..].strip_suffix(')').ok_or("missing trailing `)`")?;
    let name = line[..open].trim();
    if name.is_empty() {
        return Err("empty syscall name".into());
    }
    let mut args = Vec::new();
    if !body.trim().is_empty() {
        for tok in body.split(',') {
            args.push(parse_arg(tok.trim())?);
        }
    }
    Ok(Call::new(name, args))
}

fn parse_arg(tok: &str) -> Result<Arg, String> {
    if let Some(idx) = tok.strip_prefix('@') {
        return idx.parse().map(Arg::Res).map_err(|_| format!("bad reference `{tok}`"));
    }
    if let Some(hex) = tok.strip_prefix("0x").or_else(|| tok.strip_prefix("0X")) {
        return u64::from_str_radix(hex, 16)
            .map(Arg::Int)
            .map_err(|_| format!("bad hex integer `{tok}`"));
    }
    if tok.starts_with(|c: char| c.is_ascii_digit()) {
        return tok.parse().map(Arg::Int).map_err(|_| format!("bad integer `{tok}`"));
    }
    if !tok.is_empty() && tok.chars().all(|c| c.is_ascii_alphanumeric() || c == '_' || c == '$') {
        return Ok(Arg::Tag(tok.to_string()));
    }
    Err(format!("bad argument `{tok}`"))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn parses_and_formats() {
        let input = Input::parse("pipe(0x0)\nread(@0, 0x10)\n# comment\nioctl$TCGETS(@0, TCGETS)\n").unwrap();
        assert_eq!(input.len(), 3);
        assert_eq!(input.calls[1].args, vec![Arg::Res(0), Arg::Int(16)]);
        assert_eq!(input.calls[2].args[1], Arg::Tag("TCGETS".into()));
        assert_eq!(input.to_string(), "pipe(0x0)\nread(@0, 0x10)\nioctl$TCGETS(@0, TCGETS)\n");
    }

    #[test]
    fn forward_references_rejected() {
        assert!(matches!(
            Input::parse("read(@0)\n"),
            Err(InputError::ForwardReference { call: 0, target: 0 })
        ));
        assert!(matches!(Input::parse("read(@x)"), Err(InputError::Parse { line: 1, .. })));
        assert!(matches!(Input::parse("read 1"), Err(InputError::Parse { .. })));
    }

    #[test]
    fn insert_and_remove_keep_references_backwards() {
        let mut input = Input::parse("pipe()\nwrite(@0)\nread(@0)\n").unwrap();
        input.insert(1, Call::new("getpid", vec![]));
        assert_eq!(input.calls[2].args, vec![Arg::Res(0)]);
        input.insert(0, Call::new("getpid", vec![]));
        assert_eq!(input.calls[3].args, vec![Arg::Res(1)]);
        input.remove(1);
        assert_eq!(input.calls[2].args, vec![Arg::Int(0)]);
        input.validate().unwrap();
    }

    fn arb_input() -> impl Strategy<Value = Input> {
        prop::collection::vec(
            (
                "[a-z_]{1,8}(\\$[A-Z_]{1,6})?",
                prop::collection::vec(
                    prop_oneof![any::<u64>().prop_map(Arg::Int), (0usize..8).prop_map(Arg::Res), "[A-Z_]{1,6}".prop_map(Arg::Tag)],
                    0..4,
                ),
            ),
            0..8,
        )
        .prop_map(|calls| {
            let calls = calls
                .into_iter()
                .enumerate()
                .map(|(i, (name, args))| {
                    let args = args
                        .into_iter()
                        .map(|a| match a {
                            Arg::Res(j) if i == 0 => Arg::Int(j as u64),
                            Arg::Res(j) => Arg::Res(j % i),
                            other => other,
                        })
                        .collect();
                    Call::new(name, args)
                })
                .collect();
            Input::new(calls)
        })
    }

    proptest! {
        #[test]
        fn text_round_trip(input in arb_input()) {
            prop_assert_eq!(Input::parse(&input.to_string()).unwrap(), input);
        }

        #[test]
        fn edits_preserve_backward_references(input in arb_input(), at in 0usize..8, del in 0usize..8) {
            let mut x = input.clone();
            let at = at % (x.len() + 1);
            x.insert(at, Call::new("nop", vec![]));
            prop_assert!(x.validate().is_ok());
            let del = del % x.len();
            x.remove(del);
            prop_assert!(x.validate().is_ok());
        }
    }
}
