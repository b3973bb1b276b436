//! Rule-based command interpreter used as a deterministic stand-in for the
//! language model.
//!
//! Commands are split into clauses at commas, semicolons and "and". Each
//! clause maps to one tool call:
//!
//! * `raise|increase|add … <param> [by] <n>[%]` → adjust with `+n`
//! * `drop|reduce|lower|decrease … <param> [by] <n>[%]` → adjust with `-n`
//! * `set|adjust|change <param> to <v>`, `<param> = <v>`,
//!   `write <v> in <param>` → write
//! * `what is|read|show <param>` → read
//!
//! A clause without a verb inherits the previous clause's verb, and a bare
//! signed amount with a unit (`+5°C`) finds its parameter by that unit.
//! Units are stripped, never converted.

use serde_json::{json, Value};
use thiserror::Error;

use crate::machine::MachineSpec;
use crate::node::DataType;
use crate::tools::{ToolCall, ADJUST_NODE, READ_NODE, WRITE_NODE};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("cannot interpret {text:?}: {reason}")]
pub struct UnparsableCommand {
    pub text: String,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq)]
enum Token {
    Word(String),
    Number { text: String, value: f64, signed: bool },
    Quoted(String),
    Percent,
    Equals,
    Separator,
    Question,
}

fn is_word_char(c: char) -> bool {
    c.is_alphanumeric() || c == '_' || c == '°'
}

fn lex(text: &str) -> Vec<Token> {
    let chars: Vec<char> = text.chars().collect();
    let mut tokens = Vec::new();
    let mut i = 0;
    while i < chars.len() {
        let c = chars[i];
        let prev_is_word = i > 0 && (is_word_char(chars[i - 1]) || chars[i - 1] == '.');
        if c.is_whitespace() {
            i += 1;
        } else if let Some(close) = closing_quote(c) {
            let start = i + 1;
            let end = (start..chars.len())
                .find(|&j| chars[j] == close)
                .unwrap_or(chars.len());
            tokens.push(Token::Quoted(chars[start..end].iter().collect()));
            i = end + 1;
        } else if starts_node_id(&chars[i..]) {
            let end = (i..chars.len())
                .find(|&j| !(chars[j].is_ascii_digit() || "ns=;i".contains(chars[j])))
                .unwrap_or(chars.len());
            tokens.push(Token::Word(chars[i..end].iter().collect()));
            i = end;
        } else if c.is_ascii_digit()
            || ((c == '+' || c == '-' || c == '.' || c == '−') && !prev_is_word && next_is_digit(&chars, i))
        {
            let signed = matches!(c, '+' | '-' | '−');
            let mut j = if signed { i + 1 } else { i };
            let mut seen_dot = false;
            while j < chars.len()
                && (chars[j].is_ascii_digit()
                    || (chars[j] == '.' && !seen_dot && next_is_digit(&chars, j)))
            {
                seen_dot |= chars[j] == '.';
                j += 1;
            }
            let mut raw: String = chars[i..j].iter().collect();
            raw = raw.replace('−', "-");
            let value = raw.parse().unwrap_or(f64::NAN);
            tokens.push(Token::Number {
                text: raw.trim_start_matches('+').to_string(),
                value,
                signed,
            });
            i = j;
        } else if is_word_char(c) {
            let end = (i..chars.len())
                .find(|&j| !is_word_char(chars[j]) && chars[j] != '\'')
                .unwrap_or(chars.len());
            let word: String = chars[i..end].iter().collect::<String>().to_lowercase();
            // "what's" → "what"
            let word = word.split('\'').next().unwrap_or_default().to_string();
            tokens.push(Token::Word(word));
            i = end;
        } else {
            match c {
                '%' => tokens.push(Token::Percent),
                '=' => tokens.push(Token::Equals),
                ',' | ';' => tokens.push(Token::Separator),
                '?' => tokens.push(Token::Question),
                _ => {}
            }
            i += 1;
        }
    }
    tokens
}

fn next_is_digit(chars: &[char], i: usize) -> bool {
    chars.get(i + 1).is_some_and(|c| c.is_ascii_digit())
        || (chars.get(i + 1) == Some(&'.') && chars.get(i + 2).is_some_and(|c| c.is_ascii_digit()))
}

fn closing_quote(c: char) -> Option<char> {
    match c {
        '"' => Some('"'),
        '\'' => Some('\''),
        '“' => Some('”'),
        '‘' => Some('’'),
        '„' => Some('“'),
        _ => None,
    }
}

fn starts_node_id(chars: &[char]) -> bool {
    let head: String = chars.iter().take(4).collect();
    head.starts_with("ns=") && head.chars().nth(3).is_some_and(|c| c.is_ascii_digit())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Verb {
    Up,
    Down,
    Set,
    Read,
}

fn verb_of(word: &str) -> Option<Verb> {
    Some(match word {
        "raise" | "increase" | "add" | "boost" | "bump" | "increment" | "lift" | "up" => Verb::Up,
        "drop" | "reduce" | "lower" | "decrease" | "cut" | "subtract" | "decrement" | "down" => {
            Verb::Down
        }
        "set" | "adjust" | "change" | "put" | "make" | "update" | "write" | "switch" => Verb::Set,
        "read" | "get" | "show" | "what" | "whats" | "tell" | "report" | "display" | "check" => {
            Verb::Read
        }
        _ => return None,
    })
}

const FILLERS: &[&str] = &["the", "a", "an", "please", "value", "of", "current", "is", "me"];
const GENERIC_UNITS: &[&str] = &["rpm", "°c", "°f", "°", "degrees", "degree", "celsius", "percent"];

struct Lexicon<'a> {
    /// (token sequence, parameter name), longest first
    phrases: Vec<(Vec<Token>, &'a str)>,
    units: Vec<(Vec<Token>, &'a str)>,
    spec: &'a MachineSpec,
}

impl<'a> Lexicon<'a> {
    fn new(spec: &'a MachineSpec) -> Self {
        let mut phrases = Vec::new();
        let mut units = Vec::new();
        for node in spec.nodes() {
            for alias in std::iter::once(&node.name).chain(&node.aliases) {
                let tokens = lex(alias);
                if !tokens.is_empty() {
                    phrases.push((tokens, node.name.as_str()));
                }
            }
            phrases.push((vec![Token::Word(node.node_id.to_string())], node.name.as_str()));
            if let Some(unit) = &node.unit {
                let tokens = lex(unit);
                if !tokens.is_empty() {
                    units.push((tokens, node.name.as_str()));
                }
            }
        }
        phrases.sort_by_key(|(t, _)| std::cmp::Reverse(t.len()));
        Self {
            phrases,
            units,
            spec,
        }
    }

    fn match_at(
        table: &[(Vec<Token>, &'a str)],
        tokens: &[Token],
        at: usize,
    ) -> Option<(usize, &'a str)> {
        table
            .iter()
            .find(|(phrase, _)| tokens[at..].starts_with(phrase))
            .map(|(phrase, name)| (phrase.len(), *name))
    }

    fn dtype(&self, name: &str) -> DataType {
        self.spec.by_name(name).map(|n| n.dtype).unwrap_or(DataType::Text)
    }
}

fn number_json(text: &str, value: f64) -> Value {
    if !text.contains('.') {
        if let Ok(i) = text.parse::<i64>() {
            return json!(i);
        }
    }
    json!(value)
}

fn split_clauses(tokens: Vec<Token>) -> Vec<Vec<Token>> {
    let mut clauses = vec![Vec::new()];
    for token in tokens {
        let boundary = match &token {
            Token::Separator => true,
            Token::Word(w) => w == "and" || w == "then",
            _ => false,
        };
        if boundary {
            clauses.push(Vec::new());
        } else {
            clauses.last_mut().expect("never empty").push(token);
        }
    }
    clauses.retain(|c| !c.is_empty());
    clauses
}

struct Clause<'a> {
    verb: Option<Verb>,
    param: Option<&'a str>,
    unit_param: Option<&'a str>,
    /// first number not consumed by a parameter phrase
    number: Option<(String, f64, bool)>,
    percent: bool,
    quoted: Option<String>,
    has_equals: bool,
    has_by: bool,
    has_to: bool,
    /// bare words after "to"/"=" that are not parameters (text values)
    trailing_words: Vec<String>,
}

fn analyse<'a>(lexicon: &Lexicon<'a>, tokens: &[Token]) -> Clause<'a> {
    let mut clause = Clause {
        verb: None,
        param: None,
        unit_param: None,
        number: None,
        percent: false,
        quoted: None,
        has_equals: false,
        has_by: false,
        has_to: false,
        trailing_words: Vec::new(),
    };
    let mut after_value_marker = false;
    let mut i = 0;
    while i < tokens.len() {
        if clause.param.is_none() {
            if let Some((len, name)) = Lexicon::match_at(&lexicon.phrases, tokens, i) {
                clause.param = Some(name);
                i += len;
                continue;
            }
        }
        if let Some((len, name)) = Lexicon::match_at(&lexicon.units, tokens, i) {
            clause.unit_param.get_or_insert(name);
            i += len;
            continue;
        }
        match &tokens[i] {
            Token::Word(w) => {
                if clause.verb.is_none() && clause.param.is_none() && clause.number.is_none() {
                    if let Some(v) = verb_of(w) {
                        clause.verb = Some(v);
                        i += 1;
                        continue;
                    }
                }
                match w.as_str() {
                    "by" => clause.has_by = true,
                    "to" | "into" | "in" | "at" => {
                        clause.has_to = true;
                        after_value_marker = true;
                    }
                    "percent" => clause.percent = true,
                    w if FILLERS.contains(&w) || GENERIC_UNITS.contains(&w) => {}
                    w if after_value_marker => clause.trailing_words.push(w.to_string()),
                    _ => {}
                }
            }
            Token::Number {
                text,
                value,
                signed,
            } => {
                if clause.number.is_none() {
                    clause.number = Some((text.clone(), *value, *signed));
                    if tokens.get(i + 1) == Some(&Token::Percent) {
                        clause.percent = true;
                    }
                }
            }
            Token::Quoted(s) => {
                clause.quoted.get_or_insert_with(|| s.clone());
            }
            Token::Equals => {
                clause.has_equals = true;
                after_value_marker = true;
            }
            Token::Percent | Token::Separator | Token::Question => {}
        }
        i += 1;
    }
    clause
}

/// Maps a command to the tool calls that carry it out.
pub fn oracle_interpret(text: &str, spec: &MachineSpec) -> Result<Vec<ToolCall>, UnparsableCommand> {
    let fail = |reason: String| UnparsableCommand {
        text: text.to_string(),
        reason,
    };
    let lexicon = Lexicon::new(spec);
    let mut calls = Vec::new();
    let mut last_verb: Option<Verb> = None;
    for tokens in split_clauses(lex(text)) {
        let clause = analyse(&lexicon, &tokens);
        let verb = match clause.verb {
            Some(v) => v,
            None if clause.has_equals => Verb::Set,
            None => match last_verb {
                Some(v) => v,
                None if clause.number.as_ref().is_some_and(|n| n.2) => Verb::Up,
                None => return Err(fail("clause without an operation".into())),
            },
        };
        let param = clause
            .param
            .or(clause.unit_param)
            .ok_or_else(|| fail("clause does not name a parameter".into()))?;
        let id = format!("call_{}", calls.len() + 1);
        let call = match verb {
            Verb::Read => ToolCall::new(id, READ_NODE, json!({ "parameter": param })),
            Verb::Up | Verb::Down => relative(&clause, verb, param, id).map_err(fail)?,
            Verb::Set if clause.has_by && !clause.has_to && !clause.has_equals => {
                relative(&clause, Verb::Up, param, id).map_err(fail)?
            }
            Verb::Set => ToolCall::new(
                id,
                WRITE_NODE,
                json!({ "parameter": param, "value": set_value(&clause, lexicon.dtype(param)).map_err(fail)? }),
            ),
        };
        last_verb = Some(verb);
        calls.push(call);
    }
    if calls.is_empty() {
        return Err(fail("empty command".into()));
    }
    Ok(calls)
}

fn relative(clause: &Clause<'_>, verb: Verb, param: &str, id: String) -> Result<ToolCall, String> {
    let (text, value, _) = clause
        .number
        .clone()
        .ok_or_else(|| format!("no amount given for {param}"))?;
    let (text, value) = match verb {
        Verb::Down => {
            let magnitude = text.trim_start_matches('-');
            (format!("-{magnitude}"), -value.abs())
        }
        _ => (text, value),
    };
    let amount = number_json(&text, value);
    let key = if clause.percent { "percent" } else { "delta" };
    Ok(ToolCall::new(
        id,
        ADJUST_NODE,
        json!({ "parameter": param, key: amount }),
    ))
}

fn set_value(clause: &Clause<'_>, dtype: DataType) -> Result<Value, String> {
    if let Some(q) = &clause.quoted {
        return Ok(Value::String(q.clone()));
    }
    if let Some((text, value, _)) = &clause.number {
        return Ok(match dtype {
            DataType::Text => Value::String(text.clone()),
            _ => number_json(text, *value),
        });
    }
    if dtype == DataType::Text && !clause.trailing_words.is_empty() {
        return Ok(Value::String(clause.trailing_words.join(" ")));
    }
    Err("no value given".into())
}
