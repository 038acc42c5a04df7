//! Parser for the nested key/value config format.
//!
//! ```text
//! file   := entry*
//! entry  := key '=' value | key block
//! value  := number | bool | string | list | name block?
//! list   := '[' (value (sep value)* sep?)? ']'      sep := ',' | newline
//! block  := '{' entry* '}'
//! ```
//!
//! Entries and list items are separated by newlines or commas and `#`
//! starts a comment.
//! A name followed by a block, such as `sqexp { variance = 1 }`, is a node;
//! a bare name such as `bernoulli` is a node without fields.

use std::fmt;

/// Parse failure with the 1-based line it occurred on.
#[derive(Debug, Clone, PartialEq)]
pub struct ParseError {
    pub line: usize,
    pub message: String,
}

impl fmt::Display for ParseError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "line {}: {}", self.line, self.message)
    }
}

impl std::error::Error for ParseError {}

#[derive(Debug, Clone, PartialEq)]
pub enum Value {
    Number(f64),
    Bool(bool),
    Str(String),
    List(Vec<Value>),
    Node(Node),
}

impl Value {
    pub fn kind(&self) -> &'static str {
        match self {
            Value::Number(_) => "number",
            Value::Bool(_) => "bool",
            Value::Str(_) => "string",
            Value::List(_) => "list",
            Value::Node(_) => "node",
        }
    }
}

/// `name { fields }`; sections written `key { ... }` have an empty name.
#[derive(Debug, Clone, PartialEq)]
pub struct Node {
    pub name: String,
    pub fields: Block,
    pub line: usize,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Block {
    pub entries: Vec<Entry>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Entry {
    pub key: String,
    pub value: Value,
    pub line: usize,
}

impl Block {
    pub fn get(&self, key: &str) -> Option<&Entry> {
        self.entries.iter().find(|e| e.key == key)
    }

    pub fn keys(&self) -> impl Iterator<Item = &str> {
        self.entries.iter().map(|e| e.key.as_str())
    }
}

#[derive(Debug, Clone, PartialEq)]
enum Tok {
    LBrace,
    RBrace,
    LBracket,
    RBracket,
    Equals,
    Comma,
    Newline,
    Number(f64),
    Str(String),
    Ident(String),
}

fn err<T>(line: usize, message: impl Into<String>) -> Result<T, ParseError> {
    Err(ParseError { line, message: message.into() })
}

fn tokenize(src: &str) -> Result<Vec<(Tok, usize)>, ParseError> {
    let chars: Vec<char> = src.chars().collect();
    let mut out = Vec::new();
    let mut line = 1;
    let mut i = 0;
    while i < chars.len() {
        let c = chars[i];
        match c {
            '\n' => {
                out.push((Tok::Newline, line));
                line += 1;
                i += 1;
            }
            c if c.is_whitespace() => i += 1,
            '#' => {
                while i < chars.len() && chars[i] != '\n' {
                    i += 1;
                }
            }
            '{' | '}' | '[' | ']' | '=' | ',' => {
                let t = match c {
                    '{' => Tok::LBrace,
                    '}' => Tok::RBrace,
                    '[' => Tok::LBracket,
                    ']' => Tok::RBracket,
                    '=' => Tok::Equals,
                    _ => Tok::Comma,
                };
                out.push((t, line));
                i += 1;
            }
            '"' => {
                let start = line;
                let mut s = String::new();
                i += 1;
                loop {
                    match chars.get(i) {
                        None => return err(start, "unterminated string"),
                        Some('"') => break,
                        Some('\\') => {
                            match chars.get(i + 1) {
                                Some('n') => s.push('\n'),
                                Some(&e @ ('"' | '\\')) => s.push(e),
                                _ => return err(line, "unknown escape in string"),
                            }
                            i += 1;
                        }
                        Some('\n') => return err(line, "newline in string"),
                        Some(&ch) => s.push(ch),
                    }
                    i += 1;
                }
                i += 1;
                out.push((Tok::Str(s), start));
            }
            c if c.is_ascii_digit() || c == '-' || c == '+' || c == '.' => {
                let start = i;
                i += 1;
                while i < chars.len() {
                    let d = chars[i];
                    let exp_sign = (d == '-' || d == '+') && matches!(chars[i - 1], 'e' | 'E');
                    if d.is_ascii_alphanumeric() || d == '.' || d == '_' || exp_sign {
                        i += 1;
                    } else {
                        break;
                    }
                }
                let text: String = chars[start..i].iter().collect();
                match text.parse::<f64>() {
                    Ok(v) if v.is_finite() => out.push((Tok::Number(v), line)),
                    _ => return err(line, format!("invalid number `{text}`")),
                }
            }
            c if c.is_alphabetic() || c == '_' => {
                let start = i;
                while i < chars.len() && (chars[i].is_alphanumeric() || matches!(chars[i], '_' | '+' | '-' | '.')) {
                    i += 1;
                }
                out.push((Tok::Ident(chars[start..i].iter().collect()), line));
            }
            other => return err(line, format!("unexpected character `{other}`")),
        }
    }
    Ok(out)
}

struct Parser {
    toks: Vec<(Tok, usize)>,
    pos: usize,
    last_line: usize,
}

impl Parser {
    fn peek(&self) -> Option<&Tok> {
        self.toks.get(self.pos).map(|t| &t.0)
    }

    fn line(&self) -> usize {
        self.toks.get(self.pos).map_or(self.last_line, |t| t.1)
    }

    fn next(&mut self) -> Option<Tok> {
        let t = self.toks.get(self.pos).map(|t| t.0.clone());
        self.pos += 1;
        t
    }

    fn skip_separators(&mut self) {
        while matches!(self.peek(), Some(Tok::Newline | Tok::Comma)) {
            self.pos += 1;
        }
    }

    fn skip_newlines(&mut self) {
        while matches!(self.peek(), Some(Tok::Newline)) {
            self.pos += 1;
        }
    }

    fn block(&mut self, nested: bool) -> Result<Block, ParseError> {
        let mut block = Block::default();
        loop {
            self.skip_separators();
            let line = self.line();
            match self.next() {
                None if nested => return err(line, "missing `}`"),
                None => return Ok(block),
                Some(Tok::RBrace) if nested => return Ok(block),
                Some(Tok::Ident(key)) => {
                    if block.get(&key).is_some() {
                        return err(line, format!("duplicate key `{key}`"));
                    }
                    let value = match self.next() {
                        Some(Tok::Equals) => self.value()?,
                        Some(Tok::LBrace) => Value::Node(Node { name: String::new(), fields: self.block(true)?, line }),
                        _ => return err(line, format!("expected `=` or `{{` after `{key}`")),
                    };
                    block.entries.push(Entry { key, value, line });
                    if !matches!(self.peek(), None | Some(Tok::Newline | Tok::Comma | Tok::RBrace)) {
                        return err(self.line(), "expected a newline or `,` between entries");
                    }
                }
                Some(t) => return err(line, format!("expected a key, found {}", describe(&t))),
            }
        }
    }

    fn value(&mut self) -> Result<Value, ParseError> {
        self.skip_newlines();
        let line = self.line();
        match self.next() {
            Some(Tok::Number(v)) => Ok(Value::Number(v)),
            Some(Tok::Str(s)) => Ok(Value::Str(s)),
            Some(Tok::Ident(id)) if id == "true" => Ok(Value::Bool(true)),
            Some(Tok::Ident(id)) if id == "false" => Ok(Value::Bool(false)),
            Some(Tok::Ident(name)) => {
                let fields = if self.peek() == Some(&Tok::LBrace) {
                    self.pos += 1;
                    self.block(true)?
                } else {
                    Block::default()
                };
                Ok(Value::Node(Node { name, fields, line }))
            }
            Some(Tok::LBracket) => {
                let mut items = Vec::new();
                loop {
                    self.skip_newlines();
                    if self.peek() == Some(&Tok::RBracket) {
                        self.pos += 1;
                        return Ok(Value::List(items));
                    }
                    items.push(self.value()?);
                    let line = self.line();
                    match self.peek() {
                        Some(Tok::Comma | Tok::Newline) => self.pos += 1,
                        Some(Tok::RBracket) => {}
                        _ => return err(line, "expected `,`, a newline or `]` in list"),
                    }
                }
            }
            Some(t) => err(line, format!("expected a value, found {}", describe(&t))),
            None => err(line, "expected a value, found end of file"),
        }
    }
}

fn describe(t: &Tok) -> String {
    match t {
        Tok::LBrace => "`{`".into(),
        Tok::RBrace => "`}`".into(),
        Tok::LBracket => "`[`".into(),
        Tok::RBracket => "`]`".into(),
        Tok::Equals => "`=`".into(),
        Tok::Comma => "`,`".into(),
        Tok::Newline => "newline".into(),
        Tok::Number(v) => format!("number {v}"),
        Tok::Str(s) => format!("string {s:?}"),
        Tok::Ident(s) => format!("`{s}`"),
    }
}

/// Parses a whole config file into its top-level block.
pub fn parse(src: &str) -> Result<Block, ParseError> {
    let toks = tokenize(src)?;
    let last_line = src.matches('\n').count() + 1;
    Parser { toks, pos: 0, last_line }.block(false)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn num(b: &Block, k: &str) -> f64 {
        match b.get(k).unwrap().value {
            Value::Number(v) => v,
            ref other => panic!("{other:?}"),
        }
    }

    #[test]
    fn scalars_lists_and_nodes() {
        let src = r#"
            # model choice
            model = svgp+uncertain
            whiten = false, jitter = 1e-6
            name = "desk \"run\""
            kernel = lmc {
                W = [[1.0, 0.5],
                     [-0.3, 2]]
                latents = [sqexp { variance = 1 }, matern32 { lengthscales = [0.5, 0.7] }]
            }
            likelihood = bernoulli
        "#;
        let b = parse(src).unwrap();
        assert_eq!(b.keys().collect::<Vec<_>>(), ["model", "whiten", "jitter", "name", "kernel", "likelihood"]);
        assert_eq!(b.get("model").unwrap().value, Value::Node(Node { name: "svgp+uncertain".into(), fields: Block::default(), line: 3 }));
        assert_eq!(b.get("whiten").unwrap().value, Value::Bool(false));
        assert_eq!(num(&b, "jitter"), 1e-6);
        assert_eq!(b.get("name").unwrap().value, Value::Str("desk \"run\"".into()));
        let Value::Node(k) = &b.get("kernel").unwrap().value else { panic!() };
        assert_eq!(k.name, "lmc");
        let Value::List(w) = &k.fields.get("W").unwrap().value else { panic!() };
        assert_eq!(w[1], Value::List(vec![Value::Number(-0.3), Value::Number(2.0)]));
        let Value::List(lat) = &k.fields.get("latents").unwrap().value else { panic!() };
        let Value::Node(m) = &lat[1] else { panic!() };
        assert_eq!(m.name, "matern32");
    }

    #[test]
    fn list_items_on_separate_lines() {
        let b = parse("a = [\n  1\n  2,\n\n  3\n]").unwrap();
        assert_eq!(b.get("a").unwrap().value, Value::List(vec![Value::Number(1.0), Value::Number(2.0), Value::Number(3.0)]));
    }

    #[test]
    fn sections() {
        let b = parse("train {\n steps = 10\n lr = 0.1 }\n").unwrap();
        let Value::Node(t) = &b.get("train").unwrap().value else { panic!() };
        assert!(t.name.is_empty());
        assert_eq!(num(&t.fields, "steps"), 10.0);
    }

    #[test]
    fn errors_carry_lines() {
        let e = parse("a = 1\nb = 2\na = 3\n").unwrap_err();
        assert_eq!((e.line, e.message.as_str()), (3, "duplicate key `a`"));
        assert_eq!(parse("k = sqexp {\n variance = 1\n").unwrap_err().message, "missing `}`");
        assert_eq!(parse("a = [1, 2\n").unwrap_err().line, 2);
        assert_eq!(parse("a 1").unwrap_err().line, 1);
        assert!(parse("a = 1 b = 2").is_err());
        assert!(parse("a = [1 2]").is_err());
        assert!(parse("a = 1e999").is_err());
        assert!(parse("a = \"open").is_err());
        assert!(parse("a = $").is_err());
    }

    #[test]
    fn duplicate_keys_are_scoped() {
        assert!(parse("a { x = 1 }\nb { x = 2 }").is_ok());
        assert!(parse("a { x = 1, x = 2 }").is_err());
    }

    #[test]
    fn empty_input() {
        assert!(parse("# nothing\n\n").unwrap().entries.is_empty());
    }
}
