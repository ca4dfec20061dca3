//! Expression language for composing kernels, criteria, surrogates and mean
//! functions: `name` or `name(expr,expr,...)`.

use std::fmt;

use super::ConfigError;

/// Which family a registered component belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Family {
    Kernel,
    Criterion,
    Surrogate,
    Mean,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Arity {
    Leaf,
    Exactly(usize),
    AtLeast(usize),
}

impl Arity {
    fn accepts(self, n: usize) -> bool {
        match self {
            Arity::Leaf => n == 0,
            Arity::Exactly(k) => n == k,
            Arity::AtLeast(k) => n >= k,
        }
    }
}

impl fmt::Display for Arity {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Arity::Leaf => write!(f, "no arguments"),
            Arity::Exactly(k) => write!(f, "exactly {k} arguments"),
            Arity::AtLeast(k) => write!(f, "at least {k} arguments"),
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct RegistryEntry {
    pub name: &'static str,
    pub family: Family,
    pub arity: Arity,
}

const fn entry(name: &'static str, family: Family, arity: Arity) -> RegistryEntry {
    RegistryEntry {
        name,
        family,
        arity,
    }
}

/// Every component name understood by the parser.
pub const REGISTRY: &[RegistryEntry] = &[
    entry("kConst", Family::Kernel, Arity::Leaf),
    entry("kSEISO", Family::Kernel, Arity::Leaf),
    entry("kMaternISO1", Family::Kernel, Arity::Leaf),
    entry("kMaternISO3", Family::Kernel, Arity::Leaf),
    entry("kMaternISO5", Family::Kernel, Arity::Leaf),
    entry("kRQISO", Family::Kernel, Arity::Leaf),
    entry("kSum", Family::Kernel, Arity::Exactly(2)),
    entry("kProd", Family::Kernel, Arity::Exactly(2)),
    entry("cEI", Family::Criterion, Arity::Leaf),
    entry("cLCB", Family::Criterion, Arity::Leaf),
    entry("cPOI", Family::Criterion, Arity::Leaf),
    entry("cThompsonSampling", Family::Criterion, Arity::Leaf),
    entry("cHedge", Family::Criterion, Arity::AtLeast(2)),
    entry("sGaussianProcess", Family::Surrogate, Arity::Leaf),
    entry("sStudentTProcessNIG", Family::Surrogate, Arity::Leaf),
    entry("mZero", Family::Mean, Arity::Leaf),
    entry("mConst", Family::Mean, Arity::Leaf),
    entry("mLinear", Family::Mean, Arity::Leaf),
];

pub fn lookup(name: &str) -> Option<&'static RegistryEntry> {
    REGISTRY.iter().find(|e| e.name == name)
}

/// Parsed component expression.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct SpecTree {
    pub node: String,
    pub children: Vec<SpecTree>,
}

impl SpecTree {
    pub fn leaf(node: impl Into<String>) -> Self {
        SpecTree {
            node: node.into(),
            children: Vec::new(),
        }
    }

    pub fn with_children(node: impl Into<String>, children: Vec<SpecTree>) -> Self {
        SpecTree {
            node: node.into(),
            children,
        }
    }

    pub fn is_leaf(&self) -> bool {
        self.children.is_empty()
    }

    pub fn family(&self) -> Option<Family> {
        lookup(&self.node).map(|e| e.family)
    }

    /// Canonical text form, without whitespace.
    pub fn render(&self) -> String {
        self.to_string()
    }

    /// Checks every node belongs to `family`.
    pub fn expect_family(&self, family: Family) -> Result<(), ConfigError> {
        match self.family() {
            Some(f) if f == family => {}
            _ => {
                return Err(ConfigError::WrongFamily {
                    name: self.node.clone(),
                    expected: family,
                })
            }
        }
        self.children.iter().try_for_each(|c| c.expect_family(family))
    }
}

impl fmt::Display for SpecTree {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.node)?;
        if !self.children.is_empty() {
            f.write_str("(")?;
            for (i, c) in self.children.iter().enumerate() {
                if i > 0 {
                    f.write_str(",")?;
                }
                write!(f, "{c}")?;
            }
            f.write_str(")")?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
enum Token {
    Ident(String),
    Open,
    Close,
    Comma,
}

fn tokenize(text: &str) -> Result<Vec<(usize, Token)>, ConfigError> {
    let bytes = text.as_bytes();
    let mut out = Vec::new();
    let mut i = 0;
    while i < bytes.len() {
        let c = bytes[i];
        match c {
            b' ' | b'\t' | b'\n' | b'\r' => i += 1,
            b'(' => {
                out.push((i, Token::Open));
                i += 1;
            }
            b')' => {
                out.push((i, Token::Close));
                i += 1;
            }
            b',' => {
                out.push((i, Token::Comma));
                i += 1;
            }
            c if c.is_ascii_alphabetic() => {
                let start = i;
                while i < bytes.len() && bytes[i].is_ascii_alphanumeric() {
                    i += 1;
                }
                out.push((start, Token::Ident(text[start..i].to_string())));
            }
            _ => {
                return Err(ConfigError::Syntax {
                    pos: i,
                    msg: format!("unexpected character {:?}", text[i..].chars().next().unwrap()),
                })
            }
        }
    }
    Ok(out)
}

struct Parser {
    tokens: Vec<(usize, Token)>,
    pos: usize,
    end: usize,
}

impl Parser {
    fn peek(&self) -> Option<&Token> {
        self.tokens.get(self.pos).map(|(_, t)| t)
    }

    fn offset(&self) -> usize {
        self.tokens.get(self.pos).map_or(self.end, |(o, _)| *o)
    }

    fn syntax<T>(&self, msg: impl Into<String>) -> Result<T, ConfigError> {
        Err(ConfigError::Syntax {
            pos: self.offset(),
            msg: msg.into(),
        })
    }

    fn expr(&mut self) -> Result<SpecTree, ConfigError> {
        let name = match self.peek() {
            Some(Token::Ident(name)) => name.clone(),
            Some(_) => return self.syntax("expected identifier"),
            None => return self.syntax("unexpected end of expression"),
        };
        self.pos += 1;
        let mut children = Vec::new();
        if self.peek() == Some(&Token::Open) {
            self.pos += 1;
            loop {
                children.push(self.expr()?);
                match self.peek() {
                    Some(Token::Comma) => self.pos += 1,
                    Some(Token::Close) => {
                        self.pos += 1;
                        break;
                    }
                    Some(_) => return self.syntax("expected ',' or ')'"),
                    None => return self.syntax("unbalanced parentheses"),
                }
            }
        }
        let entry = lookup(&name).ok_or_else(|| ConfigError::UnknownIdentifier(name.clone()))?;
        if !entry.arity.accepts(children.len()) {
            return Err(ConfigError::Arity {
                name,
                expected: entry.arity,
                found: children.len(),
            });
        }
        Ok(SpecTree::with_children(name, children))
    }
}

/// Parses and validates a component expression such as
/// `kSum(kMaternISO3,kRQISO)`.
pub fn parse_expression(text: &str) -> Result<SpecTree, ConfigError> {
    if !text.is_ascii() {
        return Err(ConfigError::Syntax {
            pos: text.bytes().position(|b| !b.is_ascii()).unwrap_or(0),
            msg: "expression must be ASCII".into(),
        });
    }
    let tokens = tokenize(text)?;
    let mut p = Parser {
        tokens,
        pos: 0,
        end: text.len(),
    };
    let tree = p.expr()?;
    if p.pos != p.tokens.len() {
        return p.syntax("trailing input after expression");
    }
    Ok(tree)
}
