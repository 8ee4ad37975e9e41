//! Strict reader and writer for the Turtle subset used by candidate
//! object-property documents.
//!
//! A conforming document is the fixed prefix header, the ontology
//! declaration, and zero or more blocks of the form
//!
//! ```text
//! wvs:reduce_support rdf:type owl:ObjectProperty ;
//!     rdfs:domain wvs:GeneralizedTrust ;
//!     rdfs:range wvs:OutgroupTolerance ;
//!     rdfs:label "Generalized Trust reduces support for Outgroup Tolerance"@en .
//! ```
//!
//! Anything outside that shape is an error.

use std::collections::HashMap;

use thiserror::Error;

use super::taxonomy::Taxonomy;
use super::triple::OntologyTriple;

pub const WVS_NS: &str = "http://cultural-alignment.org/wvs#";
const OWL_NS: &str = "http://www.w3.org/2002/07/owl#";
const RDF_NS: &str = "http://www.w3.org/1999/02/22-rdf-syntax-ns#";
const RDFS_NS: &str = "http://www.w3.org/2000/01/rdf-schema#";
const XML_NS: &str = "http://www.w3.org/XML/1998/namespace";
const XSD_NS: &str = "http://www.w3.org/2001/XMLSchema#";

const HEADER_LINES: [&str; 8] = [
    "@prefix : <http://cultural-alignment.org/wvs#> .",
    "@prefix owl: <http://www.w3.org/2002/07/owl#> .",
    "@prefix rdf: <http://www.w3.org/1999/02/22-rdf-syntax-ns#> .",
    "@prefix wvs: <http://cultural-alignment.org/wvs#> .",
    "@prefix xml: <http://www.w3.org/XML/1998/namespace> .",
    "@prefix xsd: <http://www.w3.org/2001/XMLSchema#> .",
    "@prefix rdfs: <http://www.w3.org/2000/01/rdf-schema#> .",
    "@base <http://cultural-alignment.org/wvs#> .",
];

/// The mandatory prefix header followed by the ontology declaration.
pub const HEADER: &str = "@prefix : <http://cultural-alignment.org/wvs#> .
@prefix owl: <http://www.w3.org/2002/07/owl#> .
@prefix rdf: <http://www.w3.org/1999/02/22-rdf-syntax-ns#> .
@prefix wvs: <http://cultural-alignment.org/wvs#> .
@prefix xml: <http://www.w3.org/XML/1998/namespace> .
@prefix xsd: <http://www.w3.org/2001/XMLSchema#> .
@prefix rdfs: <http://www.w3.org/2000/01/rdf-schema#> .
@base <http://cultural-alignment.org/wvs#> .

<http://cultural-alignment.org/wvs#> rdf:type owl:Ontology .
";

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ParseError {
    #[error("bad prefix header: {0}")]
    BadHeader(String),
    #[error("forbidden axiom on `{subject}`: {detail}")]
    ForbiddenAxiom { subject: String, detail: String },
    #[error("`{iri}` does not resolve to a taxonomy class")]
    NewClass { iri: String },
    #[error("malformed object property `{property}`: {detail}")]
    MalformedProperty { property: String, detail: String },
    #[error("syntax error at line {line}: {message}")]
    SyntaxError { line: usize, message: String },
}

impl ParseError {
    pub fn code(&self) -> &'static str {
        match self {
            ParseError::BadHeader(_) => "BAD_HEADER",
            ParseError::ForbiddenAxiom { .. } => "FORBIDDEN_AXIOM",
            ParseError::NewClass { .. } => "NEW_CLASS",
            ParseError::MalformedProperty { .. } => "MALFORMED_PROPERTY",
            ParseError::SyntaxError { .. } => "SYNTAX_ERROR",
        }
    }
}

/// `Security-related Behavior` -> `SecurityRelatedBehavior`.
pub fn camel_case(name: &str) -> String {
    name.split(|c: char| !c.is_alphanumeric())
        .filter(|w| !w.is_empty())
        .map(|w| {
            let mut cs = w.chars();
            match cs.next() {
                Some(first) => first.to_uppercase().chain(cs).collect::<String>(),
                None => String::new(),
            }
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
enum Tok {
    Directive(String),
    Iri(String),
    PName(String, String),
    A,
    Literal {
        value: String,
        lang: Option<String>,
        datatype: bool,
    },
    Dot,
    Semi,
    Comma,
    BlankOpen,
    CollectionOpen,
    BlankLabel(String),
    Close(char),
}

struct Lexer<'a> {
    chars: std::iter::Peekable<std::str::CharIndices<'a>>,
    line: usize,
}

impl<'a> Lexer<'a> {
    fn new(text: &'a str, first_line: usize) -> Self {
        Lexer {
            chars: text.char_indices().peekable(),
            line: first_line,
        }
    }

    fn err(&self, message: impl Into<String>) -> ParseError {
        ParseError::SyntaxError {
            line: self.line,
            message: message.into(),
        }
    }

    fn bump(&mut self) -> Option<char> {
        let c = self.chars.next().map(|(_, c)| c);
        if c == Some('\n') {
            self.line += 1;
        }
        c
    }

    fn peek(&mut self) -> Option<char> {
        self.chars.peek().map(|&(_, c)| c)
    }

    fn tokens(mut self) -> Result<Vec<(Tok, usize)>, ParseError> {
        let mut out = Vec::new();
        while let Some(c) = self.peek() {
            if c.is_whitespace() {
                self.bump();
                continue;
            }
            let line = self.line;
            let tok = match c {
                '#' => return Err(self.err("comments are not allowed")),
                '.' => {
                    self.bump();
                    Tok::Dot
                }
                ';' => {
                    self.bump();
                    Tok::Semi
                }
                ',' => {
                    self.bump();
                    Tok::Comma
                }
                '[' => {
                    self.bump();
                    Tok::BlankOpen
                }
                '(' => {
                    self.bump();
                    Tok::CollectionOpen
                }
                ']' | ')' => {
                    self.bump();
                    Tok::Close(c)
                }
                '<' => self.iri()?,
                '"' | '\'' => self.literal()?,
                '@' => {
                    self.bump();
                    Tok::Directive(self.word())
                }
                _ => self.name()?,
            };
            out.push((tok, line));
        }
        Ok(out)
    }

    fn word(&mut self) -> String {
        let mut s = String::new();
        while let Some(c) = self.peek() {
            if c.is_alphanumeric() || c == '-' || c == '_' {
                s.push(c);
                self.bump();
            } else {
                break;
            }
        }
        s
    }

    fn iri(&mut self) -> Result<Tok, ParseError> {
        self.bump();
        let mut s = String::new();
        loop {
            match self.bump() {
                Some('>') => return Ok(Tok::Iri(s)),
                Some(c) if c.is_whitespace() || c == '<' || c == '"' => {
                    return Err(self.err("invalid character in IRI"))
                }
                Some(c) => s.push(c),
                None => return Err(self.err("unterminated IRI")),
            }
        }
    }

    fn literal(&mut self) -> Result<Tok, ParseError> {
        let quote = self.bump().unwrap_or('"');
        let mut long = false;
        if self.peek() == Some(quote) {
            self.bump();
            if self.peek() == Some(quote) {
                self.bump();
                long = true;
            } else {
                return self.literal_suffix(String::new());
            }
        }
        let mut value = String::new();
        loop {
            let Some(c) = self.bump() else {
                return Err(self.err("unterminated string literal"));
            };
            if c == '\\' {
                value.push(self.escape()?);
            } else if c == quote {
                if !long {
                    break;
                }
                if self.peek() == Some(quote) {
                    self.bump();
                    if self.peek() == Some(quote) {
                        self.bump();
                        break;
                    }
                    value.push(quote);
                    value.push(quote);
                } else {
                    value.push(quote);
                }
            } else if c == '\n' && !long {
                return Err(self.err("newline in string literal"));
            } else {
                value.push(c);
            }
        }
        self.literal_suffix(value)
    }

    fn escape(&mut self) -> Result<char, ParseError> {
        match self.bump() {
            Some('n') => Ok('\n'),
            Some('t') => Ok('\t'),
            Some('r') => Ok('\r'),
            Some('b') => Ok('\u{8}'),
            Some('f') => Ok('\u{c}'),
            Some(c @ ('"' | '\'' | '\\')) => Ok(c),
            Some('u') => self.unicode(4),
            Some('U') => self.unicode(8),
            _ => Err(self.err("invalid escape sequence")),
        }
    }

    fn unicode(&mut self, n: usize) -> Result<char, ParseError> {
        let hex: String = (0..n).filter_map(|_| self.bump()).collect();
        u32::from_str_radix(&hex, 16)
            .ok()
            .and_then(char::from_u32)
            .ok_or_else(|| self.err("invalid unicode escape"))
    }

    fn literal_suffix(&mut self, value: String) -> Result<Tok, ParseError> {
        match self.peek() {
            Some('@') => {
                self.bump();
                let lang = self.word();
                if lang.is_empty() {
                    return Err(self.err("empty language tag"));
                }
                Ok(Tok::Literal {
                    value,
                    lang: Some(lang),
                    datatype: false,
                })
            }
            Some('^') => {
                self.bump();
                if self.bump() != Some('^') {
                    return Err(self.err("expected `^^`"));
                }
                match self.peek() {
                    Some('<') => {
                        self.iri()?;
                    }
                    _ => {
                        self.name()?;
                    }
                }
                Ok(Tok::Literal {
                    value,
                    lang: None,
                    datatype: true,
                })
            }
            _ => Ok(Tok::Literal {
                value,
                lang: None,
                datatype: false,
            }),
        }
    }

    /// Prefixed name, blank node label, or the `a` keyword.
    fn name(&mut self) -> Result<Tok, ParseError> {
        let prefix = self.word();
        if self.peek() != Some(':') {
            return if prefix == "a" {
                Ok(Tok::A)
            } else if prefix.is_empty() {
                let c = self.peek().unwrap_or(' ');
                Err(self.err(format!("unexpected character `{c}`")))
            } else {
                Err(self.err(format!("unexpected bare word `{prefix}`")))
            };
        }
        self.bump();
        let mut local = String::new();
        while let Some(c) = self.peek() {
            if c.is_alphanumeric() || c == '_' || c == '-' {
                local.push(c);
                self.bump();
            } else if c == '.' {
                // a dot belongs to the name only when followed by a name char
                let mut ahead = self.chars.clone();
                ahead.next();
                match ahead.peek() {
                    Some(&(_, n)) if n.is_alphanumeric() || n == '_' || n == '-' => {
                        local.push(c);
                        self.bump();
                    }
                    _ => break,
                }
            } else {
                break;
            }
        }
        if prefix == "_" {
            Ok(Tok::BlankLabel(local))
        } else {
            Ok(Tok::PName(prefix, local))
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
enum Term {
    Iri(String),
    Literal {
        value: String,
        lang: Option<String>,
        datatype: bool,
    },
}

#[derive(Debug)]
struct Statement {
    subject: String,
    line: usize,
    pairs: Vec<(String, Term)>,
}

struct Parser {
    toks: Vec<(Tok, usize)>,
    pos: usize,
}

impl Parser {
    fn line(&self) -> usize {
        self.toks
            .get(self.pos)
            .or_else(|| self.toks.last())
            .map_or(0, |t| t.1)
    }

    fn err(&self, message: impl Into<String>) -> ParseError {
        ParseError::SyntaxError {
            line: self.line(),
            message: message.into(),
        }
    }

    fn next(&mut self) -> Option<Tok> {
        let t = self.toks.get(self.pos).map(|t| t.0.clone());
        self.pos += 1;
        t
    }

    fn peek(&self) -> Option<&Tok> {
        self.toks.get(self.pos).map(|t| &t.0)
    }

    fn statements(&mut self) -> Result<Vec<Statement>, ParseError> {
        let mut out = Vec::new();
        while self.peek().is_some() {
            out.push(self.statement()?);
        }
        Ok(out)
    }

    fn statement(&mut self) -> Result<Statement, ParseError> {
        let line = self.line();
        let subject = match self.next() {
            Some(Tok::Directive(d)) => {
                return Err(ParseError::BadHeader(format!(
                    "unexpected `@{d}` directive after the header"
                )))
            }
            Some(Tok::BlankOpen) | Some(Tok::BlankLabel(_)) => {
                return Err(forbidden("_:", "blank nodes are not allowed"))
            }
            Some(Tok::CollectionOpen) => {
                return Err(forbidden("(", "collections are not allowed"))
            }
            Some(t) => self.iri_of(t)?,
            None => return Err(self.err("expected subject")),
        };
        let mut pairs = Vec::new();
        loop {
            let predicate = match self.next() {
                Some(Tok::A) => format!("{RDF_NS}type"),
                Some(t @ (Tok::Iri(_) | Tok::PName(..))) => self.iri_of(t)?,
                _ => return Err(self.err("expected predicate")),
            };
            loop {
                let object = match self.next() {
                    Some(Tok::Literal {
                        value,
                        lang,
                        datatype,
                    }) => Term::Literal {
                        value,
                        lang,
                        datatype,
                    },
                    Some(Tok::BlankOpen) | Some(Tok::BlankLabel(_)) => {
                        return Err(forbidden(&subject, "blank nodes are not allowed"))
                    }
                    Some(Tok::CollectionOpen) => {
                        return Err(forbidden(&subject, "collections are not allowed"))
                    }
                    Some(t @ (Tok::Iri(_) | Tok::PName(..))) => Term::Iri(self.iri_of(t)?),
                    _ => return Err(self.err("expected object")),
                };
                pairs.push((predicate.clone(), object));
                if self.peek() == Some(&Tok::Comma) {
                    self.pos += 1;
                } else {
                    break;
                }
            }
            match self.next() {
                Some(Tok::Semi) => {
                    // trailing `;` before `.` is legal Turtle
                    if self.peek() == Some(&Tok::Dot) {
                        self.pos += 1;
                        break;
                    }
                }
                Some(Tok::Dot) => break,
                _ => return Err(self.err("expected `;` or `.`")),
            }
        }
        Ok(Statement {
            subject,
            line,
            pairs,
        })
    }

    fn iri_of(&self, t: Tok) -> Result<String, ParseError> {
        match t {
            Tok::Iri(s) => Ok(resolve_relative(&s)),
            Tok::PName(p, l) => {
                let ns = match p.as_str() {
                    "" | "wvs" => WVS_NS,
                    "owl" => OWL_NS,
                    "rdf" => RDF_NS,
                    "rdfs" => RDFS_NS,
                    "xml" => XML_NS,
                    "xsd" => XSD_NS,
                    _ => return Err(self.err(format!("undeclared prefix `{p}:`"))),
                };
                Ok(format!("{ns}{l}"))
            }
            _ => Err(self.err("expected IRI")),
        }
    }
}

fn forbidden(subject: &str, detail: &str) -> ParseError {
    ParseError::ForbiddenAxiom {
        subject: subject.to_string(),
        detail: detail.to_string(),
    }
}

fn resolve_relative(iri: &str) -> String {
    if iri.contains(':') {
        iri.to_string()
    } else if iri.is_empty() {
        WVS_NS.to_string()
    } else if let Some(frag) = iri.strip_prefix('#') {
        format!("{WVS_NS}{frag}")
    } else {
        let dir = &WVS_NS[..WVS_NS.rfind('/').map_or(0, |i| i + 1)];
        format!("{dir}{iri}")
    }
}

fn short(iri: &str) -> String {
    for (ns, p) in [
        (WVS_NS, "wvs"),
        (OWL_NS, "owl"),
        (RDF_NS, "rdf"),
        (RDFS_NS, "rdfs"),
        (XSD_NS, "xsd"),
    ] {
        if let Some(local) = iri.strip_prefix(ns) {
            return format!("{p}:{local}");
        }
    }
    format!("<{iri}>")
}

/// Splits off and checks the fixed header, returning the remaining body.
fn strip_header(text: &str) -> Result<&str, ParseError> {
    let mut rest = text.trim_start_matches(['\u{feff}', ' ', '\t', '\r', '\n']);
    for (i, expected) in HEADER_LINES.iter().enumerate() {
        let (line, tail) = match rest.find('\n') {
            Some(n) => (&rest[..n], &rest[n + 1..]),
            None => (rest, ""),
        };
        if line.trim_end() != *expected {
            return Err(ParseError::BadHeader(format!(
                "header line {} must be `{expected}`",
                i + 1
            )));
        }
        rest = tail;
    }
    Ok(rest)
}

struct PropertyBlock {
    iri: String,
    line: usize,
    types: Vec<String>,
    domains: Vec<Term>,
    ranges: Vec<Term>,
    labels: Vec<Term>,
}

/// Parses a candidate document into candidate triples, resolving domain and
/// range IRIs against the taxonomy.
///
/// Errors are reported by severity: header, syntax, forbidden axioms,
/// malformed properties, then unknown classes.
pub fn parse_candidate_document(
    text: &str,
    tax: &Taxonomy,
) -> Result<Vec<OntologyTriple>, ParseError> {
    let text = text.replace("\r\n", "\n");
    let body = strip_header(&text)?;
    let first_line = text[..text.len() - body.len()].matches('\n').count() + 1;
    let toks = Lexer::new(body, first_line).tokens()?;
    let mut parser = Parser { toks, pos: 0 };
    let statements = parser.statements()?;

    let mut iter = statements.into_iter();
    match iter.next() {
        Some(s)
            if s.subject == WVS_NS
                && s.pairs == [(format!("{RDF_NS}type"), Term::Iri(format!("{OWL_NS}Ontology")))] => {}
        _ => {
            return Err(ParseError::BadHeader(
                "missing ontology declaration after the prefix header".into(),
            ))
        }
    }

    let rdf_type = format!("{RDF_NS}type");
    let object_property = format!("{OWL_NS}ObjectProperty");
    let mut blocks: Vec<PropertyBlock> = Vec::new();
    let mut index: HashMap<String, usize> = HashMap::new();
    for s in iter {
        let i = *index.entry(s.subject.clone()).or_insert_with(|| {
            blocks.push(PropertyBlock {
                iri: s.subject.clone(),
                line: s.line,
                types: Vec::new(),
                domains: Vec::new(),
                ranges: Vec::new(),
                labels: Vec::new(),
            });
            blocks.len() - 1
        });
        let b = &mut blocks[i];
        for (pred, obj) in s.pairs {
            match pred.strip_prefix(RDFS_NS) {
                Some("domain") => b.domains.push(obj),
                Some("range") => b.ranges.push(obj),
                Some("label") => b.labels.push(obj),
                _ if pred == rdf_type => match obj {
                    Term::Iri(t) => b.types.push(t),
                    Term::Literal { .. } => {
                        return Err(forbidden(&short(&b.iri), "rdf:type with a literal value"))
                    }
                },
                _ => {
                    return Err(forbidden(
                        &short(&b.iri),
                        &format!("predicate {} is not allowed", short(&pred)),
                    ))
                }
            }
        }
    }

    for b in &blocks {
        if b.types.is_empty() {
            return Err(forbidden(
                &short(&b.iri),
                "statement is not an owl:ObjectProperty declaration",
            ));
        }
        if let Some(t) = b.types.iter().find(|t| **t != object_property) {
            return Err(forbidden(
                &short(&b.iri),
                &format!("declares {} (only owl:ObjectProperty is allowed)", short(t)),
            ));
        }
    }

    let mut shaped = Vec::with_capacity(blocks.len());
    for b in &blocks {
        let malformed = |detail: String| ParseError::MalformedProperty {
            property: short(&b.iri),
            detail: format!("{detail} (line {})", b.line),
        };
        let Some(relation) = b.iri.strip_prefix(WVS_NS).filter(|l| !l.is_empty()) else {
            return Err(malformed("property IRI is outside the wvs namespace".into()));
        };
        for (what, terms) in [("rdfs:domain", &b.domains), ("rdfs:range", &b.ranges)] {
            if terms.len() != 1 {
                return Err(malformed(format!("expected exactly one {what}, found {}", terms.len())));
            }
            if !matches!(terms[0], Term::Iri(_)) {
                return Err(malformed(format!("{what} must be a class IRI")));
            }
        }
        if b.labels.len() != 1 {
            return Err(malformed(format!(
                "expected exactly one rdfs:label, found {}",
                b.labels.len()
            )));
        }
        let label = match &b.labels[0] {
            Term::Literal {
                value,
                lang: Some(lang),
                datatype: false,
            } if lang.eq_ignore_ascii_case("en") => value.clone(),
            _ => return Err(malformed("rdfs:label must be an @en string literal".into())),
        };
        let (Term::Iri(domain), Term::Iri(range)) = (&b.domains[0], &b.ranges[0]) else {
            unreachable!("checked above");
        };
        shaped.push((relation.to_string(), domain.clone(), range.clone(), label));
    }

    let resolve = |iri: &str| -> Result<String, ParseError> {
        iri.strip_prefix(WVS_NS)
            .and_then(|local| tax.resolve_iri_local(local))
            .map(|(name, _)| name.to_string())
            .ok_or_else(|| ParseError::NewClass { iri: short(iri) })
    };
    shaped
        .into_iter()
        .map(|(relation, domain, range, label)| {
            Ok(OntologyTriple::new(resolve(&domain)?, relation, label, resolve(&range)?))
        })
        .collect()
}

fn escape_literal(s: &str) -> String {
    let mut out = String::with_capacity(s.len());
    for c in s.chars() {
        match c {
            '"' => out.push_str("\\\""),
            '\\' => out.push_str("\\\\"),
            '\n' => out.push_str("\\n"),
            '\r' => out.push_str("\\r"),
            '\t' => out.push_str("\\t"),
            c => out.push(c),
        }
    }
    out
}

/// Writes triples back out as a conforming candidate document.
pub fn serialize_candidates(triples: &[OntologyTriple]) -> String {
    let mut out = String::from(HEADER);
    for t in triples {
        out.push_str(&format!(
            "\nwvs:{} rdf:type owl:ObjectProperty ;\n    rdfs:domain wvs:{} ;\n    rdfs:range wvs:{} ;\n    rdfs:label \"{}\"@en .\n",
            t.relation,
            camel_case(&t.subject_class),
            camel_case(&t.object_class),
            escape_literal(&t.label_sentence)
        ));
    }
    out
}
