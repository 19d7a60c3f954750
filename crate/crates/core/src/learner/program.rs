//! Typed program trees, bitset evaluation and prefix text form.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use super::knobs::Knob;
use super::LearnError;

/// Fixed-length bit vector, one bit per data row.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Bits {
    words: Vec<u64>,
    len: usize,
}

impl Bits {
    pub fn zeros(len: usize) -> Self {
        Self { words: vec![0; len.div_ceil(64)], len }
    }

    pub fn ones(len: usize) -> Self {
        let mut b = Self { words: vec![u64::MAX; len.div_ceil(64)], len };
        b.mask_tail();
        b
    }

    pub fn from_fn(len: usize, f: impl Fn(usize) -> bool) -> Self {
        let mut b = Self::zeros(len);
        for i in 0..len {
            if f(i) {
                b.words[i / 64] |= 1 << (i % 64);
            }
        }
        b
    }

    fn mask_tail(&mut self) {
        let r = self.len % 64;
        if r != 0 {
            if let Some(w) = self.words.last_mut() {
                *w &= (1u64 << r) - 1;
            }
        }
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn get(&self, i: usize) -> bool {
        self.words[i / 64] >> (i % 64) & 1 == 1
    }

    pub fn count_ones(&self) -> usize {
        self.words.iter().map(|w| w.count_ones() as usize).sum()
    }

    pub fn and_assign(&mut self, o: &Bits) {
        self.words.iter_mut().zip(&o.words).for_each(|(a, b)| *a &= b);
    }

    pub fn or_assign(&mut self, o: &Bits) {
        self.words.iter_mut().zip(&o.words).for_each(|(a, b)| *a |= b);
    }

    pub fn xor_assign(&mut self, o: &Bits) {
        self.words.iter_mut().zip(&o.words).for_each(|(a, b)| *a ^= b);
    }

    pub fn not_assign(&mut self) {
        self.words.iter_mut().for_each(|w| *w = !*w);
        self.mask_tail();
    }

    /// Rows where both vectors agree.
    pub fn agreement(&self, o: &Bits) -> usize {
        let mut x = self.clone();
        x.xor_assign(o);
        self.len - x.count_ones()
    }
}

/// Attribute names visible to programs, split by type.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct AttrSchema {
    pub numeric: Vec<String>,
    pub boolean: Vec<String>,
}

impl AttrSchema {
    pub fn is_empty(&self) -> bool {
        self.numeric.is_empty() && self.boolean.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum NumExpr {
    Const(f64),
    Attr(usize),
    Plus(Box<NumExpr>, Box<NumExpr>),
    Minus(Box<NumExpr>, Box<NumExpr>),
    Times(Box<NumExpr>, Box<NumExpr>),
    /// Threshold knob: the value is the knob's setting.
    Knob(usize),
    /// Attribute-swap knob over numeric attributes.
    AttrKnob(usize),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum BoolExpr {
    Const(bool),
    Attr(usize),
    Not(Box<BoolExpr>),
    And(Vec<BoolExpr>),
    Or(Vec<BoolExpr>),
    Xor(Box<BoolExpr>, Box<BoolExpr>),
    Greater(Box<NumExpr>, Box<NumExpr>),
    /// Literal-swap knob: a boolean attribute or its negation.
    LitKnob(usize),
    /// Toggle knob; when off the child is dropped from its AND/OR parent.
    Toggle(usize, Box<BoolExpr>),
}

/// Numeric columns and boolean bitsets over the same rows.
pub trait Columns {
    fn rows(&self) -> usize;
    fn numeric(&self, i: usize) -> &[f64];
    fn boolean(&self, i: usize) -> &Bits;
}

enum NumVal<'a> {
    Scalar(f64),
    Col(&'a [f64]),
    Owned(Vec<f64>),
}

impl NumVal<'_> {
    fn at(&self, i: usize) -> f64 {
        match self {
            NumVal::Scalar(v) => *v,
            NumVal::Col(c) => c[i],
            NumVal::Owned(c) => c[i],
        }
    }
}

impl NumExpr {
    pub fn size(&self) -> usize {
        match self {
            NumExpr::Plus(a, b) | NumExpr::Minus(a, b) | NumExpr::Times(a, b) => 1 + a.size() + b.size(),
            _ => 1,
        }
    }

    pub fn has_knobs(&self) -> bool {
        match self {
            NumExpr::Knob(_) | NumExpr::AttrKnob(_) => true,
            NumExpr::Plus(a, b) | NumExpr::Minus(a, b) | NumExpr::Times(a, b) => a.has_knobs() || b.has_knobs(),
            _ => false,
        }
    }

    fn eval<'a>(&self, d: &'a impl Columns, k: &[Knob]) -> NumVal<'a> {
        let bin = |a: &NumExpr, b: &NumExpr, f: fn(f64, f64) -> f64| {
            let (x, y) = (a.eval(d, k), b.eval(d, k));
            match (&x, &y) {
                (NumVal::Scalar(p), NumVal::Scalar(q)) => NumVal::Scalar(f(*p, *q)),
                _ => NumVal::Owned((0..d.rows()).map(|i| f(x.at(i), y.at(i))).collect()),
            }
        };
        match self {
            NumExpr::Const(c) => NumVal::Scalar(*c),
            NumExpr::Attr(i) => NumVal::Col(d.numeric(*i)),
            NumExpr::Knob(i) => NumVal::Scalar(k[*i].threshold()),
            NumExpr::AttrKnob(i) => NumVal::Col(d.numeric(k[*i].attr())),
            NumExpr::Plus(a, b) => bin(a, b, |p, q| p + q),
            NumExpr::Minus(a, b) => bin(a, b, |p, q| p - q),
            NumExpr::Times(a, b) => bin(a, b, |p, q| p * q),
        }
    }

    /// Values on every row under the given knob settings.
    pub fn values(&self, d: &impl Columns, k: &[Knob]) -> Vec<f64> {
        let v = self.eval(d, k);
        (0..d.rows()).map(|i| v.at(i)).collect()
    }

    fn instantiate(&self, k: &[Knob]) -> NumExpr {
        let bin = |a: &NumExpr, b: &NumExpr| (Box::new(a.instantiate(k)), Box::new(b.instantiate(k)));
        match self {
            NumExpr::Knob(i) => NumExpr::Const(k[*i].threshold()),
            NumExpr::AttrKnob(i) => NumExpr::Attr(k[*i].attr()),
            NumExpr::Plus(a, b) => {
                let (a, b) = bin(a, b);
                NumExpr::Plus(a, b)
            }
            NumExpr::Minus(a, b) => {
                let (a, b) = bin(a, b);
                NumExpr::Minus(a, b)
            }
            NumExpr::Times(a, b) => {
                let (a, b) = bin(a, b);
                NumExpr::Times(a, b)
            }
            other => other.clone(),
        }
    }

    fn write_prefix(&self, s: &AttrSchema, out: &mut String) {
        let bin = |op: &str, a: &NumExpr, b: &NumExpr, out: &mut String| {
            write!(out, "({op} ").unwrap();
            a.write_prefix(s, out);
            out.push(' ');
            b.write_prefix(s, out);
            out.push(')');
        };
        match self {
            NumExpr::Const(c) => write!(out, "{c:?}").unwrap(),
            NumExpr::Attr(i) => write_name(&s.numeric[*i], out),
            NumExpr::Knob(i) => write!(out, "?t{i}").unwrap(),
            NumExpr::AttrKnob(i) => write!(out, "?a{i}").unwrap(),
            NumExpr::Plus(a, b) => bin("+", a, b, out),
            NumExpr::Minus(a, b) => bin("-", a, b, out),
            NumExpr::Times(a, b) => bin("*", a, b, out),
        }
    }
}

impl BoolExpr {
    pub fn size(&self) -> usize {
        match self {
            BoolExpr::Not(x) => 1 + x.size(),
            BoolExpr::And(xs) | BoolExpr::Or(xs) => 1 + xs.iter().map(BoolExpr::size).sum::<usize>(),
            BoolExpr::Xor(a, b) => 1 + a.size() + b.size(),
            BoolExpr::Greater(a, b) => 1 + a.size() + b.size(),
            BoolExpr::Toggle(_, x) => x.size(),
            _ => 1,
        }
    }

    pub fn has_knobs(&self) -> bool {
        match self {
            BoolExpr::LitKnob(_) | BoolExpr::Toggle(..) => true,
            BoolExpr::Not(x) => x.has_knobs(),
            BoolExpr::And(xs) | BoolExpr::Or(xs) => xs.iter().any(BoolExpr::has_knobs),
            BoolExpr::Xor(a, b) => a.has_knobs() || b.has_knobs(),
            BoolExpr::Greater(a, b) => a.has_knobs() || b.has_knobs(),
            _ => false,
        }
    }

    /// Truth values on every row under the given knob settings.
    pub fn eval(&self, d: &impl Columns, k: &[Knob]) -> Bits {
        let n = d.rows();
        match self {
            BoolExpr::Const(true) => Bits::ones(n),
            BoolExpr::Const(false) => Bits::zeros(n),
            BoolExpr::Attr(i) => d.boolean(*i).clone(),
            BoolExpr::LitKnob(i) => {
                let (a, neg) = k[*i].literal();
                let mut b = d.boolean(a).clone();
                if neg {
                    b.not_assign();
                }
                b
            }
            BoolExpr::Not(x) => {
                let mut b = x.eval(d, k);
                b.not_assign();
                b
            }
            BoolExpr::And(xs) => {
                let mut acc = Bits::ones(n);
                for x in active(xs, k) {
                    acc.and_assign(&x.eval(d, k));
                }
                acc
            }
            BoolExpr::Or(xs) => {
                let mut acc = Bits::zeros(n);
                for x in active(xs, k) {
                    acc.or_assign(&x.eval(d, k));
                }
                acc
            }
            BoolExpr::Xor(a, b) => {
                let mut x = a.eval(d, k);
                x.xor_assign(&b.eval(d, k));
                x
            }
            BoolExpr::Greater(a, b) => {
                let (x, y) = (a.eval(d, k), b.eval(d, k));
                Bits::from_fn(n, |i| x.at(i) > y.at(i))
            }
            BoolExpr::Toggle(i, x) => {
                if k[*i].is_on() {
                    x.eval(d, k)
                } else {
                    Bits::zeros(n)
                }
            }
        }
    }

    /// Knob-free program obtained by fixing every knob at its setting.
    pub fn instantiate(&self, k: &[Knob]) -> BoolExpr {
        let junction = |xs: &[BoolExpr], and: bool| {
            let mut kids: Vec<BoolExpr> = active(xs, k).map(|x| x.instantiate(k)).collect();
            match kids.len() {
                0 => BoolExpr::Const(and),
                1 => kids.pop().unwrap(),
                _ if and => BoolExpr::And(kids),
                _ => BoolExpr::Or(kids),
            }
        };
        match self {
            BoolExpr::LitKnob(i) => {
                let (a, neg) = k[*i].literal();
                if neg {
                    BoolExpr::Not(Box::new(BoolExpr::Attr(a)))
                } else {
                    BoolExpr::Attr(a)
                }
            }
            BoolExpr::Toggle(i, x) => {
                if k[*i].is_on() {
                    x.instantiate(k)
                } else {
                    BoolExpr::Const(false)
                }
            }
            BoolExpr::Not(x) => BoolExpr::Not(Box::new(x.instantiate(k))),
            BoolExpr::And(xs) => junction(xs, true),
            BoolExpr::Or(xs) => junction(xs, false),
            BoolExpr::Xor(a, b) => BoolExpr::Xor(Box::new(a.instantiate(k)), Box::new(b.instantiate(k))),
            BoolExpr::Greater(a, b) => BoolExpr::Greater(Box::new(a.instantiate(k)), Box::new(b.instantiate(k))),
            other => other.clone(),
        }
    }

    /// Prefix text, e.g. `(and (gt $river_dist 0.3) (not $Have_Exp))`.
    pub fn to_prefix(&self, s: &AttrSchema) -> String {
        let mut out = String::new();
        self.write_prefix(s, &mut out);
        out
    }

    fn write_prefix(&self, s: &AttrSchema, out: &mut String) {
        let list = |op: &str, xs: &[&BoolExpr], out: &mut String| {
            write!(out, "({op}").unwrap();
            for x in xs {
                out.push(' ');
                x.write_prefix(s, out);
            }
            out.push(')');
        };
        match self {
            BoolExpr::Const(b) => write!(out, "{b}").unwrap(),
            BoolExpr::Attr(i) => write_name(&s.boolean[*i], out),
            BoolExpr::LitKnob(i) => write!(out, "?l{i}").unwrap(),
            BoolExpr::Toggle(i, x) => {
                write!(out, "(?s{i} ").unwrap();
                x.write_prefix(s, out);
                out.push(')');
            }
            BoolExpr::Not(x) => list("not", &[x], out),
            BoolExpr::And(xs) => list("and", &xs.iter().collect::<Vec<_>>(), out),
            BoolExpr::Or(xs) => list("or", &xs.iter().collect::<Vec<_>>(), out),
            BoolExpr::Xor(a, b) => list("xor", &[a, b], out),
            BoolExpr::Greater(a, b) => {
                out.push_str("(gt ");
                a.write_prefix(s, out);
                out.push(' ');
                b.write_prefix(s, out);
                out.push(')');
            }
        }
    }

    /// Parses the prefix form against a schema. Knob nodes are not accepted.
    pub fn parse_prefix(text: &str, s: &AttrSchema) -> Result<BoolExpr, LearnError> {
        let toks = tokenize(text)?;
        let mut p = PrefixParser { toks: &toks, pos: 0, schema: s };
        let e = p.boolean()?;
        if p.pos != toks.len() {
            return Err(LearnError::Parse(format!("trailing tokens in '{text}'")));
        }
        Ok(e)
    }
}

fn active<'a>(xs: &'a [BoolExpr], k: &'a [Knob]) -> impl Iterator<Item = &'a BoolExpr> + 'a {
    xs.iter().filter(move |x| !matches!(x, BoolExpr::Toggle(i, _) if !k[*i].is_on()))
}

fn write_name(name: &str, out: &mut String) {
    out.push('$');
    for c in name.chars() {
        if c.is_whitespace() || matches!(c, '(' | ')' | '\\') {
            out.push('\\');
        }
        out.push(c);
    }
}

#[derive(Debug, PartialEq)]
enum Tok {
    Open,
    Close,
    Name(String),
    Word(String),
}

fn tokenize(text: &str) -> Result<Vec<Tok>, LearnError> {
    let mut toks = Vec::new();
    let mut chars = text.chars().peekable();
    while let Some(&c) = chars.peek() {
        match c {
            _ if c.is_whitespace() => {
                chars.next();
            }
            '(' => {
                chars.next();
                toks.push(Tok::Open);
            }
            ')' => {
                chars.next();
                toks.push(Tok::Close);
            }
            _ => {
                let is_name = c == '$';
                if is_name {
                    chars.next();
                }
                let mut w = String::new();
                while let Some(&c) = chars.peek() {
                    if c.is_whitespace() || c == '(' || c == ')' {
                        break;
                    }
                    chars.next();
                    if c == '\\' && is_name {
                        match chars.next() {
                            Some(e) => w.push(e),
                            None => return Err(LearnError::Parse("dangling escape".into())),
                        }
                    } else {
                        w.push(c);
                    }
                }
                toks.push(if is_name { Tok::Name(w) } else { Tok::Word(w) });
            }
        }
    }
    Ok(toks)
}

struct PrefixParser<'a> {
    toks: &'a [Tok],
    pos: usize,
    schema: &'a AttrSchema,
}

impl PrefixParser<'_> {
    fn next(&mut self) -> Result<&Tok, LearnError> {
        let t = self.toks.get(self.pos).ok_or_else(|| LearnError::Parse("unexpected end of program".into()))?;
        self.pos += 1;
        Ok(t)
    }

    fn close(&mut self) -> Result<(), LearnError> {
        match self.next()? {
            Tok::Close => Ok(()),
            t => Err(LearnError::Parse(format!("expected ')', found {t:?}"))),
        }
    }

    fn boolean(&mut self) -> Result<BoolExpr, LearnError> {
        match self.next()? {
            Tok::Word(w) if w == "true" => Ok(BoolExpr::Const(true)),
            Tok::Word(w) if w == "false" => Ok(BoolExpr::Const(false)),
            Tok::Name(n) => {
                let n = n.clone();
                self.schema
                    .boolean
                    .iter()
                    .position(|b| *b == n)
                    .map(BoolExpr::Attr)
                    .ok_or_else(|| LearnError::Parse(format!("unknown boolean attribute '{n}'")))
            }
            Tok::Open => {
                let op = match self.next()? {
                    Tok::Word(w) => w.clone(),
                    t => return Err(LearnError::Parse(format!("expected operator, found {t:?}"))),
                };
                let e = match op.as_str() {
                    "not" => BoolExpr::Not(Box::new(self.boolean()?)),
                    "xor" => BoolExpr::Xor(Box::new(self.boolean()?), Box::new(self.boolean()?)),
                    "gt" => BoolExpr::Greater(Box::new(self.numeric()?), Box::new(self.numeric()?)),
                    "and" | "or" => {
                        let mut xs = Vec::new();
                        while self.toks.get(self.pos) != Some(&Tok::Close) {
                            xs.push(self.boolean()?);
                        }
                        if op == "and" {
                            BoolExpr::And(xs)
                        } else {
                            BoolExpr::Or(xs)
                        }
                    }
                    other => return Err(LearnError::Parse(format!("unknown boolean operator '{other}'"))),
                };
                self.close()?;
                Ok(e)
            }
            t => Err(LearnError::Parse(format!("expected boolean expression, found {t:?}"))),
        }
    }

    fn numeric(&mut self) -> Result<NumExpr, LearnError> {
        match self.next()? {
            Tok::Word(w) => w
                .parse::<f64>()
                .map(NumExpr::Const)
                .map_err(|_| LearnError::Parse(format!("expected number, found '{w}'"))),
            Tok::Name(n) => {
                let n = n.clone();
                self.schema
                    .numeric
                    .iter()
                    .position(|b| *b == n)
                    .map(NumExpr::Attr)
                    .ok_or_else(|| LearnError::Parse(format!("unknown numeric attribute '{n}'")))
            }
            Tok::Open => {
                let op = match self.next()? {
                    Tok::Word(w) => w.clone(),
                    t => return Err(LearnError::Parse(format!("expected operator, found {t:?}"))),
                };
                let (a, b) = (Box::new(self.numeric()?), Box::new(self.numeric()?));
                let e = match op.as_str() {
                    "+" => NumExpr::Plus(a, b),
                    "-" => NumExpr::Minus(a, b),
                    "*" => NumExpr::Times(a, b),
                    other => return Err(LearnError::Parse(format!("unknown numeric operator '{other}'"))),
                };
                self.close()?;
                Ok(e)
            }
            Tok::Close => Err(LearnError::Parse("expected numeric expression, found ')'".into())),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) struct Grid {
        pub num: Vec<Vec<f64>>,
        pub boo: Vec<Bits>,
        pub rows: usize,
    }

    impl Columns for Grid {
        fn rows(&self) -> usize {
            self.rows
        }
        fn numeric(&self, i: usize) -> &[f64] {
            &self.num[i]
        }
        fn boolean(&self, i: usize) -> &Bits {
            &self.boo[i]
        }
    }

    fn schema() -> AttrSchema {
        AttrSchema { numeric: vec!["river dist".into(), "x".into()], boolean: vec!["b(0)".into(), "c".into()] }
    }

    #[test]
    fn bits_tail_stays_masked() {
        let mut b = Bits::zeros(70);
        b.not_assign();
        assert_eq!(b.count_ones(), 70);
        assert_eq!(Bits::ones(3).agreement(&Bits::from_fn(3, |i| i == 1)), 1);
    }

    #[test]
    fn prefix_round_trip() {
        let s = schema();
        let e = BoolExpr::Or(vec![
            BoolExpr::And(vec![
                BoolExpr::Greater(Box::new(NumExpr::Attr(0)), Box::new(NumExpr::Const(0.35))),
                BoolExpr::Not(Box::new(BoolExpr::Attr(0))),
            ]),
            BoolExpr::Xor(Box::new(BoolExpr::Attr(1)), Box::new(BoolExpr::Const(false))),
            BoolExpr::Greater(
                Box::new(NumExpr::Times(Box::new(NumExpr::Attr(1)), Box::new(NumExpr::Const(-2.5e-3)))),
                Box::new(NumExpr::Minus(Box::new(NumExpr::Const(1.0)), Box::new(NumExpr::Attr(0)))),
            ),
            BoolExpr::And(vec![]),
        ]);
        let text = e.to_prefix(&s);
        assert!(text.starts_with("(or (and (gt $river\\ dist 0.35) (not $b\\(0\\)))"), "{text}");
        assert_eq!(BoolExpr::parse_prefix(&text, &s).unwrap(), e);
        assert!(BoolExpr::parse_prefix("(gt $c 1)", &s).is_err());
        assert!(BoolExpr::parse_prefix("(and true", &s).is_err());
    }

    #[test]
    fn evaluation_on_rows() {
        let d = Grid {
            num: vec![vec![0.1, 0.6, 0.9], vec![0.0, 0.0, 1.0]],
            boo: vec![Bits::from_fn(3, |i| i != 1), Bits::zeros(3)],
            rows: 3,
        };
        let e = BoolExpr::And(vec![
            BoolExpr::Greater(Box::new(NumExpr::Attr(0)), Box::new(NumExpr::Const(0.5))),
            BoolExpr::Attr(0),
        ]);
        let out = e.eval(&d, &[]);
        assert_eq!((0..3).map(|i| out.get(i)).collect::<Vec<_>>(), [false, false, true]);
        assert_eq!(e.size(), 5);
    }
}
