//! Semantics-preserving reduction to a canonical negation normal form.
//!
//! The reduced form has negations only on literals (attributes and
//! comparisons), no XOR, flattened AND/OR with children sorted by a canonical
//! key, no duplicate or complementary siblings, absorbed subterms removed, and
//! constant arithmetic folded. Reduction repeats until nothing changes, so it
//! is idempotent.

use std::collections::BTreeSet;

use super::program::{BoolExpr, NumExpr};

const MAX_PASSES: usize = 64;

pub fn reduce(e: &BoolExpr) -> BoolExpr {
    debug_assert!(!e.has_knobs(), "reduce expects a knob-free program");
    let mut cur = pass(e);
    let mut key = canonical_key(&cur);
    for _ in 0..MAX_PASSES {
        let next = pass(&cur);
        let next_key = canonical_key(&next);
        if next_key == key {
            return cur;
        }
        cur = next;
        key = next_key;
    }
    cur
}

/// Canonical text of a knob-free tree, with attributes by index.
pub fn canonical_key(e: &BoolExpr) -> String {
    let mut s = String::new();
    write_key(e, &mut s);
    s
}

fn write_key(e: &BoolExpr, s: &mut String) {
    match e {
        BoolExpr::Const(b) => s.push_str(if *b { "T" } else { "F" }),
        BoolExpr::Attr(i) => {
            s.push('b');
            s.push_str(&i.to_string());
        }
        BoolExpr::Not(x) => {
            s.push_str("(!");
            write_key(x, s);
            s.push(')');
        }
        BoolExpr::And(xs) | BoolExpr::Or(xs) => {
            s.push_str(if matches!(e, BoolExpr::And(_)) { "(&" } else { "(|" });
            for x in xs {
                s.push(' ');
                write_key(x, s);
            }
            s.push(')');
        }
        BoolExpr::Xor(a, b) => {
            s.push_str("(^ ");
            write_key(a, s);
            s.push(' ');
            write_key(b, s);
            s.push(')');
        }
        BoolExpr::Greater(a, b) => {
            s.push_str("(> ");
            write_num_key(a, s);
            s.push(' ');
            write_num_key(b, s);
            s.push(')');
        }
        BoolExpr::LitKnob(i) => s.push_str(&format!("?l{i}")),
        BoolExpr::Toggle(i, x) => {
            s.push_str(&format!("(?s{i} "));
            write_key(x, s);
            s.push(')');
        }
    }
}

fn num_key(e: &NumExpr) -> String {
    let mut s = String::new();
    write_num_key(e, &mut s);
    s
}

fn write_num_key(e: &NumExpr, s: &mut String) {
    let mut bin = |op: &str, a: &NumExpr, b: &NumExpr| {
        s.push('(');
        s.push_str(op);
        s.push(' ');
        write_num_key(a, s);
        s.push(' ');
        write_num_key(b, s);
        s.push(')');
    };
    match e {
        NumExpr::Const(c) => s.push_str(&format!("{c:?}")),
        NumExpr::Attr(i) => s.push_str(&format!("n{i}")),
        NumExpr::Knob(i) => s.push_str(&format!("?t{i}")),
        NumExpr::AttrKnob(i) => s.push_str(&format!("?a{i}")),
        NumExpr::Plus(a, b) => bin("+", a, b),
        NumExpr::Minus(a, b) => bin("-", a, b),
        NumExpr::Times(a, b) => bin("*", a, b),
    }
}

fn fold(e: &NumExpr) -> NumExpr {
    let bin = |a: &NumExpr, b: &NumExpr, f: fn(f64, f64) -> f64, mk: fn(Box<NumExpr>, Box<NumExpr>) -> NumExpr| {
        match (fold(a), fold(b)) {
            (NumExpr::Const(x), NumExpr::Const(y)) => NumExpr::Const(f(x, y)),
            (x, y) => mk(Box::new(x), Box::new(y)),
        }
    };
    match e {
        NumExpr::Plus(a, b) => bin(a, b, |x, y| x + y, NumExpr::Plus),
        NumExpr::Minus(a, b) => bin(a, b, |x, y| x - y, NumExpr::Minus),
        NumExpr::Times(a, b) => bin(a, b, |x, y| x * y, NumExpr::Times),
        other => other.clone(),
    }
}

/// Logical negation pushed to the literals.
fn negate(e: &BoolExpr) -> BoolExpr {
    match e {
        BoolExpr::Const(b) => BoolExpr::Const(!b),
        BoolExpr::Not(x) => (**x).clone(),
        BoolExpr::And(xs) => BoolExpr::Or(xs.iter().map(negate).collect()),
        BoolExpr::Or(xs) => BoolExpr::And(xs.iter().map(negate).collect()),
        BoolExpr::Xor(a, b) => BoolExpr::Xor(Box::new(negate(a)), b.clone()),
        other => BoolExpr::Not(Box::new(other.clone())),
    }
}

/// Children of every AND/OR sorted by key, recursively.
fn sort_canonical(e: BoolExpr) -> BoolExpr {
    let sort = |xs: Vec<BoolExpr>| {
        let mut v: Vec<(String, BoolExpr)> = xs
            .into_iter()
            .map(sort_canonical)
            .map(|x| (canonical_key(&x), x))
            .collect();
        v.sort_by(|a, b| a.0.cmp(&b.0));
        v.into_iter().map(|(_, x)| x).collect()
    };
    match e {
        BoolExpr::And(xs) => BoolExpr::And(sort(xs)),
        BoolExpr::Or(xs) => BoolExpr::Or(sort(xs)),
        other => other,
    }
}

fn complement_key(e: &BoolExpr) -> String {
    canonical_key(&sort_canonical(negate(e)))
}

fn pass(e: &BoolExpr) -> BoolExpr {
    match e {
        BoolExpr::Const(_) | BoolExpr::Attr(_) => e.clone(),
        BoolExpr::Not(x) => negate(&pass(x)),
        BoolExpr::And(xs) => junction(xs.iter().map(pass).collect(), true),
        BoolExpr::Or(xs) => junction(xs.iter().map(pass).collect(), false),
        BoolExpr::Xor(a, b) => {
            let (a, b) = (pass(a), pass(b));
            let left = junction(vec![a.clone(), negate(&b)], true);
            let right = junction(vec![negate(&a), b], true);
            junction(vec![left, right], false)
        }
        BoolExpr::Greater(a, b) => {
            let (a, b) = (fold(a), fold(b));
            match (&a, &b) {
                (NumExpr::Const(x), NumExpr::Const(y)) => BoolExpr::Const(x > y),
                _ if num_key(&a) == num_key(&b) => BoolExpr::Const(false),
                _ => BoolExpr::Greater(Box::new(a), Box::new(b)),
            }
        }
        BoolExpr::LitKnob(_) | BoolExpr::Toggle(..) => e.clone(),
    }
}

/// Simplifies an AND (`and`) or OR node whose children are already reduced.
fn junction(children: Vec<BoolExpr>, and: bool) -> BoolExpr {
    let unit = and;
    let mut flat = Vec::new();
    for c in children {
        match c {
            BoolExpr::And(xs) if and => flat.extend(xs),
            BoolExpr::Or(xs) if !and => flat.extend(xs),
            BoolExpr::Const(b) if b == unit => {}
            BoolExpr::Const(_) => return BoolExpr::Const(!unit),
            other => flat.push(other),
        }
    }
    let mut keyed: Vec<(String, BoolExpr)> = flat.into_iter().map(|x| (canonical_key(&x), x)).collect();
    keyed.sort_by(|a, b| a.0.cmp(&b.0));
    keyed.dedup_by(|a, b| a.0 == b.0);

    let keys: BTreeSet<&str> = keyed.iter().map(|(k, _)| k.as_str()).collect();
    if keyed.iter().any(|(_, x)| keys.contains(complement_key(x).as_str())) {
        return BoolExpr::Const(!unit);
    }

    // absorption: a & (a | b) = a, and a & (!a | b) = a & b (dually for OR)
    let mut out = Vec::with_capacity(keyed.len());
    for (i, (_, x)) in keyed.iter().enumerate() {
        let inner = match x {
            BoolExpr::Or(ys) if and => ys,
            BoolExpr::And(ys) if !and => ys,
            _ => {
                out.push(x.clone());
                continue;
            }
        };
        let others: BTreeSet<&str> =
            keyed.iter().enumerate().filter(|(j, _)| *j != i).map(|(_, (k, _))| k.as_str()).collect();
        if inner.iter().any(|y| others.contains(canonical_key(y).as_str())) {
            continue;
        }
        let kept: Vec<BoolExpr> =
            inner.iter().filter(|y| !others.contains(complement_key(y).as_str())).cloned().collect();
        out.push(if and { BoolExpr::Or(kept) } else { BoolExpr::And(kept) });
    }
    // absorbed or shortened members may need another round
    let out: Vec<BoolExpr> = out
        .into_iter()
        .map(|x| match x {
            BoolExpr::Or(ys) if and => junction(ys, false),
            BoolExpr::And(ys) if !and => junction(ys, true),
            other => other,
        })
        .collect();
    if out.iter().any(|x| matches!(x, BoolExpr::Const(b) if *b != unit)) {
        return BoolExpr::Const(!unit);
    }
    let mut out: Vec<BoolExpr> = out.into_iter().filter(|x| !matches!(x, BoolExpr::Const(_))).collect();
    match out.len() {
        0 => BoolExpr::Const(unit),
        1 => out.pop().unwrap(),
        _ => {
            let mut keyed: Vec<(String, BoolExpr)> = out.into_iter().map(|x| (canonical_key(&x), x)).collect();
            keyed.sort_by(|a, b| a.0.cmp(&b.0));
            keyed.dedup_by(|a, b| a.0 == b.0);
            let xs = keyed.into_iter().map(|(_, x)| x).collect();
            if and {
                BoolExpr::And(xs)
            } else {
                BoolExpr::Or(xs)
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::learner::program::{Bits, Columns};
    use proptest::prelude::*;

    fn a(i: usize) -> BoolExpr {
        BoolExpr::Attr(i)
    }
    fn not(x: BoolExpr) -> BoolExpr {
        BoolExpr::Not(Box::new(x))
    }

    #[test]
    fn textbook_laws() {
        assert_eq!(reduce(&BoolExpr::And(vec![a(0), a(0)])), a(0));
        assert_eq!(reduce(&BoolExpr::Or(vec![a(0), not(a(0))])), BoolExpr::Const(true));
        assert_eq!(reduce(&BoolExpr::Xor(Box::new(a(0)), Box::new(BoolExpr::Const(false)))), a(0));
        assert_eq!(reduce(&BoolExpr::Xor(Box::new(a(0)), Box::new(BoolExpr::Const(true)))), not(a(0)));
        assert_eq!(reduce(&not(not(a(2)))), a(2));
        assert_eq!(
            reduce(&BoolExpr::And(vec![a(1), BoolExpr::Or(vec![a(1), a(2)])])),
            a(1)
        );
        assert_eq!(
            reduce(&BoolExpr::And(vec![a(1), BoolExpr::Or(vec![not(a(1)), a(2)])])),
            BoolExpr::And(vec![a(1), a(2)])
        );
        let x = NumExpr::Plus(Box::new(NumExpr::Attr(0)), Box::new(NumExpr::Const(1.0)));
        assert_eq!(reduce(&BoolExpr::Greater(Box::new(x.clone()), Box::new(x))), BoolExpr::Const(false));
        let c = |v| Box::new(NumExpr::Const(v));
        assert_eq!(
            reduce(&BoolExpr::Greater(Box::new(NumExpr::Times(c(2.0), c(0.5))), c(0.3))),
            BoolExpr::Const(true)
        );
    }

    #[test]
    fn sibling_order_does_not_matter() {
        let p = BoolExpr::Or(vec![a(3), BoolExpr::And(vec![a(1), not(a(0))]), a(2)]);
        let q = BoolExpr::Or(vec![BoolExpr::And(vec![not(a(0)), a(1)]), a(2), a(3)]);
        assert_eq!(reduce(&p), reduce(&q));
    }

    struct Table {
        boo: Vec<Bits>,
        num: Vec<Vec<f64>>,
        rows: usize,
    }

    impl Columns for Table {
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

    /// Every assignment of `k` boolean attributes, one per row.
    fn truth_table(k: usize) -> Table {
        let rows = 1 << k;
        Table { boo: (0..k).map(|j| Bits::from_fn(rows, |r| r >> j & 1 == 1)).collect(), num: vec![], rows }
    }

    fn num_tree() -> impl Strategy<Value = NumExpr> {
        let leaf = (-2.0f64..2.0).prop_map(|v| NumExpr::Const((v * 4.0).round() / 4.0));
        leaf.prop_recursive(2, 6, 2, |inner| {
            prop_oneof![
                (inner.clone(), inner.clone()).prop_map(|(a, b)| NumExpr::Plus(Box::new(a), Box::new(b))),
                (inner.clone(), inner.clone()).prop_map(|(a, b)| NumExpr::Minus(Box::new(a), Box::new(b))),
                (inner.clone(), inner).prop_map(|(a, b)| NumExpr::Times(Box::new(a), Box::new(b))),
            ]
        })
    }

    pub(crate) fn bool_tree(k: usize) -> impl Strategy<Value = BoolExpr> {
        let leaf = prop_oneof![
            6 => (0..k).prop_map(BoolExpr::Attr),
            1 => any::<bool>().prop_map(BoolExpr::Const),
            1 => (num_tree(), num_tree()).prop_map(|(a, b)| BoolExpr::Greater(Box::new(a), Box::new(b))),
        ];
        leaf.prop_recursive(4, 32, 4, |inner| {
            prop_oneof![
                inner.clone().prop_map(|x| BoolExpr::Not(Box::new(x))),
                prop::collection::vec(inner.clone(), 1..4).prop_map(BoolExpr::And),
                prop::collection::vec(inner.clone(), 1..4).prop_map(BoolExpr::Or),
                (inner.clone(), inner).prop_map(|(a, b)| BoolExpr::Xor(Box::new(a), Box::new(b))),
            ]
        })
    }

    proptest! {
        #[test]
        fn reduction_preserves_truth_table_and_is_idempotent(t in bool_tree(6)) {
            let tt = truth_table(6);
            let r = reduce(&t);
            prop_assert_eq!(t.eval(&tt, &[]), r.eval(&tt, &[]));
            prop_assert_eq!(reduce(&r), r.clone());
        }

        #[test]
        fn numeric_folding_agrees_pointwise(e in num_tree(), xs in prop::collection::vec(-5.0f64..5.0, 1..20)) {
            let t = Table { boo: vec![], num: vec![xs.clone()], rows: xs.len() };
            let e = NumExpr::Plus(Box::new(e), Box::new(NumExpr::Attr(0)));
            let f = fold(&e);
            for (p, q) in e.values(&t, &[]).iter().zip(f.values(&t, &[])) {
                prop_assert!((p - q).abs() <= 1e-12);
            }
        }
    }
}
