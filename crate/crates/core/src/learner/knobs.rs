//! Knobs, knob insertion and steepest-ascent hill climbing over knob settings.

use rand::seq::index::sample;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::program::{Bits, BoolExpr, Columns, NumExpr};
use super::LearnError;

/// One tunable parameter of a deme and its current setting.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Knob {
    /// A constant in [0, 1], moved on a lattice of `step`.
    Threshold { value: f64 },
    /// Whether a subtree takes part in its AND/OR parent.
    Toggle { on: bool },
    /// Which numeric attribute a leaf reads.
    NumSwap { attr: usize },
    /// Which boolean attribute a literal reads, and whether it is negated.
    LitSwap { attr: usize, negated: bool },
}

impl Knob {
    pub fn threshold(&self) -> f64 {
        match self {
            Knob::Threshold { value } => *value,
            _ => panic!("knob {self:?} is not a threshold"),
        }
    }

    pub fn is_on(&self) -> bool {
        match self {
            Knob::Toggle { on } => *on,
            _ => panic!("knob {self:?} is not a toggle"),
        }
    }

    pub fn attr(&self) -> usize {
        match self {
            Knob::NumSwap { attr } => *attr,
            _ => panic!("knob {self:?} is not a numeric swap"),
        }
    }

    pub fn literal(&self) -> (usize, bool) {
        match self {
            Knob::LitSwap { attr, negated } => (*attr, *negated),
            _ => panic!("knob {self:?} is not a literal swap"),
        }
    }
}

/// An exemplar program with knobs and the fitness of the current settings.
#[derive(Debug, Clone, PartialEq)]
pub struct Deme {
    pub exemplar: BoolExpr,
    pub knobs: Vec<Knob>,
    pub fitness: f64,
    pub accuracy: f64,
}

/// Search parameters shared by knob insertion and hill climbing.
#[derive(Debug, Clone, PartialEq)]
pub struct KnobSpace {
    pub step: f64,
    pub lambda: f64,
    /// Numeric attributes available to swaps and new structure.
    pub numeric: Vec<usize>,
    /// Boolean attributes available to swaps and new structure.
    pub boolean: Vec<usize>,
    /// Whether new structure may be grown.
    pub grow: bool,
}

/// Accuracy of a program's outputs against the target, and
/// accuracy − λ·size clamped at 0.
pub fn score(out: &Bits, target: &Bits, size: usize, lambda: f64) -> (f64, f64) {
    let acc = if target.is_empty() { 0.0 } else { out.agreement(target) as f64 / target.len() as f64 };
    ((acc - lambda * size as f64).max(0.0), acc)
}

pub fn evaluate(
    expr: &BoolExpr,
    knobs: &[Knob],
    data: &impl Columns,
    target: &Bits,
    lambda: f64,
) -> (f64, f64) {
    let size = instantiated_size(expr, knobs);
    score(&expr.eval(data, knobs), target, size, lambda)
}

fn instantiated_size(e: &BoolExpr, k: &[Knob]) -> usize {
    let junction = |xs: &[BoolExpr]| {
        let sizes: Vec<usize> = xs
            .iter()
            .filter(|x| !matches!(x, BoolExpr::Toggle(i, _) if !k[*i].is_on()))
            .map(|x| instantiated_size(x, k))
            .collect();
        match sizes.len() {
            0 => 1,
            1 => sizes[0],
            _ => 1 + sizes.iter().sum::<usize>(),
        }
    };
    match e {
        BoolExpr::Not(x) => 1 + instantiated_size(x, k),
        BoolExpr::And(xs) | BoolExpr::Or(xs) => junction(xs),
        BoolExpr::Xor(a, b) => 1 + instantiated_size(a, k) + instantiated_size(b, k),
        BoolExpr::Greater(a, b) => 1 + a.size() + b.size(),
        BoolExpr::LitKnob(i) => 1 + usize::from(k[*i].literal().1),
        BoolExpr::Toggle(i, x) if k[*i].is_on() => instantiated_size(x, k),
        _ => 1,
    }
}

/// Where a knob can be placed in a knob-free exemplar. Paths index children:
/// AND/OR by position, NOT/TOGGLE by 0, XOR/GREATER/arithmetic by 0 and 1.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord)]
enum Site {
    Threshold(Vec<usize>),
    NumSwap(Vec<usize>),
    LitSwap(Vec<usize>),
    Toggle(Vec<usize>),
    GrowAnd(Vec<usize>),
    GrowOr(Vec<usize>),
}

impl Site {
    fn path(&self) -> &[usize] {
        match self {
            Site::Threshold(p)
            | Site::NumSwap(p)
            | Site::LitSwap(p)
            | Site::Toggle(p)
            | Site::GrowAnd(p)
            | Site::GrowOr(p) => p,
        }
    }
}

fn num_sites(e: &NumExpr, path: &mut Vec<usize>, out: &mut Vec<Site>) {
    match e {
        NumExpr::Const(c) if (0.0..=1.0).contains(c) => out.push(Site::Threshold(path.clone())),
        NumExpr::Attr(_) => out.push(Site::NumSwap(path.clone())),
        NumExpr::Plus(a, b) | NumExpr::Minus(a, b) | NumExpr::Times(a, b) => {
            for (i, x) in [a, b].into_iter().enumerate() {
                path.push(i);
                num_sites(x, path, out);
                path.pop();
            }
        }
        _ => {}
    }
}

fn bool_sites(e: &BoolExpr, path: &mut Vec<usize>, in_junction: bool, space: &KnobSpace, out: &mut Vec<Site>) {
    if space.grow {
        out.push(Site::GrowAnd(path.clone()));
        out.push(Site::GrowOr(path.clone()));
    }
    if in_junction {
        out.push(Site::Toggle(path.clone()));
    }
    match e {
        BoolExpr::Attr(_) => out.push(Site::LitSwap(path.clone())),
        BoolExpr::Not(x) if matches!(**x, BoolExpr::Attr(_)) => out.push(Site::LitSwap(path.clone())),
        BoolExpr::Not(x) => {
            path.push(0);
            bool_sites(x, path, false, space, out);
            path.pop();
        }
        BoolExpr::And(xs) | BoolExpr::Or(xs) => {
            for (i, x) in xs.iter().enumerate() {
                path.push(i);
                bool_sites(x, path, true, space, out);
                path.pop();
            }
        }
        BoolExpr::Xor(a, b) => {
            for (i, x) in [a, b].into_iter().enumerate() {
                path.push(i);
                bool_sites(x, path, false, space, out);
                path.pop();
            }
        }
        BoolExpr::Greater(a, b) => {
            for (i, x) in [a, b].into_iter().enumerate() {
                path.push(i);
                num_sites(x, path, out);
                path.pop();
            }
        }
        _ => {}
    }
}

enum NodeMut<'a> {
    B(&'a mut BoolExpr),
    N(&'a mut NumExpr),
}

fn node_at<'a>(root: &'a mut BoolExpr, path: &[usize]) -> NodeMut<'a> {
    let mut cur = NodeMut::B(root);
    for &i in path {
        cur = match cur {
            NodeMut::B(b) => match b {
                BoolExpr::Not(x) | BoolExpr::Toggle(_, x) => NodeMut::B(x),
                BoolExpr::And(xs) | BoolExpr::Or(xs) => NodeMut::B(&mut xs[i]),
                BoolExpr::Xor(a, c) => NodeMut::B(if i == 0 { a } else { c }),
                BoolExpr::Greater(a, c) => NodeMut::N(if i == 0 { a } else { c }),
                _ => unreachable!("path descends into a leaf"),
            },
            NodeMut::N(n) => match n {
                NumExpr::Plus(a, c) | NumExpr::Minus(a, c) | NumExpr::Times(a, c) => {
                    NodeMut::N(if i == 0 { a } else { c })
                }
                _ => unreachable!("path descends into a numeric leaf"),
            },
        };
    }
    cur
}

/// Result of knob insertion.
#[derive(Debug, Clone, PartialEq)]
pub struct Insertion {
    pub deme: Deme,
    /// Number of sites that received knobs; 0 means the deme is unchanged.
    pub inserted: usize,
}

/// Adds knobs at up to `k` distinct sites of the (reduced, knob-free)
/// exemplar, chosen uniformly. Default settings reproduce the exemplar's
/// outputs on rows whose numeric attributes lie in [0, 1].
pub fn insert_knobs(deme: &Deme, k: usize, space: &KnobSpace, rng: &mut impl Rng) -> Insertion {
    let mut sites = Vec::new();
    bool_sites(&deme.exemplar, &mut Vec::new(), false, space, &mut sites);
    let sites: Vec<Site> = sites
        .into_iter()
        .filter(|s| match s {
            Site::NumSwap(_) => space.numeric.len() > 1,
            Site::LitSwap(_) => !space.boolean.is_empty(),
            Site::GrowAnd(_) | Site::GrowOr(_) => !(space.numeric.is_empty() && space.boolean.is_empty()),
            _ => true,
        })
        .collect();
    if sites.is_empty() || k == 0 {
        return Insertion { deme: deme.clone(), inserted: 0 };
    }
    let picked = sample(rng, sites.len(), k.min(sites.len()));
    let mut chosen: Vec<Site> = picked.into_iter().map(|i| sites[i].clone()).collect();
    // deepest and rightmost first, so pending paths stay valid
    chosen.sort_by(|a, b| b.path().cmp(a.path()).then(a.cmp(b)));
    let mut tree = deme.exemplar.clone();
    let mut knobs = deme.knobs.clone();
    for site in &chosen {
        apply_site(&mut tree, site, &mut knobs, space, rng);
    }
    let inserted = chosen.len();
    Insertion { deme: Deme { exemplar: tree, knobs, ..deme.clone() }, inserted }
}

fn push(knobs: &mut Vec<Knob>, k: Knob) -> usize {
    knobs.push(k);
    knobs.len() - 1
}

fn apply_site(tree: &mut BoolExpr, site: &Site, knobs: &mut Vec<Knob>, space: &KnobSpace, rng: &mut impl Rng) {
    match (site, node_at(tree, site.path())) {
        (Site::Threshold(_), NodeMut::N(n)) => {
            let NumExpr::Const(c) = *n else { unreachable!() };
            *n = NumExpr::Knob(push(knobs, Knob::Threshold { value: c }));
        }
        (Site::NumSwap(_), NodeMut::N(n)) => {
            let NumExpr::Attr(a) = *n else { unreachable!() };
            *n = NumExpr::AttrKnob(push(knobs, Knob::NumSwap { attr: a }));
        }
        (Site::LitSwap(_), NodeMut::B(b)) => {
            let (attr, negated) = match b {
                BoolExpr::Attr(a) => (*a, false),
                BoolExpr::Not(x) => match **x {
                    BoolExpr::Attr(a) => (a, true),
                    _ => unreachable!(),
                },
                _ => unreachable!(),
            };
            *b = BoolExpr::LitKnob(push(knobs, Knob::LitSwap { attr, negated }));
        }
        (Site::Toggle(_), NodeMut::B(b)) => {
            let id = push(knobs, Knob::Toggle { on: true });
            let old = std::mem::replace(b, BoolExpr::Const(false));
            *b = BoolExpr::Toggle(id, Box::new(old));
        }
        (Site::GrowAnd(_), NodeMut::B(b)) => {
            let t = new_term(true, knobs, space, rng);
            match b {
                BoolExpr::And(xs) => xs.push(t),
                other => {
                    let old = std::mem::replace(other, BoolExpr::Const(false));
                    *other = BoolExpr::And(vec![old, t]);
                }
            }
        }
        (Site::GrowOr(_), NodeMut::B(b)) => {
            let t = new_term(false, knobs, space, rng);
            match b {
                BoolExpr::Or(xs) => xs.push(t),
                other => {
                    let old = std::mem::replace(other, BoolExpr::Const(false));
                    *other = BoolExpr::Or(vec![old, t]);
                }
            }
        }
        _ => unreachable!("site kind does not match node"),
    }
}

/// A toggled clause (AND context) or term (OR context) of one or two cores.
/// The toggle starts on only when the first core is an extreme comparison,
/// which makes the whole clause true (or the term false) on [0, 1] data.
fn new_term(and_ctx: bool, knobs: &mut Vec<Knob>, space: &KnobSpace, rng: &mut impl Rng) -> BoolExpr {
    let (first, neutral) = new_core(and_ctx, knobs, space, rng);
    let body = if rng.gen_bool(0.5) {
        let (second, _) = new_core(!and_ctx, knobs, space, rng);
        if and_ctx {
            BoolExpr::Or(vec![first, second])
        } else {
            BoolExpr::And(vec![first, second])
        }
    } else {
        first
    };
    let id = push(knobs, Knob::Toggle { on: neutral });
    BoolExpr::Toggle(id, Box::new(body))
}

/// A random comparison or boolean literal with fresh knobs. Comparisons start
/// at the threshold extreme where they are constant on [0, 1] data (true in an
/// AND context, false otherwise); the flag reports that neutrality.
fn new_core(and_ctx: bool, knobs: &mut Vec<Knob>, space: &KnobSpace, rng: &mut impl Rng) -> (BoolExpr, bool) {
    let total = space.numeric.len() + space.boolean.len();
    let pick = rng.gen_range(0..total);
    if pick < space.numeric.len() {
        let a = push(knobs, Knob::NumSwap { attr: space.numeric[pick] });
        let upper = rng.gen_bool(0.5);
        // and: x <= 1 or x >= 0 (always true); or: x > 1 or x < 0 (always false)
        let t = push(knobs, Knob::Threshold { value: if upper { 1.0 } else { 0.0 } });
        let (x, c) = (Box::new(NumExpr::AttrKnob(a)), Box::new(NumExpr::Knob(t)));
        let cmp = if upper { BoolExpr::Greater(x, c) } else { BoolExpr::Greater(c, x) };
        let e = if and_ctx { BoolExpr::Not(Box::new(cmp)) } else { cmp };
        (e, true)
    } else {
        let attr = space.boolean[pick - space.numeric.len()];
        let l = push(knobs, Knob::LitSwap { attr, negated: rng.gen_bool(0.5) });
        (BoolExpr::LitKnob(l), false)
    }
}

/// Outcome of a hill-climbing run.
#[derive(Debug, Clone, PartialEq)]
pub struct Climb {
    pub deme: Deme,
    pub evaluations: usize,
    pub budget_exhausted: bool,
}

/// Where a threshold knob sits: compared against `other`, on the left side
/// of GREATER when `knob_left`.
struct ThresholdSite {
    other: NumExpr,
    knob_left: bool,
}

fn find_threshold_site(e: &BoolExpr, id: usize) -> Option<ThresholdSite> {
    match e {
        BoolExpr::Greater(a, b) => match (&**a, &**b) {
            (NumExpr::Knob(i), o) if *i == id => Some(ThresholdSite { other: o.clone(), knob_left: true }),
            (o, NumExpr::Knob(i)) if *i == id => Some(ThresholdSite { other: o.clone(), knob_left: false }),
            _ => None,
        },
        BoolExpr::Not(x) | BoolExpr::Toggle(_, x) => find_threshold_site(x, id),
        BoolExpr::And(xs) | BoolExpr::Or(xs) => xs.iter().find_map(|x| find_threshold_site(x, id)),
        BoolExpr::Xor(a, b) => find_threshold_site(a, id).or_else(|| find_threshold_site(b, id)),
        _ => None,
    }
}

fn lattice(i: i64, step: f64) -> f64 {
    i as f64 * step
}

/// Next threshold value in direction `up` that changes the comparison on at
/// least one row, or a plain lattice step when the context is unknown.
fn next_threshold(t: f64, up: bool, step: f64, site: Option<(&ThresholdSite, &[f64])>) -> Option<f64> {
    let max_i = (1.0 / step).round() as i64;
    let clamp = |i: i64| (0..=max_i).contains(&i).then(|| lattice(i, step));
    let Some((s, vals)) = site else {
        let i = (t / step).round() as i64;
        let i = if lattice(i, step) == t {
            if up { i + 1 } else { i - 1 }
        } else if up {
            (t / step).ceil() as i64
        } else {
            (t / step).floor() as i64
        };
        return clamp(i);
    };
    // smallest lattice index whose value is >= v (strict: > v)
    let ceil_idx = |v: f64, strict: bool| {
        let mut i = (v / step).floor() as i64 - 1;
        while lattice(i, step) < v || (strict && lattice(i, step) == v) {
            i += 1;
        }
        i
    };
    let floor_idx = |v: f64, strict: bool| {
        let mut i = (v / step).ceil() as i64 + 1;
        while lattice(i, step) > v || (strict && lattice(i, step) == v) {
            i -= 1;
        }
        i
    };
    let i = match (s.knob_left, up) {
        // v > t flips to false once t >= v
        (false, true) => vals.iter().copied().filter(|&v| v > t).reduce(f64::min).map(|v| ceil_idx(v, false)),
        // v > t flips to true once t < v
        (false, false) => vals.iter().copied().filter(|&v| v <= t).reduce(f64::max).map(|v| floor_idx(v, true)),
        // t > v flips to true once t > v
        (true, true) => vals.iter().copied().filter(|&v| v >= t).reduce(f64::min).map(|v| ceil_idx(v, true)),
        // t > v flips to false once t <= v
        (true, false) => vals.iter().copied().filter(|&v| v < t).reduce(f64::max).map(|v| floor_idx(v, false)),
    }?;
    clamp(i)
}

/// A move proposal: new settings, their (fitness, accuracy), evaluations spent.
type Proposal = (Vec<Knob>, (f64, f64), usize);

fn propose(
    deme: &Deme,
    idx: usize,
    dir: usize,
    data: &(impl Columns + Sync),
    target: &Bits,
    space: &KnobSpace,
) -> Option<Proposal> {
    let eval = |k: &[Knob]| evaluate(&deme.exemplar, k, data, target, space.lambda);
    match &deme.knobs[idx] {
        Knob::Toggle { on } => {
            let mut k = deme.knobs.clone();
            k[idx] = Knob::Toggle { on: !on };
            let lits = if *on { Vec::new() } else { toggled_literals(&deme.exemplar, idx) };
            if lits.is_empty() || space.boolean.is_empty() {
                let s = eval(&k);
                return Some((k, s, 1));
            }
            // switching a term on also picks its literals
            let choices = 2 * space.boolean.len();
            let combos = choices.pow(lits.len() as u32);
            let mut best: Option<(Vec<Knob>, (f64, f64))> = None;
            for mut c in 0..combos {
                for &l in &lits {
                    k[l] = Knob::LitSwap { attr: space.boolean[(c % choices) / 2], negated: c % 2 == 1 };
                    c /= choices;
                }
                let s = eval(&k);
                if best.as_ref().is_none_or(|b| s.0 > b.1 .0) {
                    best = Some((k.clone(), s));
                }
            }
            best.map(|(k, s)| (k, s, combos))
        }
        Knob::NumSwap { attr } => {
            let a = *space.numeric.get(dir)?;
            if a == *attr {
                return None;
            }
            let mut k = deme.knobs.clone();
            k[idx] = Knob::NumSwap { attr: a };
            let s = eval(&k);
            Some((k, s, 1))
        }
        Knob::LitSwap { attr, negated } => {
            let a = *space.boolean.get(dir / 2)?;
            let neg = dir % 2 == 1;
            if (a, neg) == (*attr, *negated) {
                return None;
            }
            let mut k = deme.knobs.clone();
            k[idx] = Knob::LitSwap { attr: a, negated: neg };
            let s = eval(&k);
            Some((k, s, 1))
        }
        Knob::Threshold { value } => {
            if dir > 1 {
                return None;
            }
            let up = dir == 1;
            let site = find_threshold_site(&deme.exemplar, idx);
            let vals = site.as_ref().map(|s| s.other.values(data, &deme.knobs));
            let ctx = site.as_ref().zip(vals.as_deref());
            let mut k = deme.knobs.clone();
            let mut t = *value;
            let mut spent = 0;
            // walk while the fitness stays level
            loop {
                t = next_threshold(t, up, space.step, ctx)?;
                k[idx] = Knob::Threshold { value: t };
                let s = eval(&k);
                spent += 1;
                if s.0 != deme.fitness {
                    return Some((k, s, spent));
                }
            }
        }
    }
}

/// Literal knobs forming toggle `id`'s body directly or as its junction's children.
fn toggled_literals(e: &BoolExpr, id: usize) -> Vec<usize> {
    match e {
        BoolExpr::Toggle(i, x) if *i == id => {
            let lit = |x: &BoolExpr| match x {
                BoolExpr::LitKnob(l) => Some(*l),
                _ => None,
            };
            match &**x {
                BoolExpr::And(xs) | BoolExpr::Or(xs) => xs.iter().filter_map(lit).collect(),
                other => lit(other).into_iter().collect(),
            }
        }
        BoolExpr::Not(x) | BoolExpr::Toggle(_, x) => toggled_literals(x, id),
        BoolExpr::And(xs) | BoolExpr::Or(xs) => {
            xs.iter().map(|x| toggled_literals(x, id)).find(|v| !v.is_empty()).unwrap_or_default()
        }
        BoolExpr::Xor(a, b) => {
            let v = toggled_literals(a, id);
            if v.is_empty() {
                toggled_literals(b, id)
            } else {
                v
            }
        }
        _ => Vec::new(),
    }
}

fn directions(knob: &Knob, space: &KnobSpace) -> usize {
    match knob {
        Knob::Toggle { .. } => 1,
        Knob::Threshold { .. } => 2,
        Knob::NumSwap { .. } => space.numeric.len(),
        Knob::LitSwap { .. } => 2 * space.boolean.len(),
    }
}

/// Steepest ascent over single-knob moves. Thresholds move to the next
/// lattice value that changes some row, continuing while fitness is level;
/// toggles flip; swaps try every alternative. Stops at a local optimum or
/// when `budget` evaluations have been spent.
pub fn hill_climb(
    deme: &Deme,
    data: &(impl Columns + Sync),
    target: &Bits,
    space: &KnobSpace,
    budget: usize,
) -> Result<Climb, LearnError> {
    if budget < 1 {
        return Err(LearnError::Budget);
    }
    let mut cur = deme.clone();
    let (f, a) = evaluate(&cur.exemplar, &cur.knobs, data, target, space.lambda);
    cur.fitness = f;
    cur.accuracy = a;
    let mut spent = 1;
    let moves: Vec<(usize, usize)> = cur
        .knobs
        .iter()
        .enumerate()
        .flat_map(|(i, k)| (0..directions(k, space)).map(move |d| (i, d)))
        .collect();
    loop {
        let proposals: Vec<Option<Proposal>> =
            moves.par_iter().map(|&(i, d)| propose(&cur, i, d, data, target, space)).collect();
        let mut best: Option<Proposal> = None;
        let mut exhausted = false;
        for p in proposals.into_iter().flatten() {
            if spent + p.2 > budget {
                exhausted = true;
                break;
            }
            spent += p.2;
            if p.1 .0 > best.as_ref().map_or(cur.fitness, |b| b.1 .0) {
                best = Some(p);
            }
        }
        match best {
            Some((k, (f, a), _)) => {
                cur.knobs = k;
                cur.fitness = f;
                cur.accuracy = a;
            }
            None => {
                return Ok(Climb { deme: cur, evaluations: spent, budget_exhausted: exhausted });
            }
        }
        if exhausted {
            return Ok(Climb { deme: cur, evaluations: spent, budget_exhausted: true });
        }
    }
}
