//! The system description language.
//!
//! ```text
//! system <name>
//! base [x1, x2]
//! fiber [e1, e2]
//! anchor { e1 -> (1, 0); e2 -> (0, 1) }     # or: anchor zero
//! bracket { [e1,e2] = x1*e2 }
//! params { k = 1.0 }
//! lagrangian = 0.5*(e1^2 + e2^2) - k*x1^2
//! vakonomic { e2 = x1*e1 }
//! ```
//!
//! Inside `lagrangian` and `vakonomic` a fiber name stands for the
//! corresponding velocity component.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt::Write as _;

use super::lexer::{tokenize, Tok, Token};
use super::parser::{describe, Cursor};
use super::{eval, BinOp, Bindings, Expr, Func, ParseError};

/// Affine or nonlinear velocity constraints `y^α = Ψ^α(x, y^a)`.
#[derive(Clone, Debug, PartialEq)]
pub struct VakonomicBlock {
    /// Constrained fiber indices, in declaration order.
    pub constrained: Vec<usize>,
    pub psi: Vec<Expr>,
}

impl VakonomicBlock {
    /// Fiber indices left free, in fiber order.
    pub fn free(&self, n: usize) -> Vec<usize> {
        (0..n).filter(|a| !self.constrained.contains(a)).collect()
    }
}

/// Parsed description of a Lie algebroid chart with a Lagrangian.
#[derive(Clone, Debug, PartialEq)]
pub struct SystemSpec {
    pub name: String,
    pub base: Vec<String>,
    pub fiber: Vec<String>,
    /// `anchor[A][i]`: component `i` of the anchor of fiber element `A`.
    pub anchor: Vec<Vec<Expr>>,
    /// Structure functions for `A < B`: `[e_A, e_B] = Σ_C coeff[C] e_C`.
    pub bracket: BTreeMap<(usize, usize), BTreeMap<usize, Expr>>,
    pub params: Bindings,
    pub lagrangian: Expr,
    pub vakonomic: Option<VakonomicBlock>,
}

/// Name of the momentum coordinate dual to a fiber element: `e3` gives
/// `p3`, anything else gets a `p_` prefix.
pub fn momentum_name(fiber: &str) -> String {
    match fiber.strip_prefix('e') {
        Some(rest) if !rest.is_empty() => format!("p{rest}"),
        _ => format!("p_{fiber}"),
    }
}

impl SystemSpec {
    pub fn m(&self) -> usize {
        self.base.len()
    }

    pub fn n(&self) -> usize {
        self.fiber.len()
    }

    pub fn momenta(&self) -> Vec<String> {
        self.fiber.iter().map(|f| momentum_name(f)).collect()
    }

    /// Coefficient of `e_C` in `[e_A, e_B]`, or `None` when it is zero.
    pub fn structure(&self, a: usize, b: usize, c: usize) -> Option<Expr> {
        if a == b {
            return None;
        }
        let (lo, hi, sign) = if a < b { (a, b, false) } else { (b, a, true) };
        let e = self.bracket.get(&(lo, hi))?.get(&c)?.clone();
        Some(if sign { e.negated() } else { e })
    }

    /// Copy with some parameter values replaced.
    pub fn with_params(&self, overrides: &Bindings) -> Result<SystemSpec, String> {
        let mut s = self.clone();
        for (k, v) in overrides {
            match s.params.get_mut(k) {
                Some(slot) => *slot = *v,
                None => return Err(format!("unknown parameter '{k}'")),
            }
        }
        Ok(s)
    }

    /// Renders the system in the description language.
    pub fn to_dsl(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "system {}", self.name);
        let _ = writeln!(out, "base [{}]", self.base.join(", "));
        let _ = writeln!(out, "fiber [{}]", self.fiber.join(", "));
        if self.anchor.iter().flatten().all(Expr::is_zero) {
            out.push_str("anchor zero\n");
        } else {
            out.push_str("anchor {\n");
            for (a, comps) in self.anchor.iter().enumerate() {
                let parts: Vec<String> = comps.iter().map(|e| e.to_string()).collect();
                let _ = writeln!(out, "  {} -> ({})", self.fiber[a], parts.join(", "));
            }
            out.push_str("}\n");
        }
        out.push_str("bracket {\n");
        for ((a, b), terms) in &self.bracket {
            let parts: Vec<String> = terms
                .iter()
                .map(|(c, coeff)| {
                    let name = &self.fiber[*c];
                    match coeff {
                        Expr::Const(v) if *v == 1.0 => name.clone(),
                        Expr::Const(v) if *v == -1.0 => format!("-{name}"),
                        _ => Expr::bin(BinOp::Mul, coeff.clone(), Expr::var(name)).to_string(),
                    }
                })
                .collect();
            let _ = writeln!(out, "  [{},{}] = {}", self.fiber[*a], self.fiber[*b], parts.join(" + "));
        }
        out.push_str("}\n");
        if !self.params.is_empty() {
            let parts: Vec<String> = self.params.iter().map(|(k, v)| format!("{k} = {v:?}")).collect();
            let _ = writeln!(out, "params {{ {} }}", parts.join(", "));
        }
        let _ = writeln!(out, "lagrangian = {}", self.lagrangian);
        if let Some(v) = &self.vakonomic {
            out.push_str("vakonomic {\n");
            for (alpha, psi) in v.constrained.iter().zip(&v.psi) {
                let _ = writeln!(out, "  {} = {}", self.fiber[*alpha], psi);
            }
            out.push_str("}\n");
        }
        out
    }
}

/// An expression together with the tokens it was parsed from.
struct Located {
    expr: Expr,
    toks: Vec<Token>,
}

#[derive(Default)]
struct Raw {
    name: Option<String>,
    base: Option<(Vec<(String, Token)>, Token)>,
    fiber: Option<(Vec<(String, Token)>, Token)>,
    anchor: Option<(Option<Vec<((String, Token), Vec<Located>)>>, Token)>,
    bracket: Vec<((String, Token), (String, Token), Located)>,
    params: Vec<((String, Token), Located)>,
    lagrangian: Option<Located>,
    vakonomic: Option<(Vec<((String, Token), Located)>, Token)>,
}

fn located(c: &mut Cursor) -> Result<Located, ParseError> {
    let from = c.pos();
    let expr = c.expr()?;
    let toks = c.slice(from, c.pos()).to_vec();
    Ok(Located { expr, toks })
}

fn ident_list(c: &mut Cursor) -> Result<Vec<(String, Token)>, ParseError> {
    c.expect_sym('[')?;
    c.enter();
    let mut out = Vec::new();
    if !c.at_sym(']') {
        loop {
            out.push(c.expect_ident()?);
            if !c.eat_sym(',') {
                break;
            }
        }
    }
    c.leave();
    c.expect_sym(']')?;
    Ok(out)
}

/// Skips entry separators inside a braced block; returns true at `}`.
fn block_sep(c: &mut Cursor) -> bool {
    loop {
        c.skip_newlines();
        if !(c.eat_sym(';') || c.eat_sym(',')) {
            break;
        }
    }
    c.eat_sym('}')
}

fn end_of_entry(c: &mut Cursor) -> Result<(), ParseError> {
    let t = c.peek().clone();
    match t.tok {
        Tok::Newline | Tok::Sym(';') | Tok::Sym(',') | Tok::Sym('}') => Ok(()),
        ref other => Err(ParseError::syntax(t.line, t.col, format!("unexpected {}", describe(other)))),
    }
}

fn parse_raw(src: &str) -> Result<Raw, ParseError> {
    let mut c = Cursor::new(tokenize(src)?);
    let mut raw = Raw::default();
    loop {
        c.skip_newlines();
        let t = c.peek().clone();
        let kw = match &t.tok {
            Tok::Eof => break,
            Tok::Ident(s) => s.clone(),
            other => return Err(ParseError::syntax(t.line, t.col, format!("expected a statement, found {}", describe(other)))),
        };
        c.next();
        let dup = |present: bool| -> Result<(), ParseError> {
            if present {
                Err(ParseError::syntax(t.line, t.col, format!("'{kw}' given twice")))
            } else {
                Ok(())
            }
        };
        match kw.as_str() {
            "system" => {
                dup(raw.name.is_some())?;
                raw.name = Some(c.expect_ident()?.0);
            }
            "base" => {
                dup(raw.base.is_some())?;
                raw.base = Some((ident_list(&mut c)?, t.clone()));
            }
            "fiber" => {
                dup(raw.fiber.is_some())?;
                raw.fiber = Some((ident_list(&mut c)?, t.clone()));
            }
            "anchor" => {
                dup(raw.anchor.is_some())?;
                if let Tok::Ident(z) = &c.peek().tok {
                    if z == "zero" {
                        c.next();
                        raw.anchor = Some((None, t.clone()));
                        continue;
                    }
                }
                c.expect_sym('{')?;
                let mut entries = Vec::new();
                while !block_sep(&mut c) {
                    let id = c.expect_ident()?;
                    let arrow = c.next();
                    if arrow.tok != Tok::Arrow {
                        return Err(ParseError::syntax(arrow.line, arrow.col, "expected '->'"));
                    }
                    c.expect_sym('(')?;
                    c.enter();
                    let mut comps = Vec::new();
                    if !c.at_sym(')') {
                        loop {
                            comps.push(located(&mut c)?);
                            if !c.eat_sym(',') {
                                break;
                            }
                        }
                    }
                    c.leave();
                    c.expect_sym(')')?;
                    end_of_entry(&mut c)?;
                    entries.push((id, comps));
                }
                raw.anchor = Some((Some(entries), t.clone()));
            }
            "bracket" => {
                c.expect_sym('{')?;
                while !block_sep(&mut c) {
                    c.expect_sym('[')?;
                    let a = c.expect_ident()?;
                    c.expect_sym(',')?;
                    let b = c.expect_ident()?;
                    c.expect_sym(']')?;
                    c.expect_sym('=')?;
                    let rhs = located(&mut c)?;
                    end_of_entry(&mut c)?;
                    raw.bracket.push((a, b, rhs));
                }
            }
            "params" => {
                c.expect_sym('{')?;
                while !block_sep(&mut c) {
                    let id = c.expect_ident()?;
                    c.expect_sym('=')?;
                    let v = located(&mut c)?;
                    end_of_entry(&mut c)?;
                    raw.params.push((id, v));
                }
            }
            "lagrangian" => {
                dup(raw.lagrangian.is_some())?;
                c.expect_sym('=')?;
                raw.lagrangian = Some(located(&mut c)?);
            }
            "vakonomic" => {
                dup(raw.vakonomic.is_some())?;
                c.expect_sym('{')?;
                let mut entries = Vec::new();
                while !block_sep(&mut c) {
                    let id = c.expect_ident()?;
                    c.expect_sym('=')?;
                    let v = located(&mut c)?;
                    end_of_entry(&mut c)?;
                    entries.push((id, v));
                }
                raw.vakonomic = Some((entries, t.clone()));
            }
            _ => return Err(ParseError::syntax(t.line, t.col, format!("unknown statement '{kw}'"))),
        }
        let end = c.peek().clone();
        match end.tok {
            Tok::Newline | Tok::Eof => {}
            ref other => {
                return Err(ParseError::syntax(end.line, end.col, format!("unexpected {} after statement", describe(other))));
            }
        }
    }
    Ok(raw)
}

/// Reports the first identifier of `loc` that is not in `scope`.
fn check_scope(loc: &Located, scope: &BTreeSet<&str>) -> Result<(), ParseError> {
    for (k, t) in loc.toks.iter().enumerate() {
        if let Tok::Ident(name) = &t.tok {
            let is_call = matches!(loc.toks.get(k + 1), Some(Token { tok: Tok::Sym('('), .. })) && Func::from_name(name).is_some();
            if !is_call && !scope.contains(name.as_str()) {
                return Err(ParseError::Undeclared { name: name.clone(), line: t.line, col: t.col });
            }
        }
    }
    Ok(())
}

fn index_of(names: &[String], id: &(String, Token)) -> Result<usize, ParseError> {
    names
        .iter()
        .position(|n| n == &id.0)
        .ok_or_else(|| ParseError::Undeclared { name: id.0.clone(), line: id.1.line, col: id.1.col })
}

/// Splits a bracket right-hand side into coefficients of fiber elements.
fn linear_terms(e: &Expr, fiber: &[String], neg: bool, out: &mut BTreeMap<usize, Expr>) -> Result<(), String> {
    let fiber_index = |e: &Expr| match e {
        Expr::Var(v) => fiber.iter().position(|f| f == v),
        _ => None,
    };
    let mut push = |c: usize, coeff: Expr| {
        let coeff = if neg { coeff.negated() } else { coeff };
        let merged = match out.remove(&c) {
            Some(old) => Expr::bin(BinOp::Add, old, coeff),
            None => coeff,
        };
        out.insert(c, merged);
    };
    let mentions_fiber = |e: &Expr| e.variables().iter().any(|v| fiber.contains(v));
    match e {
        Expr::Bin(BinOp::Add, a, b) => {
            linear_terms(a, fiber, neg, out)?;
            linear_terms(b, fiber, neg, out)
        }
        Expr::Bin(BinOp::Sub, a, b) => {
            linear_terms(a, fiber, neg, out)?;
            linear_terms(b, fiber, !neg, out)
        }
        Expr::Neg(a) => linear_terms(a, fiber, !neg, out),
        Expr::Const(c) if *c == 0.0 => Ok(()),
        Expr::Var(_) if fiber_index(e).is_some() => {
            push(fiber_index(e).unwrap(), Expr::Const(1.0));
            Ok(())
        }
        Expr::Bin(BinOp::Mul, a, b) if fiber_index(b).is_some() && !mentions_fiber(a) => {
            push(fiber_index(b).unwrap(), (**a).clone());
            Ok(())
        }
        Expr::Bin(BinOp::Mul, a, b) if fiber_index(a).is_some() && !mentions_fiber(b) => {
            push(fiber_index(a).unwrap(), (**b).clone());
            Ok(())
        }
        _ => Err(format!("bracket term '{e}' is not of the form coefficient*element")),
    }
}

/// Parses and validates a system description.
pub fn parse_system(src: &str) -> Result<SystemSpec, ParseError> {
    let raw = parse_raw(src)?;
    let missing = |what: &str| ParseError::syntax(1, 1, format!("missing '{what}' statement"));
    let name = raw.name.ok_or_else(|| missing("system"))?;
    let (base_ids, _) = raw.base.ok_or_else(|| missing("base"))?;
    let (fiber_ids, fiber_tok) = raw.fiber.ok_or_else(|| missing("fiber"))?;
    if fiber_ids.is_empty() {
        return Err(ParseError::DimensionMismatch { line: fiber_tok.line, msg: "fiber must be non-empty".into() });
    }

    // Parameters first: they can be referenced everywhere else.
    let mut params = Bindings::new();
    let mut seen: BTreeSet<String> = BTreeSet::new();
    let mut declare = |id: &(String, Token)| -> Result<(), ParseError> {
        if !seen.insert(id.0.clone()) || Func::from_name(&id.0).is_some() {
            return Err(ParseError::Duplicate { name: id.0.clone(), line: id.1.line, msg: "identifier declared twice or reserved".into() });
        }
        Ok(())
    };
    for id in base_ids.iter().chain(&fiber_ids) {
        declare(id)?;
    }
    for (id, v) in &raw.params {
        declare(id)?;
        check_scope(v, &BTreeSet::new())?;
        let value = eval(&v.expr, &Bindings::new()).map_err(|e| ParseError::syntax(id.1.line, id.1.col, e.to_string()))?;
        params.insert(id.0.clone(), value);
    }
    let base: Vec<String> = base_ids.iter().map(|p| p.0.clone()).collect();
    let fiber: Vec<String> = fiber_ids.iter().map(|p| p.0.clone()).collect();
    let (m, n) = (base.len(), fiber.len());

    let mut base_scope: BTreeSet<&str> = base.iter().map(String::as_str).collect();
    base_scope.extend(params.keys().map(String::as_str));
    let mut full_scope = base_scope.clone();
    full_scope.extend(fiber.iter().map(String::as_str));

    let mut anchor = vec![vec![Expr::Const(0.0); m]; n];
    match raw.anchor {
        None => return Err(missing("anchor")),
        Some((None, _)) => {}
        Some((Some(entries), tok)) => {
            let mut given = vec![false; n];
            for (id, comps) in entries {
                let a = index_of(&fiber, &id)?;
                if given[a] {
                    return Err(ParseError::Duplicate { name: id.0.clone(), line: id.1.line, msg: "anchor given twice".into() });
                }
                given[a] = true;
                if comps.len() != m {
                    return Err(ParseError::DimensionMismatch {
                        line: id.1.line,
                        msg: format!("anchor of '{}' has {} components, base has {m}", id.0, comps.len()),
                    });
                }
                for (i, loc) in comps.iter().enumerate() {
                    check_scope(loc, &base_scope)?;
                    anchor[a][i] = loc.expr.clone();
                }
            }
            if let Some(a) = given.iter().position(|g| !g) {
                return Err(ParseError::DimensionMismatch { line: tok.line, msg: format!("anchor of '{}' is missing", fiber[a]) });
            }
        }
    }

    let mut bracket: BTreeMap<(usize, usize), BTreeMap<usize, Expr>> = BTreeMap::new();
    for (ida, idb, rhs) in &raw.bracket {
        let (a, b) = (index_of(&fiber, ida)?, index_of(&fiber, idb)?);
        if a == b {
            return Err(ParseError::syntax(ida.1.line, ida.1.col, "bracket of an element with itself is zero"));
        }
        check_scope(rhs, &full_scope)?;
        let mut terms = BTreeMap::new();
        linear_terms(&rhs.expr, &fiber, a > b, &mut terms).map_err(|msg| ParseError::syntax(ida.1.line, ida.1.col, msg))?;
        let key = (a.min(b), a.max(b));
        if bracket.contains_key(&key) {
            return Err(ParseError::Duplicate { name: format!("[{},{}]", ida.0, idb.0), line: ida.1.line, msg: "bracket given twice".into() });
        }
        if !terms.is_empty() {
            bracket.insert(key, terms);
        }
    }

    let lag = raw.lagrangian.ok_or_else(|| missing("lagrangian"))?;
    check_scope(&lag, &full_scope)?;

    let vakonomic = match raw.vakonomic {
        None => None,
        Some((entries, _)) => {
            let mut constrained = Vec::new();
            for (id, _) in &entries {
                let a = index_of(&fiber, id)?;
                if constrained.contains(&a) {
                    return Err(ParseError::Duplicate { name: id.0.clone(), line: id.1.line, msg: "index appears twice in the vakonomic split".into() });
                }
                constrained.push(a);
            }
            let mut scope = base_scope.clone();
            for (a, f) in fiber.iter().enumerate() {
                if !constrained.contains(&a) {
                    scope.insert(f.as_str());
                }
            }
            let mut psi = Vec::new();
            for (_, loc) in &entries {
                check_scope(loc, &scope)?;
                psi.push(loc.expr.clone());
            }
            Some(VakonomicBlock { constrained, psi })
        }
    };

    Ok(SystemSpec { name, base, fiber, anchor, bracket, params, lagrangian: lag.expr, vakonomic })
}

impl SystemSpec {
    /// Lagrangian with constrained velocities replaced by `Ψ`.
    pub fn restricted_lagrangian(&self) -> Expr {
        match &self.vakonomic {
            None => self.lagrangian.clone(),
            Some(v) => {
                let map: HashMap<String, Expr> =
                    v.constrained.iter().zip(&v.psi).map(|(a, p)| (self.fiber[*a].clone(), p.clone())).collect();
                self.lagrangian.substitute(&map)
            }
        }
    }
}
