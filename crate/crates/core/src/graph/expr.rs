//! Closed expression algebra for functional parameters.

use std::fmt;

use crate::distributions::{expit, logit};

use super::NodeId;

/// A deterministic function of other nodes' values.
#[derive(Debug, Clone, PartialEq)]
pub enum Expr {
    Const(f64),
    Ref(NodeId),
    Add(Vec<Expr>),
    Sub(Box<Expr>, Box<Expr>),
    Mul(Vec<Expr>),
    Div(Box<Expr>, Box<Expr>),
    Logit(Box<Expr>),
    Expit(Box<Expr>),
    Log(Box<Expr>),
    Exp(Box<Expr>),
    /// `Σ wᵢ vᵢ / Σ wᵢ`.
    Mixture {
        weights: Vec<Expr>,
        values: Vec<Expr>,
    },
    /// `terms[index] / Σ terms`.
    Share {
        index: usize,
        terms: Vec<Expr>,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EvalError {
    DivisionByZero,
    NonFinite,
}

impl Expr {
    pub fn node(id: NodeId) -> Self {
        Expr::Ref(id)
    }

    pub fn constant(v: f64) -> Self {
        Expr::Const(v)
    }

    pub fn sum(terms: Vec<Expr>) -> Self {
        Expr::Add(terms)
    }

    pub fn product(terms: Vec<Expr>) -> Self {
        Expr::Mul(terms)
    }

    pub fn sub(a: Expr, b: Expr) -> Self {
        Expr::Sub(Box::new(a), Box::new(b))
    }

    pub fn div(a: Expr, b: Expr) -> Self {
        Expr::Div(Box::new(a), Box::new(b))
    }

    /// `1 - e`.
    pub fn complement(e: Expr) -> Self {
        Expr::sub(Expr::Const(1.0), e)
    }

    pub fn logit(e: Expr) -> Self {
        Expr::Logit(Box::new(e))
    }

    pub fn expit(e: Expr) -> Self {
        Expr::Expit(Box::new(e))
    }

    pub fn log(e: Expr) -> Self {
        Expr::Log(Box::new(e))
    }

    pub fn exp(e: Expr) -> Self {
        Expr::Exp(Box::new(e))
    }

    /// Evaluates against a full value vector indexed by node id. Only the
    /// final value is checked for finiteness, so `expit(logit(1))` is fine.
    pub fn eval(&self, values: &[f64]) -> Result<f64, EvalError> {
        let v = self.eval_inner(values)?;
        if v.is_finite() {
            Ok(v)
        } else {
            Err(EvalError::NonFinite)
        }
    }

    fn eval_inner(&self, values: &[f64]) -> Result<f64, EvalError> {
        Ok(match self {
            Expr::Const(c) => *c,
            Expr::Ref(id) => values[id.index()],
            Expr::Add(terms) => {
                let mut acc = 0.0;
                for t in terms {
                    acc += t.eval_inner(values)?;
                }
                acc
            }
            Expr::Sub(a, b) => a.eval_inner(values)? - b.eval_inner(values)?,
            Expr::Mul(terms) => {
                let mut acc = 1.0;
                for t in terms {
                    acc *= t.eval_inner(values)?;
                }
                acc
            }
            Expr::Div(a, b) => {
                let den = b.eval_inner(values)?;
                if den == 0.0 {
                    return Err(EvalError::DivisionByZero);
                }
                a.eval_inner(values)? / den
            }
            Expr::Logit(e) => logit(e.eval_inner(values)?),
            Expr::Expit(e) => expit(e.eval_inner(values)?),
            Expr::Log(e) => e.eval_inner(values)?.ln(),
            Expr::Exp(e) => e.eval_inner(values)?.exp(),
            Expr::Mixture {
                weights,
                values: parts,
            } => {
                let mut num = 0.0;
                let mut den = 0.0;
                for (w, v) in weights.iter().zip(parts) {
                    let w = w.eval_inner(values)?;
                    num += w * v.eval_inner(values)?;
                    den += w;
                }
                if den == 0.0 {
                    return Err(EvalError::DivisionByZero);
                }
                num / den
            }
            Expr::Share { index, terms } => {
                let mut den = 0.0;
                let mut own = 0.0;
                for (i, t) in terms.iter().enumerate() {
                    let v = t.eval_inner(values)?;
                    if i == *index {
                        own = v;
                    }
                    den += v;
                }
                if den == 0.0 {
                    return Err(EvalError::DivisionByZero);
                }
                own / den
            }
        })
    }

    /// Every node id referenced anywhere in the tree, in first-seen order.
    pub fn references(&self) -> Vec<NodeId> {
        let mut out = Vec::new();
        self.collect_refs(&mut out);
        out
    }

    fn collect_refs(&self, out: &mut Vec<NodeId>) {
        match self {
            Expr::Const(_) => {}
            Expr::Ref(id) => {
                if !out.contains(id) {
                    out.push(*id);
                }
            }
            Expr::Add(ts) | Expr::Mul(ts) | Expr::Share { terms: ts, .. } => {
                ts.iter().for_each(|t| t.collect_refs(out))
            }
            Expr::Sub(a, b) | Expr::Div(a, b) => {
                a.collect_refs(out);
                b.collect_refs(out);
            }
            Expr::Logit(e) | Expr::Expit(e) | Expr::Log(e) | Expr::Exp(e) => e.collect_refs(out),
            Expr::Mixture { weights, values } => weights
                .iter()
                .chain(values)
                .for_each(|t| t.collect_refs(out)),
        }
    }

    /// Renders in prefix notation, resolving node ids through `label`.
    pub fn to_prefix<'a>(&self, label: &dyn Fn(NodeId) -> &'a str) -> String {
        let mut out = String::new();
        self.write_prefix(label, &mut out);
        out
    }

    fn write_prefix<'a>(&self, label: &dyn Fn(NodeId) -> &'a str, out: &mut String) {
        use fmt::Write;
        let list = |name: &str, items: &[Expr], out: &mut String| {
            out.push('(');
            out.push_str(name);
            for it in items {
                out.push(' ');
                it.write_prefix(label, out);
            }
            out.push(')');
        };
        match self {
            Expr::Const(c) => {
                let _ = write!(out, "{c:?}");
            }
            Expr::Ref(id) => out.push_str(label(*id)),
            Expr::Add(ts) => list("add", ts, out),
            Expr::Mul(ts) => list("mul", ts, out),
            Expr::Sub(a, b) => list("sub", &[(**a).clone(), (**b).clone()], out),
            Expr::Div(a, b) => list("div", &[(**a).clone(), (**b).clone()], out),
            Expr::Logit(e) => list("logit", std::slice::from_ref(e), out),
            Expr::Expit(e) => list("expit", std::slice::from_ref(e), out),
            Expr::Log(e) => list("log", std::slice::from_ref(e), out),
            Expr::Exp(e) => list("exp", std::slice::from_ref(e), out),
            Expr::Mixture { weights, values } => {
                out.push_str("(mixture ");
                list("weights", weights, out);
                out.push(' ');
                list("values", values, out);
                out.push(')');
            }
            Expr::Share { index, terms } => {
                let _ = write!(out, "(share {index}");
                for t in terms {
                    out.push(' ');
                    t.write_prefix(label, out);
                }
                out.push(')');
            }
        }
    }

    /// Parses prefix notation; symbols are resolved through `resolve`.
    pub fn parse_prefix(
        text: &str,
        resolve: &dyn Fn(&str) -> Option<NodeId>,
    ) -> Result<Expr, String> {
        let tokens = tokenize(text);
        let mut pos = 0;
        let expr = parse_tokens(&tokens, &mut pos, resolve)?;
        if pos != tokens.len() {
            return Err(format!("trailing input after expression in `{text}`"));
        }
        Ok(expr)
    }
}

fn tokenize(text: &str) -> Vec<&str> {
    let mut out = Vec::new();
    let mut start = None;
    for (i, ch) in text.char_indices() {
        match ch {
            '(' | ')' => {
                if let Some(s) = start.take() {
                    out.push(&text[s..i]);
                }
                out.push(&text[i..i + 1]);
            }
            c if c.is_whitespace() => {
                if let Some(s) = start.take() {
                    out.push(&text[s..i]);
                }
            }
            _ => {
                if start.is_none() {
                    start = Some(i);
                }
            }
        }
    }
    if let Some(s) = start {
        out.push(&text[s..]);
    }
    out
}

fn parse_tokens(
    tokens: &[&str],
    pos: &mut usize,
    resolve: &dyn Fn(&str) -> Option<NodeId>,
) -> Result<Expr, String> {
    let tok = *tokens.get(*pos).ok_or("unexpected end of expression")?;
    *pos += 1;
    if tok == ")" {
        return Err("unexpected `)`".into());
    }
    if tok != "(" {
        if let Ok(v) = tok.parse::<f64>() {
            return Ok(Expr::Const(v));
        }
        return resolve(tok)
            .map(Expr::Ref)
            .ok_or_else(|| format!("unknown node `{tok}`"));
    }
    let op = *tokens.get(*pos).ok_or("unexpected end after `(`")?;
    *pos += 1;
    let args = |pos: &mut usize| -> Result<Vec<Expr>, String> {
        let mut items = Vec::new();
        loop {
            match tokens.get(*pos) {
                Some(&")") => {
                    *pos += 1;
                    return Ok(items);
                }
                Some(_) => items.push(parse_tokens(tokens, pos, resolve)?),
                None => return Err("unclosed `(`".into()),
            }
        }
    };
    let arity = |name: &str, mut items: Vec<Expr>, n: usize| -> Result<Vec<Expr>, String> {
        if items.len() != n {
            return Err(format!(
                "`{name}` takes {n} argument(s), got {}",
                items.len()
            ));
        }
        items.truncate(n);
        Ok(items)
    };
    let unary = |name: &str, items: Vec<Expr>| -> Result<Box<Expr>, String> {
        Ok(Box::new(arity(name, items, 1)?.remove(0)))
    };
    match op {
        "add" => Ok(Expr::Add(args(pos)?)),
        "mul" => Ok(Expr::Mul(args(pos)?)),
        "sub" | "div" => {
            let mut it = arity(op, args(pos)?, 2)?.into_iter();
            let a = Box::new(it.next().unwrap());
            let b = Box::new(it.next().unwrap());
            Ok(if op == "sub" {
                Expr::Sub(a, b)
            } else {
                Expr::Div(a, b)
            })
        }
        "logit" => Ok(Expr::Logit(unary(op, args(pos)?)?)),
        "expit" => Ok(Expr::Expit(unary(op, args(pos)?)?)),
        "log" => Ok(Expr::Log(unary(op, args(pos)?)?)),
        "exp" => Ok(Expr::Exp(unary(op, args(pos)?)?)),
        "share" => {
            let index: usize = tokens
                .get(*pos)
                .and_then(|t| t.parse().ok())
                .ok_or("`share` expects an integer index")?;
            *pos += 1;
            let terms = args(pos)?;
            if index >= terms.len() {
                return Err(format!("share index {index} out of range"));
            }
            Ok(Expr::Share { index, terms })
        }
        "mixture" => {
            let section = |name: &str, pos: &mut usize| -> Result<Vec<Expr>, String> {
                if tokens.get(*pos) != Some(&"(") || tokens.get(*pos + 1) != Some(&name) {
                    return Err(format!("`mixture` expects a `({name} ...)` list"));
                }
                *pos += 2;
                args(pos)
            };
            let weights = section("weights", pos)?;
            let values = section("values", pos)?;
            if tokens.get(*pos) != Some(&")") {
                return Err("`mixture` takes exactly two lists".into());
            }
            *pos += 1;
            if weights.len() != values.len() || weights.is_empty() {
                return Err("`mixture` lists must be non-empty and equally long".into());
            }
            Ok(Expr::Mixture { weights, values })
        }
        other => Err(format!("unknown operator `{other}`")),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn id(i: u32) -> NodeId {
        NodeId(i)
    }

    #[test]
    fn arithmetic() {
        let values = [1.0, 0.1, 0.0];
        // rho * pi * (1 - delta)
        let e = Expr::product(vec![
            Expr::node(id(0)),
            Expr::node(id(1)),
            Expr::complement(Expr::node(id(2))),
        ]);
        assert_eq!(e.eval(&values).unwrap(), 0.1);
        assert_eq!(
            Expr::div(Expr::Const(1.0), Expr::node(id(2))).eval(&values),
            Err(EvalError::DivisionByZero)
        );
        assert_eq!(
            Expr::log(Expr::node(id(2))).eval(&values),
            Err(EvalError::NonFinite)
        );
        assert_eq!(
            Expr::expit(Expr::logit(Expr::Const(1.0))).eval(&values),
            Ok(1.0)
        );
    }

    #[test]
    fn share_and_mixture() {
        let values = [2.0, 3.0, 5.0];
        let terms: Vec<Expr> = (0..3).map(|i| Expr::node(id(i))).collect();
        let shares: Vec<f64> = (0..3)
            .map(|index| {
                Expr::Share {
                    index,
                    terms: terms.clone(),
                }
                .eval(&values)
                .unwrap()
            })
            .collect();
        assert_eq!(shares, vec![0.2, 0.3, 0.5]);
        let mix = Expr::Mixture {
            weights: vec![Expr::Const(1.0), Expr::Const(3.0)],
            values: vec![Expr::node(id(0)), Expr::node(id(2))],
        };
        assert_eq!(mix.eval(&values).unwrap(), (2.0 + 15.0) / 4.0);
    }

    #[test]
    fn prefix_round_trip() {
        let names = ["rho", "pi", "delta"];
        let label = |i: NodeId| names[i.index()];
        let resolve = |s: &str| names.iter().position(|n| *n == s).map(|i| NodeId(i as u32));
        let e = Expr::Mixture {
            weights: vec![
                Expr::product(vec![Expr::Const(2.0), Expr::node(id(0))]),
                Expr::Const(0.5),
            ],
            values: vec![
                Expr::expit(Expr::sum(vec![
                    Expr::Const(-1e-7),
                    Expr::logit(Expr::node(id(1))),
                ])),
                Expr::Share {
                    index: 1,
                    terms: vec![Expr::node(id(1)), Expr::exp(Expr::node(id(2)))],
                },
            ],
        };
        let text = e.to_prefix(&label);
        assert_eq!(
            text,
            "(mixture (weights (mul 2.0 rho) 0.5) (values (expit (add -1e-7 (logit pi))) (share 1 pi (exp delta))))"
        );
        assert_eq!(Expr::parse_prefix(&text, &resolve).unwrap(), e);
    }

    #[test]
    fn parse_errors() {
        let resolve = |s: &str| (s == "a").then_some(NodeId(0));
        assert!(Expr::parse_prefix("(add a b)", &resolve)
            .unwrap_err()
            .contains("unknown node"));
        assert!(Expr::parse_prefix("(sub a)", &resolve).is_err());
        assert!(Expr::parse_prefix("(add a", &resolve).is_err());
        assert!(Expr::parse_prefix("(frob a)", &resolve).is_err());
        assert!(Expr::parse_prefix("a a", &resolve).is_err());
    }
}
