//! Source terms given as expressions in `x`, `y`, `z`.

use std::cell::RefCell;
use std::collections::HashMap;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;

use crate::{CliError, Result};

type Bound = Box<dyn Fn(f64, f64, f64) -> f64>;

thread_local! {
    // bound evaluators are not Send, so each thread binds its own copy
    static BOUND: RefCell<HashMap<usize, Bound>> = RefCell::new(HashMap::new());
}

static NEXT_ID: AtomicUsize = AtomicUsize::new(0);

/// A parsed expression, shareable across threads.
#[derive(Clone, Debug)]
pub struct Field {
    text: Arc<str>,
    expr: meval::Expr,
    id: usize,
}

fn bind(expr: &meval::Expr) -> std::result::Result<Bound, meval::Error> {
    let f = expr.clone().bind3("x", "y", "z")?;
    Ok(Box::new(f))
}

impl Field {
    pub fn parse(text: &str) -> Result<Self> {
        let err = |e: meval::Error| CliError::Expr { text: text.to_string(), reason: e.to_string() };
        let expr: meval::Expr = text.parse().map_err(err)?;
        bind(&expr).map(drop).map_err(err)?;
        Ok(Self { text: text.into(), expr, id: NEXT_ID.fetch_add(1, Ordering::Relaxed) })
    }

    pub fn text(&self) -> &str {
        &self.text
    }

    pub fn eval(&self, x: f64, y: f64, z: f64) -> f64 {
        BOUND.with(|b| {
            let mut b = b.borrow_mut();
            let f = b.entry(self.id).or_insert_with(|| bind(&self.expr).expect("validated at parse time"));
            f(x, y, z)
        })
    }

    pub fn into_fn(self) -> impl Fn(f64, f64, f64) -> f64 + Send + Sync + 'static {
        move |x, y, z| self.eval(x, y, z)
    }
}

/// Parses an `eps` list: comma-separated values, each a decimal or `1/n`,
/// or a range `a..b` that halves from `a` down to `b`.
pub fn parse_eps(s: &str) -> Result<Vec<f64>> {
    let bad = || CliError::Config(format!("cannot parse eps list `{s}`"));
    let one = |t: &str| -> Result<f64> {
        let t = t.trim();
        let v = match t.split_once('/') {
            Some((a, b)) => a.trim().parse::<f64>().map_err(|_| bad())? / b.trim().parse::<f64>().map_err(|_| bad())?,
            None => t.parse::<f64>().map_err(|_| bad())?,
        };
        if v > 0.0 && v < 1.0 {
            Ok(v)
        } else {
            Err(CliError::Config(format!("eps = {v} outside (0, 1)")))
        }
    };
    let mut out = Vec::new();
    for part in s.split(',') {
        if let Some((a, b)) = part.split_once("..") {
            let (mut e, stop) = (one(a)?, one(b)?);
            if stop > e {
                return Err(bad());
            }
            while e >= stop * (1.0 - 1e-12) {
                out.push(e);
                e /= 2.0;
            }
        } else {
            out.push(one(part)?);
        }
    }
    if out.is_empty() {
        return Err(bad());
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn evaluates_across_threads() {
        let f = Field::parse("sin(pi*x)*y + z^2").unwrap();
        let g = f.clone().into_fn();
        let want = (std::f64::consts::PI * 0.25).sin() * 0.5 + 0.01;
        let got = std::thread::spawn(move || g(0.25, 0.5, 0.1)).join().unwrap();
        assert!((got - want).abs() < 1e-14);
        assert!((f.eval(0.25, 0.5, 0.1) - want).abs() < 1e-14);
    }

    #[test]
    fn rejects_unknown_variables() {
        assert!(Field::parse("x + w").is_err());
        assert!(Field::parse("x +").is_err());
    }

    #[test]
    fn eps_lists() {
        assert_eq!(parse_eps("1/8..1/64").unwrap(), vec![0.125, 0.0625, 0.03125, 0.015625]);
        assert_eq!(parse_eps("0.5, 1/4").unwrap(), vec![0.5, 0.25]);
        assert!(parse_eps("2").is_err());
        assert!(parse_eps("1/64..1/8").is_err());
    }
}
