//! Line-oriented loss cases for cross-implementation diffing.
//!
//! Grammar, one case per line; blank lines and lines starting with `#` are
//! skipped:
//!
//! ```text
//! cls       <p>:<y> [<p>:<y> ...]
//! smooth_l1 <s>
//! box       [lambda=<f>] [n=<int>] <tx,ty,tw,th>/<tx*,ty*,tw*,th*>/<weight> ...
//! mask      <m> <y,y,...> <p,p,...>          (m² values each, row-major)
//! total     <cls> <box> <mask>
//! ```
//!
//! Each case evaluates to a single number, printed as
//! `<line>\t<kind>\t<value>` with the shortest round-trip float repr.

use std::fmt;

use crate::error::{Error, Result};
use crate::geom::BoxDelta;

use super::{
    box_loss, cls_loss, mask_loss, smooth_l1, total_loss, BoxBatch, BoxItem, ClsBatch, ClsItem,
    MaskPair, DEFAULT_LAMBDA, DEFAULT_N_CLS,
};

#[derive(Debug, Clone, PartialEq)]
pub struct CaseResult {
    pub line: usize,
    pub kind: String,
    pub value: f64,
}

impl fmt::Display for CaseResult {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}\t{}\t{:?}", self.line, self.kind, self.value)
    }
}

pub fn evaluate_cases(text: &str) -> Result<Vec<CaseResult>> {
    let mut out = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let lineno = i + 1;
        let mut toks = line.split_whitespace();
        let kind = toks.next().unwrap_or_default();
        let args: Vec<&str> = toks.collect();
        let value = eval_case(kind, &args).map_err(|message| Error::CaseParse {
            line: lineno,
            message,
        })?;
        out.push(CaseResult {
            line: lineno,
            kind: kind.to_string(),
            value,
        });
    }
    Ok(out)
}

fn num(s: &str) -> std::result::Result<f64, String> {
    s.parse::<f64>()
        .ok()
        .filter(|v| v.is_finite())
        .ok_or_else(|| format!("not a finite number: {s:?}"))
}

fn list(s: &str) -> std::result::Result<Vec<f64>, String> {
    s.split(',').map(num).collect()
}

fn delta(s: &str) -> std::result::Result<BoxDelta, String> {
    let v = list(s)?;
    <[f64; 4]>::try_from(v)
        .map(BoxDelta::from_array)
        .map_err(|_| format!("expected four comma-separated values in {s:?}"))
}

fn eval_case(kind: &str, args: &[&str]) -> std::result::Result<f64, String> {
    match kind {
        "cls" => {
            if args.is_empty() {
                return Err("cls needs at least one <p>:<y> item".into());
            }
            let items = args
                .iter()
                .map(|a| {
                    let (p, y) = a.split_once(':').ok_or_else(|| format!("expected <p>:<y>, got {a:?}"))?;
                    Ok(ClsItem { prob: num(p)?, label: num(y)? })
                })
                .collect::<std::result::Result<_, String>>()?;
            Ok(cls_loss(&ClsBatch::new(items)))
        }
        "smooth_l1" => match args {
            [s] => Ok(smooth_l1(num(s)?)),
            _ => Err("smooth_l1 takes exactly one value".into()),
        },
        "box" => {
            let mut lambda = DEFAULT_LAMBDA;
            let mut n_cls = DEFAULT_N_CLS;
            let mut items = Vec::new();
            for a in args {
                if let Some(v) = a.strip_prefix("lambda=") {
                    lambda = num(v)?;
                } else if let Some(v) = a.strip_prefix("n=") {
                    n_cls = v.parse().map_err(|_| format!("bad n: {v:?}"))?;
                } else {
                    let parts: Vec<&str> = a.split('/').collect();
                    let [p, t, w] = parts[..] else {
                        return Err(format!("expected pred/target/weight, got {a:?}"));
                    };
                    items.push(BoxItem { pred: delta(p)?, target: delta(t)?, weight: num(w)? });
                }
            }
            Ok(box_loss(&BoxBatch { items, lambda, n_cls }))
        }
        "mask" => {
            let [m, y, p] = args else {
                return Err("mask takes <m> <targets> <probs>".into());
            };
            let m: usize = m.parse().map_err(|_| format!("bad m: {m:?}"))?;
            let pair = MaskPair::new(m, 0, list(y)?, list(p)?).map_err(|e| e.to_string())?;
            Ok(mask_loss(&pair))
        }
        "total" => match args {
            [a, b, c] => Ok(total_loss(num(a)?, num(b)?, num(c)?)),
            _ => Err("total takes three components".into()),
        },
        other => Err(format!("unknown case kind {other:?}")),
    }
}
