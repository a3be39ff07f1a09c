//! ListOps-mini: nested prefix expressions over MIN/MAX/MED/SUM-mod-10 with
//! digit leaves, labelled by their value.
//!
//! An opening bracket and its operator form a single token, so
//! `[MAX 2 9 1]` is the five tokens `MAX 2 9 1 ]`.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{config_err, Error, Result};
use crate::tensor::split_rng;

pub const MIN: usize = 10;
pub const MAX: usize = 11;
pub const MED: usize = 12;
pub const SUM: usize = 13;
pub const CLOSE: usize = 14;
pub const PAD: usize = 15;
pub const VOCAB_SIZE: usize = 16;
pub const N_CLASSES: usize = 10;

const RETRIES_PER_DEPTH: usize = 64;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Op {
    Min,
    Max,
    Med,
    Sum,
}

impl Op {
    pub const ALL: [Op; 4] = [Op::Min, Op::Max, Op::Med, Op::Sum];

    pub fn token(self) -> usize {
        match self {
            Op::Min => MIN,
            Op::Max => MAX,
            Op::Med => MED,
            Op::Sum => SUM,
        }
    }

    fn from_token(t: usize) -> Option<Op> {
        match t {
            MIN => Some(Op::Min),
            MAX => Some(Op::Max),
            MED => Some(Op::Med),
            SUM => Some(Op::Sum),
            _ => None,
        }
    }

    pub fn apply(self, args: &[u8]) -> u8 {
        match self {
            Op::Min => *args.iter().min().expect("operators take arguments"),
            Op::Max => *args.iter().max().expect("operators take arguments"),
            Op::Med => {
                let mut sorted = args.to_vec();
                sorted.sort_unstable();
                sorted[(sorted.len() - 1) / 2]
            }
            Op::Sum => (args.iter().map(|&a| u32::from(a)).sum::<u32>() % 10) as u8,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Expr {
    Digit(u8),
    Apply(Op, Vec<Expr>),
}

impl Expr {
    pub fn depth(&self) -> usize {
        match self {
            Expr::Digit(_) => 0,
            Expr::Apply(_, args) => 1 + args.iter().map(Expr::depth).max().unwrap_or(0),
        }
    }

    pub fn token_len(&self) -> usize {
        match self {
            Expr::Digit(_) => 1,
            Expr::Apply(_, args) => 2 + args.iter().map(Expr::token_len).sum::<usize>(),
        }
    }

    pub fn tokens(&self) -> Vec<usize> {
        let mut out = Vec::with_capacity(self.token_len());
        self.write_tokens(&mut out);
        out
    }

    fn write_tokens(&self, out: &mut Vec<usize>) {
        match self {
            Expr::Digit(d) => out.push(usize::from(*d)),
            Expr::Apply(op, args) => {
                out.push(op.token());
                args.iter().for_each(|a| a.write_tokens(out));
                out.push(CLOSE);
            }
        }
    }

    pub fn value(&self) -> u8 {
        match self {
            Expr::Digit(d) => *d,
            Expr::Apply(op, args) => op.apply(&args.iter().map(Expr::value).collect::<Vec<_>>()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ListOpsParams {
    pub max_depth: usize,
    pub max_len: usize,
    pub min_args: usize,
    pub max_args: usize,
    /// Probability that a non-root argument is itself an operator.
    pub branch_prob: f64,
}

impl Default for ListOpsParams {
    fn default() -> Self {
        Self { max_depth: 4, max_len: 128, min_args: 2, max_args: 5, branch_prob: 0.3 }
    }
}

impl ListOpsParams {
    pub fn validate(&self) -> Result<()> {
        if self.max_len == 0 {
            return config_err("max_len must be positive");
        }
        if self.min_args == 0 || self.min_args > self.max_args {
            return config_err(format!("bad argument range {}..={}", self.min_args, self.max_args));
        }
        if !(0.0..=1.0).contains(&self.branch_prob) {
            return config_err("branch_prob must lie in [0, 1]");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ListOpsSample {
    /// Left-padded with [`PAD`] to exactly `max_len` tokens.
    pub tokens: Vec<usize>,
    pub label: usize,
    pub depth: usize,
}

pub struct ListOpsGenerator {
    params: ListOpsParams,
    rng: ChaCha8Rng,
}

impl ListOpsGenerator {
    pub fn new(params: ListOpsParams, seed: u64) -> Result<Self> {
        params.validate()?;
        Ok(Self { params, rng: split_rng(seed, "listops") })
    }

    fn tree(&mut self, depth_left: usize, root: bool) -> Expr {
        let branch = depth_left > 0 && (root || self.rng.random::<f64>() < self.params.branch_prob);
        if !branch {
            return Expr::Digit(self.rng.random_range(0..10u8));
        }
        let op = Op::ALL[self.rng.random_range(0..Op::ALL.len())];
        let n = self.rng.random_range(self.params.min_args..=self.params.max_args);
        Expr::Apply(op, (0..n).map(|_| self.tree(depth_left - 1, false)).collect())
    }

    /// Draws one expression that fits `max_len`; after repeated misses the
    /// depth limit is lowered until it fits (depth 0 always does).
    pub fn expression(&mut self) -> Expr {
        let mut depth = self.params.max_depth;
        loop {
            for _ in 0..RETRIES_PER_DEPTH {
                let e = self.tree(depth, true);
                if e.token_len() <= self.params.max_len {
                    return e;
                }
            }
            if depth == 0 {
                unreachable!("a single digit always fits a positive max_len");
            }
            depth -= 1;
        }
    }

    pub fn sample(&mut self) -> ListOpsSample {
        let expr = self.expression();
        let body = expr.tokens();
        let mut tokens = vec![PAD; self.params.max_len - body.len()];
        tokens.extend(body);
        ListOpsSample { tokens, label: usize::from(expr.value()), depth: expr.depth() }
    }

    pub fn samples(&mut self, n: usize) -> Vec<ListOpsSample> {
        (0..n).map(|_| self.sample()).collect()
    }
}

/// One sample from a fresh generator.
pub fn generate_listops(max_depth: usize, max_len: usize, seed: u64) -> Result<ListOpsSample> {
    let params = ListOpsParams { max_depth, max_len, ..ListOpsParams::default() };
    Ok(ListOpsGenerator::new(params, seed)?.sample())
}

fn parse_error(position: usize, message: impl Into<String>) -> Error {
    Error::Parse { position, message: message.into() }
}

fn skip_padding(tokens: &[usize]) -> usize {
    tokens.iter().take_while(|&&t| t == PAD).count()
}

/// Recursive-descent evaluator. Leading [`PAD`] tokens are ignored.
pub fn evaluate_listops(tokens: &[usize]) -> Result<u8> {
    fn expr(tokens: &[usize], pos: &mut usize) -> Result<u8> {
        let Some(&t) = tokens.get(*pos) else {
            return Err(parse_error(*pos, "unexpected end of expression"));
        };
        if t < 10 {
            *pos += 1;
            return Ok(t as u8);
        }
        let Some(op) = Op::from_token(t) else {
            return Err(parse_error(*pos, format!("expected digit or operator, found token {t}")));
        };
        *pos += 1;
        let mut args = Vec::new();
        while tokens.get(*pos) != Some(&CLOSE) {
            args.push(expr(tokens, pos)?);
        }
        if args.is_empty() {
            return Err(parse_error(*pos, "operator without arguments"));
        }
        *pos += 1;
        Ok(op.apply(&args))
    }

    let mut pos = skip_padding(tokens);
    let value = expr(tokens, &mut pos)?;
    if pos != tokens.len() {
        return Err(parse_error(pos, "trailing tokens after expression"));
    }
    Ok(value)
}

/// Iterative evaluator with an explicit operand stack; shares nothing with
/// [`evaluate_listops`] except the token ids.
pub fn evaluate_listops_stack(tokens: &[usize]) -> Result<u8> {
    let start = skip_padding(tokens);
    let mut frames: Vec<(usize, Vec<u8>)> = Vec::new();
    let mut result: Option<u8> = None;
    for (pos, &t) in tokens.iter().enumerate().skip(start) {
        if result.is_some() {
            return Err(parse_error(pos, "trailing tokens after expression"));
        }
        let finished = match t {
            0..=9 => Some(t as u8),
            MIN | MAX | MED | SUM => {
                frames.push((t, Vec::new()));
                None
            }
            CLOSE => {
                let (op, args) = frames.pop().ok_or_else(|| parse_error(pos, "unmatched closing bracket"))?;
                if args.is_empty() {
                    return Err(parse_error(pos, "operator without arguments"));
                }
                let v = match op {
                    MIN => args.iter().copied().fold(9, u8::min),
                    MAX => args.iter().copied().fold(0, u8::max),
                    SUM => args.iter().fold(0u8, |acc, &a| (acc + a) % 10),
                    _ => {
                        let mut counts = [0usize; 10];
                        args.iter().for_each(|&a| counts[usize::from(a)] += 1);
                        let rank = (args.len() - 1) / 2;
                        let mut seen = 0;
                        (0..10u8).find(|&d| {
                            seen += counts[usize::from(d)];
                            seen > rank
                        }).expect("rank below count")
                    }
                };
                Some(v)
            }
            _ => return Err(parse_error(pos, format!("unexpected token {t}"))),
        };
        if let Some(v) = finished {
            match frames.last_mut() {
                Some((_, args)) => args.push(v),
                None => result = Some(v),
            }
        }
    }
    match (result, frames.is_empty()) {
        (Some(v), true) => Ok(v),
        _ => Err(parse_error(tokens.len(), "unexpected end of expression")),
    }
}

/// Tokenizes text such as `[MAX 2 9 1]` or `[SM 6 7]`.
pub fn parse_listops(text: &str) -> Result<Vec<usize>> {
    let spaced = text.replace('[', " [").replace(']', " ] ");
    let mut out = Vec::new();
    for (pos, word) in spaced.split_whitespace().enumerate() {
        let token = match word {
            "]" => CLOSE,
            "[MIN" => MIN,
            "[MAX" => MAX,
            "[MED" => MED,
            "[SM" | "[SUM" => SUM,
            w if w.len() == 1 && w.as_bytes()[0].is_ascii_digit() => usize::from(w.as_bytes()[0] - b'0'),
            w => return Err(parse_error(pos, format!("unknown word {w:?}"))),
        };
        out.push(token);
    }
    Ok(out)
}
