//! Thread program DSL: one statement per line.
//!
//! ```text
//! st A 1
//! ld A r0
//! pim S0 filter_eq f1 42 m0
//! pim S0 mask_and m0 m1 m2
//! pim S0 mask_not m1 m0
//! pim S0 aggregate f2 m3 a0
//! pimfence
//! scopefence S0
//! memfence
//! flush A
//! delay 600
//! phase
//! ```
//!
//! Addresses are symbol names (resolved through a [`Symbols`] table) or
//! numeric literals. `ld` without a register still records its value in the
//! per-statement load log.

use std::collections::BTreeMap;
use std::fmt;

use thiserror::Error;

use crate::types::{PhysAddr, PimOpDescriptor, PimOpcode, ScopeId};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Stmt {
    Load { addr: PhysAddr, reg: Option<u8> },
    Store { addr: PhysAddr, val: u64 },
    Pim(PimOpDescriptor),
    PimFence,
    ScopeFence(ScopeId),
    MemFence,
    Flush(PhysAddr),
    Delay(u64),
    /// Logical-operation boundary used by the sequential reference executor.
    Phase,
}

impl Stmt {
    pub fn is_memory(&self) -> bool {
        !matches!(self, Stmt::Delay(_) | Stmt::Phase)
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
#[error("line {line}: {msg}")]
pub struct ParseError {
    pub line: usize,
    pub msg: String,
}

/// Named addresses shared by all threads of a program.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Symbols {
    pub addrs: BTreeMap<String, u64>,
}

impl Symbols {
    pub fn insert(&mut self, name: &str, addr: u64) {
        self.addrs.insert(name.to_string(), addr);
    }

    pub fn name_of(&self, addr: u64) -> Option<&str> {
        self.addrs.iter().find(|(_, &a)| a == addr).map(|(n, _)| n.as_str())
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct ThreadProgram {
    pub stmts: Vec<Stmt>,
}

pub(crate) fn parse_num(tok: &str) -> Option<u64> {
    let tok = tok.replace('_', "");
    if let Some(hex) = tok.strip_prefix("0x").or_else(|| tok.strip_prefix("0X")) {
        u64::from_str_radix(hex, 16).ok()
    } else {
        tok.parse().ok()
    }
}

fn parse_indexed(tok: &str, prefix: char, limit: u32) -> Result<u8, String> {
    let rest = tok
        .strip_prefix(prefix)
        .ok_or_else(|| format!("expected `{prefix}<n>`, got `{tok}`"))?;
    match rest.parse::<u32>() {
        Ok(n) if n < limit => Ok(n as u8),
        _ => Err(format!("bad operand `{tok}`")),
    }
}

pub fn parse_scope(tok: &str) -> Result<ScopeId, String> {
    tok.strip_prefix('S')
        .and_then(|n| n.parse().ok())
        .map(ScopeId)
        .ok_or_else(|| format!("expected scope `S<n>`, got `{tok}`"))
}

fn parse_addr(tok: &str, syms: &Symbols) -> Result<PhysAddr, String> {
    if let Some(&a) = syms.addrs.get(tok) {
        return Ok(PhysAddr(a));
    }
    parse_num(tok)
        .map(PhysAddr)
        .ok_or_else(|| format!("unknown location `{tok}`"))
}

fn parse_pim(toks: &[&str]) -> Result<PimOpDescriptor, String> {
    let [scope, op, rest @ ..] = toks else {
        return Err("pim needs a scope and an opcode".into());
    };
    let scope = parse_scope(scope)?;
    let opcode: PimOpcode = op.parse()?;
    let want = match opcode {
        PimOpcode::FilterEq | PimOpcode::FilterLt | PimOpcode::MaskAnd | PimOpcode::MaskOr | PimOpcode::Aggregate => 3,
        PimOpcode::MaskNot => 2,
    };
    if rest.len() != want {
        return Err(format!("{} takes {want} operands", opcode.mnemonic()));
    }
    let desc = match opcode {
        PimOpcode::FilterEq | PimOpcode::FilterLt => {
            let field = parse_indexed(rest[0], 'f', 256)?;
            let imm = parse_num(rest[1]).ok_or_else(|| format!("bad immediate `{}`", rest[1]))?;
            PimOpDescriptor::filter(scope, opcode, field, imm, parse_indexed(rest[2], 'm', 256)?)
        }
        PimOpcode::MaskAnd | PimOpcode::MaskOr => PimOpDescriptor::mask(
            scope,
            opcode,
            [parse_indexed(rest[0], 'm', 256)?, parse_indexed(rest[1], 'm', 256)?],
            parse_indexed(rest[2], 'm', 256)?,
        ),
        PimOpcode::MaskNot => {
            PimOpDescriptor::mask(scope, opcode, [parse_indexed(rest[0], 'm', 256)?, 0], parse_indexed(rest[1], 'm', 256)?)
        }
        PimOpcode::Aggregate => PimOpDescriptor::aggregate(
            scope,
            parse_indexed(rest[0], 'f', 256)?,
            parse_indexed(rest[1], 'm', 256)?,
            parse_indexed(rest[2], 'a', 256)?,
        ),
    };
    desc.validate()?;
    Ok(desc)
}

/// Parses a single statement (no comment handling).
pub fn parse_stmt(text: &str, syms: &Symbols) -> Result<Stmt, String> {
    let toks: Vec<&str> = text.split_whitespace().collect();
    let Some((&head, args)) = toks.split_first() else {
        return Err("empty statement".into());
    };
    let arity = |n: usize| {
        if args.len() == n {
            Ok(())
        } else {
            Err(format!("`{head}` takes {n} operand(s)"))
        }
    };
    match head {
        "ld" => {
            if args.len() != 1 && args.len() != 2 {
                return Err("`ld` takes an address and an optional register".into());
            }
            let reg = args.get(1).map(|r| parse_indexed(r, 'r', 256)).transpose()?;
            Ok(Stmt::Load {
                addr: parse_addr(args[0], syms)?,
                reg,
            })
        }
        "st" => {
            arity(2)?;
            let val = parse_num(args[1]).ok_or_else(|| format!("bad value `{}`", args[1]))?;
            Ok(Stmt::Store {
                addr: parse_addr(args[0], syms)?,
                val,
            })
        }
        "pim" => parse_pim(args).map(Stmt::Pim),
        "pimfence" => arity(0).map(|_| Stmt::PimFence),
        "memfence" => arity(0).map(|_| Stmt::MemFence),
        "phase" => arity(0).map(|_| Stmt::Phase),
        "scopefence" => {
            arity(1)?;
            Ok(Stmt::ScopeFence(parse_scope(args[0])?))
        }
        "flush" => {
            arity(1)?;
            Ok(Stmt::Flush(parse_addr(args[0], syms)?))
        }
        "delay" => {
            arity(1)?;
            parse_num(args[0])
                .map(Stmt::Delay)
                .ok_or_else(|| format!("bad delay `{}`", args[0]))
        }
        other => Err(format!("unknown statement `{other}`")),
    }
}

impl ThreadProgram {
    /// Parses a program; `#` starts a comment, blank lines are skipped.
    pub fn parse(text: &str, syms: &Symbols) -> Result<Self, ParseError> {
        let mut stmts = Vec::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let stmt = parse_stmt(line, syms).map_err(|msg| ParseError { line: i + 1, msg })?;
            stmts.push(stmt);
        }
        Ok(ThreadProgram { stmts })
    }

    pub fn format(&self, syms: &Symbols) -> String {
        let mut out = String::new();
        for s in &self.stmts {
            out.push_str(&format_stmt(s, syms));
            out.push('\n');
        }
        out
    }

    pub fn count(&self, pred: impl Fn(&Stmt) -> bool) -> usize {
        self.stmts.iter().filter(|s| pred(s)).count()
    }
}

fn fmt_addr(a: PhysAddr, syms: &Symbols) -> String {
    match syms.name_of(a.0) {
        Some(n) => n.to_string(),
        None => format!("{:#x}", a.0),
    }
}

pub fn format_stmt(s: &Stmt, syms: &Symbols) -> String {
    match *s {
        Stmt::Load { addr, reg: Some(r) } => format!("ld {} r{r}", fmt_addr(addr, syms)),
        Stmt::Load { addr, reg: None } => format!("ld {}", fmt_addr(addr, syms)),
        Stmt::Store { addr, val } => format!("st {} {val}", fmt_addr(addr, syms)),
        Stmt::Pim(d) => {
            let ops = match d.opcode {
                PimOpcode::FilterEq | PimOpcode::FilterLt => format!("f{} {} m{}", d.field, d.immediate, d.dst),
                PimOpcode::MaskAnd | PimOpcode::MaskOr => format!("m{} m{} m{}", d.src[0], d.src[1], d.dst),
                PimOpcode::MaskNot => format!("m{} m{}", d.src[0], d.dst),
                PimOpcode::Aggregate => format!("f{} m{} a{}", d.field, d.src[0], d.dst),
            };
            format!("pim {} {} {ops}", d.scope, d.opcode.mnemonic())
        }
        Stmt::PimFence => "pimfence".into(),
        Stmt::ScopeFence(s) => format!("scopefence {s}"),
        Stmt::MemFence => "memfence".into(),
        Stmt::Flush(a) => format!("flush {}", fmt_addr(a, syms)),
        Stmt::Delay(n) => format!("delay {n}"),
        Stmt::Phase => "phase".into(),
    }
}

impl fmt::Display for ThreadProgram {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.format(&Symbols::default()))
    }
}
