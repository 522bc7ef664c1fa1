//! Addresses, scopes and the request vocabulary shared by every component.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Cache line size in bytes. Line payloads are eight 64-bit words.
pub const LINE_SIZE: u64 = 64;
pub const WORDS_PER_LINE: usize = (LINE_SIZE / 8) as usize;

/// Number of mask registers per scope.
pub const MASK_REGS: u8 = 8;
/// Number of aggregate result slots per scope.
pub const AGG_SLOTS: u8 = 8;
/// Number of field columns per scope.
pub const MAX_FIELDS: u8 = 5;
/// Upper bound on record slots per scope.
pub const MAX_SLOTS_PER_SCOPE: u32 = 32 * 1024;

/// Byte distance between consecutive lines of the same mask register.
/// Mask lines form a strided stripe so result reads land in a subset of sets.
pub const MASK_STRIPE: u64 = 1024;
const AGG_OFFSET: u64 = 64 * 1024;
const FIELD_OFFSET: u64 = 128 * 1024;
const FIELD_STRIDE: u64 = MAX_SLOTS_PER_SCOPE as u64 * 8;
/// Smallest scope size that fits the fixed layout above.
pub const MIN_SCOPE_SIZE: u64 = 2 * 1024 * 1024;

pub type LineData = [u64; WORDS_PER_LINE];

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct PhysAddr(pub u64);

impl PhysAddr {
    pub fn line(self) -> LineAddr {
        LineAddr(self.0 / LINE_SIZE)
    }

    /// Index of the 64-bit word within its line.
    pub fn word(self) -> usize {
        ((self.0 % LINE_SIZE) / 8) as usize
    }
}

impl fmt::Display for PhysAddr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:#x}", self.0)
    }
}

/// Line index (`byte_addr >> log2(LINE_SIZE)`).
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct LineAddr(pub u64);

impl LineAddr {
    pub fn base(self) -> PhysAddr {
        PhysAddr(self.0 * LINE_SIZE)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct ScopeId(pub u32);

impl fmt::Display for ScopeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "S{}", self.0)
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum LayoutError {
    #[error("scope size {0} is not a power of two")]
    NotPowerOfTwo(u64),
    #[error("scope size {0} is smaller than the minimum {MIN_SCOPE_SIZE}")]
    ScopeTooSmall(u64),
    #[error("PIM base {base:#x} is not aligned to the scope size {size:#x}")]
    Misaligned { base: u64, size: u64 },
    #[error("{0} record slots per scope exceeds the limit of {MAX_SLOTS_PER_SCOPE}")]
    TooManySlots(u32),
    #[error("slots per scope must be a positive multiple of 64, got {0}")]
    SlotGranularity(u32),
}

/// Physical memory map: a PIM region partitioned into equal, aligned scopes.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct AddressMap {
    pub pim_base: u64,
    pub scope_size: u64,
    pub n_scopes: u32,
    /// Record slots per scope; mask registers hold one bit per slot.
    pub slots_per_scope: u32,
}

impl AddressMap {
    pub fn new(pim_base: u64, scope_size: u64, n_scopes: u32, slots_per_scope: u32) -> Result<Self, LayoutError> {
        if !scope_size.is_power_of_two() {
            return Err(LayoutError::NotPowerOfTwo(scope_size));
        }
        if scope_size < MIN_SCOPE_SIZE {
            return Err(LayoutError::ScopeTooSmall(scope_size));
        }
        if !pim_base.is_multiple_of(scope_size) {
            return Err(LayoutError::Misaligned {
                base: pim_base,
                size: scope_size,
            });
        }
        if slots_per_scope > MAX_SLOTS_PER_SCOPE {
            return Err(LayoutError::TooManySlots(slots_per_scope));
        }
        if slots_per_scope == 0 || !slots_per_scope.is_multiple_of(64) {
            return Err(LayoutError::SlotGranularity(slots_per_scope));
        }
        Ok(AddressMap {
            pim_base,
            scope_size,
            n_scopes,
            slots_per_scope,
        })
    }

    pub fn pim_end(&self) -> u64 {
        self.pim_base + self.scope_size * self.n_scopes as u64
    }

    pub fn is_pim(&self, addr: PhysAddr) -> bool {
        addr.0 >= self.pim_base && addr.0 < self.pim_end()
    }

    pub fn scope_of(&self, addr: PhysAddr) -> Option<ScopeId> {
        if self.is_pim(addr) {
            Some(ScopeId(((addr.0 - self.pim_base) / self.scope_size) as u32))
        } else {
            None
        }
    }

    pub fn scope_of_line(&self, line: LineAddr) -> Option<ScopeId> {
        self.scope_of(line.base())
    }

    pub fn scope_base(&self, scope: ScopeId) -> PhysAddr {
        PhysAddr(self.pim_base + scope.0 as u64 * self.scope_size)
    }

    pub fn mask_words(&self) -> u32 {
        self.slots_per_scope / 64
    }

    /// Address of word `word` of mask register `mask`.
    pub fn mask_word_addr(&self, scope: ScopeId, mask: u8, word: u32) -> PhysAddr {
        let line = word as u64 / WORDS_PER_LINE as u64;
        let within = word as u64 % WORDS_PER_LINE as u64;
        PhysAddr(self.scope_base(scope).0 + line * MASK_STRIPE + mask as u64 * LINE_SIZE + within * 8)
    }

    pub fn agg_addr(&self, scope: ScopeId, slot: u8) -> PhysAddr {
        PhysAddr(self.scope_base(scope).0 + AGG_OFFSET + slot as u64 * 8)
    }

    /// Address of field `field` of the record in slot `slot`.
    pub fn field_addr(&self, scope: ScopeId, field: u8, slot: u32) -> PhysAddr {
        PhysAddr(self.scope_base(scope).0 + FIELD_OFFSET + field as u64 * FIELD_STRIDE + slot as u64 * 8)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PimOpcode {
    FilterEq,
    FilterLt,
    MaskAnd,
    MaskOr,
    MaskNot,
    Aggregate,
}

impl PimOpcode {
    pub const ALL: [PimOpcode; 6] = [
        PimOpcode::FilterEq,
        PimOpcode::FilterLt,
        PimOpcode::MaskAnd,
        PimOpcode::MaskOr,
        PimOpcode::MaskNot,
        PimOpcode::Aggregate,
    ];

    pub fn mnemonic(self) -> &'static str {
        match self {
            PimOpcode::FilterEq => "filter_eq",
            PimOpcode::FilterLt => "filter_lt",
            PimOpcode::MaskAnd => "mask_and",
            PimOpcode::MaskOr => "mask_or",
            PimOpcode::MaskNot => "mask_not",
            PimOpcode::Aggregate => "aggregate",
        }
    }
}

impl FromStr for PimOpcode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        PimOpcode::ALL
            .into_iter()
            .find(|op| op.mnemonic() == s)
            .ok_or_else(|| format!("unknown PIM opcode `{s}`"))
    }
}

/// A PIM command. Every operand names a column, mask register or aggregate
/// slot inside `scope`, so the op can never touch another scope.
///
/// Operand use per opcode:
/// - `filter_eq` / `filter_lt`: `dst[slot] = field[slot] (==|<) immediate`
/// - `mask_and` / `mask_or`: `dst = src0 (&||) src1`
/// - `mask_not`: `dst = !src0`
/// - `aggregate`: aggregate slot `dst` = sum of `field` over slots set in `src0`
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct PimOpDescriptor {
    pub scope: ScopeId,
    pub opcode: PimOpcode,
    #[serde(default)]
    pub field: u8,
    #[serde(default)]
    pub immediate: u64,
    pub dst: u8,
    #[serde(default)]
    pub src: [u8; 2],
}

impl PimOpDescriptor {
    pub fn filter(scope: ScopeId, opcode: PimOpcode, field: u8, immediate: u64, dst: u8) -> Self {
        PimOpDescriptor {
            scope,
            opcode,
            field,
            immediate,
            dst,
            src: [0, 0],
        }
    }

    pub fn mask(scope: ScopeId, opcode: PimOpcode, src: [u8; 2], dst: u8) -> Self {
        PimOpDescriptor {
            scope,
            opcode,
            field: 0,
            immediate: 0,
            dst,
            src,
        }
    }

    pub fn aggregate(scope: ScopeId, field: u8, mask: u8, slot: u8) -> Self {
        PimOpDescriptor {
            scope,
            opcode: PimOpcode::Aggregate,
            field,
            immediate: 0,
            dst: slot,
            src: [mask, 0],
        }
    }

    /// Checks every operand index against the per-scope register files.
    pub fn validate(&self) -> Result<(), String> {
        let field_ok = self.field < MAX_FIELDS;
        let mask_ok = |m: u8| m < MASK_REGS;
        let ok = match self.opcode {
            PimOpcode::FilterEq | PimOpcode::FilterLt => field_ok && mask_ok(self.dst),
            PimOpcode::MaskAnd | PimOpcode::MaskOr => mask_ok(self.src[0]) && mask_ok(self.src[1]) && mask_ok(self.dst),
            PimOpcode::MaskNot => mask_ok(self.src[0]) && mask_ok(self.dst),
            PimOpcode::Aggregate => field_ok && mask_ok(self.src[0]) && self.dst < AGG_SLOTS,
        };
        if ok {
            Ok(())
        } else {
            Err(format!("operand out of range in {self:?}"))
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum RequestKind {
    Load,
    Store,
    LineFlush,
    PimOp,
    PimAck,
    PimFence,
    ScopeFence,
    InvalidateProbe,
    WritebackData,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Target {
    Addr(PhysAddr),
    Scope(ScopeId),
    None,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum RequestPayload {
    None,
    Word(u64),
    Line(Vec<u64>),
    Pim(PimOpDescriptor),
}

/// A memory-system request issued on behalf of one thread.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct MemRequest {
    pub kind: RequestKind,
    pub target: Target,
    pub thread: u16,
    pub core: u16,
    pub program_seq: u32,
    pub pim_enabled: bool,
    pub payload: RequestPayload,
}

impl MemRequest {
    /// Scope the request resolves to: carried for PIM ops and scope fences,
    /// derived from the address otherwise.
    pub fn scope(&self, map: &AddressMap) -> Option<ScopeId> {
        match self.target {
            Target::Scope(s) => Some(s),
            Target::Addr(a) => map.scope_of(a),
            Target::None => None,
        }
    }
}

pub fn same_scope(a: &MemRequest, b: &MemRequest, map: &AddressMap) -> bool {
    match (a.scope(map), b.scope(map)) {
        (Some(x), Some(y)) => x == y,
        _ => false,
    }
}

/// One line of a request trace file.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TraceRecord {
    pub t: u64,
    pub kind: RequestKind,
    pub thread: u16,
    pub seq: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub addr: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scope: Option<u32>,
    pub payload: RequestPayload,
    pub core: u16,
    pub pim_enabled: bool,
}

impl TraceRecord {
    pub fn from_request(t: u64, req: &MemRequest) -> Self {
        let (addr, scope) = match req.target {
            Target::Addr(a) => (Some(a.0), None),
            Target::Scope(s) => (None, Some(s.0)),
            Target::None => (None, None),
        };
        TraceRecord {
            t,
            kind: req.kind,
            thread: req.thread,
            seq: req.program_seq,
            addr,
            scope,
            payload: req.payload.clone(),
            core: req.core,
            pim_enabled: req.pim_enabled,
        }
    }

    pub fn to_request(&self) -> MemRequest {
        let target = match (self.addr, self.scope) {
            (Some(a), _) => Target::Addr(PhysAddr(a)),
            (None, Some(s)) => Target::Scope(ScopeId(s)),
            (None, None) => Target::None,
        };
        MemRequest {
            kind: self.kind,
            target,
            thread: self.thread,
            core: self.core,
            program_seq: self.seq,
            pim_enabled: self.pim_enabled,
            payload: self.payload.clone(),
        }
    }

    pub fn to_json_line(&self) -> String {
        serde_json::to_string(self).expect("trace record serializes")
    }

    pub fn parse_line(line: &str) -> Result<Self, serde_json::Error> {
        serde_json::from_str(line)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    const MIB: u64 = 1024 * 1024;

    fn map() -> AddressMap {
        AddressMap::new(0, 2 * MIB, 8, 1024).unwrap()
    }

    fn load(addr: u64) -> MemRequest {
        MemRequest {
            kind: RequestKind::Load,
            target: Target::Addr(PhysAddr(addr)),
            thread: 0,
            core: 0,
            program_seq: 0,
            pim_enabled: map().is_pim(PhysAddr(addr)),
            payload: RequestPayload::None,
        }
    }

    fn pim(scope: u32) -> MemRequest {
        MemRequest {
            kind: RequestKind::PimOp,
            target: Target::Scope(ScopeId(scope)),
            thread: 0,
            core: 0,
            program_seq: 1,
            pim_enabled: true,
            payload: RequestPayload::Pim(PimOpDescriptor::mask(ScopeId(scope), PimOpcode::MaskNot, [1, 0], 0)),
        }
    }

    #[test]
    fn scope_boundaries() {
        let m = map();
        assert_eq!(m.scope_of(PhysAddr(0)), Some(ScopeId(0)));
        assert_eq!(m.scope_of(PhysAddr(2 * MIB)), Some(ScopeId(1)));
        assert_eq!(m.scope_of(PhysAddr(2 * MIB - 1)), Some(ScopeId(0)));
        assert_eq!(m.scope_of(PhysAddr(16 * MIB)), None);
    }

    #[test]
    fn same_scope_resolution() {
        let m = map();
        assert!(same_scope(&pim(3), &load(3 * 2 * MIB + 64), &m));
        assert!(!same_scope(&pim(3), &load(4 * 2 * MIB), &m));
        assert!(!same_scope(&load(64 * MIB), &pim(0), &m));
    }

    #[test]
    fn layout_rejections() {
        assert_eq!(AddressMap::new(0, 3 * MIB, 1, 64), Err(LayoutError::NotPowerOfTwo(3 * MIB)));
        assert_eq!(AddressMap::new(MIB, 2 * MIB, 1, 64), Err(LayoutError::Misaligned { base: MIB, size: 2 * MIB }));
        assert_eq!(AddressMap::new(0, 2 * MIB, 1, 40_000), Err(LayoutError::TooManySlots(40_000)));
        assert!(AddressMap::new(0, 1024 * MIB, 2, 64).is_ok());
    }

    #[test]
    fn layout_regions_stay_inside_the_scope() {
        let m = AddressMap::new(0, 2 * MIB, 2, MAX_SLOTS_PER_SCOPE).unwrap();
        let s = ScopeId(1);
        let last_field = m.field_addr(s, MAX_FIELDS - 1, MAX_SLOTS_PER_SCOPE - 1);
        let last_mask = m.mask_word_addr(s, MASK_REGS - 1, m.mask_words() - 1);
        for a in [last_field, last_mask, m.agg_addr(s, AGG_SLOTS - 1)] {
            assert_eq!(m.scope_of(a), Some(s), "{a}");
        }
        // Mask lines of one register are a stripe, not contiguous.
        let l0 = m.mask_word_addr(s, 0, 0).line();
        let l1 = m.mask_word_addr(s, 0, 8).line();
        assert_eq!(l1.0 - l0.0, MASK_STRIPE / LINE_SIZE);
    }

    #[test]
    fn opcode_operand_validation() {
        let s = ScopeId(0);
        assert!(PimOpDescriptor::filter(s, PimOpcode::FilterEq, 4, 1, 7).validate().is_ok());
        assert!(PimOpDescriptor::filter(s, PimOpcode::FilterEq, 5, 1, 0).validate().is_err());
        assert!(PimOpDescriptor::mask(s, PimOpcode::MaskAnd, [0, 8], 1).validate().is_err());
        assert!(PimOpDescriptor::aggregate(s, 1, 3, 8).validate().is_err());
    }

    fn arb_request() -> impl Strategy<Value = MemRequest> {
        let kinds = prop::sample::select(vec![
            RequestKind::Load,
            RequestKind::Store,
            RequestKind::LineFlush,
            RequestKind::PimOp,
            RequestKind::PimAck,
            RequestKind::PimFence,
            RequestKind::ScopeFence,
            RequestKind::InvalidateProbe,
            RequestKind::WritebackData,
        ]);
        let target = prop_oneof![
            any::<u64>().prop_map(|a| Target::Addr(PhysAddr(a))),
            any::<u32>().prop_map(|s| Target::Scope(ScopeId(s))),
            Just(Target::None),
        ];
        let payload = prop_oneof![
            Just(RequestPayload::None),
            any::<u64>().prop_map(RequestPayload::Word),
            prop::collection::vec(any::<u64>(), 8).prop_map(RequestPayload::Line),
            (any::<u32>(), 0usize..6, any::<u8>(), any::<u64>(), any::<u8>(), any::<[u8; 2]>()).prop_map(
                |(s, op, field, immediate, dst, src)| RequestPayload::Pim(PimOpDescriptor {
                    scope: ScopeId(s),
                    opcode: PimOpcode::ALL[op],
                    field,
                    immediate,
                    dst,
                    src,
                })
            ),
        ];
        (kinds, target, any::<u16>(), any::<u16>(), any::<u32>(), any::<bool>(), payload).prop_map(
            |(kind, target, thread, core, program_seq, pim_enabled, payload)| MemRequest {
                kind,
                target,
                thread,
                core,
                program_seq,
                pim_enabled,
                payload,
            },
        )
    }

    proptest! {
        #[test]
        fn trace_line_round_trips(req in arb_request(), t in any::<u64>()) {
            let line = TraceRecord::from_request(t, &req).to_json_line();
            let back = TraceRecord::parse_line(&line).unwrap();
            prop_assert_eq!(back.t, t);
            prop_assert_eq!(back.to_request(), req);
        }

        #[test]
        fn scopes_partition_pim_memory(addr in 0u64..(16 * MIB), other in 0u64..(16 * MIB)) {
            let m = map();
            let s = m.scope_of(PhysAddr(addr)).unwrap();
            let base = m.scope_base(s).0;
            prop_assert!(addr >= base && addr < base + m.scope_size);
            let t = m.scope_of(PhysAddr(other)).unwrap();
            prop_assert_eq!(s == t, addr / (2 * MIB) == other / (2 * MIB));
        }
    }
}
