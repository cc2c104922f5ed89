//! Two-level constant lattice and per-opcode transfer functions.

use std::fmt;

use crate::exec::eval_scalar;
use crate::ir::{MemoryImage, Opcode, Scalar};

/// `Const` sits below `Unknown`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum AbstractValue {
    Unknown,
    Const(Scalar),
}

impl AbstractValue {
    pub fn meet(self, other: AbstractValue) -> AbstractValue {
        match (self, other) {
            (AbstractValue::Const(a), AbstractValue::Const(b)) if a == b => self,
            (AbstractValue::Const(a), AbstractValue::Const(b)) if a.ty != b.ty => {
                log::warn!(
                    "meet of constants with different types: {:?} and {:?}",
                    a,
                    b
                );
                AbstractValue::Unknown
            }
            _ => AbstractValue::Unknown,
        }
    }

    pub fn as_const(self) -> Option<Scalar> {
        match self {
            AbstractValue::Const(s) => Some(s),
            AbstractValue::Unknown => None,
        }
    }

    pub fn is_const(self) -> bool {
        self.as_const().is_some()
    }

    /// Lattice order: `a.le(b)` iff `a` is at least as precise as `b`.
    pub fn le(self, other: AbstractValue) -> bool {
        other == AbstractValue::Unknown || self == other
    }
}

impl fmt::Display for AbstractValue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            AbstractValue::Unknown => f.write_str("unknown"),
            AbstractValue::Const(s) => write!(f, "{}:{}", s.bits, s.ty),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, thiserror::Error)]
pub enum RangeError {
    #[error("constant range [{start}, +{len}) exceeds memory size {size}")]
    OutOfBounds { start: u64, len: u64, size: u64 },
    #[error("constant ranges starting at {0} and {1} overlap")]
    Overlap(u64, u64),
}

/// Address ranges promised immutable for one specialization.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct ConstRanges {
    ranges: Vec<(u64, u64)>,
}

impl ConstRanges {
    pub fn new(
        ranges: impl IntoIterator<Item = (u64, u64)>,
        memory_size: u64,
    ) -> Result<Self, RangeError> {
        let mut ranges: Vec<(u64, u64)> = ranges.into_iter().collect();
        ranges.sort();
        for &(start, len) in &ranges {
            if start.checked_add(len).is_none_or(|end| end > memory_size) {
                return Err(RangeError::OutOfBounds {
                    start,
                    len,
                    size: memory_size,
                });
            }
        }
        for w in ranges.windows(2) {
            if w[0].0 + w[0].1 > w[1].0 {
                return Err(RangeError::Overlap(w[0].0, w[1].0));
            }
        }
        Ok(ConstRanges { ranges })
    }

    pub fn ranges(&self) -> &[(u64, u64)] {
        &self.ranges
    }

    /// True iff `[addr, addr + len)` lies inside a single range.
    pub fn contains_span(&self, addr: u64, len: u64) -> bool {
        let Some(end) = addr.checked_add(len) else {
            return false;
        };
        self.ranges
            .iter()
            .any(|&(start, rlen)| addr >= start && end <= start + rlen)
    }
}

/// Abstract result of one instruction. Side-effecting and intrinsic opcodes
/// always produce `Unknown`; the specializer models them itself.
pub fn transfer(
    op: &Opcode,
    args: &[AbstractValue],
    ranges: &ConstRanges,
    memory: &MemoryImage,
) -> AbstractValue {
    match op {
        Opcode::Load(w) => match args {
            [AbstractValue::Const(addr)] if ranges.contains_span(addr.bits, w.bytes()) => memory
                .read(addr.bits, *w)
                .map(|bits| AbstractValue::Const(Scalar::new(w.load_type(), bits)))
                .unwrap_or(AbstractValue::Unknown),
            _ => AbstractValue::Unknown,
        },
        Opcode::Select => match args {
            [AbstractValue::Const(c), a, b] => {
                if c.bits != 0 {
                    *a
                } else {
                    *b
                }
            }
            [AbstractValue::Unknown, a, b] if a == b && a.is_const() => *a,
            _ => AbstractValue::Unknown,
        },
        op if op.is_pure() => {
            let consts: Option<Vec<Scalar>> = args.iter().map(|a| a.as_const()).collect();
            consts
                .and_then(|c| eval_scalar(op, &c))
                .map(AbstractValue::Const)
                .unwrap_or(AbstractValue::Unknown)
        }
        _ => AbstractValue::Unknown,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::exec::{run, ExecOptions};
    use crate::ir::{parse_module, BinaryOp, CmpOp, MemWidth, ScalarType, Segment};
    use proptest::prelude::*;
    use AbstractValue::*;

    fn c(v: u64) -> AbstractValue {
        Const(Scalar::i64(v))
    }

    #[test]
    fn meet_table() {
        assert_eq!(c(4).meet(c(4)), c(4));
        assert_eq!(c(4).meet(c(5)), Unknown);
        assert_eq!(Unknown.meet(c(4)), Unknown);
        assert_eq!(c(4).meet(Const(Scalar::i32(4))), Unknown);
    }

    fn memory() -> MemoryImage {
        let mut m = MemoryImage::new(64);
        m.segments.push(Segment {
            offset: 16,
            bytes: 7u64.to_le_bytes().to_vec(),
            label: None,
        });
        m
    }

    #[test]
    fn transfer_examples() {
        let r = ConstRanges::default();
        let mem = MemoryImage::new(0);
        let add = Opcode::Binary(BinaryOp::Add);
        assert_eq!(transfer(&add, &[c(2), c(3)], &r, &mem), c(5));
        assert_eq!(transfer(&add, &[c(2), Unknown], &r, &mem), Unknown);
    }

    #[test]
    fn load_folding() {
        let mem = memory();
        let ranges = ConstRanges::new([(16, 8)], 64).unwrap();
        let load = Opcode::Load(MemWidth::W64);
        assert_eq!(transfer(&load, &[c(16)], &ranges, &mem), c(7));
        assert_eq!(transfer(&load, &[c(32)], &ranges, &mem), Unknown);
        // Straddles the end of the range.
        assert_eq!(transfer(&load, &[c(20)], &ranges, &mem), Unknown);
        assert_eq!(
            transfer(&Opcode::Load(MemWidth::W32), &[c(16)], &ranges, &mem),
            Const(Scalar::i32(7))
        );
        assert_eq!(transfer(&load, &[Unknown], &ranges, &mem), Unknown);
    }

    #[test]
    fn adjacent_ranges_do_not_combine() {
        let mem = memory();
        let ranges = ConstRanges::new([(16, 4), (20, 4)], 64).unwrap();
        assert_eq!(
            transfer(&Opcode::Load(MemWidth::W64), &[c(16)], &ranges, &mem),
            Unknown
        );
    }

    #[test]
    fn range_validation() {
        assert!(ConstRanges::new([(60, 8)], 64).is_err());
        assert!(ConstRanges::new([(0, 8), (4, 8)], 64).is_err());
        assert!(ConstRanges::new([(0, 8), (8, 8)], 64).is_ok());
    }

    #[test]
    fn side_effects_are_unknown() {
        let r = ConstRanges::default();
        let mem = MemoryImage::new(0);
        assert_eq!(
            transfer(&Opcode::Call("f".into()), &[c(1)], &r, &mem),
            Unknown
        );
        assert_eq!(
            transfer(&Opcode::Store(MemWidth::W64), &[c(1), c(2)], &r, &mem),
            Unknown
        );
    }

    fn pure_op() -> impl Strategy<Value = (Opcode, Vec<ScalarType>)> {
        use ScalarType::*;
        let ty = prop_oneof![Just(I32), Just(I64)];
        let bin = prop_oneof![
            Just(BinaryOp::Add),
            Just(BinaryOp::Sub),
            Just(BinaryOp::Mul),
            Just(BinaryOp::And),
            Just(BinaryOp::Or),
            Just(BinaryOp::Xor),
            Just(BinaryOp::Shl),
            Just(BinaryOp::ShrU),
        ];
        let cmp = prop_oneof![
            Just(CmpOp::Eq),
            Just(CmpOp::Ne),
            Just(CmpOp::LtU),
            Just(CmpOp::LtS)
        ];
        prop_oneof![
            (bin, ty.clone()).prop_map(|(op, t)| (Opcode::Binary(op), vec![t, t])),
            (cmp, ty.clone()).prop_map(|(op, t)| (Opcode::Icmp(op), vec![t, t])),
            (ty.clone(), ty).prop_map(|(ct, t)| (Opcode::Select, vec![ct, t, t])),
            Just((Opcode::Zext, vec![I32])),
            Just((Opcode::Trunc, vec![I64])),
        ]
    }

    proptest! {
        #[test]
        fn meet_laws(a in any::<Option<u8>>(), b in any::<Option<u8>>(), x in any::<Option<u8>>()) {
            let lift = |v: Option<u8>| v.map_or(Unknown, |v| c(v as u64));
            let (a, b, x) = (lift(a), lift(b), lift(x));
            prop_assert_eq!(a.meet(b), b.meet(a));
            prop_assert_eq!(a.meet(b).meet(x), a.meet(b.meet(x)));
            prop_assert_eq!(a.meet(a), a);
            prop_assert!(a.le(a.meet(b)));
        }

        /// Whenever transfer yields a constant, every concrete instantiation of
        /// the unknown operands evaluates to that constant.
        #[test]
        fn transfer_is_sound(
            (op, tys) in pure_op(),
            vals in prop::collection::vec(any::<u64>(), 3),
            known in prop::collection::vec(any::<bool>(), 3),
            samples in prop::collection::vec(prop::collection::vec(any::<u64>(), 3), 8),
        ) {
            let concrete: Vec<Scalar> = tys.iter().zip(&vals).map(|(&t, &v)| Scalar::new(t, v)).collect();
            let abs: Vec<AbstractValue> = concrete.iter().zip(&known)
                .map(|(&s, &k)| if k { Const(s) } else { Unknown }).collect();
            let out = transfer(&op, &abs, &ConstRanges::default(), &MemoryImage::new(0));
            if let Const(expected) = out {
                for sample in samples.iter().chain(std::iter::once(&vals)) {
                    let inst: Vec<Scalar> = tys.iter().zip(sample).zip(&abs)
                        .map(|((&t, &v), a)| a.as_const().unwrap_or(Scalar::new(t, v)))
                        .collect();
                    prop_assert_eq!(eval_scalar(&op, &inst), Some(expected));
                }
            }
        }

        #[test]
        fn transfer_is_monotone(
            (op, tys) in pure_op(),
            vals in prop::collection::vec(any::<u64>(), 3),
            known in prop::collection::vec(any::<bool>(), 3),
            forget in prop::collection::vec(any::<bool>(), 3),
        ) {
            let precise: Vec<AbstractValue> = tys.iter().zip(&vals).zip(&known)
                .map(|((&t, &v), &k)| if k { Const(Scalar::new(t, v)) } else { Unknown }).collect();
            let coarse: Vec<AbstractValue> = precise.iter().zip(&forget)
                .map(|(&a, &f)| if f { Unknown } else { a }).collect();
            let r = ConstRanges::default();
            let mem = MemoryImage::new(0);
            prop_assert!(transfer(&op, &precise, &r, &mem).le(transfer(&op, &coarse, &r, &mem)));
        }

        /// Folded loads agree with what the executor reads from the same image.
        #[test]
        fn folded_loads_match_executor(
            bytes in prop::collection::vec(any::<u8>(), 16),
            addr in 0u64..16,
            width in prop_oneof![Just(MemWidth::W8), Just(MemWidth::W32), Just(MemWidth::W64)],
        ) {
            let hex: String = bytes.iter().map(|b| format!("{:02x}", b)).collect();
            let op = Opcode::Load(width);
            let text = format!(
                "memory 32\ndata 8 {}\nfunc @f(%a: i64) -> {} {{\nblock ^e:\n  %v = {} %a\n  return %v\n}}\n",
                hex, width.load_type(), op.mnemonic()
            );
            let m = parse_module(&text).unwrap();
            let ranges = ConstRanges::new([(8, 16)], 32).unwrap();
            let folded = transfer(&op, &[c(addr + 8)], &ranges, &m.memory);
            let ran = run(&m, "f", &[addr + 8], &ExecOptions::default()).unwrap();
            if let Const(s) = folded {
                prop_assert_eq!(ran.outcome.return_bits(), Some(s.bits));
            } else {
                prop_assert!(addr + width.bytes() > 16);
            }
        }
    }
}
