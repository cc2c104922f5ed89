use peval::ir::{Inst, Intrinsic, Module, Opcode, Scalar, ScalarType};
use rand::rngs::StdRng;
use rand::Rng;

/// Replaces each `update_context` operand with an arbitrary constant. Small
/// ranges make unrelated pcs share a context.
pub fn randomize_contexts(m: &Module, func: &str, rng: &mut StdRng) -> Module {
    let mut out = m.clone();
    let f = out.functions.iter_mut().find(|f| f.name == func).unwrap();
    let span = [1, 4, 1000][rng.random_range(0..3)];
    let mut n = 0;
    for bi in 0..f.blocks.len() {
        let insts = std::mem::take(&mut f.blocks[bi].insts);
        let mut new = Vec::new();
        for mut inst in insts {
            if inst.op == Opcode::Intrinsic(Intrinsic::UpdateContext) {
                n += 1;
                let k = f.add_value(format!("ctx.k{}", n), ScalarType::I64);
                let c: u64 = rng.random_range(0..span);
                new.push(Inst {
                    result: Some(k),
                    op: Opcode::Const(Scalar::i64(c)),
                    args: vec![],
                });
                inst.args[0] = k;
            }
            new.push(inst);
        }
        f.blocks[bi].insts = new;
    }
    out
}
