use std::hash::Hasher;

use fnv::FnvHasher;

use super::{BasicBlock, TokenKind};

const FINGERPRINT_SEED: u64 = 0x6269_6e67_6f5f_6670;

/// Relocation-insensitive block hash.
///
/// Hashes each instruction's mnemonic and its operand tokens. Constants and
/// branch targets contribute only their kind, so renumbered labels and
/// shifted offsets do not change the result. Registers, size keywords and
/// operators contribute their text.
pub fn block_fingerprint(block: &BasicBlock) -> u64 {
    let mut h = FnvHasher::with_key(FINGERPRINT_SEED);
    for ins in &block.instructions {
        h.write(ins.mnemonic.as_bytes());
        h.write_u8(0xfe);
        for t in &ins.tokens[1..] {
            h.write_u8(kind_tag(t.kind));
            if !matches!(t.kind, TokenKind::Constant | TokenKind::Symbol) {
                h.write(t.text.as_bytes());
            }
            h.write_u8(0xff);
        }
        h.write_u8(0xfd);
    }
    h.finish()
}

fn kind_tag(kind: TokenKind) -> u8 {
    match kind {
        TokenKind::Opcode => 1,
        TokenKind::Register => 2,
        TokenKind::Constant => 3,
        TokenKind::ReservedWord => 4,
        TokenKind::Operator => 5,
        TokenKind::Symbol => 6,
        TokenKind::Special => 7,
    }
}
