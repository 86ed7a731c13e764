use bingo::asm::{
    block_fingerprint, parse_program, print_program, tokenize_instruction, TokenKind,
};
use proptest::prelude::*;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const REGS: &[&str] = &["rax", "ebx", "cl", "r8", "r12d", "rsp", "rbp", "rip"];
const SIZES: &[&str] = &["byte", "word", "dword", "qword"];

fn constant<R: Rng>(rng: &mut R) -> String {
    format!("{:#x}", rng.gen_range(0..0x1000))
}

fn memory<R: Rng>(rng: &mut R) -> String {
    let base = *REGS.choose(rng).unwrap();
    let size = SIZES.choose(rng).unwrap();
    match rng.gen_range(0..4) {
        0 => format!("{size} [{base}]"),
        1 => format!("{size} [{base}+{}]", constant(rng)),
        2 => format!("{size} ptr [{base}-{}]", constant(rng)),
        _ => format!(
            "{size} [{base}+{}*{:#x}]",
            REGS.choose(rng).unwrap(),
            [1, 2, 4, 8].choose(rng).unwrap()
        ),
    }
}

fn operand<R: Rng>(rng: &mut R) -> String {
    match rng.gen_range(0..3) {
        0 => REGS.choose(rng).unwrap().to_string(),
        1 => constant(rng),
        _ => memory(rng),
    }
}

/// Canonical ASM-TEXT: several functions, arbitrary jumps, optional line
/// annotations.
fn random_program<R: Rng>(rng: &mut R) -> String {
    let mut s = String::new();
    for fi in 0..rng.gen_range(1..=3) {
        s.push_str(&format!("FUNC f{fi}\n"));
        let k = rng.gen_range(1..=6);
        for b in 0..k {
            s.push_str(&format!("L{b}:\n"));
            let mut lines: Vec<String> = (0..rng.gen_range(1..=4))
                .map(|_| match rng.gen_range(0..5) {
                    0 => "nop".to_string(),
                    1 => format!("push {}", REGS.choose(rng).unwrap()),
                    2 => format!("call {}", constant(rng)),
                    _ => format!(
                        "{} {}, {}",
                        ["mov", "add", "xor", "lea", "cmp"].choose(rng).unwrap(),
                        REGS.choose(rng).unwrap(),
                        operand(rng)
                    ),
                })
                .collect();
            match rng.gen_range(0..4) {
                0 => lines.push(format!("jmp L{}", rng.gen_range(0..k))),
                1 => lines.push(format!("jle L{}", rng.gen_range(0..k))),
                2 => lines.push("ret".into()),
                _ => {}
            }
            for l in lines {
                s.push_str("  ");
                s.push_str(&l);
                if rng.gen_bool(0.5) {
                    s.push_str(&format!(" ;line={}", rng.gen_range(1..500)));
                }
                s.push('\n');
            }
        }
    }
    s
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(100))]

    #[test]
    fn print_parse_round_trip(seed in any::<u64>()) {
        let text = random_program(&mut ChaCha8Rng::seed_from_u64(seed));
        let p = parse_program(&text).unwrap();
        prop_assert_eq!(print_program(&p), text.clone());
        prop_assert_eq!(parse_program(&print_program(&p)).unwrap(), p);
    }

    #[test]
    fn fingerprint_survives_round_trip_and_constants(seed in any::<u64>()) {
        let text = random_program(&mut ChaCha8Rng::seed_from_u64(seed));
        let p = parse_program(&text).unwrap();
        let q = parse_program(&print_program(&p)).unwrap();
        let renumbered = parse_program(&text.replace("0x", "0x1")).unwrap();
        for ((f, g), h) in p.functions.iter().zip(&q.functions).zip(&renumbered.functions) {
            for ((a, b), c) in f.blocks.iter().zip(&g.blocks).zip(&h.blocks) {
                prop_assert_eq!(block_fingerprint(a), block_fingerprint(b));
                prop_assert_eq!(block_fingerprint(a), block_fingerprint(c));
            }
        }
    }

    #[test]
    fn tokens_reassemble_operand_text(
        parts in prop::collection::vec(
            prop::sample::select(vec!["rax", "R9D", "qword", "PTR", "[", "]", "+", "-", "*", "0x1F", "42", "al", "byte"]),
            1..8,
        ),
        gaps in prop::collection::vec(prop::sample::select(vec!["", " ", "  "]), 8),
    ) {
        let word = |s: &str| s.chars().all(|c| c.is_ascii_alphanumeric());
        let mut text = String::new();
        for (i, p) in parts.iter().enumerate() {
            text.push_str(p);
            let glued = parts.get(i + 1).is_some_and(|q| word(p) && word(q));
            text.push_str(if glued && gaps[i].is_empty() { " " } else { gaps[i] });
        }
        let tokens = tokenize_instruction("op", &text).unwrap();
        prop_assert_eq!(tokens[0].kind, TokenKind::Opcode);
        let joined: String = tokens[1..].iter().map(|t| t.text.as_str()).collect();
        let squeezed: String = text.to_ascii_lowercase().chars().filter(|c| !c.is_whitespace()).collect();
        prop_assert_eq!(joined, squeezed);
        prop_assert!(tokens.iter().all(|t| !t.text.is_empty()));
        prop_assert_eq!(tokenize_instruction("op", &text).unwrap(), tokens);
    }
}

#[test]
fn golden_tokenizations() {
    let split = |m: &str, o: &str| -> Vec<(String, &'static str)> {
        tokenize_instruction(m, o)
            .unwrap()
            .into_iter()
            .map(|t| (t.text, t.kind.as_str()))
            .collect()
    };
    let own = |v: &[(&str, &'static str)]| -> Vec<(String, &'static str)> {
        v.iter().map(|(a, b)| (a.to_string(), *b)).collect()
    };
    assert_eq!(split("ret", ""), own(&[("ret", "opcode")]));
    assert_eq!(
        split("add", "rax, rbx"),
        own(&[("add", "opcode"), ("rax", "register"), ("rbx", "register")])
    );
}

#[test]
fn constant_tokens_are_hex_or_decimal() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    for _ in 0..100 {
        let p = parse_program(&random_program(&mut rng)).unwrap();
        for t in p
            .functions
            .iter()
            .flat_map(|f| &f.blocks)
            .flat_map(|b| &b.instructions)
            .flat_map(|i| &i.tokens)
        {
            if t.kind == TokenKind::Constant {
                let hex = t.text.strip_prefix("0x").is_some_and(|h| {
                    !h.is_empty()
                        && h.chars()
                            .all(|c| c.is_ascii_hexdigit() && !c.is_ascii_uppercase())
                });
                assert!(
                    hex || t.text.chars().all(|c| c.is_ascii_digit()),
                    "{}",
                    t.text
                );
            }
        }
    }
}
