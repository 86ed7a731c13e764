//! Synthetic pre/post function pairs for desk-scale training runs.
//!
//! Security-like patches insert a guard: a new conditional block plus one or
//! two error-path blocks. Non-security patches add a longer straight-line
//! region, either as a new block or appended to an existing one. Both kinds
//! are applied to randomly generated base functions.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::patch::Label;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SynthSample {
    pub commit_id: String,
    pub function: String,
    pub label: Label,
    pub pre: String,
    pub post: String,
}

const REGS: &[&str] = &[
    "rax", "rbx", "rcx", "rdx", "rsi", "rdi", "r8", "r9", "r12", "r13",
];
const JCC: &[&str] = &["je", "jne", "jl", "jle", "jg", "jge"];

#[derive(Debug, Clone)]
struct Block {
    label: String,
    body: Vec<String>,
    /// Terminator, kept apart so appended code lands before it.
    term: Option<String>,
}

impl Block {
    fn falls_through(&self) -> bool {
        !matches!(&self.term, Some(t) if t.starts_with("jmp") || t == "ret")
    }
}

fn reg<R: Rng>(rng: &mut R) -> &'static str {
    REGS.choose(rng).expect("non-empty")
}

fn straight_line<R: Rng>(rng: &mut R) -> String {
    let (a, b) = (reg(rng), reg(rng));
    let off = 8 * rng.gen_range(1..16);
    match rng.gen_range(0..9) {
        0 => format!("mov {a}, {b}"),
        1 => format!("mov {a}, qword [rsp+{off:#x}]"),
        2 => format!("mov qword [rbp-{off:#x}], {a}"),
        3 => format!("add {a}, {:#x}", rng.gen_range(1..64)),
        4 => format!("sub {a}, {b}"),
        5 => format!("lea {a}, qword [{b}+{off:#x}]"),
        6 => format!("imul {a}, {b}"),
        7 => format!("shl {a}, {:#x}", rng.gen_range(1..4)),
        _ => format!("and {a}, {:#x}", rng.gen_range(1..256)),
    }
}

fn base_function<R: Rng>(rng: &mut R) -> Vec<Block> {
    let k = rng.gen_range(4..8);
    let mut blocks: Vec<Block> = (0..k)
        .map(|i| Block {
            label: format!("b{i}"),
            body: (0..rng.gen_range(2..5))
                .map(|_| straight_line(rng))
                .collect(),
            term: None,
        })
        .collect();
    for i in 0..k - 1 {
        let target = format!("b{}", rng.gen_range(i + 1..k));
        match rng.gen_range(0..4) {
            0 | 1 => {}
            2 => {
                blocks[i]
                    .body
                    .push(format!("cmp {}, {:#x}", reg(rng), rng.gen_range(0..32)));
                blocks[i].term = Some(format!("{} {target}", JCC.choose(rng).expect("non-empty")));
            }
            _ if i + 2 < k => blocks[i].term = Some(format!("jmp {target}")),
            _ => {}
        }
    }
    blocks[k - 1].term = Some("ret".into());
    blocks
}

fn render(name: &str, blocks: &[Block]) -> String {
    let mut s = format!("FUNC {name}\n");
    for b in blocks {
        s.push_str(&b.label);
        s.push_str(":\n");
        for ins in b.body.iter().chain(&b.term) {
            s.push_str("  ");
            s.push_str(ins);
            s.push('\n');
        }
    }
    s
}

/// Index at which a new block can be spliced in and still be reached by
/// fall-through from its predecessor.
fn insertion_point<R: Rng>(blocks: &[Block], rng: &mut R) -> usize {
    let ok: Vec<usize> = (1..blocks.len())
        .filter(|&i| blocks[i - 1].falls_through())
        .collect();
    ok.choose(rng).copied().unwrap_or(1)
}

fn security_patch<R: Rng>(blocks: &mut Vec<Block>, rng: &mut R) {
    let at = insertion_point(blocks, rng);
    let (r, bound) = (reg(rng), rng.gen_range(1..0x100));
    let guard = Block {
        label: "g0".into(),
        body: vec![format!("cmp {r}, {bound:#x}")],
        term: Some(format!("{} e0", JCC.choose(rng).expect("non-empty"))),
    };
    blocks.insert(at, guard);
    let last = blocks.last().expect("non-empty").label.clone();
    if rng.gen_bool(0.5) {
        blocks.push(Block {
            label: "e0".into(),
            body: vec!["mov eax, 0xffffffea".into()],
            term: Some("ret".into()),
        });
    } else {
        blocks.push(Block {
            label: "e0".into(),
            body: vec!["mov eax, 0xfffffff2".into()],
            term: Some("jmp e1".into()),
        });
        blocks.push(Block {
            label: "e1".into(),
            body: vec![format!("xor {r}, {r}")],
            term: Some(format!("jmp {last}")),
        });
    }
}

fn non_security_patch<R: Rng>(blocks: &mut Vec<Block>, rng: &mut R) {
    let extra: Vec<String> = (0..rng.gen_range(5..10))
        .map(|_| straight_line(rng))
        .collect();
    if rng.gen_bool(0.5) {
        let at = insertion_point(blocks, rng);
        blocks.insert(
            at,
            Block {
                label: "n0".into(),
                body: extra,
                term: None,
            },
        );
    } else {
        let i = rng.gen_range(0..blocks.len());
        blocks[i].body.extend(extra);
    }
}

/// `n` samples, alternating Security and NonSecurity, one commit each.
pub fn generate(n: usize, seed: u64) -> Vec<SynthSample> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|i| {
            let label = if i % 2 == 0 {
                Label::Security
            } else {
                Label::NonSecurity
            };
            let name = format!("fn_{i:04}");
            let pre = base_function(&mut rng);
            let mut post = pre.clone();
            match label {
                Label::Security => security_patch(&mut post, &mut rng),
                Label::NonSecurity => non_security_patch(&mut post, &mut rng),
            }
            SynthSample {
                commit_id: format!("synth{seed}-{i:04}"),
                function: name.clone(),
                label,
                pre: render(&name, &pre),
                post: render(&name, &post),
            }
        })
        .collect()
}
