mod common;

use std::collections::BTreeSet;

use bingo::asm::parse_program;
use bingo::flow::{
    build_cfg, build_ddg, control_dependences, derive_cdg, slice_cpg, EdgeType, FunctionGraphs,
    SliceConfig, SliceMode,
};
use common::*;
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn node_set(c: &bingo::flow::Cpg) -> BTreeSet<String> {
    c.nodes.iter().map(|n| n.id.clone()).collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(100))]

    #[test]
    fn control_dependences_match_brute_force(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (n, edges) = random_edges(&mut rng, 12, 20);
        let g = flow_graph(EdgeType::Cfg, n, &edges);
        let got: BTreeSet<(usize, usize)> = control_dependences(&g).unwrap().edges().collect();
        prop_assert_eq!(got, oracle_control_deps(n, &edges));
    }

    #[test]
    fn filtered_cdg_drops_exactly_the_cfg_edges(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (n, edges) = random_edges(&mut rng, 12, 20);
        let g = flow_graph(EdgeType::Cfg, n, &edges);
        let raw: BTreeSet<(usize, usize)> = control_dependences(&g).unwrap().edges().collect();
        let filtered: BTreeSet<(usize, usize)> = derive_cdg(&g).unwrap().edges().collect();
        let expected: BTreeSet<(usize, usize)> = raw.difference(&edges).copied().collect();
        prop_assert_eq!(filtered, expected);
    }

    #[test]
    fn slice_matches_undirected_bfs(seed in any::<u64>(), stride in 1usize..=3) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let cpg = random_cpg(&mut rng, 12, 24);
        let ids: Vec<String> = cpg.nodes.iter().map(|n| n.id.clone()).collect();
        let patch = random_subset(&mut rng, &ids, 1);
        let cfg = SliceConfig { stride, ..SliceConfig::default() };
        let s = slice_cpg(&cpg, &patch, SliceMode::Context, &cfg).unwrap();
        prop_assert!(!s.truncated);
        prop_assert_eq!(node_set(&s.cpg), oracle_slice_nodes(&cpg, &patch, stride));
    }

    #[test]
    fn slicing_is_monotone_and_idempotent(seed in any::<u64>(), stride in 1usize..=3) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let cpg = random_cpg(&mut rng, 12, 24);
        let ids: Vec<String> = cpg.nodes.iter().map(|n| n.id.clone()).collect();
        let patch = random_subset(&mut rng, &ids, 1);
        let at = |k: usize, g: &bingo::flow::Cpg| slice_cpg(g, &patch, SliceMode::Context, &SliceConfig { stride: k, ..SliceConfig::default() }).unwrap().cpg;
        let once = at(stride, &cpg);
        prop_assert!(node_set(&once).is_subset(&node_set(&at(stride + 1, &cpg))));
        prop_assert_eq!(at(stride, &once), once);
    }

    #[test]
    fn merge_preserves_each_graph(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let p = parse_program(&random_register_function(&mut rng, 10)).unwrap();
        let f = &p.functions[0];
        let g = FunctionGraphs::build(f).unwrap();
        let cpg = g.merge(f, &BTreeSet::new()).unwrap();
        for (k, graph) in [&g.cfg, &g.cdg, &g.ddg].into_iter().enumerate() {
            let from_cpg: BTreeSet<(usize, usize)> = cpg.edges_of(EdgeType::ALL[k]).collect();
            let direct: BTreeSet<(usize, usize)> = graph.edges().collect();
            prop_assert_eq!(from_cpg, direct);
        }
        prop_assert!(cpg.edges.iter().all(|e| e.types.bits().iter().any(|&b| b)));
    }

    #[test]
    fn ddg_matches_path_simulation(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let text = random_register_function(&mut rng, 10);
        let p = parse_program(&text).unwrap();
        let f = &p.functions[0];
        let cfg = build_cfg(f);
        let (blocks, succ) = text_blocks(&text);
        let cfg_edges: BTreeSet<(usize, usize)> = cfg.edges().collect();
        let text_edges: BTreeSet<(usize, usize)> = succ.iter().enumerate().flat_map(|(a, s)| s.iter().map(move |&b| (a, b))).collect();
        prop_assert_eq!(cfg_edges, text_edges, "{}", text);
        let got: BTreeSet<(usize, usize)> = build_ddg(f, &cfg).edges().collect();
        prop_assert_eq!(got, oracle_ddg(&blocks, &succ), "{}", text);
    }
}

#[test]
fn internal_mode_keeps_only_cfg_edges_among_patch_blocks() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for _ in 0..50 {
        let cpg = random_cpg(&mut rng, 10, 20);
        let ids: Vec<String> = cpg.nodes.iter().map(|n| n.id.clone()).collect();
        let patch = random_subset(&mut rng, &ids, 1);
        let s = slice_cpg(&cpg, &patch, SliceMode::Internal, &SliceConfig::default())
            .unwrap()
            .cpg;
        assert_eq!(node_set(&s), patch);
        let expected = cpg
            .edges
            .iter()
            .filter(|e| {
                e.types.has(EdgeType::Cfg)
                    && patch.contains(&cpg.nodes[e.src].id)
                    && patch.contains(&cpg.nodes[e.dst].id)
            })
            .count();
        assert_eq!(s.edges.len(), expected);
        assert!(s
            .edges
            .iter()
            .all(|e| e.types.bits() == [true, false, false]));
    }
}

#[test]
fn whole_patch_is_a_fixpoint() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    for stride in 1..=3 {
        let cpg = random_cpg(&mut rng, 10, 20);
        let all: BTreeSet<String> = node_set(&cpg);
        let s = slice_cpg(
            &cpg,
            &all,
            SliceMode::Context,
            &SliceConfig {
                stride,
                ..SliceConfig::default()
            },
        )
        .unwrap();
        assert_eq!(node_set(&s.cpg), all);
        assert_eq!(s.cpg.edges, cpg.edges);
    }
}

#[test]
fn oracles_see_real_dependences() {
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    let (mut cd, mut dd, mut virtual_exits) = (0, 0, 0);
    for _ in 0..100 {
        let (n, edges) = random_edges(&mut rng, 12, 20);
        cd += oracle_control_deps(n, &edges).len();
        let g = flow_graph(EdgeType::Cfg, n, &edges);
        virtual_exits += usize::from(
            bingo::flow::post_dominator_tree(&g)
                .unwrap()
                .virtual_exit()
                .is_some(),
        );
        let (blocks, succ) = text_blocks(&random_register_function(&mut rng, 10));
        dd += oracle_ddg(&blocks, &succ).len();
    }
    assert!(
        cd > 100 && dd > 100 && virtual_exits > 10,
        "{cd} {dd} {virtual_exits}"
    );
}
