use std::collections::BTreeSet;
use std::path::PathBuf;

use minisa::engine::{analyze_tu, AnalysisOptions, Strategy, TuResult};
use minisa::frontend::parse_translation_unit;

const SINGLE_FILES: [&str; 14] = [
    "path_sensitivity.mc",
    "collatz.mc",
    "store_example.mc",
    "leak.mc",
    "memory.mc",
    "memory_split.mc",
    "context.mc",
    "inline_defensive1.mc",
    "inline_defensive2.mc",
    "refutation.mc",
    "infinite.mc",
    "recursion.mc",
    "coverage_loop.mc",
    "unroll.mc",
];

fn corpus(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../corpus").join(name)
}

fn run(name: &str, opts: &AnalysisOptions) -> TuResult {
    let src = std::fs::read_to_string(corpus(name)).unwrap();
    let ast = parse_translation_unit(&src, name).unwrap();
    analyze_tu(&ast, opts, None)
}

fn emitted(r: &TuResult) -> BTreeSet<(u32, String)> {
    r.reports
        .iter()
        .filter(|b| b.suppressed.is_none())
        .map(|b| (b.loc.line, b.checker.clone()))
        .collect()
}

#[test]
fn strategies_agree_on_the_corpus() {
    for f in SINGLE_FILES {
        let base = emitted(&run(f, &AnalysisOptions::default()));
        for strategy in [Strategy::Dfs, Strategy::Bfs] {
            let opts = AnalysisOptions {
                strategy,
                ..Default::default()
            };
            assert_eq!(emitted(&run(f, &opts)), base, "{f} under {strategy:?}");
        }
    }
}

#[test]
fn clean_files_stay_clean() {
    for f in ["collatz.mc", "store_example.mc", "infinite.mc", "recursion.mc", "coverage_loop.mc"] {
        assert!(emitted(&run(f, &AnalysisOptions::default())).is_empty(), "{f}");
    }
}

#[test]
fn refutation_candidate_carries_its_assumptions() {
    let r = run("refutation.mc", &AnalysisOptions::default());
    let b = &r.reports[0];
    assert_eq!(b.loc.line, 7);
    let assumed: Vec<u32> = b.path.iter().filter(|e| e.message.starts_with("Assuming")).map(|e| e.loc.line).collect();
    assert_eq!(assumed, [4, 6]);
    assert!(!b.conditions.constraints.is_empty());
}

#[test]
fn tiny_node_budget_terminates_and_is_counted() {
    let opts = AnalysisOptions {
        max_nodes: 5,
        ..Default::default()
    };
    let r = run("collatz.mc", &opts);
    assert!(r.stats.get("node_budget_exhausted").copied().unwrap_or(0) > 0);
}

#[test]
fn recursion_falls_back_to_conservative_evaluation() {
    let shallow = AnalysisOptions {
        max_inline_depth: 2,
        ..Default::default()
    };
    let r = run("recursion.mc", &shallow);
    assert!(emitted(&r).is_empty());
    assert!(r.stats.get("conservative_calls").copied().unwrap_or(0) > 0, "{:?}", r.stats);
}

#[test]
fn widening_only_adds_coverage() {
    for f in ["coverage_loop.mc", "unroll.mc", "collatz.mc"] {
        let plain = run(f, &AnalysisOptions::default());
        let wide = run(
            f,
            &AnalysisOptions {
                widen_loops: true,
                ..Default::default()
            },
        );
        for (file, lines) in &plain.coverage {
            for (line, n) in lines {
                let widened = wide.coverage.get(file).and_then(|m| m.get(line)).copied().unwrap_or(0);
                assert!(*n == 0 || widened > 0, "{file}:{line}");
            }
        }
        assert!(wide.stats.get("loops_widened").copied().unwrap_or(0) > 0, "{f}");
    }
}
