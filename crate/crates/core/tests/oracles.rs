//! Differential checks of the CFG builder and the engine against concrete interpreters.

mod common;

use common::{gprogram, run_ast, run_cfg, Outcome};
use minisa::cfg::build_cfg;
use minisa::checkers::DIV_ZERO;
use minisa::engine::{analyze_tu, AnalysisOptions};
use minisa::frontend::parse_translation_unit;
use proptest::prelude::*;

const INPUTS: std::ops::RangeInclusive<i32> = -12..=12;

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn cfg_execution_matches_syntax_tree_execution(src in gprogram(true)) {
        let ast = parse_translation_unit(&src, "gen.mc").unwrap();
        let f = ast.definitions().next().unwrap();
        let cfg = build_cfg(f);
        for x in INPUTS {
            let expected = run_ast(f, &[x], 1000);
            if expected == Outcome::OutOfFuel {
                continue;
            }
            prop_assert_eq!(run_cfg(f, &cfg, &[x], 1000), expected, "x = {}\n{}", x, src);
        }
    }

    /// Every division-by-zero report is witnessed by some concrete input.
    #[test]
    fn divzero_reports_have_concrete_witnesses(src in gprogram(true)) {
        let ast = parse_translation_unit(&src, "gen.mc").unwrap();
        let f = ast.definitions().next().unwrap();
        let witnessed: std::collections::BTreeSet<u32> = (-64..=64)
            .filter_map(|x| match run_ast(f, &[x], 1000) {
                Outcome::DivZero(line) => Some(line),
                _ => None,
            })
            .collect();
        let res = analyze_tu(&ast, &AnalysisOptions::default(), None);
        for r in res.reports.iter().filter(|r| r.checker == DIV_ZERO && r.suppressed.is_none()) {
            prop_assert!(witnessed.contains(&r.loc.line), "unwitnessed report at line {}\n{}", r.loc.line, src);
        }
    }

    /// On loop-free programs with a literal divisor reached by every input, a report exists.
    #[test]
    fn unconditional_zero_divisions_are_reported(src in gprogram(false)) {
        let src = src.replace("  return a + b;", "  s = 7 / (a - a);\n  return a + b;");
        let ast = parse_translation_unit(&src, "gen.mc").unwrap();
        let f = ast.definitions().next().unwrap();
        let all_fault = INPUTS.clone().all(|x| matches!(run_ast(f, &[x], 1000), Outcome::DivZero(_)));
        let res = analyze_tu(&ast, &AnalysisOptions::default(), None);
        let reported = res.reports.iter().any(|r| r.checker == DIV_ZERO && r.suppressed.is_none());
        prop_assert!(all_fault && reported, "{}", src);
    }
}
