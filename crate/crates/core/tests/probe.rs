//! Temporary corpus probe (removed before finalizing).

use flowtime::dptree::{build_tree, check_consistent, dp_solve, ConsistencyReport};
use flowtime::geom::{build_geometry, ip2_opt, Ip2Report, ip2_check};
use flowtime::grid::{offsets_domain, Grid, GridParams};
use flowtime::instance::Instance;
use flowtime::poly::{build_poly_solution, check_restriction, RestrictionReport};
use flowtime::qpoly::budgets_from_solution;
use std::collections::BTreeMap;

#[test]
#[ignore]
fn corpus_probe() {
    let mut smoothing_fail = 0usize;
    let mut small_chain_hits = 0usize;
    let mut large_cost_fail = 0usize;
    let mut small_cost_fail = 0usize;
    let mut other_bugtrap = 0usize;
    let mut consist_fail = 0usize;
    let mut restr_fail = 0usize;
    let mut dp_infeasible = 0usize;
    let mut total_runs = 0usize;
    let mut qpoly_fail = 0usize;

    for seed in 0..50u64 {
        let eps_inv = if seed % 5 == 0 { 2 } else { 1 };
        let i = Instance::gen_random(seed, 2 + (seed as usize % 4), 3, 3, 3, eps_inv).unwrap();
        let t = i.horizon().unwrap();
        let (ys, xs) = offsets_domain(eps_inv, t).unwrap();
        // probe 4 offsets per instance
        let span = (*xs.end() - *xs.start() + 1) as usize;
        let picks: Vec<i64> = [0usize, span / 3, 2 * span / 3, span - 1]
            .iter()
            .map(|&o| xs.start() + o as i64)
            .collect();
        for &off_x in &picks {
            for &off_y in &[ys[0], ys[ys.len() - 1]] {
                let params = GridParams::new(eps_inv, t, off_x, off_y).unwrap();
                let grid = Grid::build(t, params).unwrap();
                let geom = build_geometry(&i, &grid).unwrap();
                let tree = build_tree(&grid);
                let (_, sel) = ip2_opt(&geom).unwrap().unwrap();
                assert_eq!(ip2_check(&geom, &sel), Ip2Report::Feasible);
                total_runs += 1;

                // qpoly path
                let ledger = budgets_from_solution(&geom, &sel, eps_inv);
                match flowtime::qpoly::build_qpoly_solution(&geom, &tree, &ledger, eps_inv) {
                    Ok((sol, fam)) => {
                        if let Some((_, dsol)) = dp_solve(&geom, &tree, &fam).unwrap() {
                            let _ = dsol;
                        } else {
                            dp_infeasible += 1;
                        }
                        let _ = sol;
                    }
                    Err(e) => {
                        qpoly_fail += 1;
                        eprintln!("qpoly seed {seed} off ({off_x},{off_y}): {e}");
                    }
                }

                // poly path
                match build_poly_solution(&geom, &tree, &sel, eps_inv) {
                    Ok(out) => {
                        if !out.cb.bounds.all_ok() {
                            smoothing_fail += 1;
                        }
                        if !out.r_sm.is_empty() {
                            small_chain_hits += 1;
                        }
                        match check_consistent(&geom, &tree, &out.solution, &out.families) {
                            ConsistencyReport::Ok => {}
                            ConsistencyReport::Violation { property, detail } => {
                                consist_fail += 1;
                                eprintln!(
                                    "consistency seed {seed} off ({off_x},{off_y}) prop {property}: {detail}"
                                );
                            }
                        }
                        let mut sm_paths = BTreeMap::new();
                        let mut l_paths = BTreeMap::new();
                        for v in tree.vertices() {
                            sm_paths.insert(v, flowtime::poly::restrict_small_to_path(
                                &geom, &tree, &out.r_sm, v, &out.critical, &out.split, eps_inv));
                            l_paths.insert(v, flowtime::poly::restrict_large_to_path(
                                &geom, &tree, &out.r_l, v, &out.split, &sel, &out.info, eps_inv));
                        }
                        let sm_side = out.split.small_rects(&geom);
                        let l_side = out.split.large_rects(&geom);
                        if check_restriction(&geom, &tree, &sm_paths, &sel, &sm_side)
                            != RestrictionReport::Ok
                        {
                            restr_fail += 1;
                            eprintln!("small restriction seed {seed} off ({off_x},{off_y}): {:?}",
                                check_restriction(&geom, &tree, &sm_paths, &sel, &sm_side));
                        }
                        if check_restriction(&geom, &tree, &l_paths, &sel, &l_side)
                            != RestrictionReport::Ok
                        {
                            restr_fail += 1;
                            eprintln!("large restriction seed {seed} off ({off_x},{off_y}): {:?}",
                                check_restriction(&geom, &tree, &l_paths, &sel, &l_side));
                        }
                    }
                    Err(e) => {
                        let msg = format!("{e}");
                        if msg.contains("large-solution cost") {
                            large_cost_fail += 1;
                        } else if msg.contains("small-solution cost") {
                            small_cost_fail += 1;
                        } else {
                            other_bugtrap += 1;
                            eprintln!("poly seed {seed} off ({off_x},{off_y}): {e}");
                        }
                    }
                }
            }
        }
    }
    eprintln!("runs {total_runs}");
    eprintln!("smoothing bound failures: {smoothing_fail}");
    eprintln!("small-chain nonempty: {small_chain_hits}");
    eprintln!("small cost-chain failures: {small_cost_fail}");
    eprintln!("large cost-chain failures: {large_cost_fail}");
    eprintln!("other bugtraps: {other_bugtrap}");
    eprintln!("qpoly failures: {qpoly_fail}");
    eprintln!("consistency failures: {consist_fail}");
    eprintln!("restriction failures: {restr_fail}");
    eprintln!("dp infeasible: {dp_infeasible}");
}
