use maisac_core::beampattern::{AngularGrid, DesiredBeam};
use maisac_core::bnb::complete_prefix;
use maisac_core::channel::{sample_channel, ChannelParams};
use maisac_core::grid::{MobilityParams, PositionGrid};
use maisac_core::subproblems::{
    build_relaxed_problem, build_relaxed_problem_uncompressed, polish_epigraph, solve_fixed, solve_relaxed,
    solve_with_retry, InstanceData, SupportSet,
};
use maisac_conic::SolveStatus;

fn instance(seed: u64, n: usize) -> InstanceData {
    let grid = PositionGrid::with_side(4.0, 2.0, 10.706873).unwrap();
    let mob = MobilityParams::from_limits(2.0, 2.0).unwrap();
    let ch = vec![sample_channel(&grid, &ChannelParams::default(), seed, 0).unwrap()];
    let beam = DesiredBeam { elevation: 0.0, azimuth: 0.0, psi: 0.4, phi: 0.4 };
    let angles = AngularGrid::uniform(3, 9, beam).unwrap();
    InstanceData::new(grid, mob, n, vec![0, 8], ch, angles, 1.0, 1.0).unwrap()
}

fn uncompressed_optimum(inst: &InstanceData, s: &SupportSet) -> f64 {
    let (prob, layout) = build_relaxed_problem_uncompressed(inst, s).unwrap();
    let mut sol = solve_with_retry(&prob).unwrap();
    assert_eq!(sol.status, SolveStatus::Optimal);
    polish_epigraph(&prob, &layout, &mut sol)
}

#[test]
fn compression_does_not_change_the_relaxed_optimum() {
    for (seed, prefix) in [(1u64, vec![]), (2, vec![1]), (3, vec![1, 7])] {
        let inst = instance(seed, 2);
        let s = SupportSet::for_prefix(&inst, &prefix);
        let compressed = solve_relaxed(&inst, &s).unwrap();
        assert_eq!(compressed.status, SolveStatus::Optimal);
        let full = uncompressed_optimum(&inst, &s);
        let (small, _) = build_relaxed_problem(&inst, &s).unwrap();
        let (big, _) = build_relaxed_problem_uncompressed(&inst, &s).unwrap();
        let dims = |p: &maisac_conic::ConicProblem| p.blocks.iter().map(|b| b.dim).sum::<usize>();
        assert!(dims(&small) <= dims(&big));
        assert!(
            (compressed.objective - full).abs() <= 1e-6 * (1.0 + full.abs()),
            "seed {seed} prefix {prefix:?}: {} vs {full}",
            compressed.objective
        );
    }
}

#[test]
fn leaf_relaxation_equals_fixed_trajectory_optimum() {
    let inst = instance(5, 2);
    let t = complete_prefix(&inst, &[1, 7]).unwrap();
    let prefix: Vec<usize> = t.selections.concat();
    let relaxed = solve_relaxed(&inst, &SupportSet::for_prefix(&inst, &prefix)).unwrap();
    let fixed = solve_fixed(&inst, &t, false).unwrap();
    assert!((relaxed.objective - fixed.objective).abs() <= 1e-6, "{} vs {}", relaxed.objective, fixed.objective);
}

#[test]
fn relaxation_bounds_every_completion() {
    let inst = instance(7, 2);
    let root = solve_relaxed(&inst, &SupportSet::for_prefix(&inst, &[])).unwrap();
    for prefix in [vec![], vec![1], vec![3, 5], vec![1, 7, 4]] {
        if let Some(t) = complete_prefix(&inst, &prefix) {
            let f = solve_fixed(&inst, &t, true).unwrap();
            assert!(root.objective <= f.objective + 1e-6, "{} > {}", root.objective, f.objective);
        }
    }
}
