use mfglab::analysis::{chaos_study, fit_rate, nash_gap};
use mfglab::mfg::{consistency_residual, default_schedule, picard_solve, PicardOptions};
use mfglab::pde::solve_hjb;
use mfglab::{presets, Grids, Model, Report};

fn solve(model: &Model, cells: usize) -> (Grids, Report) {
    let g = Grids::for_model(model, 0.01, cells, None).unwrap();
    let s = default_schedule(model, &g, 4).unwrap();
    let r = picard_solve(model, &s, None, &PicardOptions::for_model(model), g).unwrap();
    (g, r)
}

#[test]
fn weakly_coupled_equilibrium_passes_the_particle_audit() {
    let m = presets::weakly_coupled::<f64>();
    let (_, r) = solve(&m, 200);
    assert!(r.converged);
    assert!(r.residual_history.windows(2).all(|w| w[1].weighted <= w[0].weighted));
    let k = *r.truncation_level_history.last().unwrap();
    let c = consistency_residual(&m.truncate(k).unwrap(), &r.final_policy, &r.final_flow, 5000, 1).unwrap();
    assert!(c.total() <= 0.05, "{c:?}");
}

#[test]
fn decoupled_equilibrium_is_the_direct_best_response() {
    let m = presets::decoupled::<f64>();
    let (g, r) = solve(&m, 150);
    assert!(r.converged);
    assert_eq!(r.effective_iterations(), 1);
    let k = r.truncation_level_history[0];
    let flow = mfglab::pde::uncontrolled_flow(&m, g).unwrap();
    let (_, direct) = solve_hjb(&m.truncate(k).unwrap(), &flow, g).unwrap();
    assert_eq!(direct.actions, r.final_policy.actions);
}

#[test]
fn decoupled_nash_gap_is_exactly_zero() {
    let m = presets::decoupled::<f64>();
    let (g, r) = solve(&m, 150);
    for n in [5, 40] {
        let row = nash_gap(&m, &r, n, 8, g, 3).unwrap();
        assert_eq!(row.gap, 0.0);
        assert_eq!(row.gap_se, 0.0);
    }
}

#[test]
fn chaos_table_shrinks_with_n() {
    let m = presets::weakly_coupled::<f64>();
    let (_, r) = solve(&m, 200);
    let k = *r.truncation_level_history.last().unwrap();
    let t = chaos_study(&m.truncate(k).unwrap(), &r.final_policy, &r.final_flow, &[50, 200, 800], 10, 0.01, 2).unwrap();
    assert!(t.rows[2].w1_mean < t.rows[0].w1_mean);
    let fit = fit_rate(&t).unwrap();
    assert!(fit.slope < 0.0);
}
