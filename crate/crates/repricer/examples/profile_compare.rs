use std::time::Instant;
use repricer::demand::{DemandModel, FeatureSpec};
use repricer::hjb_solver::{PriceGrid, SolverParams};
use repricer::market_sim::{gen_trajectories, ScenarioConfig, ScenarioFamily};
use repricer::oracle_eval::{
    best_fixed_price, evaluate_nah, heuristic_prices_on_grid, solve_ofl_1, solve_ofl_h,
    ActionSets, Trajectory, UpdateGrid,
};

fn main() {
    let beta = vec![-3.89, -0.56, -0.01, 0.07, -0.05];
    let model = DemandModel::new(FeatureSpec::standard(), beta, 10.0).unwrap();
    let grid = PriceGrid::with_step(0.01, 2000).unwrap();
    let params = SolverParams::new(100, 10, 3.0, 0.01, 0.9995, grid).unwrap();
    let cfg = ScenarioConfig::benchmark_scenario(ScenarioFamily::NoTrend, 0.3, 7);
    let traj = gen_trajectories(&cfg).unwrap();
    let field = Trajectory::try_from(&traj).unwrap();
    let h = field.step_len();

    let t0 = Instant::now();
    let (fp, vfix) = best_fixed_price(&field, &params, &model).unwrap();
    println!("best_fixed_price: {:?} (p={fp:.2}, v={vfix:.4})", t0.elapsed());

    let t0 = Instant::now();
    let upper = solve_ofl_h(&field, &params, &model, ActionSets::Undercuts, &[fp]).unwrap();
    println!("solve_ofl_h:      {:?} (v={:.4})", t0.elapsed(), upper.values.value(0, 10));

    let t0 = Instant::now();
    let locked = solve_ofl_1(&field, &params, &model, ActionSets::Undercuts).unwrap();
    println!("solve_ofl_1:      {:?} (v={:.4})", t0.elapsed(), locked.value(0, 10));

    let t0 = Instant::now();
    let map_h = heuristic_prices_on_grid(&field, &params, &model, UpdateGrid::Subperiod, h).unwrap();
    println!("nah_map_h:        {:?}", t0.elapsed());

    let t0 = Instant::now();
    let v = evaluate_nah(&field, &params, &model, &map_h, UpdateGrid::Subperiod).unwrap();
    println!("evaluate_nah h:   {:?} (v={:.4})", t0.elapsed(), v.value(0, 10));

    let t0 = Instant::now();
    let map_1 = heuristic_prices_on_grid(&field, &params, &model, UpdateGrid::Period, 1.0).unwrap();
    println!("nah_map_1:        {:?}", t0.elapsed());

    let t0 = Instant::now();
    let v = evaluate_nah(&field, &params, &model, &map_1, UpdateGrid::Period).unwrap();
    println!("evaluate_nah 1:   {:?} (v={:.4})", t0.elapsed(), v.value(0, 10));
}
