//! Scratch probe: empirical trusted-endpoint visit rates per mobility model.

use smi_core::rng::SimRng;
use smi_core::units::{Duration, Position, SimTime};
use smi_core::world::{step_node, Grid, GridConfig, MobilityModel, MobilityParams, NodeState, Rect};

fn main() {
    let grid_cfg = GridConfig::default();
    let mut grid = Grid::new(grid_cfg).unwrap();
    let mut rng = SimRng::derive(1, "endpoints", 0);
    let b = Rect { x0: 48000.0, y0: 48000.0, x1: 52000.0, y1: 52000.0 };
    let r = Rect { x0: 44000.0, y0: 44000.0, x1: 56000.0, y1: 56000.0 };
    grid.place_endpoints_in_rects(&[b, r], 350, &mut rng);
    let per = vec![1u32; 100];
    grid.place_endpoints_per_zone(&per, &mut rng).unwrap();

    let mut params = MobilityParams::default();
    params.street_spacing_m = 200.0;
    params.prob_walk_turn = 0.02;
    params.downtown_cells = vec![Rect { x0: 50000.0, y0: 48000.0, x1: 54000.0, y1: 52000.0 }];

    let radius = 150.0;
    let tick = Duration::from_secs(15);
    let models = [
        MobilityModel::RandomWalk,
        MobilityModel::DowntownManhattan,
        MobilityModel::Manhattan,
        MobilityModel::ProbRandomWalk,
        MobilityModel::SimpleTraffic,
    ];
    for model in models {
        let mut day_visits = [0u32; 4];
        let mut day_unique = [0u32; 4];
        let walkers = 20;
        for w in 0..walkers {
            let mut wrng = SimRng::derive(2, "walk", w);
            let start = Position::new(wrng.uniform(49000.0, 51000.0), wrng.uniform(49000.0, 51000.0));
            let mut node = NodeState::new(start, model, &mut wrng);
            let mut seen = std::collections::BTreeSet::new();
            let mut now = SimTime::ZERO;
            for slot in 0..(4 * 24) {
                // advance one hour of ticks
                for _ in 0..240 {
                    step_node(&mut node, now, tick, &grid.config, &params, &mut wrng, 2, w);
                    now = now + tick;
                }
                if let Some(ep) = grid.trusted_endpoint_near(&node.position, radius) {
                    day_visits[(slot / 24) as usize] += 1;
                    if seen.insert(ep.id) {
                        day_unique[(slot / 24) as usize] += 1;
                    }
                }
            }
        }
        let v: Vec<f64> = day_visits.iter().map(|&x| x as f64 / walkers as f64).collect();
        let u: Vec<f64> = day_unique.iter().map(|&x| x as f64 / walkers as f64).collect();
        println!("{model:?}: visits/day {v:.1?}  unique/day {u:.1?}");
    }
}
