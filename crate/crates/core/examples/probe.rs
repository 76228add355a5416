fn main() {
    use chronos_core::follow_controller::*;
    let traj: Vec<Waypoint> = {
        let (r, speed, duration) = (1.4, 1.0, 60.0);
        let n = (duration * 8.0) as usize;
        (0..=n).map(|i| {
            let t = duration * i as f64 / n as f64;
            let theta = speed * t / r;
            Waypoint { t, x: r * theta.cos(), y: r * theta.sin() }
        }).collect()
    };
    let stationary = vec![Waypoint { t: 0.0, x: 0.0, y: 0.0 }];
    for gain in [0.1, 0.15, 0.2, 0.3] {
        for window in [1usize, 4, 12, 24] {
            let mut rmse_circle = 0.0;
            let mut rmse_stat = 0.0;
            let trials = 8;
            for seed in 0..trials {
                let config = TrackerConfig { step_gain: gain, window, ..TrackerConfig::default() };
                let t = simulate_follow(&traj, 0.15, [0.0, 0.0], 60.0, &config, seed).unwrap();
                rmse_circle += t.rmse / trials as f64;
                let t = simulate_follow(&stationary, 0.15, [1.4, 0.0], 60.0, &config, seed + 100).unwrap();
                rmse_stat += t.rmse / trials as f64;
            }
            println!("gain {gain:<4} window {window:>2}: circle rmse {rmse_circle:.4}  stationary rmse {rmse_stat:.4}");
        }
    }
}
