mod common;

use pdsa_core::contingency::enumerate;
use pdsa_core::grid::bundled;
use pdsa_core::scenario::{dispatch_snapshot, generate_mc_year, DispatchConfig, WeatherModel};
use pdsa_core::screening::{eea_cct, screen, ScreeningConfig};
use rand::seq::index::sample;

use common::{bisect_cct, delayed, desk, los_only_options, manual_snapshot, smib, smib_options};

#[test]
fn smib_cct_close_to_simulated_bisection() {
    let case = smib();
    let snap = manual_snapshot(&case, &[("G1", 800.0), ("INF", 0.0)], 0.0);
    let c = delayed(&case, "L1", "B1", 0.2);
    let sim = bisect_cct(&case, &snap, &c, &smib_options(), 1.0, 0.001).unwrap();
    let eea = eea_cct(&case, &snap, &c, 10.0, 1.02).unwrap();
    assert!((eea - sim).abs() <= 0.2 * sim, "equal area {eea}, simulated {sim}");
}

#[test]
fn single_machine_without_accelerating_power_is_capped() {
    let case = smib();
    let mut snap = manual_snapshot(&case, &[("G1", 0.0)], 0.0);
    snap.load_p.clear();
    snap.load_q.clear();
    let c = delayed(&case, "L1", "B1", 0.2);
    assert_eq!(eea_cct(&case, &snap, &c, 7.5, 1.02).unwrap(), 7.5);
}

#[test]
fn desk_weak_export_cct_is_conservative() {
    let case = desk();
    let weather = WeatherModel::from_json(bundled::WEATHER).unwrap();
    let year = generate_mc_year(&weather, 21, 0);
    let c = enumerate(&case).into_iter().find(|c| c.id == "CS1@S1").unwrap();
    let opts = los_only_options(3.0);
    let mut rng = pdsa_core::rng::stream(21, pdsa_core::rng::Purpose::Synthetic, 0, 0, 0);
    let mut checked = 0;
    let mut ok = 0;
    for h in sample(&mut rng, year.len(), 300).into_iter() {
        let Ok(snap) = dispatch_snapshot(&case, &DispatchConfig::default(), &year[h], 0) else {
            continue;
        };
        let eea = eea_cct(&case, &snap, &c, 10.0, 1.02).unwrap();
        let sim = bisect_cct(&case, &snap, &c, &opts, 1.0, 0.005).unwrap_or(f64::INFINITY);
        eprintln!("hour {h}: equal area {eea:.3} s, simulated {sim:.3} s");
        checked += 1;
        if eea <= sim + 0.050 {
            ok += 1;
        }
        if checked == 100 {
            break;
        }
    }
    assert_eq!(checked, 100);
    assert!(ok >= 95, "{ok}/100 conservative");
}

#[test]
fn screening_is_deterministic_and_margin_monotone() {
    let case = desk();
    let snap = common::desk_snapshot(&case, 3009);
    let list = enumerate(&case);
    let mut prev: Option<Vec<bool>> = None;
    for margin in [-0.02, 0.0, 0.05, 0.1] {
        let cfg = ScreeningConfig {
            cct_margin_s: margin,
            ..Default::default()
        };
        let flags: Vec<bool> = list.iter().map(|c| !screen(&case, &snap, Some(c), &cfg).secure).collect();
        let again: Vec<bool> = list.iter().map(|c| !screen(&case, &snap, Some(c), &cfg).secure).collect();
        assert_eq!(flags, again);
        if let Some(p) = &prev {
            assert!(p.iter().zip(&flags).all(|(a, b)| !a || *b), "margin {margin}");
        }
        prev = Some(flags);
    }
}
