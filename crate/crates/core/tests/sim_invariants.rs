use dyad_ggc::pipeline::{run_analysis, AnalysisReport, BandConfig, PipelineConfig};
use dyad_ggc::sim::{simulate_session, SimConfig};

const SEEDS: u64 = 20;
const BAND: (f64, f64) = (2.15, 7.0);

fn run(gain: f64, seed: u64) -> AnalysisReport {
    let sim = SimConfig {
        coupling_gain: gain,
        seed: seed * 100_000,
        ..Default::default()
    };
    let trials: Vec<_> = simulate_session(&sim, 6, 9).unwrap().into_iter().map(|t| t.record).collect();
    let mut cfg = PipelineConfig::default();
    cfg.surrogate.seed = seed;
    cfg.bands = BandConfig::Fixed { f1: BAND.0, f2: BAND.1 };
    run_analysis(&trials, &cfg).unwrap()
}

/// Jaccard index between the bins significant in most dyads and the injected band.
fn group_jaccard(r: &AnalysisReport) -> f64 {
    let freqs = &r.dyads[0].spectrum.freqs;
    let (mut both, mut either) = (0usize, 0usize);
    for (k, f) in freqs.iter().enumerate() {
        let votes = r.dyads.iter().filter(|d| d.significant.as_ref().unwrap().0[k]).count();
        let sig = 2 * votes > r.dyads.len();
        let inside = (BAND.0..=BAND.1).contains(f);
        both += usize::from(sig && inside);
        either += usize::from(sig || inside);
    }
    both as f64 / either as f64
}

#[test]
fn direction_and_band_are_recovered_across_seeds() {
    for gain in [0.5, 0.8] {
        let (mut direction, mut overlap) = (0, 0);
        for seed in 1..=SEEDS {
            let r = run(gain, seed);
            direction += usize::from(r.dyads.iter().all(|d| d.influence[1].integral_ab > d.influence[1].integral_ba));
            overlap += usize::from(group_jaccard(&r) >= 0.5);
        }
        assert!(direction * 100 >= 95 * SEEDS as usize, "gain {gain}: direction {direction}/{SEEDS}");
        assert!(overlap * 100 >= 95 * SEEDS as usize, "gain {gain}: overlap {overlap}/{SEEDS}");
    }
}

#[test]
fn no_coupling_leaves_no_significant_band() {
    for seed in 1..=3 {
        let r = run(0.0, seed);
        let q = r.threshold.as_ref().unwrap().band_integral(BAND.0, BAND.1).unwrap();
        assert!(r.dyads.iter().all(|d| d.influence[1].integral_ab < q && d.influence[1].integral_ba < q));
    }
}
