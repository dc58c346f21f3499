use tfhts_core::ablation::{window_sets, ExperimentSetup};
use tfhts_core::data::{PatchConfig, SplitRatios};
use tfhts_core::eval::MetricScale;
use tfhts_core::synthetic::{generate, oracle_mae, oracle_mae_with_draws, SyntheticSpec};

fn two_regime() -> SyntheticSpec {
    SyntheticSpec {
        n_channels: 4,
        n_regimes: 2,
        slopes: vec![-1.0, 1.0],
        noise_sigma: 0.0,
        periods: 10,
        ..Default::default()
    }
}

#[test]
fn regime_blind_oracle_matches_closed_form() {
    // mean |β − mean β| times the mean step factor Σ_j (j/h) / h = (h+1)/(2h)
    let spec = two_regime();
    let h = spec.horizon as f64;
    let closed = 1.0 * (h + 1.0) / (2.0 * h);
    let mc = oracle_mae_with_draws(&spec, false, MetricScale::Raw, 20_000).unwrap();
    assert!((mc - closed).abs() / closed < 0.01, "{mc} vs {closed}");
    assert_eq!(oracle_mae_with_draws(&spec, true, MetricScale::Raw, 20_000).unwrap(), 0.0);
}

#[test]
fn acceptance_spec_oracle_gap() {
    let spec = SyntheticSpec::default();
    let informed = oracle_mae(&spec, true, MetricScale::Raw).unwrap();
    let blind = oracle_mae(&spec, false, MetricScale::Raw).unwrap();
    let h = spec.horizon as f64;
    let closed = 0.665 * (h + 1.0) / (2.0 * h);
    assert!(informed < blind);
    assert!((blind - closed).abs() / closed < 0.01, "{blind} vs {closed}");
    // noise-only error: E|N(0, σ)| = σ·√(2/π)
    let noise = spec.noise_sigma * (2.0 / std::f64::consts::PI).sqrt();
    assert!((informed - noise).abs() / noise < 0.02, "{informed} vs {noise}");
}

#[test]
fn windows_align_to_period_starts() {
    let spec = SyntheticSpec {
        periods: 20,
        ..Default::default()
    };
    let (d, emb) = generate(&spec).unwrap();
    assert_eq!(emb.len(), spec.n_channels);
    let setup = ExperimentSetup {
        input_len: spec.input_len,
        window_stride: spec.period_len(),
        split: SplitRatios::default(),
        patch: PatchConfig::default(),
        encoder: Default::default(),
        fusion: Default::default(),
        normalize: true,
        scale: MetricScale::Normalized,
        train: Default::default(),
    };
    let w = window_sets(&d, &setup, spec.horizon).unwrap();
    for s in w.train.iter().chain(&w.val).chain(&w.test) {
        assert_eq!(s.start % spec.period_len(), 0);
    }
    assert_eq!(w.train.len(), spec.n_channels * 14);
    assert_eq!(w.val.len(), spec.n_channels * 2);
    assert_eq!(w.test.len(), spec.n_channels * 4);
}
