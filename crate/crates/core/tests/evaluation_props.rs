mod common;

use ndarray::Array2;
use proptest::prelude::*;
use proxens::data::{prepare, synthetic::SyntheticKind, PipelineConfig};
use proxens::ensemble::{training_range, EnsembleConfig, ValidationProblem, Variant};
use proxens::evaluation::{average_ranks, log_spaced, mape, rmse, sweep_epsilon, wilcoxon_signed_rank};
use proxens::machines::{MachineBank, MachineSpec, Registry};

fn pairs(max: usize) -> impl Strategy<Value = (Vec<f64>, Vec<f64>)> {
    (1..=max).prop_flat_map(|n| (prop::collection::vec(0.1f64..100.0, n), prop::collection::vec(-100.0f64..100.0, n)))
}

proptest! {
    #[test]
    fn rmse_is_nonnegative_and_order_free((a, p) in pairs(30), rot in 0usize..30) {
        let r = rmse(&a, &p).unwrap();
        prop_assert!(r >= 0.0);
        prop_assert_eq!(rmse(&a, &a).unwrap(), 0.0);
        let k = rot % a.len();
        let (mut a2, mut p2) = (a.clone(), p.clone());
        a2.rotate_left(k);
        p2.rotate_left(k);
        prop_assert!((rmse(&a2, &p2).unwrap() - r).abs() <= 1e-12 * r.max(1.0));
        if r == 0.0 {
            prop_assert_eq!(&a, &p);
        }
    }

    #[test]
    fn mape_ignores_scale((a, p) in pairs(30), c in prop_oneof![-50.0f64..-0.01, 0.01f64..50.0]) {
        let m = mape(&a, &p).unwrap();
        let ac: Vec<f64> = a.iter().map(|x| x * c).collect();
        let pc: Vec<f64> = p.iter().map(|x| x * c).collect();
        prop_assert!((mape(&ac, &pc).unwrap() - m).abs() <= 1e-9 * m.max(1.0));
    }

    #[test]
    fn exact_wilcoxon_matches_enumeration(d in prop::collection::vec(-6i32..=6, 5..=12)) {
        let a: Vec<f64> = d.iter().map(|&x| x as f64 * 0.5).collect();
        let b = vec![0.0; a.len()];
        let Ok(r) = wilcoxon_signed_rank(&a, &b) else { return Ok(()) };
        prop_assert!(r.exact);
        prop_assert!((r.p_value - common::wilcoxon_enumerated(&a, &b)).abs() < 1e-12);
    }

    #[test]
    fn mean_rank_is_centered(v in prop::collection::vec(0.0f64..5.0, 12), models in 2usize..5) {
        let rows = v.len() / models;
        let m = Array2::from_shape_vec((rows, models), v[..rows * models].iter().map(|x| x.round()).collect()).unwrap();
        let ranks = average_ranks(&m).unwrap();
        let mean = ranks.iter().sum::<f64>() / models as f64;
        prop_assert!((mean - (models as f64 + 1.0) / 2.0).abs() < 1e-12);
    }
}

#[test]
fn qualified_count_grows_along_an_epsilon_sweep() {
    let s = SyntheticKind::Sinusoid.generate::<f64>(300, 5);
    let p = prepare(&s, &PipelineConfig { window: 6, cumsum_columns: Some(vec![]), ..Default::default() }).unwrap();
    let reg = Registry::default();
    let roster = [MachineSpec::new("ridge"), MachineSpec::new("knn")];
    let base = EnsembleConfig::new(Variant::Dpe, 0.01, 0.5);
    let bank = MachineBank::fit(&reg, &roster, &p.dataset.pairs()[training_range(&p.dataset, &base).unwrap()], 1).unwrap();
    let problem = ValidationProblem::new(&bank, &p.dataset, &base).unwrap();
    let points = sweep_epsilon(&problem, &base, &log_spaced(0.001, 0.5, 12)).unwrap();
    assert_eq!(points.len(), 12);
    for w in points.windows(2) {
        assert!(w[1].mean_qualified_count >= w[0].mean_qualified_count);
        assert!(w[1].fallback_rate <= w[0].fallback_rate);
    }
}
