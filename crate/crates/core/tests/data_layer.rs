mod common;

use std::collections::BTreeMap;

use proptest::prelude::*;

use common::u;
use llmpanel_core::exposure::{
    binarize_above_median, compute_exposure, quartile_bins, Classification, ExposureScore,
    ExposureVariant, TaskRecord,
};
use llmpanel_core::ingest::{
    aggregate_earnings, aggregate_unemployment, DeflatorSeries, EmpStat, MicroRecord,
};
use llmpanel_core::{
    check_balanced, donor_pool_for, split_pre_post, PanelCell, PanelDataset, TimeIndex,
    TreatmentSpec,
};

/// Panel with 4 units over 6 months; `mask` bit k controls whether cell k exists.
fn masked_panel(mask: u32) -> PanelDataset {
    let start = TimeIndex::new(2022, 8).unwrap();
    let units = ["a", "b", "c", "t"];
    let mut cells = vec![];
    for (i, code) in units.iter().enumerate() {
        for k in 0..6 {
            // the treated unit is always fully observed
            if *code == "t" || mask & (1 << (i * 6 + k)) != 0 {
                cells.push((
                    u(code),
                    start.add_months(k as i64),
                    PanelCell::new(1.0 + k as f64, 1).unwrap(),
                ));
            }
        }
    }
    PanelDataset::with_grid(
        "y",
        units.iter().map(|c| u(c)).collect(),
        (0..6).map(|k| start.add_months(k)).collect(),
        cells,
    )
    .unwrap()
}

proptest! {
    #[test]
    fn pre_post_partition(n in 2usize..30, onset_off in 1usize..29) {
        prop_assume!(onset_off < n);
        let start = TimeIndex::new(2020, 3).unwrap();
        let p = common::grid(&[("a", vec![0.0; n]), ("b", vec![1.0; n])], start);
        let onset = start.add_months(onset_off as i64);
        let s = TreatmentSpec::new(&p, common::set(&["a"]), common::set(&["b"]), onset).unwrap();
        let (pre, post) = split_pre_post(&p, &s);
        prop_assert_eq!(pre.len() + post.len(), n);
        prop_assert!(pre.iter().all(|&t| t < onset));
        prop_assert!(post.iter().all(|&t| t >= onset));
    }

    #[test]
    fn donor_pool_monotone_in_observations(mask in 0u32..(1 << 18), extra in 0u32..(1 << 18)) {
        let small = masked_panel(mask);
        let big = masked_panel(mask | extra);
        let spec_s = TreatmentSpec::new(&small, common::set(&["t"]), common::set(&["a", "b", "c"]), TimeIndex::default_onset()).unwrap();
        let spec_b = TreatmentSpec::new(&big, common::set(&["t"]), common::set(&["a", "b", "c"]), TimeIndex::default_onset()).unwrap();
        let ps = donor_pool_for(&small, &u("t"), &spec_s).unwrap();
        let pb = donor_pool_for(&big, &u("t"), &spec_b).unwrap();
        prop_assert!(ps.iter().all(|d| pb.contains(d)));
    }

    #[test]
    fn balance_is_pairwise(mask in 0u32..(1 << 18)) {
        let p = masked_panel(mask);
        let all: Vec<_> = p.units().to_vec();
        let whole = check_balanced(&p, &all).unwrap();
        let mut pairs = true;
        for i in 0..all.len() {
            for j in i + 1..all.len() {
                pairs &= check_balanced(&p, [&all[i], &all[j]]).unwrap();
            }
        }
        prop_assert_eq!(whole, pairs);
    }
}

fn random_tasks(shares: &[(u8, u8, f64)]) -> Vec<TaskRecord> {
    shares
        .iter()
        .enumerate()
        .map(|(k, &(occ, class, share))| TaskRecord {
            occupation: u(&format!("occ{occ}")),
            task_id: format!("task{k}"),
            prompt_share: share,
            classification: match class {
                0 => Classification::Automative,
                1 => Classification::Augmentative,
                _ => Classification::Neither,
            },
        })
        .collect()
}

proptest! {
    #[test]
    fn exposure_scale_free(
        tasks in proptest::collection::vec((0u8..6, 0u8..3, prop_oneof![Just(0.0), 0.0001f64..1.0]), 8..60),
        c in 0.01f64..100.0,
    ) {
        let base = random_tasks(&tasks);
        let scaled: Vec<_> = base.iter().cloned().map(|mut t| { t.prompt_share *= c; t }).collect();
        let a = compute_exposure(&base).unwrap();
        let b = compute_exposure(&scaled).unwrap();
        prop_assert_eq!(&a, &b);
        for v in ExposureVariant::ALL {
            prop_assert_eq!(binarize_above_median(&a, v).unwrap(), binarize_above_median(&b, v).unwrap());
            if a.len() >= 4 {
                prop_assert_eq!(quartile_bins(&a, v).unwrap(), quartile_bins(&b, v).unwrap());
            }
        }
    }

    #[test]
    fn exposure_partition_and_bounds(
        tasks in proptest::collection::vec((0u8..8, 0u8..3, prop_oneof![Just(0.0), 0.0001f64..1.0]), 4..80),
    ) {
        let scores = compute_exposure(&random_tasks(&tasks)).unwrap();
        for s in &scores {
            prop_assert!(s.automative <= s.overall && s.augmentative <= s.overall);
            prop_assert!(s.automative + s.augmentative <= s.overall + 1e-15);
        }
        if scores.len() >= 2 {
            let (t, c) = binarize_above_median(&scores, ExposureVariant::Overall).unwrap();
            prop_assert!(t.is_disjoint(&c));
            prop_assert_eq!(t.len() + c.len(), scores.len());
        }
    }
}

/// Percentile by the (n-1)p rule, computed from order statistics independently.
fn reference_percentile(values: &[f64], p: f64) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let h = (v.len() as f64 - 1.0) * p;
    let below = h as usize;
    let next = (below + 1).min(v.len() - 1);
    v[below] * (1.0 - (h - below as f64)) + v[next] * (h - below as f64)
}

#[test]
fn quartiles_match_reference_percentiles() {
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
    let scores: Vec<ExposureScore> = (0..100)
        .map(|i| ExposureScore {
            occupation: u(&format!("o{i:03}")),
            overall: rng.random::<f64>(),
            automative: 0.0,
            augmentative: 0.0,
            n_tasks: 10,
        })
        .collect();
    let values: Vec<f64> = scores.iter().map(|s| s.overall).collect();
    let cuts: Vec<f64> = [0.25, 0.5, 0.75]
        .iter()
        .map(|&p| reference_percentile(&values, p))
        .collect();
    let bins = quartile_bins(&scores, ExposureVariant::Overall).unwrap();
    let mut counts = [0usize; 4];
    for s in &scores {
        let expect = 1 + cuts.iter().filter(|&&c| s.overall > c).count() as u8;
        assert_eq!(bins[&s.occupation], expect);
        counts[expect as usize - 1] += 1;
    }
    for c in counts {
        assert!((24..=26).contains(&c), "{counts:?}");
    }
}

fn micro(occ: u8, month: u32, stat: u8, earn: Option<f64>) -> MicroRecord {
    MicroRecord {
        occupation: u(&format!("o{occ}")),
        period: TimeIndex::new(2015, month).unwrap(),
        empstat: match stat {
            0 => EmpStat::Employed,
            1 => EmpStat::Unemployed,
            _ => EmpStat::Nilf,
        },
        weekly_earnings: earn,
    }
}

fn deflator() -> DeflatorSeries {
    let mut m = BTreeMap::new();
    m.insert(DeflatorSeries::base_period(), 1.0);
    for month in 1..=12 {
        m.insert(
            TimeIndex::new(2015, month).unwrap(),
            1.0 + month as f64 / 17.0,
        );
    }
    DeflatorSeries::new(m).unwrap()
}

fn cells(p: &PanelDataset) -> Vec<(String, TimeIndex, f64, u32)> {
    p.iter_cells()
        .map(|(u, t, c)| (u.to_string(), t, c.value, c.n_obs))
        .collect()
}

proptest! {
    #[test]
    fn aggregation_invariants(
        raw in proptest::collection::vec((0u8..4, 1u32..4, 0u8..3, proptest::option::of(0.0f64..3000.0)), 1..120),
        seed in any::<u64>(),
        c in 0.1f64..10.0,
    ) {
        use rand::seq::SliceRandom;
        use rand::SeedableRng;
        let records: Vec<_> = raw.iter().map(|&(o, m, s, e)| micro(o, m, s, e)).collect();
        let mut shuffled = records.clone();
        shuffled.shuffle(&mut rand_chacha::ChaCha8Rng::seed_from_u64(seed));

        let un = aggregate_unemployment(&records).unwrap();
        prop_assert_eq!(cells(&un), cells(&aggregate_unemployment(&shuffled).unwrap()));
        for (_, _, c) in un.iter_cells() {
            prop_assert!((0.0..=1.0).contains(&c.value));
        }
        let lf = records.iter().filter(|r| r.empstat != EmpStat::Nilf).count();
        prop_assert_eq!(un.iter_cells().map(|(_, _, c)| c.n_obs as usize).sum::<usize>(), lf);

        let d = deflator();
        let ea = aggregate_earnings(&records, &d).unwrap();
        prop_assert_eq!(cells(&ea), cells(&aggregate_earnings(&shuffled, &d).unwrap()));

        let scaled: Vec<_> = records.iter().cloned().map(|mut r| { r.weekly_earnings = r.weekly_earnings.map(|e| e * c); r }).collect();
        let es = aggregate_earnings(&scaled, &d).unwrap();
        for ((_, _, a, _), (_, _, b, _)) in cells(&ea).iter().zip(cells(&es).iter()) {
            prop_assert!((a * c - b).abs() <= 1e-9 * b.abs().max(1.0));
        }
    }
}
