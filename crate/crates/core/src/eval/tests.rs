use super::*;
use crate::d4::D4;
use proptest::prelude::*;

fn mask(w: usize, h: usize, bits: &[bool]) -> BinaryMask {
    BinaryMask::new(w, h, bits.to_vec()).unwrap()
}

#[test]
fn binarize_boundary_and_monotonicity() {
    let p = FloatRaster::new(4, 1, vec![0.0, 0.49, 0.5, 1.0]).unwrap();
    assert_eq!(binarize(&p, 0.5).bits(), &[false, false, true, true]);
    assert_eq!(binarize(&FloatRaster::filled(3, 3, 0.0).unwrap(), 0.5).count(), 0);
    let mut last = usize::MAX;
    for t in [0.0, 0.3, 0.49, 0.5, 0.51, 1.0, 1.1] {
        let c = binarize(&p, t).count();
        assert!(c <= last);
        last = c;
    }
}

#[test]
fn confusion_on_simple_cases() {
    let truth: Vec<bool> = (0..100).map(|i| i % 20 == 0).collect();
    let t = mask(10, 10, &truth);
    let all = BinaryMask::filled(10, 10, true);
    assert_eq!(confusion(&t, &t, &all).unwrap(), ConfusionCounts { tp: 5, fp: 0, fn_: 0, tn: 95 });
    let none = BinaryMask::filled(10, 10, false);
    let c = confusion(&none, &t, &all).unwrap();
    assert_eq!((c.tp, c.fn_), (0, 5));
    assert!(matches!(confusion(&t, &t, &none), Err(Error::Empty(_))));
    assert!(matches!(confusion(&t, &BinaryMask::filled(5, 5, false), &all), Err(Error::Shape(_))));
}

proptest! {
    #[test]
    fn confusion_matches_pixel_loop(bits in prop::collection::vec(0u8..8, 64)) {
        let p = mask(8, 8, &bits.iter().map(|b| b & 1 != 0).collect::<Vec<_>>());
        let t = mask(8, 8, &bits.iter().map(|b| b & 2 != 0).collect::<Vec<_>>());
        let v = mask(8, 8, &bits.iter().map(|b| b & 4 != 0).collect::<Vec<_>>());
        let mut oracle = [0u64; 4];
        for y in 0..8 {
            for x in 0..8 {
                if v.get(x, y) {
                    let k = match (p.get(x, y), t.get(x, y)) {
                        (true, true) => 0,
                        (true, false) => 1,
                        (false, true) => 2,
                        (false, false) => 3,
                    };
                    oracle[k] += 1;
                }
            }
        }
        match confusion(&p, &t, &v) {
            Ok(c) => prop_assert_eq!([c.tp, c.fp, c.fn_, c.tn], oracle),
            Err(Error::Empty(_)) => prop_assert_eq!(oracle.iter().sum::<u64>(), 0),
            Err(e) => prop_assert!(false, "{e}"),
        }
    }

    #[test]
    fn metrics_are_d4_invariant(bits in prop::collection::vec(0u8..8, 48), t in 0usize..8) {
        let t = D4::ALL[t];
        let p = mask(8, 6, &bits.iter().map(|b| b & 1 != 0).collect::<Vec<_>>());
        let g = mask(8, 6, &bits.iter().map(|b| b & 2 != 0).collect::<Vec<_>>());
        let v = BinaryMask::filled(8, 6, true);
        let a = confusion(&p, &g, &v).unwrap();
        let b = confusion(&p.transformed(t), &g.transformed(t), &v.transformed(t)).unwrap();
        prop_assert_eq!(metrics(a), metrics(b));
    }

    #[test]
    fn iou_identity_and_bound(tp in 0u64..1_000_000, fp in 0u64..1_000_000, fn_ in 0u64..1_000_000, tn in 0u64..1_000_000) {
        let m = metrics(ConfusionCounts { tp, fp, fn_, tn });
        if let (Some(p), Some(r), Some(iou)) = (m.precision, m.recall, m.iou) {
            if let Some(via) = iou_from_precision_recall(p, r) {
                prop_assert!((via - iou).abs() <= 1e-12);
            }
            prop_assert!(iou <= p.min(r) + 1e-15);
        }
    }
}

#[test]
fn undefined_ratios_stay_undefined() {
    let m = metrics(ConfusionCounts { tp: 0, fp: 0, fn_: 0, tn: 10 });
    assert_eq!((m.iou, m.precision, m.recall), (None, None, None));
    assert_eq!(m.accuracy, Some(1.0));
}

#[test]
fn all_background_prediction_with_five_percent_roads() {
    let m = metrics(ConfusionCounts { tp: 0, fp: 0, fn_: 5, tn: 95 });
    assert_eq!(m.accuracy, Some(0.95));
    assert_eq!(m.iou, Some(0.0));
    assert_eq!(m.precision, None);
}

#[test]
fn overlay_colors_biject_with_counts() {
    let bits: Vec<u8> = (0..64u32).map(|i| ((i * 37 + 11) % 8) as u8).collect();
    let p = mask(8, 8, &bits.iter().map(|b| b & 1 != 0).collect::<Vec<_>>());
    let t = mask(8, 8, &bits.iter().map(|b| b & 2 != 0).collect::<Vec<_>>());
    let v = mask(8, 8, &bits.iter().map(|b| b & 4 != 0).collect::<Vec<_>>());
    let img = overlay(&p, &t, &v).unwrap();
    let count = |c: [u8; 3]| img.pixels.iter().filter(|&&px| px == c).count() as u64;
    let c = confusion(&p, &t, &v).unwrap();
    assert_eq!([count(TP_COLOR), count(FP_COLOR), count(FN_COLOR), count(TN_COLOR)], [c.tp, c.fp, c.fn_, c.tn]);
    assert_eq!(count(INVALID_COLOR), 64 - c.total());

    let same = overlay(&t, &t, &v).unwrap();
    assert!(same.pixels.iter().all(|&px| [TP_COLOR, TN_COLOR, INVALID_COLOR].contains(&px)));
    let none = overlay(&BinaryMask::filled(8, 8, false), &t, &v).unwrap();
    assert!(none.pixels.iter().all(|&px| px != TP_COLOR && px != FP_COLOR));
}

fn report(area: &str, t_max: u32, lambda: f64, c: ConfusionCounts) -> MetricsReport {
    MetricsReport { area: area.into(), model: "mini_fcn".into(), t_max, lambda, metrics: metrics(c) }
}

#[test]
fn sweep_csv_layout() {
    assert_eq!(sweep_report(&[]).unwrap(), "area,model,t_max,lambda,iou,precision,recall,accuracy\n");
    let rows = [
        report("b", 0, 1.0, ConfusionCounts { tp: 1, fp: 1, fn_: 2, tn: 6 }),
        report("a", 8, 2.0, ConfusionCounts { tp: 0, fp: 0, fn_: 0, tn: 3 }),
        report("a", 2, 8.0, ConfusionCounts { tp: 3, fp: 0, fn_: 0, tn: 1 }),
    ];
    let text = sweep_report(&rows).unwrap();
    assert_eq!(
        text,
        "area,model,t_max,lambda,iou,precision,recall,accuracy\n\
         a,mini_fcn,2,8,100.00,100.00,100.00,100.00\n\
         a,mini_fcn,8,2,NA,NA,NA,100.00\n\
         b,mini_fcn,0,1,25.00,50.00,33.33,70.00\n"
    );
    assert_eq!(sweep_report(&rows[..1]).unwrap().lines().count(), 2);
}

proptest! {
    #[test]
    fn sweep_csv_reserializes_identically(
        cells in prop::collection::vec((0u32..9, 1u32..9, 0u64..500, 0u64..500, 0u64..500, 0u64..500), 0..12)
    ) {
        let reports: Vec<_> = cells
            .iter()
            .map(|&(t, l, tp, fp, fn_, tn)| report("area", t, f64::from(l), ConfusionCounts { tp, fp, fn_, tn: tn + 1 }))
            .collect();
        let text = sweep_report(&reports).unwrap();
        let parsed = parse_sweep_csv(&text).unwrap();
        prop_assert_eq!(write_sweep_csv(&parsed).unwrap(), text);
    }
}
