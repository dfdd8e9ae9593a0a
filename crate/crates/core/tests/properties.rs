use evseg_core::event::{Event, EventSlice, Polarity, SensorGeometry};
use evseg_core::metrics::{bounding_box, detection_rate, iou, BinaryMask, DrNormalization};
use evseg_core::voxel::build_voxel_grid;
use proptest::prelude::*;

fn arb_slice() -> impl Strategy<Value = EventSlice> {
    (2usize..24, 2usize..24).prop_flat_map(|(w, h)| {
        let event = (1u64..1_000_000, 0..w as u16, 0..h as u16, any::<bool>());
        prop::collection::vec(event, 1..400).prop_map(move |list| {
            let g = SensorGeometry::new(w, h).unwrap();
            let events = list
                .into_iter()
                .map(|(t, x, y, pos)| {
                    Event::new(t, x, y, if pos { Polarity::Positive } else { Polarity::Negative })
                })
                .collect();
            EventSlice::new(g, events).unwrap()
        })
    })
}

fn arb_mask(w: usize, h: usize) -> impl Strategy<Value = BinaryMask> {
    prop::collection::vec(any::<bool>(), w * h)
        .prop_map(move |bits| BinaryMask::new(SensorGeometry::new(w, h).unwrap(), bits).unwrap())
}

fn shifted(mask: &BinaryMask, dx: usize, dy: usize) -> BinaryMask {
    let g = mask.geometry();
    BinaryMask::from_fn(g, |x, y| x >= dx && y >= dy && mask.get(x - dx, y - dy))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(100))]

    #[test]
    fn voxel_grid_conserves_polarity(slice in arb_slice(), bins in 1usize..9) {
        let grid = build_voxel_grid(&slice, bins).unwrap();
        let expected: f64 = slice.events().iter().map(|e| e.p.as_f64()).sum();
        prop_assert!((grid.mass() - expected).abs() <= 1e-12, "{} vs {}", grid.mass(), expected);
    }

    #[test]
    fn detection_rate_ignores_common_shift(
        pred in arb_mask(12, 10),
        gt in arb_mask(12, 10),
        dx in 0usize..4,
        dy in 0usize..4,
    ) {
        // pad so nothing leaves the sensor
        let g = SensorGeometry::new(16, 14).unwrap();
        let pad = |m: &BinaryMask| BinaryMask::from_fn(g, |x, y| x < 12 && y < 10 && m.get(x, y));
        let (p, t) = (pad(&pred), pad(&gt));
        for norm in [DrNormalization::GtBox, DrNormalization::BoxIou] {
            prop_assert_eq!(
                detection_rate(&p, &t, norm).unwrap(),
                detection_rate(&shifted(&p, dx, dy), &shifted(&t, dx, dy), norm).unwrap()
            );
        }
    }

    #[test]
    fn bounding_box_is_tight(mask in arb_mask(9, 7)) {
        match bounding_box(&mask) {
            None => prop_assert!(mask.is_empty()),
            Some(b) => {
                let set: Vec<(usize, usize)> = (0..7)
                    .flat_map(|y| (0..9).map(move |x| (x, y)))
                    .filter(|&(x, y)| mask.get(x, y))
                    .collect();
                prop_assert!(set.iter().all(|&(x, y)| b.contains(x, y)));
                prop_assert!(set.iter().any(|&(x, _)| x == b.x_min));
                prop_assert!(set.iter().any(|&(x, _)| x == b.x_max));
                prop_assert!(set.iter().any(|&(_, y)| y == b.y_min));
                prop_assert!(set.iter().any(|&(_, y)| y == b.y_max));
            }
        }
    }

    #[test]
    fn iou_is_one_only_for_equal_masks(a in arb_mask(6, 5), b in arb_mask(6, 5)) {
        let v = iou(&a, &b).unwrap();
        prop_assert!((0.0..=1.0).contains(&v));
        if !a.is_empty() || !b.is_empty() {
            prop_assert_eq!(v == 1.0, a == b);
        }
    }
}
