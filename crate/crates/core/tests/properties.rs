use proptest::prelude::*;
use raplace_core::descriptor::{make_descriptor, read_store, write_store, DescriptorStore, Resolution};
use raplace_core::matcher::cross_correlate;
use raplace_core::radon::Sinogram;

fn sinogram(n_theta: usize, n_l: usize) -> impl Strategy<Value = Sinogram> {
    prop::collection::vec(0.0f64..10.0, n_theta * n_l)
        .prop_map(move |v| Sinogram::from_columns(n_theta, n_l, v).unwrap())
}

fn shaped() -> impl Strategy<Value = Sinogram> {
    (2usize..6, 3usize..40).prop_flat_map(|(t, l)| sinogram(t, l))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn correlation_peak_sits_at_the_applied_shift(s in shaped(), shift in 0isize..64) {
        let n = s.n_l() as isize;
        let q = make_descriptor(&s, 0);
        let c = make_descriptor(&s.shift_l(shift), 1);
        let corr = cross_correlate(&q, &c).unwrap();
        let auto = cross_correlate(&q, &q).unwrap();
        prop_assert_eq!(corr.argmax() as isize, shift.rem_euclid(n));
        prop_assert!((corr.max() - auto.max()).abs() <= 1e-9 * auto.max());
    }

    #[test]
    fn store_round_trip_preserves_f32_frames(frames in prop::collection::vec(sinogram(3, 17), 0..6)) {
        let tmp = tempfile::tempdir().unwrap();
        let mut db = DescriptorStore::new(Resolution::Fine, 3, 17);
        for (i, s) in frames.iter().enumerate() {
            db.push(&make_descriptor(s, i as u64)).unwrap();
        }
        let path = tmp.path().join("db.rpdb");
        write_store(&db, &path).unwrap();
        let back = read_store(&path).unwrap();
        prop_assert_eq!(back.len(), frames.len());
        for i in 0..frames.len() {
            prop_assert_eq!(back.frame_data(i).unwrap(), db.frame_data(i).unwrap());
            prop_assert_eq!(back.frame(i).unwrap().source_id(), i as u64);
        }
    }
}
