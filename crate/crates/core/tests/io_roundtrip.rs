use std::collections::BTreeMap;

use proptest::prelude::*;

use pbpk_core::io::{read_curve, read_dynamic, read_labels, read_parametric, volume_paths, write_curve_file, write_dynamic, write_labels, write_parametric, FrameCurve};
use pbpk_core::kinetic::FrameSchedule;
use pbpk_core::volume::{DynamicVolume, Grid, LabelMap, ParametricVolume, FIT_CHANNELS};

fn dims() -> impl Strategy<Value = [usize; 3]> {
    prop::array::uniform3(1usize..5)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn volumes_round_trip_bit_exact(
        d in dims(),
        durations in prop::collection::vec(0.5f64..300.0, 1..8),
        seed in any::<u64>(),
    ) {
        let dir = tempfile::tempdir().unwrap();
        let g = Grid::new(d, [1.5, 2.0, 2.5]).unwrap();
        let s = FrameSchedule::from_durations(&durations).unwrap();
        let n = g.n_voxels();
        // arbitrary bit patterns, including NaN payloads and subnormals
        let mut state = seed;
        let mut next = || {
            state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            (state >> 32) as u32
        };
        let data: Vec<f32> = (0..n * s.len()).map(|_| f32::from_bits(next())).collect();
        let vol = DynamicVolume::new(g, s, data).unwrap();
        let p = dir.path().join("pet");
        write_dynamic(&p, &vol).unwrap();
        let back = read_dynamic(&p).unwrap();
        let (_, raw) = volume_paths(&p);
        let bits: Vec<u32> = back.data().iter().map(|v| v.to_bits()).collect();
        let want: Vec<u32> = vol.data().iter().map(|v| v.to_bits()).collect();
        prop_assert_eq!(bits, want);
        prop_assert_eq!(back.schedule(), vol.schedule());
        prop_assert_eq!(back.grid(), vol.grid());
        prop_assert_eq!(std::fs::metadata(raw).unwrap().len(), (n * durations.len() * 4) as u64);

        let pdata: Vec<f32> = (0..n * 5).map(|_| f32::from_bits(next())).collect();
        let pv = ParametricVolume::new(g, FIT_CHANNELS.map(String::from).to_vec(), pdata).unwrap();
        let pp = dir.path().join("fit.json");
        write_parametric(&pp, &pv).unwrap();
        let pback = read_parametric(&pp).unwrap();
        prop_assert_eq!(pback.channels(), pv.channels());
        prop_assert!(pback.data().iter().zip(pv.data()).all(|(a, b)| a.to_bits() == b.to_bits()));

        let ldata: Vec<u8> = (0..n).map(|_| (next() % 3) as u8).collect();
        let legend = BTreeMap::from([(1u8, "liver".to_string()), (2, "lungs".to_string())]);
        let labels = LabelMap::new(g, legend, ldata).unwrap();
        let lp = dir.path().join("labels.raw");
        write_labels(&lp, &labels).unwrap();
        prop_assert_eq!(read_labels(&lp).unwrap(), labels);
    }

    #[test]
    fn curves_round_trip(durations in prop::collection::vec(0.5f64..300.0, 1..70), level in 0.0f64..1e5) {
        let dir = tempfile::tempdir().unwrap();
        let s = FrameSchedule::from_durations(&durations).unwrap();
        let activity: Vec<f64> = (0..s.len()).map(|i| level * (1.0 + (i as f64).sin()).abs()).collect();
        let c = FrameCurve::from_schedule(&s, activity).unwrap();
        let p = dir.path().join("c.csv");
        write_curve_file(&p, &c).unwrap();
        prop_assert_eq!(read_curve(&p).unwrap(), c);
    }
}

#[test]
fn reference_schedule_curve_validates() {
    let dir = tempfile::tempdir().unwrap();
    let s = FrameSchedule::reference();
    let c = FrameCurve::from_schedule(&s, vec![100.0; 62]).unwrap();
    let p = dir.path().join("idif.csv");
    write_curve_file(&p, &c).unwrap();
    let back = read_curve(&p).unwrap();
    assert_eq!(back.schedule().unwrap(), s);
    assert_eq!(back.schedule().unwrap().end_time_s(), 3900.0);
}
