use braingan_core::imaging::{center_crop, normalize, read_raster, write_raster, zero_pad, Image, ValueRange};
use braingan_core::phantom::generate_phantom;
use proptest::prelude::*;

fn storage_image(h: usize, w: usize) -> impl Strategy<Value = Image> {
    prop::collection::vec(0u8..=255, h * w)
        .prop_map(move |px| Image::new(h, w, px.into_iter().map(f64::from).collect(), ValueRange::Storage).unwrap())
}

fn sized_image() -> impl Strategy<Value = Image> {
    (1usize..24, 1usize..24).prop_flat_map(|(h, w)| storage_image(h, w))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]

    #[test]
    fn crop_undoes_pad(img in sized_image(), dh in 0usize..9, dw in 0usize..9) {
        let (h, w) = img.dims();
        let padded = zero_pad(&img, h + dh, w + dw).unwrap();
        prop_assert_eq!(center_crop(&padded, h, w).unwrap(), img);
    }

    #[test]
    fn normalize_round_trips(img in sized_image()) {
        let model = normalize(&img, ValueRange::Model).unwrap();
        prop_assert!(model.pixels().iter().all(|p| (-1.0..=1.0).contains(p)));
        let back = normalize(&model, ValueRange::Storage).unwrap();
        for (a, b) in img.pixels().iter().zip(back.pixels()) {
            prop_assert!((a - b).abs() <= 1e-9);
        }
    }

    #[test]
    fn normalize_preserves_order(a in 0u8..=255, b in 0u8..=255) {
        let img = Image::new(1, 2, vec![f64::from(a), f64::from(b)], ValueRange::Storage).unwrap();
        let m = normalize(&img, ValueRange::Model).unwrap();
        prop_assert_eq!(a.cmp(&b), m.pixels()[0].partial_cmp(&m.pixels()[1]).unwrap());
    }
}

#[test]
fn phantom_slices_survive_png() {
    let dir = tempfile::tempdir().unwrap();
    for seed in 0..100 {
        let vol = generate_phantom(seed, seed % 2 == 0, 240, 3).unwrap();
        let slice = &vol.slices[1];
        let path = dir.path().join(format!("{seed}.png"));
        write_raster(slice, &path).unwrap();
        let back = read_raster(&path).unwrap();
        assert_eq!(back.dims(), (240, 240));
        for (a, b) in slice.pixels().iter().zip(back.pixels()) {
            assert!((a - b).abs() <= 0.5, "seed {seed}: {a} vs {b}");
        }
    }
}
