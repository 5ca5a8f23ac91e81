use dropreg::regularizers::{
    channel_dropout, channel_mask, dropblock, dropblock_mask, scheduled_p, uout, uout_mask,
    vanilla_dropout, vanilla_mask, Method, RegularizerSpec, Schedule,
};
use dropreg::tensor::{Shape, Tensor};
use dropreg::Mode;
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Fraction of zeros in `t`.
fn zero_fraction(t: &Tensor) -> f64 {
    t.data().iter().filter(|&&v| v == 0.0).count() as f64 / t.data().len() as f64
}

/// Whether pixel (y, x) of a `h` x `w` plane lies in an all-zero b x b window.
fn in_zero_square(plane: &[f64], h: usize, w: usize, b: usize, y: usize, x: usize) -> bool {
    let ys = y.saturating_sub(b - 1)..=y.min(h - b);
    ys.into_iter().any(|i| {
        (x.saturating_sub(b - 1)..=x.min(w - b))
            .any(|j| (i..i + b).all(|yy| (j..j + b).all(|xx| plane[yy * w + xx] == 0.0)))
    })
}

#[test]
fn vanilla_rate_over_a_million_scalars() {
    let mut r = ChaCha8Rng::seed_from_u64(11);
    let m = vanilla_mask(Shape::new(10, 10, 100, 100), 0.2, &mut r).unwrap();
    let p_hat = zero_fraction(&m);
    assert!((p_hat - 0.2).abs() < 0.002, "p_hat = {p_hat}");
    assert!(m.data().iter().all(|&v| v == 0.0 || v == 1.25));
}

#[test]
fn channel_masks_are_plane_constant() {
    let mut r = ChaCha8Rng::seed_from_u64(12);
    for _ in 0..50 {
        let s = Shape::new(3, 16, 9, 7);
        let m = channel_mask(s, 0.3, &mut r).unwrap();
        for n in 0..s.n() {
            for c in 0..s.c() {
                let plane = m.plane(n, c);
                assert!(plane.iter().all(|&v| v == plane[0]));
            }
        }
    }
}

#[test]
fn dropblock_rate_near_target() {
    let mut r = ChaCha8Rng::seed_from_u64(13);
    let mut dropped = 0usize;
    let mut total = 0usize;
    for _ in 0..10_000 {
        let m = dropblock_mask(Shape::new(1, 1, 10, 10), 0.2, 3, &mut r).unwrap();
        dropped += m.data().iter().filter(|&&v| v == 0.0).count();
        total += 100;
    }
    let rate = dropped as f64 / total as f64;
    assert!((rate - 0.2).abs() / 0.2 < 0.15, "drop rate {rate}");
}

#[test]
fn dropblock_zeros_form_squares() {
    let mut r = ChaCha8Rng::seed_from_u64(14);
    for b in [1, 3, 5] {
        for _ in 0..500 {
            let s = Shape::new(2, 2, 10, 12);
            let m = dropblock_mask(s, 0.3, b, &mut r).unwrap();
            for n in 0..s.n() {
                for c in 0..s.c() {
                    let plane = m.plane(n, c);
                    for y in 0..s.h() {
                        for x in 0..s.w() {
                            if plane[y * s.w() + x] == 0.0 {
                                assert!(
                                    in_zero_square(plane, s.h(), s.w(), b, y, x),
                                    "b={b} ({y},{x})"
                                );
                            }
                        }
                    }
                }
            }
        }
    }
}

#[test]
fn dropblock_rescales_survivors() {
    let mut r = ChaCha8Rng::seed_from_u64(15);
    let m = dropblock_mask(Shape::new(4, 8, 10, 10), 0.2, 3, &mut r).unwrap();
    let sum: f64 = m.data().iter().sum();
    assert!((sum - m.data().len() as f64).abs() < 1e-9);
}

#[test]
fn uout_noise_bounds() {
    let mut r = ChaCha8Rng::seed_from_u64(16);
    let m = uout_mask(Shape::new(50, 50, 2, 2), 0.1, &mut r).unwrap();
    assert!(m.data().iter().all(|&v| (0.9..=1.1).contains(&v)));
    let mean = m.data().iter().sum::<f64>() / m.data().len() as f64;
    assert!((mean - 1.0).abs() < 0.01);
}

fn arb_shape() -> impl Strategy<Value = Shape> {
    (1usize..3, 1usize..5, 3usize..8, 3usize..8).prop_map(|(n, c, h, w)| Shape::new(n, c, h, w))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn eval_mode_is_identity(shape in arb_shape(), p in 0.0f64..0.9, seed in any::<u64>()) {
        let mut r = ChaCha8Rng::seed_from_u64(seed);
        let x = Tensor::randn(shape, 1.0, &mut r);
        prop_assert_eq!(vanilla_dropout(&x, p, Mode::Eval, &mut r).unwrap().into_data(), x.data().to_vec());
        prop_assert_eq!(channel_dropout(&x, p, Mode::Eval, &mut r).unwrap().into_data(), x.data().to_vec());
        prop_assert_eq!(dropblock(&x, p, 3, Mode::Eval, &mut r).unwrap().into_data(), x.data().to_vec());
        prop_assert_eq!(uout(&x, p, Mode::Eval, &mut r).unwrap().into_data(), x.data().to_vec());
    }

    #[test]
    fn inverted_masks_take_two_values(shape in arb_shape(), p in 0.01f64..0.9, seed in any::<u64>()) {
        let mut r = ChaCha8Rng::seed_from_u64(seed);
        let keep = 1.0 / (1.0 - p);
        for m in [vanilla_mask(shape, p, &mut r).unwrap(), channel_mask(shape, p, &mut r).unwrap()] {
            prop_assert!(m.data().iter().all(|&v| v == 0.0 || v == keep));
        }
    }

    #[test]
    fn train_output_is_mask_times_input(shape in arb_shape(), p in 0.01f64..0.9, seed in any::<u64>()) {
        let mut r = ChaCha8Rng::seed_from_u64(seed);
        let x = Tensor::randn(shape, 1.0, &mut r);
        let y = channel_dropout(&x, p, Mode::Train, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
        let m = channel_mask(shape, p, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
        for ((a, b), c) in y.data().iter().zip(m.data()).zip(x.data()) {
            prop_assert_eq!(*a, b * c);
        }
    }

    #[test]
    fn ramp_is_monotone_and_capped(p in 0.0f64..0.99, n in 1u32..100, epoch in 0usize..300) {
        let spec = RegularizerSpec::new(Method::Channel, p).with_schedule(Schedule::LinearRamp { epochs: n });
        let now = scheduled_p(&spec, epoch);
        let next = scheduled_p(&spec, epoch + 1);
        prop_assert!(now <= next);
        prop_assert!((0.0..=p).contains(&now));
        prop_assert_eq!(scheduled_p(&spec, 0), 0.0);
        prop_assert_eq!(scheduled_p(&spec, n as usize), p);
    }
}
