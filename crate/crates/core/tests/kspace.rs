use cine_deblur_core::image::{CineSequence, Image};
use cine_deblur_core::kspace::*;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rustfft::num_complex::Complex;

fn random_image(h: usize, w: usize, seed: u64) -> Image<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Image::from_fn(h, w, |_, _| rng.random_range(0.0..1.0))
}

/// Direct double-sum DFT in the centered unitary convention.
fn brute_dft(img: &Image<f64>) -> Vec<Complex<f64>> {
    let (h, w) = img.dims();
    let norm = 1.0 / ((h * w) as f64).sqrt();
    let mut out = Vec::with_capacity(h * w);
    for u in 0..h {
        for v in 0..w {
            let (fu, fv) = (u as f64 - (h / 2) as f64, v as f64 - (w / 2) as f64);
            let mut acc = Complex::new(0.0, 0.0);
            for y in 0..h {
                for x in 0..w {
                    let phase = -2.0 * std::f64::consts::PI * (fu * y as f64 / h as f64 + fv * x as f64 / w as f64);
                    acc += Complex::from_polar(img.get(y, x), phase);
                }
            }
            out.push(acc * norm);
        }
    }
    out
}

fn brute_idft_real(k: &[Complex<f64>], h: usize, w: usize) -> Image<f64> {
    let norm = 1.0 / ((h * w) as f64).sqrt();
    Image::from_fn(h, w, |y, x| {
        let mut acc = Complex::new(0.0, 0.0);
        for u in 0..h {
            for v in 0..w {
                let (fu, fv) = (u as f64 - (h / 2) as f64, v as f64 - (w / 2) as f64);
                let phase = 2.0 * std::f64::consts::PI * (fu * y as f64 / h as f64 + fv * x as f64 / w as f64);
                acc += k[u * w + v] * Complex::from_polar(1.0, phase);
            }
        }
        (acc * norm).re
    })
}

fn max_err(a: &[Complex<f64>], b: &[Complex<f64>]) -> f64 {
    a.iter().zip(b).map(|(p, q)| (p - q).norm()).fold(0.0, f64::max)
}

#[test]
fn constant_image_has_dc_only() {
    let (h, w, c) = (8, 6, 0.7);
    let k = dft2(&Image::<f64>::filled(h, w, c)).unwrap();
    for y in 0..h {
        for x in 0..w {
            let mag = k.get(y, x).norm();
            if (y, x) == (h / 2, w / 2) {
                assert!((mag - c * ((h * w) as f64).sqrt()).abs() < 1e-12);
            } else {
                assert!(mag < 1e-12);
            }
        }
    }
}

#[test]
fn impulse_has_flat_spectrum() {
    let mut img = Image::<f64>::zeros(8, 8);
    img.set(0, 0, 1.0);
    let k = dft2(&img).unwrap();
    assert!(k.data().iter().all(|c| (c.norm() - 1.0 / 8.0).abs() < 1e-12));
}

#[test]
fn dft_matches_brute_force_oracle() {
    for (h, w, seed) in [(8, 8, 1), (7, 10, 2), (6, 5, 3)] {
        let img = random_image(h, w, seed);
        let k = dft2(&img).unwrap();
        assert!(max_err(k.data(), &brute_dft(&img)) < 1e-10, "{h}x{w}");
    }
}

#[test]
fn dft_rejects_degenerate_or_non_finite_input() {
    assert!(dft2(&Image::<f64>::zeros(1, 8)).is_err());
    let mut img = Image::<f64>::zeros(4, 4);
    img.set(1, 1, f64::NAN);
    assert!(dft2(&img).is_err());
}

#[test]
fn roundtrip_across_sizes() {
    for n in [8, 16, 32, 64, 100] {
        let img = random_image(n, n, n as u64);
        let back = idft2(&dft2(&img).unwrap());
        assert!(back.max_abs_diff(&img) < 1e-12, "f64 {n}");
        let img32 = img.cast::<f32>();
        let back32 = idft2_real(&dft2(&img32).unwrap()).unwrap();
        assert!(back32.max_abs_diff(&img32) < 1e-6, "f32 {n}");
    }
}

#[test]
fn zero_spectrum_gives_zero_image() {
    let img = idft2(&KSpace::<f32>::zeros(8, 8));
    assert!(img.data().iter().all(|&v| v == 0.0));
}

#[test]
fn parseval_holds() {
    for n in [8, 16, 33] {
        let img = random_image(n, n, 100 + n as u64).cast::<f32>();
        let k = dft2(&img).unwrap();
        let (e_img, e_k) = (img.energy(), k.energy());
        assert!((e_img - e_k).abs() / e_img < 1e-5, "{e_img} vs {e_k}");
    }
}

#[test]
fn idft_real_rejects_non_hermitian_spectra() {
    let k = dft2(&random_image(8, 8, 4)).unwrap();
    let half = select_lines(&k, &[1, 2, 3]).unwrap();
    assert!(idft2_real(&half).is_err());
}

#[test]
fn select_all_rows_is_identity() {
    let k = dft2(&random_image(8, 8, 5)).unwrap();
    let rows: Vec<usize> = (0..8).collect();
    assert_eq!(select_lines(&k, &rows).unwrap(), k);
}

#[test]
fn selecting_the_dc_row_of_a_constant_image() {
    let img = Image::<f64>::filled(8, 8, 0.4);
    let oracle = brute_dft(&img);
    let picked = select_lines(&dft2(&img).unwrap(), &[4]).unwrap();
    let expected: Vec<Complex<f64>> =
        (0..64).map(|i| if i / 8 == 4 { oracle[i] } else { Complex::new(0.0, 0.0) }).collect();
    assert!(max_err(picked.data(), &expected) < 1e-12);
    // nothing is lost for a constant image
    assert!(idft2(&picked).max_abs_diff(&img) < 1e-12);
}

#[test]
fn mixing_a_single_frame_is_identity() {
    let k = dft2(&random_image(8, 8, 6)).unwrap();
    let assignment = RowAssignment::Blocks.resolve(8, 1).unwrap();
    assert_eq!(mix_kspace(std::slice::from_ref(&k), &assignment).unwrap(), k);
}

#[test]
fn mixing_identical_frames_returns_the_common_spectrum() {
    let k = dft2(&random_image(8, 8, 7)).unwrap();
    let frames = vec![k.clone(); 3];
    for assignment in [vec![0, 1, 2, 0, 1, 2, 0, 1], RowAssignment::Blocks.resolve(8, 3).unwrap()] {
        assert_eq!(mix_kspace(&frames, &assignment).unwrap(), k);
    }
}

#[test]
fn block_mix_of_two_frames_matches_hand_assembly() {
    let (a, b) = (random_image(4, 4, 8), random_image(4, 4, 9));
    let (oa, ob) = (brute_dft(&a), brute_dft(&b));
    let expected: Vec<Complex<f64>> = (0..16).map(|i| if i / 4 < 2 { oa[i] } else { ob[i] }).collect();
    let mixed = mix_kspace(&[dft2(&a).unwrap(), dft2(&b).unwrap()], &[0, 0, 1, 1]).unwrap();
    assert!(max_err(mixed.data(), &expected) < 1e-12);
}

#[test]
fn mixing_equals_sum_of_disjoint_line_selections() {
    let frames: Vec<KSpace<f64>> = (0..5).map(|s| dft2(&random_image(16, 16, 10 + s)).unwrap()).collect();
    let assignment = RowAssignment::Blocks.resolve(16, 5).unwrap();
    let mixed = mix_kspace(&frames, &assignment).unwrap();
    let mut sum = KSpace::zeros(16, 16);
    for (f, k) in frames.iter().enumerate() {
        let rows: Vec<usize> = (0..16).filter(|&r| assignment[r] == f).collect();
        sum = sum.add(&select_lines(k, &rows).unwrap()).unwrap();
    }
    assert_eq!(mixed, sum);
}

#[test]
fn lowpass_examples() {
    let k = dft2(&random_image(16, 16, 20)).unwrap();
    assert_eq!(lowpass_zero_pad(&k, 1.0).unwrap(), k);

    let low = lowpass_zero_pad(&k, 0.25).unwrap();
    let retained: Vec<usize> = (0..16).filter(|&r| low.row(r).iter().any(|c| c.norm() > 0.0)).collect();
    assert_eq!(retained, vec![6, 7, 8, 9]);
    assert_eq!(lowpass_zero_pad(&low, 0.25).unwrap(), low);

    let flat = Image::<f64>::filled(16, 16, 0.3);
    for keep in [0.05, 0.25, 0.5] {
        let out = idft2(&lowpass_zero_pad(&dft2(&flat).unwrap(), keep).unwrap());
        assert!(out.max_abs_diff(&flat) < 1e-12);
    }
}

#[test]
fn golden_angle_sequence() {
    let angles = golden_angles(0, 4);
    let expected = [0.0, 111.246, 42.492, 153.738];
    for (a, e) in angles.iter().zip(expected) {
        assert!((a - e).abs() < 1e-3, "{a} vs {e}");
    }
    for (s, a) in golden_angles(0, 200).iter().enumerate() {
        let reference = (s as f64 * 180.0 * (5f64.sqrt() - 1.0) / 2.0) % 180.0;
        assert!((a - reference).abs() < 1e-9);
    }
}

#[test]
fn single_spoke_is_the_central_row() {
    for (h, w) in [(16, 16), (15, 20)] {
        let mask = golden_angle_mask(h, w, 1).unwrap();
        for y in 0..h {
            for x in 0..w {
                assert_eq!(mask.get(y, x), y == h / 2, "({y}, {x})");
            }
        }
    }
}

#[test]
fn every_mask_contains_the_center() {
    for n in 1..40 {
        let mask = golden_angle_mask(32, 32, n).unwrap();
        assert!(mask.get(16, 16));
        assert!(mask.count() >= 32);
    }
    // more spokes never remove samples
    let few = golden_angle_mask(32, 32, 5).unwrap();
    let many = golden_angle_mask(32, 32, 10).unwrap();
    assert_eq!(few.union(&many).unwrap(), many);
}

fn moving_sequence(t: usize, n: usize, seed: u64) -> CineSequence<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let base = random_image(n, n, seed);
    let frames = (0..t)
        .map(|i| {
            let r = 0.2 * n as f64 + rng.random_range(0.0..0.15) * n as f64;
            Image::from_fn(n, n, |y, x| {
                let d = ((y as f64 - n as f64 / 2.0).powi(2) + (x as f64 - n as f64 / 2.0 - i as f64 * 0.3).powi(2)).sqrt();
                if d < r {
                    0.9
                } else {
                    0.2 * base.get(y, x)
                }
            })
        })
        .collect();
    CineSequence::new(frames, 1.0).unwrap()
}

#[test]
fn identity_pipeline_reproduces_input() {
    let seq = moving_sequence(5, 16, 30);
    let params = DegradeParams { n_mix: 0, keep_fraction: 1.0, ..Default::default() };
    let out = degrade_sequence(&seq, &params).unwrap();
    for (a, b) in out.frames().iter().zip(seq.frames()) {
        assert!(a.max_abs_diff(b) < 1e-5);
    }
}

#[test]
fn static_sequences_survive_mixing() {
    let frame = moving_sequence(1, 16, 31).frame(0).clone();
    for n in [1, 2, 7] {
        let seq = CineSequence::new(vec![frame.clone(); 2 * n + 1], 1.0).unwrap();
        let params = DegradeParams { n_mix: n, keep_fraction: 1.0, ..Default::default() };
        let out = degrade_sequence(&seq, &params).unwrap();
        assert!(out.frames().iter().all(|f| f.max_abs_diff(&frame) < 1e-5), "N={n}");
    }
}

#[test]
fn too_short_sequences_are_rejected() {
    let seq = moving_sequence(4, 16, 32);
    let params = DegradeParams { n_mix: 2, keep_fraction: 0.25, ..Default::default() };
    assert!(degrade_sequence(&seq, &params).is_err());
}

/// Explicit-loop version of the whole mixing pipeline on brute-force DFTs.
fn pipeline_oracle(seq: &CineSequence<f64>, n: usize, keep: f64) -> Vec<Image<f64>> {
    let (t, h, w) = (seq.len(), seq.height(), seq.width());
    let spectra: Vec<Vec<Complex<f64>>> = seq.frames().iter().map(brute_dft).collect();
    let frames = 2 * n + 1;
    let block = h / frames;
    let kept = (keep * h as f64).ceil() as usize;
    let first_kept = h / 2 - kept / 2;
    (0..t)
        .map(|l| {
            let mut mixed = vec![Complex::new(0.0, 0.0); h * w];
            for r in 0..h {
                if r < first_kept || r >= first_kept + kept {
                    continue;
                }
                let slot = (r / block).min(frames - 1);
                let src = (l as i64 - n as i64 + slot as i64).clamp(0, t as i64 - 1) as usize;
                for c in 0..w {
                    mixed[r * w + c] = spectra[src][r * w + c];
                }
            }
            brute_idft_real(&mixed, h, w).map(|v| v.clamp(0.0, 1.0))
        })
        .collect()
}

#[test]
fn mixing_pipeline_matches_explicit_loop_oracle() {
    let seq = moving_sequence(5, 16, 33);
    let params = DegradeParams { n_mix: 2, keep_fraction: 0.25, ..Default::default() };
    let out = degrade_sequence(&seq.cast::<f32>(), &params).unwrap();
    let oracle = pipeline_oracle(&seq, 2, 0.25);
    for (a, b) in out.frames().iter().zip(&oracle) {
        assert!(a.cast::<f64>().max_abs_diff(b) < 1e-5);
    }
}

#[test]
fn lowpass_degradation_never_adds_energy() {
    let seq = moving_sequence(6, 16, 34);
    for keep in [0.1, 0.25, 0.6] {
        let params = DegradeParams { n_mix: 0, keep_fraction: keep, ..Default::default() };
        let out = degrade_sequence(&seq, &params).unwrap();
        for (a, b) in out.frames().iter().zip(seq.frames()) {
            assert!(a.energy() <= b.energy() + 1e-9);
        }
    }
    let frame = seq.frame(0).clone();
    let stat = CineSequence::new(vec![frame.clone(); 5], 1.0).unwrap();
    let params = DegradeParams { n_mix: 2, keep_fraction: 0.25, ..Default::default() };
    for f in degrade_sequence(&stat, &params).unwrap().frames() {
        assert!(f.energy() <= frame.energy() + 1e-9);
    }
}

#[test]
fn radial_degradation_stays_in_range() {
    let seq = moving_sequence(3, 32, 35);
    let params = DegradeParams { mode: DegradeMode::Radial, n_spokes: 8, ..Default::default() };
    let out = degrade_sequence(&seq, &params).unwrap();
    assert_eq!(out.len(), 3);
    for (l, (a, b)) in out.frames().iter().zip(seq.frames()).enumerate() {
        assert!(a.data().iter().all(|v| (0.0..=1.0).contains(v)));
        let mask = golden_angle_mask_from(32, 32, l * 8, 8).unwrap();
        let expected = idft2(&dft2(b).unwrap().apply_mask(&mask).unwrap()).map(|v| v.clamp(0.0, 1.0));
        assert!(a.max_abs_diff(&expected) < 1e-12);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn dft_is_linear_and_invertible(h in 2usize..20, w in 2usize..20, seed in any::<u64>(), a in -2.0f64..2.0, b in -2.0f64..2.0) {
        let x = random_image(h, w, seed);
        let y = random_image(h, w, seed.wrapping_add(1));
        let combo = Image::from_fn(h, w, |i, j| a * x.get(i, j) + b * y.get(i, j));
        let (kx, ky, kc) = (dft2(&x).unwrap(), dft2(&y).unwrap(), dft2(&combo).unwrap());
        for i in 0..h * w {
            let expected = kx.data()[i] * a + ky.data()[i] * b;
            prop_assert!((kc.data()[i] - expected).norm() < 1e-6);
        }
        prop_assert!(idft2(&kx).max_abs_diff(&x) < 1e-12);
    }

    #[test]
    fn lowpass_is_idempotent(n in 2usize..24, keep in 0.01f64..1.0, seed in any::<u64>()) {
        let k = dft2(&random_image(n, n, seed)).unwrap();
        let once = lowpass_zero_pad(&k, keep).unwrap();
        prop_assert_eq!(lowpass_zero_pad(&once, keep).unwrap(), once);
    }
}
