use std::f64::consts::PI;

use ndfusion::autodiff::Graph;
use ndfusion::baselines::{linear_interp, nearest_interp};
use ndfusion::checkpoint;
use ndfusion::csi::calibrate;
use ndfusion::data::*;
use ndfusion::decoder::{kl_gaussian_value, ndf_loss, LossInputs, LossWeights};
use ndfusion::encoder::Posterior;
use ndfusion::eval::metrics;
use ndfusion::fusion::{Fusion, FusionScheme};
use ndfusion::ode::{integrate, OdeNet, SolverConfig};
use ndfusion::optim::OneCycle;
use ndfusion::params::ParamStore;
use ndfusion::tensor::Tensor;
use ndfusion::testbed::Scenario;
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Strictly increasing times from positive gaps, kept below `end`.
fn times_from_gaps(origin: f64, gaps: &[f64], end: f64) -> Vec<f64> {
    let mut t = origin;
    let mut out = Vec::new();
    for g in gaps {
        t += g;
        if t >= end {
            break;
        }
        out.push(t);
    }
    out
}

fn recording() -> impl Strategy<Value = StreamSet> {
    (
        0.0..100.0f64,
        10.0..60.0f64,
        prop::collection::vec(0.05..3.0f64, 1..80),
        prop::collection::vec(0.05..1.0f64, 1..200),
        prop::collection::vec(0.05..0.5f64, 1..300),
    )
        .prop_map(|(origin, duration, gb, gc, gl)| {
            let end = origin + duration;
            StreamSet {
                origin,
                duration,
                beam: times_from_gaps(origin, &gb, end).into_iter().map(|t| BeamSnrFrame { t, values: vec![t.sin(), t.cos()] }).collect(),
                csi: times_from_gaps(origin, &gc, end).into_iter().map(|t| CsiEmbedding { t, values: vec![(2.0 * t).sin()] }).collect(),
                labels: times_from_gaps(origin, &gl, end).into_iter().map(|t| Coordinate { t, xy: [t.cos() * 3.0 + 3.0, t.sin() * 2.0 + 2.0] }).collect(),
            }
        })
}

fn sorted_unique(mut v: Vec<f64>) -> Vec<f64> {
    v.sort_by(f64::total_cmp);
    v.dedup();
    v
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn windowing_with_step_equal_to_span_keeps_every_frame_of_kept_windows(frames in recording(), span in 1.0..8.0f64) {
        let w = window_sequences(&frames, span, span).unwrap();
        let n_windows = window_starts(frames.origin, frames.duration, span, span).len();
        prop_assert_eq!(w.windows.len() + w.dropped, n_windows);
        let covered = frames.origin + n_windows as f64 * span;
        let kept: Vec<f64> = w.windows.iter().map(|x| x.start).collect();
        let bucket_kept = |t: f64| kept.iter().any(|&s| t >= s && t < s + span);
        let expected = frames.beam.iter().map(|f| f.t).chain(frames.csi.iter().map(|f| f.t)).chain(frames.labels.iter().map(|f| f.t))
            .filter(|&t| t < covered && bucket_kept(t)).count();
        let got: usize = w.windows.iter().map(|x| x.beam.len() + x.csi.len() + x.labels.len()).sum();
        prop_assert_eq!(got, expected);
    }

    #[test]
    fn time_normalisation_is_affine_and_order_preserving(frames in recording(), span in 2.0..8.0f64) {
        let w = window_sequences(&frames, span, 1.0).unwrap();
        for win in &w.windows {
            let n = normalize_window_times(win).unwrap();
            for (a, b) in win.label_times().iter().zip(n.label_times()) {
                prop_assert!((b - (a - win.start) / span).abs() < 1e-12);
                prop_assert!((0.0..=1.0).contains(&b));
            }
            for ts in [n.beam_times(), n.csi_times(), n.label_times()] {
                prop_assert!(ts.windows(2).all(|p| p[0] < p[1]));
            }
        }
    }

    #[test]
    fn random_split_partitions_the_windows(frames in recording(), seed in any::<u64>()) {
        let w = window_sequences(&frames, 2.0, 0.5).unwrap().windows;
        prop_assume!(w.len() >= 3);
        let s = split_random(&w, [0.8, 0.1, 0.1], seed).unwrap();
        let sizes = largest_remainder(w.len(), &[0.8, 0.1, 0.1]).unwrap();
        prop_assert_eq!(vec![s.train.len(), s.val.len(), s.test.len()], sizes);
        let mut ids: Vec<usize> = s.train.iter().chain(&s.val).chain(&s.test).map(|x| x.id).collect();
        ids.sort_unstable();
        let all: Vec<usize> = w.iter().map(|x| x.id).collect();
        prop_assert_eq!(ids, all);
    }

    #[test]
    fn largest_remainder_sizes_sum_and_stay_near_quota(n in 0usize..5000, a in 0.0..1.0f64, b in 0.0..1.0f64) {
        let (r0, r1) = (a.min(b), (a.max(b) - a.min(b)));
        let ratios = [r0, r1, 1.0 - r0 - r1];
        let sizes = largest_remainder(n, &ratios).unwrap();
        prop_assert_eq!(sizes.iter().sum::<usize>(), n);
        for (s, r) in sizes.iter().zip(ratios) {
            prop_assert!((*s as f64 - r * n as f64).abs() < 1.0 + 1e-9);
        }
    }

    #[test]
    fn temporal_cut_puts_all_train_before_test(frames in recording(), s in 0.05..0.95f64) {
        prop_assume!(frames.frame_count() >= 2);
        let (train, test) = temporal_cut(&frames, s).unwrap();
        prop_assert_eq!(train.frame_count() + test.frame_count(), frames.frame_count());
        let times = |x: &StreamSet| -> Vec<f64> { x.beam.iter().map(|f| f.t).chain(x.csi.iter().map(|f| f.t)).chain(x.labels.iter().map(|f| f.t)).collect() };
        let last_train = times(&train).into_iter().fold(f64::NEG_INFINITY, f64::max);
        let first_test = times(&test).into_iter().fold(f64::INFINITY, f64::min);
        prop_assert!(last_train < first_test);
    }

    #[test]
    fn coordinate_split_keeps_the_region_out_of_train(frames in recording(), x0 in 0.0..5.0f64, y0 in 0.0..3.0f64) {
        let w = window_sequences(&frames, 2.0, 1.0).unwrap().windows;
        let region = Region { x_min: x0, x_max: x0 + 1.0, y_min: y0, y_max: y0 + 1.0 };
        if let Ok((train, test)) = split_coordinate(&w, region) {
            prop_assert!(train.iter().all(|x| x.labels.iter().all(|p| !region.contains(p.xy))));
            prop_assert!(test.iter().all(|x| x.labels.iter().any(|p| region.contains(p.xy))));
            prop_assert_eq!(train.len() + test.len(), w.len());
        }
    }

    #[test]
    fn scaler_maps_its_training_data_into_the_unit_interval(frames in recording()) {
        let w = window_sequences(&frames, 3.0, 1.0).unwrap().windows;
        prop_assume!(!w.is_empty());
        let scaler = Scaler::fit(&w).unwrap();
        let (scaled, report) = scaler.apply_all(&w).unwrap();
        prop_assert_eq!(report.out_of_range, 0);
        for (x, orig) in scaled.iter().zip(&w) {
            for v in x.beam.iter().flat_map(|f| &f.values).chain(x.csi.iter().flat_map(|f| &f.values)) {
                prop_assert!((0.0..=1.0).contains(v));
            }
            prop_assert_eq!(&x.labels, &orig.labels);
        }
    }

    #[test]
    fn interpolants_are_exact_on_samples_and_nearest_stays_in_the_value_set(
        gaps in prop::collection::vec(0.01..1.0f64, 1..20),
        vals in prop::collection::vec(-10.0..10.0f64, 40),
        queries in prop::collection::vec(-1.0..12.0f64, 1..30),
    ) {
        let times = times_from_gaps(0.0, &gaps, f64::INFINITY);
        let n = times.len();
        let values = Tensor::new(n, 2, vals[..2 * n].to_vec());
        let at_samples_lin = linear_interp(&times, &values, &times).unwrap();
        let at_samples_near = nearest_interp(&times, &values, &times).unwrap();
        prop_assert_eq!(at_samples_lin.data(), values.data());
        prop_assert_eq!(at_samples_near.data(), values.data());
        let near = nearest_interp(&times, &values, &queries).unwrap();
        let lin = linear_interp(&times, &values, &queries).unwrap();
        for r in 0..queries.len() {
            let row = near.row_slice(r);
            prop_assert!((0..n).any(|i| values.row_slice(i) == row));
            for c in 0..2 {
                let col: Vec<f64> = (0..n).map(|i| values.row_slice(i)[c]).collect();
                let (lo, hi) = (col.iter().cloned().fold(f64::INFINITY, f64::min), col.iter().cloned().fold(f64::NEG_INFINITY, f64::max));
                let v = lin.row_slice(r)[c];
                prop_assert!(v >= lo - 1e-12 && v <= hi + 1e-12);
            }
        }
    }

    #[test]
    fn metrics_are_permutation_invariant_and_ordered(errors in prop::collection::vec(0.0..50.0f64, 1..200), seed in any::<u64>()) {
        use rand::seq::SliceRandom;
        let m = metrics(&errors).unwrap();
        let mut shuffled = errors.clone();
        shuffled.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        prop_assert_eq!(m, metrics(&shuffled).unwrap());
        let lo = errors.iter().cloned().fold(f64::INFINITY, f64::min);
        let hi = errors.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        prop_assert!(lo <= m.median && m.median <= m.cdf90 && m.cdf90 <= hi);
        prop_assert!(lo - 1e-9 <= m.mean && m.mean <= hi + 1e-9);
    }

    #[test]
    fn kl_is_nonnegative_and_zero_only_at_the_prior(
        mu in prop::collection::vec(-3.0..3.0f64, 1..10),
        log_sigma in prop::collection::vec(-2.0..2.0f64, 10),
    ) {
        let sigma: Vec<f64> = log_sigma[..mu.len()].iter().map(|l| l.exp()).collect();
        let kl = kl_gaussian_value(&mu, &sigma).unwrap();
        prop_assert!(kl >= 0.0);
        let off_prior = mu.iter().zip(&sigma).any(|(m, s)| *m != 0.0 || *s != 1.0);
        prop_assert_eq!(kl > 0.0, off_prior);
        let prior = kl_gaussian_value(&vec![0.0; mu.len()], &vec![1.0; mu.len()]).unwrap();
        prop_assert_eq!(prior, 0.0);
    }

    #[test]
    fn loss_is_nonnegative_and_grows_with_coordinate_error(
        pred in prop::collection::vec(-5.0..5.0f64, 6),
        target in prop::collection::vec(-5.0..5.0f64, 6),
        mu in prop::collection::vec(-2.0..2.0f64, 3),
        sigma in prop::collection::vec(0.2..3.0f64, 3),
        idx in 0usize..6,
        extra in 0.01..2.0f64,
        l in prop::collection::vec(0.0..2.0f64, 4),
    ) {
        prop_assume!((pred[idx] - target[idx]).abs() > 1e-6);
        let weights = LossWeights { lambda1: l[0], lambda2: l[1], lambda3: l[2], lambda4: l[3], b_p: 1.0 };
        let store = ParamStore::new();
        let loss_of = |p: &[f64]| {
            let mut g = Graph::new(&store);
            let t = Tensor::new(3, 2, target.clone());
            let small = Tensor::row(&[0.5, -0.5]);
            let trajectory = g.constant(Tensor::new(3, 2, p.to_vec()));
            let beam = g.constant(Tensor::row(&[0.1, 0.2]));
            let csi = g.constant(Tensor::row(&[-0.3, 0.9]));
            let post = Posterior { mu: g.constant(Tensor::row(&mu)), sigma: g.constant(Tensor::row(&sigma)) };
            let inputs = LossInputs { trajectory, trajectory_target: &t, beam, beam_target: &small, csi, csi_target: &small, posterior_beam: post, posterior_csi: post };
            let (v, _) = ndf_loss(&mut g, &inputs, &weights).unwrap();
            g.scalar(v)
        };
        let base = loss_of(&pred);
        prop_assert!(base >= 0.0);
        let mut worse = pred.clone();
        worse[idx] += extra * (pred[idx] - target[idx]).signum();
        prop_assert!(loss_of(&worse) > base);
    }

    #[test]
    fn importance_weights_sum_to_one_and_ignore_time(seed in any::<u64>(), n in 1usize..6) {
        use rand::Rng;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let f = Fusion::new(&mut store, FusionScheme::Weighted, 4, 3, 6, 5, 8, &mut rng);
        let mut g = Graph::new(&store);
        let mut rand_rows = |r: usize, c: usize| Tensor::new(r, c, (0..r * c).map(|_| rng.random_range(-2.0..2.0)).collect());
        let (zb, zc, z0b, z0c) = (rand_rows(n, 4), rand_rows(n, 3), rand_rows(1, 4), rand_rows(1, 3));
        let (zb, zc, z0b, z0c) = (g.constant(zb), g.constant(zc), g.constant(z0b), g.constant(z0c));
        let (wb, wc) = f.importance(&mut g, z0b, z0c).unwrap();
        for (a, b) in g.value(wb).data().iter().zip(g.value(wc).data()) {
            prop_assert!((a + b - 1.0).abs() <= 1e-15);
            prop_assert!(*a >= 0.0 && *b >= 0.0);
        }
        // Each row fused alone matches the same row of the batched call.
        let all = f.fuse(&mut g, zb, zc, z0b, z0c).unwrap();
        let all = g.value(all).clone();
        for r in 0..n {
            let rb = g.constant(Tensor::row(g.value(zb).row_slice(r)));
            let rc = g.constant(Tensor::row(g.value(zc).row_slice(r)));
            let one = f.fuse(&mut g, rb, rc, z0b, z0c).unwrap();
            prop_assert_eq!(g.value(one).data(), all.row_slice(r));
        }
    }

    #[test]
    fn one_cycle_peaks_at_max_and_is_unimodal(max_lr in 1e-5..1e-1f64, total in 1usize..2000) {
        let s = OneCycle::new(max_lr, total);
        let lrs: Vec<f64> = (0..total).map(|k| s.lr(k)).collect();
        let peak = s.peak_step();
        let top = lrs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        prop_assert!((top - max_lr).abs() <= 1e-9);
        prop_assert!(lrs[..=peak].windows(2).all(|p| p[1] >= p[0]));
        prop_assert!(lrs[peak..].windows(2).all(|p| p[1] <= p[0]));
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn checkpoint_round_trip_is_bit_exact(values in prop::collection::vec(-1e6..1e6f64, 1..60), split in 1usize..10) {
        let mut store = ParamStore::new();
        let cut = split.min(values.len());
        store.add("a", "w", Tensor::row(&values[..cut]));
        if cut < values.len() {
            store.add("b", "w", Tensor::row(&values[cut..]));
        }
        let dir = tempfile::tempdir().unwrap();
        checkpoint::save(dir.path(), "m", &store, "h", serde_json::Value::Null).unwrap();
        let mut fresh = store.clone();
        let zeros = vec![0.0; values.len()];
        fresh.load_flat(&zeros).unwrap();
        checkpoint::load(dir.path(), "m", &mut fresh, "h").unwrap();
        let a: Vec<u64> = store.flatten().iter().map(|v| v.to_bits()).collect();
        let b: Vec<u64> = fresh.flatten().iter().map(|v| v.to_bits()).collect();
        prop_assert_eq!(a, b);
        prop_assert!(checkpoint::load(dir.path(), "m", &mut fresh, "other").is_err());
    }

    #[test]
    fn calibration_output_ignores_packet_phase(x in 0.2..5.8f64, y in 0.2..3.8f64, tau in -50e-9..50e-9f64, phase in -PI..PI) {
        let sc = Scenario::standard(DatasetConfig::default(), 1);
        let cfg = &sc.dataset;
        let (a, _) = calibrate(&sc.raw_csi.render(cfg, 0.0, [x, y], sc.track.ap, tau, 0.0), cfg.f_delta).unwrap();
        let (b, _) = calibrate(&sc.raw_csi.render(cfg, 0.0, [x, y], sc.track.ap, tau, phase), cfg.f_delta).unwrap();
        for (p, q) in a.data.iter().zip(&b.data) {
            prop_assert!((p - q).norm() <= 1e-10);
        }
    }

    #[test]
    fn forward_then_backward_integration_returns_to_start(seed in any::<u64>(), z in prop::collection::vec(-1.0..1.0f64, 3)) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let net = OdeNet::new(&mut store, "d", 3, &[8], &mut rng);
        let cfg = SolverConfig::dopri5(1e-7, 1e-9);
        let mut g = Graph::new(&store);
        let z0 = g.constant(Tensor::row(&z));
        let z1 = integrate(&mut g, &net, z0, 0.0, 1.0, &cfg).unwrap();
        let back = integrate(&mut g, &net, z1, 1.0, 0.0, &cfg).unwrap();
        for (a, b) in g.value(back).data().iter().zip(&z) {
            prop_assert!((a - b).abs() <= 10.0 * (cfg.atol + cfg.rtol * b.abs()));
        }
    }

    #[test]
    fn simulated_streams_are_strictly_increasing(seed in any::<u64>()) {
        let sc = Scenario::standard(DatasetConfig::default(), 1);
        let s = sc.simulate(60.0, seed).unwrap();
        s.check_sorted().unwrap();
        prop_assert_eq!(sorted_unique(s.labels.iter().map(|f| f.t).collect()).len(), s.labels.len());
        prop_assert_eq!(s, sc.simulate(60.0, seed).unwrap());
    }
}
