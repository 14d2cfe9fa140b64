use proptest::prelude::*;

use skewlab::analysis::{
    distortion_check, finite_time_exponent, measure_distance, twin_periodic, EmpiricalMeasure, PotentialFamily,
};
use skewlab::axioms::{
    accessibility_depth, bounded_covering, cec_search, successor_covering, validate_certificate, BlenderParams,
    CecConstants, Direction,
};
use skewlab::circle::{arc_covers, arc_covers_tol, image_arc, neighborhood, ARC_TOL};
use skewlab::horseshoe::{entropy_bounds_from, max_entropy_component, pigeonhole, select_transitions, EntropyBounds};
use skewlab::skeleton::{build_skeleton, skeleton_validate, SkeletonParams};
use skewlab::symbolic::{admissible_word_count, sft_entropy};
use skewlab::systems::{fiber_eval, fiber_eval_backward, uniform_norm, GOLDEN};
use skewlab::{Angle, Arc, SkewSystem, TransitionMatrix, Word};

fn systems() -> Vec<SkewSystem> {
    vec![SkewSystem::synthetic_blender(), SkewSystem::mobius_rotation(0.5, GOLDEN).unwrap()]
}

fn word(k: u8, max: usize) -> impl Strategy<Value = Word> {
    prop::collection::vec(0..k, 1..=max).prop_map(Word::new)
}

fn arc(max_len: f64) -> impl Strategy<Value = Arc> {
    (0.0..1.0f64, 1e-6..max_len).prop_map(|(a, l)| Arc::new(a, l).unwrap())
}

/// Random primitive matrix: a cycle through every state plus a self-loop.
fn primitive(max: usize) -> impl Strategy<Value = TransitionMatrix> {
    (1..=max).prop_flat_map(|n| {
        (Just(n), prop::collection::vec(prop::bool::weighted(0.3), n * n)).prop_map(|(n, bits)| {
            let mut a = TransitionMatrix::zeros(n);
            for i in 0..n {
                for j in 0..n {
                    a.set(i, j, bits[i * n + j]);
                }
                a.set(i, (i + 1) % n, true);
            }
            a.set(0, 0, true);
            a
        })
    })
}

fn matrix(max: usize) -> impl Strategy<Value = TransitionMatrix> {
    (1..=max).prop_flat_map(|n| {
        prop::collection::vec(any::<bool>(), n * n).prop_map(move |bits| {
            let mut a = TransitionMatrix::zeros(n);
            for (idx, b) in bits.into_iter().enumerate() {
                a.set(idx / n, idx % n, b);
            }
            a
        })
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn mutual_cover_means_equal(a in arc(0.9), eps in -1e-13..1e-13f64) {
        let b = Arc::new(a.left() + eps, a.length()).unwrap();
        if arc_covers(&a, &b) && arc_covers(&b, &a) {
            prop_assert!(Angle::new(a.left()).distance(Angle::new(b.left())) <= ARC_TOL);
            prop_assert!((a.length() - b.length()).abs() <= ARC_TOL);
        }
        let c = Arc::new(a.left(), a.length() * 0.5).unwrap();
        prop_assert!(!(arc_covers(&a, &c) && arc_covers(&c, &a)));
    }

    #[test]
    fn neighborhoods_add(a in arc(0.5), r1 in 0.0..0.1f64, r2 in 0.0..0.1f64) {
        let one = neighborhood(&a, r1 + r2).unwrap();
        let two = neighborhood(&neighborhood(&a, r1).unwrap(), r2).unwrap();
        prop_assert!(Angle::new(one.left()).distance(Angle::new(two.left())) <= 1e-12);
        prop_assert!((one.length() - two.length()).abs() <= 1e-12);
    }

    #[test]
    fn image_keeps_containment(sys_i in 0..2usize, s in 0..2u8, a in arc(0.4), u in 0.0..1.0f64, v in 0.0..1.0f64) {
        let sys = &systems()[sys_i];
        let f = sys.map(s);
        let (lo, hi) = if u < v { (u, v) } else { (v, u) };
        let b = Arc::new(a.point_at(lo), a.length() * (hi - lo)).unwrap();
        let ia = image_arc(|x| f.eval(x), &a);
        let ib = image_arc(|x| f.eval(x), &b);
        prop_assert!(arc_covers_tol(&ia, &ib, 1e-12));
    }

    #[test]
    fn image_length_mean_value(sys_i in 0..2usize, s in 0..2u8, a in arc(0.4)) {
        let sys = &systems()[sys_i];
        let f = sys.map(s);
        let ia = image_arc(|x| f.eval(x), &a);
        let d: Vec<f64> = a.grid(4000).iter().map(|&x| f.deriv(x)).collect();
        let lo = d.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = d.iter().copied().fold(0.0, f64::max);
        let l = a.length();
        // grid extremes approximate the true ones to first order in the spacing
        prop_assert!(ia.length() >= lo * l * (1.0 - 1e-3) - 1e-12);
        prop_assert!(ia.length() <= hi * l * (1.0 + 1e-3) + 1e-12);
    }

    #[test]
    fn chain_rule(sys_i in 0..2usize, w in word(2, 40), cut in 0.0..1.0f64, x in 0.0..1.0f64) {
        let sys = &systems()[sys_i];
        let k = (cut * w.len() as f64) as usize;
        let (u, v) = (Word::new(w.symbols()[..k].to_vec()), Word::new(w.symbols()[k..].to_vec()));
        let whole = fiber_eval(sys, &w, Angle::new(x)).unwrap();
        let first = fiber_eval(sys, &u, Angle::new(x)).unwrap();
        let second = fiber_eval(sys, &v, first.point).unwrap();
        prop_assert!((whole.log_deriv - first.log_deriv - second.log_deriv).abs() < 1e-9);
        prop_assert!(whole.point.distance(second.point) < 1e-9);
    }

    #[test]
    fn cocycle_inverts(sys_i in 0..2usize, w in word(2, 12)) {
        let sys = &systems()[sys_i];
        for i in 0..64 {
            let x = Angle::new(i as f64 / 64.0);
            let y = fiber_eval(sys, &w, x).unwrap().point;
            let back = fiber_eval_backward(sys, &w, y).unwrap().point;
            prop_assert!(back.distance(x) < 1e-9, "{} vs {}", back.value(), x.value());
        }
    }

    #[test]
    fn mobius_norm_and_fixed_points(t in 0.05..0.95f64, rho in 0.0..1.0f64) {
        let sys = SkewSystem::mobius_rotation(t, rho).unwrap();
        prop_assert!(uniform_norm(&sys, 2000).unwrap() >= 1.0);
        let f = sys.map(0);
        prop_assert!((f.deriv(0.0) * f.deriv(0.5) - 1.0).abs() < 1e-9);
    }

    #[test]
    fn entropy_invariant_under_relabelling(a in matrix(8), seed in any::<u64>()) {
        let n = a.size();
        let mut perm: Vec<usize> = (0..n).collect();
        let mut s = seed;
        for i in (1..n).rev() {
            s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            perm.swap(i, (s >> 33) as usize % (i + 1));
        }
        prop_assert!((sft_entropy(&a) - sft_entropy(&a.permuted(&perm))).abs() < 1e-9);
    }

    #[test]
    fn entropy_at_most_log_size(a in matrix(8)) {
        let n = a.size();
        let h = sft_entropy(&a);
        let full = (0..n).all(|i| a.row_count(i) == n);
        prop_assert!(h <= (n as f64).ln() + 1e-12);
        // a lone state without its loop is the empty shift, entropy 0 = log 1
        if n > 1 {
            prop_assert_eq!((h - (n as f64).ln()).abs() < 1e-9, full);
        }
    }

    #[test]
    fn word_counts_track_entropy(a in primitive(8)) {
        let c = |n: usize| admissible_word_count(&a, n).unwrap() as f64;
        let rate = (c(40) / c(20)).ln() / 20.0;
        prop_assert!((rate - sft_entropy(&a)).abs() < 0.02, "{rate} vs {}", sft_entropy(&a));
    }

    #[test]
    fn measure_distance_is_pseudometric(ws in prop::collection::vec((word(2, 6), 0.0..1.0f64), 3)) {
        let sys = SkewSystem::mobius_rotation(0.5, GOLDEN).unwrap();
        let fam = PotentialFamily::standard(2, 24);
        let ms: Vec<EmpiricalMeasure> =
            ws.iter().map(|(w, x)| EmpiricalMeasure::periodic(&sys, w, Angle::new(*x), &fam).unwrap()).collect();
        let d = |i: usize, j: usize| measure_distance(&ms[i], &ms[j], &fam, 24).unwrap().value;
        prop_assert_eq!(d(0, 0), 0.0);
        prop_assert!((d(0, 1) - d(1, 0)).abs() <= 1e-12);
        prop_assert!(d(0, 2) <= d(0, 1) + d(1, 2) + 1e-12);
        prop_assert!(d(0, 1) >= 0.0 && d(0, 1) <= 1.0);
    }

    #[test]
    fn transitions_pigeonhole(c in prop::collection::vec(0..6usize, 1..12), r in prop::collection::vec(0..6usize, 12)) {
        let n = c.len();
        let times: Vec<Vec<usize>> = (0..n).map(|i| (0..n).map(|j| 8 + c[i] + r[j]).collect()).collect();
        let (row_times, a) = select_transitions(&times);
        prop_assert!(pigeonhole(&times, &a));
        for (i, row) in times.iter().enumerate() {
            for (j, &t) in row.iter().enumerate() {
                prop_assert!(!a.get(i, j) || t == row_times[i]);
            }
        }
        let kept = max_entropy_component(&a);
        let sub = a.restrict(&kept);
        let t: Vec<Vec<usize>> = kept.iter().map(|&i| kept.iter().map(|&j| times[i][j]).collect()).collect();
        let rt: Vec<usize> = kept.iter().map(|&i| row_times[i]).collect();
        let EntropyBounds { lower, upper, sft_rate, holds, .. } = entropy_bounds_from(&sub, &t, &rt);
        prop_assert!(holds, "{lower} {sft_rate} {upper}");
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn period_doubling_keeps_exponent(w in word(2, 8)) {
        let sys = SkewSystem::mobius_rotation(0.5, GOLDEN).unwrap();
        let twin = twin_periodic(&sys, &w).unwrap();
        // the attracting point is stable under forward iteration
        if let Some(fp) = twin.attracting {
            let x = Angle::new(fp.angle);
            let ww = w.concat(&w);
            let one = finite_time_exponent(&sys, &w, x).unwrap();
            let two = finite_time_exponent(&sys, &ww, x).unwrap();
            prop_assert!((one - two).abs() < 1e-9, "{one} vs {two}");
        }
    }

    #[test]
    fn twin_points_alternate(w in word(2, 10)) {
        let sys = SkewSystem::mobius_rotation(0.5, GOLDEN).unwrap();
        let twin = twin_periodic(&sys, &w).unwrap();
        let fps = &twin.fixed_points;
        if fps.iter().any(|f| f.log_multiplier < 0.0) {
            prop_assert!(fps.iter().any(|f| f.log_multiplier >= 0.0));
        }
        let hyperbolic = fps.iter().all(|f| f.log_multiplier.abs() > 1e-6);
        if hyperbolic && fps.len() > 1 {
            for k in 0..fps.len() {
                let next = &fps[(k + 1) % fps.len()];
                prop_assert!(fps[k].log_multiplier.signum() != next.log_multiplier.signum());
            }
        }
    }

    #[test]
    fn distortion_prefixes_monotone(w in word(2, 30), c in 0.0..1.0f64, r in 1e-9..1e-6f64) {
        let sys = SkewSystem::mobius_rotation(0.5, GOLDEN).unwrap();
        let z = Arc::ball(c, r).unwrap();
        let rep = distortion_check(&sys, &w, &z, 0.05, 0.0025).unwrap();
        prop_assert!(rep.per_prefix.windows(2).all(|p| p[0] <= p[1]));
    }

    #[test]
    fn certificates_revalidate(sys_i in 0..2usize, c in 0.0..1.0f64, e in 2.0..6.0f64) {
        let sys = &systems()[sys_i];
        let j = if sys_i == 0 { Arc::new(0.22, 0.06).unwrap() } else { Arc::new(0.45, 0.1).unwrap() };
        let h = Arc::ball(j.point_at(c), 0.5 * 10f64.powf(-e)).unwrap();
        let target = j.neighborhood(0.01).unwrap();
        let cert = cec_search(sys, &j, &h, 0.01, 0.01, 128).unwrap();
        prop_assert!(validate_certificate(sys, &h, &target, 0.01, ARC_TOL, &cert));
    }

    #[test]
    fn successor_certificates_validate(u in 0.0..1.0f64, e in 1.5..6.0f64) {
        let sys = SkewSystem::synthetic_blender();
        let p = BlenderParams::synthetic();
        let cd = p.superposition();
        let len = (cd.length() * 10f64.powf(-e)).min(cd.length());
        let h = Arc::new(cd.left() + u * (cd.length() - len), len).unwrap();
        let target = p.domain();
        let s = successor_covering(&sys, &p, &h, &target).unwrap();
        prop_assert!(validate_certificate(&sys, &h, &target, 0.0, ARC_TOL, &s.certificate));
    }

    #[test]
    fn bounded_covering_length(c in 0.0..1.0f64, e in 3.0..9.0f64) {
        let sys = SkewSystem::synthetic_blender();
        let j = Arc::new(0.22, 0.06).unwrap();
        let k = CecConstants { k1: 0.01, k2: 1.954325168564633, k3: -2.0, k4: 0.01, k5: 0.43918512634369905 };
        let h = Arc::ball(j.point_at(c), 0.5 * 10f64.powf(-e)).unwrap();
        let b = bounded_covering(&sys, &j, &h, &k, 256).unwrap();
        let l = k.length_bound(h.length());
        let iota = b.certificate.length as f64;
        prop_assert!(l <= iota && iota <= 2.0 * l, "{l} {iota}");
        prop_assert!(b.lower_ok && b.upper_ok);
    }

    #[test]
    fn skeleton_round_trip(m in 2..6usize, alpha in -0.5..0.5f64, eps in 0.05..0.6f64) {
        let sys = SkewSystem::synthetic_blender();
        let p = SkeletonParams::new(Arc::new(0.22, 0.06).unwrap(), m, alpha, eps, 5, 11);
        if let Ok(sk) = build_skeleton(&sys, &p) {
            prop_assert!(skeleton_validate(&sys, &sk).pass());
            prop_assert!((sk.card() as f64).ln() / m as f64 <= 2f64.ln() + 1e-12);
        }
    }

    #[test]
    fn wider_window_keeps_words(m in 2..6usize, alpha in -0.5..0.5f64, eps in 0.05..0.5f64, extra in 0.0..0.5f64) {
        let sys = SkewSystem::synthetic_blender();
        let j = Arc::new(0.22, 0.06).unwrap();
        let card = |e: f64| build_skeleton(&sys, &SkeletonParams::new(j, m, alpha, e, 5, 11)).map(|s| s.card()).unwrap_or(0);
        prop_assert!(card(eps) <= card(eps + extra));
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(6))]

    #[test]
    fn access_depth_shrinks_with_j(c in 0.1..0.9f64, l in 0.02..0.05f64, grow in 1.0..3.0f64) {
        let sys = SkewSystem::synthetic_blender();
        let small = Arc::ball(c, l).unwrap();
        let big = Arc::ball(c, l * grow).unwrap();
        for dir in [Direction::Forward, Direction::Backward] {
            let a = accessibility_depth(&sys, &small, dir, 500, 64);
            let b = accessibility_depth(&sys, &big, dir, 500, 64);
            if let Ok(da) = a {
                prop_assert!(b.unwrap() <= da);
            }
        }
    }
}
