use lka3d_core::metrics::*;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const S: [usize; 3] = [4, 4, 4];

fn coords(i: usize, shape: [usize; 3]) -> [i64; 3] {
    [(i / (shape[1] * shape[2])) as i64, ((i / shape[2]) % shape[1]) as i64, (i % shape[2]) as i64]
}

fn random_mask(rng: &mut ChaCha8Rng, density: f64) -> Mask {
    Mask::new(S, (0..64).map(|_| rng.gen_bool(density)).collect()).unwrap()
}

/// Union-find over all foreground pairs within the neighbourhood radius.
fn brute_components(m: &Mask, conn: Connectivity) -> usize {
    let max_l1 = match conn {
        Connectivity::Six => 1,
        Connectivity::Eighteen => 2,
        Connectivity::TwentySix => 3,
    };
    let n = m.data.len();
    let mut parent: Vec<usize> = (0..n).collect();
    fn find(p: &mut Vec<usize>, i: usize) -> usize {
        let mut r = i;
        while p[r] != r {
            r = p[r];
        }
        p[i] = r;
        r
    }
    for a in 0..n {
        for b in 0..n {
            if !m.data[a] || !m.data[b] || a == b {
                continue;
            }
            let (ca, cb) = (coords(a, m.shape), coords(b, m.shape));
            let d: Vec<i64> = (0..3).map(|k| (ca[k] - cb[k]).abs()).collect();
            if d.iter().all(|&x| x <= 1) && d.iter().sum::<i64>() <= max_l1 {
                let (ra, rb) = (find(&mut parent, a), find(&mut parent, b));
                parent[ra] = rb;
            }
        }
    }
    (0..n).filter(|&i| m.data[i] && find(&mut parent, i) == i).count()
}

fn brute_surface(m: &Mask) -> Vec<usize> {
    let s = m.shape;
    (0..m.data.len())
        .filter(|&i| {
            if !m.data[i] {
                return false;
            }
            let c = coords(i, s);
            (0..3).any(|ax| {
                [-1i64, 1].iter().any(|&dlt| {
                    let mut q = c;
                    q[ax] += dlt;
                    if q.iter().zip(s).any(|(&v, n)| v < 0 || v >= n as i64) {
                        return true;
                    }
                    !m.data[((q[0] as usize) * s[1] + q[1] as usize) * s[2] + q[2] as usize]
                })
            })
        })
        .collect()
}

fn brute_percentile(mut v: Vec<f64>, q: f64) -> f64 {
    v.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let pos = q * (v.len() - 1) as f64;
    let i = pos as usize;
    if i + 1 >= v.len() {
        return v[i];
    }
    v[i] * (1.0 - (pos - i as f64)) + v[i + 1] * (pos - i as f64)
}

fn brute_hd95(p: &Mask, g: &Mask, sp: [f64; 3]) -> Option<f64> {
    let (sp_p, sp_g) = (brute_surface(p), brute_surface(g));
    if sp_p.is_empty() || sp_g.is_empty() {
        return None;
    }
    let dist = |a: usize, b: usize| {
        let (ca, cb) = (coords(a, S), coords(b, S));
        (0..3).map(|k| ((ca[k] - cb[k]) as f64 * sp[k]).powi(2)).sum::<f64>().sqrt()
    };
    let directed = |from: &[usize], to: &[usize]| {
        let d: Vec<f64> = from.iter().map(|&a| to.iter().map(|&b| dist(a, b)).fold(f64::INFINITY, f64::min)).collect();
        brute_percentile(d, 0.95)
    };
    Some(directed(&sp_p, &sp_g).max(directed(&sp_g, &sp_p)))
}

#[test]
fn random_pairs_match_brute_force() {
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    let mut hd_checked = 0;
    for trial in 0..1000 {
        let density = [0.05, 0.2, 0.5, 0.8][trial % 4];
        let (p, g) = (random_mask(&mut rng, density), random_mask(&mut rng, density));
        // Dyadic spacings keep voxel-volume products exact in any order.
        let dyadic = [0.5, 0.75, 1.0, 1.25, 2.0];
        let sp = [0, 1, 2].map(|_| dyadic[rng.gen_range(0..dyadic.len())]);

        let inter = (0..64).filter(|&i| p.data[i] && g.data[i]).count();
        let (np, ng) = (p.data.iter().filter(|&&b| b).count(), g.data.iter().filter(|&&b| b).count());
        let want_dice = if np + ng == 0 { 1.0 } else { 2.0 * inter as f64 / (np + ng) as f64 };
        assert_eq!(dice(&p, &g).unwrap(), want_dice, "trial {trial}");

        for conn in [Connectivity::Six, Connectivity::Eighteen, Connectivity::TwentySix] {
            let want = brute_components(&p, conn).abs_diff(brute_components(&g, conn));
            assert_eq!(lcd(&p, &g, conn).unwrap(), want, "trial {trial} {conn:?}");
        }

        let want_avd = np.abs_diff(ng) as f64 * sp[0] * sp[1] * sp[2];
        assert_eq!(avd(&p, &g, sp).unwrap(), want_avd, "trial {trial}");

        let got = hd95(&p, &g, sp).unwrap();
        match brute_hd95(&p, &g, sp) {
            None => assert!(got.is_none(), "trial {trial}"),
            Some(want) => {
                let got = got.expect("both masks non-empty");
                assert!((got - want).abs() < 1e-9, "trial {trial}: {got} vs {want}");
                hd_checked += 1;
            }
        }
    }
    assert!(hd_checked > 700);
}

#[test]
fn lesion_f1_matches_hand_counts() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for _ in 0..200 {
        let (p, g) = (random_mask(&mut rng, 0.1), random_mask(&mut rng, 0.1));
        let conn = Connectivity::TwentySix;
        let (gl, gn) = connected_components(&g, conn);
        let (pl, pn) = connected_components(&p, conn);
        let tp = (1..=gn as u32).filter(|&k| (0..64).any(|i| gl[i] == k && p.data[i])).count();
        let fp = (1..=pn as u32).filter(|&k| !(0..64).any(|i| pl[i] == k && g.data[i])).count();
        let fnn = gn - tp;
        let want = if 2 * tp + fp + fnn == 0 { 1.0 } else { 2.0 * tp as f64 / (2 * tp + fp + fnn) as f64 };
        assert_eq!(lesion_f1(&p, &g, conn).unwrap(), want);
        assert_eq!(brute_components(&g, conn), gn);
    }
}

#[test]
fn worked_examples() {
    let mut p = Mask::empty([1, 1, 8]);
    let mut g = Mask::empty([1, 1, 8]);
    p.data[..4].iter_mut().for_each(|b| *b = true);
    g.data[2..4].iter_mut().for_each(|b| *b = true);
    assert_eq!(dice(&p, &g).unwrap(), 4.0 / 6.0);

    let mut gt2 = Mask::empty([1, 1, 8]);
    gt2.data[0] = true;
    gt2.data[5] = true;
    let mut one = Mask::empty([1, 1, 8]);
    one.data[0] = true;
    assert_eq!(lesion_f1(&one, &gt2, Connectivity::TwentySix).unwrap(), 2.0 / 3.0);

    let mut a = Mask::empty([5, 5, 5]);
    let mut b = Mask::empty([5, 5, 5]);
    a.data[(2 * 5 + 2) * 5] = true;
    b.data[(2 * 5 + 2) * 5 + 3] = true;
    assert_eq!(hd95(&a, &b, [1.0; 3]).unwrap(), Some(3.0));
    assert_eq!(hd95(&a, &b, [2.0; 3]).unwrap(), Some(6.0));
}

#[test]
fn report_aggregates_recompute() {
    use lka3d_core::pipeline::Volume;
    let mk = |vals: &[f32]| Volume::new([1, 1, 6], [1.0; 3], 1, vals.to_vec()).unwrap();
    let gt = mk(&[0., 1., 1., 0., 0., 1.]);
    let preds = [mk(&[0., 1., 1., 0., 0., 1.]), mk(&[0., 1., 0., 0., 0., 0.]), mk(&[0.; 6])];
    let regions = Region::per_class(2);
    let mut rows = Vec::new();
    for (i, p) in preds.iter().enumerate() {
        rows.extend(evaluate_case(&format!("c{i}"), p, &gt, &regions, Connectivity::TwentySix).unwrap());
    }
    let report = MetricsReport::new(rows.clone());
    let agg = &report.aggregate[0];
    let d: Vec<f64> = rows.iter().map(|r| r.dice).collect();
    assert_eq!(agg.dice.mean, Some(d.iter().sum::<f64>() / 3.0));
    let mut sorted = d.clone();
    sorted.sort_by(f64::total_cmp);
    assert_eq!(agg.dice.median, Some(sorted[1]));
    assert_eq!(agg.hd95.n, 2);
    assert_eq!(agg.hd95_missing, 1);
    assert_eq!(rows[0].dice, 1.0);
    assert_eq!(rows[0].hd95, Some(0.0));
}

proptest! {
    #[test]
    fn symmetric_metrics(bits_p in proptest::collection::vec(any::<bool>(), 64),
                         bits_g in proptest::collection::vec(any::<bool>(), 64)) {
        let p = Mask::new(S, bits_p).unwrap();
        let g = Mask::new(S, bits_g).unwrap();
        let d = dice(&p, &g).unwrap();
        prop_assert!((0.0..=1.0).contains(&d));
        prop_assert_eq!(d, dice(&g, &p).unwrap());
        prop_assert_eq!(hd95(&p, &g, [1.0, 1.5, 2.0]).unwrap(), hd95(&g, &p, [1.0, 1.5, 2.0]).unwrap());
        prop_assert_eq!(avd(&p, &g, [1.0; 3]).unwrap(), avd(&g, &p, [1.0; 3]).unwrap());
        if let Some(h) = hd95(&p, &g, [1.0; 3]).unwrap() {
            prop_assert!(h >= 0.0);
        }
    }

    #[test]
    fn adding_a_true_positive_never_lowers_dice(bits_p in proptest::collection::vec(any::<bool>(), 64),
                                                 bits_g in proptest::collection::vec(any::<bool>(), 64)) {
        let p = Mask::new(S, bits_p).unwrap();
        let g = Mask::new(S, bits_g).unwrap();
        let before = dice(&p, &g).unwrap();
        if let Some(i) = (0..64).find(|&i| g.data[i] && !p.data[i]) {
            let mut p2 = p.clone();
            p2.data[i] = true;
            prop_assert!(dice(&p2, &g).unwrap() >= before);
        }
    }
}
