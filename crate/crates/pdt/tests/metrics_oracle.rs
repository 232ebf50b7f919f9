//! Exhaustive oracles for every metric: pair enumeration and full
//! threshold scans, compared bit-exactly against the sweep implementation
//! on randomized score sets (with deliberate ties).

mod common;

use common::{brute_auc, brute_eer, brute_vr, random_scores};
use pdt::metrics::{auc, eer, rank1, vr_at_far, IdentificationSet, FAR_TARGETS};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;

#[test]
fn verification_metrics_match_brute_force_exactly() {
    let mut rng = ChaCha12Rng::seed_from_u64(2024);
    for case in 0..120 {
        let s = random_scores(&mut rng);
        assert_eq!(
            auc(&s).unwrap().to_bits(),
            brute_auc(&s).to_bits(),
            "auc mismatch in case {case}"
        );
        assert_eq!(
            eer(&s).unwrap().to_bits(),
            brute_eer(&s).to_bits(),
            "eer mismatch in case {case}"
        );
        for t in FAR_TARGETS {
            let fast = vr_at_far(&s, t).unwrap();
            let slow = brute_vr(&s, t);
            assert_eq!(fast.0.to_bits(), slow.0.to_bits(), "vr mismatch in case {case}");
            assert_eq!(fast.1.to_bits(), slow.1.to_bits(), "threshold mismatch in case {case}");
        }
    }
}

#[test]
fn rank1_matches_brute_force() {
    let mut rng = ChaCha12Rng::seed_from_u64(7);
    for _ in 0..30 {
        let n_ids = rng.gen_range(2..8u32);
        let d = rng.gen_range(2..5);
        let mut gallery = Vec::new();
        for id in 0..n_ids {
            for _ in 0..rng.gen_range(1..3) {
                gallery.push((id, (0..d).map(|_| rng.gen_range(-1.0..1.0)).collect::<Vec<f64>>()));
            }
        }
        let probes: Vec<(u32, Vec<f64>)> = (0..50)
            .map(|_| {
                (
                    rng.gen_range(0..n_ids),
                    (0..d).map(|_| rng.gen_range(-1.0..1.0)).collect(),
                )
            })
            .collect();
        let set = IdentificationSet {
            gallery: gallery.clone(),
            probes: probes.clone(),
        };
        let fast = rank1(&set).unwrap();

        let mut hits = 0;
        for (pid, pe) in &probes {
            let mut best = (f64::NEG_INFINITY, 0u32);
            for (gid, ge) in &gallery {
                let s: f64 = pe.iter().zip(ge).map(|(a, b)| a * b).sum();
                if s > best.0 {
                    best = (s, *gid);
                }
            }
            if best.1 == *pid {
                hits += 1;
            }
        }
        assert_eq!(fast, hits as f64 / probes.len() as f64);
    }
}
