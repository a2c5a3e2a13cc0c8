use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use siqrng::config::ProtocolConfig;
use siqrng::extractor::{read_bits, BitVec};
use siqrng::nist::{self, ks_uniform, TestKind};
use siqrng::protocol::Engine;

#[test]
fn p_values_are_uniform_on_pseudorandom_input() {
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    let samples: Vec<BitVec> = (0..300).map(|_| BitVec::random(20_000, &mut rng)).collect();
    let s = nist::suite(&samples, 0.01).unwrap();
    for (j, kind) in TestKind::ALL.iter().enumerate() {
        let ps: Vec<f64> = s.outcomes.iter().map(|o| o[j].p_value).collect();
        let (d, p) = ks_uniform(&ps);
        assert!(p > 1e-3, "{kind}: KS D = {d}, p = {p}");
    }
    assert!(s.all_ok(), "{:?}", s.tests);
}

#[test]
fn biased_source_is_rejected() {
    let mut rng = ChaCha8Rng::seed_from_u64(78);
    let samples: Vec<BitVec> = (0..50)
        .map(|_| BitVec::from_bools(&(0..20_000).map(|_| rng.random_bool(0.52)).collect::<Vec<_>>()))
        .collect();
    let s = nist::suite(&samples, 0.01).unwrap();
    let mono = s.tests.iter().find(|t| t.test == TestKind::Monobit).unwrap();
    assert!(!mono.proportion_ok);
    assert!(!s.all_ok());
}

#[test]
fn reverse_cusum_matches_forward_on_reversed_input() {
    let mut rng = ChaCha8Rng::seed_from_u64(79);
    let b = BitVec::random(5000, &mut rng);
    let rev = BitVec::from_bools(&b.iter().collect::<Vec<_>>().into_iter().rev().collect::<Vec<_>>());
    let f = nist::cumulative_sums(&b, true).unwrap();
    let r = nist::cumulative_sums(&rev, false).unwrap();
    assert!((f - r).abs() < 1e-15);
}

#[test]
fn session_output_passes_suite() {
    let cfg = ProtocolConfig {
        blocks: 12,
        seed: 5,
        ..ProtocolConfig::default()
    };
    let blocks = cfg.blocks;
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bits.bin");
    let f = std::fs::File::create(&path).unwrap();
    let rep = Engine::new(cfg).unwrap().with_output(Box::new(f), false).run(blocks).unwrap();
    assert!(rep.accounting_balanced());

    let bits = read_bits(std::fs::File::open(&path).unwrap(), false).unwrap();
    assert!(bits.len() as u64 >= rep.stats.bits_banked);
    assert!(bits.len() as u64 - rep.stats.bits_banked < 8);
    let samples = nist::split_samples(&bits, 40_000);
    assert!(samples.len() >= 20, "{}", samples.len());
    let s = nist::suite(&samples[..20], 0.01).unwrap();
    assert!(s.all_ok(), "{:?}", s.tests);
}
