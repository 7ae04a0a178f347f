mod common;

use proptest::prelude::*;

use common::{lru_trace, store_sequence};

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn random_sequences_never_return_wrong_bytes(seed in any::<u64>()) {
        if let Err(e) = store_sequence(seed, 120) {
            prop_assert!(false, "{}", e);
        }
    }

    #[test]
    fn tier_matches_list_oracle(seed in any::<u64>()) {
        if let Err(e) = lru_trace(seed, 400) {
            prop_assert!(false, "{}", e);
        }
    }
}

#[test]
fn sequences_exercise_reads_and_losses() {
    let mut reads = 0;
    let mut losses = 0;
    for seed in 0..40 {
        let r = store_sequence(seed, 150).unwrap();
        reads += r.reads_checked;
        losses += r.data_loss_errors;
    }
    assert!(reads > 500, "only {reads} reads checked");
    assert!(losses > 0, "no data-loss path exercised");
}

#[test]
fn lru_traces_evict_something() {
    let compared: usize = (0..20).map(|s| lru_trace(s, 1000).unwrap()).sum();
    assert!(compared > 100);
}
