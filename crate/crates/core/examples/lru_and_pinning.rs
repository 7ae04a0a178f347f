//! Eviction order in the memory tier, and how pinning shields hot blocks.

use twotier::store::KIB;
use twotier::{
    BackingStore, DeviceTiming, PinTarget, ReadMode, ServerTarget, SimClock, StoreConfig,
    StripeLayout, TieredStore, WriteMode,
};

fn main() -> twotier::Result<()> {
    let servers = ServerTarget::simulated_set(1, DeviceTiming::symmetric(100.0, 0.0));
    let backing = BackingStore::simulated(
        servers,
        StripeLayout::new(4 * KIB, vec![0]),
        SimClock::virtual_clock(),
    )?;
    let config = StoreConfig {
        block_size: 4 * KIB,
        tier_capacity: 16 * KIB,
        app_buffer: 4 * KIB,
        backing_buffer: 4 * KIB,
        ..StoreConfig::default()
    };
    let store = TieredStore::new(config, backing)?;

    for name in ["a", "b", "c", "d"] {
        let h = store.create(name, WriteMode::WriteThrough)?;
        store.append(&h, &[name.as_bytes()[0]; 4096])?;
        store.seal(name)?;
    }
    println!(
        "tier holds blocks {:?} (least recent first)",
        store.tier_lru_order()
    );

    store.read_all("a", ReadMode::TieredCaching)?;
    store.pin(PinTarget::Path("b"), true)?;
    println!(
        "after reading a and pinning b: {:?}",
        store.tier_lru_order()
    );

    println!("evicting 8 KiB removes {:?}", store.evict(8 * KIB));
    println!("left in the tier: {:?}", store.tier_lru_order());
    for name in ["a", "b", "c", "d"] {
        println!(
            "  {name}: {:.0}% resident",
            100.0 * store.residency_ratio(name)?
        );
    }
    Ok(())
}
