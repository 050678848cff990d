use headsplat::bench::{counting_installed, measure_peak, CountingAlloc};

#[global_allocator]
static ALLOC: CountingAlloc = CountingAlloc;

// The counters are process-wide, so this binary holds a single test.
#[test]
fn peak_tracks_live_bytes_not_total_allocations() {
    assert!(counting_installed());
    let (_, peak) = measure_peak(|| {
        for _ in 0..8 {
            let v = vec![1u8; 1 << 20];
            std::hint::black_box(&v);
        }
    });
    let peak = peak.unwrap();
    assert!(peak >= 1 << 20, "{peak}");
    assert!(peak < 2 << 20, "{peak}");

    let (_, peak) = measure_peak(|| {
        let kept: Vec<Vec<u8>> = (0..4).map(|_| vec![1u8; 1 << 20]).collect();
        std::hint::black_box(&kept);
    });
    assert!(peak.unwrap() >= 4 << 20);
}
