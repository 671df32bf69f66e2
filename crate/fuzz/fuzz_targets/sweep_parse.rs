#![no_main]

use fairfaucet::scenario::{expand_sweep, parse_sweep};
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    let axes: Vec<_> = text.lines().take(3).filter_map(|l| parse_sweep(l).ok()).collect();
    let total: usize = axes.iter().map(|a| a.values.len()).product();
    if total <= 4096 {
        assert_eq!(expand_sweep(&axes).len(), total);
    }
});
