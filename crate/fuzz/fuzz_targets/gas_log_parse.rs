#![no_main]

use fairfaucet::report::{parse_gas_log, summarize, write_gas_log};
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(rows) = parse_gas_log(text) {
        let mut buf = Vec::new();
        write_gas_log(&mut buf, &rows).unwrap();
        let again = parse_gas_log(std::str::from_utf8(&buf).unwrap()).unwrap();
        assert_eq!(again, rows);
        let _ = summarize(&rows, "amf", 10);
    }
});
