#![no_main]

use libfuzzer_sys::fuzz_target;
use proxsense::container::Container;
use proxsense::eval::Fitted;
use proxsense::pipeline;

fuzz_target!(|data: &[u8]| {
    let Ok(c) = Container::decode(data) else {
        return;
    };
    let bytes = c.encode();
    let again = Container::decode(&bytes).expect("re-encoded container decodes");
    assert_eq!(again.encode(), bytes);
    let _ = pipeline::from_container(&c);
    let _ = Fitted::from_container(&c);
});
