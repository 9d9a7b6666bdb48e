#![no_main]

use camcal::gradcam::{FeatureStack, GradientStack};
use camcal::io::{decode_tensor, encode_tensor};
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(stack) = decode_tensor(data) {
        assert_eq!(encode_tensor(&stack).unwrap(), data);
        let order = stack.order();
        assert_eq!(FeatureStack::try_from(stack.clone()).is_ok(), order == 0);
        assert_eq!(GradientStack::try_from(stack).is_ok(), order > 0);
    }
});
