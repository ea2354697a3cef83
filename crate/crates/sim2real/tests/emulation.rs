use std::fs;

use cfo_core::signal::demodulate_frame;
use cfo_core::{ber, DeviceProfile, OfdmConfig};
use cfo_sim2real::capture::data_path;
use cfo_sim2real::{emulate_device, emulate_device_captures, ingest_capture};

#[test]
fn thousand_frames_fill_the_nominal_sample_count() {
    let cfg = OfdmConfig::default();
    let cap = emulate_device(&DeviceProfile::lowcost(), 1000, 20.0, &cfg, 1, 0).unwrap();
    assert_eq!(cap.samples.len(), 1_600_000);
    assert_eq!(cap.bits.len(), 1000 * 2540);
    let theta = cap.meta.true_theta.unwrap();
    assert!((theta - DeviceProfile::lowcost().theta(&cfg).value()).abs() < 1e-12);
}

#[test]
fn neutral_device_demodulates_cleanly_without_compensation() {
    let cfg = OfdmConfig::default();
    let cap = emulate_device(&DeviceProfile::neutral(), 20, 300.0, &cfg, 2, 0).unwrap();
    for (frame, bits) in cap.frames().unwrap() {
        assert_eq!(ber(&bits, &demodulate_frame(frame, &cfg).unwrap()).unwrap(), 0.0);
    }
}

#[test]
fn fixed_seed_gives_identical_files_and_round_trips() {
    let cfg = OfdmConfig::default();
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let ma = emulate_device_captures(&DeviceProfile::mid(), 5, 10.0, &cfg, 7, 0, a.path(), "mid").unwrap();
    let mb = emulate_device_captures(&DeviceProfile::mid(), 5, 10.0, &cfg, 7, 0, b.path(), "mid").unwrap();
    for ext in ["cf32", "meta", "bits"] {
        assert_eq!(fs::read(ma.with_extension(ext)).unwrap(), fs::read(mb.with_extension(ext)).unwrap(), "{ext}");
    }
    assert_eq!(fs::metadata(data_path(&ma)).unwrap().len(), 5 * 1600 * 8);
    let read = ingest_capture(&ma).unwrap();
    assert_eq!(read, emulate_device(&DeviceProfile::mid(), 5, 10.0, &cfg, 7, 0).unwrap());
    let other = emulate_device(&DeviceProfile::mid(), 5, 10.0, &cfg, 8, 0).unwrap();
    assert_ne!(read.samples, other.samples);
    let next_session = emulate_device(&DeviceProfile::mid(), 5, 10.0, &cfg, 7, 1).unwrap();
    assert_ne!(read.bits, next_session.bits);
}
