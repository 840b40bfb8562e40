use std::ffi::{CStr, CString};
use std::ptr;

use kwapi_ffi::*;

const KEY: &[u8] = b"0123456789abcdef";

fn last_error() -> String {
    let p = kwapi_last_error();
    assert!(!p.is_null());
    unsafe { CStr::from_ptr(p) }.to_string_lossy().into_owned()
}

fn new_measurement(probe: &str, t: f64, w: f64) -> *mut KwapiMeasurement {
    let probe = CString::new(probe).unwrap();
    let mut m = ptr::null_mut();
    let st = unsafe { kwapi_measurement_new(probe.as_ptr(), t, w, &mut m) };
    assert_eq!(st, KwapiStatus::Ok);
    m
}

fn encode(m: *const KwapiMeasurement) -> Vec<u8> {
    let mut len = 0;
    let st = unsafe { kwapi_measurement_encode(m, ptr::null_mut(), 0, &mut len) };
    assert_eq!(st, KwapiStatus::BufferTooSmall);
    let mut buf = vec![0u8; len];
    let st = unsafe { kwapi_measurement_encode(m, buf.as_mut_ptr(), buf.len(), &mut len) };
    assert_eq!(st, KwapiStatus::Ok);
    buf
}

#[test]
fn encode_matches_core() {
    let m = new_measurement("siteA/p1", 1000.0, 230.0);
    unsafe {
        assert_eq!(kwapi_measurement_set_volts(m, 241.2), KwapiStatus::Ok);
        assert_eq!(kwapi_measurement_set_amps(m, 0.95), KwapiStatus::Ok);
        assert_eq!(kwapi_measurement_set_amps(m, -1.0), KwapiStatus::InvalidArgument);
    }
    assert_eq!(
        encode(m),
        br#"{"a":0.95,"probe":"siteA/p1","timestamp":1000.0,"v":241.2,"w":230.0}"#
    );
    let mut len = 0;
    let mut buf = [0u8; 32];
    unsafe {
        assert_eq!(kwapi_measurement_probe(m, buf.as_mut_ptr(), buf.len(), &mut len), KwapiStatus::Ok);
        assert_eq!(kwapi_measurement_watts(m), 230.0);
        assert_eq!(kwapi_measurement_timestamp(m), 1000.0);
        kwapi_measurement_free(m);
    }
    assert_eq!(&buf[..len], b"siteA/p1");
}

#[test]
fn sign_decode_verify() {
    let m = new_measurement("siteA/p1", 1000.0, 230.0);
    unsafe {
        assert_eq!(kwapi_measurement_set_volts(m, 241.2), KwapiStatus::Ok);
        assert_eq!(kwapi_measurement_set_amps(m, 0.95), KwapiStatus::Ok);
        assert_eq!(kwapi_measurement_sign(m, KEY.as_ptr(), KEY.len()), KwapiStatus::Ok);
    }
    let wire = encode(m);
    let text = String::from_utf8(wire.clone()).unwrap();
    assert!(text.contains(
        r#""signature":"2bed14318b9ff4add8cea95b7ec671d54b15408dc783d5833150392b0f8f89cf""#
    ));

    let mut back = ptr::null_mut();
    let mut ok = false;
    unsafe {
        assert_eq!(kwapi_measurement_decode(wire.as_ptr(), wire.len(), &mut back), KwapiStatus::Ok);
        assert_eq!(kwapi_measurement_verify(back, KEY.as_ptr(), KEY.len(), &mut ok), KwapiStatus::Ok);
        assert!(ok);
        let other = b"fedcba9876543210";
        assert_eq!(kwapi_measurement_verify(back, other.as_ptr(), other.len(), &mut ok), KwapiStatus::Ok);
        assert!(!ok);
        assert_eq!(kwapi_measurement_verify(back, KEY.as_ptr(), 8, &mut ok), KwapiStatus::KeyTooShort);
        kwapi_measurement_free(back);
        kwapi_measurement_free(m);
    }
}

#[test]
fn errors_are_reported() {
    let bad = CString::new("no-slash").unwrap();
    let mut m = ptr::null_mut();
    unsafe {
        assert_eq!(kwapi_measurement_new(bad.as_ptr(), 1.0, 1.0, &mut m), KwapiStatus::InvalidArgument);
        assert!(m.is_null());
        assert!(!last_error().is_empty());
        assert_eq!(kwapi_measurement_new(ptr::null(), 1.0, 1.0, &mut m), KwapiStatus::NullPointer);
        let junk = b"{not json";
        assert_eq!(kwapi_measurement_decode(junk.as_ptr(), junk.len(), &mut m), KwapiStatus::Decode);
        kwapi_measurement_free(ptr::null_mut());
        kwapi_archive_free(ptr::null_mut());
    }
}

#[test]
fn energy_and_quantize() {
    let (mut kwh, mut gap) = (0.0, false);
    unsafe {
        assert_eq!(kwapi_integrate_energy(1000.0, 0.0, 1000.0, 3600.0, 7200.0, &mut kwh, &mut gap), KwapiStatus::Ok);
        assert_eq!((kwh, gap), (1.0, false));
        assert_eq!(kwapi_integrate_energy(100.0, 0.0, 100.0, 100.0, 60.0, &mut kwh, &mut gap), KwapiStatus::Ok);
        assert_eq!((kwh, gap), (0.0, true));
        assert_eq!(kwapi_integrate_energy(1.0, 5.0, 1.0, 4.0, 60.0, &mut kwh, &mut gap), KwapiStatus::OutOfOrder);
    }
    assert_eq!(kwapi_quantize(100.07, 0.125), 100.125);
    assert!(kwapi_quantize(1.0, 0.0).is_nan());
}

#[test]
fn archive_round_trip() {
    let mut a = ptr::null_mut();
    let mut outcome = KwapiUpdate::Invalid;
    unsafe {
        assert_eq!(kwapi_archive_new(10.0, 4, KwapiConsolidation::Average, &mut a), KwapiStatus::Ok);
        for (t, w) in [(0.0, 100.0), (5.0, 200.0), (30.0, 50.0)] {
            assert_eq!(kwapi_archive_update(a, t, w, &mut outcome), KwapiStatus::Ok);
            assert_eq!(outcome, KwapiUpdate::Accepted);
        }
        assert_eq!(kwapi_archive_update(a, 1.0, 1.0, &mut outcome), KwapiStatus::Ok);
        assert_eq!(outcome, KwapiUpdate::Late);

        let mut starts = [0.0; 8];
        let mut values = [0.0; 8];
        let mut n = 0;
        assert_eq!(
            kwapi_archive_fetch(a, 0.0, 40.0, starts.as_mut_ptr(), values.as_mut_ptr(), 8, &mut n),
            KwapiStatus::Ok
        );
        assert_eq!(&starts[..n], &[0.0, 10.0, 20.0, 30.0]);
        assert_eq!(values[0], 150.0);
        assert!(values[1].is_nan() && values[2].is_nan());
        assert_eq!(values[3], 50.0);

        let mut len = 0;
        assert_eq!(kwapi_archive_serialize(a, ptr::null_mut(), 0, &mut len), KwapiStatus::BufferTooSmall);
        let mut buf = vec![0u8; len];
        assert_eq!(kwapi_archive_serialize(a, buf.as_mut_ptr(), len, &mut len), KwapiStatus::Ok);
        let mut b = ptr::null_mut();
        assert_eq!(kwapi_archive_deserialize(buf.as_ptr(), buf.len(), &mut b), KwapiStatus::Ok);
        let mut again = vec![0u8; len];
        assert_eq!(kwapi_archive_serialize(b, again.as_mut_ptr(), len, &mut len), KwapiStatus::Ok);
        assert_eq!(buf, again);
        buf[0] ^= 0xff;
        let mut c = ptr::null_mut();
        assert_eq!(kwapi_archive_deserialize(buf.as_ptr(), buf.len(), &mut c), KwapiStatus::Format);
        kwapi_archive_free(a);
        kwapi_archive_free(b);
        assert_eq!(kwapi_archive_new(0.0, 4, KwapiConsolidation::Max, &mut c), KwapiStatus::InvalidArgument);
    }
}
