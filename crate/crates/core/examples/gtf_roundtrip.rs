//! Write and read a grid tensor file with its JSON sidecar, and show that
//! a corrupted payload is detected.
//!
//!     cargo run --release --example gtf_roundtrip

use monsoon_core::grid::gtf::{read_gtf_with_manifest, sidecar_path, write_gtf_with_manifest, AxisMeta};
use monsoon_core::grid::{decode_gtf, encode_gtf, GtfManifest};
use ndarray::{ArrayD, IxDyn};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut a = ArrayD::from_shape_fn(IxDyn(&[2, 3, 4]), |i| (i[0] * 100 + i[1] * 10 + i[2]) as f32 / 7.0);
    a[[1, 2, 3]] = f32::NAN;

    let bytes = encode_gtf(&a)?;
    println!("{} bytes for {} values", bytes.len(), a.len());
    let b = decode_gtf(&bytes)?;
    let same = a.iter().zip(b.iter()).all(|(x, y)| x.to_bits() == y.to_bits());
    println!("in-memory round trip bit-exact: {same}");

    let dir = std::env::temp_dir().join("monsoon_gtf_example");
    std::fs::create_dir_all(&dir)?;
    let path = dir.join("field.gtf");
    let manifest = GtfManifest {
        axes: vec![AxisMeta::plain("year", 2), AxisMeta::plain("lat", 3), AxisMeta::plain("lon", 4)],
        ..Default::default()
    };
    write_gtf_with_manifest(&path, &a, manifest)?;
    let (_, m) = read_gtf_with_manifest(&path)?;
    println!("sidecar {} records payload sha256 {}", sidecar_path(&path).display(), &m.payload_sha256[..16]);

    let mut raw = std::fs::read(&path)?;
    let last = raw.len() - 1;
    raw[last] ^= 0x01;
    std::fs::write(&path, raw)?;
    match read_gtf_with_manifest(&path) {
        Ok(_) => println!("corruption went unnoticed"),
        Err(e) => println!("corrupted payload rejected: {e}"),
    }
    Ok(())
}
