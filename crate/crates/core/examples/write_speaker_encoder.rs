//! Regenerates `assets/speaker_encoder_v1.bin` and its checksum file from the
//! fixed seed. Only needed when the stand-in architecture changes.

use std::path::Path;

use ascl_vits::speaker::frozen::BLOB_SEED;
use ascl_vits::speaker::StandInEncoder;
use sha2::{Digest, Sha256};

fn main() -> std::io::Result<()> {
    let assets = Path::new(env!("CARGO_MANIFEST_DIR")).join("assets");
    let blob = StandInEncoder::<f32>::generate(BLOB_SEED).to_blob();
    let sum = hex::encode(Sha256::digest(&blob));
    std::fs::write(assets.join("speaker_encoder_v1.bin"), &blob)?;
    std::fs::write(assets.join("speaker_encoder_v1.sha256"), format!("{sum}\n"))?;
    println!("{} bytes, sha256 {sum}", blob.len());
    Ok(())
}
