//! Round-trip every file format and show how damaged files are reported.

use lppd::decomposition::{read_checkpoint_from, write_checkpoint_to, DecompParams, FeatureImage, PredictorSharing};
use lppd::synth::{read_features_from, read_mld_from, read_tuples_from, sample_tuples, write_features_to, write_mld_to, write_tuples_to, TupleRequest};
use lppd::{DepthUnits, MultiLayerDepthMap};

fn main() -> lppd::Result<()> {
    let map = MultiLayerDepthMap::from_pixels(2, 2, DepthUnits::Raw, vec![vec![1.5, 4.0], vec![4.0], vec![1.5, 2.5, 5.5], vec![]])?;
    let mut mld = Vec::new();
    write_mld_to(&map, &mut mld)?;
    println!("MLD1: {} bytes, round trip {}", mld.len(), read_mld_from(&mld[..])? == map);

    let params = DecompParams::init(16, 8, 4, PredictorSharing::PerIteration, 1.0, 0)?;
    let mut ckpt = Vec::new();
    write_checkpoint_to(&params, &mut ckpt)?;
    println!("checkpoint: {} bytes, round trip {}", ckpt.len(), read_checkpoint_from(&ckpt[..])? == params);

    let feats = FeatureImage::new(1, 2, 3, vec![0.5, -1.0, 2.0, 0.0, 0.25, -0.75])?;
    let mut fea = Vec::new();
    write_features_to(&feats, &mut fea)?;
    println!("FEA1: {} bytes, round trip {}", fea.len(), read_features_from(&fea[..])? == feats);

    let tuples = sample_tuples(&map, &[TupleRequest { arity: 3, count: 3, rule: Default::default() }], 0.1, 1)?;
    let mut csv = Vec::new();
    write_tuples_to(&tuples, &mut csv)?;
    print!("{}", String::from_utf8_lossy(&csv));
    println!("tuples round trip {}", read_tuples_from(&csv[..])? == tuples);

    // damage: truncation, swapped depths, wrong magic
    println!("{}", read_mld_from(&mld[..mld.len() - 2]).unwrap_err());
    let mut swapped = mld.clone();
    swapped[14..18].copy_from_slice(&9.0f32.to_le_bytes());
    println!("{}", read_mld_from(&swapped[..]).unwrap_err());
    let mut magic = ckpt.clone();
    magic[..4].copy_from_slice(b"NOPE");
    println!("{}", read_checkpoint_from(&magic[..]).unwrap_err());
    Ok(())
}
