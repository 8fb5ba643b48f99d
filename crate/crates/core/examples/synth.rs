//! Ray-cast the overlapping-planes scene and sample depth tuples.
//!
//! `cargo run --example synth -- out_dir` also writes the files.

use lppd::synth::{
    default_eps_sep, raycast_multilayer, render_features, sample_tuples, scene_overlapping_planes, write_features, write_mld,
    write_tuples, OverlapParams, SubsetRule, TupleRequest,
};

fn main() -> lppd::Result<()> {
    let params = OverlapParams::default();
    let scene = scene_overlapping_planes(&params)?;
    let gt = raycast_multilayer(&scene)?;

    let mut counts = [0usize; 4];
    (0..gt.len()).for_each(|p| counts[gt.layer_count(p)] += 1);
    println!("layer counts 1/2/3: {:?}, from areas: {:?}", &counts[1..], params.region_areas());
    println!("pixel (24, 30) sees {:?}", gt.at(24, 30));

    let features = render_features(&scene, 0.01, 1)?;
    println!("features {}x{}x{}", features.height, features.width, features.dim);

    let requests = [
        TupleRequest { arity: 4, count: 1000, rule: SubsetRule::Any },
        TupleRequest { arity: 4, count: 200, rule: SubsetRule::Mixed },
        TupleRequest { arity: 3, count: 200, rule: SubsetRule::Layer(1) },
    ];
    let tuples = sample_tuples(&gt, &requests, default_eps_sep(&gt), 0)?;
    println!("{} tuples, {} could not be drawn", tuples.tuples.len(), tuples.shortfall);
    println!("first: {:?} ({})", tuples.tuples[0].entries, tuples.tuples[0].subset);

    if let Some(dir) = std::env::args().nth(1) {
        let dir = std::path::Path::new(&dir);
        std::fs::create_dir_all(dir)?;
        write_mld(&gt, dir.join("gt.mld"))?;
        write_features(&features, dir.join("features.fea"))?;
        write_tuples(&tuples, dir.join("tuples.csv"))?;
        std::fs::write(dir.join("scene.toml"), scene.to_toml_string()?)?;
        println!("wrote {}", dir.display());
    }
    Ok(())
}
