//! Newest-vertex bisection towards the re-entrant corner of the L-shape, with
//! a text and binary round trip of the final mesh.
//!
//! `cargo run --release --example mesh_refinement -- [levels] [out.mesh]`

use afemkit::bench::lshape_mesh;
use afemkit::mesh::{read_binary, read_text, write_binary, write_text};

fn main() -> afemkit::Result<()> {
    let args: Vec<String> = std::env::args().collect();
    let levels: usize = args.get(1).and_then(|s| s.parse().ok()).unwrap_or(12);
    let mut mesh = lshape_mesh()?;
    println!(
        "{:>5} {:>9} {:>9} {:>10} {:>10}",
        "level", "elements", "vertices", "max gen", "shape reg"
    );
    for level in 0..=levels {
        println!(
            "{level:>5} {:>9} {:>9} {:>10} {:>10.4}",
            mesh.n_elements(),
            mesh.n_vertices(),
            mesh.max_generation(),
            mesh.shape_regularity()
        );
        // every element touching the corner at the origin
        let marked: Vec<usize> = (0..mesh.n_elements())
            .filter(|&t| mesh.corners(t).iter().any(|c| c[0].hypot(c[1]) < 1e-12))
            .collect();
        mesh = mesh.refine(&marked)?;
    }
    mesh.check_conforming()?;

    let mut text = Vec::new();
    write_text(&mesh, &mut text)?;
    let back = read_text(text.as_slice())?;
    let mut bin = Vec::new();
    write_binary(&mesh, &mut bin)?;
    let back_bin = read_binary(bin.as_slice())?;
    println!(
        "text {} bytes, binary {} bytes; areas {:.12} / {:.12} / {:.12}",
        text.len(),
        bin.len(),
        mesh.total_area(),
        back.total_area(),
        back_bin.total_area()
    );
    if let Some(path) = args.get(2) {
        std::fs::write(path, &text)?;
        println!("wrote {path}");
    }
    Ok(())
}
