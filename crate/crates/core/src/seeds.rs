//! The curated seed bank used for initialization and retry fallback.

use std::fs;
use std::io;
use std::path::Path;

const BUILTIN: [&str; 14] = [
    include_str!("../seeds/01_plasma.glsl"),
    include_str!("../seeds/02_rings.glsl"),
    include_str!("../seeds/03_tunnel.glsl"),
    include_str!("../seeds/04_cells.glsl"),
    include_str!("../seeds/05_warp_stripes.glsl"),
    include_str!("../seeds/06_kaleido.glsl"),
    include_str!("../seeds/07_starfield.glsl"),
    include_str!("../seeds/08_metaballs.glsl"),
    include_str!("../seeds/09_spiral.glsl"),
    include_str!("../seeds/10_waves.glsl"),
    include_str!("../seeds/11_checker_zoom.glsl"),
    include_str!("../seeds/12_sphere.glsl"),
    include_str!("../seeds/13_clouds.glsl"),
    include_str!("../seeds/14_grid_pulse.glsl"),
];

/// The bundled seed shaders, in file order.
pub fn builtin() -> Vec<String> {
    BUILTIN.iter().map(|s| s.to_string()).collect()
}

/// Reads every `*.glsl` file in `dir`, sorted by file name.
pub fn load_dir(dir: &Path) -> io::Result<Vec<String>> {
    let mut paths: Vec<_> = fs::read_dir(dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "glsl"))
        .collect();
    paths.sort();
    paths.iter().map(fs::read_to_string).collect()
}
