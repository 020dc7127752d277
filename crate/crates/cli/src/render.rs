//! Grayscale PGM (P5) views of voxel, mask and spherical volumes.

use std::path::{Path, PathBuf};

use sonovox_core::cvol::{self, DType, Header, Kind};
use sonovox_core::Result;

/// Values on a `[a x b x c]` lattice: `(H, D, W)` for voxel data,
/// `(phi, r, theta)` for spherical data.
#[derive(Debug, Clone, PartialEq)]
pub struct Cube {
    pub dims: (usize, usize, usize),
    pub values: Vec<f64>,
}

impl Cube {
    fn at(&self, i: usize, j: usize, k: usize) -> f64 {
        self.values[(i * self.dims.1 + j) * self.dims.2 + k]
    }
}

pub fn load_cube(path: &Path) -> Result<Cube> {
    let bytes = std::fs::read(path)?;
    let h = Header::decode(&bytes)?;
    let dims = (h.dims[0] as usize, h.dims[1] as usize, h.dims[2] as usize);
    let values = match (h.kind, h.dtype) {
        (Kind::Voxel, DType::U8) => cvol::decode_labels(&bytes)?.0.into_iter().map(f64::from).collect(),
        (Kind::Voxel, _) => cvol::decode_volume(&bytes)?.values,
        (Kind::Spherical, _) => cvol::decode_spherical(&bytes)?.values,
        (Kind::Rf, _) => {
            let f = cvol::decode_rf(&bytes)?;
            return Ok(Cube { dims: (1, f.channels, f.len()), values: f.samples.iter().map(|v| v.abs()).collect() });
        }
    };
    Ok(Cube { dims, values })
}

#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    pub width: usize,
    pub height: usize,
    pub pixels: Vec<u8>,
}

impl Image {
    pub fn to_pgm(&self) -> Vec<u8> {
        let mut out = format!("P5\n{} {}\n255\n", self.width, self.height).into_bytes();
        out.extend_from_slice(&self.pixels);
        out
    }
}

/// Linear map of `[0, peak]` onto `[0, 255]`; an all-zero input stays black.
fn to_image(rows: usize, cols: usize, f: impl Fn(usize, usize) -> f64, peak: f64) -> Image {
    let mut pixels = Vec::with_capacity(rows * cols);
    for r in 0..rows {
        for c in 0..cols {
            let v = f(r, c);
            let p = if peak > 0.0 { (v / peak * 255.0).round().clamp(0.0, 255.0) } else { 0.0 };
            pixels.push(p as u8);
        }
    }
    Image { width: cols, height: rows, pixels }
}

fn peak(cube: &Cube) -> f64 {
    cube.values.iter().copied().fold(0.0, f64::max)
}

/// Maximum projections. Bird's-eye: far range at the top, width across.
/// Side: up at the top, range across. Front: up at the top, width across.
pub fn views(cube: &Cube) -> Vec<(&'static str, Image)> {
    let (a, b, c) = cube.dims;
    let pk = peak(cube);
    let max_over = |n: usize, g: &dyn Fn(usize) -> f64| (0..n).map(g).fold(0.0, f64::max);
    vec![
        ("bev", to_image(b, c, |r, col| max_over(a, &|i| cube.at(i, b - 1 - r, col)), pk)),
        ("side", to_image(a, b, |r, col| max_over(c, &|k| cube.at(a - 1 - r, col, k)), pk)),
        ("front", to_image(a, c, |r, col| max_over(b, &|j| cube.at(a - 1 - r, j, col)), pk)),
    ]
}

/// One image per first-axis index, scaled by the whole-volume peak.
pub fn slices(cube: &Cube) -> Vec<Image> {
    let (a, b, c) = cube.dims;
    let pk = peak(cube);
    (0..a).map(|i| to_image(b, c, |r, col| cube.at(i, b - 1 - r, col), pk)).collect()
}

/// Writes `<stem>.<view>.pgm` (and `<stem>.s<k>.pgm` slices) into `out`.
pub fn render_file(input: &Path, out: &Path, with_slices: bool) -> Result<Vec<PathBuf>> {
    let cube = load_cube(input)?;
    std::fs::create_dir_all(out)?;
    let name = input.file_name().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    let stem = name.strip_suffix(".cvol").unwrap_or(&name);
    let mut written = Vec::new();
    for (view, img) in views(&cube) {
        let p = out.join(format!("{stem}.{view}.pgm"));
        std::fs::write(&p, img.to_pgm())?;
        written.push(p);
    }
    if with_slices {
        for (k, img) in slices(&cube).into_iter().enumerate() {
            let p = out.join(format!("{stem}.s{k:03}.pgm"));
            std::fs::write(&p, img.to_pgm())?;
            written.push(p);
        }
    }
    Ok(written)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_volume_is_black() {
        let cube = Cube { dims: (2, 3, 4), values: vec![0.0; 24] };
        for (_, img) in views(&cube) {
            assert!(img.pixels.iter().all(|&p| p == 0));
        }
    }

    #[test]
    fn hot_voxel_lands_in_each_view() {
        let mut cube = Cube { dims: (2, 3, 4), values: vec![0.0; 24] };
        // h = 1, d = 0, w = 3
        cube.values[15] = 2.0;
        let v = views(&cube);
        let bev = &v[0].1;
        assert_eq!((bev.width, bev.height), (4, 3));
        assert_eq!(bev.pixels[2 * 4 + 3], 255);
        let side = &v[1].1;
        assert_eq!(side.pixels[0], 255);
        let front = &v[2].1;
        assert_eq!(front.pixels[3], 255);
        assert_eq!(v.iter().map(|(_, i)| i.pixels.iter().filter(|&&p| p > 0).count()).sum::<usize>(), 3);
    }

    #[test]
    fn pgm_header() {
        let img = Image { width: 2, height: 1, pixels: vec![0, 255] };
        assert_eq!(img.to_pgm(), b"P5\n2 1\n255\n\x00\xff".to_vec());
    }
}
