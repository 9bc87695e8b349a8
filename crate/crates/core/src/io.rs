//! Little-endian binary files: scenes (`BDGC` cloud + `BDGI` image +
//! `BDGP` projection), BEV grid dumps (`BDGB`) and checkpoints (`BDGM`).
//! Every section starts with its magic and a format version.

use std::fs;
use std::path::Path;

use crate::bev::{BevGrid, GridSpec};
use crate::error::{Error, Result};
use crate::learn::{Fusion, ModelDims, ModelParams, LAYER_NAMES};
use crate::scene::{Class, Image, Pixel, Point, ProjectionMap, ScenePair};
use crate::tensor::Matrix;

pub const FORMAT_VERSION: u32 = 1;

#[derive(Default)]
struct Writer {
    buf: Vec<u8>,
}

impl Writer {
    fn header(&mut self, magic: &[u8; 4]) {
        self.buf.extend_from_slice(magic);
        self.u32(FORMAT_VERSION);
    }
    fn u8(&mut self, v: u8) {
        self.buf.push(v);
    }
    fn u16(&mut self, v: u16) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }
    fn u32(&mut self, v: u32) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }
    fn u64(&mut self, v: u64) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }
    fn f32(&mut self, v: f32) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }
    fn f64(&mut self, v: f64) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }
    fn str(&mut self, s: &str) {
        self.u32(s.len() as u32);
        self.buf.extend_from_slice(s.as_bytes());
    }
}

struct Reader<'a> {
    buf: &'a [u8],
    at: usize,
    path: &'a Path,
}

impl<'a> Reader<'a> {
    fn new(buf: &'a [u8], path: &'a Path) -> Self {
        Self { buf, at: 0, path }
    }
    fn err(&self, reason: impl Into<String>) -> Error {
        Error::format(self.path, reason)
    }
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.buf.len() - self.at < n {
            return Err(self.err(format!("truncated at byte {}", self.at)));
        }
        self.at += n;
        Ok(&self.buf[self.at - n..self.at])
    }
    fn array<const N: usize>(&mut self) -> Result<[u8; N]> {
        Ok(self.take(N)?.try_into().expect("length checked"))
    }
    fn header(&mut self, magic: &[u8; 4]) -> Result<()> {
        let got = self.take(4)?;
        if got != magic {
            return Err(self.err(format!(
                "expected magic {}, found {:?}",
                String::from_utf8_lossy(magic),
                String::from_utf8_lossy(got)
            )));
        }
        let version = self.u32()?;
        if version != FORMAT_VERSION {
            return Err(self.err(format!(
                "unsupported {} version {version} (expected {FORMAT_VERSION})",
                String::from_utf8_lossy(magic)
            )));
        }
        Ok(())
    }
    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }
    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.array()?))
    }
    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.array()?))
    }
    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.array()?))
    }
    fn usize(&mut self) -> Result<usize> {
        let v = self.u64()?;
        usize::try_from(v).map_err(|_| self.err("length overflows"))
    }
    fn f32(&mut self) -> Result<f32> {
        Ok(f32::from_le_bytes(self.array()?))
    }
    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.array()?))
    }
    fn str(&mut self) -> Result<String> {
        let n = self.u32()? as usize;
        let bytes = self.take(n)?;
        String::from_utf8(bytes.to_vec()).map_err(|_| self.err("invalid UTF-8"))
    }
    /// Guards allocations against corrupt lengths.
    fn check_len(&self, n: usize, bytes_each: usize) -> Result<()> {
        match n.checked_mul(bytes_each) {
            Some(b) if b <= self.buf.len() - self.at => Ok(()),
            _ => Err(self.err(format!("declared length {n} exceeds the file"))),
        }
    }
    fn finish(&self) -> Result<()> {
        if self.at != self.buf.len() {
            return Err(self.err(format!("{} trailing bytes", self.buf.len() - self.at)));
        }
        Ok(())
    }
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

fn read_file(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| Error::io(path, e))
}

fn put_cloud(w: &mut Writer, cloud: &[Point]) {
    w.header(b"BDGC");
    w.u64(cloud.len() as u64);
    for p in cloud {
        p.position.iter().for_each(|&v| w.f32(v));
        w.f32(p.intensity);
        w.u16(p.beam_id);
        w.u8(p.label.index() as u8);
    }
}

fn class(r: &Reader<'_>, v: u8) -> Result<Class> {
    Class::from_index(v as usize).ok_or_else(|| r.err(format!("unknown class {v}")))
}

fn get_cloud(r: &mut Reader<'_>) -> Result<Vec<Point>> {
    r.header(b"BDGC")?;
    let n = r.usize()?;
    r.check_len(n, 19)?;
    (0..n)
        .map(|_| {
            let position = [r.f32()?, r.f32()?, r.f32()?];
            let intensity = r.f32()?;
            let beam_id = r.u16()?;
            let v = r.u8()?;
            Ok(Point {
                position,
                intensity,
                beam_id,
                label: class(r, v)?,
            })
        })
        .collect()
}

fn put_image(w: &mut Writer, image: &Image, tag: &str) {
    w.header(b"BDGI");
    w.u32(image.width as u32);
    w.u32(image.height as u32);
    w.u32(image.channels as u32);
    w.str(tag);
    image.data.iter().for_each(|&v| w.f32(v));
    image.labels.iter().for_each(|l| w.u8(l.index() as u8));
}

fn get_image(r: &mut Reader<'_>) -> Result<(Image, String)> {
    r.header(b"BDGI")?;
    let width = r.u32()? as usize;
    let height = r.u32()? as usize;
    let channels = r.u32()? as usize;
    let tag = r.str()?;
    let n = width * height;
    r.check_len(n * channels, 4)?;
    let data = (0..n * channels).map(|_| r.f32()).collect::<Result<_>>()?;
    r.check_len(n, 1)?;
    let labels = (0..n)
        .map(|_| {
            let v = r.u8()?;
            class(r, v)
        })
        .collect::<Result<_>>()?;
    Ok((
        Image {
            height,
            width,
            channels,
            data,
            labels,
        },
        tag,
    ))
}

fn put_projection(w: &mut Writer, map: &ProjectionMap) {
    w.header(b"BDGP");
    w.u32(map.width as u32);
    w.u32(map.height as u32);
    w.u64(map.entries().len() as u64);
    for e in map.entries() {
        match e {
            Some(p) => {
                w.u8(1);
                w.f32(p.u);
                w.f32(p.v);
            }
            None => {
                w.u8(0);
                w.f32(0.0);
                w.f32(0.0);
            }
        }
    }
}

fn get_projection(r: &mut Reader<'_>) -> Result<ProjectionMap> {
    r.header(b"BDGP")?;
    let width = r.u32()? as usize;
    let height = r.u32()? as usize;
    let n = r.usize()?;
    r.check_len(n, 9)?;
    let entries = (0..n)
        .map(|_| {
            let flag = r.u8()?;
            let (u, v) = (r.f32()?, r.f32()?);
            match flag {
                0 => Ok(None),
                1 => Ok(Some(Pixel { u, v })),
                f => Err(r.err(format!("bad projection flag {f}"))),
            }
        })
        .collect::<Result<_>>()?;
    Ok(ProjectionMap::new(width, height, entries))
}

pub fn scene_bytes(pair: &ScenePair) -> Vec<u8> {
    let mut w = Writer::default();
    put_cloud(&mut w, &pair.cloud);
    put_image(&mut w, &pair.image, &pair.domain_tag);
    put_projection(&mut w, &pair.projection);
    w.buf
}

pub fn write_scene(path: &Path, pair: &ScenePair) -> Result<()> {
    write_file(path, &scene_bytes(pair))
}

pub fn read_scene(path: &Path) -> Result<ScenePair> {
    let bytes = read_file(path)?;
    let mut r = Reader::new(&bytes, path);
    let cloud = get_cloud(&mut r)?;
    let (image, domain_tag) = get_image(&mut r)?;
    let projection = get_projection(&mut r)?;
    r.finish()?;
    if projection.entries().len() != cloud.len() {
        return Err(r.err("projection and cloud lengths differ"));
    }
    Ok(ScenePair {
        cloud,
        image,
        projection,
        domain_tag,
    })
}

pub fn write_grid(path: &Path, grid: &BevGrid) -> Result<()> {
    let mut w = Writer::default();
    w.header(b"BDGB");
    w.f64(grid.spec.origin[0]);
    w.f64(grid.spec.origin[1]);
    w.f64(grid.spec.cell_size);
    w.u32(grid.spec.cells_x as u32);
    w.u32(grid.spec.cells_y as u32);
    w.u32(grid.channels() as u32);
    grid.features.data().iter().for_each(|&v| w.f64(v));
    grid.counts.iter().for_each(|&c| w.u32(c));
    write_file(path, &w.buf)
}

pub fn read_grid(path: &Path) -> Result<BevGrid> {
    let bytes = read_file(path)?;
    let mut r = Reader::new(&bytes, path);
    r.header(b"BDGB")?;
    let origin = [r.f64()?, r.f64()?];
    let cell_size = r.f64()?;
    let spec = GridSpec {
        origin,
        cell_size,
        cells_x: r.u32()? as usize,
        cells_y: r.u32()? as usize,
    };
    spec.validate()?;
    let channels = r.u32()? as usize;
    let n = spec.n_cells();
    r.check_len(n * channels, 8)?;
    let data = (0..n * channels).map(|_| r.f64()).collect::<Result<_>>()?;
    r.check_len(n, 4)?;
    let counts = (0..n).map(|_| r.u32()).collect::<Result<_>>()?;
    r.finish()?;
    Ok(BevGrid {
        spec,
        features: Matrix::from_vec(n, channels, data),
        counts,
    })
}

/// Trained parameters plus what is needed to run them.
#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub params: ModelParams,
    pub fusion: Fusion,
    pub knn: usize,
}

fn fusion_from_name(r: &Reader<'_>, name: &str) -> Result<Fusion> {
    [Fusion::None, Fusion::Area, Fusion::Point]
        .into_iter()
        .find(|f| f.name() == name)
        .ok_or_else(|| r.err(format!("unknown fusion mode {name}")))
}

pub fn checkpoint_bytes(ckpt: &Checkpoint) -> Vec<u8> {
    let mut w = Writer::default();
    w.header(b"BDGM");
    w.str(ckpt.fusion.name());
    w.u32(ckpt.knn as u32);
    w.u32(LAYER_NAMES.len() as u32);
    for (name, l) in LAYER_NAMES.iter().zip(ckpt.params.layers()) {
        w.str(name);
        w.u32(l.in_dim() as u32);
        w.u32(l.out_dim() as u32);
    }
    let flat = ckpt.params.flatten();
    w.u64(flat.len() as u64);
    flat.iter().for_each(|&v| w.f64(v));
    w.buf
}

pub fn write_checkpoint(path: &Path, ckpt: &Checkpoint) -> Result<()> {
    write_file(path, &checkpoint_bytes(ckpt))
}

pub fn read_checkpoint(path: &Path) -> Result<Checkpoint> {
    let bytes = read_file(path)?;
    let mut r = Reader::new(&bytes, path);
    r.header(b"BDGM")?;
    let name = r.str()?;
    let fusion = fusion_from_name(&r, &name)?;
    let knn = r.u32()? as usize;
    let layers = r.u32()? as usize;
    if layers != LAYER_NAMES.len() {
        return Err(r.err(format!("{layers} layers, expected {}", LAYER_NAMES.len())));
    }
    let mut shapes = Vec::with_capacity(layers);
    for want in LAYER_NAMES {
        let name = r.str()?;
        if name != want {
            return Err(r.err(format!("layer {name} where {want} was expected")));
        }
        shapes.push((r.u32()? as usize, r.u32()? as usize));
    }
    let dims = ModelDims {
        hidden: shapes[0].1,
        c2d: shapes[1].1,
        c3d: shapes[3].1,
        fused: shapes[4].1,
        head_in: shapes[5].1,
        knn,
    };
    if ModelParams::layer_shapes(&dims).as_slice() != shapes.as_slice() {
        return Err(r.err("inconsistent layer shapes"));
    }
    let mut params = ModelParams::zeros(&dims);
    let n = r.usize()?;
    r.check_len(n, 8)?;
    let flat: Vec<f64> = (0..n).map(|_| r.f64()).collect::<Result<_>>()?;
    r.finish()?;
    params.unflatten(&flat).map_err(|e| r.err(e.to_string()))?;
    Ok(Checkpoint { params, fusion, knn })
}
