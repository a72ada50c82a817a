//! On-disk formats.
//!
//! Every dataset is a directory holding `header.toml` and one raw
//! little-endian file per array. Real arrays are `f32`, complex arrays are
//! interleaved `f32` real/imaginary pairs and masks are one byte per voxel
//! (0 or 1). Element order is x fastest, then y, z and t.

use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use num_complex::Complex32;
use serde::{Deserialize, Serialize};

use crate::error::{Result, VastError};
use crate::grid::Grid;
use crate::volume::{AcquisitionMeta, Encoding, FlowBundle, MaskVolume, VelocityField};

pub const HEADER_FILE: &str = "header.toml";
const FORMAT: &str = "vast";
const VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DatasetKind {
    Bundle,
    Velocity,
    Mask,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DType {
    F32,
    Cf32,
    U8,
}

impl DType {
    fn width(self) -> usize {
        match self {
            DType::F32 => 4,
            DType::Cf32 => 8,
            DType::U8 => 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArrayEntry {
    pub name: String,
    pub file: String,
    pub dtype: DType,
    pub elements: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Header {
    pub format: String,
    pub version: u32,
    pub kind: DatasetKind,
    pub endianness: String,
    pub index_order: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub meta: Option<AcquisitionMeta>,
    /// Grid and frame count for masks, `[nx, ny, nz, frames]`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mask_dims: Option<[usize; 4]>,
    pub arrays: Vec<ArrayEntry>,
}

impl Header {
    fn new(kind: DatasetKind) -> Self {
        Header {
            format: FORMAT.into(),
            version: VERSION,
            kind,
            endianness: "little".into(),
            index_order: "x,y,z,t (x fastest)".into(),
            meta: None,
            mask_dims: None,
            arrays: Vec::new(),
        }
    }

    fn entry(&self, name: &str, path: &Path) -> Result<&ArrayEntry> {
        self.arrays.iter().find(|a| a.name == name).ok_or_else(|| VastError::Header {
            path: path.to_path_buf(),
            message: format!("missing array entry '{name}'"),
        })
    }
}

pub fn read_header(dir: &Path) -> Result<Header> {
    let path = dir.join(HEADER_FILE);
    let text = fs::read_to_string(&path).map_err(|e| VastError::io(&path, e))?;
    let header: Header = toml::from_str(&text).map_err(|e| VastError::Header {
        path: path.clone(),
        message: e.to_string(),
    })?;
    if header.format != FORMAT {
        return Err(VastError::Header { path, message: format!("unknown format '{}'", header.format) });
    }
    if header.endianness != "little" {
        return Err(VastError::Header {
            path,
            message: format!("unsupported endianness '{}'", header.endianness),
        });
    }
    Ok(header)
}

fn expect_kind(header: &Header, kind: DatasetKind, dir: &Path) -> Result<()> {
    if header.kind != kind {
        return Err(VastError::Header {
            path: dir.join(HEADER_FILE),
            message: format!("expected a {kind:?} dataset, found {:?}", header.kind),
        });
    }
    Ok(())
}

fn write_header(dir: &Path, header: &Header) -> Result<()> {
    let path = dir.join(HEADER_FILE);
    let text = toml::to_string(header).map_err(|e| VastError::Header {
        path: path.clone(),
        message: e.to_string(),
    })?;
    fs::write(&path, text).map_err(|e| VastError::io(&path, e))
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| VastError::io(dir, e))
}

fn write_bytes(path: &Path, fill: impl FnOnce(&mut BufWriter<fs::File>) -> std::io::Result<()>) -> Result<()> {
    let file = fs::File::create(path).map_err(|e| VastError::io(path, e))?;
    let mut w = BufWriter::new(file);
    fill(&mut w).and_then(|_| w.flush()).map_err(|e| VastError::io(path, e))
}

fn write_f32(dir: &Path, header: &mut Header, name: &str, data: impl ExactSizeIterator<Item = f32>) -> Result<()> {
    let file = format!("{name}.f32");
    let elements = data.len();
    write_bytes(&dir.join(&file), |w| {
        for v in data {
            w.write_all(&v.to_le_bytes())?;
        }
        Ok(())
    })?;
    header.arrays.push(ArrayEntry { name: name.into(), file, dtype: DType::F32, elements });
    Ok(())
}

fn write_cf32(dir: &Path, header: &mut Header, name: &str, data: &[Complex32]) -> Result<()> {
    let file = format!("{name}.cf32");
    write_bytes(&dir.join(&file), |w| {
        for z in data {
            w.write_all(&z.re.to_le_bytes())?;
            w.write_all(&z.im.to_le_bytes())?;
        }
        Ok(())
    })?;
    header.arrays.push(ArrayEntry { name: name.into(), file, dtype: DType::Cf32, elements: data.len() });
    Ok(())
}

fn read_raw(dir: &Path, header: &Header, name: &str, dtype: DType, expected: usize) -> Result<Vec<u8>> {
    let entry = header.entry(name, &dir.join(HEADER_FILE))?;
    if entry.dtype != dtype {
        return Err(VastError::Header {
            path: dir.join(HEADER_FILE),
            message: format!("array '{name}' has dtype {:?}, expected {dtype:?}", entry.dtype),
        });
    }
    if entry.elements != expected {
        return Err(VastError::ShapeMismatch { what: format!("{name} header entry"), expected, found: entry.elements });
    }
    let path: PathBuf = dir.join(&entry.file);
    let bytes = fs::read(&path).map_err(|e| VastError::io(&path, e))?;
    let width = dtype.width();
    if bytes.len() % width != 0 || bytes.len() / width != expected {
        return Err(VastError::ShapeMismatch {
            what: format!("{name} ({})", path.display()),
            expected,
            found: bytes.len() / width,
        });
    }
    Ok(bytes)
}

fn read_f32(dir: &Path, header: &Header, name: &str, expected: usize) -> Result<Vec<f32>> {
    let bytes = read_raw(dir, header, name, DType::F32, expected)?;
    let data: Vec<f32> = bytes
        .chunks_exact(4)
        .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
        .collect();
    if data.iter().any(|v| !v.is_finite()) {
        return Err(VastError::NonFinite(format!("array '{name}' in {}", dir.display())));
    }
    Ok(data)
}

fn read_cf32(dir: &Path, header: &Header, name: &str, expected: usize) -> Result<Vec<Complex32>> {
    let bytes = read_raw(dir, header, name, DType::Cf32, expected)?;
    Ok(bytes
        .chunks_exact(8)
        .map(|b| {
            Complex32::new(
                f32::from_le_bytes([b[0], b[1], b[2], b[3]]),
                f32::from_le_bytes([b[4], b[5], b[6], b[7]]),
            )
        })
        .collect())
}

fn meta_of(header: &Header, dir: &Path) -> Result<AcquisitionMeta> {
    let meta = header.meta.clone().ok_or_else(|| VastError::Header {
        path: dir.join(HEADER_FILE),
        message: "missing [meta] table".into(),
    })?;
    meta.validate()?;
    Ok(meta)
}

pub fn save_bundle(bundle: &FlowBundle, dir: &Path) -> Result<()> {
    bundle.validate()?;
    create_dir(dir)?;
    let mut header = Header::new(DatasetKind::Bundle);
    header.meta = Some(bundle.meta.clone());
    for c in &bundle.channels {
        write_cf32(dir, &mut header, &format!("channel_{}", c.encoding.name()), &c.values)?;
    }
    write_f32(dir, &mut header, "magnitude", bundle.magnitude.iter().copied())?;
    for k in 0..3 {
        let name = format!("phase_{}", Encoding::Axis(k).name());
        write_f32(dir, &mut header, &name, bundle.phases[k].iter().copied())?;
    }
    write_header(dir, &header)
}

pub fn load_bundle(dir: &Path) -> Result<FlowBundle> {
    let header = read_header(dir)?;
    expect_kind(&header, DatasetKind::Bundle, dir)?;
    let meta = meta_of(&header, dir)?;
    let n = meta.len4();
    let channels = Encoding::ALL.map(|e| read_cf32(dir, &header, &format!("channel_{}", e.name()), n));
    let [r, u, v, w] = channels;
    let channels = [r?, u?, v?, w?];
    let magnitude = read_f32(dir, &header, "magnitude", n)?;
    let phases = [0, 1, 2].map(|k| read_f32(dir, &header, &format!("phase_{}", Encoding::Axis(k).name()), n));
    let [pu, pv, pw] = phases;
    FlowBundle::from_parts(meta, channels, magnitude, [pu?, pv?, pw?])
}

/// Writes a velocity field. Values are stored as `f32`.
pub fn save_velocity(field: &VelocityField, dir: &Path) -> Result<()> {
    field.validate()?;
    create_dir(dir)?;
    let mut header = Header::new(DatasetKind::Velocity);
    header.meta = Some(field.meta.clone());
    for k in 0..3 {
        let name = format!("velocity_{}", Encoding::Axis(k).name());
        write_f32(dir, &mut header, &name, field.component(k).iter().map(|&v| v as f32))?;
    }
    write_header(dir, &header)
}

pub fn load_velocity(dir: &Path) -> Result<VelocityField> {
    let header = read_header(dir)?;
    expect_kind(&header, DatasetKind::Velocity, dir)?;
    let meta = meta_of(&header, dir)?;
    let n = meta.len4();
    let load = |k: usize| -> Result<Vec<f64>> {
        let name = format!("velocity_{}", Encoding::Axis(k).name());
        Ok(read_f32(dir, &header, &name, n)?.into_iter().map(f64::from).collect())
    };
    VelocityField::new(meta, load(0)?, load(1)?, load(2)?)
}

pub fn save_mask(mask: &MaskVolume, dir: &Path) -> Result<()> {
    create_dir(dir)?;
    let mut header = Header::new(DatasetKind::Mask);
    let g = mask.grid;
    header.mask_dims = Some([g.nx, g.ny, g.nz, mask.frames]);
    let file = "mask.u8".to_string();
    write_bytes(&dir.join(&file), |w| {
        let bytes: Vec<u8> = mask.labels.iter().map(|&b| b as u8).collect();
        w.write_all(&bytes)
    })?;
    header.arrays.push(ArrayEntry { name: "mask".into(), file, dtype: DType::U8, elements: mask.labels.len() });
    write_header(dir, &header)
}

pub fn load_mask(dir: &Path) -> Result<MaskVolume> {
    let header = read_header(dir)?;
    expect_kind(&header, DatasetKind::Mask, dir)?;
    let [nx, ny, nz, frames] = header.mask_dims.ok_or_else(|| VastError::Header {
        path: dir.join(HEADER_FILE),
        message: "missing mask_dims".into(),
    })?;
    let grid = Grid::new(nx, ny, nz);
    let bytes = read_raw(dir, &header, "mask", DType::U8, grid.len() * frames)?;
    if let Some(b) = bytes.iter().find(|&&b| b > 1) {
        return Err(VastError::Validation(format!("mask byte {b} is not 0 or 1")));
    }
    MaskVolume::new(grid, frames, bytes.into_iter().map(|b| b == 1).collect())
}

/// Writes one frame of `field` with the mask as a legacy ASCII VTK
/// structured-points dataset. Spacing is written in mm.
pub fn export_vtk(field: &VelocityField, mask: &MaskVolume, frame: usize, path: &Path) -> Result<()> {
    let nt = field.nt();
    if frame >= nt {
        return Err(VastError::Validation(format!("frame {frame} out of range (nt = {nt})")));
    }
    let g = field.grid();
    if mask.grid != g {
        return Err(VastError::ShapeMismatch { what: "vtk mask grid".into(), expected: g.len(), found: mask.grid.len() });
    }
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            create_dir(parent)?;
        }
    }
    let s = field.meta.spacing;
    let n = g.len();
    let off = frame * n;
    write_bytes(path, |w| {
        writeln!(w, "# vtk DataFile Version 3.0")?;
        writeln!(w, "velocity frame {frame}")?;
        writeln!(w, "ASCII")?;
        writeln!(w, "DATASET STRUCTURED_POINTS")?;
        writeln!(w, "DIMENSIONS {} {} {}", g.nx, g.ny, g.nz)?;
        writeln!(w, "ORIGIN 0 0 0")?;
        writeln!(w, "SPACING {} {} {}", s[0], s[1], s[2])?;
        writeln!(w, "POINT_DATA {n}")?;
        writeln!(w, "VECTORS velocity float")?;
        for i in 0..n {
            let j = off + i;
            writeln!(w, "{} {} {}", field.u[j] as f32, field.v[j] as f32, field.w[j] as f32)?;
        }
        writeln!(w, "SCALARS mask int 1")?;
        writeln!(w, "LOOKUP_TABLE default")?;
        for i in 0..n {
            writeln!(w, "{}", mask.at(i, frame) as u8)?;
        }
        Ok(())
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn meta(dims: [usize; 4]) -> AcquisitionMeta {
        let mut m = AcquisitionMeta::new(dims, [1.0, 1.0, 1.3], 40.0, [60.0, 60.0, 80.0]);
        m.seed = Some(7);
        m
    }

    fn bundle(dims: [usize; 4]) -> FlowBundle {
        let m = meta(dims);
        let n = m.len4();
        let ch = |k: usize| -> Vec<Complex32> {
            (0..n).map(|i| Complex32::from_polar(1.0 + 0.01 * i as f32, 0.3 * k as f32 + 0.001 * i as f32)).collect()
        };
        FlowBundle::from_channels(m, [ch(0), ch(1), ch(2), ch(3)]).unwrap()
    }

    #[test]
    fn bundle_roundtrip_is_exact() {
        let dir = tempfile::tempdir().unwrap();
        let b = bundle([3, 2, 2, 2]);
        save_bundle(&b, dir.path()).unwrap();
        let back = load_bundle(dir.path()).unwrap();
        assert_eq!(b, back);
        for (x, y) in b.magnitude.iter().zip(&back.magnitude) {
            assert_eq!(x.to_bits(), y.to_bits());
        }
    }

    #[test]
    fn short_array_file_is_shape_mismatch() {
        let dir = tempfile::tempdir().unwrap();
        let b = bundle([2, 2, 2, 1]);
        save_bundle(&b, dir.path()).unwrap();
        let f = dir.path().join("magnitude.f32");
        let bytes = fs::read(&f).unwrap();
        fs::write(&f, &bytes[..7 * 4]).unwrap();
        match load_bundle(dir.path()) {
            Err(VastError::ShapeMismatch { expected: 8, found: 7, .. }) => {}
            other => panic!("expected shape mismatch, got {other:?}"),
        }
    }

    #[test]
    fn out_of_range_phase_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let mut b = bundle([2, 2, 2, 1]);
        b.phases[1][3] = 3.2;
        // bypass save-side validation to plant the bad value on disk
        save_bundle(&bundle([2, 2, 2, 1]), dir.path()).unwrap();
        let f = dir.path().join("phase_v.f32");
        let mut bytes = fs::read(&f).unwrap();
        bytes[12..16].copy_from_slice(&3.2f32.to_le_bytes());
        fs::write(&f, bytes).unwrap();
        assert!(matches!(load_bundle(dir.path()), Err(VastError::Validation(_))));
        assert!(matches!(b.validate(), Err(VastError::Validation(_))));
    }

    #[test]
    fn missing_directory_is_io_error() {
        let dir = tempfile::tempdir().unwrap();
        assert!(matches!(load_bundle(&dir.path().join("nope")), Err(VastError::Io { .. })));
    }

    #[test]
    fn header_without_venc_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        save_bundle(&bundle([2, 2, 2, 1]), dir.path()).unwrap();
        let h = dir.path().join(HEADER_FILE);
        let text = fs::read_to_string(&h).unwrap();
        let stripped: String = text.lines().filter(|l| !l.starts_with("venc")).map(|l| format!("{l}\n")).collect();
        fs::write(&h, stripped).unwrap();
        assert!(matches!(load_bundle(dir.path()), Err(VastError::Header { .. })));
    }

    #[test]
    fn velocity_and_mask_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let m = meta([2, 3, 2, 2]);
        let n = m.len4();
        let f = VelocityField::new(
            m,
            (0..n).map(|i| i as f64 * 0.5).collect(),
            vec![1.0; n],
            vec![-2.25; n],
        )
        .unwrap();
        save_velocity(&f, &dir.path().join("vel")).unwrap();
        assert_eq!(load_velocity(&dir.path().join("vel")).unwrap(), f);

        let mask = MaskVolume::new(Grid::new(2, 3, 2), 2, (0..24).map(|i| i % 3 == 0).collect()).unwrap();
        save_mask(&mask, &dir.path().join("mask")).unwrap();
        assert_eq!(load_mask(&dir.path().join("mask")).unwrap(), mask);
    }

    #[test]
    fn vtk_export_layout() {
        let dir = tempfile::tempdir().unwrap();
        let m = meta([2, 2, 2, 1]);
        let f = VelocityField::zeros(m);
        let mask = MaskVolume::empty(Grid::new(2, 2, 2), 1);
        let path = dir.path().join("f.vtk");
        export_vtk(&f, &mask, 0, &path).unwrap();
        let text = fs::read_to_string(&path).unwrap();
        assert!(text.contains("DIMENSIONS 2 2 2"));
        assert!(text.contains("SPACING 1 1 1.3"));
        assert!(text.contains("POINT_DATA 8"));
        let vectors: Vec<&str> = text
            .lines()
            .skip_while(|l| !l.starts_with("VECTORS"))
            .skip(1)
            .take_while(|l| !l.starts_with("SCALARS"))
            .collect();
        assert_eq!(vectors.len(), 8);
        assert!(vectors.iter().all(|l| *l == "0 0 0"));
        assert!(export_vtk(&f, &mask, 1, &path).is_err());
    }
}
