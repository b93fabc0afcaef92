//! RVF volume files and NIfTI-1 import.
//!
//! RVF layout: `RVF1`, u32 channels, u32 D, H, W, 3×f32 spacing (mm),
//! u8 dtype (0 = f32, 1 = u8), then voxels in `C, D, H, W` order, all
//! little-endian.

use std::fs::File;
use std::io::{BufReader, BufWriter, Cursor, Read, Write};
use std::path::Path;

use byteorder::{BigEndian, ByteOrder, LittleEndian, ReadBytesExt, WriteBytesExt};

use super::Volume;
use crate::error::{Error, Result};

pub const RVF_MAGIC: &[u8; 4] = b"RVF1";

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Dtype {
    F32 = 0,
    U8 = 1,
}

pub fn write_rvf(path: &Path, v: &Volume, dtype: Dtype) -> Result<()> {
    let io = |e| Error::io(path, e);
    if dtype == Dtype::U8 {
        if let Some(bad) = v.data.iter().find(|&&x| x < 0.0 || x > 255.0 || x.fract() != 0.0) {
            return Err(Error::OutOfRange(format!("value {bad} cannot be stored as u8")));
        }
    }
    let mut w = BufWriter::new(File::create(path).map_err(io)?);
    w.write_all(RVF_MAGIC).map_err(io)?;
    w.write_u32::<LittleEndian>(v.channels as u32).map_err(io)?;
    for &d in &v.shape {
        w.write_u32::<LittleEndian>(d as u32).map_err(io)?;
    }
    for &s in &v.spacing_mm {
        w.write_f32::<LittleEndian>(s as f32).map_err(io)?;
    }
    w.write_u8(dtype as u8).map_err(io)?;
    match dtype {
        Dtype::F32 => v.data.iter().try_for_each(|&x| w.write_f32::<LittleEndian>(x)).map_err(io)?,
        Dtype::U8 => w.write_all(&v.data.iter().map(|&x| x as u8).collect::<Vec<_>>()).map_err(io)?,
    }
    w.flush().map_err(io)
}

pub fn read_rvf(path: &Path) -> Result<(Volume, Dtype)> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    let bad = |reason: &str| Error::format(path, reason.to_string());
    let mut r = Cursor::new(&bytes);
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic).map_err(|_| bad("file too short"))?;
    if &magic != RVF_MAGIC {
        return Err(bad("not an RVF file (bad magic)"));
    }
    let hdr = |r: &mut Cursor<&Vec<u8>>| -> std::io::Result<(u32, [u32; 3], [f32; 3], u8)> {
        let c = r.read_u32::<LittleEndian>()?;
        let d = [r.read_u32::<LittleEndian>()?, r.read_u32::<LittleEndian>()?, r.read_u32::<LittleEndian>()?];
        let s = [r.read_f32::<LittleEndian>()?, r.read_f32::<LittleEndian>()?, r.read_f32::<LittleEndian>()?];
        Ok((c, d, s, r.read_u8()?))
    };
    let (c, d, s, code) = hdr(&mut r).map_err(|_| bad("truncated header"))?;
    let dtype = match code {
        0 => Dtype::F32,
        1 => Dtype::U8,
        _ => return Err(bad("unknown dtype code")),
    };
    let n = c as usize * d.iter().map(|&x| x as usize).product::<usize>();
    let body = &bytes[r.position() as usize..];
    let need = n * if dtype == Dtype::F32 { 4 } else { 1 };
    if body.len() != need {
        return Err(Error::format(path, format!("expected {need} data bytes, found {}", body.len())));
    }
    let data = match dtype {
        Dtype::F32 => body.chunks_exact(4).map(LittleEndian::read_f32).collect(),
        Dtype::U8 => body.iter().map(|&b| b as f32).collect(),
    };
    let shape = [d[0] as usize, d[1] as usize, d[2] as usize];
    let spacing = [s[0] as f64, s[1] as f64, s[2] as f64];
    let v = Volume::new(shape, spacing, c as usize, data).map_err(|e| Error::format(path, e.to_string()))?;
    Ok((v, dtype))
}

fn nifti_datatype_size(code: i16) -> Option<usize> {
    Some(match code {
        2 | 256 => 1,
        4 | 512 => 2,
        8 | 16 | 768 => 4,
        64 => 8,
        _ => return None,
    })
}

fn decode<B: ByteOrder>(code: i16, raw: &[u8]) -> Vec<f64> {
    match code {
        2 => raw.iter().map(|&b| b as f64).collect(),
        256 => raw.iter().map(|&b| b as i8 as f64).collect(),
        4 => raw.chunks_exact(2).map(|c| B::read_i16(c) as f64).collect(),
        512 => raw.chunks_exact(2).map(|c| B::read_u16(c) as f64).collect(),
        8 => raw.chunks_exact(4).map(|c| B::read_i32(c) as f64).collect(),
        768 => raw.chunks_exact(4).map(|c| B::read_u32(c) as f64).collect(),
        16 => raw.chunks_exact(4).map(|c| B::read_f32(c) as f64).collect(),
        64 => raw.chunks_exact(8).map(B::read_f64).collect(),
        _ => unreachable!("datatype checked by caller"),
    }
}

struct NiftiHeader {
    dims: [usize; 4],
    pixdim: [f64; 3],
    datatype: i16,
    vox_offset: usize,
    slope: f64,
    inter: f64,
}

fn parse_header<B: ByteOrder>(h: &[u8]) -> NiftiHeader {
    let dim: Vec<i16> = (0..8).map(|i| B::read_i16(&h[40 + 2 * i..])).collect();
    let pix: Vec<f32> = (0..8).map(|i| B::read_f32(&h[76 + 4 * i..])).collect();
    let ndim = dim[0].clamp(1, 7) as usize;
    let d = |i: usize| if i <= ndim { dim[i].max(1) as usize } else { 1 };
    NiftiHeader {
        // x, y, z, t
        dims: [d(1), d(2), d(3), d(4)],
        pixdim: [pix[1] as f64, pix[2] as f64, pix[3] as f64],
        datatype: B::read_i16(&h[70..]),
        vox_offset: B::read_f32(&h[108..]) as usize,
        slope: B::read_f32(&h[112..]) as f64,
        inter: B::read_f32(&h[116..]) as f64,
    }
}

/// Reads a single-file NIfTI-1 volume. Axes map as x → W, y → H, z → D and
/// the fourth dimension → channels; `scl_slope`/`scl_inter` are applied
/// when the slope is nonzero.
pub fn read_nifti(path: &Path) -> Result<Volume> {
    let bad = |reason: String| Error::format(path, reason);
    let mut bytes = Vec::new();
    BufReader::new(File::open(path).map_err(|e| Error::io(path, e))?).read_to_end(&mut bytes).map_err(|e| Error::io(path, e))?;
    if bytes.len() < 348 {
        return Err(bad("shorter than a NIfTI-1 header".into()));
    }
    let h = &bytes[..348];
    let little = LittleEndian::read_i32(&h[0..4]) == 348;
    if !little && BigEndian::read_i32(&h[0..4]) != 348 {
        return Err(bad("sizeof_hdr is not 348".into()));
    }
    if &h[344..347] != b"n+1" {
        return Err(bad("only single-file NIfTI-1 (magic n+1) is supported".into()));
    }
    let hdr = if little { parse_header::<LittleEndian>(h) } else { parse_header::<BigEndian>(h) };
    let size = nifti_datatype_size(hdr.datatype).ok_or_else(|| bad(format!("unsupported datatype {}", hdr.datatype)))?;
    let [nx, ny, nz, nt] = hdr.dims;
    let n = nx * ny * nz * nt;
    let start = hdr.vox_offset.max(352);
    if bytes.len() < start + n * size {
        return Err(bad(format!("expected {} data bytes after offset {start}", n * size)));
    }
    let raw = &bytes[start..start + n * size];
    let mut vals = if little { decode::<LittleEndian>(hdr.datatype, raw) } else { decode::<BigEndian>(hdr.datatype, raw) };
    if hdr.slope != 0.0 && hdr.slope.is_finite() {
        let inter = if hdr.inter.is_finite() { hdr.inter } else { 0.0 };
        vals.iter_mut().for_each(|v| *v = *v * hdr.slope + inter);
    }
    let spacing = hdr.pixdim.map(|p| if p > 0.0 && p.is_finite() { p } else { 1.0 });
    Volume::new([nz, ny, nx], [spacing[2], spacing[1], spacing[0]], nt, vals.into_iter().map(|v| v as f32).collect())
        .map_err(|e| bad(e.to_string()))
}

/// Writes a little-endian float32 single-file NIfTI-1 volume.
pub fn write_nifti(path: &Path, v: &Volume) -> Result<()> {
    let io = |e| Error::io(path, e);
    let mut h = vec![0u8; 352];
    LittleEndian::write_i32(&mut h[0..], 348);
    let dims = [if v.channels > 1 { 4 } else { 3 }, v.shape[2], v.shape[1], v.shape[0], v.channels, 1, 1, 1];
    for (i, &d) in dims.iter().enumerate() {
        LittleEndian::write_i16(&mut h[40 + 2 * i..], d as i16);
    }
    LittleEndian::write_i16(&mut h[70..], 16);
    LittleEndian::write_i16(&mut h[72..], 32);
    let pix = [1.0, v.spacing_mm[2], v.spacing_mm[1], v.spacing_mm[0], 1.0, 1.0, 1.0, 1.0];
    for (i, &p) in pix.iter().enumerate() {
        LittleEndian::write_f32(&mut h[76 + 4 * i..], p as f32);
    }
    LittleEndian::write_f32(&mut h[108..], 352.0);
    LittleEndian::write_f32(&mut h[112..], 1.0);
    h[344..348].copy_from_slice(b"n+1\0");
    let mut w = BufWriter::new(File::create(path).map_err(io)?);
    w.write_all(&h).map_err(io)?;
    v.data.iter().try_for_each(|&x| w.write_f32::<LittleEndian>(x)).map_err(io)?;
    w.flush().map_err(io)
}

/// Reads `.rvf`, or NIfTI for `.nii`.
pub fn read_volume(path: &Path) -> Result<Volume> {
    match path.extension().and_then(|e| e.to_str()) {
        Some("nii") => read_nifti(path),
        _ => read_rvf(path).map(|(v, _)| v),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rvf_layout_is_exact() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("a.rvf");
        let v = Volume::new([1, 1, 2], [1.0, 2.0, 0.5], 1, vec![1.5, -2.0]).unwrap();
        write_rvf(&p, &v, Dtype::F32).unwrap();
        let bytes = std::fs::read(&p).unwrap();
        let mut want = b"RVF1".to_vec();
        for u in [1u32, 1, 1, 2] {
            want.extend(u.to_le_bytes());
        }
        for f in [1.0f32, 2.0, 0.5] {
            want.extend(f.to_le_bytes());
        }
        want.push(0);
        for f in [1.5f32, -2.0] {
            want.extend(f.to_le_bytes());
        }
        assert_eq!(bytes, want);
        assert_eq!(read_rvf(&p).unwrap(), (v, Dtype::F32));
    }

    #[test]
    fn rvf_u8_labels() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("l.rvf");
        let v = Volume::new([2, 1, 2], [1.0; 3], 1, vec![0.0, 1.0, 2.0, 255.0]).unwrap();
        write_rvf(&p, &v, Dtype::U8).unwrap();
        assert_eq!(std::fs::metadata(&p).unwrap().len(), 33 + 4);
        assert_eq!(read_rvf(&p).unwrap().0, v);
        let bad = Volume::new([1, 1, 1], [1.0; 3], 1, vec![0.5]).unwrap();
        assert!(write_rvf(&p, &bad, Dtype::U8).is_err());
    }

    #[test]
    fn rvf_rejects_truncation() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("a.rvf");
        write_rvf(&p, &Volume::zeros([2, 2, 2], 1), Dtype::F32).unwrap();
        let b = std::fs::read(&p).unwrap();
        std::fs::write(&p, &b[..b.len() - 1]).unwrap();
        assert!(read_rvf(&p).is_err());
        std::fs::write(&p, b"NOPE").unwrap();
        assert!(read_rvf(&p).is_err());
    }

    #[test]
    fn nifti_round_trip_and_axis_order() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("a.nii");
        let data: Vec<f32> = (0..2 * 3 * 4 * 5).map(|i| i as f32 * 0.5).collect();
        let v = Volume::new([3, 4, 5], [2.0, 1.5, 1.0], 2, data).unwrap();
        write_nifti(&p, &v).unwrap();
        assert_eq!(read_nifti(&p).unwrap(), v);
        assert_eq!(read_volume(&p).unwrap(), v);
    }

    #[test]
    fn nifti_big_endian_int16_with_scaling() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("b.nii");
        let mut h = vec![0u8; 352];
        BigEndian::write_i32(&mut h[0..], 348);
        for (i, d) in [3i16, 2, 1, 1, 1, 1, 1, 1].iter().enumerate() {
            BigEndian::write_i16(&mut h[40 + 2 * i..], *d);
        }
        BigEndian::write_i16(&mut h[70..], 4);
        for (i, d) in [1.0f32, 0.8, 0.9, 1.1].iter().enumerate() {
            BigEndian::write_f32(&mut h[76 + 4 * i..], *d);
        }
        BigEndian::write_f32(&mut h[108..], 352.0);
        BigEndian::write_f32(&mut h[112..], 2.0);
        BigEndian::write_f32(&mut h[116..], 1.0);
        h[344..348].copy_from_slice(b"n+1\0");
        for x in [-3i16, 7] {
            h.extend(x.to_be_bytes());
        }
        std::fs::write(&p, &h).unwrap();
        let v = read_nifti(&p).unwrap();
        assert_eq!(v.shape, [1, 1, 2]);
        assert_eq!(v.data, vec![-5.0, 15.0]);
        assert!((v.spacing_mm[2] - 0.8).abs() < 1e-6 && (v.spacing_mm[0] - 1.1).abs() < 1e-6);
    }
}
