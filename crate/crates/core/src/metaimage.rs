//! MetaImage-compatible header + raw pairs (`.mhd` / `.raw`).
//!
//! Only the subset needed here is supported: 3D, little-endian,
//! `MET_SHORT` for CT volumes and `MET_UCHAR` for label masks.

use std::collections::HashMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::grid::Grid;
use crate::morphology::LabelMask;
use crate::volgrid::VoxelVolume;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum ElementType {
    Short,
    UChar,
}

impl ElementType {
    fn name(self) -> &'static str {
        match self {
            ElementType::Short => "MET_SHORT",
            ElementType::UChar => "MET_UCHAR",
        }
    }

    fn size(self) -> usize {
        match self {
            ElementType::Short => 2,
            ElementType::UChar => 1,
        }
    }
}

struct Header {
    grid: Grid,
    element: ElementType,
    raw: PathBuf,
}

fn raw_path_for(header: &Path) -> PathBuf {
    header.with_extension("raw")
}

fn fmt_triple<T: std::fmt::Display>(v: &[T; 3]) -> String {
    format!("{} {} {}", v[0], v[1], v[2])
}

fn render_header(grid: &Grid, element: ElementType, raw_name: &str) -> String {
    format!(
        "ObjectType = Image\n\
         NDims = 3\n\
         DimSize = {}\n\
         ElementSpacing = {}\n\
         Offset = {}\n\
         ElementType = {}\n\
         ElementByteOrderMSB = False\n\
         ElementDataFile = {}\n",
        fmt_triple(&grid.dims),
        fmt_triple(&grid.spacing),
        fmt_triple(&grid.origin),
        element.name(),
        raw_name
    )
}

fn parse_triple<T: std::str::FromStr>(path: &Path, key: &str, s: &str) -> Result<[T; 3]> {
    let parts: Vec<&str> = s.split_whitespace().collect();
    let bad = || Error::Header {
        path: path.to_path_buf(),
        reason: format!("{key} must hold three numbers, got '{s}'"),
    };
    if parts.len() != 3 {
        return Err(bad());
    }
    let mut out = Vec::with_capacity(3);
    for p in parts {
        out.push(p.parse::<T>().map_err(|_| bad())?);
    }
    out.try_into().map_err(|_| bad())
}

fn read_header(path: &Path) -> Result<Header> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut kv = HashMap::new();
    for line in text.lines() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let Some((k, v)) = line.split_once('=') else {
            return Err(Error::Header {
                path: path.to_path_buf(),
                reason: format!("expected 'Key = Value', got '{line}'"),
            });
        };
        kv.insert(k.trim().to_string(), v.trim().to_string());
    }
    let get = |key: &str| {
        kv.get(key).map(String::as_str).ok_or_else(|| Error::Header {
            path: path.to_path_buf(),
            reason: format!("missing key {key}"),
        })
    };
    let expect = |key: &str, want: &str| -> Result<()> {
        let got = get(key)?;
        if got.eq_ignore_ascii_case(want) {
            Ok(())
        } else {
            Err(Error::Header {
                path: path.to_path_buf(),
                reason: format!("{key} must be {want}, got {got}"),
            })
        }
    };
    expect("ObjectType", "Image")?;
    expect("NDims", "3")?;
    expect("ElementByteOrderMSB", "False")?;
    let dims: [usize; 3] = parse_triple(path, "DimSize", get("DimSize")?)?;
    let spacing: [f64; 3] = parse_triple(path, "ElementSpacing", get("ElementSpacing")?)?;
    let origin: [f64; 3] = parse_triple(path, "Offset", get("Offset")?)?;
    let element = match get("ElementType")? {
        "MET_SHORT" => ElementType::Short,
        "MET_UCHAR" => ElementType::UChar,
        other => return Err(Error::ElementType(other.to_string())),
    };
    let grid = Grid::new(dims, spacing, origin)?;
    let raw_name = get("ElementDataFile")?;
    let raw = path
        .parent()
        .map(|d| d.join(raw_name))
        .unwrap_or_else(|| PathBuf::from(raw_name));
    Ok(Header { grid, element, raw })
}

fn read_raw(header: &Header) -> Result<Vec<u8>> {
    let bytes = fs::read(&header.raw).map_err(|e| Error::io(&header.raw, e))?;
    let expected = (header.grid.len() * header.element.size()) as u64;
    if (bytes.len() as u64) < expected {
        return Err(Error::ShortRaw {
            path: header.raw.clone(),
            expected,
            found: bytes.len() as u64,
        });
    }
    Ok(bytes)
}

/// Writes to a sibling temp file and renames it into place.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = PathBuf::from(tmp);
    {
        let mut f = fs::File::create(&tmp).map_err(|e| Error::io(&tmp, e))?;
        f.write_all(bytes).map_err(|e| Error::io(&tmp, e))?;
        f.sync_all().map_err(|e| Error::io(&tmp, e))?;
    }
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

fn write_pair(path: &Path, grid: &Grid, element: ElementType, raw_bytes: &[u8]) -> Result<()> {
    let raw = raw_path_for(path);
    let raw_name = raw
        .file_name()
        .and_then(|n| n.to_str())
        .ok_or_else(|| Error::Header {
            path: path.to_path_buf(),
            reason: "header path has no usable file name".into(),
        })?
        .to_string();
    write_atomic(&raw, raw_bytes)?;
    write_atomic(path, render_header(grid, element, &raw_name).as_bytes())
}

pub fn load_volume(path: impl AsRef<Path>) -> Result<VoxelVolume> {
    let path = path.as_ref();
    let header = read_header(path)?;
    if header.element != ElementType::Short {
        return Err(Error::ElementType(format!(
            "{} (volumes must be MET_SHORT)",
            header.element.name()
        )));
    }
    let bytes = read_raw(&header)?;
    let values = bytes
        .chunks_exact(2)
        .take(header.grid.len())
        .map(|c| i16::from_le_bytes([c[0], c[1]]))
        .collect();
    VoxelVolume::new(header.grid, values)
}

pub fn save_volume(volume: &VoxelVolume, path: impl AsRef<Path>) -> Result<()> {
    let mut bytes = Vec::with_capacity(volume.values().len() * 2);
    for v in volume.values() {
        bytes.extend_from_slice(&v.to_le_bytes());
    }
    write_pair(path.as_ref(), volume.grid(), ElementType::Short, &bytes)
}

pub fn load_label_mask(path: impl AsRef<Path>) -> Result<LabelMask> {
    let path = path.as_ref();
    let header = read_header(path)?;
    if header.element != ElementType::UChar {
        return Err(Error::ElementType(format!(
            "{} (label masks must be MET_UCHAR)",
            header.element.name()
        )));
    }
    let mut bytes = read_raw(&header)?;
    bytes.truncate(header.grid.len());
    LabelMask::from_labels(header.grid, bytes)
}

pub fn save_label_mask(mask: &LabelMask, path: impl AsRef<Path>) -> Result<()> {
    write_pair(path.as_ref(), mask.grid(), ElementType::UChar, mask.labels())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn write_header_only(dir: &Path, dims: &str, raw_len: usize) -> PathBuf {
        let h = dir.join("v.mhd");
        fs::write(
            &h,
            format!(
                "ObjectType = Image\nNDims = 3\nDimSize = {dims}\nElementSpacing = 1 1 1\n\
                 Offset = 0 0 0\nElementType = MET_SHORT\nElementByteOrderMSB = False\n\
                 ElementDataFile = v.raw\n"
            ),
        )
        .unwrap();
        fs::write(dir.join("v.raw"), vec![0u8; raw_len]).unwrap();
        h
    }

    #[test]
    fn loads_declared_dims() {
        let dir = tempfile::tempdir().unwrap();
        let h = write_header_only(dir.path(), "4 4 4", 128);
        let v = load_volume(&h).unwrap();
        assert_eq!(v.values().len(), 64);
    }

    #[test]
    fn short_raw_is_error() {
        let dir = tempfile::tempdir().unwrap();
        let h = write_header_only(dir.path(), "2 2 2", 8);
        assert!(matches!(load_volume(&h), Err(Error::ShortRaw { expected: 16, .. })));
    }

    #[test]
    fn rejects_other_element_types_and_spacing() {
        let dir = tempfile::tempdir().unwrap();
        let h = dir.path().join("f.mhd");
        fs::write(
            &h,
            "ObjectType = Image\nNDims = 3\nDimSize = 1 1 1\nElementSpacing = 1 1 1\n\
             Offset = 0 0 0\nElementType = MET_FLOAT\nElementByteOrderMSB = False\n\
             ElementDataFile = f.raw\n",
        )
        .unwrap();
        fs::write(dir.path().join("f.raw"), [0u8; 4]).unwrap();
        assert!(matches!(load_volume(&h), Err(Error::ElementType(_))));

        fs::write(
            &h,
            "ObjectType = Image\nNDims = 3\nDimSize = 1 1 1\nElementSpacing = 1 0 1\n\
             Offset = 0 0 0\nElementType = MET_SHORT\nElementByteOrderMSB = False\n\
             ElementDataFile = f.raw\n",
        )
        .unwrap();
        assert!(matches!(load_volume(&h), Err(Error::Geometry(_))));
        assert!(load_volume(dir.path().join("missing.mhd")).is_err());
    }

    #[test]
    fn minus_thousand_bytes() {
        let dir = tempfile::tempdir().unwrap();
        let g = Grid::new([2, 2, 1], [1.0; 3], [0.0; 3]).unwrap();
        let v = VoxelVolume::filled(g, -1000);
        let h = dir.path().join("air.mhd");
        save_volume(&v, &h).unwrap();
        let raw = fs::read(dir.path().join("air.raw")).unwrap();
        assert_eq!(raw, [0x18, 0xFC].repeat(4));
        let text = fs::read_to_string(&h).unwrap();
        assert!(text.contains("ElementType = MET_SHORT"));
        assert!(text.contains("ElementDataFile = air.raw"));
    }

    #[test]
    fn label_mask_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let g = Grid::new([3, 2, 2], [0.5, 0.5, 1.0], [1.0, 2.0, 3.0]).unwrap();
        let m = LabelMask::from_labels(g, vec![0, 1, 2, 3, 4, 5, 0, 1, 2, 3, 4, 5]).unwrap();
        let h = dir.path().join("m.mhd");
        save_label_mask(&m, &h).unwrap();
        assert_eq!(load_label_mask(&h).unwrap(), m);
        assert!(load_volume(&h).is_err());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]
        #[test]
        fn save_load_identity(
            dims in (1usize..6, 1usize..6, 1usize..6),
            sp in (0.1f64..3.0, 0.1f64..3.0, 0.1f64..3.0),
            org in (-100.0f64..100.0, -100.0f64..100.0, -100.0f64..100.0),
            seed in any::<u64>(),
        ) {
            let g = Grid::new([dims.0, dims.1, dims.2], [sp.0, sp.1, sp.2], [org.0, org.1, org.2]).unwrap();
            let mut s = seed;
            let v = VoxelVolume::from_fn(g, |_, _, _| {
                s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
                (s >> 48) as i16
            });
            let dir = tempfile::tempdir().unwrap();
            let h = dir.path().join("r.mhd");
            save_volume(&v, &h).unwrap();
            let back = load_volume(&h).unwrap();
            prop_assert_eq!(back, v);
        }
    }
}
