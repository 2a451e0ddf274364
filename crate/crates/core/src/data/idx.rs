//! IDX reader: big-endian magic (`0x00000803` images, `0x00000801` labels),
//! big-endian `u32` dimensions, then raw `u8` payload. Files ending in `.gz`
//! are decompressed transparently.

use std::fs::File;
use std::io::{BufReader, Read};
use std::path::Path;

use flate2::read::GzDecoder;

use super::Dataset;
use crate::error::{Error, Result};

const IMAGES_MAGIC: u32 = 0x0000_0803;
const LABELS_MAGIC: u32 = 0x0000_0801;

struct IdxArray {
    dims: Vec<usize>,
    payload: Vec<u8>,
}

fn ingest_err(path: &Path, reason: impl Into<String>) -> Error {
    Error::Ingest {
        path: path.to_path_buf(),
        reason: reason.into(),
    }
}

fn read_file(path: &Path) -> Result<Vec<u8>> {
    let file = File::open(path).map_err(|e| ingest_err(path, e.to_string()))?;
    let mut bytes = Vec::new();
    let mut reader = BufReader::new(file);
    let res = if path.extension().is_some_and(|ext| ext == "gz") {
        GzDecoder::new(reader).read_to_end(&mut bytes)
    } else {
        reader.read_to_end(&mut bytes)
    };
    res.map_err(|e| ingest_err(path, e.to_string()))?;
    Ok(bytes)
}

fn parse(path: &Path, bytes: Vec<u8>, magic: u32, ndims: usize) -> Result<IdxArray> {
    let header = 4 * (1 + ndims);
    if bytes.len() < 4 {
        return Err(ingest_err(path, "truncated header"));
    }
    let word = |k: usize| u32::from_be_bytes(bytes[4 * k..4 * k + 4].try_into().unwrap());
    let found = word(0);
    if found != magic {
        return Err(ingest_err(
            path,
            format!("bad magic 0x{found:08x}, expected 0x{magic:08x}"),
        ));
    }
    if bytes.len() < header {
        return Err(ingest_err(path, "truncated header"));
    }
    let dims: Vec<usize> = (1..=ndims).map(|k| word(k) as usize).collect();
    let expected = dims.iter().product::<usize>();
    let available = bytes.len() - header;
    if available < expected {
        return Err(ingest_err(
            path,
            format!("truncated payload: {available} bytes, expected {expected}"),
        ));
    }
    let mut payload = bytes;
    payload.drain(..header);
    payload.truncate(expected);
    Ok(IdxArray { dims, payload })
}

/// Loads an image/label IDX pair, scaling pixels to `[0, 1]` and flattening
/// each image row-major.
pub fn load_idx(images_path: impl AsRef<Path>, labels_path: impl AsRef<Path>) -> Result<Dataset> {
    load_idx_limited(images_path, labels_path, None)
}

/// Like [`load_idx`] but keeps only the first `limit` examples.
pub fn load_idx_limited(
    images_path: impl AsRef<Path>,
    labels_path: impl AsRef<Path>,
    limit: Option<usize>,
) -> Result<Dataset> {
    let (ip, lp) = (images_path.as_ref(), labels_path.as_ref());
    let images = parse(ip, read_file(ip)?, IMAGES_MAGIC, 3)?;
    let labels = parse(lp, read_file(lp)?, LABELS_MAGIC, 1)?;
    let n = images.dims[0];
    if labels.dims[0] != n {
        return Err(ingest_err(
            lp,
            format!(
                "holds {} labels but {} holds {n} images",
                labels.dims[0],
                ip.display()
            ),
        ));
    }
    let dim = images.dims[1] * images.dims[2];
    if dim == 0 {
        return Err(ingest_err(ip, "zero-sized images"));
    }
    let keep = limit.map_or(n, |l| l.min(n));
    let features = images.payload[..keep * dim]
        .iter()
        .map(|&b| f64::from(b) / 255.0)
        .collect();
    let ys: Vec<usize> = labels.payload[..keep].iter().map(|&b| b as usize).collect();
    // Class count comes from the whole label file so subsets agree with it.
    let num_classes = labels.payload.iter().copied().max().map_or(0, |m| m as usize + 1);
    Dataset::new(features, ys, dim, num_classes.max(2)).map_err(|e| ingest_err(lp, e.to_string()))
}

#[cfg(test)]
mod tests {
    use std::io::Write;

    use super::*;

    fn idx_bytes(magic: u32, dims: &[u32], payload: &[u8]) -> Vec<u8> {
        let mut out = magic.to_be_bytes().to_vec();
        for d in dims {
            out.extend_from_slice(&d.to_be_bytes());
        }
        out.extend_from_slice(payload);
        out
    }

    fn write(dir: &Path, name: &str, bytes: &[u8]) -> std::path::PathBuf {
        let p = dir.join(name);
        std::fs::write(&p, bytes).unwrap();
        p
    }

    fn toy_pair(dir: &Path) -> (std::path::PathBuf, std::path::PathBuf) {
        let imgs = idx_bytes(IMAGES_MAGIC, &[3, 2, 2], &[0, 255, 51, 102, 1, 2, 3, 4, 9, 9, 9, 9]);
        let lbls = idx_bytes(LABELS_MAGIC, &[3], &[0, 9, 4]);
        (write(dir, "img", &imgs), write(dir, "lbl", &lbls))
    }

    #[test]
    fn loads_and_scales() {
        let dir = tempfile::tempdir().unwrap();
        let (i, l) = toy_pair(dir.path());
        let ds = load_idx(&i, &l).unwrap();
        assert_eq!(ds.len(), 3);
        assert_eq!(ds.dim(), 4);
        assert_eq!(ds.num_classes(), 10);
        assert_eq!(ds.row(0), &[0.0, 1.0, 0.2, 0.4]);
        assert_eq!(ds.labels(), &[0, 9, 4]);

        let head = load_idx_limited(&i, &l, Some(2)).unwrap();
        assert_eq!(head.len(), 2);
        assert_eq!(head.num_classes(), 10);
    }

    #[test]
    fn reads_gzip() {
        let dir = tempfile::tempdir().unwrap();
        let (i, l) = toy_pair(dir.path());
        let gz = dir.path().join("img.gz");
        let mut enc = flate2::write::GzEncoder::new(
            File::create(&gz).unwrap(),
            flate2::Compression::default(),
        );
        enc.write_all(&std::fs::read(&i).unwrap()).unwrap();
        enc.finish().unwrap();
        let a = load_idx(&i, &l).unwrap();
        let b = load_idx(&gz, &l).unwrap();
        assert_eq!(a.row(2), b.row(2));
    }

    #[test]
    fn errors_name_the_offending_file() {
        let dir = tempfile::tempdir().unwrap();
        let (i, l) = toy_pair(dir.path());

        let bytes = std::fs::read(&i).unwrap();
        let trunc = write(dir.path(), "trunc", &bytes[..bytes.len() - 1]);
        let err = load_idx(&trunc, &l).unwrap_err();
        assert!(matches!(&err, Error::Ingest { path, .. } if path == &trunc), "{err}");

        let swapped = load_idx(&l, &i).unwrap_err();
        assert!(swapped.to_string().contains("bad magic"));

        let short = write(dir.path(), "short", &idx_bytes(LABELS_MAGIC, &[2], &[1, 2]));
        let err = load_idx(&i, &short).unwrap_err();
        assert!(matches!(&err, Error::Ingest { path, .. } if path == &short), "{err}");

        let header_only = write(dir.path(), "hdr", &[0, 0, 8]);
        assert!(load_idx(&header_only, &l).is_err());
        assert!(load_idx(dir.path().join("missing"), &l).is_err());
    }
}
