//! Text feature files and corpus manifests.
//!
//! Feature file:
//!
//! ```text
//! L d
//! class <label>
//! annotations s1 e1 [s2 e2 ...]
//! <L lines of d reals>
//! ```
//!
//! The video id is the file stem. A manifest lists one feature-file path per
//! line (relative to the manifest) plus `split <class> <train|val|test>`
//! directives.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use super::{Corpus, Segment, Split, VideoFeatures};
use crate::error::{Error, Result};
use crate::numeric::Matrix;

pub const MANIFEST_NAME: &str = "manifest.txt";

/// 17 significant digits, enough to round-trip any `f64`.
pub(crate) fn fmt_real(out: &mut String, x: f64) {
    let _ = write!(out, "{x:.16e}");
}

fn format_err(path: &Path, line: usize, msg: impl Into<String>) -> Error {
    Error::Format {
        path: path.display().to_string(),
        line,
        msg: msg.into(),
    }
}

pub fn save_feature_file(v: &VideoFeatures, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut out = String::new();
    let _ = writeln!(out, "{} {}", v.frames.rows(), v.frames.cols());
    let _ = writeln!(out, "class {}", v.class_label);
    out.push_str("annotations");
    for s in &v.annotations {
        let _ = write!(out, " {} {}", s.start, s.end);
    }
    out.push('\n');
    for r in 0..v.frames.rows() {
        for (c, x) in v.frames.row(r).iter().enumerate() {
            if c > 0 {
                out.push(' ');
            }
            fmt_real(&mut out, *x);
        }
        out.push('\n');
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

pub fn load_feature_file(path: impl AsRef<Path>) -> Result<VideoFeatures> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let id = path
        .file_stem()
        .and_then(|s| s.to_str())
        .ok_or_else(|| format_err(path, 0, "file name is not valid UTF-8"))?
        .to_owned();
    let mut lines = text.lines();

    let header = lines
        .next()
        .ok_or_else(|| format_err(path, 1, "missing header"))?;
    let dims: Vec<usize> = header
        .split_whitespace()
        .map(str::parse)
        .collect::<std::result::Result<_, _>>()
        .map_err(|_| format_err(path, 1, format!("malformed header `{header}`")))?;
    let [l, d] = dims[..] else {
        return Err(format_err(path, 1, format!("header needs `L d`, got `{header}`")));
    };
    if l == 0 || d == 0 {
        return Err(format_err(path, 1, "L and d must be positive"));
    }

    let class_line = lines
        .next()
        .ok_or_else(|| format_err(path, 2, "missing class line"))?;
    let class_label = match class_line.split_whitespace().collect::<Vec<_>>()[..] {
        ["class", label] => label.to_owned(),
        _ => return Err(format_err(path, 2, "expected `class <label>`")),
    };

    let ann_line = lines
        .next()
        .ok_or_else(|| format_err(path, 3, "missing annotations line"))?;
    let mut tokens = ann_line.split_whitespace();
    if tokens.next() != Some("annotations") {
        return Err(format_err(path, 3, "expected `annotations ...`"));
    }
    let bounds: Vec<usize> = tokens
        .map(str::parse)
        .collect::<std::result::Result<_, _>>()
        .map_err(|_| format_err(path, 3, "unparsable annotation bound"))?;
    if !bounds.len().is_multiple_of(2) {
        return Err(format_err(path, 3, "annotation bounds must come in pairs"));
    }
    let annotations = bounds
        .chunks(2)
        .map(|p| Segment::new(p[0], p[1]).map_err(|e| format_err(path, 3, e.to_string())))
        .collect::<Result<Vec<_>>>()?;

    let mut data = Vec::with_capacity(l * d);
    for row in 0..l {
        let line_no = 4 + row;
        let line = lines
            .next()
            .ok_or_else(|| format_err(path, line_no, format!("missing feature row {} of {l}", row + 1)))?;
        let before = data.len();
        for tok in line.split_whitespace() {
            let x: f64 = tok
                .parse()
                .map_err(|_| format_err(path, line_no, format!("unparsable number `{tok}`")))?;
            data.push(x);
        }
        if data.len() - before != d {
            return Err(format_err(
                path,
                line_no,
                format!("expected {d} values, found {}", data.len() - before),
            ));
        }
    }
    if let Some((extra, _)) = lines.enumerate().find(|(_, s)| !s.trim().is_empty()) {
        return Err(format_err(
            path,
            4 + l + extra,
            "trailing data after feature rows",
        ));
    }
    let frames = Matrix::from_vec(l, d, data)?;
    VideoFeatures::new(id, class_label, frames, annotations).map_err(|e| format_err(path, 3, e.to_string()))
}

/// Writes every video to `dir/videos/<id>.feat` and a manifest to
/// `dir/manifest.txt`. Returns the manifest path.
pub fn save_corpus(corpus: &Corpus, dir: impl AsRef<Path>) -> Result<PathBuf> {
    let dir = dir.as_ref();
    let videos_dir = dir.join("videos");
    fs::create_dir_all(&videos_dir).map_err(|e| Error::io(&videos_dir, e))?;
    let mut manifest = String::new();
    for (class, split) in &corpus.splits {
        let _ = writeln!(manifest, "split {class} {split}");
    }
    for v in &corpus.videos {
        let rel = format!("videos/{}.feat", v.id);
        save_feature_file(v, dir.join(&rel))?;
        let _ = writeln!(manifest, "{rel}");
    }
    let path = dir.join(MANIFEST_NAME);
    fs::write(&path, manifest).map_err(|e| Error::io(&path, e))?;
    Ok(path)
}

/// Loads a corpus from a manifest file, or from a directory containing one.
pub fn load_corpus(path: impl AsRef<Path>) -> Result<Corpus> {
    let path = path.as_ref();
    let manifest = if path.is_dir() {
        path.join(MANIFEST_NAME)
    } else {
        path.to_path_buf()
    };
    let base = manifest.parent().unwrap_or(Path::new("."));
    let text = fs::read_to_string(&manifest).map_err(|e| Error::io(&manifest, e))?;
    let mut splits = BTreeMap::new();
    let mut videos = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let parts: Vec<&str> = line.split_whitespace().collect();
        if parts[0] == "split" {
            let [_, class, split] = parts[..] else {
                return Err(format_err(&manifest, i + 1, "expected `split <class> <split>`"));
            };
            let split: Split = split
                .parse()
                .map_err(|e: Error| format_err(&manifest, i + 1, e.to_string()))?;
            if splits.insert(class.to_owned(), split).is_some() {
                return Err(format_err(
                    &manifest,
                    i + 1,
                    format!("class `{class}` split twice"),
                ));
            }
        } else {
            videos.push(load_feature_file(base.join(line))?);
        }
    }
    Corpus::new(videos, splits).map_err(|e| format_err(&manifest, 0, e.to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample_video() -> VideoFeatures {
        VideoFeatures::new(
            "vid_7",
            "c03",
            Matrix::from_rows(&[[0.1, -2.5e-7], [1.0 / 3.0, 7.0], [f64::MIN_POSITIVE, -0.0]]),
            vec![Segment::new(0, 2).unwrap()],
        )
        .unwrap()
    }

    #[test]
    fn roundtrip_is_lossless() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("vid_7.feat");
        let v = sample_video();
        save_feature_file(&v, &path).unwrap();
        let back = load_feature_file(&path).unwrap();
        assert_eq!(back, v);
        for (a, b) in back.frames.as_slice().iter().zip(v.frames.as_slice()) {
            assert_eq!(a.to_bits(), b.to_bits());
        }
    }

    #[test]
    fn empty_annotation_list_is_valid() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ref.feat");
        fs::write(&path, "1 2\nclass x\nannotations\n1 2\n").unwrap();
        let v = load_feature_file(&path).unwrap();
        assert!(v.annotations.is_empty());
        assert_eq!(v.id, "ref");
    }

    #[test]
    fn missing_row_reports_its_position() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("short.feat");
        fs::write(&path, "3 2\nclass x\nannotations 0 1\n1 2\n3 4\n").unwrap();
        let err = load_feature_file(&path).unwrap_err();
        match &err {
            Error::Format { line, msg, .. } => {
                assert_eq!(*line, 6);
                assert!(msg.contains("row 3 of 3"), "{msg}");
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn malformed_inputs_name_lines() {
        let dir = tempfile::tempdir().unwrap();
        let cases = [
            ("x 2\nclass a\nannotations\n1 2\n", 1),
            ("1 2\nklass a\nannotations\n1 2\n", 2),
            ("1 2\nclass a\nannotations 0\n1 2\n", 3),
            ("1 2\nclass a\nannotations\n1 2 3\n", 4),
            ("2 2\nclass a\nannotations\n1 2\n1 zz\n", 5),
        ];
        for (i, (text, expected)) in cases.iter().enumerate() {
            let path = dir.path().join(format!("bad{i}.feat"));
            fs::write(&path, text).unwrap();
            match load_feature_file(&path) {
                Err(Error::Format { line, .. }) => assert_eq!(line, *expected, "case {i}"),
                other => panic!("case {i}: {other:?}"),
            }
        }
    }

    #[test]
    fn corpus_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let mut splits = BTreeMap::new();
        splits.insert("c03".to_owned(), Split::Test);
        let corpus = Corpus::new(vec![sample_video()], splits).unwrap();
        let manifest = save_corpus(&corpus, dir.path()).unwrap();
        assert_eq!(load_corpus(&manifest).unwrap(), corpus);
        assert_eq!(load_corpus(dir.path()).unwrap(), corpus);
    }
}
