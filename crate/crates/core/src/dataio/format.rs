//! Plain-text dataset directory:
//!
//! ```text
//! manifest.txt     n_samples=, n_classes=, feat_dim=, rep_dim=
//! features.csv     one comma-separated row per sample
//! labels.csv       one 0-based class id per line
//! class_reps.csv   one comma-separated row per class
//! splits.txt       [seen] [unseen] [val_pseudo_unseen] [train] [val] [test]
//! ```

use std::fmt::Write as _;
use std::path::Path;

use super::dataset::{Dataset, Splits};
use super::text::{
    create_dir, fmt_f64, parse_f64, parse_key_values, parse_usize, read_to_string, require, sha256_hex,
    write_string,
};
use crate::diffcore::Tensor;
use crate::error::{Error, Result};

pub const MANIFEST: &str = "manifest.txt";
pub const FEATURES: &str = "features.csv";
pub const LABELS: &str = "labels.csv";
pub const CLASS_REPS: &str = "class_reps.csv";
pub const SPLITS: &str = "splits.txt";

const SECTIONS: [&str; 6] = ["seen", "unseen", "val_pseudo_unseen", "train", "val", "test"];

fn matrix_csv(t: &Tensor) -> String {
    let mut s = String::new();
    for i in 0..t.rows() {
        let row: Vec<String> = t.row(i).iter().map(|&v| fmt_f64(v)).collect();
        s.push_str(&row.join(","));
        s.push('\n');
    }
    s
}

fn splits_text(splits: &Splits) -> String {
    let mut s = String::from("# class ids for the first three sections, sample indices for the rest\n");
    let lists = [
        &splits.seen,
        &splits.unseen,
        &splits.val_pseudo_unseen,
        &splits.train,
        &splits.val,
        &splits.test,
    ];
    for (name, list) in SECTIONS.iter().zip(lists) {
        let _ = writeln!(s, "[{name}]");
        for chunk in list.chunks(20) {
            let line: Vec<String> = chunk.iter().map(usize::to_string).collect();
            let _ = writeln!(s, "{}", line.join(" "));
        }
    }
    s
}

/// File name and contents of every file in a dataset directory, in a fixed order.
pub fn dataset_files(d: &Dataset) -> Vec<(&'static str, String)> {
    let manifest = format!(
        "n_samples={}\nn_classes={}\nfeat_dim={}\nrep_dim={}\n",
        d.n_samples(),
        d.n_classes(),
        d.feat_dim(),
        d.rep_dim()
    );
    let labels: String = d.labels().iter().map(|y| format!("{y}\n")).collect();
    vec![
        (MANIFEST, manifest),
        (FEATURES, matrix_csv(d.raw_features())),
        (LABELS, labels),
        (CLASS_REPS, matrix_csv(d.raw_class_reps())),
        (SPLITS, splits_text(d.splits())),
    ]
}

/// SHA-256 over the serialized dataset files.
pub fn content_hash(d: &Dataset) -> String {
    let mut all = Vec::new();
    for (name, body) in dataset_files(d) {
        all.extend_from_slice(name.as_bytes());
        all.push(0);
        all.extend_from_slice(body.as_bytes());
    }
    sha256_hex(&all)
}

pub fn save_dataset(d: &Dataset, dir: &Path) -> Result<()> {
    create_dir(dir)?;
    for (name, body) in dataset_files(d) {
        write_string(&dir.join(name), &body)?;
    }
    Ok(())
}

fn read_matrix(path: &Path, rows: usize, cols: usize) -> Result<Tensor> {
    let text = read_to_string(path)?;
    let lines: Vec<&str> = text.lines().filter(|l| !l.trim().is_empty()).collect();
    if lines.len() != rows {
        return Err(Error::Dataset(format!(
            "{}: {} rows, manifest says {rows}",
            path.display(),
            lines.len()
        )));
    }
    let mut data = Vec::with_capacity(rows * cols);
    for (i, line) in lines.iter().enumerate() {
        let before = data.len();
        for tok in line.split(',') {
            data.push(parse_f64(path, tok)?);
        }
        let got = data.len() - before;
        if got != cols {
            return Err(Error::Dataset(format!(
                "{}: row {i} has {got} values, manifest says {cols}",
                path.display()
            )));
        }
    }
    Tensor::new(rows, cols, data)
}

fn read_splits(path: &Path) -> Result<Splits> {
    let text = read_to_string(path)?;
    let mut splits = Splits::default();
    let mut current: Option<&mut Vec<usize>> = None;
    for raw in text.lines() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        if let Some(name) = line.strip_prefix('[').and_then(|l| l.strip_suffix(']')) {
            current = Some(match name.trim() {
                "seen" => &mut splits.seen,
                "unseen" => &mut splits.unseen,
                "val_pseudo_unseen" => &mut splits.val_pseudo_unseen,
                "train" => &mut splits.train,
                "val" => &mut splits.val,
                "test" => &mut splits.test,
                other => {
                    return Err(Error::Parse {
                        path: path.to_path_buf(),
                        detail: format!("unknown section [{other}]"),
                    })
                }
            });
            continue;
        }
        let Some(list) = current.as_deref_mut() else {
            return Err(Error::Parse {
                path: path.to_path_buf(),
                detail: "values before the first section header".into(),
            });
        };
        for tok in line.split_whitespace() {
            list.push(parse_usize(path, tok)?);
        }
    }
    Ok(splits)
}

pub fn load_dataset(dir: &Path) -> Result<Dataset> {
    let mpath = dir.join(MANIFEST);
    let manifest = parse_key_values(&mpath, &read_to_string(&mpath)?)?;
    let get = |k: &str| -> Result<usize> { parse_usize(&mpath, require(&mpath, &manifest, k)?) };
    let (n, k, feat_dim, rep_dim) = (get("n_samples")?, get("n_classes")?, get("feat_dim")?, get("rep_dim")?);

    let features = read_matrix(&dir.join(FEATURES), n, feat_dim)?;
    let class_reps = read_matrix(&dir.join(CLASS_REPS), k, rep_dim)?;

    let lpath = dir.join(LABELS);
    let labels = read_to_string(&lpath)?
        .lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| parse_usize(&lpath, l))
        .collect::<Result<Vec<_>>>()?;
    if labels.len() != n {
        return Err(Error::Dataset(format!("{} labels, manifest says {n}", labels.len())));
    }
    let splits = read_splits(&dir.join(SPLITS))?;
    Dataset::new(features, labels, class_reps, splits)
}
