//! On-disk formats for registration datasets.
//!
//! A dataset directory holds `source.ply`, `target.ply`,
//! `correspondences.csv` (`source_index,target_index`, zero-based),
//! `truth_pose.json` and, for generated instances, `metadata.json`.
//! Point clouds may also be read from 3-column CSV.

use std::fs;
use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{domain, Error, Result};
use crate::registration::{
    CorrespondenceSet, PointCloud, Pose, RegistrationInstance, SyntheticConfig,
};

pub const SOURCE_FILE: &str = "source.ply";
pub const TARGET_FILE: &str = "target.ply";
pub const CORRESPONDENCE_FILE: &str = "correspondences.csv";
pub const TRUTH_FILE: &str = "truth_pose.json";
pub const METADATA_FILE: &str = "metadata.json";
pub const FORMAT_VERSION: u32 = 1;

const POSE_TOL: f64 = 1e-9;

fn open(path: &Path) -> Result<fs::File> {
    fs::File::open(path)
        .map_err(|e| std::io::Error::new(e.kind(), format!("{}: {e}", path.display())).into())
}

fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path)
        .map_err(|e| std::io::Error::new(e.kind(), format!("{}: {e}", path.display())).into())
}

fn parse_err(line: usize, message: impl Into<String>) -> Error {
    Error::Parse {
        line,
        message: message.into(),
    }
}

pub fn write_ply<W: Write>(mut w: W, cloud: &PointCloud) -> Result<()> {
    writeln!(w, "ply")?;
    writeln!(w, "format ascii 1.0")?;
    writeln!(w, "element vertex {}", cloud.len())?;
    writeln!(w, "property double x")?;
    writeln!(w, "property double y")?;
    writeln!(w, "property double z")?;
    writeln!(w, "end_header")?;
    for p in cloud.points() {
        writeln!(w, "{} {} {}", p.x, p.y, p.z)?;
    }
    Ok(())
}

struct PlyElement {
    name: String,
    count: usize,
    properties: Vec<String>,
}

/// Reads the `x y z` properties of the `vertex` element of an ASCII PLY.
/// Other elements and properties are skipped.
pub fn read_ply<R: Read>(r: R) -> Result<PointCloud> {
    let mut lines = BufReader::new(r).lines().enumerate().map(|(i, l)| (i + 1, l));
    let mut next = |what: &str| -> Result<(usize, String)> {
        match lines.next() {
            Some((n, Ok(l))) => Ok((n, l)),
            Some((_, Err(e))) => Err(e.into()),
            None => Err(parse_err(0, format!("unexpected end of file, expected {what}"))),
        }
    };

    let (n, magic) = next("'ply'")?;
    if magic.trim() != "ply" {
        return Err(parse_err(n, "missing 'ply' magic"));
    }
    let mut elements: Vec<PlyElement> = Vec::new();
    let mut ascii = false;
    loop {
        let (n, line) = next("'end_header'")?;
        let tokens: Vec<&str> = line.split_whitespace().collect();
        match tokens.as_slice() {
            ["end_header"] => break,
            ["format", "ascii", _] => ascii = true,
            ["format", other, ..] => {
                return Err(parse_err(n, format!("unsupported PLY format '{other}'")))
            }
            ["comment", ..] | ["obj_info", ..] | [] => {}
            ["element", name, count] => elements.push(PlyElement {
                name: name.to_string(),
                count: count
                    .parse()
                    .map_err(|_| parse_err(n, format!("bad element count '{count}'")))?,
                properties: Vec::new(),
            }),
            ["property", "list", _, _, name] | ["property", _, name] => elements
                .last_mut()
                .ok_or_else(|| parse_err(n, "property before any element"))?
                .properties
                .push(name.to_string()),
            _ => return Err(parse_err(n, format!("unrecognized header line '{line}'"))),
        }
    }
    if !ascii {
        return Err(parse_err(0, "PLY header has no ascii format line"));
    }
    let vertex_pos = elements
        .iter()
        .position(|e| e.name == "vertex")
        .ok_or_else(|| parse_err(0, "PLY has no vertex element"))?;
    let vertex = &elements[vertex_pos];
    let column = |axis: &str| {
        vertex
            .properties
            .iter()
            .position(|p| p == axis)
            .ok_or_else(|| parse_err(0, format!("vertex element lacks property '{axis}'")))
    };
    let cols = [column("x")?, column("y")?, column("z")?];

    for e in &elements[..vertex_pos] {
        for _ in 0..e.count {
            next("element data")?;
        }
    }
    let mut points = Vec::with_capacity(vertex.count);
    for _ in 0..vertex.count {
        let (n, line) = next("vertex data")?;
        let tokens: Vec<&str> = line.split_whitespace().collect();
        if tokens.len() < vertex.properties.len() {
            return Err(parse_err(
                n,
                format!("expected {} values, found {}", vertex.properties.len(), tokens.len()),
            ));
        }
        let mut xyz = [0.0; 3];
        for (v, &c) in xyz.iter_mut().zip(&cols) {
            *v = tokens[c]
                .parse()
                .map_err(|_| parse_err(n, format!("bad coordinate '{}'", tokens[c])))?;
        }
        points.push(Vector3::from(xyz));
    }
    PointCloud::new(points)
}

/// Three numeric columns per row; a non-numeric first row is taken as a header.
pub fn read_xyz_csv<R: Read>(r: R) -> Result<PointCloud> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .trim(csv::Trim::All)
        .from_reader(r);
    let mut points = Vec::new();
    for (i, record) in reader.records().enumerate() {
        let record = record?;
        let line = record.position().map_or(i + 1, |p| p.line() as usize);
        if record.len() != 3 {
            return Err(parse_err(line, format!("expected 3 columns, found {}", record.len())));
        }
        let parsed: std::result::Result<Vec<f64>, _> =
            record.iter().map(str::parse::<f64>).collect();
        match parsed {
            Ok(v) => points.push(Vector3::new(v[0], v[1], v[2])),
            Err(_) if i == 0 => continue,
            Err(_) => return Err(parse_err(line, "non-numeric coordinate")),
        }
    }
    PointCloud::new(points)
}

/// Dispatches on the extension: `.ply` or `.csv`.
pub fn read_point_cloud(path: &Path) -> Result<PointCloud> {
    let file = open(path)?;
    match path.extension().and_then(|e| e.to_str()) {
        Some(ext) if ext.eq_ignore_ascii_case("ply") => read_ply(file),
        Some(ext) if ext.eq_ignore_ascii_case("csv") => read_xyz_csv(file),
        _ => Err(domain(format!(
            "{}: unsupported point cloud extension (expected .ply or .csv)",
            path.display()
        ))),
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct PairRow {
    source_index: usize,
    target_index: usize,
}

pub fn write_correspondences<W: Write>(w: W, set: &CorrespondenceSet) -> Result<()> {
    let mut writer = csv::Writer::from_writer(w);
    for &(source_index, target_index) in set.pairs() {
        writer.serialize(PairRow {
            source_index,
            target_index,
        })?;
    }
    writer.flush()?;
    Ok(())
}

pub fn read_correspondences<R: Read>(
    r: R,
    source_len: usize,
    target_len: usize,
) -> Result<CorrespondenceSet> {
    let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(r);
    let mut pairs = Vec::new();
    for row in reader.deserialize::<PairRow>() {
        pairs.push(row.map(|p| (p.source_index, p.target_index))?);
    }
    CorrespondenceSet::new(pairs, None, source_len, target_len)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct PoseFile {
    /// Row-major.
    rotation: [[f64; 3]; 3],
    translation: [f64; 3],
}

pub fn pose_to_json(pose: &Pose) -> Result<String> {
    let r = &pose.rotation;
    let file = PoseFile {
        rotation: std::array::from_fn(|i| std::array::from_fn(|j| r[(i, j)])),
        translation: pose.translation.into(),
    };
    Ok(serde_json::to_string_pretty(&file)?)
}

pub fn pose_from_json(text: &str) -> Result<Pose> {
    let file: PoseFile = serde_json::from_str(text)?;
    let rotation = Matrix3::from_fn(|i, j| file.rotation[i][j]);
    Pose::new(rotation, Vector3::from(file.translation), POSE_TOL)
}

/// Provenance written next to generated datasets.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Metadata {
    pub version: u32,
    pub seed: u64,
    pub n_points: usize,
    pub noise_sigma: f64,
    pub outlier_fraction: f64,
    pub outlier_count: usize,
    /// Sorted source indices whose correspondence is wrong.
    pub outlier_source_indices: Vec<usize>,
    pub config: SyntheticConfig,
}

impl Metadata {
    pub fn for_instance(instance: &RegistrationInstance) -> Option<Self> {
        let config = instance.config.clone()?;
        let corr = &instance.correspondences;
        let mut outliers: Vec<usize> = corr
            .inlier_mask()?
            .iter()
            .zip(corr.pairs())
            .filter(|(&inlier, _)| !inlier)
            .map(|(_, &(s, _))| s)
            .collect();
        outliers.sort_unstable();
        Some(Self {
            version: FORMAT_VERSION,
            seed: config.seed,
            n_points: config.n_points,
            noise_sigma: config.noise_sigma,
            outlier_fraction: config.outlier_fraction,
            outlier_count: outliers.len(),
            outlier_source_indices: outliers,
            config,
        })
    }
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    fs::write(path, bytes)?;
    Ok(())
}

/// Writes every dataset file into `dir`, creating it if needed.
pub fn save_instance(dir: &Path, instance: &RegistrationInstance) -> Result<()> {
    fs::create_dir_all(dir)?;
    let mut buf = Vec::new();
    write_ply(&mut buf, &instance.source)?;
    write_file(&dir.join(SOURCE_FILE), &buf)?;
    buf.clear();
    write_ply(&mut buf, &instance.target)?;
    write_file(&dir.join(TARGET_FILE), &buf)?;
    buf.clear();
    write_correspondences(&mut buf, &instance.correspondences)?;
    write_file(&dir.join(CORRESPONDENCE_FILE), &buf)?;
    write_file(
        &dir.join(TRUTH_FILE),
        (pose_to_json(&instance.truth)? + "\n").as_bytes(),
    )?;
    if let Some(meta) = Metadata::for_instance(instance) {
        let text = serde_json::to_string_pretty(&meta)? + "\n";
        write_file(&dir.join(METADATA_FILE), text.as_bytes())?;
    }
    Ok(())
}

/// Reads a dataset directory. Without `truth_pose.json` the truth is the
/// identity and `has_truth` is false; `metadata.json` is optional.
pub fn load_instance(dir: &Path) -> Result<(RegistrationInstance, bool)> {
    let source = read_point_cloud(&dir.join(SOURCE_FILE))?;
    let target = read_point_cloud(&dir.join(TARGET_FILE))?;
    let file = open(&dir.join(CORRESPONDENCE_FILE))?;
    let mut correspondences = read_correspondences(file, source.len(), target.len())?;

    let truth_path = dir.join(TRUTH_FILE);
    let (truth, has_truth) = if truth_path.exists() {
        (pose_from_json(&read_text(&truth_path)?)?, true)
    } else {
        (Pose::identity(), false)
    };

    let meta_path = dir.join(METADATA_FILE);
    let mut config = None;
    if meta_path.exists() {
        let meta: Metadata = serde_json::from_str(&read_text(&meta_path)?)?;
        let mut is_outlier = vec![false; source.len()];
        for &s in &meta.outlier_source_indices {
            *is_outlier
                .get_mut(s)
                .ok_or_else(|| domain(format!("metadata outlier index {s} out of range")))? = true;
        }
        let mask = correspondences
            .pairs()
            .iter()
            .map(|&(s, _)| !is_outlier[s])
            .collect();
        correspondences = CorrespondenceSet::new(
            correspondences.pairs().to_vec(),
            Some(mask),
            source.len(),
            target.len(),
        )?;
        config = Some(meta.config);
    }

    Ok((
        RegistrationInstance {
            source,
            target,
            correspondences,
            truth,
            config,
        },
        has_truth,
    ))
}
