//! Stdio model for tests: the class-1 score is the mean intensity inside a disk.
//!
//! Reads one JSON request per line and answers `{"id", "scores": [1 - m, m]}`,
//! or `{"id", "error"}` when the request cannot be scored.
//!
//! Usage: `irof-disk-oracle --disk ROW,COL,RADIUS` or `--disks FILE.json`,
//! where the file holds a serialized disk model (per-image disks).

use std::io::{self, BufRead, BufWriter, Write};

use anyhow::{bail, Context};
use serde::Deserialize;
use serde_json::{json, Value};

use irof::backend::oracle::{Disk, DiskModel};

#[derive(Deserialize)]
struct Request {
    id: Value,
    shape: [usize; 3],
    data: Vec<f32>,
}

fn parse_disk(s: &str) -> anyhow::Result<Disk> {
    let parts: Vec<f64> = s
        .split(',')
        .map(|p| p.trim().parse::<f64>())
        .collect::<Result<_, _>>()
        .with_context(|| format!("--disk {s:?}"))?;
    let [row, col, radius] = parts[..] else {
        bail!("--disk expects ROW,COL,RADIUS");
    };
    Ok(Disk { row, col, radius })
}

fn model_from_args() -> anyhow::Result<DiskModel> {
    let args: Vec<String> = std::env::args().skip(1).collect();
    match args.iter().map(String::as_str).collect::<Vec<_>>()[..] {
        ["--disk", spec] => Ok(DiskModel::fixed(parse_disk(spec)?)),
        ["--disks", path] => {
            let text = std::fs::read_to_string(path).with_context(|| path.to_string())?;
            Ok(serde_json::from_str(&text).with_context(|| path.to_string())?)
        }
        _ => bail!("usage: irof-disk-oracle --disk ROW,COL,RADIUS | --disks FILE.json"),
    }
}

fn answer(model: &DiskModel, line: &str) -> Value {
    let req: Request = match serde_json::from_str(line) {
        Ok(r) => r,
        Err(e) => return json!({ "id": null, "error": format!("bad request: {e}") }),
    };
    let id = req.id.as_str().unwrap_or_default();
    match model.score_raw(id, req.shape, &req.data) {
        Ok(scores) => json!({ "id": req.id, "scores": scores }),
        Err(e) => json!({ "id": req.id, "error": e.to_string() }),
    }
}

fn main() -> anyhow::Result<()> {
    let model = model_from_args()?;
    let stdin = io::stdin().lock();
    let mut out = BufWriter::new(io::stdout().lock());
    for line in stdin.lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        serde_json::to_writer(&mut out, &answer(&model, &line))?;
        out.write_all(b"\n")?;
        out.flush()?;
    }
    Ok(())
}
