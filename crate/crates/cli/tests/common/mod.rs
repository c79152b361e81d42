#![allow(dead_code)]

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use irof::backend::oracle::{Disk, DiskModel};
use irof::imagery::{save_image_raw, save_relevance, Image, RelevanceMap, ValueRange};

pub const SIDE: usize = 64;

pub fn irof_bin() -> &'static str {
    env!("CARGO_BIN_EXE_irof")
}

pub fn oracle_bin() -> &'static str {
    env!("CARGO_BIN_EXE_irof-disk-oracle")
}

/// Images with one bright disk each, the matching disk-indicator heatmaps
/// and the disk model that scores them.
pub struct DiskFixture {
    pub root: PathBuf,
    pub images: PathBuf,
    pub gt: PathBuf,
    pub disks: PathBuf,
    pub ids: Vec<String>,
}

impl DiskFixture {
    pub fn backend(&self) -> String {
        format!("proc:{} --disks {}", oracle_bin(), self.disks.display())
    }
}

pub fn disk_fixture(root: &Path, n: usize, seed: u64) -> DiskFixture {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let images = root.join("images");
    let gt = root.join("gt");
    std::fs::create_dir_all(&images).unwrap();
    std::fs::create_dir_all(&gt).unwrap();
    let mut disks = BTreeMap::new();
    let mut ids = Vec::new();
    for i in 0..n {
        let radius = rng.random_range(6.0..14.0);
        let disk = Disk {
            row: rng.random_range(radius..SIDE as f64 - radius),
            col: rng.random_range(radius..SIDE as f64 - radius),
            radius,
        };
        let mask = disk.mask(SIDE, SIDE);
        let mut data = Vec::with_capacity(SIDE * SIDE * 3);
        for &inside in &mask {
            for _ in 0..3 {
                data.push(if inside {
                    rng.random_range(0.6..1.0)
                } else {
                    rng.random_range(0.0..0.5)
                });
            }
        }
        let id = format!("img{i:03}");
        let image = Image::new(SIDE, SIDE, 3, data, ValueRange::UNIT).unwrap();
        save_image_raw(&images.join(format!("{id}.f32")), &image).unwrap();
        let heat = RelevanceMap::new(
            SIDE,
            SIDE,
            mask.iter().map(|&m| m as u8 as f32).collect(),
            "gt",
        )
        .unwrap();
        save_relevance(&gt.join(format!("{id}.f32")), &heat, None).unwrap();
        disks.insert(id.clone(), disk);
        ids.push(id);
    }
    let disks_path = root.join("disks.json");
    std::fs::write(
        &disks_path,
        serde_json::to_string(&DiskModel::per_image(disks)).unwrap(),
    )
    .unwrap();
    DiskFixture {
        root: root.to_owned(),
        images,
        gt,
        disks: disks_path,
        ids,
    }
}

pub fn run(args: &[&str]) -> Output {
    Command::new(irof_bin())
        .args(args)
        .env("IROF_LOG", "warn")
        .output()
        .expect("irof runs")
}

pub fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

pub fn stdout(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).into_owned()
}
