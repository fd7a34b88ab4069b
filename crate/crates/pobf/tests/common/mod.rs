#![allow(dead_code)]

pub mod reference;

use std::collections::HashMap;
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex};
use std::thread::{self, JoinHandle};

use pobf::backends::mock::StubService;
use pobf::imageio::encode_png;
use pobf::manifest::{GroundingSample, Manifest, Split};
use pobf_core::seed::hash_words;
use pobf_core::{BBox, ImageSize, RgbImage};
use tempfile::TempDir;

/// A mock-backed stub HTTP server. The first `fail_first` deliveries of each
/// request id are answered with 503.
pub struct StubServer {
    pub url: String,
    server: Arc<tiny_http::Server>,
    workers: Vec<JoinHandle<()>>,
    /// `(path, request id)` per delivery, in arrival order.
    pub log: Arc<Mutex<Vec<(String, String)>>>,
}

impl StubServer {
    pub fn start(service: StubService, fail_first: usize) -> Self {
        let server = Arc::new(tiny_http::Server::http("127.0.0.1:0").expect("bind"));
        let url = format!("http://{}", server.server_addr().to_ip().expect("ip"));
        let service = Arc::new(service);
        let log = Arc::new(Mutex::new(Vec::new()));
        let seen: Arc<Mutex<HashMap<String, usize>>> = Arc::default();
        let workers = (0..4)
            .map(|_| {
                let (server, service, log, seen) = (server.clone(), service.clone(), log.clone(), seen.clone());
                thread::spawn(move || {
                    while let Ok(mut req) = server.recv() {
                        let id = req
                            .headers()
                            .iter()
                            .find(|h| h.field.equiv("X-Request-Id"))
                            .map(|h| h.value.to_string())
                            .unwrap_or_default();
                        let path = req.url().to_string();
                        log.lock().unwrap().push((path.clone(), id.clone()));
                        let mut body = Vec::new();
                        let _ = req.as_reader().read_to_end(&mut body);
                        let deliveries = {
                            let mut seen = seen.lock().unwrap();
                            let n = seen.entry(id).or_default();
                            *n += 1;
                            *n
                        };
                        let (status, text) = if deliveries <= fail_first && req.method().as_str() == "POST" {
                            (503, r#"{"error":"injected fault"}"#.to_string())
                        } else {
                            service.handle(req.method().as_str(), &path, &body)
                        };
                        let header = tiny_http::Header::from_bytes("Content-Type", "application/json").unwrap();
                        let _ = req.respond(
                            tiny_http::Response::from_string(text).with_status_code(status).with_header(header),
                        );
                    }
                })
            })
            .collect();
        Self { url, server, workers, log }
    }
}

impl Drop for StubServer {
    fn drop(&mut self) {
        for _ in &self.workers {
            self.server.unblock();
        }
        for w in self.workers.drain(..) {
            let _ = w.join();
        }
    }
}

/// Deterministic textured image.
pub fn test_image(size: ImageSize, salt: u64) -> RgbImage {
    let mut img = RgbImage::filled(size, [0, 0, 0]);
    for y in 0..size.height {
        for x in 0..size.width {
            let h = hash_words(&[salt, x as u64 / 3, y as u64 / 3]);
            img.set_pixel(x, y, [(h & 0xff) as u8, ((h >> 8) & 0xff) as u8, (x * 4 + y) as u8]);
        }
    }
    img
}

pub struct Fixture {
    pub dir: TempDir,
    pub manifest: Manifest,
}

impl Fixture {
    pub fn root(&self) -> &Path {
        self.dir.path()
    }

    pub fn config_path(&self) -> PathBuf {
        self.root().join("run.toml")
    }

    pub fn manifest_path(&self) -> PathBuf {
        self.root().join("manifest.jsonl")
    }

    pub fn image_root(&self) -> PathBuf {
        self.root().join("images")
    }

    pub fn write_config(&self, extra: &str) {
        let text = format!(
            "manifest = \"manifest.jsonl\"\nimage_root = \"images\"\nruns_dir = \"runs\"\nrun_id = \"r\"\nk = 4\nseed = 11\nparallelism = 3\n{extra}"
        );
        std::fs::write(self.config_path(), text).unwrap();
    }
}

pub const MOCK_BACKENDS: &str = "[backends.caption]\nurl = \"mock:\"\n[backends.inpaint]\nurl = \"mock:\"\n[backends.ground]\nurl = \"mock:noisy:0.08\"\n[backends.embed]\nurl = \"mock:\"\n";

/// `n` training samples with distinct texts and boxes; images are written
/// under `images/` and the manifest to `manifest.jsonl`.
pub fn fixture(n: usize) -> Fixture {
    let dir = tempfile::tempdir().unwrap();
    std::fs::create_dir_all(dir.path().join("images")).unwrap();
    let records: Vec<GroundingSample> = (0..n)
        .map(|i| {
            let size = ImageSize::new(40 + (i as u32 % 3) * 8, 30 + (i as u32 % 2) * 6);
            let w = 6.0 + (i % 5) as f64 * 2.0;
            let h = 5.0 + (i % 4) as f64 * 2.0;
            let cx = w / 2.0 + (i * 7 % 20) as f64;
            let cy = h / 2.0 + (i * 3 % 12) as f64;
            let image_path = format!("img{i:02}.png");
            std::fs::write(dir.path().join("images").join(&image_path), encode_png(&test_image(size, i as u64)))
                .unwrap();
            GroundingSample {
                id: format!("s{i:02}"),
                image_path,
                image_size: size,
                text: format!("object number {i}"),
                bbox: BBox::new(cx, cy, w, h).unwrap(),
                split: Split::Train,
            }
        })
        .collect();
    let manifest = Manifest { source_name: "manifest".into(), records };
    manifest.write(&dir.path().join("manifest.jsonl")).unwrap();
    let f = Fixture { dir, manifest };
    f.write_config(MOCK_BACKENDS);
    f
}

/// Every file under `root` with its bytes, keyed by relative path.
pub fn snapshot_tree(root: &Path) -> Vec<(String, Vec<u8>)> {
    let mut out = Vec::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        for entry in std::fs::read_dir(&dir).unwrap() {
            let path = entry.unwrap().path();
            if path.is_dir() {
                stack.push(path);
            } else {
                let rel = path.strip_prefix(root).unwrap().to_string_lossy().into_owned();
                out.push((rel, std::fs::read(&path).unwrap()));
            }
        }
    }
    out.sort();
    out
}

pub fn pobf_cmd(fixture: &Fixture) -> std::process::Command {
    let mut cmd = std::process::Command::new(env!("CARGO_BIN_EXE_pobf"));
    cmd.current_dir(fixture.root()).env_remove("POBF_BACKEND_URL").arg("--config").arg(fixture.config_path());
    cmd
}
