//! Shared fixtures: mock VLM transports, synthetic datasets and a local
//! HTTP server.
#![allow(dead_code)]

use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;
use std::thread::JoinHandle;
use std::time::Duration;

use image::{Rgb, RgbImage};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sema_core::cache::sha256_hex;
use sema_core::dataset::{write_manifest, Fixation, Scanpath, StimulusRecord};
use sema_core::vlm::prompts::SUMMARY_PROMPT_TEMPLATE;
use sema_core::vlm::{ChatRequest, TransportError, VlmTransport};

pub fn is_summary_prompt(prompt: &str) -> bool {
    prompt.starts_with(&SUMMARY_PROMPT_TEMPLATE[..60])
}

/// The ordered description texts embedded in a summary prompt.
pub fn fixation_list(prompt: &str) -> Vec<String> {
    let start = prompt.find('[').expect("list opens") + 1;
    let end = prompt.rfind(']').expect("list closes");
    prompt[start..end]
        .split("; ")
        .map(|item| match item.split_once(". ") {
            Some((n, rest)) if n.chars().all(|c| c.is_ascii_digit()) => rest.to_string(),
            _ => item.to_string(),
        })
        .collect()
}

fn seed_of(parts: &[&[u8]]) -> u64 {
    let mut buf = Vec::new();
    for p in parts {
        buf.extend_from_slice(&(p.len() as u64).to_le_bytes());
        buf.extend_from_slice(p);
    }
    u64::from_str_radix(&sha256_hex(&buf)[..16], 16).unwrap()
}

fn random_words(rng: &mut ChaCha8Rng, n: usize) -> String {
    (0..n)
        .map(|_| format!("w{}", rng.random_range(0..200u32)))
        .collect::<Vec<_>>()
        .join(" ")
}

/// Returns text that is a pseudo-random function of the request bytes, so
/// it carries no information about where the fixation was.
#[derive(Default)]
pub struct NullMock {
    pub calls: AtomicUsize,
}

impl VlmTransport for NullMock {
    fn chat(&self, req: &ChatRequest) -> Result<String, TransportError> {
        self.calls.fetch_add(1, Ordering::SeqCst);
        let mut rng = ChaCha8Rng::seed_from_u64(seed_of(&[req.prompt.as_bytes(), &req.image_png]));
        let n = if is_summary_prompt(&req.prompt) {
            rng.random_range(20..=40)
        } else {
            rng.random_range(5..=12)
        };
        Ok(random_words(&mut rng, n))
    }
}

/// Reads the grid cell encoded in the center pixel of the request image
/// (see [`cell_color`]) and answers `c{col}r{row}`. Summaries join the
/// listed descriptions in order.
#[derive(Default)]
pub struct CellMock {
    pub calls: AtomicUsize,
}

pub fn decode_cell(png: &[u8]) -> (u32, u32) {
    let img = image::load_from_memory(png).unwrap().to_rgb8();
    let p = img.get_pixel(img.width() / 2, img.height() / 2);
    ((u32::from(p[0]) - 8) / 16, (u32::from(p[1]) - 8) / 16)
}

impl VlmTransport for CellMock {
    fn chat(&self, req: &ChatRequest) -> Result<String, TransportError> {
        self.calls.fetch_add(1, Ordering::SeqCst);
        if is_summary_prompt(&req.prompt) {
            return Ok(fixation_list(&req.prompt).join(" "));
        }
        let (c, r) = decode_cell(&req.image_png);
        Ok(format!("c{c}r{r}"))
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ImageKind {
    /// 8x8 blocks of random colour.
    Noise,
    /// Each 14x8 grid cell filled with a colour encoding its (col, row).
    Cells,
    /// Like `Cells` but columns mirrored about the vertical axis share a code.
    MirroredCells,
    /// Like `Cells` with the column code rotated by the given amount.
    ShiftedCells(u32),
}

pub const COLS: u32 = 14;
pub const ROWS: u32 = 8;

pub fn cell_color(code_c: u32, r: u32) -> Rgb<u8> {
    Rgb([(code_c * 16 + 8) as u8, (r * 16 + 8) as u8, 128])
}

pub fn make_image(kind: ImageKind, w: u32, h: u32, seed: u64) -> RgbImage {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let blocks: Vec<[u8; 3]> = (0..w.div_ceil(8) * h.div_ceil(8))
        .map(|_| [rng.random(), rng.random(), rng.random()])
        .collect();
    RgbImage::from_fn(w, h, |x, y| {
        let c = x * COLS / w;
        let r = y * ROWS / h;
        match kind {
            ImageKind::Noise => Rgb(blocks[((y / 8) * w.div_ceil(8) + x / 8) as usize]),
            ImageKind::Cells => cell_color(c, r),
            ImageKind::MirroredCells => cell_color(c.min(COLS - 1 - c), r),
            ImageKind::ShiftedCells(k) => cell_color((c + k) % COLS, r),
        }
    })
}

/// Normalized coordinate of the center of pixel `p`.
pub fn norm(p: u32, extent: u32) -> f64 {
    (f64::from(p) + 0.5) / f64::from(extent)
}

/// A fixation at pixel `(px, py)`.
pub fn fix_px(px: u32, py: u32, w: u32, h: u32, dur: f64) -> Fixation {
    Fixation::new(norm(px, w), norm(py, h), dur)
}

/// Uniformly placed fixations at least `margin` pixels from every edge.
pub fn uniform_scanpath(rng: &mut ChaCha8Rng, n: usize, w: u32, h: u32, margin: u32) -> Vec<Fixation> {
    (0..n)
        .map(|_| {
            fix_px(
                rng.random_range(margin..w - margin),
                rng.random_range(margin..h - margin),
                w,
                h,
                rng.random_range(80.0..600.0),
            )
        })
        .collect()
}

/// Fixations scattered around `center` (pixels) by up to `spread`, clamped
/// to the margin.
pub fn clustered_scanpath(
    rng: &mut ChaCha8Rng,
    n: usize,
    center: (u32, u32),
    spread: u32,
    w: u32,
    h: u32,
    margin: u32,
) -> Vec<Fixation> {
    let jitter = |rng: &mut ChaCha8Rng, c: u32, extent: u32| -> u32 {
        let v = i64::from(c) + rng.random_range(-i64::from(spread)..=i64::from(spread));
        v.clamp(i64::from(margin), i64::from(extent - margin - 1)) as u32
    };
    (0..n)
        .map(|_| {
            let px = jitter(rng, center.0, w);
            let py = jitter(rng, center.1, h);
            fix_px(px, py, w, h, rng.random_range(80.0..600.0))
        })
        .collect()
}

/// Writes one PNG per image plus `manifest.json` into `dir`. `scanpaths`
/// gets the image index and returns that image's scanpaths; subjects are
/// named `s0`, `s1`, ...
pub fn write_dataset(
    dir: &Path,
    n_images: usize,
    w: u32,
    h: u32,
    kind: impl Fn(usize) -> ImageKind,
    mut scanpaths: impl FnMut(usize) -> Vec<Vec<Fixation>>,
) -> PathBuf {
    std::fs::create_dir_all(dir).unwrap();
    let records: Vec<StimulusRecord> = (0..n_images)
        .map(|i| {
            let image_id = format!("img{i:03}");
            let path = dir.join(format!("{image_id}.png"));
            make_image(kind(i), w, h, i as u64).save(&path).unwrap();
            StimulusRecord {
                image_id,
                image_path: path,
                width_px: w,
                height_px: h,
                scanpaths: scanpaths(i)
                    .into_iter()
                    .enumerate()
                    .map(|(k, f)| Scanpath::new(format!("s{k}"), f))
                    .collect(),
            }
        })
        .collect();
    let manifest = dir.join("manifest.json");
    write_manifest(&records, &manifest).unwrap();
    manifest
}

pub type Handler = dyn Fn(&str, &str) -> (u16, String) + Send + Sync;

/// Local HTTP server answering every request with `handler(url, body)`.
pub struct MockServer {
    server: Arc<tiny_http::Server>,
    workers: Vec<JoinHandle<()>>,
    pub requests: Arc<AtomicUsize>,
    pub url: String,
}

impl MockServer {
    pub fn start(n_workers: usize, delay: Duration, handler: Arc<Handler>) -> Self {
        let server = Arc::new(tiny_http::Server::http("127.0.0.1:0").unwrap());
        let port = server.server_addr().to_ip().unwrap().port();
        let requests = Arc::new(AtomicUsize::new(0));
        let workers = (0..n_workers)
            .map(|_| {
                let server = Arc::clone(&server);
                let requests = Arc::clone(&requests);
                let handler = Arc::clone(&handler);
                std::thread::spawn(move || {
                    while let Ok(mut rq) = server.recv() {
                        requests.fetch_add(1, Ordering::SeqCst);
                        let mut body = String::new();
                        let _ = rq.as_reader().read_to_string(&mut body);
                        if !delay.is_zero() {
                            std::thread::sleep(delay);
                        }
                        let (status, text) = handler(rq.url(), &body);
                        let resp = tiny_http::Response::from_string(text)
                            .with_status_code(status)
                            .with_header(
                                "Content-Type: application/json"
                                    .parse::<tiny_http::Header>()
                                    .unwrap(),
                            );
                        let _ = rq.respond(resp);
                    }
                })
            })
            .collect();
        Self {
            server,
            workers,
            requests,
            url: format!("http://127.0.0.1:{port}"),
        }
    }

    pub fn count(&self) -> usize {
        self.requests.load(Ordering::SeqCst)
    }
}

impl Drop for MockServer {
    fn drop(&mut self) {
        for _ in &self.workers {
            self.server.unblock();
        }
        for w in self.workers.drain(..) {
            let _ = w.join();
        }
    }
}


/// Wraps `text` as a chat-completions response body.
pub fn completion_body(text: &str) -> String {
    serde_json::json!({
        "choices": [{"index": 0, "message": {"role": "assistant", "content": text}}]
    })
    .to_string()
}

/// A chat-completions handler whose answer is a deterministic function of
/// the request body.
pub fn deterministic_chat_handler() -> Arc<Handler> {
    Arc::new(|_url: &str, body: &str| {
        let mut rng = ChaCha8Rng::seed_from_u64(seed_of(&[body.as_bytes()]));
        (200, completion_body(&random_words(&mut rng, 8)))
    })
}

/// Every file under `root` keyed by its relative path.
pub fn snapshot(root: &Path) -> std::collections::BTreeMap<PathBuf, Vec<u8>> {
    let mut out = std::collections::BTreeMap::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in std::fs::read_dir(&d).unwrap().flatten() {
            let p = e.path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.insert(p.strip_prefix(root).unwrap().to_path_buf(), std::fs::read(&p).unwrap());
            }
        }
    }
    out
}
