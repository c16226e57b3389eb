use std::fs;
use std::path::{Path, PathBuf};

use earmesh::colour_builder::{assemble_colour_model, sample_item};
use earmesh::dataset::io::{load_manifest, read_pts, to_frame, write_pts, LoadedItem, Manifest, ManifestItem};
use earmesh::dataset::synthetic::{generate_synthetic_model, render_item};
use earmesh::dataset::{augment as augment_item, save_corpus, AnnotatedImage};
use earmesh::evaluation::{draw_overlay, emit_report, evaluate_with, Overlay};
use earmesh::fitting::fit_image;
use earmesh::fitting::landmark_loss;
use earmesh::{CodeVector, Decoder, Error, FitReport, Image, ModelBundle, RasterConfig, RasterOutput};
use rayon::prelude::*;
use serde::Serialize;

use crate::config::{required, resolve_seed, set, set_opt, to_toml, AugmentCmdConfig, ColourConfig, EvalConfig, FitConfig, RenderConfig, SynthConfig};
use crate::{AugmentArgs, ColourArgs, EvalArgs, Failure, FitArgs, RenderArgs, SynthArgs};

fn create_dir(dir: &Path) -> Result<(), Failure> {
    fs::create_dir_all(dir).map_err(|e| Failure::data(format!("{}: {e}", dir.display())))
}

fn write_text(path: &Path, text: &str) -> Result<(), Failure> {
    fs::write(path, text).map_err(|e| Failure::data(format!("{}: {e}", path.display())))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), Failure> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| Failure::data(format!("{}: {e}", path.display())))?;
    text.push('\n');
    write_text(path, &text)
}

/// Prints the resolved configuration and records it in `out/config.toml`.
fn echo_config<T: Serialize>(name: &str, cfg: &T, out: &Path) -> Result<(), Failure> {
    let text = to_toml(name, cfg)?;
    print!("{text}");
    create_dir(out)?;
    write_text(&out.join("config.toml"), &text)
}

fn read_model(path: &Path) -> Result<ModelBundle, Failure> {
    let bundle = ModelBundle::read(path)?;
    if bundle.colour.is_none() {
        return Err(Failure::data(format!(
            "{}: model has no colour component (run build-colour-model first)",
            path.display()
        )));
    }
    Ok(bundle)
}

fn decoder(bundle: &ModelBundle, raster: RasterConfig) -> Result<Decoder<'_>, Failure> {
    let colour = bundle.colour.as_ref().expect("checked by read_model");
    Ok(Decoder::new(&bundle.shape, colour, raster)?)
}

pub fn synth(mut cfg: SynthConfig, a: SynthArgs, top_seed: Option<u64>) -> Result<(), Failure> {
    let seed = resolve_seed(&mut cfg.seed, a.seed, top_seed);
    set_opt(&mut cfg.out, a.out);
    set(&mut cfg.count, a.count);
    set(&mut cfg.width, a.width);
    set(&mut cfg.height, a.height);
    set(&mut cfg.model.n_vertices, a.vertices);
    set(&mut cfg.model.k_full, a.k_full);
    set(&mut cfg.model.k_white, a.k_white);
    set(&mut cfg.model.k_colour, a.k_colour);
    set(&mut cfg.noise.param_sigma, a.param_sigma);
    set(&mut cfg.noise.pixel_sigma, a.pixel_sigma);
    set(&mut cfg.noise.landmark_sigma, a.landmark_sigma);
    let out = required(&cfg.out, "--out")?.to_path_buf();
    if cfg.count == 0 {
        return Err(Failure::usage("--count must be at least 1"));
    }
    let n = &cfg.noise;
    if [n.param_sigma, n.pixel_sigma, n.landmark_sigma]
        .iter()
        .any(|s| !(s.is_finite() && *s >= 0.0))
    {
        return Err(Failure::usage("noise levels must be finite and non-negative"));
    }
    echo_config("synth", &cfg, &out)?;

    let bundle = generate_synthetic_model(&cfg.model, seed)?;
    bundle.write(out.join("model.earm"))?;
    let dec = decoder(&bundle, RasterConfig::with_size(cfg.width, cfg.height))?;
    // The model generator draws from `seed`'s first stream; the corpus uses the next seed.
    let corpus_seed = seed.wrapping_add(1);
    let items = (0..cfg.count)
        .into_par_iter()
        .map(|i| render_item(&dec, &cfg.noise, corpus_seed, i))
        .collect::<earmesh::Result<Vec<_>>>()?;
    save_corpus(&items, &out)?;
    eprintln!("wrote {} items to {}", items.len(), out.display());
    Ok(())
}

/// Per-item fit output.
#[derive(Serialize)]
struct FitOutput {
    id: String,
    /// Normalised landmark error against the supplied landmarks, if any.
    landmark_loss: Option<f64>,
    diverged: bool,
    fit: FitReport,
}

/// The render blended at 50% over the frame where the mask covers it, with
/// the projected landmarks marked.
fn overlay(frame: &Image, render: &RasterOutput, landmarks: &[[f64; 2]]) -> Image {
    let (w, h) = frame.dims();
    let blended = Image::from_fn(w, h, |x, y| {
        let m = 0.5 * render.mask[y * w + x];
        let (a, b) = (frame.pixel(x, y), render.image.pixel(x, y));
        [0, 1, 2].map(|c| (1.0 - m) * a[c] + m * b[c])
    });
    draw_overlay(&blended, landmarks)
}

/// Fits one item and writes code.json, report.json, overlay.png and
/// landmarks.pts (original image coordinates) into `dir`. Returns whether the
/// fit diverged.
fn fit_one(
    dec: &Decoder<'_>,
    cfg: &FitConfig,
    item: &AnnotatedImage,
    crop: Option<[f64; 4]>,
    has_landmarks: bool,
    dir: &Path,
) -> Result<bool, Failure> {
    let w = cfg.weights()?;
    let (frame, t) = to_frame(item, crop, cfg.width, cfg.height)?;
    let gt = (w.landmark > 0.0).then_some(frame.landmarks.as_slice());
    let (report, diverged) = match fit_image(dec, &frame.image, gt, &w, &cfg.lm, &cfg.adam) {
        Ok(r) => (r, false),
        Err(Error::Diverged(r)) => (*r, true),
        Err(e) => return Err(e.into()),
    };
    let predicted = dec.landmarks(&report.code)?;
    let original: Vec<[f64; 2]> = predicted.iter().map(|&p| t.to_original(p)).collect();
    let error = if has_landmarks {
        Some(landmark_loss(&original, &item.landmarks)?)
    } else {
        None
    };
    let render = dec.render(&report.code)?;
    create_dir(dir)?;
    write_json(&dir.join("code.json"), &report.code)?;
    overlay(&frame.image, &render, &predicted).write_png(dir.join("overlay.png"))?;
    write_pts(dir.join("landmarks.pts"), &original)?;
    write_json(
        &dir.join("report.json"),
        &FitOutput {
            id: item.id.clone(),
            landmark_loss: error,
            diverged,
            fit: report,
        },
    )?;
    Ok(diverged)
}

pub fn fit(mut cfg: FitConfig, a: FitArgs, top_seed: Option<u64>) -> Result<(), Failure> {
    resolve_seed(&mut cfg.seed, a.seed, top_seed);
    set_opt(&mut cfg.model, a.model);
    set_opt(&mut cfg.out, a.out);
    if a.image.is_some() || a.manifest.is_some() {
        cfg.image = a.image;
        cfg.landmarks = a.landmarks;
        cfg.manifest = a.manifest;
    }
    set(&mut cfg.preset, a.preset);
    set_opt(&mut cfg.lambda_pix, a.lambda_pix);
    set_opt(&mut cfg.lambda_lm, a.lambda_lm);
    set_opt(&mut cfg.lambda_reg1, a.lambda_reg1);
    set_opt(&mut cfg.lambda_reg2, a.lambda_reg2);
    set(&mut cfg.width, a.width);
    set(&mut cfg.height, a.height);
    set(&mut cfg.edge_sigma, a.edge_sigma);
    set(&mut cfg.adam.max_iterations, a.iterations);
    set(&mut cfg.adam.learning_rate, a.learning_rate);

    let out = required(&cfg.out, "--out")?.to_path_buf();
    let model_path = required(&cfg.model, "--model")?.to_path_buf();
    let w = cfg.weights()?;
    cfg.adam.validate()?;
    let single = match (&cfg.image, &cfg.manifest) {
        (Some(_), Some(_)) => return Err(Failure::usage("give either --image or --manifest, not both")),
        (None, None) => return Err(Failure::usage("missing --image or --manifest")),
        (Some(image), None) => {
            if w.landmark > 0.0 && cfg.landmarks.is_none() {
                return Err(Failure::usage(format!(
                    "preset {:?} needs --landmarks (or use --preset without-landmarks)",
                    cfg.preset
                )));
            }
            Some(image.clone())
        }
        (None, Some(_)) => None,
    };
    if let Some(p) = &cfg.landmarks {
        if w.landmark > 0.0 && !p.is_file() {
            return Err(Failure::usage(format!("landmark file {} does not exist", p.display())));
        }
    }
    echo_config("fit", &cfg, &out)?;

    let bundle = read_model(&model_path)?;
    let raster = RasterConfig {
        edge_sigma: cfg.edge_sigma,
        ..RasterConfig::with_size(cfg.width, cfg.height)
    };
    let dec = decoder(&bundle, raster)?;

    let diverged = match single {
        Some(image_path) => {
            let image = Image::read_png(&image_path)?;
            let landmarks = match &cfg.landmarks {
                Some(p) => read_pts(p)?,
                None => Vec::new(),
            };
            let has = !landmarks.is_empty();
            let id = image_path
                .file_stem()
                .map_or_else(|| "image".to_string(), |s| s.to_string_lossy().into_owned());
            let item = AnnotatedImage {
                id,
                image,
                landmarks,
                gt: None,
            };
            let diverged = fit_one(&dec, &cfg, &item, None, has, &out)?;
            usize::from(diverged)
        }
        None => {
            let manifest_path = cfg.manifest.clone().expect("batch mode");
            let items = load_manifest(&manifest_path)?;
            let results = items
                .par_iter()
                .map(|LoadedItem { item, crop }| fit_one(&dec, &cfg, item, *crop, true, &out.join(&item.id)))
                .collect::<Result<Vec<bool>, Failure>>()?;
            let entries = items
                .iter()
                .map(|l| ManifestItem {
                    id: l.item.id.clone(),
                    image: PathBuf::from(&l.item.id).join("overlay.png"),
                    landmarks: PathBuf::from(&l.item.id).join("landmarks.pts"),
                    crop: None,
                    gt_code: None,
                })
                .collect();
            Manifest::new(entries).write(out.join("manifest.json"))?;
            results.iter().filter(|d| **d).count()
        }
    };
    if diverged > 0 {
        return Err(Failure::diverged(format!(
            "{diverged} fit(s) diverged; best-so-far states were written"
        )));
    }
    Ok(())
}

pub fn build_colour_model(mut cfg: ColourConfig, a: ColourArgs, top_seed: Option<u64>) -> Result<(), Failure> {
    resolve_seed(&mut cfg.seed, a.seed, top_seed);
    set_opt(&mut cfg.model, a.model);
    set_opt(&mut cfg.manifest, a.manifest);
    set_opt(&mut cfg.out, a.out);
    set(&mut cfg.k, a.k);
    let out = required(&cfg.out, "--out")?.to_path_buf();
    let model_path = required(&cfg.model, "--model")?.to_path_buf();
    let manifest = required(&cfg.manifest, "--manifest")?.to_path_buf();
    if cfg.k == 0 {
        return Err(Failure::usage("--k must be at least 1"));
    }
    echo_config("build-colour-model", &cfg, &out)?;

    let mut bundle = ModelBundle::read(&model_path)?;
    let items = load_manifest(&manifest)?;
    let results = items
        .par_iter()
        .map(|l| {
            let sample = match l.crop {
                Some(c) => to_frame(&l.item, Some(c), c[2].round().max(1.0) as usize, c[3].round().max(1.0) as usize)
                    .and_then(|(f, _)| sample_item(&bundle.shape, &f, &cfg.lm)),
                None => sample_item(&bundle.shape, &l.item, &cfg.lm),
            };
            (l.item.id.clone(), sample)
        })
        .collect();
    let (colour, report) = assemble_colour_model(results, cfg.k)?;
    bundle.colour = Some(colour);
    bundle.write(out.join("model.earm"))?;
    write_json(&out.join("colour_report.json"), &report)?;
    eprintln!(
        "colour model: k = {} from {} images, coverage {:.4}",
        report.k, report.images_used, report.coverage
    );
    Ok(())
}

pub fn augment(mut cfg: AugmentCmdConfig, a: AugmentArgs, top_seed: Option<u64>) -> Result<(), Failure> {
    let seed = resolve_seed(&mut cfg.seed, a.seed, top_seed);
    set_opt(&mut cfg.manifest, a.manifest);
    set_opt(&mut cfg.out, a.out);
    set(&mut cfg.count, a.count);
    set(&mut cfg.range, a.range);
    set(&mut cfg.lobe_index, a.lobe_index);
    set(&mut cfg.helix_index, a.helix_index);
    let out = required(&cfg.out, "--out")?.to_path_buf();
    let manifest = required(&cfg.manifest, "--manifest")?.to_path_buf();
    if cfg.count == 0 {
        return Err(Failure::usage("--count must be at least 1"));
    }
    echo_config("augment", &cfg, &out)?;

    let items = load_manifest(&manifest)?;
    let aug = cfg.augment_config();
    let outputs = items
        .par_iter()
        .enumerate()
        .map(|(i, l)| augment_item(&l.item, &aug, seed.wrapping_add(i as u64)))
        .collect::<earmesh::Result<Vec<_>>>()?;
    let outputs: Vec<AnnotatedImage> = outputs.into_iter().flatten().collect();
    save_corpus(&outputs, &out)?;
    eprintln!("wrote {} rotated items to {}", outputs.len(), out.display());
    Ok(())
}

pub fn eval(mut cfg: EvalConfig, a: EvalArgs, top_seed: Option<u64>) -> Result<(), Failure> {
    resolve_seed(&mut cfg.seed, a.seed, top_seed);
    set_opt(&mut cfg.pred, a.pred);
    set_opt(&mut cfg.gt, a.gt);
    set_opt(&mut cfg.out, a.out);
    set(&mut cfg.thresholds, a.thresholds);
    cfg.overlays |= a.overlays;
    let out = required(&cfg.out, "--out")?.to_path_buf();
    let pred_path = required(&cfg.pred, "--pred")?.to_path_buf();
    let gt_path = required(&cfg.gt, "--gt")?.to_path_buf();
    echo_config("eval", &cfg, &out)?;

    let pred = load_manifest(&pred_path)?;
    let gt = load_manifest(&gt_path)?;
    let mut predictions = Vec::with_capacity(gt.len());
    for g in &gt {
        let p = pred
            .iter()
            .find(|p| p.item.id == g.item.id)
            .ok_or_else(|| Failure::data(format!("no prediction for {}", g.item.id)))?;
        predictions.push(p.item.landmarks.clone());
    }
    let truth: Vec<Vec<[f64; 2]>> = gt.iter().map(|g| g.item.landmarks.clone()).collect();
    let ids = gt.iter().map(|g| g.item.id.clone()).collect();
    let report = evaluate_with(&predictions, &truth, ids, &cfg.thresholds)?;
    let overlays: Vec<Overlay<'_>> = if cfg.overlays {
        gt.iter()
            .zip(&predictions)
            .map(|(g, p)| Overlay {
                id: &g.item.id,
                image: &g.item.image,
                points: p,
            })
            .collect()
    } else {
        Vec::new()
    };
    emit_report(&report, &out, &overlays)?;
    eprintln!(
        "{} items: mean {:.4}, std {:.4}, median {:.4}",
        report.errors.len(),
        report.mean,
        report.std,
        report.median
    );
    Ok(())
}

pub fn render(mut cfg: RenderConfig, a: RenderArgs, top_seed: Option<u64>) -> Result<(), Failure> {
    resolve_seed(&mut cfg.seed, a.seed, top_seed);
    set_opt(&mut cfg.model, a.model);
    set_opt(&mut cfg.code, a.code);
    set_opt(&mut cfg.out, a.out);
    set(&mut cfg.width, a.width);
    set(&mut cfg.height, a.height);
    set(&mut cfg.edge_sigma, a.edge_sigma);
    let out = required(&cfg.out, "--out")?.to_path_buf();
    let model_path = required(&cfg.model, "--model")?.to_path_buf();
    echo_config("render", &cfg, &out)?;

    let bundle = read_model(&model_path)?;
    let raster = RasterConfig {
        edge_sigma: cfg.edge_sigma,
        ..RasterConfig::with_size(cfg.width, cfg.height)
    };
    let dec = decoder(&bundle, raster)?;
    let code: CodeVector = match &cfg.code {
        Some(p) => {
            let text = fs::read_to_string(p).map_err(|e| Failure::data(format!("{}: {e}", p.display())))?;
            serde_json::from_str(&text).map_err(|e| Failure::data(format!("{}: {e}", p.display())))?
        }
        None => dec.zero_code(),
    };
    dec.render(&code)?.image.write_png(out.join("render.png"))?;
    Ok(())
}
