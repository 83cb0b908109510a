use std::path::{Path, PathBuf};

use super::run::{GateWindow, TrainState, GATE_WINDOW_CAP};
use super::{BatchSampler, SamplerSnapshot, TrainConfig, TrainError};
use crate::nets::{
    build_discriminator, BlobReader, BlobWriter, CheckpointError, CheckpointSidecar,
    GeneratorBackbone,
};
use crate::nn::{Adam, RngSnapshot, Sgd};

fn blob_path(dir: &Path, tag: &str) -> PathBuf {
    dir.join(format!("ckpt_{tag}.bin"))
}

fn sidecar_path(dir: &Path, tag: &str) -> PathBuf {
    dir.join(format!("ckpt_{tag}.json"))
}

fn json_bytes<T: serde::Serialize>(v: &T) -> Vec<u8> {
    serde_json::to_vec(v).expect("serializable state")
}

fn from_json_bytes<T: serde::de::DeserializeOwned>(
    bytes: &[u8],
    what: &str,
) -> Result<T, CheckpointError> {
    serde_json::from_slice(bytes)
        .map_err(|e| CheckpointError::Malformed(format!("{what}: {e}")))
}

/// Writes `ckpt_<tag>.bin` + `ckpt_<tag>.json` capturing the complete
/// training state: both networks, both optimizer states, every RNG, the
/// sampler positions, and the gate window. Returns the blob path.
pub fn save_checkpoint<B: GeneratorBackbone>(
    state: &mut TrainState<B>,
    dir: &Path,
    tag: &str,
) -> Result<PathBuf, TrainError> {
    let mut blob = BlobWriter::new();
    blob.put_u64("iteration", state.iteration as u64);
    blob.put_u64("has_disc", u64::from(state.discriminator.is_some()));

    state.generator.visit_params(&mut |name, p| {
        blob.put_tensor(&format!("gen/{name}"), p.value_slice());
    });
    let gen_vel = state.gen_opt.state();
    blob.put_u64("gen_opt/len", gen_vel.len() as u64);
    for (i, v) in gen_vel.iter().enumerate() {
        blob.put_tensor(&format!("gen_opt/v{i}"), v);
    }

    if let Some(disc) = state.discriminator.as_mut() {
        disc.visit_params(&mut |name, p| {
            blob.put_tensor(&format!("disc/{name}"), p.value_slice());
        });
        let (m, v) = state.disc_opt.state();
        blob.put_u64("disc_opt/t", state.disc_opt.timestep());
        blob.put_u64("disc_opt/len", m.len() as u64);
        for (i, t) in m.iter().enumerate() {
            blob.put_tensor(&format!("disc_opt/m{i}"), t);
        }
        for (i, t) in v.iter().enumerate() {
            blob.put_tensor(&format!("disc_opt/v{i}"), t);
        }
    }

    blob.put_bytes(
        "rng/dropout",
        &json_bytes(&RngSnapshot::capture(&state.dropout_rng)),
    );
    blob.put_bytes("sampler/labeled", &json_bytes(&state.labeled_sampler.snapshot()));
    if let Some(s) = &state.unlabeled_sampler {
        blob.put_bytes("sampler/unlabeled", &json_bytes(&s.snapshot()));
    }
    blob.put_bytes("gate_window", &json_bytes(&state.gate_window.snapshot()));

    let disc_arch = state.discriminator.as_ref().map(|d| d.arch_meta());
    let disc_count = state.discriminator.as_ref().map(|d| d.param_count());
    let path = blob_path(dir, tag);
    let digest = blob.write_to(&path)?;
    let sidecar = CheckpointSidecar {
        format_version: 1,
        iteration: state.iteration as u64,
        generator_arch: state.generator.arch_meta(),
        discriminator_arch: disc_arch,
        generator_param_count: state.generator.param_count(),
        discriminator_param_count: disc_count,
        content_sha256: digest,
    };
    sidecar.write_to(&sidecar_path(dir, tag))?;
    Ok(path)
}

fn load_params(
    reader: &BlobReader,
    prefix: &str,
    visit: &mut dyn FnMut(&mut dyn FnMut(&str, &mut crate::nn::Param)),
) -> Result<(), CheckpointError> {
    let mut err: Option<CheckpointError> = None;
    visit(&mut |name, p| {
        if err.is_some() {
            return;
        }
        match reader.tensor(&format!("{prefix}/{name}")) {
            Ok(data) => {
                let (v, _) = p.slices_mut();
                if v.len() != data.len() {
                    err = Some(CheckpointError::Malformed(format!(
                        "{prefix}/{name}: {} values on disk, {} expected",
                        data.len(),
                        v.len()
                    )));
                } else {
                    v.copy_from_slice(data);
                }
            }
            Err(e) => err = Some(e),
        }
    });
    match err {
        Some(e) => Err(e),
        None => Ok(()),
    }
}

fn load_opt_tensors(
    reader: &BlobReader,
    len_key: &str,
    fmt: impl Fn(usize) -> String,
) -> Result<Vec<Vec<f32>>, CheckpointError> {
    let n = reader.scalar(len_key)? as usize;
    let mut out = Vec::with_capacity(n);
    for i in 0..n {
        out.push(reader.tensor(&fmt(i))?.to_vec());
    }
    Ok(out)
}

/// Restores a complete training state from `ckpt_<tag>` in `dir`. The
/// sidecar hash gates the load; `generator` supplies the architecture and
/// is filled in place.
pub fn load_train_state<B: GeneratorBackbone>(
    dir: &Path,
    tag: &str,
    cfg: &TrainConfig,
    mut generator: B,
) -> Result<TrainState<B>, TrainError> {
    let sidecar = CheckpointSidecar::read_from(&sidecar_path(dir, tag))?;
    let reader = sidecar.verify_blob(&blob_path(dir, tag))?;

    load_params(&reader, "gen", &mut |f| generator.visit_params(f))?;
    let mut gen_opt = Sgd::new(
        cfg.gen_lr as f32,
        cfg.gen_momentum as f32,
        cfg.gen_weight_decay as f32,
    );
    gen_opt.restore(load_opt_tensors(&reader, "gen_opt/len", |i| {
        format!("gen_opt/v{i}")
    })?);

    let has_disc = reader.scalar("has_disc")? != 0;
    let mut disc_opt = Adam::new(
        cfg.disc_lr as f32,
        cfg.disc_betas.0 as f32,
        cfg.disc_betas.1 as f32,
    );
    let discriminator = if has_disc {
        let mut disc = build_discriminator(1 + generator.n_classes(), cfg.seed)?;
        load_params(&reader, "disc", &mut |f| disc.visit_params(f))?;
        let t = reader.scalar("disc_opt/t")?;
        let m = load_opt_tensors(&reader, "disc_opt/len", |i| format!("disc_opt/m{i}"))?;
        let v = load_opt_tensors(&reader, "disc_opt/len", |i| format!("disc_opt/v{i}"))?;
        disc_opt.restore(t, m, v);
        Some(disc)
    } else {
        None
    };

    let dropout: RngSnapshot = from_json_bytes(reader.bytes("rng/dropout")?, "rng/dropout")?;
    let labeled: SamplerSnapshot =
        from_json_bytes(reader.bytes("sampler/labeled")?, "sampler/labeled")?;
    let unlabeled_sampler = if reader.has("sampler/unlabeled") {
        let snap: SamplerSnapshot =
            from_json_bytes(reader.bytes("sampler/unlabeled")?, "sampler/unlabeled")?;
        Some(BatchSampler::restore(&snap))
    } else {
        None
    };
    let gate: Vec<(u32, u32)> = from_json_bytes(reader.bytes("gate_window")?, "gate_window")?;

    Ok(TrainState {
        iteration: reader.scalar("iteration")? as usize,
        generator,
        discriminator,
        gen_opt,
        disc_opt,
        dropout_rng: dropout.restore(),
        labeled_sampler: BatchSampler::restore(&labeled),
        unlabeled_sampler,
        gate_window: GateWindow::restore(GATE_WINDOW_CAP, gate),
    })
}
