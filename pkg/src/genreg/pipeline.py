"""End-to-end orchestration: synthetic data generation, diffusion training,
per-pair registration in the four comparison modes, and evaluation.

Modes:
  geo-only                 FPFH -> NN -> RANSAC
  generative-fused         + coupled generation, color features, Eq.-style fusion
  independent-gen-ablation generative-fused with per-half (uncoupled) denoising
  xyz-rgb                  6D matching on [weighted xyz ; generated rgb]
"""

import json
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass

import numpy as np

from . import ingest, metrics, synth
from .core import CameraIntrinsics, PointCloud, RigidTransform, compose, invert
from .descriptor import FpfhExtractor, DescriptorSet
from .diffusion import (
    PROMPT_COUPLED,
    PROMPT_INDEPENDENT,
    Denoiser,
    SgdOptimizer,
    load_checkpoint,
    make_schedule,
    sample,
    save_checkpoint,
    train_autoencoder_step,
    train_step,
)
from .features import patch_feature_map
from .fusion import DescriptorFusion, normalize_rows
from .matching import DegeneracyError, RansacRegistration, icp, nn_correspondences
from .projection import colorize, couple_depths, lift_features

MODES = ("geo-only", "generative-fused", "xyz-rgb", "independent-gen-ablation")
GENERATIVE_MODES = ("generative-fused", "xyz-rgb", "independent-gen-ablation")


class MissingArtifactError(FileNotFoundError):
    pass


def default_intrinsics(size):
    return CameraIntrinsics(float(size), float(size), size / 2.0, size / 2.0, size, size)


def _require(path):
    if not os.path.exists(path):
        raise MissingArtifactError(f"missing artifact: {path}")
    return path


# ---------------------------------------------------------------- synth

def run_synth(cfg: ingest.RunConfig, out_dir, repetitive=True):
    """Generate cfg.n_pairs view pairs with full GT; returns the manifest."""
    os.makedirs(out_dir, exist_ok=True)
    intr = default_intrinsics(cfg.image_size)
    pair_spec = synth.ViewPairSpec(overlap=cfg.overlap, intrinsics=intr)
    pairs = []
    for i in range(cfg.n_pairs):
        scene = synth.make_scene(synth.SceneSpec(
            seed=cfg.seed * 100003 + i, density=cfg.points_per_m2,
            n_boxes=cfg.n_boxes, repetitive=repetitive,
        ))
        pair = synth.make_view_pair(scene, pair_spec, seed=cfg.seed)
        pid = f"pair_{i:04d}"
        pdir = os.path.join(out_dir, pid)
        os.makedirs(pdir, exist_ok=True)
        paths = {
            "cloud_p": os.path.join(pdir, "cloud_p.ply"),
            "cloud_q": os.path.join(pdir, "cloud_q.ply"),
            "depth_p": os.path.join(pdir, "depth_p.pgm"),
            "depth_q": os.path.join(pdir, "depth_q.pgm"),
            "image_p": os.path.join(pdir, "image_p.ppm"),
            "image_q": os.path.join(pdir, "image_q.ppm"),
            "pose_gt": os.path.join(pdir, "pose_gt.txt"),
        }
        ingest.save_ply(pair.cloud_p, paths["cloud_p"])
        ingest.save_ply(pair.cloud_q, paths["cloud_q"])
        ingest.save_depth(pair.depth_p, paths["depth_p"])
        ingest.save_depth(pair.depth_q, paths["depth_q"])
        ingest.save_image(pair.image_p, paths["image_p"])
        ingest.save_image(pair.image_q, paths["image_q"])
        ingest.save_pose(pair.transform_gt, paths["pose_gt"])
        pairs.append({"id": pid, "overlap": pair.overlap, "paths": paths})
    manifest = {
        "config_hash": cfg.hash(),
        "image_size": cfg.image_size,
        "seed": cfg.seed,
        "pairs": pairs,
    }
    write_manifest(manifest, os.path.join(out_dir, "manifest.json"))
    return manifest


def write_manifest(manifest, path):
    for pair in manifest["pairs"]:
        for p in pair["paths"].values():
            _require(p)
    with open(path, "w") as f:
        json.dump(manifest, f, indent=2, sort_keys=True)


def load_manifest(path):
    with open(_require(path)) as f:
        return json.load(f)


def run_make_corpus(cfg: ingest.RunConfig, out_dir):
    """Write the coupled-image training corpus as PPM/PGM stacks."""
    os.makedirs(out_dir, exist_ok=True)
    intr = default_intrinsics(cfg.image_size)
    items = synth.make_training_corpus(
        cfg.n_pairs,
        synth.SceneSpec(seed=cfg.seed, density=cfg.points_per_m2),
        synth.ViewPairSpec(overlap=cfg.overlap, intrinsics=intr),
        seed=cfg.seed,
    )
    for i, (image, depth) in enumerate(items):
        ingest.save_image(image, os.path.join(out_dir, f"item_{i:05d}_image.ppm"))
        stacked_intr = CameraIntrinsics(
            intr.fx, intr.fy, intr.cx, intr.cy, intr.width, intr.height * 2
        )
        from .projection import DepthMap
        ingest.save_depth(DepthMap(depth, stacked_intr),
                          os.path.join(out_dir, f"item_{i:05d}_depth.pgm"))
    return len(items)


def load_corpus(corpus_dir, image_size):
    stacked_intr = CameraIntrinsics(
        float(image_size), float(image_size), image_size / 2.0, image_size / 2.0,
        image_size, image_size * 2,
    )
    images, depths = [], []
    i = 0
    while True:
        ip = os.path.join(corpus_dir, f"item_{i:05d}_image.ppm")
        dp = os.path.join(corpus_dir, f"item_{i:05d}_depth.pgm")
        if not os.path.exists(ip):
            break
        images.append(ingest.load_image(ip))
        depths.append(ingest.load_depth(dp, stacked_intr).depths)
        i += 1
    if not images:
        raise MissingArtifactError(f"no corpus items under {corpus_dir}")
    return images, depths


# ---------------------------------------------------------------- training

def run_train(cfg: ingest.RunConfig, images, depths, out_checkpoint,
              ae_steps=300, ae_lr=2.0, mask_condition_only=False, resume=None,
              log_path=None):
    """Autoencoder warmup then denoiser training; returns the loss log.

    The log row format is (phase, step, loss). Deterministic per config;
    resuming from a checkpoint continues bit-identically.
    """
    sched = make_schedule(cfg.diffusion_steps, cfg.beta_start, cfg.beta_end)
    if resume is not None:
        denoiser, momentum, start_step = load_checkpoint(resume)
    else:
        denoiser = Denoiser(image_size=cfg.image_size,
                            latent_channels=cfg.latent_channels, seed=cfg.seed)
        momentum, start_step = {}, 0
    mask = denoiser.condition_parameter_names() if mask_condition_only else None
    ae_names = [n for n in denoiser.params if n.startswith("ae.")]
    ae_opt = SgdOptimizer(denoiser.params, lr=ae_lr, momentum=cfg.momentum, mask=ae_names)
    log = []
    if start_step == 0:
        for s in range(ae_steps):
            loss = train_autoencoder_step(denoiser, images, ae_opt, cfg.seed, s,
                                          batch_size=cfg.batch_size)
            log.append(("ae", s, loss))
    opt = SgdOptimizer(denoiser.params, lr=cfg.learning_rate, momentum=cfg.momentum,
                       mask=mask)
    for name, vel in momentum.items():
        if name in opt.velocity:
            opt.velocity[name] = vel.to(opt.velocity[name].dtype)
    for s in range(start_step, cfg.train_steps):
        loss = train_step(denoiser, sched, images, depths, opt, cfg.seed, s,
                          prompt_mode=PROMPT_COUPLED, batch_size=cfg.batch_size)
        log.append(("diffusion", s, loss))
    save_checkpoint(denoiser, opt, cfg.train_steps, out_checkpoint)
    if log_path:
        with open(log_path, "w") as f:
            for phase, s, loss in log:
                f.write(f"{phase} {s} {loss:.9g}\n")
    return log


# ---------------------------------------------------------------- registration

@dataclass(frozen=True)
class PairResult:
    pair_id: str
    rotation_deg: float
    translation_cm: float
    chamfer_mm: float
    inlier_ratio: float
    estimate: np.ndarray        # 4x4 pose matrix


def _load_pair(entry, image_size):
    intr = default_intrinsics(image_size)
    paths = entry["paths"]
    cloud_p = ingest.load_ply(_require(paths["cloud_p"]))
    cloud_q = ingest.load_ply(_require(paths["cloud_q"]))
    depth_p = ingest.load_depth(_require(paths["depth_p"]), intr)
    depth_q = ingest.load_depth(_require(paths["depth_q"]), intr)
    pose_gt = ingest.load_pose(_require(paths["pose_gt"]))
    return cloud_p, cloud_q, depth_p, depth_q, pose_gt


def generate_pair_images(depth_p, depth_q, denoiser, cfg, pair_seed, coupled=True):
    """Run the diffusion sampler conditioned on the coupled depth stack."""
    sched = make_schedule(cfg.diffusion_steps, cfg.beta_start, cfg.beta_end)
    stack = couple_depths(depth_p, depth_q).stacked()
    prompt = PROMPT_COUPLED if coupled else PROMPT_INDEPENDENT
    return sample(denoiser, sched, prompt, stack, seed=pair_seed, coupled=coupled)


def _color_descriptors(cloud, image, depth, dilations=(1, 3)):
    grid = patch_feature_map(image, dilations=dilations)
    feats, vis = lift_features(grid, depth, cloud)
    return DescriptorSet(feats, vis)


def register_pair(entry, mode, cfg: ingest.RunConfig, denoiser=None,
                  generated=None) -> PairResult:
    """Full per-pair registration in the requested mode.

    generated, when given, is (image_p, image_q) from a previous generate
    step; otherwise generative modes sample on the fly (denoiser required).
    """
    if mode not in MODES:
        raise ValueError(f"unknown mode {mode!r}; choose from {MODES}")
    cloud_p, cloud_q, depth_p, depth_q, pose_gt = _load_pair(entry, cfg.image_size)
    pair_seed = cfg.seed * 1000003 + int(entry["id"].split("_")[-1])
    if mode in GENERATIVE_MODES:
        if generated is None:
            if denoiser is None:
                raise MissingArtifactError(
                    f"mode {mode} needs a trained checkpoint or pre-generated images"
                )
            coupled = mode != "independent-gen-ablation"
            generated = generate_pair_images(depth_p, depth_q, denoiser, cfg,
                                             pair_seed, coupled=coupled)
        image_p, image_q = generated

    radius = cfg.fpfh_radius if cfg.fpfh_radius > 0 else None
    extractor = FpfhExtractor(radius=radius, normal_k=cfg.normal_k)
    if mode == "xyz-rgb":
        colored_p, _ = colorize(cloud_p, image_p, depth_p)
        colored_q, _ = colorize(cloud_q, image_q, depth_q)
        desc_p = DescriptorSet.from_array(
            np.hstack([cfg.xyz_weight * colored_p.points, colored_p.colors]))
        desc_q = DescriptorSet.from_array(
            np.hstack([cfg.xyz_weight * colored_q.points, colored_q.colors]))
    else:
        geo_p = extractor.transform(cloud_p)
        geo_q = extractor.transform(cloud_q)
        if cfg.normalize_fusion_inputs:
            # applied in every descriptor mode so the omega=1 fused control
            # stays row-for-row identical to geo-only under one config
            geo_p = DescriptorSet(normalize_rows(geo_p.data), geo_p.visible)
            geo_q = DescriptorSet(normalize_rows(geo_q.data), geo_q.visible)
        if mode == "geo-only":
            desc_p, desc_q = geo_p, geo_q
        else:
            dil = cfg.dilations()
            rgb_p = _color_descriptors(cloud_p, image_p, depth_p, dil)
            rgb_q = _color_descriptors(cloud_q, image_q, depth_q, dil)
            fuser = DescriptorFusion(weight=cfg.fusion_weight, color_dim=cfg.color_dim,
                                     normalize=bool(cfg.normalize_fusion_inputs))
            fuser.fit(rgb_p, rgb_q)
            desc_p = fuser.transform(geo_p, rgb_p)
            desc_q = fuser.transform(geo_q, rgb_q)

    corr = nn_correspondences(desc_p, desc_q, mutual=True)
    moved = pose_gt.transform_points(cloud_p.points[corr.source])
    resid = np.linalg.norm(moved - cloud_q.points[corr.target], axis=1)
    inlier_ratio = float(np.mean(resid < cfg.inlier_threshold)) if len(corr) else 0.0

    try:
        est = RansacRegistration(iters=cfg.ransac_iters, threshold=cfg.inlier_threshold,
                                 seed=pair_seed).fit(corr, cloud_p, cloud_q).transform_
    except DegeneracyError:
        # no consensus at all: report the identity pose and let the metrics
        # record the failure instead of aborting the whole run
        est = RigidTransform.identity()
    if cfg.icp_refine:
        est, _ = icp(cloud_p, cloud_q, init=est, threshold=cfg.inlier_threshold)

    rot_err = metrics.rotation_error(est.rotation, pose_gt.rotation)
    trans_err = metrics.translation_error(est.translation, pose_gt.translation)
    cham = metrics.chamfer(est.transform_points(cloud_p.points),
                           pose_gt.transform_points(cloud_p.points))
    return PairResult(entry["id"], rot_err, trans_err, cham, inlier_ratio, est.matrix())


def _register_worker(args):
    entry, mode, cfg, checkpoint_path, gen_paths = args
    denoiser = None
    if checkpoint_path is not None:
        denoiser, _, _ = load_checkpoint(checkpoint_path)
    generated = None
    if gen_paths is not None:
        generated = (ingest.load_image(_require(gen_paths[0])),
                     ingest.load_image(_require(gen_paths[1])))
    return register_pair(entry, mode, cfg, denoiser=denoiser, generated=generated)


def run_register(manifest, mode, cfg: ingest.RunConfig, checkpoint_path=None,
                 workers=1, out_dir=None, generated_dir=None):
    """Register every manifest pair; returns (EvalReport, results).

    Results are ordered by pair id regardless of worker count, so reports
    are byte-identical across pool sizes.
    """
    entries = sorted(manifest["pairs"], key=lambda e: e["id"])
    jobs = []
    for entry in entries:
        gen_paths = None
        if generated_dir is not None and mode in GENERATIVE_MODES:
            gen_paths = (os.path.join(generated_dir, f"{entry['id']}_gen_p.ppm"),
                         os.path.join(generated_dir, f"{entry['id']}_gen_q.ppm"))
        ckpt = checkpoint_path if (mode in GENERATIVE_MODES and gen_paths is None) else None
        jobs.append((entry, mode, cfg, ckpt, gen_paths))
    if workers <= 1:
        results = [_register_worker(j) for j in jobs]
    else:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_register_worker, jobs))
    results.sort(key=lambda r: r.pair_id)
    report = metrics.aggregate(
        [r.pair_id for r in results],
        [r.rotation_deg for r in results],
        [r.translation_cm for r in results],
        [r.chamfer_mm for r in results],
        inlier_ratio=[r.inlier_ratio for r in results],
        config_hash=cfg.hash(),
        mode=mode,
    )
    if out_dir is not None:
        os.makedirs(out_dir, exist_ok=True)
        for r in results:
            from .ingest import save_pose
            from .core import RigidTransform
            save_pose(RigidTransform.from_matrix(r.estimate),
                      os.path.join(out_dir, f"{r.pair_id}_pose.txt"))
        metrics.write_csv(report, os.path.join(out_dir, "report.csv"))
        with open(os.path.join(out_dir, "report.txt"), "w") as f:
            f.write(metrics.format_table(report))
    return report, results


def run_generate(manifest, cfg, checkpoint_path, out_dir, coupled=True):
    """Sample generated image pairs for every manifest pair."""
    os.makedirs(out_dir, exist_ok=True)
    denoiser, _, _ = load_checkpoint(checkpoint_path)
    intr = default_intrinsics(cfg.image_size)
    written = []
    for entry in sorted(manifest["pairs"], key=lambda e: e["id"]):
        depth_p = ingest.load_depth(_require(entry["paths"]["depth_p"]), intr)
        depth_q = ingest.load_depth(_require(entry["paths"]["depth_q"]), intr)
        pair_seed = cfg.seed * 1000003 + int(entry["id"].split("_")[-1])
        img_p, img_q = generate_pair_images(depth_p, depth_q, denoiser, cfg,
                                            pair_seed, coupled=coupled)
        pp = os.path.join(out_dir, f"{entry['id']}_gen_p.ppm")
        pq = os.path.join(out_dir, f"{entry['id']}_gen_q.ppm")
        ingest.save_image(img_p, pp)
        ingest.save_image(img_q, pq)
        written.append((pp, pq))
    return written


def run_eval(poses_dir, manifest, cfg):
    """Compare saved pose estimates against manifest GT."""
    intr = default_intrinsics(cfg.image_size)
    ids, rot, trans, cham = [], [], [], []
    for entry in sorted(manifest["pairs"], key=lambda e: e["id"]):
        pid = entry["id"]
        pose_path = os.path.join(poses_dir, f"{pid}_pose.txt")
        if not os.path.exists(pose_path):
            raise MissingArtifactError(f"missing pose estimate for pair id {pid}")
        est = ingest.load_pose(pose_path)
        gt = ingest.load_pose(_require(entry["paths"]["pose_gt"]))
        cloud_p = ingest.load_ply(_require(entry["paths"]["cloud_p"]))
        ids.append(pid)
        rot.append(metrics.rotation_error(est.rotation, gt.rotation))
        trans.append(metrics.translation_error(est.translation, gt.translation))
        cham.append(metrics.chamfer(est.transform_points(cloud_p.points),
                                    gt.transform_points(cloud_p.points)))
    return metrics.aggregate(ids, rot, trans, cham, config_hash=cfg.hash(), mode="eval")
