"""Experiment pipeline: dataset -> partition -> federated DPGAN -> augmentation -> classifier."""

import hashlib
import json
import logging
from contextlib import contextmanager
from pathlib import Path
from typing import Any, Iterator, Optional, Union

import numpy as np
from pydantic import ValidationError

from fed_dpgan import seeds
from fed_dpgan.classifier import (
    ClassifierConfig,
    default_classifier_spec,
    evaluate_accuracy,
    evaluate_loss,
    train_centralized,
)
from fed_dpgan.config import get_settings
from fed_dpgan.data import (
    LabeledDataset,
    PartitionPlan,
    augment_with_fakes,
    minority_shard,
    partition,
    synth_dataset,
    train_test_split,
    write_samples,
)
from fed_dpgan.errors import ConfigError, ExperimentError, FedDPGANError
from fed_dpgan.federated import (
    ClassifierClient,
    GanClient,
    GlobalModelState,
    TrainingConfig,
    run_training,
    save_state,
)
from fed_dpgan.gan import GanConfig, sample_generator
from fed_dpgan.nn import init_params
from fed_dpgan.privacy import privacy_summary
from fed_dpgan.schemas import ExperimentConfig, ExperimentReport, RoundRecord
from fed_dpgan.services.reports import write_metrics, write_summary

logger = logging.getLogger(__name__)

SAMPLE_DUMP_SIZE = 100


# ─────────────────────────────────────────────────────────────────────────────
# Configuration documents
# ─────────────────────────────────────────────────────────────────────────────


def _validate(raw: Any) -> ExperimentConfig:
    if not isinstance(raw, dict):
        raise ConfigError("the config document must be a JSON object")
    try:
        return ExperimentConfig.model_validate(raw)
    except ValidationError as e:
        error = e.errors()[0]
        key_path = ".".join(str(part) for part in error["loc"])
        raise ConfigError(error["msg"], key_path) from e


def parse_config(text: str) -> ExperimentConfig:
    """Validate a JSON document; an empty document gives every default."""
    text = text.strip()
    try:
        raw = json.loads(text) if text else {}
    except json.JSONDecodeError as e:
        raise ConfigError(f"not valid JSON: {e.msg} (line {e.lineno})") from e
    return _validate(raw)


def load_config(path: Union[str, Path]) -> ExperimentConfig:
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as e:
        raise ConfigError(f"cannot read {path}: {e.strerror}") from e
    return parse_config(text)


def dump_config(cfg: ExperimentConfig) -> str:
    return cfg.model_dump_json(indent=2)


def config_hash(cfg: ExperimentConfig) -> str:
    """SHA-256 of the canonical JSON dump; the output location is not part of it."""
    canonical = cfg.model_dump_json(exclude={"output_path"})
    return hashlib.sha256(canonical.encode("utf-8")).hexdigest()


def override(cfg: ExperimentConfig, key: str, value: Any) -> ExperimentConfig:
    """Copy of ``cfg`` with the dotted ``key`` set to ``value``, revalidated."""
    raw = cfg.model_dump(mode="json")
    node = raw
    *parents, leaf = key.split(".")
    for part in parents:
        if not isinstance(node.get(part), dict):
            raise ConfigError("no such section", key)
        node = node[part]
    node[leaf] = value
    return _validate(raw)


# ─────────────────────────────────────────────────────────────────────────────
# Pipeline
# ─────────────────────────────────────────────────────────────────────────────


@contextmanager
def _stage(name: str) -> Iterator[None]:
    logger.info(f"stage {name}")
    try:
        yield
    except ExperimentError:
        raise
    except FedDPGANError as e:
        raise ExperimentError(name, str(e), e) from e


def report_label(cfg: ExperimentConfig) -> str:
    parts = [cfg.mode, cfg.partition.mode, "aug" if cfg.augmentation else "noaug"]
    if cfg.augmentation:
        parts.append(f"sigma{cfg.privacy.sigma_n:g}")
    parts.append(f"seed{cfg.seed}")
    return "-".join(parts)


def output_dir(cfg: ExperimentConfig) -> Path:
    if cfg.output_path:
        return Path(cfg.output_path)
    return Path(get_settings().output_root) / report_label(cfg)


def _gan_config(cfg: ExperimentConfig) -> GanConfig:
    g = cfg.gan
    return GanConfig.build(
        data_dim=cfg.dataset.dim,
        latent_dim=g.latent_dim,
        hidden_width=g.hidden_width,
        n_g=g.n_g,
        batch_m=g.batch_m,
        alpha=g.alpha,
        privacy=cfg.privacy,
        prior=g.prior,
        critic_alpha=g.critic_alpha,
    )


def _pool(shards) -> LabeledDataset:
    pooled = shards[0].dataset
    for shard in shards[1:]:
        pooled = pooled.concat(shard.dataset)
    return pooled


def run_experiment(
    cfg: ExperimentConfig, out_dir: Optional[Union[str, Path]] = None
) -> ExperimentReport:
    """Run the configured pipeline and write its outputs to ``out_dir``.

    ``out_dir`` defaults to ``cfg.output_path``, then to
    ``<settings.output_root>/<label>``; an empty string skips writing.
    """
    settings = get_settings()
    parallel = settings.parallel_clients if cfg.parallel_clients is None else cfg.parallel_clients
    master = cfg.seed
    out = None if out_dir == "" else output_dir(cfg) if out_dir is None else Path(out_dir)

    with _stage("dataset"):
        ds_seed = cfg.dataset.seed if cfg.dataset.seed is not None else seeds.derive_seed(master, seeds.DATASET)
        ds = synth_dataset(cfg.dataset.counts, cfg.dataset.dim, ds_seed, cfg.dataset.noise)
        train, test = train_test_split(ds, cfg.dataset.test_fraction, seeds.derive_seed(master, seeds.SPLIT))
        logger.info(f"dataset: {len(train)} train / {len(test)} test, classes {ds.class_counts}")

    shards = []
    if cfg.mode == "federated" or cfg.augmentation:
        with _stage("partition"):
            plan = PartitionPlan(cfg.partition.mode, cfg.clients, cfg.partition.covid_holder_fraction)
            shards = partition(train, plan, seeds.derive_seed(master, seeds.PARTITION))

    gan_history: list[RoundRecord] = []
    privacy = None
    if cfg.augmentation:
        with _stage("gan"):
            gan_cfg = _gan_config(cfg)
            theta0 = init_params(gan_cfg.generator_spec, seeds.derive_seed(master, seeds.MODEL_INIT, 0))
            omega0 = init_params(gan_cfg.critic_spec, seeds.derive_seed(master, seeds.MODEL_INIT, 1))
            gan_clients = {}
            for shard in shards:
                own = minority_shard(shard, cfg.gan.label)
                if own.n_k:
                    gan_clients[shard.client_id] = GanClient(own, gan_cfg, omega0)
            if not gan_clients:
                raise ExperimentError("gan", f"no client holds class {cfg.gan.label} samples")
            mean_n = float(np.mean([c.n_k for c in gan_clients.values()]))
            privacy = privacy_summary(cfg.privacy, min(1.0, gan_cfg.batch_m / mean_n))
            gan_state = run_training(
                GlobalModelState(round=0, theta=theta0),
                gan_clients,
                TrainingConfig(
                    rounds=cfg.gan.rounds,
                    c_frac=cfg.c_frac,
                    seed=master,
                    stage="gan",
                    parallel=parallel,
                    max_workers=settings.max_workers,
                ),
            )
            gan_history = gan_state.history

        with _stage("augmentation"):
            shards = [
                augment_with_fakes(
                    shard,
                    gan_state.theta,
                    gan_cfg,
                    cfg.gan.fakes_per_client,
                    cfg.gan.label,
                    seeds.derive_rng(master, seeds.AUGMENT, shard.client_id),
                )
                for shard in shards
            ]

    with _stage("classifier"):
        spec = default_classifier_spec(
            cfg.dataset.dim,
            cfg.classifier.width,
            cfg.classifier.depth,
            cfg.classifier.residual_layers,
        )
        ccfg = ClassifierConfig(
            spec=spec, alpha=cfg.alpha, local_epochs=cfg.local_epochs, batch=cfg.batch_size
        )
        params = init_params(spec, seeds.derive_seed(master, seeds.MODEL_INIT, 2))

        if cfg.mode == "federated":
            state = run_training(
                GlobalModelState(round=0, theta=params),
                {shard.client_id: ClassifierClient(shard, ccfg) for shard in shards},
                TrainingConfig(
                    rounds=cfg.rounds,
                    c_frac=cfg.c_frac,
                    seed=master,
                    stage="classifier",
                    parallel=parallel,
                    max_workers=settings.max_workers,
                    evaluate=lambda theta: evaluate_accuracy(theta, spec, test),
                ),
            )
        else:
            pooled = _pool(shards) if shards else train
            state = GlobalModelState(round=0, theta=params)
            for epoch in range(cfg.rounds):
                epoch_seed = seeds.derive_seed(master, seeds.CENTRAL, epoch)
                theta, _ = train_centralized(
                    state.theta, pooled, ccfg, np.random.default_rng(epoch_seed), epochs=1
                )
                record = RoundRecord(
                    round=epoch,
                    selected=[],
                    mean_client_loss=evaluate_loss(theta, spec, pooled),
                    eval_accuracy=evaluate_accuracy(theta, spec, test),
                    seed=epoch_seed,
                )
                state = GlobalModelState(epoch + 1, theta, [*state.history, record])
                logger.info(
                    f"centralized epoch {epoch}: loss={record.mean_client_loss:.4f}, "
                    f"accuracy={record.eval_accuracy:.4f}"
                )

        final_accuracy = evaluate_accuracy(state.theta, spec, test)

    report = ExperimentReport(
        label=report_label(cfg),
        config_hash=config_hash(cfg),
        seed=master,
        mode=cfg.mode,
        partition=cfg.partition.mode,
        augmentation=cfg.augmentation,
        sigma_n=privacy.sigma_n if privacy else cfg.privacy.sigma_n,
        final_accuracy=final_accuracy,
        class_counts=list(ds.class_counts),
        privacy=privacy,
        rounds=state.history,
        gan_rounds=gan_history,
    )
    logger.info(f"{report.label}: final accuracy {final_accuracy:.4f}")

    if out is not None:
        with _stage("output"):
            try:
                out.mkdir(parents=True, exist_ok=True)
                write_metrics(report, out / "metrics.csv")
                write_summary(report, out / "summary.json")
                (out / "config.json").write_text(dump_config(cfg), encoding="utf-8")
                save_state(state, out / "global.bin")
                if cfg.augmentation:
                    fakes = sample_generator(
                        gan_state.theta,
                        gan_cfg,
                        SAMPLE_DUMP_SIZE,
                        seeds.derive_rng(master, seeds.SAMPLES),
                    )
                    write_samples(fakes.inputs, cfg.gan.label, out / "gan_samples.csv")
            except OSError as e:
                raise ExperimentError("output", f"cannot write to {out}: {e}", e) from e
    return report


def sweep(
    cfg: ExperimentConfig,
    key: str,
    values: list[Any],
    out_root: Optional[Union[str, Path]] = None,
) -> list[ExperimentReport]:
    """One run per value of the dotted ``key``, each in ``<out_root>/<key>=<value>``."""
    if out_root is not None:
        root = Path(out_root)
    else:
        root = Path(cfg.output_path or Path(get_settings().output_root) / f"sweep-{key}")
    reports = []
    for value in values:
        variant = override(cfg, key, value)
        reports.append(run_experiment(variant, root / f"{key}={value}"))
    return reports
