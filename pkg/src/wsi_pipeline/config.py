"""Run configuration: TOML file with flat sections mirroring the module
types, overridable by CLI flags. Every experiment is reproducible from its
config plus the global seed."""

from __future__ import annotations

import sys
from dataclasses import dataclass
from pathlib import Path

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from .augment import ALL_OPS, AugmentPolicy
from .errors import ConfigInvalid
from .evaluate import SplitSpec
from .resampler import PHI_RANGE_UM, PatchSpec
from .stainnorm import MacenkoParams
from .tiler import TissueFilterParams

MODES = ("rgb", "gray", "macenko")
SCORERS = ("baseline", "oracle")  # plus "external:<path>"


@dataclass(frozen=True)
class TrainParams:
    step_size: float = 1.0
    epochs: int = 400
    gamma: float = 2.0
    alpha_mode: str = "inverse_roi"  # or "uniform"
    augment: bool = False

    def __post_init__(self):
        if self.alpha_mode not in ("inverse_roi", "uniform"):
            raise ConfigInvalid(f"alpha_mode must be inverse_roi or uniform, got {self.alpha_mode!r}")


@dataclass(frozen=True)
class RunConfig:
    slides_dir: str = "corpus/slides"
    annotations_dir: str = "corpus/annotations"
    metadata_dir: str = "corpus/metadata"
    output_dir: str = "out"
    patch: PatchSpec = PatchSpec()
    mode: str = "gray"
    macenko: MacenkoParams = MacenkoParams()
    reference_profile: str = "builtin"
    per_slide_macenko: bool = False
    tissue: TissueFilterParams = TissueFilterParams()
    augment_policy: AugmentPolicy = AugmentPolicy()
    split: SplitSpec = SplitSpec()
    train: TrainParams = TrainParams()
    scorer: str = "baseline"
    seed: int = 0
    workers: int = 1

    def validate(self, check_paths: bool = False) -> None:
        problems = []
        if self.mode not in MODES:
            problems.append(f"mode must be one of {MODES}, got {self.mode!r}")
        if not (
            self.scorer in SCORERS or self.scorer.startswith("external:")
        ):
            problems.append(f"scorer must be one of {SCORERS} or external:<path>, got {self.scorer!r}")
        if not PHI_RANGE_UM[0] <= self.patch.phi_um <= PHI_RANGE_UM[1]:
            problems.append(
                f"phi_um {self.patch.phi_um} outside the supported band {PHI_RANGE_UM}"
            )
        if self.workers < 1:
            problems.append(f"workers must be >= 1, got {self.workers}")
        if self.reference_profile != "builtin" and not Path(self.reference_profile).exists():
            problems.append(f"reference profile not found: {self.reference_profile}")
        if self.scorer.startswith("external:") and not Path(self.scorer[9:]).exists():
            problems.append(f"external scores file not found: {self.scorer[9:]}")
        if check_paths:
            for name in ("slides_dir", "annotations_dir", "metadata_dir"):
                p = Path(getattr(self, name))
                if not p.is_dir():
                    problems.append(f"{name} does not exist: {p}")
        if problems:
            raise ConfigInvalid("; ".join(problems))

    def corpus_paths(self) -> tuple[Path, Path, Path]:
        return Path(self.slides_dir), Path(self.annotations_dir), Path(self.metadata_dir)


def config_from_dict(obj: dict) -> RunConfig:
    try:
        paths = obj.get("paths", {})
        patch = obj.get("patch", {})
        pre = obj.get("preprocess", {})
        mac = obj.get("macenko", {})
        tissue = obj.get("tissue", {})
        aug = obj.get("augment", {})
        split = obj.get("split", {})
        train = obj.get("train", {})
        run = obj.get("run", {})

        cfg = RunConfig(
            slides_dir=paths.get("slides_dir", RunConfig.slides_dir),
            annotations_dir=paths.get("annotations_dir", RunConfig.annotations_dir),
            metadata_dir=paths.get("metadata_dir", RunConfig.metadata_dir),
            output_dir=paths.get("output_dir", RunConfig.output_dir),
            patch=PatchSpec(
                phi_um=float(patch.get("phi_um", 600.0)),
                patch_px=int(patch.get("patch_px", 224)),
                stride_fraction=float(patch.get("stride_fraction", 0.5)),
                coverage_min=float(patch.get("coverage_min", 0.75)),
            ),
            mode=pre.get("mode", "gray"),
            macenko=MacenkoParams(
                io=float(mac.get("io", 255.0)),
                beta=float(mac.get("beta", 0.15)),
                alpha=float(mac.get("alpha", 1.0)),
                conc_percentile=float(mac.get("conc_percentile", 99.0)),
            ),
            reference_profile=mac.get("reference_profile", "builtin"),
            per_slide_macenko=bool(pre.get("per_slide_macenko", False)),
            tissue=TissueFilterParams(
                od_threshold=float(tissue.get("od_threshold", 0.10)),
                min_tissue_fraction=float(tissue.get("min_tissue_fraction", 0.20)),
            ),
            augment_policy=AugmentPolicy(
                p_hflip=float(aug.get("p_hflip", 0.5)),
                p_vflip=float(aug.get("p_vflip", 0.5)),
                op_set=tuple(aug.get("op_set", list(ALL_OPS))),
                rotation_angles=tuple(aug.get("rotation_angles", [90, 180, 270])),
                solarize_threshold=int(aug.get("solarize_threshold", 128)),
                contrast_factor_range=(
                    float(aug.get("contrast_lo", 0.5)),
                    float(aug.get("contrast_hi", 1.5)),
                ),
            ),
            split=SplitSpec(
                test_fraction_per_class=float(split.get("test_fraction_per_class", 0.10)),
                val_rois_per_class=int(split.get("val_rois_per_class", 5)),
                seed=int(split.get("seed", run.get("seed", 0))),
            ),
            train=TrainParams(
                step_size=float(train.get("step_size", 1.0)),
                epochs=int(train.get("epochs", 400)),
                gamma=float(train.get("gamma", 2.0)),
                alpha_mode=train.get("alpha_mode", "inverse_roi"),
                augment=bool(train.get("augment", False)),
            ),
            scorer=run.get("scorer", "baseline"),
            seed=int(run.get("seed", 0)),
            workers=int(run.get("workers", 1)),
        )
    except (TypeError, ValueError) as exc:
        raise ConfigInvalid(f"bad config value: {exc}") from exc
    return cfg


def load_config(path: Path | str) -> RunConfig:
    try:
        with open(path, "rb") as fh:
            obj = tomllib.load(fh)
    except FileNotFoundError:
        raise ConfigInvalid(f"config file not found: {path}") from None
    except tomllib.TOMLDecodeError as exc:
        raise ConfigInvalid(f"config parse error: {exc}") from exc
    return config_from_dict(obj)


def default_config_toml() -> str:
    """Canonical TOML rendering of every default, for --print-config."""
    cfg = RunConfig()
    pol = cfg.augment_policy
    ops = ", ".join(f'"{op}"' for op in pol.op_set)
    angles = ", ".join(str(a) for a in pol.rotation_angles)
    return f"""\
[paths]
slides_dir = "{cfg.slides_dir}"
annotations_dir = "{cfg.annotations_dir}"
metadata_dir = "{cfg.metadata_dir}"
output_dir = "{cfg.output_dir}"

[patch]
phi_um = {cfg.patch.phi_um}
patch_px = {cfg.patch.patch_px}
stride_fraction = {cfg.patch.stride_fraction}
coverage_min = {cfg.patch.coverage_min}

[preprocess]
mode = "{cfg.mode}"
per_slide_macenko = {str(cfg.per_slide_macenko).lower()}

[macenko]
io = {cfg.macenko.io}
beta = {cfg.macenko.beta}
alpha = {cfg.macenko.alpha}
conc_percentile = {cfg.macenko.conc_percentile}
reference_profile = "{cfg.reference_profile}"

[tissue]
od_threshold = {cfg.tissue.od_threshold}
min_tissue_fraction = {cfg.tissue.min_tissue_fraction}

[augment]
p_hflip = {pol.p_hflip}
p_vflip = {pol.p_vflip}
op_set = [{ops}]
rotation_angles = [{angles}]
solarize_threshold = {pol.solarize_threshold}
contrast_lo = {pol.contrast_factor_range[0]}
contrast_hi = {pol.contrast_factor_range[1]}

[split]
test_fraction_per_class = {cfg.split.test_fraction_per_class}
val_rois_per_class = {cfg.split.val_rois_per_class}
seed = {cfg.split.seed}

[train]
step_size = {cfg.train.step_size}
epochs = {cfg.train.epochs}
gamma = {cfg.train.gamma}
alpha_mode = "{cfg.train.alpha_mode}"
augment = {str(cfg.train.augment).lower()}

[run]
scorer = "{cfg.scorer}"
seed = {cfg.seed}
workers = {cfg.workers}
"""
