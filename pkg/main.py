"""
PseudoLab command line

File-driven experiments over the pseudolab library:

    python main.py assign scene.json --assigner asa
    python main.py aiou scene.json --rhos 0.1,0.2,0.3 -o aiou.csv
    python main.py gmm scores.json --rule crossing
    python main.py eval preds.json gts.json
    python main.py simulate sim.toml -o runs/
    python main.py fam3d-demo pyramid.json offsets.json

Exit codes: 0 success, 2 malformed input, 3 invariant violation,
4 degenerate computation.
"""

import argparse
import csv
import io
import json
import logging
import sys

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib
from pathlib import Path
from typing import Annotated, Any, Dict, Iterable, List, Literal, Optional, Sequence, Tuple, Union

from pydantic import BaseModel, ConfigDict, Field, ValidationError, model_validator

from pseudolab.analysis.assign import Scene, aiou_experiment, make_assigner
from pseudolab.analysis.evaluation import confidence_iou_pairs, confidence_iou_regression, map_50_95
from pseudolab.analysis.gmm import EmConfig, threshold_from_samples
from pseudolab.analysis.pyramid import Anchor, align_features, offsets_from_json, pyramid_from_json, pyramid_to_json
from pseudolab.config import Settings, get_settings
from pseudolab.core.geom import BBox
from pseudolab.core.records import Detection, GroundTruth, ImageAnnotations, ImageDetections, Prediction
from pseudolab.errors import DegenerateError, DomainError
from pseudolab.simulation.runner import FixedSchedule, GmmSchedule, compare_schedules, run_schedule, SummaryRow
from pseudolab.simulation.teacher import TeacherSkill, WorldConfig

logger = logging.getLogger("pseudolab.cli")

EXIT_OK = 0
EXIT_INPUT = 2
EXIT_INVARIANT = 3
EXIT_DEGENERATE = 4


# ----------------- Schemas -----------------
BoxIn = Annotated[List[float], Field(min_length=4, max_length=4)]


class GtIn(BaseModel):
    model_config = ConfigDict(populate_by_name=True)

    bbox: BoxIn
    class_id: int = Field(..., alias="class", ge=0)

    def to_record(self) -> GroundTruth:
        return GroundTruth(BBox.from_list(self.bbox), self.class_id)


class AnchorIn(BaseModel):
    bbox: BoxIn
    level: int = Field(0, ge=0)


class PredictionIn(BaseModel):
    probs: List[float]
    bbox: BoxIn


class SceneIn(BaseModel):
    """Scene file: `{anchors: [bbox | {bbox, level}], predictions: [{probs, bbox}], gts: [{bbox, class}]}`"""
    anchors: List[Union[BoxIn, AnchorIn]]
    predictions: List[PredictionIn] = Field(default_factory=list)
    gts: List[GtIn] = Field(default_factory=list)

    def to_scene(self) -> Scene:
        anchors = tuple(
            Anchor(BBox.from_list(a.bbox), a.level) if isinstance(a, AnchorIn) else Anchor(BBox.from_list(a))
            for a in self.anchors
        )
        predictions = tuple(
            Prediction(i, tuple(p.probs), BBox.from_list(p.bbox)) for i, p in enumerate(self.predictions)
        )
        return Scene(anchors, predictions, tuple(g.to_record() for g in self.gts))


class DetIn(BaseModel):
    bbox: BoxIn
    class_id: int = Field(..., alias="class", ge=0)
    score: float


class ImageDetsIn(BaseModel):
    id: int
    dets: List[DetIn] = Field(default_factory=list)

    def to_record(self) -> ImageDetections:
        return ImageDetections(
            self.id, tuple(Detection(BBox.from_list(d.bbox), d.class_id, d.score) for d in self.dets)
        )


class ImageGtsIn(BaseModel):
    id: int
    gts: List[GtIn] = Field(default_factory=list)

    def to_record(self) -> ImageAnnotations:
        return ImageAnnotations(self.id, tuple(g.to_record() for g in self.gts))


class PredsFileIn(BaseModel):
    images: List[ImageDetsIn]


class GtsFileIn(BaseModel):
    images: List[ImageGtsIn]


class ScoresIn(BaseModel):
    """Per-class score bank snapshot: `{classes: {"<id>": [s, ...]}}`"""
    classes: Dict[int, List[float]] = Field(default_factory=dict)


class LevelIn(BaseModel):
    stride: int = Field(..., ge=1)
    h: int = Field(..., ge=1)
    w: int = Field(..., ge=1)
    data: List[List[float]] = Field(..., min_length=1)

    @model_validator(mode="after")
    def _rectangular(self) -> "LevelIn":
        if len({len(channel) for channel in self.data}) > 1:
            raise ValueError("every channel of a level needs the same number of values")
        return self


class PyramidIn(BaseModel):
    """Pyramid or offsets file: `{channels, levels: [{stride, h, w, data: [[...] per channel]}]}`"""
    channels: int = Field(..., ge=1)
    levels: List[LevelIn] = Field(..., min_length=1)


class WorldIn(BaseModel):
    n_images: int = 8
    boxes_per_image: int = 4
    n_classes: int = 2
    image_size: Tuple[int, int] = (256, 256)
    seed: Optional[int] = None  # falls back to the run seed


class SkillIn(BaseModel):
    pos_mean_start: float = 0.3
    pos_mean_end: float = 0.9
    pos_std: float = 0.05
    neg_rate_start: float = 20.0
    neg_rate_end: float = 5.0
    rho_start: float = 0.1
    rho_end: float = 0.02
    horizon: Optional[int] = None  # defaults to run.steps


class RunIn(BaseModel):
    steps: int = Field(500, ge=1)
    checkpoint_every: int = Field(50, ge=1)
    gt_cutoff: float = Field(0.4, ge=0, le=1)
    ema_momentum: float = Field(0.9995, ge=0, le=1)


class ScheduleIn(BaseModel):
    kind: Literal["fixed", "gmm"]
    tau: float = 0.4
    capacity: int = 200
    fallback_tau: float = 0.4
    rule: Literal["argmax", "crossing"] = "crossing"
    max_iters: int = 100
    tol: float = 1e-6
    var_floor: float = 1e-4

    def to_schedule(self, name: str) -> Union[FixedSchedule, GmmSchedule]:
        if self.kind == "fixed":
            return FixedSchedule(self.tau, name)
        em = EmConfig(self.max_iters, self.tol, self.var_floor)
        return GmmSchedule(self.capacity, em, self.fallback_tau, self.rule, name)


class SimConfigIn(BaseModel):
    """Simulation config file ([world], [skill], [run], [schedule.NAME] TOML tables)."""
    world: WorldIn = Field(default_factory=WorldIn)
    skill: SkillIn = Field(default_factory=SkillIn)
    run: RunIn = Field(default_factory=RunIn)
    schedule: Dict[str, ScheduleIn] = Field(..., min_length=1)


# ----------------- Output helpers -----------------
def _fmt(value: Any, digits: int) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return f"{value:.{digits}g}"
    return str(value)


def _csv_text(header: Sequence[str], rows: Iterable[Sequence[Any]], digits: int) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(header)
    for row in rows:
        writer.writerow([_fmt(v, digits) for v in row])
    return buf.getvalue()


def _json_text(doc: Any) -> str:
    return json.dumps(doc, indent=2, sort_keys=True) + "\n"


def _emit(text: str, output: Optional[str]) -> None:
    if output is None:
        sys.stdout.write(text)
        return
    path = Path(output)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(text, encoding="utf-8")


def _load_json(path: str) -> Any:
    return json.loads(Path(path).read_text(encoding="utf-8"))


def _open_store(db_path: str):
    # duckdb is only needed when an archive is requested
    from pseudolab.storage.duckdb import MetricsStore
    return MetricsStore(db_path)


# ----------------- Commands -----------------
def cmd_assign(args: argparse.Namespace, settings: Settings) -> int:
    scene = SceneIn.model_validate(_load_json(args.scene)).to_scene()
    assigner = make_assigner(
        args.assigner,
        k=args.k,
        lambda_reg=args.lambda_reg,
        lambda_dist=args.lambda_dist,
        cls_cost=args.cls_cost,
        pos_thr=args.pos_thr,
        neg_thr=args.neg_thr,
        topk_per_level=args.topk,
    )
    result = assigner(scene.anchors, scene.predictions, scene.gts)
    logger.info("%d of %d anchors positive", result.num_positive, len(result.labels))
    _emit(_json_text(result.to_dict()), args.output)
    return EXIT_OK


def cmd_aiou(args: argparse.Namespace, settings: Settings) -> int:
    scene = SceneIn.model_validate(_load_json(args.scene)).to_scene()
    rows: List[Dict[str, Any]] = []
    for name in args.assigners:
        assigner = make_assigner(name, k=args.k, lambda_reg=args.lambda_reg, lambda_dist=args.lambda_dist)
        for row in aiou_experiment(scene, assigner, args.rhos, args.trials, args.seed, settings.THREADS):
            rows.append({"assigner": name, "rho": row.rho, "mean_aiou": row.mean_aiou, "std_aiou": row.std_aiou})

    header = ("assigner", "rho", "mean_aiou", "std_aiou")
    _emit(_csv_text(header, ([r[h] for h in header] for r in rows), settings.CSV_DIGITS), args.output)
    if args.db:
        with _open_store(args.db) as store:
            store.store_aiou(rows, seed=args.seed)
    return EXIT_OK


def cmd_gmm(args: argparse.Namespace, settings: Settings) -> int:
    scores = ScoresIn.model_validate(_load_json(args.scores))
    for c, values in scores.classes.items():
        if any(not 0 <= s <= 1 for s in values):
            raise DomainError(f"class {c} has scores outside [0, 1]")
    em = EmConfig(seed=args.seed)
    out = {
        str(c): threshold_from_samples(scores.classes[c], em, args.fallback, args.rule).to_dict()
        for c in sorted(scores.classes)
    }
    _emit(_json_text({"classes": out}), args.output)
    return EXIT_OK


def cmd_eval(args: argparse.Namespace, settings: Settings) -> int:
    preds = [img.to_record() for img in PredsFileIn.model_validate(_load_json(args.preds)).images]
    gts = [img.to_record() for img in GtsFileIn.model_validate(_load_json(args.gts)).images]
    doc: Dict[str, Any] = map_50_95(preds, gts, max_dets=args.max_dets, threads=settings.THREADS).to_dict()
    if args.misalignment:
        doc["confidence_iou"] = confidence_iou_regression(confidence_iou_pairs(preds, gts)).to_dict()
    _emit(_json_text(doc), args.output)
    return EXIT_OK


def cmd_simulate(args: argparse.Namespace, settings: Settings) -> int:
    config = SimConfigIn.model_validate(tomllib.loads(Path(args.config).read_text(encoding="utf-8")))
    world = WorldConfig(
        config.world.n_images,
        config.world.boxes_per_image,
        config.world.n_classes,
        tuple(config.world.image_size),
        args.seed if config.world.seed is None else config.world.seed,
    )
    skill_fields = config.skill.model_dump()
    skill_fields["horizon"] = skill_fields["horizon"] or config.run.steps
    skill = TeacherSkill(**skill_fields)
    schedules = [s.to_schedule(name) for name, s in config.schedule.items()]
    run = config.run

    if len(schedules) == 1:
        metrics = [run_schedule(world, skill, schedules[0], run.steps, run.checkpoint_every, args.seed,
                                run.gt_cutoff, run.ema_momentum, threads=settings.THREADS)]
        summary = [SummaryRow.from_metrics(metrics[0])]
    else:
        metrics, summary = compare_schedules(world, skill, schedules, run.steps, run.checkpoint_every, args.seed,
                                             run.gt_cutoff, run.ema_momentum, threads=settings.THREADS)

    out_dir = Path(args.output or ".")
    out_dir.mkdir(parents=True, exist_ok=True)
    digits = settings.CSV_DIGITS
    for m in metrics:
        header = ("step", "class_id", "tau", "pseudo_per_image", "inconsistency_cum")
        (out_dir / f"{m.schedule}.csv").write_text(_csv_text(header, m.to_rows(), digits), encoding="utf-8")
    summary_header = ("schedule", "mean_pseudo", "cv_pseudo", "final_inconsistency", "inconsistency_defined")
    summary_rows = [(r.schedule, r.mean_pseudo, r.cv_pseudo, r.final_inconsistency, r.inconsistency_defined)
                    for r in summary]
    (out_dir / "summary.csv").write_text(_csv_text(summary_header, summary_rows, digits), encoding="utf-8")

    if args.db:
        with _open_store(args.db) as store:
            for m in metrics:
                store.store_run(m, seed=args.seed)
            store.store_summary(summary)
    return EXIT_OK


def cmd_fam3d_demo(args: argparse.Namespace, settings: Settings) -> int:
    pyramid = pyramid_from_json(PyramidIn.model_validate(_load_json(args.pyramid)).model_dump())
    offsets = offsets_from_json(PyramidIn.model_validate(_load_json(args.offsets)).model_dump())
    aligned = align_features(pyramid, offsets, args.mode, settings.THREADS)
    _emit(_json_text(pyramid_to_json(aligned)), args.output)
    return EXIT_OK


# ----------------- Parser -----------------
def _float_list(text: str) -> List[float]:
    try:
        return [float(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}")


def _name_list(text: str) -> List[str]:
    names = [v.strip() for v in text.split(",") if v.strip()]
    for name in names:
        if name not in ("iou", "atss", "asa"):
            raise argparse.ArgumentTypeError(f"unknown assigner {name!r}")
    return names


def build_parser(settings: Settings) -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("-o", "--output", help="output file (stdout when omitted); output directory for simulate")
    common.add_argument("--seed", type=int, default=settings.SEED, help="global seed (default: PSEUDOLAB_SEED or 0)")
    common.add_argument(
        "--log-level",
        type=str.upper,
        choices=("DEBUG", "INFO", "WARNING", "ERROR", "CRITICAL"),
        default=settings.LOG_LEVEL.upper(),
        help="logging level written to stderr",
    )

    asa = argparse.ArgumentParser(add_help=False)
    asa.add_argument("--k", type=int, default=13, help="ASA positives per GT")
    asa.add_argument("--lambda-reg", type=float, default=2.0, help="ASA regression cost weight")
    asa.add_argument("--lambda-dist", type=float, default=0.001, help="ASA centre prior weight")

    parser = argparse.ArgumentParser(prog="pseudolab", description="Consistent pseudo-labelling experiments")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("assign", parents=[common, asa], help="assign anchors of a scene")
    p.add_argument("scene", help="scene JSON file")
    p.add_argument("--assigner", choices=("iou", "atss", "asa"), default="asa")
    p.add_argument("--cls-cost", choices=("focal", "qfl"), default="focal", help="ASA classification cost")
    p.add_argument("--pos-thr", type=float, default=0.5, help="IoU assigner positive threshold")
    p.add_argument("--neg-thr", type=float, default=0.4, help="IoU assigner negative threshold")
    p.add_argument("--topk", type=int, default=9, help="ATSS candidates per level")
    p.set_defaults(func=cmd_assign)

    p = sub.add_parser("aiou", parents=[common, asa], help="assignment IoU under GT noise")
    p.add_argument("scene", help="scene JSON file")
    p.add_argument("--rhos", type=_float_list, default=[0.1, 0.2, 0.3, 0.4, 0.5], help="comma-separated noise ratios")
    p.add_argument("--trials", type=int, default=100)
    p.add_argument("--assigners", type=_name_list, default=["iou", "atss", "asa"], help="comma-separated assigners")
    p.add_argument("--db", help="DuckDB file to archive the table in")
    p.set_defaults(func=cmd_aiou)

    p = sub.add_parser("gmm", parents=[common], help="GMM pseudo-label thresholds")
    p.add_argument("scores", help="scores JSON file")
    p.add_argument("--fallback", type=float, default=0.4, help="threshold used when the fit is unreliable")
    p.add_argument("--rule", choices=("argmax", "crossing"), default="argmax")
    p.set_defaults(func=cmd_gmm)

    p = sub.add_parser("eval", parents=[common], help="COCO-style mAP@[.5:.95]")
    p.add_argument("preds", help="predictions JSON file")
    p.add_argument("gts", help="ground truth JSON file")
    p.add_argument("--max-dets", type=int, default=100, help="detections kept per image and class")
    p.add_argument("--misalignment", action="store_true", help="add the confidence/IoU regression")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("simulate", parents=[common], help="threshold schedules on a synthetic teacher")
    p.add_argument("config", help="simulation TOML file")
    p.add_argument("--db", help="DuckDB file to archive runs in")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("fam3d-demo", parents=[common], help="resample a pyramid by an offset field")
    p.add_argument("pyramid", help="pyramid JSON file")
    p.add_argument("offsets", help="offsets JSON file (3 channels: d0, d1, d2)")
    p.add_argument("--mode", choices=("3d", "2d", "none"), default="3d")
    p.set_defaults(func=cmd_fam3d_demo)

    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    settings = get_settings()
    parser = build_parser(settings)
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return EXIT_OK if e.code in (0, None) else EXIT_INPUT

    logging.basicConfig(
        level=args.log_level,
        stream=sys.stderr,
        format="%(asctime)s %(levelname)s %(name)s: %(message)s",
    )

    try:
        return args.func(args, settings)
    except (json.JSONDecodeError, tomllib.TOMLDecodeError, ValidationError, OSError) as e:
        print(f"error: malformed input: {e}", file=sys.stderr)
        return EXIT_INPUT
    except DegenerateError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_DEGENERATE
    except DomainError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_INVARIANT


if __name__ == "__main__":
    sys.exit(main())
