"""Đầu vào dòng lệnh: argparse và RunConfig (mặc định từ config.py, ghi đè bằng JSON + cờ CLI)."""
import os, json, argparse, dataclasses
from dataclasses import dataclass, field, asdict
from src.core import _CONFIG, ConfigError, UsageError, _output_root, _canonical_json, _sha256
from src.process_data import GenConfig, gen_config_dict
from src.process_signal import PrepConfig
from src.process_model import DALConfig, TrainConfig
from src.process_baseline import BaselineConfig
from src.process_eval import CVConfig, RunMatrix

SECTIONS = {
    "gen": GenConfig,
    "prep": PrepConfig,
    "model": DALConfig,
    "train": TrainConfig,
    "cv": CVConfig,
    "baseline": BaselineConfig,
    "run": RunMatrix,
}

# Trường của model suy ra từ gen/prep; chỉ được đặt tay nếu khớp
_DERIVED = {
    "model.channels": lambda rc: rc.gen.channels,
    "model.samples": lambda rc: rc.prep.window_samples,
    "model.n_classes": lambda rc: rc.gen.n_classes,
}


@dataclass
class RunConfig:
    gen: GenConfig = field(default_factory=GenConfig)
    prep: PrepConfig = field(default_factory=PrepConfig)
    model: DALConfig = field(default_factory=DALConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    cv: CVConfig = field(default_factory=CVConfig)
    baseline: BaselineConfig = field(default_factory=BaselineConfig)
    run: RunMatrix = field(default_factory=RunMatrix)
    out_dir: str = None               # Không nằm trong bản echo: thư mục chạy phải tái lập được byte-by-byte
    explicit: set = field(default_factory=set, repr=False, compare=False)

    def to_dict(self):
        d = {name: asdict(getattr(self, name)) for name in SECTIONS}
        d["gen"] = gen_config_dict(self.gen)
        return d

    def to_json(self):
        return _canonical_json(self.to_dict())

    def sha256(self):
        return _sha256(self.to_json())

    def seeds(self):
        return {"gen": int(self.gen.seed), "train": int(self.train.seed), "cv": int(self.cv.seed)}

    def resolve(self):
        """Đồng bộ các trường suy ra rồi kiểm tra toàn bộ cấu hình."""
        for key, derive in _DERIVED.items():
            section, name = key.split(".")
            want = derive(self)
            if key in self.explicit and getattr(getattr(self, section), name) != want:
                raise ConfigError(f"{key}={getattr(getattr(self, section), name)} mâu thuẫn với giá trị suy ra {want}")
            setattr(getattr(self, section), name, want)
        self.gen.validate()
        self.prep.validate(self.gen.fs)
        self.model.validate()
        self.train.validate()
        self.cv.validate()
        self.baseline.validate()
        self.run.validate()
        if self.cv.k > self.gen.trials_per_word:
            raise ConfigError(f"cv.k={self.cv.k} lớn hơn số trial mỗi từ ({self.gen.trials_per_word})")
        return self


def _check_type(key, default, value):
    if default is None or value is None:
        return value
    if isinstance(default, bool):
        if not isinstance(value, bool):
            raise ConfigError(f"'{key}' cần kiểu bool, nhận {value!r}")
        return value
    if isinstance(default, (int, float)):
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"'{key}' cần kiểu số, nhận {value!r}")
        if isinstance(default, int) and not isinstance(default, bool) and isinstance(value, float):
            if not value.is_integer():
                raise ConfigError(f"'{key}' cần số nguyên, nhận {value!r}")
            return int(value)
        return value
    if isinstance(default, str):
        if not isinstance(value, str):
            raise ConfigError(f"'{key}' cần chuỗi, nhận {value!r}")
        return value
    if isinstance(default, (list, tuple)):
        if not isinstance(value, list):
            raise ConfigError(f"'{key}' cần danh sách, nhận {value!r}")
        return tuple(value) if isinstance(default, tuple) else list(value)
    return value


def merge_config(data, base=None):
    """Trộn từng section của dict JSON lên mặc định; khoá lạ → ConfigError nêu khoá dạng chấm."""
    rc = base or RunConfig()
    if not isinstance(data, dict):
        raise ConfigError("File cấu hình phải là một object JSON")
    for section, values in data.items():
        if section == "out_dir":
            rc.out_dir = values
            continue
        if section not in SECTIONS:
            raise ConfigError(f"Khoá cấu hình không hợp lệ: '{section}'")
        if not isinstance(values, dict):
            raise ConfigError(f"Section '{section}' phải là object JSON")
        target = getattr(rc, section)
        names = {f.name for f in dataclasses.fields(target)}
        for key, value in values.items():
            dotted = f"{section}.{key}"
            if key not in names:
                raise ConfigError(f"Khoá cấu hình không hợp lệ: '{dotted}'")
            setattr(target, key, _check_type(dotted, getattr(target, key), value))
            rc.explicit.add(dotted)
    return rc


def load_run_config(path=None, overrides=None):
    """Mặc định ← file JSON (nếu có) ← overrides (dict cùng dạng), rồi resolve()."""
    rc = RunConfig()
    if path:
        if not os.path.isfile(path):
            raise ConfigError(f"Không tìm thấy file cấu hình '{path}'")
        with open(path, "r", encoding="utf-8") as f:
            try:
                data = json.load(f)
            except json.JSONDecodeError as e:
                raise ConfigError(f"'{path}' không phải JSON hợp lệ: {e}")
        merge_config(data, rc)
    if overrides:
        merge_config(overrides, rc)
    return rc.resolve()


def cli_overrides(args):
    """Cờ dòng lệnh → dict ghi đè cùng dạng file cấu hình."""
    out = {}
    seed = getattr(args, "seed", None)
    if seed is not None:
        out.update(gen={"seed": seed}, train={"seed": seed}, cv={"seed": seed})
    run = {}
    if getattr(args, "jobs", None) is not None:
        run["jobs"] = args.jobs
    if getattr(args, "methods", None):
        run["methods"] = list(args.methods)
    if getattr(args, "conditions", None):
        run["conditions"] = list(args.conditions)
    if run:
        out["run"] = run
    if getattr(args, "subjects", None) is not None:
        out.setdefault("gen", {})["n_subjects"] = args.subjects
    if getattr(args, "epochs", None) is not None:
        out["train"] = dict(out.get("train", {}), epochs=args.epochs)
    return out


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def _default_dir(name):
    return os.path.join(_output_root(), name)


def build_parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", metavar="PATH", help="File cấu hình JSON")
    common.add_argument("--seed", type=int, help="Ghi đè gen/train/cv seed")
    common.add_argument("--jobs", type=int, help="Số tiến trình chạy fold song song")
    common.add_argument("--force", action="store_true", help="Cho phép ghi vào thư mục không trống")
    common.add_argument("--resume", action="store_true", help="Tiếp tục từ file kết quả đang dở")

    parser = _Parser(prog=_CONFIG.TOOLKIT_NAME, description="DAL EEG: giải mã lời nói tưởng tượng")
    parser.add_argument("--version", action="version", version=f"{_CONFIG.TOOLKIT_NAME} {_CONFIG.TOOLKIT_VERSION}")
    sub = parser.add_subparsers(dest="command", parser_class=_Parser)

    p = sub.add_parser("simulate", parents=[common], help="Sinh dữ liệu EEG tổng hợp")
    p.add_argument("--out", default=None, help="Thư mục dữ liệu (mặc định <root>/data)")
    p.add_argument("--subjects", type=int, help="Số người")

    p = sub.add_parser("run", parents=[common], help="Chạy ma trận phương pháp × điều kiện")
    p.add_argument("--data", default=None, help="Thư mục dữ liệu đã sinh (mặc định <root>/data)")
    p.add_argument("--out", default=None, help="Thư mục chạy (mặc định <root>/run)")
    p.add_argument("--methods", nargs="+", choices=list(_CONFIG.RUN_METHODS))
    p.add_argument("--conditions", nargs="+", choices=list(_CONFIG.RUN_CONDITIONS))
    p.add_argument("--epochs", type=int, help="Ghi đè train.epochs")

    p = sub.add_parser("report", parents=[common], help="Lập báo cáo từ file kết quả")
    p.add_argument("results", help="File results.csv")
    p.add_argument("--out", default=None, help="Thư mục báo cáo (mặc định <thư mục kết quả>/report)")

    p = sub.add_parser("stats", parents=[common], help="Chỉ chạy bộ kiểm định thống kê")
    p.add_argument("results", nargs="?", help="File results.csv")
    p.add_argument("--reference", action="store_true", help="Dùng bảng độ chính xác tham chiếu trong data/")
    p.add_argument("--out", default=None, help="Ghi stat_report.json vào thư mục này")

    p = sub.add_parser("gradcheck", parents=[common], help="Kiểm tra gradient của engine")
    p.add_argument("--samples", type=int, default=64, help="Độ dài tín hiệu rút gọn")
    p.add_argument("--channels", type=int, default=8, help="Số kênh rút gọn")

    p = sub.add_parser("words", parents=[common], help="Chọn từ khác biệt nhất từ kho từ")
    p.add_argument("--pool", default=None, help="File kho từ (mỗi dòng một từ)")
    p.add_argument("-k", type=int, default=len(_CONFIG.GEN_WORDS), help="Số từ cần chọn")
    return parser


def parse_args(argv=None):
    args = build_parser().parse_args(argv)
    if getattr(args, "jobs", None) is not None and args.jobs < 1:
        raise UsageError(f"--jobs phải >= 1, nhận {args.jobs}")
    if args.command == "simulate":
        args.out = args.out or _default_dir("data")
    elif args.command == "run":
        args.data = args.data or _default_dir("data")
        args.out = args.out or _default_dir("run")
    elif args.command == "report":
        args.out = args.out or os.path.join(os.path.dirname(os.path.abspath(args.results)), "report")
    elif args.command == "stats" and not (args.results or args.reference):
        raise UsageError("stats cần đường dẫn results.csv hoặc --reference")
    return args
